//! Central finite differences against the tape on a tiny model, for the
//! full pretraining loss.
//!
//! cargo run --release --example gradient_check

use dimp::autograd::Tensor;
use dimp::diffusion::make_cosine_schedule;
use dimp::gradcheck::check_params;
use dimp::losses::total_loss_var;
use dimp::model::ModelState;
use dimp::rng;
use dimp::training::{prepare_sample, sample_losses};
use dimp::verify::{random_sequence, tiny_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut state = ModelState::init(tiny_config(), 1)?;
    state.randomize_all(2);
    // differences do not respect stop-gradient; compare like with like
    state.set_stop_gradients(false, false);
    let cfg = state.config().clone();
    let seq = random_sequence(cfg.seq_len, 12, 3);
    let m0: Tensor = rng::standard_normal((12, cfg.motion_width()), &mut rng::seeded(4));
    let sched = make_cosine_schedule(cfg.motion_steps)?;
    let sample = prepare_sample(&seq, &m0, &state, &make_cosine_schedule(cfg.center_steps)?, 5)?;

    let ids: Vec<_> = state.store().ids().collect();
    let reports = check_params(
        &state,
        &ids,
        |g, st| {
            let l = sample_losses(g, st, &sample, &sched)?;
            let c = st.config();
            total_loss_var(g, l.l_geo, l.l_cen, l.l_mot, c.gamma_cen, c.lambda_mot)
        },
        1e-5,
        4,
    )?;
    for r in reports.iter().step_by(8) {
        println!("{:40} rel err {:.2e} (|grad| {:.2e})", r.name, r.rel_error, r.analytic_norm);
    }
    let worst = reports.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    println!("{} tensors, worst relative error {worst:.2e}", reports.len());
    Ok(())
}
