//! The numeric side of the theory: the information lost by mean motion,
//! Fano's bound, attention concentration and posterior collapse.
//!
//! cargo run --release --example theory_checks

use dimp::analysis::{attention_concentration, fano_lower_bound, logits_with_gap, posterior_collapse_check, verify_prop_info_loss};
use dimp::diffusion::make_cosine_schedule;
use dimp::rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (bar, full) = verify_prop_info_loss()?;
    println!("I(A; mean motion) = {bar:.3} bits, I(A; motion) = {full:.3} bits");

    for (h, n) in [(1.5, 4), (2.0, 4), (3.0, 8)] {
        println!("H(A|X) = {h}, {n} classes: error >= {:.3}", fano_lower_bound(h, n)?);
    }

    let mut r = rng::seeded(3);
    for gap in [0.0, 2.0, 5.0, 10.0] {
        let c = attention_concentration(&logits_with_gap(64, gap, &mut r))?;
        println!(
            "gap {gap:4.1}: alpha_max {:.6}, 1 - alpha_max {:.2e} <= {:.2e}: {}",
            c.alpha_max,
            1.0 - c.alpha_max,
            c.bound,
            c.holds
        );
    }

    let sched = make_cosine_schedule(200)?;
    for t in [20, 100, 180, 200] {
        let c = posterior_collapse_check(0.3, 1.0, &sched, t, 10_000, 7)?;
        println!(
            "t={t:3}: mean |E[M0|M_t] - prior mean| = {:.4}, averaged estimate off by {:.1e}",
            c.mean_abs_shift, c.deviation
        );
    }
    Ok(())
}
