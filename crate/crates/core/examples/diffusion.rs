//! Cosine schedule, forward corruption, stratified timestep draws and
//! ancestral sampling with the closed-form denoiser of a point mass.
//!
//! cargo run --release --example diffusion

use dimp::diffusion::{ancestral_sample, forward_sample, make_cosine_schedule, snr, stratified_timesteps};
use dimp::rng;
use ndarray::{Array2, ArrayD};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sched = make_cosine_schedule(200)?;
    for t in [1, 50, 100, 150, 199, 200] {
        let s = snr(&sched, t).map(|v| format!("{v:.3e}")).unwrap_or_else(|e| e.to_string());
        println!("t={t:3} beta={:.4} alpha_bar={:.4e} snr={s}", sched.beta(t), sched.alpha_bar(t));
    }

    let x0 = Array2::from_elem((2, 3), 1.0);
    let eps: Array2<f64> = rng::standard_normal((2, 3), &mut rng::seeded(1));
    println!("x_100 =\n{:.3}", forward_sample(&x0, 100, &eps, &sched)?);

    let draw = stratified_timesteps(200, 4, &[2, 3], 7)?;
    for (iv, t) in draw.intervals.iter().zip(&draw.timesteps) {
        println!("interval {:?} -> t = {t}", iv);
    }

    // optimal noise prediction when the data is the single point mu
    let mu = 0.75;
    let samples: Vec<f64> = (0..200)
        .map(|i| {
            let x = ancestral_sample(
                |x: &ArrayD<f64>, t, _: &()| {
                    let ab = sched.alpha_bar(t);
                    Ok(x.mapv(|v| (v - ab.sqrt() * mu) / (1.0 - ab).sqrt()))
                },
                &(),
                &[1],
                &sched,
                i,
            )?;
            Ok(x[[0]])
        })
        .collect::<dimp::Result<_>>()?;
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / samples.len() as f64).sqrt();
    println!("200 samples: mean {mean:.4}, sd {sd:.2e} (target {mu})");
    Ok(())
}
