//! Linear probe on frozen encoder features, before and after a short
//! pretraining run.
//!
//! cargo run --release --example probe -- [steps]

use dimp::synthdata::{gen_dataset, Dataset, GeneratorParams};
use dimp::training::{linear_probe, OptimizerConfig, ProbeConfig, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(40);
    let dir = std::env::temp_dir().join("dimp-example-probe");
    gen_dataset(&GeneratorParams::default(), 96, (0.75, 0.25), 2, &dir)?;
    let data = Dataset::load(&dir)?;

    let mut t = Trainer::new(TrainConfig {
        steps,
        optimizer: OptimizerConfig {
            warmup_steps: steps / 10,
            ..Default::default()
        },
        data: dir.clone(),
        ..TrainConfig::default()
    })?;
    let cfg = ProbeConfig::default();
    let before = linear_probe(&t.state.encoder_only(), &data, &cfg)?;
    t.run(&data, steps, None, None)?;
    let after = linear_probe(&t.state.encoder_only(), &data, &cfg)?;
    println!("              overall  shared-mean  control");
    for (name, r) in [("init", before), ("pretrained", after)] {
        println!("{name:12} {:8.3} {:12.3} {:8.3}", r.overall, r.pair_shared_mean, r.pair_control);
    }
    Ok(())
}
