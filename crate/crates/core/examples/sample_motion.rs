//! Draw motion fields for one sequence from a briefly trained model and
//! measure their spread.
//!
//! cargo run --release --example sample_motion -- [steps]

use dimp::motion::sample_diversity;
use dimp::sampling::sample_motion;
use dimp::synthdata::{gen_dataset, Dataset, GeneratorParams};
use dimp::training::{OptimizerConfig, TrainConfig, Trainer, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(30);
    let dir = std::env::temp_dir().join("dimp-example-sample");
    gen_dataset(&GeneratorParams::default(), 32, (0.75, 0.25), 4, &dir)?;
    let data = Dataset::load(&dir)?;
    let item = &data.items[0];

    for variant in [Variant::Dimp, Variant::Deterministic] {
        let mut cfg = TrainConfig {
            steps,
            optimizer: OptimizerConfig {
                warmup_steps: steps / 10,
                ..Default::default()
            },
            data: dir.clone(),
            ..TrainConfig::default()
        };
        variant.apply(&mut cfg);
        let mut t = Trainer::new(cfg)?;
        t.run(&data, steps, None, None)?;
        let samples = sample_motion(&t.state, &item.sequence, t.center_schedule(), t.motion_schedule(), 5, 1)?;
        println!("{:14} diversity over 5 samples: {:.4e}", variant.name(), sample_diversity(&samples)?);
    }
    Ok(())
}
