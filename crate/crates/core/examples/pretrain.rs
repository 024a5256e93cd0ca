//! Generate a small synthetic dataset and pretrain on it for a few steps.
//!
//! cargo run --release --example pretrain -- [steps] [sequences]

use std::time::Instant;

use dimp::synthdata::{gen_dataset, Dataset, GeneratorParams};
use dimp::training::{metrics_header, Trainer, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(50);
    let count: usize = std::env::args().nth(2).map(|s| s.parse()).transpose()?.unwrap_or(64);
    let dir = std::env::temp_dir().join(format!("dimp-example-pretrain-{count}"));
    gen_dataset(&GeneratorParams::default(), count, (0.8, 0.2), 7, &dir)?;
    let data = Dataset::load(&dir)?;

    let cfg = TrainConfig {
        steps,
        optimizer: dimp::training::OptimizerConfig { warmup_steps: steps / 10, ..Default::default() },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg)?;
    println!("{} parameters", trainer.state.num_parameters());
    print!("{}", metrics_header(trainer.config.model.h));
    let start = Instant::now();
    let mut out = std::io::stdout();
    trainer.run(&data, steps, Some(&mut out), None)?;
    println!("{steps} steps in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
