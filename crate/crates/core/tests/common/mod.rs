#![allow(dead_code)]

use std::path::Path;

use dimp::geom::TubeParams;
use dimp::model::ModelConfig;
use dimp::synthdata::{gen_dataset, Dataset, GeneratorParams};
use dimp::training::{OptimizerConfig, TrainConfig};

/// A small dataset: `count` sequences of 64 points over 8 frames.
pub fn small_dataset(dir: &Path, count: usize, seed: u64) -> Dataset {
    let params = GeneratorParams {
        num_points: 64,
        ..GeneratorParams::default()
    };
    gen_dataset(&params, count, (0.75, 0.25), seed, dir).unwrap();
    Dataset::load(dir).unwrap()
}

/// A model small enough to step in milliseconds.
pub fn small_config(data: &Path) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            d: 16,
            n_heads: 2,
            n_enc_blocks: 1,
            n_dec_blocks: 1,
            center_steps: 50,
            motion_steps: 50,
            num_tubes: 8,
            tube: TubeParams {
                radius: 0.15,
                temporal_extent: 3,
                n_pts: 4,
                keypoint_frame: 1,
            },
            ..ModelConfig::default()
        },
        optimizer: OptimizerConfig {
            warmup_steps: 2,
            ..OptimizerConfig::default()
        },
        steps: 20,
        batch_size: 4,
        seed: 3,
        data: data.to_path_buf(),
        checkpoint_every: 0,
    }
}
