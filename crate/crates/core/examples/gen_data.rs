//! Write a small labeled dataset and read it back.
//!
//! cargo run --release --example gen_data -- [out_dir]

use std::path::PathBuf;

use dimp::synthdata::{gen_dataset, Dataset, GeneratorParams, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dimp-example-data"));
    let params = GeneratorParams::default();
    gen_dataset(&params, 32, (0.75, 0.25), 0, &out)?;

    let ds = Dataset::load(&out)?;
    println!("{} items in {}", ds.items.len(), out.display());
    println!("train {} test {}", ds.indices(Split::Train).len(), ds.indices(Split::Test).len());
    for (label, n) in ds.class_counts() {
        println!("  {:24} {n}", ds.manifest.classes[label]);
    }
    let first = &ds.items[0];
    println!(
        "item 0: label {}, {} frames, motion field {:?}, rms scale {:.4}",
        first.label,
        first.sequence.num_frames(),
        first.motion.dim(),
        ds.motion_rms
    );
    Ok(())
}
