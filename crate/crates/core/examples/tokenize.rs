//! Build spatio-temporal tubes on a synthetic sequence and split them into
//! visible and masked sets.
//!
//! cargo run --release --example tokenize

use dimp::geom::{build_tubes, mask_split, TubeParams};
use dimp::synthdata::{gen_sequence, GeneratorParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = GeneratorParams::default();
    let g = gen_sequence(2, &params, 11)?;
    let seq = &g.sequence;
    println!("{} frames x {} points", seq.num_frames(), seq.points_per_frame());

    let tube = TubeParams {
        radius: 0.1,
        temporal_extent: 3,
        n_pts: 16,
        keypoint_frame: 1,
    };
    let tubes = build_tubes(seq, 16, tube, 3)?;
    for (i, key) in tubes.keypoints.iter().enumerate().take(4) {
        println!(
            "tube {i}: keypoint [{:.3}, {:.3}, {:.3}], {} padded slots",
            key[0],
            key[1],
            key[2],
            tubes.padded_count(i)
        );
    }

    let split = mask_split(tubes, 0.6, 5)?;
    println!("visible {:?}", split.visible_idx);
    println!("masked  {:?}", split.masked_idx);
    Ok(())
}
