//! Resamples an episode to 16 frames and round-trips it through the codec.
//!
//! `cargo run --release --example codec_roundtrip`

use egoworld::codec::{CodecConfig, LatentRole};
use egoworld::synthenv::DatasetConfig;
use egoworld::temporal::resample_indices;

pub fn run() -> egoworld::Result<()> {
    let ep = DatasetConfig::default().episode(0)?;
    let plan = resample_indices(ep.len(), 16)?;
    println!("{} frames -> 16 ({:?}): {:?}", ep.len(), plan.mode, plan.indices);
    let clip = ep.resample_with(&plan)?;
    for codec in [CodecConfig::default(), CodecConfig { patch: 8, temporal_patch: 2 }] {
        let latent = codec.encode(&clip.frames, LatentRole::Video)?;
        let back = codec.decode(&latent)?;
        println!("patch {} x {}: latent {:?}, exact: {}", codec.patch, codec.temporal_patch, latent.data.dim(), back == clip.frames);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
