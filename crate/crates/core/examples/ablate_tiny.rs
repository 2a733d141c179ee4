//! Trains every architecture variant for a few steps from one seed and
//! prints the comparison table.
//!
//! `cargo run --release --example ablate_tiny`

use egoworld::codec::CodecConfig;
use egoworld::eval::{run_ablation, AblationSetup, EvalEpisode};
use egoworld::model::{prepare_episode, ArchConfig, Geometry, ModelConfig, TrainConfig, Variant};
use egoworld::sampler::GuidanceConfig;
use egoworld::scenecam::RasterStyle;
use egoworld::synthenv::{DatasetConfig, NUM_TEMPLATES};

pub fn run() -> egoworld::Result<()> {
    let (codec, style, len) = (CodecConfig { patch: 8, temporal_patch: 1 }, RasterStyle::default(), 8);
    let data = DatasetConfig { count: 10, min_length: 20, max_length: 40, ..Default::default() };
    let episodes = (0..data.count).map(|i| data.episode(i)).collect::<egoworld::Result<Vec<_>>>()?;
    let train_set = episodes[..8].iter().map(|e| prepare_episode(e, len, &codec, &style)).collect::<egoworld::Result<Vec<_>>>()?;
    let eval_set = episodes[8..].iter().map(|e| EvalEpisode::new(e, len, &codec, &style)).collect::<egoworld::Result<Vec<_>>>()?;
    let setup = AblationSetup {
        base: ModelConfig {
            arch: ArchConfig { embed_dim: 32, heads: 2, depth: 1, token_patch: 2, ..Default::default() },
            geometry: Geometry { channels: codec.latent_channels(), frames: len, height: 8, width: 8, vocab: NUM_TEMPLATES },
        },
        train: TrainConfig { steps: 10, batch_size: 2, lr: 1e-3, log_every: 5, ..Default::default() },
        codec,
        guidance: GuidanceConfig { steps: 4, ..Default::default() },
        threshold: 5.0,
        train_set: &train_set,
        eval_set: &eval_set,
        out: None,
    };
    let table = run_ablation(&setup, &Variant::ALL, |v, r| println!("{:<18} step {:>2} loss {:.4}", v.name(), r.step, r.loss))?;
    print!("{}", table.to_text());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
