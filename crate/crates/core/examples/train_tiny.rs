//! Trains a small model on a dozen in-memory episodes and saves a
//! checkpoint.
//!
//! `cargo run --release --example train_tiny -- [out_dir]`

use std::path::Path;

use egoworld::codec::CodecConfig;
use egoworld::model::{prepare_episode, ArchConfig, Geometry, Model, ModelConfig, TrainConfig, Trainer};
use egoworld::scenecam::RasterStyle;
use egoworld::synthenv::{DatasetConfig, NUM_TEMPLATES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run(out: &Path) -> egoworld::Result<()> {
    let codec = CodecConfig { patch: 8, temporal_patch: 1 };
    let data = DatasetConfig { count: 12, min_length: 20, max_length: 40, ..Default::default() };
    let set = (0..data.count)
        .map(|i| prepare_episode(&data.episode(i)?, 8, &codec, &RasterStyle::default()))
        .collect::<egoworld::Result<Vec<_>>>()?;
    let cfg = ModelConfig {
        arch: ArchConfig { embed_dim: 32, heads: 2, depth: 2, token_patch: 2, ..Default::default() },
        geometry: Geometry { channels: codec.latent_channels(), frames: 8, height: 8, width: 8, vocab: NUM_TEMPLATES },
    };
    let model = Model::<f32>::init(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("{} parameters", model.num_params());
    let train = TrainConfig { steps: 40, batch_size: 4, lr: 1e-3, log_every: 10, checkpoint_every: 20, ..Default::default() };
    let mut trainer = Trainer::new(model, train, codec)?;
    trainer.run(&set, out, |r| println!("step {:>3}  loss {:.4}", r.step, r.loss))?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/train".into());
    if let Err(e) = run(Path::new(&out)) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
