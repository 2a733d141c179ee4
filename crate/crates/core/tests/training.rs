//! A short training run on a handful of episodes.

use egoworld::codec::CodecConfig;
use egoworld::model::{
    prepare_episode, ArchConfig, Geometry, Model, ModelConfig, TrainConfig, Trainer,
};
use egoworld::scenecam::RasterStyle;
use egoworld::synthenv::DatasetConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn loss_halves_on_a_micro_run() {
    let codec = CodecConfig {
        patch: 4,
        temporal_patch: 1,
    };
    let data = DatasetConfig {
        count: 16,
        height: 32,
        width: 32,
        min_length: 20,
        max_length: 30,
        ..Default::default()
    };
    let set: Vec<_> = (0..data.count)
        .map(|i| {
            prepare_episode(
                &data.episode(i).unwrap(),
                2,
                &codec,
                &RasterStyle::default(),
            )
            .unwrap()
        })
        .collect();
    let cfg = ModelConfig {
        arch: ArchConfig {
            embed_dim: 48,
            heads: 2,
            depth: 1,
            ..ArchConfig::default()
        },
        geometry: Geometry {
            channels: codec.latent_channels(),
            frames: 2,
            height: 8,
            width: 8,
            vocab: 5,
        },
    };
    let model = Model::<f32>::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let train = TrainConfig {
        steps: 200,
        batch_size: 4,
        lr: 3e-3,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, train, codec).unwrap();
    let losses: Vec<f32> = (0..200)
        .map(|_| trainer.train_step(&set).unwrap())
        .collect();
    // 5-step moving averages at the start and the end
    let first = losses[..5].iter().sum::<f32>() / 5.0;
    let last = losses[195..].iter().sum::<f32>() / 5.0;
    assert!(losses.iter().all(|l| l.is_finite()));
    assert!(last <= 0.5 * first, "loss went from {first} to {last}");
}
