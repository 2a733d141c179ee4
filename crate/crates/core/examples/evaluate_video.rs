//! Scores corrupted copies of a ground-truth pour episode: a spatial
//! shift, added noise, and time reversal.
//!
//! `cargo run --release --example evaluate_video`

use egoworld::eval::{evaluate, pck_threshold};
use egoworld::synthenv::{DatasetConfig, TaskKind};
use ndarray::{s, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run() -> egoworld::Result<()> {
    let data = DatasetConfig::default();
    let i = (0..data.count).find(|&i| data.episode_plan(i).0.kind == TaskKind::Pour).expect("a pour episode");
    let ep = data.episode(i)?.resample(16)?;
    let truth = &ep.frames;
    let region = ep.pour_region();
    let mut shifted = Array4::zeros(truth.dim());
    shifted.slice_mut(s![.., .., .., 6..]).assign(&truth.slice(s![.., .., .., ..-6]));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noisy = truth.mapv(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0));
    let reversed = truth.slice(s![.., ..;-1, .., ..]).to_owned();
    println!("{:<10} {:>7} {:>7} {:>7} {:>7} {:>6}", "video", "PCK", "PSNR", "SSIM", "jitter", "pour");
    for (name, video) in [("identical", truth), ("shifted", &shifted), ("noisy", &noisy), ("reversed", &reversed)] {
        let r = evaluate(video, truth, pck_threshold(truth.shape()[3]), region.as_ref())?;
        println!(
            "{name:<10} {:>7.2} {:>7.2} {:>7.4} {:>7.4} {:>6.2}",
            r.pck.pck,
            r.psnr,
            r.ssim,
            r.jitter_generated,
            r.pour_monotonicity.unwrap_or(f64::NAN)
        );
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
