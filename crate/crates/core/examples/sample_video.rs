//! Samples a video for a held-out episode from a checkpoint written by the
//! `train_tiny` example, with and without its action, and scores both.
//!
//! `cargo run --release --example sample_video -- <checkpoint_dir> [out_dir]`

use std::path::Path;

use egoworld::codec::CodecConfig;
use egoworld::eval::{evaluate, pck_threshold};
use egoworld::model::{checkpoint, prepare_episode};
use egoworld::sampler::{generate, write_sample, GuidanceConfig, SampleRequest};
use egoworld::scenecam::RasterStyle;
use egoworld::synthenv::DatasetConfig;

pub fn run(ckpt: &Path, out: &Path) -> egoworld::Result<()> {
    let ck = checkpoint::load(ckpt)?;
    let codec: CodecConfig = ck.meta.codec;
    let frames = ck.model.config.geometry.frames * codec.temporal_patch;
    let data = DatasetConfig { count: 13, min_length: 20, max_length: 40, ..Default::default() };
    let ep = data.episode(12)?;
    let prepared = prepare_episode(&ep, frames, &codec, &RasterStyle::default())?;
    let truth = ep.resample(frames)?;
    let guidance = GuidanceConfig { steps: 10, ..Default::default() };
    for (name, with_action) in [("action", true), ("null_action", false)] {
        let mut req = SampleRequest::from_prepared(&prepared, 7);
        if !with_action {
            req.action = None;
        }
        let generated = generate(&ck.model, &codec, &req, &guidance)?;
        let report = evaluate(&generated.video, &truth.frames, pck_threshold(64), ep.pour_region().as_ref())?;
        println!(
            "{name:<12} PCK {:6.2}  PSNR {:6.2}  SSIM {:.4}  excluded {:.2}",
            report.pck.pck, report.psnr, report.ssim, report.pck.excluded_ratio
        );
        write_sample(&out.join(name), &generated.video, &serde_json::json!({ "with_action": with_action }))?;
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().unwrap_or_else(|| "out/train".into());
    let out = args.next().unwrap_or_else(|| "out/sample".into());
    if let Err(e) = run(Path::new(&ckpt), Path::new(&out)) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
