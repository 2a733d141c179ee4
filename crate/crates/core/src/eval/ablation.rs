use std::path::Path;

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate;
use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::model::{
    prepare_episode, LossRecord, Model, ModelConfig, Prepared, TrainConfig, Trainer, Variant,
};
use crate::sampler::{generate, GuidanceConfig, GuidanceMode, SampleRequest};
use crate::scenecam::{PixelRect, RasterStyle};
use crate::synthenv::{read_episode, DatasetManifest, Episode};
use crate::temporal::resample_indices;

/// A held-out episode with its resampled ground truth.
#[derive(Debug, Clone)]
pub struct EvalEpisode {
    pub prepared: Prepared,
    /// `3 x L x H x W` ground-truth frames at the target length.
    pub video: Array4<f32>,
    pub pour_region: Option<PixelRect>,
    pub seed: u64,
}

impl EvalEpisode {
    pub fn new(
        ep: &Episode,
        target_len: usize,
        codec: &CodecConfig,
        style: &RasterStyle,
    ) -> Result<Self> {
        let prepared = prepare_episode(ep, target_len, codec, style)?;
        let resampled = ep.resample_with(&resample_indices(ep.len(), target_len)?)?;
        Ok(EvalEpisode {
            prepared,
            video: resampled.frames,
            pour_region: ep.pour_region(),
            seed: ep.seed,
        })
    }
}

pub fn prepare_eval_set(
    root: &Path,
    manifest: &DatasetManifest,
    range: std::ops::Range<usize>,
    target_len: usize,
    codec: &CodecConfig,
    style: &RasterStyle,
) -> Result<Vec<EvalEpisode>> {
    if range.end > manifest.episodes.len() {
        return Err(Error::InvalidArgument(format!(
            "episode range {range:?} exceeds dataset of {}",
            manifest.episodes.len()
        )));
    }
    manifest.episodes[range]
        .iter()
        .map(|e| EvalEpisode::new(&read_episode(&root.join(&e.dir))?, target_len, codec, style))
        .collect()
}

/// Metrics of one model over an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    /// Keypoint hits over keypoints, pooled across episodes, in percent.
    pub pck: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub jitter_generated: f64,
    pub jitter_ground_truth: f64,
    pub excluded_ratio: f64,
    /// Mean over pour episodes; `None` without any.
    pub pour_monotonicity: Option<f64>,
    pub episodes: usize,
}

/// Samples every episode (with or without its action) and averages the
/// metrics. Sample seeds are `seed + index`.
pub fn evaluate_model(
    model: &Model<f32>,
    codec: &CodecConfig,
    set: &[EvalEpisode],
    guidance: &GuidanceConfig,
    with_action: bool,
    threshold: f64,
    seed: u64,
) -> Result<SetMetrics> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let (mut hits, mut kps) = (0usize, 0usize);
    let mut sums = [0.0f64; 5];
    let mut pour = Vec::new();
    for (i, e) in set.iter().enumerate() {
        let mut req = SampleRequest::from_prepared(&e.prepared, seed + i as u64);
        if !with_action {
            req.action = None;
        }
        let gen = generate(model, codec, &req, guidance)?;
        let r = evaluate(&gen.video, &e.video, threshold, e.pour_region.as_ref())?;
        hits += r.pck.hits;
        kps += r.pck.keypoints;
        for (s, v) in sums.iter_mut().zip([
            r.psnr,
            r.ssim,
            r.jitter_generated,
            r.jitter_ground_truth,
            r.pck.excluded_ratio,
        ]) {
            *s += v;
        }
        pour.extend(r.pour_monotonicity);
    }
    let n = set.len() as f64;
    Ok(SetMetrics {
        pck: if kps == 0 {
            0.0
        } else {
            100.0 * hits as f64 / kps as f64
        },
        psnr: sums[0] / n,
        ssim: sums[1] / n,
        jitter_generated: sums[2] / n,
        jitter_ground_truth: sums[3] / n,
        excluded_ratio: sums[4] / n,
        pour_monotonicity: (!pour.is_empty()).then(|| pour.iter().sum::<f64>() / pour.len() as f64),
        episodes: set.len(),
    })
}

/// Guidance used for a variant: the clean-action variant has no action
/// branch and falls back to single-branch guidance with weight `w1`.
pub fn variant_guidance(variant: Variant, g: &GuidanceConfig) -> GuidanceConfig {
    let mut g = *g;
    if variant == Variant::NoJointModeling && g.mode == GuidanceMode::Inner {
        g.mode = GuidanceMode::Cfg;
        g.w2 = 0.0;
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub guidance: GuidanceConfig,
    pub final_loss: Option<f64>,
    #[serde(flatten)]
    pub metrics: SetMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub steps: usize,
    pub threshold: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Fixed-width text rendering, one row per variant.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<18} {:>8} {:>8} {:>7} {:>8} {:>9}\n",
            "variant", "PCK", "PSNR", "SSIM", "jitter", "excluded"
        );
        for r in &self.rows {
            let m = &r.metrics;
            s += &format!(
                "{:<18} {:>8.2} {:>8.2} {:>7.4} {:>8.4} {:>9.3}\n",
                r.variant.name(),
                m.pck,
                m.psnr,
                m.ssim,
                m.jitter_generated,
                m.excluded_ratio
            );
        }
        s
    }
}

/// Shared inputs of an ablation run.
pub struct AblationSetup<'a> {
    pub base: ModelConfig,
    pub train: TrainConfig,
    pub codec: CodecConfig,
    pub guidance: GuidanceConfig,
    pub threshold: f64,
    pub train_set: &'a [Prepared],
    pub eval_set: &'a [EvalEpisode],
    /// Per-variant checkpoints go to `out/<variant>/` when set.
    pub out: Option<&'a Path>,
}

/// Trains each variant from the same seed and budget, then evaluates it on
/// the held-out set.
pub fn run_ablation(
    setup: &AblationSetup,
    variants: &[Variant],
    mut on_log: impl FnMut(Variant, &LossRecord),
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let mut cfg = setup.base.clone();
        cfg.arch.variant = v;
        let mut rng = ChaCha8Rng::seed_from_u64(setup.train.seed);
        let model = Model::<f32>::init(cfg, &mut rng)?;
        let mut trainer = Trainer::new(model, setup.train.clone(), setup.codec)?;
        let mut last = None;
        match setup.out {
            Some(out) => {
                let recs = trainer.run(setup.train_set, &out.join(v.name()), |r| on_log(v, r))?;
                last = recs.last().map(|r| r.loss);
            }
            None => {
                while trainer.step < setup.train.steps {
                    let l = trainer.train_step(setup.train_set)?;
                    if trainer.step % setup.train.log_every == 0 {
                        let r = LossRecord {
                            step: trainer.step,
                            loss: l as f64,
                            lr: setup.train.lr,
                        };
                        on_log(v, &r);
                        last = Some(r.loss);
                    }
                }
            }
        }
        let g = variant_guidance(v, &setup.guidance);
        let metrics = evaluate_model(
            &trainer.model,
            &setup.codec,
            setup.eval_set,
            &g,
            v.has_action(),
            setup.threshold,
            setup.train.seed,
        )?;
        rows.push(AblationRow {
            variant: v,
            guidance: g,
            final_loss: last,
            metrics,
        });
    }
    Ok(AblationTable {
        seed: setup.train.seed,
        steps: setup.train.steps,
        threshold: setup.threshold,
        rows,
    })
}

/// Parses variant names, rejecting unknown ones.
pub fn parse_variants<S: AsRef<str>>(names: &[S]) -> Result<Vec<Variant>> {
    names.iter().map(|n| Variant::parse(n.as_ref())).collect()
}
