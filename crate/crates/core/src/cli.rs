//! Command-line interface: `gen-data`, `train`, `sample`, `eval`, `ablate`.
//!
//! Failures print one JSON line `{"error": kind, "message": ...}` to stderr
//! and exit nonzero.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, parse_variants, pck_threshold, prepare_eval_set, run_ablation, AblationSetup,
    EvalReport,
};
use crate::model::checkpoint;
use crate::model::{
    prepare_dataset, prepare_episode, ArchConfig, Geometry, Model, ModelConfig, TrainConfig,
    Trainer,
};
use crate::sampler::{generate, GuidanceConfig, GuidanceMode, SampleRequest};
use crate::scenecam::RasterStyle;
use crate::synthenv::{
    generate_dataset, read_episode, read_frames_dir, validate_dataset, write_frames_dir,
    DatasetConfig, NUM_TEMPLATES,
};
use crate::temporal::resample_indices;

/// Environment variable overriding every seed in the config.
pub const SEED_ENV: &str = "LOME_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// The last `holdout` dataset episodes are never trained on.
    pub holdout: usize,
    /// PCK radius in pixels; defaults to the resolution-scaled 20 px.
    pub pck_threshold: Option<f64>,
    /// First sample seed; episode `i` uses `sample_seed + i`.
    pub sample_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            holdout: 50,
            pck_threshold: None,
            sample_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<String>,
    /// Training steps per variant; defaults to `train.steps`.
    pub steps: Option<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            variants: crate::model::Variant::ALL
                .iter()
                .map(|v| v.name().to_string())
                .collect(),
            steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    /// Frames every episode is resampled to.
    pub target_len: usize,
    pub codec: CodecConfig,
    pub raster: RasterStyle,
    pub model: ArchConfig,
    pub train: TrainConfig,
    pub guidance: GuidanceConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    /// Defaults with `target_len = 16`.
    pub fn standard() -> Self {
        RunConfig {
            target_len: 16,
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if c.target_len == 0 {
            c.target_len = 16;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::file(path, e.to_string()))
    }

    /// Applies `LOME_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            let seed: u64 = s.trim().parse().map_err(|_| {
                Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))
            })?;
            self.set_seed(seed);
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self.eval.sample_seed = seed;
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let (frames, height, width) =
            self.codec
                .latent_dims(self.target_len, self.dataset.height, self.dataset.width)?;
        Ok(ModelConfig {
            arch: self.model.clone(),
            geometry: Geometry {
                channels: self.codec.latent_channels(),
                frames,
                height,
                width,
                vocab: NUM_TEMPLATES,
            },
        })
    }

    pub fn threshold(&self) -> f64 {
        self.eval
            .pck_threshold
            .unwrap_or_else(|| pck_threshold(self.dataset.width))
    }

    /// Checks every section against the preconditions of the module that
    /// consumes it.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.codec.validate()?;
        if self.codec.temporal_patch != 1 {
            return Err(Error::Config(
                "codec: temporal_patch must be 1 to encode the reference image".into(),
            ));
        }
        if self.target_len < 2 {
            return Err(Error::Config("target_len must be at least 2".into()));
        }
        self.model_config()?.validate()?;
        self.train.validate()?;
        self.guidance.validate()?;
        if self.eval.holdout >= self.dataset.count {
            return Err(Error::Config(format!(
                "eval: holdout {} leaves no training episodes out of {}",
                self.eval.holdout, self.dataset.count
            )));
        }
        if let Some(t) = self.eval.pck_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config("eval: pck_threshold must be positive".into()));
            }
        }
        if self.raster.line_width == 0 || !(self.raster.joint_radius >= 0.0) {
            return Err(Error::Config(
                "raster: line_width must be positive and joint_radius >= 0".into(),
            ));
        }
        parse_variants(&self.ablation.variants)
            .map_err(|e| Error::Config(format!("ablation: {e}")))?;
        if self.ablation.steps == Some(0) {
            return Err(Error::Config("ablation: steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "egoworld",
    version,
    about = "Action-conditioned egocentric world model toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override `dataset.count`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model on a dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override `train.steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from the checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
        /// Single-threaded numerics (always the case in this build).
        #[arg(long)]
        deterministic: bool,
    },
    /// Generate a video for one episode's conditions.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, conflicts_with = "w")]
        w1: Option<f64>,
        #[arg(long)]
        w2: Option<f64>,
        /// Single guidance weight; alias of `--w1`.
        #[arg(long)]
        w: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Sample with the null action.
        #[arg(long)]
        no_action: bool,
        #[arg(long)]
        deterministic: bool,
    },
    /// Score generated frames against ground truth.
    Eval {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every ablation variant.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut c = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::standard(),
    };
    c.apply_env()?;
    Ok(c)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let json = serde_json::to_string_pretty(v).expect("serializable");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn training_split(
    cfg: &RunConfig,
    episodes: usize,
) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
    if cfg.eval.holdout >= episodes {
        return Err(Error::Config(format!(
            "eval: holdout {} leaves no training episodes out of {episodes}",
            cfg.eval.holdout
        )));
    }
    let cut = episodes - cfg.eval.holdout;
    Ok((0..cut, cut..episodes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub checkpoint: PathBuf,
    pub checkpoint_step: usize,
    pub episode: PathBuf,
    pub text: Option<usize>,
    pub with_action: bool,
    pub guidance: GuidanceConfig,
    pub seed: u64,
    pub target_len: usize,
    pub raster: RasterStyle,
}

/// Reads a frames directory, accepting a sample or episode directory that
/// contains `frames/`.
fn read_video(dir: &Path) -> Result<ndarray::Array4<f32>> {
    if !dir.is_dir() {
        return Err(Error::file(dir, "directory not found"));
    }
    let frames = dir.join("frames");
    read_frames_dir(if frames.is_dir() { &frames } else { dir })
}

pub fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::GenData {
            config,
            out,
            jobs,
            count,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(n) = count {
                cfg.dataset.count = n;
            }
            cfg.dataset.validate()?;
            if jobs == 0 {
                return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
            }
            let m = generate_dataset(&cfg.dataset, &out, jobs)?;
            Ok(serde_json::json!({"command": "gen-data", "out": out, "episodes": m.episodes.len()}))
        }
        Command::Train {
            config,
            data,
            out,
            steps,
            resume,
            deterministic: _,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let manifest = validate_dataset(&data)?;
            cfg.dataset.height = manifest.config.height;
            cfg.dataset.width = manifest.config.width;
            cfg.dataset.count = manifest.episodes.len();
            cfg.validate()?;
            let model_cfg = cfg.model_config()?;
            let mut trainer = if resume {
                let ck = checkpoint::read_manifest(&out)?;
                Model::<f32>::zeros(model_cfg.clone())?
                    .layout
                    .check_compatible(&ck.tensor_specs())?;
                Trainer::resume(&out, cfg.train.clone())?
            } else {
                let model =
                    Model::<f32>::init(model_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
                Trainer::new(model, cfg.train.clone(), cfg.codec)?
            };
            let (train_range, _) = training_split(&cfg, manifest.episodes.len())?;
            let set = prepare_dataset(
                &data,
                &manifest,
                train_range,
                cfg.target_len,
                &cfg.codec,
                &cfg.raster,
            )?;
            let recs = trainer.run(&set, &out, |r| {
                eprintln!("{}", serde_json::to_string(r).expect("record"));
            })?;
            write_json(&out.join("run_config.json"), &cfg)?;
            Ok(serde_json::json!({
                "command": "train",
                "out": out,
                "step": trainer.step,
                "final_loss": recs.last().map(|r| r.loss),
                "params": trainer.model.num_params(),
            }))
        }
        Command::Sample {
            checkpoint: ck_dir,
            episode,
            out,
            config,
            mode,
            w1,
            w2,
            w,
            steps,
            seed,
            no_action,
            deterministic: _,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut g = cfg.guidance;
            if let Some(m) = mode {
                g.mode = GuidanceMode::parse(&m)?;
            }
            if let Some(v) = w1.or(w) {
                g.w1 = v;
            }
            if let Some(v) = w2 {
                g.w2 = v;
            }
            if let Some(s) = steps {
                g.steps = s;
            }
            g.validate()?;
            let g = g.normalized();
            let ck = match config {
                Some(_) => {
                    cfg.validate()?;
                    checkpoint::load_compatible(&ck_dir, &cfg.model_config()?)?
                }
                None => checkpoint::load(&ck_dir)?,
            };
            let geo = ck.model.config.geometry;
            let target_len = geo.frames * ck.meta.codec.temporal_patch;
            let ep = read_episode(&episode)?;
            let prepared = prepare_episode(&ep, target_len, &ck.meta.codec, &cfg.raster)?;
            let seed = seed.unwrap_or(cfg.eval.sample_seed);
            let mut req = SampleRequest::from_prepared(&prepared, seed);
            if no_action {
                req.action = None;
            }
            let generated = generate(&ck.model, &ck.meta.codec, &req, &g)?;
            let sidecar = SampleSidecar {
                checkpoint: ck_dir.clone(),
                checkpoint_step: ck.meta.step,
                episode: episode.clone(),
                text: req.text,
                with_action: !no_action,
                guidance: g,
                seed,
                target_len,
                raster: cfg.raster,
            };
            crate::sampler::write_sample(&out, &generated.video, &sidecar)?;
            write_frames_dir(&out.join("recovered_action"), &generated.recovered_action)?;
            Ok(serde_json::json!({"command": "sample", "out": out, "frames": target_len}))
        }
        Command::Eval {
            gen,
            gt,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let gen_video = read_video(&gen)?;
            if !gt.is_dir() {
                return Err(Error::file(&gt, "directory not found"));
            }
            let (gt_video, region) = if gt.join("meta.json").is_file() {
                let ep = read_episode(&gt)?;
                let region = ep.pour_region();
                let ep = ep.resample_with(&resample_indices(ep.len(), gen_video.shape()[1])?)?;
                (ep.frames, region)
            } else {
                (read_video(&gt)?, None)
            };
            let threshold = cfg
                .eval
                .pck_threshold
                .unwrap_or_else(|| pck_threshold(gt_video.shape()[3]));
            let report: EvalReport = evaluate(&gen_video, &gt_video, threshold, region.as_ref())?;
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
            Ok(serde_json::to_value(&report).expect("report"))
        }
        Command::Ablate {
            config,
            data,
            out,
            variants,
            steps,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(v) = variants {
                cfg.ablation.variants = v;
            }
            if let Some(s) = steps {
                cfg.ablation.steps = Some(s);
            }
            let variants = parse_variants(&cfg.ablation.variants)?;
            let manifest = validate_dataset(&data)?;
            cfg.dataset.height = manifest.config.height;
            cfg.dataset.width = manifest.config.width;
            cfg.dataset.count = manifest.episodes.len();
            cfg.validate()?;
            let (train_range, eval_range) = training_split(&cfg, manifest.episodes.len())?;
            let train_set = prepare_dataset(
                &data,
                &manifest,
                train_range,
                cfg.target_len,
                &cfg.codec,
                &cfg.raster,
            )?;
            let eval_set = prepare_eval_set(
                &data,
                &manifest,
                eval_range,
                cfg.target_len,
                &cfg.codec,
                &cfg.raster,
            )?;
            let mut train = cfg.train.clone();
            if let Some(s) = cfg.ablation.steps {
                train.steps = s;
            }
            train.checkpoint_every = train.checkpoint_every.max(train.steps);
            let setup = AblationSetup {
                base: cfg.model_config()?,
                train,
                codec: cfg.codec,
                guidance: cfg.guidance,
                threshold: cfg.threshold(),
                train_set: &train_set,
                eval_set: &eval_set,
                out: Some(&out),
            };
            let table = run_ablation(&setup, &variants, |v, r| {
                eprintln!(
                    "{{\"variant\":\"{}\",\"step\":{},\"loss\":{}}}",
                    v.name(),
                    r.step,
                    r.loss
                );
            })?;
            write_json(&out.join("ablation.json"), &table)?;
            fs::write(out.join("ablation.txt"), table.to_text())
                .map_err(|e| Error::io(out.join("ablation.txt"), e))?;
            print!("{}", table.to_text());
            Ok(serde_json::json!({"command": "ablate", "out": out, "rows": table.rows.len()}))
        }
    }
}

/// One-line machine-parsable failure record.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({"error": kind, "message": message.replace('\n', " ")}).to_string()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return 2;
        }
    };
    match run(cli) {
        Ok(summary) => {
            if summary.get("command").is_some() {
                eprintln!("{summary}");
            } else {
                println!("{summary}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"dataset": {"count": 3, "colour": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let c = RunConfig::from_json(r#"{"dataset": {"count": 60}}"#).unwrap();
        assert_eq!(c.target_len, 16);
        c.validate().unwrap();
    }

    #[test]
    fn validation_catches_each_section() {
        let base = || {
            let mut c = RunConfig::standard();
            c.dataset.count = 60;
            c
        };
        let mut c = base();
        c.codec.patch = 3;
        assert!(c.validate().is_err());
        let mut c = base();
        c.model.heads = 5;
        assert!(c.validate().is_err());
        let mut c = base();
        c.guidance.w2 = -1.0;
        assert!(c.validate().is_err());
        let mut c = base();
        c.eval.holdout = 60;
        assert!(c.validate().is_err());
        let mut c = base();
        c.ablation.variants.push("no_text".into());
        assert!(c.validate().is_err());
        let mut c = base();
        c.model.p_text = 0.9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn error_line_is_single_json_line() {
        let l = error_line("file", "a\nb");
        assert!(!l.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&l).unwrap();
        assert_eq!(v["error"], "file");
    }
}
