//! Flow-matching loss, Adam, and the training loop.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::checkpoint::{self, CheckpointMeta};
use super::data::Prepared;
use super::joint::flow_interpolate;
use super::net::{Conditions, Model};
use super::real::Real;
use crate::codec::CodecConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub log_every: usize,
    pub checkpoint_every: usize,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 8,
            lr: 1e-4,
            seed: 0,
            log_every: 10,
            checkpoint_every: 1000,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive and finite");
        }
        if self.log_every == 0 || self.checkpoint_every == 0 {
            return bad("log_every and checkpoint_every must be positive");
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return bad("grad_clip must be a finite non-negative number");
        }
        Ok(())
    }
}

/// One training example after condition dropout.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs<'a, T> {
    /// Clean joint latent.
    pub x0: &'a Array4<T>,
    /// Gaussian noise of the same shape.
    pub noise: &'a Array4<T>,
    pub t: f64,
    pub text: Option<usize>,
    pub raymaps: Option<&'a Array4<T>>,
    pub action: bool,
}

/// Masked mean squared error between predicted and target velocity.
/// Gradients are accumulated into `grad`.
pub fn loss_and_grad<T: Real>(model: &Model<T>, inp: &StepInputs<T>, grad: &mut [T]) -> Result<T> {
    let (loss, cache, dout) = loss_parts(model, inp)?;
    model.backward(&cache, &dout, grad);
    Ok(loss)
}

/// The loss of [`loss_and_grad`] without the backward pass.
pub fn loss<T: Real>(model: &Model<T>, inp: &StepInputs<T>) -> Result<T> {
    Ok(loss_parts(model, inp)?.0)
}

fn loss_parts<T: Real>(
    model: &Model<T>,
    inp: &StepInputs<T>,
) -> Result<(T, super::net::Cache<T>, Array4<T>)> {
    let mask = model.joint.noise_mask::<T>(inp.action);
    let xt = flow_interpolate(inp.x0, inp.noise, &mask, T::c(inp.t))?;
    let cond = Conditions {
        text: inp.text,
        raymaps: inp.raymaps,
        action: inp.action,
    };
    let (v, cache) = model.forward(&xt, inp.t, &cond)?;
    let target = inp.noise - inp.x0;
    let denom = mask.sum();
    let diff = (&v - &target) * &mask;
    let loss = diff.mapv(|d| d * d).sum() / denom;
    let dout = diff.mapv(|d| T::c(2.0) * d / denom);
    Ok((loss, cache, dout))
}

/// Dropout outcome and timestep for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub t: f64,
    /// Text and camera are dropped together.
    pub drop_text: bool,
    pub drop_action: bool,
}

/// Draws `t ~ U(0, 1)` and the two independent dropout decisions.
/// Probabilities are not limited to the training range so that the
/// all-null case can be exercised.
pub fn draw_conditions<R: Rng>(rng: &mut R, p_text: f64, p_action: f64) -> Draw {
    let t = rng.random::<f64>();
    let drop_text = rng.random::<f64>() < p_text;
    let drop_action = rng.random::<f64>() < p_action;
    Draw {
        t,
        drop_text,
        drop_action,
    }
}

/// Clean joint latent of a prepared episode for `model`'s variant.
pub fn clean_joint(model: &Model<f32>, p: &Prepared) -> Result<Array4<f32>> {
    model.joint.assemble(
        &p.image,
        &p.video,
        None,
        Some(&p.action),
        &model.null_action(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// `step` counts from 1.
    pub fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f64, step: usize) {
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(step as i32);
        let c2 = 1.0 - self.beta2.powi(step as i32);
        let a = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= a * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub struct Trainer {
    pub model: Model<f32>,
    pub adam: Adam,
    /// Completed steps.
    pub step: usize,
    pub config: TrainConfig,
    pub codec: CodecConfig,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig, codec: CodecConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            adam: Adam::new(model.num_params()),
            model,
            step: 0,
            config,
            codec,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::run`].
    pub fn resume(dir: &Path, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let ck = checkpoint::load(dir)?;
        let adam = ck
            .adam
            .ok_or_else(|| Error::file(dir, "checkpoint has no optimizer state"))?;
        Ok(Trainer {
            model: ck.model,
            adam,
            step: ck.meta.step,
            config,
            codec: ck.meta.codec,
        })
    }

    /// One optimizer step on a batch drawn from `data`.
    pub fn train_step(&mut self, data: &[Prepared]) -> Result<f32> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let step = self.step + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step as u64);
        let arch = &self.model.config.arch;
        let (p_text, p_action) = (arch.p_text, arch.p_action);
        let variant = self.model.config.variant();
        let n = self.model.num_params();
        let mut grad = vec![0.0f32; n];
        let mut total = 0.0f64;
        let bs = self.config.batch_size;
        for k in 0..bs {
            let ex = &data[rng.random_range(0..data.len())];
            let d = draw_conditions(&mut rng, p_text, p_action);
            let x0 = clean_joint(&self.model, ex)?;
            let noise =
                Array4::from_shape_simple_fn(x0.dim(), || rng.sample::<f32, _>(StandardNormal));
            let action = variant.has_action() && !d.drop_action;
            let inp = StepInputs {
                x0: &x0,
                noise: &noise,
                t: d.t,
                text: (!d.drop_text).then_some(ex.text),
                raymaps: (!d.drop_text && variant.uses_camera()).then_some(&ex.raymaps),
                action,
            };
            let l = loss_and_grad(&self.model, &inp, &mut grad)?;
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("loss {l} on batch item {k} at t = {:.4}", d.t),
                });
            }
            total += l as f64;
        }
        let scale = 1.0 / bs as f32;
        grad.iter_mut().for_each(|g| *g *= scale);
        let norm = grad.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("gradient norm {norm}"),
            });
        }
        if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            let s = (self.config.grad_clip / norm) as f32;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.adam
            .update(&mut self.model.params, &grad, self.config.lr, step);
        self.step = step;
        Ok((total / bs as f64) as f32)
    }

    fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            model: self.model.config.clone(),
            codec: self.codec,
            step: self.step,
            seed: self.config.seed,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, &self.model, Some(&self.adam), &self.meta())
    }

    /// Trains until `config.steps`, appending to `out/loss.jsonl`, writing
    /// `out/step_NNNNNNNN/` every `checkpoint_every` steps and the final
    /// checkpoint into `out` itself.
    pub fn run(
        &mut self,
        data: &[Prepared],
        out: &Path,
        mut on_log: impl FnMut(&LossRecord),
    ) -> Result<Vec<LossRecord>> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let log_path = out.join("loss.jsonl");
        let mut records = read_log(&log_path)?;
        records.retain(|r| r.step <= self.step);
        let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
        for r in &records {
            writeln!(log, "{}", serde_json::to_string(r).expect("record"))
                .map_err(|e| Error::io(&log_path, e))?;
        }
        while self.step < self.config.steps {
            let loss = self.train_step(data)?;
            if self.step % self.config.log_every == 0 {
                let r = LossRecord {
                    step: self.step,
                    loss: loss as f64,
                    lr: self.config.lr,
                };
                writeln!(log, "{}", serde_json::to_string(&r).expect("record"))
                    .map_err(|e| Error::io(&log_path, e))?;
                log.flush().map_err(|e| Error::io(&log_path, e))?;
                on_log(&r);
                records.push(r);
            }
            if self.step % self.config.checkpoint_every == 0 && self.step < self.config.steps {
                self.save(&out.join(format!("step_{:08}", self.step)))?;
            }
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        self.save(out)?;
        Ok(records)
    }
}

/// Parses a loss log; a missing file is an empty log.
pub fn read_log(path: &Path) -> Result<Vec<LossRecord>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|(i, l)| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::file(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{ArchConfig, Geometry, ModelConfig, Variant};
    use ndarray::Array;

    fn micro(variant: Variant) -> ModelConfig {
        ModelConfig {
            arch: ArchConfig {
                embed_dim: 8,
                heads: 2,
                depth: 1,
                variant,
                ..ArchConfig::default()
            },
            geometry: Geometry {
                channels: 4,
                frames: 2,
                height: 2,
                width: 2,
                vocab: 3,
            },
        }
    }

    fn rand4(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f64> {
        Array::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        // a zero-initialized head predicts 0, which is the target when noise == data
        let m =
            Model::<f64>::init(micro(Variant::Full), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x0 = rand4(m.joint.shape(), &mut ChaCha8Rng::seed_from_u64(1));
        let inp = StepInputs {
            x0: &x0,
            noise: &x0,
            t: 0.3,
            text: Some(0),
            raymaps: None,
            action: true,
        };
        assert_eq!(loss(&m, &inp).unwrap(), 0.0);
    }

    #[test]
    fn image_frame_is_outside_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Model::<f64>::init_dense(micro(Variant::Full), 0.3, &mut rng).unwrap();
        let x0 = rand4(m.joint.shape(), &mut rng);
        let noise = rand4(m.joint.shape(), &mut rng);
        let mut noise2 = noise.clone();
        m.joint.image().view_mut(&mut noise2).fill(7.0);
        let mk = |n| StepInputs {
            x0: &x0,
            noise: n,
            t: 0.6,
            text: None,
            raymaps: None,
            action: true,
        };
        assert_eq!(
            loss(&m, &mk(&noise)).unwrap(),
            loss(&m, &mk(&noise2)).unwrap()
        );
    }

    #[test]
    fn all_null_draws_reach_only_null_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Model::<f64>::init_dense(micro(Variant::Full), 0.3, &mut rng).unwrap();
        let x0 = rand4(m.joint.shape(), &mut rng);
        let noise = rand4(m.joint.shape(), &mut rng);
        let r = rand4((2, 6, 2, 2), &mut rng);
        let mut g = vec![0.0; m.num_params()];
        for _ in 0..5 {
            let d = draw_conditions(&mut rng, 1.0, 1.0);
            assert!(d.drop_text && d.drop_action);
            let inp = StepInputs {
                x0: &x0,
                noise: &noise,
                t: d.t,
                text: (!d.drop_text).then_some(1),
                raymaps: (!d.drop_text).then_some(&r),
                action: !d.drop_action,
            };
            loss_and_grad(&m, &inp, &mut g).unwrap();
        }
        let text = m.slots.text.mat(&g);
        for row in 0..3 {
            assert!(text.row(row).iter().all(|v| *v == 0.0));
        }
        assert!(text.row(3).iter().any(|v| *v != 0.0));
        assert!(g[m.slots.null_action.range()].iter().any(|v| *v != 0.0));
        let a = m.slots.adapter.unwrap();
        assert!(g[a.conv_in_w.range()].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2);
        let mut p = vec![1.0f32, -1.0];
        adam.update(&mut p, &[0.5, -2.0], 0.1, 1);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }
}
