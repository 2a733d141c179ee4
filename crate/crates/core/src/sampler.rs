//! Euler integration of the learned velocity field with single-branch or
//! three-branch guidance, and extraction of the generated video.

use std::path::Path;

use ndarray::{Array4, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codec::{CodecConfig, LatentRole, LatentTensor};
use crate::error::{Error, Result};
use crate::model::{from_model_space, Conditions, JointLayout, Model, Prepared, Real, Variant};
use crate::synthenv::write_frames_dir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    None,
    Cfg,
    #[default]
    Inner,
}

impl GuidanceMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GuidanceMode::None),
            "cfg" => Ok(GuidanceMode::Cfg),
            "inner" => Ok(GuidanceMode::Inner),
            _ => Err(Error::InvalidArgument(format!(
                "unknown guidance mode `{s}`"
            ))),
        }
    }
}

/// `w1` weights the condition branch (and is the single CFG weight);
/// `w2` weights the action branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub w1: f64,
    pub w2: f64,
    pub steps: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            mode: GuidanceMode::Inner,
            w1: 5.0,
            w2: 3.0,
            steps: 50,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!(
                    "guidance: {name} = {w} must be finite and >= 0"
                )));
            }
        }
        if self.steps == 0 {
            return Err(Error::Config("guidance: steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Mode `none` carries no weights.
    pub fn normalized(mut self) -> Self {
        if self.mode == GuidanceMode::None {
            self.w1 = 0.0;
            self.w2 = 0.0;
        }
        self
    }
}

fn check_same<T>(what: &str, a: &Array4<T>, b: &Array4<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            what,
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

/// `(1 + w1 + w2) u_full - w1 u_uncond - w2 u_noaction`, evaluated as
/// `u_full + w1 (u_full - u_uncond) + w2 (u_full - u_noaction)` so that
/// equal branches come back unchanged.
pub fn inner_guidance<T: Real>(
    u_full: &Array4<T>,
    u_uncond: &Array4<T>,
    u_noaction: &Array4<T>,
    w1: f64,
    w2: f64,
) -> Result<Array4<T>> {
    check_same("unconditional branch", u_full, u_uncond)?;
    check_same("no-action branch", u_full, u_noaction)?;
    let (b, c) = (T::c(w1), T::c(w2));
    let mut out = u_full.clone();
    Zip::from(&mut out)
        .and(u_uncond)
        .and(u_noaction)
        .for_each(|o, &u, &n| *o = *o + b * (*o - u) + c * (*o - n));
    Ok(out)
}

/// `(1 + w) u_cond - w u_uncond`, evaluated as `u_cond + w (u_cond - u_uncond)`.
pub fn cfg<T: Real>(u_cond: &Array4<T>, u_uncond: &Array4<T>, w: f64) -> Result<Array4<T>> {
    check_same("unconditional branch", u_cond, u_uncond)?;
    let b = T::c(w);
    let mut out = u_cond.clone();
    Zip::from(&mut out)
        .and(u_uncond)
        .for_each(|o, &u| *o = *o + b * (*o - u));
    Ok(out)
}

/// Which conditions a velocity evaluation sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Full,
    /// Text and camera nulled.
    Uncond,
    /// Action nulled.
    NoAction,
}

pub trait VelocityField<T: Real> {
    fn velocity(&self, x: &Array4<T>, t: f64, branch: Branch) -> Result<Array4<T>>;

    /// Re-imposes known entries of the state at time `t`.
    fn constrain(&self, _x: &mut Array4<T>, _t: f64) {}
}

/// Guided velocity at one state.
pub fn guided<T: Real, F: VelocityField<T>>(
    field: &F,
    x: &Array4<T>,
    t: f64,
    g: &GuidanceConfig,
) -> Result<Array4<T>> {
    let full = field.velocity(x, t, Branch::Full)?;
    match g.mode {
        GuidanceMode::None => Ok(full),
        GuidanceMode::Cfg => cfg(&full, &field.velocity(x, t, Branch::Uncond)?, g.w1),
        GuidanceMode::Inner => inner_guidance(
            &full,
            &field.velocity(x, t, Branch::Uncond)?,
            &field.velocity(x, t, Branch::NoAction)?,
            g.w1,
            g.w2,
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    /// State at `t = 0`.
    pub final_state: Array4<T>,
    /// `x - t u` at the last step: the model's clean estimate.
    pub clean_estimate: Array4<T>,
}

/// Integrates from `t = 1` to `t = 0` in `g.steps` uniform Euler steps,
/// `x <- x - dt u`.
pub fn euler<T: Real, F: VelocityField<T>>(
    field: &F,
    init: Array4<T>,
    g: &GuidanceConfig,
) -> Result<Trajectory<T>> {
    g.validate()?;
    let g = g.normalized();
    let n = g.steps;
    let dt = 1.0 / n as f64;
    let mut x = init;
    field.constrain(&mut x, 1.0);
    let mut clean = x.clone();
    for k in 0..n {
        let t = 1.0 - k as f64 / n as f64;
        let u = guided(field, &x, t, &g)?;
        clean = &x - &u.mapv(|v| v * T::c(t));
        x.scaled_add(T::c(-dt), &u);
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: k,
                detail: format!("sampler state entry {i} at t = {t:.4}"),
            });
        }
        field.constrain(&mut x, 1.0 - (k + 1) as f64 / n as f64);
    }
    field.constrain(&mut x, 0.0);
    Ok(Trajectory {
        final_state: x,
        clean_estimate: clean,
    })
}

/// Conditions for one generation, in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRequest {
    /// `C x 1 x H' x W'` clean reference-image latent.
    pub image: Array4<f32>,
    pub text: Option<usize>,
    /// `L' x 6 x H' x W'`.
    pub raymaps: Option<Array4<f32>>,
    /// `C x L' x H' x W'` action latents; `None` samples with the null action.
    pub action: Option<Array4<f32>>,
    pub seed: u64,
}

impl SampleRequest {
    pub fn from_prepared(p: &Prepared, seed: u64) -> Self {
        SampleRequest {
            image: p.image.clone(),
            text: Some(p.text),
            raymaps: Some(p.raymaps.clone()),
            action: Some(p.action.clone()),
            seed,
        }
    }
}

/// The network with a fixed request: the velocity field the sampler
/// integrates.
pub struct ModelField<'a> {
    model: &'a Model<f32>,
    req: &'a SampleRequest,
    /// Joint latent holding the clean image and zeros elsewhere.
    anchor: Array4<f32>,
    /// 1 on entries the sampler evolves.
    free: Array4<f32>,
    /// Noise paired with the known action on the straight path.
    action_noise: Array4<f32>,
}

impl<'a> ModelField<'a> {
    pub fn new(model: &'a Model<f32>, req: &'a SampleRequest, init: &Array4<f32>) -> Result<Self> {
        let j = &model.joint;
        let zeros = Array4::zeros((j.channels, j.frames, j.height, j.width));
        if let Some(a) = &req.action {
            check_same("action stream", &zeros, a)?;
        }
        let null = ndarray::Array3::zeros((j.channels, j.height, j.width));
        let anchor = j.assemble(&req.image, &zeros, None, Some(&zeros), &null)?;
        let mut free = Array4::zeros(j.shape());
        j.video().view_mut(&mut free).fill(1.0);
        j.action().view_mut(&mut free).fill(1.0);
        check_same("initial state", &anchor, init)?;
        Ok(ModelField {
            model,
            req,
            anchor,
            free,
            action_noise: j.action().view(init).to_owned(),
        })
    }

    fn has_action(&self) -> bool {
        self.req.action.is_some() && self.model.config.variant().has_action()
    }
}

impl VelocityField<f32> for ModelField<'_> {
    fn velocity(&self, x: &Array4<f32>, t: f64, branch: Branch) -> Result<Array4<f32>> {
        let action = self.has_action();
        let variant = self.model.config.variant();
        let raymaps = self.req.raymaps.as_ref().filter(|_| variant.uses_camera());
        let cond = match branch {
            Branch::Full => Conditions {
                text: self.req.text,
                raymaps,
                action,
            },
            Branch::Uncond => Conditions {
                text: None,
                raymaps: None,
                // single-branch guidance treats the action as a condition
                action: action && variant != Variant::NoJointModeling,
            },
            Branch::NoAction => Conditions {
                text: self.req.text,
                raymaps,
                action: false,
            },
        };
        self.model.predict(x, t, &cond)
    }

    fn constrain(&self, x: &mut Array4<f32>, t: f64) {
        Zip::from(&mut *x)
            .and(&self.free)
            .and(&self.anchor)
            .for_each(|v, &f, &a| {
                if f == 0.0 {
                    *v = a;
                }
            });
        if let (Some(a), true) = (&self.req.action, self.has_action()) {
            let joint = self.model.joint.action_noised(true);
            let t = if joint { t as f32 } else { 0.0 };
            let mut slot = self.model.joint.action().view_mut(x);
            Zip::from(&mut slot)
                .and(a)
                .and(&self.action_noise)
                .for_each(|v, &a, &e| *v = (1.0 - t) * a + t * e);
        }
    }
}

/// Seeded standard-normal initial state of the joint latent.
pub fn initial_noise(layout: &JointLayout, seed: u64) -> Array4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn(layout.shape(), || rng.sample::<f32, _>(StandardNormal))
}

/// Denoised joint latent (model space) for a request.
pub fn euler_sample(
    model: &Model<f32>,
    req: &SampleRequest,
    g: &GuidanceConfig,
) -> Result<Trajectory<f32>> {
    let init = initial_noise(&model.joint, req.seed);
    let field = ModelField::new(model, req, &init)?;
    euler(&field, init, g)
}

/// Video frames of a joint latent decoded to pixels, plus the action
/// stream latents kept for diagnostics. No value scaling is applied.
pub fn extract_video(
    joint: &Array4<f32>,
    layout: &JointLayout,
    codec: &CodecConfig,
) -> Result<(Array4<f32>, Array4<f32>)> {
    let (c, f, h, w) = layout.shape();
    if joint.shape() != [c, f, h, w] {
        return Err(Error::shape(
            "joint layout",
            format!("{:?}", [c, f, h, w]),
            format!("{:?}", joint.shape()),
        ));
    }
    let video = layout.video().view(joint).to_owned();
    let action = layout.action().view(joint).to_owned();
    let frames = codec.decode(&LatentTensor {
        data: video,
        role: LatentRole::Video,
    })?;
    Ok((frames, action))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// RGB `3 x L x H x W` in `[0, 1]`.
    pub video: Array4<f32>,
    /// The network's final clean estimate of the action stream, decoded.
    pub recovered_action: Array4<f32>,
}

pub fn generate(
    model: &Model<f32>,
    codec: &CodecConfig,
    req: &SampleRequest,
    g: &GuidanceConfig,
) -> Result<Generated> {
    let traj = euler_sample(model, req, g)?;
    let pixels = from_model_space(&traj.final_state);
    let (video, _) = extract_video(&pixels, &model.joint, codec)?;
    let est = from_model_space(&model.joint.action().view(&traj.clean_estimate).to_owned());
    let recovered_action = codec.decode(&LatentTensor {
        data: est,
        role: LatentRole::Action,
    })?;
    Ok(Generated {
        video,
        recovered_action,
    })
}

/// Writes `out/frames/NNNN.ppm` and `out/sample.json`.
pub fn write_sample(out: &Path, video: &Array4<f32>, sidecar: &impl Serialize) -> Result<()> {
    write_frames_dir(&out.join("frames"), video)?;
    let path = out.join("sample.json");
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    struct Constant(f64);

    impl VelocityField<f64> for Constant {
        fn velocity(&self, x: &Array4<f64>, _t: f64, _b: Branch) -> Result<Array4<f64>> {
            Ok(Array4::from_elem(x.dim(), self.0))
        }
    }

    #[test]
    fn guidance_arithmetic() {
        let v = |x: f64| Array4::from_elem((1, 1, 1, 1), x);
        assert_eq!(
            inner_guidance(&v(2.0), &v(1.0), &v(0.0), 5.0, 3.0).unwrap()[[0, 0, 0, 0]],
            13.0
        );
        assert_eq!(cfg(&v(1.0), &v(-1.0), 2.0).unwrap()[[0, 0, 0, 0]], 5.0);
        assert_eq!(cfg(&v(0.3), &v(9.0), 0.0).unwrap()[[0, 0, 0, 0]], 0.3);
        assert!(inner_guidance(&v(1.0), &Array4::zeros((1, 2, 1, 1)), &v(0.0), 1.0, 1.0).is_err());
    }

    #[test]
    fn constant_velocity_telescopes() {
        let init = Array::from_shape_fn((1, 3, 1, 1), |(_, i, _, _)| i as f64);
        for steps in [1, 7, 50] {
            let g = GuidanceConfig {
                mode: GuidanceMode::None,
                steps,
                ..Default::default()
            };
            let out = euler(&Constant(0.5), init.clone(), &g).unwrap();
            for (a, b) in out.final_state.iter().zip(init.iter()) {
                assert!((a - (b - 0.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn none_mode_drops_weights_and_validation() {
        let g = GuidanceConfig {
            mode: GuidanceMode::None,
            ..Default::default()
        }
        .normalized();
        assert_eq!((g.w1, g.w2), (0.0, 0.0));
        let bad = GuidanceConfig {
            w1: f64::NAN,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(GuidanceConfig {
            steps: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(GuidanceMode::parse("inner").unwrap(), GuidanceMode::Inner);
        assert!(GuidanceMode::parse("eq7").is_err());
    }

    #[test]
    fn non_finite_state_reports_step() {
        let g = GuidanceConfig {
            mode: GuidanceMode::None,
            steps: 4,
            ..Default::default()
        };
        let err = euler(&Constant(f64::INFINITY), Array4::zeros((1, 1, 1, 1)), &g)
            .err()
            .unwrap();
        assert!(matches!(err, Error::NonFinite { step: 0, .. }));
    }
}
