//! Deterministic synthetic egocentric manipulation environment.
//!
//! An episode is a scripted arm performing one task (push, pick-and-place,
//! stack or pour) seen from a head-mounted camera that bobs slightly. Every
//! quantity is a pure function of `(seed, task, length, resolution)`.

mod dataset;
mod io;
mod render;
mod script;
mod task;

use ndarray::{Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use dataset::{
    generate_dataset, load_dataset, validate_dataset, DatasetConfig, DatasetManifest, ManifestEntry,
};
pub use io::{
    episode_dir_name, read_episode, read_frames_dir, read_ppm, write_episode, write_frames_dir,
    write_ppm, FORMAT_VERSION,
};
pub use render::{fill_cells_layout, render_frame, TIP_MARKER_RADIUS, WRIST_MARKER_RADIUS};
pub use script::{
    arm_keypoints, skeleton_edges, ObjectState, SceneState, Script, KEYPOINT_IDS, POUR_PARTICLES,
};
pub use task::{
    color_name, ObjectDesc, Shape, TargetDesc, TaskKind, TaskSpec, NUM_TEMPLATES, OBJECT_COLORS,
    PARTICLE_COLOR, SKIN_COLOR, TABLE_COLOR, WORKSPACE_MAX, WORKSPACE_MIN,
};

use crate::error::{Error, Result};
use crate::scenecam::{
    project_keypoints, rasterize_action, ActionFrame, ActionMap, Extrinsics, Intrinsics,
    KeypointSet3D, PixelRect, RasterStyle, DEFAULT_NEAR,
};
use crate::temporal::{resample_indices, ResamplePlan};

const HEAD_EYE: [f64; 3] = [0.0, 0.02, 0.50];
const HEAD_TARGET: [f64; 3] = [0.0, 0.43, 0.0];

/// Head-mounted camera at normalized time `s` with per-episode bob phases.
pub fn head_camera(s: f64, phase: [f64; 3]) -> Extrinsics {
    let tau = 2.0 * std::f64::consts::PI;
    let eye = [
        HEAD_EYE[0] + 0.008 * (tau * 1.5 * s + phase[0]).sin(),
        HEAD_EYE[1] + 0.005 * (tau * s + phase[1]).sin(),
        HEAD_EYE[2] + 0.006 * (tau * 2.0 * s + phase[2]).sin(),
    ];
    let target = [
        HEAD_TARGET[0] + 0.012 * (tau * s + phase[1]).sin(),
        HEAD_TARGET[1] + 0.010 * (tau * 1.5 * s + phase[2]).sin(),
        HEAD_TARGET[2],
    ];
    Extrinsics::look_at(eye, target, [0.0, 0.0, 1.0])
}

/// One synthetic manipulation clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// RGB video `3 x L x H x W` in `[0, 1]`.
    pub frames: Array4<f32>,
    pub keypoints: Vec<KeypointSet3D>,
    pub cameras: Vec<Extrinsics>,
    pub intrinsics: Intrinsics,
    pub task: TaskSpec,
    pub seed: u64,
    pub text: String,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, i: usize) -> Array3<f32> {
        self.frames.index_axis(Axis(1), i).to_owned()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.len();
        if self.keypoints.len() != l || self.cameras.len() != l {
            return Err(Error::InvalidArgument(format!(
                "episode streams disagree: {} frames, {} poses, {} cameras",
                l,
                self.keypoints.len(),
                self.cameras.len()
            )));
        }
        let s = self.frames.shape();
        if s[0] != 3 || s[2] != self.intrinsics.height || s[3] != self.intrinsics.width {
            return Err(Error::shape(
                "episode frames",
                format!("3xLx{}x{}", self.intrinsics.height, self.intrinsics.width),
                format!("{s:?}"),
            ));
        }
        Ok(())
    }

    /// Applies one resampling plan to frames, poses and cameras together.
    pub fn resample_with(&self, plan: &ResamplePlan) -> Result<Episode> {
        if plan.indices.iter().any(|&i| i >= self.len()) {
            return Err(Error::InvalidArgument(
                "resample plan exceeds episode length".into(),
            ));
        }
        Ok(Episode {
            frames: self.frames.select(Axis(1), &plan.indices),
            keypoints: plan.apply(&self.keypoints)?,
            cameras: plan.apply(&self.cameras)?,
            intrinsics: self.intrinsics,
            task: self.task.clone(),
            seed: self.seed,
            text: self.text.clone(),
        })
    }

    pub fn resample(&self, n_target: usize) -> Result<Episode> {
        self.resample_with(&resample_indices(self.len(), n_target)?)
    }

    pub fn action_frames(&self) -> Result<Vec<ActionFrame>> {
        self.keypoints
            .iter()
            .zip(&self.cameras)
            .map(|(k, c)| project_keypoints(c, &self.intrinsics, k, DEFAULT_NEAR))
            .collect()
    }

    pub fn action_map(&self, style: &RasterStyle) -> Result<ActionMap> {
        rasterize_action(&self.action_frames()?, &self.intrinsics, style)
    }

    /// Pixel region covering the receiving container (and its fill) over
    /// the whole clip; `None` for tasks without a container.
    pub fn pour_region(&self) -> Option<PixelRect> {
        if self.task.kind != TaskKind::Pour {
            return None;
        }
        let cup = &self.task.objects[self.task.target.object?];
        let state = ObjectState {
            shape: cup.shape,
            color: cup.color,
            center: cup.position,
            orientation: crate::scenecam::Quat::IDENTITY,
            size: cup.size,
        };
        let k = &self.intrinsics;
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        let cells = POUR_PARTICLES as i64;
        for cam in &self.cameras {
            for v in render::object_vertices(&state) {
                let c = cam.world_to_camera(v);
                let [u, vv] = k.project(c);
                x0 = x0.min(u.floor() as i64);
                x1 = x1.max(u.ceil() as i64);
                y0 = y0.min(vv.floor() as i64);
                y1 = y1.max(vv.ceil() as i64);
            }
            if let Some((ax, ay, w)) = fill_cells_layout(&state, cam, k) {
                x0 = x0.min(ax - w / 2);
                x1 = x1.max(ax - w / 2 + w - 1);
                y0 = y0.min(ay - cells / w);
                y1 = y1.max(ay);
            }
        }
        let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
        Some(PixelRect {
            x0: clamp(x0 - 1, k.width),
            y0: clamp(y0 - 1, k.height),
            x1: clamp(x1 + 2, k.width),
            y1: clamp(y1 + 2, k.height),
        })
    }
}

/// Scene states and cameras for every frame of an episode.
pub fn simulate(
    seed: u64,
    task: &TaskSpec,
    length: usize,
) -> Result<(Script, Vec<(SceneState, Extrinsics)>)> {
    if length < 2 {
        return Err(Error::InvalidArgument(format!(
            "episode length must be >= 2, got {length}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let script = Script::new(task, &mut rng)?;
    let tau = 2.0 * std::f64::consts::PI;
    let phase = [
        rng.random_range(0.0..tau),
        rng.random_range(0.0..tau),
        rng.random_range(0.0..tau),
    ];
    let states = (0..length)
        .map(|k| {
            let s = k as f64 / (length - 1) as f64;
            (script.state(s), head_camera(s, phase))
        })
        .collect();
    Ok((script, states))
}

/// Generates a fully deterministic episode.
pub fn generate_episode(
    seed: u64,
    task: &TaskSpec,
    length: usize,
    resolution: (usize, usize),
) -> Result<Episode> {
    let (height, width) = resolution;
    if height < 32 || width < 32 {
        return Err(Error::InvalidArgument(format!(
            "resolution must be at least 32x32, got {height}x{width}"
        )));
    }
    let intrinsics = Intrinsics::standard(width, height);
    let (_, states) = simulate(seed, task, length)?;
    let mut frames = Array4::<f32>::zeros((3, length, height, width));
    let mut keypoints = Vec::with_capacity(length);
    let mut cameras = Vec::with_capacity(length);
    for (i, (state, cam)) in states.into_iter().enumerate() {
        frames
            .index_axis_mut(Axis(1), i)
            .assign(&render_frame(&state, &cam, &intrinsics));
        keypoints.push(state.keypoints);
        cameras.push(cam);
    }
    Ok(Episode {
        frames,
        keypoints,
        cameras,
        intrinsics,
        task: task.clone(),
        seed,
        text: task.text(),
    })
}
