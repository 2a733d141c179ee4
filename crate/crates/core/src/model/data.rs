//! Turning episodes into model-space training and sampling inputs.

use std::path::Path;

use ndarray::{Array4, Axis};

use crate::codec::{CodecConfig, LatentRole};
use crate::error::{Error, Result};
use crate::scenecam::{plucker_raymap, RasterStyle};
use crate::synthenv::{read_episode, DatasetManifest, Episode};
use crate::temporal::resample_indices;

/// Pixel value `v` in `[0, 1]` maps to `2v - 1`.
pub fn to_model_space(x: &Array4<f32>) -> Array4<f32> {
    x.mapv(|v| 2.0 * v - 1.0)
}

/// Inverse of [`to_model_space`], clipped to `[0, 1]`.
pub fn from_model_space(x: &Array4<f32>) -> Array4<f32> {
    x.mapv(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

/// Encoded streams of one resampled episode, in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// `C x 1 x H' x W'`, the first frame.
    pub image: Array4<f32>,
    /// `C x L' x H' x W'`.
    pub video: Array4<f32>,
    /// Encoded action maps, `C x L' x H' x W'`.
    pub action: Array4<f32>,
    /// `L' x 6 x H' x W'`.
    pub raymaps: Array4<f32>,
    pub text: usize,
}

impl Prepared {
    pub fn frames(&self) -> usize {
        self.video.shape()[1]
    }
}

/// Resamples `ep` to `target_len` frames and encodes every stream.
/// Ray maps use the camera of the first pixel frame of each latent frame.
pub fn prepare_episode(
    ep: &Episode,
    target_len: usize,
    codec: &CodecConfig,
    style: &RasterStyle,
) -> Result<Prepared> {
    let ep = ep.resample_with(&resample_indices(ep.len(), target_len)?)?;
    let action_map = ep.action_map(style)?;
    let video = codec.encode(&ep.frames, LatentRole::Video)?;
    let action = codec.encode(&action_map.raster, LatentRole::Action)?;
    let image = codec.encode_image(&ep.frame(0))?;
    let (lt, ht, wt) = codec.latent_dims(target_len, ep.intrinsics.height, ep.intrinsics.width)?;
    let mut raymaps = Array4::zeros((lt, 6, ht, wt));
    for (l, mut r) in raymaps.axis_iter_mut(Axis(0)).enumerate() {
        let cam = &ep.cameras[l * codec.temporal_patch];
        r.assign(&plucker_raymap(cam, &ep.intrinsics, ht, wt)?.embedding);
    }
    Ok(Prepared {
        image: to_model_space(&image.data),
        video: to_model_space(&video.data),
        action: to_model_space(&action.data),
        raymaps,
        text: ep.task.kind.template_id(),
    })
}

/// Reads and prepares dataset episodes one at a time, so only the encoded
/// streams stay in memory.
pub fn prepare_dataset(
    root: &Path,
    manifest: &DatasetManifest,
    range: std::ops::Range<usize>,
    target_len: usize,
    codec: &CodecConfig,
    style: &RasterStyle,
) -> Result<Vec<Prepared>> {
    if range.end > manifest.episodes.len() {
        return Err(Error::InvalidArgument(format!(
            "episode range {range:?} exceeds dataset of {}",
            manifest.episodes.len()
        )));
    }
    manifest.episodes[range]
        .iter()
        .map(|e| prepare_episode(&read_episode(&root.join(&e.dir))?, target_len, codec, style))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthenv::{generate_episode, TaskKind, TaskSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_and_range() {
        let task = TaskSpec::sample(TaskKind::Push, &mut ChaCha8Rng::seed_from_u64(0));
        let ep = generate_episode(3, &task, 30, (32, 32)).unwrap();
        let p = prepare_episode(&ep, 8, &CodecConfig::default(), &RasterStyle::default()).unwrap();
        assert_eq!(p.image.dim(), (48, 1, 8, 8));
        assert_eq!(p.video.dim(), (48, 8, 8, 8));
        assert_eq!(p.action.dim(), (48, 8, 8, 8));
        assert_eq!(p.raymaps.dim(), (8, 6, 8, 8));
        assert_eq!(p.text, TaskKind::Push.template_id());
        assert!(p.video.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(
            p.image.index_axis(Axis(1), 0),
            p.video.index_axis(Axis(1), 0)
        );
        // action maps are black outside the skeleton
        assert!(p.action.iter().any(|v| *v == -1.0) && p.action.iter().any(|v| *v > -1.0));
    }

    #[test]
    fn model_space_round_trip() {
        let x = Array4::from_shape_fn((1, 2, 2, 2), |(_, a, b, c)| (a + b + c) as f32 / 3.0);
        let y = from_model_space(&to_model_space(&x));
        assert!(x.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}
