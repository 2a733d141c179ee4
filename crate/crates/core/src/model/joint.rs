//! Joint latent bookkeeping: where each stream lives, noise masks, and the
//! token view used by the transformer.

use std::ops::Range;

use ndarray::{s, Array2, Array3, Array4, ArrayView4, ArrayViewMut4};

use super::config::{ModelConfig, Variant};
use super::real::Real;
use crate::error::{Error, Result};

/// Stream tag of a joint frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Image = 0,
    Video = 1,
    Action = 2,
}

/// Channel and frame ranges of one stream inside the joint latent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub channels: Range<usize>,
    pub frames: Range<usize>,
}

impl Region {
    pub fn view<'a, T>(&self, x: &'a Array4<T>) -> ArrayView4<'a, T> {
        x.slice(s![self.channels.clone(), self.frames.clone(), .., ..])
    }

    pub fn view_mut<'a, T>(&self, x: &'a mut Array4<T>) -> ArrayViewMut4<'a, T> {
        x.slice_mut(s![self.channels.clone(), self.frames.clone(), .., ..])
    }
}

/// Layout of `[x_img, x_vid + z, a]` (or its channel-stacked variant).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointLayout {
    pub variant: Variant,
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl JointLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let g = cfg.geometry;
        JointLayout {
            variant: cfg.variant(),
            channels: g.channels,
            frames: g.frames,
            height: g.height,
            width: g.width,
        }
    }

    fn stacked(&self) -> bool {
        self.variant == Variant::ChannelConcat
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        if self.stacked() {
            (2 * self.channels, self.frames + 1, self.height, self.width)
        } else {
            (self.channels, 2 * self.frames + 1, self.height, self.width)
        }
    }

    pub fn image(&self) -> Region {
        Region {
            channels: 0..self.channels,
            frames: 0..1,
        }
    }

    pub fn video(&self) -> Region {
        Region {
            channels: 0..self.channels,
            frames: 1..self.frames + 1,
        }
    }

    pub fn action(&self) -> Region {
        if self.stacked() {
            Region {
                channels: self.channels..2 * self.channels,
                frames: 1..self.frames + 1,
            }
        } else {
            Region {
                channels: 0..self.channels,
                frames: self.frames + 1..2 * self.frames + 1,
            }
        }
    }

    /// Stream tag and within-stream index of every joint frame.
    pub fn frame_tags(&self) -> Vec<(Stream, usize)> {
        let (_, f, _, _) = self.shape();
        (0..f)
            .map(|i| match i {
                0 => (Stream::Image, 0),
                i if i <= self.frames => (Stream::Video, i - 1),
                i => (Stream::Action, i - self.frames - 1),
            })
            .collect()
    }

    /// Whether the action slot is noised (and in the loss) for this sample.
    pub fn action_noised(&self, action_present: bool) -> bool {
        action_present && self.variant.joint_action()
    }

    /// 1 on entries that are noised and supervised, 0 elsewhere.
    pub fn noise_mask<T: Real>(&self, action_present: bool) -> Array4<T> {
        let mut m = Array4::zeros(self.shape());
        self.video().view_mut(&mut m).fill(T::one());
        if self.action_noised(action_present) {
            self.action().view_mut(&mut m).fill(T::one());
        }
        m
    }

    fn check(&self, what: &str, x: &Array4<impl Clone>, c: usize, f: usize) -> Result<()> {
        let want = [c, f, self.height, self.width];
        if x.shape() != want {
            return Err(Error::shape(
                what,
                format!("{want:?}"),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    /// Builds the joint latent. `z` is added to the video frames; a missing
    /// action is replaced by `null_action` broadcast over frames.
    pub fn assemble<T: Real>(
        &self,
        image: &Array4<T>,
        video: &Array4<T>,
        z: Option<&Array4<T>>,
        action: Option<&Array4<T>>,
        null_action: &Array3<T>,
    ) -> Result<Array4<T>> {
        self.check("image stream", image, self.channels, 1)?;
        self.check("video stream", video, self.channels, self.frames)?;
        if let Some(z) = z {
            self.check("camera features", z, self.channels, self.frames)?;
        }
        if let Some(a) = action {
            self.check("action stream", a, self.channels, self.frames)?;
        }
        if null_action.shape() != [self.channels, self.height, self.width] {
            return Err(Error::shape(
                "null action",
                format!("{:?}", [self.channels, self.height, self.width]),
                format!("{:?}", null_action.shape()),
            ));
        }
        let mut j = Array4::zeros(self.shape());
        self.image().view_mut(&mut j).assign(image);
        let mut v = self.video().view_mut(&mut j);
        v.assign(video);
        if let Some(z) = z {
            v += z;
        }
        let mut a = self.action().view_mut(&mut j);
        match action {
            Some(x) => a.assign(x),
            None => {
                for f in 0..self.frames {
                    a.slice_mut(s![.., f, .., ..]).assign(null_action);
                }
            }
        }
        Ok(j)
    }

    /// Splits a joint latent into (image, video, action) streams.
    pub fn split<T: Real>(&self, joint: &Array4<T>) -> Result<(Array4<T>, Array4<T>, Array4<T>)> {
        let (c, f, _, _) = self.shape();
        self.check("joint latent", joint, c, f)?;
        Ok((
            self.image().view(joint).to_owned(),
            self.video().view(joint).to_owned(),
            self.action().view(joint).to_owned(),
        ))
    }
}

/// `x0 + mask * t * (x1 - x0)`: the straight path on masked entries, `x0`
/// elsewhere.
pub fn flow_interpolate<T: Real>(
    x0: &Array4<T>,
    x1: &Array4<T>,
    mask: &Array4<T>,
    t: T,
) -> Result<Array4<T>> {
    if x0.shape() != x1.shape() || x0.shape() != mask.shape() {
        return Err(Error::shape(
            "flow interpolation",
            format!("{:?}", x0.shape()),
            format!("{:?} / {:?}", x1.shape(), mask.shape()),
        ));
    }
    let mut xt = x0.clone();
    ndarray::Zip::from(&mut xt)
        .and(x1)
        .and(mask)
        .for_each(|a, &b, &m| *a = *a + m * t * (b - *a));
    Ok(xt)
}

/// `C x F x H x W` latent to `(F * Hb * Wb) x (C * p * p)` tokens.
pub fn tokenize<T: Real>(x: &ArrayView4<T>, p: usize) -> Array2<T> {
    let (c, f, h, w) = x.dim();
    let (hb, wb) = (h / p, w / p);
    let mut t = Array2::zeros((f * hb * wb, c * p * p));
    for fi in 0..f {
        for by in 0..hb {
            for bx in 0..wb {
                let mut row = t.row_mut((fi * hb + by) * wb + bx);
                for ci in 0..c {
                    for dy in 0..p {
                        for dx in 0..p {
                            row[(ci * p + dy) * p + dx] = x[[ci, fi, by * p + dy, bx * p + dx]];
                        }
                    }
                }
            }
        }
    }
    t
}

/// Inverse of [`tokenize`].
pub fn untokenize<T: Real>(
    t: &Array2<T>,
    shape: (usize, usize, usize, usize),
    p: usize,
) -> Array4<T> {
    let (c, f, h, w) = shape;
    let (hb, wb) = (h / p, w / p);
    let mut x = Array4::zeros(shape);
    for fi in 0..f {
        for by in 0..hb {
            for bx in 0..wb {
                let row = t.row((fi * hb + by) * wb + bx);
                for ci in 0..c {
                    for dy in 0..p {
                        for dx in 0..p {
                            x[[ci, fi, by * p + dy, bx * p + dx]] = row[(ci * p + dy) * p + dx];
                        }
                    }
                }
            }
        }
    }
    x
}
