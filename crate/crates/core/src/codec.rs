//! Lossless space-to-depth latent codec.
//!
//! A `3 x L x H x W` video becomes a `C x L' x H' x W'` latent with
//! `C = 3 * p * p * tp`, `L' = L / tp`, `H' = H / p`, `W' = W / p`.
//! Latent channel `((c * tp + dt) * p + dy) * p + dx` holds pixel
//! `(c, l' * tp + dt, h' * p + dy, w' * p + dx)`.

use ndarray::{Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub patch: usize,
    pub temporal_patch: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            patch: 4,
            temporal_patch: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentRole {
    Image,
    Video,
    Action,
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub data: Array4<f32>,
    pub role: LatentRole,
}

impl LatentTensor {
    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.temporal_patch == 0 {
            return Err(Error::Config("codec patch sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn latent_channels(&self) -> usize {
        3 * self.patch * self.patch * self.temporal_patch
    }

    /// `(L', H', W')` for a pixel tensor of `(L, H, W)`.
    pub fn latent_dims(
        &self,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Result<(usize, usize, usize)> {
        let (p, tp) = (self.patch, self.temporal_patch);
        if p == 0 || tp == 0 || height % p != 0 || width % p != 0 || frames % tp != 0 || frames == 0
        {
            return Err(Error::InvalidArgument(format!(
                "cannot encode {frames}x{height}x{width}: frames must be a nonzero multiple of {tp}, \
                 height and width multiples of {p}"
            )));
        }
        Ok((frames / tp, height / p, width / p))
    }

    pub fn encode(&self, video: &Array4<f32>, role: LatentRole) -> Result<LatentTensor> {
        let s = video.shape();
        if s[0] != 3 {
            return Err(Error::shape("codec input channels", 3, s[0]));
        }
        let (lt, ht, wt) = self.latent_dims(s[1], s[2], s[3])?;
        let (p, tp) = (self.patch, self.temporal_patch);
        let mut out = Array4::<f32>::zeros((self.latent_channels(), lt, ht, wt));
        for c in 0..3 {
            for dt in 0..tp {
                for dy in 0..p {
                    for dx in 0..p {
                        let ch = ((c * tp + dt) * p + dy) * p + dx;
                        for l in 0..lt {
                            for h in 0..ht {
                                for w in 0..wt {
                                    out[[ch, l, h, w]] =
                                        video[[c, l * tp + dt, h * p + dy, w * p + dx]];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(LatentTensor { data: out, role })
    }

    pub fn encode_image(&self, image: &Array3<f32>) -> Result<LatentTensor> {
        if self.temporal_patch != 1 {
            return Err(Error::Config(
                "image encoding requires temporal_patch = 1".into(),
            ));
        }
        let video = image.clone().insert_axis(Axis(1));
        self.encode(&video, LatentRole::Image)
    }

    pub fn decode(&self, latent: &LatentTensor) -> Result<Array4<f32>> {
        let s = latent.data.shape();
        if s[0] != self.latent_channels() {
            return Err(Error::shape(
                "latent channels",
                self.latent_channels(),
                s[0],
            ));
        }
        let (p, tp) = (self.patch, self.temporal_patch);
        let (lt, ht, wt) = (s[1], s[2], s[3]);
        let mut out = Array4::<f32>::zeros((3, lt * tp, ht * p, wt * p));
        for c in 0..3 {
            for dt in 0..tp {
                for dy in 0..p {
                    for dx in 0..p {
                        let ch = ((c * tp + dt) * p + dy) * p + dx;
                        for l in 0..lt {
                            for h in 0..ht {
                                for w in 0..wt {
                                    out[[c, l * tp + dt, h * p + dy, w * p + dx]] =
                                        latent.data[[ch, l, h, w]];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use proptest::prelude::*;

    fn ramp(shape: (usize, usize, usize, usize)) -> Array4<f32> {
        Array::from_shape_fn(shape, |(c, l, h, w)| {
            (c * 1000 + l * 100 + h * 10 + w) as f32
        })
    }

    #[test]
    fn shape_arithmetic() {
        let codec = CodecConfig::default();
        let x = codec
            .encode(&Array4::zeros((3, 1, 8, 8)), LatentRole::Video)
            .unwrap();
        assert_eq!(x.data.shape(), &[48, 1, 2, 2]);
        assert!(x.data.iter().all(|v| *v == 0.0));
        assert!(codec.decode(&x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn indivisible_rejected() {
        let codec = CodecConfig::default();
        let err = codec
            .encode(&Array4::zeros((3, 1, 9, 8)), LatentRole::Video)
            .unwrap_err();
        assert!(err.to_string().contains("multiples of 4"));
        let bad = LatentTensor {
            data: Array4::zeros((47, 1, 2, 2)),
            role: LatentRole::Video,
        };
        assert!(codec.decode(&bad).is_err());
    }

    #[test]
    fn single_latent_entry_maps_to_single_pixel() {
        let codec = CodecConfig {
            patch: 2,
            temporal_patch: 2,
        };
        let mut data = Array4::<f32>::zeros((24, 2, 3, 3));
        // c = 1, dt = 1, dy = 0, dx = 1  ->  ch = ((1*2+1)*2+0)*2+1 = 13
        data[[13, 1, 2, 0]] = 7.0;
        let v = codec
            .decode(&LatentTensor {
                data,
                role: LatentRole::Video,
            })
            .unwrap();
        let nonzero: Vec<_> = v
            .indexed_iter()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero, vec![(1, 3, 4, 1)]);
    }

    #[test]
    fn image_matches_one_frame_video() {
        let codec = CodecConfig::default();
        let video = ramp((3, 1, 8, 12));
        let image = video.index_axis(Axis(1), 0).to_owned();
        assert_eq!(
            codec.encode_image(&image).unwrap().data,
            codec.encode(&video, LatentRole::Video).unwrap().data
        );
    }

    proptest! {
        #[test]
        fn round_trip_and_linearity(
            p in 1usize..=4, tp in 1usize..=2, l in 1usize..=3, h in 1usize..=3, w in 1usize..=3,
            seed in any::<u64>(), a in -3.0f32..3.0, b in -3.0f32..3.0,
        ) {
            use rand::{Rng, SeedableRng};
            let codec = CodecConfig { patch: p, temporal_patch: tp };
            let shape = (3, l * tp, h * p, w * p);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v1 = Array4::from_shape_simple_fn(shape, || rng.random::<f32>());
            let v2 = Array4::from_shape_simple_fn(shape, || rng.random::<f32>());
            let x1 = codec.encode(&v1, LatentRole::Video).unwrap();
            prop_assert_eq!(&codec.decode(&x1).unwrap(), &v1);
            let again = codec.encode(&codec.decode(&x1).unwrap(), LatentRole::Video).unwrap();
            prop_assert_eq!(&again.data, &x1.data);
            let x2 = codec.encode(&v2, LatentRole::Video).unwrap();
            let mix = codec.encode(&(&v1 * a + &v2 * b), LatentRole::Video).unwrap();
            prop_assert_eq!(mix.data, &x1.data * a + &x2.data * b);
        }
    }
}
