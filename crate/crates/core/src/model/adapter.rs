//! Camera adapter: a 3x3 convolution from the 6-channel ray map to the latent
//! channels followed by one residual block, applied per frame.

use ndarray::{Array2, Array4, Axis};

use super::layers::{
    col2im, im2col, linear, linear_backward, linear_backward_params, silu, silu_grad,
};
use super::params::{Layout, Slot};
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdapterSlots {
    pub conv_in_w: Slot,
    pub conv_in_b: Slot,
    pub res1_w: Slot,
    pub res1_b: Slot,
    pub res2_w: Slot,
    pub res2_b: Slot,
}

impl AdapterSlots {
    pub fn build(layout: &mut Layout, channels: usize) -> Self {
        AdapterSlots {
            conv_in_w: layout.add("adapter.conv_in.w", &[6 * 9, channels]),
            conv_in_b: layout.add("adapter.conv_in.b", &[channels]),
            res1_w: layout.add("adapter.res1.w", &[channels * 9, channels]),
            res1_b: layout.add("adapter.res1.b", &[channels]),
            res2_w: layout.add("adapter.res2.w", &[channels * 9, channels]),
            res2_b: layout.add("adapter.res2.b", &[channels]),
        }
    }
}

pub struct AdapterCache<T> {
    frames: usize,
    h: usize,
    w: usize,
    cols_in: Array2<T>,
    cols1: Array2<T>,
    pre_act: Array2<T>,
    cols2: Array2<T>,
}

/// Ray maps `F x 6 x H x W` to pixel-major `(F*H*W) x 6`.
fn to_pixel_major<T: Real>(r: &Array4<T>) -> Array2<T> {
    let (f, c, h, w) = r.dim();
    let mut m = Array2::zeros((f * h * w, c));
    for fi in 0..f {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    m[[(fi * h + y) * w + x, ci]] = r[[fi, ci, y, x]];
                }
            }
        }
    }
    m
}

/// Camera features `C x F x H x W` from ray maps `F x 6 x H x W`.
pub fn forward<T: Real>(
    p: &[T],
    s: &AdapterSlots,
    raymaps: &Array4<T>,
) -> Result<(Array4<T>, AdapterCache<T>)> {
    let (f, c6, h, w) = raymaps.dim();
    if c6 != 6 {
        return Err(Error::shape("ray map channels", 6, c6));
    }
    let x = to_pixel_major(raymaps);
    let cols_in = im2col(&x.view(), f, h, w);
    let h1 = linear(&cols_in.view(), &s.conv_in_w.mat(p), &s.conv_in_b.vec(p));
    let cols1 = im2col(&h1.view(), f, h, w);
    let pre_act = linear(&cols1.view(), &s.res1_w.mat(p), &s.res1_b.vec(p));
    let act = pre_act.mapv(silu);
    let cols2 = im2col(&act.view(), f, h, w);
    let out = h1 + linear(&cols2.view(), &s.res2_w.mat(p), &s.res2_b.vec(p));
    let c = out.ncols();
    let mut z = Array4::zeros((c, f, h, w));
    for (row, px) in out.axis_iter(Axis(0)).enumerate() {
        let (fi, y, x) = (row / (h * w), (row / w) % h, row % w);
        for ci in 0..c {
            z[[ci, fi, y, x]] = px[ci];
        }
    }
    Ok((
        z,
        AdapterCache {
            frames: f,
            h,
            w,
            cols_in,
            cols1,
            pre_act,
            cols2,
        },
    ))
}

/// Accumulates parameter gradients from `dz` (`C x F x H x W`).
pub fn backward<T: Real>(
    p: &[T],
    s: &AdapterSlots,
    cache: &AdapterCache<T>,
    dz: &Array4<T>,
    g: &mut [T],
) {
    let (f, h, w) = (cache.frames, cache.h, cache.w);
    let c = dz.shape()[0];
    let mut dout = Array2::zeros((f * h * w, c));
    for fi in 0..f {
        for y in 0..h {
            for x in 0..w {
                let mut row = dout.row_mut((fi * h + y) * w + x);
                for ci in 0..c {
                    row[ci] = dz[[ci, fi, y, x]];
                }
            }
        }
    }
    let dcols2 = linear_backward(
        &cache.cols2.view(),
        &s.res2_w.mat(p),
        &dout.view(),
        Slot::pair_mut(s.res2_w, s.res2_b, g),
    );
    let mut dpre = col2im(&dcols2.view(), f, h, w);
    ndarray::Zip::from(&mut dpre)
        .and(&cache.pre_act)
        .for_each(|d, &u| *d *= silu_grad(u));
    let dcols1 = linear_backward(
        &cache.cols1.view(),
        &s.res1_w.mat(p),
        &dpre.view(),
        Slot::pair_mut(s.res1_w, s.res1_b, g),
    );
    let dh1 = dout + col2im(&dcols1.view(), f, h, w);
    linear_backward_params(
        &cache.cols_in.view(),
        &dh1.view(),
        Slot::pair_mut(s.conv_in_w, s.conv_in_b, g),
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Vec<f64>, AdapterSlots, Array4<f64>) {
        let mut layout = Layout::default();
        let s = AdapterSlots::build(&mut layout, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = (0..layout.len)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let r = Array::from_shape_simple_fn((1, 6, 4, 4), || rng.random_range(-1.0..1.0));
        (p, s, r)
    }

    #[test]
    fn zero_input_zero_weights_give_zero_features() {
        let (p, s, r) = setup(0);
        let (z, _) = forward(&vec![0.0; p.len()], &s, &(r * 0.0)).unwrap();
        assert_eq!(z.dim(), (3, 1, 4, 4));
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let (p, s, _) = setup(0);
        assert!(matches!(
            forward(&p, &s, &Array4::zeros((1, 5, 4, 4))),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (mut p, s, r) = setup(1);
        let w = Array::from_shape_simple_fn((3, 1, 4, 4), {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            move || rng.random_range(-1.0..1.0)
        });
        let (_, cache) = forward(&p, &s, &r).unwrap();
        let mut g = vec![0.0; p.len()];
        backward(&p, &s, &cache, &w, &mut g);
        let loss = |p: &[f64]| (&forward(p, &s, &r).unwrap().0 * &w).sum();
        let h = 1e-3;
        let (mut num2, mut diff2) = (0.0, 0.0);
        for i in 0..p.len() {
            let o = p[i];
            p[i] = o + h;
            let lp = loss(&p);
            p[i] = o - h;
            let lm = loss(&p);
            p[i] = o;
            let n = (lp - lm) / (2.0 * h);
            num2 += n * n;
            diff2 += (n - g[i]).powi(2);
        }
        let rel = (diff2 / num2).sqrt();
        assert!(rel <= 1e-3, "relative error {rel}");
    }
}
