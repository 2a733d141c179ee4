//! Dense building blocks with hand-written backward passes. Matrices are
//! row-major `tokens x features`; weights are stored `in x out`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};

use super::real::Real;

pub const LN_EPS: f64 = 1e-6;

pub fn linear<T: Real>(x: &ArrayView2<T>, w: &ArrayView2<T>, b: &ArrayView1<T>) -> Array2<T> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates weight and bias gradients; returns the input gradient.
pub fn linear_backward<T: Real>(
    x: &ArrayView2<T>,
    w: &ArrayView2<T>,
    dy: &ArrayView2<T>,
    (mut dw, mut db): (ArrayViewMut2<T>, ArrayViewMut1<T>),
) -> Array2<T> {
    ndarray::linalg::general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut dw);
    db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

/// Same as [`linear_backward`] without the input gradient.
pub fn linear_backward_params<T: Real>(
    x: &ArrayView2<T>,
    dy: &ArrayView2<T>,
    (mut dw, mut db): (ArrayViewMut2<T>, ArrayViewMut1<T>),
) {
    ndarray::linalg::general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut dw);
    db += &dy.sum_axis(Axis(0));
}

pub fn silu<T: Real>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

pub fn silu_grad<T: Real>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s * (T::one() + x * (T::one() - s))
}

fn gelu_k<T: Real>() -> (T, T) {
    (T::c((2.0 / std::f64::consts::PI).sqrt()), T::c(0.044715))
}

/// Tanh approximation of GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let (a, b) = gelu_k::<T>();
    T::c(0.5) * x * (T::one() + (a * (x + b * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let (a, b) = gelu_k::<T>();
    let u = a * (x + b * x * x * x);
    let th = u.tanh();
    let du = a * (T::one() + T::c(3.0) * b * x * x);
    T::c(0.5) * (T::one() + th) + T::c(0.5) * x * (T::one() - th * th) * du
}

/// Row-wise layer norm without affine parameters; returns `(y, rstd)`.
pub fn layer_norm<T: Real>(x: &ArrayView2<T>) -> (Array2<T>, Array1<T>) {
    let d = T::c(x.ncols() as f64);
    let eps = T::c(LN_EPS);
    let mut y = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in y.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| *v * *v).sum::<T>() / d;
        *r = T::one() / (var + eps).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    (y, rstd)
}

pub fn layer_norm_backward<T: Real>(
    y: &ArrayView2<T>,
    rstd: &ArrayView1<T>,
    dy: &ArrayView2<T>,
) -> Array2<T> {
    let d = T::c(y.ncols() as f64);
    let mut dx = Array2::zeros(y.raw_dim());
    for (((mut out, yr), dyr), r) in dx
        .rows_mut()
        .into_iter()
        .zip(y.rows())
        .zip(dy.rows())
        .zip(rstd.iter())
    {
        let mean_dy = dyr.sum() / d;
        let mean_dyy = dyr.iter().zip(yr.iter()).map(|(a, b)| *a * *b).sum::<T>() / d;
        Zip::from(&mut out)
            .and(&yr)
            .and(&dyr)
            .for_each(|o, &yv, &dv| *o = *r * (dv - mean_dy - yv * mean_dyy));
    }
    dx
}

/// `x * (1 + scale) + shift`, broadcast over rows.
pub fn modulate<T: Real>(
    x: &ArrayView2<T>,
    shift: &ArrayView1<T>,
    scale: &ArrayView1<T>,
) -> Array2<T> {
    let one_plus = scale.mapv(|v| T::one() + v);
    let mut y = x * &one_plus;
    y += shift;
    y
}

/// Returns `dx` and accumulates into `dshift`, `dscale`.
pub fn modulate_backward<T: Real>(
    x: &ArrayView2<T>,
    scale: &ArrayView1<T>,
    dy: &ArrayView2<T>,
    dshift: &mut ArrayViewMut1<T>,
    dscale: &mut ArrayViewMut1<T>,
) -> Array2<T> {
    *dshift += &dy.sum_axis(Axis(0));
    *dscale += &(dy * x).sum_axis(Axis(0));
    let one_plus = scale.mapv(|v| T::one() + v);
    dy * &one_plus
}

pub fn softmax_rows<T: Real>(s: &mut Array2<T>) {
    for mut row in s.rows_mut() {
        let m = row.fold(T::neg_infinity(), |a, b| a.max(*b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

/// Multi-head self-attention core on a packed `N x 3D` QKV matrix.
/// Returns the concatenated head outputs `N x D` and per-head probabilities.
pub fn attention<T: Real>(qkv: &ArrayView2<T>, heads: usize) -> (Array2<T>, Vec<Array2<T>>) {
    let d = qkv.ncols() / 3;
    let dh = d / heads;
    let scale = T::one() / T::c(dh as f64).sqrt();
    let mut out = Array2::zeros((qkv.nrows(), d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let mut sc = q.dot(&k.t());
        sc *= scale;
        softmax_rows(&mut sc);
        out.slice_mut(s![.., h * dh..(h + 1) * dh])
            .assign(&sc.dot(&v));
        probs.push(sc);
    }
    (out, probs)
}

pub fn attention_backward<T: Real>(
    qkv: &ArrayView2<T>,
    probs: &[Array2<T>],
    dout: &ArrayView2<T>,
) -> Array2<T> {
    let heads = probs.len();
    let d = qkv.ncols() / 3;
    let dh = d / heads;
    let scale = T::one() / T::c(dh as f64).sqrt();
    let mut dqkv = Array2::zeros(qkv.raw_dim());
    for (h, p) in probs.iter().enumerate() {
        let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let dout_h = dout.slice(s![.., h * dh..(h + 1) * dh]);
        let dv = p.t().dot(&dout_h);
        let mut ds = dout_h.dot(&v.t());
        for (mut dsr, pr) in ds.rows_mut().into_iter().zip(p.rows()) {
            let dot = dsr.iter().zip(pr.iter()).map(|(a, b)| *a * *b).sum::<T>();
            Zip::from(&mut dsr)
                .and(&pr)
                .for_each(|g, &pv| *g = pv * (*g - dot) * scale);
        }
        dqkv.slice_mut(s![.., h * dh..(h + 1) * dh])
            .assign(&ds.dot(&k));
        dqkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh])
            .assign(&ds.t().dot(&q));
        dqkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh])
            .assign(&dv);
    }
    dqkv
}

/// 3x3 zero-padded im2col on pixel-major maps: `x` is `(F*H*W) x C`,
/// result is `(F*H*W) x (C*9)` with column `c*9 + ky*3 + kx`.
pub fn im2col<T: Real>(x: &ArrayView2<T>, frames: usize, h: usize, w: usize) -> Array2<T> {
    let c = x.ncols();
    let mut cols = Array2::zeros((x.nrows(), c * 9));
    for f in 0..frames {
        for y in 0..h {
            for xx in 0..w {
                let row = (f * h + y) * w + xx;
                let mut dst = cols.row_mut(row);
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = x.row((f * h + sy as usize) * w + sx as usize);
                        for ch in 0..c {
                            dst[ch * 9 + ky * 3 + kx] = src[ch];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub fn col2im<T: Real>(cols: &ArrayView2<T>, frames: usize, h: usize, w: usize) -> Array2<T> {
    let c = cols.ncols() / 9;
    let mut x = Array2::zeros((cols.nrows(), c));
    for f in 0..frames {
        for y in 0..h {
            for xx in 0..w {
                let src = cols.row((f * h + y) * w + xx);
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let mut dst = x.row_mut((f * h + sy as usize) * w + sx as usize);
                        for ch in 0..c {
                            dst[ch] += src[ch * 9 + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Sinusoidal embedding of a scalar: `[cos(a * f_k), sin(a * f_k)]`.
pub fn sinusoidal<T: Real>(a: f64, dim: usize) -> Array1<T> {
    let half = dim / 2;
    let mut e = Array1::zeros(dim);
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        e[k] = T::c((a * freq).cos());
        e[half + k] = T::c((a * freq).sin());
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};

    fn rand_mat(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    fn num_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let mut g = Array2::zeros(x.raw_dim());
        for i in 0..x.len() {
            let mut a = x.clone();
            let mut b = x.clone();
            a.as_slice_mut().unwrap()[i] += 1e-5;
            b.as_slice_mut().unwrap()[i] -= 1e-5;
            g.as_slice_mut().unwrap()[i] = (f(&a) - f(&b)) / 2e-5;
        }
        g
    }

    fn close(a: &Array2<f64>, b: &Array2<f64>) {
        let err = (a - b).mapv(f64::abs).fold(0.0f64, |m, v| m.max(*v));
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn layer_norm_gradient() {
        let x = rand_mat(3, 5, 1);
        let w = rand_mat(3, 5, 2);
        let f = |x: &Array2<f64>| (layer_norm(&x.view()).0 * &w).sum();
        let (y, r) = layer_norm(&x.view());
        close(
            &layer_norm_backward(&y.view(), &r.view(), &w.view()),
            &num_grad(f, &x),
        );
    }

    #[test]
    fn attention_gradient() {
        let x = rand_mat(4, 12, 3);
        let w = rand_mat(4, 4, 4);
        let f = |x: &Array2<f64>| (attention(&x.view(), 2).0 * &w).sum();
        let (_, p) = attention(&x.view(), 2);
        close(
            &attention_backward(&x.view(), &p, &w.view()),
            &num_grad(f, &x),
        );
    }

    #[test]
    fn col2im_is_adjoint() {
        let x = rand_mat(2 * 3 * 4, 2, 5);
        let c = rand_mat(2 * 3 * 4, 18, 6);
        let lhs = (im2col(&x.view(), 2, 3, 4) * &c).sum();
        let rhs = (col2im(&c.view(), 2, 3, 4) * &x).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn activation_derivatives() {
        for x in [-2.0, -0.3, 0.0, 0.7, 3.0f64] {
            let n = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((gelu_grad(x) - n).abs() < 1e-8);
            let n = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((silu_grad(x) - n).abs() < 1e-8);
        }
    }
}
