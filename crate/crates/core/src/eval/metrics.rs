use ndarray::{Array2, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::detect::{color_match, detect_hand, MarkerPalette};
use crate::error::{Error, Result};
use crate::scenecam::PixelRect;
use crate::synthenv::PARTICLE_COLOR;

/// Reported PSNR for identical frames.
pub const PSNR_CAP: f64 = 99.0;

/// PCK pixel threshold at width `w`, scaled from 20 px at 256.
pub fn pck_threshold(width: usize) -> f64 {
    (20.0 * width as f64 / 256.0).round()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckReport {
    /// Percentage in `[0, 100]`.
    pub pck: f64,
    pub threshold: f64,
    pub excluded_ratio: f64,
    /// Keypoints within the threshold and keypoints scored, over all frames.
    pub hits: usize,
    pub keypoints: usize,
    /// Per-frame percentage; `None` for excluded frames.
    pub per_frame: Vec<Option<f64>>,
}

fn check_same(gen: &Array4<f32>, gt: &Array4<f32>) -> Result<()> {
    if gen.shape() != gt.shape() {
        return Err(Error::shape(
            "generated vs ground-truth video",
            format!("{:?}", gt.shape()),
            format!("{:?}", gen.shape()),
        ));
    }
    if gen.shape()[0] != 3 {
        return Err(Error::shape("video channels", 3, gen.shape()[0]));
    }
    Ok(())
}

/// Percentage of keypoints within `threshold` px, pooled over frames where
/// both videos have a detected hand. Per frame the keypoint pool is every
/// marker found in either video; a keypoint counts when found in both and
/// within the threshold.
pub fn pck(gen: &Array4<f32>, gt: &Array4<f32>, threshold: f64) -> Result<PckReport> {
    check_same(gen, gt)?;
    let palette = MarkerPalette::default();
    let l = gen.shape()[1];
    let (mut hits, mut total, mut excluded) = (0usize, 0usize, 0usize);
    let mut per_frame = Vec::with_capacity(l);
    for i in 0..l {
        let dg = detect_hand(&gen.index_axis(Axis(1), i).to_owned(), &palette);
        let dt = detect_hand(&gt.index_axis(Axis(1), i).to_owned(), &palette);
        let (Some(dg), Some(dt)) = (dg, dt) else {
            excluded += 1;
            per_frame.push(None);
            continue;
        };
        let mut pool = 0;
        let mut ok = 0;
        for id in &palette.ids {
            let a = dg.iter().find(|d| &d.0 == id).map(|d| d.1);
            let b = dt.iter().find(|d| &d.0 == id).map(|d| d.1);
            match (a, b) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    pool += 1;
                    if ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() <= threshold {
                        ok += 1;
                    }
                }
                _ => pool += 1,
            }
        }
        hits += ok;
        total += pool;
        per_frame.push(Some(100.0 * ok as f64 / pool as f64));
    }
    Ok(PckReport {
        pck: if total == 0 {
            0.0
        } else {
            100.0 * hits as f64 / total as f64
        },
        threshold,
        excluded_ratio: if l == 0 {
            0.0
        } else {
            excluded as f64 / l as f64
        },
        hits,
        keypoints: total,
        per_frame,
    })
}

/// PSNR of one frame pair with peak 1.0, capped at [`PSNR_CAP`].
pub fn psnr(a: &[f32], b: &[f32]) -> f64 {
    let mse = a
        .iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / a.len().max(1) as f64;
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

fn gaussian_window() -> [f64; 11] {
    let mut w = [0.0; 11];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode Gaussian filter.
fn blur(img: &Array2<f64>, g: &[f64; 11]) -> Array2<f64> {
    let (h, w) = img.dim();
    let mut rows = Array2::<f64>::zeros((h, w - 10));
    for y in 0..h {
        for x in 0..w - 10 {
            rows[[y, x]] = (0..11).map(|k| g[k] * img[[y, x + k]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((h - 10, w - 10));
    for y in 0..h - 10 {
        for x in 0..w - 10 {
            out[[y, x]] = (0..11).map(|k| g[k] * rows[[y + k, x]]).sum();
        }
    }
    out
}

fn ssim_channel(a: ArrayView2<f32>, b: ArrayView2<f32>) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let g = gaussian_window();
    let a = a.mapv(|v| v as f64);
    let b = b.mapv(|v| v as f64);
    let mu_a = blur(&a, &g);
    let mu_b = blur(&b, &g);
    let saa = blur(&(&a * &a), &g);
    let sbb = blur(&(&b * &b), &g);
    let sab = blur(&(&a * &b), &g);
    let mut acc = 0.0;
    for ((((ma, mb), aa), bb), ab) in mu_a.iter().zip(&mu_b).zip(&saa).zip(&sbb).zip(&sab) {
        let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
        acc +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    acc / mu_a.len() as f64
}

/// SSIM of two `3 x H x W` frames (11x11 Gaussian window, sigma 1.5,
/// valid region, averaged over channels).
pub fn ssim(a: &ndarray::Array3<f32>, b: &ndarray::Array3<f32>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            "ssim frames",
            format!("{:?}", a.dim()),
            format!("{:?}", b.dim()),
        ));
    }
    let (c, h, w) = a.dim();
    if h < 11 || w < 11 {
        return Err(Error::InvalidArgument(format!(
            "ssim needs frames of at least 11x11, got {h}x{w}"
        )));
    }
    Ok((0..c)
        .map(|k| ssim_channel(a.index_axis(Axis(0), k), b.index_axis(Axis(0), k)))
        .sum::<f64>()
        / c as f64)
}

/// Mean PSNR and mean SSIM over frames.
pub fn frame_metrics(gen: &Array4<f32>, gt: &Array4<f32>) -> Result<(f64, f64)> {
    check_same(gen, gt)?;
    let l = gen.shape()[1];
    let (mut p, mut s) = (0.0, 0.0);
    for i in 0..l {
        let a = gen.index_axis(Axis(1), i).to_owned();
        let b = gt.index_axis(Axis(1), i).to_owned();
        p += psnr(a.as_slice().unwrap(), b.as_slice().unwrap());
        s += ssim(&a, &b)?;
    }
    Ok((p / l as f64, s / l as f64))
}

/// Mean absolute per-pixel change between consecutive frames.
pub fn jitter_index(video: &Array4<f32>) -> Result<f64> {
    let l = video.shape()[1];
    if l < 2 {
        return Err(Error::InvalidArgument(
            "jitter needs at least 2 frames".into(),
        ));
    }
    let mut acc = 0.0;
    for i in 0..l - 1 {
        let a = video.index_axis(Axis(1), i);
        let b = video.index_axis(Axis(1), i + 1);
        acc += a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (*x as f64 - *y as f64).abs())
            .sum::<f64>()
            / a.len() as f64;
    }
    Ok(acc / (l - 1) as f64)
}

/// Fraction of consecutive transitions whose particle-pixel count inside
/// `region` does not decrease by more than 2 pixels.
pub fn pour_monotonicity(video: &Array4<f32>, region: &PixelRect) -> Result<f64> {
    let (h, w) = (video.shape()[2], video.shape()[3]);
    if region.area() == 0 || region.x1 > w || region.y1 > h {
        return Err(Error::InvalidArgument(format!(
            "pour region {region:?} is empty or outside the {h}x{w} frame"
        )));
    }
    let l = video.shape()[1];
    if l < 2 {
        return Err(Error::InvalidArgument(
            "pour monotonicity needs at least 2 frames".into(),
        ));
    }
    let counts: Vec<i64> = (0..l)
        .map(|i| {
            let f = video.index_axis(Axis(1), i).to_owned();
            let mut n = 0;
            for y in region.y0..region.y1 {
                for x in region.x0..region.x1 {
                    n += color_match(&f, y, x, PARTICLE_COLOR) as i64;
                }
            }
            n
        })
        .collect();
    let good = counts.windows(2).filter(|c| c[1] >= c[0] - 2).count();
    Ok(good as f64 / (l - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pck: PckReport,
    pub psnr: f64,
    pub ssim: f64,
    pub jitter_generated: f64,
    pub jitter_ground_truth: f64,
    pub pour_monotonicity: Option<f64>,
}

pub fn evaluate(
    gen: &Array4<f32>,
    gt: &Array4<f32>,
    threshold: f64,
    pour_region: Option<&PixelRect>,
) -> Result<EvalReport> {
    let (psnr, ssim) = frame_metrics(gen, gt)?;
    Ok(EvalReport {
        pck: pck(gen, gt, threshold)?,
        psnr,
        ssim,
        jitter_generated: jitter_index(gen)?,
        jitter_ground_truth: jitter_index(gt)?,
        pour_monotonicity: pour_region.map(|r| pour_monotonicity(gen, r)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenecam::{fill_disc, palette};
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};

    fn with_markers(frames: &[Vec<(usize, f64, f64)>]) -> Array4<f32> {
        let mut v = Array4::<f32>::zeros((3, frames.len(), 48, 48));
        for (i, ms) in frames.iter().enumerate() {
            let mut f = v.index_axis_mut(Axis(1), i);
            for &(m, x, y) in ms {
                fill_disc(&mut f, x, y, 2.0, palette::MARKERS[m]);
            }
        }
        v
    }

    #[test]
    fn threshold_scaling() {
        assert_eq!(pck_threshold(256), 20.0);
        assert_eq!(pck_threshold(64), 5.0);
    }

    #[test]
    fn hand_counted_pck() {
        // frame 0: wrist off by 3, tip1 off by 7  -> 1 of 2
        // frame 1: wrist exact, tip2 only in gen   -> 1 of 2
        // frame 2: nothing in gen                  -> excluded
        let gt = with_markers(&[
            vec![(0, 10.0, 10.0), (1, 30.0, 10.0)],
            vec![(0, 20.0, 20.0)],
            vec![(0, 20.0, 20.0)],
        ]);
        let gen = with_markers(&[
            vec![(0, 13.0, 10.0), (1, 30.0, 17.0)],
            vec![(0, 20.0, 20.0), (2, 40.0, 40.0)],
            vec![],
        ]);
        let r = pck(&gen, &gt, 5.0).unwrap();
        assert_eq!(r.pck, 50.0);
        assert_eq!(r.per_frame, vec![Some(50.0), Some(50.0), None]);
        assert!((r.excluded_ratio - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(pck(&gt, &gen, 5.0).unwrap().pck, 50.0);
    }

    #[test]
    fn shifted_video_scores_zero() {
        let gt = with_markers(&[vec![(0, 10.0, 10.0), (3, 14.0, 30.0)]]);
        let gen = with_markers(&[vec![(0, 20.0, 10.0), (3, 24.0, 30.0)]]);
        assert_eq!(pck(&gen, &gt, 5.0).unwrap().pck, 0.0);
        assert_eq!(pck(&gt, &gt, 5.0).unwrap().pck, 100.0);
    }

    #[test]
    fn psnr_offset_is_twenty_db() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let gt = Array4::from_shape_simple_fn((3, 2, 16, 16), || rng.random_range(0.0f32..0.9));
        let gen = gt.mapv(|v| (v + 0.1).min(1.0));
        let (p, _) = frame_metrics(&gen, &gt).unwrap();
        assert!((p - 20.0).abs() < 1e-4, "{p}");
        let (p, s) = frame_metrics(&gt, &gt).unwrap();
        assert_eq!((p, s), (PSNR_CAP, 1.0));
    }

    #[test]
    fn ssim_of_independent_noise_is_small() {
        for seed in 0..100 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = ndarray::Array3::from_shape_simple_fn((3, 64, 64), || rng.random::<f32>());
            let b = ndarray::Array3::from_shape_simple_fn((3, 64, 64), || rng.random::<f32>());
            assert!(ssim(&a, &b).unwrap().abs() < 0.1);
        }
    }

    #[test]
    fn jitter_cases() {
        assert_eq!(
            jitter_index(&Array4::from_elem((3, 4, 8, 8), 0.3)).unwrap(),
            0.0
        );
        let alt = Array4::from_shape_fn((3, 5, 8, 8), |(_, l, _, _)| (l % 2) as f32);
        assert_eq!(jitter_index(&alt).unwrap(), 1.0);
        let fade = Array4::from_shape_fn((3, 11, 8, 8), |(_, l, _, _)| l as f32 / 10.0);
        assert!((jitter_index(&fade).unwrap() - 0.1).abs() < 1e-6);
        assert!(jitter_index(&Array4::zeros((3, 1, 8, 8))).is_err());
    }

    #[test]
    fn pour_region_checks() {
        let v = Array4::<f32>::zeros((3, 3, 8, 8));
        let empty = PixelRect {
            x0: 2,
            y0: 2,
            x1: 2,
            y1: 5,
        };
        assert!(pour_monotonicity(&v, &empty).is_err());
        let r = PixelRect {
            x0: 0,
            y0: 0,
            x1: 8,
            y1: 8,
        };
        assert_eq!(pour_monotonicity(&v, &r).unwrap(), 1.0);
    }
}
