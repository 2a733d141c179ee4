use ndarray::Array3;

use crate::error::{Error, Result};
use crate::scenecam::palette;

/// L-infinity color tolerance for marker and particle pixels.
pub const COLOR_TOLERANCE: f32 = 0.12;
/// Fewer matching pixels than this counts as a missed marker.
pub const MIN_MARKER_PIXELS: usize = 3;

/// Marker colors paired with keypoint ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerPalette {
    pub ids: Vec<String>,
    pub colors: Vec<[f32; 3]>,
}

impl Default for MarkerPalette {
    fn default() -> Self {
        MarkerPalette {
            ids: palette::HAND_IDS.iter().map(|s| s.to_string()).collect(),
            colors: palette::MARKERS.to_vec(),
        }
    }
}

pub(crate) fn color_match(frame: &Array3<f32>, y: usize, x: usize, c: [f32; 3]) -> bool {
    (0..3).all(|k| (frame[[k, y, x]] - c[k]).abs() <= COLOR_TOLERANCE)
}

impl MarkerPalette {
    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.colors.len() {
            return Err(Error::InvalidArgument(
                "palette ids and colors differ in length".into(),
            ));
        }
        for i in 0..self.colors.len() {
            for j in 0..i {
                let d = (0..3)
                    .map(|k| (self.colors[i][k] - self.colors[j][k]).abs())
                    .fold(0.0f32, f32::max);
                if d < 0.25 {
                    return Err(Error::InvalidArgument(format!(
                        "marker colors `{}` and `{}` are closer than 0.25",
                        self.ids[i], self.ids[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Detected marker centroids `(id, [x, y])`, or `None` when no marker in
/// the palette reaches [`MIN_MARKER_PIXELS`].
pub fn detect_hand(
    frame: &Array3<f32>,
    palette: &MarkerPalette,
) -> Option<Vec<(String, [f64; 2])>> {
    let (_, h, w) = frame.dim();
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); palette.colors.len()];
    for y in 0..h {
        for x in 0..w {
            if let Some(m) = palette
                .colors
                .iter()
                .position(|c| color_match(frame, y, x, *c))
            {
                sums[m].0 += x as f64;
                sums[m].1 += y as f64;
                sums[m].2 += 1;
            }
        }
    }
    let found: Vec<_> = sums
        .iter()
        .zip(&palette.ids)
        .filter(|(s, _)| s.2 >= MIN_MARKER_PIXELS)
        .map(|(s, id)| (id.clone(), [s.0 / s.2 as f64, s.1 / s.2 as f64]))
        .collect();
    (!found.is_empty()).then_some(found)
}
