//! Temporal resampling of clips to a fixed training length.
//!
//! Long clips are downsampled uniformly with both endpoints kept; short
//! clips are extended by walking back and forth over the source frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    Identity,
    Downsample,
    BackForth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub indices: Vec<usize>,
    pub mode: ResampleMode,
}

impl ResamplePlan {
    /// Picks the planned elements out of `items`.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        self.indices
            .iter()
            .map(|&i| {
                items.get(i).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "resample index {i} out of range for {} items",
                        items.len()
                    ))
                })
            })
            .collect()
    }
}

pub fn resample_indices(n_in: usize, n_target: usize) -> Result<ResamplePlan> {
    if n_in < 2 || n_target < 2 {
        return Err(Error::InvalidArgument(format!(
            "resampling needs at least 2 input and 2 target frames, got {n_in} -> {n_target}"
        )));
    }
    if n_in >= n_target {
        let num = (n_in - 1) as u64;
        let den = (n_target - 1) as u64;
        // round(k * num / den), half up, in exact integer arithmetic
        let indices = (0..n_target as u64)
            .map(|k| ((2 * k * num + den) / (2 * den)) as usize)
            .collect();
        let mode = if n_in == n_target {
            ResampleMode::Identity
        } else {
            ResampleMode::Downsample
        };
        return Ok(ResamplePlan { indices, mode });
    }
    let period = 2 * (n_in - 1);
    let indices = (0..n_target)
        .map(|k| {
            let phase = k % period;
            if phase < n_in {
                phase
            } else {
                period - phase
            }
        })
        .collect();
    Ok(ResamplePlan {
        indices,
        mode: ResampleMode::BackForth,
    })
}
