//! Disparity maps and the rectified-stereo depth identity.

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// Per-shift matching scores, `height × width × shifts`, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVolume {
    pub width: usize,
    pub height: usize,
    /// Shift value (pixels) of each slot along the last axis.
    pub shifts: Vec<usize>,
    pub scores: Vec<f64>,
}

impl ScoreVolume {
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let n = self.shifts.len();
        let i = (y * self.width + x) * n;
        &self.scores[i..i + n]
    }
}

/// Disparity in pixels with a validity mask. Values at invalid pixels are
/// unspecified and never read by any consumer in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub values: Grid<f64>,
    pub valid: Mask,
    pub scores: Option<ScoreVolume>,
}

impl DisparityMap {
    pub fn new(values: Grid<f64>, valid: Mask) -> Result<Self> {
        if !values.same_shape(&valid) {
            return Err(Error::Shape("disparity values vs validity mask".into()));
        }
        Ok(Self {
            values,
            valid,
            scores: None,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            values: Grid::filled(width, height, 0.0),
            valid: Grid::filled(width, height, false),
            scores: None,
        }
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    /// Value at `(x, y)` if the pixel is valid.
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        if *self.valid.get(x, y) {
            Some(*self.values.get(x, y))
        } else {
            None
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.count()
    }
}

/// Depth along the optical axis in meters from focal length and baseline.
/// Nonpositive or non-finite depths at valid pixels become invalid.
pub fn gt_disparity_from_depth(
    depth_m: &Grid<f64>,
    valid: &Mask,
    focal_px: f64,
    baseline_m: f64,
) -> Result<DisparityMap> {
    if !(focal_px > 0.0 && baseline_m > 0.0) {
        return Err(Error::Config("focal and baseline must be positive".into()));
    }
    crate::grid::ensure_same_shape(depth_m, valid, "depth vs mask")?;
    let fb = focal_px * baseline_m;
    let mut out_valid = valid.clone();
    let values = Grid::from_fn(depth_m.width(), depth_m.height(), |x, y| {
        let z = *depth_m.get(x, y);
        if *valid.get(x, y) && z > 0.0 && z.is_finite() {
            fb / z
        } else {
            out_valid.set(x, y, false);
            0.0
        }
    });
    DisparityMap::new(values, out_valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinhole_identity() {
        let depth = Grid::filled(4, 3, 0.05);
        let d = gt_disparity_from_depth(&depth, &Grid::filled(4, 3, true), 256.0, 0.005).unwrap();
        for v in d.values.as_slice() {
            assert!((v - 25.6).abs() < 1e-12);
        }
    }

    #[test]
    fn far_depth_goes_to_zero() {
        let depth = Grid::filled(1, 1, 1e9);
        let d = gt_disparity_from_depth(&depth, &Grid::filled(1, 1, true), 256.0, 0.005).unwrap();
        assert!(d.get(0, 0).unwrap() < 1e-8);
    }

    #[test]
    fn nonpositive_depth_is_invalidated() {
        let depth = Grid::from_vec(3, 1, vec![0.0, -1.0, 0.1]).unwrap();
        let d = gt_disparity_from_depth(&depth, &Grid::filled(3, 1, true), 100.0, 0.01).unwrap();
        assert_eq!(d.get(0, 0), None);
        assert_eq!(d.get(1, 0), None);
        assert!((d.get(2, 0).unwrap() - 10.0).abs() < 1e-12);
    }
}
