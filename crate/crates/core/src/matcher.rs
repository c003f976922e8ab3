//! Sliding-patch cross-correlation of left/right pattern stacks along rows.
//!
//! For a left pixel `k` and shift `s` the score is the sum, over a square
//! patch centred on `k` and over every pattern layer, of
//! `left(x, y) · right(x − s, y)`. The disparity is the shift with the
//! highest score; ties go to the smallest shift. Patch pixels that fall
//! outside the image, or whose shifted column is negative, are skipped.

use rayon::prelude::*;

use crate::codec::PatternStack;
use crate::disparity::{DisparityMap, ScoreVolume};
use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    /// Odd side length of the square patch.
    pub patch_side: usize,
    /// Search range as a fraction of image width: `u = ⌊fraction · w⌋`.
    pub max_disp_fraction: f64,
    pub shift_step: usize,
    pub emit_scores: bool,
    /// Normalized cross-correlation instead of the raw product sum.
    pub normalized: bool,
    /// Parabolic sub-pixel refinement around the integer argmax.
    pub subpixel: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            patch_side: 17,
            max_disp_fraction: 0.25,
            shift_step: 1,
            emit_scores: false,
            normalized: false,
            subpixel: false,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_side < 3 || self.patch_side.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "patch side {} must be odd and at least 3",
                self.patch_side
            )));
        }
        if !(self.max_disp_fraction > 0.0 && self.max_disp_fraction <= 0.5) {
            return Err(Error::Config(format!(
                "max disparity fraction {} not in (0, 0.5]",
                self.max_disp_fraction
            )));
        }
        if self.shift_step == 0 {
            return Err(Error::Config("shift step must be positive".into()));
        }
        Ok(())
    }

    /// Largest searched shift for an image of the given width.
    pub fn max_disparity(&self, width: usize) -> usize {
        (self.max_disp_fraction * width as f64).floor() as usize
    }

    fn shifts(&self, width: usize) -> Vec<usize> {
        (0..=self.max_disparity(width)).step_by(self.shift_step).collect()
    }
}

/// Raw correlation score at left pixel `(x, y)` and shift `s`, summed
/// directly over the patch. Reference implementation for single queries.
pub fn cc_score(
    left: &PatternStack,
    right: &PatternStack,
    x: usize,
    y: usize,
    s: usize,
    patch_side: usize,
) -> Result<f64> {
    left.ensure_same_shape(right)?;
    let (w, h) = (left.width() as isize, left.height() as isize);
    let r = (patch_side / 2) as isize;
    let (x, y, s) = (x as isize, y as isize, s as isize);
    let mut acc = 0.0;
    for py in (y - r).max(0)..=(y + r).min(h - 1) {
        for px in (x - r).max(0)..=(x + r).min(w - 1) {
            let qx = px - s;
            if qx < 0 {
                continue;
            }
            for n in 0..left.layers() {
                acc += left.get(px as usize, py as usize, n) * right.get(qx as usize, py as usize, n);
            }
        }
    }
    Ok(acc)
}

/// Dense disparity by correlation argmax over `s ∈ {0, step, …, u}`.
///
/// A pixel is reported invalid when no candidate shift produces a positive
/// score (for example inside a projector shadow where the stack is black).
pub fn compute_disparity(left: &PatternStack, right: &PatternStack, cfg: &MatchConfig) -> Result<DisparityMap> {
    cfg.validate()?;
    if left.layers() != right.layers() {
        return Err(Error::Shape(format!(
            "pattern counts differ: {} vs {}",
            left.layers(),
            right.layers()
        )));
    }
    left.ensure_same_shape(right)?;
    let (w, h) = (left.width(), left.height());
    let r = cfg.patch_side / 2;
    let shifts = cfg.shifts(w);
    let u = cfg.max_disparity(w);

    let planes: Vec<ScorePlane> = shifts
        .par_iter()
        .map(|&s| score_plane(left, right, s, r, cfg.normalized))
        .collect();

    let mut out = DisparityMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(usize, f64)> = None;
            for (i, plane) in planes.iter().enumerate() {
                if !plane.defined(x, y) {
                    continue;
                }
                let v = *plane.score.get(x, y);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            let Some((i, v)) = best else {
                continue;
            };
            if v <= 0.0 {
                continue;
            }
            let mut d = shifts[i] as f64;
            if cfg.subpixel && i > 0 && i + 1 < planes.len() {
                let (lo, hi) = (&planes[i - 1], &planes[i + 1]);
                if lo.defined(x, y) && hi.defined(x, y) {
                    let (cm, cp) = (*lo.score.get(x, y), *hi.score.get(x, y));
                    let denom = cm - 2.0 * v + cp;
                    if denom < 0.0 {
                        let off = (0.5 * (cm - cp) / denom).clamp(-0.5, 0.5);
                        d = (d + off * cfg.shift_step as f64).clamp(0.0, u as f64);
                    }
                }
            }
            out.values.set(x, y, d);
            out.valid.set(x, y, true);
        }
    }

    if cfg.emit_scores {
        let n = planes.len();
        let mut scores = vec![0.0; w * h * n];
        for (i, plane) in planes.iter().enumerate() {
            for (p, &v) in plane.score.as_slice().iter().enumerate() {
                scores[p * n + i] = v;
            }
        }
        out.scores = Some(ScoreVolume {
            width: w,
            height: h,
            shifts,
            scores,
        });
    }
    Ok(out)
}

struct ScorePlane {
    score: Grid<f64>,
    /// Leftmost pixel column whose patch still overlaps `x − s ≥ 0`.
    first_defined: usize,
}

impl ScorePlane {
    #[inline]
    fn defined(&self, x: usize, _y: usize) -> bool {
        x >= self.first_defined
    }
}

fn score_plane(left: &PatternStack, right: &PatternStack, s: usize, r: usize, normalized: bool) -> ScorePlane {
    let (w, h) = (left.width(), left.height());
    let mut prod = Grid::filled(w, h, 0.0);
    let mut ll = normalized.then(|| Grid::filled(w, h, 0.0));
    let mut rr = normalized.then(|| Grid::filled(w, h, 0.0));
    for n in 0..left.layers() {
        let (lp, rp) = (left.layer(n), right.layer(n));
        for y in 0..h {
            let row = y * w;
            for x in s..w {
                let a = lp[row + x];
                let b = rp[row + x - s];
                prod.as_mut_slice()[row + x] += a * b;
                if let (Some(ll), Some(rr)) = (ll.as_mut(), rr.as_mut()) {
                    ll.as_mut_slice()[row + x] += a * a;
                    rr.as_mut_slice()[row + x] += b * b;
                }
            }
        }
    }
    let mut score = box_sum(&prod, r);
    if let (Some(ll), Some(rr)) = (ll, rr) {
        let (ll, rr) = (box_sum(&ll, r), box_sum(&rr, r));
        for ((v, a), b) in score.as_mut_slice().iter_mut().zip(ll.as_slice()).zip(rr.as_slice()) {
            let denom = (a * b).sqrt();
            *v = if denom > 0.0 { *v / denom } else { 0.0 };
        }
    }
    ScorePlane {
        score,
        first_defined: s.saturating_sub(r),
    }
}

/// Sum over the `(2r+1)²` window clipped to the image, computed as a
/// vertical then a horizontal pass of direct sums (no running-sum
/// cancellation, so identical windows give identical results).
fn box_sum(src: &Grid<f64>, r: usize) -> Grid<f64> {
    let (w, h) = (src.width(), src.height());
    let mut vert = Grid::filled(w, h, 0.0);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            let mut acc = 0.0;
            for yy in y0..=y1 {
                acc += *src.get(x, yy);
            }
            vert.set(x, y, acc);
        }
    }
    Grid::from_fn(w, h, |x, y| {
        let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
        vert.row(y)[x0..=x1].iter().sum()
    })
}
