//! Multi-step operations shared by the command-line driver and tests.

use crate::codec::{binarize, code_match_disparity, decode, CodeMap, PatternSpec, PatternStack, DEFAULT_THRESHOLD};
use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::eval::{correlation_report, error_map, perturb_stack, uncertainty_map, ConfidenceMap, CorrelationReport};
use crate::grid::{Grid, Mask};
use crate::matcher::{compute_disparity, MatchConfig};
use crate::scene::StereoFrame;

/// Threshold and decode both stacks of a view.
pub fn decode_pair(spec: &PatternSpec, left: &PatternStack, right: &PatternStack) -> Result<(CodeMap, CodeMap)> {
    let l = decode(spec, &binarize(left, DEFAULT_THRESHOLD))?;
    let r = decode(spec, &binarize(right, DEFAULT_THRESHOLD))?;
    Ok((l, r))
}

/// Search range used throughout: `⌊fraction · w⌋`.
pub fn max_disparity(width: usize, fraction: f64) -> i64 {
    (fraction * width as f64).floor() as i64
}

/// Exact code-match disparity for a rendered view. Left codes are trusted
/// only where the frame is valid and lit.
pub fn oracle_disparity(
    spec: &PatternSpec,
    frame: &StereoFrame,
    left: &PatternStack,
    right: &PatternStack,
    max_disp_fraction: f64,
) -> Result<DisparityMap> {
    let (l, r) = decode_pair(spec, left, right)?;
    let l = l.restrict(&frame.matchable_mask())?;
    code_match_disparity(&l, &r, max_disparity(frame.width(), max_disp_fraction))
}

#[derive(Debug, Clone)]
pub struct NoiseStudy {
    pub noisy_left: PatternStack,
    pub disparity: DisparityMap,
    pub confidence: ConfidenceMap,
    pub errors: Grid<f64>,
    pub error_mask: Mask,
    pub report: CorrelationReport,
}

/// Inject Gaussian noise of standard deviation `sigma` into both stacks,
/// match the noisy pair and relate the left-stack uncertainty to the
/// absolute disparity error against `gt`.
pub fn noise_study(
    left: &PatternStack,
    right: &PatternStack,
    gt: &DisparityMap,
    sigma: f64,
    cfg: &MatchConfig,
    bins: usize,
    seed: u64,
) -> Result<NoiseStudy> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma {sigma} must be nonnegative")));
    }
    let field = Grid::filled(left.width(), left.height(), sigma);
    let noisy_left = perturb_stack(left, &field, seed)?;
    let noisy_right = perturb_stack(right, &field, seed.wrapping_add(1))?;
    let disparity = compute_disparity(&noisy_left, &noisy_right, cfg)?;
    let confidence = uncertainty_map(&noisy_left);
    let (errors, error_mask) = error_map(&disparity, gt)?;
    let report = correlation_report(&confidence, &errors, &error_mask, bins)?;
    Ok(NoiseStudy {
        noisy_left,
        disparity,
        confidence,
        errors,
        error_mask,
        report,
    })
}

/// Fraction of `mask` pixels valid in `map`.
pub fn coverage(map: &DisparityMap, mask: &Mask) -> f64 {
    let total = mask.count();
    if total == 0 {
        return 0.0;
    }
    let hit = (0..map.height())
        .flat_map(|y| (0..map.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| *mask.get(x, y) && map.get(x, y).is_some())
        .count();
    hit as f64 / total as f64
}

/// Fraction of pixels valid in both maps whose values differ by at most
/// `tol`; `None` when no pixel is valid in both.
pub fn agreement(a: &DisparityMap, b: &DisparityMap, tol: f64) -> Option<f64> {
    let mut both = 0usize;
    let mut close = 0usize;
    for y in 0..a.height().min(b.height()) {
        for x in 0..a.width().min(b.width()) {
            if let (Some(u), Some(v)) = (a.get(x, y), b.get(x, y)) {
                both += 1;
                if (u - v).abs() <= tol {
                    close += 1;
                }
            }
        }
    }
    (both > 0).then(|| close as f64 / both as f64)
}
