//! Disparity metrics, depth conversion, and uncertainty analysis.
//!
//! Percentiles use linear interpolation between order statistics: the
//! `p`-quantile of `n` sorted values sits at fractional index `p·(n − 1)`.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::PatternStack;
use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, CompensatedSum, Grid, Mask};

/// `|pred − gt|` at every pixel valid in both maps and inside `mask`.
pub fn abs_errors(pred: &DisparityMap, gt: &DisparityMap, mask: Option<&Mask>) -> Result<Vec<f64>> {
    ensure_same_shape(&pred.values, &gt.values, "pred vs gt")?;
    if let Some(m) = mask {
        ensure_same_shape(&pred.values, m, "mask")?;
    }
    let mut out = Vec::new();
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if mask.is_some_and(|m| !*m.get(x, y)) {
                continue;
            }
            if let (Some(a), Some(b)) = (pred.get(x, y), gt.get(x, y)) {
                out.push((a - b).abs());
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("no jointly valid pixel to evaluate".into()));
    }
    Ok(out)
}

/// Mean absolute error in pixels.
pub fn mae(pred: &DisparityMap, gt: &DisparityMap, mask: Option<&Mask>) -> Result<f64> {
    let errs = abs_errors(pred, gt, mask)?;
    let sum: CompensatedSum = errs.iter().copied().collect();
    Ok(sum.value() / errs.len() as f64)
}

/// MAE restricted to a segmentation mask (object and podium).
pub fn seg_mae(pred: &DisparityMap, gt: &DisparityMap, seg: &Mask) -> Result<f64> {
    mae(pred, gt, Some(seg))
}

/// Linear-interpolation percentile of already sorted values, `p ∈ [0, 1]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty set");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Interquartile range of a set of values.
pub fn iqr(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("interquartile range of no values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, 0.75) - percentile_sorted(&sorted, 0.25))
}

pub fn iqr_abs_error(pred: &DisparityMap, gt: &DisparityMap, mask: Option<&Mask>) -> Result<f64> {
    iqr(&abs_errors(pred, gt, mask)?)
}

/// Depth in millimetres with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub millimetres: Grid<f64>,
    pub valid: Mask,
}

/// `depth_mm = 1000 · f · b / d`; pixels with `d ≤ 0` become invalid.
pub fn disparity_to_depth(d: &DisparityMap, focal_px: f64, baseline_m: f64) -> Result<DepthMap> {
    if !(focal_px > 0.0 && baseline_m > 0.0) {
        return Err(Error::Config("focal and baseline must be positive".into()));
    }
    let fb = 1000.0 * focal_px * baseline_m;
    let mut valid = d.valid.clone();
    let millimetres = Grid::from_fn(d.width(), d.height(), |x, y| match d.get(x, y) {
        Some(v) if v > 0.0 => fb / v,
        _ => {
            valid.set(x, y, false);
            0.0
        }
    });
    Ok(DepthMap { millimetres, valid })
}

/// Mean absolute depth error in millimetres over jointly valid pixels.
pub fn depth_mae_mm(
    pred: &DisparityMap,
    gt: &DisparityMap,
    focal_px: f64,
    baseline_m: f64,
    mask: Option<&Mask>,
) -> Result<f64> {
    let (p, g) = (
        disparity_to_depth(pred, focal_px, baseline_m)?,
        disparity_to_depth(gt, focal_px, baseline_m)?,
    );
    let as_map = |d: DepthMap| DisparityMap::new(d.millimetres, d.valid);
    mae(&as_map(p)?, &as_map(g)?, mask)
}

/// Per-pixel uncertainty in `[0, 1]`; 0 means fully confident.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub uncertainty: Grid<f64>,
}

/// Mean over layers of `1 − 2·|p̂ − 0.5|`.
pub fn uncertainty_map(pred: &PatternStack) -> ConfidenceMap {
    let t = pred.layers().max(1) as f64;
    let uncertainty = Grid::from_fn(pred.width(), pred.height(), |x, y| {
        (0..pred.layers())
            .map(|n| 1.0 - 2.0 * (pred.get(x, y, n) - 0.5).abs())
            .sum::<f64>()
            / t
    });
    ConfidenceMap { uncertainty }
}

/// Absolute disparity error map and the mask where it is defined.
pub fn error_map(pred: &DisparityMap, gt: &DisparityMap) -> Result<(Grid<f64>, Mask)> {
    ensure_same_shape(&pred.values, &gt.values, "pred vs gt")?;
    let valid = pred.valid.and(&gt.valid)?;
    let err = Grid::from_fn(pred.width(), pred.height(), |x, y| {
        match (pred.get(x, y), gt.get(x, y)) {
            (Some(a), Some(b)) => (a - b).abs(),
            _ => 0.0,
        }
    });
    Ok((err, valid))
}

pub const DEFAULT_BINS: usize = 64;

/// Joint statistics of per-pixel uncertainty and error.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub bins: usize,
    /// Row-major `bins × bins` counts; row = error bin, column =
    /// uncertainty bin, both over max-normalized values.
    pub histogram: Vec<u64>,
    pub samples: usize,
    pub uncertainty_max: f64,
    pub error_max: f64,
    /// Least-squares fit `err ≈ slope · unc + intercept` on the raw pairs.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

impl CorrelationReport {
    pub fn count(&self, err_bin: usize, unc_bin: usize) -> u64 {
        self.histogram[err_bin * self.bins + unc_bin]
    }

    /// Bin grid as CSV: header of uncertainty bin indices, one row per
    /// error bin.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("err_bin");
        for u in 0..self.bins {
            write!(out, ",u{u}").unwrap();
        }
        out.push('\n');
        for e in 0..self.bins {
            write!(out, "{e}").unwrap();
            for u in 0..self.bins {
                write!(out, ",{}", self.count(e, u)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
        format!(
            "samples {}\nuncertainty_max {:.6}\nerror_max {:.6}\nslope {}\nintercept {}\npearson {}\nspearman {}\n",
            self.samples,
            self.uncertainty_max,
            self.error_max,
            fmt(self.slope),
            fmt(self.intercept),
            fmt(self.pearson),
            fmt(self.spearman)
        )
    }

    /// `ln(1 + count)` grid for display, row 0 = lowest error bin.
    pub fn log_counts(&self) -> Grid<f64> {
        Grid::from_fn(self.bins, self.bins, |u, e| (self.count(e, u) as f64).ln_1p())
    }
}

pub fn correlation_report(unc: &ConfidenceMap, err: &Grid<f64>, mask: &Mask, bins: usize) -> Result<CorrelationReport> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    ensure_same_shape(&unc.uncertainty, err, "uncertainty vs error")?;
    ensure_same_shape(err, mask, "mask")?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = unc
        .uncertainty
        .as_slice()
        .iter()
        .zip(err.as_slice())
        .zip(mask.as_slice())
        .filter(|(_, &m)| m)
        .map(|((&u, &e), _)| (u, e))
        .unzip();
    if xs.is_empty() {
        return Err(Error::Empty("correlation over an empty mask".into()));
    }
    let max_of = |v: &[f64]| v.iter().copied().fold(0.0f64, f64::max);
    let (umax, emax) = (max_of(&xs), max_of(&ys));
    let bin = |v: f64, max: f64| {
        let n = if max > 0.0 { v / max } else { 0.0 };
        ((n * bins as f64).floor() as usize).min(bins - 1)
    };
    let mut histogram = vec![0u64; bins * bins];
    for (&u, &e) in xs.iter().zip(&ys) {
        histogram[bin(e, emax) * bins + bin(u, umax)] += 1;
    }
    let fit = linear_fit(&xs, &ys);
    Ok(CorrelationReport {
        bins,
        histogram,
        samples: xs.len(),
        uncertainty_max: umax,
        error_max: emax,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
        pearson: pearson(&xs, &ys),
        spearman: spearman(&xs, &ys),
    })
}

fn moments(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().copied().collect::<CompensatedSum>().value() / n;
    let my = ys.iter().copied().collect::<CompensatedSum>().value() / n;
    let mut sxx = CompensatedSum::default();
    let mut syy = CompensatedSum::default();
    let mut sxy = CompensatedSum::default();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx.add((x - mx) * (x - mx));
        syy.add((y - my) * (y - my));
        sxy.add((x - mx) * (y - my));
    }
    (mx, my, sxx.value(), syy.value(), sxy.value())
}

/// `(slope, intercept)` of the least-squares line; `None` when `x` is
/// constant.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let (mx, my, sxx, _, sxy) = moments(xs, ys);
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let (_, _, sxx, syy, sxy) = moments(xs, ys);
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Add zero-mean Gaussian noise with a per-pixel standard deviation (shared
/// by all layers of a pixel) and clamp back into `[0, 1]`.
pub fn perturb_stack(stack: &PatternStack, sigma: &Grid<f64>, seed: u64) -> Result<PatternStack> {
    if sigma.width() != stack.width() || sigma.height() != stack.height() {
        return Err(Error::Shape("noise field vs stack".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = stack.clone();
    for n in 0..stack.layers() {
        for y in 0..stack.height() {
            for x in 0..stack.width() {
                let z: f64 = unit.sample(&mut rng);
                out.set(x, y, n, stack.get(x, y, n) + z * sigma.get(x, y));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: Vec<f64>, w: usize) -> DisparityMap {
        let h = values.len() / w;
        DisparityMap::new(Grid::from_vec(w, h, values).unwrap(), Grid::filled(w, h, true)).unwrap()
    }

    #[test]
    fn mae_examples() {
        let gt = map(vec![1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(mae(&gt, &gt, None).unwrap(), 0.0);
        let off = map(vec![3.0, 4.0, 5.0, 6.0], 2);
        assert_eq!(mae(&off, &gt, None).unwrap(), 2.0);
        // left column offset 4, right column offset 0; mask keeps the left
        let mixed = map(vec![5.0, 2.0, 7.0, 4.0], 2);
        let m = Grid::from_fn(2, 2, |x, _| x == 0);
        assert_eq!(mae(&mixed, &gt, Some(&m)).unwrap(), 4.0);
    }

    #[test]
    fn mae_empty_is_error() {
        let gt = map(vec![1.0; 4], 2);
        let none = Grid::filled(2, 2, false);
        assert!(matches!(mae(&gt, &gt, Some(&none)), Err(Error::Empty(_))));
        assert!(seg_mae(&gt, &gt, &none).is_err());
        assert_eq!(seg_mae(&gt, &gt, &Grid::filled(2, 2, true)).unwrap(), 0.0);
    }

    #[test]
    fn iqr_examples() {
        assert!((iqr(&[1.0, 2.0, 3.0, 4.0]).unwrap() - 1.5).abs() < 1e-15);
        assert!((iqr(&[0.0, 0.0, 0.0, 100.0]).unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(iqr(&[3.0; 7]).unwrap(), 0.0);
        assert!(iqr(&[]).is_err());
    }

    #[test]
    fn depth_examples() {
        let d = map(vec![25.6, 0.0], 2);
        let z = disparity_to_depth(&d, 256.0, 0.005).unwrap();
        assert!((z.millimetres.get(0, 0) - 50.0).abs() < 1e-12);
        assert!(!*z.valid.get(1, 0));
    }

    #[test]
    fn uncertainty_examples() {
        let half = PatternStack::filled(2, 2, 3, 0.5).unwrap();
        assert!(uncertainty_map(&half).uncertainty.as_slice().iter().all(|&v| v == 1.0));
        let bin = PatternStack::from_vec(2, 1, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(uncertainty_map(&bin).uncertainty.as_slice().iter().all(|&v| v == 0.0));
        let q = PatternStack::filled(2, 2, 3, 0.75).unwrap();
        assert!(uncertainty_map(&q).uncertainty.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn correlation_identity_and_constant() {
        let u: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let unc = ConfidenceMap {
            uncertainty: Grid::from_vec(10, 5, u.clone()).unwrap(),
        };
        let all = Grid::filled(10, 5, true);
        let rep = correlation_report(&unc, &Grid::from_vec(10, 5, u).unwrap(), &all, DEFAULT_BINS).unwrap();
        assert!((rep.slope.unwrap() - 1.0).abs() < 1e-12);
        assert!((rep.pearson.unwrap() - 1.0).abs() < 1e-12);
        assert!((rep.spearman.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rep.histogram.iter().sum::<u64>(), 50);

        let rep = correlation_report(&unc, &Grid::filled(10, 5, 3.0), &all, 8).unwrap();
        assert_eq!(rep.slope, Some(0.0));
        assert_eq!(rep.pearson, None);
        assert_eq!(rep.spearman, None);
        assert!(rep.summary().contains("pearson undefined"));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn zero_sigma_perturbation_is_identity() {
        let st = PatternStack::filled(4, 3, 2, 1.0).unwrap();
        let out = perturb_stack(&st, &Grid::filled(4, 3, 0.0), 9).unwrap();
        assert_eq!(out, st);
    }
}
