//! Structured-light and disparity training losses as pure reductions.
//!
//! `N` is the total element count (pixels × layers). Sums use compensated
//! accumulation in row-major, layer-major order.

use serde::{Deserialize, Serialize};

use crate::codec::PatternStack;
use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::grid::{CompensatedSum, Grid};

pub const DEFAULT_BCE_EPS: f64 = 1e-7;
pub const DEFAULT_LAMBDA1: f64 = 1.0 / 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeMode {
    #[default]
    Squared,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the derivative term.
    pub lambda1: f64,
    pub bce_clamp_eps: f64,
    pub derivative_mode: DerivativeMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: DEFAULT_LAMBDA1,
            bce_clamp_eps: DEFAULT_BCE_EPS,
            derivative_mode: DerivativeMode::Squared,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bce_clamp_eps > 0.0 && self.bce_clamp_eps < 0.5) {
            return Err(Error::Config(format!(
                "bce clamp {} not in (0, 0.5)",
                self.bce_clamp_eps
            )));
        }
        if !(self.lambda1 >= 0.0) {
            return Err(Error::Config(format!("lambda1 {} must be nonnegative", self.lambda1)));
        }
        Ok(())
    }
}

/// Mean binary cross entropy with the default clamp.
pub fn bce_loss(target: &PatternStack, pred: &PatternStack) -> Result<f64> {
    bce_loss_eps(target, pred, DEFAULT_BCE_EPS)
}

/// Mean binary cross entropy with predictions clamped to `[eps, 1 − eps]`.
pub fn bce_loss_eps(target: &PatternStack, pred: &PatternStack, eps: f64) -> Result<f64> {
    target.ensure_same_shape(pred)?;
    if target.is_empty() {
        return Err(Error::Empty("bce over an empty stack".into()));
    }
    let sum: CompensatedSum = target
        .values()
        .iter()
        .zip(pred.values())
        .map(|(&p, &q)| {
            let q = q.clamp(eps, 1.0 - eps);
            p * q.ln() + (1.0 - p) * (1.0 - q).ln()
        })
        .collect();
    Ok(-sum.value() / target.len() as f64)
}

/// Horizontal `[-1, 0, 1]` derivative with replicated borders:
/// `out(x, y) = in(x+1, y) − in(x−1, y)`.
pub fn prewitt_dx(layer: &Grid<f64>) -> Result<Grid<f64>> {
    let w = layer.width();
    if w < 3 {
        return Err(Error::Shape(format!("prewitt needs width >= 3, got {w}")));
    }
    Ok(Grid::from_fn(w, layer.height(), |x, y| {
        let row = layer.row(y);
        row[(x + 1).min(w - 1)] - row[x.saturating_sub(1)]
    }))
}

fn stack_dx(stack: &PatternStack) -> Result<Vec<Grid<f64>>> {
    (0..stack.layers()).map(|n| prewitt_dx(&stack.layer_grid(n))).collect()
}

/// Mean squared (or absolute) difference of per-layer horizontal derivatives.
pub fn derivative_l2(target: &PatternStack, pred: &PatternStack, mode: DerivativeMode) -> Result<f64> {
    target.ensure_same_shape(pred)?;
    if target.is_empty() {
        return Err(Error::Empty("derivative loss over an empty stack".into()));
    }
    let (dt, dp) = (stack_dx(target)?, stack_dx(pred)?);
    derivative_distance(&dt, &dp, mode)
}

/// Mean distance between two sets of derivative layers.
pub fn derivative_distance(d: &[Grid<f64>], d_hat: &[Grid<f64>], mode: DerivativeMode) -> Result<f64> {
    if d.len() != d_hat.len() {
        return Err(Error::Shape("derivative layer counts differ".into()));
    }
    let mut sum = CompensatedSum::default();
    let mut n = 0usize;
    for (a, b) in d.iter().zip(d_hat) {
        crate::grid::ensure_same_shape(a, b, "derivative layer")?;
        for (&u, &v) in a.as_slice().iter().zip(b.as_slice()) {
            let diff = u - v;
            sum.add(match mode {
                DerivativeMode::Squared => diff * diff,
                DerivativeMode::Absolute => diff.abs(),
            });
        }
        n += a.len();
    }
    if n == 0 {
        return Err(Error::Empty("no derivative elements".into()));
    }
    Ok(sum.value() / n as f64)
}

/// `bce + λ₁ · derivative term`.
pub fn sl_loss(target: &PatternStack, pred: &PatternStack, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let bce = bce_loss_eps(target, pred, cfg.bce_clamp_eps)?;
    let deriv = derivative_l2(target, pred, cfg.derivative_mode)?;
    Ok(bce + cfg.lambda1 * deriv)
}

/// Mean squared disparity difference over pixels valid in both maps.
pub fn disparity_l2(gt: &DisparityMap, pred: &DisparityMap) -> Result<f64> {
    crate::grid::ensure_same_shape(&gt.values, &pred.values, "disparity maps")?;
    let mut sum = CompensatedSum::default();
    let mut n = 0usize;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if let (Some(a), Some(b)) = (gt.get(x, y), pred.get(x, y)) {
                sum.add((a - b) * (a - b));
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Empty("disparity loss has no jointly valid pixel".into()));
    }
    Ok(sum.value() / n as f64)
}
