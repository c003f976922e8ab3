//! Loss-combination strategies for joint structured-light / disparity
//! training, and a small two-task learner that exercises them.
//!
//! Three strategies are provided:
//!
//! * constant gain: `λ₂·L_sl + L_disp`
//! * epoch ratio: task weights from a softmax over each task's loss ratio
//!   between the two previous epochs, scaled by `ζ₁`
//! * uncertainty: per-task learned log-variances `η = log σ²`,
//!   `(λ₅/2)e^(−η_sl)L_sl + ½e^(−η_disp)L_disp + η_sl/2 + η_disp/2`

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ZETA1: f64 = 2.0;
pub const DEFAULT_ZETA2: f64 = 2.0;
pub const DEFAULT_LAMBDA5: f64 = 0.5;
/// Constant-gain presets: `cg_a` and `cg_b`.
pub const CG_A: f64 = 10.0;
pub const CG_B: f64 = 0.5;

/// How the epoch-ratio weights are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioNormalization {
    /// `ζ₁ · exp(ω_k ζ₂) / Σ_i exp(ω_i ζ₂)`
    #[default]
    Softmax,
    /// `ζ₁ · exp(ω_k ζ₂) / Σ_i ω_i ζ₂`, the denominator exactly as printed.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerKind {
    Constant {
        lambda2: f64,
    },
    EpochRatio {
        zeta1: f64,
        zeta2: f64,
        #[serde(default)]
        normalization: RatioNormalization,
    },
    Uncertainty {
        lambda5: f64,
        eta_sl: f64,
        eta_disp: f64,
        lr: f64,
    },
}

impl SchedulerKind {
    pub fn epoch_ratio() -> Self {
        SchedulerKind::EpochRatio {
            zeta1: DEFAULT_ZETA1,
            zeta2: DEFAULT_ZETA2,
            normalization: RatioNormalization::Softmax,
        }
    }

    pub fn uncertainty(lr: f64) -> Self {
        SchedulerKind::Uncertainty {
            lambda5: DEFAULT_LAMBDA5,
            eta_sl: 0.0,
            eta_disp: 0.0,
            lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SchedulerKind::Constant { lambda2 } if !(lambda2 >= 0.0) => {
                Err(Error::Config(format!("lambda2 {lambda2} must be nonnegative")))
            }
            SchedulerKind::EpochRatio { zeta1, zeta2, .. } if !(zeta1 > 0.0 && zeta2 > 0.0) => {
                Err(Error::Config("zeta1 and zeta2 must be positive".into()))
            }
            SchedulerKind::Uncertainty { lr, lambda5, .. } if !(lr > 0.0 && lambda5 > 0.0) => {
                Err(Error::Config("uncertainty lr and lambda5 must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Parses the command-line presets `const:<λ₂>`, `epr` and `unc`.
impl std::str::FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "epr" => SchedulerKind::epoch_ratio(),
            "unc" => SchedulerKind::uncertainty(0.1),
            _ => {
                let gain = s
                    .strip_prefix("const:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown scheduler '{s}'")))?;
                SchedulerKind::Constant { lambda2: gain }
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Per-epoch mean task losses, append-only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    sl: Vec<f64>,
    disp: Vec<f64>,
}

impl LossHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, l_sl: f64, l_disp: f64) {
        self.sl.push(l_sl);
        self.disp.push(l_disp);
    }

    pub fn len(&self) -> usize {
        self.sl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sl.is_empty()
    }

    pub fn sl(&self) -> &[f64] {
        &self.sl
    }

    pub fn disp(&self) -> &[f64] {
        &self.disp
    }

    /// `(ω_sl, ω_disp)`: last loss over the one before, or `(1, 1)` with
    /// fewer than two recorded epochs.
    pub fn ratios(&self) -> Result<(f64, f64)> {
        let n = self.len();
        if n < 2 {
            return Ok((1.0, 1.0));
        }
        let ratio = |v: &[f64]| {
            let (prev, last) = (v[n - 2], v[n - 1]);
            if prev > 0.0 && last > 0.0 {
                Ok(last / prev)
            } else {
                Err(Error::Config(format!(
                    "loss history must be positive, got {prev} and {last}"
                )))
            }
        };
        Ok((ratio(&self.sl)?, ratio(&self.disp)?))
    }
}

fn check_losses(l_sl: f64, l_disp: f64) -> Result<()> {
    for l in [l_sl, l_disp] {
        if l < 0.0 {
            return Err(Error::NegativeLoss(l));
        }
    }
    Ok(())
}

pub fn combine_constant(l_sl: f64, l_disp: f64, lambda2: f64) -> Result<f64> {
    check_losses(l_sl, l_disp)?;
    Ok(lambda2 * l_sl + l_disp)
}

/// Softmax epoch-ratio weights `(λ₃, λ₄)`; they sum to `ζ₁`.
pub fn epoch_ratio_weights(history: &LossHistory, zeta1: f64, zeta2: f64) -> Result<(f64, f64)> {
    epoch_ratio_weights_with(history, zeta1, zeta2, RatioNormalization::Softmax)
}

pub fn epoch_ratio_weights_with(
    history: &LossHistory,
    zeta1: f64,
    zeta2: f64,
    normalization: RatioNormalization,
) -> Result<(f64, f64)> {
    let (w_sl, w_disp) = history.ratios()?;
    Ok(ratio_weights(w_sl, w_disp, zeta1, zeta2, normalization))
}

/// Weights for explicit ratios `ω_sl`, `ω_disp`.
pub fn ratio_weights(w_sl: f64, w_disp: f64, zeta1: f64, zeta2: f64, normalization: RatioNormalization) -> (f64, f64) {
    match normalization {
        RatioNormalization::Softmax => {
            // shift by the max exponent; the ratio is unchanged
            let (a, b) = (w_sl * zeta2, w_disp * zeta2);
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            let lambda3 = zeta1 * ea / (ea + eb);
            (lambda3, zeta1 - lambda3)
        }
        RatioNormalization::Literal => {
            let denom = w_sl * zeta2 + w_disp * zeta2;
            (
                zeta1 * (w_sl * zeta2).exp() / denom,
                zeta1 * (w_disp * zeta2).exp() / denom,
            )
        }
    }
}

pub fn combine_epoch_ratio(l_sl: f64, l_disp: f64, weights: (f64, f64)) -> f64 {
    weights.0 * l_sl + weights.1 * l_disp
}

pub fn combine_uncertainty(l_sl: f64, l_disp: f64, eta_sl: f64, eta_disp: f64, lambda5: f64) -> f64 {
    0.5 * lambda5 * (-eta_sl).exp() * l_sl + 0.5 * (-eta_disp).exp() * l_disp + 0.5 * eta_sl + 0.5 * eta_disp
}

/// Analytic `(∂L/∂η_sl, ∂L/∂η_disp)` of [`combine_uncertainty`].
pub fn uncertainty_grad(l_sl: f64, l_disp: f64, eta_sl: f64, eta_disp: f64, lambda5: f64) -> (f64, f64) {
    (
        -0.5 * lambda5 * (-eta_sl).exp() * l_sl + 0.5,
        -0.5 * (-eta_disp).exp() * l_disp + 0.5,
    )
}

/// Learnable log-variances of the uncertainty strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyState {
    pub eta_sl: f64,
    pub eta_disp: f64,
    pub lambda5: f64,
}

impl UncertaintyState {
    pub fn sigma_sl(&self) -> f64 {
        (0.5 * self.eta_sl).exp()
    }

    pub fn sigma_disp(&self) -> f64 {
        (0.5 * self.eta_disp).exp()
    }

    /// Loss multipliers `(λ₅/(2σ_sl²), 1/(2σ_disp²))`.
    pub fn weights(&self) -> (f64, f64) {
        (0.5 * self.lambda5 * (-self.eta_sl).exp(), 0.5 * (-self.eta_disp).exp())
    }

    pub fn combine(&self, l_sl: f64, l_disp: f64) -> f64 {
        combine_uncertainty(l_sl, l_disp, self.eta_sl, self.eta_disp, self.lambda5)
    }
}

/// One gradient-descent step on both log-variances.
pub fn uncertainty_grad_step(state: UncertaintyState, l_sl: f64, l_disp: f64, lr: f64) -> UncertaintyState {
    let (g_sl, g_disp) = uncertainty_grad(l_sl, l_disp, state.eta_sl, state.eta_disp, state.lambda5);
    UncertaintyState {
        eta_sl: state.eta_sl - lr * g_sl,
        eta_disp: state.eta_disp - lr * g_disp,
        ..state
    }
}

/// `L(w) = scale · ‖A w − y‖² / m`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    pub design: DMatrix<f64>,
    pub target: DVector<f64>,
    pub scale: f64,
}

impl QuadraticTask {
    pub fn loss(&self, w: &DVector<f64>) -> f64 {
        let r = &self.design * w - &self.target;
        self.scale * r.norm_squared() / self.design.nrows() as f64
    }

    pub fn grad(&self, w: &DVector<f64>) -> DVector<f64> {
        let r = &self.design * w - &self.target;
        self.design.transpose() * r * (2.0 * self.scale / self.design.nrows() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTaskConfig {
    pub sl: QuadraticTask,
    pub disp: QuadraticTask,
    pub epochs: usize,
    /// Step size on the shared parameters.
    pub lr: f64,
    pub scheduler: SchedulerKind,
    pub rng_seed: u64,
}

impl ToyTaskConfig {
    /// Two related but not identical regression tasks on a shared parameter
    /// vector. Targets carry noise, so neither loss reaches zero.
    pub fn random(dim: usize, rows: usize, epochs: usize, lr: f64, scheduler: SchedulerKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
        let w_true = DVector::from_vec(draw(dim));
        let w_offset = DVector::from_vec(draw(dim)) * 0.3;
        let mut task = |w: &DVector<f64>, noise: f64, scale: f64| {
            let design = DMatrix::from_vec(rows, dim, draw(rows * dim));
            let target = &design * w + DVector::from_vec(draw(rows)) * noise;
            QuadraticTask { design, target, scale }
        };
        let sl = task(&w_true, 0.5, 1.0);
        let disp = task(&(&w_true + &w_offset), 1.0, 2.0);
        Self {
            sl,
            disp,
            epochs,
            lr,
            scheduler,
            rng_seed: seed,
        }
    }

    /// Both tasks identical (same design, target and scale).
    pub fn identical(dim: usize, rows: usize, epochs: usize, lr: f64, scheduler: SchedulerKind, seed: u64) -> Self {
        let mut cfg = Self::random(dim, rows, epochs, lr, scheduler, seed);
        cfg.disp = cfg.sl.clone();
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_sl: f64,
    pub l_disp: f64,
    pub lambda_sl: f64,
    pub lambda_disp: f64,
    pub eta_sl: f64,
    pub eta_disp: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCurves {
    pub records: Vec<EpochRecord>,
    pub params: DVector<f64>,
}

pub const CURVES_HEADER: &str = "epoch,L_sl,L_disp,lambda_sl,lambda_disp,eta_sl,eta_disp,total";

impl TrainingCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVES_HEADER);
        out.push('\n');
        for r in &self.records {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.l_sl, r.l_disp, r.lambda_sl, r.lambda_disp, r.eta_sl, r.eta_disp, r.total
            )
            .expect("writing to a String");
        }
        out
    }
}

const DIVERGENCE_LIMIT: f64 = 1e12;

/// Full-batch gradient descent on the shared parameters, one step per
/// epoch, with weights recomputed once per epoch by the scheduler.
pub fn toy_two_task_train(cfg: &ToyTaskConfig) -> Result<TrainingCurves> {
    cfg.scheduler.validate()?;
    if !(cfg.lr > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    if !(cfg.sl.scale > 0.0 && cfg.disp.scale > 0.0) {
        return Err(Error::Config("task scales must be positive".into()));
    }
    if cfg.sl.design.ncols() != cfg.disp.design.ncols() {
        return Err(Error::Shape("tasks disagree on parameter dimension".into()));
    }
    let mut w = DVector::zeros(cfg.sl.design.ncols());
    let mut history = LossHistory::new();
    let mut unc = match cfg.scheduler {
        SchedulerKind::Uncertainty {
            lambda5,
            eta_sl,
            eta_disp,
            ..
        } => Some(UncertaintyState {
            eta_sl,
            eta_disp,
            lambda5,
        }),
        _ => None,
    };
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (l_sl, l_disp) = (cfg.sl.loss(&w), cfg.disp.loss(&w));
        let (lambda_sl, lambda_disp, total) = match cfg.scheduler {
            SchedulerKind::Constant { lambda2 } => (lambda2, 1.0, combine_constant(l_sl, l_disp, lambda2)?),
            SchedulerKind::EpochRatio {
                zeta1,
                zeta2,
                normalization,
            } => {
                let weights = epoch_ratio_weights_with(&history, zeta1, zeta2, normalization)?;
                (weights.0, weights.1, combine_epoch_ratio(l_sl, l_disp, weights))
            }
            SchedulerKind::Uncertainty { .. } => {
                let state = unc.expect("uncertainty state");
                let (a, b) = state.weights();
                (a, b, state.combine(l_sl, l_disp))
            }
        };
        let (eta_sl, eta_disp) = unc.map_or((0.0, 0.0), |s| (s.eta_sl, s.eta_disp));
        if !total.is_finite() || total.abs() > DIVERGENCE_LIMIT || l_sl > DIVERGENCE_LIMIT || l_disp > DIVERGENCE_LIMIT
        {
            return Err(Error::Diverged {
                epoch,
                loss: total.abs().max(l_sl).max(l_disp),
            });
        }
        records.push(EpochRecord {
            epoch,
            l_sl,
            l_disp,
            lambda_sl,
            lambda_disp,
            eta_sl,
            eta_disp,
            total,
        });

        let grad = cfg.sl.grad(&w) * lambda_sl + cfg.disp.grad(&w) * lambda_disp;
        w -= grad * cfg.lr;
        if let (Some(state), SchedulerKind::Uncertainty { lr, .. }) = (unc.as_mut(), cfg.scheduler) {
            *state = uncertainty_grad_step(*state, l_sl, l_disp, lr);
        }
        history.push(l_sl, l_disp);
    }
    Ok(TrainingCurves { records, params: w })
}
