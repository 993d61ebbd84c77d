//! Epsilon-insensitive support vector regression trained by sequential
//! minimal optimization, with per-fit standardization and leave-one-out
//! evaluation.
//!
//! The dual is solved in the standard 2n-variable form: for every training
//! point there is a pair of multipliers (alpha, alpha*) in [0, C], the
//! model coefficient is beta = alpha - alpha*, and the single equality
//! constraint is sum(beta) = 0. Working pairs are chosen by maximal KKT
//! violation with the lowest index winning ties, so training is fully
//! deterministic.
//!
//! Missing feature values are passed as NaN and imputed with the fitting
//! data's column mean before standardization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const TAU: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum RegressionError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("row {row} has {got} columns, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("{0} targets for {1} rows")]
    TargetLength(usize, usize),
    #[error("target {index} = {value} is outside [0, 1]")]
    TargetOutOfRange { index: usize, value: f64 },
    #[error("invalid hyperparameter: {0}")]
    InvalidParam(String),
    #[error("infinite feature value at row {0}")]
    NonFinite(usize),
    #[error("model format version {0} is not supported")]
    UnsupportedVersion(u32),
    #[error("model decode error: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: KernelKind,
    /// RBF width; `None` means 1 / number of features.
    pub gamma: Option<f64>,
    /// Stopping threshold on the maximal KKT violation.
    pub tolerance: f64,
    /// Iteration cap; `None` means max(100_000, 100 * n).
    pub max_iter: Option<usize>,
}

impl Default for SvrParams {
    fn default() -> Self {
        SvrParams {
            c: 1.0,
            epsilon: 0.05,
            kernel: KernelKind::Rbf,
            gamma: None,
            tolerance: 1e-3,
            max_iter: None,
        }
    }
}

impl SvrParams {
    pub fn check(&self) -> Result<(), RegressionError> {
        let bad = |what: &str| Err(RegressionError::InvalidParam(what.to_string()));
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("C must be positive");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be non-negative");
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad("gamma must be positive");
            }
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return bad("tolerance must be positive");
        }
        if self.max_iter == Some(0) {
            return bad("max_iter must be positive");
        }
        Ok(())
    }

    fn resolved_gamma(&self, dims: usize) -> f64 {
        self.gamma.unwrap_or(1.0 / dims.max(1) as f64)
    }
}

/// Column moments of the fitting data. A zero `std` marks a constant
/// column, which standardizes to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn check_rows(x: &[Vec<f64>], needed: usize) -> Result<usize, RegressionError> {
    if x.len() < needed {
        return Err(RegressionError::TooFewRows { needed, got: x.len() });
    }
    let width = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != width {
            return Err(RegressionError::Ragged {
                row: i,
                got: row.len(),
                expected: width,
            });
        }
        if row.iter().any(|v| v.is_infinite()) {
            return Err(RegressionError::NonFinite(i));
        }
    }
    Ok(width)
}

impl Standardizer {
    /// Fits population mean and standard deviation per column. NaN entries
    /// count as missing: they are excluded from the mean and imputed with it.
    pub fn fit(x: &[Vec<f64>]) -> Result<Standardizer, RegressionError> {
        let width = check_rows(x, 2)?;
        let mut mean = vec![0.0; width];
        let mut std = vec![0.0; width];
        for col in 0..width {
            let present: Vec<f64> = x.iter().map(|r| r[col]).filter(|v| !v.is_nan()).collect();
            if present.is_empty() || present.iter().all(|&v| v == present[0]) {
                mean[col] = present.first().copied().unwrap_or(0.0);
                continue;
            }
            let m = present.iter().sum::<f64>() / present.len() as f64;
            // Imputed entries sit exactly on the mean and add nothing.
            let ss: f64 = present.iter().map(|v| (v - m) * (v - m)).sum();
            mean[col] = m;
            std[col] = (ss / x.len() as f64).sqrt();
        }
        Ok(Standardizer { mean, std })
    }

    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.std.len()).filter(|&c| self.std[c] == 0.0).collect()
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| if v.is_nan() || s == 0.0 { 0.0 } else { (v - m) / s })
            .collect()
    }

    pub fn apply(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter().map(|r| self.apply_row(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    pub fn matrix(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = x.len();
        let mut k = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(&x[i], &x[j]);
                k[i][j] = v;
                k[j][i] = v;
            }
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// beta_i = alpha_i - alpha*_i per training point.
    pub beta: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Maximal KKT violation at exit.
    pub kkt_gap: f64,
}

/// Dual objective in maximization form:
/// sum(y*beta) - eps*sum|beta| - 1/2 beta' K beta.
pub fn dual_objective(k: &[Vec<f64>], y: &[f64], beta: &[f64], epsilon: f64) -> f64 {
    let n = beta.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += beta[i] * beta[j] * k[i][j];
        }
    }
    let lin: f64 = (0..n).map(|i| y[i] * beta[i] - epsilon * beta[i].abs()).sum();
    lin - 0.5 * quad
}

/// Solves the epsilon-SVR dual for a precomputed kernel matrix.
pub fn solve_dual(k: &[Vec<f64>], y: &[f64], c: f64, epsilon: f64, tolerance: f64, max_iter: usize) -> DualSolution {
    let n = y.len();
    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |t: usize, u: usize| sign(t) * sign(u) * k[t % n][u % n];

    let mut alpha = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| if t < n { epsilon - y[t] } else { epsilon + y[t - n] })
        .collect();
    let in_up = |a: f64, s: f64| if s > 0.0 { a < c } else { a > 0.0 };
    let in_low = |a: f64, s: f64| if s > 0.0 { a > 0.0 } else { a < c };

    let mut iterations = 0;
    let mut converged = false;
    let mut kkt_gap = f64::INFINITY;
    while iterations < max_iter {
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        let mut g_min = f64::INFINITY;
        for t in 0..l {
            let s = sign(t);
            let v = -s * grad[t];
            if in_up(alpha[t], s) && v > g_max {
                g_max = v;
                i = t;
            }
            if in_low(alpha[t], s) && v < g_min {
                g_min = v;
                j = t;
            }
        }
        kkt_gap = g_max - g_min;
        if i == usize::MAX || j == usize::MAX || kkt_gap < tolerance {
            converged = true;
            if i == usize::MAX || j == usize::MAX {
                kkt_gap = 0.0;
            }
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (qii, qjj, qij) = (q(i, i), q(j, j), q(i, j));
        if sign(i) != sign(j) {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }

    // Bias from free multipliers, or the midpoint of the feasible interval
    // when every multiplier sits at a bound.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut n_free) = (0.0, 0usize);
    for t in 0..l {
        let s = sign(t);
        let yg = s * grad[t];
        if alpha[t] >= c {
            if s < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if s > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else {
        (ub + lb) / 2.0
    };

    DualSolution {
        beta: (0..n).map(|i| alpha[i] - alpha[i + n]).collect(),
        bias: -rho,
        iterations,
        converged,
        kkt_gap,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub format_version: u32,
    pub params: SvrParams,
    pub kernel: Kernel,
    pub standardizer: Standardizer,
    /// Training-row indices of the support vectors.
    pub support_indices: Vec<usize>,
    /// Standardized support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// beta for each support vector.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Some training feature value was missing and imputed.
    pub imputed: bool,
}

impl SvrModel {
    /// Raw decision value f(x) = sum beta_i k(x_i, x) + b for a raw
    /// (unstandardized) feature row.
    pub fn decision_value(&self, row: &[f64]) -> f64 {
        let z = self.standardizer.apply_row(row);
        self.decision_value_standardized(&z)
    }

    pub fn decision_value_standardized(&self, z: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, beta)| beta * self.kernel.eval(sv, z))
            .sum::<f64>()
            + self.bias
    }

    /// Predicted score, clamped to [0, 1].
    pub fn predict(&self, row: &[f64]) -> f64 {
        clamp_score(self.decision_value(row))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<SvrModel, RegressionError> {
        let model: SvrModel = serde_json::from_str(text).map_err(|e| RegressionError::Decode(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(RegressionError::UnsupportedVersion(model.format_version));
        }
        Ok(model)
    }
}

pub fn clamp_score(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Standardizes `x` on itself and fits the SVR.
pub fn svr_train(x: &[Vec<f64>], y: &[f64], params: &SvrParams) -> Result<SvrModel, RegressionError> {
    params.check()?;
    let width = check_rows(x, 2)?;
    if y.len() != x.len() {
        return Err(RegressionError::TargetLength(y.len(), x.len()));
    }
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(RegressionError::TargetOutOfRange { index, value });
    }
    let standardizer = Standardizer::fit(x)?;
    let z = standardizer.apply(x);
    let kernel = match params.kernel {
        KernelKind::Rbf => Kernel::Rbf {
            gamma: params.resolved_gamma(width),
        },
        KernelKind::Linear => Kernel::Linear,
    };
    let k = kernel.matrix(&z);
    let max_iter = params.max_iter.unwrap_or_else(|| (100 * x.len()).max(100_000));
    let sol = solve_dual(&k, y, params.c, params.epsilon, params.tolerance, max_iter);
    if !sol.converged {
        log::warn!(
            "SMO stopped after {} iterations with KKT gap {:.3e}",
            sol.iterations,
            sol.kkt_gap
        );
    }
    let support_indices: Vec<usize> = (0..x.len()).filter(|&i| sol.beta[i] != 0.0).collect();
    Ok(SvrModel {
        format_version: MODEL_FORMAT_VERSION,
        params: *params,
        kernel,
        standardizer,
        support_vectors: support_indices.iter().map(|&i| z[i].clone()).collect(),
        coefficients: support_indices.iter().map(|&i| sol.beta[i]).collect(),
        support_indices,
        bias: sol.bias,
        converged: sol.converged,
        iterations: sol.iterations,
        imputed: x.iter().flatten().any(|v| v.is_nan()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub dialogue_id: String,
    pub actual: f64,
    pub predicted: f64,
}

impl Prediction {
    pub fn abs_error(&self) -> f64 {
        (self.predicted - self.actual).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    /// Held-out predictions ordered by dialogue id.
    pub predictions: Vec<Prediction>,
    pub mae: f64,
    /// Every fold's solver converged.
    pub converged: bool,
    /// Some fold imputed a missing feature value.
    pub imputed: bool,
}

fn finish(mut predictions: Vec<Prediction>, converged: bool, imputed: bool) -> EvaluationResult {
    predictions.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id));
    let (p, a): (Vec<f64>, Vec<f64>) = predictions.iter().map(|p| (p.predicted, p.actual)).unzip();
    let mae = stats::mae(&p, &a).expect("at least one fold");
    EvaluationResult {
        predictions,
        mae,
        converged,
        imputed,
    }
}

fn check_fold_input(ids: &[String], x: &[Vec<f64>], y: &[f64]) -> Result<(), RegressionError> {
    check_rows(x, 3)?;
    if y.len() != x.len() || ids.len() != x.len() {
        return Err(RegressionError::TargetLength(y.len(), x.len()));
    }
    Ok(())
}

/// The model trained with row `held_out` removed. Standardization is fitted
/// on the remaining rows only.
pub fn fold_model(x: &[Vec<f64>], y: &[f64], held_out: usize, params: &SvrParams) -> Result<SvrModel, RegressionError> {
    let keep = |i: &usize| *i != held_out;
    let xs: Vec<Vec<f64>> = (0..x.len()).filter(keep).map(|i| x[i].clone()).collect();
    let ys: Vec<f64> = (0..y.len()).filter(keep).map(|i| y[i]).collect();
    svr_train(&xs, &ys, params)
}

/// Leave-one-out cross-validation of the SVR.
pub fn loocv(
    ids: &[String],
    x: &[Vec<f64>],
    y: &[f64],
    params: &SvrParams,
) -> Result<EvaluationResult, RegressionError> {
    check_fold_input(ids, x, y)?;
    let mut predictions = Vec::with_capacity(x.len());
    let (mut converged, mut imputed) = (true, false);
    for i in 0..x.len() {
        let model = fold_model(x, y, i, params)?;
        converged &= model.converged;
        imputed |= model.imputed || x[i].iter().any(|v| v.is_nan());
        predictions.push(Prediction {
            dialogue_id: ids[i].clone(),
            actual: y[i],
            predicted: model.predict(&x[i]),
        });
    }
    Ok(finish(predictions, converged, imputed))
}

/// Leave-one-out baseline that predicts the mean of the training fold.
pub fn mean_baseline_loocv(ids: &[String], y: &[f64]) -> Result<EvaluationResult, RegressionError> {
    if y.len() < 3 {
        return Err(RegressionError::TooFewRows {
            needed: 3,
            got: y.len(),
        });
    }
    if ids.len() != y.len() {
        return Err(RegressionError::TargetLength(y.len(), ids.len()));
    }
    let total: f64 = y.iter().sum();
    let n = y.len() as f64;
    let predictions = (0..y.len())
        .map(|i| Prediction {
            dialogue_id: ids[i].clone(),
            actual: y[i],
            predicted: (total - y[i]) / (n - 1.0),
        })
        .collect();
    Ok(finish(predictions, true, false))
}
