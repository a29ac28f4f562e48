//! Calibration schemes, prediction sets and their evaluation.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::copulas::{fit_copula, CopulaModel, EmpiricalCopula, VineOptions};
use crate::error::{Error, Result};
use crate::marginals::{fit_ecdfs, pit_transform, MarginalEcdf, PseudoObservations};
use crate::quantile::{estimate_quantile, grad_cdf, one_step, Norm, QuantileOptions, QuantileResult};
use crate::stats::conformal_rank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    AbsoluteResidual,
}

/// n×d non-negative scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: Array2<f64>,
    kind: ScoreKind,
}

impl ScoreMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFiniteScore);
        }
        Ok(Self {
            values,
            kind: ScoreKind::AbsoluteResidual,
        })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }
}

/// `|prediction − label|` elementwise.
pub fn compute_scores(predictions: ArrayView2<'_, f64>, labels: ArrayView2<'_, f64>) -> Result<ScoreMatrix> {
    if predictions.dim() != labels.dim() {
        return Err(Error::DimensionMismatch {
            expected: predictions.ncols(),
            found: labels.ncols(),
        });
    }
    if predictions.iter().chain(labels.iter()).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("predictions or labels"));
    }
    ScoreMatrix::new((&predictions - &labels).mapv(f64::abs))
}

#[derive(Debug, Clone, Default)]
pub struct SemiparametricConfig {
    pub vine: VineOptions,
    pub quantile: QuantileOptions,
}

/// ECDFs, pseudo-observations, copula fit, level-curve quantile, optional
/// one-step correction and inverse transform.
pub fn calibrate_semiparametric(
    scores: &ScoreMatrix,
    alpha: f64,
    config: &SemiparametricConfig,
) -> Result<QuantileResult> {
    let ecdfs = fit_ecdfs(scores.view())?;
    let pseudo = pit_transform(&ecdfs, scores.view())?;
    let copula = fit_copula(&pseudo, &config.vine)?;
    estimate_quantile(&copula, &pseudo, &ecdfs, alpha, &config.quantile)
}

#[derive(Debug, Clone)]
pub struct SplitConfig {
    /// Share of the calibration rows used for the marginal ECDFs.
    pub fraction: f64,
    pub correct: bool,
    pub fd_step: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fraction: 0.5,
            correct: false,
            fd_step: crate::quantile::DEFAULT_FD_STEP,
        }
    }
}

pub const MIN_SPLIT_SIZE: usize = 10;

/// Largest score whose ECDF value is at most `u`, plus one: the smallest
/// score strictly above every score with `F(s) ≤ u`. +∞ past the end.
fn upper_inverse(ecdf: &MarginalEcdf, u: f64) -> f64 {
    let n = ecdf.n() as f64;
    let k = (u * (n + 1.0) + 1e-9).floor().max(0.0) as usize;
    ecdf.order_statistic(k + 1)
}

/// Split variant: ECDFs on the first part of the calibration rows, the
/// empirical copula of the second part, and the diagonal point at the
/// finite-sample adjusted level `⌈(1−α)(n′+1)⌉ / (n′+1)`.
pub fn calibrate_split(scores: &ScoreMatrix, alpha: f64, config: &SplitConfig) -> Result<QuantileResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(config.fraction > 0.0 && config.fraction < 1.0) {
        return Err(Error::invalid("split fraction must lie in (0, 1)"));
    }
    let n = scores.n();
    let d = scores.dim();
    let n1 = (config.fraction * n as f64).floor() as usize;
    let n2 = n - n1;
    if n1 < MIN_SPLIT_SIZE || n2 < MIN_SPLIT_SIZE {
        return Err(Error::InsufficientData {
            what: "split calibration (each part)",
            needed: MIN_SPLIT_SIZE,
            got: n1.min(n2),
        });
    }
    let view = scores.view();
    let ecdfs = fit_ecdfs(view.slice(s![..n1, ..]))?;
    let pseudo = pit_transform(&ecdfs, view.slice(s![n1.., ..]))?;

    let k = conformal_rank(1.0 - alpha, n2);
    if k > n2 {
        log::warn!("adjusted level exceeds {n2}/{}; prediction set is unbounded", n2 + 1);
        return Ok(QuantileResult {
            u_star: vec![1.0; d],
            u_one_step: None,
            gradient: vec![0.0; d],
            q_scores: vec![f64::INFINITY; d],
            alpha,
            norm: Norm::Linf,
        });
    }
    let mut maxima: Vec<f64> = pseudo
        .view()
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(0.0, f64::max))
        .collect();
    maxima.sort_by(f64::total_cmp);
    let t = maxima[k - 1];
    let u_star = vec![t; d];

    let copula = CopulaModel::Empirical(EmpiricalCopula::new(&pseudo));
    let gradient = grad_cdf(&copula, &u_star, config.fd_step)?;
    let u_one_step = if config.correct {
        Some(one_step(&u_star, &pseudo, &gradient, alpha)?)
    } else {
        None
    };
    let point = u_one_step.as_deref().unwrap_or(&u_star);
    let q_scores = point.iter().zip(&ecdfs).map(|(&u, e)| upper_inverse(e, u)).collect();
    Ok(QuantileResult {
        u_star,
        u_one_step,
        gradient,
        q_scores,
        alpha,
        norm: Norm::Linf,
    })
}

/// Per-target split conformal quantile at level `(1−α)^(1/d)`.
pub fn calibrate_independent(scores: &ScoreMatrix, alpha: f64) -> Result<Vec<f64>> {
    if scores.n() == 0 {
        return Err(Error::EmptyColumn);
    }
    let level = (1.0 - alpha).powf(1.0 / scores.dim() as f64);
    let ecdfs = fit_ecdfs(scores.view())?;
    let k = conformal_rank(level, scores.n());
    Ok(ecdfs.iter().map(|e| e.order_statistic(k)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarNorm {
    L1,
    L2,
    Linf,
}

impl ScalarNorm {
    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            ScalarNorm::L1 => v.iter().map(|x| x.abs()).sum(),
            ScalarNorm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            ScalarNorm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

/// Split conformal radius of the residual norm.
pub fn calibrate_scalar(
    predictions: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
    alpha: f64,
    norm: ScalarNorm,
) -> Result<f64> {
    let scores = compute_scores(predictions, labels)?;
    if scores.n() == 0 {
        return Err(Error::EmptyColumn);
    }
    let mut radii: Vec<f64> = scores
        .view()
        .rows()
        .into_iter()
        .map(|r| norm.eval(r.as_slice().expect("standard layout")))
        .collect();
    radii.sort_by(f64::total_cmp);
    let k = conformal_rank(1.0 - alpha, radii.len());
    Ok(radii.get(k - 1).copied().unwrap_or(f64::INFINITY))
}

/// Smallest diagonal grid point `t = k/(n+1)` with `Ĉ_emp(t, …, t) ≥ 1 − α`,
/// mapped back through the ECDFs.
pub fn calibrate_empirical_copula_diagonal(scores: &ScoreMatrix, alpha: f64) -> Result<Vec<f64>> {
    let n = scores.n();
    let d = scores.dim();
    if n == 0 {
        return Err(Error::EmptyColumn);
    }
    let ecdfs = fit_ecdfs(scores.view())?;
    let pseudo = pit_transform(&ecdfs, scores.view())?;
    let maxima: Vec<f64> = pseudo
        .view()
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(0.0, f64::max))
        .collect();
    let level = 1.0 - alpha;
    for k in 1..=n {
        let t = k as f64 / (n as f64 + 1.0);
        let count = maxima.iter().filter(|&&m| m <= t).count();
        if count as f64 / n as f64 >= level - 1e-12 {
            return Ok(ecdfs.iter().map(|e| e.inverse(t)).collect());
        }
    }
    Ok(vec![f64::INFINITY; d])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Hyperrectangle {
        #[serde(with = "crate::report::extended_vec")]
        radii: Vec<f64>,
    },
    Ball {
        #[serde(with = "crate::report::extended")]
        radius: f64,
        norm: ScalarNorm,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub center: Vec<f64>,
    pub shape: Shape,
}

fn ln_factorial(d: usize) -> f64 {
    (1..=d).map(|k| (k as f64).ln()).sum()
}

impl PredictionSet {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        match &self.shape {
            Shape::Hyperrectangle { radii } => self
                .center
                .iter()
                .zip(y)
                .zip(radii)
                .all(|((c, v), r)| (v - c).abs() <= *r),
            Shape::Ball { radius, norm } => {
                let diff: Vec<f64> = self.center.iter().zip(y).map(|(c, v)| v - c).collect();
                norm.eval(&diff) <= *radius
            }
        }
    }

    pub fn log_volume(&self) -> f64 {
        let d = self.dim() as f64;
        match &self.shape {
            Shape::Hyperrectangle { radii } => {
                if radii.iter().any(|r| r.is_infinite()) {
                    f64::INFINITY
                } else {
                    radii.iter().map(|r| (2.0 * r).ln()).sum()
                }
            }
            Shape::Ball { radius, norm } => {
                if radius.is_infinite() {
                    return f64::INFINITY;
                }
                match norm {
                    ScalarNorm::L2 => {
                        0.5 * d * std::f64::consts::PI.ln() - statrs::function::gamma::ln_gamma(0.5 * d + 1.0)
                            + d * radius.ln()
                    }
                    ScalarNorm::L1 => d * (2.0 * radius).ln() - ln_factorial(self.dim()),
                    ScalarNorm::Linf => d * (2.0 * radius).ln(),
                }
            }
        }
    }
}

pub fn form_prediction_set(center: &[f64], quantile: &[f64]) -> PredictionSet {
    PredictionSet {
        center: center.to_vec(),
        shape: Shape::Hyperrectangle {
            radii: quantile.to_vec(),
        },
    }
}

/// Coverage and mean log-volume over paired sets and labels.
pub fn evaluate(sets: &[PredictionSet], labels: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    if sets.len() != labels.nrows() {
        return Err(Error::DimensionMismatch {
            expected: sets.len(),
            found: labels.nrows(),
        });
    }
    if sets.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let mut covered = 0usize;
    let mut volume = 0.0;
    for (set, row) in sets.iter().zip(labels.rows()) {
        let y = row.to_vec();
        if set.contains(&y) {
            covered += 1;
        }
        volume += set.log_volume();
    }
    let m = sets.len() as f64;
    Ok((covered as f64 / m, volume / m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub scheme: String,
    pub alpha: f64,
    pub n_cal: usize,
    pub seed: u64,
    #[serde(with = "crate::report::extended")]
    pub coverage: f64,
    #[serde(with = "crate::report::extended")]
    pub efficiency: f64,
    #[serde(with = "crate::report::extended_vec")]
    pub quantile: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<QuantileResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_ms: f64,
}

/// Pseudo-observations of held-out scores under already fitted ECDFs.
pub fn pseudo_observations(ecdfs: &[MarginalEcdf], scores: &ScoreMatrix) -> Result<PseudoObservations> {
    pit_transform(ecdfs, scores.view())
}
