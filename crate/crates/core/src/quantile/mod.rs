//! Multivariate quantiles on copula level curves with a one-step
//! influence-function correction.

pub mod cmaes;
pub mod univariate;

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::copulas::CopulaModel;
use crate::error::{Error, Result};
use crate::marginals::{inverse_ecdf, MarginalEcdf, PseudoObservations};
use cmaes::{minimize, CmaesOptions};

pub const DEFAULT_FD_STEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L1,
    Linf,
}

impl Norm {
    pub fn eval(self, u: &[f64]) -> f64 {
        match self {
            Norm::L1 => u.iter().map(|x| x.abs()).sum(),
            Norm::Linf => u.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "linf" | "l_inf" | "inf" => Ok(Norm::Linf),
            other => Err(format!("unknown norm `{other}` (expected l1 or linf)")),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::Linf => "linf",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LevelCurveOptions {
    pub cmaes: CmaesOptions,
    /// Penalty weight per dimension on the constraint violation.
    pub penalty_per_dim: f64,
    /// Step along the all-ones direction used by the feasibility repair.
    pub repair_step: f64,
}

impl Default for LevelCurveOptions {
    fn default() -> Self {
        Self {
            cmaes: CmaesOptions::default(),
            penalty_per_dim: 100.0,
            repair_step: 1e-3,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Minimizes `norm(U)` subject to `cdf(U) ≥ 1 − α` for an arbitrary CDF on
/// the unit cube.
pub fn optimize_level_curve_with(
    dim: usize,
    cdf: impl Fn(&[f64]) -> f64,
    alpha: f64,
    norm: Norm,
    options: &LevelCurveOptions,
) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let level = 1.0 - alpha;
    if dim == 1 {
        return Ok(vec![level]);
    }
    let penalty = options.penalty_per_dim * dim as f64;
    let best_feasible: RefCell<Option<(f64, Vec<f64>)>> = RefCell::new(None);
    let objective = |u: &[f64]| {
        let c = cdf(u);
        let size = norm.eval(u);
        let mut best = best_feasible.borrow_mut();
        if c >= level && best.as_ref().is_none_or(|(b, _)| size < *b) {
            *best = Some((size, u.to_vec()));
        }
        size + penalty * (level - c).max(0.0)
    };

    let x0 = vec![level.powf(1.0 / dim as f64); dim];
    let first = minimize(&x0, &options.cmaes, objective);
    let restart_from = best_feasible
        .borrow()
        .as_ref()
        .map(|(_, u)| u.clone())
        .unwrap_or_else(|| first.best_x.clone());
    let restart_opts = CmaesOptions {
        seed: options.cmaes.seed.wrapping_add(1),
        ..options.cmaes.clone()
    };
    let second = minimize(&restart_from, &restart_opts, objective);

    let mut u = match best_feasible.into_inner() {
        Some((_, u)) => u,
        None if second.best_f <= first.best_f => second.best_x,
        None => first.best_x,
    };
    let max_steps = (1.0 / options.repair_step).ceil() as usize + 1;
    for _ in 0..max_steps {
        if cdf(&u) >= level {
            return Ok(u);
        }
        for x in &mut u {
            *x = (*x + options.repair_step).min(1.0);
        }
    }
    if cdf(&u) >= level {
        Ok(u)
    } else {
        Err(Error::LevelCurveUnreachable)
    }
}

/// Seed offset for the independent cache used by [`relevel`].
const HOLDOUT_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Shifts `u` along the all-ones direction to the smallest shift whose
/// `cdf` reaches `level`.
fn relevel(u: &[f64], cdf: impl Fn(&[f64]) -> f64, level: f64) -> Vec<f64> {
    let shifted = |t: f64| -> Vec<f64> { u.iter().map(|x| (x + t).min(1.0)).collect() };
    let min = u.iter().copied().fold(1.0, f64::min);
    let (mut lo, mut hi) = (-0.5 * min, 1.0 - min);
    if cdf(&shifted(lo)) >= level {
        return shifted(lo);
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if cdf(&shifted(mid)) >= level {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    shifted(hi)
}

/// `U* = argmin ‖U‖ subject to Ĉ(U) ≥ 1 − α`. If a Monte Carlo CDF cannot
/// reach the level, the search is retried once with four times the samples.
///
/// With a Monte Carlo CDF the search favours points where its sample happens
/// to over-count, so the optimum is finally shifted onto the level set of an
/// independently drawn sample of the same size.
pub fn optimize_level_curve(
    copula: &CopulaModel,
    alpha: f64,
    norm: Norm,
    options: &LevelCurveOptions,
) -> Result<Vec<f64>> {
    let d = copula.dim();
    let (u, used) = match optimize_level_curve_with(d, |u| copula.cdf(u), alpha, norm, options) {
        Err(Error::LevelCurveUnreachable) => match copula.mc_samples() {
            Some(n) => {
                log::warn!("level curve unreachable with {n} samples; retrying with {}", 4 * n);
                let bigger = copula.with_mc_samples(4 * n);
                let u = optimize_level_curve_with(d, |u| bigger.cdf(u), alpha, norm, options)?;
                (u, bigger)
            }
            None => return Err(Error::LevelCurveUnreachable),
        },
        Err(e) => return Err(e),
        Ok(u) => (u, copula.clone()),
    };
    match used {
        CopulaModel::Vine(ref v) if used.mc_samples().is_some() => {
            let holdout = used.with_mc_seed(v.mc_seed() ^ HOLDOUT_SEED);
            Ok(relevel(&u, |x| holdout.cdf(x), 1.0 - alpha))
        }
        _ => Ok(u),
    }
}

/// Central finite differences, one-sided where `u ± h` would leave [0, 1].
pub fn grad_cdf_with(cdf: impl Fn(&[f64]) -> f64, u: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut x = u.to_vec();
    let mut grad = Vec::with_capacity(u.len());
    for j in 0..u.len() {
        let hi = (u[j] + h).min(1.0);
        let lo = (u[j] - h).max(0.0);
        x[j] = hi;
        let up = cdf(&x);
        x[j] = lo;
        let down = cdf(&x);
        x[j] = u[j];
        let g = (up - down) / (hi - lo);
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(j));
        }
        grad.push(g);
    }
    Ok(grad)
}

pub fn grad_cdf(copula: &CopulaModel, u: &[f64], h: f64) -> Result<Vec<f64>> {
    grad_cdf_with(|x| copula.cdf(x), u, h)
}

fn dominated(u: &[f64], bound: &[f64]) -> bool {
    u.iter().zip(bound).all(|(a, b)| a <= b)
}

fn eif_scale(grad: &[f64]) -> Result<f64> {
    let sq: f64 = grad.iter().map(|g| g * g).sum();
    if sq > 0.0 && sq.is_finite() {
        Ok(1.0 / sq)
    } else {
        Err(Error::DegenerateLevelCurve)
    }
}

/// `ψ(ũ) = ((1 − α) − 1[ũ ≼ U*]) / ‖∇Ĉ(U*)‖² · ∇Ĉ(U*)`.
pub fn eif(u_obs: &[f64], u_star: &[f64], grad: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let scale = eif_scale(grad)?;
    let ind = if dominated(u_obs, u_star) { 1.0 } else { 0.0 };
    let coef = ((1.0 - alpha) - ind) * scale;
    Ok(grad.iter().map(|g| coef * g).collect())
}

/// `U* + mean ψ(U⁽ⁱ⁾)`, clamped to `[1/(n+1), n/(n+1)]`.
pub fn one_step(
    u_star: &[f64],
    pseudo: &PseudoObservations,
    grad: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    if pseudo.dim() != u_star.len() {
        return Err(Error::DimensionMismatch {
            expected: u_star.len(),
            found: pseudo.dim(),
        });
    }
    let n = pseudo.n();
    if n == 0 {
        return Err(Error::InsufficientData {
            what: "one-step correction",
            needed: 1,
            got: 0,
        });
    }
    let scale = eif_scale(grad)?;
    let count = pseudo
        .view()
        .rows()
        .into_iter()
        .filter(|row| row.iter().zip(u_star).all(|(a, b)| a <= b))
        .count();
    let coef = ((1.0 - alpha) - count as f64 / n as f64) * scale;
    let lo = 1.0 / (n as f64 + 1.0);
    let hi = n as f64 / (n as f64 + 1.0);
    let mut clamped = false;
    let out = u_star
        .iter()
        .zip(grad)
        .map(|(u, g)| {
            let v = u + coef * g;
            let c = v.clamp(lo, hi);
            clamped |= c != v;
            c
        })
        .collect();
    if clamped {
        log::info!("one-step point clamped to [{lo:.4}, {hi:.4}]");
    }
    Ok(out)
}

/// Componentwise `F̂_j⁻¹(u_j)`; components past `n/(n+1)` map to +∞.
pub fn to_score_space(u: &[f64], ecdfs: &[MarginalEcdf]) -> Vec<f64> {
    u.iter().zip(ecdfs).map(|(&x, e)| inverse_ecdf(e, x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileResult {
    pub u_star: Vec<f64>,
    pub u_one_step: Option<Vec<f64>>,
    pub gradient: Vec<f64>,
    #[serde(with = "crate::report::extended_vec")]
    pub q_scores: Vec<f64>,
    pub alpha: f64,
    pub norm: Norm,
}

#[derive(Debug, Clone)]
pub struct QuantileOptions {
    pub norm: Norm,
    pub correct: bool,
    pub fd_step: f64,
    pub level_curve: LevelCurveOptions,
}

impl Default for QuantileOptions {
    fn default() -> Self {
        Self {
            norm: Norm::L1,
            correct: true,
            fd_step: DEFAULT_FD_STEP,
            level_curve: LevelCurveOptions::default(),
        }
    }
}

/// Plug-in level-curve point, optional one-step correction, and the
/// resulting score-space quantile.
pub fn estimate_quantile(
    copula: &CopulaModel,
    pseudo: &PseudoObservations,
    ecdfs: &[MarginalEcdf],
    alpha: f64,
    options: &QuantileOptions,
) -> Result<QuantileResult> {
    let u_star = optimize_level_curve(copula, alpha, options.norm, &options.level_curve)?;
    let gradient = grad_cdf(copula, &u_star, options.fd_step)?;
    let u_one_step = if options.correct {
        Some(one_step(&u_star, pseudo, &gradient, alpha)?)
    } else {
        None
    };
    let q_scores = to_score_space(u_one_step.as_deref().unwrap_or(&u_star), ecdfs);
    Ok(QuantileResult {
        u_star,
        u_one_step,
        gradient,
        q_scores,
        alpha,
        norm: options.norm,
    })
}
