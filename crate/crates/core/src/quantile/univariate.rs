//! One-dimensional quantiles: a kernel plug-in estimate and its one-step
//! correction `q̂ + ((1 − α) − F_n(q̂)) / f̂(q̂)`.
//!
//! The kernel density is fitted on `ln s` when every score is positive, which
//! keeps the estimate supported on the positive half-line.

use crate::error::{Error, Result};
use crate::stats::{mean, norm_cdf, norm_pdf, std_dev};

#[derive(Debug, Clone)]
pub struct ScoreKde {
    points: Vec<f64>,
    h: f64,
    log_scale: bool,
}

impl ScoreKde {
    /// Normal-reference bandwidth `1.06 σ̂ n^(−1/5)`.
    pub fn fit(scores: &[f64]) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::InsufficientData {
                what: "kernel quantile",
                needed: 2,
                got: scores.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore);
        }
        let log_scale = scores.iter().all(|&s| s > 0.0);
        let points: Vec<f64> = if log_scale {
            scores.iter().map(|s| s.ln()).collect()
        } else {
            scores.to_vec()
        };
        let sd = std_dev(&points);
        let spread = if sd > 0.0 { sd } else { mean(&points).abs().max(1.0) * 1e-3 };
        let h = 1.06 * spread * (points.len() as f64).powf(-0.2);
        Ok(Self { points, h, log_scale })
    }

    fn transform(&self, q: f64) -> Option<f64> {
        if self.log_scale {
            (q > 0.0).then(|| q.ln())
        } else {
            Some(q)
        }
    }

    pub fn cdf(&self, q: f64) -> f64 {
        match self.transform(q) {
            None => 0.0,
            Some(t) => self.points.iter().map(|&p| norm_cdf((t - p) / self.h)).sum::<f64>() / self.points.len() as f64,
        }
    }

    pub fn pdf(&self, q: f64) -> f64 {
        match self.transform(q) {
            None => 0.0,
            Some(t) => {
                let dens = self.points.iter().map(|&p| norm_pdf((t - p) / self.h)).sum::<f64>()
                    / (self.points.len() as f64 * self.h);
                if self.log_scale {
                    dens / q
                } else {
                    dens
                }
            }
        }
    }

    pub fn quantile(&self, level: f64) -> f64 {
        let min = self.points.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.points.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (min - 12.0 * self.h, max + 12.0 * self.h);
        let cdf_t = |t: f64| self.points.iter().map(|&p| norm_cdf((t - p) / self.h)).sum::<f64>() / self.points.len() as f64;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf_t(mid) < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        if self.log_scale {
            t.exp()
        } else {
            t
        }
    }
}

/// Kernel plug-in estimate of the `1 − α` quantile.
pub fn plug_in_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    Ok(ScoreKde::fit(scores)?.quantile(1.0 - alpha))
}

/// One-step corrected quantile using the empirical CDF with denominator `n`.
pub fn one_step_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    let kde = ScoreKde::fit(scores)?;
    let q = kde.quantile(1.0 - alpha);
    let f = kde.pdf(q);
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::DegenerateLevelCurve);
    }
    let fn_q = scores.iter().filter(|&&s| s <= q).count() as f64 / scores.len() as f64;
    Ok(q + ((1.0 - alpha) - fn_q) / f)
}
