//! Closed-form one-parameter bivariate copula families.
//!
//! Conventions for a copula `C(u, v)`:
//! - `cond_second(u, v) = ∂C/∂v = P(U ≤ u | V = v)`
//! - `inv_cond_second(w, v)` solves `cond_second(u, v) = w` for `u`.
//!
//! Every family here is exchangeable, so the first-argument conditional is the
//! same function with swapped arguments.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::stats::{bvn_cdf, debye1, norm_cdf, norm_pdf, norm_quantile};

/// Keeps arguments away from the boundary where closed forms over/underflow.
pub(crate) const EPS: f64 = 1e-12;

#[inline]
pub(crate) fn clamp01(u: f64) -> f64 {
    u.clamp(EPS, 1.0 - EPS)
}

const THETA_MAX: f64 = 50.0;
const RHO_MAX: f64 = 0.9995;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Independence,
    Gaussian,
    Gumbel,
    Clayton,
    Frank,
    Tkde,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Independence,
        Family::Gaussian,
        Family::Gumbel,
        Family::Clayton,
        Family::Frank,
        Family::Tkde,
    ];

    pub fn is_parametric(self) -> bool {
        matches!(
            self,
            Family::Gaussian | Family::Gumbel | Family::Clayton | Family::Frank
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Independence => "independence",
            Family::Gaussian => "gaussian",
            Family::Gumbel => "gumbel",
            Family::Clayton => "clayton",
            Family::Frank => "frank",
            Family::Tkde => "tkde",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown copula family `{s}`"))
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Rotation of a copula; 180° gives the survival copula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Rotation {
    #[default]
    #[serde(rename = "0")]
    None,
    #[serde(rename = "180")]
    Survival,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricCopula {
    pub family: Family,
    #[serde(default)]
    pub rotation: Rotation,
    pub theta: f64,
}

impl ParametricCopula {
    pub fn new(family: Family, theta: f64, rotation: Rotation) -> Self {
        debug_assert!(family.is_parametric());
        Self {
            family,
            rotation,
            theta,
        }
    }

    /// Parameter obtained by inverting Kendall's tau, `None` when `tau` lies
    /// outside the family's support.
    pub fn theta_from_tau(family: Family, tau: f64) -> Option<f64> {
        if !tau.is_finite() {
            return None;
        }
        match family {
            Family::Gaussian => Some((PI * tau / 2.0).sin().clamp(-RHO_MAX, RHO_MAX)),
            Family::Gumbel if tau >= 0.0 => Some((1.0 / (1.0 - tau)).min(THETA_MAX)),
            Family::Clayton if tau > 0.0 => Some((2.0 * tau / (1.0 - tau)).min(THETA_MAX)),
            Family::Frank if tau.abs() > 1e-10 => Some(frank_theta_from_tau(tau)),
            _ => None,
        }
    }

    /// Kendall's tau implied by the parameter (rotation by 180° preserves it).
    pub fn kendall_tau(&self) -> f64 {
        tau_from_theta(self.family, self.theta)
    }

    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        let (u, v) = (u.min(1.0), v.min(1.0));
        if u == 1.0 {
            return v;
        }
        if v == 1.0 {
            return u;
        }
        let c = match self.rotation {
            Rotation::None => base_cdf(self.family, self.theta, u, v),
            Rotation::Survival => u + v - 1.0 + base_cdf(self.family, self.theta, 1.0 - u, 1.0 - v),
        };
        c.clamp(0.0, u.min(v))
    }

    pub fn pdf(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp01(u), clamp01(v));
        match self.rotation {
            Rotation::None => base_pdf(self.family, self.theta, u, v),
            Rotation::Survival => base_pdf(self.family, self.theta, 1.0 - u, 1.0 - v),
        }
    }

    pub fn cond_second(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp01(u), clamp01(v));
        let h = match self.rotation {
            Rotation::None => base_h(self.family, self.theta, u, v),
            Rotation::Survival => 1.0 - base_h(self.family, self.theta, 1.0 - u, 1.0 - v),
        };
        h.clamp(0.0, 1.0)
    }

    pub fn inv_cond_second(&self, w: f64, v: f64) -> f64 {
        let (w, v) = (clamp01(w), clamp01(v));
        let u = match self.rotation {
            Rotation::None => base_hinv(self.family, self.theta, w, v),
            Rotation::Survival => 1.0 - base_hinv(self.family, self.theta, 1.0 - w, 1.0 - v),
        };
        u.clamp(0.0, 1.0)
    }
}

fn tau_from_theta(family: Family, theta: f64) -> f64 {
    match family {
        Family::Gaussian => 2.0 / PI * theta.asin(),
        Family::Gumbel => 1.0 - 1.0 / theta,
        Family::Clayton => theta / (theta + 2.0),
        Family::Frank => {
            if theta.abs() < 1e-8 {
                theta / 9.0
            } else {
                1.0 - 4.0 / theta * (1.0 - debye1(theta))
            }
        }
        Family::Independence | Family::Tkde => 0.0,
    }
}

fn frank_theta_from_tau(tau: f64) -> f64 {
    let target = tau.abs();
    let (mut lo, mut hi) = (1e-8, THETA_MAX);
    if tau_from_theta(Family::Frank, hi) <= target {
        return THETA_MAX.copysign(tau);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if tau_from_theta(Family::Frank, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).copysign(tau)
}

fn base_cdf(family: Family, theta: f64, u: f64, v: f64) -> f64 {
    match family {
        Family::Gaussian => bvn_cdf(norm_quantile(u), norm_quantile(v), theta),
        Family::Gumbel => {
            let s = (-u.ln()).powf(theta) + (-v.ln()).powf(theta);
            (-s.powf(1.0 / theta)).exp()
        }
        Family::Clayton => (u.powf(-theta) + v.powf(-theta) - 1.0)
            .max(0.0)
            .powf(-1.0 / theta),
        Family::Frank => {
            let num = (-theta * u).exp_m1() * (-theta * v).exp_m1();
            -(1.0 + num / (-theta).exp_m1()).ln() / theta
        }
        Family::Independence | Family::Tkde => u * v,
    }
}

fn base_pdf(family: Family, theta: f64, u: f64, v: f64) -> f64 {
    match family {
        Family::Gaussian => {
            let (x, y) = (norm_quantile(u), norm_quantile(v));
            let r2 = theta * theta;
            let q = (r2 * (x * x + y * y) - 2.0 * theta * x * y) / (2.0 * (1.0 - r2));
            (-q).exp() / (1.0 - r2).sqrt()
        }
        Family::Gumbel => {
            let (x, y) = (-u.ln(), -v.ln());
            let a = (x.powf(theta) + y.powf(theta)).powf(1.0 / theta);
            let c = (-a).exp();
            c * (x * y).powf(theta - 1.0) / (u * v) * a.powf(1.0 - 2.0 * theta) * (a + theta - 1.0)
        }
        Family::Clayton => {
            let t = u.powf(-theta) + v.powf(-theta) - 1.0;
            (1.0 + theta) * (u * v).powf(-theta - 1.0) * t.powf(-2.0 - 1.0 / theta)
        }
        Family::Frank => {
            let b = (-theta).exp_m1();
            let denom = b + (-theta * u).exp_m1() * (-theta * v).exp_m1();
            -theta * b * (-theta * (u + v)).exp() / (denom * denom)
        }
        Family::Independence | Family::Tkde => 1.0,
    }
}

fn base_h(family: Family, theta: f64, u: f64, v: f64) -> f64 {
    match family {
        Family::Gaussian => {
            let (x, y) = (norm_quantile(u), norm_quantile(v));
            norm_cdf((x - theta * y) / (1.0 - theta * theta).sqrt())
        }
        Family::Gumbel => {
            let (x, y) = (-u.ln(), -v.ln());
            let a = (x.powf(theta) + y.powf(theta)).powf(1.0 / theta);
            (-a).exp() * a.powf(1.0 - theta) * y.powf(theta - 1.0) / v
        }
        Family::Clayton => {
            let t = u.powf(-theta) + v.powf(-theta) - 1.0;
            v.powf(-theta - 1.0) * t.powf(-1.0 - 1.0 / theta)
        }
        Family::Frank => {
            let a = (-theta * u).exp_m1();
            let ev = (-theta * v).exp();
            ev * a / ((-theta).exp_m1() + a * (ev - 1.0))
        }
        Family::Independence | Family::Tkde => u,
    }
}

fn base_hinv(family: Family, theta: f64, w: f64, v: f64) -> f64 {
    match family {
        Family::Gaussian => {
            let y = norm_quantile(v);
            norm_cdf(norm_quantile(w) * (1.0 - theta * theta).sqrt() + theta * y)
        }
        Family::Clayton => {
            let t = (w * v.powf(theta + 1.0)).powf(-theta / (theta + 1.0));
            (t - v.powf(-theta) + 1.0).powf(-1.0 / theta)
        }
        Family::Frank => {
            let ev = (-theta * v).exp();
            let a = w * (-theta).exp_m1() / (w + (1.0 - w) * ev);
            -(a.ln_1p()) / theta
        }
        Family::Gumbel => invert_unit(|u| base_h(family, theta, u, v), |u| base_pdf(family, theta, u, v), w),
        Family::Independence | Family::Tkde => w,
    }
}

/// Solves `f(u) = target` for increasing `f` on (0, 1) with safeguarded Newton.
pub(crate) fn invert_unit(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut u = target.clamp(EPS, 1.0 - EPS);
    for _ in 0..100 {
        let r = f(u) - target;
        if r.abs() < 1e-13 {
            return u;
        }
        if r > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let d = df(u);
        let mut next = u - r / d;
        if !(next.is_finite() && next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() < 1e-15 {
            return next;
        }
        u = next;
    }
    u
}

/// Gaussian density ratio used in tests and oracles.
pub fn gaussian_copula_density(rho: f64, u: f64, v: f64) -> f64 {
    let (x, y) = (norm_quantile(u), norm_quantile(v));
    let s = (1.0 - rho * rho).sqrt();
    norm_pdf((y - rho * x) / s) / (s * norm_pdf(y))
}
