//! Bivariate pair copulas: fitting, AIC selection and the conditional
//! distribution functions used by vines.

use serde::{Deserialize, Serialize};

use crate::copulas::family::{Family, ParametricCopula, Rotation};
use crate::copulas::tkde::TkdeCopula;
use crate::error::{Error, Result};
use crate::stats::kendall_tau;

const MIN_PARAMETRIC_N: usize = 10;
const MIN_TKDE_N: usize = 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PairKind {
    Independence,
    Parametric(ParametricCopula),
    Tkde(TkdeCopula),
}

/// A fitted bivariate copula `C(u₁, u₂)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BivariatePairCopula {
    pub kind: PairKind,
    pub loglik: f64,
    pub aic: f64,
}

/// A candidate from one family. Rejected families carry `aic = +∞` and no
/// copula.
#[derive(Debug, Clone)]
pub struct PairFit {
    pub family: Family,
    pub aic: f64,
    pub copula: Option<BivariatePairCopula>,
}

pub fn aic(loglik: f64, param_count: f64) -> f64 {
    2.0 * param_count - 2.0 * loglik
}

impl BivariatePairCopula {
    pub fn independence() -> Self {
        Self {
            kind: PairKind::Independence,
            loglik: 0.0,
            aic: 0.0,
        }
    }

    pub fn parametric(family: Family, theta: f64, rotation: Rotation) -> Self {
        Self {
            kind: PairKind::Parametric(ParametricCopula::new(family, theta, rotation)),
            loglik: 0.0,
            aic: 0.0,
        }
    }

    pub fn family(&self) -> Family {
        match &self.kind {
            PairKind::Independence => Family::Independence,
            PairKind::Parametric(p) => p.family,
            PairKind::Tkde(_) => Family::Tkde,
        }
    }

    pub fn is_independence(&self) -> bool {
        matches!(self.kind, PairKind::Independence)
    }

    pub fn cdf(&self, u1: f64, u2: f64) -> f64 {
        match &self.kind {
            PairKind::Independence => u1.clamp(0.0, 1.0) * u2.clamp(0.0, 1.0),
            PairKind::Parametric(p) => p.cdf(u1, u2),
            PairKind::Tkde(t) => t.cdf(u1, u2),
        }
    }

    pub fn pdf(&self, u1: f64, u2: f64) -> f64 {
        match &self.kind {
            PairKind::Independence => 1.0,
            PairKind::Parametric(p) => p.pdf(u1, u2),
            PairKind::Tkde(t) => t.pdf(u1, u2),
        }
    }

    /// `P(U₂ ≤ u₂ | U₁ = u₁) = ∂C/∂u₁`.
    pub fn cond_first(&self, u1: f64, u2: f64) -> f64 {
        match &self.kind {
            PairKind::Independence => u2,
            PairKind::Parametric(p) => p.cond_second(u2, u1),
            PairKind::Tkde(t) => t.cond_first(u1, u2),
        }
    }

    /// `P(U₁ ≤ u₁ | U₂ = u₂) = ∂C/∂u₂`.
    pub fn cond_second(&self, u1: f64, u2: f64) -> f64 {
        match &self.kind {
            PairKind::Independence => u1,
            PairKind::Parametric(p) => p.cond_second(u1, u2),
            PairKind::Tkde(t) => t.cond_second(u1, u2),
        }
    }

    /// Solves `cond_first(u₁, u₂) = w` for `u₂`.
    pub fn inv_cond_first(&self, w: f64, u1: f64) -> f64 {
        match &self.kind {
            PairKind::Independence => w,
            PairKind::Parametric(p) => p.inv_cond_second(w, u1),
            PairKind::Tkde(t) => t.inv_cond_first(w, u1),
        }
    }

    /// Solves `cond_second(u₁, u₂) = w` for `u₁`.
    pub fn inv_cond_second(&self, w: f64, u2: f64) -> f64 {
        match &self.kind {
            PairKind::Independence => w,
            PairKind::Parametric(p) => p.inv_cond_second(w, u2),
            PairKind::Tkde(t) => t.inv_cond_second(w, u2),
        }
    }

    pub fn kendall_tau(&self) -> f64 {
        match &self.kind {
            PairKind::Independence => 0.0,
            PairKind::Parametric(p) => p.kendall_tau(),
            PairKind::Tkde(t) => t.kendall_tau(),
        }
    }

    /// Draws `(u₁, u₂)` from two independent uniforms.
    pub fn sample_with(&self, w1: f64, w2: f64) -> (f64, f64) {
        (w1, self.inv_cond_first(w2, w1))
    }
}

/// `h(u | v) = ∂C(u, v)/∂v`.
pub fn h_function(pair: &BivariatePairCopula, u: f64, v: f64) -> f64 {
    pair.cond_second(u, v)
}

fn check_pairs(u1: &[f64], u2: &[f64], needed: usize, what: &'static str) -> Result<()> {
    if u1.len() != u2.len() {
        return Err(Error::DimensionMismatch {
            expected: u1.len(),
            found: u2.len(),
        });
    }
    if u1.len() < needed {
        return Err(Error::InsufficientData {
            what,
            needed,
            got: u1.len(),
        });
    }
    Ok(())
}

fn loglik_of(pair: &BivariatePairCopula, u1: &[f64], u2: &[f64]) -> f64 {
    u1.iter()
        .zip(u2)
        .map(|(&a, &b)| pair.pdf(a, b).max(f64::MIN_POSITIVE).ln())
        .sum()
}

/// Fits one parametric family by Kendall-tau inversion. Gumbel and Clayton
/// are also tried rotated by 180° and the better AIC is kept.
pub fn fit_pair_parametric(u1: &[f64], u2: &[f64], family: Family) -> Result<PairFit> {
    check_pairs(u1, u2, MIN_PARAMETRIC_N, "parametric pair fit")?;
    let tau = kendall_tau(u1, u2);
    Ok(fit_parametric_with_tau(u1, u2, family, tau))
}

fn fit_parametric_with_tau(u1: &[f64], u2: &[f64], family: Family, tau: f64) -> PairFit {
    let rejected = PairFit {
        family,
        aic: f64::INFINITY,
        copula: None,
    };
    match family {
        Family::Independence => PairFit {
            family,
            aic: 0.0,
            copula: Some(BivariatePairCopula::independence()),
        },
        Family::Tkde => rejected,
        _ => {
            let Some(theta) = ParametricCopula::theta_from_tau(family, tau) else {
                return rejected;
            };
            let rotations: &[Rotation] = match family {
                Family::Gumbel | Family::Clayton => &[Rotation::None, Rotation::Survival],
                _ => &[Rotation::None],
            };
            let mut best = rejected;
            for &rotation in rotations {
                let mut pair = BivariatePairCopula::parametric(family, theta, rotation);
                pair.loglik = loglik_of(&pair, u1, u2);
                pair.aic = aic(pair.loglik, 1.0);
                if !pair.aic.is_finite() {
                    continue;
                }
                if pair.aic < best.aic {
                    best = PairFit {
                        family,
                        aic: pair.aic,
                        copula: Some(pair),
                    };
                }
            }
            best
        }
    }
}

pub fn fit_pair_tkde(u1: &[f64], u2: &[f64]) -> Result<BivariatePairCopula> {
    check_pairs(u1, u2, MIN_TKDE_N, "kernel pair fit")?;
    let t = TkdeCopula::fit(u1, u2);
    let k = t.effective_params();
    let mut pair = BivariatePairCopula {
        kind: PairKind::Tkde(t),
        loglik: 0.0,
        aic: 0.0,
    };
    pair.loglik = loglik_of(&pair, u1, u2);
    pair.aic = aic(pair.loglik, k);
    Ok(pair)
}

/// Two-sided p-value of the asymptotic test of `τ = 0`.
pub fn independence_p_value(tau: f64, n: usize) -> f64 {
    if n < 2 {
        return 1.0;
    }
    let n = n as f64;
    let sd = (2.0 * (2.0 * n + 5.0) / (9.0 * n * (n - 1.0))).sqrt();
    let z = (tau / sd).abs();
    2.0 * (1.0 - crate::stats::norm_cdf(z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    pub families: Vec<Family>,
    /// Level of the Kendall-tau independence pre-test; `None` disables it.
    pub independence_level: Option<f64>,
}

impl Default for PairSelection {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            independence_level: Some(0.05),
        }
    }
}

/// Picks the pair copula with minimal AIC over the configured families.
/// Independence is chosen outright when the pre-test does not reject it.
pub fn select_pair(u1: &[f64], u2: &[f64], selection: &PairSelection) -> Result<BivariatePairCopula> {
    check_pairs(u1, u2, MIN_PARAMETRIC_N, "pair selection")?;
    let tau = kendall_tau(u1, u2);
    let allows_independence = selection.families.contains(&Family::Independence);
    if allows_independence {
        if let Some(level) = selection.independence_level {
            if independence_p_value(tau, u1.len()) > level {
                return Ok(BivariatePairCopula::independence());
            }
        }
    }
    let mut best: Option<BivariatePairCopula> = None;
    let mut consider = |candidate: BivariatePairCopula| {
        if best.as_ref().is_none_or(|b| candidate.aic < b.aic) {
            best = Some(candidate);
        }
    };
    for &family in &selection.families {
        match family {
            Family::Tkde => {
                if u1.len() >= MIN_TKDE_N {
                    consider(fit_pair_tkde(u1, u2)?);
                }
            }
            _ => {
                if let Some(c) = fit_parametric_with_tau(u1, u2, family, tau).copula {
                    consider(c);
                }
            }
        }
    }
    Ok(best.unwrap_or_else(BivariatePairCopula::independence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(pair: &BivariatePairCopula, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| pair.sample_with(rng.random(), rng.random()))
            .unzip()
    }

    fn ranks(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let mut r = vec![0.0; n];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = (k + 1) as f64 / (n as f64 + 1.0);
        }
        r
    }

    #[test]
    fn aic_examples() {
        assert_eq!(aic(0.0, 0.0), 0.0);
        assert_eq!(aic(10.0, 1.0), -18.0);
    }

    #[test]
    fn independence_h_is_identity() {
        let p = BivariatePairCopula::independence();
        assert_eq!(h_function(&p, 0.3, 0.8), 0.3);
        let g = BivariatePairCopula::parametric(Family::Gaussian, 0.0, Rotation::None);
        assert_abs_diff_eq!(h_function(&g, 0.3, 0.8), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn independent_ranks_give_zero_rho() {
        use rand::seq::SliceRandom;
        let u: Vec<f64> = (1..=12).map(|i| i as f64 / 13.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = loop {
            let mut v = u.clone();
            v.shuffle(&mut rng);
            if kendall_tau(&u, &v) == 0.0 {
                break v;
            }
        };
        let fit = fit_pair_parametric(&u, &v, Family::Gaussian).unwrap();
        match fit.copula.unwrap().kind {
            PairKind::Parametric(p) => assert_eq!(p.theta, 0.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn gumbel_rejected_on_negative_tau() {
        let u: Vec<f64> = (1..=20).map(|i| i as f64 / 21.0).collect();
        let v: Vec<f64> = u.iter().rev().copied().collect();
        let fit = fit_pair_parametric(&u, &v, Family::Gumbel).unwrap();
        assert_eq!(fit.aic, f64::INFINITY);
        assert!(fit.copula.is_none());
        assert!(matches!(
            fit_pair_parametric(&u[..5], &v[..5], Family::Gaussian),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn recovers_parameters_by_tau_inversion() {
        let truth = BivariatePairCopula::parametric(Family::Gumbel, 2.0, Rotation::None);
        let (a, b) = sample(&truth, 4000, 11);
        let fit = fit_pair_parametric(&ranks(&a), &ranks(&b), Family::Gumbel).unwrap();
        match fit.copula.unwrap().kind {
            PairKind::Parametric(p) => {
                assert_eq!(p.rotation, Rotation::None);
                assert!((p.theta - 2.0).abs() < 0.15, "{}", p.theta);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn survival_clayton_preferred_for_upper_tail() {
        let truth = BivariatePairCopula::parametric(Family::Clayton, 3.0, Rotation::Survival);
        let (a, b) = sample(&truth, 2000, 12);
        let fit = fit_pair_parametric(&ranks(&a), &ranks(&b), Family::Clayton).unwrap();
        match fit.copula.unwrap().kind {
            PairKind::Parametric(p) => assert_eq!(p.rotation, Rotation::Survival),
            _ => unreachable!(),
        }
    }

    #[test]
    fn sampled_tau_matches_closed_form() {
        let truth = BivariatePairCopula::parametric(Family::Gaussian, 0.9, Rotation::None);
        let (a, b) = sample(&truth, 5000, 13);
        let expected = 2.0 * 0.9f64.asin() / std::f64::consts::PI;
        assert_abs_diff_eq!(expected, 0.7129, epsilon = 1e-4);
        assert_abs_diff_eq!(kendall_tau(&a, &b), expected, epsilon = 0.03);
    }

    #[test]
    fn independence_usually_wins_on_independent_data() {
        let truth = BivariatePairCopula::independence();
        let selection = PairSelection {
            families: vec![Family::Independence, Family::Gaussian],
            independence_level: None,
        };
        let trials = 100;
        let wins = (0..trials)
            .filter(|&s| {
                let (a, b) = sample(&truth, 1000, 100 + s);
                select_pair(&ranks(&a), &ranks(&b), &selection)
                    .unwrap()
                    .is_independence()
            })
            .count();
        assert!(wins as f64 / trials as f64 > 0.8, "{wins}");
    }

    #[test]
    fn selection_picks_generating_family() {
        let truth = BivariatePairCopula::parametric(Family::Frank, 8.0, Rotation::None);
        let (a, b) = sample(&truth, 1500, 14);
        let chosen = select_pair(&ranks(&a), &ranks(&b), &PairSelection::default()).unwrap();
        assert!(matches!(chosen.family(), Family::Frank | Family::Tkde), "{:?}", chosen.family());
    }

    #[test]
    fn pair_density_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for pair in [
            BivariatePairCopula::parametric(Family::Gaussian, 0.6, Rotation::None),
            BivariatePairCopula::parametric(Family::Clayton, 1.5, Rotation::Survival),
            BivariatePairCopula::parametric(Family::Frank, -4.0, Rotation::None),
        ] {
            let m = 100_000;
            let s: f64 = (0..m).map(|_| pair.pdf(rng.random(), rng.random())).sum();
            let mean = s / m as f64;
            assert!((0.95..=1.05).contains(&mean), "{pair:?}: {mean}");
        }
    }

    #[test]
    fn cond_first_inverse() {
        let pair = BivariatePairCopula::parametric(Family::Gumbel, 1.8, Rotation::Survival);
        for &w in &[0.1, 0.5, 0.9] {
            for &u1 in &[0.2, 0.6] {
                let u2 = pair.inv_cond_first(w, u1);
                assert_abs_diff_eq!(pair.cond_first(u1, u2), w, epsilon = 1e-9);
            }
        }
    }
}
