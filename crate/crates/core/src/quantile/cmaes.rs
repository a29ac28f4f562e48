//! A small CMA-ES for box-constrained minimization.
//!
//! Defaults follow Hansen's tutorial. Candidates outside the box are projected
//! back onto it before evaluation and the projected point is used in the
//! update.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct CmaesOptions {
    pub sigma0: f64,
    pub max_generations: usize,
    /// Population size; `None` uses `4 + ⌊3 ln d⌋`.
    pub population: Option<usize>,
    pub lower: f64,
    pub upper: f64,
    pub seed: u64,
}

impl Default for CmaesOptions {
    fn default() -> Self {
        Self {
            sigma0: 0.1,
            max_generations: 200,
            population: None,
            lower: 0.01,
            upper: 1.0 - 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CmaesResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub evaluations: usize,
}

pub fn default_population(d: usize) -> usize {
    4 + (3.0 * (d as f64).ln()).floor() as usize
}

/// Minimizes `f` from `x0`. `f` sees every candidate, so callers can track
/// side information such as constraint feasibility.
pub fn minimize(x0: &[f64], options: &CmaesOptions, mut f: impl FnMut(&[f64]) -> f64) -> CmaesResult {
    let n = x0.len();
    let nf = n as f64;
    let lambda = options.population.unwrap_or_else(|| default_population(n)).max(2);
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu)
        .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (0.0f64).max(((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let clamp = |x: &mut DVector<f64>| {
        for v in x.iter_mut() {
            *v = v.clamp(options.lower, options.upper);
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut mean = DVector::from_column_slice(x0);
    clamp(&mut mean);
    let mut sigma = options.sigma0;
    let mut pc = DVector::<f64>::zeros(n);
    let mut ps = DVector::<f64>::zeros(n);
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut dvec = DVector::<f64>::from_element(n, 1.0);
    let mut inv_sqrt = DMatrix::<f64>::identity(n, n);
    let mut eigen_age = 0usize;

    let mut best_x = mean.as_slice().to_vec();
    let mut best_f = f(&best_x);
    let mut evaluations = 1;

    for generation in 0..options.max_generations {
        let mut pop: Vec<(f64, DVector<f64>)> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let z = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
            let y = &b * z.component_mul(&dvec);
            let mut x = &mean + sigma * y;
            clamp(&mut x);
            let fx = f(x.as_slice());
            evaluations += 1;
            if fx < best_f {
                best_f = fx;
                best_x = x.as_slice().to_vec();
            }
            pop.push((fx, x));
        }
        pop.sort_by(|a, b| a.0.total_cmp(&b.0));

        let old_mean = mean.clone();
        mean = DVector::zeros(n);
        for (w, (_, x)) in weights.iter().zip(&pop) {
            mean += *w * x;
        }
        let step = (&mean - &old_mean) / sigma;
        ps = (1.0 - cs) * &ps + (cs * (2.0 - cs) * mueff).sqrt() * (&inv_sqrt * &step);
        let ps_norm = ps.norm();
        let hsig_bound = (1.4 + 2.0 / (nf + 1.0)) * chi_n;
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * (generation as i32 + 1))).sqrt() < hsig_bound;
        let hsig_f = if hsig { 1.0 } else { 0.0 };
        pc = (1.0 - cc) * &pc + hsig_f * (cc * (2.0 - cc) * mueff).sqrt() * &step;

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, (_, x)) in weights.iter().zip(&pop) {
            let y = (x - &old_mean) / sigma;
            rank_mu += *w * &y * y.transpose();
        }
        cov = (1.0 - c1 - cmu) * &cov
            + c1 * (&pc * pc.transpose() + (1.0 - hsig_f) * cc * (2.0 - cc) * &cov)
            + cmu * rank_mu;
        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();
        sigma = sigma.min(1.0);

        eigen_age += 1;
        if eigen_age as f64 > 1.0 / ((c1 + cmu) * nf * 10.0) {
            eigen_age = 0;
            cov = (&cov + cov.transpose()) * 0.5;
            let eig = SymmetricEigen::new(cov.clone());
            b = eig.eigenvectors;
            dvec = eig.eigenvalues.map(|e| e.max(1e-20).sqrt());
            let dinv = DMatrix::from_diagonal(&dvec.map(|d| 1.0 / d));
            inv_sqrt = &b * dinv * b.transpose();
        }

        let spread = sigma * dvec.max();
        if spread < 1e-10 || !sigma.is_finite() {
            break;
        }
    }

    CmaesResult {
        best_x,
        best_f,
        evaluations,
    }
}
