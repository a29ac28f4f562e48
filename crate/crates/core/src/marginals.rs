//! Per-target empirical marginals.
//!
//! The ECDF uses an `n + 1` denominator: the calibration scores plus a virtual
//! point at +∞. For any finite `s`, `F(s) = #{i : s_i ≤ s} / (n + 1)`, so the
//! largest attainable value is `n / (n + 1)` and levels above it map back to
//! an infinite score.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::conformal_rank;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalEcdf {
    sorted_scores: Vec<f64>,
}

impl MarginalEcdf {
    pub fn n(&self) -> usize {
        self.sorted_scores.len()
    }

    pub fn sorted_scores(&self) -> &[f64] {
        &self.sorted_scores
    }

    /// `#{i : s_i ≤ s} / (n + 1)`.
    pub fn evaluate(&self, s: f64) -> f64 {
        let count = self.sorted_scores.partition_point(|&x| x <= s);
        count as f64 / (self.n() as f64 + 1.0)
    }

    /// Smallest calibration score `s` with `evaluate(s) ≥ u`, or +∞ when `u`
    /// exceeds `n / (n + 1)`.
    pub fn inverse(&self, u: f64) -> f64 {
        let k = conformal_rank(u, self.n());
        if k > self.n() {
            f64::INFINITY
        } else {
            self.sorted_scores[k - 1]
        }
    }

    /// The `k`-th smallest score (1-based), +∞ past the end.
    pub fn order_statistic(&self, k: usize) -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else {
            self.sorted_scores.get(k - 1).copied().unwrap_or(f64::INFINITY)
        }
    }
}

pub fn fit_ecdf(scores: &[f64]) -> Result<MarginalEcdf> {
    if scores.is_empty() {
        return Err(Error::EmptyColumn);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore);
    }
    let mut sorted_scores = scores.to_vec();
    sorted_scores.sort_by(f64::total_cmp);
    Ok(MarginalEcdf { sorted_scores })
}

/// Fits one ECDF per column.
pub fn fit_ecdfs(scores: ArrayView2<'_, f64>) -> Result<Vec<MarginalEcdf>> {
    scores
        .columns()
        .into_iter()
        .map(|col| fit_ecdf(&col.to_vec()))
        .collect()
}

/// n×d pseudo-observations `u[i][j] = F_j(s[i][j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservations {
    u: Array2<f64>,
}

impl PseudoObservations {
    /// Wraps a matrix of values already on the unit cube.
    pub fn from_matrix(u: Array2<f64>) -> Result<Self> {
        if u.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::invalid("pseudo-observations must lie in [0, 1]"));
        }
        Ok(Self { u })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.u.view()
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.u.column(j).to_vec()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.u.row(i).to_vec()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.u
    }
}

pub fn pit_transform(
    ecdfs: &[MarginalEcdf],
    scores: ArrayView2<'_, f64>,
) -> Result<PseudoObservations> {
    if scores.ncols() != ecdfs.len() {
        return Err(Error::DimensionMismatch {
            expected: ecdfs.len(),
            found: scores.ncols(),
        });
    }
    let mut u = Array2::zeros(scores.raw_dim());
    for ((i, j), &s) in scores.indexed_iter() {
        u[[i, j]] = ecdfs[j].evaluate(s);
    }
    Ok(PseudoObservations { u })
}

pub fn inverse_ecdf(ecdf: &MarginalEcdf, u: f64) -> f64 {
    ecdf.inverse(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn evaluate_examples() {
        let e = fit_ecdf(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.evaluate(2.0), 0.5);
        let single = fit_ecdf(&[5.0]).unwrap();
        assert_eq!(single.evaluate(4.9), 0.0);
        assert_eq!(single.evaluate(5.0), 0.5);
        let ties = fit_ecdf(&[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(ties.evaluate(1.0), 0.5);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_ecdf(&[]), Err(Error::EmptyColumn)));
        assert!(matches!(fit_ecdf(&[1.0, f64::NAN]), Err(Error::NonFiniteScore)));
    }

    #[test]
    fn inverse_examples() {
        let e = fit_ecdf(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(inverse_ecdf(&e, 0.5), 2.0);
        assert_eq!(inverse_ecdf(&e, 0.8), f64::INFINITY);
        assert_eq!(inverse_ecdf(&e, 0.0), 1.0);
        assert_eq!(inverse_ecdf(&e, 0.75), 3.0);
    }

    #[test]
    fn pit_examples() {
        let scores = array![[1.0], [2.0], [3.0]];
        let ecdfs = fit_ecdfs(scores.view()).unwrap();
        let u = pit_transform(&ecdfs, scores.view()).unwrap();
        assert_eq!(u.column(0), vec![0.25, 0.5, 0.75]);

        let held_out = array![[0.5], [10.0]];
        let v = pit_transform(&ecdfs, held_out.view()).unwrap();
        assert_eq!(v.column(0), vec![0.0, 0.75]);

        let wrong = array![[1.0, 2.0]];
        assert!(matches!(
            pit_transform(&ecdfs, wrong.view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn grid_round_trip(scores in prop::collection::vec(-100.0f64..100.0, 1..60)) {
            let e = fit_ecdf(&scores).unwrap();
            let n = e.n();
            for k in 1..=n {
                let u = k as f64 / (n as f64 + 1.0);
                let s = e.inverse(u);
                prop_assert!(e.evaluate(s) >= u);
            }
            prop_assert_eq!(e.inverse((n as f64 + 0.5) / (n as f64 + 1.0)), f64::INFINITY);
        }

        #[test]
        fn evaluate_bounds_and_monotone(
            scores in prop::collection::vec(-10.0f64..10.0, 1..40),
            a in -20.0f64..20.0,
            b in -20.0f64..20.0,
        ) {
            let e = fit_ecdf(&scores).unwrap();
            let n = e.n() as f64;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(e.evaluate(lo) <= e.evaluate(hi));
            prop_assert!(e.evaluate(hi) <= n / (n + 1.0));
            let count = scores.iter().filter(|&&s| s <= hi).count() as f64;
            prop_assert_eq!(e.evaluate(hi), count / (n + 1.0));
        }

        #[test]
        fn inverse_monotone(
            scores in prop::collection::vec(0.0f64..5.0, 1..40),
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let e = fit_ecdf(&scores).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(e.inverse(lo) <= e.inverse(hi));
        }

        #[test]
        fn row_permutation_permutes_pseudo_obs(
            rows in prop::collection::vec((0.0f64..3.0, 0.0f64..3.0), 2..30),
            shift in 0usize..30,
        ) {
            let n = rows.len();
            let m = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { rows[i].0 } else { rows[i].1 });
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let pm = m.select(ndarray::Axis(0), &perm);
            let u = pit_transform(&fit_ecdfs(m.view()).unwrap(), m.view()).unwrap();
            let pu = pit_transform(&fit_ecdfs(pm.view()).unwrap(), pm.view()).unwrap();
            for (i, &p) in perm.iter().enumerate() {
                prop_assert_eq!(pu.row(i), u.row(p));
            }
        }
    }
}
