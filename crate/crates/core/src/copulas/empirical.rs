use serde::{Deserialize, Serialize};

use crate::marginals::PseudoObservations;
use crate::par;

/// `C(u) = (1/n) Σ 1[u⁽ⁱ⁾ ≼ u]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalCopula {
    dim: usize,
    /// Row-major n×d points.
    points: Vec<f64>,
}

impl EmpiricalCopula {
    pub fn new(pseudo: &PseudoObservations) -> Self {
        Self {
            dim: pseudo.dim(),
            points: pseudo.view().iter().copied().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.points.len() / self.dim.max(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cdf(&self, u: &[f64]) -> f64 {
        let count = par::count_chunks(&self.points, self.dim, |row| {
            row.iter().zip(u).all(|(a, b)| a <= b)
        });
        count as f64 / self.n() as f64
    }
}
