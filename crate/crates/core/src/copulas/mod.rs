//! Copula models on pseudo-observations.

pub mod empirical;
pub mod family;
pub mod pair;
pub mod tkde;
pub mod vine;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use empirical::EmpiricalCopula;
pub use family::{Family, ParametricCopula, Rotation};
pub use pair::{
    aic, fit_pair_parametric, fit_pair_tkde, h_function, select_pair, BivariatePairCopula, PairFit,
    PairKind, PairSelection,
};
pub use vine::{
    fit_vine_structure, VineCopula, VineEdge, VineStructure, DEFAULT_MC_SAMPLES, DEFAULT_MC_SEED,
};

use crate::error::{Error, Result};
use crate::marginals::PseudoObservations;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone)]
pub enum CopulaModel {
    Independence { dim: usize },
    Empirical(EmpiricalCopula),
    Bivariate(BivariatePairCopula),
    Vine(VineCopula),
}

pub fn fit_empirical(pseudo: &PseudoObservations) -> Result<CopulaModel> {
    if pseudo.n() == 0 {
        return Err(Error::InsufficientData {
            what: "empirical copula",
            needed: 1,
            got: 0,
        });
    }
    Ok(CopulaModel::Empirical(EmpiricalCopula::new(pseudo)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VineOptions {
    pub selection: PairSelection,
    pub mc_samples: usize,
    pub mc_seed: u64,
}

impl Default for VineOptions {
    fn default() -> Self {
        Self {
            selection: PairSelection::default(),
            mc_samples: DEFAULT_MC_SAMPLES,
            mc_seed: DEFAULT_MC_SEED,
        }
    }
}

pub fn fit_vine(pseudo: &PseudoObservations, options: &VineOptions) -> Result<CopulaModel> {
    let structure = fit_vine_structure(pseudo, &options.selection)?;
    Ok(CopulaModel::Vine(VineCopula::new(
        structure,
        options.mc_samples,
        options.mc_seed,
    )?))
}

/// Vine for `d ≥ 2`, the trivial one-dimensional copula for `d = 1`.
pub fn fit_copula(pseudo: &PseudoObservations, options: &VineOptions) -> Result<CopulaModel> {
    if pseudo.dim() == 1 {
        Ok(CopulaModel::Independence { dim: 1 })
    } else {
        fit_vine(pseudo, options)
    }
}

impl CopulaModel {
    pub fn dim(&self) -> usize {
        match self {
            CopulaModel::Independence { dim } => *dim,
            CopulaModel::Empirical(e) => e.dim(),
            CopulaModel::Bivariate(_) => 2,
            CopulaModel::Vine(v) => v.dim(),
        }
    }

    pub fn cdf(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.dim());
        if u.iter().any(|&x| x <= 0.0) {
            return 0.0;
        }
        match self {
            CopulaModel::Independence { .. } => u.iter().map(|x| x.min(1.0)).product(),
            CopulaModel::Empirical(e) => e.cdf(u),
            CopulaModel::Bivariate(p) => p.cdf(u[0], u[1]),
            CopulaModel::Vine(v) => v.cdf(u),
        }
    }

    /// Log copula density; `None` for the empirical copula, which has none.
    pub fn log_density(&self, u: &[f64]) -> Option<f64> {
        match self {
            CopulaModel::Independence { .. } => Some(0.0),
            CopulaModel::Empirical(_) => None,
            CopulaModel::Bivariate(p) => Some(p.pdf(u[0], u[1]).ln()),
            CopulaModel::Vine(v) => Some(v.log_density(u)),
        }
    }

    /// `count × d` draws, deterministic given `seed`. The empirical copula
    /// resamples its points with replacement.
    pub fn sample(&self, count: usize, seed: u64) -> Array2<f64> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            CopulaModel::Independence { .. } => {
                Array2::from_shape_simple_fn((count, d), || rng.sample(rand::distr::Open01))
            }
            CopulaModel::Empirical(e) => {
                let mut out = Array2::zeros((count, d));
                for mut row in out.rows_mut() {
                    let i = rng.random_range(0..e.n());
                    row.assign(&ndarray::ArrayView1::from(e.row(i)));
                }
                out
            }
            CopulaModel::Bivariate(p) => {
                let mut out = Array2::zeros((count, 2));
                for mut row in out.rows_mut() {
                    let (a, b) = p.sample_with(rng.sample(rand::distr::Open01), rng.sample(rand::distr::Open01));
                    row[0] = a;
                    row[1] = b;
                }
                out
            }
            CopulaModel::Vine(v) => v.sample(count, seed),
        }
    }

    /// Monte Carlo sample size behind `cdf`, or `None` if it is exact.
    pub fn mc_samples(&self) -> Option<usize> {
        match self {
            CopulaModel::Vine(v) if !v.has_exact_cdf() => Some(v.mc_samples()),
            _ => None,
        }
    }

    /// Binomial standard error of a CDF value `p`; zero for exact CDFs.
    pub fn cdf_standard_error(&self, p: f64) -> f64 {
        self.mc_samples()
            .map_or(0.0, |n| (p * (1.0 - p) / n as f64).sqrt())
    }

    /// Redraws a Monte Carlo CDF cache from `seed`; exact CDFs are unchanged.
    pub fn with_mc_seed(&self, seed: u64) -> Self {
        match self {
            CopulaModel::Vine(v) if !v.has_exact_cdf() => CopulaModel::Vine(v.with_mc_seed(seed)),
            other => other.clone(),
        }
    }

    pub fn with_mc_samples(&self, mc_samples: usize) -> Self {
        match self {
            CopulaModel::Vine(v) => CopulaModel::Vine(v.with_mc_samples(mc_samples)),
            other => other.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Document::from(self))?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(json)?;
        if doc.schema != SCHEMA_VERSION {
            return Err(Error::Schema(doc.schema));
        }
        Ok(match doc.model {
            ModelDoc::Independence { dim } => CopulaModel::Independence { dim },
            ModelDoc::Empirical(e) => CopulaModel::Empirical(e),
            ModelDoc::Bivariate { pair } => CopulaModel::Bivariate(pair),
            ModelDoc::Vine {
                structure,
                mc_samples,
                mc_seed,
            } => CopulaModel::Vine(VineCopula::new(structure, mc_samples, mc_seed)?),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Document {
    schema: u64,
    #[serde(flatten)]
    model: ModelDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "variant")]
enum ModelDoc {
    Independence {
        dim: usize,
    },
    Empirical(EmpiricalCopula),
    Bivariate {
        pair: BivariatePairCopula,
    },
    Vine {
        structure: VineStructure,
        mc_samples: usize,
        mc_seed: u64,
    },
}

impl From<&CopulaModel> for Document {
    fn from(model: &CopulaModel) -> Self {
        let model = match model {
            CopulaModel::Independence { dim } => ModelDoc::Independence { dim: *dim },
            CopulaModel::Empirical(e) => ModelDoc::Empirical(e.clone()),
            CopulaModel::Bivariate(p) => ModelDoc::Bivariate { pair: p.clone() },
            CopulaModel::Vine(v) => ModelDoc::Vine {
                structure: v.structure().clone(),
                mc_samples: v.mc_samples(),
                mc_seed: v.mc_seed(),
            },
        };
        Document {
            schema: SCHEMA_VERSION,
            model,
        }
    }
}
