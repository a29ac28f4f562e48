//! Synthetic multi-target regression data and CSV input/output.
//!
//! The regression function is `f_j(x) = 10·x[j mod p] + 5·x[0]·x[1] + j` for
//! `j = 0, …, d−1`. Noise for target `j` is `Φ⁻¹(w_j)·|f_j(x)|·r`, where `w`
//! is drawn from the chosen noise copula and `r` is the relative noise level.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{norm_cdf, norm_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum NoiseCopula {
    Independence,
    /// Equicorrelated Gaussian, `0 ≤ ρ < 1`.
    Gaussian(f64),
    /// Exchangeable Gumbel, `θ ≥ 1`.
    Gumbel(f64),
}

impl fmt::Display for NoiseCopula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseCopula::Independence => f.write_str("independence"),
            NoiseCopula::Gaussian(r) => write!(f, "gaussian:{r}"),
            NoiseCopula::Gumbel(t) => write!(f, "gumbel:{t}"),
        }
    }
}

impl FromStr for NoiseCopula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let param = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::invalid(format!("noise copula '{name}' needs a parameter, e.g. {name}:0.5")))?
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad noise copula parameter in '{s}'")))
        };
        let c = match name.to_ascii_lowercase().as_str() {
            "independence" | "independent" => NoiseCopula::Independence,
            "gaussian" => NoiseCopula::Gaussian(param(arg)?),
            "gumbel" => NoiseCopula::Gumbel(param(arg)?),
            other => return Err(Error::invalid(format!("unknown noise copula '{other}'"))),
        };
        c.validate()?;
        Ok(c)
    }
}

impl From<NoiseCopula> for String {
    fn from(c: NoiseCopula) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for NoiseCopula {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl NoiseCopula {
    fn validate(&self) -> Result<()> {
        match *self {
            NoiseCopula::Independence => Ok(()),
            NoiseCopula::Gaussian(r) if (0.0..1.0).contains(&r) => Ok(()),
            NoiseCopula::Gumbel(t) if t >= 1.0 && t.is_finite() => Ok(()),
            other => Err(Error::invalid(format!("noise copula parameter out of range: {other}"))),
        }
    }

    /// One draw of `w ∈ (0,1)^d`.
    pub fn sample_row<R: Rng>(&self, d: usize, rng: &mut R, out: &mut [f64]) {
        match *self {
            NoiseCopula::Independence => {
                for w in out.iter_mut().take(d) {
                    *w = rng.sample(Open01);
                }
            }
            NoiseCopula::Gaussian(rho) => {
                let z0: f64 = rng.sample(StandardNormal);
                for w in out.iter_mut().take(d) {
                    let zj: f64 = rng.sample(StandardNormal);
                    let z = rho.sqrt() * z0 + (1.0 - rho).sqrt() * zj;
                    *w = norm_cdf(z).clamp(1e-15, 1.0 - 1e-15);
                }
            }
            NoiseCopula::Gumbel(theta) => {
                let v = positive_stable(1.0 / theta, rng);
                for w in out.iter_mut().take(d) {
                    let e: f64 = rng.sample(Exp1);
                    *w = (-(e / v).powf(1.0 / theta)).exp().clamp(1e-15, 1.0 - 1e-15);
                }
            }
        }
    }
}

/// Positive stable variate with Laplace transform `exp(−s^a)`, `0 < a ≤ 1`.
fn positive_stable<R: Rng>(a: f64, rng: &mut R) -> f64 {
    if a >= 1.0 {
        return 1.0;
    }
    let u: f64 = rng.sample::<f64, _>(Open01) * PI;
    let e: f64 = rng.sample(Exp1);
    let left = (a * u).sin() / u.sin().powf(1.0 / a);
    let right = (((1.0 - a) * u).sin() / e).powf((1.0 - a) / a);
    left * right
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub p: usize,
    pub n: usize,
    pub noise_copula: NoiseCopula,
    pub relative_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(d: usize, n: usize, noise_copula: NoiseCopula, seed: u64) -> Self {
        Self {
            d,
            p: 7,
            n,
            noise_copula,
            relative_noise: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::invalid(format!("need at least 2 targets, got {}", self.d)));
        }
        if self.p < 2 {
            return Err(Error::invalid(format!("need at least 2 features, got {}", self.p)));
        }
        if self.n == 0 {
            return Err(Error::invalid("number of rows must be positive"));
        }
        if !(self.relative_noise >= 0.0 && self.relative_noise.is_finite()) {
            return Err(Error::invalid("relative noise must be non-negative"));
        }
        self.noise_copula.validate()
    }
}

pub fn regression_function(x: &[f64], j: usize) -> f64 {
    10.0 * x[j % x.len()] + 5.0 * x[0] * x[1] + j as f64
}

/// Features `X ~ U[0,1]^p` and labels `Y = f(X) + noise`.
pub fn generate(spec: &SyntheticSpec) -> Result<(Array2<f64>, Array2<f64>)> {
    spec.validate()?;
    let SyntheticSpec { d, p, n, .. } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = Array2::zeros((n, p));
    let mut y = Array2::zeros((n, d));
    let mut w = vec![0.0; d];
    for i in 0..n {
        for j in 0..p {
            x[[i, j]] = rng.random::<f64>();
        }
        spec.noise_copula.sample_row(d, &mut rng, &mut w);
        let row = x.row(i).to_vec();
        for k in 0..d {
            let f = regression_function(&row, k);
            y[[i, k]] = f + norm_quantile(w[k]) * f.abs() * spec.relative_noise;
        }
    }
    Ok((x, y))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnInfo {
    pub features: Vec<String>,
    pub targets: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub columns: ColumnInfo,
}

/// Reads a headed CSV; `targets` become `Y` in the given order and every
/// other column becomes a feature.
pub fn load_csv(path: &Path, targets: &[String]) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile);
    }
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    let mut target_idx = Vec::with_capacity(targets.len());
    for t in targets {
        let i = names.iter().position(|h| h == t).ok_or_else(|| Error::MissingColumn(t.clone()))?;
        target_idx.push(i);
    }
    let feature_idx: Vec<usize> = (0..names.len()).filter(|i| !target_idx.contains(i)).collect();

    let mut values: Vec<Vec<f64>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parsed = record
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                cell.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
                    row: row + 1,
                    column: names.get(col).cloned().unwrap_or_else(|| col.to_string()),
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        values.push(parsed);
    }
    if values.is_empty() {
        return Err(Error::NoDataRows);
    }
    let n = values.len();
    let x = Array2::from_shape_fn((n, feature_idx.len()), |(i, j)| values[i][feature_idx[j]]);
    let y = Array2::from_shape_fn((n, target_idx.len()), |(i, j)| values[i][target_idx[j]]);
    Ok(Dataset {
        x,
        y,
        columns: ColumnInfo {
            features: feature_idx.iter().map(|&i| names[i].clone()).collect(),
            targets: targets.to_vec(),
        },
    })
}

pub fn default_target_names(d: usize) -> Vec<String> {
    (0..d).map(|k| format!("y{k}")).collect()
}

/// Writes columns `x0..x{p−1}, y0..y{d−1}`.
pub fn write_csv(path: &Path, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.nrows(),
        });
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let header: Vec<String> = (0..x.ncols())
        .map(|j| format!("x{j}"))
        .chain(default_target_names(y.ncols()))
        .collect();
    w.write_record(&header)?;
    for (xr, yr) in x.rows().into_iter().zip(y.rows()) {
        w.write_record(xr.iter().chain(yr.iter()).map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::kendall_tau;
    use std::io::Write;

    #[test]
    fn parse_noise_copula() {
        assert_eq!("independence".parse::<NoiseCopula>().unwrap(), NoiseCopula::Independence);
        assert_eq!("gaussian:0.8".parse::<NoiseCopula>().unwrap(), NoiseCopula::Gaussian(0.8));
        assert_eq!("Gumbel:3".parse::<NoiseCopula>().unwrap(), NoiseCopula::Gumbel(3.0));
        assert!("gumbel".parse::<NoiseCopula>().is_err());
        assert!("gumbel:0.5".parse::<NoiseCopula>().is_err());
        assert!("gaussian:1".parse::<NoiseCopula>().is_err());
        assert!("student:3".parse::<NoiseCopula>().is_err());
        let c: NoiseCopula = serde_json::from_str("\"gaussian:0.25\"").unwrap();
        assert_eq!(serde_json::to_string(&c).unwrap(), "\"gaussian:0.25\"");
    }

    #[test]
    fn noiseless_limit() {
        let mut spec = SyntheticSpec::new(3, 50, NoiseCopula::Gumbel(2.0), 1);
        spec.relative_noise = 0.0;
        let (x, y) = generate(&spec).unwrap();
        for i in 0..50 {
            let row = x.row(i).to_vec();
            for k in 0..3 {
                assert_eq!(y[[i, k]], regression_function(&row, k));
            }
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let spec = SyntheticSpec::new(2, 100, NoiseCopula::Gaussian(0.5), 11);
        let (x1, y1) = generate(&spec).unwrap();
        let (x2, y2) = generate(&spec).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(y1, y2);
        assert!(x1.iter().all(|v| (0.0..1.0).contains(v)));
        assert!(y1.iter().all(|v| v.is_finite()));
        assert!(generate(&SyntheticSpec::new(1, 10, NoiseCopula::Independence, 0)).is_err());
    }

    fn magnitude_tau(noise: NoiseCopula, seed: u64) -> f64 {
        let spec = SyntheticSpec::new(2, 5000, noise, seed);
        let (x, y) = generate(&spec).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for i in 0..spec.n {
            let row = x.row(i).to_vec();
            a.push((y[[i, 0]] - regression_function(&row, 0)).abs());
            b.push((y[[i, 1]] - regression_function(&row, 1)).abs());
        }
        kendall_tau(&a, &b)
    }

    #[test]
    fn strong_gaussian_noise_dependence_survives_magnitude() {
        assert!(magnitude_tau(NoiseCopula::Gaussian(0.9), 2) > 0.3);
    }

    #[test]
    fn dependence_monotone_in_parameter() {
        let taus: Vec<f64> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&t| (0..3).map(|s| magnitude_tau(NoiseCopula::Gumbel(t), s)).sum::<f64>() / 3.0)
            .collect();
        assert!(taus[0] < taus[1] && taus[1] < taus[2], "{taus:?}");
    }

    #[test]
    fn gumbel_noise_has_target_tau() {
        // Kendall's τ of a Gumbel copula is 1 − 1/θ.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let mut w = [0.0; 2];
        for _ in 0..4000 {
            NoiseCopula::Gumbel(2.0).sample_row(2, &mut rng, &mut w);
            a.push(w[0]);
            b.push(w[1]);
        }
        assert!((kendall_tau(&a, &b) - 0.5).abs() < 0.03);
        let mean: f64 = a.iter().sum::<f64>() / a.len() as f64;
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,t1,b,c,t2,d\n1,2,3,4,5,6\n7,8,9,10,11,12\n13,14,15,16,17,18").unwrap();
        let ds = load_csv(&path, &["t2".into(), "t1".into()]).unwrap();
        assert_eq!(ds.x.dim(), (3, 4));
        assert_eq!(ds.y.dim(), (3, 2));
        assert_eq!(ds.y.row(0).to_vec(), vec![5.0, 2.0]);
        assert_eq!(ds.columns.features, vec!["a", "b", "c", "d"]);

        assert!(matches!(load_csv(&path, &["zz".into()]), Err(Error::MissingColumn(c)) if c == "zz"));

        std::fs::write(&path, "a,b\n").unwrap();
        let err = load_csv(&path, &["a".into()]).unwrap_err();
        assert!(err.to_string().contains("no data rows"), "{err}");

        std::fs::write(&path, "a,b\n1,2\n3,oops\n").unwrap();
        match load_csv(&path, &["a".into()]) {
            Err(Error::NonNumeric { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "b")),
            other => panic!("{other:?}"),
        }

        std::fs::write(&path, "").unwrap();
        assert!(load_csv(&path, &["a".into()]).is_err());

        let spec = SyntheticSpec::new(3, 20, NoiseCopula::Independence, 4);
        let (x, y) = generate(&spec).unwrap();
        write_csv(&path, x.view(), y.view()).unwrap();
        let ds = load_csv(&path, &default_target_names(3)).unwrap();
        assert_eq!(ds.x, x);
        assert_eq!(ds.y, y);
    }
}
