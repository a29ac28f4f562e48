//! End-to-end runs: split, fit the point predictor, calibrate every scheme,
//! evaluate on the test rows, and write reports.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{
    calibrate_empirical_copula_diagonal, calibrate_independent, calibrate_scalar, calibrate_split, compute_scores,
    evaluate, form_prediction_set, CalibrationReport, PredictionSet, ScalarNorm, ScoreMatrix, Shape, SplitConfig,
};
use crate::copulas::{fit_copula, CopulaModel, Family, PairSelection, VineOptions, DEFAULT_MC_SAMPLES, SCHEMA_VERSION};
use crate::datagen::{default_target_names, generate, load_csv, SyntheticSpec};
use crate::error::{Error, Result};
use crate::marginals::{fit_ecdfs, pit_transform, MarginalEcdf, PseudoObservations};
use crate::models::{fit_ridge, split_counts, split_data, SplitFractions, DEFAULT_RIDGE_LAMBDA};
use crate::quantile::{
    grad_cdf, one_step, optimize_level_curve, to_score_space, LevelCurveOptions, Norm, QuantileResult,
    DEFAULT_FD_STEP,
};
use crate::report::format_extended;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Independent,
    ScalarL1,
    ScalarL2,
    ScalarLinf,
    EmpiricalCopula,
    Plugin,
    Corrected,
    PluginSplit,
    CorrectedSplit,
}

impl Scheme {
    pub const ALL: [Scheme; 9] = [
        Scheme::Independent,
        Scheme::ScalarL1,
        Scheme::ScalarL2,
        Scheme::ScalarLinf,
        Scheme::EmpiricalCopula,
        Scheme::Plugin,
        Scheme::Corrected,
        Scheme::PluginSplit,
        Scheme::CorrectedSplit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Independent => "independent",
            Scheme::ScalarL1 => "scalar-l1",
            Scheme::ScalarL2 => "scalar-l2",
            Scheme::ScalarLinf => "scalar-linf",
            Scheme::EmpiricalCopula => "empirical-copula",
            Scheme::Plugin => "plugin",
            Scheme::Corrected => "corrected",
            Scheme::PluginSplit => "plugin-split",
            Scheme::CorrectedSplit => "corrected-split",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|c| c.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<_> = Scheme::ALL.iter().map(|c| c.name()).collect();
                Error::invalid(format!("unknown scheme '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf, targets: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub schemes: Vec<Scheme>,
    pub families: Vec<Family>,
    pub mc_samples: usize,
    pub seeds: Vec<u64>,
    pub fractions: SplitFractions,
    /// Absolute calibration size; overrides `fractions.cal`.
    pub n_cal: Option<usize>,
    /// Absolute test size; overrides `fractions.test`.
    pub n_test: Option<usize>,
    /// Share of the calibration rows used for the ECDFs in split schemes.
    pub split_fraction: f64,
    pub norm: Norm,
    pub ridge_lambda: f64,
    pub fd_step: f64,
    pub data: Option<DataSource>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            schemes: vec![Scheme::Independent, Scheme::Corrected],
            families: Family::ALL.to_vec(),
            mc_samples: DEFAULT_MC_SAMPLES,
            seeds: vec![0],
            fractions: SplitFractions {
                train: 0.5,
                cal: 0.25,
                test: 0.25,
            },
            n_cal: None,
            n_test: None,
            split_fraction: 0.5,
            norm: Norm::L1,
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            fd_step: DEFAULT_FD_STEP,
            data: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.schemes.is_empty() {
            return Err(Error::invalid("at least one scheme is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.families.is_empty() {
            return Err(Error::invalid("at least one copula family is required"));
        }
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be positive"));
        }
        if self.data.is_none() {
            return Err(Error::invalid("no data source given"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn vine_options(&self) -> VineOptions {
        VineOptions {
            selection: PairSelection {
                families: self.families.clone(),
                ..PairSelection::default()
            },
            mc_samples: self.mc_samples,
            ..VineOptions::default()
        }
    }
}

pub struct LoadedData {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub targets: Vec<String>,
}

pub fn load_data(source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Synthetic(spec) => {
            let (x, y) = generate(spec)?;
            Ok(LoadedData {
                x,
                y,
                targets: default_target_names(spec.d),
            })
        }
        DataSource::Csv { path, targets } => {
            let ds = load_csv(path, targets)?;
            Ok(LoadedData {
                x: ds.x,
                y: ds.y,
                targets: ds.columns.targets,
            })
        }
    }
}

/// One calibration outcome plus the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u64,
    pub config_hash: String,
    #[serde(flatten)]
    pub report: CalibrationReport,
}

struct Semiparametric {
    ecdfs: Vec<MarginalEcdf>,
    pseudo: PseudoObservations,
    copula: CopulaModel,
    u_star: Vec<f64>,
    gradient: Vec<f64>,
}

fn fit_semiparametric(scores: &ScoreMatrix, config: &RunConfig) -> Result<Semiparametric> {
    let ecdfs = fit_ecdfs(scores.view())?;
    let pseudo = pit_transform(&ecdfs, scores.view())?;
    let copula = fit_copula(&pseudo, &config.vine_options())?;
    let u_star = optimize_level_curve(&copula, config.alpha, config.norm, &LevelCurveOptions::default())?;
    let gradient = grad_cdf(&copula, &u_star, config.fd_step)?;
    Ok(Semiparametric {
        ecdfs,
        pseudo,
        copula,
        u_star,
        gradient,
    })
}

enum Outcome {
    Rect(Vec<f64>, Option<QuantileResult>),
    Ball(f64, ScalarNorm),
}

/// Runs every configured scheme for one seed.
pub fn run_seed(config: &RunConfig, data: &LoadedData, seed: u64) -> Result<Vec<CalibrationReport>> {
    let n = data.x.nrows();
    let split = match (config.n_cal, config.n_test) {
        (None, None) => split_data(n, config.fractions, seed)?,
        (cal, test) => {
            let cal = cal.unwrap_or((config.fractions.cal * n as f64).floor() as usize);
            let test = test.unwrap_or((config.fractions.test * n as f64).floor() as usize);
            split_counts(n, cal, test, seed)?
        }
    };
    let rows = |idx: &[usize], m: &Array2<f64>| m.select(Axis(0), idx);
    let (x_train, y_train) = (rows(&split.train, &data.x), rows(&split.train, &data.y));
    let (x_cal, y_cal) = (rows(&split.cal, &data.x), rows(&split.cal, &data.y));
    let (x_test, y_test) = (rows(&split.test, &data.x), rows(&split.test, &data.y));

    let model = fit_ridge(x_train.view(), y_train.view(), config.ridge_lambda)?;
    let pred_cal = model.predict(x_cal.view())?;
    let pred_test = model.predict(x_test.view())?;
    let scores = compute_scores(pred_cal.view(), y_cal.view())?;
    let d = scores.dim();

    let mut semi: Option<std::result::Result<Semiparametric, String>> = None;
    let mut reports = Vec::with_capacity(config.schemes.len());
    for &scheme in &config.schemes {
        let start = Instant::now();
        let outcome: std::result::Result<Outcome, String> = match scheme {
            Scheme::Independent => calibrate_independent(&scores, config.alpha)
                .map(|q| Outcome::Rect(q, None))
                .map_err(|e| e.to_string()),
            Scheme::ScalarL1 | Scheme::ScalarL2 | Scheme::ScalarLinf => {
                let norm = match scheme {
                    Scheme::ScalarL1 => ScalarNorm::L1,
                    Scheme::ScalarL2 => ScalarNorm::L2,
                    _ => ScalarNorm::Linf,
                };
                calibrate_scalar(pred_cal.view(), y_cal.view(), config.alpha, norm)
                    .map(|r| Outcome::Ball(r, norm))
                    .map_err(|e| e.to_string())
            }
            Scheme::EmpiricalCopula => calibrate_empirical_copula_diagonal(&scores, config.alpha)
                .map(|q| Outcome::Rect(q, None))
                .map_err(|e| e.to_string()),
            Scheme::Plugin | Scheme::Corrected => {
                let fit = semi.get_or_insert_with(|| fit_semiparametric(&scores, config).map_err(|e| e.to_string()));
                match fit {
                    Err(e) => Err(e.clone()),
                    Ok(s) => {
                        let corrected = if scheme == Scheme::Corrected {
                            one_step(&s.u_star, &s.pseudo, &s.gradient, config.alpha)
                                .map(Some)
                                .map_err(|e| e.to_string())
                        } else {
                            Ok(None)
                        };
                        corrected.map(|u_one_step| {
                            let point = u_one_step.as_deref().unwrap_or(&s.u_star);
                            let q_scores = to_score_space(point, &s.ecdfs);
                            log::debug!("{scheme} seed {seed}: copula {}", short_copula(&s.copula));
                            let detail = QuantileResult {
                                u_star: s.u_star.clone(),
                                u_one_step,
                                gradient: s.gradient.clone(),
                                q_scores: q_scores.clone(),
                                alpha: config.alpha,
                                norm: config.norm,
                            };
                            Outcome::Rect(q_scores, Some(detail))
                        })
                    }
                }
            }
            Scheme::PluginSplit | Scheme::CorrectedSplit => {
                let split_config = SplitConfig {
                    fraction: config.split_fraction,
                    correct: scheme == Scheme::CorrectedSplit,
                    fd_step: config.fd_step,
                };
                calibrate_split(&scores, config.alpha, &split_config)
                    .map(|r| Outcome::Rect(r.q_scores.clone(), Some(r)))
                    .map_err(|e| e.to_string())
            }
        };

        let centers = pred_test.rows().into_iter().map(|r| r.to_vec());
        let (quantile, detail, sets): (Vec<f64>, Option<QuantileResult>, std::result::Result<Vec<PredictionSet>, String>) =
            match outcome {
                Ok(Outcome::Rect(q, detail)) => {
                    let sets = centers.map(|c| form_prediction_set(&c, &q)).collect();
                    (q, detail, Ok(sets))
                }
                Ok(Outcome::Ball(r, norm)) => {
                    let sets = centers
                        .map(|c| PredictionSet {
                            center: c,
                            shape: Shape::Ball { radius: r, norm },
                        })
                        .collect();
                    (vec![r; d], None, Ok(sets))
                }
                Err(e) => (vec![f64::NAN; d], None, Err(e)),
            };
        let (coverage, efficiency, error) = match sets.and_then(|s| evaluate(&s, y_test.view()).map_err(|e| e.to_string())) {
            Ok((c, e)) => (c, e, None),
            Err(e) => {
                log::warn!("scheme {scheme} failed for seed {seed}: {e}");
                (f64::NAN, f64::NAN, Some(e))
            }
        };
        reports.push(CalibrationReport {
            scheme: scheme.to_string(),
            alpha: config.alpha,
            n_cal: scores.n(),
            seed,
            coverage,
            efficiency,
            quantile,
            detail,
            error,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(reports)
}

fn short_copula(c: &CopulaModel) -> String {
    match c {
        CopulaModel::Vine(v) => format!("vine with {} pairs", v.structure().pair_count()),
        CopulaModel::Independence { dim } => format!("independence({dim})"),
        CopulaModel::Empirical(e) => format!("empirical(n={})", e.n()),
        CopulaModel::Bivariate(p) => format!("{}", p.family()),
    }
}

/// Runs all seeds, in parallel when available, and returns records ordered
/// by seed then scheme.
pub fn run(config: &RunConfig, data: &LoadedData) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let hash = config.hash();
    let per_seed = crate::par::map_slice(&config.seeds, |&seed| run_seed(config, data, seed));
    let mut out = Vec::new();
    for reports in per_seed {
        for report in reports? {
            out.push(RunRecord {
                schema: SCHEMA_VERSION,
                config_hash: hash.clone(),
                report,
            });
        }
    }
    Ok(out)
}

pub fn csv_header(d: usize) -> Vec<String> {
    let mut h: Vec<String> = ["scheme", "alpha", "n_cal", "seed", "coverage", "efficiency"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..d).map(|j| format!("quantile_{j}")));
    h.push("config_hash".into());
    h
}

pub fn write_csv<W: Write>(out: W, records: &[RunRecord], d: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(d))?;
    for rec in records {
        let r = &rec.report;
        let mut row = vec![
            r.scheme.clone(),
            format_extended(r.alpha),
            r.n_cal.to_string(),
            r.seed.to_string(),
            format_extended(r.coverage),
            format_extended(r.efficiency),
        ];
        row.extend(r.quantile.iter().map(|&q| format_extended(q)));
        row.push(rec.config_hash.clone());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<csv>"), e))?;
    Ok(())
}

pub fn report_file_name(report: &CalibrationReport) -> String {
    format!("{}_alpha{}_seed{}.json", report.scheme, report.alpha, report.seed)
}

/// Writes one JSON file per record under `dir/reports` and the aggregate
/// CSV at `dir/summary.csv`. Returns the CSV path.
pub fn write_outputs(dir: &Path, records: &[RunRecord], d: usize) -> Result<PathBuf> {
    let reports = dir.join("reports");
    std::fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;
    for rec in records {
        let path = reports.join(report_file_name(&rec.report));
        let json = serde_json::to_string_pretty(rec)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    let csv_path = dir.join("summary.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_csv(std::io::BufWriter::new(file), records, d)?;
    Ok(csv_path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Alpha,
    NCal,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "n_cal" | "n-cal" => Ok(SweepAxis::NCal),
            other => Err(Error::invalid(format!("unknown sweep axis '{other}' (expected alpha or n_cal)"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::NCal => "n_cal",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub record: RunRecord,
}

pub fn sweep(config: &RunConfig, data: &LoadedData, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one axis value"));
    }
    let mut rows = Vec::new();
    for &value in values {
        let mut cfg = config.clone();
        match axis {
            SweepAxis::Alpha => cfg.alpha = value,
            SweepAxis::NCal => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::invalid(format!("n_cal values must be positive integers, got {value}")));
                }
                cfg.n_cal = Some(value as usize);
            }
        }
        for record in run(&cfg, data)? {
            rows.push(SweepRow { axis, value, record });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["axis", "value", "scheme", "seed", "coverage", "efficiency", "config_hash"])?;
    for row in rows {
        let r = &row.record.report;
        w.write_record([
            row.axis.to_string(),
            format_extended(row.value),
            r.scheme.clone(),
            r.seed.to_string(),
            format_extended(r.coverage),
            format_extended(r.efficiency),
            row.record.config_hash.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(Path::new("<csv>"), e))?;
    Ok(())
}
