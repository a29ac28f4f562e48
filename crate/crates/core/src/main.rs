use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use copconf::copulas::Family;
use copconf::datagen::{generate, write_csv, NoiseCopula, SyntheticSpec};
use copconf::experiment::{self, DataSource, RunConfig, Scheme, SweepAxis};
use copconf::quantile::Norm;
use copconf::{Error, Result};

#[derive(Parser)]
#[command(name = "copconf", version, about = "Copula-based multi-target conformal prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-target regression dataset.
    Simulate(SimulateArgs),
    /// Calibrate and evaluate prediction sets for every scheme and seed.
    Calibrate(CalibrateArgs),
    /// Repeat calibration over a list of alpha or calibration-size values.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    p: usize,
    /// independence, gaussian:<rho> or gumbel:<theta>
    #[arg(long, default_value = "independence")]
    noise_copula: NoiseCopula,
    #[arg(long, default_value_t = 0.1)]
    relative_noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV dataset with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target column names, comma separated, in output order.
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    schemes: Vec<Scheme>,
    #[arg(long, value_delimiter = ',')]
    families: Vec<Family>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    n_cal: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    split_fraction: Option<f64>,
    #[arg(long)]
    norm: Option<Norm>,
    #[arg(long)]
    ridge_lambda: Option<f64>,
    /// Worker threads; COPCONF_JOBS takes precedence when set.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output directory for `summary.csv` and `reports/*.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    axis: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(path) = &self.data {
            if self.targets.is_empty() {
                return Err(Error::invalid("--targets is required with --data"));
            }
            cfg.data = Some(DataSource::Csv {
                path: path.clone(),
                targets: self.targets.clone(),
            });
        } else if !self.targets.is_empty() {
            match &mut cfg.data {
                Some(DataSource::Csv { targets, .. }) => targets.clone_from(&self.targets),
                _ => return Err(Error::invalid("--targets needs a CSV data source")),
            }
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if !self.schemes.is_empty() {
            cfg.schemes.clone_from(&self.schemes);
        }
        if !self.families.is_empty() {
            cfg.families.clone_from(&self.families);
        }
        if let Some(m) = self.mc_samples {
            cfg.mc_samples = m;
        }
        if !self.seeds.is_empty() {
            cfg.seeds.clone_from(&self.seeds);
        }
        if self.n_cal.is_some() {
            cfg.n_cal = self.n_cal;
        }
        if self.n_test.is_some() {
            cfg.n_test = self.n_test;
        }
        if let Some(f) = self.split_fraction {
            cfg.split_fraction = f;
        }
        if let Some(n) = self.norm {
            cfg.norm = n;
        }
        if let Some(l) = self.ridge_lambda {
            cfg.ridge_lambda = l;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn jobs(&self) -> Result<Option<usize>> {
        match std::env::var("COPCONF_JOBS") {
            Ok(v) if !v.trim().is_empty() => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| Error::invalid(format!("COPCONF_JOBS must be a positive integer, got '{v}'"))),
            _ => Ok(self.jobs),
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let seed = args.seed.ok_or_else(|| Error::invalid("seed required (pass --seed)"))?;
    let spec = SyntheticSpec {
        d: args.d,
        p: args.p,
        n: args.n,
        noise_copula: args.noise_copula,
        relative_noise: args.relative_noise,
        seed,
    };
    let (x, y) = generate(&spec)?;
    write_csv(&args.out, x.view(), y.view())?;
    println!(
        "wrote {} rows, {} features, {} targets to {}",
        x.nrows(),
        x.ncols(),
        y.ncols(),
        args.out.display()
    );
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let data = experiment::load_data(cfg.data.as_ref().expect("validated"))?;
    let records = copconf::par::with_jobs(args.run.jobs()?, || experiment::run(&cfg, &data))?;
    let csv = experiment::write_outputs(&args.out, &records, data.y.ncols())?;
    for scheme in &cfg.schemes {
        let rows: Vec<_> = records.iter().filter(|r| r.report.scheme == scheme.name()).collect();
        let failed = rows.iter().filter(|r| r.report.error.is_some()).count();
        let ok: Vec<_> = rows.iter().filter(|r| r.report.error.is_none()).collect();
        let mean = |f: &dyn Fn(&experiment::RunRecord) -> f64| {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len().max(1) as f64
        };
        println!(
            "{:<16} coverage {:.4}  efficiency {}  failed {}",
            scheme.name(),
            mean(&|r| r.report.coverage),
            copconf::report::format_extended(mean(&|r| r.report.efficiency)),
            failed
        );
    }
    println!("wrote {}", csv.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let data = experiment::load_data(cfg.data.as_ref().expect("validated"))?;
    let rows = copconf::par::with_jobs(args.run.jobs()?, || experiment::sweep(&cfg, &data, args.axis, &args.values))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
    experiment::write_sweep_csv(std::io::BufWriter::new(file), &rows)?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
