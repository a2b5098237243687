use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use canonsup::gamma::{build_greedy_tree, dudley_bound, gamma_exact_small, gamma_from_tree, gaussian_gamma2_proxy, sudakov_lower, EXACT_LIMIT};
use canonsup::harness::{self, counterexample_run, moment_check, InstanceFamily, OutputFormat, RunDocument};
use canonsup::mc_sup::{esup_mc, DEFAULT_SAMPLES};
use canonsup::transforms::{apply_permuted_weights, epi_gamma2, ts_transform, GammaMethod, DEFAULT_NUM_PERMS};
use canonsup::{Driver, MetricKind, Permutation, PointSet, RandomStream, WeibullLaw};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Expected suprema of canonical processes with Weibull-tailed drivers.
#[derive(Parser)]
#[command(name = "canonsup", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo E sup_t Σ t_k ξ_k for one set and driver.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = DriverName::Weibull)]
        driver: DriverName,
    },
    /// Every γ estimate for one set.
    Gamma {
        #[command(flatten)]
        common: Common,
    },
    /// Emit T_π (random permutation) or T^s (identity) as CSV.
    Transform {
        #[command(flatten)]
        common: Common,
        /// Use the identity permutation.
        #[arg(long)]
        identity: bool,
    },
    /// Run every experiment in a run file.
    Verify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Closed-form counter-example on {-1, 1}^n.
    Counterexample {
        #[arg(long, default_value_t = 0.5)]
        r: f64,
        /// Powers of two, at least 16.
        #[arg(long, value_delimiter = ',', default_values_t = [256u64, 1024, 4096, 16384])]
        n: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Monte Carlo L_p norms of Σ t_k X_k against the moment bounds.
    Moments {
        /// Coefficients t; alternatively every point of --set/--family.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        t: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [2.0, 4.0, 8.0])]
        p: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Point set as CSV, one point per row.
    #[arg(long, conflicts_with = "family")]
    set: Option<PathBuf>,
    /// Generated family: hypercube:N:M, gaussian:N:M[:SCALE], basis:N[:DECAY].
    #[arg(long)]
    family: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_NUM_PERMS)]
    perms: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

impl Common {
    fn load(&self) -> Result<Option<PointSet>> {
        match (&self.set, &self.family) {
            (Some(path), _) => Ok(Some(PointSet::from_csv_path(path).with_context(|| format!("reading {}", path.display()))?)),
            (None, Some(spec)) => Ok(Some(InstanceFamily::parse_spec(spec, self.seed)?.generate()?)),
            (None, None) => Ok(None),
        }
    }

    fn require(&self) -> Result<PointSet> {
        self.load()?.context("one of --set or --family is required")
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DriverName {
    Gaussian,
    Rademacher,
    Weibull,
    CondGaussian,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn emit_rows(out: Option<&Path>, format: Format, header: &[&str], rows: &[Vec<String>], json: serde_json::Value) -> Result<()> {
    match format {
        Format::Json => emit(out, &(serde_json::to_string_pretty(&json)? + "\n")),
        Format::Csv => {
            let mut text = header.join(",") + "\n";
            for row in rows {
                text += &(row.join(",") + "\n");
            }
            emit(out, &text)
        }
    }
}

fn emit_document(doc: &RunDocument, out: Option<&Path>, format: Format) -> Result<()> {
    match format {
        Format::Json => emit(out, &doc.to_json()?),
        Format::Csv => emit(out, &doc.to_csv()?),
    }
}

fn simulate(common: &Common, driver: DriverName) -> Result<()> {
    let set = common.require()?;
    let driver = match driver {
        DriverName::Gaussian => Driver::Gaussian,
        DriverName::Rademacher => Driver::Rademacher,
        DriverName::Weibull => Driver::Weibull(common.r),
        DriverName::CondGaussian => Driver::CondGaussian(common.r),
    };
    let est = esup_mc(&set, &driver, common.samples, RandomStream::from_seed(common.seed))?;
    let row = vec![
        format!("{driver:?}"),
        est.mean.to_string(),
        est.stderr.to_string(),
        est.samples.to_string(),
        est.seed.to_string(),
    ];
    let json = serde_json::json!({"set": set.label(), "driver": driver, "estimate": est});
    emit_rows(common.out.as_deref(), common.format, &["driver", "mean", "stderr", "samples", "seed"], &[row], json)
}

fn gamma(common: &Common) -> Result<()> {
    let set = common.require()?;
    let r = common.r;
    let mut values = vec![
        ("d2", gamma_from_tree(&build_greedy_tree(&set, MetricKind::L2), 2.0, MetricKind::L2)?),
        ("dinf", gamma_from_tree(&build_greedy_tree(&set, MetricKind::Linf), r, MetricKind::Linf)?),
        ("d2", dudley_bound(&set, MetricKind::L2)),
        ("d2", sudakov_lower(&set, MetricKind::L2)),
        ("d2", gaussian_gamma2_proxy(&set, common.samples, RandomStream::from_seed(common.seed))?),
    ];
    if set.len() <= EXACT_LIMIT {
        values.push(("d2", gamma_exact_small(&set, MetricKind::L2, 2.0)?));
        values.push(("dinf", gamma_exact_small(&set, MetricKind::Linf, r)?));
    }
    let s = WeibullLaw::new(r)?.s();
    let epi = epi_gamma2(&set, s, common.perms, GammaMethod::Greedy, RandomStream::new(common.seed, 1))?;
    let mut rows: Vec<Vec<String>> = values
        .iter()
        .map(|(metric, v)| {
            vec![
                format!("{:?}", v.method),
                v.alpha.to_string(),
                metric.to_string(),
                v.value.to_string(),
                v.stderr.map_or(String::new(), |e| e.to_string()),
            ]
        })
        .collect();
    rows.push(vec!["EpiGamma2".into(), "2".into(), "d2".into(), epi.mean.to_string(), epi.stderr.to_string()]);
    let json = serde_json::json!({
        "set": set.label(),
        "r": r,
        "values": values.iter().map(|(m, v)| serde_json::json!({"metric": m, "gamma": v})).collect::<Vec<_>>(),
        "epi_gamma2": epi,
    });
    emit_rows(common.out.as_deref(), common.format, &["method", "alpha", "metric", "value", "stderr"], &rows, json)
}

fn transform(common: &Common, identity: bool) -> Result<()> {
    let set = common.require()?;
    let s = WeibullLaw::new(common.r)?.s();
    let out = if identity {
        ts_transform(&set, s)?
    } else {
        let perm = Permutation::random(set.dim(), &mut RandomStream::from_seed(common.seed).rng());
        apply_permuted_weights(&set, &perm, s)?
    };
    match &common.out {
        Some(path) => out.write_csv(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)?,
        None => out.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn moments(t: &[f64], p: &[f64], common: &Common) -> Result<()> {
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    if !t.is_empty() {
        vectors.push(t.to_vec());
    }
    if let Some(set) = common.load()? {
        vectors.extend(set.to_vecs());
    }
    if vectors.is_empty() {
        bail!("give coefficients with --t, --set or --family");
    }
    let reports = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| moment_check(v, common.r, p, common.samples, RandomStream::new(common.seed, i as u64), harness::DEFAULT_WINDOW))
        .collect::<canonsup::Result<Vec<_>>>()?;
    emit_document(&RunDocument::from_reports(reports), common.out.as_deref(), common.format)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common, driver } => simulate(common, *driver).map(|_| 0),
        Command::Gamma { common } => gamma(common).map(|_| 0),
        Command::Transform { common, identity } => transform(common, *identity).map(|_| 0),
        Command::Moments { t, p, common } => moments(t, p, common).map(|_| 0),
        Command::Counterexample { r, n, out, format } => counterexample_run(*r, n)
            .map_err(anyhow::Error::from)
            .and_then(|reps| {
                let doc = RunDocument::from_reports(reps);
                emit_document(&doc, out.as_deref(), *format)?;
                Ok(i32::from(doc.violations > 0))
            }),
        Command::Verify { config, out, format } => harness::run(config, out.as_deref(), (*format).into())
            .map_err(anyhow::Error::from)
            .map(|outcome| {
                if outcome.out.is_none() {
                    print!("{}", outcome.document.to_json().unwrap_or_default());
                }
                if let Some(e) = &outcome.document.error {
                    eprintln!("error: {e}");
                }
                eprintln!(
                    "{} reports, {} flagged{}",
                    outcome.document.reports.len(),
                    outcome.document.violations,
                    outcome.out.map_or(String::new(), |p| format!(", written to {}", p.display()))
                );
                outcome.exit_code
            }),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
