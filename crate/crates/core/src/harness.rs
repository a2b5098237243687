//! End-to-end experiments: instance families, run configuration, bound
//! reports and their persistence.
//!
//! Every experiment is a pure function of its [`RunConfig`]. Instance `i`
//! of a run draws from `RandomStream::new(seed, i)` and its forks, and
//! instances are assembled in configuration order, so reports are
//! bit-identical across reruns and worker counts. Wall-clock times are
//! kept out of the report file and written to a separate timing file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::{build_greedy_tree, chaining_bound, chaining_tree, gamma_from_tree};
use crate::laws::{conjugate_exponent, corollary_moment_bound, hmso_moment_bound, WeibullLaw};
use crate::mc_sup::{esup_mc, Driver, SupEstimate, CHUNK, DEFAULT_SAMPLES};
use crate::par::{self, Execution};
use crate::points::{MetricKind, PointSet};
use crate::stream::RandomStream;
use crate::transforms::{epi_gamma2, weights, GammaMethod, DEFAULT_NUM_PERMS};

pub const DEFAULT_WINDOW: (f64, f64) = (1.0 / 64.0, 64.0);

// ---------------------------------------------------------------------------
// instance families

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    Constant,
    Harmonic,
    Sqrt,
    Geometric,
}

impl Decay {
    fn coefficient(self, k: usize) -> f64 {
        let k = k as f64;
        match self {
            Decay::Constant => 1.0,
            Decay::Harmonic => k.recip(),
            Decay::Sqrt => k.sqrt().recip(),
            Decay::Geometric => 0.5f64.powf(k - 1.0),
        }
    }
}

impl FromStr for Decay {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown decay {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyKind {
    /// `m` distinct vertices of `{-1, 1}^n`; all of them when `m = 2^n`.
    HypercubeSubset { n: usize, m: usize },
    /// `m` points with independent `N(0, scale²)` coordinates.
    GaussianCloud { n: usize, m: usize, scale: f64 },
    /// `{a_k e_k : k = 1..n}` with coefficients given by `decay`.
    ScaledBasis { n: usize, decay: Decay },
    CsvFile { path: PathBuf },
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::HypercubeSubset { .. } => "hypercube_subset",
            FamilyKind::GaussianCloud { .. } => "gaussian_cloud",
            FamilyKind::ScaledBasis { .. } => "scaled_basis",
            FamilyKind::CsvFile { .. } => "csv_file",
        }
    }
}

/// A generator of point sets: a deterministic function of `(kind, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFamily {
    #[serde(flatten)]
    pub kind: FamilyKind,
    #[serde(default)]
    pub seed: u64,
}

impl fmt::Display for InstanceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FamilyKind::HypercubeSubset { n, m } => write!(f, "hypercube_subset(n={n},m={m})")?,
            FamilyKind::GaussianCloud { n, m, scale } => write!(f, "gaussian_cloud(n={n},m={m},scale={scale})")?,
            FamilyKind::ScaledBasis { n, decay } => write!(f, "scaled_basis(n={n},decay={decay:?})")?,
            FamilyKind::CsvFile { path } => write!(f, "csv_file({})", path.display())?,
        }
        write!(f, "#seed={}", self.seed)
    }
}

impl InstanceFamily {
    pub fn new(kind: FamilyKind, seed: u64) -> Self {
        Self { kind, seed }
    }

    /// Parse `hypercube:N:M`, `gaussian:N:M[:SCALE]`, `basis:N[:DECAY]` or
    /// `csv:PATH`.
    pub fn parse_spec(spec: &str, seed: u64) -> Result<Self> {
        let bad = || Error::Config(format!("bad family spec {spec:?}"));
        let (head, rest) = spec.split_once(':').ok_or_else(bad)?;
        let fields: Vec<&str> = rest.split(':').collect();
        let int = |i: usize| -> Result<usize> { fields.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let kind = match head {
            "hypercube" | "hypercube_subset" => FamilyKind::HypercubeSubset { n: int(0)?, m: int(1)? },
            "gaussian" | "gaussian_cloud" => FamilyKind::GaussianCloud {
                n: int(0)?,
                m: int(1)?,
                scale: fields.get(2).map_or(Ok(1.0), |s| s.parse().map_err(|_| bad()))?,
            },
            "basis" | "scaled_basis" => FamilyKind::ScaledBasis {
                n: int(0)?,
                decay: fields.get(1).map_or(Ok(Decay::Harmonic), |s| s.parse())?,
            },
            "csv" | "csv_file" => FamilyKind::CsvFile { path: PathBuf::from(rest) },
            _ => return Err(bad()),
        };
        Ok(Self::new(kind, seed))
    }

    pub fn generate(&self) -> Result<PointSet> {
        let mut rng = RandomStream::new(self.seed, 0xFA11).rng();
        let points: Vec<Vec<f64>> = match &self.kind {
            &FamilyKind::HypercubeSubset { n, m } => {
                if n == 0 || n > 24 {
                    return Err(Error::Config(format!("hypercube dimension must lie in 1..=24, got {n}")));
                }
                let total = 1usize << n;
                if m == 0 || m > total {
                    return Err(Error::Config(format!("hypercube subset size must lie in 1..={total}, got {m}")));
                }
                let codes: Vec<usize> = if m == total {
                    (0..total).collect()
                } else {
                    let mut all: Vec<usize> = (0..total).collect();
                    let (chosen, _) = all.partial_shuffle(&mut rng, m);
                    chosen.to_vec()
                };
                codes
                    .into_iter()
                    .map(|c| (0..n).map(|k| if c >> k & 1 == 1 { 1.0 } else { -1.0 }).collect())
                    .collect()
            }
            &FamilyKind::GaussianCloud { n, m, scale } => {
                if n == 0 || m == 0 || !(scale > 0.0) {
                    return Err(Error::Config("gaussian cloud needs n, m >= 1 and scale > 0".into()));
                }
                (0..m)
                    .map(|_| (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect()
            }
            &FamilyKind::ScaledBasis { n, decay } => {
                if n == 0 {
                    return Err(Error::Config("scaled basis needs n >= 1".into()));
                }
                (0..n)
                    .map(|k| {
                        let mut e = vec![0.0; n];
                        e[k] = decay.coefficient(k + 1);
                        e
                    })
                    .collect()
            }
            FamilyKind::CsvFile { path } => return Ok(PointSet::from_csv_path(path)?.with_label(self.to_string())),
        };
        Ok(PointSet::from_points(points)?.with_label(self.to_string()))
    }
}

/// The fixed suite used by the statistical checks.
pub fn default_suite() -> Vec<InstanceFamily> {
    vec![
        InstanceFamily::new(FamilyKind::GaussianCloud { n: 8, m: 32, scale: 1.0 }, 1),
        InstanceFamily::new(FamilyKind::GaussianCloud { n: 8, m: 32, scale: 1.0 }, 2),
        InstanceFamily::new(FamilyKind::HypercubeSubset { n: 8, m: 32 }, 3),
        InstanceFamily::new(FamilyKind::HypercubeSubset { n: 10, m: 16 }, 4),
        InstanceFamily::new(FamilyKind::ScaledBasis { n: 16, decay: Decay::Harmonic }, 0),
        InstanceFamily::new(FamilyKind::GaussianCloud { n: 16, m: 16, scale: 0.5 }, 5),
    ]
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Flagged,
    /// Nothing to compare, e.g. a ratio of two zeros.
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stderr: Option<f64>,
}

impl Quantity {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: None }
    }

    pub fn estimate(value: f64, stderr: f64) -> Self {
        Self {
            value,
            stderr: Some(stderr),
        }
    }
}

impl From<SupEstimate> for Quantity {
    fn from(e: SupEstimate) -> Self {
        Quantity::estimate(e.mean, e.stderr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub name: String,
    pub numerator: String,
    pub denominator: String,
    /// `None` when the denominator is zero.
    pub value: Option<f64>,
    pub window: Option<(f64, f64)>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub experiment: String,
    pub instance: String,
    pub family: Option<String>,
    pub r: Option<f64>,
    pub s: Option<f64>,
    pub dim: usize,
    pub cardinality: usize,
    pub seed: u64,
    pub substream: u64,
    pub quantities: BTreeMap<String, Quantity>,
    pub ratios: Vec<Ratio>,
    pub notes: Vec<String>,
    pub status: Status,
    #[serde(skip)]
    pub wall_clock_ms: f64,
}

impl BoundReport {
    fn new(experiment: &str, instance: String, stream: RandomStream) -> Self {
        Self {
            experiment: experiment.into(),
            instance,
            family: None,
            r: None,
            s: None,
            dim: 0,
            cardinality: 0,
            seed: stream.seed,
            substream: stream.substream,
            quantities: BTreeMap::new(),
            ratios: Vec::new(),
            notes: Vec::new(),
            status: Status::Neutral,
            wall_clock_ms: 0.0,
        }
    }

    fn for_set(experiment: &str, family: &InstanceFamily, set: &PointSet, stream: RandomStream) -> Self {
        let mut rep = Self::new(experiment, family.to_string(), stream);
        rep.family = Some(family.kind.name().into());
        rep.dim = set.dim();
        rep.cardinality = set.len();
        rep
    }

    fn with_r(mut self, r: f64) -> Self {
        self.r = Some(r);
        let s = conjugate_exponent(r);
        self.s = s.is_finite().then_some(s);
        self
    }

    pub fn set(&mut self, name: &str, q: impl Into<Quantity>) {
        self.quantities.insert(name.into(), q.into());
    }

    pub fn quantity(&self, name: &str) -> Option<f64> {
        self.quantities.get(name).map(|q| q.value)
    }

    pub fn ratio(&self, name: &str) -> Option<&Ratio> {
        self.ratios.iter().find(|r| r.name == name)
    }

    /// Record `numerator / denominator` and check it against `window`.
    pub fn add_ratio(&mut self, name: &str, numerator: &str, denominator: &str, window: Option<(f64, f64)>) {
        let num = self.quantity(numerator).unwrap_or(f64::NAN);
        let den = self.quantity(denominator).unwrap_or(f64::NAN);
        let value = (den != 0.0 && den.is_finite() && num.is_finite()).then(|| num / den);
        let status = match (value, window) {
            (None, _) if num == 0.0 && den == 0.0 => Status::Neutral,
            (None, _) => Status::Flagged,
            (Some(_), None) => Status::Pass,
            (Some(v), Some((lo, hi))) if v >= lo && v <= hi => Status::Pass,
            (Some(_), Some(_)) => Status::Flagged,
        };
        self.ratios.push(Ratio {
            name: name.into(),
            numerator: numerator.into(),
            denominator: denominator.into(),
            value,
            window,
            status,
        });
    }

    /// A one-sided check folded into the ratio list.
    fn add_check(&mut self, name: &str, numerator: &str, denominator: &str, window: (f64, f64)) {
        self.add_ratio(name, numerator, denominator, Some(window));
    }

    fn finish(mut self, started: Instant) -> Self {
        self.status = if self.ratios.iter().any(|r| r.status == Status::Flagged) {
            Status::Flagged
        } else if self.ratios.iter().any(|r| r.status == Status::Pass) {
            Status::Pass
        } else {
            Status::Neutral
        };
        self.wall_clock_ms = started.elapsed().as_secs_f64() * 1e3;
        self
    }
}

/// `max/min` of a ratio across the reports of each `(family, r)` group.
pub fn ratio_stability(reports: &[BoundReport], ratio: &str) -> BTreeMap<String, f64> {
    let mut groups: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for rep in reports {
        if let Some(v) = rep.ratio(ratio).and_then(|r| r.value) {
            let key = format!("{}@r={}", rep.family.as_deref().unwrap_or("?"), rep.r.unwrap_or(f64::NAN));
            let e = groups.entry(key).or_insert((f64::INFINITY, 0.0));
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        }
    }
    groups.into_iter().map(|(k, (lo, hi))| (k, hi / lo)).collect()
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaMethodName {
    #[default]
    Greedy,
    GaussianProxy,
    Exact,
}

impl FromStr for GammaMethodName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown gamma method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    MainBound,
    R1Bound,
    Counterexample,
    Truncation,
    Moments,
}

fn default_samples() -> u64 {
    DEFAULT_SAMPLES
}

fn default_perms() -> usize {
    DEFAULT_NUM_PERMS
}

fn default_window() -> (f64, f64) {
    DEFAULT_WINDOW
}

/// One experiment. `name` selects the experiment; the trailing optional
/// keys feed the experiments that need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: Experiment,
    #[serde(default)]
    pub families: Vec<InstanceFamily>,
    #[serde(default)]
    pub r_values: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default = "default_perms")]
    pub num_perms: usize,
    #[serde(default)]
    pub gamma_method: GammaMethodName,
    #[serde(default = "default_window")]
    pub window: (f64, f64),
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Cube dimensions for the counter-example.
    #[serde(default)]
    pub n_list: Vec<u64>,
    /// Prefix fraction for the truncation check.
    #[serde(default)]
    pub theta: Option<f64>,
    /// Moment orders for the moment check.
    #[serde(default)]
    pub p_list: Vec<f64>,
    /// Coefficient vectors for the moment check.
    #[serde(default)]
    pub vectors: Vec<Vec<f64>>,
}

impl RunConfig {
    pub fn new(name: Experiment) -> Self {
        Self {
            name,
            families: Vec::new(),
            r_values: Vec::new(),
            samples: DEFAULT_SAMPLES,
            num_perms: DEFAULT_NUM_PERMS,
            gamma_method: GammaMethodName::Greedy,
            window: DEFAULT_WINDOW,
            seed: 0,
            out: None,
            n_list: Vec::new(),
            theta: None,
            p_list: Vec::new(),
            vectors: Vec::new(),
        }
    }

    pub fn gamma_method(&self) -> GammaMethod {
        match self.gamma_method {
            GammaMethodName::Greedy => GammaMethod::Greedy,
            GammaMethodName::GaussianProxy => GammaMethod::GaussianProxy { samples: self.samples },
            GammaMethodName::Exact => GammaMethod::Exact,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.samples < 2 {
            return cfg(format!("samples must be >= 2, got {}", self.samples));
        }
        if self.num_perms == 0 {
            return cfg("num_perms must be >= 1".into());
        }
        let (lo, hi) = self.window;
        if !(lo > 0.0 && lo <= hi) {
            return cfg(format!("window must satisfy 0 < lo <= hi, got [{lo}, {hi}]"));
        }
        let r_range = |ok: fn(f64) -> bool, what: &str| -> Result<()> {
            match self.r_values.iter().find(|&&r| !ok(r)) {
                Some(r) => cfg(format!("{:?}: r = {r} outside {what}", self.name)),
                None => Ok(()),
            }
        };
        match self.name {
            Experiment::MainBound => r_range(|r| r > 0.0 && r < 2.0, "(0, 2)"),
            Experiment::R1Bound => r_range(|r| (1.0..=2.0).contains(&r), "[1, 2]"),
            Experiment::Counterexample => {
                r_range(|r| r > 0.0 && r < 1.0, "(0, 1)")?;
                match self.n_list.iter().find(|&&n| !n.is_power_of_two() || n < 16) {
                    Some(n) => cfg(format!("counterexample n = {n} is not a power of two >= 16")),
                    None => Ok(()),
                }
            }
            Experiment::Truncation => {
                r_range(|r| r > 0.0 && r < 2.0, "(0, 2)")?;
                match self.theta {
                    Some(t) if t > 0.0 && t <= 1.0 => Ok(()),
                    other => cfg(format!("truncation needs theta in (0, 1], got {other:?}")),
                }
            }
            Experiment::Moments => {
                r_range(|r| r > 0.0 && r <= 2.0, "(0, 2]")?;
                match self.p_list.iter().find(|&&p| !(p >= 2.0)) {
                    Some(p) => cfg(format!("moment order p = {p} must be >= 2")),
                    None => Ok(()),
                }
            }
        }
    }
}

/// Parse a run file: one [`RunConfig`] object or an array of them.
pub fn parse_run_file(text: &str) -> Result<Vec<RunConfig>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<serde_json::Value>),
        One(serde_json::Value),
    }
    let values = match serde_json::from_str::<OneOrMany>(text)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(v) => vec![v],
    };
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(format!("experiment {i}: {e}")))?;
            cfg.validate().map_err(|e| e.context(format!("experiment {i}")))?;
            Ok(cfg)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// experiments

struct Job<'a> {
    family: &'a InstanceFamily,
    set: Arc<PointSet>,
    r: f64,
    stream: RandomStream,
}

/// Instances × r values, in configuration order, each with its own stream.
fn jobs(cfg: &RunConfig) -> Result<Vec<Job<'_>>> {
    let mut out = Vec::new();
    for family in &cfg.families {
        let set = Arc::new(family.generate().map_err(|e| e.context(family.to_string()))?);
        for &r in &cfg.r_values {
            let stream = RandomStream::new(cfg.seed, out.len() as u64);
            out.push(Job {
                family,
                set: Arc::clone(&set),
                r,
                stream,
            });
        }
    }
    Ok(out)
}

fn run_jobs(cfg: &RunConfig, f: impl Fn(&Job<'_>) -> Result<BoundReport> + Sync + Send) -> Result<Vec<BoundReport>> {
    let jobs = jobs(cfg)?;
    par::try_map_indexed(jobs.len(), Execution::auto(), |i| {
        let job = &jobs[i];
        f(job).map_err(|e| e.context(format!("{} at r = {}", job.family, job.r)))
    })
}

/// `E sup X_t` under the Weibull driver against the permutation average
/// `E_π γ̂₂(T_π)`; the ratio must stay inside the configured window.
pub fn verify_main_bound(cfg: &RunConfig) -> Result<Vec<BoundReport>> {
    run_jobs(cfg, |job| {
        let started = Instant::now();
        let s = conjugate_exponent(job.r);
        let mut rep = BoundReport::for_set("main_bound", job.family, &job.set, job.stream).with_r(job.r);
        let esup = esup_mc(&job.set, &Driver::Weibull(job.r), cfg.samples, job.stream.fork(0))?;
        let epi = epi_gamma2(&job.set, s, cfg.num_perms, cfg.gamma_method(), job.stream.fork(1))?;
        rep.set("esup_weibull", esup);
        rep.set("epi_gamma2", Quantity::estimate(epi.mean, epi.stderr));
        rep.set("epi_gamma2_min", Quantity::exact(epi.min));
        rep.set("epi_gamma2_max", Quantity::exact(epi.max));
        rep.notes.push(format!("gamma method {:?}, {} permutations", cfg.gamma_method, epi.num_perms));
        rep.add_ratio("esup_over_epi_gamma2", "esup_weibull", "epi_gamma2", Some(cfg.window));
        rep.add_ratio("epi_gamma2_spread", "epi_gamma2_max", "epi_gamma2_min", None);
        Ok(rep.finish(started))
    })
}

/// Upper-bound comparison for `r ∈ [1, 2]`: `E sup` against greedy
/// `γ₂(T, d₂) + γ_r(T, d_∞)`, the chaining bound on the intersected tree,
/// and the permutation average.
pub fn verify_r1_bound(cfg: &RunConfig) -> Result<Vec<BoundReport>> {
    run_jobs(cfg, |job| {
        let started = Instant::now();
        let r = job.r;
        if !(1.0..=2.0).contains(&r) {
            return Err(Error::InvalidParameter(format!("r = {r} outside [1, 2]")));
        }
        let set = job.set.as_ref();
        let mut rep = BoundReport::for_set("r1_bound", job.family, set, job.stream).with_r(r);
        let esup = esup_mc(set, &Driver::Weibull(r), cfg.samples, job.stream.fork(0))?;
        let g2 = gamma_from_tree(&build_greedy_tree(set, MetricKind::L2), 2.0, MetricKind::L2)?.value;
        let gr = gamma_from_tree(&build_greedy_tree(set, MetricKind::Linf), r, MetricKind::Linf)?.value;
        let chain = chaining_bound(set, r, &chaining_tree(set)?)?;
        let epi = epi_gamma2(set, conjugate_exponent(r), cfg.num_perms, cfg.gamma_method(), job.stream.fork(1))?;
        rep.set("esup_weibull", esup);
        rep.set("gamma2_d2", Quantity::exact(g2));
        rep.set("gamma_r_dinf", Quantity::exact(gr));
        rep.set("gamma_sum", Quantity::exact(g2 + gr));
        rep.set("chaining_bound", Quantity::exact(chain));
        rep.set("epi_gamma2", Quantity::estimate(epi.mean, epi.stderr));
        rep.set("esup_minus_3se", Quantity::exact(esup.mean - 3.0 * esup.stderr));
        rep.add_ratio("esup_over_gamma_sum", "esup_weibull", "gamma_sum", Some(cfg.window));
        rep.add_ratio("epi_gamma2_over_gamma_sum", "epi_gamma2", "gamma_sum", Some(cfg.window));
        // dominance: E sup − 3 se ≤ chaining bound
        rep.add_check("chaining_dominance", "esup_minus_3se", "chaining_bound", (f64::NEG_INFINITY, 1.0));
        Ok(rep.finish(started))
    })
}

/// One row of the closed-form counter-example on `T = {-1, 1}^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleRow {
    pub n: u64,
    pub k: u64,
    pub esup_closed: f64,
    pub gamma_r_lower: f64,
    pub simplified_lower: f64,
}

impl CounterexampleRow {
    pub fn compute(r: f64, n: u64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::InvalidParameter(format!("counter-example needs r in (0, 1), got {r}")));
        }
        if !n.is_power_of_two() || n < 16 {
            return Err(Error::InvalidParameter(format!("n = {n} must be a power of two >= 16")));
        }
        // work in log₂ so powers of two stay exact
        let j = n.trailing_zeros() as f64;
        let k = ((r + 1.0) / 2.0 * j).floor();
        Ok(Self {
            n,
            k: k as u64,
            esup_closed: n as f64 * libm::tgamma(1.0 + r.recip()),
            gamma_r_lower: (1.0 + k / r).exp2(),
            simplified_lower: (1.0 - r.recip() + j * (r + 1.0) / (2.0 * r)).exp2(),
        })
    }

    pub fn ratio_simplified(&self) -> f64 {
        self.simplified_lower / self.esup_closed
    }

    pub fn ratio_gamma(&self) -> f64 {
        self.gamma_r_lower / self.esup_closed
    }
}

/// Closed-form reproduction of the counter-example: `n E|X_1|` against
/// the `γ_r(T, d_∞)` lower bounds, for each `n` in increasing order.
pub fn counterexample_run(r: f64, n_list: &[u64]) -> Result<Vec<BoundReport>> {
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut prev: Option<f64> = None;
    ns.iter()
        .map(|&n| {
            let started = Instant::now();
            let row = CounterexampleRow::compute(r, n)?;
            let mut rep = BoundReport::new("counterexample", format!("hypercube(n={n})"), RandomStream::from_seed(0));
            rep = rep.with_r(r);
            rep.family = Some("hypercube".into());
            rep.dim = n as usize;
            rep.cardinality = 0;
            rep.notes.push("cardinality 2^n, closed forms only".into());
            rep.set("esup_closed", Quantity::exact(row.esup_closed));
            rep.set("k", Quantity::exact(row.k as f64));
            rep.set("log2_n", Quantity::exact(n.trailing_zeros() as f64));
            rep.set("gamma_r_lower", Quantity::exact(row.gamma_r_lower));
            rep.set("simplified_lower", Quantity::exact(row.simplified_lower));
            rep.add_ratio("gamma_r_lower_over_esup", "gamma_r_lower", "esup_closed", None);
            rep.add_ratio("simplified_over_esup", "simplified_lower", "esup_closed", None);
            rep.add_check("k_below_log2_n", "k", "log2_n", (0.0, 1.0 - 1e-12));
            rep.add_check("gamma_lower_dominates", "simplified_lower", "gamma_r_lower", (0.0, 1.0));
            let ratio = row.ratio_simplified();
            if let Some(p) = prev {
                // strict growth over the previous n
                rep.set("previous_simplified_ratio", Quantity::exact(p));
                rep.ratios.push(Ratio {
                    name: "simplified_ratio_growth".into(),
                    numerator: "simplified_over_esup".into(),
                    denominator: "previous_simplified_ratio".into(),
                    value: Some(ratio / p),
                    window: Some((1.0, f64::INFINITY)),
                    status: if ratio > p { Status::Pass } else { Status::Flagged },
                });
            }
            prev = Some(ratio);
            Ok(rep.finish(started))
        })
        .collect()
}

fn prefix_len(theta: f64, n: usize) -> usize {
    (((theta * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// `E sup Σ_{k≤n} t_{π(k)} g_{π(k)} a_k` against the prefix `k ≤ ⌈θn⌉`,
/// with `a = weights(n, s)`. Both sides share one stream.
pub fn truncation_check(cfg: &RunConfig, theta: f64) -> Result<Vec<BoundReport>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter(format!("theta must lie in (0, 1], got {theta}")));
    }
    run_jobs(cfg, |job| {
        let started = Instant::now();
        let n = job.set.dim();
        if (n as f64) < 2.0 / theta {
            return Err(Error::InvalidParameter(format!("need n >= 2/theta, got n = {n}")));
        }
        let a = weights(n, conjugate_exponent(job.r))?.w;
        let (full, prefix) = truncated_pair(&job.set, &a, theta, cfg.samples, job.stream)?;
        let mut rep = BoundReport::for_set("truncation", job.family, &job.set, job.stream).with_r(job.r);
        rep.set("theta", Quantity::exact(theta));
        rep.set("prefix_len", Quantity::exact(prefix_len(theta, n) as f64));
        rep.set("esup_full", full);
        rep.set("esup_prefix", prefix);
        rep.add_ratio("full_over_prefix", "esup_full", "esup_prefix", Some((0.0, cfg.window.1)));
        Ok(rep.finish(started))
    })
}

/// Full and prefix estimates for weights `a` on one shared stream.
pub fn truncated_pair(set: &PointSet, a: &[f64], theta: f64, samples: u64, stream: RandomStream) -> Result<(SupEstimate, SupEstimate)> {
    let keep = prefix_len(theta, a.len());
    let full: Arc<[f64]> = Arc::from(a);
    let cut: Arc<[f64]> = a.iter().enumerate().map(|(k, &w)| if k < keep { w } else { 0.0 }).collect();
    let f = esup_mc(set, &Driver::PermutedGaussian(full), samples, stream)?;
    let p = esup_mc(set, &Driver::PermutedGaussian(cut), samples, stream)?;
    Ok((f, p))
}

/// Monte Carlo `‖Σ t_k X_k‖_p` for each `p`, with delta-method errors.
pub fn mc_lp_norms(t: &[f64], r: f64, p_list: &[f64], samples: u64, stream: RandomStream) -> Result<Vec<(f64, f64)>> {
    let law = WeibullLaw::new(r)?;
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    let chunks = par::chunks(samples, CHUNK);
    let parts = par::map_indexed(chunks.len(), Execution::auto(), |c| {
        let (start, end) = chunks[c];
        let mut rng = stream.fork(c as u64).rng();
        let mut sums = vec![(0.0f64, 0.0f64); p_list.len()];
        for _ in start..end {
            let s: f64 = t.iter().map(|&tk| tk * law.sample(&mut rng)).sum::<f64>().abs();
            for (acc, &p) in sums.iter_mut().zip(p_list) {
                let v = s.powf(p);
                acc.0 += v;
                acc.1 += v * v;
            }
        }
        sums
    });
    let nf = samples as f64;
    Ok((0..p_list.len())
        .map(|i| {
            let (s1, s2) = parts.iter().fold((0.0, 0.0), |acc, part| (acc.0 + part[i].0, acc.1 + part[i].1));
            let p = p_list[i];
            let mean = s1 / nf;
            let var = ((s2 / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
            let se_mean = (var / nf).sqrt();
            let norm = mean.powf(p.recip());
            let se = if mean > 0.0 { se_mean / (p * mean.powf(1.0 - p.recip())) } else { 0.0 };
            (norm, se)
        })
        .collect())
}

/// Monte Carlo `‖Σ t_k X_k‖_p` against the two moment bounds.
pub fn moment_check(t: &[f64], r: f64, p_list: &[f64], samples: u64, stream: RandomStream, window: (f64, f64)) -> Result<BoundReport> {
    let started = Instant::now();
    if let Some(p) = p_list.iter().find(|&&p| !(p >= 2.0)) {
        return Err(Error::InvalidParameter(format!("moment order p = {p} must be >= 2")));
    }
    let norms = mc_lp_norms(t, r, p_list, samples, stream)?;
    let mut rep = BoundReport::new("moments", format!("t={t:?}"), stream).with_r(r);
    rep.dim = t.len();
    rep.cardinality = 1;
    for (&p, &(norm, se)) in p_list.iter().zip(&norms) {
        let cor = corollary_moment_bound(t, p, r)?.value;
        let hm = hmso_moment_bound(t, p, r)?.value;
        let mc = format!("mc_norm_p{p}");
        rep.set(&mc, Quantity::estimate(norm, se));
        rep.set(&format!("corollary_p{p}"), Quantity::exact(cor));
        rep.set(&format!("hmso_p{p}"), Quantity::exact(hm));
        rep.add_ratio(&format!("mc_over_corollary_p{p}"), &mc, &format!("corollary_p{p}"), Some((0.0, window.1)));
        rep.add_ratio(&format!("mc_over_hmso_p{p}"), &mc, &format!("hmso_p{p}"), Some((0.0, window.1)));
    }
    Ok(rep.finish(started))
}

fn run_moments(cfg: &RunConfig) -> Result<Vec<BoundReport>> {
    let mut vectors = cfg.vectors.clone();
    for family in &cfg.families {
        vectors.extend(family.generate()?.to_vecs());
    }
    let mut tasks = Vec::new();
    for t in &vectors {
        for &r in &cfg.r_values {
            tasks.push((t, r));
        }
    }
    par::try_map_indexed(tasks.len(), Execution::auto(), |i| {
        let (t, r) = tasks[i];
        moment_check(t, r, &cfg.p_list, cfg.samples, RandomStream::new(cfg.seed, i as u64), cfg.window)
    })
}

/// Run one configured experiment.
pub fn run_experiment(cfg: &RunConfig) -> Result<Vec<BoundReport>> {
    cfg.validate()?;
    match cfg.name {
        Experiment::MainBound => verify_main_bound(cfg),
        Experiment::R1Bound => verify_r1_bound(cfg),
        Experiment::Counterexample => cfg
            .r_values
            .iter()
            .map(|&r| counterexample_run(r, &cfg.n_list))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().flatten().collect()),
        Experiment::Truncation => truncation_check(cfg, cfg.theta.expect("validated")),
        Experiment::Moments => run_moments(cfg),
    }
}

// ---------------------------------------------------------------------------
// persistence

/// One persisted run: every instance report, plus a failure marker when
/// the run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDocument {
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub violations: usize,
    pub reports: Vec<BoundReport>,
}

impl RunDocument {
    pub fn from_reports(reports: Vec<BoundReport>) -> Self {
        let violations = reports.iter().filter(|r| r.status == Status::Flagged).count();
        Self {
            complete: true,
            error: None,
            violations,
            reports,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Flattened CSV, one row per report, one column per quantity and ratio.
    pub fn to_csv(&self) -> Result<String> {
        let quantities: BTreeSet<&str> = self.reports.iter().flat_map(|r| r.quantities.keys().map(String::as_str)).collect();
        let ratios: BTreeSet<&str> = self.reports.iter().flat_map(|r| r.ratios.iter().map(|x| x.name.as_str())).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["experiment", "instance", "family", "r", "s", "dim", "cardinality", "seed", "status"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for q in &quantities {
            header.push(q.to_string());
            header.push(format!("{q}_stderr"));
        }
        header.extend(ratios.iter().map(|r| format!("ratio:{r}")));
        let csv_err = |e: csv::Error| Error::Csv { line: 0, msg: e.to_string() };
        w.write_record(&header).map_err(csv_err)?;
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for rep in &self.reports {
            let mut row = vec![
                rep.experiment.clone(),
                rep.instance.clone(),
                rep.family.clone().unwrap_or_default(),
                opt(rep.r),
                opt(rep.s),
                rep.dim.to_string(),
                rep.cardinality.to_string(),
                rep.seed.to_string(),
                format!("{:?}", rep.status).to_lowercase(),
            ];
            for q in &quantities {
                let v = rep.quantities.get(*q);
                row.push(opt(v.map(|q| q.value)));
                row.push(opt(v.and_then(|q| q.stderr)));
            }
            for name in &ratios {
                row.push(opt(rep.ratio(name).and_then(|r| r.value)));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv { line: 0, msg: e.to_string() })?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    fn timings(&self) -> Result<String> {
        let rows: Vec<serde_json::Value> = self
            .reports
            .iter()
            .map(|r| serde_json::json!({"experiment": r.experiment, "instance": r.instance, "r": r.r, "wall_clock_ms": r.wall_clock_ms}))
            .collect();
        Ok(serde_json::to_string_pretty(&rows)?)
    }

    /// Write the JSON document, and the CSV next to it when asked. Timings
    /// go to `<out>.timing.json` so the report itself stays reproducible.
    pub fn persist(&self, out: &Path, csv: bool) -> Result<()> {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(out, self.to_json()?)?;
        if csv {
            std::fs::write(out.with_extension("csv"), self.to_csv()?)?;
        }
        let mut timing = out.as_os_str().to_owned();
        timing.push(".timing.json");
        std::fs::write(PathBuf::from(timing), self.timings()?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

/// Outcome of [`run`]: the document and the process exit status.
#[derive(Debug)]
pub struct RunOutcome {
    pub document: RunDocument,
    pub out: Option<PathBuf>,
    pub exit_code: i32,
}

/// Execute every experiment in a run file. Configuration errors return
/// `Err` and write nothing. Execution errors still persist the reports
/// gathered so far, marked incomplete. Exit status is nonzero on any
/// flagged report or failure.
pub fn run(config_path: &Path, out_override: Option<&Path>, format: OutputFormat) -> Result<RunOutcome> {
    let text = std::fs::read_to_string(config_path).map_err(|e| Error::from(e).context(config_path.display().to_string()))?;
    let configs = parse_run_file(&text)?;
    let out = out_override
        .map(Path::to_path_buf)
        .or_else(|| configs.iter().find_map(|c| c.out.clone()));

    let mut reports = Vec::new();
    let mut error = None;
    for cfg in &configs {
        match run_experiment(cfg) {
            Ok(r) => reports.extend(r),
            Err(e) => {
                error = Some(format!("{:?}: {e}", cfg.name));
                break;
            }
        }
    }
    let mut document = RunDocument::from_reports(reports);
    if let Some(e) = error {
        document.complete = false;
        document.error = Some(e);
    }
    if let Some(path) = &out {
        document.persist(path, format == OutputFormat::Csv)?;
    }
    let exit_code = if !document.complete || document.violations > 0 { 1 } else { 0 };
    Ok(RunOutcome {
        document,
        out,
        exit_code,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_spec_parsing() {
        let f = InstanceFamily::parse_spec("hypercube:8:64", 3).unwrap();
        assert_eq!(f.kind, FamilyKind::HypercubeSubset { n: 8, m: 64 });
        let f = InstanceFamily::parse_spec("gaussian:16:64:0.5", 0).unwrap();
        assert_eq!(f.kind, FamilyKind::GaussianCloud { n: 16, m: 64, scale: 0.5 });
        let f = InstanceFamily::parse_spec("basis:32:harmonic", 0).unwrap();
        assert_eq!(f.kind, FamilyKind::ScaledBasis { n: 32, decay: Decay::Harmonic });
        assert!(InstanceFamily::parse_spec("basis:32:wobbly", 0).is_err());
        assert!(InstanceFamily::parse_spec("torus:3", 0).is_err());
    }

    #[test]
    fn families_are_deterministic() {
        for f in default_suite() {
            let a = f.generate().unwrap();
            let b = f.generate().unwrap();
            assert_eq!(a, b);
        }
        let a = InstanceFamily::new(FamilyKind::GaussianCloud { n: 3, m: 5, scale: 1.0 }, 1).generate().unwrap();
        let b = InstanceFamily::new(FamilyKind::GaussianCloud { n: 3, m: 5, scale: 1.0 }, 2).generate().unwrap();
        assert_ne!(a.to_vecs(), b.to_vecs());
    }

    #[test]
    fn hypercube_subsets_are_distinct_vertices() {
        let mut set = InstanceFamily::new(FamilyKind::HypercubeSubset { n: 6, m: 40 }, 9).generate().unwrap();
        assert_eq!(set.len(), 40);
        assert_eq!(set.dedup(), 0);
        assert!(set.iter().all(|p| p.iter().all(|x| x.abs() == 1.0)));
        let full = InstanceFamily::new(FamilyKind::HypercubeSubset { n: 3, m: 8 }, 0).generate().unwrap();
        assert_eq!(full.len(), 8);
        assert!(InstanceFamily::new(FamilyKind::HypercubeSubset { n: 3, m: 9 }, 0).generate().is_err());
    }

    #[test]
    fn family_json_shape() {
        let f: InstanceFamily = serde_json::from_str(r#"{"kind":"scaled_basis","n":4,"decay":"sqrt","seed":2}"#).unwrap();
        assert_eq!(f.kind, FamilyKind::ScaledBasis { n: 4, decay: Decay::Sqrt });
        assert_eq!(f.seed, 2);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = parse_run_file(r#"{"name":"main_bound","families":[],"bogus":1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = parse_run_file("{\n\"name\": \"main_bound\",\n\"samples\": }").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(parse_run_file(r#"{"name":"main_bound","r_values":[2.0]}"#).is_err());
        assert!(parse_run_file(r#"{"name":"counterexample","r_values":[0.5],"n_list":[100]}"#).is_err());
        assert!(parse_run_file(r#"{"name":"truncation","r_values":[0.5]}"#).is_err());
        assert!(parse_run_file("[]").unwrap().is_empty());
    }

    #[test]
    fn ratio_statuses() {
        let mut rep = BoundReport::new("x", "y".into(), RandomStream::from_seed(0));
        rep.set("a", Quantity::exact(0.0));
        rep.set("b", Quantity::exact(0.0));
        rep.set("c", Quantity::exact(2.0));
        rep.add_ratio("zero", "a", "b", Some((0.5, 2.0)));
        rep.add_ratio("div0", "c", "a", Some((0.5, 2.0)));
        rep.add_ratio("ok", "c", "c", Some((0.5, 2.0)));
        assert_eq!(rep.ratio("zero").unwrap().status, Status::Neutral);
        assert_eq!(rep.ratio("div0").unwrap().status, Status::Flagged);
        assert_eq!(rep.ratio("ok").unwrap().value, Some(1.0));
    }

    #[test]
    fn counterexample_rows() {
        let row = CounterexampleRow::compute(0.5, 1024).unwrap();
        assert_eq!(row.k, 7);
        assert_eq!(row.gamma_r_lower, 32768.0);
        assert_eq!(row.esup_closed, 2048.0);
        assert_eq!(row.simplified_lower, 16384.0);
        assert_eq!(row.ratio_simplified(), 8.0);
        assert!(CounterexampleRow::compute(1.0, 1024).is_err());
        assert!(CounterexampleRow::compute(0.5, 1000).is_err());
        assert!(CounterexampleRow::compute(0.5, 8).is_err());
    }

    #[test]
    fn zero_set_main_bound_is_neutral() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.csv");
        std::fs::write(&path, "0,0,0\n").unwrap();
        let mut cfg = RunConfig::new(Experiment::MainBound);
        cfg.families = vec![InstanceFamily::new(FamilyKind::CsvFile { path }, 0)];
        cfg.r_values = vec![0.5];
        cfg.samples = 100;
        cfg.num_perms = 3;
        let reps = verify_main_bound(&cfg).unwrap();
        assert_eq!(reps[0].status, Status::Neutral);
        assert_eq!(reps[0].ratio("esup_over_epi_gamma2").unwrap().value, None);
    }

    #[test]
    fn truncation_full_prefix_identical_at_theta_one() {
        let set = default_suite()[0].generate().unwrap();
        let a = weights(set.dim(), 2.0).unwrap().w;
        let (f, p) = truncated_pair(&set, &a, 1.0, 500, RandomStream::from_seed(4)).unwrap();
        assert_eq!(f.mean.to_bits(), p.mean.to_bits());
    }

    #[test]
    fn moment_check_zero_vector() {
        let rep = moment_check(&[0.0; 3], 1.0, &[2.0, 4.0], 100, RandomStream::from_seed(0), DEFAULT_WINDOW).unwrap();
        assert_eq!(rep.quantity("mc_norm_p2"), Some(0.0));
        assert_eq!(rep.status, Status::Neutral);
        assert!(moment_check(&[1.0], 1.0, &[1.5], 100, RandomStream::from_seed(0), DEFAULT_WINDOW).is_err());
    }

    #[test]
    fn csv_flattening_has_one_row_per_report() {
        let reps = counterexample_run(0.5, &[256, 1024]).unwrap();
        let doc = RunDocument::from_reports(reps);
        let text = doc.to_csv().unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().contains("ratio:simplified_over_esup"));
    }
}
