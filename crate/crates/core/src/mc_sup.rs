//! Monte Carlo estimation of `E sup_{t∈T} Σ_k t_k ξ_k` over finite sets,
//! the non-increasing rearrangement, and exact order-statistic probes.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::{conjugate_exponent, sample_tail_abs, WeibullLaw};
use crate::par::{self, Execution};
use crate::points::PointSet;
use crate::stream::RandomStream;

/// Draws per chunk. Chunk boundaries fix the merge order.
pub const CHUNK: u64 = 1024;

pub const DEFAULT_SAMPLES: u64 = 20_000;

/// Law of the coordinates `ξ_k` driving the process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "r", rename_all = "snake_case")]
pub enum Driver {
    Gaussian,
    Rademacher,
    /// Independent symmetric variables with tail `exp(-t^r)`.
    Weibull(f64),
    /// `ξ_{π(k)} = g_{π(k)} Y_k*`: Gaussians times the rearranged magnitudes
    /// of `Y` with tail `exp(-t^s)`, placed by a uniform permutation.
    CondGaussian(f64),
    /// `ξ_{π(k)} = g_{π(k)} a_k` for a fixed weight sequence `a`.
    PermutedGaussian(Arc<[f64]>),
}

impl Driver {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Driver::Weibull(r) => WeibullLaw::new(*r).map(|_| ()),
            Driver::CondGaussian(r) if !(*r > 0.0 && *r < 2.0) => Err(Error::InvalidParameter(
                format!("conditionally Gaussian driver needs r in (0, 2), got {r}"),
            )),
            Driver::PermutedGaussian(a) if a.len() != dim => Err(Error::DimensionMismatch {
                expected: dim,
                found: a.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// Monte Carlo estimate of an expected supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
    pub substream: u64,
}

impl SupEstimate {
    /// Standard error relative to the mean.
    pub fn rel_stderr(&self) -> f64 {
        self.stderr / self.mean.abs()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        Moments {
            count: self.count + other.count,
            mean: self.mean + d * other.count as f64 / n,
            m2: self.m2 + other.m2 + d * d * self.count as f64 * other.count as f64 / n,
        }
    }
}

/// Per-draw sampler state for one chunk.
struct Sampler<'a> {
    driver: &'a Driver,
    fixed: Option<&'a [usize]>,
    s: f64,
    mags: Vec<f64>,
    perm: Vec<usize>,
}

impl<'a> Sampler<'a> {
    fn new(driver: &'a Driver, fixed: Option<&'a [usize]>, dim: usize) -> Self {
        let s = match driver {
            Driver::CondGaussian(r) => conjugate_exponent(*r),
            _ => f64::NAN,
        };
        Self {
            driver,
            fixed,
            s,
            mags: vec![0.0; dim],
            perm: (0..dim).collect(),
        }
    }

    fn permuted_fill(&mut self, rng: &mut ChaCha8Rng, xi: &mut [f64], mags: impl Fn(&Self, usize) -> f64) {
        self.perm.shuffle(rng);
        for k in 0..xi.len() {
            let g: f64 = rng.sample(StandardNormal);
            let pk = self.perm[k];
            let slot = self.fixed.map_or(pk, |f| f[pk]);
            xi[slot] = g * mags(self, k);
        }
    }

    fn fill(&mut self, rng: &mut ChaCha8Rng, xi: &mut [f64]) {
        match self.driver {
            Driver::Gaussian => xi.iter_mut().for_each(|x| *x = rng.sample(StandardNormal)),
            Driver::Rademacher => xi
                .iter_mut()
                .for_each(|x| *x = if rng.random::<bool>() { 1.0 } else { -1.0 }),
            Driver::Weibull(r) => {
                let law = WeibullLaw::new(*r).expect("validated");
                xi.iter_mut().for_each(|x| *x = law.sample(rng));
            }
            Driver::CondGaussian(_) => {
                let s = self.s;
                for y in self.mags.iter_mut() {
                    *y = sample_tail_abs(s, rng);
                }
                rearrange_in_place(&mut self.mags);
                self.permuted_fill(rng, xi, |me, k| me.mags[k]);
            }
            Driver::PermutedGaussian(a) => {
                let a: &[f64] = a;
                self.permuted_fill(rng, xi, |_, k| a[k]);
            }
        }
    }
}

fn sup_dot(set: &PointSet, xi: &[f64]) -> f64 {
    set.iter()
        .map(|t| t.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn estimate(
    set: &PointSet,
    driver: &Driver,
    fixed: Option<&[usize]>,
    samples: u64,
    stream: RandomStream,
    exec: Execution,
) -> Result<SupEstimate> {
    if samples < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 samples, got {samples}")));
    }
    driver.validate(set.dim())?;
    let chunks = par::chunks(samples, CHUNK);
    let parts = par::try_map_indexed(chunks.len(), exec, |c| {
        let (start, end) = chunks[c];
        let mut rng = stream.fork(c as u64).rng();
        let mut sampler = Sampler::new(driver, fixed, set.dim());
        let mut xi = vec![0.0; set.dim()];
        let mut acc = Moments::default();
        for draw in start..end {
            sampler.fill(&mut rng, &mut xi);
            let v = sup_dot(set, &xi);
            if !v.is_finite() {
                return Err(Error::NonFiniteSample { draw });
            }
            acc.push(v);
        }
        Ok(acc)
    })?;
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    let var = total.m2 / (total.count - 1) as f64;
    Ok(SupEstimate {
        mean: total.mean,
        stderr: (var / total.count as f64).sqrt(),
        samples,
        seed: stream.seed,
        substream: stream.substream,
    })
}

/// Monte Carlo estimate of `E max_{t∈T} Σ_k t_k ξ_k`.
pub fn esup_mc(set: &PointSet, driver: &Driver, samples: u64, stream: RandomStream) -> Result<SupEstimate> {
    esup_mc_exec(set, driver, samples, stream, Execution::auto())
}

/// [`esup_mc`] with an explicit execution policy. Results do not depend on it.
pub fn esup_mc_exec(
    set: &PointSet,
    driver: &Driver,
    samples: u64,
    stream: RandomStream,
    exec: Execution,
) -> Result<SupEstimate> {
    estimate(set, driver, None, samples, stream, exec)
}

/// `E sup_t Σ_k t_{π(k)} g_{π(k)} Y_k*` with `Y` of tail `exp(-t^s)`.
pub fn esup_rep_mc(set: &PointSet, r: f64, samples: u64, stream: RandomStream) -> Result<SupEstimate> {
    esup_mc(set, &Driver::CondGaussian(r), samples, stream)
}

/// [`esup_rep_mc`] with the uniform permutation composed with `fixed`
/// (coordinate `π(k)` is sent to `fixed[π(k)]`).
pub fn esup_rep_mc_composed(
    set: &PointSet,
    r: f64,
    fixed: &[usize],
    samples: u64,
    stream: RandomStream,
) -> Result<SupEstimate> {
    crate::transforms::Permutation::new(fixed.to_vec())?;
    if fixed.len() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            found: fixed.len(),
        });
    }
    estimate(set, &Driver::CondGaussian(r), Some(fixed), samples, stream, Execution::auto())
}

fn rearrange_in_place(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.abs();
    }
    // stable: equal magnitudes keep their first-occurrence order
    v.sort_by(|a, b| b.total_cmp(a));
}

/// Absolute values sorted non-increasingly: `Y_k* = k-max_i |Y_i|`.
pub fn rearrange_nonincreasing(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    rearrange_in_place(&mut v);
    v
}

fn ln_choose(n: u64, i: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(i as f64 + 1.0) - libm::lgamma((n - i) as f64 + 1.0)
}

fn binomial_sum(n: u64, q: f64, range: impl Iterator<Item = u64>) -> f64 {
    if q <= 0.0 {
        return range.map(|i| if i == 0 { 1.0 } else { 0.0 }).sum();
    }
    if q >= 1.0 {
        return range.map(|i| if i == n { 1.0 } else { 0.0 }).sum();
    }
    let lq = q.ln();
    let l1q = (-q).ln_1p();
    range
        .map(|i| (ln_choose(n, i) + i as f64 * lq + (n - i) as f64 * l1q).exp())
        .sum()
}

fn check_order_args(n: u64, k: u64) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("order index k = {k} outside 1..={n}")));
    }
    Ok(())
}

/// Exact `P(Y_k* ≥ u)` for `n` independent magnitudes with tail
/// `exp(-u^s)`: a binomial upper tail with success probability `exp(-u^s)`.
pub fn order_stat_tail(n: u64, s: f64, k: u64, u: f64) -> Result<f64> {
    check_order_args(n, k)?;
    if u <= 0.0 {
        return Ok(1.0);
    }
    let q = (-u.powf(s)).exp();
    Ok(binomial_sum(n, q, k..=n).min(1.0))
}

/// Exact `P(Y_k* < u)`, summed directly so small values keep their
/// relative precision.
pub fn order_stat_below(n: u64, s: f64, k: u64, u: f64) -> Result<f64> {
    check_order_args(n, k)?;
    if u <= 0.0 {
        return Ok(0.0);
    }
    let q = (-u.powf(s)).exp();
    Ok(binomial_sum(n, q, 0..k).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeFlavor {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeLevel {
    pub j: u32,
    pub k: u64,
    pub theta: Option<f64>,
    pub u: f64,
}

/// The sparse subsequence `k_j = ⌈n / 2^{2^j}⌉` of order statistics probed
/// by the two bounds, with thresholds `u_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSchedule {
    pub n: u64,
    pub s: f64,
    pub m: u32,
    pub flavor: ProbeFlavor,
    pub levels: Vec<ProbeLevel>,
}

fn tower(j: u32) -> f64 {
    2f64.powf(2f64.powi(j as i32))
}

/// `m` with `2^{2^m} < n ≤ 2^{2^{m+1}}`.
pub fn schedule_depth(n: u64) -> Result<u32> {
    let nf = n as f64;
    (0..8)
        .find(|&m| tower(m) < nf && nf <= tower(m + 1))
        .ok_or_else(|| Error::InvalidParameter(format!("no level count m fits n = {n} (need n >= 3)")))
}

impl ProbeSchedule {
    pub fn build(n: u64, s: f64, flavor: ProbeFlavor) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!("s must be positive and finite, got {s}")));
        }
        if flavor == ProbeFlavor::Lower && n < 512 {
            return Err(Error::InvalidParameter(format!(
                "lower-flavor schedule needs n >= 512, got {n}"
            )));
        }
        let m = schedule_depth(n)?;
        let nf = n as f64;
        let top = match flavor {
            ProbeFlavor::Lower => m,
            ProbeFlavor::Upper => m + 1,
        };
        let levels: Vec<ProbeLevel> = (0..=top)
            .map(|j| {
                let k = (nf / tower(j)).ceil() as u64;
                let (theta, ratio) = match flavor {
                    ProbeFlavor::Lower => {
                        let theta = 2f64.powf(-2f64.powi(j as i32 - 1));
                        (Some(theta), theta * nf / k as f64)
                    }
                    ProbeFlavor::Upper => (None, nf / k as f64),
                };
                ProbeLevel {
                    j,
                    k,
                    theta,
                    u: ratio.ln().powf(s.recip()),
                }
            })
            .collect();
        if levels.windows(2).any(|w| w[1].k >= w[0].k) {
            return Err(Error::InvalidParameter(format!("k_j not strictly decreasing for n = {n}")));
        }
        Ok(Self {
            n,
            s,
            m,
            flavor,
            levels,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub j: u32,
    pub k: u64,
    pub threshold: f64,
    /// Exact `P(Y_k* ≥ threshold)`.
    pub probability: f64,
    /// `1 - z_j` (lower flavor) or the Markov bound `(k_j/n)^{τ^s-1}` (upper).
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub schedule: ProbeSchedule,
    pub tau: Option<f64>,
    pub checks: Vec<LevelCheck>,
    /// Lower flavor: `Σ_{j≥3} z_j`. Upper flavor: `Σ_{j≥1} P(Y_{k_j}* ≥ τu_j)`.
    pub sum: f64,
    /// Lower flavor: `1/2`. Upper flavor: `2^{2-τ^s}` when `τ ≥ 2^{1/s}`.
    pub sum_bound: Option<f64>,
    pub pass: bool,
}

/// Build the schedule for `(n, s, flavor)` and check each probed level
/// against the exact order-statistic law.
pub fn probe_schedule_check(n: u64, s: f64, flavor: ProbeFlavor, tau: f64) -> Result<ProbeReport> {
    let schedule = ProbeSchedule::build(n, s, flavor)?;
    let nf = n as f64;
    match flavor {
        ProbeFlavor::Lower => {
            let root = nf.sqrt();
            let mut checks = Vec::new();
            let mut z_sum = 0.0;
            for level in schedule.levels.iter().filter(|l| l.j >= 3) {
                let theta = level.theta.expect("lower levels carry theta");
                let z = 1.0 / (root + 1.0) + 2.0 * theta * nf / (root + nf);
                let probability = order_stat_tail(n, s, level.k, level.u)?;
                z_sum += z;
                checks.push(LevelCheck {
                    j: level.j,
                    k: level.k,
                    threshold: level.u,
                    probability,
                    bound: 1.0 - z,
                    pass: probability >= 1.0 - z,
                });
            }
            let pass = checks.iter().all(|c| c.pass) && z_sum < 0.5;
            Ok(ProbeReport {
                schedule,
                tau: None,
                checks,
                sum: z_sum,
                sum_bound: Some(0.5),
                pass,
            })
        }
        ProbeFlavor::Upper => {
            if !(tau >= 1.0) {
                return Err(Error::InvalidParameter(format!("tau must be >= 1, got {tau}")));
            }
            let exponent = tau.powf(s) - 1.0;
            let checks = schedule
                .levels
                .iter()
                .map(|level| {
                    let threshold = tau * level.u;
                    let probability = order_stat_tail(n, s, level.k, threshold)?;
                    let bound = (level.k as f64 / nf).powf(exponent);
                    Ok(LevelCheck {
                        j: level.j,
                        k: level.k,
                        threshold,
                        probability,
                        bound,
                        pass: probability <= bound * (1.0 + 1e-12),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let sum: f64 = checks.iter().filter(|c| c.j >= 1).map(|c| c.probability).sum();
            let sum_bound = (tau >= 2f64.powf(s.recip())).then(|| 2f64.powf(2.0 - tau.powf(s)));
            let pass = checks.iter().all(|c| c.pass) && sum_bound.is_none_or(|b| sum <= b);
            Ok(ProbeReport {
                schedule,
                tau: Some(tau),
                checks,
                sum,
                sum_bound,
                pass,
            })
        }
    }
}
