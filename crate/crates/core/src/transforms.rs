//! Rearrangement weights `(ln(n/k))^{1/s}`, the permuted sets `T_π`, the
//! deterministic set `T^s`, and the permutation average of `γ₂(T_π)`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gamma::{build_greedy_tree, gamma_exact_small, gamma_from_tree, gaussian_gamma2_proxy};
use crate::par::{self, Execution};
use crate::points::{MetricKind, PointSet};
use crate::stream::RandomStream;

pub const DEFAULT_NUM_PERMS: usize = 20;

/// A bijection of `0..n`; `perm[k]` is the image of `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n {
                return Err(Error::InvalidPermutation(format!("image {v} outside 0..{n}")));
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidPermutation(format!("image {v} repeated")));
            }
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Uniform permutation by Fisher–Yates.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub n: usize,
    pub s: f64,
    pub w: Vec<f64>,
}

/// `w_k = (ln(n/k))^{1/s}` for `k = 1..=n`. For `s = ∞` the limit is used:
/// `w_k = 1` for `k < n` and `w_n = 0`.
pub fn weights(n: usize, s: f64) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::InvalidParameter("weights need n >= 1".into()));
    }
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("s must be positive, got {s}")));
    }
    let nf = n as f64;
    let w = if s.is_infinite() {
        static WARNED: std::sync::Once = std::sync::Once::new();
        WARNED.call_once(|| log::warn!("s = ∞ (r = 2): using limiting weights; the rearrangement bound is stated for r < 2"));
        (1..=n).map(|k| if k < n { 1.0 } else { 0.0 }).collect()
    } else {
        (1..=n).map(|k| (nf / k as f64).ln().powf(s.recip())).collect()
    };
    Ok(WeightVector { n, s, w })
}

/// `T_π = {(t_{π(k)} w_k)_k : t ∈ T}`.
pub fn apply_permuted_weights(set: &PointSet, perm: &Permutation, s: f64) -> Result<PointSet> {
    if perm.len() != set.dim() {
        return Err(Error::InvalidPermutation(format!(
            "permutation of {} elements for dimension {}",
            perm.len(),
            set.dim()
        )));
    }
    let w = weights(set.dim(), s)?.w;
    let p = perm.as_slice();
    Ok(set.map_points(|t, out| {
        for k in 0..out.len() {
            out[k] = t[p[k]] * w[k];
        }
    }))
}

/// `T^s = {(t_k w_k)_k : t ∈ T}`.
pub fn ts_transform(set: &PointSet, s: f64) -> Result<PointSet> {
    apply_permuted_weights(set, &Permutation::identity(set.dim()), s)
}

/// How `γ₂(T_π, d₂)` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum GammaMethod {
    /// Greedy admissible tree (an upper bound).
    Greedy,
    /// Expected Gaussian supremum.
    GaussianProxy { samples: u64 },
    /// Exhaustive search, `m ≤ 8`.
    Exact,
}

impl GammaMethod {
    pub fn estimate(&self, set: &PointSet, stream: RandomStream) -> Result<f64> {
        match *self {
            GammaMethod::Greedy => Ok(gamma_from_tree(&build_greedy_tree(set, MetricKind::L2), 2.0, MetricKind::L2)?.value),
            GammaMethod::GaussianProxy { samples } => Ok(gaussian_gamma2_proxy(set, samples, stream)?.value),
            GammaMethod::Exact => Ok(gamma_exact_small(set, MetricKind::L2, 2.0)?.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpiGamma {
    pub mean: f64,
    /// `max/min` over permutations; 1 when all values agree, infinite when
    /// some but not all are zero.
    pub spread: f64,
    pub min: f64,
    pub max: f64,
    /// Standard error of the mean over permutations.
    pub stderr: f64,
    pub num_perms: usize,
}

/// Average of `γ̂₂(T_π)` over `num_perms` uniform permutations. Permutation
/// `p` draws from child stream `p`.
pub fn epi_gamma2(set: &PointSet, s: f64, num_perms: usize, method: GammaMethod, stream: RandomStream) -> Result<EpiGamma> {
    if num_perms == 0 {
        return Err(Error::InvalidParameter("num_perms must be >= 1".into()));
    }
    let n = set.dim();
    weights(n, s)?;
    let values = par::try_map_indexed(num_perms, Execution::auto(), |p| {
        let child = stream.fork(p as u64);
        let perm = Permutation::random(n, &mut child.rng());
        let permuted = apply_permuted_weights(set, &perm, s)?;
        method.estimate(&permuted, child.fork(0))
    })?;
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let spread = if max == min {
        1.0
    } else if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    };
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0)
    } else {
        0.0
    };
    Ok(EpiGamma {
        mean,
        spread,
        min,
        max,
        stderr: (var / count).sqrt(),
        num_perms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weight_examples() {
        assert_eq!(weights(1, 2.0).unwrap().w, vec![0.0]);
        let w = weights(4, 2.0).unwrap().w;
        let expect = [4f64.ln().sqrt(), 2f64.ln().sqrt(), (4.0f64 / 3.0).ln().sqrt(), 0.0];
        for (a, b) in w.iter().zip(expect) {
            assert_relative_eq!(*a, b, max_relative = 1e-15);
        }
        assert_relative_eq!(w[0], 1.1774, epsilon = 1e-4);
        assert_relative_eq!(w[1], 0.8326, epsilon = 1e-4);
        assert_relative_eq!(w[2], 0.5363, epsilon = 1e-4);
        let w = weights(4, 1.0).unwrap().w;
        assert_relative_eq!(w[0], 4f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(w[2], (4.0f64 / 3.0).ln(), max_relative = 1e-15);
        assert_eq!(weights(3, f64::INFINITY).unwrap().w, vec![1.0, 1.0, 0.0]);
        assert!(weights(3, 0.0).is_err());
        assert!(weights(0, 1.0).is_err());
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::new(vec![1, 0, 2]).is_ok());
        assert!(Permutation::new(vec![1, 1, 2]).is_err());
        assert!(Permutation::new(vec![0, 3]).is_err());
    }

    #[test]
    fn swap_kills_mass_at_last_coordinate() {
        let t = PointSet::from_points(vec![vec![1.0, 0.0]]).unwrap();
        let p = Permutation::new(vec![1, 0]).unwrap();
        let out = apply_permuted_weights(&t, &p, 2.0).unwrap();
        assert_eq!(out.point(0), &[0.0, 0.0]);
        let wrong = Permutation::new(vec![0, 1, 2]).unwrap();
        assert!(apply_permuted_weights(&t, &wrong, 2.0).is_err());
    }

    #[test]
    fn ts_examples() {
        let t = PointSet::from_points(vec![vec![3.0], vec![-1.0]]).unwrap();
        assert!(ts_transform(&t, 1.0).unwrap().iter().all(|p| p == [0.0]));
        let t = PointSet::from_points(vec![vec![1.0, 1.0]]).unwrap();
        let out = ts_transform(&t, 2.0).unwrap();
        assert_relative_eq!(out.point(0)[0], 2f64.ln().sqrt(), max_relative = 1e-15);
        assert_eq!(out.point(0)[1], 0.0);
        let id = apply_permuted_weights(&t, &Permutation::identity(2), 2.0).unwrap();
        assert_eq!(id, out);
    }

    #[test]
    fn epi_gamma_zero_and_singleton() {
        let zero = PointSet::from_points(vec![vec![0.0; 4]]).unwrap();
        let e = epi_gamma2(&zero, 2.0, 5, GammaMethod::Greedy, RandomStream::from_seed(1)).unwrap();
        assert_eq!((e.mean, e.spread), (0.0, 1.0));
        let e1 = PointSet::from_points(vec![vec![1.0, 0.0]]).unwrap();
        let e = epi_gamma2(&e1, 2.0, 8, GammaMethod::Exact, RandomStream::from_seed(1)).unwrap();
        assert_eq!(e.mean, 0.0);
        assert!(epi_gamma2(&e1, 2.0, 0, GammaMethod::Greedy, RandomStream::from_seed(1)).is_err());
    }
}
