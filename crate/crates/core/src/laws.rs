//! Weibull-tailed laws, their exact moments, the moment functionals for
//! sums `Σ t_k X_k`, and the Gaussian-times-Weibull product law used by
//! the coupling between `X` and `gY`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

pub const DEFAULT_QUADRATURE_TOL: f64 = 1e-8;

/// Symmetric law with tail `P(|X| > t) = exp(-t^r)`, `0 < r ≤ 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullLaw {
    r: f64,
}

impl WeibullLaw {
    pub fn new(r: f64) -> Result<Self> {
        if !(r > 0.0 && r <= 2.0) {
            return Err(Error::InvalidParameter(format!("tail exponent r must lie in (0, 2], got {r}")));
        }
        Ok(Self { r })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Conjugate exponent `s` with `1/s = 1/r - 1/2`; infinite at `r = 2`.
    pub fn s(&self) -> f64 {
        conjugate_exponent(self.r)
    }

    /// Quantile of `|X|` at `u ∈ [0, 1)`.
    pub fn abs_quantile(&self, u: f64) -> f64 {
        tail_quantile(self.r, u)
    }

    pub fn sample_abs<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_tail_abs(self.r, rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = self.sample_abs(rng);
        if rng.random::<bool>() {
            x
        } else {
            -x
        }
    }

    /// `P(|X| ≤ t)`.
    pub fn abs_cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            -(-t.powf(self.r)).exp_m1()
        }
    }
}

/// `s` with `1/s + 1/2 = 1/r`.
pub fn conjugate_exponent(r: f64) -> f64 {
    if r >= 2.0 {
        f64::INFINITY
    } else {
        2.0 * r / (2.0 - r)
    }
}

/// Quantile at `u` of a magnitude with tail `exp(-t^exponent)`.
pub fn tail_quantile(exponent: f64, u: f64) -> f64 {
    (-(-u).ln_1p()).powf(exponent.recip())
}

/// Inverse-CDF draw of a magnitude with tail `exp(-t^exponent)`.
pub fn sample_tail_abs<R: Rng + ?Sized>(exponent: f64, rng: &mut R) -> f64 {
    tail_quantile(exponent, rng.random::<f64>())
}

/// One symmetric draw from `law`.
pub fn sample_symmetric_weibull<R: Rng + ?Sized>(law: &WeibullLaw, rng: &mut R) -> f64 {
    law.sample(rng)
}

fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `E|X|^p = Γ(1 + p/r)` for `X` with tail `exp(-t^r)`.
pub fn exact_abs_moment(r: f64, p: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("r must be positive, got {r}")));
    }
    if !(p >= 0.0) {
        return Err(Error::InvalidParameter(format!("moment order must be >= 0, got {p}")));
    }
    Ok(libm::tgamma(1.0 + p / r))
}

/// `‖X‖_p = Γ(1 + p/r)^{1/p}`, computed in log space.
pub fn exact_lp_norm(r: f64, p: f64) -> Result<f64> {
    exact_abs_moment(r, p)?;
    Ok((ln_gamma(1.0 + p / r) / p).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentBoundKind {
    CorollaryBound,
    HmsoBound,
}

/// A moment bound for `‖Σ t_k X_k‖_p`, stated without its law-dependent
/// constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentFunctional {
    pub p: f64,
    pub value: f64,
    pub kind: MomentBoundKind,
}

fn check_p(p: f64) -> Result<()> {
    if p >= 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("moment order p must be >= 2, got {p}")))
    }
}

fn lp(t: &[f64], p: f64) -> f64 {
    t.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(p.recip())
}

fn l2(t: &[f64]) -> f64 {
    t.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn linf(t: &[f64]) -> f64 {
    t.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `√p‖t‖₂ + p^{1/r}‖t‖_∞`.
pub fn corollary_moment_bound(t: &[f64], p: f64, r: f64) -> Result<MomentFunctional> {
    check_p(p)?;
    Ok(MomentFunctional {
        p,
        value: p.sqrt() * l2(t) + p.powf(r.recip()) * linf(t),
        kind: MomentBoundKind::CorollaryBound,
    })
}

/// `(Σ‖Y_k‖_p^p)^{1/p} + √p (Σ‖Y_k‖₂²)^{1/2}` for `Y_k = t_k X_k`, with exact
/// Weibull moments: `Γ(1+p/r)^{1/p}‖t‖_p + √p Γ(1+2/r)^{1/2}‖t‖₂`.
pub fn hmso_moment_bound(t: &[f64], p: f64, r: f64) -> Result<MomentFunctional> {
    check_p(p)?;
    let value = exact_lp_norm(r, p)? * lp(t, p) + p.sqrt() * exact_lp_norm(r, 2.0)? * l2(t);
    Ok(MomentFunctional {
        p,
        value,
        kind: MomentBoundKind::HmsoBound,
    })
}

/// `P(|gY| ≥ t)` with `g` standard Gaussian and `Y` independent with tail
/// `exp(-y^s)`, `1/s = 1/r - 1/2`.
///
/// Substituting `v = y^s` turns the mixture into
/// `∫₀^∞ erfc(t / (√2 v^{1/s})) e^{-v} dv`; the range is cut at
/// `V = ln(10/tol)` so the dropped mass is below `tol/10`.
pub fn product_tail(r: f64, t: f64, quadrature_tol: f64) -> Result<f64> {
    if !(r > 0.0 && r < 2.0) {
        return Err(Error::InvalidParameter(format!("product tail needs r in (0, 2), got {r}")));
    }
    if !(quadrature_tol > 0.0) {
        return Err(Error::InvalidParameter("quadrature tolerance must be positive".into()));
    }
    if t <= 0.0 {
        return Ok(1.0);
    }
    let inv_s = conjugate_exponent(r).recip();
    let cut = (10.0 / quadrature_tol).ln();
    let scale = t / std::f64::consts::SQRT_2;
    let integrand = |v: f64| {
        if v <= 0.0 {
            0.0
        } else {
            libm::erfc(scale / v.powf(inv_s)) * (-v).exp()
        }
    };
    let (value, _) = quad::integrate(integrand, 0.0, cut, 0.9 * quadrature_tol, 32, 4000)?;
    Ok(value.clamp(0.0, 1.0))
}

/// Quantiles of `|X|` and `|gY|` at the same level `u`: the monotone
/// coupling of the two magnitudes.
pub fn coupled_quantiles(r: f64, u: f64) -> Result<(f64, f64)> {
    if !(r > 0.0 && r < 2.0) {
        return Err(Error::InvalidParameter(format!("coupling needs r in (0, 2), got {r}")));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::QuantileInversion {
            u,
            reason: "level must lie in (0, 1)".into(),
        });
    }
    let x = tail_quantile(r, u);
    let target = 1.0 - u;
    let tol = (target * 1e-6).clamp(1e-14, DEFAULT_QUADRATURE_TOL);
    let tail = |y: f64| product_tail(r, y, tol);

    let mut hi = 1.0;
    let mut doublings = 0;
    while tail(hi)? > target {
        hi *= 2.0;
        doublings += 1;
        if doublings > 64 {
            return Err(Error::QuantileInversion {
                u,
                reason: "could not bracket the quantile".into(),
            });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + hi) {
            break;
        }
    }
    Ok((x, 0.5 * (lo + hi)))
}

/// Largest `max(gy/(1+x), x/(1+gy))` over a grid of coupled quantiles: the
/// empirical constant of the two-sided pointwise comparison.
pub fn coupling_constant(r: f64, levels: &[f64]) -> Result<f64> {
    levels.iter().try_fold(0.0f64, |c, &u| {
        let (x, gy) = coupled_quantiles(r, u)?;
        Ok(c.max(gy / (1.0 + x)).max(x / (1.0 + gy)))
    })
}
