//! Exponential penalty `k_eps`, its antiderivative, and the penalized stress
//! `(delta + k_eps(gap)) |xi|^{p-2} xi`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::field::{euclid, ConstraintField, EdgeField};
use crate::operators::{regularized_sq, weight, MaterialLaw};

/// Smallest `eps` accepted without an explicit override.
pub const MIN_DEFAULT_EPS: f64 = 0.05;
/// Default saturation level of the penalty.
pub const DEFAULT_CAP: f64 = 1e12;

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::param("eps", format!("need 0 < eps < 1, got {eps}")));
    }
    Ok(())
}

/// `0` for `s <= 0`, `e^{s/eps} - 1` on `[0, 1/eps]`, `e^{1/eps^2} - 1` beyond.
pub fn k_eps(s: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(k_raw(s, eps))
}

#[inline]
fn k_raw(s: f64, eps: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s <= 1.0 / eps {
        (s / eps).exp_m1()
    } else {
        (1.0 / (eps * eps)).exp_m1()
    }
}

pub fn k_eps_delta(s: f64, eps: f64, delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::param("delta", format!("need 0 <= delta < 1, got {delta}")));
    }
    Ok(delta + k_eps(s, eps)?)
}

/// `phi_eps(s) = int_0^s k_eps`.
pub fn phi_eps(s: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let knee = 1.0 / eps;
    Ok(if s <= 0.0 {
        0.0
    } else if s <= knee {
        eps * (s / eps).exp_m1() - s
    } else {
        let at_knee = eps * (knee / eps).exp_m1() - knee;
        at_knee + (1.0 / (eps * eps)).exp_m1() * (s - knee)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyVariant {
    /// Penalize `|Lu| - G`.
    MagnitudeGap,
    /// Penalize `|Lu|^p - G^p`.
    PowerGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    eps: f64,
    delta: f64,
    variant: PenaltyVariant,
    cap: f64,
}

impl PenaltyParams {
    /// Standard construction, `eps >= 0.05`.
    pub fn new(eps: f64, delta: f64, variant: PenaltyVariant) -> Result<Self> {
        let params = PenaltyParams::with_cap(eps, delta, variant, DEFAULT_CAP)?;
        if eps < MIN_DEFAULT_EPS {
            return Err(Error::param(
                "eps",
                format!("eps = {eps} is below {MIN_DEFAULT_EPS}; use an explicit cap to go lower"),
            ));
        }
        Ok(params)
    }

    /// Any `eps` in `(0, 1)`; the penalty saturates at `cap`.
    pub fn with_cap(eps: f64, delta: f64, variant: PenaltyVariant, cap: f64) -> Result<Self> {
        check_eps(eps)?;
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::param("delta", format!("need 0 <= delta < 1, got {delta}")));
        }
        if !(cap > 0.0) {
            return Err(Error::param("cap", format!("need cap > 0, got {cap}")));
        }
        Ok(PenaltyParams {
            eps,
            delta,
            variant,
            cap,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn variant(&self) -> PenaltyVariant {
        self.variant
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// Saturated penalty `min(k_eps(s), cap)`.
    #[inline]
    pub fn k(&self, s: f64) -> f64 {
        k_raw(s, self.eps).min(self.cap)
    }

    /// Derivative of [`k`](Self::k), taking the exponential branch at both
    /// kinks and zero once saturated.
    #[inline]
    pub fn k_prime(&self, s: f64) -> f64 {
        if s < 0.0 || s > 1.0 / self.eps {
            return 0.0;
        }
        let e = (s / self.eps).exp();
        if e - 1.0 >= self.cap {
            0.0
        } else {
            e / self.eps
        }
    }

    /// Constraint gap at a point with `|xi| = norm` and bound `g`.
    #[inline]
    pub fn gap(&self, norm: f64, g: f64, p: f64) -> f64 {
        match self.variant {
            PenaltyVariant::MagnitudeGap => norm - g,
            PenaltyVariant::PowerGap => norm.powf(p) - g.powf(p),
        }
    }

    #[inline]
    fn gap_slope(&self, norm: f64, p: f64) -> f64 {
        match self.variant {
            PenaltyVariant::MagnitudeGap => 1.0,
            PenaltyVariant::PowerGap => p * norm.powf(p - 1.0),
        }
    }

    /// Stress `(delta + k(gap)) (|xi|^2 + mu^2)^{(p-2)/2} xi` at one point.
    #[inline]
    pub(crate) fn stress_at(&self, xi: &[f64], g: f64, p: f64, mu: f64, out: &mut [f64]) {
        let norm = euclid(xi);
        let c = self.delta + self.k(self.gap(norm, g, p));
        let w = regularized_sq(xi, mu);
        if w == 0.0 || c == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let s = c * weight(w, p);
        for (o, &x) in out.iter_mut().zip(xi) {
            *o = s * x;
        }
    }

    /// Row-major Jacobian of [`stress_at`](Self::stress_at).
    pub(crate) fn stress_jacobian_at(&self, xi: &[f64], g: f64, p: f64, mu: f64, out: &mut [f64]) {
        let m = xi.len();
        let norm = euclid(xi);
        let gap = self.gap(norm, g, p);
        let c = self.delta + self.k(gap);
        let w = regularized_sq(xi, mu).max(1e-24);
        let s = weight(w, p);
        let dk = if norm > 0.0 {
            self.k_prime(gap) * self.gap_slope(norm, p) / norm
        } else {
            0.0
        };
        for a in 0..m {
            for b in 0..m {
                let id = if a == b { 1.0 } else { 0.0 };
                out[a * m + b] = c * s * (id + (p - 2.0) * xi[a] * xi[b] / w) + dk * s * xi[a] * xi[b];
            }
        }
    }
}

/// Pointwise penalized stress over a whole slice.
pub fn penalty_stress(
    lu: &EdgeField,
    g: &ConstraintField,
    params: &PenaltyParams,
    law: &MaterialLaw,
) -> Result<EdgeField> {
    check_len("penalty_stress", g.len(), lu.points())?;
    let m = lu.comps();
    let mut out = vec![0.0; lu.as_slice().len()];
    for j in 0..lu.points() {
        params.stress_at(lu.point(j), g.as_slice()[j], law.p, law.mu(), &mut out[j * m..(j + 1) * m]);
    }
    Ok(EdgeField::from_vec_unchecked(m, out))
}

/// `int_Omega k(gap)` with the `h^d` weight.
pub fn penalty_mass(lu: &EdgeField, g: &ConstraintField, params: &PenaltyParams, p: f64, cell: f64) -> f64 {
    let s: f64 = (0..lu.points())
        .map(|j| params.k(params.gap(lu.magnitude(j), g.as_slice()[j], p)))
        .sum();
    cell * s
}
