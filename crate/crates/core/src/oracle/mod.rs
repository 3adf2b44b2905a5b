//! Slow, independent verifiers: a projected-gradient solver for one implicit
//! step of the constrained problem, a closed-form 1D steady state, the
//! exponential regularizing sequence, and a continuous-dependence harness.

mod projection;
mod regularize;
mod stability;

pub use projection::ImageSpace;
pub use regularize::{constraint_transfer, regularizing_sequence, transfer_excess};
pub use stability::{stability_experiment, StabilityReport};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::field::{ConstraintField, Field};
use crate::operators::{power_flux, power_potential, OperatorKind};
use crate::problem::ProblemSpec;

/// Largest grid the oracle accepts.
pub const MAX_ORACLE_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    /// Initial step in the `|L . |` metric; adapted by backtracking.
    pub step: f64,
    pub max_iterations: usize,
    /// Stop once the gradient mapping falls below this.
    pub tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            step: 1.0,
            max_iterations: 200_000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub field: Field,
    pub iterations: usize,
    pub energy: f64,
    /// `||z - P_K(z - grad_H J(z))||_H` at the returned point.
    pub kkt_residual: f64,
    /// `max_j |Lz_j| / g_j - 1`, nonpositive when feasible.
    pub relative_excess: f64,
    /// No accepted iterate raised the energy beyond rounding.
    pub monotone: bool,
    pub converged: bool,
}

/// Step data in interior coordinates.
struct Program<'a> {
    spec: &'a ProblemSpec,
    space: ImageSpace,
    prev: DVector<f64>,
    f: DVector<f64>,
    alpha: Vec<f64>,
    g: Vec<f64>,
    dt: f64,
    cell: f64,
}

impl Program<'_> {
    fn energy(&self, z: &DVector<f64>) -> f64 {
        let law = self.spec.law();
        let m = self.space.comps;
        let q = self.space.apply(z);
        let mut a = 0.0;
        for j in 0..self.alpha.len() {
            a += power_potential(self.alpha[j], law.p, law.mu(), &q.as_slice()[j * m..(j + 1) * m]);
        }
        let mut rest = 0.0;
        for i in 0..z.len() {
            let d = z[i] - self.prev[i];
            rest += d * d / (2.0 * self.dt) + law.reaction.potential(z[i]) - self.f[i] * z[i];
        }
        self.cell * (a + rest)
    }

    /// Euclidean gradient of the energy.
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let law = self.spec.law();
        let m = self.space.comps;
        let q = self.space.apply(z);
        let mut flux = DVector::zeros(q.len());
        for j in 0..self.alpha.len() {
            power_flux(
                self.alpha[j],
                law.p,
                law.mu(),
                &q.as_slice()[j * m..(j + 1) * m],
                &mut flux.as_mut_slice()[j * m..(j + 1) * m],
            );
        }
        let mut grad = self.space.l.transpose() * flux;
        for i in 0..z.len() {
            grad[i] += (z[i] - self.prev[i]) / self.dt + law.reaction.eval(z[i]) - self.f[i];
        }
        grad * self.cell
    }

    /// Gradient in the metric `<u, v>_H = h^d (Lu) . (Lv)`.
    fn h_gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        self.space.solve_normal(&self.gradient(z)) / self.cell
    }

    fn h_norm(&self, v: &DVector<f64>) -> f64 {
        (self.cell * self.space.apply(v).norm_squared()).sqrt()
    }

    fn kkt(&self, z: &DVector<f64>) -> f64 {
        let y = z - self.h_gradient(z);
        self.h_norm(&(z - self.space.project(&y, &self.g)))
    }
}

/// Minimizes `(1/2dt)||w - w_prev||^2 + int A(Lw) + int B(w) - int f w` over
/// `{|Lw| <= g}` by projected gradient with backtracking.
pub fn oracle_vi_step(
    w_prev: &Field,
    g: &ConstraintField,
    spec: &ProblemSpec,
    t: f64,
    dt: f64,
    opts: &OracleOptions,
) -> Result<OracleResult> {
    let grid = spec.grid();
    if grid.len() > MAX_ORACLE_NODES {
        return Err(Error::Unsupported(format!(
            "oracle is limited to {MAX_ORACLE_NODES} nodes, grid has {}",
            grid.len()
        )));
    }
    check_len("oracle w_prev", grid.len(), w_prev.len())?;
    check_len("oracle constraint", spec.operator().point_count(), g.len())?;
    if !(dt > 0.0) {
        return Err(Error::param("dt", format!("need dt > 0, got {dt}")));
    }
    let interior = grid.interior_nodes();
    let f_nodes = spec.source_at(t);
    let prog = Program {
        spec,
        space: ImageSpace::new(spec.operator())?,
        prev: DVector::from_iterator(interior.len(), interior.iter().map(|&i| w_prev.as_slice()[i])),
        f: DVector::from_iterator(interior.len(), interior.iter().map(|&i| f_nodes[i])),
        alpha: spec.alpha_at(t),
        g: g.as_slice().to_vec(),
        dt,
        cell: grid.cell_volume(),
    };

    let mut z = prog.space.project(&prog.prev, &prog.g);
    let mut energy = prog.energy(&z);
    let mut step = opts.step;
    let mut monotone = true;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let grad = prog.gradient(&z);
        let roundoff = 1e-15 * energy.abs().max(1.0);
        let hgrad = prog.space.solve_normal(&grad) / prog.cell;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = prog.space.project(&(&z - &hgrad * step), &prog.g);
            let d = &trial - &z;
            let e = prog.energy(&trial);
            let model = energy + grad.dot(&d) + prog.h_norm(&d).powi(2) / (2.0 * step);
            if e <= model.min(energy) + roundoff {
                accepted = Some((trial, e, prog.h_norm(&d) / step));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, e, mapping)) = accepted else { break };
        if e > energy + roundoff {
            monotone = false;
        }
        z = trial;
        energy = e;
        if mapping <= opts.tol {
            converged = true;
            break;
        }
        step *= 1.25;
    }

    let q = prog.space.apply(&z);
    let m = prog.space.comps;
    let relative_excess = (0..prog.g.len())
        .map(|j| q.as_slice()[j * m..(j + 1) * m].iter().map(|v| v * v).sum::<f64>().sqrt() / prog.g[j] - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let kkt_residual = prog.kkt(&z);
    let mut values = vec![0.0; grid.len()];
    for (k, &i) in interior.iter().enumerate() {
        values[i] = z[k];
    }
    Ok(OracleResult {
        field: Field::new(values)?,
        iterations,
        energy,
        kkt_residual,
        relative_excess,
        monotone,
        converged,
    })
}

/// Repeats [`oracle_vi_step`] with step `dt`, source and bound taken at the
/// final time, until successive fields differ by less than `tol` in max norm.
/// Returns the last field and the number of steps.
pub fn oracle_steady_state(
    spec: &ProblemSpec,
    dt: f64,
    opts: &OracleOptions,
    tol: f64,
    max_steps: usize,
) -> Result<(Field, usize)> {
    let t = spec.time().final_time();
    let g = spec.constraint().eval_given(t)?;
    let mut w = spec.u0().clone();
    for k in 1..=max_steps {
        let next = oracle_vi_step(&w, &g, spec, t, dt, opts)?.field;
        let change = next.sub(&w)?.max_abs();
        w = next;
        if change < tol {
            return Ok((w, k));
        }
    }
    Ok((w, max_steps))
}

/// Discrete steady state of the 1D gradient-constrained problem with
/// `p = 2`, constant `alpha >= 0` and no reaction. The flux at midpoint `m` is
/// `c - h sum_{i <= m} f_i`; the slope is the flux divided by `alpha`,
/// clipped to `[-g, g]`, with `c` fixed by bisection so the slopes sum to
/// zero.
pub fn steady_profile_1d(spec: &ProblemSpec, g: &ConstraintField) -> Result<Field> {
    let op = spec.operator();
    if op.kind() != OperatorKind::Gradient1d || spec.law().p != 2.0 {
        return Err(Error::Unsupported("steady profile needs a 1D gradient constraint and p = 2".into()));
    }
    let t = spec.time().final_time();
    let alpha = spec.alpha_at(t);
    if alpha.iter().any(|&a| a != alpha[0]) || spec.law().reaction.derivative() != 0.0 {
        return Err(Error::Unsupported("steady profile needs constant alpha and b = 0".into()));
    }
    let alpha = alpha[0];
    let grid = spec.grid();
    let h = grid.spacing()[0];
    let f = spec.source_at(t);
    let n = grid.len();
    let gv = g.as_slice();
    let mut cum = vec![0.0; n - 1];
    let mut acc = 0.0;
    for m in 0..n - 1 {
        if m > 0 {
            acc += h * f[m];
        }
        cum[m] = acc;
    }
    let slope = |c: f64, m: usize| -> f64 {
        let q = c - cum[m];
        if alpha > 0.0 {
            (q / alpha).clamp(-gv[m], gv[m])
        } else {
            gv[m] * q.signum()
        }
    };
    let total = |c: f64| -> f64 { (0..n - 1).map(|m| slope(c, m)).sum() };
    let span = cum.iter().fold(0.0f64, |a, b| a.max(b.abs())) + alpha * gv.iter().fold(0.0f64, |a, &b| a.max(b)) + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    let mut u = vec![0.0; n];
    for m in 0..n - 2 {
        u[m + 1] = u[m] + h * slope(c, m);
    }
    Field::new(u)
}
