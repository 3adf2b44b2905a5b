//! Backward Euler for the penalized problem with a damped Newton inner solver,
//! time-step halving on failure, and continuation in `(eps, delta)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::field::{
    norm_l2, norm_lp_spacetime, violation_positive_part, ConstraintField, EdgeField, Field, SolveDiagnostics,
    Trajectory,
};
use crate::linalg::BandedSpd;
use crate::operators::{power_flux, power_flux_jacobian, regularized_sq, weight};
use crate::penalty::{penalty_mass, PenaltyParams, PenaltyVariant, DEFAULT_CAP, MIN_DEFAULT_EPS};
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub backtrack: f64,
    pub min_step: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            max_iterations: 50,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            backtrack: 0.5,
            min_step: 2f64.powi(-20),
            max_halvings: 8,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::param("solver.tolerance", "tolerances must be positive"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::param("solver.backtrack", format!("need 0 < factor < 1, got {}", self.backtrack)));
        }
        if !(self.min_step > 0.0 && self.min_step < 1.0) {
            return Err(Error::param("solver.min_step", format!("need 0 < step < 1, got {}", self.min_step)));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("solver.max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

/// Descending `eps` and `delta` lists; every `delta` is visited inside each
/// `eps` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSchedule {
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
    pub variant: PenaltyVariant,
    /// Permits `eps < 0.05`; the penalty then saturates at `cap`.
    pub allow_small_eps: bool,
    pub cap: f64,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        ContinuationSchedule {
            eps: vec![0.4, 0.2, 0.1, 0.05],
            delta: vec![1e-2, 1e-4, 1e-6],
            variant: PenaltyVariant::MagnitudeGap,
            allow_small_eps: false,
            cap: DEFAULT_CAP,
        }
    }
}

impl ContinuationSchedule {
    pub fn single(eps: f64, delta: f64) -> Self {
        ContinuationSchedule {
            eps: vec![eps],
            delta: vec![delta],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stages().map(|_| ())
    }

    /// Stage parameters in execution order.
    pub fn stages(&self) -> Result<Vec<PenaltyParams>> {
        if self.eps.is_empty() || self.delta.is_empty() {
            return Err(Error::param("schedule", "eps and delta lists must be non-empty"));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("schedule.eps", "must be strictly decreasing"));
        }
        if self.delta.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("schedule.delta", "must be strictly decreasing"));
        }
        let mut out = Vec::with_capacity(self.eps.len() * self.delta.len());
        for &eps in &self.eps {
            if eps < MIN_DEFAULT_EPS && !self.allow_small_eps {
                return Err(Error::param(
                    "schedule.eps",
                    format!("eps = {eps} is below {MIN_DEFAULT_EPS} and allow_small_eps is off"),
                ));
            }
            for &delta in &self.delta {
                out.push(PenaltyParams::with_cap(eps, delta, self.variant, self.cap)?);
            }
        }
        Ok(out)
    }
}

/// Per-stage summary of a continuation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub eps: f64,
    pub delta: f64,
    /// `dt sum_k int (|Lu_k| - G_k)^+`.
    pub violation: f64,
    /// `dt sum_k int k_eps(gap_k)`.
    pub penalty_mass: f64,
    /// `||Lu||_{L^p(Q_T)}`.
    pub lp_norm: f64,
    /// `delta^{1/p} ||Lu||_{L^p(Q_T)}`.
    pub scaled_lp_norm: f64,
    pub final_l2: f64,
    pub newton_iterations: usize,
    pub halvings: usize,
    pub max_residual: f64,
    /// Final Newton residual of every time step.
    pub step_residuals: Vec<f64>,
}

/// Frozen data of one implicit step.
struct StepData<'a> {
    spec: &'a ProblemSpec,
    g: &'a ConstraintField,
    params: &'a PenaltyParams,
    dt: f64,
    f: Vec<f64>,
    alpha: Vec<f64>,
}

impl<'a> StepData<'a> {
    fn new(spec: &'a ProblemSpec, g: &'a ConstraintField, params: &'a PenaltyParams, t: f64, dt: f64) -> Result<Self> {
        check_len("frozen constraint", spec.operator().point_count(), g.len())?;
        if !(dt > 0.0) {
            return Err(Error::param("dt", format!("need dt > 0, got {dt}")));
        }
        Ok(StepData {
            spec,
            g,
            params,
            dt,
            f: spec.source_at(t),
            alpha: spec.alpha_at(t),
        })
    }

    fn fluxes(&self, lu: &EdgeField) -> Vec<f64> {
        let law = self.spec.law();
        let (p, mu) = (law.p, law.mu());
        let m = lu.comps();
        let mut q = vec![0.0; lu.as_slice().len()];
        let mut tmp = [0.0; 2];
        for j in 0..lu.points() {
            let xi = lu.point(j);
            let out = &mut q[j * m..(j + 1) * m];
            power_flux(self.alpha[j], p, mu, xi, out);
            self.params.stress_at(xi, self.g.as_slice()[j], p, mu, &mut tmp[..m]);
            for (o, s) in out.iter_mut().zip(&tmp[..m]) {
                *o += s;
            }
        }
        q
    }

    fn residual(&self, w: &[f64], w_prev: &[f64]) -> Result<Vec<f64>> {
        let op = self.spec.operator();
        let lu = op.apply(&Field::from_vec_unchecked(w.to_vec()))?;
        let q = EdgeField::from_vec_unchecked(lu.comps(), self.fluxes(&lu));
        let div = op.apply_adjoint(&q)?;
        let reaction = self.spec.law().reaction;
        let mut r = vec![0.0; w.len()];
        for i in 0..w.len() {
            r[i] = if op.interior_index(i).is_none() {
                w[i]
            } else {
                (w[i] - w_prev[i]) / self.dt + div.as_slice()[i] + reaction.eval(w[i]) - self.f[i]
            };
        }
        Ok(r)
    }

    fn jacobian(&self, w: &[f64]) -> Result<BandedSpd> {
        let op = self.spec.operator();
        let law = self.spec.law();
        let (p, mu) = (law.p, law.mu());
        let lu = op.apply(&Field::from_vec_unchecked(w.to_vec()))?;
        let m = lu.comps();
        let mut blocks = vec![0.0; lu.points() * m * m];
        let mut tmp = [0.0; 4];
        for j in 0..lu.points() {
            let xi = lu.point(j);
            let b = &mut blocks[j * m * m..(j + 1) * m * m];
            power_flux_jacobian(self.alpha[j], p, mu, xi, b);
            self.params.stress_jacobian_at(xi, self.g.as_slice()[j], p, mu, &mut tmp[..m * m]);
            for (o, s) in b.iter_mut().zip(&tmp[..m * m]) {
                *o += s;
            }
        }
        let mut jac = BandedSpd::zeros(op.interior_count(), op.bandwidth());
        let diag = 1.0 / self.dt + law.reaction.derivative();
        for r in 0..jac.dim() {
            jac.add(r, r, diag);
        }
        op.add_weighted_normal(&blocks, &mut jac);
        Ok(jac)
    }

    fn norm(&self, v: &[f64]) -> f64 {
        let grid = self.spec.grid();
        (grid.cell_volume() * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
    }

    fn tolerance(&self, w_prev: &[f64], opts: &NewtonOptions) -> f64 {
        let op = self.spec.operator();
        let f_int: Vec<f64> = (0..self.f.len())
            .filter(|&i| op.interior_index(i).is_some())
            .map(|i| self.f[i])
            .collect();
        opts.abs_tol + opts.rel_tol * (self.norm(w_prev) / self.dt + self.norm(&f_int))
    }

    fn diagnostics_at(&self, w: &[f64], mut diag: SolveDiagnostics) -> Result<SolveDiagnostics> {
        let spec = self.spec;
        let lu = spec.operator().apply(&Field::from_vec_unchecked(w.to_vec()))?;
        diag.violation = violation_positive_part(&lu, self.g, spec.grid())?;
        diag.penalty_mass = penalty_mass(&lu, self.g, self.params, spec.law().p, spec.grid().cell_volume());
        Ok(diag)
    }

    fn newton(&self, w_prev: &[f64], guess: &[f64], time: f64, opts: &NewtonOptions) -> Result<(Field, SolveDiagnostics)> {
        let op = self.spec.operator();
        let mut w = guess.to_vec();
        for (i, x) in w.iter_mut().enumerate() {
            if op.interior_index(i).is_none() {
                *x = 0.0;
            }
        }
        let tol = self.tolerance(w_prev, opts);
        let mut r = self.residual(&w, w_prev)?;
        let mut rn = self.norm(&r);
        let mut diag = SolveDiagnostics {
            residual_history: vec![rn],
            ..Default::default()
        };
        let fail = |diag: SolveDiagnostics, rn: f64| Error::NonConvergence {
            time,
            halvings: 0,
            diagnostics: Box::new(SolveDiagnostics {
                final_residual: rn,
                ..diag
            }),
        };
        loop {
            if !rn.is_finite() {
                return Err(fail(diag, rn));
            }
            if rn <= tol {
                diag.final_residual = rn;
                let diag = self.diagnostics_at(&w, diag)?;
                return Ok((Field::new(w)?, diag));
            }
            if diag.newton_iterations == opts.max_iterations {
                return Err(fail(diag, rn));
            }
            let chol = self.jacobian(&w)?.factor()?;
            let rhs: Vec<f64> = (0..w.len())
                .filter(|&i| op.interior_index(i).is_some())
                .map(|i| -r[i])
                .collect();
            let d = chol.solve(&rhs);
            let mut step = 1.0;
            let accepted = loop {
                let mut trial = w.clone();
                for (i, x) in trial.iter_mut().enumerate() {
                    if let Some(k) = op.interior_index(i) {
                        *x += step * d[k];
                    }
                }
                let rt = self.residual(&trial, w_prev)?;
                let rtn = self.norm(&rt);
                if rtn < rn {
                    break Some((trial, rt, rtn));
                }
                step *= opts.backtrack;
                if step < opts.min_step {
                    break None;
                }
            };
            diag.newton_iterations += 1;
            match accepted {
                Some((trial, rt, rtn)) => {
                    w = trial;
                    r = rt;
                    rn = rtn;
                    diag.residual_history.push(rn);
                }
                None => return Err(fail(diag, rn)),
            }
        }
    }
}

/// Nodal residual of one implicit step (boundary rows are `w_i`).
pub fn residual(
    w: &Field,
    w_prev: &Field,
    g: &ConstraintField,
    spec: &ProblemSpec,
    params: &PenaltyParams,
    t: f64,
    dt: f64,
) -> Result<Field> {
    check_len("residual w", spec.grid().len(), w.len())?;
    check_len("residual w_prev", spec.grid().len(), w_prev.len())?;
    let data = StepData::new(spec, g, params, t, dt)?;
    Ok(Field::from_vec_unchecked(data.residual(w.as_slice(), w_prev.as_slice())?))
}

/// Damped Newton solve of one implicit step ending at time `t`. Starts from
/// `guess`, or from `w_prev` when none is given.
#[allow(clippy::too_many_arguments)]
pub fn newton_step_solve(
    w_prev: &Field,
    g: &ConstraintField,
    spec: &ProblemSpec,
    params: &PenaltyParams,
    t: f64,
    dt: f64,
    opts: &NewtonOptions,
    guess: Option<&Field>,
) -> Result<(Field, SolveDiagnostics)> {
    check_len("newton w_prev", spec.grid().len(), w_prev.len())?;
    let data = StepData::new(spec, g, params, t, dt)?;
    let guess = guess.unwrap_or(w_prev);
    check_len("newton guess", spec.grid().len(), guess.len())?;
    data.newton(w_prev.as_slice(), guess.as_slice(), t, opts)
}

/// Step to `t` from `w_prev`, splitting the step in two on Newton failure.
#[allow(clippy::too_many_arguments)]
fn step_with_halving(
    spec: &ProblemSpec,
    g: &ConstraintField,
    params: &PenaltyParams,
    w_prev: &Field,
    t: f64,
    dt: f64,
    depth: usize,
    opts: &NewtonOptions,
    guess: Option<&Field>,
) -> Result<(Field, SolveDiagnostics)> {
    match newton_step_solve(w_prev, g, spec, params, t, dt, opts, guess) {
        Err(Error::NonConvergence { diagnostics, .. }) if depth >= opts.max_halvings => Err(Error::NonConvergence {
            time: t,
            halvings: depth,
            diagnostics,
        }),
        Err(Error::NonConvergence { .. }) => {
            let half = 0.5 * dt;
            let (mid, d1) = step_with_halving(spec, g, params, w_prev, t - half, half, depth + 1, opts, None)?;
            let (end, d2) = step_with_halving(spec, g, params, &mid, t, half, depth + 1, opts, guess)?;
            let mut residual_history = d1.residual_history;
            residual_history.extend(d2.residual_history);
            Ok((
                end,
                SolveDiagnostics {
                    newton_iterations: d1.newton_iterations + d2.newton_iterations,
                    halvings: d1.halvings + d2.halvings + 1,
                    residual_history,
                    ..d2
                },
            ))
        }
        other => other,
    }
}

/// Time stepping with the constraint frozen to `g_frozen[k]` at node `k`.
/// `warm` supplies per-step Newton initial guesses.
pub fn solve_penalized_evolution(
    spec: &ProblemSpec,
    g_frozen: &[ConstraintField],
    params: &PenaltyParams,
    opts: &NewtonOptions,
    warm: Option<&Trajectory>,
) -> Result<Trajectory> {
    opts.validate()?;
    let time = spec.time();
    let steps = time.steps();
    check_len("frozen constraint fields", steps + 1, g_frozen.len())?;
    if let Some(w) = warm {
        check_len("warm start", steps, w.steps())?;
    }
    let mut traj = Trajectory::new(spec.u0().clone());
    for k in 1..=steps {
        let guess = warm.map(|w| w.field(k));
        let (w, diag) = step_with_halving(
            spec,
            &g_frozen[k],
            params,
            traj.last(),
            time.time(k),
            time.dt(),
            0,
            opts,
            guess,
        )?;
        traj.push(w, diag);
    }
    debug_assert!(
        traj.total_halvings() > 0 || energy_estimate_gap(spec, &traj, params).map_or(true, |gap| gap <= 0.0),
        "discrete energy estimate violated"
    );
    Ok(traj)
}

/// `max_k (lhs_k - rhs_k)` for the discrete energy estimate
/// `||w_k||^2 + 2 delta sum dt int (|Lw|^2 + mu^2)^{(p-2)/2} |Lw|^2
///  <= ||u0||^2 + sum dt (||w||^2 + ||f||^2)`,
/// with the Newton residuals added to the right side. Nonpositive when the
/// estimate holds.
pub fn energy_estimate_gap(spec: &ProblemSpec, traj: &Trajectory, params: &PenaltyParams) -> Result<f64> {
    let grid = spec.grid();
    let time = spec.time();
    let dt = time.dt();
    let law = spec.law();
    let cell = grid.cell_volume();
    let u0 = norm_l2(traj.initial(), grid)?;
    let mut lhs_sum = 0.0;
    let mut rhs = u0 * u0;
    let mut worst = f64::NEG_INFINITY;
    for k in 1..=traj.steps() {
        let w = traj.field(k);
        let wn = norm_l2(w, grid)?;
        let f = spec.source_at(time.time(k));
        let fnorm = (cell * f.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let lu = spec.operator().apply(w)?;
        let mut s = 0.0;
        for j in 0..lu.points() {
            let xi = lu.point(j);
            let wq = regularized_sq(xi, law.mu());
            s += weight(wq, law.p) * (wq - law.mu() * law.mu());
        }
        lhs_sum += 2.0 * params.delta() * dt * cell * s;
        let res = traj.diagnostics().get(k - 1).map_or(0.0, |d| d.final_residual);
        rhs += dt * (wn * wn + fnorm * fnorm) + 2.0 * dt * res * wn;
        let lhs = wn * wn + lhs_sum;
        worst = worst.max(lhs - rhs * (1.0 + 1e-12));
    }
    Ok(if traj.steps() == 0 { 0.0 } else { worst })
}

/// Summary metrics of a trajectory at one stage.
pub fn stage_summary(spec: &ProblemSpec, traj: &Trajectory, params: &PenaltyParams) -> Result<StageSummary> {
    let dt = spec.time().dt();
    let slices = traj
        .fields()
        .iter()
        .skip(1)
        .map(|w| spec.operator().apply(w))
        .collect::<Result<Vec<_>>>()?;
    let p = spec.law().p;
    let lp_norm = norm_lp_spacetime(&slices, p, spec.grid(), dt)?;
    let d = traj.diagnostics();
    Ok(StageSummary {
        eps: params.eps(),
        delta: params.delta(),
        violation: dt * d.iter().map(|x| x.violation).sum::<f64>(),
        penalty_mass: dt * d.iter().map(|x| x.penalty_mass).sum::<f64>(),
        lp_norm,
        scaled_lp_norm: params.delta().powf(1.0 / p) * lp_norm,
        final_l2: norm_l2(traj.last(), spec.grid())?,
        newton_iterations: traj.total_newton_iterations(),
        halvings: traj.total_halvings(),
        max_residual: d.iter().map(|x| x.final_residual).fold(0.0, f64::max),
        step_residuals: d.iter().map(|x| x.final_residual).collect(),
    })
}

/// Runs every stage of `schedule`, each warm-started from the previous
/// stage's trajectory. Returns the last trajectory and all stage summaries.
pub fn continuation_solve(
    spec: &ProblemSpec,
    g_frozen: &[ConstraintField],
    schedule: &ContinuationSchedule,
    opts: &NewtonOptions,
) -> Result<(Trajectory, Vec<StageSummary>)> {
    let stages = schedule.stages()?;
    let mut summaries = Vec::with_capacity(stages.len());
    let mut current: Option<Trajectory> = None;
    for params in &stages {
        let traj = solve_penalized_evolution(spec, g_frozen, params, opts, current.as_ref()).map_err(|e| Error::Stage {
            eps: params.eps(),
            delta: params.delta(),
            source: Box::new(e),
        })?;
        summaries.push(stage_summary(spec, &traj, params)?);
        current = Some(traj);
    }
    Ok((current.expect("schedule has at least one stage"), summaries))
}
