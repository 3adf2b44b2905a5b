//! Outer Picard iteration for solution-dependent constraints.
//!
//! `S(phi)` freezes `G[phi]` along the time nodes and solves the penalized
//! evolution; a QVI solution is a fixed point of `S`.

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintHistory;
use crate::error::{Error, Result};
use crate::field::{spacetime_l2_distance, violation_positive_part, Trajectory};
use crate::penalty::PenaltyParams;
use crate::problem::ProblemSpec;
use crate::stepper::{solve_penalized_evolution, stage_summary, ContinuationSchedule, NewtonOptions, StageSummary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterOptions {
    pub max_iterations: usize,
    pub tol: f64,
    /// Relaxation `theta` in `phi <- (1 - theta) phi + theta S(phi)`.
    pub relaxation: f64,
}

impl Default for OuterOptions {
    fn default() -> Self {
        OuterOptions {
            max_iterations: 60,
            tol: 1e-8,
            relaxation: 1.0,
        }
    }
}

impl OuterOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::param("outer.relaxation", format!("need 0 < theta <= 1, got {}", self.relaxation)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("outer.tol", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("outer.max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub trajectory: Trajectory,
    /// Constraint fields the returned trajectory was solved against.
    pub constraint: ConstraintHistory,
    /// `||S(phi^k) - phi^k||` in the discrete `L^2(Q_T)` norm, per iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// `||S(phi*) - phi*||` from one extra evaluation after convergence.
    pub verification: f64,
}

impl FixedPointResult {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }
}

/// `S(phi)`: the penalized solution with `G[phi]` frozen. `warm` seeds the
/// Newton iterations; a fixed `warm` keeps `S` a function of `phi` alone.
pub fn evaluate_s(
    spec: &ProblemSpec,
    phi: &Trajectory,
    params: &PenaltyParams,
    opts: &NewtonOptions,
    warm: Option<&Trajectory>,
) -> Result<(Trajectory, ConstraintHistory)> {
    let history = spec.constraint().fields_along(phi.fields())?;
    let traj = solve_penalized_evolution(spec, &history.fields, params, opts, warm)?;
    Ok((traj, history))
}

fn distance(spec: &ProblemSpec, a: &Trajectory, b: &Trajectory) -> Result<f64> {
    spacetime_l2_distance(a.fields(), b.fields(), spec.grid(), spec.time())
}

/// Picard iteration `phi^{k+1} = (1 - theta) phi^k + theta S(phi^k)` from
/// `start`. Stops at the first step shorter than `outer.tol`. For a
/// prescribed bound `S` is constant and a single evaluation is returned.
pub fn qvi_fixed_point(
    spec: &ProblemSpec,
    params: &PenaltyParams,
    opts: &NewtonOptions,
    outer: &OuterOptions,
    start: &Trajectory,
    warm: Option<&Trajectory>,
) -> Result<FixedPointResult> {
    outer.validate()?;
    if spec.constraint().is_given() {
        let (traj, constraint) = evaluate_s(spec, start, params, opts, warm)?;
        let r = distance(spec, &traj, start)?;
        return Ok(FixedPointResult {
            trajectory: traj,
            constraint,
            residuals: vec![r],
            converged: true,
            verification: 0.0,
        });
    }
    let theta = outer.relaxation;
    let mut phi = start.clone();
    let mut residuals = Vec::new();
    let mut last_constraint = None;
    let mut converged = false;
    for _ in 0..outer.max_iterations {
        let (s, constraint) = evaluate_s(spec, &phi, params, opts, warm)?;
        let r = distance(spec, &s, &phi)?;
        residuals.push(r);
        let next = if theta == 1.0 {
            s
        } else {
            let fields = phi
                .fields()
                .iter()
                .zip(s.fields())
                .map(|(a, b)| a.lerp(b, theta))
                .collect::<Result<Vec<_>>>()?;
            Trajectory::from_parts(fields, s.diagnostics().to_vec())
        };
        phi = next;
        last_constraint = Some(constraint);
        if theta * r < outer.tol {
            converged = true;
            break;
        }
    }
    let verification = if converged {
        let (s, _) = evaluate_s(spec, &phi, params, opts, warm)?;
        distance(spec, &s, &phi)?
    } else {
        f64::NAN
    };
    Ok(FixedPointResult {
        trajectory: phi,
        constraint: last_constraint.expect("at least one outer iteration"),
        residuals,
        converged,
        verification,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QviStage {
    pub summary: StageSummary,
    pub outer_residuals: Vec<f64>,
    pub converged: bool,
    pub verification: f64,
    /// `dt sum_k int (|Lu_k| - G[u]_k)^+`, the bound evaluated along `u` itself.
    pub self_violation: f64,
    pub clamp_events: usize,
}

#[derive(Debug, Clone)]
pub struct QviResult {
    pub trajectory: Trajectory,
    /// `G[u]` along the returned trajectory.
    pub constraint: ConstraintHistory,
    pub stages: Vec<QviStage>,
    /// Error that stopped the stage sequence; completed stages are kept.
    pub failure: Option<String>,
}

/// Fixed point per continuation stage, each stage warm-started (initial
/// iterate and Newton guesses) from the previous one.
pub fn qvi_solve(
    spec: &ProblemSpec,
    schedule: &ContinuationSchedule,
    opts: &NewtonOptions,
    outer: &OuterOptions,
) -> Result<QviResult> {
    let stages = schedule.stages()?;
    outer.validate()?;
    let steps = spec.time().steps();
    let mut done = Vec::with_capacity(stages.len());
    let mut current: Option<Trajectory> = None;
    let mut failure = None;
    for params in &stages {
        let start = current.clone().unwrap_or_else(|| Trajectory::constant(spec.u0(), steps));
        let fp = match qvi_fixed_point(spec, params, opts, outer, &start, current.as_ref()) {
            Ok(fp) => fp,
            Err(e) => {
                failure = Some(
                    Error::Stage {
                        eps: params.eps(),
                        delta: params.delta(),
                        source: Box::new(e),
                    }
                    .to_string(),
                );
                break;
            }
        };
        let own = spec.constraint().fields_along(fp.trajectory.fields())?;
        let self_violation = self_violation(spec, &fp.trajectory, &own)?;
        done.push(QviStage {
            summary: stage_summary(spec, &fp.trajectory, params)?,
            outer_residuals: fp.residuals,
            converged: fp.converged,
            verification: fp.verification,
            self_violation,
            clamp_events: own.clamp_events,
        });
        current = Some(fp.trajectory);
    }
    let trajectory = current.unwrap_or_else(|| Trajectory::constant(spec.u0(), steps));
    let constraint = spec.constraint().fields_along(trajectory.fields())?;
    Ok(QviResult {
        trajectory,
        constraint,
        stages: done,
        failure,
    })
}

fn self_violation(spec: &ProblemSpec, traj: &Trajectory, g: &ConstraintHistory) -> Result<f64> {
    let mut s = 0.0;
    for k in 1..=traj.steps() {
        let lu = spec.operator().apply(traj.field(k))?;
        s += violation_positive_part(&lu, &g.fields[k], spec.grid())?;
    }
    Ok(spec.time().dt() * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ScalarField;
    use crate::constraints::{Composition, ConstraintSpec, Kernel};
    use crate::field::Field;
    use crate::mesh::{Grid, TimeGrid};
    use crate::operators::{MaterialLaw, OperatorKind};
    use crate::penalty::PenaltyVariant;
    use crate::stepper::continuation_solve;

    fn spec_with(constraint: ConstraintSpec) -> ProblemSpec {
        ProblemSpec::new(
            Grid::new_1d(1.0, 17).unwrap(),
            TimeGrid::new(0.5, 10).unwrap(),
            OperatorKind::Gradient1d,
            MaterialLaw::power_law(2.0, 1.0),
            constraint,
            ScalarField::constant(10.0),
            Field::zeros(17),
        )
        .unwrap()
    }

    fn memory(kappa: f64) -> ConstraintSpec {
        ConstraintSpec::MemoryKernel {
            kernel: Kernel::Constant { value: kappa },
            composition: Composition::affine(1.0, 0.5),
            lower: 0.5,
            upper: 3.0,
        }
    }

    fn params() -> PenaltyParams {
        PenaltyParams::new(0.1, 1e-4, PenaltyVariant::MagnitudeGap).unwrap()
    }

    fn random_phi(spec: &ProblemSpec, seed: u64) -> Trajectory {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let fields = (0..=spec.time().steps())
            .map(|_| Field::from_fn(spec.grid(), true, |_| rng.gen_range(0.0..0.3)).unwrap())
            .collect();
        Trajectory::from_fields(fields).unwrap()
    }

    #[test]
    fn given_bound_makes_s_constant() {
        let spec = spec_with(ConstraintSpec::constant(1.0));
        let opts = NewtonOptions::default();
        let (a, _) = evaluate_s(&spec, &random_phi(&spec, 1), &params(), &opts, None).unwrap();
        let (b, _) = evaluate_s(&spec, &random_phi(&spec, 2), &params(), &opts, None).unwrap();
        assert_eq!(a, b);
        let start = Trajectory::constant(spec.u0(), 10);
        let fp = qvi_fixed_point(&spec, &params(), &opts, &OuterOptions::default(), &start, None).unwrap();
        assert_eq!(fp.iterations(), 1);
        assert!(fp.converged);
    }

    #[test]
    fn given_bound_reproduces_continuation() {
        let spec = spec_with(ConstraintSpec::constant(1.0));
        let schedule = ContinuationSchedule {
            eps: vec![0.4, 0.1],
            delta: vec![1e-2, 1e-4],
            ..Default::default()
        };
        let opts = NewtonOptions::default();
        let q = qvi_solve(&spec, &schedule, &opts, &OuterOptions::default()).unwrap();
        let g = spec
            .constraint()
            .fields_along(Trajectory::constant(spec.u0(), 10).fields())
            .unwrap()
            .fields;
        let (c, summaries) = continuation_solve(&spec, &g, &schedule, &opts).unwrap();
        assert_eq!(q.trajectory, c);
        let qs: Vec<StageSummary> = q.stages.iter().map(|s| s.summary.clone()).collect();
        assert_eq!(qs, summaries);
        assert!(q.failure.is_none());
    }

    #[test]
    fn zero_kernel_is_a_vi() {
        let spec = spec_with(memory(0.0));
        let opts = NewtonOptions::default();
        let (a, _) = evaluate_s(&spec, &random_phi(&spec, 3), &params(), &opts, None).unwrap();
        let (b, _) = evaluate_s(&spec, &random_phi(&spec, 4), &params(), &opts, None).unwrap();
        assert_eq!(a, b);
        let vi = spec_with(ConstraintSpec::constant(1.0));
        let (c, _) = evaluate_s(&vi, &random_phi(&spec, 5), &params(), &opts, None).unwrap();
        assert_eq!(a, c);
        let start = Trajectory::constant(spec.u0(), 10);
        let fp = qvi_fixed_point(&spec, &params(), &opts, &OuterOptions::default(), &start, None).unwrap();
        assert!(fp.converged);
        assert!((1..=2).contains(&fp.iterations()), "{}", fp.iterations());
    }

    #[test]
    fn small_kernel_contracts_geometrically() {
        let spec = spec_with(memory(0.5));
        let opts = NewtonOptions::default();
        let start = Trajectory::constant(spec.u0(), 10);
        let fp = qvi_fixed_point(&spec, &params(), &opts, &OuterOptions::default(), &start, None).unwrap();
        assert!(fp.converged, "{:?}", fp.residuals);
        assert!(fp.verification <= 2e-8, "{}", fp.verification);
        let r = &fp.residuals;
        assert!(r.len() >= 3);
        let ratios: Vec<f64> = r.windows(2).map(|w| w[1] / w[0]).collect();
        for q in &ratios[..ratios.len() - 1] {
            assert!(*q < 0.5, "{ratios:?}");
        }
    }

    #[test]
    fn s_is_lipschitz_in_phi() {
        let spec = spec_with(memory(0.5));
        let opts = NewtonOptions::default();
        let base = random_phi(&spec, 9);
        let (s0, _) = evaluate_s(&spec, &base, &params(), &opts, None).unwrap();
        let mut ratios = Vec::new();
        for eta in [1e-2, 1e-3] {
            let shifted = Trajectory::from_fields(
                base.fields()
                    .iter()
                    .map(|f| Field::from_fn(spec.grid(), true, |x| f.as_slice()[(x[0] * 16.0).round() as usize] + eta).unwrap())
                    .collect(),
            )
            .unwrap();
            let d_phi = distance(&spec, &shifted, &base).unwrap();
            let (s1, _) = evaluate_s(&spec, &shifted, &params(), &opts, None).unwrap();
            ratios.push(distance(&spec, &s1, &s0).unwrap() / d_phi);
        }
        assert!(ratios.iter().all(|&r| r < 1.0), "{ratios:?}");
        assert!(ratios[1] <= 2.0 * ratios[0] + 1e-6, "{ratios:?}");
    }

    #[test]
    fn more_outer_iterations_do_not_move_the_answer() {
        let spec = spec_with(memory(0.5));
        let schedule = ContinuationSchedule {
            eps: vec![0.2],
            delta: vec![1e-2],
            ..Default::default()
        };
        let opts = NewtonOptions::default();
        let a = qvi_solve(&spec, &schedule, &opts, &OuterOptions::default()).unwrap();
        let b = qvi_solve(
            &spec,
            &schedule,
            &opts,
            &OuterOptions {
                max_iterations: 120,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(distance(&spec, &a.trajectory, &b.trajectory).unwrap() <= 1e-8);
    }

    #[test]
    fn relaxation_is_validated() {
        let bad = OuterOptions {
            relaxation: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
