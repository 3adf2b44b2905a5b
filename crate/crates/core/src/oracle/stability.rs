//! Two-solve continuous-dependence measurement for prescribed bounds.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::field::{inner, norm_l2, norm_lp_spacetime, Field, Trajectory};
use crate::problem::ProblemSpec;
use crate::stepper::{continuation_solve, ContinuationSchedule, NewtonOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `max_k ||w1(t_k) - w2(t_k)||^2`.
    pub lhs: f64,
    /// `||f1 - f2||^2_{L^2(Q_T)}`.
    pub source_term: f64,
    /// `||u0_1 - u0_2||^2`.
    pub initial_term: f64,
    /// `||g1 - g2||_{L^1(0,T; L^inf)}`.
    pub bound_term: f64,
    pub rhs: f64,
    /// `lhs / rhs`; zero when both vanish.
    pub ratio: f64,
    /// `e^T`.
    pub gronwall: f64,
    /// `||L(w1 - w2)||_{L^p(Q_T)}^{max(2, p)}`, reported for `p >= 2`.
    pub vp_term: Option<f64>,
}

/// Solves both problems with the same schedule and compares the distance of
/// the solutions with the distance of the data.
pub fn stability_experiment(
    spec1: &ProblemSpec,
    spec2: &ProblemSpec,
    schedule: &ContinuationSchedule,
    opts: &NewtonOptions,
) -> Result<StabilityReport> {
    if spec1.grid() != spec2.grid() || spec1.time() != spec2.time() || spec1.operator().kind() != spec2.operator().kind() {
        return Err(Error::param("stability", "both problems must share grid, time grid and operator"));
    }
    if !spec1.constraint().is_given() || !spec2.constraint().is_given() {
        return Err(Error::Unsupported("stability harness needs prescribed bounds".into()));
    }
    let solve = |spec: &ProblemSpec| -> Result<(Trajectory, Vec<crate::field::ConstraintField>)> {
        let phi = Trajectory::constant(spec.u0(), spec.time().steps());
        let g = spec.constraint().fields_along(phi.fields())?.fields;
        let (traj, _) = continuation_solve(spec, &g, schedule, opts)?;
        Ok((traj, g))
    };
    let (w1, g1) = solve(spec1)?;
    let (w2, g2) = solve(spec2)?;
    let grid = spec1.grid();
    let time = spec1.time();
    let dt = time.dt();

    let mut lhs: f64 = 0.0;
    for (a, b) in w1.fields().iter().zip(w2.fields()) {
        lhs = lhs.max(norm_l2(&a.sub(b)?, grid)?.powi(2));
    }
    let mut source_term = 0.0;
    let mut bound_term = 0.0;
    for k in 1..=time.steps() {
        let t = time.time(k);
        let df = Field::new(
            spec1
                .source_at(t)
                .iter()
                .zip(spec2.source_at(t))
                .map(|(a, b)| a - b)
                .collect(),
        )?;
        source_term += dt * inner(&df, &df, grid)?;
        check_len("stability bounds", g1[k].len(), g2[k].len())?;
        let dg = g1[k]
            .as_slice()
            .iter()
            .zip(g2[k].as_slice())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        bound_term += dt * dg;
    }
    let initial_term = norm_l2(&spec1.u0().sub(spec2.u0())?, grid)?.powi(2);
    let rhs = source_term + initial_term + bound_term;
    let ratio = if lhs == 0.0 {
        0.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    };
    let p = spec1.law().p;
    let vp_term = if p >= 2.0 {
        let diffs = w1
            .fields()
            .iter()
            .zip(w2.fields())
            .skip(1)
            .map(|(a, b)| spec1.operator().apply(&a.sub(b)?))
            .collect::<Result<Vec<_>>>()?;
        Some(norm_lp_spacetime(&diffs, p, grid, dt)?.powf(p.max(2.0)))
    } else {
        None
    };
    Ok(StabilityReport {
        lhs,
        source_term,
        initial_term,
        bound_term,
        rhs,
        ratio,
        gronwall: time.final_time().exp(),
        vp_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ScalarField;
    use crate::constraints::ConstraintSpec;
    use crate::mesh::{Grid, TimeGrid};
    use crate::operators::{MaterialLaw, OperatorKind};

    fn spec(f: f64) -> ProblemSpec {
        ProblemSpec::new(
            Grid::new_1d(1.0, 17).unwrap(),
            TimeGrid::new(0.5, 10).unwrap(),
            OperatorKind::Gradient1d,
            MaterialLaw::power_law(2.0, 1.0),
            ConstraintSpec::constant(1.0),
            ScalarField::constant(f),
            Field::zeros(17),
        )
        .unwrap()
    }

    fn schedule() -> ContinuationSchedule {
        ContinuationSchedule {
            eps: vec![0.2, 0.1],
            delta: vec![1e-3],
            ..Default::default()
        }
    }

    #[test]
    fn identical_problems_have_zero_distance() {
        let s = spec(5.0);
        let r = stability_experiment(&s, &s, &schedule(), &NewtonOptions::default()).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.ratio, 0.0);
    }

    #[test]
    fn source_perturbation_stays_below_gronwall_envelope() {
        let a = spec(2.0);
        let b = spec(2.1);
        let r = stability_experiment(&a, &b, &schedule(), &NewtonOptions::default()).unwrap();
        assert!(r.lhs > 0.0);
        assert!(r.ratio <= r.gronwall, "{r:?}");
        assert!(r.vp_term.unwrap() > 0.0);
    }

    #[test]
    fn mismatched_problems_are_rejected() {
        let a = spec(1.0);
        let b = a.with_time(TimeGrid::new(0.5, 5).unwrap()).unwrap();
        assert!(stability_experiment(&a, &b, &schedule(), &NewtonOptions::default()).is_err());
    }
}
