//! Validated problem data: grids, law, constraint, source and initial datum.

use crate::catalog::ScalarField;
use crate::constraints::{ConstraintOperator, ConstraintSpec};
use crate::error::{check_len, Error, Result};
use crate::field::{Field, Trajectory};
use crate::mesh::{Grid, TimeGrid};
use crate::operators::{LinearOperatorL, MaterialLaw, OperatorKind};

/// Slack allowed when checking `|Lu0| <= G[u0](., 0)`.
pub const FEASIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    grid: Grid,
    time: TimeGrid,
    op: LinearOperatorL,
    law: MaterialLaw,
    constraint: ConstraintOperator,
    source: ScalarField,
    u0: Field,
}

impl ProblemSpec {
    /// Validates the data. An unset `mu` defaults to `1e-8 g^*`.
    pub fn new(
        grid: Grid,
        time: TimeGrid,
        operator: OperatorKind,
        mut law: MaterialLaw,
        constraint: ConstraintSpec,
        source: ScalarField,
        u0: Field,
    ) -> Result<Self> {
        law.validate()?;
        let op = LinearOperatorL::new(operator, &grid)?;
        law.validate_alpha(&op, &time)?;
        check_len("initial datum", grid.len(), u0.len())?;
        let max_boundary = u0.max_boundary_abs(&grid);
        if max_boundary != 0.0 {
            return Err(Error::NotDirichlet { max_boundary });
        }
        for t in time.times() {
            for i in 0..grid.len() {
                if !source.eval(grid.coords(i), t, &grid).is_finite() {
                    return Err(Error::NonFinite("source"));
                }
            }
        }
        let constraint = ConstraintOperator::new(constraint, &op, &time)?;
        if law.mu.is_none() {
            law.mu = Some(1e-8 * constraint.bounds().1);
        }
        let spec = ProblemSpec {
            grid,
            time,
            op,
            law,
            constraint,
            source,
            u0,
        };
        spec.check_initial_feasibility()?;
        Ok(spec)
    }

    fn check_initial_feasibility(&self) -> Result<()> {
        let phi = Trajectory::constant(&self.u0, self.time.steps());
        let g0 = &self.constraint.fields_along(phi.fields())?.fields[0];
        let lu = self.op.apply(&self.u0)?;
        let excess = (0..lu.points())
            .map(|j| lu.magnitude(j) - g0.as_slice()[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if excess > FEASIBILITY_TOL {
            return Err(Error::Infeasible { excess });
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn operator(&self) -> &LinearOperatorL {
        &self.op
    }

    pub fn law(&self) -> &MaterialLaw {
        &self.law
    }

    pub fn constraint(&self) -> &ConstraintOperator {
        &self.constraint
    }

    pub fn source(&self) -> &ScalarField {
        &self.source
    }

    pub fn u0(&self) -> &Field {
        &self.u0
    }

    /// `f(., t)` at the nodes.
    pub fn source_at(&self, t: f64) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| self.source.eval(self.grid.coords(i), t, &self.grid))
            .collect()
    }

    /// `alpha(., t)` at the evaluation points of `L`.
    pub fn alpha_at(&self, t: f64) -> Vec<f64> {
        self.op
            .eval_points()
            .iter()
            .map(|&x| self.law.alpha_at(x, t, &self.grid))
            .collect()
    }

    pub fn with_source(&self, source: ScalarField) -> Result<Self> {
        self.rebuild(|parts| parts.source = source)
    }

    pub fn with_initial(&self, u0: Field) -> Result<Self> {
        self.rebuild(|parts| parts.u0 = u0)
    }

    pub fn with_constraint(&self, constraint: ConstraintSpec) -> Result<Self> {
        self.rebuild(|parts| parts.constraint = constraint)
    }

    pub fn with_time(&self, time: TimeGrid) -> Result<Self> {
        self.rebuild(|parts| parts.time = time)
    }

    fn rebuild(&self, edit: impl FnOnce(&mut Parts)) -> Result<Self> {
        let mut parts = Parts {
            time: self.time,
            law: self.law.clone(),
            constraint: self.constraint.spec().clone(),
            source: self.source.clone(),
            u0: self.u0.clone(),
        };
        edit(&mut parts);
        ProblemSpec::new(
            self.grid.clone(),
            parts.time,
            self.op.kind(),
            parts.law,
            parts.constraint,
            parts.source,
            parts.u0,
        )
    }
}

struct Parts {
    time: TimeGrid,
    law: MaterialLaw,
    constraint: ConstraintSpec,
    source: ScalarField,
    u0: Field,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(u0: Field) -> Result<ProblemSpec> {
        let grid = Grid::new_1d(1.0, 11).unwrap();
        ProblemSpec::new(
            grid,
            TimeGrid::new(1.0, 5).unwrap(),
            OperatorKind::Gradient1d,
            MaterialLaw::power_law(2.0, 1.0),
            ConstraintSpec::constant(1.0),
            ScalarField::constant(1.0),
            u0,
        )
    }

    #[test]
    fn defaults_mu_from_upper_bound() {
        let spec = base(Field::zeros(11)).unwrap();
        assert_eq!(spec.law().mu, Some(1e-8));
    }

    #[test]
    fn rejects_non_dirichlet_initial_datum() {
        let mut v = vec![0.0; 11];
        v[0] = 0.1;
        assert!(matches!(base(Field::new(v).unwrap()), Err(Error::NotDirichlet { .. })));
    }

    #[test]
    fn rejects_infeasible_initial_datum() {
        let grid = Grid::new_1d(1.0, 11).unwrap();
        let steep = Field::from_fn(&grid, true, |x| 2.0 * x[0].min(1.0 - x[0])).unwrap();
        assert!(matches!(base(steep), Err(Error::Infeasible { .. })));
        let pile = Field::from_fn(&grid, true, |x| x[0].min(1.0 - x[0])).unwrap();
        assert!(base(pile).is_ok());
    }

    #[test]
    fn rejects_bad_exponent() {
        let grid = Grid::new_1d(1.0, 5).unwrap();
        let err = ProblemSpec::new(
            grid,
            TimeGrid::new(1.0, 5).unwrap(),
            OperatorKind::Gradient1d,
            MaterialLaw::power_law(0.5, 1.0),
            ConstraintSpec::constant(1.0),
            ScalarField::constant(1.0),
            Field::zeros(5),
        )
        .unwrap_err();
        assert!(err.to_string().contains("material.p"));
    }
}
