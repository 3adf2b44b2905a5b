//! Nodal fields, fields on operator evaluation points, trajectories and the
//! discrete norms used throughout the solvers.
//!
//! Every integral uses the node weight `h^d`, for nodal quantities as well as
//! for quantities living on cell midpoints. Sums run in index order, so
//! reductions are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mesh::{Grid, TimeGrid};

/// Scalar nodal field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field"));
        }
        Ok(Field { values })
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Field { values }
    }

    pub fn zeros(len: usize) -> Self {
        Field {
            values: vec![0.0; len],
        }
    }

    /// Samples `f` at every node; boundary nodes are set to zero when
    /// `dirichlet` is true.
    pub fn from_fn(grid: &Grid, dirichlet: bool, mut f: impl FnMut([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|i| {
                if dirichlet && grid.is_boundary(i) {
                    0.0
                } else {
                    f(grid.coords(i))
                }
            })
            .collect();
        Field::new(values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_dirichlet(&self, grid: &Grid) -> bool {
        self.max_boundary_abs(grid) == 0.0
    }

    pub fn max_boundary_abs(&self, grid: &Grid) -> f64 {
        grid.boundary_nodes()
            .into_iter()
            .map(|i| self.values[i].abs())
            .fold(0.0, f64::max)
    }

    /// `self - other`, nodewise.
    pub fn sub(&self, other: &Field) -> Result<Field> {
        check_len("field difference", self.len(), other.len())?;
        Ok(Field::from_vec_unchecked(
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field::from_vec_unchecked(self.values.iter().map(|v| c * v).collect())
    }

    /// `(1 - theta) * self + theta * other`.
    pub fn lerp(&self, other: &Field, theta: f64) -> Result<Field> {
        check_len("field interpolation", self.len(), other.len())?;
        Ok(Field::from_vec_unchecked(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect(),
        ))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `d`-vector per evaluation point of a linear differential operator, stored
/// point-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeField {
    comps: usize,
    values: Vec<f64>,
}

impl EdgeField {
    pub fn new(comps: usize, values: Vec<f64>) -> Result<Self> {
        if comps == 0 || !values.len().is_multiple_of(comps) {
            return Err(Error::param("edge field", "value count is not a multiple of the component count"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("edge field"));
        }
        Ok(EdgeField { comps, values })
    }

    pub(crate) fn from_vec_unchecked(comps: usize, values: Vec<f64>) -> Self {
        EdgeField { comps, values }
    }

    pub fn zeros(comps: usize, points: usize) -> Self {
        EdgeField {
            comps,
            values: vec![0.0; comps * points],
        }
    }

    /// Scalar edge field (one component per point).
    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        EdgeField::new(1, values)
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn points(&self) -> usize {
        self.values.len() / self.comps
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.values[j * self.comps..(j + 1) * self.comps]
    }

    pub fn magnitude(&self, j: usize) -> f64 {
        euclid(self.point(j))
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.points()).map(|j| self.magnitude(j)).collect()
    }

    /// Weighted inner product `h^d sum_j xi_j . q_j`.
    pub fn inner(&self, other: &EdgeField, grid: &Grid) -> Result<f64> {
        check_len("edge inner product", self.values.len(), other.values.len())?;
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(grid.cell_volume() * s)
    }
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    match v.len() {
        1 => v[0].abs(),
        2 => v[0].hypot(v[1]),
        _ => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

/// Constraint bound `G` at the evaluation points of one time slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintField {
    values: Vec<f64>,
}

impl ConstraintField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("constraint field"));
        }
        if let Some(&v) = values.iter().find(|&&v| v <= 0.0) {
            return Err(Error::param("constraint field", format!("bound must be positive, got {v}")));
        }
        Ok(ConstraintField { values })
    }

    pub fn constant(value: f64, points: usize) -> Result<Self> {
        ConstraintField::new(vec![value; points])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-time-step solver report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub newton_iterations: usize,
    pub final_residual: f64,
    /// `int_Omega k_eps(gap)` at the end of the step.
    pub penalty_mass: f64,
    /// `int_Omega (|Lu| - G)^+` at the end of the step.
    pub violation: f64,
    pub halvings: usize,
    /// Residual norms of the accepted Newton iterates, starting with the
    /// initial guess.
    pub residual_history: Vec<f64>,
}

/// One field per time node plus the diagnostics of every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    fields: Vec<Field>,
    diagnostics: Vec<SolveDiagnostics>,
}

impl Trajectory {
    pub fn new(initial: Field) -> Self {
        Trajectory {
            fields: vec![initial],
            diagnostics: Vec::new(),
        }
    }

    /// Trajectory that stays at `field` for `steps` steps.
    pub fn constant(field: &Field, steps: usize) -> Self {
        Trajectory {
            fields: vec![field.clone(); steps + 1],
            diagnostics: vec![SolveDiagnostics::default(); steps],
        }
    }

    /// Builds a trajectory from raw fields (diagnostics left empty).
    pub fn from_fields(fields: Vec<Field>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::param("trajectory", "needs at least the initial field"));
        }
        let n = fields[0].len();
        for f in &fields {
            check_len("trajectory field", n, f.len())?;
        }
        let steps = fields.len() - 1;
        Ok(Trajectory {
            fields,
            diagnostics: vec![SolveDiagnostics::default(); steps],
        })
    }

    pub(crate) fn from_parts(fields: Vec<Field>, diagnostics: Vec<SolveDiagnostics>) -> Self {
        debug_assert_eq!(fields.len(), diagnostics.len() + 1);
        Trajectory { fields, diagnostics }
    }

    pub fn push(&mut self, field: Field, diagnostics: SolveDiagnostics) {
        self.fields.push(field);
        self.diagnostics.push(diagnostics);
    }

    pub fn steps(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn field(&self, k: usize) -> &Field {
        &self.fields[k]
    }

    pub fn initial(&self) -> &Field {
        &self.fields[0]
    }

    pub fn last(&self) -> &Field {
        self.fields.last().expect("trajectory is never empty")
    }

    pub fn diagnostics(&self) -> &[SolveDiagnostics] {
        &self.diagnostics
    }

    pub fn total_newton_iterations(&self) -> usize {
        self.diagnostics.iter().map(|d| d.newton_iterations).sum()
    }

    pub fn total_halvings(&self) -> usize {
        self.diagnostics.iter().map(|d| d.halvings).sum()
    }
}

/// Discrete `L^2(Omega)` norm `(h^d sum_i v_i^2)^{1/2}`.
pub fn norm_l2(field: &Field, grid: &Grid) -> Result<f64> {
    check_len("norm_l2", grid.len(), field.len())?;
    Ok(inner(field, field, grid)?.sqrt())
}

/// Weighted nodal inner product.
pub fn inner(a: &Field, b: &Field, grid: &Grid) -> Result<f64> {
    check_len("inner product", grid.len(), a.len())?;
    check_len("inner product", grid.len(), b.len())?;
    let s: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(grid.cell_volume() * s)
}

/// `(dt h^d sum_{k,j} |xi_{k,j}|^p)^{1/p}` over the supplied time slices.
pub fn norm_lp_spacetime(slices: &[EdgeField], p: f64, grid: &Grid, dt: f64) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::param("p", format!("need 1 < p < inf, got {p}")));
    }
    let mut s = 0.0;
    for slice in slices {
        for j in 0..slice.points() {
            s += slice.magnitude(j).powf(p);
        }
    }
    Ok((dt * grid.cell_volume() * s).powf(1.0 / p))
}

/// `h^d sum_j max(|xi_j| - g_j, 0)`.
pub fn violation_positive_part(lu: &EdgeField, g: &ConstraintField, grid: &Grid) -> Result<f64> {
    check_len("violation", g.len(), lu.points())?;
    let s: f64 = (0..lu.points())
        .map(|j| (lu.magnitude(j) - g.values[j]).max(0.0))
        .sum();
    Ok(grid.cell_volume() * s)
}

/// Discrete `L^2(0,T; L^2(Omega))` distance of two trajectories, using the
/// time nodes `1..=steps` (implicit Euler values on each interval).
pub fn spacetime_l2_distance(a: &[Field], b: &[Field], grid: &Grid, time: &TimeGrid) -> Result<f64> {
    check_len("trajectory distance", a.len(), b.len())?;
    let mut s = 0.0;
    for (fa, fb) in a.iter().zip(b).skip(1) {
        let d = fa.sub(fb)?;
        s += inner(&d, &d, grid)?;
    }
    Ok((time.dt() * s).sqrt())
}

/// `max_k ||a_k - b_k||_{L^2}`.
pub fn linf_l2_distance(a: &[Field], b: &[Field], grid: &Grid) -> Result<f64> {
    check_len("trajectory distance", a.len(), b.len())?;
    let mut m: f64 = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        m = m.max(norm_l2(&fa.sub(fb)?, grid)?);
    }
    Ok(m)
}
