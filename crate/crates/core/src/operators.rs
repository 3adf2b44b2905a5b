//! Finite-difference realizations of the constraint operator `L` (gradient in
//! 1D/2D, Laplacian in 1D), its discrete adjoint, and the power-law
//! constitutive functions `a`, `A` and `b`.

use serde::{Deserialize, Serialize};

use crate::catalog::ScalarField;
use crate::error::{check_len, Error, Result};
use crate::field::{EdgeField, Field};
use crate::linalg::BandedSpd;
use crate::mesh::{Grid, Point, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    /// Forward differences at the cell midpoints of a 1D grid.
    Gradient1d,
    /// Averaged gradient at the centers of the cells of a 2D grid.
    Gradient2d,
    /// Three-point Laplacian at the interior nodes of a 1D grid.
    Laplacian1d,
}

/// Sparse rows, one per (evaluation point, component).
#[derive(Debug, Clone)]
struct Csr {
    ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn new() -> Self {
        Csr {
            ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    fn push_row(&mut self, entries: &[(usize, f64)]) {
        for &(c, v) in entries {
            self.cols.push(c);
            self.vals.push(v);
        }
        self.ptr.push(self.cols.len());
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.ptr[r], self.ptr[r + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }
}

#[derive(Debug, Clone)]
pub struct LinearOperatorL {
    kind: OperatorKind,
    grid: Grid,
    comps: usize,
    points: Vec<Point>,
    stencil: Csr,
    average: Csr,
    interior: Vec<Option<usize>>,
    bandwidth: usize,
}

impl LinearOperatorL {
    pub fn new(kind: OperatorKind, grid: &Grid) -> Result<Self> {
        let mut stencil = Csr::new();
        let mut average = Csr::new();
        let mut points = Vec::new();
        let comps;
        match kind {
            OperatorKind::Gradient1d | OperatorKind::Laplacian1d if grid.dim() != 1 => {
                return Err(Error::param("operator", format!("{kind:?} needs a 1D grid")));
            }
            OperatorKind::Gradient2d if grid.dim() != 2 => {
                return Err(Error::param("operator", "gradient2d needs a 2D grid"));
            }
            OperatorKind::Gradient1d => {
                comps = 1;
                let n = grid.len();
                let h = grid.spacing()[0];
                for j in 0..n - 1 {
                    points.push([(j as f64 + 0.5) * h, 0.0]);
                    stencil.push_row(&[(j, -1.0 / h), (j + 1, 1.0 / h)]);
                    average.push_row(&[(j, 0.5), (j + 1, 0.5)]);
                }
            }
            OperatorKind::Laplacian1d => {
                comps = 1;
                let n = grid.len();
                let h = grid.spacing()[0];
                let c = 1.0 / (h * h);
                for j in 1..n - 1 {
                    points.push([j as f64 * h, 0.0]);
                    stencil.push_row(&[(j - 1, c), (j, -2.0 * c), (j + 1, c)]);
                    average.push_row(&[(j, 1.0)]);
                }
            }
            OperatorKind::Gradient2d => {
                comps = 2;
                let (nx, ny) = (grid.nodes_per_axis()[0], grid.nodes_per_axis()[1]);
                let (hx, hy) = (grid.spacing()[0], grid.spacing()[1]);
                let (cx, cy) = (0.5 / hx, 0.5 / hy);
                for j in 0..ny - 1 {
                    for i in 0..nx - 1 {
                        let sw = grid.index(i, j);
                        let se = grid.index(i + 1, j);
                        let nw = grid.index(i, j + 1);
                        let ne = grid.index(i + 1, j + 1);
                        points.push([(i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy]);
                        stencil.push_row(&[(sw, -cx), (se, cx), (nw, -cx), (ne, cx)]);
                        stencil.push_row(&[(sw, -cy), (se, -cy), (nw, cy), (ne, cy)]);
                        average.push_row(&[(sw, 0.25), (se, 0.25), (nw, 0.25), (ne, 0.25)]);
                    }
                }
            }
        }
        let interior = grid.interior_numbering();
        let mut bandwidth = 0;
        for r in 0..points.len() * comps {
            let idx: Vec<usize> = stencil.row(r).filter_map(|(c, _)| interior[c]).collect();
            if let (Some(lo), Some(hi)) = (idx.iter().min(), idx.iter().max()) {
                bandwidth = bandwidth.max(hi - lo);
            }
        }
        Ok(LinearOperatorL {
            kind,
            grid: grid.clone(),
            comps,
            points,
            stencil,
            average,
            interior,
            bandwidth,
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Components per evaluation point (`l` in `|Lu|`).
    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn eval_points(&self) -> &[Point] {
        &self.points
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|i| i.is_some()).count()
    }

    pub(crate) fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior[node]
    }

    /// Half-bandwidth of `L^T D L` in the interior numbering.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn apply(&self, u: &Field) -> Result<EdgeField> {
        check_len("apply_L", self.grid.len(), u.len())?;
        let uv = u.as_slice();
        let rows = self.points.len() * self.comps;
        let values = (0..rows)
            .map(|r| self.stencil.row(r).map(|(c, v)| v * uv[c]).sum())
            .collect();
        Ok(EdgeField::from_vec_unchecked(self.comps, values))
    }

    /// Transpose of [`apply`](Self::apply) in the `h^d`-weighted inner products,
    /// restricted to fields vanishing on the boundary.
    pub fn apply_adjoint(&self, q: &EdgeField) -> Result<Field> {
        check_len("apply_L_adjoint components", self.comps, q.comps())?;
        check_len("apply_L_adjoint points", self.points.len(), q.points())?;
        let mut out = vec![0.0; self.grid.len()];
        for (r, &qr) in q.as_slice().iter().enumerate() {
            for (c, v) in self.stencil.row(r) {
                out[c] += v * qr;
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            if self.interior[i].is_none() {
                *o = 0.0;
            }
        }
        Ok(Field::from_vec_unchecked(out))
    }

    /// Interpolates a nodal field to the evaluation points.
    pub fn sample_nodal(&self, u: &[f64]) -> Vec<f64> {
        (0..self.points.len())
            .map(|j| self.average.row(j).map(|(c, w)| w * u[c]).sum())
            .collect()
    }

    /// Averages point values back onto the nodes touching each point; nodes
    /// touched by no point get zero.
    pub fn points_to_nodes(&self, values: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let mut sum = vec![0.0; n];
        let mut count = vec![0usize; n];
        for (j, &v) in values.iter().enumerate() {
            for (c, _) in self.average.row(j) {
                sum[c] += v;
                count[c] += 1;
            }
        }
        sum.iter()
            .zip(&count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }

    /// Adds `L^T D L` to a banded matrix over the interior unknowns, where
    /// `blocks[j]` holds the row-major `comps x comps` matrix `D_j`.
    pub(crate) fn add_weighted_normal(&self, blocks: &[f64], jac: &mut BandedSpd) {
        let m = self.comps;
        let mut local: Vec<(usize, usize, f64)> = Vec::with_capacity(8);
        for j in 0..self.points.len() {
            let d = &blocks[j * m * m..(j + 1) * m * m];
            for a in 0..m {
                for b in 0..m {
                    let dab = d[a * m + b];
                    if dab == 0.0 {
                        continue;
                    }
                    for (ca, va) in self.stencil.row(j * m + a) {
                        let Some(ia) = self.interior[ca] else { continue };
                        for (cb, vb) in self.stencil.row(j * m + b) {
                            let Some(ib) = self.interior[cb] else { continue };
                            if ib <= ia {
                                local.push((ia, ib, va * dab * vb));
                            }
                        }
                    }
                }
            }
            for (ia, ib, v) in local.drain(..) {
                jac.add(ia, ib, v);
            }
        }
    }
}

/// Monotone zero-order term `b(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Reaction {
    Zero,
    Linear { lambda: f64 },
}

impl Reaction {
    pub fn eval(&self, eta: f64) -> f64 {
        match *self {
            Reaction::Zero => 0.0,
            Reaction::Linear { lambda } => lambda * eta,
        }
    }

    pub fn derivative(&self) -> f64 {
        match *self {
            Reaction::Zero => 0.0,
            Reaction::Linear { lambda } => lambda,
        }
    }

    /// Antiderivative `B` with `B(0) = 0`.
    pub fn potential(&self, eta: f64) -> f64 {
        0.5 * self.derivative() * eta * eta
    }
}

/// `a(x, t, xi) = alpha(x, t) (|xi|^2 + mu^2)^{(p-2)/2} xi` together with its
/// potential and a linear `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialLaw {
    pub p: f64,
    pub alpha: ScalarField,
    /// Degeneracy regularization; `None` lets the problem pick `1e-8 g^*`.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default = "zero_reaction")]
    pub reaction: Reaction,
}

fn zero_reaction() -> Reaction {
    Reaction::Zero
}

/// Growth constants of the law, measured on the discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub a_star: f64,
    pub b_star: f64,
}

impl MaterialLaw {
    pub fn power_law(p: f64, alpha: f64) -> Self {
        MaterialLaw {
            p,
            alpha: ScalarField::constant(alpha),
            mu: None,
            reaction: Reaction::Zero,
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = Some(mu);
        self
    }

    pub fn with_reaction(mut self, reaction: Reaction) -> Self {
        self.reaction = reaction;
        self
    }

    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::param("material.p", format!("need 1 < p < inf, got {}", self.p)));
        }
        if let Some(mu) = self.mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::param("material.mu", format!("need mu >= 0, got {mu}")));
            }
        }
        if let Reaction::Linear { lambda } = self.reaction {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::param("material.reaction.lambda", format!("need lambda >= 0, got {lambda}")));
            }
        }
        Ok(())
    }

    /// Checks `alpha >= 0` at every evaluation point and time node.
    pub fn validate_alpha(&self, op: &LinearOperatorL, time: &TimeGrid) -> Result<()> {
        for t in time.times() {
            for &x in op.eval_points() {
                let a = self.alpha.eval(x, t, op.grid());
                if !(a >= 0.0 && a.is_finite()) {
                    return Err(Error::param("material.alpha", format!("alpha must be >= 0, got {a} at {x:?}, t = {t}")));
                }
            }
        }
        Ok(())
    }

    pub fn alpha_at(&self, x: Point, t: f64, grid: &Grid) -> f64 {
        self.alpha.eval(x, t, grid)
    }

    pub fn eval_a(&self, x: Point, t: f64, xi: &[f64], grid: &Grid) -> Vec<f64> {
        let mut out = vec![0.0; xi.len()];
        power_flux(self.alpha_at(x, t, grid), self.p, self.mu(), xi, &mut out);
        out
    }

    pub fn eval_potential(&self, x: Point, t: f64, xi: &[f64], grid: &Grid) -> f64 {
        power_potential(self.alpha_at(x, t, grid), self.p, self.mu(), xi)
    }

    pub fn eval_b(&self, eta: f64) -> f64 {
        self.reaction.eval(eta)
    }

    pub fn growth_constants(&self, op: &LinearOperatorL, time: &TimeGrid) -> GrowthConstants {
        let mut a_star: f64 = 0.0;
        for t in time.times() {
            for &x in op.eval_points() {
                a_star = a_star.max(self.alpha.eval(x, t, op.grid()));
            }
        }
        GrowthConstants {
            a_star,
            b_star: self.reaction.derivative(),
        }
    }
}

/// `out = c (|xi|^2 + mu^2)^{(p-2)/2} xi`.
#[inline]
pub(crate) fn power_flux(c: f64, p: f64, mu: f64, xi: &[f64], out: &mut [f64]) {
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

/// Row-major Jacobian of [`power_flux`] with respect to `xi`.
#[inline]
pub(crate) fn power_flux_jacobian(c: f64, p: f64, mu: f64, xi: &[f64], out: &mut [f64]) {
    let m = xi.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    if c == 0.0 {
        return;
    }
    // the p < 2, mu = 0 singularity at xi = 0 is cut off
    let w = regularized_sq(xi, mu).max(1e-24);
    let s = c * weight(w, p);
    for a in 0..m {
        for b in 0..m {
            let id = if a == b { 1.0 } else { 0.0 };
            out[a * m + b] = s * (id + (p - 2.0) * xi[a] * xi[b] / w);
        }
    }
}

/// `(c / p) ((|xi|^2 + mu^2)^{p/2} - mu^p)`.
#[inline]
pub(crate) fn power_potential(c: f64, p: f64, mu: f64, xi: &[f64]) -> f64 {
    let w = regularized_sq(xi, mu);
    c / p * (w.powf(0.5 * p) - mu.powf(p))
}

#[inline]
pub(crate) fn regularized_sq(xi: &[f64], mu: f64) -> f64 {
    xi.iter().map(|x| x * x).sum::<f64>() + mu * mu
}

/// `w^{(p-2)/2}`, exact `1` for `p = 2`.
#[inline]
pub(crate) fn weight(w: f64, p: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else {
        w.powf(0.5 * (p - 2.0))
    }
}
