//! Constraint operators `G[v]`: a prescribed bound `g(x, t)`, a bound driven
//! by a memory integral of `v`, and a bound driven by a heat equation with a
//! `v`-dependent source. Every produced field is clamped into `[g_*, g^*]`.

use serde::{Deserialize, Serialize};

use crate::catalog::ScalarField;
use crate::error::{check_len, Error, Result};
use crate::field::{ConstraintField, EdgeField, Field};
use crate::linalg::{BandedCholesky, BandedSpd};
use crate::mesh::{Grid, Point, TimeGrid};
use crate::operators::LinearOperatorL;

/// Kernel `K(t, s)` of the memory integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Kernel {
    Constant { value: f64 },
    /// `amplitude e^{-rate (t - s)}`
    Exponential { amplitude: f64, rate: f64 },
}

impl Kernel {
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        match *self {
            Kernel::Constant { value } => value,
            Kernel::Exponential { amplitude, rate } => amplitude * (-rate * (t - s)).exp(),
        }
    }

    /// `sup |K|` over `0 <= s <= t <= T`.
    pub fn sup(&self, final_time: f64) -> f64 {
        match *self {
            Kernel::Constant { value } => value.abs(),
            Kernel::Exponential { amplitude, rate } => {
                amplitude.abs() * if rate >= 0.0 { 1.0 } else { (-rate * final_time).exp() }
            }
        }
    }
}

/// `g(x, t, zeta) = base(x, t) + linear zeta + quadratic zeta^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Composition {
    pub base: ScalarField,
    #[serde(default)]
    pub linear: f64,
    #[serde(default)]
    pub quadratic: f64,
}

impl Composition {
    pub fn affine(base: f64, linear: f64) -> Self {
        Composition {
            base: ScalarField::constant(base),
            linear,
            quadratic: 0.0,
        }
    }

    pub fn eval(&self, x: Point, t: f64, zeta: f64, grid: &Grid) -> f64 {
        self.base.eval(x, t, grid) + self.linear * zeta + self.quadratic * zeta * zeta
    }
}

/// Serializable description of a constraint operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintSpec {
    /// Bound independent of the solution. Without explicit bounds the sampled
    /// range is used.
    Given {
        g: ScalarField,
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default)]
        upper: Option<f64>,
    },
    /// `G[v] = g(x, t, int_0^t v(x, s) K(t, s) ds)`.
    MemoryKernel {
        kernel: Kernel,
        composition: Composition,
        lower: f64,
        upper: f64,
    },
    /// `G[v] = g(x, t, zeta)` with `zeta_t - kappa Lap zeta = phi0 + psi v + eta |Lv|`.
    CoupledHeat {
        diffusivity: f64,
        #[serde(default = "zero_field")]
        source: ScalarField,
        #[serde(default)]
        psi: f64,
        #[serde(default)]
        eta: f64,
        #[serde(default = "zero_field")]
        initial: ScalarField,
        composition: Composition,
        lower: f64,
        upper: f64,
    },
}

fn zero_field() -> ScalarField {
    ScalarField::constant(0.0)
}

impl ConstraintSpec {
    pub fn constant(g: f64) -> Self {
        ConstraintSpec::Given {
            g: ScalarField::constant(g),
            lower: None,
            upper: None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ConstraintSpec::Given { .. } => "given",
            ConstraintSpec::MemoryKernel { .. } => "memory-kernel",
            ConstraintSpec::CoupledHeat { .. } => "coupled-heat",
        }
    }
}

/// Temperature-like auxiliary field of the heat coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub zeta: Field,
    pub time: f64,
}

/// Constraint fields along a trajectory, one per time node.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintHistory {
    pub fields: Vec<ConstraintField>,
    /// Evaluation points where the composition left `[g_*, g^*]`.
    pub clamp_events: usize,
    /// Auxiliary field per time node (heat coupling only).
    pub zeta: Option<Vec<Field>>,
}

#[derive(Debug, Clone)]
pub struct ConstraintOperator {
    spec: ConstraintSpec,
    op: LinearOperatorL,
    time: TimeGrid,
    lower: f64,
    upper: f64,
    heat: Option<(f64, BandedCholesky)>,
}

impl ConstraintOperator {
    pub fn new(spec: ConstraintSpec, op: &LinearOperatorL, time: &TimeGrid) -> Result<Self> {
        let (lower, upper) = match &spec {
            ConstraintSpec::Given { g, lower, upper } => {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for t in time.times() {
                    for &x in op.eval_points() {
                        let v = g.eval(x, t, op.grid());
                        if !v.is_finite() {
                            return Err(Error::NonFinite("constraint g"));
                        }
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                let l = lower.unwrap_or(lo);
                let u = upper.unwrap_or(hi);
                check_bounds(l, u)?;
                for t in time.times() {
                    for &x in op.eval_points() {
                        let v = g.eval(x, t, op.grid());
                        if v < l || v > u {
                            return Err(Error::ConstraintBounds {
                                value: v,
                                time: t,
                                lower: l,
                                upper: u,
                            });
                        }
                    }
                }
                (l, u)
            }
            ConstraintSpec::MemoryKernel { lower, upper, kernel, .. } => {
                check_bounds(*lower, *upper)?;
                if !kernel.sup(time.final_time()).is_finite() {
                    return Err(Error::param("constraint.kernel", "kernel must be bounded on [0, T]^2"));
                }
                (*lower, *upper)
            }
            ConstraintSpec::CoupledHeat {
                diffusivity,
                lower,
                upper,
                ..
            } => {
                check_bounds(*lower, *upper)?;
                if !(*diffusivity > 0.0 && diffusivity.is_finite()) {
                    return Err(Error::param("constraint.diffusivity", format!("need > 0, got {diffusivity}")));
                }
                (*lower, *upper)
            }
        };
        let mut out = ConstraintOperator {
            spec,
            op: op.clone(),
            time: *time,
            lower,
            upper,
            heat: None,
        };
        if let ConstraintSpec::CoupledHeat { diffusivity, .. } = out.spec {
            let dt = time.dt();
            out.heat = Some((dt, heat_matrix(op.grid(), diffusivity, dt).factor()?));
        }
        Ok(out)
    }

    pub fn spec(&self) -> &ConstraintSpec {
        &self.spec
    }

    pub fn is_given(&self) -> bool {
        matches!(self.spec, ConstraintSpec::Given { .. })
    }

    /// `(g_*, g^*)`.
    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    fn clamp(&self, v: f64, clamps: &mut usize) -> f64 {
        if v < self.lower {
            *clamps += 1;
            self.lower
        } else if v > self.upper {
            *clamps += 1;
            self.upper
        } else {
            v
        }
    }

    fn finish(&self, values: Vec<f64>) -> ConstraintField {
        debug_assert!(values.iter().all(|&v| v >= self.lower && v <= self.upper));
        ConstraintField::new(values).expect("clamped bounds are positive")
    }

    /// Samples the prescribed bound at time `t`.
    pub fn eval_given(&self, t: f64) -> Result<ConstraintField> {
        let ConstraintSpec::Given { g, .. } = &self.spec else {
            return Err(Error::Unsupported(format!("eval_given on a {} operator", self.spec.kind_name())));
        };
        let mut values = Vec::with_capacity(self.op.point_count());
        for &x in self.op.eval_points() {
            let v = g.eval(x, t, self.op.grid());
            if !(v >= self.lower && v <= self.upper) {
                return Err(Error::ConstraintBounds {
                    value: v,
                    time: t,
                    lower: self.lower,
                    upper: self.upper,
                });
            }
            values.push(v);
        }
        Ok(self.finish(values))
    }

    /// Nodal memory integral at node `k`, trapezoid rule over `history[0..=k]`.
    pub fn memory_integral(&self, kernel: &Kernel, history: &[Field], k: usize) -> Result<Vec<f64>> {
        let n = self.op.grid().len();
        let t = self.time.time(k);
        if history.len() <= k {
            if history.is_empty() && t > 0.0 {
                return Err(Error::EmptyHistory(t));
            }
            check_len("memory history", k + 1, history.len())?;
        }
        let mut zeta = vec![0.0; n];
        if k == 0 {
            return Ok(zeta);
        }
        let dt = self.time.dt();
        for (i, v) in history[..=k].iter().enumerate() {
            check_len("memory history field", n, v.len())?;
            let w = if i == 0 || i == k { 0.5 * dt } else { dt };
            let c = w * kernel.eval(t, self.time.time(i));
            for (z, &vi) in zeta.iter_mut().zip(v.as_slice()) {
                *z += c * vi;
            }
        }
        Ok(zeta)
    }

    /// `clamp(g(x, t_k, zeta(v)(x, t_k)))` at the evaluation points.
    pub fn eval_memory_kernel(&self, history: &[Field], k: usize) -> Result<(ConstraintField, usize)> {
        let ConstraintSpec::MemoryKernel {
            kernel, composition, ..
        } = &self.spec
        else {
            return Err(Error::Unsupported(format!(
                "eval_memory_kernel on a {} operator",
                self.spec.kind_name()
            )));
        };
        let zeta = self.memory_integral(kernel, history, k)?;
        Ok(self.compose(composition, &zeta, self.time.time(k)))
    }

    fn compose(&self, composition: &Composition, zeta_nodes: &[f64], t: f64) -> (ConstraintField, usize) {
        let zeta = self.op.sample_nodal(zeta_nodes);
        let mut clamps = 0;
        let values = self
            .op
            .eval_points()
            .iter()
            .zip(&zeta)
            .map(|(&x, &z)| self.clamp(composition.eval(x, t, z, self.op.grid()), &mut clamps))
            .collect();
        (self.finish(values), clamps)
    }

    /// Initial auxiliary state `zeta_0` (zero on the boundary).
    pub fn initial_state(&self) -> Result<CoupledState> {
        let ConstraintSpec::CoupledHeat { initial, .. } = &self.spec else {
            return Err(Error::Unsupported(format!("initial_state on a {} operator", self.spec.kind_name())));
        };
        let grid = self.op.grid();
        let zeta = Field::from_fn(grid, true, |x| initial.eval(x, 0.0, grid))?;
        Ok(CoupledState { zeta, time: 0.0 })
    }

    /// One implicit Euler step of the auxiliary heat equation, source taken
    /// at the start of the step.
    pub fn step_coupled_heat(&self, state: &CoupledState, v_k: &Field, lu_k: &EdgeField, dt: f64) -> Result<CoupledState> {
        let ConstraintSpec::CoupledHeat {
            diffusivity,
            source,
            psi,
            eta,
            ..
        } = &self.spec
        else {
            return Err(Error::Unsupported(format!(
                "step_coupled_heat on a {} operator",
                self.spec.kind_name()
            )));
        };
        if !(dt > 0.0) {
            return Err(Error::param("dt", format!("need dt > 0, got {dt}")));
        }
        let grid = self.op.grid();
        check_len("coupled state", grid.len(), state.zeta.len())?;
        check_len("coupled v", grid.len(), v_k.len())?;
        check_len("coupled Lv", self.op.point_count(), lu_k.points())?;
        let mag = self.op.points_to_nodes(&lu_k.magnitudes());
        let t = state.time;
        let mut rhs = Vec::with_capacity(self.op.interior_count());
        for i in 0..grid.len() {
            if self.op.interior_index(i).is_none() {
                continue;
            }
            let phi = source.eval(grid.coords(i), t, grid) + psi * v_k.as_slice()[i] + eta * mag[i];
            rhs.push(state.zeta.as_slice()[i] / dt + phi);
        }
        let fresh;
        let chol = match &self.heat {
            Some((cached, chol)) if *cached == dt => chol,
            _ => {
                fresh = heat_matrix(grid, *diffusivity, dt).factor()?;
                &fresh
            }
        };
        let sol = chol.solve(&rhs);
        let mut zeta = vec![0.0; grid.len()];
        for (i, z) in zeta.iter_mut().enumerate() {
            if let Some(r) = self.op.interior_index(i) {
                *z = sol[r];
            }
        }
        Ok(CoupledState {
            zeta: Field::new(zeta)?,
            time: t + dt,
        })
    }

    /// `clamp(g(x, t, zeta))` at the evaluation points.
    pub fn eval_coupled(&self, state: &CoupledState, t: f64) -> Result<(ConstraintField, usize)> {
        let ConstraintSpec::CoupledHeat { composition, .. } = &self.spec else {
            return Err(Error::Unsupported(format!("eval_coupled on a {} operator", self.spec.kind_name())));
        };
        Ok(self.compose(composition, state.zeta.as_slice(), t))
    }

    /// Constraint fields at every time node along `phi`. The field at node
    /// `k` only reads `phi[0..=k]`.
    pub fn fields_along(&self, phi: &[Field]) -> Result<ConstraintHistory> {
        let steps = self.time.steps();
        check_len("constraint trajectory", steps + 1, phi.len())?;
        let mut fields = Vec::with_capacity(steps + 1);
        let mut clamp_events = 0;
        let mut zeta_hist = None;
        match &self.spec {
            ConstraintSpec::Given { .. } => {
                for k in 0..=steps {
                    fields.push(self.eval_given(self.time.time(k))?);
                }
            }
            ConstraintSpec::MemoryKernel { .. } => {
                for k in 0..=steps {
                    let (g, c) = self.eval_memory_kernel(&phi[..=k], k)?;
                    clamp_events += c;
                    fields.push(g);
                }
            }
            ConstraintSpec::CoupledHeat { .. } => {
                let mut state = self.initial_state()?;
                let mut zs = Vec::with_capacity(steps + 1);
                for k in 0..=steps {
                    let t = self.time.time(k);
                    state.time = t;
                    let (g, c) = self.eval_coupled(&state, t)?;
                    clamp_events += c;
                    fields.push(g);
                    zs.push(state.zeta.clone());
                    if k < steps {
                        let lu = self.op.apply(&phi[k])?;
                        state = self.step_coupled_heat(&state, &phi[k], &lu, self.time.dt())?;
                    }
                }
                zeta_hist = Some(zs);
            }
        }
        Ok(ConstraintHistory {
            fields,
            clamp_events,
            zeta: zeta_hist,
        })
    }
}

fn check_bounds(lower: f64, upper: f64) -> Result<()> {
    if !(lower > 0.0 && lower.is_finite()) {
        return Err(Error::param("constraint.lower", format!("need g_* > 0, got {lower}")));
    }
    if !(upper >= lower && upper.is_finite()) {
        return Err(Error::param("constraint.upper", format!("need g^* >= g_* = {lower}, got {upper}")));
    }
    Ok(())
}

/// `I / dt - kappa Lap_h` over the interior nodes (3-point or 5-point stencil).
fn heat_matrix(grid: &Grid, kappa: f64, dt: f64) -> BandedSpd {
    let numbering = grid.interior_numbering();
    let n = numbering.iter().flatten().count();
    let nx = grid.nodes_per_axis()[0];
    let bw = if grid.dim() == 1 { 1 } else { nx - 2 };
    let mut m = BandedSpd::zeros(n, bw);
    for i in 0..grid.len() {
        let Some(r) = numbering[i] else { continue };
        let (ix, iy) = grid.multi_index(i);
        let mut diag = 1.0 / dt;
        for axis in 0..grid.dim() {
            let h = grid.spacing()[axis];
            let c = kappa / (h * h);
            diag += 2.0 * c;
            // lower neighbour only, each pair is added once
            let nb = if axis == 0 {
                grid.index(ix - 1, iy)
            } else {
                grid.index(ix, iy - 1)
            };
            if let Some(s) = numbering[nb] {
                m.add(r, s, -c);
            }
        }
        m.add(r, r, diag);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::OperatorKind;
    use crate::field::norm_l2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grad1d(n: usize) -> LinearOperatorL {
        LinearOperatorL::new(OperatorKind::Gradient1d, &Grid::new_1d(1.0, n).unwrap()).unwrap()
    }

    fn memory(kernel: Kernel, composition: Composition, time: &TimeGrid, op: &LinearOperatorL) -> ConstraintOperator {
        let spec = ConstraintSpec::MemoryKernel {
            kernel,
            composition,
            lower: 0.5,
            upper: 3.0,
        };
        ConstraintOperator::new(spec, op, time).unwrap()
    }

    #[test]
    fn given_samples_at_evaluation_points() {
        let op = grad1d(5);
        let time = TimeGrid::new(1.0, 4).unwrap();
        let c = ConstraintOperator::new(ConstraintSpec::constant(1.0), &op, &time).unwrap();
        assert!(c.eval_given(0.3).unwrap().as_slice().iter().all(|&v| v == 1.0));

        let spec = ConstraintSpec::Given {
            g: ScalarField::Affine {
                base: 1.0,
                x_slope: 0.0,
                y_slope: 0.0,
                t_slope: 1.0,
            },
            lower: None,
            upper: None,
        };
        let c = ConstraintOperator::new(spec, &op, &time).unwrap();
        assert!(c.eval_given(0.5).unwrap().as_slice().iter().all(|&v| (v - 1.5).abs() < 1e-15));

        let spec = ConstraintSpec::Given {
            g: ScalarField::Affine {
                base: 1.0,
                x_slope: 1.0,
                y_slope: 0.0,
                t_slope: 0.0,
            },
            lower: None,
            upper: None,
        };
        let op3 = grad1d(3);
        let c = ConstraintOperator::new(spec, &op3, &time).unwrap();
        assert_eq!(op3.eval_points()[0][0], 0.25);
        assert_eq!(c.eval_given(0.0).unwrap().as_slice()[0], 1.25);
    }

    #[test]
    fn given_out_of_bounds_is_rejected() {
        let op = grad1d(5);
        let time = TimeGrid::new(1.0, 4).unwrap();
        let spec = ConstraintSpec::Given {
            g: ScalarField::constant(2.0),
            lower: Some(0.5),
            upper: Some(1.5),
        };
        assert!(matches!(
            ConstraintOperator::new(spec, &op, &time),
            Err(Error::ConstraintBounds { .. })
        ));
        assert!(ConstraintOperator::new(ConstraintSpec::constant(0.0), &op, &time).is_err());
    }

    #[test]
    fn memory_kernel_zero_cases() {
        let op = grad1d(9);
        let time = TimeGrid::new(1.0, 10).unwrap();
        let comp = Composition::affine(1.0, 1.0);
        let n = op.grid().len();
        let zero_hist = vec![Field::zeros(n); 11];
        let c = memory(Kernel::Constant { value: 1.0 }, comp.clone(), &time, &op);
        let (g, clamps) = c.eval_memory_kernel(&zero_hist, 10).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 1.0));
        assert_eq!(clamps, 0);

        let ones = vec![Field::new(vec![1.0; n]).unwrap(); 11];
        let c0 = memory(Kernel::Constant { value: 0.0 }, comp, &time, &op);
        let (g, _) = c0.eval_memory_kernel(&ones, 10).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 1.0));
        assert!(matches!(c0.eval_memory_kernel(&[], 3), Err(Error::EmptyHistory(_))));
    }

    #[test]
    fn memory_kernel_integral_of_ones() {
        let op = grad1d(9);
        let time = TimeGrid::new(1.0, 1000).unwrap();
        let n = op.grid().len();
        let ones = vec![Field::new(vec![1.0; n]).unwrap(); 1001];
        let c = memory(Kernel::Constant { value: 1.0 }, Composition::affine(1.0, 1.0), &time, &op);
        let (g, _) = c.eval_memory_kernel(&ones, 1000).unwrap();
        for &v in g.as_slice() {
            assert!((v - 2.0).abs() < 1e-12);
        }
        // independent quadrature of int_0^1 s e^{-(1-s)} ds = e^{-1}
        let spec_k = Kernel::Exponential {
            amplitude: 1.0,
            rate: 1.0,
        };
        let ramp: Vec<Field> = (0..=1000)
            .map(|k| Field::new(vec![time.time(k); n]).unwrap())
            .collect();
        let z = c.memory_integral(&spec_k, &ramp, 1000).unwrap();
        let oracle = (-1f64).exp();
        assert!((z[3] - oracle).abs() < 1e-6);
    }

    #[test]
    fn memory_kernel_clamps_and_counts() {
        let op = grad1d(5);
        let time = TimeGrid::new(1.0, 4).unwrap();
        let n = op.grid().len();
        let big = vec![Field::new(vec![10.0; n]).unwrap(); 5];
        let c = memory(Kernel::Constant { value: 1.0 }, Composition::affine(1.0, 1.0), &time, &op);
        let (g, clamps) = c.eval_memory_kernel(&big, 4).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 3.0));
        assert_eq!(clamps, op.point_count());
    }

    #[test]
    fn memory_kernel_is_lipschitz_in_history() {
        let op = grad1d(11);
        let time = TimeGrid::new(1.0, 20).unwrap();
        let n = op.grid().len();
        let kernel = Kernel::Exponential {
            amplitude: 0.8,
            rate: 2.0,
        };
        let comp = Composition::affine(1.2, 0.5);
        let c = memory(kernel.clone(), comp, &time, &op);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hist: Vec<Field> = (0..=20)
            .map(|_| Field::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap())
            .collect();
        let bound = 0.5 * kernel.sup(1.0) * 1.0;
        for scale in [1e-2, 1e-3, 1e-4] {
            let pert: Vec<Field> = hist
                .iter()
                .map(|f| Field::new(f.as_slice().iter().map(|v| v + scale).collect()).unwrap())
                .collect();
            for k in [5, 20] {
                let (a, _) = c.eval_memory_kernel(&hist, k).unwrap();
                let (b, _) = c.eval_memory_kernel(&pert, k).unwrap();
                let d = a
                    .as_slice()
                    .iter()
                    .zip(b.as_slice())
                    .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                assert!(d <= bound * scale * (1.0 + 1e-9), "{d} vs {}", bound * scale);
            }
        }
    }

    fn heat_op(n: usize, time: &TimeGrid, initial: ScalarField, source: ScalarField) -> (LinearOperatorL, ConstraintOperator) {
        let op = grad1d(n);
        let spec = ConstraintSpec::CoupledHeat {
            diffusivity: 1.0,
            source,
            psi: 0.0,
            eta: 0.0,
            initial,
            composition: Composition::affine(1.0, 1.0),
            lower: 0.5,
            upper: 3.0,
        };
        let c = ConstraintOperator::new(spec, &op, time).unwrap();
        (op, c)
    }

    #[test]
    fn coupled_heat_zero_data_stays_zero() {
        let time = TimeGrid::new(1.0, 10).unwrap();
        let (op, c) = heat_op(9, &time, ScalarField::constant(0.0), ScalarField::constant(0.0));
        let zero = vec![Field::zeros(op.grid().len()); 11];
        let hist = c.fields_along(&zero).unwrap();
        for z in hist.zeta.unwrap() {
            assert_eq!(z.max_abs(), 0.0);
        }
        assert!(hist.fields.iter().all(|g| g.as_slice().iter().all(|&v| v == 1.0)));
    }

    fn heat_error(nodes: usize, steps: usize) -> f64 {
        let time = TimeGrid::new(0.1, steps).unwrap();
        let init = ScalarField::SineBump {
            base: 0.0,
            amplitude: 1.0,
            t_rate: 0.0,
        };
        let (op, c) = heat_op(nodes, &time, init, ScalarField::constant(0.0));
        let grid = op.grid().clone();
        let mut state = c.initial_state().unwrap();
        let v = Field::zeros(grid.len());
        let lu = op.apply(&v).unwrap();
        for _ in 0..steps {
            state = c.step_coupled_heat(&state, &v, &lu, time.dt()).unwrap();
        }
        let decay = (-std::f64::consts::PI.powi(2) * 0.1).exp();
        (0..grid.len())
            .map(|i| (state.zeta.as_slice()[i] - decay * (std::f64::consts::PI * grid.coords(i)[0]).sin()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn coupled_heat_matches_manufactured_solution() {
        let coarse = heat_error(21, 20);
        let fine = heat_error(41, 80);
        assert!(coarse < 2e-2, "{coarse}");
        // O(dt + h^2): both refined by 4x
        assert!(fine < coarse / 3.0, "{fine} vs {coarse}");
    }

    #[test]
    fn coupled_heat_maximum_principle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let time = TimeGrid::new(1.0, 10).unwrap();
        for _ in 0..20 {
            let (op, _) = heat_op(13, &time, ScalarField::constant(0.0), ScalarField::constant(0.0));
            let spec = ConstraintSpec::CoupledHeat {
                diffusivity: rng.gen_range(0.1..2.0),
                source: ScalarField::Tent {
                    slope: rng.gen_range(0.0..3.0),
                    height: rng.gen_range(0.0..1.0),
                },
                psi: rng.gen_range(0.0..1.0),
                eta: rng.gen_range(0.0..1.0),
                initial: ScalarField::SineBump {
                    base: 0.0,
                    amplitude: rng.gen_range(0.0..1.0),
                    t_rate: 0.0,
                },
                composition: Composition::affine(1.0, 1.0),
                lower: 0.5,
                upper: 3.0,
            };
            let c = ConstraintOperator::new(spec, &op, &time).unwrap();
            let n = op.grid().len();
            let phi: Vec<Field> = (0..=10)
                .map(|_| {
                    Field::from_fn(op.grid(), true, |_| rng.gen_range(0.0..1.0)).unwrap()
                })
                .collect();
            let hist = c.fields_along(&phi).unwrap();
            for z in hist.zeta.unwrap() {
                assert_eq!(z.len(), n);
                assert!(z.as_slice().iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn coupled_heat_is_stable_for_any_dt() {
        let init = ScalarField::SineBump {
            base: 0.0,
            amplitude: 1.0,
            t_rate: 0.0,
        };
        for dt in [1e-1, 1e-2, 1e-3] {
            let time = TimeGrid::new(1.0, 10).unwrap();
            let (op, c) = heat_op(17, &time, init.clone(), ScalarField::constant(0.0));
            let grid = op.grid().clone();
            let mut state = c.initial_state().unwrap();
            let n0 = norm_l2(&state.zeta, &grid).unwrap();
            let v = Field::zeros(grid.len());
            let lu = op.apply(&v).unwrap();
            for _ in 0..50 {
                state = c.step_coupled_heat(&state, &v, &lu, dt).unwrap();
                assert!(norm_l2(&state.zeta, &grid).unwrap() <= n0 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn coupled_heat_2d_five_point() {
        let grid = Grid::new_2d([1.0, 1.0], [9, 9]).unwrap();
        let op = LinearOperatorL::new(OperatorKind::Gradient2d, &grid).unwrap();
        let time = TimeGrid::new(0.05, 10).unwrap();
        let spec = ConstraintSpec::CoupledHeat {
            diffusivity: 1.0,
            source: ScalarField::constant(0.0),
            psi: 0.0,
            eta: 0.0,
            initial: ScalarField::SineBump {
                base: 0.0,
                amplitude: 1.0,
                t_rate: 0.0,
            },
            composition: Composition::affine(1.0, 1.0),
            lower: 0.5,
            upper: 3.0,
        };
        let c = ConstraintOperator::new(spec, &op, &time).unwrap();
        let phi = vec![Field::zeros(grid.len()); 11];
        let hist = c.fields_along(&phi).unwrap();
        let z = hist.zeta.unwrap().pop().unwrap();
        let center = grid.index(4, 4);
        // discrete eigenvalue of the 5-point stencil, implicit Euler decay
        let h: f64 = 0.125;
        let lam = 2.0 * 4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
        let expected = (1.0 / (1.0 + 0.005 * lam)).powi(10);
        assert!((z.as_slice()[center] - expected).abs() < 1e-12);
    }

    #[test]
    fn coupled_fields_are_causal_and_clamped() {
        let op = grad1d(9);
        let time = TimeGrid::new(1.0, 8).unwrap();
        let mk = |upper: f64| {
            let spec = ConstraintSpec::CoupledHeat {
                diffusivity: 1.0,
                source: ScalarField::constant(0.0),
                psi: 50.0,
                eta: 0.0,
                initial: ScalarField::constant(0.0),
                composition: Composition::affine(1.0, 1.0),
                lower: 0.5,
                upper,
            };
            ConstraintOperator::new(spec, &op, &time).unwrap()
        };
        let mut phi: Vec<Field> = (0..=8)
            .map(|_| Field::from_fn(op.grid(), true, |x| x[0] * (1.0 - x[0])).unwrap())
            .collect();
        let tight = mk(1.1).fields_along(&phi).unwrap();
        assert!(tight.clamp_events > 0);
        assert!(tight.fields.iter().all(|g| g.max() <= 1.1 && g.min() >= 0.5));

        let wide = mk(1e3);
        let a = wide.fields_along(&phi).unwrap();
        assert_eq!(a.clamp_events, 0);
        phi[5] = Field::zeros(op.grid().len());
        let b = wide.fields_along(&phi).unwrap();
        for k in 0..=5 {
            assert_eq!(a.fields[k], b.fields[k]);
        }
        assert_ne!(a.fields[6], b.fields[6]);
    }

    #[test]
    fn eval_coupled_examples() {
        let op = grad1d(5);
        let time = TimeGrid::new(1.0, 2).unwrap();
        let mk = |comp: Composition| {
            ConstraintOperator::new(
                ConstraintSpec::CoupledHeat {
                    diffusivity: 1.0,
                    source: ScalarField::constant(0.0),
                    psi: 0.0,
                    eta: 0.0,
                    initial: ScalarField::constant(0.0),
                    composition: comp,
                    lower: 0.5,
                    upper: 3.0,
                },
                &op,
                &time,
            )
            .unwrap()
        };
        let n = op.grid().len();
        let st = |v: f64| CoupledState {
            zeta: Field::new(vec![v; n]).unwrap(),
            time: 0.0,
        };
        let c = mk(Composition::affine(1.0, 1.0));
        assert!(c.eval_coupled(&st(0.0), 0.0).unwrap().0.as_slice().iter().all(|&v| v == 1.0));
        let (g, clamps) = c.eval_coupled(&st(10.0), 0.0).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 3.0));
        assert_eq!(clamps, op.point_count());
        let c = mk(Composition {
            base: ScalarField::constant(1.0),
            linear: 0.0,
            quadratic: 1.0,
        });
        assert!(c.eval_coupled(&st(0.5), 0.0).unwrap().0.as_slice().iter().all(|&v| v == 1.25));
    }
}
