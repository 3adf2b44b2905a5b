//! Exponential time regularization `v_n + (1/n) d_t v_n = v`, `v_n(0) = z`,
//! integrated exactly for `v` piecewise linear in time.

use crate::error::{check_len, Error, Result};
use crate::field::{ConstraintField, Field, Trajectory};
use crate::mesh::TimeGrid;
use crate::operators::LinearOperatorL;

/// Weights `(E, w0, w1)` of `v_n(t_{k+1}) = E v_n(t_k) + w0 v(t_k) + w1 v(t_{k+1})`
/// for `a = n dt`. They are nonnegative and sum to one.
fn weights(a: f64) -> (f64, f64, f64) {
    let e = (-a).exp();
    let one_minus_e = -(-a).exp_m1();
    // w0 = (1 - e - a e) / a, by series when a is small
    let w0 = if a < 0.1 {
        // sum_{m >= 2} (-1)^m (m - 1) a^{m-1} / m!
        let mut term = 1.0;
        let mut sum = 0.0;
        for m in 2..20 {
            term *= a / m as f64;
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (m - 1) as f64 * term;
        }
        sum
    } else {
        (one_minus_e - a * e) / a
    };
    (e, w0, one_minus_e - w0)
}

fn check_n(n: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("n", "must be a positive integer"));
    }
    Ok(n as f64)
}

/// `v_n` at the time nodes of `time`.
pub fn regularizing_sequence(v: &Trajectory, z: &Field, n: u32, time: &TimeGrid) -> Result<Trajectory> {
    let n = check_n(n)?;
    check_len("regularizing sequence steps", time.steps(), v.steps())?;
    check_len("regularizing sequence datum", v.initial().len(), z.len())?;
    let (e, w0, w1) = weights(n * time.dt());
    let mut fields = Vec::with_capacity(v.steps() + 1);
    fields.push(z.clone());
    for k in 0..v.steps() {
        let prev = fields[k].as_slice();
        let a = v.field(k).as_slice();
        let b = v.field(k + 1).as_slice();
        let next = (0..z.len()).map(|i| e * prev[i] + w0 * a[i] + w1 * b[i]).collect();
        fields.push(Field::new(next)?);
    }
    Trajectory::from_fields(fields)
}

/// The same averaging applied to the bound, `g_n(0) = G(0)`.
pub fn constraint_transfer(g: &[ConstraintField], n: u32, time: &TimeGrid) -> Result<Vec<ConstraintField>> {
    let n = check_n(n)?;
    check_len("constraint transfer steps", time.steps() + 1, g.len())?;
    let (e, w0, w1) = weights(n * time.dt());
    let mut out = Vec::with_capacity(g.len());
    out.push(g[0].clone());
    for k in 0..time.steps() {
        check_len("constraint transfer points", g[0].len(), g[k + 1].len())?;
        let prev = out[k].as_slice();
        let a = g[k].as_slice();
        let b = g[k + 1].as_slice();
        let next = (0..prev.len()).map(|j| e * prev[j] + w0 * a[j] + w1 * b[j]).collect();
        out.push(ConstraintField::new(next)?);
    }
    Ok(out)
}

/// `max_{k,j} (|L v_k|_j - g_k,j)`.
pub fn transfer_excess(op: &LinearOperatorL, v: &Trajectory, g: &[ConstraintField]) -> Result<f64> {
    check_len("transfer excess", v.steps() + 1, g.len())?;
    let mut worst = f64::NEG_INFINITY;
    for (w, gk) in v.fields().iter().zip(g) {
        let lu = op.apply(w)?;
        check_len("transfer excess points", lu.points(), gk.len())?;
        for j in 0..lu.points() {
            worst = worst.max(lu.magnitude(j) - gk.as_slice()[j]);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{norm_l2, spacetime_l2_distance};
    use crate::mesh::Grid;

    #[test]
    fn weights_are_a_convex_combination() {
        for a in [1e-9, 1e-4, 0.05, 0.0999, 0.1, 0.5, 3.0, 40.0] {
            let (e, w0, w1) = weights(a);
            assert!(e >= 0.0 && w0 >= 0.0 && w1 >= 0.0, "a = {a}");
            assert!((e + w0 + w1 - 1.0).abs() < 1e-15);
        }
        // series and closed form agree at the switch
        let lo = weights(0.1 - 1e-12);
        let hi = weights(0.1);
        assert!((lo.1 - hi.1).abs() < 1e-12);
    }

    #[test]
    fn weights_match_quadrature() {
        // w1 = int_0^1 a e^{-a(1-s)} s ds
        for a in [0.01, 0.3, 2.0] {
            let n = 200_000;
            let q: f64 = (0..n)
                .map(|i| {
                    let s = (i as f64 + 0.5) / n as f64;
                    a * (-a * (1.0 - s)).exp() * s / n as f64
                })
                .sum();
            assert!((weights(a).2 - q).abs() < 1e-9);
        }
    }

    fn grid() -> Grid {
        Grid::new_1d(1.0, 9).unwrap()
    }

    #[test]
    fn constants_are_fixed_points() {
        let g = grid();
        let c = Field::from_fn(&g, true, |x| x[0] * (1.0 - x[0])).unwrap();
        let time = TimeGrid::new(1.0, 20).unwrap();
        let v = Trajectory::constant(&c, 20);
        for n in [1, 4, 64] {
            let vn = regularizing_sequence(&v, &c, n, &time).unwrap();
            for f in vn.fields() {
                assert!(f.sub(&c).unwrap().max_abs() < 1e-14);
            }
        }
        let gc = vec![ConstraintField::constant(1.5, 8).unwrap(); 21];
        let gn = constraint_transfer(&gc, 16, &time).unwrap();
        for f in &gn {
            assert!(f.as_slice().iter().all(|&v| (v - 1.5).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_input_decays_exponentially() {
        let g = grid();
        let z = Field::from_fn(&g, true, |x| (std::f64::consts::PI * x[0]).sin()).unwrap();
        let time = TimeGrid::new(1.0, 10).unwrap();
        let v = Trajectory::constant(&Field::zeros(9), 10);
        let vn = regularizing_sequence(&v, &z, 3, &time).unwrap();
        for k in 0..=10 {
            let expected = z.scaled((-3.0 * time.time(k)).exp());
            assert!(vn.field(k).sub(&expected).unwrap().max_abs() < 1e-14);
        }
        assert!(regularizing_sequence(&v, &z, 0, &time).is_err());
    }

    fn smooth(time: &TimeGrid) -> Trajectory {
        let g = grid();
        let fields = time
            .times()
            .iter()
            .map(|&t| Field::from_fn(&g, true, |x| (std::f64::consts::PI * x[0]).sin() * (1.0 + t * t)).unwrap())
            .collect();
        Trajectory::from_fields(fields).unwrap()
    }

    #[test]
    fn sequence_converges_to_v() {
        let g = grid();
        let time = TimeGrid::new(1.0, 200).unwrap();
        let v = smooth(&time);
        let mut last = f64::INFINITY;
        for n in [4, 16, 64] {
            let vn = regularizing_sequence(&v, v.initial(), n, &time).unwrap();
            let d = spacetime_l2_distance(vn.fields(), v.fields(), &g, &time).unwrap();
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn defining_ode_holds_to_first_order() {
        let g = grid();
        let n = 8u32;
        let defect = |steps: usize| {
            let time = TimeGrid::new(1.0, steps).unwrap();
            let v = smooth(&time);
            let vn = regularizing_sequence(&v, v.initial(), n, &time).unwrap();
            let mut worst: f64 = 0.0;
            for k in 1..=steps {
                let dtv = vn.field(k).sub(vn.field(k - 1)).unwrap().scaled(1.0 / time.dt());
                let r = vn.field(k).sub(v.field(k)).unwrap();
                let d: Vec<f64> = r.as_slice().iter().zip(dtv.as_slice()).map(|(a, b)| a + b / n as f64).collect();
                worst = worst.max(norm_l2(&Field::new(d).unwrap(), &g).unwrap());
            }
            worst
        };
        let (a, b) = (defect(50), defect(100));
        assert!(a < 0.1);
        let ratio = a / b;
        assert!((1.7..2.3).contains(&ratio), "{ratio}");
    }
}
