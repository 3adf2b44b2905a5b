//! Projection onto `K = {z : |Lz_j| <= g_j}` in the metric `|L . |`.
//!
//! Working in the image `q = Lz`, the projection of `y` is the point of
//! `range(L)` inside the pointwise balls that is closest to `Ly`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::operators::{LinearOperatorL, OperatorKind};

/// Dense `L` on the interior unknowns plus a factorization of `L^T L`.
pub struct ImageSpace {
    pub(crate) kind: OperatorKind,
    pub(crate) comps: usize,
    pub(crate) l: DMatrix<f64>,
    pub(crate) normal: Cholesky<f64, Dyn>,
    pub(crate) h: f64,
}

impl ImageSpace {
    /// Builds `L` column by column from the operator applied to unit vectors.
    pub fn new(op: &LinearOperatorL) -> Result<Self> {
        let grid = op.grid();
        let interior = grid.interior_nodes();
        let rows = op.point_count() * op.comps();
        let mut l = DMatrix::zeros(rows, interior.len());
        for (c, &node) in interior.iter().enumerate() {
            let mut e = vec![0.0; grid.len()];
            e[node] = 1.0;
            let col = op.apply(&crate::field::Field::new(e)?)?;
            for (r, v) in col.as_slice().iter().enumerate() {
                l[(r, c)] = *v;
            }
        }
        let normal = Cholesky::new(l.transpose() * &l).ok_or(Error::Singular {
            row: 0,
            pivot: f64::NAN,
        })?;
        let h = if op.kind() == OperatorKind::Gradient1d {
            grid.spacing()[0]
        } else {
            0.0
        };
        Ok(ImageSpace {
            kind: op.kind(),
            comps: op.comps(),
            l,
            normal,
            h,
        })
    }

    pub fn unknowns(&self) -> usize {
        self.l.ncols()
    }

    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.l * z
    }

    /// Least-squares preimage `(L^T L)^{-1} L^T q`.
    pub fn preimage(&self, q: &DVector<f64>) -> DVector<f64> {
        self.normal.solve(&(self.l.transpose() * q))
    }

    /// `(L^T L)^{-1} v`.
    pub fn solve_normal(&self, v: &DVector<f64>) -> DVector<f64> {
        self.normal.solve(v)
    }

    /// Largest `max_j (|q_j| - g_j)`.
    pub fn excess(&self, q: &DVector<f64>, g: &[f64]) -> f64 {
        let m = self.comps;
        (0..g.len())
            .map(|j| point_norm(&q.as_slice()[j * m..(j + 1) * m]) - g[j])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Projection of `y` onto `K`. Exact for the 1D operators, Dykstra
    /// alternation followed by a radial rescale otherwise.
    pub fn project(&self, y: &DVector<f64>, g: &[f64]) -> DVector<f64> {
        match self.kind {
            OperatorKind::Gradient1d => self.project_gradient_1d(y, g),
            OperatorKind::Laplacian1d => {
                let q = self.apply(y);
                let clipped = DVector::from_iterator(q.len(), q.iter().zip(g).map(|(v, gj)| v.clamp(-gj, *gj)));
                self.preimage(&clipped)
            }
            OperatorKind::Gradient2d => self.project_dykstra(y, g, 20_000, 1e-14),
        }
    }

    /// `clip(Ly - c)` with the shift `c` chosen by bisection so the increments
    /// sum to zero, then re-integrated.
    pub fn project_gradient_1d(&self, y: &DVector<f64>, g: &[f64]) -> DVector<f64> {
        let q = self.apply(y);
        let total = |c: f64| -> f64 { q.iter().zip(g).map(|(v, gj)| (v - c).clamp(-gj, *gj)).sum() };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (v, gj) in q.iter().zip(g) {
            lo = lo.min(v - gj);
            hi = hi.max(v + gj);
        }
        // total is nonincreasing in c, total(lo) >= 0 >= total(hi)
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if total(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = 0.5 * (lo + hi);
        let clipped: Vec<f64> = q.iter().zip(g).map(|(v, gj)| (v - c).clamp(-gj, *gj)).collect();
        // remove the residual drift so the last node lands on zero
        let drift = clipped.iter().sum::<f64>() / clipped.len() as f64;
        let mut z = DVector::zeros(self.unknowns());
        let mut acc = 0.0;
        for i in 0..self.unknowns() {
            acc += self.h * (clipped[i] - drift);
            z[i] = acc;
        }
        z
    }

    /// Dykstra alternation between the balls and `range(L)`, finished by the
    /// radial scaling `rho = min(1, min_j g_j / |Lz_j|)`.
    pub fn project_dykstra(&self, y: &DVector<f64>, g: &[f64], max_iter: usize, tol: f64) -> DVector<f64> {
        let m = self.comps;
        let mut x = self.apply(y);
        let mut corr = DVector::zeros(x.len());
        for _ in 0..max_iter {
            let mut b = &x + &corr;
            for j in 0..g.len() {
                let s = &mut b.as_mut_slice()[j * m..(j + 1) * m];
                let r = point_norm(s);
                if r > g[j] {
                    let f = g[j] / r;
                    s.iter_mut().for_each(|v| *v *= f);
                }
            }
            corr = &x + &corr - &b;
            let next = self.apply(&self.preimage(&b));
            let change = (&next - &x).norm();
            x = next;
            if change <= tol * (1.0 + x.norm()) {
                break;
            }
        }
        let z = self.preimage(&x);
        let q = self.apply(&z);
        let mut rho: f64 = 1.0;
        for j in 0..g.len() {
            let r = point_norm(&q.as_slice()[j * m..(j + 1) * m]);
            if r > g[j] {
                rho = rho.min(g[j] / r);
            }
        }
        z * rho
    }
}

fn point_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(kind: OperatorKind, grid: &Grid) -> ImageSpace {
        ImageSpace::new(&LinearOperatorL::new(kind, grid).unwrap()).unwrap()
    }

    fn h_dist(s: &ImageSpace, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        s.apply(&(a - b)).norm()
    }

    #[test]
    fn exact_1d_projection_is_feasible_and_optimal() {
        let grid = Grid::new_1d(1.0, 17).unwrap();
        let s = space(OperatorKind::Gradient1d, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let y = DVector::from_fn(s.unknowns(), |_, _| rng.gen_range(-1.0..1.0));
            let g: Vec<f64> = (0..16).map(|_| rng.gen_range(0.5..2.0)).collect();
            let p = s.project(&y, &g);
            assert!(s.excess(&s.apply(&p), &g) <= 1e-9);
            let d = h_dist(&s, &p, &y);
            // no random feasible point is closer
            for _ in 0..200 {
                let z = s.project(&DVector::from_fn(s.unknowns(), |_, _| rng.gen_range(-1.0..1.0)), &g);
                assert!(h_dist(&s, &z, &y) >= d - 1e-9);
            }
            // variational inequality against feasible points
            let z = s.project(&DVector::from_fn(s.unknowns(), |_, _| rng.gen_range(-1.0..1.0)), &g);
            let lhs = s.apply(&(&y - &p)).dot(&s.apply(&(&z - &p)));
            assert!(lhs <= 1e-9);
        }
    }

    #[test]
    fn dykstra_agrees_with_exact_projection_in_1d() {
        let grid = Grid::new_1d(1.0, 17).unwrap();
        let s = space(OperatorKind::Gradient1d, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let y = DVector::from_fn(s.unknowns(), |_, _| rng.gen_range(-0.5..0.5));
            let g: Vec<f64> = (0..16).map(|_| rng.gen_range(0.5..2.0)).collect();
            let exact = s.project_gradient_1d(&y, &g);
            let dyk = s.project_dykstra(&y, &g, 200_000, 1e-15);
            assert!(h_dist(&s, &exact, &dyk) < 1e-6, "{}", h_dist(&s, &exact, &dyk));
        }
    }

    #[test]
    fn projection_fixes_feasible_points() {
        let grid = Grid::new_2d([1.0, 1.0], [6, 6]).unwrap();
        let s = space(OperatorKind::Gradient2d, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = DVector::from_fn(s.unknowns(), |_, _| rng.gen_range(-0.05..0.05));
        let g = vec![10.0; 25];
        let p = s.project(&y, &g);
        assert!((p - &y).norm() < 1e-10);
        let tight = vec![0.05; 25];
        let p = s.project(&(y * 40.0), &tight);
        assert!(s.excess(&s.apply(&p), &tight) <= 1e-12);
    }

    #[test]
    fn laplacian_projection_clips() {
        let grid = Grid::new_1d(1.0, 9).unwrap();
        let s = space(OperatorKind::Laplacian1d, &grid);
        let y = DVector::from_fn(7, |i, _| ((i + 1) as f64 * 0.125) * (1.0 - (i + 1) as f64 * 0.125));
        // Ly = -2 everywhere
        let p = s.project(&y, &[1.0; 7]);
        for v in s.apply(&p).iter() {
            assert!((v + 1.0).abs() < 1e-10);
        }
    }
}
