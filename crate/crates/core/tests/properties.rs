use gradvi::oracle::{constraint_transfer, regularizing_sequence, transfer_excess, ImageSpace};
use gradvi::*;
use nalgebra::DVector;
use proptest::prelude::*;

fn spec(u0: Field, g: f64, f: f64) -> ProblemSpec {
    ProblemSpec::new(
        Grid::new_1d(1.0, 13).unwrap(),
        TimeGrid::new(0.3, 6).unwrap(),
        OperatorKind::Gradient1d,
        MaterialLaw::power_law(2.5, 0.5),
        ConstraintSpec::constant(g),
        ScalarField::constant(f),
        u0,
    )
    .unwrap()
}

/// Interior values scaled so the slopes stay below `bound`.
fn feasible(values: &[f64], bound: f64) -> Field {
    let mut v = vec![0.0; values.len() + 2];
    v[1..=values.len()].copy_from_slice(values);
    let h = 1.0 / (v.len() - 1) as f64;
    let steep = v.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max);
    let s = if steep > bound { bound / steep } else { 1.0 };
    Field::new(v.into_iter().map(|x| x * s).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn penalty_is_nonnegative_and_nondecreasing(s in -2.0..3.0f64, ds in 0.0..1.0f64, eps in 0.05..0.9f64) {
        let k = |x: f64| k_eps(x, eps).unwrap();
        prop_assert!(k(s) >= 0.0);
        prop_assert!(k(s + ds) >= k(s));
        if s <= 0.0 {
            prop_assert_eq!(k(s), 0.0);
        }
    }

    #[test]
    fn solutions_contract_in_the_initial_datum(
        a in prop::collection::vec(-0.05..0.05f64, 11),
        b in prop::collection::vec(-0.05..0.05f64, 11),
        f in 0.0..20.0f64,
    ) {
        let s1 = spec(feasible(&a, 0.9), 1.0, f);
        let s2 = s1.with_initial(feasible(&b, 0.9)).unwrap();
        let schedule = ContinuationSchedule::single(0.2, 1e-4);
        let opts = NewtonOptions::default();
        let g = vec![ConstraintField::constant(1.0, 12).unwrap(); 7];
        let (w1, _) = continuation_solve(&s1, &g, &schedule, &opts).unwrap();
        let (w2, _) = continuation_solve(&s2, &g, &schedule, &opts).unwrap();
        let d0 = norm_l2(&s1.u0().sub(s2.u0()).unwrap(), s1.grid()).unwrap();
        let mut prev = d0;
        for k in 1..=6 {
            let d = norm_l2(&w1.field(k).sub(w2.field(k)).unwrap(), s1.grid()).unwrap();
            prop_assert!(d <= prev * (1.0 + 1e-9) + 1e-12, "step {}: {} > {}", k, d, prev);
            prev = d;
        }
    }

    #[test]
    fn regularization_keeps_feasibility(
        raw in prop::collection::vec(prop::collection::vec(-0.3..0.3f64, 7), 9),
        bounds in prop::collection::vec(0.2..2.0f64, 9),
        n in 1u32..100,
    ) {
        let grid = Grid::new_1d(1.0, 9).unwrap();
        let time = TimeGrid::new(1.0, 8).unwrap();
        let op = LinearOperatorL::new(OperatorKind::Gradient1d, &grid).unwrap();
        let v = Trajectory::from_fields(raw.iter().zip(&bounds).map(|(r, &g)| feasible(r, g)).collect()).unwrap();
        let g: Vec<ConstraintField> = bounds.iter().map(|&b| ConstraintField::constant(b, 8).unwrap()).collect();
        prop_assert!(transfer_excess(&op, &v, &g).unwrap() <= 1e-12);
        let vn = regularizing_sequence(&v, v.initial(), n, &time).unwrap();
        let gn = constraint_transfer(&g, n, &time).unwrap();
        prop_assert!(transfer_excess(&op, &vn, &gn).unwrap() <= 1e-12);
    }

    #[test]
    fn projection_is_feasible_and_idempotent(
        y in prop::collection::vec(-1.0..1.0f64, 16),
        bound in 0.05..1.0f64,
    ) {
        let grid = Grid::new_2d([1.0, 1.0], [6, 6]).unwrap();
        let space = ImageSpace::new(&LinearOperatorL::new(OperatorKind::Gradient2d, &grid).unwrap()).unwrap();
        let g = vec![bound; 25];
        let p = space.project(&DVector::from_vec(y), &g);
        prop_assert!(space.excess(&space.apply(&p), &g) <= 1e-12);
        let again = space.project(&p, &g);
        prop_assert!((&again - &p).amax() <= 1e-8 * (1.0 + p.amax()));
    }
}
