use gradvi::*;

fn schedule(floor: f64) -> ContinuationSchedule {
    let mut eps = vec![0.4, 0.2, 0.1, 0.05];
    while *eps.last().unwrap() / 2.0 > floor {
        eps.push(eps.last().unwrap() / 2.0);
    }
    if *eps.last().unwrap() > floor {
        eps.push(floor);
    }
    ContinuationSchedule {
        eps,
        delta: vec![1e-6],
        allow_small_eps: true,
        ..Default::default()
    }
}

/// One implicit step from zero, penalty continuation against the oracle.
fn distance(grid: Grid, kind: OperatorKind, p: f64, g: f64, f: f64, floor: f64) -> (f64, OracleResult) {
    let n = grid.len();
    let spec = ProblemSpec::new(
        grid,
        TimeGrid::new(0.1, 1).unwrap(),
        kind,
        MaterialLaw::power_law(p, 0.5),
        ConstraintSpec::constant(g),
        ScalarField::constant(f),
        Field::zeros(n),
    )
    .unwrap();
    let bound = spec.constraint().eval_given(0.1).unwrap();
    let oracle = oracle_vi_step(spec.u0(), &bound, &spec, 0.1, 0.1, &OracleOptions::default()).unwrap();
    let frozen = vec![bound.clone(), bound];
    let (traj, _) = continuation_solve(&spec, &frozen, &schedule(floor), &NewtonOptions::default()).unwrap();
    (traj.last().sub(&oracle.field).unwrap().max_abs(), oracle)
}

#[test]
fn two_dimensional_gradient_constraint() {
    for p in [2.0, 3.0] {
        let (d, oracle) = distance(Grid::new_2d([1.0, 1.0], [8, 8]).unwrap(), OperatorKind::Gradient2d, p, 0.3, 10.0, 1e-3);
        assert!(oracle.converged && oracle.monotone);
        assert!(oracle.relative_excess <= 1e-8 && oracle.relative_excess > -1e-6);
        assert!(d < 3e-3, "p = {p}: {d}");
    }
}

#[test]
fn laplacian_constraint() {
    let (d, oracle) = distance(Grid::new_1d(1.0, 17).unwrap(), OperatorKind::Laplacian1d, 2.0, 1.0, 30.0, 1e-2);
    assert!(oracle.kkt_residual < 1e-8);
    assert!(d < 5e-3, "{d}");
}

#[test]
fn subquadratic_gradient_constraint() {
    let (d, oracle) = distance(Grid::new_1d(1.0, 17).unwrap(), OperatorKind::Gradient1d, 1.5, 0.5, 10.0, 1e-3);
    assert!(oracle.kkt_residual < 1e-8);
    assert!(d < 1e-3, "{d}");
}

#[test]
fn error_shrinks_with_eps() {
    let grid = Grid::new_1d(1.0, 16).unwrap();
    let errs: Vec<f64> = [0.05, 1e-2, 1e-3]
        .iter()
        .map(|&floor| distance(grid.clone(), OperatorKind::Gradient1d, 2.0, 1.0, 10.0, floor).0)
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < 0.5 * w[0]), "{errs:?}");
}
