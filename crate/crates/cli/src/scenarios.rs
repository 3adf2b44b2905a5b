//! Named built-in scenarios.

use gradvi::{
    Composition, ConstraintSpec, ContinuationSchedule, Grid, Kernel, MaterialLaw, NewtonOptions, OperatorKind,
    OuterOptions, ScalarField, TimeGrid,
};

use crate::config::{OutputOptions, ScenarioConfig};

pub const BUILTINS: &[&str] = &[
    "vi-heat-unconstrained",
    "vi-gradient-1d",
    "vi-moving-obstacle",
    "sandpile-1d",
    "vi-laplacian-1d",
    "vi-gradient-2d",
    "qvi-memory",
    "qvi-heat-coupled",
];

fn base(name: &str, nodes: usize, final_time: f64, steps: usize) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        grid: Grid::new_1d(1.0, nodes).expect("valid grid"),
        time: TimeGrid::new(final_time, steps).expect("valid time grid"),
        operator: OperatorKind::Gradient1d,
        material: MaterialLaw::power_law(2.0, 1.0),
        constraint: ConstraintSpec::constant(1.0),
        source: ScalarField::constant(10.0),
        initial: ScalarField::constant(0.0),
        schedule: ContinuationSchedule {
            eps: vec![0.4, 0.2, 0.1, 0.05],
            delta: vec![1e-4],
            ..Default::default()
        },
        solver: NewtonOptions::default(),
        outer: OuterOptions::default(),
        output: OutputOptions::default(),
        seed: 0,
    }
}

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    let cfg = match name {
        "vi-heat-unconstrained" => ScenarioConfig {
            constraint: ConstraintSpec::constant(1e3),
            source: ScalarField::SineBump {
                base: 0.0,
                amplitude: 5.0,
                t_rate: 0.0,
            },
            initial: ScalarField::SineBump {
                base: 0.0,
                amplitude: 0.1,
                t_rate: 0.0,
            },
            schedule: ContinuationSchedule::single(0.4, 1e-6),
            ..base(name, 33, 0.5, 20)
        },
        "vi-gradient-1d" => base(name, 33, 1.0, 50),
        "vi-moving-obstacle" => ScenarioConfig {
            constraint: ConstraintSpec::Given {
                g: ScalarField::Affine {
                    base: 1.0,
                    x_slope: 0.0,
                    y_slope: 0.0,
                    t_slope: 0.5,
                },
                lower: None,
                upper: None,
            },
            ..base(name, 33, 1.0, 50)
        },
        "sandpile-1d" => ScenarioConfig {
            material: MaterialLaw::power_law(2.0, 0.0),
            source: ScalarField::constant(1.0),
            ..base(name, 33, 5.0, 50)
        },
        "vi-laplacian-1d" => ScenarioConfig {
            operator: OperatorKind::Laplacian1d,
            constraint: ConstraintSpec::constant(1.0),
            source: ScalarField::constant(20.0),
            ..base(name, 33, 0.5, 25)
        },
        "vi-gradient-2d" => ScenarioConfig {
            grid: Grid::new_2d([1.0, 1.0], [17, 17]).expect("valid grid"),
            operator: OperatorKind::Gradient2d,
            material: MaterialLaw::power_law(3.0, 0.5),
            constraint: ConstraintSpec::constant(0.5),
            schedule: ContinuationSchedule {
                eps: vec![0.4, 0.2, 0.1],
                delta: vec![1e-4],
                ..Default::default()
            },
            ..base(name, 17, 0.5, 10)
        },
        "qvi-memory" => ScenarioConfig {
            constraint: ConstraintSpec::MemoryKernel {
                kernel: Kernel::Constant { value: 0.5 },
                composition: Composition::affine(1.0, 0.5),
                lower: 0.5,
                upper: 3.0,
            },
            schedule: ContinuationSchedule {
                eps: vec![0.4, 0.2, 0.1],
                delta: vec![1e-4],
                ..Default::default()
            },
            ..base(name, 17, 0.5, 10)
        },
        "qvi-heat-coupled" => ScenarioConfig {
            constraint: ConstraintSpec::CoupledHeat {
                diffusivity: 0.1,
                source: ScalarField::constant(0.0),
                psi: 0.5,
                eta: 0.0,
                initial: ScalarField::constant(0.0),
                composition: Composition::affine(1.0, 0.5),
                lower: 0.5,
                upper: 3.0,
            },
            schedule: ContinuationSchedule {
                eps: vec![0.4, 0.2, 0.1],
                delta: vec![1e-4],
                ..Default::default()
            },
            ..base(name, 17, 0.5, 10)
        },
        _ => return None,
    };
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_builds_and_round_trips() {
        for name in BUILTINS {
            let cfg = builtin(name).unwrap();
            assert_eq!(cfg.name, *name);
            cfg.build().unwrap();
            assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
        assert!(builtin("nope").is_none());
    }
}
