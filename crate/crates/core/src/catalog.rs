//! Closed catalog of space-time scalar functions used for sources, initial
//! data, coefficients and constraint bounds.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::mesh::{Grid, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalarField {
    Constant {
        value: f64,
    },
    /// `base + x_slope x + y_slope y + t_slope t`
    Affine {
        base: f64,
        #[serde(default)]
        x_slope: f64,
        #[serde(default)]
        y_slope: f64,
        #[serde(default)]
        t_slope: f64,
    },
    /// `base + amplitude e^{t_rate t} prod_i sin(pi x_i / L_i)`
    SineBump {
        #[serde(default)]
        base: f64,
        amplitude: f64,
        #[serde(default)]
        t_rate: f64,
    },
    /// `min(height, slope * dist(x, boundary))`
    Tent { slope: f64, height: f64 },
    Sum { terms: Vec<ScalarField> },
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    pub fn eval(&self, x: Point, t: f64, grid: &Grid) -> f64 {
        match self {
            ScalarField::Constant { value } => *value,
            ScalarField::Affine {
                base,
                x_slope,
                y_slope,
                t_slope,
            } => base + x_slope * x[0] + y_slope * x[1] + t_slope * t,
            ScalarField::SineBump {
                base,
                amplitude,
                t_rate,
            } => {
                let mut s = 1.0;
                for (axis, &l) in grid.extent().iter().enumerate() {
                    s *= (PI * x[axis] / l).sin();
                }
                base + amplitude * (t_rate * t).exp() * s
            }
            ScalarField::Tent { slope, height } => {
                let mut d = f64::INFINITY;
                for (axis, &l) in grid.extent().iter().enumerate() {
                    d = d.min(x[axis]).min(l - x[axis]);
                }
                (slope * d.max(0.0)).min(*height)
            }
            ScalarField::Sum { terms } => terms.iter().map(|f| f.eval(x, t, grid)).sum(),
        }
    }

    /// True when the value never depends on `t`.
    pub fn is_time_independent(&self) -> bool {
        match self {
            ScalarField::Constant { .. } | ScalarField::Tent { .. } => true,
            ScalarField::Affine { t_slope, .. } => *t_slope == 0.0,
            ScalarField::SineBump { t_rate, amplitude, .. } => *t_rate == 0.0 || *amplitude == 0.0,
            ScalarField::Sum { terms } => terms.iter().all(ScalarField::is_time_independent),
        }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self {
            ScalarField::Constant { value } => Some(*value),
            _ => None,
        }
    }
}
