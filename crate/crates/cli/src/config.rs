//! JSON scenario configuration.

use std::path::{Path, PathBuf};

use gradvi::{
    ConstraintSpec, ContinuationSchedule, Field, Grid, MaterialLaw, NewtonOptions, OperatorKind, OuterOptions,
    ProblemSpec, ScalarField, TimeGrid,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config key `{key}`: {message}")]
    Parse { key: String, message: String },
    #[error(transparent)]
    Invalid(#[from] gradvi::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputOptions {
    /// Relative paths resolve against the output root.
    pub dir: Option<PathBuf>,
    /// Write one CSV per time node with the full field.
    pub fields: bool,
}

/// One run: discretization, law, constraint, data and solver settings.
/// Scalar functions come from the catalog in [`gradvi::ScalarField`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid: Grid,
    pub time: TimeGrid,
    pub operator: OperatorKind,
    pub material: MaterialLaw,
    pub constraint: ConstraintSpec,
    #[serde(default = "zero")]
    pub source: ScalarField,
    /// Initial datum; boundary nodes are set to zero.
    #[serde(default = "zero")]
    pub initial: ScalarField,
    #[serde(default)]
    pub schedule: ContinuationSchedule,
    #[serde(default)]
    pub solver: NewtonOptions,
    #[serde(default)]
    pub outer: OuterOptions,
    #[serde(default)]
    pub output: OutputOptions,
    #[serde(default)]
    pub seed: u64,
}

fn zero() -> ScalarField {
    ScalarField::constant(0.0)
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            key: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Parse {
            key: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn initial_field(&self) -> Result<Field, ConfigError> {
        let grid = &self.grid;
        Ok(Field::from_fn(grid, true, |x| self.initial.eval(x, 0.0, grid))?)
    }

    /// Validates everything and assembles the problem.
    pub fn build(&self) -> Result<ProblemSpec, ConfigError> {
        self.schedule.validate()?;
        self.solver.validate()?;
        self.outer.validate()?;
        Ok(ProblemSpec::new(
            self.grid.clone(),
            self.time,
            self.operator,
            self.material.clone(),
            self.constraint.clone(),
            self.source.clone(),
            self.initial_field()?,
        )?)
    }
}
