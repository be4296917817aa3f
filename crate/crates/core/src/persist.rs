//! JSON model files written by `fit` and read by `predict`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EmTrace;
use crate::fit::{CovarianceRole, EstimatorKind, FittedModel};
use crate::model::{EffectsMatrix, ResponseKind};

/// Matrix with an explicit shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            values: m.transpose().iter().copied().collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.values.len() != self.rows * self.cols {
            return Err(Error::Shape(format!(
                "matrix record claims {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.values.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.values))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRecord {
    pub role: CovarianceRole,
    pub matrix: MatrixRecord,
}

/// Settings recorded alongside a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub solver: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub estimator: EstimatorKind,
    pub response_kind: ResponseKind,
    pub settings: FitSettings,
    pub covariate_names: Vec<String>,
    pub task_names: Vec<String>,
    pub beta: MatrixRecord,
    pub covariance: Option<CovarianceRecord>,
    pub traces: Vec<EmTrace>,
    pub cg_iterations: Option<usize>,
}

impl ModelFile {
    pub fn new(model: &FittedModel, settings: FitSettings, covariate_names: Vec<String>, task_names: Vec<String>) -> Self {
        Self {
            estimator: model.kind,
            response_kind: model.response_kind,
            settings,
            covariate_names,
            task_names,
            beta: MatrixRecord::from_matrix(model.beta.values()),
            covariance: model.covariance.as_ref().map(|(role, m)| CovarianceRecord {
                role: *role,
                matrix: MatrixRecord::from_matrix(m),
            }),
            traces: model.traces.clone(),
            cg_iterations: model.cg_iterations,
        }
    }

    pub fn beta(&self) -> Result<EffectsMatrix> {
        let b = self.beta.to_matrix()?;
        if b.nrows() != self.covariate_names.len() || b.ncols() != self.task_names.len() {
            return Err(Error::Shape("model beta does not match its covariate and task names".into()));
        }
        EffectsMatrix::new(b)
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.task_names
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown task '{name}' (model has {})", self.task_names.join(", "))))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model file serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string() + "\n").map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            row: e.line(),
            column: e.column().to_string(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = MatrixRecord::from_matrix(&m);
        assert_eq!(r.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(r.to_matrix().unwrap(), m);
    }
}
