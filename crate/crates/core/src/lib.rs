//! Empirical Bayes estimation of multi-dataset regression effects with a shared
//! task covariance, plus baselines, logistic extension, Monte Carlo risk checks,
//! simulation and cross-validation tooling.

pub mod edata;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod fit;
pub mod linalg;
pub mod logistic;
pub mod model;
pub mod persist;
pub mod posterior;
pub mod rng;
pub mod sim;
pub mod table;
pub mod theory;

pub use error::{Error, Result};
pub use fit::{fit, EstimatorKind, FitOptions, FittedModel};
pub use model::{
    CovariateCovariance, DatasetCollection, EffectsMatrix, NoiseModel, NoiseSource, RegressionDataset, ResponseKind,
    TaskCovariance,
};
