//! Seeded simulation harnesses: dataset generation from the measurement
//! model, training-size sweeps for estimator accuracy (aMSE and variance
//! curves), and the two-arm differential-expression ROC comparison.

mod accuracy;
mod de;
mod generate;
mod quad;
mod roc;

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

pub use accuracy::run_accuracy_experiment;
pub use de::{generate_de_datasets, run_de_experiment, DeSimConfig, DeTruth};
pub use generate::{draw_mu, generate_dataset};
pub use quad::{quadratic_fit, QuadraticFit};
pub use roc::{roc_from_pvalues, RocCurve, RocPoint};

pub use crate::rng::stream_rng;

use crate::inference::InferenceError;
use crate::model::{ModelError, StructuralParams};
use crate::num::{real, Real};

/// Distribution of the true expression levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuLaw<T> {
    Normal { mean: T, var: T },
    Fixed(Vec<T>),
}

impl<T: Real> MuLaw<T> {
    /// Default law: centred normal with variance 25.
    pub fn standard() -> Self {
        MuLaw::Normal {
            mean: T::zero(),
            var: real(25.0),
        }
    }
}

/// One accuracy experiment: structural truth, expression law, training-size
/// grid, test-set size, replication count and master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<T> {
    pub theta: StructuralParams<T>,
    pub mu_law: MuLaw<T>,
    pub n_train_grid: Vec<usize>,
    pub n_test: usize,
    pub replications: usize,
    pub seed: u64,
}

/// Structural-parameter presets used across the simulation studies.
pub fn setting<T: Real>(which: u8) -> Option<StructuralParams<T>> {
    let values: [f64; 7] = match which {
        1 => [9.0, 5.0, 0.75, 1.0, 0.8, 1.2, 1.0],
        2 => [0.02, 0.2, 0.9, 0.95, 0.5, 1.0, 0.75],
        3 => [-5.0, 5.0, 1.3, 1.2, 0.2, 1.0, 1.2],
        _ => return None,
    };
    Some(StructuralParams {
        alpha2: real(values[0]),
        alpha3: real(values[1]),
        beta2: real(values[2]),
        beta3: real(values[3]),
        sigma1_sq: real(values[4]),
        sigma2_sq: real(values[5]),
        sigma3_sq: real(values[6]),
    })
}

impl<T: Real> SimConfig<T> {
    /// Accuracy-experiment defaults for a preset setting: n sweep
    /// {20, 50, 100, 300}, 1000 test genes, 200 replications.
    pub fn for_setting(which: u8, seed: u64) -> Option<Self> {
        Some(SimConfig {
            theta: setting(which)?,
            mu_law: MuLaw::standard(),
            n_train_grid: vec![20, 50, 100, 300],
            n_test: 1000,
            replications: 200,
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |field: &str, message: String| SimError::InvalidConfig {
            field: field.to_string(),
            message,
        };
        if self.replications == 0 {
            return Err(invalid("replications", "must be at least 1".into()));
        }
        if self.n_train_grid.is_empty() {
            return Err(invalid("n_train_grid", "must not be empty".into()));
        }
        for &n in &self.n_train_grid {
            if n < 4 {
                return Err(invalid("n_train_grid", format!("grid value {n} is below 4")));
            }
        }
        if !self.n_train_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid(
                "n_train_grid",
                "grid must be strictly increasing".into(),
            ));
        }
        if self.n_test == 0 {
            return Err(invalid("n_test", "must be at least 1".into()));
        }
        if !self.theta.all_variances_positive() {
            return Err(invalid(
                "theta",
                "error variances must be strictly positive".into(),
            ));
        }
        match &self.mu_law {
            MuLaw::Normal { var, .. } => {
                if *var <= T::zero() {
                    return Err(invalid("mu_law.var", "must be strictly positive".into()));
                }
            }
            MuLaw::Fixed(values) => {
                let needed = *self.n_train_grid.last().unwrap();
                if values.len() < needed {
                    return Err(invalid(
                        "mu_law",
                        format!("fixed list has {} values, {needed} needed", values.len()),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },
    #[error("{skipped} of {total} fit attempts were skipped (more than 10%)")]
    TooManySkips { skipped: usize, total: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Calibrated-estimator family evaluated by the accuracy experiment, plus
/// the raw qRT-PCR baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "xyz")]
    Xyz,
    #[serde(rename = "yz")]
    Yz,
    #[serde(rename = "z")]
    Z,
    #[serde(rename = "x")]
    XBaseline,
}

impl EstimatorKind {
    pub const CALIBRATED: [EstimatorKind; 3] =
        [EstimatorKind::Xyz, EstimatorKind::Yz, EstimatorKind::Z];
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Xyz,
        EstimatorKind::Yz,
        EstimatorKind::Z,
        EstimatorKind::XBaseline,
    ];

    pub fn token(self) -> &'static str {
        match self {
            EstimatorKind::Xyz => "xyz",
            EstimatorKind::Yz => "yz",
            EstimatorKind::Z => "z",
            EstimatorKind::XBaseline => "x",
        }
    }
}

/// Average mean-squared error of one estimator at one training size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmseRow {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub amse: f64,
}

/// Empirical across-replication variance of one estimator for one test gene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub mu: f64,
    pub emp_var: f64,
}

/// One ROC step point of one DE arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub arm: String,
    pub fpr: f64,
    pub tpr: f64,
}

/// Outcome of a simulation experiment with its provenance echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub replications: usize,
    pub skipped: usize,
    pub notes: Vec<String>,
    pub amse: Vec<AmseRow>,
    pub variance_curves: Vec<VariancePoint>,
    pub roc: Vec<RocRow>,
}

impl ExperimentReport {
    pub fn write_amse_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "estimator,n,amse")?;
        for row in &self.amse {
            writeln!(w, "{},{},{}", row.estimator.token(), row.n, row.amse)?;
        }
        Ok(())
    }

    pub fn write_variance_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "estimator,n,mu,emp_var")?;
        for row in &self.variance_curves {
            writeln!(
                w,
                "{},{},{},{}",
                row.estimator.token(),
                row.n,
                row.mu,
                row.emp_var
            )?;
        }
        Ok(())
    }

    pub fn write_roc_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "arm,fpr,tpr")?;
        for row in &self.roc {
            writeln!(w, "{},{},{}", row.arm, row.fpr, row.tpr)?;
        }
        Ok(())
    }

    /// ROC curve of one arm, reassembled from the report rows.
    pub fn roc_curve(&self, arm: &str) -> RocCurve {
        RocCurve {
            points: self
                .roc
                .iter()
                .filter(|r| r.arm == arm)
                .map(|r| RocPoint {
                    fpr: r.fpr,
                    tpr: r.tpr,
                })
                .collect(),
        }
    }
}
