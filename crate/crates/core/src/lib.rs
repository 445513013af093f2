//! Comparative calibration of gene expression measurements from qRT-PCR,
//! microarray and RNA-Seq with a functional measurement-error system of
//! order 3.
//!
//! The three platforms measure nested gene sets A ⊂ B ⊂ C on a common log2
//! scale. qRT-PCR is modelled as unbiased (`X = μ + ε₁`) while microarray and
//! RNA-Seq carry affine platform biases (`Y = α₂ + β₂μ + ε₂`,
//! `Z = α₃ + β₃μ + ε₃`). The crate estimates the seven structural parameters
//! by the method of moments on the triple-covered set A, combines the
//! available measurements of each gene into a precision-weighted calibrated
//! estimate on the qRT-PCR scale, and provides differential-expression
//! testing, residual diagnostics and seeded simulation harnesses on top.
//!
//! All numeric code is generic over the scalar type through [`num::Real`];
//! `f64` aliases for the main data types live at the crate root.

pub mod ingest;
pub mod inference;
pub mod model;
pub mod num;
pub mod rng;
pub mod sim;

pub use ingest::{GeneSet, MeasurementTable, Platform, RawRecord, Scale};
pub use model::{
    CalibratedEstimate, CalibrationSource, FitOptions, SampleMoments, StructuralFit,
    StructuralParams, VarianceComponents,
};

/// `f64` measurement table, the type every CLI path works with.
pub type MeasurementTable64 = MeasurementTable<f64>;
/// Single-precision measurement table.
pub type MeasurementTable32 = MeasurementTable<f32>;
/// `f64` structural fit.
pub type StructuralFit64 = StructuralFit<f64>;
/// Single-precision structural fit.
pub type StructuralFit32 = StructuralFit<f32>;
/// `f64` structural parameter vector.
pub type StructuralParams64 = StructuralParams<f64>;
