//! The order-3 measurement-error system: sample moments over the
//! triple-covered set A, method-of-moments structural estimation, calibrated
//! per-gene expression estimates with leading-order variances, and residual
//! diagnostics. Bootstrap machinery lives in [`bootstrap`], the text fit
//! report in [`report`].

mod bootstrap;
mod report;

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{bootstrap_se, estimate_variance, VarianceMode};
pub use report::parse_report;

use crate::ingest::{GeneSet, MeasurementTable, Platform};
use crate::num::{real, to_f64, Real};

/// Means and n−1-denominator variances/covariances of (X, Y, Z) over the
/// genes in A. Accumulated in gene_id-sorted order so the result is exactly
/// invariant under row permutations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments<T> {
    pub x_bar: T,
    pub y_bar: T,
    pub z_bar: T,
    pub s_xx: T,
    pub s_yy: T,
    pub s_zz: T,
    pub s_xy: T,
    pub s_xz: T,
    pub s_yz: T,
    pub n: usize,
}

/// The seven structural parameters θ = (α₂, α₃, β₂, β₃, σ₁², σ₂², σ₃²):
/// platform shifts, scales and error variances. Also used as the ground
/// truth of simulation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralParams<T> {
    pub alpha2: T,
    pub alpha3: T,
    pub beta2: T,
    pub beta3: T,
    pub sigma1_sq: T,
    pub sigma2_sq: T,
    pub sigma3_sq: T,
}

impl<T: Real> StructuralParams<T> {
    pub const NAMES: [&'static str; 7] = [
        "alpha2",
        "alpha3",
        "beta2",
        "beta3",
        "sigma1_sq",
        "sigma2_sq",
        "sigma3_sq",
    ];

    pub fn as_array(&self) -> [T; 7] {
        [
            self.alpha2,
            self.alpha3,
            self.beta2,
            self.beta3,
            self.sigma1_sq,
            self.sigma2_sq,
            self.sigma3_sq,
        ]
    }

    pub fn from_array(a: [T; 7]) -> Self {
        StructuralParams {
            alpha2: a[0],
            alpha3: a[1],
            beta2: a[2],
            beta3: a[3],
            sigma1_sq: a[4],
            sigma2_sq: a[5],
            sigma3_sq: a[6],
        }
    }

    pub fn variances(&self) -> [T; 3] {
        [self.sigma1_sq, self.sigma2_sq, self.sigma3_sq]
    }

    pub fn all_variances_positive(&self) -> bool {
        self.variances().iter().all(|&v| v > T::zero())
    }

    /// Precision-weighted GLS combination of all three measurements. A
    /// variance of exactly zero is the exact-measurement limit: all weight
    /// moves to the exact channels.
    pub fn estimate_xyz(&self, x: T, y: T, z: T) -> T {
        if self.sigma1_sq == T::zero()
            || self.sigma2_sq == T::zero()
            || self.sigma3_sq == T::zero()
        {
            return exact_channel_mean(&[
                (self.sigma1_sq, x),
                (self.sigma2_sq, (y - self.alpha2) / self.beta2),
                (self.sigma3_sq, (z - self.alpha3) / self.beta3),
            ]);
        }
        let num = x / self.sigma1_sq
            + self.beta2 * (y - self.alpha2) / self.sigma2_sq
            + self.beta3 * (z - self.alpha3) / self.sigma3_sq;
        let den = T::one() / self.sigma1_sq
            + self.beta2 * self.beta2 / self.sigma2_sq
            + self.beta3 * self.beta3 / self.sigma3_sq;
        num / den
    }

    /// GLS combination of the microarray and RNA-Seq measurements.
    pub fn estimate_yz(&self, y: T, z: T) -> T {
        if self.sigma2_sq == T::zero() || self.sigma3_sq == T::zero() {
            return exact_channel_mean(&[
                (self.sigma2_sq, (y - self.alpha2) / self.beta2),
                (self.sigma3_sq, (z - self.alpha3) / self.beta3),
            ]);
        }
        let num = self.beta2 * (y - self.alpha2) / self.sigma2_sq
            + self.beta3 * (z - self.alpha3) / self.sigma3_sq;
        let den =
            self.beta2 * self.beta2 / self.sigma2_sq + self.beta3 * self.beta3 / self.sigma3_sq;
        num / den
    }

    /// Affine inverse of the RNA-Seq measurement model.
    pub fn estimate_z(&self, z: T) -> T {
        (z - self.alpha3) / self.beta3
    }
}

/// Slope used to centre the RNA-Seq intercept estimate α̂₃ = z̄ − slope·x̄.
///
/// `Beta3` pairs the intercept with its own platform's slope and is the
/// default; `Beta2` reproduces the alternative convention that centres with
/// the microarray slope instead. Both are exposed so results under either
/// convention can be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alpha3Slope {
    #[default]
    Beta3,
    Beta2,
}

impl Alpha3Slope {
    pub fn token(self) -> &'static str {
        match self {
            Alpha3Slope::Beta3 => "beta3",
            Alpha3Slope::Beta2 => "beta2",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "beta3" => Some(Alpha3Slope::Beta3),
            "beta2" => Some(Alpha3Slope::Beta2),
            _ => None,
        }
    }
}

/// Knobs for the structural fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FitOptions {
    pub alpha3_slope: Alpha3Slope,
}

/// Diagnostic flags attached to a fit instead of silently repairing it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitWarning {
    /// A method-of-moments error-variance estimate came out negative. The
    /// estimate is kept as-is; truncating it would hide an unreliable fit or
    /// a model violation.
    NegativeVariance(Platform),
}

impl FitWarning {
    pub fn component(&self) -> &'static str {
        match self {
            FitWarning::NegativeVariance(Platform::Pcr) => "sigma1_sq",
            FitWarning::NegativeVariance(Platform::Microarray) => "sigma2_sq",
            FitWarning::NegativeVariance(Platform::RnaSeq) => "sigma3_sq",
        }
    }
}

impl fmt::Display for FitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NEGATIVE_VARIANCE:{}", self.component())
    }
}

/// A fitted structural model: parameter estimates, the moments they came
/// from, optional bootstrap standard errors and the spread diagnostic
/// Δ̂ = s_xx − σ̂₁² (the estimated spread of the true expression levels
/// in A; larger means better-determined slopes).
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralFit<T> {
    pub params: StructuralParams<T>,
    pub moments: SampleMoments<T>,
    pub mu_spread: T,
    pub alpha3_slope: Alpha3Slope,
    pub se: Option<[T; 7]>,
    pub warnings: Vec<FitWarning>,
}

impl<T: Real> StructuralFit<T> {
    pub fn n(&self) -> usize {
        self.moments.n
    }
}

/// Which measurements back a calibrated estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationSource {
    Xyz,
    Yz,
    Z,
}

impl CalibrationSource {
    pub fn token(self) -> &'static str {
        match self {
            CalibrationSource::Xyz => "xyz",
            CalibrationSource::Yz => "yz",
            CalibrationSource::Z => "z",
        }
    }

    pub fn for_set(set: GeneSet) -> Self {
        match set {
            GeneSet::A => CalibrationSource::Xyz,
            GeneSet::BMinusA => CalibrationSource::Yz,
            GeneSet::CMinusB => CalibrationSource::Z,
        }
    }
}

impl fmt::Display for CalibrationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Calibrated expression estimate on the qRT-PCR scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedEstimate<T> {
    pub gene_id: String,
    pub mu_hat: T,
    pub variance: T,
    pub se: T,
    pub source: CalibrationSource,
}

/// Leading-order variances of the three calibrated estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents<T> {
    pub gamma_a: T,
    pub gamma_ba: T,
    pub gamma_cb: T,
}

/// Per-gene residual triple over A: observation minus fitted value on each
/// platform's own scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow<T> {
    pub gene_id: String,
    pub e1: T,
    pub e2: T,
    pub e3: T,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("set A has {found} gene(s) but {needed} are required")]
    InsufficientData { needed: usize, found: usize },
    #[error("degenerate covariance: sample moment {moment} vanishes")]
    DegenerateCovariance { moment: &'static str },
    #[error(
        "calibration blocked: variance estimate {component} = {value} is not positive on the \
         {path} path; collect more genes in A or revisit the model assumptions"
    )]
    CalibrationBlocked {
        component: &'static str,
        value: f64,
        path: &'static str,
    },
    #[error("variance component {component} = {value} is not positive")]
    NonPositiveVariance { component: &'static str, value: f64 },
    #[error("slope {slope} is zero")]
    ZeroSlope { slope: &'static str },
    #[error("{what} requires at least {min} replicates, got {got}")]
    TooFewReplicates {
        what: &'static str,
        min: usize,
        got: usize,
    },
    #[error(
        "bootstrap unstable: {discarded} of {total} replicates hit a degenerate or blocked refit \
         (more than 10%)"
    )]
    BootstrapUnstable { discarded: usize, total: usize },
    #[error("gene {gene_id} has no calibrated estimate from all three platforms")]
    MissingCalibration { gene_id: String },
    #[error("fit report line {line}: {message}")]
    ReportSyntax { line: usize, message: String },
}

/// Sample moments of (X, Y, Z) over the genes in A. Requires n ≥ 2.
pub fn compute_moments<T: Real>(table: &MeasurementTable<T>) -> Result<SampleMoments<T>, ModelError> {
    let mut rows: Vec<(&str, T, T, T)> = table.iter_a().collect();
    if rows.len() < 2 {
        return Err(ModelError::InsufficientData {
            needed: 2,
            found: rows.len(),
        });
    }
    rows.sort_by(|a, b| a.0.cmp(b.0));
    let n = rows.len();
    let count = real::<T>(n as f64);

    let mut x_bar = T::zero();
    let mut y_bar = T::zero();
    let mut z_bar = T::zero();
    for &(_, x, y, z) in &rows {
        x_bar += x;
        y_bar += y;
        z_bar += z;
    }
    x_bar /= count;
    y_bar /= count;
    z_bar /= count;

    let mut s = [T::zero(); 6]; // xx, yy, zz, xy, xz, yz
    for &(_, x, y, z) in &rows {
        let dx = x - x_bar;
        let dy = y - y_bar;
        let dz = z - z_bar;
        s[0] += dx * dx;
        s[1] += dy * dy;
        s[2] += dz * dz;
        s[3] += dx * dy;
        s[4] += dx * dz;
        s[5] += dy * dz;
    }
    let denom = count - T::one();
    Ok(SampleMoments {
        x_bar,
        y_bar,
        z_bar,
        s_xx: s[0] / denom,
        s_yy: s[1] / denom,
        s_zz: s[2] / denom,
        s_xy: s[3] / denom,
        s_xz: s[4] / denom,
        s_yz: s[5] / denom,
        n,
    })
}

/// Relative tolerance below which a covariance denominator counts as zero.
const DEGENERATE_REL_TOL: f64 = 1e-12;

/// Method-of-moments estimates of the structural parameters from the sample
/// moments of set A. Requires n ≥ 4; negative variance estimates are
/// returned as-is with a `NEGATIVE_VARIANCE` warning.
pub fn fit_structural<T: Real>(
    moments: &SampleMoments<T>,
    options: &FitOptions,
) -> Result<StructuralFit<T>, ModelError> {
    if moments.n < 4 {
        return Err(ModelError::InsufficientData {
            needed: 4,
            found: moments.n,
        });
    }
    let scale = moments.s_xx.max(moments.s_yy).max(moments.s_zz);
    let tol = real::<T>(DEGENERATE_REL_TOL) * scale;
    for (value, name) in [
        (moments.s_xy, "s_xy"),
        (moments.s_xz, "s_xz"),
        (moments.s_yz, "s_yz"),
    ] {
        if value.abs() <= tol {
            return Err(ModelError::DegenerateCovariance { moment: name });
        }
    }

    let beta2 = moments.s_yz / moments.s_xz;
    let beta3 = moments.s_yz / moments.s_xy;
    let alpha2 = moments.y_bar - beta2 * moments.x_bar;
    let alpha3_slope_value = match options.alpha3_slope {
        Alpha3Slope::Beta3 => beta3,
        Alpha3Slope::Beta2 => beta2,
    };
    let alpha3 = moments.z_bar - alpha3_slope_value * moments.x_bar;
    let sigma1_sq = moments.s_xx - moments.s_xy * moments.s_xz / moments.s_yz;
    let sigma2_sq = moments.s_yy - moments.s_xy * moments.s_yz / moments.s_xz;
    let sigma3_sq = moments.s_zz - moments.s_yz * moments.s_xz / moments.s_xy;
    let mu_spread = moments.s_xx - sigma1_sq;

    let params = StructuralParams {
        alpha2,
        alpha3,
        beta2,
        beta3,
        sigma1_sq,
        sigma2_sq,
        sigma3_sq,
    };
    let mut warnings = Vec::new();
    for (value, platform) in [
        (sigma1_sq, Platform::Pcr),
        (sigma2_sq, Platform::Microarray),
        (sigma3_sq, Platform::RnaSeq),
    ] {
        if value < T::zero() {
            warnings.push(FitWarning::NegativeVariance(platform));
        }
    }

    Ok(StructuralFit {
        params,
        moments: *moments,
        mu_spread,
        alpha3_slope: options.alpha3_slope,
        se: None,
        warnings,
    })
}

fn require_nonnegative<T: Real>(
    value: T,
    component: &'static str,
    path: &'static str,
) -> Result<(), ModelError> {
    if value >= T::zero() {
        Ok(())
    } else {
        Err(ModelError::CalibrationBlocked {
            component,
            value: to_f64(value),
            path,
        })
    }
}

fn require_nonzero_slope<T: Real>(value: T, slope: &'static str) -> Result<(), ModelError> {
    if value != T::zero() {
        Ok(())
    } else {
        Err(ModelError::ZeroSlope { slope })
    }
}

/// Leading-order variance of the estimator used for each path, checking only
/// the components that path touches. A variance estimate of exactly zero is
/// the noiseless limit (the path becomes exact, γ = 0, via IEEE 1/0 = ∞);
/// a negative one blocks the path.
fn path_gamma<T: Real>(params: &StructuralParams<T>, set: GeneSet) -> Result<T, ModelError> {
    match set {
        GeneSet::A => {
            require_nonzero_slope(params.beta2, "beta2")?;
            require_nonzero_slope(params.beta3, "beta3")?;
            require_nonnegative(params.sigma1_sq, "sigma1_sq", "xyz")?;
            require_nonnegative(params.sigma2_sq, "sigma2_sq", "xyz")?;
            require_nonnegative(params.sigma3_sq, "sigma3_sq", "xyz")?;
            Ok(T::one()
                / (T::one() / params.sigma1_sq
                    + params.beta2 * params.beta2 / params.sigma2_sq
                    + params.beta3 * params.beta3 / params.sigma3_sq))
        }
        GeneSet::BMinusA => {
            require_nonzero_slope(params.beta2, "beta2")?;
            require_nonzero_slope(params.beta3, "beta3")?;
            require_nonnegative(params.sigma2_sq, "sigma2_sq", "yz")?;
            require_nonnegative(params.sigma3_sq, "sigma3_sq", "yz")?;
            Ok(T::one()
                / (params.beta2 * params.beta2 / params.sigma2_sq
                    + params.beta3 * params.beta3 / params.sigma3_sq))
        }
        GeneSet::CMinusB => {
            require_nonzero_slope(params.beta3, "beta3")?;
            require_nonnegative(params.sigma3_sq, "sigma3_sq", "z")?;
            Ok(params.sigma3_sq / (params.beta3 * params.beta3))
        }
    }
}

/// GLS limit when at least one channel has a variance estimate of exactly
/// zero: all weight goes to the exact channels, in equal parts.
fn exact_channel_mean<T: Real>(channels: &[(T, T)]) -> T {
    let mut sum = T::zero();
    let mut count = T::zero();
    for &(sigma_sq, value) in channels {
        if sigma_sq == T::zero() {
            sum += value;
            count += T::one();
        }
    }
    sum / count
}

/// Generalized-least-squares calibration of every gene in the table onto the
/// qRT-PCR scale. A-genes combine all three measurements precision-weighted,
/// B−A genes combine microarray and RNA-Seq, C−B genes invert the RNA-Seq
/// model. The attached variance is the leading-order γ of the gene's path.
pub fn calibrate<T: Real>(
    table: &MeasurementTable<T>,
    fit: &StructuralFit<T>,
) -> Result<Vec<CalibratedEstimate<T>>, ModelError> {
    let p = &fit.params;
    let mut gammas: [Option<T>; 3] = [None, None, None];
    for (slot, set) in [GeneSet::A, GeneSet::BMinusA, GeneSet::CMinusB]
        .into_iter()
        .enumerate()
    {
        if table.rows().any(|(g, ..)| table.set_of(g) == Some(set)) {
            gammas[slot] = Some(path_gamma(p, set)?);
        }
    }

    let mut out = Vec::with_capacity(table.len());
    for (gene_id, x, y, z) in table.rows() {
        let set = match (x.is_some(), y.is_some()) {
            (true, _) => GeneSet::A,
            (false, true) => GeneSet::BMinusA,
            (false, false) => GeneSet::CMinusB,
        };
        let z = z.expect("table invariant: z always present");
        let mu_hat = match set {
            GeneSet::A => p.estimate_xyz(x.unwrap(), y.unwrap(), z),
            GeneSet::BMinusA => p.estimate_yz(y.unwrap(), z),
            GeneSet::CMinusB => p.estimate_z(z),
        };
        let variance = gammas[set as usize].expect("gamma computed for every populated set");
        out.push(CalibratedEstimate {
            gene_id: gene_id.to_string(),
            mu_hat,
            variance,
            se: variance.sqrt(),
            source: CalibrationSource::for_set(set),
        });
    }
    Ok(out)
}

/// Leading-order variances (γ_A, γ_{B−A}, γ_{C−B}) of the three calibrated
/// estimators. Requires all-positive variance components.
pub fn variance_leading<T: Real>(
    fit: &StructuralFit<T>,
) -> Result<VarianceComponents<T>, ModelError> {
    let p = &fit.params;
    for (value, component) in [
        (p.sigma1_sq, "sigma1_sq"),
        (p.sigma2_sq, "sigma2_sq"),
        (p.sigma3_sq, "sigma3_sq"),
    ] {
        if value <= T::zero() {
            return Err(ModelError::NonPositiveVariance {
                component,
                value: to_f64(value),
            });
        }
    }
    Ok(VarianceComponents {
        gamma_a: path_gamma(p, GeneSet::A)?,
        gamma_ba: path_gamma(p, GeneSet::BMinusA)?,
        gamma_cb: path_gamma(p, GeneSet::CMinusB)?,
    })
}

/// Raw residuals (e₁, e₂, e₃) over the genes in A, using the XYZ calibrated
/// estimates: e₁ = X − μ̂, e₂ = Y − α̂₂ − β̂₂μ̂, e₃ = Z − α̂₃ − β̂₃μ̂.
pub fn residuals<T: Real>(
    table: &MeasurementTable<T>,
    fit: &StructuralFit<T>,
    calibrated: &[CalibratedEstimate<T>],
) -> Result<Vec<ResidualRow<T>>, ModelError> {
    let mu: IndexMap<&str, T> = calibrated
        .iter()
        .filter(|c| c.source == CalibrationSource::Xyz)
        .map(|c| (c.gene_id.as_str(), c.mu_hat))
        .collect();
    let p = &fit.params;
    let mut out = Vec::new();
    for (gene_id, x, y, z) in table.iter_a() {
        let mu_hat = *mu
            .get(gene_id)
            .ok_or_else(|| ModelError::MissingCalibration {
                gene_id: gene_id.to_string(),
            })?;
        out.push(ResidualRow {
            gene_id: gene_id.to_string(),
            e1: x - mu_hat,
            e2: y - p.alpha2 - p.beta2 * mu_hat,
            e3: z - p.alpha3 - p.beta3 * mu_hat,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MeasurementTable;
    use approx::assert_relative_eq;

    fn table_from_xyz(xyz: &[(f64, f64, f64)]) -> MeasurementTable<f64> {
        MeasurementTable::from_rows(
            xyz.iter()
                .enumerate()
                .map(|(i, &(x, y, z))| (format!("g{:03}", i + 1), Some(x), Some(y), Some(z))),
        )
        .unwrap()
    }

    /// Values frozen from an independent spreadsheet-style computation of the
    /// moment formulas and the closed-form estimators.
    fn fixture_table() -> MeasurementTable<f64> {
        let x = [0.11, 1.31, 3.43, 4.38, 5.23, 7.47, 9.75, 10.85];
        let y = [8.23, 8.68, 10.46, 12.26, 10.73, 14.12, 14.06, 15.69];
        let z = [4.46, 6.11, 8.27, 10.33, 10.59, 13.51, 12.91, 15.35];
        let rows: Vec<(f64, f64, f64)> = (0..8).map(|i| (x[i], y[i], z[i])).collect();
        table_from_xyz(&rows)
    }

    #[test]
    fn moments_two_point_example() {
        let table = table_from_xyz(&[(0.0, 0.0, 0.0), (2.0, 2.0, 2.0)]);
        let m = compute_moments(&table).unwrap();
        assert_eq!((m.x_bar, m.y_bar, m.z_bar), (1.0, 1.0, 1.0));
        for s in [m.s_xx, m.s_yy, m.s_zz, m.s_xy, m.s_xz, m.s_yz] {
            assert_eq!(s, 2.0);
        }
    }

    #[test]
    fn moments_require_two_genes() {
        let table = table_from_xyz(&[(1.0, 1.0, 1.0)]);
        assert!(matches!(
            compute_moments(&table),
            Err(ModelError::InsufficientData { needed: 2, found: 1 })
        ));
    }

    #[test]
    fn moments_match_independent_oracle() {
        let m = compute_moments(&fixture_table()).unwrap();
        assert_relative_eq!(m.x_bar, 5.3162500000000001, max_relative = 1e-15);
        assert_relative_eq!(m.y_bar, 11.778749999999999, max_relative = 1e-15);
        assert_relative_eq!(m.z_bar, 10.19125, max_relative = 1e-15);
        assert_relative_eq!(m.s_xx, 14.645169642857139, max_relative = 1e-13);
        assert_relative_eq!(m.s_yy, 7.3214124999999992, max_relative = 1e-13);
        assert_relative_eq!(m.s_zz, 14.055955357142855, max_relative = 1e-13);
        assert_relative_eq!(m.s_xy, 9.9740374999999979, max_relative = 1e-13);
        assert_relative_eq!(m.s_xz, 13.913962499999998, max_relative = 1e-13);
        assert_relative_eq!(m.s_yz, 9.9024446428571409, max_relative = 1e-13);
    }

    #[test]
    fn fit_matches_independent_oracle() {
        let m = compute_moments(&fixture_table()).unwrap();
        let fit = fit_structural(&m, &FitOptions::default()).unwrap();
        let p = &fit.params;
        assert_relative_eq!(p.beta2, 0.71169119816566573, max_relative = 1e-13);
        assert_relative_eq!(p.beta3, 0.99282207860729854, max_relative = 1e-13);
        assert_relative_eq!(p.alpha2, 7.9952216677517782, max_relative = 1e-13);
        assert_relative_eq!(p.alpha3, 4.9131596246039493, max_relative = 1e-13);
        assert_relative_eq!(p.sigma1_sq, 0.6306117479339175, max_relative = 1e-11);
        assert_relative_eq!(p.sigma2_sq, 0.22297780107571974, max_relative = 1e-11);
        assert_relative_eq!(p.sigma3_sq, 0.24186618622885447, max_relative = 1e-11);
        assert_relative_eq!(fit.mu_spread, 14.014557894923222, max_relative = 1e-13);
        assert!(fit.warnings.is_empty());

        let compat = fit_structural(
            &m,
            &FitOptions {
                alpha3_slope: Alpha3Slope::Beta2,
            },
        )
        .unwrap();
        assert_relative_eq!(compat.params.alpha3, 6.4077216677517796, max_relative = 1e-13);
    }

    #[test]
    fn fit_recovers_noiseless_linear_data() {
        // X = μ, Y = 1 + 2μ, Z = μ over μ ∈ {0, 1, 2, 3, 4}.
        let rows: Vec<(f64, f64, f64)> =
            (0..5).map(|i| (i as f64, 1.0 + 2.0 * i as f64, i as f64)).collect();
        let table = table_from_xyz(&rows);
        let m = compute_moments(&table).unwrap();
        let fit = fit_structural(&m, &FitOptions::default()).unwrap();
        assert_eq!(fit.params.alpha2, 1.0);
        assert_eq!(fit.params.alpha3, 0.0);
        assert_eq!(fit.params.beta2, 2.0);
        assert_eq!(fit.params.beta3, 1.0);
        assert_eq!(fit.params.sigma1_sq, 0.0);
        assert_eq!(fit.params.sigma2_sq, 0.0);
        assert_eq!(fit.params.sigma3_sq, 0.0);
        assert!(fit.warnings.is_empty());

        // the alternative intercept convention centres with β̂₂ instead
        let compat = fit_structural(
            &m,
            &FitOptions {
                alpha3_slope: Alpha3Slope::Beta2,
            },
        )
        .unwrap();
        assert_eq!(compat.params.alpha3, -2.0);
    }

    #[test]
    fn fit_requires_four_genes() {
        let table = table_from_xyz(&[(0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (2.0, 2.0, 2.0)]);
        let m = compute_moments(&table).unwrap();
        assert!(matches!(
            fit_structural(&m, &FitOptions::default()),
            Err(ModelError::InsufficientData { needed: 4, .. })
        ));
    }

    #[test]
    fn constant_x_degenerates() {
        // constant X kills s_xy and s_xz
        let table = table_from_xyz(&[
            (1.0, 0.0, 0.5),
            (1.0, 1.0, 1.5),
            (1.0, 2.0, 2.5),
            (1.0, 3.0, 3.5),
        ]);
        let m = compute_moments(&table).unwrap();
        assert_eq!(m.s_xx, 0.0);
        match fit_structural(&m, &FitOptions::default()) {
            Err(ModelError::DegenerateCovariance { moment }) => assert_eq!(moment, "s_xy"),
            other => panic!("expected DegenerateCovariance, got {other:?}"),
        }
    }

    #[test]
    fn negative_variance_yields_warning() {
        // frozen fixture whose σ̂₁² estimate is negative
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.2, 4.8, 7.1, 9.0];
        let z = [0.5, 1.4, 2.6, 3.4, 4.6];
        let rows: Vec<(f64, f64, f64)> = (0..5).map(|i| (x[i], y[i], z[i])).collect();
        let m = compute_moments(&table_from_xyz(&rows)).unwrap();
        let fit = fit_structural(&m, &FitOptions::default()).unwrap();
        assert_relative_eq!(fit.params.sigma1_sq, -0.005925925925925668, max_relative = 1e-9);
        assert_eq!(fit.warnings, vec![FitWarning::NegativeVariance(Platform::Pcr)]);
        assert_eq!(fit.warnings[0].to_string(), "NEGATIVE_VARIANCE:sigma1_sq");
    }

    #[test]
    fn mu_spread_identity_is_exact() {
        let m = compute_moments(&fixture_table()).unwrap();
        let fit = fit_structural(&m, &FitOptions::default()).unwrap();
        assert_eq!(fit.mu_spread, m.s_xx - fit.params.sigma1_sq);
        assert_eq!(fit.params.sigma1_sq + fit.mu_spread, m.s_xx);
    }

    fn setting1_fit() -> StructuralFit<f64> {
        let params = StructuralParams {
            alpha2: 9.0,
            alpha3: 5.0,
            beta2: 0.75,
            beta3: 1.0,
            sigma1_sq: 0.8,
            sigma2_sq: 1.2,
            sigma3_sq: 1.0,
        };
        StructuralFit {
            params,
            moments: SampleMoments {
                x_bar: 0.0,
                y_bar: 9.0,
                z_bar: 5.0,
                s_xx: 25.8,
                s_yy: 15.2625,
                s_zz: 26.0,
                s_xy: 18.75,
                s_xz: 25.0,
                s_yz: 18.75,
                n: 300,
            },
            mu_spread: 25.0,
            alpha3_slope: Alpha3Slope::Beta3,
            se: None,
            warnings: Vec::new(),
        }
    }

    #[test]
    fn variance_leading_matches_hand_arithmetic() {
        let v = variance_leading(&setting1_fit()).unwrap();
        assert_relative_eq!(v.gamma_a, 0.367816091954023, max_relative = 1e-12);
        assert_relative_eq!(v.gamma_ba, 0.6808510638297872, max_relative = 1e-12);
        assert_eq!(v.gamma_cb, 1.0);
    }

    #[test]
    fn variance_leading_limit_of_uninformative_platforms() {
        let mut fit = setting1_fit();
        fit.params.sigma2_sq = 1e12;
        fit.params.sigma3_sq = 1e12;
        let v = variance_leading(&fit).unwrap();
        assert_relative_eq!(v.gamma_a, fit.params.sigma1_sq, max_relative = 1e-9);
    }

    #[test]
    fn variance_leading_ordering() {
        let v = variance_leading(&setting1_fit()).unwrap();
        assert!(v.gamma_a <= v.gamma_ba && v.gamma_ba <= v.gamma_cb);
        assert!(v.gamma_a < 0.8);
    }

    #[test]
    fn variance_leading_rejects_non_positive() {
        let mut fit = setting1_fit();
        fit.params.sigma2_sq = -0.1;
        assert!(matches!(
            variance_leading(&fit),
            Err(ModelError::NonPositiveVariance {
                component: "sigma2_sq",
                ..
            })
        ));
    }

    #[test]
    fn calibrate_consistent_observations_hit_fixed_point() {
        let fit = setting1_fit();
        // X = c, Y = α₂ + β₂c, Z = α₃ + β₃c with c = 2
        let table = MeasurementTable::from_rows(vec![(
            "g1",
            Some(2.0),
            Some(10.5),
            Some(7.0),
        )])
        .unwrap();
        let cal = calibrate(&table, &fit).unwrap();
        assert_relative_eq!(cal[0].mu_hat, 2.0, max_relative = 1e-12);
        assert_eq!(cal[0].source, CalibrationSource::Xyz);
        assert_relative_eq!(cal[0].variance, 0.367816091954023, max_relative = 1e-12);
    }

    #[test]
    fn calibrate_z_path_is_affine_inverse() {
        let fit = setting1_fit();
        let table = MeasurementTable::from_rows(vec![("g1", None, None, Some(5.0))]).unwrap();
        let cal = calibrate(&table, &fit).unwrap();
        assert_eq!(cal[0].mu_hat, 0.0);
        assert_eq!(cal[0].source, CalibrationSource::Z);
        assert_eq!(cal[0].variance, 1.0);
    }

    #[test]
    fn calibrate_matches_oracle_estimates() {
        // expected values frozen from the independent fixture computation
        let m = compute_moments(&fixture_table()).unwrap();
        let fit = fit_structural(&m, &FitOptions::default()).unwrap();
        let cal = calibrate(&fixture_table(), &fit).unwrap();
        assert_relative_eq!(cal[0].mu_hat, -0.11803804018574111, max_relative = 1e-10);
        assert_relative_eq!(cal[4].mu_hat, 5.0833750805667108, max_relative = 1e-10);
    }

    #[test]
    fn calibrate_blocks_required_negative_path() {
        let mut fit = setting1_fit();
        fit.params.sigma2_sq = -0.5;
        let a_table =
            MeasurementTable::from_rows(vec![("g1", Some(1.0), Some(9.5), Some(6.0))]).unwrap();
        match calibrate(&a_table, &fit) {
            Err(ModelError::CalibrationBlocked { component, path, .. }) => {
                assert_eq!(component, "sigma2_sq");
                assert_eq!(path, "xyz");
            }
            other => panic!("expected CalibrationBlocked, got {other:?}"),
        }

        // ...but a table that only needs the z path still calibrates
        let z_table = MeasurementTable::from_rows(vec![("g1", None, None, Some(6.0))]).unwrap();
        let cal = calibrate(&z_table, &fit).unwrap();
        assert_eq!(cal[0].mu_hat, 1.0);
    }

    #[test]
    fn residuals_vanish_on_consistent_data() {
        let fit = setting1_fit();
        let table =
            MeasurementTable::from_rows(vec![("g1", Some(2.0), Some(10.5), Some(7.0))]).unwrap();
        let cal = calibrate(&table, &fit).unwrap();
        let res = residuals(&table, &fit, &cal).unwrap();
        assert_relative_eq!(res[0].e1, 0.0, epsilon = 1e-12);
        assert_relative_eq!(res[0].e2, 0.0, epsilon = 1e-12);
        assert_relative_eq!(res[0].e3, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn residuals_vanish_on_noiseless_fit() {
        let rows: Vec<(f64, f64, f64)> =
            (0..5).map(|i| (i as f64, 1.0 + 2.0 * i as f64, i as f64)).collect();
        let table = table_from_xyz(&rows);
        let m = compute_moments(&table).unwrap();
        let fit = fit_structural(&m, &FitOptions::default()).unwrap();
        // σ̂² = 0 is the exact-measurement limit: μ̂ = X, zero variance
        let cal = calibrate(&table, &fit).unwrap();
        for (i, c) in cal.iter().enumerate() {
            assert_eq!(c.mu_hat, i as f64);
            assert_eq!(c.variance, 0.0);
        }
        let res = residuals(&table, &fit, &cal).unwrap();
        for r in res {
            assert_eq!((r.e1, r.e2, r.e3), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn moments_are_permutation_invariant_exactly() {
        let table = fixture_table();
        let mut rows: Vec<(String, Option<f64>, Option<f64>, Option<f64>)> = table
            .rows()
            .map(|(g, x, y, z)| (g.to_string(), x, y, z))
            .collect();
        rows.reverse();
        rows.swap(0, 3);
        let permuted = MeasurementTable::from_rows(rows).unwrap();
        assert_eq!(
            compute_moments(&table).unwrap(),
            compute_moments(&permuted).unwrap()
        );
    }
}
