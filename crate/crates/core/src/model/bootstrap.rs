//! Parametric bootstrap for the structural fit and the calibrated estimates.
//!
//! Replicates are simulated from the fitted system with the calibrated
//! per-gene expression levels held fixed (the expression levels are model
//! constants, not random draws), refit, and reduced in replicate-index order
//! so results depend only on `(seed, reps)`, not on thread schedule.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{
    calibrate, compute_moments, fit_structural, CalibratedEstimate, FitOptions, ModelError,
    StructuralFit, StructuralParams,
};
use crate::ingest::MeasurementTable;
use crate::num::{real, to_f64, Real};
use crate::rng::stream_rng;

/// Variance attached to calibrated estimates: the closed-form leading-order
/// γ, or a full-pipeline bootstrap that captures the finite-n inflation away
/// from the centre of the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMode {
    Leading,
    Bootstrap,
}

const MIN_BOOTSTRAP_REPS: usize = 100;
/// Abort when more than this fraction of replicates fail to refit.
const MAX_DISCARD_FRACTION: f64 = 0.10;

fn simulate_from_fit<T, R>(
    table: &MeasurementTable<T>,
    params: &StructuralParams<T>,
    mu_hat: &[T],
    rng: &mut R,
) -> MeasurementTable<T>
where
    T: Real,
    StandardNormal: Distribution<T>,
    R: Rng,
{
    let sd1 = params.sigma1_sq.sqrt();
    let sd2 = params.sigma2_sq.sqrt();
    let sd3 = params.sigma3_sq.sqrt();
    let rows: Vec<(String, Option<T>, Option<T>, Option<T>)> = table
        .rows()
        .zip(mu_hat)
        .map(|((gene_id, x, y, _), &mu)| {
            let draw = |rng: &mut R| -> T { StandardNormal.sample(rng) };
            let x = x.map(|_| mu + sd1 * draw(rng));
            let y = y.map(|_| params.alpha2 + params.beta2 * mu + sd2 * draw(rng));
            let z = Some(params.alpha3 + params.beta3 * mu + sd3 * draw(rng));
            (gene_id.to_string(), x, y, z)
        })
        .collect();
    MeasurementTable::from_rows(rows).expect("simulated table keeps the nesting pattern")
}

fn check_bootstrap_preconditions<T: Real>(
    fit: &StructuralFit<T>,
    reps: usize,
) -> Result<(), ModelError> {
    if reps < MIN_BOOTSTRAP_REPS {
        return Err(ModelError::TooFewReplicates {
            what: "parametric bootstrap",
            min: MIN_BOOTSTRAP_REPS,
            got: reps,
        });
    }
    for (value, component) in [
        (fit.params.sigma1_sq, "sigma1_sq"),
        (fit.params.sigma2_sq, "sigma2_sq"),
        (fit.params.sigma3_sq, "sigma3_sq"),
    ] {
        if value <= T::zero() {
            return Err(ModelError::NonPositiveVariance {
                component,
                value: to_f64(value),
            });
        }
    }
    Ok(())
}

/// Per-gene estimator formulas applied without the user-facing positivity
/// guards. Returns `None` (replicate discarded) if any estimate fails to be
/// finite, which covers genuinely degenerate weight cancellations.
fn estimates_unchecked<T: Real>(
    table: &MeasurementTable<T>,
    params: &StructuralParams<T>,
) -> Option<Vec<T>> {
    let mut out = Vec::with_capacity(table.len());
    for (_, x, y, z) in table.rows() {
        let z = z.expect("z always present");
        let mu = match (x, y) {
            (Some(x), Some(y)) => params.estimate_xyz(x, y, z),
            (None, Some(y)) => params.estimate_yz(y, z),
            (None, None) => params.estimate_z(z),
            (Some(_), None) => unreachable!("nesting invariant"),
        };
        if !mu.is_finite() {
            return None;
        }
        out.push(mu);
    }
    Some(out)
}

fn sample_sd<T: Real>(values: &[T]) -> T {
    let count = real::<T>(values.len() as f64);
    let mean = values.iter().copied().sum::<T>() / count;
    let ss = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<T>();
    (ss / (count - T::one())).sqrt()
}

/// Component-wise bootstrap standard errors of the seven structural
/// estimates, from `reps` parametric refits. Replicates whose refit hits a
/// degenerate covariance are discarded; more than 10% discards is an error.
pub fn bootstrap_se<T>(
    table: &MeasurementTable<T>,
    fit: &StructuralFit<T>,
    reps: usize,
    seed: u64,
) -> Result<[T; 7], ModelError>
where
    T: Real,
    StandardNormal: Distribution<T>,
{
    check_bootstrap_preconditions(fit, reps)?;
    let mu_hat: Vec<T> = calibrate(table, fit)?.into_iter().map(|c| c.mu_hat).collect();
    let options = FitOptions {
        alpha3_slope: fit.alpha3_slope,
    };

    let replicates: Vec<Option<[T; 7]>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, "bootstrap/theta", rep);
            let sim = simulate_from_fit(table, &fit.params, &mu_hat, &mut rng);
            let moments = compute_moments(&sim).ok()?;
            let refit = fit_structural(&moments, &options).ok()?;
            Some(refit.params.as_array())
        })
        .collect();

    let kept: Vec<[T; 7]> = replicates.into_iter().flatten().collect();
    let discarded = reps - kept.len();
    if (discarded as f64) > MAX_DISCARD_FRACTION * reps as f64 {
        return Err(ModelError::BootstrapUnstable {
            discarded,
            total: reps,
        });
    }

    let mut out = [T::zero(); 7];
    for (i, slot) in out.iter_mut().enumerate() {
        let column: Vec<T> = kept.iter().map(|theta| theta[i]).collect();
        *slot = sample_sd(&column);
    }
    Ok(out)
}

/// Per-gene variance of the calibrated estimate.
///
/// `Leading` returns the path γ for each gene. `Bootstrap` resamples the
/// whole pipeline — new measurements, refit θ, recalibrate — and returns the
/// per-gene sample variance of the replicated estimates, which picks up the
/// structural-estimation term that grows with the gene's distance from the
/// training-set centre.
pub fn estimate_variance<T>(
    fit: &StructuralFit<T>,
    table: &MeasurementTable<T>,
    mode: VarianceMode,
    reps: usize,
    seed: u64,
) -> Result<indexmap::IndexMap<String, T>, ModelError>
where
    T: Real,
    StandardNormal: Distribution<T>,
{
    match mode {
        VarianceMode::Leading => {
            let calibrated = calibrate(table, fit)?;
            Ok(calibrated
                .into_iter()
                .map(|c| (c.gene_id, c.variance))
                .collect())
        }
        VarianceMode::Bootstrap => {
            check_bootstrap_preconditions(fit, reps)?;
            let baseline: Vec<CalibratedEstimate<T>> = calibrate(table, fit)?;
            let mu_hat: Vec<T> = baseline.iter().map(|c| c.mu_hat).collect();
            let options = FitOptions {
                alpha3_slope: fit.alpha3_slope,
            };

            let replicates: Vec<Option<Vec<T>>> = (0..reps as u64)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = stream_rng(seed, "bootstrap/mu", rep);
                    let sim = simulate_from_fit(table, &fit.params, &mu_hat, &mut rng);
                    let moments = compute_moments(&sim).ok()?;
                    let refit = fit_structural(&moments, &options).ok()?;
                    // the refit θ̂* is kept even when a variance estimate is
                    // negative: truncating those draws would bias the spread
                    // of the replicated estimates downward
                    let estimates = estimates_unchecked(&sim, &refit.params)?;
                    Some(estimates)
                })
                .collect();

            let kept: Vec<Vec<T>> = replicates.into_iter().flatten().collect();
            let discarded = reps - kept.len();
            if (discarded as f64) > MAX_DISCARD_FRACTION * reps as f64 {
                return Err(ModelError::BootstrapUnstable {
                    discarded,
                    total: reps,
                });
            }

            let mut out = indexmap::IndexMap::with_capacity(baseline.len());
            for (g, cal) in baseline.iter().enumerate() {
                let column: Vec<T> = kept.iter().map(|rep| rep[g]).collect();
                let sd = sample_sd(&column);
                out.insert(cal.gene_id.clone(), sd * sd);
            }
            Ok(out)
        }
    }
}
