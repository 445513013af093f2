//! Training-size sweep for calibrated-estimator accuracy.
//!
//! Protocol: the true expression levels of one training pool (max of the n
//! grid) and one testing pool are drawn once per experiment; every
//! replication redraws only the measurement noise, fits the structural model
//! on the first n training genes and calibrates the whole testing pool three
//! ways, alongside the raw qRT-PCR baseline. Per (estimator, n) the report
//! carries the average MSE against the true levels, and per test gene the
//! across-replication variance of the estimate (the variance curve).

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::generate::{draw_mu, measure_all_platforms};
use super::{AmseRow, EstimatorKind, ExperimentReport, SimConfig, SimError, VariancePoint};
use crate::model::{fit_structural, FitOptions, SampleMoments, StructuralParams};
use crate::num::{real, to_f64, Real};
use crate::rng::stream_rng;

/// Moments of pre-aligned slices, the order-sensitive core used on training
/// prefixes.
fn moments_from_slices<T: Real>(x: &[T], y: &[T], z: &[T]) -> SampleMoments<T> {
    let n = x.len();
    let count = real::<T>(n as f64);
    let mean = |v: &[T]| v.iter().copied().sum::<T>() / count;
    let (x_bar, y_bar, z_bar) = (mean(x), mean(y), mean(z));
    let mut s = [T::zero(); 6];
    for i in 0..n {
        let dx = x[i] - x_bar;
        let dy = y[i] - y_bar;
        let dz = z[i] - z_bar;
        s[0] += dx * dx;
        s[1] += dy * dy;
        s[2] += dz * dz;
        s[3] += dx * dy;
        s[4] += dx * dz;
        s[5] += dy * dz;
    }
    let denom = count - T::one();
    SampleMoments {
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
    }
}

/// Per-replication estimates for one n: [xyz, yz, z] per test gene.
type RepEstimates<T> = Option<[Vec<T>; 3]>;

struct RepOutcome<T> {
    per_n: Vec<RepEstimates<T>>,
    x_test: Vec<T>,
}

fn run_replication<T>(
    config: &SimConfig<T>,
    mu_train: &[T],
    mu_test: &[T],
    rep: u64,
) -> RepOutcome<T>
where
    T: Real,
    StandardNormal: Distribution<T>,
{
    let mut train_rng = stream_rng(config.seed, "accuracy/train", rep);
    let (xt, yt, zt) = measure_all_platforms(&config.theta, mu_train, &mut train_rng);
    let mut test_rng = stream_rng(config.seed, "accuracy/test", rep);
    let (xs, ys, zs) = measure_all_platforms(&config.theta, mu_test, &mut test_rng);

    let options = FitOptions::default();
    let per_n = config
        .n_train_grid
        .iter()
        .map(|&n| {
            let moments = moments_from_slices(&xt[..n], &yt[..n], &zt[..n]);
            let fit = match fit_structural(&moments, &options) {
                Ok(fit) if fit.params.all_variances_positive() => fit,
                _ => return None,
            };
            let p: &StructuralParams<T> = &fit.params;
            let mut xyz = Vec::with_capacity(mu_test.len());
            let mut yz = Vec::with_capacity(mu_test.len());
            let mut z_only = Vec::with_capacity(mu_test.len());
            for g in 0..mu_test.len() {
                xyz.push(p.estimate_xyz(xs[g], ys[g], zs[g]));
                yz.push(p.estimate_yz(ys[g], zs[g]));
                z_only.push(p.estimate_z(zs[g]));
            }
            Some([xyz, yz, z_only])
        })
        .collect();

    RepOutcome { per_n, x_test: xs }
}

/// Run the accuracy experiment described by `config`.
///
/// Replications whose fit at some n is degenerate (or produces a
/// non-positive variance estimate) are skipped for that n and counted; more
/// than 10% skipped attempts fails the experiment.
pub fn run_accuracy_experiment<T>(config: &SimConfig<T>) -> Result<ExperimentReport, SimError>
where
    T: Real + Serialize,
    StandardNormal: Distribution<T>,
{
    config.validate()?;
    let max_n = *config.n_train_grid.last().expect("validated non-empty");

    let mut mu_train_rng = stream_rng(config.seed, "accuracy/mu-train", 0);
    let mu_train = draw_mu(&config.mu_law, max_n, &mut mu_train_rng)?;
    let mut mu_test_rng = stream_rng(config.seed, "accuracy/mu-test", 0);
    let mu_test = match &config.mu_law {
        law @ super::MuLaw::Normal { .. } => draw_mu(law, config.n_test, &mut mu_test_rng)?,
        super::MuLaw::Fixed(values) => {
            if values.len() < config.n_test {
                return Err(SimError::InvalidConfig {
                    field: "mu_law".into(),
                    message: format!(
                        "fixed list has {} values, {} needed for the test pool",
                        values.len(),
                        config.n_test
                    ),
                });
            }
            values[..config.n_test].to_vec()
        }
    };

    let outcomes: Vec<RepOutcome<T>> = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(config, &mu_train, &mu_test, rep))
        .collect();

    let n_grid = &config.n_train_grid;
    let n_test = config.n_test;
    let mut skipped = 0usize;

    let mut amse = Vec::new();
    let mut variance_curves = Vec::new();
    for (ni, &n) in n_grid.iter().enumerate() {
        let kept: Vec<&RepOutcome<T>> = outcomes
            .iter()
            .filter(|o| o.per_n[ni].is_some())
            .collect();
        skipped += outcomes.len() - kept.len();
        if kept.is_empty() {
            continue;
        }
        let kept_count = kept.len() as f64;

        for (which, estimator) in EstimatorKind::CALIBRATED.into_iter().enumerate() {
            let mut total_sq = 0.0f64;
            for gene in 0..n_test {
                let truth = to_f64(mu_test[gene]);
                let mut sum = 0.0f64;
                let mut sumsq = 0.0f64;
                for outcome in &kept {
                    let est =
                        to_f64(outcome.per_n[ni].as_ref().expect("kept")[which][gene]);
                    sum += est;
                    sumsq += est * est;
                    total_sq += (est - truth) * (est - truth);
                }
                let emp_var = if kept.len() > 1 {
                    (sumsq - sum * sum / kept_count) / (kept_count - 1.0)
                } else {
                    0.0
                };
                variance_curves.push(VariancePoint {
                    estimator,
                    n,
                    mu: truth,
                    emp_var,
                });
            }
            amse.push(AmseRow {
                estimator,
                n,
                amse: total_sq / (kept_count * n_test as f64),
            });
        }

        // raw qRT-PCR baseline over the same kept replications
        let mut total_sq = 0.0f64;
        for outcome in &kept {
            for gene in 0..n_test {
                let err = to_f64(outcome.x_test[gene]) - to_f64(mu_test[gene]);
                total_sq += err * err;
            }
        }
        amse.push(AmseRow {
            estimator: EstimatorKind::XBaseline,
            n,
            amse: total_sq / (kept_count * n_test as f64),
        });
    }

    let total_attempts = config.replications * n_grid.len();
    if skipped as f64 > 0.1 * total_attempts as f64 {
        return Err(SimError::TooManySkips {
            skipped,
            total: total_attempts,
        });
    }

    Ok(ExperimentReport {
        kind: "accuracy".into(),
        seed: config.seed,
        config: serde_json::to_value(config).expect("config serializes"),
        replications: config.replications,
        skipped,
        notes: Vec::new(),
        amse,
        variance_curves,
        roc: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::MuLaw;
    use super::*;
    use crate::sim::setting;

    fn small_config(seed: u64) -> SimConfig<f64> {
        SimConfig {
            theta: setting(1).unwrap(),
            mu_law: MuLaw::standard(),
            n_train_grid: vec![20, 50, 100],
            n_test: 200,
            replications: 40,
            seed,
        }
    }

    fn amse_of(report: &ExperimentReport, est: EstimatorKind, n: usize) -> f64 {
        report
            .amse
            .iter()
            .find(|r| r.estimator == est && r.n == n)
            .unwrap()
            .amse
    }

    #[test]
    fn estimator_ordering_holds() {
        let report = run_accuracy_experiment(&small_config(31)).unwrap();
        for &n in &[20usize, 50] {
            let xyz = amse_of(&report, EstimatorKind::Xyz, n);
            let yz = amse_of(&report, EstimatorKind::Yz, n);
            let z = amse_of(&report, EstimatorKind::Z, n);
            assert!(xyz < yz && yz < z, "n={n}: {xyz} {yz} {z}");
        }
    }

    #[test]
    fn amse_decreases_with_training_size() {
        let report = run_accuracy_experiment(&small_config(32)).unwrap();
        for est in EstimatorKind::CALIBRATED {
            let at_20 = amse_of(&report, est, 20);
            let at_100 = amse_of(&report, est, 100);
            assert!(at_100 < at_20, "{est:?}: {at_100} !< {at_20}");
        }
    }

    #[test]
    fn report_is_deterministic() {
        let a = run_accuracy_experiment(&small_config(33)).unwrap();
        let b = run_accuracy_experiment(&small_config(33)).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn variance_points_cover_grid_and_genes() {
        let report = run_accuracy_experiment(&small_config(34)).unwrap();
        assert_eq!(report.variance_curves.len(), 3 * 3 * 200);
        assert!(report.variance_curves.iter().all(|p| p.emp_var >= 0.0));
    }
}
