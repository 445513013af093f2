//! Dataset generation from the measurement-error system.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{MuLaw, SimConfig, SimError};
use crate::ingest::MeasurementTable;
use crate::model::StructuralParams;
use crate::num::Real;
use crate::rng::stream_rng;

/// Draw `count` true expression levels from the configured law.
pub fn draw_mu<T, R>(law: &MuLaw<T>, count: usize, rng: &mut R) -> Result<Vec<T>, SimError>
where
    T: Real,
    StandardNormal: Distribution<T>,
    R: Rng,
{
    match law {
        MuLaw::Normal { mean, var } => {
            let sd = var.sqrt();
            Ok((0..count)
                .map(|_| {
                    let e: T = StandardNormal.sample(rng);
                    *mean + sd * e
                })
                .collect())
        }
        MuLaw::Fixed(values) => {
            if values.len() < count {
                return Err(SimError::InvalidConfig {
                    field: "mu_law".into(),
                    message: format!("fixed list has {} values, {count} needed", values.len()),
                });
            }
            Ok(values[..count].to_vec())
        }
    }
}

/// Draw the three per-gene measurements for each expression level, gene by
/// gene in order (ε₁, ε₂, ε₃ per gene).
pub(crate) fn measure_all_platforms<T, R>(
    theta: &StructuralParams<T>,
    mu: &[T],
    rng: &mut R,
) -> (Vec<T>, Vec<T>, Vec<T>)
where
    T: Real,
    StandardNormal: Distribution<T>,
    R: Rng,
{
    let sd1 = theta.sigma1_sq.sqrt();
    let sd2 = theta.sigma2_sq.sqrt();
    let sd3 = theta.sigma3_sq.sqrt();
    let mut x = Vec::with_capacity(mu.len());
    let mut y = Vec::with_capacity(mu.len());
    let mut z = Vec::with_capacity(mu.len());
    for &m in mu {
        let e1: T = StandardNormal.sample(rng);
        let e2: T = StandardNormal.sample(rng);
        let e3: T = StandardNormal.sample(rng);
        x.push(m + sd1 * e1);
        y.push(theta.alpha2 + theta.beta2 * m + sd2 * e2);
        z.push(theta.alpha3 + theta.beta3 * m + sd3 * e3);
    }
    (x, y, z)
}

pub(crate) fn gene_id(index: usize) -> String {
    format!("g{:06}", index + 1)
}

/// Generate one fully-covered dataset (every gene measured by all three
/// platforms) of `max(n_train_grid)` genes, deterministic in
/// `(config.seed, rep_index)`. Returns the table and the true expression
/// levels it was generated from.
pub fn generate_dataset<T>(
    config: &SimConfig<T>,
    rep_index: u64,
) -> Result<(MeasurementTable<T>, Vec<(String, T)>), SimError>
where
    T: Real,
    StandardNormal: Distribution<T>,
{
    config.validate()?;
    let n = *config.n_train_grid.last().expect("validated non-empty");
    let mut rng = stream_rng(config.seed, "dataset", rep_index);
    let mu = draw_mu(&config.mu_law, n, &mut rng)?;
    let (x, y, z) = measure_all_platforms(&config.theta, &mu, &mut rng);
    let table = MeasurementTable::from_rows(
        (0..n).map(|i| (gene_id(i), Some(x[i]), Some(y[i]), Some(z[i]))),
    )
    .expect("generated rows are fully covered");
    let truth = mu
        .into_iter()
        .enumerate()
        .map(|(i, m)| (gene_id(i), m))
        .collect();
    Ok((table, truth))
}
