//! Two-condition differential-expression testing on calibrated estimates,
//! with Benjamini–Hochberg FDR control.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{GeneSet, MeasurementTable};
use crate::model::{
    calibrate, compute_moments, fit_structural, variance_leading, FitOptions, ModelError,
    StructuralFit,
};
use crate::num::{real, to_f64, Real};

/// Standard-normal CDF, via the complementary error function.
pub fn standard_normal_cdf(x: f64) -> f64 {
    statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2) / 2.0
}

/// Standard-normal survival function P(Z > x); accurate in the far tail.
pub fn standard_normal_sf(x: f64) -> f64 {
    statrs::function::erf::erfc(x / std::f64::consts::SQRT_2) / 2.0
}

/// Standard-normal quantile Φ⁻¹(p).
pub fn standard_normal_quantile(p: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    statrs::distribution::Normal::standard().inverse_cdf(p)
}

/// Per-gene calibrated estimates and variances under two conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionPair<T> {
    pub gene_id: String,
    pub mu1: T,
    pub var1: T,
    pub mu2: T,
    pub var2: T,
}

/// Measurements a DE arm tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeMeasurement {
    /// Calibrated estimates with their leading-order variances.
    Calibrated,
    /// RNA-Seq measurements alone, mapped to the calibrated scale by the
    /// fitted affine inverse; the test variance is σ̂₃²/β̂₃² per condition
    /// (one measurement per gene leaves no model-free variance estimate).
    RnaSeqRaw,
}

impl DeMeasurement {
    pub fn token(self) -> &'static str {
        match self {
            DeMeasurement::Calibrated => "calibrated",
            DeMeasurement::RnaSeqRaw => "rnaseq",
        }
    }
}

impl fmt::Display for DeMeasurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// One gene's differential-expression call.
#[derive(Debug, Clone, PartialEq)]
pub struct DEResult<T> {
    pub gene_id: String,
    pub set: GeneSet,
    pub mu1: T,
    pub var1: T,
    pub mu2: T,
    pub var2: T,
    pub z_stat: T,
    pub p_value: T,
    pub q_value: T,
    pub rejected: bool,
}

/// Rejection counts broken down by nested set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SetCounts {
    pub a: usize,
    pub b_minus_a: usize,
    pub c_minus_b: usize,
}

impl SetCounts {
    pub fn total(&self) -> usize {
        self.a + self.b_minus_a + self.c_minus_b
    }

    pub fn bump(&mut self, set: GeneSet) {
        match set {
            GeneSet::A => self.a += 1,
            GeneSet::BMinusA => self.b_minus_a += 1,
            GeneSet::CMinusB => self.c_minus_b += 1,
        }
    }
}

/// Outcome of one DE arm.
#[derive(Debug, Clone, PartialEq)]
pub struct DeOutcome<T> {
    pub arm: DeMeasurement,
    pub results: Vec<DEResult<T>>,
    pub tested: SetCounts,
    pub rejected: SetCounts,
    /// Genes present in only one condition (dropped to the intersection).
    pub only_in_1: usize,
    pub only_in_2: usize,
}

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("gene {gene_id}: non-positive test variance (var1 = {var1}, var2 = {var2})")]
    NonPositiveVariance {
        gene_id: String,
        var1: f64,
        var2: f64,
    },
    #[error("p-value at index {index} is outside [0, 1]: {value}")]
    InvalidPValue { index: usize, value: f64 },
    #[error("fdr must lie strictly inside (0, 1), got {0}")]
    InvalidFdr(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Two-sided z-test of equal expression across conditions:
/// z = (μ̂₁ − μ̂₂)/√(φ̂₁ + φ̂₂), p = 2P(Z > |z|).
pub fn z_test<T: Real>(pair: &ConditionPair<T>) -> Result<(T, T), InferenceError> {
    if pair.var1 <= T::zero() || pair.var2 <= T::zero() {
        return Err(InferenceError::NonPositiveVariance {
            gene_id: pair.gene_id.clone(),
            var1: to_f64(pair.var1),
            var2: to_f64(pair.var2),
        });
    }
    let z = (pair.mu1 - pair.mu2) / (pair.var1 + pair.var2).sqrt();
    let p = 2.0 * standard_normal_sf(to_f64(z).abs());
    // two-sided tail is in (0, 1]; clamp the deep-tail underflow to keep p positive
    let p = p.clamp(f64::MIN_POSITIVE, 1.0);
    Ok((z, real(p)))
}

/// Benjamini–Hochberg step-up control at level `fdr`.
///
/// Returns per-input `(q_value, rejected)`. q-values are the monotone
/// cumulative-minimum adjustment of `p·m/rank`; ties are broken by input
/// order (stable sort), and a gene is rejected exactly when its q-value is
/// at most `fdr`.
pub fn bh_adjust<T: Real>(p_values: &[T], fdr: T) -> Result<Vec<(T, bool)>, InferenceError> {
    let fdr_f = to_f64(fdr);
    if !(0.0 < fdr_f && fdr_f < 1.0) {
        return Err(InferenceError::InvalidFdr(fdr_f));
    }
    for (index, &p) in p_values.iter().enumerate() {
        let p = to_f64(p);
        if !(0.0..=1.0).contains(&p) {
            return Err(InferenceError::InvalidPValue { index, value: p });
        }
    }
    let m = p_values.len();
    if m == 0 {
        return Ok(Vec::new());
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| {
        p_values[i]
            .partial_cmp(&p_values[j])
            .expect("p-values validated finite")
            .then(i.cmp(&j))
    });

    let m_t = real::<T>(m as f64);
    // largest k with p_(k) <= k * fdr / m
    let mut cutoff = 0;
    for (rank0, &idx) in order.iter().enumerate() {
        let rank = real::<T>((rank0 + 1) as f64);
        if p_values[idx] <= fdr * rank / m_t {
            cutoff = rank0 + 1;
        }
    }

    let mut out = vec![(T::zero(), false); m];
    let mut running_min = T::one();
    for (rank0, &idx) in order.iter().enumerate().rev() {
        let rank = real::<T>((rank0 + 1) as f64);
        let scaled = (p_values[idx] * m_t / rank).min(T::one());
        running_min = running_min.min(scaled);
        out[idx] = (running_min, rank0 < cutoff);
    }
    Ok(out)
}

/// Weaker (less informative) of two set memberships.
fn weaker_set(a: GeneSet, b: GeneSet) -> GeneSet {
    a.max(b)
}

fn raw_rnaseq_estimates<T: Real>(
    table: &MeasurementTable<T>,
    fit: &StructuralFit<T>,
) -> Result<HashMap<String, (T, T, GeneSet)>, InferenceError> {
    let p = &fit.params;
    if p.beta3 == T::zero() {
        return Err(ModelError::ZeroSlope { slope: "beta3" }.into());
    }
    if p.sigma3_sq <= T::zero() {
        return Err(ModelError::CalibrationBlocked {
            component: "sigma3_sq",
            value: to_f64(p.sigma3_sq),
            path: "z",
        }
        .into());
    }
    let variance = p.sigma3_sq / (p.beta3 * p.beta3);
    Ok(table
        .rows()
        .map(|(gene, x, y, z)| {
            let set = match (x.is_some(), y.is_some()) {
                (true, _) => GeneSet::A,
                (false, true) => GeneSet::BMinusA,
                (false, false) => GeneSet::CMinusB,
            };
            let z = z.expect("z always present");
            (
                gene.to_string(),
                ((z - p.alpha3) / p.beta3, variance, set),
            )
        })
        .collect())
}

fn calibrated_estimates<T: Real>(
    table: &MeasurementTable<T>,
    fit: &StructuralFit<T>,
) -> Result<HashMap<String, (T, T, GeneSet)>, InferenceError> {
    let calibrated = calibrate(table, fit)?;
    Ok(calibrated
        .into_iter()
        .map(|c| {
            let set = table
                .set_of(&c.gene_id)
                .expect("calibrated gene exists in table");
            (c.gene_id, (c.mu_hat, c.variance, set))
        })
        .collect())
}

/// Full two-condition DE pipeline for one arm: fit each condition
/// independently, estimate per-gene expression, z-test every gene shared by
/// both conditions and apply BH at `fdr`. Gene-set mismatches are reported
/// as counts, not errors.
pub fn de_pipeline<T: Real>(
    table_1: &MeasurementTable<T>,
    table_2: &MeasurementTable<T>,
    fdr: T,
    measurement: DeMeasurement,
    options: &FitOptions,
) -> Result<DeOutcome<T>, InferenceError> {
    let fit_1 = fit_structural(&compute_moments(table_1)?, options)?;
    let fit_2 = fit_structural(&compute_moments(table_2)?, options)?;
    // calibrated-arm preconditions surface early and by name
    if measurement == DeMeasurement::Calibrated {
        variance_leading(&fit_1)?;
        variance_leading(&fit_2)?;
    }

    let (est_1, est_2) = match measurement {
        DeMeasurement::Calibrated => (
            calibrated_estimates(table_1, &fit_1)?,
            calibrated_estimates(table_2, &fit_2)?,
        ),
        DeMeasurement::RnaSeqRaw => (
            raw_rnaseq_estimates(table_1, &fit_1)?,
            raw_rnaseq_estimates(table_2, &fit_2)?,
        ),
    };

    let mut pairs: Vec<(ConditionPair<T>, GeneSet)> = Vec::new();
    for gene in table_1.genes() {
        let (Some(&(mu1, var1, set1)), Some(&(mu2, var2, set2))) =
            (est_1.get(gene), est_2.get(gene))
        else {
            continue;
        };
        pairs.push((
            ConditionPair {
                gene_id: gene.to_string(),
                mu1,
                var1,
                mu2,
                var2,
            },
            weaker_set(set1, set2),
        ));
    }
    let only_in_1 = table_1.len() - pairs.len();
    let only_in_2 = table_2.len() - pairs.len();

    let mut stats = Vec::with_capacity(pairs.len());
    for (pair, _) in &pairs {
        stats.push(z_test(pair)?);
    }
    let p_values: Vec<T> = stats.iter().map(|&(_, p)| p).collect();
    let adjusted = bh_adjust(&p_values, fdr)?;

    let mut tested = SetCounts::default();
    let mut rejected = SetCounts::default();
    let mut results = Vec::with_capacity(pairs.len());
    for (((pair, set), (z, p)), (q, reject)) in pairs.into_iter().zip(stats).zip(adjusted) {
        tested.bump(set);
        if reject {
            rejected.bump(set);
        }
        results.push(DEResult {
            gene_id: pair.gene_id,
            set,
            mu1: pair.mu1,
            var1: pair.var1,
            mu2: pair.mu2,
            var2: pair.var2,
            z_stat: z,
            p_value: p,
            q_value: q,
            rejected: reject,
        });
    }

    Ok(DeOutcome {
        arm: measurement,
        results,
        tested,
        rejected,
        only_in_1,
        only_in_2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MeasurementTable;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn pair(mu1: f64, var1: f64, mu2: f64, var2: f64) -> ConditionPair<f64> {
        ConditionPair {
            gene_id: "g".into(),
            mu1,
            var1,
            mu2,
            var2,
        }
    }

    #[test]
    fn z_test_null_identity() {
        let (z, p) = z_test(&pair(1.5, 0.3, 1.5, 0.7)).unwrap();
        assert_eq!(z, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn z_test_matches_quantile_oracle() {
        // |μ₁ − μ₂| = 1.959964·√(φ₁+φ₂) must give p ≈ 0.05
        let diff = 1.959964 * (0.4f64 + 0.6).sqrt();
        let (_, p) = z_test(&pair(diff, 0.4, 0.0, 0.6)).unwrap();
        assert_relative_eq!(p, 0.05, epsilon = 1e-6);
    }

    #[test]
    fn z_test_matches_erfc_oracle() {
        let (z, p) = z_test(&pair(3.0, 0.5, 0.0, 0.5)).unwrap();
        assert_relative_eq!(z, 3.0, max_relative = 1e-15);
        // oracle value from an independent erfc evaluation; the rational
        // erfc approximation is good to ~1e-10 relative here
        assert_relative_eq!(p, 0.0026997960632601866, max_relative = 1e-9);
    }

    #[test]
    fn z_test_rejects_bad_variance() {
        assert!(matches!(
            z_test(&pair(1.0, 0.0, 2.0, 1.0)),
            Err(InferenceError::NonPositiveVariance { .. })
        ));
    }

    #[test]
    fn z_test_is_condition_swap_invariant() {
        let (z1, p1) = z_test(&pair(2.0, 0.3, 0.5, 0.9)).unwrap();
        let (z2, p2) = z_test(&pair(0.5, 0.9, 2.0, 0.3)).unwrap();
        assert_eq!(z1, -z2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn bh_matches_manual_step_up() {
        let out = bh_adjust(&[0.001, 0.01, 0.02, 0.9], 0.05).unwrap();
        let rejected: Vec<bool> = out.iter().map(|&(_, r)| r).collect();
        assert_eq!(rejected, vec![true, true, true, false]);
        assert_relative_eq!(out[0].0, 0.004, max_relative = 1e-12);
        assert_relative_eq!(out[1].0, 0.02, max_relative = 1e-12);
        assert_relative_eq!(out[2].0, 0.02 * 4.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(out[3].0, 0.9, max_relative = 1e-12);
    }

    #[test]
    fn bh_all_ones_rejects_nothing() {
        let out = bh_adjust(&[1.0; 6], 0.1).unwrap();
        assert!(out.iter().all(|&(q, r)| q == 1.0 && !r));
    }

    #[test]
    fn bh_single_p_uses_raw_threshold() {
        let out = bh_adjust(&[0.04], 0.05).unwrap();
        assert!(out[0].1);
    }

    #[test]
    fn bh_rejects_invalid_inputs() {
        assert!(matches!(
            bh_adjust(&[0.5], 1.5),
            Err(InferenceError::InvalidFdr(_))
        ));
        assert!(matches!(
            bh_adjust(&[-0.1], 0.05),
            Err(InferenceError::InvalidPValue { index: 0, .. })
        ));
    }

    #[test]
    fn bh_rejection_matches_q_threshold() {
        let mut rng = stream_rng(3, "bh", 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let ps: Vec<f64> = (0..200)
            .map(|_| {
                let z: f64 = normal.sample(&mut rng);
                2.0 * standard_normal_sf(z.abs())
            })
            .collect();
        let out = bh_adjust(&ps, 0.1).unwrap();
        for &(q, r) in &out {
            assert_eq!(r, q <= 0.1);
        }
    }

    fn simulated_condition(seed: u64, shift_first_gene: f64) -> MeasurementTable<f64> {
        let mut rng = stream_rng(seed, "de-test", 0);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mu_law = Normal::new(0.0, 4.0).unwrap();
        let mus: Vec<f64> = (0..60).map(|_| mu_law.sample(&mut rng)).collect();
        MeasurementTable::from_rows((0..60).map(|i| {
            let mu = mus[i] + if i == 0 { shift_first_gene } else { 0.0 };
            let x = (i < 30).then(|| mu + noise.sample(&mut rng));
            let y = (i < 45).then(|| 1.0 + 0.8 * mu + noise.sample(&mut rng));
            let z = Some(0.5 + 1.1 * mu + noise.sample(&mut rng));
            (format!("g{i:03}"), x, y, z)
        }))
        .unwrap()
    }

    #[test]
    fn identical_tables_reject_nothing() {
        let table = simulated_condition(1, 0.0);
        for arm in [DeMeasurement::Calibrated, DeMeasurement::RnaSeqRaw] {
            let out = de_pipeline(&table, &table, 0.05, arm, &FitOptions::default()).unwrap();
            assert_eq!(out.rejected.total(), 0);
            assert!(out.results.iter().all(|r| r.p_value == 1.0));
        }
    }

    #[test]
    fn summary_counts_partition_results() {
        let t1 = simulated_condition(2, 0.0);
        let t2 = simulated_condition(3, 4.0);
        let out =
            de_pipeline(&t1, &t2, 0.1, DeMeasurement::Calibrated, &FitOptions::default()).unwrap();
        assert_eq!(out.tested.total(), out.results.len());
        let rejected_total = out.results.iter().filter(|r| r.rejected).count();
        assert_eq!(out.rejected.total(), rejected_total);
        assert_eq!(out.only_in_1, 0);
        assert_eq!(out.only_in_2, 0);
    }

    #[test]
    fn raw_arm_is_affine_transform_of_z() {
        let t1 = simulated_condition(4, 0.0);
        let t2 = simulated_condition(5, 0.0);
        let out =
            de_pipeline(&t1, &t2, 0.05, DeMeasurement::RnaSeqRaw, &FitOptions::default()).unwrap();
        // every gene is tested, including those without x or y
        assert_eq!(out.results.len(), 60);
        // variances are constant per condition on the raw arm
        let v1 = out.results[0].var1;
        assert!(out.results.iter().all(|r| r.var1 == v1));
    }

    #[test]
    fn mismatched_gene_sets_reported_as_counts() {
        let t1 = simulated_condition(6, 0.0);
        let mut rows: Vec<(String, Option<f64>, Option<f64>, Option<f64>)> = t1
            .rows()
            .map(|(g, x, y, z)| (g.to_string(), x, y, z))
            .collect();
        rows.pop();
        let t2 = MeasurementTable::from_rows(rows).unwrap();
        let out =
            de_pipeline(&t1, &t2, 0.05, DeMeasurement::Calibrated, &FitOptions::default()).unwrap();
        assert_eq!(out.only_in_1, 1);
        assert_eq!(out.only_in_2, 0);
        assert_eq!(out.results.len(), 59);
    }
}
