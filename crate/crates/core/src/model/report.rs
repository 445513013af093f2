//! Plain-text key-value serialization of a structural fit, so fitting and
//! calibration can run as separate invocations (or on separate machines).
//! Floats are written in shortest round-trip form; parsing restores them
//! bit-exactly.

use super::{
    Alpha3Slope, FitWarning, ModelError, SampleMoments, StructuralFit, StructuralParams,
};
use crate::ingest::Platform;
use crate::num::{real, to_f64, Real};

const FORMAT_KEY: &str = "mecal_fit_version";
const FORMAT_VERSION: &str = "1";

impl<T: Real> StructuralFit<T> {
    /// Render the fit as a `key = value` text block.
    pub fn to_report_string(&self) -> String {
        let mut out = String::new();
        let mut push = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        push(FORMAT_KEY, FORMAT_VERSION.into());
        push("n", self.moments.n.to_string());
        push("alpha3_slope", self.alpha3_slope.token().into());
        let m = &self.moments;
        for (key, value) in [
            ("x_bar", m.x_bar),
            ("y_bar", m.y_bar),
            ("z_bar", m.z_bar),
            ("s_xx", m.s_xx),
            ("s_yy", m.s_yy),
            ("s_zz", m.s_zz),
            ("s_xy", m.s_xy),
            ("s_xz", m.s_xz),
            ("s_yz", m.s_yz),
        ] {
            push(key, value.to_string());
        }
        for (key, value) in StructuralParams::<T>::NAMES
            .iter()
            .zip(self.params.as_array())
        {
            push(key, value.to_string());
        }
        push("mu_spread", self.mu_spread.to_string());
        if let Some(se) = &self.se {
            for (name, value) in StructuralParams::<T>::NAMES.iter().zip(se) {
                push(&format!("se_{name}"), value.to_string());
            }
        }
        for warning in &self.warnings {
            push("warning", warning.to_string());
        }
        out
    }
}

fn parse_value<T: Real>(line: usize, raw: &str) -> Result<T, ModelError> {
    let value: f64 = raw.parse().map_err(|_| ModelError::ReportSyntax {
        line,
        message: format!("`{raw}` is not a number"),
    })?;
    Ok(real(value))
}

/// Parse a fit report written by [`StructuralFit::to_report_string`].
pub fn parse_report<T: Real>(text: &str) -> Result<StructuralFit<T>, ModelError> {
    let mut values: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or(ModelError::ReportSyntax {
            line,
            message: "expected `key = value`".into(),
        })?;
        values.push((line, key.trim().to_string(), value.trim().to_string()));
    }

    let lookup = |key: &str| -> Option<(usize, &str)> {
        values
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(line, _, v)| (*line, v.as_str()))
    };
    let require = |key: &str| -> Result<(usize, &str), ModelError> {
        lookup(key).ok_or(ModelError::ReportSyntax {
            line: 0,
            message: format!("missing required key `{key}`"),
        })
    };

    let (line, version) = require(FORMAT_KEY)?;
    if version != FORMAT_VERSION {
        return Err(ModelError::ReportSyntax {
            line,
            message: format!("unsupported fit format version `{version}`"),
        });
    }
    let (line, n_raw) = require("n")?;
    let n: usize = n_raw.parse().map_err(|_| ModelError::ReportSyntax {
        line,
        message: format!("`{n_raw}` is not a count"),
    })?;
    let (line, slope_raw) = require("alpha3_slope")?;
    let alpha3_slope = Alpha3Slope::from_token(slope_raw).ok_or(ModelError::ReportSyntax {
        line,
        message: format!("unknown alpha3_slope `{slope_raw}`"),
    })?;

    let float = |key: &str| -> Result<T, ModelError> {
        let (line, raw) = require(key)?;
        parse_value(line, raw)
    };

    let moments = SampleMoments {
        x_bar: float("x_bar")?,
        y_bar: float("y_bar")?,
        z_bar: float("z_bar")?,
        s_xx: float("s_xx")?,
        s_yy: float("s_yy")?,
        s_zz: float("s_zz")?,
        s_xy: float("s_xy")?,
        s_xz: float("s_xz")?,
        s_yz: float("s_yz")?,
        n,
    };
    let mut theta = [T::zero(); 7];
    for (slot, name) in theta.iter_mut().zip(StructuralParams::<T>::NAMES) {
        *slot = float(name)?;
    }
    let params = StructuralParams::from_array(theta);
    let mu_spread = float("mu_spread")?;

    let se = if lookup("se_alpha2").is_some() {
        let mut se = [T::zero(); 7];
        for (slot, name) in se.iter_mut().zip(StructuralParams::<T>::NAMES) {
            *slot = float(&format!("se_{name}"))?;
        }
        Some(se)
    } else {
        None
    };

    let mut warnings = Vec::new();
    for (line, key, value) in &values {
        if key != "warning" {
            continue;
        }
        let platform = match value.strip_prefix("NEGATIVE_VARIANCE:") {
            Some("sigma1_sq") => Platform::Pcr,
            Some("sigma2_sq") => Platform::Microarray,
            Some("sigma3_sq") => Platform::RnaSeq,
            _ => {
                return Err(ModelError::ReportSyntax {
                    line: *line,
                    message: format!("unknown warning `{value}`"),
                })
            }
        };
        warnings.push(FitWarning::NegativeVariance(platform));
    }

    // consistency guard, cheap enough to run on every load
    let expected_spread = moments.s_xx - params.sigma1_sq;
    if (to_f64(mu_spread) - to_f64(expected_spread)).abs()
        > 1e-9 * to_f64(moments.s_xx).abs().max(1.0)
    {
        return Err(ModelError::ReportSyntax {
            line: 0,
            message: "mu_spread does not match s_xx - sigma1_sq".into(),
        });
    }

    Ok(StructuralFit {
        params,
        moments,
        mu_spread,
        alpha3_slope,
        se,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{compute_moments, fit_structural, FitOptions};
    use super::*;
    use crate::ingest::MeasurementTable;

    fn fixture_fit() -> StructuralFit<f64> {
        let x = [0.11, 1.31, 3.43, 4.38, 5.23, 7.47, 9.75, 10.85];
        let y = [8.23, 8.68, 10.46, 12.26, 10.73, 14.12, 14.06, 15.69];
        let z = [4.46, 6.11, 8.27, 10.33, 10.59, 13.51, 12.91, 15.35];
        let table = MeasurementTable::from_rows(
            (0..8).map(|i| (format!("g{i}"), Some(x[i]), Some(y[i]), Some(z[i]))),
        )
        .unwrap();
        fit_structural(&compute_moments(&table).unwrap(), &FitOptions::default()).unwrap()
    }

    #[test]
    fn report_round_trip_is_bit_exact() {
        let mut fit = fixture_fit();
        fit.se = Some([0.1, 0.2, 0.03, 0.04, 0.5, 0.6, 0.7]);
        let text = fit.to_report_string();
        let back: StructuralFit<f64> = parse_report(&text).unwrap();
        assert_eq!(fit, back);
    }

    #[test]
    fn report_round_trips_warnings() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.2, 4.8, 7.1, 9.0];
        let z = [0.5, 1.4, 2.6, 3.4, 4.6];
        let table = MeasurementTable::from_rows(
            (0..5).map(|i| (format!("g{i}"), Some(x[i]), Some(y[i]), Some(z[i]))),
        )
        .unwrap();
        let fit =
            fit_structural(&compute_moments(&table).unwrap(), &FitOptions::default()).unwrap();
        assert!(!fit.warnings.is_empty());
        let back: StructuralFit<f64> = parse_report(&fit.to_report_string()).unwrap();
        assert_eq!(fit, back);
    }

    #[test]
    fn report_rejects_missing_key() {
        let fit = fixture_fit();
        let text = fit
            .to_report_string()
            .lines()
            .filter(|l| !l.starts_with("beta2"))
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(
            parse_report::<f64>(&text),
            Err(ModelError::ReportSyntax { .. })
        ));
    }

    #[test]
    fn report_rejects_bad_number() {
        let fit = fixture_fit();
        let text = fit.to_report_string().replace(
            &format!("beta2 = {}", fit.params.beta2),
            "beta2 = not-a-number",
        );
        assert!(matches!(
            parse_report::<f64>(&text),
            Err(ModelError::ReportSyntax { .. })
        ));
    }
}
