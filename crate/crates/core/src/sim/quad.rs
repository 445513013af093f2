//! Small quadratic least-squares fit with coefficient standard errors, used
//! to test the curvature of variance-vs-expression scatter.

/// Coefficients of `y ≈ c0 + c1·x + c2·x²` and their OLS standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit {
    pub coefficients: [f64; 3],
    pub standard_errors: [f64; 3],
}

impl QuadraticFit {
    pub fn curvature(&self) -> f64 {
        self.coefficients[2]
    }

    pub fn curvature_se(&self) -> f64 {
        self.standard_errors[2]
    }
}

/// Solve a 3×3 linear system with partial pivoting. Returns `None` when the
/// system is singular.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .expect("finite matrix")
        })?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..3 {
            let factor = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in (row + 1)..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Fit `y = c0 + c1·x + c2·x²` by ordinary least squares. The predictor is
/// centred internally for conditioning; the reported coefficients and
/// standard errors refer to the raw basis. Needs at least 4 points and a
/// non-degenerate design.
pub fn quadratic_fit(x: &[f64], y: &[f64]) -> Option<QuadraticFit> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 4 {
        return None;
    }
    let x_mean = x.iter().sum::<f64>() / n as f64;
    let xc: Vec<f64> = x.iter().map(|&v| v - x_mean).collect();

    // normal equations in the centred basis (1, xc, xc²)
    let mut moments = [0.0f64; 5]; // Σ xcᵏ for k = 0..4
    for &v in &xc {
        let mut pow = 1.0;
        for m in moments.iter_mut() {
            *m += pow;
            pow *= v;
        }
    }
    let gram = [
        [moments[0], moments[1], moments[2]],
        [moments[1], moments[2], moments[3]],
        [moments[2], moments[3], moments[4]],
    ];
    let mut rhs = [0.0f64; 3];
    for (v, &yi) in xc.iter().zip(y) {
        rhs[0] += yi;
        rhs[1] += yi * v;
        rhs[2] += yi * v * v;
    }
    let beta_c = solve3(gram, rhs)?;

    let mut rss = 0.0;
    for (v, &yi) in xc.iter().zip(y) {
        let fitted = beta_c[0] + beta_c[1] * v + beta_c[2] * v * v;
        rss += (yi - fitted) * (yi - fitted);
    }
    let sigma_sq = rss / (n - 3) as f64;

    // map centred coefficients back to the raw basis:
    // c2 = b2, c1 = b1 − 2·b2·x̄, c0 = b0 − b1·x̄ + b2·x̄²
    let coefficients = [
        beta_c[0] - beta_c[1] * x_mean + beta_c[2] * x_mean * x_mean,
        beta_c[1] - 2.0 * beta_c[2] * x_mean,
        beta_c[2],
    ];
    // covariance = σ²·Gram⁻¹ in the centred basis, one column at a time
    let mut cov_c = [[0.0f64; 3]; 3];
    for col in 0..3 {
        let mut e = [0.0; 3];
        e[col] = 1.0;
        let inv_col = solve3(gram, e)?;
        for row in 0..3 {
            cov_c[row][col] = sigma_sq * inv_col[row];
        }
    }
    let jac = [
        [1.0, -x_mean, x_mean * x_mean],
        [0.0, 1.0, -2.0 * x_mean],
        [0.0, 0.0, 1.0],
    ];
    let mut standard_errors = [0.0f64; 3];
    for (i, se) in standard_errors.iter_mut().enumerate() {
        let mut var = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                var += jac[i][a] * cov_c[a][b] * jac[i][b];
            }
        }
        *se = var.max(0.0).sqrt();
    }

    Some(QuadraticFit {
        coefficients,
        standard_errors,
    })
}
