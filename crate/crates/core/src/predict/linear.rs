use serde::{Deserialize, Serialize};

use super::PredictError;

const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Linear,
    Polynomial { degree: usize },
}

/// Least-squares model on a fixed monomial expansion of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: BaselineKind,
    /// Exponent vector of every non-constant term.
    pub terms: Vec<Vec<u32>>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// All monomials of total degree `1..=degree` in `d` variables, graded
/// lexicographic order.
pub fn monomials(d: usize, degree: usize) -> Vec<Vec<u32>> {
    fn extend(prefix: &mut Vec<u32>, remaining: u32, d: usize, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == d {
            if remaining == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            extend(prefix, remaining - e, d, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 1..=degree as u32 {
        extend(&mut Vec::with_capacity(d), total, d, &mut out);
    }
    out
}

fn expand(x: &[f64], terms: &[Vec<u32>]) -> Vec<f64> {
    terms
        .iter()
        .map(|t| t.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product())
        .collect()
}

/// In-place Cholesky factorisation; false if the matrix is not positive definite.
fn cholesky(a: &mut [Vec<f64>]) -> bool {
    let n = a.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    true
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i][k] * y[k];
        }
        y[i] /= l[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k][i] * y[k];
        }
        y[i] /= l[i][i];
    }
    y
}

/// Ordinary least squares through the normal equations on centred and
/// scaled columns. Zero-spread columns get a zero coefficient; a singular
/// system is retried once with a relative ridge jitter of 1e-10.
pub fn fit_least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<(f64, Vec<f64>), PredictError> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if n < p + 1 {
        return Err(PredictError::TooFewRows { need: p + 1, got: n });
    }
    let nf = n as f64;
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let scale: Vec<f64> = (0..p)
        .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / nf).sqrt())
        .collect();
    let active: Vec<usize> = (0..p).filter(|&j| scale[j] > 0.0).collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| active.iter().map(|&j| (r[j] - mean[j]) / scale[j]).collect())
        .collect();
    let q = active.len();
    let mut xtx = vec![vec![0.0; q]; q];
    let mut xty = vec![0.0; q];
    for (zr, yi) in z.iter().zip(y) {
        let yc = yi - y_mean;
        for a in 0..q {
            xty[a] += zr[a] * yc;
            for b in 0..=a {
                xtx[a][b] += zr[a] * zr[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            xtx[b][a] = xtx[a][b];
        }
    }
    let mut l = xtx.clone();
    if !cholesky(&mut l) {
        log::debug!("least squares: singular normal equations, adding jitter");
        let trace: f64 = (0..q).map(|a| xtx[a][a]).sum();
        l = xtx;
        for (a, row) in l.iter_mut().enumerate() {
            row[a] += JITTER * trace.max(1.0);
        }
        if !cholesky(&mut l) {
            return Err(PredictError::RankDeficient);
        }
    }
    let beta_z = if q > 0 { cholesky_solve(&l, &xty) } else { Vec::new() };
    let mut coef = vec![0.0; p];
    for (b, &j) in beta_z.iter().zip(&active) {
        coef[j] = b / scale[j];
    }
    let intercept = y_mean - coef.iter().zip(&mean).map(|(c, m)| c * m).sum::<f64>();
    Ok((intercept, coef))
}

pub fn fit_baseline(x: &[Vec<f64>], y: &[f64], kind: BaselineKind) -> Result<LinearModel, PredictError> {
    let d = x.first().map_or(0, Vec::len);
    let degree = match kind {
        BaselineKind::Linear => 1,
        BaselineKind::Polynomial { degree } if degree >= 1 => degree,
        BaselineKind::Polynomial { .. } => return Err(PredictError::Config("polynomial degree must be >= 1".into())),
    };
    let terms = monomials(d, degree);
    let design: Vec<Vec<f64>> = x.iter().map(|r| expand(r, &terms)).collect();
    let (intercept, coefficients) = fit_least_squares(&design, y)?;
    Ok(LinearModel {
        kind,
        terms,
        intercept,
        coefficients,
    })
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + expand(x, &self.terms)
                .iter()
                .zip(&self.coefficients)
                .map(|(v, c)| v * c)
                .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts() {
        assert_eq!(monomials(3, 1).len(), 3);
        // C(d + D, D) - 1
        assert_eq!(monomials(3, 2).len(), 9);
        assert_eq!(monomials(2, 3).len(), 9);
        assert_eq!(monomials(2, 2), vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn exact_linear_recovery() {
        let x: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![i as f64 * 0.37, ((i * 7) % 11) as f64, (i as f64).sqrt()])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 1.5 - 2.0 * r[0] + 0.25 * r[1] + 3.0 * r[2]).collect();
        let m = fit_baseline(&x, &y, BaselineKind::Linear).unwrap();
        assert!((m.intercept - 1.5).abs() < 1e-10);
        for (c, t) in m.coefficients.iter().zip([-2.0, 0.25, 3.0]) {
            assert!((c - t).abs() < 1e-10, "{c} vs {t}");
        }
    }

    #[test]
    fn constant_target_is_intercept_only() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let m = fit_baseline(&x, &[4.2; 10], BaselineKind::Linear).unwrap();
        assert!(m.coefficients.iter().all(|c| c.abs() < 1e-12));
        assert!((m.intercept - 4.2).abs() < 1e-12);
    }

    #[test]
    fn polynomial_fits_quadratic() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 4.0 - 2.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| 1.0 + r[0] - 0.5 * r[0] * r[0]).collect();
        let m = fit_baseline(&x, &y, BaselineKind::Polynomial { degree: 2 }).unwrap();
        for (r, t) in x.iter().zip(&y) {
            assert!((m.predict(r) - t).abs() < 1e-10);
        }
    }

    #[test]
    fn collinear_columns_rescued_by_jitter() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let y: Vec<f64> = (0..12).map(|i| 3.0 * i as f64).collect();
        let m = fit_baseline(&x, &y, BaselineKind::Linear).unwrap();
        for (r, t) in x.iter().zip(&y) {
            assert!((m.predict(r) - t).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_rows() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(
            fit_baseline(&x, &[1.0, 2.0], BaselineKind::Linear),
            Err(PredictError::TooFewRows { .. })
        ));
    }
}
