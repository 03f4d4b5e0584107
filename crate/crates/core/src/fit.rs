//! Small least-squares solvers shared by the spectral and analysis fits.

use crate::error::{Error, Result};

/// Linear least squares `min ‖A c − y‖₂` by Householder QR.
///
/// `design` is row-major with `n_cols` columns. Fails when a column is
/// numerically dependent on the others (relative pivot below `1e-12`).
pub fn linear_least_squares(design: &[f64], n_cols: usize, y: &[f64]) -> Result<Vec<f64>> {
    let n_rows = y.len();
    if design.len() != n_rows * n_cols {
        return Err(Error::DimensionMismatch {
            expected: n_rows * n_cols,
            actual: design.len(),
        });
    }
    if n_rows < n_cols {
        return Err(Error::FitFailed(format!(
            "{n_rows} samples cannot determine {n_cols} coefficients"
        )));
    }
    // column-major working copy
    let mut a: Vec<Vec<f64>> = (0..n_cols)
        .map(|c| (0..n_rows).map(|r| design[r * n_cols + c]).collect())
        .collect();
    let mut b = y.to_vec();
    let scale = a
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let mut diag = vec![0.0; n_cols];
    for k in 0..n_cols {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::FitFailed(format!(
                "rank-deficient design: column {k} is dependent"
            )));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in a.iter_mut().skip(k) {
                let dot: f64 = v.iter().zip(&col[k..]).map(|(p, q)| p * q).sum();
                let f = 2.0 * dot / vnorm2;
                for (c, vi) in col[k..].iter_mut().zip(&v) {
                    *c -= f * vi;
                }
            }
            let dot: f64 = v.iter().zip(&b[k..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in b[k..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        diag[k] = a[k][k];
    }
    let mut x = vec![0.0; n_cols];
    for k in (0..n_cols).rev() {
        let mut s = b[k];
        for j in k + 1..n_cols {
            s -= a[j][k] * x[j];
        }
        x[k] = s / diag[k];
    }
    Ok(x)
}

/// Least-squares fit of a polynomial of the given degree; coefficients are
/// returned lowest order first.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    let n_cols = degree + 1;
    let mut design = Vec::with_capacity(xs.len() * n_cols);
    for &x in xs {
        let mut p = 1.0;
        for _ in 0..n_cols {
            design.push(p);
            p *= x;
        }
    }
    linear_least_squares(&design, n_cols, ys)
}

pub fn polyval(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

pub fn polyder(coefficients: &[f64]) -> Vec<f64> {
    coefficients
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| k as f64 * c)
        .collect()
}

#[derive(Clone, Debug)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
}

/// Levenberg-Marquardt on `½‖r(p)‖²` with a forward-difference Jacobian.
///
/// `residuals` may return `None` for parameters outside its domain; the step
/// is then rejected as if the cost had increased.
pub fn levenberg_marquardt<F>(residuals: F, p0: &[f64], max_iter: usize) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n_p = p0.len();
    let mut p = p0.to_vec();
    let mut r = residuals(&p)
        .ok_or_else(|| Error::FitFailed("initial guess outside the model domain".into()))?;
    let sq = |r: &[f64]| 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let mut cost = sq(&r);
    if !cost.is_finite() {
        return Err(Error::FitFailed("non-finite initial residuals".into()));
    }
    let mut mu = 1e-3;
    for it in 0..max_iter {
        // Jacobian, column by column
        let mut jac = vec![vec![0.0; r.len()]; n_p];
        for k in 0..n_p {
            let h = 1e-7 * p[k].abs().max(1e-7);
            let mut q = p.clone();
            q[k] += h;
            if let Some(rq) = residuals(&q) {
                for (i, j) in jac[k].iter_mut().enumerate() {
                    *j = (rq[i] - r[i]) / h;
                }
            } else {
                q[k] = p[k] - h;
                let rq = residuals(&q)
                    .ok_or_else(|| Error::FitFailed("Jacobian probe failed".into()))?;
                for (i, j) in jac[k].iter_mut().enumerate() {
                    *j = (r[i] - rq[i]) / h;
                }
            }
        }
        let mut jtj = vec![vec![0.0; n_p]; n_p];
        let mut jtr = vec![0.0; n_p];
        for a in 0..n_p {
            jtr[a] = jac[a].iter().zip(&r).map(|(x, y)| x * y).sum();
            for b in 0..n_p {
                jtj[a][b] = jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum();
            }
        }
        let grad_inf = jtr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_inf <= 1e-30 || cost <= 1e-32 {
            return Ok(LmOutcome {
                params: p,
                cost,
                iterations: it,
            });
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut m = jtj.clone();
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += mu * jtj[a][a].max(1e-300);
            }
            let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Some(step) = solve_dense(m, rhs) else {
                mu *= 10.0;
                continue;
            };
            let q: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
            if let Some(rq) = residuals(&q) {
                let cq = sq(&rq);
                if cq.is_finite() && cq <= cost {
                    let rel_step = step
                        .iter()
                        .zip(&q)
                        .map(|(s, x)| s.abs() / x.abs().max(1e-12))
                        .fold(0.0f64, f64::max);
                    let improvement = cost - cq;
                    p = q;
                    r = rq;
                    cost = cq;
                    mu = (mu / 3.0).max(1e-15);
                    accepted = true;
                    if rel_step < 1e-14 || improvement <= 1e-16 * cost {
                        return Ok(LmOutcome {
                            params: p,
                            cost,
                            iterations: it + 1,
                        });
                    }
                    break;
                }
            }
            mu *= 4.0;
        }
        if !accepted {
            // no descent possible at any damping: stationary to precision
            return Ok(LmOutcome {
                params: p,
                cost,
                iterations: it,
            });
        }
    }
    Err(Error::FitFailed(format!(
        "Levenberg-Marquardt did not converge in {max_iter} iterations"
    )))
}

fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))?;
        if m[piv][k].abs() < 1e-300 || !m[piv][k].is_finite() {
            return None;
        }
        m.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / m[k][k];
    }
    Some(x)
}
