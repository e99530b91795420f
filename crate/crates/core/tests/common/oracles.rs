//! Brute-force versions of the scoring formulas, built on a cyclic Jacobi
//! eigensolver so they share nothing with the library's linear algebra.

#![allow(dead_code, clippy::needless_range_loop)]

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let scale: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Column covariance (divisor `rows - 1`, at least 1) of a row-major matrix.
pub fn covariance(rows: usize, cols: usize, data: &[f32]) -> Vec<Vec<f64>> {
    let x = |r: usize, c: usize| data[r * cols + c] as f64;
    let means: Vec<f64> = (0..cols).map(|c| (0..rows).map(|r| x(r, c)).sum::<f64>() / rows as f64).collect();
    let denom = (rows.max(2) - 1) as f64;
    (0..cols)
        .map(|i| {
            (0..cols)
                .map(|j| (0..rows).map(|r| (x(r, i) - means[i]) * (x(r, j) - means[j])).sum::<f64>() / denom)
                .collect()
        })
        .collect()
}

pub struct PcaOracle {
    pub explained: Vec<f64>,
    pub count: usize,
    /// Frobenius norm of the centered data projected on the kept
    /// components: `sqrt((rows - 1) * sum of kept eigenvalues)`.
    pub projection_norm: f64,
}

pub fn pca_oracle(rows: usize, cols: usize, data: &[f32]) -> PcaOracle {
    let ev: Vec<f64> = jacobi_eigenvalues(covariance(rows, cols, data)).into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = ev.iter().sum();
    let explained: Vec<f64> = ev.iter().map(|v| v / total).collect();
    let mut acc = 0.0;
    let mut count = 0;
    for r in &explained {
        acc += r;
        count += 1;
        if acc >= 0.95 {
            break;
        }
    }
    let kept: f64 = ev[..count].iter().sum();
    PcaOracle {
        explained,
        count,
        projection_norm: ((rows.max(2) - 1) as f64 * kept).sqrt(),
    }
}

pub fn frobenius_brute(rows: usize, cols: usize, data: &[f64]) -> f64 {
    let mut s = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            s += data[r * cols + c].powi(2);
        }
    }
    s.sqrt()
}

/// `sqrt(trace(A Aᵀ))` by explicit row dot products.
pub fn frobenius_trace_brute(rows: usize, cols: usize, data: &[f64]) -> f64 {
    (0..rows)
        .map(|r| (0..cols).map(|c| data[r * cols + c] * data[r * cols + c]).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Population coefficient of variation via `E[x^2] - E[x]^2`.
pub fn cv_brute(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let second = xs.iter().map(|x| x * x).sum::<f64>() / n;
    (second - mean * mean).max(0.0).sqrt() / mean
}

pub fn rpr_brute(np_o: usize, np_s: usize) -> f64 {
    1.0 - (np_o - np_s) as f64 / np_o as f64
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}
