//! Two-component PCA by power iteration with deflation, for 2-D exports.

use crate::error::{Error, Result};
use crate::pool::FeaturePool;

const POWER_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Projection {
    /// Per-sample `(x, y)` coordinates.
    pub coords: Vec<[f64; 2]>,
    /// Unit principal axes; the largest-magnitude loading of each is positive.
    pub components: [Vec<f64>; 2],
    /// Variance captured by each axis (covariance eigenvalues, `1/N`).
    pub variances: [f64; 2],
    pub mean: Vec<f64>,
}

fn covariance(pool: &FeaturePool, mean: &[f64]) -> Vec<f64> {
    let d = pool.dim();
    let mut cov = vec![0.0; d * d];
    for row in pool.rows() {
        for a in 0..d {
            let xa = row[a] as f64 - mean[a];
            for b in a..d {
                cov[a * d + b] += xa * (row[b] as f64 - mean[b]);
            }
        }
    }
    let n = pool.n() as f64;
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= n;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    cov
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|a| (0..d).map(|b| m[a * d + b] * v[b]).sum()).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Leading eigenvector of a symmetric PSD matrix. The start vector is fixed so
/// the result is deterministic.
fn leading_eigen(m: &[f64], d: usize) -> (f64, Vec<f64>) {
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 / d as f64).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let mut w = mat_vec(m, &v);
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return (0.0, v);
        }
        let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        lambda = norm;
        if delta < POWER_TOL {
            break;
        }
    }
    (lambda, v)
}

fn fix_sign(v: &mut [f64]) {
    let mut idx = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[idx].abs() {
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn project_2d(pool: &FeaturePool) -> Result<Projection> {
    let d = pool.dim();
    if d < 2 {
        return Err(Error::DimensionMismatch("a 2-D projection needs dim >= 2".into()));
    }
    let n = pool.n() as f64;
    let mut mean = vec![0.0; d];
    for row in pool.rows() {
        mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v as f64);
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = covariance(pool, &mean);
    let (l1, mut v1) = leading_eigen(&cov, d);
    fix_sign(&mut v1);
    for a in 0..d {
        for b in 0..d {
            cov[a * d + b] -= l1 * v1[a] * v1[b];
        }
    }
    let (l2, mut v2) = leading_eigen(&cov, d);
    // re-orthogonalize against the first axis
    let proj: f64 = v2.iter().zip(&v1).map(|(a, b)| a * b).sum();
    v2.iter_mut().zip(&v1).for_each(|(x, y)| *x -= proj * y);
    normalize(&mut v2);
    fix_sign(&mut v2);

    let coords = pool
        .rows()
        .map(|row| {
            let c: Vec<f64> = row.iter().zip(&mean).map(|(&x, m)| x as f64 - m).collect();
            [
                c.iter().zip(&v1).map(|(a, b)| a * b).sum(),
                c.iter().zip(&v2).map(|(a, b)| a * b).sum(),
            ]
        })
        .collect();
    Ok(Projection {
        coords,
        components: [v1, v2],
        variances: [l1, l2.max(0.0)],
        mean,
    })
}
