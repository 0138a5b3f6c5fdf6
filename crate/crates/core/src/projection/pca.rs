use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    /// Eigenvalues of the two retained components.
    pub explained: [f64; 2],
    /// Trace of the covariance matrix.
    pub total_variance: f64,
}

impl Pca {
    pub fn fit(rows: &[&[f64]]) -> Result<Pca> {
        if rows.len() < 3 {
            return Err(Error::DegenerateTraining(format!(
                "need at least 3 vectors, got {}",
                rows.len()
            )));
        }
        let cov = covariance(rows)?;
        let d = cov.len();
        let (values, vectors) = jacobi_eigen(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let total: f64 = values.iter().sum();
        if d < 2 {
            return Err(Error::DegenerateTraining(format!("{d}-dimensional data")));
        }
        let (l1, l2) = (values[order[0]], values[order[1]]);
        if l1 <= 0.0 || l2 <= 1e-10 * l1 {
            return Err(Error::DegenerateTraining(format!(
                "training data has rank < 2 (top eigenvalues {l1:e}, {l2:e})"
            )));
        }
        let component = |k: usize| -> Vec<f64> {
            let mut c: Vec<f64> = (0..d).map(|i| vectors[i][order[k]]).collect();
            let lead = c
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map_or(1.0, |(_, v)| v);
            if lead < 0.0 {
                c.iter_mut().for_each(|v| *v = -*v);
            }
            c
        };
        Ok(Pca {
            mean: mean(rows),
            components: [component(0), component(1)],
            explained: [l1, l2],
            total_variance: total,
        })
    }

    pub fn project(&self, v: &[f64]) -> [f64; 2] {
        let dot = |c: &[f64]| {
            v.iter()
                .zip(&self.mean)
                .zip(c)
                .map(|((x, m), w)| (x - m) * w)
                .sum::<f64>()
        };
        [dot(&self.components[0]), dot(&self.components[1])]
    }
}

fn mean(rows: &[&[f64]]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, v) in m.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    m
}

/// Unbiased sample covariance.
pub fn covariance(rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            expected: d,
            actual: r.len(),
        });
    }
    let m = mean(rows);
    let mut c = vec![vec![0.0; d]; d];
    let mut centred = vec![0.0; d];
    for r in rows {
        for ((x, v), mu) in centred.iter_mut().zip(r.iter()).zip(&m) {
            *x = v - mu;
        }
        for i in 0..d {
            let xi = centred[i];
            if xi == 0.0 {
                continue;
            }
            for j in i..d {
                c[i][j] += xi * centred[j];
            }
        }
    }
    let n = (rows.len() - 1) as f64;
    for i in 0..d {
        for j in i..d {
            c[i][j] /= n;
            c[j][i] = c[i][j];
        }
    }
    Ok(c)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and a matrix whose columns are the eigenvectors.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (vec![0.0; n], v);
    }
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
                let apq = a[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}
