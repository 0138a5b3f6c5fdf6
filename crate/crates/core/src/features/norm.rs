use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension z-score statistics over a reference population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions whose standard deviation was floored.
    pub floored: Vec<usize>,
}

impl NormStats {
    /// Population mean and standard deviation per dimension.
    pub fn fit<'a>(population: impl IntoIterator<Item = &'a [f64]>) -> Result<NormStats> {
        let rows: Vec<&[f64]> = population.into_iter().collect();
        let Some(first) = rows.first() else {
            return Err(Error::Config("cannot fit normalisation on an empty population".into()));
        };
        let dim = first.len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                actual: r.len(),
            });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let mut floored = Vec::new();
        let std = var
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let sd = (s / n).sqrt();
                if sd < STD_FLOOR {
                    floored.push(i);
                    STD_FLOOR
                } else {
                    sd
                }
            })
            .collect();
        Ok(NormStats { mean, std, floored })
    }

    pub fn fit_vectors<'a>(population: impl IntoIterator<Item = &'a FeatureVector>) -> Result<NormStats> {
        Self::fit(population.into_iter().map(|v| v.values()))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_slice(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn apply(&self, v: &FeatureVector) -> Result<FeatureVector> {
        if v.values().len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: v.values().len(),
            });
        }
        Ok(FeatureVector::from_raw(self.apply_slice(v.values())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_population_maps_to_plus_minus_one() {
        let a = vec![0.0; 4];
        let b = vec![2.0; 4];
        let stats = NormStats::fit([a.as_slice(), b.as_slice()]).unwrap();
        assert_eq!(stats.apply_slice(&a), vec![-1.0; 4]);
        assert_eq!(stats.apply_slice(&b), vec![1.0; 4]);
        assert!(stats.floored.is_empty());
    }

    #[test]
    fn identical_population_is_floored_to_zero() {
        let a = vec![3.5, -1.0, 7.0];
        let stats = NormStats::fit([a.as_slice(), a.as_slice(), a.as_slice()]).unwrap();
        assert_eq!(stats.floored, vec![0, 1, 2]);
        assert!(stats.apply_slice(&a).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_population_is_an_error() {
        assert!(NormStats::fit(std::iter::empty::<&[f64]>()).is_err());
    }
}
