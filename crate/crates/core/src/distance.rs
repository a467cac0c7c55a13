use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
    Manhattan,
    Cosine,
    Correlation,
}

impl Distance {
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt(),
            Distance::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Distance::Cosine => 1.0 - cosine_similarity(a, b),
            Distance::Correlation => {
                let ma = mean(a);
                let mb = mean(b);
                let ca: Vec<f64> = a.iter().map(|x| x - ma).collect();
                let cb: Vec<f64> = b.iter().map(|x| x - mb).collect();
                1.0 - cosine_similarity(&ca, &cb)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Distance::Euclidean => "euclidean",
            Distance::Manhattan => "manhattan",
            Distance::Cosine => "cosine",
            Distance::Correlation => "correlation",
        }
    }
}

fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (norm(a) * norm(b))).clamp(-1.0, 1.0)
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Rejects rows for which `measure` is undefined (zero norm for cosine,
/// zero variance for correlation).
pub fn check_rows(x: &DMatrix<f64>, measure: Distance) -> Result<()> {
    for (i, row) in rows(x).iter().enumerate() {
        let degenerate = match measure {
            Distance::Cosine => norm(row) == 0.0,
            Distance::Correlation => {
                let m = mean(row);
                row.iter().all(|v| (v - m).abs() <= 1e-300)
            }
            _ => false,
        };
        if degenerate {
            return Err(Error::Degenerate(format!(
                "row {i} has zero {} under {} distance",
                if measure == Distance::Cosine {
                    "norm"
                } else {
                    "variance"
                },
                measure.name()
            )));
        }
    }
    Ok(())
}

/// Symmetric `n × n` matrix of row distances with an exact zero diagonal.
pub fn pairwise_distances(x: &DMatrix<f64>, measure: Distance) -> Result<DMatrix<f64>> {
    check_rows(x, measure)?;
    let rows = rows(x);
    let n = rows.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = measure.between(&rows[i], &rows[j]).max(0.0);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(Distance::Euclidean.between(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert_eq!(Distance::Manhattan.between(&[0.0, 0.0], &[3.0, -4.0]), 7.0);
        let x = [1.0, -2.0, 0.5];
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!(Distance::Cosine.between(&x, &x2).abs() < 1e-15);
        // r((1,2,3),(1,3,2)) = 0.5
        let d = Distance::Correlation.between(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]);
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matrix_is_symmetric_with_zero_diagonal() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 4.5]);
        for m in [
            Distance::Euclidean,
            Distance::Manhattan,
            Distance::Cosine,
            Distance::Correlation,
        ] {
            let d = pairwise_distances(&x, m).unwrap();
            assert_eq!(d, d.transpose());
            assert!(d.diagonal().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn degenerate_rows_are_named() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 0.0]);
        let err = pairwise_distances(&x, Distance::Cosine).unwrap_err();
        assert!(err.to_string().contains("row 1"));
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 3.0]);
        assert!(pairwise_distances(&x, Distance::Correlation).is_err());
        assert!(pairwise_distances(&x, Distance::Euclidean).is_ok());
    }
}
