//! Linear 2-D reductions: PCA on a data matrix and classical MDS on a
//! distance matrix.
//!
//! A [`ProjectionModel`] holds the centering vector `mu` and the `d × 2`
//! basis `E`. Projection is `y = (x − mu) E`; when the model was fitted on
//! z-scored data the per-feature scale is applied first.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Pca,
    Cmds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub method: ProjectionMethod,
    pub mu: Vec<f64>,
    /// Row `i` holds the loadings `(E_i0, E_i1)` of feature `i`.
    #[serde(rename = "E")]
    pub basis: Vec<[f64; 2]>,
    pub eigenvalues: [f64; 2],
    pub feature_names: Vec<String>,
    /// Per-feature divisor applied before projecting (z-score fits only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PcaOptions {
    pub standardize: bool,
}

/// Planar coordinates of the fitted rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub method: ProjectionMethod,
    pub coords: Vec<[f64; 2]>,
    pub eigenvalues: [f64; 2],
    /// The linear model, when the embedding came from PCA.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ProjectionModel>,
    /// CMDS only: the double-centered matrix had negative eigenvalues.
    #[serde(default)]
    pub clamped_negative: bool,
}

/// Flips `v` so its largest-magnitude entry is positive. Entries within
/// 1e-12 of the maximum count as ties; the lowest index wins.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|x| x.abs() >= max - 1e-12 * max)
        .expect("max exists");
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn normalize_vec(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// First standard basis vector (lowest index) whose component orthogonal
/// to `against` is substantial, orthonormalized.
fn complete_basis(d: usize, against: &[&[f64]]) -> Vec<f64> {
    for axis in 0..d {
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        for _ in 0..2 {
            for u in against {
                let dot: f64 = v.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u.iter()).for_each(|(a, b)| *a -= dot * b);
            }
        }
        if normalize_vec(&mut v) > 0.5 {
            return v;
        }
    }
    unreachable!("d >= 2 always admits a completion")
}

fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn fit_pca(
    x: &DMatrix<f64>,
    feature_names: &[String],
    options: PcaOptions,
) -> Result<ProjectionModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if d < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 features, got {d}"
        )));
    }
    if feature_names.len() != d {
        return Err(Error::Dimension {
            expected: d,
            actual: feature_names.len(),
        });
    }
    check_finite(x)?;

    let mu: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mu[j]);
    }
    let scale = if options.standardize {
        let s: Vec<f64> = centered
            .column_iter()
            .map(|c| {
                let sd = (c.norm_squared() / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col /= s[j];
        }
        Some(s)
    } else {
        None
    };

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let s_max = svd.singular_values[order[0]];
    let negligible = |s: f64| s <= 1e-10 * s_max || s_max == 0.0;

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut eigenvalues = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let s = svd.singular_values[k];
        let mut v = if negligible(s) {
            let prior: Vec<&[f64]> = components.iter().map(Vec::as_slice).collect();
            complete_basis(d, &prior)
        } else {
            eigenvalues[slot] = s * s / n as f64;
            let mut v: Vec<f64> = v_t.row(k).iter().copied().collect();
            normalize_vec(&mut v);
            v
        };
        fix_sign(&mut v);
        components.push(v);
    }

    Ok(ProjectionModel {
        method: ProjectionMethod::Pca,
        mu,
        basis: (0..d).map(|i| [components[0][i], components[1][i]]).collect(),
        eigenvalues,
        feature_names: feature_names.to_vec(),
        scale,
    })
}

impl ProjectionModel {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.dim() {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.dim(),
                actual: len,
            })
        }
    }

    /// `W = diag(1/scale) E`, the linear map from raw feature changes to
    /// planar changes. Equals `E` for unscaled models.
    pub fn effective_basis(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), 2, |i, k| {
            let s = self.scale.as_ref().map_or(1.0, |s| s[i]);
            self.basis[i][k] / s
        })
    }

    /// Applies the linear map to a feature-space displacement.
    pub fn map_delta(&self, delta: &[f64]) -> Result<[f64; 2]> {
        self.check_len(delta.len())?;
        let mut y = [0.0; 2];
        for (i, dx) in delta.iter().enumerate() {
            let scaled = match &self.scale {
                Some(s) => dx / s[i],
                None => *dx,
            };
            y[0] += scaled * self.basis[i][0];
            y[1] += scaled * self.basis[i][1];
        }
        Ok(y)
    }

    pub fn project(&self, x: &[f64]) -> Result<[f64; 2]> {
        self.check_len(x.len())?;
        let centered: Vec<f64> = x.iter().zip(&self.mu).map(|(a, m)| a - m).collect();
        self.map_delta(&centered)
    }

    pub fn project_rows(&self, x: &DMatrix<f64>) -> Result<Vec<[f64; 2]>> {
        x.row_iter()
            .map(|r| self.project(&r.iter().copied().collect::<Vec<_>>()))
            .collect()
    }
}

/// Fits PCA and projects the fitted rows.
pub fn embed_pca(
    x: &DMatrix<f64>,
    feature_names: &[String],
    options: PcaOptions,
) -> Result<Embedding> {
    let model = fit_pca(x, feature_names, options)?;
    let coords = model.project_rows(x)?;
    Ok(Embedding {
        method: ProjectionMethod::Pca,
        coords,
        eigenvalues: model.eigenvalues,
        model: Some(model),
        clamped_negative: false,
    })
}

fn validate_distances(d: &DMatrix<f64>) -> Result<()> {
    if !d.is_square() {
        return Err(Error::DistanceMatrix(format!(
            "matrix is {}x{}, expected square",
            d.nrows(),
            d.ncols()
        )));
    }
    check_finite(d)?;
    let scale = d.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let n = d.nrows();
    for i in 0..n {
        if d[(i, i)].abs() > tol {
            return Err(Error::DistanceMatrix(format!(
                "non-zero diagonal entry at {i}"
            )));
        }
        for j in 0..n {
            if d[(i, j)] < -tol {
                return Err(Error::DistanceMatrix(format!(
                    "negative distance at ({i}, {j})"
                )));
            }
            if (d[(i, j)] - d[(j, i)]).abs() > tol {
                return Err(Error::DistanceMatrix(format!(
                    "asymmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Classical MDS: top-2 eigenpairs of `B = −½ J D∘D J`, coordinates scaled
/// by the square roots of the (clamped) eigenvalues.
pub fn fit_cmds(d: &DMatrix<f64>) -> Result<Embedding> {
    validate_distances(d)?;
    let n = d.nrows();
    if n == 0 {
        return Err(Error::InsufficientData("empty distance matrix".into()));
    }
    let sq = d.map(|v| v * v);
    let row_means: DVector<f64> = DVector::from_fn(n, |i, _| sq.row(i).mean());
    let grand = sq.mean();
    let b = DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand)
    });
    // symmetrize away round-off before the eigensolver
    let b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| {
        eig.eigenvalues[c]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&c))
    });
    let top = eig.eigenvalues[order[0]].abs().max(f64::MIN_POSITIVE);
    let clamped_negative = eig.eigenvalues.iter().any(|&l| l < -1e-9 * top);

    let mut coords = vec![[0.0; 2]; n];
    let mut eigenvalues = [0.0; 2];
    for (slot, &k) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        eigenvalues[slot] = lambda;
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        fix_sign(&mut v);
        let s = lambda.sqrt();
        for i in 0..n {
            coords[i][slot] = v[i] * s;
        }
    }
    Ok(Embedding {
        method: ProjectionMethod::Cmds,
        coords,
        eigenvalues,
        model: None,
        clamped_negative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::{pairwise_distances, Distance};
    use proptest::prelude::*;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    fn fit(x: &DMatrix<f64>) -> ProjectionModel {
        fit_pca(x, &names(x.ncols()), PcaOptions::default()).unwrap()
    }

    fn orthonormality_error(m: &ProjectionModel) -> f64 {
        let e = m.effective_basis();
        (e.transpose() * &e - DMatrix::identity(2, 2)).amax()
    }

    #[test]
    fn collinear_data() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let m = fit(&x);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.basis[0][0] - h).abs() < 1e-12 && (m.basis[1][0] - h).abs() < 1e-12);
        // covariance [[1.25,1.25],[1.25,1.25]]: eigenvalues 2.5, 0
        assert!((m.eigenvalues[0] - 2.5).abs() < 1e-12);
        assert_eq!(m.eigenvalues[1], 0.0);
        assert!(orthonormality_error(&m) < 1e-12);
        assert_eq!(m.mu, vec![2.5, 2.5]);
        // (0.5, 0.5) · e0 = 0.707107
        let y = m.project(&[3.0, 3.0]).unwrap();
        assert!((y[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(m.project(&m.mu.clone()).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn diagonal_covariance_gives_coordinate_axes() {
        #[rustfmt::skip]
        let x = DMatrix::from_row_slice(4, 3, &[
            -3.0, 0.0, 0.5,
             3.0, 0.0, 0.5,
             0.0, -2.0, -0.5,
             0.0, 2.0, -0.5,
        ]);
        let m = fit(&x);
        let e0: Vec<f64> = m.basis.iter().map(|r| r[0]).collect();
        let e1: Vec<f64> = m.basis.iter().map(|r| r[1]).collect();
        for (got, want) in e0.iter().zip([1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in e1.iter().zip([0.0, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn axis_aligned_projection() {
        let m = ProjectionModel {
            method: ProjectionMethod::Pca,
            mu: vec![0.0; 3],
            basis: vec![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]],
            eigenvalues: [1.0, 1.0],
            feature_names: names(3),
            scale: None,
        };
        assert_eq!(m.project(&[0.5, -1.0, 7.0]).unwrap(), [0.5, -1.0]);
        assert!(matches!(
            m.project(&[1.0]),
            Err(Error::Dimension {
                expected: 3,
                actual: 1
            })
        ));
    }

    #[test]
    fn fit_errors() {
        let one = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(matches!(
            fit_pca(&one, &names(2), PcaOptions::default()),
            Err(Error::InsufficientData(_))
        ));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 2.0, 3.0]);
        assert!(matches!(
            fit_pca(&bad, &names(2), PcaOptions::default()),
            Err(Error::NonFinite)
        ));
    }

    #[test]
    fn constant_data_uses_coordinate_axes() {
        let x = DMatrix::from_element(3, 3, 2.0);
        let m = fit(&x);
        assert_eq!(m.basis, vec![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(m.eigenvalues, [0.0, 0.0]);
    }

    #[test]
    fn standardized_fit_projects_raw_points() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 30.0, 3.0, 20.0, 4.0, 40.0]);
        let m = fit_pca(&x, &names(2), PcaOptions { standardize: true }).unwrap();
        let s = m.scale.clone().unwrap();
        let e = m.effective_basis();
        let y = m.project(&[2.0, 30.0]).unwrap();
        let dx = [(2.0 - m.mu[0]), (30.0 - m.mu[1])];
        assert!((y[0] - (dx[0] * e[(0, 0)] + dx[1] * e[(1, 0)])).abs() < 1e-12);
        assert!((y[0] - (dx[0] / s[0] * m.basis[0][0] + dx[1] / s[1] * m.basis[1][0])).abs() < 1e-12);
        // standardized data of two features: eigenvalues sum to 2
        assert!((m.eigenvalues[0] + m.eigenvalues[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cmds_on_three_collinear_points() {
        // points 0, 1, 3 → centered −4/3, −1/3, 5/3
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 3.0, 1.0, 0.0, 2.0, 3.0, 2.0, 0.0]);
        let emb = fit_cmds(&d).unwrap();
        let sign = emb.coords[2][0].signum();
        for (c, want) in emb.coords.iter().zip([-4.0 / 3.0, -1.0 / 3.0, 5.0 / 3.0]) {
            assert!((sign * c[0] - want).abs() < 1e-12);
            assert!(c[1].abs() < 1e-7);
        }
        assert!(!emb.clamped_negative);
    }

    #[test]
    fn cmds_degenerate_and_invalid() {
        let emb = fit_cmds(&DMatrix::zeros(4, 4)).unwrap();
        assert!(emb.coords.iter().all(|c| c == &[0.0, 0.0]));
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(fit_cmds(&asym), Err(Error::DistanceMatrix(_))));
        let diag = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, 0.0]);
        assert!(matches!(fit_cmds(&diag), Err(Error::DistanceMatrix(_))));
        // non-Euclidean: triangle inequality violated
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0]);
        assert!(fit_cmds(&d).unwrap().clamped_negative);
    }

    fn matrix_strategy(n: usize, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-5.0f64..5.0, n * d)
            .prop_map(move |v| DMatrix::from_row_slice(n, d, &v))
    }

    proptest! {
        #[test]
        fn pca_invariants(x in matrix_strategy(7, 4)) {
            let m = fit(&x);
            prop_assert!(orthonormality_error(&m) <= 1e-10);
            prop_assert!(m.eigenvalues[0] >= m.eigenvalues[1] && m.eigenvalues[1] >= -1e-10);
            // projected variance equals the eigenvalues
            let coords = m.project_rows(&x).unwrap();
            for k in 0..2 {
                let var = coords.iter().map(|c| c[k] * c[k]).sum::<f64>() / 7.0;
                prop_assert!((var - m.eigenvalues[k]).abs() < 1e-8);
            }
            let again = fit(&x);
            prop_assert_eq!(m.basis, again.basis);
        }

        #[test]
        fn projection_linearity(x in matrix_strategy(6, 3), p in prop::collection::vec(-5.0f64..5.0, 3), dp in prop::collection::vec(-5.0f64..5.0, 3)) {
            let m = fit(&x);
            let moved: Vec<f64> = p.iter().zip(&dp).map(|(a, b)| a + b).collect();
            let y0 = m.project(&p).unwrap();
            let y1 = m.project(&moved).unwrap();
            let dy = m.map_delta(&dp).unwrap();
            prop_assert!((y1[0] - y0[0] - dy[0]).abs() <= 1e-12 * 64.0);
            prop_assert!((y1[1] - y0[1] - dy[1]).abs() <= 1e-12 * 64.0);
        }

        #[test]
        fn cmds_matches_pca_scores(x in matrix_strategy(8, 3)) {
            let pca = embed_pca(&x, &names(3), PcaOptions::default()).unwrap();
            prop_assume!(pca.eigenvalues[0] - pca.eigenvalues[1] > 1e-3);
            let d = pairwise_distances(&x, Distance::Euclidean).unwrap();
            let cmds = fit_cmds(&d).unwrap();
            for k in 0..2 {
                let dot: f64 = pca.coords.iter().zip(&cmds.coords).map(|(a, b)| a[k] * b[k]).sum();
                let s = dot.signum();
                for (a, b) in pca.coords.iter().zip(&cmds.coords) {
                    prop_assert!((a[k] - s * b[k]).abs() <= 1e-8);
                }
            }
        }
    }
}
