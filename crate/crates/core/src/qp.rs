//! Constrained backward-projection solver.
//!
//! Minimizes `‖Eᵀ Δx − Δy‖² + λ‖Δx‖²` subject to `C Δx = d` and
//! `lb ≤ Δx ≤ ub`. With `λ > 0` the problem is strictly convex.
//!
//! Equalities are eliminated by writing `Δx = x0 + Z z`, where `x0` is the
//! minimum-norm solution of `C x = d` and the columns of `Z` span `null(C)`.
//! The reduced problem has a positive-definite Hessian and only the box rows
//! as inequalities; those are handled by a dual active-set iteration that
//! starts from the unconstrained reduced minimizer and adds the most violated
//! bound each outer step, dropping bounds whose multipliers would turn
//! negative. Infeasibility shows up as a violated bound that no step can
//! repair.
//!
//! [`check_kkt`] certifies a candidate in the original variables and does not
//! share code with the solver path.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA_REG: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    /// `m × d` equality matrix.
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    /// Lower bounds; `-inf` means unbounded.
    pub lb: Vec<f64>,
    /// Upper bounds; `+inf` means unbounded.
    pub ub: Vec<f64>,
}

impl ConstraintSet {
    pub fn unconstrained(d: usize) -> Self {
        Self {
            eq_matrix: DMatrix::zeros(0, d),
            eq_rhs: DVector::zeros(0),
            lb: vec![f64::NEG_INFINITY; d],
            ub: vec![f64::INFINITY; d],
        }
    }

    pub fn new(eq_matrix: DMatrix<f64>, eq_rhs: DVector<f64>, lb: Vec<f64>, ub: Vec<f64>) -> Result<Self> {
        let d = eq_matrix.ncols();
        if eq_matrix.nrows() != eq_rhs.len() {
            return Err(Error::Dimension {
                expected: eq_matrix.nrows(),
                actual: eq_rhs.len(),
            });
        }
        if eq_matrix.nrows() > d {
            return Err(Error::Parameter(format!(
                "{} equality rows exceed dimension {d}",
                eq_matrix.nrows()
            )));
        }
        for v in [&lb, &ub] {
            if v.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    actual: v.len(),
                });
            }
        }
        if eq_matrix.iter().chain(eq_rhs.iter()).any(|v| !v.is_finite())
            || lb.iter().chain(&ub).any(|v| v.is_nan())
        {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            eq_matrix,
            eq_rhs,
            lb,
            ub,
        })
    }

    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    pub fn n_equalities(&self) -> usize {
        self.eq_matrix.nrows()
    }

    /// Adds the equality `Δx_i = value`.
    pub fn fix(&mut self, i: usize, value: f64) {
        let m = self.eq_matrix.nrows();
        let d = self.dim();
        let mut row = DMatrix::zeros(1, d);
        row[(0, i)] = 1.0;
        self.add_equality(row.row(0).iter().copied().collect(), value);
        debug_assert_eq!(self.eq_matrix.nrows(), m + 1);
    }

    pub fn add_equality(&mut self, coeffs: Vec<f64>, rhs: f64) {
        let d = self.dim();
        assert_eq!(coeffs.len(), d, "equality length must match dimension");
        let m = self.eq_matrix.nrows();
        let mut c = self.eq_matrix.clone().resize_vertically(m + 1, 0.0);
        c.row_mut(m).copy_from_slice(&coeffs);
        self.eq_matrix = c;
        self.eq_rhs = self.eq_rhs.clone().push(rhs);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveBound {
    pub index: usize,
    pub side: BoundSide,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub delta_x: Vec<f64>,
    /// Regularized objective `‖EᵀΔx − Δy‖² + λ‖Δx‖²`.
    pub objective: f64,
    /// Unregularized misfit `‖EᵀΔx − Δy‖²`.
    pub misfit: f64,
    pub kkt_residual: f64,
    pub status: QpStatus,
    pub active_bounds: Vec<ActiveBound>,
    pub iterations: usize,
}

fn check_shapes(e: &DMatrix<f64>, cons: &ConstraintSet) -> Result<()> {
    if e.ncols() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            actual: e.ncols(),
        });
    }
    if cons.dim() != e.nrows() {
        return Err(Error::Dimension {
            expected: e.nrows(),
            actual: cons.dim(),
        });
    }
    Ok(())
}

fn misfit(e: &DMatrix<f64>, delta_y: [f64; 2], x: &DVector<f64>) -> f64 {
    let y = e.transpose() * x;
    (y[0] - delta_y[0]).powi(2) + (y[1] - delta_y[1]).powi(2)
}

/// Regularized backward-projection objective at `x`.
pub fn objective(e: &DMatrix<f64>, delta_y: [f64; 2], lambda_reg: f64, x: &[f64]) -> f64 {
    let x = DVector::from_column_slice(x);
    misfit(e, delta_y, &x) + lambda_reg * x.norm_squared()
}

/// Orthonormal basis of the row space of `c` (as rows) and the
/// minimum-norm solution of `c x = rhs`.
struct EqualityFactor {
    row_basis: DMatrix<f64>,
    particular: DVector<f64>,
    consistent: bool,
}

fn factor_equalities(c: &DMatrix<f64>, rhs: &DVector<f64>) -> EqualityFactor {
    let d = c.ncols();
    if c.nrows() == 0 {
        return EqualityFactor {
            row_basis: DMatrix::zeros(0, d),
            particular: DVector::zeros(d),
            consistent: true,
        };
    }
    let svd = c.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let s_max = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| s_max > 0.0 && svd.singular_values[k] > 1e-10 * s_max)
        .collect();
    let mut particular = DVector::zeros(d);
    let mut row_basis = DMatrix::zeros(keep.len(), d);
    for (r, &k) in keep.iter().enumerate() {
        let coef = u.column(k).dot(rhs) / svd.singular_values[k];
        particular += v_t.row(k).transpose() * coef;
        row_basis.row_mut(r).copy_from(&v_t.row(k));
    }
    let residual = (c * &particular - rhs).amax();
    let scale = 1.0 + rhs.amax() + c.amax() * particular.amax();
    EqualityFactor {
        row_basis,
        particular,
        consistent: residual <= 1e-9 * scale,
    }
}

/// Completes an orthonormal row basis to `d` dimensions; the new vectors
/// (as columns) span the orthogonal complement.
fn null_space(row_basis: &DMatrix<f64>) -> DMatrix<f64> {
    let d = row_basis.ncols();
    let mut basis: Vec<DVector<f64>> = row_basis.row_iter().map(|r| r.transpose()).collect();
    let start = basis.len();
    for axis in 0..d {
        if basis.len() == d {
            break;
        }
        let mut v = DVector::zeros(d);
        v[axis] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let dot = b.dot(&v);
                v -= b * dot;
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    let cols: Vec<DVector<f64>> = basis.split_off(start);
    if cols.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Inequality `normalᵀ z ≥ rhs` of the reduced problem, tied to a bound of
/// the original coordinate `index`.
struct ReducedBound {
    normal: DVector<f64>,
    rhs: f64,
    index: usize,
    side: BoundSide,
}

/// Minimizer of the reduced objective with the `active` bounds held as
/// equalities, and their multipliers.
fn solve_on_active(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    reduced_g: &DVector<f64>,
    bounds: &[ReducedBound],
    active: &[usize],
) -> Option<(DVector<f64>, Vec<f64>)> {
    let normals = DMatrix::from_columns(
        &active.iter().map(|&i| bounds[i].normal.clone()).collect::<Vec<_>>(),
    );
    let rhs = DVector::from_iterator(active.len(), active.iter().map(|&i| bounds[i].rhs));
    let ginv_n = chol.solve(&normals);
    let ginv_g = chol.solve(reduced_g);
    let m = normals.transpose() * &ginv_n;
    let u = m.cholesky()?.solve(&(rhs + normals.transpose() * &ginv_g));
    let z = ginv_n * &u - ginv_g;
    Some((z, u.iter().copied().collect()))
}

/// Solves the problem with the `pinned` coordinates set exactly to their
/// bound values and every other bound ignored.
fn polish(
    hessian: &DMatrix<f64>,
    linear: &DVector<f64>,
    cons: &ConstraintSet,
    pinned: &[(usize, f64)],
) -> Option<DVector<f64>> {
    let d = hessian.nrows();
    let mut fixed = DVector::zeros(d);
    for &(j, v) in pinned {
        fixed[j] = v;
    }
    let free: Vec<usize> = (0..d).filter(|j| !pinned.iter().any(|(p, _)| p == j)).collect();
    if free.is_empty() {
        return Some(fixed);
    }
    let c_free = cons.eq_matrix.select_columns(&free);
    let rhs = &cons.eq_rhs - &cons.eq_matrix * &fixed;
    let factor = factor_equalities(&c_free, &rhs);
    if !factor.consistent {
        return None;
    }
    let z_basis = null_space(&factor.row_basis);
    let h_free = hessian.select_rows(&free).select_columns(&free);
    let g_full = linear + hessian * &fixed;
    let g_free = DVector::from_iterator(free.len(), free.iter().map(|&j| g_full[j]));
    let x_free = if z_basis.ncols() == 0 {
        factor.particular
    } else {
        let reduced = z_basis.transpose() * &h_free * &z_basis;
        let grad = z_basis.transpose() * (&h_free * &factor.particular + g_free);
        let z = -reduced.cholesky()?.solve(&grad);
        &factor.particular + &z_basis * z
    };
    let mut x = fixed;
    for (k, &j) in free.iter().enumerate() {
        x[j] = x_free[k];
    }
    Some(x)
}

pub fn solve_bp_qp(
    e: &DMatrix<f64>,
    delta_y: [f64; 2],
    cons: &ConstraintSet,
    lambda_reg: f64,
) -> Result<QpSolution> {
    check_shapes(e, cons)?;
    if !(lambda_reg > 0.0 && lambda_reg.is_finite()) {
        return Err(Error::Parameter(
            "lambda_reg must be positive and finite".into(),
        ));
    }
    if e.iter().chain(delta_y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let d = e.nrows();
    let max_iter = 100 * d.max(1);

    let infeasible = |x: DVector<f64>, iterations: usize| {
        let xs: Vec<f64> = x.iter().copied().collect();
        QpSolution {
            objective: objective(e, delta_y, lambda_reg, &xs),
            misfit: misfit(e, delta_y, &x),
            kkt_residual: check_kkt(e, delta_y, cons, lambda_reg, &xs),
            delta_x: xs,
            status: QpStatus::Infeasible,
            active_bounds: Vec::new(),
            iterations,
        }
    };

    let factor = factor_equalities(&cons.eq_matrix, &cons.eq_rhs);
    if !factor.consistent || cons.lb.iter().zip(&cons.ub).any(|(l, u)| l > u) {
        return Ok(infeasible(factor.particular, 0));
    }
    let x0 = factor.particular;
    let z_basis = null_space(&factor.row_basis);

    // f(x) = ½ xᵀ H x + gᵀ x + const, H = 2(E Eᵀ + λI), g = −2 E Δy
    let dy = DVector::from_column_slice(&delta_y);
    let hessian = (e * e.transpose() + DMatrix::identity(d, d) * lambda_reg) * 2.0;
    let linear = -(e * &dy) * 2.0;

    let mut bounds = Vec::new();
    for j in 0..d {
        let row: DVector<f64> = z_basis.row(j).transpose();
        if cons.lb[j].is_finite() {
            bounds.push(ReducedBound {
                normal: row.clone(),
                rhs: cons.lb[j] - x0[j],
                index: j,
                side: BoundSide::Lower,
            });
        }
        if cons.ub[j].is_finite() {
            bounds.push(ReducedBound {
                normal: -row,
                rhs: x0[j] - cons.ub[j],
                index: j,
                side: BoundSide::Upper,
            });
        }
    }

    let reduced_h = z_basis.transpose() * &hessian * &z_basis;
    let reduced_g = z_basis.transpose() * (&hessian * &x0 + &linear);
    let chol = Cholesky::new(reduced_h)
        .ok_or_else(|| Error::Degenerate("reduced Hessian is not positive definite".into()))?;

    let mut z = -chol.solve(&reduced_g);
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut status = QpStatus::Optimal;

    let slack = |b: &ReducedBound, z: &DVector<f64>| b.normal.dot(z) - b.rhs;
    let tol = |b: &ReducedBound| 1e-12 * (1.0 + b.rhs.abs());

    'outer: loop {
        // most violated inactive bound
        let mut pick = None;
        let mut worst = 0.0;
        for (i, b) in bounds.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let s = slack(b, &z);
            if s < -tol(b) && s < worst {
                worst = s;
                pick = Some(i);
            }
        }
        let Some(entering) = pick else { break };
        let np = bounds[entering].normal.clone();
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                status = QpStatus::MaxIter;
                break 'outer;
            }
            let ginv_np = chol.solve(&np);
            let (step_dir, r) = if active.is_empty() {
                (ginv_np, DVector::zeros(0))
            } else {
                let normals = DMatrix::from_columns(
                    &active.iter().map(|&i| bounds[i].normal.clone()).collect::<Vec<_>>(),
                );
                let j = chol.solve(&normals);
                let m = normals.transpose() * &j;
                let rhs = j.transpose() * &np;
                let r = match m.clone().cholesky() {
                    Some(c) => c.solve(&rhs),
                    None => m
                        .pseudo_inverse(1e-14)
                        .map_err(|e| Error::Degenerate(e.to_string()))?
                        * rhs,
                };
                (ginv_np - j * &r, r)
            };

            // dual step limit from multipliers that would turn negative
            let mut partial: Option<(f64, usize)> = None;
            for (a, &rj) in r.iter().enumerate() {
                if rj > 0.0 {
                    let t = mult[a] / rj;
                    if partial.is_none_or(|(best, _)| t < best) {
                        partial = Some((t, a));
                    }
                }
            }
            let curvature = step_dir.dot(&np);
            let s_p = slack(&bounds[entering], &z);
            let full = (curvature > 1e-14 * np.dot(&chol.solve(&np)).max(f64::MIN_POSITIVE))
                .then(|| -s_p / curvature);

            let (t, drop) = match (full, partial) {
                (None, None) => {
                    let x = &x0 + &z_basis * &z;
                    return Ok(infeasible(x, iterations));
                }
                (None, Some((t1, k))) => (t1, Some(k)),
                (Some(t2), Some((t1, k))) if t1 < t2 => (t1, Some(k)),
                (Some(t2), _) => (t2, None),
            };

            if full.is_some() {
                z += &step_dir * t;
            }
            for (m, rj) in mult.iter_mut().zip(r.iter()) {
                *m -= t * rj;
            }
            u_p += t;

            match drop {
                None => {
                    active.push(entering);
                    mult.push(u_p);
                    // re-solve on the active set to shed accumulated drift
                    if let Some((z_exact, u_exact)) = solve_on_active(&chol, &reduced_g, &bounds, &active) {
                        z = z_exact;
                        mult = u_exact;
                    }
                    break;
                }
                Some(k) => {
                    active.remove(k);
                    mult.remove(k);
                }
            }
        }
    }

    let mut x = &x0 + &z_basis * &z;
    if status == QpStatus::Optimal {
        let pinned: Vec<(usize, f64)> = active
            .iter()
            .map(|&i| {
                let b = &bounds[i];
                let v = match b.side {
                    BoundSide::Lower => cons.lb[b.index],
                    BoundSide::Upper => cons.ub[b.index],
                };
                (b.index, v)
            })
            .collect();
        if let Some(polished) = polish(&hessian, &linear, cons, &pinned) {
            x = polished;
        }
        for j in 0..d {
            x[j] = x[j].clamp(cons.lb[j], cons.ub[j]);
        }
    }
    let xs: Vec<f64> = x.iter().copied().collect();
    let mut active_bounds: Vec<ActiveBound> = active
        .iter()
        .zip(&mult)
        .map(|(&i, &m)| ActiveBound {
            index: bounds[i].index,
            side: bounds[i].side,
            multiplier: m,
        })
        .collect();
    active_bounds.sort_by_key(|a| (a.index, a.side == BoundSide::Upper));
    Ok(QpSolution {
        objective: objective(e, delta_y, lambda_reg, &xs),
        misfit: misfit(e, delta_y, &x),
        kkt_residual: check_kkt(e, delta_y, cons, lambda_reg, &xs),
        delta_x: xs,
        status,
        active_bounds,
        iterations,
    })
}

/// Max of primal infeasibility, projected-gradient stationarity, multiplier
/// sign violation and complementary slackness at `delta_x`.
pub fn check_kkt(
    e: &DMatrix<f64>,
    delta_y: [f64; 2],
    cons: &ConstraintSet,
    lambda_reg: f64,
    delta_x: &[f64],
) -> f64 {
    let d = e.nrows();
    if delta_x.len() != d || cons.dim() != d || e.ncols() != 2 {
        return f64::INFINITY;
    }
    let x = DVector::from_column_slice(delta_x);

    let mut primal = if cons.n_equalities() > 0 {
        (&cons.eq_matrix * &x - &cons.eq_rhs).amax()
    } else {
        0.0
    };
    for j in 0..d {
        primal = primal.max(cons.lb[j] - x[j]).max(x[j] - cons.ub[j]);
    }

    let dy = DVector::from_column_slice(&delta_y);
    let grad = (e * (e.transpose() * &x - dy) + &x * lambda_reg) * 2.0;

    // remove the component absorbed by equality multipliers
    let rows = if cons.n_equalities() > 0 {
        let svd = cons.eq_matrix.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let s_max = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > 1e-10 * s_max)
            .collect();
        DMatrix::from_fn(keep.len(), d, |r, c| v_t[(keep[r], c)])
    } else {
        DMatrix::zeros(0, d)
    };
    let project = |v: &DVector<f64>| -> DVector<f64> {
        if rows.nrows() == 0 {
            v.clone()
        } else {
            v - rows.transpose() * (&rows * v)
        }
    };
    let g_null = project(&grad);

    let near = |a: f64, b: f64| b.is_finite() && (a - b).abs() <= 1e-9 * (1.0 + b.abs());
    let at_bound: Vec<(usize, bool, bool)> = (0..d)
        .filter_map(|j| {
            let lo = near(x[j], cons.lb[j]);
            let hi = near(x[j], cons.ub[j]);
            (lo || hi).then_some((j, lo, hi))
        })
        .collect();

    let mut stationarity = g_null.amax();
    let mut sign = 0.0f64;
    let mut complementarity = 0.0f64;
    if !at_bound.is_empty() {
        let cols: Vec<DVector<f64>> = at_bound
            .iter()
            .map(|&(j, _, _)| {
                let mut unit = DVector::zeros(d);
                unit[j] = 1.0;
                project(&unit)
            })
            .collect();
        let b = DMatrix::from_columns(&cols);
        let mu = match b.clone().svd(true, true).solve(&g_null, 1e-12) {
            Ok(mu) => mu,
            Err(_) => return f64::INFINITY,
        };
        stationarity = (&g_null - &b * &mu).amax();
        for (k, &(j, lo, hi)) in at_bound.iter().enumerate() {
            if cols[k].norm() <= 1e-9 || (lo && hi) {
                continue;
            }
            // ∇f = μ e_j with μ ≥ 0 at a lower bound, μ ≤ 0 at an upper bound
            if lo {
                sign = sign.max(-mu[k]);
                complementarity = complementarity.max((mu[k] * (x[j] - cons.lb[j])).abs());
            } else if hi {
                sign = sign.max(mu[k]);
                complementarity = complementarity.max((mu[k] * (cons.ub[j] - x[j])).abs());
            }
        }
    }
    primal.max(stationarity).max(sign).max(complementarity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LAMBDA: f64 = DEFAULT_LAMBDA_REG;

    fn plane_basis() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn unconstrained_separable() {
        let e = plane_basis();
        let sol = solve_bp_qp(&e, [2.0, 3.0], &ConstraintSet::unconstrained(3), LAMBDA).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let s = 1.0 / (1.0 + LAMBDA);
        assert_close(&sol.delta_x, &[2.0 * s, 3.0 * s, 0.0], 1e-9);
        assert!(sol.kkt_residual <= 1e-9);
    }

    #[test]
    fn equality_fixes_first_axis() {
        let e = plane_basis();
        let mut cons = ConstraintSet::unconstrained(3);
        cons.fix(0, 0.0);
        let sol = solve_bp_qp(&e, [2.0, 3.0], &cons, LAMBDA).unwrap();
        assert_close(&sol.delta_x, &[0.0, 3.0 / (1.0 + LAMBDA), 0.0], 1e-9);
        assert!((sol.misfit - 4.0).abs() < 1e-9);
        assert!((sol.objective - 4.0).abs() < 1e-4);
        assert!(sol.kkt_residual <= 1e-9);
    }

    #[test]
    fn box_clips_both_axes() {
        let e = plane_basis();
        let cons = ConstraintSet::new(DMatrix::zeros(0, 3), DVector::zeros(0), vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let sol = solve_bp_qp(&e, [2.0, 3.0], &cons, LAMBDA).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_close(&sol.delta_x, &[1.0, 1.0, 0.0], 1e-12);
        let active: Vec<(usize, BoundSide)> = sol.active_bounds.iter().map(|a| (a.index, a.side)).collect();
        assert_eq!(active, vec![(0, BoundSide::Upper), (1, BoundSide::Upper)]);
        assert!(sol.kkt_residual <= 1e-9);
    }

    #[test]
    fn kkt_detects_bad_points() {
        let e = plane_basis();
        let free = ConstraintSet::unconstrained(3);
        let s = 1.0 / (1.0 + LAMBDA);
        let opt = [2.0 * s, 3.0 * s, 0.0];
        assert!(check_kkt(&e, [2.0, 3.0], &free, LAMBDA, &opt) <= 1e-9);
        let perturbed = [opt[0] + 0.1, opt[1], opt[2]];
        assert!(check_kkt(&e, [2.0, 3.0], &free, LAMBDA, &perturbed) >= 0.01);
        let boxed = ConstraintSet::new(DMatrix::zeros(0, 3), DVector::zeros(0), vec![-1.0; 3], vec![1.0; 3]).unwrap();
        assert!(check_kkt(&e, [2.0, 3.0], &boxed, LAMBDA, &[1.0, 1.0, -1.5]) >= 0.5);
        // at the bound but pushed the wrong way
        assert!(check_kkt(&e, [-2.0, 3.0], &boxed, LAMBDA, &[1.0, 1.0, 0.0]) >= 1.0);
    }

    #[test]
    fn infeasible_inputs() {
        let e = plane_basis();
        let mut cons = ConstraintSet::unconstrained(3);
        cons.fix(0, 1.0);
        cons.fix(0, 2.0);
        assert_eq!(solve_bp_qp(&e, [1.0, 1.0], &cons, LAMBDA).unwrap().status, QpStatus::Infeasible);

        let cons = ConstraintSet::new(DMatrix::zeros(0, 3), DVector::zeros(0), vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]).unwrap();
        assert_eq!(solve_bp_qp(&e, [1.0, 1.0], &cons, LAMBDA).unwrap().status, QpStatus::Infeasible);

        // x0 fixed at 0 by equality, bound demands x0 >= 0.5
        let mut cons = ConstraintSet::new(DMatrix::zeros(0, 3), DVector::zeros(0), vec![0.5, -9.0, -9.0], vec![9.0; 3]).unwrap();
        cons.fix(0, 0.0);
        assert_eq!(solve_bp_qp(&e, [1.0, 1.0], &cons, LAMBDA).unwrap().status, QpStatus::Infeasible);

        // x0 + x1 = 4 with both in [0, 1]
        let mut cons = ConstraintSet::new(DMatrix::zeros(0, 3), DVector::zeros(0), vec![0.0; 3], vec![1.0; 3]).unwrap();
        cons.add_equality(vec![1.0, 1.0, 0.0], 4.0);
        assert_eq!(solve_bp_qp(&e, [1.0, 1.0], &cons, LAMBDA).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn parameter_errors() {
        let e = plane_basis();
        let cons = ConstraintSet::unconstrained(3);
        assert!(matches!(solve_bp_qp(&e, [1.0, 1.0], &cons, 0.0), Err(Error::Parameter(_))));
        assert!(solve_bp_qp(&e, [1.0, 1.0], &ConstraintSet::unconstrained(2), LAMBDA).is_err());
        assert!(ConstraintSet::new(DMatrix::zeros(4, 3), DVector::zeros(4), vec![0.0; 3], vec![0.0; 3]).is_err());
        assert!(ConstraintSet::new(DMatrix::zeros(1, 3), DVector::zeros(2), vec![0.0; 3], vec![0.0; 3]).is_err());
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let e = plane_basis();
        let mut cons = ConstraintSet::unconstrained(3);
        cons.fix(1, 0.5);
        cons.add_equality(vec![0.0, 2.0, 0.0], 1.0);
        let sol = solve_bp_qp(&e, [2.0, 3.0], &cons, LAMBDA).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.delta_x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn small_regularization_approaches_min_norm() {
        let e = DMatrix::from_row_slice(3, 2, &[0.6, 0.0, 0.8, 0.0, 0.0, 1.0]);
        let lambda = 1e-9;
        let sol = solve_bp_qp(&e, [1.0, -2.0], &ConstraintSet::unconstrained(3), lambda).unwrap();
        let min_norm = e.clone() * DVector::from_column_slice(&[1.0, -2.0]);
        let diff = (DVector::from_column_slice(&sol.delta_x) - min_norm).norm();
        assert!(diff <= 10.0 * lambda * 5f64.sqrt());
    }

    fn orthonormal_basis(raw: &[f64], d: usize) -> DMatrix<f64> {
        let m = DMatrix::from_row_slice(d, 2, raw);
        m.qr().q()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_instances_satisfy_kkt(
            d in 3usize..7,
            raw in prop::collection::vec(-1.0f64..1.0, 12),
            dy in prop::array::uniform2(-3.0f64..3.0),
            eq in prop::collection::vec(-1.0f64..1.0, 12),
            feasible in prop::collection::vec(-0.5f64..0.5, 6),
            width in prop::collection::vec(0.1f64..1.0, 12),
            m in 0usize..3,
        ) {
            let e = orthonormal_basis(&raw[..2 * d], d);
            let xf = DVector::from_column_slice(&feasible[..d]);
            let c = DMatrix::from_row_slice(m, d, &eq[..m * d]);
            let rhs = &c * &xf;
            let lb: Vec<f64> = (0..d).map(|j| xf[j] - width[j]).collect();
            let ub: Vec<f64> = (0..d).map(|j| xf[j] + width[6 + j]).collect();
            let cons = ConstraintSet::new(c.clone(), rhs.clone(), lb.clone(), ub.clone()).unwrap();
            let sol = solve_bp_qp(&e, dy, &cons, LAMBDA).unwrap();
            prop_assert_eq!(sol.status, QpStatus::Optimal);
            prop_assert!(sol.kkt_residual <= 1e-6, "kkt {}", sol.kkt_residual);
            let x = DVector::from_column_slice(&sol.delta_x);
            if m > 0 {
                prop_assert!((&c * &x - &rhs).amax() <= 1e-8);
            }
            for j in 0..d {
                prop_assert!(x[j] >= lb[j] - 1e-10 && x[j] <= ub[j] + 1e-10, "j={} x={} lb={} ub={} active={:?} m={}", j, x[j], lb[j], ub[j], sol.active_bounds, m);
            }
            // the known feasible point cannot beat the optimum
            let f_opt = objective(&e, dy, LAMBDA, &sol.delta_x);
            let f_feas = objective(&e, dy, LAMBDA, xf.as_slice());
            prop_assert!(f_opt <= f_feas + 1e-9);
            let again = solve_bp_qp(&e, dy, &cons, LAMBDA).unwrap();
            prop_assert_eq!(again.delta_x, sol.delta_x);
        }
    }
}
