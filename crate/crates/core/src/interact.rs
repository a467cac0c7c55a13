//! Forward projection, prolines and backward projection over a fitted
//! linear [`ProjectionModel`].

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TableView;
use crate::dimred::ProjectionModel;
use crate::error::{Error, Result};
use crate::qp::{check_kkt, solve_bp_qp, ConstraintSet, QpSolution, QpStatus};

pub const DEFAULT_PROLINE_K: f64 = 2.0;
pub const DEFAULT_PROLINE_C: f64 = 0.25;

/// `Δy = Δx E` (with the model's feature scaling, if any).
pub fn forward_project(model: &ProjectionModel, delta_x: &[f64]) -> Result<[f64; 2]> {
    model.map_delta(delta_x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proline {
    pub feature: String,
    pub feature_index: usize,
    #[serde(rename = "params")]
    pub param_values: Vec<f64>,
    pub path: Vec<[f64; 2]>,
    pub sigma: f64,
    pub k_extent: f64,
    pub c_step: f64,
    pub length: f64,
    pub degenerate: bool,
}

fn check_view(model: &ProjectionModel, view: &TableView) -> Result<()> {
    if model.feature_names != view.feature_names() {
        return Err(Error::Parameter(
            "projection model features do not match the view".into(),
        ));
    }
    Ok(())
}

fn check_grid(k: f64, c: f64) -> Result<usize> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Parameter(format!("proline extent k must be positive, got {k}")));
    }
    if !(c > 0.0 && c <= k) {
        return Err(Error::Parameter(format!(
            "proline step c must satisfy 0 < c <= k, got {c}"
        )));
    }
    Ok(((k / c).round() as usize).max(1))
}

fn polyline_length(path: &[[f64; 2]]) -> f64 {
    path.windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum()
}

fn build_proline(
    model: &ProjectionModel,
    point: &[f64],
    feature_index: usize,
    sigma: f64,
    half_steps: usize,
    k: f64,
    c: f64,
) -> Result<Proline> {
    let step = k / half_steps as f64;
    let mut moved = point.to_vec();
    let mut param_values = Vec::with_capacity(2 * half_steps + 1);
    let mut path = Vec::with_capacity(2 * half_steps + 1);
    for j in 0..=2 * half_steps {
        let t = (j as f64 - half_steps as f64) * step;
        let v = point[feature_index] + t * sigma;
        moved[feature_index] = v;
        param_values.push(v);
        path.push(model.project(&moved)?);
    }
    let length = polyline_length(&path);
    Ok(Proline {
        feature: model.feature_names[feature_index].clone(),
        feature_index,
        param_values,
        path,
        sigma,
        k_extent: k,
        c_step: c,
        length,
        degenerate: sigma == 0.0,
    })
}

/// Sweeps feature `feature_index` of `point` over `x_i ± kσ_i` with
/// `2·round(k/c) + 1` evenly spaced samples (σ_i over the view).
pub fn proline(
    model: &ProjectionModel,
    view: &TableView,
    point: &[f64],
    feature_index: usize,
    k: f64,
    c: f64,
) -> Result<Proline> {
    check_view(model, view)?;
    if point.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            actual: point.len(),
        });
    }
    if feature_index >= model.dim() {
        return Err(Error::Parameter(format!("feature index {feature_index} out of range")));
    }
    let half_steps = check_grid(k, c)?;
    let sigma = view.feature_std()[feature_index];
    build_proline(model, point, feature_index, sigma, half_steps, k, c)
}

/// Prolines for `features` (all when `None`), longest path first; equal
/// lengths keep feature order.
pub fn proline_all(
    model: &ProjectionModel,
    view: &TableView,
    point: &[f64],
    k: f64,
    c: f64,
    features: Option<&[usize]>,
) -> Result<Vec<Proline>> {
    check_view(model, view)?;
    if point.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            actual: point.len(),
        });
    }
    let half_steps = check_grid(k, c)?;
    let sigmas = view.feature_std();
    let all: Vec<usize> = (0..model.dim()).collect();
    let mut selected = features.unwrap_or(&all).to_vec();
    selected.sort_unstable();
    selected.dedup();
    let mut lines = selected
        .into_iter()
        .map(|i| {
            if i >= model.dim() {
                return Err(Error::Parameter(format!("feature index {i} out of range")));
            }
            build_proline(model, point, i, sigmas[i], half_steps, k, c)
        })
        .collect::<Result<Vec<_>>>()?;
    lines.sort_by(|a, b| {
        b.length
            .total_cmp(&a.length)
            .then(a.feature_index.cmp(&b.feature_index))
    });
    Ok(lines)
}

/// Minimal-norm feature change reproducing `delta_y`: `Δx = Δy Eᵀ`. For
/// scaled models the general form `W (WᵀW)⁻¹ Δy` is used.
pub fn backward_project_unconstrained(model: &ProjectionModel, delta_y: [f64; 2]) -> Result<Vec<f64>> {
    if model.scale.is_none() {
        return Ok(model
            .basis
            .iter()
            .map(|e| delta_y[0] * e[0] + delta_y[1] * e[1])
            .collect());
    }
    let w = model.effective_basis();
    let gram = w.transpose() * &w;
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("projection basis is rank deficient".into()))?;
    let dx = w * (inv * DVector::from_column_slice(&delta_y));
    Ok(dx.iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increase,
    Decrease,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureChange {
    pub feature: String,
    pub delta: f64,
    pub new_value: f64,
    pub direction: Direction,
}

/// Backward-projection result keyed by feature name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardResult {
    pub delta_x: BTreeMap<String, f64>,
    pub new_point: BTreeMap<String, f64>,
    pub changes: Vec<FeatureChange>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub status: QpStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<QpSolution>,
}

fn describe(model: &ProjectionModel, point: &[f64], delta: &[f64]) -> (BTreeMap<String, f64>, BTreeMap<String, f64>, Vec<FeatureChange>) {
    let mut delta_x = BTreeMap::new();
    let mut new_point = BTreeMap::new();
    let mut changes = Vec::with_capacity(delta.len());
    for (i, name) in model.feature_names.iter().enumerate() {
        let new_value = point[i] + delta[i];
        let direction = if delta[i].abs() <= 1e-9 * (1.0 + point[i].abs()) {
            Direction::Unchanged
        } else if delta[i] > 0.0 {
            Direction::Increase
        } else {
            Direction::Decrease
        };
        delta_x.insert(name.clone(), delta[i]);
        new_point.insert(name.clone(), new_value);
        changes.push(FeatureChange {
            feature: name.clone(),
            delta: delta[i],
            new_value,
            direction,
        });
    }
    (delta_x, new_point, changes)
}

pub fn backward_unconstrained_result(model: &ProjectionModel, point: &[f64], delta_y: [f64; 2]) -> Result<BackwardResult> {
    if point.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            actual: point.len(),
        });
    }
    let delta = backward_project_unconstrained(model, delta_y)?;
    let w = model.effective_basis();
    let achieved = model.map_delta(&delta)?;
    let objective = (achieved[0] - delta_y[0]).powi(2) + (achieved[1] - delta_y[1]).powi(2);
    let kkt_residual = check_kkt(&w, delta_y, &ConstraintSet::unconstrained(model.dim()), 0.0, &delta);
    let (delta_x, new_point, changes) = describe(model, point, &delta);
    Ok(BackwardResult {
        delta_x,
        new_point,
        changes,
        objective,
        kkt_residual,
        status: QpStatus::Optimal,
        solution: None,
    })
}

pub fn backward_project_constrained(
    model: &ProjectionModel,
    point: &[f64],
    delta_y: [f64; 2],
    cons: &ConstraintSet,
    lambda_reg: f64,
) -> Result<BackwardResult> {
    if point.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            actual: point.len(),
        });
    }
    let w: DMatrix<f64> = model.effective_basis();
    let solution = solve_bp_qp(&w, delta_y, cons, lambda_reg)?;
    let (delta_x, new_point, changes) = describe(model, point, &solution.delta_x);
    Ok(BackwardResult {
        delta_x,
        new_point,
        changes,
        objective: solution.objective,
        kkt_residual: solution.kkt_residual,
        status: solution.status,
        solution: Some(solution),
    })
}

/// A point given either by row id or by explicit feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointRef {
    RowId(String),
    RowIndex(u64),
    Values(BTreeMap<String, f64>),
}

impl PointRef {
    /// Values of the view's features for this point. Rows outside the
    /// current filter are allowed; explicit maps must name every feature.
    pub fn resolve(&self, view: &TableView) -> Result<Vec<f64>> {
        let table = view.table();
        let id = match self {
            PointRef::RowId(id) => id.clone(),
            PointRef::RowIndex(i) => i.to_string(),
            PointRef::Values(map) => {
                let names = view.feature_names();
                let unknown: Vec<String> = map
                    .keys()
                    .filter(|k| !names.contains(k))
                    .cloned()
                    .collect();
                if !unknown.is_empty() {
                    return Err(Error::UnknownNames(unknown));
                }
                return names
                    .iter()
                    .map(|n| {
                        map.get(n).copied().ok_or_else(|| {
                            Error::Parameter(format!("point is missing feature `{n}`"))
                        })
                    })
                    .collect();
            }
        };
        let row = table
            .row_index(&id)
            .ok_or_else(|| Error::Parameter(format!("unknown row id `{id}`")))?;
        Ok(view.point(row))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficients {
    Dense(Vec<f64>),
    ByName(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualitySpec {
    pub coeffs: Coefficients,
    pub rhs: f64,
}

/// Interval on one feature. Bounds apply to the change `Δx_i` unless
/// `absolute` is set, in which case they apply to the new value `x_i + Δx_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSpec {
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ub: Option<f64>,
    #[serde(default)]
    pub absolute: bool,
}

/// Feature-name keyed constraint description, as sent by clients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    #[serde(default)]
    pub equalities: Vec<EqualitySpec>,
    #[serde(default)]
    pub bounds: Vec<BoundSpec>,
    /// Features held at their current value (`Δx_i = 0`).
    #[serde(default)]
    pub fixed: Vec<String>,
}

impl ConstraintSpec {
    pub fn resolve(&self, feature_names: &[String], point: &[f64]) -> Result<ConstraintSet> {
        let d = feature_names.len();
        let index = |name: &str| {
            feature_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::UnknownNames(vec![name.to_string()]))
        };
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs = Vec::new();
        for eq in &self.equalities {
            let row = match &eq.coeffs {
                Coefficients::Dense(v) => {
                    if v.len() != d {
                        return Err(Error::Dimension {
                            expected: d,
                            actual: v.len(),
                        });
                    }
                    v.clone()
                }
                Coefficients::ByName(map) => {
                    let mut row = vec![0.0; d];
                    for (name, c) in map {
                        row[index(name)?] = *c;
                    }
                    row
                }
            };
            rows.push(row);
            rhs.push(eq.rhs);
        }
        for name in &self.fixed {
            let mut row = vec![0.0; d];
            row[index(name)?] = 1.0;
            rows.push(row);
            rhs.push(0.0);
        }
        let mut lb = vec![f64::NEG_INFINITY; d];
        let mut ub = vec![f64::INFINITY; d];
        for b in &self.bounds {
            let j = index(&b.feature)?;
            let shift = if b.absolute { point[j] } else { 0.0 };
            if let Some(v) = b.lb {
                lb[j] = lb[j].max(v - shift);
            }
            if let Some(v) = b.ub {
                ub[j] = ub[j].min(v - shift);
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        ConstraintSet::new(
            DMatrix::from_row_slice(rows.len(), d, &flat),
            DVector::from_vec(rhs),
            lb,
            ub,
        )
    }
}
