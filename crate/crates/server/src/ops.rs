//! Request types and engine calls shared by the HTTP routes and the CLI, so
//! both front ends produce identical results for identical inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use projscope_core::cluster::{
    agglomerative, cluster_profile, kmeans, ClusterMethod, ClusterProfile, ClusteringModel,
    KmeansOptions, Linkage,
};
use projscope_core::data::TableView;
use projscope_core::dimred::{embed_pca, fit_cmds, Embedding, PcaOptions, ProjectionMethod, ProjectionModel};
use projscope_core::distance::{pairwise_distances, Distance};
use projscope_core::interact::{
    backward_project_constrained, backward_unconstrained_result, forward_project, proline_all,
    BackwardResult, ConstraintSpec, PointRef, Proline, DEFAULT_PROLINE_C, DEFAULT_PROLINE_K,
};
use projscope_core::qp::DEFAULT_LAMBDA_REG;
use projscope_core::{CancelToken, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRequest {
    pub method: ClusterMethod,
    pub k: usize,
    #[serde(default)]
    pub distance: Distance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linkage: Option<Linkage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub model: ClusteringModel,
    pub profile: ClusterProfile,
}

pub fn run_clustering(view: &TableView, req: &ClusterRequest, cancel: &CancelToken) -> Result<ClusterResult> {
    let x = view.matrix();
    let model = match req.method {
        ClusterMethod::Kmeans => {
            if req.linkage.is_some() {
                return Err(Error::Parameter("linkage applies to agglomerative clustering only".into()));
            }
            let mut opts = KmeansOptions::new(req.k);
            opts.distance = req.distance;
            if let Some(seed) = req.seed {
                opts.seed = seed;
            }
            if let Some(max_iter) = req.max_iter {
                opts.max_iter = max_iter;
            }
            kmeans(&x, &opts, cancel)?
        }
        ClusterMethod::Agglomerative => {
            agglomerative(&x, req.k, req.distance, req.linkage.unwrap_or_default(), cancel)?
        }
    };
    let profile = cluster_profile(&model, view)?;
    Ok(ClusterResult { model, profile })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRequest {
    pub method: ProjectionMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<Distance>,
    #[serde(default)]
    pub standardize: bool,
}

pub fn run_projection(view: &TableView, req: &ProjectionRequest) -> Result<Embedding> {
    let x = view.matrix();
    match req.method {
        ProjectionMethod::Pca => {
            if matches!(req.distance, Some(d) if d != Distance::Euclidean) {
                return Err(Error::Parameter(
                    "PCA is euclidean only; use cmds for other distance measures".into(),
                ));
            }
            embed_pca(&x, &view.feature_names(), PcaOptions { standardize: req.standardize })
        }
        ProjectionMethod::Cmds => {
            if req.standardize {
                return Err(Error::Parameter("standardize applies to PCA only".into()));
            }
            let d = pairwise_distances(&x, req.distance.unwrap_or_default())?;
            fit_cmds(&d)
        }
    }
}

/// Embedding plus the row ids it covers and, when a current clustering
/// exists, each row's cluster label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    #[serde(flatten)]
    pub embedding: Embedding,
    pub row_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

pub fn projection_result(view: &TableView, embedding: Embedding, labels: Option<Vec<usize>>) -> ProjectionResult {
    let ids = view.table().row_ids();
    ProjectionResult {
        embedding,
        row_ids: view.selected_rows().into_iter().map(|i| ids[i].clone()).collect(),
        labels,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardRequest {
    pub point: PointRef,
    /// Feature changes; omitted features do not change.
    pub delta: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardResult {
    pub y: [f64; 2],
    pub delta_y: [f64; 2],
    pub new_y: [f64; 2],
}

fn dense_delta(model: &ProjectionModel, delta: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
    let unknown: Vec<String> = delta
        .keys()
        .filter(|k| !model.feature_names.contains(k))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownNames(unknown));
    }
    Ok(model
        .feature_names
        .iter()
        .map(|n| delta.get(n).copied().unwrap_or(0.0))
        .collect())
}

pub fn run_forward(model: &ProjectionModel, view: &TableView, req: &ForwardRequest) -> Result<ForwardResult> {
    let point = req.point.resolve(view)?;
    let dx = dense_delta(model, &req.delta)?;
    let y = model.project(&point)?;
    let delta_y = forward_project(model, &dx)?;
    Ok(ForwardResult {
        y,
        delta_y,
        new_y: [y[0] + delta_y[0], y[1] + delta_y[1]],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProlineRequest {
    pub point: PointRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
}

pub fn run_prolines(model: &ProjectionModel, view: &TableView, req: &ProlineRequest) -> Result<Vec<Proline>> {
    let point = req.point.resolve(view)?;
    let indices = match &req.features {
        None => None,
        Some(names) => {
            let unknown: Vec<String> = names
                .iter()
                .filter(|n| !model.feature_names.contains(n))
                .cloned()
                .collect();
            if !unknown.is_empty() {
                return Err(Error::UnknownNames(unknown));
            }
            Some(
                names
                    .iter()
                    .filter_map(|n| model.feature_names.iter().position(|m| m == n))
                    .collect::<Vec<_>>(),
            )
        }
    };
    proline_all(
        model,
        view,
        &point,
        req.k.unwrap_or(DEFAULT_PROLINE_K),
        req.c.unwrap_or(DEFAULT_PROLINE_C),
        indices.as_deref(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardRequest {
    pub point: PointRef,
    pub delta_y: [f64; 2],
    /// Absent: closed-form minimal-norm solution. Present (even empty): QP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_reg: Option<f64>,
}

pub fn run_backward(model: &ProjectionModel, view: &TableView, req: &BackwardRequest) -> Result<BackwardResult> {
    let point = req.point.resolve(view)?;
    match &req.constraints {
        None => backward_unconstrained_result(model, &point, req.delta_y),
        Some(spec) => {
            let cons = spec.resolve(&model.feature_names, &point)?;
            backward_project_constrained(
                model,
                &point,
                req.delta_y,
                &cons,
                req.lambda_reg.unwrap_or(DEFAULT_LAMBDA_REG),
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRequest {
    pub feature: String,
    pub cluster_ids: Vec<usize>,
}
