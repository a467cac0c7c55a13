//! k-means and agglomerative clustering, plus the size-ordered cluster
//! profile used by the heatmap view.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cancel::CancelToken;
use crate::data::{normalize, NormalizeMethod, TableView};
use crate::distance::{pairwise_distances, Distance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Kmeans,
    #[serde(alias = "agglo")]
    Agglomerative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
    Ward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Cluster ids: `0..n` are points, `n + s` is the cluster formed at step `s`.
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub distance: Distance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linkage: Option<Linkage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringModel {
    pub method: ClusterMethod,
    pub k: usize,
    pub params: ClusterParams,
    pub n_features: usize,
    pub labels: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centroids: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merges: Option<Vec<Merge>>,
    /// Cluster ids by descending size, ties by lowest id.
    pub order: Vec<usize>,
    pub sizes: Vec<usize>,
    /// k-means objective after every iteration (WCSS for euclidean, sum of
    /// L1 distances for manhattan).
    #[serde(skip)]
    pub objective_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KmeansOptions {
    pub k: usize,
    pub distance: Distance,
    pub seed: u64,
    pub max_iter: usize,
}

impl KmeansOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            distance: Distance::Euclidean,
            seed: 0,
            max_iter: 300,
        }
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds the number of rows ({n})"
        )));
    }
    Ok(())
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn cluster_sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

fn size_order(sizes: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    order
}

/// Sum of squared euclidean distances from each point to its centroid.
pub fn wcss(x: &DMatrix<f64>, labels: &[usize], centroids: &[Vec<f64>]) -> Result<f64> {
    if labels.len() != x.nrows() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            actual: labels.len(),
        });
    }
    let mut total = 0.0;
    for (row, &l) in x.row_iter().zip(labels) {
        let c = centroids.get(l).ok_or_else(|| {
            Error::Parameter(format!("label {l} has no centroid ({} given)", centroids.len()))
        })?;
        if c.len() != x.ncols() {
            return Err(Error::Dimension {
                expected: x.ncols(),
                actual: c.len(),
            });
        }
        total += row.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total)
}

fn point_cost(distance: Distance, a: &[f64], b: &[f64]) -> f64 {
    match distance {
        Distance::Manhattan => distance.between(a, b),
        _ => sq_dist(a, b),
    }
}

fn nearest(distance: Distance, p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = point_cost(distance, p, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn update_centroids(
    distance: Distance,
    points: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    d: usize,
) -> Vec<Vec<f64>> {
    (0..k)
        .map(|c| {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(labels)
                .filter_map(|(p, &l)| (l == c).then_some(p))
                .collect();
            (0..d)
                .map(|j| {
                    let mut col: Vec<f64> = members.iter().map(|p| p[j]).collect();
                    match distance {
                        Distance::Manhattan => median(&mut col),
                        _ => col.iter().sum::<f64>() / col.len() as f64,
                    }
                })
                .collect()
        })
        .collect()
}

fn objective(distance: Distance, points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| point_cost(distance, p, &centroids[l]))
        .sum()
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, distance: Distance, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    // D(x)^2 weighting; the euclidean cost is already squared
    let weight = |a: &[f64], b: &[f64]| match distance {
        Distance::Manhattan => distance.between(a, b).powi(2),
        _ => sq_dist(a, b),
    };
    let mut closest: Vec<f64> = points.iter().map(|p| weight(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, w) in closest.iter().enumerate() {
                if *w > 0.0 {
                    pick = Some(i);
                    if target < *w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // all remaining points coincide with chosen centers
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            closest[i] = closest[i].min(weight(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Moves the point farthest from its own centroid into each empty cluster.
fn repair_empty(
    distance: Distance,
    points: &[Vec<f64>],
    labels: &mut [usize],
    centroids: &mut [Vec<f64>],
) {
    let k = centroids.len();
    loop {
        let sizes = cluster_sizes(labels, k);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] > 1 {
                let d = point_cost(distance, p, &centroids[labels[i]]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        let i = far.expect("k <= n leaves a donor cluster");
        labels[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

/// Single-point transfers that strictly lower WCSS, accounting for the
/// centroid shift of both clusters. Returns true if any point moved.
fn hartigan_pass(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>], d: usize) -> bool {
    let k = centroids.len();
    let mut moved = false;
    for i in 0..points.len() {
        let sizes = cluster_sizes(labels, k);
        let from = labels[i];
        if sizes[from] < 2 {
            continue;
        }
        let na = sizes[from] as f64;
        let removal = na / (na - 1.0) * sq_dist(&points[i], &centroids[from]);
        let mut best = None;
        let mut best_gain = 1e-12 * (1.0 + removal);
        for to in (0..k).filter(|&c| c != from) {
            let nb = sizes[to] as f64;
            let gain = removal - nb / (nb + 1.0) * sq_dist(&points[i], &centroids[to]);
            if gain > best_gain {
                best_gain = gain;
                best = Some(to);
            }
        }
        if let Some(to) = best {
            labels[i] = to;
            let fresh = update_centroids(Distance::Euclidean, points, labels, k, d);
            centroids[from] = fresh[from].clone();
            centroids[to] = fresh[to].clone();
            moved = true;
        }
    }
    moved
}

pub fn kmeans(x: &DMatrix<f64>, options: &KmeansOptions, cancel: &CancelToken) -> Result<ClusteringModel> {
    let (n, d) = x.shape();
    check_k(options.k, n)?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if !matches!(options.distance, Distance::Euclidean | Distance::Manhattan) {
        return Err(Error::Parameter(format!(
            "k-means supports euclidean or manhattan distance, not {}",
            options.distance.name()
        )));
    }
    let k = options.k;
    let distance = options.distance;
    let points = rows_of(x);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut centroids = kmeans_pp(&points, k, distance, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();

    for _ in 0..options.max_iter {
        cancel.check()?;
        let mut next: Vec<usize> = points.iter().map(|p| nearest(distance, p, &centroids)).collect();
        repair_empty(distance, &points, &mut next, &mut centroids);
        if next == labels {
            break;
        }
        labels = next;
        centroids = update_centroids(distance, &points, &labels, k, d);
        history.push(objective(distance, &points, &labels, &centroids));
    }

    if distance == Distance::Euclidean {
        for _ in 0..options.max_iter {
            cancel.check()?;
            if !hartigan_pass(&points, &mut labels, &mut centroids, d) {
                break;
            }
            history.push(objective(distance, &points, &labels, &centroids));
        }
    }

    let sizes = cluster_sizes(&labels, k);
    Ok(ClusteringModel {
        method: ClusterMethod::Kmeans,
        k,
        params: ClusterParams {
            distance,
            linkage: None,
            seed: Some(options.seed),
            max_iter: Some(options.max_iter),
        },
        n_features: d,
        labels,
        centroids: Some(centroids),
        merges: None,
        order: size_order(&sizes),
        sizes,
        objective_history: history,
    })
}

/// Full bottom-up dendrogram via the Lance–Williams recurrence. Ward runs
/// on squared euclidean distances and reports `sqrt` heights.
pub fn linkage_tree(
    x: &DMatrix<f64>,
    distance: Distance,
    linkage: Linkage,
    cancel: &CancelToken,
) -> Result<Vec<Merge>> {
    if linkage == Linkage::Ward && distance != Distance::Euclidean {
        return Err(Error::Parameter(
            "ward linkage requires euclidean distance".into(),
        ));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = x.nrows();
    let mut dist = pairwise_distances(x, distance)?;
    if linkage == Linkage::Ward {
        dist.apply(|v| *v *= *v);
    }
    let mut active: Vec<bool> = vec![true; n];
    let mut size = vec![1usize; n];
    let mut ids: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        cancel.check()?;
        let mut best = (usize::MAX, usize::MAX);
        let mut best_d = f64::INFINITY;
        for i in (0..n).filter(|&i| active[i]) {
            for j in ((i + 1)..n).filter(|&j| active[j]) {
                if dist[(i, j)] < best_d {
                    best_d = dist[(i, j)];
                    best = (i, j);
                }
            }
        }
        let (i, j) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for m in (0..n).filter(|&m| active[m] && m != i && m != j) {
            let (dim, djm) = (dist[(i, m)], dist[(j, m)]);
            let nm = size[m] as f64;
            let updated = match linkage {
                Linkage::Single => dim.min(djm),
                Linkage::Complete => dim.max(djm),
                Linkage::Average => (ni * dim + nj * djm) / (ni + nj),
                Linkage::Ward => {
                    ((ni + nm) * dim + (nj + nm) * djm - nm * best_d) / (ni + nj + nm)
                }
            };
            dist[(i, m)] = updated;
            dist[(m, i)] = updated;
        }
        let height = if linkage == Linkage::Ward {
            best_d.max(0.0).sqrt()
        } else {
            best_d
        };
        let (a, b) = (ids[i].min(ids[j]), ids[i].max(ids[j]));
        size[i] += size[j];
        active[j] = false;
        ids[i] = n + step;
        merges.push(Merge {
            a,
            b,
            height,
            size: size[i],
        });
    }
    Ok(merges)
}

/// Labels from applying the first `n − k` merges, numbered by the first
/// row in which each cluster appears.
pub fn cut_tree(n: usize, merges: &[Merge], k: usize) -> Result<Vec<usize>> {
    check_k(k, n)?;
    let mut parent: Vec<usize> = (0..(2 * n).max(1)).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (step, m) in merges.iter().take(n - k).enumerate() {
        let node = n + step;
        let ra = find(&mut parent, m.a);
        let rb = find(&mut parent, m.b);
        parent[ra] = node;
        parent[rb] = node;
    }
    let mut root_label = std::collections::HashMap::new();
    Ok((0..n)
        .map(|i| {
            let r = find(&mut parent, i);
            let next = root_label.len();
            *root_label.entry(r).or_insert(next)
        })
        .collect())
}

pub fn agglomerative(
    x: &DMatrix<f64>,
    k: usize,
    distance: Distance,
    linkage: Linkage,
    cancel: &CancelToken,
) -> Result<ClusteringModel> {
    check_k(k, x.nrows())?;
    let merges = linkage_tree(x, distance, linkage, cancel)?;
    let labels = cut_tree(x.nrows(), &merges, k)?;
    let sizes = cluster_sizes(&labels, k);
    Ok(ClusteringModel {
        method: ClusterMethod::Agglomerative,
        k,
        params: ClusterParams {
            distance,
            linkage: Some(linkage),
            seed: None,
            max_iter: None,
        },
        n_features: x.ncols(),
        labels,
        centroids: None,
        merges: Some(merges),
        order: size_order(&sizes),
        sizes,
        objective_history: Vec::new(),
    })
}

/// Per-cluster means of min-max normalized features. `values[f][c]` is
/// feature `f` in the `c`-th largest cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub features: Vec<String>,
    pub clusters: Vec<usize>,
    pub sizes: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

pub fn cluster_profile(model: &ClusteringModel, view: &TableView) -> Result<ClusterProfile> {
    if model.labels.len() != view.n_rows() {
        return Err(Error::Dimension {
            expected: view.n_rows(),
            actual: model.labels.len(),
        });
    }
    if model.n_features != view.n_features() {
        return Err(Error::Dimension {
            expected: view.n_features(),
            actual: model.n_features,
        });
    }
    let norm = normalize(view, NormalizeMethod::Minmax);
    let values = (0..view.n_features())
        .map(|f| {
            model
                .order
                .iter()
                .map(|&c| {
                    let (sum, count) = model
                        .labels
                        .iter()
                        .enumerate()
                        .filter(|(_, &l)| l == c)
                        .fold((0.0, 0usize), |(s, n), (i, _)| (s + norm[(i, f)], n + 1));
                    (sum / count as f64).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    Ok(ClusterProfile {
        features: view.feature_names(),
        clusters: model.order.clone(),
        sizes: model.order.iter().map(|&c| model.sizes[c]).collect(),
        values,
    })
}
