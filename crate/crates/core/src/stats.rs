//! Point statistics, one-way ANOVA and pairwise Pearson correlations.

use serde::{Deserialize, Serialize};

use crate::data::TableView;
use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1−x) = π / sin(πx)
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

/// Modified Lentz evaluation of the continued fraction for `I_x(a, b)`.
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`, with `y = 1 − x` supplied
/// separately so callers can avoid cancellation near `x = 1`.
fn reg_inc_beta_pair(x: f64, y: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * y.ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        (front * beta_cf(x, a, b) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - front * beta_cf(y, b, a) / b).clamp(0.0, 1.0)
    }
}

/// Regularized incomplete beta `I_x(a, b)` for `x ∈ [0, 1]`, `a, b > 0`.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("incomplete beta argument {x} outside [0, 1]")));
    }
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Domain(format!("incomplete beta shape ({a}, {b}) must be positive")));
    }
    Ok(reg_inc_beta_pair(x, 1.0 - x, a, b))
}

fn check_f_args(x: f64, d1: f64, d2: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("F statistic must be non-negative, got {x}")));
    }
    if !(d1 >= 1.0 && d2 >= 1.0) {
        return Err(Error::Domain(format!("degrees of freedom ({d1}, {d2}) must be >= 1")));
    }
    Ok(())
}

/// CDF of the F distribution: `I_{d1 x/(d1 x + d2)}(d1/2, d2/2)`.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_f_args(x, d1, d2)?;
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    let denom = d1 * x + d2;
    Ok(reg_inc_beta_pair(d1 * x / denom, d2 / denom, d1 / 2.0, d2 / 2.0))
}

/// Upper tail `1 − f_cdf`, evaluated directly to keep small p-values exact.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_f_args(x, d1, d2)?;
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    let denom = d1 * x + d2;
    Ok(reg_inc_beta_pair(d2 / denom, d1 * x / denom, d2 / 2.0, d1 / 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    pub n: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    #[serde(rename = "F")]
    pub f_stat: f64,
    #[serde(rename = "df1")]
    pub df_between: usize,
    #[serde(rename = "df2")]
    pub df_within: usize,
    #[serde(rename = "p")]
    pub p_value: f64,
    pub grand_mean: f64,
    pub groups: Vec<GroupSummary>,
    /// Set when all within-group variance is zero (`F = ∞`, `p = 0`).
    pub degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
}

impl AnovaResult {
    pub fn group_means(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.mean).collect()
    }
}

pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::Parameter(format!("ANOVA needs at least 2 groups, got {k}")));
    }
    if let Some(i) = groups.iter().position(|g| g.is_empty()) {
        return Err(Error::InsufficientData(format!("ANOVA group {i} is empty")));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "ANOVA needs more observations ({n}) than groups ({k})"
        )));
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let means: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let ssb: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.len() as f64 * (m - grand).powi(2))
        .sum();
    let ssw: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let df1 = k - 1;
    let df2 = n - k;
    let summaries = groups
        .iter()
        .zip(&means)
        .map(|(g, &mean)| GroupSummary {
            cluster: None,
            n: g.len(),
            mean,
        })
        .collect();
    let (f_stat, p_value, degenerate) = if ssw == 0.0 {
        if ssb == 0.0 {
            return Err(Error::UndefinedTest(
                "all values are identical; ANOVA is undefined".into(),
            ));
        }
        (f64::INFINITY, 0.0, true)
    } else {
        let f = (ssb / df1 as f64) / (ssw / df2 as f64);
        (f, f_sf(f, df1 as f64, df2 as f64)?, false)
    };
    Ok(AnovaResult {
        f_stat,
        df_between: df1,
        df_within: df2,
        p_value,
        grand_mean: grand,
        groups: summaries,
        degenerate,
        feature: None,
    })
}

/// ANOVA on `feature` between the given clusters. `labels` are aligned with
/// the view's selected rows.
pub fn anova_by_clusters(
    view: &TableView,
    labels: &[usize],
    feature: &str,
    cluster_ids: &[usize],
) -> Result<AnovaResult> {
    if labels.len() != view.n_rows() {
        return Err(Error::Dimension {
            expected: view.n_rows(),
            actual: labels.len(),
        });
    }
    let pos = view
        .feature_names()
        .iter()
        .position(|n| n == feature)
        .ok_or_else(|| Error::UnknownNames(vec![feature.to_string()]))?;
    let column = view.column(pos);
    let groups: Vec<Vec<f64>> = cluster_ids
        .iter()
        .map(|&c| {
            column
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(v, _)| *v)
                .collect()
        })
        .collect();
    let mut result = anova_oneway(&groups)?;
    for (g, &c) in result.groups.iter_mut().zip(cluster_ids) {
        g.cluster = Some(c);
    }
    result.feature = Some(feature.to_string());
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub a: String,
    pub b: String,
    /// `None` when either feature has zero variance.
    pub r: Option<f64>,
    pub defined: bool,
}

/// Pearson r, or `None` for a zero-variance input.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// All `d(d−1)/2` feature pairs, by descending |r| (ties by names);
/// undefined pairs last.
pub fn corr_pairs(view: &TableView) -> Result<Vec<CorrelationEntry>> {
    let d = view.n_features();
    if d < 2 {
        return Err(Error::InsufficientData(format!(
            "correlations need at least 2 features, got {d}"
        )));
    }
    if view.n_rows() < 2 {
        return Err(Error::InsufficientData("correlations need at least 2 rows".into()));
    }
    let names = view.feature_names();
    let columns: Vec<Vec<f64>> = (0..d).map(|p| view.column(p)).collect();
    let mut entries = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in (i + 1)..d {
            let r = pearson(&columns[i], &columns[j]);
            entries.push(CorrelationEntry {
                a: names[i].clone(),
                b: names[j].clone(),
                r,
                defined: r.is_some(),
            });
        }
    }
    entries.sort_by(|x, y| {
        let key = |e: &CorrelationEntry| e.r.map_or(f64::NEG_INFINITY, f64::abs);
        key(y)
            .total_cmp(&key(x))
            .then_with(|| x.a.cmp(&y.a))
            .then_with(|| x.b.cmp(&y.b))
    });
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointStats {
    pub feature: String,
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn point_stats(view: &TableView) -> Result<Vec<PointStats>> {
    if view.n_rows() == 0 {
        return Err(Error::InsufficientData("no rows are selected".into()));
    }
    Ok(view
        .feature_names()
        .into_iter()
        .enumerate()
        .map(|(p, feature)| {
            let col = view.column(p);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            PointStats {
                feature,
                count: col.len(),
                mean,
                std: var.sqrt(),
                min: col.iter().copied().fold(f64::INFINITY, f64::min),
                max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_csv, LoadOptions};
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, FisherSnedecor};
    use std::sync::Arc;

    fn view(csv: &str) -> TableView {
        TableView::full(Arc::new(load_csv(csv.as_bytes(), &LoadOptions::default()).unwrap()))
    }

    #[test]
    fn ln_gamma_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn anova_reference() {
        let r = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![5.0, 6.0, 7.0]]).unwrap();
        assert!((r.f_stat - 24.0).abs() < 1e-12);
        assert_eq!((r.df_between, r.df_within), (1, 4));
        // I_{4/28}(2, 1/2) = 1 − √(1−x)(1 + x/2)
        let x: f64 = 4.0 / 28.0;
        let closed = 1.0 - (1.0 - x).sqrt() * (1.0 + x / 2.0);
        assert!((r.p_value - closed).abs() < 1e-12);
        assert_eq!(r.group_means(), vec![2.0, 6.0]);
        assert_eq!(r.grand_mean, 4.0);
        // I_{4/28}(2, 1/2) from an independent implementation
        let oracle = 1.0 - FisherSnedecor::new(1.0, 4.0).unwrap().cdf(24.0);
        assert!((r.p_value - oracle).abs() < 1e-12);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["F"], 24.0);
        assert_eq!(json["df1"], 1);
        assert_eq!(json["groups"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn anova_edge_cases() {
        let same = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(same.f_stat, 0.0);
        assert!((same.p_value - 1.0).abs() < 1e-15);
        let deg = anova_oneway(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(deg.degenerate && deg.f_stat.is_infinite() && deg.p_value == 0.0);
        assert!(matches!(
            anova_oneway(&[vec![3.0, 3.0], vec![3.0]]),
            Err(Error::UndefinedTest(_))
        ));
        assert!(anova_oneway(&[vec![1.0, 2.0]]).is_err());
        assert!(anova_oneway(&[vec![1.0], vec![]]).is_err());
        assert!(matches!(
            anova_oneway(&[vec![1.0], vec![2.0]]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn f_cdf_reference() {
        assert!((f_cdf(1.0, 1.0, 1.0).unwrap() - 0.5).abs() < 1e-10);
        assert_eq!(f_cdf(0.0, 3.0, 7.0).unwrap(), 0.0);
        assert!(f_cdf(1e9, 2.0, 5.0).unwrap() >= 1.0 - 1e-9);
        assert!(matches!(f_cdf(-1.0, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(f_cdf(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn correlation_examples() {
        let v = view("x,y,z,w\n1,1,-1,4\n2,3,-2,4\n3,2,-3,4\n");
        let pairs = corr_pairs(&v).unwrap();
        assert_eq!(pairs.len(), 6);
        assert_eq!((pairs[0].a.as_str(), pairs[0].b.as_str()), ("x", "z"));
        assert!((pairs[0].r.unwrap() + 1.0).abs() < 1e-15);
        let xy = pairs.iter().find(|e| e.a == "x" && e.b == "y").unwrap();
        assert!((xy.r.unwrap() - 0.5).abs() < 1e-15);
        assert!(pairs[3..].iter().all(|e| !e.defined && e.r.is_none()));
        assert!(pairs[..3].iter().all(|e| e.defined));
        assert_eq!(pearson(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]), Some(1.0));
        assert!(corr_pairs(&v.with_features(&["x"]).unwrap()).is_err());
    }

    #[test]
    fn point_stats_examples() {
        let v = view("a,b\n2,1\n4,5\n6,3\n");
        let s = point_stats(&v).unwrap();
        assert_eq!(s[0].mean, 4.0);
        assert_eq!((s[1].min, s[1].max, s[1].count), (1.0, 5.0, 3));
        let one = v.clone().with_mask(vec![false, true, false]).unwrap();
        assert!(point_stats(&one).unwrap().iter().all(|p| p.std == 0.0));
        let none = v.with_mask(vec![false; 3]).unwrap();
        assert!(point_stats(&none).is_err());
    }

    #[test]
    fn cluster_anova_uses_labels() {
        let v = view("g,v\n0,1\n0,2\n0,3\n1,5\n1,6\n1,7\n");
        let r = anova_by_clusters(&v, &[0, 0, 0, 1, 1, 1], "v", &[0, 1]).unwrap();
        assert!((r.f_stat - 24.0).abs() < 1e-12);
        assert_eq!(r.groups[1].cluster, Some(1));
        assert!(anova_by_clusters(&v, &[0, 0], "v", &[0, 1]).is_err());
        assert!(anova_by_clusters(&v, &[0, 0, 0, 1, 1, 1], "nope", &[0, 1]).is_err());
    }

    fn pooled_t(a: &[f64], b: &[f64]) -> f64 {
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let ma = a.iter().sum::<f64>() / na;
        let mb = b.iter().sum::<f64>() / nb;
        let ss = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>()
            + b.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
        let sp2 = ss / (na + nb - 2.0);
        (ma - mb) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt()
    }

    proptest! {
        #[test]
        fn two_group_f_is_t_squared(a in prop::collection::vec(-50.0f64..50.0, 2..20), b in prop::collection::vec(-50.0f64..50.0, 2..20)) {
            let r = anova_oneway(&[a.clone(), b.clone()]).unwrap();
            let t = pooled_t(&a, &b);
            prop_assert!((r.f_stat - t * t).abs() <= 1e-9 * (1.0 + r.f_stat));
        }

        #[test]
        fn f_cdf_matches_oracle(x in 0.0f64..50.0, d1 in 1u32..40, d2 in 1u32..40) {
            let ours = f_cdf(x, d1 as f64, d2 as f64).unwrap();
            let oracle = FisherSnedecor::new(d1 as f64, d2 as f64).unwrap().cdf(x);
            prop_assert!((ours - oracle).abs() <= 1e-10);
            let sf = f_sf(x, d1 as f64, d2 as f64).unwrap();
            prop_assert!((ours + sf - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn f_cdf_monotone_and_reciprocal(x in 0.01f64..20.0, dx in 0.0f64..5.0, d in 1u32..30) {
            let d = d as f64;
            prop_assert!(f_cdf(x + dx, d, d).unwrap() >= f_cdf(x, d, d).unwrap() - 1e-15);
            let sum = f_cdf(x, d, d).unwrap() + f_cdf(1.0 / x, d, d).unwrap();
            prop_assert!((sum - 1.0).abs() <= 1e-10);
        }

        #[test]
        fn anova_affine_invariance(groups in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2..8), 2..5), shift in -100.0f64..100.0, scale in 0.1f64..10.0) {
            let base = anova_oneway(&groups).unwrap();
            let moved: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| v * scale + shift).collect()).collect();
            let r = anova_oneway(&moved).unwrap();
            prop_assert!((r.f_stat - base.f_stat).abs() <= 1e-7 * (1.0 + base.f_stat));
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }

        #[test]
        fn pearson_affine_invariance(xs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30), a in 0.1f64..10.0, b in -10.0f64..10.0) {
            let x: Vec<f64> = xs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = xs.iter().map(|p| p.1).collect();
            if let Some(r) = pearson(&x, &y) {
                let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                prop_assert!((pearson(&x2, &y).unwrap() - r).abs() <= 1e-12);
                prop_assert!((pearson(&y, &x).unwrap() - r).abs() <= 1e-15);
                prop_assert!(r.abs() <= 1.0);
            }
        }

        #[test]
        fn filtered_stats_match_submatrix(rows in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, any::<bool>()), 2..20)) {
            let mut csv = String::from("a,b\n");
            for (a, b, _) in &rows {
                csv.push_str(&format!("{a:?},{b:?}\n"));
            }
            let mask: Vec<bool> = rows.iter().map(|r| r.2).collect();
            prop_assume!(mask.iter().any(|&m| m));
            let filtered = point_stats(&view(&csv).with_mask(mask).unwrap()).unwrap();
            let mut sub = String::from("a,b\n");
            for (a, b, _) in rows.iter().filter(|r| r.2) {
                sub.push_str(&format!("{a:?},{b:?}\n"));
            }
            let direct = point_stats(&view(&sub)).unwrap();
            for (f, d) in filtered.iter().zip(&direct) {
                prop_assert_eq!(f, d);
            }
        }
    }
}
