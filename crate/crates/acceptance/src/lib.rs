//! Independent reference implementations used by the acceptance suite.
//!
//! Everything here is plain `std` arithmetic so that no check shares code
//! (or a linear-algebra crate) with the engine under test.

#![allow(clippy::needless_range_loop)]

pub type Matrix = Vec<Vec<f64>>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Population covariance (divisor n) of the rows.
pub fn covariance(rows: &[Vec<f64>]) -> Matrix {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    cov
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// eigenvalues in descending order and the matching unit eigenvectors.
pub fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.clone();
    let mut v: Matrix = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
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
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect();
    (values, vectors)
}

/// Largest sine of the principal angles between span(u) and span(v), where
/// both are `d × 2` with orthonormal columns.
pub fn max_principal_sine(u: &[[f64; 2]], v: &[[f64; 2]]) -> f64 {
    let d = u.len();
    // residual of u after projecting onto span(v)
    let mut r = vec![[0.0; 2]; d];
    for c in 0..2 {
        let coef: Vec<f64> = (0..2).map(|k| (0..d).map(|i| v[i][k] * u[i][c]).sum()).collect();
        for i in 0..d {
            r[i][c] = u[i][c] - v[i][0] * coef[0] - v[i][1] * coef[1];
        }
    }
    let g00: f64 = r.iter().map(|x| x[0] * x[0]).sum();
    let g11: f64 = r.iter().map(|x| x[1] * x[1]).sum();
    let g01: f64 = r.iter().map(|x| x[0] * x[1]).sum();
    let half_trace = 0.5 * (g00 + g11);
    let disc = (0.25 * (g00 - g11).powi(2) + g01 * g01).sqrt();
    (half_trace + disc).max(0.0).sqrt()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Components left after deleting the `k − 1` heaviest edges of the
/// euclidean minimum spanning tree (Prim). Labels by first appearance.
pub fn mst_components(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    best[0] = 0.0;
    for _ in 0..n {
        let u = (0..n)
            .filter(|&i| !in_tree[i])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]))
            .unwrap();
        in_tree[u] = true;
        if parent[u] != usize::MAX {
            edges.push((best[u], parent[u], u));
        }
        for w in 0..n {
            if !in_tree[w] {
                let d = euclidean(&points[u], &points[w]);
                if d < best[w] {
                    best[w] = d;
                    parent[w] = u;
                }
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    edges.truncate(n - k);
    let mut comp: Vec<usize> = (0..n).collect();
    fn find(c: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while c[r] != r {
            r = c[r];
        }
        c[i] = r;
        r
    }
    for (_, a, b) in edges {
        let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
        comp[ra.max(rb)] = ra.min(rb);
    }
    relabel(&(0..n).map(|i| find(&mut comp, i)).collect::<Vec<_>>())
}

/// Labels renumbered by first appearance, so equal partitions compare equal.
pub fn relabel(labels: &[usize]) -> Vec<usize> {
    let mut seen: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(p) => p,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect()
}

pub fn wcss(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let d = points[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
            .collect();
        total += members.iter().map(|p| euclidean(p, &centroid).powi(2)).sum::<f64>();
    }
    total
}

/// Minimum WCSS over every split into two non-empty clusters.
pub fn best_two_partition(points: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = points.len();
    let mut best = (f64::INFINITY, Vec::new());
    // point 0 always in cluster 0 to skip mirrored splits
    for mask in 1u64..(1 << (n - 1)) {
        let labels: Vec<usize> = (0..n).map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { 1 } else { 0 }).collect();
        let w = wcss(points, &labels);
        if w < best.0 {
            best = (w, labels);
        }
    }
    best
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Matrix, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-13 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Row-reduces `[c | rhs]`, dropping dependent rows. `None` when the
/// system is inconsistent.
fn independent_rows(c: &[Vec<f64>], rhs: &[f64]) -> Option<(Matrix, Vec<f64>)> {
    let mut rows: Vec<(Vec<f64>, f64)> = c.iter().cloned().zip(rhs.iter().copied()).collect();
    let width = c.first().map_or(0, Vec::len);
    let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut col = 0;
    while !rows.is_empty() && col < width {
        let (piv, mag) = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.0[col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if mag < 1e-10 {
            col += 1;
            continue;
        }
        let pivot = rows.remove(piv);
        for r in rows.iter_mut() {
            let f = r.0[col] / pivot.0[col];
            for j in 0..width {
                r.0[j] -= f * pivot.0[j];
            }
            r.1 -= f * pivot.1;
        }
        out.push(pivot);
        col += 1;
    }
    if rows.iter().any(|r| r.1.abs() > 1e-9) {
        return None;
    }
    Some(out.into_iter().unzip())
}

/// `‖Eᵀx − Δy‖² + λ‖x‖²`.
pub fn bp_objective(e: &[[f64; 2]], delta_y: [f64; 2], lambda: f64, x: &[f64]) -> f64 {
    let y0: f64 = e.iter().zip(x).map(|(r, v)| r[0] * v).sum();
    let y1: f64 = e.iter().zip(x).map(|(r, v)| r[1] * v).sum();
    (y0 - delta_y[0]).powi(2) + (y1 - delta_y[1]).powi(2) + lambda * dot(x, x)
}

/// Exact minimizer of the regularized backward-projection QP by enumerating
/// every assignment of each coordinate to {free, lower, upper} (3^d cases)
/// and solving the equality-constrained KKT system of each.
pub fn qp_oracle(
    e: &[[f64; 2]],
    delta_y: [f64; 2],
    lambda: f64,
    c: &[Vec<f64>],
    rhs: &[f64],
    lb: &[f64],
    ub: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let d = e.len();
    // H = 2(EEᵀ + λI), g = −2EΔy
    let h: Matrix = (0..d)
        .map(|i| (0..d).map(|j| 2.0 * (e[i][0] * e[j][0] + e[i][1] * e[j][1]) + if i == j { 2.0 * lambda } else { 0.0 }).collect())
        .collect();
    let g: Vec<f64> = (0..d).map(|i| -2.0 * (e[i][0] * delta_y[0] + e[i][1] * delta_y[1])).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for code in 0..3usize.pow(d as u32) {
        let mut state = vec![0u8; d];
        let mut rest = code;
        let mut usable = true;
        for s in state.iter_mut().enumerate() {
            *s.1 = (rest % 3) as u8;
            rest /= 3;
            let i = s.0;
            if (*s.1 == 1 && lb[i].is_infinite()) || (*s.1 == 2 && ub[i].is_infinite()) {
                usable = false;
            }
        }
        if !usable {
            continue;
        }
        let mut x = vec![0.0; d];
        let free: Vec<usize> = (0..d).filter(|&i| state[i] == 0).collect();
        for i in 0..d {
            match state[i] {
                1 => x[i] = lb[i],
                2 => x[i] = ub[i],
                _ => {}
            }
        }
        let reduced_c: Matrix = c.iter().map(|row| free.iter().map(|&j| row[j]).collect()).collect();
        let reduced_rhs: Vec<f64> = c
            .iter()
            .zip(rhs)
            .map(|(row, r)| r - (0..d).filter(|j| state[*j] != 0).map(|j| row[j] * x[j]).sum::<f64>())
            .collect();
        let Some((a, b)) = independent_rows(&reduced_c, &reduced_rhs) else { continue };
        let nf = free.len();
        let size = nf + a.len();
        let mut kkt = vec![vec![0.0; size]; size];
        let mut right = vec![0.0; size];
        for (p, &i) in free.iter().enumerate() {
            for (q, &j) in free.iter().enumerate() {
                kkt[p][q] = h[i][j];
            }
            let fixed: f64 = (0..d).filter(|j| state[*j] != 0).map(|j| h[i][j] * x[j]).sum();
            right[p] = -(g[i] + fixed);
        }
        for (r, row) in a.iter().enumerate() {
            for q in 0..nf {
                kkt[nf + r][q] = row[q];
                kkt[q][nf + r] = row[q];
            }
            right[nf + r] = b[r];
        }
        let Some(sol) = (if size == 0 { Some(Vec::new()) } else { solve_linear(kkt, right) }) else { continue };
        for (p, &i) in free.iter().enumerate() {
            x[i] = sol[p];
        }
        let feasible = (0..d).all(|i| x[i] >= lb[i] - 1e-9 && x[i] <= ub[i] + 1e-9)
            && c.iter().zip(rhs).all(|(row, r)| (dot(row, &x) - r).abs() <= 1e-8);
        if !feasible {
            continue;
        }
        let f = bp_objective(e, delta_y, lambda, &x);
        if best.as_ref().is_none_or(|b| f < b.1) {
            best = Some((x, f));
        }
    }
    best
}

/// Component of `v` orthogonal to the row space of `rows`.
pub fn project_out(rows: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let mut u = r.clone();
        for b in &basis {
            let c = dot(&u, b);
            for (x, y) in u.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
        let n = norm(&u);
        if n > 1e-12 {
            basis.push(u.iter().map(|x| x / n).collect());
        }
    }
    let mut out = v.to_vec();
    for b in &basis {
        let c = dot(&out, b);
        for (x, y) in out.iter_mut().zip(b) {
            *x -= c * y;
        }
    }
    out
}

/// `I_x(a, b)` by composite Simpson quadrature after substituting
/// `t = 1 − s²`; needs `a ≥ 1` and `b ≥ 1/2` so the integrand is smooth.
pub fn inc_beta_quadrature(x: f64, a: f64, b: f64) -> f64 {
    let f = |s: f64| 2.0 * s.powf(2.0 * b - 1.0) * (1.0 - s * s).powf(a - 1.0);
    let simpson = |lo: f64, hi: f64| {
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    simpson((1.0 - x).sqrt(), 1.0) / simpson(0.0, 1.0)
}

/// Largest distance of any path point from the chord joining its ends.
pub fn max_chord_deviation(path: &[[f64; 2]]) -> f64 {
    let (a, b) = (path[0], path[path.len() - 1]);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = (dx * dx + dy * dy).sqrt();
    path.iter()
        .map(|p| {
            if len == 0.0 {
                ((p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2)).sqrt()
            } else {
                ((p[0] - a[0]) * dy - (p[1] - a[1]) * dx).abs() / len
            }
        })
        .fold(0.0, f64::max)
}

/// Infix boolean token for the precedence oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tok {
    Atom(bool),
    And,
    Or,
    Not,
    Open,
    Close,
}

/// Evaluates a well-formed token stream with `!` > `&` > `|`, all binary
/// operators left-associative (shunting-yard).
pub fn eval_infix(tokens: &[Tok]) -> bool {
    fn prec(t: Tok) -> u8 {
        match t {
            Tok::Or => 1,
            Tok::And => 2,
            Tok::Not => 3,
            _ => 0,
        }
    }
    fn apply(op: Tok, vals: &mut Vec<bool>) {
        match op {
            Tok::Not => {
                let v = vals.pop().unwrap();
                vals.push(!v);
            }
            Tok::And | Tok::Or => {
                let r = vals.pop().unwrap();
                let l = vals.pop().unwrap();
                vals.push(if op == Tok::And { l && r } else { l || r });
            }
            _ => unreachable!(),
        }
    }
    let mut vals = Vec::new();
    let mut ops: Vec<Tok> = Vec::new();
    for &t in tokens {
        match t {
            Tok::Atom(b) => {
                vals.push(b);
                while ops.last() == Some(&Tok::Not) {
                    apply(ops.pop().unwrap(), &mut vals);
                }
            }
            Tok::Not | Tok::Open => ops.push(t),
            Tok::And | Tok::Or => {
                while let Some(&top) = ops.last() {
                    if top != Tok::Open && prec(top) >= prec(t) {
                        apply(ops.pop().unwrap(), &mut vals);
                    } else {
                        break;
                    }
                }
                ops.push(t);
            }
            Tok::Close => {
                while let Some(top) = ops.pop() {
                    if top == Tok::Open {
                        break;
                    }
                    apply(top, &mut vals);
                }
                while ops.last() == Some(&Tok::Not) {
                    apply(ops.pop().unwrap(), &mut vals);
                }
            }
        }
    }
    while let Some(top) = ops.pop() {
        apply(top, &mut vals);
    }
    vals.pop().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 2.0]];
        let (vals, vecs) = jacobi_eigen(&a);
        assert!((vals[0] - 3.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        assert!((vecs[0][0].abs() - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn mst_cut_on_line() {
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 3.0, 7.0].iter().map(|&v| vec![v]).collect();
        assert_eq!(mst_components(&pts, 2), vec![0, 0, 0, 1]);
        assert_eq!(mst_components(&pts, 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn infix_precedence() {
        use Tok::*;
        // t | f & f = t | (f & f) = t
        assert!(eval_infix(&[Atom(true), Or, Atom(false), And, Atom(false)]));
        // !(t) & t = f
        assert!(!eval_infix(&[Not, Open, Atom(true), Close, And, Atom(true)]));
        assert!(eval_infix(&[Not, Not, Atom(true)]));
    }

    #[test]
    fn qp_oracle_separable_box() {
        let e = [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let (x, _) = qp_oracle(&e, [2.0, 3.0], 1e-6, &[], &[], &[-1.0; 3], &[1.0; 3]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12 && x[2].abs() < 1e-12);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let x: f64 = 4.0 / 28.0;
        let closed = 1.0 - (1.0 - x).sqrt() * (1.0 + x / 2.0);
        assert!((inc_beta_quadrature(x, 2.0, 0.5) - closed).abs() < 1e-13);
    }
}
