//! Independent oracles shared by the integration suites. Everything here is
//! deliberately naive (dense loops, brute-force enumeration) and never calls
//! the code paths it is used to check.

// each test binary uses its own subset of the shared oracles
#![allow(dead_code)]

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spreader_gnn::graph::SparseGraph;
use spreader_gnn::tensor::Tensor;

/// Plain triple-loop dense matmul.
pub fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    let _ = k;
    out
}

pub fn tensor_to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Dense 0/1 symmetrized adjacency built straight from the edge list.
pub fn dense_adjacency(edges: &[(usize, usize)], n: usize) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in edges {
        if u != v {
            a[u][v] = 1.0;
            a[v][u] = 1.0;
        }
    }
    a
}

/// Dense renormalized operator D^-1/2 (A + I) D^-1/2.
pub fn dense_sym_norm(adj: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = adj.len();
    let mut a_hat = adj.to_vec();
    for (i, row) in a_hat.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    let deg: Vec<f64> = a_hat.iter().map(|row| row.iter().sum()).collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = a_hat[i][j] / (deg[i] * deg[j]).sqrt();
        }
    }
    out
}

/// Dense mean-over-neighbors operator D^-1 A with isolated rows zeroed.
pub fn dense_mean_operator(adj: &[Vec<f64>]) -> Vec<Vec<f64>> {
    adj.iter()
        .map(|row| {
            let deg: f64 = row.iter().sum();
            if deg == 0.0 {
                row.clone()
            } else {
                row.iter().map(|&v| v / deg).collect()
            }
        })
        .collect()
}

/// All-pairs shortest paths by Floyd-Warshall; usize::MAX means unreachable.
pub fn apsp(adj: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    const INF: usize = usize::MAX;
    let mut d = vec![vec![INF; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if adj[i][j] != 0.0 && i != j {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] != INF && d[k][j] != INF && d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Brute-force ROC AUC: enumerate all (positive, negative) pairs, ties 0.5.
pub fn brute_auc(scores: &[f64], truth: &[u8]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(truth)
        .filter(|(_, &y)| y == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(truth)
        .filter(|(_, &y)| y == 0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut credit = 0.0;
    for &p in &pos {
        for &q in &neg {
            if p > q {
                credit += 1.0;
            } else if p == q {
                credit += 0.5;
            }
        }
    }
    Some(credit / (pos.len() * neg.len()) as f64)
}

/// Erdos-Renyi edge list for test graphs.
pub fn random_edges(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central finite differences of a scalar function of a parameter list.
pub fn finite_diff_grads(
    f: &mut dyn FnMut(&[Tensor]) -> f64,
    params: &[Tensor],
    h: f64,
) -> Vec<Tensor> {
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = Tensor::zeros(params[pi].rows(), params[pi].cols());
        for i in 0..params[pi].data().len() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + h;
            let up = f(&work);
            work[pi].data_mut()[i] = orig - h;
            let down = f(&work);
            work[pi].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Worst relative error between analytic and numeric gradients, with a small
/// floor so zero gradients compare absolutely.
pub fn max_rel_err(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let denom = av.abs().max(nv.abs()).max(1e-6);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

/// Permutes node ids of an edge list and feature rows accordingly.
/// perm[old] = new.
pub fn permute_graph(
    edges: &[(usize, usize)],
    features: &Tensor,
    perm: &[usize],
) -> (Vec<(usize, usize)>, Tensor) {
    let p_edges: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    let mut data = vec![0.0; features.data().len()];
    let d = features.cols();
    for old in 0..features.rows() {
        let new = perm[old];
        data[new * d..(new + 1) * d].copy_from_slice(features.row(old));
    }
    (p_edges, Tensor::new(features.rows(), d, data).unwrap())
}

pub fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn assert_graph_matches_dense(g: &SparseGraph, dense: &[Vec<f64>], tol: f64) {
    let gd = g.to_dense();
    assert_eq!(gd.rows(), dense.len());
    for r in 0..gd.rows() {
        for c in 0..gd.cols() {
            assert!(
                (gd.get(r, c) - dense[r][c]).abs() <= tol,
                "entry ({r}, {c}): {} vs {}",
                gd.get(r, c),
                dense[r][c]
            );
        }
    }
}
