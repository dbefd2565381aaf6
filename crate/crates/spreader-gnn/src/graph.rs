use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Undirected graph in compressed sparse row form. Immutable after
/// construction; the substrate for all message passing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    edge_values: Vec<f64>,
}

impl SparseGraph {
    /// Build a symmetrized, deduplicated CSR graph from an edge list.
    /// All edge values are 1.0; input self-loops are dropped.
    pub fn build(edges: &[(usize, usize)], n_nodes: usize) -> Result<Self> {
        for &(u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Data(format!(
                    "edge ({u}, {v}) out of range for {n_nodes} nodes"
                )));
            }
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for &(u, v) in edges {
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut row_offsets = Vec::with_capacity(n_nodes + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for nbrs in &mut adj {
            nbrs.sort_unstable();
            nbrs.dedup();
            col_indices.extend_from_slice(nbrs);
            row_offsets.push(col_indices.len());
        }
        let edge_values = vec![1.0; col_indices.len()];
        Ok(SparseGraph {
            n_nodes,
            row_offsets,
            col_indices,
            edge_values,
        })
    }

    /// Construct directly from CSR parts. Used internally by normalization
    /// and by the induced-subgraph builder, which already produce valid CSR.
    fn from_csr(
        n_nodes: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        edge_values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(row_offsets.len(), n_nodes + 1);
        debug_assert_eq!(col_indices.len(), edge_values.len());
        SparseGraph {
            n_nodes,
            row_offsets,
            col_indices,
            edge_values,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_entries(&self) -> usize {
        self.col_indices.len()
    }

    /// Number of undirected edges (excluding self-loops).
    pub fn n_edges(&self) -> usize {
        let loops = (0..self.n_nodes)
            .filter(|&v| self.neighbors(v).0.contains(&v))
            .count();
        (self.n_entries() - loops) / 2 + loops
    }

    pub fn neighbors(&self, v: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[v];
        let hi = self.row_offsets[v + 1];
        (&self.col_indices[lo..hi], &self.edge_values[lo..hi])
    }

    pub fn degree(&self, v: usize) -> usize {
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    /// Directed entry list (u, v, value), one per stored CSR entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_nodes).flat_map(move |u| {
            let (cols, vals) = self.neighbors(u);
            cols.iter().zip(vals).map(move |(&v, &w)| (u, v, w))
        })
    }

    /// Undirected edge list with u <= v, self-loops excluded.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        self.entries()
            .filter(|&(u, v, _)| u < v)
            .map(|(u, v, _)| (u, v))
            .collect()
    }

    /// Renormalized propagation operator: self-loops added, entry
    /// (u, v) = 1 / sqrt(deg_hat(u) * deg_hat(v)) where deg_hat counts
    /// the self-loop. Isolated nodes get deg_hat = 1, so no division by zero.
    pub fn sym_norm_adj(&self) -> SparseGraph {
        let inv_sqrt: Vec<f64> = (0..self.n_nodes)
            .map(|v| {
                let has_loop = self.neighbors(v).0.contains(&v);
                let deg_hat = self.degree(v) + usize::from(!has_loop);
                1.0 / (deg_hat as f64).sqrt()
            })
            .collect();
        let mut row_offsets = Vec::with_capacity(self.n_nodes + 1);
        let mut col_indices = Vec::new();
        let mut edge_values = Vec::new();
        row_offsets.push(0);
        for u in 0..self.n_nodes {
            let (cols, _) = self.neighbors(u);
            let mut inserted_loop = false;
            for &v in cols {
                if !inserted_loop && v >= u {
                    if v != u {
                        col_indices.push(u);
                        edge_values.push(inv_sqrt[u] * inv_sqrt[u]);
                    }
                    inserted_loop = true;
                }
                col_indices.push(v);
                edge_values.push(inv_sqrt[u] * inv_sqrt[v]);
            }
            if !inserted_loop {
                col_indices.push(u);
                edge_values.push(inv_sqrt[u] * inv_sqrt[u]);
            }
            row_offsets.push(col_indices.len());
        }
        SparseGraph::from_csr(self.n_nodes, row_offsets, col_indices, edge_values)
    }

    /// Sparse-matrix times dense-matrix product (forward kernel; the
    /// differentiable wrapper lives in the tape).
    pub fn spmm(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.n_nodes {
            return Err(Error::Shape(format!(
                "spmm: graph has {} nodes, tensor has {} rows",
                self.n_nodes,
                x.rows()
            )));
        }
        let d = x.cols();
        let mut out = Tensor::zeros(self.n_nodes, d);
        for u in 0..self.n_nodes {
            let (cols, vals) = self.neighbors(u);
            let dst = &mut out.data_mut()[u * d..(u + 1) * d];
            for (&v, &w) in cols.iter().zip(vals) {
                for (o, &xv) in dst.iter_mut().zip(&x.data()[v * d..(v + 1) * d]) {
                    *o += w * xv;
                }
            }
        }
        Ok(out)
    }

    /// Row v = arithmetic mean of x over neighbors of v; isolated nodes get
    /// zero rows. Expects the raw (unnormalized) graph.
    pub fn mean_neighbor_aggregate(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.n_nodes {
            return Err(Error::Shape(format!(
                "mean aggregate: graph has {} nodes, tensor has {} rows",
                self.n_nodes,
                x.rows()
            )));
        }
        let d = x.cols();
        let mut out = Tensor::zeros(self.n_nodes, d);
        for u in 0..self.n_nodes {
            let (cols, _) = self.neighbors(u);
            if cols.is_empty() {
                continue;
            }
            let scale = 1.0 / cols.len() as f64;
            let dst = &mut out.data_mut()[u * d..(u + 1) * d];
            for &v in cols {
                for (o, &xv) in dst.iter_mut().zip(&x.data()[v * d..(v + 1) * d]) {
                    *o += scale * xv;
                }
            }
        }
        Ok(out)
    }

    /// Backward rule for mean_neighbor_aggregate, accumulating in place:
    /// with M = D^-1 A and A symmetric, grad_x = M^T g, i.e. row u sums
    /// g_v / deg(v) over neighbors.
    pub(crate) fn mean_aggregate_transpose_acc(&self, g: &Tensor, out: &mut Tensor) {
        let d = g.cols();
        for u in 0..self.n_nodes {
            let (cols, _) = self.neighbors(u);
            let dst = &mut out.data_mut()[u * d..(u + 1) * d];
            for &v in cols {
                let scale = 1.0 / self.degree(v) as f64;
                for (o, &gv) in dst.iter_mut().zip(&g.data()[v * d..(v + 1) * d]) {
                    *o += scale * gv;
                }
            }
        }
    }

    /// In-place accumulating spmm: out += A x. Used by backward rules, which
    /// exploit the symmetry of the operator.
    pub(crate) fn spmm_acc(&self, x: &Tensor, out: &mut Tensor) {
        let d = x.cols();
        for u in 0..self.n_nodes {
            let (cols, vals) = self.neighbors(u);
            let dst = &mut out.data_mut()[u * d..(u + 1) * d];
            for (&v, &w) in cols.iter().zip(vals) {
                for (o, &xv) in dst.iter_mut().zip(&x.data()[v * d..(v + 1) * d]) {
                    *o += w * xv;
                }
            }
        }
    }

    /// Breadth-first k-hop ball around `root`, plus the induced subgraph with
    /// nodes renumbered so root = 0 and the rest ordered by
    /// (BFS distance, original index). Returns (subgraph, local -> original map).
    pub fn extract_ego(&self, root: usize, k: usize) -> Result<(SparseGraph, Vec<usize>)> {
        if root >= self.n_nodes {
            return Err(Error::Data(format!(
                "root {root} out of range for {} nodes",
                self.n_nodes
            )));
        }
        let mut dist = vec![usize::MAX; self.n_nodes];
        dist[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            if dist[u] == k {
                continue;
            }
            for &v in self.neighbors(u).0 {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let mut members: Vec<usize> = (0..self.n_nodes)
            .filter(|&v| dist[v] != usize::MAX)
            .collect();
        members.sort_by_key(|&v| (dist[v], v));
        debug_assert_eq!(members[0], root);

        let mut local = vec![usize::MAX; self.n_nodes];
        for (i, &v) in members.iter().enumerate() {
            local[v] = i;
        }
        let mut row_offsets = Vec::with_capacity(members.len() + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for &v in &members {
            let mut row: Vec<usize> = self
                .neighbors(v)
                .0
                .iter()
                .filter(|&&w| local[w] != usize::MAX)
                .map(|&w| local[w])
                .collect();
            row.sort_unstable();
            col_indices.extend_from_slice(&row);
            row_offsets.push(col_indices.len());
        }
        let edge_values = vec![1.0; col_indices.len()];
        Ok((
            SparseGraph::from_csr(members.len(), row_offsets, col_indices, edge_values),
            members,
        ))
    }

    /// Dense adjacency copy, for small-graph checks and oracles.
    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.n_nodes, self.n_nodes);
        for (u, v, w) in self.entries() {
            out.set(u, v, w);
        }
        out
    }
}

/// Induced 3-hop ego subgraph with remapped indices; node 0 is the root.
#[derive(Debug, Clone)]
pub struct EgoSample {
    pub graph: SparseGraph,
    pub features: Tensor,
    pub root_local_index: usize,
    pub label: u8,
}
