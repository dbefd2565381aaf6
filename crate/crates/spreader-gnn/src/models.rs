use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{EgoSample, SparseGraph};
use crate::nn::{glorot_uniform, Param};
use crate::tape::{Tape, Val};
use crate::tensor::Tensor;

pub const DGCNN_CONV1_CHANNELS: usize = 16;
pub const DGCNN_CONV2_CHANNELS: usize = 32;
pub const DGCNN_CONV2_WIDTH: usize = 5;
pub const DGCNN_POOL_WINDOW: usize = 2;
pub const DGCNN_FC_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gcn,
    Sage,
    Dgcnn,
}

impl ModelKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::Sage => "sage",
            ModelKind::Dgcnn => "dgcnn",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "gcn" => Ok(ModelKind::Gcn),
            "sage" => Ok(ModelKind::Sage),
            "dgcnn" => Ok(ModelKind::Dgcnn),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

/// Ordered parameter collection for one architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// SortPooling size; 0 for the node-classification models.
    pub sortpool_k: usize,
    pub params: Vec<Param>,
}

impl ModelParams {
    /// Three GCN layers and a linear head.
    pub fn new_gcn(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = input_dim;
        let h = hidden_dim;
        let params = vec![
            Param::new("gcn1.w", glorot_uniform(d, h, rng)),
            Param::new("gcn2.w", glorot_uniform(h, h, rng)),
            Param::new("gcn3.w", glorot_uniform(h, h, rng)),
            Param::new("head.w", glorot_uniform(h, 1, rng)),
            Param::new("head.b", Tensor::zeros(1, 1)),
        ];
        ModelParams {
            kind: ModelKind::Gcn,
            input_dim,
            hidden_dim,
            sortpool_k: 0,
            params,
        }
    }

    /// Three GraphSAGE layers (self || neighbor-mean concatenation) and a
    /// linear head.
    pub fn new_sage(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = input_dim;
        let h = hidden_dim;
        let params = vec![
            Param::new("sage1.w", glorot_uniform(2 * d, h, rng)),
            Param::new("sage2.w", glorot_uniform(2 * h, h, rng)),
            Param::new("sage3.w", glorot_uniform(2 * h, h, rng)),
            Param::new("head.w", glorot_uniform(h, 1, rng)),
            Param::new("head.b", Tensor::zeros(1, 1)),
        ];
        ModelParams {
            kind: ModelKind::Sage,
            input_dim,
            hidden_dim,
            sortpool_k: 0,
        params,
        }
    }

    /// Four tanh GCN layers, SortPooling to k rows, a two-conv head with
    /// max-pooling in between, and a fully connected classifier.
    pub fn new_dgcnn(
        input_dim: usize,
        hidden_dim: usize,
        sortpool_k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if sortpool_k < 2 {
            return Err(Error::Config(format!(
                "sortpool_k must be >= 2, got {sortpool_k}"
            )));
        }
        let d = input_dim;
        let h = hidden_dim;
        let concat_dim = 4 * h;
        let (pooled_len, conv2_len) = dgcnn_head_lengths(sortpool_k);
        let flat_dim = DGCNN_CONV2_CHANNELS * conv2_len;
        let _ = pooled_len;
        let params = vec![
            Param::new("gcn1.w", glorot_uniform(d, h, rng)),
            Param::new("gcn2.w", glorot_uniform(h, h, rng)),
            Param::new("gcn3.w", glorot_uniform(h, h, rng)),
            Param::new("gcn4.w", glorot_uniform(h, h, rng)),
            Param::new(
                "conv1.k",
                glorot_uniform(DGCNN_CONV1_CHANNELS, concat_dim, rng),
            ),
            Param::new(
                "conv2.k",
                glorot_uniform(DGCNN_CONV2_CHANNELS, DGCNN_CONV1_CHANNELS * DGCNN_CONV2_WIDTH, rng),
            ),
            Param::new("fc1.w", glorot_uniform(flat_dim, DGCNN_FC_DIM, rng)),
            Param::new("fc1.b", Tensor::zeros(1, DGCNN_FC_DIM)),
            Param::new("fc2.w", glorot_uniform(DGCNN_FC_DIM, 1, rng)),
            Param::new("fc2.b", Tensor::zeros(1, 1)),
        ];
        Ok(ModelParams {
            kind: ModelKind::Dgcnn,
            input_dim,
            hidden_dim,
            sortpool_k,
            params,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    /// Copies tape gradients back into the parameters' grad slots.
    pub fn absorb_grads(&mut self, tape: &Tape, vals: &[Val], grads: &crate::tape::Grads) {
        let _ = tape;
        for (p, &v) in self.params.iter_mut().zip(vals) {
            p.value.set_grad_from(grads.get(v).data()).expect("matching shapes");
        }
    }
}

/// Sequence lengths through the DGCNN conv head for a given SortPooling k:
/// (length after max-pool + padding, length after the second conv).
pub fn dgcnn_head_lengths(k: usize) -> (usize, usize) {
    let after_pool = (k - DGCNN_POOL_WINDOW) / DGCNN_POOL_WINDOW + 1;
    // short sequences are zero-padded so the width-5 conv always applies
    let padded = after_pool.max(DGCNN_CONV2_WIDTH);
    (padded, padded - DGCNN_CONV2_WIDTH + 1)
}

/// One model forward pass, ready for backward: the tape, the handles of the
/// parameters in `ModelParams` order, and the output logits.
pub struct ForwardPass {
    pub tape: Tape,
    pub param_vals: Vec<Val>,
    pub logits: Val,
}

fn expect_kind(p: &ModelParams, kind: ModelKind) -> Result<()> {
    if p.kind != kind {
        return Err(Error::Config(format!(
            "expected {} parameters, got {}",
            kind.tag(),
            p.kind.tag()
        )));
    }
    Ok(())
}

/// GCN node classifier: three ReLU GCN layers over the normalized adjacency
/// (dropout after each in training mode) and a linear head, one logit per node.
pub fn gcn_forward(
    g_norm: &SparseGraph,
    x: &Tensor,
    p: &ModelParams,
    training: bool,
    dropout_p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardPass> {
    expect_kind(p, ModelKind::Gcn)?;
    let g_norm = Rc::new(g_norm.clone());
    let mut tape = Tape::new();
    let vals: Vec<Val> = p
        .params
        .iter()
        .map(|pp| tape.input(pp.value.clone()))
        .collect::<Result<_>>()?;
    let mut h = tape.input(x.clone())?;
    for w in &vals[0..3] {
        let agg = tape.spmm(&g_norm, h)?;
        let lin = tape.matmul(agg, *w)?;
        let act = tape.relu(lin)?;
        h = tape.dropout(act, dropout_p, training, rng)?;
    }
    let head = tape.matmul(h, vals[3])?;
    let logits = tape.add_bias(head, vals[4])?;
    Ok(ForwardPass {
        tape,
        param_vals: vals,
        logits,
    })
}

/// GraphSAGE node classifier over the raw graph: each layer concatenates the
/// node's own embedding with the neighbor mean before the learned linear map.
pub fn sage_forward(
    g: &SparseGraph,
    x: &Tensor,
    p: &ModelParams,
    training: bool,
    dropout_p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardPass> {
    expect_kind(p, ModelKind::Sage)?;
    let g = Rc::new(g.clone());
    let mut tape = Tape::new();
    let vals: Vec<Val> = p
        .params
        .iter()
        .map(|pp| tape.input(pp.value.clone()))
        .collect::<Result<_>>()?;
    let mut h = tape.input(x.clone())?;
    for w in &vals[0..3] {
        let agg = tape.mean_aggregate(&g, h)?;
        let cat = tape.concat_cols(h, agg)?;
        let lin = tape.matmul(cat, *w)?;
        let act = tape.relu(lin)?;
        h = tape.dropout(act, dropout_p, training, rng)?;
    }
    let head = tape.matmul(h, vals[3])?;
    let logits = tape.add_bias(head, vals[4])?;
    Ok(ForwardPass {
        tape,
        param_vals: vals,
        logits,
    })
}

/// DGCNN graph classifier over one ego sample, producing a single logit.
pub fn dgcnn_forward(
    sample: &EgoSample,
    p: &ModelParams,
    training: bool,
    dropout_p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardPass> {
    let g_norm = Rc::new(sample.graph.sym_norm_adj());
    dgcnn_forward_prenorm(sample, &g_norm, p, training, dropout_p, rng)
}

/// [`dgcnn_forward`] with the normalized adjacency precomputed, so training
/// loops can normalize each sample once instead of once per epoch.
pub fn dgcnn_forward_prenorm(
    sample: &EgoSample,
    g_norm: &Rc<SparseGraph>,
    p: &ModelParams,
    training: bool,
    dropout_p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardPass> {
    expect_kind(p, ModelKind::Dgcnn)?;
    let h_dim = p.hidden_dim;
    let k = p.sortpool_k;
    let mut tape = Tape::new();
    let vals: Vec<Val> = p
        .params
        .iter()
        .map(|pp| tape.input(pp.value.clone()))
        .collect::<Result<_>>()?;
    let mut h = tape.input(sample.features.clone())?;
    let mut layer_outputs = Vec::with_capacity(4);
    for w in &vals[0..4] {
        let agg = tape.spmm(g_norm, h)?;
        let lin = tape.matmul(agg, *w)?;
        h = tape.tanh(lin)?;
        layer_outputs.push(h);
    }
    let mut z = layer_outputs[0];
    for &l in &layer_outputs[1..] {
        z = tape.concat_cols(z, l)?;
    }
    let pooled = tape.sort_pool(z, k)?;
    let seq = tape.reshape(pooled, 1, k * 4 * h_dim)?;
    let c1 = tape.conv1d(seq, vals[4], 4 * h_dim, 4 * h_dim)?;
    let mp = tape.maxpool1d(c1, DGCNN_POOL_WINDOW, DGCNN_POOL_WINDOW)?;
    let padded = tape.pad_cols(mp, DGCNN_CONV2_WIDTH)?;
    let c2 = tape.conv1d(padded, vals[5], DGCNN_CONV2_WIDTH, 1)?;
    let (_, conv2_len) = dgcnn_head_lengths(k);
    let flat = tape.reshape(c2, 1, DGCNN_CONV2_CHANNELS * conv2_len)?;
    let fc1 = tape.matmul(flat, vals[6])?;
    let fc1b = tape.add_bias(fc1, vals[7])?;
    let act = tape.relu(fc1b)?;
    let dropped = tape.dropout(act, dropout_p, training, rng)?;
    let fc2 = tape.matmul(dropped, vals[8])?;
    let logits = tape.add_bias(fc2, vals[9])?;
    Ok(ForwardPass {
        tape,
        param_vals: vals,
        logits,
    })
}

/// Builds one EgoSample per listed node, the node's label becoming the
/// sample label. Output is ordered by node index.
///
/// Sample features carry one extra root-marker column: 1/(1 + hop distance
/// from the root), so the root row reads 1, its neighbors 1/2, and so on.
/// SortPooling is order-invariant, so on dense graphs where different roots
/// yield near-identical ego node sets the pooled representation would
/// otherwise not depend on the root at all; the marker keeps the classified
/// node (and its surroundings) identifiable inside its own sample. A plain
/// 0/1 indicator is too weak in practice — degree normalization shrinks it
/// by the root degree before it reaches any layer output — while the
/// distance profile survives aggregation at full scale.
pub fn node_to_graph_dataset(
    g: &SparseGraph,
    features: &Tensor,
    labels: &[Option<u8>],
    nodes: &[usize],
    k: usize,
) -> Result<Vec<EgoSample>> {
    let mut nodes: Vec<usize> = nodes.to_vec();
    nodes.sort_unstable();
    let mut out = Vec::with_capacity(nodes.len());
    for &v in &nodes {
        let label = labels
            .get(v)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Data(format!("node {v} has no label")))?;
        let (sub, map) = g.extract_ego(v, k)?;
        // shortest paths from the root stay inside the ego set, so BFS on the
        // induced subgraph reproduces the parent-graph hop distances
        let dist = root_distances(&sub);
        let d = features.cols() + 1;
        let mut data = Vec::with_capacity(map.len() * d);
        for (local, &orig) in map.iter().enumerate() {
            data.extend_from_slice(features.row(orig));
            data.push(1.0 / (1.0 + dist[local] as f64));
        }
        out.push(EgoSample {
            graph: sub,
            features: Tensor::new(map.len(), d, data)?,
            root_local_index: 0,
            label,
        });
    }
    Ok(out)
}

/// Feature width of the ego samples built from `node_feature_dim`-wide node
/// features: the node features plus the root-marker column.
pub fn ego_feature_dim(node_feature_dim: usize) -> usize {
    node_feature_dim + 1
}

/// BFS hop distance of every subgraph node from local node 0. Every ego
/// subgraph is connected through its root, so all entries are finite.
fn root_distances(sub: &SparseGraph) -> Vec<usize> {
    let mut dist = vec![usize::MAX; sub.n_nodes()];
    let mut queue = std::collections::VecDeque::from([0usize]);
    dist[0] = 0;
    while let Some(u) = queue.pop_front() {
        for &v in sub.neighbors(u).0 {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}
