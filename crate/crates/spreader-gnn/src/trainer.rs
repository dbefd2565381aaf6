use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::NodeTable;
use crate::error::{Error, Result};
use crate::graph::{EgoSample, SparseGraph};
use crate::metrics::{evaluate_scores, MetricsRecord};
use crate::models::{
    dgcnn_forward, dgcnn_forward_prenorm, ego_feature_dim, gcn_forward, node_to_graph_dataset,
    sage_forward,
    ForwardPass, ModelKind, ModelParams,
};
use crate::nn::adam_step;
use crate::tape::sigmoid;

pub const EGO_HOPS: usize = 3;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub hidden_dim: usize,
    pub split_ratio: f64,
    pub seed: u64,
    /// SortPooling size for DGCNN; None picks the 0.6-quantile of training
    /// ego sizes (min 2).
    pub sortpool_k: Option<usize>,
}

impl TrainConfig {
    pub fn new(model: ModelKind, seed: u64) -> Self {
        TrainConfig {
            model,
            epochs: 200,
            lr: 1e-3,
            dropout: 0.5,
            hidden_dim: 32,
            split_ratio: 0.8,
            seed,
            sortpool_k: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.split_ratio && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split_ratio must be in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".to_string()));
        }
        if self.lr < 0.0 {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be >= 1".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub final_metrics: Option<MetricsRecord>,
}

/// Deterministic stratified split of labeled items. Each class contributes
/// floor((1 - ratio) * class_size) items to the test set, the remainder to
/// train.
pub fn stratified_split(labels: &[u8], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in [0u8, 1] {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "class {class} has {} labeled examples, need at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        // epsilon guards floor() against cases like (1 - 0.8) * 10 = 1.999...9
        let n_test = ((1.0 - ratio) * members.len() as f64 + 1e-9).floor() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Labeled node ids and their labels, in node-index order.
pub fn labeled_nodes(table: &NodeTable) -> (Vec<usize>, Vec<u8>) {
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (i, l) in table.labels.iter().enumerate() {
        if let Some(l) = l {
            ids.push(i);
            labels.push(*l);
        }
    }
    (ids, labels)
}

/// Train/test split in node-id space, shared across models for fair
/// comparison.
pub fn split_dataset(table: &NodeTable, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let (ids, labels) = labeled_nodes(table);
    if ids.is_empty() {
        return Err(Error::Data("no labeled nodes".to_string()));
    }
    let (train, test) = stratified_split(&labels, ratio, seed)?;
    Ok((
        train.into_iter().map(|i| ids[i]).collect(),
        test.into_iter().map(|i| ids[i]).collect(),
    ))
}

fn node_labels(table: &NodeTable, nodes: &[usize]) -> Result<Vec<u8>> {
    nodes
        .iter()
        .map(|&v| {
            table.labels[v].ok_or_else(|| Error::Data(format!("node {v} has no label")))
        })
        .collect()
}

fn logits_to_scores(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&z| sigmoid(z)).collect()
}

fn train_accuracy_from_logits(logits: &[f64], labels: &[u8]) -> f64 {
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(&z, &y)| u8::from(z > 0.0) == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

fn numeric_at_epoch(err: Error, epoch: usize) -> Error {
    match err {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

/// Full-batch semi-supervised training for the node classifiers: one forward
/// over all nodes per epoch, loss masked to the labeled training nodes, one
/// Adam step per epoch.
fn train_node_model(
    graph: &SparseGraph,
    table: &NodeTable,
    cfg: &TrainConfig,
    train_nodes: &[usize],
) -> Result<(ModelParams, TrainHistory)> {
    let train_labels = node_labels(table, train_nodes)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = match cfg.model {
        ModelKind::Gcn => ModelParams::new_gcn(table.features.cols(), cfg.hidden_dim, &mut init_rng),
        ModelKind::Sage => {
            ModelParams::new_sage(table.features.cols(), cfg.hidden_dim, &mut init_rng)
        }
        ModelKind::Dgcnn => unreachable!("dispatched in train"),
    };
    let g_norm = graph.sym_norm_adj();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        let mut fwd = match cfg.model {
            ModelKind::Gcn => gcn_forward(&g_norm, &table.features, &params, true, cfg.dropout, &mut rng),
            ModelKind::Sage => sage_forward(graph, &table.features, &params, true, cfg.dropout, &mut rng),
            ModelKind::Dgcnn => unreachable!(),
        }
        .map_err(|e| numeric_at_epoch(e, epoch))?;
        let masked = fwd
            .tape
            .gather_rows(fwd.logits, train_nodes.to_vec())
            .map_err(|e| numeric_at_epoch(e, epoch))?;
        let loss = fwd
            .tape
            .bce_with_logits(masked, &train_labels)
            .map_err(|e| numeric_at_epoch(e, epoch))?;
        let loss_value = fwd.tape.value(loss).get(0, 0);
        let masked_logits = fwd.tape.value(masked).data().to_vec();
        let grads = fwd.tape.backward(loss)?;
        params.absorb_grads(&fwd.tape, &fwd.param_vals, &grads);
        adam_step(&mut params.params, cfg.lr)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_value,
            train_accuracy: train_accuracy_from_logits(&masked_logits, &train_labels),
        });
    }
    Ok((params, history))
}

/// SortPooling size heuristic: 0.6-quantile of training ego sizes, min 2.
pub fn auto_sortpool_k(train_samples: &[EgoSample]) -> usize {
    if train_samples.is_empty() {
        return 2;
    }
    let mut sizes: Vec<usize> = train_samples.iter().map(|s| s.graph.n_nodes()).collect();
    sizes.sort_unstable();
    let idx = ((sizes.len() as f64) * 0.6).ceil() as usize;
    sizes[idx.min(sizes.len()) - 1].max(2)
}

/// Per-sample training for DGCNN: each epoch visits the training ego samples
/// in seeded shuffled order with one Adam step per sample.
fn train_dgcnn(
    graph: &SparseGraph,
    table: &NodeTable,
    cfg: &TrainConfig,
    train_nodes: &[usize],
) -> Result<(ModelParams, TrainHistory)> {
    let samples = node_to_graph_dataset(graph, &table.features, &table.labels, train_nodes, EGO_HOPS)?;
    let norms: Vec<std::rc::Rc<SparseGraph>> = samples
        .iter()
        .map(|s| std::rc::Rc::new(s.graph.sym_norm_adj()))
        .collect();
    let k = match cfg.sortpool_k {
        Some(k) => k.max(2),
        None => auto_sortpool_k(&samples),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params =
        ModelParams::new_dgcnn(ego_feature_dim(table.features.cols()), cfg.hidden_dim, k, &mut init_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for &si in &order {
            let sample = &samples[si];
            let mut fwd =
                dgcnn_forward_prenorm(sample, &norms[si], &params, true, cfg.dropout, &mut rng)
                    .map_err(|e| numeric_at_epoch(e, epoch))?;
            let loss = fwd
                .tape
                .bce_with_logits(fwd.logits, &[sample.label])
                .map_err(|e| numeric_at_epoch(e, epoch))?;
            let z = fwd.tape.value(fwd.logits).get(0, 0);
            loss_sum += fwd.tape.value(loss).get(0, 0);
            hits += usize::from(u8::from(z > 0.0) == sample.label);
            let grads = fwd.tape.backward(loss)?;
            params.absorb_grads(&fwd.tape, &fwd.param_vals, &grads);
            adam_step(&mut params.params, cfg.lr)?;
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / samples.len().max(1) as f64,
            train_accuracy: hits as f64 / samples.len().max(1) as f64,
        });
    }
    Ok((params, history))
}

/// Per-sample training allocates and frees many multi-megabyte gradient
/// buffers each step; with glibc's default trim/mmap thresholds every one of
/// those round-trips through the kernel (mmap/munmap plus page faults), which
/// can dominate wall time. Raising both thresholds keeps the pages cached in
/// the allocator. No effect on results, only on speed.
fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 128 * 1024 * 1024);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 128 * 1024 * 1024);
        });
    }
}

/// Once a model fits its training data, cross-entropy gradients underflow
/// and the Adam moment buffers decay into the denormal range, where every
/// floating-point op on them takes a microcode assist — epochs were observed
/// slowing down ~3x over a run. Flush-to-zero / denormals-are-zero keeps
/// throughput flat; values below ~1e-308 carry no training signal. The MXCSR
/// register is per-thread, so this runs at every train() entry rather than
/// once per process.
fn flush_denormals_to_zero() {
    #[cfg(target_arch = "x86_64")]
    unsafe {
        const FTZ_AND_DAZ: u32 = 0x8040;
        let mut csr: u32 = 0;
        std::arch::asm!("stmxcsr [{0}]", in(reg) &mut csr, options(nostack, preserves_flags));
        csr |= FTZ_AND_DAZ;
        std::arch::asm!("ldmxcsr [{0}]", in(reg) &csr, options(nostack, preserves_flags));
    }
}

/// Trains the configured model on the training node set. The split is passed
/// in so several models can share one split.
pub fn train(
    graph: &SparseGraph,
    table: &NodeTable,
    cfg: &TrainConfig,
    train_nodes: &[usize],
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    tune_allocator();
    flush_denormals_to_zero();
    if train_nodes.is_empty() {
        return Err(Error::Data("no labeled nodes in the training split".to_string()));
    }
    match cfg.model {
        ModelKind::Gcn | ModelKind::Sage => train_node_model(graph, table, cfg, train_nodes),
        ModelKind::Dgcnn => train_dgcnn(graph, table, cfg, train_nodes),
    }
}

/// Sigmoid scores for the given labeled nodes under trained parameters
/// (eval mode).
pub fn score_nodes(
    params: &ModelParams,
    graph: &SparseGraph,
    table: &NodeTable,
    nodes: &[usize],
    dropout: f64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    match params.kind {
        ModelKind::Gcn => {
            let g_norm = graph.sym_norm_adj();
            let fwd = gcn_forward(&g_norm, &table.features, params, false, dropout, &mut rng)?;
            Ok(collect_scores(&fwd, nodes))
        }
        ModelKind::Sage => {
            let fwd = sage_forward(graph, &table.features, params, false, dropout, &mut rng)?;
            Ok(collect_scores(&fwd, nodes))
        }
        ModelKind::Dgcnn => {
            let mut sorted = nodes.to_vec();
            sorted.sort_unstable();
            let samples =
                node_to_graph_dataset(graph, &table.features, &table.labels, &sorted, EGO_HOPS)?;
            // node_to_graph_dataset sorts; restore the caller's order
            let mut by_node = std::collections::HashMap::new();
            for (s, &v) in samples.iter().zip(&sorted) {
                let fwd = dgcnn_forward(s, params, false, dropout, &mut rng)?;
                by_node.insert(v, sigmoid(fwd.tape.value(fwd.logits).get(0, 0)));
            }
            Ok(nodes.iter().map(|v| by_node[v]).collect())
        }
    }
}

fn collect_scores(fwd: &ForwardPass, nodes: &[usize]) -> Vec<f64> {
    let logits = fwd.tape.value(fwd.logits);
    logits_to_scores(&nodes.iter().map(|&v| logits.get(v, 0)).collect::<Vec<_>>())
}

/// Evaluates trained parameters on a test node set: threshold 0.5 for
/// accuracy/MCC, full score ranking for AUC.
pub fn evaluate(
    params: &ModelParams,
    graph: &SparseGraph,
    table: &NodeTable,
    test_nodes: &[usize],
) -> Result<MetricsRecord> {
    if test_nodes.is_empty() {
        return Err(Error::Data("empty test set".to_string()));
    }
    let scores = score_nodes(params, graph, table, test_nodes, 0.0)?;
    let truth = node_labels(table, test_nodes)?;
    evaluate_scores(&scores, &truth)
}
