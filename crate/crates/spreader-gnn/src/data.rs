use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::metrics::MetricsRecord;
use crate::models::{ModelKind, ModelParams};
use crate::nn::Param;
use crate::tensor::Tensor;

/// Per-node feature vectors and ternary labels (1 spreader, 0 regular,
/// None unlabeled).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    pub features: Tensor,
    pub labels: Vec<Option<u8>>,
}

const EDGES_FILE: &str = "edges.tsv";
const FEATURES_FILE: &str = "features.csv";
const LABELS_FILE: &str = "labels.csv";

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Loads a dataset directory (edges.tsv, features.csv, labels.csv).
pub fn load_dataset(dir: &Path) -> Result<(SparseGraph, NodeTable)> {
    let feat_path = dir.join(FEATURES_FILE);
    let text = fs::read_to_string(&feat_path).map_err(|e| Error::io(feat_path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(&feat_path, 1, "empty file"))?;
    let dim = header.split(',').count().saturating_sub(1);
    if !header.starts_with("id,") || dim == 0 {
        return Err(parse_err(&feat_path, 1, "expected header 'id,f0,...'"));
    }
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id: usize = parts
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| parse_err(&feat_path, i + 1, "bad node id"))?;
        let feats: Vec<f64> = parts
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(&feat_path, i + 1, "bad feature value"))?;
        if feats.len() != dim {
            return Err(parse_err(
                &feat_path,
                i + 1,
                format!("expected {dim} features, got {}", feats.len()),
            ));
        }
        rows.push((id, feats));
    }
    let n = rows.len();
    rows.sort_by_key(|(id, _)| *id);
    for (expect, (id, _)) in rows.iter().enumerate() {
        if *id != expect {
            return Err(Error::Data(format!(
                "{}: node ids must be exactly 0..{}, found {id}",
                feat_path.display(),
                n.saturating_sub(1)
            )));
        }
    }
    let mut data = Vec::with_capacity(n * dim);
    for (_, feats) in &rows {
        data.extend_from_slice(feats);
    }
    let features = Tensor::new(n, dim, data)?;

    let edge_path = dir.join(EDGES_FILE);
    let text = fs::read_to_string(&edge_path).map_err(|e| Error::io(edge_path.display().to_string(), e))?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let u: usize = parts
            .next()
            .and_then(|p| p.trim().parse().ok())
            .ok_or_else(|| parse_err(&edge_path, i + 1, "expected 'src<TAB>dst'"))?;
        let v: usize = parts
            .next()
            .and_then(|p| p.trim().parse().ok())
            .ok_or_else(|| parse_err(&edge_path, i + 1, "expected 'src<TAB>dst'"))?;
        if u >= n || v >= n {
            return Err(Error::Data(format!(
                "{} line {}: edge ({u}, {v}) references a node missing from {}",
                edge_path.display(),
                i + 1,
                FEATURES_FILE
            )));
        }
        edges.push((u, v));
    }
    let graph = SparseGraph::build(&edges, n)?;

    let label_path = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&label_path).map_err(|e| Error::io(label_path.display().to_string(), e))?;
    let mut labels = vec![None; n];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if i == 0 {
            if line != "id,label" {
                return Err(parse_err(&label_path, 1, "expected header 'id,label'"));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (id_s, label_s) = line
            .split_once(',')
            .ok_or_else(|| parse_err(&label_path, i + 1, "expected 'id,label'"))?;
        let id: usize = id_s
            .trim()
            .parse()
            .map_err(|_| parse_err(&label_path, i + 1, "bad node id"))?;
        if id >= n {
            return Err(Error::Data(format!(
                "{} line {}: node id {id} missing from {}",
                label_path.display(),
                i + 1,
                FEATURES_FILE
            )));
        }
        let label: u8 = match label_s.trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(parse_err(
                    &label_path,
                    i + 1,
                    format!("label must be 0 or 1, got '{other}'"),
                ))
            }
        };
        labels[id] = Some(label);
    }
    Ok((graph, NodeTable { features, labels }))
}

/// Writes a dataset directory in the same formats load_dataset reads.
pub fn save_dataset(dir: &Path, graph: &SparseGraph, table: &NodeTable) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut edges = String::from("# src\tdst\n");
    for (u, v) in graph.edge_list() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write_file(&dir.join(EDGES_FILE), edges.as_bytes())?;

    let dim = table.features.cols();
    let mut feats = String::from("id");
    for c in 0..dim {
        feats.push_str(&format!(",f{c}"));
    }
    feats.push('\n');
    for r in 0..table.features.rows() {
        feats.push_str(&r.to_string());
        for &v in table.features.row(r) {
            feats.push(',');
            feats.push_str(&format!("{v}"));
        }
        feats.push('\n');
    }
    write_file(&dir.join(FEATURES_FILE), feats.as_bytes())?;

    let mut labels = String::from("id,label\n");
    for (i, l) in table.labels.iter().enumerate() {
        if let Some(l) = l {
            labels.push_str(&format!("{i},{l}\n"));
        }
    }
    write_file(&dir.join(LABELS_FILE), labels.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Configuration for the synthetic labeled-graph generator.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub spreader_fraction: f64,
    pub feature_dim: usize,
    /// Per-class mean offset: spreaders ~ N(+shift, I), regulars ~ N(-shift, I).
    pub feature_shift: f64,
    pub p_intra: f64,
    pub p_inter: f64,
    /// Extra edge probability on spreader-incident pairs, expressed relative
    /// to the pair's base probability: such pairs are sampled with
    /// p * (1 + hub_boost). A relative boost keeps the expected degree bump
    /// proportional to the graph's base density, so boosted spreaders become
    /// local hubs while k-hop ego networks stay local; a boost added directly
    /// to the pair probability would instead contribute hub_boost * (n - 1)
    /// expected extra edges per spreader, collapsing every ego network onto
    /// (nearly) the whole graph and erasing the structural signal it is
    /// supposed to create.
    pub hub_boost: f64,
    pub label_fraction: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(seed: u64) -> Self {
        SynthConfig {
            n_nodes: 400,
            spreader_fraction: 0.5,
            feature_dim: 8,
            feature_shift: 1.0,
            p_intra: 0.025,
            p_inter: 0.002,
            hub_boost: 0.0,
            label_fraction: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_intra", self.p_intra),
            ("p_inter", self.p_inter),
            ("hub_boost", self.hub_boost),
            ("label_fraction", self.label_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if !(0.0 < self.spreader_fraction && self.spreader_fraction < 1.0) {
            return Err(Error::Config(format!(
                "spreader_fraction must be in (0, 1), got {}",
                self.spreader_fraction
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".to_string()));
        }
        let n_spread = (self.n_nodes as f64 * self.spreader_fraction).round() as usize;
        if n_spread == 0 || n_spread >= self.n_nodes {
            return Err(Error::Config(format!(
                "n_nodes {} with spreader_fraction {} leaves a class empty",
                self.n_nodes, self.spreader_fraction
            )));
        }
        Ok(())
    }
}

/// Box-Muller standard normal on a seeded uniform stream; keeps generation
/// reproducible across platforms without depending on a library sampler.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Two-class synthetic graph: Gaussian class-shifted features, class-dependent
/// edge probabilities, optional extra density around spreaders, and a labeled
/// subset of each class. Fully deterministic from the seed.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(SparseGraph, NodeTable)> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    let n_spread = (n as f64 * cfg.spreader_fraction).round() as usize;
    let is_spreader = |v: usize| v < n_spread;

    let mut feat_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    feat_rng.set_stream(0);
    let mut data = Vec::with_capacity(n * cfg.feature_dim);
    for v in 0..n {
        let mean = if is_spreader(v) {
            cfg.feature_shift
        } else {
            -cfg.feature_shift
        };
        for _ in 0..cfg.feature_dim {
            data.push(mean + standard_normal(&mut feat_rng));
        }
    }
    let features = Tensor::new(n, cfg.feature_dim, data)?;

    let mut edge_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    edge_rng.set_stream(1);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let mut p = if is_spreader(u) == is_spreader(v) {
                cfg.p_intra
            } else {
                cfg.p_inter
            };
            if is_spreader(u) || is_spreader(v) {
                p *= 1.0 + cfg.hub_boost;
            }
            if edge_rng.gen::<f64>() < p.min(1.0) {
                edges.push((u, v));
            }
        }
    }
    let graph = SparseGraph::build(&edges, n)?;

    let mut label_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    label_rng.set_stream(2);
    let mut labels = vec![None; n];
    for class_members in [
        (0..n_spread).collect::<Vec<_>>(),
        (n_spread..n).collect::<Vec<_>>(),
    ] {
        let mut members = class_members;
        members.shuffle(&mut label_rng);
        let n_labeled = (members.len() as f64 * cfg.label_fraction).floor() as usize;
        for &v in &members[..n_labeled] {
            labels[v] = Some(u8::from(is_spreader(v)));
        }
    }
    Ok((graph, NodeTable { features, labels }))
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SPGNCKPT";
const CHECKPOINT_VERSION: u8 = 1;

/// Writes a binary checkpoint: magic, version, architecture header, then a
/// named-tensor table with raw little-endian f64 data (bit-exact round trip).
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.push(CHECKPOINT_VERSION);
    let tag = params.kind.tag().as_bytes();
    buf.push(tag.len() as u8);
    buf.extend_from_slice(tag);
    buf.extend_from_slice(&(params.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(params.hidden_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(params.sortpool_k as u32).to_le_bytes());
    buf.extend_from_slice(&(params.params.len() as u32).to_le_bytes());
    for p in &params.params {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
        for &v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Incompatible(format!("{}: truncated checkpoint", self.path)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let buf = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Incompatible(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = r.take(1)?[0];
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "{}: checkpoint version {version}, expected {CHECKPOINT_VERSION}",
            path.display()
        )));
    }
    let tag_len = r.take(1)?[0] as usize;
    let tag = std::str::from_utf8(r.take(tag_len)?)
        .map_err(|_| Error::Incompatible(format!("{}: bad model tag", path.display())))?
        .to_string();
    let kind = ModelKind::from_tag(&tag)?;
    let input_dim = r.u32()? as usize;
    let hidden_dim = r.u32()? as usize;
    let sortpool_k = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Incompatible(format!("{}: bad tensor name", path.display())))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        params.push(Param::new(name, Tensor::new(rows, cols, data)?));
    }
    Ok(ModelParams {
        kind,
        input_dim,
        hidden_dim,
        sortpool_k,
        params,
    })
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    model: &'a str,
    seed: u64,
    accuracy: f64,
    mcc: f64,
    roc_auc: Option<f64>,
}

/// Flat metrics JSON: {"model", "seed", "accuracy", "mcc", "roc_auc"}.
pub fn metrics_json(record: &MetricsRecord, model: ModelKind, seed: u64) -> String {
    let file = MetricsFile {
        model: model.tag(),
        seed,
        accuracy: record.accuracy,
        mcc: record.mcc,
        roc_auc: record.roc_auc,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("plain struct serializes");
    s.push('\n');
    s
}

pub fn write_metrics(record: &MetricsRecord, model: ModelKind, seed: u64, path: &Path) -> Result<()> {
    write_file(path, metrics_json(record, model, seed).as_bytes())
}

/// Per-epoch history as plot-ready CSV.
pub fn write_history(history: &crate::trainer::TrainHistory, path: &Path) -> Result<()> {
    let mut s = String::from("epoch,loss,train_acc\n");
    for rec in &history.records {
        s.push_str(&format!(
            "{},{},{}\n",
            rec.epoch, rec.train_loss, rec.train_accuracy
        ));
    }
    write_file(path, s.as_bytes())
}
