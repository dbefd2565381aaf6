use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spreader_gnn::data::{
    generate_synthetic, load_checkpoint, load_dataset, save_checkpoint, save_dataset,
    write_history, write_metrics, NodeTable, SynthConfig,
};
use spreader_gnn::error::Result;
use spreader_gnn::graph::SparseGraph;
use spreader_gnn::metrics::MetricsRecord;
use spreader_gnn::models::{ModelKind, ModelParams};
use spreader_gnn::trainer::{evaluate, split_dataset, train, TrainConfig, TrainHistory};

/// Misinformation-spreader detection with graph neural networks.
#[derive(Parser)]
#[command(name = "spreader-gnn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled graph dataset.
    Generate(GenerateArgs),
    /// Extract the k-hop ego-network of a node.
    Ego(EgoArgs),
    /// Train one model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out test split.
    Eval(EvalArgs),
    /// Train and evaluate all three models on one shared split.
    RunAll(RunAllArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of nodes
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Fraction of spreader nodes
    #[arg(long, default_value_t = 0.5)]
    spreader_fraction: f64,
    /// Feature dimensionality
    #[arg(long, default_value_t = 8)]
    feature_dim: usize,
    /// Per-class feature mean offset (signal strength)
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    /// Edge probability within a class
    #[arg(long, default_value_t = 0.025)]
    p_intra: f64,
    /// Edge probability across classes
    #[arg(long, default_value_t = 0.002)]
    p_inter: f64,
    /// Relative edge-probability boost on spreader-incident pairs
    #[arg(long, default_value_t = 0.0)]
    hub_boost: f64,
    /// Fraction of each class that gets a label
    #[arg(long, default_value_t = 0.5)]
    label_fraction: f64,
}

#[derive(Args)]
struct EgoArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Root node id
    #[arg(long)]
    root: usize,
    /// Hop count
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Optional directory for the extracted subgraph (nodes.csv, edges.tsv)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Training epochs
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Use the paper-literal learning rate preset (1e-5) instead of --lr
    #[arg(long, default_value_t = false)]
    paper_lr: bool,
    /// Dropout probability
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Hidden layer width
    #[arg(long, default_value_t = 32)]
    hidden_dim: usize,
    /// Train fraction of the labeled nodes
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    /// SortPooling size for DGCNN (default: 0.6-quantile of training ego sizes)
    #[arg(long)]
    sortpool_k: Option<usize>,
}

impl TrainFlags {
    fn to_config(&self, model: ModelKind, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(model, seed);
        cfg.epochs = self.epochs;
        cfg.lr = if self.paper_lr { 1e-5 } else { self.lr };
        cfg.dropout = self.dropout;
        cfg.hidden_dim = self.hidden_dim;
        cfg.split_ratio = self.split_ratio;
        cfg.sortpool_k = self.sortpool_k;
        cfg
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Model to train: gcn, sage, or dgcnn
    #[arg(long)]
    model: String,
    /// Seed for split, initialization, dropout, and shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch history CSV path
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to evaluate
    #[arg(long)]
    checkpoint: PathBuf,
    /// Seed used at training time (recovers the same test split)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train fraction used at training time
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    /// Metrics JSON output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunAllArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Shared seed for split, initialization, dropout, and shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for checkpoints, histories, and metrics
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Ego(args) => cmd_ego(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::RunAll(args) => cmd_run_all(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_nodes: args.n,
        spreader_fraction: args.spreader_fraction,
        feature_dim: args.feature_dim,
        feature_shift: args.shift,
        p_intra: args.p_intra,
        p_inter: args.p_inter,
        hub_boost: args.hub_boost,
        label_fraction: args.label_fraction,
        seed: args.seed,
    };
    let (graph, table) = generate_synthetic(&cfg)?;
    save_dataset(&args.out, &graph, &table)?;
    let labeled = table.labels.iter().filter(|l| l.is_some()).count();
    println!(
        "generated {} nodes, {} edges, {} labeled nodes -> {}",
        graph.n_nodes(),
        graph.n_edges(),
        labeled,
        args.out.display()
    );
    Ok(())
}

fn cmd_ego(args: EgoArgs) -> Result<()> {
    let (graph, _) = load_dataset(&args.data)?;
    let (sub, map) = graph.extract_ego(args.root, args.k)?;
    println!(
        "ego of node {} at {} hops: {} nodes, {} edges",
        args.root,
        args.k,
        sub.n_nodes(),
        sub.n_edges()
    );
    if let Some(out) = args.out {
        std::fs::create_dir_all(&out)
            .map_err(|e| spreader_gnn::Error::io(out.display().to_string(), e))?;
        let mut nodes = String::from("local,original\n");
        for (local, orig) in map.iter().enumerate() {
            nodes.push_str(&format!("{local},{orig}\n"));
        }
        let nodes_path = out.join("nodes.csv");
        std::fs::write(&nodes_path, nodes)
            .map_err(|e| spreader_gnn::Error::io(nodes_path.display().to_string(), e))?;
        let mut edges = String::from("# src\tdst (local ids)\n");
        for (u, v) in sub.edge_list() {
            edges.push_str(&format!("{u}\t{v}\n"));
        }
        let edges_path = out.join("edges.tsv");
        std::fs::write(&edges_path, edges)
            .map_err(|e| spreader_gnn::Error::io(edges_path.display().to_string(), e))?;
    }
    Ok(())
}

fn train_one(
    graph: &SparseGraph,
    table: &NodeTable,
    cfg: &TrainConfig,
    train_nodes: &[usize],
    test_nodes: &[usize],
) -> Result<(ModelParams, TrainHistory, MetricsRecord)> {
    let (params, mut history) = train(graph, table, cfg, train_nodes)?;
    let metrics = evaluate(&params, graph, table, test_nodes)?;
    history.final_metrics = Some(metrics.clone());
    for rec in &history.records {
        eprintln!(
            "[{}] epoch {:4}  loss {:.6}  train_acc {:.4}",
            cfg.model.tag(),
            rec.epoch,
            rec.train_loss,
            rec.train_accuracy
        );
    }
    Ok((params, history, metrics))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let model = ModelKind::from_tag(&args.model)?;
    let cfg = args.flags.to_config(model, args.seed);
    let (graph, table) = load_dataset(&args.data)?;
    let (train_nodes, test_nodes) = split_dataset(&table, cfg.split_ratio, cfg.seed)?;
    let (params, history, _) = train_one(&graph, &table, &cfg, &train_nodes, &test_nodes)?;
    save_checkpoint(&params, &args.out)?;
    if let Some(hist_path) = &args.history {
        write_history(&history, hist_path)?;
    }
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let (graph, table) = load_dataset(&args.data)?;
    let (_, test_nodes) = split_dataset(&table, args.split_ratio, args.seed)?;
    let metrics = evaluate(&params, &graph, &table, &test_nodes)?;
    write_metrics(&metrics, params.kind, args.seed, &args.out)?;
    println!("{}", format_table_row(params.kind, &metrics));
    Ok(())
}

fn format_table_row(model: ModelKind, m: &MetricsRecord) -> String {
    let auc = m
        .roc_auc
        .map_or("undefined".to_string(), |v| format!("{v:.4}"));
    format!(
        "{:<8} accuracy {:.4}  mcc {:+.4}  roc_auc {}",
        model.tag(),
        m.accuracy,
        m.mcc,
        auc
    )
}

fn worker_threads() -> usize {
    std::env::var("SPREADER_GNN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn cmd_run_all(args: RunAllArgs) -> Result<()> {
    let (graph, table) = load_dataset(&args.data)?;
    let ratio = args.flags.split_ratio;
    // one shared split for a fair three-way comparison
    let (train_nodes, test_nodes) = split_dataset(&table, ratio, args.seed)?;
    let kinds = [ModelKind::Gcn, ModelKind::Sage, ModelKind::Dgcnn];
    let threads = worker_threads().min(kinds.len());

    let mut results: Vec<Option<Result<(ModelParams, TrainHistory, MetricsRecord)>>> =
        (0..kinds.len()).map(|_| None).collect();
    if threads <= 1 {
        for (slot, &kind) in results.iter_mut().zip(&kinds) {
            let cfg = args.flags.to_config(kind, args.seed);
            *slot = Some(train_one(&graph, &table, &cfg, &train_nodes, &test_nodes));
        }
    } else {
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for &kind in &kinds {
                let cfg = args.flags.to_config(kind, args.seed);
                let (graph, table) = (&graph, &table);
                let (train_nodes, test_nodes) = (&train_nodes, &test_nodes);
                handles.push(scope.spawn(move || {
                    train_one(graph, table, &cfg, train_nodes, test_nodes)
                }));
            }
            for (slot, h) in results.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("training thread panicked"));
            }
        });
    }

    std::fs::create_dir_all(&args.out)
        .map_err(|e| spreader_gnn::Error::io(args.out.display().to_string(), e))?;
    println!("model    accuracy   mcc      roc_auc");
    for (kind, result) in kinds.into_iter().zip(results) {
        let (params, history, metrics) = result.expect("slot filled")?;
        let tag = kind.tag();
        save_checkpoint(&params, &args.out.join(format!("{tag}.ckpt")))?;
        write_history(&history, &args.out.join(format!("history_{tag}.csv")))?;
        write_metrics(
            &metrics,
            kind,
            args.seed,
            &args.out.join(format!("metrics_{tag}.json")),
        )?;
        let auc = metrics
            .roc_auc
            .map_or("undefined".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<8} {:<10.4} {:<+8.4} {}",
            tag, metrics.accuracy, metrics.mcc, auc
        );
    }
    Ok(())
}
