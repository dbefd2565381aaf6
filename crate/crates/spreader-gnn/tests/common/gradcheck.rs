//! Finite-difference gradient checking helpers shared by the gradient and
//! acceptance suites.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spreader_gnn::graph::{EgoSample, SparseGraph};
use spreader_gnn::models::{dgcnn_forward, gcn_forward, sage_forward, ModelKind, ModelParams};
use spreader_gnn::tape::{Tape, Val};
use spreader_gnn::tensor::Tensor;

use super::{finite_diff_grads, max_rel_err, random_edges, random_tensor, seeded};

pub const FD_H: f64 = 1e-5;

/// Reduces an arbitrary tape output to a scalar via fixed random weight
/// vectors: loss = u^T Y v.
pub fn scalarize(tape: &mut Tape, y: Val, u: &Tensor, v: &Tensor) -> Val {
    let ui = tape.input(u.clone()).unwrap();
    let vi = tape.input(v.clone()).unwrap();
    let uy = tape.matmul(ui, y).unwrap();
    tape.matmul(uy, vi).unwrap()
}

/// Checks one op's analytic gradients against central differences.
/// `build` maps tape inputs (one per parameter) to the op output.
pub fn check_op(
    name: &str,
    params: &[Tensor],
    seed: u64,
    tol: f64,
    build: impl Fn(&mut Tape, &[Val]) -> Val,
) {
    let mut rng = seeded(seed);
    // probe the output shape once
    let (rows, cols) = {
        let mut tape = Tape::new();
        let vals: Vec<Val> = params.iter().map(|p| tape.input(p.clone()).unwrap()).collect();
        let y = build(&mut tape, &vals);
        tape.value(y).shape()
    };
    let u = random_tensor(1, rows, &mut rng);
    let v = random_tensor(cols, 1, &mut rng);

    let mut tape = Tape::new();
    let vals: Vec<Val> = params.iter().map(|p| tape.input(p.clone()).unwrap()).collect();
    let y = build(&mut tape, &vals);
    let loss = scalarize(&mut tape, y, &u, &v);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vals.iter().map(|&val| grads.get(val).clone()).collect();

    let mut f = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vals: Vec<Val> = ps.iter().map(|p| tape.input(p.clone()).unwrap()).collect();
        let y = build(&mut tape, &vals);
        let loss = scalarize(&mut tape, y, &u, &v);
        tape.value(loss).get(0, 0)
    };
    let numeric = finite_diff_grads(&mut f, params, FD_H);
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < tol, "{name}: max rel err {err}");
}

/// End-to-end model gradient check: the BCE loss of the full forward pass,
/// differentiated w.r.t. every parameter. Returns the worst relative error.
pub fn check_model(kind: ModelKind, seed: u64, tol: f64) -> f64 {
    let mut rng = seeded(seed);
    let n = 8 + (seed % 5) as usize;
    let edges = random_edges(n, 0.3, &mut rng);
    let g = SparseGraph::build(&edges, n).unwrap();
    let g_norm = g.sym_norm_adj();
    let x = random_tensor(n, 3, &mut rng);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();

    let base = match kind {
        ModelKind::Gcn => ModelParams::new_gcn(3, 4, &mut rng),
        ModelKind::Sage => ModelParams::new_sage(3, 4, &mut rng),
        ModelKind::Dgcnn => ModelParams::new_dgcnn(3, 2, 4, &mut rng).unwrap(),
    };
    let sample = EgoSample {
        graph: g.clone(),
        features: x.clone(),
        root_local_index: 0,
        label: 1,
    };
    let tensors: Vec<Tensor> = base.params.iter().map(|p| p.value.clone()).collect();

    let forward_loss = |ps: &[Tensor], want_grads: bool| -> (f64, Option<Vec<Tensor>>) {
        let mut model = base.clone();
        for (p, t) in model.params.iter_mut().zip(ps) {
            p.value = t.clone();
        }
        let mut drng = ChaCha8Rng::seed_from_u64(0);
        let mut fwd = match kind {
            ModelKind::Gcn => gcn_forward(&g_norm, &x, &model, false, 0.5, &mut drng).unwrap(),
            ModelKind::Sage => sage_forward(&g, &x, &model, false, 0.5, &mut drng).unwrap(),
            ModelKind::Dgcnn => dgcnn_forward(&sample, &model, false, 0.5, &mut drng).unwrap(),
        };
        let loss = match kind {
            ModelKind::Dgcnn => fwd.tape.bce_with_logits(fwd.logits, &[sample.label]).unwrap(),
            _ => fwd.tape.bce_with_logits(fwd.logits, &labels).unwrap(),
        };
        let value = fwd.tape.value(loss).get(0, 0);
        if !want_grads {
            return (value, None);
        }
        let grads = fwd.tape.backward(loss).unwrap();
        let gs = fwd
            .param_vals
            .iter()
            .map(|&v| grads.get(v).clone())
            .collect();
        (value, Some(gs))
    };

    let (_, analytic) = forward_loss(&tensors, true);
    let analytic = analytic.unwrap();
    let mut f = |ps: &[Tensor]| forward_loss(ps, false).0;
    let numeric = finite_diff_grads(&mut f, &tensors, FD_H);
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < tol, "{} seed {seed}: max rel err {err}", kind.tag());
    err
}

/// Runs every per-op finite-difference check once at the given tolerance.
/// Shared between the gradient suite and the acceptance gate.
pub fn check_all_ops(seed: u64, tol: f64) {
    let mut rng = seeded(seed);
    let a = random_tensor(4, 3, &mut rng);
    let b = random_tensor(3, 2, &mut rng);
    check_op("matmul", &[a, b], seed + 100, tol, |t, v| {
        t.matmul(v[0], v[1]).unwrap()
    });

    let x = random_tensor(5, 4, &mut rng);
    check_op("relu", &[x.clone()], seed, tol, |t, v| t.relu(v[0]).unwrap());
    check_op("tanh", &[x.clone()], seed, tol, |t, v| t.tanh(v[0]).unwrap());
    check_op("sigmoid", &[x.clone()], seed, tol, |t, v| {
        t.sigmoid(v[0]).unwrap()
    });

    let x6 = random_tensor(6, 3, &mut rng);
    let bias = random_tensor(1, 3, &mut rng);
    check_op("add_bias", &[x6.clone(), bias], seed, tol, |t, v| {
        t.add_bias(v[0], v[1]).unwrap()
    });
    let y6 = random_tensor(6, 2, &mut rng);
    check_op("concat_cols", &[x6.clone(), y6], seed, tol, |t, v| {
        t.concat_cols(v[0], v[1]).unwrap()
    });
    check_op("gather_rows", &[x6], seed, tol, |t, v| {
        t.gather_rows(v[0], vec![5, 0, 2, 2]).unwrap()
    });

    let edges = random_edges(9, 0.3, &mut rng);
    let g = std::rc::Rc::new(SparseGraph::build(&edges, 9).unwrap());
    let g_norm = std::rc::Rc::new(g.sym_norm_adj());
    let xg = random_tensor(9, 4, &mut rng);
    check_op("spmm", &[xg.clone()], seed, tol, |t, v| {
        t.spmm(&g_norm, v[0]).unwrap()
    });
    check_op("mean_aggregate", &[xg], seed, tol, |t, v| {
        t.mean_aggregate(&g, v[0]).unwrap()
    });

    let xc = random_tensor(3, 12, &mut rng);
    let k = random_tensor(4, 3 * 3, &mut rng);
    check_op("conv1d", &[xc.clone(), k], seed, tol, |t, v| {
        t.conv1d(v[0], v[1], 3, 2).unwrap()
    });
    let k1 = random_tensor(4, 3 * 3, &mut rng);
    check_op("conv1d_stride1", &[xc.clone(), k1], seed, tol, |t, v| {
        t.conv1d(v[0], v[1], 3, 1).unwrap()
    });
    check_op("maxpool1d", &[xc.clone()], seed, tol, |t, v| {
        t.maxpool1d(v[0], 2, 2).unwrap()
    });
    check_op("pad_cols", &[xc], seed, tol, |t, v| {
        t.pad_cols(v[0], 20).unwrap()
    });
    let z = random_tensor(7, 3, &mut rng);
    check_op("sort_pool", &[z], seed, tol, |t, v| {
        t.sort_pool(v[0], 4).unwrap()
    });

    // bce is already scalar; check without scalarize
    let zl = random_tensor(50, 1, &mut rng);
    let labels: Vec<u8> = (0..50).map(|i| (i % 2) as u8).collect();
    let mut tape = Tape::new();
    let zi = tape.input(zl.clone()).unwrap();
    let loss = tape.bce_with_logits(zi, &labels).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic = vec![grads.get(zi).clone()];
    let mut f = |ps: &[Tensor]| {
        let mut tape = Tape::new();
        let zi = tape.input(ps[0].clone()).unwrap();
        let loss = tape.bce_with_logits(zi, &labels).unwrap();
        tape.value(loss).get(0, 0)
    };
    let numeric = finite_diff_grads(&mut f, &[zl], FD_H);
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < tol, "bce: max rel err {err}");
}
