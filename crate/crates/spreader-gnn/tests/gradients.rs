//! Finite-difference verification of every differentiable op and of the
//! three full models.

mod common;

use common::gradcheck::{check_all_ops, check_model, check_op};
use common::{random_tensor, seeded};
use spreader_gnn::models::ModelKind;

#[test]
fn every_op_matches_finite_differences() {
    for seed in [1, 2, 3] {
        check_all_ops(seed * 31 + 5, 1e-4);
    }
}

#[test]
fn tight_tolerance_ops() {
    // ops with smooth everywhere-defined derivatives hold to much tighter
    // tolerances than the headline bound
    for seed in [1, 2, 3] {
        let mut rng = seeded(seed);
        let a = random_tensor(4, 3, &mut rng);
        let b = random_tensor(3, 2, &mut rng);
        check_op("matmul", &[a, b], seed + 100, 1e-6, |t, v| {
            t.matmul(v[0], v[1]).unwrap()
        });
        let x = random_tensor(3, 12, &mut rng);
        let k = random_tensor(4, 3 * 3, &mut rng);
        check_op("conv1d", &[x, k], seed, 1e-6, |t, v| {
            t.conv1d(v[0], v[1], 3, 2).unwrap()
        });
    }
}

#[test]
fn gcn_end_to_end_gradient() {
    for seed in [1, 2, 3] {
        check_model(ModelKind::Gcn, seed, 1e-4);
    }
}

#[test]
fn sage_end_to_end_gradient() {
    for seed in [1, 2, 3] {
        check_model(ModelKind::Sage, seed, 1e-4);
    }
}

#[test]
fn dgcnn_end_to_end_gradient() {
    for seed in [1, 2, 3] {
        check_model(ModelKind::Dgcnn, seed, 1e-4);
    }
}
