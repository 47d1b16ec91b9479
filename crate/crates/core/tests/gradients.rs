mod common;

use aeforge::models::Activation;
use common::*;

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..GRADIENT_SEEDS {
        for (op, c) in op_gradients(seed) {
            assert!(c.checked > 0, "{op}");
            assert!(c.max_rel < FD_TOLERANCE, "{op} seed {seed}: rel err {:.3e}", c.max_rel);
        }
    }
}

#[test]
fn autoencoder_graph_matches_finite_differences() {
    for seed in 0..GRADIENT_SEEDS {
        let c = autoencoder_gradients(seed, Activation::Silu);
        assert_eq!(c.kinks, 0);
        assert!(c.max_rel < FD_TOLERANCE, "seed {seed}: {c:?}");
    }
}

#[test]
fn relu_autoencoder_graph_matches_away_from_kinks() {
    for seed in 0..GRADIENT_SEEDS {
        let c = autoencoder_gradients(seed, Activation::Relu);
        assert!(c.kinks * 20 < c.checked, "seed {seed}: {c:?}");
        assert!(c.max_rel < FD_TOLERANCE, "seed {seed}: {c:?}");
    }
}

#[test]
fn detector_graph_matches_finite_differences() {
    for seed in 0..GRADIENT_SEEDS {
        let c = detector_gradients(seed);
        assert!(c.max_rel < FD_TOLERANCE, "seed {seed}: {c:?}");
    }
}

#[test]
fn rel_error_floor() {
    assert_eq!(rel_error(0.0, 0.0), 0.0);
    assert_eq!(rel_error(1.0, 1.0), 0.0);
    assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    assert!(rel_error(1e-9, -1e-9) < 1e-4);
    assert!(rel_error(1e-4, 2e-4) > 0.49);
}
