mod common;

use common::*;
use sdds_core::engine::{Graph, LayerSpec, Mode, Network, SeededRng, Tensor};
use rand::SeedableRng;

const TOL: f64 = 1e-4;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (name, graph) in layer_cases() {
        for seed in 0..10 {
            let err = gradcheck(graph.clone(), 2, seed, weighted);
            assert!(err < TOL, "{name} seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn every_loss_kind_matches_finite_differences() {
    for (name, graph, kind) in loss_cases() {
        for seed in 0..10 {
            let err = gradcheck(graph.clone(), 3, seed, |shape, rng| {
                Objective::Loss(kind, random_targets(shape, rng))
            });
            assert!(err < TOL, "{name} seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn dense_weight_gradient_is_outer_product_of_input_and_ones() {
    let mut g = Graph::new(vec![3]);
    g.push("fc", LayerSpec::Dense { inputs: 3, outputs: 2 });
    let mut net = Network::new(g).unwrap();
    let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 3.0]).unwrap();
    net.forward(&x, Mode::Train, None).unwrap();
    net.backward(&Tensor::filled(&[1, 2], 1.0)).unwrap();
    let gw = net.param("fc.weight").unwrap().grad().unwrap();
    // weight is stored (inputs, outputs): d/dW[i][o] of Σ_o y_o = x_i
    assert_eq!(gw, &[0.5, 0.5, -2.0, -2.0, 3.0, 3.0]);
    assert_eq!(net.param("fc.bias").unwrap().grad().unwrap(), &[1.0, 1.0]);
}

#[test]
fn conv_matches_nested_loop_oracle() {
    for seed in [11, 12] {
        let err = conv_oracle_max_err(seed);
        assert!(err < 1e-12, "seed {seed}: {err:e}");
    }
}

#[test]
fn backward_before_forward_is_an_error() {
    let mut g = Graph::new(vec![2]);
    g.push("fc", LayerSpec::Dense { inputs: 2, outputs: 1 });
    let mut net = Network::new(g).unwrap();
    assert!(net.backward(&Tensor::zeros(&[1, 1])).is_err());
    net.forward(&Tensor::zeros(&[1, 2]), Mode::Train, None).unwrap();
    assert!(net.backward(&Tensor::zeros(&[1, 2])).is_err());
}

#[test]
fn dropout_eval_matches_train_expectation() {
    let mut g = Graph::new(vec![8]);
    g.push("d", LayerSpec::Dropout { rate: 0.5 });
    let mut net = Network::new(g).unwrap();
    let x = Tensor::new(vec![1, 8], (1..=8).map(f64::from).collect()).unwrap();
    let eval = net.predict(&x).unwrap();
    let mut rng = SeededRng::seed_from_u64(5);
    // Each unit's mean has a 1% standard error at 10k samples, so compare the
    // expectation of the layer's total output rather than unit by unit.
    let samples = 10_000;
    let mut mean = 0.0;
    for _ in 0..samples {
        let y = net.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
        mean += y.sum() / samples as f64;
    }
    let expected = eval.sum();
    assert!((mean - expected).abs() / expected < 0.02, "{mean} vs {expected}");
}

#[test]
fn forward_and_backward_are_bit_identical_across_runs() {
    let (_, graph, _) = loss_cases().remove(1);
    let run = || {
        let mut net = Network::new(graph.clone()).unwrap();
        sdds_core::engine::he_uniform(&mut net, 99);
        let mut rng = SeededRng::seed_from_u64(1);
        let x = random_tensor(&[2, 5, 5, 1], &mut rng);
        let y = net.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
        net.backward(&Tensor::filled(y.shape(), 1.0)).unwrap();
        let grads: Vec<u64> = net.params().iter().flat_map(|p| p.tensor.grad().unwrap().to_vec()).map(f64::to_bits).collect();
        (y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), grads)
    };
    assert_eq!(run(), run());
}
