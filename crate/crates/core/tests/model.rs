mod common;

use common::rng;
use floodgt::graph::Graph;
use floodgt::model::attention::{edge_attention_forward, InEdges};
use floodgt::model::{
    forward_trace, loss_and_gradients, mc_dropout_predict, train, GtConfig, GtModel, Mat, Mode, ModelInput, NodeMasks,
};
use floodgt::pe::laplacian_pe;
use rand::Rng;

fn toy_graph() -> Graph {
    let lists = vec![
        vec![(0, 1.0), (1, 0.9), (2, 0.4)],
        vec![(1, 1.0), (0, 0.9), (3, 0.7)],
        vec![(2, 1.0), (4, 0.8), (1, 0.3)],
        vec![(3, 1.0), (2, 0.6), (4, 0.5)],
        vec![(4, 1.0), (0, 0.2), (3, 0.5)],
    ];
    Graph::from_out_lists(lists, 2)
}

fn toy_input(seed: u64) -> ModelInput {
    let mut r = rng(seed);
    let g = toy_graph();
    let features = Mat::from_fn(5, 3, |_, _| r.random_range(-1.0..1.0));
    let pe = laplacian_pe(&g, 2).unwrap();
    ModelInput::new(&g, &features, &pe).unwrap()
}

fn toy_config(layers: usize) -> GtConfig {
    GtConfig {
        hidden_dim: 4,
        num_heads: 2,
        num_layers: layers,
        dropout: 0.0,
        num_eigenvectors: 2,
        k_neighbours: 2,
        seed: 3 + layers as u64,
        ..GtConfig::default()
    }
}

/// Central differences on every scalar parameter; returns the maximum
/// relative error against the analytic gradient.
fn max_relative_error(layers: usize) -> f64 {
    let input = toy_input(layers as u64);
    let labels = [1u8, 0, 1, 0, 0];
    let mask = [0usize, 1, 2, 3, 4];
    let model = GtModel::new(toy_config(layers), input.input_dim()).unwrap();
    let (_, grads) = loss_and_gradients(&input, &model, &labels, &mask, Mode::Eval, 0).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let n_tensors = model.params.tensors().len();
    for t in 0..n_tensors {
        let len = model.params.tensors()[t].len();
        for i in 0..len {
            let mut plus = model.clone();
            plus.params.tensors_mut()[t][i] += h;
            let mut minus = model.clone();
            minus.params.tensors_mut()[t][i] -= h;
            let lp = loss_and_gradients(&input, &plus, &labels, &mask, Mode::Eval, 0).unwrap().0;
            let lm = loss_and_gradients(&input, &minus, &labels, &mask, Mode::Eval, 0).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.tensors()[t][i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for layers in 1..=3 {
        let e = max_relative_error(layers);
        assert!(e < 1e-4, "{layers} layers: max relative error {e}");
    }
}

#[test]
fn softmax_rows_sum_to_one_on_random_graphs() {
    let mut r = rng(17);
    for _ in 0..100 {
        let n = r.random_range(1..30);
        let lists: Vec<Vec<(usize, f64, bool)>> = (0..n)
            .map(|i| {
                let mut l = vec![(i, 1.0, true)];
                for j in 0..n {
                    if j != i && r.random_bool(0.2) {
                        l.push((j, r.random_range(-1.0..1.0), false));
                    }
                }
                l
            })
            .collect();
        let edges = InEdges::from_lists(lists);
        let d = r.random_range(1..6);
        let q = Mat::from_fn(n, d, |_, _| r.random_range(-3.0..3.0));
        let k = Mat::from_fn(n, d, |_, _| r.random_range(-3.0..3.0));
        let v = Mat::from_fn(n, d, |_, _| r.random_range(-3.0..3.0));
        let (_, attn) = edge_attention_forward(&edges, &q, &k, &v);
        for i in 0..n {
            let s: f64 = edges.range(i).map(|e| attn[e]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn traced_attention_is_normalized() {
    let input = toy_input(1);
    let model = GtModel::new(toy_config(2), input.input_dim()).unwrap();
    let trace = forward_trace(&input, &model, Mode::Eval, 0).unwrap();
    assert_eq!(trace.attention.len(), 2);
    for layer in &trace.attention {
        for head in layer {
            for i in 0..5 {
                let s: f64 = input.in_edges.range(i).map(|e| head[e]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_dropout_has_zero_uncertainty() {
    let input = toy_input(2);
    let model = GtModel::new(toy_config(2), input.input_dim()).unwrap();
    let mc = mc_dropout_predict(&input, &model, 20, 9).unwrap();
    assert!(mc.std.iter().all(|&s| s == 0.0));
    assert_eq!(mc.mean, model.predict(&input).unwrap());
}

#[test]
fn mc_dropout_is_bounded_and_reproducible() {
    let input = toy_input(3);
    let cfg = GtConfig {
        dropout: 0.5,
        ..toy_config(2)
    };
    let model = GtModel::new(cfg, input.input_dim()).unwrap();
    let a = mc_dropout_predict(&input, &model, 50, 4).unwrap();
    let b = mc_dropout_predict(&input, &model, 50, 4).unwrap();
    assert_eq!(a, b);
    assert!(a.std.iter().all(|&s| (0.0..=0.5).contains(&s)));
    assert!(a.std.iter().any(|&s| s > 0.0));
}

#[test]
fn training_is_deterministic_and_improves() {
    let input = toy_input(4);
    let labels = vec![1u8, 0, 1, 0, 1];
    let masks = NodeMasks {
        train: vec![0, 1, 2],
        val: vec![3, 4],
        test: vec![],
    };
    let cfg = GtConfig {
        max_epochs: 30,
        patience: 100,
        ..toy_config(1)
    };
    let (p1, h1) = train(&input, &labels, &masks, &cfg).unwrap();
    let (p2, h2) = train(&input, &labels, &masks, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!((&h1.epochs, h1.best_epoch), (&h2.epochs, h2.best_epoch));
    assert!(h1.epochs.last().unwrap().train_loss < h1.epochs[0].train_loss);
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let input = toy_input(5);
    let labels = vec![1u8, 0, 1, 0, 1];
    let masks = NodeMasks {
        train: vec![0, 1, 2],
        val: vec![3, 4],
        test: vec![],
    };
    let cfg = GtConfig {
        learning_rate: 0.0,
        max_epochs: 5,
        ..toy_config(1)
    };
    let (p, _) = train(&input, &labels, &masks, &cfg).unwrap();
    assert_eq!(p, GtModel::new(cfg, input.input_dim()).unwrap().params);
}
