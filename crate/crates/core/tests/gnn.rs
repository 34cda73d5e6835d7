#![allow(clippy::needless_range_loop)]

//! Layer oracles, gradient checks, invariants and trainability of the graph
//! neural networks.

use graphscore::gnn::*;
use ndarray::{arr2, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::{dense_adj, dense_sym, max_abs_diff, random_graph, random_matrix};

#[test]
fn gcn_single_node_identity() {
    let g = GnnGraph::from_edges(1, &[]);
    let out = gcn_forward(&Array2::eye(2), arr2(&[[-1.0, 2.0]]).view(), &g.gcn, Activation::Relu).unwrap();
    assert_eq!(out, arr2(&[[0.0, 2.0]]));
}

#[test]
fn shape_mismatch_is_an_error() {
    let g = GnnGraph::from_edges(3, &[(0, 1)]);
    let r = gcn_forward(&Array2::zeros((4, 2)), Array2::zeros((3, 3)).view(), &g.gcn, Activation::Relu);
    assert!(matches!(r, Err(GnnError::Shape { .. })));
}

#[test]
fn sage_singleton_neighbor_and_unit_rows() {
    let g = GnnGraph::from_edges(3, &[(0, 1)]);
    let x = arr2(&[[1.0, -2.0], [3.0, 4.0], [5.0, 6.0]]);
    // W selects the aggregate half
    let w = arr2(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
    let agg = sage_forward(&w, x.view(), &g.mean, Activation::Identity, false).unwrap();
    assert_eq!(agg.row(0).to_vec(), vec![3.0, 4.0]);
    assert_eq!(agg.row(2).to_vec(), vec![0.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_matrix(4, 6, &mut rng);
    let out = sage_forward(&w, x.view(), &g.mean, Activation::Relu, true).unwrap();
    for row in out.rows() {
        let n = row.dot(&row).sqrt();
        assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn gat_attention_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let edges = random_graph(15, 0.25, &mut rng);
    let g = GnnGraph::from_edges(16, &edges);
    let x = random_matrix(16, 4, &mut rng);
    let w = random_matrix(4, 3, &mut rng);
    let a = random_matrix(6, 1, &mut rng);
    let att = gat_attention(&w, &a, x.view(), &g.attention, 0.2).unwrap();
    for (i, row) in att.iter().enumerate() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        if g.attention.of(i).len() == 1 {
            assert_eq!(row, &vec![1.0]);
        }
    }
    // node 15 is isolated
    assert_eq!(att[15], vec![1.0]);

    // node 0 has two neighbors with identical features
    let g = GnnGraph::from_edges(3, &[(0, 1), (0, 2)]);
    let x = arr2(&[[0.3, 0.1], [1.0, 2.0], [1.0, 2.0]]);
    let att = gat_attention(&Array2::eye(2), &random_matrix(4, 1, &mut rng), x.view(), &g.attention, 0.2).unwrap();
    assert!((att[0][1] - att[0][2]).abs() < 1e-15);
}

#[test]
fn tagcn_matches_matrix_polynomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4)];
    let g = GnnGraph::from_edges(5, &edges);
    let s = dense_sym(&dense_adj(5, &edges));
    let x = random_matrix(5, 3, &mut rng);
    let coeffs: Vec<Array2<f64>> = (0..3).map(|_| random_matrix(3, 2, &mut rng)).collect();
    let got = tagcn_forward(&coeffs, x.view(), &g.sym, Activation::Identity).unwrap();
    let s2 = s.dot(&s);
    let expected = x.dot(&coeffs[0]) + s.dot(&x).dot(&coeffs[1]) + s2.dot(&x).dot(&coeffs[2]);
    assert!(max_abs_diff(&got, &expected) <= 1e-12);

    // K = 0: no propagation
    let k0 = tagcn_forward(&coeffs[..1], x.view(), &g.sym, Activation::Identity).unwrap();
    assert!(max_abs_diff(&k0, &x.dot(&coeffs[0])) <= 1e-15);
    assert!(matches!(tagcn_forward(&[], x.view(), &g.sym, Activation::Identity), Err(GnnError::InvalidConfig(_))));
}

#[test]
fn tagcn_uniform_on_regular_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cycle: Vec<(usize, usize)> = (0..8).map(|i| (i, (i + 1) % 8)).collect();
    let g = GnnGraph::from_edges(8, &cycle);
    let x = Array2::from_shape_fn((8, 3), |(_, j)| j as f64 + 0.5);
    let coeffs: Vec<Array2<f64>> = (0..4).map(|_| random_matrix(3, 2, &mut rng)).collect();
    let out = tagcn_forward(&coeffs, x.view(), &g.sym, Activation::Relu).unwrap();
    for i in 1..8 {
        for o in 0..2 {
            assert!((out[[i, o]] - out[[0, o]]).abs() < 1e-12);
        }
    }
}

#[test]
fn renorm_operator_is_symmetric_with_unit_spectral_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let n = rng.random_range(3..20);
        let g = GnnGraph::from_edges(n, &random_graph(n, 0.3, &mut rng));
        let d = g.gcn.to_dense();
        assert!(max_abs_diff(&d, &d.t().to_owned()) < 1e-15);
        // power iteration on the symmetric matrix estimates the spectral radius
        let mut v = Array2::from_elem((n, 1), 1.0) + random_matrix(n, 1, &mut rng) * 0.1;
        let mut rho = 0.0;
        for _ in 0..500 {
            let w = d.dot(&v);
            rho = w.iter().map(|x| x * x).sum::<f64>().sqrt() / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = &w / w.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        assert!(rho <= 1.0 + 1e-9, "spectral radius {rho}");
    }
}

#[test]
fn layers_are_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 12;
    let edges = random_graph(n, 0.3, &mut rng);
    let x = random_matrix(n, 4, &mut rng);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    // node i of the original is node perm[i] of the permuted graph
    let pedges: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
    let mut px = Array2::zeros(x.dim());
    for i in 0..n {
        px.row_mut(perm[i]).assign(&x.row(i));
    }
    let g = GnnGraph::from_edges(n, &edges);
    let pg = GnnGraph::from_edges(n, &pedges);
    for kind in LayerKind::ALL {
        let net = Network::two_layer(&GnnArch { heads: 2, ..GnnArch::new(kind) }, 4, 11);
        let out = net.forward(&g, &x).unwrap();
        let pout = net.forward(&pg, &px).unwrap();
        for i in 0..n {
            for o in 0..2 {
                assert!((out[[i, o]] - pout[[perm[i], o]]).abs() < 1e-12, "{kind}");
            }
        }
    }
}

#[test]
fn cross_entropy_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let logits = random_matrix(10, 2, &mut rng) * 3.0;
    let labels: Vec<u8> = (0..10).map(|i| (i % 3 == 0) as u8).collect();
    let mask = [0, 1, 2, 3, 5, 8, 9];
    let w = [0.7, 2.1];
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in &mask {
        let y = labels[i] as usize;
        let p = logits[[i, y]].exp() / (logits[[i, 0]].exp() + logits[[i, 1]].exp());
        num += w[y] * -p.ln();
        den += w[y];
    }
    let got = weighted_cross_entropy(&logits, &labels, &w, &mask).unwrap();
    assert!((got - num / den).abs() <= 1e-12);
}

#[test]
fn gradient_check_all_layers() {
    for kind in LayerKind::ALL {
        let err = common::gradient_error(kind);
        assert!(err <= 1e-4, "{kind}: {err}");
    }
}

#[test]
fn forwards_match_naive_oracles() {
    for kind in LayerKind::ALL {
        let err = common::forward_error(kind);
        assert!(err <= 1e-12, "{kind}: {err:e}");
    }
}

#[test]
fn zero_input_gives_zero_gradients() {
    let (g, x, y) = common::toy_instance(13);
    let zero = Array2::zeros(x.dim());
    for kind in LayerKind::ALL {
        let net = Network::two_layer(&GnnArch::new(kind), 5, 1);
        let (loss, grads) = net.loss_and_grad(&g, &zero, &y, &[1.0, 1.0], &(0..12).collect::<Vec<_>>()).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        let m = grads.iter().flatten().flat_map(|a| a.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(m < 1e-12, "{kind}: {m}");
    }
}

#[test]
fn linear_single_layer_gradients_are_exact() {
    let (g, x, y) = common::toy_instance(14);
    let mut rng = graphscore::rng::from_seed(2);
    for kind in LayerKind::ALL {
        let layer = Layer::new(kind, 5, 2, Activation::Identity, 1, false, 2, 0.2, &mut rng);
        let net = Network { layers: vec![layer] };
        let err = net.gradient_check(&g, &x, &y, &[1.0, 2.0], &(0..12).collect::<Vec<_>>(), 1e-5).unwrap();
        let bound = if kind == LayerKind::Gat { 1e-4 } else { 1e-8 };
        assert!(err <= bound, "{kind}: {err}");
    }
}

#[test]
fn two_cliques_train_and_determinism() {
    let (g, x, y) = two_cliques_toy(1);
    let masks = Masks { train: (0..20).collect(), test: vec![] };
    for kind in LayerKind::ALL {
        let arch = GnnArch::new(kind);
        let cfg = TrainConfig { seed: 4, ..Default::default() };
        let t = train_gnn(&g, &x, &y, &masks, &arch, &cfg).unwrap();
        let h = &t.model.loss_history;
        assert_eq!(h.len(), 201);
        let drop = 1.0 - h[200] / h[0];
        eprintln!("{kind}: {:.4} -> {:.4} ({:.1}%)", h[0], h[200], 100.0 * drop);
        assert!(h[200] < h[0]);
        let again = train_gnn(&g, &x, &y, &masks, &arch, &cfg).unwrap();
        assert_eq!(again.model, t.model);
    }
}

#[test]
fn checkpoint_round_trip() {
    let (g, x, y) = two_cliques_toy(2);
    let masks = Masks { train: (0..20).step_by(2).collect(), test: (1..20).step_by(2).collect() };
    let t =
        train_gnn(&g, &x, &y, &masks, &GnnArch::new(LayerKind::Gat), &TrainConfig { epochs: 5, ..Default::default() })
            .unwrap();
    let back = GnnModel::from_json(&t.model.to_json().unwrap()).unwrap();
    assert_eq!(back.predict(&g, &x).unwrap(), t.model.predict(&g, &x).unwrap());
    let mut buf = Vec::new();
    write_history_jsonl(&mut buf, &t.history).unwrap();
    let lines: Vec<&str> = std::str::from_utf8(&buf).unwrap().lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("{\"epoch\":0,\"loss\":"));
}

#[test]
fn defaults_follow_the_protocol() {
    let cfg = TrainConfig::default();
    assert_eq!((cfg.learning_rate, cfg.epochs, cfg.momentum), (0.02, 200, 0.0));
    let arch = GnnArch::default();
    assert_eq!((arch.hidden, arch.out), (16, 2));
}
