mod common;

use common::{assert_close, batch, config, model, path, ring, uniform};
use dwafm::config::Variant;
use dwafm::embedding::{dwgs_embedding, dynamic_adjacency, temporal_embedding};
use dwafm::numerics::{Tape, Tensor};

/// Reference adjacency computed entry by entry in f64.
fn adjacency_oracle(x: &[f64], wq: &[f64], wk: &[f64], mask: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let d_f = wq.len();
    let dot: f64 = wq.iter().zip(wk).map(|(a, b)| a * b).sum();
    let mut att = vec![0.0; n * n];
    for i in 0..n {
        let logits: Vec<Option<f64>> = (0..n)
            .map(|j| (mask[i * n + j] != 0.0).then(|| x[i] * x[j] * dot / (d_f as f64).sqrt()))
            .collect();
        let m = logits.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().flatten().map(|l| (l - m).exp()).sum();
        for j in 0..n {
            att[i * n + j] = logits[j].map_or(0.0, |l| (l - m).exp() / z);
        }
    }
    let sym = (0..n * n).map(|k| 0.5 * (att[k] + att[(k % n) * n + k / n])).collect();
    (att, sym)
}

fn run_adjacency(x: &Tensor<f64>, wq: &Tensor<f64>, wk: &Tensor<f64>, mask: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let mut tape = Tape::eval();
    let (xv, q, k) = (tape.constant(x.clone()), tape.constant(wq.clone()), tape.constant(wk.clone()));
    let (a, g) = dynamic_adjacency(&mut tape, xv, q, k, mask).unwrap();
    (tape.value(a).clone(), tape.value(g).clone())
}

#[test]
fn dynamic_adjacency_matches_entrywise_oracle() {
    let (b, t, n, d_f) = (2, 3, 5, 4);
    let x = uniform::<f64>(&[b, t, n, 1], 1);
    let wq = uniform::<f64>(&[1, d_f], 2);
    let wk = uniform::<f64>(&[1, d_f], 3);
    let mask = path(n).mask().clone();
    let (a, g) = run_adjacency(&x, &wq, &wk, &mask);
    assert_eq!(g.shape(), &[b, t, n, n]);
    for bt in 0..b * t {
        let xs = &x.data()[bt * n..(bt + 1) * n];
        let (att, sym) = adjacency_oracle(xs, wq.data(), wk.data(), mask.data(), n);
        assert_close(&a.data()[bt * n * n..(bt + 1) * n * n], &att, 1e-12, "A_a");
        assert_close(&g.data()[bt * n * n..(bt + 1) * n * n], &sym, 1e-12, "A_g");
    }
}

#[test]
fn dynamic_adjacency_structure_f32() {
    let (b, t, n, d_f) = (3, 4, 7, 5);
    let x = uniform::<f32>(&[b, t, n, 1], 4).map(|v| v * 3.0);
    let wq = uniform::<f32>(&[1, d_f], 5);
    let wk = uniform::<f32>(&[1, d_f], 6);
    let graph = ring(n);
    let mask: Tensor<f32> = graph.mask().cast();
    let mut tape = Tape::<f32>::eval();
    let (xv, q, k) = (tape.constant(x), tape.constant(wq), tape.constant(wk));
    let (a, g) = dynamic_adjacency(&mut tape, xv, q, k, &mask).unwrap();
    let (a, g) = (tape.value(a), tape.value(g));
    for bt in 0..b * t {
        let off = bt * n * n;
        for i in 0..n {
            let row: f32 = a.data()[off + i * n..off + (i + 1) * n].iter().sum();
            assert!((row - 1.0).abs() <= 1e-6, "row sum {row}");
            for j in 0..n {
                let gij = g.data()[off + i * n + j];
                assert_eq!(gij.to_bits(), g.data()[off + j * n + i].to_bits(), "exact symmetry");
                if !graph.is_connected(i, j) {
                    assert_eq!(gij, 0.0, "off-support entry ({i},{j})");
                    assert_eq!(a.data()[off + i * n + j], 0.0);
                } else {
                    assert!(gij > 0.0);
                }
            }
        }
    }
}

#[test]
fn similar_neighbours_get_more_weight() {
    // Node 0 sees nodes 1 and 2; node 1 carries the same reading, node 2 a
    // very different one. With q·k > 0 the similar neighbour wins.
    let n = 3;
    let graph = dwafm::data::PredefinedGraph::from_edges(n, &[(0, 1, 1.0), (0, 2, 1.0)]).unwrap();
    let x = Tensor::from_f64(&[1, 1, n, 1], &[2.0, 2.0, -2.0]).unwrap();
    let w = Tensor::from_f64(&[1, 2], &[1.0, 1.0]).unwrap();
    let (a, _) = run_adjacency(&x, &w, &w, graph.mask());
    assert!(a.data()[1] > a.data()[2]);
    assert!(a.data()[0] > a.data()[2]);
}

#[test]
fn adjacency_varies_with_time() {
    let n = 4;
    let x = uniform::<f64>(&[1, 2, n, 1], 9);
    let w = uniform::<f64>(&[1, 3], 10);
    let (_, g) = run_adjacency(&x, &w, &w, ring(n).mask());
    let d = (0..n * n)
        .map(|k| (g.data()[k] - g.data()[n * n + k]).abs())
        .fold(0.0, f64::max);
    assert!(d > 1e-6, "A_g identical across time steps");
}

#[test]
fn dwgs_embedding_is_adjacency_times_node_table() {
    let (b, t, n, d_f) = (2, 2, 3, 4);
    let a = uniform::<f64>(&[b, t, n, n], 11);
    let node = uniform::<f64>(&[n, d_f], 12);
    let mut tape = Tape::eval();
    let (av, nv) = (tape.constant(a.clone()), tape.constant(node.clone()));
    let e = dwgs_embedding(&mut tape, av, nv).unwrap();
    let e = tape.value(e);
    assert_eq!(e.shape(), &[b, t, n, d_f]);
    for bt in 0..b * t {
        for i in 0..n {
            for f in 0..d_f {
                let want: f64 = (0..n).map(|j| a.data()[bt * n * n + i * n + j] * node.data()[j * d_f + f]).sum();
                let got = e.data()[((bt * n) + i) * d_f + f];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn temporal_embedding_is_identical_across_nodes() {
    let (b, t, n, d_f, nd) = (2, 3, 4, 5, 24);
    let tod_table = uniform::<f64>(&[nd, d_f], 13);
    let dow_table = uniform::<f64>(&[7, d_f], 14);
    let tod: Vec<usize> = vec![0, 1, 2, 22, 23, 0];
    let dow: Vec<usize> = vec![6, 6, 6, 0, 0, 1];
    let mut tape = Tape::eval();
    let (tv, dv) = (tape.constant(tod_table.clone()), tape.constant(dow_table.clone()));
    let (ed, ew) = temporal_embedding(&mut tape, tv, dv, &tod, &dow, [b, t, n]).unwrap();
    let (ed, ew) = (tape.value(ed), tape.value(ew));
    assert_eq!(ed.shape(), &[b, t, n, d_f]);
    for bt in 0..b * t {
        for i in 0..n {
            let at = |e: &Tensor<f64>| e.data()[(bt * n + i) * d_f..(bt * n + i + 1) * d_f].to_vec();
            assert_eq!(at(ed), tod_table.data()[tod[bt] * d_f..(tod[bt] + 1) * d_f]);
            assert_eq!(at(ew), dow_table.data()[dow[bt] * d_f..(dow[bt] + 1) * d_f]);
        }
    }
}

#[test]
fn embedding_width_follows_variant() {
    for v in Variant::ALL {
        let cfg = config(v, 4, 5, 2, 3);
        let m = model::<f64>(cfg.clone(), &ring(4), 0);
        let bt = batch::<f64>(&cfg, 2, 0);
        let mut tape = Tape::eval();
        let out = m.embedding.forward(&mut tape, &m.store, &bt).unwrap();
        assert_eq!(tape.shape(out.z), &[2, 5, 4, cfg.d_h()], "{}", v.name());
        assert_eq!(cfg.d_h(), 3 * v.width_factor());
        assert_eq!(out.a_g.is_some(), v.has_graph_embedding(), "{}", v.name());
    }
}

#[test]
fn feature_embedding_leads_the_concatenation() {
    // The first d_f channels are x·W_f + b_f.
    let cfg = config(Variant::Full, 3, 4, 2, 2);
    let m = model::<f64>(cfg.clone(), &ring(3), 1);
    let bt = batch::<f64>(&cfg, 1, 1);
    let mut tape = Tape::eval();
    let z = m.embedding.forward(&mut tape, &m.store, &bt).unwrap().z;
    let z = tape.value(z);
    let w = m.store.get(m.store.find("embed.feat.w").unwrap()).value.clone();
    let b = m.store.get(m.store.find("embed.feat.b").unwrap()).value.clone();
    let d_h = cfg.d_h();
    for (k, &x) in bt.x.data().iter().enumerate() {
        for f in 0..2 {
            let want = x * w.data()[f] + b.data()[f];
            assert!((z.data()[k * d_h + f] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn no_ag_uses_row_normalized_static_graph() {
    let n = 5;
    let graph = path(n);
    let cfg = config(Variant::NoAg, n, 3, 2, 2);
    let m = model::<f64>(cfg.clone(), &graph, 2);
    let a = m.adjacency(&batch::<f64>(&cfg, 2, 3)).unwrap().unwrap();
    let norm = graph.row_normalized();
    for chunk in a.data().chunks(n * n) {
        assert_eq!(chunk, norm.data());
    }
    assert!(m.store.find("embed.graph.wq").is_none());
}
