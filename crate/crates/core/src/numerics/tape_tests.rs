use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::numerics::gradcheck::check_inputs;
use crate::numerics::{ParamStore, Tape, Tensor};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
}

/// Weighted sum with fixed random weights, so every output entry matters.
fn probe(tape: &mut Tape<f64>, y: crate::numerics::Var, seed: u64) -> crate::Result<crate::numerics::Var> {
    let w = random(tape.shape(y), seed);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn assert_passes(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[crate::numerics::Var]) -> crate::Result<crate::numerics::Var>) {
    for r in check_inputs(inputs, H, f).unwrap() {
        assert!(r.max_rel_error <= TOL, "input {} rel err {}", r.input, r.max_rel_error);
    }
}

#[test]
fn linear_and_quadratic_gradients() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap());
    let x = Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
    let mut tape = Tape::eval();
    let wv = tape.param(&store, w);
    let xv = tape.constant(x.clone());
    let p = tape.mul(wv, xv).unwrap();
    let loss = tape.sum(p);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(wv).unwrap(), &x);

    let mut tape = Tape::eval();
    let w = tape.input(Tensor::scalar(1.0));
    let d = tape.shift(w, -3.0);
    let sq = tape.square(d);
    let loss = tape.sum(sq);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(w).unwrap().data(), &[-4.0]);
}

#[test]
fn repeated_backward_accumulates() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::scalar(2.0));
    for _ in 0..2 {
        let mut tape = Tape::eval();
        let w = tape.param(&store, id);
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&g, &mut store);
    }
    assert_eq!(store.get(id).grad.data(), &[8.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f64>::eval();
    let x = tape.input(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn matmul_gradients_all_broadcast_modes() {
    for (sa, sb) in [
        (vec![3, 4], vec![4, 2]),
        (vec![2, 3, 4], vec![4, 2]),
        (vec![3, 4], vec![2, 4, 2]),
        (vec![2, 3, 4], vec![2, 4, 2]),
    ] {
        assert_passes(&[random(&sa, 1), random(&sb, 2)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            probe(t, y, 3)
        });
    }
}

#[test]
fn elementwise_gradients() {
    let a = random(&[2, 5], 4);
    let b = random(&[2, 5], 5);
    assert_passes(&[a.clone(), b.clone()], |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[1])?;
        let m = t.mul(d, v[1])?;
        let g = t.gelu(m);
        let r = t.relu(g);
        let sc = t.scale(r, 1.7);
        let ab = t.abs(sc);
        probe(t, ab, 6)
    });
    let bias = random(&[5], 7);
    assert_passes(&[a, bias], |t, v| {
        let y = t.add_bias(v[0], v[1])?;
        probe(t, y, 8)
    });
}

#[test]
fn softmax_gradients_masked_and_unmasked() {
    let logits = random(&[2, 3, 4], 9);
    let mask = Tensor::from_f64(
        &[3, 4],
        &[1., 0., 1., 1., 0., 1., 0., 0., 1., 1., 1., 1.],
    )
    .unwrap();
    assert_passes(&[logits.clone()], |t, v| {
        let y = t.softmax(v[0], Some(&mask))?;
        probe(t, y, 10)
    });
    assert_passes(&[logits], |t, v| {
        let y = t.softmax(v[0], None)?;
        probe(t, y, 11)
    });
}

#[test]
fn layer_norm_gradients() {
    assert_passes(&[random(&[3, 6], 12), random(&[6], 13), random(&[6], 14)], |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
        probe(t, y, 15)
    });
}

#[test]
fn conv1d_gradients_with_and_without_padding() {
    for (k, pad) in [(1, 0), (3, 0), (3, 2)] {
        assert_passes(&[random(&[2, 3, 5], 16), random(&[4, 3, k], 17), random(&[4], 18)], |t, v| {
            let y = t.conv1d(v[0], v[1], v[2], pad)?;
            probe(t, y, 19)
        });
    }
}

#[test]
fn shape_op_gradients() {
    let a = random(&[2, 3, 4], 20);
    let b = random(&[2, 3, 2], 21);
    assert_passes(&[a.clone(), b], |t, v| {
        let c = t.concat(&[v[0], v[1]])?;
        let p = t.permute(c, &[2, 0, 1])?;
        let r = t.reshape(p, &[6, 6])?;
        let tr = t.transpose_last(r)?;
        probe(t, tr, 22)
    });
    assert_passes(&[random(&[3, 2], 23)], |t, v| {
        let g = t.gather_rows(v[0], &[2, 0, 2, 1], &[2, 2])?;
        let b = t.broadcast_leading(g, 3)?;
        probe(t, b, 24)
    });
}

#[test]
fn fft_gradients_both_parities() {
    for len in [6usize, 7] {
        assert_passes(&[random(&[2, len, 3], 25)], |t, v| {
            let (re, im) = t.rfft(v[0], 1)?;
            let a = probe(t, re, 26)?;
            let b = probe(t, im, 27)?;
            t.add(a, b)
        });
        let bins = len / 2 + 1;
        assert_passes(&[random(&[2, bins, 3], 28), random(&[2, bins, 3], 29)], |t, v| {
            let y = t.irfft(v[0], v[1], 1, len)?;
            probe(t, y, 30)
        });
    }
}

#[test]
fn dropout_gradient_uses_the_same_mask() {
    let mut tape = Tape::<f64>::training_seeded(5);
    let x = tape.input(Tensor::ones(&[50]));
    let y = tape.dropout(x, 0.3).unwrap();
    let loss = tape.sum(y);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap(), tape.value(y));
    let mut eval = Tape::<f64>::eval();
    let x = eval.input(Tensor::ones(&[5]));
    assert_eq!(eval.dropout(x, 0.3).unwrap(), x);
}

#[test]
fn gather_rejects_out_of_range() {
    let mut tape = Tape::<f64>::eval();
    let t = tape.input(Tensor::zeros(&[3, 2]));
    assert!(matches!(
        tape.gather_rows(t, &[3], &[1]),
        Err(Error::IndexOutOfRange { index: 3, rows: 3 })
    ));
}
