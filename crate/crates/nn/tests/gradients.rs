//! Finite-difference oracles for every differentiable op and for the
//! transformer end to end. Central differences with step 1e-5 on f64 are
//! accurate to roughly 1e-10 for O(1) functions, so the tolerances here
//! leave two orders of headroom.

use hord_nn::gradcheck::{finite_diff, max_rel_err, test_values};
use hord_nn::modules::{sinusoidal_position_encoding, TransformerConfig, TransformerEncoder};
use hord_nn::params::{ParamBinder, ParamStore};
use hord_nn::tape::{TapeOf, TensorRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Tape = TapeOf<f64>;

const FD_STEP: f64 = 1e-5;

/// Check d(scalar_output)/d(x) for a graph built by `build`, where x has the
/// given shape and values. `build` must reduce to a 1x1 tensor.
fn check_input_gradient(
    name: &str,
    rows: usize,
    cols: usize,
    values: &[f64],
    tol: f64,
    build: impl Fn(&mut Tape, TensorRef) -> TensorRef,
) {
    let mut tape = Tape::new();
    let x = tape.leaf(values.to_vec(), rows, cols);
    let out = build(&mut tape, x);
    assert_eq!(
        tape.shape(out),
        (1, 1),
        "{name}: build must produce a scalar"
    );
    tape.backward(out);
    let analytic = tape.grad(x).to_vec();

    let numeric = finite_diff(
        |vals: &[f64]| {
            let mut t = Tape::new();
            let x = t.constant(vals.to_vec(), rows, cols);
            let out = build(&mut t, x);
            t.scalar(out)
        },
        values,
        FD_STEP,
    );
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < tol, "{name}: max rel err {err:.3e} >= {tol:.0e}");
}

/// Values in [-1,1] nudged away from zero so kinked ops (relu, clamp,
/// minimum) are differentiable at every test point.
fn kink_free_values(n: usize, salt: u64) -> Vec<f64> {
    test_values(n, salt)
        .into_iter()
        .map(|v| if v.abs() < 0.15 { v + 0.3 } else { v })
        .collect()
}

#[test]
fn matmul_gradient_wrt_left_factor() {
    // 3x4 by 4x2 with the gradient of sum(output) w.r.t. a; matmul is linear
    // so finite differences are nearly exact.
    let b_vals = test_values(8, 101);
    check_input_gradient("matmul_a", 3, 4, &test_values(12, 100), 1e-6, |t, a| {
        let b = t.constant(b_vals.clone(), 4, 2);
        let y = t.matmul(a, b);
        t.sum_all(y)
    });
}

#[test]
fn matmul_gradient_wrt_right_factor() {
    let a_vals = test_values(12, 102);
    check_input_gradient("matmul_b", 4, 2, &test_values(8, 103), 1e-6, |t, b| {
        let a = t.constant(a_vals.clone(), 3, 4);
        let y = t.matmul(a, b);
        t.sum_all(y)
    });
}

#[test]
fn elementwise_op_gradients() {
    let other = test_values(12, 201);
    check_input_gradient("add", 3, 4, &test_values(12, 200), 1e-6, |t, x| {
        let o = t.constant(other.clone(), 3, 4);
        let y = t.add(x, o);
        t.sum_all(y)
    });
    check_input_gradient("sub", 3, 4, &test_values(12, 202), 1e-6, |t, x| {
        let o = t.constant(other.clone(), 3, 4);
        let y = t.sub(o, x);
        t.sum_all(y)
    });
    check_input_gradient("mul", 3, 4, &test_values(12, 203), 1e-6, |t, x| {
        let o = t.constant(other.clone(), 3, 4);
        let y = t.mul(x, o);
        t.sum_all(y)
    });
    check_input_gradient(
        "scale_add_scalar",
        3,
        4,
        &test_values(12, 204),
        1e-6,
        |t, x| {
            let y = t.scale(x, -1.7);
            let y = t.add_scalar(y, 0.3);
            t.sum_all(y)
        },
    );
    check_input_gradient("square", 3, 4, &test_values(12, 205), 1e-6, |t, x| {
        let y = t.square(x);
        t.sum_all(y)
    });
    check_input_gradient("exp", 3, 4, &test_values(12, 206), 1e-4, |t, x| {
        let y = t.exp(x);
        t.sum_all(y)
    });
}

#[test]
fn kinked_op_gradients() {
    check_input_gradient("relu", 3, 4, &kink_free_values(12, 300), 1e-6, |t, x| {
        let y = t.relu(x);
        t.sum_all(y)
    });
    // Clamp bounds chosen off the test lattice so no input sits on a kink.
    check_input_gradient("clamp", 3, 4, &kink_free_values(12, 301), 1e-6, |t, x| {
        let y = t.clamp(x, -0.633, 0.611);
        t.sum_all(y)
    });
    let other = test_values(12, 303);
    check_input_gradient("minimum", 3, 4, &kink_free_values(12, 302), 1e-6, |t, x| {
        let o = t.constant(other.clone(), 3, 4);
        let y = t.minimum(x, o);
        t.sum_all(y)
    });
}

#[test]
fn structural_op_gradients() {
    check_input_gradient(
        "add_row_broadcast_row",
        1,
        4,
        &test_values(4, 400),
        1e-6,
        |t, row| {
            let a = t.constant(test_values(12, 401), 3, 4);
            let y = t.add_row_broadcast(a, row);
            t.sum_all(y)
        },
    );
    check_input_gradient("slice_concat", 2, 6, &test_values(12, 402), 1e-6, |t, x| {
        let left = t.slice_cols(x, 0, 2);
        let right = t.slice_cols(x, 2, 4);
        let back = t.concat_cols(&[right, left]);
        let sq = t.square(back);
        t.sum_all(sq)
    });
    check_input_gradient("sum_rows", 3, 4, &test_values(12, 403), 1e-6, |t, x| {
        let y = t.sum_rows(x);
        let sq = t.square(y);
        t.sum_all(sq)
    });
    check_input_gradient("mean_all", 3, 4, &test_values(12, 404), 1e-6, |t, x| {
        let sq = t.square(x);
        t.mean_all(sq)
    });
    check_input_gradient(
        "mean_row_blocks",
        6,
        2,
        &test_values(12, 405),
        1e-6,
        |t, x| {
            let m = t.mean_row_blocks(x, 3);
            let sq = t.square(m);
            t.sum_all(sq)
        },
    );
    check_input_gradient("tile_rows", 2, 3, &test_values(6, 406), 1e-6, |t, x| {
        let tiled = t.tile_rows(x, 4);
        let w = t.constant(test_values(24, 407), 8, 3);
        let y = t.mul(tiled, w);
        t.sum_all(y)
    });
    check_input_gradient(
        "stack_interleaved",
        2,
        3,
        &test_values(6, 408),
        1e-5,
        |t, x| {
            let other = t.constant(test_values(6, 409), 2, 3);
            let s = t.stack_interleaved(&[x, other, x]);
            let sq = t.square(s);
            t.sum_all(sq)
        },
    );
}

#[test]
fn softmax_gradient() {
    check_input_gradient("softmax_rows", 3, 5, &test_values(15, 500), 1e-4, |t, x| {
        let p = t.softmax_rows(x);
        let w = t.constant(test_values(15, 501), 3, 5);
        let y = t.mul(p, w);
        t.sum_all(y)
    });
}

#[test]
fn layer_norm_gradients() {
    let gain = test_values(6, 601)
        .iter()
        .map(|v| 1.0 + 0.3 * v)
        .collect::<Vec<_>>();
    let bias = test_values(6, 602);
    check_input_gradient("layer_norm_x", 4, 6, &test_values(24, 600), 1e-4, |t, x| {
        let g = t.constant(gain.clone(), 1, 6);
        let b = t.constant(bias.clone(), 1, 6);
        let y = t.layer_norm(x, g, b, 1e-5);
        let w = t.constant(test_values(24, 603), 4, 6);
        let y = t.mul(y, w);
        t.sum_all(y)
    });
    let x_vals = test_values(24, 604);
    check_input_gradient("layer_norm_gain", 1, 6, &gain, 1e-4, |t, g| {
        let x = t.constant(x_vals.clone(), 4, 6);
        let b = t.constant(bias.clone(), 1, 6);
        let y = t.layer_norm(x, g, b, 1e-5);
        let w = t.constant(test_values(24, 605), 4, 6);
        let y = t.mul(y, w);
        t.sum_all(y)
    });
    check_input_gradient("layer_norm_bias", 1, 6, &bias, 1e-4, |t, b| {
        let x = t.constant(x_vals.clone(), 4, 6);
        let g = t.constant(gain.clone(), 1, 6);
        let y = t.layer_norm(x, g, b, 1e-5);
        t.sum_all(y)
    });
}

#[test]
fn batched_attention_gradients() {
    // Batch of 2, two heads, Lq=2, Lk=3, dim 4, with the middle key of the
    // second sample masked out.
    let batch = 2;
    let (lq, lk, d, heads) = (2, 3, 4, 2);
    let q_vals = test_values(batch * lq * d, 700);
    let k_vals = test_values(batch * lk * d, 701);
    let v_vals = test_values(batch * lk * d, 702);
    let mask_vals = vec![0.0, 0.0, 0.0, 0.0, -1e30, 0.0];
    let weights = test_values(batch * lq * d, 703);

    let with_inputs = |t: &mut Tape, q: TensorRef, k: TensorRef, v: TensorRef| {
        let mask = t.constant(mask_vals.clone(), batch * lk, 1);
        let out = t.batched_attention(q, k, v, batch, heads, Some(mask));
        let w = t.constant(weights.clone(), batch * lq, d);
        let y = t.mul(out, w);
        t.sum_all(y)
    };

    check_input_gradient("attention_q", batch * lq, d, &q_vals, 1e-4, |t, q| {
        let k = t.constant(k_vals.clone(), batch * lk, d);
        let v = t.constant(v_vals.clone(), batch * lk, d);
        with_inputs(t, q, k, v)
    });
    check_input_gradient("attention_k", batch * lk, d, &k_vals, 1e-4, |t, k| {
        let q = t.constant(q_vals.clone(), batch * lq, d);
        let v = t.constant(v_vals.clone(), batch * lk, d);
        with_inputs(t, q, k, v)
    });
    check_input_gradient("attention_v", batch * lk, d, &v_vals, 1e-4, |t, v| {
        let q = t.constant(q_vals.clone(), batch * lq, d);
        let k = t.constant(k_vals.clone(), batch * lk, d);
        with_inputs(t, q, k, v)
    });
}

#[test]
fn encoder_end_to_end_parameter_gradients() {
    // Gradient of sum(encoder(x)) w.r.t. three individual parameter entries
    // from different structural roles, checked by perturbing the store.
    let cfg = TransformerConfig {
        num_layers: 2,
        num_heads: 2,
        model_dim: 8,
        ff_dim: 16,
        ..TransformerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store: ParamStore<f64> = ParamStore::new();
    let enc = TransformerEncoder::new(&mut store, &mut rng, "enc", cfg);
    let l = 3;
    let mut x_vals = test_values(l * 8, 800);
    let pe = sinusoidal_position_encoding(l, 8);
    for (x, p) in x_vals.iter_mut().zip(&pe) {
        *x += 0.1 * p;
    }

    let loss_given = |s: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let x = tape.constant(x_vals.clone(), l, 8);
        let y = enc.forward(&mut tape, &mut binder, s, x, 1);
        let out = tape.sum_all(y);
        (tape, binder, out)
    };

    let (mut tape, binder, loss) = loss_given(&store);
    tape.backward(loss);
    let grads = binder.collect_grads(&tape);

    // One probe each from an attention projection, an FF weight, and a layer
    // norm gain, resolved against the names actually present in the store.
    let names: Vec<String> = store.ids().map(|id| store.name(id).to_string()).collect();
    let resolve = |frag: &str| {
        names
            .iter()
            .find(|n| n.contains(frag))
            .unwrap_or_else(|| panic!("no parameter matching {frag}; have {names:?}"))
            .clone()
    };
    let targets = [
        (resolve("layer0/attn/wq/w"), 5usize),
        (resolve("layer1/ff1/w"), 17usize),
        (resolve("layer0/ln2/gain"), 3usize),
    ];

    for (name, idx) in targets {
        let id = store.lookup(&name).unwrap();
        let analytic = grads
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, g)| g[idx])
            .unwrap();
        let orig = store.get(id).values[idx];
        let probe = |v: f64| {
            let mut s2 = store.clone();
            s2.get_mut(id).values[idx] = v;
            let (t, _, out) = loss_given(&s2);
            t.scalar(out)
        };
        let numeric = (probe(orig + FD_STEP) - probe(orig - FD_STEP)) / (2.0 * FD_STEP);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(
            err < 1e-4,
            "{name}[{idx}]: analytic {analytic:.6e} vs fd {numeric:.6e} (rel {err:.2e})"
        );
    }
}
