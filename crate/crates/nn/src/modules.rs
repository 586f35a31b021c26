//! Neural building blocks on top of the tape: linear layers, layer norm,
//! multi-head attention, a pre-norm transformer encoder, and plain MLPs.
//!
//! Modules own `ParamId`s, not values; a forward pass binds parameters onto
//! the caller's tape through a `ParamBinder`. Batch handling is uniform:
//! token tensors are (batch * seq_len) x dim, sample-major.

use crate::params::{Init, ParamBinder, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{TapeOf, TensorRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            num_layers: 2,
            num_heads: 4,
            model_dim: 64,
            ff_dim: 128,
            dropout: 0.0,
            activation: Activation::Relu,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.model_dim == 0 || self.num_heads == 0 || self.num_layers == 0 {
            return Err("transformer dims must be positive".into());
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            ));
        }
        if self.dropout != 0.0 {
            return Err("dropout is fixed at 0".into());
        }
        Ok(())
    }
}

/// y = x W + b, with W stored input-major (in_dim x out_dim).
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        Self::with_scale(store, rng, name, in_dim, out_dim, 1.0)
    }

    /// `scale` shrinks the weight init; heads that should start near zero
    /// pass a small value.
    pub fn with_scale<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        scale: f64,
    ) -> Self {
        let init = if scale == 1.0 {
            Init::UniformFanIn
        } else {
            Init::UniformFanInScaled(scale)
        };
        let w = store.add(&format!("{name}/w"), in_dim, out_dim, init, rng);
        let b = store.add(&format!("{name}/b"), 1, out_dim, Init::Zeros, rng);
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut TapeOf<S>,
        binder: &mut ParamBinder,
        store: &ParamStore<S>,
        x: TensorRef,
    ) -> TensorRef {
        let w = binder.bind(tape, store, self.w);
        let b = binder.bind(tape, store, self.b);
        let xw = tape.matmul(x, w);
        tape.add_row_broadcast(xw, b)
    }
}

pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        dim: usize,
    ) -> Self {
        let gain = store.add(&format!("{name}/gain"), 1, dim, Init::Ones, rng);
        let bias = store.add(&format!("{name}/bias"), 1, dim, Init::Zeros, rng);
        LayerNorm { gain, bias, dim }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut TapeOf<S>,
        binder: &mut ParamBinder,
        store: &ParamStore<S>,
        x: TensorRef,
    ) -> TensorRef {
        let gain = binder.bind(tape, store, self.gain);
        let bias = binder.bind(tape, store, self.bias);
        tape.layer_norm(x, gain, bias, S::of(LAYER_NORM_EPS))
    }
}

/// Multi-head attention with learned query/key/value/output projections.
/// Queries may come from a different sequence than keys and values
/// (cross-attention); self-attention passes the same tensor for both.
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Self {
        assert!(
            dim % heads == 0,
            "attention dim {dim} not divisible by {heads} heads"
        );
        MultiHeadAttention {
            wq: Linear::new(store, rng, &format!("{name}/wq"), dim, dim),
            wk: Linear::new(store, rng, &format!("{name}/wk"), dim, dim),
            wv: Linear::new(store, rng, &format!("{name}/wv"), dim, dim),
            wo: Linear::new(store, rng, &format!("{name}/wo"), dim, dim),
            heads,
            dim,
        }
    }

    /// q_in is (batch*Lq) x dim, kv_in is (batch*Lk) x dim. `mask` is an
    /// optional (batch*Lk) x 1 additive logit mask (constant leaf).
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut TapeOf<S>,
        binder: &mut ParamBinder,
        store: &ParamStore<S>,
        q_in: TensorRef,
        kv_in: TensorRef,
        batch: usize,
        mask: Option<TensorRef>,
    ) -> TensorRef {
        let q = self.wq.forward(tape, binder, store, q_in);
        let k = self.wk.forward(tape, binder, store, kv_in);
        let v = self.wv.forward(tape, binder, store, kv_in);
        let attn = tape.batched_attention(q, k, v, batch, self.heads, mask);
        self.wo.forward(tape, binder, store, attn)
    }
}

struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Pre-norm transformer encoder: per layer,
/// x += attn(ln1(x)); x += ff(ln2(x)). Output shape equals input shape.
pub struct TransformerEncoder {
    layers: Vec<EncoderLayer>,
    pub cfg: TransformerConfig,
}

impl TransformerEncoder {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        cfg: TransformerConfig,
    ) -> Self {
        cfg.validate().expect("invalid transformer config");
        let layers = (0..cfg.num_layers)
            .map(|i| {
                let base = format!("{name}/layer{i}");
                EncoderLayer {
                    ln1: LayerNorm::new(store, rng, &format!("{base}/ln1"), cfg.model_dim),
                    attn: MultiHeadAttention::new(
                        store,
                        rng,
                        &format!("{base}/attn"),
                        cfg.model_dim,
                        cfg.num_heads,
                    ),
                    ln2: LayerNorm::new(store, rng, &format!("{base}/ln2"), cfg.model_dim),
                    ff1: Linear::new(
                        store,
                        rng,
                        &format!("{base}/ff1"),
                        cfg.model_dim,
                        cfg.ff_dim,
                    ),
                    ff2: Linear::new(
                        store,
                        rng,
                        &format!("{base}/ff2"),
                        cfg.ff_dim,
                        cfg.model_dim,
                    ),
                }
            })
            .collect();
        TransformerEncoder { layers, cfg }
    }

    /// tokens is (batch*L) x model_dim, sample-major; L must be at least 1.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut TapeOf<S>,
        binder: &mut ParamBinder,
        store: &ParamStore<S>,
        tokens: TensorRef,
        batch: usize,
    ) -> TensorRef {
        let (rows, d) = tape.shape(tokens);
        assert_eq!(
            d, self.cfg.model_dim,
            "token dim {d} != model_dim {}",
            self.cfg.model_dim
        );
        assert!(
            rows >= batch && rows % batch == 0,
            "token rows {rows} not divisible by batch {batch}"
        );
        let mut x = tokens;
        for layer in &self.layers {
            let normed = layer.ln1.forward(tape, binder, store, x);
            let attn = layer
                .attn
                .forward(tape, binder, store, normed, normed, batch, None);
            x = tape.add(x, attn);
            let normed2 = layer.ln2.forward(tape, binder, store, x);
            let h = layer.ff1.forward(tape, binder, store, normed2);
            let h = tape.relu(h);
            let h = layer.ff2.forward(tape, binder, store, h);
            x = tape.add(x, h);
        }
        x
    }
}

/// Plain MLP with ReLU between layers and a linear final layer.
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists layer widths input-first, e.g. [in, h1, h2, out].
    /// `head_scale` shrinks the final layer's weight init.
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        dims: &[usize],
        head_scale: f64,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let scale = if i + 2 == dims.len() { head_scale } else { 1.0 };
                Linear::with_scale(
                    store,
                    rng,
                    &format!("{name}/fc{i}"),
                    pair[0],
                    pair[1],
                    scale,
                )
            })
            .collect();
        Mlp { layers }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut TapeOf<S>,
        binder: &mut ParamBinder,
        store: &ParamStore<S>,
        x: TensorRef,
    ) -> TensorRef {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, binder, store, h);
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }
}

/// Sinusoidal position encoding rows: PE[p, 2i] = sin(p / 10000^(2i/d)),
/// PE[p, 2i+1] = cos(same). Returned row-major, `len` x `dim`.
pub fn sinusoidal_position_encoding(len: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * dim];
    for p in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let rate = (10000.0f64).powf(2.0 * pair / dim as f64);
            let angle = p as f64 / rate;
            pe[p * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type Tape = TapeOf<f64>;

    fn set_identity(store: &mut ParamStore<f64>, id: ParamId) {
        let t = store.get_mut(id);
        assert_eq!(t.rows, t.cols);
        let n = t.cols;
        t.values.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
    }

    fn identity_mha(dim: usize, heads: usize) -> (ParamStore<f64>, MultiHeadAttention) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", dim, heads);
        for lin in [&mha.wq, &mha.wk, &mha.wv, &mha.wo] {
            set_identity(&mut store, lin.w);
        }
        (store, mha)
    }

    #[test]
    fn single_key_returns_its_value_row() {
        let (store, mha) = identity_mha(4, 2);
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let q = tape.constant(vec![0.3, -0.7, 0.2, 0.9], 1, 4);
        let kv = tape.constant(vec![1.5, -2.0, 0.25, 4.0], 1, 4);
        let out = mha.forward(&mut tape, &mut binder, &store, q, kv, 1, None);
        let got = tape.values(out);
        for (g, want) in got.iter().zip([1.5, -2.0, 0.25, 4.0]) {
            assert!((g - want).abs() < 1e-12, "got {got:?}");
        }
    }

    #[test]
    fn uniform_logits_average_value_rows() {
        let (store, mha) = identity_mha(4, 2);
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        // Zero queries make every logit zero, so attention is uniform.
        let q = tape.constant(vec![0.0; 4], 1, 4);
        let kv = tape.constant(vec![1.0, 2.0, 3.0, 4.0, 3.0, 6.0, 5.0, 0.0], 2, 4);
        let out = mha.forward(&mut tape, &mut binder, &store, q, kv, 1, None);
        let got = tape.values(out);
        for (g, want) in got.iter().zip([2.0, 4.0, 4.0, 2.0]) {
            assert!((g - want).abs() < 1e-12, "got {got:?}");
        }
    }

    #[test]
    fn encoder_preserves_shape() {
        let cfg = TransformerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store: ParamStore<f64> = ParamStore::new();
        let enc = TransformerEncoder::new(&mut store, &mut rng, "enc", cfg);
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let vals = crate::gradcheck::test_values(10 * 64, 5);
        let x = tape.constant(vals, 10, 64);
        let y = enc.forward(&mut tape, &mut binder, &store, x, 1);
        assert_eq!(tape.shape(y), (10, 64));
    }

    #[test]
    fn zero_weights_make_encoder_an_identity() {
        let cfg = TransformerConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 8,
            ff_dim: 16,
            ..TransformerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store: ParamStore<f64> = ParamStore::new();
        let enc = TransformerEncoder::new(&mut store, &mut rng, "enc", cfg);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let vals = crate::gradcheck::test_values(8, 9);
        let x = tape.constant(vals.clone(), 1, 8);
        let y = enc.forward(&mut tape, &mut binder, &store, x, 1);
        assert_eq!(tape.values(y), vals.as_slice());
    }

    #[test]
    fn batched_encoder_matches_per_sample_runs() {
        // Two samples pushed through one batched call must equal two
        // independent single-sample calls bit for bit.
        let cfg = TransformerConfig {
            num_layers: 1,
            num_heads: 2,
            model_dim: 8,
            ff_dim: 16,
            ..TransformerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store: ParamStore<f64> = ParamStore::new();
        let enc = TransformerEncoder::new(&mut store, &mut rng, "enc", cfg);
        let l = 3;
        let a = crate::gradcheck::test_values(l * 8, 21);
        let b = crate::gradcheck::test_values(l * 8, 22);

        let single = |vals: &[f64]| {
            let mut tape = Tape::new();
            let mut binder = ParamBinder::new();
            let x = tape.constant(vals.to_vec(), l, 8);
            let y = enc.forward(&mut tape, &mut binder, &store, x, 1);
            tape.values(y).to_vec()
        };
        let mut both = a.clone();
        both.extend_from_slice(&b);
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let x = tape.constant(both, 2 * l, 8);
        let y = enc.forward(&mut tape, &mut binder, &store, x, 2);
        let batched = tape.values(y);

        let ya = single(&a);
        let yb = single(&b);
        for (got, want) in batched[..l * 8].iter().zip(&ya) {
            assert_eq!(got.to_bits(), want.to_bits());
        }
        for (got, want) in batched[l * 8..].iter().zip(&yb) {
            assert_eq!(got.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn position_encoding_first_row_alternates() {
        let pe = sinusoidal_position_encoding(3, 4);
        // Position 0: sin(0)=0, cos(0)=1 alternating.
        assert_eq!(&pe[0..4], &[0.0, 1.0, 0.0, 1.0]);
        // Position 1, dim 0: sin(1).
        assert!((pe[4] - 1.0f64.sin()).abs() < 1e-15);
        // Rows differ so token order is visible to attention.
        assert_ne!(&pe[4..8], &pe[8..12]);
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut cfg = TransformerConfig::default();
        cfg.model_dim = 65;
        assert!(cfg.validate().is_err());
        let mut cfg = TransformerConfig::default();
        cfg.dropout = 0.1;
        assert!(cfg.validate().is_err());
        assert!(TransformerConfig::default().validate().is_ok());
    }
}
