//! Wengert-tape reverse-mode autodiff over row-major 2-D tensors.
//!
//! Every op appends a node holding its output values, its backward rule, and
//! (when any input needs gradients) a same-shape gradient buffer. Nodes only
//! reference earlier nodes, so replaying in reverse index order is reverse
//! topological order, and `+=` accumulation credits each use of a tensor
//! exactly once. Every op output is checked finite; NaN or Inf aborts.
//!
//! Shape violations are programmer errors and panic with a dimension message.
//! All loops are fixed-order and single-threaded, so identical inputs and
//! parameters produce bitwise-identical outputs and gradients.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

enum Op<S> {
    Leaf,
    Matmul {
        a: TensorRef,
        b: TensorRef,
    },
    Add {
        a: TensorRef,
        b: TensorRef,
    },
    Sub {
        a: TensorRef,
        b: TensorRef,
    },
    Mul {
        a: TensorRef,
        b: TensorRef,
    },
    Scale {
        a: TensorRef,
        c: S,
    },
    AddScalar {
        a: TensorRef,
    },
    Relu {
        a: TensorRef,
    },
    Exp {
        a: TensorRef,
    },
    Square {
        a: TensorRef,
    },
    Clamp {
        a: TensorRef,
        lo: S,
        hi: S,
    },
    Minimum {
        a: TensorRef,
        b: TensorRef,
    },
    AddRowBroadcast {
        a: TensorRef,
        row: TensorRef,
    },
    SliceCols {
        a: TensorRef,
        start: usize,
    },
    ConcatCols {
        parts: Vec<TensorRef>,
    },
    SumRows {
        a: TensorRef,
    },
    SumAll {
        a: TensorRef,
    },
    MeanAll {
        a: TensorRef,
    },
    MeanRowBlocks {
        a: TensorRef,
        block: usize,
    },
    TileRows {
        a: TensorRef,
        times: usize,
    },
    StackInterleaved {
        parts: Vec<TensorRef>,
    },
    SoftmaxRows {
        a: TensorRef,
    },
    LayerNorm {
        x: TensorRef,
        gain: TensorRef,
        bias: TensorRef,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    BatchedAttention {
        q: TensorRef,
        k: TensorRef,
        v: TensorRef,
        batch: usize,
        heads: usize,
        probs: Vec<S>,
    },
}

struct Node<S> {
    rows: usize,
    cols: usize,
    values: Vec<S>,
    grad: Vec<S>,
    needs_grad: bool,
    op: Op<S>,
}

pub struct TapeOf<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for TapeOf<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> TapeOf<S> {
    pub fn new() -> Self {
        TapeOf { nodes: Vec::new() }
    }

    /// Drop all nodes (and with them all gradients), keeping the allocation.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, r: TensorRef) -> (usize, usize) {
        let n = &self.nodes[r.0];
        (n.rows, n.cols)
    }

    pub fn values(&self, r: TensorRef) -> &[S] {
        &self.nodes[r.0].values
    }

    pub fn grad(&self, r: TensorRef) -> &[S] {
        let n = &self.nodes[r.0];
        assert!(n.needs_grad, "tensor was recorded without gradients");
        &n.grad
    }

    /// Value of a 1x1 tensor.
    pub fn scalar(&self, r: TensorRef) -> S {
        let n = &self.nodes[r.0];
        assert_eq!((n.rows, n.cols), (1, 1), "scalar() needs a 1x1 tensor");
        n.values[0]
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        values: Vec<S>,
        needs_grad: bool,
        op: Op<S>,
    ) -> TensorRef {
        assert_eq!(rows * cols, values.len(), "shape/value length mismatch");
        for (i, v) in values.iter().enumerate() {
            assert!(
                v.is_finite(),
                "non-finite value {v} at flat index {i} in op output ({rows}x{cols})"
            );
        }
        let grad = if needs_grad {
            vec![S::zero(); values.len()]
        } else {
            Vec::new()
        };
        self.nodes.push(Node {
            rows,
            cols,
            values,
            grad,
            needs_grad,
            op,
        });
        TensorRef(self.nodes.len() - 1)
    }

    fn needs(&self, r: TensorRef) -> bool {
        self.nodes[r.0].needs_grad
    }

    /// Leaf that participates in gradients (parameters).
    pub fn leaf(&mut self, values: Vec<S>, rows: usize, cols: usize) -> TensorRef {
        self.push(rows, cols, values, true, Op::Leaf)
    }

    /// Leaf excluded from gradients (inputs, targets, masks).
    pub fn constant(&mut self, values: Vec<S>, rows: usize, cols: usize) -> TensorRef {
        self.push(rows, cols, values, false, Op::Leaf)
    }

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        assert_eq!(ka, kb, "matmul: inner dims {m}x{ka} . {kb}x{n}");
        let mut out = vec![S::zero(); m * n];
        matmul_kernel(self.values(a), self.values(b), m, ka, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(m, n, out, ng, Op::Matmul { a, b })
    }

    fn binary_elementwise(
        &mut self,
        a: TensorRef,
        b: TensorRef,
        name: &str,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> TensorRef {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!((ra, ca), (rb, cb), "{name}: {ra}x{ca} vs {rb}x{cb}");
        let out: Vec<S> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(ra, ca, out, ng, op)
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn minimum(&mut self, a: TensorRef, b: TensorRef) -> TensorRef {
        self.binary_elementwise(a, b, "minimum", |x, y| x.min(y), Op::Minimum { a, b })
    }

    fn unary(&mut self, a: TensorRef, f: impl Fn(S) -> S, op: Op<S>) -> TensorRef {
        let (r, c) = self.shape(a);
        let out: Vec<S> = self.values(a).iter().map(|&x| f(x)).collect();
        let ng = self.needs(a);
        self.push(r, c, out, ng, op)
    }

    pub fn scale(&mut self, a: TensorRef, c: S) -> TensorRef {
        self.unary(a, |x| x * c, Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: TensorRef, c: S) -> TensorRef {
        self.unary(a, |x| x + c, Op::AddScalar { a })
    }

    pub fn relu(&mut self, a: TensorRef) -> TensorRef {
        self.unary(a, |x| x.max(S::zero()), Op::Relu { a })
    }

    pub fn exp(&mut self, a: TensorRef) -> TensorRef {
        self.unary(a, |x| x.exp(), Op::Exp { a })
    }

    pub fn square(&mut self, a: TensorRef) -> TensorRef {
        self.unary(a, |x| x * x, Op::Square { a })
    }

    pub fn clamp(&mut self, a: TensorRef, lo: S, hi: S) -> TensorRef {
        assert!(lo <= hi, "clamp: lo must not exceed hi");
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp { a, lo, hi })
    }

    /// Add a 1xN row to every row of an MxN tensor.
    pub fn add_row_broadcast(&mut self, a: TensorRef, row: TensorRef) -> TensorRef {
        let (m, n) = self.shape(a);
        let (rr, rc) = self.shape(row);
        assert_eq!(
            (rr, rc),
            (1, n),
            "add_row_broadcast: row is {rr}x{rc}, need 1x{n}"
        );
        let av = self.values(a);
        let rv = self.values(row);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(av[i * n + j] + rv[j]);
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(m, n, out, ng, Op::AddRowBroadcast { a, row })
    }

    pub fn slice_cols(&mut self, a: TensorRef, start: usize, len: usize) -> TensorRef {
        let (m, n) = self.shape(a);
        assert!(
            start + len <= n,
            "slice_cols: {start}..{} out of {n}",
            start + len
        );
        let av = self.values(a);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        let ng = self.needs(a);
        self.push(m, len, out, ng, Op::SliceCols { a, start })
    }

    pub fn concat_cols(&mut self, parts: &[TensorRef]) -> TensorRef {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let m = self.shape(parts[0]).0;
        let total: usize = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, m, "concat_cols: row counts differ");
                c
            })
            .sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let (_, c) = self.shape(p);
                let pv = self.values(p);
                out.extend_from_slice(&pv[i * c..(i + 1) * c]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(
            m,
            total,
            out,
            ng,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        )
    }

    /// Row sums: MxN -> Mx1.
    pub fn sum_rows(&mut self, a: TensorRef) -> TensorRef {
        let (m, n) = self.shape(a);
        let av = self.values(a);
        let out: Vec<S> = (0..m)
            .map(|i| av[i * n..(i + 1) * n].iter().copied().sum())
            .collect();
        let ng = self.needs(a);
        self.push(m, 1, out, ng, Op::SumRows { a })
    }

    pub fn sum_all(&mut self, a: TensorRef) -> TensorRef {
        let s: S = self.values(a).iter().copied().sum();
        let ng = self.needs(a);
        self.push(1, 1, vec![s], ng, Op::SumAll { a })
    }

    pub fn mean_all(&mut self, a: TensorRef) -> TensorRef {
        let nvals = self.values(a).len();
        assert!(nvals > 0, "mean_all: empty tensor");
        let s: S = self.values(a).iter().copied().sum();
        let mean = s / S::of(nvals as f64);
        let ng = self.needs(a);
        self.push(1, 1, vec![mean], ng, Op::MeanAll { a })
    }

    /// Mean over consecutive row blocks: (B*block)xN -> BxN.
    pub fn mean_row_blocks(&mut self, a: TensorRef, block: usize) -> TensorRef {
        let (m, n) = self.shape(a);
        assert!(
            block > 0 && m % block == 0,
            "mean_row_blocks: {m} rows not divisible by {block}"
        );
        let batches = m / block;
        let av = self.values(a);
        let inv = S::one() / S::of(block as f64);
        let mut out = vec![S::zero(); batches * n];
        for b in 0..batches {
            for i in 0..block {
                let src = (b * block + i) * n;
                for j in 0..n {
                    out[b * n + j] += av[src + j];
                }
            }
            for j in 0..n {
                out[b * n + j] *= inv;
            }
        }
        let ng = self.needs(a);
        self.push(batches, n, out, ng, Op::MeanRowBlocks { a, block })
    }

    /// Vertically repeat an LxN tensor `times` times -> (times*L)xN.
    pub fn tile_rows(&mut self, a: TensorRef, times: usize) -> TensorRef {
        assert!(times > 0, "tile_rows: times must be positive");
        let (m, n) = self.shape(a);
        let av = self.values(a);
        let mut out = Vec::with_capacity(times * m * n);
        for _ in 0..times {
            out.extend_from_slice(av);
        }
        let ng = self.needs(a);
        self.push(times * m, n, out, ng, Op::TileRows { a, times })
    }

    /// Interleave L tensors of shape BxN into (B*L)xN, sample-major: output
    /// row b*L + i comes from part i, row b.
    pub fn stack_interleaved(&mut self, parts: &[TensorRef]) -> TensorRef {
        assert!(!parts.is_empty(), "stack_interleaved: no parts");
        let (b, n) = self.shape(parts[0]);
        for &p in parts {
            assert_eq!(
                self.shape(p),
                (b, n),
                "stack_interleaved: all parts must be BxN"
            );
        }
        let l = parts.len();
        let mut out = vec![S::zero(); b * l * n];
        for (i, &p) in parts.iter().enumerate() {
            let pv = self.values(p);
            for bi in 0..b {
                let dst = (bi * l + i) * n;
                out[dst..dst + n].copy_from_slice(&pv[bi * n..(bi + 1) * n]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(
            b * l,
            n,
            out,
            ng,
            Op::StackInterleaved {
                parts: parts.to_vec(),
            },
        )
    }

    /// Row-wise softmax with max subtraction; each output row sums to 1.
    pub fn softmax_rows(&mut self, a: TensorRef) -> TensorRef {
        let (m, n) = self.shape(a);
        assert!(n > 0, "softmax_rows: empty rows");
        let av = self.values(a);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            softmax_row(&av[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        let ng = self.needs(a);
        self.push(m, n, out, ng, Op::SoftmaxRows { a })
    }

    /// Per-row layer norm with affine output: y = gain * (x-mean)/sqrt(var+eps) + bias.
    pub fn layer_norm(
        &mut self,
        x: TensorRef,
        gain: TensorRef,
        bias: TensorRef,
        eps: S,
    ) -> TensorRef {
        let (m, d) = self.shape(x);
        assert!(d > 0, "layer_norm: zero feature dim");
        assert!(eps > S::zero(), "layer_norm: eps must be positive");
        assert_eq!(self.shape(gain), (1, d), "layer_norm: gain must be 1x{d}");
        assert_eq!(self.shape(bias), (1, d), "layer_norm: bias must be 1x{d}");
        let xv = self.values(x);
        let gv = self.values(gain);
        let bv = self.values(bias);
        let inv_d = S::one() / S::of(d as f64);
        let mut out = vec![S::zero(); m * d];
        let mut xhat = vec![S::zero(); m * d];
        let mut inv_std = vec![S::zero(); m];
        for i in 0..m {
            let row = &xv[i * d..(i + 1) * d];
            let mean: S = row.iter().copied().sum::<S>() * inv_d;
            let var: S = row
                .iter()
                .map(|&v| {
                    let c = v - mean;
                    c * c
                })
                .sum::<S>()
                * inv_d;
            let r = S::one() / (var + eps).sqrt();
            inv_std[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                out[i * d + j] = gv[j] * h + bv[j];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            m,
            d,
            out,
            ng,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Scaled dot-product attention over a batch of independent samples laid
    /// out as stacked row blocks. q is (B*Lq)xD, k and v are (B*Lk)xD, and D
    /// splits into `heads` equal slices. `mask`, when given, is a (B*Lk)x1
    /// additive logit mask (0 to keep, about -1e30 to exclude) applied to
    /// every query row and head; it never receives gradients. Attention rows
    /// sum to 1 per head. If every key of a sample is masked the weights
    /// degenerate to uniform, so callers must keep at least one slot live.
    pub fn batched_attention(
        &mut self,
        q: TensorRef,
        k: TensorRef,
        v: TensorRef,
        batch: usize,
        heads: usize,
        mask: Option<TensorRef>,
    ) -> TensorRef {
        let (qm, d) = self.shape(q);
        let (km, kd) = self.shape(k);
        let (vm, vd) = self.shape(v);
        assert!(batch > 0, "batched_attention: batch must be positive");
        assert_eq!(d, kd, "batched_attention: q/k dims differ");
        assert_eq!(d, vd, "batched_attention: q/v dims differ");
        assert_eq!(km, vm, "batched_attention: k/v lengths differ");
        assert!(km > 0, "batched_attention: empty context");
        assert!(
            qm % batch == 0 && km % batch == 0,
            "batched_attention: rows not divisible by batch"
        );
        assert!(
            d % heads == 0,
            "batched_attention: dim {d} not divisible by {heads} heads"
        );
        let lq = qm / batch;
        let lk = km / batch;
        assert!(lq > 0 && lk > 0, "batched_attention: empty context");
        if let Some(mr) = mask {
            assert_eq!(
                self.shape(mr),
                (km, 1),
                "batched_attention: mask must be ({km})x1"
            );
            assert!(
                !self.needs(mr),
                "batched_attention: mask must be a constant"
            );
        }
        let dh = d / heads;
        let scale = S::one() / S::of(dh as f64).sqrt();

        let qv = self.values(q);
        let kv = self.values(k);
        let vv = self.values(v);
        let maskv: Option<&[S]> = mask.map(|mr| self.values(mr));

        let mut out = vec![S::zero(); qm * d];
        let mut probs = vec![S::zero(); batch * heads * lq * lk];
        let mut logits = vec![S::zero(); lk];
        for b in 0..batch {
            for h in 0..heads {
                let hoff = h * dh;
                for i in 0..lq {
                    let qrow = &qv[(b * lq + i) * d + hoff..(b * lq + i) * d + hoff + dh];
                    for (j, logit) in logits.iter_mut().enumerate() {
                        let krow = &kv[(b * lk + j) * d + hoff..(b * lk + j) * d + hoff + dh];
                        let mut dot = S::zero();
                        for c in 0..dh {
                            dot += qrow[c] * krow[c];
                        }
                        let mut l = dot * scale;
                        if let Some(mv) = maskv {
                            l += mv[b * lk + j];
                        }
                        *logit = l;
                    }
                    let prow = &mut probs
                        [((b * heads + h) * lq + i) * lk..((b * heads + h) * lq + i + 1) * lk];
                    softmax_row(&logits, prow);
                    let orow = &mut out[(b * lq + i) * d + hoff..(b * lq + i) * d + hoff + dh];
                    for (j, &p) in prow.iter().enumerate() {
                        let vrow = &vv[(b * lk + j) * d + hoff..(b * lk + j) * d + hoff + dh];
                        for c in 0..dh {
                            orow[c] += p * vrow[c];
                        }
                    }
                }
            }
        }
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(
            qm,
            d,
            out,
            ng,
            Op::BatchedAttention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            },
        )
    }

    /// Seed the 1x1 `output` with gradient 1 and replay the tape backward.
    /// Gradients accumulate; call `clear` (or build a fresh tape) between
    /// backward passes.
    pub fn backward(&mut self, output: TensorRef) {
        {
            let n = &mut self.nodes[output.0];
            assert_eq!((n.rows, n.cols), (1, 1), "backward: output must be 1x1");
            assert!(
                n.needs_grad,
                "backward: output does not depend on any gradient leaf"
            );
            n.grad[0] += S::one();
        }
        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backward_node(i);
        }
    }

    fn backward_node(&mut self, i: usize) {
        // Take the node's op and grad out so inputs (strictly earlier nodes)
        // can be borrowed mutably while the rule runs.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let grad = std::mem::take(&mut self.nodes[i].grad);
        let rows = self.nodes[i].rows;
        let cols = self.nodes[i].cols;

        match &op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if self.needs(*a) {
                    // da = g . b^T
                    let bv = self.nodes[b.0].values.clone();
                    let ga = &mut self.nodes[a.0].grad;
                    for ii in 0..m {
                        let grow = &grad[ii * n..(ii + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let mut acc = S::zero();
                            for j in 0..n {
                                acc += grow[j] * brow[j];
                            }
                            ga[ii * k + p] += acc;
                        }
                    }
                }
                if self.needs(*b) {
                    // db = a^T . g
                    let av = self.nodes[a.0].values.clone();
                    let gb = &mut self.nodes[b.0].grad;
                    for ii in 0..m {
                        let grow = &grad[ii * n..(ii + 1) * n];
                        for p in 0..k {
                            let x = av[ii * k + p];
                            let brow = &mut gb[p * n..(p + 1) * n];
                            for j in 0..n {
                                brow[j] += x * grow[j];
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                self.accumulate(*a, &grad, |g, _| g);
                self.accumulate(*b, &grad, |g, _| g);
            }
            Op::Sub { a, b } => {
                self.accumulate(*a, &grad, |g, _| g);
                self.accumulate(*b, &grad, |g, _| -g);
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let bv = self.nodes[b.0].values.clone();
                    self.accumulate(*a, &grad, |g, idx| g * bv[idx]);
                }
                if self.needs(*b) {
                    let av = self.nodes[a.0].values.clone();
                    self.accumulate(*b, &grad, |g, idx| g * av[idx]);
                }
            }
            Op::Minimum { a, b } => {
                // Grad routes to the smaller input; ties go to a.
                let av = self.nodes[a.0].values.clone();
                let bv = self.nodes[b.0].values.clone();
                if self.needs(*a) {
                    self.accumulate(
                        *a,
                        &grad,
                        |g, idx| {
                            if av[idx] <= bv[idx] {
                                g
                            } else {
                                S::zero()
                            }
                        },
                    );
                }
                if self.needs(*b) {
                    self.accumulate(
                        *b,
                        &grad,
                        |g, idx| {
                            if av[idx] <= bv[idx] {
                                S::zero()
                            } else {
                                g
                            }
                        },
                    );
                }
            }
            Op::Scale { a, c } => {
                let c = *c;
                self.accumulate(*a, &grad, |g, _| g * c);
            }
            Op::AddScalar { a } => {
                self.accumulate(*a, &grad, |g, _| g);
            }
            Op::Relu { a } => {
                let xv = self.nodes[a.0].values.clone();
                self.accumulate(
                    *a,
                    &grad,
                    |g, idx| {
                        if xv[idx] > S::zero() {
                            g
                        } else {
                            S::zero()
                        }
                    },
                );
            }
            Op::Exp { a } => {
                let out = self.values_cloned(i);
                self.accumulate(*a, &grad, |g, idx| g * out[idx]);
            }
            Op::Square { a } => {
                let xv = self.nodes[a.0].values.clone();
                let two = S::of(2.0);
                self.accumulate(*a, &grad, |g, idx| g * two * xv[idx]);
            }
            Op::Clamp { a, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                let xv = self.nodes[a.0].values.clone();
                self.accumulate(*a, &grad, |g, idx| {
                    if xv[idx] >= lo && xv[idx] <= hi {
                        g
                    } else {
                        S::zero()
                    }
                });
            }
            Op::AddRowBroadcast { a, row } => {
                let n = cols;
                self.accumulate(*a, &grad, |g, _| g);
                if self.needs(*row) {
                    let gr = &mut self.nodes[row.0].grad;
                    for ii in 0..rows {
                        for j in 0..n {
                            gr[j] += grad[ii * n + j];
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if self.needs(*a) {
                    let (_, an) = self.shape(*a);
                    let ga = &mut self.nodes[a.0].grad;
                    for ii in 0..rows {
                        for j in 0..cols {
                            ga[ii * an + start + j] += grad[ii * cols + j];
                        }
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let (_, pc) = self.shape(p);
                    if self.needs(p) {
                        let gp = &mut self.nodes[p.0].grad;
                        for ii in 0..rows {
                            for j in 0..pc {
                                gp[ii * pc + j] += grad[ii * cols + offset + j];
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::SumRows { a } => {
                if self.needs(*a) {
                    let (_, an) = self.shape(*a);
                    let ga = &mut self.nodes[a.0].grad;
                    for ii in 0..rows {
                        let g = grad[ii];
                        for j in 0..an {
                            ga[ii * an + j] += g;
                        }
                    }
                }
            }
            Op::SumAll { a } => {
                self.broadcast_add(*a, grad[0]);
            }
            Op::MeanAll { a } => {
                let numel = self.nodes[a.0].values.len();
                self.broadcast_add(*a, grad[0] / S::of(numel as f64));
            }
            Op::MeanRowBlocks { a, block } => {
                if self.needs(*a) {
                    let inv = S::one() / S::of(*block as f64);
                    let ga = &mut self.nodes[a.0].grad;
                    for b in 0..rows {
                        for ii in 0..*block {
                            for j in 0..cols {
                                ga[(b * block + ii) * cols + j] += grad[b * cols + j] * inv;
                            }
                        }
                    }
                }
            }
            Op::TileRows { a, times } => {
                if self.needs(*a) {
                    let (am, an) = self.shape(*a);
                    let ga = &mut self.nodes[a.0].grad;
                    for t in 0..*times {
                        for ii in 0..am {
                            for j in 0..an {
                                ga[ii * an + j] += grad[(t * am + ii) * an + j];
                            }
                        }
                    }
                }
            }
            Op::StackInterleaved { parts } => {
                let l = parts.len();
                let b = rows / l;
                for (pi, &p) in parts.iter().enumerate() {
                    if self.needs(p) {
                        let gp = &mut self.nodes[p.0].grad;
                        for bi in 0..b {
                            let src = (bi * l + pi) * cols;
                            for j in 0..cols {
                                gp[bi * cols + j] += grad[src + j];
                            }
                        }
                    }
                }
            }
            Op::SoftmaxRows { a } => {
                if self.needs(*a) {
                    let out = self.values_cloned(i);
                    let ga = &mut self.nodes[a.0].grad;
                    for ii in 0..rows {
                        let prow = &out[ii * cols..(ii + 1) * cols];
                        let grow = &grad[ii * cols..(ii + 1) * cols];
                        let mut dot = S::zero();
                        for j in 0..cols {
                            dot += prow[j] * grow[j];
                        }
                        for j in 0..cols {
                            ga[ii * cols + j] += prow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = cols;
                let gv = self.nodes[gain.0].values.clone();
                if self.needs(*gain) {
                    let gg = &mut self.nodes[gain.0].grad;
                    for ii in 0..rows {
                        for j in 0..d {
                            gg[j] += grad[ii * d + j] * xhat[ii * d + j];
                        }
                    }
                }
                if self.needs(*bias) {
                    let gb = &mut self.nodes[bias.0].grad;
                    for ii in 0..rows {
                        for j in 0..d {
                            gb[j] += grad[ii * d + j];
                        }
                    }
                }
                if self.needs(*x) {
                    let inv_d = S::one() / S::of(d as f64);
                    let gx = &mut self.nodes[x.0].grad;
                    for ii in 0..rows {
                        let mut mean_h = S::zero();
                        let mut mean_hx = S::zero();
                        for j in 0..d {
                            let h = grad[ii * d + j] * gv[j];
                            mean_h += h;
                            mean_hx += h * xhat[ii * d + j];
                        }
                        mean_h *= inv_d;
                        mean_hx *= inv_d;
                        let r = inv_std[ii];
                        for j in 0..d {
                            let h = grad[ii * d + j] * gv[j];
                            gx[ii * d + j] += r * (h - mean_h - xhat[ii * d + j] * mean_hx);
                        }
                    }
                }
            }
            Op::BatchedAttention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            } => {
                let d = cols;
                let (qm, _) = self.shape(*q);
                let (km, _) = self.shape(*k);
                let (batch, heads) = (*batch, *heads);
                let lq = qm / batch;
                let lk = km / batch;
                let dh = d / heads;
                let scale = S::one() / S::of(dh as f64).sqrt();
                let qv = self.nodes[q.0].values.clone();
                let kv = self.nodes[k.0].values.clone();
                let vv = self.nodes[v.0].values.clone();
                let needs_q = self.needs(*q);
                let needs_k = self.needs(*k);
                let needs_v = self.needs(*v);
                let mut dq = vec![S::zero(); if needs_q { qm * d } else { 0 }];
                let mut dk = vec![S::zero(); if needs_k { km * d } else { 0 }];
                let mut dv = vec![S::zero(); if needs_v { km * d } else { 0 }];
                let mut dp = vec![S::zero(); lk];
                let mut ds = vec![S::zero(); lk];
                for b in 0..batch {
                    for h in 0..heads {
                        let hoff = h * dh;
                        for ii in 0..lq {
                            let prow = &probs[((b * heads + h) * lq + ii) * lk
                                ..((b * heads + h) * lq + ii + 1) * lk];
                            let grow =
                                &grad[(b * lq + ii) * d + hoff..(b * lq + ii) * d + hoff + dh];
                            // dP = g . V^T (per head slice), dV += P^T . g
                            for j in 0..lk {
                                let vrow =
                                    &vv[(b * lk + j) * d + hoff..(b * lk + j) * d + hoff + dh];
                                let mut acc = S::zero();
                                for c in 0..dh {
                                    acc += grow[c] * vrow[c];
                                }
                                dp[j] = acc;
                                if needs_v {
                                    let dvrow = &mut dv
                                        [(b * lk + j) * d + hoff..(b * lk + j) * d + hoff + dh];
                                    for c in 0..dh {
                                        dvrow[c] += prow[j] * grow[c];
                                    }
                                }
                            }
                            // dS = P * (dP - sum_j dP_j P_j)
                            let mut dot = S::zero();
                            for j in 0..lk {
                                dot += dp[j] * prow[j];
                            }
                            for j in 0..lk {
                                ds[j] = prow[j] * (dp[j] - dot);
                            }
                            if needs_q {
                                let dqrow = &mut dq
                                    [(b * lq + ii) * d + hoff..(b * lq + ii) * d + hoff + dh];
                                for j in 0..lk {
                                    let krow =
                                        &kv[(b * lk + j) * d + hoff..(b * lk + j) * d + hoff + dh];
                                    let s = ds[j] * scale;
                                    for c in 0..dh {
                                        dqrow[c] += s * krow[c];
                                    }
                                }
                            }
                            if needs_k {
                                let qrow =
                                    &qv[(b * lq + ii) * d + hoff..(b * lq + ii) * d + hoff + dh];
                                for j in 0..lk {
                                    let dkrow = &mut dk
                                        [(b * lk + j) * d + hoff..(b * lk + j) * d + hoff + dh];
                                    let s = ds[j] * scale;
                                    for c in 0..dh {
                                        dkrow[c] += s * qrow[c];
                                    }
                                }
                            }
                        }
                    }
                }
                if needs_q {
                    let gq = &mut self.nodes[q.0].grad;
                    for (g, add) in gq.iter_mut().zip(&dq) {
                        *g += *add;
                    }
                }
                if needs_k {
                    let gk = &mut self.nodes[k.0].grad;
                    for (g, add) in gk.iter_mut().zip(&dk) {
                        *g += *add;
                    }
                }
                if needs_v {
                    let gv2 = &mut self.nodes[v.0].grad;
                    for (g, add) in gv2.iter_mut().zip(&dv) {
                        *g += *add;
                    }
                }
            }
        }

        self.nodes[i].op = op;
        self.nodes[i].grad = grad;
    }

    fn values_cloned(&self, i: usize) -> Vec<S> {
        self.nodes[i].values.clone()
    }

    /// Accumulate `f(upstream_grad, flat_index)` into the grad of `target`.
    fn accumulate(&mut self, target: TensorRef, grad: &[S], f: impl Fn(S, usize) -> S) {
        if !self.needs(target) {
            return;
        }
        let g = &mut self.nodes[target.0].grad;
        debug_assert_eq!(g.len(), grad.len());
        for (idx, slot) in g.iter_mut().enumerate() {
            *slot += f(grad[idx], idx);
        }
    }

    /// Add the same scalar to every grad slot of `target`.
    fn broadcast_add(&mut self, target: TensorRef, g: S) {
        if !self.needs(target) {
            return;
        }
        for slot in self.nodes[target.0].grad.iter_mut() {
            *slot += g;
        }
    }
}

fn softmax_row<S: Scalar>(logits: &[S], out: &mut [S]) {
    let mut max = logits[0];
    for &l in &logits[1..] {
        if l > max {
            max = l;
        }
    }
    let mut sum = S::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        let e = (l - max).exp();
        *o = e;
        sum += e;
    }
    let inv = S::one() / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Fixed-order ikj matrix multiply: out += a . b with out zero on entry.
/// The loop order is part of the determinism contract.
fn matmul_kernel<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Tape = TapeOf<f64>;

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.3, -1.2, 7.0, 0.0], 2, 2);
        let i2 = tape.constant(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let y = tape.matmul(i2, x);
        assert_eq!(tape.values(y), tape.values(x));
    }

    #[test]
    fn matmul_hand_case() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let b = tape.constant(vec![1.0, 1.0], 2, 1);
        let y = tape.matmul(a, b);
        assert_eq!(tape.values(y), &[3.0, 7.0]);
    }

    #[test]
    fn two_branch_accumulation() {
        // L = sum(x^2) + sum(3x); dL/dx = 2x + 3. x = [1, 2] -> [5, 7].
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], 1, 2);
        let sq = tape.square(x);
        let tr = tape.scale(x, 3.0);
        let s1 = tape.sum_all(sq);
        let s2 = tape.sum_all(tr);
        let loss = tape.add(s1, s2);
        tape.backward(loss);
        assert_eq!(tape.grad(x), &[5.0, 7.0]);
    }

    #[test]
    fn same_ref_used_twice_in_one_op() {
        // mul(x, x) must accumulate both factors: d/dx x*x = 2x.
        let mut tape = Tape::new();
        let x = tape.leaf(vec![3.0], 1, 1);
        let y = tape.mul(x, x);
        tape.backward(y);
        assert_eq!(tape.grad(x), &[6.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let vals: Vec<f64> = (0..40)
            .map(|i| ((i * 37 % 17) as f64 - 8.0) * 0.7)
            .collect();
        let x = tape.constant(vals, 5, 8);
        let p = tape.softmax_rows(x);
        for i in 0..5 {
            let row_sum: f64 = tape.values(p)[i * 8..(i + 1) * 8].iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12, "row {i} sums to {row_sum}");
        }
    }

    #[test]
    fn layer_norm_constant_row_gives_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![4.2, 4.2, 4.2], 1, 3);
        let gain = tape.constant(vec![2.0, 2.0, 2.0], 1, 3);
        let bias = tape.constant(vec![0.5, -0.5, 0.0], 1, 3);
        let y = tape.layer_norm(x, gain, bias, 1e-5);
        let out = tape.values(y);
        for (o, b) in out.iter().zip([0.5, -0.5, 0.0]) {
            assert!((o - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_already_normalized() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1.0, -1.0], 1, 2);
        let gain = tape.constant(vec![1.0, 1.0], 1, 2);
        let bias = tape.constant(vec![0.0, 0.0], 1, 2);
        let y = tape.layer_norm(x, gain, bias, 1e-5);
        let out = tape.values(y);
        assert!((out[0] - 1.0).abs() < 1e-4);
        assert!((out[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_row_mean_near_zero() {
        let mut tape = Tape::new();
        let vals: Vec<f64> = (0..24)
            .map(|i| ((i * 13 % 7) as f64) * 0.31 - 0.9)
            .collect();
        let x = tape.constant(vals, 3, 8);
        let gain = tape.constant(vec![1.0; 8], 1, 8);
        let bias = tape.constant(vec![0.0; 8], 1, 8);
        let y = tape.layer_norm(x, gain, bias, 1e-5);
        for i in 0..3 {
            let mean: f64 = tape.values(y)[i * 8..(i + 1) * 8].iter().sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-10);
        }
    }

    #[test]
    fn clamp_and_minimum_forward() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![-2.0, 0.5, 3.0], 1, 3);
        let c = tape.clamp(x, 0.0, 1.0);
        assert_eq!(tape.values(c), &[0.0, 0.5, 1.0]);
        let y = tape.constant(vec![1.0, 0.0, 5.0], 1, 3);
        let m = tape.minimum(x, y);
        assert_eq!(tape.values(m), &[-2.0, 0.0, 3.0]);
    }

    #[test]
    fn stack_interleaved_and_mean_blocks_round_trip() {
        let mut tape = Tape::new();
        // Two parts (L=2), batch 2, width 2.
        let p0 = tape.constant(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let p1 = tape.constant(vec![10.0, 20.0, 30.0, 40.0], 2, 2);
        let s = tape.stack_interleaved(&[p0, p1]);
        assert_eq!(
            tape.values(s),
            &[1.0, 2.0, 10.0, 20.0, 3.0, 4.0, 30.0, 40.0]
        );
        let m = tape.mean_row_blocks(s, 2);
        assert_eq!(tape.values(m), &[5.5, 11.0, 16.5, 22.0]);
    }

    #[test]
    fn masked_attention_ignores_masked_content() {
        // Changing values in masked slots must not change the output bits.
        let run = |masked_fill: f64| {
            let mut tape = Tape::new();
            let q = tape.constant(vec![0.3, -0.2, 0.1, 0.9], 1, 4);
            let k = tape.constant(
                vec![
                    0.5,
                    0.1,
                    -0.3,
                    0.2,
                    masked_fill,
                    masked_fill,
                    masked_fill,
                    masked_fill,
                ],
                2,
                4,
            );
            let v = tape.constant(
                vec![
                    1.0,
                    2.0,
                    3.0,
                    4.0,
                    masked_fill,
                    masked_fill,
                    masked_fill,
                    masked_fill,
                ],
                2,
                4,
            );
            let mask = tape.constant(vec![0.0, -1e30], 2, 1);
            let out = tape.batched_attention(q, k, v, 1, 2, Some(mask));
            tape.values(out).to_vec()
        };
        let a = run(0.0);
        let b = run(123.456);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // With one live slot the output equals that slot's values.
        assert_eq!(a, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn clear_resets_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![2.0], 1, 1);
        let y = tape.square(x);
        tape.backward(y);
        assert_eq!(tape.grad(x), &[4.0]);
        tape.clear();
        assert!(tape.is_empty());
        let x2 = tape.leaf(vec![2.0], 1, 1);
        assert_eq!(tape.grad(x2), &[0.0]);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1e308], 1, 1);
        let y = tape.exp(x);
        let _ = y;
    }

    #[test]
    #[should_panic(expected = "inner dims")]
    fn matmul_shape_mismatch_panics() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![1.0, 2.0], 1, 2);
        let b = tape.constant(vec![1.0, 2.0, 3.0], 3, 1);
        let _ = tape.matmul(a, b);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let vals: Vec<f64> = (0..30)
                .map(|i| ((i * 31 % 13) as f64) * 0.173 - 0.8)
                .collect();
            let x = tape.leaf(vals, 5, 6);
            let w = tape.constant(
                (0..18).map(|i| ((i * 7 % 5) as f64) * 0.21 - 0.4).collect(),
                6,
                3,
            );
            let h = tape.matmul(x, w);
            let r = tape.relu(h);
            let p = tape.softmax_rows(r);
            let loss = tape.mean_all(p);
            tape.backward(loss);
            (tape.values(p).to_vec(), tape.grad(x).to_vec())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        for (a, b) in v1.iter().zip(&v2).chain(g1.iter().zip(&g2)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn f32_instantiation_works() {
        let mut tape: TapeOf<f32> = TapeOf::new();
        let x = tape.leaf(vec![1.0, -2.0], 1, 2);
        let r = tape.relu(x);
        let s = tape.sum_all(r);
        tape.backward(s);
        assert_eq!(tape.values(r), &[1.0, 0.0]);
        assert_eq!(tape.grad(x), &[1.0, 0.0]);
    }
}
