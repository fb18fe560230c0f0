//! Reverse-mode automatic differentiation over a per-forward-pass tape.
//!
//! Every operation appends a node holding its output tensor plus enough
//! saved state to compute vector-Jacobian products when the tape is replayed
//! in reverse. The tape is built for one forward pass and dropped after
//! `backward`; a tape is confined to a single thread.

use std::sync::Arc;

use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Per-channel batch statistics captured by a training-mode batch norm,
/// handed back to the caller so running averages can be updated outside
/// the tape.
#[derive(Debug, Clone)]
pub struct BnBatchStats<S: Scalar> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf,
    Matmul {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    /// out[m,n] = A[m,k] · B[n,k]ᵀ
    MatmulBt {
        a: NodeId,
        b: NodeId,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        cin: usize,
        h: usize,
        w: usize,
        cout: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
        /// Forward's im2col buffer, reused for the kernel gradient.
        cols: Arc<Vec<S>>,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Arc<Vec<u32>>,
    },
    GlobalAvgPool {
        input: NodeId,
        c: usize,
        hw: usize,
    },
    /// Normalization over the spatial extent of each channel using the
    /// saved statistics; `stats_from_input` distinguishes training mode
    /// (statistics depend on the input and enter the gradient) from eval
    /// mode (running statistics treated as constants).
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Arc<Vec<S>>,
        inv_std: Arc<Vec<S>>,
        c: usize,
        hw: usize,
        stats_from_input: bool,
    },
    LayerNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Arc<Vec<S>>,
        inv_std: Arc<Vec<S>>,
        rows: usize,
        d: usize,
    },
    Softmax {
        input: NodeId,
        rows: usize,
        d: usize,
    },
    Relu {
        input: NodeId,
    },
    Sigmoid {
        input: NodeId,
    },
    Tanh {
        input: NodeId,
    },
    Abs {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: S,
    },
    /// out[r,d] = a[r,d] + b[d] for every row r
    AddRowBroadcast {
        a: NodeId,
        b: NodeId,
        rows: usize,
        d: usize,
    },
    /// out[c,i] = a[c,i] + b[c] over the spatial extent of each channel
    AddChanBroadcast {
        a: NodeId,
        b: NodeId,
        c: usize,
        hw: usize,
    },
    ConcatFlat {
        inputs: Vec<NodeId>,
        sizes: Vec<usize>,
    },
    /// Column-wise concatenation of matrices sharing a row count.
    ConcatCols {
        inputs: Vec<NodeId>,
        rows: usize,
        widths: Vec<usize>,
    },
    SliceCols {
        input: NodeId,
        rows: usize,
        cols: usize,
        start: usize,
        width: usize,
    },
    Reshape {
        input: NodeId,
    },
    /// out[i] = in[idx[i]]; backward scatter-adds.
    Gather {
        input: NodeId,
        idx: Arc<Vec<u32>>,
    },
    SumAll {
        input: NodeId,
    },
    /// Sum over the row axis of an [rows, d] matrix, leaving [d].
    SumAxis0 {
        input: NodeId,
        rows: usize,
        d: usize,
    },
}

struct Node<S: Scalar> {
    tensor: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf tensor. Only `requires_grad` leaves receive gradients.
    pub fn leaf(&mut self, mut tensor: Tensor<S>, requires_grad: bool) -> NodeId {
        tensor.requires_grad = requires_grad;
        tensor.tape_id = Some(NodeId(self.nodes.len()));
        self.push(tensor, Op::Leaf, requires_grad)
    }

    /// Register a non-differentiable input.
    pub fn constant(&mut self, tensor: Tensor<S>) -> NodeId {
        self.leaf(tensor, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].tensor
    }

    pub fn data(&self, id: NodeId) -> &[S] {
        &self.nodes[id.0].tensor.data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    /// Gradient of a leaf, zeros if no gradient flowed to it.
    pub fn grad_or_zeros(&self, id: NodeId) -> Vec<S> {
        match self.grad(id) {
            Some(g) => g.to_vec(),
            None => vec![S::ZERO; self.nodes[id.0].tensor.numel()],
        }
    }

    fn push(&mut self, tensor: Tensor<S>, op: Op<S>, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            tensor,
            op,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn out(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op<S>, needs_grad: bool) -> NodeId {
        let mut t = Tensor::new(shape, data);
        t.tape_id = Some(NodeId(self.nodes.len()));
        self.push(t, op, needs_grad)
    }

    // ── Linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.data(a), self.data(b), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.out(vec![m, n], data, Op::Matmul { a, b, m, k, n }, ng))
    }

    /// A[m,k] · B[n,k]ᵀ → [m,n]
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_bt",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let data = kernels::matmul_bt(self.data(a), self.data(b), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.out(vec![m, n], data, Op::MatmulBt { a, b, m, k, n }, ng))
    }

    /// Cross-correlation (no kernel flip) of [cin,h,w] with [cout,cin,k,k].
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        if si.len() != 3 || sk.len() != 4 || si[0] != sk[1] || sk[2] != sk[3] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: si,
                rhs: sk,
            });
        }
        let (cin, h, w) = (si[0], si[1], si[2]);
        let (cout, ksize) = (sk[0], sk[2]);
        if ksize > h + 2 * pad || ksize > w + 2 * pad {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d (kernel larger than padded input)",
                lhs: si,
                rhs: sk,
            });
        }
        let oh = kernels::conv_out_dim(h, ksize, stride, pad);
        let ow = kernels::conv_out_dim(w, ksize, stride, pad);
        let cols = kernels::im2col(self.data(input), cin, h, w, ksize, stride, pad);
        let data = kernels::matmul(self.data(kernel), &cols, cout, cin * ksize * ksize, oh * ow);
        let ng = self.needs(input) || self.needs(kernel);
        let cols = if ng { Arc::new(cols) } else { Arc::new(Vec::new()) };
        Ok(self.out(
            vec![cout, oh, ow],
            data,
            Op::Conv2d {
                input,
                kernel,
                cin,
                h,
                w,
                cout,
                ksize,
                stride,
                pad,
                cols,
            },
            ng,
        ))
    }

    pub fn maxpool2d(&mut self, input: NodeId, ksize: usize, stride: usize, pad: usize) -> NodeId {
        let s = self.shape(input).to_vec();
        assert_eq!(s.len(), 3, "maxpool2d expects [c,h,w], got {s:?}");
        let (c, h, w) = (s[0], s[1], s[2]);
        let (data, argmax) = kernels::maxpool2d(self.data(input), c, h, w, ksize, stride, pad);
        let oh = kernels::conv_out_dim(h, ksize, stride, pad);
        let ow = kernels::conv_out_dim(w, ksize, stride, pad);
        let ng = self.needs(input);
        self.out(
            vec![c, oh, ow],
            data,
            Op::MaxPool2d {
                input,
                argmax: Arc::new(argmax),
            },
            ng,
        )
    }

    /// Mean over the spatial extent of each channel: [c,h,w] → [c].
    pub fn global_avg_pool(&mut self, input: NodeId) -> NodeId {
        let s = self.shape(input).to_vec();
        assert_eq!(s.len(), 3, "global_avg_pool expects [c,h,w], got {s:?}");
        let (c, hw) = (s[0], s[1] * s[2]);
        let inv = S::from_f64(1.0 / hw as f64);
        let data: Vec<S> = (0..c)
            .map(|ci| {
                let mut acc = S::ZERO;
                for &v in &self.data(input)[ci * hw..(ci + 1) * hw] {
                    acc += v;
                }
                acc * inv
            })
            .collect();
        let ng = self.needs(input);
        self.out(vec![c], data, Op::GlobalAvgPool { input, c, hw }, ng)
    }

    /// Batch norm in training mode: normalizes with statistics computed over
    /// the spatial extent of each channel and reports them for running-stat
    /// updates.
    pub fn batch_norm_train(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> (NodeId, BnBatchStats<S>) {
        let s = self.shape(input).to_vec();
        assert_eq!(s.len(), 3, "batch_norm expects [c,h,w], got {s:?}");
        let (c, hw) = (s[0], s[1] * s[2]);
        let inv_n = 1.0 / hw as f64;
        let mut mean = Vec::with_capacity(c);
        let mut var = Vec::with_capacity(c);
        for ci in 0..c {
            let plane = &self.data(input)[ci * hw..(ci + 1) * hw];
            let mut m = S::ZERO;
            for &v in plane {
                m += v;
            }
            m *= S::from_f64(inv_n);
            let mut v_acc = S::ZERO;
            for &v in plane {
                let d = v - m;
                v_acc += d * d;
            }
            v_acc *= S::from_f64(inv_n);
            mean.push(m);
            var.push(v_acc);
        }
        let inv_std: Vec<S> = var
            .iter()
            .map(|&v| S::ONE / (v + S::from_f64(eps)).sqrt())
            .collect();
        let id = self.bn_apply(input, gamma, beta, mean.clone(), inv_std, c, hw, true);
        (id, BnBatchStats { mean, var })
    }

    /// Batch norm in eval mode: running statistics are constants.
    pub fn batch_norm_eval(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[S],
        running_var: &[S],
        eps: f64,
    ) -> NodeId {
        let s = self.shape(input).to_vec();
        assert_eq!(s.len(), 3, "batch_norm expects [c,h,w], got {s:?}");
        let (c, hw) = (s[0], s[1] * s[2]);
        let inv_std: Vec<S> = running_var
            .iter()
            .map(|&v| S::ONE / (v + S::from_f64(eps)).sqrt())
            .collect();
        self.bn_apply(
            input,
            gamma,
            beta,
            running_mean.to_vec(),
            inv_std,
            c,
            hw,
            false,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<S>,
        inv_std: Vec<S>,
        c: usize,
        hw: usize,
        stats_from_input: bool,
    ) -> NodeId {
        let mut data = vec![S::ZERO; c * hw];
        {
            let x = self.data(input);
            let g = self.data(gamma);
            let b = self.data(beta);
            for ci in 0..c {
                let (m, istd, gc, bc) = (mean[ci], inv_std[ci], g[ci], b[ci]);
                let src = &x[ci * hw..(ci + 1) * hw];
                let dst = &mut data[ci * hw..(ci + 1) * hw];
                for (d, &v) in dst.iter_mut().zip(src.iter()) {
                    *d = (v - m) * istd * gc + bc;
                }
            }
        }
        let ng = self.needs(input) || self.needs(gamma) || self.needs(beta);
        let shape = self.shape(input).to_vec();
        self.out(
            shape,
            data,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean: Arc::new(mean),
                inv_std: Arc::new(inv_std),
                c,
                hw,
                stats_from_input,
            },
            ng,
        )
    }

    /// Per-row normalization over the last axis of an [rows, d] matrix,
    /// epsilon-stabilized, followed by the gamma/beta affine.
    pub fn layer_norm(&mut self, input: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let s = self.shape(input).to_vec();
        let d = *s.last().expect("layer_norm on empty shape");
        let rows = self.value(input).numel() / d;
        let mut mean = Vec::with_capacity(rows);
        let mut inv_std = Vec::with_capacity(rows);
        let mut data = vec![S::ZERO; rows * d];
        {
            let x = self.data(input);
            let g = self.data(gamma);
            let b = self.data(beta);
            let inv_d = S::from_f64(1.0 / d as f64);
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mut m = S::ZERO;
                for &v in row {
                    m += v;
                }
                m *= inv_d;
                let mut var = S::ZERO;
                for &v in row {
                    let dv = v - m;
                    var += dv * dv;
                }
                var *= inv_d;
                let istd = S::ONE / (var + S::from_f64(eps)).sqrt();
                mean.push(m);
                inv_std.push(istd);
                let dst = &mut data[r * d..(r + 1) * d];
                for (i, (o, &v)) in dst.iter_mut().zip(row.iter()).enumerate() {
                    *o = (v - m) * istd * g[i] + b[i];
                }
            }
        }
        let ng = self.needs(input) || self.needs(gamma) || self.needs(beta);
        self.out(
            s,
            data,
            Op::LayerNorm {
                input,
                gamma,
                beta,
                mean: Arc::new(mean),
                inv_std: Arc::new(inv_std),
                rows,
                d,
            },
            ng,
        )
    }

    /// Row-wise softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, input: NodeId) -> NodeId {
        let s = self.shape(input).to_vec();
        let d = *s.last().expect("softmax on empty shape");
        let rows = self.value(input).numel() / d;
        let mut data = vec![S::ZERO; rows * d];
        {
            let x = self.data(input);
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mut mx = row[0];
                for &v in row {
                    mx = mx.max_s(v);
                }
                let dst = &mut data[r * d..(r + 1) * d];
                let mut sum = S::ZERO;
                for (o, &v) in dst.iter_mut().zip(row.iter()) {
                    let e = (v - mx).exp();
                    *o = e;
                    sum += e;
                }
                let inv = S::ONE / sum;
                for o in dst.iter_mut() {
                    *o *= inv;
                }
            }
        }
        let ng = self.needs(input);
        self.out(s, data, Op::Softmax { input, rows, d }, ng)
    }

    // ── Elementwise ─────────────────────────────────────────────────

    fn unary(&mut self, input: NodeId, f: impl Fn(S) -> S, op: Op<S>) -> NodeId {
        let data: Vec<S> = self.data(input).iter().map(|&v| f(v)).collect();
        let ng = self.needs(input);
        let shape = self.shape(input).to_vec();
        self.out(shape, data, op, ng)
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        self.unary(input, |v| v.max_s(S::ZERO), Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        self.unary(input, |v| v.sigmoid(), Op::Sigmoid { input })
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        self.unary(input, |v| v.tanh(), Op::Tanh { input })
    }

    pub fn abs(&mut self, input: NodeId) -> NodeId {
        self.unary(input, |v| v.abs(), Op::Abs { input })
    }

    pub fn scale(&mut self, input: NodeId, factor: S) -> NodeId {
        self.unary(input, |v| v * factor, Op::Scale { input, factor })
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<NodeId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<S> = self
            .data(a)
            .iter()
            .zip(self.data(b).iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.out(shape, data, op, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    /// a[rows,d] + b[d] broadcast over rows.
    pub fn add_row_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let sa = self.shape(a).to_vec();
        let d = *sa.last().unwrap_or(&0);
        if d == 0 || self.value(b).numel() != d {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: sa,
                rhs: self.shape(b).to_vec(),
            });
        }
        let rows = self.value(a).numel() / d;
        let mut data = vec![S::ZERO; rows * d];
        {
            let av = self.data(a);
            let bv = self.data(b);
            for r in 0..rows {
                let src = &av[r * d..(r + 1) * d];
                let dst = &mut data[r * d..(r + 1) * d];
                for ((o, &x), &y) in dst.iter_mut().zip(src.iter()).zip(bv.iter()) {
                    *o = x + y;
                }
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.out(sa, data, Op::AddRowBroadcast { a, b, rows, d }, ng))
    }

    /// a[c,h,w] + b[c] broadcast over the spatial extent.
    pub fn add_chan_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 || self.value(b).numel() != sa[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_chan_broadcast",
                lhs: sa,
                rhs: self.shape(b).to_vec(),
            });
        }
        let (c, hw) = (sa[0], sa[1] * sa[2]);
        let mut data = vec![S::ZERO; c * hw];
        {
            let av = self.data(a);
            let bv = self.data(b);
            for ci in 0..c {
                let add = bv[ci];
                let src = &av[ci * hw..(ci + 1) * hw];
                let dst = &mut data[ci * hw..(ci + 1) * hw];
                for (o, &x) in dst.iter_mut().zip(src.iter()) {
                    *o = x + add;
                }
            }
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.out(sa, data, Op::AddChanBroadcast { a, b, c, hw }, ng))
    }

    /// Concatenate flattened tensors into one vector.
    pub fn concat_flat(&mut self, inputs: &[NodeId]) -> NodeId {
        assert!(!inputs.is_empty(), "concat_flat of nothing");
        let sizes: Vec<usize> = inputs.iter().map(|&i| self.value(i).numel()).collect();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(total);
        for &i in inputs {
            data.extend_from_slice(self.data(i));
        }
        let ng = inputs.iter().any(|&i| self.needs(i));
        self.out(
            vec![total],
            data,
            Op::ConcatFlat {
                inputs: inputs.to_vec(),
                sizes,
            },
            ng,
        )
    }

    /// Concatenate [rows, w_i] matrices along columns.
    pub fn concat_cols(&mut self, inputs: &[NodeId]) -> NodeId {
        assert!(!inputs.is_empty(), "concat_cols of nothing");
        let rows = self.shape(inputs[0])[0];
        let widths: Vec<usize> = inputs
            .iter()
            .map(|&i| {
                let s = self.shape(i);
                assert_eq!(s[0], rows, "concat_cols row mismatch");
                s[1]
            })
            .collect();
        let total_w: usize = widths.iter().sum();
        let mut data = vec![S::ZERO; rows * total_w];
        let mut col0 = 0usize;
        for (&inp, &w) in inputs.iter().zip(widths.iter()) {
            let src = self.data(inp);
            for r in 0..rows {
                data[r * total_w + col0..r * total_w + col0 + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            col0 += w;
        }
        let ng = inputs.iter().any(|&i| self.needs(i));
        self.out(
            vec![rows, total_w],
            data,
            Op::ConcatCols {
                inputs: inputs.to_vec(),
                rows,
                widths,
            },
            ng,
        )
    }

    pub fn slice_cols(&mut self, input: NodeId, start: usize, width: usize) -> NodeId {
        let s = self.shape(input).to_vec();
        assert_eq!(s.len(), 2, "slice_cols expects a matrix, got {s:?}");
        let (rows, cols) = (s[0], s[1]);
        assert!(start + width <= cols, "slice_cols out of range");
        let mut data = vec![S::ZERO; rows * width];
        let src = self.data(input);
        for r in 0..rows {
            data[r * width..(r + 1) * width]
                .copy_from_slice(&src[r * cols + start..r * cols + start + width]);
        }
        let ng = self.needs(input);
        self.out(
            vec![rows, width],
            data,
            Op::SliceCols {
                input,
                rows,
                cols,
                start,
                width,
            },
            ng,
        )
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> NodeId {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            self.value(input).numel(),
            "reshape to {shape:?} from {:?}",
            self.shape(input)
        );
        let data = self.data(input).to_vec();
        let ng = self.needs(input);
        self.out(shape, data, Op::Reshape { input }, ng)
    }

    /// out[i] = in[idx[i]]
    pub fn gather(&mut self, input: NodeId, idx: Arc<Vec<u32>>) -> NodeId {
        let src = self.data(input);
        let data: Vec<S> = idx.iter().map(|&i| src[i as usize]).collect();
        let ng = self.needs(input);
        self.out(vec![idx.len()], data, Op::Gather { input, idx }, ng)
    }

    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let mut acc = S::ZERO;
        for &v in self.data(input) {
            acc += v;
        }
        let ng = self.needs(input);
        self.out(vec![1], vec![acc], Op::SumAll { input }, ng)
    }

    /// [rows, d] → [d], summing across rows.
    pub fn sum_axis0(&mut self, input: NodeId) -> NodeId {
        let s = self.shape(input).to_vec();
        assert_eq!(s.len(), 2, "sum_axis0 expects a matrix, got {s:?}");
        let (rows, d) = (s[0], s[1]);
        let mut data = vec![S::ZERO; d];
        let src = self.data(input);
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            for (o, &v) in data.iter_mut().zip(row.iter()) {
                *o += v;
            }
        }
        let ng = self.needs(input);
        self.out(vec![d], data, Op::SumAxis0 { input, rows, d }, ng)
    }

    // ── Backward ────────────────────────────────────────────────────

    fn accumulate(&mut self, id: NodeId, grad: &[S]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let t = &mut self.nodes[id.0].tensor;
        match &mut t.grad {
            Some(g) => {
                for (gi, &d) in g.iter_mut().zip(grad.iter()) {
                    *gi += d;
                }
            }
            None => t.grad = Some(grad.to_vec()),
        }
    }

    fn take_grad(&self, id: NodeId) -> Option<Vec<S>> {
        self.nodes[id.0].tensor.grad.clone()
    }

    /// Reverse sweep from a scalar loss. Populates `grad` on every
    /// `requires_grad` leaf reachable from the loss; gradients accumulate
    /// additively across multiple uses of a node.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let lt = &self.nodes[loss.0].tensor;
        if !lt.is_scalar() {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: lt.shape.clone(),
            });
        }
        self.nodes[loss.0].tensor.grad = Some(vec![S::ONE]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(d_out) = self.take_grad(NodeId(i)) else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.backward_op(NodeId(i), &op, &d_out);
        }
        Ok(())
    }

    fn backward_op(&mut self, out: NodeId, op: &Op<S>, d_out: &[S]) {
        match op {
            Op::Leaf => {}

            Op::Matmul { a, b, m, k, n } => {
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let d_a = kernels::matmul_bt(d_out, self.data(*b), *m, *n, *k);
                    self.accumulate(*a, &d_a);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let d_b = kernels::matmul_at_b(self.data(*a), d_out, *m, *k, *n);
                    self.accumulate(*b, &d_b);
                }
            }

            Op::MatmulBt { a, b, m, k, n } => {
                if self.needs(*a) {
                    // dA = dC · B
                    let d_a = kernels::matmul(d_out, self.data(*b), *m, *n, *k);
                    self.accumulate(*a, &d_a);
                }
                if self.needs(*b) {
                    // dB = dCᵀ · A
                    let d_b = kernels::matmul_at_b(d_out, self.data(*a), *m, *n, *k);
                    self.accumulate(*b, &d_b);
                }
            }

            Op::Conv2d {
                input,
                kernel,
                cin,
                h,
                w,
                cout,
                ksize,
                stride,
                pad,
                cols,
            } => {
                let oh = kernels::conv_out_dim(*h, *ksize, *stride, *pad);
                let ow = kernels::conv_out_dim(*w, *ksize, *stride, *pad);
                let patch = cin * ksize * ksize;
                if self.needs(*kernel) {
                    // dW = dOut · colsᵀ over the saved forward buffer
                    let d_k = kernels::matmul_bt(d_out, cols, *cout, oh * ow, patch);
                    self.accumulate(*kernel, &d_k);
                }
                if self.needs(*input) {
                    // dCols = Wᵀ · dOut, then scatter back to input layout
                    let d_cols =
                        kernels::matmul_at_b(self.data(*kernel), d_out, *cout, patch, oh * ow);
                    let mut d_in = vec![S::ZERO; cin * h * w];
                    kernels::col2im_accumulate(
                        &d_cols, *cin, *h, *w, *ksize, *stride, *pad, &mut d_in,
                    );
                    self.accumulate(*input, &d_in);
                }
            }

            Op::MaxPool2d { input, argmax } => {
                if self.needs(*input) {
                    let mut d_in = vec![S::ZERO; self.value(*input).numel()];
                    for (&src, &d) in argmax.iter().zip(d_out.iter()) {
                        d_in[src as usize] += d;
                    }
                    self.accumulate(*input, &d_in);
                }
            }

            Op::GlobalAvgPool { input, c, hw } => {
                if self.needs(*input) {
                    let inv = S::from_f64(1.0 / *hw as f64);
                    let mut d_in = vec![S::ZERO; c * hw];
                    for ci in 0..*c {
                        let g = d_out[ci] * inv;
                        for d in &mut d_in[ci * hw..(ci + 1) * hw] {
                            *d = g;
                        }
                    }
                    self.accumulate(*input, &d_in);
                }
            }

            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                c,
                hw,
                stats_from_input,
            } => {
                let x = self.data(*input);
                let g = self.data(*gamma);
                let n_inv = S::from_f64(1.0 / *hw as f64);
                let mut d_in = vec![S::ZERO; c * hw];
                let mut d_gamma = vec![S::ZERO; *c];
                let mut d_beta = vec![S::ZERO; *c];
                for ci in 0..*c {
                    let (m, istd, gc) = (mean[ci], inv_std[ci], g[ci]);
                    let xs = &x[ci * hw..(ci + 1) * hw];
                    let dys = &d_out[ci * hw..(ci + 1) * hw];
                    let mut sum_dy = S::ZERO;
                    let mut sum_dy_xhat = S::ZERO;
                    for (&xv, &dy) in xs.iter().zip(dys.iter()) {
                        let xhat = (xv - m) * istd;
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat;
                    }
                    d_gamma[ci] = sum_dy_xhat;
                    d_beta[ci] = sum_dy;
                    let dst = &mut d_in[ci * hw..(ci + 1) * hw];
                    if *stats_from_input {
                        let mean_dy = sum_dy * n_inv;
                        let mean_dy_xhat = sum_dy_xhat * n_inv;
                        for ((o, &xv), &dy) in dst.iter_mut().zip(xs.iter()).zip(dys.iter()) {
                            let xhat = (xv - m) * istd;
                            *o = gc * istd * (dy - mean_dy - xhat * mean_dy_xhat);
                        }
                    } else {
                        for (o, &dy) in dst.iter_mut().zip(dys.iter()) {
                            *o = gc * istd * dy;
                        }
                    }
                }
                if self.needs(*input) {
                    self.accumulate(*input, &d_in);
                }
                if self.needs(*gamma) {
                    self.accumulate(*gamma, &d_gamma);
                }
                if self.needs(*beta) {
                    self.accumulate(*beta, &d_beta);
                }
            }

            Op::LayerNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                rows,
                d,
            } => {
                let x = self.data(*input);
                let g = self.data(*gamma);
                let inv_d = S::from_f64(1.0 / *d as f64);
                let mut d_in = vec![S::ZERO; rows * d];
                let mut d_gamma = vec![S::ZERO; *d];
                let mut d_beta = vec![S::ZERO; *d];
                for r in 0..*rows {
                    let (m, istd) = (mean[r], inv_std[r]);
                    let xs = &x[r * d..(r + 1) * d];
                    let dys = &d_out[r * d..(r + 1) * d];
                    let mut sum_dxhat = S::ZERO;
                    let mut sum_dxhat_xhat = S::ZERO;
                    for (i, (&xv, &dy)) in xs.iter().zip(dys.iter()).enumerate() {
                        let xhat = (xv - m) * istd;
                        let dxhat = dy * g[i];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        d_gamma[i] += dy * xhat;
                        d_beta[i] += dy;
                    }
                    let mean_dxhat = sum_dxhat * inv_d;
                    let mean_dxhat_xhat = sum_dxhat_xhat * inv_d;
                    let dst = &mut d_in[r * d..(r + 1) * d];
                    for (i, (o, &xv)) in dst.iter_mut().zip(xs.iter()).enumerate() {
                        let xhat = (xv - m) * istd;
                        let dxhat = dys[i] * g[i];
                        *o = istd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
                if self.needs(*input) {
                    self.accumulate(*input, &d_in);
                }
                if self.needs(*gamma) {
                    self.accumulate(*gamma, &d_gamma);
                }
                if self.needs(*beta) {
                    self.accumulate(*beta, &d_beta);
                }
            }

            Op::Softmax { input, rows, d } => {
                if self.needs(*input) {
                    let y = self.data(out);
                    let mut d_in = vec![S::ZERO; rows * d];
                    for r in 0..*rows {
                        let ys = &y[r * d..(r + 1) * d];
                        let dys = &d_out[r * d..(r + 1) * d];
                        let mut dot = S::ZERO;
                        for (&yv, &dy) in ys.iter().zip(dys.iter()) {
                            dot += yv * dy;
                        }
                        let dst = &mut d_in[r * d..(r + 1) * d];
                        for ((o, &yv), &dy) in dst.iter_mut().zip(ys.iter()).zip(dys.iter()) {
                            *o = yv * (dy - dot);
                        }
                    }
                    self.accumulate(*input, &d_in);
                }
            }

            Op::Relu { input } => {
                if self.needs(*input) {
                    let x = self.data(*input);
                    let d_in: Vec<S> = x
                        .iter()
                        .zip(d_out.iter())
                        .map(|(&xv, &dy)| if xv > S::ZERO { dy } else { S::ZERO })
                        .collect();
                    self.accumulate(*input, &d_in);
                }
            }

            Op::Sigmoid { input } => {
                if self.needs(*input) {
                    let y = self.data(out);
                    let d_in: Vec<S> = y
                        .iter()
                        .zip(d_out.iter())
                        .map(|(&yv, &dy)| dy * yv * (S::ONE - yv))
                        .collect();
                    self.accumulate(*input, &d_in);
                }
            }

            Op::Tanh { input } => {
                if self.needs(*input) {
                    let y = self.data(out);
                    let d_in: Vec<S> = y
                        .iter()
                        .zip(d_out.iter())
                        .map(|(&yv, &dy)| dy * (S::ONE - yv * yv))
                        .collect();
                    self.accumulate(*input, &d_in);
                }
            }

            Op::Abs { input } => {
                // Subgradient 0 at exact ties.
                if self.needs(*input) {
                    let x = self.data(*input);
                    let d_in: Vec<S> = x
                        .iter()
                        .zip(d_out.iter())
                        .map(|(&xv, &dy)| {
                            if xv > S::ZERO {
                                dy
                            } else if xv < S::ZERO {
                                -dy
                            } else {
                                S::ZERO
                            }
                        })
                        .collect();
                    self.accumulate(*input, &d_in);
                }
            }

            Op::Add { a, b } => {
                if self.needs(*a) {
                    self.accumulate(*a, d_out);
                }
                if self.needs(*b) {
                    self.accumulate(*b, d_out);
                }
            }

            Op::Sub { a, b } => {
                if self.needs(*a) {
                    self.accumulate(*a, d_out);
                }
                if self.needs(*b) {
                    let neg: Vec<S> = d_out.iter().map(|&v| -v).collect();
                    self.accumulate(*b, &neg);
                }
            }

            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let d_a: Vec<S> = d_out
                        .iter()
                        .zip(self.data(*b).iter())
                        .map(|(&dy, &bv)| dy * bv)
                        .collect();
                    self.accumulate(*a, &d_a);
                }
                if self.needs(*b) {
                    let d_b: Vec<S> = d_out
                        .iter()
                        .zip(self.data(*a).iter())
                        .map(|(&dy, &av)| dy * av)
                        .collect();
                    self.accumulate(*b, &d_b);
                }
            }

            Op::Scale { input, factor } => {
                if self.needs(*input) {
                    let d_in: Vec<S> = d_out.iter().map(|&dy| dy * *factor).collect();
                    self.accumulate(*input, &d_in);
                }
            }

            Op::AddRowBroadcast { a, b, rows, d } => {
                if self.needs(*a) {
                    self.accumulate(*a, d_out);
                }
                if self.needs(*b) {
                    let mut d_b = vec![S::ZERO; *d];
                    for r in 0..*rows {
                        for (o, &dy) in d_b.iter_mut().zip(d_out[r * d..(r + 1) * d].iter()) {
                            *o += dy;
                        }
                    }
                    self.accumulate(*b, &d_b);
                }
            }

            Op::AddChanBroadcast { a, b, c, hw } => {
                if self.needs(*a) {
                    self.accumulate(*a, d_out);
                }
                if self.needs(*b) {
                    let mut d_b = vec![S::ZERO; *c];
                    for ci in 0..*c {
                        let mut acc = S::ZERO;
                        for &dy in &d_out[ci * hw..(ci + 1) * hw] {
                            acc += dy;
                        }
                        d_b[ci] = acc;
                    }
                    self.accumulate(*b, &d_b);
                }
            }

            Op::ConcatFlat { inputs, sizes } => {
                let mut off = 0usize;
                for (&inp, &sz) in inputs.iter().zip(sizes.iter()) {
                    if self.needs(inp) {
                        self.accumulate(inp, &d_out[off..off + sz]);
                    }
                    off += sz;
                }
            }

            Op::ConcatCols {
                inputs,
                rows,
                widths,
            } => {
                let total_w: usize = widths.iter().sum();
                let mut col0 = 0usize;
                for (&inp, &w) in inputs.iter().zip(widths.iter()) {
                    if self.needs(inp) {
                        let mut d_in = vec![S::ZERO; rows * w];
                        for r in 0..*rows {
                            d_in[r * w..(r + 1) * w].copy_from_slice(
                                &d_out[r * total_w + col0..r * total_w + col0 + w],
                            );
                        }
                        self.accumulate(inp, &d_in);
                    }
                    col0 += w;
                }
            }

            Op::SliceCols {
                input,
                rows,
                cols,
                start,
                width,
            } => {
                if self.needs(*input) {
                    let mut d_in = vec![S::ZERO; rows * cols];
                    for r in 0..*rows {
                        d_in[r * cols + start..r * cols + start + width]
                            .copy_from_slice(&d_out[r * width..(r + 1) * width]);
                    }
                    self.accumulate(*input, &d_in);
                }
            }

            Op::Reshape { input } => {
                if self.needs(*input) {
                    self.accumulate(*input, d_out);
                }
            }

            Op::Gather { input, idx } => {
                if self.needs(*input) {
                    let mut d_in = vec![S::ZERO; self.value(*input).numel()];
                    for (&src, &dy) in idx.iter().zip(d_out.iter()) {
                        d_in[src as usize] += dy;
                    }
                    self.accumulate(*input, &d_in);
                }
            }

            Op::SumAll { input } => {
                if self.needs(*input) {
                    let d_in = vec![d_out[0]; self.value(*input).numel()];
                    self.accumulate(*input, &d_in);
                }
            }

            Op::SumAxis0 { input, rows, d } => {
                if self.needs(*input) {
                    let mut d_in = Vec::with_capacity(rows * d);
                    for _ in 0..*rows {
                        d_in.extend_from_slice(d_out);
                    }
                    self.accumulate(*input, &d_in);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data)
    }

    #[test]
    fn matmul_identity_case() {
        let mut tape: Tape<f64> = Tape::new();
        let i2 = tape.constant(t64(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(t64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let c = tape.matmul(i2, b).unwrap();
        assert_eq!(tape.data(c), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_computed() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.constant(t64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t64(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.data(c), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn matmul_backward_follows_adjoint_formulas() {
        // loss = sum(A·B): dC is all-ones, so dA = dC·Bᵀ and dB = Aᵀ·dC.
        // With A = I₂, B = [[1,2],[3,4]]: dA = [[3,7],[3,7]], dB = all-ones.
        // Cross-checked against central finite differences below.
        let a0 = vec![1.0, 0.0, 0.0, 1.0];
        let b0 = vec![1.0, 2.0, 3.0, 4.0];
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(t64(vec![2, 2], a0.clone()), true);
        let b = tape.leaf(t64(vec![2, 2], b0.clone()), true);
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0, 7.0, 3.0, 7.0]);
        assert_eq!(tape.grad(b).unwrap(), &[1.0, 1.0, 1.0, 1.0]);

        let analytic = tape.grad(a).unwrap().to_vec();
        let worst = crate::gradcheck::check_gradient(&a0, &analytic, &[], 1e-6, |av| {
            let mut t: Tape<f64> = Tape::new();
            let a = t.constant(t64(vec![2, 2], av.to_vec()));
            let b = t.constant(t64(vec![2, 2], b0.clone()));
            let c = t.matmul(a, b).unwrap();
            let s = t.sum_all(c);
            t.data(s)[0]
        });
        assert!(worst.rel_error < 1e-9, "{worst:?}");
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut tape: Tape<f64> = Tape::new();
        let input: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let x = tape.constant(t64(vec![1, 3, 3], input.clone()));
        let k = tape.constant(t64(vec![1, 1, 1, 1], vec![1.0]));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.data(y), &input[..]);
    }

    #[test]
    fn conv2d_all_ones_sums_window() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::ones(vec![1, 3, 3]));
        let k = tape.constant(Tensor::ones(vec![1, 1, 3, 3]));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1]);
        assert_eq!(tape.data(y), &[9.0]);
    }

    #[test]
    fn conv2d_paper_stem_shape() {
        // 3×256×256 with 64 kernels 7×7 stride 2 pad 3 → 64×128×128
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![3, 256, 256]));
        let k = tape.constant(Tensor::zeros(vec![64, 3, 7, 7]));
        let y = tape.conv2d(x, k, 2, 3).unwrap();
        assert_eq!(tape.shape(y), &[64, 128, 128]);
    }

    #[test]
    fn conv2d_kernel_too_large_errors() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![1, 2, 2]));
        let k = tape.constant(Tensor::zeros(vec![1, 1, 5, 5]));
        assert!(tape.conv2d(x, k, 1, 0).is_err());
    }

    #[test]
    fn conv2d_same_padding_preserves_dims() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![2, 9, 9]));
        let k = tape.constant(Tensor::zeros(vec![4, 2, 3, 3]));
        let y = tape.conv2d(x, k, 1, 1).unwrap();
        assert_eq!(tape.shape(y), &[4, 9, 9]);
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(t64(vec![1, 2], vec![0.0, 0.0]));
        let y = tape.softmax(x);
        assert_eq!(tape.data(y), &[0.5, 0.5]);

        let x2 = tape.constant(t64(vec![1, 4], vec![7.25, 7.25, 7.25, 7.25]));
        let y2 = tape.softmax(x2);
        for &v in tape.data(y2) {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_closed_form() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(t64(vec![1, 2], vec![1.0, 2.0]));
        let y = tape.softmax(x);
        let d = tape.data(y);
        assert!((d[0] - 0.26894).abs() < 1e-5);
        assert!((d[1] - 0.73106).abs() < 1e-5);
        assert!((d[0] + d[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_spec_cases() {
        let mut tape: Tape<f64> = Tape::new();
        let gamma = tape.constant(Tensor::ones(vec![3]));
        let beta = tape.constant(Tensor::zeros(vec![3]));

        // constant vector → zeros
        let x = tape.constant(t64(vec![1, 3], vec![4.0, 4.0, 4.0]));
        let y = tape.layer_norm(x, gamma, beta, 1e-5);
        for &v in tape.data(y) {
            assert_eq!(v, 0.0);
        }

        // gamma=0, beta=5 → all 5
        let g0 = tape.constant(Tensor::zeros(vec![3]));
        let b5 = tape.constant(t64(vec![3], vec![5.0, 5.0, 5.0]));
        let x2 = tape.constant(t64(vec![1, 3], vec![1.0, -7.0, 2.5]));
        let y2 = tape.layer_norm(x2, g0, b5, 1e-5);
        for &v in tape.data(y2) {
            assert_eq!(v, 5.0);
        }
    }

    #[test]
    fn layer_norm_already_standardized() {
        // [1,-1] has mean 0 variance 1 → output ≈ [1,-1] (eps shrinks it slightly)
        let mut tape: Tape<f64> = Tape::new();
        let gamma = tape.constant(Tensor::ones(vec![2]));
        let beta = tape.constant(Tensor::zeros(vec![2]));
        let x = tape.constant(t64(vec![1, 2], vec![1.0, -1.0]));
        let y = tape.layer_norm(x, gamma, beta, 1e-5);
        let d = tape.data(y);
        assert!((d[0] - 1.0).abs() < 1e-4);
        assert!((d[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn backward_sum_of_squares() {
        // loss = sum(x²) → grad = 2x
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t64(vec![3], vec![1.0, -2.0, 3.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_accumulates_across_uses() {
        // loss = sum(x) + sum(x) → grad = 2 everywhere
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t64(vec![4], vec![0.5; 4]), true);
        let s1 = tape.sum_all(x);
        let s2 = tape.sum_all(x);
        let loss = tape.add(s1, s2).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t64(vec![2], vec![1.0, 2.0]), true);
        let y = tape.relu(x);
        assert!(matches!(
            tape.backward(y),
            Err(TensorError::NotScalar { .. })
        ));
    }

    #[test]
    fn gather_backward_scatter_adds() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.leaf(t64(vec![3], vec![1.0, 2.0, 3.0]), true);
        let idx = Arc::new(vec![0u32, 0, 2]);
        let g = tape.gather(x, idx);
        let loss = tape.sum_all(g);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_and_slice_roundtrip_gradients() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.leaf(t64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]), true);
        let b = tape.leaf(t64(vec![2, 1], vec![5.0, 6.0]), true);
        let cat = tape.concat_cols(&[a, b]);
        assert_eq!(tape.data(cat), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let right = tape.slice_cols(cat, 2, 1);
        assert_eq!(tape.data(right), &[5.0, 6.0]);
        let loss = tape.sum_all(right);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a), Some(&[0.0, 0.0, 0.0, 0.0][..]));
        assert_eq!(tape.grad(b), Some(&[1.0, 1.0][..]));
    }

    #[test]
    fn no_grad_leaf_stays_unpopulated() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(t64(vec![2], vec![1.0, 2.0]));
        let s = tape.sum_all(x);
        // sum of constants is itself constant; backward is a no-op walk
        tape.backward(s).unwrap();
        assert!(tape.grad(x).is_none());
    }
}
