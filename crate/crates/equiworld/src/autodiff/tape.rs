use super::ops;
use super::Array;
use crate::Scalar;
use std::cell::RefCell;
use std::rc::Rc;

/// Recorded primitive. Parents are node ids; saved payloads hold whatever the
/// adjoint needs beyond parent values.
#[derive(Clone)]
enum Op<S: Scalar> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, S),
    AddScalar(usize),
    Relu(usize),
    MaxConst(usize, S),
    Square(usize),
    Sqrt(usize),
    Recip(usize),
    Matmul { a: usize, b: usize },
    Conv2d { input: usize, kernels: usize, stride: usize, pad: usize },
    Conv1d { input: usize, kernels: usize, stride: usize, pad: usize, circular: bool },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: S },
    Gather { input: usize, idx: Rc<Vec<usize>> },
    PermuteCols { input: usize, perm: Rc<Vec<usize>> },
    PermuteRows { input: usize, perm: Rc<Vec<usize>> },
    ConcatCols { inputs: Vec<usize> },
    SliceCols { input: usize, start: usize, len: usize },
    Reshape(usize),
    RowSum(usize),
    Sum(usize),
    Mean(usize),
    AddRow { x: usize, row: usize },
    AddChanBias { x: usize, bias: usize },
    MulCol { x: usize, col: usize },
    Cross3 { a: usize, b: usize },
    RotLeftMul { rots: Rc<Array<S>>, z: usize },
    FiberMaxPool { input: usize, argmax: Rc<Vec<usize>> },
    BceWithLogits { logits: usize, labels: Rc<Array<S>> },
}

struct Node<S: Scalar> {
    value: Array<S>,
    op: Op<S>,
}

/// Wengert tape. Confined to one thread; rebuilt per batch.
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
}

/// Handle to a tape node. Cheap to copy; tied to the tape's lifetime.
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    pub id: usize,
}

/// Gradients produced by a backward pass, indexed by node id.
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Array<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var<'_, S>) -> Option<&Array<S>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, or zeros if no gradient flowed to it.
    pub fn get_or_zeros(&self, v: Var<'_, S>) -> Array<S> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Array::zeros(&v.shape()),
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Introduce an input (parameter or data) as a differentiable leaf.
    pub fn leaf(&self, value: Array<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf)
    }

    fn push(&self, value: Array<S>, op: Op<S>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, op });
        Var { tape: self, id }
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Array<S>) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    fn with_values2<R>(&self, a: usize, b: usize, f: impl FnOnce(&Array<S>, &Array<S>) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a].value, &nodes[b].value)
    }

    /// Concatenate 2-D arrays along the column axis.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, S>]) -> Var<'t, S> {
        assert!(!parts.is_empty(), "concat_cols: empty input list");
        let nodes = self.nodes.borrow();
        let rows = nodes[parts[0].id].value.shape()[0];
        let total: usize = parts
            .iter()
            .map(|p| {
                let sh = nodes[p.id].value.shape();
                assert_eq!(sh.len(), 2, "concat_cols expects 2-D parts, got {sh:?}");
                assert_eq!(sh[0], rows, "concat_cols: row mismatch {:?}", sh);
                sh[1]
            })
            .sum();
        let mut out = Array::zeros(&[rows, total]);
        let mut off = 0;
        for p in parts {
            let v = &nodes[p.id].value;
            let w = v.shape()[1];
            for r in 0..rows {
                let dst = r * total + off;
                out.data_mut()[dst..dst + w].copy_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
            off += w;
        }
        drop(nodes);
        self.push(out, Op::ConcatCols { inputs: parts.iter().map(|p| p.id).collect() })
    }

    /// Reverse pass from `loss` (seeded with ones), returning all gradients.
    pub fn backward(&self, loss: Var<'_, S>) -> Gradients<S> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Array<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Array::full(nodes[loss.id].value.shape(), S::one()));
        for id in (0..=loss.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            backward_op(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Array<S>>], id: usize, g: Array<S>) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[allow(clippy::too_many_lines)]
fn backward_op<S: Scalar>(nodes: &[Node<S>], id: usize, g: &Array<S>, grads: &mut [Option<Array<S>>]) {
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.scale(-S::one()));
        }
        Op::Mul(a, b) => {
            accumulate(grads, *a, g.mul(&nodes[*b].value));
            accumulate(grads, *b, g.mul(&nodes[*a].value));
        }
        Op::Neg(a) => accumulate(grads, *a, g.scale(-S::one())),
        Op::Scale(a, c) => accumulate(grads, *a, g.scale(*c)),
        Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
        Op::Relu(a) => {
            let x = &nodes[*a].value;
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gi, &xi)| if xi > S::zero() { gi } else { S::zero() })
                .collect();
            accumulate(grads, *a, Array::new(x.shape().to_vec(), data));
        }
        Op::MaxConst(a, c) => {
            let x = &nodes[*a].value;
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&gi, &xi)| if xi > *c { gi } else { S::zero() })
                .collect();
            accumulate(grads, *a, Array::new(x.shape().to_vec(), data));
        }
        Op::Square(a) => {
            let x = &nodes[*a].value;
            let two = S::from_f64_lossy(2.0);
            let data = g.data().iter().zip(x.data()).map(|(&gi, &xi)| gi * two * xi).collect();
            accumulate(grads, *a, Array::new(x.shape().to_vec(), data));
        }
        Op::Sqrt(a) => {
            let y = &nodes[id].value;
            let half = S::from_f64_lossy(0.5);
            let data = g.data().iter().zip(y.data()).map(|(&gi, &yi)| gi * half / yi).collect();
            accumulate(grads, *a, Array::new(y.shape().to_vec(), data));
        }
        Op::Recip(a) => {
            let y = &nodes[id].value;
            let data = g.data().iter().zip(y.data()).map(|(&gi, &yi)| -gi * yi * yi).collect();
            accumulate(grads, *a, Array::new(y.shape().to_vec(), data));
        }
        Op::Matmul { a, b } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            accumulate(grads, *a, ops::matmul(g, &bv.transpose2()));
            accumulate(grads, *b, ops::matmul(&av.transpose2(), g));
        }
        Op::Conv2d { input, kernels, stride, pad } => {
            let iv = &nodes[*input].value;
            let kv = &nodes[*kernels].value;
            accumulate(grads, *input, ops::conv2d_back_input(g, kv, iv.shape(), *stride, *pad));
            accumulate(grads, *kernels, ops::conv2d_back_kernels(g, iv, kv.shape(), *stride, *pad));
        }
        Op::Conv1d { input, kernels, stride, pad, circular } => {
            let iv = &nodes[*input].value;
            let kv = &nodes[*kernels].value;
            accumulate(grads, *input, ops::conv1d_back_input(g, kv, iv.shape(), *stride, *pad, *circular));
            accumulate(grads, *kernels, ops::conv1d_back_kernels(g, iv, kv.shape(), *stride, *pad, *circular));
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            layer_norm_backward(nodes, id, *x, *gain, *bias, *eps, g, grads);
        }
        Op::Gather { input, idx } => {
            let ish = nodes[*input].value.shape().to_vec();
            let mut gin = Array::zeros(&ish);
            for (o, &i) in idx.iter().enumerate() {
                gin.data_mut()[i] += g.data()[o];
            }
            accumulate(grads, *input, gin);
        }
        Op::PermuteCols { input, perm } => {
            let sh = nodes[*input].value.shape().to_vec();
            let (rows, cols) = (sh[0], sh[1]);
            let mut gin = Array::zeros(&sh);
            for r in 0..rows {
                for (j, &p) in perm.iter().enumerate() {
                    gin.data_mut()[r * cols + p] += g.data()[r * cols + j];
                }
            }
            accumulate(grads, *input, gin);
        }
        Op::PermuteRows { input, perm } => {
            let sh = nodes[*input].value.shape().to_vec();
            let cols: usize = sh[1..].iter().product();
            let mut gin = Array::zeros(&sh);
            for (r, &p) in perm.iter().enumerate() {
                let dst = &mut gin.data_mut()[p * cols..(p + 1) * cols];
                let src = &g.data()[r * cols..(r + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += *s;
                }
            }
            accumulate(grads, *input, gin);
        }
        Op::ConcatCols { inputs } => {
            let total = nodes[id].value.shape()[1];
            let rows = nodes[id].value.shape()[0];
            let mut off = 0;
            for inp in inputs {
                let w = nodes[*inp].value.shape()[1];
                let mut gi = Array::zeros(&[rows, w]);
                for r in 0..rows {
                    gi.data_mut()[r * w..(r + 1) * w]
                        .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                }
                accumulate(grads, *inp, gi);
                off += w;
            }
        }
        Op::SliceCols { input, start, len } => {
            let sh = nodes[*input].value.shape().to_vec();
            let (rows, cols) = (sh[0], sh[1]);
            let mut gin = Array::zeros(&sh);
            for r in 0..rows {
                gin.data_mut()[r * cols + start..r * cols + start + len]
                    .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
            }
            accumulate(grads, *input, gin);
        }
        Op::Reshape(a) => {
            let sh = nodes[*a].value.shape().to_vec();
            accumulate(grads, *a, g.clone().reshaped(&sh));
        }
        Op::RowSum(a) => {
            let sh = nodes[*a].value.shape().to_vec();
            let (rows, cols) = (sh[0], sh[1]);
            let mut gin = Array::zeros(&sh);
            for r in 0..rows {
                let gr = g.data()[r];
                for c in 0..cols {
                    gin.data_mut()[r * cols + c] = gr;
                }
            }
            accumulate(grads, *a, gin);
        }
        Op::Sum(a) => {
            let sh = nodes[*a].value.shape().to_vec();
            accumulate(grads, *a, Array::full(&sh, g.data()[0]));
        }
        Op::Mean(a) => {
            let sh = nodes[*a].value.shape().to_vec();
            let n = S::from_f64_lossy(nodes[*a].value.numel() as f64);
            accumulate(grads, *a, Array::full(&sh, g.data()[0] / n));
        }
        Op::AddRow { x, row } => {
            accumulate(grads, *x, g.clone());
            let d = nodes[*row].value.numel();
            let rows = g.numel() / d;
            let mut gr = Array::zeros(&[d]);
            for r in 0..rows {
                for j in 0..d {
                    gr.data_mut()[j] += g.data()[r * d + j];
                }
            }
            accumulate(grads, *row, gr);
        }
        Op::AddChanBias { x, bias } => {
            accumulate(grads, *x, g.clone());
            let sh = nodes[*x].value.shape().to_vec();
            let (b, c) = (sh[0], sh[1]);
            let rest: usize = sh[2..].iter().product();
            let mut gb = Array::zeros(&[c]);
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * rest;
                    let mut acc = S::zero();
                    for r in 0..rest {
                        acc += g.data()[base + r];
                    }
                    gb.data_mut()[ci] += acc;
                }
            }
            accumulate(grads, *bias, gb);
        }
        Op::MulCol { x, col } => {
            let xv = &nodes[*x].value;
            let cv = &nodes[*col].value;
            let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
            let mut gx = Array::zeros(&[rows, cols]);
            let mut gc = Array::zeros(&[rows]);
            for r in 0..rows {
                let c = cv.data()[r];
                let mut acc = S::zero();
                for j in 0..cols {
                    gx.data_mut()[r * cols + j] = g.data()[r * cols + j] * c;
                    acc += g.data()[r * cols + j] * xv.data()[r * cols + j];
                }
                gc.data_mut()[r] = acc;
            }
            accumulate(grads, *x, gx);
            accumulate(grads, *col, gc);
        }
        Op::Cross3 { a, b } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let rows = av.shape()[0];
            let mut ga = Array::zeros(&[rows, 3]);
            let mut gb = Array::zeros(&[rows, 3]);
            for r in 0..rows {
                let u = &av.data()[r * 3..r * 3 + 3];
                let v = &bv.data()[r * 3..r * 3 + 3];
                let gr = &g.data()[r * 3..r * 3 + 3];
                let du = cross(v, gr);
                let dv = cross(gr, u);
                ga.data_mut()[r * 3..r * 3 + 3].copy_from_slice(&du);
                gb.data_mut()[r * 3..r * 3 + 3].copy_from_slice(&dv);
            }
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::RotLeftMul { rots, z } => {
            let rows = rots.shape()[0];
            let mut gz = Array::zeros(&[rows, 9]);
            for bi in 0..rows {
                let rd = &rots.data()[bi * 9..bi * 9 + 9];
                let gd = &g.data()[bi * 9..bi * 9 + 9];
                // dZ = R^T G
                for k in 0..3 {
                    for c in 0..3 {
                        let mut acc = S::zero();
                        for r in 0..3 {
                            acc += rd[r * 3 + k] * gd[r * 3 + c];
                        }
                        gz.data_mut()[bi * 9 + k * 3 + c] = acc;
                    }
                }
            }
            accumulate(grads, *z, gz);
        }
        Op::FiberMaxPool { input, argmax } => {
            let ish = nodes[*input].value.shape().to_vec();
            let mut gin = Array::zeros(&ish);
            for (o, &i) in argmax.iter().enumerate() {
                gin.data_mut()[i] += g.data()[o];
            }
            accumulate(grads, *input, gin);
        }
        Op::BceWithLogits { logits, labels } => {
            let xv = &nodes[*logits].value;
            let n = S::from_f64_lossy(xv.numel() as f64);
            let gs = g.data()[0];
            let data = xv
                .data()
                .iter()
                .zip(labels.data())
                .map(|(&x, &y)| {
                    let sig = S::one() / (S::one() + (-x).exp());
                    gs * (sig - y) / n
                })
                .collect();
            accumulate(grads, *logits, Array::new(xv.shape().to_vec(), data));
        }
    }
}

fn cross<S: Scalar>(a: &[S], b: &[S]) -> [S; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<S: Scalar>(
    nodes: &[Node<S>],
    _id: usize,
    x: usize,
    gain: usize,
    bias: usize,
    eps: S,
    g: &Array<S>,
    grads: &mut [Option<Array<S>>],
) {
    let xv = &nodes[x].value;
    let gv = &nodes[gain].value;
    let d = *xv.shape().last().unwrap();
    let rows = xv.numel() / d;
    let dn = S::from_f64_lossy(d as f64);
    let mut gx = Array::zeros(xv.shape());
    let mut ggain = Array::zeros(&[d]);
    let mut gbias = Array::zeros(&[d]);
    for r in 0..rows {
        let xr = &xv.data()[r * d..(r + 1) * d];
        let gr = &g.data()[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<S>() / dn;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
        let inv = S::one() / (var + eps).sqrt();
        // dxhat, and the two row means the normalization couples in.
        let mut mean_dxh = S::zero();
        let mut mean_dxh_xh = S::zero();
        let mut dxh = vec![S::zero(); d];
        let mut xh = vec![S::zero(); d];
        for j in 0..d {
            xh[j] = (xr[j] - mean) * inv;
            dxh[j] = gr[j] * gv.data()[j];
            mean_dxh += dxh[j];
            mean_dxh_xh += dxh[j] * xh[j];
            ggain.data_mut()[j] += gr[j] * xh[j];
            gbias.data_mut()[j] += gr[j];
        }
        mean_dxh /= dn;
        mean_dxh_xh /= dn;
        for j in 0..d {
            gx.data_mut()[r * d + j] = inv * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    accumulate(grads, x, gx);
    accumulate(grads, gain, ggain);
    accumulate(grads, bias, gbias);
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn value(&self) -> Array<S> {
        self.tape.with_value(self.id, |v| v.clone())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |v| v.shape().to_vec())
    }

    /// Scalar value of a one-element node.
    pub fn scalar_value(&self) -> S {
        self.tape.with_value(self.id, |v| {
            assert_eq!(v.numel(), 1, "scalar_value on shape {:?}", v.shape());
            v.data()[0]
        })
    }

    pub fn add(self, other: Var<'t, S>) -> Var<'t, S> {
        let out = self.tape.with_values2(self.id, other.id, |a, b| a.add(b));
        self.tape.push(out, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t, S>) -> Var<'t, S> {
        let out = self.tape.with_values2(self.id, other.id, |a, b| a.sub(b));
        self.tape.push(out, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t, S>) -> Var<'t, S> {
        let out = self.tape.with_values2(self.id, other.id, |a, b| a.mul(b));
        self.tape.push(out, Op::Mul(self.id, other.id))
    }

    pub fn neg(self) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| v.scale(-S::one()));
        self.tape.push(out, Op::Neg(self.id))
    }

    pub fn scale(self, c: S) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| v.scale(c));
        self.tape.push(out, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: S) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| v.map(|x| x + c));
        self.tape.push(out, Op::AddScalar(self.id))
    }

    pub fn relu(self) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| v.map(|x| x.max(S::zero())));
        self.tape.push(out, Op::Relu(self.id))
    }

    /// Elementwise max(x, c); subgradient 0 at the tie.
    pub fn max_const(self, c: S) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| v.map(|x| x.max(c)));
        self.tape.push(out, Op::MaxConst(self.id, c))
    }

    pub fn square(self) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| v.map(|x| x * x));
        self.tape.push(out, Op::Square(self.id))
    }

    pub fn sqrt(self) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| v.map(|x| x.sqrt()));
        self.tape.push(out, Op::Sqrt(self.id))
    }

    pub fn recip(self) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| v.map(|x| S::one() / x));
        self.tape.push(out, Op::Recip(self.id))
    }

    pub fn matmul(self, other: Var<'t, S>) -> Var<'t, S> {
        let out = self.tape.with_values2(self.id, other.id, |a, b| ops::matmul(a, b));
        self.tape.push(out, Op::Matmul { a: self.id, b: other.id })
    }

    /// Batched 2-D cross-correlation; input [B,Cin,H,W], kernels [Cout,Cin,kh,kw].
    pub fn conv2d(self, kernels: Var<'t, S>, stride: usize, pad: usize) -> Var<'t, S> {
        let out = self
            .tape
            .with_values2(self.id, kernels.id, |i, k| ops::conv2d_fwd(i, k, stride, pad));
        self.tape.push(out, Op::Conv2d { input: self.id, kernels: kernels.id, stride, pad })
    }

    /// Batched 1-D cross-correlation; circular padding wraps indices.
    pub fn conv1d(self, kernels: Var<'t, S>, stride: usize, pad: usize, circular: bool) -> Var<'t, S> {
        let out = self
            .tape
            .with_values2(self.id, kernels.id, |i, k| ops::conv1d_fwd(i, k, stride, pad, circular));
        self.tape
            .push(out, Op::Conv1d { input: self.id, kernels: kernels.id, stride, pad, circular })
    }

    /// Normalize each row over the last axis to zero mean and unit variance,
    /// then apply the affine gain/bias.
    pub fn layer_norm(self, gain: Var<'t, S>, bias: Var<'t, S>, eps: S) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |x| {
            let d = *x.shape().last().expect("layer_norm on 0-D input");
            assert!(d >= 2, "layer_norm needs last dim >= 2, got {:?}", x.shape());
            let rows = x.numel() / d;
            let gv = self.tape.with_value(gain.id, |g| g.clone());
            let bv = self.tape.with_value(bias.id, |b| b.clone());
            assert_eq!(gv.numel(), d, "layer_norm gain shape {:?}", gv.shape());
            assert_eq!(bv.numel(), d, "layer_norm bias shape {:?}", bv.shape());
            let dn = S::from_f64_lossy(d as f64);
            let mut out = Array::zeros(x.shape());
            for r in 0..rows {
                let xr = &x.data()[r * d..(r + 1) * d];
                let mean = xr.iter().copied().sum::<S>() / dn;
                let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
                let inv = S::one() / (var + eps).sqrt();
                for j in 0..d {
                    out.data_mut()[r * d + j] = (xr[j] - mean) * inv * gv.data()[j] + bv.data()[j];
                }
            }
            out
        });
        self.tape.push(out, Op::LayerNorm { x: self.id, gain: gain.id, bias: bias.id, eps })
    }

    /// out.data[i] = in.data[idx[i]]; adjoint scatter-adds. The workhorse for
    /// exact index permutations (kernel rotations, fiber bookkeeping).
    pub fn gather(self, idx: Rc<Vec<usize>>, out_shape: &[usize]) -> Var<'t, S> {
        let numel: usize = out_shape.iter().product();
        assert_eq!(idx.len(), numel, "gather: {} indices for shape {:?}", idx.len(), out_shape);
        let out = self.tape.with_value(self.id, |v| {
            let data = idx.iter().map(|&i| v.data()[i]).collect();
            Array::new(out_shape.to_vec(), data)
        });
        self.tape.push(out, Op::Gather { input: self.id, idx })
    }

    /// out[r, j] = in[r, perm[j]] for a 2-D array.
    pub fn permute_cols(self, perm: Rc<Vec<usize>>) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| {
            let (rows, cols) = (v.shape()[0], v.shape()[1]);
            assert_eq!(perm.len(), cols, "permute_cols: perm len {} vs cols {cols}", perm.len());
            let mut out = Array::zeros(&[rows, cols]);
            for r in 0..rows {
                for (j, &p) in perm.iter().enumerate() {
                    out.data_mut()[r * cols + j] = v.data()[r * cols + p];
                }
            }
            out
        });
        self.tape.push(out, Op::PermuteCols { input: self.id, perm })
    }

    /// out[r, ..] = in[perm[r], ..].
    pub fn permute_rows(self, perm: Rc<Vec<usize>>) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| {
            let rows = v.shape()[0];
            assert_eq!(perm.len(), rows, "permute_rows: perm len {} vs rows {rows}", perm.len());
            let cols: usize = v.shape()[1..].iter().product();
            let mut out = Array::zeros(v.shape());
            for (r, &p) in perm.iter().enumerate() {
                out.data_mut()[r * cols..(r + 1) * cols]
                    .copy_from_slice(&v.data()[p * cols..(p + 1) * cols]);
            }
            out
        });
        self.tape.push(out, Op::PermuteRows { input: self.id, perm })
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| {
            let (rows, cols) = (v.shape()[0], v.shape()[1]);
            assert!(start + len <= cols, "slice_cols {start}+{len} > {cols}");
            let mut out = Array::zeros(&[rows, len]);
            for r in 0..rows {
                out.data_mut()[r * len..(r + 1) * len]
                    .copy_from_slice(&v.data()[r * cols + start..r * cols + start + len]);
            }
            out
        });
        self.tape.push(out, Op::SliceCols { input: self.id, start, len })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| v.clone().reshaped(shape));
        self.tape.push(out, Op::Reshape(self.id))
    }

    /// Sum each row of a 2-D array: [B,d] -> [B].
    pub fn row_sum(self) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| {
            assert_eq!(v.shape().len(), 2, "row_sum on {:?}", v.shape());
            let (rows, cols) = (v.shape()[0], v.shape()[1]);
            let data = (0..rows).map(|r| v.data()[r * cols..(r + 1) * cols].iter().copied().sum()).collect();
            Array::new(vec![rows], data)
        });
        self.tape.push(out, Op::RowSum(self.id))
    }

    pub fn sum(self) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| Array::scalar(v.sum()));
        self.tape.push(out, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |v| {
            Array::scalar(v.sum() / S::from_f64_lossy(v.numel() as f64))
        });
        self.tape.push(out, Op::Mean(self.id))
    }

    /// Broadcast-add a [d] row vector to each row of [B,d].
    pub fn add_row(self, row: Var<'t, S>) -> Var<'t, S> {
        let out = self.tape.with_values2(self.id, row.id, |x, r| {
            let d = r.numel();
            assert_eq!(
                *x.shape().last().unwrap(),
                d,
                "add_row: {:?} vs row {:?}",
                x.shape(),
                r.shape()
            );
            let rows = x.numel() / d;
            let mut out = x.clone();
            for ri in 0..rows {
                for j in 0..d {
                    out.data_mut()[ri * d + j] += r.data()[j];
                }
            }
            out
        });
        self.tape.push(out, Op::AddRow { x: self.id, row: row.id })
    }

    /// Broadcast-add a per-channel bias [C] to [B,C,..spatial..].
    pub fn add_chan_bias(self, bias: Var<'t, S>) -> Var<'t, S> {
        let out = self.tape.with_values2(self.id, bias.id, |x, bv| {
            assert!(x.shape().len() >= 2, "add_chan_bias on {:?}", x.shape());
            let (b, c) = (x.shape()[0], x.shape()[1]);
            assert_eq!(bv.numel(), c, "add_chan_bias: {:?} vs bias {:?}", x.shape(), bv.shape());
            let rest: usize = x.shape()[2..].iter().product();
            let mut out = x.clone();
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * rest;
                    let bb = bv.data()[ci];
                    for r in 0..rest {
                        out.data_mut()[base + r] += bb;
                    }
                }
            }
            out
        });
        self.tape.push(out, Op::AddChanBias { x: self.id, bias: bias.id })
    }

    /// Multiply each row of [B,d] by the matching entry of a [B] column.
    pub fn mul_col(self, col: Var<'t, S>) -> Var<'t, S> {
        let out = self.tape.with_values2(self.id, col.id, |x, c| {
            let (rows, cols) = (x.shape()[0], x.shape()[1]);
            assert_eq!(c.numel(), rows, "mul_col: {:?} vs col {:?}", x.shape(), c.shape());
            let mut out = x.clone();
            for r in 0..rows {
                let cv = c.data()[r];
                for j in 0..cols {
                    out.data_mut()[r * cols + j] *= cv;
                }
            }
            out
        });
        self.tape.push(out, Op::MulCol { x: self.id, col: col.id })
    }

    /// Row-wise 3-D cross product of [B,3] arrays.
    pub fn cross3(self, other: Var<'t, S>) -> Var<'t, S> {
        let out = self.tape.with_values2(self.id, other.id, |a, b| {
            assert_eq!(a.shape(), b.shape(), "cross3: {:?} vs {:?}", a.shape(), b.shape());
            assert_eq!(a.shape()[1], 3, "cross3 expects [B,3], got {:?}", a.shape());
            let rows = a.shape()[0];
            let mut out = Array::zeros(&[rows, 3]);
            for r in 0..rows {
                let c = cross(&a.data()[r * 3..r * 3 + 3], &b.data()[r * 3..r * 3 + 3]);
                out.data_mut()[r * 3..r * 3 + 3].copy_from_slice(&c);
            }
            out
        });
        self.tape.push(out, Op::Cross3 { a: self.id, b: other.id })
    }

    /// Per-row 3x3 left matrix multiply: out[b] = rots[b] * z[b], both
    /// row-major flattened. The rotations are data, not differentiated.
    pub fn rot_left_mul(self, rots: &Array<S>) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |z| {
            assert_eq!(z.shape(), rots.shape(), "rot_left_mul: {:?} vs {:?}", z.shape(), rots.shape());
            assert_eq!(z.shape()[1], 9, "rot_left_mul expects [B,9], got {:?}", z.shape());
            let rows = z.shape()[0];
            let mut out = Array::zeros(&[rows, 9]);
            for bi in 0..rows {
                let rd = &rots.data()[bi * 9..bi * 9 + 9];
                let zd = &z.data()[bi * 9..bi * 9 + 9];
                for r in 0..3 {
                    for c in 0..3 {
                        let mut acc = S::zero();
                        for k in 0..3 {
                            acc += rd[r * 3 + k] * zd[k * 3 + c];
                        }
                        out.data_mut()[bi * 9 + r * 3 + c] = acc;
                    }
                }
            }
            out
        });
        self.tape.push(out, Op::RotLeftMul { rots: Rc::new(rots.clone()), z: self.id })
    }

    /// Max over the fiber axis of [B,C,F,H,W] -> [B,C,H,W]. Ties pick the
    /// first fiber element so the adjoint routing is deterministic.
    pub fn fiber_max_pool(self) -> Var<'t, S> {
        let (out, argmax) = self.tape.with_value(self.id, |v| {
            let sh = v.shape();
            assert_eq!(sh.len(), 5, "fiber_max_pool expects [B,C,F,H,W], got {sh:?}");
            let (b, c, f, h, w) = (sh[0], sh[1], sh[2], sh[3], sh[4]);
            let mut out = Array::zeros(&[b, c, h, w]);
            let mut argmax = vec![0usize; b * c * h * w];
            for bi in 0..b {
                for ci in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            let o = ((bi * c + ci) * h + y) * w + x;
                            let mut best = S::neg_infinity();
                            let mut besti = 0;
                            for fi in 0..f {
                                let i = (((bi * c + ci) * f + fi) * h + y) * w + x;
                                if v.data()[i] > best {
                                    best = v.data()[i];
                                    besti = i;
                                }
                            }
                            out.data_mut()[o] = best;
                            argmax[o] = besti;
                        }
                    }
                }
            }
            (out, argmax)
        });
        self.tape.push(out, Op::FiberMaxPool { input: self.id, argmax: Rc::new(argmax) })
    }

    /// Mean binary cross-entropy with logits against fixed labels
    /// (numerically stable form). Returns a scalar.
    pub fn bce_with_logits(self, labels: &Array<S>) -> Var<'t, S> {
        let out = self.tape.with_value(self.id, |x| {
            assert_eq!(x.shape(), labels.shape(), "bce: {:?} vs labels {:?}", x.shape(), labels.shape());
            let n = S::from_f64_lossy(x.numel() as f64);
            let total: S = x
                .data()
                .iter()
                .zip(labels.data())
                .map(|(&xi, &yi)| xi.max(S::zero()) - xi * yi + (S::one() + (-xi.abs()).exp()).ln())
                .sum();
            Array::scalar(total / n)
        });
        self.tape
            .push(out, Op::BceWithLogits { logits: self.id, labels: Rc::new(labels.clone()) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Arr;

    #[test]
    fn matmul_rotation_of_unit_vector() {
        let tape = Tape::<f64>::new();
        let rot = tape.leaf(Arr::from_f64(&[2, 2], &[0.0, -1.0, 1.0, 0.0]));
        let x = tape.leaf(Arr::from_f64(&[2, 1], &[1.0, 0.0]));
        let y = rot.matmul(x);
        assert_eq!(y.value().data(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_forward_and_hinge_arm() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Arr::from_f64(&[3], &[-1.0, 0.0, 2.0]));
        assert_eq!(x.relu().value().data(), &[0.0, 0.0, 2.0]);
        // max(0, 1 - d) at d = 0.25.
        let d = tape.leaf(Arr::scalar(0.25));
        let hinge = d.neg().add_scalar(1.0).relu();
        assert_eq!(hinge.scalar_value(), 0.75);
    }

    #[test]
    fn backward_through_chain() {
        // loss = sum((a*b + a)^2); a=3, b=5 -> d/da = 2*(ab+a)*(b+1) = 2*18*6 = 216
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Arr::scalar(3.0));
        let b = tape.leaf(Arr::scalar(5.0));
        let loss = a.mul(b).add(a).square().sum();
        let grads = tape.backward(loss);
        assert_eq!(grads.get(a).unwrap().data()[0], 216.0);
        assert_eq!(grads.get(b).unwrap().data()[0], 2.0 * 18.0 * 3.0);
    }

    #[test]
    fn layer_norm_constant_row_is_bias() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Arr::from_f64(&[1, 4], &[5.0, 5.0, 5.0, 5.0]));
        let gain = tape.leaf(Arr::from_f64(&[4], &[1.0; 4]));
        let bias = tape.leaf(Arr::from_f64(&[4], &[0.5; 4]));
        let y = x.layer_norm(gain, bias, 1e-5);
        for &v in y.value().data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_already_normalized() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Arr::from_f64(&[1, 2], &[1.0, -1.0]));
        let gain = tape.leaf(Arr::from_f64(&[2], &[1.0, 1.0]));
        let bias = tape.leaf(Arr::from_f64(&[2], &[0.0, 0.0]));
        let y = x.layer_norm(gain, bias, 1e-5);
        // Variance denominator carries the 1e-5 epsilon.
        assert!((y.value().data()[0] - 1.0).abs() < 1e-4);
        assert!((y.value().data()[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn gather_scatter_adjoint_roundtrip() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Arr::from_f64(&[4], &[1.0, 2.0, 3.0, 4.0]));
        // Duplicate index 0; its adjoint must accumulate.
        let y = x.gather(Rc::new(vec![0, 0, 3]), &[3]);
        let loss = y.sum();
        let grads = tape.backward(loss);
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    #[should_panic(expected = "inner extents differ")]
    fn matmul_shape_mismatch_names_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Arr::zeros(&[2, 3]));
        let b = tape.leaf(Arr::zeros(&[4, 2]));
        let _ = a.matmul(b);
    }
}
