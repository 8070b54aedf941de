//! Reverse-mode automatic differentiation over an append-only graph.
//!
//! A [`Graph`] records every primitive applied to its nodes. Nodes are
//! appended in evaluation order, so the node list is already topologically
//! sorted and [`Graph::backward`] walks it once in reverse, accumulating
//! gradients additively wherever a node feeds several consumers.
//!
//! One graph serves one forward pass and one backward pass. Batches build
//! one graph per example.

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
    },
    Relu(NodeId),
    AvgPool2(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Flatten(NodeId),
    Sum(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
        // softmax probabilities saved for the backward pass
        probs: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`, or `None` when the node
    /// does not require gradients.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf (parameter or input). Leaves with `requires_grad = false`
    /// are treated as constants by the backward pass.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Matrix product of an `m×k` node and a `k×n` node.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, k2, n) = match (av.shape(), bv.shape()) {
            (&[m, k], &[k2, n]) => (m, k, k2, n),
            (sa, sb) => {
                return Err(Error::Dimension(format!(
                    "matmul needs two matrices, got {sa:?} and {sb:?}"
                )))
            }
        };
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions disagree: {:?} × {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let out = Tensor::new(vec![m, n], matmul_raw(av.data(), bv.data(), m, k, n))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// 3×3 cross-correlation, stride 1, zero padding 1, with an optional
    /// per-filter bias of length F.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let x = self.value(input);
        let k = self.value(kernel);
        let (c, h, w) = x.chw()?;
        let (f, kc) = match k.shape() {
            &[f, kc, 3, 3] => (f, kc),
            s => return Err(Error::Dimension(format!("conv2d kernel must be F×C×3×3, got {s:?}"))),
        };
        if kc != c {
            return Err(Error::Dimension(format!(
                "conv2d kernel expects {kc} channels but input {:?} has {c}",
                x.shape()
            )));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [f] {
                return Err(Error::Dimension(format!(
                    "conv2d bias must have shape [{f}], got {:?}",
                    self.value(b).shape()
                )));
            }
        }
        let mut out = conv3x3_forward(x.data(), k.data(), c, h, w, f);
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (plane, &bf) in out.chunks_exact_mut(h * w).zip(bv) {
                plane.iter_mut().for_each(|v| *v += bf);
            }
        }
        let out = Tensor::new(vec![f, h, w], out)?;
        let mut ids = vec![input, kernel];
        ids.extend(bias);
        let rg = self.needs(&ids);
        Ok(self.push(out, Op::Conv2d { input, kernel, bias }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.needs(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// 2×2 mean pooling; odd trailing rows/columns average the cells present.
    pub fn avgpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (c, h, w) = xv.chw()?;
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let d = xv.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for oi in 0..oh {
                for oj in 0..ow {
                    let (mut s, mut n) = (0.0, 0usize);
                    for i in 2 * oi..(2 * oi + 2).min(h) {
                        for j in 2 * oj..(2 * oj + 2).min(w) {
                            s += d[(ch * h + i) * w + j];
                            n += 1;
                        }
                    }
                    out[(ch * oh + oi) * ow + oj] = s / n as f64;
                }
            }
        }
        let out = Tensor::new(vec![c, oh, ow], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::AvgPool2(x), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.value(x).scaled(c);
        let rg = self.needs(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Reshapes to a column vector `[n, 1]`, ready for a matmul on the left.
    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let n = v.len();
        let out = Tensor::new(vec![n, 1], v.data().to_vec()).expect("element count preserved");
        let rg = self.needs(&[x]);
        self.push(out, Op::Flatten(x), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    /// `logsumexp(logits) - logits[label]`, computed with max subtraction.
    /// Logits of any shape are read as a flat vector of K scores.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(Error::Index(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        let (loss, probs) = softmax_ce(z, label);
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, label, probs },
            rg,
        ))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        }
        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
        if !self.nodes[id.0].requires_grad {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, op: &Op, value: &Tensor, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.nodes[a.0].requires_grad {
                    let bt = transpose(bv.data(), k, n);
                    let ga = matmul_raw(up.data(), &bt, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga)?)?;
                }
                if self.nodes[b.0].requires_grad {
                    let at = transpose(av.data(), m, k);
                    let gb = matmul_raw(&at, up.data(), k, m, n);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb)?)?;
                }
            }
            Op::Conv2d { input, kernel, bias } => {
                let x = self.value(*input);
                let kv = self.value(*kernel);
                let (c, h, w) = x.chw()?;
                let f = kv.shape()[0];
                if self.nodes[input.0].requires_grad {
                    let gx = conv3x3_grad_input(up.data(), kv.data(), c, h, w, f);
                    self.accumulate(grads, *input, Tensor::new(vec![c, h, w], gx)?)?;
                }
                if self.nodes[kernel.0].requires_grad {
                    let gk = conv3x3_grad_kernel(up.data(), x.data(), c, h, w, f);
                    self.accumulate(grads, *kernel, Tensor::new(vec![f, c, 3, 3], gk)?)?;
                }
                if let Some(b) = bias {
                    let gb: Vec<f64> = up.data().chunks_exact(h * w).map(|p| p.iter().sum()).collect();
                    self.accumulate(grads, *b, Tensor::new(vec![f], gb)?)?;
                }
            }
            Op::Relu(x) => {
                let g = value.zip_with(up, |v, u| if v > 0.0 { u } else { 0.0 })?;
                self.accumulate(grads, *x, g)?;
            }
            Op::AvgPool2(x) => {
                let (c, h, w) = self.value(*x).chw()?;
                let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
                let mut g = vec![0.0; c * h * w];
                let u = up.data();
                for ch in 0..c {
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let ri = (2 * oi..(2 * oi + 2).min(h)).len();
                            let rj = (2 * oj..(2 * oj + 2).min(w)).len();
                            let share = u[(ch * oh + oi) * ow + oj] / (ri * rj) as f64;
                            for i in 2 * oi..2 * oi + ri {
                                for j in 2 * oj..2 * oj + rj {
                                    g[(ch * h + i) * w + j] += share;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![c, h, w], g)?)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, up.clone())?;
                self.accumulate(grads, *b, up.clone())?;
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, up.scaled(*c))?;
            }
            Op::Flatten(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, up.clone().reshape(&shape)?)?;
            }
            Op::Sum(x) => {
                let g = Tensor::full(self.value(*x).shape(), up.data()[0]);
                self.accumulate(grads, *x, g)?;
            }
            Op::SoftmaxCrossEntropy { logits, label, probs } => {
                let u = up.data()[0];
                let mut g: Vec<f64> = probs.iter().map(|p| p * u).collect();
                g[*label] -= u;
                let shape = self.value(*logits).shape().to_vec();
                self.accumulate(grads, *logits, Tensor::new(shape, g)?)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_ce(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    let lse = m + s.ln();
    (lse - z[label], exps.iter().map(|e| e / s).collect())
}

fn transpose(d: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = d[i * cols + j];
        }
    }
    out
}

/// Column span `[j0, j1)` of output positions whose tap `dx` lands inside
/// the input row, and the matching input offset.
#[inline]
fn tap_range(dx: usize, w: usize) -> (usize, usize) {
    match dx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w - 1),
    }
}

fn conv3x3_forward(x: &[f64], k: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let mut out = vec![0.0; f * h * w];
    for fi in 0..f {
        let plane = &mut out[fi * h * w..(fi + 1) * h * w];
        for ci in 0..c {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            for dy in 0..3 {
                let (i0, i1) = tap_range(dy, h);
                for dx in 0..3 {
                    let wt = k[((fi * c + ci) * 3 + dy) * 3 + dx];
                    if wt == 0.0 {
                        continue;
                    }
                    let (j0, j1) = tap_range(dx, w);
                    for i in i0..i1 {
                        let si = i + dy - 1;
                        let orow = &mut plane[i * w + j0..i * w + j1];
                        let irow = &xin[si * w + j0 + dx - 1..si * w + j1 + dx - 1];
                        for (o, &v) in orow.iter_mut().zip(irow) {
                            *o += wt * v;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv3x3_grad_input(up: &[f64], k: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let mut gx = vec![0.0; c * h * w];
    for fi in 0..f {
        let uplane = &up[fi * h * w..(fi + 1) * h * w];
        for ci in 0..c {
            let gplane = &mut gx[ci * h * w..(ci + 1) * h * w];
            for dy in 0..3 {
                let (i0, i1) = tap_range(dy, h);
                for dx in 0..3 {
                    let wt = k[((fi * c + ci) * 3 + dy) * 3 + dx];
                    if wt == 0.0 {
                        continue;
                    }
                    let (j0, j1) = tap_range(dx, w);
                    for i in i0..i1 {
                        let si = i + dy - 1;
                        let urow = &uplane[i * w + j0..i * w + j1];
                        let grow = &mut gplane[si * w + j0 + dx - 1..si * w + j1 + dx - 1];
                        for (g, &u) in grow.iter_mut().zip(urow) {
                            *g += wt * u;
                        }
                    }
                }
            }
        }
    }
    gx
}

fn conv3x3_grad_kernel(up: &[f64], x: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let mut gk = vec![0.0; f * c * 9];
    for fi in 0..f {
        let uplane = &up[fi * h * w..(fi + 1) * h * w];
        for ci in 0..c {
            let xin = &x[ci * h * w..(ci + 1) * h * w];
            for dy in 0..3 {
                let (i0, i1) = tap_range(dy, h);
                for dx in 0..3 {
                    let (j0, j1) = tap_range(dx, w);
                    let mut s = 0.0;
                    for i in i0..i1 {
                        let si = i + dy - 1;
                        let urow = &uplane[i * w + j0..i * w + j1];
                        let irow = &xin[si * w + j0 + dx - 1..si * w + j1 + dx - 1];
                        s += urow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gk[((fi * c + ci) * 3 + dy) * 3 + dx] = s;
                }
            }
        }
    }
    gk
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out.data_mut()[i * n + j] = s;
            }
        }
        out
    }

    fn naive_conv(x: &Tensor, k: &Tensor) -> Tensor {
        let (c, h, w) = x.chw().unwrap();
        let f = k.shape()[0];
        let mut out = Tensor::zeros(&[f, h, w]);
        for fi in 0..f {
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for dy in 0..3isize {
                            for dx in 0..3isize {
                                let (si, sj) = (i + dy - 1, j + dx - 1);
                                if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                    continue;
                                }
                                s += k.data()[((fi * c + ci) * 3 + dy as usize) * 3 + dx as usize]
                                    * x.data()[(ci * h + si as usize) * w + sj as usize];
                            }
                        }
                    }
                    out.data_mut()[(fi * h + i as usize) * w + j as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_zeros() {
        let mut g = Graph::new();
        let i2 = g.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(), false);
        let b = g.leaf(Tensor::new(vec![2, 2], vec![3.0, -1.5, 2.0, 7.0]).unwrap(), false);
        let p = g.matmul(i2, b).unwrap();
        assert_eq!(g.value(p), g.value(b));

        let z = g.leaf(Tensor::zeros(&[2, 3]), false);
        let b3 = g.leaf(Tensor::full(&[3, 4], 2.5), false);
        let p = g.matmul(z, b3).unwrap();
        assert_eq!(g.value(p), &Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_tensor(&mut rng, &[3, 3]);
        let b = rand_tensor(&mut rng, &[3, 3]);
        let mut g = Graph::new();
        let (ia, ib) = (g.leaf(a.clone(), false), g.leaf(b.clone(), false));
        let p = g.matmul(ia, ib).unwrap();
        assert!(g.value(p).max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]), false);
        let b = g.leaf(Tensor::zeros(&[2, 3]), false);
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn conv_delta_kernel_mixes_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[2, 4, 5]);
        // output channel 0 = x0 + 2·x1
        let mut k = Tensor::zeros(&[1, 2, 3, 3]);
        k.data_mut()[4] = 1.0;
        k.data_mut()[9 + 4] = 2.0;
        let mut g = Graph::new();
        let (ix, ik) = (g.leaf(x.clone(), false), g.leaf(k, false));
        let y = g.conv2d(ix, ik, None).unwrap();
        for i in 0..20 {
            let want = x.data()[i] + 2.0 * x.data()[20 + i];
            assert!((g.value(y).data()[i] - want).abs() < 1e-15);
        }
        let kz = g.leaf(Tensor::zeros(&[3, 2, 3, 3]), false);
        let y = g.conv2d(ix, kz, None).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (shape, f) in [([1, 5, 5], 1), ([3, 6, 7], 4)] {
            let x = rand_tensor(&mut rng, &shape);
            let k = rand_tensor(&mut rng, &[f, shape[0], 3, 3]);
            let mut g = Graph::new();
            let (ix, ik) = (g.leaf(x.clone(), false), g.leaf(k.clone(), false));
            let y = g.conv2d(ix, ik, None).unwrap();
            assert!(g.value(y).max_abs_diff(&naive_conv(&x, &k)) < 1e-12);
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 4, 4]), false);
        let k = g.leaf(Tensor::zeros(&[1, 3, 3, 3]), false);
        assert!(matches!(g.conv2d(x, k, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_and_pool_values() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap(), false);
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

        let c = g.leaf(Tensor::full(&[2, 5, 3], 0.7), false);
        let p = g.avgpool2(c).unwrap();
        assert_eq!(g.value(p).shape(), &[2, 3, 2]);
        assert!(g.value(p).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));

        // ramp 0..16 on a 4×4 grid; hand-evaluated 2×2 means
        let ramp = g.leaf(Tensor::from_fn(&[1, 4, 4], |i| i as f64), false);
        let p = g.avgpool2(ramp).unwrap();
        assert_eq!(g.value(p).data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn pool_edge_cells_average_available_entries() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_fn(&[1, 3, 3], |i| i as f64), false);
        let p = g.avgpool2(x).unwrap();
        // [0 1 2 / 3 4 5 / 6 7 8]
        assert_eq!(g.value(p).data(), &[2.0, 3.5, 6.5, 8.0]);
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut g = Graph::new();
        let u = g.leaf(Tensor::full(&[5], 0.3), false);
        let l = g.softmax_cross_entropy(u, 2).unwrap();
        assert!((g.value(l).data()[0] - 5f64.ln()).abs() < 1e-14);

        let z = g.leaf(Tensor::new(vec![3], vec![20.0, 0.0, 0.0]).unwrap(), false);
        let l = g.softmax_cross_entropy(z, 0).unwrap();
        assert!(g.value(l).data()[0] < 1e-8);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zt = rand_tensor(&mut rng, &[4]).scaled(3.0);
        let naive = {
            let s: f64 = zt.data().iter().map(|v| v.exp()).sum();
            -(zt.data()[1].exp() / s).ln()
        };
        let z = g.leaf(zt, false);
        let l = g.softmax_cross_entropy(z, 1).unwrap();
        assert!((g.value(l).data()[0] - naive).abs() < 1e-12);

        assert!(matches!(g.softmax_cross_entropy(z, 4), Err(Error::Index(_))));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0), true);
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::full(&[2, 3], 1.0));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]), true);
        let r = g.relu(x);
        assert!(matches!(g.backward(r), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_nodes_accumulate() {
        // L = sum(x + x) → dL/dx = 2
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[3], 1.5), true);
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn constant_leaves_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[3], 1.5), false);
        let w = g.leaf(Tensor::full(&[3], 0.5), true);
        let y = g.add(x, w).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).is_none());
        assert!(grads.get(w).is_some());
    }
}
