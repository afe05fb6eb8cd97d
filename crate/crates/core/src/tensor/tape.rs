use super::kernels::{self, axis_split, Padding};
use super::Tensor;
use crate::error::{invalid, shape_err, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddRowBias(Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Softmax(Var, usize),
    Conv3d { input: Var, weights: Var, bias: Var, padding: Padding },
    AvgPool3d(Var, usize),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { src: Var, axis: usize, start: usize },
    Scale(Var, f64),
    Sum(Var),
    SumSquares(Var),
    LayerNorm(Var),
    Nll { probs: Var, targets: Vec<usize>, floor: f64 },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of tensor operations for reverse-mode differentiation.
///
/// Every op appends a node whose operands are already on the tape, so the
/// node list is a topological order.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, one per gradient-requiring leaf.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => {
            if acc.shape() != g.shape() {
                return Err(shape_err!("gradient shape {} vs {}", acc.shape(), g.shape()));
            }
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, operands: &[Var]) -> Var {
        let requires_grad = operands.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`c` vector to every row of an `[r, c]` tensor.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xt, bt) = (self.value(x), self.value(bias));
        let c = match *xt.dims() {
            [_, c] if bt.dims() == [c] => c,
            _ => return Err(shape_err!("row bias {} does not fit {}", bt.shape(), xt.shape())),
        };
        let mut out = xt.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bt.data()[i % c];
        }
        Ok(self.push(out, Op::AddRowBias(x, bias), &[x, bias]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = kernels::transpose(self.value(a))?;
        Ok(self.push(v, Op::Transpose(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = kernels::relu(self.value(a));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = kernels::softmax(self.value(a), axis)?;
        Ok(self.push(v, Op::Softmax(a, axis), &[a]))
    }

    pub fn conv3d(&mut self, input: Var, weights: Var, bias: Var, padding: Padding) -> Result<Var> {
        let v = kernels::conv3d(self.value(input), self.value(weights), self.value(bias), padding)?;
        Ok(self.push(v, Op::Conv3d { input, weights, bias, padding }, &[input, weights, bias]))
    }

    pub fn avg_pool3d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let v = kernels::avg_pool3d(self.value(x), factor)?;
        Ok(self.push(v, Op::AvgPool3d(x, factor), &[x]))
    }

    pub fn reshape(&mut self, a: Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        let v = self.value(a).reshape(dims)?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        self.reshape(a, vec![n])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| invalid!("concat of zero tensors"))?;
        let base = self.value(*first).dims().to_vec();
        if axis >= base.len() {
            return Err(invalid!("concat axis {axis} out of range for rank {}", base.len()));
        }
        let mut total = 0;
        for p in parts {
            let d = self.value(*p).dims();
            let compatible = d.len() == base.len()
                && d.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err!("concat along axis {axis}: {:?} vs {:?}", d, base));
            }
            total += d[axis];
        }
        let mut out_dims = base.clone();
        out_dims[axis] = total;
        let (outer, _, inner) = axis_split(&out_dims, axis)?;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.dims()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::new(out_dims, data)?;
        Ok(self.push(v, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, src: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        let dims = t.dims().to_vec();
        let (outer, full, inner) = axis_split(&dims, axis)?;
        if len == 0 || start + len > full {
            return Err(shape_err!("slice [{start}, {}) out of range on axis {axis} of {:?}", start + len, dims));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            data.extend_from_slice(&t.data()[from..from + len * inner]);
        }
        let mut out_dims = dims;
        out_dims[axis] = len;
        let v = Tensor::new(out_dims, data)?;
        Ok(self.push(v, Op::Slice { src, axis, start }, &[src]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum_squares());
        self.push(v, Op::SumSquares(a), &[a])
    }

    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var> {
        let v = kernels::layer_norm_rows(self.value(a))?;
        Ok(self.push(v, Op::LayerNorm(a), &[a]))
    }

    /// Mean negative log-likelihood of `targets` (zero-based column indices)
    /// under the row distributions of `probs`, each probability floored at
    /// `floor` before the logarithm.
    pub fn nll(&mut self, probs: Var, targets: &[usize], floor: f64) -> Result<Var> {
        let p = self.value(probs);
        let (rows, k) = match *p.dims() {
            [r, k] => (r, k),
            _ => return Err(shape_err!("nll expects [batch, classes], got {}", p.shape())),
        };
        if targets.len() != rows {
            return Err(shape_err!("{} targets for {rows} rows", targets.len()));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= k) {
            return Err(invalid!("target index {t} outside {k} classes"));
        }
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -p.data()[i * k + t].max(floor).ln())
            .sum();
        let v = Tensor::scalar(total / rows as f64);
        Ok(self.push(v, Op::Nll { probs, targets: targets.to_vec(), floor }, &[probs]))
    }

    /// Reverse accumulation from a scalar `loss`. The tape is left untouched,
    /// so repeated calls give identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(shape_err!("backward needs a scalar loss, got shape {}", lt.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_shape(lt.shape().clone(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        let mut out = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                out[i] = Some(grads[i].take().unwrap_or_else(|| Tensor::zeros_like(&node.value)));
            }
        }
        Ok(Gradients { grads: out })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn send(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if self.wants(v) {
            accumulate(&mut grads[v.0], g)?;
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone())?;
                self.send(grads, *b, g.clone())?;
            }
            Op::AddRowBias(x, bias) => {
                self.send(grads, *x, g.clone())?;
                if self.wants(*bias) {
                    let c = self.value(*bias).numel();
                    let mut gb = vec![0.0; c];
                    for (i, v) in g.data().iter().enumerate() {
                        gb[i % c] += v;
                    }
                    self.send(grads, *bias, Tensor::new(vec![c], gb)?)?;
                }
            }
            Op::Matmul(a, b) => {
                if self.wants(*a) {
                    let bt = kernels::transpose(self.value(*b))?;
                    self.send(grads, *a, kernels::matmul(g, &bt)?)?;
                }
                if self.wants(*b) {
                    let at = kernels::transpose(self.value(*a))?;
                    self.send(grads, *b, kernels::matmul(&at, g)?)?;
                }
            }
            Op::Transpose(a) => self.send(grads, *a, kernels::transpose(g)?)?,
            Op::Relu(a) => {
                let x = self.value(*a);
                let gx = g.zip_with(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                self.send(grads, *a, gx)?;
            }
            Op::Softmax(a, axis) => {
                self.send(grads, *a, kernels::softmax_backward(&node.value, g, *axis)?)?;
            }
            Op::Conv3d { input, weights, bias, padding } => {
                let (gx, gw, gb) = kernels::conv3d_backward(
                    self.value(*input),
                    self.value(*weights),
                    self.value(*bias),
                    *padding,
                    g,
                )?;
                self.send(grads, *input, gx)?;
                self.send(grads, *weights, gw)?;
                self.send(grads, *bias, gb)?;
            }
            Op::AvgPool3d(x, factor) => {
                self.send(grads, *x, kernels::avg_pool3d_backward(self.value(*x), *factor, g)?)?;
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().clone();
                self.send(grads, *a, Tensor::from_shape(shape, g.data().to_vec())?)?;
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.dims(), *axis)?;
                let mut offset = 0;
                for p in parts {
                    let t = self.value(*p);
                    let len = t.dims()[*axis];
                    if self.wants(*p) {
                        let mut data = Vec::with_capacity(t.numel());
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[from..from + len * inner]);
                        }
                        self.send(grads, *p, Tensor::from_shape(t.shape().clone(), data)?)?;
                    }
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                if self.wants(*src) {
                    let t = self.value(*src);
                    let (outer, full, inner) = axis_split(t.dims(), *axis)?;
                    let len = node.value.dims()[*axis];
                    let mut data = vec![0.0; t.numel()];
                    for o in 0..outer {
                        let to = (o * full + start) * inner;
                        let from = o * len * inner;
                        data[to..to + len * inner].copy_from_slice(&g.data()[from..from + len * inner]);
                    }
                    self.send(grads, *src, Tensor::from_shape(t.shape().clone(), data)?)?;
                }
            }
            Op::Scale(a, c) => self.send(grads, *a, g.scale(*c))?,
            Op::Sum(a) => {
                let gv = g.data()[0];
                let t = self.value(*a);
                self.send(grads, *a, t.map(|_| gv))?;
            }
            Op::SumSquares(a) => {
                let gv = g.data()[0];
                self.send(grads, *a, self.value(*a).map(|x| 2.0 * x * gv))?;
            }
            Op::LayerNorm(a) => {
                let gx = kernels::layer_norm_rows_backward(self.value(*a), &node.value, g)?;
                self.send(grads, *a, gx)?;
            }
            Op::Nll { probs, targets, floor } => {
                let p = self.value(*probs);
                let k = p.dims()[1];
                let rows = targets.len() as f64;
                let gv = g.data()[0];
                let mut data = vec![0.0; p.numel()];
                for (i, &t) in targets.iter().enumerate() {
                    let pv = p.data()[i * k + t];
                    if pv > *floor {
                        data[i * k + t] = -gv / (pv * rows);
                    }
                }
                self.send(grads, *probs, Tensor::from_shape(p.shape().clone(), data)?)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_sum_gradient_is_ones_in_linear_region() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_fn(vec![3, 4], |i| 0.5 + i as f64).unwrap());
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn weighted_square_gradient() {
        let w = Tensor::from_fn(vec![2, 3], |i| i as f64 - 2.5).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(w.clone());
        let sq = tape.sum_squares(wv);
        let loss = tape.scale(sq, 0.01);
        let g = tape.backward(loss).unwrap();
        assert_eq!(tape.value(loss).item().unwrap(), 0.01 * w.sum_squares());
        let expect = w.scale(0.02);
        assert!(g.get(wv).unwrap().max_abs_diff(&expect).unwrap() < 1e-15);
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_p_minus_onehot() {
        let logits = Tensor::new(vec![1, 4], vec![0.3, -1.2, 2.0, 0.1]).unwrap();
        let mut tape = Tape::new();
        let z = tape.param(logits.clone());
        let p = tape.softmax(z, 1).unwrap();
        let loss = tape.nll(p, &[2], 1e-12).unwrap();
        let g = tape.backward(loss).unwrap();
        let mut expect = kernels::softmax(&logits, 1).unwrap();
        expect.data_mut()[2] -= 1.0;
        assert!(g.get(z).unwrap().max_abs_diff(&expect).unwrap() < 1e-14);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(vec![2]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full(vec![2], 1.0).unwrap());
        let unused = tape.param(Tensor::full(vec![3], 1.0).unwrap());
        let c = tape.constant(Tensor::full(vec![2], 1.0).unwrap());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0; 3]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::from_fn(vec![2, 3], |i| i as f64).unwrap());
        let b = tape.param(Tensor::from_fn(vec![2, 2], |i| 10.0 + i as f64).unwrap());
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[0.0, 1.0, 2.0, 10.0, 11.0, 3.0, 4.0, 5.0, 12.0, 13.0]);
        let back = tape.slice(c, 1, 3, 2).unwrap();
        assert_eq!(tape.value(back), tape.value(b));
    }
}
