use super::matrix::gemm;
use super::{KernelMap, Matrix, TensorError};
use std::sync::Arc;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn id(&self) -> usize {
        self.id
    }
}

/// Per-column batch mean and (biased) variance seen by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    ConcatCols(usize, usize),
    GatherRows(usize, Arc<[usize]>),
    SegmentSum(usize, Arc<[usize]>),
    LeakyRelu(usize, f64),
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Matrix, inv_std: Vec<f64>, train: bool },
    LogSoftmax(usize),
    Sum(usize),
    Mean(usize),
    Nll { logp: usize, labels: Arc<[usize]>, weights: Arc<[f64]> },
    Aggregate(usize, Arc<KernelMap>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, t: Tensor) -> Option<&Matrix> {
        self.grads.get(t.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `t`, zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, t: Tensor) -> Matrix {
        self.get(t).cloned().unwrap_or_else(|| {
            let (r, c) = self.shapes[t.id];
            Matrix::zeros(r, c)
        })
    }
}

fn mismatch(op: &'static str, a: Tensor, b: Tensor) -> TensorError {
    TensorError::ShapeMismatch { op, left: a.shape(), right: b.shape() }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears all nodes so the tape can record a new pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.id].value
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Tensor {
        let t = Tensor { id: self.nodes.len(), rows: value.rows, cols: value.cols };
        self.nodes.push(Node { value, op, requires_grad });
        t
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Tensor {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Matrix) -> Tensor {
        self.leaf(value, false)
    }

    pub fn variable(&mut self, value: Matrix) -> Tensor {
        self.leaf(value, true)
    }

    /// Copy of `t` with no gradient path.
    pub fn detach(&mut self, t: Tensor) -> Tensor {
        let v = self.value(t).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        if a.cols != b.rows {
            return Err(mismatch("matmul", a, b));
        }
        let v = gemm(self.value(a), false, self.value(b), false);
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(v, Op::MatMul(a.id, b.id), rg))
    }

    /// `a + bias` with a `1 x cols` bias broadcast over rows.
    pub fn add_row(&mut self, a: Tensor, bias: Tensor) -> Result<Tensor, TensorError> {
        if bias.rows != 1 || bias.cols != a.cols {
            return Err(mismatch("add_row", a, bias));
        }
        let mut v = self.value(a).clone();
        let b = self.value(bias).data.clone();
        for r in 0..v.rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        let rg = self.rg(&[a.id, bias.id]);
        Ok(self.push(v, Op::AddRow(a.id, bias.id), rg))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Tensor,
        b: Tensor,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Tensor, TensorError> {
        if a.shape() != b.shape() {
            return Err(mismatch(name, a, b));
        }
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| f(*x, *y)).collect();
        let v = Matrix { rows: a.rows, cols: a.cols, data };
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(v, op, rg))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a.id, b.id))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a.id, b.id))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a.id, b.id))
    }

    pub fn scale(&mut self, a: Tensor, s: f64) -> Tensor {
        let v = self.value(a).scaled(s);
        let rg = self.rg(&[a.id]);
        self.push(v, Op::Scale(a.id, s), rg)
    }

    pub fn add_scalar(&mut self, a: Tensor, s: f64) -> Tensor {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x += s);
        let rg = self.rg(&[a.id]);
        self.push(v, Op::AddScalar(a.id), rg)
    }

    pub fn concat_cols(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TensorError> {
        if a.rows != b.rows {
            return Err(mismatch("concat_cols", a, b));
        }
        let cols = a.cols + b.cols;
        let mut data = Vec::with_capacity(a.rows * cols);
        let (va, vb) = (self.value(a), self.value(b));
        for r in 0..a.rows {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let rg = self.rg(&[a.id, b.id]);
        Ok(self.push(Matrix { rows: a.rows, cols, data }, Op::ConcatCols(a.id, b.id), rg))
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Tensor, index: Arc<[usize]>) -> Result<Tensor, TensorError> {
        if let Some(&bad) = index.iter().find(|&&i| i >= a.rows) {
            return Err(TensorError::IndexOutOfRange { op: "gather_rows", index: bad, len: a.rows });
        }
        let va = self.value(a);
        let mut data = Vec::with_capacity(index.len() * a.cols);
        for &i in index.iter() {
            data.extend_from_slice(va.row(i));
        }
        let v = Matrix { rows: index.len(), cols: a.cols, data };
        let rg = self.rg(&[a.id]);
        Ok(self.push(v, Op::GatherRows(a.id, index), rg))
    }

    /// Output row `r` sums input rows `offsets[r]..offsets[r+1]`.
    pub fn segment_sum(&mut self, a: Tensor, offsets: Arc<[usize]>) -> Result<Tensor, TensorError> {
        let bad = offsets.is_empty()
            || offsets[0] != 0
            || *offsets.last().unwrap() != a.rows
            || offsets.windows(2).any(|w| w[0] > w[1]);
        if bad {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                left: a.shape(),
                right: (offsets.len(), 1),
            });
        }
        let va = self.value(a);
        let n = offsets.len() - 1;
        let mut v = Matrix::zeros(n, a.cols);
        for r in 0..n {
            for i in offsets[r]..offsets[r + 1] {
                for (o, x) in v.row_mut(r).iter_mut().zip(va.row(i)) {
                    *o += x;
                }
            }
        }
        let rg = self.rg(&[a.id]);
        Ok(self.push(v, Op::SegmentSum(a.id, offsets), rg))
    }

    pub fn leaky_relu(&mut self, a: Tensor, slope: f64) -> Tensor {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| {
            if *x <= 0.0 {
                *x *= slope
            }
        });
        let rg = self.rg(&[a.id]);
        self.push(v, Op::LeakyRelu(a.id, slope), rg)
    }

    fn check_norm_params(&self, x: Tensor, gamma: Tensor, beta: Tensor) -> Result<(), TensorError> {
        for p in [gamma, beta] {
            if p.rows != 1 || p.cols != x.cols {
                return Err(mismatch("batch_norm", x, p));
            }
        }
        Ok(())
    }

    fn normalize(&mut self, x: Tensor, gamma: Tensor, beta: Tensor, mean: &[f64], var: &[f64], eps: f64, train: bool) -> Tensor {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let vx = self.value(x);
        let mut xhat = vx.clone();
        for r in 0..xhat.rows {
            for (c, v) in xhat.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[c]) * inv_std[c];
            }
        }
        let g = self.value(gamma).data.clone();
        let b = self.value(beta).data.clone();
        let mut y = xhat.clone();
        for r in 0..y.rows {
            for (c, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = *v * g[c] + b[c];
            }
        }
        let rg = self.rg(&[x.id, gamma.id, beta.id]);
        self.push(y, Op::BatchNorm { x: x.id, gamma: gamma.id, beta: beta.id, xhat, inv_std, train }, rg)
    }

    /// Batch norm over rows using this batch's statistics, which are returned for
    /// the caller's running averages.
    pub fn batch_norm_train(
        &mut self,
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        eps: f64,
    ) -> Result<(Tensor, BatchStats), TensorError> {
        self.check_norm_params(x, gamma, beta)?;
        let vx = self.value(x);
        let n = vx.rows.max(1) as f64;
        let mean: Vec<f64> = vx.column_sums().iter().map(|s| s / n).collect();
        let mut var = vec![0.0; x.cols];
        for r in 0..vx.rows {
            for (c, v) in vx.row(r).iter().enumerate() {
                let d = v - mean[c];
                var[c] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let y = self.normalize(x, gamma, beta, &mean, &var, eps, true);
        Ok((y, BatchStats { mean, var }))
    }

    /// Batch norm with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Tensor, TensorError> {
        self.check_norm_params(x, gamma, beta)?;
        if mean.len() != x.cols || var.len() != x.cols {
            return Err(TensorError::ShapeMismatch { op: "batch_norm", left: x.shape(), right: (1, mean.len()) });
        }
        Ok(self.normalize(x, gamma, beta, mean, var, eps, false))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Tensor) -> Tensor {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.rg(&[a.id]);
        self.push(v, Op::LogSoftmax(a.id), rg)
    }

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(&[a.id]);
        self.push(Matrix { rows: 1, cols: 1, data: vec![s] }, Op::Sum(a.id), rg)
    }

    pub fn mean(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a);
        let s = v.data.iter().sum::<f64>() / (v.data.len().max(1) as f64);
        let rg = self.rg(&[a.id]);
        self.push(Matrix { rows: 1, cols: 1, data: vec![s] }, Op::Mean(a.id), rg)
    }

    /// Mean over rows of `-weights[y] * logp[row, y]`.
    pub fn nll_loss(&mut self, logp: Tensor, labels: Arc<[usize]>, weights: Arc<[f64]>) -> Result<Tensor, TensorError> {
        if labels.len() != logp.rows || weights.len() != logp.cols {
            return Err(TensorError::ShapeMismatch {
                op: "nll_loss",
                left: logp.shape(),
                right: (labels.len(), weights.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= logp.cols) {
            return Err(TensorError::LabelRange { label: bad, classes: logp.cols });
        }
        let v = self.value(logp);
        let n = logp.rows.max(1) as f64;
        let total: f64 = labels.iter().enumerate().map(|(i, &y)| -weights[y] * v.get(i, y)).sum();
        let rg = self.rg(&[logp.id]);
        Ok(self.push(Matrix { rows: 1, cols: 1, data: vec![total / n] }, Op::Nll { logp: logp.id, labels, weights }, rg))
    }

    /// Applies a fixed [`KernelMap`] to `a`'s rows.
    pub fn aggregate(&mut self, a: Tensor, map: Arc<KernelMap>) -> Result<Tensor, TensorError> {
        if map.n_in() != a.rows {
            return Err(TensorError::ShapeMismatch { op: "aggregate", left: a.shape(), right: (map.n_in(), map.n_out()) });
        }
        let v = map.apply(self.value(a));
        let rg = self.rg(&[a.id]);
        Ok(self.push(v, Op::Aggregate(a.id, map), rg))
    }

    /// Reverse pass from a `1 x 1` loss. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Tensor) -> Result<Gradients, TensorError> {
        if loss.shape() != (1, 1) {
            return Err(TensorError::NotScalar(loss.shape()));
        }
        if self.consumed {
            return Err(TensorError::AlreadyBackward);
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Matrix::filled(1, 1, 1.0));
        }
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        // only leaves keep gradients
        for (id, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[id] = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        let mut acc = |target: usize, delta: Matrix| {
            if !self.nodes[target].requires_grad {
                return;
            }
            match &mut grads[target] {
                Some(m) => m.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[*a].requires_grad {
                    acc(*a, gemm(g, false, val(*b), true));
                }
                if self.nodes[*b].requires_grad {
                    acc(*b, gemm(val(*a), true, g, false));
                }
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                acc(*b, Matrix { rows: 1, cols: g.cols, data: g.column_sums() });
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scaled(-1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let ga = g.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
                let gb = g.data.iter().zip(&va.data).map(|(x, y)| x * y).collect();
                acc(*a, Matrix { rows: g.rows, cols: g.cols, data: ga });
                acc(*b, Matrix { rows: g.rows, cols: g.cols, data: gb });
            }
            Op::Scale(a, s) => acc(*a, g.scaled(*s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols;
                let cb = val(*b).cols;
                let mut ga = Matrix::zeros(g.rows, ca);
                let mut gb = Matrix::zeros(g.rows, cb);
                for r in 0..g.rows {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::GatherRows(a, index) => {
                let va = val(*a);
                let mut ga = Matrix::zeros(va.rows, va.cols);
                for (r, &i) in index.iter().enumerate() {
                    for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(*a, ga);
            }
            Op::SegmentSum(a, offsets) => {
                let va = val(*a);
                let mut ga = Matrix::zeros(va.rows, va.cols);
                for r in 0..offsets.len() - 1 {
                    for i in offsets[r]..offsets[r + 1] {
                        ga.row_mut(i).copy_from_slice(g.row(r));
                    }
                }
                acc(*a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let va = val(*a);
                let data = g
                    .data
                    .iter()
                    .zip(&va.data)
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { gv * slope })
                    .collect();
                acc(*a, Matrix { rows: g.rows, cols: g.cols, data });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let gam = &val(*gamma).data;
                let cols = g.cols;
                let n = g.rows as f64;
                let sum_g = g.column_sums();
                let mut sum_gx = vec![0.0; cols];
                for r in 0..g.rows {
                    for c in 0..cols {
                        sum_gx[c] += g.get(r, c) * xhat.get(r, c);
                    }
                }
                if self.nodes[*x].requires_grad {
                    let mut gx = Matrix::zeros(g.rows, cols);
                    for r in 0..g.rows {
                        for c in 0..cols {
                            let k = gam[c] * inv_std[c];
                            let v = if *train {
                                k * (g.get(r, c) - sum_g[c] / n - xhat.get(r, c) * sum_gx[c] / n)
                            } else {
                                k * g.get(r, c)
                            };
                            gx.set(r, c, v);
                        }
                    }
                    acc(*x, gx);
                }
                acc(*gamma, Matrix { rows: 1, cols, data: sum_gx });
                acc(*beta, Matrix { rows: 1, cols, data: sum_g });
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let mut ga = g.clone();
                for r in 0..g.rows {
                    let s: f64 = g.row(r).iter().sum();
                    for (o, ly) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                        *o -= ly.exp() * s;
                    }
                }
                acc(*a, ga);
            }
            Op::Sum(a) => {
                let va = val(*a);
                acc(*a, Matrix::filled(va.rows, va.cols, g.data[0]));
            }
            Op::Mean(a) => {
                let va = val(*a);
                let n = va.data.len().max(1) as f64;
                acc(*a, Matrix::filled(va.rows, va.cols, g.data[0] / n));
            }
            Op::Nll { logp, labels, weights } => {
                let vl = val(*logp);
                let n = vl.rows.max(1) as f64;
                let mut gl = Matrix::zeros(vl.rows, vl.cols);
                for (i, &y) in labels.iter().enumerate() {
                    gl.set(i, y, -weights[y] * g.data[0] / n);
                }
                acc(*logp, gl);
            }
            Op::Aggregate(a, map) => {
                let c = val(*a).cols;
                acc(*a, map.apply_transpose(g, c));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_errors_report_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(err, TensorError::ShapeMismatch { op: "matmul", left: (2, 3), right: (2, 3) });
        let c = t_rows(&mut t, 3);
        assert!(t.concat_cols(a, c).is_err());
        assert!(matches!(t.gather_rows(a, Arc::from(vec![2usize])), Err(TensorError::IndexOutOfRange { .. })));
    }

    fn t_rows(t: &mut Tape, r: usize) -> Tensor {
        t.constant(Matrix::zeros(r, 1))
    }

    #[test]
    fn gather_backward_scatters_ones() {
        let mut t = Tape::new();
        let m = t.variable(Matrix::from_vec(4, 2, (0..8).map(|i| i as f64).collect()).unwrap());
        let g = t.gather_rows(m, Arc::from(vec![2usize, 0, 2])).unwrap();
        let s = t.sum(g);
        let grads = t.backward(s).unwrap();
        assert_eq!(grads.get(m).unwrap().data, vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn log_softmax_of_zeros() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(1, 2));
        let l = t.log_softmax(a);
        let ln2 = 2f64.ln();
        assert!(t.value(l).data.iter().all(|v| (v + ln2).abs() < 1e-15));
    }

    #[test]
    fn linear_loss_gradient_is_outer_structure() {
        // loss = sum(W x) => dW[i][j] = x[j]
        let mut t = Tape::new();
        let w = t.variable(Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0]).unwrap());
        let x = t.constant(Matrix::from_vec(3, 1, vec![0.5, 2.0, -1.0]).unwrap());
        let y = t.matmul(w, x).unwrap();
        let loss = t.sum(y);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data, vec![0.5, 2.0, -1.0, 0.5, 2.0, -1.0]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn detached_loss_has_zero_gradients() {
        let mut t = Tape::new();
        let w = t.variable(Matrix::filled(2, 2, 3.0));
        let y = t.mul(w, w).unwrap();
        let s = t.sum(y);
        let d = t.detach(s);
        let g = t.backward(d).unwrap();
        assert_eq!(g.get_or_zeros(w), Matrix::zeros(2, 2));
    }

    #[test]
    fn backward_rules() {
        let mut t = Tape::new();
        let w = t.variable(Matrix::filled(2, 2, 1.0));
        assert_eq!(t.backward(w).unwrap_err(), TensorError::NotScalar((2, 2)));
        let s = t.sum(w);
        t.backward(s).unwrap();
        assert_eq!(t.backward(s).unwrap_err(), TensorError::AlreadyBackward);
        t.reset();
        let w = t.variable(Matrix::filled(1, 1, 1.0));
        assert!(t.backward(w).is_ok());
    }

    #[test]
    fn nll_rejects_bad_labels() {
        let mut t = Tape::new();
        let l = t.constant(Matrix::zeros(2, 3));
        let err = t.nll_loss(l, Arc::from(vec![0usize, 3]), Arc::from(vec![1.0; 3])).unwrap_err();
        assert_eq!(err, TensorError::LabelRange { label: 3, classes: 3 });
    }

    #[test]
    fn segment_sum_groups_rows() {
        let mut t = Tape::new();
        let a = t.variable(Matrix::from_vec(3, 1, vec![1.0, 2.0, 4.0]).unwrap());
        let s = t.segment_sum(a, Arc::from(vec![0usize, 2, 2, 3])).unwrap();
        assert_eq!(t.value(s).data, vec![3.0, 0.0, 4.0]);
        assert!(t.segment_sum(a, Arc::from(vec![0usize, 2])).is_err());
    }
}
