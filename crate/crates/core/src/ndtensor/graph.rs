use super::kernels::{self, ConvGeom};
use super::tensor::{Element, Tensor};
use super::TensorError;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Element> {
    Leaf,
    Conv1d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Deconv1d { x: Var, w: Var, b: Var, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample { x: Var, factor: usize },
    Dense { x: Var, w: Var, b: Var },
    Relu { x: Var },
    Concat { a: Var, b: Var },
    AddOverLength { x: Var, e: Var },
    Reshape { x: Var },
    SoftmaxXent { logits: Var, probs: Vec<T>, labels: Vec<usize> },
    Mae { pred: Var, target: Var },
    Dot { x: Var, weights: Vec<T> },
}

#[derive(Debug)]
struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of executed differentiable operations.
///
/// Values are appended in execution order; [`Graph::backward`] walks the
/// record in reverse and fills the gradient buffers of every leaf that was
/// registered with `requires_grad`. A graph supports exactly one backward
/// pass.
#[derive(Debug)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

fn expect_rank<T: Element>(op: &'static str, what: &str, t: &Tensor<T>, rank: usize) -> Result<(), TensorError> {
    if t.ndim() != rank {
        return Err(shape_err(
            op,
            format!("{what} must have rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf. It receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        let t = if tensor.requires_grad() { tensor } else { tensor.with_grad() };
        self.leaf(t)
    }

    /// Record a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.detach())
    }

    /// New leaf holding a copy of `v` with the history cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.detach();
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Move the gradient of a leaf out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad_mut().map(std::mem::take)
    }

    fn push(&mut self, op: &'static str, value: Tensor<T>, kind: Op<T>, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Cross-correlation of `x: [B, Cin, L]` with `w: [Cout, Cin, K]` plus `b: [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        const OP: &str = "conv1d";
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        expect_rank(OP, "input", xt, 3)?;
        expect_rank(OP, "weight", wt, 3)?;
        if stride == 0 {
            return Err(TensorError::Argument(format!("{OP}: stride must be positive")));
        }
        let (batch, c_in, len_in) = (xt.dim(0), xt.dim(1), xt.dim(2));
        let (c_out, w_in, kernel) = (wt.dim(0), wt.dim(1), wt.dim(2));
        if w_in != c_in {
            return Err(shape_err(
                OP,
                format!("channel axis mismatch: input axis 1 = {c_in}, weight axis 1 = {w_in}"),
            ));
        }
        if bt.shape() != [c_out] {
            return Err(shape_err(
                OP,
                format!("bias shape {:?} does not match weight axis 0 = {c_out}", bt.shape()),
            ));
        }
        if kernel == 0 || kernel > len_in + 2 * pad {
            return Err(shape_err(
                OP,
                format!("kernel axis 2 = {kernel} exceeds padded length axis 2 = {}", len_in + 2 * pad),
            ));
        }
        let len_out = (len_in + 2 * pad - kernel) / stride + 1;
        let geom = ConvGeom { batch, c_in, c_out, len_in, len_out, kernel, stride, pad };
        let mut out = vec![T::zero(); batch * c_out * len_out];
        for (row, &bias) in out.chunks_mut(len_out).zip(bt.data().iter().cycle()) {
            row.iter_mut().for_each(|v| *v = bias);
        }
        kernels::conv_gather(xt.data(), wt.data(), &geom, &mut out);
        let value = Tensor::new(&[batch, c_out, len_out], out)?;
        self.push(OP, value, Op::Conv1d { x, w, b, geom }, &[x, w, b])
    }

    /// Transposed convolution of `x: [B, Cin, L]` with `w: [Cin, Cout, K]`;
    /// output length `(L - 1) * stride + K - 2 * pad`.
    pub fn deconv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        const OP: &str = "deconv1d";
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        expect_rank(OP, "input", xt, 3)?;
        expect_rank(OP, "weight", wt, 3)?;
        if stride == 0 {
            return Err(TensorError::Argument(format!("{OP}: stride must be positive")));
        }
        let (batch, c_in, len) = (xt.dim(0), xt.dim(1), xt.dim(2));
        let (w_in, c_out, kernel) = (wt.dim(0), wt.dim(1), wt.dim(2));
        if w_in != c_in {
            return Err(shape_err(
                OP,
                format!("channel axis mismatch: input axis 1 = {c_in}, weight axis 0 = {w_in}"),
            ));
        }
        if bt.shape() != [c_out] {
            return Err(shape_err(
                OP,
                format!("bias shape {:?} does not match weight axis 1 = {c_out}", bt.shape()),
            ));
        }
        let full = (len.max(1) - 1) * stride + kernel;
        if len == 0 || kernel == 0 || full <= 2 * pad {
            return Err(shape_err(
                OP,
                format!("empty output for length axis 2 = {len}, kernel = {kernel}, pad = {pad}"),
            ));
        }
        let len_out = full - 2 * pad;
        // Expressed as the conv whose input gradient this op computes.
        let geom = ConvGeom {
            batch,
            c_in: c_out,
            c_out: c_in,
            len_in: len_out,
            len_out: len,
            kernel,
            stride,
            pad,
        };
        let mut out = vec![T::zero(); batch * c_out * len_out];
        for (row, &bias) in out.chunks_mut(len_out).zip(bt.data().iter().cycle()) {
            row.iter_mut().for_each(|v| *v = bias);
        }
        kernels::conv_scatter(xt.data(), wt.data(), &geom, &mut out);
        let value = Tensor::new(&[batch, c_out, len_out], out)?;
        self.push(OP, value, Op::Deconv1d { x, w, b, geom }, &[x, w, b])
    }

    /// Max pooling with window 2 and stride 2; a trailing odd element is dropped.
    pub fn maxpool1d(&mut self, x: Var) -> Result<Var, TensorError> {
        const OP: &str = "maxpool1d";
        let xt = self.value(x);
        expect_rank(OP, "input", xt, 3)?;
        let (batch, c, len) = (xt.dim(0), xt.dim(1), xt.dim(2));
        if len < 2 {
            return Err(shape_err(OP, format!("length axis 2 = {len} is shorter than the pool window 2")));
        }
        let half = len / 2;
        let mut out = Vec::with_capacity(batch * c * half);
        let mut argmax = Vec::with_capacity(batch * c * half);
        for (r, row) in xt.data().chunks(len).enumerate() {
            for i in 0..half {
                let (a, b) = (row[2 * i], row[2 * i + 1]);
                let pick = if b > a { 2 * i + 1 } else { 2 * i };
                out.push(row[pick]);
                argmax.push(r * len + pick);
            }
        }
        let value = Tensor::new(&[batch, c, half], out)?;
        self.push(OP, value, Op::MaxPool { x, argmax }, &[x])
    }

    /// Flat indices of the element chosen by each output of a maxpool node.
    pub fn pool_argmax(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxPool { argmax, .. } => Some(argmax),
            _ => None,
        }
    }

    /// Nearest-neighbour upsampling along the length axis.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var, TensorError> {
        const OP: &str = "upsample_nearest";
        if factor == 0 {
            return Err(TensorError::Argument(format!("{OP}: factor must be at least 1")));
        }
        let xt = self.value(x);
        expect_rank(OP, "input", xt, 3)?;
        let (batch, c, len) = (xt.dim(0), xt.dim(1), xt.dim(2));
        let mut out = Vec::with_capacity(xt.len() * factor);
        for &v in xt.data() {
            out.extend(std::iter::repeat_n(v, factor));
        }
        let value = Tensor::new(&[batch, c, len * factor], out)?;
        self.push(OP, value, Op::Upsample { x, factor }, &[x])
    }

    /// Affine map `x: [B, N]`, `w: [M, N]`, `b: [M]` to `[B, M]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        const OP: &str = "dense";
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        expect_rank(OP, "input", xt, 2)?;
        expect_rank(OP, "weight", wt, 2)?;
        let (batch, n) = (xt.dim(0), xt.dim(1));
        let (m, wn) = (wt.dim(0), wt.dim(1));
        if wn != n {
            return Err(shape_err(
                OP,
                format!("inner dimension mismatch: input axis 1 = {n}, weight axis 1 = {wn}"),
            ));
        }
        if bt.shape() != [m] {
            return Err(shape_err(OP, format!("bias shape {:?} does not match weight axis 0 = {m}", bt.shape())));
        }
        let mut out = vec![T::zero(); batch * m];
        kernels::dense_forward(xt.data(), wt.data(), bt.data(), n, m, &mut out);
        let value = Tensor::new(&[batch, m], out)?;
        self.push(OP, value, Op::Dense { x, w, b }, &[x, w, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let xt = self.value(x);
        let out: Vec<T> = xt.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::new(xt.shape(), out)?;
        self.push("relu", value, Op::Relu { x }, &[x])
    }

    /// Concatenate `[B, C1, L]` and `[B, C2, L]` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        const OP: &str = "concat_channels";
        let (at, bt) = (self.value(a), self.value(b));
        expect_rank(OP, "first input", at, 3)?;
        expect_rank(OP, "second input", bt, 3)?;
        if at.dim(0) != bt.dim(0) || at.dim(2) != bt.dim(2) {
            return Err(shape_err(
                OP,
                format!("batch/length axes differ: {:?} vs {:?}", at.shape(), bt.shape()),
            ));
        }
        let (batch, ca, cb, len) = (at.dim(0), at.dim(1), bt.dim(1), at.dim(2));
        let mut out = Vec::with_capacity(batch * (ca + cb) * len);
        for i in 0..batch {
            out.extend_from_slice(at.row(i));
            out.extend_from_slice(bt.row(i));
        }
        let value = Tensor::new(&[batch, ca + cb, len], out)?;
        self.push(OP, value, Op::Concat { a, b }, &[a, b])
    }

    /// `x: [B, C, L]` plus `e: [B, C, 1]` broadcast along the length axis.
    pub fn add_over_length(&mut self, x: Var, e: Var) -> Result<Var, TensorError> {
        const OP: &str = "add_over_length";
        let (xt, et) = (self.value(x), self.value(e));
        expect_rank(OP, "input", xt, 3)?;
        if et.shape() != [xt.dim(0), xt.dim(1), 1] {
            return Err(shape_err(
                OP,
                format!("addend shape {:?} must be [{}, {}, 1]", et.shape(), xt.dim(0), xt.dim(1)),
            ));
        }
        let len = xt.dim(2);
        let mut out = xt.data().to_vec();
        for (row, &ev) in out.chunks_mut(len).zip(et.data()) {
            row.iter_mut().for_each(|v| *v = *v + ev);
        }
        let value = Tensor::new(xt.shape(), out)?;
        self.push(OP, value, Op::AddOverLength { x, e }, &[x, e])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).detach().reshaped(shape)?;
        self.push("reshape", value, Op::Reshape { x }, &[x])
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        const OP: &str = "softmax_xent";
        let lt = self.value(logits);
        expect_rank(OP, "logits", lt, 2)?;
        let (batch, n) = (lt.dim(0), lt.dim(1));
        if labels.len() != batch {
            return Err(shape_err(OP, format!("{} labels for batch axis 0 = {batch}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(TensorError::Argument(format!("{OP}: label {bad} outside [0, {n})")));
        }
        let mut probs = Vec::with_capacity(batch * n);
        let mut total = 0.0f64;
        for (row, &label) in lt.data().chunks(n).zip(labels) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            total += z.ln() + max - row[label].as_f64();
            probs.extend(exps.iter().map(|e| T::from_f64(e / z)));
        }
        let value = Tensor::scalar(T::from_f64(total / batch.max(1) as f64));
        self.push(
            OP,
            value,
            Op::SoftmaxXent { logits, probs, labels: labels.to_vec() },
            &[logits],
        )
    }

    /// Mean absolute difference over all elements.
    pub fn mae(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        const OP: &str = "mae";
        let (pt, tt) = (self.value(pred), self.value(target));
        if pt.shape() != tt.shape() {
            return Err(shape_err(OP, format!("prediction {:?} vs target {:?}", pt.shape(), tt.shape())));
        }
        if pt.is_empty() {
            return Err(shape_err(OP, "empty operands".into()));
        }
        let sum: f64 = pt.data().iter().zip(tt.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum();
        let value = Tensor::scalar(T::from_f64(sum / pt.len() as f64));
        self.push(OP, value, Op::Mae { pred, target }, &[pred, target])
    }

    /// `sum_i x[i] * weights[i]` with fixed weights.
    pub fn dot_const(&mut self, x: Var, weights: &[T]) -> Result<Var, TensorError> {
        let xt = self.value(x);
        if xt.len() != weights.len() {
            return Err(shape_err(
                "dot_const",
                format!("{} weights for {} elements", weights.len(), xt.len()),
            ));
        }
        let value = Tensor::scalar(T::from_f64(kernels::dot(xt.data(), weights)));
        self.push("dot_const", value, Op::Dot { x, weights: weights.to_vec() }, &[x])
    }

    /// Accumulate `delta` into the gradient buffer of `v`, allocating it lazily.
    fn accumulate(grads: &mut [Option<Vec<T>>], v: Var, len: usize, f: impl FnOnce(&mut [T])) {
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(slot);
    }

    /// Reverse-mode pass from a scalar loss. Leaf gradients are accumulated
    /// into the leaves' own buffers.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let needs = |v: &Var| self.nodes[v.0].needs_grad;
            let len_of = |v: &Var| self.nodes[v.0].value.len();
            match &node.op {
                Op::Leaf => {
                    if !node.value.all_finite() || gy.iter().any(|g| !g.is_finite()) {
                        return Err(TensorError::NonFinite { op: "backward" });
                    }
                    grads[idx] = Some(gy);
                    continue;
                }
                Op::Conv1d { x, w, b, geom } => {
                    if needs(x) {
                        let wd = self.nodes[w.0].value.data();
                        Self::accumulate(&mut grads, *x, len_of(x), |gx| kernels::conv_scatter(&gy, wd, geom, gx));
                    }
                    if needs(w) {
                        let xd = self.nodes[x.0].value.data();
                        Self::accumulate(&mut grads, *w, len_of(w), |gw| kernels::conv_weight_grad(&gy, xd, geom, gw));
                    }
                    if needs(b) {
                        let sums = kernels::channel_sums(&gy, geom.batch, geom.c_out, geom.len_out);
                        Self::accumulate(&mut grads, *b, len_of(b), |gb| {
                            gb.iter_mut().zip(sums).for_each(|(d, s)| *d = *d + T::from_f64(s))
                        });
                    }
                }
                Op::Deconv1d { x, w, b, geom } => {
                    if needs(x) {
                        let wd = self.nodes[w.0].value.data();
                        Self::accumulate(&mut grads, *x, len_of(x), |gx| kernels::conv_gather(&gy, wd, geom, gx));
                    }
                    if needs(w) {
                        let xd = self.nodes[x.0].value.data();
                        Self::accumulate(&mut grads, *w, len_of(w), |gw| kernels::conv_weight_grad(xd, &gy, geom, gw));
                    }
                    if needs(b) {
                        let sums = kernels::channel_sums(&gy, geom.batch, geom.c_in, geom.len_in);
                        Self::accumulate(&mut grads, *b, len_of(b), |gb| {
                            gb.iter_mut().zip(sums).for_each(|(d, s)| *d = *d + T::from_f64(s))
                        });
                    }
                }
                Op::MaxPool { x, argmax } => {
                    if needs(x) {
                        Self::accumulate(&mut grads, *x, len_of(x), |gx| {
                            for (&src, &g) in argmax.iter().zip(&gy) {
                                gx[src] = gx[src] + g;
                            }
                        });
                    }
                }
                Op::Upsample { x, factor } => {
                    if needs(x) {
                        Self::accumulate(&mut grads, *x, len_of(x), |gx| {
                            for (d, chunk) in gx.iter_mut().zip(gy.chunks(*factor)) {
                                *d = *d + T::from_f64(chunk.iter().map(|v| v.as_f64()).sum());
                            }
                        });
                    }
                }
                Op::Dense { x, w, b } => {
                    let xt = &self.nodes[x.0].value;
                    let (batch, nn) = (xt.dim(0), xt.dim(1));
                    let m = self.nodes[w.0].value.dim(0);
                    if needs(x) {
                        let wd = self.nodes[w.0].value.data();
                        Self::accumulate(&mut grads, *x, len_of(x), |gx| kernels::dense_grad_input(&gy, wd, nn, m, gx));
                    }
                    if needs(w) {
                        let xd = xt.data();
                        Self::accumulate(&mut grads, *w, len_of(w), |gw| {
                            kernels::dense_grad_weight(&gy, xd, batch, nn, m, gw)
                        });
                    }
                    if needs(b) {
                        Self::accumulate(&mut grads, *b, m, |gb| {
                            for (j, d) in gb.iter_mut().enumerate() {
                                let s: f64 = (0..batch).map(|r| gy[r * m + j].as_f64()).sum();
                                *d = *d + T::from_f64(s);
                            }
                        });
                    }
                }
                Op::Relu { x } => {
                    if needs(x) {
                        let xd = self.nodes[x.0].value.data();
                        Self::accumulate(&mut grads, *x, len_of(x), |gx| {
                            for ((d, &g), &xv) in gx.iter_mut().zip(&gy).zip(xd) {
                                if xv > T::zero() {
                                    *d = *d + g;
                                }
                            }
                        });
                    }
                }
                Op::Concat { a, b } => {
                    let at = &self.nodes[a.0].value;
                    let bt = &self.nodes[b.0].value;
                    let batch = at.dim(0);
                    let (ra, rb) = (at.len() / batch.max(1), bt.len() / batch.max(1));
                    if needs(a) {
                        Self::accumulate(&mut grads, *a, at.len(), |ga| {
                            for i in 0..batch {
                                let src = &gy[i * (ra + rb)..i * (ra + rb) + ra];
                                ga[i * ra..(i + 1) * ra].iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
                            }
                        });
                    }
                    if needs(b) {
                        Self::accumulate(&mut grads, *b, bt.len(), |gb| {
                            for i in 0..batch {
                                let src = &gy[i * (ra + rb) + ra..(i + 1) * (ra + rb)];
                                gb[i * rb..(i + 1) * rb].iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
                            }
                        });
                    }
                }
                Op::AddOverLength { x, e } => {
                    let len = self.nodes[x.0].value.dim(2);
                    if needs(x) {
                        Self::accumulate(&mut grads, *x, len_of(x), |gx| {
                            gx.iter_mut().zip(&gy).for_each(|(d, &s)| *d = *d + s)
                        });
                    }
                    if needs(e) {
                        Self::accumulate(&mut grads, *e, len_of(e), |ge| {
                            for (d, row) in ge.iter_mut().zip(gy.chunks(len)) {
                                *d = *d + T::from_f64(row.iter().map(|v| v.as_f64()).sum());
                            }
                        });
                    }
                }
                Op::Reshape { x } => {
                    if needs(x) {
                        Self::accumulate(&mut grads, *x, len_of(x), |gx| {
                            gx.iter_mut().zip(&gy).for_each(|(d, &s)| *d = *d + s)
                        });
                    }
                }
                Op::SoftmaxXent { logits, probs, labels } => {
                    if needs(logits) {
                        let n = self.nodes[logits.0].value.dim(1);
                        let scale = gy[0].as_f64() / labels.len().max(1) as f64;
                        Self::accumulate(&mut grads, *logits, probs.len(), |gl| {
                            for (r, &label) in labels.iter().enumerate() {
                                for j in 0..n {
                                    let p = probs[r * n + j].as_f64() - if j == label { 1.0 } else { 0.0 };
                                    gl[r * n + j] = gl[r * n + j] + T::from_f64(p * scale);
                                }
                            }
                        });
                    }
                }
                Op::Mae { pred, target } => {
                    let pd = self.nodes[pred.0].value.data();
                    let td = self.nodes[target.0].value.data();
                    let scale = gy[0].as_f64() / pd.len() as f64;
                    let signs: Vec<T> = pd
                        .iter()
                        .zip(td)
                        .map(|(&p, &t)| {
                            T::from_f64(if p > t {
                                scale
                            } else if p < t {
                                -scale
                            } else {
                                0.0
                            })
                        })
                        .collect();
                    if needs(pred) {
                        Self::accumulate(&mut grads, *pred, signs.len(), |gp| {
                            gp.iter_mut().zip(&signs).for_each(|(d, &s)| *d = *d + s)
                        });
                    }
                    if needs(target) {
                        Self::accumulate(&mut grads, *target, signs.len(), |gt| {
                            gt.iter_mut().zip(&signs).for_each(|(d, &s)| *d = *d - s)
                        });
                    }
                }
                Op::Dot { x, weights } => {
                    if needs(x) {
                        let g0 = gy[0];
                        Self::accumulate(&mut grads, *x, weights.len(), |gx| {
                            gx.iter_mut().zip(weights).for_each(|(d, &w)| *d = *d + g0 * w)
                        });
                    }
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Op::Leaf, Some(g)) = (&node.op, g) {
                if let Some(dst) = node.value.grad_mut() {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(TensorError::NonFinite { op: "backward" });
                    }
                    dst.iter_mut().zip(g).for_each(|(d, s)| *d = *d + s);
                }
            }
        }
        Ok(())
    }
}
