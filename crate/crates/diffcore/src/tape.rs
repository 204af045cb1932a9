use std::rc::Rc;

use rand::Rng;

use crate::error::{DiffError, Result};
use crate::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Padding rule for [`Tape::conv1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps the sequence length; for even kernels the
    /// extra pad goes on the right.
    Same,
    /// No padding; output length `n - k + 1`.
    Valid,
}

/// One Gaussian kernel `exp(-‖a-b‖² / (2σ²))` with its mixing weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedKernel {
    pub sigma: f64,
    pub weight: f64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
        pad_left: usize,
    },
    MaxPool1d {
        input: Var,
        argmax: Vec<usize>,
    },
    SoftmaxRows(Var),
    Elu(Var),
    Relu(Var),
    Mask(Var, Rc<Vec<f64>>),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    MkMmd {
        features: Var,
        n_source: usize,
        kernels: Vec<WeightedKernel>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records forward computations so gradients can be pulled back through them.
///
/// Nodes are immutable once pushed. A tape is meant to live for one forward
/// and backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the differentiated scalar.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when it has none.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
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

    /// Drops every node recorded after the first `len`, so leaves bound once
    /// can be reused across many forward passes. Handles to dropped nodes
    /// must not be used again.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = ta.dims2();
        let (k2, m) = tb.dims2();
        if ta.shape().len() != 2 || tb.shape().len() != 2 || k != k2 {
            return Err(dim_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; n * m];
        gemm_acc(ta.data(), tb.data(), &mut out, n, k, m);
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(DiffError::Dimension {
                op: "transpose",
                left: ta.shape().to_vec(),
                right: vec![],
            });
        }
        let (n, m) = ta.dims2();
        let src = ta.data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = src[i * m + j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::Transpose(a)))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a length-`m` bias to every row of an `n×m` matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (n, m) = ta.dims2();
        if ta.shape().len() != 2 || tb.len() != m {
            return Err(dim_err("add_row_bias", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(m) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let value = Tensor::new(vec![n, m], data)?;
        Ok(self.push(value, Op::AddRowBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * c).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(a, c))
    }

    /// One-dimensional cross-correlation over the row (time) axis.
    ///
    /// `input` is `n×c_in`, `kernel` is `k×c_in×c_out`, `bias` has `c_out`
    /// entries. No kernel flip is applied.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let (ti, tk, tb) = (self.value(input), self.value(kernel), self.value(bias));
        let (n, c_in) = ti.dims2();
        if ti.shape().len() != 2 || n == 0 {
            return Err(DiffError::Length {
                op: "conv1d",
                detail: format!("input must be a non-empty n×c matrix, got {:?}", ti.shape()),
            });
        }
        let &[k, kc_in, c_out] = tk.shape() else {
            return Err(dim_err("conv1d", ti, tk));
        };
        if kc_in != c_in {
            return Err(dim_err("conv1d", ti, tk));
        }
        if tb.len() != c_out {
            return Err(dim_err("conv1d", tk, tb));
        }
        let (n_out, pad_left) = match padding {
            Padding::Same => (n, (k - 1) / 2),
            Padding::Valid => {
                if k > n {
                    return Err(DiffError::Length {
                        op: "conv1d",
                        detail: format!("kernel {k} longer than input {n}"),
                    });
                }
                (n - k + 1, 0)
            }
        };
        let x = ti.data();
        let w = tk.data();
        let mut out = vec![0.0; n_out * c_out];
        for t in 0..n_out {
            let o_row = &mut out[t * c_out..(t + 1) * c_out];
            o_row.copy_from_slice(tb.data());
            for j in 0..k {
                let src = t as isize + j as isize - pad_left as isize;
                if src < 0 || src as usize >= n {
                    continue;
                }
                let x_row = &x[src as usize * c_in..(src as usize + 1) * c_in];
                let w_j = &w[j * c_in * c_out..(j + 1) * c_in * c_out];
                for (c, &xv) in x_row.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (ov, &wv) in o_row.iter_mut().zip(&w_j[c * c_out..(c + 1) * c_out]) {
                        *ov += xv * wv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n_out, c_out], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernel,
                bias,
                pad_left,
            },
        ))
    }

    /// Per-column windowed maximum along the row axis.
    pub fn maxpool1d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let ti = self.value(input);
        let (n, c) = ti.dims2();
        if window == 0 || stride == 0 {
            return Err(DiffError::Config(format!(
                "maxpool1d window ({window}) and stride ({stride}) must be positive"
            )));
        }
        if window > n {
            return Err(DiffError::Length {
                op: "maxpool1d",
                detail: format!("window {window} exceeds length {n}"),
            });
        }
        let n_out = (n - window) / stride + 1;
        let x = ti.data();
        let mut out = vec![0.0; n_out * c];
        let mut argmax = vec![0usize; n_out * c];
        for i in 0..n_out {
            let start = i * stride;
            for ch in 0..c {
                let mut best = start;
                let mut best_v = x[start * c + ch];
                for r in start + 1..start + window {
                    let v = x[r * c + ch];
                    if v > best_v {
                        best_v = v;
                        best = r;
                    }
                }
                out[i * c + ch] = best_v;
                argmax[i * c + ch] = best * c + ch;
            }
        }
        let value = Tensor::new(vec![n_out, c], out)?;
        Ok(self.push(value, Op::MaxPool1d { input, argmax }))
    }

    /// Row-wise softmax, stabilized by subtracting each row maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (_, m) = ta.dims2();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(m.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .map(|&x| if x >= 0.0 { x } else { x.exp_m1() })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Elu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu(a))
    }

    /// Inverted dropout. Identity when `training` is false or `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        rate: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(DiffError::Config(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        Ok(self.mask(a, mask))
    }

    /// Elementwise product with a constant (non-differentiated) mask.
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let ta = self.value(a);
        assert_eq!(ta.len(), mask.len(), "mask length");
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Mask(a, Rc::new(mask)))
    }

    /// Concatenates `n×m_i` matrices along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(DiffError::Length {
                op: "concat_cols",
                detail: "no inputs".into(),
            });
        };
        let (n, _) = self.value(first).dims2();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.dims2().0 != n {
                return Err(dim_err("concat_cols", self.value(first), t));
            }
            widths.push(t.dims2().1);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..n {
                out[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let value = Tensor::new(vec![n, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Flattens each input and stacks them as the rows of a matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(DiffError::Length {
                op: "stack_rows",
                detail: "no inputs".into(),
            });
        };
        let width = self.value(first).len();
        let mut out = Vec::with_capacity(width * parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.len() != width {
                return Err(dim_err("stack_rows", self.value(first), t));
            }
            out.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![parts.len(), width], out)?;
        Ok(self.push(value, Op::StackRows(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all entries.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Biased multi-kernel MMD between the first `n_source` rows of
    /// `features` and the remaining rows.
    ///
    /// Kernel bandwidths are constants: no gradient flows into them.
    pub fn mk_mmd(
        &mut self,
        features: Var,
        n_source: usize,
        kernels: &[WeightedKernel],
    ) -> Result<Var> {
        let tf = self.value(features);
        let (n, d) = tf.dims2();
        if n_source == 0 || n_source >= n {
            return Err(DiffError::Length {
                op: "mk_mmd",
                detail: format!("need non-empty source and target rows, got {n_source} of {n}"),
            });
        }
        if kernels.is_empty() || kernels.iter().any(|k| !(k.sigma > 0.0)) {
            return Err(DiffError::Config(
                "mk_mmd needs kernels with positive bandwidth".into(),
            ));
        }
        let weights = mmd_weights(n, n_source);
        let sq = pairwise_sq_dists(tf.data(), n, d);
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += weights[i] * weights[j] * kernel_mix(sq[i * n + j], kernels);
            }
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::MkMmd {
                features,
                n_source,
                kernels: kernels.to_vec(),
            },
        ))
    }

    /// Reverse pass from a one-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(DiffError::Length {
                op: "backward",
                detail: format!("output must be scalar, got shape {:?}", out.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(out.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.pull_back(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn pull_back(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k) = ta.dims2();
                let (_, m) = tb.dims2();
                let mut ga = vec![0.0; n * k];
                gemm_bt_acc(g.data(), tb.data(), &mut ga, n, m, k);
                let mut gb = vec![0.0; k * m];
                gemm_at_acc(ta.data(), g.data(), &mut gb, n, k, m);
                acc(*a, Tensor::new(ta.shape().to_vec(), ga).unwrap());
                acc(*b, Tensor::new(tb.shape().to_vec(), gb).unwrap());
            }
            Op::Transpose(a) => {
                let (m, n) = g.dims2();
                let src = g.data();
                let mut out = vec![0.0; n * m];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = src[i * n + j];
                    }
                }
                acc(*a, Tensor::new(vec![n, m], out).unwrap());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                let neg = g.data().iter().map(|x| -x).collect();
                acc(*b, Tensor::new(g.shape().to_vec(), neg).unwrap());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                let gb = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), ga).unwrap());
                acc(*b, Tensor::new(g.shape().to_vec(), gb).unwrap());
            }
            Op::AddRowBias(a, bias) => {
                let (_, m) = g.dims2();
                let mut gb = vec![0.0; m];
                for row in g.data().chunks(m) {
                    for (s, x) in gb.iter_mut().zip(row) {
                        *s += x;
                    }
                }
                acc(*a, g.clone());
                let shape = self.value(*bias).shape().to_vec();
                acc(*bias, Tensor::new(shape, gb).unwrap());
            }
            Op::Scale(a, c) => {
                let data = g.data().iter().map(|x| x * c).collect();
                acc(*a, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                pad_left,
            } => {
                let (ti, tk) = (self.value(*input), self.value(*kernel));
                let (n, c_in) = ti.dims2();
                let k = tk.shape()[0];
                let (n_out, c_out) = g.dims2();
                let x = ti.data();
                let w = tk.data();
                let gd = g.data();
                let mut gx = vec![0.0; n * c_in];
                let mut gw = vec![0.0; k * c_in * c_out];
                let mut gb = vec![0.0; c_out];
                for t in 0..n_out {
                    let g_row = &gd[t * c_out..(t + 1) * c_out];
                    for (s, v) in gb.iter_mut().zip(g_row) {
                        *s += v;
                    }
                    for j in 0..k {
                        let src = t as isize + j as isize - *pad_left as isize;
                        if src < 0 || src as usize >= n {
                            continue;
                        }
                        let src = src as usize;
                        for c in 0..c_in {
                            let w_jc = &w[(j * c_in + c) * c_out..(j * c_in + c + 1) * c_out];
                            let gw_jc = &mut gw[(j * c_in + c) * c_out..(j * c_in + c + 1) * c_out];
                            let xv = x[src * c_in + c];
                            let mut dot = 0.0;
                            for o in 0..c_out {
                                dot += g_row[o] * w_jc[o];
                                gw_jc[o] += xv * g_row[o];
                            }
                            gx[src * c_in + c] += dot;
                        }
                    }
                }
                acc(*input, Tensor::new(ti.shape().to_vec(), gx).unwrap());
                acc(*kernel, Tensor::new(tk.shape().to_vec(), gw).unwrap());
                let shape = self.value(*bias).shape().to_vec();
                acc(*bias, Tensor::new(shape, gb).unwrap());
            }
            Op::MaxPool1d { input, argmax } => {
                let ti = self.value(*input);
                let mut gx = vec![0.0; ti.len()];
                for (&pos, &gv) in argmax.iter().zip(g.data()) {
                    gx[pos] += gv;
                }
                acc(*input, Tensor::new(ti.shape().to_vec(), gx).unwrap());
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (_, m) = y.dims2();
                let mut gx = vec![0.0; y.len()];
                for ((gx_row, y_row), g_row) in gx
                    .chunks_mut(m)
                    .zip(y.data().chunks(m))
                    .zip(g.data().chunks(m))
                {
                    let dot: f64 = y_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in gx_row.iter_mut().zip(y_row).zip(g_row) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(*a, Tensor::new(y.shape().to_vec(), gx).unwrap());
            }
            Op::Elu(a) => {
                let x = self.value(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv >= 0.0 { gv } else { gv * xv.exp() })
                    .collect();
                acc(*a, Tensor::new(x.shape().to_vec(), data).unwrap());
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                acc(*a, Tensor::new(x.shape().to_vec(), data).unwrap());
            }
            Op::Mask(a, mask) => {
                let data = g
                    .data()
                    .iter()
                    .zip(mask.iter())
                    .map(|(x, m)| x * m)
                    .collect();
                acc(*a, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::ConcatCols(parts) => {
                let (n, total) = g.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    let mut out = vec![0.0; n * w];
                    for i in 0..n {
                        out[i * w..(i + 1) * w]
                            .copy_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                    }
                    offset += w;
                    acc(p, Tensor::new(vec![n, w], out).unwrap());
                }
            }
            Op::StackRows(parts) => {
                let (_, width) = g.dims2();
                for (i, &p) in parts.iter().enumerate() {
                    let shape = self.value(p).shape().to_vec();
                    let slice = g.data()[i * width..(i + 1) * width].to_vec();
                    acc(p, Tensor::new(shape, slice).unwrap());
                }
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(*a, g.reshape(&shape).unwrap());
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                acc(*a, Tensor::filled(&shape, g.item()));
            }
            Op::MkMmd {
                features,
                n_source,
                kernels,
            } => {
                let tf = self.value(*features);
                let (n, d) = tf.dims2();
                let z = tf.data();
                let w = mmd_weights(n, *n_source);
                let sq = pairwise_sq_dists(z, n, d);
                let upstream = g.item();
                let mut gz = vec![0.0; n * d];
                for i in 0..n {
                    let zi = &z[i * d..(i + 1) * d];
                    let gi = &mut gz[i * d..(i + 1) * d];
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        // d/dz_i of the symmetric pair (i,j)+(j,i)
                        let dk: f64 = kernels
                            .iter()
                            .map(|k| {
                                let s2 = k.sigma * k.sigma;
                                k.weight * (-sq[i * n + j] / (2.0 * s2)).exp() / s2
                            })
                            .sum();
                        let c = -2.0 * w[i] * w[j] * dk * upstream;
                        let zj = &z[j * d..(j + 1) * d];
                        for ((o, a), b) in gi.iter_mut().zip(zi).zip(zj) {
                            *o += c * (a - b);
                        }
                    }
                }
                acc(*features, Tensor::new(tf.shape().to_vec(), gz).unwrap());
            }
        }
    }
}

fn mmd_weights(n: usize, n_source: usize) -> Vec<f64> {
    let ws = 1.0 / n_source as f64;
    let wt = -1.0 / (n - n_source) as f64;
    (0..n).map(|i| if i < n_source { ws } else { wt }).collect()
}

fn pairwise_sq_dists(z: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut sq = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = z[i * d..(i + 1) * d]
                .iter()
                .zip(&z[j * d..(j + 1) * d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            sq[i * n + j] = s;
            sq[j * n + i] = s;
        }
    }
    sq
}

fn kernel_mix(sq_dist: f64, kernels: &[WeightedKernel]) -> f64 {
    kernels
        .iter()
        .map(|k| k.weight * (-sq_dist / (2.0 * k.sigma * k.sigma)).exp())
        .sum()
}
