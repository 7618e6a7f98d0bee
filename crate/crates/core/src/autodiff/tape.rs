use super::kernels::{self, ConvGeom};
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BCE_CLAMP: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean/variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        /// im2col matrix of every sample, reused by the backward pass.
        cols: Vec<f64>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2 {
        input: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    Sigmoid {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    Mse {
        a: Var,
        b: Var,
    },
    MseAt {
        pred: Var,
        target: Vec<f64>,
        indices: Vec<usize>,
    },
    Bce {
        pred: Var,
        target: Vec<f64>,
    },
    ClampStraightThrough {
        input: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of a forward computation. Nodes are appended in execution
/// order, so the vector itself is a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
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

    /// Records a differentiable leaf (a parameter or an input we want the
    /// gradient of).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, mut value: Tensor, requires_grad: bool) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite output from {} (node {})",
                op_name(&op),
                self.nodes.len()
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward root with respect to `v`. Nodes that
    /// were unreachable from the root report all zeros.
    pub fn grad(&self, v: Var) -> Option<Vec<f64>> {
        if !self.consumed {
            return None;
        }
        Some(
            self.grads[v.0]
                .clone()
                .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]),
        )
    }

    /// Same-padded or valid cross-correlation with bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let (o, kc, kh, kw) = self
            .value(kernel)
            .dims4()
            .map_err(|_| shape_err!("conv2d kernel must be O×C×k×k"))?;
        if kc != c {
            return Err(shape_err!(
                "conv2d input channels: input has {c}, kernel expects {kc}"
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(shape_err!(
                "conv2d kernel size: need odd square, got {kh}×{kw}"
            ));
        }
        if padding != 0 && padding != (kh - 1) / 2 {
            return Err(invalid!(
                "conv2d padding must be 0 or {}, got {padding}",
                (kh - 1) / 2
            ));
        }
        if self.value(bias).shape() != [o] {
            return Err(shape_err!(
                "conv2d bias length: expected [{o}], got {:?}",
                self.value(bias).shape()
            ));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(shape_err!(
                "conv2d spatial size {h}×{w} smaller than kernel {kh}"
            ));
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kernel: kh,
            padding,
        };
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let (rows, plane) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; n * rows * plane];
        let mut out = vec![0.0; n * o * plane];
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let b = self.value(bias).data();
        for s in 0..n {
            let col = &mut cols[s * rows * plane..(s + 1) * rows * plane];
            kernels::im2col(&x[s * c * h * w..(s + 1) * c * h * w], &geom, col);
            let dst = &mut out[s * o * plane..(s + 1) * o * plane];
            for (oc, chunk) in dst.chunks_mut(plane).enumerate() {
                chunk.fill(b[oc]);
            }
            kernels::gemm(o, rows, plane, k, false, col, false, 1.0, dst);
        }
        let value = Tensor::new(vec![n, o, oh, ow], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            &[input, kernel, bias],
        )
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!(
                "maxpool2 needs even height and width, got {h}×{w}"
            ));
        }
        let mut out = vec![0.0; n * c * (h / 2) * (w / 2)];
        let argmax = kernels::maxpool2(self.value(input).data(), n * c, h, w, &mut out);
        let value = Tensor::new(vec![n, c, h / 2, w / 2], out)?;
        self.push(value, Op::MaxPool2 { input, argmax }, &[input])
    }

    pub fn upsample_nearest2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let out = kernels::upsample2(self.value(input).data(), n * c, h, w);
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        self.push(value, Op::Upsample2 { input }, &[input])
    }

    /// Batch normalization over N×H×W per channel. Train mode normalizes with
    /// batch statistics and folds them into `running`; eval mode uses
    /// `running` and leaves it untouched.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(shape_err!(
                    "batchnorm {name}: expected [{c}], got {:?}",
                    self.value(v).shape()
                ));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(shape_err!(
                "batchnorm running stats: expected {c} channels, got {}",
                running.mean.len()
            ));
        }
        let plane = h * w;
        let count = (n * plane) as f64;
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0;
                    for r in kernels::channel_blocks(n, c, plane, ch) {
                        sum += x[r].iter().sum::<f64>();
                    }
                    let mut mean = sum / count;
                    // one correction pass removes the rounding left by the
                    // plain sum (a constant channel then centres to exact 0)
                    let mut resid = 0.0;
                    for r in kernels::channel_blocks(n, c, plane, ch) {
                        resid += x[r].iter().map(|v| v - mean).sum::<f64>();
                    }
                    mean += resid / count;
                    let mut sq = 0.0;
                    for r in kernels::channel_blocks(n, c, plane, ch) {
                        sq += x[r].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                    }
                    let var = sq / count;
                    let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
                    running.mean[ch] = (1.0 - BN_MOMENTUM) * running.mean[ch] + BN_MOMENTUM * mean;
                    running.var[ch] =
                        (1.0 - BN_MOMENTUM) * running.var[ch] + BN_MOMENTUM * unbiased;
                    (mean, var)
                }
                Mode::Eval => (running.mean[ch], running.var[ch]),
            };
            let is = 1.0 / (var + BN_EPSILON).sqrt();
            inv_std[ch] = is;
            for r in kernels::channel_blocks(n, c, plane, ch) {
                for i in r {
                    let xh = (x[i] - mean) * is;
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            &[input, gamma, beta],
        )
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(invalid!("leaky slope must lie in (0, 1), got {slope}"));
        }
        let value = self
            .value(input)
            .map(|v| if v >= 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu { input, slope }, &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(sigmoid);
        self.push(value, Op::Sigmoid { input }, &[input])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape_err!(
                "concat_channels: {:?} vs {:?} differ outside the channel axis",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let plane = h * w;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for s in 0..n {
            out.extend_from_slice(&xa[s * ca * plane..(s + 1) * ca * plane]);
            out.extend_from_slice(&xb[s * cb * plane..(s + 1) * cb * plane]);
        }
        let value = Tensor::new(vec![n, ca + cb, h, w], out)?;
        self.push(value, Op::Concat { a, b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).ensure_same_shape(self.value(b), "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        self.push(value, Op::Add { a, b }, &[a, b])
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let value = self.value(input).map(|v| factor * v);
        self.push(value, Op::Scale { input, factor }, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let total = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { input }, &[input])
    }

    /// Clamps to [0, 1]; the backward pass treats the clamp as identity.
    pub fn clamp_unit_straight_through(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| v.clamp(0.0, 1.0));
        self.push(value, Op::ClampStraightThrough { input }, &[input])
    }

    /// Mean of squared differences over all elements.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).ensure_same_shape(self.value(b), "mse_loss")?;
        let loss = mean_sq_diff(self.value(a).data(), self.value(b).data());
        self.push(Tensor::scalar(loss), Op::Mse { a, b }, &[a, b])
    }

    /// Mean of squared differences restricted to the flat positions in
    /// `indices`; `target` is a constant.
    pub fn mse_at(&mut self, pred: Var, target: &Tensor, indices: &[usize]) -> Result<Var> {
        self.value(pred).ensure_same_shape(target, "mse_at")?;
        if indices.is_empty() {
            return Err(invalid!("mse_at needs at least one index"));
        }
        let len = target.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(invalid!(
                "mse_at index {bad} out of bounds for {len} elements"
            ));
        }
        let p = self.value(pred).data();
        let t: Vec<f64> = indices.iter().map(|&i| target.data()[i]).collect();
        let loss = indices
            .iter()
            .zip(&t)
            .map(|(&i, tv)| (p[i] - tv) * (p[i] - tv))
            .sum::<f64>()
            / indices.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::MseAt {
                pred,
                target: t,
                indices: indices.to_vec(),
            },
            &[pred],
        )
    }

    /// Binary cross-entropy against a constant target in [0, 1]. Predictions
    /// are clamped to [1e-7, 1 - 1e-7] before the logarithms.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        self.value(pred).ensure_same_shape(target, "bce_loss")?;
        if let Some(bad) = target.data().iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(invalid!("bce target {bad} outside [0, 1]"));
        }
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / target.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
            &[pred],
        )
    }

    /// Reverse pass from the scalar `root`. A tape can be differentiated once.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Tape(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                self.grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64], &[Node])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let mut buf = self.grads[v.0].take().unwrap_or_else(|| vec![0.0; len]);
        f(&mut buf, &self.nodes);
        self.grads[v.0] = Some(buf);
    }

    fn backprop_node(&mut self, idx: usize, g: &[f64]) {
        // Temporarily take the op out so the match can borrow saved context
        // while gradients of earlier nodes are mutated.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let (n, o) = (
                    self.nodes[input.0].value.shape()[0],
                    self.nodes[kernel.0].value.shape()[0],
                );
                let (rows, plane) = (geom.col_rows(), geom.col_cols());
                let in_len = geom.channels * geom.height * geom.width;
                self.accumulate(*bias, |gb, _| {
                    for s in 0..n {
                        for (oc, chunk) in g[s * o * plane..(s + 1) * o * plane]
                            .chunks(plane)
                            .enumerate()
                        {
                            gb[oc] += chunk.iter().sum::<f64>();
                        }
                    }
                });
                self.accumulate(*kernel, |gk, _| {
                    for s in 0..n {
                        let go = &g[s * o * plane..(s + 1) * o * plane];
                        let col = &cols[s * rows * plane..(s + 1) * rows * plane];
                        kernels::gemm(o, plane, rows, go, false, col, true, 1.0, gk);
                    }
                });
                self.accumulate(*input, |gi, nodes| {
                    let k = nodes[kernel.0].value.data();
                    let mut dcol = vec![0.0; rows * plane];
                    for s in 0..n {
                        let go = &g[s * o * plane..(s + 1) * o * plane];
                        kernels::gemm(rows, o, plane, k, true, go, false, 0.0, &mut dcol);
                        kernels::col2im_add(&dcol, geom, &mut gi[s * in_len..(s + 1) * in_len]);
                    }
                });
            }
            Op::MaxPool2 { input, argmax } => self.accumulate(*input, |gi, _| {
                for (o, &src) in argmax.iter().enumerate() {
                    gi[src] += g[o];
                }
            }),
            Op::Upsample2 { input } => {
                let (n, c, h, w) = self.nodes[input.0].value.dims4().expect("recorded rank 4");
                self.accumulate(*input, |gi, _| {
                    kernels::upsample2_backward(g, n * c, h, w, gi)
                });
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, h, w) = self.nodes[input.0].value.dims4().expect("recorded rank 4");
                let plane = h * w;
                let count = (n * plane) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for ch in 0..c {
                    for r in kernels::channel_blocks(n, c, plane, ch) {
                        for i in r {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                self.accumulate(*beta, |gb, _| {
                    for ch in 0..c {
                        gb[ch] += sum_g[ch];
                    }
                });
                self.accumulate(*gamma, |gg, _| {
                    for ch in 0..c {
                        gg[ch] += sum_gx[ch];
                    }
                });
                self.accumulate(*input, |gi, nodes| {
                    let gam = nodes[gamma.0].value.data();
                    for ch in 0..c {
                        let scale = gam[ch] * inv_std[ch];
                        for r in kernels::channel_blocks(n, c, plane, ch) {
                            for i in r {
                                gi[i] += if *train {
                                    scale / count
                                        * (count * g[i] - sum_g[ch] - xhat[i] * sum_gx[ch])
                                } else {
                                    scale * g[i]
                                };
                            }
                        }
                    }
                });
            }
            Op::LeakyRelu { input, slope } => self.accumulate(*input, |gi, nodes| {
                let x = nodes[input.0].value.data();
                for i in 0..gi.len() {
                    gi[i] += if x[i] >= 0.0 { g[i] } else { slope * g[i] };
                }
            }),
            Op::Sigmoid { input } => {
                let y = self.nodes[idx].value.data().to_vec();
                self.accumulate(*input, |gi, _| {
                    for i in 0..gi.len() {
                        gi[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Concat { a, b } => {
                let (n, ca, h, w) = self.nodes[a.0].value.dims4().expect("recorded rank 4");
                let cb = self.nodes[b.0].value.shape()[1];
                let plane = h * w;
                let ct = ca + cb;
                self.accumulate(*a, |ga, _| {
                    for s in 0..n {
                        let src = &g[s * ct * plane..(s * ct + ca) * plane];
                        for (d, v) in ga[s * ca * plane..(s + 1) * ca * plane].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                });
                self.accumulate(*b, |gb, _| {
                    for s in 0..n {
                        let src = &g[(s * ct + ca) * plane..(s + 1) * ct * plane];
                        for (d, v) in gb[s * cb * plane..(s + 1) * cb * plane].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    self.accumulate(v, |gv, _| {
                        for (d, s) in gv.iter_mut().zip(g) {
                            *d += s;
                        }
                    });
                }
            }
            Op::Scale { input, factor } => self.accumulate(*input, |gi, _| {
                for (d, s) in gi.iter_mut().zip(g) {
                    *d += factor * s;
                }
            }),
            Op::Sum { input } => self.accumulate(*input, |gi, _| {
                for d in gi.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Mse { a, b } => {
                let diff: Vec<f64> = self.nodes[a.0]
                    .value
                    .data()
                    .iter()
                    .zip(self.nodes[b.0].value.data())
                    .map(|(x, y)| x - y)
                    .collect();
                let coef = 2.0 * g[0] / diff.len() as f64;
                self.accumulate(*a, |ga, _| {
                    for (d, df) in ga.iter_mut().zip(&diff) {
                        *d += coef * df;
                    }
                });
                self.accumulate(*b, |gb, _| {
                    for (d, df) in gb.iter_mut().zip(&diff) {
                        *d -= coef * df;
                    }
                });
            }
            Op::MseAt {
                pred,
                target,
                indices,
            } => self.accumulate(*pred, |gp, nodes| {
                let p = nodes[pred.0].value.data();
                let coef = 2.0 * g[0] / indices.len() as f64;
                for (&i, t) in indices.iter().zip(target) {
                    gp[i] += coef * (p[i] - t);
                }
            }),
            Op::Bce { pred, target } => self.accumulate(*pred, |gp, nodes| {
                let p = nodes[pred.0].value.data();
                let inv_n = g[0] / target.len() as f64;
                for i in 0..gp.len() {
                    let pc = p[i].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    let t = target[i];
                    gp[i] += inv_n * (-(t / pc) + (1.0 - t) / (1.0 - pc));
                }
            }),
            Op::ClampStraightThrough { input } => self.accumulate(*input, |gi, _| {
                for (d, s) in gi.iter_mut().zip(g) {
                    *d += s;
                }
            }),
        }
        self.nodes[idx].op = op;
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::MaxPool2 { .. } => "maxpool2",
        Op::Upsample2 { .. } => "upsample_nearest2",
        Op::BatchNorm { .. } => "batchnorm2d",
        Op::LeakyRelu { .. } => "leaky_relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Concat { .. } => "concat_channels",
        Op::Add { .. } => "add",
        Op::Scale { .. } => "scale",
        Op::Sum { .. } => "sum",
        Op::Mse { .. } => "mse_loss",
        Op::MseAt { .. } => "mse_at",
        Op::Bce { .. } => "bce_loss",
        Op::ClampStraightThrough { .. } => "clamp",
    }
}
