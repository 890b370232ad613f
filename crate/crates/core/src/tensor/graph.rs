use crate::error::{Error, Result};
use crate::tensor::kernels::{self, NormStats, Window};
use crate::tensor::{Shape, Tensor};

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Spatial padding applied before a convolution, with its width in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero(usize),
    Reflect(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        window: Window,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        window: Window,
    },
    InstanceNorm {
        input: Var,
        scale: Var,
        shift: Var,
        eps: f32,
        stats: NormStats,
    },
    Act {
        input: Var,
        kind: Activation,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var, f32),
    MulScalar(Var, f32),
    AddBias(Var, Var),
    Abs(Var),
    /// Piecewise constant; never propagates gradient.
    Sign,
    Sum(Var),
    Mean(Var),
    L1(Var),
    Resize {
        input: Var,
        ys: Vec<usize>,
        xs: Vec<usize>,
    },
    Concat(Vec<Var>),
    SumChannels(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single forward/backward pass. Nodes are appended in execution order, so
/// the node list is always a topological order and backward is one reverse
/// sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
    precise: bool,
    /// Branch signs imposed on kink ops, consumed in construction order.
    frozen: Option<(Vec<i8>, usize)>,
    /// Branch signs used by each kink node built under `frozen`.
    pieces: std::collections::HashMap<usize, Vec<i8>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose convolutions accumulate in f64 before rounding their
    /// outputs to f32. Slower; meant for numeric gradient oracles.
    pub fn precise() -> Self {
        Self {
            precise: true,
            ..Self::default()
        }
    }

    /// A [`Graph::precise`] graph whose ReLU, leaky ReLU, abs and L1 ops pick
    /// their branch from `signature` (as returned by
    /// [`Graph::kink_signature`] for the same construction sequence) instead
    /// of from their inputs. The result is the smooth piece active at the
    /// point that produced the signature, extended linearly past its kinks.
    pub fn frozen(signature: Vec<i8>) -> Self {
        Self {
            precise: true,
            frozen: Some((signature, 0)),
            ..Self::default()
        }
    }

    /// Per-element branch signs for the next kink op over `x`.
    fn branch_signs(&mut self, x: &Tensor) -> Vec<i8> {
        if let Some((sig, cursor)) = &mut self.frozen {
            if let Some(part) = sig.get(*cursor..*cursor + x.numel()) {
                *cursor += x.numel();
                return part.to_vec();
            }
        }
        x.data().iter().map(|&v| sign(v) as i8).collect()
    }

    fn push_piece(&mut self, value: Tensor, op: Op, rg: bool, signs: Vec<i8>) -> Var {
        let v = self.push(value, op, rg);
        if self.frozen.is_some() {
            self.pieces.insert(v.0, signs);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A gradient-blocked input (images, masks, frozen weights).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable leaf whose gradient is kept after [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the loss with respect to a leaf, once backward has run.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            let dim = ["batch", "channel", "height", "width"]
                .iter()
                .zip(sa.dims().iter().zip(sb.dims()))
                .find(|(_, (x, y))| *x != y)
                .map(|(name, _)| *name)
                .unwrap_or("?");
            return Err(Error::shape(op, format!("{dim} dimension differs: {sa} vs {sb}")));
        }
        Ok(())
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let window = kernels::conv2d_window(self.shape(input), self.shape(kernel), stride, padding)?;
        let out = kernels::conv2d_forward(self.value(input), self.value(kernel), &window, self.precise);
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                window,
            },
            rg,
        ))
    }

    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let window = kernels::conv_transpose_window(self.shape(input), self.shape(kernel), stride)?;
        let out = kernels::conv_transpose2d_forward(self.value(input), self.value(kernel), &window, self.precise);
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                input,
                kernel,
                window,
            },
            rg,
        ))
    }

    /// `scale` and `shift` are (1, C, 1, 1).
    pub fn instance_norm(&mut self, input: Var, scale: Var, shift: Var, eps: f32) -> Result<Var> {
        const OP: &str = "instance_norm";
        if !(eps > 0.0) {
            return Err(Error::invalid(OP, format!("epsilon must be > 0, got {eps}")));
        }
        let c = self.shape(input).channels;
        for (name, v) in [("scale", scale), ("shift", shift)] {
            if self.shape(v) != Shape::new(1, c, 1, 1) {
                return Err(Error::shape(
                    OP,
                    format!("{name} must be (1, {c}, 1, 1), got {}", self.shape(v)),
                ));
            }
        }
        let (out, stats) = kernels::instance_norm_forward(
            self.value(input),
            self.value(scale).data(),
            self.value(shift).data(),
            eps,
        );
        let rg = self.rg(&[input, scale, shift]);
        Ok(self.push(
            out,
            Op::InstanceNorm {
                input,
                scale,
                shift,
                eps,
                stats,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(slope) = kind {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::invalid(
                    "activation",
                    format!("leaky_relu slope must be in (0, 1), got {slope}"),
                ));
            }
        }
        let rg = self.rg(&[input]);
        let neg = match kind {
            Activation::Relu => 0.0,
            Activation::LeakyRelu(slope) => slope,
            Activation::Tanh => {
                let out = self.value(input).map(f32::tanh);
                return Ok(self.push(out, Op::Act { input, kind }, rg));
            }
        };
        let x = self.value(input).clone();
        let signs = self.branch_signs(&x);
        let data = x
            .data()
            .iter()
            .zip(&signs)
            .map(|(&v, &s)| if s > 0 { v } else { neg * v })
            .collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.push_piece(out, Op::Act { input, kind }, rg, signs))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Relu).expect("relu is infallible")
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f32) -> Result<Var> {
        self.activation(input, Activation::LeakyRelu(slope))
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Tanh).expect("tanh is infallible")
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|v| v + s);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a, s), rg)
    }

    pub fn mul_scalar(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::MulScalar(a, s), rg)
    }

    /// Adds a per-channel `bias` of shape (1, C, 1, 1) to every plane of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let s = self.shape(a);
        if self.shape(bias) != Shape::new(1, s.channels, 1, 1) {
            return Err(Error::shape(
                "add_bias",
                format!("bias must be (1, {}, 1, 1), got {}", s.channels, self.shape(bias)),
            ));
        }
        let b = self.value(bias).data();
        let out = Tensor::from_fn(s, |n, c, y, x| self.value(a).at(n, c, y, x) + b[c]);
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddBias(a, bias), rg))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("a var always matches its own shape")
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let x = self.value(a).clone();
        let signs = self.branch_signs(&x);
        let data = x.data().iter().zip(&signs).map(|(&v, &s)| s as f32 * v).collect();
        let out = Tensor::new(x.shape(), data).expect("same size");
        let rg = self.rg(&[a]);
        self.push_piece(out, Op::Abs(a), rg, signs)
    }

    /// Element-wise sign in {-1, 0, 1}. The result is a constant: no
    /// gradient flows back through it.
    pub fn sign(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sign);
        self.push(out, Op::Sign, false)
    }

    fn reduce_check(&self, op: &'static str, a: Var) -> Result<()> {
        if self.value(a).numel() == 0 {
            return Err(Error::invalid(op, "empty tensor"));
        }
        Ok(())
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce_check("sum", a)?;
        let s: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s as f32), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce_check("mean", a)?;
        let t = self.value(a);
        let s: f64 = t.data().iter().map(|&v| v as f64).sum();
        let m = s / t.numel() as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(m as f32), Op::Mean(a), rg))
    }

    pub fn l1_norm(&mut self, a: Var) -> Result<Var> {
        self.reduce_check("l1_norm", a)?;
        let x = self.value(a).clone();
        let signs = self.branch_signs(&x);
        let s: f64 = x.data().iter().zip(&signs).map(|(&v, &s)| s as f64 * v as f64).sum();
        let rg = self.rg(&[a]);
        Ok(self.push_piece(Tensor::scalar(s as f32), Op::L1(a), rg, signs))
    }

    pub fn resize_nearest(&mut self, a: Var, target_h: usize, target_w: usize) -> Result<Var> {
        let out = kernels::resize_nearest(self.value(a), target_h, target_w)?;
        let s = self.shape(a);
        let ys = kernels::nearest_index(s.height, target_h);
        let xs = kernels::nearest_index(s.width, target_w);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Resize { input: a, ys, xs }, rg))
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid(OP, "no inputs"))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.batch, s.height, s.width) != (s0.batch, s0.height, s0.width) {
                return Err(Error::shape(OP, format!("{s} does not match {s0} outside channels")));
            }
            channels += s.channels;
        }
        let out_shape = Shape::new(s0.batch, channels, s0.height, s0.width);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.batch {
            for &p in parts {
                let t = self.value(p);
                let per = t.shape().channels * t.shape().plane();
                data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// (N, C, H, W) → (N, 1, H, W) by summing channels.
    pub fn sum_channels(&mut self, a: Var) -> Var {
        let out = kernels::sum_channels(self.value(a));
        let rg = self.rg(&[a]);
        self.push(out, Op::SumChannels(a), rg)
    }

    /// Sign pattern of the inputs of every non-differentiable op (ReLU,
    /// leaky ReLU, abs, L1). Two evaluations with equal signatures lie
    /// on the same smooth piece of the function.
    pub fn kink_signature(&self) -> Vec<i8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            let input = match &node.op {
                Op::Act {
                    input,
                    kind: Activation::Relu | Activation::LeakyRelu(_),
                } => *input,
                Op::Abs(a) | Op::L1(a) => *a,
                _ => continue,
            };
            sig.extend(self.nodes[input.0].value.data().iter().map(|&v| sign(v) as i8));
        }
        sig
    }

    /// Value of `v` recomputed in f64 through elementwise, bias, channel-sum
    /// and reduction ops. Convolutions, normalization and data movement
    /// contribute their stored f32 outputs. Finite-difference checks use this
    /// so that rounding of the final reductions does not swamp the probe.
    pub fn value_f64(&self, v: Var) -> Vec<f64> {
        let mut memo: Vec<Option<Vec<f64>>> = vec![None; v.0 + 1];
        self.eval_f64(v, &mut memo)
    }

    fn eval_f64(&self, v: Var, memo: &mut Vec<Option<Vec<f64>>>) -> Vec<f64> {
        if let Some(done) = &memo[v.0] {
            return done.clone();
        }
        let node = &self.nodes[v.0];
        let piece = self.pieces.get(&v.0);
        let mut rec = |x: Var| self.eval_f64(x, memo);
        let branch = |x: &[f64]| -> Vec<f64> {
            match piece {
                Some(p) => p.iter().map(|&s| s as f64).collect(),
                None => x.iter().map(|&a| if a > 0.0 { 1.0 } else if a < 0.0 { -1.0 } else { 0.0 }).collect(),
            }
        };
        let out: Vec<f64> = match &node.op {
            Op::Act { input, kind } => {
                let x = rec(*input);
                let neg = match *kind {
                    Activation::Relu => 0.0,
                    Activation::LeakyRelu(s) => s as f64,
                    Activation::Tanh => return memo_store(memo, v, x.iter().map(|a| a.tanh()).collect()),
                };
                x.iter().zip(branch(&x)).map(|(&a, s)| if s > 0.0 { a } else { neg * a }).collect()
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (x, y) = (rec(*a), rec(*b));
                let f = match &node.op {
                    Op::Add(..) => |p: f64, q: f64| p + q,
                    Op::Sub(..) => |p: f64, q: f64| p - q,
                    _ => |p: f64, q: f64| p * q,
                };
                x.iter().zip(&y).map(|(&p, &q)| f(p, q)).collect()
            }
            Op::AddScalar(a, c) => rec(*a).iter().map(|x| x + *c as f64).collect(),
            Op::MulScalar(a, c) => rec(*a).iter().map(|x| x * *c as f64).collect(),
            Op::Abs(a) => {
                let x = rec(*a);
                x.iter().zip(branch(&x)).map(|(a, s)| s * a).collect()
            }
            Op::Sum(a) => vec![rec(*a).iter().sum()],
            Op::Mean(a) => {
                let x = rec(*a);
                vec![x.iter().sum::<f64>() / x.len() as f64]
            }
            Op::L1(a) => {
                let x = rec(*a);
                vec![x.iter().zip(branch(&x)).map(|(a, s)| s * a).sum()]
            }
            Op::AddBias(a, b) => {
                let (x, bias) = (rec(*a), rec(*b));
                let s = node.value.shape();
                let plane = s.plane();
                x.iter()
                    .enumerate()
                    .map(|(i, &p)| p + bias[(i / plane) % s.channels])
                    .collect()
            }
            Op::SumChannels(a) => {
                let x = rec(*a);
                let s = self.shape(*a);
                let plane = s.plane();
                let mut out = vec![0.0; s.batch * plane];
                for (i, &p) in x.iter().enumerate() {
                    let n = i / (s.channels * plane);
                    out[n * plane + i % plane] += p;
                }
                out
            }
            Op::Conv2d { input, kernel, window } => {
                let (x, k) = (rec(*input), rec(*kernel));
                let s = node.value.shape();
                kernels::conv2d_f64(&x, s.batch, &k, s.channels, window)
            }
            Op::ConvTranspose2d { input, kernel, window } => {
                let (x, k) = (rec(*input), rec(*kernel));
                let s = self.shape(*input);
                kernels::conv_transpose2d_f64(&x, s.batch, s.channels, &k, window)
            }
            Op::InstanceNorm {
                input,
                scale,
                shift,
                eps,
                ..
            } => {
                let (x, a, b) = (rec(*input), rec(*scale), rec(*shift));
                let s = node.value.shape();
                kernels::instance_norm_f64(&x, s.channels, s.plane(), &a, &b, *eps)
            }
            Op::Resize { input, ys, xs } => {
                let x = rec(*input);
                let (si, so) = (self.shape(*input), node.value.shape());
                let mut out = Vec::with_capacity(so.numel());
                for n in 0..so.batch {
                    for c in 0..so.channels {
                        for &sy in ys {
                            out.extend(xs.iter().map(|&sx| x[si.index(n, c, sy, sx)]));
                        }
                    }
                }
                out
            }
            Op::Concat(parts) => {
                let vals: Vec<(Vec<f64>, usize)> = parts
                    .iter()
                    .map(|&p| {
                        let ps = self.shape(p);
                        (rec(p), ps.channels * ps.plane())
                    })
                    .collect();
                let mut out = Vec::with_capacity(node.value.numel());
                for n in 0..node.value.shape().batch {
                    for (x, per) in &vals {
                        out.extend_from_slice(&x[n * per..(n + 1) * per]);
                    }
                }
                out
            }
            Op::Leaf | Op::Sign => node.value.data().iter().map(|&x| x as f64).collect(),
        };
        memo_store(memo, v, out)
    }

    /// Reverse sweep from a scalar `loss`. Afterwards [`Graph::grad`] returns
    /// the gradient of every trainable leaf that the loss depends on.
    /// Running it a second time on the same graph is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::NonScalarLoss(ls.to_string()));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.node_backward(i, &gy);
            for (v, g) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, i: usize, gy: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf | Op::Sign => {}
            Op::Conv2d {
                input,
                kernel,
                window,
            } => {
                let (dx, dk) = kernels::conv2d_backward(
                    val(*input),
                    val(*kernel),
                    window,
                    gy,
                    rg(*input),
                    rg(*kernel),
                );
                out.extend(dx.map(|t| (*input, t)));
                out.extend(dk.map(|t| (*kernel, t)));
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                window,
            } => {
                let (dx, dk) = kernels::conv_transpose2d_backward(
                    val(*input),
                    val(*kernel),
                    window,
                    gy,
                    rg(*input),
                    rg(*kernel),
                );
                out.extend(dx.map(|t| (*input, t)));
                out.extend(dk.map(|t| (*kernel, t)));
            }
            Op::InstanceNorm {
                input,
                scale,
                shift,
                stats,
                ..
            } => {
                let s = val(*input).shape();
                let (dx, dscale, dshift) =
                    kernels::instance_norm_backward(s, val(*scale).data(), stats, gy);
                let cs = Shape::new(1, s.channels, 1, 1);
                out.push((*input, dx));
                out.push((*scale, Tensor::new(cs, dscale).expect("channel vector")));
                out.push((*shift, Tensor::new(cs, dshift).expect("channel vector")));
            }
            Op::Act { input, kind } => {
                let g = match *kind {
                    Activation::Relu => zip(val(*input), gy, |x, g| if x > 0.0 { g } else { 0.0 }),
                    Activation::LeakyRelu(slope) => {
                        zip(val(*input), gy, |x, g| if x > 0.0 { g } else { slope * g })
                    }
                    Activation::Tanh => zip(&node.value, gy, |y, g| g * (1.0 - y * y)),
                };
                out.push((*input, g));
            }
            Op::Add(a, b) => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, gy.clone()));
                out.push((*b, gy.map(|g| -g)));
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    out.push((*a, zip(val(*b), gy, |y, g| y * g)));
                }
                if rg(*b) {
                    out.push((*b, zip(val(*a), gy, |x, g| x * g)));
                }
            }
            Op::AddScalar(a, _) => out.push((*a, gy.clone())),
            Op::MulScalar(a, s) => out.push((*a, gy.map(|g| g * s))),
            Op::AddBias(a, b) => {
                out.push((*a, gy.clone()));
                if rg(*b) {
                    let s = gy.shape();
                    let plane = s.plane();
                    let mut db = vec![0.0f64; s.channels];
                    for (i, chunk) in gy.data().chunks(plane).enumerate() {
                        db[i % s.channels] += chunk.iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let db = db.into_iter().map(|v| v as f32).collect();
                    out.push((*b, Tensor::new(Shape::new(1, s.channels, 1, 1), db).expect("bias")));
                }
            }
            Op::Abs(a) => out.push((*a, zip(val(*a), gy, |x, g| sign(x) * g))),
            Op::Sum(a) => {
                let g = gy.item();
                out.push((*a, Tensor::full(val(*a).shape(), g)));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let g = (gy.item() as f64 / t.numel() as f64) as f32;
                out.push((*a, Tensor::full(t.shape(), g)));
            }
            Op::L1(a) => {
                let g = gy.item();
                out.push((*a, val(*a).map(|x| sign(x) * g)));
            }
            Op::Resize { input, ys, xs } => {
                let s = val(*input).shape();
                let mut dx = Tensor::zeros(s);
                let os = gy.shape();
                for n in 0..os.batch {
                    for c in 0..os.channels {
                        for (y, &sy) in ys.iter().enumerate() {
                            for (x, &sx) in xs.iter().enumerate() {
                                let idx = s.index(n, c, sy, sx);
                                dx.data_mut()[idx] += gy.at(n, c, y, x);
                            }
                        }
                    }
                }
                out.push((*input, dx));
            }
            Op::Concat(parts) => {
                let os = gy.shape();
                let mut offset = 0;
                for &p in parts {
                    let ps = val(p).shape();
                    if rg(p) {
                        let per = ps.channels * ps.plane();
                        let mut data = Vec::with_capacity(ps.numel());
                        for n in 0..os.batch {
                            let start = os.index(n, offset, 0, 0);
                            data.extend_from_slice(&gy.data()[start..start + per]);
                        }
                        out.push((p, Tensor::new(ps, data).expect("concat slice")));
                    }
                    offset += ps.channels;
                }
            }
            Op::SumChannels(a) => {
                let s = val(*a).shape();
                let plane = s.plane();
                let g = Tensor::from_fn(s, |n, _, y, x| gy.data()[n * plane + y * s.width + x]);
                out.push((*a, g));
            }
        }
        out
    }
}

#[inline]
fn memo_store(memo: &mut [Option<Vec<f64>>], v: Var, out: Vec<f64>) -> Vec<f64> {
    memo[v.0] = Some(out.clone());
    out
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}
