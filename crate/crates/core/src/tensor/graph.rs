use super::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use super::{shape_err, Element, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    Upsample2x { input: Var },
    Relu { input: Var },
    Silu { input: Var },
    Sigmoid { input: Var },
    GlobalAvgPool { input: Var },
    Linear { input: Var, weight: Var, bias: Var },
    BceWithLogits { logits: Var, labels: Vec<T> },
    Mse { pred: Var, target: Var },
    Sum { input: Var },
    Mul { a: Var, b: Var },
    Reshape { input: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracks: bool,
}

/// Forward tape. One graph supports exactly one [`Graph::backward`] call.
#[derive(Debug)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a gradient-tracking leaf. Leaves the loss does not depend on
    /// get an all-zero gradient; untracked values return `None`.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it is differentiated iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let tracks = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            tracks,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input (never differentiated).
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn tracks(&self, var: Var) -> bool {
        self.nodes[var.0].tracks
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.data().iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let tracks = inputs.iter().any(|&v| self.tracks(v));
        self.nodes.push(Node { value, op, tracks });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(
            self.value(input).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
            stride,
            padding,
        )?;
        let out = conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Tensor::new(geom.output_shape(), out)?;
        self.push("conv2d", value, Op::Conv2d { input, weight, bias, geom }, &[input, weight, bias])
    }

    pub fn upsample_nearest2x(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let &[n, c, h, w] = x.shape() else {
            return Err(shape_err("upsample_nearest2x", format!("expected NCHW, got {:?}", x.shape())));
        };
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for (plane, dst) in x.data().chunks(h * w).zip(out.chunks_mut(h2 * w2)) {
            for y in 0..h2 {
                let src = &plane[(y / 2) * w..(y / 2 + 1) * w];
                for (xo, d) in dst[y * w2..(y + 1) * w2].iter_mut().enumerate() {
                    *d = src[xo / 2];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h2, w2], out)?;
        self.push("upsample_nearest2x", value, Op::Upsample2x { input }, &[input])
    }

    fn map_unary(&mut self, name: &'static str, input: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let x = self.value(input);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, value, op, &[input])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.map_unary("relu", input, |v| v.max(T::zero()), Op::Relu { input })
    }

    pub fn silu(&mut self, input: Var) -> Result<Var> {
        self.map_unary("silu", input, |v| v * sigmoid(v), Op::Silu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.map_unary("sigmoid", input, sigmoid, Op::Sigmoid { input })
    }

    /// `[N, C, H, W] -> [N, C]`
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let &[n, c, h, w] = x.shape() else {
            return Err(shape_err("global_avg_pool", format!("expected NCHW, got {:?}", x.shape())));
        };
        let denom = T::from_usize(h * w).unwrap();
        let out = x
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() / denom)
            .collect();
        let value = Tensor::new(vec![n, c], out)?;
        self.push("global_avg_pool", value, Op::GlobalAvgPool { input }, &[input])
    }

    /// `x [N, Cin] @ weight[Cout, Cin]^T + bias[Cout]`
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, wt, b) = (self.value(input), self.value(weight), self.value(bias));
        let (&[n, cin], &[cout, wcin]) = (x.shape(), wt.shape()) else {
            return Err(shape_err("linear", format!("input {:?}, weight {:?}", x.shape(), wt.shape())));
        };
        if wcin != cin || b.shape() != [cout] {
            return Err(shape_err(
                "linear",
                format!("input {:?}, weight {:?}, bias {:?}", x.shape(), wt.shape(), b.shape()),
            ));
        }
        let mut out: Vec<T> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
        T::gemm(n, cin, cout, T::one(), x.data(), (cin as isize, 1), wt.data(), (1, cin as isize), T::one(), &mut out, cout);
        let value = Tensor::new(vec![n, cout], out)?;
        self.push("linear", value, Op::Linear { input, weight, bias }, &[input, weight, bias])
    }

    /// Mean binary cross-entropy on raw logits, computed as
    /// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var> {
        let z = self.value(logits);
        if z.shape().len() != 1 || z.numel() != labels.len() || labels.is_empty() {
            return Err(shape_err(
                "bce_with_logits",
                format!("logits {:?} vs {} labels", z.shape(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != T::zero() && y != T::one()) {
            return Err(TensorError::Validation(format!("label {bad:?} is not 0 or 1")));
        }
        let total: T = z
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let n = T::from_usize(labels.len()).unwrap();
        let value = Tensor::scalar(total / n);
        self.push(
            "bce_with_logits",
            value,
            Op::BceWithLogits { logits, labels: labels.to_vec() },
            &[logits],
        )
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(shape_err("mse", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        if p.numel() == 0 {
            return Err(shape_err("mse", "empty tensors"));
        }
        let total: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(total / T::from_usize(p.numel()).unwrap());
        self.push("mse", value, Op::Mse { pred, target }, &[pred, target])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(input).data().iter().copied().sum());
        self.push("sum", value, Op::Sum { input }, &[input])
    }

    /// Elementwise product of equally-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let value = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect(),
        )?;
        self.push("mul", value, Op::Mul { a, b }, &[a, b])
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(input).clone().with_requires_grad(false).reshape(shape)?;
        self.push("reshape", value, Op::Reshape { input }, &[input])
    }

    /// Reverse-mode pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(TensorError::Usage("backward already ran on this graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.tracks(loss) {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.tracks {
                let g = grads[i].get_or_insert_with(|| vec![T::zero(); node.value.numel()]);
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], var: Var, delta: Vec<T>) {
        if !self.tracks(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a = *a + d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Vec<T>>], var: Var, f: impl FnOnce() -> Vec<T>) {
        if self.tracks(var) {
            let delta = f();
            self.accumulate(grads, var, delta);
        }
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let (gx, gw, gb) = conv2d_backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    geom,
                    self.tracks(*input),
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *input, gx);
                }
                self.accumulate(grads, *weight, gw);
                self.accumulate(grads, *bias, gb);
            }
            Op::Upsample2x { input } => self.accumulate_with(grads, *input, || {
                let x = self.value(*input);
                let (h, w) = (x.shape()[2], x.shape()[3]);
                let mut out = vec![T::zero(); x.numel()];
                for (dst, src) in out.chunks_mut(h * w).zip(g.chunks(4 * h * w)) {
                    for y in 0..2 * h {
                        for xo in 0..2 * w {
                            let d = &mut dst[(y / 2) * w + xo / 2];
                            *d = *d + src[y * 2 * w + xo];
                        }
                    }
                }
                out
            }),
            Op::Relu { input } => self.accumulate_with(grads, *input, || {
                self.value(*input)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gy)| if x > T::zero() { gy } else { T::zero() })
                    .collect()
            }),
            Op::Silu { input } => self.accumulate_with(grads, *input, || {
                self.value(*input)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gy)| {
                        let s = sigmoid(x);
                        gy * s * (T::one() + x * (T::one() - s))
                    })
                    .collect()
            }),
            Op::Sigmoid { input } => self.accumulate_with(grads, *input, || {
                node.value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gy)| gy * s * (T::one() - s))
                    .collect()
            }),
            Op::GlobalAvgPool { input } => self.accumulate_with(grads, *input, || {
                let shape = self.value(*input).shape();
                let hw = shape[2] * shape[3];
                let denom = T::from_usize(hw).unwrap();
                g.iter()
                    .flat_map(|&gy| std::iter::repeat_n(gy / denom, hw))
                    .collect()
            }),
            Op::Linear { input, weight, bias } => {
                let (x, wt) = (self.value(*input), self.value(*weight));
                let (n, cin) = (x.shape()[0], x.shape()[1]);
                let cout = wt.shape()[0];
                self.accumulate_with(grads, *input, || {
                    let mut gx = vec![T::zero(); n * cin];
                    T::gemm(n, cout, cin, T::one(), g, (cout as isize, 1), wt.data(), (cin as isize, 1), T::zero(), &mut gx, cin);
                    gx
                });
                self.accumulate_with(grads, *weight, || {
                    let mut gw = vec![T::zero(); cout * cin];
                    T::gemm(cout, n, cin, T::one(), g, (1, cout as isize), x.data(), (cin as isize, 1), T::zero(), &mut gw, cin);
                    gw
                });
                self.accumulate_with(grads, *bias, || {
                    (0..cout)
                        .map(|c| (0..n).map(|r| g[r * cout + c]).sum())
                        .collect()
                });
            }
            Op::BceWithLogits { logits, labels } => self.accumulate_with(grads, *logits, || {
                let n = T::from_usize(labels.len()).unwrap();
                self.value(*logits)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| g[0] * (sigmoid(z) - y) / n)
                    .collect()
            }),
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let scale = T::from_f64_lossy(2.0) * g[0] / T::from_usize(p.len()).unwrap();
                self.accumulate_with(grads, *pred, || {
                    p.iter().zip(t).map(|(&a, &b)| scale * (a - b)).collect()
                });
                self.accumulate_with(grads, *target, || {
                    p.iter().zip(t).map(|(&a, &b)| scale * (b - a)).collect()
                });
            }
            Op::Sum { input } => self.accumulate_with(grads, *input, || {
                vec![g[0]; self.value(*input).numel()]
            }),
            Op::Mul { a, b } => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate_with(grads, *a, || y.iter().zip(g).map(|(&q, &gy)| q * gy).collect());
                self.accumulate_with(grads, *b, || x.iter().zip(g).map(|(&p, &gy)| p * gy).collect());
            }
            Op::Reshape { input } => self.accumulate_with(grads, *input, || g.to_vec()),
        }
    }
}

/// Logistic function evaluated without overflow for large |x|.
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
