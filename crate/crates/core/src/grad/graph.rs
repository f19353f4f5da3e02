use std::collections::{BTreeMap, HashMap};

use super::kernels::{self, Window};
use super::{Element, GradError, ParamSet, Result, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        win: Window,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Var,
        win: Window,
    },
    Relu(Var),
    Add(Var, Var),
    Resize(Var),
    Sum(Var),
    WeightedSum {
        input: Var,
        weights: Vec<T>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<String>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T = f32> {
    leaves: HashMap<Var, Tensor<T>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a differentiable leaf.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// A recording tape. Forward ops append nodes; [`Graph::backward`] walks them
/// in reverse once and then releases them.
#[derive(Debug, Default)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

fn dims4(op: &'static str, name: &'static str, d: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *d {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(GradError::Validation {
            op,
            msg: format!("{name} must be 4-D, got {d:?}"),
        }),
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed {
            Err(GradError::State("graph was released by backward".into()))
        } else {
            Ok(())
        }
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    /// Value of a recorded node.
    ///
    /// Panics if the graph was released or `v` came from another graph.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A leaf that never receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let t = t.with_requires_grad(false);
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported through [`Gradients::wrt`] when
    /// `t.requires_grad()` is set.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Records a named parameter from `params`; its gradient is reported
    /// under the same name.
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let t = params
            .get(name)
            .ok_or_else(|| GradError::Contract(format!("unknown parameter '{name}'")))?;
        let mut value = t.clone();
        value.clear_grad();
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some(name.to_string());
        Ok(v)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        self.check_live()?;
        let out = conv2d_forward(self.value(input), self.value(weight), Some(self.value(bias)), stride, pad)?;
        let win = {
            let wd = self.value(weight).dims();
            Window { kh: wd[2], kw: wd[3], stride, pad }
        };
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(out, Op::Conv2d { input, weight, bias, win }, rg))
    }

    pub fn conv2d_transpose(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        self.check_live()?;
        let out = conv2d_transpose_forward(self.value(input), self.value(weight), Some(self.value(bias)), stride, pad)?;
        let win = {
            let wd = self.value(weight).dims();
            Window { kh: wd[2], kw: wd[3], stride, pad }
        };
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(out, Op::ConvTranspose2d { input, weight, bias, win }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check_live()?;
        let src = self.value(x);
        let vals = src.values().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let out = Tensor::new(src.dims(), vals)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Relu(x), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims() != tb.dims() {
            return Err(GradError::shape("add", "lhs", ta.dims(), "rhs", tb.dims()));
        }
        let vals = ta.values().iter().zip(tb.values()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.dims(), vals)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Bilinear resize of the two trailing spatial axes (half-pixel centres,
    /// edge clamped).
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        self.check_live()?;
        let t = self.value(x);
        let (n, c, h, w) = dims4("resize_bilinear", "input", t.dims())?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(GradError::Validation {
                op: "resize_bilinear",
                msg: format!("empty extent {h}x{w} -> {out_h}x{out_w}"),
            });
        }
        let vals = kernels::bilinear_forward(t.values(), n * c, (h, w), (out_h, out_w));
        let out = Tensor::new(&[n, c, out_h, out_w], vals)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Resize(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_live()?;
        let s = self.value(x).values().iter().fold(T::zero(), |a, &v| a + v);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    /// `sum_i x_i * weights_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        self.check_live()?;
        let t = self.value(x);
        if t.dims() != weights.dims() {
            return Err(GradError::shape("weighted_sum", "input", t.dims(), "weights", weights.dims()));
        }
        let s = t
            .values()
            .iter()
            .zip(weights.values())
            .fold(T::zero(), |a, (&v, &r)| a + v * r);
        let rg = self.rg(&[x]);
        let op = Op::WeightedSum {
            input: x,
            weights: weights.values().to_vec(),
        };
        Ok(self.push(Tensor::scalar(s), op, rg))
    }

    /// Mean over all `N*H*W` pixels of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        self.check_live()?;
        let t = self.value(logits);
        let (n, k, h, w) = dims4("softmax_cross_entropy", "logits", t.dims())?;
        if targets.len() != n * h * w {
            return Err(GradError::shape(
                "softmax_cross_entropy",
                "logits",
                t.dims(),
                "targets",
                &[targets.len()],
            ));
        }
        if let Some((i, &c)) = targets.iter().enumerate().find(|(_, &c)| c >= k) {
            return Err(GradError::Validation {
                op: "softmax_cross_entropy",
                msg: format!("target class {c} at pixel {i} is outside [0, {k})"),
            });
        }
        let (loss, probs) = softmax_ce_forward(t.values(), (n, k, h * w), targets);
        let rg = self.rg(&[logits]);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Reverse sweep from a scalar `loss`. Releases the tape; a second call is
    /// a state error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.check_live()?;
        let lt = &self.node(loss).value;
        if lt.len() != 1 {
            return Err(GradError::Contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                lt.dims()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            for (v, delta) in self.local_backward(node, &g)? {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match grads[v.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a = *a + *d),
                    None => grads[v.0] = Some(delta),
                }
            }
        }

        let mut out = Gradients {
            leaves: HashMap::new(),
            params: BTreeMap::new(),
        };
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let g = grads[idx]
                .take()
                .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
            let t = Tensor::new(node.value.dims(), g)?;
            match &node.param {
                Some(name) => match out.params.get_mut(name) {
                    Some(acc) => {
                        acc.values_mut().iter_mut().zip(t.values()).for_each(|(a, d)| *a = *a + *d);
                    }
                    None => {
                        out.params.insert(name.clone(), t);
                    }
                },
                None => {
                    out.leaves.insert(Var(idx), t);
                }
            }
        }
        self.nodes.clear();
        self.consumed = true;
        Ok(out)
    }

    /// Vector-Jacobian products of one node w.r.t. each of its inputs.
    fn local_backward(&self, node: &Node<T>, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, win } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, c, h, wd) = dims4("conv2d", "input", x.dims())?;
                let (_, k, oh, ow) = dims4("conv2d", "output", node.value.dims())?;
                if rg(*input) {
                    let dx = kernels::scatter(g, (n, k, oh, ow), w.values(), c, None, *win, (h, wd));
                    out.push((*input, dx));
                }
                if rg(*weight) {
                    let dw = kernels::weight_grad(g, (n, k, oh, ow), x.values(), (c, h, wd), *win);
                    out.push((*weight, dw));
                }
                if rg(*bias) {
                    out.push((*bias, kernels::channel_sums(g, (n, k, oh, ow))));
                }
            }
            Op::ConvTranspose2d { input, weight, bias, win } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, c, h, wd) = dims4("conv2d_transpose", "input", x.dims())?;
                let (_, k, oh, ow) = dims4("conv2d_transpose", "output", node.value.dims())?;
                if rg(*input) {
                    let dx = kernels::gather(g, (n, k, oh, ow), w.values(), c, None, *win, (h, wd));
                    out.push((*input, dx));
                }
                if rg(*weight) {
                    let dw = kernels::weight_grad(x.values(), (n, c, h, wd), g, (k, oh, ow), *win);
                    out.push((*weight, dw));
                }
                if rg(*bias) {
                    out.push((*bias, kernels::channel_sums(g, (n, k, oh, ow))));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).values();
                let d = xv
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                out.push((*x, d));
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Resize(x) => {
                let (n, c, h, w) = dims4("resize_bilinear", "input", self.value(*x).dims())?;
                let (_, _, oh, ow) = dims4("resize_bilinear", "output", node.value.dims())?;
                out.push((*x, kernels::bilinear_backward(g, n * c, (h, w), (oh, ow))));
            }
            Op::Sum(x) => {
                out.push((*x, vec![g[0]; self.value(*x).len()]));
            }
            Op::WeightedSum { input, weights } => {
                out.push((*input, weights.iter().map(|&r| r * g[0]).collect()));
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let (n, k, h, w) = dims4("softmax_cross_entropy", "logits", self.value(*logits).dims())?;
                let hw = h * w;
                let scale = g[0] / T::lit((n * hw) as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for ni in 0..n {
                    for px in 0..hw {
                        let t = targets[ni * hw + px];
                        let i = (ni * k + t) * hw + px;
                        d[i] = d[i] - scale;
                    }
                }
                out.push((*logits, d));
            }
        }
        Ok(out)
    }
}

/// Returns the mean loss and the per-pixel softmax probabilities.
fn softmax_ce_forward<T: Element>(z: &[T], (n, k, hw): (usize, usize, usize), targets: &[usize]) -> (T, Vec<T>) {
    let mut probs = vec![T::zero(); z.len()];
    // A mean over many pixels loses most of a float-32 loss's precision if
    // summed in T.
    let mut total = 0.0f64;
    for ni in 0..n {
        for px in 0..hw {
            let at = |c: usize| (ni * k + c) * hw + px;
            let m = (0..k).map(|c| z[at(c)]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for c in 0..k {
                let e = (z[at(c)] - m).exp();
                probs[at(c)] = e;
                s = s + e;
            }
            for c in 0..k {
                probs[at(c)] = probs[at(c)] / s;
            }
            let t = targets[ni * hw + px];
            total += (s.ln() + m - z[at(t)]).as_f64();
        }
    }
    (T::lit(total / (n * hw) as f64), probs)
}

fn check_bias<'a, T: Element>(op: &'static str, bias: Option<&'a Tensor<T>>, k: usize) -> Result<Option<&'a [T]>> {
    match bias {
        None => Ok(None),
        Some(b) if b.dims() == [k] => Ok(Some(b.values())),
        Some(b) => Err(GradError::shape(op, "bias", b.dims(), "output channels", &[k])),
    }
}

/// Zero-padded strided correlation `[N,C,H,W] * [K,C,kh,kw] -> [N,K,H',W']`.
pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, wd) = dims4("conv2d", "input", x.dims())?;
    let (k, wc, kh, kw) = dims4("conv2d", "weights", w.dims())?;
    if wc != c {
        return Err(GradError::shape("conv2d", "input", x.dims(), "weights", w.dims()));
    }
    if stride == 0 {
        return Err(GradError::Validation { op: "conv2d", msg: "stride must be positive".into() });
    }
    if kh == 0 || kw == 0 || kh > h + 2 * pad || kw > wd + 2 * pad {
        return Err(GradError::shape("conv2d", "padded input", &[h + 2 * pad, wd + 2 * pad], "kernel", &[kh, kw]));
    }
    let b = check_bias("conv2d", bias, k)?;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let win = Window { kh, kw, stride, pad };
    let vals = kernels::gather(x.values(), (n, c, h, wd), w.values(), k, b, win, (oh, ow));
    Tensor::new(&[n, k, oh, ow], vals)
}

/// Adjoint of [`conv2d_forward`]: `[N,C,H,W] * [C,K,kh,kw] -> [N,K,H'',W'']`
/// with `H'' = (H-1)*stride - 2*pad + kh`.
pub fn conv2d_transpose_forward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, wd) = dims4("conv2d_transpose", "input", x.dims())?;
    let (wc, k, kh, kw) = dims4("conv2d_transpose", "weights", w.dims())?;
    if wc != c {
        return Err(GradError::shape("conv2d_transpose", "input", x.dims(), "weights", w.dims()));
    }
    if stride == 0 {
        return Err(GradError::Validation { op: "conv2d_transpose", msg: "stride must be positive".into() });
    }
    let full_h = (h.max(1) - 1) * stride + kh;
    let full_w = (wd.max(1) - 1) * stride + kw;
    if h == 0 || wd == 0 || full_h <= 2 * pad || full_w <= 2 * pad {
        return Err(GradError::shape(
            "conv2d_transpose",
            "input",
            x.dims(),
            "weights",
            w.dims(),
        ));
    }
    let b = check_bias("conv2d_transpose", bias, k)?;
    let (oh, ow) = (full_h - 2 * pad, full_w - 2 * pad);
    let win = Window { kh, kw, stride, pad };
    let vals = kernels::scatter(x.values(), (n, c, h, wd), w.values(), k, b, win, (oh, ow));
    Tensor::new(&[n, k, oh, ow], vals)
}
