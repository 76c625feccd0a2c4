//! Forward constructors and backward rules for the core op set.

use std::sync::Arc;

use super::{conv, CustomOp, Node, Op, Tape, Tensor};
use crate::detmath;
use crate::error::{CoreError, CoreResult};
use crate::rng;
use crate::scalar::Scalar;

const LAYER_NORM_EPS: f64 = 1e-6;

fn expect_dims4(op: &'static str, shape: &[usize]) -> CoreResult<(usize, usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(CoreError::InvalidShape {
            op,
            shape: shape.to_vec(),
            reason: "expected rank-4 [n,c,h,w]".into(),
        });
    }
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

impl<S: Scalar> Tensor<S> {
    fn binary_elementwise(
        &self,
        other: &Tensor<S>,
        name: &'static str,
        f: impl Fn(S, S) -> S,
        op: impl Fn(usize, usize) -> Op<S>,
    ) -> CoreResult<Tensor<S>> {
        self.same_tape(other)?;
        let (shape, a, b, rg) = {
            let inner = self.tape.inner.borrow();
            let na = &inner.nodes[self.id];
            let nb = &inner.nodes[other.id];
            if na.shape != nb.shape {
                return Err(CoreError::ShapeMismatch {
                    op: name,
                    lhs: na.shape.clone(),
                    rhs: nb.shape.clone(),
                });
            }
            (
                na.shape.clone(),
                Arc::clone(&na.values),
                Arc::clone(&nb.values),
                na.requires_grad || nb.requires_grad,
            )
        };
        let values: Vec<S> = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
        self.tape
            .push_op(name, shape, values, rg, op(self.id, other.id))
    }

    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(S) -> S,
        op: impl Fn(usize) -> Op<S>,
    ) -> CoreResult<Tensor<S>> {
        let (shape, a, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (n.shape.clone(), Arc::clone(&n.values), n.requires_grad)
        };
        let values: Vec<S> = a.iter().map(|&x| f(x)).collect();
        self.tape.push_op(name, shape, values, rg, op(self.id))
    }

    pub fn add(&self, other: &Tensor<S>) -> CoreResult<Tensor<S>> {
        self.binary_elementwise(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, other: &Tensor<S>) -> CoreResult<Tensor<S>> {
        self.binary_elementwise(other, "subtract", |a, b| a - b, Op::Sub)
    }

    pub fn mul(&self, other: &Tensor<S>) -> CoreResult<Tensor<S>> {
        self.binary_elementwise(other, "multiply", |a, b| a * b, Op::Mul)
    }

    pub fn div(&self, other: &Tensor<S>) -> CoreResult<Tensor<S>> {
        self.binary_elementwise(other, "divide", |a, b| a / b, Op::Div)
    }

    pub fn scale(&self, c: S) -> CoreResult<Tensor<S>> {
        self.unary("scale", |x| x * c, |id| Op::Scale(id, c))
    }

    pub fn add_scalar(&self, c: S) -> CoreResult<Tensor<S>> {
        self.unary("add_scalar", |x| x + c, Op::AddScalar)
    }

    pub fn square(&self) -> CoreResult<Tensor<S>> {
        self.unary("square", |x| x * x, Op::Square)
    }

    pub fn exp(&self) -> CoreResult<Tensor<S>> {
        self.unary("exp", |x| S::from_real(detmath::exp(x.to_real())), Op::Exp)
    }

    pub fn ln(&self) -> CoreResult<Tensor<S>> {
        self.unary("log", |x| S::from_real(detmath::ln(x.to_real())), Op::Ln)
    }

    pub fn tanh(&self) -> CoreResult<Tensor<S>> {
        self.unary("tanh", |x| S::from_real(detmath::tanh(x.to_real())), Op::Tanh)
    }

    pub fn sigmoid(&self) -> CoreResult<Tensor<S>> {
        self.unary(
            "sigmoid",
            |x| S::from_real(detmath::sigmoid(x.to_real())),
            Op::Sigmoid,
        )
    }

    pub fn softplus(&self) -> CoreResult<Tensor<S>> {
        self.unary(
            "softplus",
            |x| S::from_real(detmath::softplus(x.to_real())),
            Op::Softplus,
        )
    }

    pub fn gelu(&self) -> CoreResult<Tensor<S>> {
        self.unary("gelu", |x| S::from_real(detmath::gelu(x.to_real())), Op::Gelu)
    }

    /// Standard normal CDF, elementwise.
    pub fn normal_cdf(&self) -> CoreResult<Tensor<S>> {
        self.unary(
            "normal_cdf",
            |x| S::from_real(detmath::normal_cdf(x.to_real())),
            Op::NormalCdf,
        )
    }

    /// max(x, c); gradient passes where x >= c.
    pub fn clamp_min(&self, c: S) -> CoreResult<Tensor<S>> {
        self.unary(
            "clamp_min",
            |x| if x < c { c } else { x },
            |id| Op::ClampMin(id, c),
        )
    }

    /// Round to nearest (ties to even) with identity gradient.
    pub fn round_ste(&self) -> CoreResult<Tensor<S>> {
        self.unary(
            "round_ste",
            |x| S::from_real(x.to_real().round_ties_even()),
            Op::RoundSte,
        )
    }

    /// Add i.i.d. uniform noise in (-1/2, 1/2), deterministic under `key`.
    /// The noise is a constant in the backward pass.
    pub fn add_uniform_noise(&self, key: u64) -> CoreResult<Tensor<S>> {
        let (shape, a, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (n.shape.clone(), Arc::clone(&n.values), n.requires_grad)
        };
        let values: Vec<S> = a
            .iter()
            .enumerate()
            .map(|(i, &x)| x + S::from_real(rng::uniform_pm_half(key, i as u64)))
            .collect();
        self.tape
            .push_op("add_uniform_noise", shape, values, rg, Op::AddNoise(self.id))
    }

    pub fn sum_all(&self) -> CoreResult<Tensor<S>> {
        let (a, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (Arc::clone(&n.values), n.requires_grad)
        };
        let mut acc = S::zero();
        for &v in a.iter() {
            acc += v;
        }
        self.tape
            .push_op("sum_reduce", vec![1], vec![acc], rg, Op::SumAll(self.id))
    }

    pub fn mean_all(&self) -> CoreResult<Tensor<S>> {
        let (a, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (Arc::clone(&n.values), n.requires_grad)
        };
        let mut acc = S::zero();
        for &v in a.iter() {
            acc += v;
        }
        let m = acc / S::from_real(a.len() as f64);
        self.tape
            .push_op("mean_reduce", vec![1], vec![m], rg, Op::MeanAll(self.id))
    }

    /// [m,k] x [k,n] -> [m,n]
    pub fn matmul(&self, other: &Tensor<S>) -> CoreResult<Tensor<S>> {
        self.same_tape(other)?;
        let (sa, a, sb, b, rg) = {
            let inner = self.tape.inner.borrow();
            let na = &inner.nodes[self.id];
            let nb = &inner.nodes[other.id];
            (
                na.shape.clone(),
                Arc::clone(&na.values),
                nb.shape.clone(),
                Arc::clone(&nb.values),
                na.requires_grad || nb.requires_grad,
            )
        };
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut values = vec![S::zero(); m * n];
        super::gemm::gemm_acc(&mut values, &a, &b, m, k, n);
        self.tape.push_op(
            "matmul",
            vec![m, n],
            values,
            rg,
            Op::Matmul {
                a: self.id,
                b: other.id,
                m,
                k,
                n,
            },
        )
    }

    /// [n,c,h,w] -> [n,c,1,1], mean over spatial positions.
    pub fn global_avg_pool(&self) -> CoreResult<Tensor<S>> {
        let (shape, a, rg) = {
            let inner = self.tape.inner.borrow();
            let nd = &inner.nodes[self.id];
            (nd.shape.clone(), Arc::clone(&nd.values), nd.requires_grad)
        };
        let (n, c, h, w) = expect_dims4("global_average_pool", &shape)?;
        let hw = h * w;
        let inv = S::from_real(1.0 / hw as f64);
        let mut values = vec![S::zero(); n * c];
        for i in 0..n * c {
            let mut acc = S::zero();
            for &v in &a[i * hw..(i + 1) * hw] {
                acc += v;
            }
            values[i] = acc * inv;
        }
        self.tape.push_op(
            "global_average_pool",
            vec![n, c, 1, 1],
            values,
            rg,
            Op::GlobalAvgPool(self.id),
        )
    }

    /// x [n,c,h,w] * s [n,c,1,1], broadcast over spatial positions.
    pub fn channel_mul(&self, scale: &Tensor<S>) -> CoreResult<Tensor<S>> {
        self.same_tape(scale)?;
        let (shape, sshape, a, b, rg) = {
            let inner = self.tape.inner.borrow();
            let nx = &inner.nodes[self.id];
            let ns = &inner.nodes[scale.id];
            (
                nx.shape.clone(),
                ns.shape.clone(),
                Arc::clone(&nx.values),
                Arc::clone(&ns.values),
                nx.requires_grad || ns.requires_grad,
            )
        };
        let (n, c, h, w) = expect_dims4("channel_mul", &shape)?;
        if sshape != vec![n, c, 1, 1] {
            return Err(CoreError::ShapeMismatch {
                op: "channel_mul",
                lhs: shape,
                rhs: sshape,
            });
        }
        let hw = h * w;
        let mut values = vec![S::zero(); a.len()];
        for i in 0..n * c {
            let sv = b[i];
            for (o, &x) in values[i * hw..(i + 1) * hw].iter_mut().zip(&a[i * hw..(i + 1) * hw]) {
                *o = x * sv;
            }
        }
        self.tape.push_op(
            "channel_mul",
            shape,
            values,
            rg,
            Op::ChannelMul {
                x: self.id,
                s: scale.id,
            },
        )
    }

    /// Layer normalization across the channel dimension at each spatial
    /// position, with per-channel affine parameters.
    pub fn layer_norm_ch(&self, gamma: &Tensor<S>, beta: &Tensor<S>) -> CoreResult<Tensor<S>> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let (shape, gshape, bshape, x, g, b, rg) = {
            let inner = self.tape.inner.borrow();
            let nx = &inner.nodes[self.id];
            let ng = &inner.nodes[gamma.id];
            let nb = &inner.nodes[beta.id];
            (
                nx.shape.clone(),
                ng.shape.clone(),
                nb.shape.clone(),
                Arc::clone(&nx.values),
                Arc::clone(&ng.values),
                Arc::clone(&nb.values),
                nx.requires_grad || ng.requires_grad || nb.requires_grad,
            )
        };
        let (n, c, h, w) = expect_dims4("layer_norm_ch", &shape)?;
        if gshape != vec![c] || bshape != vec![c] {
            return Err(CoreError::ShapeMismatch {
                op: "layer_norm_ch",
                lhs: gshape,
                rhs: bshape,
            });
        }
        let hw = h * w;
        let invc = 1.0 / c as f64;
        let mut values = vec![S::zero(); x.len()];
        let mut means = vec![S::zero(); n * hw];
        let mut rstds = vec![S::zero(); n * hw];
        for ni in 0..n {
            let base = ni * c * hw;
            for p in 0..hw {
                let mut mean = 0.0f64;
                for ch in 0..c {
                    mean += x[base + ch * hw + p].to_real();
                }
                mean *= invc;
                let mut var = 0.0f64;
                for ch in 0..c {
                    let d = x[base + ch * hw + p].to_real() - mean;
                    var += d * d;
                }
                var *= invc;
                let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                means[ni * hw + p] = S::from_real(mean);
                rstds[ni * hw + p] = S::from_real(rstd);
                for ch in 0..c {
                    let xh = (x[base + ch * hw + p].to_real() - mean) * rstd;
                    values[base + ch * hw + p] =
                        S::from_real(xh * g[ch].to_real() + b[ch].to_real());
                }
            }
        }
        self.tape.push_op(
            "layer_norm_ch",
            shape,
            values,
            rg,
            Op::LayerNormCh {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                mean: means,
                rstd: rstds,
            },
        )
    }

    /// Channels [start, start+len) of a rank-4 tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> CoreResult<Tensor<S>> {
        let (shape, a, rg) = {
            let inner = self.tape.inner.borrow();
            let nd = &inner.nodes[self.id];
            (nd.shape.clone(), Arc::clone(&nd.values), nd.requires_grad)
        };
        let (n, c, h, w) = expect_dims4("channel_split", &shape)?;
        if start + len > c || len == 0 {
            return Err(CoreError::InvalidShape {
                op: "channel_split",
                shape,
                reason: format!("slice [{start}, {}) exceeds {c} channels", start + len),
            });
        }
        let hw = h * w;
        let mut values = vec![S::zero(); n * len * hw];
        for ni in 0..n {
            let src = ni * c * hw + start * hw;
            let dst = ni * len * hw;
            values[dst..dst + len * hw].copy_from_slice(&a[src..src + len * hw]);
        }
        self.tape.push_op(
            "channel_split",
            vec![n, len, h, w],
            values,
            rg,
            Op::SliceC {
                x: self.id,
                start_ch: start,
            },
        )
    }

    /// Spatial window [y0, y0+h) x [x0, x0+w) of a rank-4 tensor.
    pub fn crop_spatial(&self, y0: usize, x0: usize, h: usize, w: usize) -> CoreResult<Tensor<S>> {
        let (shape, a, rg) = {
            let inner = self.tape.inner.borrow();
            let nd = &inner.nodes[self.id];
            (nd.shape.clone(), Arc::clone(&nd.values), nd.requires_grad)
        };
        let (n, c, ih, iw) = expect_dims4("crop_spatial", &shape)?;
        if y0 + h > ih || x0 + w > iw || h == 0 || w == 0 {
            return Err(CoreError::InvalidShape {
                op: "crop_spatial",
                shape,
                reason: format!("window {h}x{w} at ({y0},{x0}) exceeds {ih}x{iw}"),
            });
        }
        let mut values = vec![S::zero(); n * c * h * w];
        for nc in 0..n * c {
            for y in 0..h {
                let src = nc * ih * iw + (y0 + y) * iw + x0;
                let dst = nc * h * w + y * w;
                values[dst..dst + w].copy_from_slice(&a[src..src + w]);
            }
        }
        self.tape.push_op(
            "crop_spatial",
            vec![n, c, h, w],
            values,
            rg,
            Op::CropSpatial {
                x: self.id,
                y0,
                x0,
            },
        )
    }

    /// Split into consecutive channel groups of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> CoreResult<Vec<Tensor<S>>> {
        let shape = self.shape();
        let (_, c, _, _) = expect_dims4("channel_split", &shape)?;
        if sizes.iter().sum::<usize>() != c {
            return Err(CoreError::InvalidShape {
                op: "channel_split",
                shape,
                reason: format!("split sizes {sizes:?} do not sum to {c}"),
            });
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &len in sizes {
            out.push(self.slice_channels(start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// Custom op with a caller-provided backward rule.
    pub fn push_custom(
        tape: &Tape<S>,
        inputs: &[&Tensor<S>],
        shape: Vec<usize>,
        values: Vec<S>,
        rule: Box<dyn CustomOp<S>>,
    ) -> CoreResult<Tensor<S>> {
        let mut ids = Vec::with_capacity(inputs.len());
        let mut rg = false;
        for t in inputs {
            if !std::rc::Rc::ptr_eq(&tape.inner, &t.tape.inner) {
                return Err(CoreError::TapeMismatch);
            }
            ids.push(t.id);
            rg |= t.requires_grad();
        }
        let name = rule.name();
        tape.push_op(name, shape, values, rg, Op::Custom { inputs: ids, rule })
    }
}

/// Concatenate along the channel dimension.
pub fn concat_channels<S: Scalar>(tape: &Tape<S>, parts: &[&Tensor<S>]) -> CoreResult<Tensor<S>> {
    if parts.is_empty() {
        return Err(CoreError::Invalid("channel_concat of zero tensors".into()));
    }
    let mut ids = Vec::with_capacity(parts.len());
    let mut rg = false;
    let mut shapes = Vec::with_capacity(parts.len());
    {
        let inner = tape.inner.borrow();
        for t in parts {
            if !std::rc::Rc::ptr_eq(&tape.inner, &t.tape.inner) {
                return Err(CoreError::TapeMismatch);
            }
            let nd = &inner.nodes[t.id];
            shapes.push(nd.shape.clone());
            ids.push(t.id);
            rg |= nd.requires_grad;
        }
    }
    let (n, _, h, w) = expect_dims4("channel_concat", &shapes[0])?;
    let mut ctotal = 0;
    for s in &shapes {
        let (n2, c2, h2, w2) = expect_dims4("channel_concat", s)?;
        if n2 != n || h2 != h || w2 != w {
            return Err(CoreError::ShapeMismatch {
                op: "channel_concat",
                lhs: shapes[0].clone(),
                rhs: s.clone(),
            });
        }
        ctotal += c2;
    }
    let hw = h * w;
    let mut values = vec![S::zero(); n * ctotal * hw];
    {
        let inner = tape.inner.borrow();
        for ni in 0..n {
            let mut coff = 0;
            for (t, s) in ids.iter().zip(&shapes) {
                let ci = s[1];
                let src = &inner.nodes[*t].values[ni * ci * hw..(ni + 1) * ci * hw];
                let dst = ni * ctotal * hw + coff * hw;
                values[dst..dst + ci * hw].copy_from_slice(src);
                coff += ci;
            }
        }
    }
    tape.push_op(
        "channel_concat",
        vec![n, ctotal, h, w],
        values,
        rg,
        Op::ConcatC(ids),
    )
}

fn add_into<S: Scalar>(
    grads: &mut [Option<Vec<S>>],
    nodes: &[Node<S>],
    id: usize,
    contrib: impl FnOnce(&mut [S]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let len = nodes[id].values.len();
    let buf = grads[id].get_or_insert_with(|| vec![S::zero(); len]);
    contrib(buf);
}

pub(crate) fn backward_op<S: Scalar>(
    nodes: &[Node<S>],
    id: usize,
    gout: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_into(grads, nodes, *a, |g| {
                for (gv, &go) in g.iter_mut().zip(gout) {
                    *gv += go;
                }
            });
            add_into(grads, nodes, *b, |g| {
                for (gv, &go) in g.iter_mut().zip(gout) {
                    *gv += go;
                }
            });
        }
        Op::Sub(a, b) => {
            add_into(grads, nodes, *a, |g| {
                for (gv, &go) in g.iter_mut().zip(gout) {
                    *gv += go;
                }
            });
            add_into(grads, nodes, *b, |g| {
                for (gv, &go) in g.iter_mut().zip(gout) {
                    *gv -= go;
                }
            });
        }
        Op::Mul(a, b) => {
            let av = Arc::clone(&nodes[*a].values);
            let bv = Arc::clone(&nodes[*b].values);
            add_into(grads, nodes, *a, |g| {
                for ((gv, &go), &b_) in g.iter_mut().zip(gout).zip(bv.iter()) {
                    *gv += go * b_;
                }
            });
            add_into(grads, nodes, *b, |g| {
                for ((gv, &go), &a_) in g.iter_mut().zip(gout).zip(av.iter()) {
                    *gv += go * a_;
                }
            });
        }
        Op::Div(a, b) => {
            let av = Arc::clone(&nodes[*a].values);
            let bv = Arc::clone(&nodes[*b].values);
            add_into(grads, nodes, *a, |g| {
                for ((gv, &go), &b_) in g.iter_mut().zip(gout).zip(bv.iter()) {
                    *gv += go / b_;
                }
            });
            add_into(grads, nodes, *b, |g| {
                for (i, (gv, &go)) in g.iter_mut().zip(gout).enumerate() {
                    *gv -= go * av[i] / (bv[i] * bv[i]);
                }
            });
        }
        Op::Matmul { a, b, m, k, n } => {
            let av = Arc::clone(&nodes[*a].values);
            let bv = Arc::clone(&nodes[*b].values);
            let (m, k, n) = (*m, *k, *n);
            add_into(grads, nodes, *a, |g| {
                // gA += G * B^T
                super::gemm::gemm_acc_nt(g, gout, &bv, m, n, k);
            });
            add_into(grads, nodes, *b, |g| {
                // gB += A^T * G
                let at = super::gemm::transpose(&av, m, k);
                super::gemm::gemm_acc(g, &at, gout, k, m, n);
            });
        }
        Op::Scale(a, c) => {
            let c = *c;
            add_into(grads, nodes, *a, |g| {
                for (gv, &go) in g.iter_mut().zip(gout) {
                    *gv += go * c;
                }
            });
        }
        Op::AddScalar(a) | Op::RoundSte(a) | Op::AddNoise(a) => {
            add_into(grads, nodes, *a, |g| {
                for (gv, &go) in g.iter_mut().zip(gout) {
                    *gv += go;
                }
            });
        }
        Op::Square(a) => {
            let av = Arc::clone(&nodes[*a].values);
            add_into(grads, nodes, *a, |g| {
                let two = S::from_real(2.0);
                for ((gv, &go), &x) in g.iter_mut().zip(gout).zip(av.iter()) {
                    *gv += go * two * x;
                }
            });
        }
        Op::Exp(a) => {
            let yv = Arc::clone(&nodes[id].values);
            add_into(grads, nodes, *a, |g| {
                for ((gv, &go), &y) in g.iter_mut().zip(gout).zip(yv.iter()) {
                    *gv += go * y;
                }
            });
        }
        Op::Ln(a) => {
            let av = Arc::clone(&nodes[*a].values);
            add_into(grads, nodes, *a, |g| {
                for ((gv, &go), &x) in g.iter_mut().zip(gout).zip(av.iter()) {
                    *gv += go / x;
                }
            });
        }
        Op::Tanh(a) => {
            let yv = Arc::clone(&nodes[id].values);
            add_into(grads, nodes, *a, |g| {
                for ((gv, &go), &y) in g.iter_mut().zip(gout).zip(yv.iter()) {
                    *gv += go * (S::one() - y * y);
                }
            });
        }
        Op::Sigmoid(a) => {
            let yv = Arc::clone(&nodes[id].values);
            add_into(grads, nodes, *a, |g| {
                for ((gv, &go), &y) in g.iter_mut().zip(gout).zip(yv.iter()) {
                    *gv += go * y * (S::one() - y);
                }
            });
        }
        Op::Softplus(a) => {
            let av = Arc::clone(&nodes[*a].values);
            add_into(grads, nodes, *a, |g| {
                for ((gv, &go), &x) in g.iter_mut().zip(gout).zip(av.iter()) {
                    *gv += go * S::from_real(detmath::sigmoid(x.to_real()));
                }
            });
        }
        Op::Gelu(a) => {
            let av = Arc::clone(&nodes[*a].values);
            add_into(grads, nodes, *a, |g| {
                for ((gv, &go), &x) in g.iter_mut().zip(gout).zip(av.iter()) {
                    *gv += go * S::from_real(detmath::gelu_grad(x.to_real()));
                }
            });
        }
        Op::NormalCdf(a) => {
            let av = Arc::clone(&nodes[*a].values);
            add_into(grads, nodes, *a, |g| {
                for ((gv, &go), &x) in g.iter_mut().zip(gout).zip(av.iter()) {
                    *gv += go * S::from_real(detmath::normal_pdf(x.to_real()));
                }
            });
        }
        Op::ClampMin(a, c) => {
            let av = Arc::clone(&nodes[*a].values);
            let c = *c;
            add_into(grads, nodes, *a, |g| {
                for ((gv, &go), &x) in g.iter_mut().zip(gout).zip(av.iter()) {
                    if x >= c {
                        *gv += go;
                    }
                }
            });
        }
        Op::SumAll(a) => {
            let go = gout[0];
            add_into(grads, nodes, *a, |g| {
                for gv in g.iter_mut() {
                    *gv += go;
                }
            });
        }
        Op::MeanAll(a) => {
            let len = nodes[*a].values.len();
            let go = gout[0] / S::from_real(len as f64);
            add_into(grads, nodes, *a, |g| {
                for gv in g.iter_mut() {
                    *gv += go;
                }
            });
        }
        Op::ConcatC(ids) => {
            let out_shape = &nodes[id].shape;
            let (n, ctotal, h, w) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
            let hw = h * w;
            let mut coff = 0;
            for &inp in ids {
                let ci = nodes[inp].shape[1];
                add_into(grads, nodes, inp, |g| {
                    for ni in 0..n {
                        let src = ni * ctotal * hw + coff * hw;
                        let dst = ni * ci * hw;
                        for (gv, &go) in g[dst..dst + ci * hw]
                            .iter_mut()
                            .zip(&gout[src..src + ci * hw])
                        {
                            *gv += go;
                        }
                    }
                });
                coff += ci;
            }
        }
        Op::SliceC { x, start_ch } => {
            let out_shape = &nodes[id].shape;
            let (n, len_c, h, w) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
            let c = nodes[*x].shape[1];
            let hw = h * w;
            let start = *start_ch;
            add_into(grads, nodes, *x, |g| {
                for ni in 0..n {
                    let dst = ni * c * hw + start * hw;
                    let src = ni * len_c * hw;
                    for (gv, &go) in g[dst..dst + len_c * hw]
                        .iter_mut()
                        .zip(&gout[src..src + len_c * hw])
                    {
                        *gv += go;
                    }
                }
            });
        }
        Op::CropSpatial { x, y0, x0 } => {
            let out_shape = &nodes[id].shape;
            let (n, c, h, w) = (out_shape[0], out_shape[1], out_shape[2], out_shape[3]);
            let in_shape = &nodes[*x].shape;
            let (ih, iw) = (in_shape[2], in_shape[3]);
            let (y0, x0) = (*y0, *x0);
            add_into(grads, nodes, *x, |g| {
                for nc in 0..n * c {
                    for y in 0..h {
                        let dst = nc * ih * iw + (y0 + y) * iw + x0;
                        let src = nc * h * w + y * w;
                        for (gv, &go) in g[dst..dst + w].iter_mut().zip(&gout[src..src + w]) {
                            *gv += go;
                        }
                    }
                }
            });
        }
        Op::GlobalAvgPool(a) => {
            let shape = &nodes[*a].shape;
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let hw = h * w;
            let inv = S::from_real(1.0 / hw as f64);
            add_into(grads, nodes, *a, |g| {
                for i in 0..n * c {
                    let go = gout[i] * inv;
                    for gv in g[i * hw..(i + 1) * hw].iter_mut() {
                        *gv += go;
                    }
                }
            });
        }
        Op::ChannelMul { x, s } => {
            let xv = Arc::clone(&nodes[*x].values);
            let sv = Arc::clone(&nodes[*s].values);
            let shape = &nodes[*x].shape;
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let hw = h * w;
            add_into(grads, nodes, *x, |g| {
                for i in 0..n * c {
                    let scale = sv[i];
                    for (gv, &go) in g[i * hw..(i + 1) * hw].iter_mut().zip(&gout[i * hw..(i + 1) * hw])
                    {
                        *gv += go * scale;
                    }
                }
            });
            add_into(grads, nodes, *s, |g| {
                for i in 0..n * c {
                    let mut acc = S::zero();
                    for (&go, &x_) in gout[i * hw..(i + 1) * hw].iter().zip(&xv[i * hw..(i + 1) * hw]) {
                        acc += go * x_;
                    }
                    g[i] += acc;
                }
            });
        }
        Op::LayerNormCh {
            x,
            gamma,
            beta,
            mean,
            rstd,
        } => {
            let xv = Arc::clone(&nodes[*x].values);
            let gv_ = Arc::clone(&nodes[*gamma].values);
            let shape = &nodes[*x].shape;
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let hw = h * w;
            let invc = 1.0 / c as f64;
            add_into(grads, nodes, *beta, |g| {
                for ni in 0..n {
                    let base = ni * c * hw;
                    for ch in 0..c {
                        let mut acc = S::zero();
                        for &go in &gout[base + ch * hw..base + (ch + 1) * hw] {
                            acc += go;
                        }
                        g[ch] += acc;
                    }
                }
            });
            add_into(grads, nodes, *gamma, |g| {
                for ni in 0..n {
                    let base = ni * c * hw;
                    for ch in 0..c {
                        let mut acc = 0.0f64;
                        for p in 0..hw {
                            let m = mean[ni * hw + p].to_real();
                            let r = rstd[ni * hw + p].to_real();
                            let xh = (xv[base + ch * hw + p].to_real() - m) * r;
                            acc += gout[base + ch * hw + p].to_real() * xh;
                        }
                        g[ch] += S::from_real(acc);
                    }
                }
            });
            add_into(grads, nodes, *x, |g| {
                for ni in 0..n {
                    let base = ni * c * hw;
                    for p in 0..hw {
                        let m = mean[ni * hw + p].to_real();
                        let r = rstd[ni * hw + p].to_real();
                        let mut sum_gy = 0.0f64;
                        let mut sum_gy_xh = 0.0f64;
                        for ch in 0..c {
                            let gy = gout[base + ch * hw + p].to_real() * gv_[ch].to_real();
                            let xh = (xv[base + ch * hw + p].to_real() - m) * r;
                            sum_gy += gy;
                            sum_gy_xh += gy * xh;
                        }
                        sum_gy *= invc;
                        sum_gy_xh *= invc;
                        for ch in 0..c {
                            let gy = gout[base + ch * hw + p].to_real() * gv_[ch].to_real();
                            let xh = (xv[base + ch * hw + p].to_real() - m) * r;
                            g[base + ch * hw + p] +=
                                S::from_real(r * (gy - sum_gy - xh * sum_gy_xh));
                        }
                    }
                }
            });
        }
        Op::Conv2d(ctx) => conv::backward_conv2d(nodes, ctx, gout, grads),
        Op::ConvT2d(ctx) => conv::backward_convt2d(nodes, ctx, gout, grads),
        Op::DwConv2d(ctx) => conv::backward_dwconv2d(nodes, ctx, gout, grads),
        Op::Custom { inputs, rule } => {
            let views: Vec<(&[S], &[usize])> = inputs
                .iter()
                .map(|&i| (nodes[i].values.as_slice(), nodes[i].shape.as_slice()))
                .collect();
            // Collect accumulation buffers for tracked inputs.
            let mut bufs: Vec<Option<Vec<S>>> = inputs
                .iter()
                .map(|&i| {
                    if nodes[i].requires_grad {
                        Some(vec![S::zero(); nodes[i].values.len()])
                    } else {
                        None
                    }
                })
                .collect();
            {
                let mut refs: Vec<Option<&mut Vec<S>>> =
                    bufs.iter_mut().map(|b| b.as_mut()).collect();
                rule.backward(&views, nodes[id].values.as_slice(), gout, &mut refs);
            }
            for (&inp, buf) in inputs.iter().zip(bufs) {
                if let Some(contrib) = buf {
                    add_into(grads, nodes, inp, |g| {
                        for (gv, cv) in g.iter_mut().zip(contrib) {
                            *gv += cv;
                        }
                    });
                }
            }
        }
    }
}
