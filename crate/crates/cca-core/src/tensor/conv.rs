//! conv2d, transposed conv2d and depthwise conv2d with gradients.
//!
//! Dense convs go through im2col + the fixed-order GEMM; the depthwise
//! conv uses direct shifted-row accumulation. Gradients recompute the
//! patch matrix instead of caching it (cheap next to the GEMMs).

use std::sync::Arc;

use super::gemm::{gemm_acc, gemm_acc_nt, transpose};
use super::{Node, Op, Tensor};
use crate::error::{CoreError, CoreResult};
use crate::scalar::Scalar;

#[derive(Clone)]
pub(crate) struct ConvCtx {
    pub x: usize,
    pub w: usize,
    pub b: Option<usize>,
    pub stride: usize,
    pub pad: usize,
    pub n: usize,
    pub ci: usize,
    pub h: usize,
    pub wd: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
}

/// col[(c*kh+ky)*kw+kx][oy*wo+ox] = x[c][oy*s+ky-p][ox*s+kx-p], zero outside.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &[S],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
    col: &mut [S],
) {
    let mut row = 0usize;
    for c in 0..ci {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                row += 1;
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        for v in drow.iter_mut() {
                            *v = S::zero();
                        }
                        continue;
                    }
                    let xrow = &xc[(iy as usize) * w..(iy as usize + 1) * w];
                    // valid ox satisfy 0 <= ox*s + kx - p < w
                    let lo = if kx >= p {
                        0
                    } else {
                        (p - kx).div_ceil(s)
                    };
                    let hi_excl = if w + p > kx {
                        ((w + p - kx - 1) / s + 1).min(wo)
                    } else {
                        0
                    };
                    for v in drow[..lo.min(wo)].iter_mut() {
                        *v = S::zero();
                    }
                    for ox in lo..hi_excl {
                        drow[ox] = xrow[ox * s + kx - p];
                    }
                    for v in drow[hi_excl..].iter_mut() {
                        *v = S::zero();
                    }
                }
            }
        }
    }
}

/// Scatter-add transpose of `im2col`.
#[allow(clippy::too_many_arguments)]
fn col2im_add<S: Scalar>(
    col: &[S],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
    out: &mut [S],
) {
    let mut row = 0usize;
    for c in 0..ci {
        let xc = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                row += 1;
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &mut xc[(iy as usize) * w..(iy as usize + 1) * w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
                    let hi_excl = if w + p > kx {
                        ((w + p - kx - 1) / s + 1).min(wo)
                    } else {
                        0
                    };
                    for ox in lo..hi_excl {
                        xrow[ox * s + kx - p] += srow[ox];
                    }
                }
            }
        }
    }
}

fn conv_out_dim(h: usize, k: usize, s: usize, p: usize) -> CoreResult<usize> {
    if h + 2 * p < k {
        return Err(CoreError::Invalid(format!(
            "conv2d: input {h} with pad {p} smaller than kernel {k}"
        )));
    }
    Ok((h + 2 * p - k) / s + 1)
}

impl<S: Scalar> Tensor<S> {
    /// 2-D convolution. x [n,ci,h,w] * w [co,ci,kh,kw] (+ b [co]).
    pub fn conv2d(
        &self,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        stride: usize,
        pad: usize,
    ) -> CoreResult<Tensor<S>> {
        self.same_tape(weight)?;
        if let Some(b) = bias {
            self.same_tape(b)?;
        }
        let (xs, xv, ws, wv, rg0) = {
            let inner = self.tape.inner.borrow();
            let nx = &inner.nodes[self.id];
            let nw = &inner.nodes[weight.id];
            (
                nx.shape.clone(),
                Arc::clone(&nx.values),
                nw.shape.clone(),
                Arc::clone(&nw.values),
                nx.requires_grad || nw.requires_grad,
            )
        };
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(CoreError::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ws[0], ws[2], ws[3]);
        let ho = conv_out_dim(h, kh, stride, pad)?;
        let wo = conv_out_dim(w, kw, stride, pad)?;
        let (bv, rg) = match bias {
            Some(b) => {
                let inner = self.tape.inner.borrow();
                let nb = &inner.nodes[b.id];
                if nb.shape != vec![co] {
                    return Err(CoreError::ShapeMismatch {
                        op: "conv2d",
                        lhs: vec![co],
                        rhs: nb.shape.clone(),
                    });
                }
                (Some(Arc::clone(&nb.values)), rg0 || nb.requires_grad)
            }
            None => (None, rg0),
        };

        let cikk = ci * kh * kw;
        let howo = ho * wo;
        let mut col = vec![S::zero(); cikk * howo];
        let mut values = vec![S::zero(); n * co * howo];
        for ni in 0..n {
            im2col(
                &xv[ni * ci * h * w..(ni + 1) * ci * h * w],
                ci,
                h,
                w,
                kh,
                kw,
                stride,
                pad,
                ho,
                wo,
                &mut col,
            );
            let out = &mut values[ni * co * howo..(ni + 1) * co * howo];
            gemm_acc(out, &wv, &col, co, cikk, howo);
            if let Some(bv) = &bv {
                for c in 0..co {
                    let b = bv[c];
                    for v in out[c * howo..(c + 1) * howo].iter_mut() {
                        *v += b;
                    }
                }
            }
        }
        let ctx = ConvCtx {
            x: self.id,
            w: weight.id,
            b: bias.map(|b| b.id),
            stride,
            pad,
            n,
            ci,
            h,
            wd: w,
            co,
            kh,
            kw,
            ho,
            wo,
        };
        self.tape
            .push_op("conv2d", vec![n, co, ho, wo], values, rg, Op::Conv2d(ctx))
    }

    /// Transposed 2-D convolution. x [n,ci,h,w] * w [ci,co,kh,kw] (+ b [co]).
    /// Output spatial dim: (h-1)*stride - 2*pad + kh + out_pad.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> CoreResult<Tensor<S>> {
        self.same_tape(weight)?;
        if let Some(b) = bias {
            self.same_tape(b)?;
        }
        if out_pad >= stride {
            return Err(CoreError::Invalid(format!(
                "transposed-conv2d: out_pad {out_pad} must be < stride {stride}"
            )));
        }
        let (xs, xv, ws, wv, rg0) = {
            let inner = self.tape.inner.borrow();
            let nx = &inner.nodes[self.id];
            let nw = &inner.nodes[weight.id];
            (
                nx.shape.clone(),
                Arc::clone(&nx.values),
                nw.shape.clone(),
                Arc::clone(&nw.values),
                nx.requires_grad || nw.requires_grad,
            )
        };
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] {
            return Err(CoreError::ShapeMismatch {
                op: "transposed-conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (n, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ws[1], ws[2], ws[3]);
        let ho = (h - 1) * stride + kh + out_pad;
        let wo = (w - 1) * stride + kw + out_pad;
        if ho < 2 * pad || wo < 2 * pad {
            return Err(CoreError::Invalid(
                "transposed-conv2d: padding exceeds output".into(),
            ));
        }
        let ho = ho - 2 * pad;
        let wo = wo - 2 * pad;
        let (bv, rg) = match bias {
            Some(b) => {
                let inner = self.tape.inner.borrow();
                let nb = &inner.nodes[b.id];
                if nb.shape != vec![co] {
                    return Err(CoreError::ShapeMismatch {
                        op: "transposed-conv2d",
                        lhs: vec![co],
                        rhs: nb.shape.clone(),
                    });
                }
                (Some(Arc::clone(&nb.values)), rg0 || nb.requires_grad)
            }
            None => (None, rg0),
        };

        let cokk = co * kh * kw;
        let hw = h * w;
        // wt[(co,ky,kx)][ci] = w[ci][co][ky][kx]
        let wt = transpose(&wv, ci, cokk);
        let mut col = vec![S::zero(); cokk * hw];
        let mut values = vec![S::zero(); n * co * ho * wo];
        for ni in 0..n {
            for v in col.iter_mut() {
                *v = S::zero();
            }
            gemm_acc(
                &mut col,
                &wt,
                &xv[ni * ci * hw..(ni + 1) * ci * hw],
                cokk,
                ci,
                hw,
            );
            let out = &mut values[ni * co * ho * wo..(ni + 1) * co * ho * wo];
            // scatter: out[c][iy*s+ky-p][ix*s+kx-p] += col[(c,ky,kx)][iy*w+ix]
            col2im_add(&col, co, ho, wo, kh, kw, stride, pad, h, w, out);
            if let Some(bv) = &bv {
                for c in 0..co {
                    let b = bv[c];
                    for v in out[c * ho * wo..(c + 1) * ho * wo].iter_mut() {
                        *v += b;
                    }
                }
            }
        }
        let ctx = ConvCtx {
            x: self.id,
            w: weight.id,
            b: bias.map(|b| b.id),
            stride,
            pad,
            n,
            ci,
            h,
            wd: w,
            co,
            kh,
            kw,
            ho,
            wo,
        };
        self.tape.push_op(
            "transposed-conv2d",
            vec![n, co, ho, wo],
            values,
            rg,
            Op::ConvT2d(ctx),
        )
    }

    /// Depthwise 3x3-style convolution, stride 1. x [n,c,h,w] * w [c,1,kh,kw].
    pub fn dwconv2d(
        &self,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        pad: usize,
    ) -> CoreResult<Tensor<S>> {
        self.same_tape(weight)?;
        if let Some(b) = bias {
            self.same_tape(b)?;
        }
        let (xs, xv, ws, wv, rg0) = {
            let inner = self.tape.inner.borrow();
            let nx = &inner.nodes[self.id];
            let nw = &inner.nodes[weight.id];
            (
                nx.shape.clone(),
                Arc::clone(&nx.values),
                nw.shape.clone(),
                Arc::clone(&nw.values),
                nx.requires_grad || nw.requires_grad,
            )
        };
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[1] != 1 {
            return Err(CoreError::ShapeMismatch {
                op: "depthwise-conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw) = (ws[2], ws[3]);
        let ho = conv_out_dim(h, kh, 1, pad)?;
        let wo = conv_out_dim(w, kw, 1, pad)?;
        let (bv, rg) = match bias {
            Some(b) => {
                let inner = self.tape.inner.borrow();
                let nb = &inner.nodes[b.id];
                if nb.shape != vec![c] {
                    return Err(CoreError::ShapeMismatch {
                        op: "depthwise-conv2d",
                        lhs: vec![c],
                        rhs: nb.shape.clone(),
                    });
                }
                (Some(Arc::clone(&nb.values)), rg0 || nb.requires_grad)
            }
            None => (None, rg0),
        };
        let mut values = vec![S::zero(); n * c * ho * wo];
        for ni in 0..n {
            for ch in 0..c {
                let xc = &xv[(ni * c + ch) * h * w..(ni * c + ch + 1) * h * w];
                let out = &mut values[(ni * c + ch) * ho * wo..(ni * c + ch + 1) * ho * wo];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wk = wv[(ch * kh + ky) * kw + kx];
                        for oy in 0..ho {
                            let iy = (oy + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xc[(iy as usize) * w..(iy as usize + 1) * w];
                            let orow = &mut out[oy * wo..(oy + 1) * wo];
                            let lo = pad.saturating_sub(kx);
                            let hi_excl = (w + pad - kx).min(wo);
                            for ox in lo..hi_excl {
                                orow[ox] += wk * xrow[ox + kx - pad];
                            }
                        }
                    }
                }
                if let Some(bv) = &bv {
                    let b = bv[ch];
                    for v in out.iter_mut() {
                        *v += b;
                    }
                }
            }
        }
        let ctx = ConvCtx {
            x: self.id,
            w: weight.id,
            b: bias.map(|b| b.id),
            stride: 1,
            pad,
            n,
            ci: c,
            h,
            wd: w,
            co: c,
            kh,
            kw,
            ho,
            wo,
        };
        self.tape.push_op(
            "depthwise-conv2d",
            vec![n, c, ho, wo],
            values,
            rg,
            Op::DwConv2d(ctx),
        )
    }
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

pub(crate) fn backward_conv2d<S: Scalar>(
    nodes: &[Node<S>],
    ctx: &ConvCtx,
    gout: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let xv = Arc::clone(&nodes[ctx.x].values);
    let wv = Arc::clone(&nodes[ctx.w].values);
    let cikk = ctx.ci * ctx.kh * ctx.kw;
    let howo = ctx.ho * ctx.wo;
    let hw = ctx.h * ctx.wd;

    if let Some(b) = ctx.b {
        add_into(grads, nodes, b, |g| {
            for ni in 0..ctx.n {
                for c in 0..ctx.co {
                    let mut acc = S::zero();
                    for &go in &gout[(ni * ctx.co + c) * howo..(ni * ctx.co + c + 1) * howo] {
                        acc += go;
                    }
                    g[c] += acc;
                }
            }
        });
    }

    let need_w = nodes[ctx.w].requires_grad;
    let need_x = nodes[ctx.x].requires_grad;
    if !need_w && !need_x {
        return;
    }

    let mut col = vec![S::zero(); cikk * howo];
    let wt = if need_x {
        Some(transpose(&wv, ctx.co, cikk))
    } else {
        None
    };
    for ni in 0..ctx.n {
        let gout_n = &gout[ni * ctx.co * howo..(ni + 1) * ctx.co * howo];
        if need_w {
            im2col(
                &xv[ni * ctx.ci * hw..(ni + 1) * ctx.ci * hw],
                ctx.ci,
                ctx.h,
                ctx.wd,
                ctx.kh,
                ctx.kw,
                ctx.stride,
                ctx.pad,
                ctx.ho,
                ctx.wo,
                &mut col,
            );
            add_into(grads, nodes, ctx.w, |g| {
                gemm_acc_nt(g, gout_n, &col, ctx.co, howo, cikk);
            });
        }
        if let Some(wt) = &wt {
            for v in col.iter_mut() {
                *v = S::zero();
            }
            gemm_acc(&mut col, wt, gout_n, cikk, ctx.co, howo);
            add_into(grads, nodes, ctx.x, |g| {
                col2im_add(
                    &col,
                    ctx.ci,
                    ctx.h,
                    ctx.wd,
                    ctx.kh,
                    ctx.kw,
                    ctx.stride,
                    ctx.pad,
                    ctx.ho,
                    ctx.wo,
                    &mut g[ni * ctx.ci * hw..(ni + 1) * ctx.ci * hw],
                );
            });
        }
    }
}

pub(crate) fn backward_convt2d<S: Scalar>(
    nodes: &[Node<S>],
    ctx: &ConvCtx,
    gout: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let xv = Arc::clone(&nodes[ctx.x].values);
    let wv = Arc::clone(&nodes[ctx.w].values);
    let cokk = ctx.co * ctx.kh * ctx.kw;
    let hw = ctx.h * ctx.wd;
    let howo = ctx.ho * ctx.wo;

    if let Some(b) = ctx.b {
        add_into(grads, nodes, b, |g| {
            for ni in 0..ctx.n {
                for c in 0..ctx.co {
                    let mut acc = S::zero();
                    for &go in &gout[(ni * ctx.co + c) * howo..(ni * ctx.co + c + 1) * howo] {
                        acc += go;
                    }
                    g[c] += acc;
                }
            }
        });
    }

    let need_w = nodes[ctx.w].requires_grad;
    let need_x = nodes[ctx.x].requires_grad;
    if !need_w && !need_x {
        return;
    }

    // colg[(co,ky,kx)][iy*w+ix] = gout[co][iy*s+ky-p][ix*s+kx-p]
    let mut colg = vec![S::zero(); cokk * hw];
    for ni in 0..ctx.n {
        im2col(
            &gout[ni * ctx.co * howo..(ni + 1) * ctx.co * howo],
            ctx.co,
            ctx.ho,
            ctx.wo,
            ctx.kh,
            ctx.kw,
            ctx.stride,
            ctx.pad,
            ctx.h,
            ctx.wd,
            &mut colg,
        );
        if need_x {
            add_into(grads, nodes, ctx.x, |g| {
                gemm_acc(
                    &mut g[ni * ctx.ci * hw..(ni + 1) * ctx.ci * hw],
                    &wv,
                    &colg,
                    ctx.ci,
                    cokk,
                    hw,
                );
            });
        }
        if need_w {
            let xn = &xv[ni * ctx.ci * hw..(ni + 1) * ctx.ci * hw];
            add_into(grads, nodes, ctx.w, |g| {
                gemm_acc_nt(g, xn, &colg, ctx.ci, hw, cokk);
            });
        }
    }
}

pub(crate) fn backward_dwconv2d<S: Scalar>(
    nodes: &[Node<S>],
    ctx: &ConvCtx,
    gout: &[S],
    grads: &mut [Option<Vec<S>>],
) {
    let xv = Arc::clone(&nodes[ctx.x].values);
    let wv = Arc::clone(&nodes[ctx.w].values);
    let howo = ctx.ho * ctx.wo;
    let hw = ctx.h * ctx.wd;
    let c = ctx.ci;
    let (kh, kw, pad) = (ctx.kh, ctx.kw, ctx.pad);

    if let Some(b) = ctx.b {
        add_into(grads, nodes, b, |g| {
            for ni in 0..ctx.n {
                for ch in 0..c {
                    let mut acc = S::zero();
                    for &go in &gout[(ni * c + ch) * howo..(ni * c + ch + 1) * howo] {
                        acc += go;
                    }
                    g[ch] += acc;
                }
            }
        });
    }

    if nodes[ctx.w].requires_grad {
        add_into(grads, nodes, ctx.w, |g| {
            for ni in 0..ctx.n {
                for ch in 0..c {
                    let xc = &xv[(ni * c + ch) * hw..(ni * c + ch + 1) * hw];
                    let gc = &gout[(ni * c + ch) * howo..(ni * c + ch + 1) * howo];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let mut acc = S::zero();
                            for oy in 0..ctx.ho {
                                let iy = (oy + ky) as isize - pad as isize;
                                if iy < 0 || iy >= ctx.h as isize {
                                    continue;
                                }
                                let xrow = &xc[(iy as usize) * ctx.wd..(iy as usize + 1) * ctx.wd];
                                let grow = &gc[oy * ctx.wo..(oy + 1) * ctx.wo];
                                let lo = pad.saturating_sub(kx);
                                let hi_excl = (ctx.wd + pad - kx).min(ctx.wo);
                                for ox in lo..hi_excl {
                                    acc += grow[ox] * xrow[ox + kx - pad];
                                }
                            }
                            g[(ch * kh + ky) * kw + kx] += acc;
                        }
                    }
                }
            }
        });
    }

    if nodes[ctx.x].requires_grad {
        add_into(grads, nodes, ctx.x, |g| {
            for ni in 0..ctx.n {
                for ch in 0..c {
                    let gx = &mut g[(ni * c + ch) * hw..(ni * c + ch + 1) * hw];
                    let gc = &gout[(ni * c + ch) * howo..(ni * c + ch + 1) * howo];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wk = wv[(ch * kh + ky) * kw + kx];
                            for oy in 0..ctx.ho {
                                let iy = (oy + ky) as isize - pad as isize;
                                if iy < 0 || iy >= ctx.h as isize {
                                    continue;
                                }
                                let xrow =
                                    &mut gx[(iy as usize) * ctx.wd..(iy as usize + 1) * ctx.wd];
                                let grow = &gc[oy * ctx.wo..(oy + 1) * ctx.wo];
                                let lo = pad.saturating_sub(kx);
                                let hi_excl = (ctx.wd + pad - kx).min(ctx.wo);
                                for ox in lo..hi_excl {
                                    xrow[ox + kx - pad] += wk * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, TensorData};

    #[test]
    fn identity_1x1_kernel_preserves_input() {
        let tape: Tape<f64> = Tape::new();
        let x = tape
            .leaf(
                TensorData::new(vec![1, 1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap(),
                false,
            )
            .unwrap();
        let w = tape
            .leaf(TensorData::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(), false)
            .unwrap();
        let y = x.conv2d(&w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 3, 3]);
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn stride2_down_then_up_restores_spatial_dims() {
        // 5x5 kernels, stride 2, pad 2, output padding 1: H -> H/2 -> H.
        for hw in [16usize, 32, 24] {
            let tape: Tape<f64> = Tape::new();
            let x = tape
                .leaf(
                    TensorData::new(
                        vec![1, 2, hw, hw],
                        (0..2 * hw * hw).map(|v| (v % 13) as f64 * 0.1).collect(),
                    )
                    .unwrap(),
                    false,
                )
                .unwrap();
            let wd = tape
                .leaf(
                    TensorData::new(vec![3, 2, 5, 5], vec![0.01; 3 * 2 * 25]).unwrap(),
                    false,
                )
                .unwrap();
            let down = x.conv2d(&wd, None, 2, 2).unwrap();
            assert_eq!(down.shape(), vec![1, 3, hw / 2, hw / 2]);
            let wu = tape
                .leaf(
                    TensorData::new(vec![3, 2, 5, 5], vec![0.01; 3 * 2 * 25]).unwrap(),
                    false,
                )
                .unwrap();
            let up = down.conv_transpose2d(&wu, None, 2, 2, 1).unwrap();
            assert_eq!(up.shape(), vec![1, 2, hw, hw]);
        }
    }

    #[test]
    fn conv_shape_mismatch_is_error() {
        let tape: Tape<f64> = Tape::new();
        let x = tape
            .leaf(TensorData::zeros(vec![1, 3, 8, 8]), false)
            .unwrap();
        let w = tape
            .leaf(TensorData::zeros(vec![4, 2, 3, 3]), false)
            .unwrap();
        let err = x.conv2d(&w, None, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv2d"), "{msg}");
    }
}
