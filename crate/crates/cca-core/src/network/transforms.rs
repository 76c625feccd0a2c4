//! The four transforms: analysis g_a, synthesis g_s, hyper analysis h_a
//! and hyper synthesis h_s, assembled from 5x5 stride-2 convolutions and
//! residual / gated block stacks.

use crate::error::{CoreError, CoreResult};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::blocks::{Builder, Conv2dL, ConvT2dL, NafBlock, ResidualBlock};
use super::{Binding, ModelConfig};

#[derive(Clone)]
pub(crate) enum Layer {
    Conv(Conv2dL),
    ConvT(ConvT2dL),
    Res(ResidualBlock),
    Naf(NafBlock),
    Gelu,
}

#[derive(Clone)]
pub(crate) struct Stack {
    layers: Vec<Layer>,
}

impl Stack {
    pub fn forward<S: Scalar>(&self, bind: &Binding<S>, x: &Tensor<S>) -> CoreResult<Tensor<S>> {
        let mut t = x.clone();
        for layer in &self.layers {
            t = match layer {
                Layer::Conv(l) => l.forward(bind, &t)?,
                Layer::ConvT(l) => l.forward(bind, &t)?,
                Layer::Res(l) => l.forward(bind, &t)?,
                Layer::Naf(l) => l.forward(bind, &t)?,
                Layer::Gelu => t.gelu()?,
            };
        }
        Ok(t)
    }
}

fn block_group<S: Scalar>(
    bld: &mut Builder<S>,
    layers: &mut Vec<Layer>,
    name: &str,
    c: usize,
    res: usize,
    gated: usize,
    res_first: bool,
) {
    let push_res = |layers: &mut Vec<Layer>, bld: &mut Builder<S>| {
        for i in 0..res {
            layers.push(Layer::Res(ResidualBlock::new(
                bld,
                &format!("{name}.res{i}"),
                c,
            )));
        }
    };
    let push_naf = |layers: &mut Vec<Layer>, bld: &mut Builder<S>| {
        for i in 0..gated {
            layers.push(Layer::Naf(NafBlock::new(bld, &format!("{name}.naf{i}"), c)));
        }
    };
    if res_first {
        push_res(layers, bld);
        push_naf(layers, bld);
    } else {
        push_naf(layers, bld);
        push_res(layers, bld);
    }
}

/// g_a: conv s2 to dim0 / blocks / conv s2 to dim1 / blocks / conv s2 to
/// dim2 / blocks / conv s2 to M. Spatial factor 16.
pub(crate) fn build_analysis<S: Scalar>(bld: &mut Builder<S>, cfg: &ModelConfig) -> Stack {
    let [d0, d1, d2] = cfg.dims;
    let mut layers = Vec::new();
    layers.push(Layer::Conv(Conv2dL::new(
        bld,
        "ga.down0",
        cfg.image_channels,
        d0,
        5,
        2,
        false,
    )));
    block_group(bld, &mut layers, "ga.l0", d0, cfg.res_blocks, cfg.gated_blocks, true);
    layers.push(Layer::Conv(Conv2dL::new(bld, "ga.down1", d0, d1, 5, 2, false)));
    block_group(bld, &mut layers, "ga.l1", d1, cfg.res_blocks, cfg.gated_blocks, true);
    layers.push(Layer::Conv(Conv2dL::new(bld, "ga.down2", d1, d2, 5, 2, false)));
    block_group(bld, &mut layers, "ga.l2", d2, cfg.res_blocks, cfg.gated_blocks, true);
    layers.push(Layer::Conv(Conv2dL::new(
        bld,
        "ga.down3",
        d2,
        cfg.latent_channels,
        5,
        2,
        false,
    )));
    Stack { layers }
}

/// g_s mirrors g_a with transposed convolutions; block order flips to
/// gated-then-residual.
pub(crate) fn build_synthesis<S: Scalar>(bld: &mut Builder<S>, cfg: &ModelConfig) -> Stack {
    let [d0, d1, d2] = cfg.dims;
    let mut layers = Vec::new();
    layers.push(Layer::ConvT(ConvT2dL::new(
        bld,
        "gs.up0",
        cfg.latent_channels,
        d2,
        5,
        2,
    )));
    block_group(bld, &mut layers, "gs.l0", d2, cfg.res_blocks, cfg.gated_blocks, false);
    layers.push(Layer::ConvT(ConvT2dL::new(bld, "gs.up1", d2, d1, 5, 2)));
    block_group(bld, &mut layers, "gs.l1", d1, cfg.res_blocks, cfg.gated_blocks, false);
    layers.push(Layer::ConvT(ConvT2dL::new(bld, "gs.up2", d1, d0, 5, 2)));
    block_group(bld, &mut layers, "gs.l2", d0, cfg.res_blocks, cfg.gated_blocks, false);
    layers.push(Layer::ConvT(ConvT2dL::new(
        bld,
        "gs.up3",
        d0,
        cfg.image_channels,
        5,
        2,
    )));
    Stack { layers }
}

/// h_a: two 5x5 stride-2 convolutions with a GELU between them.
pub(crate) fn build_hyper_analysis<S: Scalar>(bld: &mut Builder<S>, cfg: &ModelConfig) -> Stack {
    let d2 = cfg.dims[2];
    Stack {
        layers: vec![
            Layer::Conv(Conv2dL::new(
                bld,
                "ha.down0",
                cfg.latent_channels,
                d2,
                5,
                2,
                false,
            )),
            Layer::Gelu,
            Layer::Conv(Conv2dL::new(bld, "ha.down1", d2, cfg.hyper_channels, 5, 2, false)),
        ],
    }
}

/// h_s: two 5x5 stride-2 transposed convolutions producing 2M feature
/// channels for the entropy networks.
pub(crate) fn build_hyper_synthesis<S: Scalar>(bld: &mut Builder<S>, cfg: &ModelConfig) -> Stack {
    let d2 = cfg.dims[2];
    Stack {
        layers: vec![
            Layer::ConvT(ConvT2dL::new(bld, "hs.up0", cfg.hyper_channels, d2, 5, 2)),
            Layer::Gelu,
            Layer::ConvT(ConvT2dL::new(
                bld,
                "hs.up1",
                d2,
                2 * cfg.latent_channels,
                5,
                2,
            )),
        ],
    }
}

pub(crate) fn expect_image<S: Scalar>(x: &Tensor<S>, channels: usize) -> CoreResult<(usize, usize)> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1] != channels {
        return Err(CoreError::InvalidShape {
            op: "analysis",
            shape,
            reason: format!("expected [n,{channels},H,W]"),
        });
    }
    if !shape[2].is_multiple_of(16) || !shape[3].is_multiple_of(16) {
        return Err(CoreError::InvalidShape {
            op: "analysis",
            shape,
            reason: "spatial dims must be multiples of 16".into(),
        });
    }
    Ok((shape[2], shape[3]))
}
