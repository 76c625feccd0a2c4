//! Per-stage entropy networks (major and auxiliary) and the latent
//! residual prediction heads.

use crate::error::{CoreError, CoreResult};
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, Tensor};

use super::blocks::{Builder, Conv2dL, NafBlock};
use super::Binding;

/// Gaussian-parameter head: 1x1 in-projection, gated blocks at the
/// entropy width, 1x1 head to (mu, raw sigma).
#[derive(Clone)]
pub(crate) struct EntropyNet {
    pub in_channels: usize,
    pub slice_channels: usize,
    inp: Conv2dL,
    blocks: Vec<NafBlock>,
    head: Conv2dL,
}

impl EntropyNet {
    pub fn new<S: Scalar>(
        bld: &mut Builder<S>,
        name: &str,
        in_channels: usize,
        width: usize,
        blocks: usize,
        slice_channels: usize,
    ) -> Self {
        let inp = Conv2dL::new(bld, &format!("{name}.in"), in_channels, width, 1, 1, false);
        let blocks = (0..blocks)
            .map(|i| NafBlock::new(bld, &format!("{name}.naf{i}"), width))
            .collect();
        let head = Conv2dL::new(
            bld,
            &format!("{name}.head"),
            width,
            2 * slice_channels,
            1,
            1,
            false,
        );
        EntropyNet {
            in_channels,
            slice_channels,
            inp,
            blocks,
            head,
        }
    }

    /// (mu, raw sigma) for the stage's slice from hyper features plus the
    /// causal context slices.
    pub fn forward<S: Scalar>(
        &self,
        bind: &Binding<S>,
        hyper: &Tensor<S>,
        context: &[&Tensor<S>],
    ) -> CoreResult<(Tensor<S>, Tensor<S>)> {
        let mut parts: Vec<&Tensor<S>> = Vec::with_capacity(1 + context.len());
        parts.push(hyper);
        parts.extend_from_slice(context);
        let x = if parts.len() == 1 {
            hyper.clone()
        } else {
            concat_channels(&hyper.tape, &parts)?
        };
        let got = x.shape()[1];
        if got != self.in_channels {
            return Err(CoreError::InvalidShape {
                op: "entropy_stage",
                shape: x.shape(),
                reason: format!("expected {} conditioning channels, got {got}", self.in_channels),
            });
        }
        let mut t = self.inp.forward(bind, &x)?;
        for b in &self.blocks {
            t = b.forward(bind, &t)?;
        }
        let out = self.head.forward(bind, &t)?;
        let parts = out.split_channels(&[self.slice_channels, self.slice_channels])?;
        Ok((parts[0].clone(), parts[1].clone()))
    }
}

/// Latent residual prediction: a bounded correction 0.5*tanh(r) added to
/// the dequantized slice. The final projection is zero-initialized, so a
/// fresh head is the identity.
#[derive(Clone)]
pub(crate) struct LrpNet {
    pub in_channels: usize,
    c1: Conv2dL,
    c2: Conv2dL,
}

impl LrpNet {
    pub fn new<S: Scalar>(
        bld: &mut Builder<S>,
        name: &str,
        in_channels: usize,
        width: usize,
        slice_channels: usize,
    ) -> Self {
        LrpNet {
            in_channels,
            c1: Conv2dL::new(bld, &format!("{name}.c1"), in_channels, width, 3, 1, false),
            c2: Conv2dL::new(bld, &format!("{name}.c2"), width, slice_channels, 1, 1, true),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        bind: &Binding<S>,
        hyper: &Tensor<S>,
        context: &[&Tensor<S>],
        y_slice: &Tensor<S>,
    ) -> CoreResult<Tensor<S>> {
        let mut parts: Vec<&Tensor<S>> = Vec::with_capacity(2 + context.len());
        parts.push(hyper);
        parts.extend_from_slice(context);
        parts.push(y_slice);
        let x = concat_channels(&hyper.tape, &parts)?;
        if x.shape()[1] != self.in_channels {
            return Err(CoreError::InvalidShape {
                op: "lrp_refine",
                shape: x.shape(),
                reason: format!("expected {} input channels", self.in_channels),
            });
        }
        let r = self.c2.forward(bind, &self.c1.forward(bind, &x)?.gelu()?)?;
        y_slice.add(&r.tanh()?.scale(S::from_real(0.5))?)
    }
}
