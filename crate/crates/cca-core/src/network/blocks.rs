//! Parameterized layers and the residual / gated (NAF-style) blocks.
//!
//! Construction registers parameters in the model's ordered store and
//! keeps only indices; forward passes read leaves out of a [`Binding`].

use crate::error::CoreResult;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Binding, Param, ParamGroup};

pub(crate) enum InitKind {
    Zeros,
    Ones,
    FanIn(usize),
}

/// Collects parameters during model construction.
pub(crate) struct Builder<'a, S: Scalar> {
    pub params: &'a mut Vec<Param<S>>,
    pub seed: u64,
    pub group: ParamGroup,
}

impl<'a, S: Scalar> Builder<'a, S> {
    pub fn add(&mut self, name: String, shape: Vec<usize>, init: InitKind) -> usize {
        let n: usize = shape.iter().product();
        let idx = self.params.len();
        let key = rng::derive_key(&[self.seed, idx as u64, 0x1217]);
        let data: Vec<S> = match init {
            InitKind::Zeros => vec![S::zero(); n],
            InitKind::Ones => vec![S::one(); n],
            InitKind::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n)
                    .map(|i| S::from_real(rng::uniform_sym(key, i as u64, bound)))
                    .collect()
            }
        };
        self.params.push(Param {
            name,
            shape,
            data: std::sync::Arc::new(data),
            group: self.group,
        });
        idx
    }
}

#[derive(Clone)]
pub(crate) struct Conv2dL {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

impl Conv2dL {
    pub fn new<S: Scalar>(
        bld: &mut Builder<S>,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        zero_init: bool,
    ) -> Self {
        let pad = k / 2;
        let init = if zero_init {
            InitKind::Zeros
        } else {
            InitKind::FanIn(ci * k * k)
        };
        let w = bld.add(format!("{name}.w"), vec![co, ci, k, k], init);
        let b = bld.add(format!("{name}.b"), vec![co], InitKind::Zeros);
        Conv2dL { w, b, stride, pad }
    }

    pub fn forward<S: Scalar>(&self, bind: &Binding<S>, x: &Tensor<S>) -> CoreResult<Tensor<S>> {
        x.conv2d(bind.leaf(self.w), Some(bind.leaf(self.b)), self.stride, self.pad)
    }
}

#[derive(Clone)]
pub(crate) struct ConvT2dL {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
}

impl ConvT2dL {
    pub fn new<S: Scalar>(
        bld: &mut Builder<S>,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let w = bld.add(
            format!("{name}.w"),
            vec![ci, co, k, k],
            InitKind::FanIn(ci * k * k),
        );
        let b = bld.add(format!("{name}.b"), vec![co], InitKind::Zeros);
        ConvT2dL {
            w,
            b,
            stride,
            pad: k / 2,
            out_pad: stride - 1,
        }
    }

    pub fn forward<S: Scalar>(&self, bind: &Binding<S>, x: &Tensor<S>) -> CoreResult<Tensor<S>> {
        x.conv_transpose2d(
            bind.leaf(self.w),
            Some(bind.leaf(self.b)),
            self.stride,
            self.pad,
            self.out_pad,
        )
    }
}

#[derive(Clone)]
pub(crate) struct DwConvL {
    w: usize,
    b: usize,
    pad: usize,
}

impl DwConvL {
    pub fn new<S: Scalar>(bld: &mut Builder<S>, name: &str, c: usize, k: usize) -> Self {
        let w = bld.add(format!("{name}.w"), vec![c, 1, k, k], InitKind::FanIn(k * k));
        let b = bld.add(format!("{name}.b"), vec![c], InitKind::Zeros);
        DwConvL { w, b, pad: k / 2 }
    }

    pub fn forward<S: Scalar>(&self, bind: &Binding<S>, x: &Tensor<S>) -> CoreResult<Tensor<S>> {
        x.dwconv2d(bind.leaf(self.w), Some(bind.leaf(self.b)), self.pad)
    }
}

#[derive(Clone)]
pub(crate) struct LayerNormL {
    g: usize,
    b: usize,
}

impl LayerNormL {
    pub fn new<S: Scalar>(bld: &mut Builder<S>, name: &str, c: usize) -> Self {
        let g = bld.add(format!("{name}.g"), vec![c], InitKind::Ones);
        let b = bld.add(format!("{name}.b"), vec![c], InitKind::Zeros);
        LayerNormL { g, b }
    }

    pub fn forward<S: Scalar>(&self, bind: &Binding<S>, x: &Tensor<S>) -> CoreResult<Tensor<S>> {
        x.layer_norm_ch(bind.leaf(self.g), bind.leaf(self.b))
    }
}

/// conv3x3 -> GELU -> conv3x3 (zero-init) with a skip connection;
/// identity at initialization.
#[derive(Clone)]
pub(crate) struct ResidualBlock {
    c1: Conv2dL,
    c2: Conv2dL,
}

impl ResidualBlock {
    pub fn new<S: Scalar>(bld: &mut Builder<S>, name: &str, c: usize) -> Self {
        ResidualBlock {
            c1: Conv2dL::new(bld, &format!("{name}.c1"), c, c, 3, 1, false),
            c2: Conv2dL::new(bld, &format!("{name}.c2"), c, c, 3, 1, true),
        }
    }

    pub fn forward<S: Scalar>(&self, bind: &Binding<S>, x: &Tensor<S>) -> CoreResult<Tensor<S>> {
        let t = self.c1.forward(bind, x)?.gelu()?;
        let t = self.c2.forward(bind, &t)?;
        x.add(&t)
    }
}

/// Gated activation-free block: layer norm, 1x1 expand to 2c, 3x3
/// depthwise, split-in-half gate, simple channel attention, zero-init
/// 1x1 projection, residual; then a second ln/expand/gate/project
/// sub-block. Identity at initialization.
#[derive(Clone)]
pub(crate) struct NafBlock {
    c: usize,
    ln1: LayerNormL,
    expand: Conv2dL,
    dw: DwConvL,
    sca: Conv2dL,
    proj: Conv2dL,
    ln2: LayerNormL,
    expand2: Conv2dL,
    proj2: Conv2dL,
}

impl NafBlock {
    pub fn new<S: Scalar>(bld: &mut Builder<S>, name: &str, c: usize) -> Self {
        NafBlock {
            c,
            ln1: LayerNormL::new(bld, &format!("{name}.ln1"), c),
            expand: Conv2dL::new(bld, &format!("{name}.exp1"), c, 2 * c, 1, 1, false),
            dw: DwConvL::new(bld, &format!("{name}.dw"), 2 * c, 3),
            sca: Conv2dL::new(bld, &format!("{name}.sca"), c, c, 1, 1, false),
            proj: Conv2dL::new(bld, &format!("{name}.proj1"), c, c, 1, 1, true),
            ln2: LayerNormL::new(bld, &format!("{name}.ln2"), c),
            expand2: Conv2dL::new(bld, &format!("{name}.exp2"), c, 2 * c, 1, 1, false),
            proj2: Conv2dL::new(bld, &format!("{name}.proj2"), c, c, 1, 1, true),
        }
    }

    pub fn forward<S: Scalar>(&self, bind: &Binding<S>, x: &Tensor<S>) -> CoreResult<Tensor<S>> {
        let t = self.ln1.forward(bind, x)?;
        let t = self.expand.forward(bind, &t)?;
        let t = self.dw.forward(bind, &t)?;
        let halves = t.split_channels(&[self.c, self.c])?;
        let g = halves[0].mul(&halves[1])?;
        let s = self.sca.forward(bind, &g.global_avg_pool()?)?;
        let g = g.channel_mul(&s)?;
        let g = self.proj.forward(bind, &g)?;
        let x1 = x.add(&g)?;

        let t2 = self.ln2.forward(bind, &x1)?;
        let t2 = self.expand2.forward(bind, &t2)?;
        let halves2 = t2.split_channels(&[self.c, self.c])?;
        let g2 = halves2[0].mul(&halves2[1])?;
        let g2 = self.proj2.forward(bind, &g2)?;
        x1.add(&g2)
    }
}

