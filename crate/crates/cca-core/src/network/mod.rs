//! Model configuration, the ordered parameter store, and the assembled
//! compression model: transforms, per-stage entropy networks (major and
//! auxiliary), latent residual prediction and the factorized density.

mod blocks;
mod entropy_net;
mod transforms;

use std::sync::Arc;

use crate::entropy::{build_schedule, factorized_init, EntropyParams, GroupSchedule};
use crate::error::{CoreError, CoreResult};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

use blocks::Builder;
use entropy_net::{EntropyNet, LrpNet};
use transforms::{expect_image, Stack};

/// Architecture preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Toy,
    Full,
    Custom,
}

impl Profile {
    pub fn id(self) -> u8 {
        match self {
            Profile::Toy => 0,
            Profile::Full => 1,
            Profile::Custom => 255,
        }
    }

    pub fn from_id(id: u8) -> Option<Profile> {
        match id {
            0 => Some(Profile::Toy),
            1 => Some(Profile::Full),
            255 => Some(Profile::Custom),
            _ => None,
        }
    }
}

/// Widths, depths and entropy-model settings of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub profile: Profile,
    pub image_channels: usize,
    /// Latent channels M.
    pub latent_channels: usize,
    pub hyper_channels: usize,
    /// Autoregressive stage count n.
    pub stages: usize,
    /// Power-schedule exponent k.
    pub schedule_k: f64,
    /// Transform widths (dim0, dim1, dim2).
    pub dims: [usize; 3],
    /// Residual blocks per level.
    pub res_blocks: usize,
    /// Gated blocks per level.
    pub gated_blocks: usize,
    pub entropy_width: usize,
    pub entropy_blocks: usize,
    pub sigma_floor: f64,
    pub likelihood_floor: f64,
}

impl ModelConfig {
    /// Small CPU-trainable profile; the default everywhere.
    pub fn toy() -> Self {
        ModelConfig {
            profile: Profile::Toy,
            image_channels: 3,
            latent_channels: 48,
            hyper_channels: 32,
            stages: 3,
            schedule_k: 1.7,
            dims: [32, 40, 48],
            res_blocks: 1,
            gated_blocks: 1,
            entropy_width: 48,
            entropy_blocks: 1,
            sigma_floor: crate::entropy::SIGMA_FLOOR,
            likelihood_floor: crate::entropy::LIKELIHOOD_FLOOR,
        }
    }

    /// Full-scale dimensions (config only; not a training target here).
    pub fn full() -> Self {
        ModelConfig {
            profile: Profile::Full,
            image_channels: 3,
            latent_channels: 320,
            hyper_channels: 192,
            stages: 5,
            schedule_k: 1.7,
            dims: [192, 224, 256],
            res_blocks: 3,
            gated_blocks: 4,
            entropy_width: 224,
            entropy_blocks: 2,
            sigma_floor: crate::entropy::SIGMA_FLOOR,
            likelihood_floor: crate::entropy::LIKELIHOOD_FLOOR,
        }
    }

    pub fn validate(&self) -> CoreResult<()> {
        for &w in self
            .dims
            .iter()
            .chain([&self.latent_channels, &self.hyper_channels, &self.entropy_width])
        {
            if w < 4 || !w.is_multiple_of(2) {
                return Err(CoreError::Invalid(format!(
                    "widths must be even and >= 4, got {w}"
                )));
            }
        }
        if self.stages < 2 {
            return Err(CoreError::Invalid("need at least 2 stages".into()));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(self.sigma_floor > 0.0) {
            return Err(CoreError::Invalid("sigma_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> CoreResult<GroupSchedule> {
        build_schedule(self.latent_channels, self.stages, self.schedule_k)
    }
}

/// Which part of the model a parameter belongs to. Auxiliary entropy
/// networks are the only group excluded from the main objective's
/// gradient flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Analysis,
    Synthesis,
    HyperAnalysis,
    HyperSynthesis,
    Factorized,
    /// Major entropy network of stage i (1-based).
    Major(usize),
    /// Auxiliary entropy network of stage i.
    Aux(usize),
    /// Latent residual prediction of stage i.
    Lrp(usize),
}

impl ParamGroup {
    pub fn is_aux(self) -> bool {
        matches!(self, ParamGroup::Aux(_))
    }
}

/// One named parameter tensor.
#[derive(Clone)]
pub struct Param<S: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<S>>,
    pub group: ParamGroup,
}

/// Tape leaves for every parameter, aligned with the model's store.
pub struct Binding<S: Scalar> {
    leaves: Vec<Tensor<S>>,
}

impl<S: Scalar> Binding<S> {
    pub fn from_leaves(leaves: Vec<Tensor<S>>) -> Self {
        Binding { leaves }
    }

    pub fn leaf(&self, idx: usize) -> &Tensor<S> {
        &self.leaves[idx]
    }

    pub fn grad(&self, idx: usize) -> Option<Vec<S>> {
        self.leaves[idx].grad()
    }
}

/// A single residual or gated block with its own parameter store; the
/// standalone form of the blocks g_a/g_s stack, mainly for direct
/// gradient and identity checks.
pub struct BlockModel<S: Scalar> {
    pub params: Vec<Param<S>>,
    kind: BlockKindInner,
}

enum BlockKindInner {
    Residual(blocks::ResidualBlock),
    Gated(blocks::NafBlock),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Residual,
    Gated,
}

impl<S: Scalar> BlockModel<S> {
    pub fn new(kind: BlockKind, channels: usize, seed: u64) -> CoreResult<Self> {
        if channels < 4 || !channels.is_multiple_of(2) {
            return Err(CoreError::Invalid(format!(
                "block width must be even and >= 4, got {channels}"
            )));
        }
        let mut params = Vec::new();
        let mut bld = Builder {
            params: &mut params,
            seed,
            group: ParamGroup::Analysis,
        };
        let kind = match kind {
            BlockKind::Residual => {
                BlockKindInner::Residual(blocks::ResidualBlock::new(&mut bld, "block", channels))
            }
            BlockKind::Gated => {
                BlockKindInner::Gated(blocks::NafBlock::new(&mut bld, "block", channels))
            }
        };
        Ok(BlockModel { params, kind })
    }

    pub fn bind(&self, tape: &Tape<S>, trainable: bool) -> CoreResult<Binding<S>> {
        let mut leaves = Vec::with_capacity(self.params.len());
        for p in &self.params {
            leaves.push(tape.leaf_shared(p.shape.clone(), Arc::clone(&p.data), trainable)?);
        }
        Ok(Binding { leaves })
    }

    pub fn forward(&self, bind: &Binding<S>, x: &Tensor<S>) -> CoreResult<Tensor<S>> {
        match &self.kind {
            BlockKindInner::Residual(b) => b.forward(bind, x),
            BlockKindInner::Gated(b) => b.forward(bind, x),
        }
    }
}

/// The assembled compression model.
#[derive(Clone)]
pub struct Model<S: Scalar> {
    pub config: ModelConfig,
    pub schedule: GroupSchedule,
    pub params: Vec<Param<S>>,
    ga: Stack,
    gs: Stack,
    ha: Stack,
    hs: Stack,
    major: Vec<EntropyNet>,
    aux: Vec<EntropyNet>,
    lrp: Vec<LrpNet>,
    fd: Vec<usize>,
}

impl<S: Scalar> Model<S> {
    /// Deterministic construction: identical (config, seed) gives
    /// bitwise-identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> CoreResult<Model<S>> {
        config.validate()?;
        let schedule = config.schedule()?;
        let m = config.latent_channels;
        let mut params: Vec<Param<S>> = Vec::new();

        let mut bld = Builder {
            params: &mut params,
            seed,
            group: ParamGroup::Analysis,
        };
        let ga = transforms::build_analysis(&mut bld, &config);
        bld.group = ParamGroup::Synthesis;
        let gs = transforms::build_synthesis(&mut bld, &config);
        bld.group = ParamGroup::HyperAnalysis;
        let ha = transforms::build_hyper_analysis(&mut bld, &config);
        bld.group = ParamGroup::HyperSynthesis;
        let hs = transforms::build_hyper_synthesis(&mut bld, &config);

        bld.group = ParamGroup::Factorized;
        let mut fd = Vec::new();
        let fd_init = factorized_init::<S>(config.hyper_channels, seed ^ 0xFD);
        for (tensor, (suffix, shape)) in fd_init.into_iter().zip(
            crate::entropy::factorized_param_shapes(config.hyper_channels),
        ) {
            debug_assert_eq!(tensor.shape, shape);
            let idx = bld.params.len();
            bld.params.push(Param {
                name: format!("fd.{suffix}"),
                shape: tensor.shape,
                data: Arc::new(tensor.data),
                group: ParamGroup::Factorized,
            });
            fd.push(idx);
        }

        let mut major = Vec::new();
        let mut aux = Vec::new();
        let mut lrp = Vec::new();
        for i in 1..=config.stages {
            let slice_ch = schedule.counts[i - 1];
            let ctx_ch = schedule.prefix(i - 1);
            bld.group = ParamGroup::Major(i);
            major.push(EntropyNet::new(
                &mut bld,
                &format!("em{i}"),
                2 * m + ctx_ch,
                config.entropy_width,
                config.entropy_blocks,
                slice_ch,
            ));
            if i >= 2 {
                let aux_ctx_ch = schedule.prefix(i - 2);
                bld.group = ParamGroup::Aux(i);
                aux.push(EntropyNet::new(
                    &mut bld,
                    &format!("aux{i}"),
                    2 * m + aux_ctx_ch,
                    config.entropy_width,
                    config.entropy_blocks,
                    slice_ch,
                ));
            }
            bld.group = ParamGroup::Lrp(i);
            lrp.push(LrpNet::new(
                &mut bld,
                &format!("lrp{i}"),
                2 * m + ctx_ch + slice_ch,
                config.entropy_width,
                slice_ch,
            ));
        }

        Ok(Model {
            config,
            schedule,
            params,
            ga,
            gs,
            ha,
            hs,
            major,
            aux,
            lrp,
            fd,
        })
    }

    pub fn stages(&self) -> usize {
        self.config.stages
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Bind every parameter onto a tape; `track` decides which become
    /// gradient-tracked leaves.
    pub fn bind_with(
        &self,
        tape: &Tape<S>,
        track: impl Fn(&Param<S>) -> bool,
    ) -> CoreResult<Binding<S>> {
        let mut leaves = Vec::with_capacity(self.params.len());
        for p in &self.params {
            leaves.push(tape.leaf_shared(p.shape.clone(), Arc::clone(&p.data), track(p))?);
        }
        Ok(Binding { leaves })
    }

    /// All parameters tracked (training) or none (inference).
    pub fn bind(&self, tape: &Tape<S>, trainable: bool) -> CoreResult<Binding<S>> {
        self.bind_with(tape, |_| trainable)
    }

    /// x [n,3,H,W] (H, W multiples of 16) -> y [n,M,H/16,W/16].
    pub fn analysis(&self, bind: &Binding<S>, x: &Tensor<S>) -> CoreResult<Tensor<S>> {
        expect_image(x, self.config.image_channels)?;
        self.ga.forward(bind, x)
    }

    /// y_hat [n,M,h,w] -> x_hat [n,3,16h,16w], unclamped.
    pub fn synthesis(&self, bind: &Binding<S>, y_hat: &Tensor<S>) -> CoreResult<Tensor<S>> {
        let shape = y_hat.shape();
        if shape.len() != 4 || shape[1] != self.config.latent_channels {
            return Err(CoreError::InvalidShape {
                op: "synthesis",
                shape,
                reason: format!("expected [n,{},h,w]", self.config.latent_channels),
            });
        }
        self.gs.forward(bind, y_hat)
    }

    /// y -> z (two stride-2 convolutions; spatial ceil(h/4)).
    pub fn hyper_analysis(&self, bind: &Binding<S>, y: &Tensor<S>) -> CoreResult<Tensor<S>> {
        let shape = y.shape();
        if shape.len() != 4 || shape[1] != self.config.latent_channels {
            return Err(CoreError::InvalidShape {
                op: "hyper_analysis",
                shape,
                reason: format!("expected [n,{},h,w]", self.config.latent_channels),
            });
        }
        self.ha.forward(bind, y)
    }

    /// z_hat -> hyper features [n,2M,h,w], cropped to the latent's
    /// spatial dims.
    pub fn hyper_synthesis(
        &self,
        bind: &Binding<S>,
        z_hat: &Tensor<S>,
        y_h: usize,
        y_w: usize,
    ) -> CoreResult<Tensor<S>> {
        let feat = self.hs.forward(bind, z_hat)?;
        let shape = feat.shape();
        if shape[2] < y_h || shape[3] < y_w {
            return Err(CoreError::InvalidShape {
                op: "hyper_synthesis",
                shape,
                reason: format!("cannot cover latent {y_h}x{y_w}"),
            });
        }
        if shape[2] == y_h && shape[3] == y_w {
            Ok(feat)
        } else {
            feat.crop_spatial(0, 0, y_h, y_w)
        }
    }

    fn check_context(
        &self,
        op: &'static str,
        want: usize,
        context: &[&Tensor<S>],
    ) -> CoreResult<()> {
        if context.len() != want {
            return Err(CoreError::Invalid(format!(
                "{op}: expected {want} context slices, got {}",
                context.len()
            )));
        }
        for (j, t) in context.iter().enumerate() {
            let shape = t.shape();
            if shape.len() != 4 || shape[1] != self.schedule.counts[j] {
                return Err(CoreError::InvalidShape {
                    op: "entropy_stage",
                    shape,
                    reason: format!(
                        "context slice {} should carry {} channels",
                        j + 1,
                        self.schedule.counts[j]
                    ),
                });
            }
        }
        Ok(())
    }

    /// Stage-i major entropy parameters from hyper features and decoded
    /// slices 1..i-1.
    pub fn entropy_major(
        &self,
        bind: &Binding<S>,
        i: usize,
        hyper: &Tensor<S>,
        context: &[&Tensor<S>],
    ) -> CoreResult<EntropyParams<S>> {
        if i == 0 || i > self.stages() {
            return Err(CoreError::Invalid(format!("stage {i} out of range")));
        }
        self.check_context("entropy_stage_major", i - 1, context)?;
        let (mu, raw) = self.major[i - 1].forward(bind, hyper, context)?;
        EntropyParams::from_raw(mu, &raw, self.config.sigma_floor)
    }

    /// Stage-i auxiliary entropy parameters; context is one slice
    /// shorter. Stage 1 has no auxiliary network.
    pub fn entropy_aux(
        &self,
        bind: &Binding<S>,
        i: usize,
        hyper: &Tensor<S>,
        context: &[&Tensor<S>],
    ) -> CoreResult<EntropyParams<S>> {
        if i < 2 || i > self.stages() {
            return Err(CoreError::Invalid(format!(
                "auxiliary model exists for stages 2..={}, got {i}",
                self.stages()
            )));
        }
        self.check_context("entropy_stage_aux", i - 2, context)?;
        let (mu, raw) = self.aux[i - 2].forward(bind, hyper, context)?;
        EntropyParams::from_raw(mu, &raw, self.config.sigma_floor)
    }

    /// Bounded learned correction of a dequantized slice.
    pub fn lrp_refine(
        &self,
        bind: &Binding<S>,
        i: usize,
        hyper: &Tensor<S>,
        context: &[&Tensor<S>],
        y_slice: &Tensor<S>,
    ) -> CoreResult<Tensor<S>> {
        if i == 0 || i > self.stages() {
            return Err(CoreError::Invalid(format!("stage {i} out of range")));
        }
        self.check_context("lrp_refine", i - 1, context)?;
        self.lrp[i - 1].forward(bind, hyper, context, y_slice)
    }

    /// The 11 factorized-density parameter tensors.
    pub fn factorized_params(&self, bind: &Binding<S>) -> Vec<Tensor<S>> {
        self.fd.iter().map(|&i| bind.leaf(i).clone()).collect()
    }

    /// Factorized-density parameter values (for the coding path).
    pub fn factorized_data(&self) -> Vec<crate::tensor::TensorData<S>> {
        self.fd
            .iter()
            .map(|&i| crate::tensor::TensorData {
                shape: self.params[i].shape.clone(),
                data: self.params[i].data.as_ref().clone(),
            })
            .collect()
    }
}
