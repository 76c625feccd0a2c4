//! The training step: noise-quantized rate/CCA/aux terms, a
//! straight-through-rounded decode path into the synthesis transform,
//! gradient routing between major and auxiliary networks, and the Adam
//! loop over deterministic crop batches.

use rayon::prelude::*;

use cca_core::entropy::{factorized_likelihood, gaussian_likelihood, quantize_train};
use cca_core::loss::{
    aux_loss, cca_loss, distortion_mse, nll_bits, rate_loss, total_loss, CcaSign, LossReport,
    StageNll,
};
use cca_core::network::{Binding, Model};
use cca_core::rng;
use cca_core::{concat_channels, Tape, Tensor, TensorData};

use crate::config::TrainConfig;
use crate::dataset::CropSampler;
use crate::error::{PipelineError, PipelineResult};
use crate::optim::AdamState;

/// Which terms feed the optimized objective; `All` is training, the
/// single-term selections exist to verify gradient routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossSelect {
    #[default]
    All,
    CcaOnly,
    AuxOnly,
}

pub struct StepSettings {
    pub lambda: f64,
    pub cca_enabled: bool,
    pub cca_sign: CcaSign,
    pub likelihood_floor: f64,
    pub loss_select: LossSelect,
}

pub enum StepMode {
    /// Full pass with backward; per-op finite checks on.
    Train { batch_scale: f64 },
    /// Forward only with finite checks off, to dump loss components
    /// after a non-finite failure.
    Probe,
}

pub struct ItemOutcome {
    pub grads: Vec<Vec<f64>>,
    pub report: LossReport,
}

/// Stream keys for one item's noise draws.
pub fn noise_keys(seed: u64, step: u64, item: u64) -> (u64, u64) {
    (
        rng::derive_key(&[seed, step, item, 0x7A]),
        rng::derive_key(&[seed, step, item, 0x7B]),
    )
}

/// One training item: forward graph, loss report and (in train mode)
/// parameter gradients aligned with `model.params`.
pub fn forward_item(
    model: &Model<f64>,
    crop: &TensorData<f64>,
    settings: &StepSettings,
    key_z: u64,
    key_y: u64,
    mode: StepMode,
) -> PipelineResult<ItemOutcome> {
    let tape: Tape<f64> = Tape::new();
    let train = matches!(mode, StepMode::Train { .. });
    if !train {
        tape.set_check_finite(false);
    }
    let floor = settings.likelihood_floor;
    let counts = model.schedule.counts.clone();
    let n_stages = model.stages();
    let npix = crop.shape[2] * crop.shape[3];

    let bind = model.bind(&tape, train)?;
    let x255 = tape.leaf(crop.clone(), false)?;
    let x_norm = x255.scale(1.0 / 255.0)?;

    let y = model.analysis(&bind, &x_norm)?;
    let z = model.hyper_analysis(&bind, &y)?;
    let z_noisy = quantize_train(&z, key_z)?;
    let fd_params = model.factorized_params(&bind);
    let p_z = factorized_likelihood(&tape, &z_noisy, &fd_params, floor)?;
    let rate_z = rate_loss(&p_z, npix)?;

    let yshape = y.shape();
    let hyper = model.hyper_synthesis(&bind, &z_noisy, yshape[2], yshape[3])?;
    let hyper_det = hyper.detach();
    let y_noisy = quantize_train(&y, key_y)?;
    let y_slices = y.split_channels(&counts)?;
    let yn_slices = y_noisy.split_channels(&counts)?;

    // Frozen-parameter binding for the CCA-side auxiliary pass: inputs
    // stay attached (the encoder feels this term) while the auxiliary
    // weights receive nothing.
    let bind_frozen = if settings.cca_enabled {
        Some(model.bind(&tape, false)?)
    } else {
        None
    };

    let mut ctx: Vec<Tensor<f64>> = Vec::new();
    let mut ctx_det: Vec<Tensor<f64>> = Vec::new();
    let mut stages: Vec<StageNll<f64>> = Vec::new();
    for i in 1..=n_stages {
        let ctx_now = ctx.clone();
        let ctx_refs: Vec<&Tensor<f64>> = ctx_now.iter().collect();
        let pm = model.entropy_major(&bind, i, &hyper, &ctx_refs)?;
        let major = nll_bits(&gaussian_likelihood(&yn_slices[i - 1], &pm, floor)?)?;

        let (aux_for_cca, aux_for_aux) = if i >= 2 {
            let aux_ctx: Vec<&Tensor<f64>> = ctx_now[..i - 2].iter().collect();
            let a_cca = if let Some(frozen) = &bind_frozen {
                let pa = model.entropy_aux(frozen, i, &hyper, &aux_ctx)?;
                nll_bits(&gaussian_likelihood(&yn_slices[i - 1], &pa, floor)?)?
            } else {
                major.clone()
            };
            // Trainable auxiliary pass on detached encoder outputs: only
            // the auxiliary weights learn from it.
            let aux_ctx_det: Vec<&Tensor<f64>> = ctx_det[..i - 2].iter().collect();
            let pa_t = model.entropy_aux(&bind, i, &hyper_det, &aux_ctx_det)?;
            let target = yn_slices[i - 1].detach();
            let a_train = nll_bits(&gaussian_likelihood(&target, &pa_t, floor)?)?;
            (a_cca, Some(a_train))
        } else {
            (major.clone(), None)
        };

        // Decode-path slice: straight-through round(y - mu) + mu, then
        // the latent residual prediction, exactly as the decoder will.
        let residual = y_slices[i - 1].sub(&pm.mu)?.round_ste()?;
        let y_hat_raw = residual.add(&pm.mu)?;
        let y_hat = model.lrp_refine(&bind, i, &hyper, &ctx_refs, &y_hat_raw)?;
        ctx_det.push(y_hat.detach());
        ctx.push(y_hat);
        stages.push(StageNll {
            index: i,
            major,
            aux_for_cca,
            aux_for_aux,
        });
    }

    let mut rate_y_bits = stages[0].major.clone();
    for st in &stages[1..] {
        rate_y_bits = rate_y_bits.add(&st.major)?;
    }
    let rate_y = rate_y_bits.scale(1.0 / npix as f64)?;

    let ctx_refs: Vec<&Tensor<f64>> = ctx.iter().collect();
    let y_hat_full = concat_channels(&tape, &ctx_refs)?;
    let x_hat = model.synthesis(&bind, &y_hat_full)?;
    let distortion = distortion_mse(&x_norm, &x_hat)?.scale(255.0 * 255.0)?;

    let cca = if settings.cca_enabled {
        cca_loss(&stages, npix, settings.cca_sign)?
    } else {
        stages[0].major.scale(0.0)?
    };
    let aux = aux_loss(&stages, npix)?;
    let total = match settings.loss_select {
        LossSelect::All => total_loss(&rate_y, &rate_z, &distortion, &cca, &aux, settings.lambda)?,
        LossSelect::CcaOnly => cca.clone(),
        LossSelect::AuxOnly => aux.clone(),
    };

    let report = LossReport {
        rate_y: rate_y.item(),
        rate_z: rate_z.item(),
        distortion: distortion.item(),
        cca: cca.item(),
        aux: aux.item(),
        lambda: settings.lambda,
        total: total.item(),
    };

    let grads = match mode {
        StepMode::Train { batch_scale } => {
            let scaled = total.scale(batch_scale)?;
            tape.backward(&scaled)?;
            collect_grads(model, &bind)
        }
        StepMode::Probe => Vec::new(),
    };
    Ok(ItemOutcome { grads, report })
}

fn collect_grads(model: &Model<f64>, bind: &Binding<f64>) -> Vec<Vec<f64>> {
    (0..model.params.len())
        .map(|i| {
            bind.grad(i)
                .unwrap_or_else(|| vec![0.0; model.params[i].data.len()])
        })
        .collect()
}

/// Adam training loop over deterministic crop batches.
pub struct Trainer {
    pub model: Model<f64>,
    pub config: TrainConfig,
    sampler: CropSampler,
    adam: AdamState,
    pub step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, sampler: CropSampler) -> PipelineResult<Self> {
        config.validate()?;
        let model = Model::new(config.model_config(), config.seed)?;
        let adam = AdamState::new(&model);
        Ok(Trainer {
            model,
            config,
            sampler,
            adam,
            step: 0,
        })
    }

    fn settings(&self) -> StepSettings {
        StepSettings {
            lambda: self.config.lambda,
            cca_enabled: self.config.cca_enabled,
            cca_sign: self.config.cca_sign,
            likelihood_floor: self.model.config.likelihood_floor,
            loss_select: LossSelect::All,
        }
    }

    /// One optimization step over a batch; returns the mean report.
    pub fn train_step(&mut self) -> PipelineResult<LossReport> {
        let b = self.config.batch_size;
        let crops = self.sampler.batch(self.step as u64, b);
        let settings = self.settings();
        let seed = self.config.seed;
        let step = self.step as u64;
        let model = &self.model;
        let outcomes: Vec<PipelineResult<ItemOutcome>> = crops
            .par_iter()
            .enumerate()
            .map(|(i, crop)| {
                let (kz, ky) = noise_keys(seed, step, i as u64);
                forward_item(
                    model,
                    crop,
                    &settings,
                    kz,
                    ky,
                    StepMode::Train {
                        batch_scale: 1.0 / b as f64,
                    },
                )
            })
            .collect();

        let mut items = Vec::with_capacity(b);
        for (i, out) in outcomes.into_iter().enumerate() {
            match out {
                Ok(o) => items.push(o),
                Err(PipelineError::Core(cca_core::CoreError::NonFinite { op })) => {
                    // Re-run without finite checks to dump components.
                    let (kz, ky) = noise_keys(seed, step, i as u64);
                    let diag = forward_item(model, &crops[i], &settings, kz, ky, StepMode::Probe)
                        .map(|o| format!("{:?}", o.report))
                        .unwrap_or_else(|e| format!("probe failed: {e}"));
                    return Err(PipelineError::NonFiniteLoss {
                        step: self.step,
                        diagnostic: format!("op {op}; components {diag}"),
                    });
                }
                Err(e) => return Err(e),
            }
        }

        // Deterministic accumulation in batch order.
        let mut grads: Vec<Vec<f64>> = self
            .model
            .params
            .iter()
            .map(|p| vec![0.0; p.data.len()])
            .collect();
        for item in &items {
            for (acc, g) in grads.iter_mut().zip(&item.grads) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
        }
        let lr = self.config.learning_rate(self.step);
        self.adam.update(&mut self.model, &grads, lr);
        self.step += 1;

        let inv = 1.0 / b as f64;
        let mut mean = LossReport {
            rate_y: 0.0,
            rate_z: 0.0,
            distortion: 0.0,
            cca: 0.0,
            aux: 0.0,
            lambda: self.config.lambda,
            total: 0.0,
        };
        for item in &items {
            mean.rate_y += item.report.rate_y * inv;
            mean.rate_z += item.report.rate_z * inv;
            mean.distortion += item.report.distortion * inv;
            mean.cca += item.report.cca * inv;
            mean.aux += item.report.aux * inv;
        }
        mean.total = mean.recompose();
        Ok(mean)
    }

    /// Run the configured number of steps, reporting through `progress`.
    pub fn run(
        &mut self,
        mut progress: impl FnMut(usize, &LossReport),
    ) -> PipelineResult<LossReport> {
        let mut last = None;
        while self.step < self.config.steps {
            let report = self.train_step()?;
            progress(self.step, &report);
            last = Some(report);
        }
        last.ok_or_else(|| PipelineError::Invalid("zero training steps".into()))
    }

    pub fn trained(&self) -> crate::checkpoint::TrainedModel<f64> {
        crate::checkpoint::TrainedModel::new(self.model.clone(), self.config.lambda)
    }
}
