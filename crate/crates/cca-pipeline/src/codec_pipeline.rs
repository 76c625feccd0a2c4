//! End-to-end compression and decompression.
//!
//! Encoding order: hyperprior first under the factorized CDFs, then the
//! latent slices in schedule order; each stage's CDFs come from hyper
//! features plus the previously *decoded* slices, with the encoder
//! replaying the decoder's reconstruction (dequantization and LRP), so
//! both sides see bitwise-identical conditioning.

use std::collections::HashMap;

use cca_codec::{
    build_factorized_cdf, build_symbol_cdf, rc_encode, BitstreamContainer, CodecError,
    QuantizedCdf, RansDecoder, PRECISION, RESIDUAL_CLAMP,
};
use cca_core::entropy::FactorizedEval;
use cca_core::network::Binding;
use cca_core::{Tape, Tensor, TensorData};

use crate::checkpoint::TrainedModel;
use crate::dataset::RgbImage;
use crate::error::{PipelineError, PipelineResult};

/// Per-image encoder statistics.
#[derive(Debug, Clone)]
pub struct CompressStats {
    /// Model-estimated payload bits for the hyperprior.
    pub estimated_bits_z: f64,
    /// Model-estimated payload bits per latent slice.
    pub estimated_bits_slices: Vec<f64>,
    /// Symbols clamped into the coded support.
    pub saturated_symbols: u64,
    /// The encoder-side replay of the decoded latents (debug hook).
    pub y_hat: TensorData<f64>,
    pub z_hat: TensorData<f64>,
}

impl CompressStats {
    pub fn estimated_payload_bits(&self) -> f64 {
        self.estimated_bits_z + self.estimated_bits_slices.iter().sum::<f64>()
    }
}

/// Decoder-side latents (debug hook for roundtrip verification).
#[derive(Debug, Clone)]
pub struct DecodedLatents {
    pub y_hat: TensorData<f64>,
    pub z_hat: TensorData<f64>,
}

fn round_up_16(v: usize) -> usize {
    v.div_ceil(16) * 16
}

fn conv_s2_out(h: usize) -> usize {
    (h - 1) / 2 + 1
}

/// Reflect (bounce) index into [0, n).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * n - 2;
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Pad to multiples of 16 (bottom/right, reflected) and scale to [0,1].
fn padded_input(image: &RgbImage) -> TensorData<f64> {
    let (h, w) = (image.height, image.width);
    let (hp, wp) = (round_up_16(h), round_up_16(w));
    let mut data = vec![0.0f64; 3 * hp * wp];
    for y in 0..hp {
        for x in 0..wp {
            let px = image.pixel(reflect(x, w), reflect(y, h));
            for c in 0..3 {
                data[c * hp * wp + y * wp + x] = px[c] as f64 / 255.0;
            }
        }
    }
    TensorData::new(vec![1, 3, hp, wp], data).unwrap()
}

/// CDFs repeat heavily when sigma saturates at the floor; build each
/// distinct sigma once.
struct SigmaCdfCache {
    map: HashMap<u64, usize>,
    cdfs: Vec<QuantizedCdf>,
}

impl SigmaCdfCache {
    fn new() -> Self {
        SigmaCdfCache {
            map: HashMap::new(),
            cdfs: Vec::new(),
        }
    }

    fn index_for(&mut self, sigma: f64) -> PipelineResult<usize> {
        if let Some(&i) = self.map.get(&sigma.to_bits()) {
            return Ok(i);
        }
        let cdf = build_symbol_cdf(sigma, RESIDUAL_CLAMP, PRECISION)?;
        self.cdfs.push(cdf);
        let i = self.cdfs.len() - 1;
        self.map.insert(sigma.to_bits(), i);
        Ok(i)
    }
}

fn z_channel_cdfs(trained: &TrainedModel<f64>) -> PipelineResult<Vec<QuantizedCdf>> {
    let eval = FactorizedEval::new(
        trained.model.config.hyper_channels,
        &trained.model.factorized_data(),
    )?;
    (0..eval.channels())
        .map(|c| Ok(build_factorized_cdf(&eval, c, RESIDUAL_CLAMP, PRECISION)?))
        .collect()
}

struct StageIo<'a> {
    model: &'a cca_core::network::Model<f64>,
    bind: &'a Binding<f64>,
    tape: &'a Tape<f64>,
    cache: SigmaCdfCache,
}

impl<'a> StageIo<'a> {
    /// Entropy parameters for stage i given the decoded context.
    fn stage_params(
        &self,
        i: usize,
        hyper: &Tensor<f64>,
        ctx: &[Tensor<f64>],
    ) -> PipelineResult<(Vec<f64>, Vec<f64>, Vec<usize>)> {
        let refs: Vec<&Tensor<f64>> = ctx.iter().collect();
        let p = self.model.entropy_major(self.bind, i, hyper, &refs)?;
        let shape = p.mu.shape();
        Ok((p.mu.value(), p.sigma.value(), shape))
    }

    fn refine(
        &self,
        i: usize,
        hyper: &Tensor<f64>,
        ctx: &[Tensor<f64>],
        raw: TensorData<f64>,
    ) -> PipelineResult<Tensor<f64>> {
        let refs: Vec<&Tensor<f64>> = ctx.iter().collect();
        let leaf = self.tape.leaf(raw, false)?;
        Ok(self.model.lrp_refine(self.bind, i, hyper, &refs, &leaf)?)
    }
}

/// Compress an 8-bit RGB image to a container, with encoder statistics.
pub fn compress(
    trained: &TrainedModel<f64>,
    image: &RgbImage,
) -> PipelineResult<(BitstreamContainer, CompressStats)> {
    if image.width > u32::MAX as usize || image.height > u32::MAX as usize {
        return Err(PipelineError::Invalid("image dimensions exceed u32".into()));
    }
    let model = &trained.model;
    let tape: Tape<f64> = Tape::new();
    let bind = model.bind(&tape, false)?;

    let x = tape.leaf(padded_input(image), false)?;
    let y = model.analysis(&bind, &x)?;
    let z = model.hyper_analysis(&bind, &y)?;

    // Hyperprior payload under the factorized per-channel CDFs.
    let z_cdfs = z_channel_cdfs(trained)?;
    let zshape = z.shape();
    let z_spatial = zshape[2] * zshape[3];
    let z_vals = z.value();
    let mut saturated = 0u64;
    let mut bits_z = 0.0f64;
    let mut z_slots = Vec::with_capacity(z_vals.len());
    let mut z_refs: Vec<&QuantizedCdf> = Vec::with_capacity(z_vals.len());
    let mut z_hat_vals = Vec::with_capacity(z_vals.len());
    for (e, &v) in z_vals.iter().enumerate() {
        let cdf = &z_cdfs[e / z_spatial];
        let r = v.round_ties_even().clamp(i32::MIN as f64, i32::MAX as f64) as i32;
        let (slot, clamped) = cdf.slot_for(r);
        saturated += clamped as u64;
        bits_z += cdf.bits_of(slot);
        z_slots.push(slot);
        z_refs.push(cdf);
        z_hat_vals.push(cdf.value_of(slot) as f64);
    }
    let z_payload = rc_encode(&z_slots, &z_refs)?;
    let z_hat = TensorData::new(zshape.clone(), z_hat_vals)?;

    // Latent slices, conditioning on the replayed decoded context.
    let z_hat_leaf = tape.leaf(z_hat.clone(), false)?;
    let yshape = y.shape();
    let hyper = model.hyper_synthesis(&bind, &z_hat_leaf, yshape[2], yshape[3])?;
    let y_slices = y.split_channels(&model.schedule.counts)?;
    let mut io = StageIo {
        model,
        bind: &bind,
        tape: &tape,
        cache: SigmaCdfCache::new(),
    };
    let mut ctx: Vec<Tensor<f64>> = Vec::new();
    let mut slice_payloads = Vec::new();
    let mut bits_slices = Vec::new();
    for i in 1..=model.stages() {
        let (mu, sigma, sshape) = io.stage_params(i, &hyper, &ctx)?;
        let yv = y_slices[i - 1].value();
        let mut slots = Vec::with_capacity(yv.len());
        let mut cdf_idx = Vec::with_capacity(yv.len());
        let mut raw_vals = Vec::with_capacity(yv.len());
        let mut bits = 0.0f64;
        for e in 0..yv.len() {
            let ci = io.cache.index_for(sigma[e])?;
            let r = (yv[e] - mu[e])
                .round_ties_even()
                .clamp(i32::MIN as f64, i32::MAX as f64) as i32;
            let (slot, clamped) = io.cache.cdfs[ci].slot_for(r);
            saturated += clamped as u64;
            bits += io.cache.cdfs[ci].bits_of(slot);
            slots.push(slot);
            cdf_idx.push(ci);
            raw_vals.push(io.cache.cdfs[ci].value_of(slot) as f64 + mu[e]);
        }
        let refs: Vec<&QuantizedCdf> = cdf_idx.iter().map(|&ci| &io.cache.cdfs[ci]).collect();
        slice_payloads.push(rc_encode(&slots, &refs)?);
        bits_slices.push(bits);
        let refined = io.refine(i, &hyper, &ctx, TensorData::new(sshape, raw_vals)?)?;
        ctx.push(refined);
    }

    let ctx_refs: Vec<&Tensor<f64>> = ctx.iter().collect();
    let y_hat = cca_core::concat_channels(&tape, &ctx_refs)?.data();

    let container = BitstreamContainer {
        profile_id: model.config.profile.id(),
        lambda_index: trained.lambda_index(),
        height: image.height as u32,
        width: image.width as u32,
        model_checksum: trained.checksum(),
        z_payload,
        slice_payloads,
    };
    Ok((
        container,
        CompressStats {
            estimated_bits_z: bits_z,
            estimated_bits_slices: bits_slices,
            saturated_symbols: saturated,
            y_hat,
            z_hat,
        },
    ))
}

/// Decompress a container; errors on checksum or payload corruption.
pub fn decompress(
    trained: &TrainedModel<f64>,
    container: &BitstreamContainer,
) -> PipelineResult<RgbImage> {
    Ok(decompress_with_latents(trained, container)?.0)
}

pub fn decompress_with_latents(
    trained: &TrainedModel<f64>,
    container: &BitstreamContainer,
) -> PipelineResult<(RgbImage, DecodedLatents)> {
    let model = &trained.model;
    let expected = trained.checksum();
    if container.model_checksum != expected {
        return Err(PipelineError::Codec(CodecError::ChecksumMismatch {
            container: container.model_checksum,
            model: expected,
        }));
    }
    if container.profile_id != model.config.profile.id() {
        return Err(PipelineError::Invalid(format!(
            "container profile {} does not match model profile {}",
            container.profile_id,
            model.config.profile.id()
        )));
    }
    if container.slice_payloads.len() != model.stages() {
        return Err(PipelineError::Invalid(format!(
            "container has {} slices, model decodes {}",
            container.slice_payloads.len(),
            model.stages()
        )));
    }
    let (h, w) = (container.height as usize, container.width as usize);
    if h == 0 || w == 0 {
        return Err(PipelineError::Invalid("empty image dimensions".into()));
    }
    let (hp, wp) = (round_up_16(h), round_up_16(w));
    let (yh, yw) = (hp / 16, wp / 16);
    let (zh, zw) = (conv_s2_out(conv_s2_out(yh)), conv_s2_out(conv_s2_out(yw)));

    let tape: Tape<f64> = Tape::new();
    let bind = model.bind(&tape, false)?;

    // Hyperprior.
    let z_cdfs = z_channel_cdfs(trained)?;
    let cz = model.config.hyper_channels;
    let z_spatial = zh * zw;
    let mut dec = RansDecoder::new(&container.z_payload)?;
    let mut z_hat_vals = Vec::with_capacity(cz * z_spatial);
    for e in 0..cz * z_spatial {
        let cdf = &z_cdfs[e / z_spatial];
        let slot = dec.decode(cdf)?;
        z_hat_vals.push(cdf.value_of(slot) as f64);
    }
    dec.finish()?;
    let z_hat = TensorData::new(vec![1, cz, zh, zw], z_hat_vals)?;

    let z_hat_leaf = tape.leaf(z_hat.clone(), false)?;
    let hyper = model.hyper_synthesis(&bind, &z_hat_leaf, yh, yw)?;
    let mut io = StageIo {
        model,
        bind: &bind,
        tape: &tape,
        cache: SigmaCdfCache::new(),
    };
    let mut ctx: Vec<Tensor<f64>> = Vec::new();
    for i in 1..=model.stages() {
        let (mu, sigma, sshape) = io.stage_params(i, &hyper, &ctx)?;
        let mut dec = RansDecoder::new(&container.slice_payloads[i - 1])?;
        let mut raw_vals = Vec::with_capacity(mu.len());
        for e in 0..mu.len() {
            let ci = io.cache.index_for(sigma[e])?;
            let slot = dec.decode(&io.cache.cdfs[ci])?;
            raw_vals.push(io.cache.cdfs[ci].value_of(slot) as f64 + mu[e]);
        }
        dec.finish()?;
        let refined = io.refine(i, &hyper, &ctx, TensorData::new(sshape, raw_vals)?)?;
        ctx.push(refined);
    }

    let ctx_refs: Vec<&Tensor<f64>> = ctx.iter().collect();
    let y_hat_full = cca_core::concat_channels(&tape, &ctx_refs)?;
    let x_hat = model.synthesis(&bind, &y_hat_full)?;
    let cropped = x_hat.crop_spatial(0, 0, h, w)?;
    let scaled = cropped.scale(255.0)?;
    let image = RgbImage::from_tensor(&scaled.data())?;
    Ok((
        image,
        DecodedLatents {
            y_hat: y_hat_full.data(),
            z_hat,
        },
    ))
}
