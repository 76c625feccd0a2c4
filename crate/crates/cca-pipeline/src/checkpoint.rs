//! The `.ccaw` checkpoint format.
//!
//! Little-endian throughout: magic "CCAW" | version u8 | profile u8 |
//! entries | trailing FNV-1a u64 over all prior bytes. Each entry is
//! name length u16, UTF-8 name, dtype u8, rank u8, dims u32 each, then
//! the raw values. Model parameters appear in builder order followed by
//! `meta.*` scalars carrying lambda and the architecture, so a file
//! reconstructs its model exactly.

use std::path::Path;

use cca_codec::fnv1a64;
use cca_core::network::{Model, ModelConfig, Profile};
use cca_core::{Dtype, Scalar};

use crate::error::{io_err, PipelineError, PipelineResult};

pub const CKPT_MAGIC: [u8; 4] = *b"CCAW";
pub const CKPT_VERSION: u8 = 1;

/// A model plus the rate multiplier it was trained for.
pub struct TrainedModel<S: Scalar> {
    pub model: Model<S>,
    pub lambda: f64,
}

impl<S: Scalar> TrainedModel<S> {
    pub fn new(model: Model<S>, lambda: f64) -> Self {
        TrainedModel { model, lambda }
    }

    /// Index of lambda in the supported rate points, 255 otherwise.
    pub fn lambda_index(&self) -> u8 {
        cca_core::loss::SUPPORTED_LAMBDAS
            .iter()
            .position(|&l| (l - self.lambda).abs() < 1e-12)
            .map(|i| i as u8)
            .unwrap_or(255)
    }

    /// FNV-1a over the canonical serialization (the checkpoint trailer).
    pub fn checksum(&self) -> u64 {
        fnv1a64(&serialize_body(self))
    }
}

fn meta_entries<S: Scalar>(t: &TrainedModel<S>) -> Vec<(String, f64)> {
    let c = &t.model.config;
    vec![
        ("meta.lambda".into(), t.lambda),
        ("meta.image_channels".into(), c.image_channels as f64),
        ("meta.latent_channels".into(), c.latent_channels as f64),
        ("meta.hyper_channels".into(), c.hyper_channels as f64),
        ("meta.stages".into(), c.stages as f64),
        ("meta.schedule_k".into(), c.schedule_k),
        ("meta.dim0".into(), c.dims[0] as f64),
        ("meta.dim1".into(), c.dims[1] as f64),
        ("meta.dim2".into(), c.dims[2] as f64),
        ("meta.res_blocks".into(), c.res_blocks as f64),
        ("meta.gated_blocks".into(), c.gated_blocks as f64),
        ("meta.entropy_width".into(), c.entropy_width as f64),
        ("meta.entropy_blocks".into(), c.entropy_blocks as f64),
        ("meta.sigma_floor".into(), c.sigma_floor),
        ("meta.likelihood_floor".into(), c.likelihood_floor),
    ]
}

fn push_entry_header(out: &mut Vec<u8>, name: &str, dtype: Dtype, dims: &[usize]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dtype.code());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn serialize_body<S: Scalar>(t: &TrainedModel<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CKPT_MAGIC);
    out.push(CKPT_VERSION);
    out.push(t.model.config.profile.id());
    for p in &t.model.params {
        push_entry_header(&mut out, &p.name, S::DTYPE, &p.shape);
        for &v in p.data.iter() {
            v.write_le(&mut out);
        }
    }
    for (name, value) in meta_entries(t) {
        push_entry_header(&mut out, &name, Dtype::F64, &[1]);
        out.extend_from_slice(&value.to_le_bytes());
    }
    out
}

pub fn save_checkpoint<S: Scalar>(path: &Path, t: &TrainedModel<S>) -> PipelineResult<()> {
    let mut body = serialize_body(t);
    let sum = fnv1a64(&body);
    body.extend_from_slice(&sum.to_le_bytes());
    std::fs::write(path, body).map_err(|e| io_err(path, e))
}

struct Entry {
    name: String,
    dtype: Dtype,
    dims: Vec<usize>,
    data_offset: usize,
    data_len_bytes: usize,
}

fn parse_entries(bytes: &[u8]) -> PipelineResult<(u8, Vec<Entry>)> {
    let err = |m: String| PipelineError::Checkpoint(m);
    if bytes.len() < 4 + 1 + 1 + 8 {
        return Err(err("file too short".into()));
    }
    if bytes[0..4] != CKPT_MAGIC {
        return Err(err(format!("bad magic {:02x?}", &bytes[0..4])));
    }
    if bytes[4] != CKPT_VERSION {
        return Err(err(format!("unsupported version {}", bytes[4])));
    }
    let profile = bytes[5];
    let body_end = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = fnv1a64(&bytes[..body_end]);
    if stored != computed {
        return Err(err(format!(
            "checksum mismatch: stored {stored:016x}, computed {computed:016x}"
        )));
    }
    let mut entries = Vec::new();
    let mut pos = 6usize;
    while pos < body_end {
        if pos + 2 > body_end {
            return Err(err("truncated entry header".into()));
        }
        let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        if pos + name_len + 2 > body_end {
            return Err(err("truncated entry name".into()));
        }
        let name = std::str::from_utf8(&bytes[pos..pos + name_len])
            .map_err(|_| err("entry name is not UTF-8".into()))?
            .to_string();
        pos += name_len;
        let dtype = Dtype::from_code(bytes[pos])
            .ok_or_else(|| err(format!("unknown dtype {}", bytes[pos])))?;
        let rank = bytes[pos + 1] as usize;
        pos += 2;
        if pos + 4 * rank > body_end {
            return Err(err("truncated dims".into()));
        }
        let mut dims = Vec::with_capacity(rank);
        for i in 0..rank {
            dims.push(u32::from_le_bytes(bytes[pos + 4 * i..pos + 4 * i + 4].try_into().unwrap())
                as usize);
        }
        pos += 4 * rank;
        let n: usize = dims.iter().product();
        let len_bytes = n * dtype.byte_width();
        if pos + len_bytes > body_end {
            return Err(err(format!("entry {name} data truncated")));
        }
        entries.push(Entry {
            name,
            dtype,
            dims,
            data_offset: pos,
            data_len_bytes: len_bytes,
        });
        pos += len_bytes;
    }
    Ok((profile, entries))
}

fn meta_value(bytes: &[u8], entries: &[Entry], name: &str) -> PipelineResult<f64> {
    let e = entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| PipelineError::Checkpoint(format!("missing {name}")))?;
    if e.dtype != Dtype::F64 || e.dims != vec![1] {
        return Err(PipelineError::Checkpoint(format!("{name} must be a scalar f64")));
    }
    Ok(f64::from_le_bytes(
        bytes[e.data_offset..e.data_offset + 8].try_into().unwrap(),
    ))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> PipelineResult<TrainedModel<S>> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    load_checkpoint_bytes(&bytes)
}

pub fn load_checkpoint_bytes<S: Scalar>(bytes: &[u8]) -> PipelineResult<TrainedModel<S>> {
    let (profile_id, entries) = parse_entries(bytes)?;
    let profile = Profile::from_id(profile_id)
        .ok_or_else(|| PipelineError::Checkpoint(format!("unknown profile id {profile_id}")))?;
    let m = |n: &str| meta_value(bytes, &entries, n);
    let config = ModelConfig {
        profile,
        image_channels: m("meta.image_channels")? as usize,
        latent_channels: m("meta.latent_channels")? as usize,
        hyper_channels: m("meta.hyper_channels")? as usize,
        stages: m("meta.stages")? as usize,
        schedule_k: m("meta.schedule_k")?,
        dims: [
            m("meta.dim0")? as usize,
            m("meta.dim1")? as usize,
            m("meta.dim2")? as usize,
        ],
        res_blocks: m("meta.res_blocks")? as usize,
        gated_blocks: m("meta.gated_blocks")? as usize,
        entropy_width: m("meta.entropy_width")? as usize,
        entropy_blocks: m("meta.entropy_blocks")? as usize,
        sigma_floor: m("meta.sigma_floor")?,
        likelihood_floor: m("meta.likelihood_floor")?,
    };
    let lambda = m("meta.lambda")?;
    let mut model: Model<S> = Model::new(config, 0)?;
    let mut by_name: std::collections::HashMap<&str, &Entry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    for p in model.params.iter_mut() {
        let e = by_name.remove(p.name.as_str()).ok_or_else(|| {
            PipelineError::Checkpoint(format!("missing parameter {}", p.name))
        })?;
        if e.dims != p.shape {
            return Err(PipelineError::Checkpoint(format!(
                "parameter {} has shape {:?}, expected {:?}",
                p.name, e.dims, p.shape
            )));
        }
        if e.dtype != S::DTYPE {
            return Err(PipelineError::Checkpoint(format!(
                "parameter {} stored as {:?}, expected {:?}",
                p.name, e.dtype, S::DTYPE
            )));
        }
        let w = S::DTYPE.byte_width();
        let data: Vec<S> = (0..e.data_len_bytes / w)
            .map(|i| S::read_le(&bytes[e.data_offset + i * w..]))
            .collect();
        p.data = std::sync::Arc::new(data);
    }
    for leftover in by_name.keys() {
        if !leftover.starts_with("meta.") {
            return Err(PipelineError::Checkpoint(format!(
                "unexpected parameter entry {leftover}"
            )));
        }
    }
    Ok(TrainedModel { model, lambda })
}
