//! Paired-training ablation: CCA on/off and uneven/even grouping,
//! trained across rate points and seeds on a fixed synthetic corpus,
//! compared by BD-rate and early-slice information share.
//!
//! This is the long-running verification job; checkpoints cache under
//! the output directory so interrupted runs resume.

use std::path::PathBuf;

use cca_core::loss::CcaSign;
use cca_core::network::Profile;
use cca_pipeline::{
    load_checkpoint, save_checkpoint, synth_corpus, synth_image, CropSampler, PipelineError,
    PipelineResult, RgbImage, TrainConfig, Trainer, TrainedModel,
};

use crate::eval::{bd_rate_with_min_points, info_distribution, rd_sweep, RdPoint};

#[derive(Debug, Clone)]
pub struct AblationSpec {
    pub steps: usize,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub corpus_images: usize,
    pub corpus_seed: u64,
    pub crop: usize,
    pub batch: usize,
    pub eval_images: usize,
    pub out_dir: PathBuf,
    pub verbose: bool,
}

impl AblationSpec {
    /// The acceptance protocol: toy profile, n=3, k=1.7, crop 64,
    /// 20k steps, lambdas {0.85, 1.8, 3.5}, 3 seeds, ~200-image corpus.
    pub fn acceptance(out_dir: PathBuf) -> Self {
        AblationSpec {
            steps: 20_000,
            lambdas: vec![0.85, 1.8, 3.5],
            seeds: vec![11, 22, 33],
            corpus_images: 200,
            corpus_seed: 0xC0FFEE,
            crop: 64,
            batch: 8,
            eval_images: 24,
            out_dir,
            verbose: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    UnevenCca,
    UnevenBase,
    EvenCca,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::UnevenCca => "uneven_cca",
            Variant::UnevenBase => "uneven_base",
            Variant::EvenCca => "even_cca",
        }
    }

    fn schedule_k(self) -> f64 {
        match self {
            Variant::EvenCca => 0.0,
            _ => 1.7,
        }
    }

    fn cca(self) -> bool {
        !matches!(self, Variant::UnevenBase)
    }
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    /// (lambda, seed) -> slice-1 payload share, CCA on vs off.
    pub share1_on: Vec<(f64, u64, f64)>,
    pub share1_off: Vec<(f64, u64, f64)>,
    /// Per-seed BD-rate of CCA-trained vs baseline (negative: CCA wins).
    pub bd_cca_per_seed: Vec<(u64, f64)>,
    /// Per-seed BD-rate of uneven (k=1.7) vs even (k=0), both CCA-on.
    pub bd_uneven_per_seed: Vec<(u64, f64)>,
}

impl AblationOutcome {
    pub fn share1_majority_for_cca(&self) -> (usize, usize) {
        let mut wins = 0;
        let total = self.share1_on.len();
        for ((l, s, on), (l2, s2, off)) in self.share1_on.iter().zip(&self.share1_off) {
            debug_assert_eq!((l, s), (l2, s2));
            if on > off {
                wins += 1;
            }
        }
        (wins, total)
    }

    pub fn mean_bd_cca(&self) -> f64 {
        self.bd_cca_per_seed.iter().map(|(_, b)| b).sum::<f64>()
            / self.bd_cca_per_seed.len() as f64
    }

    pub fn mean_bd_uneven(&self) -> f64 {
        self.bd_uneven_per_seed.iter().map(|(_, b)| b).sum::<f64>()
            / self.bd_uneven_per_seed.len() as f64
    }
}

fn train_config(spec: &AblationSpec, variant: Variant, lambda: f64, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::toy_preset();
    cfg.seed = seed;
    cfg.steps = spec.steps;
    cfg.batch_size = spec.batch;
    cfg.crop_size = spec.crop;
    cfg.lr_drop_step = spec.steps * 9 / 10;
    cfg.lambda = lambda;
    cfg.cca_enabled = variant.cca();
    cfg.cca_sign = CcaSign::MaximizeGain;
    cfg.schedule_n = 3;
    cfg.schedule_k = variant.schedule_k();
    cfg.profile = Profile::Toy;
    cfg
}

fn run_name(spec: &AblationSpec, variant: Variant, lambda: f64, seed: u64) -> String {
    format!(
        "{}_l{}_s{}_t{}.ccaw",
        variant.label(),
        lambda,
        seed,
        spec.steps
    )
}

/// Train (or load the cached checkpoint of) one ablation run.
pub fn train_run(
    spec: &AblationSpec,
    variant: Variant,
    lambda: f64,
    seed: u64,
) -> PipelineResult<TrainedModel<f64>> {
    std::fs::create_dir_all(&spec.out_dir).map_err(|e| PipelineError::Io {
        path: spec.out_dir.display().to_string(),
        source: e,
    })?;
    let path = spec.out_dir.join(run_name(spec, variant, lambda, seed));
    if path.exists() {
        return load_checkpoint(&path);
    }
    let images = synth_corpus(spec.corpus_seed, spec.corpus_images, 96, 96);
    let sampler = CropSampler::from_images(images, spec.crop, seed ^ 0x5A11)?;
    let cfg = train_config(spec, variant, lambda, seed);
    let mut trainer = Trainer::new(cfg, sampler)?;
    let started = std::time::Instant::now();
    trainer.run(|step, report| {
        if spec.verbose && (step % 500 == 0 || step == spec.steps) {
            eprintln!(
                "[{} l={lambda} seed={seed}] step {step}/{}: rate {:.4} D {:.2} cca {:.4} ({:.0}s)",
                variant.label(),
                spec.steps,
                report.rate_y + report.rate_z,
                report.distortion,
                report.cca,
                started.elapsed().as_secs_f64(),
            );
        }
    })?;
    let trained = trainer.trained();
    save_checkpoint(&path, &trained)?;
    Ok(trained)
}

/// Held-out evaluation set, disjoint from the training corpus by seed.
pub fn heldout_images(spec: &AblationSpec) -> Vec<RgbImage> {
    (0..spec.eval_images)
        .map(|i| {
            synth_image(
                cca_core::rng::derive_key(&[spec.corpus_seed ^ 0xE7A1, i as u64]),
                96,
                96,
            )
        })
        .collect()
}

/// Execute the full protocol. With the acceptance spec this is the
/// multi-CPU-hour job; smaller specs give directional pilots.
pub fn run_ablation(spec: &AblationSpec) -> PipelineResult<AblationOutcome> {
    let eval_set = heldout_images(spec);
    let mut share1_on = Vec::new();
    let mut share1_off = Vec::new();
    let mut bd_cca_per_seed = Vec::new();
    let mut bd_uneven_per_seed = Vec::new();

    for &seed in &spec.seeds {
        let mut curves: std::collections::HashMap<Variant, Vec<RdPoint>> =
            std::collections::HashMap::new();
        for variant in [Variant::UnevenCca, Variant::UnevenBase, Variant::EvenCca] {
            let mut models = Vec::new();
            for &lambda in &spec.lambdas {
                let trained = train_run(spec, variant, lambda, seed)?;
                if variant != Variant::EvenCca {
                    let dist = info_distribution(&trained, &eval_set)?;
                    let row = (lambda, seed, dist.slice_shares[0]);
                    if variant == Variant::UnevenCca {
                        share1_on.push(row);
                    } else {
                        share1_off.push(row);
                    }
                }
                models.push((
                    lambda,
                    trained,
                    format!("{}_s{}", variant.label(), seed),
                ));
            }
            curves.insert(variant, rd_sweep(&models, &eval_set)?);
        }
        let bd_cca = bd_rate_with_min_points(
            &curves[&Variant::UnevenBase],
            &curves[&Variant::UnevenCca],
            3,
        )?;
        let bd_uneven = bd_rate_with_min_points(
            &curves[&Variant::EvenCca],
            &curves[&Variant::UnevenCca],
            3,
        )?;
        if spec.verbose {
            eprintln!(
                "[seed {seed}] BD(cca vs base) {bd_cca:.2}%  BD(uneven vs even) {bd_uneven:.2}%"
            );
        }
        bd_cca_per_seed.push((seed, bd_cca));
        bd_uneven_per_seed.push((seed, bd_uneven));
    }

    Ok(AblationOutcome {
        share1_on,
        share1_off,
        bd_cca_per_seed,
        bd_uneven_per_seed,
    })
}
