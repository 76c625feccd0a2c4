//! Training-loop contracts: determinism, gradient routing between the
//! major and auxiliary objectives, CCA gating and checkpoint identity.

use cca_core::loss::CcaSign;
use cca_core::network::{Model, ModelConfig, ParamGroup, Profile};
use cca_pipeline::{
    forward_item, noise_keys, save_checkpoint, synth_corpus, synth_image, CropSampler,
    LossSelect, StepMode, StepSettings, TrainConfig, Trainer,
};

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        profile: Profile::Custom,
        latent_channels: 8,
        hyper_channels: 4,
        stages: 3,
        dims: [4, 4, 4],
        res_blocks: 1,
        gated_blocks: 1,
        entropy_width: 4,
        entropy_blocks: 1,
        ..ModelConfig::toy()
    }
}

fn settings(cca_enabled: bool, select: LossSelect) -> StepSettings {
    StepSettings {
        lambda: 0.85,
        cca_enabled,
        cca_sign: CcaSign::MaximizeGain,
        likelihood_floor: 1e-9,
        loss_select: select,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn gradient_routing_between_major_and_auxiliary() {
    let model: Model<f64> = Model::new(tiny_model_config(), 99).unwrap();
    let crop = synth_image(1, 32, 32).to_tensor();
    let (kz, ky) = noise_keys(7, 0, 0);

    // CCA term alone: gradients reach encoder-side parameters but the
    // auxiliary networks receive exactly zero.
    let cca_only = forward_item(
        &model,
        &crop,
        &settings(true, LossSelect::CcaOnly),
        kz,
        ky,
        StepMode::Train { batch_scale: 1.0 },
    )
    .unwrap();
    let mut encoder_touched = 0.0;
    for (p, g) in model.params.iter().zip(&cca_only.grads) {
        match p.group {
            ParamGroup::Aux(_) => assert!(
                g.iter().all(|&v| v == 0.0),
                "cca loss leaked into aux param {}",
                p.name
            ),
            ParamGroup::Analysis | ParamGroup::HyperAnalysis | ParamGroup::HyperSynthesis => {
                encoder_touched += norm(g)
            }
            _ => {}
        }
    }
    assert!(encoder_touched > 0.0, "cca loss did not reach the encoder");

    // Aux term alone: only auxiliary parameters move.
    let aux_only = forward_item(
        &model,
        &crop,
        &settings(true, LossSelect::AuxOnly),
        kz,
        ky,
        StepMode::Train { batch_scale: 1.0 },
    )
    .unwrap();
    let mut aux_touched = 0.0;
    for (p, g) in model.params.iter().zip(&aux_only.grads) {
        if p.group.is_aux() {
            aux_touched += norm(g);
        } else {
            assert!(
                g.iter().all(|&v| v == 0.0),
                "aux loss leaked into {}",
                p.name
            );
        }
    }
    assert!(aux_touched > 0.0, "aux loss reached no auxiliary parameter");
}

#[test]
fn cca_gate_zeroes_report_and_keeps_aux_training() {
    let model: Model<f64> = Model::new(tiny_model_config(), 17).unwrap();
    let crop = synth_image(2, 32, 32).to_tensor();
    let (kz, ky) = noise_keys(11, 0, 0);

    let off = forward_item(
        &model,
        &crop,
        &settings(false, LossSelect::All),
        kz,
        ky,
        StepMode::Train { batch_scale: 1.0 },
    )
    .unwrap();
    assert_eq!(off.report.cca, 0.0);
    assert!(off.report.aux > 0.0);

    // With CCA off, aux parameters still receive exactly the L_Aux
    // gradient and nothing else.
    let aux_only = forward_item(
        &model,
        &crop,
        &settings(false, LossSelect::AuxOnly),
        kz,
        ky,
        StepMode::Train { batch_scale: 1.0 },
    )
    .unwrap();
    for (i, p) in model.params.iter().enumerate() {
        if p.group.is_aux() {
            for (a, b) in off.grads[i].iter().zip(&aux_only.grads[i]) {
                assert!(
                    (a - b).abs() < 1e-12,
                    "aux param {} gradient differs from pure L_Aux",
                    p.name
                );
            }
        }
    }

    let on = forward_item(
        &model,
        &crop,
        &settings(true, LossSelect::All),
        kz,
        ky,
        StepMode::Train { batch_scale: 1.0 },
    )
    .unwrap();
    assert!(on.report.cca != 0.0);
    // Sign switch flips exactly the CCA component.
    let lit = forward_item(
        &model,
        &crop,
        &StepSettings {
            cca_sign: CcaSign::Literal,
            ..settings(true, LossSelect::All)
        },
        kz,
        ky,
        StepMode::Train { batch_scale: 1.0 },
    )
    .unwrap();
    assert!((lit.report.cca + on.report.cca).abs() < 1e-12);
    assert!((lit.report.rate_y - on.report.rate_y).abs() < 1e-12);
    assert!((lit.report.aux - on.report.aux).abs() < 1e-12);
    assert!((lit.report.distortion - on.report.distortion).abs() < 1e-12);
}

#[test]
fn identical_configs_give_identical_checkpoints_and_reports() {
    let run = || {
        let imgs = synth_corpus(5, 6, 48, 48);
        let sampler = CropSampler::from_images(imgs, 32, 9).unwrap();
        let mut cfg = TrainConfig::toy_preset();
        cfg.steps = 6;
        cfg.batch_size = 2;
        cfg.crop_size = 32;
        cfg.seed = 1234;
        let mut tr = Trainer::new(cfg, sampler).unwrap();
        let mut reports = Vec::new();
        for _ in 0..6 {
            reports.push(tr.train_step().unwrap());
        }
        (tr.trained(), reports)
    };
    let (t1, r1) = run();
    let (t2, r2) = run();
    for (a, b) in r1.iter().zip(&r2) {
        assert_eq!(a, b, "loss reports diverged");
    }
    let dir = std::env::temp_dir().join("cca_train_det");
    std::fs::create_dir_all(&dir).unwrap();
    let p1 = dir.join("a.ccaw");
    let p2 = dir.join("b.ccaw");
    save_checkpoint(&p1, &t1).unwrap();
    save_checkpoint(&p2, &t2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn total_recomposes_and_report_is_finite() {
    let imgs = synth_corpus(6, 4, 48, 48);
    let sampler = CropSampler::from_images(imgs, 32, 5).unwrap();
    let mut cfg = TrainConfig::toy_preset();
    cfg.steps = 2;
    cfg.batch_size = 2;
    cfg.crop_size = 32;
    let mut tr = Trainer::new(cfg, sampler).unwrap();
    for _ in 0..2 {
        let r = tr.train_step().unwrap();
        assert!((r.total - r.recompose()).abs() < 1e-12);
        for v in [r.rate_y, r.rate_z, r.distortion, r.aux] {
            assert!(v.is_finite() && v >= 0.0);
        }
    }
}

#[test]
fn overfit_single_image_drops_distortion_10x() {
    // Single crop, toy profile, 2000 steps: the decisive smoke test that
    // the whole gradient/optimizer stack optimizes what it should.
    let img = synth_image(424242, 32, 32);
    let sampler = CropSampler::from_images(vec![img], 32, 3).unwrap();
    let mut cfg = TrainConfig::toy_preset();
    cfg.crop_size = 32;
    cfg.batch_size = 1;
    cfg.steps = 2000;
    cfg.seed = 5;
    let mut tr = Trainer::new(cfg, sampler).unwrap();
    let first = tr.train_step().unwrap();
    let mut last = first;
    for _ in 1..2000 {
        last = tr.train_step().unwrap();
    }
    assert!(
        last.distortion * 10.0 <= first.distortion,
        "step1 D {} vs final D {}",
        first.distortion,
        last.distortion
    );
}

#[test]
fn toy_parameter_count_matches_shape_arithmetic() {
    // Independent shape-sum oracle for the toy profile, derived from the
    // architecture rules rather than the builder.
    let cfg = ModelConfig::toy();
    let model: Model<f64> = Model::new(cfg.clone(), 1).unwrap();
    let schedule = cfg.schedule().unwrap();

    let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
    let dw = |c: usize, k: usize| c * k * k + c;
    let ln = |c: usize| 2 * c;
    let res_block = |c: usize| 2 * conv(c, c, 3);
    let naf_block = |c: usize| {
        ln(c) + conv(c, 2 * c, 1) + dw(2 * c, 3) + conv(c, c, 1) /* sca */
            + conv(c, c, 1) /* proj1 */
            + ln(c) + conv(c, 2 * c, 1) + conv(c, c, 1) /* proj2 */
    };
    let level = |c: usize| cfg.res_blocks * res_block(c) + cfg.gated_blocks * naf_block(c);
    let [d0, d1, d2] = cfg.dims;
    let m = cfg.latent_channels;

    let ga = conv(3, d0, 5) + level(d0) + conv(d0, d1, 5) + level(d1) + conv(d1, d2, 5)
        + level(d2) + conv(d2, m, 5);
    let gs = conv(m, d2, 5) + level(d2) + conv(d2, d1, 5) + level(d1) + conv(d1, d0, 5)
        + level(d0) + conv(d0, 3, 5);
    let ha = conv(m, d2, 5) + conv(d2, cfg.hyper_channels, 5);
    let hs = conv(cfg.hyper_channels, d2, 5) + conv(d2, 2 * m, 5);

    // Factorized density: widths 1-3-3-3-1 per hyper channel with
    // h/b/a per gated layer and h/b on the final projection.
    let cz = cfg.hyper_channels;
    let fd = cz * ((3 + 3 + 3) + (9 + 3 + 3) + (9 + 3 + 3) + (3 + 1));

    let w = cfg.entropy_width;
    let mut entropy = 0usize;
    for i in 1..=cfg.stages {
        let slice = schedule.counts[i - 1];
        let ctx = schedule.prefix(i - 1);
        let net = |inputs: usize| {
            conv(inputs, w, 1) + cfg.entropy_blocks * naf_block(w) + conv(w, 2 * slice, 1)
        };
        entropy += net(2 * m + ctx); // major
        if i >= 2 {
            entropy += net(2 * m + schedule.prefix(i - 2)); // auxiliary
        }
        entropy += conv(2 * m + ctx + slice, w, 3) + conv(w, slice, 1); // LRP
    }

    let expected = ga + gs + ha + hs + fd + entropy;
    assert_eq!(model.param_count(), expected);
}
