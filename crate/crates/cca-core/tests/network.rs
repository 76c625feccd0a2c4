//! Network contracts: shapes, causality of the stage conditioning, the
//! auxiliary models' strict-subset context, LRP bounds and determinism.

use cca_core::entropy::gaussian_likelihood;
use cca_core::network::{Model, ModelConfig, Profile};
use cca_core::rng;
use cca_core::{Tape, Tensor, TensorData};

fn toy_model() -> Model<f64> {
    Model::new(ModelConfig::toy(), 2024).unwrap()
}

fn rand4(tape: &Tape<f64>, shape: Vec<usize>, key: u64, spread: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    tape.leaf(
        TensorData::new(
            shape,
            (0..n).map(|i| rng::uniform_sym(key, i as u64, spread)).collect(),
        )
        .unwrap(),
        false,
    )
    .unwrap()
}

#[test]
fn transform_shapes_toy_profile() {
    let model = toy_model();
    let tape = Tape::new();
    let bind = model.bind(&tape, false).unwrap();
    let x = rand4(&tape, vec![1, 3, 64, 64], 1, 0.5);
    let y = model.analysis(&bind, &x).unwrap();
    assert_eq!(y.shape(), vec![1, 48, 4, 4]);
    let z = model.hyper_analysis(&bind, &y).unwrap();
    assert_eq!(z.shape(), vec![1, 32, 1, 1]);
    let hyper = model.hyper_synthesis(&bind, &z, 4, 4).unwrap();
    assert_eq!(hyper.shape(), vec![1, 96, 4, 4]);
    let x_hat = model.synthesis(&bind, &y).unwrap();
    assert_eq!(x_hat.shape(), vec![1, 3, 64, 64]);

    // Determinism: same weights and input give bitwise-identical latents.
    let y2 = model.analysis(&bind, &x).unwrap();
    assert!(y
        .value()
        .iter()
        .zip(y2.value())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn full_profile_shape_contract() {
    // Construction only: the full profile mirrors the published
    // dimensions (M=320, hyper=192, n=5) but is config, not a target.
    let cfg = ModelConfig::full();
    assert_eq!(cfg.latent_channels, 320);
    assert_eq!(cfg.hyper_channels, 192);
    assert_eq!(cfg.stages, 5);
    assert_eq!(cfg.dims, [192, 224, 256]);
    assert_eq!(cfg.entropy_width, 224);
    let sched = cfg.schedule().unwrap();
    assert_eq!(sched.counts, vec![9, 28, 56, 92, 135]);
}

#[test]
fn analysis_rejects_non_multiple_of_16() {
    let model = toy_model();
    let tape = Tape::new();
    let bind = model.bind(&tape, false).unwrap();
    let x = rand4(&tape, vec![1, 3, 60, 64], 3, 0.5);
    assert!(model.analysis(&bind, &x).is_err());
}

#[test]
fn stage_params_depend_only_on_hyper_and_earlier_slices() {
    let model = toy_model();
    let tape = Tape::new();
    let bind = model.bind(&tape, false).unwrap();
    let counts = model.schedule.counts.clone();
    let hyper = rand4(&tape, vec![1, 96, 2, 2], 11, 0.8);

    let slices: Vec<Tensor<f64>> = counts
        .iter()
        .enumerate()
        .map(|(j, &c)| rand4(&tape, vec![1, c, 2, 2], 100 + j as u64, 1.0))
        .collect();

    // Stage 2 major params from (hyper, slice 1).
    let p2 = model
        .entropy_major(&bind, 2, &hyper, &[&slices[0]])
        .unwrap();
    // Perturb slice 2 and slice 3: stage-2 params must not change
    // (causality is structural: later slices cannot even be passed).
    let p2b = model
        .entropy_major(&bind, 2, &hyper, &[&slices[0]])
        .unwrap();
    assert!(p2
        .mu
        .value()
        .iter()
        .zip(p2b.mu.value())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    // Passing a later slice in the context is a shape/count error.
    assert!(model
        .entropy_major(&bind, 2, &hyper, &[&slices[0], &slices[1]])
        .is_err());
    assert!(model.entropy_major(&bind, 2, &hyper, &[&slices[1]]).is_err());

    // Perturbing slice 1 changes stage-2 major output.
    let slice1_alt = rand4(&tape, vec![1, counts[0], 2, 2], 999, 1.0);
    let p2c = model.entropy_major(&bind, 2, &hyper, &[&slice1_alt]).unwrap();
    assert_ne!(p2.mu.value(), p2c.mu.value());
}

#[test]
fn aux_conditioning_is_one_slice_shorter() {
    let model = toy_model();
    let tape = Tape::new();
    let bind = model.bind(&tape, false).unwrap();
    let counts = model.schedule.counts.clone();
    let hyper = rand4(&tape, vec![1, 96, 2, 2], 21, 0.8);
    let s1 = rand4(&tape, vec![1, counts[0], 2, 2], 22, 1.0);
    let s1_alt = rand4(&tape, vec![1, counts[0], 2, 2], 23, 1.0);
    let s2 = rand4(&tape, vec![1, counts[1], 2, 2], 24, 1.0);

    // Stage 2: aux conditions on hyper only; major on hyper + slice 1.
    let aux2 = model.entropy_aux(&bind, 2, &hyper, &[]).unwrap();
    let major2 = model.entropy_major(&bind, 2, &hyper, &[&s1]).unwrap();
    let major2_alt = model.entropy_major(&bind, 2, &hyper, &[&s1_alt]).unwrap();
    // Perturbing slice 1 changes major but cannot reach stage-2 aux.
    assert_ne!(major2.mu.value(), major2_alt.mu.value());
    let aux2_again = model.entropy_aux(&bind, 2, &hyper, &[]).unwrap();
    assert!(aux2
        .mu
        .value()
        .iter()
        .zip(aux2_again.mu.value())
        .all(|(a, b)| a.to_bits() == b.to_bits()));

    // Stage 3 aux consumes exactly slice 1 (8 context channels in the
    // toy schedule) while major consumes slices 1..2.
    let aux3 = model.entropy_aux(&bind, 3, &hyper, &[&s1]).unwrap();
    assert_eq!(aux3.mu.shape(), vec![1, counts[2], 2, 2]);
    assert!(model.entropy_aux(&bind, 3, &hyper, &[&s1, &s2]).is_err());
    let major3 = model.entropy_major(&bind, 3, &hyper, &[&s1, &s2]).unwrap();
    assert_eq!(major3.mu.shape(), vec![1, counts[2], 2, 2]);

    // Aux and major params differ on random input (disjoint weights).
    assert_ne!(aux2.mu.value(), major2.mu.value());

    // Stage 1 has no auxiliary model.
    assert!(model.entropy_aux(&bind, 1, &hyper, &[]).is_err());
}

#[test]
fn toy_schedule_context_arithmetic() {
    // Toy profile: 48 channels over 3 stages at k=1.7.
    let model = toy_model();
    let counts = model.schedule.counts.clone();
    assert_eq!(counts.iter().sum::<usize>(), 48);
    assert_eq!(counts.len(), 3);
    assert!(counts.windows(2).all(|w| w[0] <= w[1]));
    // Stage 3 major context channels = c1 + c2; aux context = c1.
    assert_eq!(model.schedule.prefix(2), counts[0] + counts[1]);
    assert_eq!(model.schedule.prefix(1), counts[0]);
}

#[test]
fn lrp_is_identity_at_init_and_bounded() {
    let model = toy_model();
    let tape = Tape::new();
    let bind = model.bind(&tape, false).unwrap();
    let counts = model.schedule.counts.clone();
    let hyper = rand4(&tape, vec![1, 96, 2, 2], 31, 0.8);
    let y1 = rand4(&tape, vec![1, counts[0], 2, 2], 32, 1.5);

    // Zero-initialized head: refinement equals the input bitwise.
    let refined = model.lrp_refine(&bind, 1, &hyper, &[], &y1).unwrap();
    assert_eq!(refined.value(), y1.value());

    // The correction is bounded by 0.5 for any parameters: check with a
    // perturbed model whose LRP head is nonzero.
    let mut pert = model.clone();
    for p in pert.params.iter_mut() {
        if p.name.starts_with("lrp1.c2") {
            let data: Vec<f64> = (0..p.data.len())
                .map(|i| rng::uniform_sym(777, i as u64, 3.0))
                .collect();
            p.data = std::sync::Arc::new(data);
        }
    }
    let tape2 = Tape::new();
    let bind2 = pert.bind(&tape2, false).unwrap();
    let hyper2 = rand4(&tape2, vec![1, 96, 2, 2], 31, 0.8);
    let y1b = rand4(&tape2, vec![1, counts[0], 2, 2], 32, 1.5);
    let refined2 = pert.lrp_refine(&bind2, 1, &hyper2, &[], &y1b).unwrap();
    let max_delta = refined2
        .value()
        .iter()
        .zip(y1b.value())
        .map(|(r, y)| (r - y).abs())
        .fold(0.0f64, f64::max);
    assert!(max_delta < 0.5, "LRP correction {max_delta} exceeds bound");
    assert!(max_delta > 0.0);
}

#[test]
fn end_to_end_gradient_flow_reaches_every_main_parameter() {
    // One backward pass over rate + distortion must populate gradients
    // for analysis, synthesis, hyper nets, major entropy nets, LRP and
    // the factorized density; auxiliary nets are gated off this path.
    // Zero-initialized projections block upstream gradients exactly at
    // the init point, so nudge every parameter off zero first and then
    // require populated, generically nonzero gradients.
    let mut model: Model<f64> = Model::new(
        ModelConfig {
            profile: Profile::Custom,
            latent_channels: 8,
            hyper_channels: 4,
            stages: 2,
            dims: [4, 4, 4],
            res_blocks: 1,
            gated_blocks: 1,
            entropy_width: 4,
            entropy_blocks: 1,
            ..ModelConfig::toy()
        },
        7,
    )
    .unwrap();
    for (pi, p) in model.params.iter_mut().enumerate() {
        let data: Vec<f64> = p
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + rng::uniform_sym(0xD0D0 + pi as u64, i as u64, 0.02))
            .collect();
        p.data = std::sync::Arc::new(data);
    }
    let tape = Tape::new();
    let bind = model.bind(&tape, true).unwrap();
    let x = rand4(&tape, vec![1, 3, 32, 32], 51, 0.4).add_scalar(0.5).unwrap();
    let y = model.analysis(&bind, &x).unwrap();
    let z = model.hyper_analysis(&bind, &y).unwrap();
    let zn = z.add_uniform_noise(1).unwrap();
    let fd_params = model.factorized_params(&bind);
    let pz = cca_core::entropy::factorized_likelihood(&tape, &zn, &fd_params, 1e-9).unwrap();
    let ys = y.shape();
    let hyper = model.hyper_synthesis(&bind, &zn, ys[2], ys[3]).unwrap();
    let slices = y.split_channels(&model.schedule.counts).unwrap();
    let p1 = model.entropy_major(&bind, 1, &hyper, &[]).unwrap();
    let l1 = gaussian_likelihood(&slices[0], &p1, 1e-9).unwrap();
    let y1 = model.lrp_refine(&bind, 1, &hyper, &[], &slices[0]).unwrap();
    let p2 = model.entropy_major(&bind, 2, &hyper, &[&y1]).unwrap();
    let l2 = gaussian_likelihood(&slices[1], &p2, 1e-9).unwrap();
    let y2 = model.lrp_refine(&bind, 2, &hyper, &[&y1], &slices[1]).unwrap();
    let y_hat = cca_core::concat_channels(&tape, &[&y1, &y2]).unwrap();
    let x_hat = model.synthesis(&bind, &y_hat).unwrap();
    let rate = l1
        .ln()
        .unwrap()
        .sum_all()
        .unwrap()
        .add(&l2.ln().unwrap().sum_all().unwrap())
        .unwrap()
        .add(&pz.ln().unwrap().sum_all().unwrap())
        .unwrap()
        .scale(-1.0)
        .unwrap();
    let dist = cca_core::loss::distortion_mse(&x, &x_hat).unwrap();
    let total = rate.add(&dist).unwrap();
    tape.backward(&total).unwrap();

    for (idx, p) in model.params.iter().enumerate() {
        let g = bind.grad(idx);
        if p.group.is_aux() {
            assert!(g.is_none(), "aux param {} received main-loss gradient", p.name);
        } else {
            let g = g.unwrap_or_else(|| panic!("no gradient on {}", p.name));
            assert!(
                g.iter().any(|v| *v != 0.0),
                "gradient on {} is identically zero",
                p.name
            );
        }
    }
}
