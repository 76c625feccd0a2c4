//! Finite-difference verification of every differentiable op and the
//! composite blocks. Used by the test suites; kept in the library so the
//! acceptance harness can run the identical checks.

use crate::entropy::{factorized_init, factorized_likelihood, gaussian_likelihood, EntropyParams};
use crate::error::CoreResult;
use crate::network::{BlockKind, BlockModel};
use crate::rng;
use crate::tensor::{concat_channels, finite_diff_check, Tape, Tensor, TensorData};

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
}

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_POINTS: usize = 10;

fn point(key: u64, t: u64, n: usize, center: f64, spread: f64) -> TensorData<f64> {
    TensorData::new(
        vec![n],
        (0..n)
            .map(|i| center + rng::uniform_sym(key, t * 10_000 + i as u64, spread))
            .collect(),
    )
    .unwrap()
}

fn point4(key: u64, t: u64, shape: Vec<usize>, center: f64, spread: f64) -> TensorData<f64> {
    let n: usize = shape.iter().product();
    TensorData::new(
        shape,
        (0..n)
            .map(|i| center + rng::uniform_sym(key, t * 10_000 + i as u64, spread))
            .collect(),
    )
    .unwrap()
}

/// Weighted sum so the output gradient is non-constant.
fn spread_loss(t: &Tensor<f64>) -> CoreResult<Tensor<f64>> {
    let n = t.numel();
    let w = t.tape().leaf(
        TensorData::new(
            t.shape(),
            (0..n).map(|i| 0.25 + ((i * 7 % 11) as f64) * 0.13).collect(),
        )?,
        false,
    )?;
    t.mul(&w)?.sum_all()
}

fn run_check(
    out: &mut Vec<CheckReport>,
    name: &str,
    points: usize,
    eps: f64,
    mk_point: impl Fn(u64) -> TensorData<f64>,
    f: impl Fn(&Tape<f64>, &Tensor<f64>) -> CoreResult<Tensor<f64>>,
) -> CoreResult<()> {
    let key = rng::derive_key(&[0x6AAD, name.len() as u64]);
    let mut worst = 0.0f64;
    for t in 0..points as u64 {
        let p = mk_point(rng::mix64(key ^ t));
        let err = finite_diff_check(&f, &p, eps)?;
        if err > worst {
            worst = err;
        }
    }
    out.push(CheckReport {
        name: name.to_string(),
        max_rel_err: worst,
    });
    Ok(())
}

/// Finite-difference checks for every differentiable op kind, including
/// the Gaussian and factorized likelihood composites, at `points` seeded
/// points each. The straight-through round is excluded by definition
/// (its analytic gradient is 1 while central differences vanish).
pub fn check_all_ops(points: usize, eps: f64) -> CoreResult<Vec<CheckReport>> {
    let mut out = Vec::new();
    let aux = |tape: &Tape<f64>, key: u64, n: usize, center: f64| {
        tape.leaf(point(key, 3, n, center, 0.8), false).unwrap()
    };

    run_check(&mut out, "add", points, eps, |k| point(k, 0, 12, 0.0, 2.0), |tape, x| {
        spread_loss(&x.add(&aux(tape, 5, 12, 0.0))?)
    })?;
    run_check(&mut out, "subtract.lhs", points, eps, |k| point(k, 0, 12, 0.0, 2.0), |tape, x| {
        spread_loss(&x.sub(&aux(tape, 6, 12, 0.0))?)
    })?;
    run_check(&mut out, "subtract.rhs", points, eps, |k| point(k, 0, 12, 0.0, 2.0), |tape, x| {
        spread_loss(&aux(tape, 7, 12, 0.0).sub(x)?)
    })?;
    run_check(&mut out, "multiply", points, eps, |k| point(k, 0, 12, 0.0, 2.0), |tape, x| {
        spread_loss(&x.mul(&aux(tape, 8, 12, 1.0))?)
    })?;
    run_check(&mut out, "divide.num", points, eps, |k| point(k, 0, 12, 0.0, 2.0), |tape, x| {
        spread_loss(&x.div(&aux(tape, 9, 12, 3.0))?)
    })?;
    run_check(&mut out, "divide.den", points, eps, |k| point(k, 0, 12, 3.0, 0.9), |tape, x| {
        spread_loss(&aux(tape, 10, 12, 0.0).div(x)?)
    })?;

    run_check(&mut out, "scale", points, eps, |k| point(k, 0, 10, 0.0, 2.0), |_, x| {
        spread_loss(&x.scale(1.7)?)
    })?;
    run_check(&mut out, "add_scalar", points, eps, |k| point(k, 0, 10, 0.0, 2.0), |_, x| {
        spread_loss(&x.add_scalar(-0.3)?)
    })?;
    run_check(&mut out, "square", points, eps, |k| point(k, 0, 10, 0.0, 2.0), |_, x| {
        spread_loss(&x.square()?)
    })?;
    run_check(&mut out, "exp", points, eps, |k| point(k, 0, 10, 0.0, 1.5), |_, x| {
        spread_loss(&x.exp()?)
    })?;
    run_check(&mut out, "log", points, eps, |k| point(k, 0, 10, 2.0, 1.2), |_, x| {
        spread_loss(&x.ln()?)
    })?;
    run_check(&mut out, "tanh", points, eps, |k| point(k, 0, 10, 0.0, 2.0), |_, x| {
        spread_loss(&x.tanh()?)
    })?;
    run_check(&mut out, "sigmoid", points, eps, |k| point(k, 0, 10, 0.0, 3.0), |_, x| {
        spread_loss(&x.sigmoid()?)
    })?;
    run_check(&mut out, "softplus", points, eps, |k| point(k, 0, 10, 0.0, 3.0), |_, x| {
        spread_loss(&x.softplus()?)
    })?;
    run_check(&mut out, "gelu", points, eps, |k| point(k, 0, 10, 0.0, 2.0), |_, x| {
        spread_loss(&x.gelu()?)
    })?;
    run_check(&mut out, "normal_cdf", points, eps, |k| point(k, 0, 10, 0.0, 2.5), |_, x| {
        spread_loss(&x.normal_cdf()?)
    })?;
    // clamp_min: points away from the kink.
    run_check(&mut out, "clamp_min", points, eps, |k| point(k, 0, 10, 1.5, 1.0), |_, x| {
        spread_loss(&x.clamp_min(0.2)?)
    })?;
    run_check(&mut out, "add_uniform_noise", points, eps, |k| point(k, 0, 10, 0.0, 2.0), |_, x| {
        spread_loss(&x.add_uniform_noise(0xACE)?)
    })?;
    run_check(&mut out, "sum_reduce", points, eps, |k| point(k, 0, 10, 0.0, 2.0), |_, x| {
        x.sum_all()
    })?;
    run_check(&mut out, "mean_reduce", points, eps, |k| point(k, 0, 10, 0.0, 2.0), |_, x| {
        x.mean_all()
    })?;

    run_check(
        &mut out,
        "matmul.lhs",
        points,
        eps,
        |k| {
            let mut p = point(k, 0, 12, 0.0, 1.0);
            p.shape = vec![3, 4];
            p
        },
        |tape, x| {
            let b = tape.leaf(
                TensorData::new(vec![4, 5], (0..20).map(|i| (i as f64) * 0.1 - 1.0).collect())?,
                false,
            )?;
            spread_loss(&x.matmul(&b)?)
        },
    )?;
    run_check(
        &mut out,
        "matmul.rhs",
        points,
        eps,
        |k| {
            let mut p = point(k, 0, 20, 0.0, 1.0);
            p.shape = vec![4, 5];
            p
        },
        |tape, x| {
            let a = tape.leaf(
                TensorData::new(vec![3, 4], (0..12).map(|i| (i as f64) * 0.2 - 1.0).collect())?,
                false,
            )?;
            spread_loss(&a.matmul(x)?)
        },
    )?;

    run_check(
        &mut out,
        "channel_concat",
        points,
        eps,
        |k| point4(k, 0, vec![1, 2, 3, 3], 0.0, 1.0),
        |tape, x| {
            let other = tape.leaf(point4(7, 1, vec![1, 3, 3, 3], 0.0, 1.0), false)?;
            spread_loss(&concat_channels(tape, &[x, &other])?)
        },
    )?;
    run_check(
        &mut out,
        "channel_split",
        points,
        eps,
        |k| point4(k, 0, vec![1, 6, 2, 2], 0.0, 1.0),
        |_, x| {
            let parts = x.split_channels(&[2, 4])?;
            spread_loss(&parts[0])?.add(&spread_loss(&parts[1])?)
        },
    )?;
    run_check(
        &mut out,
        "crop_spatial",
        points,
        eps,
        |k| point4(k, 0, vec![1, 2, 4, 4], 0.0, 1.0),
        |_, x| spread_loss(&x.crop_spatial(1, 0, 2, 3)?),
    )?;
    run_check(
        &mut out,
        "global_average_pool",
        points,
        eps,
        |k| point4(k, 0, vec![2, 3, 3, 3], 0.0, 1.0),
        |_, x| spread_loss(&x.global_avg_pool()?),
    )?;
    run_check(
        &mut out,
        "channel_mul.x",
        points,
        eps,
        |k| point4(k, 0, vec![1, 3, 2, 2], 0.0, 1.0),
        |tape, x| {
            let s = tape.leaf(point4(11, 1, vec![1, 3, 1, 1], 1.0, 0.5), false)?;
            spread_loss(&x.channel_mul(&s)?)
        },
    )?;
    run_check(
        &mut out,
        "channel_mul.s",
        points,
        eps,
        |k| point4(k, 0, vec![1, 3, 1, 1], 1.0, 0.5),
        |tape, s| {
            let x = tape.leaf(point4(12, 1, vec![1, 3, 2, 2], 0.0, 1.0), false)?;
            spread_loss(&x.channel_mul(s)?)
        },
    )?;

    let gamma = |tape: &Tape<f64>| tape.leaf(point(21, 1, 4, 1.0, 0.3), false).unwrap();
    let beta = |tape: &Tape<f64>| tape.leaf(point(22, 2, 4, 0.0, 0.3), false).unwrap();
    run_check(
        &mut out,
        "layer_norm_ch.x",
        points,
        eps,
        |k| point4(k, 0, vec![1, 4, 2, 2], 0.0, 1.5),
        |tape, x| spread_loss(&x.layer_norm_ch(&gamma(tape), &beta(tape))?),
    )?;
    run_check(
        &mut out,
        "layer_norm_ch.gamma",
        points,
        eps,
        |k| point(k, 0, 4, 1.0, 0.4),
        |tape, g| {
            let x = tape.leaf(point4(23, 1, vec![1, 4, 2, 2], 0.0, 1.5), false)?;
            spread_loss(&x.layer_norm_ch(g, &beta(tape))?)
        },
    )?;
    run_check(
        &mut out,
        "layer_norm_ch.beta",
        points,
        eps,
        |k| point(k, 0, 4, 0.0, 0.4),
        |tape, b| {
            let x = tape.leaf(point4(24, 1, vec![1, 4, 2, 2], 0.0, 1.5), false)?;
            spread_loss(&x.layer_norm_ch(&gamma(tape), b)?)
        },
    )?;

    let xshape = vec![1, 2, 6, 6];
    let wshape = vec![3, 2, 3, 3];
    let x_fixed =
        |tape: &Tape<f64>| tape.leaf(point4(31, 1, xshape.clone(), 0.0, 1.0), false).unwrap();
    let w_fixed =
        |tape: &Tape<f64>| tape.leaf(point4(32, 2, wshape.clone(), 0.0, 0.5), false).unwrap();
    let b_fixed = |tape: &Tape<f64>| tape.leaf(point(33, 3, 3, 0.0, 0.5), false).unwrap();
    run_check(
        &mut out,
        "conv2d.x",
        points,
        eps,
        |k| point4(k, 0, vec![1, 2, 6, 6], 0.0, 1.0),
        |tape, x| spread_loss(&x.conv2d(&w_fixed(tape), Some(&b_fixed(tape)), 2, 1)?),
    )?;
    run_check(
        &mut out,
        "conv2d.w",
        points,
        eps,
        |k| point4(k, 0, vec![3, 2, 3, 3], 0.0, 0.5),
        |tape, w| spread_loss(&x_fixed(tape).conv2d(w, Some(&b_fixed(tape)), 2, 1)?),
    )?;
    run_check(
        &mut out,
        "conv2d.b",
        points,
        eps,
        |k| point(k, 0, 3, 0.0, 0.5),
        |tape, b| spread_loss(&x_fixed(tape).conv2d(&w_fixed(tape), Some(b), 2, 1)?),
    )?;

    let wt_fixed =
        |tape: &Tape<f64>| tape.leaf(point4(34, 4, vec![2, 3, 3, 3], 0.0, 0.5), false).unwrap();
    run_check(
        &mut out,
        "transposed-conv2d.x",
        points,
        eps,
        |k| point4(k, 0, vec![1, 2, 3, 3], 0.0, 1.0),
        |tape, x| {
            spread_loss(&x.conv_transpose2d(&wt_fixed(tape), Some(&b_fixed(tape)), 2, 1, 1)?)
        },
    )?;
    run_check(
        &mut out,
        "transposed-conv2d.w",
        points,
        eps,
        |k| point4(k, 0, vec![2, 3, 3, 3], 0.0, 0.5),
        |tape, w| {
            let x = tape.leaf(point4(35, 5, vec![1, 2, 3, 3], 0.0, 1.0), false)?;
            spread_loss(&x.conv_transpose2d(w, Some(&b_fixed(tape)), 2, 1, 1)?)
        },
    )?;

    let dw_fixed =
        |tape: &Tape<f64>| tape.leaf(point4(36, 6, vec![4, 1, 3, 3], 0.0, 0.5), false).unwrap();
    let dwb = |tape: &Tape<f64>| tape.leaf(point(37, 7, 4, 0.0, 0.2), false).unwrap();
    run_check(
        &mut out,
        "depthwise-conv2d.x",
        points,
        eps,
        |k| point4(k, 0, vec![1, 4, 5, 5], 0.0, 1.0),
        |tape, x| spread_loss(&x.dwconv2d(&dw_fixed(tape), Some(&dwb(tape)), 1)?),
    )?;
    run_check(
        &mut out,
        "depthwise-conv2d.w",
        points,
        eps,
        |k| point4(k, 0, vec![4, 1, 3, 3], 0.0, 0.5),
        |tape, w| {
            let x = tape.leaf(point4(38, 8, vec![1, 4, 5, 5], 0.0, 1.0), false)?;
            spread_loss(&x.dwconv2d(w, Some(&dwb(tape)), 1)?)
        },
    )?;

    // Gaussian likelihood NLL w.r.t. value, mu, sigma.
    let mk_params = |tape: &Tape<f64>, k: u64| EntropyParams {
        mu: tape.leaf(point(k, 40, 8, 0.0, 1.0), false).unwrap(),
        sigma: tape.leaf(point(k, 41, 8, 1.0, 0.6), false).unwrap(),
    };
    run_check(
        &mut out,
        "gaussian_nll.value",
        points,
        eps,
        |k| point(k, 0, 8, 0.0, 1.5),
        |tape, v| {
            let p = gaussian_likelihood(v, &mk_params(tape, 51), 1e-9)?;
            p.ln()?.sum_all()?.scale(-std::f64::consts::LOG2_E)
        },
    )?;
    run_check(
        &mut out,
        "gaussian_nll.mu",
        points,
        eps,
        |k| point(k, 0, 8, 0.0, 1.0),
        |tape, mu| {
            let v = tape.leaf(point(52, 42, 8, 0.0, 1.5), false)?;
            let params = EntropyParams {
                mu: mu.clone(),
                sigma: tape.leaf(point(53, 43, 8, 1.0, 0.6), false)?,
            };
            let p = gaussian_likelihood(&v, &params, 1e-9)?;
            p.ln()?.sum_all()?.scale(-std::f64::consts::LOG2_E)
        },
    )?;
    run_check(
        &mut out,
        "gaussian_nll.sigma",
        points,
        eps,
        |k| point(k, 0, 8, 1.2, 0.7),
        |tape, sigma| {
            let v = tape.leaf(point(54, 44, 8, 0.0, 1.5), false)?;
            let params = EntropyParams {
                mu: tape.leaf(point(55, 45, 8, 0.0, 1.0), false)?,
                sigma: sigma.clone(),
            };
            let p = gaussian_likelihood(&v, &params, 1e-9)?;
            p.ln()?.sum_all()?.scale(-std::f64::consts::LOG2_E)
        },
    )?;

    // Factorized likelihood w.r.t. the value and all 11 parameters.
    let channels = 2usize;
    let init = factorized_init::<f64>(channels, 99);
    run_check(
        &mut out,
        "factorized_nll.value",
        points,
        eps,
        |k| point4(k, 0, vec![1, channels, 2, 2], 0.0, 3.0),
        |tape, v| {
            let params: Vec<Tensor<f64>> = init
                .iter()
                .map(|d| tape.leaf(d.clone(), false).unwrap())
                .collect();
            let p = factorized_likelihood(tape, v, &params, 1e-9)?;
            p.ln()?.sum_all()?.scale(-std::f64::consts::LOG2_E)
        },
    )?;
    for target in 0..init.len() {
        let name = format!("factorized_nll.param{target}");
        let init_t = init.clone();
        run_check(
            &mut out,
            &name,
            points,
            eps,
            |k| {
                let base = &init_t[target];
                let n = base.data.len();
                TensorData::new(
                    base.shape.clone(),
                    (0..n)
                        .map(|i| base.data[i] + rng::uniform_sym(k, i as u64, 0.2))
                        .collect(),
                )
                .unwrap()
            },
            |tape, pt| {
                let params: Vec<Tensor<f64>> = init_t
                    .iter()
                    .enumerate()
                    .map(|(j, d)| {
                        if j == target {
                            pt.clone()
                        } else {
                            tape.leaf(d.clone(), false).unwrap()
                        }
                    })
                    .collect();
                let v = tape.leaf(point4(60, 1, vec![1, channels, 2, 2], 0.0, 3.0), false)?;
                let p = factorized_likelihood(tape, &v, &params, 1e-9)?;
                p.ln()?.sum_all()?.scale(-std::f64::consts::LOG2_E)
            },
        )?;
    }
    Ok(out)
}

/// Strict all-coordinate parameter checks through one residual and one
/// gated block, plus input-gradient checks at `points` seeded points.
pub fn check_blocks(points: usize, eps: f64) -> CoreResult<Vec<CheckReport>> {
    let mut out = Vec::new();
    for (kind, label) in [(BlockKind::Residual, "residual_block"), (BlockKind::Gated, "gated_block")] {
        let block: BlockModel<f64> = BlockModel::new(kind, 6, 77)?;

        let b = &block;
        run_check(
            &mut out,
            &format!("{label}.x"),
            points,
            eps,
            |k| point4(k, 0, vec![1, 6, 4, 4], 0.0, 1.0),
            |_tape, x| {
                let bind = b.bind(&x.tape(), false)?;
                spread_loss(&b.forward(&bind, x)?)
            },
        )?;

        let tape = Tape::new();
        let bind = block.bind(&tape, true)?;
        let x = tape.leaf(point4(88, 1, vec![1, 6, 4, 4], 0.0, 1.0), false)?;
        let loss = spread_loss(&block.forward(&bind, &x)?)?;
        tape.backward(&loss)?;
        let mut worst = 0.0f64;
        for (idx, p) in block.params.iter().enumerate() {
            let analytic = bind.grad(idx).unwrap();
            for coord in 0..p.data.len() {
                let eval = |v: f64| -> CoreResult<f64> {
                    let t: Tape<f64> = Tape::new();
                    let mut data = p.data.as_ref().clone();
                    data[coord] = v;
                    let mut leaves = Vec::new();
                    for (j, q) in block.params.iter().enumerate() {
                        if j == idx {
                            leaves.push(
                                t.leaf(TensorData::new(q.shape.clone(), data.clone())?, false)?,
                            );
                        } else {
                            leaves.push(t.leaf_shared(
                                q.shape.clone(),
                                std::sync::Arc::clone(&q.data),
                                false,
                            )?);
                        }
                    }
                    let bind2 = crate::network::Binding::from_leaves(leaves);
                    let x2 = t.leaf(point4(88, 1, vec![1, 6, 4, 4], 0.0, 1.0), false)?;
                    Ok(spread_loss(&block.forward(&bind2, &x2)?)?.item())
                };
                let orig = p.data[coord];
                let fd = (eval(orig + eps)? - eval(orig - eps)?) / (2.0 * eps);
                let a = analytic[coord];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
                if rel > worst {
                    worst = rel;
                }
            }
        }
        out.push(CheckReport {
            name: format!("{label}.params"),
            max_rel_err: worst,
        });
    }
    Ok(out)
}
