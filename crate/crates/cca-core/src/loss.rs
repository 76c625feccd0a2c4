//! Rate, distortion, context-gain (CCA) and auxiliary losses, and their
//! composition into the training objective
//! total = lambda * (rate_y + rate_z) + distortion + cca + aux.

use crate::error::{CoreError, CoreResult};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rate multipliers the rate-distortion sweep supports.
pub const SUPPORTED_LAMBDAS: [f64; 6] = [0.3, 0.85, 1.8, 3.5, 7.0, 15.0];

pub const LN2: f64 = std::f64::consts::LN_2;

/// Sign convention for the CCA term.
///
/// `MaximizeGain` (default) adds major - aux to the minimized objective,
/// i.e. gradient descent enlarges the prediction gap between the major
/// and auxiliary entropy models. `Literal` flips the sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CcaSign {
    #[default]
    MaximizeGain,
    Literal,
}

impl CcaSign {
    pub fn factor(self) -> f64 {
        match self {
            CcaSign::MaximizeGain => 1.0,
            CcaSign::Literal => -1.0,
        }
    }
}

/// Per-stage negative log-likelihoods in bits.
///
/// `major` is the NLL under the stage's full-context model; `aux_for_cca`
/// is the NLL under the auxiliary model with its parameters frozen (a
/// function of encoder outputs only); `aux_for_aux` is the NLL under the
/// trainable auxiliary model evaluated on detached encoder outputs.
/// Stage 1 has no auxiliary model: both aux terms equal the major term
/// and the stage is excluded from the auxiliary loss.
pub struct StageNll<S: Scalar> {
    pub index: usize,
    pub major: Tensor<S>,
    pub aux_for_cca: Tensor<S>,
    pub aux_for_aux: Option<Tensor<S>>,
}

/// -sum(log2 p) / num_pixels, in bits per pixel.
pub fn rate_loss<S: Scalar>(likelihoods: &Tensor<S>, num_pixels: usize) -> CoreResult<Tensor<S>> {
    if num_pixels == 0 {
        return Err(CoreError::Invalid("rate_loss over zero pixels".into()));
    }
    nll_bits(likelihoods)?.scale(S::from_real(1.0 / num_pixels as f64))
}

/// -sum(log2 p), in bits.
pub fn nll_bits<S: Scalar>(likelihoods: &Tensor<S>) -> CoreResult<Tensor<S>> {
    if likelihoods.numel() == 0 {
        return Err(CoreError::Invalid("rate of an empty tensor".into()));
    }
    likelihoods
        .ln()?
        .sum_all()?
        .scale(S::from_real(-1.0 / LN2))
}

/// Mean squared error; operands share the 0-255 pixel scale.
pub fn distortion_mse<S: Scalar>(x: &Tensor<S>, x_hat: &Tensor<S>) -> CoreResult<Tensor<S>> {
    if x.shape() != x_hat.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "distortion_mse",
            lhs: x.shape(),
            rhs: x_hat.shape(),
        });
    }
    x.sub(x_hat)?.square()?.mean_all()
}

fn check_stages<S: Scalar>(stages: &[StageNll<S>]) -> CoreResult<()> {
    for (i, st) in stages.iter().enumerate() {
        if st.index != i + 1 {
            return Err(CoreError::Invalid(format!(
                "stage list must cover 1..n in order; position {i} holds stage {}",
                st.index
            )));
        }
    }
    if stages.is_empty() {
        return Err(CoreError::Invalid("empty stage list".into()));
    }
    Ok(())
}

/// CCA loss in bits per pixel: sign * sum_i (major_i - aux_i) / num_pixels.
///
/// With the default sign this is the negated information gain of the
/// newest context slice, so minimizing it maximizes the gain. Auxiliary
/// network parameters receive no gradient through this term (the aux NLL
/// tensors are built from frozen aux parameters).
pub fn cca_loss<S: Scalar>(
    stages: &[StageNll<S>],
    num_pixels: usize,
    sign: CcaSign,
) -> CoreResult<Tensor<S>> {
    check_stages(stages)?;
    let mut acc: Option<Tensor<S>> = None;
    for st in stages {
        let gap = st.major.sub(&st.aux_for_cca)?;
        acc = Some(match acc {
            Some(a) => a.add(&gap)?,
            None => gap,
        });
    }
    acc.unwrap()
        .scale(S::from_real(sign.factor() / num_pixels as f64))
}

/// Auxiliary loss in bits per pixel: sum_i aux_i / num_pixels over the
/// stages that have an auxiliary model. Encoder outputs are detached in
/// the aux NLLs, so only auxiliary parameters are trained by this term.
pub fn aux_loss<S: Scalar>(stages: &[StageNll<S>], num_pixels: usize) -> CoreResult<Tensor<S>> {
    check_stages(stages)?;
    let mut acc: Option<Tensor<S>> = None;
    for st in stages {
        if let Some(aux) = &st.aux_for_aux {
            acc = Some(match acc {
                Some(a) => a.add(aux)?,
                None => aux.clone(),
            });
        }
    }
    match acc {
        Some(a) => a.scale(S::from_real(1.0 / num_pixels as f64)),
        // No stage carries an auxiliary model (n = 1): zero on the tape.
        None => stages[0].major.scale(S::zero()),
    }
}

/// Scalar components of one training step, in bits/pixel and 8-bit MSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub rate_y: f64,
    pub rate_z: f64,
    pub distortion: f64,
    pub cca: f64,
    pub aux: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossReport {
    /// Recompose the objective from the stored components.
    pub fn recompose(&self) -> f64 {
        self.lambda * (self.rate_y + self.rate_z) + self.distortion + self.cca + self.aux
    }
}

/// total = lambda * (rate_y + rate_z) + distortion + cca + aux, on-tape.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // the negation also rejects NaN
pub fn total_loss<S: Scalar>(
    rate_y: &Tensor<S>,
    rate_z: &Tensor<S>,
    distortion: &Tensor<S>,
    cca: &Tensor<S>,
    aux: &Tensor<S>,
    lambda: f64,
) -> CoreResult<Tensor<S>> {
    if !(lambda > 0.0) {
        return Err(CoreError::Invalid(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    rate_y
        .add(rate_z)?
        .scale(S::from_real(lambda))?
        .add(distortion)?
        .add(cca)?
        .add(aux)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, TensorData};

    fn scalar_leaf(tape: &Tape<f64>, v: f64) -> Tensor<f64> {
        tape.leaf(TensorData::scalar(v), false).unwrap()
    }

    #[test]
    fn rate_loss_rejects_zero_pixels() {
        let tape: Tape<f64> = Tape::new();
        let p = tape
            .leaf(TensorData::new(vec![1], vec![0.5]).unwrap(), false)
            .unwrap();
        assert!(rate_loss(&p, 0).is_err());
    }

    #[test]
    fn rate_loss_examples() {
        let tape: Tape<f64> = Tape::new();
        let p = tape
            .leaf(TensorData::new(vec![1], vec![0.25]).unwrap(), false)
            .unwrap();
        assert!((rate_loss(&p, 1).unwrap().item() - 2.0).abs() < 1e-12);

        let ones = tape
            .leaf(TensorData::new(vec![5], vec![1.0; 5]).unwrap(), false)
            .unwrap();
        assert_eq!(rate_loss(&ones, 3).unwrap().item(), 0.0);

        let halves = tape
            .leaf(TensorData::new(vec![64], vec![0.5; 64]).unwrap(), false)
            .unwrap();
        assert!((rate_loss(&halves, 16).unwrap().item() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mse_examples_match_naive_two_pass() {
        let tape: Tape<f64> = Tape::new();
        let x = tape
            .leaf(
                TensorData::new(vec![7], vec![1.0, 250.0, 3.5, 99.0, 0.0, 17.0, 255.0]).unwrap(),
                false,
            )
            .unwrap();
        assert_eq!(distortion_mse(&x, &x).unwrap().item(), 0.0);

        let xp = tape
            .leaf(
                TensorData::new(vec![7], x.value().iter().map(|v| v + 1.0).collect()).unwrap(),
                false,
            )
            .unwrap();
        assert!((distortion_mse(&x, &xp).unwrap().item() - 1.0).abs() < 1e-12);

        let y = tape
            .leaf(
                TensorData::new(vec![7], vec![0.3, 249.0, 5.5, 90.0, 4.0, 20.0, 200.0]).unwrap(),
                false,
            )
            .unwrap();
        let naive: f64 = x
            .value()
            .iter()
            .zip(y.value())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 7.0;
        assert!((distortion_mse(&x, &y).unwrap().item() - naive).abs() < 1e-10);
    }

    fn stage(tape: &Tape<f64>, i: usize, major: f64, aux: f64) -> StageNll<f64> {
        StageNll {
            index: i,
            major: scalar_leaf(tape, major),
            aux_for_cca: scalar_leaf(tape, aux),
            aux_for_aux: if i > 1 { Some(scalar_leaf(tape, aux)) } else { None },
        }
    }

    #[test]
    fn cca_and_aux_examples() {
        let tape: Tape<f64> = Tape::new();
        let stages = vec![stage(&tape, 1, 10.0, 12.0), stage(&tape, 2, 8.0, 11.0)];
        let c = cca_loss(&stages, 1, CcaSign::MaximizeGain).unwrap().item();
        assert!((c - (-5.0)).abs() < 1e-12);
        let lit = cca_loss(&stages, 1, CcaSign::Literal).unwrap().item();
        assert!((lit - 5.0).abs() < 1e-12);

        let equal = vec![stage(&tape, 1, 9.0, 9.0), stage(&tape, 2, 4.0, 4.0)];
        assert_eq!(cca_loss(&equal, 1, CcaSign::MaximizeGain).unwrap().item(), 0.0);

        // aux skips stage 1 (no auxiliary model there).
        let a = aux_loss(&stages, 1).unwrap().item();
        assert!((a - 11.0).abs() < 1e-12);
    }

    #[test]
    fn cca_negates_gain_exactly_over_random_stages() {
        let tape: Tape<f64> = Tape::new();
        let key = crate::rng::derive_key(&[0x10, 0x55]);
        for trial in 0..32u64 {
            let n = 2 + crate::rng::uniform_index(key, trial, 4);
            let mut stages = Vec::new();
            let mut gain = 0.0;
            let mut sum_aux = 0.0;
            for i in 1..=n {
                let major =
                    10.0 + 5.0 * crate::rng::uniform_pm_half(key, trial * 100 + 2 * i as u64);
                let aux =
                    10.0 + 5.0 * crate::rng::uniform_pm_half(key, trial * 100 + 2 * i as u64 + 1);
                gain += aux - major;
                if i > 1 {
                    sum_aux += aux;
                }
                stages.push(stage(&tape, i, major, aux));
            }
            let c = cca_loss(&stages, 1, CcaSign::MaximizeGain).unwrap().item();
            assert!((c + gain).abs() < 1e-12);
            let a = aux_loss(&stages, 1).unwrap().item();
            assert!((a - sum_aux).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_stage_is_error() {
        let tape: Tape<f64> = Tape::new();
        let stages = vec![stage(&tape, 1, 1.0, 1.0), stage(&tape, 3, 1.0, 1.0)];
        assert!(cca_loss(&stages, 1, CcaSign::MaximizeGain).is_err());
        assert!(aux_loss(&stages, 1).is_err());
    }

    #[test]
    fn total_loss_composition() {
        let tape: Tape<f64> = Tape::new();
        let t = total_loss(
            &scalar_leaf(&tape, 1.0),
            &scalar_leaf(&tape, 0.5),
            &scalar_leaf(&tape, 2.0),
            &scalar_leaf(&tape, -0.3),
            &scalar_leaf(&tape, 0.8),
            1.0,
        )
        .unwrap();
        assert!((t.item() - 4.0).abs() < 1e-12);

        let z = total_loss(
            &scalar_leaf(&tape, 0.0),
            &scalar_leaf(&tape, 0.0),
            &scalar_leaf(&tape, 0.0),
            &scalar_leaf(&tape, 0.0),
            &scalar_leaf(&tape, 0.0),
            3.5,
        )
        .unwrap();
        assert_eq!(z.item(), 0.0);

        assert!(total_loss(
            &scalar_leaf(&tape, 1.0),
            &scalar_leaf(&tape, 1.0),
            &scalar_leaf(&tape, 1.0),
            &scalar_leaf(&tape, 1.0),
            &scalar_leaf(&tape, 1.0),
            0.0,
        )
        .is_err());
    }

    #[test]
    fn report_recompose_is_exact() {
        let r = LossReport {
            rate_y: 1.25,
            rate_z: 0.125,
            distortion: 33.5,
            cca: -0.75,
            aux: 2.5,
            lambda: 1.8,
            total: 1.8 * (1.25 + 0.125) + 33.5 - 0.75 + 2.5,
        };
        assert!((r.recompose() - r.total).abs() < 1e-12);
    }
}
