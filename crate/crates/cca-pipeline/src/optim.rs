//! Adam with bias correction.

use cca_core::network::Model;
use cca_core::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new<S: Scalar>(model: &Model<S>) -> Self {
        AdamState {
            m: model.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: model.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            t: 0,
        }
    }

    /// One update over every parameter; `grads` align with the model's
    /// parameter order. Deterministic.
    pub fn update<S: Scalar>(&mut self, model: &mut Model<S>, grads: &[Vec<f64>], lr: f64) {
        debug_assert_eq!(grads.len(), model.params.len());
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (pi, p) in model.params.iter_mut().enumerate() {
            let g = &grads[pi];
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            let data = std::sync::Arc::make_mut(&mut p.data);
            for i in 0..data.len() {
                let gi = g[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] = S::from_real(data[i].to_real() - lr * mhat / (vhat.sqrt() + ADAM_EPS));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cca_core::network::{Model, ModelConfig, Profile};

    fn micro_model() -> Model<f64> {
        Model::new(
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
            5,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut model = micro_model();
        let before: Vec<Vec<f64>> = model.params.iter().map(|p| p.data.as_ref().clone()).collect();
        let grads: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let mut adam = AdamState::new(&model);
        adam.update(&mut model, &grads, 1e-3);
        for (p, b) in model.params.iter().zip(&before) {
            assert_eq!(p.data.as_ref(), b);
        }
    }

    #[test]
    fn single_step_matches_closed_form() {
        // From zero state with constant gradient g, the first update is
        // -lr * g / (|g| + eps) after bias correction.
        let mut model = micro_model();
        let before = model.params[0].data[0];
        let mut grads: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let g = 0.37;
        grads[0][0] = g;
        let mut adam = AdamState::new(&model);
        let lr = 1e-2;
        adam.update(&mut model, &grads, lr);
        let expected = before - lr * g / (g.abs() + ADAM_EPS);
        let got = model.params[0].data[0];
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn matches_independent_reference_for_100_steps() {
        // Hand-rolled scalar Adam over a 3-parameter toy problem.
        let mut theta = [0.5f64, -1.25, 2.0];
        let mut m = [0.0f64; 3];
        let mut v = [0.0f64; 3];
        let lr = 3e-3;
        let grad_fn = |th: &[f64; 3], step: usize| {
            [
                2.0 * th[0] + (step as f64 * 0.01).sin(),
                th[1].tanh(),
                0.5 * th[2] - 0.2,
            ]
        };
        // Reference trajectory.
        let mut reference = theta;
        for t in 1..=100 {
            let g = grad_fn(&reference, t);
            for i in 0..3 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t as i32));
                let vh = v[i] / (1.0 - 0.999f64.powi(t as i32));
                reference[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        // Optimizer under test, driving 3 coordinates of a real param.
        let mut model = micro_model();
        {
            let data = std::sync::Arc::make_mut(&mut model.params[0].data);
            data[0] = theta[0];
            data[1] = theta[1];
            data[2] = theta[2];
        }
        let mut adam = AdamState::new(&model);
        for t in 1..=100 {
            let th = [
                model.params[0].data[0],
                model.params[0].data[1],
                model.params[0].data[2],
            ];
            let g3 = grad_fn(&th, t);
            let mut grads: Vec<Vec<f64>> =
                model.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
            grads[0][..3].copy_from_slice(&g3);
            adam.update(&mut model, &grads, lr);
        }
        theta = [
            model.params[0].data[0],
            model.params[0].data[1],
            model.params[0].data[2],
        ];
        for i in 0..3 {
            assert!(
                (theta[i] - reference[i]).abs() < 1e-12,
                "coord {i}: {} vs {}",
                theta[i],
                reference[i]
            );
        }
    }
}
