//! Adam optimizer with bias correction.

use super::{Scalar, Tensor};

/// Optimizer hyperparameters. Defaults follow the convolutional-GAN
/// convention: lr 2e-4, β₁ 0.5, β₂ 0.999.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One in-place Adam update of `param` given `grad` and first/second moment
/// buffers, using bias-corrected step `t` (1-based).
pub fn adam_update<S: Scalar>(
    param: &mut [S],
    grad: &[S],
    m: &mut [S],
    v: &mut [S],
    t: u64,
    hp: AdamParams,
) {
    let b1 = S::from_f64(hp.beta1);
    let b2 = S::from_f64(hp.beta2);
    let one_m_b1 = S::from_f64(1.0 - hp.beta1);
    let one_m_b2 = S::from_f64(1.0 - hp.beta2);
    let corr1 = S::from_f64(1.0 / (1.0 - hp.beta1.powi(t as i32)));
    let corr2 = S::from_f64(1.0 / (1.0 - hp.beta2.powi(t as i32)));
    let lr = S::from_f64(hp.lr);
    let eps = S::from_f64(hp.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + one_m_b1 * g;
        v[i] = b2 * v[i] + one_m_b2 * g * g;
        let m_hat = m[i] * corr1;
        let v_hat = v[i] * corr2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over a fixed parameter list. Parameters are shared handles; updates
/// are visible to every holder of the same tensors.
pub struct Adam<S: Scalar> {
    hp: AdamParams,
    params: Vec<Tensor<S>>,
    moments: Vec<(Vec<S>, Vec<S>)>,
    t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: Vec<Tensor<S>>, hp: AdamParams) -> Self {
        let moments = params
            .iter()
            .map(|p| (vec![S::ZERO; p.numel()], vec![S::ZERO; p.numel()]))
            .collect();
        Adam {
            hp,
            params,
            moments,
            t: 0,
        }
    }

    /// Applies one update from the accumulated grads, then clears them.
    /// Parameters whose grad was never populated are left unchanged.
    pub fn step(&mut self) {
        self.t += 1;
        for (p, (m, v)) in self.params.iter().zip(self.moments.iter_mut()) {
            let Some(grad) = p.grad() else { continue };
            p.with_data_mut(|data| adam_update(data, &grad, m, v, self.t, self.hp));
            p.zero_grad();
        }
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Optimizer state as named tensors, for checkpointing.
    pub fn state_entries(&self, prefix: &str, names: &[String]) -> Vec<(String, Vec<S>)> {
        assert_eq!(names.len(), self.params.len());
        let mut out = Vec::new();
        for (name, (m, v)) in names.iter().zip(&self.moments) {
            out.push((format!("{prefix}.{name}.m"), m.clone()));
            out.push((format!("{prefix}.{name}.v"), v.clone()));
        }
        out.push((
            format!("{prefix}.step"),
            vec![S::from_f64(self.t as f64)],
        ));
        out
    }

    /// Restores optimizer state saved by [`Adam::state_entries`].
    pub fn load_state(
        &mut self,
        prefix: &str,
        names: &[String],
        mut lookup: impl FnMut(&str) -> Option<Vec<S>>,
    ) -> bool {
        let Some(step) = lookup(&format!("{prefix}.step")) else {
            return false;
        };
        let mut moments = Vec::with_capacity(self.params.len());
        for name in names {
            let (Some(m), Some(v)) = (
                lookup(&format!("{prefix}.{name}.m")),
                lookup(&format!("{prefix}.{name}.v")),
            ) else {
                return false;
            };
            moments.push((m, v));
        }
        self.moments = moments;
        self.t = step[0].to_f64() as u64;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    #[test]
    fn constant_gradient_moves_against_sign() {
        let p = Tensor::<f64>::param(&[1], vec![0.0]).unwrap();
        let mut opt = Adam::new(vec![p.clone()], AdamParams::default());
        for _ in 0..100 {
            let loss = p.scale(3.0).mean_all(); // d/dp = 3 > 0
            backward(&loss).unwrap();
            opt.step();
        }
        assert!(p.item() < 0.0);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let p = Tensor::<f64>::param(&[2], vec![1.5, -2.5]).unwrap();
        let mut opt = Adam::new(vec![p.clone()], AdamParams::default());
        let zero = Tensor::<f64>::zeros(&[2]).unwrap();
        let loss = p.mul(&zero).unwrap().mean_all();
        backward(&loss).unwrap();
        assert_eq!(p.grad().unwrap(), vec![0.0, 0.0]);
        opt.step();
        assert_eq!(p.to_vec(), vec![1.5, -2.5]);
    }

    #[test]
    fn first_step_is_signed_lr() {
        // With zero state, m̂ = g and v̂ = g², so the update is
        // −lr·g/(|g| + ε) ≈ −lr·sign(g).
        let hp = AdamParams::default();
        let mut param = vec![0.2f64];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        adam_update(&mut param, &[0.75], &mut m, &mut v, 1, hp);
        assert!((param[0] - (0.2 - hp.lr)).abs() < 1e-9);

        let mut param = vec![0.2f64];
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        adam_update(&mut param, &[-0.75], &mut m, &mut v, 1, hp);
        assert!((param[0] - (0.2 + hp.lr)).abs() < 1e-9);
    }
}
