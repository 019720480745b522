use super::StackedLstm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &StackedLstm) -> Self {
        let m: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for k in 0..params.len() {
        let g = grads[k];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        params[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

pub fn adam_step(params: &mut StackedLstm, grads: &StackedLstm, state: &mut AdamState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        adam_update(p, g, m, v, t, cfg);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.5, -1.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        for t in 1..=10 {
            adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, t, &cfg);
        }
        assert_eq!(p, vec![0.5, -1.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0, 0.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_update(&mut p, &[3.0, -0.02], &mut m, &mut v, 1, &cfg);
        // m_hat = g and v_hat = g², so the step is lr g / (|g| + eps)
        assert!((p[0] + cfg.lr * 3.0 / (3.0 + cfg.eps)).abs() < 1e-18);
        assert!((p[1] - cfg.lr * 0.02 / (0.02 + cfg.eps)).abs() < 1e-18);
    }

    #[test]
    fn constant_gradient_converges_to_lr_steps() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        let mut last = 0.0;
        for t in 1..=5000 {
            let before = p[0];
            adam_update(&mut p, &[0.7], &mut m, &mut v, t, &cfg);
            last = p[0] - before;
        }
        assert!((last + cfg.lr).abs() < 1e-9, "{last}");
    }

    #[test]
    fn step_counter_advances() {
        let model = StackedLstm::zeros(2, 2);
        let mut state = AdamState::new(&model);
        let mut p = model.clone();
        adam_step(&mut p, &model, &mut state, &AdamConfig::default());
        assert_eq!(state.step, 1);
        assert_eq!(p, model);
    }
}
