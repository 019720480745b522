//! Two-layer stacked LSTM with a tanh head emitting replication weights.
//!
//! For a target stock the network reads the other stocks' returns `X_t`
//! day by day and emits `beta_t`, so the prediction is `X_tᵀ beta_t`.

mod adam;
mod checkpoint;
mod train;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use train::{design_matrix, infer_beta_provider, train, TrainConfig, TrainOutcome};

/// Gate order used for every `[_; 4]` below: forget, candidate, input, output.
pub const GATES: [&str; 4] = ["f", "c", "i", "o"];
const F: usize = 0;
const C: usize = 1;
const I: usize = 2;
const O: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    /// `h x h` recurrent weights per gate.
    pub w_h: [Matrix; 4],
    /// `h x in` input weights per gate.
    pub w_x: [Matrix; 4],
    pub b: [Vec<f64>; 4],
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayerParams {
            w_h: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            w_x: std::array::from_fn(|_| Matrix::zeros(hidden, input)),
            b: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }

    /// Uniform `±1/sqrt(in + h)` weights, zero biases, forget bias 1.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = LstmLayerParams::zeros(input, hidden);
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        for g in 0..4 {
            for v in p.w_x[g].as_mut_slice() {
                *v = rng.random_range(-bound..bound);
            }
            for v in p.w_h[g].as_mut_slice() {
                *v = rng.random_range(-bound..bound);
            }
        }
        p.b[F].iter_mut().for_each(|v| *v = 1.0);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_x[0].cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h[0].rows()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Gate activations of one step.
#[derive(Debug, Clone)]
struct StepCache {
    /// `f, ĉ, i, o` after their nonlinearities.
    gates: [Vec<f64>; 4],
    c: Vec<f64>,
    h: Vec<f64>,
}

fn step_full(p: &LstmLayerParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let h = p.hidden_dim();
    let gates: [Vec<f64>; 4] = std::array::from_fn(|g| {
        let mut z = p.b[g].clone();
        p.w_x[g].mul_vec_add(x, &mut z);
        p.w_h[g].mul_vec_add(h_prev, &mut z);
        if g == C {
            z.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            z.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        z
    });
    let mut c = vec![0.0; h];
    let mut hn = vec![0.0; h];
    for k in 0..h {
        c[k] = c_prev[k] * gates[F][k] + gates[I][k] * gates[C][k];
        hn[k] = gates[O][k] * c[k].tanh();
    }
    StepCache { gates, c, h: hn }
}

/// One LSTM cell update, returning `(h, c)`.
pub fn lstm_step(
    p: &LstmLayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n_in, h) = (p.input_dim(), p.hidden_dim());
    if x.len() != n_in || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Contract(format!(
            "lstm_step shapes: x {} (want {n_in}), h {} c {} (want {h})",
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let s = step_full(p, x, h_prev, c_prev);
    if s.h.iter().chain(&s.c).any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite LSTM state".into()));
    }
    Ok((s.h, s.c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedLstm {
    pub layer1: LstmLayerParams,
    pub layer2: LstmLayerParams,
    /// `in x h`
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

/// Carried hidden and cell states of both layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h1: Vec<f64>,
    pub c1: Vec<f64>,
    pub h2: Vec<f64>,
    pub c2: Vec<f64>,
}

impl StackedLstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        StackedLstm {
            layer1: LstmLayerParams::zeros(input, hidden),
            layer2: LstmLayerParams::zeros(hidden, hidden),
            head_w: Matrix::zeros(input, hidden),
            head_b: vec![0.0; input],
        }
    }

    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let layer1 = LstmLayerParams::init(input, hidden, rng);
        let layer2 = LstmLayerParams::init(hidden, hidden, rng);
        let mut head_w = Matrix::zeros(input, hidden);
        let bound = 1.0 / (hidden as f64).sqrt();
        for v in head_w.as_mut_slice() {
            *v = rng.random_range(-bound..bound);
        }
        StackedLstm {
            layer1,
            layer2,
            head_w,
            head_b: vec![0.0; input],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer1.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layer1.hidden_dim()
    }

    pub fn zero_state(&self) -> LstmState {
        let h = self.hidden_dim();
        LstmState {
            h1: vec![0.0; h],
            c1: vec![0.0; h],
            h2: vec![0.0; h],
            c2: vec![0.0; h],
        }
    }

    /// Advances `state` by one day and returns `beta_t`.
    pub fn step(&self, state: &mut LstmState, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Contract(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let s1 = step_full(&self.layer1, x, &state.h1, &state.c1);
        let s2 = step_full(&self.layer2, &s1.h, &state.h2, &state.c2);
        let beta = self.head(&s2.h);
        state.h1 = s1.h;
        state.c1 = s1.c;
        state.h2 = s2.h;
        state.c2 = s2.c;
        if beta.iter().chain(&state.c2).chain(&state.c1).any(|v| !v.is_finite()) {
            return Err(Error::Divergence("non-finite LSTM output".into()));
        }
        Ok(beta)
    }

    fn head(&self, h2: &[f64]) -> Vec<f64> {
        let mut z = self.head_b.clone();
        self.head_w.mul_vec_add(h2, &mut z);
        z.iter_mut().for_each(|v| *v = v.tanh());
        z
    }

    /// Every parameter tensor, in checkpoint order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(26);
        for layer in [&self.layer1, &self.layer2] {
            for g in 0..4 {
                out.push(layer.w_h[g].as_slice());
                out.push(layer.w_x[g].as_slice());
                out.push(&layer.b[g]);
            }
        }
        out.push(self.head_w.as_slice());
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(26);
        for layer in [&mut self.layer1, &mut self.layer2] {
            let LstmLayerParams { w_h, w_x, b } = layer;
            for ((wh, wx), bg) in w_h.iter_mut().zip(w_x.iter_mut()).zip(b.iter_mut()) {
                out.push(wh.as_mut_slice());
                out.push(wx.as_mut_slice());
                out.push(bg.as_mut_slice());
            }
        }
        out.push(self.head_w.as_mut_slice());
        out.push(&mut self.head_b);
        out
    }

    /// `(name, rows, cols)` of every tensor, matching [`Self::tensors`].
    pub fn tensor_specs(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::with_capacity(26);
        for (name, layer) in [("layer1", &self.layer1), ("layer2", &self.layer2)] {
            let (n_in, h) = (layer.input_dim(), layer.hidden_dim());
            for g in GATES {
                out.push((format!("{name}.w_h{g}"), h, h));
                out.push((format!("{name}.w_x{g}"), h, n_in));
                out.push((format!("{name}.b_{g}"), h, 1));
            }
        }
        out.push(("head.w".to_string(), self.head_w.rows(), self.head_w.cols()));
        out.push(("head.b".to_string(), self.head_b.len(), 1));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        StackedLstm::zeros(self.input_dim(), self.hidden_dim())
    }

    pub fn add_scaled(&mut self, other: &StackedLstm, s: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Euclidean norm over every parameter.
    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn columns(x: &Matrix) -> Vec<Vec<f64>> {
    (0..x.cols()).map(|t| x.column(t)).collect()
}

fn check_input(model: &StackedLstm, x: &Matrix) -> Result<()> {
    if x.rows() != model.input_dim() || x.cols() == 0 {
        return Err(Error::Contract(format!(
            "input matrix {}x{} does not match model input {}",
            x.rows(),
            x.cols(),
            model.input_dim()
        )));
    }
    Ok(())
}

/// Runs the network from zero state over the columns of `x` (`in x T`) and
/// returns the `in x T` matrix of betas.
pub fn forward_betas(model: &StackedLstm, x: &Matrix) -> Result<Matrix> {
    check_input(model, x)?;
    let n = model.input_dim();
    let mut out = Matrix::zeros(n, x.cols());
    let mut state = model.zero_state();
    for (t, col) in columns(x).iter().enumerate() {
        let beta = model.step(&mut state, col)?;
        for i in 0..n {
            out[(i, t)] = beta[i];
        }
    }
    Ok(out)
}

/// `(1/W) Σ_t [(R_t - X_tᵀ beta_t)² + (p/in) Σ_i |beta_ti|]`
pub fn loss(model: &StackedLstm, x: &Matrix, r: &[f64], penalty: f64) -> Result<f64> {
    if r.len() != x.cols() {
        return Err(Error::Contract("target length does not match input".into()));
    }
    let betas = forward_betas(model, x)?;
    let (n, w) = (x.rows(), x.cols());
    let mut total = 0.0;
    for t in 0..w {
        let pred: f64 = (0..n).map(|i| x[(i, t)] * betas[(i, t)]).sum();
        let l1: f64 = (0..n).map(|i| betas[(i, t)].abs()).sum();
        total += (r[t] - pred).powi(2) + penalty / n as f64 * l1;
    }
    Ok(total / w as f64)
}

struct LayerTrace {
    steps: Vec<StepCache>,
}

fn run_layer(p: &LstmLayerParams, xs: &[Vec<f64>]) -> LayerTrace {
    let h = p.hidden_dim();
    let mut steps: Vec<StepCache> = Vec::with_capacity(xs.len());
    let zero = vec![0.0; h];
    for x in xs {
        let (hp, cp) = match steps.last() {
            Some(s) => (&s.h, &s.c),
            None => (&zero, &zero),
        };
        let s = step_full(p, x, hp, cp);
        steps.push(s);
    }
    LayerTrace { steps }
}

/// Backpropagates `dh` (one vector per step) through a layer, accumulating
/// parameter gradients into `grad`. Returns input gradients when asked.
fn backprop_layer(
    p: &LstmLayerParams,
    xs: &[Vec<f64>],
    trace: &LayerTrace,
    dh_above: &[Vec<f64>],
    grad: &mut LstmLayerParams,
    want_dx: bool,
) -> Vec<Vec<f64>> {
    let h = p.hidden_dim();
    let t_len = xs.len();
    let zero = vec![0.0; h];
    let mut dx: Vec<Vec<f64>> = if want_dx {
        vec![vec![0.0; p.input_dim()]; t_len]
    } else {
        Vec::new()
    };
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; h]);
    for t in (0..t_len).rev() {
        let s = &trace.steps[t];
        let (h_prev, c_prev) = if t == 0 {
            (&zero, &zero)
        } else {
            (&trace.steps[t - 1].h, &trace.steps[t - 1].c)
        };
        let [f, cand, ig, og] = &s.gates;
        for k in 0..h {
            let dh = dh_above[t][k] + dh_next[k];
            let tc = s.c[k].tanh();
            let dc = dc_next[k] + dh * og[k] * (1.0 - tc * tc);
            dz[O][k] = dh * tc * og[k] * (1.0 - og[k]);
            dz[F][k] = dc * c_prev[k] * f[k] * (1.0 - f[k]);
            dz[I][k] = dc * cand[k] * ig[k] * (1.0 - ig[k]);
            dz[C][k] = dc * ig[k] * (1.0 - cand[k] * cand[k]);
            dc_next[k] = dc * f[k];
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for g in 0..4 {
            grad.w_x[g].add_outer(&dz[g], &xs[t]);
            grad.w_h[g].add_outer(&dz[g], h_prev);
            for (b, d) in grad.b[g].iter_mut().zip(&dz[g]) {
                *b += d;
            }
            p.w_h[g].tr_mul_vec_add(&dz[g], &mut dh_next);
            if want_dx {
                p.w_x[g].tr_mul_vec_add(&dz[g], &mut dx[t]);
            }
        }
    }
    dx
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grad(
    model: &StackedLstm,
    x: &Matrix,
    r: &[f64],
    penalty: f64,
) -> Result<(f64, StackedLstm)> {
    check_input(model, x)?;
    if r.len() != x.cols() {
        return Err(Error::Contract("target length does not match input".into()));
    }
    let (n, w) = (x.rows(), x.cols());
    let xs = columns(x);
    let t1 = run_layer(&model.layer1, &xs);
    let h1: Vec<Vec<f64>> = t1.steps.iter().map(|s| s.h.clone()).collect();
    let t2 = run_layer(&model.layer2, &h1);

    let mut grad = model.zeros_like();
    let mut dh2 = vec![vec![0.0; model.hidden_dim()]; w];
    let inv_w = 1.0 / w as f64;
    let l1_coef = penalty / n as f64;
    let mut total = 0.0;
    for t in 0..w {
        let beta = model.head(&t2.steps[t].h);
        let pred: f64 = crate::linalg::dot(&xs[t], &beta);
        let err = r[t] - pred;
        total += err * err + l1_coef * beta.iter().map(|b| b.abs()).sum::<f64>();
        let dpred = -2.0 * err * inv_w;
        let dz: Vec<f64> = (0..n)
            .map(|i| {
                let sign = if beta[i] > 0.0 {
                    1.0
                } else if beta[i] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let dbeta = dpred * xs[t][i] + l1_coef * inv_w * sign;
                dbeta * (1.0 - beta[i] * beta[i])
            })
            .collect();
        grad.head_w.add_outer(&dz, &t2.steps[t].h);
        for (b, d) in grad.head_b.iter_mut().zip(&dz) {
            *b += d;
        }
        model.head_w.tr_mul_vec_add(&dz, &mut dh2[t]);
    }
    let loss = total * inv_w;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("loss is {loss}")));
    }
    let dh1 = backprop_layer(&model.layer2, &h1, &t2, &dh2, &mut grad.layer2, true);
    backprop_layer(&model.layer1, &xs, &t1, &dh1, &mut grad.layer1, false);
    if !grad.is_finite() {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    Ok((loss, grad))
}

/// Gradient of [`loss`] with respect to every parameter.
pub fn backward(model: &StackedLstm, x: &Matrix, r: &[f64], penalty: f64) -> Result<StackedLstm> {
    loss_and_grad(model, x, r, penalty).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng, scale: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
        Matrix::from_vec(rows, cols, data)
    }

    #[test]
    fn zero_params_gate_algebra() {
        let p = LstmLayerParams::zeros(2, 3);
        let c = vec![0.4, -1.0, 2.0];
        let (h, cn) = lstm_step(&p, &[0.0; 2], &[0.0; 3], &c).unwrap();
        for k in 0..3 {
            assert_eq!(cn[k], 0.5 * c[k]);
            assert!((h[k] - 0.5 * (0.5 * c[k]).tanh()).abs() < 1e-16);
        }
        let (h0, _) = lstm_step(&p, &[0.0; 2], &[0.0; 3], &[0.0; 3]).unwrap();
        assert!(h0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn step_matches_straight_line_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmLayerParams::init(3, 4, &mut rng);
        let x = [0.3, -0.2, 0.7];
        let hp = [0.1, -0.4, 0.2, 0.0];
        let cp = [0.5, 0.1, -0.3, 0.9];
        let (h, c) = lstm_step(&p, &x, &hp, &cp).unwrap();
        for k in 0..4 {
            let z = |g: usize| {
                let mut s = p.b[g][k];
                for j in 0..3 {
                    s += p.w_x[g][(k, j)] * x[j];
                }
                for j in 0..4 {
                    s += p.w_h[g][(k, j)] * hp[j];
                }
                s
            };
            let f = 1.0 / (1.0 + (-z(0)).exp());
            let cc = z(1).tanh();
            let i = 1.0 / (1.0 + (-z(2)).exp());
            let o = 1.0 / (1.0 + (-z(3)).exp());
            let c_new = cp[k] * f + i * cc;
            assert!((c[k] - c_new).abs() < 1e-14);
            assert!((h[k] - o * c_new.tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_model_emits_zero_betas_and_zero_loss() {
        let m = StackedLstm::zeros(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_matrix(3, 6, &mut rng, 0.05);
        assert!(forward_betas(&m, &x).unwrap().as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(loss(&m, &x, &[0.0; 6], 1e-5).unwrap(), 0.0);
        let mut r = vec![0.0; 6];
        r[0] = 1.0;
        assert!((loss(&m, &x, &r, 1e-5).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        let g = backward(&m, &x, &[0.0; 6], 1e-5).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn betas_bounded_and_order_dependent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = StackedLstm::init(3, 5, &mut rng);
        m.scale(4.0);
        let x = rand_matrix(3, 20, &mut rng, 2.0);
        let b = forward_betas(&m, &x).unwrap();
        assert!(b.as_slice().iter().all(|v| v.abs() < 1.0));
        let rev = Matrix::from_rows(
            &(0..3)
                .map(|i| x.row(i).iter().rev().copied().collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        );
        let br = forward_betas(&m, &rev).unwrap();
        assert!((b[(0, 19)] - br[(0, 0)]).abs() > 1e-9);
        assert!(matches!(
            forward_betas(&m, &Matrix::zeros(2, 4)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = StackedLstm::init(3, 4, &mut rng);
        let x = rand_matrix(3, 7, &mut rng, 0.5);
        let r: Vec<f64> = (0..7).map(|_| rng.random_range(-0.1..0.1)).collect();
        let p = 1e-2;
        let mut state = m.zero_state();
        let mut total = 0.0;
        for t in 0..7 {
            let xt = x.column(t);
            let beta = m.step(&mut state, &xt).unwrap();
            let mut pred = 0.0;
            let mut l1 = 0.0;
            for i in 0..3 {
                pred += xt[i] * beta[i];
                l1 += beta[i].abs();
            }
            total += (r[t] - pred) * (r[t] - pred) + p * l1 / 3.0;
        }
        assert!((loss(&m, &x, &r, p).unwrap() - total / 7.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = StackedLstm::init(3, 4, &mut rng);
        let x = rand_matrix(3, 5, &mut rng, 1.0);
        let r: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = 1e-3;
        let g = backward(&m, &x, &r, p).unwrap();
        let eps = 1e-5;
        let mut worst = 0.0_f64;
        let grads: Vec<Vec<f64>> = g.tensors().iter().map(|t| t.to_vec()).collect();
        for (ti, tg) in grads.iter().enumerate() {
            for j in 0..tg.len() {
                let mut plus = m.clone();
                plus.tensors_mut()[ti][j] += eps;
                let mut minus = m.clone();
                minus.tensors_mut()[ti][j] -= eps;
                let fd = (loss(&plus, &x, &r, p).unwrap() - loss(&minus, &x, &r, p).unwrap())
                    / (2.0 * eps);
                let a = tg[j];
                let scale = a.abs().max(fd.abs());
                // below 1e-10 the difference is finite-difference roundoff
                if (a - fd).abs() > 1e-10 {
                    worst = worst.max((a - fd).abs() / scale);
                }
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn l1_subgradient_reaches_head_bias() {
        // With zero inputs the squared error has no beta dependence, leaving
        // only the penalty: dL/db = sign(beta) (1 - beta²) p / (in W).
        let mut m = StackedLstm::zeros(2, 3);
        m.head_b = vec![0.3, -0.2];
        let x = Matrix::zeros(2, 4);
        let p = 0.1;
        let g = backward(&m, &x, &[0.0; 4], p).unwrap();
        for (i, b) in m.head_b.iter().enumerate() {
            let beta = b.tanh();
            let expect = beta.signum() * (1.0 - beta * beta) * p / 2.0;
            assert!((g.head_b[i] - expect).abs() < 1e-15);
        }
    }
}
