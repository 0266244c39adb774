//! Small fully connected noise predictor `ε̂(x_t, t)` with hand-written
//! backpropagation and plain minibatch SGD.
//!
//! Input is `[x_t, emb(t)]` with a sinusoidal time embedding; hidden layers
//! use `tanh`, the output layer is linear.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, DenoisingDistribution};
use crate::error::{check_dim, Error, Result};
use crate::rng::{RngStream, StreamLabel};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeEmbedding {
    pub width: usize,
    pub base: f64,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self { width: 16, base: 1e4 }
    }
}

impl TimeEmbedding {
    /// `[sin(t·ω_k)…, cos(t·ω_k)…]` with `ω_k = base^(−k / (width/2))`.
    pub fn embed(&self, t: usize) -> Vec<f64> {
        let half = self.width / 2;
        let mut out = Vec::with_capacity(self.width);
        let freqs: Vec<f64> = (0..half).map(|k| self.base.powf(-(k as f64) / half as f64)).collect();
        out.extend(freqs.iter().map(|w| (t as f64 * w).sin()));
        out.extend(freqs.iter().map(|w| (t as f64 * w).cos()));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDenoiser {
    pub layer_sizes: Vec<usize>,
    /// One row-major `out × in` matrix per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub time_embedding: TimeEmbedding,
    pub schedule_hash: String,
}

impl MlpDenoiser {
    pub fn zeros(dim: usize, hidden: &[usize], time_embedding: TimeEmbedding) -> Self {
        let mut layer_sizes = vec![dim + time_embedding.width];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(dim);
        let weights = layer_sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Self { layer_sizes, weights, biases, time_embedding, schedule_hash: String::new() }
    }

    /// Gaussian weights scaled by `1/√fan_in`, zero biases.
    pub fn initialized(dim: usize, hidden: &[usize], time_embedding: TimeEmbedding, rng: &RngStream) -> Self {
        let mut model = Self::zeros(dim, hidden, time_embedding);
        let mut g = rng.generator();
        for (l, w) in model.weights.iter_mut().enumerate() {
            let scale = 1.0 / (model.layer_sizes[l] as f64).sqrt();
            w.iter_mut().for_each(|v| *v = scale * g.sample::<f64, _>(StandardNormal));
        }
        model
    }

    pub fn dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.layer_sizes.len();
        if l < 2 || self.weights.len() != l - 1 || self.biases.len() != l - 1 {
            return Err(Error::Config("MLP layer lists are inconsistent".into()));
        }
        check_dim(self.layer_sizes[0], self.dim() + self.time_embedding.width)?;
        for (k, w) in self.layer_sizes.windows(2).enumerate() {
            check_dim(w[0] * w[1], self.weights[k].len())?;
            check_dim(w[1], self.biases[k].len())?;
        }
        if self.parameters().iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("MLP has non-finite parameters".into()));
        }
        Ok(())
    }

    fn input(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        let mut v = x_t.to_vec();
        v.extend(self.time_embedding.embed(t));
        v
    }

    /// Activations of every layer, input first.
    fn forward(&self, input: Vec<f64>) -> Vec<Vec<f64>> {
        let last = self.weights.len() - 1;
        let mut acts = vec![input];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let a = acts.last().unwrap();
            let n_in = a.len();
            let mut z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, bo)| bo + w[o * n_in..(o + 1) * n_in].iter().zip(a).map(|(x, y)| x * y).sum::<f64>())
                .collect();
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict_eps(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        self.forward(self.input(x_t, t)).pop().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flat parameter vector: per layer, weights then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            p.extend_from_slice(w);
            p.extend_from_slice(b);
        }
        p
    }

    pub fn set_parameters(&mut self, p: &[f64]) {
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&p[off..off + nw]);
            off += nw;
            b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    /// Mean over the batch of `‖ε̂(x_t, t) − ε‖²` and its gradient in
    /// [`parameters`](Self::parameters) order.
    pub fn loss_and_grad(&self, batch: &[(Vec<f64>, usize, Vec<f64>)]) -> (f64, Vec<f64>) {
        let mut grad_w: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut grad_b: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (x_t, t, eps) in batch {
            let acts = self.forward(self.input(x_t, *t));
            let out = acts.last().unwrap();
            let mut delta: Vec<f64> = out.iter().zip(eps).map(|(o, e)| 2.0 * scale * (o - e)).collect();
            loss += scale * out.iter().zip(eps).map(|(o, e)| (o - e).powi(2)).sum::<f64>();
            for l in (0..self.weights.len()).rev() {
                let a_prev = &acts[l];
                let n_in = a_prev.len();
                for (o, d) in delta.iter().enumerate() {
                    grad_b[l][o] += d;
                    let row = &mut grad_w[l][o * n_in..(o + 1) * n_in];
                    row.iter_mut().zip(a_prev).for_each(|(g, a)| *g += d * a);
                }
                if l == 0 {
                    break;
                }
                let w = &self.weights[l];
                delta = (0..n_in)
                    .map(|i| {
                        let back: f64 = delta.iter().enumerate().map(|(o, d)| w[o * n_in + i] * d).sum();
                        back * (1.0 - a_prev[i] * a_prev[i])
                    })
                    .collect();
            }
        }
        let mut grad = Vec::with_capacity(self.parameter_count());
        for (w, b) in grad_w.iter().zip(&grad_b) {
            grad.extend_from_slice(w);
            grad.extend_from_slice(b);
        }
        (loss, grad)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn mlp_predict_eps(model: &MlpDenoiser, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
    check_dim(model.dim(), x_t.len())?;
    Ok(model.predict_eps(x_t, t))
}

/// `(x_t − β_t/√(1−ᾱ_t)·ε̂) / √α_t` with the schedule's step variance.
pub fn mlp_denoise(model: &MlpDenoiser, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<DenoisingDistribution> {
    schedule.check_step(t)?;
    let eps = mlp_predict_eps(model, x_t, t)?;
    let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let mean = x_t.iter().zip(&eps).map(|(x, e)| inv_sqrt_alpha * (x - coef * e)).collect();
    DenoisingDistribution::new(mean, schedule.step_variance(t), t)
}

impl Denoiser for MlpDenoiser {
    fn dim(&self) -> usize {
        MlpDenoiser::dim(self)
    }
    fn denoise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<DenoisingDistribution> {
        mlp_denoise(self, x_t, t, schedule)
    }
    fn predict_x0(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        if t == 0 {
            return Ok(x_t.to_vec());
        }
        schedule.check_step(t)?;
        let eps = mlp_predict_eps(self, x_t, t)?;
        let ab = schedule.alpha_bar(t);
        Ok(x_t.iter().zip(&eps).map(|(x, e)| (x - (1.0 - ab).sqrt() * e) / ab.sqrt()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub time_embedding: TimeEmbedding,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 0,
            hidden: vec![64, 64],
            time_embedding: TimeEmbedding::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub steps: usize,
}

/// Initialization draws from the training stream at this counter; SGD step
/// `s` of epoch `e` draws at `(e, s)`.
const INIT_COUNTER: (u64, u64) = (u64::MAX, 0);

/// SGD on `‖ε − ε̂(√ᾱ_t x0 + √(1−ᾱ_t) ε, t)‖²` over random `(x0, t, ε)`.
pub fn mlp_train(dataset: &[Vec<f64>], schedule: &NoiseSchedule, hyper: &TrainHyper) -> Result<(MlpDenoiser, TrainReport)> {
    let Some(first) = dataset.first() else {
        return Err(Error::Config("training dataset is empty".into()));
    };
    let dim = first.len();
    for x in dataset {
        check_dim(dim, x.len())?;
    }
    if hyper.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(hyper.learning_rate >= 0.0 && hyper.learning_rate.is_finite()) {
        return Err(Error::Config(format!("invalid learning rate {}", hyper.learning_rate)));
    }
    let stream = RngStream::new(hyper.seed, StreamLabel::Training);
    let mut model = MlpDenoiser::initialized(
        dim,
        &hyper.hidden,
        hyper.time_embedding.clone(),
        &stream.at(INIT_COUNTER.0, INIT_COUNTER.1),
    );
    model.schedule_hash = schedule.hash();

    let steps_per_epoch = dataset.len().div_ceil(hyper.batch_size);
    let mut params = model.parameters();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut epoch_loss = 0.0;
        for step in 0..steps_per_epoch {
            let mut g = stream.at(epoch as u64, step as u64).generator();
            let batch: Vec<(Vec<f64>, usize, Vec<f64>)> = (0..hyper.batch_size)
                .map(|_| {
                    let x0 = &dataset[g.gen_range(0..dataset.len())];
                    let t = g.gen_range(1..=schedule.steps());
                    let eps: Vec<f64> = (0..dim).map(|_| g.sample(StandardNormal)).collect();
                    let ab = schedule.alpha_bar(t);
                    let x_t = x0.iter().zip(&eps).map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e).collect();
                    (x_t, t, eps)
                })
                .collect();
            let (loss, grad) = model.loss_and_grad(&batch);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss became {loss} at epoch {epoch}, step {step}")));
            }
            epoch_loss += loss / steps_per_epoch as f64;
            params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= hyper.learning_rate * g);
            model.set_parameters(&params);
        }
        epoch_losses.push(epoch_loss);
    }
    let final_loss = epoch_losses.last().copied().unwrap_or(f64::NAN);
    Ok((model, TrainReport { epoch_losses, final_loss, steps: hyper.epochs * steps_per_epoch }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::gmm::{gmm_denoise, GaussianMixturePrior};
    use crate::schedule::ScheduleParams;

    fn tiny(seed: u64) -> MlpDenoiser {
        MlpDenoiser::initialized(3, &[5, 4], TimeEmbedding { width: 4, base: 100.0 }, &RngStream::new(seed, StreamLabel::Training))
    }

    #[test]
    fn zero_model_predicts_zero() {
        let m = MlpDenoiser::zeros(2, &[8], TimeEmbedding::default());
        assert_eq!(m.predict_eps(&[0.3, -2.0], 17), vec![0.0, 0.0]);
        let s = ScheduleParams::default().build().unwrap();
        let d = mlp_denoise(&m, &[0.3, -2.0], 17, &s).unwrap();
        let a = s.alpha(17).sqrt();
        assert_eq!(d.mean, vec![0.3 / a, -2.0 / a]);
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = tiny(4);
        assert_eq!(m.predict_eps(&[0.1, 0.2, 0.3], 9), m.predict_eps(&[0.1, 0.2, 0.3], 9));
        assert!(mlp_predict_eps(&m, &[0.1], 9).is_err());
    }

    #[test]
    fn backprop_matches_central_differences() {
        for seed in 0..3 {
            let mut m = tiny(seed);
            // non-zero biases so every parameter matters
            let mut p = m.parameters();
            for (k, v) in p.iter_mut().enumerate() {
                *v += 0.05 * ((k as f64) * 0.7).sin();
            }
            m.set_parameters(&p);
            let batch = vec![
                (vec![0.4, -0.2, 1.1], 3, vec![0.5, -1.0, 0.2]),
                (vec![-0.7, 0.9, 0.0], 40, vec![-0.3, 0.8, 1.5]),
            ];
            let (_, grad) = m.loss_and_grad(&batch);
            let h = 1e-5;
            for k in 0..p.len() {
                let mut plus = m.clone();
                let mut minus = m.clone();
                let mut pp = p.clone();
                pp[k] += h;
                plus.set_parameters(&pp);
                pp[k] -= 2.0 * h;
                minus.set_parameters(&pp);
                let fd = (plus.loss_and_grad(&batch).0 - minus.loss_and_grad(&batch).0) / (2.0 * h);
                let denom = fd.abs().max(grad[k].abs()).max(1e-6);
                assert!((fd - grad[k]).abs() / denom <= 1e-4, "param {k}: fd {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let s = ScheduleParams::default().build().unwrap();
        let data = vec![vec![0.5, -0.5]; 8];
        let hyper = TrainHyper { epochs: 3, learning_rate: 0.0, hidden: vec![6], batch_size: 4, ..Default::default() };
        let (trained, _) = mlp_train(&data, &s, &hyper).unwrap();
        let init = MlpDenoiser::initialized(
            2,
            &[6],
            TimeEmbedding::default(),
            &RngStream::new(0, StreamLabel::Training).at(INIT_COUNTER.0, INIT_COUNTER.1),
        );
        let a: Vec<u64> = trained.parameters().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = init.parameters().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let s = ScheduleParams::default().build().unwrap();
        let data = vec![vec![1.0, -1.0]; 16];
        let hyper = TrainHyper { epochs: 1000, batch_size: 8, learning_rate: 0.02, hidden: vec![32], ..Default::default() };
        let (a, report) = mlp_train(&data, &s, &hyper).unwrap();
        let (b, _) = mlp_train(&data, &s, &hyper).unwrap();
        assert_eq!(a, b);
        assert_eq!(report.steps, 2000);
        let first = report.epoch_losses[0];
        let tail: f64 = report.epoch_losses[report.epoch_losses.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(tail <= 0.5 * first, "first {first}, tail {tail}");
    }

    #[test]
    fn trained_mean_agrees_with_analytic_denoiser() {
        let s = ScheduleParams::default().build().unwrap();
        let prior = GaussianMixturePrior::new(
            vec![0.5, 0.5],
            vec![vec![1.5, 1.0], vec![-1.5, -1.0]],
            vec![vec![0.1, 0.1], vec![0.1, 0.1]],
        )
        .unwrap();
        let data: Vec<Vec<f64>> =
            (0..512).map(|i| prior.sample(&RngStream::new(7, StreamLabel::Dataset).at(0, i))).collect();
        let hyper = TrainHyper { epochs: 60, batch_size: 32, learning_rate: 0.02, hidden: vec![32, 32], ..Default::default() };
        let (model, _) = mlp_train(&data, &s, &hyper).unwrap();
        let t = 50;
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..200 {
            let x0 = prior.sample(&RngStream::new(99, StreamLabel::Dataset).at(1, i));
            let x_t = crate::schedule::forward_noise(&x0, t, &s, &RngStream::new(99, StreamLabel::Dataset).at(2, i)).unwrap();
            let a = mlp_denoise(&model, &x_t, t, &s).unwrap().mean;
            let b = gmm_denoise(&prior, &x_t, t, &s).unwrap().mean;
            for k in 0..2 {
                dot += a[k] * b[k];
                na += a[k] * a[k];
                nb += b[k] * b[k];
            }
        }
        let cos = dot / (na * nb).sqrt();
        assert!(cos > 0.9, "cosine {cos}");
    }

    #[test]
    fn embedding_layout() {
        let e = TimeEmbedding::default().embed(0);
        assert_eq!(e.len(), 16);
        assert!(e[..8].iter().all(|v| *v == 0.0));
        assert!(e[8..].iter().all(|v| *v == 1.0));
    }

    #[test]
    fn json_round_trip() {
        let m = tiny(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(MlpDenoiser::load(&path).unwrap(), m);
    }

    #[test]
    fn empty_dataset_rejected() {
        let s = ScheduleParams::default().build().unwrap();
        assert!(matches!(mlp_train(&[], &s, &TrainHyper::default()), Err(Error::Config(_))));
    }
}
