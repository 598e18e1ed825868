use std::io::Write;

use log::{debug, info};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::blocks::BayesNet;
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::{Matrix, Tape, Var};
use crate::vi::posterior::{GroupLeaves, VariationalState};
use crate::vi::Likelihood;

/// Tape leaves of everything the ELBO is differentiated with respect to.
pub struct ModelLeaves<'t> {
    pub groups: GroupLeaves<'t>,
    pub log_noise: Option<Var<'t>>,
}

impl<'t> ModelLeaves<'t> {
    pub fn new(tape: &'t Tape, q: &VariationalState, likelihood: &Likelihood) -> Self {
        let log_noise = match likelihood {
            Likelihood::Gaussian { log_noise, trainable: true } => Some(tape.var(Matrix::scalar(*log_noise))),
            _ => None,
        };
        Self {
            groups: q.leaves(tape),
            log_noise,
        }
    }

    /// Leaves in optimizer order: variational parameters, then the noise.
    pub fn all(&self) -> Vec<Var<'t>> {
        self.groups.iter().flatten().copied().chain(self.log_noise).collect()
    }
}

pub struct ElboTerms<'t> {
    pub elbo: Var<'t>,
    pub kl: Var<'t>,
    /// `(n / |batch|) · (1/S) Σ_s log p(y | f_s)`.
    pub loglik: Var<'t>,
}

/// Doubly stochastic ELBO estimate on a minibatch.
#[allow(clippy::too_many_arguments)]
pub fn elbo_estimate<'t>(
    net: &BayesNet,
    q: &VariationalState,
    leaves: &ModelLeaves<'t>,
    likelihood: &Likelihood,
    x: &Matrix,
    y: &Matrix,
    mc_samples: usize,
    n_total: usize,
    rng: &mut dyn RngCore,
) -> Result<ElboTerms<'t>> {
    elbo_terms(net, q, leaves, likelihood, x, y, mc_samples, n_total, rng, false)
}

#[allow(clippy::too_many_arguments)]
fn elbo_terms<'t>(
    net: &BayesNet,
    q: &VariationalState,
    leaves: &ModelLeaves<'t>,
    likelihood: &Likelihood,
    x: &Matrix,
    y: &Matrix,
    mc_samples: usize,
    n_total: usize,
    rng: &mut dyn RngCore,
    smooth_kl: bool,
) -> Result<ElboTerms<'t>> {
    if x.rows() == 0 {
        return Err(Error::InvalidArgument("empty minibatch".into()));
    }
    if mc_samples == 0 {
        return Err(Error::InvalidArgument("mc_samples must be at least 1".into()));
    }
    likelihood.validate(net.output_dim())?;
    let tape = leaves.groups[0][0].tape();
    let xv = tape.constant(x.clone());
    let mut data_term: Option<Var<'t>> = None;
    for _ in 0..mc_samples {
        let v = q.sample_on_tape(&leaves.groups, rng)?;
        let layers = net.forward_tape(xv, &v, Some(&mut *rng))?;
        let f = *layers.last().expect("output layer");
        let ll = likelihood.log_lik_on_tape(f, y, leaves.log_noise)?;
        data_term = Some(match data_term {
            Some(acc) => acc.add(ll)?,
            None => ll,
        });
    }
    let scale = n_total as f64 / (x.rows() as f64 * mc_samples as f64);
    let loglik = data_term.expect("mc_samples ≥ 1").scale(scale);
    let kl = if smooth_kl { q.smooth_kl_on_tape(&leaves.groups)? } else { q.kl_on_tape(&leaves.groups)? };
    Ok(ElboTerms {
        elbo: loglik.sub(kl)?,
        kl,
        loglik,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate at step `t` is `lr · lr_decay^(t / decay_steps)`.
    pub lr_decay: f64,
    pub decay_steps: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// Record a trace row every this many steps (and at the last step).
    pub trace_every: usize,
    /// Apply group-Lasso penalties of point-mass groups as a proximal
    /// (row soft-thresholding) step after each update instead of through
    /// the gradient. Gives exact zeros.
    #[serde(default = "yes")]
    pub proximal: bool,
}

fn yes() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 100,
            lr: 0.01,
            lr_decay: 0.5,
            decay_steps: 2000,
            mc_samples: 1,
            seed: 0,
            trace_every: 10,
            proximal: true,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * self.lr_decay.powf(step as f64 / self.decay_steps.max(1) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub neg_elbo: f64,
    pub kl: f64,
    pub loglik: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            t: 0,
        }
    }

    /// Per-coordinate denominators `√v̂ + ε` of parameter `i`.
    pub fn denominators(&self, i: usize) -> Matrix {
        let c2 = 1.0 - self.beta2.powi(self.t.max(1));
        self.v[i].map(|v| (v / c2).sqrt() + self.eps)
    }

    /// Gradient *descent* step on `params`.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Proximal map of `step · Σ ‖row‖₂` under Adam's diagonal metric,
/// approximated per row by the mean denominator. The bias row is left alone.
fn soft_threshold_rows(w: &mut Matrix, denom: &Matrix, step: f64, bias: bool) {
    let rows = if bias { w.rows() - 1 } else { w.rows() };
    for i in 0..rows {
        let d = denom.row(i).iter().sum::<f64>() / denom.cols() as f64;
        let row = w.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let shrink = if norm > 0.0 { (1.0 - step / (d * norm)).max(0.0) } else { 0.0 };
        row.iter_mut().for_each(|v| *v *= shrink);
    }
}

/// Output of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub q: VariationalState,
    pub likelihood: Likelihood,
    pub trace: Vec<TraceRow>,
}

/// Maximizes the ELBO with minibatch Adam. Deterministic given
/// `config.seed`: minibatch order comes from one stream and all sampling
/// noise from another.
pub fn train(net: &BayesNet, q: VariationalState, likelihood: Likelihood, x: &Matrix, y: &Matrix, config: &TrainConfig) -> Result<TrainOutcome> {
    let n = x.rows();
    if n == 0 || y.rows() != n {
        return Err(Error::Data(format!("{} inputs and {} targets", n, y.rows())));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    likelihood.validate(net.output_dim())?;
    let mut q = q;
    let mut likelihood = likelihood;
    let batch = config.batch_size.min(n);
    let mut shuffle = rng::stream(config.seed, streams::TRAIN_SHUFFLE);
    let mut noise = rng::stream(config.seed, streams::TRAIN_NOISE);
    let mut order = rng::permutation(&mut shuffle, n);
    let mut cursor = 0;

    let mut shapes: Vec<(usize, usize)> = q.params().iter().map(|m| m.shape()).collect();
    if likelihood.is_trainable() {
        shapes.push((1, 1));
    }
    let mut adam = Adam::new(&shapes);
    let prox: Vec<(usize, f64, bool)> = if config.proximal {
        let mut first = 0;
        let mut out = Vec::new();
        for ((g, lambda), &bias) in q.groups.iter().zip(q.proximal_groups()).zip(&q.bias_rows) {
            if let Some(l) = lambda {
                out.push((first, l, bias));
            }
            first += g.params().len();
        }
        out
    } else {
        Vec::new()
    };
    let mut trace = Vec::new();

    for step in 0..config.steps {
        if cursor + batch > n {
            order = rng::permutation(&mut shuffle, n);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let xb = x.select_rows(idx);
        let yb = y.select_rows(idx);

        let tape = Tape::new();
        let leaves = ModelLeaves::new(&tape, &q, &likelihood);
        let terms = elbo_terms(net, &q, &leaves, &likelihood, &xb, &yb, config.mc_samples, n, &mut noise, !prox.is_empty())?;
        let penalty = if prox.is_empty() { 0.0 } else { q.lasso_penalty() };
        let (kl, ll) = (terms.kl.item() + penalty, terms.loglik.item());
        let elbo = ll - kl;
        if !kl.is_finite() {
            return Err(Error::NonFinite { step, term: "kl" });
        }
        if !ll.is_finite() {
            return Err(Error::NonFinite { step, term: "loglik" });
        }
        let loss = terms.elbo.neg();
        let grads = tape.gradient(loss, &leaves.all())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { step, term: "gradient" });
        }
        let lr = config.lr_at(step);
        let mut noise_param = match &mut likelihood {
            Likelihood::Gaussian { log_noise, trainable: true } => Some(Matrix::scalar(*log_noise)),
            _ => None,
        };
        {
            let mut params = q.params_mut();
            if let Some(p) = noise_param.as_mut() {
                params.push(p);
            }
            adam.step(&mut params, &grads, lr);
            for &(i, lambda, bias) in &prox {
                soft_threshold_rows(&mut *params[i], &adam.denominators(i), lr * lambda, bias);
            }
        }
        if let (Some(p), Likelihood::Gaussian { log_noise, .. }) = (noise_param, &mut likelihood) {
            *log_noise = p.item();
        }
        if step % config.trace_every.max(1) == 0 || step + 1 == config.steps {
            trace.push(TraceRow {
                step,
                neg_elbo: -elbo,
                kl,
                loglik: ll,
            });
            debug!("step {step}: -elbo {:.4} kl {kl:.4} loglik {ll:.4}", -elbo);
        }
        if config.steps >= 10 && step % (config.steps / 10) == 0 {
            info!("step {step}/{}: -elbo {:.3}", config.steps, -elbo);
        }
    }
    Ok(TrainOutcome { q, likelihood, trace })
}
