use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::BayesNet;
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::{Matrix, Tape, Var};
use crate::vi::posterior::VariationalState;
use crate::vi::Likelihood;

/// Monte Carlo posterior predictive summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// One `n x outputs` matrix per posterior draw.
    pub draws: Vec<Matrix>,
    pub mean: Matrix,
    /// Variance across draws (epistemic part).
    pub variance: Matrix,
    /// Observation noise variance, when the likelihood has one.
    pub noise_variance: Option<f64>,
}

impl Prediction {
    fn summarize(draws: Vec<Matrix>, noise_variance: Option<f64>) -> Self {
        let (n, o) = draws[0].shape();
        let s = draws.len() as f64;
        let mut mean = Matrix::zeros(n, o);
        for d in &draws {
            mean.add_assign(d).expect("draws share a shape");
        }
        let mean = mean.scale(1.0 / s);
        let mut var = Matrix::zeros(n, o);
        for d in &draws {
            let diff = d.sub(&mean).expect("draws share a shape");
            var.add_assign(&diff.hadamard(&diff).expect("same shape")).expect("same shape");
        }
        Prediction {
            draws,
            variance: var.scale(1.0 / s),
            mean,
            noise_variance,
        }
    }

    /// Mean of the first output.
    pub fn mean_vec(&self) -> Vec<f64> {
        self.mean.col(0)
    }

    /// Epistemic variance plus noise, first output.
    pub fn predictive_variance(&self) -> Vec<f64> {
        let noise = self.noise_variance.unwrap_or(0.0);
        self.variance.col(0).into_iter().map(|v| v + noise).collect()
    }

    /// Applies `y = a + b f` to every draw (and rescales the noise).
    pub fn rescale(self, offset: f64, scale: f64) -> Prediction {
        let draws = self.draws.into_iter().map(|d| d.map(|v| offset + scale * v)).collect();
        Prediction::summarize(draws, self.noise_variance.map(|v| v * scale * scale))
    }
}

/// Draw `i` uses the stream `(seed, PREDICT_BASE + i)`, so the draws do not
/// depend on how many are taken or on thread scheduling.
pub fn sample_weights(q: &VariationalState, seed: u64, draw: usize) -> Vec<Matrix> {
    q.sample(&mut rng::stream(seed, streams::PREDICT_BASE + draw as u64))
}

pub fn predict(net: &BayesNet, q: &VariationalState, likelihood: &Likelihood, x: &Matrix, mc_samples: usize, seed: u64) -> Result<Prediction> {
    if mc_samples == 0 {
        return Err(Error::InvalidArgument("mc_samples must be at least 1".into()));
    }
    let draws: Vec<Matrix> = (0..mc_samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, streams::PREDICT_BASE + i as u64);
            let v = q.sample(&mut r);
            let tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv: Vec<Var<'_>> = v.into_iter().map(|w| tape.constant(w)).collect();
            let layers = net.forward_tape(xv, &wv, Some(&mut r))?;
            Ok(layers.last().expect("output layer").to_matrix())
        })
        .collect::<Result<_>>()?;
    Ok(Prediction::summarize(draws, likelihood.noise_variance()))
}
