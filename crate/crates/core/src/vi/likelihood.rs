use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Likelihood {
    /// `y | f ~ N(f, δ²)` with `δ² = exp(log_noise)`.
    Gaussian { log_noise: f64, trainable: bool },
    /// Labels `0..classes` with softmax probabilities of the outputs.
    Softmax { classes: usize },
}

impl Default for Likelihood {
    fn default() -> Self {
        Likelihood::Gaussian {
            log_noise: 0.0,
            trainable: true,
        }
    }
}

impl Likelihood {
    pub fn gaussian(noise_variance: f64, trainable: bool) -> Result<Self> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(Error::InvalidArgument(format!("noise variance {noise_variance} must be positive")));
        }
        Ok(Likelihood::Gaussian {
            log_noise: noise_variance.ln(),
            trainable,
        })
    }

    pub fn noise_variance(&self) -> Option<f64> {
        match self {
            Likelihood::Gaussian { log_noise, .. } => Some(log_noise.exp()),
            Likelihood::Softmax { .. } => None,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Likelihood::Gaussian { trainable: true, .. })
    }

    pub fn validate(&self, outputs: usize) -> Result<()> {
        match *self {
            Likelihood::Gaussian { log_noise, .. } if !log_noise.is_finite() => {
                Err(Error::InvalidArgument(format!("log noise variance {log_noise} is not finite")))
            }
            Likelihood::Softmax { classes } if classes < 2 || classes != outputs => Err(Error::InvalidArgument(format!(
                "softmax over {classes} classes needs a network with that many (≥ 2) outputs, found {outputs}"
            ))),
            _ => Ok(()),
        }
    }

    /// `Σ_i log p(y_i | f_i)` over the rows of `f`. `log_noise` is the tape
    /// leaf of the noise parameter when it is trained.
    pub fn log_lik_on_tape<'t>(&self, f: Var<'t>, y: &Matrix, log_noise: Option<Var<'t>>) -> Result<Var<'t>> {
        let tape = f.tape();
        let (n, o) = f.shape();
        if y.rows() != n {
            return Err(Error::shape("likelihood targets", y.shape(), f.shape()));
        }
        match *self {
            Likelihood::Gaussian { log_noise: ln, .. } => {
                if y.cols() != o {
                    return Err(Error::shape("likelihood targets", y.shape(), f.shape()));
                }
                let ln_var = log_noise.unwrap_or_else(|| tape.scalar(ln));
                let sq = f.sub(tape.constant(y.clone()))?.square().sum();
                let count = (n * o) as f64;
                let quad = sq.mul(ln_var.neg().exp())?.scale(-0.5);
                Ok(quad.sub(ln_var.scale(0.5 * count))?.offset(-0.5 * count * (2.0 * PI).ln()))
            }
            Likelihood::Softmax { classes } => {
                if y.cols() != 1 || o != classes {
                    return Err(Error::shape("softmax targets", y.shape(), f.shape()));
                }
                let mut onehot = Matrix::zeros(n, classes);
                for i in 0..n {
                    let label = y.get(i, 0);
                    if label < 0.0 || label.fract() != 0.0 || label as usize >= classes {
                        return Err(Error::InvalidArgument(format!("label {label} at row {i} is not a class in 0..{classes}")));
                    }
                    onehot.set(i, label as usize, 1.0);
                }
                f.mul(tape.constant(onehot))?.sum().sub(f.log_sum_exp().sum())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn gaussian_perfect_fit() {
        let tape = Tape::new();
        let f = tape.constant(Matrix::column(vec![1.0, 2.0, 3.0]));
        let y = Matrix::column(vec![1.0, 2.0, 3.0]);
        let ll = Likelihood::gaussian(1.0, false).unwrap().log_lik_on_tape(f, &y, None).unwrap();
        assert!((ll.item() + 1.5 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_uniform_logits() {
        let tape = Tape::new();
        let f = tape.constant(Matrix::zeros(2, 4));
        let y = Matrix::column(vec![0.0, 3.0]);
        let ll = Likelihood::Softmax { classes: 4 }.log_lik_on_tape(f, &y, None).unwrap();
        assert!((ll.item() - 2.0 * (0.25f64).ln()).abs() < 1e-12);
        let bad = Matrix::column(vec![0.0, 4.0]);
        assert!(Likelihood::Softmax { classes: 4 }.log_lik_on_tape(f, &bad, None).is_err());
    }

    #[test]
    fn invalid_noise() {
        assert!(Likelihood::gaussian(0.0, true).is_err());
        assert!(Likelihood::gaussian(-1.0, true).is_err());
    }
}
