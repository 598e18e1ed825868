use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bench::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::Matrix;

/// Input dimension of every synthetic function.
pub const SYNTHETIC_DIM: usize = 10;

/// The four synthetic regression functions, with inputs on `(0, 1]^10`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntheticFunction {
    F1,
    F2,
    F3,
    F4,
}

impl SyntheticFunction {
    pub const ALL: [SyntheticFunction; 4] = [Self::F1, Self::F2, Self::F3, Self::F4];

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::F1),
            2 => Ok(Self::F2),
            3 => Ok(Self::F3),
            4 => Ok(Self::F4),
            _ => Err(Error::InvalidArgument(format!("unknown synthetic function f{id}; expected 1 to 4"))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Self::F1 => 1,
            Self::F2 => 2,
            Self::F3 => 3,
            Self::F4 => 4,
        }
    }

    /// `x` is 0-indexed: `x[0]` is `x1`.
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Self::F1 => 10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4],
            Self::F2 => 10.0 * (x[0] * x[1]).exp() - 20.0 * (x[2] + x[3] + x[4]).cos() + 7.0 * (x[8] * x[9]).asin(),
            Self::F3 => {
                ((x[0] * x[1]).abs() + 1.0).exp() + ((x[2] + x[3]).abs() + 1.0).exp() - 19.0 * (x[4] + x[5]).cos()
                    - 10.0 * (x[7] * x[7] + x[8] * x[8] + x[9] * x[9]).sqrt()
            }
            Self::F4 => {
                1.0 / (1.0 + x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) - 5.0 * (x[3] + x[4]).exp().sqrt()
                    + 10.0 * (x[5] + x[6]).abs()
                    + 6.0 * x[7] * x[8] * x[9]
            }
        }
    }

    /// Non-additive feature groups, 0-indexed.
    pub fn interactions(self) -> Vec<Vec<usize>> {
        match self {
            Self::F1 => vec![vec![0, 1]],
            Self::F2 => vec![vec![0, 1], vec![2, 3, 4], vec![8, 9]],
            Self::F3 => vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![7, 8, 9]],
            Self::F4 => vec![vec![0, 1, 2], vec![3, 4], vec![5, 6], vec![7, 8, 9]],
        }
    }
}

impl fmt::Display for SyntheticFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.id())
    }
}

impl FromStr for SyntheticFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id = s.trim().trim_start_matches(['f', 'F']);
        id.parse::<u8>()
            .map_err(|_| Error::InvalidArgument(format!("unknown synthetic function '{s}'")))
            .and_then(Self::from_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub function: SyntheticFunction,
    /// 0-indexed feature sets.
    pub interactions: Vec<Vec<usize>>,
    pub noise_variance: f64,
}

fn feature_names() -> Vec<String> {
    (1..=SYNTHETIC_DIM).map(|i| format!("x{i}")).collect()
}

fn sample(f: SyntheticFunction, n: usize, noise_variance: f64, seed: u64, x_stream: u64, noise_stream: u64) -> Result<Dataset> {
    let mut xr = rng::stream(seed, x_stream);
    let mut nr = rng::stream(seed, noise_stream);
    let x = Matrix::from_fn(n, SYNTHETIC_DIM, |_, _| rng::uniform_open_closed(&mut xr));
    let sd = noise_variance.sqrt();
    let y = (0..n).map(|i| f.eval(x.row(i)) + sd * rng::normal(&mut nr)).collect();
    let mut d = Dataset::new(x, y, feature_names(), "y")?;
    d.seed = Some(seed);
    Ok(d)
}

/// `n` training-style samples `y = f(x) + ε`, `x ~ U(0, 1]^10`,
/// `ε ~ N(0, σ²)`. Inputs and noise come from separate streams, so changing
/// `σ²` keeps the inputs.
pub fn generate_synthetic(fid: u8, n: usize, noise_variance: f64, seed: u64) -> Result<(Dataset, GroundTruth)> {
    let f = SyntheticFunction::from_id(fid)?;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if !(noise_variance >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance {noise_variance} must be nonnegative")));
    }
    let d = sample(f, n, noise_variance, seed, streams::DATA_TRAIN, streams::DATA_NOISE_TRAIN)?;
    Ok((
        d,
        GroundTruth {
            function: f,
            interactions: f.interactions(),
            noise_variance,
        },
    ))
}

/// Independent train and test draws from the same seed.
pub fn generate_train_test(fid: u8, n_train: usize, n_test: usize, noise_variance: f64, seed: u64) -> Result<(Dataset, Dataset, GroundTruth)> {
    let (train, truth) = generate_synthetic(fid, n_train, noise_variance, seed)?;
    if n_test == 0 {
        return Err(Error::InvalidArgument("need at least one test sample".into()));
    }
    let test = sample(truth.function, n_test, noise_variance, seed, streams::DATA_TEST, streams::DATA_NOISE_TEST)?;
    Ok((train, test, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_at_half() {
        let x = [0.5; 10];
        let want = 10.0 / 2f64.sqrt() + 7.5;
        assert!((SyntheticFunction::F1.eval(&x) - want).abs() < 1e-12);
    }

    #[test]
    fn f4_at_ones() {
        let x = [1.0; 10];
        let want = 26.25 - 5.0 * std::f64::consts::E;
        assert!((SyntheticFunction::F4.eval(&x) - want).abs() < 1e-12);
    }

    #[test]
    fn noiseless_and_deterministic() {
        let (a, _) = generate_synthetic(2, 50, 0.0, 3).unwrap();
        let (b, _) = generate_synthetic(2, 50, 0.0, 3).unwrap();
        assert_eq!(a, b);
        for i in 0..a.len() {
            assert_eq!(a.y[i], SyntheticFunction::F2.eval(a.x.row(i)));
            assert!(a.x.row(i).iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        let (noisy, _) = generate_synthetic(2, 50, 1.0, 3).unwrap();
        assert_eq!(noisy.x, a.x);
        assert_ne!(noisy.y, a.y);
    }

    #[test]
    fn invalid_id() {
        assert!(generate_synthetic(5, 10, 1.0, 0).is_err());
        assert_eq!("f3".parse::<SyntheticFunction>().unwrap(), SyntheticFunction::F3);
    }

    #[test]
    fn train_and_test_differ() {
        let (tr, te, truth) = generate_train_test(1, 20, 20, 1.0, 0).unwrap();
        assert_ne!(tr.x, te.x);
        assert_eq!(truth.interactions, vec![vec![0, 1]]);
    }
}
