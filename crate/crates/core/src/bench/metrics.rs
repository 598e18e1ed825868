use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Data(format!("{a} predictions for {b} targets")));
    }
    if a == 0 {
        return Err(Error::Data("no predictions".into()));
    }
    Ok(())
}

pub fn rmse(mean: &[f64], y: &[f64]) -> Result<f64> {
    check_len(mean.len(), y.len())?;
    Ok((mean.iter().zip(y).map(|(m, t)| (m - t).powi(2)).sum::<f64>() / y.len() as f64).sqrt())
}

/// Mean of `log N(y_i; mean_i, var_i)`, where `var` is the full predictive
/// variance (epistemic plus noise).
pub fn mean_log_likelihood(mean: &[f64], var: &[f64], y: &[f64]) -> Result<f64> {
    check_len(mean.len(), y.len())?;
    check_len(var.len(), y.len())?;
    if let Some(i) = var.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Data(format!("predictive variance at point {i} is {} (must be positive)", var[i])));
    }
    let total: f64 = mean
        .iter()
        .zip(var)
        .zip(y)
        .map(|((m, v), t)| -0.5 * (2.0 * PI * v).ln() - (t - m).powi(2) / (2.0 * v))
        .sum();
    Ok(total / y.len() as f64)
}

/// Fraction of true interactions found before the first false positive.
///
/// Subsets of size one are main effects and are skipped. A detected subset
/// matches a truth `S` when it contains `S`; each truth is counted once, and
/// a detection that only contains already matched truths is skipped.
pub fn top_rank_recall(truth: &[Vec<usize>], ranking: &[Vec<usize>]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let contains = |t: &[usize], s: &[usize]| s.iter().all(|v| t.contains(v));
    let mut matched = vec![false; truth.len()];
    for t in ranking.iter().filter(|t| t.len() >= 2) {
        let hits: Vec<usize> = (0..truth.len()).filter(|&k| contains(t, &truth[k])).collect();
        if hits.is_empty() {
            break;
        }
        if let Some(&k) = hits.iter().find(|&&k| !matched[k]) {
            matched[k] = true;
        }
    }
    matched.iter().filter(|&&m| m).count() as f64 / truth.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mll: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_rank_recall: Option<f64>,
}

/// RMSE, MLL and, when both a ground truth and a ranking are given,
/// top-rank recall.
pub fn metrics(mean: &[f64], predictive_var: &[f64], y: &[f64], truth: Option<&[Vec<usize>]>, ranking: Option<&[Vec<usize>]>) -> Result<Metrics> {
    Ok(Metrics {
        rmse: rmse(mean, y)?,
        mll: mean_log_likelihood(mean, predictive_var, y)?,
        top_rank_recall: match (truth, ranking) {
            (Some(t), Some(r)) => Some(top_rank_recall(t, r)),
            _ => None,
        },
    })
}
