//! Exhaustive reference answers for small tasks.

use thiserror::Error;

use crate::model::{evaluate_unchecked, is_close, FeatureDomain};
use crate::verify::VerificationTask;

pub const MAX_ORACLE_SIZE: u128 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("{size} candidate pairs exceed the oracle limit of {limit}")]
    SizeExceeded { size: u128, limit: u128 },
    #[error("grid density must be at least 2 for continuous features")]
    BadDensity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Minimum of `f(x) - f(x')` over the enumerated close pairs.
    pub min_gap: f64,
    pub argmin: (Vec<f64>, Vec<f64>),
    /// First enumerated pair that is a bias instance.
    pub bias: Option<(Vec<f64>, Vec<f64>)>,
    pub pairs_checked: u64,
}

fn axis(d: &FeatureDomain, density: usize) -> Vec<f64> {
    if d.is_discrete() {
        d.values()
    } else if d.width() == 0.0 {
        vec![d.lower]
    } else {
        let step = d.width() / (density - 1) as f64;
        (0..density)
            .map(|k| {
                if k + 1 == density {
                    d.upper
                } else {
                    d.lower + k as f64 * step
                }
            })
            .collect()
    }
}

fn grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(axes.len())];
    for a in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                a.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// Enumerates every discrete combination and a `density`-point grid on each
/// continuous feature, checking all close pairs.
pub fn brute_force_oracle(
    task: &VerificationTask,
    density: usize,
) -> Result<OracleResult, OracleError> {
    if density < 2
        && task
            .domains
            .iter()
            .any(|d| !d.is_discrete() && d.width() > 0.0)
    {
        return Err(OracleError::BadDensity);
    }
    let axes: Vec<Vec<f64>> = task.domains.iter().map(|d| axis(d, density)).collect();
    let points: u128 = axes
        .iter()
        .fold(1u128, |acc, a| acc.saturating_mul(a.len() as u128));
    let size = points.saturating_mul(points);
    if size > MAX_ORACLE_SIZE {
        return Err(OracleError::SizeExceeded {
            size,
            limit: MAX_ORACLE_SIZE,
        });
    }
    let pts = grid(&axes);
    let values: Vec<f64> = pts
        .iter()
        .map(|p| evaluate_unchecked(&task.model, p))
        .collect();
    let mut best = (f64::INFINITY, 0usize, 0usize);
    let mut bias = None;
    let mut checked = 0u64;
    for (i, x) in pts.iter().enumerate() {
        for (j, xp) in pts.iter().enumerate() {
            if !is_close(&task.spec, x, xp) {
                continue;
            }
            checked += 1;
            let gap = values[i] - values[j];
            if gap < best.0 {
                best = (gap, i, j);
            }
            if bias.is_none() && task.check(x, xp) {
                bias = Some((x.clone(), xp.clone()));
            }
        }
    }
    Ok(OracleResult {
        min_gap: best.0,
        argmin: (pts[best.1].clone(), pts[best.2].clone()),
        bias,
        pairs_checked: checked,
    })
}
