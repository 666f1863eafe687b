//! Synthetic scenarios with a planted or masked dependence on a protected
//! boolean feature (feature 0).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{
    DomainFile, ModelFile, PerturbationFile, ScenarioFile, SupportVector, ThresholdValue,
};
use crate::model::{FeatureKind, OutputMode, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Poly,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    Planted,
    Masked,
}

fn layout(n: usize) -> (Vec<DomainFile>, PerturbationFile) {
    let mut domains = vec![DomainFile {
        kind: FeatureKind::Discrete,
        lower: 0.0,
        upper: 1.0,
    }];
    domains.extend((1..n).map(|_| DomainFile {
        kind: FeatureKind::Continuous,
        lower: 0.0,
        upper: 1.0,
    }));
    let mut blocks = vec![vec![0]];
    let mut thresholds = vec![ThresholdValue(Threshold::Infinity)];
    if n > 1 {
        blocks.push((1..n).collect());
        thresholds.push(ThresholdValue(Threshold::Finite(0.0)));
    }
    (
        domains,
        PerturbationFile {
            blocks,
            thresholds,
            delta: 0.0,
        },
    )
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Protected weight `W` and a bias placing the decision boundary between
/// `x_0 = 0` and `x_0 = 1` at the box center, so `f(0, c) = -W/2` and
/// `f(1, c) = W/2`.
fn linear(rng: &mut ChaCha8Rng, n: usize, bias: BiasKind) -> ModelFile {
    let others: Vec<f64> = (1..n).map(|_| round4(rng.gen_range(-1.0..1.0))).collect();
    let w0 = round4(rng.gen_range(2.0..4.0));
    let center: f64 = others.iter().map(|w| 0.5 * w).sum();
    let b = -0.5 * w0 - center;
    let mut weights = vec![if bias == BiasKind::Planted { w0 } else { 0.0 }];
    weights.extend(others);
    ModelFile::Linear { weights, bias: b }
}

/// `(x . v + 1)^2` kernel. `W (x_0 + 1)^2 - 2W` changes sign with `x_0` and
/// dominates the small support vectors, whose protected coordinate is 0.
fn poly(rng: &mut ChaCha8Rng, n: usize, bias: BiasKind) -> ModelFile {
    let mut svs = Vec::new();
    let mut spread = 0.0;
    for _ in 0..2 {
        let mut v = vec![0.0];
        v.extend((1..n).map(|_| round4(rng.gen_range(-0.3..0.3))));
        let w = round4(rng.gen_range(0.05..0.2));
        let reach = 1.0 + v.iter().map(|c: &f64| c.abs()).sum::<f64>();
        spread += w * reach * reach;
        svs.push(SupportVector {
            weight: w,
            label: if rng.gen_bool(0.5) { 1 } else { -1 },
            vector: v,
        });
    }
    let big = (1.0 + spread).ceil();
    let mut e0 = vec![0.0; n];
    if bias == BiasKind::Planted {
        e0[0] = 1.0;
    }
    svs.push(SupportVector {
        weight: big,
        label: 1,
        vector: e0,
    });
    svs.push(SupportVector {
        weight: 2.0 * big,
        label: -1,
        vector: vec![0.0; n],
    });
    ModelFile::Poly {
        scale: 1.0,
        offset: 1.0,
        degree: 2,
        support_vectors: svs,
    }
}

/// Positive support vectors at `x_0 = 1`, negative at `x_0 = 0`, all near a
/// common center in the other coordinates. Masking moves every protected
/// coordinate to 0, which scales `f` by `exp(-gamma x_0^2)` and keeps its
/// sign.
fn rbf(rng: &mut ChaCha8Rng, n: usize, bias: BiasKind) -> ModelFile {
    let center: Vec<f64> = (1..n).map(|_| round4(rng.gen_range(0.3..0.7))).collect();
    let mut svs = Vec::new();
    for k in 0..4 {
        let label: i8 = if k % 2 == 0 { 1 } else { -1 };
        let mut v = vec![if label == 1 && bias == BiasKind::Planted {
            1.0
        } else {
            0.0
        }];
        v.extend(
            center
                .iter()
                .map(|c| round4(c + rng.gen_range(-0.05..0.05))),
        );
        svs.push(SupportVector {
            weight: round4(rng.gen_range(0.8..1.2)),
            label,
            vector: v,
        });
    }
    ModelFile::Rbf {
        gamma: 1.0,
        support_vectors: svs,
    }
}

/// Deterministic in `(family, n, seed, bias)`. Requires `n >= 2`.
pub fn generate_scenario(family: Family, n: usize, seed: u64, bias: BiasKind) -> ScenarioFile {
    assert!(n >= 2, "generated scenarios need at least two features");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = match family {
        Family::Linear => linear(&mut rng, n, bias),
        Family::Poly => poly(&mut rng, n, bias),
        Family::Rbf => rbf(&mut rng, n, bias),
    };
    let (domains, perturbation) = layout(n);
    ScenarioFile {
        model,
        domains,
        perturbation,
        fixed: None,
        relax: Vec::new(),
        mode: OutputMode::Classification,
        rbf: None,
    }
}
