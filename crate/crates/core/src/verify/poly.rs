use crate::model::{BoundConvention, ModelSpec};
use crate::poly::{build_gap_polynomial, expand_poly_kernel, integer_range_polynomial, Polynomial};
use crate::sos::{run_hierarchy, HierarchyOptions, SemiAlgebraicSet};

use super::{
    aggregate, enumerate_fixed_pairs, run_parallel, FixedPair, PairLayout, SubproblemResult,
    VerificationTask, VerifyConfig, VerifyError, VerifyOutcome,
};

/// The layout's feasible set: box, closeness rows, and a vanishing
/// polynomial for each non-relaxed discrete variable.
fn pair_set(task: &VerificationTask, layout: &PairLayout) -> Result<SemiAlgebraicSet, VerifyError> {
    let n = layout.nvars();
    let mut set = SemiAlgebraicSet::new_box(layout.lower.clone(), layout.upper.clone())?;
    for &(a, b, eps) in &layout.closeness {
        let mut diff = vec![0.0; n];
        diff[a] = 1.0;
        diff[b] = -1.0;
        let neg: Vec<f64> = diff.iter().map(|v| -v).collect();
        set.add_inequality(Polynomial::affine(eps, &diff))?;
        set.add_inequality(Polynomial::affine(eps, &neg))?;
    }
    for k in layout.integer_vars() {
        let d = &task.domains[layout.feature[k]];
        let card = d.cardinality().unwrap_or(0);
        if card >= 2 {
            set.add_equality(integer_range_polynomial(n, k, d.lower, (card - 1) as u32)?)?;
        }
    }
    Ok(set)
}

fn check_supported(task: &VerificationTask) -> Result<(), VerifyError> {
    for (i, d) in task.domains.iter().enumerate() {
        if task.fixed_set.contains(&i) || task.relax_set.contains(&i) {
            continue;
        }
        if let Some(c) = d.cardinality() {
            if c > 3 {
                return Err(VerifyError::UnsupportedDiscrete {
                    feature: i,
                    cardinality: c,
                });
            }
        }
    }
    Ok(())
}

fn poly_pair(
    task: &VerificationTask,
    config: &VerifyConfig,
    gap: &Polynomial,
    pair: &FixedPair,
) -> Result<SubproblemResult, VerifyError> {
    let layout = PairLayout::new(task, pair);
    let n = layout.nvars();
    let g = gap.substitute(&layout.gap_map(), n);
    let target = -task.output_threshold();

    if g.is_constant() {
        // every feasible pair attains the constant; the lower corner is one
        let c = g.constant_term();
        let mut out = SubproblemResult::new(pair.clone(), c, "exact");
        let (x, xp) = layout.lift(&layout.lower);
        out.offer_witness(task, x, xp, c);
        if !out.witness_valid {
            out.spurious = None;
        }
        return Ok(out);
    }

    let set = pair_set(task, &layout)?;
    let d0 = g.degree().div_ceil(2).max(set.min_degree());
    let d_max = match config.sos.max_degree {
        Some(d) => d.max(d0),
        None => d0 + config.sos.extra_degrees,
    };
    let options = HierarchyOptions {
        max_rows: config.sos.max_rows,
        ..HierarchyOptions::default()
    };
    let levels = run_hierarchy(&g, &set, d0, d_max, target, &options)?;
    let Some(last) = levels.last() else {
        return Ok(SubproblemResult::new(
            pair.clone(),
            f64::NEG_INFINITY,
            "no_levels",
        ));
    };
    let mut out = SubproblemResult::new(
        pair.clone(),
        last.bound,
        format!("{:?}", last.status).to_lowercase(),
    );
    out.degrees = levels.iter().map(|l| l.degree).collect();
    out.sdp_iterations = levels.iter().map(|l| l.sdp_iterations).sum();
    if last.bound < target {
        for level in levels.iter().rev() {
            let Some(z) = &level.candidate else { continue };
            let value = g.eval(z);
            let (x, xp) = layout.lift(z);
            out.offer_witness(task, x, xp, value);
            if out.witness_valid {
                break;
            }
        }
    }
    Ok(out)
}

/// Runs the SOS hierarchy on the gap polynomial for every fixed pair.
pub fn verify_poly_kernel(
    task: &VerificationTask,
    config: &VerifyConfig,
) -> Result<VerifyOutcome, VerifyError> {
    if !matches!(task.model, ModelSpec::PolyKernel { .. }) {
        return Err(VerifyError::WrongFamily(
            "polynomial kernel",
            task.model.family(),
        ));
    }
    check_supported(task)?;
    let pairs = enumerate_fixed_pairs(task)?;
    let p = expand_poly_kernel(&task.model)?;
    let gap = build_gap_polynomial(&p);
    let results = run_parallel(config.workers, &pairs, |pair| {
        poly_pair(task, config, &gap, pair)
    })?;
    let convention = BoundConvention::OutputGap {
        delta: task.output_threshold(),
    };
    Ok(aggregate(task, results, convention, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        FeatureDomain, KernelEntry, OutputMode, PerturbationSpec, Threshold, Verdict,
    };
    use crate::verify::verify_linear_regression;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> VerifyConfig {
        VerifyConfig::default()
    }

    #[test]
    fn square_on_interval_is_biased() {
        let task = VerificationTask::new(
            ModelSpec::PolyKernel {
                scale: 1.0,
                offset: 0.0,
                degree: 2,
                entries: vec![KernelEntry {
                    weight: 1.0,
                    label: 1,
                    vector: vec![1.0],
                }],
            },
            vec![FeatureDomain::continuous(1.0, 2.0).unwrap()],
            PerturbationSpec::uniform(1, Threshold::Infinity, 0.5).unwrap(),
            None,
            Vec::new(),
            OutputMode::Regression,
        )
        .unwrap();
        // grid oracle: min over pairs of x^2 - x'^2
        let grid: Vec<f64> = (0..=100).map(|i| 1.0 + i as f64 / 100.0).collect();
        let oracle = grid.iter().map(|x| x * x).fold(f64::INFINITY, f64::min)
            - grid.iter().map(|x| x * x).fold(f64::NEG_INFINITY, f64::max);
        assert!((oracle + 3.0).abs() < 1e-12);
        let out = verify_poly_kernel(&task, &cfg()).unwrap();
        match &out.verdict {
            Verdict::Biased { instance } => assert!(instance.gap < -0.5),
            v => panic!("{v:?}"),
        }
        assert!(out.bound <= oracle + 1e-6);
    }

    #[test]
    fn pinned_everything_but_fixed_is_exact() {
        let task = VerificationTask::new(
            ModelSpec::PolyKernel {
                scale: 1.0,
                offset: 1.0,
                degree: 2,
                entries: vec![KernelEntry {
                    weight: 1.0,
                    label: 1,
                    vector: vec![0.0, 1.0],
                }],
            },
            vec![
                FeatureDomain::discrete(0, 1).unwrap(),
                FeatureDomain::continuous(0.0, 1.0).unwrap(),
            ],
            PerturbationSpec::counterfactual(2, &[0], 0.0).unwrap(),
            None,
            Vec::new(),
            OutputMode::Regression,
        )
        .unwrap();
        let out = verify_poly_kernel(&task, &cfg()).unwrap();
        assert_eq!(
            out.verdict,
            Verdict::NoBias {
                certified_bound: 0.0,
                convention: out.convention
            }
        );
    }

    #[test]
    fn large_discrete_unsupported() {
        let task = VerificationTask::new(
            ModelSpec::PolyKernel {
                scale: 1.0,
                offset: 0.0,
                degree: 2,
                entries: vec![KernelEntry {
                    weight: 1.0,
                    label: 1,
                    vector: vec![1.0],
                }],
            },
            vec![FeatureDomain::discrete(0, 5).unwrap()],
            PerturbationSpec::uniform(1, Threshold::Infinity, 0.5).unwrap(),
            None,
            Vec::new(),
            OutputMode::Regression,
        )
        .unwrap();
        assert!(matches!(
            verify_poly_kernel(&task, &cfg()),
            Err(VerifyError::UnsupportedDiscrete {
                feature: 0,
                cardinality: 6
            })
        ));
    }

    #[test]
    fn degree_one_matches_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..20 {
            let n = rng.gen_range(1..=3);
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut domains = vec![FeatureDomain::discrete(0, 1).unwrap()];
            for _ in 1..n {
                domains.push(FeatureDomain::continuous(-1.0, rng.gen_range(0.0..2.0)).unwrap());
            }
            let thresholds: Vec<Threshold> = (0..n)
                .map(|i| {
                    if i == 0 {
                        Threshold::Infinity
                    } else {
                        Threshold::Finite(rng.gen_range(0.0..0.5))
                    }
                })
                .collect();
            let delta = rng.gen_range(0.0..1.5);
            let spec =
                PerturbationSpec::new(n, (0..n).map(|i| vec![i]).collect(), thresholds, delta)
                    .unwrap();
            let linear = VerificationTask::new(
                ModelSpec::Linear {
                    weights: w.clone(),
                    bias: 0.3,
                },
                domains.clone(),
                spec.clone(),
                None,
                Vec::new(),
                OutputMode::Regression,
            )
            .unwrap();
            // sum of signed weights times <v, x> with v = e_i reproduces w^T x
            let entries = (0..n)
                .map(|i| {
                    let mut v = vec![0.0; n];
                    v[i] = 1.0;
                    KernelEntry {
                        weight: w[i].abs(),
                        label: if w[i] >= 0.0 { 1 } else { -1 },
                        vector: v,
                    }
                })
                .collect();
            let poly = VerificationTask::new(
                ModelSpec::PolyKernel {
                    scale: 1.0,
                    offset: 0.0,
                    degree: 1,
                    entries,
                },
                domains,
                spec,
                None,
                Vec::new(),
                OutputMode::Regression,
            )
            .unwrap();
            let a = verify_linear_regression(&linear, &cfg()).unwrap();
            let b = verify_poly_kernel(&poly, &cfg()).unwrap();
            assert_eq!(
                a.verdict.kind(),
                b.verdict.kind(),
                "case {case}: {a:?} {b:?}"
            );
            assert!(b.bound <= a.bound + 1e-6, "case {case}");
            assert!(
                (a.bound - b.bound).abs() < 1e-4,
                "case {case}: {} {}",
                a.bound,
                b.bound
            );
        }
    }
}
