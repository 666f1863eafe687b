use crate::model::{BoundConvention, ModelSpec, OutputMode, LABEL_MARGIN};
use crate::solvers::{
    solve_mip, BaseProblem, LinearProgram, MipOptions, MixedIntegerSpec, SolveStatus,
};

use super::{
    aggregate, enumerate_fixed_pairs, run_parallel, FixedPair, PairLayout, SubproblemResult,
    VerificationTask, VerifyConfig, VerifyError, VerifyOutcome,
};

fn linear_parts(task: &VerificationTask) -> Result<(&[f64], f64), VerifyError> {
    match &task.model {
        ModelSpec::Linear { weights, bias } => Ok((weights, *bias)),
        other => Err(VerifyError::WrongFamily("linear", other.family())),
    }
}

/// Every discrete feature is integral on this path, relaxed or not.
fn integer_vars(task: &VerificationTask, layout: &PairLayout) -> Vec<usize> {
    (0..layout.nvars())
        .filter(|&k| task.domains[layout.feature[k]].is_discrete())
        .collect()
}

fn mip_options(config: &VerifyConfig) -> MipOptions {
    MipOptions {
        node_limit: config.node_limit,
        absolute_gap: 1e-9,
    }
}

fn status_name(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::Unbounded => "unbounded",
        SolveStatus::ToleranceReached => "node_limit",
    }
}

fn regression_pair(
    task: &VerificationTask,
    config: &VerifyConfig,
    pair: &FixedPair,
) -> Result<SubproblemResult, VerifyError> {
    let (w, _) = linear_parts(task)?;
    let layout = PairLayout::new(task, pair);
    let n = layout.nvars();
    let (cx, kx) = PairLayout::linear_form(layout.x_map(), w, n);
    let (cp, kp) = PairLayout::linear_form(layout.xp_map(), w, n);
    let objective: Vec<f64> = cx.iter().zip(&cp).map(|(a, b)| a - b).collect();
    let constant = kx - kp;
    let spec = MixedIntegerSpec {
        base: BaseProblem::Lp(layout.linear_program(objective)),
        integer_vars: integer_vars(task, &layout),
    };
    Ok(solve_and_record(
        task,
        config,
        pair,
        &layout,
        &spec,
        constant,
        -task.spec.delta(),
    ))
}

fn solve_and_record(
    task: &VerificationTask,
    config: &VerifyConfig,
    pair: &FixedPair,
    layout: &PairLayout,
    spec: &MixedIntegerSpec,
    constant: f64,
    threshold: f64,
) -> SubproblemResult {
    let res = match solve_mip(spec, &mip_options(config)) {
        Ok(res) => res,
        Err(e) => {
            log::warn!("subproblem solve failed: {e}");
            return SubproblemResult::new(
                pair.clone(),
                f64::NEG_INFINITY,
                format!("solver_error: {e}"),
            );
        }
    };
    let bound = res.certified_lower_bound + constant;
    let mut out = SubproblemResult::new(pair.clone(), bound, status_name(res.status));
    out.nodes = res.nodes;
    if res.objective.is_finite() {
        let value = res.objective + constant;
        if value < threshold || (value < 0.0 && task.mode == OutputMode::Classification) {
            let (x, xp) = layout.lift(&res.point);
            out.offer_witness(task, x, xp, value);
        }
    }
    out
}

/// Minimum of `f(x) - f(x')` over close valid pairs, one MILP per fixed pair.
pub fn verify_linear_regression(
    task: &VerificationTask,
    config: &VerifyConfig,
) -> Result<VerifyOutcome, VerifyError> {
    linear_parts(task)?;
    let pairs = enumerate_fixed_pairs(task)?;
    let results = run_parallel(config.workers, &pairs, |p| regression_pair(task, config, p))?;
    Ok(aggregate(
        task,
        results,
        BoundConvention::OutputGap {
            delta: task.spec.delta(),
        },
        Vec::new(),
    ))
}

fn classifier_pair(
    task: &VerificationTask,
    config: &VerifyConfig,
    pair: &FixedPair,
) -> Result<SubproblemResult, VerifyError> {
    let (w, b) = linear_parts(task)?;
    let layout = PairLayout::new(task, pair);
    let n = layout.nvars();
    let (cx, kx) = PairLayout::linear_form(layout.x_map(), w, n);
    let (cp, kp) = PairLayout::linear_form(layout.xp_map(), w, n);
    let tau = LABEL_MARGIN;
    let mut best: Option<SubproblemResult> = None;
    let mut nodes = 0;
    // min g(x) s.t. g(x') >= tau, then the mirror with the roles swapped
    for (obj, k_obj, side, k_side) in [(&cx, kx, &cp, kp), (&cp, kp, &cx, kx)] {
        let mut lp: LinearProgram = layout.linear_program(obj.clone());
        lp.add_ge(side.clone(), tau - k_side - b);
        let spec = MixedIntegerSpec {
            base: BaseProblem::Lp(lp),
            integer_vars: integer_vars(task, &layout),
        };
        let r = solve_and_record(task, config, pair, &layout, &spec, k_obj + b, -tau);
        nodes += r.nodes;
        best = Some(match best {
            None => r,
            Some(prev) if prev.witness_valid => prev,
            Some(prev) if r.witness_valid || r.bound < prev.bound => r,
            Some(prev) => prev,
        });
    }
    let mut out = best.expect("two splits");
    out.nodes = nodes;
    Ok(out)
}

/// Sign-flip search for a linear classifier as two MILP splits per fixed
/// pair.
pub fn verify_linear_classifier(
    task: &VerificationTask,
    config: &VerifyConfig,
) -> Result<VerifyOutcome, VerifyError> {
    linear_parts(task)?;
    let pairs = enumerate_fixed_pairs(task)?;
    let results = run_parallel(config.workers, &pairs, |p| classifier_pair(task, config, p))?;
    Ok(aggregate(
        task,
        results,
        BoundConvention::SignSplit { tau: LABEL_MARGIN },
        Vec::new(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        check_bias_instance, evaluate, FeatureDomain, PerturbationSpec, Threshold, Verdict,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn task(
        w: Vec<f64>,
        b: f64,
        domains: Vec<FeatureDomain>,
        thresholds: Vec<Threshold>,
        delta: f64,
        fixed: Option<Vec<usize>>,
        mode: OutputMode,
    ) -> VerificationTask {
        let n = w.len();
        VerificationTask::new(
            ModelSpec::Linear {
                weights: w,
                bias: b,
            },
            domains,
            PerturbationSpec::new(n, (0..n).map(|i| vec![i]).collect(), thresholds, delta).unwrap(),
            fixed,
            Vec::new(),
            mode,
        )
        .unwrap()
    }

    fn boolean() -> FeatureDomain {
        FeatureDomain::discrete(0, 1).unwrap()
    }

    #[test]
    fn regression_examples() {
        let t = |w: Vec<f64>, delta| {
            task(
                w,
                0.0,
                vec![boolean(), FeatureDomain::continuous(0.0, 1.0).unwrap()],
                vec![Threshold::Infinity, Threshold::Finite(0.0)],
                delta,
                Some(vec![0]),
                OutputMode::Regression,
            )
        };
        let cfg = VerifyConfig::default();
        let out = verify_linear_regression(&t(vec![1.0, 0.0], 0.5), &cfg).unwrap();
        match out.verdict {
            Verdict::Biased { instance } => {
                assert_eq!(instance.gap, -1.0);
                assert_eq!(instance.x[0], 0.0);
                assert_eq!(instance.x_prime[0], 1.0);
            }
            v => panic!("{v:?}"),
        }
        let out = verify_linear_regression(&t(vec![1.0, 0.0], 1.5), &cfg).unwrap();
        assert!(out.verdict.is_no_bias());
        assert!((out.bound + 1.0).abs() < 1e-9);
        let out = verify_linear_regression(&t(vec![0.0, 1.0], 0.5), &cfg).unwrap();
        assert!(out.verdict.is_no_bias());
        assert!(out.bound.abs() < 1e-12);
    }

    #[test]
    fn classifier_examples() {
        let cfg = VerifyConfig::default();
        let one = |b| {
            task(
                vec![1.0],
                b,
                vec![boolean()],
                vec![Threshold::Infinity],
                0.0,
                None,
                OutputMode::Classification,
            )
        };
        let out = verify_linear_classifier(&one(-0.5), &cfg).unwrap();
        match &out.verdict {
            Verdict::Biased { instance } => {
                assert_eq!((instance.x[0], instance.x_prime[0]), (0.0, 1.0));
            }
            v => panic!("{v:?}"),
        }
        assert!(verify_linear_classifier(&one(-2.0), &cfg)
            .unwrap()
            .verdict
            .is_no_bias());

        let two = task(
            vec![1.0, 1.0],
            -0.5,
            vec![boolean(), boolean()],
            vec![Threshold::Infinity, Threshold::Finite(0.0)],
            0.0,
            Some(vec![0]),
            OutputMode::Classification,
        );
        let out = verify_linear_classifier(&two, &cfg).unwrap();
        match &out.verdict {
            Verdict::Biased { instance } => {
                assert_eq!(instance.x, vec![0.0, 0.0]);
                assert_eq!(instance.x_prime, vec![1.0, 0.0]);
            }
            v => panic!("{v:?}"),
        }
    }

    fn enumerate_points(domains: &[FeatureDomain]) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new()];
        for d in domains {
            out = out
                .into_iter()
                .flat_map(|p: Vec<f64>| {
                    d.values().into_iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..60 {
            let n = rng.gen_range(1..=3);
            let domains: Vec<FeatureDomain> = (0..n)
                .map(|_| {
                    let lo = rng.gen_range(-2..=1);
                    FeatureDomain::discrete(lo, lo + rng.gen_range(0..=3)).unwrap()
                })
                .collect();
            let thresholds: Vec<Threshold> = (0..n)
                .map(|_| match rng.gen_range(0..3) {
                    0 => Threshold::Finite(0.0),
                    1 => Threshold::Finite(1.0),
                    _ => Threshold::Infinity,
                })
                .collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b = rng.gen_range(-2.0..2.0);
            let delta = rng.gen_range(0.0..3.0);
            let mode = if case % 2 == 0 {
                OutputMode::Regression
            } else {
                OutputMode::Classification
            };
            let t = task(w, b, domains.clone(), thresholds, delta, None, mode);
            let pts = enumerate_points(&domains);
            let mut biased = false;
            let mut min_gap = f64::INFINITY;
            for x in &pts {
                for xp in &pts {
                    if check_bias_instance(&t.model, &t.domains, &t.spec, mode, x, xp) {
                        biased = true;
                    }
                    if crate::model::is_close(&t.spec, x, xp) {
                        min_gap = min_gap
                            .min(evaluate(&t.model, x).unwrap() - evaluate(&t.model, xp).unwrap());
                    }
                }
            }
            let out = crate::verify::meta_verify(&t, &VerifyConfig::default()).unwrap();
            assert_eq!(out.verdict.is_biased(), biased, "case {case}: {out:?}");
            assert_eq!(out.verdict.is_no_bias(), !biased, "case {case}: {out:?}");
            if mode == OutputMode::Regression {
                assert!((out.bound - min_gap).abs() < 1e-9, "case {case}");
            }
        }
    }
}
