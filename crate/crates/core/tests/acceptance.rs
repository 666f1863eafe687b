//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use fairverify::baseline::{random_test, RandomTestConfig, Strategy, TestOutcome};
use fairverify::cli::{brute_force_oracle, generate_scenario, run_scenario, BiasKind, Family};
use fairverify::cli::{Format, RunArgs, RunMode, StrategyArg};
use fairverify::model::{
    evaluate, FeatureDomain, KernelEntry, ModelSpec, OutputMode, PerturbationSpec, Threshold,
    Verdict,
};
use fairverify::poly::{build_gap_polynomial, expand_poly_kernel, MultiIndex, Polynomial};
use fairverify::solvers::{solve_qp, LinearProgram, QuadraticProgram};
use fairverify::sos::{run_hierarchy, HierarchyOptions, SemiAlgebraicSet};
use fairverify::verify::{
    meta_verify, rbf_radius, verify_linear_classifier, verify_linear_regression, FixedPair,
    PairLayout, VerificationTask, VerifyConfig,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LINEAR_TASKS: usize = 200;
const LINEAR_TIME_LIMIT: Duration = Duration::from_secs(120);
const SOS_TASKS: usize = 50;
const SOS_TIME_LIMIT: Duration = Duration::from_secs(600);
const SOS_SOUNDNESS_TOL: f64 = 1e-6;
const SOS_TIGHT_TASKS: usize = 20;
const SOS_TIGHT_TOL: f64 = 1e-5;
const RBF_RANDOM_PAIRS: usize = 1_000_000;
const MASKING_SEEDS: u64 = 10;
const BASELINE_BUDGET: usize = 50_000;
const BASELINE_PLANTED_BUDGET: usize = 5_000;
const BASELINE_PLANTED_REQUIRED: usize = 9;
const RADIUS_TOL: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(name: &str, o: &Outcome) {
    println!(
        "{} {name}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

fn each_point(domains: &[FeatureDomain], rng: &mut ChaCha8Rng) -> Vec<f64> {
    domains
        .iter()
        .map(|d| {
            if d.is_discrete() {
                rng.gen_range(d.lower as i64..=d.upper as i64) as f64
            } else {
                rng.gen_range(d.lower..=d.upper)
            }
        })
        .collect()
}

/// A valid partner of `x` drawn uniformly within each closeness threshold.
fn close_partner(task: &VerificationTask, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    task.domains
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let (lo, hi) = match task.spec.threshold_of(i) {
                Threshold::Infinity => (d.lower, d.upper),
                Threshold::Finite(e) => ((x[i] - e).max(d.lower), (x[i] + e).min(d.upper)),
            };
            if d.is_discrete() {
                rng.gen_range(lo.ceil() as i64..=hi.floor() as i64) as f64
            } else if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                x[i]
            }
        })
        .collect()
}

fn random_threshold(rng: &mut ChaCha8Rng, finite: f64) -> Threshold {
    match rng.gen_range(0..3) {
        0 => Threshold::Finite(0.0),
        1 => Threshold::Finite(finite),
        _ => Threshold::Infinity,
    }
}

fn singleton_spec(thresholds: Vec<Threshold>, delta: f64) -> PerturbationSpec {
    let n = thresholds.len();
    PerturbationSpec::new(n, (0..n).map(|i| vec![i]).collect(), thresholds, delta).unwrap()
}

fn linear_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    let mut verdicts = 0;
    for _ in 0..LINEAR_TASKS {
        let n = rng.gen_range(1..=4);
        let domains: Vec<FeatureDomain> = (0..n)
            .map(|_| {
                let lo = rng.gen_range(-2..=2);
                FeatureDomain::discrete(lo, lo + rng.gen_range(0..=3)).unwrap()
            })
            .collect();
        let finite = if rng.gen_bool(0.5) { 1.0 } else { 2.0 };
        let thresholds: Vec<Threshold> =
            (0..n).map(|_| random_threshold(&mut rng, finite)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bias = rng.gen_range(-3.0..3.0);
        let delta = rng.gen_range(0.0..4.0);
        for mode in [OutputMode::Regression, OutputMode::Classification] {
            let task = VerificationTask::new(
                ModelSpec::Linear {
                    weights: weights.clone(),
                    bias,
                },
                domains.clone(),
                singleton_spec(thresholds.clone(), delta),
                None,
                Vec::new(),
                mode,
            )
            .unwrap();
            let cfg = VerifyConfig::default();
            let out = match mode {
                OutputMode::Regression => verify_linear_regression(&task, &cfg),
                OutputMode::Classification => verify_linear_classifier(&task, &cfg),
            }
            .unwrap();
            let oracle = brute_force_oracle(&task, 2).unwrap();
            verdicts += 1;
            let agrees = match &out.verdict {
                Verdict::Biased { instance } => {
                    oracle.bias.is_some() && task.check(&instance.x, &instance.x_prime)
                }
                Verdict::NoBias { .. } => oracle.bias.is_none(),
                Verdict::Inconclusive { .. } => false,
            };
            if !agrees {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: mismatches == 0 && elapsed < LINEAR_TIME_LIMIT,
        detail: format!(
            "{mismatches} mismatches over {verdicts} verdicts on {LINEAR_TASKS} tasks in {:.1}s (limit {}s)",
            elapsed.as_secs_f64(),
            LINEAR_TIME_LIMIT.as_secs()
        ),
    }
}

fn random_poly_task(rng: &mut ChaCha8Rng) -> VerificationTask {
    let n = rng.gen_range(1..=3);
    let degree = rng.gen_range(1..=4);
    let entries = (0..rng.gen_range(1..=3))
        .map(|_| KernelEntry {
            weight: rng.gen_range(0.1..1.0),
            label: if rng.gen_bool(0.5) { 1 } else { -1 },
            vector: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    let domains = (0..n)
        .map(|_| {
            let lo = rng.gen_range(-1.0..0.5);
            FeatureDomain::continuous(lo, lo + rng.gen_range(0.2..1.0)).unwrap()
        })
        .collect();
    let thresholds = (0..n).map(|_| random_threshold(rng, 0.3)).collect();
    VerificationTask::new(
        ModelSpec::PolyKernel {
            scale: rng.gen_range(0.5..1.5),
            offset: rng.gen_range(-0.5..1.0),
            degree,
            entries,
        },
        domains,
        singleton_spec(thresholds, rng.gen_range(0.0..0.5)),
        None,
        Vec::new(),
        OutputMode::Regression,
    )
    .unwrap()
}

fn layout_set(layout: &PairLayout) -> SemiAlgebraicSet {
    let n = layout.nvars();
    let mut set = SemiAlgebraicSet::new_box(layout.lower.clone(), layout.upper.clone()).unwrap();
    for &(a, b, eps) in &layout.closeness {
        let mut diff = vec![0.0; n];
        diff[a] = 1.0;
        diff[b] = -1.0;
        let neg: Vec<f64> = diff.iter().map(|v| -v).collect();
        set.add_inequality(Polynomial::affine(eps, &diff)).unwrap();
        set.add_inequality(Polynomial::affine(eps, &neg)).unwrap();
    }
    set
}

fn sos_soundness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut unsound = 0;
    let mut non_monotone = 0;
    let mut worst_margin = f64::NEG_INFINITY;
    let mut levels_total = 0;
    for _ in 0..SOS_TASKS {
        let task = random_poly_task(&mut rng);
        let density = if task.n_features() == 3 { 11 } else { 41 };
        let oracle = brute_force_oracle(&task, density).unwrap();

        let out = meta_verify(&task, &VerifyConfig::default()).unwrap();
        for s in &out.subproblems {
            worst_margin = worst_margin.max(s.bound - oracle.min_gap);
            if s.bound > oracle.min_gap + SOS_SOUNDNESS_TOL {
                unsound += 1;
            }
        }

        let layout = PairLayout::new(
            &task,
            &FixedPair {
                v: Vec::new(),
                v_prime: Vec::new(),
            },
        );
        let g = build_gap_polynomial(&expand_poly_kernel(&task.model).unwrap())
            .substitute(&layout.gap_map(), layout.nvars());
        if g.is_constant() {
            continue;
        }
        let set = layout_set(&layout);
        let d0 = g.degree().div_ceil(2).max(set.min_degree());
        let levels = run_hierarchy(
            &g,
            &set,
            d0,
            d0 + 2,
            f64::INFINITY,
            &HierarchyOptions::default(),
        )
        .unwrap();
        levels_total += levels.len();
        for w in levels.windows(2) {
            if w[1].level_bound < w[0].level_bound - SOS_SOUNDNESS_TOL || w[1].bound < w[0].bound {
                non_monotone += 1;
            }
        }
        for l in &levels {
            worst_margin = worst_margin.max(l.level_bound - oracle.min_gap);
            if l.level_bound > oracle.min_gap + SOS_SOUNDNESS_TOL {
                unsound += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: unsound == 0 && non_monotone == 0 && elapsed < SOS_TIME_LIMIT,
        detail: format!(
            "{unsound} bounds above oracle + {SOS_SOUNDNESS_TOL:e}, {non_monotone} decreasing steps over {levels_total} levels, \
             worst bound - oracle {worst_margin:.3e}, {SOS_TASKS} tasks in {:.1}s (limit {}s)",
            elapsed.as_secs_f64(),
            SOS_TIME_LIMIT.as_secs()
        ),
    }
}

fn sos_tightness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..SOS_TIGHT_TASKS {
        let k = rng.gen_range(1..=3);
        let a = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
        let h = a.transpose() * &a + DMatrix::identity(k, k) * 0.1;
        let c: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut f = Polynomial::zero(k);
        for i in 0..k {
            f.add_term(MultiIndex::unit(k, i), c[i]);
            for j in 0..k {
                let mut e = vec![0u32; k];
                e[i] += 1;
                e[j] += 1;
                f.add_term(MultiIndex::new(e), 0.5 * h[(i, j)]);
            }
        }
        let set = SemiAlgebraicSet::new_box(vec![-1.0; k], vec![1.0; k]).unwrap();
        let levels =
            run_hierarchy(&f, &set, 1, 1, f64::INFINITY, &HierarchyOptions::default()).unwrap();
        let sos = levels[0].level_bound;
        let qp = QuadraticProgram::new(
            h,
            LinearProgram::new(c).with_bounds(vec![-1.0; k], vec![1.0; k]),
        );
        let opt = solve_qp(&qp).unwrap().objective;
        let err = (sos - opt).abs();
        worst = worst.max(err);
        if !(err <= SOS_TIGHT_TOL) {
            failures += 1;
        }
    }
    Outcome {
        pass: failures == 0,
        detail: format!("{failures} of {SOS_TIGHT_TASKS} beyond {SOS_TIGHT_TOL:e}, worst |sos - qp| {worst:.3e}"),
    }
}

fn rbf_corpus() -> Vec<(String, VerificationTask)> {
    let mut out = Vec::new();
    for seed in 0..MASKING_SEEDS {
        for bias in [BiasKind::Planted, BiasKind::Masked] {
            let n = 2 + (seed as usize % 2);
            let task = generate_scenario(Family::Rbf, n, seed, bias)
                .to_task()
                .unwrap();
            out.push((format!("generated {bias:?} seed {seed}"), task));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for k in 0..30 {
        let m = rng.gen_range(2..=4);
        let entries = (0..m)
            .map(|j| KernelEntry {
                weight: rng.gen_range(0.5..1.5),
                label: if j % 2 == 0 { 1 } else { -1 },
                vector: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            })
            .collect();
        let task = VerificationTask::new(
            ModelSpec::RbfKernel {
                gamma: rng.gen_range(0.5..4.0),
                entries,
            },
            vec![FeatureDomain::continuous(-1.5, 1.5).unwrap(); 2],
            singleton_spec(
                vec![Threshold::Infinity, random_threshold(&mut rng, 0.3)],
                0.0,
            ),
            None,
            Vec::new(),
            OutputMode::Classification,
        )
        .unwrap();
        out.push((format!("random {k}"), task));
    }
    let far = VerificationTask::new(
        ModelSpec::RbfKernel {
            gamma: 1.0,
            entries: vec![
                KernelEntry {
                    weight: 1.0,
                    label: 1,
                    vector: vec![0.0, 0.0],
                },
                KernelEntry {
                    weight: 1.0,
                    label: -1,
                    vector: vec![30.0, 30.0],
                },
            ],
        },
        vec![FeatureDomain::continuous(-40.0, 40.0).unwrap(); 2],
        PerturbationSpec::uniform(2, Threshold::Finite(0.0), 0.0).unwrap(),
        None,
        Vec::new(),
        OutputMode::Classification,
    )
    .unwrap();
    out.push(("far apart, pinned".into(), far));
    out
}

fn rbf_both_ways() -> Outcome {
    let cfg = VerifyConfig::default();
    let eps = cfg.rbf.epsilon;
    let mut biased = 0;
    let mut no_bias = 0;
    let mut inconclusive = 0;
    let mut bad = Vec::new();
    for (k, (name, task)) in rbf_corpus().into_iter().enumerate() {
        let out = meta_verify(&task, &cfg).unwrap();
        match &out.verdict {
            Verdict::Biased { instance } => {
                biased += 1;
                let fx = evaluate(&task.model, &instance.x).unwrap();
                let fxp = evaluate(&task.model, &instance.x_prime).unwrap();
                if !(fx <= -eps && fxp >= eps) {
                    bad.push(format!("{name}: witness signs f(x)={fx:e} f(x')={fxp:e}"));
                }
            }
            Verdict::NoBias { .. } => {
                no_bias += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
                let flips = (0..RBF_RANDOM_PAIRS)
                    .filter(|_| {
                        let x = each_point(&task.domains, &mut rng);
                        let xp = close_partner(&task, &x, &mut rng);
                        task.check(&x, &xp)
                    })
                    .count();
                if flips > 0 {
                    bad.push(format!(
                        "{name}: {flips} sign-flip pairs under a NoBias verdict"
                    ));
                }
            }
            Verdict::Inconclusive { .. } => inconclusive += 1,
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: format!(
            "{biased} biased with witness signs checked, {no_bias} no-bias each checked on {RBF_RANDOM_PAIRS} random close pairs, \
             {inconclusive} inconclusive{}",
            if bad.is_empty() { String::new() } else { format!("; violations: {}", bad.join("; ")) }
        ),
    }
}

fn masking() -> Outcome {
    let mut wrong = Vec::new();
    let mut total = 0;
    for family in [Family::Linear, Family::Poly, Family::Rbf] {
        for seed in 0..MASKING_SEEDS {
            let n = 2 + (seed as usize % 3);
            for bias in [BiasKind::Planted, BiasKind::Masked] {
                total += 1;
                let file = generate_scenario(family, n, seed, bias);
                let task = file.to_task().unwrap();
                let cfg = VerifyConfig {
                    rbf: file.rbf_config(),
                    ..VerifyConfig::default()
                };
                let out = meta_verify(&task, &cfg).unwrap();
                let ok = match bias {
                    BiasKind::Planted => out.verdict.is_biased(),
                    BiasKind::Masked => out.verdict.is_no_bias(),
                };
                if !ok {
                    wrong.push(format!(
                        "{family:?}/{bias:?}/seed {seed} -> {}",
                        out.verdict.kind()
                    ));
                }
            }
        }
    }
    Outcome {
        pass: wrong.is_empty(),
        detail: format!(
            "{} of {total} consistent{}",
            total - wrong.len(),
            if wrong.is_empty() {
                String::new()
            } else {
                format!("; {}", wrong.join(", "))
            }
        ),
    }
}

fn baseline() -> Outcome {
    let mut certified = 0;
    let mut false_alarms = 0;
    for family in [Family::Linear, Family::Poly, Family::Rbf] {
        for seed in 0..MASKING_SEEDS {
            let file = generate_scenario(family, 3, seed, BiasKind::Masked);
            let task = file.to_task().unwrap();
            if !meta_verify(&task, &VerifyConfig::default())
                .unwrap()
                .verdict
                .is_no_bias()
            {
                continue;
            }
            certified += 1;
            let cfg = RandomTestConfig {
                budget: BASELINE_BUDGET,
                seed,
                strategy: Strategy::ProtectedFlip,
                workers: 4,
            };
            if !matches!(
                random_test(&task, &cfg).unwrap(),
                TestOutcome::NotFound {
                    samples_used: BASELINE_BUDGET,
                    ..
                }
            ) {
                false_alarms += 1;
            }
        }
    }
    let mut found = 0;
    for seed in 0..MASKING_SEEDS {
        let task = generate_scenario(Family::Linear, 3, seed, BiasKind::Planted)
            .to_task()
            .unwrap();
        let cfg = RandomTestConfig {
            budget: BASELINE_PLANTED_BUDGET,
            seed,
            strategy: Strategy::ProtectedFlip,
            workers: 1,
        };
        if let TestOutcome::FoundBias { instance, .. } = random_test(&task, &cfg).unwrap() {
            if task.check(&instance.x, &instance.x_prime) {
                found += 1;
            }
        }
    }
    Outcome {
        pass: certified > 0 && false_alarms == 0 && found >= BASELINE_PLANTED_REQUIRED,
        detail: format!(
            "{false_alarms} of {certified} certified scenarios found bias with {BASELINE_BUDGET} samples; \
             planted linear found within {BASELINE_PLANTED_BUDGET} samples for {found}/{MASKING_SEEDS} seeds \
             (need {BASELINE_PLANTED_REQUIRED})"
        ),
    }
}

fn radius() -> Outcome {
    let r = rbf_radius(1, 1.0, 1.0, 1e-8).unwrap();
    let expected = (1e8f64).ln().sqrt();
    let err = (r - expected).abs();
    Outcome {
        pass: err <= RADIUS_TOL,
        detail: format!("D_r = {r:.12}, closed form {expected:.12}, error {err:.1e}"),
    }
}

fn determinism() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scenarios");
    let names = [
        "linear-planted-2.json",
        "poly-planted-3.json",
        "rbf-masked-2.json",
        "mixed-relaxed.json",
    ];
    let mut differing = Vec::new();
    for name in names {
        let args = RunArgs {
            scenario: dir.join(name),
            mode: RunMode::Both,
            workers: 3,
            seed: 17,
            sos_dmax: None,
            budget: 20_000,
            strategy: StrategyArg::ProtectedFlip,
            out: None,
            format: Format::Json,
        };
        let render = || {
            let mut v: serde_json::Value =
                serde_json::from_str(&run_scenario(&args).unwrap().to_json()).unwrap();
            v.as_object_mut().unwrap().remove("timings");
            serde_json::to_string_pretty(&v).unwrap()
        };
        if render() != render() {
            differing.push(name);
        }
    }
    Outcome {
        pass: differing.is_empty(),
        detail: format!(
            "{} of {} reports byte-identical across two runs{}",
            names.len() - differing.len(),
            names.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!("; differing: {differing:?}")
            }
        ),
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("linear exactness", linear_exactness),
        ("sos soundness", sos_soundness),
        ("sos tightness on convex quadratics", sos_tightness),
        ("rbf soundness both ways", rbf_both_ways),
        ("masking pattern", masking),
        ("baseline comparison", baseline),
        ("rbf radius formula", radius),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        report(name, &o);
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
