use nalgebra::DMatrix;

use crate::model::{evaluate_unchecked, BoundConvention, ModelSpec, OutputMode, Threshold};
use crate::poly::VarMap;
use crate::solvers::{
    solve_mip, BaseProblem, MipOptions, MixedIntegerSpec, QuadraticProgram, SolveStatus,
};

use super::{
    aggregate, enumerate_fixed_pairs, run_parallel, FixedPair, PairLayout, SubproblemResult,
    VerificationTask, VerifyConfig, VerifyError, VerifyOutcome,
};

const REFINE_ITERATIONS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfConfig {
    /// Decision margin in classification mode.
    pub epsilon: f64,
    /// Known bounds `c < w_i < C` on the support vector weights. When absent
    /// the observed extremes are used.
    pub weight_lower: Option<f64>,
    pub weight_upper: Option<f64>,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            weight_lower: None,
            weight_upper: None,
        }
    }
}

/// `sqrt(ln(m w / eps) / gamma)`, or `None` when `m w <= eps` and the
/// support vector alone can never push the output past `eps`.
pub fn rbf_radius(m: usize, weight: f64, gamma: f64, epsilon: f64) -> Option<f64> {
    let arg = m as f64 * weight / epsilon;
    if arg.is_nan() || arg <= 1.0 {
        return None;
    }
    Some((arg.ln() / gamma).sqrt())
}

#[derive(Debug, Clone)]
struct Center {
    index: usize,
    weight: f64,
    vector: Vec<f64>,
    radius: f64,
}

struct Prepared {
    gamma: f64,
    epsilon: f64,
    positive: Vec<Center>,
    negative: Vec<Center>,
    warnings: Vec<String>,
}

fn prepare(task: &VerificationTask, config: &VerifyConfig) -> Result<Prepared, VerifyError> {
    let ModelSpec::RbfKernel { gamma, entries } = &task.model else {
        return Err(VerifyError::WrongFamily("rbf", task.model.family()));
    };
    let epsilon = match task.mode {
        OutputMode::Classification => config.rbf.epsilon,
        OutputMode::Regression => task.spec.delta() / 2.0,
    };
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(VerifyError::InvalidTask(format!(
            "rbf margin must be non-negative, got {epsilon}"
        )));
    }
    let live: Vec<(usize, f64, &[f64])> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.signed_weight() != 0.0)
        .map(|(i, e)| (i, e.signed_weight(), e.vector.as_slice()))
        .collect();
    let m = live.len();
    let mut warnings = Vec::new();
    let observed_min = live.iter().map(|l| l.1.abs()).fold(f64::INFINITY, f64::min);
    let observed_max = live.iter().map(|l| l.1.abs()).fold(0.0, f64::max);
    let c = config.rbf.weight_lower.unwrap_or(observed_min);
    if let Some(lo) = config.rbf.weight_lower {
        if observed_min <= lo {
            warnings.push(format!(
                "support vector weight {observed_min} is not above the lower bound {lo}"
            ));
        }
    }
    if let Some(hi) = config.rbf.weight_upper {
        if observed_max >= hi {
            warnings.push(format!(
                "support vector weight {observed_max} is not below the upper bound {hi}"
            ));
        }
    }
    if m > 0 && epsilon >= c / 100.0 {
        warnings.push(format!(
            "margin {epsilon} is not small against the weight bound {c}"
        ));
    }
    let n = task.n_features();
    let floor = n as f64 * epsilon.sqrt();
    if task
        .domains
        .iter()
        .flat_map(|d| [d.lower, d.upper])
        .any(|b| b != 0.0 && b.abs() < floor)
    {
        warnings.push(format!(
            "a domain bound is smaller in magnitude than n*sqrt(eps) = {floor}"
        ));
    }

    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for &(index, w, v) in &live {
        let radius = if epsilon == 0.0 {
            f64::INFINITY
        } else {
            match rbf_radius(m, w.abs(), *gamma, epsilon) {
                Some(r) => r,
                None => continue,
            }
        };
        let center = Center {
            index,
            weight: w.abs(),
            vector: v.to_vec(),
            radius,
        };
        if w > 0.0 {
            positive.push(center);
        } else {
            negative.push(center);
        }
    }
    Ok(Prepared {
        gamma: *gamma,
        epsilon,
        positive,
        negative,
        warnings,
    })
}

/// Intersects the layout box with `x in box(s)` and `x' in box(r)`.
/// `None` when the intersection is empty.
fn restricted_bounds(layout: &PairLayout, r: &Center, s: &Center) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut lower = layout.lower.clone();
    let mut upper = layout.upper.clone();
    for (map, c) in [(layout.x_map(), s), (layout.xp_map(), r)] {
        for (i, m) in map.iter().enumerate() {
            let (lo, hi) = (c.vector[i] - c.radius, c.vector[i] + c.radius);
            match *m {
                VarMap::Constant(v) => {
                    if v < lo || v > hi {
                        return None;
                    }
                }
                VarMap::Affine { var, offset, scale } => {
                    let (a, b) = ((lo - offset) / scale, (hi - offset) / scale);
                    lower[var] = lower[var].max(a.min(b));
                    upper[var] = upper[var].min(a.max(b));
                }
            }
        }
    }
    if lower.iter().zip(&upper).any(|(l, u)| l > u) {
        return None;
    }
    Some((lower, upper))
}

/// `1/2 (sum_{S+} w ||x' - x_u||^2 + sum_{S-} w ||x - x_v||^2)` up to a
/// constant, as `(H, c)` over the layout variables.
fn surrogate(layout: &PairLayout, prep: &Prepared) -> (DMatrix<f64>, Vec<f64>) {
    let n = layout.nvars();
    let mut h = DMatrix::zeros(n, n);
    let mut c = vec![0.0; n];
    for (map, centers) in [
        (layout.xp_map(), &prep.positive),
        (layout.x_map(), &prep.negative),
    ] {
        let total: f64 = centers.iter().map(|u| u.weight).sum();
        for (i, m) in map.iter().enumerate() {
            if let VarMap::Affine { var, offset, scale } = *m {
                let pull: f64 = centers.iter().map(|u| u.weight * u.vector[i]).sum();
                h[(var, var)] += total * scale * scale;
                c[var] += scale * (total * offset - pull);
            }
        }
    }
    (h, c)
}

fn rbf_subproblem(
    task: &VerificationTask,
    config: &VerifyConfig,
    prep: &Prepared,
    pair: &FixedPair,
    r: &Center,
    s: &Center,
) -> Result<SubproblemResult, VerifyError> {
    let layout = PairLayout::new(task, pair);
    let mut out = SubproblemResult::new(pair.clone(), f64::INFINITY, "empty_box");
    out.support_pair = Some((r.index, s.index));
    let Some((lower, upper)) = restricted_bounds(&layout, r, s) else {
        return Ok(out);
    };
    let (h, c) = surrogate(&layout, prep);
    let lp = layout.linear_program(c).with_bounds(lower, upper);
    let spec = MixedIntegerSpec {
        base: BaseProblem::Qp(QuadraticProgram::new(h, lp)),
        integer_vars: layout.integer_vars(),
    };
    let options = MipOptions {
        node_limit: config.node_limit,
        ..MipOptions::default()
    };
    let res = match solve_mip(&spec, &options) {
        Ok(res) => res,
        Err(e) => {
            log::warn!("rbf subproblem failed: {e}");
            out.bound = f64::NEG_INFINITY;
            out.status = format!("solver_error: {e}");
            return Ok(out);
        }
    };
    out.nodes = res.nodes;
    if res.status == SolveStatus::Infeasible || !res.objective.is_finite() {
        out.status = "infeasible".into();
        return Ok(out);
    }
    out.status = "solved".into();
    let (x, xp) = layout.lift(&res.point);
    let fx = evaluate_unchecked(&task.model, &x);
    let fxp = evaluate_unchecked(&task.model, &xp);
    let eps = prep.epsilon;
    out.bound = match task.mode {
        OutputMode::Classification => fx.max(-eps) - fxp.min(eps),
        OutputMode::Regression => fx - fxp,
    };
    if fxp >= eps && fx <= -eps {
        out.offer_witness(task, x, xp, fx - fxp);
        return Ok(out);
    }
    let mid: Vec<f64> = s
        .vector
        .iter()
        .zip(&r.vector)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let mut starts = vec![
        (x, xp),
        (s.vector.clone(), r.vector.clone()),
        (mid.clone(), mid),
    ];
    for c in prep.positive.iter().chain(&prep.negative) {
        starts.push((c.vector.clone(), c.vector.clone()));
    }
    for (x0, xp0) in starts {
        if let Some((x, xp)) = refine_flip(task, prep, pair, x0, xp0) {
            let (fx, fxp) = (
                evaluate_unchecked(&task.model, &x),
                evaluate_unchecked(&task.model, &xp),
            );
            out.bound = out.bound.min(match task.mode {
                OutputMode::Classification => fx.max(-eps) - fxp.min(eps),
                OutputMode::Regression => fx - fxp,
            });
            out.status = "refined".into();
            out.offer_witness(task, x, xp, fx - fxp);
            if out.witness_valid {
                break;
            }
        }
    }
    Ok(out)
}

fn rbf_value_grad(gamma: f64, terms: &[(f64, &[f64])], x: &[f64], grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut f = 0.0;
    for &(w, v) in terms {
        let d2: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        let k = w * (-gamma * d2).exp();
        f += k;
        for (g, (a, b)) in grad.iter_mut().zip(x.iter().zip(v)) {
            *g -= 2.0 * gamma * k * (a - b);
        }
    }
    f
}

/// Projected ascent on `min(f(x'), -f(x))` over the free continuous
/// features, keeping `x'` within threshold of `x`.
fn refine_flip(
    task: &VerificationTask,
    prep: &Prepared,
    pair: &FixedPair,
    mut x: Vec<f64>,
    mut xp: Vec<f64>,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let ModelSpec::RbfKernel { entries, .. } = &task.model else {
        return None;
    };
    let terms: Vec<(f64, &[f64])> = entries
        .iter()
        .map(|e| (e.signed_weight(), e.vector.as_slice()))
        .collect();
    let n = task.n_features();
    let mut free = vec![false; n];
    for (i, d) in task.domains.iter().enumerate() {
        free[i] = !d.is_discrete() && d.width() > 0.0;
    }
    for (k, &i) in task.fixed_set.iter().enumerate() {
        free[i] = false;
        x[i] = pair.v[k];
        xp[i] = pair.v_prime[k];
    }
    let project = |x: &mut [f64], xp: &mut [f64]| {
        for i in (0..n).filter(|&i| free[i]) {
            let d = &task.domains[i];
            x[i] = x[i].clamp(d.lower, d.upper);
            let (lo, hi) = match task.spec.threshold_of(i) {
                Threshold::Infinity => (d.lower, d.upper),
                Threshold::Finite(e) => ((x[i] - e).max(d.lower), (x[i] + e).min(d.upper)),
            };
            xp[i] = xp[i].clamp(lo, hi);
        }
    };
    let mut xp_fixed = xp.clone();
    project(&mut x, &mut xp_fixed);
    xp = xp_fixed;
    let eps = prep.epsilon;
    let (mut gx, mut gxp) = (vec![0.0; n], vec![0.0; n]);
    let score = |x: &[f64], xp: &[f64]| {
        evaluate_unchecked(&task.model, xp).min(-evaluate_unchecked(&task.model, x))
    };
    let scale = task
        .domains
        .iter()
        .map(|d| d.width())
        .filter(|w| w.is_finite())
        .fold(0.0, f64::max)
        .max(1e-3);
    let mut step = 0.1 * scale;
    let mut cur = score(&x, &xp);
    for _ in 0..REFINE_ITERATIONS {
        if cur > eps.max(1e-9) {
            return Some((x, xp));
        }
        let fx = rbf_value_grad(prep.gamma, &terms, &x, &mut gx);
        let fxp = rbf_value_grad(prep.gamma, &terms, &xp, &mut gxp);
        // ascend the active term, both when nearly tied
        let (ax, axp) = (-fx <= fxp + 1e-12, fxp <= -fx + 1e-12);
        let norm: f64 = (0..n)
            .filter(|&i| free[i])
            .map(|i| {
                (if ax { gx[i] * gx[i] } else { 0.0 }) + (if axp { gxp[i] * gxp[i] } else { 0.0 })
            })
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            break;
        }
        let (mut nx, mut nxp) = (x.clone(), xp.clone());
        for i in (0..n).filter(|&i| free[i]) {
            if ax {
                nx[i] -= step * gx[i] / norm;
                if task.spec.threshold_of(i) != Threshold::Infinity {
                    nxp[i] -= step * gx[i] / norm;
                }
            }
            if axp {
                nxp[i] += step * gxp[i] / norm;
            }
        }
        project(&mut nx, &mut nxp);
        let next = score(&nx, &nxp);
        if next > cur {
            (x, xp, cur) = (nx, nxp, next);
            step *= 1.2;
        } else {
            step *= 0.5;
            if step < 1e-9 * scale {
                break;
            }
        }
    }
    (cur > eps.max(1e-9)).then_some((x, xp))
}

/// Searches each fixed pair and each positive/negative support vector pair
/// for a sign flip, with `x` near the negative and `x'` near the positive
/// support vector.
pub fn verify_rbf(
    task: &VerificationTask,
    config: &VerifyConfig,
) -> Result<VerifyOutcome, VerifyError> {
    let prep = prepare(task, config)?;
    let convention = BoundConvention::RbfMargin {
        epsilon: prep.epsilon,
    };
    for w in &prep.warnings {
        log::warn!("{w}");
    }
    if prep.positive.is_empty() || prep.negative.is_empty() {
        return Ok(aggregate(task, Vec::new(), convention, prep.warnings));
    }
    debug_assert!(prep.gamma > 0.0);
    let pairs = enumerate_fixed_pairs(task)?;
    let mut jobs = Vec::new();
    for (p, _) in pairs.iter().enumerate() {
        for r in 0..prep.positive.len() {
            for s in 0..prep.negative.len() {
                jobs.push((p, r, s));
            }
        }
    }
    let results = run_parallel(config.workers, &jobs, |&(p, r, s)| {
        rbf_subproblem(
            task,
            config,
            &prep,
            &pairs[p],
            &prep.positive[r],
            &prep.negative[s],
        )
    })?;
    let warnings = prep.warnings.clone();
    Ok(aggregate(task, results, convention, warnings))
}
