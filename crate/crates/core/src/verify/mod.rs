//! Bias verifiers for each model family and the driver that dispatches
//! subproblems over the fixed-attribute pairs `V_p`.

mod layout;
mod linear;
mod poly;
mod rbf;

pub use layout::{
    count_fixed_pairs, enumerate_fixed_pairs, snap_to_domains, FixedPair, PairLayout,
    MAX_FIXED_PAIRS,
};
pub use linear::{verify_linear_classifier, verify_linear_regression};
pub use poly::verify_poly_kernel;
pub use rbf::{rbf_radius, verify_rbf, RbfConfig};

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    check_bias_instance, BiasInstance, BoundConvention, FeatureDomain, ModelError, ModelSpec,
    OutputMode, PerturbationSpec, Threshold, Verdict,
};
use crate::poly::PolyError;
use crate::solvers::{SolverError, DEFAULT_NODE_LIMIT};
use crate::sos::{SosError, DEFAULT_MAX_ROWS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("{size} fixed-value pairs exceed the limit of {limit}")]
    SizeExceeded { size: u128, limit: u128 },
    #[error("discrete feature {feature} has {cardinality} values; fix or relax it")]
    UnsupportedDiscrete { feature: usize, cardinality: u64 },
    #[error("{0} verifier called on a {1} model")]
    WrongFamily(&'static str, &'static str),
}

/// Everything a verifier needs: the model, the input space, the closeness
/// relation, the fixed and relaxed attribute sets, and the output semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationTask {
    pub model: ModelSpec,
    pub domains: Vec<FeatureDomain>,
    pub spec: PerturbationSpec,
    pub fixed_set: Vec<usize>,
    pub relax_set: Vec<usize>,
    pub mode: OutputMode,
}

impl VerificationTask {
    /// Validates the parts against each other. `fixed_set = None` selects
    /// [`default_fixed_set`].
    pub fn new(
        model: ModelSpec,
        domains: Vec<FeatureDomain>,
        spec: PerturbationSpec,
        fixed_set: Option<Vec<usize>>,
        relax_set: Vec<usize>,
        mode: OutputMode,
    ) -> Result<Self, VerifyError> {
        let n = domains.len();
        model.validate(n)?;
        if spec.n_features() != n {
            return Err(VerifyError::InvalidTask(format!(
                "perturbation covers {} features but there are {n} domains",
                spec.n_features()
            )));
        }
        for &i in &relax_set {
            if i >= n {
                return Err(VerifyError::InvalidTask(format!(
                    "relaxed feature {i} out of range"
                )));
            }
        }
        let fixed_set = match fixed_set {
            Some(d) => d,
            None => default_fixed_set(&domains, &spec, &relax_set),
        };
        let mut seen = vec![false; n];
        for &i in &fixed_set {
            if i >= n {
                return Err(VerifyError::InvalidTask(format!(
                    "fixed feature {i} out of range"
                )));
            }
            if seen[i] {
                return Err(VerifyError::InvalidTask(format!(
                    "fixed feature {i} listed twice"
                )));
            }
            seen[i] = true;
            if !domains[i].is_discrete() {
                return Err(VerifyError::InvalidTask(format!(
                    "fixed feature {i} is not discrete"
                )));
            }
            if relax_set.contains(&i) {
                return Err(VerifyError::InvalidTask(format!(
                    "feature {i} is both fixed and relaxed"
                )));
            }
        }
        Ok(Self {
            model,
            domains,
            spec,
            fixed_set,
            relax_set,
            mode,
        })
    }

    pub fn n_features(&self) -> usize {
        self.domains.len()
    }

    /// `delta` in regression mode, zero for classification.
    pub fn output_threshold(&self) -> f64 {
        match self.mode {
            OutputMode::Regression => self.spec.delta(),
            OutputMode::Classification => 0.0,
        }
    }

    pub fn check(&self, x: &[f64], x_prime: &[f64]) -> bool {
        check_bias_instance(
            &self.model,
            &self.domains,
            &self.spec,
            self.mode,
            x,
            x_prime,
        )
    }
}

/// Discrete attributes with at most three values, taken in index order while
/// `|V_p|` stays within [`MAX_FIXED_PAIRS`].
pub fn default_fixed_set(
    domains: &[FeatureDomain],
    spec: &PerturbationSpec,
    relax_set: &[usize],
) -> Vec<usize> {
    let thresholds: Vec<Threshold> = (0..domains.len()).map(|i| spec.threshold_of(i)).collect();
    let mut chosen = Vec::new();
    for (i, d) in domains.iter().enumerate() {
        if relax_set.contains(&i) || !d.cardinality().is_some_and(|c| c <= 3) {
            continue;
        }
        chosen.push(i);
        if count_fixed_pairs(domains, &thresholds, &chosen) > MAX_FIXED_PAIRS {
            chosen.pop();
        }
    }
    chosen
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SosConfig {
    /// Levels tried beyond the minimum admissible degree.
    pub extra_degrees: u32,
    /// Absolute cap on the relaxation degree, overriding `extra_degrees`.
    pub max_degree: Option<u32>,
    pub max_rows: usize,
}

impl Default for SosConfig {
    fn default() -> Self {
        Self {
            extra_degrees: 2,
            max_degree: None,
            max_rows: DEFAULT_MAX_ROWS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub workers: usize,
    pub rbf: RbfConfig,
    pub sos: SosConfig,
    pub node_limit: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            rbf: RbfConfig::default(),
            sos: SosConfig::default(),
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

/// A candidate from a relaxed subproblem that failed validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpuriousWitness {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub relaxed_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemResult {
    pub fixed: FixedPair,
    /// Support vector indices `(r, s)` on the RBF path.
    pub support_pair: Option<(usize, usize)>,
    pub bound: f64,
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
    pub witness_valid: bool,
    pub status: String,
    pub spurious: Option<SpuriousWitness>,
    pub nodes: usize,
    pub sdp_iterations: usize,
    pub degrees: Vec<u32>,
}

impl SubproblemResult {
    pub(crate) fn new(fixed: FixedPair, bound: f64, status: impl Into<String>) -> Self {
        Self {
            fixed,
            support_pair: None,
            bound,
            witness: None,
            witness_valid: false,
            status: status.into(),
            spurious: None,
            nodes: 0,
            sdp_iterations: 0,
            degrees: Vec::new(),
        }
    }

    /// Records a candidate pair, keeping it only if it validates.
    pub(crate) fn offer_witness(
        &mut self,
        task: &VerificationTask,
        mut x: Vec<f64>,
        mut xp: Vec<f64>,
        value: f64,
    ) {
        snap_to_domains(&task.domains, &mut x);
        snap_to_domains(&task.domains, &mut xp);
        pull_within_threshold(task, &x, &mut xp);
        if task.check(&x, &xp) {
            self.witness = Some((x, xp));
            self.witness_valid = true;
        } else if task.check(&xp, &x) {
            self.witness = Some((xp, x));
            self.witness_valid = true;
        } else {
            log::debug!("rejected spurious witness with relaxed value {value}");
            self.spurious = Some(SpuriousWitness {
                x,
                x_prime: xp,
                relaxed_value: value,
            });
        }
    }
}

/// Moves continuous coordinates of `xp` that sit a rounding error outside
/// their closeness threshold back onto it.
fn pull_within_threshold(task: &VerificationTask, x: &[f64], xp: &mut [f64]) {
    for i in 0..x.len() {
        let Threshold::Finite(eps) = task.spec.threshold_of(i) else {
            continue;
        };
        if task.domains[i].is_discrete() || (xp[i] - x[i]).abs() <= eps {
            continue;
        }
        let dir = (xp[i] - x[i]).signum();
        let mut step = eps;
        for _ in 0..4 {
            xp[i] = x[i] + dir * step;
            if (xp[i] - x[i]).abs() <= eps {
                break;
            }
            step *= 1.0 - 1e-12;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub verdict: Verdict,
    /// Minimum of the subproblem bounds under `convention`.
    pub bound: f64,
    pub convention: BoundConvention,
    pub subproblems: Vec<SubproblemResult>,
    pub warnings: Vec<String>,
}

impl VerifyOutcome {
    pub fn spurious(&self) -> impl Iterator<Item = &SpuriousWitness> {
        self.subproblems.iter().filter_map(|s| s.spurious.as_ref())
    }

    pub fn total_nodes(&self) -> usize {
        self.subproblems.iter().map(|s| s.nodes).sum()
    }

    pub fn total_sdp_iterations(&self) -> usize {
        self.subproblems.iter().map(|s| s.sdp_iterations).sum()
    }

    pub fn max_degree(&self) -> Option<u32> {
        self.subproblems
            .iter()
            .flat_map(|s| s.degrees.iter().copied())
            .max()
    }
}

/// Runs `f` over `items` on a pool of `workers` threads, preserving order.
pub(crate) fn run_parallel<T, R, F>(
    workers: usize,
    items: &[T],
    f: F,
) -> Result<Vec<R>, VerifyError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, VerifyError> + Sync + Send,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| VerifyError::InvalidTask(format!("worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Folds subproblem results: a validated witness means bias, all bounds at
/// or above `convention.threshold()` mean no bias, anything else is
/// inconclusive.
pub(crate) fn aggregate(
    task: &VerificationTask,
    subproblems: Vec<SubproblemResult>,
    convention: BoundConvention,
    warnings: Vec<String>,
) -> VerifyOutcome {
    let bound = subproblems
        .iter()
        .map(|s| s.bound)
        .fold(f64::INFINITY, f64::min);
    let verdict = if let Some((x, xp)) = subproblems
        .iter()
        .find(|s| s.witness_valid)
        .and_then(|s| s.witness.clone())
    {
        Verdict::Biased {
            instance: BiasInstance::oriented(&task.model, x, xp),
        }
    } else if bound >= convention.threshold() {
        Verdict::NoBias {
            certified_bound: bound,
            convention,
        }
    } else {
        let failed = subproblems
            .iter()
            .filter(|s| s.bound < convention.threshold())
            .count();
        let spurious = subproblems.iter().filter(|s| s.spurious.is_some()).count();
        Verdict::Inconclusive {
            best_bound: bound,
            note: format!(
                "{failed} of {} subproblems have bounds below {} without a valid witness ({spurious} spurious candidates rejected)",
                subproblems.len(),
                convention.threshold()
            ),
        }
    };
    VerifyOutcome {
        verdict,
        bound,
        convention,
        subproblems,
        warnings,
    }
}

fn convention_for(task: &VerificationTask, config: &VerifyConfig) -> BoundConvention {
    match (&task.model, task.mode) {
        (ModelSpec::RbfKernel { .. }, mode) => BoundConvention::RbfMargin {
            epsilon: match mode {
                OutputMode::Classification => config.rbf.epsilon,
                OutputMode::Regression => task.spec.delta() / 2.0,
            },
        },
        (ModelSpec::Linear { .. }, OutputMode::Classification) => BoundConvention::SignSplit {
            tau: crate::model::LABEL_MARGIN,
        },
        _ => BoundConvention::OutputGap {
            delta: task.output_threshold(),
        },
    }
}

/// Dispatches on the model family. A spec that pins every feature admits
/// only `x = x'` and is answered without solving anything.
pub fn meta_verify(
    task: &VerificationTask,
    config: &VerifyConfig,
) -> Result<VerifyOutcome, VerifyError> {
    if task.spec.all_pinned() {
        let convention = convention_for(task, config);
        return Ok(VerifyOutcome {
            verdict: Verdict::NoBias {
                certified_bound: 0.0,
                convention,
            },
            bound: 0.0,
            convention,
            subproblems: Vec::new(),
            warnings: Vec::new(),
        });
    }
    let outcome = match (&task.model, task.mode) {
        (ModelSpec::Linear { .. }, OutputMode::Regression) => {
            verify_linear_regression(task, config)?
        }
        (ModelSpec::Linear { .. }, OutputMode::Classification) => {
            verify_linear_classifier(task, config)?
        }
        (ModelSpec::PolyKernel { .. }, _) => verify_poly_kernel(task, config)?,
        (ModelSpec::RbfKernel { .. }, _) => verify_rbf(task, config)?,
    };
    if let Verdict::Biased { instance } = &outcome.verdict {
        debug_assert!(task.check(&instance.x, &instance.x_prime));
    }
    Ok(outcome)
}
