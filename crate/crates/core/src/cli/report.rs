//! Report assembly and rendering.

use std::fmt::Write as _;

use serde::ser::Serializer;
use serde::Serialize;

use crate::baseline::{Strategy, TestOutcome};
use crate::model::{evaluate_unchecked, BoundConvention, ModelSpec, Verdict, VerdictKind};
use crate::verify::VerifyOutcome;

/// A float that serializes non-finite values as `"inf"`, `"-inf"`, `"nan"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_finite() {
            write!(f, "{:.6e}", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureChange {
    pub feature: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessReport {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub f_x: f64,
    pub f_x_prime: f64,
    pub gap: f64,
    /// Coordinates where `x` and `x'` differ.
    pub changes: Vec<FeatureChange>,
}

impl WitnessReport {
    pub fn new(model: &ModelSpec, x: &[f64], x_prime: &[f64]) -> Self {
        let f_x = evaluate_unchecked(model, x);
        let f_x_prime = evaluate_unchecked(model, x_prime);
        let changes = x
            .iter()
            .zip(x_prime)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(feature, (&before, &after))| FeatureChange {
                feature,
                before,
                after,
            })
            .collect();
        Self {
            x: x.to_vec(),
            x_prime: x_prime.to_vec(),
            f_x,
            f_x_prime,
            gap: f_x - f_x_prime,
            changes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubproblemRow {
    pub fixed: Vec<f64>,
    pub fixed_prime: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_pair: Option<(usize, usize)>,
    pub bound: Num,
    pub status: String,
    pub witness_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpuriousRow {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub relaxed_value: Num,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverStats {
    pub subproblems: usize,
    pub nodes: usize,
    pub sdp_iterations: usize,
    pub hierarchy_degrees: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifierSection {
    pub verdict: VerdictKind,
    /// Minimum of the subproblem bounds.
    pub bound: Num,
    pub convention: BoundConvention,
    pub threshold: Num,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub warnings: Vec<String>,
    pub stats: SolverStats,
    pub subproblems: Vec<SubproblemRow>,
    pub spurious: Vec<SpuriousRow>,
}

impl VerifierSection {
    pub fn new(model: &ModelSpec, outcome: &VerifyOutcome) -> Self {
        let (witness, note) = match &outcome.verdict {
            Verdict::Biased { instance } => (
                Some(WitnessReport::new(model, &instance.x, &instance.x_prime)),
                None,
            ),
            Verdict::Inconclusive { note, .. } => (None, Some(note.clone())),
            Verdict::NoBias { .. } => (None, None),
        };
        let mut degrees: Vec<u32> = outcome
            .subproblems
            .iter()
            .flat_map(|s| s.degrees.iter().copied())
            .collect();
        degrees.sort_unstable();
        degrees.dedup();
        Self {
            verdict: outcome.verdict.kind(),
            bound: Num(outcome.bound),
            convention: outcome.convention,
            threshold: Num(outcome.convention.threshold()),
            witness,
            note,
            warnings: outcome.warnings.clone(),
            stats: SolverStats {
                subproblems: outcome.subproblems.len(),
                nodes: outcome.total_nodes(),
                sdp_iterations: outcome.total_sdp_iterations(),
                hierarchy_degrees: degrees,
            },
            subproblems: outcome
                .subproblems
                .iter()
                .map(|s| SubproblemRow {
                    fixed: s.fixed.v.clone(),
                    fixed_prime: s.fixed.v_prime.clone(),
                    support_pair: s.support_pair,
                    bound: Num(s.bound),
                    status: s.status.clone(),
                    witness_valid: s.witness_valid,
                })
                .collect(),
            spurious: outcome
                .spurious()
                .map(|w| SpuriousRow {
                    x: w.x.clone(),
                    x_prime: w.x_prime.clone(),
                    relaxed_value: Num(w.relaxed_value),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TesterResult {
    FoundBias,
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TesterSection {
    pub result: TesterResult,
    pub samples_used: usize,
    pub budget: usize,
    pub seed: u64,
    pub strategy: Strategy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessReport>,
}

impl TesterSection {
    pub fn new(
        model: &ModelSpec,
        outcome: &TestOutcome,
        budget: usize,
        seed: u64,
        strategy: Strategy,
    ) -> Self {
        match outcome {
            TestOutcome::FoundBias {
                instance,
                samples_used,
                ..
            } => Self {
                result: TesterResult::FoundBias,
                samples_used: *samples_used,
                budget,
                seed,
                strategy,
                witness: Some(WitnessReport::new(model, &instance.x, &instance.x_prime)),
            },
            TestOutcome::NotFound { samples_used, .. } => Self {
                result: TesterResult::NotFound,
                samples_used: *samples_used,
                budget,
                seed,
                strategy,
                witness: None,
            },
        }
    }
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub parse: f64,
    pub build: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub family: String,
    pub n_features: usize,
    pub verdict: VerdictKind,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verifier: Option<VerifierSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tester: Option<TesterSection>,
    pub timings: Timings,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario: {}", self.scenario);
        let _ = writeln!(s, "model: {} ({} features)", self.family, self.n_features);
        let _ = writeln!(s, "verdict: {} (exit {})", self.verdict, self.exit_code);
        if let Some(v) = &self.verifier {
            let _ = writeln!(s, "\nverifier: {}", v.verdict);
            let _ = writeln!(s, "  bound {} against threshold {}", v.bound, v.threshold);
            if let Some(note) = &v.note {
                let _ = writeln!(s, "  {note}");
            }
            for w in &v.warnings {
                let _ = writeln!(s, "  warning: {w}");
            }
            if let Some(w) = &v.witness {
                write_witness(&mut s, w);
            }
            let _ = writeln!(
                s,
                "  {} subproblems, {} nodes, {} sdp iterations, degrees {:?}",
                v.stats.subproblems,
                v.stats.nodes,
                v.stats.sdp_iterations,
                v.stats.hierarchy_degrees
            );
            for row in &v.subproblems {
                let sp = row
                    .support_pair
                    .map(|(r, q)| format!(" sv ({r}, {q})"))
                    .unwrap_or_default();
                let _ = writeln!(
                    s,
                    "    {:?} -> {:?}{sp}: bound {} [{}]{}",
                    row.fixed,
                    row.fixed_prime,
                    row.bound,
                    row.status,
                    if row.witness_valid { " witness" } else { "" }
                );
            }
            if !v.spurious.is_empty() {
                let _ = writeln!(s, "  {} spurious candidates rejected", v.spurious.len());
            }
        }
        if let Some(t) = &self.tester {
            let _ = writeln!(s, "\nrandom testing ({:?}, seed {}):", t.strategy, t.seed);
            match t.result {
                TesterResult::FoundBias => {
                    let _ = writeln!(
                        s,
                        "  found bias after {} of {} samples",
                        t.samples_used, t.budget
                    );
                }
                TesterResult::NotFound => {
                    let _ = writeln!(s, "  not found in {} samples", t.samples_used);
                }
            }
            if let Some(w) = &t.witness {
                write_witness(&mut s, w);
            }
        }
        let tm = &self.timings;
        let _ = write!(
            s,
            "\ntimings: parse {:.3}s, build {:.3}s",
            tm.parse, tm.build
        );
        if let Some(v) = tm.solve {
            let _ = write!(s, ", solve {v:.3}s");
        }
        if let Some(v) = tm.aggregate {
            let _ = write!(s, ", aggregate {v:.3}s");
        }
        if let Some(v) = tm.test {
            let _ = write!(s, ", test {v:.3}s");
        }
        s.push('\n');
        s
    }
}

fn write_witness(s: &mut String, w: &WitnessReport) {
    let _ = writeln!(
        s,
        "  witness: f(x) = {:.6}, f(x') = {:.6}, gap {:.6}",
        w.f_x, w.f_x_prime, w.gap
    );
    for c in &w.changes {
        let _ = writeln!(s, "    feature {}: {} -> {}", c.feature, c.before, c.after);
    }
}
