//! Best-first branch-and-bound over LP or convex QP relaxations.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{
    solve_lp, solve_qp, LinearProgram, QuadraticProgram, SolveResult, SolveStatus, SolverError,
};
use crate::model::INTEGRALITY_TOL;

pub const DEFAULT_NODE_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum BaseProblem {
    Lp(LinearProgram),
    Qp(QuadraticProgram),
}

impl BaseProblem {
    fn constraints(&self) -> &LinearProgram {
        match self {
            BaseProblem::Lp(lp) => lp,
            BaseProblem::Qp(qp) => &qp.constraints,
        }
    }

    fn with_bounds(&self, lower: &[f64], upper: &[f64]) -> Self {
        let mut out = self.clone();
        let lp = match &mut out {
            BaseProblem::Lp(lp) => lp,
            BaseProblem::Qp(qp) => &mut qp.constraints,
        };
        lp.lower = lower.to_vec();
        lp.upper = upper.to_vec();
        out
    }

    fn solve(&self) -> Result<SolveResult, SolverError> {
        match self {
            BaseProblem::Lp(lp) => solve_lp(lp),
            BaseProblem::Qp(qp) => solve_qp(qp),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedIntegerSpec {
    pub base: BaseProblem,
    pub integer_vars: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MipOptions {
    pub node_limit: usize,
    pub absolute_gap: f64,
}

impl Default for MipOptions {
    fn default() -> Self {
        Self {
            node_limit: DEFAULT_NODE_LIMIT,
            absolute_gap: 1e-6,
        }
    }
}

struct Node {
    bound: f64,
    seq: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

pub fn solve_mip(
    spec: &MixedIntegerSpec,
    options: &MipOptions,
) -> Result<SolveResult, SolverError> {
    let base = spec.base.constraints();
    base.validate()?;
    let n = base.n_vars();
    for &j in &spec.integer_vars {
        if j >= n {
            return Err(SolverError::BadIntegerVar(j));
        }
    }
    let mut is_int = vec![false; n];
    for &j in &spec.integer_vars {
        is_int[j] = true;
    }

    let mut lower = base.lower.clone();
    let mut upper = base.upper.clone();
    for j in 0..n {
        if is_int[j] {
            lower[j] = (lower[j] - INTEGRALITY_TOL).ceil();
            upper[j] = (upper[j] + INTEGRALITY_TOL).floor();
            if lower[j] > upper[j] {
                return Ok(SolveResult::infeasible(0));
            }
        }
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        lower,
        upper,
    });
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut pruned_bound = f64::INFINITY;
    let mut iterations = 0usize;
    let mut nodes = 0usize;
    let mut hit_limit = false;

    while let Some(node) = heap.pop() {
        let inc_value = incumbent.as_ref().map_or(f64::INFINITY, |i| i.0);
        if node.bound >= inc_value - options.absolute_gap {
            pruned_bound = pruned_bound.min(node.bound);
            continue;
        }
        if nodes >= options.node_limit {
            heap.push(node);
            hit_limit = true;
            break;
        }
        nodes += 1;
        let relaxed = spec.base.with_bounds(&node.lower, &node.upper).solve()?;
        iterations += relaxed.iterations;
        match relaxed.status {
            SolveStatus::Infeasible => continue,
            SolveStatus::Unbounded => {
                let mut r = SolveResult::unbounded(iterations);
                r.nodes = nodes;
                return Ok(r);
            }
            _ => {}
        }
        let bound = relaxed.certified_lower_bound.max(node.bound);
        if bound >= inc_value - options.absolute_gap {
            pruned_bound = pruned_bound.min(bound);
            continue;
        }

        let mut branch: Option<(usize, f64)> = None;
        let mut best_frac = INTEGRALITY_TOL;
        for j in 0..n {
            if !is_int[j] {
                continue;
            }
            let v = relaxed.point[j];
            let frac = (v - v.floor()).min(v.ceil() - v);
            if frac > best_frac {
                best_frac = frac;
                branch = Some((j, v));
            }
        }

        match branch {
            None => {
                // Integral relaxation: pin the integers and re-solve so the
                // continuous part is exact at the rounded values.
                let mut lo = node.lower.clone();
                let mut hi = node.upper.clone();
                for j in 0..n {
                    if is_int[j] {
                        let v = relaxed.point[j].round().clamp(lo[j], hi[j]);
                        lo[j] = v;
                        hi[j] = v;
                    }
                }
                let leaf = spec.base.with_bounds(&lo, &hi).solve()?;
                iterations += leaf.iterations;
                if leaf.status == SolveStatus::Infeasible {
                    pruned_bound = pruned_bound.min(bound.max(leaf.certified_lower_bound));
                    continue;
                }
                if leaf.objective < inc_value {
                    incumbent = Some((leaf.objective, leaf.point.clone()));
                }
                pruned_bound = pruned_bound.min(bound.max(leaf.certified_lower_bound));
            }
            Some((j, v)) => {
                let mut up_lower = node.lower.clone();
                up_lower[j] = v.ceil();
                let mut down_upper = node.upper.clone();
                down_upper[j] = v.floor();
                seq += 1;
                heap.push(Node {
                    bound,
                    seq,
                    lower: node.lower.clone(),
                    upper: down_upper,
                });
                seq += 1;
                heap.push(Node {
                    bound,
                    seq,
                    lower: up_lower,
                    upper: node.upper,
                });
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let (objective, point) = match incumbent {
        Some((v, p)) => (v, p),
        None => {
            if !hit_limit {
                let mut r = SolveResult::infeasible(iterations);
                r.nodes = nodes;
                return Ok(r);
            }
            (f64::INFINITY, Vec::new())
        }
    };
    let certified = objective.min(open_bound).min(pruned_bound);
    let status = if hit_limit && objective - certified > options.absolute_gap {
        SolveStatus::ToleranceReached
    } else {
        SolveStatus::Optimal
    };
    Ok(SolveResult {
        status,
        point,
        objective,
        certified_lower_bound: certified,
        gap: if objective.is_finite() {
            (objective - certified).max(0.0)
        } else {
            f64::INFINITY
        },
        iterations,
        nodes,
    })
}
