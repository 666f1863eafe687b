//! Dense two-phase primal simplex.
//!
//! The problem is rewritten into standard form `min c^T u, M u = r, u >= 0`
//! (bounded variables become shifted or reflected columns plus an explicit
//! upper-bound row). Every row keeps its artificial column for the whole
//! solve: those columns track `B^-1`, which yields the row duals used for the
//! certified bound.

use super::{LinearProgram, SolveResult, SolveStatus, SolverError};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-8;
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone, Copy)]
enum Column {
    /// `z = lower + u`
    Shift { lower: f64 },
    /// `z = upper - u`
    Reflect { upper: f64 },
    /// `z = u_plus - u_minus`
    Split,
}

struct Tableau {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize, cost: &mut [f64], cost_value: &mut f64) {
        let cols = self.cols;
        let p = self.data[pr * cols + pc];
        for c in 0..cols {
            self.data[pr * cols + c] /= p;
        }
        self.rhs[pr] /= p;
        let pivot_row: Vec<f64> = self.data[pr * cols..(pr + 1) * cols].to_vec();
        let pivot_rhs = self.rhs[pr];
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.data[r * cols + pc];
            if f != 0.0 {
                let row = &mut self.data[r * cols..(r + 1) * cols];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[pc] = 0.0;
                self.rhs[r] -= f * pivot_rhs;
            }
        }
        let f = cost[pc];
        if f != 0.0 {
            for (v, pv) in cost.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            cost[pc] = 0.0;
            *cost_value -= f * pivot_rhs;
        }
        self.basis[pr] = pc;
    }
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

fn run_phase(
    t: &mut Tableau,
    cost: &mut [f64],
    cost_value: &mut f64,
    allowed: usize,
    iterations: &mut usize,
    limit: usize,
) -> PhaseOutcome {
    let mut degenerate_run = 0usize;
    loop {
        if *iterations >= limit {
            return PhaseOutcome::IterationLimit;
        }
        let bland = degenerate_run >= DEGENERATE_SWITCH;
        let mut entering = None;
        let mut best = -COST_TOL;
        for (c, &d) in cost.iter().enumerate().take(allowed) {
            if d < best {
                entering = Some(c);
                if bland {
                    break;
                }
                best = d;
            }
        }
        let Some(pc) = entering else {
            return PhaseOutcome::Optimal;
        };
        let mut leaving: Option<(usize, f64)> = None;
        for r in 0..t.rows {
            let a = t.at(r, pc);
            if a > PIVOT_TOL {
                let ratio = t.rhs[r].max(0.0) / a;
                leaving = match leaving {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - 1e-12
                            || (ratio <= lratio + 1e-12 && t.basis[r] < t.basis[lr])
                        {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
        }
        let Some((pr, ratio)) = leaving else {
            return PhaseOutcome::Unbounded;
        };
        if ratio <= 1e-12 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        t.pivot(pr, pc, cost, cost_value);
        *iterations += 1;
    }
}

pub fn solve_lp(lp: &LinearProgram) -> Result<SolveResult, SolverError> {
    lp.validate()?;
    let n = lp.n_vars();

    // Column transforms.
    let mut columns = Vec::with_capacity(n);
    let mut n_u = 0usize;
    let mut u_index = Vec::with_capacity(n);
    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        let col = if lo.is_finite() {
            Column::Shift { lower: lo }
        } else if hi.is_finite() {
            Column::Reflect { upper: hi }
        } else {
            Column::Split
        };
        u_index.push(n_u);
        n_u += if matches!(col, Column::Split) { 2 } else { 1 };
        columns.push(col);
    }

    // Rows in u-space: (coefficients over u, rhs, has_slack)
    let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    let transform_row = |row: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut coeffs = vec![0.0; n_u];
        let mut b = rhs;
        for j in 0..n {
            let a = row[j];
            if a == 0.0 {
                continue;
            }
            match columns[j] {
                Column::Shift { lower } => {
                    coeffs[u_index[j]] += a;
                    b -= a * lower;
                }
                Column::Reflect { upper } => {
                    coeffs[u_index[j]] -= a;
                    b -= a * upper;
                }
                Column::Split => {
                    coeffs[u_index[j]] += a;
                    coeffs[u_index[j] + 1] -= a;
                }
            }
        }
        (coeffs, b)
    };
    let n_ineq = lp.ineq_rows.len();
    for (row, &b) in lp.ineq_rows.iter().zip(&lp.ineq_rhs) {
        let (c, r) = transform_row(row, b);
        rows.push((c, r, true));
    }
    for (row, &e) in lp.eq_rows.iter().zip(&lp.eq_rhs) {
        let (c, r) = transform_row(row, e);
        rows.push((c, r, false));
    }
    for j in 0..n {
        if let Column::Shift { lower } = columns[j] {
            if lp.upper[j].is_finite() {
                let mut c = vec![0.0; n_u];
                c[u_index[j]] = 1.0;
                rows.push((c, lp.upper[j] - lower, true));
            }
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.2).count();
    let art0 = n_u + n_slack;
    let cols = art0 + m;
    let mut t = Tableau {
        rows: m,
        cols,
        data: vec![0.0; m * cols],
        rhs: vec![0.0; m],
        basis: (0..m).map(|r| art0 + r).collect(),
    };
    let mut signs = vec![1.0; m];
    let mut slack = n_u;
    for (r, (coeffs, b, has_slack)) in rows.iter().enumerate() {
        let s = if *b < 0.0 { -1.0 } else { 1.0 };
        signs[r] = s;
        for (c, &v) in coeffs.iter().enumerate() {
            t.data[r * cols + c] = s * v;
        }
        if *has_slack {
            t.data[r * cols + slack] = s;
            slack += 1;
        }
        t.data[r * cols + art0 + r] = 1.0;
        t.rhs[r] = s * b;
    }

    let limit = 10_000 + 200 * (m + cols);
    let mut iterations = 0usize;

    // Phase 1: minimize the sum of artificials.
    let mut cost = vec![0.0; cols];
    let mut cost_value = 0.0;
    for r in 0..m {
        for c in 0..art0 {
            cost[c] -= t.at(r, c);
        }
        cost_value -= t.rhs[r];
    }
    match run_phase(
        &mut t,
        &mut cost,
        &mut cost_value,
        art0,
        &mut iterations,
        limit,
    ) {
        PhaseOutcome::IterationLimit => {
            return Err(SolverError::Numerical(
                "simplex iteration limit in phase 1".into(),
            ))
        }
        PhaseOutcome::Unbounded => {
            return Err(SolverError::Numerical("phase 1 reported unbounded".into()))
        }
        PhaseOutcome::Optimal => {}
    }
    let rhs_scale = 1.0 + t.rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if -cost_value > FEAS_TOL * rhs_scale {
        return Ok(SolveResult::infeasible(iterations));
    }
    // Drive remaining artificials out of the basis where possible.
    for r in 0..m {
        if t.basis[r] >= art0 {
            if let Some(pc) = (0..art0).find(|&c| t.at(r, c).abs() > PIVOT_TOL) {
                let mut dummy = vec![0.0; cols];
                let mut dv = 0.0;
                t.pivot(r, pc, &mut dummy, &mut dv);
            }
        }
    }

    // Phase 2 costs over u-columns.
    let mut c_u = vec![0.0; cols];
    let mut offset = 0.0;
    for j in 0..n {
        let c = lp.objective[j];
        match columns[j] {
            Column::Shift { lower } => {
                c_u[u_index[j]] = c;
                offset += c * lower;
            }
            Column::Reflect { upper } => {
                c_u[u_index[j]] = -c;
                offset += c * upper;
            }
            Column::Split => {
                c_u[u_index[j]] = c;
                c_u[u_index[j] + 1] = -c;
            }
        }
    }
    let mut cost = c_u.clone();
    let mut cost_value = 0.0;
    for r in 0..m {
        let cb = c_u[t.basis[r]];
        if cb != 0.0 {
            for c in 0..cols {
                cost[c] -= cb * t.at(r, c);
            }
            cost_value -= cb * t.rhs[r];
        }
    }
    match run_phase(
        &mut t,
        &mut cost,
        &mut cost_value,
        art0,
        &mut iterations,
        limit,
    ) {
        PhaseOutcome::IterationLimit => {
            return Err(SolverError::Numerical(
                "simplex iteration limit in phase 2".into(),
            ))
        }
        PhaseOutcome::Unbounded => return Ok(SolveResult::unbounded(iterations)),
        PhaseOutcome::Optimal => {}
    }

    // Primal point.
    let mut u = vec![0.0; cols];
    for r in 0..m {
        u[t.basis[r]] = t.rhs[r].max(0.0);
    }
    let mut z: Vec<f64> = (0..n)
        .map(|j| match columns[j] {
            Column::Shift { lower } => lower + u[u_index[j]],
            Column::Reflect { upper } => upper - u[u_index[j]],
            Column::Split => u[u_index[j]] - u[u_index[j] + 1],
        })
        .collect();
    for j in 0..n {
        z[j] = z[j].clamp(lp.lower[j], lp.upper[j]);
    }

    // Row duals: the reduced cost of artificial column r equals -y_r.
    let y: Vec<f64> = (0..m).map(|r| -cost[art0 + r]).collect();
    let lambda: Vec<f64> = (0..n_ineq).map(|i| (-signs[i] * y[i]).max(0.0)).collect();
    let mu: Vec<f64> = (0..lp.eq_rows.len())
        .map(|k| -signs[n_ineq + k] * y[n_ineq + k])
        .collect();

    let objective = super::dot(&lp.objective, &z);
    let bound = lp.lagrangian_bound(&lp.objective, 0.0, &lambda, &mu);
    let _ = offset;
    let violation = lp.max_violation(&z);
    let status = if violation <= FEAS_TOL * rhs_scale {
        SolveStatus::Optimal
    } else {
        SolveStatus::ToleranceReached
    };
    Ok(SolveResult {
        status,
        point: z,
        objective,
        certified_lower_bound: bound.min(objective),
        gap: (objective - bound).max(0.0),
        iterations,
        nodes: 0,
    })
}
