//! Primal-dual interior point method for block-diagonal SDPs (HKM search
//! direction with a Mehrotra predictor-corrector).
//!
//! Problem form:
//!
//! ```text
//! min <C, X>   s.t.   <A_k, X> = b_k  (k = 1..K),   X = diag(X_1, ..., X_B) >= 0
//! ```
//!
//! equivalently `max -<C, X>`. The dual is `max b^T y  s.t.  C - sum y_k A_k = S >= 0`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use super::{SolveResult, SolveStatus, SolverError};

/// Dense symmetric block.
pub type SymMatrix = DMatrix<f64>;

/// One upper-triangle entry of a symmetric matrix; `row <= col`. An
/// off-diagonal entry stands for both `(row, col)` and `(col, row)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl SymEntry {
    pub fn new(block: usize, row: usize, col: usize, value: f64) -> Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        Self {
            block,
            row,
            col,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub block_sizes: Vec<usize>,
    pub objective: Vec<SymEntry>,
    pub constraints: Vec<Vec<SymEntry>>,
    pub rhs: Vec<f64>,
}

impl SdpProblem {
    pub fn new(block_sizes: Vec<usize>) -> Self {
        Self {
            block_sizes,
            objective: Vec::new(),
            constraints: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn add_constraint(&mut self, entries: Vec<SymEntry>, rhs: f64) {
        self.constraints.push(entries);
        self.rhs.push(rhs);
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.constraints.len() != self.rhs.len() {
            return Err(SolverError::Dimension("sdp right-hand side".into()));
        }
        let check = |e: &SymEntry| -> Result<(), SolverError> {
            let size = *self
                .block_sizes
                .get(e.block)
                .ok_or_else(|| SolverError::Dimension(format!("sdp block {}", e.block)))?;
            if e.row > e.col || e.col >= size || !e.value.is_finite() {
                return Err(SolverError::Dimension(format!(
                    "sdp entry ({}, {}) in block {}",
                    e.row, e.col, e.block
                )));
            }
            Ok(())
        };
        for e in self
            .objective
            .iter()
            .chain(self.constraints.iter().flatten())
        {
            check(e)?;
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Dimension("non-finite sdp rhs".into()));
        }
        Ok(())
    }

    /// `<A, X>` for a sparse symmetric `A`.
    pub fn inner(entries: &[SymEntry], x: &[SymMatrix]) -> f64 {
        entries
            .iter()
            .map(|e| {
                let v = e.value * x[e.block][(e.row, e.col)];
                if e.row == e.col {
                    v
                } else {
                    2.0 * v
                }
            })
            .sum()
    }

    fn dense(&self, entries: &[SymEntry], scale: f64, out: &mut [SymMatrix]) {
        for e in entries {
            out[e.block][(e.row, e.col)] += scale * e.value;
            if e.row != e.col {
                out[e.block][(e.col, e.row)] += scale * e.value;
            }
        }
    }

    fn zeros(&self) -> Vec<SymMatrix> {
        self.block_sizes
            .iter()
            .map(|&s| DMatrix::zeros(s, s))
            .collect()
    }

    fn apply(&self, x: &[SymMatrix]) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|a| Self::inner(a, x)),
        )
    }

    fn adjoint(&self, y: &DVector<f64>) -> Vec<SymMatrix> {
        let mut out = self.zeros();
        for (k, a) in self.constraints.iter().enumerate() {
            if y[k] != 0.0 {
                self.dense(a, y[k], &mut out);
            }
        }
        out
    }

    /// `C - sum_k y_k A_k`
    pub fn dual_slack(&self, y: &[f64]) -> Vec<SymMatrix> {
        let mut out = self.zeros();
        self.dense(&self.objective, 1.0, &mut out);
        for (k, a) in self.constraints.iter().enumerate() {
            if y[k] != 0.0 {
                self.dense(a, -y[k], &mut out);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpOptions {
    pub max_iterations: usize,
    pub feasibility_tol: f64,
    pub gap_tol: f64,
    pub step_fraction: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            feasibility_tol: 1e-9,
            gap_tol: 1e-8,
            step_fraction: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<SymMatrix>,
    pub y: Vec<f64>,
    pub s: Vec<SymMatrix>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub iterations: usize,
}

impl SdpSolution {
    fn failed(status: SolveStatus, iterations: usize) -> Self {
        Self {
            status,
            x: Vec::new(),
            y: Vec::new(),
            s: Vec::new(),
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            primal_infeasibility: f64::INFINITY,
            dual_infeasibility: f64::INFINITY,
            iterations,
        }
    }

    /// Smallest eigenvalue over all blocks of `X`.
    pub fn min_primal_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.x)
    }

    /// Weak-duality bound `b^T y`, valid when `C - A^*(y)` is PSD; otherwise
    /// no bound is claimed.
    pub fn dual_bound(&self, problem: &SdpProblem) -> f64 {
        if self.y.is_empty() && !problem.constraints.is_empty() {
            return f64::NEG_INFINITY;
        }
        let slack = problem.dual_slack(&self.y);
        if min_eigenvalue(&slack) >= 0.0 {
            problem.rhs.iter().zip(&self.y).map(|(b, y)| b * y).sum()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn to_solve_result(&self, problem: &SdpProblem) -> SolveResult {
        match self.status {
            SolveStatus::Infeasible => return SolveResult::infeasible(self.iterations),
            SolveStatus::Unbounded => return SolveResult::unbounded(self.iterations),
            _ => {}
        }
        let mut point = Vec::new();
        for block in &self.x {
            for c in 0..block.ncols() {
                for r in 0..=c {
                    point.push(block[(r, c)]);
                }
            }
        }
        let bound = self.dual_bound(problem).min(self.primal_objective);
        SolveResult {
            status: self.status,
            point,
            objective: self.primal_objective,
            certified_lower_bound: bound,
            gap: (self.primal_objective - bound).max(0.0),
            iterations: self.iterations,
            nodes: 0,
        }
    }
}

fn min_eigenvalue(blocks: &[SymMatrix]) -> f64 {
    blocks
        .iter()
        .filter(|b| b.nrows() > 0)
        .map(|b| SymmetricEigen::new(b.clone()).eigenvalues.min())
        .fold(f64::INFINITY, f64::min)
}

fn frob(blocks: &[SymMatrix]) -> f64 {
    blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
}

fn inner_dense(a: &[SymMatrix], b: &[SymMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn symmetrize(m: &mut SymMatrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn sym_product(a: &SymMatrix, b: &SymMatrix, c: &SymMatrix) -> SymMatrix {
    let mut m = a * b * c;
    symmetrize(&mut m);
    m
}

/// Largest `alpha <= 1` keeping `m + alpha * dm` positive definite, damped.
fn step_length(m: &[SymMatrix], dm: &[SymMatrix], fraction: f64) -> Option<f64> {
    let mut alpha: f64 = 1.0;
    for (b, db) in m.iter().zip(dm) {
        if b.nrows() == 0 {
            continue;
        }
        let chol = Cholesky::new(b.clone())?;
        let l = chol.l();
        let linv = l.clone().try_inverse()?;
        let mut t = &linv * db * linv.transpose();
        symmetrize(&mut t);
        let lmin = SymmetricEigen::new(t).eigenvalues.min();
        if lmin < 0.0 {
            alpha = alpha.min(-fraction / lmin);
        }
    }
    Some(alpha.min(1.0))
}

struct BlockEntries {
    // per block: list of (constraint, row, col, value) oriented both ways
    oriented: Vec<Vec<(usize, usize, usize, f64)>>,
    // per block, per constraint: range into `oriented[block]`
    ranges: Vec<Vec<(usize, usize)>>,
}

fn orient(problem: &SdpProblem) -> BlockEntries {
    let nb = problem.block_sizes.len();
    let k = problem.constraints.len();
    let mut oriented = vec![Vec::new(); nb];
    let mut ranges = vec![vec![(0usize, 0usize); k]; nb];
    for (ci, a) in problem.constraints.iter().enumerate() {
        let starts: Vec<usize> = oriented.iter().map(|v| v.len()).collect();
        for e in a {
            oriented[e.block].push((ci, e.row, e.col, e.value));
            if e.row != e.col {
                oriented[e.block].push((ci, e.col, e.row, e.value));
            }
        }
        for b in 0..nb {
            ranges[b][ci] = (starts[b], oriented[b].len());
        }
    }
    BlockEntries { oriented, ranges }
}

/// `M_kl = tr(A_k X A_l S^-1)`
fn schur(
    problem: &SdpProblem,
    entries: &BlockEntries,
    x: &[SymMatrix],
    sinv: &[SymMatrix],
) -> DMatrix<f64> {
    let k = problem.constraints.len();
    let mut m = DMatrix::zeros(k, k);
    for (b, size) in problem.block_sizes.iter().copied().enumerate() {
        let ents = &entries.oriented[b];
        if ents.is_empty() {
            continue;
        }
        let xb = &x[b];
        let sb = &sinv[b];
        let mut t = DMatrix::zeros(size, size);
        for kk in 0..k {
            let (lo, hi) = entries.ranges[b][kk];
            if lo == hi {
                continue;
            }
            // T = S^-1 A_k X, so tr(A_k X A_l S^-1) = sum_{(p,q,u) in A_l} u T[q, p]
            t.fill(0.0);
            for &(_, i, j, v) in &ents[lo..hi] {
                let scol = sb.column(i);
                let xrow = xb.row(j);
                for p in 0..size {
                    let w = v * xrow[p];
                    if w != 0.0 {
                        let mut tc = t.column_mut(p);
                        tc.axpy(w, &scol, 1.0);
                    }
                }
            }
            for &(l, p, q, u) in &ents[lo..] {
                if l < kk {
                    continue;
                }
                m[(kk, l)] += u * t[(q, p)];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
    m
}

fn factor(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = (0..m.nrows())
        .map(|i| m[(i, i)].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let mut reg = 1e-14 * scale;
    while reg < 1e-4 * scale {
        let mut r = m.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += reg;
        }
        if let Some(c) = Cholesky::new(r) {
            return Some(c);
        }
        reg *= 100.0;
    }
    None
}

pub fn solve_sdp(problem: &SdpProblem) -> Result<SdpSolution, SolverError> {
    solve_sdp_with(problem, &SdpOptions::default())
}

pub fn solve_sdp_with(
    problem: &SdpProblem,
    options: &SdpOptions,
) -> Result<SdpSolution, SolverError> {
    problem.validate()?;
    let k = problem.constraints.len();
    let b = DVector::from_column_slice(&problem.rhs);
    let mut c = problem.zeros();
    problem.dense(&problem.objective, 1.0, &mut c);
    let entries = orient(problem);

    let norm_c = frob(&c);
    let norm_b = b.norm();
    let a_norms: Vec<f64> = problem
        .constraints
        .iter()
        .map(|a| {
            a.iter()
                .map(|e| {
                    if e.row == e.col {
                        e.value * e.value
                    } else {
                        2.0 * e.value * e.value
                    }
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let max_a = a_norms.iter().copied().fold(0.0, f64::max);

    let mut x: Vec<SymMatrix> = Vec::new();
    let mut s: Vec<SymMatrix> = Vec::new();
    for &size in &problem.block_sizes {
        let n = size as f64;
        let ratio = problem
            .rhs
            .iter()
            .zip(&a_norms)
            .map(|(bk, ak)| (1.0 + bk.abs()) / (1.0 + ak))
            .fold(0.0, f64::max);
        let xi = 10f64.max(n.sqrt()).max(n * ratio);
        let eta = 10f64.max(n.sqrt()).max(norm_c.max(max_a));
        x.push(DMatrix::identity(size, size) * xi);
        s.push(DMatrix::identity(size, size) * eta);
    }
    let mut y = DVector::zeros(k);
    let total_dim: usize = problem.block_sizes.iter().sum();
    let total_dim = total_dim.max(1) as f64;

    let mut status = SolveStatus::ToleranceReached;
    let mut iterations = 0;
    let mut rel_p = f64::INFINITY;
    let mut rel_d = f64::INFINITY;

    for it in 0..options.max_iterations {
        iterations = it;
        let ax = problem.apply(&x);
        let r_p = &b - &ax;
        let aty = problem.adjoint(&y);
        let r_d: Vec<SymMatrix> = (0..c.len()).map(|i| &c[i] - &aty[i] - &s[i]).collect();
        let pobj = inner_dense(&c, &x);
        let dobj = b.dot(&y);
        let mu = inner_dense(&x, &s) / total_dim;
        rel_p = r_p.norm() / (1.0 + norm_b);
        rel_d = frob(&r_d) / (1.0 + norm_c);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        if rel_p <= options.feasibility_tol
            && rel_d <= options.feasibility_tol
            && rel_gap <= options.gap_tol
        {
            status = SolveStatus::Optimal;
            break;
        }
        if frob(&x) > 1e12 || y.amax() > 1e12 {
            log::debug!("sdp iterates diverged at iteration {it}");
            return Ok(SdpSolution::failed(SolveStatus::Infeasible, it));
        }

        let mut sinv = Vec::with_capacity(s.len());
        for sb in &s {
            if sb.nrows() == 0 {
                sinv.push(sb.clone());
                continue;
            }
            let Some(ch) = Cholesky::new(sb.clone()) else {
                return Err(SolverError::Numerical(
                    "dual slack lost definiteness".into(),
                ));
            };
            let mut inv = ch.inverse();
            symmetrize(&mut inv);
            sinv.push(inv);
        }
        let chol = if k > 0 {
            match factor(schur(problem, &entries, &x, &sinv)) {
                Some(ch) => Some(ch),
                None => break,
            }
        } else {
            None
        };

        // X R_d S^-1, shared by predictor and corrector
        let xrds: Vec<SymMatrix> = (0..x.len())
            .map(|i| sym_product(&x[i], &r_d[i], &sinv[i]))
            .collect();
        let a_xrds = problem.apply(&xrds);

        let direction = |rc: &[SymMatrix]| -> (Vec<SymMatrix>, DVector<f64>, Vec<SymMatrix>) {
            let rhs = &r_p - problem.apply(rc) + &a_xrds;
            let dy = match &chol {
                Some(ch) => ch.solve(&rhs),
                None => DVector::zeros(0),
            };
            let atdy = problem.adjoint(&dy);
            let ds: Vec<SymMatrix> = (0..x.len()).map(|i| &r_d[i] - &atdy[i]).collect();
            let dx: Vec<SymMatrix> = (0..x.len())
                .map(|i| &rc[i] - sym_product(&x[i], &ds[i], &sinv[i]))
                .collect();
            (dx, dy, ds)
        };

        // predictor
        let rc_aff: Vec<SymMatrix> = x.iter().map(|xb| -xb).collect();
        let (dxa, _, dsa) = direction(&rc_aff);
        let (Some(ap), Some(ad)) = (step_length(&x, &dxa, 1.0), step_length(&s, &dsa, 1.0)) else {
            break;
        };
        let mu_aff = {
            let xa: Vec<SymMatrix> = (0..x.len()).map(|i| &x[i] + &dxa[i] * ap).collect();
            let sa: Vec<SymMatrix> = (0..s.len()).map(|i| &s[i] + &dsa[i] * ad).collect();
            inner_dense(&xa, &sa) / total_dim
        };
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // corrector
        let rc: Vec<SymMatrix> = (0..x.len())
            .map(|i| {
                let mut m = &sinv[i] * (sigma * mu) - &x[i] - &dxa[i] * &dsa[i] * &sinv[i];
                symmetrize(&mut m);
                m
            })
            .collect();
        let (dx, dy, ds) = direction(&rc);
        let (Some(ap), Some(ad)) = (
            step_length(&x, &dx, options.step_fraction),
            step_length(&s, &ds, options.step_fraction),
        ) else {
            break;
        };
        if ap < 1e-12 && ad < 1e-12 {
            break;
        }
        for i in 0..x.len() {
            x[i] += &dx[i] * ap;
            s[i] += &ds[i] * ad;
            symmetrize(&mut x[i]);
            symmetrize(&mut s[i]);
        }
        y += &dy * ad;
        iterations = it + 1;
    }

    let primal_objective = inner_dense(&c, &x);
    let dual_objective = b.dot(&y);
    Ok(SdpSolution {
        status,
        x,
        y: y.iter().copied().collect(),
        s,
        primal_objective,
        dual_objective,
        primal_infeasibility: rel_p,
        dual_infeasibility: rel_d,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{solve_lp, LinearProgram};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_cone() {
        // max -z s.t. z >= 0
        let mut p = SdpProblem::new(vec![1]);
        p.objective.push(SymEntry::new(0, 0, 0, 1.0));
        let sol = solve_sdp(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.primal_objective.abs() < 1e-7);
        assert!(sol.min_primal_eigenvalue() >= -1e-8);
    }

    #[test]
    fn shor_relaxation_of_square() {
        // x^2 - gamma = [1 x] Q [1 x]^T, minimize Q00 subject to 2 Q01 = 0, Q11 = 1.
        let mut p = SdpProblem::new(vec![2]);
        p.objective.push(SymEntry::new(0, 0, 0, 1.0));
        p.add_constraint(vec![SymEntry::new(0, 0, 1, 1.0)], 0.0);
        p.add_constraint(vec![SymEntry::new(0, 1, 1, 1.0)], 1.0);
        let sol = solve_sdp(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let gamma = -sol.primal_objective;
        assert!(gamma.abs() < 1e-6, "{gamma}");
        let r = sol.to_solve_result(&p);
        assert!(r.certified_lower_bound <= r.objective);
    }

    #[test]
    fn two_by_two_known_optimum() {
        // min X00 + X11 s.t. X01 = 1 gives 2 at X = [[1,1],[1,1]]
        let mut p = SdpProblem::new(vec![2]);
        p.objective.push(SymEntry::new(0, 0, 0, 1.0));
        p.objective.push(SymEntry::new(0, 1, 1, 1.0));
        p.add_constraint(vec![SymEntry::new(0, 0, 1, 0.5)], 1.0);
        let sol = solve_sdp(&p).unwrap();
        assert!((sol.primal_objective - 2.0).abs() < 1e-7);
        assert!((sol.dual_objective - 2.0).abs() < 1e-7);
        assert!(sol.min_primal_eigenvalue() >= -1e-8);
        let residual = (SdpProblem::inner(&p.constraints[0], &sol.x) - 1.0).abs();
        assert!(residual <= 1e-7);
    }

    #[test]
    fn diagonal_sdp_matches_lp() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = 4;
            let m = 2;
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
            let a: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let b: Vec<f64> = a.iter().map(|r| crate::solvers::dot(r, &x0)).collect();

            let mut lp =
                LinearProgram::new(c.clone()).with_bounds(vec![0.0; n], vec![f64::INFINITY; n]);
            for (r, &bi) in a.iter().zip(&b) {
                lp.add_eq(r.clone(), bi);
            }
            let lp_res = solve_lp(&lp).unwrap();

            let mut p = SdpProblem::new(vec![1; n]);
            for j in 0..n {
                p.objective.push(SymEntry::new(j, 0, 0, c[j]));
            }
            for (r, &bi) in a.iter().zip(&b) {
                p.add_constraint((0..n).map(|j| SymEntry::new(j, 0, 0, r[j])).collect(), bi);
            }
            let sol = solve_sdp(&p).unwrap();
            assert!((sol.primal_objective - lp_res.objective).abs() < 1e-6);
            let r = sol.to_solve_result(&p);
            assert!(r.certified_lower_bound <= lp_res.objective + 1e-9);
        }
    }

    #[test]
    fn infeasible_diverges() {
        // X00 = -1 with X >= 0
        let mut p = SdpProblem::new(vec![1]);
        p.objective.push(SymEntry::new(0, 0, 0, 1.0));
        p.add_constraint(vec![SymEntry::new(0, 0, 0, 1.0)], -1.0);
        let sol = solve_sdp(&p).unwrap();
        assert_ne!(sol.status, SolveStatus::Optimal);
    }

    #[test]
    fn bad_entry_rejected() {
        let mut p = SdpProblem::new(vec![2]);
        p.objective.push(SymEntry {
            block: 0,
            row: 1,
            col: 0,
            value: 1.0,
        });
        assert!(solve_sdp(&p).is_err());
    }
}
