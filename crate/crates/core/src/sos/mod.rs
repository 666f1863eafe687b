//! Sum-of-squares lower bounds for polynomial minimization.
//!
//! Two relaxations are provided: the unconstrained Shor form
//! `f - gamma = [z]_d^T Q [z]_d, Q >= 0` and the constrained Putinar form
//! `f - gamma = sigma_0 + sum_j sigma_j g_j` over a box-bounded
//! semi-algebraic set. Before assembly the Putinar form rescales every box to
//! `[-1, 1]` and substitutes fixed-width variables, which keeps the SDP well
//! conditioned and lets the coefficient residual of the solver's Gram
//! matrices be turned into a one-sided correction of the bound.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::poly::{enumerate_basis, MonomialBasis, MultiIndex, PolyError, Polynomial, VarMap};
use crate::solvers::{solve_sdp_with, SdpOptions, SdpProblem, SolveStatus, SolverError, SymEntry};

/// Feasibility tolerance for candidate points.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// A candidate is certified when its value is within this of the bound.
pub const CERTIFICATE_TOL: f64 = 1e-5;
/// Levels whose SDP has more equality rows than this are not attempted.
pub const DEFAULT_MAX_ROWS: usize = 1500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SosError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("relaxation degree {degree} is below the minimum admissible degree {minimum}")]
    DegreeTooLow { degree: u32, minimum: u32 },
    #[error("variable {index} has invalid box [{lower}, {upper}]")]
    InvalidBox {
        index: usize,
        lower: f64,
        upper: f64,
    },
}

/// `{z : lower <= z <= upper, g_j(z) >= 0, p_k(z) = 0}` with a finite box.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiAlgebraicSet {
    nvars: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    inequalities: Vec<Polynomial>,
    equalities: Vec<Polynomial>,
}

impl SemiAlgebraicSet {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, SosError> {
        if lower.len() != upper.len() {
            return Err(PolyError::NvarsMismatch(lower.len(), upper.len()).into());
        }
        for (index, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(SosError::InvalidBox {
                    index,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self {
            nvars: lower.len(),
            lower,
            upper,
            inequalities: Vec::new(),
            equalities: Vec::new(),
        })
    }

    /// Adds `g >= 0`.
    pub fn add_inequality(&mut self, g: Polynomial) -> Result<(), SosError> {
        if g.nvars() != self.nvars {
            return Err(PolyError::NvarsMismatch(self.nvars, g.nvars()).into());
        }
        self.inequalities.push(g);
        Ok(())
    }

    /// Adds `p = 0`, used as the pair `p >= 0`, `-p >= 0`.
    pub fn add_equality(&mut self, p: Polynomial) -> Result<(), SosError> {
        if p.nvars() != self.nvars {
            return Err(PolyError::NvarsMismatch(self.nvars, p.nvars()).into());
        }
        self.equalities.push(p);
        Ok(())
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn inequalities(&self) -> &[Polynomial] {
        &self.inequalities
    }

    pub fn equalities(&self) -> &[Polynomial] {
        &self.equalities
    }

    /// Every constraint in `g(z) >= 0` form, box pairs first.
    pub fn constraint_polynomials(&self) -> Vec<Polynomial> {
        let n = self.nvars;
        let mut out = Vec::new();
        for i in 0..n {
            let mut lo = Polynomial::variable(n, i);
            lo.add_term(MultiIndex::zero(n), -self.lower[i]);
            let mut hi = Polynomial::constant(n, self.upper[i]);
            hi.add_term(MultiIndex::unit(n, i), -1.0);
            out.push(lo);
            out.push(hi);
        }
        out.extend(self.inequalities.iter().cloned());
        for p in &self.equalities {
            out.push(p.clone());
            out.push(-p);
        }
        out
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        z.len() == self.nvars
            && z.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol)
            && self.inequalities.iter().all(|g| g.eval(z) >= -tol)
            && self.equalities.iter().all(|p| p.eval(z).abs() <= tol)
    }

    /// `max_j ceil(deg(g_j) / 2)`, at least 1 because of the box.
    pub fn min_degree(&self) -> u32 {
        self.inequalities
            .iter()
            .chain(&self.equalities)
            .map(|g| g.degree().div_ceil(2))
            .fold(1, u32::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxationKind {
    Shor,
    Putinar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Trivial {
    Constant(f64),
    Empty,
}

/// An assembled degree-`d` relaxation ready to be solved.
#[derive(Debug, Clone)]
pub struct SosRelaxation {
    kind: RelaxationKind,
    degree: u32,
    min_degree: u32,
    objective: Polynomial,
    set: Option<SemiAlgebraicSet>,
    reduction: Vec<VarMap>,
    reduced_nvars: usize,
    scale: f64,
    constant: f64,
    moment_basis: Option<MonomialBasis>,
    gram_bases: Vec<MonomialBasis>,
    // For the Shor repair: one Gram position per moment index.
    first_pair: Vec<Option<(usize, usize)>>,
    sdp: SdpProblem,
    trivial: Option<Trivial>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelStatus {
    Solved,
    Exact,
    Stalled,
    Infeasible,
    SolverFailed,
    TooLarge,
}

/// Result of one hierarchy level.
#[derive(Debug, Clone, PartialEq)]
pub struct SosBound {
    pub degree: u32,
    /// Best certified bound so far (monotone along the hierarchy).
    pub bound: f64,
    /// This level's own certified bound.
    pub level_bound: f64,
    /// The solver's uncorrected `gamma`.
    pub raw_bound: f64,
    /// Moments over the (reduced, rescaled) degree-`2d` basis.
    pub moments: Vec<f64>,
    pub candidate: Option<Vec<f64>>,
    pub candidate_certified: bool,
    pub sdp_iterations: usize,
    pub status: LevelStatus,
}

impl SosBound {
    fn without_solution(degree: u32, bound: f64, status: LevelStatus) -> Self {
        Self {
            degree,
            bound,
            level_bound: bound,
            raw_bound: bound,
            moments: Vec::new(),
            candidate: None,
            candidate_certified: false,
            sdp_iterations: 0,
            status,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub point: Vec<f64>,
    pub certified: bool,
}

fn normalized(p: &Polynomial) -> (Polynomial, f64) {
    let s = p.max_abs_coefficient();
    if s == 0.0 {
        (p.clone(), 1.0)
    } else {
        (p.scale(1.0 / s), s)
    }
}

pub fn build_shor_sdp(f: &Polynomial, d: u32) -> Result<SosRelaxation, SosError> {
    let n = f.nvars();
    let min_degree = f.degree().div_ceil(2);
    if d < min_degree {
        return Err(SosError::DegreeTooLow {
            degree: d,
            minimum: min_degree,
        });
    }
    let reduction: Vec<VarMap> = (0..n).map(VarMap::identity).collect();
    let mut rel = SosRelaxation::empty(
        RelaxationKind::Shor,
        d,
        min_degree,
        f.clone(),
        None,
        reduction,
        n,
    );
    if f.is_constant() {
        rel.trivial = Some(Trivial::Constant(f.constant_term()));
        return Ok(rel);
    }
    let (fr, scale) = normalized(f);
    rel.scale = scale;
    rel.assemble(&fr, &[Polynomial::constant(n, 1.0)], &[0])?;
    Ok(rel)
}

pub fn build_putinar_sdp(
    f: &Polynomial,
    set: &SemiAlgebraicSet,
    d: u32,
) -> Result<SosRelaxation, SosError> {
    let n = set.nvars();
    if f.nvars() != n {
        return Err(PolyError::NvarsMismatch(n, f.nvars()).into());
    }
    let min_degree = f.degree().div_ceil(2).max(set.min_degree());
    if d < min_degree {
        return Err(SosError::DegreeTooLow {
            degree: d,
            minimum: min_degree,
        });
    }

    // z_i = center_i + half_i * u_k over the variables of positive width
    let mut reduction = Vec::with_capacity(n);
    let mut k = 0usize;
    for i in 0..n {
        let (lo, hi) = (set.lower[i], set.upper[i]);
        if hi > lo {
            reduction.push(VarMap::Affine {
                var: k,
                offset: 0.5 * (lo + hi),
                scale: 0.5 * (hi - lo),
            });
            k += 1;
        } else {
            reduction.push(VarMap::Constant(lo));
        }
    }
    let mut rel = SosRelaxation::empty(
        RelaxationKind::Putinar,
        d,
        min_degree,
        f.clone(),
        Some(set.clone()),
        reduction.clone(),
        k,
    );

    let mut gs: Vec<Polynomial> = vec![Polynomial::constant(k, 1.0)];
    for v in 0..k {
        let mut lo = Polynomial::constant(k, 1.0);
        lo.add_term(MultiIndex::unit(k, v), 1.0);
        let mut hi = Polynomial::constant(k, 1.0);
        hi.add_term(MultiIndex::unit(k, v), -1.0);
        gs.push(lo);
        gs.push(hi);
    }
    for g in &set.inequalities {
        let (gr, _) = normalized(&g.substitute(&reduction, k));
        if gr.is_constant() {
            if gr.constant_term() < 0.0 {
                rel.trivial = Some(Trivial::Empty);
                return Ok(rel);
            }
            continue;
        }
        gs.push(gr);
    }
    for p in &set.equalities {
        let (pr, _) = normalized(&p.substitute(&reduction, k));
        if pr.is_constant() {
            if pr.constant_term() != 0.0 {
                rel.trivial = Some(Trivial::Empty);
                return Ok(rel);
            }
            continue;
        }
        gs.push(-&pr);
        gs.push(pr);
    }

    let fr = f.substitute(&reduction, k);
    if fr.is_constant() {
        rel.trivial = Some(Trivial::Constant(fr.constant_term()));
        return Ok(rel);
    }
    let (fr, scale) = normalized(&fr);
    rel.scale = scale;
    let halves: Vec<u32> = gs.iter().map(|g| g.degree().div_ceil(2)).collect();
    rel.assemble(&fr, &gs, &halves)?;
    Ok(rel)
}

impl SosRelaxation {
    fn empty(
        kind: RelaxationKind,
        degree: u32,
        min_degree: u32,
        objective: Polynomial,
        set: Option<SemiAlgebraicSet>,
        reduction: Vec<VarMap>,
        reduced_nvars: usize,
    ) -> Self {
        Self {
            kind,
            degree,
            min_degree,
            objective,
            set,
            reduction,
            reduced_nvars,
            scale: 1.0,
            constant: 0.0,
            moment_basis: None,
            gram_bases: Vec::new(),
            first_pair: Vec::new(),
            sdp: SdpProblem::new(Vec::new()),
            trivial: None,
        }
    }

    fn assemble(
        &mut self,
        f: &Polynomial,
        gs: &[Polynomial],
        halves: &[u32],
    ) -> Result<(), SosError> {
        let k = self.reduced_nvars;
        let d = self.degree;
        let moment_basis = enumerate_basis(k, 2 * d)?;
        let rows = moment_basis.len() - 1;
        let mut gram_bases = Vec::with_capacity(gs.len());
        for &v in halves {
            gram_bases.push(enumerate_basis(k, d - v)?);
        }
        let mut sdp = SdpProblem::new(gram_bases.iter().map(MonomialBasis::len).collect());
        sdp.constraints = vec![Vec::new(); rows];
        sdp.rhs = vec![0.0; rows];
        for (alpha, c) in f.terms() {
            let idx = moment_basis
                .index_of(alpha)
                .expect("objective degree is within the relaxation degree");
            if idx > 0 {
                sdp.rhs[idx - 1] = c;
            }
        }
        let mut first_pair = vec![None; moment_basis.len()];
        for (block, (g, basis)) in gs.iter().zip(&gram_bases).enumerate() {
            let monos = basis.monomials();
            for a in 0..monos.len() {
                for b in a..monos.len() {
                    let beta = monos[a].add(&monos[b]);
                    if block == 0 {
                        let idx = moment_basis
                            .index_of(&beta)
                            .expect("gram products stay in degree 2d");
                        first_pair[idx].get_or_insert((a, b));
                    }
                    for (gamma, coef) in g.terms() {
                        let alpha = beta.add(gamma);
                        let idx = moment_basis
                            .index_of(&alpha)
                            .expect("multiplier degrees fit in 2d");
                        let entry = SymEntry::new(block, a, b, coef);
                        if idx == 0 {
                            sdp.objective.push(entry);
                        } else {
                            sdp.constraints[idx - 1].push(entry);
                        }
                    }
                }
            }
        }
        self.constant = f.constant_term();
        self.moment_basis = Some(moment_basis);
        self.gram_bases = gram_bases;
        self.first_pair = first_pair;
        self.sdp = sdp;
        Ok(())
    }

    pub fn kind(&self) -> RelaxationKind {
        self.kind
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn min_degree(&self) -> u32 {
        self.min_degree
    }

    pub fn objective(&self) -> &Polynomial {
        &self.objective
    }

    pub fn sdp(&self) -> &SdpProblem {
        &self.sdp
    }

    /// Degree-`2d` monomial basis over the reduced variables.
    pub fn basis(&self) -> Option<&MonomialBasis> {
        self.moment_basis.as_ref()
    }

    pub fn n_rows(&self) -> usize {
        self.sdp.n_constraints()
    }

    /// Maps reduced coordinates back to the original variables.
    fn lift(&self, u: &[f64]) -> Vec<f64> {
        self.reduction
            .iter()
            .map(|m| match *m {
                VarMap::Constant(c) => c,
                VarMap::Affine { var, offset, scale } => offset + scale * u[var],
            })
            .collect()
    }

    fn is_feasible(&self, z: &[f64]) -> bool {
        match &self.set {
            Some(set) => set.contains(z, FEASIBILITY_TOL),
            None => true,
        }
    }

    pub fn solve(&self, options: &SdpOptions) -> Result<SosBound, SosError> {
        let d = self.degree;
        match self.trivial {
            Some(Trivial::Empty) => {
                return Ok(SosBound::without_solution(
                    d,
                    f64::INFINITY,
                    LevelStatus::Exact,
                ));
            }
            Some(Trivial::Constant(c)) => {
                let point = self.lift(&vec![0.0; self.reduced_nvars]);
                let certified = self.is_feasible(&point);
                let mut out = SosBound::without_solution(d, c, LevelStatus::Exact);
                out.candidate = Some(point);
                out.candidate_certified = certified;
                return Ok(out);
            }
            None => {}
        }

        let sol = solve_sdp_with(&self.sdp, options)?;
        if sol.status == SolveStatus::Infeasible || sol.x.is_empty() {
            let mut out = SosBound::without_solution(d, f64::NEG_INFINITY, LevelStatus::Infeasible);
            out.sdp_iterations = sol.iterations;
            return Ok(out);
        }

        let projected: Vec<DMatrix<f64>> = sol.x.iter().map(psd_projection).collect();
        let gamma = self.constant - SdpProblem::inner(&self.sdp.objective, &projected);
        let residuals: Vec<f64> = self
            .sdp
            .constraints
            .iter()
            .zip(&self.sdp.rhs)
            .map(|(a, &c)| c - SdpProblem::inner(a, &projected))
            .collect();
        let bound_normalized = match self.kind {
            // On [-1, 1]^k every monomial is bounded by 1 in magnitude.
            RelaxationKind::Putinar => gamma - residuals.iter().map(|r| r.abs()).sum::<f64>(),
            RelaxationKind::Shor => gamma - self.shor_repair(&projected[0], &residuals),
        };
        let level_bound = self.scale * bound_normalized;
        let raw_bound = self.scale * (self.constant - sol.primal_objective);

        let mut moments = vec![0.0; self.sdp.n_constraints() + 1];
        moments[0] = 1.0;
        for (k, &y) in sol.y.iter().enumerate() {
            moments[k + 1] = -y;
        }
        let mut out = SosBound {
            degree: d,
            bound: level_bound,
            level_bound,
            raw_bound,
            moments,
            candidate: None,
            candidate_certified: false,
            sdp_iterations: sol.iterations,
            status: if sol.status == SolveStatus::Optimal {
                LevelStatus::Solved
            } else {
                LevelStatus::Stalled
            },
        };
        if let Some(c) = extract_candidate(self, &out.moments, level_bound) {
            out.candidate = Some(c.point);
            out.candidate_certified = c.certified;
        }
        Ok(out)
    }

    /// Smallest shift `t >= 0` of the constant Gram entry making the exact
    /// Gram matrix of `f - gamma` PSD, or infinity when none is found.
    fn shor_repair(&self, q: &DMatrix<f64>, residuals: &[f64]) -> f64 {
        let mut m = q.clone();
        for (k, &r) in residuals.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let Some((a, b)) = self.first_pair[k + 1] else {
                return f64::INFINITY;
            };
            if a == b {
                m[(a, a)] += r;
            } else {
                m[(a, b)] += 0.5 * r;
                m[(b, a)] += 0.5 * r;
            }
        }
        if SymmetricEigen::new(m.clone()).eigenvalues.min() >= 0.0 {
            return 0.0;
        }
        let s = m.nrows();
        if s < 2 {
            return -m[(0, 0)].min(0.0);
        }
        let m11 = m.view((1, 1), (s - 1, s - 1)).into_owned();
        if SymmetricEigen::new(m11.clone()).eigenvalues.min() <= 0.0 {
            return f64::INFINITY;
        }
        let col = m.view((1, 0), (s - 1, 1)).into_owned();
        let Some(ch) = m11.cholesky() else {
            return f64::INFINITY;
        };
        let need = col.dot(&ch.solve(&col)) - m[(0, 0)];
        need.max(0.0) * (1.0 + 1e-9) + 1e-12 * (1.0 + m[(0, 0)].abs())
    }
}

fn psd_projection(x: &DMatrix<f64>) -> DMatrix<f64> {
    if x.nrows() == 0 {
        return x.clone();
    }
    let eig = SymmetricEigen::new(x.clone());
    if eig.eigenvalues.min() >= 0.0 {
        return x.clone();
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// First-order moments as a candidate minimizer, certified when feasible
/// and within [`CERTIFICATE_TOL`] of `bound`.
pub fn extract_candidate(rel: &SosRelaxation, moments: &[f64], bound: f64) -> Option<Candidate> {
    let basis = rel.moment_basis.as_ref()?;
    let k = rel.reduced_nvars;
    let mut u = Vec::with_capacity(k);
    for v in 0..k {
        let idx = basis.index_of(&MultiIndex::unit(k, v))?;
        u.push(*moments.get(idx)?);
    }
    let mut point = rel.lift(&u);
    if let Some(set) = &rel.set {
        for (i, z) in point.iter_mut().enumerate() {
            *z = z.clamp(set.lower[i], set.upper[i]);
        }
    }
    if point.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let value = rel.objective.eval(&point);
    let certified =
        bound.is_finite() && rel.is_feasible(&point) && value <= bound + CERTIFICATE_TOL;
    Some(Candidate { point, certified })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchyOptions {
    pub sdp: SdpOptions,
    pub max_rows: usize,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        Self {
            sdp: SdpOptions::default(),
            max_rows: DEFAULT_MAX_ROWS,
        }
    }
}

/// Solves Putinar relaxations for `d = d_start..=d_max`, stopping once the
/// bound reaches `target` or a certified candidate appears.
pub fn run_hierarchy(
    f: &Polynomial,
    set: &SemiAlgebraicSet,
    d_start: u32,
    d_max: u32,
    target: f64,
    options: &HierarchyOptions,
) -> Result<Vec<SosBound>, SosError> {
    let mut levels: Vec<SosBound> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for d in d_start..=d_max.max(d_start) {
        let rel = match build_putinar_sdp(f, set, d) {
            Ok(rel) => rel,
            Err(SosError::Poly(PolyError::BasisTooLarge { .. })) => {
                if levels.is_empty() {
                    levels.push(SosBound::without_solution(d, best, LevelStatus::TooLarge));
                }
                break;
            }
            Err(e) => return Err(e),
        };
        if rel.n_rows() > options.max_rows {
            log::debug!(
                "skipping degree {d}: {} rows exceed the cap {}",
                rel.n_rows(),
                options.max_rows
            );
            if levels.is_empty() {
                levels.push(SosBound::without_solution(d, best, LevelStatus::TooLarge));
            }
            break;
        }
        let mut level = match rel.solve(&options.sdp) {
            Ok(level) => level,
            Err(SosError::Solver(e)) => {
                log::warn!("degree {d} relaxation failed: {e}");
                SosBound::without_solution(d, f64::NEG_INFINITY, LevelStatus::SolverFailed)
            }
            Err(e) => return Err(e),
        };
        best = best.max(level.level_bound);
        level.bound = best;
        let done = best >= target || level.candidate_certified;
        levels.push(level);
        if done {
            break;
        }
    }
    Ok(levels)
}
