//! Mehrotra predictor-corrector interior point method for convex QPs.
//!
//! Inequalities (general rows plus finite box sides) are written as
//! `G z + s = h, s >= 0`; equalities stay as `E z = e`. Each iteration solves
//! the reduced KKT system in `(dz, dnu)` with a dense LU factorization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{
    dot, solve_lp, LinearProgram, QuadraticProgram, SolveResult, SolveStatus, SolverError,
};

const MAX_ITER: usize = 200;
const CONVEXITY_FLOOR: f64 = -1e-8;
const KKT_TOL: f64 = 1e-6;
const STOP_TOL: f64 = 1e-10;
const DIVERGENCE: f64 = 1e12;

struct Inequalities {
    rows: DMatrix<f64>,
    rhs: DVector<f64>,
}

fn assemble_inequalities(lp: &LinearProgram) -> Inequalities {
    let n = lp.n_vars();
    let mut rows: Vec<Vec<f64>> = lp.ineq_rows.clone();
    let mut rhs: Vec<f64> = lp.ineq_rhs.clone();
    for j in 0..n {
        if lp.upper[j].is_finite() {
            let mut r = vec![0.0; n];
            r[j] = 1.0;
            rows.push(r);
            rhs.push(lp.upper[j]);
        }
        if lp.lower[j].is_finite() {
            let mut r = vec![0.0; n];
            r[j] = -1.0;
            rows.push(r);
            rhs.push(-lp.lower[j]);
        }
    }
    let m = rows.len();
    Inequalities {
        rows: DMatrix::from_fn(m, n, |i, j| rows[i][j]),
        rhs: DVector::from_vec(rhs),
    }
}

fn check_hessian(h: &DMatrix<f64>, n: usize) -> Result<(), SolverError> {
    if h.nrows() != n || h.ncols() != n {
        return Err(SolverError::Dimension("hessian".into()));
    }
    let scale = 1.0 + h.amax();
    for i in 0..n {
        for j in 0..i {
            if (h[(i, j)] - h[(j, i)]).abs() > 1e-12 * scale {
                return Err(SolverError::NotSymmetric);
            }
        }
    }
    if n > 0 {
        let min_eig = SymmetricEigen::new(h.clone()).eigenvalues.min();
        if min_eig < CONVEXITY_FLOOR {
            return Err(SolverError::NonConvex {
                min_eigenvalue: min_eig,
            });
        }
    }
    Ok(())
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha: f64 = 1.0;
    for (x, dx) in v.iter().zip(dv.iter()) {
        if *dx < 0.0 {
            alpha = alpha.min(-x / dx);
        }
    }
    alpha
}

pub fn solve_qp(qp: &QuadraticProgram) -> Result<SolveResult, SolverError> {
    let lp = &qp.constraints;
    lp.validate()?;
    let n = lp.n_vars();
    check_hessian(&qp.hessian, n)?;
    if qp.hessian.iter().all(|v| *v == 0.0) {
        return solve_lp(lp);
    }

    // Feasibility first: the interior point iteration itself does not
    // diagnose infeasibility reliably.
    let mut phase1 = lp.clone();
    phase1.objective = vec![0.0; n];
    let feas = solve_lp(&phase1)?;
    if feas.status == SolveStatus::Infeasible {
        return Ok(SolveResult::infeasible(feas.iterations));
    }

    let ineq = assemble_inequalities(lp);
    let g = &ineq.rows;
    let h = &ineq.rhs;
    let m = g.nrows();
    let p = lp.eq_rows.len();
    let e_mat = DMatrix::from_fn(p, n, |i, j| lp.eq_rows[i][j]);
    let e_rhs = DVector::from_column_slice(&lp.eq_rhs);
    let c = DVector::from_column_slice(&lp.objective);
    let hess = &qp.hessian;

    let mut z = DVector::from_column_slice(&feas.point);
    let mut s = DVector::from_fn(m, |i, _| (h[i] - g.row(i).dot(&z.transpose())).max(1.0));
    let mut lam = DVector::from_element(m, 1.0);
    let mut nu = DVector::zeros(p);

    let scale_d = 1.0 + c.amax();
    let scale_p = 1.0 + h.amax().max(e_rhs.amax());
    let mut iterations = 0;
    let mut converged = false;
    let mut diverged = false;

    for it in 0..MAX_ITER {
        iterations = it;
        let r_d = hess * &z + &c + g.transpose() * &lam + e_mat.transpose() * &nu;
        let r_p = g * &z + &s - h;
        let r_e = &e_mat * &z - &e_rhs;
        let mu = if m > 0 { s.dot(&lam) / m as f64 } else { 0.0 };
        let res_d = r_d.amax() / scale_d;
        let res_p = r_p.amax().max(r_e.amax()) / scale_p;
        if res_d <= STOP_TOL && res_p <= STOP_TOL && mu <= STOP_TOL {
            converged = true;
            break;
        }
        if z.amax() > DIVERGENCE {
            diverged = true;
            break;
        }

        // Reduced KKT matrix.
        let w = DVector::from_fn(m, |i, _| lam[i] / s[i]);
        let mut k = DMatrix::zeros(n + p, n + p);
        let mut top = hess.clone();
        for i in 0..m {
            let gi = g.row(i);
            let wi = w[i];
            for a in 0..n {
                let ga = gi[a];
                if ga == 0.0 {
                    continue;
                }
                for b in 0..n {
                    top[(a, b)] += wi * ga * gi[b];
                }
            }
        }
        for a in 0..n {
            top[(a, a)] += 1e-12;
        }
        k.view_mut((0, 0), (n, n)).copy_from(&top);
        if p > 0 {
            k.view_mut((n, 0), (p, n)).copy_from(&e_mat);
            k.view_mut((0, n), (n, p)).copy_from(&e_mat.transpose());
            for i in 0..p {
                k[(n + i, n + i)] = -1e-14;
            }
        }
        let lu = k.lu();

        let solve_dir = |r_c: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // dlam = (-r_c + lam*(r_p + G dz)) / s
            let t = DVector::from_fn(m, |i, _| (-r_c[i] + lam[i] * r_p[i]) / s[i]);
            let mut rhs = DVector::zeros(n + p);
            let top_rhs = -&r_d - g.transpose() * &t;
            rhs.rows_mut(0, n).copy_from(&top_rhs);
            if p > 0 {
                rhs.rows_mut(n, p).copy_from(&(-&r_e));
            }
            let sol = lu.solve(&rhs)?;
            let dz = sol.rows(0, n).into_owned();
            let dnu = sol.rows(n, p).into_owned();
            let gdz = g * &dz;
            let ds = DVector::from_fn(m, |i, _| -r_p[i] - gdz[i]);
            let dlam = DVector::from_fn(m, |i, _| (-r_c[i] - lam[i] * ds[i]) / s[i]);
            Some((dz, ds, dlam, dnu))
        };

        let rc_aff = DVector::from_fn(m, |i, _| s[i] * lam[i]);
        let Some((_, ds_a, dl_a, _)) = solve_dir(&rc_aff) else {
            return Err(SolverError::Numerical("singular KKT system".into()));
        };
        let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let mu_aff = if m > 0 {
            (&s + &ds_a * a_aff).dot(&(&lam + &dl_a * a_aff)) / m as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let rc = DVector::from_fn(m, |i, _| s[i] * lam[i] + ds_a[i] * dl_a[i] - sigma * mu);
        let Some((dz, ds, dl, dnu)) = solve_dir(&rc) else {
            return Err(SolverError::Numerical("singular KKT system".into()));
        };
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
        z += &dz * alpha;
        s += &ds * alpha;
        lam += &dl * alpha;
        nu += &dnu * alpha;
        for i in 0..m {
            s[i] = s[i].max(1e-300);
            lam[i] = lam[i].max(1e-300);
        }
        iterations = it + 1;
    }

    if diverged {
        return Ok(SolveResult::unbounded(iterations));
    }

    let mut point: Vec<f64> = z.iter().copied().collect();
    for j in 0..n {
        point[j] = point[j].clamp(lp.lower[j], lp.upper[j]);
    }
    let objective = qp.objective_at(&point);

    let n_ineq = lp.ineq_rows.len();
    let lambda_a: Vec<f64> = lam.iter().take(n_ineq).map(|v| v.max(0.0)).collect();
    let nu_v: Vec<f64> = nu.iter().copied().collect();
    let bound = linearized_bound(qp, &point, &lambda_a, &nu_v);

    let r_d = hess * &DVector::from_column_slice(&point)
        + &c
        + g.transpose() * &lam
        + e_mat.transpose() * &nu;
    let kkt = (r_d.amax() / scale_d)
        .max(lp.max_violation(&point) / scale_p)
        .max(if m > 0 { s.dot(&lam) / m as f64 } else { 0.0 });
    let status = if converged || kkt <= KKT_TOL {
        SolveStatus::Optimal
    } else {
        SolveStatus::ToleranceReached
    };
    let certified = bound.min(objective);
    Ok(SolveResult {
        status,
        point,
        objective,
        certified_lower_bound: certified,
        gap: (objective - certified).max(0.0),
        iterations,
        nodes: 0,
    })
}

/// Lower bound from the tangent plane of the (convex) objective at a point
/// near the optimum, minimized over the feasible set via the Lagrangian.
/// Free coordinates get one Newton correction of the tangent point so their
/// reduced costs vanish.
fn linearized_bound(qp: &QuadraticProgram, point: &[f64], lambda: &[f64], nu: &[f64]) -> f64 {
    let lp = &qp.constraints;
    let n = lp.n_vars();
    let mut zbar = DVector::from_column_slice(point);
    let free: Vec<usize> = (0..n)
        .filter(|&j| !lp.lower[j].is_finite() && !lp.upper[j].is_finite())
        .collect();
    if !free.is_empty() {
        let mut reduced = &qp.hessian * &zbar + DVector::from_column_slice(&lp.objective);
        for (row, &l) in lp.ineq_rows.iter().zip(lambda) {
            for j in 0..n {
                reduced[j] += l * row[j];
            }
        }
        for (row, &m) in lp.eq_rows.iter().zip(nu) {
            for j in 0..n {
                reduced[j] += m * row[j];
            }
        }
        let k = free.len();
        let mut hff = DMatrix::from_fn(k, k, |a, b| qp.hessian[(free[a], free[b])]);
        for a in 0..k {
            hff[(a, a)] += 1e-14 * (1.0 + hff[(a, a)].abs());
        }
        let rf = DVector::from_fn(k, |a, _| -reduced[free[a]]);
        if let Some(step) = hff.lu().solve(&rf) {
            for a in 0..k {
                zbar[free[a]] += step[a];
            }
        }
    }
    let zs: Vec<f64> = zbar.iter().copied().collect();
    let grad: Vec<f64> = (&qp.hessian * &zbar + DVector::from_column_slice(&lp.objective))
        .iter()
        .copied()
        .collect();
    let constant = qp.objective_at(&zs) - dot(&grad, &zs);
    lp.lagrangian_bound(&grad, constant, lambda, nu)
}
