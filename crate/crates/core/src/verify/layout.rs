use crate::model::{FeatureDomain, Threshold};
use crate::poly::VarMap;
use crate::solvers::LinearProgram;

use super::{VerificationTask, VerifyError};

/// Upper limit on `|V_p|`.
pub const MAX_FIXED_PAIRS: u128 = 100_000;

/// Values assigned to the fixed attributes `D` in `x` and `x'`, in the order
/// of the task's fixed set.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPair {
    pub v: Vec<f64>,
    pub v_prime: Vec<f64>,
}

fn feature_pairs(domain: &FeatureDomain, threshold: Threshold) -> Vec<(f64, f64)> {
    let values = domain.values();
    let mut out = Vec::new();
    for &a in &values {
        for &b in &values {
            if threshold.admits(a - b) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Number of pairs `enumerate_fixed_pairs` would produce for `fixed`.
pub fn count_fixed_pairs(
    domains: &[FeatureDomain],
    thresholds: &[Threshold],
    fixed: &[usize],
) -> u128 {
    fixed
        .iter()
        .map(|&i| feature_pairs(&domains[i], thresholds[i]).len() as u128)
        .fold(1u128, |acc, c| acc.saturating_mul(c))
}

/// All close assignments to `(x_D, x'_D)` in lexicographic order, the first
/// fixed attribute varying slowest.
pub fn enumerate_fixed_pairs(task: &VerificationTask) -> Result<Vec<FixedPair>, VerifyError> {
    let options: Vec<Vec<(f64, f64)>> = task
        .fixed_set
        .iter()
        .map(|&i| feature_pairs(&task.domains[i], task.spec.threshold_of(i)))
        .collect();
    let size = options
        .iter()
        .fold(1u128, |acc, o| acc.saturating_mul(o.len() as u128));
    if size > MAX_FIXED_PAIRS {
        return Err(VerifyError::SizeExceeded {
            size,
            limit: MAX_FIXED_PAIRS,
        });
    }
    if size == 0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(size as usize);
    let mut idx = vec![0usize; options.len()];
    loop {
        out.push(FixedPair {
            v: idx.iter().zip(&options).map(|(&k, o)| o[k].0).collect(),
            v_prime: idx.iter().zip(&options).map(|(&k, o)| o[k].1).collect(),
        });
        let mut pos = options.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < options[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Variables of one pair subproblem.
///
/// Fixed attributes become constants, pinned (`epsilon = 0`) features share
/// one variable between `x` and `x'`, and every other feature gets a
/// variable on each side, tied by closeness rows when its threshold is
/// finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLayout {
    x_map: Vec<VarMap>,
    xp_map: Vec<VarMap>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Variable must take integer values.
    pub integer: Vec<bool>,
    /// Feature index of each variable.
    pub feature: Vec<usize>,
    /// `|z_a - z_b| <= epsilon`
    pub closeness: Vec<(usize, usize, f64)>,
}

impl PairLayout {
    pub fn new(task: &VerificationTask, pair: &FixedPair) -> Self {
        let n = task.domains.len();
        let mut layout = PairLayout {
            x_map: vec![VarMap::Constant(0.0); n],
            xp_map: vec![VarMap::Constant(0.0); n],
            lower: Vec::new(),
            upper: Vec::new(),
            integer: Vec::new(),
            feature: Vec::new(),
            closeness: Vec::new(),
        };
        for i in 0..n {
            if let Some(pos) = task.fixed_set.iter().position(|&f| f == i) {
                layout.x_map[i] = VarMap::Constant(pair.v[pos]);
                layout.xp_map[i] = VarMap::Constant(pair.v_prime[pos]);
                continue;
            }
            let domain = &task.domains[i];
            let integer = domain.is_discrete() && !task.relax_set.contains(&i);
            let threshold = task.spec.threshold_of(i);
            let a = layout.push(i, domain, integer);
            layout.x_map[i] = VarMap::identity(a);
            if threshold.is_zero() {
                layout.xp_map[i] = VarMap::identity(a);
            } else {
                let b = layout.push(i, domain, integer);
                layout.xp_map[i] = VarMap::identity(b);
                if let Threshold::Finite(eps) = threshold {
                    layout.closeness.push((a, b, eps));
                }
            }
        }
        layout
    }

    fn push(&mut self, feature: usize, domain: &FeatureDomain, integer: bool) -> usize {
        self.lower.push(domain.lower);
        self.upper.push(domain.upper);
        self.integer.push(integer);
        self.feature.push(feature);
        self.lower.len() - 1
    }

    pub fn nvars(&self) -> usize {
        self.lower.len()
    }

    pub fn n_features(&self) -> usize {
        self.x_map.len()
    }

    /// Substitution map from the `2n` variables `(x, x')` to the layout.
    pub fn gap_map(&self) -> Vec<VarMap> {
        self.x_map.iter().chain(&self.xp_map).copied().collect()
    }

    pub fn x_map(&self) -> &[VarMap] {
        &self.x_map
    }

    pub fn xp_map(&self) -> &[VarMap] {
        &self.xp_map
    }

    /// `(x, x')` for a layout point `z`.
    pub fn lift(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let get = |m: &VarMap| match *m {
            VarMap::Constant(c) => c,
            VarMap::Affine { var, offset, scale } => offset + scale * z[var],
        };
        (
            self.x_map.iter().map(get).collect(),
            self.xp_map.iter().map(get).collect(),
        )
    }

    /// `w^T x` as `(coefficients over z, constant)`.
    pub fn linear_form(map: &[VarMap], w: &[f64], nvars: usize) -> (Vec<f64>, f64) {
        let mut coeffs = vec![0.0; nvars];
        let mut constant = 0.0;
        for (m, &wi) in map.iter().zip(w) {
            match *m {
                VarMap::Constant(c) => constant += wi * c,
                VarMap::Affine { var, offset, scale } => {
                    coeffs[var] += wi * scale;
                    constant += wi * offset;
                }
            }
        }
        (coeffs, constant)
    }

    /// An LP over the layout variables with boxes and closeness rows.
    pub fn linear_program(&self, objective: Vec<f64>) -> LinearProgram {
        let n = self.nvars();
        let mut lp =
            LinearProgram::new(objective).with_bounds(self.lower.clone(), self.upper.clone());
        for &(a, b, eps) in &self.closeness {
            let mut row = vec![0.0; n];
            row[a] = 1.0;
            row[b] = -1.0;
            lp.add_le(row.clone(), eps);
            lp.add_le(row.into_iter().map(|v| -v).collect(), eps);
        }
        lp
    }

    pub fn integer_vars(&self) -> Vec<usize> {
        (0..self.nvars()).filter(|&k| self.integer[k]).collect()
    }
}

/// Rounds discrete coordinates to the nearest integer and clamps every
/// coordinate into its domain.
pub fn snap_to_domains(domains: &[FeatureDomain], x: &mut [f64]) {
    for (d, v) in domains.iter().zip(x.iter_mut()) {
        if d.is_discrete() {
            *v = v.round();
        }
        *v = v.clamp(d.lower, d.upper);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, OutputMode, PerturbationSpec};

    fn task(fixed: Vec<usize>, thresholds: Vec<Threshold>) -> VerificationTask {
        let n = thresholds.len();
        let blocks = (0..n).map(|i| vec![i]).collect();
        VerificationTask::new(
            ModelSpec::Linear {
                weights: vec![1.0; n],
                bias: 0.0,
            },
            vec![FeatureDomain::discrete(0, 1).unwrap(); n],
            PerturbationSpec::new(n, blocks, thresholds, 0.0).unwrap(),
            Some(fixed),
            Vec::new(),
            OutputMode::Regression,
        )
        .unwrap()
    }

    fn pairs(t: &VerificationTask) -> Vec<(Vec<f64>, Vec<f64>)> {
        enumerate_fixed_pairs(t)
            .unwrap()
            .into_iter()
            .map(|p| (p.v, p.v_prime))
            .collect()
    }

    #[test]
    fn single_boolean_unconstrained() {
        let t = task(vec![0], vec![Threshold::Infinity]);
        assert_eq!(
            pairs(&t),
            vec![
                (vec![0.0], vec![0.0]),
                (vec![0.0], vec![1.0]),
                (vec![1.0], vec![0.0]),
                (vec![1.0], vec![1.0])
            ]
        );
    }

    #[test]
    fn single_boolean_pinned() {
        let t = task(vec![0], vec![Threshold::Finite(0.0)]);
        assert_eq!(
            pairs(&t),
            vec![(vec![0.0], vec![0.0]), (vec![1.0], vec![1.0])]
        );
    }

    #[test]
    fn two_booleans_unconstrained() {
        let t = task(vec![0, 1], vec![Threshold::Infinity, Threshold::Infinity]);
        let p = pairs(&t);
        assert_eq!(p.len(), 16);
        assert_eq!(p[1], (vec![0.0, 0.0], vec![0.0, 1.0]));
    }

    #[test]
    fn size_guard() {
        let n = 9;
        let t = task((0..n).collect(), vec![Threshold::Infinity; n]);
        assert!(matches!(
            enumerate_fixed_pairs(&t),
            Err(VerifyError::SizeExceeded { size: 262_144, .. })
        ));
    }

    #[test]
    fn layout_shares_pinned_features() {
        let t = task(
            vec![0],
            vec![
                Threshold::Infinity,
                Threshold::Finite(0.0),
                Threshold::Finite(0.5),
            ],
        );
        let pair = &enumerate_fixed_pairs(&t).unwrap()[1];
        let layout = PairLayout::new(&t, pair);
        assert_eq!(layout.nvars(), 3);
        assert_eq!(layout.closeness, vec![(1, 2, 0.5)]);
        let (x, xp) = layout.lift(&[1.0, 0.0, 1.0]);
        assert_eq!(x, vec![0.0, 1.0, 0.0]);
        assert_eq!(xp, vec![1.0, 1.0, 1.0]);
    }
}
