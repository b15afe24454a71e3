//! Small dense convex QP solver.
//!
//! ```text
//!     minimize    1/2 z' H z + f' z
//!     subject to  rows (coeffs . z >= rhs or <= rhs)
//!                 lb <= z <= ub
//! ```
//!
//! Primal active-set method. Every constraint is brought to the canonical
//! form `a . z <= b` with `|a| = 1`. A feasible start is taken from the warm
//! start's active set when it yields one; otherwise a phase-1 linear program
//! minimizing the total violation is solved with the same machinery. When
//! phase 1 cannot drive the violation below the infeasibility threshold its
//! multipliers are returned as a Farkas certificate.
//!
//! Singular reduced Hessians are handled: along zero-curvature directions the
//! iterate moves to the first blocking constraint, and reports `Unbounded` if
//! there is none.

use crate::constraints::{ConstraintRow, ControllerKind, Sense};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

pub const DEFAULT_MAX_ITER: usize = 200;
/// Phase 1 declares infeasibility above this total violation.
pub const INFEASIBILITY_TOL: f64 = 1e-7;
/// Largest condition number accepted for a working-set Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// KKT tolerances an `Optimal` solution is certified against.
pub const KKT_TOL: f64 = 1e-8;
pub const MULTIPLIER_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("bad problem: {0}")]
    BadProblem(String),
    #[error("smoothness penalty requires the previous input")]
    MissingPrevInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub rows: Vec<ConstraintRow>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Problem without box bounds.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>, rows: Vec<ConstraintRow>) -> Self {
        let n = f.len();
        Self {
            h,
            f,
            rows,
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let z = DVector::from_column_slice(z);
        0.5 * z.dot(&(&self.h * &z)) + self.f.dot(&z)
    }

    /// Same problem with cost and constraints multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            h: &self.h * factor,
            f: &self.f * factor,
            rows: self.rows.iter().map(|r| r.scaled(factor)).collect(),
            lb: self.lb.clone(),
            ub: self.ub.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        let bad = |msg: String| Err(QpError::BadProblem(msg));
        if n == 0 {
            return bad("no decision variables".into());
        }
        if self.h.nrows() != n || self.h.ncols() != n {
            return bad(format!("H is {}x{}, expected {n}x{n}", self.h.nrows(), self.h.ncols()));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return bad("bound vectors have the wrong length".into());
        }
        if self.h.iter().chain(self.f.iter()).any(|v| !v.is_finite()) {
            return bad("non-finite cost entry".into());
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.dim() != n {
                return bad(format!("row {i} has {} coefficients, expected {n}", row.dim()));
            }
            if !row.is_finite() {
                return bad(format!("row {i} has non-finite entries"));
            }
        }
        for j in 0..n {
            if self.lb[j].is_nan() || self.ub[j].is_nan() || self.lb[j] > self.ub[j] {
                return bad(format!("bounds of variable {j} are inconsistent: [{}, {}]", self.lb[j], self.ub[j]));
            }
        }
        let hmax = self.h.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > 1e-12 * hmax {
                    return bad(format!("H is not symmetric at ({i}, {j})"));
                }
            }
        }
        let sym = (&self.h + self.h.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        if min_eig < -1e-10 * hmax {
            return bad(format!("H is indefinite (smallest eigenvalue {min_eig:e})"));
        }
        Ok(())
    }
}

/// Identifies one inequality of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConstraintRef {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    Unbounded,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "Optimal",
            QpStatus::Infeasible => "Infeasible",
            QpStatus::IterationLimit => "IterationLimit",
            QpStatus::Unbounded => "Unbounded",
        }
    }
}

/// Nonnegative multipliers of the canonical `<=` form of every constraint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Multipliers {
    pub rows: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            rows: vec![0.0; m],
            lower: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    fn get_mut(&mut self, c: ConstraintRef) -> &mut f64 {
        match c {
            ConstraintRef::Row(i) => &mut self.rows[i],
            ConstraintRef::Lower(j) => &mut self.lower[j],
            ConstraintRef::Upper(j) => &mut self.upper[j],
        }
    }

    pub fn min(&self) -> f64 {
        self.rows
            .iter()
            .chain(&self.lower)
            .chain(&self.upper)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn within(&self, tol: f64) -> bool {
        self.stationarity <= tol && self.primal <= tol && self.complementarity <= tol
    }
}

/// Nonnegative weights `y` on a subset of canonical constraints with
/// `sum y_i a_i = 0` and `sum y_i b_i < 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityEvidence {
    pub constraints: Vec<ConstraintRef>,
    pub weights: Vec<f64>,
    /// Minimal total normalized violation found by phase 1.
    pub total_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vec<f64>,
    pub status: QpStatus,
    pub active_set: Vec<ConstraintRef>,
    pub multipliers: Multipliers,
    pub kkt: KktResiduals,
    pub solve_time: f64,
    pub iterations: usize,
    pub evidence: Option<InfeasibilityEvidence>,
    pub diagnostics: Option<String>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            active_set: self.active_set.clone(),
        }
    }
}

/// Active set carried from one solve to the next.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WarmStart {
    pub active_set: Vec<ConstraintRef>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub infeasibility_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            infeasibility_tol: INFEASIBILITY_TOL,
        }
    }
}

pub fn solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    solve_with(problem, &SolverOptions::default(), None)
}

/// Residuals of the KKT conditions of `problem` at `(z, multipliers)`.
///
/// All three are scale-free. Stationarity is `|H z + f + sum lambda_i a_i|_inf`
/// over the canonical `a . z <= b` constraints, divided by the largest of 1
/// and the magnitudes of the terms it sums. Primal is the largest violation
/// of a constraint divided by its coefficient norm. Complementarity is the
/// largest `min(lambda_i, slack_i)` with the same slack normalization.
pub fn kkt_check(problem: &QpProblem, z: &[f64], multipliers: &Multipliers) -> KktResiduals {
    let n = problem.dim();
    let zv = DVector::from_column_slice(z);
    let hz = &problem.h * &zv;
    let mut term_scale = hz.amax().max(problem.f.amax()).max(1.0);
    let mut grad = hz + &problem.f;
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut record = |lambda: f64, slack: f64, norm: f64| {
        let s = slack / norm.max(1.0);
        primal = primal.max(-s);
        comp = comp.max(lambda.abs().min(s.abs()));
    };
    for (i, row) in problem.rows.iter().enumerate() {
        let sign = match row.sense {
            Sense::Le => 1.0,
            Sense::Ge => -1.0,
        };
        let lambda = multipliers.rows.get(i).copied().unwrap_or(0.0);
        let norm = row.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        for j in 0..n {
            let term = lambda * sign * row.coeffs[j];
            term_scale = term_scale.max(term.abs());
            grad[j] += term;
        }
        record(lambda, row.margin(z), norm);
    }
    for j in 0..n {
        let lo = multipliers.lower.get(j).copied().unwrap_or(0.0);
        let hi = multipliers.upper.get(j).copied().unwrap_or(0.0);
        term_scale = term_scale.max(lo.abs()).max(hi.abs());
        grad[j] += hi - lo;
        if problem.lb[j].is_finite() {
            record(lo, z[j] - problem.lb[j], 1.0);
        }
        if problem.ub[j].is_finite() {
            record(hi, problem.ub[j] - z[j], 1.0);
        }
    }
    KktResiduals {
        stationarity: grad.amax() / term_scale,
        primal,
        complementarity: comp,
    }
}

/// Quadratic cost over the 3-variable decision vector.
///
/// `H = 2 diag(1, 1, Q)`; a positive `smoothness_weight` adds
/// `w |u - prev_u|^2` on the two input entries.
pub fn build_cost(
    kind: ControllerKind,
    q: f64,
    smoothness_weight: f64,
    prev_u: Option<[f64; 2]>,
) -> Result<(DMatrix<f64>, DVector<f64>), QpError> {
    if !(q.is_finite() && q > 0.0) {
        return Err(QpError::BadProblem(format!("relaxation weight Q must be > 0, got {q}")));
    }
    if !(smoothness_weight.is_finite() && smoothness_weight >= 0.0) {
        return Err(QpError::BadProblem(format!(
            "smoothness weight must be >= 0, got {smoothness_weight}"
        )));
    }
    if smoothness_weight > 0.0 && kind == ControllerKind::Fcbf {
        return Err(QpError::BadProblem(
            "smoothness penalty applies to direct-input controllers only".into(),
        ));
    }
    let mut h = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 2.0, 2.0 * q]));
    let mut f = DVector::zeros(3);
    if smoothness_weight > 0.0 {
        let prev = prev_u.ok_or(QpError::MissingPrevInput)?;
        for i in 0..2 {
            h[(i, i)] += 2.0 * smoothness_weight;
            f[i] -= 2.0 * smoothness_weight * prev[i];
        }
    }
    Ok((h, f))
}

#[derive(Debug, Clone)]
struct Canon {
    a: DVector<f64>,
    b: f64,
    /// Norm of the original constraint vector.
    scale: f64,
    origin: ConstraintRef,
}

impl Canon {
    fn slack(&self, z: &DVector<f64>) -> f64 {
        self.b - self.a.dot(z)
    }
}

enum Canonical {
    Constraints(Vec<Canon>),
    /// A zero row that can never hold.
    Contradiction(ConstraintRef, f64),
}

fn canonicalize(problem: &QpProblem) -> Canonical {
    let n = problem.dim();
    let mut out = Vec::new();
    for (i, row) in problem.rows.iter().enumerate() {
        let sign = match row.sense {
            Sense::Le => 1.0,
            Sense::Ge => -1.0,
        };
        let a = DVector::from_iterator(n, row.coeffs.iter().map(|c| sign * c));
        let b = sign * row.rhs;
        let scale = a.norm();
        if scale == 0.0 {
            if b < 0.0 {
                return Canonical::Contradiction(ConstraintRef::Row(i), -b);
            }
            continue;
        }
        out.push(Canon {
            a: a / scale,
            b: b / scale,
            scale,
            origin: ConstraintRef::Row(i),
        });
    }
    for j in 0..n {
        if problem.lb[j].is_finite() {
            let mut a = DVector::zeros(n);
            a[j] = -1.0;
            out.push(Canon {
                a,
                b: -problem.lb[j],
                scale: 1.0,
                origin: ConstraintRef::Lower(j),
            });
        }
        if problem.ub[j].is_finite() {
            let mut a = DVector::zeros(n);
            a[j] = 1.0;
            out.push(Canon {
                a,
                b: problem.ub[j],
                scale: 1.0,
                origin: ConstraintRef::Upper(j),
            });
        }
    }
    Canonical::Constraints(out)
}

enum CoreExit {
    Optimal(Vec<f64>),
    Unbounded,
    IterationLimit,
    IllConditioned(String),
}

/// Primal active-set iterations from a feasible `z` with working set `working`.
struct ActiveSet<'a> {
    h: &'a DMatrix<f64>,
    f: &'a DVector<f64>,
    cons: &'a [Canon],
    max_iter: usize,
}

impl ActiveSet<'_> {
    fn run(&self, z: &mut DVector<f64>, working: &mut Vec<usize>, iterations: &mut usize) -> CoreExit {
        let n = z.len();
        let hscale = self.h.amax().max(1.0);
        loop {
            if *iterations >= self.max_iter {
                return CoreExit::IterationLimit;
            }
            *iterations += 1;

            let g = self.h * &*z + self.f;
            let gscale = g.amax().max(1.0);
            let basis = null_space(self.cons, working, n);

            let mut direction: Option<(DVector<f64>, f64)> = None;
            if basis.ncols() > 0 {
                let reduced_h = basis.transpose() * self.h * &basis;
                let reduced_g = basis.transpose() * &g;
                let eig = SymmetricEigen::new(reduced_h);
                let curv_tol = 1e-12 * hscale;
                let mut flat = DVector::zeros(basis.ncols());
                let mut newton = DVector::zeros(basis.ncols());
                for (k, lambda) in eig.eigenvalues.iter().enumerate() {
                    let u = eig.eigenvectors.column(k);
                    let proj = u.dot(&reduced_g);
                    if *lambda <= curv_tol {
                        flat += u * proj;
                    } else {
                        newton += u * (proj / lambda);
                    }
                }
                if flat.amax() > 1e-12 * gscale {
                    direction = Some((-(&basis * flat), f64::INFINITY));
                } else {
                    let p = -(&basis * newton);
                    if p.amax() > 1e-12 * z.amax().max(1.0) {
                        direction = Some((p, 1.0));
                    }
                }
            }

            let Some((d, max_step)) = direction else {
                // stationary on the working set: check multiplier signs
                if working.is_empty() {
                    return CoreExit::Optimal(Vec::new());
                }
                let mult = match working_multipliers(self.cons, working, &g) {
                    Ok(m) => m,
                    Err(msg) => return CoreExit::IllConditioned(msg),
                };
                let mut worst: Option<(usize, f64)> = None;
                for (pos, &m) in mult.iter().enumerate() {
                    if m < -MULTIPLIER_TOL * gscale {
                        let better = match worst {
                            None => true,
                            Some((wpos, wm)) => m < wm || (m == wm && working[pos] < working[wpos]),
                        };
                        if better {
                            worst = Some((pos, m));
                        }
                    }
                }
                match worst {
                    None => return CoreExit::Optimal(mult),
                    Some((pos, _)) => {
                        working.remove(pos);
                        continue;
                    }
                }
            };

            let dnorm = d.amax();
            let mut step = max_step;
            let mut blocking: Option<usize> = None;
            for (i, c) in self.cons.iter().enumerate() {
                if working.contains(&i) {
                    continue;
                }
                let ad = c.a.dot(&d);
                if ad <= 1e-12 * dnorm {
                    continue;
                }
                let alpha = c.slack(z).max(0.0) / ad;
                if alpha < step {
                    step = alpha;
                    blocking = Some(i);
                }
            }
            if step.is_infinite() {
                return CoreExit::Unbounded;
            }
            z.axpy(step, &d, 1.0);
            if let Some(i) = blocking {
                working.push(i);
            }
        }
    }
}

/// Orthonormal basis of the null space of the working-set constraint normals.
///
/// The working set is linearly independent by construction, so the basis is
/// the `n - k` eigenvectors of `A_W' A_W` with the smallest eigenvalues.
fn null_space(cons: &[Canon], working: &[usize], n: usize) -> DMatrix<f64> {
    if working.is_empty() {
        return DMatrix::identity(n, n);
    }
    if working.len() >= n {
        return DMatrix::zeros(n, 0);
    }
    let mut gram = DMatrix::zeros(n, n);
    for &i in working {
        gram += &cons[i].a * cons[i].a.transpose();
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let cols: Vec<DVector<f64>> = order[..n - working.len()]
        .iter()
        .map(|&k| eig.eigenvectors.column(k).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// Solves `g + A_W' mu = 0` in the least-squares sense.
///
/// Columns are equilibrated over the working rows before the SVD so the
/// conditioning check reflects the geometry of the constraints rather than
/// the units of the variables.
fn working_multipliers(cons: &[Canon], working: &[usize], g: &DVector<f64>) -> Result<Vec<f64>, String> {
    let k = working.len();
    let n = g.len();
    let col_scale = DVector::from_fn(n, |j, _| {
        let c = working.iter().map(|&i| cons[i].a[j].abs()).fold(0.0, f64::max);
        if c > 0.0 {
            1.0 / c
        } else {
            1.0
        }
    });
    let at = DMatrix::from_fn(n, k, |r, c| cons[working[c]].a[r] * col_scale[r]);
    let svd = at.svd(true, true);
    let sv = &svd.singular_values;
    let cond = sv.max() / sv.min();
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(format!("working-set condition number {cond:e} exceeds {MAX_CONDITION:e}"));
    }
    let rhs = -g.component_mul(&col_scale);
    let mu = svd.solve(&rhs, 0.0).map_err(|e| format!("working-set solve failed: {e}"))?;
    Ok(mu.iter().copied().collect())
}

/// Equality-constrained minimizer on a working set, if the reduced Hessian
/// is positive definite.
///
/// Null-space method: a minimum-norm point on the working rows plus a Newton
/// step inside their null space, so the rows hold to rounding regardless of
/// how large the multipliers are.
fn equality_solve(h: &DMatrix<f64>, f: &DVector<f64>, cons: &[Canon], working: &[usize]) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = f.len();
    let k = working.len();
    if k > n {
        return None;
    }
    let mut z = DVector::zeros(n);
    if k > 0 {
        let a = DMatrix::from_fn(k, n, |r, c| cons[working[r]].a[c]);
        let b = DVector::from_fn(k, |r, _| cons[working[r]].b);
        let svd = a.clone().svd(true, true);
        if svd.singular_values.min() <= 1e-12 * svd.singular_values.max() {
            return None;
        }
        z = svd.solve(&b, 0.0).ok()?;
        // one refinement pass
        let r = &b - &a * &z;
        z += svd.solve(&r, 0.0).ok()?;
    }
    let basis = null_space(cons, working, n);
    if basis.ncols() > 0 {
        let reduced_h = basis.transpose() * h * &basis;
        let chol = reduced_h.cholesky()?;
        let g = h * &z + f;
        let w = chol.solve(&(basis.transpose() * g));
        z -= &basis * w;
    }
    if z.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mult = if k > 0 {
        working_multipliers(cons, working, &(h * &z + f)).ok()?
    } else {
        Vec::new()
    };
    Some((z, mult))
}

fn max_violation(cons: &[Canon], z: &DVector<f64>) -> f64 {
    cons.iter().map(|c| -c.slack(z)).fold(0.0, f64::max)
}

struct PhaseOne {
    z: DVector<f64>,
    total_violation: f64,
    evidence: Option<InfeasibilityEvidence>,
    iterations: usize,
    diagnostics: Option<String>,
}

/// Minimizes `sum t_i` subject to `a_i . z - t_i <= b_i`, `t >= 0`.
///
/// Columns are equilibrated first (`z = D y`) so that a variable entering
/// the rows with a small coefficient does not make the working set
/// ill-conditioned.
fn phase_one(cons: &[Canon], z0: &DVector<f64>, max_iter: usize) -> PhaseOne {
    let n = z0.len();
    let m = cons.len();
    let dim = n + m;
    let col_scale = DVector::from_fn(n, |j, _| {
        let c = cons.iter().map(|c| c.a[j].abs()).fold(0.0, f64::max);
        if c > 0.0 {
            1.0 / c
        } else {
            1.0
        }
    });
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut aux = Vec::with_capacity(2 * m);
    let mut row_norm = Vec::with_capacity(m);
    for (i, c) in cons.iter().enumerate() {
        let scaled = c.a.component_mul(&col_scale);
        let s = scaled.norm();
        row_norm.push(s);
        let mut a = DVector::zeros(dim);
        a.rows_mut(0, n).copy_from(&(&scaled * (inv_sqrt2 / s)));
        a[n + i] = -inv_sqrt2;
        aux.push(Canon {
            a,
            b: c.b * inv_sqrt2 / s,
            scale: 1.0,
            origin: c.origin,
        });
    }
    for i in 0..m {
        let mut a = DVector::zeros(dim);
        a[n + i] = -1.0;
        aux.push(Canon {
            a,
            b: 0.0,
            scale: 1.0,
            origin: cons[i].origin,
        });
    }
    let h = DMatrix::zeros(dim, dim);
    let mut f = DVector::zeros(dim);
    f.rows_mut(n, m).fill(1.0);
    let mut x = DVector::zeros(dim);
    x.rows_mut(0, n).copy_from(&z0.component_div(&col_scale));
    for (i, c) in cons.iter().enumerate() {
        x[n + i] = (-c.slack(z0)).max(0.0) / row_norm[i];
    }

    let core = ActiveSet {
        h: &h,
        f: &f,
        cons: &aux,
        max_iter,
    };
    let mut working = Vec::new();
    let mut iterations = 0;
    let exit = core.run(&mut x, &mut working, &mut iterations);
    let z = x.rows(0, n).component_mul(&col_scale);
    let total_violation = cons.iter().map(|c| (-c.slack(&z)).max(0.0)).sum::<f64>();

    let mut diagnostics = None;
    let mut evidence = None;
    match exit {
        CoreExit::Optimal(mult) => {
            if total_violation > INFEASIBILITY_TOL {
                let mut constraints = Vec::new();
                let mut weights = Vec::new();
                for (pos, &w) in working.iter().enumerate() {
                    if w < m && mult[pos] > 0.0 {
                        constraints.push(cons[w].origin);
                        weights.push(mult[pos] * inv_sqrt2 / (row_norm[w] * cons[w].scale));
                    }
                }
                evidence = Some(InfeasibilityEvidence {
                    constraints,
                    weights,
                    total_violation,
                });
            }
        }
        CoreExit::IterationLimit => diagnostics = Some("phase 1 reached its iteration limit".into()),
        CoreExit::IllConditioned(msg) => diagnostics = Some(format!("phase 1: {msg}")),
        CoreExit::Unbounded => diagnostics = Some("phase 1 reported an unbounded direction".into()),
    }
    PhaseOne {
        z,
        total_violation,
        evidence,
        iterations,
        diagnostics,
    }
}

pub fn solve_with(problem: &QpProblem, opts: &SolverOptions, warm: Option<&WarmStart>) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let start = Instant::now();
    let n = problem.dim();
    let m = problem.rows.len();

    let finish = |z: Vec<f64>,
                  status: QpStatus,
                  active: Vec<ConstraintRef>,
                  multipliers: Multipliers,
                  iterations: usize,
                  evidence: Option<InfeasibilityEvidence>,
                  diagnostics: Option<String>| {
        let kkt = kkt_check(problem, &z, &multipliers);
        QpSolution {
            z,
            status,
            active_set: active,
            multipliers,
            kkt,
            solve_time: start.elapsed().as_secs_f64(),
            iterations,
            evidence,
            diagnostics,
        }
    };

    let cons = match canonicalize(problem) {
        Canonical::Constraints(c) => c,
        Canonical::Contradiction(origin, violation) => {
            return Ok(finish(
                vec![0.0; n],
                QpStatus::Infeasible,
                Vec::new(),
                Multipliers::zeros(n, m),
                0,
                Some(InfeasibilityEvidence {
                    constraints: vec![origin],
                    weights: vec![1.0],
                    total_violation: violation,
                }),
                Some("constraint with zero coefficients and negative slack".into()),
            ))
        }
    };

    let mut iterations = 0;
    let mut working: Vec<usize> = Vec::new();
    let mut z: Option<DVector<f64>> = None;

    if let Some(warm) = warm {
        let candidate: Vec<usize> = warm
            .active_set
            .iter()
            .filter_map(|r| cons.iter().position(|c| c.origin == *r))
            .collect();
        if !candidate.is_empty() && candidate.len() <= n {
            if let Some((zw, _)) = equality_solve(&problem.h, &problem.f, &cons, &candidate) {
                if max_violation(&cons, &zw) <= 1e-9 {
                    z = Some(zw);
                    working = candidate;
                }
            }
        }
    }

    let mut z = match z {
        Some(z) => z,
        None => {
            let z0 = DVector::from_fn(n, |j, _| 0.0f64.clamp(problem.lb[j], problem.ub[j]));
            if max_violation(&cons, &z0) <= 1e-12 {
                z0
            } else {
                let p1 = phase_one(&cons, &z0, opts.max_iter.max(50 * (n + cons.len())));
                iterations += p1.iterations;
                if let Some(msg) = p1.diagnostics {
                    return Ok(finish(
                        p1.z.iter().copied().collect(),
                        QpStatus::IterationLimit,
                        Vec::new(),
                        Multipliers::zeros(n, m),
                        iterations,
                        None,
                        Some(msg),
                    ));
                }
                if p1.total_violation > opts.infeasibility_tol {
                    return Ok(finish(
                        p1.z.iter().copied().collect(),
                        QpStatus::Infeasible,
                        Vec::new(),
                        Multipliers::zeros(n, m),
                        iterations,
                        p1.evidence,
                        None,
                    ));
                }
                p1.z
            }
        }
    };

    let core = ActiveSet {
        h: &problem.h,
        f: &problem.f,
        cons: &cons,
        max_iter: iterations + opts.max_iter,
    };
    let exit = core.run(&mut z, &mut working, &mut iterations);
    let active: Vec<ConstraintRef> = working.iter().map(|&i| cons[i].origin).collect();
    match exit {
        CoreExit::Optimal(mut mult) => {
            // refine on the final working set
            if let Some((zp, mp)) = equality_solve(&problem.h, &problem.f, &cons, &working) {
                let ok = max_violation(&cons, &zp) <= max_violation(&cons, &z).max(1e-12)
                    && mp.iter().all(|&v| v >= -MULTIPLIER_TOL * (problem.h.amax().max(1.0)));
                if ok {
                    z = zp;
                    mult = mp;
                }
            }
            let mut multipliers = Multipliers::zeros(n, m);
            for (pos, &i) in working.iter().enumerate() {
                *multipliers.get_mut(cons[i].origin) = mult[pos].max(0.0) / cons[i].scale;
            }
            let zs: Vec<f64> = z.iter().copied().collect();
            let sol = finish(zs, QpStatus::Optimal, active, multipliers, iterations, None, None);
            if !sol.kkt.within(KKT_TOL) {
                let msg = format!("KKT certificate failed: {:?}", sol.kkt);
                return Ok(QpSolution {
                    status: QpStatus::IterationLimit,
                    diagnostics: Some(msg),
                    ..sol
                });
            }
            Ok(sol)
        }
        CoreExit::Unbounded => Ok(finish(
            z.iter().copied().collect(),
            QpStatus::Unbounded,
            active,
            Multipliers::zeros(n, m),
            iterations,
            None,
            Some("objective unbounded below along a feasible ray".into()),
        )),
        CoreExit::IterationLimit => Ok(finish(
            z.iter().copied().collect(),
            QpStatus::IterationLimit,
            active,
            Multipliers::zeros(n, m),
            iterations,
            None,
            Some(format!("active-set iteration cap {} reached", opts.max_iter)),
        )),
        CoreExit::IllConditioned(msg) => Ok(finish(
            z.iter().copied().collect(),
            QpStatus::IterationLimit,
            active,
            Multipliers::zeros(n, m),
            iterations,
            None,
            Some(msg),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn diag(d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(d))
    }

    #[test]
    fn symmetric_halfspace() {
        // min z1^2 + z2^2 s.t. z1 + z2 >= 2
        let p = QpProblem::new(diag(&[2.0, 2.0]), DVector::zeros(2), vec![ConstraintRow::ge(vec![1.0, 1.0], 2.0)]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.z[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.z[1], 1.0, epsilon = 1e-12);
        assert_eq!(s.active_set, vec![ConstraintRef::Row(0)]);
        assert_abs_diff_eq!(s.multipliers.rows[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn clamped_scalar() {
        // min (z - 3)^2 s.t. z <= 2
        let p = QpProblem::new(diag(&[2.0]), DVector::from_element(1, -6.0), vec![ConstraintRow::le(vec![1.0], 2.0)]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.z[0], 2.0, epsilon = 1e-14);
        assert_eq!(s.active_set, vec![ConstraintRef::Row(0)]);
        assert!(s.kkt.within(1e-12));
    }

    #[test]
    fn kkt_residuals_by_hand() {
        let p = QpProblem::new(diag(&[2.0]), DVector::from_element(1, -6.0), vec![ConstraintRow::le(vec![1.0], 2.0)]);
        let mult = Multipliers { rows: vec![2.0], lower: vec![0.0], upper: vec![0.0] };
        let r = kkt_check(&p, &[2.0], &mult);
        assert!(r.within(1e-12));
        let r = kkt_check(&p, &[2.0 + 1e-3], &mult);
        assert!(r.stationarity > 1e-4);

        // unconstrained minimum with zero multipliers
        let p = QpProblem::new(diag(&[4.0, 1.0]), DVector::from_column_slice(&[-4.0, 3.0]), vec![]);
        let r = kkt_check(&p, &[1.0, -3.0], &Multipliers::zeros(2, 0));
        assert_eq!(r.stationarity, 0.0);
    }

    #[test]
    fn box_bounds_and_rows() {
        // min (z1 - 5)^2 + (z2 + 5)^2, -1 <= z <= 1, z1 - z2 <= 1
        let p = QpProblem::new(diag(&[2.0, 2.0]), DVector::from_column_slice(&[-10.0, 10.0]), vec![ConstraintRow::le(vec![1.0, -1.0], 1.0)])
            .with_bounds(DVector::from_element(2, -1.0), DVector::from_element(2, 1.0));
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_abs_diff_eq!(s.z[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.z[1], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_with_certificate() {
        // z1 >= 1 and z1 <= 0
        let p = QpProblem::new(
            diag(&[2.0, 2.0]),
            DVector::zeros(2),
            vec![ConstraintRow::ge(vec![1.0, 0.0], 1.0), ConstraintRow::le(vec![1.0, 0.0], 0.0), ConstraintRow::ge(vec![0.0, 1.0], -3.0)],
        );
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        let ev = s.evidence.unwrap();
        let mut set = ev.constraints.clone();
        set.sort();
        assert_eq!(set, vec![ConstraintRef::Row(0), ConstraintRef::Row(1)]);
        assert_certificate(&p, &ev);
    }

    fn assert_certificate(p: &QpProblem, ev: &InfeasibilityEvidence) {
        let n = p.dim();
        let mut combo = vec![0.0; n];
        let mut rhs = 0.0;
        for (c, w) in ev.constraints.iter().zip(&ev.weights) {
            assert!(*w > 0.0);
            let (a, b) = match *c {
                ConstraintRef::Row(i) => {
                    let row = &p.rows[i];
                    let s = if row.sense == Sense::Le { 1.0 } else { -1.0 };
                    (row.coeffs.iter().map(|v| s * v).collect::<Vec<_>>(), s * row.rhs)
                }
                ConstraintRef::Lower(j) => {
                    let mut a = vec![0.0; n];
                    a[j] = -1.0;
                    (a, -p.lb[j])
                }
                ConstraintRef::Upper(j) => {
                    let mut a = vec![0.0; n];
                    a[j] = 1.0;
                    (a, p.ub[j])
                }
            };
            for j in 0..n {
                combo[j] += w * a[j];
            }
            rhs += w * b;
        }
        assert!(combo.iter().all(|v| v.abs() < 1e-9), "{combo:?}");
        assert!(rhs < 0.0);
    }

    #[test]
    fn infeasible_against_box() {
        let p = QpProblem::new(diag(&[2.0]), DVector::zeros(1), vec![ConstraintRow::ge(vec![2.0], 10.0)])
            .with_bounds(DVector::from_element(1, -1.0), DVector::from_element(1, 1.0));
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert_certificate(&p, s.evidence.as_ref().unwrap());
    }

    #[test]
    fn zero_row_contradiction() {
        let p = QpProblem::new(diag(&[2.0]), DVector::zeros(1), vec![ConstraintRow::ge(vec![0.0], 1.0)]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        let p = QpProblem::new(diag(&[2.0]), DVector::zeros(1), vec![ConstraintRow::ge(vec![0.0], -1.0)]);
        assert_eq!(solve(&p).unwrap().status, QpStatus::Optimal);
    }

    #[test]
    fn singular_hessian_lp_like() {
        // min z2 with z1 free in cost: z2 >= |z1 - 1| style rows, H = diag(2, 0)
        let p = QpProblem::new(
            diag(&[2.0, 0.0]),
            DVector::from_column_slice(&[0.0, 1.0]),
            vec![ConstraintRow::ge(vec![-1.0, 1.0], -1.0), ConstraintRow::ge(vec![1.0, 1.0], 1.0)],
        );
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        // minimize z1^2 + z2 with z2 >= |1 - z1| -> z1 = 0.5, z2 = 0.5
        assert_abs_diff_eq!(s.z[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(s.z[1], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn unbounded_direction() {
        let p = QpProblem::new(diag(&[2.0, 0.0]), DVector::from_column_slice(&[0.0, 1.0]), vec![]);
        assert_eq!(solve(&p).unwrap().status, QpStatus::Unbounded);
    }

    #[test]
    fn bad_problems() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(solve(&QpProblem::new(asym, DVector::zeros(2), vec![])), Err(QpError::BadProblem(_))));
        let indef = diag(&[1.0, -1.0]);
        assert!(matches!(solve(&QpProblem::new(indef, DVector::zeros(2), vec![])), Err(QpError::BadProblem(_))));
        let p = QpProblem::new(diag(&[1.0]), DVector::zeros(1), vec![])
            .with_bounds(DVector::from_element(1, 1.0), DVector::from_element(1, 0.0));
        assert!(matches!(solve(&p), Err(QpError::BadProblem(_))));
    }

    #[test]
    fn warm_start_reuses_active_set() {
        let p = QpProblem::new(diag(&[2.0, 2.0]), DVector::zeros(2), vec![ConstraintRow::ge(vec![1.0, 1.0], 2.0)]);
        let cold = solve(&p).unwrap();
        let warm = solve_with(&p, &SolverOptions::default(), Some(&cold.warm_start())).unwrap();
        assert_eq!(warm.z, cold.z);
        assert!(warm.iterations <= cold.iterations);
        // a stale warm start that is infeasible falls back to a cold start
        let stale = WarmStart { active_set: vec![ConstraintRef::Row(7)] };
        let s = solve_with(&p, &SolverOptions::default(), Some(&stale)).unwrap();
        assert_abs_diff_eq!(s.z[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn iteration_cap() {
        let p = QpProblem::new(diag(&[2.0, 2.0]), DVector::from_column_slice(&[-10.0, -10.0]), vec![
            ConstraintRow::le(vec![1.0, 0.0], 1.0),
            ConstraintRow::le(vec![0.0, 1.0], 1.0),
        ]);
        let s = solve_with(&p, &SolverOptions { max_iter: 1, ..Default::default() }, None).unwrap();
        assert_eq!(s.status, QpStatus::IterationLimit);
    }

    #[test]
    fn cost_matrices() {
        let (h, f) = build_cost(ControllerKind::Fcbf, 1e5, 0.0, None).unwrap();
        assert_eq!(h, diag(&[2.0, 2.0, 2e5]));
        assert_eq!(f, DVector::zeros(3));
        let (h, f) = build_cost(ControllerKind::SpHocbf, 1e5, 0.1, Some([1.0, 2.0])).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 2.2, epsilon = 1e-15);
        assert_abs_diff_eq!(h[(1, 1)], 2.2, epsilon = 1e-15);
        assert_abs_diff_eq!(f[0], -0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(f[1], -0.4, epsilon = 1e-15);
        assert_eq!(build_cost(ControllerKind::SpHocbf, 1e5, 0.1, None), Err(QpError::MissingPrevInput));
        assert!(build_cost(ControllerKind::Hocbf, 0.0, 0.0, None).is_err());
    }

    #[test]
    fn smoothness_penalty_vanishes_at_zero_previous_input() {
        let (h0, f0) = build_cost(ControllerKind::Hocbf, 1e5, 0.0, None).unwrap();
        let (h1, f1) = build_cost(ControllerKind::SpHocbf, 1e5, 0.1, Some([0.0, 0.0])).unwrap();
        let z = DVector::zeros(3);
        let c0 = 0.5 * z.dot(&(&h0 * &z)) + f0.dot(&z);
        let c1 = 0.5 * z.dot(&(&h1 * &z)) + f1.dot(&z);
        assert_eq!(c0, c1);
    }
}
