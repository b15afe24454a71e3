//! Independent checks and post-run analysis.
//!
//! The derivative checks compare every hand-derived rate used in the QP rows
//! against a five-point central difference of the underlying scalar along
//! the integrated flow. The QP enumeration oracle solves small problems by
//! brute force over active sets and shares no code with the solver.

use crate::constraints::{
    clf_row_fcbf, clf_row_hocbf, clf_surface, eval_psi_chain, fcbf_row, goal_heading, hocbf_row, CbfGains, ClassKLinear,
    ConstraintError, ConstraintRow, Sense,
};
use crate::model::{
    augmented_deriv, pack_augmented, unicycle_deriv, unpack_augmented, AugmentedVector, AuxInput, FilterParams,
    FilteredInput, SystemState, UnicycleParams,
};
use crate::qp::{QpProblem, QpStatus};
use crate::sim::integrate::{integrate, IntegratorOptions};
use crate::sim::{RecordStatus, TrajectoryLog};
use nalgebra::{DMatrix, DVector, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

pub const FD_THRESHOLD: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-5;
/// Below this magnitude the derivative check compares absolute errors.
pub const FD_ABS_SCALE: f64 = 1e-8;
pub const MIN_FD_SAMPLES: usize = 100;
/// Relative corruption applied by the mutation self-test.
pub const TAMPER: f64 = 1e-3;
pub const LIPSCHITZ_TOL: f64 = 1e-6;

/// Which vector field the checked scalar is differentiated along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flow {
    /// Vehicle with the input `u` held constant.
    Direct,
    /// Vehicle plus filter with the command `nu` held constant.
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowPoint {
    pub state: SystemState,
    pub uf: FilteredInput,
    /// `u` for the direct flow, `nu` for the filtered one.
    pub command: [f64; 2],
}

impl FlowPoint {
    fn to_vec(self) -> Vec<f64> {
        vec![
            self.state.x,
            self.state.y,
            self.state.theta,
            self.state.v,
            self.uf.uf1,
            self.uf.uf2,
            self.command[0],
            self.command[1],
        ]
    }
}

/// Scenario constants shared by all checks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CheckContext {
    pub params: UnicycleParams,
    pub filter: FilterParams,
    pub gains: CbfGains,
}

/// A scalar along a flow and the closed-form rate claimed for it.
pub trait RateCheck {
    fn name(&self) -> &'static str;
    fn flow(&self) -> Flow;
    fn scalar(&self, ctx: &CheckContext, state: &SystemState, uf: &FilteredInput) -> Result<f64, ConstraintError>;
    fn analytic(&self, ctx: &CheckContext, point: &FlowPoint) -> Result<f64, ConstraintError>;
}

/// Which coefficient a check corrupts when tampered.
fn tamper_row(mut row: ConstraintRow, tamper: bool) -> ConstraintRow {
    if tamper {
        row.coeffs[0] *= 1.0 + TAMPER;
    }
    row
}

fn decision(point: &FlowPoint) -> [f64; 3] {
    [point.command[0], point.command[1], 0.0]
}

/// `psi0'` from the chain evaluation against `psi0 = |p - p_o|^2 - r^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Psi0Rate {
    pub tamper: bool,
}

impl RateCheck for Psi0Rate {
    fn name(&self) -> &'static str {
        "psi0_dot"
    }
    fn flow(&self) -> Flow {
        Flow::Direct
    }
    fn scalar(&self, ctx: &CheckContext, s: &SystemState, _: &FilteredInput) -> Result<f64, ConstraintError> {
        let p = &ctx.params;
        Ok((s.x - p.obstacle_x).powi(2) + (s.y - p.obstacle_y).powi(2) - p.obstacle_r.powi(2))
    }
    fn analytic(&self, ctx: &CheckContext, point: &FlowPoint) -> Result<f64, ConstraintError> {
        let d = eval_psi_chain(&point.state, &ctx.params, ctx.gains.k1, ctx.gains.k2).psi0_dot;
        Ok(if self.tamper { d * (1.0 + TAMPER) } else { d })
    }
}

/// `psi1'` recovered from the HOCBF row: margin at `u` is `psi1' + k2 psi1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HocbfRowRate {
    pub tamper: bool,
}

impl RateCheck for HocbfRowRate {
    fn name(&self) -> &'static str {
        "hocbf_row"
    }
    fn flow(&self) -> Flow {
        Flow::Direct
    }
    fn scalar(&self, ctx: &CheckContext, s: &SystemState, _: &FilteredInput) -> Result<f64, ConstraintError> {
        Ok(eval_psi_chain(s, &ctx.params, ctx.gains.k1, ctx.gains.k2).psi1)
    }
    fn analytic(&self, ctx: &CheckContext, point: &FlowPoint) -> Result<f64, ConstraintError> {
        let g = &ctx.gains;
        let row = tamper_row(hocbf_row(&point.state, &ctx.params, g.k1, g.k2), self.tamper);
        let psi1 = eval_psi_chain(&point.state, &ctx.params, g.k1, g.k2).psi1;
        Ok(row.margin(&decision(point)) - g.k2.apply(psi1))
    }
}

/// `d/dt psi2(x, uf)` recovered from the filtered barrier row.
#[derive(Debug, Clone, Copy, Default)]
pub struct FcbfRowRate {
    pub tamper: bool,
}

impl RateCheck for FcbfRowRate {
    fn name(&self) -> &'static str {
        "fcbf_row"
    }
    fn flow(&self) -> Flow {
        Flow::Filtered
    }
    fn scalar(&self, ctx: &CheckContext, s: &SystemState, uf: &FilteredInput) -> Result<f64, ConstraintError> {
        Ok(eval_psi_chain(s, &ctx.params, ctx.gains.k1, ctx.gains.k2).psi2(uf))
    }
    fn analytic(&self, ctx: &CheckContext, point: &FlowPoint) -> Result<f64, ConstraintError> {
        let g = &ctx.gains;
        let row = fcbf_row(&point.state, &point.uf, &ctx.params, &ctx.filter, g.k1, g.k2, g.k3);
        let row = tamper_row(row, self.tamper);
        let psi2 = eval_psi_chain(&point.state, &ctx.params, g.k1, g.k2).psi2(&point.uf);
        Ok(row.margin(&decision(point)) - g.k3.apply(psi2))
    }
}

/// `V'` of the filtered CLF recovered from its row at `delta = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClfFcbfRate {
    pub tamper: bool,
}

impl RateCheck for ClfFcbfRate {
    fn name(&self) -> &'static str {
        "clf_row_fcbf"
    }
    fn flow(&self) -> Flow {
        Flow::Filtered
    }
    fn scalar(&self, ctx: &CheckContext, s: &SystemState, uf: &FilteredInput) -> Result<f64, ConstraintError> {
        Ok(clf_surface(s, uf, &ctx.params)?.powi(2))
    }
    fn analytic(&self, ctx: &CheckContext, point: &FlowPoint) -> Result<f64, ConstraintError> {
        let row = clf_row_fcbf(&point.state, &point.uf, &ctx.params, &ctx.filter, ctx.gains.c3)?;
        let row = tamper_row(row, self.tamper);
        let v = self.scalar(ctx, &point.state, &point.uf)?;
        Ok(-row.margin(&decision(point)) - ctx.gains.c3 * v)
    }
}

/// `V'` of the heading CLF recovered from its row at `delta = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClfHocbfRate {
    pub tamper: bool,
}

impl RateCheck for ClfHocbfRate {
    fn name(&self) -> &'static str {
        "clf_row_hocbf"
    }
    fn flow(&self) -> Flow {
        Flow::Direct
    }
    fn scalar(&self, ctx: &CheckContext, s: &SystemState, _: &FilteredInput) -> Result<f64, ConstraintError> {
        let (theta_d, _) = goal_heading(s, &ctx.params)?;
        Ok((s.theta - theta_d).powi(2))
    }
    fn analytic(&self, ctx: &CheckContext, point: &FlowPoint) -> Result<f64, ConstraintError> {
        let row = tamper_row(clf_row_hocbf(&point.state, &ctx.params, ctx.gains.c3)?, self.tamper);
        let v = self.scalar(ctx, &point.state, &point.uf)?;
        Ok(-row.margin(&decision(point)) - ctx.gains.c3 * v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivCheckReport {
    pub operation: String,
    pub samples: usize,
    pub seed: u64,
    pub threshold: f64,
    pub max_rel_error: f64,
    /// `[x, y, theta, v, uf1, uf2, command1, command2]` at the worst sample.
    pub worst_sample: Vec<f64>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub pass: bool,
}

fn fd_options() -> IntegratorOptions {
    IntegratorOptions {
        rtol: 1e-13,
        atol: 1e-15,
        ..IntegratorOptions::default()
    }
}

/// State after following the flow for signed time `dt`.
fn follow(ctx: &CheckContext, flow: Flow, point: &FlowPoint, dt: f64) -> (SystemState, FilteredInput) {
    let sign = dt.signum();
    let span = dt.abs();
    let opts = fd_options();
    match flow {
        Flow::Direct => {
            let u = FilteredInput::new(point.command[0], point.command[1]);
            let params = ctx.params;
            let end = integrate(
                |_, z: &Vector4<f64>| unicycle_deriv(&SystemState::from_vector(z), &u, &params) * sign,
                point.state.to_vector(),
                0.0,
                span,
                &opts,
            )
            .expect("finite-difference flow integration");
            (SystemState::from_vector(&end), point.uf)
        }
        Flow::Filtered => {
            let nu = AuxInput::new(point.command[0], point.command[1]);
            let (params, fp) = (ctx.params, ctx.filter);
            let end = integrate(
                |_, z: &AugmentedVector| {
                    let (s, u) = unpack_augmented(z);
                    augmented_deriv(&s, &u, &nu, &params, &fp) * sign
                },
                pack_augmented(&point.state, &point.uf),
                0.0,
                span,
                &opts,
            )
            .expect("finite-difference flow integration");
            unpack_augmented(&end)
        }
    }
}

/// Five-point central difference of the check's scalar at `point`.
pub fn flow_derivative(check: &dyn RateCheck, ctx: &CheckContext, point: &FlowPoint, h: f64) -> Result<f64, ConstraintError> {
    let mut f = [0.0; 4];
    for (slot, k) in f.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
        let (s, u) = follow(ctx, check.flow(), point, k * h);
        *slot = check.scalar(ctx, &s, &u)?;
    }
    Ok((f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h))
}

/// Relative error, switching to absolute when both values are tiny.
pub fn mixed_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < FD_ABS_SCALE {
        diff
    } else {
        diff / scale
    }
}

/// Random point away from the obstacle and the goal.
pub fn sample_point(rng: &mut ChaCha8Rng, ctx: &CheckContext, flow: Flow) -> FlowPoint {
    let p = &ctx.params;
    let umax = [5.0, 5.0 * p.mass];
    loop {
        let x = rng.gen_range(-5.0..5.0);
        let y = rng.gen_range(-5.0..5.0);
        let clear = (x - p.obstacle_x).hypot(y - p.obstacle_y) - p.obstacle_r;
        let to_goal = (x - p.goal_x).hypot(y - p.goal_y);
        if clear < 0.05 || to_goal < 0.2 {
            continue;
        }
        let state = SystemState::new(x, y, rng.gen_range(-PI..PI), rng.gen_range(0.1..4.0));
        let uf = match flow {
            Flow::Direct => FilteredInput::default(),
            Flow::Filtered => FilteredInput::new(rng.gen_range(-umax[0]..umax[0]), rng.gen_range(-umax[1]..umax[1])),
        };
        let command = [rng.gen_range(-umax[0]..umax[0]), rng.gen_range(-umax[1]..umax[1])];
        return FlowPoint { state, uf, command };
    }
}

/// Compares the analytic rate of `check` with finite differences at
/// `n_samples` seeded random points.
pub fn fd_check_row(check: &dyn RateCheck, ctx: &CheckContext, n_samples: usize, seed: u64) -> DerivCheckReport {
    let n = n_samples.max(MIN_FD_SAMPLES);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (f64::NEG_INFINITY, Vec::new(), 0.0, 0.0);
    let mut taken = 0;
    while taken < n {
        let point = sample_point(&mut rng, ctx, check.flow());
        let (Ok(a), Ok(d)) = (check.analytic(ctx, &point), flow_derivative(check, ctx, &point, FD_STEP)) else {
            continue;
        };
        taken += 1;
        let err = mixed_error(a, d);
        // a NaN error must surface as the worst sample
        if err.is_nan() || err > worst.0 {
            worst = (err, point.to_vec(), a, d);
        }
    }
    let (max_rel_error, worst_sample, worst_analytic, worst_numeric) = worst;
    DerivCheckReport {
        operation: check.name().to_string(),
        samples: n,
        seed,
        threshold: FD_THRESHOLD,
        max_rel_error,
        worst_sample,
        worst_analytic,
        worst_numeric,
        pass: max_rel_error <= FD_THRESHOLD,
    }
}

/// All derivative checks, untampered.
pub fn default_checks() -> Vec<Box<dyn RateCheck + Send + Sync>> {
    vec![
        Box::new(Psi0Rate::default()),
        Box::new(HocbfRowRate::default()),
        Box::new(FcbfRowRate::default()),
        Box::new(ClfFcbfRate::default()),
        Box::new(ClfHocbfRate::default()),
    ]
}

pub fn run_deriv_suite(ctx: &CheckContext, n_samples: usize, seed: u64) -> Vec<DerivCheckReport> {
    default_checks()
        .iter()
        .enumerate()
        .map(|(i, c)| fd_check_row(c.as_ref(), ctx, n_samples, seed.wrapping_add(i as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub t: f64,
    pub channel: usize,
    pub rate: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    /// Per-channel `max |du| / dt`, the empirical Lipschitz estimate.
    pub max_rate: [f64; 2],
    pub total_variation: [f64; 2],
    /// Per-step rate bound `max(a (u - u_min), a (u_max - u))` of filtered runs.
    pub bound_trace: Option<Vec<[f64; 2]>>,
    /// Steps where the rate exceeded the bound at the step start.
    pub violations: Vec<BoundViolation>,
}

impl SmoothnessReport {
    pub fn bound_max(&self) -> Option<[f64; 2]> {
        let trace = self.bound_trace.as_ref().filter(|t| !t.is_empty())?;
        let mut out = [0.0f64; 2];
        for b in trace {
            out[0] = out[0].max(b[0]);
            out[1] = out[1].max(b[1]);
        }
        Some(out)
    }

    /// Whether every step respected its own bound.
    /// `None` for unfiltered runs and for runs with fewer than two inputs.
    pub fn within_bound(&self) -> Option<bool> {
        self.bound_max()?;
        Some(self.violations.is_empty())
    }
}

pub fn lipschitz_estimate(log: &TrajectoryLog) -> SmoothnessReport {
    let inputs: Vec<(f64, FilteredInput)> = log.records.iter().filter_map(|r| r.applied.map(|u| (r.t, u))).collect();
    let mut max_rate = [0.0f64; 2];
    let mut total_variation = [0.0f64; 2];
    let filtered = log.config.controller.is_filtered();
    let alpha = log.config.gains.alpha;
    let bounds = &log.config.input_bounds;
    let mut trace = Vec::new();
    let mut violations = Vec::new();
    for w in inputs.windows(2) {
        let ((t0, u0), (t1, u1)) = (w[0], w[1]);
        let dt = t1 - t0;
        let mut bound = [0.0; 2];
        for ch in 0..2 {
            let du = (u1.get(ch) - u0.get(ch)).abs();
            let rate = du / dt;
            max_rate[ch] = max_rate[ch].max(rate);
            total_variation[ch] += du;
            let u = u0.get(ch);
            bound[ch] = alpha.apply(u - bounds.min[ch]).max(alpha.apply(bounds.max[ch] - u));
            if filtered && rate > bound[ch] + LIPSCHITZ_TOL {
                violations.push(BoundViolation {
                    t: t0,
                    channel: ch,
                    rate,
                    bound: bound[ch],
                });
            }
        }
        trace.push(bound);
    }
    SmoothnessReport {
        max_rate,
        total_variation,
        bound_trace: filtered.then_some(trace),
        violations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub min_b: f64,
    pub min_psi1: f64,
    /// Time of the first sample with `b < 0`.
    pub first_violation: Option<f64>,
}

pub fn safety_report(log: &TrajectoryLog, params: &UnicycleParams, k1: ClassKLinear) -> SafetyReport {
    let mut out = SafetyReport {
        min_b: f64::INFINITY,
        min_psi1: f64::INFINITY,
        first_violation: None,
    };
    for r in &log.records {
        let chain = eval_psi_chain(&r.state, params, k1, ClassKLinear(0.0));
        out.min_b = out.min_b.min(chain.psi0);
        out.min_psi1 = out.min_psi1.min(chain.psi1);
        if chain.psi0 < 0.0 && out.first_violation.is_none() {
            out.first_violation = Some(r.t);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub controller: String,
    pub min_b: f64,
    pub goal_distance: f64,
    pub max_rate: [f64; 2],
    pub status: String,
    pub steps: usize,
    pub mean_solve_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonDelta {
    pub min_b: f64,
    pub goal_distance: f64,
    pub max_rate: [f64; 2],
}

/// Rows keyed by label, so the table does not depend on input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: BTreeMap<String, ComparisonRow>,
}

impl ComparisonTable {
    /// `a - b` for each numeric column.
    pub fn delta(&self, a: &str, b: &str) -> Option<ComparisonDelta> {
        let (ra, rb) = (self.rows.get(a)?, self.rows.get(b)?);
        Some(ComparisonDelta {
            min_b: ra.min_b - rb.min_b,
            goal_distance: ra.goal_distance - rb.goal_distance,
            max_rate: [ra.max_rate[0] - rb.max_rate[0], ra.max_rate[1] - rb.max_rate[1]],
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>12} {:>10} {:>14} {:>14} {:>16} {:>6} {:>12}",
            "run", "min_b", "goal_dist", "max|du1|/dt", "max|du2|/dt", "status", "steps", "mean_qp_s"
        );
        for (label, r) in &self.rows {
            let solve = r.mean_solve_time.map(|t| format!("{t:.3e}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<20} {:>12.6} {:>10.4} {:>14.6} {:>14.3} {:>16} {:>6} {:>12}",
                label, r.min_b, r.goal_distance, r.max_rate[0], r.max_rate[1], r.status, r.steps, solve
            );
        }
        out
    }
}

pub fn comparison_row(label: &str, log: &TrajectoryLog) -> ComparisonRow {
    let summary = log.summary();
    ComparisonRow {
        controller: label.to_string(),
        min_b: summary.min_b,
        goal_distance: summary.goal_distance,
        max_rate: summary.max_rate,
        status: log.outcome.label().to_string(),
        steps: summary.steps_completed,
        mean_solve_time: summary.mean_solve_time,
    }
}

pub fn compare_controllers(logs: &BTreeMap<String, TrajectoryLog>) -> ComparisonTable {
    ComparisonTable {
        rows: logs.iter().map(|(k, log)| (k.clone(), comparison_row(k, log))).collect(),
    }
}

/// Whether every QP in the log was solved to optimality.
pub fn all_optimal(log: &TrajectoryLog) -> bool {
    log.records
        .iter()
        .all(|r| matches!(r.status, RecordStatus::Terminal | RecordStatus::Qp(QpStatus::Optimal)))
}

/// Canonical `a . z <= b` constraints of `problem`, rows first, then bounds.
fn oracle_constraints(problem: &QpProblem) -> Vec<(DVector<f64>, f64)> {
    let n = problem.dim();
    let mut out = Vec::new();
    for row in &problem.rows {
        let sign = if row.sense == Sense::Le { 1.0 } else { -1.0 };
        out.push((DVector::from_iterator(n, row.coeffs.iter().map(|c| sign * c)), sign * row.rhs));
    }
    for j in 0..n {
        if problem.lb[j].is_finite() {
            let mut a = DVector::zeros(n);
            a[j] = -1.0;
            out.push((a, -problem.lb[j]));
        }
        if problem.ub[j].is_finite() {
            let mut a = DVector::zeros(n);
            a[j] = 1.0;
            out.push((a, problem.ub[j]));
        }
    }
    out
}

/// Exhaustive active-set solution of a small strictly convex QP.
///
/// Every subset of at most `n` constraints is treated as equalities and the
/// KKT system solved by LU; the feasible point with nonnegative multipliers
/// and the lowest objective wins. `None` when no subset qualifies.
pub fn qp_enumeration_oracle(problem: &QpProblem) -> Option<Vec<f64>> {
    let n = problem.dim();
    let cons = oracle_constraints(problem);
    let m = cons.len();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u64..(1u64 << m) {
        let set: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > n {
            continue;
        }
        let k = set.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&problem.h);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&problem.f));
        for (r, &i) in set.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = cons[i].0[c];
                kkt[(c, n + r)] = cons[i].0[c];
            }
            rhs[n + r] = cons[i].1;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let z = sol.rows(0, n).into_owned();
        if sol.rows(n, k).iter().any(|&mu| mu < -1e-9) {
            continue;
        }
        let feasible = cons.iter().all(|(a, b)| a.dot(&z) - b <= 1e-9 * (1.0 + b.abs()));
        if !feasible {
            continue;
        }
        let obj = 0.5 * z.dot(&(&problem.h * &z)) + problem.f.dot(&z);
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, z));
        }
    }
    best.map(|(_, z)| z.iter().copied().collect())
}

/// Random strictly convex QP with `n` variables and `m` rows, feasible or
/// not, and random finite box bounds on some variables.
pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
    let r = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &r * r.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.1..1.0);
    let f = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let anchor: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let rows = (0..m)
        .map(|_| {
            let coeffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let at: f64 = coeffs.iter().zip(&anchor).map(|(c, z)| c * z).sum();
            let offset = rng.gen_range(-0.5..1.5);
            if rng.gen_bool(0.5) {
                ConstraintRow::le(coeffs, at + offset)
            } else {
                ConstraintRow::ge(coeffs, at - offset)
            }
        })
        .collect();
    let mut lb = DVector::from_element(n, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(n, f64::INFINITY);
    for j in 0..n {
        if rng.gen_bool(0.3) {
            let lo = rng.gen_range(-3.0..0.0);
            lb[j] = lo;
            ub[j] = lo + rng.gen_range(0.5..4.0);
        }
    }
    QpProblem::new(h, f, rows).with_bounds(lb, ub)
}
