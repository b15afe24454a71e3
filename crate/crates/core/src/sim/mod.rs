//! Closed-loop simulation.
//!
//! Every control period the controller-specific QP is assembled at the
//! current state and solved once. Its output is held constant over the
//! period (zero-order hold) while the continuous dynamics are integrated:
//! the six-state vehicle plus filter for the filtered controller, the plain
//! four-state vehicle for the HOCBF benchmarks.

pub mod integrate;

use crate::constraints::{
    clf_row_fcbf, clf_row_hocbf, eval_psi_chain, fcbf_row, hocbf_row, input_bound_rows, startup_check, CbfGains,
    ConstraintError, ControllerKind, InputBounds, StartupReport, DELTA_INDEX,
};
use crate::model::{
    augmented_deriv, pack_augmented, unicycle_deriv, unpack_augmented, AugmentedVector, AuxInput, FilterParams,
    FilteredInput, ModelError, SystemState, UnicycleParams,
};
use crate::qp::{build_cost, solve_with, ConstraintRef, QpError, QpProblem, QpStatus, SolverOptions, WarmStart};
use integrate::{integrate, IntegrateError, IntegratorOptions};
use nalgebra::{DVector, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("QP returned {status:?} at t = {t}")]
    QpFailed {
        status: QpStatus,
        t: f64,
        record: Box<StepRecord>,
    },
    #[error("controller {0} is not handled by this step function")]
    WrongController(ControllerKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpWeights {
    /// Weight of the squared CLF relaxation.
    pub q: f64,
    /// Penalty on consecutive input differences (sp-HOCBF only).
    pub smoothness_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub dt: f64,
    pub horizon: f64,
    pub initial_state: SystemState,
    pub initial_uf: FilteredInput,
    pub controller: ControllerKind,
    pub gains: CbfGains,
    pub qp: QpWeights,
    pub filter: FilterParams,
    pub unicycle: UnicycleParams,
    pub input_bounds: InputBounds,
}

impl ScenarioConfig {
    /// The obstacle-avoidance scenario with the reference parameter set.
    pub fn paper(controller: ControllerKind) -> Self {
        let unicycle = UnicycleParams::default();
        Self {
            dt: 0.1,
            horizon: 5.0,
            initial_state: SystemState::new(-3.0, 0.0, PI / 12.0, 2.0),
            initial_uf: FilteredInput::default(),
            controller,
            gains: CbfGains::default(),
            qp: QpWeights {
                q: 1e5,
                smoothness_weight: if controller == ControllerKind::SpHocbf { 0.1 } else { 0.0 },
            },
            filter: FilterParams::first_order(2e-3),
            unicycle,
            input_bounds: InputBounds::for_mass(unicycle.mass),
        }
    }

    /// Switches controller, resetting the smoothness weight to that controller's default.
    pub fn with_controller(mut self, controller: ControllerKind) -> Self {
        self.controller = controller;
        self.qp.smoothness_weight = if controller == ControllerKind::SpHocbf { 0.1 } else { 0.0 };
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &'static str, reason: String| Err(ConfigError::Invalid { field, reason });
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return invalid("dt", format!("must be > 0, got {}", self.dt));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return invalid("horizon_T", format!("must be >= dt, got {}", self.horizon));
        }
        if !self.initial_state.is_finite() {
            return invalid("initial_state", "must be finite".into());
        }
        if !(self.initial_uf.uf1.is_finite() && self.initial_uf.uf2.is_finite()) {
            return invalid("initial_uf", "must be finite".into());
        }
        for (field, k) in [
            ("k1", self.gains.k1),
            ("k2", self.gains.k2),
            ("k3", self.gains.k3),
            ("alpha", self.gains.alpha),
        ] {
            if !k.is_strict() {
                return invalid(field, format!("class-K gain must be > 0, got {}", k.gain()));
            }
        }
        if !(self.gains.c3.is_finite() && self.gains.c3 > 0.0) {
            return invalid("c3", format!("must be > 0, got {}", self.gains.c3));
        }
        if !(self.qp.q.is_finite() && self.qp.q > 0.0) {
            return invalid("Q", format!("must be > 0, got {}", self.qp.q));
        }
        if !(self.qp.smoothness_weight.is_finite() && self.qp.smoothness_weight >= 0.0) {
            return invalid("smoothness_weight", format!("must be >= 0, got {}", self.qp.smoothness_weight));
        }
        if self.controller == ControllerKind::Fcbf && self.qp.smoothness_weight > 0.0 {
            return invalid("smoothness_weight", "must be 0 for the filtered controller".into());
        }
        if !self.input_bounds.is_valid() {
            return invalid("input_bounds", "bounds must be finite with min < max".into());
        }
        self.filter.validate()?;
        self.unicycle.validate()?;
        Ok(())
    }

    /// Number of control periods covering the horizon.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn startup_report(&self) -> StartupReport {
        startup_check(
            &self.initial_state,
            &self.initial_uf,
            &self.unicycle,
            &self.gains,
            &self.input_bounds,
        )
    }

    fn box_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let b = &self.input_bounds;
        (
            DVector::from_column_slice(&[b.min[0], b.min[1], f64::NEG_INFINITY]),
            DVector::from_column_slice(&[b.max[0], b.max[1], f64::INFINITY]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordStatus {
    Qp(QpStatus),
    /// Final state after the last control period; no QP was solved.
    Terminal,
}

impl RecordStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordStatus::Qp(s) => s.as_str(),
            RecordStatus::Terminal => "Terminal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Optimal" => RecordStatus::Qp(QpStatus::Optimal),
            "Infeasible" => RecordStatus::Qp(QpStatus::Infeasible),
            "IterationLimit" => RecordStatus::Qp(QpStatus::IterationLimit),
            "Unbounded" => RecordStatus::Qp(QpStatus::Unbounded),
            "Terminal" => RecordStatus::Terminal,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub state: SystemState,
    /// Input acting on the vehicle at `t`: the QP output for the HOCBF
    /// benchmarks, the filter state for the filtered controller.
    pub applied: Option<FilteredInput>,
    pub uf: Option<FilteredInput>,
    pub nu: Option<AuxInput>,
    pub delta: Option<f64>,
    pub b: f64,
    pub psi1: f64,
    pub psi2: Option<f64>,
    pub status: RecordStatus,
    pub active_set: Vec<ConstraintRef>,
    pub solve_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunOutcome {
    Completed,
    /// The QP at time `t` did not return an optimal point.
    Stopped { t: f64, status: QpStatus },
    Failed { t: f64, reason: String },
}

impl RunOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            RunOutcome::Completed => "Completed",
            RunOutcome::Stopped { status, .. } => status.as_str(),
            RunOutcome::Failed { .. } => "Failed",
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, RunOutcome::Completed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub min_b: f64,
    pub max_rate: [f64; 2],
    pub goal_distance: f64,
    pub cost_proxy: f64,
    pub steps_completed: usize,
    pub mean_solve_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub config: ScenarioConfig,
    pub records: Vec<StepRecord>,
    pub outcome: RunOutcome,
    pub startup: StartupReport,
}

impl TrajectoryLog {
    pub fn from_records(config: ScenarioConfig, records: Vec<StepRecord>, outcome: RunOutcome) -> Self {
        let startup = config.startup_report();
        Self {
            config,
            records,
            outcome,
            startup,
        }
    }

    pub fn controller(&self) -> ControllerKind {
        self.config.controller
    }

    /// Records where a QP was solved successfully.
    pub fn control_steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.status == RecordStatus::Qp(QpStatus::Optimal))
    }

    pub fn last_state(&self) -> Option<SystemState> {
        self.records.last().map(|r| r.state)
    }

    pub fn goal_distance(&self) -> f64 {
        self.last_state()
            .map(|s| (s.x - self.config.unicycle.goal_x).hypot(s.y - self.config.unicycle.goal_y))
            .unwrap_or(f64::NAN)
    }

    /// Largest `|du| / dt` per channel between consecutive applied inputs.
    pub fn max_input_rate(&self) -> [f64; 2] {
        let inputs: Vec<(f64, FilteredInput)> = self.records.iter().filter_map(|r| r.applied.map(|u| (r.t, u))).collect();
        let mut out = [0.0f64; 2];
        for w in inputs.windows(2) {
            let dt = w[1].0 - w[0].0;
            for (ch, o) in out.iter_mut().enumerate() {
                *o = o.max((w[1].1.get(ch) - w[0].1.get(ch)).abs() / dt);
            }
        }
        out
    }

    pub fn summary(&self) -> RunSummary {
        let min_b = self.records.iter().map(|r| r.b).fold(f64::INFINITY, f64::min);
        let q = self.config.qp.q;
        let dt = self.config.dt;
        let cost_proxy = self
            .control_steps()
            .map(|r| {
                let (a, b) = match (self.config.controller, r.nu, r.applied) {
                    (ControllerKind::Fcbf, Some(nu), _) => (nu.nu1, nu.nu2),
                    (_, _, Some(u)) => (u.uf1, u.uf2),
                    _ => (0.0, 0.0),
                };
                let d = r.delta.unwrap_or(0.0);
                (a * a + b * b + q * d * d) * dt
            })
            .sum();
        let times: Vec<f64> = self.records.iter().filter_map(|r| r.solve_time).collect();
        RunSummary {
            min_b,
            max_rate: self.max_input_rate(),
            goal_distance: self.goal_distance(),
            cost_proxy,
            steps_completed: self.control_steps().count(),
            mean_solve_time: if times.is_empty() {
                None
            } else {
                Some(times.iter().sum::<f64>() / times.len() as f64)
            },
        }
    }
}

fn integrator_options() -> IntegratorOptions {
    IntegratorOptions::default()
}

/// Integrates the vehicle plus filter over `[0, dt]` with `nu` held constant.
pub fn advance_filtered(
    state: &SystemState,
    uf: &FilteredInput,
    nu: &AuxInput,
    config: &ScenarioConfig,
) -> Result<(SystemState, FilteredInput), IntegrateError> {
    let params = config.unicycle;
    let fp = config.filter;
    let end = integrate(
        |_, z: &AugmentedVector| {
            let (s, u) = unpack_augmented(z);
            augmented_deriv(&s, &u, nu, &params, &fp)
        },
        pack_augmented(state, uf),
        0.0,
        config.dt,
        &integrator_options(),
    )?;
    Ok(unpack_augmented(&end))
}

/// Integrates the vehicle over `[0, dt]` with `u` held constant.
pub fn advance_direct(state: &SystemState, u: &FilteredInput, config: &ScenarioConfig) -> Result<SystemState, IntegrateError> {
    let params = config.unicycle;
    let end = integrate(
        |_, z: &Vector4<f64>| unicycle_deriv(&SystemState::from_vector(z), u, &params),
        state.to_vector(),
        0.0,
        config.dt,
        &integrator_options(),
    )?;
    Ok(SystemState::from_vector(&end))
}

fn base_record(t: f64, state: &SystemState, config: &ScenarioConfig) -> StepRecord {
    let chain = eval_psi_chain(state, &config.unicycle, config.gains.k1, config.gains.k2);
    StepRecord {
        t,
        state: *state,
        applied: None,
        uf: None,
        nu: None,
        delta: None,
        b: chain.psi0,
        psi1: chain.psi1,
        psi2: None,
        status: RecordStatus::Terminal,
        active_set: Vec::new(),
        solve_time: None,
    }
}

pub struct FilteredStep {
    pub state: SystemState,
    pub uf: FilteredInput,
    pub record: StepRecord,
}

/// The QP of the filtered controller at `(state, uf)`.
pub fn fcbf_problem(state: &SystemState, uf: &FilteredInput, config: &ScenarioConfig) -> Result<QpProblem, SimError> {
    let g = &config.gains;
    let mut rows = vec![fcbf_row(state, uf, &config.unicycle, &config.filter, g.k1, g.k2, g.k3)];
    rows.extend(input_bound_rows(uf, &config.filter, &config.input_bounds, g.alpha, g.alpha));
    rows.push(clf_row_fcbf(state, uf, &config.unicycle, &config.filter, g.c3)?);
    let (h, f) = build_cost(ControllerKind::Fcbf, config.qp.q, 0.0, None)?;
    Ok(QpProblem::new(h, f, rows))
}

/// The QP of the HOCBF benchmarks at `state`.
pub fn hocbf_problem(state: &SystemState, config: &ScenarioConfig, prev_u: Option<[f64; 2]>) -> Result<QpProblem, SimError> {
    let g = &config.gains;
    let rows = vec![
        hocbf_row(state, &config.unicycle, g.k1, g.k2),
        clf_row_hocbf(state, &config.unicycle, g.c3)?,
    ];
    let weight = match config.controller {
        ControllerKind::SpHocbf => config.qp.smoothness_weight,
        _ => 0.0,
    };
    let (h, f) = build_cost(config.controller, config.qp.q, weight, prev_u)?;
    let (lb, ub) = config.box_bounds();
    Ok(QpProblem::new(h, f, rows).with_bounds(lb, ub))
}

pub fn step_fcbf(
    t: f64,
    state: &SystemState,
    uf: &FilteredInput,
    config: &ScenarioConfig,
    warm: &mut WarmStart,
) -> Result<FilteredStep, SimError> {
    if config.controller != ControllerKind::Fcbf {
        return Err(SimError::WrongController(config.controller));
    }
    let problem = fcbf_problem(state, uf, config)?;
    let sol = solve_with(&problem, &SolverOptions::default(), Some(warm))?;

    let mut record = base_record(t, state, config);
    let chain = eval_psi_chain(state, &config.unicycle, config.gains.k1, config.gains.k2);
    record.applied = Some(*uf);
    record.uf = Some(*uf);
    record.psi2 = Some(chain.psi2(uf));
    record.status = RecordStatus::Qp(sol.status);
    record.solve_time = Some(sol.solve_time);
    record.active_set = sol.active_set.clone();
    if sol.status != QpStatus::Optimal {
        return Err(SimError::QpFailed {
            status: sol.status,
            t,
            record: Box::new(record),
        });
    }
    let nu = AuxInput::new(sol.z[0], sol.z[1]);
    record.nu = Some(nu);
    record.delta = Some(sol.z[DELTA_INDEX]);
    *warm = sol.warm_start();

    let (next_state, next_uf) = advance_filtered(state, uf, &nu, config)?;
    Ok(FilteredStep {
        state: next_state,
        uf: next_uf,
        record,
    })
}

pub struct DirectStep {
    pub state: SystemState,
    pub u: FilteredInput,
    pub record: StepRecord,
}

pub fn step_hocbf(
    t: f64,
    state: &SystemState,
    config: &ScenarioConfig,
    prev_u: Option<[f64; 2]>,
    warm: &mut WarmStart,
) -> Result<DirectStep, SimError> {
    if config.controller == ControllerKind::Fcbf {
        return Err(SimError::WrongController(config.controller));
    }
    let problem = hocbf_problem(state, config, prev_u)?;
    let sol = solve_with(&problem, &SolverOptions::default(), Some(warm))?;

    let mut record = base_record(t, state, config);
    record.status = RecordStatus::Qp(sol.status);
    record.solve_time = Some(sol.solve_time);
    record.active_set = sol.active_set.clone();
    if sol.status != QpStatus::Optimal {
        return Err(SimError::QpFailed {
            status: sol.status,
            t,
            record: Box::new(record),
        });
    }
    let u = FilteredInput::new(sol.z[0], sol.z[1]);
    let chain = eval_psi_chain(state, &config.unicycle, config.gains.k1, config.gains.k2);
    record.applied = Some(u);
    record.psi2 = Some(chain.psi2(&u));
    record.delta = Some(sol.z[DELTA_INDEX]);
    *warm = sol.warm_start();

    let next = advance_direct(state, &u, config)?;
    Ok(DirectStep { state: next, u, record })
}

/// Re-integrates one logged control step from its recorded inputs.
pub fn replay_step(record: &StepRecord, config: &ScenarioConfig) -> Result<(SystemState, Option<FilteredInput>), IntegrateError> {
    match (config.controller, record.uf, record.nu, record.applied) {
        (ControllerKind::Fcbf, Some(uf), Some(nu), _) => {
            let (s, u) = advance_filtered(&record.state, &uf, &nu, config)?;
            Ok((s, Some(u)))
        }
        (_, _, _, Some(u)) => Ok((advance_direct(&record.state, &u, config)?, None)),
        _ => Ok((record.state, record.uf)),
    }
}

/// Runs the closed loop for the whole horizon, stopping at the first
/// non-optimal QP.
pub fn run(config: &ScenarioConfig) -> Result<TrajectoryLog, ConfigError> {
    config.validate()?;
    let startup = config.startup_report();
    let relevant: &[&str] = if config.controller.is_filtered() {
        &["psi0", "psi1", "psi0_f", "psi_min_1", "psi_max_1", "psi_min_2", "psi_max_2"]
    } else {
        &["psi0", "psi1"]
    };
    for check in startup.failures().filter(|c| relevant.contains(&c.name.as_str())) {
        log::warn!(
            "initial condition outside {} (value {:e}); running anyway",
            check.name,
            check.value
        );
    }

    let steps = config.steps();
    let mut records = Vec::with_capacity(steps + 1);
    let mut state = config.initial_state;
    let mut uf = config.initial_uf;
    let mut prev_u = [config.initial_uf.uf1, config.initial_uf.uf2];
    let mut warm = WarmStart::default();
    let mut outcome = RunOutcome::Completed;

    for k in 0..steps {
        let t = k as f64 * config.dt;
        let result = if config.controller.is_filtered() {
            step_fcbf(t, &state, &uf, config, &mut warm).map(|s| {
                state = s.state;
                uf = s.uf;
                s.record
            })
        } else {
            step_hocbf(t, &state, config, Some(prev_u), &mut warm).map(|s| {
                state = s.state;
                prev_u = [s.u.uf1, s.u.uf2];
                s.record
            })
        };
        match result {
            Ok(record) => {
                log::debug!("t = {t:.3} b = {:.6} status = {}", record.b, record.status.as_str());
                records.push(record);
            }
            Err(SimError::QpFailed { status, t, record }) => {
                log::info!("QP {} at t = {t}; stopping run", status.as_str());
                records.push(*record);
                outcome = RunOutcome::Stopped { t, status };
                break;
            }
            Err(e) => {
                log::warn!("step at t = {t} failed: {e}");
                outcome = RunOutcome::Failed {
                    t,
                    reason: e.to_string(),
                };
                break;
            }
        }
    }

    if outcome.is_completed() {
        let t = steps as f64 * config.dt;
        let mut last = base_record(t, &state, config);
        if config.controller.is_filtered() {
            let chain = eval_psi_chain(&state, &config.unicycle, config.gains.k1, config.gains.k2);
            last.uf = Some(uf);
            last.applied = Some(uf);
            last.psi2 = Some(chain.psi2(&uf));
        }
        records.push(last);
    }

    Ok(TrajectoryLog {
        config: config.clone(),
        records,
        outcome,
        startup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ClassKLinear;

    #[test]
    fn paper_config_is_valid() {
        for kind in ControllerKind::ALL {
            let c = ScenarioConfig::paper(kind);
            c.validate().unwrap();
            assert_eq!(c.steps(), 50);
        }
        assert_eq!(ScenarioConfig::paper(ControllerKind::SpHocbf).qp.smoothness_weight, 0.1);
    }

    #[test]
    fn zero_gain_rejected() {
        let mut c = ScenarioConfig::paper(ControllerKind::Fcbf);
        c.gains.k3 = ClassKLinear(0.0);
        assert!(matches!(c.validate(), Err(ConfigError::Invalid { field: "k3", .. })));
        let mut c = ScenarioConfig::paper(ControllerKind::Fcbf);
        c.filter.order = 2;
        assert!(matches!(c.validate(), Err(ConfigError::Model(ModelError::UnsupportedFilterOrder(2)))));
        let mut c = ScenarioConfig::paper(ControllerKind::Fcbf);
        c.horizon = 0.01;
        assert!(c.validate().is_err());
    }

    #[test]
    fn straight_line_advance() {
        let c = ScenarioConfig {
            dt: 1.0,
            ..ScenarioConfig::paper(ControllerKind::Hocbf)
        };
        let s = advance_direct(&SystemState::new(0.0, 0.0, 0.0, 2.0), &FilteredInput::default(), &c).unwrap();
        assert!((s.x - 2.0).abs() < 1e-12 && s.y == 0.0);
    }

    #[test]
    fn idle_fcbf_step() {
        // far from the obstacle, heading at the goal, at rest
        let mut c = ScenarioConfig::paper(ControllerKind::Fcbf);
        c.unicycle.obstacle_x = 100.0;
        let state = SystemState::new(-3.0, 0.0, 0.0, 0.0);
        let step = step_fcbf(0.0, &state, &FilteredInput::default(), &c, &mut WarmStart::default()).unwrap();
        let nu = step.record.nu.unwrap();
        assert!(nu.nu1.abs() < 1e-9 && nu.nu2.abs() < 1e-9);
        assert!(step.record.delta.unwrap().abs() < 1e-9);
    }

    #[test]
    fn idle_hocbf_step() {
        let mut c = ScenarioConfig::paper(ControllerKind::Hocbf);
        c.unicycle.obstacle_x = 100.0;
        let state = SystemState::new(-3.0, 0.0, 0.0, 0.0);
        let step = step_hocbf(0.0, &state, &c, None, &mut WarmStart::default()).unwrap();
        assert!(step.u.uf1.abs() < 1e-9 && step.u.uf2.abs() < 1e-9);
    }

    #[test]
    fn reference_first_fcbf_step_is_infeasible() {
        let c = ScenarioConfig::paper(ControllerKind::Fcbf);
        let (s, tau) = (c.initial_state, c.filter.tau);
        // closed form at uf = 0: psi2 = 2v^2 + 20 psi0' + 100 psi0, d/dt psi2 = 20 (2v^2) + 100 psi0'
        let dx = s.x;
        let psi0 = dx * dx - 1.0;
        let psi0_dot = 2.0 * dx * s.v * s.theta.cos();
        let psi2 = 2.0 * s.v * s.v + 20.0 * psi0_dot + 100.0 * psi0;
        let drift = 40.0 * s.v * s.v + 100.0 * psi0_dot;
        let c1 = -2.0 * dx * s.v * s.theta.sin() / tau;
        let c2 = 2.0 * dx * s.theta.cos() / (c.unicycle.mass * tau);
        // best case over the command box allowed by the rate rows
        let b = &c.input_bounds;
        let (lo1, hi1) = (-tau * b.min[0].abs(), tau * b.max[0]);
        let (lo2, hi2) = (-tau * b.min[1].abs(), tau * b.max[1]);
        let best = drift + (c1 * lo1).max(c1 * hi1) + (c2 * lo2).max(c2 * hi2) + psi2;
        assert!(best < -370.0, "{best}");

        let row = fcbf_row(&s, &c.initial_uf, &c.unicycle, &c.filter, c.gains.k1, c.gains.k2, c.gains.k3);
        assert!((row.coeffs[0] - c1).abs() < 1e-9 * c1.abs());
        assert!((row.coeffs[1] - c2).abs() < 1e-9 * c2.abs());
        assert!((row.rhs + drift + psi2).abs() < 1e-9 * drift.abs());

        match step_fcbf(0.0, &s, &c.initial_uf, &c, &mut WarmStart::default()) {
            Err(SimError::QpFailed { status, record, .. }) => {
                assert_eq!(status, QpStatus::Infeasible);
                assert_eq!(record.b, psi0);
            }
            other => panic!("expected infeasible QP, got {:?}", other.map(|s| s.record)),
        }
    }

    #[test]
    fn first_fcbf_step_with_fast_rate_rows_is_safe() {
        let mut c = ScenarioConfig::paper(ControllerKind::Fcbf);
        c.gains.alpha = ClassKLinear(50.0);
        let step = step_fcbf(0.0, &c.initial_state, &c.initial_uf, &c, &mut WarmStart::default()).unwrap();
        assert_eq!(step.record.status, RecordStatus::Qp(QpStatus::Optimal));
        let nu = step.record.nu.unwrap();
        assert!(nu.nu1.is_finite() && nu.nu2.is_finite());
        let b = eval_psi_chain(&step.state, &c.unicycle, c.gains.k1, c.gains.k2).psi0;
        assert!(b >= 0.0);
    }

    #[test]
    fn tightened_upper_bound_caps_command() {
        let mut c = ScenarioConfig::paper(ControllerKind::Fcbf);
        c.gains.alpha = ClassKLinear(50.0);
        let uf = FilteredInput::new(0.3, 0.0);
        c.input_bounds.max[0] = uf.uf1;
        let state = SystemState::new(-3.0, 0.5, 0.6, 2.0);
        let step = step_fcbf(0.0, &state, &uf, &c, &mut WarmStart::default()).unwrap();
        assert!(step.record.nu.unwrap().nu1 <= uf.uf1 + 1e-8);
    }

    #[test]
    fn hocbf_inputs_respect_box() {
        let log = run(&ScenarioConfig::paper(ControllerKind::Hocbf)).unwrap();
        let b = InputBounds::for_mass(1650.0);
        for r in log.control_steps() {
            assert!(b.contains(&r.applied.unwrap(), 1e-9));
        }
    }

    #[test]
    fn sp_hocbf_with_optimal_previous_input_matches_hocbf() {
        let c = ScenarioConfig::paper(ControllerKind::Hocbf);
        let state = SystemState::new(-1.8, 0.2, 0.4, 2.0);
        let plain = step_hocbf(0.0, &state, &c, None, &mut WarmStart::default()).unwrap();
        let sp = c.clone().with_controller(ControllerKind::SpHocbf);
        let penalized = step_hocbf(0.0, &state, &sp, Some([plain.u.uf1, plain.u.uf2]), &mut WarmStart::default()).unwrap();
        assert!((plain.u.uf1 - penalized.u.uf1).abs() < 1e-7);
        assert!((plain.u.uf2 - penalized.u.uf2).abs() < 1e-6 * plain.u.uf2.abs().max(1.0));
    }

    #[test]
    fn wrong_controller_rejected() {
        let c = ScenarioConfig::paper(ControllerKind::Hocbf);
        assert!(matches!(
            step_fcbf(0.0, &c.initial_state, &c.initial_uf, &c, &mut WarmStart::default()),
            Err(SimError::WrongController(_))
        ));
    }

    #[test]
    fn log_time_grid() {
        let log = run(&ScenarioConfig::paper(ControllerKind::Fcbf)).unwrap();
        for (k, r) in log.records.iter().enumerate() {
            assert_eq!(r.t, k as f64 * 0.1);
        }
    }
}
