//! Affine inequality rows of the per-step QP.
//!
//! Obstacle: `b = (x - xo)^2 + (y - yo)^2 - ro^2` has relative degree two in
//! the vehicle input, so the barrier chain is
//!
//! ```text
//!   psi0 = b
//!   psi1 = psi0' + k1 psi0
//!   psi2 = psi1' + k2 psi1           (affine in the applied input)
//! ```
//!
//! For the filtered controller `psi2(x, uf)` is itself treated as a barrier on
//! the augmented system, giving `psi1f = psi2' + k3 psi2 >= 0`, which is affine
//! in the filter command `nu`. The filter state is also kept inside its bounds
//! by first-order rows on `uf - umin` and `umax - uf`.
//!
//! Decision vectors are always three-dimensional: `[nu1, nu2, delta]` for the
//! filtered controller and `[u1, u2, delta]` for the HOCBF benchmarks.

use crate::model::{FilterParams, FilteredInput, SystemState, UnicycleParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of QP decision variables for every controller.
pub const DECISION_DIM: usize = 3;
/// Index of the CLF relaxation inside the decision vector.
pub const DELTA_INDEX: usize = 2;
/// Weight on the heading error inside the filtered CLF `(10 (theta - theta_d) + uf1 + uf2)^2`.
pub const HEADING_WEIGHT: f64 = 10.0;
/// Squared goal distance below which the desired heading is undefined.
pub const GOAL_SINGULARITY_EPS: f64 = 1e-9;

/// Which controller a QP is assembled for; fixes the decision-vector layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControllerKind {
    /// Filtered controller over `[nu1, nu2, delta]`.
    #[serde(rename = "fcbf")]
    Fcbf,
    /// Plain HOCBF benchmark over `[u1, u2, delta]`.
    #[serde(rename = "hocbf")]
    Hocbf,
    /// HOCBF with a penalty on consecutive input differences.
    #[serde(rename = "sp-hocbf")]
    SpHocbf,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Fcbf, ControllerKind::Hocbf, ControllerKind::SpHocbf];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Fcbf => "fcbf",
            ControllerKind::Hocbf => "hocbf",
            ControllerKind::SpHocbf => "sp-hocbf",
        }
    }

    pub fn is_filtered(self) -> bool {
        self == ControllerKind::Fcbf
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fcbf" => Ok(ControllerKind::Fcbf),
            "hocbf" => Ok(ControllerKind::Hocbf),
            "sp-hocbf" | "sphocbf" | "sp_hocbf" => Ok(ControllerKind::SpHocbf),
            other => Err(format!("unknown controller `{other}` (expected fcbf, hocbf or sp-hocbf)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("desired heading undefined: squared distance to goal {dist2:e} m^2 is below {GOAL_SINGULARITY_EPS:e}")]
    GoalSingularity { dist2: f64 },
}

/// Linear class-K function `s -> gain * s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassKLinear(pub f64);

impl ClassKLinear {
    pub fn gain(self) -> f64 {
        self.0
    }

    pub fn apply(self, s: f64) -> f64 {
        self.0 * s
    }

    /// Strict class-K requires a positive gain.
    pub fn is_strict(self) -> bool {
        self.0.is_finite() && self.0 > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `coeffs . z >= rhs`
    Ge,
    /// `coeffs . z <= rhs`
    Le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
    pub sense: Sense,
}

impl ConstraintRow {
    pub fn ge(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, rhs, sense: Sense::Ge }
    }

    pub fn le(coeffs: Vec<f64>, rhs: f64) -> Self {
        Self { coeffs, rhs, sense: Sense::Le }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    /// `coeffs . z`
    pub fn lhs(&self, z: &[f64]) -> f64 {
        self.coeffs.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    /// Signed slack; nonnegative iff the row holds at `z`.
    pub fn margin(&self, z: &[f64]) -> f64 {
        match self.sense {
            Sense::Ge => self.lhs(z) - self.rhs,
            Sense::Le => self.rhs - self.lhs(z),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rhs.is_finite() && self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
            rhs: self.rhs * factor,
            sense: self.sense,
        }
    }
}

/// Barrier chain values at a state, with `psi2` split into its input-free
/// part and the coefficients of the two input channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiChainValues {
    pub psi0: f64,
    pub psi0_dot: f64,
    pub psi1: f64,
    pub psi2_const: f64,
    /// Coefficient of the angular velocity input.
    pub psi2_coeff_u1: f64,
    /// Coefficient of the force input (already divided by the mass).
    pub psi2_coeff_u2: f64,
}

impl PsiChainValues {
    pub fn psi2(&self, u: &FilteredInput) -> f64 {
        self.psi2_const + self.psi2_coeff_u1 * u.uf1 + self.psi2_coeff_u2 * u.uf2
    }
}

/// Geometric pieces shared by every chain expression.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    v: f64,
    b: f64,
    /// `2 (dx cos + dy sin)`; multiplies the acceleration in `psi0''`.
    radial: f64,
    /// `dy cos - dx sin`
    lateral: f64,
}

impl Geometry {
    fn new(state: &SystemState, params: &UnicycleParams) -> Self {
        let dx = state.x - params.obstacle_x;
        let dy = state.y - params.obstacle_y;
        let (s, c) = state.theta.sin_cos();
        Self {
            v: state.v,
            b: dx * dx + dy * dy - params.obstacle_r * params.obstacle_r,
            radial: 2.0 * (dx * c + dy * s),
            lateral: dy * c - dx * s,
        }
    }

    fn psi0_dot(&self) -> f64 {
        self.v * self.radial
    }

    /// Coefficient of the heading rate in `psi0''`.
    fn turn_gain(&self) -> f64 {
        2.0 * self.v * self.lateral
    }
}

pub fn eval_psi_chain(
    state: &SystemState,
    params: &UnicycleParams,
    k1: ClassKLinear,
    k2: ClassKLinear,
) -> PsiChainValues {
    let g = Geometry::new(state, params);
    let psi0_dot = g.psi0_dot();
    let psi1 = psi0_dot + k1.apply(g.b);
    // psi2 = psi0'' + k1 psi0' + k2 psi1, psi0'' = 2 v^2 + turn_gain u1 + radial u2 / M
    PsiChainValues {
        psi0: g.b,
        psi0_dot,
        psi1,
        psi2_const: 2.0 * g.v * g.v + k1.apply(psi0_dot) + k2.apply(psi1),
        psi2_coeff_u1: g.turn_gain(),
        psi2_coeff_u2: g.radial / params.mass,
    }
}

/// `psi2(x, u) >= 0` over `[u1, u2, delta]`.
pub fn hocbf_row(state: &SystemState, params: &UnicycleParams, k1: ClassKLinear, k2: ClassKLinear) -> ConstraintRow {
    let chain = eval_psi_chain(state, params, k1, k2);
    ConstraintRow::ge(vec![chain.psi2_coeff_u1, chain.psi2_coeff_u2, 0.0], -chain.psi2_const)
}

/// Time derivative of `psi2(x, uf)` along the augmented flow, split into the
/// part that does not depend on `nu` and the coefficients of `nu1`, `nu2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psi2Rate {
    pub drift: f64,
    pub coeff_nu1: f64,
    pub coeff_nu2: f64,
}

pub fn psi2_rate(
    state: &SystemState,
    uf: &FilteredInput,
    params: &UnicycleParams,
    fp: &FilterParams,
    k1: ClassKLinear,
    k2: ClassKLinear,
) -> Psi2Rate {
    let g = Geometry::new(state, params);
    let omega = uf.uf1;
    let accel = uf.uf2 / params.mass;
    let ksum = k1.gain() + k2.gain();
    let kprod = k1.gain() * k2.gain();

    let psi0_dot = g.psi0_dot();
    let psi0_ddot = 2.0 * g.v * g.v + g.radial * accel + g.turn_gain() * omega;
    let turn_gain_dot = 2.0 * accel * g.lateral - g.v * omega * g.radial;
    let radial_dot = 2.0 * g.v + 2.0 * omega * g.lateral;

    // psi2 = 2 v^2 + ksum psi0' + kprod psi0 + turn_gain uf1 + radial uf2 / M
    let state_part = 4.0 * g.v * accel
        + ksum * psi0_ddot
        + kprod * psi0_dot
        + turn_gain_dot * omega
        + radial_dot * accel;

    let du1 = g.turn_gain() / fp.tau;
    let du2 = g.radial / (params.mass * fp.tau);
    Psi2Rate {
        drift: state_part - du1 * uf.uf1 - du2 * uf.uf2,
        coeff_nu1: du1,
        coeff_nu2: du2,
    }
}

/// `psi2' + k3 psi2 >= 0` over `[nu1, nu2, delta]`.
#[allow(clippy::too_many_arguments)]
pub fn fcbf_row(
    state: &SystemState,
    uf: &FilteredInput,
    params: &UnicycleParams,
    fp: &FilterParams,
    k1: ClassKLinear,
    k2: ClassKLinear,
    k3: ClassKLinear,
) -> ConstraintRow {
    let chain = eval_psi_chain(state, params, k1, k2);
    let rate = psi2_rate(state, uf, params, fp, k1, k2);
    let norm = rate.coeff_nu1.hypot(rate.coeff_nu2);
    if norm < 1e-10 {
        log::debug!("filtered barrier row has vanishing command coefficients (norm {norm:e})");
    }
    ConstraintRow::ge(
        vec![rate.coeff_nu1, rate.coeff_nu2, 0.0],
        -(rate.drift + k3.apply(chain.psi2(uf))),
    )
}

/// Box limits on the applied input, per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl InputBounds {
    /// `[-5, -5 M] <= u <= [5, 5 M]`
    pub fn for_mass(mass: f64) -> Self {
        Self {
            min: [-5.0, -5.0 * mass],
            max: [5.0, 5.0 * mass],
        }
    }

    pub fn contains(&self, u: &FilteredInput, tol: f64) -> bool {
        (0..2).all(|i| u.get(i) >= self.min[i] - tol && u.get(i) <= self.max[i] + tol)
    }

    pub fn is_valid(&self) -> bool {
        (0..2).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.min[i] < self.max[i])
    }
}

/// Lower/upper filter-state rows for both channels, in the order
/// `[min ch1, max ch1, min ch2, max ch2]`.
pub fn input_bound_rows(
    uf: &FilteredInput,
    fp: &FilterParams,
    bounds: &InputBounds,
    kmin: ClassKLinear,
    kmax: ClassKLinear,
) -> [ConstraintRow; 4] {
    let inv_tau = 1.0 / fp.tau;
    let row = |channel: usize| {
        let u = uf.get(channel);
        if u < bounds.min[channel] || u > bounds.max[channel] {
            log::warn!(
                "filtered input channel {} = {u} outside [{}, {}]",
                channel + 1,
                bounds.min[channel],
                bounds.max[channel]
            );
        }
        let mut unit = vec![0.0; DECISION_DIM];
        unit[channel] = inv_tau;
        // (nu - u)/tau + kmin (u - umin) >= 0 and (nu - u)/tau <= kmax (umax - u)
        let lower = ConstraintRow::ge(unit.clone(), u * inv_tau - kmin.apply(u - bounds.min[channel]));
        let upper = ConstraintRow::le(unit, u * inv_tau + kmax.apply(bounds.max[channel] - u));
        (lower, upper)
    };
    let (l1, u1) = row(0);
    let (l2, u2) = row(1);
    [l1, u1, l2, u2]
}

/// Interval of commands `nu` admitted by the two bound rows of one channel.
pub fn bound_command_interval(
    u: f64,
    tau: f64,
    umin: f64,
    umax: f64,
    kmin: ClassKLinear,
    kmax: ClassKLinear,
) -> (f64, f64) {
    (u - tau * kmin.apply(u - umin), u + tau * kmax.apply(umax - u))
}

/// Desired heading towards the goal and its time derivative along the vehicle flow.
pub fn goal_heading(state: &SystemState, params: &UnicycleParams) -> Result<(f64, f64), ConstraintError> {
    let ex = params.goal_x - state.x;
    let ey = params.goal_y - state.y;
    let dist2 = ex * ex + ey * ey;
    if dist2 < GOAL_SINGULARITY_EPS {
        return Err(ConstraintError::GoalSingularity { dist2 });
    }
    let (s, c) = state.theta.sin_cos();
    Ok((ey.atan2(ex), state.v * (ey * c - ex * s) / dist2))
}

/// Sliding variable `10 (theta - theta_d) + uf1 + uf2` of the filtered CLF.
pub fn clf_surface(state: &SystemState, uf: &FilteredInput, params: &UnicycleParams) -> Result<f64, ConstraintError> {
    let (theta_d, _) = goal_heading(state, params)?;
    Ok(HEADING_WEIGHT * (state.theta - theta_d) + uf.uf1 + uf.uf2)
}

/// `V' + c3 V <= delta` with `V = s^2`, over `[nu1, nu2, delta]`.
pub fn clf_row_fcbf(
    state: &SystemState,
    uf: &FilteredInput,
    params: &UnicycleParams,
    fp: &FilterParams,
    c3: f64,
) -> Result<ConstraintRow, ConstraintError> {
    let (theta_d, theta_d_dot) = goal_heading(state, params)?;
    let s = HEADING_WEIGHT * (state.theta - theta_d) + uf.uf1 + uf.uf2;
    let k = 2.0 * s / fp.tau;
    // V' = 2 s [10 (uf1 - theta_d') + (nu1 - uf1)/tau + (nu2 - uf2)/tau]
    let drift = 2.0 * s * HEADING_WEIGHT * (uf.uf1 - theta_d_dot) - k * (uf.uf1 + uf.uf2);
    Ok(ConstraintRow::le(vec![k, k, -1.0], -(drift + c3 * s * s)))
}

/// `2 e (u1 - theta_d') + c3 e^2 <= delta` with `e = theta - theta_d`, over `[u1, u2, delta]`.
pub fn clf_row_hocbf(state: &SystemState, params: &UnicycleParams, c3: f64) -> Result<ConstraintRow, ConstraintError> {
    let (theta_d, theta_d_dot) = goal_heading(state, params)?;
    let e = state.theta - theta_d;
    Ok(ConstraintRow::le(vec![2.0 * e, 0.0, -1.0], 2.0 * e * theta_d_dot - c3 * e * e))
}

/// Gains of the barrier chain, the filter barrier, the bound rows and the CLF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfGains {
    pub k1: ClassKLinear,
    pub k2: ClassKLinear,
    pub k3: ClassKLinear,
    /// Shared gain of every input-bound row.
    pub alpha: ClassKLinear,
    pub c3: f64,
}

impl Default for CbfGains {
    fn default() -> Self {
        Self {
            k1: ClassKLinear(10.0),
            k2: ClassKLinear(10.0),
            k3: ClassKLinear(1.0),
            alpha: ClassKLinear(1.0),
            c3: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetCheck {
    pub name: String,
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartupReport {
    pub checks: Vec<SetCheck>,
}

impl StartupReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&SetCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SetCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Membership of the initial condition in every set whose invariance the
/// controller relies on.
pub fn startup_check(
    state0: &SystemState,
    uf0: &FilteredInput,
    params: &UnicycleParams,
    gains: &CbfGains,
    bounds: &InputBounds,
) -> StartupReport {
    let chain = eval_psi_chain(state0, params, gains.k1, gains.k2);
    let mut checks = vec![
        ("psi0", chain.psi0),
        ("psi1", chain.psi1),
        ("psi0_f", chain.psi2(uf0)),
    ];
    let names = [["psi_min_1", "psi_max_1"], ["psi_min_2", "psi_max_2"]];
    for ch in 0..2 {
        checks.push((names[ch][0], uf0.get(ch) - bounds.min[ch]));
        checks.push((names[ch][1], bounds.max[ch] - uf0.get(ch)));
    }
    StartupReport {
        checks: checks
            .into_iter()
            .map(|(name, value)| SetCheck {
                name: name.to_string(),
                value,
                pass: value >= 0.0,
            })
            .collect(),
    }
}
