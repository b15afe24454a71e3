//! Unicycle dynamics, the first-order input regularization filter and the
//! augmented system obtained by feeding the filter output into the vehicle.
//!
//! The vehicle state is `(x, y, theta, v)` and is driven by an angular
//! velocity and a longitudinal force:
//!
//! ```text
//!   x'     = v cos(theta)
//!   y'     = v sin(theta)
//!   theta' = u1
//!   v'     = u2 / M
//! ```
//!
//! The filter `uf' = (nu - uf) / tau` turns an unconstrained auxiliary command
//! `nu` into the filtered input `uf` that is actually applied to the vehicle.

use nalgebra::{SVector, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default vehicle mass in kilograms.
pub const DEFAULT_MASS: f64 = 1650.0;

pub type StateDeriv = Vector4<f64>;
pub type AugmentedVector = SVector<f64, 6>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("filter order {0} is not supported (only first-order filters are implemented)")]
    UnsupportedFilterOrder(u32),
}

/// Planar unicycle state. `theta` is never wrapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl SystemState {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Self {
        Self { x, y, theta, v }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.theta, self.v)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }
}

/// Input applied to the vehicle: angular velocity (rad/s) and driving force (N).
///
/// In the filtered controller this is the filter state `uf`; in the plain
/// HOCBF benchmarks it is the QP decision itself.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FilteredInput {
    pub uf1: f64,
    pub uf2: f64,
}

impl FilteredInput {
    pub fn new(uf1: f64, uf2: f64) -> Self {
        Self { uf1, uf2 }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.uf1, self.uf2)
    }

    pub fn get(&self, channel: usize) -> f64 {
        match channel {
            0 => self.uf1,
            1 => self.uf2,
            _ => panic!("input channel {channel} out of range"),
        }
    }
}

/// Auxiliary filter command `nu`; unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AuxInput {
    pub nu1: f64,
    pub nu2: f64,
}

impl AuxInput {
    pub fn new(nu1: f64, nu2: f64) -> Self {
        Self { nu1, nu2 }
    }

    pub fn get(&self, channel: usize) -> f64 {
        match channel {
            0 => self.nu1,
            1 => self.nu2,
            _ => panic!("input channel {channel} out of range"),
        }
    }
}

/// Vehicle mass plus the obstacle and goal of the navigation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicycleParams {
    pub mass: f64,
    pub obstacle_x: f64,
    pub obstacle_y: f64,
    pub obstacle_r: f64,
    pub goal_x: f64,
    pub goal_y: f64,
    pub goal_tol: f64,
}

impl Default for UnicycleParams {
    fn default() -> Self {
        Self {
            mass: DEFAULT_MASS,
            obstacle_x: 0.0,
            obstacle_y: 0.0,
            obstacle_r: 1.0,
            goal_x: 1.5,
            goal_y: 0.0,
            goal_tol: 0.1,
        }
    }
}

impl UnicycleParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        positive("mass_M", self.mass)?;
        positive("obstacle_r", self.obstacle_r)?;
        positive("goal_tol_rd", self.goal_tol)?;
        for (name, value) in [
            ("obstacle_x", self.obstacle_x),
            ("obstacle_y", self.obstacle_y),
            ("goal_x", self.goal_x),
            ("goal_y", self.goal_y),
        ] {
            if !value.is_finite() {
                return Err(ModelError::InvalidParameter {
                    name,
                    reason: format!("must be finite, got {value}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Time constant in seconds.
    pub tau: f64,
    /// Relative degree of the filter chain. Only 1 is supported.
    pub order: u32,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { tau: 2e-3, order: 1 }
    }
}

impl FilterParams {
    pub fn first_order(tau: f64) -> Self {
        Self { tau, order: 1 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        positive("tau", self.tau)?;
        match self.order {
            0 => Err(ModelError::InvalidParameter {
                name: "order_ma",
                reason: "must be at least 1".into(),
            }),
            1 => Ok(()),
            n => Err(ModelError::UnsupportedFilterOrder(n)),
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {value}"),
        })
    }
}

/// Vehicle vector field with the input held fixed.
pub fn unicycle_deriv(state: &SystemState, input: &FilteredInput, params: &UnicycleParams) -> StateDeriv {
    let (s, c) = state.theta.sin_cos();
    Vector4::new(state.v * c, state.v * s, input.uf1, input.uf2 / params.mass)
}

/// Rate of the first-order filter, `(nu - uf) / tau` per channel.
pub fn filter_deriv(uf: &FilteredInput, nu: &AuxInput, fp: &FilterParams) -> Vector2<f64> {
    Vector2::new((nu.nu1 - uf.uf1) / fp.tau, (nu.nu2 - uf.uf2) / fp.tau)
}

/// Six-state vector field `(x, y, theta, v, uf1, uf2)` of the vehicle driven by the filter.
pub fn augmented_deriv(
    state: &SystemState,
    uf: &FilteredInput,
    nu: &AuxInput,
    params: &UnicycleParams,
    fp: &FilterParams,
) -> AugmentedVector {
    let plant = unicycle_deriv(state, uf, params);
    let filter = filter_deriv(uf, nu, fp);
    AugmentedVector::from_column_slice(&[plant[0], plant[1], plant[2], plant[3], filter[0], filter[1]])
}

/// Packs the augmented state into a flat vector.
pub fn pack_augmented(state: &SystemState, uf: &FilteredInput) -> AugmentedVector {
    AugmentedVector::from_column_slice(&[state.x, state.y, state.theta, state.v, uf.uf1, uf.uf2])
}

pub fn unpack_augmented(z: &AugmentedVector) -> (SystemState, FilteredInput) {
    (SystemState::new(z[0], z[1], z[2], z[3]), FilteredInput::new(z[4], z[5]))
}
