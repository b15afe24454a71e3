//! Adaptive Dormand-Prince 5(4) integration of a fixed-size ODE.

use nalgebra::SVector;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("step size {h:e} s fell below the minimum at t = {t}")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid interval [{t0}, {t1}]")]
    BadInterval { t0: f64, t1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            min_step: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;

// fifth-order weights (also the last stage row, FSAL)
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Integrates `y' = deriv(t, y)` from `t0` to `t1` and returns `y(t1)`.
pub fn integrate<const N: usize, F>(
    mut deriv: F,
    initial: SVector<f64, N>,
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
) -> Result<SVector<f64, N>, IntegrateError>
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(IntegrateError::BadInterval { t0, t1 });
    }
    let mut t = t0;
    let mut y = initial;
    let mut k1 = deriv(t, &y);
    let mut h = initial_step(&mut deriv, t0, &y, &k1, t1 - t0, opts);
    let mut steps = 0;

    while t < t1 {
        if steps >= opts.max_steps {
            return Err(IntegrateError::StepSizeUnderflow { t, h });
        }
        steps += 1;
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        if h < opts.min_step && !last {
            return Err(IntegrateError::StepSizeUnderflow { t, h });
        }

        let k2 = deriv(t + C2 * h, &(y + k1 * (h * A21)));
        let k3 = deriv(t + C3 * h, &(y + (k1 * A31 + k2 * A32) * h));
        let k4 = deriv(t + C4 * h, &(y + (k1 * A41 + k2 * A42 + k3 * A43) * h));
        let k5 = deriv(t + C5 * h, &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h));
        let k6 = deriv(t + h, &(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h));
        let y_new = y + (k1 * B1 + k3 * B3 + k4 * B4 + k5 * B5 + k6 * B6) * h;
        let k7 = deriv(t + h, &y_new);
        let err_vec = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;

        let mut acc = 0.0;
        for i in 0..N {
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            let r = err_vec[i] / sc;
            acc += r * r;
        }
        let err = (acc / N as f64).sqrt();
        if !err.is_finite() {
            h *= MIN_FACTOR;
            if h < opts.min_step {
                return Err(IntegrateError::NonFinite { t });
            }
            continue;
        }

        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            y = y_new;
            k1 = k7;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(IntegrateError::NonFinite { t });
            }
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            h *= factor;
        } else {
            h *= (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0);
            if h < opts.min_step {
                return Err(IntegrateError::StepSizeUnderflow { t, h });
            }
        }
    }
    Ok(y)
}

/// Starting step from the usual derivative-scale heuristic.
fn initial_step<const N: usize, F>(
    deriv: &mut F,
    t0: f64,
    y0: &SVector<f64, N>,
    f0: &SVector<f64, N>,
    span: f64,
    opts: &IntegratorOptions,
) -> f64
where
    F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let scale = y0.map(|v| opts.atol + opts.rtol * v.abs());
    let d0 = rms(&y0.component_div(&scale));
    let d1 = rms(&f0.component_div(&scale));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = y0 + f0 * h0;
    let f1 = deriv(t0 + h0, &y1);
    let d2 = rms(&(f1 - f0).component_div(&scale)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

fn rms<const N: usize>(v: &SVector<f64, N>) -> f64 {
    (v.norm_squared() / N as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector1, Vector2};

    #[test]
    fn exponential_decay() {
        let y = integrate(|_, y: &Vector1<f64>| -y, Vector1::new(1.0), 0.0, 1.0, &IntegratorOptions::default()).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() <= 1e-8, "{}", y[0] - (-1.0f64).exp());
    }

    #[test]
    fn first_order_lag() {
        let tau = 2e-3;
        let nu = 1.0;
        for t1 in [tau, 0.1] {
            let y = integrate(|_, y: &Vector1<f64>| Vector1::new((nu - y[0]) / tau), Vector1::new(0.0), 0.0, t1, &IntegratorOptions::default())
                .unwrap();
            let exact = nu * (1.0 - (-t1 / tau).exp());
            assert!((y[0] - exact).abs() <= 1e-8, "t1={t1}: {}", y[0] - exact);
        }
    }

    #[test]
    fn harmonic_oscillator_conserves_phase() {
        let y = integrate(
            |_, y: &Vector2<f64>| Vector2::new(y[1], -y[0]),
            Vector2::new(1.0, 0.0),
            0.0,
            2.0 * std::f64::consts::PI,
            &IntegratorOptions::default(),
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-7 && y[1].abs() < 1e-7);
    }

    #[test]
    fn time_dependent_rhs() {
        // y' = cos t, y(0) = 0 -> sin t
        let y = integrate(|t, _: &Vector1<f64>| Vector1::new(t.cos()), Vector1::new(0.0), 0.0, 3.0, &IntegratorOptions::default()).unwrap();
        assert!((y[0] - 3.0f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn underflow_reported() {
        // finite-time blow-up at t = 1
        let r = integrate(|_, y: &Vector1<f64>| Vector1::new(y[0] * y[0]), Vector1::new(1.0), 0.0, 2.0, &IntegratorOptions::default());
        assert!(r.is_err());
    }

    #[test]
    fn rejects_empty_interval() {
        let r = integrate(|_, y: &Vector1<f64>| *y, Vector1::new(1.0), 1.0, 1.0, &IntegratorOptions::default());
        assert!(matches!(r, Err(IntegrateError::BadInterval { .. })));
    }
}
