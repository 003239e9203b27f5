//! Fixed-step RK4 under a zero-order-hold input.

use nalgebra::DVector;

use super::{Plant, PlantError};

/// One classical Runge-Kutta step of `x' = rhs(x)`.
pub fn rk4_step(rhs: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, dt: f64) -> DVector<f64> {
    let k1 = rhs(x);
    let k2 = rhs(&(x + &k1 * (0.5 * dt)));
    let k3 = rhs(&(x + &k2 * (0.5 * dt)));
    let k4 = rhs(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

pub fn integrate_step(pl: &dyn Plant, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<DVector<f64>, PlantError> {
    let next = rk4_step(|y| pl.dynamics(y, u), x, dt);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(PlantError::NonFinite {
            t: f64::NAN,
            state: x.iter().copied().collect(),
        });
    }
    Ok(next)
}

/// Hold `u` for `dt_hold`, sub-stepping with `dt_sim`.
pub fn integrate_hold(
    pl: &dyn Plant,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt_hold: f64,
    dt_sim: f64,
    t: f64,
) -> Result<DVector<f64>, PlantError> {
    let steps = (dt_hold / dt_sim).round().max(1.0) as usize;
    let h = dt_hold / steps as f64;
    let mut y = x.clone();
    for _ in 0..steps {
        y = integrate_step(pl, &y, u, h).map_err(|e| match e {
            PlantError::NonFinite { state, .. } => PlantError::NonFinite { t, state },
            other => other,
        })?;
    }
    Ok(y)
}
