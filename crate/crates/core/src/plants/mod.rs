//! Control-affine plants with an analytic barrier, plus the mismatch
//! measurements the learner consumes.

pub mod acc;
pub mod integrate;
pub mod vehicle;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

pub use acc::{AccParams, AccPlant};
pub use integrate::{integrate_hold, integrate_step, rk4_step};
pub use vehicle::{vehicle_cbf, VehicleParams, VehiclePlant, VehicleReference};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("plants disagree: {0}")]
    Mismatch(String),
    #[error("non-finite state {state:?} at t = {t}")]
    NonFinite { t: f64, state: Vec<f64> },
    #[error("barrier gradient is singular at {0:?}")]
    SingularGradient(Vec<f64>),
}

/// `x' = f(x) + g(x) u` with a barrier `B` and optionally a Lyapunov function `V`.
pub trait Plant: Send + Sync + std::fmt::Debug {
    fn label(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn actuation(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn barrier(&self, x: &DVector<f64>) -> f64;
    fn barrier_grad(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `(V(x), grad V(x))` when the plant carries a CLF.
    fn clf(&self, _x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        None
    }

    /// Box `(lower, upper)` on the input, if any.
    fn input_bounds(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        None
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(x) + self.actuation(x) * u
    }
}

/// `(L_f B(x), L_g B(x))`.
pub fn lie_derivatives(pl: &dyn Plant, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let grad = pl.barrier_grad(x);
    let lf = grad.dot(&pl.drift(x));
    let lg = pl.actuation(x).transpose() * grad;
    (lf, lg)
}

/// `(L_f V(x), L_g V(x))` for plants with a CLF.
pub fn clf_lie_derivatives(pl: &dyn Plant, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
    let (_, grad) = pl.clf(x)?;
    let lf = grad.dot(&pl.drift(x));
    let lg = pl.actuation(x).transpose() * grad;
    Some((lf, lg))
}

fn check_pair(true_pl: &dyn Plant, nominal: &dyn Plant, x: &DVector<f64>) -> Result<(), PlantError> {
    if true_pl.state_dim() != nominal.state_dim() || true_pl.input_dim() != nominal.input_dim() {
        return Err(PlantError::Mismatch("state or input dimension".into()));
    }
    let (bt, bn) = (true_pl.barrier(x), nominal.barrier(x));
    if (bt - bn).abs() > 1e-12 * bt.abs().max(1.0) {
        return Err(PlantError::Mismatch(format!("barrier values {bt} vs {bn}")));
    }
    Ok(())
}

/// Barrier mismatch `(L_f B - L_f~ B)(x) + (L_g B - L_g~ B)(x) u`.
pub fn delta_b(
    true_pl: &dyn Plant,
    nominal: &dyn Plant,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64, PlantError> {
    check_pair(true_pl, nominal, x)?;
    let (lf, lg) = lie_derivatives(true_pl, x);
    let (lfn, lgn) = lie_derivatives(nominal, x);
    Ok((lf - lfn) + (lg - lgn).dot(u))
}

/// Lyapunov mismatch, the CLF analogue of [`delta_b`].
pub fn delta_v(
    true_pl: &dyn Plant,
    nominal: &dyn Plant,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64, PlantError> {
    check_pair(true_pl, nominal, x)?;
    let (lf, lg) =
        clf_lie_derivatives(true_pl, x).ok_or_else(|| PlantError::Mismatch("true plant has no CLF".into()))?;
    let (lfn, lgn) =
        clf_lie_derivatives(nominal, x).ok_or_else(|| PlantError::Mismatch("nominal plant has no CLF".into()))?;
    Ok((lf - lfn) + (lg - lgn).dot(u))
}

/// Uniform noise on `[-sigma, sigma]`.
pub fn uniform_noise<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        rng.random_range(-sigma..=sigma)
    } else {
        0.0
    }
}

/// Noisy mismatch measurement `Delta_B(x, u) + eps`, `eps ~ U[-sigma_n, sigma_n]`.
pub fn measure<R: Rng + ?Sized>(
    true_pl: &dyn Plant,
    nominal: &dyn Plant,
    x: &DVector<f64>,
    u: &DVector<f64>,
    rng: &mut R,
    sigma_n: f64,
) -> Result<f64, PlantError> {
    Ok(delta_b(true_pl, nominal, x, u)? + uniform_noise(rng, sigma_n))
}
