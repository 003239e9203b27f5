//! Adaptive cruise control: ego speed `v`, gap `z` to a lead car at constant
//! speed, wheel force `u`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Plant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AccParams {
    /// Vehicle mass in kg.
    pub mass: f64,
    /// Rolling resistance `F_r(v) = f0 + f1 v + f2 v^2`.
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
    /// Lead car speed.
    pub v0: f64,
    /// Cruise speed targeted by the CLF.
    pub vd: f64,
    /// Time headway in `B = z - headway * v`.
    pub headway: f64,
}

impl Default for AccParams {
    fn default() -> Self {
        Self {
            mass: 1650.0,
            f0: 0.1,
            f1: 5.0,
            f2: 0.25,
            v0: 14.0,
            vd: 24.0,
            headway: 1.8,
        }
    }
}

impl AccParams {
    /// Scale the mass and all rolling coefficients.
    pub fn perturbed(&self, mass_factor: f64, rolling_factor: f64) -> Self {
        Self {
            mass: self.mass * mass_factor,
            f0: self.f0 * rolling_factor,
            f1: self.f1 * rolling_factor,
            f2: self.f2 * rolling_factor,
            ..self.clone()
        }
    }

    pub fn rolling(&self, v: f64) -> f64 {
        self.f0 + self.f1 * v + self.f2 * v * v
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0) {
            return Err("acc mass must be positive".into());
        }
        if !(self.v0 > 0.0 && self.vd > 0.0) {
            return Err("acc speeds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccPlant {
    pub params: AccParams,
}

impl AccPlant {
    pub fn new(params: AccParams) -> Self {
        Self { params }
    }
}

impl Plant for AccPlant {
    fn label(&self) -> &str {
        "acc"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        DVector::from_vec(vec![-p.rolling(x[0]) / p.mass, p.v0 - x[0]])
    }

    fn actuation(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[1.0 / self.params.mass, 0.0])
    }

    fn barrier(&self, x: &DVector<f64>) -> f64 {
        x[1] - self.params.headway * x[0]
    }

    fn barrier_grad(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![-self.params.headway, 1.0])
    }

    fn clf(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let e = x[0] - self.params.vd;
        Some((e * e, DVector::from_vec(vec![2.0 * e, 0.0])))
    }
}
