//! Four-state kinematic vehicle `[px, py, theta, v]` with yaw-rate and
//! acceleration inputs, avoiding a disk obstacle at the origin.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Plant, PlantError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub k_v: f64,
    pub k_w: f64,
    pub k_a: f64,
    /// Linear drag coefficient.
    pub mu: f64,
    /// Gain on the terrain slope field `h(px, py) = (px^2 + py^2)^0.1`.
    pub s_e: f64,
    pub obstacle_radius: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub v_desired: f64,
    pub w_max: f64,
    pub a_max: f64,
    /// Time constant of the speed-dependent part of the margin.
    pub tau_m: f64,
    pub targets: Vec<[f64; 2]>,
    /// Seconds between target switches.
    pub target_period: f64,
}

impl Default for VehicleParams {
    /// Nominal model: no skid, drag or slope.
    fn default() -> Self {
        Self {
            k_v: 1.0,
            k_w: 1.0,
            k_a: 1.0,
            mu: 0.0,
            s_e: 0.0,
            obstacle_radius: 3.0,
            v_min: 1.0,
            v_max: 5.0,
            v_desired: 3.0,
            w_max: 2.0,
            a_max: 1.0,
            tau_m: 0.5,
            targets: vec![[5.0, 5.0], [5.0, -5.0], [-5.0, -5.0], [-5.0, 5.0]],
            target_period: 2.5,
        }
    }
}

impl VehicleParams {
    pub fn true_default() -> Self {
        Self {
            k_v: 2.0,
            k_w: 1.5,
            k_a: 1.0,
            mu: 0.5,
            s_e: 0.5,
            ..Self::default()
        }
    }

    /// Distance needed to turn away at full yaw rate and top speed.
    pub fn d_steer(&self) -> f64 {
        let r = self.obstacle_radius;
        r * (1.0 + 2.0 * self.v_max / (r * self.w_max)).sqrt() - r
    }

    pub fn margin(&self, v: f64) -> f64 {
        self.tau_m * (v - self.v_min) + self.d_steer()
    }

    pub fn slope(px: f64, py: f64) -> f64 {
        (px * px + py * py).powf(0.1)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.obstacle_radius > 0.0) {
            return Err("obstacle_radius must be positive".into());
        }
        if !(self.v_min < self.v_max) {
            return Err("v_min must be below v_max".into());
        }
        if !(self.w_max > 0.0 && self.a_max > 0.0 && self.tau_m >= 0.0) {
            return Err("input bounds must be positive".into());
        }
        if self.targets.is_empty() || !(self.target_period > 0.0) {
            return Err("need at least one target and a positive period".into());
        }
        Ok(())
    }

    /// Index of the active target at time `t`.
    pub fn target_index(&self, t: f64) -> usize {
        ((t / self.target_period).floor() as usize) % self.targets.len()
    }
}

/// Barrier value and analytic gradient.
pub fn vehicle_cbf(x: &DVector<f64>, p: &VehicleParams) -> Result<(f64, DVector<f64>), PlantError> {
    let (px, py, th, v) = (x[0], x[1], x[2], x[3]);
    let dm = p.margin(v);
    let (s, c) = th.sin_cos();
    let qx = px + 0.5 * dm * c;
    let qy = py + 0.5 * dm * s;
    let r = (qx * qx + qy * qy).sqrt();
    let b = r - (p.obstacle_radius + 0.5 * dm);
    if r == 0.0 {
        return Err(PlantError::SingularGradient(x.iter().copied().collect()));
    }
    let half_tau = 0.5 * p.tau_m;
    let grad = DVector::from_vec(vec![
        qx / r,
        qy / r,
        (-qx * 0.5 * dm * s + qy * 0.5 * dm * c) / r,
        (qx * half_tau * c + qy * half_tau * s) / r - half_tau,
    ]);
    Ok((b, grad))
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehiclePlant {
    pub params: VehicleParams,
}

impl VehiclePlant {
    pub fn new(params: VehicleParams) -> Self {
        Self { params }
    }
}

impl Plant for VehiclePlant {
    fn label(&self) -> &str {
        "vehicle4d"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let (px, py, th, v) = (x[0], x[1], x[2], x[3]);
        DVector::from_vec(vec![
            p.k_v * v * th.cos(),
            p.k_v * v * th.sin(),
            0.0,
            -p.mu * v + p.s_e * VehicleParams::slope(px, py),
        ])
    }

    fn actuation(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(4, 2);
        g[(2, 0)] = self.params.k_w;
        g[(3, 1)] = self.params.k_a;
        g
    }

    fn barrier(&self, x: &DVector<f64>) -> f64 {
        vehicle_cbf(x, &self.params)
            .map(|(b, _)| b)
            .unwrap_or(-self.params.obstacle_radius)
    }

    fn barrier_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        vehicle_cbf(x, &self.params)
            .map(|(_, g)| g)
            .unwrap_or_else(|_| DVector::zeros(4))
    }

    fn input_bounds(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        let p = &self.params;
        Some((
            DVector::from_vec(vec![-p.w_max, -p.a_max]),
            DVector::from_vec(vec![p.w_max, p.a_max]),
        ))
    }
}

/// Target-pursuit reference: proportional heading and speed loops, clipped
/// to the input box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleReference {
    pub k_theta: f64,
    pub k_speed: f64,
}

impl Default for VehicleReference {
    fn default() -> Self {
        Self {
            k_theta: 2.0,
            k_speed: 1.0,
        }
    }
}

impl VehicleReference {
    pub fn control(&self, x: &DVector<f64>, t: f64, p: &VehicleParams) -> DVector<f64> {
        let target = p.targets[p.target_index(t)];
        let heading = (target[1] - x[1]).atan2(target[0] - x[0]);
        let w = self.k_theta * wrap_angle(heading - x[2]);
        let a = self.k_speed * (p.v_desired - x[3]);
        DVector::from_vec(vec![w.clamp(-p.w_max, p.w_max), a.clamp(-p.a_max, p.a_max)])
    }
}
