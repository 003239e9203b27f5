//! Closed-form pointwise feasibility of the GP chance constraint
//!
//! `beta * || S_g u + s_f || <= lg . u + a`,
//!
//! where `S = [s_f | S_g]` is the symmetric square root of the posterior
//! covariance, `lg` the estimated input Lie derivative and
//! `a = lf + gamma(B)`. The sign of the smallest eigenvalue of the tradeoff
//! matrix `F = beta^2 S_g^T S_g - lg lg^T` decides whether the feasible set is
//! unbounded along a direction (hyperbolic), bounded (elliptic) or a
//! paraboloid-like limit in between (parabolic).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{augment, PredictionBundle};
use crate::linalg::{self, LinalgError};

/// Half-width of the parabolic band around `lambda_dagger = 0`.
pub const TOL_EIG: f64 = 1e-9;
/// Condition number above which matrices are treated as ill-conditioned.
pub const COND_LIMIT: f64 = 1e12;
/// Tikhonov shift for near-singular elliptic solves.
pub const TIKHONOV: f64 = 1e-12;
/// Eigenvalue threshold used for the "H is not positive definite" check.
pub const H_EIG_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeasibilityError {
    #[error("constraint data: {0}")]
    Invalid(String),
    #[error("backup input needs lambda_dagger < -{TOL_EIG:e}, got {0:e}")]
    NotHyperbolic(f64),
    #[error("backup direction is orthogonal to the input Lie derivative")]
    DegenerateDirection,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Everything the chance constraint at one state depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintData {
    pub lf_hat: f64,
    pub lg_hat: DVector<f64>,
    pub sigma_lf_half: DVector<f64>,
    pub sigma_lg_half: DMatrix<f64>,
    pub sigma_b: DMatrix<f64>,
    /// `gamma(B(x))`.
    pub gamma_b: f64,
    pub beta: f64,
}

impl ConstraintData {
    pub fn from_bundle(bundle: &PredictionBundle, gamma_b: f64, beta: f64) -> Self {
        Self {
            lf_hat: bundle.lf_hat,
            lg_hat: bundle.lg_hat.clone(),
            sigma_lf_half: bundle.sigma_lf_half.clone(),
            sigma_lg_half: bundle.sigma_lg_half.clone(),
            sigma_b: bundle.cov.clone(),
            gamma_b,
            beta,
        }
    }

    /// Build from a mean vector `psi = [a, lg]` split and a covariance; the
    /// square-root blocks are derived.
    pub fn from_moments(
        lf_hat: f64,
        lg_hat: DVector<f64>,
        sigma_b: DMatrix<f64>,
        gamma_b: f64,
        beta: f64,
    ) -> Result<Self, FeasibilityError> {
        let m = lg_hat.len();
        if sigma_b.nrows() != m + 1 || sigma_b.ncols() != m + 1 {
            return Err(FeasibilityError::Invalid(format!("covariance must be {0}x{0}", m + 1)));
        }
        let s = linalg::sqrt_psd(&sigma_b)?;
        Ok(Self {
            lf_hat,
            lg_hat,
            sigma_lf_half: s.column(0).into_owned(),
            sigma_lg_half: s.columns(1, m).into_owned(),
            sigma_b,
            gamma_b,
            beta,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.lg_hat.len()
    }

    /// `a = lf_hat + gamma(B)`.
    pub fn offset(&self) -> f64 {
        self.lf_hat + self.gamma_b
    }

    /// `psi = [a, lg_hat]`.
    pub fn psi(&self) -> DVector<f64> {
        let mut psi = augment(&self.lg_hat);
        psi[0] = self.offset();
        psi
    }

    pub fn sigma_lg(&self) -> DMatrix<f64> {
        self.sigma_lg_half.transpose() * &self.sigma_lg_half
    }

    pub fn validate(&self) -> Result<(), FeasibilityError> {
        let m = self.input_dim();
        if m == 0 {
            return Err(FeasibilityError::Invalid("empty input dimension".into()));
        }
        if self.sigma_lf_half.len() != m + 1
            || self.sigma_lg_half.nrows() != m + 1
            || self.sigma_lg_half.ncols() != m
            || self.sigma_b.nrows() != m + 1
            || self.sigma_b.ncols() != m + 1
        {
            return Err(FeasibilityError::Invalid("block dimensions disagree".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(FeasibilityError::Invalid(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        let finite = self.lf_hat.is_finite()
            && self.gamma_b.is_finite()
            && self.lg_hat.iter().all(|v| v.is_finite())
            && self.sigma_lf_half.iter().all(|v| v.is_finite())
            && self.sigma_lg_half.iter().all(|v| v.is_finite())
            && self.sigma_b.iter().all(|v| v.is_finite());
        if !finite {
            return Err(FeasibilityError::Invalid("non-finite entry".into()));
        }
        Ok(())
    }

    /// Constraint margin `lg . u + a - beta ||S_g u + s_f||`; feasible iff `>= 0`.
    pub fn margin(&self, u: &DVector<f64>) -> f64 {
        let r = &self.sigma_lg_half * u + &self.sigma_lf_half;
        self.lg_hat.dot(u) + self.offset() - self.beta * r.norm()
    }

    pub fn to_document(&self) -> ConstraintDocument {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
        ConstraintDocument {
            lf_hat: self.lf_hat,
            lg_hat: self.lg_hat.iter().copied().collect(),
            sigma_lf_half: self.sigma_lf_half.iter().copied().collect(),
            sigma_lg_half: rows(&self.sigma_lg_half),
            sigma_b: Some(rows(&self.sigma_b)),
            gamma_b: self.gamma_b,
            beta: self.beta,
        }
    }

    pub fn from_document(doc: &ConstraintDocument) -> Result<Self, FeasibilityError> {
        let m = doc.lg_hat.len();
        let matrix = |rows: &[Vec<f64>], ncols: usize, what: &str| {
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(FeasibilityError::Invalid(format!("{what}: ragged rows")));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
        };
        let lg_half = matrix(&doc.sigma_lg_half, m, "sigma_lg_half")?;
        let lf_half = DVector::from_vec(doc.sigma_lf_half.clone());
        let sigma_b = match &doc.sigma_b {
            Some(rows) => matrix(rows, m + 1, "sigma_b")?,
            None => {
                if lf_half.len() != m + 1 || lg_half.nrows() != m + 1 {
                    return Err(FeasibilityError::Invalid("block dimensions disagree".into()));
                }
                let mut s = DMatrix::zeros(m + 1, m + 1);
                s.set_column(0, &lf_half);
                s.columns_mut(1, m).copy_from(&lg_half);
                s.transpose() * s
            }
        };
        let cd = Self {
            lf_hat: doc.lf_hat,
            lg_hat: DVector::from_vec(doc.lg_hat.clone()),
            sigma_lf_half: lf_half,
            sigma_lg_half: lg_half,
            sigma_b,
            gamma_b: doc.gamma_b,
            beta: doc.beta,
        };
        cd.validate()?;
        Ok(cd)
    }
}

/// JSON layout of [`ConstraintData`]; matrices are lists of rows and
/// `sigma_b` may be omitted, in which case it is rebuilt from the halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintDocument {
    pub lf_hat: f64,
    pub lg_hat: Vec<f64>,
    pub sigma_lf_half: Vec<f64>,
    pub sigma_lg_half: Vec<Vec<f64>>,
    #[serde(default)]
    pub sigma_b: Option<Vec<Vec<f64>>>,
    pub gamma_b: f64,
    pub beta: f64,
}

/// `F = beta^2 Sigma_LgB - lg^T lg`.
pub fn tradeoff_matrix(cd: &ConstraintData) -> DMatrix<f64> {
    let f = cd.sigma_lg() * (cd.beta * cd.beta) - &cd.lg_hat * cd.lg_hat.transpose();
    linalg::symmetrize(&f)
}

/// Minimum eigenvalue of `F` with a unit eigenvector (sign unspecified).
pub fn lambda_dagger(f: &DMatrix<f64>) -> Result<(f64, DVector<f64>), FeasibilityError> {
    Ok(linalg::min_eigenpair(f)?)
}

/// `lambda_dagger` with `e_dagger` oriented so that `lg . e_dagger >= 0`.
pub fn oriented_lambda_dagger(cd: &ConstraintData) -> Result<(f64, DVector<f64>), FeasibilityError> {
    let (lam, mut e) = lambda_dagger(&tradeoff_matrix(cd))?;
    if cd.lg_hat.dot(&e) < 0.0 {
        e.neg_mut();
    }
    Ok((lam, e))
}

/// Result of the `psi Sigma_B^{-1} psi^T >= beta^2` test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NecessaryCheck {
    pub holds: bool,
    /// `psi Sigma_B^{-1} psi^T`.
    pub value: f64,
    pub condition: f64,
    pub ill_conditioned: bool,
}

pub fn necessary_condition(cd: &ConstraintData) -> Result<NecessaryCheck, FeasibilityError> {
    let psi = cd.psi();
    let eig = SymmetricEigen::new(linalg::symmetrize(&cd.sigma_b));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let floor = max * f64::EPSILON;
    let proj = eig.eigenvectors.transpose() * &psi;
    let value: f64 = proj
        .iter()
        .zip(eig.eigenvalues.iter())
        .map(|(p, l)| p * p / l.max(floor))
        .sum();
    Ok(NecessaryCheck {
        holds: value >= cd.beta * cd.beta,
        value,
        condition,
        ill_conditioned: condition > COND_LIMIT,
    })
}

/// Quadratic form whose sublevel set, together with a half-space, is the
/// feasible set: `[1, u] H [1, u]^T <= 0` and `a + lg . u >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    pub h11: f64,
    pub h1u: DVector<f64>,
    pub huu: DMatrix<f64>,
    pub full: DMatrix<f64>,
}

impl HMatrix {
    /// `[1, u] H [1, u]^T`.
    pub fn quadratic(&self, u: &DVector<f64>) -> f64 {
        self.h11 + 2.0 * self.h1u.dot(u) + (u.transpose() * &self.huu * u)[(0, 0)]
    }

    /// Whether `H` has an eigenvalue `<= H_EIG_TOL`.
    pub fn has_nonpositive_eigenvalue(&self) -> Result<bool, FeasibilityError> {
        let vals = linalg::eigenvalues_sorted(&self.full)?;
        Ok(vals[0] <= H_EIG_TOL)
    }
}

/// Linear side condition `a + lg . u`.
pub fn linear_part(cd: &ConstraintData, u: &DVector<f64>) -> f64 {
    cd.offset() + cd.lg_hat.dot(u)
}

pub fn h_matrix(cd: &ConstraintData) -> HMatrix {
    let b2 = cd.beta * cd.beta;
    let a = cd.offset();
    let h11 = b2 * cd.sigma_lf_half.norm_squared() - a * a;
    let h1u = cd.sigma_lg_half.transpose() * &cd.sigma_lf_half * b2 - &cd.lg_hat * a;
    let huu = tradeoff_matrix(cd);
    let m = cd.input_dim();
    let mut full = DMatrix::zeros(m + 1, m + 1);
    full[(0, 0)] = h11;
    for i in 0..m {
        full[(0, i + 1)] = h1u[i];
        full[(i + 1, 0)] = h1u[i];
    }
    full.view_mut((1, 1), (m, m)).copy_from(&huu);
    HMatrix { h11, h1u, huu, full }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Hyperbolic,
    Elliptic,
    Parabolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Hyperbolic,
    Elliptic,
    Parabolic,
    Infeasible,
}

impl Case {
    pub fn as_str(&self) -> &'static str {
        match self {
            Case::Hyperbolic => "hyperbolic",
            Case::Elliptic => "elliptic",
            Case::Parabolic => "parabolic",
            Case::Infeasible => "infeasible",
        }
    }
}

/// Scale of the backup input relative to the smallest admissible one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaPolicy {
    /// Multiplier on the minimal step, `> 1` keeps the witness interior.
    pub margin: f64,
    /// Lower bound on the step length, so the backup input excites the
    /// input channels even when `u = 0` is already admissible.
    #[serde(default)]
    pub floor: f64,
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        Self {
            margin: 1.5,
            floor: 0.0,
        }
    }
}

impl AlphaPolicy {
    pub fn alpha(&self, alpha_min: f64) -> f64 {
        (self.margin * alpha_min).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub lambda_dagger: f64,
    pub e_dagger: DVector<f64>,
    pub geometry: Geometry,
    pub feasible: bool,
    pub witness: Option<DVector<f64>>,
    pub necessary_ok: bool,
    pub necessary: NecessaryCheck,
    /// Elliptic center obtained from a Tikhonov-regularized solve.
    pub regularized: bool,
}

impl FeasibilityReport {
    pub fn case(&self) -> Case {
        if !self.feasible {
            return Case::Infeasible;
        }
        match self.geometry {
            Geometry::Hyperbolic => Case::Hyperbolic,
            Geometry::Elliptic => Case::Elliptic,
            Geometry::Parabolic => Case::Parabolic,
        }
    }
}

/// Smallest `alpha >= 0` beyond which `u = alpha e_dagger` satisfies both the
/// quadratic and the linear condition.
pub fn min_alpha(cd: &ConstraintData) -> Result<f64, FeasibilityError> {
    let (lam, e) = oriented_lambda_dagger(cd)?;
    min_alpha_along(cd, lam, &e)
}

fn min_alpha_along(cd: &ConstraintData, lam: f64, e: &DVector<f64>) -> Result<f64, FeasibilityError> {
    if lam >= -TOL_EIG {
        return Err(FeasibilityError::NotHyperbolic(lam));
    }
    let slope = cd.lg_hat.dot(e);
    if slope <= 0.0 {
        return Err(FeasibilityError::DegenerateDirection);
    }
    let h = h_matrix(cd);
    // lam a^2 + 2 he a + h11 <= 0 beyond the larger root
    let he = h.h1u.dot(e);
    let disc = he * he - lam * h.h11;
    let quad_root = if disc < 0.0 { 0.0 } else { (-he - disc.sqrt()) / lam };
    let lin_root = -cd.offset() / slope;
    Ok(quad_root.max(lin_root).max(0.0))
}

/// Backup input `alpha * e_dagger` with `alpha` from the policy.
pub fn u_safe(cd: &ConstraintData, policy: &AlphaPolicy) -> Result<DVector<f64>, FeasibilityError> {
    let (lam, e) = oriented_lambda_dagger(cd)?;
    let a_min = min_alpha_along(cd, lam, &e)?;
    Ok(e * policy.alpha(a_min))
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    m.clone().lu().solve(rhs)
}

/// Decide feasibility of the chance constraint and produce a witness input.
pub fn classify(cd: &ConstraintData) -> Result<FeasibilityReport, FeasibilityError> {
    classify_with(cd, &AlphaPolicy::default())
}

pub fn classify_with(cd: &ConstraintData, policy: &AlphaPolicy) -> Result<FeasibilityReport, FeasibilityError> {
    cd.validate()?;
    let f = tradeoff_matrix(cd);
    let (lam, mut e) = lambda_dagger(&f)?;
    if cd.lg_hat.dot(&e) < 0.0 {
        e.neg_mut();
    }
    let necessary = necessary_condition(cd)?;
    let mut report = FeasibilityReport {
        lambda_dagger: lam,
        e_dagger: e.clone(),
        geometry: Geometry::Parabolic,
        feasible: false,
        witness: None,
        necessary_ok: necessary.holds,
        necessary,
        regularized: false,
    };

    if lam < -TOL_EIG {
        report.geometry = Geometry::Hyperbolic;
        let a_min = min_alpha_along(cd, lam, &e)?;
        report.feasible = true;
        report.witness = Some(&e * policy.margin.max(1.0) * a_min);
        return Ok(report);
    }

    let h = h_matrix(cd);
    if lam > TOL_EIG {
        report.geometry = Geometry::Elliptic;
        let eig = linalg::eigenvalues_sorted(&f)?;
        let cond = eig[eig.len() - 1] / eig[0];
        let rhs = -&h.h1u;
        let u1 = if cond > COND_LIMIT {
            report.regularized = true;
            let m = cd.input_dim();
            solve_spd(&(&f + DMatrix::identity(m, m) * TIKHONOV), &rhs)
        } else {
            solve_spd(&f, &rhs)
        };
        let Some(u1) = u1 else {
            return Ok(report);
        };
        report.feasible = necessary.holds && linear_part(cd, &u1) >= 0.0;
        if report.feasible {
            report.witness = Some(u1);
        }
        return Ok(report);
    }

    // parabolic band
    let sigma_lg = cd.sigma_lg();
    let rhs = -(cd.sigma_lg_half.transpose() * &cd.sigma_lf_half);
    let Some(u0) = solve_spd(&sigma_lg, &rhs) else {
        return Ok(report);
    };
    let p = linear_part(cd, &u0);
    if p <= 0.0 {
        return Ok(report);
    }
    report.feasible = true;
    let mut alpha = 1.0;
    for _ in 0..200 {
        let u = &u0 + &e * alpha;
        if cd.margin(&u) >= 0.0 {
            report.witness = Some(u);
            return Ok(report);
        }
        alpha *= 2.0;
    }
    // no witness along the ray within range; treat as not verifiably feasible
    report.feasible = false;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(lf: f64, lg: f64, sigma_b: [f64; 4], beta: f64) -> ConstraintData {
        ConstraintData::from_moments(
            lf,
            DVector::from_vec(vec![lg]),
            DMatrix::from_row_slice(2, 2, &sigma_b),
            0.0,
            beta,
        )
        .unwrap()
    }

    #[test]
    fn scalar_tradeoff() {
        let cd = scalar(0.0, 2.0, [1.0, 0.0, 0.0, 1.0], 1.0);
        let f = tradeoff_matrix(&cd);
        assert_relative_eq!(f[(0, 0)], -3.0, epsilon = 1e-12);
        let (lam, e) = lambda_dagger(&f).unwrap();
        assert_relative_eq!(lam, -3.0, epsilon = 1e-12);
        assert_relative_eq!(e[0].abs(), 1.0);
    }

    #[test]
    fn zero_lg_gives_scaled_covariance() {
        let cd = scalar(1.0, 0.0, [1.0, 0.2, 0.2, 0.5], 2.0);
        let f = tradeoff_matrix(&cd);
        assert_relative_eq!(f[(0, 0)], 4.0 * cd.sigma_b[(1, 1)], epsilon = 1e-12);
    }

    #[test]
    fn necessary_boundary_and_zero_psi() {
        let cd = scalar(3.0, 4.0, [1.0, 0.0, 0.0, 1.0], 5.0);
        let n = necessary_condition(&cd).unwrap();
        assert_relative_eq!(n.value, 25.0, epsilon = 1e-12);
        assert!(n.holds);
        let cd = scalar(0.0, 0.0, [1.0, 0.0, 0.0, 1.0], 0.1);
        assert!(!necessary_condition(&cd).unwrap().holds);
    }

    #[test]
    fn zero_mean_h_is_covariance() {
        let cd = scalar(0.0, 0.0, [2.0, 0.3, 0.3, 1.0], 1.0);
        let h = h_matrix(&cd);
        assert!((&h.full - &cd.sigma_b).norm() < 1e-12);
        assert!((&h.huu - tradeoff_matrix(&cd)).norm() < 1e-12);
    }

    #[test]
    fn hyperbolic_instance() {
        let cd = scalar(0.0, 2.0, [1.0, 0.0, 0.0, 1.0], 1.0);
        let r = classify(&cd).unwrap();
        assert_eq!(r.case(), Case::Hyperbolic);
        let w = r.witness.unwrap();
        assert!(cd.margin(&w) >= -1e-8);
        assert!(w[0] > 0.0);
    }

    #[test]
    fn u_safe_sign_follows_lg() {
        let cd = scalar(-1.0, -2.0, [1.0, 0.0, 0.0, 1.0], 1.0);
        let u = u_safe(&cd, &AlphaPolicy::default()).unwrap();
        assert!(u[0] < 0.0);
        assert!(cd.margin(&u) >= 0.0);
        let cd = scalar(-1.0, 2.0, [1.0, 0.0, 0.0, 1.0], 1.0);
        assert!(u_safe(&cd, &AlphaPolicy::default()).unwrap()[0] > 0.0);
    }

    #[test]
    fn u_safe_rejects_non_hyperbolic() {
        let cd = scalar(1.0, 0.0, [1.0, 0.0, 0.0, 1.0], 1.0);
        assert!(matches!(
            u_safe(&cd, &AlphaPolicy::default()),
            Err(FeasibilityError::NotHyperbolic(_))
        ));
    }

    #[test]
    fn elliptic_zero_coupling() {
        let cd = scalar(2.0, 0.0, [1.0, 0.0, 0.0, 1.0], 1.0);
        let r = classify(&cd).unwrap();
        assert_eq!(r.geometry, Geometry::Elliptic);
        assert!(r.necessary_ok && r.feasible);
        assert!(r.witness.unwrap()[0].abs() < 1e-14);
        // grid over u confirms
        let best = (-5000..=5000)
            .map(|k| cd.margin(&DVector::from_vec(vec![k as f64 * 0.01])))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(best, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn elliptic_negative_center_is_infeasible() {
        // same ellipse, offset on the wrong side of the half-space
        let cd = scalar(-2.0, 0.0, [1.0, 0.0, 0.0, 1.0], 1.0);
        let r = classify(&cd).unwrap();
        assert_eq!(r.geometry, Geometry::Elliptic);
        assert!(r.necessary_ok);
        assert!(!r.feasible);
        assert_eq!(r.case(), Case::Infeasible);
    }

    #[test]
    fn parabolic_cases() {
        // beta^2 Sigma_LgB = lg^2 exactly: lg = 1, Sigma_LgB = 1, beta = 1
        let cd = scalar(1.0, 1.0, [1.0, 0.0, 0.0, 1.0], 1.0);
        let r = classify(&cd).unwrap();
        assert_eq!(r.geometry, Geometry::Parabolic);
        assert!(r.feasible);
        assert!(cd.margin(r.witness.as_ref().unwrap()) >= 0.0);
        let cd = scalar(-1.0, 1.0, [1.0, 0.0, 0.0, 1.0], 1.0);
        let r = classify(&cd).unwrap();
        assert_eq!(r.geometry, Geometry::Parabolic);
        assert!(!r.feasible);
    }

    #[test]
    fn min_alpha_zero_when_origin_feasible() {
        let cd = scalar(5.0, 2.0, [0.01, 0.0, 0.0, 1.0], 1.0);
        assert_eq!(min_alpha(&cd).unwrap(), 0.0);
    }

    #[test]
    fn min_alpha_pure_quadratic_by_bisection() {
        // only lg nonzero: lam a^2 + beta^2 |s_f|^2 = 0
        let cd = scalar(0.0, 3.0, [0.5, 0.0, 0.0, 1.0], 1.0);
        let a = min_alpha(&cd).unwrap();
        let q = |x: f64| -8.0 * x * x + 0.5;
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert_relative_eq!(a, 0.5 * (lo + hi), epsilon = 1e-12);
    }

    #[test]
    fn document_round_trip_without_sigma_b() {
        let cd = scalar(0.3, -1.2, [1.0, 0.4, 0.4, 2.0], 2.0);
        let mut doc = cd.to_document();
        doc.sigma_b = None;
        let back = ConstraintData::from_document(&doc).unwrap();
        assert!((&back.sigma_b - &cd.sigma_b).norm() < 1e-10);
    }
}
