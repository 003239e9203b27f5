//! Gaussian-process regression of the scalar barrier mismatch with the
//! affine dot-product compound kernel.
//!
//! The target is `delta(x, u) = phi(x) . [1, u]`. Each of the `m + 1`
//! components of `phi` gets its own squared-exponential base kernel over the
//! state, and the compound covariance between `(x, y)` and `(x', y')` is
//! `sum_i y_i k_i(x, x') y'_i` with `y = [1, u]`. Under this kernel the
//! posterior mean at a fixed state is affine in `u` and the posterior variance
//! is a quadratic form in `[1, u]`, which is what makes the safety filter a
//! second-order cone program.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError};

/// Appended Cholesky pivots below this trigger a full refactorization.
pub const PIVOT_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("invalid kernel configuration: {0}")]
    InvalidKernel(String),
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite measurement input")]
    NonFinite,
    #[error("gram matrix is not positive definite after refactorization")]
    NotPositiveDefinite,
    #[error("invalid beta schedule: {0}")]
    InvalidBeta(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dataset json: {0}")]
    Json(String),
}

/// Squared-exponential kernel with per-dimension length scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeKernel {
    pub variance: f64,
    pub length_scales: Vec<f64>,
}

impl SeKernel {
    pub fn new(variance: f64, length_scales: Vec<f64>) -> Self {
        Self {
            variance,
            length_scales,
        }
    }

    pub fn eval(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let mut r2 = 0.0;
        for ((ai, bi), l) in a.iter().zip(b.iter()).zip(&self.length_scales) {
            let d = (ai - bi) / l;
            r2 += d * d;
        }
        self.variance * (-0.5 * r2).exp()
    }
}

/// Base kernels `k_1..k_{m+1}` and the measurement noise level.
///
/// `noise` is the standard deviation `sigma_n`; the Gram matrix is
/// regularized with `sigma_n^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub components: Vec<SeKernel>,
    pub noise: f64,
}

impl KernelConfig {
    pub fn new(components: Vec<SeKernel>, noise: f64) -> Self {
        Self { components, noise }
    }

    /// Control dimension `m` (one fewer than the number of base kernels).
    pub fn input_dim(&self) -> usize {
        self.components.len().saturating_sub(1)
    }

    pub fn validate(&self, state_dim: usize) -> Result<(), GpError> {
        if self.components.len() < 2 {
            return Err(GpError::InvalidKernel(
                "need at least two base kernels (drift + one input)".into(),
            ));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(GpError::InvalidKernel(format!(
                "noise must be positive, got {}",
                self.noise
            )));
        }
        for (i, k) in self.components.iter().enumerate() {
            if !(k.variance > 0.0 && k.variance.is_finite()) {
                return Err(GpError::InvalidKernel(format!(
                    "component {i}: variance must be positive"
                )));
            }
            if k.length_scales.len() != state_dim {
                return Err(GpError::Dimension {
                    what: "length scales",
                    expected: state_dim,
                    got: k.length_scales.len(),
                });
            }
            if k.length_scales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                return Err(GpError::InvalidKernel(format!(
                    "component {i}: length scales must be positive"
                )));
            }
        }
        Ok(())
    }

    fn state_dim(&self) -> usize {
        self.components.first().map(|k| k.length_scales.len()).unwrap_or(0)
    }

    /// Diagonal of base-kernel values `[k_1(a, b), .., k_{m+1}(a, b)]`.
    pub fn base_values(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.components.len(), self.components.iter().map(|k| k.eval(a, b)))
    }
}

/// Augmented input `[1, u]`.
pub fn augment(u: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(u.len() + 1);
    y[0] = 1.0;
    y.rows_mut(1, u.len()).copy_from(u);
    y
}

/// Compound kernel `y^T diag(k_1(x, x'), .., k_{m+1}(x, x')) y'`.
pub fn adp_kernel_eval(
    x: &DVector<f64>,
    y: &DVector<f64>,
    x2: &DVector<f64>,
    y2: &DVector<f64>,
    cfg: &KernelConfig,
) -> Result<f64, GpError> {
    let p = cfg.components.len();
    let n = cfg.state_dim();
    for (what, got, expected) in [
        ("y", y.len(), p),
        ("y'", y2.len(), p),
        ("x", x.len(), n),
        ("x'", x2.len(), n),
    ] {
        if got != expected {
            return Err(GpError::Dimension { what, expected, got });
        }
    }
    Ok(adp_unchecked(x, y, x2, y2, cfg))
}

fn adp_unchecked(x: &DVector<f64>, y: &DVector<f64>, x2: &DVector<f64>, y2: &DVector<f64>, cfg: &KernelConfig) -> f64 {
    cfg.components
        .iter()
        .enumerate()
        .map(|(i, k)| (y[i] * y2[i]) * k.eval(x, x2))
        .sum()
}

/// GP summary at one state: the mean vector and covariance of `phi(x)`,
/// plus the blocks the safety constraint is written in.
///
/// Straight out of [`Dataset::posterior_bundle`] the `lf_hat`/`lg_hat`
/// fields hold the GP mean only; [`PredictionBundle::with_nominal`] adds the
/// nominal-model Lie derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBundle {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub cov_sqrt: DMatrix<f64>,
    pub lf_hat: f64,
    pub lg_hat: DVector<f64>,
    /// First column of `cov_sqrt`.
    pub sigma_lf_half: DVector<f64>,
    /// Remaining `m` columns of `cov_sqrt`.
    pub sigma_lg_half: DMatrix<f64>,
    /// Lower-right `m x m` block of `cov`.
    pub sigma_lg: DMatrix<f64>,
}

impl PredictionBundle {
    pub fn from_moments(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, GpError> {
        let p = mean.len();
        let m = p - 1;
        let cov = linalg::symmetrize(&cov);
        let cov_sqrt = linalg::sqrt_psd(&cov)?;
        let sigma_lf_half = cov_sqrt.column(0).into_owned();
        let sigma_lg_half = cov_sqrt.columns(1, m).into_owned();
        let sigma_lg = cov.view((1, 1), (m, m)).into_owned();
        Ok(Self {
            lf_hat: mean[0],
            lg_hat: mean.rows(1, m).into_owned(),
            mean,
            cov,
            cov_sqrt,
            sigma_lf_half,
            sigma_lg_half,
            sigma_lg,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.lg_hat.len()
    }

    /// Shift the mean blocks by the nominal Lie derivatives.
    pub fn with_nominal(mut self, lf_nominal: f64, lg_nominal: &DVector<f64>) -> Self {
        self.lf_hat = lf_nominal + self.mean[0];
        self.lg_hat = lg_nominal + self.mean.rows(1, self.input_dim());
        self
    }

    /// GP mean and variance of the mismatch at input `u`.
    pub fn mismatch_moments(&self, u: &DVector<f64>) -> (f64, f64) {
        let y = augment(u);
        let mu = self.mean.dot(&y);
        let var = (y.transpose() * &self.cov * &y)[(0, 0)];
        (mu, var.max(0.0))
    }
}

/// Append-only training set with a maintained Cholesky factor of
/// `K_c + sigma_n^2 I`.
#[derive(Debug, Clone)]
pub struct Dataset {
    kernel: KernelConfig,
    states: Vec<DVector<f64>>,
    aug_inputs: Vec<DVector<f64>>,
    targets: Vec<f64>,
    chol: DMatrix<f64>,
    weights: DVector<f64>,
    refactorizations: usize,
}

impl Dataset {
    pub fn new(kernel: KernelConfig, state_dim: usize) -> Result<Self, GpError> {
        kernel.validate(state_dim)?;
        Ok(Self {
            kernel,
            states: Vec::new(),
            aug_inputs: Vec::new(),
            targets: Vec::new(),
            chol: DMatrix::zeros(0, 0),
            weights: DVector::zeros(0),
            refactorizations: 0,
        })
    }

    /// Batch construction with a single factorization.
    pub fn from_measurements(
        kernel: KernelConfig,
        states: Vec<DVector<f64>>,
        inputs: Vec<DVector<f64>>,
        targets: Vec<f64>,
    ) -> Result<Self, GpError> {
        let state_dim = kernel.state_dim();
        let mut ds = Self::new(kernel, state_dim)?;
        if states.len() != inputs.len() || states.len() != targets.len() {
            return Err(GpError::Dimension {
                what: "measurement count",
                expected: states.len(),
                got: inputs.len().min(targets.len()),
            });
        }
        for ((x, u), z) in states.iter().zip(&inputs).zip(&targets) {
            ds.check_point(x, u, *z)?;
        }
        ds.states = states;
        ds.aug_inputs = inputs.iter().map(augment).collect();
        ds.targets = targets;
        ds.refactor()?;
        Ok(ds)
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.kernel.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.input_dim()
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn augmented_inputs(&self) -> &[DVector<f64>] {
        &self.aug_inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Number of times the factor was rebuilt from scratch after a bad pivot.
    pub fn refactorizations(&self) -> usize {
        self.refactorizations
    }

    /// Lower-triangular Cholesky factor of `K_c + sigma_n^2 I`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Freshly assembled `K_c + sigma_n^2 I`.
    pub fn regularized_gram(&self) -> DMatrix<f64> {
        let n = self.len();
        let s2 = self.kernel.noise * self.kernel.noise;
        DMatrix::from_fn(n, n, |i, j| {
            let k = adp_unchecked(
                &self.states[i],
                &self.aug_inputs[i],
                &self.states[j],
                &self.aug_inputs[j],
                &self.kernel,
            );
            if i == j {
                k + s2
            } else {
                k
            }
        })
    }

    fn check_point(&self, x: &DVector<f64>, u: &DVector<f64>, z: f64) -> Result<(), GpError> {
        if x.len() != self.state_dim() {
            return Err(GpError::Dimension {
                what: "state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.input_dim() {
            return Err(GpError::Dimension {
                what: "input",
                expected: self.input_dim(),
                got: u.len(),
            });
        }
        if !z.is_finite() || x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite);
        }
        Ok(())
    }

    fn refactor(&mut self) -> Result<(), GpError> {
        let gram = self.regularized_gram();
        let chol = Cholesky::new(gram).ok_or(GpError::NotPositiveDefinite)?;
        self.chol = chol.l();
        self.update_weights();
        Ok(())
    }

    fn update_weights(&mut self) {
        let z = DVector::from_column_slice(&self.targets);
        let half = self
            .chol
            .solve_lower_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
        self.weights = self
            .chol
            .tr_solve_lower_triangular(&half)
            .expect("cholesky factor has a positive diagonal");
    }

    /// Append one measurement; `O(N^2)` via a bordered Cholesky update.
    pub fn add_measurement(&mut self, x: &DVector<f64>, u: &DVector<f64>, z: f64) -> Result<(), GpError> {
        self.check_point(x, u, z)?;
        let y = augment(u);
        let n = self.len();
        let cross = DVector::from_fn(n, |j, _| {
            adp_unchecked(x, &y, &self.states[j], &self.aug_inputs[j], &self.kernel)
        });
        let diag = adp_unchecked(x, &y, x, &y, &self.kernel) + self.kernel.noise * self.kernel.noise;

        self.states.push(x.clone());
        self.aug_inputs.push(y);
        self.targets.push(z);

        let row = if n == 0 {
            DVector::zeros(0)
        } else {
            self.chol
                .solve_lower_triangular(&cross)
                .expect("cholesky factor has a positive diagonal")
        };
        let pivot2 = diag - row.norm_squared();
        if pivot2 < PIVOT_FLOOR {
            self.refactorizations += 1;
            if let Err(e) = self.refactor() {
                self.states.pop();
                self.aug_inputs.pop();
                self.targets.pop();
                self.refactor()?;
                return Err(e);
            }
            return Ok(());
        }
        let mut chol = std::mem::replace(&mut self.chol, DMatrix::zeros(0, 0)).resize(n + 1, n + 1, 0.0);
        for j in 0..n {
            chol[(n, j)] = row[j];
        }
        chol[(n, n)] = pivot2.sqrt();
        self.chol = chol;
        self.update_weights();
        Ok(())
    }

    /// `K_{*Y}`: base-kernel rows against the data, scaled element-wise by `Y`.
    fn cross_cov(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let p = self.kernel.components.len();
        let n = self.len();
        let mut k = DMatrix::zeros(p, n);
        for j in 0..n {
            let base = self.kernel.base_values(x, &self.states[j]);
            for i in 0..p {
                k[(i, j)] = base[i] * self.aug_inputs[j][i];
            }
        }
        k
    }

    /// Posterior mean vector and covariance of `phi(x)`.
    pub fn posterior_moments(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), GpError> {
        if x.len() != self.state_dim() {
            return Err(GpError::Dimension {
                what: "query state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        let prior = DMatrix::from_diagonal(&self.kernel.base_values(x, x));
        if self.is_empty() {
            return Ok((DVector::zeros(self.kernel.components.len()), prior));
        }
        let k_star = self.cross_cov(x);
        let mean = &k_star * &self.weights;
        let v = self
            .chol
            .solve_lower_triangular(&k_star.transpose())
            .ok_or(GpError::NotPositiveDefinite)?;
        let cov = prior - v.transpose() * v;
        Ok((mean, linalg::symmetrize(&cov)))
    }

    pub fn posterior_bundle(&self, x: &DVector<f64>) -> Result<PredictionBundle, GpError> {
        let (mean, cov) = self.posterior_moments(x)?;
        PredictionBundle::from_moments(mean, cov)
    }

    /// Mean and variance of the mismatch at `(x, u)`.
    pub fn predict(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(f64, f64), GpError> {
        if u.len() != self.input_dim() {
            return Err(GpError::Dimension {
                what: "input",
                expected: self.input_dim(),
                got: u.len(),
            });
        }
        let (mean, cov) = self.posterior_moments(x)?;
        let y = augment(u);
        let var = (y.transpose() * cov * &y)[(0, 0)];
        Ok((mean.dot(&y), var.max(0.0)))
    }

    pub fn to_document(&self) -> DatasetDocument {
        DatasetDocument {
            kernel: self.kernel.clone(),
            states: self.states.iter().map(|x| x.iter().copied().collect()).collect(),
            inputs: self
                .aug_inputs
                .iter()
                .map(|y| y.iter().skip(1).copied().collect())
                .collect(),
            targets: self.targets.clone(),
        }
    }

    pub fn from_document(doc: DatasetDocument) -> Result<Self, GpError> {
        let states = doc.states.into_iter().map(DVector::from_vec).collect();
        let inputs = doc.inputs.into_iter().map(DVector::from_vec).collect();
        Self::from_measurements(doc.kernel, states, inputs, doc.targets)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GpError> {
        let doc: DatasetDocument = serde_json::from_str(text).map_err(|e| GpError::Json(e.to_string()))?;
        Self::from_document(doc)
    }
}

/// On-disk dataset layout; the augmented inputs are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDocument {
    pub kernel: KernelConfig,
    #[serde(rename = "X")]
    pub states: Vec<Vec<f64>>,
    #[serde(rename = "U")]
    pub inputs: Vec<Vec<f64>>,
    #[serde(rename = "z")]
    pub targets: Vec<f64>,
}

/// Confidence scaling `beta` as a function of the dataset size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSchedule {
    Fixed {
        value: f64,
    },
    /// `sqrt(2 eta^2 + 300 kappa ln^3((N + 1) / delta))`, with `kappa` a
    /// constant stand-in for the information gain.
    InfoGain {
        rkhs_bound: f64,
        info_gain: f64,
        delta: f64,
    },
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule::Fixed { value: 2.0 }
    }
}

impl BetaSchedule {
    pub fn validate(&self) -> Result<(), GpError> {
        match *self {
            BetaSchedule::Fixed { value } if !(value > 0.0 && value.is_finite()) => Err(GpError::InvalidBeta(format!(
                "fixed beta must be positive, got {value}"
            ))),
            BetaSchedule::InfoGain { delta, .. } if !(delta > 0.0 && delta < 1.0) => {
                Err(GpError::InvalidBeta(format!("delta must lie in (0, 1), got {delta}")))
            }
            BetaSchedule::InfoGain {
                rkhs_bound, info_gain, ..
            } if rkhs_bound < 0.0 || info_gain < 0.0 => Err(GpError::InvalidBeta(
                "rkhs_bound and info_gain must be nonnegative".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn beta(&self, n: usize) -> Result<f64, GpError> {
        self.validate()?;
        Ok(match *self {
            BetaSchedule::Fixed { value } => value,
            BetaSchedule::InfoGain {
                rkhs_bound,
                info_gain,
                delta,
            } => {
                let l = ((n as f64 + 1.0) / delta).ln();
                (2.0 * rkhs_bound * rkhs_bound + 300.0 * info_gain * l * l * l).sqrt()
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(m: usize, n: usize) -> KernelConfig {
        let comps = (0..=m)
            .map(|i| SeKernel::new(1.0 + 0.5 * i as f64, vec![1.0 + 0.3 * i as f64; n]))
            .collect();
        KernelConfig::new(comps, 0.1)
    }

    fn rvec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-s..s))
    }

    #[test]
    fn first_component_only() {
        let c = cfg(2, 2);
        let x = DVector::from_vec(vec![0.3, -0.1]);
        let x2 = DVector::from_vec(vec![-0.2, 0.4]);
        let y = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let k = adp_kernel_eval(&x, &y, &x2, &y, &c).unwrap();
        assert_relative_eq!(k, c.components[0].eval(&x, &x2), max_relative = 1e-15);
    }

    #[test]
    fn unit_kernels_sum_squares() {
        let c = KernelConfig::new(vec![SeKernel::new(1.0, vec![1.0]), SeKernel::new(1.0, vec![1.0])], 0.1);
        let x = DVector::from_vec(vec![0.7]);
        let y = augment(&DVector::from_vec(vec![3.0]));
        assert_relative_eq!(adp_kernel_eval(&x, &y, &x, &y, &c).unwrap(), 10.0);
    }

    #[test]
    fn direct_summation_oracle_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = cfg(2, 3);
        for _ in 0..50 {
            let (x, x2) = (rvec(&mut rng, 3, 2.0), rvec(&mut rng, 3, 2.0));
            let (y, y2) = (rvec(&mut rng, 3, 3.0), rvec(&mut rng, 3, 3.0));
            let mut oracle = 0.0;
            for i in 0..3 {
                let l = &c.components[i].length_scales;
                let r2: f64 = (0..3).map(|d| ((x[d] - x2[d]) / l[d]).powi(2)).sum();
                oracle += y[i] * c.components[i].variance * (-0.5 * r2).exp() * y2[i];
            }
            let k = adp_kernel_eval(&x, &y, &x2, &y2, &c).unwrap();
            assert_relative_eq!(k, oracle, max_relative = 1e-13, epsilon = 1e-14);
            let k_sw = adp_kernel_eval(&x2, &y2, &x, &y, &c).unwrap();
            assert_eq!(k, k_sw);
        }
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let c = cfg(1, 2);
        let x = DVector::zeros(2);
        let y = DVector::zeros(3);
        assert!(matches!(
            adp_kernel_eval(&x, &y, &x, &y, &c),
            Err(GpError::Dimension { .. })
        ));
    }

    #[test]
    fn empty_dataset_is_prior() {
        let c = cfg(2, 2);
        let ds = Dataset::new(c.clone(), 2).unwrap();
        let x = DVector::from_vec(vec![0.1, 0.2]);
        let b = ds.posterior_bundle(&x).unwrap();
        assert_eq!(b.mean, DVector::zeros(3));
        for i in 0..3 {
            assert_relative_eq!(b.cov[(i, i)], c.components[i].variance);
        }
        let (mu, _) = ds.predict(&x, &DVector::from_vec(vec![4.0, -1.0])).unwrap();
        assert_eq!(mu, 0.0);
    }

    #[test]
    fn interpolates_single_point_with_tiny_noise() {
        let mut c = cfg(1, 2);
        c.noise = 1e-6;
        let mut ds = Dataset::new(c, 2).unwrap();
        let x = DVector::from_vec(vec![0.5, -0.5]);
        let u = DVector::from_vec(vec![2.0]);
        ds.add_measurement(&x, &u, 1.7).unwrap();
        let (mu, _) = ds.predict(&x, &u).unwrap();
        assert!((mu - 1.7).abs() < 1e-3);
    }

    #[test]
    fn posterior_covariance_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ds = Dataset::new(cfg(2, 2), 2).unwrap();
        for _ in 0..25 {
            let x = rvec(&mut rng, 2, 1.0);
            ds.add_measurement(&x, &rvec(&mut rng, 2, 2.0), rng.random_range(-1.0..1.0))
                .unwrap();
        }
        for _ in 0..20 {
            let b = ds.posterior_bundle(&rvec(&mut rng, 2, 1.0)).unwrap();
            let min = linalg::eigenvalues_sorted(&b.cov).unwrap()[0];
            assert!(min > 0.0, "min eigenvalue {min}");
            let recon = b.cov_sqrt.transpose() * &b.cov_sqrt;
            assert!((recon - &b.cov).norm() <= 1e-8);
            let lg = b.sigma_lg_half.transpose() * &b.sigma_lg_half;
            assert!((lg - &b.sigma_lg).norm() <= 1e-8);
        }
    }

    #[test]
    fn grows_by_one_and_factor_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ds = Dataset::new(cfg(1, 2), 2).unwrap();
        for k in 0..15 {
            assert_eq!(ds.len(), k);
            ds.add_measurement(&rvec(&mut rng, 2, 1.0), &rvec(&mut rng, 1, 2.0), 0.3)
                .unwrap();
        }
        let l = ds.cholesky_factor();
        let gram = ds.regularized_gram();
        let rel = (l * l.transpose() - &gram).norm() / gram.norm();
        assert!(rel <= 1e-10, "{rel}");
    }

    #[test]
    fn duplicate_points_stay_factorizable() {
        let mut c = cfg(1, 1);
        c.noise = 1e-3;
        let mut ds = Dataset::new(c, 1).unwrap();
        let x = DVector::from_vec(vec![0.0]);
        let u = DVector::from_vec(vec![1.0]);
        for _ in 0..30 {
            ds.add_measurement(&x, &u, 0.5).unwrap();
        }
        assert_eq!(ds.len(), 30);
        let (mu, var) = ds.predict(&x, &u).unwrap();
        assert!((mu - 0.5).abs() < 1e-3);
        assert!(var >= 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        let mut ds = Dataset::new(cfg(1, 1), 1).unwrap();
        let r = ds.add_measurement(&DVector::from_vec(vec![f64::NAN]), &DVector::zeros(1), 0.0);
        assert_eq!(r, Err(GpError::NonFinite));
        assert!(ds.is_empty());
    }

    #[test]
    fn json_round_trip_preserves_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ds = Dataset::new(cfg(2, 2), 2).unwrap();
        for _ in 0..6 {
            ds.add_measurement(&rvec(&mut rng, 2, 1.0), &rvec(&mut rng, 2, 1.0), 0.2)
                .unwrap();
        }
        let back = Dataset::from_json(&ds.to_json()).unwrap();
        let q = rvec(&mut rng, 2, 1.0);
        let u = rvec(&mut rng, 2, 1.0);
        let (a, b) = (ds.predict(&q, &u).unwrap(), back.predict(&q, &u).unwrap());
        assert_relative_eq!(a.0, b.0, max_relative = 1e-10);
        assert_relative_eq!(a.1, b.1, max_relative = 1e-10);
        assert!(back.augmented_inputs().iter().all(|y| y[0] == 1.0));
    }

    #[test]
    fn kernel_validation() {
        let mut c = cfg(1, 2);
        c.noise = 0.0;
        assert!(c.validate(2).is_err());
        let mut c = cfg(1, 2);
        c.components[1].length_scales[0] = -1.0;
        assert!(c.validate(2).is_err());
        assert!(cfg(1, 2).validate(3).is_err());
    }

    #[test]
    fn fixed_beta() {
        let s = BetaSchedule::Fixed { value: 2.0 };
        for n in [0, 1, 10, 1000] {
            assert_eq!(s.beta(n).unwrap(), 2.0);
        }
    }

    #[test]
    fn info_gain_beta_formula() {
        let s = BetaSchedule::InfoGain {
            rkhs_bound: 1.0,
            info_gain: 0.01,
            delta: 0.05,
        };
        // ln(10 / 0.05) = ln 200
        let l = 200.0_f64.ln();
        let expected = (2.0 + 3.0 * l * l * l).sqrt();
        assert_relative_eq!(s.beta(9).unwrap(), expected, max_relative = 1e-14);
        let mut prev = 0.0;
        for n in 0..200 {
            let b = s.beta(n).unwrap();
            assert!(b >= prev && b > 0.0);
            prev = b;
        }
    }

    #[test]
    fn info_gain_beta_rejects_bad_delta() {
        for delta in [0.0, 1.0, -0.5, 2.0] {
            let s = BetaSchedule::InfoGain {
                rkhs_bound: 1.0,
                info_gain: 0.01,
                delta,
            };
            assert!(s.beta(3).is_err());
        }
    }
}
