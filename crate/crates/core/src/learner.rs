//! Safe online learning loop: SOCP filtering while `lambda_dagger` stays
//! below `-epsilon`, backup inputs with an event-triggered measurement
//! otherwise, and periodic time-triggered measurements.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::SolveStatus;
use crate::feasibility::{
    classify_with, h_matrix, linear_part, min_alpha, oriented_lambda_dagger, AlphaPolicy, Case, ConstraintData,
    FeasibilityError, TOL_EIG,
};
use crate::filter::{
    build_constraint_data, clf_cbf_qp, clf_soft_constraint, gp_cbf_socp, FilterConfig, FilterError, FilterMode,
};
use crate::gp::{Dataset, GpError, KernelConfig};
use crate::plants::{
    delta_b, delta_v, integrate_hold, lie_derivatives, uniform_noise, Plant, PlantError, VehicleParams,
    VehicleReference,
};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("safety budget exceeded at t = {t}: lambda_dagger = {lambda:e} after {retries} retries")]
    SafetyBudgetExceeded { t: f64, lambda: f64, retries: usize },
    #[error("invalid learner configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    /// Event threshold; `None` derives it from `lambda_dagger` at the start.
    pub epsilon: Option<f64>,
    pub epsilon_fraction: f64,
    pub epsilon_floor: f64,
    /// Time-trigger period in seconds.
    pub tau: f64,
    pub t_max: f64,
    pub dt_ctrl: f64,
    pub dt_sim: f64,
    pub alpha: AlphaPolicy,
    pub escalation: f64,
    pub max_retries: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            epsilon_fraction: 0.05,
            epsilon_floor: 1e-3,
            tau: 0.5,
            t_max: 20.0,
            dt_ctrl: 1e-2,
            dt_sim: 1e-3,
            alpha: AlphaPolicy::default(),
            escalation: 2.0,
            max_retries: 8,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: &str| Err(LearnerError::Config(m.to_string()));
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return bad("epsilon must be positive");
            }
        }
        if !(self.epsilon_floor > 0.0) || !(self.epsilon_fraction >= 0.0) {
            return bad("epsilon_floor must be positive and epsilon_fraction nonnegative");
        }
        if !(self.dt_sim > 0.0 && self.dt_ctrl >= self.dt_sim) {
            return bad("need 0 < dt_sim <= dt_ctrl");
        }
        if !(self.tau >= self.dt_ctrl) {
            return bad("tau must be at least dt_ctrl");
        }
        let ratio = self.tau / self.dt_ctrl;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return bad("tau must be an integer multiple of dt_ctrl");
        }
        if !(self.t_max > 0.0) {
            return bad("t_max must be positive");
        }
        if !(self.escalation > 1.0) {
            return bad("escalation factor must exceed 1");
        }
        if !(self.alpha.margin >= 1.0) || !(self.alpha.floor >= 0.0) {
            return bad("alpha margin must be >= 1 and floor >= 0");
        }
        Ok(())
    }

    pub fn tau_steps(&self) -> usize {
        (self.tau / self.dt_ctrl).round() as usize
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt_ctrl).round() as usize
    }

    /// `max(fraction * |lambda0|, floor)` unless set explicitly.
    pub fn epsilon_for(&self, lambda0: f64) -> f64 {
        self.epsilon
            .unwrap_or_else(|| (self.epsilon_fraction * lambda0.abs()).max(self.epsilon_floor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Alg1,
    Alg1Prior,
    SocpTimeOnly,
    QpNominal,
    QpOracle,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Alg1,
        Variant::Alg1Prior,
        Variant::SocpTimeOnly,
        Variant::QpNominal,
        Variant::QpOracle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Alg1 => "alg1",
            Variant::Alg1Prior => "alg1_prior",
            Variant::SocpTimeOnly => "socp_time_only",
            Variant::QpNominal => "qp_nominal",
            Variant::QpOracle => "qp_oracle",
        }
    }

    pub fn learns(&self) -> bool {
        matches!(self, Variant::Alg1 | Variant::Alg1Prior | Variant::SocpTimeOnly)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            format!("unknown variant {s:?}; expected one of alg1, alg1_prior, socp_time_only, qp_nominal, qp_oracle")
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    None,
    Time,
    Event,
}

impl Trigger {
    pub fn as_str(&self) -> &'static str {
        match self {
            Trigger::None => "none",
            Trigger::Time => "time",
            Trigger::Event => "event",
        }
    }
}

/// Reference input fed to the filter.
#[derive(Debug, Clone)]
pub enum Reference {
    Zero,
    Vehicle {
        controller: VehicleReference,
        params: VehicleParams,
    },
}

impl Reference {
    pub fn input(&self, x: &DVector<f64>, t: f64, m: usize) -> DVector<f64> {
        match self {
            Reference::Zero => DVector::zeros(m),
            Reference::Vehicle { controller, params } => controller.control(x, t, params),
        }
    }
}

/// Everything one episode needs besides the variant and seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub true_plant: Arc<dyn Plant>,
    pub nominal: Arc<dyn Plant>,
    pub kernel: KernelConfig,
    /// Kernel of the `Delta_V` GP; `None` treats the CLF model as exact.
    pub clf_kernel: Option<KernelConfig>,
    pub filter: FilterConfig,
    pub learner: LearnerConfig,
    pub x0: DVector<f64>,
    /// Half-widths of the uniform per-seed perturbation of `x0`.
    pub x0_jitter: DVector<f64>,
    /// Measurement noise bound `sigma_n`.
    pub noise: f64,
    pub reference: Reference,
    /// Initial `Delta_B` dataset for the prior-data variant.
    pub prior: Option<Dataset>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let (n, m) = (self.nominal.state_dim(), self.nominal.input_dim());
        if self.true_plant.state_dim() != n || self.true_plant.input_dim() != m {
            return Err(LearnerError::Config("true and nominal plant dimensions differ".into()));
        }
        if self.x0.len() != n || self.x0_jitter.len() != n {
            return Err(LearnerError::Config(format!("x0 and x0_jitter need {n} entries")));
        }
        if !(self.noise >= 0.0) {
            return Err(LearnerError::Config("noise must be nonnegative".into()));
        }
        self.kernel.validate(n)?;
        if self.kernel.input_dim() != m {
            return Err(LearnerError::Config(format!(
                "kernel has {} components, plant needs {}",
                self.kernel.components.len(),
                m + 1
            )));
        }
        if let Some(k) = &self.clf_kernel {
            k.validate(n)?;
            if k.input_dim() != m {
                return Err(LearnerError::Config("CLF kernel component count".into()));
            }
        }
        if self.filter.clf.is_some() && self.nominal.clf(&self.x0).is_none() {
            return Err(LearnerError::Config("CLF enabled on a plant without one".into()));
        }
        if let Some(p) = &self.prior {
            if p.state_dim() != n || p.input_dim() != m {
                return Err(LearnerError::Config("prior dataset dimensions".into()));
            }
        }
        self.filter.validate()?;
        self.learner.validate()
    }

    /// Initial state for a seed: `x0` plus uniform jitter.
    pub fn initial_state(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut x = self.x0.clone();
        for i in 0..x.len() {
            x[i] += uniform_noise(rng, self.x0_jitter[i]);
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub step: usize,
    pub t: f64,
    pub kind: Trigger,
    pub lambda_before: f64,
    /// `lambda_dagger` at the same state right after the append.
    pub lambda_after: f64,
    /// Extra measurements taken after the first, each at a larger backup input.
    pub retries: usize,
}

/// Mutable per-episode learning state.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub ds: Dataset,
    pub ds_v: Option<Dataset>,
    pub step: usize,
    pub epsilon: f64,
    pub events: Vec<EventRecord>,
}

impl LearnerState {
    pub fn new(ds: Dataset, ds_v: Option<Dataset>, epsilon: f64) -> Self {
        Self {
            ds,
            ds_v,
            step: 0,
            epsilon,
            events: Vec::new(),
        }
    }
}

/// Per-step output of [`step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub u: DVector<f64>,
    pub mode: FilterMode,
    pub lambda_dagger: f64,
    pub case: Case,
    pub feasible: bool,
    pub trigger: Trigger,
    /// `optimal`, `max_iter`, ... for solved programs, `backup` for `u_safe`.
    pub status: String,
    /// Margin of the enforced safety constraint at `u`.
    pub slack: f64,
    pub clf_relaxation: Option<f64>,
    /// `|mu_B - Delta_B| <= beta sigma_B` at `(x, u)` before this step's appends.
    pub bound_ok: bool,
    /// `[1, u] H [1, u]^T` and `lf_hat + gamma B + lg_hat u` for the chance
    /// constraint at `u` (learning variants only).
    pub h_quad: Option<f64>,
    pub h_lin: Option<f64>,
    pub dataset_size: usize,
}

/// `(lambda_dagger, e_dagger, constraint data)` at `x` for dataset `ds`.
pub fn get_lambda_dagger(
    x: &DVector<f64>,
    ds: &Dataset,
    nominal: &dyn Plant,
    cfg: &FilterConfig,
) -> Result<(f64, DVector<f64>, ConstraintData), LearnerError> {
    let cd = build_constraint_data(x, ds, nominal, cfg)?;
    let (lam, e) = oriented_lambda_dagger(&cd)?;
    Ok((lam, e, cd))
}

fn bound_holds(sc: &Scenario, ds: &Dataset, x: &DVector<f64>, u: &DVector<f64>) -> Result<bool, LearnerError> {
    let (mu, var) = ds.predict(x, u)?;
    let beta = sc.filter.beta.beta(ds.len())?;
    let truth = delta_b(sc.true_plant.as_ref(), sc.nominal.as_ref(), x, u)?;
    Ok((mu - truth).abs() <= beta * var.sqrt())
}

fn append(
    st: &mut LearnerState,
    sc: &Scenario,
    x: &DVector<f64>,
    u: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(), LearnerError> {
    let (tp, np) = (sc.true_plant.as_ref(), sc.nominal.as_ref());
    let z = delta_b(tp, np, x, u)? + uniform_noise(rng, sc.noise);
    st.ds.add_measurement(x, u, z)?;
    if let Some(dv) = st.ds_v.as_mut() {
        let zv = delta_v(tp, np, x, u)? + uniform_noise(rng, sc.noise);
        dv.add_measurement(x, u, zv)?;
    }
    Ok(())
}

/// One control step of the selected variant at state `x` and time `t`.
/// Measurements are taken at `x` with the input about to be applied.
pub fn step(
    st: &mut LearnerState,
    x: &DVector<f64>,
    t: f64,
    sc: &Scenario,
    variant: Variant,
    rng: &mut ChaCha8Rng,
) -> Result<StepRecord, LearnerError> {
    let nominal = sc.nominal.as_ref();
    let m = nominal.input_dim();
    let cfg = &sc.filter;
    let policy = sc.learner.alpha;

    let cd = build_constraint_data(x, &st.ds, nominal, cfg)?;
    let rep = classify_with(&cd, &policy)?;
    let lam = rep.lambda_dagger;
    let u_ref = sc.reference.input(x, t, m);
    let time_due = variant.learns() && st.step % sc.learner.tau_steps() == 0;

    let mut rec = StepRecord {
        u: u_ref.clone(),
        mode: FilterMode::Socp,
        lambda_dagger: lam,
        case: rep.case(),
        feasible: rep.feasible,
        trigger: Trigger::None,
        status: SolveStatus::Optimal.as_str().to_string(),
        slack: 0.0,
        clf_relaxation: None,
        bound_ok: true,
        h_quad: None,
        h_lin: None,
        dataset_size: st.ds.len(),
    };

    let clf = match cfg.clf {
        Some(_) if variant.learns() => Some(clf_soft_constraint(x, st.ds_v.as_ref(), nominal, cfg)?),
        _ => None,
    };

    let mut entry_ds = None;
    match variant {
        Variant::Alg1 | Variant::Alg1Prior => {
            if lam >= -TOL_EIG {
                return Err(LearnerError::SafetyBudgetExceeded {
                    t,
                    lambda: lam,
                    retries: 0,
                });
            }
            if lam < -st.epsilon {
                let (u, d, status) = gp_cbf_socp(&u_ref, &cd, clf.as_ref(), cfg, rep.witness.as_ref())?;
                rec.u = u;
                rec.clf_relaxation = d;
                rec.status = status.as_str().to_string();
                if time_due {
                    entry_ds = Some(st.ds.clone());
                    append(st, sc, x, &rec.u, rng)?;
                    let (after, _, _) = get_lambda_dagger(x, &st.ds, nominal, cfg)?;
                    rec.trigger = Trigger::Time;
                    st.events.push(EventRecord {
                        step: st.step,
                        t,
                        kind: Trigger::Time,
                        lambda_before: lam,
                        lambda_after: after,
                        retries: 0,
                    });
                }
            } else {
                entry_ds = Some(st.ds.clone());
                let e = rep.e_dagger.clone();
                let mut alpha = policy.alpha(min_alpha(&cd)?);
                let mut retries = 0;
                loop {
                    let u = &e * alpha;
                    append(st, sc, x, &u, rng)?;
                    let (after, _, _) = get_lambda_dagger(x, &st.ds, nominal, cfg)?;
                    if after < lam.min(-TOL_EIG) {
                        rec.u = u;
                        st.events.push(EventRecord {
                            step: st.step,
                            t,
                            kind: Trigger::Event,
                            lambda_before: lam,
                            lambda_after: after,
                            retries,
                        });
                        break;
                    }
                    if retries == sc.learner.max_retries {
                        return Err(LearnerError::SafetyBudgetExceeded {
                            t,
                            lambda: after,
                            retries,
                        });
                    }
                    retries += 1;
                    // a zero backup input says nothing about the input channel
                    alpha = (alpha * sc.learner.escalation).max(cfg.input_scale);
                }
                rec.mode = FilterMode::USafe;
                rec.trigger = Trigger::Event;
                rec.status = "backup".to_string();
            }
        }
        Variant::SocpTimeOnly => {
            if rep.feasible {
                let (u, d, status) = gp_cbf_socp(&u_ref, &cd, clf.as_ref(), cfg, rep.witness.as_ref())?;
                rec.u = u;
                rec.clf_relaxation = d;
                rec.status = status.as_str().to_string();
            } else {
                // nothing satisfies the chance constraint; fall back to the nominal QP
                let (u, d, _) = clf_cbf_qp(x, &u_ref, nominal, cfg)?;
                rec.u = u;
                rec.clf_relaxation = d;
                rec.mode = FilterMode::QpNominal;
                rec.status = "infeasible".to_string();
            }
            if time_due {
                entry_ds = Some(st.ds.clone());
                append(st, sc, x, &rec.u, rng)?;
                let (after, _, _) = get_lambda_dagger(x, &st.ds, nominal, cfg)?;
                rec.trigger = Trigger::Time;
                st.events.push(EventRecord {
                    step: st.step,
                    t,
                    kind: Trigger::Time,
                    lambda_before: lam,
                    lambda_after: after,
                    retries: 0,
                });
            }
        }
        Variant::QpNominal | Variant::QpOracle => {
            let model = if variant == Variant::QpOracle {
                sc.true_plant.as_ref()
            } else {
                nominal
            };
            let (u, d, status) = clf_cbf_qp(x, &u_ref, model, cfg)?;
            let (lf, lg) = lie_derivatives(model, x);
            rec.slack = lf + lg.dot(&u) + cfg.gamma_c * model.barrier(x);
            rec.u = u;
            rec.clf_relaxation = d;
            rec.mode = if variant == Variant::QpOracle {
                FilterMode::QpOracle
            } else {
                FilterMode::QpNominal
            };
            rec.status = status.as_str().to_string();
        }
    }

    if variant.learns() {
        rec.slack = cd.margin(&rec.u);
        let h = h_matrix(&cd);
        rec.h_quad = Some(h.quadratic(&rec.u));
        rec.h_lin = Some(linear_part(&cd, &rec.u));
    }
    let ds_for_bound = entry_ds.as_ref().unwrap_or(&st.ds);
    rec.bound_ok = bound_holds(sc, ds_for_bound, x, &rec.u)?;
    rec.dataset_size = st.ds.len();
    st.step += 1;
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub b: f64,
    pub lambda_dagger: f64,
    pub case: Case,
    pub n: usize,
    pub trigger: Trigger,
    pub status: String,
    pub slack: f64,
    pub bound_ok: bool,
    pub feasible: bool,
    pub mode: FilterMode,
    pub h_quad: Option<f64>,
    pub h_lin: Option<f64>,
    /// Input inside the plant's box, when it has one.
    pub input_ok: bool,
    pub clf_relaxation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Completed,
    Aborted { t: f64, reason: String },
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub epsilon: f64,
    pub rows: Vec<TraceRow>,
    pub events: Vec<EventRecord>,
    pub outcome: Outcome,
    pub initial_dataset: Dataset,
    /// Dataset right before the first event-triggered append.
    pub first_event_dataset: Option<Dataset>,
    pub final_dataset: Dataset,
    pub runtime_s: f64,
}

impl SimTrace {
    pub fn completed(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    pub fn min_b(&self) -> f64 {
        self.rows.iter().map(|r| r.b).fold(f64::INFINITY, f64::min)
    }

    pub fn count(&self, kind: Trigger) -> usize {
        self.rows.iter().filter(|r| r.trigger == kind).count()
    }

    pub fn feasible_rate(&self) -> f64 {
        rate(self.rows.iter().map(|r| r.feasible))
    }

    pub fn bound_ok_rate(&self) -> f64 {
        rate(self.rows.iter().map(|r| r.bound_ok))
    }

    pub fn input_violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.input_ok).count()
    }
}

fn rate(it: impl Iterator<Item = bool>) -> f64 {
    let (mut n, mut k) = (0usize, 0usize);
    for b in it {
        n += 1;
        k += usize::from(b);
    }
    if n == 0 {
        1.0
    } else {
        k as f64 / n as f64
    }
}

fn input_within(pl: &dyn Plant, u: &DVector<f64>) -> bool {
    match pl.input_bounds() {
        Some((lo, hi)) => (0..u.len()).all(|i| u[i] >= lo[i] - 1e-12 && u[i] <= hi[i] + 1e-12),
        None => true,
    }
}

/// Initial datasets for a variant: `(Delta_B, Delta_V)`.
pub fn initial_datasets(sc: &Scenario, variant: Variant) -> Result<(Dataset, Option<Dataset>), LearnerError> {
    let n = sc.nominal.state_dim();
    let ds = match (variant, &sc.prior) {
        (Variant::Alg1Prior, Some(p)) => p.clone(),
        (Variant::Alg1Prior, None) => return Err(LearnerError::Config("alg1_prior needs a prior dataset".into())),
        _ => Dataset::new(sc.kernel.clone(), n)?,
    };
    let ds_v = match &sc.clf_kernel {
        Some(k) if variant.learns() && sc.filter.clf.is_some() => Some(Dataset::new(k.clone(), n)?),
        _ => None,
    };
    Ok((ds, ds_v))
}

/// Simulate one episode. Aborts (safety budget, non-finite state) end the
/// trace early and are reported in [`SimTrace::outcome`].
pub fn run_episode(sc: &Scenario, variant: Variant, seed: u64) -> Result<SimTrace, LearnerError> {
    sc.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = sc.initial_state(&mut rng);
    let (ds, ds_v) = initial_datasets(sc, variant)?;
    let initial_dataset = ds.clone();
    let (lam0, _, _) = get_lambda_dagger(&x0, &ds, sc.nominal.as_ref(), &sc.filter)?;
    let epsilon = sc.learner.epsilon_for(lam0);
    let mut st = LearnerState::new(ds, ds_v, epsilon);
    let mut first_event_dataset = None;

    let lc = &sc.learner;
    let mut x = x0.clone();
    let mut rows = Vec::with_capacity(lc.n_steps());
    let mut outcome = Outcome::Completed;
    for k in 0..lc.n_steps() {
        let t = k as f64 * lc.dt_ctrl;
        let before = st.ds.clone();
        let had_event = st.events.iter().any(|e| e.kind == Trigger::Event);
        let rec = match step(&mut st, &x, t, sc, variant, &mut rng) {
            Ok(r) => r,
            Err(LearnerError::SafetyBudgetExceeded { t, lambda, retries }) => {
                outcome = Outcome::Aborted {
                    t,
                    reason: format!("safety budget exceeded: lambda_dagger = {lambda:e} after {retries} retries"),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        if rec.trigger == Trigger::Event && !had_event {
            first_event_dataset = Some(before);
        }
        rows.push(TraceRow {
            t,
            x: x.iter().copied().collect(),
            u: rec.u.iter().copied().collect(),
            b: sc.true_plant.barrier(&x),
            lambda_dagger: rec.lambda_dagger,
            case: rec.case,
            n: rec.dataset_size,
            trigger: rec.trigger,
            status: rec.status,
            slack: rec.slack,
            bound_ok: rec.bound_ok,
            feasible: rec.feasible,
            mode: rec.mode,
            h_quad: rec.h_quad,
            h_lin: rec.h_lin,
            input_ok: input_within(sc.true_plant.as_ref(), &rec.u),
            clf_relaxation: rec.clf_relaxation,
        });
        match integrate_hold(sc.true_plant.as_ref(), &x, &rec.u, lc.dt_ctrl, lc.dt_sim, t) {
            Ok(next) => x = next,
            Err(PlantError::NonFinite { t, state }) => {
                outcome = Outcome::Aborted {
                    t,
                    reason: format!("non-finite state {state:?}"),
                };
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }

    Ok(SimTrace {
        scenario: sc.name.clone(),
        variant,
        seed,
        x0: x0.iter().copied().collect(),
        epsilon,
        rows,
        events: st.events,
        outcome,
        initial_dataset,
        first_event_dataset,
        final_dataset: st.ds,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// `k` measurements along backup directions at states sampled around `x0`
/// within the jitter box scaled by `spread`.
pub fn warmup_dataset(sc: &Scenario, k: usize, spread: f64, seed: u64) -> Result<Dataset, LearnerError> {
    let n = sc.nominal.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let empty = Dataset::new(sc.kernel.clone(), n)?;
    let mut ds = empty.clone();
    for _ in 0..k {
        let mut x = sc.x0.clone();
        for i in 0..n {
            let w = spread * sc.x0_jitter[i];
            if w > 0.0 {
                x[i] += rng.random_range(-w..=w);
            }
        }
        let cd = build_constraint_data(&x, &empty, sc.nominal.as_ref(), &sc.filter)?;
        let (_, e) = oriented_lambda_dagger(&cd)?;
        let alpha = sc.learner.alpha.alpha(min_alpha(&cd)?) * rng.random_range(1.0..=2.0);
        let u = e * alpha;
        let z = delta_b(sc.true_plant.as_ref(), sc.nominal.as_ref(), &x, &u)? + uniform_noise(&mut rng, sc.noise);
        ds.add_measurement(&x, &u, z)?;
    }
    Ok(ds)
}
