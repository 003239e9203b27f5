//! Minimally invasive safety filters: the GP chance-constrained SOCP, the
//! closed-form CBF-QP baseline and an optional relaxed CLF constraint.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{self, SocpProblem, SolveStatus, SolverError, SolverSettings};
use crate::feasibility::{Case, ConstraintData, FeasibilityError};
use crate::gp::{BetaSchedule, Dataset, GpError};
use crate::plants::{clf_lie_derivatives, lie_derivatives, Plant};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("solver returned {status:?} on a problem screened as feasible\n{dump}")]
    SolverFailure { status: SolveStatus, dump: String },
    #[error("CBF-QP is infeasible: L_gB = 0 and L_fB + gamma(B) = {0} < 0")]
    QpInfeasible(f64),
    #[error("plant {0} has no CLF")]
    NoClf(String),
    #[error("invalid filter configuration: {0}")]
    Config(String),
}

/// Relaxed CLF constraint settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClfOptions {
    /// Convergence rate `c3` in `V' + c3 V <= d`.
    pub rate: f64,
    /// Penalty `rho` on the relaxation `d`.
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub beta: BetaSchedule,
    /// Linear class-K gain: `gamma(s) = gamma_c * s`.
    pub gamma_c: f64,
    pub clf: Option<ClfOptions>,
    pub solver: SolverSettings,
    /// Inputs are divided by this before the cone program is assembled, so
    /// problems in newtons and in m/s^2 are equally well scaled.
    pub input_scale: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            beta: BetaSchedule::default(),
            gamma_c: 1.0,
            clf: None,
            solver: SolverSettings::default(),
            input_scale: 1.0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.gamma_c > 0.0) {
            return Err(FilterError::Config("gamma_c must be positive".into()));
        }
        if !(self.input_scale > 0.0) {
            return Err(FilterError::Config("input_scale must be positive".into()));
        }
        if let Some(c) = &self.clf {
            if !(c.penalty > 0.0) {
                return Err(FilterError::Config("CLF penalty must be positive".into()));
            }
            if !(c.rate >= 0.0) {
                return Err(FilterError::Config("CLF rate must be nonnegative".into()));
            }
        }
        self.beta.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    Socp,
    QpNominal,
    QpOracle,
    USafe,
}

impl FilterMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterMode::Socp => "socp",
            FilterMode::QpNominal => "qp_nominal",
            FilterMode::QpOracle => "qp_oracle",
            FilterMode::USafe => "u_safe",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub u: DVector<f64>,
    pub mode: FilterMode,
    pub lambda_dagger: f64,
    pub case: Case,
    /// Margin of the safety constraint at `u`.
    pub slack: f64,
    /// CLF relaxation `d`, when the CLF is active.
    pub clf_relaxation: Option<f64>,
    pub status: SolveStatus,
}

/// Chance-constraint data at `x` from the GP posterior and nominal model.
pub fn build_constraint_data(
    x: &DVector<f64>,
    ds: &Dataset,
    nominal: &dyn Plant,
    cfg: &FilterConfig,
) -> Result<ConstraintData, FilterError> {
    let (lf, lg) = lie_derivatives(nominal, x);
    let bundle = ds.posterior_bundle(x)?.with_nominal(lf, &lg);
    let beta = cfg.beta.beta(ds.len())?;
    Ok(ConstraintData::from_bundle(
        &bundle,
        cfg.gamma_c * nominal.barrier(x),
        beta,
    ))
}

/// `|| beta (S_g u + s_f) || <= d - lf - lg . u - c3 V` with `d >= 0`
/// penalized in the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ClfSoftConstraint {
    pub lf_hat: f64,
    pub lg_hat: DVector<f64>,
    pub sigma_lf_half: DVector<f64>,
    pub sigma_lg_half: DMatrix<f64>,
    pub beta: f64,
    /// `c3 V(x)`.
    pub decay: f64,
    pub penalty: f64,
}

impl ClfSoftConstraint {
    /// Smallest admissible relaxation at `u`.
    pub fn required_relaxation(&self, u: &DVector<f64>) -> f64 {
        let sigma = (&self.sigma_lg_half * u + &self.sigma_lf_half).norm();
        (self.lf_hat + self.lg_hat.dot(u) + self.beta * sigma + self.decay).max(0.0)
    }
}

/// CLF constraint with the `Delta_V` GP; `ds_v = None` uses the nominal model
/// with no uncertainty.
pub fn clf_soft_constraint(
    x: &DVector<f64>,
    ds_v: Option<&Dataset>,
    model: &dyn Plant,
    cfg: &FilterConfig,
) -> Result<ClfSoftConstraint, FilterError> {
    let opts = cfg
        .clf
        .as_ref()
        .ok_or_else(|| FilterError::Config("CLF options missing".into()))?;
    let (v, _) = model
        .clf(x)
        .ok_or_else(|| FilterError::NoClf(model.label().to_string()))?;
    let (lf, lg) = clf_lie_derivatives(model, x).expect("plant has a CLF");
    let m = lg.len();
    let (lf_hat, lg_hat, s_f, s_g, beta) = match ds_v {
        Some(ds) => {
            let b = ds.posterior_bundle(x)?.with_nominal(lf, &lg);
            let beta = cfg.beta.beta(ds.len())?;
            (b.lf_hat, b.lg_hat, b.sigma_lf_half, b.sigma_lg_half, beta)
        }
        None => (lf, lg, DVector::zeros(m + 1), DMatrix::zeros(m + 1, m), 0.0),
    };
    Ok(ClfSoftConstraint {
        lf_hat,
        lg_hat,
        sigma_lf_half: s_f,
        sigma_lg_half: s_g,
        beta,
        decay: opts.rate * v,
        penalty: opts.penalty,
    })
}

/// Decision vector layout `[u / scale, t, (d)]`.
fn assemble(u_ref: &DVector<f64>, cd: &ConstraintData, clf: Option<&ClfSoftConstraint>, scale: f64) -> SocpProblem {
    let m = u_ref.len();
    let nvar = m + 1 + usize::from(clf.is_some());
    let ti = m;
    let mut cost = DVector::zeros(nvar);
    cost[ti] = 1.0;
    if let Some(c) = clf {
        cost[m + 1] = c.penalty / scale;
    }
    let mut p = SocpProblem::new(cost);

    // epigraph || u - u_ref || <= t (scaled units)
    let mut a = DMatrix::zeros(m, nvar);
    for i in 0..m {
        a[(i, i)] = 1.0;
    }
    let mut c = DVector::zeros(nvar);
    c[ti] = 1.0;
    p.add_soc(a, -u_ref / scale, c, 0.0);

    // beta || S_g u + s_f || <= lg . u + a
    let rows = cd.sigma_lg_half.nrows();
    let mut a = DMatrix::zeros(rows, nvar);
    a.view_mut((0, 0), (rows, m))
        .copy_from(&(&cd.sigma_lg_half * (cd.beta * scale)));
    let mut c = DVector::zeros(nvar);
    c.rows_mut(0, m).copy_from(&(&cd.lg_hat * scale));
    p.add_soc(a, &cd.sigma_lf_half * cd.beta, c, cd.offset());

    if let Some(k) = clf {
        let rows = k.sigma_lg_half.nrows();
        let mut a = DMatrix::zeros(rows, nvar);
        a.view_mut((0, 0), (rows, m))
            .copy_from(&(&k.sigma_lg_half * (k.beta * scale)));
        let mut c = DVector::zeros(nvar);
        c.rows_mut(0, m).copy_from(&(-&k.lg_hat * scale));
        c[m + 1] = 1.0;
        p.add_soc(a, &k.sigma_lf_half * k.beta, c, -k.lf_hat - k.decay);
        let mut e = DVector::zeros(nvar);
        e[m + 1] = 1.0;
        p.add_linear(e, 0.0);
    }
    p
}

fn start_point(
    u_ref: &DVector<f64>,
    witness: Option<&DVector<f64>>,
    clf: Option<&ClfSoftConstraint>,
    scale: f64,
) -> Option<DVector<f64>> {
    let w = witness?;
    let m = u_ref.len();
    let mut x = DVector::zeros(m + 1 + usize::from(clf.is_some()));
    x.rows_mut(0, m).copy_from(&(w / scale));
    x[m] = ((w - u_ref) / scale).norm() + 1.0;
    if let Some(k) = clf {
        x[m + 1] = k.required_relaxation(w) + 1.0;
    }
    Some(x)
}

fn solve_filter(
    u_ref: &DVector<f64>,
    cd: &ConstraintData,
    clf: Option<&ClfSoftConstraint>,
    cfg: &FilterConfig,
    witness: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, Option<f64>, SolveStatus), FilterError> {
    let m = u_ref.len();
    let scale = cfg.input_scale;
    let problem = assemble(u_ref, cd, clf, scale);
    let start = start_point(u_ref, witness, clf, scale);
    let sol = cone::solve_from(&problem, &cfg.solver, start.as_ref())?;
    if sol.status != SolveStatus::Optimal {
        return Err(FilterError::SolverFailure {
            status: sol.status,
            dump: format!("{problem:#?}\nconstraint data: {cd:#?}"),
        });
    }
    let u = sol.w.rows(0, m) * scale;
    let d = clf.map(|_| sol.w[m + 1]);
    Ok((u, d, sol.status))
}

/// Solve `min ||u - u_ref||` subject to the GP chance constraint (and the
/// relaxed CLF, when given). Callers screen feasibility first; `witness` is
/// a feasible input used to start the solver.
pub fn gp_cbf_socp(
    u_ref: &DVector<f64>,
    cd: &ConstraintData,
    clf: Option<&ClfSoftConstraint>,
    cfg: &FilterConfig,
    witness: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, Option<f64>, SolveStatus), FilterError> {
    if clf.is_none() && cd.margin(u_ref) >= 0.0 {
        return Ok((u_ref.clone(), None, SolveStatus::Optimal));
    }
    let (mut u, d, status) = solve_filter(u_ref, cd, clf, cfg, witness)?;
    if let Some(w) = witness {
        if cd.margin(&u) < 0.0 && cd.margin(w) >= 0.0 {
            u = pull_inside(cd, &u, w);
        }
    }
    Ok((u, d, status))
}

/// Move an interior-point solution that sits a rounding error outside the
/// cone back onto the feasible side, along the segment towards `w`.
pub fn pull_inside(cd: &ConstraintData, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cd.margin(&(u + (w - u) * mid)) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    u + (w - u) * hi
}

/// Closed-form projection of `u_ref` onto `{u : a^T u + b >= 0}` with
/// `a = L_g B(x)`, `b = L_f B(x) + gamma_c B(x)`.
pub fn cbf_qp(
    x: &DVector<f64>,
    u_ref: &DVector<f64>,
    model: &dyn Plant,
    gamma_c: f64,
) -> Result<DVector<f64>, FilterError> {
    let (lf, a) = lie_derivatives(model, x);
    let b = lf + gamma_c * model.barrier(x);
    project_halfspace(u_ref, &a, b)
}

pub fn project_halfspace(u_ref: &DVector<f64>, a: &DVector<f64>, b: f64) -> Result<DVector<f64>, FilterError> {
    let val = a.dot(u_ref) + b;
    if val >= 0.0 {
        return Ok(u_ref.clone());
    }
    let nrm2 = a.norm_squared();
    if nrm2 == 0.0 {
        return Err(FilterError::QpInfeasible(b));
    }
    Ok(u_ref - a * (val / nrm2))
}

/// CBF-QP with the relaxed CLF, solved as a cone program with zero
/// uncertainty. Without CLF options this is [`cbf_qp`].
pub fn clf_cbf_qp(
    x: &DVector<f64>,
    u_ref: &DVector<f64>,
    model: &dyn Plant,
    cfg: &FilterConfig,
) -> Result<(DVector<f64>, Option<f64>, SolveStatus), FilterError> {
    if cfg.clf.is_none() {
        return Ok((cbf_qp(x, u_ref, model, cfg.gamma_c)?, None, SolveStatus::Optimal));
    }
    let m = u_ref.len();
    let (lf, lg) = lie_derivatives(model, x);
    if lg.norm_squared() == 0.0 && lf + cfg.gamma_c * model.barrier(x) < 0.0 {
        return Err(FilterError::QpInfeasible(lf + cfg.gamma_c * model.barrier(x)));
    }
    let cd = ConstraintData {
        lf_hat: lf,
        lg_hat: lg,
        sigma_lf_half: DVector::zeros(0),
        sigma_lg_half: DMatrix::zeros(0, m),
        sigma_b: DMatrix::zeros(0, 0),
        gamma_b: cfg.gamma_c * model.barrier(x),
        beta: 0.0,
    };
    let clf = clf_soft_constraint(x, None, model, cfg)?;
    let witness = project_halfspace(u_ref, &cd.lg_hat, cd.offset())?;
    solve_filter(u_ref, &cd, Some(&clf), cfg, Some(&witness))
}
