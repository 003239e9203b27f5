//! Small dense second-order cone solver.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    c^T w
//! subject to  || A_i w + b_i || <= c_i^T w + d_i     for every i
//! ```
//!
//! and rewritten in conic form `G w + s = h`, `s` in a product of Lorentz
//! cones, with `G_i = -[c_i^T; A_i]` and `h_i = [d_i; b_i]`. A constraint with
//! an empty `A_i` is a plain linear inequality (a one-dimensional cone).
//!
//! The method is a primal-dual interior point on the homogeneous self-dual
//! embedding with Nesterov-Todd scaling and a Mehrotra predictor-corrector,
//! solving a dense reduced KKT system each iteration. Everything is
//! deterministic: no randomization, fixed iteration schedule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("malformed problem: {0}")]
    Malformed(String),
}

/// `|| a w + b || <= c^T w + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl SocConstraint {
    /// `c^T w + d - || a w + b ||`.
    pub fn margin(&self, w: &DVector<f64>) -> f64 {
        let lhs = if self.a.nrows() == 0 {
            0.0
        } else {
            (&self.a * w + &self.b).norm()
        };
        self.c.dot(w) + self.d - lhs
    }

    fn cone_dim(&self) -> usize {
        self.a.nrows() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocpProblem {
    pub cost: DVector<f64>,
    pub constraints: Vec<SocConstraint>,
}

impl SocpProblem {
    pub fn new(cost: DVector<f64>) -> Self {
        Self {
            cost,
            constraints: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.cost.len()
    }

    pub fn add_soc(&mut self, a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>, d: f64) -> &mut Self {
        self.constraints.push(SocConstraint { a, b, c, d });
        self
    }

    /// `c^T w + d >= 0`.
    pub fn add_linear(&mut self, c: DVector<f64>, d: f64) -> &mut Self {
        let n = self.dim();
        self.add_soc(DMatrix::zeros(0, n), DVector::zeros(0), c, d)
    }

    /// `lower <= w_k <= upper`.
    pub fn add_bounds(&mut self, k: usize, lower: f64, upper: f64) -> &mut Self {
        let n = self.dim();
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        self.add_linear(e.clone(), -lower);
        self.add_linear(-e, upper)
    }

    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        self.cost.dot(w)
    }

    pub fn margins(&self, w: &DVector<f64>) -> Vec<f64> {
        self.constraints.iter().map(|c| c.margin(w)).collect()
    }

    pub fn min_margin(&self, w: &DVector<f64>) -> f64 {
        self.margins(w).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.dim();
        if n == 0 {
            return Err(SolverError::Malformed("zero decision dimension".into()));
        }
        if self.constraints.is_empty() {
            return Err(SolverError::Malformed("no constraints".into()));
        }
        for (i, k) in self.constraints.iter().enumerate() {
            if k.a.ncols() != n || k.c.len() != n || k.a.nrows() != k.b.len() {
                return Err(SolverError::Malformed(format!(
                    "constraint {i}: dimensions disagree with decision size {n}"
                )));
            }
            let finite = k.d.is_finite() && k.a.iter().chain(k.b.iter()).chain(k.c.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(SolverError::Malformed(format!("constraint {i}: non-finite data")));
            }
        }
        if self.cost.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Malformed("non-finite cost".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// A certificate of primal infeasibility was found.
    Infeasible,
    /// A certificate of dual infeasibility (unbounded objective) was found.
    Unbounded,
    MaxIter,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocpSolution {
    pub w: DVector<f64>,
    /// Dual multipliers, stacked cone by cone.
    pub z: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    /// `|| G w + s - h ||`.
    pub primal_residual: f64,
    /// `|| G^T z + c ||`.
    pub dual_residual: f64,
    /// `s^T z` at the returned point.
    pub gap: f64,
}

/// Dense conic data `G w + s = h`.
struct Conic {
    g: DMatrix<f64>,
    h: DVector<f64>,
    c: DVector<f64>,
    /// `(offset, dim)` per cone.
    cones: Vec<(usize, usize)>,
}

impl Conic {
    fn from_problem(p: &SocpProblem) -> Self {
        let n = p.dim();
        let rows: usize = p.constraints.iter().map(|k| k.cone_dim()).sum();
        let mut g = DMatrix::zeros(rows, n);
        let mut h = DVector::zeros(rows);
        let mut cones = Vec::with_capacity(p.constraints.len());
        let mut off = 0;
        for k in &p.constraints {
            let dim = k.cone_dim();
            for j in 0..n {
                g[(off, j)] = -k.c[j];
            }
            h[off] = k.d;
            for r in 0..k.a.nrows() {
                for j in 0..n {
                    g[(off + 1 + r, j)] = -k.a[(r, j)];
                }
                h[off + 1 + r] = k.b[r];
            }
            cones.push((off, dim));
            off += dim;
        }
        Self {
            g,
            h,
            c: p.cost.clone(),
            cones,
        }
    }

    /// Smallest constraint margin at `x`, read off `h - G x` cone by cone.
    fn margin(&self, x: &DVector<f64>) -> f64 {
        let s = &self.h - &self.g * x;
        self.cones
            .iter()
            .map(|&(o, d)| s[o] - s.rows(o + 1, d - 1).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Nesterov-Todd scaling of one Lorentz cone: `W = eta * Wbar`, symmetric,
/// with `W z = W^{-1} s`.
#[derive(Debug, Clone)]
struct NtBlock {
    eta: f64,
    wbar: DVector<f64>,
}

impl NtBlock {
    fn new(s: &[f64], z: &[f64]) -> Self {
        let sjs = soc_det(s);
        let zjz = soc_det(z);
        let sn = sjs.sqrt();
        let zn = zjz.sqrt();
        let sbar: Vec<f64> = s.iter().map(|v| v / sn).collect();
        let zbar: Vec<f64> = z.iter().map(|v| v / zn).collect();
        let dot: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
        let gamma = ((1.0 + dot) / 2.0).sqrt();
        let mut wbar = DVector::zeros(s.len());
        wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
        for i in 1..s.len() {
            wbar[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
        }
        Self {
            eta: (sjs / zjz).sqrt().sqrt(),
            wbar,
        }
    }

    fn matrix(&self, inverse: bool) -> DMatrix<f64> {
        let n = self.wbar.len();
        let w0 = self.wbar[0];
        let sign = if inverse { -1.0 } else { 1.0 };
        let mut m = DMatrix::zeros(n, n);
        m[(0, 0)] = w0;
        for i in 1..n {
            m[(0, i)] = sign * self.wbar[i];
            m[(i, 0)] = sign * self.wbar[i];
            for j in 1..n {
                m[(i, j)] = self.wbar[i] * self.wbar[j] / (1.0 + w0) + if i == j { 1.0 } else { 0.0 };
            }
        }
        if inverse {
            m / self.eta
        } else {
            m * self.eta
        }
    }
}

/// `x0^2 - ||x1||^2`, computed as a product for accuracy.
fn soc_det(x: &[f64]) -> f64 {
    let tail = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    (x[0] - tail) * (x[0] + tail)
}

fn soc_interior(x: &[f64]) -> bool {
    let tail = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    x[0] > tail
}

/// Jordan product `x o y = (x^T y, x0 y1 + y0 x1)`.
fn jordan(x: &[f64], y: &[f64], out: &mut [f64]) {
    out[0] = x.iter().zip(y).map(|(a, b)| a * b).sum();
    for i in 1..x.len() {
        out[i] = x[0] * y[i] + y[0] * x[i];
    }
}

/// Solve `lambda o v = y` for `v`.
fn jordan_div(l: &[f64], y: &[f64], out: &mut [f64]) {
    let det = soc_det(l);
    let l1y1: f64 = l[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum();
    let v0 = (l[0] * y[0] - l1y1) / det;
    out[0] = v0;
    for i in 1..l.len() {
        out[i] = (y[i] - v0 * l[i]) / l[0];
    }
}

/// Largest step `alpha` keeping `x + alpha d` in the cone (may be infinite).
fn soc_step(x: &[f64], d: &[f64]) -> f64 {
    if x.len() == 1 {
        return if d[0] < 0.0 { -x[0] / d[0] } else { f64::INFINITY };
    }
    let d1n2: f64 = d[1..].iter().map(|v| v * v).sum();
    let a = d[0] * d[0] - d1n2;
    let b = 2.0 * (x[0] * d[0] - x[1..].iter().zip(&d[1..]).map(|(p, q)| p * q).sum::<f64>());
    let c = soc_det(x).max(0.0);
    let scale = d[0] * d[0] + d1n2;
    let mut roots = Vec::with_capacity(2);
    if a.abs() <= 1e-14 * scale {
        if b < 0.0 {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            if q != 0.0 {
                roots.push(q / a);
                roots.push(c / q);
            } else {
                roots.push(0.0);
            }
        }
    }
    let mut best = f64::INFINITY;
    for r in roots {
        if r > 0.0 && r < best {
            best = r;
        }
    }
    // crossing the apex also ends the cone
    if d[0] < 0.0 {
        best = best.min(-x[0] / d[0]);
    }
    best
}

struct Kkt {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    exact: DMatrix<f64>,
}

impl Kkt {
    fn new(g: &DMatrix<f64>, w2: &DMatrix<f64>) -> Self {
        let n = g.ncols();
        let m = g.nrows();
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, n), (n, m)).copy_from(&g.transpose());
        k.view_mut((n, 0), (m, n)).copy_from(g);
        k.view_mut((n, n), (m, m)).copy_from(&(-w2));
        // scaled by G alone: W^2 of an inactive cone grows without bound
        // near the end, and a delta tied to it swamps the other blocks
        let delta = 1e-13 * g.amax().max(1.0);
        let mut reg = k.clone();
        for i in 0..n {
            reg[(i, i)] += delta;
        }
        for i in n..n + m {
            reg[(i, i)] -= delta;
        }
        Self { lu: reg.lu(), exact: k }
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = self.lu.solve(rhs).unwrap_or_else(|| DVector::zeros(rhs.len()));
        for _ in 0..8 {
            let r = rhs - &self.exact * &x;
            if r.amax() <= 1e-15 * rhs.amax() {
                break;
            }
            match self.lu.solve(&r) {
                Some(dx) => x += dx,
                None => break,
            }
        }
        x
    }
}

pub fn solve(p: &SocpProblem, settings: &SolverSettings) -> Result<SocpSolution, SolverError> {
    solve_from(p, settings, None)
}

/// Solve, optionally starting the primal iterate at `start` (for instance a
/// known feasible input with a generous epigraph variable).
pub fn solve_from(
    p: &SocpProblem,
    settings: &SolverSettings,
    start: Option<&DVector<f64>>,
) -> Result<SocpSolution, SolverError> {
    p.validate()?;
    if let Some(x0) = start {
        if x0.len() != p.dim() {
            return Err(SolverError::Malformed("start point has the wrong dimension".into()));
        }
    }
    let cp = Conic::from_problem(p);
    Ok(Ipm::new(&cp, settings).run(start))
}

struct Ipm<'a> {
    cp: &'a Conic,
    tol: f64,
    max_iter: usize,
}

impl<'a> Ipm<'a> {
    fn new(cp: &'a Conic, s: &SolverSettings) -> Self {
        Self {
            cp,
            tol: s.tol,
            max_iter: s.max_iter,
        }
    }

    fn shift_into_cones(&self, v: &mut DVector<f64>) {
        let mut worst = f64::NEG_INFINITY;
        for &(o, d) in &self.cp.cones {
            let x = &v.as_slice()[o..o + d];
            let tail = x[1..].iter().map(|t| t * t).sum::<f64>().sqrt();
            worst = worst.max(tail - x[0]);
        }
        if worst >= 0.0 {
            for &(o, _) in &self.cp.cones {
                v[o] += 1.0 + worst;
            }
        }
    }

    fn initial_point(&self, start: Option<&DVector<f64>>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let cp = self.cp;
        let n = cp.g.ncols();
        let m = cp.g.nrows();
        let kkt = Kkt::new(&cp.g, &DMatrix::identity(m, m));
        let x = match start {
            Some(x0) => x0.clone(),
            None => {
                let mut rhs = DVector::zeros(n + m);
                rhs.rows_mut(n, m).copy_from(&cp.h);
                kkt.solve(&rhs).rows(0, n).into_owned()
            }
        };
        let mut s = &cp.h - &cp.g * &x;
        self.shift_into_cones(&mut s);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&cp.c));
        let mut z = kkt.solve(&rhs).rows(n, m).into_owned();
        self.shift_into_cones(&mut z);
        (x, s, z)
    }

    fn run(&self, start: Option<&DVector<f64>>) -> SocpSolution {
        let cp = self.cp;
        let n = cp.g.ncols();
        let m = cp.g.nrows();
        let ncones = cp.cones.len() as f64;
        let (mut x, mut s, mut z) = self.initial_point(start);
        let mut tau = 1.0;
        let mut kappa = 1.0;
        let hnorm = cp.h.norm().max(1.0);
        let cnorm = cp.c.norm().max(1.0);

        let mut best: Option<(f64, DVector<f64>, DVector<f64>, f64, f64, f64)> = None;
        let mut iterations = 0;
        let mut status = SolveStatus::MaxIter;

        for it in 0..=self.max_iter {
            iterations = it;
            let rx = cp.g.transpose() * &z + &cp.c * tau;
            let rz = &s + &cp.g * &x - &cp.h * tau;
            let rt = kappa + cp.c.dot(&x) + cp.h.dot(&z);
            let mu = (s.dot(&z) + tau * kappa) / (ncones + 1.0);

            let pres = rz.norm() / tau;
            let dres = rx.norm() / tau;
            let gap = s.dot(&z) / (tau * tau);
            let pcost = cp.c.dot(&x) / tau;
            let dcost = -cp.h.dot(&z) / tau;
            let score = pres / hnorm + dres / cnorm + gap.abs() / pcost.abs().max(1.0);
            if best.as_ref().map_or(true, |b| score < b.0) {
                best = Some((score, &x / tau, &z / tau, pres, dres, gap));
            }
            // the gap stalls near 1e-8 relative on badly scaled boxes; the
            // residuals carry the feasibility guarantee
            let gap_ok = gap <= 100.0 * self.tol * pcost.abs().max(dcost.abs()).max(1.0);
            if pres <= self.tol * hnorm && dres <= self.tol * cnorm && gap_ok && cp.margin(&(&x / tau)) >= -self.tol {
                status = SolveStatus::Optimal;
                best = Some((score, &x / tau, &z / tau, pres, dres, gap));
                break;
            }
            let hz = cp.h.dot(&z);
            if hz < 0.0 && (cp.g.transpose() * &z).norm() / -hz < self.tol {
                status = SolveStatus::Infeasible;
                break;
            }
            let cx = cp.c.dot(&x);
            if cx < 0.0 && (&cp.g * &x + &s).norm() / -cx < self.tol {
                status = SolveStatus::Unbounded;
                break;
            }
            if it == self.max_iter {
                break;
            }

            // scaling
            let blocks: Vec<NtBlock> = cp
                .cones
                .iter()
                .map(|&(o, d)| NtBlock::new(&s.as_slice()[o..o + d], &z.as_slice()[o..o + d]))
                .collect();
            let mut wmat = DMatrix::zeros(m, m);
            let mut winv = DMatrix::zeros(m, m);
            for (b, &(o, d)) in blocks.iter().zip(&cp.cones) {
                wmat.view_mut((o, o), (d, d)).copy_from(&b.matrix(false));
                winv.view_mut((o, o), (d, d)).copy_from(&b.matrix(true));
            }
            let lambda = &wmat * &z;
            let w2 = &wmat * &wmat;
            let kkt = Kkt::new(&cp.g, &w2);

            let mut rhs1 = DVector::zeros(n + m);
            rhs1.rows_mut(0, n).copy_from(&(-&cp.c));
            rhs1.rows_mut(n, m).copy_from(&cp.h);
            let sol1 = kkt.solve(&rhs1);
            let dx1 = sol1.rows(0, n).into_owned();
            let dz1 = sol1.rows(n, m).into_owned();

            let direction = |zeta: f64, ds_rhs: &DVector<f64>, dk_rhs: f64| {
                // lambda \ ds_rhs, cone by cone
                let mut ldiv = DVector::zeros(m);
                for &(o, d) in &cp.cones {
                    jordan_div(
                        &lambda.as_slice()[o..o + d],
                        &ds_rhs.as_slice()[o..o + d],
                        &mut ldiv.as_mut_slice()[o..o + d],
                    );
                }
                let wl = &wmat * &ldiv;
                let mut rhs2 = DVector::zeros(n + m);
                rhs2.rows_mut(0, n).copy_from(&(-&rx * zeta));
                rhs2.rows_mut(n, m).copy_from(&(-&rz * zeta - &wl));
                let sol2 = kkt.solve(&rhs2);
                let dx2 = sol2.rows(0, n).into_owned();
                let dz2 = sol2.rows(n, m).into_owned();
                let num = -zeta * rt - cp.c.dot(&dx2) - cp.h.dot(&dz2) - dk_rhs / tau;
                let den = cp.c.dot(&dx1) + cp.h.dot(&dz1) - kappa / tau;
                let dtau = num / den;
                let dx = dx2 + &dx1 * dtau;
                let dz = dz2 + &dz1 * dtau;
                let ds = &wl - &w2 * &dz;
                let dkappa = (dk_rhs - kappa * dtau) / tau;
                (dx, dz, ds, dtau, dkappa)
            };

            let step_to_boundary = |ds: &DVector<f64>, dz: &DVector<f64>, dtau: f64, dkappa: f64| {
                let mut a = f64::INFINITY;
                for &(o, d) in &cp.cones {
                    a = a.min(soc_step(&s.as_slice()[o..o + d], &ds.as_slice()[o..o + d]));
                    a = a.min(soc_step(&z.as_slice()[o..o + d], &dz.as_slice()[o..o + d]));
                }
                if dtau < 0.0 {
                    a = a.min(-tau / dtau);
                }
                if dkappa < 0.0 {
                    a = a.min(-kappa / dkappa);
                }
                a
            };

            // predictor
            let mut ll = DVector::zeros(m);
            for &(o, d) in &cp.cones {
                let l = &lambda.as_slice()[o..o + d];
                jordan(l, l, &mut ll.as_mut_slice()[o..o + d]);
            }
            let ds_aff_rhs = -&ll;
            let (_, dz_a, ds_a, dtau_a, dkappa_a) = direction(1.0, &ds_aff_rhs, -tau * kappa);
            let alpha_a = step_to_boundary(&ds_a, &dz_a, dtau_a, dkappa_a).min(1.0);
            let sigma = (1.0 - alpha_a).powi(3);

            // corrector
            let ws = &winv * &ds_a;
            let wz = &wmat * &dz_a;
            let mut ds_rhs = -&ll;
            let mut tmp = vec![0.0; m];
            for &(o, d) in &cp.cones {
                jordan(&ws.as_slice()[o..o + d], &wz.as_slice()[o..o + d], &mut tmp[o..o + d]);
                ds_rhs[o] += sigma * mu;
                for i in o..o + d {
                    ds_rhs[i] -= tmp[i];
                }
            }
            let dk_rhs = -tau * kappa + sigma * mu - dtau_a * dkappa_a;
            let (dx, dz, ds, dtau, dkappa) = direction(1.0 - sigma, &ds_rhs, dk_rhs);
            let mut alpha = (0.99 * step_to_boundary(&ds, &dz, dtau, dkappa)).min(1.0);

            // guard against rounding pushing an iterate onto the boundary
            let mut accepted = false;
            for _ in 0..30 {
                let sn = &s + &ds * alpha;
                let zn = &z + &dz * alpha;
                let tn = tau + alpha * dtau;
                let kn = kappa + alpha * dkappa;
                let inside = tn > 0.0
                    && kn > 0.0
                    && cp.cones.iter().all(|&(o, d)| {
                        soc_interior(&sn.as_slice()[o..o + d]) && soc_interior(&zn.as_slice()[o..o + d])
                    });
                if inside {
                    x += &dx * alpha;
                    s = sn;
                    z = zn;
                    tau = tn;
                    kappa = kn;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted || !alpha.is_finite() || x.iter().any(|v| !v.is_finite()) {
                break;
            }
        }

        match status {
            SolveStatus::Infeasible | SolveStatus::Unbounded => SocpSolution {
                w: &x / tau,
                z: z.clone(),
                status,
                iterations,
                primal_residual: f64::NAN,
                dual_residual: f64::NAN,
                gap: f64::NAN,
            },
            _ => {
                let (_, w, zz, pres, dres, gap) = best.expect("at least one iterate evaluated");
                SocpSolution {
                    w,
                    z: zz,
                    status,
                    iterations,
                    primal_residual: pres,
                    dual_residual: dres,
                    gap,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interior(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let mut x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let tail = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        x[0] = tail + rng.random_range(0.1..2.0);
        x
    }

    #[test]
    fn nt_scaling_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..5 {
            for _ in 0..20 {
                let s = interior(&mut rng, d);
                let z = interior(&mut rng, d);
                let b = NtBlock::new(&s, &z);
                let w = b.matrix(false);
                let wi = b.matrix(true);
                let sv = DVector::from_vec(s.clone());
                let zv = DVector::from_vec(z.clone());
                assert!((&w * &zv - &wi * &sv).norm() < 1e-10);
                assert!((&w * &wi - DMatrix::identity(d, d)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn jordan_division_inverts_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for d in 1..5 {
            let l = interior(&mut rng, d);
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut v = vec![0.0; d];
            jordan_div(&l, &y, &mut v);
            let mut back = vec![0.0; d];
            jordan(&l, &v, &mut back);
            for i in 0..d {
                assert_relative_eq!(back[i], y[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn step_length_lands_on_boundary() {
        let x = [2.0, 0.0];
        let d = [-1.0, 1.0];
        let a = soc_step(&x, &d);
        // (2 - a)^2 = a^2 -> a = 1
        assert_relative_eq!(a, 1.0, epsilon = 1e-14);
        assert!(soc_step(&x, &[1.0, 0.5]).is_infinite());
        assert_relative_eq!(soc_step(&[3.0], &[-1.5]), 2.0);
    }

    fn epigraph(u_ref: &[f64]) -> SocpProblem {
        let m = u_ref.len();
        let mut cost = DVector::zeros(m + 1);
        cost[m] = 1.0;
        let mut p = SocpProblem::new(cost);
        let mut a = DMatrix::zeros(m, m + 1);
        for i in 0..m {
            a[(i, i)] = 1.0;
        }
        let mut c = DVector::zeros(m + 1);
        c[m] = 1.0;
        p.add_soc(a, -DVector::from_column_slice(u_ref), c, 0.0);
        p
    }

    #[test]
    fn unconstrained_projection() {
        let p = epigraph(&[1.5, -2.0]);
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.w[0] - 1.5).abs() < 1e-6);
        assert!((sol.w[1] + 2.0).abs() < 1e-6);
        assert!(sol.w[2].abs() < 1e-6);
    }

    #[test]
    fn halfspace_projection() {
        // minimize ||u - 0|| subject to 2 u - 4 >= 0 -> u = 2
        let mut p = epigraph(&[0.0]);
        p.add_linear(DVector::from_vec(vec![2.0, 0.0]), -4.0);
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.w[0], 2.0, epsilon = 1e-6);
        assert!(p.min_margin(&sol.w) >= -1e-8);
    }

    #[test]
    fn disk_projection() {
        // project (3, 4) onto the unit disk
        let mut p = epigraph(&[3.0, 4.0]);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        p.add_soc(a, DVector::zeros(2), DVector::zeros(3), 1.0);
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.w[0], 0.6, epsilon = 1e-6);
        assert_relative_eq!(sol.w[1], 0.8, epsilon = 1e-6);
        assert_relative_eq!(sol.w[2], 4.0, epsilon = 1e-6);
        assert!(p.min_margin(&sol.w) >= -1e-8);
    }

    #[test]
    fn detects_infeasible() {
        // u >= 1 and u <= -1
        let mut p = epigraph(&[0.0]);
        p.add_linear(DVector::from_vec(vec![1.0, 0.0]), -1.0);
        p.add_linear(DVector::from_vec(vec![-1.0, 0.0]), -1.0);
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let mut p = SocpProblem::new(DVector::from_vec(vec![-1.0]));
        p.add_linear(DVector::from_vec(vec![1.0]), 0.0);
        let sol = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let mut p = epigraph(&[3.0, 4.0]);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        p.add_soc(a, DVector::zeros(2), DVector::zeros(3), 1.0);
        let start = DVector::from_vec(vec![0.0, 0.0, 100.0]);
        let sol = solve_from(&p, &SolverSettings::default(), Some(&start)).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.w[2], 4.0, epsilon = 1e-6);
    }

    #[test]
    fn deterministic() {
        let mut p = epigraph(&[0.3, -0.2]);
        p.add_soc(
            DMatrix::from_row_slice(2, 3, &[0.5, 0.1, 0.0, 0.2, 0.4, 0.0]),
            DVector::from_vec(vec![0.1, -0.3]),
            DVector::from_vec(vec![1.0, 0.5, 0.0]),
            -0.5,
        );
        let a = solve(&p, &SolverSettings::default()).unwrap();
        let b = solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_malformed() {
        let p = SocpProblem::new(DVector::from_vec(vec![1.0]));
        assert!(solve(&p, &SolverSettings::default()).is_err());
        let mut p = SocpProblem::new(DVector::from_vec(vec![1.0]));
        p.add_linear(DVector::from_vec(vec![1.0, 2.0]), 0.0);
        assert!(solve(&p, &SolverSettings::default()).is_err());
    }
}
