//! Episode orchestration and file outputs behind the CLI.

pub mod config;
pub mod verify;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::FilterError;
use crate::gp::{Dataset, GpError};
use crate::learner::{get_lambda_dagger, run_episode, LearnerError, Scenario, SimTrace, Trigger, Variant};

pub use config::{GridConfig, LoadedConfig, ScenarioConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

/// Thread pool capped by `SAFE_CBF_LAB_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SAFE_CBF_LAB_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| HarnessError::Usage(format!("SAFE_CBF_LAB_THREADS={v:?} is not a count")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn trace_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("x{i}")));
    h.extend((0..m).map(|i| format!("u{i}")));
    for c in [
        "B",
        "lambda_dagger",
        "case",
        "N",
        "trigger",
        "status",
        "slack",
        "bound_ok",
    ] {
        h.push(c.to_string());
    }
    h
}

/// Trace as CSV text with the fixed header.
pub fn trace_csv(tr: &SimTrace) -> Result<String, HarnessError> {
    let (n, m) = (tr.final_dataset.state_dim(), tr.final_dataset.input_dim());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(trace_header(n, m))?;
    for r in &tr.rows {
        let mut rec: Vec<String> = vec![r.t.to_string()];
        rec.extend(r.x.iter().map(|v| v.to_string()));
        rec.extend(r.u.iter().map(|v| v.to_string()));
        rec.push(r.b.to_string());
        rec.push(r.lambda_dagger.to_string());
        rec.push(r.case.as_str().to_string());
        rec.push(r.n.to_string());
        rec.push(r.trigger.as_str().to_string());
        rec.push(r.status.clone());
        rec.push(r.slack.to_string());
        rec.push(u8::from(r.bound_ok).to_string());
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "min_B")]
    pub min_b: f64,
    pub n_event_triggers: usize,
    pub n_time_triggers: usize,
    #[serde(rename = "final_N")]
    pub final_n: usize,
    pub feasible_rate: f64,
    pub bound_ok_rate: f64,
    /// Wall-clock seconds; the only field that varies between identical runs.
    pub runtime: f64,
    pub input_bound_violations: usize,
    pub completed: bool,
    pub abort_reason: Option<String>,
    pub variant: String,
    pub seed: u64,
    pub epsilon: f64,
    pub config_hash: String,
}

pub fn metrics(tr: &SimTrace, config_hash: &str) -> Metrics {
    Metrics {
        min_b: tr.min_b(),
        n_event_triggers: tr.count(Trigger::Event),
        n_time_triggers: tr.count(Trigger::Time),
        final_n: tr.final_dataset.len(),
        feasible_rate: tr.feasible_rate(),
        bound_ok_rate: tr.bound_ok_rate(),
        runtime: tr.runtime_s,
        input_bound_violations: tr.input_violations(),
        completed: tr.completed(),
        abort_reason: match &tr.outcome {
            crate::learner::Outcome::Completed => None,
            crate::learner::Outcome::Aborted { t, reason } => Some(format!("t = {t}: {reason}")),
        },
        variant: tr.variant.to_string(),
        seed: tr.seed,
        epsilon: tr.epsilon,
        config_hash: config_hash.to_string(),
    }
}

pub fn episode_stem(tr: &SimTrace) -> String {
    format!("{}_{}_seed{}", tr.scenario, tr.variant, tr.seed)
}

/// Write `<stem>.csv` and `<stem>.metrics.json` into `dir`.
pub fn write_episode(tr: &SimTrace, dir: &Path, config_hash: &str) -> Result<(PathBuf, PathBuf), HarnessError> {
    fs::create_dir_all(dir)?;
    let stem = episode_stem(tr);
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.metrics.json"));
    fs::write(&csv_path, trace_csv(tr)?)?;
    let mut f = fs::File::create(&json_path)?;
    serde_json::to_writer_pretty(&mut f, &metrics(tr, config_hash)).map_err(|e| HarnessError::Io(e.to_string()))?;
    writeln!(f)?;
    Ok((csv_path, json_path))
}

pub fn output_dir(cfg: &LoadedConfig, out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => cfg.resolve(&cfg.config.output_dir),
    }
}

/// Run one episode and write its trace and metrics.
pub fn run(
    cfg: &LoadedConfig,
    variant: Variant,
    seed: u64,
    out: Option<&Path>,
) -> Result<(SimTrace, PathBuf, PathBuf), HarnessError> {
    let sc = scenario_for(cfg, &[variant])?;
    let tr = run_episode(&sc, variant, seed)?;
    let (c, j) = write_episode(&tr, &output_dir(cfg, out), &cfg.hash)?;
    Ok((tr, c, j))
}

fn scenario_for(cfg: &LoadedConfig, variants: &[Variant]) -> Result<Scenario, HarnessError> {
    let mut sc = cfg.base_scenario()?;
    if variants.contains(&Variant::Alg1Prior) {
        sc.prior = Some(cfg.prior_dataset(&sc)?);
    }
    Ok(sc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub variant: Variant,
    pub seed: u64,
    pub min_b: f64,
    pub violation: bool,
    /// Some step was classified infeasible.
    pub infeasible_seen: bool,
    pub completed: bool,
    pub n_event_triggers: usize,
    pub n_time_triggers: usize,
    pub feasible_rate: f64,
    pub bound_ok_rate: f64,
    pub runtime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub episodes: usize,
    /// Fraction of episodes with `min B >= 0` that ran to completion.
    pub safety_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub summary: Vec<VariantSummary>,
}

impl Comparison {
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "variant",
            "seed",
            "min_B",
            "violation",
            "infeasible_seen",
            "completed",
            "n_event_triggers",
            "n_time_triggers",
            "feasible_rate",
            "bound_ok_rate",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.variant.to_string(),
                r.seed.to_string(),
                r.min_b.to_string(),
                u8::from(r.violation).to_string(),
                u8::from(r.infeasible_seen).to_string(),
                u8::from(r.completed).to_string(),
                r.n_event_triggers.to_string(),
                r.n_time_triggers.to_string(),
                r.feasible_rate.to_string(),
                r.bound_ok_rate.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<16}{:>6}{:>12}{:>6}{:>6}{:>7}{:>7}{:>9}{:>9}\n",
            "variant", "seed", "min_B", "viol", "done", "event", "time", "feas", "bound"
        );
        for r in &self.rows {
            s += &format!(
                "{:<16}{:>6}{:>12.4}{:>6}{:>6}{:>7}{:>7}{:>9.3}{:>9.3}\n",
                r.variant.as_str(),
                r.seed,
                r.min_b,
                u8::from(r.violation),
                u8::from(r.completed),
                r.n_event_triggers,
                r.n_time_triggers,
                r.feasible_rate,
                r.bound_ok_rate
            );
        }
        for v in &self.summary {
            s += &format!(
                "{:<16} safety rate {:.3} over {} episodes\n",
                v.variant.as_str(),
                v.safety_rate,
                v.episodes
            );
        }
        s
    }
}

/// Run every `(variant, seed)` pair in parallel. Traces are returned in
/// input order and written to `out` when given.
pub fn run_many(sc: &Scenario, variants: &[Variant], seeds: &[u64]) -> Result<Vec<SimTrace>, HarnessError> {
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|v| seeds.iter().map(move |s| (*v, *s)))
        .collect();
    let pool = thread_pool()?;
    pool.install(|| {
        jobs.par_iter()
            .map(|(v, s)| run_episode(sc, *v, *s).map_err(HarnessError::from))
            .collect()
    })
}

pub fn summarize(traces: &[SimTrace]) -> Comparison {
    let rows: Vec<CompareRow> = traces
        .iter()
        .map(|tr| CompareRow {
            variant: tr.variant,
            seed: tr.seed,
            min_b: tr.min_b(),
            violation: tr.min_b() < 0.0,
            infeasible_seen: tr.rows.iter().any(|r| !r.feasible),
            completed: tr.completed(),
            n_event_triggers: tr.count(Trigger::Event),
            n_time_triggers: tr.count(Trigger::Time),
            feasible_rate: tr.feasible_rate(),
            bound_ok_rate: tr.bound_ok_rate(),
            runtime: tr.runtime_s,
        })
        .collect();
    let mut summary = Vec::new();
    for v in Variant::ALL {
        let mine: Vec<&CompareRow> = rows.iter().filter(|r| r.variant == v).collect();
        if mine.is_empty() {
            continue;
        }
        let safe = mine.iter().filter(|r| !r.violation && r.completed).count();
        summary.push(VariantSummary {
            variant: v,
            episodes: mine.len(),
            safety_rate: safe as f64 / mine.len() as f64,
        });
    }
    Comparison { rows, summary }
}

pub fn compare(
    cfg: &LoadedConfig,
    variants: &[Variant],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Comparison, HarnessError> {
    if variants.is_empty() {
        return Err(HarnessError::Usage("compare needs at least one variant".into()));
    }
    if seeds.is_empty() {
        return Err(HarnessError::Usage("compare needs at least one seed".into()));
    }
    let sc = scenario_for(cfg, variants)?;
    let traces = run_many(&sc, variants, seeds)?;
    let cmp = summarize(&traces);
    if let Some(dir) = out {
        for tr in &traces {
            write_episode(tr, dir, &cfg.hash)?;
        }
        fs::write(dir.join(format!("{}_compare.csv", cfg.config.name)), cmp.to_csv()?)?;
    }
    Ok(cmp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaMap {
    pub axes: [usize; 2],
    /// `(snapshot label, coordinate a, coordinate b, lambda_dagger)`.
    pub cells: Vec<(String, f64, f64, f64)>,
}

impl LambdaMap {
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "snapshot".to_string(),
            format!("x{}", self.axes[0]),
            format!("x{}", self.axes[1]),
            "lambda_dagger".to_string(),
        ])?;
        for (label, a, b, l) in &self.cells {
            w.write_record([label.clone(), a.to_string(), b.to_string(), l.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn negative_cells(&self, label: &str) -> Vec<(f64, f64)> {
        self.cells
            .iter()
            .filter(|c| c.0 == label && c.3 < 0.0)
            .map(|c| (c.1, c.2))
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.0) {
                out.push(c.0.clone());
            }
        }
        out
    }
}

pub fn grid_points(g: &GridConfig, base: &DVector<f64>) -> Vec<DVector<f64>> {
    let mut pts = Vec::with_capacity(g.points[0] * g.points[1]);
    let at = |k: usize, i: usize| g.lower[k] + (g.upper[k] - g.lower[k]) * i as f64 / (g.points[k] - 1) as f64;
    for i in 0..g.points[0] {
        for j in 0..g.points[1] {
            let mut x = if g.fixed.is_empty() {
                base.clone()
            } else {
                DVector::from_vec(g.fixed.clone())
            };
            x[g.axes[0]] = at(0, i);
            x[g.axes[1]] = at(1, j);
            pts.push(x);
        }
    }
    pts
}

/// `lambda_dagger` over the grid for each labelled dataset.
pub fn lambda_map(sc: &Scenario, g: &GridConfig, snapshots: &[(String, Dataset)]) -> Result<LambdaMap, HarnessError> {
    let pts = grid_points(g, &sc.x0);
    let mut cells = Vec::with_capacity(pts.len() * snapshots.len());
    for (label, ds) in snapshots {
        let vals: Vec<f64> = pts
            .par_iter()
            .map(|x| get_lambda_dagger(x, ds, sc.nominal.as_ref(), &sc.filter).map(|r| r.0))
            .collect::<Result<_, _>>()?;
        for (x, l) in pts.iter().zip(vals) {
            cells.push((label.clone(), x[g.axes[0]], x[g.axes[1]], l));
        }
    }
    Ok(LambdaMap { axes: g.axes, cells })
}

/// Empty, first-event and final snapshots of one `alg1` episode.
pub fn episode_snapshots(tr: &SimTrace) -> Vec<(String, Dataset)> {
    let mut s = vec![("empty".to_string(), tr.initial_dataset.clone())];
    if let Some(d) = &tr.first_event_dataset {
        s.push(("first_event".to_string(), d.clone()));
    }
    s.push(("final".to_string(), tr.final_dataset.clone()));
    s
}

/// Counts for the map-growth check: `(empty negatives, final negatives,
/// empty negatives that stay negative)`.
pub fn map_growth(map: &LambdaMap, before: &str, after: &str) -> (usize, usize, usize) {
    let b = map.negative_cells(before);
    let a = map.negative_cells(after);
    let kept = b.iter().filter(|c| a.contains(c)).count();
    (b.len(), a.len(), kept)
}

/// Prior dataset generated by the seeded warmup and written as JSON.
pub fn warmup(cfg: &LoadedConfig, out: &Path) -> Result<Dataset, HarnessError> {
    let sc = cfg.base_scenario()?;
    let p = cfg.prior_settings();
    let ds = crate::learner::warmup_dataset(&sc, p.size, p.spread, p.seed)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(out, ds.to_json())?;
    Ok(ds)
}
