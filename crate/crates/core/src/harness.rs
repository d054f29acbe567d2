//! Refinement and localisation studies, with CSV/JSON report files.
//!
//! A convergence study solves one problem at `(τ0·4^{−i}, h0·2^{−i})` and
//! fits the slope of log-error against log `h`. A localisation study varies
//! the computational radius `R` with everything else fixed and fits the
//! decay of the sup-difference on `B_{R2}` against `R1 − R`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{put_payoff, CutoffPayoff, LogModel, MarketModel, PayoffSpec};
use crate::solver::{solve, DiscreteSolution, SolveConfig};
use crate::stencil::{build_1d, StencilDecomposition};

pub const SCHEMA_VERSION: &str = "1.0.0";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Least-squares line `y ≈ slope·x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// `None` for fewer than two points, non-finite data or constant `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || n != y.len() || x.iter().chain(y).any(|v| !v.is_finite()) {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LineFit { slope, intercept: my - slope * mx, r_squared })
}

/// A problem the studies re-solve at different parameters.
#[derive(Clone, Debug)]
pub struct StudyProblem {
    pub model: LogModel,
    pub dec: StencilDecomposition,
    pub payoff: PayoffSpec,
    pub base: SolveConfig,
    /// Free-text description recorded in reports.
    pub description: String,
}

impl StudyProblem {
    pub fn solve_with(&self, config: &SolveConfig) -> Result<DiscreteSolution> {
        let cutoff = CutoffPayoff::new(self.payoff.clone(), config.r1, config.x0.clone())?;
        solve(&self.model, &self.dec, &cutoff, config)
    }
}

/// One-asset put under constant-coefficient Black–Scholes dynamics, in log
/// coordinates anchored at `x0 = ln s0`. `base` supplies the scheme
/// parameters; its `x0` and `expiry` are overwritten.
pub fn bs_put_problem(
    s0: f64,
    strike: f64,
    rate: f64,
    sigma: f64,
    expiry: f64,
    mut base: SolveConfig,
) -> Result<StudyProblem> {
    let market = MarketModel::black_scholes(rate, sigma, expiry)?;
    let model = market.to_log_model();
    let dec = build_1d(&model)?;
    base.x0 = vec![s0.ln()];
    base.expiry = expiry;
    Ok(StudyProblem {
        model,
        dec,
        payoff: put_payoff(strike)?,
        base,
        description: format!(
            "1-D Black-Scholes American put: S0 = {s0}, K = {strike}, r = {rate}, sigma = {sigma}, T = {expiry}"
        ),
    })
}

/// A study that stopped early, with whatever it had finished.
#[derive(Debug)]
pub struct StudyFailure<R> {
    pub partial: R,
    pub error: Error,
}

pub type StudyResult<R> = std::result::Result<R, Box<StudyFailure<R>>>;

/// What errors are measured against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceSpec {
    /// Known values at given points, e.g. a tree price at the anchor.
    Fixed { description: String, points: Vec<Vec<f64>>, values: Vec<f64> },
    /// One extra refinement beyond the last level, evaluated at the lattice
    /// points of the coarsest grid inside `B_{R2}` (self-convergence).
    FinestGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSpec {
    pub tau0: f64,
    pub h0: f64,
    pub levels: usize,
    pub r2: f64,
    pub reference: ReferenceSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    pub kind: String,
    pub description: String,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub tau: f64,
    pub h: f64,
    /// Max error over the reference points.
    pub error: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: String,
    pub tool_version: String,
    pub kind: String,
    pub model: String,
    pub config: SolveConfig,
    pub spec: ConvergenceSpec,
    pub reference: ReferenceInfo,
    pub rows: Vec<ConvergenceRow>,
    /// Values at the reference points, one list per row.
    pub values: Vec<Vec<f64>>,
    /// Slope of log error against log h; `None` when undefined.
    pub h_slope: Option<f64>,
    /// Slope of log error against log τ.
    pub tau_slope: Option<f64>,
    pub fit_r_squared: Option<f64>,
    pub strictly_decreasing: bool,
    pub complete: bool,
    pub error: Option<String>,
}

impl ConvergenceReport {
    fn empty(problem: &StudyProblem, spec: &ConvergenceSpec) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            tool_version: TOOL_VERSION.into(),
            kind: "convergence".into(),
            model: problem.description.clone(),
            config: problem.base.clone(),
            spec: spec.clone(),
            reference: ReferenceInfo {
                kind: String::new(),
                description: String::new(),
                points: Vec::new(),
                values: Vec::new(),
            },
            rows: Vec::new(),
            values: Vec::new(),
            h_slope: None,
            tau_slope: None,
            fit_r_squared: None,
            strictly_decreasing: false,
            complete: false,
            error: None,
        }
    }

    fn finish_fit(&mut self) {
        let (mut lh, mut lt, mut le) = (Vec::new(), Vec::new(), Vec::new());
        for row in self.rows.iter().filter(|r| r.error > 0.0) {
            lh.push(row.h.ln());
            lt.push(row.tau.ln());
            le.push(row.error.ln());
        }
        let fit_h = fit_line(&lh, &le);
        self.h_slope = fit_h.map(|f| f.slope);
        self.fit_r_squared = fit_h.map(|f| f.r_squared);
        self.tau_slope = fit_line(&lt, &le).map(|f| f.slope);
        self.strictly_decreasing = !self.rows.is_empty() && self.rows.windows(2).all(|w| w[1].error < w[0].error);
    }
}

/// Lattice points `x0 + h0·i` inside the closed ball `B_{r2}(x0)`. They lie
/// on every refined grid.
pub fn common_points(x0: &[f64], h0: f64, r2: f64) -> Vec<Vec<f64>> {
    let d = x0.len();
    let m = (r2 / h0).floor() as i64;
    let mut out = Vec::new();
    let mut idx = vec![-m; d];
    loop {
        let x: Vec<f64> = idx.iter().zip(x0).map(|(i, c)| c + h0 * *i as f64).collect();
        let r: f64 = idx.iter().map(|i| (h0 * *i as f64).powi(2)).sum::<f64>().sqrt();
        if r <= r2 * (1.0 + 1e-12) {
            out.push(x);
        }
        let mut a = 0;
        loop {
            if a == d {
                return out;
            }
            idx[a] += 1;
            if idx[a] <= m {
                break;
            }
            idx[a] = -m;
            a += 1;
        }
    }
}

fn level_config(base: &SolveConfig, tau0: f64, h0: f64, i: usize) -> SolveConfig {
    let mut c = base.clone();
    c.tau = tau0 / 4f64.powi(i as i32);
    c.h = h0 / 2f64.powi(i as i32);
    c
}

struct LevelRun {
    values: Vec<f64>,
    residual: f64,
    iterations: usize,
}

fn run_level(problem: &StudyProblem, cfg: &SolveConfig, points: &[Vec<f64>]) -> Result<LevelRun> {
    let sol = problem.solve_with(cfg)?;
    let values = points.iter().map(|x| sol.price_at(x)).collect::<Result<_>>()?;
    Ok(LevelRun { values, residual: sol.solver_residual(), iterations: sol.total_iterations() })
}

/// Solves at `levels` refinements and measures the error against the
/// reference. Solves run on the current rayon pool; rows are assembled in
/// refinement order.
pub fn convergence_study(problem: &StudyProblem, spec: &ConvergenceSpec) -> StudyResult<ConvergenceReport> {
    let mut report = ConvergenceReport::empty(problem, spec);
    let fail = |report: ConvergenceReport, error: Error| Box::new(StudyFailure { partial: report, error });
    if spec.levels < 3 {
        return Err(fail(report, Error::Study(format!("need at least 3 refinement levels, got {}", spec.levels))));
    }
    if !(spec.tau0 > 0.0 && spec.h0 > 0.0 && spec.r2 > 0.0) {
        return Err(fail(report, Error::Study("tau0, h0 and R2 must be positive".into())));
    }

    let (points, reference_values, extra) = match &spec.reference {
        ReferenceSpec::Fixed { description, points, values } => {
            if points.len() != values.len() || points.is_empty() {
                return Err(fail(
                    report,
                    Error::Study("reference points and values must match and be non-empty".into()),
                ));
            }
            report.reference = ReferenceInfo {
                kind: "fixed".into(),
                description: description.clone(),
                points: points.clone(),
                values: values.clone(),
            };
            (points.clone(), Some(values.clone()), 0)
        }
        ReferenceSpec::FinestGrid => (common_points(&problem.base.x0, spec.h0, spec.r2), None, 1),
    };

    let configs: Vec<SolveConfig> =
        (0..spec.levels + extra).map(|i| level_config(&problem.base, spec.tau0, spec.h0, i)).collect();
    let runs: Vec<Result<LevelRun>> = configs.par_iter().map(|c| run_level(problem, c, &points)).collect();

    let reference_values = match reference_values {
        Some(v) => v,
        None => {
            report.reference = ReferenceInfo {
                kind: "finest-grid".into(),
                description: format!(
                    "self-convergence against the solution at refinement level {} (tau = {}, h = {})",
                    spec.levels, configs[spec.levels].tau, configs[spec.levels].h
                ),
                points: points.clone(),
                values: Vec::new(),
            };
            match &runs[spec.levels] {
                Ok(run) => {
                    report.reference.values = run.values.clone();
                    run.values.clone()
                }
                Err(e) => return Err(fail(report, e.clone())),
            }
        }
    };

    for (i, run) in runs.into_iter().take(spec.levels).enumerate() {
        match run {
            Ok(run) => {
                let error = run.values.iter().zip(&reference_values).map(|(v, r)| (v - r).abs()).fold(0.0, f64::max);
                report.rows.push(ConvergenceRow {
                    level: i,
                    tau: configs[i].tau,
                    h: configs[i].h,
                    error,
                    residual: run.residual,
                    iterations: run.iterations,
                });
                report.values.push(run.values);
            }
            Err(e) => {
                report.finish_fit();
                report.error = Some(e.to_string());
                return Err(fail(report, e));
            }
        }
    }
    report.finish_fit();
    report.complete = true;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalisationSpec {
    pub r_values: Vec<f64>,
    pub r1: f64,
    pub r2: f64,
    /// Optional cutoff radii probed at the largest `R`.
    pub r1_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalisationRow {
    pub r: f64,
    /// Sup over lattice points of `[t0, T] × B_{R2}` of `|w^R − w^{R_max}|`.
    pub sup_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffRow {
    pub r1: f64,
    pub sup_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalisationReport {
    pub schema_version: String,
    pub tool_version: String,
    pub kind: String,
    pub model: String,
    pub config: SolveConfig,
    pub spec: LocalisationSpec,
    pub r_max: f64,
    pub rows: Vec<LocalisationRow>,
    /// Differences below this value are left out of the fit.
    pub exclusion_threshold: f64,
    pub fit_points: usize,
    /// Slope of log difference against `R1 − R`.
    pub gamma_hat: Option<f64>,
    pub fit_r_squared: Option<f64>,
    /// Differences non-increasing in `R`.
    pub monotone: bool,
    pub r1_rows: Vec<CutoffRow>,
    pub complete: bool,
    pub error: Option<String>,
}

fn sup_diff_on_ball(a: &DiscreteSolution, b: &DiscreteSolution, center: &[f64], r2: f64) -> Result<f64> {
    let la = a.lattice();
    let lb = b.lattice();
    if la.n_levels() != lb.n_levels() {
        return Err(Error::Study("runs have different time levels".into()));
    }
    let mut worst: f64 = 0.0;
    for id in 0..la.n_space() {
        let x = la.position(id);
        if crate::model::euclid(&x, center) > r2 * (1.0 + 1e-12) {
            continue;
        }
        let other = lb.node_id(la.index(id)).ok_or_else(|| Error::OutsideLattice { x: x.clone() })?;
        for j in 0..la.n_levels() {
            worst = worst.max((a.values().get(j, id) - b.values().get(j, other)).abs());
        }
    }
    Ok(worst)
}

pub fn localisation_study(problem: &StudyProblem, spec: &LocalisationSpec) -> StudyResult<LocalisationReport> {
    let r_max = spec.r_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut report = LocalisationReport {
        schema_version: SCHEMA_VERSION.into(),
        tool_version: TOOL_VERSION.into(),
        kind: "localisation".into(),
        model: problem.description.clone(),
        config: problem.base.clone(),
        spec: spec.clone(),
        r_max,
        rows: Vec::new(),
        exclusion_threshold: 10.0 * problem.base.lcp_tol,
        fit_points: 0,
        gamma_hat: None,
        fit_r_squared: None,
        monotone: false,
        r1_rows: Vec::new(),
        complete: false,
        error: None,
    };
    let fail = |report: LocalisationReport, error: Error| Box::new(StudyFailure { partial: report, error });
    if spec.r_values.len() < 4 {
        return Err(fail(report, Error::Study(format!("need at least 4 R values, got {}", spec.r_values.len()))));
    }
    if !(spec.r2 > 0.0 && spec.r1 > spec.r2) {
        return Err(fail(report, Error::Study(format!("need R1 > R2 > 0, got R1 = {}, R2 = {}", spec.r1, spec.r2))));
    }
    if let Some(r) = spec.r_values.iter().find(|r| !(**r > spec.r1)) {
        return Err(fail(report, Error::Study(format!("every R must exceed R1 = {}, got {r}", spec.r1))));
    }
    if let Some(r1) = spec.r1_values.iter().find(|v| !(**v > spec.r2 && **v < r_max)) {
        return Err(fail(report, Error::Study(format!("cutoff radii must lie in (R2, R_max), got {r1}"))));
    }

    let mut r_sorted = spec.r_values.clone();
    r_sorted.sort_by(f64::total_cmp);
    let configs: Vec<SolveConfig> = r_sorted
        .iter()
        .map(|r| {
            let mut c = problem.base.clone();
            c.r = *r;
            c.r1 = spec.r1;
            c
        })
        .collect();
    let runs: Vec<Result<DiscreteSolution>> = configs.par_iter().map(|c| problem.solve_with(c)).collect();
    let reference = match runs.last().expect("at least four runs") {
        Ok(sol) => sol,
        Err(e) => {
            report.error = Some(e.to_string());
            return Err(fail(report, e.clone()));
        }
    };
    let center = problem.base.x0.clone();
    for (r, run) in r_sorted.iter().zip(&runs) {
        let diff =
            run.as_ref().map_err(Clone::clone).and_then(|sol| sup_diff_on_ball(sol, reference, &center, spec.r2));
        match diff {
            Ok(d) => report.rows.push(LocalisationRow { r: *r, sup_diff: d }),
            Err(e) => {
                report.error = Some(e.to_string());
                return Err(fail(report, e));
            }
        }
    }
    drop(runs);

    let mut r1_sorted = spec.r1_values.clone();
    r1_sorted.sort_by(f64::total_cmp);
    if !r1_sorted.is_empty() {
        let configs: Vec<SolveConfig> = r1_sorted
            .iter()
            .map(|r1| {
                let mut c = problem.base.clone();
                c.r = r_max;
                c.r1 = *r1;
                c
            })
            .collect();
        let runs: Vec<Result<DiscreteSolution>> = configs.par_iter().map(|c| problem.solve_with(c)).collect();
        let last = runs.last().expect("non-empty").as_ref().map_err(Clone::clone);
        for (r1, run) in r1_sorted.iter().zip(&runs) {
            let diff = match (&last, run) {
                (Ok(reference), Ok(sol)) => sup_diff_on_ball(sol, reference, &center, spec.r2),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            };
            match diff {
                Ok(d) => report.r1_rows.push(CutoffRow { r1: *r1, sup_diff: d }),
                Err(e) => {
                    report.error = Some(e.to_string());
                    return Err(fail(report, e));
                }
            }
        }
    }

    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for row in &report.rows {
        if row.r < r_max && row.sup_diff >= report.exclusion_threshold {
            xs.push(spec.r1 - row.r);
            ys.push(row.sup_diff.ln());
        }
    }
    report.fit_points = xs.len();
    let fit = fit_line(&xs, &ys);
    report.gamma_hat = fit.map(|f| f.slope);
    report.fit_r_squared = fit.map(|f| f.r_squared);
    report.monotone = report.rows.windows(2).all(|w| w[1].sup_diff <= w[0].sup_diff);
    report.complete = true;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// From the file extension; anything other than `.csv` is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Json,
        }
    }
}

/// A study report with a flat CSV view of its rows.
pub trait Report: Serialize + DeserializeOwned {
    type Row: Serialize + DeserializeOwned;
    const CSV_HEADER: &'static [&'static str];
    fn rows(&self) -> &[Self::Row];
}

impl Report for ConvergenceReport {
    type Row = ConvergenceRow;
    const CSV_HEADER: &'static [&'static str] = &["level", "tau", "h", "error", "residual", "iterations"];
    fn rows(&self) -> &[ConvergenceRow] {
        &self.rows
    }
}

impl Report for LocalisationReport {
    type Row = LocalisationRow;
    const CSV_HEADER: &'static [&'static str] = &["r", "sup_diff"];
    fn rows(&self) -> &[LocalisationRow] {
        &self.rows
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

/// `path` with `.partial` appended to the file name.
pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

fn encode<R: Report>(report: &R, format: ReportFormat, path: &Path) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_vec_pretty(report).map_err(|e| io_err(path, e))?;
            text.push(b'\n');
            Ok(text)
        }
        ReportFormat::Csv => {
            let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            wtr.write_record(R::CSV_HEADER).map_err(|e| io_err(path, e))?;
            for row in report.rows() {
                wtr.serialize(row).map_err(|e| io_err(path, e))?;
            }
            wtr.into_inner().map_err(|e| io_err(path, e))
        }
    }
}

/// Writes `report`, first to `<path>.partial` and then renamed into place,
/// so an interrupted write never leaves a file under the final name.
pub fn emit_report<R: Report>(report: &R, path: &Path, format: ReportFormat) -> Result<()> {
    let bytes = encode(report, format, path)?;
    let tmp = partial_path(path);
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Writes an unfinished report to `<path>.partial` and leaves it there.
pub fn emit_partial<R: Report>(report: &R, path: &Path, format: ReportFormat) -> Result<PathBuf> {
    let bytes = encode(report, format, path)?;
    let tmp = partial_path(path);
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    Ok(tmp)
}

pub fn read_report_json<R: Report>(path: &Path) -> Result<R> {
    let text = fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&text).map_err(|e| io_err(path, e))
}

pub fn read_rows_csv<R: Report>(path: &Path) -> Result<Vec<R::Row>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    rdr.deserialize().map(|r| r.map_err(|e| io_err(path, e))).collect()
}
