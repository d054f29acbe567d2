use std::io::Write;
use std::path::Path;

use amfd_core::discrete_ops::{delta_dir, second_dir, GridFunction};
use amfd_core::harness::{
    emit_partial, emit_report, partial_path, LocalisationSpec, Report, ReportFormat, StudyFailure, StudyProblem,
    SCHEMA_VERSION, TOOL_VERSION,
};
use amfd_core::instances::{random_dominant_model, random_instance, random_instance_1d, sample_points};
use amfd_core::lattice::{Lattice, LatticeSpec, NodeIndex};
use amfd_core::oracles::{exit_condition_constant, ExitBoundParams};
use amfd_core::stencil::{diag_dominant_directions, validate_decomposition};
use amfd_core::{
    brute_force_discrete, build_1d, build_diag_dominant, convergence_study, crr_american_put, crr_european_put,
    exit_bound, localisation_study, mc_exit_probability, residual, solve, ConvergenceSpec, LcpMethod, LogModel,
    ReferenceSpec, StencilDecomposition,
};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ReferenceKind, RunConfig};
use crate::CliError;

/// Samples on which a multi-asset model is checked for diagonal dominance.
const DOMINANCE_SAMPLES: usize = 512;

fn problem(config: &RunConfig) -> Result<StudyProblem, CliError> {
    let model = config.market()?.to_log_model();
    let base = config.solve_config();
    let dec = stencil_for(&model, config, &base.x0)?;
    Ok(StudyProblem { model, dec, payoff: config.payoff()?, base, description: describe(config) })
}

fn stencil_for(model: &LogModel, config: &RunConfig, x0: &[f64]) -> Result<StencilDecomposition, CliError> {
    if model.dim() == 1 {
        return build_1d(model).map_err(CliError::from_core);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.study.seed);
    let reach = config.scheme.r + 2.0 * config.scheme.h * (model.dim() as f64).sqrt();
    let mut samples = sample_points(&mut rng, x0, reach, config.model.expiry, DOMINANCE_SAMPLES);
    samples.push((0.0, x0.to_vec()));
    build_diag_dominant(model, &samples).map_err(CliError::from_core)
}

fn describe(config: &RunConfig) -> String {
    let payoff = serde_json::to_string(&config.payoff).unwrap_or_default();
    format!("{}-asset model, S0 = {:?}, T = {}, payoff {payoff}", config.model.d, config.model.s0, config.model.expiry)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Solver(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| CliError::Solver(format!("cannot write to stdout: {e}")))
}

#[derive(Serialize)]
struct PriceOutput<'a> {
    schema_version: &'a str,
    tool_version: &'a str,
    value: f64,
    /// Anchor in log-price coordinates.
    x: Vec<f64>,
    #[serde(rename = "S")]
    s: Vec<f64>,
    residual: f64,
    solver_residual: f64,
    total_iterations: usize,
    nodes: usize,
    time_levels: usize,
    config: &'a RunConfig,
}

pub fn price(config: &RunConfig, grid_out: Option<&Path>) -> Result<(), CliError> {
    let problem = problem(config)?;
    let sol = problem.solve_with(&problem.base).map_err(CliError::from_core)?;
    let x = problem.base.x0.clone();
    let value = sol.price_at(&x).map_err(CliError::from_core)?;
    if let Some(path) = grid_out {
        sol.write_csv(path).map_err(CliError::from_core)?;
    }
    print_json(&PriceOutput {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION,
        value,
        s: x.iter().map(|v| v.exp()).collect(),
        x,
        residual: residual(&sol),
        solver_residual: sol.solver_residual(),
        total_iterations: sol.total_iterations(),
        nodes: sol.lattice().n_nodes(),
        time_levels: sol.lattice().n_levels(),
        config,
    })
}

fn finish_study<R: Report>(
    result: Result<R, Box<StudyFailure<R>>>,
    out: &Path,
    summary: impl FnOnce(&R) -> String,
) -> Result<(), CliError> {
    let format = ReportFormat::from_path(out);
    match result {
        Ok(report) => {
            emit_report(&report, out, format).map_err(CliError::from_core)?;
            println!("{}", summary(&report));
            println!("report written to {}", out.display());
            Ok(())
        }
        Err(failure) => {
            let written = emit_partial(&failure.partial, out, format)
                .map(|p| p.display().to_string())
                .unwrap_or_else(|e| format!("nothing ({e})"));
            Err(CliError::Solver(format!("{}; partial report in {written}", failure.error)))
        }
    }
}

pub fn converge(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let params = config.study.converge.clone().ok_or_else(|| CliError::Config {
        field: "study.converge".into(),
        reason: "the converge subcommand needs a study.converge section".into(),
    })?;
    let problem = problem(config)?;
    let reference = match params.reference {
        ReferenceKind::FinestGrid => ReferenceSpec::FinestGrid,
        ReferenceKind::Crr => {
            let (rate, sigma, strike) = config.black_scholes_put().ok_or_else(|| CliError::Config {
                field: "reference".into(),
                reason: "a binomial reference needs one asset, constant coefficients and a put".into(),
            })?;
            let s0 = config.model.s0[0];
            let t = config.model.expiry;
            let n = params.crr_steps;
            let (value, kind) = if config.scheme.european_mode {
                (crr_european_put(s0, strike, rate, sigma, t, n), "European")
            } else {
                (crr_american_put(s0, strike, rate, sigma, t, n), "American")
            };
            ReferenceSpec::Fixed {
                description: format!("CRR {kind} put, {n} steps"),
                points: vec![problem.base.x0.clone()],
                values: vec![value.map_err(CliError::from_core)?],
            }
        }
    };
    let spec =
        ConvergenceSpec { tau0: params.tau0, h0: params.h0, levels: params.levels, r2: config.scheme.r2, reference };
    finish_study(convergence_study(&problem, &spec), out, |r| {
        let errors: Vec<String> = r.rows.iter().map(|row| format!("{:.6e}", row.error)).collect();
        format!(
            "errors [{}]; strictly decreasing: {}; h-slope: {}",
            errors.join(", "),
            r.strictly_decreasing,
            r.h_slope.map_or("undefined".into(), |s| format!("{s:.4}"))
        )
    })
}

pub fn localize(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let params = config.study.localize.clone().ok_or_else(|| CliError::Config {
        field: "study.localize".into(),
        reason: "the localize subcommand needs a study.localize section".into(),
    })?;
    let problem = problem(config)?;
    let spec = LocalisationSpec {
        r_values: params.r_values,
        r1: params.r1,
        r2: config.scheme.r2,
        r1_values: params.r1_values,
    };
    finish_study(localisation_study(&problem, &spec), out, |r| {
        let diffs: Vec<String> = r.rows.iter().map(|row| format!("R={}: {:.6e}", row.r, row.sup_diff)).collect();
        format!(
            "sup-differences [{}]; fitted gamma: {}",
            diffs.join(", "),
            r.gamma_hat.map_or("undefined".into(), |g| format!("{g:.4}"))
        )
    })
}

#[derive(Serialize)]
struct ExitRow {
    radius: f64,
    estimate: f64,
    stderr: f64,
    bound: f64,
    within_bound: bool,
}

#[derive(Serialize)]
struct ExitTable {
    tool_version: &'static str,
    k_exit: f64,
    mu: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    rows: Vec<ExitRow>,
}

/// The log-price model shifted so that `x0` sits at the origin: exit from
/// `B_R(x0)` becomes exit from `B_R(0)`.
fn centred(model: &LogModel, x0: &[f64]) -> LogModel {
    let shift = |x0: Vec<f64>| move |y: &[f64]| -> Vec<f64> { y.iter().zip(&x0).map(|(a, b)| a + b).collect() };
    let (m1, m2, m3) = (model.clone(), model.clone(), model.clone());
    let (s1, s2, s3) = (shift(x0.to_vec()), shift(x0.to_vec()), shift(x0.to_vec()));
    LogModel::new(
        model.dim(),
        move |t, y| m1.sigma(t, &s1(y)),
        move |t, y| m2.beta(t, &s2(y)),
        move |t, y| m3.rho(t, &s3(y)),
    )
}

pub fn exitprob(config: &RunConfig, out: Option<&Path>) -> Result<(), CliError> {
    let params = config.study.exitprob.clone().ok_or_else(|| CliError::Config {
        field: "study.exitprob".into(),
        reason: "the exitprob subcommand needs a study.exitprob section".into(),
    })?;
    let x0 = config.x0();
    let model = centred(&config.market()?.to_log_model(), &x0);
    let origin = vec![0.0; model.dim()];
    let k_exit = match params.k_exit {
        Some(k) => k,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.study.seed);
            let reach = params.radii.iter().copied().fold(2.0, f64::max);
            let mut samples = sample_points(&mut rng, &origin, reach, config.model.expiry, 4096);
            samples.push((0.0, origin.clone()));
            0.5 * exit_condition_constant(&model, &samples)
        }
    };
    let bound_params = ExitBoundParams::new(k_exit, config.model.expiry).map_err(CliError::from_core)?;
    let mut rows = Vec::new();
    for &radius in &params.radii {
        let est = mc_exit_probability(
            &model,
            &origin,
            radius,
            config.model.expiry,
            params.n_paths,
            params.n_steps,
            config.study.seed,
        )
        .map_err(CliError::from_core)?;
        let bound = exit_bound(&bound_params, radius, &origin);
        rows.push(ExitRow {
            radius,
            estimate: est.estimate,
            stderr: est.stderr,
            bound,
            within_bound: est.estimate <= bound + 3.0 * est.stderr,
        });
    }
    let table = ExitTable {
        tool_version: TOOL_VERSION,
        k_exit,
        mu: bound_params.mu,
        n_paths: params.n_paths,
        n_steps: params.n_steps,
        seed: config.study.seed,
        rows,
    };
    println!(
        "# exit from B_R(x0), x0 = ln S0; K_exit = {:.6}, mu = {:.6e}, paths = {}, steps = {}, seed = {}",
        table.k_exit, table.mu, table.n_paths, table.n_steps, table.seed
    );
    println!("{:>8} {:>12} {:>12} {:>12} {:>6}", "R", "estimate", "stderr", "bound", "holds");
    for r in &table.rows {
        println!("{:>8} {:>12.6} {:>12.6} {:>12.6} {:>6}", r.radius, r.estimate, r.stderr, r.bound, r.within_bound);
    }
    if let Some(path) = out {
        let tmp = partial_path(path);
        let text = serde_json::to_string_pretty(&table).map_err(|e| CliError::Solver(e.to_string()))?;
        std::fs::write(&tmp, text + "\n")
            .and_then(|()| std::fs::rename(&tmp, path))
            .map_err(|e| CliError::Solver(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check_stencils(rng: &mut ChaCha8Rng, models: usize) -> Check {
    let mut worst: f64 = 0.0;
    let mut min_coeff = f64::INFINITY;
    let mut failures = 0;
    for case in 0..models {
        let dim = 1 + case % 3;
        let model = random_dominant_model(rng, dim);
        let center: Vec<f64> = (0..dim).map(|_| 0.0).collect();
        let samples = sample_points(rng, &center, 2.0, 1.0, 64);
        let dec = if dim == 1 { build_1d(&model) } else { build_diag_dominant(&model, &samples) };
        match dec {
            Ok(dec) => {
                let rep = validate_decomposition(&dec, &model, &samples);
                worst = worst.max(rep.max_residual());
                min_coeff = min_coeff.min(rep.min_a).min(rep.min_b);
            }
            Err(_) => failures += 1,
        }
    }
    Check {
        name: "stencil reconstruction",
        pass: failures == 0 && worst <= 1e-12 && min_coeff >= 0.0,
        detail: format!(
            "{models} models, {failures} build failures, max residual {worst:.2e} (limit 1e-12), min coefficient {min_coeff:.2e}"
        ),
    }
}

fn check_operators(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    for dim in 1..=3 {
        let dirs = diag_dominant_directions(dim);
        let h = 0.1;
        let spec = LatticeSpec { t0: 0.0, x0: vec![0.0; dim], tau: 0.25, h, expiry: 1.0, directions: dirs.clone() };
        let lattice = match Lattice::build(spec, 3.0 * h, vec![0.0; dim]) {
            Ok(l) => l,
            Err(e) => return Check { name: "operator exactness", pass: false, detail: e.to_string() },
        };
        let q: Vec<f64> = (0..dim * dim).map(|_| rng.next_u32() as f64 / u32::MAX as f64 - 0.5).collect();
        let c: Vec<f64> = (0..dim).map(|_| rng.next_u32() as f64 / u32::MAX as f64 - 0.5).collect();
        let quad = |x: &[f64]| -> f64 {
            let mut v = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    v += q[i * dim + j] * x[i] * x[j];
                }
            }
            v
        };
        let fq = GridFunction::from_fn(&lattice, |_, x| quad(x));
        let fl = GridFunction::from_fn(&lattice, |_, x| x.iter().zip(&c).map(|(a, b)| a * b).sum());
        for &id in lattice.interior_ids() {
            let node = NodeIndex { j: 0, i: lattice.index(id).to_vec() };
            for (k, l) in dirs.iter().enumerate() {
                let lf: Vec<f64> = l.iter().map(|v| *v as f64).collect();
                let k = k as i32 + 1;
                let exact_second = 2.0 * quad(&lf);
                let exact_first: f64 = lf.iter().zip(&c).map(|(a, b)| a * b).sum();
                match (second_dir(&lattice, &fq, &node, k), delta_dir(&lattice, &fl, &node, -k)) {
                    (Ok(s), Ok(f)) => worst = worst.max((s - exact_second).abs()).max((f + exact_first).abs()),
                    (Err(e), _) | (_, Err(e)) => {
                        return Check { name: "operator exactness", pass: false, detail: e.to_string() }
                    }
                }
            }
        }
    }
    Check {
        name: "operator exactness",
        pass: worst <= 1e-12,
        detail: format!("second differences of quadratics and first differences of linear functions, max error {worst:.2e} (limit 1e-12)"),
    }
}

fn check_brute_force(rng: &mut ChaCha8Rng, instances: usize) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance_1d(rng);
        let outcome = solve(&inst.model, &inst.dec, &inst.payoff, &inst.config).and_then(|sol| {
            brute_force_discrete(&inst.model, &inst.dec, &inst.payoff, sol.lattice(), 1e-13, 5_000_000)
                .map(|bf| sol.values().max_abs_diff(&bf.values))
        });
        match outcome {
            Ok(d) => worst = worst.max(d),
            Err(e) => return Check { name: "brute-force agreement", pass: false, detail: e.to_string() },
        }
    }
    Check {
        name: "brute-force agreement",
        pass: worst <= 1e-9,
        detail: format!("{instances} one-asset instances, max difference {worst:.2e} (limit 1e-9)"),
    }
}

fn check_methods(rng: &mut ChaCha8Rng, instances: usize) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let inst = random_instance(rng, 2);
        let mut psor_config = inst.config.clone();
        psor_config.method = LcpMethod::ProjectedSor;
        let pi = solve(&inst.model, &inst.dec, &inst.payoff, &inst.config);
        let psor = solve(&inst.model, &inst.dec, &inst.payoff, &psor_config);
        match (pi, psor) {
            (Ok(a), Ok(b)) => worst = worst.max(a.values().max_abs_diff(b.values())),
            (Err(e), _) | (_, Err(e)) => {
                return Check { name: "policy iteration vs projected SOR", pass: false, detail: e.to_string() }
            }
        }
    }
    Check {
        name: "policy iteration vs projected SOR",
        pass: worst <= 1e-9,
        detail: format!("{instances} two-asset instances, max difference {worst:.2e} (limit 1e-9)"),
    }
}

pub fn validate(small: bool, seed: u64) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (models, brute, methods) = if small { (12, 5, 2) } else { (60, 30, 8) };
    let checks = [
        check_stencils(&mut rng, models),
        check_operators(&mut rng),
        check_brute_force(&mut rng, brute),
        check_methods(&mut rng, methods),
    ];
    for c in &checks {
        println!("[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed.join(", ")))
    }
}
