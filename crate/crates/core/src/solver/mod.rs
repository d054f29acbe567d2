//! Backward time-stepping for the localised obstacle problem
//!
//! ```text
//! max[δ_τ w + L_h w, g − w] = 0   on Q_R
//! w = g_{R1}                      elsewhere on the lattice
//! ```
//!
//! Levels are solved from `T` down to `t0`; each level is a complementarity
//! problem handled by [`solve_level_lcp`].

mod lcp;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discrete_ops::{apply_lh, assemble_level, delta_time, GridFunction};
use crate::error::{invalid, Error, Result};
use crate::lattice::{Lattice, LatticeSpec, LatticeStats, NodeIndex, DEFAULT_NODE_CAP};
use crate::model::{CutoffPayoff, LogModel};
use crate::stencil::StencilDecomposition;

pub use lcp::{solve_level_lcp, LevelSolution, LevelSystem};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LcpMethod {
    #[default]
    PolicyIteration,
    ProjectedSor,
}

impl std::fmt::Display for LcpMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PolicyIteration => "policy-iteration",
            Self::ProjectedSor => "projected-sor",
        })
    }
}

impl std::str::FromStr for LcpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "policy-iteration" => Ok(Self::PolicyIteration),
            "projected-sor" => Ok(Self::ProjectedSor),
            other => Err(invalid("method", format!("expected `policy-iteration` or `projected-sor`, got `{other}`"))),
        }
    }
}

/// Scheme and solver parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub tau: f64,
    pub h: f64,
    /// Radius of the computational ball `B_R`.
    pub r: f64,
    /// Cutoff radius of the boundary data.
    pub r1: f64,
    pub t0: f64,
    pub expiry: f64,
    /// Lattice anchor and centre of `B_R`.
    pub x0: Vec<f64>,
    pub method: LcpMethod,
    pub lcp_tol: f64,
    /// Cap on policy iterations per level.
    pub max_inner_iters: usize,
    /// Cap on SOR or projected SOR sweeps per linear solve.
    pub max_linear_sweeps: usize,
    pub omega: f64,
    /// Drops the obstacle on every level below `T`.
    pub european_mode: bool,
    pub node_cap: u64,
}

impl SolveConfig {
    pub fn new(tau: f64, h: f64, r: f64, r1: f64, expiry: f64, x0: Vec<f64>) -> Self {
        Self {
            tau,
            h,
            r,
            r1,
            t0: 0.0,
            expiry,
            x0,
            method: LcpMethod::PolicyIteration,
            lcp_tol: 1e-10,
            max_inner_iters: 200,
            max_linear_sweeps: 100_000,
            omega: 1.0,
            european_mode: false,
            node_cap: DEFAULT_NODE_CAP as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("tau", self.tau)?;
        positive("h", self.h)?;
        positive("R1", self.r1)?;
        positive("lcp_tol", self.lcp_tol)?;
        if !(self.r > self.r1) {
            return Err(invalid("R", format!("R = {} must exceed R1 = {}", self.r, self.r1)));
        }
        if !(self.expiry > self.t0) {
            return Err(invalid("T", format!("expiry {} must exceed t0 = {}", self.expiry, self.t0)));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(invalid("omega", format!("must lie in (0, 2), got {}", self.omega)));
        }
        if self.max_inner_iters == 0 || self.max_linear_sweeps == 0 {
            return Err(invalid("max_inner_iters", "iteration caps must be positive"));
        }
        if self.x0.is_empty() {
            return Err(invalid("x0", "anchor must have at least one coordinate"));
        }
        Ok(())
    }

    pub fn lattice_spec(&self, dec: &StencilDecomposition) -> LatticeSpec {
        LatticeSpec {
            t0: self.t0,
            x0: self.x0.clone(),
            tau: self.tau,
            h: self.h,
            expiry: self.expiry,
            directions: dec.positive_directions().to_vec(),
        }
    }

    pub fn build_lattice(&self, dec: &StencilDecomposition) -> Result<Lattice> {
        Lattice::build_with_cap(self.lattice_spec(dec), self.r, self.x0.clone(), u128::from(self.node_cap))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeState {
    Boundary,
    Stop,
    Continue,
}

impl NodeState {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Boundary => "boundary",
            Self::Stop => "stop",
            Self::Continue => "continue",
        }
    }
}

/// The grid function `w` together with what the solve observed.
#[derive(Clone, Debug)]
pub struct DiscreteSolution {
    config: SolveConfig,
    lattice: Lattice,
    model: LogModel,
    dec: StencilDecomposition,
    payoff: CutoffPayoff,
    values: GridFunction,
    states: Vec<NodeState>,
    level_iterations: Vec<usize>,
    solver_residual: f64,
    bound_constant: f64,
}

/// Obstacle and boundary data evaluated once per spatial node.
struct NodeData {
    g: Vec<f64>,
    g_cut: Vec<f64>,
}

fn node_data(lattice: &Lattice, payoff: &CutoffPayoff) -> NodeData {
    let (g, g_cut) = (0..lattice.n_space())
        .map(|id| {
            let x = lattice.position(id);
            (payoff.base().g_log(&x), payoff.eval(&x))
        })
        .unzip();
    NodeData { g, g_cut }
}

/// Solves the localised discrete obstacle problem.
pub fn solve(
    model: &LogModel,
    dec: &StencilDecomposition,
    payoff: &CutoffPayoff,
    config: &SolveConfig,
) -> Result<DiscreteSolution> {
    config.validate()?;
    for got in [model.dim(), dec.dim(), payoff.base().dim(), config.x0.len()] {
        if got != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), got });
        }
    }
    let lattice = config.build_lattice(dec)?;
    let data = node_data(&lattice, payoff);
    let n_space = lattice.n_space();
    let terminal = lattice.terminal_level();
    let inv_tau = 1.0 / config.tau;

    let mut values = GridFunction::zeros(&lattice);
    let mut states = vec![NodeState::Boundary; lattice.n_nodes()];
    for j in 0..=terminal {
        values.level_mut(j).copy_from_slice(&data.g_cut);
    }

    let interior = lattice.interior_ids().to_vec();
    let obstacle: Vec<f64> = interior.iter().map(|id| data.g[*id]).collect();
    let mut stop: Vec<bool> = interior.iter().map(|id| data.g[*id] >= data.g_cut[*id]).collect();
    let mut level_iterations = vec![0; lattice.n_levels()];
    let mut solver_residual: f64 = 0.0;
    let mut max_row_sum = f64::NEG_INFINITY;

    for j in (0..terminal).rev() {
        let op = assemble_level(dec, model, &lattice, j, &data.g_cut)?;
        max_row_sum = op.full_row_sums().into_iter().fold(max_row_sum, f64::max);
        let next = values.level(j + 1);
        let forcing: Vec<f64> = interior.iter().zip(op.boundary()).map(|(id, b)| next[*id] * inv_tau + b).collect();
        let init: Vec<f64> = interior.iter().map(|id| next[*id]).collect();
        let sys = LevelSystem {
            op: &op,
            inv_tau,
            forcing: &forcing,
            obstacle: (!config.european_mode).then_some(obstacle.as_slice()),
        };
        let sol = solve_level_lcp(&sys, &stop, &init, config, j)?;
        let level = values.level_mut(j);
        for (r, id) in interior.iter().enumerate() {
            level[*id] = sol.values[r];
            states[j * n_space + id] =
                if sol.stop[r] && !config.european_mode { NodeState::Stop } else { NodeState::Continue };
        }
        level_iterations[j] = sol.iterations;
        solver_residual = solver_residual.max(sol.residual);
        stop = sol.stop;
    }

    // Growth of an implicit step with discount bounded below by −ρ⁻ is at
    // most 1/(1 − τρ⁻) per level.
    let rho_neg = max_row_sum.max(0.0);
    let bound_constant = if rho_neg == 0.0 {
        0.0
    } else if config.tau * rho_neg < 1.0 {
        payoff.base().sup_g() * ((1.0 - config.tau * rho_neg).powi(-(terminal as i32)) - 1.0)
    } else {
        f64::INFINITY
    };

    Ok(DiscreteSolution {
        config: config.clone(),
        lattice,
        model: model.clone(),
        dec: dec.clone(),
        payoff: payoff.clone(),
        values,
        states,
        level_iterations,
        solver_residual,
        bound_constant,
    })
}

/// `max |max[δ_τ w + L_h w, g − w]|` over interior nodes, evaluated node by
/// node from the lattice, model and payoff rather than the assembled levels.
pub fn residual(sol: &DiscreteSolution) -> f64 {
    let lat = &sol.lattice;
    let mut worst: f64 = 0.0;
    for j in 0..lat.terminal_level() {
        for &id in lat.interior_ids() {
            let node = NodeIndex { j, i: lat.index(id).to_vec() };
            let eq =
                match (delta_time(lat, &sol.values, &node), apply_lh(&sol.dec, &sol.model, lat, &sol.values, &node)) {
                    (Ok(dt), Ok(lh)) => dt + lh,
                    _ => return f64::INFINITY,
                };
            let r = if sol.config.european_mode {
                eq.abs()
            } else {
                let g = sol.payoff.base().g_log(&lat.position(id));
                eq.max(g - sol.values.get(j, id)).abs()
            };
            worst = worst.max(r);
        }
    }
    worst
}

/// Outcome of a nodewise comparison `w1 ≤ w2 + tol`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonVerdict {
    pub holds: bool,
    /// `max(w1 − w2, 0)` over all nodes.
    pub worst_violation: f64,
}

pub fn check_comparison(sol1: &DiscreteSolution, sol2: &DiscreteSolution, tol: f64) -> ComparisonVerdict {
    let a = sol1.values.values();
    let b = sol2.values.values();
    if a.len() != b.len() || sol1.lattice.spec() != sol2.lattice.spec() {
        return ComparisonVerdict { holds: false, worst_violation: f64::INFINITY };
    }
    let worst = a.iter().zip(b).map(|(x, y)| (x - y).max(0.0)).fold(0.0, f64::max);
    ComparisonVerdict { holds: worst <= tol, worst_violation: worst }
}

/// Value of the solution at one query point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub x: Vec<f64>,
    /// `S = exp(x)` componentwise.
    pub s: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub config: SolveConfig,
    pub lattice: LatticeStats,
    pub prices: Vec<PricePoint>,
    pub residual: f64,
    pub solver_residual: f64,
    pub total_iterations: usize,
    pub max_level_iterations: usize,
    pub bound_constant: f64,
}

impl DiscreteSolution {
    pub fn config(&self) -> &SolveConfig {
        &self.config
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn payoff(&self) -> &CutoffPayoff {
        &self.payoff
    }

    pub fn values(&self) -> &GridFunction {
        &self.values
    }

    pub fn state(&self, j: usize, id: usize) -> NodeState {
        self.states[j * self.lattice.n_space() + id]
    }

    /// Inner iterations per level; the terminal level records 0.
    pub fn level_iterations(&self) -> &[usize] {
        &self.level_iterations
    }

    pub fn total_iterations(&self) -> usize {
        self.level_iterations.iter().sum()
    }

    /// Largest per-level complementarity residual reported by the inner solver.
    pub fn solver_residual(&self) -> f64 {
        self.solver_residual
    }

    /// `C` in `sup|w| ≤ sup|g| + C`.
    pub fn bound_constant(&self) -> f64 {
        self.bound_constant
    }

    /// Multilinear interpolation of the first level at `x`.
    pub fn price_at(&self, x: &[f64]) -> Result<f64> {
        self.lattice.interpolate(self.values.level(0), x)
    }

    pub fn summary(&self, query: &[Vec<f64>]) -> Result<SolutionSummary> {
        let prices = query
            .iter()
            .map(|x| Ok(PricePoint { x: x.clone(), s: x.iter().map(|v| v.exp()).collect(), value: self.price_at(x)? }))
            .collect::<Result<_>>()?;
        Ok(SolutionSummary {
            config: self.config.clone(),
            lattice: self.lattice.stats(),
            prices,
            residual: residual(self),
            solver_residual: self.solver_residual,
            total_iterations: self.total_iterations(),
            max_level_iterations: self.level_iterations.iter().copied().max().unwrap_or(0),
            bound_constant: self.bound_constant,
        })
    }

    /// One row per node: `t, x1..xd, w, state`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: &dyn std::fmt::Display| Error::Io { path: path.display().to_string(), message: e.to_string() };
        let mut wtr = csv::Writer::from_path(path).map_err(|e| io(&e))?;
        let d = self.lattice.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|a| format!("x{a}")));
        header.extend(["w".to_string(), "state".to_string()]);
        wtr.write_record(&header).map_err(|e| io(&e))?;
        for j in 0..self.lattice.n_levels() {
            let t = self.lattice.time(j);
            for id in 0..self.lattice.n_space() {
                let mut rec = vec![t.to_string()];
                rec.extend(self.lattice.position(id).iter().map(f64::to_string));
                rec.push(self.values.get(j, id).to_string());
                rec.push(self.state(j, id).as_str().to_string());
                wtr.write_record(&rec).map_err(|e| io(&e))?;
            }
        }
        wtr.flush().map_err(|e| io(&e))
    }

    pub fn write_summary_json(&self, path: &Path, query: &[Vec<f64>]) -> Result<()> {
        let summary = self.summary(query)?;
        let text = serde_json::to_string_pretty(&summary).expect("summary serialises");
        let mut f = fs::File::create(path)
            .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
        f.write_all(text.as_bytes()).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })
    }
}
