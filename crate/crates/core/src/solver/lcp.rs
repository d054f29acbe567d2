//! Per-level complementarity solves.
//!
//! Each level reduces to `max[f − M w, ĝ − w] = 0` with `M = I/τ − A`,
//! where `A` is the assembled generator on interior rows and `f` carries the
//! next level's values and the boundary contribution.

use crate::discrete_ops::LevelOperator;
use crate::error::{Error, Result};

use super::{LcpMethod, SolveConfig};

/// Sweeps without progress after which an iteration counts as stalled at
/// its rounding floor.
const STALL_SWEEPS: usize = 100;

/// Result of one level solve.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSolution {
    pub values: Vec<f64>,
    /// `true` where the node is in the stopping set (`w = ĝ`).
    pub stop: Vec<bool>,
    /// Policy iterations or projected sweeps used.
    pub iterations: usize,
    pub residual: f64,
}

/// The level system `max[f − M w, ĝ − w] = 0`.
#[derive(Clone, Copy, Debug)]
pub struct LevelSystem<'a> {
    pub op: &'a LevelOperator,
    /// `1/τ`, added to the diagonal of `−A`.
    pub inv_tau: f64,
    pub forcing: &'a [f64],
    /// `None` disables the obstacle (plain linear solve).
    pub obstacle: Option<&'a [f64]>,
}

impl LevelSystem<'_> {
    fn m_diag(&self, r: usize) -> f64 {
        self.inv_tau - self.op.diag()[r]
    }

    /// `f_r − (M w)_r`.
    fn continuation(&self, w: &[f64], r: usize) -> f64 {
        let off: f64 = self.op.row(r).map(|(c, a)| a * w[c]).sum();
        self.forcing[r] - self.m_diag(r) * w[r] + off
    }

    /// `max_r |max[f_r − (M w)_r, ĝ_r − w_r]|`.
    pub fn residual(&self, w: &[f64]) -> f64 {
        (0..w.len())
            .map(|r| {
                let c = self.continuation(w, r);
                match self.obstacle {
                    Some(g) => c.max(g[r] - w[r]).abs(),
                    None => c.abs(),
                }
            })
            .fold(0.0, f64::max)
    }

    /// Gauss–Seidel value of row `r` before relaxation.
    fn gs_target(&self, w: &[f64], r: usize) -> f64 {
        let off: f64 = self.op.row(r).map(|(c, a)| a * w[c]).sum();
        (self.forcing[r] + off) / self.m_diag(r)
    }
}

/// Solves one level with the configured method. `init_stop` warm-starts
/// policy iteration and `init` seeds the iterative sweeps.
pub fn solve_level_lcp(
    sys: &LevelSystem<'_>,
    init_stop: &[bool],
    init: &[f64],
    config: &SolveConfig,
    level: usize,
) -> Result<LevelSolution> {
    match sys.obstacle {
        None => {
            let stop = vec![false; sys.op.n_rows()];
            let values = solve_policy_system(sys, &stop, init, config, level)?;
            let residual = sys.residual(&values);
            if residual > config.lcp_tol {
                return Err(Error::InnerSolveDiverged { level, residual });
            }
            Ok(LevelSolution { values, stop, iterations: 1, residual })
        }
        Some(_) => match config.method {
            LcpMethod::PolicyIteration => policy_iteration(sys, init_stop, init, config, level),
            LcpMethod::ProjectedSor => projected_sor(sys, init, config, level),
        },
    }
}

fn policy_iteration(
    sys: &LevelSystem<'_>,
    init_stop: &[bool],
    init: &[f64],
    config: &SolveConfig,
    level: usize,
) -> Result<LevelSolution> {
    let g = sys.obstacle.expect("policy iteration needs an obstacle");
    let n = sys.op.n_rows();
    let mut stop = init_stop.to_vec();
    let mut w = init.to_vec();
    let mut residual = f64::INFINITY;
    let mut accepted: Option<(Vec<f64>, usize, f64)> = None;
    for it in 1..=config.max_inner_iters {
        w = solve_policy_system(sys, &stop, &w, config, level)?;
        residual = sys.residual(&w);
        // ties go to stopping
        let next: Vec<bool> = (0..n).map(|r| g[r] - w[r] >= sys.continuation(&w, r)).collect();
        let stable = next == stop;
        if residual <= config.lcp_tol {
            // Within tolerance already. Further policy steps are taken only
            // while they keep lowering a residual with little headroom; ties
            // at rounding level can otherwise flip back and forth.
            if stable || residual <= 0.01 * config.lcp_tol {
                return Ok(finish(w, g, it, residual));
            }
            match &accepted {
                Some(a) if residual >= a.2 => break,
                _ => accepted = Some((w.clone(), it, residual)),
            }
        } else if stable {
            break;
        }
        stop = next;
    }
    match accepted {
        Some((w, it, residual)) => Ok(finish(w, g, it, residual)),
        None => Err(Error::InnerSolveDiverged { level, residual }),
    }
}

fn finish(values: Vec<f64>, g: &[f64], iterations: usize, residual: f64) -> LevelSolution {
    let stop = values.iter().zip(g).map(|(w, g)| w <= g).collect();
    LevelSolution { values, stop, iterations, residual }
}

fn projected_sor(sys: &LevelSystem<'_>, init: &[f64], config: &SolveConfig, level: usize) -> Result<LevelSolution> {
    let g = sys.obstacle.expect("projected SOR needs an obstacle");
    let n = sys.op.n_rows();
    let omega = config.omega;
    let mut w: Vec<f64> = (0..n).map(|r| init[r].max(g[r])).collect();
    let mut residual = sys.residual(&w);
    let mut sweeps = 0;
    while residual > config.lcp_tol {
        if sweeps == config.max_linear_sweeps {
            return Err(Error::InnerSolveDiverged { level, residual });
        }
        for r in 0..n {
            let relaxed = (1.0 - omega) * w[r] + omega * sys.gs_target(&w, r);
            w[r] = relaxed.max(g[r]);
        }
        sweeps += 1;
        residual = sys.residual(&w);
    }
    let stop = (0..n).map(|r| w[r] <= g[r]).collect();
    Ok(LevelSolution { values: w, stop, iterations: sweeps.max(1), residual })
}

/// Solves the linear system of a fixed policy: `w_r = ĝ_r` on stop rows and
/// `(M w)_r = f_r` elsewhere.
fn solve_policy_system(
    sys: &LevelSystem<'_>,
    stop: &[bool],
    init: &[f64],
    config: &SolveConfig,
    level: usize,
) -> Result<Vec<f64>> {
    if sys.op.is_tridiagonal() {
        Ok(thomas(sys, stop))
    } else {
        sor(sys, stop, init, config, level)
    }
}

/// Tridiagonal elimination. `M` is strictly diagonally dominant, so no
/// pivoting is needed.
fn thomas(sys: &LevelSystem<'_>, stop: &[bool]) -> Vec<f64> {
    let n = sys.op.n_rows();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for r in 0..n {
        if stop[r] {
            diag[r] = 1.0;
            rhs[r] = sys.obstacle.map_or(0.0, |g| g[r]);
            continue;
        }
        diag[r] = sys.m_diag(r);
        rhs[r] = sys.forcing[r];
        for (c, a) in sys.op.row(r) {
            if c + 1 == r {
                lower[r] = -a;
            } else {
                upper[r] = -a;
            }
        }
    }
    for r in 1..n {
        let m = lower[r] / diag[r - 1];
        diag[r] -= m * upper[r - 1];
        rhs[r] -= m * rhs[r - 1];
    }
    let mut w = vec![0.0; n];
    if n > 0 {
        w[n - 1] = rhs[n - 1] / diag[n - 1];
        for r in (0..n - 1).rev() {
            w[r] = (rhs[r] - upper[r] * w[r + 1]) / diag[r];
        }
    }
    w
}

fn sor(sys: &LevelSystem<'_>, stop: &[bool], init: &[f64], config: &SolveConfig, level: usize) -> Result<Vec<f64>> {
    let n = sys.op.n_rows();
    let g = sys.obstacle;
    let mut w = init.to_vec();
    for r in 0..n {
        if stop[r] {
            w[r] = g.map_or(0.0, |g| g[r]);
        }
    }
    // Aim well below the outer tolerance; accept a stalled iteration only
    // once it is inside the tolerance itself.
    let target = 0.01 * config.lcp_tol;
    let linear_residual =
        |w: &[f64]| (0..n).filter(|r| !stop[*r]).map(|r| sys.continuation(w, r).abs()).fold(0.0, f64::max);
    let mut residual = linear_residual(&w);
    let mut best = residual;
    let mut since_best = 0;
    let mut sweeps = 0;
    while residual > target {
        if sweeps == config.max_linear_sweeps || (since_best >= STALL_SWEEPS && residual <= config.lcp_tol) {
            if residual <= config.lcp_tol {
                break;
            }
            return Err(Error::InnerSolveDiverged { level, residual });
        }
        for r in 0..n {
            if !stop[r] {
                w[r] = (1.0 - config.omega) * w[r] + config.omega * sys.gs_target(&w, r);
            }
        }
        sweeps += 1;
        residual = linear_residual(&w);
        if residual < 0.999 * best {
            best = residual;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    Ok(w)
}
