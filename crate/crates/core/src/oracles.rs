//! Independent reference values: closed-form Black–Scholes, a CRR binomial
//! tree, a brute-force fixed point of the full discrete system, and the
//! exit-time bound with a Monte Carlo estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::discrete_ops::GridFunction;
use crate::error::{invalid, Error, Result};
use crate::lattice::Lattice;
use crate::model::{CutoffPayoff, LogModel, SamplePoint};
use crate::stencil::StencilDecomposition;

/// Largest lattice the brute-force oracle accepts.
pub const BRUTE_FORCE_NODE_CAP: usize = 5000;

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {v}")))
    }
}

fn check_option_params(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> Result<()> {
    check_positive("S", s)?;
    check_positive("K", k)?;
    check_positive("sigma", sigma)?;
    check_positive("T", t)?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(invalid("r", format!("must be finite and nonnegative, got {r}")));
    }
    Ok(())
}

fn d1_d2(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> (f64, f64) {
    let vol = sigma * t.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / vol;
    (d1, d1 - vol)
}

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn bs_european_put(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> Result<f64> {
    check_option_params(s, k, r, sigma, t)?;
    let n = std_normal();
    let (d1, d2) = d1_d2(s, k, r, sigma, t);
    Ok(k * (-r * t).exp() * n.cdf(-d2) - s * n.cdf(-d1))
}

pub fn bs_european_call(s: f64, k: f64, r: f64, sigma: f64, t: f64) -> Result<f64> {
    check_option_params(s, k, r, sigma, t)?;
    let n = std_normal();
    let (d1, d2) = d1_d2(s, k, r, sigma, t);
    Ok(s * n.cdf(d1) - k * (-r * t).exp() * n.cdf(d2))
}

fn crr_put(s: f64, k: f64, r: f64, sigma: f64, t: f64, n: usize, american: bool) -> Result<f64> {
    check_option_params(s, k, r, sigma, t)?;
    if n == 0 {
        return Err(invalid("n", "tree needs at least one step"));
    }
    let dt = t / n as f64;
    let u = (sigma * dt.sqrt()).exp();
    let d = 1.0 / u;
    let p = ((r * dt).exp() - d) / (u - d);
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("n", format!("risk-neutral probability {p} outside [0, 1]; use more steps")));
    }
    let disc = (-r * dt).exp();
    // values[i] is the node with i down-moves
    let mut values: Vec<f64> = (0..=n).map(|i| (k - s * u.powi(n as i32 - 2 * i as i32)).max(0.0)).collect();
    for step in (0..n).rev() {
        for i in 0..=step {
            let cont = disc * (p * values[i] + (1.0 - p) * values[i + 1]);
            values[i] = if american { cont.max(k - s * u.powi(step as i32 - 2 * i as i32)) } else { cont };
        }
    }
    Ok(values[0])
}

/// Cox–Ross–Rubinstein American put with early exercise at every node.
pub fn crr_american_put(s: f64, k: f64, r: f64, sigma: f64, t: f64, n: usize) -> Result<f64> {
    crr_put(s, k, r, sigma, t, n, true)
}

pub fn crr_european_put(s: f64, k: f64, r: f64, sigma: f64, t: f64, n: usize) -> Result<f64> {
    crr_put(s, k, r, sigma, t, n, false)
}

/// Fixed point of the full space-time system.
#[derive(Clone, Debug)]
pub struct BruteForceSolution {
    pub values: GridFunction,
    pub sweeps: usize,
    pub residual: f64,
    /// Relaxation `θ` used by the iteration.
    pub theta: f64,
}

/// Frozen stencil of one interior node: `(neighbour id, weight)` and the
/// total outgoing weight plus discount.
struct NodeStencil {
    neighbors: Vec<(usize, f64)>,
    diag: f64,
}

/// Solves `max[δ_τ w + L_h w, g − w] = 0` on every interior node at once by
/// the relaxed iteration `w ← max(w + θ(δ_τ w + L_h w), g)` with `w = g_{R1}`
/// elsewhere.
pub fn brute_force_discrete(
    model: &LogModel,
    dec: &StencilDecomposition,
    payoff: &CutoffPayoff,
    lattice: &Lattice,
    tol: f64,
    max_sweeps: usize,
) -> Result<BruteForceSolution> {
    if lattice.n_nodes() > BRUTE_FORCE_NODE_CAP {
        return Err(Error::GridTooLarge { nodes: lattice.n_nodes() as u128, cap: BRUTE_FORCE_NODE_CAP as u128 });
    }
    let n_space = lattice.n_space();
    let terminal = lattice.terminal_level();
    let tau = lattice.spec().tau;
    let h = lattice.spec().h;
    let positions: Vec<Vec<f64>> = (0..n_space).map(|id| lattice.position(id)).collect();
    let g: Vec<f64> = positions.iter().map(|x| payoff.base().g_log(x)).collect();
    let mut w = GridFunction::zeros(lattice);
    for j in 0..=terminal {
        for (id, x) in positions.iter().enumerate() {
            w.set(j, id, payoff.eval(x));
        }
    }

    let mut stencils: Vec<Vec<NodeStencil>> = Vec::with_capacity(terminal);
    let mut max_diag: f64 = 0.0;
    for j in 0..terminal {
        let t = lattice.time(j);
        let mut level = Vec::with_capacity(lattice.interior_ids().len());
        for &id in lattice.interior_ids() {
            let x = &positions[id];
            let c = dec.coeffs(t, x);
            let mut st = NodeStencil { neighbors: Vec::new(), diag: model.rho(t, x) };
            for k in dec.signed_indices() {
                let a = c.a[k.unsigned_abs() as usize - 1];
                let b = c.b(k);
                let fwd = lattice
                    .neighbor_id(id, k)
                    .ok_or_else(|| Error::NeighborOutsideEnumeration { index: lattice.index(id).to_vec(), k })?;
                let bwd = lattice
                    .neighbor_id(id, -k)
                    .ok_or_else(|| Error::NeighborOutsideEnumeration { index: lattice.index(id).to_vec(), k: -k })?;
                st.neighbors.push((fwd, a / (h * h) + b / h));
                st.neighbors.push((bwd, a / (h * h)));
                st.diag += 2.0 * a / (h * h) + b / h;
            }
            max_diag = max_diag.max(st.diag);
            level.push(st);
        }
        stencils.push(level);
    }
    let theta = (tau / 2.0).min(1.0 / (1.0 / tau + max_diag));

    let equation = |w: &GridFunction, j: usize, r: usize, id: usize| {
        let st = &stencils[j][r];
        let here = w.get(j, id);
        let lh: f64 = st.neighbors.iter().map(|(n, c)| c * w.get(j, *n)).sum::<f64>() - st.diag * here;
        (w.get(j + 1, id) - here) / tau + lh
    };
    let residual_of = |w: &GridFunction| {
        let mut worst: f64 = 0.0;
        for j in 0..terminal {
            for (r, &id) in lattice.interior_ids().iter().enumerate() {
                worst = worst.max(equation(w, j, r, id).max(g[id] - w.get(j, id)).abs());
            }
        }
        worst
    };

    let mut residual = residual_of(&w);
    let mut sweeps = 0;
    let mut next = w.clone();
    while residual > tol {
        if sweeps == max_sweeps {
            return Err(Error::NotConverged { iterations: sweeps, residual });
        }
        for j in 0..terminal {
            for (r, &id) in lattice.interior_ids().iter().enumerate() {
                let v = w.get(j, id) + theta * equation(&w, j, r, id);
                next.set(j, id, v.max(g[id]));
            }
        }
        std::mem::swap(&mut w, &mut next);
        sweeps += 1;
        residual = residual_of(&w);
    }
    Ok(BruteForceSolution { values: w, sweeps, residual, theta })
}

/// Constants of the exponential moment bound for the log-price process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitBoundParams {
    pub k_bound: f64,
    pub expiry: f64,
    /// `λ = 2K`.
    pub lambda: f64,
    /// `μ = e^{−λT}/2`.
    pub mu: f64,
}

impl ExitBoundParams {
    pub fn new(k_bound: f64, expiry: f64) -> Result<Self> {
        if !(k_bound >= 0.0 && k_bound.is_finite()) {
            return Err(invalid("K_bound", format!("must be finite and nonnegative, got {k_bound}")));
        }
        check_positive("T", expiry)?;
        let lambda = 2.0 * k_bound;
        Ok(Self { k_bound, expiry, lambda, mu: (-lambda * expiry).exp() / 2.0 })
    }
}

/// `min(1, 3 e^{−μR²}(1 + e^{|x0|²/2}))`.
pub fn exit_bound(params: &ExitBoundParams, radius: f64, x0: &[f64]) -> f64 {
    let x2: f64 = x0.iter().map(|v| v * v).sum();
    (3.0 * (-params.mu * radius * radius).exp() * (1.0 + (x2 / 2.0).exp())).min(1.0)
}

/// Smallest `K` with `2(x, β) + |σ|² + (a x, x) ≤ K(1 + |x|²)` on the samples,
/// `a = ½σσᵀ` and `|σ|` the Frobenius norm.
pub fn exit_condition_constant(model: &LogModel, samples: &[SamplePoint]) -> f64 {
    samples
        .iter()
        .map(|(t, x)| {
            let xv = nalgebra::DVector::from_column_slice(x);
            let sigma = model.sigma(*t, x);
            let lhs = 2.0 * xv.dot(&model.beta(*t, x)) + sigma.norm_squared() + xv.dot(&(model.diffusion(*t, x) * &xv));
            lhs / (1.0 + xv.norm_squared())
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

/// Fraction of Euler–Maruyama paths of `dx = β dt + σ dW` from `x0` whose
/// norm reaches `radius` at some grid time in `[0, T]`. Path `i` draws from
/// a ChaCha8 stream keyed by `(seed, i)`, so the result does not depend on
/// scheduling.
pub fn mc_exit_probability(
    model: &LogModel,
    x0: &[f64],
    radius: f64,
    expiry: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if n_paths == 0 || n_steps == 0 {
        return Err(invalid("n_paths", "path and step counts must be at least 1"));
    }
    check_positive("T", expiry)?;
    if x0.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: x0.len() });
    }
    let d = model.dim();
    let dt = expiry / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let r2 = radius * radius;
    let exits = (0..n_paths as u64)
        .into_par_iter()
        .filter(|&path| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path);
            let mut x = x0.to_vec();
            let mut dw = vec![0.0; d];
            if x.iter().map(|v| v * v).sum::<f64>() >= r2 {
                return true;
            }
            for step in 0..n_steps {
                let t = step as f64 * dt;
                let beta = model.beta(t, &x);
                let sigma = model.sigma(t, &x);
                for v in dw.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = z * sqrt_dt;
                }
                for i in 0..d {
                    let mut inc = beta[i] * dt;
                    for (k, dwk) in dw.iter().enumerate() {
                        inc += sigma[(i, k)] * dwk;
                    }
                    x[i] += inc;
                }
                if x.iter().map(|v| v * v).sum::<f64>() >= r2 {
                    return true;
                }
            }
            false
        })
        .count();
    let p = exits as f64 / n_paths as f64;
    Ok(MonteCarloEstimate { estimate: p, stderr: (p * (1.0 - p) / n_paths as f64).sqrt(), n_paths, n_steps, seed })
}

/// `P(sup_{[0,T]} |W| ≥ a)` for standard Brownian motion from 0, from the
/// eigenfunction series
/// `1 − (4/π) Σ_k (−1)^k/(2k+1) exp(−(2k+1)²π²T/(8a²))`.
pub fn two_sided_exit_probability(a: f64, t: f64) -> Result<f64> {
    check_positive("a", a)?;
    check_positive("T", t)?;
    let pi = std::f64::consts::PI;
    let c = pi * pi * t / (8.0 * a * a);
    let mut sum = 0.0;
    let mut k = 0u64;
    loop {
        let m = (2 * k + 1) as f64;
        let term = (-c * m * m).exp() / m;
        if term < 1e-18 {
            break;
        }
        sum += if k % 2 == 0 { term } else { -term };
        k += 1;
        if k > 10_000_000 {
            return Err(Error::NotConverged { iterations: k as usize, residual: term });
        }
    }
    Ok((1.0 - 4.0 / pi * sum).clamp(0.0, 1.0))
}
