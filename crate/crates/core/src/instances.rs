//! Seeded generators of random models and small solver instances, shared
//! by tests, the validation command and benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::{CutoffPayoff, LogModel, PayoffSpec};
use crate::solver::SolveConfig;
use crate::stencil::{build_1d, build_diag_dominant, StencilDecomposition};

/// A model whose diffusion `½σσᵀ = c(t,x)·A0` is diagonally dominant
/// everywhere: `A0` is strictly dominant and `c` is a positive scalar field.
pub fn random_dominant_model(rng: &mut ChaCha8Rng, dim: usize) -> LogModel {
    let diag: Vec<f64> = (0..dim).map(|_| rng.random_range(0.01..0.1)).collect();
    let min_diag = diag.iter().copied().fold(f64::INFINITY, f64::min);
    let off_scale = if dim > 1 { 0.9 * min_diag / (dim - 1) as f64 } else { 0.0 };
    let mut a0 = DMatrix::from_diagonal(&DVector::from_vec(diag));
    for i in 0..dim {
        for j in i + 1..dim {
            let v = off_scale * rng.random_range(-1.0..1.0);
            a0[(i, j)] = v;
            a0[(j, i)] = v;
        }
    }
    let chol = (2.0 * a0).cholesky().expect("strictly dominant symmetric matrix is positive definite").l();

    let amp = rng.random_range(0.0..0.5);
    let freq: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let b0: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.2..0.2)).collect();
    let b1: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..0.1)).collect();
    let rho0 = rng.random_range(0.0..0.1);

    let scale = move |t: f64, x: &[f64]| {
        let arg: f64 = x.iter().zip(&freq).map(|(x, f)| x * f).sum::<f64>() + phase + t;
        1.0 + amp * arg.sin()
    };
    LogModel::new(
        dim,
        move |t, x| scale(t, x).sqrt() * &chol,
        move |t, x| DVector::from_iterator(dim, (0..dim).map(|i| b0[i] + b1[i] * (x[i] + t).cos())),
        move |_, x| rho0 * (1.0 + 0.5 * x[0].sin()),
    )
}

/// Positive, bounded, Lipschitz payoff in log coordinates: a put on `e^{x_1}`
/// plus a smooth bump. Returns the payoff and its declared `sup` and Lipschitz
/// constants.
pub fn random_payoff(rng: &mut ChaCha8Rng, dim: usize, center: &[f64]) -> PayoffSpec {
    let strike = (center[0] + rng.random_range(-0.3..0.3)).exp();
    let bump = rng.random_range(0.0..0.5);
    let freq = rng.random_range(0.5..3.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let g = move |x: &[f64]| (strike - x[0].exp()).max(0.0) + bump * (1.0 + (freq * x[0] + phase).cos());
    PayoffSpec::from_log_fn(dim, g, strike + 2.0 * bump, strike + bump * freq)
        .expect("generated payoff constants are positive")
}

/// One small problem: model, stencil, cut-off payoff and scheme parameters.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: LogModel,
    pub dec: StencilDecomposition,
    pub payoff: CutoffPayoff,
    pub config: SolveConfig,
}

/// A 1-D instance with at most 17 spatial nodes and at most 10 time levels.
/// About a third of the instances end with a clamped final step.
pub fn random_instance_1d(rng: &mut ChaCha8Rng) -> Instance {
    let model = random_dominant_model(rng, 1);
    let dec = build_1d(&model).expect("one-dimensional model");
    let center = vec![rng.random_range(-0.5..0.5)];
    let h = rng.random_range(0.05..0.2);
    let half = rng.random_range(2..=8) as f64;
    let r = (half - 0.5) * h;
    let r1 = rng.random_range(0.2..0.9) * r;
    let steps = rng.random_range(2..=9);
    let expiry = rng.random_range(0.2..1.0);
    let tau = if rng.random_bool(1.0 / 3.0) { expiry / (steps as f64 - 0.5) } else { expiry / steps as f64 };
    let payoff = CutoffPayoff::new(random_payoff(rng, 1, &center), r1, center.clone()).expect("positive cutoff radius");
    let mut config = SolveConfig::new(tau, h, r, r1, expiry, center);
    config.lcp_tol = 1e-12;
    Instance { model, dec, payoff, config }
}

/// A small instance in `dim` dimensions on the diagonally dominant stencil.
pub fn random_instance(rng: &mut ChaCha8Rng, dim: usize) -> Instance {
    if dim == 1 {
        return random_instance_1d(rng);
    }
    let model = random_dominant_model(rng, dim);
    let center: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
    let h = rng.random_range(0.1..0.25);
    let r = rng.random_range(2.0..3.5) * h;
    let r1 = rng.random_range(0.2..0.9) * r;
    let steps = rng.random_range(2..=5);
    let expiry = rng.random_range(0.2..1.0);
    let tau = expiry / steps as f64;
    let samples = sample_points(rng, &center, r + 2.0 * h, expiry, 64);
    let dec = build_diag_dominant(&model, &samples).expect("model is dominant by construction");
    let payoff =
        CutoffPayoff::new(random_payoff(rng, dim, &center), r1, center.clone()).expect("positive cutoff radius");
    let mut config = SolveConfig::new(tau, h, r, r1, expiry, center);
    config.lcp_tol = 1e-12;
    Instance { model, dec, payoff, config }
}

/// Two instances on the same lattice whose payoffs satisfy `g1 ≤ g2`
/// pointwise, so the cut-off boundary data are ordered too.
pub fn random_comparison_pair(rng: &mut ChaCha8Rng) -> (Instance, Instance) {
    let first = random_instance_1d(rng);
    let lift = rng.random_range(0.0..1.0);
    let freq = rng.random_range(0.5..4.0);
    let base = first.payoff.base().clone();
    let bumped = {
        let base = base.clone();
        move |x: &[f64]| base.g_log(x) + lift * (1.0 + (freq * x[0]).sin())
    };
    let spec = PayoffSpec::from_log_fn(1, bumped, base.sup_g() + 2.0 * lift, base.lip_g() + lift * freq)
        .expect("positive constants");
    let second = Instance {
        payoff: CutoffPayoff::new(spec, first.payoff.r1(), first.payoff.center().to_vec()).expect("same cutoff"),
        ..first.clone()
    };
    (first, second)
}

/// Uniform samples of `[0, T] × B_radius(center)`, by rejection.
pub fn sample_points(rng: &mut ChaCha8Rng, center: &[f64], radius: f64, expiry: f64, n: usize) -> Vec<(f64, Vec<f64>)> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: Vec<f64> = center.iter().map(|c| c + rng.random_range(-radius..radius)).collect();
        if crate::model::euclid(&x, center) < radius {
            out.push((rng.random_range(0.0..=expiry), x));
        }
    }
    out
}
