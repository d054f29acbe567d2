//! Fixed benchmark problems, shared by the criterion benches and their
//! smoke test.

use amfd_core::instances::{random_instance, Instance};
use amfd_core::model::{basket_put_payoff, put_payoff};
use amfd_core::{build_1d, build_diag_dominant, CutoffPayoff, MarketModel, SolveConfig};
use nalgebra::DMatrix;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// At-the-money one-asset put, `S0 = K = 100`, `r = 0.05`, `σ = 0.2`, `T = 1`.
pub fn bs_put(tau: f64, h: f64) -> Instance {
    let model = MarketModel::black_scholes(0.05, 0.2, 1.0).expect("valid parameters").to_log_model();
    let dec = build_1d(&model).expect("one asset");
    let x0 = vec![100f64.ln()];
    let payoff =
        CutoffPayoff::new(put_payoff(100.0).expect("positive strike"), 2.5, x0.clone()).expect("positive radius");
    let config = SolveConfig::new(tau, h, 3.0, 2.5, 1.0, x0);
    Instance { model, dec, payoff, config }
}

/// Equal-weight basket put on two correlated assets with a diagonally
/// dominant diffusion matrix.
pub fn basket_put(tau: f64, h: f64, radius: f64) -> Instance {
    let vol = DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.1, 0.2]);
    let model = MarketModel::constant(0.04, vol, 0.5, 0.5).expect("valid parameters").to_log_model();
    let x0 = vec![100f64.ln(); 2];
    let dec = build_diag_dominant(&model, &[(0.0, x0.clone())]).expect("dominant diffusion");
    let r1 = 0.75 * radius;
    let payoff = CutoffPayoff::new(basket_put_payoff(100.0, vec![0.5, 0.5]).expect("valid basket"), r1, x0.clone())
        .expect("positive radius");
    let config = SolveConfig::new(tau, h, radius, r1, 0.5, x0);
    Instance { model, dec, payoff, config }
}

/// A seeded small random instance, as used by the brute-force comparison.
pub fn small_random(dim: usize, seed: u64) -> Instance {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed), dim)
}
