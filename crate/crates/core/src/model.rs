//! Market coefficients in price space, their log-price transforms and payoffs.
//!
//! Coefficients are black-box evaluators. Declared bounds (`k_bound`, `sup_g`,
//! `lip_g`) are spot-checked on samples via the `check_*` methods but never
//! proved.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, &[f64]) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;
pub type PayoffFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A point `(t, x)` at which coefficients are spot-checked.
pub type SamplePoint = (f64, Vec<f64>);

/// Short rate and volatility matrix of `d` risky assets, as functions of
/// `(t, S)` with `S > 0` componentwise.
#[derive(Clone)]
pub struct MarketModel {
    dim: usize,
    rate: ScalarFn,
    vol: MatrixFn,
    expiry: f64,
    k_bound: f64,
}

impl fmt::Debug for MarketModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MarketModel")
            .field("dim", &self.dim)
            .field("expiry", &self.expiry)
            .field("k_bound", &self.k_bound)
            .finish_non_exhaustive()
    }
}

impl MarketModel {
    pub fn new<R, V>(dim: usize, expiry: f64, k_bound: f64, rate: R, vol: V) -> Result<Self>
    where
        R: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        V: Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(invalid("d", "at least one asset is required"));
        }
        if !(expiry > 0.0 && expiry.is_finite()) {
            return Err(invalid("T", format!("expiry must be positive, got {expiry}")));
        }
        if !(k_bound > 0.0 && k_bound.is_finite()) {
            return Err(invalid("K_bound", format!("must be positive, got {k_bound}")));
        }
        Ok(Self { dim, rate: Arc::new(rate), vol: Arc::new(vol), expiry, k_bound })
    }

    /// Constant rate and volatility matrix.
    pub fn constant(rate: f64, vol: DMatrix<f64>, expiry: f64, k_bound: f64) -> Result<Self> {
        if !vol.is_square() {
            return Err(invalid("vol", "volatility matrix must be square"));
        }
        let dim = vol.nrows();
        Self::new(dim, expiry, k_bound, move |_, _| rate, move |_, _| vol.clone())
    }

    /// One asset with constant rate and volatility; `K_bound` is taken as the
    /// smallest admissible constant.
    pub fn black_scholes(rate: f64, sigma: f64, expiry: f64) -> Result<Self> {
        let k = rate.max(sigma.abs()).max(f64::MIN_POSITIVE);
        Self::constant(rate, DMatrix::from_element(1, 1, sigma), expiry, k)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn expiry(&self) -> f64 {
        self.expiry
    }

    pub fn k_bound(&self) -> f64 {
        self.k_bound
    }

    pub fn rate(&self, t: f64, s: &[f64]) -> f64 {
        (self.rate)(t, s)
    }

    pub fn vol(&self, t: f64, s: &[f64]) -> DMatrix<f64> {
        (self.vol)(t, s)
    }

    /// Checks `0 <= rate <= K` and `|vol|_F <= K` at every sample `(t, S)`.
    pub fn check_bounds(&self, samples: &[SamplePoint]) -> Result<()> {
        for (t, s) in samples {
            if s.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: s.len() });
            }
            let r = self.rate(*t, s);
            if !(0.0..=self.k_bound).contains(&r) {
                return Err(invalid("rate", format!("rate {r} outside [0, {}] at t = {t}, S = {s:?}", self.k_bound)));
            }
            let v = self.vol(*t, s);
            if v.nrows() != self.dim || v.ncols() != self.dim {
                return Err(invalid("vol", format!("expected a {0}x{0} matrix", self.dim)));
            }
            let norm = v.norm();
            if norm > self.k_bound {
                return Err(invalid(
                    "vol",
                    format!("|vol| = {norm} exceeds K = {} at t = {t}, S = {s:?}", self.k_bound),
                ));
            }
        }
        Ok(())
    }

    /// Coefficients of the log-price dynamics `x = ln S`.
    pub fn to_log_model(&self) -> LogModel {
        let rate = Arc::clone(&self.rate);
        let vol = Arc::clone(&self.vol);
        let rate_b = Arc::clone(&self.rate);
        let vol_b = Arc::clone(&self.vol);
        LogModel {
            dim: self.dim,
            sigma: Arc::new(move |t, x| vol(t, &exp_vec(x))),
            rho: Arc::new(move |t, x| rate(t, &exp_vec(x))),
            beta: Arc::new(move |t, x| {
                let s = exp_vec(x);
                let r = rate_b(t, &s);
                let v = vol_b(t, &s);
                DVector::from_iterator(
                    v.nrows(),
                    v.row_iter().map(|row| r - 0.5 * row.iter().map(|c| c * c).sum::<f64>()),
                )
            }),
        }
    }
}

/// Coefficients of `dx = β dt + σ dW` with discount rate `ρ`.
#[derive(Clone)]
pub struct LogModel {
    dim: usize,
    sigma: MatrixFn,
    beta: VectorFn,
    rho: ScalarFn,
}

impl fmt::Debug for LogModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LogModel").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl LogModel {
    /// Builds a log-space model directly, bypassing the price-space drift
    /// formula. Useful for generic obstacle problems and tests.
    pub fn new<S, B, R>(dim: usize, sigma: S, beta: B, rho: R) -> Self
    where
        S: Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        B: Fn(f64, &[f64]) -> DVector<f64> + Send + Sync + 'static,
        R: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { dim, sigma: Arc::new(sigma), beta: Arc::new(beta), rho: Arc::new(rho) }
    }

    pub fn constant(sigma: DMatrix<f64>, beta: DVector<f64>, rho: f64) -> Self {
        let dim = beta.len();
        Self::new(dim, move |_, _| sigma.clone(), move |_, _| beta.clone(), move |_, _| rho)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        (self.sigma)(t, x)
    }

    pub fn beta(&self, t: f64, x: &[f64]) -> DVector<f64> {
        (self.beta)(t, x)
    }

    pub fn rho(&self, t: f64, x: &[f64]) -> f64 {
        (self.rho)(t, x)
    }

    /// `½ σ σᵀ` at `(t, x)`.
    pub fn diffusion(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let s = self.sigma(t, x);
        0.5 * &s * s.transpose()
    }
}

fn exp_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.exp()).collect()
}

/// A bounded Lipschitz payoff, available both in price and log-price
/// coordinates.
#[derive(Clone)]
pub struct PayoffSpec {
    dim: usize,
    g_price: PayoffFn,
    g_log: PayoffFn,
    sup_g: f64,
    lip_g: f64,
}

impl fmt::Debug for PayoffSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PayoffSpec")
            .field("dim", &self.dim)
            .field("sup_g", &self.sup_g)
            .field("lip_g", &self.lip_g)
            .finish_non_exhaustive()
    }
}

impl PayoffSpec {
    /// Payoff given as `ḡ(S)`; `lip_g` is the Lipschitz constant of
    /// `x ↦ ḡ(eˣ)`.
    pub fn from_price_fn<F>(dim: usize, g_price: F, sup_g: f64, lip_g: f64) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        check_payoff_constants(dim, sup_g, lip_g)?;
        let g_price: PayoffFn = Arc::new(g_price);
        let inner = Arc::clone(&g_price);
        Ok(Self { dim, g_price, g_log: Arc::new(move |x| inner(&exp_vec(x))), sup_g, lip_g })
    }

    /// Payoff given directly in log-price coordinates.
    pub fn from_log_fn<F>(dim: usize, g_log: F, sup_g: f64, lip_g: f64) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        check_payoff_constants(dim, sup_g, lip_g)?;
        let g_log: PayoffFn = Arc::new(g_log);
        let inner = Arc::clone(&g_log);
        Ok(Self {
            dim,
            g_log,
            g_price: Arc::new(move |s| {
                let x: Vec<f64> = s.iter().map(|v| v.ln()).collect();
                inner(&x)
            }),
            sup_g,
            lip_g,
        })
    }

    /// The identically zero payoff.
    pub fn zero(dim: usize) -> Self {
        Self::from_log_fn(dim, |_| 0.0, 0.0, 0.0).expect("zero payoff constants are valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sup_g(&self) -> f64 {
        self.sup_g
    }

    pub fn lip_g(&self) -> f64 {
        self.lip_g
    }

    pub fn g_price(&self, s: &[f64]) -> f64 {
        (self.g_price)(s)
    }

    pub fn g_log(&self, x: &[f64]) -> f64 {
        (self.g_log)(x)
    }

    /// Spot-checks `|g| <= sup_g` on `points` and the Lipschitz bound on all
    /// consecutive pairs.
    pub fn check_bounds(&self, points: &[Vec<f64>]) -> Result<()> {
        let tol = 1e-12 * (1.0 + self.sup_g);
        for x in points {
            let v = self.g_log(x);
            if v.abs() > self.sup_g + tol {
                return Err(invalid("sup_g", format!("|g({x:?})| = {} exceeds sup_g = {}", v.abs(), self.sup_g)));
            }
        }
        for pair in points.windows(2) {
            let (x, y) = (&pair[0], &pair[1]);
            let dist = euclid(x, y);
            let diff = (self.g_log(x) - self.g_log(y)).abs();
            if diff > self.lip_g * dist + tol {
                return Err(invalid(
                    "lip_g",
                    format!("|g(x) - g(y)| = {diff} > lip_g·|x - y| = {}", self.lip_g * dist),
                ));
            }
        }
        Ok(())
    }
}

fn check_payoff_constants(dim: usize, sup_g: f64, lip_g: f64) -> Result<()> {
    if dim == 0 {
        return Err(invalid("d", "payoff dimension must be positive"));
    }
    if !(sup_g >= 0.0 && sup_g.is_finite()) {
        return Err(invalid("sup_g", format!("must be finite and nonnegative, got {sup_g}")));
    }
    if !(lip_g >= 0.0 && lip_g.is_finite()) {
        return Err(invalid("lip_g", format!("must be finite and nonnegative, got {lip_g}")));
    }
    Ok(())
}

/// Single-asset put `max(K − S, 0)`.
pub fn put_payoff(strike: f64) -> Result<PayoffSpec> {
    if !(strike > 0.0 && strike.is_finite()) {
        return Err(invalid("K_strike", format!("strike must be positive, got {strike}")));
    }
    PayoffSpec::from_price_fn(1, move |s| (strike - s[0]).max(0.0), strike, strike)
}

/// Basket put `max(K − Σ wᵢ Sᵢ, 0)` with nonnegative weights.
pub fn basket_put_payoff(strike: f64, weights: Vec<f64>) -> Result<PayoffSpec> {
    if !(strike > 0.0 && strike.is_finite()) {
        return Err(invalid("K_strike", format!("strike must be positive, got {strike}")));
    }
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(invalid("weights", "weights must be nonnegative and nonempty"));
    }
    let dim = weights.len();
    // In log coordinates |∇g| = |(wᵢ eˣⁱ)ᵢ| <= Σ wᵢ eˣⁱ <= K wherever g > 0.
    PayoffSpec::from_price_fn(
        dim,
        move |s| {
            let basket: f64 = weights.iter().zip(s).map(|(w, v)| w * v).sum();
            (strike - basket).max(0.0)
        },
        strike,
        strike,
    )
}

/// `g` cut off outside a ball: equal to `g` on `B_{R1}(center)`, zero outside
/// `B_{R1+1}(center)`, linear ramp in between.
#[derive(Clone, Debug)]
pub struct CutoffPayoff {
    base: PayoffSpec,
    r1: f64,
    center: Vec<f64>,
}

impl CutoffPayoff {
    pub fn new(base: PayoffSpec, r1: f64, center: Vec<f64>) -> Result<Self> {
        if !(r1 > 0.0 && r1.is_finite()) {
            return Err(invalid("R1", format!("cutoff radius must be positive, got {r1}")));
        }
        if center.len() != base.dim() {
            return Err(Error::DimensionMismatch { expected: base.dim(), got: center.len() });
        }
        Ok(Self { base, r1, center })
    }

    pub fn base(&self) -> &PayoffSpec {
        &self.base
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Multiplier in `[0, 1]` applied to `g` at distance `dist` from the centre.
    pub fn ramp(&self, dist: f64) -> f64 {
        (self.r1 + 1.0 - dist).clamp(0.0, 1.0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let ramp = self.ramp(euclid(x, &self.center));
        if ramp == 0.0 {
            0.0
        } else {
            ramp * self.base.g_log(x)
        }
    }
}

pub(crate) fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}
