//! Run configuration: the JSON document read by `--config`, flag overrides
//! and the cross-field checks.
//!
//! Layout (see `schema/config.schema.json` for the machine-readable form):
//!
//! ```json
//! {
//!   "schema_version": "1.0.0",
//!   "model":  { "d": 1, "S0": [100.0], "T": 1.0, "rate": 0.05, "vol": [[0.2]] },
//!   "payoff": { "type": "put", "K_strike": 100.0 },
//!   "scheme": { "tau": 0.001, "h": 0.005, "R": 3.0, "R1": 2.5, "R2": 1.0 },
//!   "study":  { "seed": 1, "converge": { ... }, "localize": { ... }, "exitprob": { ... } }
//! }
//! ```
//!
//! `rate` is a number or a time table `{"times": [...], "values": [...]}`;
//! `vol` is a `d × d` matrix or a time table of matrices. Tables are
//! interpolated linearly in `t` and held constant outside their range.
//! Payoff types are `put` (one asset), `basket-put` (with `weights`) and
//! `custom-table` (one asset, `g` piecewise linear in `S` through the points
//! `S`, `g`, constant beyond the ends).

use std::path::Path;

use amfd_core::harness::SCHEMA_VERSION;
use amfd_core::model::{basket_put_payoff, put_payoff, MarketModel, PayoffSpec};
use amfd_core::{LcpMethod, SolveConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: String,
    pub model: ModelSection,
    pub payoff: PayoffSection,
    pub scheme: SchemeSection,
    #[serde(default)]
    pub study: StudySection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    #[serde(rename = "S0")]
    pub s0: Vec<f64>,
    #[serde(rename = "T")]
    pub expiry: f64,
    /// Bound on the rate and volatility norm; derived from the coefficient
    /// tables when absent.
    #[serde(rename = "K_bound", default, skip_serializing_if = "Option::is_none")]
    pub k_bound: Option<f64>,
    pub rate: Coefficient<f64>,
    pub vol: Coefficient<Vec<Vec<f64>>>,
}

/// A constant or a table in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient<V> {
    Table { times: Vec<f64>, values: Vec<V> },
    Constant(V),
}

impl<V: Clone> Coefficient<V> {
    fn knots(&self) -> Vec<V> {
        match self {
            Self::Constant(v) => vec![v.clone()],
            Self::Table { values, .. } => values.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PayoffSection {
    Put {
        #[serde(rename = "K_strike")]
        strike: f64,
    },
    BasketPut {
        #[serde(rename = "K_strike")]
        strike: f64,
        weights: Vec<f64>,
    },
    CustomTable {
        #[serde(rename = "S")]
        s: Vec<f64>,
        g: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub tau: f64,
    pub h: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
    #[serde(default = "default_method")]
    pub method: LcpMethod,
    #[serde(default = "default_lcp_tol")]
    pub lcp_tol: f64,
    #[serde(default)]
    pub european_mode: bool,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_cap: Option<u64>,
}

fn default_method() -> LcpMethod {
    LcpMethod::PolicyIteration
}

fn default_lcp_tol() -> f64 {
    1e-10
}

fn default_omega() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localize: Option<LocalizeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exitprob: Option<ExitProbParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// Binomial-tree price at `S0`; one-asset constant-coefficient puts only.
    Crr,
    FinestGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeParams {
    pub tau0: f64,
    pub h0: f64,
    pub levels: usize,
    pub reference: ReferenceKind,
    #[serde(default = "default_crr_steps")]
    pub crr_steps: usize,
}

fn default_crr_steps() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeParams {
    #[serde(rename = "R_values")]
    pub r_values: Vec<f64>,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R1_values", default)]
    pub r1_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitProbParams {
    pub radii: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    /// Growth constant of the exit bound; estimated from the model when absent.
    #[serde(rename = "K_exit", default, skip_serializing_if = "Option::is_none")]
    pub k_exit: Option<f64>,
}

/// Flag values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub tau: Option<f64>,
    pub h: Option<f64>,
    pub r: Option<f64>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub expiry: Option<f64>,
    pub method: Option<LcpMethod>,
    pub lcp_tol: Option<f64>,
    pub european: bool,
    pub seed: Option<u64>,
}

fn config_err(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config { field: field.to_string(), reason: reason.into() }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| config_err(&json_field(&e), e.to_string()))?;
        if config.schema_version.split('.').next() != SCHEMA_VERSION.split('.').next() {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", config.schema_version),
            ));
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let s = &mut self.scheme;
        if let Some(v) = o.tau {
            s.tau = v;
        }
        if let Some(v) = o.h {
            s.h = v;
        }
        if let Some(v) = o.r {
            s.r = v;
        }
        if let Some(v) = o.r1 {
            s.r1 = v;
        }
        if let Some(v) = o.r2 {
            s.r2 = v;
        }
        if let Some(v) = o.method {
            s.method = v;
        }
        if let Some(v) = o.lcp_tol {
            s.lcp_tol = v;
        }
        if o.european {
            s.european_mode = true;
        }
        if let Some(v) = o.expiry {
            self.model.expiry = v;
        }
        if let Some(v) = o.seed {
            self.study.seed = v;
        }
    }

    /// Cross-field checks. The first violation found is reported.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        let s = &self.scheme;
        if m.d == 0 {
            return Err(config_err("d", "at least one asset is required"));
        }
        if m.s0.len() != m.d || m.s0.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(config_err("S0", format!("need {} positive spot prices, got {:?}", m.d, m.s0)));
        }
        if !(m.expiry > 0.0 && m.expiry.is_finite()) {
            return Err(config_err("T", format!("must be positive, got {}", m.expiry)));
        }
        if !(s.h > 0.0 && s.h.is_finite()) {
            return Err(config_err("h", format!("must be positive, got {}", s.h)));
        }
        if !(s.tau > 0.0 && s.tau < m.expiry) {
            return Err(config_err("tau", format!("need 0 < tau < T = {}, got {}", m.expiry, s.tau)));
        }
        if !(s.r2 > 0.0) {
            return Err(config_err("R2", format!("must be positive, got {}", s.r2)));
        }
        if !(s.r1 > s.r2) {
            return Err(config_err("R1", format!("need R1 > R2, got R1 = {}, R2 = {}", s.r1, s.r2)));
        }
        if !(s.r > s.r1) {
            return Err(config_err("R/R1", format!("need R > R1, got R = {}, R1 = {}", s.r, s.r1)));
        }
        if !(s.lcp_tol > 0.0) {
            return Err(config_err("lcp_tol", format!("must be positive, got {}", s.lcp_tol)));
        }
        if !(s.omega > 0.0 && s.omega < 2.0) {
            return Err(config_err("omega", format!("must lie in (0, 2), got {}", s.omega)));
        }
        if let Some(k) = m.k_bound {
            if !(k > 0.0 && k.is_finite()) {
                return Err(config_err("K_bound", format!("must be positive, got {k}")));
            }
        }
        check_coefficient(&m.rate, "rate", |v| v.is_finite())?;
        check_coefficient(&m.vol, "vol", |v| {
            v.len() == m.d && v.iter().all(|row| row.len() == m.d && row.iter().all(|c| c.is_finite()))
        })?;
        match &self.payoff {
            PayoffSection::Put { strike } | PayoffSection::BasketPut { strike, .. } if !(*strike > 0.0) => {
                return Err(config_err("K_strike", format!("must be positive, got {strike}")));
            }
            PayoffSection::Put { .. } if m.d != 1 => {
                return Err(config_err("payoff", "a plain put needs d = 1; use basket-put"));
            }
            PayoffSection::BasketPut { weights, .. } if weights.len() != m.d => {
                return Err(config_err("weights", format!("need {} weights, got {}", m.d, weights.len())));
            }
            PayoffSection::CustomTable { s, g } => {
                if m.d != 1 {
                    return Err(config_err("payoff", "custom-table payoffs need d = 1"));
                }
                if s.len() < 2 || s.len() != g.len() || s.windows(2).any(|w| !(w[0] < w[1])) || s[0] <= 0.0 {
                    return Err(config_err("S", "need at least two increasing positive prices, one per g value"));
                }
                if g.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(config_err("g", "payoff values must be finite and nonnegative"));
                }
            }
            _ => {}
        }
        if let Some(c) = &self.study.converge {
            if c.levels < 3 {
                return Err(config_err("levels", format!("need at least 3, got {}", c.levels)));
            }
            if !(c.tau0 > 0.0 && c.tau0 < m.expiry) {
                return Err(config_err("tau0", format!("need 0 < tau0 < T, got {}", c.tau0)));
            }
            if !(c.h0 > 0.0) {
                return Err(config_err("h0", format!("must be positive, got {}", c.h0)));
            }
        }
        if let Some(l) = &self.study.localize {
            if !(l.r1 > s.r2) {
                return Err(config_err("localize.R1", format!("need R1 > R2 = {}, got {}", s.r2, l.r1)));
            }
            if let Some(r) = l.r_values.iter().find(|r| !(**r > l.r1)) {
                return Err(config_err("R_values", format!("every R must exceed R1 = {}, got {r}", l.r1)));
            }
        }
        if let Some(e) = &self.study.exitprob {
            if e.radii.iter().any(|r| !(*r > 0.0)) {
                return Err(config_err("radii", "radii must be positive"));
            }
            if e.n_paths == 0 || e.n_steps == 0 {
                return Err(config_err("n_paths", "path and step counts must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn x0(&self) -> Vec<f64> {
        self.model.s0.iter().map(|s| s.ln()).collect()
    }

    pub fn solve_config(&self) -> SolveConfig {
        let s = &self.scheme;
        let mut c = SolveConfig::new(s.tau, s.h, s.r, s.r1, self.model.expiry, self.x0());
        c.method = s.method;
        c.lcp_tol = s.lcp_tol;
        c.european_mode = s.european_mode;
        c.omega = s.omega;
        if let Some(cap) = s.node_cap {
            c.node_cap = cap;
        }
        c
    }

    /// Largest rate and volatility norm over the coefficient knots, unless
    /// given explicitly.
    pub fn k_bound(&self) -> f64 {
        self.model.k_bound.unwrap_or_else(|| {
            let r = self.model.rate.knots().into_iter().fold(0.0, f64::max);
            let v = self.model.vol.knots().iter().map(|m| frobenius(m)).fold(0.0, f64::max);
            r.max(v).max(f64::MIN_POSITIVE)
        })
    }

    pub fn market(&self) -> Result<MarketModel, CliError> {
        let d = self.model.d;
        let rate = table_fn(&self.model.rate, |v| *v);
        let vol = table_fn(&self.model.vol, move |m| to_matrix(d, m));
        MarketModel::new(d, self.model.expiry, self.k_bound(), move |t, _| rate(t), move |t, _| vol(t))
            .map_err(CliError::from_core)
    }

    pub fn payoff(&self) -> Result<PayoffSpec, CliError> {
        let spec = match &self.payoff {
            PayoffSection::Put { strike } => put_payoff(*strike),
            PayoffSection::BasketPut { strike, weights } => basket_put_payoff(*strike, weights.clone()),
            PayoffSection::CustomTable { s, g } => {
                let sup = g.iter().copied().fold(0.0, f64::max);
                // slope in log coordinates is bounded by |Δg/ΔS|·S at the right end of each piece
                let lip = s
                    .windows(2)
                    .zip(g.windows(2))
                    .map(|(sw, gw)| ((gw[1] - gw[0]) / (sw[1] - sw[0])).abs() * sw[1])
                    .fold(0.0, f64::max);
                let (s, g) = (s.clone(), g.clone());
                PayoffSpec::from_price_fn(1, move |p| piecewise_linear(&s, &g, p[0]), sup, lip)
            }
        };
        spec.map_err(CliError::from_core)
    }

    /// Constant rate, constant scalar volatility and a plain put.
    pub fn black_scholes_put(&self) -> Option<(f64, f64, f64)> {
        match (&self.model.rate, &self.model.vol, &self.payoff) {
            (Coefficient::Constant(r), Coefficient::Constant(v), PayoffSection::Put { strike })
                if self.model.d == 1 =>
            {
                Some((*r, v[0][0].abs(), *strike))
            }
            _ => None,
        }
    }
}

fn check_coefficient<V>(c: &Coefficient<V>, name: &str, ok: impl Fn(&V) -> bool) -> Result<(), CliError> {
    match c {
        Coefficient::Constant(v) if !ok(v) => Err(config_err(name, "malformed value")),
        Coefficient::Table { times, values } => {
            if times.is_empty() || times.len() != values.len() {
                return Err(config_err(name, "table needs one value per time, at least one"));
            }
            if times.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(config_err(name, "table times must be strictly increasing"));
            }
            if !values.iter().all(ok) {
                return Err(config_err(name, "malformed table value"));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn frobenius(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

fn to_matrix(d: usize, m: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| m[i][j])
}

fn piecewise_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let k = xs.partition_point(|v| *v <= x);
    let w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    (1.0 - w) * ys[k - 1] + w * ys[k]
}

/// Evaluator of a coefficient at time `t`, with linear interpolation
/// between table rows.
fn table_fn<V, O, F>(c: &Coefficient<V>, convert: F) -> impl Fn(f64) -> O + Send + Sync + 'static
where
    V: Clone,
    O: Clone + std::ops::Mul<f64, Output = O> + std::ops::Add<O, Output = O> + Send + Sync + 'static,
    F: Fn(&V) -> O,
{
    let (times, values): (Vec<f64>, Vec<O>) = match c {
        Coefficient::Constant(v) => (vec![0.0], vec![convert(v)]),
        Coefficient::Table { times, values } => (times.clone(), values.iter().map(convert).collect()),
    };
    move |t| {
        if t <= times[0] || times.len() == 1 {
            return values[0].clone();
        }
        let last = times.len() - 1;
        if t >= times[last] {
            return values[last].clone();
        }
        let k = times.partition_point(|v| *v <= t);
        let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
        values[k - 1].clone() * (1.0 - w) + values[k].clone() * w
    }
}

/// Best guess at the offending field of a JSON error: the backquoted name
/// in serde's message, if any.
fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`').nth(1).map_or_else(|| "config".to_string(), str::to_string)
}
