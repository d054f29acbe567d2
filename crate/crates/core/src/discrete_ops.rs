//! Finite-difference operators on the lattice and the assembled discrete
//! generator of one time level.
//!
//! ```text
//! δ_τ f(t,x)   = (f(t + τ_T(t), x) − f(t,x)) / τ        τ_T(t) = min(τ, T − t)
//! δ_{h,ℓ} f    = (f(x + hℓ) − f(x)) / h
//! Δ_{h,ℓ} f    = (f(x + hℓ) + f(x − hℓ) − 2 f(x)) / h²
//! L_h f        = Σ_k (a_k Δ_{h,ℓ_k} f + b_k δ_{h,ℓ_k} f) − ρ f
//! ```
//!
//! The time difference divides by `τ` even on the clamped final step.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, NodeIndex};
use crate::model::LogModel;
use crate::stencil::{DirCoeffs, StencilDecomposition};

/// Values on every node of a lattice, stored level by level.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    n_space: usize,
    n_levels: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(lattice: &Lattice) -> Self {
        Self { n_space: lattice.n_space(), n_levels: lattice.n_levels(), values: vec![0.0; lattice.n_nodes()] }
    }

    pub fn from_fn<F: Fn(f64, &[f64]) -> f64>(lattice: &Lattice, f: F) -> Self {
        let mut g = Self::zeros(lattice);
        for id in 0..lattice.n_space() {
            let x = lattice.position(id);
            for j in 0..lattice.n_levels() {
                g.set(j, id, f(lattice.time(j), &x));
            }
        }
        g
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn get(&self, j: usize, id: usize) -> f64 {
        self.values[j * self.n_space + id]
    }

    pub fn set(&mut self, j: usize, id: usize, v: f64) {
        self.values[j * self.n_space + id] = v;
    }

    pub fn level(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_space..(j + 1) * self.n_space]
    }

    pub fn level_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.n_space..(j + 1) * self.n_space]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn resolve(lattice: &Lattice, node: &NodeIndex) -> Result<usize> {
    if node.j >= lattice.n_levels() {
        return Err(Error::NeighborOutsideEnumeration { index: node.i.clone(), k: 0 });
    }
    lattice.node_id(&node.i).ok_or_else(|| Error::NeighborOutsideEnumeration { index: node.i.clone(), k: 0 })
}

fn neighbor_value(lattice: &Lattice, f: &GridFunction, node: &NodeIndex, id: usize, k: i32) -> Result<f64> {
    lattice
        .neighbor_id(id, k)
        .map(|n| f.get(node.j, n))
        .ok_or_else(|| Error::NeighborOutsideEnumeration { index: node.i.clone(), k })
}

/// `(f(t + τ_T(t), x) − f(t, x)) / τ`.
pub fn delta_time(lattice: &Lattice, f: &GridFunction, node: &NodeIndex) -> Result<f64> {
    let id = resolve(lattice, node)?;
    if node.j >= lattice.terminal_level() {
        return Err(Error::TerminalLevel { level: node.j });
    }
    Ok((f.get(node.j + 1, id) - f.get(node.j, id)) / lattice.spec().tau)
}

/// `(f(x + hℓ_k) − f(x)) / h` for the signed direction `k`.
pub fn delta_dir(lattice: &Lattice, f: &GridFunction, node: &NodeIndex, k: i32) -> Result<f64> {
    let id = resolve(lattice, node)?;
    let fwd = neighbor_value(lattice, f, node, id, k)?;
    Ok((fwd - f.get(node.j, id)) / lattice.spec().h)
}

/// `(f(x + hℓ_k) + f(x − hℓ_k) − 2 f(x)) / h²`.
pub fn second_dir(lattice: &Lattice, f: &GridFunction, node: &NodeIndex, k: i32) -> Result<f64> {
    let id = resolve(lattice, node)?;
    let fwd = neighbor_value(lattice, f, node, id, k)?;
    let bwd = neighbor_value(lattice, f, node, id, -k)?;
    let h = lattice.spec().h;
    Ok((fwd + bwd - 2.0 * f.get(node.j, id)) / (h * h))
}

/// `L_h f` at `node`, with coefficients frozen at the node's `(t, x)`.
pub fn apply_lh(
    dec: &StencilDecomposition,
    model: &LogModel,
    lattice: &Lattice,
    f: &GridFunction,
    node: &NodeIndex,
) -> Result<f64> {
    let id = resolve(lattice, node)?;
    let t = lattice.time(node.j);
    let x = lattice.position(id);
    let c = dec.coeffs(t, &x);
    let mut acc = 0.0;
    for k in dec.signed_indices() {
        let p = k.unsigned_abs() as usize - 1;
        acc += c.a[p] * second_dir(lattice, f, node, k)? + c.b(k) * delta_dir(lattice, f, node, k)?;
    }
    Ok(acc - model.rho(t, &x) * f.get(node.j, id))
}

/// Sparse rows of `L_h` restricted to the interior nodes of one time level.
///
/// For interior values `v` extended by the level's boundary values,
/// `(A v)_r + boundary_r` equals `L_h` at interior node `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelOperator {
    level: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
    boundary: Vec<f64>,
    exterior_weight: Vec<f64>,
}

struct Row {
    diag: f64,
    entries: Vec<(usize, f64)>,
    boundary: f64,
    exterior_weight: f64,
}

fn check_nonnegative(c: &DirCoeffs, t: f64, x: &[f64]) -> Result<()> {
    for (p, a) in c.a.iter().enumerate() {
        if *a < 0.0 || a.is_nan() {
            return Err(Error::NegativeCoefficient { k: p as i32 + 1, value: *a, t, x: x.to_vec() });
        }
    }
    for (p, (bp, bn)) in c.b_pos.iter().zip(&c.b_neg).enumerate() {
        if *bp < 0.0 || bp.is_nan() {
            return Err(Error::NegativeCoefficient { k: p as i32 + 1, value: *bp, t, x: x.to_vec() });
        }
        if *bn < 0.0 || bn.is_nan() {
            return Err(Error::NegativeCoefficient { k: -(p as i32 + 1), value: *bn, t, x: x.to_vec() });
        }
    }
    Ok(())
}

/// Assembles `L_h` on level `j`. `boundary_values` holds the level's values
/// indexed by spatial id; only entries outside `B_R` are read.
pub fn assemble_level(
    dec: &StencilDecomposition,
    model: &LogModel,
    lattice: &Lattice,
    j: usize,
    boundary_values: &[f64],
) -> Result<LevelOperator> {
    if j >= lattice.terminal_level() {
        return Err(Error::TerminalLevel { level: j });
    }
    let t = lattice.time(j);
    let h = lattice.spec().h;
    let h2 = h * h;
    let rows: Vec<Row> = lattice
        .interior_ids()
        .par_iter()
        .map(|&id| {
            let x = lattice.position(id);
            let c = dec.coeffs(t, &x);
            check_nonnegative(&c, t, &x)?;
            let mut row = Row {
                diag: -model.rho(t, &x),
                entries: Vec::with_capacity(2 * dec.d1()),
                boundary: 0.0,
                exterior_weight: 0.0,
            };
            for k in dec.signed_indices() {
                let a = c.a[k.unsigned_abs() as usize - 1];
                let b = c.b(k);
                row.diag -= 2.0 * a / h2 + b / h;
                for (dir, w) in [(k, a / h2 + b / h), (-k, a / h2)] {
                    if w == 0.0 {
                        continue;
                    }
                    let n = lattice.neighbor_id(id, dir).ok_or_else(|| Error::NeighborOutsideEnumeration {
                        index: lattice.index(id).to_vec(),
                        k: dir,
                    })?;
                    match lattice.interior_row(n) {
                        Some(col) => row.entries.push((col, w)),
                        None => {
                            row.boundary += w * boundary_values[n];
                            row.exterior_weight += w;
                        }
                    }
                }
            }
            row.entries.sort_by_key(|e| e.0);
            row.entries.dedup_by(|next, kept| {
                if next.0 == kept.0 {
                    kept.1 += next.1;
                    true
                } else {
                    false
                }
            });
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut op = LevelOperator {
        level: j,
        row_ptr: Vec::with_capacity(rows.len() + 1),
        cols: Vec::new(),
        vals: Vec::new(),
        diag: Vec::with_capacity(rows.len()),
        boundary: Vec::with_capacity(rows.len()),
        exterior_weight: Vec::with_capacity(rows.len()),
    };
    op.row_ptr.push(0);
    for (r, row) in rows.into_iter().enumerate() {
        // the diagonal never appears among the neighbour entries since ℓ_k ≠ 0
        debug_assert!(row.entries.iter().all(|(c, _)| *c != r));
        for (c, v) in row.entries {
            op.cols.push(c);
            op.vals.push(v);
        }
        op.row_ptr.push(op.cols.len());
        op.diag.push(row.diag);
        op.boundary.push(row.boundary);
        op.exterior_weight.push(row.exterior_weight);
    }
    Ok(op)
}

impl LevelOperator {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn n_rows(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Known boundary values folded into each row.
    pub fn boundary(&self) -> &[f64] {
        &self.boundary
    }

    /// Off-diagonal entries `(column, value)` of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    /// `A v` over interior values (boundary contribution excluded).
    pub fn mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.diag[r] * v[r] + self.row(r).map(|(c, w)| w * v[c]).sum::<f64>()).collect()
    }

    /// `A v + boundary`, i.e. `L_h` at every interior node.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.mul(v);
        for (o, b) in out.iter_mut().zip(&self.boundary) {
            *o += b;
        }
        out
    }

    pub fn min_off_diagonal(&self) -> f64 {
        self.vals.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_diagonal(&self) -> f64 {
        self.diag.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Row sums including weights on boundary columns.
    pub fn full_row_sums(&self) -> Vec<f64> {
        (0..self.n_rows())
            .map(|r| self.diag[r] + self.exterior_weight[r] + self.row(r).map(|(_, w)| w).sum::<f64>())
            .collect()
    }

    /// Off-diagonals nonnegative, diagonals nonpositive, row sums nonpositive.
    pub fn is_monotone(&self) -> bool {
        let scale = self.diag.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        self.vals.iter().all(|v| *v >= 0.0)
            && self.diag.iter().all(|d| *d <= 0.0)
            && self.full_row_sums().iter().all(|s| *s <= 1e-12 * scale.max(1.0))
    }

    /// Is every off-diagonal entry within one row of the diagonal?
    pub fn is_tridiagonal(&self) -> bool {
        (0..self.n_rows()).all(|r| self.row(r).all(|(c, _)| c + 1 == r || c == r + 1))
    }
}
