//! Space-time grid and the computational cylinder `Q_R`.
//!
//! Spatial nodes are `x0 + h·i` for integer multi-indices `i` in the axis
//! basis. The enumerated nodes are those strictly inside `B_R` plus their
//! stencil neighbours, so every interior node has its full one-ring.
//! Time levels are `t_j = min(t0 + j·τ, T)` for `j = 0..=N`, the last one
//! being exactly `T`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default cap on the number of space-time nodes.
pub const DEFAULT_NODE_CAP: u128 = 50_000_000;

const NONE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub tau: f64,
    pub h: f64,
    pub expiry: f64,
    /// Positive stencil directions `ℓ_1..ℓ_{d1}`.
    pub directions: Vec<Vec<i64>>,
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.x0.is_empty() {
            return Err(invalid("x0", "at least one spatial dimension is required"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau", format!("must be positive, got {}", self.tau)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid("h", format!("must be positive, got {}", self.h)));
        }
        if !(self.t0 < self.expiry) {
            return Err(invalid("t0", format!("must precede the expiry {}", self.expiry)));
        }
        if self.tau > self.expiry - self.t0 {
            return Err(invalid("tau", "time step exceeds the time horizon"));
        }
        if self.directions.is_empty() {
            return Err(invalid("directions", "at least one direction is required"));
        }
        for l in &self.directions {
            if l.len() != self.x0.len() {
                return Err(Error::DimensionMismatch { expected: self.x0.len(), got: l.len() });
            }
        }
        Ok(())
    }

    /// Number of time steps `N`; level `N` is the terminal level `t = T`.
    pub fn n_steps(&self) -> usize {
        let ratio = (self.expiry - self.t0) / self.tau;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as usize
        } else {
            ratio.ceil() as usize
        }
    }

    pub fn time(&self, j: usize) -> f64 {
        if j >= self.n_steps() {
            self.expiry
        } else {
            (self.t0 + j as f64 * self.tau).min(self.expiry)
        }
    }

    fn max_dir_len(&self) -> f64 {
        self.directions.iter().map(|l| (l.iter().map(|c| (c * c) as f64).sum::<f64>()).sqrt()).fold(0.0, f64::max)
    }
}

/// A space-time node: time level `j` and spatial multi-index `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeIndex {
    pub j: usize,
    pub i: Vec<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeClass {
    /// In `Q_R = ([0, T) × B_R) ∩ M_T`.
    Interior,
    /// Spatial exterior `|x - c| >= R`, or the terminal level.
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeStats {
    pub dim: usize,
    pub time_levels: usize,
    pub spatial_nodes: usize,
    pub interior_spatial_nodes: usize,
    pub total_nodes: usize,
    pub interior_nodes: usize,
}

#[derive(Clone, Debug)]
pub struct Lattice {
    spec: LatticeSpec,
    radius: f64,
    center: Vec<f64>,
    times: Vec<f64>,
    box_lo: Vec<i64>,
    box_shape: Vec<usize>,
    /// Bounding-box slot → spatial node id.
    slot: Vec<u32>,
    /// Flattened multi-indices, `dim` per node, in lexicographic order.
    indices: Vec<i64>,
    interior: Vec<bool>,
    interior_ids: Vec<usize>,
    interior_row: Vec<u32>,
    /// `2·d1` neighbour ids per node, ordered `+1, -1, +2, -2, …`.
    neighbors: Vec<u32>,
}

impl Lattice {
    /// Builds the lattice for the ball `B_R(center)` with the default node cap.
    pub fn build(spec: LatticeSpec, radius: f64, center: Vec<f64>) -> Result<Self> {
        Self::build_with_cap(spec, radius, center, DEFAULT_NODE_CAP)
    }

    pub fn build_with_cap(spec: LatticeSpec, radius: f64, center: Vec<f64>, cap: u128) -> Result<Self> {
        spec.validate()?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("R", format!("radius must be positive, got {radius}")));
        }
        let dim = spec.x0.len();
        if center.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: center.len() });
        }
        let n_levels = spec.n_steps() + 1;
        let reach = (radius + spec.h * spec.max_dir_len()) * (1.0 + 1e-12);

        let mut box_lo = Vec::with_capacity(dim);
        let mut box_shape = Vec::with_capacity(dim);
        let mut box_size: u128 = 1;
        for (c, x0) in center.iter().zip(&spec.x0) {
            let lo = ((c - reach - x0) / spec.h).floor() as i64;
            let hi = ((c + reach - x0) / spec.h).ceil() as i64;
            let n = (hi - lo + 1) as u128;
            box_size = box_size.saturating_mul(n);
            box_lo.push(lo);
            box_shape.push(n as usize);
        }
        if box_size.saturating_mul(n_levels as u128) > cap.saturating_mul(4) {
            return Err(Error::GridTooLarge { nodes: box_size.saturating_mul(n_levels as u128), cap });
        }

        let box_size = box_size as usize;
        // Interior nodes first, then exactly their stencil neighbours.
        let mut inside = vec![false; box_size];
        let mut keep = vec![false; box_size];
        let mut idx = vec![0i64; dim];
        let mut buf = vec![0i64; dim];
        for s in 0..box_size {
            unflatten(s, &box_lo, &box_shape, &mut idx);
            if distance(&spec, &idx, &center) < radius {
                inside[s] = true;
                keep[s] = true;
                for l in &spec.directions {
                    for sign in [1i64, -1] {
                        for a in 0..dim {
                            buf[a] = idx[a] + sign * l[a];
                        }
                        if let Some(n) = flatten(&buf, &box_lo, &box_shape) {
                            keep[n] = true;
                        }
                    }
                }
            }
        }
        let mut slot = vec![NONE; box_size];
        let mut indices = Vec::new();
        let mut interior = Vec::new();
        for s in 0..box_size {
            if keep[s] {
                unflatten(s, &box_lo, &box_shape, &mut idx);
                slot[s] = interior.len() as u32;
                indices.extend_from_slice(&idx);
                interior.push(inside[s]);
            }
        }
        let n_space = interior.len();
        let total = (n_space as u128) * (n_levels as u128);
        if total > cap {
            return Err(Error::GridTooLarge { nodes: total, cap });
        }

        let mut interior_ids = Vec::new();
        let mut interior_row = vec![NONE; n_space];
        for (id, inside) in interior.iter().enumerate() {
            if *inside {
                interior_row[id] = interior_ids.len() as u32;
                interior_ids.push(id);
            }
        }

        let mut lattice = Self {
            times: (0..n_levels).map(|j| spec.time(j)).collect(),
            spec,
            radius,
            center,
            box_lo,
            box_shape,
            slot,
            indices,
            interior,
            interior_ids,
            interior_row,
            neighbors: Vec::new(),
        };
        lattice.neighbors = lattice.link_neighbors();
        Ok(lattice)
    }

    fn link_neighbors(&self) -> Vec<u32> {
        let d1 = self.spec.directions.len();
        let mut out = Vec::with_capacity(self.n_space() * 2 * d1);
        let mut buf = vec![0i64; self.dim()];
        for id in 0..self.n_space() {
            let base = self.index(id);
            for l in &self.spec.directions {
                for sign in [1i64, -1] {
                    for a in 0..buf.len() {
                        buf[a] = base[a] + sign * l[a];
                    }
                    out.push(self.slot_of(&buf).map_or(NONE, |s| self.slot[s]));
                }
            }
        }
        out
    }

    fn slot_of(&self, i: &[i64]) -> Option<usize> {
        flatten(i, &self.box_lo, &self.box_shape)
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.x0.len()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn n_levels(&self) -> usize {
        self.times.len()
    }

    pub fn terminal_level(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, j: usize) -> f64 {
        self.times[j]
    }

    /// Forward step `τ_T(t_j) = min(τ, T − t_j)` taken from level `j`.
    pub fn step(&self, j: usize) -> f64 {
        self.times[j + 1] - self.times[j]
    }

    pub fn n_space(&self) -> usize {
        self.interior.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_space() * self.n_levels()
    }

    /// Spatial multi-index of node `id`.
    #[allow(clippy::should_implement_trait)]
    pub fn index(&self, id: usize) -> &[i64] {
        let d = self.dim();
        &self.indices[id * d..(id + 1) * d]
    }

    pub fn position(&self, id: usize) -> Vec<f64> {
        self.index(id).iter().zip(&self.spec.x0).map(|(i, x0)| x0 + self.spec.h * *i as f64).collect()
    }

    pub fn node_id(&self, i: &[i64]) -> Option<usize> {
        if i.len() != self.dim() {
            return None;
        }
        self.slot_of(i).map(|s| self.slot[s]).filter(|id| *id != NONE).map(|id| id as usize)
    }

    /// `(t, x)` of a space-time node.
    pub fn coordinates(&self, node: &NodeIndex) -> Option<(f64, Vec<f64>)> {
        let id = self.node_id(&node.i)?;
        let t = *self.times.get(node.j)?;
        Some((t, self.position(id)))
    }

    /// Spatial node lies in `B_R`.
    pub fn in_ball(&self, id: usize) -> bool {
        self.interior[id]
    }

    pub fn is_interior(&self, j: usize, id: usize) -> bool {
        j < self.terminal_level() && self.interior[id]
    }

    pub fn classify(&self, node: &NodeIndex) -> Option<NodeClass> {
        let id = self.node_id(&node.i)?;
        if node.j >= self.n_levels() {
            return None;
        }
        Some(if self.is_interior(node.j, id) { NodeClass::Interior } else { NodeClass::Boundary })
    }

    /// Spatial ids inside `B_R`, in lexicographic order. Row `r` of every
    /// level operator corresponds to `interior_ids()[r]`.
    pub fn interior_ids(&self) -> &[usize] {
        &self.interior_ids
    }

    pub fn interior_row(&self, id: usize) -> Option<usize> {
        let r = self.interior_row[id];
        (r != NONE).then_some(r as usize)
    }

    /// Neighbour of spatial node `id` along the signed direction `k`.
    pub fn neighbor_id(&self, id: usize, k: i32) -> Option<usize> {
        let d1 = self.spec.directions.len();
        let p = k.unsigned_abs() as usize - 1;
        let col = 2 * p + usize::from(k < 0);
        let n = self.neighbors[id * 2 * d1 + col];
        (n != NONE).then_some(n as usize)
    }

    /// The node at `x ± h·ℓ_k` on the same time level.
    pub fn neighbor(&self, node: &NodeIndex, k: i32) -> Result<NodeIndex> {
        let d1 = self.spec.directions.len() as i32;
        if k == 0 || k.abs() > d1 {
            return Err(invalid("k", format!("direction index must be in ±1..±{d1}")));
        }
        let id = self.node_id(&node.i).ok_or_else(|| Error::NeighborOutsideEnumeration { index: node.i.clone(), k })?;
        match self.neighbor_id(id, k) {
            Some(n) => Ok(NodeIndex { j: node.j, i: self.index(n).to_vec() }),
            None => Err(Error::NeighborOutsideEnumeration { index: node.i.clone(), k }),
        }
    }

    pub fn stats(&self) -> LatticeStats {
        LatticeStats {
            dim: self.dim(),
            time_levels: self.n_levels(),
            spatial_nodes: self.n_space(),
            interior_spatial_nodes: self.interior_ids.len(),
            total_nodes: self.n_nodes(),
            interior_nodes: self.interior_ids.len() * self.terminal_level(),
        }
    }

    /// Multilinear interpolation of a level's values at `x`. All `2^d`
    /// corners of the enclosing cell must be enumerated.
    pub fn interpolate(&self, level_values: &[f64], x: &[f64]) -> Result<f64> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        let mut base = vec![0i64; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let u = (x[a] - self.spec.x0[a]) / self.spec.h;
            let fl = u.floor();
            // snap to a node when within rounding distance
            let (b, f) = if (u - u.round()).abs() < 1e-9 { (u.round() as i64, 0.0) } else { (fl as i64, u - fl) };
            base[a] = b;
            frac[a] = f;
        }
        let mut acc = 0.0;
        let mut corner = vec![0i64; d];
        for mask in 0..(1usize << d) {
            let mut weight = 1.0;
            for a in 0..d {
                let up = (mask >> a) & 1 == 1;
                corner[a] = base[a] + i64::from(up);
                weight *= if up { frac[a] } else { 1.0 - frac[a] };
            }
            if weight == 0.0 {
                continue;
            }
            let id = self.node_id(&corner).ok_or_else(|| Error::OutsideLattice { x: x.to_vec() })?;
            acc += weight * level_values[id];
        }
        Ok(acc)
    }
}

fn flatten(i: &[i64], lo: &[i64], shape: &[usize]) -> Option<usize> {
    let mut s = 0usize;
    for a in 0..i.len() {
        let off = i[a] - lo[a];
        if off < 0 || off as usize >= shape[a] {
            return None;
        }
        s = s * shape[a] + off as usize;
    }
    Some(s)
}

fn unflatten(mut s: usize, lo: &[i64], shape: &[usize], out: &mut [i64]) {
    for a in (0..shape.len()).rev() {
        out[a] = lo[a] + (s % shape[a]) as i64;
        s /= shape[a];
    }
}

fn distance(spec: &LatticeSpec, i: &[i64], center: &[f64]) -> f64 {
    i.iter()
        .zip(&spec.x0)
        .zip(center)
        .map(|((i, x0), c)| {
            let v = x0 + spec.h * *i as f64 - c;
            v * v
        })
        .sum::<f64>()
        .sqrt()
}
