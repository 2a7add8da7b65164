//! Rectangular chart grids and node-major tensor fields.
//!
//! Nodes are numbered row-major: the last axis varies fastest. A field stores
//! all components of node 0, then node 1, and so on; within a node the
//! components are row-major over the slot list.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stencil;

/// Minimum nodes per axis: the boundary second-derivative stencil spans four.
pub const MIN_NODES_PER_AXIS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartGrid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    origin: Vec<f64>,
}

impl ChartGrid {
    pub fn new(dims: Vec<usize>, spacing: Vec<f64>, origin: Vec<f64>) -> Result<Self> {
        let n = dims.len();
        if !(1..=3).contains(&n) {
            return Err(Error::Grid(format!("chart dimension must be 1, 2 or 3, got {n}")));
        }
        if spacing.len() != n || origin.len() != n {
            return Err(Error::Grid("dims, spacing and origin must have equal length".into()));
        }
        if let Some(d) = dims.iter().find(|&&d| d < MIN_NODES_PER_AXIS) {
            return Err(Error::Grid(format!("every axis needs at least {MIN_NODES_PER_AXIS} nodes, got {d}")));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::Grid("spacing must be positive and finite".into()));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Grid("origin must be finite".into()));
        }
        Ok(Self { dims, spacing, origin })
    }

    /// Uniform grid covering `[lo, hi]` on every axis with `nodes` nodes each.
    pub fn cube(n: usize, nodes: usize, lo: f64, hi: f64) -> Result<Self> {
        let h = (hi - lo) / (nodes as f64 - 1.0);
        Self::new(vec![nodes; n], vec![h; n], vec![lo; n])
    }

    pub fn n(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.dims[axis + 1..].iter().product()
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().enumerate().map(|(a, &i)| i * self.stride(a)).sum()
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        (0..self.n()).map(|a| (node / self.stride(a)) % self.dims[a]).collect()
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        self.multi_index(node).iter().enumerate().map(|(a, &i)| self.origin[a] + i as f64 * self.spacing[a]).collect()
    }

    /// Neighbour `offset` steps along `axis`, if inside the grid.
    pub fn neighbor(&self, node: usize, axis: usize, offset: isize) -> Option<usize> {
        let i = (node / self.stride(axis)) % self.dims[axis];
        let j = i as isize + offset;
        if j < 0 || j >= self.dims[axis] as isize {
            return None;
        }
        Some((node as isize + offset * self.stride(axis) as isize) as usize)
    }

    /// Length of the grid along `axis`.
    pub fn extent(&self, axis: usize) -> f64 {
        (self.dims[axis] - 1) as f64 * self.spacing[axis]
    }
}

/// Index kind of one tensor slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    TangentUp,
    TangentDown,
    BundleUp,
    BundleDown,
    /// Index of the rank `n+p+2` Lorentzian bundle.
    FiberUp,
    FiberDown,
}

impl Slot {
    pub fn dim(self, n: usize, p: usize) -> usize {
        match self {
            Slot::TangentUp | Slot::TangentDown => n,
            Slot::BundleUp | Slot::BundleDown => p,
            Slot::FiberUp | Slot::FiberDown => n + p + 2,
        }
    }
}

/// Numeric field on a [`ChartGrid`] with a fixed component shape per node.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: ChartGrid,
    rank: usize,
    slots: Vec<Slot>,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TensorField {
    /// Wraps node-major `values`; `rank` is the bundle rank `p`.
    pub fn new(grid: ChartGrid, rank: usize, slots: Vec<Slot>, values: Vec<f64>) -> Result<Self> {
        let shape: Vec<usize> = slots.iter().map(|s| s.dim(grid.n(), rank)).collect();
        let stride: usize = shape.iter().product();
        let expected = stride * grid.node_count();
        if values.len() != expected {
            return Err(Error::Dimension { expected, got: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let node = pos / stride.max(1);
            return Err(Error::Schema(format!("non-finite value at node {node} (coordinates {:?})", grid.coords(node))));
        }
        Ok(Self { grid, rank, slots, shape, values })
    }

    pub fn zeros(grid: &ChartGrid, rank: usize, slots: Vec<Slot>) -> Self {
        let shape: Vec<usize> = slots.iter().map(|s| s.dim(grid.n(), rank)).collect();
        let len = shape.iter().product::<usize>() * grid.node_count();
        Self { grid: grid.clone(), rank, slots, shape, values: vec![0.0; len] }
    }

    /// Fills each node from `fill(node, components)`, node-parallel.
    pub fn from_fn<F>(grid: &ChartGrid, rank: usize, slots: Vec<Slot>, fill: F) -> Self
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        let mut field = Self::zeros(grid, rank, slots);
        let stride = field.stride();
        if stride > 0 {
            field.values.par_chunks_mut(stride).enumerate().for_each(|(node, out)| fill(node, out));
        }
        field
    }

    pub fn grid(&self) -> &ChartGrid {
        &self.grid
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Components per node.
    pub fn stride(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn node(&self, node: usize) -> &[f64] {
        let s = self.stride();
        &self.values[node * s..(node + 1) * s]
    }

    pub fn node_mut(&mut self, node: usize) -> &mut [f64] {
        let s = self.stride();
        &mut self.values[node * s..(node + 1) * s]
    }

    /// Row-major `rows × cols` block of node components starting at `offset`.
    pub fn block(&self, node: usize, offset: usize, rows: usize, cols: usize) -> DMatrix<f64> {
        let d = self.node(node);
        DMatrix::from_fn(rows, cols, |i, j| d[offset + i * cols + j])
    }

    /// The node's components as a matrix over the first slot and the rest.
    pub fn matrix_at(&self, node: usize) -> DMatrix<f64> {
        let rows = self.shape.first().copied().unwrap_or(1);
        let cols = self.stride() / rows.max(1);
        self.block(node, 0, rows, cols)
    }

    pub fn same_grid(&self, other: &TensorField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Componentwise first derivative along `axis`.
    pub fn partial(&self, axis: usize) -> TensorField {
        TensorField {
            grid: self.grid.clone(),
            rank: self.rank,
            slots: self.slots.clone(),
            shape: self.shape.clone(),
            values: diff_axis(&self.grid, &self.values, self.stride(), axis),
        }
    }

    /// Componentwise second derivative `∂_a ∂_b`: the dedicated second-order
    /// stencil on the diagonal, composed first-derivative stencils off it.
    pub fn second_partial(&self, a: usize, b: usize) -> TensorField {
        let values = if a == b {
            diff2_axis(&self.grid, &self.values, self.stride(), a)
        } else {
            let inner = diff_axis(&self.grid, &self.values, self.stride(), b);
            diff_axis(&self.grid, &inner, self.stride(), a)
        };
        TensorField { values, ..self.clone_shape() }
    }

    fn clone_shape(&self) -> TensorField {
        TensorField {
            grid: self.grid.clone(),
            rank: self.rank,
            slots: self.slots.clone(),
            shape: self.shape.clone(),
            values: Vec::new(),
        }
    }

    /// Same shape, values replaced.
    pub fn with_values(&self, values: Vec<f64>) -> Result<TensorField> {
        TensorField::new(self.grid.clone(), self.rank, self.slots.clone(), values)
    }
}

/// First derivative along `axis` of a node-major array with `comps`
/// components per node.
pub fn diff_axis(grid: &ChartGrid, values: &[f64], comps: usize, axis: usize) -> Vec<f64> {
    let len = grid.dims()[axis];
    let stride = grid.stride(axis) as isize;
    let h = grid.spacing()[axis];
    let mut out = vec![0.0; values.len()];
    if comps == 0 {
        return out;
    }
    out.par_chunks_mut(comps).enumerate().for_each(|(node, o)| {
        let i = (node / stride as usize) % len;
        for (off, w) in stencil::first(i, len) {
            if w == 0.0 {
                continue;
            }
            let j = (node as isize + off * stride) as usize;
            for c in 0..comps {
                o[c] += w * values[j * comps + c];
            }
        }
        for x in o.iter_mut() {
            *x /= h;
        }
    });
    out
}

/// Second derivative along `axis`.
pub fn diff2_axis(grid: &ChartGrid, values: &[f64], comps: usize, axis: usize) -> Vec<f64> {
    let len = grid.dims()[axis];
    let stride = grid.stride(axis) as isize;
    let h2 = grid.spacing()[axis].powi(2);
    let mut out = vec![0.0; values.len()];
    if comps == 0 {
        return out;
    }
    out.par_chunks_mut(comps).enumerate().for_each(|(node, o)| {
        let i = (node / stride as usize) % len;
        for (off, w) in stencil::second(i, len) {
            if w == 0.0 {
                continue;
            }
            let j = (node as isize + off * stride) as usize;
            for c in 0..comps {
                o[c] += w * values[j * comps + c];
            }
        }
        for x in o.iter_mut() {
            *x /= h2;
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(ChartGrid::new(vec![4], vec![0.1], vec![0.0]).is_err());
        assert!(ChartGrid::new(vec![5, 5, 5, 5], vec![0.1; 4], vec![0.0; 4]).is_err());
        assert!(ChartGrid::new(vec![5], vec![0.0], vec![0.0]).is_err());
        assert!(ChartGrid::new(vec![5, 6], vec![0.1], vec![0.0]).is_err());
        assert!(ChartGrid::new(vec![5, 6], vec![0.1, 0.2], vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn indexing_is_row_major() {
        let g = ChartGrid::new(vec![5, 6, 7], vec![0.1, 0.2, 0.3], vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(g.stride(2), 1);
        assert_eq!(g.stride(0), 42);
        let node = g.index(&[2, 3, 4]);
        assert_eq!(g.multi_index(node), vec![2, 3, 4]);
        let c = g.coords(node);
        assert!((c[1] - 1.6).abs() < 1e-12);
        assert_eq!(g.neighbor(node, 1, 1), Some(g.index(&[2, 4, 4])));
        assert_eq!(g.neighbor(g.index(&[0, 0, 6]), 2, 1), None);
    }

    #[test]
    fn nan_is_rejected_with_node() {
        let g = ChartGrid::cube(1, 5, 0.0, 1.0).unwrap();
        let mut v = vec![0.0; 5];
        v[3] = f64::NAN;
        let err = TensorField::new(g, 1, vec![], v).unwrap_err();
        assert!(err.to_string().contains("node 3"));
    }

    #[test]
    fn partials_of_polynomial_field() {
        let g = ChartGrid::new(vec![6, 7], vec![0.1, 0.2], vec![0.0, -0.5]).unwrap();
        let f = TensorField::from_fn(&g, 1, vec![], |node, out| {
            let x = g.coords(node);
            out[0] = x[0] * x[0] * x[1] + 3.0 * x[1];
        });
        let fx = f.partial(0);
        let fxy = f.second_partial(0, 1);
        let fyy = f.second_partial(1, 1);
        for node in 0..g.node_count() {
            let x = g.coords(node);
            assert!((fx.node(node)[0] - 2.0 * x[0] * x[1]).abs() < 1e-10);
            assert!((fxy.node(node)[0] - 2.0 * x[0]).abs() < 1e-10);
            assert!(fyy.node(node)[0].abs() < 1e-9);
        }
    }
}
