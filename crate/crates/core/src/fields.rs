//! Typed chart fields and finite-difference tensor calculus.
//!
//! Index conventions (row-major within a node):
//!
//! | field | slots | layout |
//! |-------|-------|--------|
//! | metric `g` | `(↓,↓)` | `[μ][ν]` |
//! | Christoffel `Γ` | `(↑,↓,↓)` | `[λ][μ][ν]` |
//! | Riemann `R` | `(↑,↓,↓,↓)` | `[ρ][σ][μ][ν]`, `R(∂_μ,∂_ν)∂_σ = R^ρ_{σμν} ∂_ρ` |
//! | normal connection `ω` | `(↓, E↑, E↓)` | `[μ][a][b]`, `D_{∂μ} e_b = ω^a_{μb} e_a` |
//! | bundle curvature `F` | `(↓,↓,E↑,E↓)` | `[μ][ν][a][b]` |
//! | second form `σ` | `(↓,↓,E↑)` | `[i][j][a]` |
//!
//! The fiber metric of `E` is the identity, so `ω_μ` is skew.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{ChartGrid, Slot, TensorField};

const SYMMETRY_TOL: f64 = 1e-10;

fn check_slots(field: &TensorField, slots: &[Slot], what: &str) -> Result<()> {
    if field.slots() != slots {
        return Err(Error::Schema(format!("{what} has slots {:?}, expected {slots:?}", field.slots())));
    }
    Ok(())
}

/// Riemannian metric on the chart.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    field: TensorField,
}

impl MetricField {
    /// Validates symmetry and positive definiteness at every node.
    pub fn new(field: TensorField) -> Result<Self> {
        check_slots(&field, &[Slot::TangentDown, Slot::TangentDown], "metric")?;
        let n = field.grid().n();
        for node in 0..field.grid().node_count() {
            let m = field.block(node, 0, n, n);
            let asym = (&m - m.transpose()).amax();
            if asym > SYMMETRY_TOL * m.amax().max(1.0) {
                return Err(Error::Constraint { what: format!("metric not symmetric at node {node}"), defect: asym });
            }
            if m.cholesky().is_none() {
                return Err(Error::Metric { node });
            }
        }
        Ok(Self { field })
    }

    pub fn from_fn<F>(grid: &ChartGrid, metric: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Sync,
    {
        let n = grid.n();
        let field = TensorField::from_fn(grid, 0, vec![Slot::TangentDown, Slot::TangentDown], |node, out| {
            let m = metric(&grid.coords(node));
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = m[(i, j)];
                }
            }
        });
        Self::new(field)
    }

    pub fn field(&self) -> &TensorField {
        &self.field
    }

    pub fn grid(&self) -> &ChartGrid {
        self.field.grid()
    }

    pub fn at(&self, node: usize) -> DMatrix<f64> {
        let n = self.grid().n();
        self.field.block(node, 0, n, n)
    }

    pub fn inverse_at(&self, node: usize) -> Result<DMatrix<f64>> {
        self.at(node).cholesky().map(|c| c.inverse()).ok_or(Error::Metric { node })
    }
}

/// Rank-`p` Riemannian bundle in an orthonormal gauge.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleData {
    omega: TensorField,
}

impl BundleData {
    pub fn new(omega: TensorField) -> Result<Self> {
        check_slots(&omega, &[Slot::TangentDown, Slot::BundleUp, Slot::BundleDown], "bundle connection")?;
        let p = omega.rank();
        if p == 0 {
            return Err(Error::Parameter("bundle rank must be at least 1".into()));
        }
        let n = omega.grid().n();
        for node in 0..omega.grid().node_count() {
            for mu in 0..n {
                let w = omega.block(node, mu * p * p, p, p);
                let sym = (&w + w.transpose()).amax();
                if sym > SYMMETRY_TOL * w.amax().max(1.0) {
                    return Err(Error::Constraint {
                        what: format!("connection not skew at node {node}, direction {mu}"),
                        defect: sym,
                    });
                }
            }
        }
        Ok(Self { omega })
    }

    pub fn zero(grid: &ChartGrid, p: usize) -> Result<Self> {
        Self::new(TensorField::zeros(grid, p, vec![Slot::TangentDown, Slot::BundleUp, Slot::BundleDown]))
    }

    pub fn rank(&self) -> usize {
        self.omega.rank()
    }

    pub fn field(&self) -> &TensorField {
        &self.omega
    }

    pub fn grid(&self) -> &ChartGrid {
        self.omega.grid()
    }

    /// `ω_μ` at a node, `[a][b]`.
    pub fn omega(&self, node: usize, mu: usize) -> DMatrix<f64> {
        let p = self.rank();
        self.omega.block(node, mu * p * p, p, p)
    }
}

/// `E`-valued symmetric form on the tangent bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondFormField {
    sigma: TensorField,
}

impl SecondFormField {
    pub fn new(sigma: TensorField) -> Result<Self> {
        check_slots(&sigma, &[Slot::TangentDown, Slot::TangentDown, Slot::BundleUp], "second form")?;
        let n = sigma.grid().n();
        let p = sigma.rank();
        for node in 0..sigma.grid().node_count() {
            let d = sigma.node(node);
            for i in 0..n {
                for j in 0..i {
                    for a in 0..p {
                        let x = d[(i * n + j) * p + a];
                        let y = d[(j * n + i) * p + a];
                        let defect = (x - y).abs();
                        if defect > SYMMETRY_TOL * x.abs().max(1.0) {
                            return Err(Error::Constraint { what: format!("second form not symmetric at node {node}"), defect });
                        }
                    }
                }
            }
        }
        Ok(Self { sigma })
    }

    pub fn field(&self) -> &TensorField {
        &self.sigma
    }

    pub fn grid(&self) -> &ChartGrid {
        self.sigma.grid()
    }

    pub fn rank(&self) -> usize {
        self.sigma.rank()
    }

    /// The scalar form `σ^a` at a node as an `n × n` matrix.
    pub fn component(&self, node: usize, a: usize) -> DMatrix<f64> {
        let n = self.grid().n();
        let p = self.rank();
        let d = self.sigma.node(node);
        DMatrix::from_fn(n, n, |i, j| d[(i * n + j) * p + a])
    }
}

/// Levi-Civita connection coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    field: TensorField,
}

impl Christoffel {
    pub fn field(&self) -> &TensorField {
        &self.field
    }

    /// `Γ_μ` at a node: the matrix `[λ][ν] ↦ Γ^λ_{μν}`.
    pub fn matrix(&self, node: usize, mu: usize) -> DMatrix<f64> {
        let n = self.field.grid().n();
        let d = self.field.node(node);
        DMatrix::from_fn(n, n, |l, v| d[(l * n + mu) * n + v])
    }

    pub fn get(&self, node: usize, l: usize, mu: usize, nu: usize) -> f64 {
        let n = self.field.grid().n();
        self.field.node(node)[(l * n + mu) * n + nu]
    }
}

fn partials(field: &TensorField) -> Vec<TensorField> {
    (0..field.grid().n()).map(|a| field.partial(a)).collect()
}

/// Lowered symbols `Γ_{κμν} = ½(∂_μ g_{κν} + ∂_ν g_{κμ} − ∂_κ g_{μν})`.
fn lowered(dg: &[&[f64]], n: usize, k: usize, m: usize, v: usize) -> f64 {
    0.5 * (dg[m][k * n + v] + dg[v][k * n + m] - dg[k][m * n + v])
}

pub fn christoffel(g: &MetricField) -> Result<Christoffel> {
    let grid = g.grid();
    let n = grid.n();
    let dg = partials(g.field());
    let inv: Vec<DMatrix<f64>> = (0..grid.node_count()).map(|i| g.inverse_at(i)).collect::<Result<_>>()?;
    let field = TensorField::from_fn(grid, 0, vec![Slot::TangentUp, Slot::TangentDown, Slot::TangentDown], |node, out| {
        let d: Vec<&[f64]> = dg.iter().map(|f| f.node(node)).collect();
        let gi = &inv[node];
        for l in 0..n {
            for m in 0..n {
                for v in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += gi[(l, k)] * lowered(&d, n, k, m, v);
                    }
                    out[(l * n + m) * n + v] = s;
                }
            }
        }
    });
    Ok(Christoffel { field })
}

/// Derivatives `∂_μ Γ^λ_{νσ}`, one field per axis `μ` with layout `[λ][ν][σ]`.
///
/// Computed from the first and second derivatives of `g` directly rather
/// than by differencing `Γ`, so every node, boundary included, carries a
/// second-order accurate value.
pub fn christoffel_derivatives(g: &MetricField) -> Result<Vec<TensorField>> {
    let grid = g.grid();
    let n = grid.n();
    let dg = partials(g.field());
    let mut hess: Vec<Vec<TensorField>> = Vec::with_capacity(n);
    for a in 0..n {
        hess.push(
            (0..n).map(|b| if b < a { TensorField::zeros(grid, 0, vec![]) } else { g.field().second_partial(a, b) }).collect(),
        );
    }
    let hess_at = |a: usize, b: usize| if a <= b { &hess[a][b] } else { &hess[b][a] };
    let inv: Vec<DMatrix<f64>> = (0..grid.node_count()).map(|i| g.inverse_at(i)).collect::<Result<_>>()?;
    let slots = vec![Slot::TangentUp, Slot::TangentDown, Slot::TangentDown];
    Ok((0..n)
        .map(|mu| {
            TensorField::from_fn(grid, 0, slots.clone(), |node, out| {
                let gi = &inv[node];
                let d: Vec<&[f64]> = dg.iter().map(|f| f.node(node)).collect();
                // ∂_μ Γ^ρ_{νσ} = ∂_μ g^{ρκ} Γ_{κνσ} + g^{ρκ} ∂_μ Γ_{κνσ}
                let dgm = DMatrix::from_fn(n, n, |i, j| d[mu][i * n + j]);
                let dinv = -(gi * dgm * gi);
                for r in 0..n {
                    for v in 0..n {
                        for s in 0..n {
                            let mut acc = 0.0;
                            for k in 0..n {
                                let dlow = 0.5
                                    * (hess_at(mu, v).node(node)[k * n + s] + hess_at(mu, s).node(node)[k * n + v]
                                        - hess_at(mu, k).node(node)[v * n + s]);
                                acc += dinv[(r, k)] * lowered(&d, n, k, v, s) + gi[(r, k)] * dlow;
                            }
                            out[(r * n + v) * n + s] = acc;
                        }
                    }
                }
            })
        })
        .collect())
}

/// Riemann tensor `R^ρ_{σμν} = ∂_μΓ^ρ_{νσ} − ∂_νΓ^ρ_{μσ} + Γ^ρ_{μλ}Γ^λ_{νσ} − Γ^ρ_{νλ}Γ^λ_{μσ}`.
pub fn curvature_tensor(g: &MetricField) -> Result<TensorField> {
    let grid = g.grid();
    let n = grid.n();
    let gamma = christoffel(g)?;
    let dgamma = christoffel_derivatives(g)?;
    let slots = vec![Slot::TangentUp, Slot::TangentDown, Slot::TangentDown, Slot::TangentDown];
    Ok(TensorField::from_fn(grid, 0, slots, |node, out| {
        for r in 0..n {
            for s in 0..n {
                for mu in 0..n {
                    for v in 0..n {
                        let mut val = dgamma[mu].node(node)[(r * n + v) * n + s] - dgamma[v].node(node)[(r * n + mu) * n + s];
                        for l in 0..n {
                            val += gamma.get(node, r, mu, l) * gamma.get(node, l, v, s)
                                - gamma.get(node, r, v, l) * gamma.get(node, l, mu, s);
                        }
                        out[((r * n + s) * n + mu) * n + v] = val;
                    }
                }
            }
        }
    }))
}

/// `F_{μν} = ∂_μω_ν − ∂_νω_μ + [ω_μ, ω_ν]`, layout `[μ][ν][a][b]`.
pub fn bundle_curvature(e: &BundleData) -> TensorField {
    let grid = e.grid();
    let n = grid.n();
    let p = e.rank();
    let dw = partials(e.field());
    let slots = vec![Slot::TangentDown, Slot::TangentDown, Slot::BundleUp, Slot::BundleDown];
    TensorField::from_fn(grid, p, slots, |node, out| {
        for mu in 0..n {
            for nu in 0..n {
                if mu == nu {
                    continue;
                }
                let wm = e.omega(node, mu);
                let wn = e.omega(node, nu);
                let dmn = dw[mu].block(node, nu * p * p, p, p);
                let dnm = dw[nu].block(node, mu * p * p, p, p);
                let f = dmn - dnm + &wm * &wn - &wn * &wm;
                let off = (mu * n + nu) * p * p;
                out[off..off + p * p].copy_from_slice(f.transpose().as_slice());
            }
        }
    })
}

/// Shape operator `A_ξ = g⁻¹ ⟨σ(·,·), ξ⟩` at a node.
pub fn shape_operator(sigma: &SecondFormField, g: &MetricField, node: usize, xi: &[f64]) -> Result<DMatrix<f64>> {
    sigma.field().same_grid(g.field())?;
    let p = sigma.rank();
    if xi.len() != p {
        return Err(Error::Dimension { expected: p, got: xi.len() });
    }
    let n = g.grid().n();
    let mut s = DMatrix::zeros(n, n);
    for (a, &c) in xi.iter().enumerate() {
        s += sigma.component(node, a) * c;
    }
    Ok(g.inverse_at(node)? * s)
}

/// Shape operators of the frame vectors `A_{e_a}` at a node.
pub fn shape_operators(sigma: &SecondFormField, ginv: &DMatrix<f64>, node: usize) -> Vec<DMatrix<f64>> {
    (0..sigma.rank()).map(|a| ginv * sigma.component(node, a)).collect()
}

/// Which bundle an index of a homomorphism field belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fiber {
    Tangent,
    Bundle,
}

fn connection_block(fiber: Fiber, gamma: &Christoffel, e: &BundleData, node: usize, mu: usize) -> DMatrix<f64> {
    match fiber {
        Fiber::Tangent => gamma.matrix(node, mu),
        Fiber::Bundle => e.omega(node, mu),
    }
}

/// Covariant derivative along `∂_μ` of a homomorphism field with rows in
/// `rows` and columns in `cols`: `∂_μT + C_μ T − T C_μ` with `C = Γ` on the
/// tangent bundle and `C = ω` on `E`.
pub fn covariant_derivative_hom(
    field: &TensorField,
    rows: Fiber,
    cols: Fiber,
    gamma: &Christoffel,
    e: &BundleData,
    mu: usize,
) -> Result<TensorField> {
    field.same_grid(gamma.field())?;
    field.same_grid(e.field())?;
    if field.shape().len() != 2 {
        return Err(Error::Schema("homomorphism field needs exactly two slots".into()));
    }
    let (r, c) = (field.shape()[0], field.shape()[1]);
    let dt = field.partial(mu);
    let out = TensorField::from_fn(field.grid(), field.rank(), field.slots().to_vec(), |node, out| {
        let t = field.block(node, 0, r, c);
        let d = dt.block(node, 0, r, c) + connection_block(rows, gamma, e, node, mu) * &t
            - &t * connection_block(cols, gamma, e, node, mu);
        out.copy_from_slice(d.transpose().as_slice());
    });
    Ok(out)
}

/// `(D̃_μσ)^a_{ij} = ∂_μσ^a_{ij} − Γ^k_{μi}σ^a_{kj} − Γ^k_{μj}σ^a_{ik} + ω^a_{μb}σ^b_{ij}`.
pub fn covariant_derivative_second_form(
    sigma: &SecondFormField,
    gamma: &Christoffel,
    e: &BundleData,
    mu: usize,
) -> Result<TensorField> {
    sigma.field().same_grid(gamma.field())?;
    sigma.field().same_grid(e.field())?;
    let n = sigma.grid().n();
    let p = sigma.rank();
    let ds = sigma.field().partial(mu);
    Ok(TensorField::from_fn(sigma.grid(), p, sigma.field().slots().to_vec(), |node, out| {
        let s = sigma.field().node(node);
        let d = ds.node(node);
        let w = e.omega(node, mu);
        for i in 0..n {
            for j in 0..n {
                for a in 0..p {
                    let mut v = d[(i * n + j) * p + a];
                    for k in 0..n {
                        v -= gamma.get(node, k, mu, i) * s[(k * n + j) * p + a]
                            + gamma.get(node, k, mu, j) * s[(i * n + k) * p + a];
                    }
                    for b in 0..p {
                        v += w[(a, b)] * s[(i * n + j) * p + b];
                    }
                    out[(i * n + j) * p + a] = v;
                }
            }
        }
    }))
}

/// Connection matrix of `TM ⊕ E` along `∂_μ` in the basis `(∂_1…∂_n, e_1…e_p)`:
/// `[[Γ_μ, −A_{e_b}∂_μ], [σ_{μ·}, ω_μ]]`.
pub fn sum_bundle_connection(
    gamma: &Christoffel,
    e: &BundleData,
    sigma: &SecondFormField,
    shape: &[DMatrix<f64>],
    node: usize,
    mu: usize,
) -> DMatrix<f64> {
    let n = sigma.grid().n();
    let p = sigma.rank();
    let mut c = DMatrix::zeros(n + p, n + p);
    c.view_mut((0, 0), (n, n)).copy_from(&gamma.matrix(node, mu));
    c.view_mut((n, n), (p, p)).copy_from(&e.omega(node, mu));
    let s = sigma.field().node(node);
    for v in 0..n {
        for a in 0..p {
            c[(n + a, v)] = s[(mu * n + v) * p + a];
        }
    }
    for b in 0..p {
        for l in 0..n {
            c[(l, n + b)] = -shape[b][(l, mu)];
        }
    }
    c
}
