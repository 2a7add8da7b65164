//! The product structure `ψ = [[f, U], [u, λ]]` and the compatibility checker.
//!
//! Block layouts per node (row-major): `f` is `[i][j]` with `f(∂_j) = f^i_j ∂_i`,
//! `u` is `[a][j]`, `U` is `[i][b]`, `λ` is `[a][b]`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    bundle_curvature, christoffel, covariant_derivative_hom, covariant_derivative_second_form, curvature_tensor, shape_operators,
    BundleData, Christoffel, Fiber, MetricField, SecondFormField,
};
use crate::grid::{ChartGrid, Slot, TensorField};

/// Distance from `±(id, 0, 0, id)` below which a node counts as excluded.
pub const EXCLUSION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ProductStructureField {
    f: TensorField,
    u: TensorField,
    big_u: TensorField,
    lambda: TensorField,
}

impl ProductStructureField {
    pub fn new(f: TensorField, u: TensorField, big_u: TensorField, lambda: TensorField) -> Result<Self> {
        for (field, slots, what) in [
            (&f, [Slot::TangentUp, Slot::TangentDown], "f"),
            (&u, [Slot::BundleUp, Slot::TangentDown], "u"),
            (&big_u, [Slot::TangentUp, Slot::BundleDown], "U"),
            (&lambda, [Slot::BundleUp, Slot::BundleDown], "lambda"),
        ] {
            if field.slots() != slots {
                return Err(Error::Schema(format!("block {what} has slots {:?}", field.slots())));
            }
            field.same_grid(&f)?;
        }
        let p = u.rank();
        if big_u.rank() != p || lambda.rank() != p {
            return Err(Error::Dimension { expected: p, got: lambda.rank() });
        }
        Ok(Self { f, u, big_u, lambda })
    }

    /// Builds the blocks from a function returning the full `(n+p)×(n+p)` matrix.
    pub fn from_fn<F>(grid: &ChartGrid, p: usize, psi: F) -> Result<Self>
    where
        F: Fn(usize) -> DMatrix<f64> + Sync,
    {
        let n = grid.n();
        let block = |slots: Vec<Slot>, r0: usize, c0: usize| {
            TensorField::from_fn(grid, p, slots, |node, out| {
                let m = psi(node);
                let cols = out.len() / if r0 == 0 { n } else { p }.max(1);
                for (idx, o) in out.iter_mut().enumerate() {
                    *o = m[(r0 + idx / cols, c0 + idx % cols)];
                }
            })
        };
        Self::new(
            block(vec![Slot::TangentUp, Slot::TangentDown], 0, 0),
            block(vec![Slot::BundleUp, Slot::TangentDown], n, 0),
            block(vec![Slot::TangentUp, Slot::BundleDown], 0, n),
            block(vec![Slot::BundleUp, Slot::BundleDown], n, n),
        )
    }

    pub fn grid(&self) -> &ChartGrid {
        self.f.grid()
    }

    pub fn rank(&self) -> usize {
        self.u.rank()
    }

    pub fn f(&self) -> &TensorField {
        &self.f
    }

    pub fn u(&self) -> &TensorField {
        &self.u
    }

    pub fn big_u(&self) -> &TensorField {
        &self.big_u
    }

    pub fn lambda(&self) -> &TensorField {
        &self.lambda
    }

    pub fn f_at(&self, node: usize) -> DMatrix<f64> {
        self.f.matrix_at(node)
    }

    pub fn u_at(&self, node: usize) -> DMatrix<f64> {
        self.u.matrix_at(node)
    }

    pub fn big_u_at(&self, node: usize) -> DMatrix<f64> {
        self.big_u.matrix_at(node)
    }

    pub fn lambda_at(&self, node: usize) -> DMatrix<f64> {
        self.lambda.matrix_at(node)
    }

    /// Full block matrix `ψ` at a node.
    pub fn psi_at(&self, node: usize) -> DMatrix<f64> {
        let n = self.grid().n();
        let p = self.rank();
        let mut m = DMatrix::zeros(n + p, n + p);
        m.view_mut((0, 0), (n, n)).copy_from(&self.f_at(node));
        m.view_mut((0, n), (n, p)).copy_from(&self.big_u_at(node));
        m.view_mut((n, 0), (p, n)).copy_from(&self.u_at(node));
        m.view_mut((n, n), (p, p)).copy_from(&self.lambda_at(node));
        m
    }

    /// Sign `±1` if `ψ` is within [`EXCLUSION_TOL`] of `±id` at `node`.
    pub fn identity_sign(&self, node: usize) -> Option<f64> {
        let psi = self.psi_at(node);
        let id = DMatrix::<f64>::identity(psi.nrows(), psi.ncols());
        [1.0, -1.0].into_iter().find(|&s| (&psi - &id * s).amax() <= EXCLUSION_TOL)
    }
}

/// One checked identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub name: String,
    pub max: f64,
    pub mean: f64,
    pub argmax: usize,
    pub threshold: f64,
    pub pass: bool,
}

impl Residual {
    /// Ordered reduction over per-node values: first maximum wins, mean summed
    /// in node order.
    pub fn from_nodes(name: &str, values: &[f64], threshold: f64) -> Self {
        let mut max = 0.0;
        let mut argmax = 0;
        let mut sum = 0.0;
        for (i, &v) in values.iter().enumerate() {
            if v > max || v.is_nan() {
                max = v;
                argmax = i;
            }
            sum += v;
        }
        let mean = if values.is_empty() { 0.0 } else { sum / values.len() as f64 };
        Self { name: name.to_string(), max, mean, argmax, threshold, pass: max <= threshold }
    }

    pub fn scalar(name: &str, value: f64, threshold: f64) -> Self {
        Self::from_nodes(name, &[value], threshold)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub residuals: Vec<Residual>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ResidualReport {
    pub fn passed(&self) -> bool {
        self.residuals.iter().all(|r| r.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Residual> {
        self.residuals.iter().find(|r| r.name == name)
    }

    pub fn max(&self, name: &str) -> f64 {
        self.get(name).map(|r| r.max).unwrap_or(f64::NAN)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.residuals.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect()
    }

    pub fn push(&mut self, r: Residual) {
        self.residuals.push(r);
    }

    pub fn extend(&mut self, other: ResidualReport) {
        self.residuals.extend(other.residuals);
        self.warnings.extend(other.warnings);
    }
}

/// Pass thresholds. Algebraic identities use a fixed tolerance; identities
/// involving differencing use `max(factor·h², floor)` with `h` the largest
/// grid spacing. Per-check overrides take precedence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub algebraic: f64,
    pub differential_factor: f64,
    pub floor: f64,
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { algebraic: 1e-10, differential_factor: 10.0, floor: 1e-8, overrides: BTreeMap::new() }
    }
}

impl Tolerances {
    pub fn algebraic(&self, name: &str) -> f64 {
        self.overrides.get(name).copied().unwrap_or(self.algebraic)
    }

    pub fn differential(&self, name: &str, h: f64) -> f64 {
        self.overrides.get(name).copied().unwrap_or((self.differential_factor * h * h).max(self.floor))
    }

    pub fn with_override(mut self, name: &str, value: f64) -> Self {
        self.overrides.insert(name.to_string(), value);
        self
    }
}

fn per_node<F>(grid: &ChartGrid, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    use rayon::prelude::*;
    (0..grid.node_count()).into_par_iter().map(f).collect()
}

fn same_grids(fields: &[&TensorField]) -> Result<()> {
    for w in fields.windows(2) {
        w[0].same_grid(w[1])?;
    }
    Ok(())
}

/// Symmetry, adjointness and involution identities of `ψ`, plus the
/// `ψ ≠ ±id` diagnostic.
pub fn check_psi_algebra(psi: &ProductStructureField, g: &MetricField, tol: &Tolerances) -> Result<ResidualReport> {
    same_grids(&[psi.f(), g.field()])?;
    let grid = psi.grid();
    let n = grid.n();
    let p = psi.rank();
    let id_n = DMatrix::<f64>::identity(n, n);
    let id_p = DMatrix::<f64>::identity(p, p);

    let nodes: Vec<[f64; 5]> = {
        use rayon::prelude::*;
        (0..grid.node_count())
            .into_par_iter()
            .map(|node| {
                let gm = g.at(node);
                let (f, u, bu, l) = (psi.f_at(node), psi.u_at(node), psi.big_u_at(node), psi.lambda_at(node));
                let gf = &gm * &f;
                [
                    (&gf - gf.transpose()).amax(),
                    (&l - l.transpose()).amax(),
                    (&u - bu.transpose() * &gm).amax(),
                    (&f * &f + &bu * &u - &id_n).amax().max((&f * &bu + &bu * &l).amax()),
                    (&u * &f + &l * &u).amax().max((&u * &bu + &l * &l - &id_p).amax()),
                ]
            })
            .collect()
    };
    let names = ["psi_f_symmetric", "psi_lambda_symmetric", "psi_adjoint", "psi_involution_tangent", "psi_involution_bundle"];
    let mut report = ResidualReport::default();
    for (c, name) in names.iter().enumerate() {
        let vals: Vec<f64> = nodes.iter().map(|v| v[c]).collect();
        report.push(Residual::from_nodes(name, &vals, tol.algebraic(name)));
    }

    let excluded: Vec<(usize, f64)> =
        (0..grid.node_count()).filter_map(|node| psi.identity_sign(node).map(|s| (node, s))).collect();
    if excluded.len() == grid.node_count() {
        let sign = if excluded[0].1 > 0.0 { '+' } else { '-' };
        report.warnings.push(format!("psi is {sign}identity on the whole chart"));
        report.push(Residual { name: "psi_not_identity".into(), max: 1.0, mean: 1.0, argmax: 0, threshold: 0.0, pass: false });
    } else if let Some(&(node, _)) = excluded.first() {
        report.warnings.push(format!("psi is ±identity at {} node(s), first at node {node}", excluded.len()));
    }
    Ok(report)
}

/// Per-node geometric quantities shared by the differential checks.
pub(crate) struct Geometry {
    pub gamma: Christoffel,
    /// `A_{e_a}` per node.
    pub shape: Vec<Vec<DMatrix<f64>>>,
}

impl Geometry {
    pub fn new(g: &MetricField, sigma: &SecondFormField) -> Result<Self> {
        sigma.field().same_grid(g.field())?;
        let gamma = christoffel(g)?;
        let ginv: Vec<DMatrix<f64>> = (0..g.grid().node_count()).map(|i| g.inverse_at(i)).collect::<Result<_>>()?;
        let shape = ginv.iter().enumerate().map(|(node, gi)| shape_operators(sigma, gi, node)).collect();
        Ok(Self { gamma, shape })
    }
}

/// The four covariant-derivative identities for `f`, `u`, `U`, `λ`.
pub fn check_psi_parallel(
    psi: &ProductStructureField,
    g: &MetricField,
    e: &BundleData,
    sigma: &SecondFormField,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    same_grids(&[psi.f(), g.field(), e.field(), sigma.field()])?;
    let geo = Geometry::new(g, sigma)?;
    check_psi_parallel_with(psi, e, sigma, &geo, tol)
}

pub(crate) fn check_psi_parallel_with(
    psi: &ProductStructureField,
    e: &BundleData,
    sigma: &SecondFormField,
    geo: &Geometry,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    let grid = psi.grid();
    let n = grid.n();
    let p = psi.rank();
    let h = grid.max_spacing();
    let mut residuals = vec![vec![0.0f64; grid.node_count()]; 4];
    for mu in 0..n {
        let df = covariant_derivative_hom(psi.f(), Fiber::Tangent, Fiber::Tangent, &geo.gamma, e, mu)?;
        let du = covariant_derivative_hom(psi.u(), Fiber::Bundle, Fiber::Tangent, &geo.gamma, e, mu)?;
        let dbu = covariant_derivative_hom(psi.big_u(), Fiber::Tangent, Fiber::Bundle, &geo.gamma, e, mu)?;
        let dl = covariant_derivative_hom(psi.lambda(), Fiber::Bundle, Fiber::Bundle, &geo.gamma, e, mu)?;
        let per: Vec<[f64; 4]> = {
            use rayon::prelude::*;
            (0..grid.node_count())
                .into_par_iter()
                .map(|node| {
                    let a = &geo.shape[node];
                    let (f, u, bu, l) = (psi.f_at(node), psi.u_at(node), psi.big_u_at(node), psi.lambda_at(node));
                    // σ_μ as a p×n matrix: (σ_μ)^a_ν = σ^a_{μν}
                    let s = sigma.field().node(node);
                    let sm = DMatrix::from_fn(p, n, |aa, v| s[(mu * n + v) * p + aa]);
                    // Aμ as an n×p matrix: column b is A_{e_b} ∂_μ
                    let am = DMatrix::from_fn(n, p, |r, b| a[b][(r, mu)]);
                    let rf = &am * &u + &bu * &sm;
                    let ru = &l * &sm - &sm * &f;
                    let rbu = &am * &l - &f * &am;
                    let rl = -(&sm * &bu) - &u * &am;
                    [
                        (df.matrix_at(node) - rf).amax(),
                        (du.matrix_at(node) - ru).amax(),
                        (dbu.matrix_at(node) - rbu).amax(),
                        (dl.matrix_at(node) - rl).amax(),
                    ]
                })
                .collect()
        };
        for (node, v) in per.iter().enumerate() {
            for c in 0..4 {
                residuals[c][node] = residuals[c][node].max(v[c]);
            }
        }
    }
    let mut report = ResidualReport::default();
    for (c, name) in ["psi_parallel_f", "psi_parallel_u", "psi_parallel_U", "psi_parallel_lambda"].iter().enumerate() {
        report.push(Residual::from_nodes(name, &residuals[c], tol.differential(name, h)));
    }
    Ok(report)
}

/// Gauss equation with the product-structure terms, all index combinations.
pub fn check_gauss(
    g: &MetricField,
    sigma: &SecondFormField,
    psi: &ProductStructureField,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    same_grids(&[g.field(), sigma.field(), psi.f()])?;
    let geo = Geometry::new(g, sigma)?;
    check_gauss_with(g, sigma, psi, &geo, tol)
}

/// Right side of the Gauss equation, layout `[ρ][σ][μ][ν]`.
pub fn gauss_rhs(gm: &DMatrix<f64>, f: &DMatrix<f64>, sig: &[f64], shape: &[DMatrix<f64>], n: usize, p: usize) -> Vec<f64> {
    let gf = f.transpose() * gm; // (gf)_{σν} = g_{κσ} f^κ_ν
    let mut out = vec![0.0; n * n * n * n];
    for r in 0..n {
        for s in 0..n {
            for m in 0..n {
                for v in 0..n {
                    let mut val = 0.0;
                    for a in 0..p {
                        val += shape[a][(r, m)] * sig[(v * n + s) * p + a] - shape[a][(r, v)] * sig[(m * n + s) * p + a];
                    }
                    let dm = if r == m { 1.0 } else { 0.0 };
                    let dv = if r == v { 1.0 } else { 0.0 };
                    val += 0.5 * (gm[(v, s)] * f[(r, m)] - gm[(m, s)] * f[(r, v)] + gf[(s, v)] * dm - gf[(s, m)] * dv);
                    out[((r * n + s) * n + m) * n + v] = val;
                }
            }
        }
    }
    out
}

pub(crate) fn check_gauss_with(
    g: &MetricField,
    sigma: &SecondFormField,
    psi: &ProductStructureField,
    geo: &Geometry,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    let grid = g.grid();
    let n = grid.n();
    let p = sigma.rank();
    let r = curvature_tensor(g)?;
    let vals = per_node(grid, |node| {
        let rhs = gauss_rhs(&g.at(node), &psi.f_at(node), sigma.field().node(node), &geo.shape[node], n, p);
        r.node(node).iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    });
    let mut report = ResidualReport::default();
    report.push(Residual::from_nodes("gauss", &vals, tol.differential("gauss", grid.max_spacing())));
    Ok(report)
}

/// Codazzi equation `2(D̃_μσ)_{νκ} − 2(D̃_νσ)_{μκ} = g_{νκ}u_μ − g_{μκ}u_ν`.
pub fn check_codazzi(
    g: &MetricField,
    e: &BundleData,
    sigma: &SecondFormField,
    psi: &ProductStructureField,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    same_grids(&[g.field(), e.field(), sigma.field(), psi.f()])?;
    let geo = Geometry::new(g, sigma)?;
    check_codazzi_with(g, e, sigma, psi, &geo, tol)
}

pub(crate) fn check_codazzi_with(
    g: &MetricField,
    e: &BundleData,
    sigma: &SecondFormField,
    psi: &ProductStructureField,
    geo: &Geometry,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    let grid = g.grid();
    let n = grid.n();
    let p = sigma.rank();
    let ds: Vec<TensorField> =
        (0..n).map(|mu| covariant_derivative_second_form(sigma, &geo.gamma, e, mu)).collect::<Result<_>>()?;
    let vals = per_node(grid, |node| {
        let gm = g.at(node);
        let u = psi.u_at(node);
        let mut worst = 0.0f64;
        for m in 0..n {
            for v in 0..n {
                for k in 0..n {
                    for a in 0..p {
                        let lhs = 2.0 * ds[m].node(node)[(v * n + k) * p + a] - 2.0 * ds[v].node(node)[(m * n + k) * p + a];
                        let rhs = gm[(v, k)] * u[(a, m)] - gm[(m, k)] * u[(a, v)];
                        worst = worst.max((lhs - rhs).abs());
                    }
                }
            }
        }
        worst
    });
    let mut report = ResidualReport::default();
    report.push(Residual::from_nodes("codazzi", &vals, tol.differential("codazzi", grid.max_spacing())));
    Ok(report)
}

/// Ricci equation `F_{μν} e_b = σ(A_b ∂_ν, ∂_μ) − σ(A_b ∂_μ, ∂_ν)`.
pub fn check_ricci(g: &MetricField, e: &BundleData, sigma: &SecondFormField, tol: &Tolerances) -> Result<ResidualReport> {
    same_grids(&[g.field(), e.field(), sigma.field()])?;
    let geo = Geometry::new(g, sigma)?;
    check_ricci_with(e, sigma, &geo, tol)
}

pub(crate) fn check_ricci_with(
    e: &BundleData,
    sigma: &SecondFormField,
    geo: &Geometry,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    let grid = e.grid();
    let n = grid.n();
    let p = e.rank();
    let curv = bundle_curvature(e);
    let vals = per_node(grid, |node| {
        let s = sigma.field().node(node);
        let a = &geo.shape[node];
        let f = curv.node(node);
        let mut worst = 0.0f64;
        for m in 0..n {
            for v in 0..n {
                for aa in 0..p {
                    for b in 0..p {
                        let mut rhs = 0.0;
                        for k in 0..n {
                            rhs += a[b][(k, v)] * s[(k * n + m) * p + aa] - a[b][(k, m)] * s[(k * n + v) * p + aa];
                        }
                        worst = worst.max((f[((m * n + v) * p + aa) * p + b] - rhs).abs());
                    }
                }
            }
        }
        worst
    });
    let mut report = ResidualReport::default();
    report.push(Residual::from_nodes("ricci", &vals, tol.differential("ricci", grid.max_spacing())));
    Ok(report)
}

/// The full hypothesis data: metric, normal bundle, second form and `ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityData {
    pub metric: MetricField,
    pub bundle: BundleData,
    pub sigma: SecondFormField,
    pub psi: ProductStructureField,
}

impl CompatibilityData {
    pub fn new(metric: MetricField, bundle: BundleData, sigma: SecondFormField, psi: ProductStructureField) -> Result<Self> {
        same_grids(&[metric.field(), bundle.field(), sigma.field(), psi.f()])?;
        let p = bundle.rank();
        if sigma.rank() != p || psi.rank() != p {
            return Err(Error::Dimension { expected: p, got: sigma.rank() });
        }
        Ok(Self { metric, bundle, sigma, psi })
    }

    pub fn grid(&self) -> &ChartGrid {
        self.metric.grid()
    }

    pub fn n(&self) -> usize {
        self.grid().n()
    }

    pub fn p(&self) -> usize {
        self.bundle.rank()
    }

    /// Re-expresses the data in the rotated frame `e'_a = e_b Q^b_a` for a
    /// constant orthogonal `Q`.
    pub fn regauge(&self, q: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = (self.n(), self.p());
        if q.nrows() != p || q.ncols() != p {
            return Err(Error::Dimension { expected: p, got: q.nrows() });
        }
        let qt = q.transpose();
        let grid = self.grid();
        let map = |field: &TensorField, f: &(dyn Fn(usize) -> DMatrix<f64> + Sync)| {
            TensorField::from_fn(grid, p, field.slots().to_vec(), |node, out| out.copy_from_slice(f(node).transpose().as_slice()))
        };
        let omega = TensorField::from_fn(grid, p, self.bundle.field().slots().to_vec(), |node, out| {
            for mu in 0..n {
                let w = &qt * self.bundle.omega(node, mu) * q;
                out[mu * p * p..(mu + 1) * p * p].copy_from_slice(w.transpose().as_slice());
            }
        });
        let sigma = TensorField::from_fn(grid, p, self.sigma.field().slots().to_vec(), |node, out| {
            let s = self.sigma.field().node(node);
            for ij in 0..n * n {
                for a in 0..p {
                    out[ij * p + a] = (0..p).map(|b| qt[(a, b)] * s[ij * p + b]).sum();
                }
            }
        });
        let psi = ProductStructureField::new(
            self.psi.f().clone(),
            map(self.psi.u(), &|node| &qt * self.psi.u_at(node)),
            map(self.psi.big_u(), &|node| self.psi.big_u_at(node) * q),
            map(self.psi.lambda(), &|node| &qt * self.psi.lambda_at(node) * q),
        )?;
        Self::new(self.metric.clone(), BundleData::new(omega)?, SecondFormField::new(sigma)?, psi)
    }
}

/// Runs every structure check: `ψ` algebra and parallelism, Gauss, Codazzi, Ricci.
pub fn check_compatibility(data: &CompatibilityData, tol: &Tolerances) -> Result<ResidualReport> {
    let geo = Geometry::new(&data.metric, &data.sigma)?;
    let mut report = check_psi_algebra(&data.psi, &data.metric, tol)?;
    report.extend(check_psi_parallel_with(&data.psi, &data.bundle, &data.sigma, &geo, tol)?);
    report.extend(check_gauss_with(&data.metric, &data.sigma, &data.psi, &geo, tol)?);
    report.extend(check_codazzi_with(&data.metric, &data.bundle, &data.sigma, &data.psi, &geo, tol)?);
    report.extend(check_ricci_with(&data.bundle, &data.sigma, &geo, tol)?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_data(n: usize, p: usize, psi: DMatrix<f64>) -> CompatibilityData {
        let grid = ChartGrid::cube(n, 6, 0.0, 1.0).unwrap();
        let g = MetricField::from_fn(&grid, |_| DMatrix::identity(n, n)).unwrap();
        let e = BundleData::zero(&grid, p).unwrap();
        let sigma =
            SecondFormField::new(TensorField::zeros(&grid, p, vec![Slot::TangentDown, Slot::TangentDown, Slot::BundleUp]))
                .unwrap();
        let psi = ProductStructureField::from_fn(&grid, p, |_| psi.clone()).unwrap();
        CompatibilityData::new(g, e, sigma, psi).unwrap()
    }

    #[test]
    fn identity_structure_is_excluded() {
        let d = constant_data(2, 1, DMatrix::identity(3, 3));
        let r = check_psi_algebra(&d.psi, &d.metric, &Tolerances::default()).unwrap();
        assert_eq!(r.max("psi_involution_tangent"), 0.0);
        assert_eq!(r.failures(), vec!["psi_not_identity"]);
    }

    #[test]
    fn constant_reflection_on_flat_data_passes_everything() {
        let d = constant_data(2, 1, DMatrix::from_diagonal(&nalgebra::dvector![1.0, -1.0, 1.0]));
        let r = check_compatibility(&d, &Tolerances::default()).unwrap();
        assert!(r.passed(), "{:?}", r.failures());
        assert!(r.residuals.iter().all(|x| x.max == 0.0));
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn broken_involution_is_flagged() {
        let d = constant_data(1, 1, DMatrix::from_diagonal(&nalgebra::dvector![1.01, -1.0]));
        let r = check_psi_algebra(&d.psi, &d.metric, &Tolerances::default()).unwrap();
        assert!((r.max("psi_involution_tangent") - 0.0201).abs() < 1e-12);
        assert!(!r.passed());
    }

    #[test]
    fn residual_reduction_is_ordered() {
        let r = Residual::from_nodes("x", &[0.1, 0.3, 0.3, 0.2], 0.25);
        assert_eq!(r.argmax, 1);
        assert!((r.mean - 0.225).abs() < 1e-15);
        assert!(!r.pass);
    }

    #[test]
    fn tolerance_model() {
        let t = Tolerances::default().with_override("gauss", 0.5);
        assert_eq!(t.differential("gauss", 0.1), 0.5);
        assert!((t.differential("codazzi", 0.1) - 0.1).abs() < 1e-15);
        assert_eq!(t.differential("codazzi", 1e-6), 1e-8);
    }
}
