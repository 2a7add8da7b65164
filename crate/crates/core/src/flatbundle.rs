//! The Lorentzian bundle `B = TM ⊕ E ⊕ N` with its flat metric connection.
//!
//! Gauge basis: `∂_1…∂_n, e_1…e_p, ξ̃₁, ξ̃₂`; Gram matrix `G = g ⊕ id_p ⊕
//! diag(1, −1)`. The connection acts on gauge components as
//! `D_{∂μ} v = ∂_μ v + Ω_μ v`, its curvature is
//! `F_{μν} = ∂_μΩ_ν − ∂_νΩ_μ + [Ω_μ, Ω_ν]`, and `Ω` is stored with slots
//! `(direction, B↑, B↓)`, layout `[μ][C][A]`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::fields::{christoffel, christoffel_derivatives, shape_operators, BundleData, MetricField, SecondFormField};
use crate::grid::{ChartGrid, Slot, TensorField};
use crate::structure::{CompatibilityData, ProductStructureField, Residual, ResidualReport, Tolerances};

/// Eigenvalues farther than this from `±1` abort the split.
pub const EIGEN_SNAP: f64 = 0.1;

/// Minimum remaining norm for a projected basis vector to enter the seed frame.
const SEED_ACCEPT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FlatBundleGauge {
    metric: MetricField,
    p: usize,
}

impl FlatBundleGauge {
    pub fn new(metric: &MetricField, p: usize) -> Self {
        Self { metric: metric.clone(), p }
    }

    pub fn n(&self) -> usize {
        self.metric.grid().n()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Rank `n + p + 2`.
    pub fn rank(&self) -> usize {
        self.n() + self.p + 2
    }

    pub fn grid(&self) -> &ChartGrid {
        self.metric.grid()
    }

    /// Index of `ξ̃₁` in the gauge basis; `ξ̃₂` follows it.
    pub fn xi1(&self) -> usize {
        self.n() + self.p
    }

    pub fn labels(&self) -> Vec<String> {
        let mut l: Vec<String> = (1..=self.n()).map(|i| format!("d{i}")).collect();
        l.extend((1..=self.p).map(|a| format!("e{a}")));
        l.push("xi1".into());
        l.push("xi2".into());
        l
    }

    pub fn gram_at(&self, node: usize) -> DMatrix<f64> {
        let (n, d) = (self.n(), self.rank());
        let mut m = DMatrix::identity(d, d);
        m.view_mut((0, 0), (n, n)).copy_from(&self.metric.at(node));
        m[(d - 1, d - 1)] = -1.0;
        m
    }

    /// `∂_μ G` at a node.
    fn gram_derivative(&self, dg: &TensorField, node: usize) -> DMatrix<f64> {
        let (n, d) = (self.n(), self.rank());
        let mut m = DMatrix::zeros(d, d);
        m.view_mut((0, 0), (n, n)).copy_from(&dg.block(node, 0, n, n));
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatBundleConnection {
    omega: TensorField,
    d_omega: Vec<TensorField>,
}

impl FlatBundleConnection {
    /// Wraps arbitrary connection matrices; derivatives by plain differencing.
    pub fn from_omega(omega: TensorField) -> Result<Self> {
        if omega.slots() != [Slot::TangentDown, Slot::FiberUp, Slot::FiberDown] {
            return Err(Error::Schema(format!("connection has slots {:?}", omega.slots())));
        }
        let d_omega = (0..omega.grid().n()).map(|a| omega.partial(a)).collect();
        Ok(Self { omega, d_omega })
    }

    pub fn field(&self) -> &TensorField {
        &self.omega
    }

    pub fn grid(&self) -> &ChartGrid {
        self.omega.grid()
    }

    pub fn rank(&self) -> usize {
        self.omega.shape()[1]
    }

    /// `Ω_μ` at a node.
    pub fn at(&self, node: usize, mu: usize) -> DMatrix<f64> {
        let d = self.rank();
        self.omega.block(node, mu * d * d, d, d)
    }

    /// `∂_a Ω_μ` at a node.
    pub fn derivative_at(&self, a: usize, node: usize, mu: usize) -> DMatrix<f64> {
        let d = self.rank();
        self.d_omega[a].block(node, mu * d * d, d, d)
    }
}

fn write_matrix(out: &mut [f64], m: &DMatrix<f64>) {
    out.copy_from_slice(m.transpose().as_slice());
}

/// Assembles `Ω` from `Γ`, `σ`, the shape operators, `ω`, `f` and `u`.
pub fn build_connection(
    g: &MetricField,
    e: &BundleData,
    sigma: &SecondFormField,
    psi: &ProductStructureField,
) -> Result<FlatBundleConnection> {
    g.field().same_grid(e.field())?;
    g.field().same_grid(sigma.field())?;
    g.field().same_grid(psi.f())?;
    let grid = g.grid();
    let (n, p) = (grid.n(), e.rank());
    let d = n + p + 2;
    let (x1, x2) = (n + p, n + p + 1);
    let gamma = christoffel(g)?;
    let dgamma = christoffel_derivatives(g)?;
    let ginv: Vec<DMatrix<f64>> = (0..grid.node_count()).map(|i| g.inverse_at(i)).collect::<Result<_>>()?;
    let slots = vec![Slot::TangentDown, Slot::FiberUp, Slot::FiberDown];

    // Everything except the Levi-Civita block, which is differentiated
    // through the metric instead.
    let rest = TensorField::from_fn(grid, p, slots.clone(), |node, out| {
        let gm = g.at(node);
        let f = psi.f_at(node);
        let u = psi.u_at(node);
        let a = shape_operators(sigma, &ginv[node], node);
        let gf = f.transpose() * &gm; // (gf)_{νμ} = g_{κν} f^κ_μ
        let s = sigma.field().node(node);
        for mu in 0..n {
            let mut m = DMatrix::zeros(d, d);
            for v in 0..n {
                for aa in 0..p {
                    m[(n + aa, v)] = s[(mu * n + v) * p + aa];
                }
                m[(x1, v)] = -0.5 * (gm[(mu, v)] + gf[(v, mu)]);
                m[(x2, v)] = 0.5 * (gm[(mu, v)] - gf[(v, mu)]);
            }
            m.view_mut((n, n), (p, p)).copy_from(&e.omega(node, mu));
            for b in 0..p {
                for l in 0..n {
                    m[(l, n + b)] = -a[b][(l, mu)];
                }
                m[(x1, n + b)] = -0.5 * u[(b, mu)];
                m[(x2, n + b)] = -0.5 * u[(b, mu)];
            }
            for l in 0..n {
                let delta = if l == mu { 1.0 } else { 0.0 };
                m[(l, x1)] = 0.5 * (delta + f[(l, mu)]);
                m[(l, x2)] = 0.5 * (delta - f[(l, mu)]);
            }
            for aa in 0..p {
                m[(n + aa, x1)] = 0.5 * u[(aa, mu)];
                m[(n + aa, x2)] = -0.5 * u[(aa, mu)];
            }
            write_matrix(&mut out[mu * d * d..(mu + 1) * d * d], &m);
        }
    });

    let add_levi_civita = |field: &TensorField, source: &dyn Fn(usize, usize, usize, usize) -> f64| {
        let mut out = field.clone();
        for node in 0..grid.node_count() {
            let o = out.node_mut(node);
            for mu in 0..n {
                for l in 0..n {
                    for v in 0..n {
                        o[mu * d * d + l * d + v] += source(node, l, mu, v);
                    }
                }
            }
        }
        out
    };
    let omega = add_levi_civita(&rest, &|node, l, mu, v| gamma.get(node, l, mu, v));
    let d_omega = (0..n)
        .map(|a| {
            let dr = rest.partial(a);
            add_levi_civita(&dr, &|node, l, mu, v| dgamma[a].node(node)[(l * n + mu) * n + v])
        })
        .collect();
    Ok(FlatBundleConnection { omega, d_omega })
}

fn per_node<F>(grid: &ChartGrid, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    use rayon::prelude::*;
    (0..grid.node_count()).into_par_iter().map(f).collect()
}

/// `max_μ ‖∂_μG − Ω_μᵀG − GΩ_μ‖` per node.
pub fn metric_compatibility_residual(
    omega: &FlatBundleConnection,
    gauge: &FlatBundleGauge,
    tol: &Tolerances,
) -> Result<Residual> {
    omega.field().same_grid(gauge.metric.field())?;
    let grid = gauge.grid();
    let dg: Vec<TensorField> = (0..grid.n()).map(|a| gauge.metric.field().partial(a)).collect();
    let vals = per_node(grid, |node| {
        let gm = gauge.gram_at(node);
        (0..grid.n())
            .map(|mu| {
                let w = omega.at(node, mu);
                (gauge.gram_derivative(&dg[mu], node) - w.transpose() * &gm - &gm * &w).amax()
            })
            .fold(0.0, f64::max)
    });
    let name = "metric_compatibility";
    Ok(Residual::from_nodes(name, &vals, tol.differential(name, grid.max_spacing())))
}

/// Curvature `F_{μν}` of the connection at a node.
pub fn curvature_at(omega: &FlatBundleConnection, node: usize, mu: usize, nu: usize) -> DMatrix<f64> {
    let (wm, wn) = (omega.at(node, mu), omega.at(node, nu));
    omega.derivative_at(mu, node, nu) - omega.derivative_at(nu, node, mu) + &wm * &wn - &wn * &wm
}

/// `max_{μ<ν} ‖F_{μν}‖` per node; vacuous for one-dimensional charts.
pub fn flatness_residual(omega: &FlatBundleConnection, tol: &Tolerances) -> Residual {
    let grid = omega.grid();
    let n = grid.n();
    let vals = per_node(grid, |node| {
        let mut worst = 0.0f64;
        for mu in 0..n {
            for nu in mu + 1..n {
                worst = worst.max(curvature_at(omega, node, mu, nu).amax());
            }
        }
        worst
    });
    let name = "flatness";
    Residual::from_nodes(name, &vals, tol.differential(name, grid.max_spacing()))
}

/// `ψ̃ = ψ ⊕ diag(1, −1)` in gauge components.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiTildeField {
    field: TensorField,
}

impl PsiTildeField {
    pub fn field(&self) -> &TensorField {
        &self.field
    }

    pub fn rank(&self) -> usize {
        self.field.shape()[0]
    }

    pub fn at(&self, node: usize) -> DMatrix<f64> {
        self.field.matrix_at(node)
    }
}

pub fn build_psi_tilde(psi: &ProductStructureField) -> PsiTildeField {
    let grid = psi.grid();
    let (n, p) = (grid.n(), psi.rank());
    let d = n + p + 2;
    let field = TensorField::from_fn(grid, p, vec![Slot::FiberUp, Slot::FiberDown], |node, out| {
        let mut m = DMatrix::zeros(d, d);
        m.view_mut((0, 0), (n + p, n + p)).copy_from(&psi.psi_at(node));
        m[(n + p, n + p)] = 1.0;
        m[(d - 1, d - 1)] = -1.0;
        write_matrix(out, &m);
    });
    PsiTildeField { field }
}

/// Involution and `G`-symmetry of `ψ̃`.
pub fn check_psi_tilde_algebra(psi: &PsiTildeField, gauge: &FlatBundleGauge, tol: &Tolerances) -> Result<ResidualReport> {
    psi.field().same_grid(gauge.metric.field())?;
    let grid = gauge.grid();
    let id = DMatrix::<f64>::identity(gauge.rank(), gauge.rank());
    let inv = per_node(grid, |node| {
        let m = psi.at(node);
        (&m * &m - &id).amax()
    });
    let sym = per_node(grid, |node| {
        let gm = gauge.gram_at(node) * psi.at(node);
        (&gm - gm.transpose()).amax()
    });
    let mut r = ResidualReport::default();
    r.push(Residual::from_nodes("psi_tilde_involution", &inv, tol.algebraic("psi_tilde_involution")));
    r.push(Residual::from_nodes("psi_tilde_symmetric", &sym, tol.algebraic("psi_tilde_symmetric")));
    Ok(r)
}

/// `max_μ ‖∂_μψ̃ + [Ω_μ, ψ̃]‖` per node.
pub fn psi_tilde_parallel_residual(omega: &FlatBundleConnection, psi: &PsiTildeField, tol: &Tolerances) -> Result<Residual> {
    omega.field().same_grid(psi.field())?;
    let grid = omega.grid();
    let dpsi: Vec<TensorField> = (0..grid.n()).map(|a| psi.field().partial(a)).collect();
    let vals = per_node(grid, |node| {
        let m = psi.at(node);
        (0..grid.n())
            .map(|mu| {
                let w = omega.at(node, mu);
                (dpsi[mu].matrix_at(node) + &w * &m - &m * &w).amax()
            })
            .fold(0.0, f64::max)
    });
    let name = "psi_tilde_parallel";
    Ok(Residual::from_nodes(name, &vals, tol.differential(name, grid.max_spacing())))
}

/// Eigenspace decomposition of `ψ̃` at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSplit {
    /// Dimension of the sphere factor: `rank B₁ = k + 1`.
    pub k: usize,
    pub node: usize,
    /// Spectrum of `ψ` on `TM ⊕ E`, ascending, before snapping.
    pub eigenvalues: Vec<f64>,
    /// Largest distance of an eigenvalue from `±1`.
    pub snap_defect: f64,
    /// `G`-orthonormal basis of `B₁` as columns, `ξ̃₁` last.
    pub b1: DMatrix<f64>,
    /// `G`-orthonormal basis of `B₂` as columns, `ξ̃₂` (timelike) last.
    pub b2: DMatrix<f64>,
}

impl EigenSplit {
    /// Seed frame `[B₁ | B₂]`, satisfying `SᵀGS = η`.
    pub fn initial_frame(&self) -> DMatrix<f64> {
        let d = self.b1.nrows();
        let mut s = DMatrix::zeros(d, d);
        s.view_mut((0, 0), (d, self.b1.ncols())).copy_from(&self.b1);
        s.view_mut((0, self.b1.ncols()), (d, self.b2.ncols())).copy_from(&self.b2);
        s
    }
}

/// Splits `B = B₁ ⊕ B₂` at `node` and builds the reproducible seed bases.
///
/// The spectrum of `ψ` is read off the symmetric matrix `Lᵀ ψ L⁻ᵀ`, with
/// `g ⊕ id = L Lᵀ`. Each eigenspace basis is the Gram–Schmidt completion of
/// the projected gauge basis vectors taken in index order.
pub fn eigen_split(psi: &PsiTildeField, gauge: &FlatBundleGauge, node: usize) -> Result<EigenSplit> {
    let (n, p) = (gauge.n(), gauge.p());
    let r = n + p;
    let d = r + 2;
    if psi.rank() != d {
        return Err(Error::Dimension { expected: d, got: psi.rank() });
    }
    let gram = gauge.gram_at(node);
    let ge = gram.view((0, 0), (r, r)).clone_owned();
    let chol = ge.clone().cholesky().ok_or(Error::Metric { node })?;
    let l = chol.l();
    let lt_inv = l.transpose().try_inverse().ok_or(Error::Metric { node })?;
    let psi_full = psi.at(node);
    let psi_e = psi_full.view((0, 0), (r, r)).clone_owned();
    let m = l.transpose() * &psi_e * &lt_inv;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut snap_defect = 0.0f64;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for &i in &order {
        let v = eig.eigenvalues[i];
        let dist = (v - 1.0).abs().min((v + 1.0).abs());
        if dist > EIGEN_SNAP {
            return Err(Error::Structure(format!("eigenvalue {v:.6} of psi at node {node} is not close to ±1")));
        }
        snap_defect = snap_defect.max(dist);
        if (v - 1.0).abs() < (v + 1.0).abs() {
            plus.push(i);
        } else {
            minus.push(i);
        }
    }
    let k = plus.len();
    if k == 0 || k == r {
        return Err(Error::Exclusion { sign: if k == 0 { '-' } else { '+' }, k, max: r - 1 });
    }

    // Projector onto an eigenspace in gauge components: L⁻ᵀ V Vᵀ Lᵀ.
    let projector = |idx: &[usize]| {
        let v = DMatrix::from_columns(&idx.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
        &lt_inv * &v * v.transpose() * l.transpose()
    };
    let complete = |proj: DMatrix<f64>, count: usize| -> Result<Vec<nalgebra::DVector<f64>>> {
        let mut basis: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(count);
        for j in 0..r {
            if basis.len() == count {
                break;
            }
            let mut w = proj.column(j).into_owned();
            for _ in 0..2 {
                for b in &basis {
                    let c = (b.transpose() * &ge * &w)[0];
                    w -= b * c;
                }
            }
            let q = (w.transpose() * &ge * &w)[0];
            if q > SEED_ACCEPT * SEED_ACCEPT {
                basis.push(w / q.sqrt());
            }
        }
        if basis.len() != count {
            return Err(Error::Structure(format!("could not complete an eigenspace basis at node {node}")));
        }
        Ok(basis)
    };
    let embed = |vs: Vec<nalgebra::DVector<f64>>, extra: usize| {
        let mut out = DMatrix::zeros(d, vs.len() + 1);
        for (c, v) in vs.iter().enumerate() {
            out.view_mut((0, c), (r, 1)).copy_from(v);
        }
        out[(extra, vs.len())] = 1.0;
        out
    };
    let b1 = embed(complete(projector(&plus), k)?, r);
    let b2 = embed(complete(projector(&minus), r - k)?, r + 1);
    Ok(EigenSplit { k, node, eigenvalues, snap_defect, b1, b2 })
}

/// Number of nodes whose `+1` multiplicity differs from the base node's.
pub fn multiplicity_changes(psi: &PsiTildeField, gauge: &FlatBundleGauge, k: usize) -> usize {
    (0..gauge.grid().node_count()).filter(|&node| eigen_split(psi, gauge, node).map(|s| s.k != k).unwrap_or(true)).count()
}

/// Flat-bundle view of compatibility data together with its checks.
#[derive(Debug, Clone)]
pub struct FlatBundle {
    pub gauge: FlatBundleGauge,
    pub connection: FlatBundleConnection,
    pub psi: PsiTildeField,
}

impl FlatBundle {
    pub fn new(data: &CompatibilityData) -> Result<Self> {
        Ok(Self {
            gauge: FlatBundleGauge::new(&data.metric, data.p()),
            connection: build_connection(&data.metric, &data.bundle, &data.sigma, &data.psi)?,
            psi: build_psi_tilde(&data.psi),
        })
    }

    pub fn check(&self, tol: &Tolerances) -> Result<ResidualReport> {
        let mut r = check_psi_tilde_algebra(&self.psi, &self.gauge, tol)?;
        r.push(metric_compatibility_residual(&self.connection, &self.gauge, tol)?);
        r.push(flatness_residual(&self.connection, tol));
        r.push(psi_tilde_parallel_residual(&self.connection, &self.psi, tol)?);
        Ok(r)
    }
}
