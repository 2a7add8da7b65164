//! Integration of compatible data into an immersion, its verification, and
//! congruence of two realizations.
//!
//! A parallel `G`-orthonormal frame `S` of the flat bundle is transported
//! from the base node over the whole grid. Its inverse `Ψ = η Sᵀ G` maps
//! gauge components to ambient coordinates, and the immersion is
//! `φ = Ψ(ξ̃₁ + ξ̃₂)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::center_node;
use crate::flatbundle::{eigen_split, EigenSplit, FlatBundle, FlatBundleConnection, FlatBundleGauge, PsiTildeField};
use crate::grid::{ChartGrid, Slot, TensorField};
use crate::lorentz::{eta, gram_defect, mdot, LorentzVector, ProductSplit};
use crate::structure::{CompatibilityData, Residual, ResidualReport, Tolerances};

/// One classical Runge–Kutta step of `dc/dt = −Ω(t) c` over `[0, dt]`,
/// with `Ω` linear between `omega_start` and `omega_end`.
pub fn transport_edge(omega_start: &DMatrix<f64>, omega_end: &DMatrix<f64>, dt: f64, frame: &DMatrix<f64>) -> DMatrix<f64> {
    let mid = (omega_start + omega_end) * 0.5;
    let rhs = |w: &DMatrix<f64>, c: &DMatrix<f64>| -(w * c);
    let k1 = rhs(omega_start, frame);
    let k2 = rhs(&mid, &(frame + &k1 * (0.5 * dt)));
    let k3 = rhs(&mid, &(frame + &k2 * (0.5 * dt)));
    let k4 = rhs(omega_end, &(frame + &k3 * dt));
    frame + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)
}

/// Gram–Schmidt of the columns of `s` with respect to `G`, the last column timelike.
pub fn reorthonormalize(s: &DMatrix<f64>, gram: &DMatrix<f64>) -> DMatrix<f64> {
    let d = s.ncols();
    let signs: Vec<f64> = (0..d).map(|j| if j + 1 == d { -1.0 } else { 1.0 }).collect();
    let mut out = s.clone();
    for j in 0..d {
        let mut w = s.column(j).into_owned();
        for (i, sign) in signs.iter().enumerate().take(j) {
            let c = out.column(i).dot(&(gram * &w)) * sign;
            w -= out.column(i) * c;
        }
        let q = w.dot(&(gram * &w)).abs().sqrt();
        out.set_column(j, &(w / q));
    }
    out
}

/// Frame field `S` over the grid; columns `s_1…s_{n+p+2}` in gauge components.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelFrameField {
    pub grid: ChartGrid,
    pub base: usize,
    /// Dimension of the sphere factor; the first `k + 1` columns span `B₁`.
    pub k: usize,
    pub frames: Vec<DMatrix<f64>>,
}

impl ParallelFrameField {
    pub fn at(&self, node: usize) -> &DMatrix<f64> {
        &self.frames[node]
    }

    /// `max |SᵀGS − η|` per node.
    pub fn orthonormality_defects(&self, gauge: &FlatBundleGauge) -> Vec<f64> {
        let d = gauge.rank();
        let e = eta(d);
        (0..self.frames.len())
            .into_par_iter()
            .map(|node| {
                let s = &self.frames[node];
                (s.transpose() * gauge.gram_at(node) * s - &e).amax()
            })
            .collect()
    }

    /// `max |ψ̃ s_i ∓ s_i|` per node, the sign given by the block of `s_i`.
    pub fn eigenspace_defects(&self, psi: &PsiTildeField) -> Vec<f64> {
        (0..self.frames.len())
            .into_par_iter()
            .map(|node| {
                let s = &self.frames[node];
                let mut lhs = psi.at(node) * s;
                for (j, mut c) in lhs.column_iter_mut().enumerate() {
                    let sign = if j <= self.k { 1.0 } else { -1.0 };
                    c -= s.column(j) * sign;
                }
                lhs.amax()
            })
            .collect()
    }

    /// `Ψ = η Sᵀ G` at a node: its columns are the ambient images of the gauge basis.
    pub fn psi_map(&self, gauge: &FlatBundleGauge, node: usize) -> DMatrix<f64> {
        let s = &self.frames[node];
        eta(s.ncols()) * s.transpose() * gauge.gram_at(node)
    }
}

/// Visits every node once, walking grid lines axis by axis in `order`.
///
/// `step(from, to, axis, direction, frame)` transports a frame across one edge.
fn sweep_lines<F>(dims: &[usize], base: &[usize], order: &[usize], initial: DMatrix<f64>, step: F) -> Vec<DMatrix<f64>>
where
    F: Fn(usize, usize, usize, f64, &DMatrix<f64>) -> DMatrix<f64> + Sync,
{
    let n = dims.len();
    let strides: Vec<usize> = (0..n).map(|a| dims[a + 1..].iter().product()).collect();
    let total: usize = dims.iter().product();
    let index = |multi: &[usize]| multi.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>();
    let base_node = index(base);
    let mut frames: Vec<Option<DMatrix<f64>>> = vec![None; total];
    frames[base_node] = Some(initial);
    let mut done = vec![base_node];
    for &axis in order {
        let lines: Vec<Vec<(usize, DMatrix<f64>)>> = done
            .par_iter()
            .map(|&start| {
                let mut multi: Vec<usize> = (0..n).map(|a| (start / strides[a]) % dims[a]).collect();
                let s0 = frames[start].clone().expect("line start has a frame");
                let mut out = Vec::with_capacity(dims[axis]);
                for dir in [1isize, -1] {
                    let mut cur = s0.clone();
                    multi[axis] = base[axis];
                    let mut from = start;
                    loop {
                        let next = multi[axis] as isize + dir;
                        if next < 0 || next >= dims[axis] as isize {
                            break;
                        }
                        multi[axis] = next as usize;
                        let to = index(&multi);
                        cur = step(from, to, axis, dir as f64, &cur);
                        out.push((to, cur.clone()));
                        from = to;
                    }
                }
                out
            })
            .collect();
        for line in lines {
            for (node, s) in line {
                done.push(node);
                frames[node] = Some(s);
            }
        }
    }
    frames.into_iter().map(|s| s.expect("every node visited")).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOptions {
    /// Re-orthonormalize the frame after every edge.
    pub reorthonormalize: bool,
    /// Axis order of the sweep; lexicographic if empty.
    pub order: Vec<usize>,
}

/// Parallel frame field grown from `initial` at `base`.
pub fn sweep_parallel_frame(
    omega: &FlatBundleConnection,
    gauge: &FlatBundleGauge,
    initial: &DMatrix<f64>,
    base: usize,
    k: usize,
    opts: &SweepOptions,
) -> Result<ParallelFrameField> {
    let grid = omega.grid().clone();
    let d = omega.rank();
    if initial.nrows() != d || initial.ncols() != d {
        return Err(Error::Dimension { expected: d, got: initial.nrows() });
    }
    if base >= grid.node_count() {
        return Err(Error::Grid(format!("base node {base} outside the grid")));
    }
    let order: Vec<usize> = if opts.order.is_empty() { (0..grid.n()).collect() } else { opts.order.clone() };
    let mut sorted = order.clone();
    sorted.sort_unstable();
    if sorted != (0..grid.n()).collect::<Vec<_>>() {
        return Err(Error::Parameter(format!("sweep order {order:?} is not a permutation of the axes")));
    }
    let frames = sweep_lines(grid.dims(), &grid.multi_index(base), &order, initial.clone(), |from, to, axis, dir, s| {
        let dt = dir * grid.spacing()[axis];
        let next = transport_edge(&omega.at(from, axis), &omega.at(to, axis), dt, s);
        if opts.reorthonormalize {
            reorthonormalize(&next, &gauge.gram_at(to))
        } else {
            next
        }
    });
    Ok(ParallelFrameField { grid, base, k, frames })
}

/// Reconstructed immersion: ambient points, timelike coordinate last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImmersionField {
    pub grid: ChartGrid,
    pub k: usize,
    pub base: usize,
    pub points: Vec<Vec<f64>>,
}

impl ImmersionField {
    pub fn split(&self) -> ProductSplit {
        let dim = self.points.first().map_or(self.k + 2, Vec::len);
        ProductSplit { k: self.k, m: dim - self.k - 2 }
    }

    pub fn point(&self, node: usize) -> LorentzVector {
        DVector::from_column_slice(&self.points[node])
    }

    pub fn product_defects(&self) -> Vec<f64> {
        let split = self.split();
        self.points.iter().map(|x| split.product_defect(&DVector::from_column_slice(x))).collect()
    }

    fn as_field(&self) -> Result<TensorField> {
        let d = self.split().dim();
        TensorField::new(self.grid.clone(), d - self.grid.n() - 2, vec![Slot::FiberUp], self.points.concat())
    }

    /// Nearest-point projection onto `S^k × H^m`, for export only.
    pub fn projected(&self) -> Self {
        let split = self.split();
        let mut out = self.clone();
        for x in &mut out.points {
            let (s, h) = x.split_at_mut(split.k + 1);
            let r = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            s.iter_mut().for_each(|v| *v /= r);
            let last = h.len() - 1;
            let q = h[..last].iter().map(|v| v * v).sum::<f64>();
            h[last] = (1.0 + q).sqrt();
        }
        out
    }
}

/// `φ = Ψ(ξ̃₁ + ξ̃₂)` at every node.
pub fn assemble_immersion(frames: &ParallelFrameField, gauge: &FlatBundleGauge) -> ImmersionField {
    let x1 = gauge.xi1();
    let points = (0..frames.frames.len())
        .into_par_iter()
        .map(|node| {
            let psi = frames.psi_map(gauge, node);
            (psi.column(x1) + psi.column(x1 + 1)).iter().copied().collect()
        })
        .collect();
    ImmersionField { grid: frames.grid.clone(), k: frames.k, base: frames.base, points }
}

/// Transport of the identity around each interior unit plaquette,
/// `max |P − I| / (h_a h_b)` per lower corner.
///
/// Plaquettes touching the boundary are skipped: one-sided stencils there
/// make the sampled connection jump at first order.
pub fn plaquette_holonomy(omega: &FlatBundleConnection) -> Vec<f64> {
    let grid = omega.grid();
    let n = grid.n();
    let d = omega.rank();
    (0..grid.node_count())
        .into_par_iter()
        .map(|node| {
            let mut worst = 0.0f64;
            let multi = grid.multi_index(node);
            if multi.iter().zip(grid.dims()).any(|(&i, &len)| i == 0 || i + 1 >= len) {
                return 0.0;
            }
            for a in 0..n {
                for b in a + 1..n {
                    if multi[a] + 2 >= grid.dims()[a] || multi[b] + 2 >= grid.dims()[b] {
                        continue;
                    }
                    let (Some(na), Some(nb)) = (grid.neighbor(node, a, 1), grid.neighbor(node, b, 1)) else {
                        continue;
                    };
                    let nab = grid.neighbor(na, b, 1).expect("plaquette corner inside grid");
                    let (ha, hb) = (grid.spacing()[a], grid.spacing()[b]);
                    let mut s = DMatrix::identity(d, d);
                    s = transport_edge(&omega.at(node, a), &omega.at(na, a), ha, &s);
                    s = transport_edge(&omega.at(na, b), &omega.at(nab, b), hb, &s);
                    s = transport_edge(&omega.at(nab, a), &omega.at(nb, a), -ha, &s);
                    s = transport_edge(&omega.at(nb, b), &omega.at(node, b), -hb, &s);
                    worst = worst.max((s - DMatrix::identity(d, d)).amax() / (ha * hb));
                }
            }
            worst
        })
        .collect()
}

/// Ambient isometry taking frame `a` to frame `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Congruence {
    /// Row-major `N × N` matrix `T` with `T φ_a ≈ φ_b`.
    pub matrix: Vec<f64>,
    pub dim: usize,
    /// `max |TᵀηT − η|`.
    pub lorentz_defect: f64,
    /// `max |Tψ̄ − ψ̄T|`.
    pub commutation_defect: f64,
    /// `max_node |T φ_a − φ_b|`.
    pub residual: f64,
}

impl Congruence {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.matrix)
    }
}

/// `T = F_b F_a⁻¹` from two ambient frames at the same base node, checked on all points.
pub fn align_frames(
    frame_a: &DMatrix<f64>,
    points_a: &[LorentzVector],
    frame_b: &DMatrix<f64>,
    points_b: &[LorentzVector],
    split: ProductSplit,
) -> Result<Congruence> {
    let dim = split.dim();
    if frame_a.nrows() != dim || frame_b.nrows() != dim || points_a.len() != points_b.len() {
        return Err(Error::Dimension { expected: dim, got: frame_b.nrows() });
    }
    let inv = frame_a.clone().try_inverse().ok_or_else(|| Error::Structure("frame is singular".into()))?;
    let t = frame_b * inv;
    let psi = split.psi_matrix();
    let residual = points_a.par_iter().zip(points_b).map(|(a, b)| (&t * a - b).norm()).reduce(|| 0.0, f64::max);
    Ok(Congruence {
        matrix: t.transpose().as_slice().to_vec(),
        dim,
        lorentz_defect: gram_defect(&t),
        commutation_defect: (&t * &psi - &psi * &t).amax(),
        residual,
    })
}

/// Congruence between two reconstructions of the same data.
pub fn align_congruence(a: &Reconstruction, b: &Reconstruction) -> Result<Congruence> {
    if a.immersion.k != b.immersion.k {
        return Err(Error::Structure(format!("sphere dimensions differ: {} vs {}", a.immersion.k, b.immersion.k)));
    }
    if a.immersion.grid != b.immersion.grid || a.base != b.base {
        return Err(Error::GridMismatch);
    }
    align_immersions(&a.immersion, &a.base_map, &b.immersion, &b.base_map)
}

/// Congruence from stored immersions and their base-node maps `Ψ`.
pub fn align_immersions(
    a: &ImmersionField,
    map_a: &DMatrix<f64>,
    b: &ImmersionField,
    map_b: &DMatrix<f64>,
) -> Result<Congruence> {
    if a.k != b.k {
        return Err(Error::Structure(format!("sphere dimensions differ: {} vs {}", a.k, b.k)));
    }
    if a.grid != b.grid || a.points.len() != b.points.len() || a.base != b.base {
        return Err(Error::GridMismatch);
    }
    let pa: Vec<_> = (0..a.points.len()).map(|i| a.point(i)).collect();
    let pb: Vec<_> = (0..b.points.len()).map(|i| b.point(i)).collect();
    align_frames(map_a, &pa, map_b, &pb, a.split())
}

/// Change of initial frame: block rotation of `B₁` in its first two columns
/// and boost of `B₂` in its last two; the result is `Q φ` for the ambient
/// isometry `Q = seed_isometry(..)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedFrame {
    pub rotation: f64,
    pub boost: f64,
}

impl SeedFrame {
    pub fn parse(s: &str) -> Result<Self> {
        let mut out = Self::default();
        for kv in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parameter(format!("expected key=value, got `{kv}`")))?;
            let v: f64 = v.trim().parse().map_err(|_| Error::Parameter(format!("`{v}` is not a number")))?;
            match k.trim() {
                "rot" | "rotation" => out.rotation = v,
                "boost" => out.boost = v,
                other => return Err(Error::Parameter(format!("unknown seed-frame key `{other}`"))),
            }
        }
        Ok(out)
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == 0.0 && self.boost == 0.0
    }

    /// The ambient isometry `Q`, commuting with `ψ̄`.
    pub fn isometry(&self, split: ProductSplit) -> DMatrix<f64> {
        let d = split.dim();
        let mut q = DMatrix::identity(d, d);
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        q[(0, 0)] = c;
        q[(0, 1)] = -s;
        q[(1, 0)] = s;
        q[(1, 1)] = c;
        let (ch, sh) = (self.boost.cosh(), self.boost.sinh());
        let (i, j) = (d - 2, d - 1);
        q[(i, i)] = ch;
        q[(i, j)] = sh;
        q[(j, i)] = sh;
        q[(j, j)] = ch;
        q
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReconstructOptions {
    /// Base node of the sweep (grid center if unset).
    pub base: Option<usize>,
    pub reorthonormalize: bool,
    pub seed: SeedFrame,
    /// Report an off-product reconstruction instead of failing.
    pub force: bool,
}

/// Everything produced by one reconstruction.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub immersion: ImmersionField,
    pub frames: ParallelFrameField,
    pub split: EigenSplit,
    pub base: usize,
    /// `Ψ` at the base node.
    pub base_map: DMatrix<f64>,
    pub report: ResidualReport,
    pub timings: Vec<(String, f64)>,
}

/// `max_node` of a per-node vector of residuals turned into a [`Residual`].
fn residual(name: &str, values: &[f64], h: f64, tol: &Tolerances) -> Residual {
    Residual::from_nodes(name, values, tol.differential(name, h))
}

/// Full construction: split at the base, sweep, assemble, verify.
pub fn reconstruct(data: &CompatibilityData, opts: &ReconstructOptions, tol: &Tolerances) -> Result<Reconstruction> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    let grid = data.grid().clone();
    let h = grid.max_spacing();
    let bundle = FlatBundle::new(data)?;
    lap("connection", &mut timings);
    let base = opts.base.unwrap_or_else(|| center_node(&grid));
    if base >= grid.node_count() {
        return Err(Error::Grid(format!("base node {base} outside the grid")));
    }
    let split = eigen_split(&bundle.psi, &bundle.gauge, base)?;
    let k = split.k;
    let ambient = ProductSplit::new(k, data.n() + data.p() - k)?;
    let mut initial = split.initial_frame();
    if !opts.seed.is_identity() {
        let q = opts.seed.isometry(ambient);
        initial *= q.try_inverse().ok_or_else(|| Error::Parameter("seed isometry is singular".into()))?;
    }
    let sweep_opts = SweepOptions { reorthonormalize: opts.reorthonormalize, order: Vec::new() };
    let frames = sweep_parallel_frame(&bundle.connection, &bundle.gauge, &initial, base, k, &sweep_opts)?;
    lap("sweep", &mut timings);
    let immersion = assemble_immersion(&frames, &bundle.gauge);
    let defects = immersion.product_defects();
    let on_product = residual("on_product", &defects, h, tol);
    if !opts.force && on_product.max > 10.0 * on_product.threshold {
        return Err(Error::Reconstruction { node: on_product.argmax, defect: on_product.max });
    }
    lap("assemble", &mut timings);

    let mut report = ResidualReport::default();
    report.push(on_product);
    report.push(residual("frame_orthonormality", &frames.orthonormality_defects(&bundle.gauge), h, tol));
    report.push(residual("frame_eigenspaces", &frames.eigenspace_defects(&bundle.psi), h, tol));
    report.extend(verify_reconstruction(&immersion, &frames, data, &bundle, tol)?);
    report.push(residual("path_independence", &plaquette_holonomy(&bundle.connection), h, tol));
    if grid.n() > 1 {
        let transposed = SweepOptions { reorthonormalize: opts.reorthonormalize, order: (0..grid.n()).rev().collect() };
        let other = sweep_parallel_frame(&bundle.connection, &bundle.gauge, &initial, base, k, &transposed)?;
        let diff: Vec<f64> = frames.frames.iter().zip(&other.frames).map(|(a, b)| (a - b).amax()).collect();
        report.push(residual("transposed_sweep", &diff, h, tol));
    }
    if split.snap_defect > tol.algebraic("eigen_snap") {
        report.warnings.push(format!("eigenvalues of psi at the base node were snapped by {:.3e}", split.snap_defect));
    }
    lap("verify", &mut timings);
    let base_map = frames.psi_map(&bundle.gauge, base);
    Ok(Reconstruction { immersion, frames, split, base, base_map, report, timings })
}

/// Differential checks of the reconstructed immersion against the input data:
/// isometry, normality of `Ψ(E)`, `h = Φ∘σ`, the full ambient Hessian, and
/// both product-structure identities.
pub fn verify_reconstruction(
    immersion: &ImmersionField,
    frames: &ParallelFrameField,
    data: &CompatibilityData,
    bundle: &FlatBundle,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    let grid = data.grid();
    let (n, p) = (data.n(), data.p());
    let h = grid.max_spacing();
    let field = immersion.as_field()?;
    let d1: Vec<TensorField> = (0..n).map(|a| field.partial(a)).collect();
    let d2: Vec<Vec<TensorField>> = (0..n).map(|a| (0..n).map(|b| field.second_partial(a, b)).collect()).collect();
    let split = immersion.split();
    let psi_bar = split.psi_matrix();

    let per_node: Vec<[f64; 6]> = (0..grid.node_count())
        .into_par_iter()
        .map(|node| {
            let map = frames.psi_map(&bundle.gauge, node);
            let t: Vec<DVector<f64>> = (0..n).map(|a| DVector::from_column_slice(d1[a].node(node))).collect();
            let nu: Vec<DVector<f64>> = (0..p).map(|a| map.column(n + a).into_owned()).collect();
            let g = data.metric.at(node);
            let mut iso = 0.0f64;
            let mut normal = 0.0f64;
            let mut second = 0.0f64;
            let mut hessian = 0.0f64;
            for mu in 0..n {
                for nu_ in 0..n {
                    iso = iso.max((mdot(&t[mu], &t[nu_]) - g[(mu, nu_)]).abs());
                }
                for v in &nu {
                    normal = normal.max(mdot(&t[mu], v).abs());
                }
                let w = bundle.connection.at(node, mu);
                for nu_ in 0..n {
                    let hess = DVector::from_column_slice(d2[mu][nu_].node(node));
                    let sig = data.sigma.field().node(node);
                    for (a, v) in nu.iter().enumerate() {
                        second = second.max((mdot(&hess, v) - sig[(mu * n + nu_) * p + a]).abs());
                    }
                    hessian = hessian.max((&hess - &map * w.column(nu_)).amax());
                }
            }
            let f = data.psi.f_at(node);
            let u = data.psi.u_at(node);
            let big_u = data.psi.big_u_at(node);
            let lambda = data.psi.lambda_at(node);
            let mut tangent = 0.0f64;
            for mu in 0..n {
                let mut r = &psi_bar * &t[mu];
                for kappa in 0..n {
                    r -= &t[kappa] * f[(kappa, mu)];
                }
                for a in 0..p {
                    r -= &nu[a] * u[(a, mu)];
                }
                tangent = tangent.max(r.amax());
            }
            let mut normal_id = 0.0f64;
            for b in 0..p {
                let mut r = &psi_bar * &nu[b];
                for i in 0..n {
                    r -= &t[i] * big_u[(i, b)];
                }
                for a in 0..p {
                    r -= &nu[a] * lambda[(a, b)];
                }
                normal_id = normal_id.max(r.amax());
            }
            [iso, normal, second, hessian, tangent, normal_id]
        })
        .collect();
    let names = ["isometry", "normal_orthogonality", "second_form", "ambient_hessian", "psi_bar_tangent", "psi_bar_normal"];
    let mut report = ResidualReport::default();
    for (i, name) in names.iter().enumerate() {
        let vals: Vec<f64> = per_node.iter().map(|r| r[i]).collect();
        report.push(residual(name, &vals, h, tol));
    }
    Ok(report)
}
