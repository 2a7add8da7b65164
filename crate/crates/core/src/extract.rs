//! Induced data of immersions into `S^k × H^m`, and the fixture library.
//!
//! From a parametrized immersion the extractor samples, at every grid node,
//! the induced metric, a smooth orthonormal normal frame, the second
//! fundamental form, the normal connection and the four blocks of the
//! induced product structure.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_3;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{BundleData, MetricField, SecondFormField};
use crate::grid::{ChartGrid, Slot, TensorField};
use crate::lorentz::{mdot, orthonormalize_family, LorentzVector, ProductSplit};
use crate::structure::{check_compatibility, CompatibilityData, ProductStructureField, ResidualReport, Tolerances};

/// Parametrized immersion of a chart into `S^k × H^m`.
pub trait AnalyticImmersion: Sync + Send {
    fn name(&self) -> String;

    /// Chart dimension.
    fn n(&self) -> usize;

    /// Sphere factor dimension.
    fn k(&self) -> usize;

    /// Hyperbolic factor dimension.
    fn m(&self) -> usize;

    fn point(&self, x: &[f64]) -> LorentzVector;

    /// `∂_μ φ`, if known in closed form.
    fn first(&self, _x: &[f64]) -> Option<Vec<LorentzVector>> {
        None
    }

    /// `∂_μ ∂_ν φ` as `[μ][ν]`, if known in closed form.
    fn second(&self, _x: &[f64]) -> Option<Vec<Vec<LorentzVector>>> {
        None
    }

    /// Chart box, one `(lo, hi)` per axis.
    fn domain(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); self.n()]
    }

    fn default_nodes(&self) -> Vec<usize> {
        vec![33; self.n()]
    }

    fn codimension(&self) -> usize {
        self.k() + self.m() - self.n()
    }

    fn split(&self) -> ProductSplit {
        ProductSplit { k: self.k(), m: self.m() }
    }
}

fn v(xs: &[f64]) -> LorentzVector {
    DVector::from_column_slice(xs)
}

/// `F1`: the helix `t ↦ ((cos at, sin at), (sinh bt, cosh bt))` in `S¹ × H¹`.
///
/// Both factor curves are constant-speed geodesics, so `σ = 0`; with
/// `a² + b² = 1` it has unit speed, `f = a² − b²` and `|u| = 2ab`.
#[derive(Debug, Clone)]
pub struct Helix {
    pub a: f64,
    pub b: f64,
}

impl AnalyticImmersion for Helix {
    fn name(&self) -> String {
        "F1".into()
    }
    fn n(&self) -> usize {
        1
    }
    fn k(&self) -> usize {
        1
    }
    fn m(&self) -> usize {
        1
    }
    fn point(&self, x: &[f64]) -> LorentzVector {
        let (s, t) = (self.a * x[0], self.b * x[0]);
        v(&[s.cos(), s.sin(), t.sinh(), t.cosh()])
    }
    fn first(&self, x: &[f64]) -> Option<Vec<LorentzVector>> {
        let (a, b) = (self.a, self.b);
        let (s, t) = (a * x[0], b * x[0]);
        Some(vec![v(&[-a * s.sin(), a * s.cos(), b * t.cosh(), b * t.sinh()])])
    }
    fn second(&self, x: &[f64]) -> Option<Vec<Vec<LorentzVector>>> {
        let (a, b) = (self.a, self.b);
        let (s, t) = (a * x[0], b * x[0]);
        Some(vec![vec![v(&[-a * a * s.cos(), -a * a * s.sin(), b * b * t.sinh(), b * b * t.cosh()])]])
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 0.995)]
    }
    fn default_nodes(&self) -> Vec<usize> {
        vec![200]
    }
}

/// `F2`: the circle of latitude `θ₀` in `S²`, by arclength, times the apex of `H¹`.
///
/// `g = 1`, `f = 1`, `u = 0`, and `|σ| = cot θ₀` along the sphere normal.
#[derive(Debug, Clone)]
pub struct Latitude {
    pub theta0: f64,
}

impl AnalyticImmersion for Latitude {
    fn name(&self) -> String {
        "F2".into()
    }
    fn n(&self) -> usize {
        1
    }
    fn k(&self) -> usize {
        2
    }
    fn m(&self) -> usize {
        1
    }
    fn point(&self, x: &[f64]) -> LorentzVector {
        let r = self.theta0.sin();
        let s = x[0] / r;
        v(&[r * s.cos(), r * s.sin(), self.theta0.cos(), 0.0, 1.0])
    }
    fn first(&self, x: &[f64]) -> Option<Vec<LorentzVector>> {
        let s = x[0] / self.theta0.sin();
        Some(vec![v(&[-s.sin(), s.cos(), 0.0, 0.0, 0.0])])
    }
    fn second(&self, x: &[f64]) -> Option<Vec<Vec<LorentzVector>>> {
        let r = self.theta0.sin();
        let s = x[0] / r;
        Some(vec![vec![v(&[-s.cos() / r, -s.sin() / r, 0.0, 0.0, 0.0])]])
    }
    fn default_nodes(&self) -> Vec<usize> {
        vec![101]
    }
}

/// `F3`: circle of latitude `θ₀` in `S²` times a geodesic of `H²`.
///
/// Flat metric, `f = diag(1, −1)`, `u = 0`; `σ` is nonzero only on the
/// circle direction, with value `cot θ₀`.
#[derive(Debug, Clone)]
pub struct ProductSurface {
    pub theta0: f64,
}

impl AnalyticImmersion for ProductSurface {
    fn name(&self) -> String {
        "F3".into()
    }
    fn n(&self) -> usize {
        2
    }
    fn k(&self) -> usize {
        2
    }
    fn m(&self) -> usize {
        2
    }
    fn point(&self, x: &[f64]) -> LorentzVector {
        let r = self.theta0.sin();
        let s = x[0] / r;
        v(&[r * s.cos(), r * s.sin(), self.theta0.cos(), x[1].sinh(), 0.0, x[1].cosh()])
    }
    fn first(&self, x: &[f64]) -> Option<Vec<LorentzVector>> {
        let s = x[0] / self.theta0.sin();
        Some(vec![v(&[-s.sin(), s.cos(), 0.0, 0.0, 0.0, 0.0]), v(&[0.0, 0.0, 0.0, x[1].cosh(), 0.0, x[1].sinh()])])
    }
    fn second(&self, x: &[f64]) -> Option<Vec<Vec<LorentzVector>>> {
        let r = self.theta0.sin();
        let s = x[0] / r;
        let z = v(&[0.0; 6]);
        Some(vec![
            vec![v(&[-s.cos() / r, -s.sin() / r, 0.0, 0.0, 0.0, 0.0]), z.clone()],
            vec![z, v(&[0.0, 0.0, 0.0, x[1].sinh(), 0.0, x[1].cosh()])],
        ])
    }
    fn default_nodes(&self) -> Vec<usize> {
        vec![64, 64]
    }
}

/// `F4`: helicoidal surface in `S¹ × H²`,
/// `(t, w) ↦ ((cos at, sin at), (cosh w sinh bt, sinh w, cosh w cosh bt))`.
///
/// Non-constant metric and `u ≠ 0`: exercises Codazzi with a live right side.
#[derive(Debug, Clone)]
pub struct Helicoid {
    pub a: f64,
    pub b: f64,
}

impl AnalyticImmersion for Helicoid {
    fn name(&self) -> String {
        "F4".into()
    }
    fn n(&self) -> usize {
        2
    }
    fn k(&self) -> usize {
        1
    }
    fn m(&self) -> usize {
        2
    }
    fn point(&self, x: &[f64]) -> LorentzVector {
        let (s, t, w) = (self.a * x[0], self.b * x[0], x[1]);
        v(&[s.cos(), s.sin(), w.cosh() * t.sinh(), w.sinh(), w.cosh() * t.cosh()])
    }
    fn first(&self, x: &[f64]) -> Option<Vec<LorentzVector>> {
        let (a, b) = (self.a, self.b);
        let (s, t, w) = (a * x[0], b * x[0], x[1]);
        Some(vec![
            v(&[-a * s.sin(), a * s.cos(), b * w.cosh() * t.cosh(), 0.0, b * w.cosh() * t.sinh()]),
            v(&[0.0, 0.0, w.sinh() * t.sinh(), w.cosh(), w.sinh() * t.cosh()]),
        ])
    }
    fn second(&self, x: &[f64]) -> Option<Vec<Vec<LorentzVector>>> {
        let (a, b) = (self.a, self.b);
        let (s, t, w) = (a * x[0], b * x[0], x[1]);
        let tw = v(&[0.0, 0.0, b * w.sinh() * t.cosh(), 0.0, b * w.sinh() * t.sinh()]);
        Some(vec![
            vec![
                v(&[-a * a * s.cos(), -a * a * s.sin(), b * b * w.cosh() * t.sinh(), 0.0, b * b * w.cosh() * t.cosh()]),
                tw.clone(),
            ],
            vec![tw, v(&[0.0, 0.0, w.cosh() * t.sinh(), w.sinh(), w.cosh() * t.cosh()])],
        ])
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0), (-0.5, 0.5)]
    }
}

/// `F5`: hypersurface `S¹(θ₀) × H²` inside `S² × H²`, the `H²` factor in
/// the chart `(t, w) ↦ (cosh w sinh t, sinh w, cosh w cosh t)`.
#[derive(Debug, Clone)]
pub struct Cylinder {
    pub theta0: f64,
}

impl AnalyticImmersion for Cylinder {
    fn name(&self) -> String {
        "F5".into()
    }
    fn n(&self) -> usize {
        3
    }
    fn k(&self) -> usize {
        2
    }
    fn m(&self) -> usize {
        2
    }
    fn point(&self, x: &[f64]) -> LorentzVector {
        let r = self.theta0.sin();
        let s = x[0] / r;
        let (t, w) = (x[1], x[2]);
        v(&[r * s.cos(), r * s.sin(), self.theta0.cos(), w.cosh() * t.sinh(), w.sinh(), w.cosh() * t.cosh()])
    }
    fn first(&self, x: &[f64]) -> Option<Vec<LorentzVector>> {
        let s = x[0] / self.theta0.sin();
        let (t, w) = (x[1], x[2]);
        Some(vec![
            v(&[-s.sin(), s.cos(), 0.0, 0.0, 0.0, 0.0]),
            v(&[0.0, 0.0, 0.0, w.cosh() * t.cosh(), 0.0, w.cosh() * t.sinh()]),
            v(&[0.0, 0.0, 0.0, w.sinh() * t.sinh(), w.cosh(), w.sinh() * t.cosh()]),
        ])
    }
    fn second(&self, x: &[f64]) -> Option<Vec<Vec<LorentzVector>>> {
        let r = self.theta0.sin();
        let s = x[0] / r;
        let (t, w) = (x[1], x[2]);
        let z = v(&[0.0; 6]);
        let tw = v(&[0.0, 0.0, 0.0, w.sinh() * t.cosh(), 0.0, w.sinh() * t.sinh()]);
        Some(vec![
            vec![v(&[-s.cos() / r, -s.sin() / r, 0.0, 0.0, 0.0, 0.0]), z.clone(), z.clone()],
            vec![z.clone(), v(&[0.0, 0.0, 0.0, w.cosh() * t.sinh(), 0.0, w.cosh() * t.cosh()]), tw.clone()],
            vec![z, tw, v(&[0.0, 0.0, 0.0, w.cosh() * t.sinh(), w.sinh(), w.cosh() * t.cosh()])],
        ])
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0), (0.0, 1.0), (-0.5, 0.5)]
    }
    fn default_nodes(&self) -> Vec<usize> {
        vec![13, 13, 13]
    }
}

/// Reparametrization `x ↦ φ(c(x))` with `c(x)_μ = x_μ + A sin x_μ`.
pub struct Warped {
    pub inner: Box<dyn AnalyticImmersion>,
    pub amplitude: f64,
}

impl Warped {
    fn chart(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&t| t + self.amplitude * t.sin()).collect()
    }
}

impl AnalyticImmersion for Warped {
    fn name(&self) -> String {
        format!("{}:warp={}", self.inner.name(), self.amplitude)
    }
    fn n(&self) -> usize {
        self.inner.n()
    }
    fn k(&self) -> usize {
        self.inner.k()
    }
    fn m(&self) -> usize {
        self.inner.m()
    }
    fn point(&self, x: &[f64]) -> LorentzVector {
        self.inner.point(&self.chart(x))
    }
    fn first(&self, x: &[f64]) -> Option<Vec<LorentzVector>> {
        let d = self.inner.first(&self.chart(x))?;
        Some(d.into_iter().zip(x).map(|(t, &xi)| t * (1.0 + self.amplitude * xi.cos())).collect())
    }
    fn second(&self, x: &[f64]) -> Option<Vec<Vec<LorentzVector>>> {
        let c = self.chart(x);
        let d1 = self.inner.first(&c)?;
        let d2 = self.inner.second(&c)?;
        let dc: Vec<f64> = x.iter().map(|&t| 1.0 + self.amplitude * t.cos()).collect();
        Some(
            (0..x.len())
                .map(|m| {
                    (0..x.len())
                        .map(|n| {
                            let mut h = &d2[m][n] * (dc[m] * dc[n]);
                            if m == n {
                                h -= &d1[m] * (self.amplitude * x[m].sin());
                            }
                            h
                        })
                        .collect()
                })
                .collect(),
        )
    }
    fn domain(&self) -> Vec<(f64, f64)> {
        self.inner.domain()
    }
    fn default_nodes(&self) -> Vec<usize> {
        self.inner.default_nodes()
    }
}

/// A named fixture with parameters, e.g. `F3:theta0=1.0,warp=0.1,twist=0.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

impl FixtureSpec {
    pub fn new(name: &str) -> Self {
        Self { name: name.to_string(), params: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn parse(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = Self::new(name.trim());
        for kv in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, val) = kv.split_once('=').ok_or_else(|| Error::Parameter(format!("expected key=value, got `{kv}`")))?;
            let val: f64 = val.trim().parse().map_err(|_| Error::Parameter(format!("`{val}` is not a number")))?;
            spec.params.insert(k.trim().to_string(), val);
        }
        Ok(spec)
    }

    /// Normal-frame twist rate requested by the spec (0 if absent).
    pub fn twist(&self) -> f64 {
        self.params.get("twist").copied().unwrap_or(0.0)
    }

    pub fn build(&self) -> Result<Box<dyn AnalyticImmersion>> {
        let allowed: &[&str] = match self.canonical()? {
            "F1" | "F4" => &["a", "b", "warp", "twist"],
            _ => &["theta0", "warp", "twist"],
        };
        if let Some(k) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Parameter(format!("fixture {} has no parameter `{k}`", self.name)));
        }
        let get = |k: &str, d: f64| self.params.get(k).copied().unwrap_or(d);
        let theta0 = get("theta0", FRAC_PI_3);
        if !(theta0 > 0.0 && theta0 < std::f64::consts::PI) {
            return Err(Error::Parameter(format!("theta0 must lie in (0, π), got {theta0}")));
        }
        let base: Box<dyn AnalyticImmersion> = match self.canonical()? {
            "F1" => Box::new(Helix { a: get("a", 0.6), b: get("b", 0.8) }),
            "F2" => Box::new(Latitude { theta0 }),
            "F3" => Box::new(ProductSurface { theta0 }),
            "F4" => Box::new(Helicoid { a: get("a", 0.6), b: get("b", 0.8) }),
            _ => Box::new(Cylinder { theta0 }),
        };
        let warp = get("warp", 0.0);
        if warp.abs() >= 1.0 {
            return Err(Error::Parameter(format!("warp amplitude must be below 1, got {warp}")));
        }
        Ok(if warp != 0.0 { Box::new(Warped { inner: base, amplitude: warp }) } else { base })
    }

    fn canonical(&self) -> Result<&'static str> {
        Ok(match self.name.to_ascii_lowercase().as_str() {
            "f1" | "helix" => "F1",
            "f2" | "latitude" => "F2",
            "f3" | "product-surface" => "F3",
            "f4" | "helicoid" => "F4",
            "f5" | "cylinder" => "F5",
            _ => return Err(Error::UnknownFixture(self.name.clone())),
        })
    }
}

/// Grid over an immersion's domain with the given node counts.
pub fn grid_for(imm: &dyn AnalyticImmersion, nodes: &[usize]) -> Result<ChartGrid> {
    let dom = imm.domain();
    if nodes.len() != dom.len() {
        return Err(Error::Dimension { expected: dom.len(), got: nodes.len() });
    }
    let spacing = dom.iter().zip(nodes).map(|(&(lo, hi), &k)| (hi - lo) / (k.max(2) - 1) as f64).collect();
    ChartGrid::new(nodes.to_vec(), spacing, dom.iter().map(|d| d.0).collect())
}

/// Default grid refined `level` times (each level halves the spacing).
pub fn default_grid(imm: &dyn AnalyticImmersion, level: u32) -> Result<ChartGrid> {
    let nodes: Vec<usize> = imm.default_nodes().iter().map(|&k| (k - 1) * (1 << level) + 1).collect();
    grid_for(imm, &nodes)
}

/// How derivatives of the immersion are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    /// Closed-form derivatives when the immersion provides them, fourth-order
    /// differences at a small step otherwise; normal-frame derivatives by
    /// fourth-order differences.
    Analytic,
    /// Second-order central differences at the grid spacing for everything,
    /// sampling the immersion off the grid.
    Differenced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    pub mode: DerivativeMode,
    /// Rotation rate `τ` of the normal frame in its first two vectors:
    /// angle `τ Σ x_μ`.
    pub twist: f64,
    /// Pin the normal-frame seed choice to one node instead of the whole grid.
    pub base: Option<usize>,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { mode: DerivativeMode::Analytic, twist: 0.0, base: None }
    }
}

const FD_STEP: f64 = 1e-3;
const FD_STEP_SECOND: f64 = 1e-2;
const PRODUCT_TOL: f64 = 1e-10;

pub fn center_node(grid: &ChartGrid) -> usize {
    grid.index(&grid.dims().iter().map(|d| d / 2).collect::<Vec<_>>())
}

struct Sampler<'a> {
    imm: &'a dyn AnalyticImmersion,
    split: ProductSplit,
    mode: DerivativeMode,
    steps: Vec<f64>,
    twist: f64,
}

fn shifted(x: &[f64], axis: usize, d: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[axis] += d;
    y
}

/// Fourth-order central difference of a vector function along `axis`.
fn d4<F: Fn(&[f64]) -> DVector<f64>>(f: &F, x: &[f64], axis: usize, h: f64) -> DVector<f64> {
    (f(&shifted(x, axis, -2.0 * h)) - f(&shifted(x, axis, 2.0 * h)) + (f(&shifted(x, axis, h)) - f(&shifted(x, axis, -h))) * 8.0)
        / (12.0 * h)
}

fn d2<F: Fn(&[f64]) -> DVector<f64>>(f: &F, x: &[f64], axis: usize, h: f64) -> DVector<f64> {
    (f(&shifted(x, axis, h)) - f(&shifted(x, axis, -h))) / (2.0 * h)
}

impl Sampler<'_> {
    fn raw_tangents(&self, x: &[f64]) -> Vec<LorentzVector> {
        let n = self.imm.n();
        match self.mode {
            DerivativeMode::Analytic => {
                self.imm.first(x).unwrap_or_else(|| (0..n).map(|a| d4(&|y: &[f64]| self.imm.point(y), x, a, FD_STEP)).collect())
            }
            DerivativeMode::Differenced => (0..n).map(|a| d2(&|y: &[f64]| self.imm.point(y), x, a, self.steps[a])).collect(),
        }
    }

    /// Tangents projected onto the tangent space of the product.
    fn tangents(&self, x: &[f64]) -> Vec<LorentzVector> {
        let p = self.imm.point(x);
        self.raw_tangents(x).iter().map(|t| self.split.project_tangent(&p, t)).collect()
    }

    fn hessian(&self, x: &[f64]) -> Vec<Vec<LorentzVector>> {
        let n = self.imm.n();
        let point = |y: &[f64]| self.imm.point(y);
        match self.mode {
            DerivativeMode::Analytic => self.imm.second(x).unwrap_or_else(|| {
                (0..n)
                    .map(|a| (0..n).map(|b| d4(&|y: &[f64]| d4(&point, y, b, FD_STEP_SECOND), x, a, FD_STEP_SECOND)).collect())
                    .collect()
            }),
            DerivativeMode::Differenced => (0..n)
                .map(|a| {
                    (0..n)
                        .map(|b| {
                            let (ha, hb) = (self.steps[a], self.steps[b]);
                            if a == b {
                                (point(&shifted(x, a, ha)) - point(x) * 2.0 + point(&shifted(x, a, -ha))) / (ha * ha)
                            } else {
                                d2(&|y: &[f64]| d2(&point, y, b, hb), x, a, ha)
                            }
                        })
                        .collect()
                })
                .collect(),
        }
    }

    fn seed_vector(&self, pos: &LorentzVector, j: usize) -> LorentzVector {
        let mut e = DVector::zeros(pos.len());
        e[j] = 1.0;
        self.split.project_tangent(pos, &e)
    }

    /// Greedy choice of canonical seed vectors: each step takes the basis
    /// vector whose component normal to what is already spanned has the
    /// largest minimum over `sites` (first index on ties).
    fn choose_seeds(&self, sites: &[Vec<f64>]) -> Result<Vec<usize>> {
        let p = self.imm.codimension();
        let positions: Vec<LorentzVector> = sites.iter().map(|x| self.imm.point(x)).collect();
        let mut families = sites.par_iter().map(|x| orthonormalize_family(&self.tangents(x))).collect::<Result<Vec<_>>>()?;
        let dim = self.split.dim();
        let mut seeds = Vec::with_capacity(p);
        for _ in 0..p {
            let worst: Vec<f64> = (0..dim)
                .into_par_iter()
                .map(|j| {
                    positions
                        .iter()
                        .zip(&families)
                        .map(|(pos, family)| {
                            let mut w = self.seed_vector(pos, j);
                            for (e, s) in family {
                                w -= e * (s * mdot(&w, e));
                            }
                            mdot(&w, &w)
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let mut best: Option<(usize, f64)> = None;
            for (j, &q) in worst.iter().enumerate() {
                if !seeds.contains(&j) && best.is_none_or(|(_, b)| q > b) {
                    best = Some((j, q));
                }
            }
            let (j, _) = best.ok_or_else(|| Error::InsufficientData("no seed vectors left".into()))?;
            seeds.push(j);
            families = positions
                .par_iter()
                .zip(families.into_par_iter())
                .map(|(pos, family)| {
                    let mut vecs: Vec<_> = family.into_iter().map(|(e, _)| e).collect();
                    vecs.push(self.seed_vector(pos, j));
                    orthonormalize_family(&vecs)
                })
                .collect::<Result<Vec<_>>>()?;
        }
        Ok(seeds)
    }

    fn normals(&self, x: &[f64], seeds: &[usize]) -> Result<Vec<LorentzVector>> {
        let pos = self.imm.point(x);
        let n = self.imm.n();
        let mut vecs = self.tangents(x);
        vecs.extend(seeds.iter().map(|&j| self.seed_vector(&pos, j)));
        let fam = orthonormalize_family(&vecs)?;
        let mut nu: Vec<LorentzVector> = fam.into_iter().skip(n).map(|(e, _)| e).collect();
        if self.twist != 0.0 && nu.len() >= 2 {
            let th = self.twist * x.iter().sum::<f64>();
            let (c, s) = (th.cos(), th.sin());
            let (a, b) = (nu[0].clone(), nu[1].clone());
            nu[0] = &a * c + &b * s;
            nu[1] = &b * c - &a * s;
        }
        Ok(nu)
    }

    fn normal_derivative(&self, x: &[f64], seeds: &[usize], axis: usize) -> Result<Vec<LorentzVector>> {
        let at = |d: f64| self.normals(&shifted(x, axis, d), seeds);
        let p = seeds.len();
        match self.mode {
            DerivativeMode::Analytic => {
                let h = FD_STEP;
                let (m2, m1, p1, p2) = (at(-2.0 * h)?, at(-h)?, at(h)?, at(2.0 * h)?);
                Ok((0..p).map(|a| (&m2[a] - &p2[a] + (&p1[a] - &m1[a]) * 8.0) / (12.0 * h)).collect())
            }
            DerivativeMode::Differenced => {
                let h = self.steps[axis];
                let (m1, p1) = (at(-h)?, at(h)?);
                Ok((0..p).map(|a| (&p1[a] - &m1[a]) / (2.0 * h)).collect())
            }
        }
    }
}

/// Extracted hypothesis data together with the ambient quantities it came from.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub name: String,
    pub data: CompatibilityData,
    pub split: ProductSplit,
    pub points: Vec<LorentzVector>,
    pub tangents: Vec<Vec<LorentzVector>>,
    pub normals: Vec<Vec<LorentzVector>>,
    pub seeds: Vec<usize>,
}

impl Extraction {
    pub fn k(&self) -> usize {
        self.split.k
    }

    pub fn grid(&self) -> &ChartGrid {
        self.data.grid()
    }

    /// Ambient images of the gauge basis `(∂_μ φ, ν_a, ξ₁, ξ₂)` at a node as columns.
    pub fn ambient_frame(&self, node: usize) -> DMatrix<f64> {
        let (xi1, xi2) = self.split.split_position(&self.points[node]);
        let mut cols = self.tangents[node].clone();
        cols.extend(self.normals[node].iter().cloned());
        cols.push(xi1);
        cols.push(xi2);
        DMatrix::from_columns(&cols)
    }
}

struct NodeSample {
    point: LorentzVector,
    tangents: Vec<LorentzVector>,
    normals: Vec<LorentzVector>,
    sigma: Vec<f64>,
    psi: DMatrix<f64>,
    omega: Vec<f64>,
}

/// Samples every induced quantity of `imm` on `grid`.
pub fn extract(imm: &dyn AnalyticImmersion, grid: &ChartGrid, opts: &ExtractOptions) -> Result<Extraction> {
    let n = imm.n();
    if grid.n() != n {
        return Err(Error::Dimension { expected: n, got: grid.n() });
    }
    let split = ProductSplit::new(imm.k(), imm.m())?;
    if imm.k() + imm.m() <= n {
        return Err(Error::Parameter("codimension must be at least 1".into()));
    }
    let p = imm.codimension();
    let sampler = Sampler { imm, split, mode: opts.mode, steps: grid.spacing().to_vec(), twist: opts.twist };

    for node in 0..grid.node_count() {
        let x = imm.point(&grid.coords(node));
        if x.len() != split.dim() {
            return Err(Error::Dimension { expected: split.dim(), got: x.len() });
        }
        let defect = split.product_defect(&x);
        if defect > PRODUCT_TOL {
            return Err(Error::Constraint { what: format!("immersion leaves the product at node {node}"), defect });
        }
    }
    let metric = MetricField::from_fn(grid, |x| {
        let t = sampler.tangents(x);
        DMatrix::from_fn(n, n, |i, j| mdot(&t[i], &t[j]))
    })?;

    let sites: Vec<Vec<f64>> = match opts.base {
        Some(base) => vec![grid.coords(base)],
        None => (0..grid.node_count()).map(|node| grid.coords(node)).collect(),
    };
    let seeds = sampler.choose_seeds(&sites).map_err(|e| degenerate_at(e, opts.base.unwrap_or(0)))?;

    let samples: Vec<NodeSample> = (0..grid.node_count())
        .into_par_iter()
        .map(|node| -> Result<NodeSample> {
            let x = grid.coords(node);
            let point = imm.point(&x);
            let tangents = sampler.tangents(&x);
            let normals = sampler.normals(&x, &seeds).map_err(|e| degenerate_at(e, node))?;
            let ginv = metric.inverse_at(node)?;
            let hess = sampler.hessian(&x);
            let mut sigma = vec![0.0; n * n * p];
            for i in 0..n {
                for j in 0..n {
                    for a in 0..p {
                        sigma[(i * n + j) * p + a] = 0.5 * (mdot(&hess[i][j], &normals[a]) + mdot(&hess[j][i], &normals[a]));
                    }
                }
            }
            let pt: Vec<_> = tangents.iter().map(|t| split.psi(t)).collect();
            let pn: Vec<_> = normals.iter().map(|v| split.psi(v)).collect();
            let tt = DMatrix::from_fn(n, n, |k, m| mdot(&pt[m], &tangents[k]));
            let nt = DMatrix::from_fn(n, p, |k, b| mdot(&pn[b], &tangents[k]));
            let mut psi = DMatrix::zeros(n + p, n + p);
            psi.view_mut((0, 0), (n, n)).copy_from(&(&ginv * tt));
            psi.view_mut((0, n), (n, p)).copy_from(&(&ginv * nt));
            psi.view_mut((n, 0), (p, n)).copy_from(&DMatrix::from_fn(p, n, |a, m| mdot(&pt[m], &normals[a])));
            psi.view_mut((n, n), (p, p)).copy_from(&DMatrix::from_fn(p, p, |a, b| mdot(&pn[b], &normals[a])));
            let mut omega = vec![0.0; n * p * p];
            for mu in 0..n {
                let dn = sampler.normal_derivative(&x, &seeds, mu).map_err(|e| degenerate_at(e, node))?;
                let w = DMatrix::from_fn(p, p, |a, b| mdot(&dn[b], &normals[a]));
                let w = (&w - w.transpose()) * 0.5;
                for a in 0..p {
                    for b in 0..p {
                        omega[(mu * p + a) * p + b] = w[(a, b)];
                    }
                }
            }
            Ok(NodeSample { point, tangents, normals, sigma, psi, omega })
        })
        .collect::<Result<_>>()?;

    let sigma = SecondFormField::new(TensorField::from_fn(
        grid,
        p,
        vec![Slot::TangentDown, Slot::TangentDown, Slot::BundleUp],
        |node, out| out.copy_from_slice(&samples[node].sigma),
    ))?;
    let bundle = BundleData::new(TensorField::from_fn(
        grid,
        p,
        vec![Slot::TangentDown, Slot::BundleUp, Slot::BundleDown],
        |node, out| out.copy_from_slice(&samples[node].omega),
    ))?;
    let psi = ProductStructureField::from_fn(grid, p, |node| samples[node].psi.clone())?;
    let data = CompatibilityData::new(metric, bundle, sigma, psi)?;
    let mut points = Vec::with_capacity(samples.len());
    let mut tangents = Vec::with_capacity(samples.len());
    let mut normals = Vec::with_capacity(samples.len());
    for s in samples {
        points.push(s.point);
        tangents.push(s.tangents);
        normals.push(s.normals);
    }
    Ok(Extraction { name: imm.name(), data, split, points, tangents, normals, seeds })
}

fn degenerate_at(e: Error, node: usize) -> Error {
    match e {
        Error::Degenerate { reason, .. } => {
            Error::Degenerate { index: node, reason: format!("tangent frame at node {node}: {reason}") }
        }
        other => other,
    }
}

/// Runs the full structure checker on extracted data.
pub fn verify_necessity(
    imm: &dyn AnalyticImmersion,
    grid: &ChartGrid,
    opts: &ExtractOptions,
    tol: &Tolerances,
) -> Result<ResidualReport> {
    check_compatibility(&extract(imm, grid, opts)?.data, tol)
}

/// Targeted perturbations of compatibility data.
pub mod perturb {
    use super::*;

    fn rebuild_sigma(data: &CompatibilityData, f: impl Fn(usize, &mut [f64]) + Sync) -> Result<CompatibilityData> {
        let s = data.sigma.field();
        let sigma = TensorField::from_fn(data.grid(), data.p(), s.slots().to_vec(), |node, out| {
            out.copy_from_slice(s.node(node));
            f(node, out);
        });
        CompatibilityData::new(data.metric.clone(), data.bundle.clone(), SecondFormField::new(sigma)?, data.psi.clone())
    }

    /// `σ ↦ c σ`.
    pub fn scale_sigma(data: &CompatibilityData, c: f64) -> Result<CompatibilityData> {
        rebuild_sigma(data, |_, out| out.iter_mut().for_each(|v| *v *= c))
    }

    /// Normal direction of largest `|σ|` over the chart.
    pub fn dominant_normal(data: &CompatibilityData) -> usize {
        let p = data.p();
        let s = data.sigma.field();
        let mut best = (0, -1.0);
        for a in 0..p {
            let m = (0..s.grid().node_count())
                .flat_map(|node| s.node(node).iter().skip(a).step_by(p).copied().collect::<Vec<_>>())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if m > best.1 {
                best = (a, m);
            }
        }
        best.0
    }

    /// `σ ↦ σ + ε g ⊗ e_a` along the dominant normal direction.
    pub fn umbilic_sigma(data: &CompatibilityData, eps: f64) -> Result<CompatibilityData> {
        let a = dominant_normal(data);
        let (n, p) = (data.n(), data.p());
        rebuild_sigma(data, |node, out| {
            let g = data.metric.field().node(node);
            for ij in 0..n * n {
                out[ij * p + a] += eps * g[ij];
            }
        })
    }

    /// `u^0_0 ↦ u^0_0 + ε·r(x)` with `r = 1` or `r = x_0` (linear ramp),
    /// with `U` updated to stay adjoint.
    pub fn shift_u(data: &CompatibilityData, eps: f64, ramp: bool) -> Result<CompatibilityData> {
        let grid = data.grid();
        let (n, p) = (data.n(), data.p());
        let du = |node: usize| {
            let r = if ramp { grid.coords(node)[0] } else { 1.0 };
            let mut m = DMatrix::zeros(p, n);
            m[(0, 0)] = eps * r;
            m
        };
        let write = |m: DMatrix<f64>, out: &mut [f64]| out.copy_from_slice(m.transpose().as_slice());
        let u =
            TensorField::from_fn(grid, p, data.psi.u().slots().to_vec(), |node, out| write(data.psi.u_at(node) + du(node), out));
        let big_u = TensorField::from_fn(grid, p, data.psi.big_u().slots().to_vec(), |node, out| {
            let ginv = data.metric.inverse_at(node).unwrap_or_else(|_| DMatrix::identity(n, n));
            write(data.psi.big_u_at(node) + ginv * du(node).transpose(), out)
        });
        let psi = ProductStructureField::new(data.psi.f().clone(), u, big_u, data.psi.lambda().clone())?;
        CompatibilityData::new(data.metric.clone(), data.bundle.clone(), data.sigma.clone(), psi)
    }

    /// `ω_0 ↦ ω_0 + ε (x_1 − c) J`, `J` the rotation generator of `(e_1, e_2)`
    /// and `c` the middle of axis 1. Needs `n ≥ 2`, `p ≥ 2`.
    pub fn twist_omega(data: &CompatibilityData, eps: f64) -> Result<CompatibilityData> {
        let grid = data.grid();
        let (n, p) = (data.n(), data.p());
        if n < 2 || p < 2 {
            return Err(Error::Parameter("ω perturbation needs n ≥ 2 and p ≥ 2".into()));
        }
        let mid = grid.origin()[1] + 0.5 * grid.extent(1);
        let omega = TensorField::from_fn(grid, p, data.bundle.field().slots().to_vec(), |node, out| {
            out.copy_from_slice(data.bundle.field().node(node));
            let c = eps * (grid.coords(node)[1] - mid);
            out[1] -= c;
            out[p] += c;
        });
        CompatibilityData::new(data.metric.clone(), BundleData::new(omega)?, data.sigma.clone(), data.psi.clone())
    }

    /// `f ↦ c f`.
    pub fn scale_f(data: &CompatibilityData, c: f64) -> Result<CompatibilityData> {
        let f = data.psi.f();
        let scaled = f.with_values(f.values().iter().map(|v| v * c).collect())?;
        let psi = ProductStructureField::new(scaled, data.psi.u().clone(), data.psi.big_u().clone(), data.psi.lambda().clone())?;
        CompatibilityData::new(data.metric.clone(), data.bundle.clone(), data.sigma.clone(), psi)
    }

    /// `u ↦ −u`, `U ↦ −U`.
    pub fn negate_u(data: &CompatibilityData) -> Result<CompatibilityData> {
        let neg = |t: &TensorField| t.with_values(t.values().iter().map(|v| -v).collect());
        let psi = ProductStructureField::new(
            data.psi.f().clone(),
            neg(data.psi.u())?,
            neg(data.psi.big_u())?,
            data.psi.lambda().clone(),
        )?;
        CompatibilityData::new(data.metric.clone(), data.bundle.clone(), data.sigma.clone(), psi)
    }

    /// `λ ↦ λ + ε x_0 · id`.
    pub fn ramp_lambda(data: &CompatibilityData, eps: f64) -> Result<CompatibilityData> {
        let grid = data.grid();
        let p = data.p();
        let l = TensorField::from_fn(grid, p, data.psi.lambda().slots().to_vec(), |node, out| {
            out.copy_from_slice(data.psi.lambda().node(node));
            for a in 0..p {
                out[a * p + a] += eps * grid.coords(node)[0];
            }
        });
        let psi = ProductStructureField::new(data.psi.f().clone(), data.psi.u().clone(), data.psi.big_u().clone(), l)?;
        CompatibilityData::new(data.metric.clone(), data.bundle.clone(), data.sigma.clone(), psi)
    }

    /// Adds an arbitrary skew field to `ω`, built per node from `skew(node, μ)`.
    pub fn add_omega(data: &CompatibilityData, skew: impl Fn(usize, usize) -> DMatrix<f64> + Sync) -> Result<CompatibilityData> {
        let (n, p) = (data.n(), data.p());
        let omega = TensorField::from_fn(data.grid(), p, data.bundle.field().slots().to_vec(), |node, out| {
            for mu in 0..n {
                let w = data.bundle.omega(node, mu) + skew(node, mu);
                out[mu * p * p..(mu + 1) * p * p].copy_from_slice(w.transpose().as_slice());
            }
        });
        CompatibilityData::new(data.metric.clone(), BundleData::new(omega)?, data.sigma.clone(), data.psi.clone())
    }
}
