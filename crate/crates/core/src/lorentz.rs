//! Minkowski linear algebra and the ambient geometry of `S^k × H^m`.
//!
//! All vectors live in `R^N_1` with signature `(+, …, +, −)`: the timelike
//! coordinate is always the last one. The product `S^k × H^m` sits inside
//! `R^{k+1} × R^{m+1}_1 = R^{k+m+2}_1`, sphere block first.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stencil;

/// A vector of `R^N_1`, timelike entry last.
pub type LorentzVector = DVector<f64>;

/// Default tolerance for the tangency preconditions, relative to `|v|`.
pub const TANGENCY_TOL: f64 = 1e-8;

/// `η = diag(1, …, 1, −1)`.
pub fn eta(dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(dim, dim);
    m[(dim - 1, dim - 1)] = -1.0;
    m
}

/// Lorentzian product `x¹y¹ + … + x^{N−1}y^{N−1} − x^N y^N`.
pub fn minkowski_dot(x: &LorentzVector, y: &LorentzVector) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::Dimension { expected: 2, got: x.len() });
    }
    Ok(mdot(x, y))
}

#[inline]
pub(crate) fn mdot(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n - 1 {
        s += x[i] * y[i];
    }
    s - x[n - 1] * y[n - 1]
}

/// Block split of the ambient space: `k+1` sphere coordinates followed by
/// `m+1` hyperboloid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProductSplit {
    pub k: usize,
    pub m: usize,
}

impl ProductSplit {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::Parameter(format!("sphere and hyperboloid dimensions must be ≥ 1 (k={k}, m={m})")));
        }
        Ok(Self { k, m })
    }

    /// Ambient dimension `k + m + 2`.
    pub fn dim(&self) -> usize {
        self.k + self.m + 2
    }

    /// Extended product structure: identity on the sphere block, minus the
    /// identity on the hyperboloid block.
    pub fn psi(&self, v: &LorentzVector) -> LorentzVector {
        let mut w = v.clone();
        for i in self.k + 1..w.len() {
            w[i] = -w[i];
        }
        w
    }

    pub fn psi_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| match (i == j, i <= self.k) {
            (true, true) => 1.0,
            (true, false) => -1.0,
            _ => 0.0,
        })
    }

    /// `(ξ₁, ξ₂)` for an ambient position; sums to the position bit-exactly.
    pub fn split_position(&self, x: &LorentzVector) -> (LorentzVector, LorentzVector) {
        let mut xi1 = x.clone();
        let mut xi2 = x.clone();
        for i in 0..x.len() {
            if i <= self.k {
                xi2[i] = 0.0;
            } else {
                xi1[i] = 0.0;
            }
        }
        (xi1, xi2)
    }

    /// Largest violation among `|x|² − 1`, `⟨y,y⟩₁ + 1` and positivity of the
    /// hyperboloid's last coordinate (reported as the negative part).
    pub fn product_defect(&self, x: &LorentzVector) -> f64 {
        let s: f64 = (0..=self.k).map(|i| x[i] * x[i]).sum();
        let d = self.dim();
        let mut h = -x[d - 1] * x[d - 1];
        for i in self.k + 1..d - 1 {
            h += x[i] * x[i];
        }
        let pos = if x[d - 1] > 0.0 { 0.0 } else { 1.0 - x[d - 1] };
        (s - 1.0).abs().max((h + 1.0).abs()).max(pos)
    }

    /// Removes the `ξ₁`, `ξ₂` components of `v` at position `x`.
    pub fn project_tangent(&self, x: &LorentzVector, v: &LorentzVector) -> LorentzVector {
        let (xi1, xi2) = self.split_position(x);
        v - &xi1 * mdot(v, &xi1) + &xi2 * mdot(v, &xi2)
    }
}

/// A point of `S^k × H^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPoint {
    sphere: DVector<f64>,
    hyper: DVector<f64>,
}

impl ProductPoint {
    /// Builds a point, checking both constraints and the sheet condition.
    pub fn new(sphere: DVector<f64>, hyper: DVector<f64>) -> Result<Self> {
        let p = Self::from_parts_unchecked(sphere, hyper)?;
        p.check(TANGENCY_TOL)?;
        Ok(p)
    }

    pub fn from_parts_unchecked(sphere: DVector<f64>, hyper: DVector<f64>) -> Result<Self> {
        if sphere.len() < 2 || hyper.len() < 2 {
            return Err(Error::Dimension { expected: 2, got: sphere.len().min(hyper.len()) });
        }
        Ok(Self { sphere, hyper })
    }

    pub fn from_ambient(x: &LorentzVector, k: usize) -> Result<Self> {
        if x.len() < k + 3 {
            return Err(Error::Dimension { expected: k + 3, got: x.len() });
        }
        let sphere = x.rows(0, k + 1).into_owned();
        let hyper = x.rows(k + 1, x.len() - k - 1).into_owned();
        Self::new(sphere, hyper)
    }

    pub fn split(&self) -> ProductSplit {
        ProductSplit { k: self.sphere.len() - 1, m: self.hyper.len() - 1 }
    }

    pub fn sphere_part(&self) -> &DVector<f64> {
        &self.sphere
    }

    pub fn hyper_part(&self) -> &DVector<f64> {
        &self.hyper
    }

    pub fn ambient(&self) -> LorentzVector {
        let k1 = self.sphere.len();
        DVector::from_fn(k1 + self.hyper.len(), |i, _| if i < k1 { self.sphere[i] } else { self.hyper[i - k1] })
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        let defect = self.split().product_defect(&self.ambient());
        if defect > tol {
            return Err(Error::Constraint { what: "point is off S^k × H^m".into(), defect });
        }
        Ok(())
    }
}

/// Applies the extended product structure `ψ̄` at `point`.
pub fn ambient_psi(point: &ProductPoint, v: &LorentzVector) -> LorentzVector {
    point.split().psi(v)
}

/// The unit normals `(ξ₁, ξ₂)` of the product inside `R^N_1`.
pub fn normal_fields(point: &ProductPoint) -> Result<(LorentzVector, LorentzVector)> {
    point.check(TANGENCY_TOL)?;
    Ok(point.split().split_position(&point.ambient()))
}

fn check_tangent(point: &ProductPoint, v: &LorentzVector, tol: f64, name: &str) -> Result<()> {
    let x = point.ambient();
    if v.len() != x.len() {
        return Err(Error::Dimension { expected: x.len(), got: v.len() });
    }
    let (xi1, xi2) = point.split().split_position(&x);
    let scale = v.norm().max(f64::MIN_POSITIVE);
    let defect = mdot(v, &xi1).abs().max(mdot(v, &xi2).abs());
    if defect > tol * scale {
        return Err(Error::Constraint { what: format!("{name} is not tangent to the product"), defect });
    }
    Ok(())
}

/// Curvature `R̄(X,Y)Z` of `S^k × H^m` expressed through `ψ̄`.
pub fn ambient_curvature(point: &ProductPoint, x: &LorentzVector, y: &LorentzVector, z: &LorentzVector) -> Result<LorentzVector> {
    ambient_curvature_tol(point, x, y, z, TANGENCY_TOL)
}

pub fn ambient_curvature_tol(
    point: &ProductPoint,
    x: &LorentzVector,
    y: &LorentzVector,
    z: &LorentzVector,
    tol: f64,
) -> Result<LorentzVector> {
    check_tangent(point, x, tol, "X")?;
    check_tangent(point, y, tol, "Y")?;
    check_tangent(point, z, tol, "Z")?;
    let split = point.split();
    let px = split.psi(x);
    let py = split.psi(y);
    Ok((x * mdot(&py, z) + &px * mdot(y, z) - y * mdot(&px, z) - &py * mdot(x, z)) * 0.5)
}

/// Residuals of the flat/Levi-Civita relation along a sampled curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectionRelation {
    /// Flat derivative of the field against its tangential part plus the
    /// `ξ₁`, `ξ₂` corrections.
    pub connection: f64,
    /// Flat derivative of `ξ₁` against `½(X + ψ̄X)`.
    pub sphere_normal: f64,
    /// Flat derivative of `ξ₂` against `½(X − ψ̄X)`.
    pub hyper_normal: f64,
}

impl ConnectionRelation {
    pub fn max(&self) -> f64 {
        self.connection.max(self.sphere_normal).max(self.hyper_normal)
    }
}

/// Checks the flat-connection versus Levi-Civita relation on curve samples
/// `curve[i]` (uniform parameter step `h`) carrying tangent fields `field[i]`.
///
/// Derivatives along the curve use second-order central differences with
/// one-sided ends; the Levi-Civita derivative is the tangential projection of
/// the flat one.
pub fn ambient_connection_relation_residual(
    split: ProductSplit,
    curve: &[LorentzVector],
    field: &[LorentzVector],
    h: f64,
) -> Result<ConnectionRelation> {
    if curve.len() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 curve samples, got {}", curve.len())));
    }
    if field.len() != curve.len() {
        return Err(Error::Dimension { expected: curve.len(), got: field.len() });
    }
    let d = split.dim();
    let flat = |vs: &[LorentzVector]| -> Vec<f64> { vs.iter().flat_map(|v| v.iter().copied()).collect() };
    let vel = stencil::differentiate_line(&flat(curve), d, h);
    let dfield = stencil::differentiate_line(&flat(field), d, h);
    let (xi1s, xi2s): (Vec<_>, Vec<_>) = curve.iter().map(|c| split.split_position(c)).unzip();
    let dxi1 = stencil::differentiate_line(&flat(&xi1s), d, h);
    let dxi2 = stencil::differentiate_line(&flat(&xi2s), d, h);

    let at = |buf: &[f64], i: usize| DVector::from_column_slice(&buf[i * d..(i + 1) * d]);
    let mut out = ConnectionRelation { connection: 0.0, sphere_normal: 0.0, hyper_normal: 0.0 };
    for i in 0..curve.len() {
        let x = at(&vel, i);
        let px = split.psi(&x);
        let y = &field[i];
        let d0y = at(&dfield, i);
        let dbar = split.project_tangent(&curve[i], &d0y);
        let rel = &d0y - &dbar + &xi1s[i] * (0.5 * mdot(&(&x + &px), y)) - &xi2s[i] * (0.5 * mdot(&(&x - &px), y));
        out.connection = out.connection.max(rel.amax());
        out.sphere_normal = out.sphere_normal.max((at(&dxi1, i) - (&x + &px) * 0.5).amax());
        out.hyper_normal = out.hyper_normal.max((at(&dxi2, i) - (&x - &px) * 0.5).amax());
    }
    Ok(out)
}

/// A Lorentz-orthonormal basis of `R^N_1` stored as matrix columns, the
/// timelike column last.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientFrame {
    columns: DMatrix<f64>,
}

impl AmbientFrame {
    /// Accepts `m` if `mᵀ η m = η` to `tol`.
    pub fn new(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !m.is_square() || m.nrows() < 2 {
            return Err(Error::Dimension { expected: m.nrows(), got: m.ncols() });
        }
        let frame = Self { columns: m };
        let defect = frame.gram_defect();
        if defect > tol {
            return Err(Error::Constraint { what: "frame is not Lorentz-orthonormal".into(), defect });
        }
        Ok(frame)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.columns
    }

    /// `max |Gᵀ η G − η|`.
    pub fn gram_defect(&self) -> f64 {
        gram_defect(&self.columns)
    }
}

pub fn gram_defect(m: &DMatrix<f64>) -> f64 {
    let e = eta(m.nrows());
    (m.transpose() * &e * m - e).amax()
}

const DEGENERACY_TOL: f64 = 1e-10;

/// Minkowski Gram–Schmidt on a family of vectors (two classical passes).
///
/// Spacelike vectors are kept in input order; a single timelike vector is
/// pivoted to the end. Returns the orthonormal vectors and their signs.
pub fn orthonormalize_family(vectors: &[LorentzVector]) -> Result<Vec<(LorentzVector, f64)>> {
    let mut out: Vec<(LorentzVector, f64)> = Vec::with_capacity(vectors.len());
    let mut timelike: Option<usize> = None;

    let reduce = |v: &LorentzVector, basis: &[(LorentzVector, f64)]| -> LorentzVector {
        let mut w = v.clone();
        for _ in 0..2 {
            for (e, s) in basis {
                w -= e * (s * mdot(&w, e));
            }
        }
        w
    };

    for (i, v) in vectors.iter().enumerate() {
        if i > 0 && v.len() != vectors[0].len() {
            return Err(Error::Dimension { expected: vectors[0].len(), got: v.len() });
        }
        let w = reduce(v, &out);
        let q = mdot(&w, &w);
        let scale = v.norm_squared().max(f64::MIN_POSITIVE);
        if q.abs() <= DEGENERACY_TOL * scale {
            return Err(Error::Degenerate { index: i, reason: "null or dependent vector".into() });
        }
        if q < 0.0 {
            if timelike.is_some() {
                return Err(Error::Degenerate { index: i, reason: "more than one timelike direction".into() });
            }
            timelike = Some(i);
            continue;
        }
        out.push((w / q.sqrt(), 1.0));
    }

    if let Some(i) = timelike {
        let v = &vectors[i];
        let w = reduce(v, &out);
        let q = mdot(&w, &w);
        if q >= -DEGENERACY_TOL * v.norm_squared() {
            return Err(Error::Degenerate { index: i, reason: "timelike candidate became null".into() });
        }
        out.push((w / (-q).sqrt(), -1.0));
    }
    Ok(out)
}

/// Orthonormalizes `N` vectors of `R^N_1` into an [`AmbientFrame`].
pub fn lorentz_orthonormalize(vectors: &[LorentzVector]) -> Result<AmbientFrame> {
    let n = vectors.first().map(|v| v.len()).unwrap_or(0);
    if vectors.len() != n || n < 2 {
        return Err(Error::Dimension { expected: n, got: vectors.len() });
    }
    let basis = orthonormalize_family(vectors)?;
    if basis.last().map(|b| b.1) != Some(-1.0) {
        return Err(Error::Degenerate { index: n - 1, reason: "no timelike direction".into() });
    }
    let cols: Vec<_> = basis.into_iter().map(|(v, _)| v).collect();
    let m = DMatrix::from_columns(&cols);
    AmbientFrame::new(m, 1e-12)
        .map_err(|_| Error::Degenerate { index: n - 1, reason: "input too ill-conditioned for an orthonormal frame".into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn minkowski_dot_examples() {
        assert_eq!(minkowski_dot(&dvector![1.0, 0.0, 0.0, 0.0], &dvector![1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(minkowski_dot(&dvector![0.0, 0.0, 0.0, 1.0], &dvector![0.0, 0.0, 0.0, 1.0]).unwrap(), -1.0);
        assert_eq!(minkowski_dot(&dvector![1.0, 1.0, 0.0, 1.0], &dvector![0.0, 1.0, 0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(minkowski_dot(&dvector![1.0, 0.0], &dvector![1.0, 0.0, 0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn psi_flips_hyperbolic_block() {
        let p = ProductPoint::new(dvector![1.0, 0.0], dvector![0.0, 1.0]).unwrap();
        let v = dvector![0.0, 2.0, 3.0, 0.0];
        assert_eq!(ambient_psi(&p, &v), dvector![0.0, 2.0, -3.0, 0.0]);
        let (xi1, xi2) = normal_fields(&p).unwrap();
        assert_eq!(xi1, dvector![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(xi2, dvector![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(ambient_psi(&p, &xi1), xi1);
        assert_eq!(ambient_psi(&p, &ambient_psi(&p, &v)), v);
        assert_eq!(mdot(&xi1, &xi2), 0.0);
    }

    #[test]
    fn off_product_point_is_rejected() {
        assert!(ProductPoint::new(dvector![1.0, 0.1], dvector![0.0, 1.0]).is_err());
        assert!(ProductPoint::new(dvector![1.0, 0.0], dvector![0.0, -1.0]).is_err());
        let p = ProductPoint::from_parts_unchecked(dvector![0.9, 0.0], dvector![0.0, 1.0]).unwrap();
        assert!(matches!(normal_fields(&p), Err(Error::Constraint { .. })));
    }

    #[test]
    fn curvature_of_the_factors() {
        // S²×H² at ((1,0,0),(0,0,1)); sphere tangents e1,e2; hyperbolic tangents e3,e4.
        let p = ProductPoint::new(dvector![1.0, 0.0, 0.0], dvector![0.0, 0.0, 1.0]).unwrap();
        let e = |i: usize| DVector::from_fn(6, |j, _| if i == j { 1.0 } else { 0.0 });
        let r = ambient_curvature(&p, &e(1), &e(2), &e(2)).unwrap();
        assert!((r - e(1)).amax() < 1e-15);
        let r = ambient_curvature(&p, &e(3), &e(4), &e(4)).unwrap();
        assert!((r + e(3)).amax() < 1e-15);
        let r = ambient_curvature(&p, &e(1), &e(3), &e(3)).unwrap();
        assert!(r.amax() < 1e-15);
        assert!(ambient_curvature(&p, &e(0), &e(3), &e(3)).is_err());
    }

    #[test]
    fn orthonormalize_examples() {
        let id: Vec<_> = (0..4).map(|i| DVector::from_fn(4, |j, _| if i == j { 1.0 } else { 0.0 })).collect();
        let f = lorentz_orthonormalize(&id).unwrap();
        assert!((f.matrix() - DMatrix::identity(4, 4)).amax() < 1e-15);

        let vs = vec![
            dvector![1.0, 1.0, 0.0, 0.0],
            dvector![0.0, 1.0, 0.0, 0.0],
            dvector![0.0, 0.0, 1.0, 0.0],
            dvector![0.0, 0.0, 0.0, 1.0],
        ];
        let f = lorentz_orthonormalize(&vs).unwrap();
        assert!(f.gram_defect() < 1e-12);
        assert_eq!(f.matrix().column(3).into_owned(), vs[3]);

        let null = vec![
            dvector![1.0, 0.0, 0.0, 1.0],
            dvector![0.0, 1.0, 0.0, 0.0],
            dvector![0.0, 0.0, 1.0, 0.0],
            dvector![0.0, 0.0, 0.0, 1.0],
        ];
        assert!(matches!(lorentz_orthonormalize(&null), Err(Error::Degenerate { index: 0, .. })));
    }

    #[test]
    fn timelike_vector_is_pivoted_last() {
        let vs = vec![
            dvector![0.0, 0.0, 0.2, 1.0],
            dvector![1.0, 0.0, 0.0, 0.0],
            dvector![0.0, 1.0, 0.0, 0.0],
            dvector![0.0, 0.0, 1.0, 0.0],
        ];
        let f = lorentz_orthonormalize(&vs).unwrap();
        assert!(f.gram_defect() < 1e-12);
        assert!(f.matrix()[(3, 3)].abs() > 0.9);
    }

    #[test]
    fn connection_relation_on_constant_curve_vanishes() {
        let split = ProductSplit::new(1, 1).unwrap();
        let c = dvector![1.0, 0.0, 0.0, 1.0];
        let y = dvector![0.0, 1.0, 0.0, 0.0];
        let r = ambient_connection_relation_residual(split, &[c.clone(), c.clone(), c.clone()], &[y.clone(), y.clone(), y], 0.1)
            .unwrap();
        assert_eq!(r.max(), 0.0);
        assert!(matches!(
            ambient_connection_relation_residual(split, &[c.clone(), c.clone()], &[c.clone(), c], 0.1),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn connection_relation_on_great_circle_is_second_order() {
        // Great circle in S² × {apex of H¹}.
        let split = ProductSplit::new(2, 1).unwrap();
        let run = |h: f64, mixed: bool| {
            let n = (1.0 / h).round() as usize + 1;
            let curve: Vec<_> = (0..n)
                .map(|i| {
                    let t = i as f64 * h;
                    dvector![t.cos(), t.sin(), 0.0, 0.0, 1.0]
                })
                .collect();
            let field: Vec<_> = (0..n)
                .map(|i| {
                    let t = i as f64 * h;
                    let (c, s) = if mixed { ((2.0 * t).cos(), (2.0 * t).sin()) } else { (1.0, 0.0) };
                    dvector![-c * t.sin(), c * t.cos(), s, 0.0, 0.0]
                })
                .collect();
            ambient_connection_relation_residual(split, &curve, &field, h).unwrap().max()
        };
        // Unit tangent: the differencing errors cancel between the two sides.
        assert!(run(0.02, false) < 1e-3);
        let (e1, e2) = (run(0.02, true), run(0.01, true));
        assert!(e1 < 1e-2 && e1 > 1e-8, "{e1}");
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }
}
