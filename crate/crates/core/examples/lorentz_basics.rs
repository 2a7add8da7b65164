//! Minkowski products, Lorentz frames and the product structure of S^k × H^m.

use nalgebra::DVector;
use sxh::lorentz::{gram_defect, lorentz_orthonormalize, minkowski_dot, normal_fields, ProductPoint, ProductSplit};

fn main() -> sxh::Result<()> {
    let x = DVector::from_vec(vec![1.0, 2.0, 0.5, 3.0]);
    let y = DVector::from_vec(vec![-1.0, 0.0, 2.0, 1.0]);
    println!("<x,y> = {}", minkowski_dot(&x, &y)?);

    let vectors: Vec<_> =
        (0..4).map(|j| DVector::from_fn(4, |i, _| if i == j { 1.0 } else { 0.1 * (i + 2 * j) as f64 })).collect();
    let frame = lorentz_orthonormalize(&vectors)?;
    println!("orthonormalized frame, |GᵀηG − η| = {:.2e}", frame.gram_defect());

    let split = ProductSplit::new(2, 1)?;
    let (theta, t) = (0.8f64, 0.4f64);
    let point =
        ProductPoint::new(DVector::from_vec(vec![theta.sin(), 0.0, theta.cos()]), DVector::from_vec(vec![t.sinh(), t.cosh()]))?;
    let ambient = point.ambient();
    let coords: Vec<String> = ambient.iter().map(|v| format!("{v:.4}")).collect();
    println!("point ({})  product defect {:.1e}", coords.join(", "), split.product_defect(&ambient));

    let (xi1, xi2) = normal_fields(&point)?;
    println!(
        "<ξ₁,ξ₁> = {:.3}, <ξ₂,ξ₂> = {:.3}, <ξ₁,ξ₂> = {:.3}",
        minkowski_dot(&xi1, &xi1)?,
        minkowski_dot(&xi2, &xi2)?,
        minkowski_dot(&xi1, &xi2)?
    );

    let psi = split.psi_matrix();
    println!(
        "ψ̄ is an isometric involution: |ψ̄² − I| = {:.1e}, |ψ̄ᵀηψ̄ − η| = {:.1e}",
        (&psi * &psi - nalgebra::DMatrix::identity(5, 5)).amax(),
        gram_defect(&psi)
    );
    Ok(())
}
