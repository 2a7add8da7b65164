//! Christoffel symbols and curvature from a sampled metric: the round sphere
//! and the hyperbolic plane in polar-type charts, at two resolutions.

use nalgebra::DMatrix;
use sxh::fields::{christoffel, curvature_tensor, MetricField};
use sxh::grid::ChartGrid;

fn gauss_curvature_error(nodes: usize, sign: f64) -> sxh::Result<f64> {
    let (lo, hi) = (0.5, 2.5);
    let h = (hi - lo) / (nodes - 1) as f64;
    let grid = ChartGrid::new(vec![nodes, nodes], vec![h, 1.0 / (nodes - 1) as f64], vec![lo, 0.0])?;
    let g = MetricField::from_fn(&grid, |x| {
        let r = if sign > 0.0 { x[0].sin() } else { x[0].sinh() };
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, r * r]))
    })?;
    let riemann = curvature_tensor(&g)?;
    let mut worst = 0.0f64;
    for node in 0..grid.node_count() {
        let m = g.at(node);
        let r = riemann.node(node);
        let r_0101: f64 = (0..2).map(|rho| m[(0, rho)] * r[((rho * 2 + 1) * 2) * 2 + 1]).sum();
        worst = worst.max((r_0101 / m.determinant() - sign).abs());
    }
    Ok(worst)
}

fn main() -> sxh::Result<()> {
    for (name, sign) in [("sphere", 1.0), ("hyperbolic plane", -1.0)] {
        let coarse = gauss_curvature_error(33, sign)?;
        let fine = gauss_curvature_error(65, sign)?;
        println!("{name:<17} max |K − ({sign:+})|: {coarse:.3e} -> {fine:.3e}  (ratio {:.2})", coarse / fine);
    }

    let grid = ChartGrid::new(vec![9, 9], vec![0.1, 0.1], vec![0.5, 0.0])?;
    let g = MetricField::from_fn(&grid, |x| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, x[0].sin().powi(2)]))?;
    let gamma = christoffel(&g)?;
    let node = grid.index(&[4, 4]);
    let theta = grid.coords(node)[0];
    println!("Γ^0_11 at θ = {theta:.2}: {:.6} (exact {:.6})", gamma.get(node, 0, 1, 1), -theta.sin() * theta.cos());
    Ok(())
}
