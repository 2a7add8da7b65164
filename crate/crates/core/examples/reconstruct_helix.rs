//! Integrate helix data back into a curve in S¹ × H¹ and write it as CSV.

use sxh::extract::{default_grid, extract, ExtractOptions, FixtureSpec};
use sxh::io;
use sxh::reconstruct::{reconstruct, ReconstructOptions};
use sxh::structure::Tolerances;

fn main() -> sxh::Result<()> {
    let imm = FixtureSpec::new("F1").with("a", 0.6).with("b", 0.8).build()?;
    let grid = default_grid(imm.as_ref(), 0)?;
    let ext = extract(imm.as_ref(), &grid, &ExtractOptions::default())?;
    let rec = reconstruct(&ext.data, &ReconstructOptions::default(), &Tolerances::default())?;

    for r in &rec.report.residuals {
        println!("{:<22} {:.3e}  (threshold {:.1e})", r.name, r.max, r.threshold);
    }
    let csv = io::mesh_csv(&rec.immersion);
    for line in csv.lines().take(4) {
        println!("{line}");
    }
    let out = std::env::temp_dir().join("helix.csv");
    io::save_mesh(&out, &rec.immersion)?;
    println!("wrote {} rows to {}", rec.immersion.points.len(), out.display());
    Ok(())
}
