//! Extract, reconstruct and align the product surface against its own points,
//! at two resolutions.

use sxh::extract::{default_grid, extract, ExtractOptions, FixtureSpec};
use sxh::pipeline::roundtrip_alignment;
use sxh::reconstruct::ReconstructOptions;
use sxh::structure::Tolerances;

fn main() -> sxh::Result<()> {
    let spec = FixtureSpec::parse("F3:warp=0.2,twist=0.5")?;
    let imm = spec.build()?;
    for level in 0..2 {
        let grid = default_grid(imm.as_ref(), level)?;
        let ext = extract(imm.as_ref(), &grid, &ExtractOptions { twist: spec.twist(), ..Default::default() })?;
        let (block, c) = roundtrip_alignment(&ext, &ext.data, &ReconstructOptions::default(), &Tolerances::default())?;
        println!(
            "{:?} nodes: aligned distance {:.3e}, Lorentz defect {:.1e}, k = {}, all residuals pass: {}",
            grid.dims(),
            c.residual,
            c.lorentz_defect,
            block.k,
            block.passed()
        );
    }
    Ok(())
}
