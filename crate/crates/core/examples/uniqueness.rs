//! Two reconstructions from different initial frames differ by an ambient
//! isometry commuting with the product structure; `align_congruence` finds it.

use sxh::extract::{default_grid, extract, ExtractOptions, FixtureSpec};
use sxh::reconstruct::{align_congruence, reconstruct, ReconstructOptions, SeedFrame};
use sxh::structure::Tolerances;

fn main() -> sxh::Result<()> {
    let imm = FixtureSpec::new("F1").build()?;
    let grid = default_grid(imm.as_ref(), 0)?;
    let ext = extract(imm.as_ref(), &grid, &ExtractOptions::default())?;
    let tol = Tolerances::default();
    let base = reconstruct(&ext.data, &ReconstructOptions::default(), &tol)?;

    for seed in ["rot=0.3", "boost=0.5", "rot=-1.2,boost=0.2"] {
        let seed = SeedFrame::parse(seed)?;
        let other = reconstruct(&ext.data, &ReconstructOptions { seed, ..Default::default() }, &tol)?;
        let c = align_congruence(&base, &other)?;
        let err = (c.to_matrix() - seed.isometry(ext.split)).amax();
        println!(
            "{seed:?}: |T − Q| {err:.1e}  TᵀηT defect {:.1e}  [T, ψ̄] {:.1e}  max |Tφ − φ'| {:.1e}",
            c.lorentz_defect, c.commutation_defect, c.residual
        );
    }
    Ok(())
}
