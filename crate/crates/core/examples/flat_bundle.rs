//! The flat bundle of a compatible dataset: metric compatibility, flatness,
//! parallel ψ̃ and the eigenspace split that fixes the sphere dimension.

use sxh::extract::{center_node, default_grid, extract, ExtractOptions, FixtureSpec};
use sxh::flatbundle::{eigen_split, multiplicity_changes, FlatBundle};
use sxh::structure::Tolerances;

fn main() -> sxh::Result<()> {
    for name in ["F1", "F2", "F3", "F4", "F5"] {
        let imm = FixtureSpec::new(name).build()?;
        let grid = default_grid(imm.as_ref(), 0)?;
        let ext = extract(imm.as_ref(), &grid, &ExtractOptions::default())?;
        let bundle = FlatBundle::new(&ext.data)?;
        let report = bundle.check(&Tolerances::default())?;
        let node = center_node(&grid);
        let split = eigen_split(&bundle.psi, &bundle.gauge, node)?;
        println!(
            "{name}: flatness {:.2e}  metric {:.2e}  ψ̃ parallel {:.2e}  k = {} (fixture {})  spectrum {:?}  jumps {}",
            report.max("flatness"),
            report.max("metric_compatibility"),
            report.max("psi_tilde_parallel"),
            split.k,
            imm.k(),
            split.eigenvalues.iter().map(|v| format!("{v:+.3}")).collect::<Vec<_>>(),
            multiplicity_changes(&bundle.psi, &bundle.gauge, split.k),
        );
    }
    Ok(())
}
