//! Small inconsistencies in σ, u or ω each trip their own integrability
//! condition, and a forced reconstruction shows them as loop holonomy.

use sxh::extract::{default_grid, extract, perturb, ExtractOptions, FixtureSpec};
use sxh::pipeline::full_check;
use sxh::reconstruct::{reconstruct, ReconstructOptions};
use sxh::structure::{CompatibilityData, Tolerances};

fn main() -> sxh::Result<()> {
    let imm = FixtureSpec::new("F3").build()?;
    let grid = default_grid(imm.as_ref(), 0)?;
    let ext = extract(imm.as_ref(), &grid, &ExtractOptions::default())?;
    let tol = Tolerances::default();
    let forced = ReconstructOptions { force: true, ..Default::default() };
    let holonomy =
        |d: &CompatibilityData| -> sxh::Result<f64> { Ok(reconstruct(d, &forced, &tol)?.report.max("path_independence")) };

    let eps = 1e-2;
    println!("unperturbed: path independence {:.2e}", holonomy(&ext.data)?);
    let cases = [
        ("σ + ε g e_a", perturb::umbilic_sigma(&ext.data, eps)?),
        ("u + ε", perturb::shift_u(&ext.data, eps, false)?),
        ("ω + ε x J", perturb::twist_omega(&ext.data, eps)?),
    ];
    for (what, data) in &cases {
        let r = full_check(data, &tol)?;
        println!("{what:<12} failing {:?}  path independence {:.2e}", r.failures(), holonomy(data)?);
    }
    Ok(())
}
