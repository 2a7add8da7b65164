//! Sample a fixture's hypothesis data and run every compatibility check on it,
//! then on a deliberately broken copy.

use sxh::extract::{default_grid, extract, perturb, ExtractOptions, FixtureSpec};
use sxh::io::Report;
use sxh::pipeline::full_check;
use sxh::structure::Tolerances;

fn main() -> sxh::Result<()> {
    let spec = FixtureSpec::parse(&std::env::args().nth(1).unwrap_or_else(|| "F4".into()))?;
    let imm = spec.build()?;
    let grid = default_grid(imm.as_ref(), 0)?;
    let ext = extract(imm.as_ref(), &grid, &ExtractOptions { twist: spec.twist(), ..Default::default() })?;
    println!("{} on {:?} nodes, n = {}, p = {}", ext.name, grid.dims(), ext.data.n(), ext.data.p());

    let tol = Tolerances::default();
    let checks = full_check(&ext.data, &tol)?;
    print!("{}", Report::new(Some(ext.name.clone()), &checks).summary());
    println!("all passed: {}\n", checks.passed());

    let broken = perturb::ramp_lambda(&ext.data, 1e-2)?;
    let checks = full_check(&broken, &tol)?;
    println!("after ramping λ by 1e-2: failing {:?}", checks.failures());
    Ok(())
}
