//! End-to-end commands behind the `sxh` binary.
//!
//! Each command returns a [`Report`]; [`exit_code`] maps outcomes to the
//! stable process contract: 0 pass, 1 check failure, 2 I/O or schema error.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::extract::{default_grid, extract, grid_for, ExtractOptions, Extraction, FixtureSpec};
use crate::flatbundle::FlatBundle;
use crate::io::{self, Dataset, ImmersionFile, ReconstructionBlock, Report};
use crate::reconstruct::{align_frames, align_immersions, reconstruct, Congruence, ReconstructOptions};
use crate::structure::{check_compatibility, CompatibilityData, Residual, ResidualReport, Tolerances};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

/// Defect bound for the Lorentz and commutation properties of an alignment.
pub const ALIGN_TOL: f64 = 1e-8;

pub fn exit_code(result: &Result<Report>) -> i32 {
    match result {
        Ok(r) if r.passed => EXIT_PASS,
        Ok(_) => EXIT_FAIL,
        Err(Error::Structure(_) | Error::Exclusion { .. } | Error::Reconstruction { .. }) => EXIT_FAIL,
        Err(_) => EXIT_ERROR,
    }
}

/// Parses `64x64`-style node counts.
pub fn parse_grid(s: &str) -> Result<Vec<usize>> {
    s.split(['x', 'X', ','])
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Parameter(format!("bad grid spec `{s}`"))))
        .collect()
}

/// Applies `name=value` overrides; `algebraic`, `factor` and `floor` set the base model.
pub fn apply_tolerances(mut tol: Tolerances, overrides: &[String]) -> Result<Tolerances> {
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Parameter(format!("expected name=value, got `{o}`")))?;
        let v: f64 = v.trim().parse().map_err(|_| Error::Parameter(format!("`{v}` is not a number")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Parameter(format!("tolerance `{k}` must be finite and non-negative")));
        }
        match k.trim() {
            "algebraic" => tol.algebraic = v,
            "factor" => tol.differential_factor = v,
            "floor" => tol.floor = v,
            name => tol = tol.with_override(name, v),
        }
    }
    Ok(tol)
}

/// Structure checks followed by the flat-bundle checks.
pub fn full_check(data: &CompatibilityData, tol: &Tolerances) -> Result<ResidualReport> {
    let mut report = check_compatibility(data, tol)?;
    report.extend(FlatBundle::new(data)?.check(tol)?);
    Ok(report)
}

fn fixture_extraction(spec: &FixtureSpec, nodes: Option<&[usize]>) -> Result<Extraction> {
    let imm = spec.build()?;
    let grid = match nodes {
        Some(n) => grid_for(imm.as_ref(), n)?,
        None => default_grid(imm.as_ref(), 0)?,
    };
    extract(imm.as_ref(), &grid, &ExtractOptions { twist: spec.twist(), ..Default::default() })
}

fn spec_string(spec: &FixtureSpec) -> String {
    let params: Vec<String> = spec.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    if params.is_empty() {
        spec.name.clone()
    } else {
        format!("{}:{}", spec.name, params.join(","))
    }
}

/// Extracts a fixture's hypothesis data and writes it as a dataset.
pub fn cmd_extract(spec: &FixtureSpec, nodes: Option<&[usize]>, tol: &Tolerances, out: &Path) -> Result<Dataset> {
    let ext = fixture_extraction(spec, nodes)?;
    let ds = Dataset::from_data(&ext.data, tol, Some(spec_string(spec)));
    io::save_json(out, &ds)?;
    Ok(ds)
}

fn load(path: &Path, overrides: &[String]) -> Result<(CompatibilityData, Tolerances, Option<String>)> {
    let ds = io::load_dataset(path)?;
    let tol = apply_tolerances(ds.tolerances.clone(), overrides)?;
    Ok((ds.to_data()?, tol, ds.source))
}

/// Runs every check on a dataset.
pub fn cmd_check(dataset: &Path, overrides: &[String], report_out: Option<&Path>) -> Result<Report> {
    let (data, tol, source) = load(dataset, overrides)?;
    let report = Report::new(source, &full_check(&data, &tol)?);
    if let Some(p) = report_out {
        io::save_json(p, &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Default)]
pub struct ReconstructOutputs {
    pub mesh: Option<PathBuf>,
    pub immersion: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub timings: bool,
    /// Project points onto the product in the exported mesh.
    pub repair_mesh: bool,
}

/// Checks a dataset and, if it passes or `force` is set, reconstructs it.
pub fn cmd_reconstruct(
    dataset: &Path,
    overrides: &[String],
    opts: &ReconstructOptions,
    out: &ReconstructOutputs,
) -> Result<Report> {
    let (data, tol, source) = load(dataset, overrides)?;
    let checks = full_check(&data, &tol)?;
    let mut report = Report::new(source.clone(), &checks);
    if checks.passed() || opts.force {
        let rec = reconstruct(&data, opts, &tol)?;
        let block = ReconstructionBlock::new(&rec, out.timings);
        report.passed = checks.passed() && block.passed();
        report.reconstruction = Some(block);
        if let Some(p) = &out.mesh {
            let imm = if out.repair_mesh { rec.immersion.projected() } else { rec.immersion.clone() };
            io::save_mesh(p, &imm)?;
        }
        if let Some(p) = &out.immersion {
            io::save_json(p, &ImmersionFile::new(&rec, source))?;
        }
    }
    if let Some(p) = &out.report {
        io::save_json(p, &report)?;
    }
    Ok(report)
}

/// Aligns a reconstruction with the immersion its data was extracted from.
pub fn roundtrip_alignment(
    ext: &Extraction,
    data: &CompatibilityData,
    opts: &ReconstructOptions,
    tol: &Tolerances,
) -> Result<(ReconstructionBlock, Congruence)> {
    let rec = reconstruct(data, opts, tol)?;
    let mut block = ReconstructionBlock::new(&rec, false);
    let points: Vec<_> = (0..rec.immersion.points.len()).map(|i| rec.immersion.point(i)).collect();
    let c = align_frames(&rec.base_map, &points, &ext.ambient_frame(rec.base), &ext.points, ext.split)?;
    let h = data.grid().max_spacing();
    block.residuals.push(Residual::scalar("alignment", c.residual, tol.differential("alignment", h)));
    block.residuals.push(Residual::scalar("alignment_lorentz", c.lorentz_defect, ALIGN_TOL));
    block.residuals.push(Residual::scalar("alignment_commutation", c.commutation_defect, ALIGN_TOL));
    block.residuals.push(Residual::scalar("sphere_dimension", rec.immersion.k.abs_diff(ext.k()) as f64, 0.0));
    block.timings = None;
    Ok((block, c))
}

/// Extract, check, reconstruct and align against the fixture's own points.
pub fn cmd_roundtrip(
    spec: &FixtureSpec,
    nodes: Option<&[usize]>,
    overrides: &[String],
    opts: &ReconstructOptions,
    report_out: Option<&Path>,
) -> Result<Report> {
    let tol = apply_tolerances(Tolerances::default(), overrides)?;
    let ext = fixture_extraction(spec, nodes)?;
    let checks = full_check(&ext.data, &tol)?;
    let mut report = Report::new(Some(spec_string(spec)), &checks);
    if checks.passed() || opts.force {
        let (mut block, c) = roundtrip_alignment(&ext, &ext.data, opts, &tol)?;
        block.alignment = Some(c);
        report.passed = checks.passed() && block.passed();
        report.reconstruction = Some(block);
    }
    if let Some(p) = report_out {
        io::save_json(p, &report)?;
    }
    Ok(report)
}

/// Congruence between two stored reconstructions.
pub fn cmd_align(a: &Path, b: &Path, report_out: Option<&Path>) -> Result<(Congruence, Report)> {
    let fa: ImmersionFile = io::load_json(a)?;
    let fb: ImmersionFile = io::load_json(b)?;
    let c = align_immersions(&fa.immersion, &fa.base_map()?, &fb.immersion, &fb.base_map()?)?;
    let h = fa.immersion.grid.max_spacing();
    let residuals = vec![
        Residual::scalar("alignment_lorentz", c.lorentz_defect, ALIGN_TOL),
        Residual::scalar("alignment_commutation", c.commutation_defect, ALIGN_TOL),
        Residual::scalar("alignment", c.residual, Tolerances::default().differential("alignment", h)),
    ];
    let block = ReconstructionBlock {
        k: fa.immersion.k,
        base: fa.immersion.base,
        residuals,
        warnings: Vec::new(),
        alignment: Some(c.clone()),
        timings: None,
    };
    let mut report = Report::new(fa.source.clone(), &ResidualReport::default());
    report.passed = block.passed();
    report.reconstruction = Some(block);
    if let Some(p) = report_out {
        io::save_json(p, &report)?;
    }
    Ok((c, report))
}
