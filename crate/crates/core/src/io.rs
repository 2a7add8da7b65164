//! Dataset, report and immersion files, and CSV mesh export.
//!
//! All files are JSON with a `schema` tag. Arrays are node-major and
//! row-major within a node, timelike ambient coordinate last. Writes go to
//! a sibling temporary file that is renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{BundleData, MetricField, SecondFormField};
use crate::grid::{ChartGrid, Slot, TensorField};
use crate::reconstruct::{Congruence, ImmersionField, Reconstruction};
use crate::structure::{CompatibilityData, ProductStructureField, Residual, ResidualReport, Tolerances};

pub const DATASET_SCHEMA: &str = "sxh/dataset/1";
pub const REPORT_SCHEMA: &str = "sxh/report/1";
pub const IMMERSION_SCHEMA: &str = "sxh/immersion/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFields {
    pub metric: Vec<f64>,
    pub bundle_connection: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(rename = "psi.f")]
    pub psi_f: Vec<f64>,
    #[serde(rename = "psi.u")]
    pub psi_u: Vec<f64>,
    #[serde(rename = "psi.U")]
    pub psi_big_u: Vec<f64>,
    #[serde(rename = "psi.lambda")]
    pub psi_lambda: Vec<f64>,
}

/// Hypothesis data on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: String,
    pub n: usize,
    pub p: usize,
    pub grid: ChartGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub fields: DatasetFields,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl Dataset {
    pub fn from_data(data: &CompatibilityData, tolerances: &Tolerances, source: Option<String>) -> Self {
        let v = |t: &TensorField| t.values().to_vec();
        Self {
            schema: DATASET_SCHEMA.into(),
            n: data.n(),
            p: data.p(),
            grid: data.grid().clone(),
            source,
            fields: DatasetFields {
                metric: v(data.metric.field()),
                bundle_connection: v(data.bundle.field()),
                sigma: v(data.sigma.field()),
                psi_f: v(data.psi.f()),
                psi_u: v(data.psi.u()),
                psi_big_u: v(data.psi.big_u()),
                psi_lambda: v(data.psi.lambda()),
            },
            tolerances: tolerances.clone(),
        }
    }

    /// Validates the header and every load-time invariant.
    pub fn to_data(&self) -> Result<CompatibilityData> {
        if self.schema != DATASET_SCHEMA {
            return Err(Error::Schema(format!("expected schema {DATASET_SCHEMA}, found `{}`", self.schema)));
        }
        let g = &self.grid;
        let grid = ChartGrid::new(g.dims().to_vec(), g.spacing().to_vec(), g.origin().to_vec())?;
        if grid.n() != self.n {
            return Err(Error::Schema(format!("header n = {} but the grid has {} axes", self.n, grid.n())));
        }
        let p = self.p;
        let field = |name: &str, slots: Vec<Slot>, values: &[f64]| -> Result<TensorField> {
            let per: usize = slots.iter().map(|s| s.dim(self.n, p)).product();
            let rank = if name == "metric" { 0 } else { p };
            let expected = per * grid.node_count();
            if values.len() != expected {
                return Err(Error::Schema(format!("field {name} has {} values, expected {expected}", values.len())));
            }
            TensorField::new(grid.clone(), rank, slots, values.to_vec())
        };
        use Slot::*;
        let f = &self.fields;
        let metric = MetricField::new(field("metric", vec![TangentDown, TangentDown], &f.metric)?)?;
        let bundle = BundleData::new(field("bundle_connection", vec![TangentDown, BundleUp, BundleDown], &f.bundle_connection)?)?;
        let sigma = SecondFormField::new(field("sigma", vec![TangentDown, TangentDown, BundleUp], &f.sigma)?)?;
        let psi = ProductStructureField::new(
            field("psi.f", vec![TangentUp, TangentDown], &f.psi_f)?,
            field("psi.u", vec![BundleUp, TangentDown], &f.psi_u)?,
            field("psi.U", vec![TangentUp, BundleDown], &f.psi_big_u)?,
            field("psi.lambda", vec![BundleUp, BundleDown], &f.psi_lambda)?,
        )?;
        CompatibilityData::new(metric, bundle, sigma, psi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionBlock {
    pub k: usize,
    pub base: usize,
    pub residuals: Vec<Residual>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Congruence>,
    /// Seconds per stage; present only when requested, so reports stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

impl ReconstructionBlock {
    pub fn new(rec: &Reconstruction, timings: bool) -> Self {
        Self {
            k: rec.immersion.k,
            base: rec.base,
            residuals: rec.report.residuals.clone(),
            warnings: rec.report.warnings.clone(),
            alignment: None,
            timings: timings.then(|| rec.timings.iter().cloned().collect()),
        }
    }

    pub fn passed(&self) -> bool {
        self.residuals.iter().all(|r| r.pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub passed: bool,
    pub checks: Vec<Residual>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<ReconstructionBlock>,
}

impl Report {
    pub fn new(source: Option<String>, checks: &ResidualReport) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            source,
            passed: checks.passed(),
            checks: checks.residuals.clone(),
            warnings: checks.warnings.clone(),
            reconstruction: None,
        }
    }

    /// One line per record, for terminals.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let mut line = |r: &Residual| {
            out.push_str(&format!(
                "{:<5} {:<24} max {:.3e}  mean {:.3e}  at {:>6}  threshold {:.3e}\n",
                if r.pass { "ok" } else { "FAIL" },
                r.name,
                r.max,
                r.mean,
                r.argmax,
                r.threshold
            ));
        };
        self.checks.iter().for_each(&mut line);
        if let Some(rec) = &self.reconstruction {
            rec.residuals.iter().for_each(&mut line);
        }
        for w in self.warnings.iter().chain(self.reconstruction.iter().flat_map(|r| &r.warnings)) {
            out.push_str(&format!("warn  {w}\n"));
        }
        if let Some(a) = self.reconstruction.as_ref().and_then(|r| r.alignment.as_ref()) {
            out.push_str(&format!(
                "align residual {:.3e}  lorentz defect {:.3e}  commutation defect {:.3e}\n",
                a.residual, a.lorentz_defect, a.commutation_defect
            ));
        }
        out
    }
}

/// Reconstructed immersion plus the base-node map `Ψ` needed for alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImmersionFile {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub immersion: ImmersionField,
    /// Row-major `N × N`.
    pub base_map: Vec<f64>,
}

impl ImmersionFile {
    pub fn new(rec: &Reconstruction, source: Option<String>) -> Self {
        Self {
            schema: IMMERSION_SCHEMA.into(),
            source,
            immersion: rec.immersion.clone(),
            base_map: rec.base_map.transpose().as_slice().to_vec(),
        }
    }

    pub fn base_map(&self) -> Result<DMatrix<f64>> {
        if self.schema != IMMERSION_SCHEMA {
            return Err(Error::Schema(format!("expected schema {IMMERSION_SCHEMA}, found `{}`", self.schema)));
        }
        let d = self.immersion.split().dim();
        if self.base_map.len() != d * d || self.immersion.points.iter().any(|x| x.len() != d) {
            return Err(Error::Schema("immersion arrays do not match the ambient dimension".into()));
        }
        if self.immersion.points.len() != self.immersion.grid.node_count() || self.immersion.base >= self.immersion.points.len() {
            return Err(Error::Schema("immersion point count does not match the grid".into()));
        }
        Ok(DMatrix::from_row_slice(d, d, &self.base_map))
    }
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Parameter(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let d: Dataset = load_json(path)?;
    if d.schema != DATASET_SCHEMA {
        return Err(Error::Schema(format!("expected schema {DATASET_SCHEMA}, found `{}`", d.schema)));
    }
    Ok(d)
}

/// CSV rows: chart coordinates, then the ambient coordinates.
pub fn mesh_csv(imm: &ImmersionField) -> String {
    let n = imm.grid.n();
    let d = imm.split().dim();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend((1..=d).map(|i| format!("phi{i}")));
    let mut out = header.join(",");
    out.push('\n');
    for (node, p) in imm.points.iter().enumerate() {
        let row: Vec<String> = imm.grid.coords(node).iter().chain(p).map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn save_mesh(path: &Path, imm: &ImmersionField) -> Result<()> {
    write_atomic(path, mesh_csv(imm).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{default_grid, extract, ExtractOptions, Helix};

    fn helix_data() -> CompatibilityData {
        let imm = Helix { a: 0.6, b: 0.8 };
        extract(&imm, &default_grid(&imm, 0).unwrap(), &ExtractOptions::default()).unwrap().data
    }

    #[test]
    fn dataset_roundtrip_is_bit_identical() {
        let ds = Dataset::from_data(&helix_data(), &Tolerances::default(), Some("F1".into()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        save_json(&path, &ds).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.fields.psi_u), bits(&ds.fields.psi_u));
        assert_eq!(back.to_data().unwrap(), helix_data());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn inconsistent_lengths_are_schema_errors() {
        let mut ds = Dataset::from_data(&helix_data(), &Tolerances::default(), None);
        ds.fields.sigma.pop();
        assert!(matches!(ds.to_data(), Err(Error::Schema(_))));
        let mut ds = Dataset::from_data(&helix_data(), &Tolerances::default(), None);
        ds.schema = "other/1".into();
        assert!(matches!(ds.to_data(), Err(Error::Schema(_))));
    }

    #[test]
    fn empty_file_does_not_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        fs::write(&path, "").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Json(_))));
    }

    #[test]
    fn csv_layout() {
        let grid = ChartGrid::cube(1, 5, 0.0, 1.0).unwrap();
        let imm = ImmersionField { grid, k: 1, base: 0, points: vec![vec![1.0, 0.0, 0.0, 1.0]; 5] };
        let csv = mesh_csv(&imm);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x1,phi1,phi2,phi3,phi4");
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[2].split(',').count(), 5);
    }
}
