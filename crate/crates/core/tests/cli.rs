use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use sxh::extract::perturb;
use sxh::io::{self, Dataset, Report};
use sxh::structure::{ProductStructureField, Tolerances};

fn sxh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sxh")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Scratch(tempfile::TempDir);

impl Scratch {
    fn new() -> Self {
        Self(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_owned()
    }

    fn extract(&self, fixture: &str, name: &str) -> PathBuf {
        let out = sxh(&["extract", "--fixture", fixture, "-o", &self.s(name)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        self.path(name)
    }
}

fn report(path: &Path) -> Report {
    io::load_json(path).unwrap()
}

fn failing(r: &Report) -> Vec<String> {
    let rec = r.reconstruction.iter().flat_map(|b| &b.residuals);
    r.checks.iter().chain(rec).filter(|c| !c.pass).map(|c| c.name.clone()).collect()
}

fn rewrite(
    path: &Path,
    name: &str,
    f: impl Fn(&sxh::structure::CompatibilityData) -> sxh::structure::CompatibilityData,
) -> PathBuf {
    let ds = io::load_dataset(path).unwrap();
    let changed = Dataset::from_data(&f(&ds.to_data().unwrap()), &ds.tolerances, ds.source.clone());
    let out = path.with_file_name(name);
    io::save_json(&out, &changed).unwrap();
    out
}

#[test]
fn extract_and_check_f1() {
    let dir = Scratch::new();
    let ds = dir.extract("F1", "f1.json");
    let data = io::load_dataset(&ds).unwrap();
    assert_eq!(data.n, 1);
    assert_eq!(data.grid.dims(), &[200]);
    assert!(data.fields.metric.iter().all(|g| (g - 1.0).abs() <= 1e-12));
    let out = sxh(&["check", ds.to_str().unwrap(), "--report", &dir.s("r.json")]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("gauss"));
    let r = report(&dir.path("r.json"));
    assert!(r.passed && r.checks.iter().any(|c| c.name == "flatness"));
}

#[test]
fn latitude_second_form_is_cot_theta() {
    let dir = Scratch::new();
    let ds = io::load_dataset(&dir.extract("F2", "f2.json")).unwrap();
    let max = ds.fields.sigma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((max - (std::f64::consts::FRAC_PI_3).tan().recip()).abs() <= 1e-10, "{max}");
}

fn negate_u_alone(d: &sxh::structure::CompatibilityData) -> sxh::structure::CompatibilityData {
    let u = d.psi.u();
    let neg = u.with_values(u.values().iter().map(|v| -v).collect()).unwrap();
    let psi = ProductStructureField::new(d.psi.f().clone(), neg, d.psi.big_u().clone(), d.psi.lambda().clone()).unwrap();
    sxh::structure::CompatibilityData::new(d.metric.clone(), d.bundle.clone(), d.sigma.clone(), psi).unwrap()
}

#[test]
fn negated_u_fails_check() {
    let dir = Scratch::new();
    let bad = rewrite(&dir.extract("F1", "f1.json"), "neg.json", negate_u_alone);
    let out = sxh(&["check", bad.to_str().unwrap(), "--report", &dir.s("r.json")]);
    assert_eq!(code(&out), 1);
    let fails = failing(&report(&dir.path("r.json")));
    assert!(fails.iter().any(|f| f == "psi_adjoint"), "{fails:?}");
}

#[test]
fn negating_u_and_big_u_together_is_a_reflection() {
    let dir = Scratch::new();
    let flipped = rewrite(&dir.extract("F1", "f1.json"), "neg.json", |d| perturb::negate_u(d).unwrap());
    assert_eq!(code(&sxh(&["check", flipped.to_str().unwrap()])), 0);
    assert_eq!(code(&sxh(&["reconstruct", flipped.to_str().unwrap()])), 0);
}

#[test]
fn shifted_u_flags_codazzi() {
    let dir = Scratch::new();
    let bad = rewrite(&dir.extract("F3", "f3.json"), "shift.json", |d| perturb::shift_u(d, 1e-2, false).unwrap());
    let out = sxh(&["check", bad.to_str().unwrap(), "--report", &dir.s("r.json")]);
    assert_eq!(code(&out), 1);
    assert!(failing(&report(&dir.path("r.json"))).contains(&"codazzi".to_string()));
}

#[test]
fn scaled_f_flags_involution() {
    let dir = Scratch::new();
    let bad = rewrite(&dir.extract("F2", "f2.json"), "f.json", |d| perturb::scale_f(d, 1.01).unwrap());
    let out = sxh(&["check", bad.to_str().unwrap(), "--report", &dir.s("r.json")]);
    assert_eq!(code(&out), 1);
    let r = report(&dir.path("r.json"));
    let inv = r.checks.iter().find(|c| c.name == "psi_involution_tangent").unwrap();
    assert!(!inv.pass && (inv.max - 0.0201).abs() <= 1e-3, "{}", inv.max);
}

#[test]
fn input_errors_exit_2() {
    let dir = Scratch::new();
    std::fs::write(dir.path("empty.json"), "").unwrap();
    let out = sxh(&["check", &dir.s("empty.json")]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).starts_with("error:"));

    std::fs::write(dir.path("wrong.json"), r#"{"schema": "other/1"}"#).unwrap();
    assert_eq!(code(&sxh(&["check", &dir.s("wrong.json")])), 2);
    assert_eq!(code(&sxh(&["check", &dir.s("missing.json")])), 2);

    for fixture in ["F9", "F1:c=1", "F2:theta0=4", "F3:warp=1.5"] {
        let out = sxh(&["extract", "--fixture", fixture, "-o", &dir.s("x.json")]);
        assert_eq!(code(&out), 2, "{fixture}");
    }
    assert!(!dir.path("x.json").exists());
    assert_eq!(code(&sxh(&["extract", "--fixture", "F1", "--grid", "3", "-o", &dir.s("x.json")])), 2);
    let ds = dir.extract("F1", "f1.json");
    assert_eq!(code(&sxh(&["check", ds.to_str().unwrap(), "--tol", "gauss"])), 2);
    assert_eq!(code(&sxh(&["bogus"])), 2);
}

#[test]
fn tolerance_overrides_reach_the_checks() {
    let dir = Scratch::new();
    let ds = dir.extract("F1", "f1.json");
    let out = sxh(&["check", ds.to_str().unwrap(), "--tol", "algebraic=0", "--tol", "floor=0", "--report", &dir.s("r.json")]);
    let r = report(&dir.path("r.json"));
    assert!(r.checks.iter().filter(|c| c.name == "psi_f_symmetric").all(|c| c.threshold == 0.0));
    assert_eq!(code(&out), if r.passed { 0 } else { 1 });
}

#[test]
fn reconstruct_helix_mesh() {
    let dir = Scratch::new();
    let ds = dir.extract("F1", "f1.json");
    let out = sxh(&["reconstruct", ds.to_str().unwrap(), "--mesh", &dir.s("m.csv"), "--report", &dir.s("r.json")]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let csv = std::fs::read_to_string(dir.path("m.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x1,phi1,phi2,phi3,phi4");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 200);
    for r in &rows {
        assert!((r[1] * r[1] + r[2] * r[2] - 1.0).abs() < 1e-6);
        assert!((r[3] * r[3] - r[4] * r[4] + 1.0).abs() < 1e-6);
    }
    let r = report(&dir.path("r.json"));
    let block = r.reconstruction.unwrap();
    assert_eq!(block.k, 1);
    assert!(block.residuals.iter().find(|c| c.name == "on_product").unwrap().max < 1e-6);
    assert!(block.timings.is_none());
}

#[test]
fn reconstruct_product_surface_within_budget() {
    let dir = Scratch::new();
    let ds = dir.extract("F3", "f3.json");
    let start = Instant::now();
    let out = sxh(&["reconstruct", ds.to_str().unwrap(), "--timings", "--report", &dir.s("r.json")]);
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(elapsed < 10.0, "{elapsed} s");
    let timings = report(&dir.path("r.json")).reconstruction.unwrap().timings.unwrap();
    assert!(timings.contains_key("sweep"), "{timings:?}");
}

#[test]
fn forced_reconstruction_exposes_holonomy() {
    let dir = Scratch::new();
    let bad = rewrite(&dir.extract("F3", "f3.json"), "twist.json", |d| perturb::twist_omega(d, 1e-2).unwrap());

    let out = sxh(&["reconstruct", bad.to_str().unwrap(), "--report", &dir.s("plain.json")]);
    assert_eq!(code(&out), 1);
    assert!(report(&dir.path("plain.json")).reconstruction.is_none());

    let out = sxh(&["reconstruct", bad.to_str().unwrap(), "--force", "--report", &dir.s("forced.json")]);
    assert_eq!(code(&out), 1);
    let r = report(&dir.path("forced.json"));
    let block = r.reconstruction.as_ref().unwrap();
    let holonomy = block.residuals.iter().find(|c| c.name == "path_independence").unwrap();
    assert!(!holonomy.pass && holonomy.max >= 1e-3, "{}", holonomy.max);
}

#[test]
fn roundtrips_pass() {
    let dir = Scratch::new();
    for fixture in ["F1", "F2", "F3"] {
        let out = sxh(&["roundtrip", "--fixture", fixture, "--report", &dir.s("r.json")]);
        assert_eq!(code(&out), 0, "{fixture}: {}", stdout(&out));
        let r = report(&dir.path("r.json"));
        let a = r.reconstruction.unwrap().alignment.unwrap();
        assert!(a.residual <= 1e-4, "{fixture}: {}", a.residual);
    }
}

#[test]
fn align_recovers_identity_and_seed() {
    let dir = Scratch::new();
    let ds = dir.extract("F3", "f3.json");
    let ds = ds.to_str().unwrap();
    for (name, extra) in [("a.json", vec![]), ("b.json", vec![]), ("c.json", vec!["--seed-frame", "rot=0.3"])] {
        let mut args = vec!["reconstruct", ds, "--immersion"];
        let path = dir.s(name);
        args.push(&path);
        args.extend(extra);
        assert_eq!(code(&sxh(&args)), 0);
    }
    let out = sxh(&["align", &dir.s("a.json"), &dir.s("b.json"), "--report", &dir.s("r.json")]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let t = report(&dir.path("r.json")).reconstruction.unwrap().alignment.unwrap().to_matrix();
    assert!((t - nalgebra::DMatrix::identity(6, 6)).amax() <= 1e-14);

    let out = sxh(&["align", &dir.s("a.json"), &dir.s("c.json"), "--report", &dir.s("r.json")]);
    assert_eq!(code(&out), 0);
    let t = report(&dir.path("r.json")).reconstruction.unwrap().alignment.unwrap().to_matrix();
    let q = sxh::reconstruct::SeedFrame { rotation: 0.3, boost: 0.0 }.isometry(sxh::lorentz::ProductSplit::new(2, 2).unwrap());
    assert!((t - q).amax() <= 1e-6);
}

#[test]
fn align_rejects_mismatched_sphere_dimension() {
    let dir = Scratch::new();
    let f4 = dir.extract("F4", "f4.json");
    let f3 = dir.extract("F3", "f3.json");
    for (ds, name) in [(&f4, "a.json"), (&f3, "b.json")] {
        assert_eq!(code(&sxh(&["reconstruct", ds.to_str().unwrap(), "--immersion", &dir.s(name)])), 0);
    }
    let out = sxh(&["align", &dir.s("a.json"), &dir.s("b.json")]);
    assert_ne!(code(&out), 0);
    assert!(stdout(&out).contains("sphere dimensions differ") || stderr(&out).contains("sphere dimensions differ"));
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let dir = Scratch::new();
    let ds = dir.extract("F3:warp=0.2,twist=0.5", "f3.json");
    let mut bytes = Vec::new();
    for threads in ["1", "3", "8"] {
        let path = dir.s(&format!("r{threads}.json"));
        let mesh = dir.s(&format!("m{threads}.csv"));
        let out = Command::new(env!("CARGO_BIN_EXE_sxh"))
            .env("SXH_THREADS", threads)
            .args(["reconstruct", ds.to_str().unwrap(), "--report", &path, "--mesh", &mesh])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
        bytes.push((std::fs::read(&path).unwrap(), std::fs::read(&mesh).unwrap()));
    }
    assert!(bytes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn dataset_defaults_carry_tolerances() {
    let dir = Scratch::new();
    let out = sxh(&["extract", "--fixture", "F2", "--tol", "gauss=0.5", "-o", &dir.s("f2.json")]);
    assert_eq!(code(&out), 0);
    let ds = io::load_dataset(&dir.path("f2.json")).unwrap();
    assert_eq!(ds.tolerances.differential("gauss", 0.1), 0.5);
    assert_eq!(ds.tolerances.differential("ricci", 0.1), Tolerances::default().differential("ricci", 0.1));
}
