use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn exitgrid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exitgrid"))
        .current_dir(dir)
        .args(args)
        .arg("--quiet")
        .env("EXITGRID_THREADS", "2")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn bench_eik64_two_rows_with_decreasing_error() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "b.toml", "[bench]\nnames = [\"EIK64\"]\nresolutions = [81, 161]\n");
    let out = exitgrid(tmp.path(), &["bench", "--config", "b.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("o/convergence.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "name,n,linf,l1,sweeps");
    assert_eq!(rows.len(), 3);
    let err = |r: &str| r.split(',').nth(2).unwrap().parse::<f64>().unwrap();
    assert!(err(rows[2]) < err(rows[1]));
    assert!(tmp.path().join("o/run.log").exists());
}

#[test]
fn solve_exa_field_rows_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "s.toml", "[problem]\nbuiltin = \"EXA\"\n[output]\nbinary = true\n");
    let a = exitgrid(tmp.path(), &["solve", "--config", "s.toml", "--grid", "201,171", "--out", "a"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let csv = fs::read_to_string(tmp.path().join("a/field.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 34371);
    assert_eq!(csv.lines().next(), Some("x1,x2,value,status"));
    let b = exitgrid(tmp.path(), &["solve", "--config", "s.toml", "--grid", "201,171", "--out", "b"]);
    assert_eq!(b.status.code(), Some(0));
    for f in ["field.csv", "field.exgf", "residuals.json"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f} differs");
    }
    let bin = fs::read(tmp.path().join("a/field.exgf")).unwrap();
    assert_eq!(&bin[..4], b"EXGF");
}

#[test]
fn diagnose_exa_origin() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "d.toml",
        "seed = 5\n[problem]\nbuiltin = \"EXA\"\n[grid]\nn = [201, 171]\n[diagnose]\npoints = [[0.0, 0.0]]\nsamples = 2\n",
    );
    let out = exitgrid(tmp.path(), &["diagnose", "--config", "d.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/report.json")).unwrap()).unwrap();
    let pts = report["points"].as_array().unwrap();
    assert_eq!(pts.len(), 3);
    let origin = &pts[0];
    assert_eq!(origin["hypograph_differentiable"], true);
    let dir: Vec<f64> = origin["direction"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(dir[0].abs() < 0.1 && dir[1] < -0.99 && dir[2].abs() < 0.1, "{dir:?}");
    assert!(report["sigma_v_inf"]["flagged"].as_u64().unwrap() > 0);
    let masks = fs::read_to_string(tmp.path().join("o/masks.csv")).unwrap();
    assert!(masks.starts_with("x1,x2,sigma_v,sigma_v_inf\n"));
}

#[test]
fn extremal_and_synthesize_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "e.toml",
        "[problem]\nbuiltin = \"EIK64\"\n[grid]\nn = [81, 81]\n[extremal]\npoints = [[1.0, 0.0]]\nduration = 0.5\n\
         [synthesize]\npoints = [[1.5, 0.0]]\n",
    );
    let out = exitgrid(tmp.path(), &["extremal", "--config", "e.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let arc = fs::read_to_string(tmp.path().join("o/arc_0.csv")).unwrap();
    assert!(arc.starts_with("t,y1,y2,p1,p2,u_index,H_residual,degenerate\n"));
    assert_eq!(arc.lines().count(), 1 + 501);
    let out = exitgrid(tmp.path(), &["synthesize", "--config", "e.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/synthesize.json")).unwrap()).unwrap();
    let cost = rep["points"][0]["branches"][0]["cost"].as_f64().unwrap();
    assert!((cost - 0.5).abs() < 0.02, "{cost}");
}

#[test]
fn sweep_writes_polylines() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "w.toml", "[problem]\nbuiltin = \"RGEN\"\n[grid]\nn = [101, 86]\n");
    let out = exitgrid(tmp.path(), &["sweep", "--config", "w.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("o/sweep.csv")).unwrap();
    assert!(csv.starts_with("curve,vertex,x1,x2\n"));
    assert!(csv.lines().count() > 2);
    assert!(tmp.path().join("o/sweep.gp").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // Unknown identifier in an expression: validation.
    write(
        tmp.path(),
        "bad.toml",
        "[problem]\nd = 1\nm = 1\nf = [\"u1 + zz\"]\nr = \"1\"\ng = \"0\"\nh = \"x1\"\ncontrols = [[1.0]]\ndomain = [[-1.0, 1.0]]\n\
         constants = { N = 1.0, r0 = 1.0, G = 0.0, rho0 = 0.1 }\n[grid]\nn = [11]\n",
    );
    assert_eq!(exitgrid(tmp.path(), &["solve", "--config", "bad.toml"]).status.code(), Some(2));
    write(tmp.path(), "unk.toml", "[problem]\nbuiltin = \"NOPE\"\n[grid]\nn = [11, 11]\n");
    assert_eq!(exitgrid(tmp.path(), &["solve", "--config", "unk.toml"]).status.code(), Some(2));
    assert_eq!(exitgrid(tmp.path(), &["solve", "--config", "missing.toml"]).status.code(), Some(2));
    // Grid that misses the target: numerical.
    write(tmp.path(), "far.toml", "[problem]\nbuiltin = \"EIK64\"\ndomain = [[1.5, 2.0], [1.5, 2.0]]\n[grid]\nn = [11, 11]\n");
    assert_eq!(exitgrid(tmp.path(), &["solve", "--config", "far.toml"]).status.code(), Some(3));
    // A tangential boundary point goes to the horizontal integrator.
    write(tmp.path(), "ok.toml", "[problem]\nbuiltin = \"EXA\"\n[extremal]\npoints = [[1.0, 0.0]]\n");
    assert_eq!(exitgrid(tmp.path(), &["extremal", "--config", "ok.toml"]).status.code(), Some(0));
}
