use std::path::Path;
use std::process::{Command, Output};

fn regkernel(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regkernel")).args(args).current_dir(dir).env_remove("REGKERNEL_WORKERS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn enumerate_lists_all_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let o = regkernel(&["enumerate", "4", "2"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("# 90 matrices\n4 2\n"));
    assert_eq!(text.matches("4 2\n").count(), 90);
    let o = regkernel(&["enumerate", "7", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn decompose_golden_vector_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    // floors to (3, 2, 3, 1, 3, 2, -2) / 6
    std::fs::write(dir.path().join("y.csv"), "re,im\n0.5,0\n0.34,0\n0.5,0\n0.17,0\n0.5,0\n0.34,0\n-0.33,0\n").unwrap();
    let o = regkernel(&["decompose", "y.csv", "6", "2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let parts: Vec<(String, u64, u64, Vec<u64>)> = v["parts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| {
            let mut idx: Vec<u64> = p["levels"].as_array().unwrap().iter().flat_map(|l| l["indices"].as_array().unwrap().iter().map(|i| i.as_u64().unwrap())).collect();
            idx.sort();
            (p["kind"].as_str().unwrap().to_lowercase(), p["order"].as_u64().unwrap(), p["height"].as_u64().unwrap(), idx)
        })
        .collect();
    assert_eq!(
        parts,
        vec![("spread".into(), 0, 3, vec![1, 4, 7]), ("regular".into(), 0, 1, vec![2]), ("regular".into(), 1, 2, vec![3, 5, 6])]
    );
    let o = regkernel(&["decompose", "missing.csv", "6", "2"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn validate_reports_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ok.cfg"), "kind = delocalization\nn = 500\nd = 20\nconst.p_scale = 1\n").unwrap();
    let o = regkernel(&["validate", "ok.cfg"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["kind"], "delocalization");
    std::fs::write(dir.path().join("bad.cfg"), "kind = cover\nbogus = 1\n").unwrap();
    assert_eq!(regkernel(&["validate", "bad.cfg"], dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("window.cfg"), "kind = uniformity\nn = 7\nd = 2\n").unwrap();
    assert_eq!(regkernel(&["validate", "window.cfg"], dir.path()).status.code(), Some(2));
}

#[test]
fn run_writes_reports_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("fuzz.cfg"), "kind = ell-fuzz\nn = 200\nd = 3\ntrials = 10\nseed = 7\nout_dir = out\n").unwrap();
    let o = regkernel(&["run", "fuzz.cfg"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let trials = std::fs::read(out.join("trials.csv")).unwrap();
    let summary = std::fs::read(out.join("summary.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema"], "regkernel.manifest/1");
    assert_eq!(manifest["status"], "ok");
    assert_eq!(String::from_utf8_lossy(&trials).lines().count(), 11);

    let o = Command::new(env!("CARGO_BIN_EXE_regkernel")).args(["run", "fuzz.cfg"]).current_dir(dir.path()).env("REGKERNEL_WORKERS", "1").output().unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read(out.join("trials.csv")).unwrap(), trials);
    assert_eq!(std::fs::read(out.join("summary.json")).unwrap(), summary);
}

#[test]
fn bad_worker_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["0", "many"] {
        let o = Command::new(env!("CARGO_BIN_EXE_regkernel")).args(["enumerate", "3", "1"]).current_dir(dir.path()).env("REGKERNEL_WORKERS", bad).output().unwrap();
        assert_eq!(o.status.code(), Some(2), "{bad}");
    }
}
