use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use esd_cli::manifest::{Manifest, MANIFEST_FILE};

fn esd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esd"))
        .args(args)
        .env_remove("ESD_THREADS")
        .output()
        .expect("binary runs")
}

fn small_bimodal(dir: &Path) -> String {
    let out = dir.join("run");
    let text = format!(
        r#"experiment = "bimodal"
seed = 7
out_dir = "{}"

[data]
k = 300

[ode]
n_steps = 30

[sample]
n_samples = 200
y = [[1.0], [0.5]]

[label]
j = 200

[train]
epochs = 20
hidden = [16]

[eval]
n_nn_samples = 200
"#,
        out.display()
    );
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn invalid_config_exits_nonzero_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "experiment = \"bimodal\"\n[prior]\nsigma_u2 = -1.0\n").unwrap();
    let out = esd(&["validate", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("prior.sigma_u2"), "{stderr}");
}

#[test]
fn defaults_validate_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    for exp in ["bimodal", "gmm20d", "elliptic"] {
        let out = esd(&["defaults", exp]);
        assert!(out.status.success());
        let path = dir.path().join(format!("{exp}.toml"));
        fs::write(&path, &out.stdout).unwrap();
        let again = esd(&["validate", "--config", path.to_str().unwrap()]);
        assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
        assert_eq!(again.stdout, out.stdout);
    }
}

#[test]
fn staged_run_verifies_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_bimodal(dir.path());
    for stage in ["gen-data", "prior", "sample", "eval"] {
        let out = esd(&[stage, "--config", &cfg, "--quiet"]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let manifest = dir.path().join("run").join(MANIFEST_FILE);
    let m = Manifest::read(&manifest).unwrap();
    assert_eq!(m.status, "ok");
    for name in ["data.bin", "prior.json", "samples.csv", "eval.json", "kl.csv", "density_dm_y1.csv"] {
        assert!(m.outputs.contains_key(name), "{name} missing from manifest");
    }
    let ok = esd(&["verify", "--manifest", manifest.to_str().unwrap()]);
    assert!(ok.status.success());

    let kl = dir.path().join("run").join("kl.csv");
    let mut text = fs::read_to_string(&kl).unwrap();
    text.push('\n');
    fs::write(&kl, text).unwrap();
    let bad = esd(&["verify", "--manifest", manifest.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("kl.csv"));
}

#[test]
fn failed_stage_leaves_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_bimodal(dir.path());
    for stage in ["gen-data", "prior", "sample"] {
        assert!(esd(&[stage, "--config", &cfg, "--quiet"]).status.success());
    }
    // A directory where the stage's last output should go makes the write fail
    // after the density files are already written.
    let run = dir.path().join("run");
    fs::create_dir(run.join("kl.csv.partial")).unwrap();
    let out = esd(&["eval", "--config", &cfg, "--quiet"]);
    assert!(!out.status.success());
    assert!(run.join("density_dm_y0.csv.partial").exists());
    assert!(!run.join("density_dm_y0.csv").exists());
    assert!(!run.join("eval.json").exists());
    let m = Manifest::read(&run.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.status, "failed: eval");
    assert!(!m.outputs.contains_key("kl.csv"));
}

#[test]
fn threads_do_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_bimodal(dir.path());
    let mut hashes = Vec::new();
    for threads in ["1", "4"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let out = esd(&[
            "run",
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
            "--threads",
            threads,
            "--quiet",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        hashes.push(Manifest::read(&out_dir.join(MANIFEST_FILE)).unwrap().hashes());
    }
    assert_eq!(hashes[0], hashes[1]);
}
