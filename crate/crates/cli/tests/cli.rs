use std::path::Path;
use std::process::{Command, Output};

fn qahsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qahsim"))
        .args(args)
        .env_remove("QAHSIM_OUT")
        .output()
        .expect("binary runs")
}

fn config_path(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut String)) -> String {
    let mut text = std::fs::read_to_string(config_path("weak_noise.json")).unwrap();
    edit(&mut text);
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn small_sse(text: &mut String) {
    *text = text
        .replace("\"n\": 15", "\"n\": 7")
        .replace("\"n_configs\": 5000", "\"n_configs\": 200")
        .replace("\"mode\": \"oracle\"", "\"mode\": \"sse\"")
        .replace("\"classify_texture_n\": 61", "\"classify_texture_n\": 21")
        .replace("\"ep_grid_n\": 64", "\"ep_grid_n\": 16");
}

#[test]
fn texture_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = qahsim(&[
        "texture",
        "--config",
        &config_path("weak_noise.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("phase: Stable"), "{stdout}");
    for f in ["texture.csv", "dbis.json", "summary.json", "timing.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", small_sse);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = qahsim(&[
            "texture",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--workers",
            workers,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["texture.csv", "dbis.json", "summary.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn seed_and_mode_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", small_sse);
    let out = dir.path().join("o");
    let o = qahsim(&[
        "texture",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "99",
        "--mode",
        "oracle",
    ]);
    assert!(o.status.success());
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 99"));
    assert!(summary.contains("\"mode\": \"oracle\""));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qahsim"))
        .args(["transitions"])
        .env("QAHSIM_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("transitions.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("name,phase,n_e"));
    assert!(csv.contains("type_I,type_i,0"), "{csv}");
    assert!(csv.contains("type_II,type_ii,1"), "{csv}");
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", |t| *t = t.replace("\"n\": 15", "\"n\": 1"));
    let o = qahsim(&["texture", "--config", &bad, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.n"));

    let unknown = write_config(dir.path(), "unknown.json", |t| {
        *t = t.replacen('{', "{\"bogus\": 1,", 1)
    });
    assert_eq!(qahsim(&["texture", "--config", &unknown]).status.code(), Some(1));
    assert_eq!(
        qahsim(&["texture", "--config", "/nonexistent.json"]).status.code(),
        Some(1)
    );
}

#[test]
fn chern_subcommand() {
    let o = qahsim(&["chern", "--mz", "1.2"]);
    assert!(o.status.success());
    assert_eq!(
        String::from_utf8_lossy(&o.stdout).trim().parse::<i32>().unwrap().abs(),
        1
    );
    assert_eq!(
        String::from_utf8_lossy(&qahsim(&["chern", "--mz", "-5"]).stdout).trim(),
        "0"
    );
    // Gap closes at mz = 0 on the sampled lattice.
    assert_eq!(qahsim(&["chern", "--mz", "0"]).status.code(), Some(2));
}

#[test]
fn failed_cells_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // A single noisy trajectory per cell is not fittable by the mode model.
    let cfg = write_config(dir.path(), "partial.json", |t| {
        small_sse(t);
        *t = t
            .replace("\"n_configs\": 200", "\"n_configs\": 1")
            .replace("\"wx\": 0.05", "\"wx\": 1.5")
            .replace("\"wy\": 0.0", "\"wy\": 0.7")
            .replace("\"wz\": 0.01", "\"wz\": 0.4");
    });
    let out = dir.path().join("p");
    let o = qahsim(&["texture", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("summary.json").is_file());
}
