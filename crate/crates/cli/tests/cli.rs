use std::path::Path;
use std::process::Command;

fn ofoh(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ofoh"))
        .args(args)
        .env("OFOH_THREADS", "1")
        .output()
        .expect("run ofoh")
}

fn out_arg(dir: &Path) -> String {
    dir.display().to_string()
}

#[test]
fn config_errors_exit_2_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "# comment\nseed=3\nattention=tanh\n").unwrap();
    let o = ofoh(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", &out_arg(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("softmax") && err.contains("sparsemax"), "{err}");
}

#[test]
fn unknown_flag_value_is_a_config_error() {
    let o = ofoh(&["eval", "--attention", "tanh"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_prerequisites_exit_3_and_name_the_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path());
    let o = ofoh(&["train-dem1", "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataset"));

    let cfg = tmp.path().join("tiny.cfg");
    std::fs::write(&cfg, "n_ids=8\nimgs_per_id=4\nn_cameras=2\n").unwrap();
    let c = cfg.to_str().unwrap();
    let o = ofoh(&["gen-data", "--config", c, "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("config.resolved").exists());
    assert!(tmp.path().join("data").join("index.tsv").exists());

    let o = ofoh(&["train-dem2", "--config", c, "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("DEM1 checkpoint"));
    let o = ofoh(&["eval", "--config", c, "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn flags_override_file_and_are_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "n_ids=8\nimgs_per_id=4\nn_cameras=2\nlambda_div=0.5\n").unwrap();
    let o = ofoh(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        &out_arg(tmp.path()),
        "--lambda-div",
        "0.01",
        "--mae",
        "off",
        "--cosine",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let resolved = std::fs::read_to_string(tmp.path().join("config.resolved")).unwrap();
    assert!(resolved.contains("lambda_div=0.01\n"), "{resolved}");
    assert!(resolved.contains("mae=off\n"));
    assert!(resolved.contains("cosine=on\n"));
}
