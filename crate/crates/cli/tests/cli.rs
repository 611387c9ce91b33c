use std::process::Command;

fn relaylab() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_relaylab"));
    cmd.env_remove("RELAYLAB_SEED");
    cmd
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let out = cmd.output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn data_rows(text: &str) -> Vec<String> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn header_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(&format!("# {key}: ")))
}

#[test]
fn timing_rows() {
    let (code, out, _) = run(relaylab().args(["timing", "--k", "7"]));
    assert_eq!(code, 0);
    assert_eq!(data_rows(&out), ["protocol,K,symbols", "P1,7,15", "P2,7,8", "P3,7,3"]);
}

#[test]
fn manifest_header_precedes_data() {
    let (_, out, _) = run(relaylab().args(["averages", "--k", "7"]));
    let first = out.lines().next().unwrap();
    assert_eq!(first, "# experiment: averages");
    assert_eq!(header_value(&out, "seed"), Some("42"));
    assert_eq!(header_value(&out, "param.k"), Some("7"));
    assert!(header_value(&out, "digest").unwrap().starts_with("sha256:"));
    assert_eq!(data_rows(&out)[0], "protocol,K,average_esnr");
}

#[test]
fn esnr_schema_and_repeatability() {
    let args = [
        "esnr",
        "--protocol",
        "P3",
        "--k",
        "7",
        "--sh2",
        "0.9",
        "--sg2",
        "0.9",
        "--trials",
        "20000",
        "--seed",
        "42",
    ];
    let (code, a, _) = run(relaylab().args(args));
    let (_, b, _) = run(relaylab().args(args));
    assert_eq!(code, 0);
    assert_eq!(a, b);
    let rows = data_rows(&a);
    assert_eq!(
        rows[0],
        "protocol,K,sigma_h_est,sigma_g_est,method,esnr,ci95,trials,seed"
    );
    assert!(rows[1].starts_with("P3,7,") && rows[1].contains(",analytic,"));
    assert!(rows[2].contains(",monte_carlo,") && rows[2].ends_with(",20000,42"));
}

#[test]
fn seed_comes_from_environment_unless_flagged() {
    let (_, out, _) = run(relaylab().env("RELAYLAB_SEED", "7").args(["timing"]));
    assert_eq!(header_value(&out, "seed"), Some("7"));
    let (_, out, _) = run(relaylab().env("RELAYLAB_SEED", "7").args(["timing", "--seed", "9"]));
    assert_eq!(header_value(&out, "seed"), Some("9"));
    let (code, _, err) = run(relaylab().env("RELAYLAB_SEED", "x").args(["timing"]));
    assert_eq!(code, 2);
    assert!(err.contains("RELAYLAB_SEED"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        "# capacity run\nk = 5\nbackward.est = 0.5\nforward.est = 0.9\ntrials = 10000\nseed = 11\n",
    )
    .unwrap();
    let (code, out, err) = run(relaylab()
        .args(["capacity", "--protocol", "P1", "--config"])
        .arg(&cfg)
        .args(["--k", "6"]));
    assert_eq!(code, 0, "{err}");
    assert_eq!(header_value(&out, "param.k"), Some("6"));
    assert_eq!(header_value(&out, "param.backward.est"), Some("0.5"));
    assert_eq!(header_value(&out, "seed"), Some("11"));
    let rows = data_rows(&out);
    assert_eq!(
        rows[0],
        "protocol,K,sigma_h_est,sigma_g_est,sigma_n2,capacity,ci95,trials,seed"
    );
    assert!(rows[1].starts_with("P1,6,5.0000000000000000e-1,9.0000000000000002e-1,"));
}

#[test]
fn unknown_config_key_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "k = 7\nbackwards.est = 0.5\n").unwrap();
    let (code, out, err) = run(relaylab().args(["timing", "--config"]).arg(&cfg));
    assert_eq!(code, 2);
    assert!(out.is_empty());
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("kind=invalid_argument") && err.contains("backwards.est"));
}

#[test]
fn exit_codes() {
    let (code, _, err) = run(relaylab().args(["esnr", "--k", "seven"]));
    assert_eq!(code, 2);
    assert!(err.starts_with("relaylab: error kind=invalid_argument exit=2"));
    let (code, _, _) = run(relaylab().args(["frobnicate"]));
    assert_eq!(code, 2);
    let (code, _, err) = run(relaylab().args(["esnr", "--sh2", "0", "--trials", "100"]));
    assert_eq!(code, 3);
    assert!(err.contains("kind=degenerate_estimation"));
    let (code, _, _) = run(relaylab().args(["table2", "--trials", "10"]));
    assert_eq!(code, 2);
    let (code, _, err) = run(relaylab().args(["timing", "--output", "/nonexistent-dir/x.csv"]));
    assert_eq!(code, 1);
    assert!(err.contains("kind=io"));
    let (code, out, _) = run(relaylab().args(["--help"]));
    assert_eq!(code, 0);
    assert!(out.contains("table2"));
}

#[test]
fn json_output_and_file_target() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mimo.json");
    let (code, out, _) = run(relaylab()
        .args([
            "mimo",
            "--n",
            "2",
            "--trials",
            "5000",
            "--scheme",
            "S2",
            "--analytic",
            "--format",
            "json",
            "--output",
        ])
        .arg(&path));
    assert_eq!(code, 0);
    assert!(out.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"experiment\": \"mimo\""));
    assert!(text.contains("\"scheme\": \"S2\"") && text.contains("\"scheme\": \"S2_analytic\""));
}

#[test]
fn workers_do_not_change_output() {
    let base = [
        "figures",
        "--n",
        "1,3",
        "--values",
        "0.5",
        "--trials",
        "8000",
        "--chunk-size",
        "500",
    ];
    let (_, one, _) = run(relaylab().args(base).args(["--workers", "1"]));
    let (_, many, _) = run(relaylab().args(base).args(["--workers", "4"]));
    assert_eq!(one, many);
    assert_eq!(data_rows(&one).len(), 1 + 2 * 2 * 3);
}
