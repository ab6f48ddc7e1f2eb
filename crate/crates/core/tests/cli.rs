use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_uwlink");

fn scenario(name: &str) -> String {
    format!("{}/scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = Command::new(BIN)
        .args([
            "run",
            "--scenario",
            &scenario("single_point_115200.json"),
            "--out",
        ])
        .arg(&out)
        .arg("--dump-waveforms")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for f in [
        "report.json",
        "report.csv",
        "timeline.jsonl",
        "energy_node0.csv",
        "energy_node1.csv",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let energy = std::fs::read_to_string(out.join("energy_node1.csv")).unwrap();
    assert!(energy.starts_with("mode,gating,duration_s\n"));
    let waves: Vec<_> = std::fs::read_dir(out.join("waveforms")).unwrap().collect();
    assert!(!waves.is_empty());
    let first = waves[0].as_ref().unwrap().path();
    assert!(std::fs::read_to_string(first)
        .unwrap()
        .starts_with("time_s,volts\n"));
}

#[test]
fn seed_override_is_applied() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let st = Command::new(BIN)
            .args([
                "run",
                "--scenario",
                &scenario("single_point_115200.json"),
                "--seed",
                seed,
                "--out",
            ])
            .arg(&out)
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read_to_string(out.join("report.json")).unwrap()
    };
    assert_eq!(run("5", "a"), run("5", "b"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"slaves": [{"address": "01 02 03"}]}"#).unwrap();
    let st = Command::new(BIN)
        .args(["run", "--scenario"])
        .arg(&bad)
        .args(["--out"])
        .arg(dir.path().join("o"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));

    std::fs::write(&bad, r#"{"duration_s": 0.01, "poll_schedule": [{"time_s": 1.0, "target": "01 02 03 04 05 06"}]}"#).unwrap();
    let o = Command::new(BIN)
        .args(["run", "--scenario"])
        .arg(&bad)
        .args(["--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("poll_schedule"));

    let st = Command::new(BIN)
        .args([
            "ber-sweep",
            "--ebn0",
            "5",
            "--rate",
            "1200",
            "--out",
            "x.csv",
        ])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn ber_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ber.csv");
    let st = Command::new(BIN)
        .args([
            "ber-sweep",
            "--ebn0",
            "0,4",
            "--bits",
            "20000",
            "--rate",
            "4800",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let mut rd = csv::Reader::from_path(Path::new(&out)).unwrap();
    assert_eq!(
        rd.headers().unwrap().iter().collect::<Vec<_>>(),
        [
            "ebn0_db",
            "bits",
            "errors",
            "measured_ber",
            "theoretical_ber"
        ]
    );
    let rows: Vec<_> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let ber0: f64 = rows[0][3].parse().unwrap();
    let ber4: f64 = rows[1][3].parse().unwrap();
    assert!(ber0 > ber4 && (ber0 - 0.5 * (-1f64).exp()).abs() < 0.01);
}
