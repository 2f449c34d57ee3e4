use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn line5() -> String {
    root().join("cases/line5.json").display().to_string()
}

fn oscloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscloc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = oscloc(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_learn_localize_report() {
    let dir = tempfile::tempdir().unwrap();
    let ambient = dir.path().join("ambient.csv");
    let forced = dir.path().join("forced.csv");
    let params = dir.path().join("params.json");
    let scan = dir.path().join("scan.csv");
    let case = line5();

    ok(&["simulate", "--case", &case, "--duration", "600", "--rate", "50", "--seed", "3", "-o", s(&ambient)]);
    ok(&["learn", "--case", &case, "--traj", s(&ambient), "-o", s(&params)]);
    let learned: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&params).unwrap()).unwrap();
    let m1 = learned["inertia"]["1"].as_f64().unwrap();
    assert!((m1 - 2.0).abs() < 0.5, "{learned}");
    assert_eq!(learned["diagnostics"]["n_used"], 29999);

    ok(&[
        "simulate", "--case", &case, "--duration", "200", "--seed", "4", "--forcing",
        "source=4,freq=0.48,amp=0.5", "-o", s(&forced),
    ]);
    ok(&["localize", "--case", &case, "--params", s(&params), "--traj", s(&forced), "--top", "10", "-o", s(&scan)]);
    let text = std::fs::read_to_string(&scan).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next().unwrap(), "bus_id,k,freq_hz,loglik,gamma_hat,phi_hat");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    assert!(rows[0].starts_with("4,96,"), "{}", rows[0]);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scan.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["winner"]["bus_id"], 4);
    assert_eq!(summary["winner_group"], serde_json::json!([4]));

    let report = dir.path().join("report");
    ok(&[
        "report", "--case", &case, "--params", s(&params), "--traj", s(&forced), "--band", "0.1:1.0", "-o",
        s(&report),
    ]);
    for f in ["loglik_by_bus.csv", "spectrum.csv", "summary.json"] {
        assert!(report.join(f).exists(), "{f}");
    }
    let loglik = std::fs::read_to_string(report.join("loglik_by_bus.csv")).unwrap();
    assert!(loglik.lines().nth(1).unwrap().starts_with("k,freq_hz,bus_1,bus_2,bus_3,bus_4,bus_5"));
    // 0.1..1.0 Hz over 9999 residuals at 50 Hz is bins 20..=199.
    assert_eq!(loglik.lines().count(), 2 + 180);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("forced.csv");
    let params = dir.path().join("params.json");
    let case = line5();
    ok(&["simulate", "--case", &case, "--duration", "100", "--seed", "9", "--forcing", "source=2,freq=1.1,amp=0.4", "-o", s(&traj)]);
    std::fs::write(&params, r#"{"inertia": {"1": 2.0, "5": 1.5}, "damping": {"1": 0.5, "5": 0.8}, "sigma": 0.2}"#).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let scan = dir.path().join(format!("scan{threads}.csv"));
        ok(&["--threads", threads, "localize", "--case", &case, "--params", s(&params), "--traj", s(&traj), "-o", s(&scan)]);
        outputs.push(std::fs::read(&scan).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn full_dae_and_reduced_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let case = line5();
    let common = ["--case", case.as_str(), "--duration", "20", "--seed", "5", "--forcing", "source=3,freq=0.7,amp=0.3"];
    ok(&[&["simulate"][..], &common, &["-o", s(&a)]].concat());
    ok(&[&["simulate"][..], &common, &["--full-dae", "-o", s(&b)]].concat());
    let rows = |p: &Path| -> Vec<Vec<f64>> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let (ra, rb) = (rows(&a), rows(&b));
    assert_eq!(ra.len(), 1000);
    for (x, y) in ra.iter().zip(&rb) {
        for (u, v) in x.iter().zip(y) {
            assert!((u - v).abs() <= 1e-9);
        }
    }
}

#[test]
fn reduce_prints_json() {
    let out = ok(&["reduce", "--case", &line5()]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["gen_ids"], serde_json::json!([1, 5]));
    let lr = json["l_reduced"][0][0].as_f64().unwrap();
    assert!((lr - 31.2 / 4.0).abs() < 1e-12);
    assert_eq!(json["gamma"].as_array().unwrap().len(), 2);
}

#[test]
fn run_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root().join("scenarios/toy_load3.json")).unwrap()).unwrap();
    scenario["case"] = serde_json::json!(line5());
    scenario["output_dir"] = serde_json::json!("out");
    let path = dir.path().join("toy.json");
    std::fs::write(&path, scenario.to_string()).unwrap();
    let out = ok(&["run", s(&path)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("winner: bus 3"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["winner"]["bus_id"], 3);
    assert_eq!(summary["winner"]["k"], 96);
}

#[test]
fn errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let case = line5();
    let nyquist = oscloc(&["simulate", "--case", &case, "--duration", "10", "--forcing", "source=1,freq=30,amp=1", "-o", s(&out)]);
    assert!(!nyquist.status.success());
    assert!(String::from_utf8_lossy(&nyquist.stderr).contains("Nyquist"));

    let unknown = oscloc(&["simulate", "--case", &case, "--duration", "10", "--forcing", "source=9,freq=1,amp=1", "-o", s(&out)]);
    assert!(!unknown.status.success());

    let missing = oscloc(&["learn", "--case", "/nonexistent.json", "--traj", s(&out), "-o", s(&out)]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent.json"));

    let band = oscloc(&["localize", "--case", &case, "--params", "p", "--traj", "t", "--band", "2:1", "-o", "s"]);
    assert!(!band.status.success());
}
