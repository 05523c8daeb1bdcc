use std::path::Path;
use std::process::{Command, Output};

const SCALAR: &str = r#"
name = "scalar"
tau = [1.0]
A0 = [[-2]]
Ai = [[[0.5]]]
B1 = [[1]]
B2 = [[1]]
C10 = [[1]]
D1 = [[1]]
C2 = [[1]]
C30 = [[1]]
D3 = [[1]]
"#;

fn delayctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delayctl")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_model(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn malformed_specs_name_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let cases = [
        (SCALAR.replace("C30 = [[1]]", "C3O = [[1]]"), "C3O"),
        (SCALAR.replace("B2 = [[1]]", "B2 = [[1], [2]]"), "B2"),
        (SCALAR.replace("tau = [1.0]", "tau = [-1.0]"), "tau"),
    ];
    for (i, (text, key)) in cases.iter().enumerate() {
        let path = write_model(dir.path(), &format!("bad{i}.toml"), text);
        let o = delayctl(&["synth", &path, "--out-dir", out]);
        assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
        assert!(stderr(&o).contains(key), "{key} missing from: {}", stderr(&o));
    }
    let o = delayctl(&["synth", "example9", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_then_sim_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "scalar.toml", SCALAR);
    let out = dir.path().join("out");
    let o = delayctl(&["synth", &model, "--out-dir", out.to_str().unwrap(), "--simulate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let report = json(&out.join("scalar.report.json"));
    assert_eq!(report["schema"], "delayctl.report/1");
    assert!(report["stages"].as_array().unwrap().iter().all(|s| s["ok"] == true));
    let g1 = report["gamma1"].as_f64().unwrap();
    let g2 = report["gamma2"].as_f64().unwrap();
    let comp = report["composite"].as_f64().unwrap();
    // feedthrough D1 = D3 = 1 bounds both levels below by one
    assert!(g1 >= 1.0 - 1e-6 && g2 >= 1.0 - 1e-6);
    for s in report["simulations"].as_array().unwrap() {
        let g = s["estimated_gain"].as_f64().unwrap();
        assert!(g <= comp * 1.05, "{g} vs {comp}");
    }
    for stem in ["scalar-sinc", "scalar-step"] {
        assert!(out.join(format!("{stem}.csv")).exists());
        assert_eq!(json(&out.join(format!("{stem}.json")))["schema"], "delayctl.trace/1");
    }

    let gains = out.join("scalar.gains.json");
    let o = delayctl(&[
        "sim",
        &model,
        "--gains",
        gains.to_str().unwrap(),
        "--disturbance",
        "zero",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&out.join("scalar.report.json"));
    assert!(report["stages"].as_array().unwrap().iter().any(|s| s["stage"] == "sim-zero" && s["ok"] == true));
}

#[test]
fn zero_gain_sim_on_a_stable_plant() {
    use delayctl::gains::json::{GainsFile, Provenance};
    use delayctl::gains::{ControllerGains, ObserverGains};
    use delayctl::model::DelayModel;

    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path(), "scalar.toml", SCALAR);
    let m = DelayModel::from_toml_str(SCALAR).unwrap().0;
    let k = ControllerGains::zeros(1, 1, &m.taus);
    let l = ObserverGains::zeros(1, 1, &m.taus);
    let gains = dir.path().join("zero.gains.json");
    std::fs::write(&gains, GainsFile::new(&m, &k, &l, Provenance::default()).to_json()).unwrap();
    let out = dir.path().join("out");
    let o = delayctl(&[
        "sim",
        &model,
        "--gains",
        gains.to_str().unwrap(),
        "--disturbance",
        "step",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = json(&out.join("scalar-step.json"));
    let s = &trace["summary"];
    assert!(s["diverged"].is_null());
    // x' = -2x + 0.5x(t-1) + w settles at w/1.5 under a unit step
    let fin = s["final_state_norm"].as_f64().unwrap();
    assert!((fin - 1.0 / 1.5).abs() < 1e-3, "{fin}");
}

#[test]
fn unstable_open_loop_exits_nonzero_and_keeps_the_partial_trace() {
    use delayctl::gains::json::{GainsFile, Provenance};
    use delayctl::gains::{ControllerGains, ObserverGains};
    use delayctl::model::DelayModel;

    let dir = tempfile::tempdir().unwrap();
    let m = DelayModel::example("example1").unwrap();
    let k = ControllerGains::zeros(m.m(), m.n(), &m.taus);
    let l = ObserverGains::zeros(m.n(), m.q(), &m.taus);
    let gains = dir.path().join("zero.gains.json");
    std::fs::write(&gains, GainsFile::new(&m, &k, &l, Provenance::default()).to_json()).unwrap();
    let out = dir.path().join("out");
    let o = delayctl(&[
        "sim",
        "example1",
        "--gains",
        gains.to_str().unwrap(),
        "--disturbance",
        "step",
        "--horizon",
        "80",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    let trace = json(&out.join("example1-step.json"));
    assert!(trace["summary"]["diverged"].is_string());
    assert!(out.join("example1-step.csv").exists());
}
