use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowgain"))
        .args(args)
        .env_remove("LOWGAIN_LOG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Dir(TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn write(&self, name: &str, v: &Value) -> String {
        fs::write(self.path(name), serde_json::to_string(v).unwrap()).unwrap();
        self.s(name)
    }

    fn example(&self, name: &str, extra: &[&str]) -> String {
        let out = self.s(&format!("{name}.json"));
        let mut args = vec!["example", "--name", name, "--output", &out];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    }
}

fn read_json(p: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    serde_json::from_value(v.clone()).unwrap()
}

fn read_csv(p: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

/// `x' = diag(-1, -2) x + u + bw w`, `e = x`: `G0 = diag(1, 1/2)`.
fn diagonal_plant(bw: [f64; 2]) -> Value {
    json!({
        "A": [[-1.0, 0.0], [0.0, -2.0]],
        "B": [[1.0, 0.0], [0.0, 1.0]],
        "Bw": [[bw[0]], [bw[1]]],
        "C": [[1.0, 0.0], [0.0, 1.0]],
        "D": [[0.0, 0.0], [0.0, 0.0]],
        "Dw": [[0.0], [0.0]],
    })
}

#[test]
fn power_system_analysis_recovers_unit_gamma() {
    let d = Dir::new();
    let input = d.example("power-system", &[]);
    let o = run(&["analyze", "--input", &input, "--output", &d.s("a.json")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = read_json(&d.s("a.json"));
    let gamma = a["gamma"].as_f64().unwrap();
    assert!((gamma - 1.0).abs() < 1e-3, "{gamma}");
    assert_eq!(a["status"], "optimal");
    assert!(a["P"].is_array() && a["theta"].is_array());
    assert!(stdout(&o).starts_with("analyze: status=optimal"));
}

#[test]
fn lti_analysis_exit_code_follows_hurwitz_test() {
    let d = Dir::new();
    // G0 = diag(1, 1/2); -G0 K has eigenvalues (-k1, -k2/2).
    for (k, expect) in [([1.0, 1.0], 0), ([-1.0, 1.0], 2), ([2.0, -0.1], 2)] {
        let hurwitz = -k[0] < 0.0 && -k[1] / 2.0 < 0.0;
        assert_eq!(hurwitz, expect == 0);
        let input = d.write(
            "lti.json",
            &json!({ "plant": diagonal_plant([1.0, 1.0]), "K": [[k[0], 0.0], [0.0, k[1]]] }),
        );
        let o = run(&["analyze", "--input", &input, "--output", &d.s("a.json")]);
        assert_eq!(code(&o), expect, "K = {k:?}: {}{}", stdout(&o), stderr(&o));
        let a = read_json(&d.s("a.json"));
        assert_eq!(a["status"] == "infeasible", expect == 2);
    }
}

#[test]
fn malformed_input_exits_one_and_names_the_key() {
    let d = Dir::new();
    fs::write(d.path("t.json"), r#"{"plant": {"A": [[-1.0]], "B": [[1"#).unwrap();
    let o = run(&["analyze", "--input", &d.s("t.json"), "--output", &d.s("a.json")]);
    assert_eq!(code(&o), 1);
    assert!(!d.path("a.json").exists());

    let input = d.write(
        "u.json",
        &json!({ "plant": diagonal_plant([1.0, 1.0]), "gain": [[1.0]] }),
    );
    let o = run(&["analyze", "--input", &input, "--output", &d.s("a.json")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("\"gain\""), "{}", stderr(&o));

    let input = d.write(
        "k.json",
        &json!({ "plant": diagonal_plant([1.0, 1.0]), "K": [[1.0, 0.0]] }),
    );
    let o = run(&["analyze", "--input", &input, "--output", &d.s("a.json")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("\"K\""), "{}", stderr(&o));

    let input = d.write("m.json", &json!({ "plant": diagonal_plant([1.0, 1.0]) }));
    let o = run(&["analyze", "--input", &input, "--output", &d.s("a.json")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("\"K\""), "{}", stderr(&o));
}

#[test]
fn paths_are_checked_before_computing() {
    let d = Dir::new();
    let input = d.example("power-system", &[]);
    let o = run(&["analyze", "--input", &input, "--output", &d.s("missing/a.json")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--output"));
    let o = run(&["analyze", "--input", &d.s("nope.json"), "--output", &d.s("a.json")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--input"));
    let o = run(&[
        "synthesize",
        "--input",
        &input,
        "--structure",
        &d.s("nope.json"),
        "--output",
        &d.s("a.json"),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--structure"));
    assert!(!d.path("a.json").exists());
}

#[test]
fn structured_lti_synthesis_has_exact_zeros() {
    let d = Dir::new();
    let input = d.example("random", &["--seed", "3"]);
    let full = run(&[
        "synthesize",
        "--input",
        &input,
        "--mode",
        "lti-hinf",
        "--output",
        &d.s("full.json"),
    ]);
    assert_eq!(code(&full), 0, "{}", stderr(&full));
    let mask = d.write("mask.json", &json!({ "row_blocks": [3, 4], "col_blocks": [3, 2] }));
    let o = run(&[
        "synthesize",
        "--input",
        &input,
        "--mode",
        "lti-hinf",
        "--structure",
        &mask,
        "--output",
        &d.s("s.json"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = read_json(&d.s("s.json"));
    let k = matrix(&s["K"]);
    assert_eq!((k.len(), k[0].len()), (7, 5));
    for (i, row) in k.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let on_block = (i < 3) == (j < 3);
            if !on_block {
                assert_eq!(v.to_bits(), 0.0f64.to_bits(), "K[{i}][{j}] = {v}");
            }
        }
    }
    let gs = s["gamma"].as_f64().unwrap();
    let gf = read_json(&d.s("full.json"))["gamma"].as_f64().unwrap();
    assert!(gs >= gf * (1.0 - 1e-6), "{gs} < {gf}");
    assert_eq!(s["verified"], true);
}

#[test]
fn saturated_robust_synthesis_succeeds() {
    let d = Dir::new();
    let input = d.example("saturated", &["--seed", "2"]);
    let o = run(&[
        "synthesize",
        "--input",
        &input,
        "--mode",
        "robust",
        "--output",
        &d.s("s.json"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = read_json(&d.s("s.json"));
    let g = s["gamma"].as_f64().unwrap();
    let post = s["analysis_gamma"].as_f64().unwrap();
    assert!(g.is_finite() && g > 0.0);
    assert!(post <= g * 1.001, "{post} vs {g}");
    assert_eq!(s["mode"], "robust");
}

#[test]
fn power_system_robust_synthesis_uses_the_shifted_sector() {
    let d = Dir::new();
    let input = d.write(
        "ps.json",
        &json!({ "example": { "name": "power_system", "beta": 2.0, "mu": [1.0], "L": [4.0] } }),
    );
    let o = run(&["synthesize", "--input", &input, "--output", &d.s("s.json")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = read_json(&d.s("s.json"));
    // Closed-form optimum for beta = 2, sector [1, 4] is 0.625.
    let g = s["gamma"].as_f64().unwrap();
    assert!(g > 0.0 && g <= 0.625 * 1.01, "{g}");
    assert!(s["analysis_gamma"].as_f64().unwrap().is_finite());
}

#[test]
fn rank_deficient_dc_gain_is_infeasible() {
    let d = Dir::new();
    // Two measured errors, one input: G0 is 2x1.
    let plant = json!({
        "A": [[-1.0, 0.0], [0.0, -1.0]],
        "B": [[1.0], [1.0]],
        "Bw": [[1.0], [0.0]],
        "C": [[1.0, 0.0], [0.0, 1.0]],
        "D": [[0.0], [0.0]],
        "Dw": [[0.0], [0.0]],
    });
    let input = d.write("rd.json", &json!({ "plant": plant }));
    let o = run(&["synthesize", "--input", &input, "--output", &d.s("s.json")]);
    assert_eq!(code(&o), 2, "{}{}", stdout(&o), stderr(&o));
    assert_eq!(read_json(&d.s("s.json"))["status"], "infeasible");
    assert!(stdout(&o).contains("infeasible"));
}

#[test]
fn pendulum_simulation_regulates() {
    let d = Dir::new();
    let input = d.example("pendulum", &[]);
    let o = run(&["simulate", "--input", &input, "--output", &d.s("p.csv")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&d.path("p.csv"));
    assert_eq!(&header[..4], &["t", "eta_1", "e_1", "u_1"]);
    let e = header.iter().position(|h| h == "e_1").unwrap();
    let last = rows.last().unwrap();
    assert!(last[e].abs() < 1e-6, "{}", last[e]);
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
    assert_eq!(stdout(&o).matches("settling:").count(), 1);
}

#[test]
fn fixed_step_and_config_overrides() {
    let d = Dir::new();
    let input = d.example("pendulum", &[]);
    let cfg = d.write("cfg.json", &json!({ "input": input, "t_final": 50.0, "eps": 0.1 }));
    let o = run(&[
        "simulate",
        "--config",
        &cfg,
        "--t-final",
        "30",
        "--fixed-step",
        "0.05",
        "--output",
        &d.s("p.csv"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = read_csv(&d.path("p.csv"));
    assert_eq!(rows.last().unwrap()[0], 30.0);

    let bad = d.write("bad.json", &json!({ "input": input, "horizon": 3.0 }));
    let o = run(&["simulate", "--config", &bad, "--output", &d.s("q.csv")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("horizon"));
}

#[test]
fn freqresp_of_davison_design_peaks_at_disturbance_gain() {
    let d = Dir::new();
    let bw = [1.0, 1.0];
    // Gw0 = -C A^{-1} Bw = (1, 1/2): spectral norm sqrt(5)/2.
    let floor = (1.25f64).sqrt();
    let input = d.write("p.json", &json!({ "plant": diagonal_plant(bw), "eps": 0.3 }));
    let o = run(&["freqresp", "--input", &input, "--output", &d.s("f.csv")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&d.path("f.csv"));
    assert_eq!(header, ["omega", "sigma_max"]);
    let peak = rows.iter().map(|r| r[1]).fold(0.0, f64::max);
    assert!((peak - floor).abs() < 1e-4, "{peak} vs {floor}");

    let input = d.example("saturated", &[]);
    let o = run(&["freqresp", "--input", &input, "--output", &d.s("g.csv")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("ratio=1.0000"), "{}", stdout(&o));
}

#[test]
fn step_sequence_reports_one_settling_event_per_channel() {
    let d = Dir::new();
    let input = d.example("saturated", &[]);
    let o = run(&["synthesize", "--input", &input, "--output", &d.s("k.json")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&[
        "simulate",
        "--input",
        &input,
        "--gain",
        &d.s("k.json"),
        "--output",
        &d.s("s.csv"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let events: Vec<&str> = out.lines().filter(|l| l.starts_with("settling:")).collect();
    assert_eq!(events.len(), 5, "{out}");
    for (i, line) in events.iter().enumerate() {
        assert!(line.starts_with(&format!("settling: channel {i} step")), "{line}");
        assert!(line.contains("settled at"), "{line}");
    }
    let (header, _) = read_csv(&d.path("s.csv"));
    assert!(header.iter().any(|h| h == "x_30"));
}

#[test]
fn integration_failure_reports_last_valid_time() {
    let d = Dir::new();
    let plant = json!({ "A": [[50.0]], "B": [[1.0]], "Bw": [[1.0]], "C": [[1.0]], "D": [[0.0]], "Dw": [[0.0]] });
    let doc = json!({
        "plant": plant, "K": [[1.0]], "eps": 0.1, "t_final": 1000.0,
        "signal": { "kind": "constant", "value": [1.0] },
    });
    let input = d.write("u.json", &doc);
    let o = run(&["simulate", "--input", &input, "--output", &d.s("u.csv")]);
    assert_eq!(code(&o), 3, "{}{}", stdout(&o), stderr(&o));
    assert!(stderr(&o).contains("last valid time"), "{}", stderr(&o));
    assert!(!d.path("u.csv").exists());
}

#[test]
fn written_json_is_readable_again() {
    let d = Dir::new();
    let input = d.example("saturated", &["--seed", "4"]);
    let doc = read_json(&input);
    assert_eq!(doc["example"]["seed"], 4);

    let o = run(&["synthesize", "--input", &input, "--output", &d.s("k.json")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let k = read_json(&d.s("k.json"));

    // A synthesis result as the gain source of an analysis, then the
    // analysis report as the gain source of another analysis.
    let o = run(&[
        "analyze",
        "--input",
        &input,
        "--gain",
        &d.s("k.json"),
        "--output",
        &d.s("a.json"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = read_json(&d.s("a.json"));
    assert_eq!(a["K"], k["K"]);
    let o = run(&[
        "analyze",
        "--input",
        &input,
        "--gain",
        &d.s("a.json"),
        "--output",
        &d.s("b.json"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let b = read_json(&d.s("b.json"));
    assert_eq!(b["K"], k["K"]);
    assert_eq!(b["gamma"], a["gamma"]);

    // Results are also accepted as the main input.
    for name in ["k.json", "a.json"] {
        let o = run(&[
            "freqresp",
            "--input",
            &input,
            "--gain",
            &d.s(name),
            "--output",
            &d.s("f.csv"),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let o = run(&["analyze", "--input", &d.s("k.json"), "--output", &d.s("c.json")]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("plant") || stderr(&o).contains("lfr"));

    // Infeasible reports parse too.
    let lti = d.write(
        "lti.json",
        &json!({ "plant": diagonal_plant([1.0, 1.0]), "K": [[-1.0, 0.0], [0.0, -1.0]] }),
    );
    assert_eq!(
        code(&run(&["analyze", "--input", &lti, "--output", &d.s("inf.json")])),
        2
    );
    let o = run(&[
        "analyze",
        "--input",
        &lti,
        "--gain",
        &d.s("inf.json"),
        "--output",
        &d.s("inf2.json"),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn seed_determines_generated_content() {
    let d = Dir::new();
    let a = d.example("random", &["--seed", "7"]);
    let a_text = fs::read_to_string(&a).unwrap();
    let b = d.example("random", &["--seed", "7"]);
    assert_eq!(fs::read_to_string(&b).unwrap(), a_text);
    let c = d.s("c.json");
    assert_eq!(
        code(&run(&["example", "--name", "random", "--seed", "8", "--output", &c])),
        0
    );
    assert_ne!(fs::read_to_string(&c).unwrap(), a_text);

    // --seed on a later command regenerates the instance from the reference.
    let o7 = run(&["freqresp", "--input", &a, "--output", &d.s("f7.csv")]);
    let o8 = run(&["freqresp", "--input", &a, "--seed", "8", "--output", &d.s("f8.csv")]);
    let o8b = run(&["freqresp", "--input", &c, "--output", &d.s("f8b.csv")]);
    assert_eq!(code(&o7) + code(&o8) + code(&o8b), 0);
    let f8 = fs::read_to_string(d.path("f8.csv")).unwrap();
    assert_eq!(f8, fs::read_to_string(d.path("f8b.csv")).unwrap());
    assert_ne!(f8, fs::read_to_string(d.path("f7.csv")).unwrap());
}
