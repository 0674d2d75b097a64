//! CLI-level acceptance checks: byte-level determinism of re-runs, exit
//! codes, and golden comparison.

use std::path::Path;
use std::process::Command;

fn phlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phlab"))
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|_| panic!("missing {name}"))
}

#[test]
fn criterion_11_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |out: &Path, cmd: &[&str]| {
        let status = phlab().args(cmd).arg("--out").arg(out).status().unwrap();
        assert!(status.success(), "run failed: {cmd:?}");
    };

    let mut all_identical = true;
    let mut checked = Vec::new();
    let cases: Vec<(&str, Vec<&str>)> = vec![
        (
            "exponents",
            vec!["exponents", "--map", "irreducible", "--n", "20000", "--seed", "7", "--quiet"],
        ),
        (
            "ugibbs",
            vec![
                "ugibbs",
                "--map",
                "irreducible",
                "--iterations",
                "8",
                "--grid",
                "16",
                "--seed",
                "3",
                "--quiet",
            ],
        ),
        (
            "stopping-times",
            vec![
                "stopping-times",
                "--map",
                "irreducible",
                "--ell",
                "20",
                "--epsilon",
                "0.01",
                "--seed",
                "5",
                "--quiet",
            ],
        ),
    ];
    for (name, args) in &cases {
        // Identical config means identical output_dir too: snapshot the
        // first run, overwrite with the second, compare bytes.
        let dir = tmp.path().join(name);
        run(&dir, args);
        let mut first: Vec<(String, Vec<u8>)> = Vec::new();
        for entry in std::fs::read_dir(&dir).unwrap() {
            let fname = entry.unwrap().file_name().to_string_lossy().to_string();
            if fname == "run_meta.json" {
                continue; // the one file that carries wall time and timestamp
            }
            first.push((fname.clone(), read(&dir, &fname)));
        }
        run(&dir, args);
        for (fname, bytes) in &first {
            let same = &read(&dir, fname) == bytes;
            all_identical &= same;
            checked.push(format!("{name}/{fname}: {}", if same { "identical" } else { "DIFFERS" }));
        }
    }
    println!(
        "criterion 11 (determinism): {} — {}",
        if all_identical { "PASS" } else { "FAIL" },
        checked.join(", ")
    );
    assert!(all_identical);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();

    // Invalid matrix (|det| = 1) in a config: exit 2 naming the invariant.
    let cfg = tmp.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"map":{"kind":"linear","matrix":[2,1,1,1]},"command":"exponents","parameters":{},"seed":1,"output_dir":"out"}"#,
    )
    .unwrap();
    let out = phlab().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("determinant"), "stderr: {stderr}");

    // Unknown preset: exit 2.
    let out = phlab().args(["exponents", "--map", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Numerical failure (budget exhaustion) exits 3 and leaves a partial
    // report: a sheared-map arc pushed far beyond the segment budget.
    let dir = tmp.path().join("explode");
    let out = phlab()
        .args([
            "minimality",
            "--map",
            "sheared-irreducible",
            "--eps",
            "0.05",
            "--iterations",
            "14",
            "--seed",
            "2",
            "--quiet",
        ])
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert!(report["results"]["partial"]["completed_iterations"].is_number());
}

#[test]
fn golden_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("base");
    let status = phlab()
        .args(["exponents", "--map", "product", "--n", "5000", "--seed", "1", "--quiet"])
        .arg("--out")
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let report = dir.join("report.json");

    // A report against itself passes.
    let status = phlab()
        .args(["compare-golden", "--quiet"])
        .arg("--report")
        .arg(&report)
        .arg("--golden")
        .arg(&report)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    // Perturb a value beyond tolerance: fails listing the field.
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    doc["results"]["center_exponent"] = serde_json::json!(0.75);
    let golden = tmp.path().join("golden.json");
    std::fs::write(&golden, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = phlab()
        .arg("compare-golden")
        .arg("--report")
        .arg(&report)
        .arg("--golden")
        .arg(&golden)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("results.center_exponent"));

    // With a tolerance table covering the field, it passes again.
    let tol = tmp.path().join("tol.json");
    std::fs::write(&tol, r#"{"results.center_exponent": 0.5}"#).unwrap();
    let status = phlab()
        .arg("compare-golden")
        .arg("--report")
        .arg(&report)
        .arg("--golden")
        .arg(&golden)
        .arg("--tolerances")
        .arg(&tol)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    // A golden with an extra field: the missing field is reported.
    doc["results"]["extra_field"] = serde_json::json!(1.0);
    std::fs::write(&golden, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = phlab()
        .arg("compare-golden")
        .arg("--report")
        .arg(&report)
        .arg("--golden")
        .arg(&golden)
        .arg("--tolerances")
        .arg(&tol)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing field results.extra_field"));
}

#[test]
fn config_round_trip() {
    // parse(serialize(config)) == config for a fully populated config.
    let text = r#"{
        "map": {"kind": "perturbed-linear", "matrix": [3, 1, 1, 2],
                "perturbation": {"q": [0.4, 0.8], "a_box": 0.070710678118654752,
                                  "eps": 0.013, "frame": "eigenframe"}},
        "command": "specialness",
        "parameters": {"depth": 45, "samples": 128, "point": [0.4, 0.8]},
        "seed": 99,
        "output_dir": "somewhere"
    }"#;
    // Run through the binary: the echoed config in report.json must parse
    // back to an equivalent document (bit-exact map fields).
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, text).unwrap();
    let dir = tmp.path().join("out");
    let status = phlab()
        .args(["run", "--quiet"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    let original: serde_json::Value = serde_json::from_str(text).unwrap();
    assert_eq!(report["config"]["map"], original["map"]);
    assert_eq!(report["config"]["parameters"], original["parameters"]);
    assert_eq!(report["config"]["seed"], original["seed"]);
}
