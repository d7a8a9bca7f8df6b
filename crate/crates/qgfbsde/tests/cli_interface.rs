//! End-to-end checks of the command line: exit codes, artifacts, and
//! byte-level determinism of outputs.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qgfbsde"))
}

fn write(dir: &Path, name: &str, content: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, content).unwrap();
    path.display().to_string()
}

const INCREASING: &str = "\
[forward]
b = 0
sigma = 1
x0 = 0.0

[backward]
f = 0.2*tanh(x)+0.5*z1^2
g = tanh(x)

[time]
T = 1.0

[pde]
nx = 201
nt = 100

[mc]
paths = 3000
steps = 40
seed = 7
";

const DECREASING_FLIP: &str = "\
[forward]
b = 0.1*(1-x)
sigma = 0.5
x0 = 0.0

[backward]
f = -0.1*tanh(x)
g = -tanh(x)

[time]
T = 1.0

[pde]
nx = 201
nt = 100

[mc]
paths = 3000
steps = 40
seed = 7
";

const PARTNER: &str = "\
[forward]
b = 0.1*(1-x)
sigma = 0.5
x0 = 0.0

[backward]
f = 0.1*tanh(x)
g = tanh(x)

[time]
T = 1.0

[pde]
nx = 201
nt = 100

[mc]
paths = 3000
steps = 40
seed = 7
";

const BAD_SIGMA: &str = "\
[forward]
b = 0
sigma = x
x0 = 0.5

[backward]
f = 0
g = x
";

#[test]
fn positivity_run_passes_and_reports_min_ux() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "increasing.cfg", INCREASING);
    let out = dir.path().join("out");
    let result = bin()
        .args(["check-positivity", &cfg, "--out-dir", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        result.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let report = fs::read_to_string(out.join("positivity_report.txt")).unwrap();
    assert!(report.contains("status = passed"), "report:\n{report}");
    assert!(report.contains("conclusion: u_x over the grid"));
}

#[test]
fn comonotone_with_flipped_model_exits_one_with_hypothesis_message() {
    let dir = tempfile::tempdir().unwrap();
    let m1 = write(dir.path(), "m1.cfg", INCREASING);
    let m2 = write(dir.path(), "m2flip.cfg", DECREASING_FLIP);
    let out = dir.path().join("out");
    let result = bin()
        .args([
            "check-comonotone",
            &m1,
            &m2,
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(
        stdout.contains("hypotheses not satisfied"),
        "stdout: {stdout}"
    );
    let report = fs::read_to_string(out.join("comonotonicity_report.txt")).unwrap();
    assert!(report.contains("hypotheses not satisfied"));
}

#[test]
fn comonotone_pair_that_satisfies_hypotheses_passes() {
    let dir = tempfile::tempdir().unwrap();
    let m1 = write(dir.path(), "m1.cfg", INCREASING);
    let m2 = write(dir.path(), "m2.cfg", PARTNER);
    let out = dir.path().join("out");
    let result = bin()
        .args([
            "check-comonotone",
            &m1,
            &m2,
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        result.status.code(),
        Some(0),
        "stdout: {} stderr: {}",
        String::from_utf8_lossy(&result.stdout),
        String::from_utf8_lossy(&result.stderr)
    );
}

#[test]
fn ellipticity_failure_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", BAD_SIGMA);
    let out = dir.path().join("out");
    let result = bin()
        .args(["solve-pde", &cfg, "--out-dir", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("elliptic"), "stderr: {stderr}");
}

#[test]
fn parse_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // missing [backward]
    let cfg = write(dir.path(), "half.cfg", "[forward]\nb = 0\nsigma = 1\n");
    let result = bin().args(["validate", &cfg]).output().unwrap();
    assert_eq!(result.status.code(), Some(2));
    // unknown command
    let result = bin().args(["frobnicate", &cfg]).output().unwrap();
    assert_eq!(result.status.code(), Some(2));
    // nonexistent file
    let result = bin()
        .args(["validate", "no-such-file.cfg"])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
    // unknown flag
    let result = bin()
        .args(["validate", &cfg, "--frob", "1"])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn failing_validation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // exp driver breaks the quadratic growth envelope
    let cfg = write(
        dir.path(),
        "expgrowth.cfg",
        "[forward]\nb = 0\nsigma = 1\nx0 = 0\n\n[backward]\nf = exp(z1)\ng = tanh(x)\n",
    );
    let out = dir.path().join("out");
    let result = bin()
        .args(["validate", &cfg, "--out-dir", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(1));
    let report = fs::read_to_string(out.join("validation.txt")).unwrap();
    assert!(report.contains("passed = false"));
    assert!(report.contains("violation:"), "report:\n{report}");
}

#[test]
fn dimension_mismatch_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let m1 = write(dir.path(), "m1.cfg", INCREASING);
    let m2 = write(
        dir.path(),
        "m2d2.cfg",
        "[forward]\nb = 0\nsigma = 1, 0.5\nx0 = 0\n\n[backward]\nf = 0.1*y\ng = tanh(x)\n",
    );
    let result = bin().args(["check-comonotone", &m1, &m2]).output().unwrap();
    assert_eq!(
        result.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
}

#[test]
fn numerical_blowup_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "explosive.cfg",
        "[forward]\nb = 0\nsigma = 1\nx0 = 0\n\n[backward]\nf = y^2\ng = 5\n\n[pde]\nnx = 51\nnt = 50\nx_min = -2\nx_max = 2\n",
    );
    let out = dir.path().join("out");
    let result = bin()
        .args(["solve-pde", &cfg, "--out-dir", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        result.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
}

#[test]
fn identical_invocations_produce_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.cfg", INCREASING);
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let result = bin()
            .args([
                "solve-mc",
                &cfg,
                "--paths",
                "500",
                "--steps",
                "20",
                "--format",
                "csv-bundle",
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_eq!(result.status.code(), Some(0));
    }
    for name in ["mc_report.txt", "paths.csv"] {
        let a = fs::read(out1.join(name)).unwrap();
        let b = fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.cfg", INCREASING);
    let out1 = dir.path().join("t1");
    let out2 = dir.path().join("t4");
    for (out, threads) in [(&out1, "1"), (&out2, "4")] {
        let result = bin()
            .env("QGFBSDE_THREADS", threads)
            .args([
                "solve-mc",
                &cfg,
                "--paths",
                "500",
                "--steps",
                "20",
                "--format",
                "csv-bundle",
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_eq!(result.status.code(), Some(0));
    }
    let a = fs::read(out1.join("paths.csv")).unwrap();
    let b = fs::read(out2.join("paths.csv")).unwrap();
    assert_eq!(a, b, "paths.csv depends on the worker count");
}

#[test]
fn pde_csv_round_trips_all_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "m.cfg",
        "[forward]\nb = 0\nsigma = 1\nx0 = 0\n\n[backward]\nf = 0.5*z1^2\ng = tanh(x)\n\n[pde]\nnx = 21\nnt = 40\nx_min = -3\nx_max = 3\n",
    );
    let out = dir.path().join("out");
    let result = bin()
        .args([
            "solve-pde",
            &cfg,
            "--format",
            "csv-bundle",
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("pde_solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x,u,ux");
    let mut rows = 0;
    for line in lines {
        for cell in line.split(',') {
            let v: f64 = cell.parse().expect("17-digit float parses");
            assert!(v.is_finite());
            // rendering the parsed value again reproduces the cell
            assert_eq!(format!("{v:.16e}"), cell);
        }
        rows += 1;
    }
    assert_eq!(rows, 21 * 41);
}

#[test]
fn rewrite_artifact_is_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "ou.cfg",
        "[forward]\nb = -x\nsigma = 1\nx0 = 2\n\n[backward]\nf = 0\ng = x\n\n[mc]\npaths = 3000\nsteps = 40\nseed = 5\n",
    );
    let out = dir.path().join("out");
    let result = bin()
        .args(["rewrite-sde", &cfg, "--out-dir", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(0));
    let rewritten = out.join("rewritten_model.cfg");
    let check = bin()
        .args([
            "validate",
            rewritten.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(check.status.code(), Some(0));
    let text = fs::read_to_string(&rewritten).unwrap();
    assert!(text.contains("f = y"), "f~ should be -b(t,y) = y:\n{text}");
}
