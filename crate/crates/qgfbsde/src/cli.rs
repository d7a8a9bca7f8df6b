//! Batch command line.
//!
//! ```text
//! qgfbsde <command> <model.cfg> [<model2.cfg>] [--flag value ...]
//!
//! commands:
//!   validate             sample the structural assumptions, report constants
//!   solve-pde            finite-difference solve, report u(0,x0) and u_x(0,x0)
//!   solve-mc             paths + regression + weights, report estimates
//!   check-positivity     sign certificate for Z ⊙ sigma
//!   check-comonotone     Z1 ⊙ Z2 certificate for two models
//!   check-representation agreement of the three control estimates
//!   rewrite-sde          SDE-as-BSDE rewrite plus regression self-check
//!
//! flags (all long-form, `--name value`):
//!   --x-min --x-max --nx --nt      grid overrides
//!   --paths --steps --seed --bins --z-clip   Monte Carlo overrides
//!   --tol                          certificate tolerance (PDE side)
//!   --decreasing                   rewrite-sde: use the decreasing rewrite
//!   --out-dir DIR                  artifact directory (default qgfbsde-out)
//!   --format text|csv-bundle      also export CSV tables
//! ```
//!
//! Exit codes: 0 all certificates passed; 1 a certificate failed or the
//! hypotheses were not satisfied; 2 configuration or parse error;
//! 3 numerical failure (blow-up, non-convergence). `QGFBSDE_THREADS` caps
//! the worker count (0 = auto). Artifacts carry no timestamps: identical
//! inputs give byte-identical outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{render_model, ConfigError, ModelConfig};
use crate::mc::{
    grad_y0_via_weights, malliavin_weights, simulate_forward, simulate_variational,
    solve_bsde_regression, write_paths_csv, McConfig, McError,
};
use crate::model::{validate_assumptions, ModelError, SampleBox};
use crate::pde::{fmt17, solve_pde, Grid, PdeError, SchemeParams};
use crate::theorems::{
    check_representation, sde_as_bsde, sde_rewrite_selfcheck, verify_comonotonicity,
    verify_positivity, ReportStatus, SignCertificate, TheoremError, TheoremReport, PDE_TOL,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CERT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Run the CLI on preparsed arguments (exclusive of the program name).
pub fn run<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    match run_inner(args.into_iter().collect()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Pde(PdeError),
    #[error(transparent)]
    Mc(McError),
    #[error(transparent)]
    Theorem(TheoremError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Model(_) => EXIT_CONFIG,
            CliError::Validation(_) => EXIT_CONFIG,
            CliError::Write { .. } => EXIT_CONFIG,
            CliError::Pde(e) => pde_exit(e),
            CliError::Mc(e) => mc_exit(e),
            CliError::Theorem(e) => match e {
                TheoremError::Model(_)
                | TheoremError::DimensionMismatch { .. }
                | TheoremError::LengthMismatch(..)
                | TheoremError::Precondition(_)
                | TheoremError::OrderingHypothesis(_) => EXIT_CONFIG,
                TheoremError::Pde(e) => pde_exit(e),
                TheoremError::Mc(e) => mc_exit(e),
            },
        }
    }
}

fn pde_exit(e: &PdeError) -> i32 {
    match e {
        PdeError::InvalidGrid(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn mc_exit(e: &McError) -> i32 {
    match e {
        McError::InvalidConfig(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

impl From<PdeError> for CliError {
    fn from(e: PdeError) -> Self {
        CliError::Pde(e)
    }
}
impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        CliError::Mc(e)
    }
}
impl From<TheoremError> for CliError {
    fn from(e: TheoremError) -> Self {
        CliError::Theorem(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Text,
    CsvBundle,
}

struct RunConfig {
    command: String,
    models: Vec<PathBuf>,
    x_min: Option<f64>,
    x_max: Option<f64>,
    nx: Option<usize>,
    nt: Option<usize>,
    paths: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
    bins: Option<usize>,
    z_clip: Option<f64>,
    tol: f64,
    decreasing: bool,
    out_dir: PathBuf,
    format: Format,
}

fn parse_args(args: Vec<String>) -> Result<RunConfig, CliError> {
    let usage = || {
        CliError::Usage(
            "usage: qgfbsde <command> <model.cfg> [<model2.cfg>] [--name value ...] \
         (commands: validate, solve-pde, solve-mc, check-positivity, check-comonotone, \
         check-representation, rewrite-sde)"
                .into(),
        )
    };
    let mut it = args.into_iter();
    let command = it.next().ok_or_else(usage)?;
    let mut rc = RunConfig {
        command,
        models: Vec::new(),
        x_min: None,
        x_max: None,
        nx: None,
        nt: None,
        paths: None,
        steps: None,
        seed: None,
        bins: None,
        z_clip: None,
        tol: PDE_TOL,
        decreasing: false,
        out_dir: PathBuf::from("qgfbsde-out"),
        format: Format::Text,
    };
    while let Some(arg) = it.next() {
        if let Some(name) = arg.strip_prefix("--") {
            if name == "decreasing" {
                rc.decreasing = true;
                continue;
            }
            let value = it
                .next()
                .ok_or_else(|| CliError::Usage(format!("flag --{name} needs a value")))?;
            let bad = |e: String| CliError::Usage(format!("bad value for --{name}: {e}"));
            match name {
                "x-min" => {
                    rc.x_min = Some(
                        value
                            .parse()
                            .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                    )
                }
                "x-max" => {
                    rc.x_max = Some(
                        value
                            .parse()
                            .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                    )
                }
                "nx" => {
                    rc.nx = Some(
                        value
                            .parse()
                            .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                    )
                }
                "nt" => {
                    rc.nt = Some(
                        value
                            .parse()
                            .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                    )
                }
                "paths" => {
                    rc.paths = Some(
                        value
                            .parse()
                            .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                    )
                }
                "steps" => {
                    rc.steps = Some(
                        value
                            .parse()
                            .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                    )
                }
                "seed" => {
                    rc.seed = Some(
                        value
                            .parse()
                            .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                    )
                }
                "bins" => {
                    rc.bins = Some(
                        value
                            .parse()
                            .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                    )
                }
                "z-clip" => {
                    rc.z_clip = Some(
                        value
                            .parse()
                            .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                    )
                }
                "tol" => {
                    rc.tol = value
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?
                }
                "out-dir" => rc.out_dir = PathBuf::from(value),
                "format" => {
                    rc.format = match value.as_str() {
                        "text" => Format::Text,
                        "csv-bundle" => Format::CsvBundle,
                        other => {
                            return Err(CliError::Usage(format!(
                                "unknown format `{other}` (text or csv-bundle)"
                            )))
                        }
                    }
                }
                other => return Err(CliError::Usage(format!("unknown flag --{other}"))),
            }
        } else {
            rc.models.push(PathBuf::from(arg));
        }
    }
    let want_models: usize = match rc.command.as_str() {
        "check-comonotone" => 2,
        "validate"
        | "solve-pde"
        | "solve-mc"
        | "check-positivity"
        | "check-representation"
        | "rewrite-sde" => 1,
        other => return Err(CliError::Usage(format!("unknown command `{other}`"))),
    };
    if rc.models.len() != want_models {
        return Err(CliError::Usage(format!(
            "command `{}` takes exactly {} model file(s), got {}",
            rc.command,
            want_models,
            rc.models.len()
        )));
    }
    Ok(rc)
}

fn run_inner(args: Vec<String>) -> Result<i32, CliError> {
    let rc = parse_args(args)?;
    fs::create_dir_all(&rc.out_dir).map_err(|source| CliError::Write {
        path: rc.out_dir.display().to_string(),
        source,
    })?;
    match rc.command.as_str() {
        "validate" => cmd_validate(&rc),
        "solve-pde" => cmd_solve_pde(&rc),
        "solve-mc" => cmd_solve_mc(&rc),
        "check-positivity" => cmd_check_positivity(&rc),
        "check-comonotone" => cmd_check_comonotone(&rc),
        "check-representation" => cmd_check_representation(&rc),
        "rewrite-sde" => cmd_rewrite_sde(&rc),
        _ => unreachable!("validated in parse_args"),
    }
}

fn load_model(rc: &RunConfig, idx: usize) -> Result<(ModelConfig, Grid, McConfig), CliError> {
    let mut cfg = ModelConfig::load(&rc.models[idx])?;
    // command-line overrides beat the file
    if rc.x_min.is_some() {
        cfg.x_min = rc.x_min;
    }
    if rc.x_max.is_some() {
        cfg.x_max = rc.x_max;
    }
    if rc.nx.is_some() {
        cfg.nx = rc.nx;
    }
    if rc.nt.is_some() {
        cfg.nt = rc.nt;
    }
    if rc.paths.is_some() {
        cfg.paths = rc.paths;
    }
    if rc.steps.is_some() {
        cfg.steps = rc.steps;
    }
    if rc.seed.is_some() {
        cfg.seed = rc.seed;
    }
    if rc.bins.is_some() {
        cfg.bins = rc.bins;
    }
    if rc.z_clip.is_some() {
        cfg.z_clip = rc.z_clip;
    }
    let grid = cfg.resolve_grid();
    let mc = cfg.resolve_mc();
    Ok((cfg, grid, mc))
}

fn write_artifact(rc: &RunConfig, name: &str, content: &str) -> Result<PathBuf, CliError> {
    let path = rc.out_dir.join(name);
    fs::write(&path, content).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

fn preflight_validation(cfg: &ModelConfig, grid: &Grid) -> Result<(), CliError> {
    let report = validate_assumptions(
        &cfg.model,
        &SampleBox::for_model(&cfg.model, grid.x_min, grid.x_max),
        false,
    )?;
    if !report.passed {
        let first = report
            .violations
            .first()
            .map(|v| v.to_string())
            .unwrap_or_else(|| "unknown violation".into());
        return Err(CliError::Validation(first));
    }
    Ok(())
}

// --- commands --------------------------------------------------------------

fn cmd_validate(rc: &RunConfig) -> Result<i32, CliError> {
    let (cfg, grid, _) = load_model(rc, 0)?;
    let report = validate_assumptions(
        &cfg.model,
        &SampleBox::for_model(&cfg.model, grid.x_min, grid.x_max),
        true,
    )?;
    let mut text = String::new();
    let _ = writeln!(text, "command = validate");
    let _ = writeln!(text, "model = {}", rc.models[0].display());
    let _ = writeln!(text, "grid_used = {}", report.grid_used);
    let _ = writeln!(
        text,
        "growth_constant_M = {}",
        fmt17(report.growth_constant_m)
    );
    if let Some(k) = report.lipschitz_constant_k {
        let _ = writeln!(text, "lipschitz_constant_K = {}", fmt17(k));
    }
    let _ = writeln!(
        text,
        "ellipticity_floor = {}",
        fmt17(report.ellipticity_floor)
    );
    for (name, bound) in &report.observed_bounds {
        let _ = writeln!(text, "bound[{name}] = {}", fmt17(*bound));
    }
    let _ = writeln!(text, "violations = {}", report.violations.len());
    for v in &report.violations {
        let _ = writeln!(text, "violation: {v}");
    }
    let _ = writeln!(text, "passed = {}", report.passed);
    write_artifact(rc, "validation.txt", &text)?;
    println!(
        "validate {}: {} (M = {:.4e}, ellipticity floor = {:.4e}, {} violation(s))",
        rc.models[0].display(),
        if report.passed { "passed" } else { "FAILED" },
        report.growth_constant_m,
        report.ellipticity_floor,
        report.violations.len()
    );
    Ok(if report.passed {
        EXIT_OK
    } else {
        EXIT_CERT_FAILED
    })
}

fn cmd_solve_pde(rc: &RunConfig) -> Result<i32, CliError> {
    let (cfg, grid, _) = load_model(rc, 0)?;
    preflight_validation(&cfg, &grid)?;
    let sol = solve_pde(&cfg.model, grid, SchemeParams::default())?;
    let m = &cfg.model;
    let u0 = sol.eval_u(0.0, m.x0())?;
    let ux0 = sol.eval_ux(0.0, m.x0())?;
    let mut text = String::new();
    let _ = writeln!(text, "command = solve-pde");
    let _ = writeln!(text, "model = {}", rc.models[0].display());
    let _ = writeln!(
        text,
        "grid = [{}, {}] nx = {} nt = {}",
        fmt17(grid.x_min),
        fmt17(grid.x_max),
        grid.nx,
        grid.nt
    );
    let _ = writeln!(text, "u(0,x0) = {}", fmt17(u0));
    let _ = writeln!(text, "ux(0,x0) = {}", fmt17(ux0));
    let _ = writeln!(text, "max_abs_z = {}", fmt17(sol.max_abs_z()));
    write_artifact(rc, "pde_report.txt", &text)?;
    if rc.format == Format::CsvBundle {
        let mut buf = Vec::new();
        sol.write_csv(&mut buf)?;
        write_artifact(
            rc,
            "pde_solution.csv",
            &String::from_utf8(buf).expect("ascii"),
        )?;
    }
    println!(
        "solve-pde {}: u(0,x0) = {:.6e}, ux(0,x0) = {:.6e}",
        rc.models[0].display(),
        u0,
        ux0
    );
    Ok(EXIT_OK)
}

fn cmd_solve_mc(rc: &RunConfig) -> Result<i32, CliError> {
    let (cfg, grid, mc) = load_model(rc, 0)?;
    preflight_validation(&cfg, &grid)?;
    let m = &cfg.model;
    let mut ens = simulate_forward(m, &mc)?;
    simulate_variational(&mut ens, m)?;
    let sol = solve_bsde_regression(&ens, m, &mc)?;
    let wts = malliavin_weights(&ens, m, &sol)?;
    let grad = grad_y0_via_weights(&ens, m, &sol, &wts, mc.z_clip)?;
    let y0 = sol.y0();
    let m_t = wts.m_terminal_mean_se();
    let diag = &sol.diagnostics;

    let mut text = String::new();
    let _ = writeln!(text, "command = solve-mc");
    let _ = writeln!(text, "model = {}", rc.models[0].display());
    let _ = writeln!(
        text,
        "mc = paths {} steps {} seed {} bins {} z_clip {}",
        mc.paths,
        mc.steps,
        mc.seed,
        mc.bins,
        fmt17(mc.z_clip)
    );
    let _ = writeln!(text, "Y0 = {} +- {}", fmt17(y0.value), fmt17(y0.std_error));
    let _ = writeln!(
        text,
        "Y0_direct = {} +- {}",
        fmt17(diag.direct_estimate.value),
        fmt17(diag.direct_estimate.std_error)
    );
    let _ = writeln!(
        text,
        "mean_M_T = {} +- {}",
        fmt17(m_t.value),
        fmt17(m_t.std_error)
    );
    let _ = writeln!(
        text,
        "grad_y0_at_origin = {} +- {}",
        fmt17(grad.at_origin.value),
        fmt17(grad.at_origin.std_error)
    );
    let _ = writeln!(
        text,
        "grad_y0_at_solution = {} +- {}",
        fmt17(grad.at_solution.value),
        fmt17(grad.at_solution.std_error)
    );
    let _ = writeln!(
        text,
        "grad_y0_convention = g'(X_T) terminal factor; f_x at (t,X,0,0) and at (t,X,Y,clip Z)"
    );
    let min_r2 = diag.r2.iter().cloned().fold(f64::INFINITY, f64::min);
    let _ = writeln!(text, "min_step_r2 = {}", fmt17(min_r2));
    let _ = writeln!(
        text,
        "bin_occupancy = [{}, {}] degenerate_bins = {}",
        diag.min_occupancy, diag.max_occupancy, diag.degenerate_bins
    );
    let d = &wts.drift_used;
    let _ = writeln!(
        text,
        "y_quotient = [{}, {}] mean {} limit_substitutions {}",
        fmt17(d.y_quotient_min),
        fmt17(d.y_quotient_max),
        fmt17(d.y_quotient_mean),
        d.y_limit_substitutions
    );
    let _ = writeln!(
        text,
        "girsanov_kernel_norm = max {} mean {} zeroed {}",
        fmt17(d.kernel_norm_max),
        fmt17(d.kernel_norm_mean),
        d.kernel_zeroed
    );
    write_artifact(rc, "mc_report.txt", &text)?;
    if rc.format == Format::CsvBundle {
        let mut buf = Vec::new();
        write_paths_csv(&ens, &sol, &wts, &mut buf)?;
        write_artifact(rc, "paths.csv", &String::from_utf8(buf).expect("ascii"))?;
    }
    println!(
        "solve-mc {}: Y0 = {:.6e} +- {:.2e}, mean M_T = {:.6e} +- {:.2e}",
        rc.models[0].display(),
        y0.value,
        y0.std_error,
        m_t.value,
        m_t.std_error
    );
    Ok(EXIT_OK)
}

fn theorem_text(report: &TheoremReport) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "theorem = {}", report.theorem);
    let _ = writeln!(text, "status = {}", report.status);
    for h in &report.hypotheses {
        let _ = writeln!(
            text,
            "hypothesis[{}] = {} ({})",
            h.name,
            if h.passed { "pass" } else { "FAIL" },
            h.evidence
        );
    }
    let _ = writeln!(text, "conclusion: {}", report.conclusion);
    for (i, c) in report.mc_certificates.iter().enumerate() {
        let _ = writeln!(text, "mc[{i}]: {c}");
    }
    if let Some(c) = &report.strict_certificate {
        let _ = writeln!(text, "strict: {c}");
    }
    let _ = writeln!(
        text,
        "backends = pde:{} mc:{}",
        report.backends_used.pde, report.backends_used.mc
    );
    let _ = writeln!(text, "narrative = {}", report.narrative);
    text
}

fn status_exit(status: ReportStatus) -> i32 {
    match status {
        ReportStatus::Passed => EXIT_OK,
        _ => EXIT_CERT_FAILED,
    }
}

fn summary_line(kind: &str, model: &Path, report: &TheoremReport) -> String {
    format!(
        "{kind} {}: {} (conclusion min {:.6e}, tol {:.1e})",
        model.display(),
        report.status,
        report.conclusion.min_value,
        report.conclusion.tolerance
    )
}

fn conclusion_grid_csv(cert: &SignCertificate) -> String {
    // single-line provenance for the certified quantity
    format!(
        "quantity,min_value,tolerance,passed,strict\n{},{},{},{},{}\n",
        cert.quantity.replace(',', ";"),
        fmt17(cert.min_value),
        fmt17(cert.tolerance),
        cert.passed,
        cert.strict
    )
}

fn cmd_check_positivity(rc: &RunConfig) -> Result<i32, CliError> {
    let (cfg, grid, mc) = load_model(rc, 0)?;
    let report = verify_positivity(&cfg.model, grid, &mc, rc.tol)?;
    write_artifact(rc, "positivity_report.txt", &theorem_text(&report))?;
    if rc.format == Format::CsvBundle {
        write_artifact(
            rc,
            "positivity_certificate.csv",
            &conclusion_grid_csv(&report.conclusion),
        )?;
    }
    println!(
        "{}",
        summary_line("check-positivity", &rc.models[0], &report)
    );
    Ok(status_exit(report.status))
}

fn cmd_check_comonotone(rc: &RunConfig) -> Result<i32, CliError> {
    let (cfg1, grid1, mc1) = load_model(rc, 0)?;
    let (cfg2, grid2, _) = load_model(rc, 1)?;
    // both PDEs are solved on one grid, so take the union of the two
    // resolved spans (explicit --x-min/--x-max still win through load_model)
    let mut grid = grid1;
    grid.x_min = grid.x_min.min(grid2.x_min);
    grid.x_max = grid.x_max.max(grid2.x_max);
    let report = verify_comonotonicity(&cfg1.model, &cfg2.model, grid, &mc1, rc.tol)?;
    write_artifact(rc, "comonotonicity_report.txt", &theorem_text(&report))?;
    if rc.format == Format::CsvBundle {
        write_artifact(
            rc,
            "comonotonicity_certificate.csv",
            &conclusion_grid_csv(&report.conclusion),
        )?;
    }
    println!(
        "check-comonotone {} {}: {} (conclusion min {:.6e})",
        rc.models[0].display(),
        rc.models[1].display(),
        report.status,
        report.conclusion.min_value
    );
    Ok(status_exit(report.status))
}

fn cmd_check_representation(rc: &RunConfig) -> Result<i32, CliError> {
    let (cfg, grid, mc) = load_model(rc, 0)?;
    let report = check_representation(&cfg.model, grid, &mc, rc.tol)?;
    let mut text = String::new();
    let _ = writeln!(text, "command = check-representation");
    let _ = writeln!(text, "model = {}", rc.models[0].display());
    let _ = writeln!(
        text,
        "max_identity_gap = {}",
        fmt17(report.max_identity_gap)
    );
    let _ = writeln!(
        text,
        "mean_identity_gap = {}",
        fmt17(report.mean_identity_gap)
    );
    let _ = writeln!(text, "identity_passed = {}", report.identity_passed);
    let _ = writeln!(
        text,
        "max_regression_gap = {}",
        fmt17(report.max_regression_gap)
    );
    let _ = writeln!(
        text,
        "allowance_at_worst = {}",
        fmt17(report.allowance_at_worst)
    );
    let _ = writeln!(text, "worst_step = {}", report.worst_step);
    let _ = writeln!(text, "regression_passed = {}", report.regression_passed);
    let _ = writeln!(text, "passed = {}", report.passed);
    write_artifact(rc, "representation_report.txt", &text)?;
    println!(
        "check-representation {}: {} (identity gap {:.3e}, regression gap {:.3e})",
        rc.models[0].display(),
        if report.passed { "passed" } else { "FAILED" },
        report.max_identity_gap,
        report.max_regression_gap
    );
    Ok(if report.passed {
        EXIT_OK
    } else {
        EXIT_CERT_FAILED
    })
}

fn cmd_rewrite_sde(rc: &RunConfig) -> Result<i32, CliError> {
    let (cfg, grid, mc) = load_model(rc, 0)?;
    // the rewritten system is the one actually solved, so validate that
    let rewritten_probe = sde_as_bsde(&cfg.model, !rc.decreasing)?;
    let rewritten_cfg = ModelConfig {
        model: rewritten_probe,
        ..cfg.clone()
    };
    preflight_validation(&rewritten_cfg, &grid)?;
    let report = sde_rewrite_selfcheck(&cfg.model, !rc.decreasing, &mc)?;
    write_artifact(
        rc,
        "rewritten_model.cfg",
        &render_model(&report.rewritten, &cfg),
    )?;
    let mut text = String::new();
    let _ = writeln!(text, "command = rewrite-sde");
    let _ = writeln!(text, "model = {}", rc.models[0].display());
    let _ = writeln!(
        text,
        "orientation = {}",
        if report.increasing {
            "increasing"
        } else {
            "decreasing"
        }
    );
    let _ = writeln!(text, "g_tilde = {}", report.rewritten.g());
    let _ = writeln!(text, "f_tilde = {}", report.rewritten.f());
    let _ = writeln!(text, "max_mean_gap = {}", fmt17(report.max_mean_gap));
    let _ = writeln!(
        text,
        "allowance_at_worst = {}",
        fmt17(report.allowance_at_worst)
    );
    let _ = writeln!(text, "worst_step = {}", report.worst_step);
    let _ = writeln!(text, "passed = {}", report.passed);
    write_artifact(rc, "rewrite_report.txt", &text)?;
    println!(
        "rewrite-sde {}: {} (Z~ vs sigma max mean gap {:.3e}, allowance {:.3e})",
        rc.models[0].display(),
        if report.passed { "passed" } else { "FAILED" },
        report.max_mean_gap,
        report.allowance_at_worst
    );
    Ok(if report.passed {
        EXIT_OK
    } else {
        EXIT_CERT_FAILED
    })
}
