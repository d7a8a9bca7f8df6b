//! Sign certificates for the control process.
//!
//! Three families of statements are certified numerically:
//!
//! * comonotonicity ([`verify_comonotonicity`]): if the terminal conditions
//!   and the drivers' x-slices of two models are comonotone and the coupled
//!   volatilities satisfy `sigma1 ⊙ sigma2 >= 0` along paths, then
//!   `Z^1 ⊙ Z^2 >= 0` componentwise;
//! * positivity ([`verify_positivity`]): for a single model with increasing
//!   (resp. decreasing) `g` and `x -> f`, the product `Z ⊙ sigma(t, X)` is
//!   nonnegative (resp. nonpositive), strictly under strict hypotheses;
//! * representation ([`check_representation`]): the regression `Z`, the PDE
//!   gradient `u_x sigma`, and the variational form
//!   `(u_x dX/dx0) (dX/dx0)^{-1} sigma` agree along paths.
//!
//! The primary conclusion evidence always comes from the PDE backend: with a
//! scalar state, `Z^1 ⊙ Z^2 = (sigma1 ⊙ sigma2) u1_x u2_x`, so certifying
//! `u1_x u2_x >= -tol` at every grid node hits the pathwise statement at
//! every reachable state. Monte Carlo evidence corroborates along visited
//! states; regression products are reported as secondary evidence with a
//! statistical tolerance and do not gate the verdict.
//!
//! When a hypothesis fails, the observational products are still computed
//! and reported, but the theorem is never labeled "violated": the report
//! status becomes "hypotheses not satisfied".

use std::fmt;

use thiserror::Error;

use crate::expr::{Expression, Var};
use crate::mc::{
    simulate_forward, simulate_variational, solve_bsde_regression, BsdeSolution, McConfig, McError,
    PathEnsemble,
};
use crate::model::{
    check_comonotone, check_monotone, classify, directions_compatible, validate_assumptions, Axis,
    Direction, ModelError, ModelSpec, MonotonicityReport, SampleBox, DEFAULT_STRICT_TOL,
};
use crate::pde::{solve_pde, Grid, PdeError, PdeSolution, SchemeParams};

/// Default certificate tolerance for deterministic (PDE) evidence.
pub const PDE_TOL: f64 = 1e-6;
/// Bias allowance added on top of 3 standard errors for Monte Carlo evidence.
pub const MC_SLACK: f64 = 0.02;
/// Tolerance for direct sign checks of coefficient fields.
const FIELD_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TheoremError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error("models have different Brownian dimensions: {d1} vs {d2}")]
    DimensionMismatch { d1: usize, d2: usize },
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("ordering hypothesis fails at {0}")]
    OrderingHypothesis(String),
}

/// Componentwise vector product; the certificate convention `a ⊙ b >= 0`
/// means every component is nonnegative.
pub fn odot(a: &[f64], b: &[f64]) -> Result<Vec<f64>, TheoremError> {
    if a.len() != b.len() {
        return Err(TheoremError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// Where a certified minimum was attained.
#[derive(Debug, Clone, PartialEq)]
pub enum ProductLocation {
    GridNode {
        t: f64,
        x: f64,
        component: usize,
    },
    PathStep {
        path: usize,
        step: usize,
        component: usize,
    },
    Nowhere,
}

impl fmt::Display for ProductLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProductLocation::GridNode { t, x, component } => {
                write!(f, "grid node (t={t}, x={x}, component={component})")
            }
            ProductLocation::PathStep {
                path,
                step,
                component,
            } => {
                write!(f, "path {path}, step {step}, component {component}")
            }
            ProductLocation::Nowhere => write!(f, "n/a"),
        }
    }
}

/// Quantified sign evidence: `passed` iff the minimum clears `-tolerance`,
/// `strict` iff it clears `+tolerance`.
#[derive(Debug, Clone)]
pub struct SignCertificate {
    pub quantity: String,
    pub min_value: f64,
    pub argmin: ProductLocation,
    pub tolerance: f64,
    pub passed: bool,
    pub strict: bool,
}

impl SignCertificate {
    pub fn new(
        quantity: impl Into<String>,
        min_value: f64,
        argmin: ProductLocation,
        tolerance: f64,
    ) -> Self {
        SignCertificate {
            quantity: quantity.into(),
            min_value,
            argmin,
            tolerance,
            passed: min_value >= -tolerance,
            strict: min_value > tolerance,
        }
    }
}

impl fmt::Display for SignCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: min {:.6e} >= -{:.1e} required, at {} -> {}{}",
            self.quantity,
            self.min_value,
            self.tolerance,
            self.argmin,
            if self.passed { "pass" } else { "FAIL" },
            if self.strict { " (strict)" } else { "" }
        )
    }
}

#[derive(Debug, Clone)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    pub evidence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStatus {
    Passed,
    CertificateFailed,
    HypothesesNotSatisfied,
}

impl fmt::Display for ReportStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ReportStatus::Passed => "passed",
            ReportStatus::CertificateFailed => "certificate FAILED",
            ReportStatus::HypothesesNotSatisfied => {
                "hypotheses not satisfied - conclusion not asserted"
            }
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BackendsUsed {
    pub pde: bool,
    pub mc: bool,
}

/// Full record of one theorem check.
#[derive(Debug, Clone)]
pub struct TheoremReport {
    pub theorem: String,
    pub hypotheses: Vec<HypothesisCheck>,
    pub hypotheses_satisfied: bool,
    /// Primary conclusion evidence (PDE backend).
    pub conclusion: SignCertificate,
    /// Monte Carlo evidence along simulated paths. The first entry (PDE
    /// gradient along paths) gates the verdict; regression entries are
    /// secondary.
    pub mc_certificates: Vec<SignCertificate>,
    /// Present when the strict form of the hypotheses holds; certifies a
    /// strictly positive interior minimum.
    pub strict_certificate: Option<SignCertificate>,
    pub backends_used: BackendsUsed,
    pub narrative: String,
    pub status: ReportStatus,
}

impl TheoremReport {
    fn finalize(mut self) -> Self {
        if !self.hypotheses_satisfied {
            self.status = ReportStatus::HypothesesNotSatisfied;
        } else {
            let mc_primary_ok = self.mc_certificates.first().is_none_or(|c| c.passed);
            let strict_ok = self.strict_certificate.as_ref().is_none_or(|c| c.strict);
            self.status = if self.conclusion.passed && mc_primary_ok && strict_ok {
                ReportStatus::Passed
            } else {
                ReportStatus::CertificateFailed
            };
        }
        self
    }
}

// ---------------------------------------------------------------------------
// probe lattice for "monotone in x uniformly in (t, y, z)"
// ---------------------------------------------------------------------------

/// (t, y, z) control points over which the driver's x-monotonicity must be
/// uniform. 5 points per axis by default, z per component.
struct ProbeSet {
    t: Axis,
    y: Axis,
    z: Axis,
    d: usize,
}

impl ProbeSet {
    fn for_model(m: &ModelSpec) -> Self {
        ProbeSet {
            t: Axis::new(0.0, m.horizon(), 5),
            y: Axis::new(-5.0, 5.0, 5),
            z: Axis::new(-10.0, 10.0, 5),
            d: m.d(),
        }
    }

    fn for_each<F: FnMut(f64, f64, &[f64])>(&self, mut body: F) {
        let mut z = vec![0.0; self.d];
        let mut idx = vec![0usize; self.d];
        for it in 0..self.t.count {
            let t = self.t.sample(it);
            for iy in 0..self.y.count {
                let y = self.y.sample(iy);
                idx.iter_mut().for_each(|i| *i = 0);
                loop {
                    for (c, i) in idx.iter().enumerate() {
                        z[c] = self.z.sample(*i);
                    }
                    body(t, y, &z);
                    let mut carry = 0;
                    while carry < self.d {
                        idx[carry] += 1;
                        if idx[carry] < self.z.count {
                            break;
                        }
                        idx[carry] = 0;
                        carry += 1;
                    }
                    if carry == self.d {
                        break;
                    }
                }
            }
        }
    }
}

/// Monotonicity of `x -> f(t, x, y, z)` required to hold with one direction
/// across the whole probe lattice.
fn driver_monotone_in_x(
    m: &ModelSpec,
    x_axis: Axis,
    tol: f64,
) -> Result<MonotonicityReport, TheoremError> {
    let fx = m.f().differentiate(Var::X).compile();
    let probes = ProbeSet::for_model(m);
    let mut min_d = f64::INFINITY;
    let mut max_d = f64::NEG_INFINITY;
    let (mut argmin, mut argmax) = (x_axis.sample(0), x_axis.sample(0));
    let mut bad = false;
    for i in 0..x_axis.count {
        let x = x_axis.sample(i);
        probes.for_each(|t, y, z| {
            let v = fx.eval(t, x, y, z);
            if !v.is_finite() {
                bad = true;
                return;
            }
            if v < min_d {
                min_d = v;
                argmin = x;
            }
            if v > max_d {
                max_d = v;
                argmax = x;
            }
        });
    }
    if bad {
        return Err(TheoremError::Precondition(
            "driver derivative not finite on the probe lattice".into(),
        ));
    }
    Ok(classify(min_d, max_d, argmin, argmax, tol))
}

fn x_axis_of(grid: &Grid) -> Axis {
    Axis::new(grid.x_min, grid.x_max, 201)
}

fn h1_precondition(m: &ModelSpec, grid: &Grid, label: &str) -> Result<(), TheoremError> {
    let report = validate_assumptions(m, &SampleBox::for_model(m, grid.x_min, grid.x_max), false)?;
    if !report.passed {
        return Err(TheoremError::Precondition(format!(
            "{label} fails H1 validation on the grid box: {}",
            report
                .violations
                .first()
                .map(|v| v.to_string())
                .unwrap_or_else(|| "unknown violation".into())
        )));
    }
    Ok(())
}

/// Truncation level for the regression driver: four times the largest |Z|
/// the PDE solution sees, floored away from zero for degenerate models.
pub fn z_clip_from_pde(sol: &PdeSolution) -> f64 {
    (4.0 * sol.max_abs_z()).max(1e-3)
}

// ---------------------------------------------------------------------------
// sigma product hypothesis
// ---------------------------------------------------------------------------

/// Evaluate `sigma1(t, X^1) ⊙ sigma2(t, X^2)` on coupled ensembles (same
/// seed, hence the same Brownian increments) and certify the componentwise
/// minimum.
pub fn check_sigma_product(
    m1: &ModelSpec,
    m2: &ModelSpec,
    cfg: &McConfig,
) -> Result<SignCertificate, TheoremError> {
    if m1.d() != m2.d() {
        return Err(TheoremError::DimensionMismatch {
            d1: m1.d(),
            d2: m2.d(),
        });
    }
    let ens1 = simulate_forward(m1, cfg)?;
    let ens2 = simulate_forward(m2, cfg)?;
    Ok(sigma_product_certificate(m1, m2, &ens1, &ens2))
}

fn sigma_product_certificate(
    m1: &ModelSpec,
    m2: &ModelSpec,
    ens1: &PathEnsemble,
    ens2: &PathEnsemble,
) -> SignCertificate {
    let cm1 = m1.compile();
    let cm2 = m2.compile();
    let d = cm1.d;
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    let mut min_value = f64::INFINITY;
    let mut argmin = ProductLocation::Nowhere;
    for p in 0..ens1.paths() {
        for k in 0..=ens1.steps() {
            let t = ens1.t(k);
            cm1.sigma_at(t, ens1.x_at(p, k), &mut s1);
            cm2.sigma_at(t, ens2.x_at(p, k), &mut s2);
            for c in 0..d {
                let v = s1[c] * s2[c];
                if v < min_value {
                    min_value = v;
                    argmin = ProductLocation::PathStep {
                        path: p,
                        step: k,
                        component: c,
                    };
                }
            }
        }
    }
    SignCertificate::new(
        "sigma1 ⊙ sigma2 along coupled paths",
        min_value,
        argmin,
        FIELD_TOL,
    )
}

// ---------------------------------------------------------------------------
// comonotonicity theorem
// ---------------------------------------------------------------------------

/// Certify `Z^1 ⊙ Z^2 >= 0` for two models under the comonotonicity
/// hypotheses.
pub fn verify_comonotonicity(
    m1: &ModelSpec,
    m2: &ModelSpec,
    grid: Grid,
    cfg: &McConfig,
    tol: f64,
) -> Result<TheoremReport, TheoremError> {
    if m1.d() != m2.d() {
        return Err(TheoremError::DimensionMismatch {
            d1: m1.d(),
            d2: m2.d(),
        });
    }
    h1_precondition(m1, &grid, "model 1")?;
    h1_precondition(m2, &grid, "model 2")?;
    let x_axis = x_axis_of(&grid);
    let stol = DEFAULT_STRICT_TOL;

    // hypotheses
    let g1 = check_monotone(m1.g(), x_axis, stol)?;
    let g2 = check_monotone(m2.g(), x_axis, stol)?;
    let f1 = driver_monotone_in_x(m1, x_axis, stol)?;
    let f2 = driver_monotone_in_x(m2, x_axis, stol)?;
    let gg = check_comonotone(m1.g(), m2.g(), x_axis, stol)?;

    let pair = |name: &str, a: &MonotonicityReport, b: &MonotonicityReport| HypothesisCheck {
        name: name.into(),
        passed: directions_compatible(a.direction, b.direction),
        evidence: format!("{} vs {}", a.direction, b.direction),
    };
    let mut hypotheses = vec![
        pair("g1 comonotone with x -> f1", &g1, &f1),
        pair("g2 comonotone with x -> f2", &g2, &f2),
        HypothesisCheck {
            name: "g1 comonotone with g2".into(),
            passed: gg.comonotone,
            evidence: format!(
                "{} vs {}{}",
                g1.direction,
                g2.direction,
                if gg.strict { " (strict)" } else { "" }
            ),
        },
    ];

    // coupled simulations share increments through the common seed
    let ens1 = simulate_forward(m1, cfg)?;
    let ens2 = simulate_forward(m2, cfg)?;
    let sigma_cert = sigma_product_certificate(m1, m2, &ens1, &ens2);
    hypotheses.push(HypothesisCheck {
        name: "sigma1 ⊙ sigma2 >= 0 along paths".into(),
        passed: sigma_cert.passed,
        evidence: sigma_cert.to_string(),
    });
    let hypotheses_satisfied = hypotheses.iter().all(|h| h.passed);

    // PDE backend: min over every grid node of u1_x u2_x
    let sol1 = solve_pde(m1, grid, SchemeParams::default())?;
    let sol2 = solve_pde(m2, grid, SchemeParams::default())?;
    let mut min_value = f64::INFINITY;
    let mut argmin = ProductLocation::Nowhere;
    let mut interior_min = f64::INFINITY;
    let mut interior_argmin = ProductLocation::Nowhere;
    for k in 0..=grid.nt {
        for i in 0..grid.nx {
            let v = sol1.ux_node(k, i) * sol2.ux_node(k, i);
            if v < min_value {
                min_value = v;
                argmin = ProductLocation::GridNode {
                    t: sol1.t(k),
                    x: grid.x(i),
                    component: 0,
                };
            }
            if i > 0 && i + 1 < grid.nx && v < interior_min {
                interior_min = v;
                interior_argmin = ProductLocation::GridNode {
                    t: sol1.t(k),
                    x: grid.x(i),
                    component: 0,
                };
            }
        }
    }
    let conclusion = SignCertificate::new("u1_x * u2_x over the grid", min_value, argmin, tol);

    // MC backend
    let bsde1 = solve_bsde_regression(&ens1, m1, &cfg.with_z_clip(z_clip_from_pde(&sol1)))?;
    let bsde2 = solve_bsde_regression(&ens2, m2, &cfg.with_z_clip(z_clip_from_pde(&sol2)))?;
    let mc_primary = coupled_product_certificate(
        "Z1 ⊙ Z2 (PDE gradient along paths)",
        &ens1,
        &ens2,
        &sol1,
        &sol2,
        MC_SLACK,
    )?;
    let mc_secondary = regression_product_certificate(&ens1, &bsde1, &bsde2, &sol1, &sol2);
    let mc_certificates = vec![mc_primary, mc_secondary];

    // strict variant
    let strict_expected = gg.strict && sigma_cert.strict;
    let strict_certificate = strict_expected.then(|| {
        SignCertificate::new(
            "u1_x * u2_x (interior grid, strict)",
            interior_min,
            interior_argmin,
            0.0,
        )
    });

    let narrative = format!(
        "comonotonicity: hypotheses {}; grid min u1_x*u2_x = {:.3e}; coupled-path min Z1⊙Z2 = {:.3e}{}",
        if hypotheses_satisfied { "hold" } else { "do NOT hold (observational values reported)" },
        min_value,
        mc_certificates[0].min_value,
        if strict_expected {
            format!("; strict interior min = {:.3e}", interior_min)
        } else {
            String::new()
        }
    );

    Ok(TheoremReport {
        theorem: "comonotonicity of control processes".into(),
        hypotheses,
        hypotheses_satisfied,
        conclusion,
        mc_certificates,
        strict_certificate,
        backends_used: BackendsUsed {
            pde: true,
            mc: true,
        },
        narrative,
        status: ReportStatus::Passed,
    }
    .finalize())
}

/// min over paths/steps/components of the ⊙-product of the two PDE
/// gradients evaluated along each model's own paths.
fn coupled_product_certificate(
    quantity: &str,
    ens1: &PathEnsemble,
    ens2: &PathEnsemble,
    sol1: &PdeSolution,
    sol2: &PdeSolution,
    slack: f64,
) -> Result<SignCertificate, TheoremError> {
    let d = ens1.d();
    let mut z1 = vec![0.0; d];
    let mut z2 = vec![0.0; d];
    let mut min_value = f64::INFINITY;
    let mut argmin = ProductLocation::Nowhere;
    for p in 0..ens1.paths() {
        for k in 0..=ens1.steps() {
            let t = ens1.t(k);
            sol1.z_at_clamped(t, ens1.x_at(p, k), &mut z1)?;
            sol2.z_at_clamped(t, ens2.x_at(p, k), &mut z2)?;
            for c in 0..d {
                let v = z1[c] * z2[c];
                if v < min_value {
                    min_value = v;
                    argmin = ProductLocation::PathStep {
                        path: p,
                        step: k,
                        component: c,
                    };
                }
            }
        }
    }
    Ok(SignCertificate::new(quantity, min_value, argmin, slack))
}

/// Secondary evidence: ⊙-product of the raw regression controls, with a
/// fit-noise tolerance (3 bin-level standard errors propagated through the
/// product, plus the bias slack).
fn regression_product_certificate(
    ens1: &PathEnsemble,
    b1: &BsdeSolution,
    b2: &BsdeSolution,
    sol1: &PdeSolution,
    sol2: &PdeSolution,
) -> SignCertificate {
    let d = ens1.d();
    let mut min_value = f64::INFINITY;
    let mut argmin = ProductLocation::Nowhere;
    for p in 0..ens1.paths() {
        for k in 0..ens1.steps() {
            let za = b1.z_at(p, k);
            let zb = b2.z_at(p, k);
            for c in 0..d {
                let v = za[c] * zb[c];
                if v < min_value {
                    min_value = v;
                    argmin = ProductLocation::PathStep {
                        path: p,
                        step: k,
                        component: c,
                    };
                }
            }
        }
    }
    let occupancy = |b: &BsdeSolution| (b.paths() as f64 / 50.0).max(2.0);
    let fit_se1 = max_or_zero(&b1.diagnostics.z_response_sd) / occupancy(b1).sqrt();
    let fit_se2 = max_or_zero(&b2.diagnostics.z_response_sd) / occupancy(b2).sqrt();
    let scale1 = sol1.max_abs_z();
    let scale2 = sol2.max_abs_z();
    let tol = MC_SLACK + 3.0 * (fit_se1 * (scale2 + fit_se2) + fit_se2 * scale1);
    SignCertificate::new("Z1 ⊙ Z2 (regression, secondary)", min_value, argmin, tol)
}

fn max_or_zero(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// positivity corollary
// ---------------------------------------------------------------------------

/// Certify the sign of `Z ⊙ sigma(t, X_t)` for one model from the monotone
/// directions of `g` and `x -> f`.
pub fn verify_positivity(
    m: &ModelSpec,
    grid: Grid,
    cfg: &McConfig,
    tol: f64,
) -> Result<TheoremReport, TheoremError> {
    h1_precondition(m, &grid, "model")?;
    let x_axis = x_axis_of(&grid);
    let stol = DEFAULT_STRICT_TOL;
    let g = check_monotone(m.g(), x_axis, stol)?;
    let f = driver_monotone_in_x(m, x_axis, stol)?;

    let compatible = directions_compatible(g.direction, f.direction);
    // direction of the expected sign: +1 increasing, -1 decreasing, 0 zero
    let expected = match (g.direction, f.direction) {
        (Direction::Increasing, _) | (_, Direction::Increasing) => 1.0,
        (Direction::Decreasing, _) | (_, Direction::Decreasing) => -1.0,
        _ => 0.0,
    };
    let hypotheses = vec![
        HypothesisCheck {
            name: "g monotone".into(),
            passed: g.direction.is_monotone(),
            evidence: format!(
                "{} (derivative range [{:.3e}, {:.3e}])",
                g.direction, g.min_derivative, g.max_derivative
            ),
        },
        HypothesisCheck {
            name: "x -> f monotone, uniformly in (t, y, z)".into(),
            passed: f.direction.is_monotone(),
            evidence: format!(
                "{} (derivative range [{:.3e}, {:.3e}])",
                f.direction, f.min_derivative, f.max_derivative
            ),
        },
        HypothesisCheck {
            name: "g and x -> f share the direction".into(),
            passed: compatible,
            evidence: format!("{} vs {}", g.direction, f.direction),
        },
    ];
    let hypotheses_satisfied = hypotheses.iter().all(|h| h.passed);

    let sol = solve_pde(m, grid, SchemeParams::default())?;
    let ens = simulate_forward(m, cfg)?;
    let bsde = solve_bsde_regression(&ens, m, &cfg.with_z_clip(z_clip_from_pde(&sol)))?;

    let cm = m.compile();
    let d = cm.d;

    let (conclusion, mc_certificates, strict_certificate);
    if expected == 0.0 {
        // degenerate zero certificate: u is x-independent, Z should vanish
        let mut worst = 0.0f64;
        let mut argmin = ProductLocation::Nowhere;
        for k in 0..=grid.nt {
            for i in 0..grid.nx {
                let v = sol.ux_node(k, i).abs();
                if v > worst {
                    worst = v;
                    argmin = ProductLocation::GridNode {
                        t: sol.t(k),
                        x: grid.x(i),
                        component: 0,
                    };
                }
            }
        }
        conclusion =
            SignCertificate::new("-(max |u_x|) (zero control expected)", -worst, argmin, tol);

        // regression |Z| should be indistinguishable from fit noise
        let occ = (bsde.paths() as f64 / 50.0).max(2.0);
        let mut worst_mc = 0.0f64;
        let mut arg_mc = ProductLocation::Nowhere;
        for k in 0..ens.steps() {
            let fit_se = bsde.diagnostics.z_response_sd[k] / occ.sqrt();
            for c in 0..d {
                let mean_abs = (0..ens.paths())
                    .map(|p| bsde.z_at(p, k)[c].abs())
                    .sum::<f64>()
                    / ens.paths() as f64;
                let excess = mean_abs - 3.0 * fit_se;
                if excess > worst_mc {
                    worst_mc = excess;
                    arg_mc = ProductLocation::PathStep {
                        path: 0,
                        step: k,
                        component: c,
                    };
                }
            }
        }
        mc_certificates = vec![SignCertificate::new(
            "-(mean |Z_regression| - 3 fit SE) (zero control expected)",
            -worst_mc,
            arg_mc,
            tol,
        )];
        strict_certificate = None;
    } else {
        // sign certificate reduces to the sign of u_x:
        // Z ⊙ sigma = u_x (sigma ⊙ sigma)
        let mut min_value = f64::INFINITY;
        let mut argmin = ProductLocation::Nowhere;
        for k in 0..=grid.nt {
            for i in 0..grid.nx {
                let v = expected * sol.ux_node(k, i);
                if v < min_value {
                    min_value = v;
                    argmin = ProductLocation::GridNode {
                        t: sol.t(k),
                        x: grid.x(i),
                        component: 0,
                    };
                }
            }
        }
        conclusion = SignCertificate::new(
            if expected > 0.0 {
                "u_x over the grid (Z ⊙ sigma >= 0)"
            } else {
                "-u_x over the grid (Z ⊙ sigma <= 0)"
            },
            min_value,
            argmin,
            tol,
        );

        // MC: signed Z ⊙ sigma with the PDE gradient along simulated paths
        let mut zbuf = vec![0.0; d];
        let mut sbuf = vec![0.0; d];
        let mut mc_min = f64::INFINITY;
        let mut mc_arg = ProductLocation::Nowhere;
        for p in 0..ens.paths() {
            for k in 0..=ens.steps() {
                let t = ens.t(k);
                let x = ens.x_at(p, k);
                sol.z_at_clamped(t, x, &mut zbuf)?;
                cm.sigma_at(t, x.clamp(grid.x_min, grid.x_max), &mut sbuf);
                for c in 0..d {
                    let v = expected * zbuf[c] * sbuf[c];
                    if v < mc_min {
                        mc_min = v;
                        mc_arg = ProductLocation::PathStep {
                            path: p,
                            step: k,
                            component: c,
                        };
                    }
                }
            }
        }
        mc_certificates = vec![SignCertificate::new(
            "signed Z ⊙ sigma (PDE gradient along paths)",
            mc_min,
            mc_arg,
            MC_SLACK,
        )];

        // strict variant: strict monotonicity plus sigma bounded off zero
        let sigma_floor = sigma_component_floor(&cm, &grid, m.horizon());
        let strict_expected = g.strict && f.strict && sigma_floor > stol;
        strict_certificate = strict_expected.then(|| {
            let mut min_v = f64::INFINITY;
            let mut arg = ProductLocation::Nowhere;
            for k in 0..=grid.nt {
                let t = sol.t(k);
                for i in 1..grid.nx - 1 {
                    let x = grid.x(i);
                    cm.sigma_at(t, x, &mut sbuf);
                    for (c, s) in sbuf.iter().enumerate() {
                        let v = expected * sol.ux_node(k, i) * s;
                        if v < min_v {
                            min_v = v;
                            arg = ProductLocation::GridNode { t, x, component: c };
                        }
                    }
                }
            }
            SignCertificate::new("signed Z (interior grid, strict)", min_v, arg, 0.0)
        });
    }

    let narrative = format!(
        "positivity: g is {}, x -> f is {}; expected sign {}; conclusion min {:.3e}",
        g.direction,
        f.direction,
        if expected > 0.0 {
            "+"
        } else if expected < 0.0 {
            "-"
        } else {
            "0 (degenerate)"
        },
        conclusion.min_value
    );

    Ok(TheoremReport {
        theorem: "positivity of Z ⊙ sigma".into(),
        hypotheses,
        hypotheses_satisfied,
        conclusion,
        mc_certificates,
        strict_certificate,
        backends_used: BackendsUsed {
            pde: true,
            mc: true,
        },
        narrative,
        status: ReportStatus::Passed,
    }
    .finalize())
}

/// Smallest |sigma component| over the grid box; strictness needs it > 0.
fn sigma_component_floor(cm: &crate::model::CompiledModel, grid: &Grid, horizon: f64) -> f64 {
    let mut floor = f64::INFINITY;
    let mut buf = vec![0.0; cm.d];
    for it in 0..9 {
        let t = horizon * it as f64 / 8.0;
        for i in 0..grid.nx {
            cm.sigma_at(t, grid.x(i), &mut buf);
            for &s in &buf {
                floor = floor.min(s.abs());
            }
        }
    }
    floor
}

// ---------------------------------------------------------------------------
// SDE-as-BSDE rewrite
// ---------------------------------------------------------------------------

/// Rewrite the forward SDE as a backward equation.
///
/// Increasing orientation: `g~(x) = x`, `f~(t, y) = -b(t, y)`, and the
/// control of the rewritten equation is `sigma(t, X_t)` itself. Decreasing:
/// `g~(x) = -x`, `f~(t, y) = b(t, -y)` (the rewrite of `-X`).
pub fn sde_as_bsde(m: &ModelSpec, increasing: bool) -> Result<ModelSpec, TheoremError> {
    let y = Expression::variable(Var::Y);
    let (g, f) = if increasing {
        (
            Expression::variable(Var::X),
            m.b().substitute(Var::X, &y).negated(),
        )
    } else {
        let minus_y = y.negated();
        (
            Expression::variable(Var::X).negated(),
            m.b().substitute(Var::X, &minus_y),
        )
    };
    Ok(m.with_backward(f, g)?)
}

/// Self-check report: the regression control of the rewritten BSDE against
/// `±sigma(t, X_t)` along paths.
#[derive(Debug, Clone)]
pub struct SdeRewriteReport {
    pub rewritten: ModelSpec,
    pub increasing: bool,
    /// max over steps/components of |cross-path mean (Z~ - sign * sigma)|
    pub max_mean_gap: f64,
    /// the 3 SE + slack allowance at the worst step
    pub allowance_at_worst: f64,
    pub worst_step: usize,
    pub passed: bool,
}

/// Solve the rewritten BSDE by regression and check `Z~ = ±sigma(t, X_t)`.
pub fn sde_rewrite_selfcheck(
    m: &ModelSpec,
    increasing: bool,
    cfg: &McConfig,
) -> Result<SdeRewriteReport, TheoremError> {
    let rewritten = sde_as_bsde(m, increasing)?;
    let ens = simulate_forward(&rewritten, cfg)?;
    let sol = solve_bsde_regression(&ens, &rewritten, cfg)?;
    let cm = m.compile();
    let d = cm.d;
    let sign = if increasing { 1.0 } else { -1.0 };
    let mut sbuf = vec![0.0; d];
    let mut max_mean_gap = 0.0f64;
    let mut allowance_at_worst = f64::INFINITY;
    let mut worst_step = 0;
    let mut passed = true;
    for k in 0..ens.steps() {
        let t = ens.t(k);
        let se = sol.z_mean_se(k);
        let allowance = 3.0 * se + 0.05;
        for c in 0..d {
            let mut gap = 0.0;
            for p in 0..ens.paths() {
                cm.sigma_at(t, ens.x_at(p, k), &mut sbuf);
                gap += sol.z_at(p, k)[c] - sign * sbuf[c];
            }
            gap = (gap / ens.paths() as f64).abs();
            if gap > allowance {
                passed = false;
            }
            if gap > max_mean_gap {
                max_mean_gap = gap;
                allowance_at_worst = allowance;
                worst_step = k;
            }
        }
    }
    Ok(SdeRewriteReport {
        rewritten,
        increasing,
        max_mean_gap,
        allowance_at_worst,
        worst_step,
        passed,
    })
}

// ---------------------------------------------------------------------------
// representation identity
// ---------------------------------------------------------------------------

/// Agreement of the three control estimates along paths.
#[derive(Debug, Clone)]
pub struct RepresentationReport {
    /// max |(u_x dX/dx0)(dX/dx0)^{-1} sigma - u_x sigma| over all nodes; an
    /// algebraic identity up to rounding.
    pub max_identity_gap: f64,
    pub mean_identity_gap: f64,
    pub identity_passed: bool,
    /// max over steps/components of |cross-path mean (Z_regression - Z_pde)|
    pub max_regression_gap: f64,
    pub allowance_at_worst: f64,
    pub worst_step: usize,
    pub regression_passed: bool,
    pub passed: bool,
}

/// Compare regression Z, PDE gradient Z, and the variational form along
/// simulated paths.
pub fn check_representation(
    m: &ModelSpec,
    grid: Grid,
    cfg: &McConfig,
    tol: f64,
) -> Result<RepresentationReport, TheoremError> {
    h1_precondition(m, &grid, "model")?;
    let sol = solve_pde(m, grid, SchemeParams::default())?;
    let mut ens = simulate_forward(m, cfg)?;
    simulate_variational(&mut ens, m)?;
    let bsde = solve_bsde_regression(&ens, m, &cfg.with_z_clip(z_clip_from_pde(&sol)))?;

    let cm = m.compile();
    let d = cm.d;
    let mut sbuf = vec![0.0; d];
    let mut max_identity_gap = 0.0f64;
    let mut sum_identity_gap = 0.0f64;
    let mut count = 0usize;
    let mut gap_sums = vec![0.0f64; ens.steps() * d];

    for p in 0..ens.paths() {
        for k in 0..=ens.steps() {
            let t = ens.t(k);
            let x = ens.x_at(p, k);
            let xc = x.clamp(grid.x_min, grid.x_max);
            let ux = sol.eval_ux_clamped(t, x)?;
            cm.sigma_at(t, xc, &mut sbuf);
            let grad = ens.grad_at(p, k);
            let grad_y = ux * grad;
            for c in 0..d {
                let z_pde = ux * sbuf[c];
                let z_var = grad_y * (1.0 / grad) * sbuf[c];
                let gap = (z_var - z_pde).abs();
                max_identity_gap = max_identity_gap.max(gap);
                sum_identity_gap += gap;
                count += 1;
                if k < ens.steps() {
                    gap_sums[k * d + c] += bsde.z_at(p, k)[c] - z_pde;
                }
            }
        }
    }

    let mut max_regression_gap = 0.0f64;
    let mut allowance_at_worst = f64::INFINITY;
    let mut worst_step = 0;
    let mut regression_passed = true;
    for k in 0..ens.steps() {
        let allowance = 3.0 * bsde.z_mean_se(k) + 0.05;
        for c in 0..d {
            let gap = (gap_sums[k * d + c] / ens.paths() as f64).abs();
            if gap > allowance {
                regression_passed = false;
            }
            if gap > max_regression_gap {
                max_regression_gap = gap;
                allowance_at_worst = allowance;
                worst_step = k;
            }
        }
    }

    let identity_passed = max_identity_gap <= tol;
    Ok(RepresentationReport {
        max_identity_gap,
        mean_identity_gap: sum_identity_gap / count as f64,
        identity_passed,
        max_regression_gap,
        allowance_at_worst,
        worst_step,
        regression_passed,
        passed: identity_passed && regression_passed,
    })
}

// ---------------------------------------------------------------------------
// quadratic-BSDE comparison (oracle hypothesis)
// ---------------------------------------------------------------------------

/// Certify `u1 >= u2` at every grid node for models with ordered data
/// (`g1 >= g2` and `f1 >= f2`, both verified by sampling first).
pub fn check_y_comparison(
    m1: &ModelSpec,
    m2: &ModelSpec,
    grid: Grid,
    tol: f64,
) -> Result<SignCertificate, TheoremError> {
    if m1.d() != m2.d() {
        return Err(TheoremError::DimensionMismatch {
            d1: m1.d(),
            d2: m2.d(),
        });
    }
    // ordering preconditions by sampling
    let x_axis = x_axis_of(&grid);
    let cg1 = m1.g().compile();
    let cg2 = m2.g().compile();
    for i in 0..x_axis.count {
        let x = x_axis.sample(i);
        if cg1.eval_tx(0.0, x) < cg2.eval_tx(0.0, x) - FIELD_TOL {
            return Err(TheoremError::OrderingHypothesis(format!(
                "g1 < g2 at x={x}"
            )));
        }
    }
    let cf1 = m1.f().compile();
    let cf2 = m2.f().compile();
    let probes = ProbeSet::for_model(m1);
    let mut violation: Option<String> = None;
    for i in 0..x_axis.count {
        let x = x_axis.sample(i);
        probes.for_each(|t, y, z| {
            if violation.is_none() && cf1.eval(t, x, y, z) < cf2.eval(t, x, y, z) - FIELD_TOL {
                violation = Some(format!("f1 < f2 at (t={t}, x={x}, y={y}, z={z:?})"));
            }
        });
    }
    if let Some(point) = violation {
        return Err(TheoremError::OrderingHypothesis(point));
    }

    let sol1 = solve_pde(m1, grid, SchemeParams::default())?;
    let sol2 = solve_pde(m2, grid, SchemeParams::default())?;
    let mut min_value = f64::INFINITY;
    let mut argmin = ProductLocation::Nowhere;
    for k in 0..=grid.nt {
        for i in 0..grid.nx {
            let v = sol1.u_node(k, i) - sol2.u_node(k, i);
            if v < min_value {
                min_value = v;
                argmin = ProductLocation::GridNode {
                    t: sol1.t(k),
                    x: grid.x(i),
                    component: 0,
                };
            }
        }
    }
    Ok(SignCertificate::new(
        "u1 - u2 over the grid",
        min_value,
        argmin,
        tol,
    ))
}
