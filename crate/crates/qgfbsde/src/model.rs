//! Model description and numeric validation of the standing assumptions.
//!
//! A [`ModelSpec`] collects the coefficient functions of a decoupled
//! forward-backward system
//!
//! ```text
//! dX_t = b(t, X_t) dt + sigma(t, X_t) . dW_t,          X_0 = x0,
//! Y_t  = g(X_T) + int_t^T f(s, X_s, Y_s, Z_s) ds - int_t^T Z_s . dW_s,
//! ```
//!
//! with scalar state, `d`-dimensional Brownian motion, and a driver that may
//! grow quadratically in `z`. Validation is by sampling: the reports record
//! the grid so that any failure is reproducible. Sampling cannot certify a
//! global bound, but it pins down the constants on a box and flags growth
//! that no finite constant can absorb.

use std::fmt;

use thiserror::Error;

use crate::expr::{Bindings, CompiledExpr, EvalError, Expression, ParseError, Var};
use crate::rng;

/// Growth from the inner half of the box to the full box that is treated as
/// evidence no finite constant can hold: a quadratic-envelope ratio grows by
/// < 4x for any admissible model, while exp-type growth blows past it.
const TREND_FACTOR: f64 = 4.0;

/// Floor below which the sampled ellipticity counts as degenerate.
const ELLIPTICITY_TOL: f64 = 1e-10;

/// Fixed seed for the H2 difference-quotient pair sampling.
const H2_SEED: u64 = 0x51D_CAFE;

pub const DEFAULT_STRICT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("model needs at least one sigma component")]
    NoDiffusion,
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("initial state must be finite")]
    BadInitialState,
    #[error("{role} must not reference `{var}`")]
    VariableOutOfScope { role: &'static str, var: Var },
    #[error("{role} references z{index} but the model has d={d} Brownian components")]
    ZIndexTooLarge {
        role: &'static str,
        index: usize,
        d: usize,
    },
    #[error("failed to parse {role}: {source}")]
    Parse {
        role: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("expression depends on `{0}`; only x is allowed here")]
    NotUnivariate(Var),
    #[error("sample grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Full FBSDE problem description. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    b: Expression,
    sigma: Vec<Expression>,
    f: Expression,
    g: Expression,
    horizon: f64,
    x0: f64,
}

impl ModelSpec {
    pub fn new(
        b: Expression,
        sigma: Vec<Expression>,
        f: Expression,
        g: Expression,
        horizon: f64,
        x0: f64,
    ) -> Result<Self, ModelError> {
        if sigma.is_empty() {
            return Err(ModelError::NoDiffusion);
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(ModelError::BadHorizon(horizon));
        }
        if !x0.is_finite() {
            return Err(ModelError::BadInitialState);
        }
        let d = sigma.len();
        check_scope(&b, "drift b", &[Var::T, Var::X], d)?;
        for s in &sigma {
            check_scope(s, "volatility sigma", &[Var::T, Var::X], d)?;
        }
        check_scope(&g, "terminal condition g", &[Var::X], d)?;
        check_driver_scope(&f, d)?;
        Ok(Self {
            b,
            sigma,
            f,
            g,
            horizon,
            x0,
        })
    }

    /// Parse all parts from source text. `sigma` has one entry per Brownian
    /// component; its length fixes `d`.
    pub fn from_sources(
        b: &str,
        sigma: &[&str],
        f: &str,
        g: &str,
        horizon: f64,
        x0: f64,
    ) -> Result<Self, ModelError> {
        let parse = |role: &'static str, src: &str| {
            Expression::parse(src).map_err(|source| ModelError::Parse { role, source })
        };
        let b = parse("drift b", b)?;
        let sigma = sigma
            .iter()
            .map(|s| parse("volatility sigma", s))
            .collect::<Result<Vec<_>, _>>()?;
        let f = parse("driver f", f)?;
        let g = parse("terminal condition g", g)?;
        Self::new(b, sigma, f, g, horizon, x0)
    }

    pub fn b(&self) -> &Expression {
        &self.b
    }
    pub fn sigma(&self) -> &[Expression] {
        &self.sigma
    }
    pub fn f(&self) -> &Expression {
        &self.f
    }
    pub fn g(&self) -> &Expression {
        &self.g
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn x0(&self) -> f64 {
        self.x0
    }
    /// Brownian dimension.
    pub fn d(&self) -> usize {
        self.sigma.len()
    }

    /// Same forward part, new backward data. Used by the SDE-as-BSDE rewrite.
    pub fn with_backward(&self, f: Expression, g: Expression) -> Result<Self, ModelError> {
        Self::new(
            self.b.clone(),
            self.sigma.clone(),
            f,
            g,
            self.horizon,
            self.x0,
        )
    }

    /// Compile every coefficient and the derivatives the solvers need.
    pub fn compile(&self) -> CompiledModel {
        CompiledModel::new(self)
    }
}

fn check_scope(
    e: &Expression,
    role: &'static str,
    allowed: &[Var],
    d: usize,
) -> Result<(), ModelError> {
    for v in e.variables() {
        match v {
            Var::Z(k) => {
                if !allowed.iter().any(|a| matches!(a, Var::Z(_))) {
                    return Err(ModelError::VariableOutOfScope { role, var: v });
                }
                if k > d {
                    return Err(ModelError::ZIndexTooLarge { role, index: k, d });
                }
            }
            other => {
                if !allowed.contains(&other) {
                    return Err(ModelError::VariableOutOfScope { role, var: other });
                }
            }
        }
    }
    Ok(())
}

fn check_driver_scope(f: &Expression, d: usize) -> Result<(), ModelError> {
    for v in f.variables() {
        if let Var::Z(k) = v {
            if k > d {
                return Err(ModelError::ZIndexTooLarge {
                    role: "driver f",
                    index: k,
                    d,
                });
            }
        }
    }
    Ok(())
}

/// All coefficients and first derivatives, flattened for fast evaluation.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    pub d: usize,
    pub horizon: f64,
    pub x0: f64,
    pub b: CompiledExpr,
    pub sigma: Vec<CompiledExpr>,
    pub f: CompiledExpr,
    pub g: CompiledExpr,
    pub b_x: CompiledExpr,
    pub sigma_x: Vec<CompiledExpr>,
    pub f_x: CompiledExpr,
    pub f_y: CompiledExpr,
    pub f_z: Vec<CompiledExpr>,
    pub g_x: CompiledExpr,
}

impl CompiledModel {
    fn new(m: &ModelSpec) -> Self {
        let d = m.d();
        CompiledModel {
            d,
            horizon: m.horizon,
            x0: m.x0,
            b: m.b.compile(),
            sigma: m.sigma.iter().map(Expression::compile).collect(),
            f: m.f.compile(),
            g: m.g.compile(),
            b_x: m.b.differentiate(Var::X).compile(),
            sigma_x: m
                .sigma
                .iter()
                .map(|s| s.differentiate(Var::X).compile())
                .collect(),
            f_x: m.f.differentiate(Var::X).compile(),
            f_y: m.f.differentiate(Var::Y).compile(),
            f_z: (1..=d)
                .map(|k| m.f.differentiate(Var::Z(k)).compile())
                .collect(),
            g_x: m.g.differentiate(Var::X).compile(),
        }
    }

    /// Write `sigma(t, x)` into `out` (length `d`).
    #[inline]
    pub fn sigma_at(&self, t: f64, x: f64, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(&self.sigma) {
            *o = s.eval_tx(t, x);
        }
    }

    /// `|sigma(t, x)|^2`.
    #[inline]
    pub fn sigma_norm2(&self, t: f64, x: f64) -> f64 {
        self.sigma
            .iter()
            .map(|s| {
                let v = s.eval_tx(t, x);
                v * v
            })
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Assumption validation
// ---------------------------------------------------------------------------

/// One axis of the sampling lattice.
#[derive(Debug, Clone, Copy)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Self {
        Self { lo, hi, count }
    }

    pub fn sample(&self, i: usize) -> f64 {
        if self.count <= 1 {
            0.5 * (self.lo + self.hi)
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64
        }
    }

    fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.sample(i)).collect()
    }

    /// Middle half of the range, used by the growth-trend test.
    fn is_inner(&self, v: f64) -> bool {
        let quarter = 0.25 * (self.hi - self.lo);
        v >= self.lo + quarter && v <= self.hi - quarter
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]x{}", self.lo, self.hi, self.count)
    }
}

/// Bounded sampling box in `(t, x, y, z)`. The `z` axis applies to every
/// Brownian component, so the lattice has `z.count^d` control points.
#[derive(Debug, Clone)]
pub struct SampleBox {
    pub t: Axis,
    pub x: Axis,
    pub y: Axis,
    pub z: Axis,
}

impl SampleBox {
    /// Default validation box: full horizon, the given spatial window,
    /// moderate y, and |z| up to 10 per component.
    pub fn for_model(m: &ModelSpec, x_lo: f64, x_hi: f64) -> Self {
        SampleBox {
            t: Axis::new(0.0, m.horizon(), 5),
            x: Axis::new(x_lo, x_hi, 9),
            y: Axis::new(-5.0, 5.0, 5),
            z: Axis::new(-10.0, 10.0, 7),
        }
    }

    fn is_empty(&self) -> bool {
        self.t.count == 0 || self.x.count == 0 || self.y.count == 0 || self.z.count == 0
    }
}

impl fmt::Display for SampleBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t:{} x:{} y:{} z:{}", self.t, self.x, self.y, self.z)
    }
}

/// A point of the sampling lattice, kept in violation records so failures
/// can be replayed.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: Vec<f64>,
}

impl fmt::Display for SamplePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(t={}, x={}, y={}, z={:?})",
            self.t, self.x, self.y, self.z
        )
    }
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub condition: String,
    pub point: SamplePoint,
    pub lhs: f64,
    pub rhs: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at {}: lhs {:.6e} exceeds {:.6e}",
            self.condition, self.point, self.lhs, self.rhs
        )
    }
}

/// Result of sampling the growth, boundedness, ellipticity, and (optionally)
/// Lipschitz conditions on a box.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// Smallest constant making the four driver growth bounds hold on the
    /// samples: |f| and |f_x| against 1+|y|+|z|^2, |f_y| against 1, |f_z|
    /// against 1+|z|.
    pub growth_constant_m: f64,
    /// Implied Lipschitz constant from difference quotients; None when the
    /// H2 check was not requested.
    pub lipschitz_constant_k: Option<f64>,
    /// min |sigma(t, x)| over the (t, x) samples.
    pub ellipticity_floor: f64,
    pub violations: Vec<Violation>,
    pub passed: bool,
    pub grid_used: String,
    /// Per-condition fitted constants, for the report narrative.
    pub observed_bounds: Vec<(String, f64)>,
}

/// Track the largest ratio |value|/envelope over all samples and over the
/// inner half-box; a large jump between the two is the superlinear-growth
/// signal.
struct RatioTrack {
    name: &'static str,
    max_all: f64,
    argmax: Option<SamplePoint>,
    max_inner: f64,
    inner_seen: bool,
}

impl RatioTrack {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            max_all: 0.0,
            argmax: None,
            max_inner: 0.0,
            inner_seen: false,
        }
    }

    fn record(&mut self, ratio: f64, inner: bool, point: &SamplePoint) {
        if ratio > self.max_all {
            self.max_all = ratio;
            self.argmax = Some(point.clone());
        }
        if inner {
            self.inner_seen = true;
            self.max_inner = self.max_inner.max(ratio);
        }
    }

    fn into_violation(self) -> (Option<Violation>, (String, f64)) {
        let bound = (self.name.to_string(), self.max_all);
        let trend_broken =
            self.inner_seen && self.max_all > 1e-8 && self.max_all > TREND_FACTOR * self.max_inner;
        if trend_broken {
            let point = self.argmax.clone().expect("max_all > 0 implies a witness");
            (
                Some(Violation {
                    condition: format!("{}: growth exceeds any finite-constant trend", self.name),
                    point,
                    lhs: self.max_all,
                    rhs: TREND_FACTOR * self.max_inner,
                }),
                bound,
            )
        } else {
            (None, bound)
        }
    }
}

/// Sample the H1 bounds (and H2 difference quotients when `check_h2`) of a
/// model over `grid`. `passed` is true iff no violation was recorded.
///
/// Time regularity (Holder continuity of the coefficients in `t` and uniform
/// continuity of the driver in `t`) is not checked: pointwise sampling
/// cannot certify a modulus of continuity. Coverage here is best effort and
/// limited to the growth, boundedness, ellipticity, and Lipschitz families
/// above.
pub fn validate_assumptions(
    m: &ModelSpec,
    grid: &SampleBox,
    check_h2: bool,
) -> Result<AssumptionReport, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    let d = m.d();
    let fx = m.f().differentiate(Var::X);
    let fy = m.f().differentiate(Var::Y);
    let fz: Vec<Expression> = (1..=d).map(|k| m.f().differentiate(Var::Z(k))).collect();
    let bx = m.b().differentiate(Var::X);
    let sx: Vec<Expression> = m.sigma().iter().map(|s| s.differentiate(Var::X)).collect();
    let gx = m.g().differentiate(Var::X);

    let mut violations = Vec::new();
    let mut f_growth = RatioTrack::new("H1: |f| <= M(1+|y|+|z|^2)");
    let mut fx_growth = RatioTrack::new("H1: |df/dx| <= M(1+|y|+|z|^2)");
    let mut fy_bound = RatioTrack::new("H1: |df/dy| <= M");
    let mut fz_growth = RatioTrack::new("H1: |df/dz| <= M(1+|z|)");
    let mut g_bound = RatioTrack::new("H1: g bounded");
    let mut gx_bound = RatioTrack::new("H1: dg/dx bounded");
    let mut bx_bound = RatioTrack::new("H1: db/dx bounded");
    let mut sx_bound = RatioTrack::new("H1: dsigma/dx bounded");
    let mut b0_bound = RatioTrack::new("H1: |b(.,0)| bounded");
    let mut s0_bound = RatioTrack::new("H1: |sigma(.,0)| bounded");

    let eval_failure =
        |violations: &mut Vec<Violation>, what: &str, p: &SamplePoint, e: &EvalError| {
            violations.push(Violation {
                condition: format!("evaluation failure in {what}: {e}"),
                point: p.clone(),
                lhs: f64::NAN,
                rhs: f64::NAN,
            });
        };

    // --- x-only data: g, g' ------------------------------------------------
    for x in grid.x.values() {
        let p = SamplePoint {
            t: 0.0,
            x,
            y: 0.0,
            z: vec![0.0; d],
        };
        let inner = grid.x.is_inner(x);
        let bind = Bindings::new(0.0, x, 0.0, &[]);
        match m.g().eval(bind) {
            Ok(v) => g_bound.record(v.abs(), inner, &p),
            Err(e) => eval_failure(&mut violations, "g", &p, &e),
        }
        match gx.eval(bind) {
            Ok(v) => gx_bound.record(v.abs(), inner, &p),
            Err(e) => eval_failure(&mut violations, "dg/dx", &p, &e),
        }
    }

    // --- (t, x) data: b', sigma', ellipticity -------------------------------
    // The ellipticity floor is sampled on a refined x-axis that always
    // includes x = 0 and x0-ish interior points, so a sigma vanishing inside
    // the box is actually seen.
    let mut ellipticity_floor = f64::INFINITY;
    let mut ellipticity_witness = SamplePoint {
        t: 0.0,
        x: 0.0,
        y: 0.0,
        z: vec![0.0; d],
    };
    let fine_x = Axis::new(grid.x.lo, grid.x.hi, (4 * grid.x.count + 1).max(33));
    let mut ellipticity_xs: Vec<f64> = fine_x.values();
    if grid.x.lo <= 0.0 && 0.0 <= grid.x.hi {
        ellipticity_xs.push(0.0);
    }
    for t in grid.t.values() {
        for &x in &ellipticity_xs {
            let mut norm2 = 0.0;
            let mut sig_ok = true;
            for s in m.sigma() {
                match s.eval(Bindings::tx(t, x)) {
                    Ok(v) => norm2 += v * v,
                    Err(_) => sig_ok = false,
                }
            }
            if sig_ok {
                let norm = norm2.sqrt();
                if norm < ellipticity_floor {
                    ellipticity_floor = norm;
                    ellipticity_witness = SamplePoint {
                        t,
                        x,
                        y: 0.0,
                        z: vec![0.0; d],
                    };
                }
            }
        }
    }
    for t in grid.t.values() {
        for x in grid.x.values() {
            let p = SamplePoint {
                t,
                x,
                y: 0.0,
                z: vec![0.0; d],
            };
            let inner = grid.t.is_inner(t) && grid.x.is_inner(x);
            let bind = Bindings::tx(t, x);
            match bx.eval(bind) {
                Ok(v) => bx_bound.record(v.abs(), inner, &p),
                Err(e) => eval_failure(&mut violations, "db/dx", &p, &e),
            }
            for (c, s) in m.sigma().iter().enumerate() {
                if let Err(e) = s.eval(bind) {
                    eval_failure(&mut violations, "sigma", &p, &e);
                }
                match sx[c].eval(bind) {
                    Ok(v) => sx_bound.record(v.abs(), inner, &p),
                    Err(e) => eval_failure(&mut violations, "dsigma/dx", &p, &e),
                }
            }
        }
        // |b(t,0)|, |sigma(t,0)| along the time axis
        let p0 = SamplePoint {
            t,
            x: 0.0,
            y: 0.0,
            z: vec![0.0; d],
        };
        let bind0 = Bindings::tx(t, 0.0);
        match m.b().eval(bind0) {
            Ok(v) => b0_bound.record(v.abs(), grid.t.is_inner(t), &p0),
            Err(e) => eval_failure(&mut violations, "b(.,0)", &p0, &e),
        }
        let mut n2 = 0.0;
        let mut ok = true;
        for s in m.sigma() {
            match s.eval(bind0) {
                Ok(v) => n2 += v * v,
                Err(e) => {
                    eval_failure(&mut violations, "sigma(.,0)", &p0, &e);
                    ok = false;
                }
            }
        }
        if ok {
            s0_bound.record(n2.sqrt(), grid.t.is_inner(t), &p0);
        }
    }
    if !ellipticity_floor.is_finite() {
        ellipticity_floor = 0.0;
    }
    if ellipticity_floor <= ELLIPTICITY_TOL {
        violations.push(Violation {
            condition: "H1: sigma uniformly elliptic (min |sigma| > 0)".into(),
            point: ellipticity_witness,
            lhs: ellipticity_floor,
            rhs: ELLIPTICITY_TOL,
        });
    }

    // --- full (t, x, y, z) lattice: driver growth ---------------------------
    let mut z = vec![0.0; d];
    let mut z_idx = vec![0usize; d];
    for t in grid.t.values() {
        for x in grid.x.values() {
            for y in grid.y.values() {
                z_idx.iter_mut().for_each(|i| *i = 0);
                loop {
                    for (c, idx) in z_idx.iter().enumerate() {
                        z[c] = grid.z.sample(*idx);
                    }
                    let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let env_quad = 1.0 + y.abs() + z_norm * z_norm;
                    let env_lin = 1.0 + z_norm;
                    let inner = grid.t.is_inner(t)
                        && grid.x.is_inner(x)
                        && grid.y.is_inner(y)
                        && z.iter().all(|v| grid.z.is_inner(*v));
                    let p = SamplePoint {
                        t,
                        x,
                        y,
                        z: z.clone(),
                    };
                    let bind = Bindings::new(t, x, y, &z);
                    match m.f().eval(bind) {
                        Ok(v) => f_growth.record(v.abs() / env_quad, inner, &p),
                        Err(e) => eval_failure(&mut violations, "f", &p, &e),
                    }
                    match fx.eval(bind) {
                        Ok(v) => fx_growth.record(v.abs() / env_quad, inner, &p),
                        Err(e) => eval_failure(&mut violations, "df/dx", &p, &e),
                    }
                    match fy.eval(bind) {
                        Ok(v) => fy_bound.record(v.abs(), inner, &p),
                        Err(e) => eval_failure(&mut violations, "df/dy", &p, &e),
                    }
                    let mut fz_norm2 = 0.0;
                    let mut ok = true;
                    for dz in &fz {
                        match dz.eval(bind) {
                            Ok(v) => fz_norm2 += v * v,
                            Err(e) => {
                                eval_failure(&mut violations, "df/dz", &p, &e);
                                ok = false;
                            }
                        }
                    }
                    if ok {
                        fz_growth.record(fz_norm2.sqrt() / env_lin, inner, &p);
                    }
                    // advance the z multi-index
                    let mut carry = 0;
                    while carry < d {
                        z_idx[carry] += 1;
                        if z_idx[carry] < grid.z.count {
                            break;
                        }
                        z_idx[carry] = 0;
                        carry += 1;
                    }
                    if carry == d {
                        break;
                    }
                }
            }
        }
    }

    let growth_constant_m = f_growth
        .max_all
        .max(fx_growth.max_all)
        .max(fy_bound.max_all)
        .max(fz_growth.max_all);

    let mut observed_bounds = Vec::new();
    for track in [
        f_growth, fx_growth, fy_bound, fz_growth, g_bound, gx_bound, bx_bound, sx_bound, b0_bound,
        s0_bound,
    ] {
        let (violation, bound) = track.into_violation();
        if let Some(v) = violation {
            violations.push(v);
        }
        observed_bounds.push(bound);
    }

    // --- H2 difference quotients --------------------------------------------
    let lipschitz_constant_k = if check_h2 {
        Some(h2_implied_k(m, grid, &fx, &fy, &fz, &bx, &sx, &gx)?)
    } else {
        None
    };

    let passed = violations.is_empty();
    Ok(AssumptionReport {
        growth_constant_m,
        lipschitz_constant_k,
        ellipticity_floor,
        violations,
        passed,
        grid_used: format!("{grid} h2:{check_h2} h2_seed:{H2_SEED:#x}"),
        observed_bounds,
    })
}

const H2_PAIRS: usize = 200;

#[allow(clippy::too_many_arguments)]
fn h2_implied_k(
    m: &ModelSpec,
    grid: &SampleBox,
    fx: &Expression,
    fy: &Expression,
    fz: &[Expression],
    bx: &Expression,
    sx: &[Expression],
    gx: &Expression,
) -> Result<f64, ModelError> {
    let d = m.d();
    let mut k = 0.0f64;
    let draw =
        |i: u64, slot: u64, axis: &Axis| rng::uniform_in(H2_SEED, i, slot, 0, axis.lo, axis.hi);
    for i in 0..H2_PAIRS as u64 {
        let t = draw(i, 0, &grid.t);
        let x1 = draw(i, 1, &grid.x);
        let y1 = draw(i, 2, &grid.y);
        let x2 = draw(i, 3, &grid.x);
        let y2 = draw(i, 4, &grid.y);
        let z1: Vec<f64> = (0..d).map(|c| draw(i, 5 + c as u64, &grid.z)).collect();
        let z2: Vec<f64> = (0..d)
            .map(|c| draw(i, 5 + (d + c) as u64, &grid.z))
            .collect();
        let bind1 = Bindings::new(t, x1, y1, &z1);
        let bind2 = Bindings::new(t, x2, y2, &z2);

        let z1n = z1.iter().map(|v| v * v).sum::<f64>().sqrt();
        let z2n = z2.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dx = (x1 - x2).abs();
        let dy = (y1 - y2).abs();
        let dz = z1
            .iter()
            .zip(&z2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let zsum = 1.0 + z1n + z2n;

        // On eval failure the pair is skipped; H1 already reports the domain
        // problem at lattice points.
        let quot = |num: f64, den: f64| if den > 1e-9 { num / den } else { 0.0 };
        if let (Ok(a), Ok(b)) = (fx.eval(bind1), fx.eval(bind2)) {
            k = k.max(quot((a - b).abs(), zsum * (zsum * dx + dy + dz)));
        }
        if let (Ok(a), Ok(b)) = (fy.eval(bind1), fy.eval(bind2)) {
            k = k.max(quot((a - b).abs(), dx + dy + dz));
        }
        let fz_pair: Option<f64> = fz
            .iter()
            .map(|e| match (e.eval(bind1), e.eval(bind2)) {
                (Ok(a), Ok(b)) => Some((a - b) * (a - b)),
                _ => None,
            })
            .sum();
        if let Some(n2) = fz_pair {
            k = k.max(quot(n2.sqrt(), zsum * dx + dy + dz));
        }
        let bind_tx1 = Bindings::tx(t, x1);
        let bind_tx2 = Bindings::tx(t, x2);
        if let (Ok(a), Ok(b)) = (bx.eval(bind_tx1), bx.eval(bind_tx2)) {
            k = k.max(quot((a - b).abs(), dx));
        }
        let sx_pair: Option<f64> = sx
            .iter()
            .map(|e| match (e.eval(bind_tx1), e.eval(bind_tx2)) {
                (Ok(a), Ok(b)) => Some((a - b) * (a - b)),
                _ => None,
            })
            .sum();
        if let Some(n2) = sx_pair {
            k = k.max(quot(n2.sqrt(), dx));
        }
        if let (Ok(a), Ok(b)) = (
            gx.eval(Bindings::tx(0.0, x1)),
            gx.eval(Bindings::tx(0.0, x2)),
        ) {
            k = k.max(quot((a - b).abs(), dx));
        }
    }
    Ok(k)
}

// ---------------------------------------------------------------------------
// Monotonicity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
    Constant,
    Nonmonotone,
}

impl Direction {
    pub fn is_monotone(self) -> bool {
        self != Direction::Nonmonotone
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::Increasing => "increasing",
            Direction::Decreasing => "decreasing",
            Direction::Constant => "constant",
            Direction::Nonmonotone => "nonmonotone",
        };
        f.write_str(s)
    }
}

/// Monotonicity judged from the symbolic derivative on a sample grid, so
/// there are no finite-difference step artifacts.
#[derive(Debug, Clone)]
pub struct MonotonicityReport {
    pub direction: Direction,
    pub strict: bool,
    pub min_derivative: f64,
    pub max_derivative: f64,
    /// x at which the decisive extreme derivative was attained.
    pub witness: f64,
}

/// Classify an expression of `x` alone as increasing / decreasing / constant
/// / nonmonotone by evaluating its symbolic derivative on `x_grid`.
pub fn check_monotone(
    e: &Expression,
    x_grid: Axis,
    strict_tol: f64,
) -> Result<MonotonicityReport, ModelError> {
    for v in e.variables() {
        if v != Var::X {
            return Err(ModelError::NotUnivariate(v));
        }
    }
    if x_grid.count == 0 {
        return Err(ModelError::EmptyGrid);
    }
    let deriv = e.differentiate(Var::X);
    let mut min_d = f64::INFINITY;
    let mut max_d = f64::NEG_INFINITY;
    let (mut argmin, mut argmax) = (x_grid.sample(0), x_grid.sample(0));
    for i in 0..x_grid.count {
        let x = x_grid.sample(i);
        let v = deriv.eval(Bindings::tx(0.0, x))?;
        if v < min_d {
            min_d = v;
            argmin = x;
        }
        if v > max_d {
            max_d = v;
            argmax = x;
        }
    }
    Ok(classify(min_d, max_d, argmin, argmax, strict_tol))
}

pub(crate) fn classify(
    min_d: f64,
    max_d: f64,
    argmin: f64,
    argmax: f64,
    tol: f64,
) -> MonotonicityReport {
    let (direction, strict, witness) = if min_d >= -tol && max_d <= tol {
        let w = if max_d.abs() >= min_d.abs() {
            argmax
        } else {
            argmin
        };
        (Direction::Constant, false, w)
    } else if min_d >= -tol && max_d > tol {
        (Direction::Increasing, min_d > tol, argmin)
    } else if max_d <= tol && min_d < -tol {
        (Direction::Decreasing, max_d < -tol, argmax)
    } else {
        (Direction::Nonmonotone, false, argmin)
    };
    MonotonicityReport {
        direction,
        strict,
        min_derivative: min_d,
        max_derivative: max_d,
        witness,
    }
}

/// Two directions are compatible when both are monotone and equal, or one of
/// them is constant (a constant is weakly increasing and weakly decreasing).
pub fn directions_compatible(a: Direction, b: Direction) -> bool {
    a.is_monotone()
        && b.is_monotone()
        && (a == Direction::Constant || b == Direction::Constant || a == b)
}

#[derive(Debug, Clone)]
pub struct ComonotonicityReport {
    pub comonotone: bool,
    pub strict: bool,
    pub first: MonotonicityReport,
    pub second: MonotonicityReport,
}

/// Comonotonicity of two expressions of `x` on a shared grid.
pub fn check_comonotone(
    e1: &Expression,
    e2: &Expression,
    x_grid: Axis,
    strict_tol: f64,
) -> Result<ComonotonicityReport, ModelError> {
    let first = check_monotone(e1, x_grid, strict_tol)?;
    let second = check_monotone(e2, x_grid, strict_tol)?;
    let comonotone = directions_compatible(first.direction, second.direction);
    let strict = first.strict && second.strict && first.direction == second.direction;
    Ok(ComonotonicityReport {
        comonotone,
        strict,
        first,
        second,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expr(s: &str) -> Expression {
        Expression::parse(s).unwrap()
    }

    fn toy_model(b: &str, sigma: &[&str], f: &str, g: &str) -> ModelSpec {
        ModelSpec::from_sources(b, sigma, f, g, 1.0, 0.0).unwrap()
    }

    #[test]
    fn scope_validation() {
        // driver may use everything
        toy_model("0", &["1"], "0.5*z1^2 + y - x + t", "tanh(x)");
        // b must not reference y
        let err = ModelSpec::from_sources("y", &["1"], "0", "x", 1.0, 0.0).unwrap_err();
        assert!(matches!(err, ModelError::VariableOutOfScope { .. }));
        // z index beyond d
        let err = ModelSpec::from_sources("0", &["1"], "z2", "x", 1.0, 0.0).unwrap_err();
        assert!(matches!(
            err,
            ModelError::ZIndexTooLarge { index: 2, d: 1, .. }
        ));
        // g is x-only
        let err = ModelSpec::from_sources("0", &["1"], "0", "x+t", 1.0, 0.0).unwrap_err();
        assert!(matches!(err, ModelError::VariableOutOfScope { .. }));
    }

    #[test]
    fn quadratic_driver_passes_with_small_m() {
        let m = toy_model("0", &["1"], "0.5*z1^2", "tanh(x)");
        let grid = SampleBox::for_model(&m, -6.0, 6.0);
        let report = validate_assumptions(&m, &grid, true).unwrap();
        assert!(report.passed, "violations: {:?}", report.violations);
        assert!(
            report.growth_constant_m <= 1.0,
            "M = {}",
            report.growth_constant_m
        );
        assert_eq!(report.ellipticity_floor, 1.0);
        // the |f| family alone needs only M = 1/2
        let f_family = report
            .observed_bounds
            .iter()
            .find(|(n, _)| n.starts_with("H1: |f|"))
            .unwrap();
        assert!(f_family.1 <= 0.5 + 1e-12, "fitted {}", f_family.1);
        // tanh' is 1-Lipschitz-ish; K finite and modest
        assert!(report.lipschitz_constant_k.unwrap() < 5.0);
    }

    #[test]
    fn exponential_driver_fails_quadratic_envelope() {
        let m = toy_model("0", &["1"], "exp(z1)", "tanh(x)");
        let grid = SampleBox::for_model(&m, -6.0, 6.0);
        let report = validate_assumptions(&m, &grid, false).unwrap();
        assert!(!report.passed);
        assert!(report
            .violations
            .iter()
            .any(|v| v.condition.contains("|f| <= M")));
    }

    #[test]
    fn vanishing_sigma_fails_ellipticity() {
        let m = toy_model("0", &["x"], "0", "tanh(x)");
        let grid = SampleBox::for_model(&m, -6.0, 6.0);
        let report = validate_assumptions(&m, &grid, false).unwrap();
        assert!(!report.passed);
        assert_eq!(report.ellipticity_floor, 0.0);
        assert!(report
            .violations
            .iter()
            .any(|v| v.condition.contains("elliptic")));
    }

    #[test]
    fn monotone_classification() {
        let grid = Axis::new(-5.0, 5.0, 201);
        let r = check_monotone(&expr("tanh(x)"), grid, DEFAULT_STRICT_TOL).unwrap();
        assert_eq!(r.direction, Direction::Increasing);
        assert!(r.strict);

        let grid = Axis::new(-2.0, 2.0, 201);
        let r = check_monotone(&expr("-x^3"), grid, DEFAULT_STRICT_TOL).unwrap();
        assert_eq!(r.direction, Direction::Decreasing);
        assert!(!r.strict, "derivative vanishes at x=0");
        assert!(r.max_derivative.abs() <= DEFAULT_STRICT_TOL);

        let grid = Axis::new(-1.0, 1.0, 201);
        let r = check_monotone(&expr("x^2"), grid, DEFAULT_STRICT_TOL).unwrap();
        assert_eq!(r.direction, Direction::Nonmonotone);

        let r = check_monotone(&expr("3"), grid, DEFAULT_STRICT_TOL).unwrap();
        assert_eq!(r.direction, Direction::Constant);

        let err = check_monotone(&expr("x+y"), grid, DEFAULT_STRICT_TOL).unwrap_err();
        assert!(matches!(err, ModelError::NotUnivariate(Var::Y)));
    }

    #[test]
    fn comonotone_examples() {
        let grid = Axis::new(-5.0, 5.0, 201);
        let tol = DEFAULT_STRICT_TOL;
        let r = check_comonotone(&expr("tanh(x)"), &expr("x"), grid, tol).unwrap();
        assert!(r.comonotone && r.strict);

        let r = check_comonotone(&expr("x"), &expr("-x"), grid, tol).unwrap();
        assert!(!r.comonotone);

        let r = check_comonotone(&expr("5"), &expr("x"), grid, tol).unwrap();
        assert!(r.comonotone);
        assert!(!r.strict);
    }

    #[test]
    fn comonotone_is_reflexive_and_symmetric() {
        let grid = Axis::new(-3.0, 3.0, 101);
        let tol = DEFAULT_STRICT_TOL;
        for s in ["tanh(x)", "x", "-x^3", "2", "x^2"] {
            let e = expr(s);
            let r = check_comonotone(&e, &e, grid, tol).unwrap();
            let mono = check_monotone(&e, grid, tol).unwrap();
            if mono.direction.is_monotone() {
                assert!(r.comonotone, "{s} should be comonotone with itself");
            }
            for s2 in ["x", "-x", "3"] {
                let e2 = expr(s2);
                let ab = check_comonotone(&e, &e2, grid, tol).unwrap();
                let ba = check_comonotone(&e2, &e, grid, tol).unwrap();
                assert_eq!(ab.comonotone, ba.comonotone, "symmetry for ({s}, {s2})");
                assert_eq!(ab.strict, ba.strict);
            }
        }
    }

    #[test]
    fn h2_constant_for_linear_data_is_zero() {
        // all second derivatives vanish -> difference quotients are 0
        let m = toy_model("-x", &["1"], "0.1*x+0.3*y+0.2*z1", "x");
        let grid = SampleBox::for_model(&m, -6.0, 6.0);
        let report = validate_assumptions(&m, &grid, true).unwrap();
        assert!(report.lipschitz_constant_k.unwrap() < 1e-9);
        assert!(report.passed, "violations: {:?}", report.violations);
    }
}
