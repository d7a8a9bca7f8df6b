//! Finite-difference backend.
//!
//! Solves, backward from the terminal time,
//!
//! ```text
//! u_t + b(t,x) u_x + 1/2 |sigma(t,x)|^2 u_xx + f(t, x, u, u_x sigma(t,x)) = 0,
//! u(T, x) = g(x),
//! ```
//!
//! on a uniform grid with a theta-scheme (Crank-Nicolson by default). The
//! advection and diffusion terms go into a tridiagonal solve; the driver is
//! resolved by a short fixed-point iteration inside each step, evaluating
//! `z = u_x sigma` on the current iterate. At both ends the scheme imposes
//! `u_xx = 0`, i.e. linear extrapolation: the terminal data we care about are
//! bounded or asymptotically linear, and this is the least biased C^1 closure
//! when `g` is unknown off-grid.
//!
//! The stored solution carries `u` and its central-difference spatial
//! derivative on every time row; `Y = u(t, X)` and `Z = u_x(t, X) sigma(t, X)`
//! are read off by bilinear interpolation.

use std::io::Write;

use thiserror::Error;

use crate::model::{CompiledModel, ModelSpec};

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(
        "fixed-point iteration did not converge at step {step} (t={t}): residual {residual:.3e}"
    )]
    FixedPointNoConvergence { step: usize, t: f64, residual: f64 },
    #[error("non-finite value at step {step}, node {node} (t={t}, x={x})")]
    NonFinite {
        step: usize,
        node: usize,
        t: f64,
        x: f64,
    },
    #[error("degenerate tridiagonal pivot at step {step}, node {node}")]
    ZeroPivot { step: usize, node: usize },
    #[error("{what}={value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniform space-time grid. `nx` spatial nodes, `nt` time steps.
#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub nt: usize,
}

pub const DEFAULT_NX: usize = 401;
pub const DEFAULT_NT: usize = 400;

impl Grid {
    pub fn new(x_min: f64, x_max: f64, nx: usize, nt: usize) -> Self {
        Self {
            x_min,
            x_max,
            nx,
            nt,
        }
    }

    /// Default truncation: `x0 ± 6 max|sigma| sqrt(T)`, the max probed over a
    /// preliminary window, so Gaussian mass outside the box is negligible at
    /// desk-scale horizons.
    pub fn default_for(m: &ModelSpec) -> Self {
        let cm = m.compile();
        let t_end = m.horizon();
        let x0 = m.x0();
        let probe_width = (6.0 * cm.sigma_norm2(0.0, x0).sqrt().max(0.1) * t_end.sqrt()).max(0.5);
        let mut max_sigma = 0.0f64;
        for it in 0..5 {
            let t = t_end * it as f64 / 4.0;
            for ix in 0..41 {
                let x = x0 - probe_width + 2.0 * probe_width * ix as f64 / 40.0;
                let s = cm.sigma_norm2(t, x).sqrt();
                if s.is_finite() {
                    max_sigma = max_sigma.max(s);
                }
            }
        }
        let width = (6.0 * max_sigma * t_end.sqrt()).max(0.5);
        Grid::new(x0 - width, x0 + width, DEFAULT_NX, DEFAULT_NT)
    }

    pub fn with_span(mut self, x_min: f64, x_max: f64) -> Self {
        self.x_min = x_min;
        self.x_max = x_max;
        self
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.h()
    }

    /// Halve both mesh widths (refinement studies).
    pub fn refined(&self) -> Grid {
        Grid::new(self.x_min, self.x_max, 2 * self.nx - 1, 2 * self.nt)
    }

    fn validate(&self, m: &ModelSpec) -> Result<(), PdeError> {
        if self.nx < 3 {
            return Err(PdeError::InvalidGrid(format!(
                "nx={} must be >= 3",
                self.nx
            )));
        }
        if self.nt < 1 {
            return Err(PdeError::InvalidGrid(format!(
                "nt={} must be >= 1",
                self.nt
            )));
        }
        if !(self.x_min < m.x0() && m.x0() < self.x_max) {
            return Err(PdeError::InvalidGrid(format!(
                "x0={} must lie strictly inside [{}, {}]",
                m.x0(),
                self.x_min,
                self.x_max
            )));
        }
        Ok(())
    }
}

/// Time-stepping knobs.
#[derive(Debug, Clone, Copy)]
pub struct SchemeParams {
    /// Implicitness weight; 1/2 is Crank-Nicolson.
    pub theta: f64,
    pub max_fixed_point_iters: usize,
    pub fixed_point_tol: f64,
}

impl Default for SchemeParams {
    fn default() -> Self {
        Self {
            theta: 0.5,
            max_fixed_point_iters: 8,
            fixed_point_tol: 1e-10,
        }
    }
}

/// Grid values of `u(t, x)` and `u_x(t, x)`. Row `k` is time `k T / nt`.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    u: Vec<f64>,
    ux: Vec<f64>,
    grid: Grid,
    horizon: f64,
    model: ModelSpec,
    compiled: CompiledModel,
}

impl PdeSolution {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn t(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.grid.nt as f64
    }

    pub fn u_node(&self, k: usize, i: usize) -> f64 {
        self.u[k * self.grid.nx + i]
    }

    pub fn ux_node(&self, k: usize, i: usize) -> f64 {
        self.ux[k * self.grid.nx + i]
    }

    /// Bilinear interpolation of `u` at `(t, x)`.
    pub fn eval_u(&self, t: f64, x: f64) -> Result<f64, PdeError> {
        self.interp(&self.u, t, x)
    }

    /// Bilinear interpolation of `u_x` at `(t, x)`.
    pub fn eval_ux(&self, t: f64, x: f64) -> Result<f64, PdeError> {
        self.interp(&self.ux, t, x)
    }

    /// `u_x` with `x` clamped into the grid box. Beyond the box the scheme's
    /// boundary condition is exactly "u continues linearly", so the clamped
    /// value is the consistent tail extrapolation for path functionals.
    pub fn eval_ux_clamped(&self, t: f64, x: f64) -> Result<f64, PdeError> {
        self.interp(&self.ux, t, x.clamp(self.grid.x_min, self.grid.x_max))
    }

    /// `Z(t, x) = u_x(t, x) sigma(t, x)` componentwise.
    pub fn z_at(&self, t: f64, x: f64) -> Result<Vec<f64>, PdeError> {
        let ux = self.eval_ux(t, x)?;
        let mut z = vec![0.0; self.compiled.d];
        self.compiled.sigma_at(t, x, &mut z);
        for v in &mut z {
            *v *= ux;
        }
        Ok(z)
    }

    /// As [`z_at`](Self::z_at) but clamped in `x`, writing into `out`.
    pub fn z_at_clamped(&self, t: f64, x: f64, out: &mut [f64]) -> Result<(), PdeError> {
        let xc = x.clamp(self.grid.x_min, self.grid.x_max);
        let ux = self.interp(&self.ux, t, xc)?;
        self.compiled.sigma_at(t, xc, out);
        for v in out.iter_mut() {
            *v *= ux;
        }
        Ok(())
    }

    /// Largest `|Z|` over all grid nodes; the Monte Carlo backend derives its
    /// default truncation level from this.
    pub fn max_abs_z(&self) -> f64 {
        let mut best = 0.0f64;
        for k in 0..=self.grid.nt {
            let t = self.t(k);
            for i in 0..self.grid.nx {
                let x = self.grid.x(i);
                let z = self.ux_node(k, i).abs() * self.compiled.sigma_norm2(t, x).sqrt();
                if z.is_finite() {
                    best = best.max(z);
                }
            }
        }
        best
    }

    fn interp(&self, values: &[f64], t: f64, x: f64) -> Result<f64, PdeError> {
        let slack = 1e-9 * self.horizon.max(1.0);
        if t < -slack || t > self.horizon + slack {
            return Err(PdeError::OutOfRange {
                what: "t",
                value: t,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        let span_slack = 1e-9 * (self.grid.x_max - self.grid.x_min).max(1.0);
        if x < self.grid.x_min - span_slack || x > self.grid.x_max + span_slack {
            return Err(PdeError::OutOfRange {
                what: "x",
                value: x,
                lo: self.grid.x_min,
                hi: self.grid.x_max,
            });
        }
        let nt = self.grid.nt;
        let nx = self.grid.nx;
        let dt = self.horizon / nt as f64;
        let h = self.grid.h();
        // snap to the lattice so node queries reproduce stored values exactly
        let snap = |f: f64| {
            let r = f.round();
            if (f - r).abs() < 1e-9 {
                r
            } else {
                f
            }
        };
        let tf = snap(t.clamp(0.0, self.horizon) / dt).min((nt - 1) as f64);
        let xf = snap((x.clamp(self.grid.x_min, self.grid.x_max) - self.grid.x_min) / h)
            .min((nx - 2) as f64);
        let (k, i) = (tf.floor() as usize, xf.floor() as usize);
        let (wt, wx) = (tf - k as f64, xf - i as f64);
        let at = |k: usize, i: usize| values[k * nx + i];
        Ok((1.0 - wt) * ((1.0 - wx) * at(k, i) + wx * at(k, i + 1))
            + wt * ((1.0 - wx) * at(k + 1, i) + wx * at(k + 1, i + 1)))
    }

    /// CSV export: `t,x,u,ux`, time-major row order, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), PdeError> {
        writeln!(w, "t,x,u,ux")?;
        for k in 0..=self.grid.nt {
            let t = self.t(k);
            for i in 0..self.grid.nx {
                writeln!(
                    w,
                    "{},{},{},{}",
                    fmt17(t),
                    fmt17(self.grid.x(i)),
                    fmt17(self.u_node(k, i)),
                    fmt17(self.ux_node(k, i))
                )?;
            }
        }
        Ok(())
    }
}

/// 17 significant digits: enough to reproduce an f64 exactly on re-read.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Solve the backward PDE for `m` on `grid`.
pub fn solve_pde(m: &ModelSpec, grid: Grid, params: SchemeParams) -> Result<PdeSolution, PdeError> {
    grid.validate(m)?;
    let cm = m.compile();
    let nx = grid.nx;
    let nt = grid.nt;
    let h = grid.h();
    let dt = m.horizon() / nt as f64;
    let theta = params.theta;
    let d = cm.d;

    let xs: Vec<f64> = (0..nx).map(|i| grid.x(i)).collect();
    let mut u = vec![0.0; (nt + 1) * nx];
    let mut ux = vec![0.0; (nt + 1) * nx];

    // terminal row: exactly g on the grid
    for i in 0..nx {
        u[nt * nx + i] = cm.g.eval_tx(0.0, xs[i]);
    }
    check_row_finite(&u[nt * nx..(nt + 1) * nx], nt, &xs, nt as f64 * dt)?;
    derivative_row(
        &u[nt * nx..(nt + 1) * nx],
        h,
        &mut ux[nt * nx..(nt + 1) * nx],
    );

    // per-time-level coefficient tables, swapped as we march
    let mut coef_next = CoefRow::tabulate(&cm, nt as f64 * dt, &xs, d);
    let mut lo = vec![0.0; nx];
    let mut di = vec![0.0; nx];
    let mut up = vec![0.0; nx];
    let mut rhs_base = vec![0.0; nx];
    let mut rhs = vec![0.0; nx];
    let mut v = vec![0.0; nx];
    let mut v_new = vec![0.0; nx];
    let mut vx = vec![0.0; nx];
    let mut zbuf = vec![0.0; d];
    let mut scratch = Tridiag::new(nx);

    for k in (0..nt).rev() {
        let t_k = k as f64 * dt;
        let t_next = (k + 1) as f64 * dt;
        let coef_here = CoefRow::tabulate(&cm, t_k, &xs, d);

        // operator pieces: L v = lo*v[i-1] + di*v[i] + up*v[i+1]
        for i in 0..nx {
            if i == 0 {
                lo[i] = 0.0;
                di[i] = -coef_here.b[i] / h;
                up[i] = coef_here.b[i] / h;
            } else if i == nx - 1 {
                lo[i] = -coef_here.b[i] / h;
                di[i] = coef_here.b[i] / h;
                up[i] = 0.0;
            } else {
                let adv = coef_here.b[i] / (2.0 * h);
                let dif = 0.5 * coef_here.s2[i] / (h * h);
                lo[i] = -adv + dif;
                di[i] = -2.0 * dif;
                up[i] = adv + dif;
            }
        }

        // explicit part from the known row k+1, driver included
        let u_next = &u[(k + 1) * nx..(k + 2) * nx];
        let ux_next = &ux[(k + 1) * nx..(k + 2) * nx];
        for i in 0..nx {
            let l_next = explicit_operator(&coef_next, u_next, i, nx, h);
            for (c, z) in zbuf.iter_mut().enumerate() {
                *z = ux_next[i] * coef_next.sig[i * d + c];
            }
            let f_next = cm.f.eval(t_next, xs[i], u_next[i], &zbuf);
            rhs_base[i] = u_next[i] + dt * (1.0 - theta) * (l_next + f_next);
        }

        // fixed point on the implicit driver term
        v.copy_from_slice(u_next);
        let mut residual = f64::INFINITY;
        for _ in 0..params.max_fixed_point_iters {
            derivative_row(&v, h, &mut vx);
            for i in 0..nx {
                for (c, z) in zbuf.iter_mut().enumerate() {
                    *z = vx[i] * coef_here.sig[i * d + c];
                }
                let f_here = cm.f.eval(t_k, xs[i], v[i], &zbuf);
                rhs[i] = rhs_base[i] + dt * theta * f_here;
            }
            scratch
                .solve(&lo, &di, &up, dt * theta, &rhs, &mut v_new)
                .map_err(|node| PdeError::ZeroPivot { step: k, node })?;
            residual = v
                .iter()
                .zip(&v_new)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            std::mem::swap(&mut v, &mut v_new);
            if residual < params.fixed_point_tol {
                break;
            }
        }
        if residual.is_nan() || residual >= params.fixed_point_tol {
            return Err(PdeError::FixedPointNoConvergence {
                step: k,
                t: t_k,
                residual,
            });
        }

        u[k * nx..(k + 1) * nx].copy_from_slice(&v);
        if let Some(node) = v.iter().position(|x| !x.is_finite()) {
            return Err(PdeError::NonFinite {
                step: k,
                node,
                t: t_k,
                x: xs[node],
            });
        }
        derivative_row(&v, h, &mut ux[k * nx..(k + 1) * nx]);
        coef_next = coef_here;
    }

    Ok(PdeSolution {
        u,
        ux,
        grid,
        horizon: m.horizon(),
        model: m.clone(),
        compiled: cm,
    })
}

struct CoefRow {
    b: Vec<f64>,
    s2: Vec<f64>,
    sig: Vec<f64>, // nx * d
}

impl CoefRow {
    fn tabulate(cm: &CompiledModel, t: f64, xs: &[f64], d: usize) -> Self {
        let nx = xs.len();
        let mut b = vec![0.0; nx];
        let mut s2 = vec![0.0; nx];
        let mut sig = vec![0.0; nx * d];
        for (i, &x) in xs.iter().enumerate() {
            b[i] = cm.b.eval_tx(t, x);
            let row = &mut sig[i * d..(i + 1) * d];
            cm.sigma_at(t, x, row);
            s2[i] = row.iter().map(|v| v * v).sum();
        }
        CoefRow { b, s2, sig }
    }
}

fn explicit_operator(coef: &CoefRow, row: &[f64], i: usize, nx: usize, h: f64) -> f64 {
    if i == 0 {
        coef.b[0] * (row[1] - row[0]) / h
    } else if i == nx - 1 {
        coef.b[i] * (row[i] - row[i - 1]) / h
    } else {
        coef.b[i] * (row[i + 1] - row[i - 1]) / (2.0 * h)
            + 0.5 * coef.s2[i] * (row[i + 1] - 2.0 * row[i] + row[i - 1]) / (h * h)
    }
}

/// Central differences inside, second-order one-sided at the ends.
fn derivative_row(row: &[f64], h: f64, out: &mut [f64]) {
    let n = row.len();
    out[0] = (-3.0 * row[0] + 4.0 * row[1] - row[2]) / (2.0 * h);
    for i in 1..n - 1 {
        out[i] = (row[i + 1] - row[i - 1]) / (2.0 * h);
    }
    out[n - 1] = (3.0 * row[n - 1] - 4.0 * row[n - 2] + row[n - 3]) / (2.0 * h);
}

fn check_row_finite(row: &[f64], step: usize, xs: &[f64], t: f64) -> Result<(), PdeError> {
    if let Some(node) = row.iter().position(|v| !v.is_finite()) {
        return Err(PdeError::NonFinite {
            step,
            node,
            t,
            x: xs[node],
        });
    }
    Ok(())
}

/// Thomas solve of `(I - w L) v = rhs` where L is the tridiagonal operator
/// given by (lo, di, up).
struct Tridiag {
    c: Vec<f64>,
    d: Vec<f64>,
}

impl Tridiag {
    fn new(n: usize) -> Self {
        Self {
            c: vec![0.0; n],
            d: vec![0.0; n],
        }
    }

    #[allow(clippy::needless_range_loop)] // indexed form mirrors the recurrences
    fn solve(
        &mut self,
        lo: &[f64],
        di: &[f64],
        up: &[f64],
        w: f64,
        rhs: &[f64],
        out: &mut [f64],
    ) -> Result<(), usize> {
        let n = rhs.len();
        let a = |i: usize| -w * lo[i];
        let b = |i: usize| 1.0 - w * di[i];
        let c = |i: usize| -w * up[i];

        let mut beta = b(0);
        if beta == 0.0 {
            return Err(0);
        }
        self.c[0] = c(0) / beta;
        self.d[0] = rhs[0] / beta;
        for i in 1..n {
            beta = b(i) - a(i) * self.c[i - 1];
            if beta == 0.0 {
                return Err(i);
            }
            self.c[i] = c(i) / beta;
            self.d[i] = (rhs[i] - a(i) * self.d[i - 1]) / beta;
        }
        out[n - 1] = self.d[n - 1];
        for i in (0..n - 1).rev() {
            out[i] = self.d[i] - self.c[i] * out[i + 1];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(b: &str, sigma: &[&str], f: &str, g: &str, horizon: f64, x0: f64) -> ModelSpec {
        ModelSpec::from_sources(b, sigma, f, g, horizon, x0).unwrap()
    }

    fn brownian_grid() -> Grid {
        Grid::new(-6.0, 6.0, 401, 200)
    }

    #[test]
    fn martingale_identity() {
        // f = 0, g = x: u(t,x) = x exactly
        let m = model("0", &["1"], "0", "x", 1.0, 0.0);
        let sol = solve_pde(&m, brownian_grid(), SchemeParams::default()).unwrap();
        assert!(sol.eval_u(0.0, 0.0).unwrap().abs() <= 1e-3);
        assert!((sol.eval_ux(0.0, 0.0).unwrap() - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn cole_hopf_quadratic_driver() {
        // f = z^2/2, g = x: u(t,x) = x + (T-t)/2
        let m = model("0", &["1"], "0.5*z1^2", "x", 1.0, 0.0);
        let sol = solve_pde(&m, brownian_grid(), SchemeParams::default()).unwrap();
        for x in [-2.0, -0.5, 0.0, 1.0, 3.0] {
            assert!(
                (sol.eval_u(0.0, x).unwrap() - (x + 0.5)).abs() <= 2e-3,
                "u(0,{x}) = {}",
                sol.eval_u(0.0, x).unwrap()
            );
            assert!((sol.eval_ux(0.0, x).unwrap() - 1.0).abs() <= 2e-3);
        }
    }

    #[test]
    fn linear_driver_closed_form() {
        // f = 0.3 y, g = x: u(t,x) = e^{0.3 (T-t)} x
        let m = model("0", &["1"], "0.3*y", "x", 1.0, 1.0);
        let grid = Grid::new(-5.0, 7.0, 401, 200);
        let sol = solve_pde(&m, grid, SchemeParams::default()).unwrap();
        let expect = 0.3f64.exp();
        assert!(
            (sol.eval_u(0.0, 1.0).unwrap() - expect).abs() <= 2e-3,
            "u(0,1) = {}, want {}",
            sol.eval_u(0.0, 1.0).unwrap(),
            expect
        );
    }

    #[test]
    fn terminal_row_is_g_bitwise() {
        let m = model("0.1*(1-x)", &["0.5"], "0.1*tanh(x)", "tanh(x)", 1.0, 0.0);
        let grid = Grid::new(-4.0, 4.0, 101, 50);
        let sol = solve_pde(&m, grid, SchemeParams::default()).unwrap();
        let g = m.compile().g;
        for i in 0..grid.nx {
            let want = g.eval_tx(0.0, grid.x(i));
            assert_eq!(sol.u_node(grid.nt, i).to_bits(), want.to_bits());
        }
    }

    #[test]
    fn interpolation_behaves() {
        let m = model("0", &["1"], "0", "x", 1.0, 0.0);
        let grid = Grid::new(-6.0, 6.0, 101, 50);
        let sol = solve_pde(&m, grid, SchemeParams::default()).unwrap();
        // node query returns the stored value exactly
        let (k, i) = (17, 40);
        let exact = sol.u_node(k, i);
        assert_eq!(
            sol.eval_u(sol.t(k), grid.x(i)).unwrap().to_bits(),
            exact.to_bits()
        );
        // midpoint of two nodes averages them for this x-linear solution
        let mid = 0.5 * (sol.u_node(k, i) + sol.u_node(k, i + 1));
        let q = sol
            .eval_u(sol.t(k), 0.5 * (grid.x(i) + grid.x(i + 1)))
            .unwrap();
        assert!((q - mid).abs() < 1e-12);
        // derivative of the f=0, g=x solution is 1 anywhere interior
        assert!((sol.eval_ux(0.5, 0.3).unwrap() - 1.0).abs() <= 1e-3);
        // out of range queries fail
        assert!(sol.eval_u(1.5, 0.0).is_err());
        assert!(sol.eval_u(0.5, 99.0).is_err());
    }

    #[test]
    fn z_from_pde_scales_with_sigma() {
        let m = model("0", &["1", "0.5"], "0", "x", 1.0, 0.0);
        let sol = solve_pde(&m, brownian_grid(), SchemeParams::default()).unwrap();
        let z = sol.z_at(0.3, 0.2).unwrap();
        assert_eq!(z.len(), 2);
        assert!((z[0] - 1.0).abs() <= 1e-3, "z1 = {}", z[0]);
        assert!((z[1] - 0.5).abs() <= 1e-3, "z2 = {}", z[1]);

        let m = model("0", &["1"], "0.5*z1^2", "x", 1.0, 0.0);
        let sol = solve_pde(&m, brownian_grid(), SchemeParams::default()).unwrap();
        let z = sol.z_at(0.0, 0.0).unwrap();
        assert!((z[0] - 1.0).abs() <= 2e-3);
    }

    #[test]
    fn comparison_property_on_ordered_data() {
        // g1 >= g2 and f1 >= f2 pointwise => u1 >= u2 (minus scheme noise)
        let grid = Grid::new(-5.0, 5.0, 201, 200);
        let m1 = model("0", &["1"], "0.1*tanh(x)+0.1", "tanh(x)+0.5", 1.0, 0.0);
        let m2 = model("0", &["1"], "0.1*tanh(x)", "tanh(x)", 1.0, 0.0);
        let s1 = solve_pde(&m1, grid, SchemeParams::default()).unwrap();
        let s2 = solve_pde(&m2, grid, SchemeParams::default()).unwrap();
        for k in 0..=grid.nt {
            for i in 0..grid.nx {
                assert!(
                    s1.u_node(k, i) >= s2.u_node(k, i) - 1e-8,
                    "comparison fails at node ({k}, {i})"
                );
            }
        }
    }

    #[test]
    fn monotone_data_propagates_increasing_ux() {
        let grid = Grid::new(-5.0, 5.0, 201, 200);
        let m = model(
            "0.1*(1-x)",
            &["0.8"],
            "0.2*tanh(x)+0.25*z1^2",
            "tanh(x)",
            1.0,
            0.0,
        );
        let sol = solve_pde(&m, grid, SchemeParams::default()).unwrap();
        for k in 0..=grid.nt {
            for i in 0..grid.nx {
                assert!(
                    sol.ux_node(k, i) >= -1e-6,
                    "ux < 0 at ({k}, {i}): {}",
                    sol.ux_node(k, i)
                );
            }
        }
    }

    #[test]
    fn explosive_backward_data_reports_failure() {
        // backward ODE u' = -u^2 from u(T)=5 blows up before t=0
        let m = model("0", &["1"], "y^2", "5", 1.0, 0.0);
        let grid = Grid::new(-2.0, 2.0, 51, 50);
        let err = solve_pde(&m, grid, SchemeParams::default()).unwrap_err();
        assert!(
            matches!(
                err,
                PdeError::FixedPointNoConvergence { .. } | PdeError::NonFinite { .. }
            ),
            "unexpected error: {err}"
        );
    }

    #[test]
    fn grid_invariants_enforced() {
        let m = model("0", &["1"], "0", "x", 1.0, 0.0);
        assert!(solve_pde(&m, Grid::new(1.0, 2.0, 101, 10), SchemeParams::default()).is_err());
        assert!(solve_pde(&m, Grid::new(-1.0, 1.0, 2, 10), SchemeParams::default()).is_err());
        assert!(solve_pde(&m, Grid::new(-1.0, 1.0, 101, 0), SchemeParams::default()).is_err());
    }

    #[test]
    fn csv_round_trips_exactly() {
        let m = model("0", &["1"], "0.5*z1^2", "tanh(x)", 0.5, 0.0);
        let grid = Grid::new(-3.0, 3.0, 21, 8);
        let sol = solve_pde(&m, grid, SchemeParams::default()).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x,u,ux");
        let mut idx = 0;
        for line in lines {
            let parts: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            let (k, i) = (idx / grid.nx, idx % grid.nx);
            assert_eq!(parts[0].to_bits(), sol.t(k).to_bits());
            assert_eq!(parts[1].to_bits(), grid.x(i).to_bits());
            assert_eq!(parts[2].to_bits(), sol.u_node(k, i).to_bits());
            assert_eq!(parts[3].to_bits(), sol.ux_node(k, i).to_bits());
            idx += 1;
        }
        assert_eq!(idx, (grid.nt + 1) * grid.nx);
    }
}
