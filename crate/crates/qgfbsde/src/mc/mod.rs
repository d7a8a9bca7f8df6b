//! Monte Carlo backend.
//!
//! Path generation is keyed by a counter-based generator: the Brownian
//! increment of path `p`, step `k`, component `c` is a pure function of
//! `(seed, p, k, c)`, so the ensemble is bitwise identical no matter how the
//! work is split across threads. The worker count comes from the
//! `QGFBSDE_THREADS` environment variable (0 or unset = one worker per
//! available core); every cross-path reduction runs serially in path order.
//!
//! The backward pair `(Y, Z)` is estimated by least-squares regression on
//! quantile bins (see [`solve_bsde_regression`]); the weight processes of the
//! gradient representation
//!
//! ```text
//! e_t  = exp( int_0^t [f(r,X,Y,Z) - f(r,X,0,Z)] / Y  dr ),
//! M_T  = stochastic exponential of [f(r,X,0,Z) - f(r,X,0,0)] / |Z|^2  Z . dW,
//! dY_0/dx0 = E[ M_T ( e_T g'(X_T) dX_T/dx0
//!                    + int_0^T e_r f_x(r,X_r,0,0) dX_r/dx0 dr ) ],
//! ```
//!
//! are produced by [`malliavin_weights`] and consumed by
//! [`grad_y0_via_weights`]. Both difference quotients switch to the analytic
//! partial derivative below 1e-12: the indicators in the defining formulas
//! are measure-theoretic, not numeric.

mod regression;

pub use regression::{solve_bsde_regression, BsdeSolution, RegressionDiagnostics};

use std::io::Write;

use thiserror::Error;

use crate::model::ModelSpec;
use crate::pde::fmt17;
use crate::rng;

/// Switch from difference quotient to analytic derivative below this level.
const QUOTIENT_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid Monte Carlo config: {0}")]
    InvalidConfig(String),
    #[error("non-finite state at path {path}, step {step}")]
    NonFiniteState { path: usize, step: usize },
    #[error("non-finite variational process at path {path}, step {step}")]
    NonFiniteVariational { path: usize, step: usize },
    #[error("non-finite regression values at step {step}")]
    NonFiniteRegression { step: usize },
    #[error("weight overflow at path {path}")]
    WeightOverflow { path: usize },
    #[error("variational process not simulated; call simulate_variational first")]
    VariationalMissing,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Simulation parameters.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    /// Number of quantile bins for the cross-path regression.
    pub bins: usize,
    /// Truncation level applied to each Z component before the driver sees
    /// it. Quadratic drivers destabilize the regression otherwise; the
    /// boundedness theory for the control process justifies a finite
    /// envelope.
    pub z_clip: f64,
    /// Extra corrections of the Y argument inside the driver per backward
    /// step (explicit predictor, then this many corrections).
    pub picard_refinements: usize,
}

impl McConfig {
    /// Config with the fallback truncation `z_clip = 1/sqrt(dt)`. When a PDE
    /// solution is at hand, prefer `4 * sol.max_abs_z()`.
    pub fn new(paths: usize, steps: usize, seed: u64, horizon: f64) -> Self {
        let dt = horizon / steps as f64;
        McConfig {
            paths,
            steps,
            seed,
            bins: 50,
            z_clip: 1.0 / dt.sqrt(),
            picard_refinements: 1,
        }
    }

    pub fn with_z_clip(mut self, z_clip: f64) -> Self {
        self.z_clip = z_clip;
        self
    }

    pub fn with_bins(mut self, bins: usize) -> Self {
        self.bins = bins;
        self
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.paths < 2 {
            return Err(McError::InvalidConfig(format!(
                "paths={} must be >= 2",
                self.paths
            )));
        }
        if self.steps < 1 {
            return Err(McError::InvalidConfig(format!(
                "steps={} must be >= 1",
                self.steps
            )));
        }
        if self.z_clip.is_nan() || self.z_clip <= 0.0 {
            return Err(McError::InvalidConfig(format!(
                "z_clip={} must be > 0",
                self.z_clip
            )));
        }
        if self.bins == 0 {
            return Err(McError::InvalidConfig("bins must be >= 1".into()));
        }
        Ok(())
    }
}

/// Worker count for path-parallel loops: `QGFBSDE_THREADS`, with 0 or unset
/// meaning one per available core.
pub fn worker_count() -> usize {
    match std::env::var("QGFBSDE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(n) if n > 0 => n,
        _ => std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
    }
}

/// Euler-Maruyama paths, Brownian increments, and (after
/// [`simulate_variational`]) the variational process.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    paths: usize,
    steps: usize,
    d: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
    /// `paths x steps x d`
    dw: Vec<f64>,
    /// `paths x (steps + 1)`
    x: Vec<f64>,
    /// `paths x (steps + 1)`; empty until the variational pass runs.
    grad_x: Vec<f64>,
}

impl PathEnsemble {
    pub fn paths(&self) -> usize {
        self.paths
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    /// Seed the ensemble was generated from.
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn t(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    #[inline]
    pub fn x_at(&self, p: usize, k: usize) -> f64 {
        self.x[p * (self.steps + 1) + k]
    }

    #[inline]
    pub fn dw_at(&self, p: usize, k: usize) -> &[f64] {
        let base = (p * self.steps + k) * self.d;
        &self.dw[base..base + self.d]
    }

    pub fn has_variational(&self) -> bool {
        !self.grad_x.is_empty()
    }

    #[inline]
    pub fn grad_at(&self, p: usize, k: usize) -> f64 {
        self.grad_x[p * (self.steps + 1) + k]
    }
}

/// Split `0..paths` into contiguous chunks and run `body` on each from its
/// own thread. `body(chunk_index, first_path, ...)` must only touch its own
/// chunk, which keeps the result independent of the split.
fn path_chunks(paths: usize, workers: usize) -> Vec<(usize, usize)> {
    let workers = workers.max(1);
    let chunk = paths.div_ceil(workers);
    (0..workers)
        .map(|w| (w * chunk, ((w + 1) * chunk).min(paths)))
        .filter(|(lo, hi)| lo < hi)
        .collect()
}

/// First (path, step) error in path order, so failure reports are stable
/// under any worker count.
fn min_error(errors: Vec<Option<(usize, usize)>>) -> Option<(usize, usize)> {
    errors.into_iter().flatten().min()
}

/// Simulate the forward paths of `m` under `cfg` with the default worker
/// count.
pub fn simulate_forward(m: &ModelSpec, cfg: &McConfig) -> Result<PathEnsemble, McError> {
    simulate_forward_workers(m, cfg, worker_count())
}

/// Worker-count-explicit variant; the result is bitwise independent of
/// `workers`.
pub fn simulate_forward_workers(
    m: &ModelSpec,
    cfg: &McConfig,
    workers: usize,
) -> Result<PathEnsemble, McError> {
    cfg.validate()?;
    let cm = m.compile();
    let d = cm.d;
    let (paths, steps) = (cfg.paths, cfg.steps);
    let dt = m.horizon() / steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut dw = vec![0.0f64; paths * steps * d];
    let mut x = vec![0.0f64; paths * (steps + 1)];
    let chunks = path_chunks(paths, workers);

    let failure = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        let mut dw_rest: &mut [f64] = &mut dw;
        let mut x_rest: &mut [f64] = &mut x;
        for &(lo, hi) in &chunks {
            let n = hi - lo;
            let (dw_chunk, r) = dw_rest.split_at_mut(n * steps * d);
            dw_rest = r;
            let (x_chunk, r) = x_rest.split_at_mut(n * (steps + 1));
            x_rest = r;
            let cm = &cm;
            handles.push(scope.spawn(move || -> Option<(usize, usize)> {
                for j in 0..n {
                    let p = lo + j;
                    let xrow = &mut x_chunk[j * (steps + 1)..(j + 1) * (steps + 1)];
                    let dwrow = &mut dw_chunk[j * steps * d..(j + 1) * steps * d];
                    xrow[0] = cm.x0;
                    for k in 0..steps {
                        let t = k as f64 * dt;
                        let xk = xrow[k];
                        let drift = cm.b.eval_tx(t, xk) * dt;
                        let mut diffusion = 0.0;
                        for c in 0..d {
                            let inc = sqrt_dt
                                * rng::standard_normal(cfg.seed, p as u64, k as u64, c as u64);
                            dwrow[k * d + c] = inc;
                            diffusion += cm.sigma[c].eval_tx(t, xk) * inc;
                        }
                        let next = xk + drift + diffusion;
                        if !next.is_finite() {
                            return Some((p, k));
                        }
                        xrow[k + 1] = next;
                    }
                }
                None
            }));
        }
        min_error(
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect(),
        )
    });
    if let Some((path, step)) = failure {
        return Err(McError::NonFiniteState { path, step });
    }
    Ok(PathEnsemble {
        paths,
        steps,
        d,
        horizon: m.horizon(),
        dt,
        seed: cfg.seed,
        dw,
        x,
        grad_x: Vec::new(),
    })
}

/// Fill the variational process `dX/dx0` along existing paths.
///
/// With scalar state the process is a stochastic exponential; stepping it in
/// log form keeps it strictly positive at every node, which raw Euler on the
/// linearized SDE does not guarantee at coarse step sizes.
pub fn simulate_variational(ens: &mut PathEnsemble, m: &ModelSpec) -> Result<(), McError> {
    simulate_variational_workers(ens, m, worker_count())
}

pub fn simulate_variational_workers(
    ens: &mut PathEnsemble,
    m: &ModelSpec,
    workers: usize,
) -> Result<(), McError> {
    let cm = m.compile();
    let (paths, steps) = (ens.paths, ens.steps);
    let dt = ens.dt;
    let mut grad = vec![0.0f64; paths * (steps + 1)];
    let chunks = path_chunks(paths, workers);

    let failure = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        let mut rest: &mut [f64] = &mut grad;
        for &(lo, hi) in &chunks {
            let n = hi - lo;
            let (chunk, r) = rest.split_at_mut(n * (steps + 1));
            rest = r;
            let cm = &cm;
            let ens = &*ens;
            handles.push(scope.spawn(move || -> Option<(usize, usize)> {
                for j in 0..n {
                    let p = lo + j;
                    let row = &mut chunk[j * (steps + 1)..(j + 1) * (steps + 1)];
                    row[0] = 1.0;
                    for k in 0..steps {
                        let t = k as f64 * dt;
                        let xk = ens.x_at(p, k);
                        let dwk = ens.dw_at(p, k);
                        let bx = cm.b_x.eval_tx(t, xk);
                        let mut sx2 = 0.0;
                        let mut noise = 0.0;
                        for (sigma_x, dwc) in cm.sigma_x.iter().zip(dwk) {
                            let sx = sigma_x.eval_tx(t, xk);
                            sx2 += sx * sx;
                            noise += sx * dwc;
                        }
                        let factor = ((bx - 0.5 * sx2) * dt + noise).exp();
                        let next = row[k] * factor;
                        if !next.is_finite() || next <= 0.0 {
                            return Some((p, k));
                        }
                        row[k + 1] = next;
                    }
                }
                None
            }));
        }
        min_error(
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect(),
        )
    });
    if let Some((path, step)) = failure {
        return Err(McError::NonFiniteVariational { path, step });
    }
    ens.grad_x = grad;
    Ok(())
}

/// Componentwise truncation of a Z vector before the driver sees it.
#[inline]
pub(crate) fn clip_z(z: &[f64], level: f64, out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(z) {
        *o = v.clamp(-level, level);
    }
}

/// Exponential weight `e` and terminal change-of-measure density `M_T`.
#[derive(Debug, Clone)]
pub struct WeightProcesses {
    /// `paths x (steps + 1)`, `e[., 0] = 1`.
    e: Vec<f64>,
    /// Terminal Girsanov density per path; strictly positive.
    m_terminal: Vec<f64>,
    paths: usize,
    steps: usize,
    /// Summary of the difference-quotient integrands that built the weights.
    pub drift_used: DriftStats,
}

impl WeightProcesses {
    #[inline]
    pub fn e_at(&self, p: usize, k: usize) -> f64 {
        self.e[p * (self.steps + 1) + k]
    }

    #[inline]
    pub fn m_terminal(&self, p: usize) -> f64 {
        self.m_terminal[p]
    }

    pub fn m_terminal_mean_se(&self) -> EstimateWithError {
        mean_se(&self.m_terminal)
    }

    pub fn paths(&self) -> usize {
        self.paths
    }
}

/// Range/average record of the drift kernels used in the weights.
#[derive(Debug, Clone, Default)]
pub struct DriftStats {
    pub y_quotient_min: f64,
    pub y_quotient_max: f64,
    pub y_quotient_mean: f64,
    /// Nodes where |Y| < 1e-12 forced the analytic limit df/dy(t,x,0,z).
    pub y_limit_substitutions: usize,
    pub kernel_norm_max: f64,
    pub kernel_norm_mean: f64,
    /// Nodes where |Z| < 1e-12 zeroed the Girsanov kernel.
    pub kernel_zeroed: usize,
}

/// Build the weight processes along the ensemble from the regression
/// solution.
pub fn malliavin_weights(
    ens: &PathEnsemble,
    m: &ModelSpec,
    sol: &BsdeSolution,
) -> Result<WeightProcesses, McError> {
    malliavin_weights_workers(ens, m, sol, worker_count())
}

pub fn malliavin_weights_workers(
    ens: &PathEnsemble,
    m: &ModelSpec,
    sol: &BsdeSolution,
    workers: usize,
) -> Result<WeightProcesses, McError> {
    let cm = m.compile();
    let d = ens.d;
    let (paths, steps) = (ens.paths, ens.steps);
    let dt = ens.dt;
    let mut e = vec![0.0f64; paths * (steps + 1)];
    let mut m_terminal = vec![0.0f64; paths];
    // per-path aggregates, reduced serially afterwards so the report is
    // independent of the worker count
    let mut q_min = vec![f64::INFINITY; paths];
    let mut q_max = vec![f64::NEG_INFINITY; paths];
    let mut q_sum = vec![0.0f64; paths];
    let mut q_limit = vec![0usize; paths];
    let mut k_max = vec![0.0f64; paths];
    let mut k_sum = vec![0.0f64; paths];
    let mut k_zero = vec![0usize; paths];
    let chunks = path_chunks(paths, workers);

    let failure = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        let mut e_rest: &mut [f64] = &mut e;
        let mut m_rest: &mut [f64] = &mut m_terminal;
        let mut qmin_rest: &mut [f64] = &mut q_min;
        let mut qmax_rest: &mut [f64] = &mut q_max;
        let mut qsum_rest: &mut [f64] = &mut q_sum;
        let mut kmax_rest: &mut [f64] = &mut k_max;
        let mut ksum_rest: &mut [f64] = &mut k_sum;
        let mut qlim_rest: &mut [usize] = &mut q_limit;
        let mut kzero_rest: &mut [usize] = &mut k_zero;
        for &(lo, hi) in &chunks {
            let n = hi - lo;
            let (e_chunk, r) = e_rest.split_at_mut(n * (steps + 1));
            e_rest = r;
            let (m_chunk, r) = m_rest.split_at_mut(n);
            m_rest = r;
            let (qmin_c, r) = qmin_rest.split_at_mut(n);
            qmin_rest = r;
            let (qmax_c, r) = qmax_rest.split_at_mut(n);
            qmax_rest = r;
            let (qsum_c, r) = qsum_rest.split_at_mut(n);
            qsum_rest = r;
            let (kmax_c, r) = kmax_rest.split_at_mut(n);
            kmax_rest = r;
            let (ksum_c, r) = ksum_rest.split_at_mut(n);
            ksum_rest = r;
            let (qlim_c, r) = qlim_rest.split_at_mut(n);
            qlim_rest = r;
            let (kzero_c, r) = kzero_rest.split_at_mut(n);
            kzero_rest = r;
            let cm = &cm;
            handles.push(scope.spawn(move || -> Option<usize> {
                let zeros = vec![0.0f64; d];
                for j in 0..n {
                    let p = lo + j;
                    let erow = &mut e_chunk[j * (steps + 1)..(j + 1) * (steps + 1)];
                    erow[0] = 1.0;
                    let mut log_m = 0.0f64;
                    for k in 0..steps {
                        let t = k as f64 * dt;
                        let xk = ens.x_at(p, k);
                        let yk = sol.y_at(p, k);
                        let zk = sol.z_at(p, k);
                        let dwk = ens.dw_at(p, k);

                        let f_0z = cm.f.eval(t, xk, 0.0, zk);
                        let q = if yk.abs() >= QUOTIENT_EPS {
                            (cm.f.eval(t, xk, yk, zk) - f_0z) / yk
                        } else {
                            qlim_c[j] += 1;
                            cm.f_y.eval(t, xk, 0.0, zk)
                        };
                        erow[k + 1] = erow[k] * (q * dt).exp();

                        let z2: f64 = zk.iter().map(|v| v * v).sum();
                        let znorm = z2.sqrt();
                        let mut theta2 = 0.0;
                        if znorm >= QUOTIENT_EPS {
                            let f_00 = cm.f.eval(t, xk, 0.0, &zeros);
                            let scale = (f_0z - f_00) / z2;
                            let mut dot = 0.0;
                            for (zc, dwc) in zk.iter().zip(dwk) {
                                let theta_c = scale * zc;
                                theta2 += theta_c * theta_c;
                                dot += theta_c * dwc;
                            }
                            log_m += dot - 0.5 * theta2 * dt;
                        } else {
                            kzero_c[j] += 1;
                        }

                        qmin_c[j] = qmin_c[j].min(q);
                        qmax_c[j] = qmax_c[j].max(q);
                        qsum_c[j] += q;
                        let knorm = theta2.sqrt();
                        kmax_c[j] = kmax_c[j].max(knorm);
                        ksum_c[j] += knorm;
                    }
                    let m_t = log_m.exp();
                    if !erow.iter().all(|v| v.is_finite()) || !m_t.is_finite() || m_t <= 0.0 {
                        return Some(p);
                    }
                    m_chunk[j] = m_t;
                }
                None
            }));
        }
        handles
            .into_iter()
            .filter_map(|h| h.join().expect("worker panicked"))
            .min()
    });
    if let Some(path) = failure {
        return Err(McError::WeightOverflow { path });
    }

    let total = (paths * steps) as f64;
    let drift_used = DriftStats {
        y_quotient_min: q_min.iter().cloned().fold(f64::INFINITY, f64::min),
        y_quotient_max: q_max.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        y_quotient_mean: q_sum.iter().sum::<f64>() / total,
        y_limit_substitutions: q_limit.iter().sum(),
        kernel_norm_max: k_max.iter().cloned().fold(0.0, f64::max),
        kernel_norm_mean: k_sum.iter().sum::<f64>() / total,
        kernel_zeroed: k_zero.iter().sum(),
    };
    Ok(WeightProcesses {
        e,
        m_terminal,
        paths,
        steps,
        drift_used,
    })
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, Default)]
pub struct EstimateWithError {
    pub value: f64,
    pub std_error: f64,
}

impl EstimateWithError {
    /// |value - reference| <= multiple * SE + slack
    pub fn within(&self, reference: f64, multiple: f64, slack: f64) -> bool {
        (self.value - reference).abs() <= multiple * self.std_error + slack
    }
}

pub(crate) fn mean_se(values: &[f64]) -> EstimateWithError {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    EstimateWithError {
        value: mean,
        std_error: (var / n).sqrt(),
    }
}

/// Both gradient estimators derived from the weight representation.
#[derive(Debug, Clone, Copy)]
pub struct GradY0Estimate {
    /// f_x evaluated at (t, X, 0, 0), as written in the representation.
    pub at_origin: EstimateWithError,
    /// f_x evaluated at (t, X, Y, clip(Z)): the textbook linearization along
    /// the solution. For drivers linear in x the two coincide.
    pub at_solution: EstimateWithError,
}

/// Weighted estimate of `dY_0/dx0`.
pub fn grad_y0_via_weights(
    ens: &PathEnsemble,
    m: &ModelSpec,
    sol: &BsdeSolution,
    wts: &WeightProcesses,
    z_clip: f64,
) -> Result<GradY0Estimate, McError> {
    if !ens.has_variational() {
        return Err(McError::VariationalMissing);
    }
    let cm = m.compile();
    let d = ens.d;
    let (paths, steps) = (ens.paths, ens.steps);
    let dt = ens.dt;
    let mut val_origin = vec![0.0f64; paths];
    let mut val_solution = vec![0.0f64; paths];
    let chunks = path_chunks(paths, worker_count());

    std::thread::scope(|scope| {
        let mut o_rest: &mut [f64] = &mut val_origin;
        let mut s_rest: &mut [f64] = &mut val_solution;
        for &(lo, hi) in &chunks {
            let n = hi - lo;
            let (o_chunk, r) = o_rest.split_at_mut(n);
            o_rest = r;
            let (s_chunk, r) = s_rest.split_at_mut(n);
            s_rest = r;
            let cm = &cm;
            scope.spawn(move || {
                let zeros = vec![0.0f64; d];
                let mut zclip = vec![0.0f64; d];
                for j in 0..n {
                    let p = lo + j;
                    let mut acc_origin = 0.0;
                    let mut acc_solution = 0.0;
                    for k in 0..steps {
                        let t = k as f64 * dt;
                        let xk = ens.x_at(p, k);
                        let ek = wts.e_at(p, k);
                        let gk = ens.grad_at(p, k);
                        acc_origin += ek * cm.f_x.eval(t, xk, 0.0, &zeros) * gk * dt;
                        clip_z(sol.z_at(p, k), z_clip, &mut zclip);
                        acc_solution += ek * cm.f_x.eval(t, xk, sol.y_at(p, k), &zclip) * gk * dt;
                    }
                    let terminal = wts.e_at(p, steps)
                        * cm.g_x.eval_tx(0.0, ens.x_at(p, steps))
                        * ens.grad_at(p, steps);
                    let m_t = wts.m_terminal(p);
                    o_chunk[j] = m_t * (terminal + acc_origin);
                    s_chunk[j] = m_t * (terminal + acc_solution);
                }
            });
        }
    });

    Ok(GradY0Estimate {
        at_origin: mean_se(&val_origin),
        at_solution: mean_se(&val_solution),
    })
}

/// CSV export: `path,k,t,X,gradX,Y,Z1..Zd,e`, path-major then step order,
/// 17 significant digits. `Z` columns are empty on the terminal row.
pub fn write_paths_csv<W: Write>(
    ens: &PathEnsemble,
    sol: &BsdeSolution,
    wts: &WeightProcesses,
    mut w: W,
) -> Result<(), McError> {
    if !ens.has_variational() {
        return Err(McError::VariationalMissing);
    }
    write!(w, "path,k,t,X,gradX,Y")?;
    for c in 1..=ens.d {
        write!(w, ",Z{c}")?;
    }
    writeln!(w, ",e")?;
    for p in 0..ens.paths {
        for k in 0..=ens.steps {
            write!(
                w,
                "{p},{k},{},{},{},{}",
                fmt17(ens.t(k)),
                fmt17(ens.x_at(p, k)),
                fmt17(ens.grad_at(p, k)),
                fmt17(sol.y_at(p, k)),
            )?;
            if k < ens.steps {
                for &z in sol.z_at(p, k) {
                    write!(w, ",{}", fmt17(z))?;
                }
            } else {
                for _ in 0..ens.d {
                    write!(w, ",")?;
                }
            }
            writeln!(w, ",{}", fmt17(wts.e_at(p, k)))?;
        }
    }
    Ok(())
}
