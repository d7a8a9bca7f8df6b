//! Least-squares backward induction for the backward pair `(Y, Z)`.
//!
//! Conditional expectations are estimated by local partitioning: at each
//! step the cross-section is cut into equal-count quantile bins of `X_k`
//! with an affine fit per bin. `Z` is regressed on the martingale-increment
//! responses `(Y_{k+1} - E[Y_{k+1}|X_k]) dW_k / dt`; subtracting the fitted
//! conditional mean leaves the estimand unchanged (the subtracted term is
//! `F_k`-measurable) and removes the dominant `Y/sqrt(dt)` noise term.
//!
//! `Y` steps backward with an explicit predictor followed by a configurable
//! number of corrections of its own appearance inside the driver; the `Z`
//! argument of the driver is truncated at `z_clip` throughout.

use super::{clip_z, mean_se, EstimateWithError, McConfig, McError, PathEnsemble};
use crate::model::ModelSpec;

/// Bins whose X-span is below this are fitted as constants.
const DEGENERATE_SPAN: f64 = 1e-12;

/// Per-run regression quality record.
#[derive(Debug, Clone, Default)]
pub struct RegressionDiagnostics {
    /// R^2 of the conditional-mean fit of `Y_{k+1}` on `X_k`, per step.
    pub r2: Vec<f64>,
    /// Cross-path standard deviation of the Z responses per step (max over
    /// components); `/sqrt(paths)` bounds the error of a per-step mean.
    pub z_response_sd: Vec<f64>,
    pub min_occupancy: usize,
    pub max_occupancy: usize,
    /// Bins collapsed to a constant fit because their X-span vanished.
    pub degenerate_bins: usize,
    /// Pathwise estimate `mean_p [ g(X_T) + sum_k f dt ]`; its spread sets
    /// the standard error attached to `Y_0`.
    pub direct_estimate: EstimateWithError,
}

/// Regression solution of the backward equation on a path ensemble.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    paths: usize,
    steps: usize,
    d: usize,
    /// `paths x (steps + 1)`
    y: Vec<f64>,
    /// `paths x steps x d`
    z: Vec<f64>,
    y0: EstimateWithError,
    pub diagnostics: RegressionDiagnostics,
}

impl BsdeSolution {
    #[inline]
    pub fn y_at(&self, p: usize, k: usize) -> f64 {
        self.y[p * (self.steps + 1) + k]
    }

    #[inline]
    pub fn z_at(&self, p: usize, k: usize) -> &[f64] {
        let base = (p * self.steps + k) * self.d;
        &self.z[base..base + self.d]
    }

    pub fn paths(&self) -> usize {
        self.paths
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn d(&self) -> usize {
        self.d
    }

    /// `Y_0` with the standard error of the pathwise direct estimator (the
    /// regression value itself is deterministic across paths at step 0).
    pub fn y0(&self) -> EstimateWithError {
        self.y0
    }

    /// Cross-path mean of a Z component at one step.
    pub fn z_mean(&self, k: usize, c: usize) -> f64 {
        let n = self.paths as f64;
        (0..self.paths).map(|p| self.z_at(p, k)[c]).sum::<f64>() / n
    }

    /// Standard error of [`z_mean`](Self::z_mean) from the response spread.
    pub fn z_mean_se(&self, k: usize) -> f64 {
        self.diagnostics.z_response_sd[k] / (self.paths as f64).sqrt()
    }
}

struct AffineFit {
    mean_x: f64,
    mean_y: f64,
    slope: f64,
}

impl AffineFit {
    #[inline]
    fn predict(&self, x: f64) -> f64 {
        self.mean_y + self.slope * (x - self.mean_x)
    }
}

/// Least-squares fit of `resp ~ 1 + x` over the bin `members`, with a
/// constant fallback when the bin has no X spread.
fn fit_bin(members: &[usize], xs: &[f64], resp: &[f64], degenerate: &mut usize) -> AffineFit {
    let n = members.len() as f64;
    let mut mean_x = 0.0;
    let mut mean_y = 0.0;
    for &p in members {
        mean_x += xs[p];
        mean_y += resp[p];
    }
    mean_x /= n;
    mean_y /= n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut span_lo = f64::INFINITY;
    let mut span_hi = f64::NEG_INFINITY;
    for &p in members {
        let dx = xs[p] - mean_x;
        sxx += dx * dx;
        sxy += dx * (resp[p] - mean_y);
        span_lo = span_lo.min(xs[p]);
        span_hi = span_hi.max(xs[p]);
    }
    let slope = if span_hi - span_lo < DEGENERATE_SPAN || sxx <= 0.0 {
        *degenerate += 1;
        0.0
    } else {
        sxy / sxx
    };
    AffineFit {
        mean_x,
        mean_y,
        slope,
    }
}

/// Backward induction along the ensemble. Requires the forward pass only.
pub fn solve_bsde_regression(
    ens: &PathEnsemble,
    m: &ModelSpec,
    cfg: &McConfig,
) -> Result<BsdeSolution, McError> {
    cfg.validate()?;
    let cm = m.compile();
    let d = ens.d();
    let (paths, steps) = (ens.paths(), ens.steps());
    let dt = ens.dt();

    let mut y = vec![0.0f64; paths * (steps + 1)];
    let mut z = vec![0.0f64; paths * steps * d];

    // terminal condition, exactly g on the simulated terminal states
    for p in 0..paths {
        y[p * (steps + 1) + steps] = cm.g.eval_tx(0.0, ens.x_at(p, steps));
    }
    if y.iter()
        .skip(steps)
        .step_by(steps + 1)
        .any(|v| !v.is_finite())
    {
        return Err(McError::NonFiniteRegression { step: steps });
    }

    let mut diagnostics = RegressionDiagnostics {
        r2: vec![0.0; steps],
        z_response_sd: vec![0.0; steps],
        min_occupancy: usize::MAX,
        max_occupancy: 0,
        ..Default::default()
    };

    let mut xs = vec![0.0f64; paths];
    let mut order: Vec<usize> = (0..paths).collect();
    let mut resp = vec![0.0f64; paths];
    let mut cond = vec![0.0f64; paths];
    let mut y_curr = vec![0.0f64; paths];
    let mut y_next_buf = vec![0.0f64; paths];
    let mut zclip = vec![0.0f64; d];
    // accumulates f dt contributions for the direct estimator
    let mut driver_acc = vec![0.0f64; paths];

    for k in (0..steps).rev() {
        let t = k as f64 * dt;
        for (p, slot) in xs.iter_mut().enumerate() {
            *slot = ens.x_at(p, k);
        }
        order.sort_unstable_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let span = xs[order[paths - 1]] - xs[order[0]];
        let bins = if span < DEGENERATE_SPAN {
            1
        } else {
            cfg.bins.min(paths / 2).max(1)
        };

        // conditional mean of Y_{k+1}
        for p in 0..paths {
            resp[p] = y[p * (steps + 1) + k + 1];
        }
        let global_mean = resp.iter().sum::<f64>() / paths as f64;
        let mut ssr = 0.0;
        let mut sst = 0.0;
        for b in 0..bins {
            let lo = b * paths / bins;
            let hi = (b + 1) * paths / bins;
            let members = &order[lo..hi];
            diagnostics.min_occupancy = diagnostics.min_occupancy.min(members.len());
            diagnostics.max_occupancy = diagnostics.max_occupancy.max(members.len());
            let fit = fit_bin(members, &xs, &resp, &mut diagnostics.degenerate_bins);
            for &p in members {
                cond[p] = fit.predict(xs[p]);
                let r = resp[p] - cond[p];
                ssr += r * r;
                let dm = resp[p] - global_mean;
                sst += dm * dm;
            }
        }
        diagnostics.r2[k] = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };

        // Z components from martingale-increment responses
        let mut max_resp_sd = 0.0f64;
        for c in 0..d {
            for p in 0..paths {
                let y_next = y[p * (steps + 1) + k + 1];
                resp[p] = (y_next - cond[p]) * ens.dw_at(p, k)[c] / dt;
            }
            let stats = mean_se(&resp);
            max_resp_sd = max_resp_sd.max(stats.std_error * (paths as f64).sqrt());
            let mut dummy = 0;
            for b in 0..bins {
                let lo = b * paths / bins;
                let hi = (b + 1) * paths / bins;
                let members = &order[lo..hi];
                let fit = fit_bin(members, &xs, &resp, &mut dummy);
                for &p in members {
                    z[(p * steps + k) * d + c] = fit.predict(xs[p]);
                }
            }
        }
        diagnostics.z_response_sd[k] = max_resp_sd;

        // explicit Y predictor, then Picard corrections of the Y argument
        y_curr.copy_from_slice(&cond);
        for _ in 0..=cfg.picard_refinements {
            for p in 0..paths {
                clip_z(
                    &z[(p * steps + k) * d..(p * steps + k + 1) * d],
                    cfg.z_clip,
                    &mut zclip,
                );
                y_next_buf[p] = cond[p] + cm.f.eval(t, xs[p], y_curr[p], &zclip) * dt;
            }
            std::mem::swap(&mut y_curr, &mut y_next_buf);
        }
        for p in 0..paths {
            let v = y_curr[p];
            if !v.is_finite() {
                return Err(McError::NonFiniteRegression { step: k });
            }
            y[p * (steps + 1) + k] = v;
            driver_acc[p] += v - cond[p];
        }
    }

    // direct estimator: terminal value plus accumulated driver increments
    for p in 0..paths {
        driver_acc[p] += y[p * (steps + 1) + steps];
    }
    let direct = mean_se(&driver_acc);
    diagnostics.direct_estimate = direct;
    let y0_value = (0..paths).map(|p| y[p * (steps + 1)]).sum::<f64>() / paths as f64;
    let y0 = EstimateWithError {
        value: y0_value,
        std_error: direct.std_error,
    };

    Ok(BsdeSolution {
        paths,
        steps,
        d,
        y,
        z,
        y0,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::{simulate_forward, McConfig};

    fn model(b: &str, sigma: &[&str], f: &str, g: &str, horizon: f64, x0: f64) -> ModelSpec {
        ModelSpec::from_sources(b, sigma, f, g, horizon, x0).unwrap()
    }

    #[test]
    fn martingale_representation() {
        // f = 0, g = x: Y_k = X_k (a martingale), Z = sigma = 1
        let m = model("0", &["1"], "0", "x", 1.0, 0.5);
        let cfg = McConfig::new(20_000, 50, 21, 1.0);
        let ens = simulate_forward(&m, &cfg).unwrap();
        let sol = solve_bsde_regression(&ens, &m, &cfg).unwrap();
        let y0 = sol.y0();
        assert!(
            y0.within(0.5, 3.0, 1e-9),
            "Y0 = {} (se {})",
            y0.value,
            y0.std_error
        );
        for k in 0..50 {
            let zm = sol.z_mean(k, 0);
            assert!((zm - 1.0).abs() <= 0.05, "step {k}: mean Z = {zm}");
        }
    }

    #[test]
    fn terminal_slice_is_g_exactly() {
        let m = model("0", &["1"], "0.5*z1^2", "tanh(x)", 1.0, 0.0);
        let cfg = McConfig::new(500, 20, 4, 1.0);
        let ens = simulate_forward(&m, &cfg).unwrap();
        let sol = solve_bsde_regression(&ens, &m, &cfg).unwrap();
        let g = m.compile().g;
        for p in 0..500 {
            let want = g.eval_tx(0.0, ens.x_at(p, 20));
            assert_eq!(sol.y_at(p, 20).to_bits(), want.to_bits());
        }
    }

    #[test]
    fn cole_hopf_y0() {
        // f = z^2/2, g = x: Y_0 = x0 + T/2
        let m = model("0", &["1"], "0.5*z1^2", "x", 1.0, 0.0);
        let cfg = McConfig::new(20_000, 100, 33, 1.0);
        let ens = simulate_forward(&m, &cfg).unwrap();
        let sol = solve_bsde_regression(&ens, &m, &cfg).unwrap();
        let y0 = sol.y0();
        assert!(
            y0.within(0.5, 3.0, 0.02),
            "Y0 = {} (se {})",
            y0.value,
            y0.std_error
        );
    }

    #[test]
    fn doubling_paths_shrinks_se_like_sqrt2() {
        let m = model("0", &["1"], "0.1*y", "tanh(x)", 1.0, 0.0);
        let cfg1 = McConfig::new(10_000, 40, 9, 1.0);
        let cfg2 = McConfig::new(20_000, 40, 9, 1.0);
        let se = |cfg: &McConfig| {
            let ens = simulate_forward(&m, cfg).unwrap();
            solve_bsde_regression(&ens, &m, cfg).unwrap().y0().std_error
        };
        let ratio = se(&cfg1) / se(&cfg2);
        let expect = (2.0f64).sqrt();
        assert!(
            (ratio - expect).abs() <= 0.2 * expect,
            "SE ratio {ratio}, want about {expect}"
        );
    }
}
