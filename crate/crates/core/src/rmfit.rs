//! Restoration-estimation Robbins-Monro fitting for hidden regimes.
//!
//! Each iteration draws a regime path from its exact posterior under the
//! current parameters, takes one stochastic gradient step on the local
//! least-squares potential at every grid point, re-estimates the chain
//! from path counts and updates the Polyak average of the curve iterates.
//! After the loop, the critical point `theta*` and the sandwich covariance
//! `H^-1 Gamma H^-1` give pointwise bands for the averaged iterate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernelsmooth::{
    indicator_sums, regime_counts, weighted_sums, BandwidthChoice, EvalGrid, Kernel, SortedLags,
};
use crate::model::{stationary_distribution, Series, TransitionMatrix};
use crate::numeric::{self, z_two_sided, Square};
use crate::restoration::{emissions, forward_backward_with, sample_path, PosteriorMarginals};

/// Truncation rule for the lag double sum in `Gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagPolicy {
    /// Smallest lag `L` with `max_ij |A^L_ij - pi_j| <= tol`.
    Tolerance(f64),
    Fixed(usize),
}

impl Default for LagPolicy {
    fn default() -> Self {
        LagPolicy::Tolerance(1e-8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RestoreFrom {
    #[default]
    Averaged,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    #[default]
    PerRegime,
    Pooled,
    /// Known noise standard deviation, shared by all regimes.
    Known(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RMConfig {
    pub m: usize,
    pub grid: EvalGrid,
    pub kernel: Kernel,
    pub k0: f64,
    pub gamma0: f64,
    /// Step-size exponent in `gamma_t = gamma0 * t^-exponent`.
    pub gamma_exponent: f64,
    pub iterations: usize,
    pub seed: u64,
    pub lag: LagPolicy,
    pub band_alpha: f64,
    pub restore_from: RestoreFrom,
    pub sigma_mode: SigmaMode,
    /// Keep bandwidths fixed after this many iterations.
    pub freeze_h_after: Option<usize>,
}

impl RMConfig {
    pub fn new(m: usize, grid: EvalGrid) -> Self {
        RMConfig {
            m,
            grid,
            kernel: Kernel::Triweight,
            k0: 0.55,
            gamma0: 1.0,
            gamma_exponent: 0.6,
            iterations: 1000,
            seed: 0,
            lag: LagPolicy::default(),
            band_alpha: 0.05,
            restore_from: RestoreFrom::Averaged,
            sigma_mode: SigmaMode::PerRegime,
            freeze_h_after: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("m must be positive".into()));
        }
        if !(self.gamma_exponent > 0.5 && self.gamma_exponent <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "step-size exponent must be in (0.5, 1], got {}",
                self.gamma_exponent
            )));
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma0 must be positive, got {}", self.gamma0)));
        }
        if !(self.k0 > 0.0) {
            return Err(Error::InvalidArgument(format!("k0 must be positive, got {}", self.k0)));
        }
        if !(self.band_alpha > 0.0 && self.band_alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("band alpha must be in (0, 1], got {}", self.band_alpha)));
        }
        if let LagPolicy::Tolerance(t) = self.lag {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument("lag tolerance must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn step_size(&self, t: usize) -> f64 {
        self.gamma0 * (t as f64).powf(-self.gamma_exponent)
    }

    fn bandwidth_choice(&self) -> BandwidthChoice {
        BandwidthChoice::Rule { k0: self.k0 }
    }
}

#[derive(Debug, Clone)]
pub struct RMState {
    pub t: usize,
    /// `theta[i][g]`: regime `i` at grid point `g`.
    pub theta: Vec<Vec<f64>>,
    pub theta_bar: Vec<Vec<f64>>,
    pub a: TransitionMatrix,
    pub lambda: Vec<f64>,
    /// Per-regime residual scales (std. dev.).
    pub sigma: Vec<f64>,
    pub h: Vec<f64>,
    pub path: Vec<usize>,
    pub rng: ChaCha8Rng,
}

impl RMState {
    /// Noise scales fed to the emission densities.
    pub fn emission_sigma(&self, mode: SigmaMode) -> Vec<f64> {
        match mode {
            SigmaMode::PerRegime => self.sigma.clone(),
            SigmaMode::Pooled => {
                let m = self.sigma.len();
                let pooled: f64 = self.lambda.iter().zip(&self.sigma).map(|(l, s)| l * s * s).sum::<f64>().sqrt();
                vec![pooled; m]
            }
            SigmaMode::Known(s) => vec![s; self.sigma.len()],
        }
    }
}

/// Residual scale per regime; `None` for regimes absent from `path`.
fn path_scales(y: &[f64], lags: &SortedLags, path: &[usize], m: usize, config: &RMConfig) -> Vec<Option<f64>> {
    let counts = regime_counts(path, m);
    let present: Vec<usize> = (0..m).filter(|&i| counts[i] > 0).collect();
    if present.len() == m {
        match crate::kernelsmooth::regime_scales(y, lags, path, m, config.kernel, &config.bandwidth_choice()) {
            Ok(s) => return s.into_iter().map(Some).collect(),
            Err(_) => return vec![None; m],
        }
    }
    // relabel the visited regimes densely and fit those
    let mut dense = vec![usize::MAX; m];
    for (d, &i) in present.iter().enumerate() {
        dense[i] = d;
    }
    let sub: Vec<usize> = path.iter().map(|&i| dense[i]).collect();
    let mut out = vec![None; m];
    if let Ok(s) = crate::kernelsmooth::regime_scales(y, lags, &sub, present.len(), config.kernel, &config.bandwidth_choice()) {
        for (d, &i) in present.iter().enumerate() {
            out[i] = Some(s[d]);
        }
    }
    out
}

fn lambda_from_path(path: &[usize], m: usize) -> Vec<f64> {
    let n = path.len() as f64;
    regime_counts(path, m).into_iter().map(|c| c as f64 / n).collect()
}

fn nw_on_grid(y: &[f64], lags: &SortedLags, path: &[usize], h: &[f64], kernel: Kernel, grid: &EvalGrid) -> Vec<Vec<f64>> {
    let m = h.len();
    let sums: Vec<(Vec<f64>, Vec<f64>)> =
        grid.points().par_iter().map(|&p| indicator_sums(p, y, lags, path, h, kernel)).collect();
    (0..m).map(|i| sums.iter().map(|(s0, s1)| if s0[i] > 0.0 { s1[i] / s0[i] } else { 0.0 }).collect()).collect()
}

fn transpose_to_regimes(per_point: Vec<Vec<f64>>, m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|i| per_point.iter().map(|row| row[i]).collect()).collect()
}

/// Step 0: uniform random initial path, Nadaraya-Watson curves for it,
/// and chain estimates from its counts.
pub fn rm_init<R: Rng + ?Sized>(series: &Series, config: &RMConfig, rng: &mut R) -> Result<RMState> {
    config.validate()?;
    let m = config.m;
    let n = series.n();
    let mut attempts = 0;
    let path = loop {
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        if regime_counts(&p, m).iter().all(|&c| c > 0) {
            break p;
        }
        attempts += 1;
        if attempts >= 100 {
            let empty = regime_counts(&p, m).iter().enumerate().filter(|(_, &c)| c == 0).map(|(i, _)| i + 1).collect();
            return Err(Error::EmptyRegime(empty));
        }
    };
    let state_rng = ChaCha8Rng::seed_from_u64(rng.random());
    init_from_path(series, config, path, state_rng)
}

/// Step 0 from a given initial path.
pub fn init_from_path(series: &Series, config: &RMConfig, path: Vec<usize>, rng: ChaCha8Rng) -> Result<RMState> {
    config.validate()?;
    let m = config.m;
    if path.len() != series.n() {
        return Err(Error::LengthMismatch(path.len(), series.n()));
    }
    let lags = SortedLags::new(&series.y);
    let sigma = crate::kernelsmooth::regime_scales(&series.y, &lags, &path, m, config.kernel, &config.bandwidth_choice())?;
    let h = crate::kernelsmooth::regime_bandwidths(series.n(), &sigma, &config.bandwidth_choice())?;
    let theta = nw_on_grid(&series.y, &lags, &path, &h, config.kernel, &config.grid);
    Ok(RMState {
        t: 0,
        theta_bar: theta.clone(),
        theta,
        a: TransitionMatrix::from_path(&path, m, None),
        lambda: lambda_from_path(&path, m),
        sigma,
        h,
        path,
        rng,
    })
}

/// Local weighted least-squares potential at `y`:
/// `sum_i 1/(n h_i) sum_k K((y - Y_k)/h_i) 1_i(X_{k+1}) (Y_{k+1} - theta_i)^2`.
pub fn potential(series: &Series, path: &[usize], theta: &[f64], y: f64, h: &[f64], kernel: Kernel) -> f64 {
    let n = series.n();
    (0..n)
        .map(|k| {
            let i = path[k];
            let r = series.y[k + 1] - theta[i];
            kernel.eval((y - series.y[k]) / h[i]) * r * r / (n as f64 * h[i])
        })
        .sum()
}

fn gradient_with(
    y: &[f64],
    lags: &SortedLags,
    path: &[usize],
    theta: &[Vec<f64>],
    h: &[f64],
    kernel: Kernel,
    grid: &EvalGrid,
) -> Vec<Vec<f64>> {
    let m = h.len();
    let n = (y.len() - 1) as f64;
    let per_point: Vec<Vec<f64>> = grid
        .points()
        .par_iter()
        .enumerate()
        .map(|(g, &p)| {
            let (s0, s1) = indicator_sums(p, y, lags, path, h, kernel);
            (0..m).map(|i| -2.0 / (n * h[i]) * (s1[i] - theta[i][g] * s0[i])).collect()
        })
        .collect();
    transpose_to_regimes(per_point, m)
}

/// Exact gradient of the potential in `theta` at every grid point.
pub fn rm_gradient(
    series: &Series,
    path: &[usize],
    theta: &[Vec<f64>],
    h: &[f64],
    kernel: Kernel,
    grid: &EvalGrid,
) -> Vec<Vec<f64>> {
    let lags = SortedLags::new(&series.y);
    gradient_with(&series.y, &lags, path, theta, h, kernel, grid)
}

/// One iteration of steps R, E and A with step size `gamma_t(state.t + 1)`.
pub fn rm_step(state: RMState, series: &Series, config: &RMConfig) -> Result<RMState> {
    let lags = SortedLags::new(&series.y);
    let gain = config.step_size(state.t + 1);
    step_inner(state, series, &lags, config, gain, None)
}

/// As [`rm_step`] with an explicit gain and, optionally, a fixed path in
/// place of the restoration draw.
pub fn rm_step_with(
    state: RMState,
    series: &Series,
    config: &RMConfig,
    gain: f64,
    fixed_path: Option<&[usize]>,
) -> Result<RMState> {
    let lags = SortedLags::new(&series.y);
    step_inner(state, series, &lags, config, gain, fixed_path)
}

fn step_inner(
    mut state: RMState,
    series: &Series,
    lags: &SortedLags,
    config: &RMConfig,
    gain: f64,
    fixed_path: Option<&[usize]>,
) -> Result<RMState> {
    let m = config.m;
    let y = &series.y;
    let t = state.t + 1;

    // R: restoration
    let path = match fixed_path {
        Some(p) => p.to_vec(),
        None => {
            let curves = match config.restore_from {
                RestoreFrom::Averaged => &state.theta_bar,
                RestoreFrom::Raw => &state.theta,
            };
            let em = emissions(y, curves, &state.emission_sigma(config.sigma_mode), &config.grid)?;
            sample_path(&em, &state.a, &state.lambda, &mut state.rng)?
        }
    };

    // E: scales, bandwidths, gradient step, chain counts
    let scales = path_scales(y, lags, &path, m, config);
    let frozen = config.freeze_h_after.is_some_and(|w| t > w);
    let mut sigma = state.sigma.clone();
    let mut h = state.h.clone();
    for i in 0..m {
        if let Some(s) = scales[i].filter(|s| *s > 0.0) {
            sigma[i] = s;
            if !frozen {
                h[i] = crate::kernelsmooth::bandwidth(series.n() as f64, s, config.k0)?;
            }
        }
    }
    let grad = gradient_with(y, lags, &path, &state.theta, &h, config.kernel, &config.grid);
    let theta: Vec<Vec<f64>> = state
        .theta
        .iter()
        .zip(&grad)
        .map(|(row, g)| row.iter().zip(g).map(|(th, gi)| th - gain * gi).collect())
        .collect();
    let a = TransitionMatrix::from_path(&path, m, Some(&state.a));
    let lambda = lambda_from_path(&path, m);

    // A: Polyak averaging
    let inv_t = 1.0 / t as f64;
    let theta_bar: Vec<Vec<f64>> = state
        .theta_bar
        .iter()
        .zip(&theta)
        .map(|(bar, th)| bar.iter().zip(th).map(|(b, x)| b + (x - b) * inv_t).collect())
        .collect();

    Ok(RMState { t, theta, theta_bar, a, lambda, sigma, h, path, rng: state.rng })
}

/// Posterior-weighted kernel ratio `theta*_i(y)` and the weighted density
/// `f~_i(y) = (1/(n h_i)) sum_k K((y - Y_k)/h_i) gamma[k][i]` on the grid.
pub struct CriticalPoint {
    pub theta_star: Vec<Vec<f64>>,
    pub f_tilde: Vec<Vec<f64>>,
}

pub fn critical_point(series: &Series, gamma: &[Vec<f64>], h: &[f64], kernel: Kernel, grid: &EvalGrid) -> CriticalPoint {
    let lags = SortedLags::new(&series.y);
    let m = h.len();
    let n = series.n() as f64;
    let sums: Vec<(Vec<f64>, Vec<f64>)> =
        grid.points().par_iter().map(|&p| weighted_sums(p, &series.y, &lags, gamma, h, kernel)).collect();
    let theta_star =
        (0..m).map(|i| sums.iter().map(|(s0, s1)| if s0[i] > 0.0 { s1[i] / s0[i] } else { 0.0 }).collect()).collect();
    let f_tilde = (0..m).map(|i| sums.iter().map(|(s0, _)| s0[i] / (n * h[i])).collect()).collect();
    CriticalPoint { theta_star, f_tilde }
}

pub fn theta_star(series: &Series, gamma: &PosteriorMarginals, h: &[f64], kernel: Kernel, grid: &EvalGrid) -> Vec<Vec<f64>> {
    critical_point(series, &gamma.gamma, h, kernel, grid).theta_star
}

/// Cached powers `A^d` of a transition matrix.
#[derive(Debug, Clone)]
pub struct LagPowers {
    a: Square,
    powers: Vec<Square>,
}

impl LagPowers {
    pub fn new(a: &TransitionMatrix) -> Self {
        LagPowers { a: a.rows().clone(), powers: vec![numeric::identity(a.m())] }
    }

    pub fn get(&mut self, d: usize) -> &Square {
        while self.powers.len() <= d {
            let next = numeric::mat_mul(self.powers.last().expect("non-empty"), &self.a);
            self.powers.push(next);
        }
        &self.powers[d]
    }
}

/// `chi_ij(k, k')`: covariance of `1_i(X_{k+1})` and `1_j(X_{k'+1})`
/// under the chain with marginals `gamma` and transition `A*`.
pub fn chi_cov(gamma: &[Vec<f64>], powers: &mut LagPowers, k: usize, kp: usize, i: usize, j: usize) -> f64 {
    if k <= kp {
        gamma[k][i] * (powers.get(kp - k)[i][j] - gamma[kp][j])
    } else {
        gamma[kp][j] * (powers.get(k - kp)[j][i] - gamma[k][i])
    }
}

/// Lag after which `A^d` is within `tol` of its rank-one limit, and the
/// limit law. Falls back to `cap` when the chain does not settle.
fn mixing_lag(a: &TransitionMatrix, powers: &mut LagPowers, tol: f64, cap: usize) -> (usize, Option<Vec<f64>>) {
    let Ok(pi) = stationary_distribution(a) else {
        return (cap, None);
    };
    for d in 0..=cap {
        let p = powers.get(d);
        let dev = p.iter().flat_map(|row| row.iter().zip(&pi).map(|(x, q)| (x - q).abs())).fold(0.0, f64::max);
        if dev <= tol {
            return (d, Some(pi));
        }
    }
    (cap, Some(pi))
}

/// Everything needed to evaluate `Gamma` at many grid points.
pub struct GammaContext<'a> {
    series: &'a Series,
    lags: SortedLags,
    gamma: &'a [Vec<f64>],
    h: &'a [f64],
    kernel: Kernel,
    powers: Vec<Square>,
    pi: Vec<f64>,
    pub lag: usize,
}

impl<'a> GammaContext<'a> {
    pub fn new(
        series: &'a Series,
        gamma: &'a [Vec<f64>],
        a_star: &TransitionMatrix,
        h: &'a [f64],
        kernel: Kernel,
        lag: LagPolicy,
    ) -> Self {
        let n = series.n();
        let cap = n.saturating_sub(1);
        let mut powers = LagPowers::new(a_star);
        let (lag, pi) = match lag {
            LagPolicy::Tolerance(tol) => mixing_lag(a_star, &mut powers, tol, cap),
            LagPolicy::Fixed(l) => (l.min(cap), stationary_distribution(a_star).ok()),
        };
        // without a limit law the decomposition below is still exact as long as every lag is kept
        let (lag, pi) = match pi {
            Some(pi) => (lag, pi),
            None => (cap, vec![0.0; a_star.m()]),
        };
        powers.get(lag);
        GammaContext {
            series,
            lags: SortedLags::new(&series.y),
            gamma,
            h,
            kernel,
            powers: powers.powers[..=lag].to_vec(),
            pi,
            lag,
        }
    }

    /// `Gamma(y)` for the critical values `theta` (one per regime).
    ///
    /// `chi` is split into a geometrically decaying part `mu (A^d - pi)`,
    /// summed over lags up to `self.lag`, and a remainder whose double
    /// sum over all pairs collapses to prefix sums and is added exactly.
    pub fn at(&self, y: f64, theta: &[f64]) -> Square {
        let m = self.h.len();
        let mut out = vec![vec![0.0; m]; m];
        if m == 1 {
            // chi vanishes identically for a single regime
            return out;
        }
        let ys = &self.series.y;
        let n = self.series.n() as f64;
        let hmax = self.h.iter().copied().fold(0.0, f64::max);
        let mut active: Vec<usize> = self.lags.window(y - hmax, y + hmax).iter().map(|e| e.1).collect();
        active.sort_unstable();
        // a[p][i] = (Y_{k+1} - theta_i) K((y - Y_k)/h_i) for k = active[p]
        let a: Vec<Vec<f64>> = active
            .iter()
            .map(|&k| (0..m).map(|i| (ys[k + 1] - theta[i]) * self.kernel.eval((y - ys[k]) / self.h[i])).collect())
            .collect();
        let mu = |p: usize, i: usize| self.gamma[active[p]][i];
        let len = active.len();

        let mut decay = vec![vec![0.0; m]; m];
        for p in 0..len {
            for q in p..len {
                let d = active[q] - active[p];
                if d > self.lag {
                    break;
                }
                let pw = &self.powers[d];
                for i in 0..m {
                    for j in 0..m {
                        // k = active[p] <= k' = active[q]
                        decay[i][j] += a[p][i] * a[q][j] * mu(p, i) * (pw[i][j] - self.pi[j]);
                        if q > p {
                            // k = active[q] > k' = active[p]
                            decay[i][j] += a[q][i] * a[p][j] * mu(p, j) * (pw[j][i] - self.pi[i]);
                        }
                    }
                }
            }
        }

        // suffix[p][i] = sum_{q >= p} a[q][i]
        let mut suffix = vec![vec![0.0; m]; len + 1];
        for p in (0..len).rev() {
            for i in 0..m {
                suffix[p][i] = suffix[p + 1][i] + a[p][i];
            }
        }
        let weighted: Vec<f64> = (0..m).map(|i| (0..len).map(|p| a[p][i] * mu(p, i)).sum()).collect();
        for i in 0..m {
            for j in 0..m {
                let mut upper = 0.0;
                let mut lower = 0.0;
                for p in 0..len {
                    upper += a[p][i] * mu(p, i) * suffix[p][j];
                    lower += a[p][j] * mu(p, j) * suffix[p + 1][i];
                }
                let limit = self.pi[j] * upper + self.pi[i] * lower - weighted[i] * weighted[j];
                out[i][j] = 4.0 / (n * n * self.h[i] * self.h[j]) * (decay[i][j] + limit);
            }
        }
        out
    }
}

/// `Gamma(y)` for a single grid point.
pub fn gamma_matrix(
    series: &Series,
    theta_star: &[f64],
    gamma: &PosteriorMarginals,
    a_star: &TransitionMatrix,
    y: f64,
    h: &[f64],
    kernel: Kernel,
    lag: LagPolicy,
) -> (Square, usize) {
    let ctx = GammaContext::new(series, &gamma.gamma, a_star, h, kernel, lag);
    (ctx.at(y, theta_star), ctx.lag)
}

/// Diagonal Hessian entries below this are treated as zero.
pub const HESSIAN_FLOOR: f64 = 1e-8;

/// `Sigma* = H^-1 Gamma H^-1` for diagonal `H`. Rows and columns of
/// regimes with `H_ii <= HESSIAN_FLOOR` are NaN (no band there).
pub fn sigma_star(gamma: &Square, h_diag: &[f64]) -> Square {
    let m = h_diag.len();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    if h_diag[i] > HESSIAN_FLOOR && h_diag[j] > HESSIAN_FLOOR {
                        gamma[i][j] / (h_diag[i] * h_diag[j])
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticCovariance {
    pub gamma: Square,
    /// `2 f~_i(y)`.
    pub h_diag: Vec<f64>,
    pub sigma_star: Square,
    pub lag_used: usize,
}

impl AsymptoticCovariance {
    pub fn bandable(&self, i: usize) -> bool {
        self.h_diag[i] > HESSIAN_FLOOR
    }

    /// `z * sqrt(Sigma*_ii / t)`, `+inf` when not bandable.
    pub fn half_width(&self, i: usize, z: f64, t: usize) -> f64 {
        if self.bandable(i) {
            z * (self.sigma_star[i][i].max(0.0) / t as f64).sqrt()
        } else {
            f64::INFINITY
        }
    }
}

/// Per-iteration summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterTrace {
    pub t: usize,
    pub a: Square,
    /// `||A^t - A^{t-1}||_F^2`.
    pub a_step_sq: f64,
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub iterations: usize,
    pub theta: Vec<Vec<f64>>,
    pub theta_bar: Vec<Vec<f64>>,
    pub a: TransitionMatrix,
    pub lambda: Vec<f64>,
    pub sigma: Vec<f64>,
    pub h: Vec<f64>,
    pub last_path: Vec<usize>,
    pub theta_star: Vec<Vec<f64>>,
    pub f_tilde: Vec<Vec<f64>>,
    pub posterior: PosteriorMarginals,
    pub covariance: Vec<AsymptoticCovariance>,
    /// `half_width[i][g]` of the `1 - band_alpha` band around `theta_bar`.
    pub half_width: Vec<Vec<f64>>,
    pub trace: Vec<IterTrace>,
    pub grid: EvalGrid,
}

fn frobenius_sq(a: &Square, b: &Square) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Post-processing after the loop: posterior under the final parameters,
/// `theta*`, and the sandwich covariance at every grid point.
pub fn finalize(state: &RMState, series: &Series, config: &RMConfig) -> Result<(PosteriorMarginals, CriticalPoint, Vec<AsymptoticCovariance>)> {
    let curves = match config.restore_from {
        RestoreFrom::Averaged => &state.theta_bar,
        RestoreFrom::Raw => &state.theta,
    };
    let em = emissions(&series.y, curves, &state.emission_sigma(config.sigma_mode), &config.grid)?;
    let posterior = forward_backward_with(&em, &state.a, &state.lambda, false)?;
    let cp = critical_point(series, &posterior.gamma, &state.h, config.kernel, &config.grid);
    let m = config.m;
    let ctx = GammaContext::new(series, &posterior.gamma, &state.a, &state.h, config.kernel, config.lag);
    let covariance = config
        .grid
        .points()
        .par_iter()
        .enumerate()
        .map(|(g, &y)| {
            let theta: Vec<f64> = (0..m).map(|i| cp.theta_star[i][g]).collect();
            let gamma = ctx.at(y, &theta);
            let h_diag: Vec<f64> = (0..m).map(|i| 2.0 * cp.f_tilde[i][g]).collect();
            let sigma_star = sigma_star(&gamma, &h_diag);
            AsymptoticCovariance { gamma, h_diag, sigma_star, lag_used: ctx.lag }
        })
        .collect();
    Ok((posterior, cp, covariance))
}

/// Full run: Step 0, `iterations` Robbins-Monro iterations and the
/// asymptotic covariance at the final parameters.
pub fn rm_run(series: &Series, config: &RMConfig) -> Result<FitReport> {
    config.validate()?;
    if config.iterations == 0 {
        return Err(Error::InvalidArgument("need at least one iteration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = rm_init(series, config, &mut rng)?;
    let lags = SortedLags::new(&series.y);
    let mut trace = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let prev_a = state.a.rows().clone();
        let gain = config.step_size(state.t + 1);
        state = step_inner(state, series, &lags, config, gain, None)?;
        trace.push(IterTrace {
            t: state.t,
            a_step_sq: frobenius_sq(state.a.rows(), &prev_a),
            a: state.a.rows().clone(),
            sigma2: state.sigma.iter().map(|s| s * s).collect(),
        });
    }
    let (posterior, cp, covariance) = finalize(&state, series, config)?;
    let z = z_two_sided(config.band_alpha);
    let half_width = (0..config.m)
        .map(|i| covariance.iter().map(|c| c.half_width(i, z, state.t)).collect())
        .collect();
    Ok(FitReport {
        iterations: state.t,
        theta: state.theta,
        theta_bar: state.theta_bar,
        a: state.a,
        lambda: state.lambda,
        sigma: state.sigma,
        h: state.h,
        last_path: state.path,
        theta_star: cp.theta_star,
        f_tilde: cp.f_tilde,
        posterior,
        covariance,
        half_width,
        trace,
        grid: config.grid.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, ModelSpec};

    fn small_setup(m: usize, n: usize, seed: u64) -> (Series, RMConfig) {
        let spec = if m == 1 { ModelSpec::m1_linear() } else { ModelSpec::paper_m3() };
        let s = simulate(&spec, n, seed).unwrap();
        let grid = EvalGrid::from_data(&s.y, 41, 0.98).unwrap();
        let mut c = RMConfig::new(m, grid);
        c.iterations = 20;
        (s, c)
    }

    #[test]
    fn init_counts_match_hand_tally() {
        let y: Vec<f64> = (0..11).map(|v| (v as f64 * 0.7).sin()).collect();
        let s = Series::new(y, None).unwrap();
        let grid = EvalGrid::linspace(-1.0, 1.0, 5).unwrap();
        let c = RMConfig::new(2, grid);
        let path = vec![0, 0, 1, 1, 1, 0, 1, 0, 0, 1];
        let st = init_from_path(&s, &c, path, ChaCha8Rng::seed_from_u64(0)).unwrap();
        // transitions: 0->0:2, 0->1:3, 1->1:2, 1->0:2
        let a = st.a.rows();
        assert!((a[0][0] - 2.0 / 5.0).abs() < 1e-15 && (a[0][1] - 3.0 / 5.0).abs() < 1e-15);
        assert!((a[1][0] - 0.5).abs() < 1e-15 && (a[1][1] - 0.5).abs() < 1e-15);
        assert_eq!(st.lambda, vec![0.5, 0.5]);
        assert_eq!(st.theta, st.theta_bar);
    }

    #[test]
    fn single_regime_init() {
        let (s, c) = small_setup(1, 300, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = rm_init(&s, &c, &mut rng).unwrap();
        assert_eq!(st.a.rows(), &vec![vec![1.0]]);
        assert_eq!(st.lambda, vec![1.0]);
        let est = crate::kernelsmooth::nw_fit(
            &Series::new(s.y.clone(), Some(vec![0; s.n()])).unwrap(),
            1,
            c.kernel,
            &BandwidthChoice::Rule { k0: c.k0 },
            &c.grid,
        )
        .unwrap();
        assert_eq!(st.theta[0], est.regimes[0].r_hat);
    }

    #[test]
    fn zero_gain_freezes_theta() {
        let (s, c) = small_setup(3, 400, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let st = rm_init(&s, &c, &mut rng).unwrap();
        let before = st.theta.clone();
        let next = rm_step_with(st, &s, &c, 0.0, None).unwrap();
        assert_eq!(next.theta, before);
        assert_eq!(next.theta_bar, before);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn average_is_running_mean() {
        let (s, c) = small_setup(3, 400, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut st = rm_init(&s, &c, &mut rng).unwrap();
        let mut stored = Vec::new();
        for _ in 0..30 {
            st = rm_step(st, &s, &c).unwrap();
            stored.push(st.theta.clone());
        }
        for i in 0..3 {
            for g in 0..c.grid.len() {
                let mean: f64 = stored.iter().map(|th| th[i][g]).sum::<f64>() / stored.len() as f64;
                assert!((mean - st.theta_bar[i][g]).abs() < 1e-12);
            }
        }
        for row in st.a.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((st.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_equal_time_values() {
        let gamma = vec![vec![0.3, 0.7], vec![0.6, 0.4]];
        let a = TransitionMatrix::new(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let mut p = LagPowers::new(&a);
        assert!((chi_cov(&gamma, &mut p, 0, 0, 0, 0) - 0.3 * 0.7).abs() < 1e-15);
        assert!((chi_cov(&gamma, &mut p, 1, 1, 0, 1) + 0.6 * 0.4).abs() < 1e-15);
        // k' < k uses the transposed rule
        let v = chi_cov(&gamma, &mut p, 1, 0, 0, 1);
        assert!((v - 0.7 * (0.2 - 0.6)).abs() < 1e-15);
    }

    #[test]
    fn sigma_star_algebra() {
        let g = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = sigma_star(&g, &[2.0, 2.0]);
        assert_eq!(s, vec![vec![0.25, 0.0], vec![0.0, 0.25]]);
        let z = sigma_star(&vec![vec![0.0; 2]; 2], &[2.0, 3.0]);
        assert!(z.iter().flatten().all(|&v| v == 0.0));
        let flagged = sigma_star(&g, &[2.0, 1e-9]);
        assert!(flagged[1][1].is_nan() && flagged[0][0] == 0.25);
    }

    #[test]
    fn rejects_bad_exponent() {
        let (_, mut c) = small_setup(3, 50, 1);
        c.gamma_exponent = 0.5;
        assert!(c.validate().is_err());
        c.gamma_exponent = 1.0;
        assert!(c.validate().is_ok());
    }
}
