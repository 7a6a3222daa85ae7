//! Compact-support kernels, the bandwidth rule, and per-regime
//! Nadaraya-Watson regression with pointwise normal confidence bands.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Series;
use crate::numeric::z_two_sided;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Triweight,
    Epanechnikov,
    Quartic,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Triweight, Kernel::Epanechnikov, Kernel::Quartic];

    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        let t = 1.0 - u * u;
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            Kernel::Triweight => 35.0 / 32.0 * t * t * t,
            Kernel::Epanechnikov => 0.75 * t,
            Kernel::Quartic => 15.0 / 16.0 * t * t,
        }
    }

    /// `||K||_2^2 = int K(u)^2 du`.
    pub fn l2sq(self) -> f64 {
        match self {
            Kernel::Triweight => 350.0 / 429.0,
            Kernel::Epanechnikov => 3.0 / 5.0,
            Kernel::Quartic => 5.0 / 7.0,
        }
    }

    pub fn sup(self) -> f64 {
        self.eval(0.0)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Triweight => "triweight",
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Quartic => "quartic",
        }
    }
}

/// Strictly increasing, finite evaluation abscissae.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalGrid {
    points: Vec<f64>,
}

impl EvalGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("evaluation grid is empty".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("evaluation grid has non-finite points".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("evaluation grid must be strictly increasing".into()));
        }
        Ok(EvalGrid { points })
    }

    pub fn linspace(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 1 {
            return Self::new(vec![lo]);
        }
        if count == 0 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!("bad grid [{lo}, {hi}] with {count} points")));
        }
        let step = (hi - lo) / (count - 1) as f64;
        Self::new((0..count).map(|i| if i + 1 == count { hi } else { lo + step * i as f64 }).collect())
    }

    /// `count` equispaced points over the central `coverage` quantile range of `y`.
    pub fn from_data(y: &[f64], count: usize, coverage: f64) -> Result<Self> {
        if !(coverage > 0.0 && coverage <= 1.0) {
            return Err(Error::InvalidArgument(format!("grid coverage must be in (0, 1], got {coverage}")));
        }
        let tail = (1.0 - coverage) / 2.0;
        let mut sorted: Vec<f64> = y.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self::linspace(quantile_sorted(&sorted, tail), quantile_sorted(&sorted, 1.0 - tail), count)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.points[0], self.points[self.points.len() - 1])
    }

    /// Piecewise-linear interpolation of `values` (one per grid point),
    /// clamped to the end values outside the grid.
    pub fn interpolate(&self, values: &[f64], y: f64) -> f64 {
        let p = &self.points;
        if y <= p[0] {
            return values[0];
        }
        let last = p.len() - 1;
        if y >= p[last] {
            return values[last];
        }
        let j = p.partition_point(|&g| g <= y);
        let (x0, x1) = (p[j - 1], p[j]);
        let w = (y - x0) / (x1 - x0);
        values[j - 1] + w * (values[j] - values[j - 1])
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `h = k0 * sigma_hat * (log n / n)^(1/5)`.
pub fn bandwidth(n: f64, sigma_hat: f64, k0: f64) -> Result<f64> {
    if !(n >= 2.0) {
        return Err(Error::InvalidArgument(format!("bandwidth needs n >= 2, got {n}")));
    }
    if !(sigma_hat > 0.0 && sigma_hat.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth needs sigma_hat > 0, got {sigma_hat}")));
    }
    if !(k0 > 0.0 && k0.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth needs k0 > 0, got {k0}")));
    }
    Ok(k0 * sigma_hat * (n.ln() / n).powf(0.2))
}

/// Regressors `Y_0..Y_{n-1}` sorted by value, for window queries.
#[derive(Debug, Clone)]
pub struct SortedLags {
    entries: Vec<(f64, usize)>,
}

impl SortedLags {
    pub fn new(y: &[f64]) -> Self {
        let n = y.len() - 1;
        let mut entries: Vec<(f64, usize)> = (0..n).map(|k| (y[k], k)).collect();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        SortedLags { entries }
    }

    /// Entries with `lo <= Y_k <= hi`, in value order.
    pub fn window(&self, lo: f64, hi: f64) -> &[(f64, usize)] {
        let a = self.entries.partition_point(|e| e.0 < lo);
        let b = self.entries.partition_point(|e| e.0 <= hi);
        &self.entries[a..b.max(a)]
    }
}

/// Kernel sums at `y` with regime-indicator weights:
/// `s0[i] = sum_k K((y - Y_k)/h_i) 1{path_k = i}` and `s1[i]` the same
/// weighted by `Y_{k+1}`. `path[k]` is the regime of `X_{k+1}`.
pub(crate) fn indicator_sums(
    y: f64,
    ys: &[f64],
    lags: &SortedLags,
    path: &[usize],
    h: &[f64],
    kernel: Kernel,
) -> (Vec<f64>, Vec<f64>) {
    let m = h.len();
    let hmax = h.iter().copied().fold(0.0, f64::max);
    let mut s0 = vec![0.0; m];
    let mut s1 = vec![0.0; m];
    for &(yk, k) in lags.window(y - hmax, y + hmax) {
        let i = path[k];
        let w = kernel.eval((y - yk) / h[i]);
        if w > 0.0 {
            s0[i] += w;
            s1[i] += w * ys[k + 1];
        }
    }
    (s0, s1)
}

/// Kernel sums at `y` with soft weights `weights[k][i]`.
pub(crate) fn weighted_sums(
    y: f64,
    ys: &[f64],
    lags: &SortedLags,
    weights: &[Vec<f64>],
    h: &[f64],
    kernel: Kernel,
) -> (Vec<f64>, Vec<f64>) {
    let m = h.len();
    let hmax = h.iter().copied().fold(0.0, f64::max);
    let mut s0 = vec![0.0; m];
    let mut s1 = vec![0.0; m];
    for &(yk, k) in lags.window(y - hmax, y + hmax) {
        for i in 0..m {
            let w = kernel.eval((y - yk) / h[i]) * weights[k][i];
            if w > 0.0 {
                s0[i] += w;
                s1[i] += w * ys[k + 1];
            }
        }
    }
    (s0, s1)
}

/// How per-regime bandwidths are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthChoice {
    /// `h_i = k0 * sigma_i * (log n / n)^(1/5)`.
    Rule { k0: f64 },
    /// The same bandwidth for every regime.
    Fixed(f64),
}

/// Residual scale per regime for a given path: the root mean squared
/// residual `Y_{k+1} - r_hat_i(Y_k)` over the samples of regime `i`.
///
/// Under [`BandwidthChoice::Rule`] the residuals come from a pilot fit
/// whose bandwidth uses the raw standard deviation of `{Y_{k+1} : X_{k+1} = i}`.
pub fn regime_scales(
    ys: &[f64],
    lags: &SortedLags,
    path: &[usize],
    m: usize,
    kernel: Kernel,
    choice: &BandwidthChoice,
) -> Result<Vec<f64>> {
    let n = ys.len() - 1;
    let counts = regime_counts(path, m);
    let empty: Vec<usize> = (0..m).filter(|&i| counts[i] == 0).map(|i| i + 1).collect();
    if !empty.is_empty() {
        return Err(Error::EmptyRegime(empty));
    }
    let pilot_h: Vec<f64> = match choice {
        BandwidthChoice::Fixed(h) => vec![*h; m],
        BandwidthChoice::Rule { k0 } => {
            let mut sum = vec![0.0; m];
            let mut sumsq = vec![0.0; m];
            for k in 0..n {
                let v = ys[k + 1];
                sum[path[k]] += v;
                sumsq[path[k]] += v * v;
            }
            (0..m)
                .map(|i| {
                    let c = counts[i] as f64;
                    let mean = sum[i] / c;
                    let sd = (sumsq[i] / c - mean * mean).max(0.0).sqrt();
                    bandwidth(n as f64, sd, *k0)
                        .map_err(|_| Error::InvalidArgument(format!("regime {} has zero spread; use a fixed bandwidth", i + 1)))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut sq = vec![0.0; m];
    for k in 0..n {
        let i = path[k];
        let h = pilot_h[i];
        let y = ys[k];
        let (mut s0, mut s1) = (0.0, 0.0);
        for &(yj, j) in lags.window(y - h, y + h) {
            if path[j] == i {
                let w = kernel.eval((y - yj) / h);
                s0 += w;
                s1 += w * ys[j + 1];
            }
        }
        let fitted = if s0 > 0.0 { s1 / s0 } else { 0.0 };
        let r = ys[k + 1] - fitted;
        sq[i] += r * r;
    }
    Ok((0..m).map(|i| (sq[i] / counts[i] as f64).sqrt()).collect())
}

pub fn regime_counts(path: &[usize], m: usize) -> Vec<usize> {
    let mut counts = vec![0; m];
    for &i in path {
        counts[i] += 1;
    }
    counts
}

/// Bandwidths from residual scales.
pub fn regime_bandwidths(n: usize, scales: &[f64], choice: &BandwidthChoice) -> Result<Vec<f64>> {
    scales
        .iter()
        .enumerate()
        .map(|(i, &s)| match choice {
            BandwidthChoice::Fixed(h) if *h > 0.0 && h.is_finite() => Ok(*h),
            BandwidthChoice::Fixed(h) => Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}"))),
            BandwidthChoice::Rule { k0 } => bandwidth(n as f64, s, *k0)
                .map_err(|e| Error::InvalidArgument(format!("regime {}: {e}", i + 1))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeCurve {
    pub r_hat: Vec<f64>,
    pub f_hat: Vec<f64>,
    pub g_hat: Vec<f64>,
    pub sigma2_hat: f64,
    pub h: f64,
    pub mu_hat: f64,
    pub ci_half_width: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionEstimate {
    pub grid: EvalGrid,
    pub kernel: Kernel,
    pub k0: Option<f64>,
    pub n: usize,
    pub regimes: Vec<RegimeCurve>,
    pub alpha: Option<f64>,
}

impl RegressionEstimate {
    pub fn m(&self) -> usize {
        self.regimes.len()
    }

    /// CSV `y,regime,r_hat,f_hat,ci_lo,ci_hi` (bands empty when absent).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        use crate::fmt_f64;
        w.write_all(b"y,regime,r_hat,f_hat,ci_lo,ci_hi\n")?;
        for (i, c) in self.regimes.iter().enumerate() {
            for (g, &y) in self.grid.points().iter().enumerate() {
                let (lo, hi) = match &c.ci_half_width {
                    Some(hw) => (fmt_f64(c.r_hat[g] - hw[g]), fmt_f64(c.r_hat[g] + hw[g])),
                    None => (String::new(), String::new()),
                };
                writeln!(w, "{},{},{},{},{lo},{hi}", fmt_f64(y), i + 1, fmt_f64(c.r_hat[g]), fmt_f64(c.f_hat[g]))?;
            }
        }
        Ok(())
    }

    /// JSON sidecar with the scalar fit summary.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n,
            "h_i": self.regimes.iter().map(|c| c.h).collect::<Vec<_>>(),
            "sigma2_hat_i": self.regimes.iter().map(|c| c.sigma2_hat).collect::<Vec<_>>(),
            "mu_hat_i": self.regimes.iter().map(|c| c.mu_hat).collect::<Vec<_>>(),
            "kernel": self.kernel.name(),
            "k0": self.k0,
            "alpha": self.alpha,
        })
    }
}

/// Per-regime Nadaraya-Watson fit on a fully observed series.
pub fn nw_fit(series: &Series, m: usize, kernel: Kernel, choice: &BandwidthChoice, grid: &EvalGrid) -> Result<RegressionEstimate> {
    let path = series.x.as_deref().ok_or_else(|| Error::InvalidSeries("regime path required for a full fit".into()))?;
    let n = series.n();
    if n < 2 {
        return Err(Error::InvalidArgument("need n >= 2".into()));
    }
    series.check_regimes(m)?;
    let lags = SortedLags::new(&series.y);
    let scales = regime_scales(&series.y, &lags, path, m, kernel, choice)?;
    let h = regime_bandwidths(n, &scales, choice)?;
    let counts = regime_counts(path, m);

    let sums: Vec<(Vec<f64>, Vec<f64>)> =
        grid.points().par_iter().map(|&y| indicator_sums(y, &series.y, &lags, path, &h, kernel)).collect();

    let nf = n as f64;
    let regimes = (0..m)
        .map(|i| {
            let norm = nf * h[i];
            let mut r_hat = Vec::with_capacity(grid.len());
            let mut f_hat = Vec::with_capacity(grid.len());
            let mut g_hat = Vec::with_capacity(grid.len());
            for (s0, s1) in &sums {
                let f = s0[i] / norm;
                let g = s1[i] / norm;
                r_hat.push(if s0[i] > 0.0 { s1[i] / s0[i] } else { 0.0 });
                f_hat.push(f);
                g_hat.push(g);
            }
            RegimeCurve {
                r_hat,
                f_hat,
                g_hat,
                sigma2_hat: scales[i] * scales[i],
                h: h[i],
                mu_hat: counts[i] as f64 / nf,
                ci_half_width: None,
            }
        })
        .collect();
    let k0 = match choice {
        BandwidthChoice::Rule { k0 } => Some(*k0),
        BandwidthChoice::Fixed(_) => None,
    };
    Ok(RegressionEstimate { grid: grid.clone(), kernel, k0, n, regimes, alpha: None })
}

/// Kernel density `(1/(N h)) sum_k K((y - x_k)/h)` over all `samples`.
pub fn nw_density(samples: &[f64], kernel: Kernel, h: f64, grid: &EvalGrid) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("density needs at least one sample".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norm = samples.len() as f64 * h;
    Ok(grid
        .points()
        .iter()
        .map(|&y| {
            let a = sorted.partition_point(|&v| v < y - h);
            let b = sorted.partition_point(|&v| v <= y + h);
            sorted[a..b].iter().map(|&v| kernel.eval((y - v) / h)).sum::<f64>() / norm
        })
        .collect())
}

/// Which density estimate `f_i(y)` enters the band width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandDensity {
    /// The estimator's own denominator `/(n h_i)`.
    #[default]
    RegimeLocal,
    /// `mu_hat_i * p_hat_0(y)` from a kernel density of all of `Y_{0:n}`.
    Pooled,
}

/// Half-width `z * sigma_i * ||K||_2 / sqrt(n h_i f_i(y))`; `+inf` where `f_i(y) = 0`.
pub fn band_half_width(z: f64, sigma: f64, l2sq: f64, n: usize, h: f64, f: f64) -> f64 {
    if f > 0.0 {
        z * sigma * l2sq.sqrt() / (n as f64 * h * f).sqrt()
    } else {
        f64::INFINITY
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("confidence level alpha must be in (0, 1], got {alpha}")))
    }
}

/// Fills pointwise `(1 - alpha)` bands using the regime-local density.
pub fn ci_band_full(mut est: RegressionEstimate, alpha: f64) -> Result<RegressionEstimate> {
    check_alpha(alpha)?;
    let z = z_two_sided(alpha);
    let l2sq = est.kernel.l2sq();
    let n = est.n;
    for c in &mut est.regimes {
        let sigma = c.sigma2_hat.sqrt();
        c.ci_half_width = Some(c.f_hat.iter().map(|&f| band_half_width(z, sigma, l2sq, n, c.h, f)).collect());
    }
    est.alpha = Some(alpha);
    Ok(est)
}

/// Bands with `f_i(y) = mu_hat_i * p_hat_0(y)`, the density of all of
/// `Y_{0:n}` estimated with the regime's bandwidth.
pub fn ci_band_pooled(mut est: RegressionEstimate, alpha: f64, series: &Series) -> Result<RegressionEstimate> {
    check_alpha(alpha)?;
    let z = z_two_sided(alpha);
    let l2sq = est.kernel.l2sq();
    let n = est.n;
    for c in &mut est.regimes {
        let p0 = nw_density(&series.y, est.kernel, c.h, &est.grid)?;
        let sigma = c.sigma2_hat.sqrt();
        c.ci_half_width = Some(p0.iter().map(|&p| band_half_width(z, sigma, l2sq, n, c.h, c.mu_hat * p)).collect());
    }
    est.alpha = Some(alpha);
    Ok(est)
}

pub fn ci_band(est: RegressionEstimate, alpha: f64, mode: BandDensity, series: &Series) -> Result<RegressionEstimate> {
    match mode {
        BandDensity::RegimeLocal => ci_band_full(est, alpha),
        BandDensity::Pooled => ci_band_pooled(est, alpha, series),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triweight_values() {
        assert_eq!(Kernel::Triweight.eval(0.0), 1.09375);
        assert_eq!(Kernel::Triweight.eval(1.0), 0.0);
        assert_eq!(Kernel::Triweight.eval(-1.0), 0.0);
        assert_eq!(Kernel::Triweight.eval(2.0), 0.0);
        assert_eq!(Kernel::Epanechnikov.eval(0.0), 0.75);
        assert_eq!(Kernel::Quartic.eval(0.0), 0.9375);
    }

    #[test]
    fn bandwidth_examples() {
        let h = bandwidth(std::f64::consts::E, 1.0, 1.0).unwrap();
        assert!((h - (-0.2f64).exp()).abs() < 1e-15);
        // independently computed: 0.55 * sqrt(0.263) * (ln 3000 / 3000)^(1/5)
        let h = bandwidth(3000.0, 0.2630f64.sqrt(), 0.55).unwrap();
        assert!((h - 0.086_219_086_605_946_46).abs() < 1e-14, "{h}");
        assert!(bandwidth(100.0, 1.0, 0.0).is_err());
        assert!(bandwidth(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn hand_instance() {
        let s = Series::new(vec![0.0, 0.1, -0.1, 0.05], Some(vec![0, 0, 0])).unwrap();
        let grid = EvalGrid::new(vec![0.0]).unwrap();
        let est = nw_fit(&s, 1, Kernel::Triweight, &BandwidthChoice::Fixed(1.0), &grid).unwrap();
        // (0.1 K(0) - 0.1 K(0.1) + 0.05 K(0.1)) / (K(0) + 2 K(0.1)), evaluated in high precision
        assert!((est.regimes[0].r_hat[0] - 0.017_508_360_544_351_863).abs() < 1e-15);
    }

    #[test]
    fn constant_response() {
        let y = vec![0.3, 2.0, 2.0, 2.0, 2.0, 2.0];
        let s = Series::new(y, Some(vec![0; 5])).unwrap();
        let grid = EvalGrid::linspace(-1.0, 3.0, 41).unwrap();
        let est = nw_fit(&s, 1, Kernel::Epanechnikov, &BandwidthChoice::Fixed(0.5), &grid).unwrap();
        for (g, &r) in est.regimes[0].r_hat.iter().enumerate() {
            if est.regimes[0].f_hat[g] > 0.0 {
                assert_eq!(r, 2.0);
            } else {
                assert_eq!(r, 0.0);
            }
        }
        // rule-of-thumb bandwidth is undefined for a zero-spread regime
        assert!(nw_fit(&s, 1, Kernel::Triweight, &BandwidthChoice::Rule { k0: 0.55 }, &grid).is_err());
    }

    #[test]
    fn unvisited_regime_is_an_error() {
        let s = Series::new(vec![0.0, 1.0, 2.0, 3.0], Some(vec![0, 0, 2])).unwrap();
        let grid = EvalGrid::new(vec![0.0]).unwrap();
        match nw_fit(&s, 3, Kernel::Triweight, &BandwidthChoice::Fixed(1.0), &grid) {
            Err(Error::EmptyRegime(v)) => assert_eq!(v, vec![2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn density_examples() {
        let g = EvalGrid::new(vec![0.0]).unwrap();
        assert_eq!(nw_density(&[0.0], Kernel::Triweight, 1.0, &g).unwrap()[0], 35.0 / 32.0);
        let d = nw_density(&[-0.5, 0.5], Kernel::Triweight, 1.0, &g).unwrap()[0];
        assert!((d - 0.461_425_781_25).abs() < 1e-15);
    }

    #[test]
    fn band_identity_case() {
        let z = z_two_sided(0.05);
        let (sigma, l2) = (0.7, Kernel::Triweight.l2sq());
        // n h f = sigma^2 ||K||^2 z^2
        let f = sigma * sigma * l2 * z * z / (100.0 * 0.2);
        let hw = band_half_width(z, sigma, l2, 100, 0.2, f);
        assert!((hw - 1.0).abs() < 1e-14);
        assert_eq!(band_half_width(z, sigma, l2, 100, 0.2, 0.0), f64::INFINITY);
    }

    #[test]
    fn interpolation_clamps() {
        let g = EvalGrid::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(g.interpolate(&[0.0, 2.0], 0.25), 0.5);
        assert_eq!(g.interpolate(&[0.0, 2.0], -3.0), 0.0);
        assert_eq!(g.interpolate(&[0.0, 2.0], 7.0), 2.0);
    }

    #[test]
    fn grid_validation() {
        assert!(EvalGrid::new(vec![0.0, 0.0]).is_err());
        assert!(EvalGrid::new(vec![1.0, f64::NAN]).is_err());
        let g = EvalGrid::from_data(&(0..=100).map(|v| v as f64).collect::<Vec<_>>(), 201, 0.98).unwrap();
        let (lo, hi) = g.bounds();
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 99.0).abs() < 1e-12);
        assert_eq!(g.len(), 201);
    }
}
