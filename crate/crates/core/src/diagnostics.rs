//! Comparison against ground truth and Monte-Carlo checks of the
//! pointwise normal limits.

use std::io::Write;

use itertools::Itertools;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernelsmooth::{ci_band_full, nw_fit, regime_counts, BandwidthChoice, EvalGrid, Kernel};
use crate::model::{simulate, simulate_with, ModelSpec, Series};
use crate::numeric::{ks_statistic_normal, z_two_sided, Square};
use crate::rmfit::{rm_run, RMConfig};

/// Largest `m` for which labels are aligned by exhaustive search.
pub const MAX_ALIGN_REGIMES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentResult {
    /// `permutation[est] = true label`.
    pub permutation: Vec<usize>,
    pub misclassification_rate: f64,
    pub classification_matrix: ClassificationMatrix,
}

impl AlignmentResult {
    /// Applies the alignment to an estimated path.
    pub fn relabel(&self, path: &[usize]) -> Vec<usize> {
        path.iter().map(|&i| self.permutation[i]).collect()
    }
}

/// `entries[i][j] = P(est = i | true = j)`; `None` marks columns with no
/// true samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationMatrix {
    pub entries: Square,
    pub defined: Vec<bool>,
}

fn check_lengths(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

fn check_labels(path: &[usize], m: usize) -> Result<()> {
    if let Some(&bad) = path.iter().find(|&&i| i >= m) {
        return Err(Error::InvalidArgument(format!("regime label {} exceeds m = {m}", bad + 1)));
    }
    Ok(())
}

/// Permutation of estimated labels minimising path mismatches with
/// `true_path`; the lexicographically smallest wins ties.
pub fn align_labels(est_path: &[usize], true_path: &[usize], m: usize) -> Result<AlignmentResult> {
    check_lengths(est_path, true_path)?;
    check_labels(est_path, m)?;
    check_labels(true_path, m)?;
    if m > MAX_ALIGN_REGIMES {
        return Err(Error::InvalidArgument(format!("label alignment supports m <= {MAX_ALIGN_REGIMES}")));
    }
    let mut joint = vec![vec![0usize; m]; m];
    for (&e, &t) in est_path.iter().zip(true_path) {
        joint[e][t] += 1;
    }
    let mut best: Option<(usize, Vec<usize>)> = None;
    for perm in (0..m).permutations(m) {
        let agree: usize = (0..m).map(|e| joint[e][perm[e]]).sum();
        if best.as_ref().is_none_or(|(b, _)| agree > *b) {
            best = Some((agree, perm));
        }
    }
    let (_, permutation) = best.expect("m >= 1");
    let aligned: Vec<usize> = est_path.iter().map(|&i| permutation[i]).collect();
    let classification_matrix = classification_matrix(&aligned, true_path, m)?;
    let misclassification_rate = misclassification(&aligned, true_path)?;
    Ok(AlignmentResult { permutation, misclassification_rate, classification_matrix })
}

/// `(i, j) = #{k : est_k = i, true_k = j} / #{k : true_k = j}`.
pub fn classification_matrix(est_path: &[usize], true_path: &[usize], m: usize) -> Result<ClassificationMatrix> {
    check_lengths(est_path, true_path)?;
    check_labels(est_path, m)?;
    check_labels(true_path, m)?;
    let counts = regime_counts(true_path, m);
    let mut entries = vec![vec![0.0; m]; m];
    for (&e, &t) in est_path.iter().zip(true_path) {
        entries[e][t] += 1.0;
    }
    for j in 0..m {
        for row in entries.iter_mut() {
            row[j] = if counts[j] > 0 { row[j] / counts[j] as f64 } else { f64::NAN };
        }
    }
    Ok(ClassificationMatrix { entries, defined: counts.iter().map(|&c| c > 0).collect() })
}

/// Fraction of positions where the paths disagree.
pub fn misclassification(est_path: &[usize], true_path: &[usize]) -> Result<f64> {
    check_lengths(est_path, true_path)?;
    if est_path.is_empty() {
        return Ok(0.0);
    }
    let wrong = est_path.iter().zip(true_path).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / est_path.len() as f64)
}

/// Squared Frobenius distance. With a permutation (estimated label ->
/// true label), `A_est` is relabelled first.
pub fn transition_error(a_est: &Square, a_true: &Square, permutation: Option<&[usize]>) -> f64 {
    let m = a_true.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let (ei, ej) = match permutation {
                Some(p) => (p[i], p[j]),
                None => (i, j),
            };
            let d = a_est[i][j] - a_true[ei][ej];
            total += d * d;
        }
    }
    total
}

/// Estimated matrix expressed in true labels.
pub fn permute_matrix(a_est: &Square, permutation: &[usize]) -> Square {
    let m = a_est.len();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            out[permutation[i]][permutation[j]] = a_est[i][j];
        }
    }
    out
}

/// Estimated per-regime values (vectors, curves) expressed in true labels.
pub fn permute_rows<T: Clone>(rows: &[T], permutation: &[usize]) -> Vec<T> {
    let mut out = rows.to_vec();
    for (i, row) in rows.iter().enumerate() {
        out[permutation[i]] = row.clone();
    }
    out
}

/// Alignment by squared L2 distance between estimated and true curves on
/// the grid, for runs whose sampled path is not kept.
pub fn align_by_curves(est: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<usize>> {
    let m = truth.len();
    if est.len() != m {
        return Err(Error::LengthMismatch(est.len(), m));
    }
    if m > MAX_ALIGN_REGIMES {
        return Err(Error::InvalidArgument(format!("label alignment supports m <= {MAX_ALIGN_REGIMES}")));
    }
    let dist = |e: usize, t: usize| -> f64 { est[e].iter().zip(&truth[t]).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..m).permutations(m) {
        let d: f64 = (0..m).map(|e| dist(e, perm[e])).sum();
        if best.as_ref().is_none_or(|(b, _)| d < *b) {
            best = Some((d, perm));
        }
    }
    Ok(best.expect("m >= 1").1)
}

/// A regime and location at which coverage is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoveragePoint {
    pub regime: usize,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointCoverage {
    pub regime: usize,
    pub y: f64,
    pub coverage: f64,
    pub ks_stat: f64,
    /// Replications in which a band existed.
    pub valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub nominal: f64,
    pub replications: usize,
    pub points: Vec<PointCoverage>,
    /// Set when the run length is too short for the limit theory to apply.
    pub pre_asymptotic: bool,
}

impl CoverageReport {
    /// CSV `y,regime,coverage,ks_stat`, regimes 1-based.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        use crate::fmt_f64;
        w.write_all(b"y,regime,coverage,ks_stat\n")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{}", fmt_f64(p.y), p.regime + 1, fmt_f64(p.coverage), fmt_f64(p.ks_stat))?;
        }
        Ok(())
    }
}

/// Generator for replication `r`: the master seed with stream `r`.
pub fn replication_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

/// Interior points per regime: evenly spaced quantiles (between the 20th
/// and 80th percentile) of the lagged values in each regime of a pilot
/// series, kept only where the pilot density estimate is at least
/// `min_density`.
pub fn interior_points(
    spec: &ModelSpec,
    pilot_n: usize,
    per_regime: usize,
    min_density: f64,
    kernel: Kernel,
    k0: f64,
    seed: u64,
) -> Result<Vec<CoveragePoint>> {
    let m = spec.m();
    let pilot = simulate(spec, pilot_n, seed)?;
    let path = pilot.x.as_deref().expect("simulated series carry regimes");
    let mut out = Vec::new();
    for i in 0..m {
        let mut lagged: Vec<f64> = (0..pilot.n()).filter(|&k| path[k] == i).map(|k| pilot.y[k]).collect();
        if lagged.len() < 2 {
            continue;
        }
        lagged.sort_by(f64::total_cmp);
        // candidates on a fine quantile ladder; take `per_regime` evenly from those passing the density floor
        let ladder = 4 * per_regime.max(1) + 1;
        let cand: Vec<f64> = (0..ladder)
            .map(|j| crate::kernelsmooth::quantile_sorted(&lagged, 0.2 + 0.6 * j as f64 / (ladder - 1) as f64))
            .collect();
        let mut cand_sorted = cand.clone();
        cand_sorted.dedup();
        let grid = EvalGrid::new(cand_sorted)?;
        let est = nw_fit(&pilot, m, kernel, &BandwidthChoice::Rule { k0 }, &grid)?;
        let ok: Vec<f64> = grid
            .points()
            .iter()
            .zip(&est.regimes[i].f_hat)
            .filter(|(_, &f)| f >= min_density)
            .map(|(&y, _)| y)
            .collect();
        if ok.is_empty() {
            continue;
        }
        let take = per_regime.min(ok.len());
        for j in 0..take {
            let idx = if take == 1 { ok.len() / 2 } else { j * (ok.len() - 1) / (take - 1) };
            out.push(CoveragePoint { regime: i, y: ok[idx] });
        }
    }
    Ok(out)
}

fn grid_of(points: &[CoveragePoint]) -> Result<(EvalGrid, Vec<usize>)> {
    let mut ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let idx = points.iter().map(|p| ys.iter().position(|&v| v == p.y).expect("present")).collect();
    Ok((EvalGrid::new(ys)?, idx))
}

fn summarize(points: &[CoveragePoint], hits: Vec<Vec<Option<(bool, f64)>>>) -> Vec<PointCoverage> {
    points
        .iter()
        .enumerate()
        .map(|(p, pt)| {
            let col: Vec<(bool, f64)> = hits.iter().filter_map(|rep| rep[p]).collect();
            let valid = col.len();
            let coverage = if valid > 0 { col.iter().filter(|c| c.0).count() as f64 / valid as f64 } else { f64::NAN };
            let errs: Vec<f64> = col.iter().map(|c| c.1).collect();
            PointCoverage { regime: pt.regime, y: pt.y, coverage, ks_stat: ks_statistic_normal(&errs), valid }
        })
        .collect()
}

/// Settings for the fully observed coverage experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct FullCoverageSettings {
    pub n: usize,
    pub replications: usize,
    pub alpha: f64,
    pub kernel: Kernel,
    pub k0: f64,
    pub seed: u64,
}

/// `R` independent simulate/fit/band runs; coverage of the true `r_i(y)`
/// and the KS statistic of `sqrt(n h f_hat)(r_hat - r)/(sigma_hat ||K||_2)`.
pub fn coverage_experiment_full(
    spec: &ModelSpec,
    settings: &FullCoverageSettings,
    points: &[CoveragePoint],
) -> Result<CoverageReport> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no coverage points".into()));
    }
    let m = spec.m();
    let (grid, idx) = grid_of(points)?;
    let choice = BandwidthChoice::Rule { k0: settings.k0 };
    let hits: Vec<Vec<Option<(bool, f64)>>> = (0..settings.replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<Option<(bool, f64)>>> {
            let mut rng = replication_rng(settings.seed, r);
            let series = simulate_with(spec, settings.n, &mut rng)?;
            let est = match nw_fit(&series, m, settings.kernel, &choice, &grid) {
                Ok(e) => ci_band_full(e, settings.alpha)?,
                // a regime absent from a replicate yields no band there
                Err(Error::EmptyRegime(_)) => return Ok(vec![None; points.len()]),
                Err(e) => return Err(e),
            };
            Ok(points
                .iter()
                .zip(&idx)
                .map(|(pt, &g)| {
                    let c = &est.regimes[pt.regime];
                    let hw = c.ci_half_width.as_ref().expect("band filled")[g];
                    if !hw.is_finite() {
                        return None;
                    }
                    let err = c.r_hat[g] - spec.regressions[pt.regime].eval(pt.y);
                    let covered = err.abs() <= hw;
                    let sd = c.sigma2_hat.sqrt() * settings.kernel.l2sq().sqrt()
                        / (settings.n as f64 * c.h * c.f_hat[g]).sqrt();
                    Some((covered, err / sd))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(CoverageReport {
        nominal: 1.0 - settings.alpha,
        replications: settings.replications,
        points: summarize(points, hits),
        pre_asymptotic: false,
    })
}

/// Runs shorter than this are flagged as pre-asymptotic.
pub const MIN_ASYMPTOTIC_ITERATIONS: usize = 100;

/// Relative slack when testing band containment, so that bands of width
/// zero still contain values equal up to rounding.
const CONTAINMENT_SLACK: f64 = 1e-9;

/// Coverage of `theta*` by `theta_bar^T +- z sqrt(Sigma*_ii / T)` over `R`
/// reruns of the algorithm on one fixed series, each with its own
/// restoration stream. Points must be on `config.grid`; estimated labels
/// are aligned to the series' true path when it is known.
pub fn coverage_experiment_hidden(
    series: &Series,
    config: &RMConfig,
    replications: usize,
    points: &[CoveragePoint],
) -> Result<CoverageReport> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no coverage points".into()));
    }
    let gidx: Vec<usize> = points
        .iter()
        .map(|p| {
            config
                .grid
                .points()
                .iter()
                .position(|&v| v == p.y)
                .ok_or_else(|| Error::InvalidArgument(format!("coverage point {} is not a grid point", p.y)))
        })
        .collect::<Result<_>>()?;
    let z = z_two_sided(config.band_alpha);
    let hidden = series.hidden();
    let hits: Vec<Vec<Option<(bool, f64)>>> = (0..replications)
        .into_par_iter()
        .map(|r| -> Result<Vec<Option<(bool, f64)>>> {
            let mut cfg = config.clone();
            cfg.seed = replication_rng(config.seed, r).next_u64();
            let fit = rm_run(&hidden, &cfg)?;
            // est label -> true label
            let perm = match &series.x {
                Some(x) => align_labels(&fit.last_path, x, cfg.m)?.permutation,
                None => (0..cfg.m).collect(),
            };
            let mut inv = vec![0; cfg.m];
            for (e, &t) in perm.iter().enumerate() {
                inv[t] = e;
            }
            Ok(points
                .iter()
                .zip(&gidx)
                .map(|(pt, &g)| {
                    let i = inv[pt.regime];
                    let cov = &fit.covariance[g];
                    if !cov.bandable(i) {
                        return None;
                    }
                    let err = fit.theta_bar[i][g] - fit.theta_star[i][g];
                    let hw = z * (cov.sigma_star[i][i].max(0.0) / fit.iterations as f64).sqrt();
                    let slack = CONTAINMENT_SLACK * fit.theta_star[i][g].abs().max(1.0);
                    let sd = (cov.sigma_star[i][i].max(0.0) / fit.iterations as f64).sqrt();
                    Some((err.abs() <= hw + slack, if sd > 0.0 { err / sd } else { f64::NAN }))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(CoverageReport {
        nominal: 1.0 - config.band_alpha,
        replications,
        points: summarize(points, hits),
        pre_asymptotic: config.iterations < MIN_ASYMPTOTIC_ITERATIONS,
    })
}

/// Grid points nearest to the requested locations.
pub fn snap_to_grid(points: &[CoveragePoint], grid: &EvalGrid) -> Vec<CoveragePoint> {
    points
        .iter()
        .map(|p| {
            let y = grid
                .points()
                .iter()
                .copied()
                .min_by(|a, b| (a - p.y).abs().total_cmp(&(b - p.y).abs()))
                .expect("non-empty grid");
            CoveragePoint { regime: p.regime, y }
        })
        .collect()
}
