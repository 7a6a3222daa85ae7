//! Exact restoration of the hidden regime path given `Y_{0:n}` and the
//! current parameters: Gaussian emission table, scaled forward-backward
//! smoothing and forward-filtering backward-sampling.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernelsmooth::EvalGrid;
use crate::model::{sample_categorical, TransitionMatrix};

/// `log_b[k][i] = log phi_sigma_i(Y_{k+1} - r_i(Y_k))`, for `X_{k+1} = i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionTable {
    pub log_b: Vec<Vec<f64>>,
}

impl EmissionTable {
    pub fn n(&self) -> usize {
        self.log_b.len()
    }

    pub fn m(&self) -> usize {
        self.log_b.first().map_or(0, Vec::len)
    }
}

pub fn gaussian_log_density(resid: f64, sigma: f64) -> f64 {
    let z = resid / sigma;
    -0.5 * (2.0 * PI * sigma * sigma).ln() - 0.5 * z * z
}

/// Emission log-densities with `r_i(Y_k)` read off `curves[i]` (values
/// on `grid`) by clamped linear interpolation.
pub fn emissions(y: &[f64], curves: &[Vec<f64>], sigma: &[f64], grid: &EvalGrid) -> Result<EmissionTable> {
    let m = curves.len();
    if sigma.len() != m {
        return Err(Error::LengthMismatch(sigma.len(), m));
    }
    for (i, c) in curves.iter().enumerate() {
        if c.len() != grid.len() {
            return Err(Error::LengthMismatch(c.len(), grid.len()));
        }
        if let Some(index) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCurve { regime: i + 1, index });
        }
    }
    if let Some(i) = sigma.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument(format!("emission scale of regime {} must be positive", i + 1)));
    }
    let n = y.len() - 1;
    let log_b = (0..n)
        .map(|k| {
            (0..m).map(|i| gaussian_log_density(y[k + 1] - grid.interpolate(&curves[i], y[k]), sigma[i])).collect()
        })
        .collect();
    Ok(EmissionTable { log_b })
}

/// Smoothing marginals: `gamma[k][i] = P(X_{k+1} = i | Y_{0:n})` and
/// optionally `xi[k][i][j] = P(X_{k+1} = i, X_{k+2} = j | Y_{0:n})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMarginals {
    pub gamma: Vec<Vec<f64>>,
    pub xi: Option<Vec<Vec<Vec<f64>>>>,
    pub loglik: f64,
}

impl PosteriorMarginals {
    /// CSV `k,regime,prob` with `k` the time index of `X_k` (1-based).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"k,regime,prob\n")?;
        for (k, row) in self.gamma.iter().enumerate() {
            for (i, p) in row.iter().enumerate() {
                writeln!(w, "{},{},{}", k + 1, i + 1, crate::fmt_f64(*p))?;
            }
        }
        Ok(())
    }
}

struct Filter {
    m: usize,
    /// Normalised filtered laws, flat `n*m`.
    alpha: Vec<f64>,
    /// Emission likelihoods rescaled by the per-step maximum, flat `n*m`.
    b: Vec<f64>,
    /// Per-step normalisers.
    scale: Vec<f64>,
    loglik: f64,
}

fn check_dims(em: &EmissionTable, a: &TransitionMatrix, lambda: &[f64]) -> Result<()> {
    if em.n() == 0 {
        return Err(Error::InvalidArgument("empty emission table".into()));
    }
    if em.m() != a.m() {
        return Err(Error::LengthMismatch(em.m(), a.m()));
    }
    if lambda.len() != a.m() {
        return Err(Error::LengthMismatch(lambda.len(), a.m()));
    }
    Ok(())
}

fn forward(em: &EmissionTable, a: &TransitionMatrix, lambda: &[f64]) -> Filter {
    let n = em.n();
    let m = em.m();
    let mut alpha = vec![0.0; n * m];
    let mut b = vec![0.0; n * m];
    let mut scale = vec![0.0; n];
    let mut loglik = 0.0;
    for k in 0..n {
        let row = &em.log_b[k];
        let c = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..m {
            b[k * m + i] = (row[i] - c).exp();
        }
        let (prev, cur) = alpha.split_at_mut(k * m);
        let cur = &mut cur[..m];
        if k == 0 {
            for i in 0..m {
                cur[i] = lambda[i] * b[i];
            }
        } else {
            let prev = &prev[(k - 1) * m..];
            for j in 0..m {
                let mut s = 0.0;
                for i in 0..m {
                    s += prev[i] * a.get(i, j);
                }
                cur[j] = s * b[k * m + j];
            }
        }
        let mut s: f64 = cur.iter().sum();
        if !(s > 0.0) || !s.is_finite() {
            // numerically impossible step: restart from an uninformative law
            cur.iter_mut().for_each(|v| *v = 1.0 / m as f64);
            s = f64::MIN_POSITIVE;
        } else {
            cur.iter_mut().for_each(|v| *v /= s);
        }
        scale[k] = s;
        loglik += s.ln() + c;
    }
    Filter { m, alpha, b, scale, loglik }
}

pub fn forward_backward(em: &EmissionTable, a: &TransitionMatrix, lambda: &[f64]) -> Result<PosteriorMarginals> {
    forward_backward_with(em, a, lambda, true)
}

/// Scaled forward-backward recursions; `with_pairs` also returns the
/// pairwise marginals.
pub fn forward_backward_with(
    em: &EmissionTable,
    a: &TransitionMatrix,
    lambda: &[f64],
    with_pairs: bool,
) -> Result<PosteriorMarginals> {
    check_dims(em, a, lambda)?;
    let f = forward(em, a, lambda);
    let (n, m) = (em.n(), f.m);
    let mut beta = vec![1.0; n * m];
    for k in (0..n - 1).rev() {
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..m {
                s += a.get(i, j) * f.b[(k + 1) * m + j] * beta[(k + 1) * m + j];
            }
            beta[k * m + i] = s / f.scale[k + 1];
        }
    }
    let gamma: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let mut row: Vec<f64> = (0..m).map(|i| f.alpha[k * m + i] * beta[k * m + i]).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            row
        })
        .collect();
    let xi = with_pairs.then(|| {
        (0..n.saturating_sub(1))
            .map(|k| {
                let mut t: Vec<Vec<f64>> = (0..m)
                    .map(|i| {
                        (0..m)
                            .map(|j| {
                                f.alpha[k * m + i] * a.get(i, j) * f.b[(k + 1) * m + j] * beta[(k + 1) * m + j]
                                    / f.scale[k + 1]
                            })
                            .collect()
                    })
                    .collect();
                let s: f64 = t.iter().flatten().sum();
                t.iter_mut().flatten().for_each(|v| *v /= s);
                t
            })
            .collect()
    });
    Ok(PosteriorMarginals { gamma, xi, loglik: f.loglik })
}

/// Draws `X_{1:n}` exactly from its posterior: forward filtering, then
/// `X_n` from the terminal filter and `X_k | X_{k+1}` backwards.
pub fn sample_path<R: Rng + ?Sized>(
    em: &EmissionTable,
    a: &TransitionMatrix,
    lambda: &[f64],
    rng: &mut R,
) -> Result<Vec<usize>> {
    check_dims(em, a, lambda)?;
    let f = forward(em, a, lambda);
    let (n, m) = (em.n(), f.m);
    let mut path = vec![0usize; n];
    path[n - 1] = sample_categorical(&f.alpha[(n - 1) * m..], rng);
    let mut probs = vec![0.0; m];
    for k in (0..n - 1).rev() {
        let next = path[k + 1];
        for i in 0..m {
            probs[i] = f.alpha[k * m + i] * a.get(i, next);
        }
        path[k] = sample_categorical(&probs, rng);
    }
    Ok(path)
}
