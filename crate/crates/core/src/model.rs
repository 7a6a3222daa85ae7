//! The switching autoregressive model `Y_k = r_{X_k}(Y_{k-1}) + e_k`:
//! transition matrices, model specification, simulation and the
//! stationarity / moment conditions.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcgrammar::{self, Expr, Preset};
use crate::numeric::{self, Square};

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic m×m matrix, `a[i][j] = P(X_k = j | X_{k-1} = i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionMatrix {
    rows: Square,
}

impl TransitionMatrix {
    pub fn new(rows: Square) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::InvalidTransition("empty matrix".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidTransition(format!("row {} has {} entries, expected {m}", i + 1, row.len())));
            }
            if row.iter().any(|&a| !a.is_finite() || a < 0.0) {
                return Err(Error::InvalidTransition(format!("row {} has a negative or non-finite entry", i + 1)));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidTransition(format!("row {} sums to {s}", i + 1)));
            }
        }
        Ok(TransitionMatrix { rows })
    }

    /// Rows with a given diagonal and the remainder spread evenly.
    pub fn symmetric(m: usize, diagonal: f64) -> Result<Self> {
        let off = if m > 1 { (1.0 - diagonal) / (m - 1) as f64 } else { 0.0 };
        let d = if m > 1 { diagonal } else { 1.0 };
        Self::new((0..m).map(|i| (0..m).map(|j| if i == j { d } else { off }).collect()).collect())
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &Square {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn is_irreducible(&self) -> bool {
        let m = self.m();
        (0..m).all(|start| {
            let mut seen = vec![false; m];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for j in 0..m {
                    if self.rows[i][j] > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        })
    }

    /// Estimate from a regime path: `a_ij = n_ij / sum_j n_ij`. Rows of
    /// regimes with no outgoing transition are taken from `fallback`, or
    /// are uniform when no fallback is given.
    pub fn from_path(path: &[usize], m: usize, fallback: Option<&TransitionMatrix>) -> Self {
        let mut counts = vec![vec![0usize; m]; m];
        for w in path.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        let rows = counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: usize = row.iter().sum();
                if total == 0 {
                    match fallback {
                        Some(prev) => prev.rows[i].clone(),
                        None => vec![1.0 / m as f64; m],
                    }
                } else {
                    row.iter().map(|&c| c as f64 / total as f64).collect()
                }
            })
            .collect();
        TransitionMatrix { rows }
    }

    /// `A^d` by repeated multiplication.
    pub fn power(&self, d: usize) -> Square {
        let mut out = numeric::identity(self.m());
        for _ in 0..d {
            out = numeric::mat_mul(&out, &self.rows);
        }
        out
    }
}

/// Invariant law `mu A = mu` of an irreducible chain.
pub fn stationary_distribution(a: &TransitionMatrix) -> Result<Vec<f64>> {
    if !a.is_irreducible() {
        return Err(Error::Reducible);
    }
    let m = a.m();
    // (A^T - I) mu = 0 with the last equation replaced by sum(mu) = 1
    let mut mat: Square = (0..m).map(|i| (0..m).map(|j| a.rows[j][i] - if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut rhs = vec![0.0; m];
    mat[m - 1] = vec![1.0; m];
    rhs[m - 1] = 1.0;
    let mut mu = numeric::solve(mat, rhs).ok_or(Error::Reducible)?;
    for v in mu.iter_mut() {
        if *v < 0.0 && *v > -1e-14 {
            *v = 0.0;
        }
    }
    let resid = numeric::vec_mat(&mu, &a.rows).iter().zip(&mu).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if resid > 1e-10 || mu.iter().any(|&v| v < 0.0) {
        return Err(Error::Reducible);
    }
    Ok(mu)
}

/// `|r(y)| <= rho |y| + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    pub rho: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub source: String,
    pub expr: Expr,
    pub growth: Option<GrowthBound>,
}

impl Regression {
    pub fn parse(source: &str, growth: Option<GrowthBound>) -> Result<Self> {
        Ok(Regression { source: source.to_string(), expr: funcgrammar::parse(source)?, growth })
    }

    pub fn from_preset(p: Preset) -> Self {
        Regression {
            source: p.source.to_string(),
            expr: funcgrammar::parse(p.source).expect("preset expressions parse"),
            growth: Some(GrowthBound { rho: p.rho, b: p.b }),
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.expr.eval(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialValue {
    Point(f64),
    Gaussian { mean: f64, sd: f64 },
}

impl Default for InitialValue {
    fn default() -> Self {
        InitialValue::Point(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialRegime {
    #[default]
    Stationary,
    Given(Vec<f64>),
}

/// Gaussian-noise switching autoregression.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub transition: TransitionMatrix,
    pub regressions: Vec<Regression>,
    pub noise_sigma: f64,
    pub y0: InitialValue,
    pub x1: InitialRegime,
    /// Steps simulated and discarded before `Y_0`.
    pub burn_in: usize,
}

impl ModelSpec {
    pub fn new(transition: TransitionMatrix, regressions: Vec<Regression>, noise_sigma: f64) -> Result<Self> {
        let spec = ModelSpec {
            transition,
            regressions,
            noise_sigma,
            y0: InitialValue::default(),
            x1: InitialRegime::default(),
            burn_in: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn m(&self) -> usize {
        self.transition.m()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if self.regressions.len() != m {
            return Err(Error::InvalidModel(format!("{} regressions for {m} regimes", self.regressions.len())));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::InvalidModel(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        for (i, r) in self.regressions.iter().enumerate() {
            if let Some(g) = r.growth {
                if !(g.rho > 0.0) || !(g.b >= 0.0) {
                    return Err(Error::InvalidModel(format!("growth bound of regime {} must have rho > 0, b >= 0", i + 1)));
                }
            }
        }
        if let InitialValue::Gaussian { sd, .. } = self.y0 {
            if !(sd >= 0.0) {
                return Err(Error::InvalidModel("initial-value sd must be >= 0".into()));
            }
        }
        if let InitialRegime::Given(p) = &self.x1 {
            let s: f64 = p.iter().sum();
            if p.len() != m || p.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel("x1 law must be a probability vector of length m".into()));
            }
        }
        Ok(())
    }

    pub fn initial_regime_law(&self) -> Result<Vec<f64>> {
        match &self.x1 {
            InitialRegime::Stationary => stationary_distribution(&self.transition),
            InitialRegime::Given(p) => Ok(p.clone()),
        }
    }

    /// The three-regime model used throughout the simulation study.
    pub fn paper_m3() -> Self {
        let regressions = funcgrammar::PRESETS.iter().map(|&p| Regression::from_preset(p)).collect();
        let transition = TransitionMatrix::new(vec![
            vec![0.95, 0.025, 0.025],
            vec![0.025, 0.95, 0.025],
            vec![0.025, 0.025, 0.95],
        ])
        .expect("valid matrix");
        ModelSpec::new(transition, regressions, 0.5).expect("valid model")
    }

    /// Single-regime linear baseline `r(y) = 0.5 y`, sigma = 0.3.
    pub fn m1_linear() -> Self {
        let r = Regression::parse("0.5*y", Some(GrowthBound { rho: 0.5, b: 0.0 })).expect("parses");
        ModelSpec::new(TransitionMatrix::new(vec![vec![1.0]]).expect("valid"), vec![r], 0.3).expect("valid model")
    }
}

/// Observed trajectory `Y_0..Y_n` with the optional regime path
/// `X_1..X_n`. Regimes are 0-based in memory and 1-based on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub y: Vec<f64>,
    pub x: Option<Vec<usize>>,
    pub seed: Option<u64>,
}

impl Series {
    pub fn new(y: Vec<f64>, x: Option<Vec<usize>>) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::InvalidSeries("need at least Y_0 and Y_1".into()));
        }
        if let Some(x) = &x {
            if x.len() != y.len() - 1 {
                return Err(Error::LengthMismatch(x.len(), y.len() - 1));
            }
        }
        Ok(Series { y, x, seed: None })
    }

    /// Number of transitions `n`.
    pub fn n(&self) -> usize {
        self.y.len() - 1
    }

    pub fn hidden(&self) -> Series {
        Series { y: self.y.clone(), x: None, seed: self.seed }
    }

    pub fn check_regimes(&self, m: usize) -> Result<()> {
        if let Some(x) = &self.x {
            if let Some(bad) = x.iter().find(|&&r| r >= m) {
                return Err(Error::InvalidSeries(format!("regime label {} outside 1..{m}", bad + 1)));
            }
        }
        Ok(())
    }

    /// CSV `k,y,x`, with `Y_0` on row 0 and an empty `x` when hidden.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"k,y,x\n")?;
        writeln!(w, "0,{},", crate::fmt_f64(self.y[0]))?;
        for k in 1..self.y.len() {
            match &self.x {
                Some(x) => writeln!(w, "{k},{},{}", crate::fmt_f64(self.y[k]), x[k - 1] + 1)?,
                None => writeln!(w, "{k},{},", crate::fmt_f64(self.y[k]))?,
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["k", "y", "x"] {
            return Err(Error::InvalidSeries(format!("expected header k,y,x, found {:?}", headers)));
        }
        let mut y = Vec::new();
        let mut x = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::InvalidSeries(format!("row {}: {what}", row + 1));
            let k: usize = rec.get(0).unwrap_or("").parse().map_err(|_| bad("bad k"))?;
            if k != row {
                return Err(bad("k must count up from 0"));
            }
            let v: f64 = rec.get(1).unwrap_or("").parse().map_err(|_| bad("bad y"))?;
            y.push(v);
            let xs = rec.get(2).unwrap_or("");
            if k == 0 {
                continue;
            }
            if xs.is_empty() {
                x.push(None);
            } else {
                let label: usize = xs.parse().map_err(|_| bad("bad x"))?;
                if label == 0 {
                    return Err(bad("regime labels start at 1"));
                }
                x.push(Some(label - 1));
            }
        }
        let x = if x.iter().all(Option::is_some) && !x.is_empty() {
            Some(x.into_iter().flatten().collect())
        } else if x.iter().all(Option::is_none) {
            None
        } else {
            return Err(Error::InvalidSeries("x column must be either complete or empty".into()));
        };
        Series::new(y, x)
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

pub fn simulate(spec: &ModelSpec, n: usize, seed: u64) -> Result<Series> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = simulate_with(spec, n, &mut rng)?;
    s.seed = Some(seed);
    Ok(s)
}

/// Simulates `n` steps after `spec.burn_in` discarded steps.
pub fn simulate_with<R: Rng + ?Sized>(spec: &ModelSpec, n: usize, rng: &mut R) -> Result<Series> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    spec.validate()?;
    let x1 = spec.initial_regime_law()?;
    let mut y_prev = match spec.y0 {
        InitialValue::Point(v) => v,
        InitialValue::Gaussian { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
    };
    let total = n + spec.burn_in;
    let mut y = Vec::with_capacity(n + 1);
    let mut x = Vec::with_capacity(n);
    if spec.burn_in == 0 {
        y.push(y_prev);
    }
    let mut state = 0;
    for k in 1..=total {
        state = if k == 1 { sample_categorical(&x1, rng) } else { sample_categorical(&spec.transition.rows[state], rng) };
        let noise: f64 = rng.sample(StandardNormal);
        let v = spec.regressions[state].eval(y_prev) + spec.noise_sigma * noise;
        if !v.is_finite() {
            return Err(Error::NonFinite { regime: state + 1, time: k });
        }
        y_prev = v;
        if k == spec.burn_in {
            y.push(v);
        } else if k > spec.burn_in {
            y.push(v);
            x.push(state);
        }
    }
    Series::new(y, Some(x))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub stationary: Vec<f64>,
    /// `sum_i mu_i log rho_i`.
    pub drift: f64,
    pub spectral_radius_qs: f64,
    pub s: f64,
    pub irreducible: bool,
    pub drift_negative: bool,
    pub moment_condition: bool,
}

impl StabilityReport {
    pub fn satisfied(&self) -> bool {
        self.irreducible && self.drift_negative && self.moment_condition
    }
}

/// `Q_s = (rho_j^s a_ij)`.
pub fn moment_matrix(a: &TransitionMatrix, rho: &[f64], s: f64) -> Square {
    let m = a.m();
    (0..m).map(|i| (0..m).map(|j| rho[j].powf(s) * a.rows[i][j]).collect()).collect()
}

pub fn check_stability(spec: &ModelSpec, s: f64) -> Result<StabilityReport> {
    if !(s >= 1.0) {
        return Err(Error::InvalidArgument(format!("moment order s must be >= 1, got {s}")));
    }
    let rho: Vec<f64> =
        spec.regressions.iter().map(|r| r.growth.map(|g| g.rho)).collect::<Option<_>>().ok_or(Error::MissingGrowthBounds)?;
    let stationary = stationary_distribution(&spec.transition)?;
    let drift: f64 = stationary.iter().zip(&rho).map(|(mu, r)| mu * r.ln()).sum();
    let q = moment_matrix(&spec.transition, &rho, s);
    let spectral_radius_qs = numeric::spectral_radius_nonneg(&q, 1e-13, 1_000_000);
    Ok(StabilityReport {
        stationary,
        drift,
        spectral_radius_qs,
        s,
        irreducible: true,
        drift_negative: drift < 0.0,
        moment_condition: spectral_radius_qs < 1.0,
    })
}
