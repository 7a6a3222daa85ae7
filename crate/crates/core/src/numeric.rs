//! Small numerical helpers: normal quantiles, the Kolmogorov-Smirnov
//! statistic and dense square-matrix utilities for m×m chains.

use std::f64::consts::SQRT_2;

/// Standard normal quantile, Wichura's AS 241 (PPND16) rational
/// approximation. Relative accuracy about 1e-16 on (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r + 67265.770_927_008_7) * r
                + 45921.953_931_549_87)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545 * r + 28729.085_735_721_943) * r + 39307.895_800_092_71) * r
                + 21213.794_301_586_597)
                * r
                + 5394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_91)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r + 0.241_780_725_177_450_6) * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Two-sided critical value `z_{1-alpha/2}`.
pub fn z_two_sided(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha / 2.0)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// One-sample Kolmogorov-Smirnov statistic of `sample` against N(0, 1).
pub fn ks_statistic_normal(sample: &[f64]) -> f64 {
    let mut xs: Vec<f64> = sample.iter().copied().filter(|v| v.is_finite()).collect();
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value `P(sqrt(n) D_n > sqrt(n) d)` from the Kolmogorov
/// distribution, with the usual small-sample correction
/// `sqrt(n) + 0.12 + 0.11/sqrt(n)`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    if !d.is_finite() || n == 0 {
        return f64::NAN;
    }
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

pub type Square = Vec<Vec<f64>>;

pub fn identity(m: usize) -> Square {
    (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn mat_mul(a: &Square, b: &Square) -> Square {
    let m = a.len();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

/// Row-vector times matrix.
pub fn vec_mat(v: &[f64], a: &Square) -> Vec<f64> {
    let m = v.len();
    (0..m).map(|j| (0..m).map(|i| v[i] * a[i][j]).sum()).collect()
}

/// Solves `M x = rhs` by Gaussian elimination with partial pivoting.
/// Returns `None` when the system is numerically singular.
pub fn solve(mut mat: Square, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| mat[a][col].abs().total_cmp(&mat[b][col].abs()))?;
        if mat[pivot][col].abs() < 1e-14 {
            return None;
        }
        mat.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let factor = mat[row][col] / mat[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                mat[row][k] -= factor * mat[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| mat[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / mat[row][row];
    }
    Some(x)
}

/// Perron root of a non-negative square matrix by power iteration on
/// `Q + I`, which shares the Perron vector of `Q` and is aperiodic.
/// Iterates until successive estimates agree to `rel_tol`.
pub fn spectral_radius_nonneg(q: &Square, rel_tol: f64, max_iter: usize) -> f64 {
    let m = q.len();
    if m == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / m as f64; m];
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let mut w: Vec<f64> = (0..m).map(|i| v[i] + (0..m).map(|j| q[i][j] * v[j]).sum::<f64>()).collect();
        let norm: f64 = w.iter().sum();
        if norm <= 0.0 {
            return 0.0;
        }
        w.iter_mut().for_each(|x| *x /= norm);
        // Collatz-Wielandt style ratio; with v normalised to sum 1, sum(w) = rho + 1.
        let next = norm - 1.0;
        let converged = (next - estimate).abs() <= rel_tol * next.abs().max(1e-300);
        estimate = next;
        v = w;
        if converged {
            break;
        }
    }
    estimate.max(0.0)
}
