use msnar::diagnostics::{classification_matrix, coverage_experiment_hidden, snap_to_grid, CoveragePoint};
use msnar::kernelsmooth::{ci_band_full, nw_fit, BandwidthChoice};
use msnar::rmfit::{critical_point, RMConfig, SigmaMode};
use msnar::{simulate, EvalGrid, Kernel, ModelSpec, Series};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn theta_star_hand_instance() {
    let s = Series::new(vec![0.0, 0.1, -0.1, 0.05, 0.2], None).unwrap();
    let gamma = vec![vec![0.5, 0.5], vec![0.9, 0.1], vec![0.2, 0.8], vec![0.3, 0.7]];
    let grid = EvalGrid::new(vec![0.0]).unwrap();
    let cp = critical_point(&s, &gamma, &[1.0, 1.0], Kernel::Triweight, &grid);
    // exact rational arithmetic
    assert!((cp.theta_star[0][0] - 0.017_118_368_478_630_935).abs() < 1e-15);
    assert!((cp.theta_star[1][0] - 0.105_444_001_950_111_67).abs() < 1e-15);
}

#[test]
fn band_width_from_measured_quantities() {
    let spec = ModelSpec::paper_m3();
    let series = simulate(&spec, 3000, 41).unwrap();
    let grid = EvalGrid::linspace(-1.0, 1.0, 21).unwrap();
    let est = nw_fit(&series, 3, Kernel::Triweight, &BandwidthChoice::Rule { k0: 0.55 }, &grid).unwrap();
    let est = ci_band_full(est, 0.05).unwrap();
    let z = 1.959_963_984_540_054;
    for reg in &est.regimes {
        // the densest grid point of the regime
        let g = (0..grid.len()).max_by(|&a, &b| reg.f_hat[a].total_cmp(&reg.f_hat[b])).unwrap();
        let want = z * reg.sigma2_hat.sqrt() * (350.0f64 / 429.0).sqrt() / (3000.0 * reg.h * reg.f_hat[g]).sqrt();
        let got = reg.ci_half_width.as_ref().unwrap()[g];
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
    }
}

#[test]
fn independent_labels_give_flat_classification() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 100_000;
    let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let est: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let cm = classification_matrix(&est, &truth, 3).unwrap();
    for v in cm.entries.iter().flatten() {
        assert!((v - 1.0 / 3.0).abs() <= 0.01, "{v}");
    }
}

// several minutes in release; run with `--ignored`
#[test]
#[ignore]
fn hidden_bands_cover_the_critical_point() {
    let spec = ModelSpec::paper_m3();
    let series = simulate(&spec, 3000, 12).unwrap();
    let grid = EvalGrid::from_data(&series.y, 201, 0.98).unwrap();
    let mut cfg = RMConfig::new(3, grid.clone());
    cfg.sigma_mode = SigmaMode::Known(0.5);
    cfg.seed = 12;
    let points = snap_to_grid(
        &[CoveragePoint { regime: 0, y: 0.5 }, CoveragePoint { regime: 1, y: -0.5 }, CoveragePoint { regime: 2, y: 0.0 }],
        &grid,
    );
    let report = coverage_experiment_hidden(&series, &cfg, 50, &points).unwrap();
    assert!(!report.pre_asymptotic);
    for p in &report.points {
        assert!(p.coverage >= 0.80, "regime {} at {}: coverage {}", p.regime + 1, p.y, p.coverage);
    }
}
