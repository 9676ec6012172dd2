use proptest::prelude::*;
use sle_lab::sde::*;
use sle_lab::special::HypParams;

#[test]
fn intermediate_with_zero_weight_is_standard() {
    for kappa in [2.0, 3.0] {
        let cfg = IntermediateConfig { kappa, rho: 0.0, p1: Some(0.5), p2: 1.5, horizon: 1.0, steps: 1024, seed: 21 };
        let a = drive_intermediate(&cfg).unwrap();
        let b = drive_standard(kappa, 1.0, 1024, 21).unwrap();
        assert!(a.xi.iter().zip(&b.xi).all(|(x, y)| (x - y).abs() <= 1e-12));
    }
}

#[test]
fn standard_increments_have_variance_kappa_dt() {
    let d = drive_standard(3.0, 1.0, 20000, 2).unwrap();
    let dt = 1.0 / 20000.0;
    let v: f64 = d.xi.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / 20000.0;
    // sample variance of chi-square: relative sd sqrt(2/n) ~ 1%
    assert!((v / (3.0 * dt) - 1.0).abs() < 0.05, "{}", v / (3.0 * dt));
}

#[test]
fn four_step_increments_over_many_seeds() {
    let n = 100_000;
    let mut s = 0.0;
    for seed in 0..n {
        let d = drive_standard(2.0, 1.0, 4, seed).unwrap();
        s += d.xi.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / 4.0;
    }
    let v = s / n as f64;
    assert!((v / 0.5 - 1.0).abs() < 0.01, "{v}");
}

#[test]
fn force_points_stay_ordered() {
    let cfg = SleConfig {
        kappa: 2.0,
        x0: 0.0,
        forces: vec![Force { rho: 1.0, at: ForceSpec::DegeneratePlus }, Force { rho: 0.5, at: ForceSpec::Finite(-1.0) }],
        horizon: 1.0,
        steps: 2048,
        seed: 4,
    };
    let d = drive_kappa_rho(&cfg).unwrap();
    let (p1, p2) = (d.force("p1").unwrap(), d.force("p2").unwrap());
    for k in 1..d.len() {
        assert!(p1[k] > d.xi[k] && p2[k] < d.xi[k], "step {k}");
    }
}

#[test]
fn invalid_parameters_name_the_bound() {
    let e = drive_standard(-1.0, 1.0, 10, 0).unwrap_err().to_string();
    assert!(e.contains("positive"), "{e}");
    let cfg = SleConfig { kappa: 5.0, x0: 0.0, forces: vec![], horizon: 1.0, steps: 10, seed: 0 };
    let e = drive_kappa_rho(&cfg).unwrap_err().to_string();
    assert!(e.contains("(0,4)"), "{e}");
    let cfg = IntermediateConfig { kappa: 2.0, rho: -1.5, p1: None, p2: 1.0, horizon: 1.0, steps: 10, seed: 0 };
    let e = drive_intermediate(&cfg).unwrap_err().to_string();
    assert!(e.contains("(kappa-4)/2"), "{e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn same_seed_same_path(seed in any::<u64>(), kappa in 0.5f64..3.9) {
        let a = drive_standard(kappa, 0.5, 64, seed).unwrap();
        let b = drive_standard(kappa, 0.5, 64, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn gap_drift_is_nonpositive(kappa in 0.3f64..3.95, r0 in 0.0f64..4.0, x1 in 1e-3f64..10.0, ratio in 1.0001f64..100.0) {
        let rho = (kappa - 4.0) / 2.0 + r0;
        let hp = HypParams::new(kappa, rho).unwrap();
        prop_assert!(gap_log_drift(&hp, x1, x1 * ratio).unwrap() <= 1e-12);
    }

    #[test]
    fn mirrored_noise_mirrors_standard_paths(seed in any::<u64>()) {
        let mut a = Noise::new(seed);
        let mut b = Noise::new(seed).mirrored();
        for _ in 0..20 {
            prop_assert_eq!(a.increment(0.01), -b.increment(0.01));
        }
    }

    #[test]
    fn coarsened_noise_sums_fine_draws(seed in any::<u64>()) {
        let mut fine = Noise::new(seed);
        let mut coarse = Noise::coarsened(seed, 2);
        for _ in 0..10 {
            let s = fine.increment(0.005) + fine.increment(0.005);
            prop_assert!((coarse.increment(0.01) - s).abs() <= 1e-15);
        }
    }
}
