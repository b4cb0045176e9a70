//! Sampling checks at fixed seeds: path law, estimator scaling, determinism.

use fracdev_core::fbm_sim::{fgn_autocov, FbmSampler};
use fracdev_core::gaussian_moments::{expected_iterated_integral, MomentOptions};
use fracdev_core::harness::mc_estimate;
use fracdev_core::stats::MeanEstimate;
use fracdev_core::symexpr::{McSettings, MomentMethod, Scheme, SdeSpec};

fn trivial(h: f64, f: &str) -> SdeSpec {
    SdeSpec::new(h, vec![0.0], &["0"], &[vec!["1"]], f).unwrap()
}

#[test]
fn fbm_variance_and_increment_covariance() {
    for h in [0.3, 0.5, 0.7] {
        let sampler = FbmSampler::new(h, 64, 2.0).unwrap();
        let paths: Vec<_> = (0..20_000).map(|p| sampler.sample_indexed(1, 9, p)).collect();
        // Var B_t = t^{2H}
        for k in [16, 64] {
            let t = 2.0 * k as f64 / 64.0;
            let sq: Vec<f64> = paths.iter().map(|p| p.value(k, 0).powi(2)).collect();
            let est = MeanEstimate::from_samples(&sq);
            assert!(est.z_score(t.powf(2.0 * h)) < 3.0, "H={h} t={t}: {est:?}");
        }
        // increments of width δ = 1/32 have covariance δ^{2H} ρ_H(k)
        let delta: f64 = 2.0 / 64.0;
        for lag in [1, 3] {
            let prods: Vec<f64> = paths
                .iter()
                .map(|p| (p.value(1, 0) - p.value(0, 0)) * (p.value(lag + 1, 0) - p.value(lag, 0)))
                .collect();
            let est = MeanEstimate::from_samples(&prods);
            let want = delta.powf(2.0 * h) * fgn_autocov(h, lag);
            assert!(est.z_score(want) < 3.0, "H={h} lag={lag}: {est:?} vs {want}");
        }
    }
}

#[test]
fn standard_error_scales_with_inverse_root_paths() {
    let spec = trivial(0.7, "sin(x1) + x1^2");
    let mut scaled = Vec::new();
    for k in 0..5 {
        let paths = 1000 << k;
        let cfg = McSettings {
            paths,
            steps: 8,
            seed: 3,
            scheme: Scheme::Heun,
            area_refine: 1,
            t_values: vec![1.0],
        };
        let p = mc_estimate(&spec, &cfg).unwrap()[0];
        scaled.push(p.stderr * (paths as f64).sqrt());
    }
    for s in &scaled {
        assert!((s / scaled[0] - 1.0).abs() < 0.2, "{scaled:?}");
    }
}

#[test]
fn estimates_are_bitwise_reproducible() {
    let spec = SdeSpec::new(0.6, vec![1.0], &["-x1"], &[vec!["0.5*x1"]], "x1^2").unwrap();
    let cfg = McSettings {
        paths: 500,
        steps: 32,
        seed: 77,
        scheme: Scheme::Euler,
        area_refine: 1,
        t_values: vec![0.2, 0.7],
    };
    let a = mc_estimate(&spec, &cfg).unwrap();
    let b = mc_estimate(&spec, &cfg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.mean.to_bits(), y.mean.to_bits());
        assert_eq!(x.stderr.to_bits(), y.stderr.to_bits());
    }
}

#[test]
fn simulated_moments_agree_with_pairing() {
    let pairing = MomentOptions::default();
    let mc = MomentOptions {
        method: MomentMethod::Mc,
        mc_paths: 40_000,
        mc_steps: 128,
        seed: 5,
        ..MomentOptions::default()
    };
    for w in [vec![1, 0, 1], vec![1, 2, 2, 1], vec![0, 1, 1]] {
        let exact = expected_iterated_integral(&w, 0.7, &pairing).unwrap();
        let sim = expected_iterated_integral(&w, 0.7, &mc).unwrap();
        let noise = (sim.error_estimate.powi(2) + exact.error_estimate.powi(2)).sqrt();
        assert!((sim.value - exact.value).abs() < 3.0 * noise, "{w:?}: {} vs {}", sim.value, exact.value);
    }
}
