use bearing_ntf::dependence::dependence_map;
use bearing_ntf::diagnosis::{envsi, evaluate_curves, filter_with_selector, DiagnosisConfig, EnvelopeSpectrum, EnvsiConfig};
use bearing_ntf::ntf::{beta_divergence, update_step, Beta, NtfFactors, Tensor3};
use bearing_ntf::selectors::{
    alpha_selector, cv_selector, pearson_selector, spectral_kurtosis, SelectorCurve, SelectorMethod,
};
use bearing_ntf::signal::simulate_components;
use bearing_ntf::spectral::Spectrogram;
use bearing_ntf::{simulate, SimConfig, Signal};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(seed: u64, shape: (usize, usize, usize), zeros: bool) -> Tensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n1, n2, n3) = shape;
    let data = (0..n1 * n2 * n3)
        .map(|_| {
            if zeros && rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.01..2.0)
            }
        })
        .collect();
    Tensor3::from_vec(n1, n2, n3, data).unwrap()
}

fn short_sim(seed: u64) -> SimConfig {
    let mut cfg = SimConfig {
        duration: 0.5,
        sample_rate: 8000.0,
        seed,
        ..SimConfig::default()
    };
    cfg.soi.carrier_frequency = 2000.0;
    cfg.impulses.carrier_frequency = 3500.0;
    cfg
}

fn random_spectrogram(seed: u64, bins: usize, frames: usize) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..bins)
        .map(|b| {
            (0..frames)
                .map(|_| {
                    let base: f64 = rng.random_range(0.0..1.0);
                    // A few bins get occasional large values.
                    if b % 5 == 0 && rng.random_bool(0.02) {
                        base * 30.0
                    } else {
                        base
                    }
                })
                .collect()
        })
        .collect();
    let freqs = (0..bins).map(|b| b as f64 * 10.0).collect();
    Spectrogram::from_bin_series(rows, freqs).unwrap()
}

fn scaled_spectrogram(s: &Spectrogram, factor: f64) -> Spectrogram {
    let rows = (0..s.n_bins())
        .map(|b| s.bin_series(b).iter().map(|v| v * factor).collect())
        .collect();
    Spectrogram::from_bin_series(rows, s.freq_bins().to_vec()).unwrap()
}

fn support(c: &SelectorCurve) -> Vec<bool> {
    c.values().iter().map(|&v| v > 0.0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>()) {
        let cfg = short_sim(seed);
        prop_assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    }

    #[test]
    fn noiseless_simulation_is_the_soi(seed in any::<u64>(), amp in 0.5f64..8.0) {
        let mut cfg = short_sim(seed);
        cfg.noise_variance = 0.0;
        cfg.impulses.amplitude_scale = 0.0;
        cfg.soi.amplitude = amp;
        let x = simulate(&cfg).unwrap();
        let parts = simulate_components(&cfg).unwrap();
        prop_assert_eq!(x.samples(), &parts.soi[..]);
    }

    #[test]
    fn ntf_iterates_stay_nonnegative_and_descend(
        seed in any::<u64>(),
        beta_idx in 0usize..3,
        rank in 1usize..5,
        zeros in any::<bool>(),
    ) {
        let beta = [Beta::ITAKURA_SAITO, Beta::KULLBACK_LEIBLER, Beta::EUCLIDEAN][beta_idx];
        let zeros = zeros && beta == Beta::EUCLIDEAN;
        let c = random_tensor(seed, (7, 6, 5), zeros);
        let mut f = NtfFactors::random(c.shape(), rank, seed ^ 0x5a5a);
        let mut prev = beta_divergence(&c, &f, beta).unwrap();
        for _ in 0..25 {
            f = update_step(&c, &f, beta, 1e-12).unwrap();
            for m in [&f.w, &f.h, &f.q] {
                prop_assert!(m.data().iter().all(|v| v.is_finite() && *v >= 0.0));
            }
            let next = beta_divergence(&c, &f, beta).unwrap();
            prop_assert!(next <= prev + 1e-10 * (1.0 + prev), "{} -> {}", prev, next);
            prev = next;
        }
    }

    #[test]
    fn column_rescaling_keeps_the_reconstruction(seed in any::<u64>(), k in 0usize..3, scale in 0.01f64..100.0) {
        let f = NtfFactors::random((5, 4, 3), 3, seed);
        let mut g = f.clone();
        g.w.scale_column(k, scale);
        g.h.scale_column(k, 1.0 / scale);
        let (a, b) = (f.reconstruct(), g.reconstruct());
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn dependence_map_is_symmetric_bounded_and_row_scale_free(seed in any::<u64>(), row in 0usize..12, scale in 0.001f64..1000.0) {
        let s = random_spectrogram(seed, 12, 40);
        let map = dependence_map(&s).unwrap();
        for j in 0..12 {
            for k in 0..12 {
                prop_assert_eq!(map.get(j, k), map.get(k, j));
                prop_assert!((-1.0..=1.0).contains(&map.get(j, k)));
            }
        }
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|b| s.bin_series(b).iter().map(|v| if b == row { v * scale } else { *v }).collect())
            .collect();
        let scaled = dependence_map(&Spectrogram::from_bin_series(rows, s.freq_bins().to_vec()).unwrap()).unwrap();
        for (x, y) in map.values().iter().zip(scaled.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_rows_permutes_the_map(seed in any::<u64>(), a in 0usize..10, b in 0usize..10) {
        let s = random_spectrogram(seed, 10, 30);
        let mut rows: Vec<Vec<f64>> = (0..10).map(|i| s.bin_series(i).to_vec()).collect();
        rows.swap(a, b);
        let swapped = dependence_map(&Spectrogram::from_bin_series(rows, s.freq_bins().to_vec()).unwrap()).unwrap();
        let map = dependence_map(&s).unwrap();
        let p = |i: usize| if i == a { b } else if i == b { a } else { i };
        for j in 0..10 {
            for k in 0..10 {
                prop_assert_eq!(swapped.get(j, k), map.get(p(j), p(k)));
            }
        }
    }

    #[test]
    fn selectors_are_scale_free_and_normalized(seed in any::<u64>()) {
        let s = random_spectrogram(seed, 20, 400);
        let t = scaled_spectrogram(&s, 7.3);
        let curves = |s: &Spectrogram| vec![
            spectral_kurtosis(s).unwrap(),
            alpha_selector(s).unwrap(),
            cv_selector(s).unwrap(),
            pearson_selector(&dependence_map(s).unwrap()).unwrap(),
        ];
        for (a, b) in curves(&s).iter().zip(curves(&t)) {
            prop_assert_eq!(a.len(), 20);
            prop_assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(support(a), support(&b));
            if !a.is_zero() {
                prop_assert_eq!(a.argmax_freq(), b.argmax_freq());
            }
        }
    }

    #[test]
    fn filtering_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x = simulate(&short_sim(seed)).unwrap();
        let y = simulate(&short_sim(seed.wrapping_add(1))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bins: Vec<f64> = (0..257).map(|k| k as f64 * 8000.0 / 512.0).collect();
        let gains = (0..257).map(|_| rng.random_range(0.0..1.0)).collect();
        let curve = SelectorCurve::new(gains, bins, SelectorMethod::Ntf, "random").unwrap();
        let combo: Vec<f64> = x.samples().iter().zip(y.samples()).map(|(p, q)| a * p + b * q).collect();
        let lhs = filter_with_selector(&Signal::new(combo, 8000.0).unwrap(), &curve).unwrap();
        let fx = filter_with_selector(&x, &curve).unwrap();
        let fy = filter_with_selector(&y, &curve).unwrap();
        let scale = lhs.samples().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for ((l, p), q) in lhs.samples().iter().zip(fx.samples()).zip(fy.samples()) {
            prop_assert!((l - (a * p + b * q)).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn envsi_is_bounded_and_scale_free(values in prop::collection::vec(0.0f64..10.0, 700..900), scale in 1e-6f64..1e6) {
        let ses = EnvelopeSpectrum::new(values, 0.5).unwrap();
        let cfg = EnvsiConfig { fault_frequency: 60.0, ..EnvsiConfig::default() };
        let v = envsi(&ses, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        let w = envsi(&ses.scaled(scale), &cfg).unwrap();
        prop_assert!((v - w).abs() <= 1e-12);
    }

    #[test]
    fn class_choice_ignores_curve_scale(seed in any::<u64>(), scales in prop::collection::vec(0.01f64..100.0, 3)) {
        let x = simulate(&short_sim(seed)).unwrap();
        let bins: Vec<f64> = (0..257).map(|k| k as f64 * 8000.0 / 512.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<Vec<f64>> = (0..3).map(|_| (0..257).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let build = |s: &[f64]| -> Vec<SelectorCurve> {
            raw.iter()
                .zip(s)
                .enumerate()
                .map(|(k, (r, f))| {
                    SelectorCurve::new(r.iter().map(|v| v * f).collect(), bins.clone(), SelectorMethod::Ntf, format!("c{k}")).unwrap()
                })
                .collect()
        };
        let cfg = DiagnosisConfig::default();
        let a = evaluate_curves(&x, build(&[1.0, 1.0, 1.0]), None, &cfg).unwrap();
        let b = evaluate_curves(&x, build(&scales), None, &cfg).unwrap();
        prop_assert_eq!(a.chosen_class, b.chosen_class);
    }
}
