use std::f64::consts::PI;

use cbir_core::gabor::{
    compute_energy, compute_stats, distance, dominant_orientation, extract_feature, normalize_rotation, raw_distance,
    EnergyGrid, FilterBank, FilterBankParams, GaborError, TextureFeatureVector,
};
use cbir_core::imaging::GrayImage;
use cbir_core::synth;
use cbir_testkit as oracle;
use num_complex::Complex64;
use proptest::prelude::*;

fn default_bank() -> FilterBank {
    FilterBank::new(FilterBankParams::default()).unwrap()
}

fn small_bank() -> FilterBank {
    FilterBank::new(FilterBankParams {
        scales: 3,
        orientations: 4,
        low_freq: 0.08,
        high_freq: 0.35,
        kernel_size: 7,
    })
    .unwrap()
}

fn oracle_planes(img: &GrayImage, bank: &FilterBank) -> Vec<Vec<Complex64>> {
    bank.kernels()
        .map(|(_, k)| oracle::convolve_same(img.pixels(), img.width(), img.height(), k.coeffs(), k.size()))
        .collect()
}

#[test]
fn single_scale_bank_peaks_at_high_freq() {
    let params = FilterBankParams {
        scales: 1,
        orientations: 1,
        low_freq: 0.1,
        high_freq: 0.4,
        kernel_size: 31,
    };
    let bank = FilterBank::new(params).unwrap();
    let k = bank.kernel(0, 0);
    let bins = 128;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for iv in 0..bins {
        for iu in 0..bins {
            let fu = iu as f64 / bins as f64 - 0.5;
            let fv = iv as f64 / bins as f64 - 0.5;
            let mag = oracle::dft_magnitude(k.coeffs(), k.size(), fu, fv);
            if mag > best.0 {
                best = (mag, fu, fv);
            }
        }
    }
    let step = 1.0 / bins as f64;
    assert!((best.1 - 0.4).abs() <= step, "peak at u={}", best.1);
    // a single orientation has unbounded angular bandwidth, so the response
    // is flat along v; the peak row must still sit at u = high_freq for v = 0
    let on_axis = (0..bins)
        .map(|iu| iu as f64 / bins as f64 - 0.5)
        .max_by(|a, b| {
            let ma = oracle::dft_magnitude(k.coeffs(), k.size(), *a, 0.0);
            let mb = oracle::dft_magnitude(k.coeffs(), k.size(), *b, 0.0);
            ma.total_cmp(&mb)
        })
        .unwrap();
    assert!((on_axis - 0.4).abs() <= step, "on-axis peak at u={on_axis}");
}

#[test]
fn rotating_by_pi_over_n_maps_to_next_column() {
    let bank = default_bank();
    let n_or = bank.orientations();
    let delta = PI / n_or as f64;
    let r = bank.support_radius() - 1e-9;
    let h = bank.params().kernel_size as isize / 2;
    for m in 0..bank.scales() {
        for n in 0..n_or - 1 {
            for dy in -h..=h {
                for dx in -h..=h {
                    let (x, y) = (dx as f64, dy as f64);
                    if x.hypot(y) >= r {
                        continue;
                    }
                    // sample column n on the grid rotated back by pi/N
                    let xr = x * delta.cos() + y * delta.sin();
                    let yr = -x * delta.sin() + y * delta.cos();
                    let rotated = bank.wavelet(m, n, xr, yr);
                    let next = bank.wavelet(m, n + 1, x, y);
                    assert!((rotated - next).norm() <= 1e-6, "m={m} n={n} at ({dx},{dy})");
                }
            }
        }
    }
}

#[test]
fn zero_image_has_zero_energy_and_features() {
    let bank = default_bank();
    let e = compute_energy(&GrayImage::zeros(16, 16), &bank);
    assert!(e.values().iter().all(|&v| v == 0.0));
    let f = extract_feature(&GrayImage::zeros(16, 16), &bank);
    assert!(f.mu().iter().chain(f.sigma()).all(|&v| v == 0.0));
    assert_eq!(f.dominant_orientation(), 0);
    assert!(f.is_normalized());
}

#[test]
fn impulse_energy_is_overlapping_kernel_mass() {
    let bank = default_bank();
    let img = GrayImage::from_fn(9, 9, |x, y| if (x, y) == (4, 4) { 255 } else { 0 });
    let e = compute_energy(&img, &bank);
    for ((m, n), k) in bank.kernels() {
        let mut mass = 0.0;
        for dy in -4..=4 {
            for dx in -4..=4 {
                mass += k.at(dx, dy).norm();
            }
        }
        assert!(oracle::close_relative(e.get(m, n), 255.0 * mass, 1e-9), "({m},{n})");
    }
}

#[test]
fn energy_and_stats_match_direct_convolution() {
    let mut rng = oracle::rng(11);
    for bank in [default_bank(), small_bank()] {
        for _ in 0..60 {
            let (w, h, px) = oracle::random_image(&mut rng, 8);
            let img = GrayImage::new(w, h, px).unwrap();
            let energy = compute_energy(&img, &bank);
            let stats = compute_stats(&img, &bank);
            assert!(!stats.is_normalized());
            let planes = oracle_planes(&img, &bank);
            let n_or = bank.orientations();
            for (i, plane) in planes.iter().enumerate() {
                let (m, n) = (i / n_or, i % n_or);
                let (mu, sigma) = oracle::mean_and_deviation(plane);
                assert!(oracle::close_relative(energy.get(m, n), oracle::energy(plane), 1e-9));
                assert!(oracle::close_relative(stats.mu_at(m, n), mu, 1e-9));
                assert!(oracle::close_relative(stats.sigma_at(m, n), sigma, 1e-9), "{w}x{h} ({m},{n})");
            }
            let e: Vec<f64> = energy.values().to_vec();
            assert_eq!(stats.dominant_orientation(), oracle::argmax_column(&e, bank.scales(), n_or));
        }
    }
}

#[test]
fn constant_image_has_near_zero_response_away_from_borders() {
    // zero-mean kernels: a constant field only responds where the padding cuts it
    let bank = default_bank();
    let img = GrayImage::from_fn(96, 96, |_, _| 200);
    let planes = cbir_core::gabor::filter_magnitudes(&img, &bank);
    for ((m, n), _) in bank.kernels() {
        let p = planes.plane(m, n);
        assert!(p[48 * 96 + 48] < 1e-6, "({m},{n}) {}", p[48 * 96 + 48]);
    }
}

#[test]
fn grating_at_column_three_is_dominant_there() {
    let bank = default_bank();
    let angle = bank.params().orientation_angle(3);
    let img = synth::grating(40, 40, 0.2, angle, 0.3);
    let energy = compute_energy(&img, &bank);
    assert_eq!(dominant_orientation(&energy), 3);
    let direct: Vec<f64> = oracle_planes(&img, &bank).iter().map(|p| oracle::energy(p)).collect();
    assert_eq!(oracle::argmax_column(&direct, bank.scales(), bank.orientations()), 3);
    for (a, b) in energy.values().iter().zip(&direct) {
        assert!(oracle::close_relative(*a, *b, 1e-9));
    }
}

#[test]
fn neighbouring_orientations_normalize_to_nearly_equal_features() {
    let bank = default_bank();
    let step = PI / bank.orientations() as f64;
    for (n, freq) in [(0usize, 0.2), (1, 0.1), (2, 0.3)] {
        let theta = n as f64 * step;
        let a = synth::windowed_grating(128, freq, theta, 60.0);
        let b = synth::windowed_grating(128, freq, theta + step, 60.0);
        let (fa, fb) = (extract_feature(&a, &bank), extract_feature(&b, &bank));
        let peak = fa.elements().into_iter().fold(0.0, f64::max);
        for (x, y) in fa.elements().iter().zip(fb.elements()) {
            // 8-bit sampling of the grating leaves a noise floor near 1% of the peak
            let scale = x.max(y).max(0.01 * peak);
            assert!((x - y).abs() <= 0.05 * scale, "theta={theta:.3} f={freq}: {x} vs {y}");
        }
        let (ua, ub) = (compute_stats(&a, &bank), compute_stats(&b, &bank));
        let normalized = distance(&fa, &fb).unwrap();
        let unnormalized = raw_distance(&ua, &ub).unwrap();
        assert!(normalized <= 0.1 * unnormalized, "{normalized} vs {unnormalized}");
    }
}

#[test]
fn quarter_turn_shifts_columns_by_half_the_orientations() {
    let bank = default_bank();
    let img = synth::texture_corpus(1, 64, 5).remove(0);
    let a = compute_stats(&img, &bank);
    let b = compute_stats(&img.rotate90(), &bank);
    let n_or = bank.orientations();
    for m in 0..bank.scales() {
        for n in 0..n_or {
            let r = (n + n_or / 2) % n_or;
            assert!(oracle::close_relative(a.mu_at(m, n), b.mu_at(m, r), 1e-9));
            assert!(oracle::close_relative(a.sigma_at(m, n), b.sigma_at(m, r), 1e-9));
        }
    }
    let d = distance(&normalize_rotation(&a), &normalize_rotation(&b)).unwrap();
    assert!(d < 1e-9 * a.mu().iter().sum::<f64>(), "{d}");
}

#[test]
fn extraction_is_bit_identical() {
    let bank = default_bank();
    let img = synth::noise(50, 37, 4);
    assert_eq!(extract_feature(&img, &bank).to_bytes(), extract_feature(&img, &bank).to_bytes());
    let other = default_bank();
    assert_eq!(extract_feature(&img, &bank), extract_feature(&img, &other));
}

#[test]
fn distance_single_component_and_contracts() {
    let mut mu = vec![0.0; 30];
    let sigma = vec![0.0; 30];
    let t = TextureFeatureVector::from_parts(5, 6, mu.clone(), sigma.clone(), 0, true).unwrap();
    mu[0] = 3.0;
    let q = TextureFeatureVector::from_parts(5, 6, mu, sigma, 0, true).unwrap();
    assert_eq!(distance(&q, &t).unwrap(), 3.0);
    assert_eq!(distance(&q, &q).unwrap(), 0.0);
    let raw = compute_stats(&synth::noise(8, 8, 1), &default_bank());
    assert!(matches!(distance(&raw, &t), Err(GaborError::NotNormalized)));
    let small = TextureFeatureVector::zeros(3, 4);
    assert!(matches!(distance(&small, &t), Err(GaborError::DimensionMismatch { .. })));
}

#[test]
fn distance_matches_scalar_loop() {
    let mut rng = oracle::rng(21);
    for _ in 0..500 {
        let (ma, sa) = oracle::random_blocks(&mut rng, 30);
        let (mb, sb) = oracle::random_blocks(&mut rng, 30);
        let a = TextureFeatureVector::from_parts(5, 6, ma.clone(), sa.clone(), 0, true).unwrap();
        let b = TextureFeatureVector::from_parts(5, 6, mb.clone(), sb.clone(), 0, true).unwrap();
        let expect = oracle::block_distance(&ma, &sa, &mb, &sb);
        assert!((distance(&a, &b).unwrap() - expect).abs() <= 1e-12 * expect.max(1.0));
    }
}

#[test]
fn dominant_column_shift_on_symbolic_blocks() {
    // blocks a..f encoded as 1..6 in mu; c is dominant
    let mu: Vec<f64> = (1..=6).map(f64::from).collect();
    let sigma: Vec<f64> = (1..=6).map(|v| f64::from(v) * 10.0).collect();
    let f = TextureFeatureVector::from_parts(1, 6, mu, sigma, 2, false).unwrap();
    let g = normalize_rotation(&f);
    let letters: String = g.mu().iter().map(|&v| (b'a' + v as u8 - 1) as char).collect();
    assert_eq!(letters, "cdefab");
    assert_eq!(g.sigma(), &[30.0, 40.0, 50.0, 60.0, 10.0, 20.0]);
    assert_eq!(g.dominant_orientation(), 0);
    assert!(g.is_normalized());
}

fn feature_strategy() -> impl Strategy<Value = TextureFeatureVector> {
    (1usize..4, 1usize..7)
        .prop_flat_map(|(m, n)| {
            (
                Just(m),
                Just(n),
                proptest::collection::vec(0.0f64..50.0, m * n),
                proptest::collection::vec(0.0f64..5.0, m * n),
                0..n,
            )
        })
        .prop_map(|(m, n, mu, sigma, d)| TextureFeatureVector::from_parts(m, n, mu, sigma, d, false).unwrap())
}

fn normalized_triple() -> impl Strategy<Value = [TextureFeatureVector; 3]> {
    let one = || {
        (
            proptest::collection::vec(0.0f64..50.0, 30),
            proptest::collection::vec(0.0f64..5.0, 30),
        )
            .prop_map(|(mu, sigma)| TextureFeatureVector::from_parts(5, 6, mu, sigma, 0, true).unwrap())
    };
    (one(), one(), one()).prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #[test]
    fn normalization_is_idempotent_and_permutes_rows(f in feature_strategy()) {
        let g = normalize_rotation(&f);
        prop_assert_eq!(normalize_rotation(&g), g.clone());
        prop_assert_eq!(g.dominant_orientation(), 0);
        let n = f.orientations();
        for m in 0..f.scales() {
            let mut before: Vec<(u64, u64)> = (0..n).map(|i| (f.mu_at(m, i).to_bits(), f.sigma_at(m, i).to_bits())).collect();
            let mut after: Vec<(u64, u64)> = (0..n).map(|i| (g.mu_at(m, i).to_bits(), g.sigma_at(m, i).to_bits())).collect();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);
        }
    }

    #[test]
    fn shifted_energy_is_dominant_at_zero(values in proptest::collection::vec(0.0f64..10.0, 30)) {
        let grid = EnergyGrid::from_values(5, 6, values.clone()).unwrap();
        let d = dominant_orientation(&grid);
        let shifted: Vec<f64> = values.chunks(6).flat_map(|row| (0..6).map(move |n| row[(n + d) % 6])).collect();
        prop_assert_eq!(dominant_orientation(&EnergyGrid::from_values(5, 6, shifted).unwrap()), 0);
    }

    #[test]
    fn distance_is_a_pseudometric([a, b, c] in normalized_triple()) {
        let ab = distance(&a, &b).unwrap();
        let ba = distance(&b, &a).unwrap();
        let bc = distance(&b, &c).unwrap();
        let ac = distance(&a, &c).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn features_are_non_negative(seed: u64, w in 1usize..20, h in 1usize..20) {
        let f = compute_stats(&synth::noise(w, h, seed), &small_bank());
        prop_assert!(f.mu().iter().chain(f.sigma()).all(|&v| v >= 0.0));
    }
}
