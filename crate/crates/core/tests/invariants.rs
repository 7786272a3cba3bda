use num_complex::Complex64;
use proptest::prelude::*;
use zdx_core::driver::{occupation_probs, step_sample, Walker};
use zdx_core::excursion::conditioned_visits;
use zdx_core::kernel::{g_series_many, SeriesOptions};
use zdx_core::linalg::max_abs;
use zdx_core::rng::StreamFactory;
use zdx_core::spectral::local_spectrum;
use zdx_core::stats::mean_se;
use zdx_core::{Dim, Driver, IidStep, MarkovDriver, Point};

fn symmetric_1d(w0: f64, w1: f64, w2: f64) -> Driver {
    let t = w0 + 2.0 * w1 + 2.0 * w2;
    IidStep::new(
        Dim::One,
        vec![
            (Point::d1(0), w0 / t),
            (Point::d1(1), w1 / t),
            (Point::d1(-1), w1 / t),
            (Point::d1(2), w2 / t),
            (Point::d1(-2), w2 / t),
        ],
    )
    .unwrap()
    .into()
}

fn symmetric_2d(w0: f64, wx: f64, wd: f64) -> Driver {
    let t = w0 + 4.0 * wx + 4.0 * wd;
    let mut atoms = vec![(Point::ZERO, w0 / t)];
    for (x, y) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
        atoms.push((Point::d2(x, y), wx / t));
    }
    for (x, y) in [(1, 1), (-1, -1), (1, -1), (-1, 1)] {
        atoms.push((Point::d2(x, y), wd / t));
    }
    IidStep::new(Dim::Two, atoms).unwrap().into()
}

/// Mean-zero but asymmetric: steps −1 and +2 with weights 2c and c.
fn skewed_1d(c: f64) -> Driver {
    IidStep::new(Dim::One, vec![(Point::d1(-1), 2.0 * c), (Point::d1(0), 1.0 - 3.0 * c), (Point::d1(2), c)])
        .unwrap()
        .into()
}

/// Doubly stochastic, so the stationary law is uniform and steps −1, 0, 1
/// have mean zero.
fn mixed_permutations(w: &[f64; 6]) -> MarkovDriver {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let total: f64 = w.iter().sum();
    let mut t = vec![vec![0.0; 3]; 3];
    for (perm, wi) in PERMS.iter().zip(w) {
        for (i, &j) in perm.iter().enumerate() {
            t[i][j] += wi / total;
        }
    }
    MarkovDriver::new(Dim::One, t, vec![Point::d1(-1), Point::d1(0), Point::d1(1)], None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn occupation_is_symmetric_and_normalised_1d(w0 in 0.1f64..1.0, w1 in 0.1f64..1.0, w2 in 0.05f64..1.0) {
        let d = symmetric_1d(w0, w1, w2);
        let t = occupation_probs(&d, 20, 45).unwrap();
        for k in 0..=20 {
            for a in 1..=45 {
                prop_assert_eq!(t.get(k, Point::d1(a)), t.get(k, Point::d1(-a)));
            }
            prop_assert!((t.mass(k) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn occupation_is_symmetric_and_normalised_2d(w0 in 0.1f64..1.0, wx in 0.1f64..1.0, wd in 0.05f64..1.0) {
        let d = symmetric_2d(w0, wx, wd);
        let t = occupation_probs(&d, 12, 14).unwrap();
        for k in 0..=12 {
            for x in -14..=14 {
                for y in -14..=14 {
                    prop_assert_eq!(t.get(k, Point::d2(x, y)), t.get(k, Point::d2(-x, -y)));
                }
            }
            prop_assert!((t.mass(k) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn twisted_spectrum_decomposes(
        w in prop::array::uniform6(0.05f64..1.0),
        u in -0.6f64..0.6,
    ) {
        let chain = mixed_permutations(&w);
        let one = Complex64::new(1.0, 0.0);
        let s = local_spectrum(&chain, &[u], 1, one).unwrap();
        let r = local_spectrum(&chain, &[-u], 1, one).unwrap();
        prop_assert!((s.lambda - r.lambda.conj()).norm() < 1e-10);
        let pi = &s.projector;
        prop_assert!(max_abs(&(pi * s.lambda + &s.remainder - chain.twisted(&[u]))) < 1e-8);
        prop_assert!(max_abs(&(pi * &s.remainder)) < 1e-8);
        prop_assert!(max_abs(&(&s.remainder * pi)) < 1e-8);
        prop_assert!(max_abs(&(pi * pi - pi)) < 1e-8);
    }
}

#[test]
fn projector_power_on_periodic_chain() {
    for m in [2usize, 3] {
        let chain = MarkovDriver::cyclic_blocks(m).unwrap();
        let s = local_spectrum(&chain, &[0.4], m, Complex64::new(1.0, 0.0)).unwrap();
        let mut power = s.projector.clone();
        for _ in 0..m {
            power = &power * &s.projector;
        }
        assert!(max_abs(&(power - &s.projector)) < 1e-8, "m = {m}");
    }
}

#[test]
fn monte_carlo_frequencies_match_occupation() {
    let d: Driver = IidStep::lazy_1d().into();
    let t = occupation_probs(&d, 8, 8).unwrap();
    let n = 1_000_000usize;
    let streams = StreamFactory::new(7, "frequencies");
    let mut counts = [0u64; 17];
    for batch in 0..(n / 10_000) {
        let mut rng = streams.stream(batch as u64);
        for _ in 0..10_000 {
            let mut w = Walker::new(&d, &mut rng);
            for _ in 0..8 {
                step_sample(&mut w, &mut rng);
            }
            counts[(w.pos.x + 8) as usize] += 1;
        }
    }
    for (i, &c) in counts.iter().enumerate() {
        let p = t.get(8, Point::d1(i as i64 - 8));
        let bound = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((c as f64 / n as f64 - p).abs() <= bound.max(1e-12), "cell {}: {c} vs {p}", i as i64 - 8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn kernel_is_symmetric_and_refinement_stays_in_bounds(c in 0.05f64..0.3, p in 1i64..6) {
        let d = skewed_1d(c);
        let coarse = SeriesOptions { tol: 1e-3, max_horizon: 1 << 16, cut: 8.0 };
        let fine = SeriesOptions { tol: 1e-5, ..coarse };
        let g = g_series_many(&d, &[Point::d1(p), Point::d1(-p)], coarse).unwrap();
        prop_assert!((g[0].value - g[1].value).abs() <= 1e-12 * g[0].value);
        let h = g_series_many(&d, &[Point::d1(p)], fine).unwrap();
        prop_assert!(h[0].horizon >= g[0].horizon);
        prop_assert!((g[0].value - h[0].value).abs() <= g[0].error_bound + h[0].error_bound);
    }
}

#[test]
fn conditional_mean_is_symmetric_in_p() {
    let drivers: Vec<Driver> = vec![skewed_1d(0.2), MarkovDriver::three_state().into()];
    for d in &drivers {
        for p in [2i64, 4] {
            let plus = conditioned_visits(d, Point::d1(p), 4_000, 7, None, 50_000_000).unwrap();
            let minus = conditioned_visits(d, Point::d1(-p), 4_000, 7, None, 50_000_000).unwrap();
            let a = mean_se(&plus.iter().map(|&v| v as f64).collect::<Vec<_>>());
            let b = mean_se(&minus.iter().map(|&v| v as f64).collect::<Vec<_>>());
            // the two 95% intervals overlap
            assert!((a.mean - b.mean).abs() <= 1.96 * (a.se + b.se), "p = {p}: {a:?} vs {b:?}");
        }
    }
}
