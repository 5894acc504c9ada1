use super::*;
use alloc::vec;
use proptest::prelude::*;

use crate::autodiff::{Tape, Tensor};

fn density(channels: usize, seed: u64) -> FactorizedDensity {
    FactorizedDensity::init(channels, &DensityConfig::default(), seed).unwrap()
}

#[test]
fn rounding_is_half_away_from_zero() {
    let z = [0.5, -0.5, 1.49, 2.5, -2.5, 0.0];
    assert_eq!(quantize(&z, QuantizerMode::Round, 0).unwrap(), [1.0, -1.0, 1.0, 3.0, -3.0, 0.0]);
    assert_eq!(quantize(&z, QuantizerMode::StraightThrough, 0).unwrap(), quantize(&z, QuantizerMode::Round, 0).unwrap());
    assert!(quantize(&[f64::NAN], QuantizerMode::Round, 0).is_err());
}

#[test]
fn noise_is_bounded_and_seeded() {
    let z = vec![3.0; 10_000];
    let a = quantize(&z, QuantizerMode::AdditiveNoise, 5).unwrap();
    assert_eq!(a, quantize(&z, QuantizerMode::AdditiveNoise, 5).unwrap());
    assert_ne!(a, quantize(&z, QuantizerMode::AdditiveNoise, 6).unwrap());
    assert!(a.iter().all(|v| (v - 3.0).abs() <= 0.5));
    let mean: f64 = a.iter().map(|v| v - 3.0).sum::<f64>() / a.len() as f64;
    assert!(mean.abs() < 0.02);
}

#[test]
fn tape_quantizer_matches_plain() {
    let z = [0.3, -1.7, 2.2];
    for mode in [QuantizerMode::Round, QuantizerMode::AdditiveNoise, QuantizerMode::StraightThrough] {
        let mut tape = Tape::new();
        let v = tape.param(Tensor::new(&[1, 3], z.to_vec()).unwrap());
        let q = quantize_on_tape(&mut tape, v, mode, 11).unwrap();
        assert_eq!(tape.value(q).data(), quantize(&z, mode, 11).unwrap().as_slice());
    }
}

#[test]
fn cdf_limits_and_symmetry() {
    let d = FactorizedDensity::init_symmetric(3, &DensityConfig::default()).unwrap();
    for c in 0..3 {
        assert!(d.cdf(c, -1e4) < 1e-9 && d.cdf(c, 1e4) > 1.0 - 1e-9);
        for x in [0.0, 0.3, 1.7, 12.0] {
            assert!((d.cdf(c, -x) - (1.0 - d.cdf(c, x))).abs() < 1e-12);
        }
    }
}

#[test]
fn initial_density_has_the_configured_spread() {
    let d = FactorizedDensity::init_symmetric(1, &DensityConfig::default()).unwrap();
    // product of the initial slopes is 1 / init_scale, so the logit at x is about x / 10
    let ev = d.evaluator();
    assert!((ev.logit(0, 1.0) - 0.1).abs() < 1e-9);
}

#[test]
fn likelihoods_sum_to_one() {
    let d = density(2, 3);
    for c in 0..2 {
        let ev = d.evaluator();
        let total: f64 = (-2000..=2000).map(|v| ev.likelihood(c, v as f64)).sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }
}

#[test]
fn rate_on_tape_matches_plain_rate() {
    let d = density(4, 8);
    let z = vec![0.0, 1.0, -3.0, 7.0, 2.0, -1.0, 0.0, 40.0];
    let mut tape = Tape::new();
    let vars: Vec<_> = d.named().into_iter().map(|(_, t)| tape.param(t.clone())).collect();
    let mut it = vars.into_iter();
    let bound = d.bind_vars(&mut || Ok(it.next().unwrap())).unwrap();
    let x = tape.constant(Tensor::new(&[2, 4], z.clone()).unwrap());
    let bits = rate_on_tape(&mut tape, &bound, x).unwrap();
    let per_row = tape.value(bits).data();
    let plain = rate_bits(&z, &d);
    assert!((per_row[0] + per_row[1] - plain).abs() < 1e-9 * plain);
    assert!((per_row[0] - rate_bits(&z[..4], &d)).abs() < 1e-9);
}

#[test]
fn tables_track_the_density() {
    let d = density(3, 21);
    let tables = build_cdf_tables(&d, d.tail_mass).unwrap();
    assert_eq!(tables.len(), 3);
    let ev = d.evaluator();
    for (c, t) in tables.iter().enumerate() {
        t.validate().unwrap();
        for v in t.z_min..=t.z_max {
            let p = ev.likelihood(c, v as f64);
            let q = t.probability(t.slot_of(v).unwrap());
            // one reserved count per slot shrinks the share of every symbol slightly
            let slack = (2.0 + p * t.slots() as f64) / FREQ_TOTAL as f64;
            assert!((p - q).abs() <= slack, "{v}: {p} vs {q}");
        }
    }
}

proptest! {
    #[test]
    fn cdf_is_monotone(seed in any::<u64>(), a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let d = density(2, seed);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        for c in 0..2 {
            prop_assert!(d.cdf(c, lo) <= d.cdf(c, hi));
        }
    }

    #[test]
    fn likelihood_is_a_probability(seed in any::<u64>(), v in -1000i32..1000) {
        let d = density(1, seed);
        let p = likelihood(&[v as f64], &d)[0];
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(rate_bits(&[v as f64], &d) >= 0.0);
    }
}
