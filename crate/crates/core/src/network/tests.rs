use super::*;
use crate::autodiff::NormMode;
use rand::seq::SliceRandom;

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = crate::rng_from_seed(seed);
    PointCloud::new((0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()).unwrap()
}

fn small() -> ArchitectureConfig {
    let mut c = ArchitectureConfig::new(32, 8);
    c.encoder_widths = alloc::vec![16, 16, 8];
    c.decoder_widths = alloc::vec![24, 96];
    c
}

#[test]
fn default_constants() {
    assert_eq!(TIERS, [(2048, 512), (1024, 256), (512, 128), (256, 64), (128, 32)]);
    for (n, k) in TIERS {
        let c = ArchitectureConfig::for_tier(n).unwrap();
        assert_eq!(c.encoder_widths, [64, 128, 128, 256, k]);
        assert_eq!(c.decoder_widths, [256, 256, 3 * n]);
        assert_eq!((c.latent_dim, c.output_points), (k, n));
        assert!(c.activation_on_last_encoder_layer);
        assert_eq!(c.layer_order, LayerOrder::LinearReluNorm);
    }
    assert!(ArchitectureConfig::for_tier(300).is_err());
    assert_eq!((BN_EPS, BN_MOMENTUM), (1e-5, 0.9));
}

#[test]
fn validation_rejects_inconsistent_widths() {
    let mut c = small();
    c.encoder_widths = alloc::vec![16, 9];
    assert!(c.validate().is_err());
    let mut c = small();
    c.decoder_widths = alloc::vec![24, 95];
    assert!(c.validate().is_err());
    let mut c = small();
    c.encoder_widths = alloc::vec![0, 8];
    assert!(ModelParameters::init(&c, 0).is_err());
}

#[test]
fn initialization() {
    let p = ModelParameters::init(&ArchitectureConfig::for_tier(128).unwrap(), 3).unwrap();
    let mut fan_in = 3;
    for l in &p.encoder {
        let bound = (6.0 / fan_in as f64).sqrt();
        assert!(l.weight.data().iter().all(|w| w.abs() <= bound));
        let var = l.weight.data().iter().map(|w| w * w).sum::<f64>() / l.weight.len() as f64;
        // uniform on [-b, b] has variance b^2 / 3 = 2 / fan_in
        assert!((var * fan_in as f64 / 2.0 - 1.0).abs() < 0.25, "{var}");
        assert!(l.bias.data().iter().all(|&b| b == 0.0));
        let n = l.norm.as_ref().unwrap();
        assert!(n.gamma.data().iter().all(|&g| g == 1.0) && n.beta.data().iter().all(|&b| b == 0.0));
        fan_in = l.weight.shape()[1];
    }
    assert_eq!(p, ModelParameters::init(&p.config, 3).unwrap());
    assert_ne!(p, ModelParameters::init(&p.config, 4).unwrap());
}

#[test]
fn shapes_and_names() {
    let p = ModelParameters::init(&small(), 0).unwrap();
    let z = encode(&cloud(32, 1), &p, NormMode::Infer).unwrap();
    assert_eq!(z.len(), 8);
    assert!(z.iter().all(|v| v.is_finite()));
    assert_eq!(decode(&z, &p).unwrap().count(), 32);
    assert!(decode(&z[..7], &p).is_err());
    assert!(encode(&cloud(31, 1), &p, NormMode::Infer).is_err());
    let names: Vec<String> = p.tensors().into_iter().map(|t| t.name).collect();
    assert_eq!(names[0], "encoder.0.weight");
    assert!(names.contains(&"encoder.2.running_var".into()));
    assert!(names.contains(&"decoder.1.bias".into()));
    assert!(names.iter().any(|n| n.starts_with("density.")));
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
}

#[test]
fn last_layer_flag_removes_its_norm() {
    let mut c = small();
    c.activation_on_last_encoder_layer = false;
    let p = ModelParameters::init(&c, 0).unwrap();
    assert!(p.encoder.last().unwrap().norm.is_none());
    assert!(p.encoder[0].norm.is_some());
    let z = encode(&cloud(32, 2), &p, NormMode::Infer).unwrap();
    // without the final ReLU the latent can go negative
    assert_eq!(z.len(), 8);
    let mut c2 = small();
    c2.layer_order = LayerOrder::LinearNormRelu;
    let q = ModelParameters::init(&c2, 0).unwrap();
    let zq = encode(&cloud(32, 2), &q, NormMode::Infer).unwrap();
    assert!(zq.iter().all(|&v| v >= 0.0));
}

#[test]
fn encoding_is_permutation_invariant() {
    let p = ModelParameters::init(&small(), 5).unwrap();
    let pc = cloud(32, 6);
    let z = encode(&pc, &p, NormMode::Infer).unwrap();
    let mut rng = crate::rng_from_seed(0);
    for _ in 0..20 {
        let mut idx: Vec<usize> = (0..32).collect();
        idx.shuffle(&mut rng);
        assert_eq!(encode(&pc.select(&idx).unwrap(), &p, NormMode::Infer).unwrap(), z);
    }
}

#[test]
fn batched_inference_equals_single() {
    let p = ModelParameters::init(&small(), 5).unwrap();
    let (a, b) = (cloud(32, 7), cloud(32, 8));
    let mut tape = Tape::new();
    let x = tape.constant(stack_clouds(&[&a, &b], 32).unwrap());
    let mut bound = p.bind(&mut tape);
    let z = encode_on_tape(&mut tape, &p, &mut bound, x, 2, NormMode::Infer).unwrap();
    let both = tape.value(z).data().to_vec();
    assert_eq!(both[..8], encode(&a, &p, NormMode::Infer).unwrap()[..]);
    assert_eq!(both[8..], encode(&b, &p, NormMode::Infer).unwrap()[..]);
}

#[test]
fn running_statistics_follow_the_momentum_rule() {
    let mut p = ModelParameters::init(&small(), 5).unwrap();
    let a = cloud(32, 9);
    let mut tape = Tape::new();
    let x = tape.constant(stack_clouds(&[&a], 32).unwrap());
    let mut bound = p.bind(&mut tape);
    encode_on_tape(&mut tape, &p, &mut bound, x, 1, NormMode::Train).unwrap();
    let stats = tape.batch_stats()[0].1.clone();
    p.update_running_stats(&tape, &bound);
    let n = p.encoder[0].norm.as_ref().unwrap();
    for j in 0..16 {
        assert!((n.running_mean.data()[j] - 0.1 * stats.mean[j]).abs() < 1e-15);
        assert!((n.running_var.data()[j] - (0.9 + 0.1 * stats.var[j])).abs() < 1e-15);
    }
}

#[test]
fn bind_vars_checks_the_count() {
    let p = ModelParameters::init(&small(), 0).unwrap();
    let mut tape = Tape::new();
    let vars: Vec<Var> = p.trainable().into_iter().map(|t| tape.param(t.clone())).collect();
    assert!(p.bind_vars(&vars).is_ok());
    assert!(p.bind_vars(&vars[1..]).is_err());
    let mut more = vars.clone();
    more.push(vars[0]);
    assert!(p.bind_vars(&more).is_err());
}
