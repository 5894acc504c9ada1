use super::*;
use crate::chamfer::chamfer_distance;
use crate::PointCloud;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn linear_forward_and_backward_by_hand() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[1, 2], &[1.0, 2.0]));
    let w = tape.param(t(&[2, 2], &[1.0, -1.0, 0.5, 2.0]));
    let b = tape.param(t(&[2], &[0.25, 0.0]));
    let y = tape.linear(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[2.25, 3.0]);
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0, 2.5]);
    assert_eq!(g.get(w).unwrap(), &[1.0, 1.0, 2.0, 2.0]);
    assert_eq!(g.get(b).unwrap(), &[1.0, 1.0]);
}

#[test]
fn shape_errors_are_reported() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2, 3], &[0.0; 6]));
    let w = tape.param(t(&[2, 2], &[0.0; 4]));
    assert!(matches!(tape.linear(x, w, None), Err(Error::ShapeMismatch { op: "linear", .. })));
    let v = tape.param(t(&[4], &[0.0; 4]));
    assert!(tape.add(x, v).is_err());
    assert!(tape.mul_row(x, v).is_err());
    assert!(tape.segment_max(x, 4).is_err());
    assert!(tape.reshape(x, &[4, 2]).is_err());
    assert!(Tensor::new(&[2, 2], alloc::vec![0.0; 3]).is_err());
}

#[test]
fn relu_and_max_route_gradients() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[4, 2], &[1.0, -1.0, 3.0, -2.0, 3.0, 5.0, -4.0, 0.5]));
    let r = tape.relu(x);
    let m = tape.segment_max(r, 1).unwrap();
    assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
    let s = tape.sum(m);
    let g = tape.backward(s).unwrap();
    // ties go to the first maximal row
    assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn segment_max_is_per_segment() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[4, 1], &[1.0, 2.0, -3.0, -1.0]));
    let m = tape.segment_max(x, 2).unwrap();
    assert_eq!(tape.value(m).data(), &[2.0, -1.0]);
    let p = tape.max_pool_points(x).unwrap();
    assert_eq!(tape.value(p).data(), &[2.0]);
}

#[test]
fn batch_norm_statistics() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[4, 1], &[1.0, 2.0, 3.0, 6.0]));
    let g = tape.param(t(&[1], &[2.0]));
    let b = tape.param(t(&[1], &[1.0]));
    let y = tape.batch_norm(x, g, b, NormMode::Train, (&[0.0], &[1.0]), 0.0).unwrap();
    let out = tape.value(y).data();
    let mean: f64 = out.iter().sum::<f64>() / 4.0;
    let var: f64 = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
    assert!((mean - 1.0).abs() < 1e-12 && (var - 4.0).abs() < 1e-12);
    let (v, stats) = &tape.batch_stats()[0];
    assert_eq!(*v, y);
    assert_eq!(stats.mean, [3.0]);
    assert_eq!(stats.var, [3.5]);

    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let g = tape.param(t(&[2], &[1.0, 1.0]));
    let b = tape.param(t(&[2], &[0.0, 0.0]));
    assert!(tape.batch_norm(x, g, b, NormMode::Train, (&[0.0; 2], &[1.0; 2]), 1e-5).is_err());
    let y = tape.batch_norm(x, g, b, NormMode::Infer, (&[1.0, 0.0], &[4.0, 1.0]), 0.0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    assert!(tape.batch_stats().is_empty());
}

#[test]
fn straight_through_passes_gradient_unchanged() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[4], &[0.4, 0.5, -0.5, 2.7]));
    let r = tape.round_straight_through(x);
    assert_eq!(tape.value(r).data(), &[0.0, 1.0, -1.0, 3.0]);
    let w = tape.constant(t(&[4], &[1.0, 2.0, 3.0, 4.0]));
    let p = tape.mul(r, w).unwrap();
    let s = tape.sum(p);
    assert_eq!(tape.backward(s).unwrap().get(x).unwrap(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn constants_get_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(t(&[2], &[1.0, 2.0]));
    let p = tape.param(t(&[2], &[3.0, 4.0]));
    let m = tape.mul(c, p).unwrap();
    let s = tape.sum(m);
    let g = tape.backward(s).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get_or_zeros(c, 2), [0.0, 0.0]);
    assert_eq!(g.get(p).unwrap(), &[1.0, 2.0]);
    assert!(tape.backward(m).is_err());
}

#[test]
fn bin_probability_is_accurate_in_the_tails() {
    let mut tape = Tape::new();
    let lo = tape.constant(t(&[2], &[40.0, -41.0]));
    let hi = tape.constant(t(&[2], &[41.0, -40.0]));
    let p = tape.bin_probability(lo, hi).unwrap();
    let expected = (-40.0f64).exp() - (-41.0f64).exp();
    for &v in tape.value(p).data() {
        assert!((v - expected).abs() < 1e-12 * expected, "{v} vs {expected}");
    }
}

#[test]
fn neg_log2_floor_blocks_gradient() {
    let mut tape = Tape::new();
    let p = tape.param(t(&[3], &[0.5, 0.25, 1e-20]));
    let b = tape.neg_log2(p, 1e-12);
    assert_eq!(tape.value(b).data()[..2], [1.0, 2.0]);
    assert!((tape.value(b).data()[2] - 12.0 * 10f64.log2()).abs() < 1e-9);
    let s = tape.sum(b);
    let g = tape.backward(s).unwrap();
    let d = g.get(p).unwrap();
    assert!((d[0] + 1.0 / (0.5 * core::f64::consts::LN_2)).abs() < 1e-12);
    assert_eq!(d[2], 0.0);
}

#[test]
fn tape_chamfer_matches_reference() {
    let a = [0.0, 0.0, 0.0, 2.0, 0.0, 0.0];
    let b = [1.0, 0.0, 0.0];
    let mut tape = Tape::new();
    let va = tape.param(t(&[1, 6], &a));
    let vb = tape.param(t(&[1, 3], &b));
    let c = tape.chamfer(va, vb).unwrap();
    assert_eq!(tape.value(c).data(), &[3.0]);
    let reference = chamfer_distance(&PointCloud::from_flat(&a).unwrap(), &PointCloud::from_flat(&b).unwrap());
    assert_eq!(reference, 3.0);
    let g = tape.backward(c).unwrap();
    // each a-point pulls toward b; b is pulled toward a[0] (its nearest, first of a tie)
    assert_eq!(g.get(va).unwrap(), &[-4.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
    assert_eq!(g.get(vb).unwrap(), &[2.0 - 2.0 + 2.0, 0.0, 0.0]);
}

#[test]
fn channel_linear_by_hand() {
    let mut tape = Tape::new();
    // two channels, din = 1, dout = 2
    let x = tape.constant(t(&[1, 2], &[2.0, 3.0]));
    let w = tape.param(t(&[2, 2, 1], &[1.0, -1.0, 0.5, 2.0]));
    let b = tape.param(t(&[4], &[0.0, 1.0, 0.0, 0.0]));
    let y = tape.channel_linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, -1.0, 1.5, 6.0]);
}
