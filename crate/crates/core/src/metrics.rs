//! Objective quality metrics: point-to-point PSNR and Bjøntegaard rate deltas.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;

use crate::chamfer::{nearest_sq_distances, KdTree};
use crate::geometry::{PointCloud, DEFAULT_EXPANSION};
use crate::{Error, Result};

/// Options for [`d1_psnr`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct D1Config {
    /// Signal peak, normally the expansion factor of the coordinates.
    pub peak: f64,
    /// Multiply the squared peak by 3 (one term per coordinate axis).
    pub three_axis_peak: bool,
    /// Returned when the error is zero and used as an upper clamp.
    pub cap_db: f64,
}

impl Default for D1Config {
    fn default() -> Self {
        Self { peak: DEFAULT_EXPANSION, three_axis_peak: true, cap_db: 999.0 }
    }
}

impl D1Config {
    pub fn with_peak(peak: f64) -> Self {
        Self { peak, ..Self::default() }
    }
}

fn mean_nn_error(from: &PointCloud, to: &PointCloud) -> f64 {
    let tree = KdTree::new(to.points());
    let d = nearest_sq_distances(from, &tree);
    d.iter().sum::<f64>() / d.len() as f64
}

/// Symmetric point-to-point mean squared error: the larger of the two
/// directional mean nearest-neighbour squared distances.
pub fn d1_mse(reference: &PointCloud, test: &PointCloud) -> f64 {
    mean_nn_error(reference, test).max(mean_nn_error(test, reference))
}

/// Point-to-point geometry PSNR in dB.
pub fn d1_psnr(reference: &PointCloud, test: &PointCloud, config: &D1Config) -> Result<f64> {
    if !(config.peak > 0.0 && config.peak.is_finite()) {
        return Err(Error::InvalidArgument(format!("PSNR peak must be positive, got {}", config.peak)));
    }
    let mse = d1_mse(reference, test);
    if mse == 0.0 {
        return Ok(config.cap_db);
    }
    let factor = if config.three_axis_peak { 3.0 } else { 1.0 };
    let psnr = 10.0 * (factor * config.peak * config.peak / mse).log10();
    Ok(psnr.min(config.cap_db))
}

/// One operating point of a codec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RDPoint {
    pub bpp: f64,
    pub psnr_db: f64,
}

/// Rate-distortion curve sorted by increasing rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RDCurve {
    pub label: String,
    points: Vec<RDPoint>,
}

impl RDCurve {
    /// Sorts by rate; rejects duplicate or non-positive rates.
    pub fn new(label: impl Into<String>, mut points: Vec<RDPoint>) -> Result<Self> {
        if points.iter().any(|p| !(p.bpp > 0.0 && p.bpp.is_finite() && p.psnr_db.is_finite())) {
            return Err(Error::InvalidArgument("curve points need positive finite rate and finite PSNR".into()));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| w[0].bpp == w[1].bpp) {
            return Err(Error::InvalidArgument("curve rates must be strictly increasing".into()));
        }
        Ok(Self { label: label.into(), points })
    }

    pub fn points(&self) -> &[RDPoint] {
        &self.points
    }

    /// Number of adjacent pairs where quality drops as rate grows.
    pub fn monotonicity_violations(&self) -> usize {
        self.points.windows(2).filter(|w| w[1].psnr_db < w[0].psnr_db).count()
    }

    fn psnr_range(&self) -> (f64, f64) {
        let lo = self.points.iter().map(|p| p.psnr_db).fold(f64::infinity(), f64::min);
        let hi = self.points.iter().map(|p| p.psnr_db).fold(f64::neg_infinity(), f64::max);
        (lo, hi)
    }
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::InvalidArgument("rate-distortion fit is singular".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Least-squares polynomial of degree `degree` through `(x, y)`.
pub(crate) fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = degree + 1;
    let mut ata = vec![vec![0.0; n]; n];
    let mut aty = vec![0.0; n];
    for (&xi, &yi) in x.iter().zip(y) {
        let pows: Vec<f64> = (0..n).map(|p| xi.powi(p as i32)).collect();
        for r in 0..n {
            aty[r] += pows[r] * yi;
            for c in 0..n {
                ata[r][c] += pows[r] * pows[c];
            }
        }
    }
    solve(ata, aty)
}

fn integral(coeffs: &[f64], lo: f64, hi: f64) -> f64 {
    let anti = |x: f64| coeffs.iter().enumerate().map(|(p, c)| c * x.powi(p as i32 + 1) / (p as f64 + 1.0)).sum::<f64>();
    anti(hi) - anti(lo)
}

/// Average rate difference of `test` relative to `anchor` at equal quality,
/// in percent. Negative means `test` needs fewer bits.
///
/// Each curve needs at least four points. Log-rate is fitted as a cubic in
/// PSNR and the fits are integrated over the shared PSNR interval.
pub fn bd_rate(anchor: &RDCurve, test: &RDCurve) -> Result<f64> {
    for c in [anchor, test] {
        if c.points.len() < 4 {
            return Err(Error::InvalidArgument(format!("curve '{}' needs at least 4 points, has {}", c.label, c.points.len())));
        }
    }
    let (a_lo, a_hi) = anchor.psnr_range();
    let (t_lo, t_hi) = test.psnr_range();
    let lo = a_lo.max(t_lo);
    let hi = a_hi.min(t_hi);
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("PSNR ranges do not overlap ([{a_lo}, {a_hi}] vs [{t_lo}, {t_hi}])")));
    }
    // fit in a centred, scaled coordinate to keep the normal equations well conditioned
    let all_lo = a_lo.min(t_lo);
    let all_hi = a_hi.max(t_hi);
    let centre = 0.5 * (all_lo + all_hi);
    let half = (0.5 * (all_hi - all_lo)).max(1e-12);
    let fit = |c: &RDCurve| {
        let x: Vec<f64> = c.points.iter().map(|p| (p.psnr_db - centre) / half).collect();
        let y: Vec<f64> = c.points.iter().map(|p| p.bpp.log10()).collect();
        polyfit(&x, &y, 3)
    };
    let pa = fit(anchor)?;
    let pt = fit(test)?;
    let (u_lo, u_hi) = ((lo - centre) / half, (hi - centre) / half);
    let avg = (integral(&pt, u_lo, u_hi) - integral(&pa, u_lo, u_hi)) / (u_hi - u_lo);
    Ok((10.0.powf(avg) - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pc(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    fn curve(label: &str, pts: &[(f64, f64)]) -> RDCurve {
        RDCurve::new(label, pts.iter().map(|&(bpp, psnr_db)| RDPoint { bpp, psnr_db }).collect()).unwrap()
    }

    fn noisy(base: &PointCloud, sigma: f64, seed: u64) -> PointCloud {
        use rand::Rng as _;
        let mut rng = crate::rng_from_seed(seed);
        let pts = base.points().iter().map(|p| p.map(|c| c + sigma * rng.gen_range(-1.0..1.0))).collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn psnr_is_symmetric_and_falls_with_noise() {
        let base = crate::geometry::generate_synthetic_shape(
            &crate::geometry::ShapeKind::Torus { major_radius: 1.0, minor_radius: 0.3 },
            1500,
            4,
        )
        .unwrap();
        let cfg = D1Config::with_peak(1.0);
        let mut last = f64::INFINITY;
        for (i, sigma) in [1e-4, 1e-3, 1e-2, 5e-2, 2e-1].into_iter().enumerate() {
            let test = noisy(&base, sigma, i as u64);
            let a = d1_psnr(&base, &test, &cfg).unwrap();
            let b = d1_psnr(&test, &base, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a < last, "sigma {sigma}: {a} dB after {last} dB");
            last = a;
        }
    }

    #[test]
    fn psnr_closed_form() {
        let a = pc(&[[0.0; 3]]);
        let b = pc(&[[1.0, 0.0, 0.0]]);
        let cfg = D1Config::with_peak(1023.0);
        let expected = 10.0 * (3.0 * 1023.0f64 * 1023.0).log10();
        assert!((d1_psnr(&a, &b, &cfg).unwrap() - expected).abs() < 1e-9);
        let plain = D1Config { three_axis_peak: false, ..cfg };
        assert!((d1_psnr(&a, &b, &plain).unwrap() - 20.0 * 1023.0f64.log10()).abs() < 1e-9);
        assert_eq!(d1_psnr(&a, &a, &cfg).unwrap(), 999.0);
        assert!(d1_psnr(&a, &b, &D1Config::with_peak(0.0)).is_err());
    }

    #[test]
    fn mse_takes_worse_direction() {
        let a = pc(&[[0.0; 3], [4.0, 0.0, 0.0]]);
        let b = pc(&[[0.0; 3]]);
        // a->b: (0 + 16)/2 = 8, b->a: 0
        assert_eq!(d1_mse(&a, &b), 8.0);
        assert_eq!(d1_mse(&b, &a), 8.0);
    }

    #[test]
    fn polyfit_recovers_cubic() {
        let x: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| 0.5 - t + 2.0 * t * t - 0.25 * t * t * t).collect();
        let c = polyfit(&x, &y, 3).unwrap();
        for (got, want) in c.iter().zip([0.5, -1.0, 2.0, -0.25]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn bd_rate_identity_and_doubling() {
        let pts = [(0.1, 30.0), (0.2, 34.0), (0.4, 37.5), (0.8, 40.0), (1.6, 42.0)];
        let a = curve("a", &pts);
        assert!(bd_rate(&a, &a).unwrap().abs() < 1e-9);
        let doubled: Vec<(f64, f64)> = pts.iter().map(|&(r, q)| (2.0 * r, q)).collect();
        let b = curve("b", &doubled);
        assert!((bd_rate(&a, &b).unwrap() - 100.0).abs() < 1e-6);
        assert!((bd_rate(&b, &a).unwrap() + 50.0).abs() < 1e-6);
    }

    #[test]
    fn bd_rate_rejects_bad_curves() {
        let a = curve("a", &[(0.1, 30.0), (0.2, 31.0), (0.3, 32.0)]);
        assert!(bd_rate(&a, &a).is_err());
        let lo = curve("lo", &[(0.1, 10.0), (0.2, 11.0), (0.3, 12.0), (0.4, 13.0)]);
        let hi = curve("hi", &[(0.1, 20.0), (0.2, 21.0), (0.3, 22.0), (0.4, 23.0)]);
        assert!(bd_rate(&lo, &hi).is_err());
        assert!(RDCurve::new("d", vec![RDPoint { bpp: 0.1, psnr_db: 1.0 }, RDPoint { bpp: 0.1, psnr_db: 2.0 }]).is_err());
    }

    #[test]
    fn monotonicity_is_reported() {
        let c = curve("c", &[(0.1, 30.0), (0.2, 29.0), (0.3, 32.0)]);
        assert_eq!(c.monotonicity_violations(), 1);
    }
}
