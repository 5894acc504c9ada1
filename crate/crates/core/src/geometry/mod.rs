//! Point clouds, normalization into the unit sphere, and mesh-based synthesis.

mod mesh;
mod shapes;

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;

use crate::{Error, Result};

pub use mesh::{sample_mesh_uniform, TriangleMesh};
pub use shapes::{generate_synthetic_shape, ShapeKind, ShapeParams};

/// A 3D coordinate `(x, y, z)`.
pub type Point3 = [f64; 3];

#[inline]
pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Squared Euclidean distance.
#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// An ordered, non-empty list of finite 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from row-major `[x0, y0, z0, x1, ...]` coordinates.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if coords.len() % 3 != 0 {
            return Err(Error::InvalidArgument(format!(
                "flat coordinate length {} is not a multiple of 3",
                coords.len()
            )));
        }
        Self::new(coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self.points.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("index {i} out of range for {} points", self.count()))
            })?;
            out.push(*p);
        }
        Self::new(out)
    }

    pub fn map_points(&self, f: impl Fn(Point3) -> Point3) -> Result<Self> {
        Self::new(self.points.iter().map(|&p| f(p)).collect())
    }
}

/// Maps source coordinates into the unit sphere and back.
///
/// `normalize(p) = (p - centroid) / scale` and
/// `denormalize(q) = expansion_factor * (q * scale + centroid)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub centroid: Point3,
    pub scale: f64,
    pub expansion_factor: f64,
}

impl NormalizationTransform {
    pub fn new(centroid: Point3, scale: f64, expansion_factor: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        if !(expansion_factor > 0.0 && expansion_factor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "expansion factor must be positive, got {expansion_factor}"
            )));
        }
        if !centroid.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("centroid".into()));
        }
        Ok(Self { centroid, scale, expansion_factor })
    }

    pub fn identity() -> Self {
        Self { centroid: [0.0; 3], scale: 1.0, expansion_factor: 1.0 }
    }

    pub fn with_expansion(self, expansion_factor: f64) -> Result<Self> {
        Self::new(self.centroid, self.scale, expansion_factor)
    }

    pub fn normalize_point(&self, p: Point3) -> Point3 {
        let d = sub(p, self.centroid);
        [d[0] / self.scale, d[1] / self.scale, d[2] / self.scale]
    }

    pub fn denormalize_point(&self, q: Point3) -> Point3 {
        let e = self.expansion_factor;
        [
            e * (q[0] * self.scale + self.centroid[0]),
            e * (q[1] * self.scale + self.centroid[1]),
            e * (q[2] * self.scale + self.centroid[2]),
        ]
    }

    pub fn normalize(&self, pc: &PointCloud) -> Result<PointCloud> {
        pc.map_points(|p| self.normalize_point(p))
    }

    pub fn denormalize(&self, pc: &PointCloud) -> Result<PointCloud> {
        pc.map_points(|q| self.denormalize_point(q))
    }
}

/// Centers a cloud at the origin and scales it so the farthest point has norm 1.
///
/// If every point coincides the transform is a pure translation (scale 1).
pub fn normalize_unit_sphere(pc: &PointCloud) -> (PointCloud, NormalizationTransform) {
    let first = pc.points()[0];
    let (centroid, scale) = if pc.points().iter().all(|&p| p == first) {
        (first, 1.0)
    } else {
        let c = pc.centroid();
        let r = pc.points().iter().map(|&p| dist2(p, c)).fold(0.0, f64::max).sqrt();
        (c, if r > 0.0 { r } else { 1.0 })
    };
    let t = NormalizationTransform { centroid, scale, expansion_factor: 1.0 };
    let out = t.normalize(pc).expect("normalizing finite points stays finite");
    (out, t)
}

/// Multiplies every coordinate by `factor`.
pub fn apply_expansion(pc: &PointCloud, factor: f64) -> Result<PointCloud> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "expansion factor must be positive, got {factor}"
        )));
    }
    pc.map_points(|p| [p[0] * factor, p[1] * factor, p[2] * factor])
}

/// Expansion applied to normalized clouds before measuring distortion, so
/// coordinates span a 10-bit range.
pub const DEFAULT_EXPANSION: f64 = 1023.0;

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng as _;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = crate::rng_from_seed(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-5.0..7.0),
                        rng.gen_range(-3.0..1.0),
                        rng.gen_range(10.0..12.0),
                    ]
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert_eq!(PointCloud::new(vec![]), Err(Error::EmptyCloud));
        assert!(matches!(
            PointCloud::new(vec![[0.0, f64::NAN, 0.0]]),
            Err(Error::NonFinite(_))
        ));
        assert!(PointCloud::new(vec![[f64::INFINITY, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn symmetric_pair_normalizes_to_unit_points() {
        let pc = PointCloud::new(vec![[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]]).unwrap();
        let (out, t) = normalize_unit_sphere(&pc);
        assert_eq!(out.points(), &[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        assert_eq!(t.centroid, [0.0, 0.0, 0.0]);
        assert_eq!(t.scale, 2.0);
    }

    #[test]
    fn single_point_is_degenerate() {
        let pc = PointCloud::new(vec![[5.0, 5.0, 5.0]]).unwrap();
        let (out, t) = normalize_unit_sphere(&pc);
        assert_eq!(out.points(), &[[0.0, 0.0, 0.0]]);
        assert_eq!(t.scale, 1.0);
        assert_eq!(t.centroid, [5.0, 5.0, 5.0]);
    }

    #[test]
    fn coincident_points_use_the_point_as_centroid() {
        let p = [0.1, 0.7, -0.3];
        let pc = PointCloud::new(vec![p; 3]).unwrap();
        let (out, t) = normalize_unit_sphere(&pc);
        assert_eq!(t.centroid, p);
        assert_eq!(t.scale, 1.0);
        assert!(out.points().iter().all(|q| *q == [0.0; 3]));
    }

    #[test]
    fn random_clouds_reach_unit_max_norm() {
        for seed in 0..50 {
            let pc = random_cloud(2048, seed);
            let (out, t) = normalize_unit_sphere(&pc);
            let max = out.points().iter().map(|&p| dot(p, p).sqrt()).fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-9, "seed {seed}: max norm {max}");
            let c = out.centroid();
            assert!(c.iter().all(|v| v.abs() < 1e-9), "seed {seed}: centroid {c:?}");
            let back = t.denormalize(&out).unwrap();
            for (a, b) in pc.points().iter().zip(back.points()) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() <= 1e-9 * a[k].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn expansion() {
        let pc = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(apply_expansion(&pc, 1.0).unwrap(), pc);
        assert_eq!(apply_expansion(&pc, 1023.0).unwrap().points(), &[[1023.0, 0.0, 0.0]]);
        assert!(apply_expansion(&pc, 0.0).is_err());
        assert!(apply_expansion(&pc, -2.0).is_err());

        let pc = random_cloud(500, 9);
        let f = 37.25;
        let back = apply_expansion(&pc, f).unwrap().map_points(|p| [p[0] / f, p[1] / f, p[2] / f]);
        for (a, b) in pc.points().iter().zip(back.unwrap().points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-9 * a[k].abs());
            }
        }
    }

    #[test]
    fn transform_validation() {
        assert!(NormalizationTransform::new([0.0; 3], 0.0, 1.0).is_err());
        assert!(NormalizationTransform::new([0.0; 3], 1.0, -1.0).is_err());
        assert!(NormalizationTransform::new([f64::NAN, 0.0, 0.0], 1.0, 1.0).is_err());
    }
}
