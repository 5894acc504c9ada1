//! Tessellated analytic shapes used as a stand-in training corpus.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;
use rand::Rng as _;

use super::{sample_mesh_uniform, Point3, PointCloud, TriangleMesh};
use crate::{Error, Result};

const SPHERE_SEGMENTS: usize = 64;
const SPHERE_RINGS: usize = 32;
const TORUS_MAJOR_SEGMENTS: usize = 72;
const TORUS_MINOR_SEGMENTS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeKind {
    Sphere { radius: f64 },
    /// Axis-aligned box centered at the origin with the given side lengths.
    Box { extent: Point3 },
    /// Torus around the z axis.
    Torus { major_radius: f64, minor_radius: f64 },
    /// Union of shapes, each translated by its offset.
    Composite { parts: Vec<(ShapeKind, Point3)> },
}

/// Parameters of a single shape instance.
pub type ShapeParams = ShapeKind;

impl ShapeKind {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} must be positive, got {v}")))
            }
        };
        match self {
            ShapeKind::Sphere { radius } => positive(*radius, "radius"),
            ShapeKind::Box { extent } => extent.iter().try_for_each(|&e| positive(e, "box extent")),
            ShapeKind::Torus { major_radius, minor_radius } => {
                positive(*major_radius, "major radius")?;
                positive(*minor_radius, "minor radius")?;
                if minor_radius >= major_radius {
                    return Err(Error::InvalidArgument(
                        "torus minor radius must be smaller than the major radius".into(),
                    ));
                }
                Ok(())
            }
            ShapeKind::Composite { parts } => {
                if parts.is_empty() {
                    return Err(Error::InvalidArgument("composite shape has no parts".into()));
                }
                for (part, offset) in parts {
                    part.validate()?;
                    if !offset.iter().all(|c| c.is_finite()) {
                        return Err(Error::NonFinite("composite offset".into()));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn tessellate(&self) -> Result<TriangleMesh> {
        self.validate()?;
        Ok(match self {
            ShapeKind::Sphere { radius } => uv_sphere(*radius),
            ShapeKind::Box { extent } => cuboid(*extent),
            ShapeKind::Torus { major_radius, minor_radius } => torus(*major_radius, *minor_radius),
            ShapeKind::Composite { parts } => {
                let mut mesh = TriangleMesh::default();
                for (part, offset) in parts {
                    mesh.append(&part.tessellate()?, *offset);
                }
                mesh
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Sphere { .. } => "sphere",
            ShapeKind::Box { .. } => "box",
            ShapeKind::Torus { .. } => "torus",
            ShapeKind::Composite { .. } => "composite",
        }
    }

    /// A shape of the named family with randomized proportions.
    ///
    /// `family` is one of `sphere`, `box`, `torus`, `composite` or `mixed`
    /// (a random pick among the other four).
    pub fn random(family: &str, seed: u64) -> Result<Self> {
        let mut rng = crate::rng_from_seed(seed);
        let family = match family {
            "mixed" => ["sphere", "box", "torus", "composite"][rng.gen_range(0..4)],
            other => other,
        };
        Ok(match family {
            "sphere" => ShapeKind::Sphere { radius: rng.gen_range(0.5..1.5) },
            "box" => ShapeKind::Box { extent: random_extent(&mut rng) },
            "torus" => random_torus(&mut rng),
            "composite" => {
                // a slab with a post and a knob: loosely furniture-like
                let top = random_extent(&mut rng);
                let top = [top[0], top[1], top[2] * 0.3];
                let post_h = rng.gen_range(0.4..1.0);
                let post = [0.15 * top[0], 0.15 * top[1], post_h];
                let knob = rng.gen_range(0.1..0.3);
                let mut parts = Vec::new();
                parts.push((ShapeKind::Box { extent: top }, [0.0, 0.0, 0.0]));
                parts.push((ShapeKind::Box { extent: post }, [0.0, 0.0, -0.5 * (top[2] + post_h)]));
                if rng.gen_bool(0.5) {
                    parts.push((ShapeKind::Sphere { radius: knob }, [0.0, 0.0, 0.5 * top[2] + knob]));
                } else {
                    parts.push((random_torus(&mut rng), [0.0, 0.0, -0.5 * top[2] - post_h]));
                }
                ShapeKind::Composite { parts }
            }
            other => {
                return Err(Error::InvalidArgument(format!("unknown shape family `{other}`")));
            }
        })
    }
}

fn random_extent(rng: &mut crate::Rng) -> Point3 {
    [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)]
}

fn random_torus(rng: &mut crate::Rng) -> ShapeKind {
    let major_radius = rng.gen_range(0.5..1.0);
    ShapeKind::Torus { major_radius, minor_radius: major_radius * rng.gen_range(0.15..0.5) }
}

/// Samples `n` points on the surface of `kind`.
pub fn generate_synthetic_shape(kind: &ShapeKind, n: usize, seed: u64) -> Result<PointCloud> {
    sample_mesh_uniform(&kind.tessellate()?, n, seed)
}

fn uv_sphere(r: f64) -> TriangleMesh {
    let mut vertices = Vec::new();
    vertices.push([0.0, 0.0, r]);
    for ring in 1..SPHERE_RINGS {
        let theta = PI * ring as f64 / SPHERE_RINGS as f64;
        for seg in 0..SPHERE_SEGMENTS {
            let phi = 2.0 * PI * seg as f64 / SPHERE_SEGMENTS as f64;
            vertices.push([r * theta.sin() * phi.cos(), r * theta.sin() * phi.sin(), r * theta.cos()]);
        }
    }
    vertices.push([0.0, 0.0, -r]);
    let south = vertices.len() - 1;
    let at = |ring: usize, seg: usize| 1 + (ring - 1) * SPHERE_SEGMENTS + seg % SPHERE_SEGMENTS;

    let mut triangles = Vec::new();
    for seg in 0..SPHERE_SEGMENTS {
        triangles.push([0, at(1, seg), at(1, seg + 1)]);
        triangles.push([south, at(SPHERE_RINGS - 1, seg + 1), at(SPHERE_RINGS - 1, seg)]);
    }
    for ring in 1..SPHERE_RINGS - 1 {
        for seg in 0..SPHERE_SEGMENTS {
            triangles.push([at(ring, seg), at(ring + 1, seg), at(ring + 1, seg + 1)]);
            triangles.push([at(ring, seg), at(ring + 1, seg + 1), at(ring, seg + 1)]);
        }
    }
    TriangleMesh { vertices, triangles }
}

fn cuboid(extent: Point3) -> TriangleMesh {
    let h = [extent[0] / 2.0, extent[1] / 2.0, extent[2] / 2.0];
    let vertices = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -h[0] } else { h[0] },
                if i & 2 == 0 { -h[1] } else { h[1] },
                if i & 4 == 0 { -h[2] } else { h[2] },
            ]
        })
        .collect();
    let quads = [[0, 1, 3, 2], [4, 6, 7, 5], [0, 4, 5, 1], [2, 3, 7, 6], [0, 2, 6, 4], [1, 5, 7, 3]];
    let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriangleMesh { vertices, triangles }
}

fn torus(major: f64, minor: f64) -> TriangleMesh {
    let mut vertices = Vec::new();
    for i in 0..TORUS_MAJOR_SEGMENTS {
        let u = 2.0 * PI * i as f64 / TORUS_MAJOR_SEGMENTS as f64;
        for j in 0..TORUS_MINOR_SEGMENTS {
            let v = 2.0 * PI * j as f64 / TORUS_MINOR_SEGMENTS as f64;
            let ring = major + minor * v.cos();
            vertices.push([ring * u.cos(), ring * u.sin(), minor * v.sin()]);
        }
    }
    let at = |i: usize, j: usize| {
        (i % TORUS_MAJOR_SEGMENTS) * TORUS_MINOR_SEGMENTS + j % TORUS_MINOR_SEGMENTS
    };
    let mut triangles = Vec::new();
    for i in 0..TORUS_MAJOR_SEGMENTS {
        for j in 0..TORUS_MINOR_SEGMENTS {
            triangles.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            triangles.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    TriangleMesh { vertices, triangles }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dot;
    use alloc::vec;

    #[test]
    fn sphere_points_are_near_the_surface() {
        let pc = generate_synthetic_shape(&ShapeKind::Sphere { radius: 1.0 }, 2048, 1).unwrap();
        assert_eq!(pc.count(), 2048);
        for p in pc.points() {
            let r = dot(*p, *p).sqrt();
            assert!((0.99..=1.0 + 1e-12).contains(&r), "norm {r}");
        }
    }

    #[test]
    fn box_points_are_contained() {
        let pc = generate_synthetic_shape(&ShapeKind::Box { extent: [1.0; 3] }, 4000, 2).unwrap();
        for p in pc.points() {
            assert!(p.iter().all(|c| (-0.5 - 1e-12..=0.5 + 1e-12).contains(c)));
            // on the surface: at least one coordinate at a face
            assert!(p.iter().any(|c| (c.abs() - 0.5).abs() < 1e-9));
        }
    }

    #[test]
    fn torus_points_are_near_the_tube() {
        let pc = generate_synthetic_shape(
            &ShapeKind::Torus { major_radius: 1.0, minor_radius: 0.25 },
            3000,
            3,
        )
        .unwrap();
        for p in pc.points() {
            let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0;
            let d = (ring * ring + p[2] * p[2]).sqrt();
            assert!((d - 0.25).abs() < 0.01, "tube distance {d}");
        }
    }

    #[test]
    fn deterministic_and_validated() {
        for family in ["sphere", "box", "torus", "composite", "mixed"] {
            let a = ShapeKind::random(family, 4).unwrap();
            assert_eq!(a, ShapeKind::random(family, 4).unwrap());
            let pa = generate_synthetic_shape(&a, 300, 10).unwrap();
            assert_eq!(pa, generate_synthetic_shape(&a, 300, 10).unwrap());
        }
        assert!(ShapeKind::random("teapot", 0).is_err());
        assert!(generate_synthetic_shape(&ShapeKind::Sphere { radius: -1.0 }, 10, 0).is_err());
        assert!(generate_synthetic_shape(&ShapeKind::Box { extent: [1.0, 0.0, 1.0] }, 10, 0).is_err());
        assert!(ShapeKind::Torus { major_radius: 0.2, minor_radius: 0.5 }.validate().is_err());
        assert!(ShapeKind::Composite { parts: vec![] }.validate().is_err());
    }
}
