use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;
use rand::Rng as _;

use super::{cross, dot, sub, Point3, PointCloud};
use crate::{Error, Result};

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some((t, tri)) =
            triangles.iter().enumerate().find(|(_, tri)| tri.iter().any(|&i| i >= vertices.len()))
        {
            return Err(Error::InvalidArgument(format!(
                "triangle {t} references vertex {:?} but the mesh has {} vertices",
                tri,
                vertices.len()
            )));
        }
        Ok(Self { vertices, triangles })
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        let n = cross(sub(b, a), sub(c, a));
        0.5 * dot(n, n).sqrt()
    }

    fn corners(&self, t: usize) -> [Point3; 3] {
        let [i, j, k] = self.triangles[t];
        [self.vertices[i], self.vertices[j], self.vertices[k]]
    }

    /// Appends `other` with every vertex shifted by `offset`.
    pub fn append(&mut self, other: &TriangleMesh, offset: Point3) {
        let base = self.vertices.len();
        self.vertices.extend(
            other.vertices.iter().map(|v| [v[0] + offset[0], v[1] + offset[1], v[2] + offset[2]]),
        );
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }
}

/// Draws `n` points uniformly over the mesh surface.
///
/// Triangles are picked with probability proportional to area; zero-area
/// triangles are never picked.
pub fn sample_mesh_uniform(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("mesh has no triangle with nonzero area".into()));
    }
    let mut rng = crate::rng_from_seed(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.gen::<f64>() * total;
        // first triangle whose cumulative area exceeds the target; skips zero-area entries
        let t = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
        let [a, b, c] = mesh.corners(t);
        let r1 = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        points.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
    }
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn unit_right_triangle() -> TriangleMesh {
        TriangleMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]])
            .unwrap()
    }

    #[test]
    fn points_lie_in_the_triangle() {
        let pc = sample_mesh_uniform(&unit_right_triangle(), 1000, 3).unwrap();
        assert_eq!(pc.count(), 1000);
        for p in pc.points() {
            assert!(p[2].abs() < 1e-9);
            assert!(p[0] >= -1e-12 && p[1] >= -1e-12 && p[0] + p[1] <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let m = unit_right_triangle();
        assert_eq!(sample_mesh_uniform(&m, 50, 7), sample_mesh_uniform(&m, 50, 7));
        assert_ne!(sample_mesh_uniform(&m, 50, 7), sample_mesh_uniform(&m, 50, 8));
    }

    #[test]
    fn selection_is_proportional_to_area() {
        // two disjoint triangles with areas 1.5 and 0.5
        let mesh = TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [3.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [10.0, 0.0, 0.0],
                [11.0, 0.0, 0.0],
                [10.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let pc = sample_mesh_uniform(&mesh, 100_000, 11).unwrap();
        let first = pc.points().iter().filter(|p| p[0] < 5.0).count() as f64;
        let second = pc.count() as f64 - first;
        let ratio = first / second;
        assert!((ratio - 3.0).abs() / 3.0 < 0.02, "ratio {ratio}");
    }

    #[test]
    fn chi_squared_occupancy() {
        // four unit-spaced triangles with areas 1, 2, 3, 4
        let mut mesh = TriangleMesh::default();
        for (i, w) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            let tri = TriangleMesh::new(
                vec![[0.0, 0.0, 0.0], [2.0 * w, 0.0, 0.0], [0.0, 1.0, 0.0]],
                vec![[0, 1, 2]],
            )
            .unwrap();
            mesh.append(&tri, [0.0, 0.0, 10.0 * i as f64]);
        }
        let n = 100_000;
        let pc = sample_mesh_uniform(&mesh, n, 5).unwrap();
        let mut counts = [0usize; 4];
        for p in pc.points() {
            counts[(p[2] / 10.0).round() as usize] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip([0.1, 0.2, 0.3, 0.4])
            .map(|(&c, share)| {
                let e = share * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // 99th percentile of chi-squared with 3 degrees of freedom
        assert!(chi2 < 11.345, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn degenerate_meshes_are_rejected() {
        let flat = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(sample_mesh_uniform(&flat, 10, 0).is_err());
        assert!(sample_mesh_uniform(&unit_right_triangle(), 0, 0).is_err());
        assert!(TriangleMesh::new(vec![[0.0; 3]], vec![[0, 0, 1]]).is_err());
    }

    #[test]
    fn zero_area_triangles_are_never_sampled() {
        let mut mesh = unit_right_triangle();
        mesh.vertices.extend([[5.0, 5.0, 5.0], [6.0, 6.0, 6.0]]);
        mesh.triangles.insert(0, [3, 4, 3]);
        mesh.triangles.push([3, 3, 4]);
        let pc = sample_mesh_uniform(&mesh, 2000, 1).unwrap();
        assert!(pc.points().iter().all(|p| p[2].abs() < 1e-12));
    }
}
