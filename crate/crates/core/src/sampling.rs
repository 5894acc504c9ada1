//! Downsampling: farthest point sampling and the grid quantize-and-merge baseline.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;
use rand::Rng as _;

use crate::geometry::{dist2, Point3, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartRule {
    /// Start from point 0.
    #[default]
    FirstPoint,
    /// Start from a point drawn with the spec's seed.
    SeededRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSpec {
    pub target_count: usize,
    pub start: StartRule,
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(target_count: usize) -> Self {
        Self { target_count, start: StartRule::FirstPoint, seed: 0 }
    }
}

/// Greedy farthest point sampling.
///
/// Each new point maximizes the distance to the already-selected set; ties go
/// to the smallest index. Returns the selected indices in selection order and
/// the corresponding sub-cloud.
pub fn farthest_point_sample(pc: &PointCloud, spec: SampleSpec) -> Result<(Vec<usize>, PointCloud)> {
    let n = pc.count();
    let m = spec.target_count;
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {m} points from a cloud of {n}"
        )));
    }
    let pts = pc.points();
    let start = match spec.start {
        StartRule::FirstPoint => 0,
        StartRule::SeededRandom => crate::rng_from_seed(spec.seed).gen_range(0..n),
    };
    let mut selected = Vec::with_capacity(m);
    let mut taken = alloc::vec![false; n];
    let mut min_d2: Vec<f64> = pts.iter().map(|&p| dist2(p, pts[start])).collect();
    selected.push(start);
    taken[start] = true;
    while selected.len() < m {
        let mut best = usize::MAX;
        let mut best_d = f64::neg_infinity();
        for i in 0..n {
            if !taken[i] && min_d2[i] > best_d {
                best = i;
                best_d = min_d2[i];
            }
        }
        selected.push(best);
        taken[best] = true;
        let q = pts[best];
        for (d, &p) in min_d2.iter_mut().zip(pts) {
            let nd = dist2(p, q);
            if nd < *d {
                *d = nd;
            }
        }
    }
    let sub = pc.select(&selected)?;
    Ok((selected, sub))
}

/// Integer cells `floor((X - shift) * s)` of every point, in input order.
pub fn grid_cells(pc: &PointCloud, shift: Point3, s: f64) -> Result<Vec<[i64; 3]>> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("grid scale must be positive, got {s}")));
    }
    Ok(pc
        .points()
        .iter()
        .map(|p| {
            [
                ((p[0] - shift[0]) * s).floor() as i64,
                ((p[1] - shift[1]) * s).floor() as i64,
                ((p[2] - shift[2]) * s).floor() as i64,
            ]
        })
        .collect())
}

/// Distinct occupied cells, in order of first occurrence.
pub fn unique_cells(cells: &[[i64; 3]]) -> Vec<[i64; 3]> {
    let mut seen = BTreeSet::new();
    cells.iter().copied().filter(|c| seen.insert(*c)).collect()
}

/// Quantizes positions onto the integer grid and merges duplicates.
pub fn grid_quantize_merge(pc: &PointCloud, shift: Point3, s: f64) -> Result<PointCloud> {
    let cells = unique_cells(&grid_cells(pc, shift, s)?);
    PointCloud::new(cells.iter().map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::seq::SliceRandom;

    fn line(values: &[f64]) -> PointCloud {
        PointCloud::new(values.iter().map(|&v| [v, 0.0, 0.0]).collect()).unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = crate::rng_from_seed(seed);
        PointCloud::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
    }

    /// Reference greedy rule, recomputing every distance from scratch.
    fn brute_force_fps(pc: &PointCloud, start: usize, m: usize) -> Vec<usize> {
        let pts = pc.points();
        let mut sel = vec![start];
        while sel.len() < m {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for i in 0..pts.len() {
                if sel.contains(&i) {
                    continue;
                }
                let d = sel.iter().map(|&j| dist2(pts[i], pts[j])).fold(f64::INFINITY, f64::min);
                if d > best.0 {
                    best = (d, i);
                }
            }
            sel.push(best.1);
        }
        sel
    }

    fn min_pairwise(pc: &PointCloud) -> f64 {
        let p = pc.points();
        let mut best = f64::INFINITY;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                best = best.min(dist2(p[i], p[j]));
            }
        }
        best.sqrt()
    }

    #[test]
    fn hand_run_on_a_line() {
        let (idx, sub) = farthest_point_sample(&line(&[0.0, 10.0, 4.0]), SampleSpec::new(3)).unwrap();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(sub.points()[1], [10.0, 0.0, 0.0]);
    }

    #[test]
    fn single_and_full_selection() {
        let pc = random_cloud(40, 1);
        let (idx, _) = farthest_point_sample(&pc, SampleSpec::new(1)).unwrap();
        assert_eq!(idx, vec![0]);
        let (mut idx, sub) = farthest_point_sample(&pc, SampleSpec::new(40)).unwrap();
        assert_eq!(sub.count(), 40);
        idx.sort_unstable();
        assert_eq!(idx, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn ties_go_to_the_smallest_index() {
        // 1 and 2 are both at distance 1 from the start
        let (idx, _) = farthest_point_sample(&line(&[0.0, 1.0, -1.0]), SampleSpec::new(2)).unwrap();
        assert_eq!(idx, vec![0, 1]);
        // duplicates of the start are picked last, lowest index first
        let (idx, _) =
            farthest_point_sample(&line(&[0.0, 0.0, 5.0, 0.0]), SampleSpec::new(4)).unwrap();
        assert_eq!(idx, vec![0, 2, 1, 3]);
    }

    #[test]
    fn matches_brute_force_rule() {
        for seed in 0..10 {
            let pc = random_cloud(60, seed);
            let spec = SampleSpec { target_count: 25, start: StartRule::SeededRandom, seed };
            let (idx, sub) = farthest_point_sample(&pc, spec).unwrap();
            assert_eq!(idx, brute_force_fps(&pc, idx[0], 25));
            // subset of input points, no duplicates
            assert!(sub.points().iter().all(|p| pc.points().contains(p)));
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 25);
            assert_eq!(farthest_point_sample(&pc, spec).unwrap().0, idx);
        }
    }

    #[test]
    fn rejects_oversized_requests() {
        let pc = random_cloud(5, 0);
        assert!(farthest_point_sample(&pc, SampleSpec::new(6)).is_err());
        assert!(farthest_point_sample(&pc, SampleSpec::new(0)).is_err());
    }

    #[test]
    fn fps_spreads_points_more_than_random_subsets() {
        let trials = 40;
        let mut wins = 0;
        for seed in 0..trials {
            let pc = random_cloud(512, 100 + seed);
            let (_, fps) = farthest_point_sample(&pc, SampleSpec::new(64)).unwrap();
            let mut idx: Vec<usize> = (0..512).collect();
            idx.shuffle(&mut crate::rng_from_seed(seed));
            let random = pc.select(&idx[..64]).unwrap();
            if min_pairwise(&fps) >= min_pairwise(&random) {
                wins += 1;
            }
        }
        assert!(wins as f64 >= 0.95 * trials as f64, "{wins}/{trials}");
    }

    #[test]
    fn grid_quantization_examples() {
        let q = grid_quantize_merge(&line(&[5.7]), [0.0; 3], 1.0).unwrap();
        assert_eq!(q.points(), &[[5.0, 0.0, 0.0]]);
        let q = grid_quantize_merge(&line(&[0.1, 0.4]), [0.0; 3], 1.0).unwrap();
        assert_eq!(q.points(), &[[0.0, 0.0, 0.0]]);
        let q = grid_quantize_merge(&line(&[-0.5]), [0.0; 3], 1.0).unwrap();
        assert_eq!(q.points(), &[[-1.0, 0.0, 0.0]]);
        assert!(grid_quantize_merge(&line(&[1.0]), [0.0; 3], 0.0).is_err());
    }

    #[test]
    fn merged_count_equals_occupied_cells() {
        let pc = random_cloud(1000, 42);
        let q = grid_quantize_merge(&pc, [0.0; 3], 4.0).unwrap();
        let mut occupied = [[[false; 4]; 4]; 4];
        for p in pc.points() {
            let c = p.map(|v| ((v * 4.0) as usize).min(3));
            occupied[c[0]][c[1]][c[2]] = true;
        }
        let expected = occupied.iter().flatten().flatten().filter(|&&o| o).count();
        assert_eq!(q.count(), expected);
        assert!(q.points().iter().all(|p| p.iter().all(|c| c.fract() == 0.0)));
    }

    #[test]
    fn idempotent_on_integer_clouds() {
        let pc = PointCloud::new(vec![[1.0, 2.0, 3.0], [-4.0, 0.0, 7.0], [1.0, 2.0, 3.0]]).unwrap();
        let once = grid_quantize_merge(&pc, [0.0; 3], 1.0).unwrap();
        assert_eq!(grid_quantize_merge(&once, [0.0; 3], 1.0).unwrap(), once);
        assert_eq!(once.count(), 2);
    }
}
