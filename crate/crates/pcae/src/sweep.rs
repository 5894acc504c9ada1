//! Rate-distortion sweeps over model sets, the grid quantization baseline, and
//! CSV / gnuplot output.

use std::fmt::Write as _;
use std::path::Path;

use pcae_core::bitstream::Codec;
use pcae_core::evaluation::{evaluate_cloud, summarize, CloudEvaluation, EvalOptions};
use pcae_core::geometry::{apply_expansion, normalize_unit_sphere};
use pcae_core::metrics::{d1_psnr, RDCurve, RDPoint};
use pcae_core::sampling::{grid_cells, unique_cells};
use pcae_core::{ModelParameters, PointCloud};

use crate::error::{Error, Location, Result};
use crate::io::write_atomic;

pub const CSV_HEADER: &str = "label,tier,lambda,bpp,psnr_db,n_clouds";

/// One averaged point of a sweep. For the grid baseline `lambda` holds the grid scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RdRow {
    pub label: String,
    pub tier: usize,
    pub lambda: f64,
    pub bpp: f64,
    pub psnr_db: f64,
    pub n_clouds: usize,
}

/// Applies `f` to every item on up to `threads` workers, keeping input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Default worker count: the machine's available parallelism.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Per-cloud results of one model over `clouds`.
pub fn evaluate_model(model: &ModelParameters, clouds: &[PointCloud], options: &EvalOptions, threads: usize) -> Result<Vec<CloudEvaluation>> {
    let codec = Codec::new(model)?;
    parallel_map(clouds, threads, |pc| evaluate_cloud(&codec, pc, options))
        .into_iter()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Mean bpp and mean dB PSNR of every `(label, model)` over `clouds`.
pub fn rd_sweep(models: &[(String, &ModelParameters)], clouds: &[PointCloud], options: &EvalOptions, threads: usize) -> Result<Vec<RdRow>> {
    if clouds.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    models
        .iter()
        .map(|(label, model)| {
            let s = summarize(&evaluate_model(model, clouds, options, threads)?).expect("nonempty");
            Ok(RdRow {
                label: label.clone(),
                tier: model.config.input_points,
                lambda: model.metadata.lambda,
                bpp: s.bpp,
                psnr_db: s.psnr_db,
                n_clouds: s.clouds,
            })
        })
        .collect()
}

/// Grid quantization of one cloud in the evaluation frame: `(bits, psnr_db)`.
///
/// Occupied cells `floor((X - shift) * s)` of the expanded cloud `X` are sent
/// as raw `3 * b`-bit indices, `b` bits covering the cells along one axis of
/// `[-E, E]`. Cells are reconstructed at their centres.
pub fn grid_code_cloud(pc: &PointCloud, scale: f64, options: &EvalOptions) -> Result<(usize, f64)> {
    let e = options.expansion;
    let x = apply_expansion(&normalize_unit_sphere(pc).0, e)?;
    let shift = [-e; 3];
    let cells = unique_cells(&grid_cells(&x, shift, scale)?);
    let per_axis = (2.0 * e * scale).floor() as u64 + 1;
    let b = (u64::BITS - (per_axis - 1).leading_zeros()).max(1) as usize;
    let recon = PointCloud::new(
        cells
            .iter()
            .map(|c| [0, 1, 2].map(|a| (c[a] as f64 + 0.5) / scale + shift[a]))
            .collect(),
    )?;
    Ok((3 * b * cells.len(), d1_psnr(&x, &recon, &options.d1)?))
}

/// Baseline curve over grid scales; bpp uses the original point count.
pub fn grid_baseline(clouds: &[PointCloud], scales: &[f64], options: &EvalOptions, threads: usize) -> Result<Vec<RdRow>> {
    if clouds.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    scales
        .iter()
        .map(|&s| {
            let per: Vec<(f64, f64)> = parallel_map(clouds, threads, |pc| {
                grid_code_cloud(pc, s, options).map(|(bits, psnr)| (bits as f64 / pc.count() as f64, psnr))
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let n = per.len() as f64;
            Ok(RdRow {
                label: "grid".into(),
                tier: 0,
                lambda: s,
                bpp: per.iter().map(|p| p.0).sum::<f64>() / n,
                psnr_db: per.iter().map(|p| p.1).sum::<f64>() / n,
                n_clouds: per.len(),
            })
        })
        .collect()
}

/// Points of every label, sorted by bpp, in order of first appearance.
pub fn group(rows: &[RdRow]) -> Vec<(String, Vec<RDPoint>)> {
    let mut out: Vec<(String, Vec<RDPoint>)> = Vec::new();
    for r in rows {
        let p = RDPoint { bpp: r.bpp, psnr_db: r.psnr_db };
        match out.iter_mut().find(|(l, _)| *l == r.label) {
            Some((_, v)) => v.push(p),
            None => out.push((r.label.clone(), vec![p])),
        }
    }
    for (_, v) in &mut out {
        v.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
    }
    out
}

/// Groups rows by label into curves.
pub fn curves(rows: &[RdRow]) -> Result<Vec<RDCurve>> {
    group(rows).into_iter().map(|(l, pts)| Ok(RDCurve::new(l, pts)?)).collect()
}

pub fn to_csv(rows: &[RdRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.label, r.tier, r.lambda, r.bpp, r.psnr_db, r.n_clouds).unwrap();
    }
    out
}

pub fn parse_csv(path: &Path, text: &str) -> Result<Vec<RdRow>> {
    let err = |line: usize, reason: String| Error::Parse { path: path.to_path_buf(), location: Location::Line(line), reason };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(err(1, format!("expected header '{CSV_HEADER}'"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(err(i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(i + 1, format!("bad number '{s}'")));
        let int = |s: &str| s.parse::<usize>().map_err(|_| err(i + 1, format!("bad integer '{s}'")));
        rows.push(RdRow {
            label: f[0].to_string(),
            tier: int(f[1])?,
            lambda: num(f[2])?,
            bpp: num(f[3])?,
            psnr_db: num(f[4])?,
            n_clouds: int(f[5])?,
        });
    }
    Ok(rows)
}

pub fn write_csv(rows: &[RdRow], path: &Path) -> Result<()> {
    write_atomic(path, to_csv(rows).as_bytes())
}

/// Two-column `bpp psnr_db` data for gnuplot, one point per line.
pub fn gnuplot_data(label: &str, points: &[RDPoint]) -> String {
    let mut out = format!("# {label}\n# bpp psnr_db\n");
    for p in points {
        writeln!(out, "{} {}", p.bpp, p.psnr_db).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<usize> = (0..103).collect();
        for t in [1, 2, 7, 200] {
            assert_eq!(parallel_map(&v, t, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
        assert!(parallel_map(&[] as &[u8], 4, |x| *x).is_empty());
    }

    #[test]
    fn grid_cost_and_quality_grow_with_scale() {
        let pc = pcae_core::geometry::generate_synthetic_shape(&pcae_core::geometry::ShapeKind::Sphere { radius: 1.0 }, 2048, 3).unwrap();
        let opts = EvalOptions::default();
        let coarse = grid_code_cloud(&pc, 1.0 / 64.0, &opts).unwrap();
        let fine = grid_code_cloud(&pc, 1.0 / 4.0, &opts).unwrap();
        assert!(fine.0 > coarse.0 && fine.1 > coarse.1, "{coarse:?} {fine:?}");
        // 2E/64 = 31.97 -> 32 cells per axis -> 5 bits
        let x = apply_expansion(&normalize_unit_sphere(&pc).0, 1023.0).unwrap();
        let cells = unique_cells(&grid_cells(&x, [-1023.0; 3], 1.0 / 64.0).unwrap()).len();
        assert_eq!(coarse.0, 15 * cells);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            RdRow { label: "on".into(), tier: 128, lambda: 100.0, bpp: 0.1 + 0.2, psnr_db: 17.123456789012345, n_clouds: 20 },
            RdRow { label: "grid".into(), tier: 0, lambda: 0.015625, bpp: 1e-9, psnr_db: -3.5, n_clouds: 1 },
        ];
        assert_eq!(parse_csv(Path::new("x"), &to_csv(&rows)).unwrap(), rows);
        assert!(parse_csv(Path::new("x"), "a,b\n").is_err());
        assert!(parse_csv(Path::new("x"), &format!("{CSV_HEADER}\non,1,2,3\n")).is_err());
    }
}
