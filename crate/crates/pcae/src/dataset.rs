//! Dataset directories: `<root>/<split>/<name>.ply` plus a split manifest.

use std::fs;
use std::path::{Path, PathBuf};

use pcae_core::geometry::{generate_synthetic_shape, ShapeKind};
use pcae_core::PointCloud;

use crate::error::{Error, Result};
use crate::io::{read_any, write_atomic, write_point_cloud, PointFormat};

pub const SPLIT_MANIFEST: &str = "split.txt";
pub const DEFAULT_POINTS: usize = 2048;
pub const SPLITS: [&str; 2] = ["train", "test"];

/// Train and test sizes of a 90/10 split; the test split is never empty.
pub fn split_counts(count: usize) -> (usize, usize) {
    if count < 2 {
        return (count, 0);
    }
    let test = ((count as f64 * 0.1).round() as usize).clamp(1, count - 1);
    (count - test, test)
}

/// Seed of the `index`-th shape of a dataset seeded with `seed`.
fn shape_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// `sphere`, `box`, `torus`, `composite` or `mixed`.
    pub kind: String,
    pub count: usize,
    pub points: usize,
    pub seed: u64,
}

/// Generates `spec.count` shapes into `root`; the last 10% by index form the test split.
pub fn synthesize(root: &Path, spec: &SynthSpec) -> Result<(usize, usize)> {
    if spec.count == 0 || spec.points == 0 {
        return Err(Error::Usage("--count and --points must be positive".into()));
    }
    let (train, test) = split_counts(spec.count);
    let mut manifest = String::new();
    for split in SPLITS {
        let dir = root.join(split);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for i in 0..spec.count {
        let split = if i < train { "train" } else { "test" };
        let s = shape_seed(spec.seed, i);
        let shape = ShapeKind::random(&spec.kind, s)?;
        let pc = generate_synthetic_shape(&shape, spec.points, s)?;
        let name = format!("{}_{i:05}", shape.name());
        write_point_cloud(&pc, &root.join(split).join(format!("{name}.ply")), PointFormat::PlyBinary)?;
        manifest.push_str(&format!("{split} {name}\n"));
    }
    write_atomic(&root.join(SPLIT_MANIFEST), manifest.as_bytes())?;
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct NamedCloud {
    pub name: String,
    pub cloud: PointCloud,
}

fn cloud_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && PointFormat::from_path(&path).is_some() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Names listed for `split` in the manifest, or `None` without a manifest.
fn manifest_names(root: &Path, split: &str) -> Result<Option<Vec<String>>> {
    let path = root.join(SPLIT_MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut names = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (None, ..) => {}
            (Some(s), Some(name), None) if SPLITS.contains(&s) => {
                if s == split {
                    names.push(name.to_string());
                }
            }
            _ => {
                return Err(Error::Parse {
                    path,
                    location: crate::Location::Line(i + 1),
                    reason: "expected '<split> <name>'".into(),
                })
            }
        }
    }
    Ok(Some(names))
}

/// Loads one split. With a manifest, exactly the listed files are read (in
/// manifest order); otherwise every `.ply`/`.xyz` under `<root>/<split>` in
/// name order.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<NamedCloud>> {
    let dir = root.join(split);
    let files: Vec<PathBuf> = match manifest_names(root, split)? {
        Some(names) => names
            .iter()
            .map(|n| {
                let ply = dir.join(format!("{n}.ply"));
                if ply.exists() { ply } else { dir.join(format!("{n}.xyz")) }
            })
            .collect(),
        None => cloud_files(&dir)?,
    };
    files
        .into_iter()
        .map(|path| {
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(NamedCloud { name, cloud: read_any(&path)? })
        })
        .collect()
}

/// Reads a single file, or every point cloud file of a directory in name order.
pub fn collect_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let files = cloud_files(path)?;
        if files.is_empty() {
            return Err(Error::Data(format!("{}: no .ply or .xyz files", path.display())));
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}
