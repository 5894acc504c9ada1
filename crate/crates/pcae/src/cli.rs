//! The `pcae` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pcae_core::bitstream::{Codec, CompressedObject};
use pcae_core::evaluation::{BppDenominator, EvalOptions};
use pcae_core::gradcheck::suite::{check_rd_loss, run_primitive_suite};
use pcae_core::gradcheck::{describe, FdConfig};
use pcae_core::metrics::{bd_rate, D1Config, RDCurve};
use pcae_core::network::TIERS;
use pcae_core::training::{default_epochs, prepare_cloud, train, EpochRecord, TrainConfig, TrainLog, TrainObserver};
use pcae_core::{ArchitectureConfig, ModelParameters, PointCloud};

use crate::dataset::{collect_inputs, load_split, synthesize, SynthSpec, DEFAULT_POINTS};
use crate::error::{Error, Result};
use crate::io::{read_any, write_atomic, write_point_cloud, PointFormat};
use crate::manifest::RunManifest;
use crate::model_io::{load_model, save_model};
use crate::sweep::{default_threads, group, gnuplot_data, grid_baseline, rd_sweep, write_csv, RdRow};

#[derive(Debug, Parser)]
#[command(name = "pcae", version, about = "Learned lossy point cloud geometry codec", args_override_self = true)]
pub struct Cli {
    /// Worker threads for evaluation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// key=value file supplying defaults for the subcommand's flags (a run manifest works).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a 90/10 train/test split.
    Synth(SynthArgs),
    /// Train a model on a dataset's train split.
    Train(TrainArgs),
    /// Compress a point cloud file, or every file of a directory.
    Compress(CompressArgs),
    /// Decompress a bitstream, or every .pcc file of a directory.
    Decompress(DecompressArgs),
    /// Rate-distortion evaluation of model sets, with BD-rates between them.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable primitive and the full loss.
    Fdcheck(FdcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Grid,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Denominator {
    Original,
    Reconstructed,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// sphere, box, torus, composite or mixed
    #[arg(long, default_value = "mixed")]
    pub kind: String,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_POINTS)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Input point count of the model.
    #[arg(long, default_value_t = 2048)]
    pub tier: usize,
    /// Latent size; required for point counts that are not a standard tier.
    #[arg(long)]
    pub latent: Option<usize>,
    #[arg(long, default_value_t = 1000.0)]
    pub lambda: f64,
    /// Default: 1200 with entropy optimization, 500 without.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = pcae_core::training::DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = pcae_core::training::DEFAULT_BATCH_SIZE)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub entropy: OnOff,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0: never).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_interval: usize,
    /// Print progress every this many epochs (0: silent).
    #[arg(long, default_value_t = 10)]
    pub progress: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Expected model tier; rejected if the model differs.
    #[arg(long)]
    pub tier: Option<usize>,
    /// Factor applied to the reconstruction on decompression.
    #[arg(long, default_value_t = 1.0)]
    pub expansion: f64,
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// ply, ply-ascii or xyz (default: from the output extension, ply for directories).
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `[LABEL=]PATH`: a model file or a directory of .pcae files forming one curve.
    #[arg(long = "model-set", required = true)]
    pub model_sets: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, value_enum, default_value_t = Baseline::None)]
    pub baseline: Baseline,
    /// Grid scales swept by the baseline.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0078125, 0.015625, 0.03125, 0.0625, 0.125])]
    pub grid_scales: Vec<f64>,
    #[arg(long, default_value_t = pcae_core::geometry::DEFAULT_EXPANSION)]
    pub expansion: f64,
    /// PSNR peak (default: the expansion factor).
    #[arg(long)]
    pub peak: Option<f64>,
    /// Include the factor 3 in the PSNR numerator.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub three_axis_peak: bool,
    /// Count header bytes in the rate.
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pub include_header: bool,
    #[arg(long, value_enum, default_value_t = Denominator::Original)]
    pub denominator: Denominator,
    /// Curve the BD-rates are measured against (default: the first model set).
    #[arg(long)]
    pub anchor: Option<String>,
    /// CSV output; gnuplot files are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FdcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Inserts the settings of `--config FILE` right after the subcommand so
/// that flags given on the command line override them.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = Some(PathBuf::from(it.next().ok_or_else(|| Error::Usage("--config needs a file".into()))?));
        } else if let Some(v) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let manifest = RunManifest::read(&path)?;
    let names = ["synth", "train", "compress", "decompress", "eval", "fdcheck"];
    let pos = rest
        .iter()
        .position(|a| names.contains(&a.to_string_lossy().as_ref()))
        .ok_or_else(|| Error::Usage("--config needs a subcommand".into()))?;
    let mut inserted = Vec::new();
    for (k, v) in manifest.settings() {
        let flag = format!("--{}", k.replace('_', "-"));
        if k == "model_set" {
            // repeated flag, stored space separated
            for set in v.split_whitespace() {
                inserted.push(OsString::from(&flag));
                inserted.push(OsString::from(set));
            }
        } else {
            inserted.push(OsString::from(flag));
            inserted.push(OsString::from(v));
        }
    }
    rest.splice(pos + 1..pos + 1, inserted);
    Ok(rest)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(args: Vec<OsString>) -> Result<()> {
    let args = expand_config(args)?;
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            print!("{e}");
            std::process::exit(0)
        }
        _ => Error::Usage(e.to_string()),
    })?;
    let threads = cli.threads.unwrap_or_else(default_threads).max(1);
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Compress(a) => cmd_compress(&a),
        Command::Decompress(a) => cmd_decompress(&a),
        Command::Eval(a) => cmd_eval(&a, threads),
        Command::Fdcheck(a) => cmd_fdcheck(&a),
    }
}

/// `<path>.<suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Manifest location for a command whose output is `out` (file or directory).
fn manifest_path(out: &Path, command: &str) -> PathBuf {
    if out.is_dir() {
        out.join(format!("{command}.manifest"))
    } else {
        sibling(out, "manifest")
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec { kind: a.kind.clone(), count: a.count, points: a.points, seed: a.seed };
    let (train, test) = synthesize(&a.out, &spec)?;
    let mut m = RunManifest::new("synth");
    m.set("kind", &a.kind);
    m.set("count", a.count);
    m.set("points", a.points);
    m.set("seed", a.seed);
    m.set("out", a.out.display());
    m.write(&a.out.join("synth.manifest"))?;
    println!("wrote {train} train and {test} test clouds to {}", a.out.display());
    Ok(())
}

struct Progress {
    start: Instant,
    every: usize,
    epochs: usize,
    checkpoint_base: PathBuf,
}

impl TrainObserver for Progress {
    fn now(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn epoch_finished(&mut self, r: &EpochRecord, _params: &ModelParameters) -> pcae_core::Result<()> {
        if self.every > 0 && (r.epoch % self.every == 0 || r.epoch == 1 || r.epoch == self.epochs) {
            eprintln!(
                "epoch {:5}  loss {:12.4}  chamfer {:.6}  rate {:9.2} bits  {:7.1}s",
                r.epoch, r.loss, r.chamfer, r.rate_bits, r.seconds
            );
        }
        Ok(())
    }

    fn checkpoint(&mut self, epoch: usize, params: &ModelParameters) -> pcae_core::Result<()> {
        let path = sibling(&self.checkpoint_base, &format!("epoch{epoch:05}.pcae"));
        save_model(params, &path).map_err(|e| pcae_core::Error::InvalidArgument(format!("checkpoint: {e}")))?;
        Ok(())
    }
}

/// CSV of the per-epoch records.
pub fn train_log_csv(log: &TrainLog) -> String {
    let mut out = String::from("epoch,rate_bits,chamfer,loss,seconds\n");
    for r in &log.records {
        writeln!(out, "{},{},{},{},{}", r.epoch, r.rate_bits, r.chamfer, r.loss, r.seconds).unwrap();
    }
    out
}

fn architecture(tier: usize, latent: Option<usize>) -> Result<ArchitectureConfig> {
    match latent {
        Some(k) => {
            let arch = ArchitectureConfig::new(tier, k);
            arch.validate()?;
            Ok(arch)
        }
        None => ArchitectureConfig::for_tier(tier).map_err(|_| {
            Error::Usage(format!(
                "--tier {tier} is not one of {:?}; pass --latent for other sizes",
                TIERS.map(|t| t.0)
            ))
        }),
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let arch = architecture(a.tier, a.latent)?;
    let entropy = a.entropy == OnOff::On;
    let config = TrainConfig {
        lambda: a.lambda,
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs.unwrap_or_else(|| default_epochs(entropy)),
        seed: a.seed,
        checkpoint_interval: a.checkpoint_interval,
        ..TrainConfig::new(a.lambda, entropy)
    };
    config.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let clouds = load_split(&a.data, "train")?;
    if clouds.is_empty() {
        return Err(Error::Data(format!("{}: train split is empty", a.data.display())));
    }
    let mut prepared = Vec::with_capacity(clouds.len());
    for c in &clouds {
        if c.cloud.count() < a.tier {
            return Err(Error::Data(format!("{} has {} points, fewer than the tier {}", c.name, c.cloud.count(), a.tier)));
        }
        prepared.push(prepare_cloud(&c.cloud, a.tier)?);
    }
    let mut m = RunManifest::new("train");
    m.set("data", a.data.display());
    m.set("tier", a.tier);
    m.set("latent", arch.latent_dim);
    m.set("lambda", config.lambda);
    m.set("epochs", config.epochs);
    m.set("lr", config.learning_rate);
    m.set("batch", config.batch_size);
    m.set("entropy", if entropy { "on" } else { "off" });
    m.set("seed", config.seed);
    m.set("checkpoint_interval", config.checkpoint_interval);
    m.set("out", a.out.display());
    let mut progress = Progress {
        start: Instant::now(),
        every: a.progress,
        epochs: config.epochs,
        checkpoint_base: a.out.clone(),
    };
    let (model, log) = train(&prepared, &config, &arch, &mut progress)?;
    let digest = save_model(&model, &a.out)?;
    write_atomic(&sibling(&a.out, "log.csv"), train_log_csv(&log).as_bytes())?;
    m.set("digest", format!("{digest:016x}"));
    m.write(&sibling(&a.out, "manifest"))?;
    println!("model {} digest {digest:016x}", a.out.display());
    Ok(())
}

fn output_for(input: &Path, out: &Path, batch: bool, ext: &str) -> PathBuf {
    if batch {
        out.join(input.file_stem().unwrap_or_default()).with_extension(ext)
    } else {
        out.to_path_buf()
    }
}

fn cmd_compress(a: &CompressArgs) -> Result<()> {
    let (model, digest) = load_model(&a.model)?;
    if let Some(t) = a.tier {
        if t != model.config.input_points {
            return Err(Error::Usage(format!("model is for {} points, --tier {t} given", model.config.input_points)));
        }
    }
    let codec = Codec::new(&model)?;
    let inputs = collect_inputs(&a.input)?;
    let batch = a.input.is_dir();
    if batch {
        fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    }
    let mut total_bytes = 0;
    for input in &inputs {
        let pc = read_any(input)?;
        let obj = codec.compress(&pc, a.expansion)?;
        let bytes = obj.to_bytes();
        total_bytes += bytes.len();
        write_atomic(&output_for(input, &a.out, batch, "pcc"), &bytes)?;
    }
    let mut m = RunManifest::new("compress");
    m.set("model", a.model.display());
    m.set("in", a.input.display());
    m.set("out", a.out.display());
    if let Some(t) = a.tier {
        m.set("tier", t);
    }
    m.set("expansion", a.expansion);
    m.set("digest", format!("{digest:016x}"));
    m.write(&manifest_path(&a.out, "compress"))?;
    println!("compressed {} file(s), {total_bytes} bytes", inputs.len());
    Ok(())
}

fn cmd_decompress(a: &DecompressArgs) -> Result<()> {
    let (model, _) = load_model(&a.model)?;
    let codec = Codec::new(&model)?;
    let batch = a.input.is_dir();
    let inputs: Vec<PathBuf> = if batch {
        let mut v: Vec<PathBuf> = fs::read_dir(&a.input)
            .map_err(|e| Error::io(&a.input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pcc"))
            .collect();
        v.sort();
        if v.is_empty() {
            return Err(Error::Data(format!("{}: no .pcc files", a.input.display())));
        }
        fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        v
    } else {
        vec![a.input.clone()]
    };
    let format = match &a.format {
        Some(f) => PointFormat::parse(f).ok_or_else(|| Error::Usage(format!("unknown format '{f}'")))?,
        None if batch => PointFormat::PlyBinary,
        None => PointFormat::from_path(&a.out)
            .ok_or_else(|| Error::Usage(format!("cannot tell the format of {}; pass --format", a.out.display())))?,
    };
    let ext = if format == PointFormat::Xyz { "xyz" } else { "ply" };
    for input in &inputs {
        let bytes = fs::read(input).map_err(|e| Error::io(input, e))?;
        let obj = CompressedObject::from_bytes(&bytes)?;
        let pc = codec.decompress(&obj)?;
        write_point_cloud(&pc, &output_for(input, &a.out, batch, ext), format)?;
    }
    let mut m = RunManifest::new("decompress");
    m.set("model", a.model.display());
    m.set("in", a.input.display());
    m.set("out", a.out.display());
    if let Some(f) = &a.format {
        m.set("format", f);
    }
    m.write(&manifest_path(&a.out, "decompress"))?;
    println!("decompressed {} file(s)", inputs.len());
    Ok(())
}

/// Model files of one `--model-set` argument, with the curve label.
fn model_set(arg: &str) -> Result<(String, Vec<PathBuf>)> {
    let (label, path) = match arg.split_once('=') {
        Some((l, p)) => (l.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(arg);
            let label = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| arg.to_string());
            (label, p)
        }
    };
    if label.is_empty() || label.contains([',', '\n', '/']) {
        return Err(Error::Usage(format!("model set label '{label}' must be nonempty without ',' or '/'")));
    }
    let files = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(&path)
            .map_err(|e| Error::io(&path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pcae"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.clone()]
    };
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no .pcae model files", path.display())));
    }
    Ok((label, files))
}

/// Text report of BD-rates of every curve against `anchor` (default: the first).
pub fn bd_report(rows: &[RdRow], anchor: Option<&str>) -> Result<String> {
    let groups = group(rows);
    let mut out = String::new();
    let anchor = match anchor {
        Some(l) => groups.iter().find(|g| g.0 == l).ok_or_else(|| Error::Usage(format!("no curve labelled '{l}'")))?,
        None => match groups.first() {
            Some(g) => g,
            None => return Ok(out),
        },
    };
    let anchor_curve = RDCurve::new(anchor.0.clone(), anchor.1.clone());
    for (label, points) in &groups {
        if *label == anchor.0 {
            continue;
        }
        let bd = anchor_curve
            .clone()
            .and_then(|a| RDCurve::new(label.clone(), points.clone()).and_then(|c| bd_rate(&a, &c)));
        match bd {
            Ok(v) => writeln!(out, "BD-rate {label} vs {}: {v:+.2}%", anchor.0).unwrap(),
            Err(e) => writeln!(out, "BD-rate {label} vs {}: n/a ({e})", anchor.0).unwrap(),
        }
    }
    for (label, points) in &groups {
        if let Ok(c) = RDCurve::new(label.clone(), points.clone()) {
            let v = c.monotonicity_violations();
            if v > 0 {
                writeln!(out, "warning: {label} has {v} PSNR decrease(s) along increasing bpp").unwrap();
            }
        }
    }
    Ok(out)
}

fn cmd_eval(a: &EvalArgs, threads: usize) -> Result<()> {
    let clouds: Vec<PointCloud> = load_split(&a.data, &a.split)?.into_iter().map(|c| c.cloud).collect();
    if clouds.is_empty() {
        return Err(Error::Data(format!("{}: split '{}' is empty", a.data.display(), a.split)));
    }
    let options = EvalOptions {
        expansion: a.expansion,
        d1: D1Config { peak: a.peak.unwrap_or(a.expansion), three_axis_peak: a.three_axis_peak, ..D1Config::default() },
        include_header: a.include_header,
        denominator: match a.denominator {
            Denominator::Original => BppDenominator::Original,
            Denominator::Reconstructed => BppDenominator::Reconstructed,
        },
    };
    let mut rows = Vec::new();
    for arg in &a.model_sets {
        let (label, files) = model_set(arg)?;
        let models: Vec<ModelParameters> = files.iter().map(|f| load_model(f).map(|m| m.0)).collect::<Result<_>>()?;
        let named: Vec<(String, &ModelParameters)> = models.iter().map(|m| (label.clone(), m)).collect();
        let mut set_rows = rd_sweep(&named, &clouds, &options, threads)?;
        set_rows.sort_by(|x, y| x.bpp.total_cmp(&y.bpp));
        rows.extend(set_rows);
    }
    if a.baseline == Baseline::Grid {
        rows.extend(grid_baseline(&clouds, &a.grid_scales, &options, threads)?);
    }
    write_csv(&rows, &a.out)?;
    for (label, points) in group(&rows) {
        write_atomic(&sibling(&a.out, &format!("{label}.dat")), gnuplot_data(&label, &points).as_bytes())?;
    }
    for r in &rows {
        println!("{:<16} tier {:5} lambda {:<10} bpp {:.5} psnr {:7.3} dB ({} clouds)", r.label, r.tier, r.lambda, r.bpp, r.psnr_db, r.n_clouds);
    }
    let report = bd_report(&rows, a.anchor.as_deref())?;
    print!("{report}");
    write_atomic(&sibling(&a.out, "report.txt"), report.as_bytes())?;
    let mut m = RunManifest::new("eval");
    m.set("model_set", a.model_sets.join(" "));
    m.set("data", a.data.display());
    m.set("split", &a.split);
    m.set("baseline", if a.baseline == Baseline::Grid { "grid" } else { "none" });
    m.set("grid_scales", a.grid_scales.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    m.set("expansion", a.expansion);
    if let Some(p) = a.peak {
        m.set("peak", p);
    }
    m.set("three_axis_peak", a.three_axis_peak);
    m.set("include_header", a.include_header);
    m.set("denominator", if a.denominator == Denominator::Original { "original" } else { "reconstructed" });
    if let Some(l) = &a.anchor {
        m.set("anchor", l);
    }
    m.set("out", a.out.display());
    m.write(&sibling(&a.out, "manifest"))
}

fn cmd_fdcheck(a: &FdcheckArgs) -> Result<()> {
    let cfg = FdConfig { tolerance: a.tolerance, ..FdConfig::default() };
    let mut reports = run_primitive_suite(a.instances, a.seed, &cfg)?;
    reports.push(check_rd_loss(a.seed, true, &cfg)?);
    reports.push(check_rd_loss(a.seed, false, &cfg)?);
    if let Some(last) = reports.last_mut() {
        last.label = "rd_loss (entropy off)".into();
    }
    if let Some(r) = reports.iter_mut().rev().nth(1) {
        r.label = "rd_loss (entropy on)".into();
    }
    let mut failed = Vec::new();
    for r in &reports {
        let ok = r.passed(a.tolerance);
        println!("{} {}", if ok { "PASS" } else { "FAIL" }, describe(r));
        if !ok {
            failed.push(r.label.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Check(format!("gradient check failed for {}", failed.join(", "))))
    }
}
