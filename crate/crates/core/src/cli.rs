//! Command-line front end. Every successful run leaves a JSON manifest with
//! the resolved configuration, γ, timings and SHA-256 digests of the files
//! read and written.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{
    read_field, read_image, write_field, write_image, DomainMask, NoiseDistribution, NoiseSpec,
    ScalarField,
};
use crate::operator::FaceAverage;
use crate::pipeline::{segment, PipelineConfig, Problem, ThresholdMethod};
use crate::spectral::{
    dense_eigs_oracle, project, reconstruct, solve_prolongation_with, EigenOptions, DEFAULT_EIG_TOL,
};
use crate::synth::{add_noise, make_phantom, PhantomSpec};
use crate::weight::WeightKind;

/// Largest relative eigenvalue deviation `oracle-check` accepts.
pub const ORACLE_TOLERANCE: f64 = 1e-6;
/// Absolute accuracy of the dense oracle, in units of `ε‖A‖₁`. Eigenvalues
/// smaller than this can only be checked to that absolute level.
pub const ORACLE_RESOLUTION: f64 = 16.0;
/// Ceiling applied to the default number of expansion terms.
pub const DEFAULT_TERMS_CAP: usize = 150;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const MALFORMED: i32 = 1;
    pub const NON_CONVERGENCE: i32 = 2;
    pub const DEGENERATE: i32 = 3;
    pub const ORACLE_MISMATCH: i32 = 4;
}

#[derive(Parser, Debug)]
#[command(
    name = "aeseg",
    version,
    about = "Adaptive-eigenspace image segmentation and denoising"
)]
pub struct Cli {
    /// Worker threads for matrix-vector products (falls back to AES_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute the smallest eigenpairs and write them as PFM fields.
    Eigs(EigsArgs),
    /// Threshold eigenfunctions into binary masks.
    Segment(SegmentArgs),
    /// Truncated eigen-expansion of the image.
    Denoise(DenoiseArgs),
    /// Multiply the image by (1 + delta * xi).
    AddNoise(AddNoiseArgs),
    /// Write a synthetic phantom and its ground-truth masks.
    Phantom(PhantomArgs),
    /// Compare iterative and dense eigenvalues.
    OracleCheck(OracleArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightArg {
    Lorentzian,
    Tv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageArg {
    Harmonic,
    Arithmetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistArg {
    Uniform,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    #[value(name = "profile1d")]
    Profile1d,
    #[value(name = "two_disks")]
    TwoDisks,
    #[value(name = "blob_with_blur")]
    BlobWithBlur,
    #[value(name = "step1d")]
    Step1d,
}

/// Options shared by every command that builds the operator.
#[derive(Args, Clone, Debug, Serialize)]
pub struct OperatorArgs {
    /// Input image (P5 PGM, or PFM by extension).
    #[arg(long)]
    pub input: PathBuf,
    /// Region-of-interest mask (PGM, nonzero = inside).
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lorentzian")]
    pub weight: WeightArg,
    /// Smoothing parameter of the penalized-TV weight.
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    /// Eigen-residual tolerance.
    #[arg(long, default_value_t = DEFAULT_EIG_TOL)]
    pub tol: f64,
    /// Face averaging of the weight.
    #[arg(long, value_enum, default_value = "harmonic")]
    pub avg: AverageArg,
    /// Seed of the Lanczos start vector.
    #[arg(long, default_value_t = EigenOptions::default().seed)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct EigsArgs {
    #[command(flatten)]
    pub op: OperatorArgs,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write the operator in Matrix Market format.
    #[arg(long)]
    pub dump_matrix: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub op: OperatorArgs,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// 1-based eigenfunction indices; default is every computed one.
    #[arg(long, value_delimiter = ',')]
    pub indices: Vec<usize>,
    /// `otsu` or `fixed:T` with T in (0, 1).
    #[arg(long, default_value = "otsu", value_parser = parse_threshold)]
    #[serde(serialize_with = "serialize_threshold")]
    pub threshold: ThresholdMethod,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub op: OperatorArgs,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Expansion terms kept; defaults to min(k, 150).
    #[arg(long = "K")]
    pub terms: Option<usize>,
    /// Use I0 = 0 instead of the prolongation of the boundary values.
    #[arg(long)]
    pub zero_boundary: bool,
    /// Output PGM; a PFM with the unclamped values is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AddNoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, value_enum)]
    pub dist: DistArg,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct PhantomArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub n: usize,
    /// Blur radius (normalized length) for `blob_with_blur`.
    #[arg(long, default_value_t = 0.0)]
    pub blur: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct OracleArgs {
    #[command(flatten)]
    pub op: OperatorArgs,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
}

fn parse_threshold(s: &str) -> std::result::Result<ThresholdMethod, String> {
    if s == "otsu" {
        return Ok(ThresholdMethod::Otsu);
    }
    let t: f64 = s
        .strip_prefix("fixed:")
        .ok_or_else(|| format!("expected `otsu` or `fixed:T`, got {s:?}"))?
        .parse()
        .map_err(|e| format!("bad fixed threshold: {e}"))?;
    if t > 0.0 && t < 1.0 {
        Ok(ThresholdMethod::Fixed(t))
    } else {
        Err(format!("fixed threshold {t} outside (0, 1)"))
    }
}

fn serialize_threshold<S: serde::Serializer>(
    t: &ThresholdMethod,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match t {
        ThresholdMethod::Otsu => s.serialize_str("otsu"),
        ThresholdMethod::Fixed(v) => s.serialize_str(&format!("fixed:{v}")),
    }
}

impl OperatorArgs {
    fn weight_kind(&self) -> WeightKind {
        match self.weight {
            WeightArg::Lorentzian => WeightKind::Lorentzian,
            WeightArg::Tv => WeightKind::PenalizedTv {
                epsilon: self.epsilon,
            },
        }
    }

    fn config(&self, k: usize) -> PipelineConfig {
        PipelineConfig {
            weight: self.weight_kind(),
            k,
            terms: k.min(DEFAULT_TERMS_CAP),
            average: match self.avg {
                AverageArg::Harmonic => FaceAverage::Harmonic,
                AverageArg::Arithmetic => FaceAverage::Arithmetic,
            },
            tol: self.tol,
            seed: self.seed,
            ..PipelineConfig::default()
        }
    }

    fn load(&self, run: &mut Run) -> Result<(ScalarField, DomainMask)> {
        let image = run.read_input(&self.input)?;
        let mask = match &self.mask {
            Some(path) => {
                let m = run.read_input(path)?;
                if (m.width(), m.height()) != (image.width(), image.height()) {
                    return Err(Error::Dimension(format!(
                        "mask is {}x{}, image is {}x{}",
                        m.width(),
                        m.height(),
                        image.width(),
                        image.height()
                    )));
                }
                DomainMask::from_field(&m)?
            }
            None => DomainMask::full(image.width(), image.height())?,
        };
        Ok((image, mask))
    }
}

/// Bookkeeping for the manifest.
struct Run {
    command: &'static str,
    started: Instant,
    timings: BTreeMap<String, f64>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    extra: serde_json::Map<String, Value>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Run {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            timings: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            extra: serde_json::Map::new(),
        }
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.timings
            .insert(stage.to_string(), t.elapsed().as_secs_f64());
        Ok(out)
    }

    fn read_input(&mut self, path: &Path) -> Result<ScalarField> {
        let bytes = fs::read(path)?;
        self.inputs
            .insert(path.display().to_string(), digest(&bytes));
        if is_pfm(path) {
            read_field(path)
        } else {
            read_image(path)
        }
    }

    fn record_output(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.outputs
            .insert(path.display().to_string(), digest(&bytes));
        Ok(())
    }

    fn write_image(&mut self, field: &ScalarField, path: &Path) -> Result<()> {
        write_image(field, path)?;
        self.record_output(path)
    }

    fn write_field(&mut self, field: &ScalarField, path: &Path) -> Result<()> {
        write_field(field, path)?;
        self.record_output(path)
    }

    fn write_json(&mut self, value: &Value, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(json_error)?;
        fs::write(path, text + "\n")?;
        self.record_output(path)
    }

    fn finish(mut self, config: impl Serialize, path: &Path) -> Result<()> {
        self.timings
            .insert("total".into(), self.started.elapsed().as_secs_f64());
        let mut manifest = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": serde_json::to_value(config).map_err(json_error)?,
            "timings_seconds": self.timings,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        if let Value::Object(map) = &mut manifest {
            map.extend(self.extra);
        }
        let text = serde_json::to_string_pretty(&manifest).map_err(json_error)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    fn weight_info(&mut self, problem: &Problem) {
        self.extra
            .insert("gamma".into(), json!(problem.gamma.value));
        self.extra
            .insert("gamma_degenerate".into(), json!(problem.gamma.degenerate));
        self.extra.insert("weight_law".into(), json!(problem.law));
    }
}

fn json_error(e: serde_json::Error) -> Error {
    Error::InvalidInput(format!("json encoding failed: {e}"))
}

fn is_pfm(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn numbered(dir: &Path, prefix: &str, i: usize, ext: &str) -> PathBuf {
    dir.join(format!("{prefix}_{i:04}.{ext}"))
}

fn eigs(args: &EigsArgs) -> Result<()> {
    let mut run = Run::new("eigs");
    let (image, mask) = args.op.load(&mut run)?;
    let cfg = args.op.config(args.k);
    cfg.validate()?;
    let problem = run.timed("assemble", || Problem::build(&image, &mask, &cfg))?;
    run.weight_info(&problem);
    if let Some(path) = &args.dump_matrix {
        let file = fs::File::create(path)?;
        let mut out = BufWriter::new(file);
        problem.op.write_matrix_market(&mut out)?;
        out.flush()?;
        run.record_output(path)?;
    }
    let opts = EigenOptions {
        tol: cfg.tol,
        seed: cfg.seed,
        ..EigenOptions::default()
    };
    let basis = run.timed("eigensolve", || problem.eigenbasis(args.k, &opts))?;
    fs::create_dir_all(&args.out_dir)?;
    for (i, phi) in basis.eigenfields().iter().enumerate() {
        run.write_field(phi, &numbered(&args.out_dir, "phi", i + 1, "pfm"))?;
    }
    let spectrum = json!({
        "gamma": problem.gamma.value,
        "weight_law": problem.law.name(),
        "k": args.k,
        "tol": cfg.tol,
        "eigenvalues": basis.eigenvalues(),
        "residuals": basis.residuals(),
    });
    run.write_json(&spectrum, &args.out_dir.join("spectrum.json"))?;
    run.extra.insert("solver".into(), json!(basis.metadata()));
    run.finish(args, &args.out_dir.join("manifest.json"))
}

fn segment_cmd(args: &SegmentArgs) -> Result<()> {
    let mut run = Run::new("segment");
    let (image, mask) = args.op.load(&mut run)?;
    let cfg = PipelineConfig {
        indices: args.indices.clone(),
        threshold: args.threshold,
        ..args.op.config(args.k)
    };
    let seg = run.timed("segment", || segment(&image, &mask, &cfg))?;
    run.extra.insert("gamma".into(), json!(seg.gamma.value));
    run.extra
        .insert("gamma_degenerate".into(), json!(seg.gamma.degenerate));
    run.extra
        .insert("weight_law".into(), json!(seg.basis.metadata().weight_law));
    fs::create_dir_all(&args.out_dir)?;
    let mut thresholds = Vec::new();
    for m in &seg.masks {
        run.write_image(&m.mask, &numbered(&args.out_dir, "mask", m.index, "pgm"))?;
        thresholds.push(json!({"index": m.index, "threshold": m.threshold}));
    }
    run.extra.insert("thresholds".into(), json!(thresholds));
    run.extra
        .insert("eigenvalues".into(), json!(seg.basis.eigenvalues()));
    run.finish(args, &args.out_dir.join("manifest.json"))
}

fn denoise_cmd(args: &DenoiseArgs) -> Result<()> {
    let mut run = Run::new("denoise");
    let (image, mask) = args.op.load(&mut run)?;
    let mut cfg = args.op.config(args.k);
    cfg.terms = args.terms.unwrap_or(cfg.terms);
    cfg.zero_boundary = args.zero_boundary;
    cfg.validate()?;
    let problem = run.timed("assemble", || Problem::build(&image, &mask, &cfg))?;
    run.weight_info(&problem);
    let opts = EigenOptions {
        tol: cfg.tol,
        seed: cfg.seed,
        ..EigenOptions::default()
    };
    let basis = run.timed("eigensolve", || problem.eigenbasis(cfg.k, &opts))?;
    let i0 = run.timed("prolongation", || {
        solve_prolongation_with(
            &problem.op,
            &problem.coupling,
            &image,
            cfg.zero_boundary,
            &problem.factor,
        )
    })?;
    let expansion = project(&image, &basis, &i0)?;
    let filtered = reconstruct(&expansion, &basis, cfg.terms)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    run.write_image(&filtered, &args.out)?;
    run.write_field(&filtered, &sibling(&args.out, ".pfm"))?;
    run.extra.insert("K".into(), json!(cfg.terms));
    run.extra
        .insert("coefficients".into(), json!(expansion.coefficients));
    run.finish(args, &sibling(&args.out, ".manifest.json"))
}

fn add_noise_cmd(args: &AddNoiseArgs) -> Result<()> {
    let mut run = Run::new("add-noise");
    let image = run.read_input(&args.input)?;
    let dist = match args.dist {
        DistArg::Uniform => NoiseDistribution::Uniform01,
        DistArg::Gaussian => NoiseDistribution::Gaussian01,
    };
    let spec = NoiseSpec::new(args.delta, dist, args.seed)?;
    let noisy = add_noise(&image, &spec)?;
    if is_pfm(&args.out) {
        run.write_field(&noisy, &args.out)?;
    } else {
        run.write_image(&noisy, &args.out)?;
    }
    run.finish(args, &sibling(&args.out, ".manifest.json"))
}

fn phantom_cmd(args: &PhantomArgs) -> Result<()> {
    let mut run = Run::new("phantom");
    let spec = match args.kind {
        KindArg::Profile1d => PhantomSpec::profile1d(args.n),
        KindArg::TwoDisks => PhantomSpec::two_disks(args.n),
        KindArg::BlobWithBlur => PhantomSpec::blob(args.n, args.blur),
        KindArg::Step1d => PhantomSpec::step1d(args.n),
    };
    let p = make_phantom(&spec)?;
    fs::create_dir_all(&args.out_dir)?;
    run.write_image(&p.image, &args.out_dir.join("phantom.pgm"))?;
    run.write_field(&p.image, &args.out_dir.join("phantom.pfm"))?;
    for (i, obj) in p.objects.iter().enumerate() {
        run.write_image(obj, &numbered(&args.out_dir, "truth", i + 1, "pgm"))?;
    }
    run.extra.insert(
        "phantom".into(),
        serde_json::to_value(&spec).map_err(json_error)?,
    );
    run.finish(args, &args.out_dir.join("manifest.json"))
}

/// Returns the maximum relative deviation and whether every pair agreed.
fn oracle_check(args: &OracleArgs) -> Result<(f64, bool)> {
    let mut run = Run::new("oracle-check");
    let (image, mask) = args.op.load(&mut run)?;
    let cfg = args.op.config(args.k);
    cfg.validate()?;
    let problem = Problem::build(&image, &mask, &cfg)?;
    let opts = EigenOptions {
        tol: cfg.tol,
        seed: cfg.seed,
        ..EigenOptions::default()
    };
    let dense = dense_eigs_oracle(&problem.op)?;
    let basis = problem.eigenbasis(args.k, &opts)?;
    let resolution = ORACLE_RESOLUTION * f64::EPSILON * problem.op.norm1();
    let pairs = || basis.eigenvalues().iter().zip(&dense.values);
    let worst = pairs()
        .map(|(a, b)| (a - b).abs() / b.abs())
        .fold(0.0, f64::max);
    let agree = pairs().all(|(a, b)| (a - b).abs() <= (ORACLE_TOLERANCE * b.abs()).max(resolution));
    let report = json!({
        "k": args.k,
        "n": problem.op.n(),
        "max_relative_deviation": worst,
        "tolerance": ORACLE_TOLERANCE,
        "oracle_resolution": resolution,
        "agree": agree,
        "iterative": basis.eigenvalues(),
        "dense": &dense.values[..args.k],
    });
    println!("{}", serde_json::to_string(&report).map_err(json_error)?);
    Ok((worst, agree))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } => exit::NON_CONVERGENCE,
        Error::Degenerate(_) => exit::DEGENERATE,
        _ => exit::MALFORMED,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension(_) => "dimension",
        Error::InvalidInput(_) => "invalid_input",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
        Error::NonConvergence { .. } => "non_convergence",
        Error::Degenerate(_) => "degenerate",
        Error::TooLarge { .. } => "too_large",
    }
}

fn report_error(e: &Error) -> i32 {
    let code = exit_code(e);
    let mut body = json!({
        "error": error_kind(e),
        "message": e.to_string(),
        "exit_code": code,
    });
    match e {
        Error::NonConvergence { residuals, .. } => body["best_residuals"] = json!(residuals),
        Error::Parse { offset, .. } => body["offset"] = json!(offset),
        _ => {}
    }
    eprintln!("{body}");
    code
}

fn configure_threads(requested: Option<usize>) -> Result<()> {
    let from_env = std::env::var("AES_THREADS").ok();
    let n = match (requested, from_env) {
        (Some(n), _) => n,
        (None, Some(s)) => s.trim().parse().map_err(|_| {
            Error::InvalidInput(format!("AES_THREADS must be an integer, got {s:?}"))
        })?,
        (None, None) => return Ok(()),
    };
    if n == 0 {
        return Err(Error::InvalidInput("thread count must be >= 1".into()));
    }
    // a second configuration attempt in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return exit::OK;
            }
            let body = json!({
                "error": "usage",
                "message": e.to_string().trim(),
                "exit_code": exit::MALFORMED,
            });
            eprintln!("{body}");
            return exit::MALFORMED;
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        return report_error(&e);
    }
    let result = match &cli.command {
        Command::Eigs(a) => eigs(a),
        Command::Segment(a) => segment_cmd(a),
        Command::Denoise(a) => denoise_cmd(a),
        Command::AddNoise(a) => add_noise_cmd(a),
        Command::Phantom(a) => phantom_cmd(a),
        Command::OracleCheck(a) => match oracle_check(a) {
            Ok((_, true)) => Ok(()),
            Ok((worst, false)) => {
                eprintln!(
                    "{}",
                    json!({
                        "error": "oracle_mismatch",
                        "message": format!("max relative deviation {worst:e} exceeds {ORACLE_TOLERANCE:e} and the oracle resolution"),
                        "exit_code": exit::ORACLE_MISMATCH,
                    })
                );
                return exit::ORACLE_MISMATCH;
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => exit::OK,
        Err(e) => report_error(&e),
    }
}
