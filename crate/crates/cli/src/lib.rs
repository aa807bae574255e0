//! The `segsdf` command line: synthesize labeled shapes, fit a field to one,
//! extract its labeled mesh and evaluate it against the ground truth.
//!
//! Every output carries the fully resolved config and SHA-256 hashes of its
//! inputs, either inline (checkpoint header, PLY comments, report JSON) or in
//! a `<output>.json` sidecar.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use segsdf::extractor::extract_mesh;
use segsdf::field_net::{decode_checkpoint_with, encode_checkpoint_with, FieldNetwork, HeadVariant};
use segsdf::metrics::{aggregate, correlations, evaluate_shape, ShapeMetrics};
use segsdf::shape_data::{
    generate_synthetic, load_labeled_mesh, normalize, sample_surface, save_labeled_mesh, Normalization,
    SyntheticShapeSpec,
};
use segsdf::trainer::fit_with;
use segsdf::Scalar;

use config::{Overrides, Precision, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// bad flags, unreadable or invalid config and shape specs
    Usage(String),
    /// failures while doing the work, including non-finite losses
    Runtime(segsdf::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "{m}"),
            Self::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<segsdf::Error> for CliError {
    fn from(e: segsdf::Error) -> Self {
        Self::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "segsdf", version, about = "Joint neural SDF reconstruction and part segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run config; defaults apply when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// output file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Triangulate a primitive-union spec into a labeled PLY/OBJ mesh
    Synth {
        /// JSON shape spec
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a field to a labeled mesh and write a checkpoint
    Fit {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        head: Option<HeadVariant>,
        #[arg(long)]
        chunk_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Extract the labeled zero level set of a checkpoint
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        chunk_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a predicted labeled mesh against the ground truth
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a directory of eval reports into mean/std and correlation CSVs
    Aggregate {
        /// directory holding eval report JSON files
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth {
            spec,
            resolution,
            common,
        } => {
            let cfg = resolve(&common, Overrides { resolution, ..Overrides::default() }, false)?;
            cmd_synth(&spec, &cfg, &common.out)
        }
        Command::Fit {
            mesh,
            iterations,
            head,
            chunk_size,
            common,
        } => {
            let o = Overrides {
                iterations,
                head,
                chunk_size,
                ..Overrides::default()
            };
            let cfg = resolve(&common, o, false)?;
            match cfg.precision {
                Precision::F64 => cmd_fit::<f64>(&mesh, &cfg, &common.out),
                Precision::F32 => cmd_fit::<f32>(&mesh, &cfg, &common.out),
            }
        }
        Command::Extract {
            checkpoint,
            resolution,
            chunk_size,
            common,
        } => {
            let o = Overrides {
                resolution,
                chunk_size,
                ..Overrides::default()
            };
            cmd_extract(&checkpoint, &common, o)
        }
        Command::Eval { gt, pred, tau, common } => {
            let cfg = resolve(&common, Overrides { tau, ..Overrides::default() }, false)?;
            match cfg.precision {
                Precision::F64 => cmd_eval::<f64>(&gt, &pred, &cfg, &common.out),
                Precision::F32 => cmd_eval::<f32>(&gt, &pred, &cfg, &common.out),
            }
        }
        Command::Aggregate { input, out } => cmd_aggregate(&input, &out),
    }
}

fn resolve(common: &Common, mut o: Overrides, extraction: bool) -> CliResult<RunConfig> {
    o.seed = common.seed;
    RunConfig::load(common.config.as_deref())?.resolve(&o, extraction)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Runtime(segsdf::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(segsdf::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Runtime(segsdf::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

/// `<path>.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Provenance record written next to mesh and checkpoint outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub config_sha256: String,
    /// input role -> SHA-256 of its bytes
    pub inputs: BTreeMap<String, String>,
    pub output_sha256: String,
}

fn provenance(command: &str, cfg: &RunConfig, inputs: BTreeMap<String, String>, output: &[u8]) -> Provenance {
    Provenance {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        config_sha256: sha256_hex(cfg.to_json().as_bytes()),
        inputs,
        output_sha256: sha256_hex(output),
    }
}

fn write_with_sidecar(path: &Path, bytes: &[u8], prov: &Provenance) -> CliResult<()> {
    write(path, bytes)?;
    let mut side = serde_json::to_vec_pretty(prov).expect("provenance serializes");
    side.push(b'\n');
    write(&sidecar_path(path), &side)
}

fn ply_comments(command: &str, cfg: &RunConfig, inputs: &BTreeMap<String, String>) -> Vec<String> {
    let mut c = vec![format!("segsdf {command} {}", env!("CARGO_PKG_VERSION"))];
    c.extend(inputs.iter().map(|(k, v)| format!("input {k} sha256 {v}")));
    c.push(format!("config {}", cfg.to_json()));
    c
}

/// Serializes a mesh the way [`save_labeled_mesh`] would, returning the bytes
/// of the primary file.
fn save_mesh<T: Scalar>(
    path: &Path,
    mesh: &segsdf::shape_data::LabeledMesh<T>,
    comments: &[String],
) -> CliResult<Vec<u8>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(segsdf::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }))?;
    }
    save_labeled_mesh(path, mesh, comments)?;
    read(path)
}

pub fn cmd_synth(spec_path: &Path, cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let bytes = read(spec_path)?;
    let spec: SyntheticShapeSpec = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Usage(format!("invalid shape spec {}: {e}", spec_path.display())))?;
    spec.validate()
        .map_err(|e| CliError::Usage(format!("invalid shape spec {}: {e}", spec_path.display())))?;
    let mesh = generate_synthetic::<f64>(&spec, cfg.synth_resolution, cfg.seed)?;
    let inputs = BTreeMap::from([("spec".to_string(), sha256_hex(&bytes))]);
    let written = save_mesh(out, &mesh, &ply_comments("synth", cfg, &inputs))?;
    let side = serde_json::to_vec_pretty(&provenance("synth", cfg, inputs, &written)).expect("serializes");
    write(&sidecar_path(out), &side)?;
    log::info!("wrote {} faces to {}", mesh.faces.len(), out.display());
    Ok(())
}

/// Checkpoint header metadata written by `fit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub config: RunConfig,
    pub normalization: Normalization,
    pub mesh_sha256: String,
    pub iterations_done: usize,
}

fn iteration_checkpoint_path(out: &Path, iteration: usize) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(format!(".iter{iteration:06}"));
    PathBuf::from(s)
}

/// `<out>.log.jsonl`
pub fn log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

pub fn cmd_fit<T: Scalar>(mesh_path: &Path, cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let mesh_bytes = read(mesh_path)?;
    let mesh = load_labeled_mesh::<T>(mesh_path)?;
    let mesh_sha = sha256_hex(&mesh_bytes);
    let cloud = sample_surface(&mesh, cfg.surface_samples, cfg.seed)?;
    let (cloud, norm) = normalize(&cloud)?;
    let mut cfg = cfg.clone();
    // one output class per part present in the input mesh
    cfg.train.network.num_classes = mesh.num_parts().max(1);
    cfg.train.validate().map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;

    let mut log = Vec::new();
    writeln!(
        log,
        "{}",
        json!({"header": {"config": &cfg, "weights": &cfg.train.weights, "mesh_sha256": &mesh_sha}})
    )
    .expect("in-memory write");
    let meta = |done: usize| {
        serde_json::to_value(FitMeta {
            config: cfg.clone(),
            normalization: norm,
            mesh_sha256: mesh_sha.clone(),
            iterations_done: done,
        })
        .expect("meta serializes")
    };
    let every = cfg.checkpoint_every;
    let (net, _) = fit_with(&cloud, &cfg.train, |entry, net: &FieldNetwork<T>| {
        serde_json::to_writer(&mut log, entry).expect("entry serializes");
        log.push(b'\n');
        let done = entry.iteration + 1;
        if every > 0 && done % every == 0 && done < cfg.train.iterations {
            fs::write(iteration_checkpoint_path(out, done), encode_checkpoint_with(net, &meta(done)))
                .map_err(|e| segsdf::Error::Io {
                    path: iteration_checkpoint_path(out, done),
                    source: e,
                })?;
        }
        if done % 100 == 0 {
            log::info!("iteration {done}: total {:.6}", entry.loss.total);
        }
        Ok(())
    })
    .map_err(|e| {
        // keep the partial log for diagnosis
        let _ = write(&log_path(out), &log);
        CliError::Runtime(e)
    })?;
    let bytes = encode_checkpoint_with(&net, &meta(cfg.train.iterations));
    let inputs = BTreeMap::from([("mesh".to_string(), mesh_sha.clone())]);
    write_with_sidecar(out, &bytes, &provenance("fit", &cfg, inputs, &bytes))?;
    write(&log_path(out), &log)
}

pub fn cmd_extract(checkpoint: &Path, common: &Common, o: Overrides) -> CliResult<()> {
    let bytes = read(checkpoint)?;
    // precision is not known before reading the header, and f64 holds both
    let (_, meta) = decode_checkpoint_with::<f64>(&bytes)?;
    let meta: FitMeta = serde_json::from_value(meta)
        .map_err(|e| CliError::Runtime(segsdf::Error::Checkpoint(format!("missing fit metadata: {e}"))))?;
    // the checkpoint's own config is the base unless a file is given
    let base = match &common.config {
        Some(p) => RunConfig::load(Some(p))?,
        None => meta.config.clone(),
    };
    let mut o = o;
    o.seed = common.seed;
    let cfg = base.resolve(&o, true)?;
    let inputs = BTreeMap::from([("checkpoint".to_string(), sha256_hex(&bytes))]);
    let written = match meta.config.precision {
        Precision::F64 => extract_to::<f64>(&bytes, &meta, &cfg, &inputs, &common.out)?,
        Precision::F32 => extract_to::<f32>(&bytes, &meta, &cfg, &inputs, &common.out)?,
    };
    let side = serde_json::to_vec_pretty(&provenance("extract", &cfg, inputs, &written)).expect("serializes");
    write(&sidecar_path(&common.out), &side)
}

fn extract_to<T: Scalar>(
    bytes: &[u8],
    meta: &FitMeta,
    cfg: &RunConfig,
    inputs: &BTreeMap<String, String>,
    out: &Path,
) -> CliResult<Vec<u8>> {
    let (net, _) = decode_checkpoint_with::<T>(bytes)?;
    let mesh = extract_mesh(&net, &cfg.grid, &meta.normalization)?;
    log::info!("extracted {} faces at {}^3", mesh.faces.len(), cfg.grid.resolution);
    save_mesh(out, &mesh, &ply_comments("extract", cfg, inputs))
}

/// One evaluation record as written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// segmentation head the run config names; groups aggregation rows
    pub variant: String,
    pub metrics: ShapeMetrics,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
}

pub fn cmd_eval<T: Scalar>(gt_path: &Path, pred_path: &Path, cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let gt_bytes = read(gt_path)?;
    let pred_bytes = read(pred_path)?;
    let gt = load_labeled_mesh::<T>(gt_path)?;
    let pred = load_labeled_mesh::<T>(pred_path)?;
    let metrics = evaluate_shape(&gt, &pred, &cfg.eval)?;
    let report = EvalReport {
        variant: cfg.train.network.head.as_str().to_string(),
        metrics,
        config: cfg.clone(),
        inputs: BTreeMap::from([
            ("gt".to_string(), sha256_hex(&gt_bytes)),
            ("pred".to_string(), sha256_hex(&pred_bytes)),
        ]),
    };
    let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    bytes.push(b'\n');
    write(out, &bytes)
}

/// `<out stem>_correlation.csv` next to `out`.
pub fn correlation_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_correlation.csv"))
}

pub fn cmd_aggregate(dir: &Path, out: &Path) -> CliResult<()> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Runtime(segsdf::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut records = Vec::new();
    for p in paths {
        // sidecars and other JSON files are skipped
        if let Ok(r) = serde_json::from_slice::<EvalReport>(&read(&p)?) {
            records.push((r.variant, r.metrics));
        }
    }
    if records.is_empty() {
        return Err(CliError::Usage(format!("no eval reports in {}", dir.display())));
    }
    let mut csv = String::from("variant,metric,mean,std,n\n");
    for r in aggregate(&records) {
        csv.push_str(&format!("{},{},{},{},{}\n", r.variant, r.metric, r.mean, r.std, r.n));
    }
    write(out, csv.as_bytes())?;
    let metrics: Vec<ShapeMetrics> = records.into_iter().map(|(_, m)| m).collect();
    let mut corr = String::from("reconstruction,segmentation,pearson_r\n");
    for c in correlations(&metrics) {
        let r = c.r.map_or_else(|| "undefined".to_string(), |r| r.to_string());
        corr.push_str(&format!("{},{},{}\n", c.reconstruction, c.segmentation, r));
    }
    write(&correlation_path(out), corr.as_bytes())
}

/// Installs a stderr logger at `info` level; environment variables are not
/// consulted.
pub fn init_logging() {
    let _ = env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}
