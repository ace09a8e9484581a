//! `cloudop`: generate flows and clouds, train and evaluate operators, audit
//! invariance, benchmark scaling and export contour plots.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 failed assertion, 1 anything else. Failures also print one JSON error
//! record on stderr.

mod config;
mod contour;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use cloudop_core::bench::run_scaling;
use cloudop_core::cloudgen::{build_dataset, io as dsio, Dataset};
use cloudop_core::fieldgen::{cylinder_case, snapshot};
use cloudop_core::numnet::Checkpoint;
use cloudop_core::trainer::{
    audit_csv, evaluate, fit, history_csv, invariance_audit, AuditRow, EvalReport, ModelKind, Network, TrainedModel,
    Transform,
};
use cloudop_core::{Error, Scalar};
use rand::SeedableRng;

use config::{Precision, RunConfig};
use contour::ContourGrid;
use manifest::{write_atomic, RunManifest};

/// Worker threads for data-parallel sections; `--deterministic` forces one.
pub const THREADS_ENV: &str = "CLOUDOP_THREADS";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Assertion(String),
    Io(String),
    Core(Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn kind(&self) -> &'static str {
        match self.code() {
            2 => "config",
            3 => "numerical",
            4 => "assertion",
            _ => "other",
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Assertion(_) => 4,
            CliError::Io(_) => 1,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) | Error::Parse { .. } | Error::Dimension { .. } | Error::MemoryBudget { .. } => 2,
                Error::NonFinite(_)
                | Error::NonFiniteGradient { .. }
                | Error::NoConvergence { .. }
                | Error::Diverged { .. }
                | Error::UndefinedMetric(_)
                | Error::Sampling { .. } => 3,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Numerical(m) | CliError::Assertion(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "cloudop", version, about = "Frame-invariant neural operators on flow point clouds")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Serial reductions and a single worker thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the tracer on cylinder flows, one snapshot CSV per angle.
    GenFlow(GenFlowArgs),
    /// Sample labelled clouds from snapshots.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Error of a model (or of given predictions) on a dataset.
    Eval(EvalArgs),
    /// Prediction changes under frame transforms.
    Audit(AuditArgs),
    /// Memory and epoch-time scaling with stencil size.
    Bench(BenchArgs),
    /// Contour CSV and SVG heatmap of fields or predictions.
    ExportContour(ContourArgs),
}

#[derive(Args)]
struct GenFlowArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Flow angles in degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    angles: Option<Vec<f64>>,
    /// Observer frame rotation in degrees.
    #[arg(long, allow_hyphen_values = true)]
    frame_rotation: Option<f64>,
    /// Rotate each snapshot's frame by its flow angle.
    #[arg(long)]
    rotate_by_angle: bool,
    /// Cell size.
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, num_args = 1.., required = true)]
    snapshots: Vec<PathBuf>,
    /// Dataset file, or a directory with `--per-snapshot`.
    #[arg(long)]
    out: PathBuf,
    /// One dataset per snapshot, named after it.
    #[arg(long)]
    per_snapshot: bool,
    /// Also write a CSV dump next to each dataset.
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    stencil: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; the epoch log goes beside it as `<stem>.log.csv`.
    #[arg(long)]
    out: PathBuf,
    /// gkn_ri, gkn_raw, vcnn or vcnn_split.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_halving: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    precision: Option<Precision>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    model: Option<PathBuf>,
    /// CSV with a `prediction` column, one row per sample.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Per-sample CSV report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail with exit code 4 above this error percentage.
    #[arg(long)]
    max_error: Option<f64>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// rot:<deg>, trans:<dx>,<dy> or perm:<seed>; repeatable.
    #[arg(long = "transform")]
    transforms: Vec<String>,
    /// Audit only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail with exit code 4 when any relative deviation exceeds this.
    #[arg(long)]
    max_deviation: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    #[arg(long)]
    memory_samples: Option<usize>,
    /// 0 skips the timing series.
    #[arg(long)]
    timing_samples: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Fail with exit code 4 unless the payload slopes are exactly 2 (GKN)
    /// and 1 (VCNN) and the GKN time slope exceeds the VCNN one.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct ContourArgs {
    /// Output prefix: `<prefix>.svg` plus one `<prefix>_<panel>.csv` each.
    #[arg(long)]
    out_prefix: PathBuf,
    /// Snapshot CSVs to plot side by side.
    #[arg(long, num_args = 1..)]
    snapshot: Vec<PathBuf>,
    #[arg(long, default_value = "tau")]
    column: String,
    /// Dataset whose labels are plotted against model predictions.
    #[arg(long, conflicts_with = "snapshot")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    model: Option<PathBuf>,
    #[arg(long, requires = "data", conflicts_with = "model")]
    predictions: Option<PathBuf>,
}

/// A trained model in whichever precision its checkpoint was written.
enum AnyModel {
    F32(TrainedModel<f32>),
    F64(TrainedModel<f64>),
}

impl AnyModel {
    fn load(path: &Path) -> CliResult<Self> {
        let ck = Checkpoint::load(path)?;
        match ck.get("scalar")? {
            "f32" => Ok(AnyModel::F32(TrainedModel::from_checkpoint(&ck)?)),
            "f64" => Ok(AnyModel::F64(TrainedModel::from_checkpoint(&ck)?)),
            other => Err(CliError::Config(format!("{}: unknown scalar type `{other}`", path.display()))),
        }
    }

    fn evaluate(&self, data: &Dataset) -> CliResult<EvalReport> {
        Ok(match self {
            AnyModel::F32(m) => evaluate(m, data)?,
            AnyModel::F64(m) => evaluate(m, data)?,
        })
    }

    fn audit(&self, data: &Dataset, transforms: &[Transform]) -> CliResult<Vec<AuditRow>> {
        Ok(match self {
            AnyModel::F32(m) => invariance_audit(m, data, transforms)?,
            AnyModel::F64(m) => invariance_audit(m, data, transforms)?,
        })
    }
}

fn write_file(path: &Path, data: &[u8], manifest: &mut RunManifest) -> CliResult<()> {
    write_atomic(path, data)?;
    manifest.output(path)
}

fn dir_of(path: &Path) -> PathBuf {
    path.parent()
        .filter(|d| !d.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_dataset(path: &Path, manifest: &mut RunManifest) -> CliResult<Dataset> {
    if !path.exists() {
        return Err(CliError::Config(format!("dataset {} does not exist", path.display())));
    }
    manifest.input(path)?;
    Ok(dsio::load_dataset(path)?)
}

fn angle_tag(deg: f64) -> String {
    format!("{deg}").replace('-', "m").replace('.', "p")
}

fn gen_flow(cfg: &mut RunConfig, args: GenFlowArgs, manifest: &mut RunManifest) -> CliResult<PathBuf> {
    if let Some(a) = args.angles {
        cfg.flow.angles = a;
    }
    if let Some(r) = args.frame_rotation {
        cfg.flow.frame_rotation = r;
    }
    cfg.flow.rotate_by_angle |= args.rotate_by_angle;
    if let Some(h) = args.h {
        cfg.case.h = h;
    }
    if cfg.flow.angles.is_empty() {
        return Err(CliError::Config("no flow angles given".into()));
    }
    let echo: Vec<(String, String)> = cfg
        .to_toml()
        .lines()
        .filter(|l| l.contains('='))
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k.trim().to_string(), v.trim().to_string())
        })
        .collect();
    for &angle in &cfg.flow.angles {
        let rot = if cfg.flow.rotate_by_angle { angle } else { cfg.flow.frame_rotation };
        let field = cylinder_case(&cfg.case, angle.to_radians(), rot.to_radians())?;
        let path = args
            .out_dir
            .join(format!("flow_a{}_r{}.csv", angle_tag(angle), angle_tag(rot)));
        write_file(&path, snapshot::to_csv(&field, &echo).as_bytes(), manifest)?;
        log::info!("wrote {}", path.display());
    }
    Ok(args.out_dir)
}

fn gen_data(cfg: &mut RunConfig, args: GenDataArgs, manifest: &mut RunManifest) -> CliResult<PathBuf> {
    if let Some(n) = args.stencil {
        cfg.sampling.stencil = n;
    }
    if let Some(s) = args.seed {
        cfg.sampling.seed = s;
    }
    if let Some(e) = args.eps {
        cfg.sampling.eps = e;
    }
    manifest.seeds.push(("sampling".into(), cfg.sampling.seed));
    let mut fields = Vec::with_capacity(args.snapshots.len());
    for p in &args.snapshots {
        if !p.exists() {
            return Err(CliError::Config(format!("snapshot {} does not exist; run gen-flow first", p.display())));
        }
        manifest.input(p)?;
        fields.push(snapshot::load(p)?);
    }
    let mut save = |ds: &Dataset, path: &Path| -> CliResult<()> {
        write_file(path, &dsio::to_bytes(ds)?, manifest)?;
        if args.csv {
            write_file(&path.with_extension("csv"), dsio::to_csv(ds).as_bytes(), manifest)?;
        }
        log::info!("wrote {} ({} samples, n = {})", path.display(), ds.len(), ds.meta.stencil);
        Ok(())
    };
    if args.per_snapshot {
        for (p, f) in args.snapshots.iter().zip(&fields) {
            let ds = build_dataset(std::slice::from_ref(f), &cfg.sampling, None)?;
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            save(&ds, &args.out.join(format!("{stem}.vcld")))?;
        }
        Ok(args.out)
    } else {
        let ds = build_dataset(&fields, &cfg.sampling, None)?;
        save(&ds, &args.out)?;
        Ok(dir_of(&args.out))
    }
}

fn train_as<T: Scalar>(cfg: &RunConfig, data: &Dataset) -> CliResult<(Checkpoint, String, f64)> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let network = Network::<T>::new(cfg.train.kind, &mut rng)?;
    let (model, history) = fit(network, data, &cfg.train)?;
    let err = evaluate(&model, data)?.error_pct;
    Ok((model.to_checkpoint(), history_csv(&history), err))
}

fn train_cmd(cfg: &mut RunConfig, args: TrainArgs, manifest: &mut RunManifest, deterministic: bool) -> CliResult<PathBuf> {
    let t = &mut cfg.train;
    if let Some(m) = &args.model {
        t.kind = ModelKind::from_tag(m)?;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.lr_halving {
        t.lr_halving_epochs = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    t.deterministic |= deterministic;
    if let Some(p) = args.precision {
        cfg.precision = p;
    }
    cfg.train.validate()?;
    manifest.seeds.push(("train".into(), cfg.train.seed));
    let data = load_dataset(&args.data, manifest)?;
    let (ck, log_csv, err) = match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg, &data)?,
        Precision::F64 => train_as::<f64>(cfg, &data)?,
    };
    write_file(&args.out, &ck.to_bytes(), manifest)?;
    write_file(&args.out.with_extension("log.csv"), log_csv.as_bytes(), manifest)?;
    println!("{}", serde_json::json!({ "model": cfg.train.kind.tag(), "train_error_pct": err }));
    Ok(dir_of(&args.out))
}

fn read_predictions(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CliError::Config(format!("{} is empty", path.display())))?;
    let col = header
        .split(',')
        .position(|h| h.trim() == "prediction")
        .ok_or_else(|| CliError::Config(format!("{} has no `prediction` column", path.display())))?;
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::Config(format!("{} line {}: no numeric prediction", path.display(), i + 2)))
        })
        .collect()
}

fn report_csv(r: &EvalReport) -> String {
    let mut out = String::from("index,label,prediction,abs_error\n");
    for (i, ((l, p), e)) in r.labels.iter().zip(&r.predictions).zip(&r.abs_errors).enumerate() {
        out.push_str(&format!("{i},{l},{p},{e}\n"));
    }
    out
}

fn eval_cmd(args: EvalArgs, manifest: &mut RunManifest) -> CliResult<PathBuf> {
    let data = load_dataset(&args.data, manifest)?;
    let report = if let Some(p) = &args.predictions {
        manifest.input(p)?;
        let preds = read_predictions(p)?;
        if preds.len() != data.len() {
            return Err(CliError::Config(format!("{} predictions for {} samples", preds.len(), data.len())));
        }
        EvalReport::from_predictions(preds, data.labels())?
    } else {
        let path = args.model.as_ref().expect("clap requires model or predictions");
        manifest.input(path)?;
        AnyModel::load(path)?.evaluate(&data)?
    };
    if let Some(out) = &args.out {
        write_file(out, report_csv(&report).as_bytes(), manifest)?;
    }
    println!("{}", serde_json::json!({ "samples": data.len(), "error_pct": report.error_pct }));
    if let Some(max) = args.max_error {
        if !(report.error_pct <= max) {
            return Err(CliError::Assertion(format!("error {:.4}% exceeds {max}%", report.error_pct)));
        }
    }
    Ok(args.out.as_deref().map(dir_of).unwrap_or_else(|| dir_of(&args.data)))
}

fn audit_cmd(args: AuditArgs, manifest: &mut RunManifest) -> CliResult<PathBuf> {
    let mut data = load_dataset(&args.data, manifest)?;
    if let Some(n) = args.limit {
        data.samples.truncate(n);
    }
    manifest.input(&args.model)?;
    let model = AnyModel::load(&args.model)?;
    let specs = if args.transforms.is_empty() {
        vec!["rot:35".into(), "rot:70".into(), "rot:90".into(), "rot:180".into()]
    } else {
        args.transforms
    };
    let transforms = specs.iter().map(|s| Transform::parse(s)).collect::<Result<Vec<_>, _>>()?;
    let rows = model.audit(&data, &transforms)?;
    if let Some(out) = &args.out {
        write_file(out, audit_csv(&rows).as_bytes(), manifest)?;
    }
    for r in &rows {
        println!("{}", serde_json::json!({ "transform": r.transform, "max_deviation": r.max_deviation }));
    }
    if let Some(tol) = args.max_deviation {
        if let Some(bad) = rows.iter().find(|r| !(r.max_deviation <= tol)) {
            return Err(CliError::Assertion(format!(
                "{} deviates by {:e}, above {tol:e}",
                bad.transform, bad.max_deviation
            )));
        }
    }
    Ok(args.out.as_deref().map(dir_of).unwrap_or_else(|| dir_of(&args.data)))
}

fn bench_cmd(cfg: &mut RunConfig, args: BenchArgs, manifest: &mut RunManifest) -> CliResult<PathBuf> {
    let b = &mut cfg.bench;
    if let Some(s) = args.sizes {
        b.stencil_sizes = s;
    }
    if let Some(m) = &args.models {
        b.kinds = m.iter().map(|t| ModelKind::from_tag(t)).collect::<Result<_, _>>()?;
    }
    if let Some(v) = args.memory_samples {
        b.memory_samples = v;
    }
    if let Some(v) = args.timing_samples {
        b.timing_samples = v;
    }
    if let Some(v) = args.repetitions {
        b.repetitions = v;
    }
    manifest.seeds.push(("bench".into(), b.seed));
    let report = match cfg.precision {
        Precision::F32 => run_scaling::<f32>(&cfg.bench)?,
        Precision::F64 => run_scaling::<f64>(&cfg.bench)?,
    };
    write_file(&args.out, report.to_csv().as_bytes(), manifest)?;
    for (name, slope) in &report.slopes {
        println!("{}", serde_json::json!({ "series": name, "slope": slope }));
    }
    if args.check {
        let mut failures = Vec::new();
        for k in &cfg.bench.kinds {
            let want = if k.is_gkn() { 2.0 } else { 1.0 };
            match report.slope(&format!("{k} payload")) {
                Some(s) if s == want => {}
                other => failures.push(format!("{k} payload slope {other:?}, expected {want}")),
            }
        }
        let time = |k: ModelKind| report.slope(&format!("{k} epoch_time"));
        for g in cfg.bench.kinds.iter().filter(|k| k.is_gkn()) {
            for v in cfg.bench.kinds.iter().filter(|k| !k.is_gkn()) {
                if let (Some(a), Some(b)) = (time(*g), time(*v)) {
                    if !(a > b) {
                        failures.push(format!("{g} time slope {a:.3} does not exceed {v} time slope {b:.3}"));
                    }
                }
            }
        }
        if !failures.is_empty() {
            return Err(CliError::Assertion(failures.join("; ")));
        }
    }
    Ok(dir_of(&args.out))
}

fn contour_cmd(args: ContourArgs, manifest: &mut RunManifest) -> CliResult<PathBuf> {
    let mut grids = Vec::new();
    if let Some(dp) = &args.data {
        let data = load_dataset(dp, manifest)?;
        let preds = if let Some(p) = &args.predictions {
            manifest.input(p)?;
            read_predictions(p)?
        } else if let Some(m) = &args.model {
            manifest.input(m)?;
            AnyModel::load(m)?.evaluate(&data)?.predictions
        } else {
            Vec::new()
        };
        grids.push(ContourGrid::from_samples("truth", &data, &data.labels())?);
        if !preds.is_empty() {
            grids.push(ContourGrid::from_samples("prediction", &data, &preds)?);
        }
    } else {
        if args.snapshot.is_empty() {
            return Err(CliError::Config("give --snapshot files or --data".into()));
        }
        for p in &args.snapshot {
            manifest.input(p)?;
            let mut g = ContourGrid::from_field(&snapshot::load(p)?, &args.column)?;
            g.title = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or(g.title);
            grids.push(g);
        }
    }
    let svg = contour::render_svg(&grids)?;
    let prefix = args.out_prefix.to_string_lossy().into_owned();
    for (i, g) in grids.iter().enumerate() {
        let name = if grids.len() == 1 { format!("{prefix}.csv") } else { format!("{prefix}_{i}.csv") };
        write_file(Path::new(&name), g.to_csv().as_bytes(), manifest)?;
    }
    write_file(Path::new(&format!("{prefix}.svg")), svg.as_bytes(), manifest)?;
    Ok(dir_of(&args.out_prefix))
}

fn configure_threads(deterministic: bool) -> CliResult<()> {
    let threads = if deterministic {
        Some(1)
    } else {
        match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
            ),
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads(cli.deterministic)?;
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let start = Instant::now();
    let name = match &cli.command {
        Command::GenFlow(_) => "gen-flow",
        Command::GenData(_) => "gen-data",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Audit(_) => "audit",
        Command::Bench(_) => "bench",
        Command::ExportContour(_) => "export-contour",
    };
    let mut manifest = RunManifest::new(name, String::new());
    manifest.deterministic = cli.deterministic;
    if let Some(c) = &cli.config {
        manifest.input(c)?;
    }
    let result = match cli.command {
        Command::GenFlow(a) => gen_flow(&mut cfg, a, &mut manifest),
        Command::GenData(a) => gen_data(&mut cfg, a, &mut manifest),
        Command::Train(a) => train_cmd(&mut cfg, a, &mut manifest, cli.deterministic),
        Command::Eval(a) => eval_cmd(a, &mut manifest),
        Command::Audit(a) => audit_cmd(a, &mut manifest),
        Command::Bench(a) => bench_cmd(&mut cfg, a, &mut manifest),
        Command::ExportContour(a) => contour_cmd(a, &mut manifest),
    };
    manifest.config = cfg.to_toml();
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(dir) => {
            manifest.write(&dir)?;
            Ok(())
        }
        // Assertion failures still produced artifacts worth recording.
        Err(CliError::Assertion(m)) => {
            if !manifest.outputs.is_empty() {
                let dir = dir_of(Path::new(&manifest.outputs[0].path));
                manifest.write(&dir)?;
            }
            Err(CliError::Assertion(m))
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let CliError::Core(Error::NoConvergence { history, .. }) = &e {
                let tail = &history[history.len().saturating_sub(10)..];
                log::error!("last residuals: {tail:?}");
            }
            eprintln!(
                "{}",
                serde_json::json!({ "error": { "kind": e.kind(), "code": e.code(), "message": e.to_string() } })
            );
            ExitCode::from(e.code())
        }
    }
}
