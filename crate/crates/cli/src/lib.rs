//! Command-line driver: argument parsing, config resolution and the six subcommands.

pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use inceptnet::data::{
    binarize_mask, file_stems, DatasetSpec, generate_synthetic, load_image, load_probability_map, save_image, save_probability_map,
    to_grayscale, StructureScale,
};
use inceptnet::gradcheck::{check_all_ops, check_graph, CheckResult};
use inceptnet::metrics::{binarize, evaluate_maps, roc_csv};
use inceptnet::network::{
    build_model, checkpoint_spec, count_parameters, decode_checkpoint, published_total, NetworkSpec, Variant,
};
use inceptnet::ops::bilinear_resize;
use inceptnet::training::{train, EPOCH_CSV};
use inceptnet::{Error, Tensor4};

pub use config::{RunConfig, DESK_FILTERS, SNAPSHOT};

pub const EXIT_OK: i32 = 0;
/// A check ran and its verdict is negative (audit gap, gradient mismatch).
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
            Error::Io { .. } => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "inceptnet", version, about = "Binary segmentation with Inception blocks and ConvLSTM skip fusion")]
pub struct Cli {
    /// Run configuration (TOML); flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer parameter counts against the closed form and an expected total.
    Audit(AuditArgs),
    /// Train and keep the checkpoint with the lowest validation loss.
    Train(TrainArgs),
    /// Write probability maps and binary masks for images.
    Predict(PredictArgs),
    /// Score predicted maps against truth masks.
    Eval(EvalArgs),
    /// Finite-difference check of the backward passes.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic image/mask set.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Four comma-separated encoder widths.
    #[arg(long, value_delimiter = ',')]
    pub filters: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Expected total; defaults to the published figure when one exists.
    #[arg(long)]
    pub expect: Option<usize>,
    /// Allowed relative gap to the expected total.
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Small,
    Large,
}

impl From<Scale> for StructureScale {
    fn from(s: Scale) -> Self {
        match s {
            Scale::Small => StructureScale::Small,
            Scale::Large => StructureScale::Large,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Train on generated data instead of the configured dataset.
    #[arg(long, value_enum)]
    pub synthetic: Option<Scale>,
    /// Directory with `images/` and `masks/`.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Image side length: generated size for synthetic data, expected size for a directory.
    #[arg(long)]
    pub size: Option<usize>,
    /// Number of synthetic images.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Probability maps (or binary masks) named like the truth masks.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Row label in the metrics CSV.
    #[arg(long, default_value = "eval")]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    Op,
    Graph,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Scope::Op)]
    pub scope: Scope,
    /// Graph scope: sampled entries per parameter tensor.
    #[arg(long, default_value_t = 3)]
    pub per_tensor: usize,
    /// Graph scope: variant to check.
    #[arg(long, default_value_t = Variant::Inceptnet)]
    pub variant: Variant,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Scale::Small)]
    pub scale: Scale,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<i32> {
    match &cli.command {
        Command::Audit(a) => cmd_audit(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Predict(a) => cmd_predict(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Gradcheck(a) => cmd_gradcheck(cli, a),
        Command::Synth(a) => cmd_synth(cli, a),
    }
}

fn base_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn apply_model(spec: &mut NetworkSpec, m: &ModelArgs) {
    if let Some(v) = m.variant {
        spec.variant = v;
    }
    if let Some(d) = m.d {
        spec.d = d;
    }
    if let Some(f) = &m.filters {
        spec.base_filters = f.clone();
    }
}

fn output_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn cmd_audit(cli: &Cli, a: &AuditArgs) -> CliResult<i32> {
    let mut spec = match &cli.config {
        Some(_) => base_config(cli)?.network,
        None => NetworkSpec::new(Variant::Inceptnet, 3, [64, 64, 1]),
    };
    apply_model(&mut spec, &a.model);
    if !(a.tol >= 0.0) {
        return Err(usage(format!("--tol {} must be non-negative", a.tol)));
    }
    let report = count_parameters(&build_model(&spec)?);
    let full_width = spec.base_filters == [64, 128, 256, 512] && spec.input_shape[2] == 1;
    let expected = a
        .expect
        .or_else(|| full_width.then(|| published_total(spec.variant, spec.d)).flatten());
    print!("{}", report.render(expected));
    let mismatches = report.closed_form_mismatches();
    if !mismatches.is_empty() {
        println!("closed-form mismatches: {}", mismatches.len());
        return Ok(EXIT_CHECK_FAILED);
    }
    match expected {
        Some(n) => {
            let gap = report.relative_gap(n);
            let ok = gap.abs() <= a.tol;
            println!(
                "verdict: {} (gap {:+.2}% against {n}, tolerance {:.2}%)",
                if ok { "PASS" } else { "FAIL" },
                gap * 100.0,
                a.tol * 100.0
            );
            Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        None => Ok(EXIT_OK),
    }
}

/// Resolves file values and `train` flags into the config the run will use.
pub fn resolve_train_config(cli: &Cli, a: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = base_config(cli)?;
    apply_model(&mut cfg.network, &a.model);
    if let Some(scale) = a.synthetic {
        let (count, size) = cfg.dataset.synthetic.map_or((16, 64), |s| (s.count, s.size));
        let val_fraction = cfg.dataset.val_fraction;
        cfg.dataset = DatasetSpec::synthetic(count, size, scale.into());
        cfg.dataset.val_fraction = val_fraction;
    }
    if let Some(root) = &a.data {
        cfg.dataset.synthetic = None;
        cfg.dataset.root = Some(root.clone());
    }
    if let Some(size) = a.size {
        cfg.dataset.input_size = [size, size, cfg.dataset.input_size[2]];
        if let Some(s) = cfg.dataset.synthetic.as_mut() {
            s.size = size;
        }
    }
    if let Some(count) = a.count {
        let s = cfg
            .dataset
            .synthetic
            .as_mut()
            .ok_or_else(|| usage("--count applies to synthetic data only"))?;
        s.count = count;
    }
    cfg.network.input_shape = cfg.dataset.input_size;
    if let Some(v) = a.max_epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = a.patience {
        cfg.train.patience = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.dropout {
        cfg.network.dropout_rate = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> CliResult<i32> {
    let cfg = resolve_train_config(cli, a)?;
    let (train_set, val_set) = cfg.dataset.prepare(cfg.train.seed)?;
    let mut graph = build_model(&cfg.network)?;
    create_dir(&cfg.output_dir)?;
    cfg.write_snapshot(&cfg.output_dir)?;
    let outcome = train(&mut graph, &train_set, &val_set, &cfg.train, &cfg.output_dir)?;
    let last = outcome.logs.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} images ({} validation)",
        outcome.logs.len(),
        train_set.len(),
        val_set.len()
    );
    println!(
        "last epoch: train loss {:.6} acc {:.4}, val loss {:.6} acc {:.4}",
        last.train_loss, last.train_accuracy, last.val_loss, last.val_accuracy
    );
    if let Some(b) = outcome.best() {
        println!("best epoch {} val loss {:.6} -> {}", b.epoch, b.val_loss, outcome.best_checkpoint.display());
    }
    println!("epoch log: {}", cfg.output_dir.join(EPOCH_CSV).display());
    Ok(EXIT_OK)
}

fn image_paths(input: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    if input.is_dir() {
        Ok(file_stems(input)?.into_iter().collect())
    } else if input.is_file() {
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| usage(format!("{} has no usable file name", input.display())))?;
        Ok(vec![(stem.to_string(), input.to_path_buf())])
    } else {
        Err(usage(format!("input {} does not exist", input.display())))
    }
}

fn cmd_predict(cli: &Cli, a: &PredictArgs) -> CliResult<i32> {
    let cfg = match &cli.config {
        Some(_) => Some(base_config(cli)?),
        None => None,
    };
    let threshold = a.threshold.or(cfg.as_ref().map(|c| c.threshold)).unwrap_or(0.5);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(usage(format!("threshold {threshold} outside (0, 1)")));
    }
    let bytes = std::fs::read(&a.checkpoint).map_err(|e| io_err(&a.checkpoint, e))?;
    let spec = checkpoint_spec(&bytes)?;
    let graph = decode_checkpoint(&bytes, &spec)?;
    let [h, w, c] = spec.input_shape;
    let out = output_dir(cli, cfg.as_ref());
    let (prob_dir, mask_dir) = (out.join("prob"), out.join("mask"));
    create_dir(&prob_dir)?;
    create_dir(&mask_dir)?;
    let paths = image_paths(&a.input)?;
    if paths.is_empty() {
        return Err(usage(format!("no images in {}", a.input.display())));
    }
    for (stem, path) in &paths {
        let mut img = load_image(path)?;
        if img.shape().c == 3 && c == 1 {
            img = to_grayscale(&img)?;
        }
        if let Some([rh, rw]) = cfg.as_ref().and_then(|c| c.dataset.resize) {
            img = bilinear_resize(&img, rh, rw)?;
        }
        let s = img.shape();
        if (s.h, s.w, s.c) != (h, w, c) {
            return Err(usage(format!(
                "{} is {}x{}x{} but the checkpoint expects {h}x{w}x{c}",
                path.display(),
                s.h,
                s.w,
                s.c
            )));
        }
        let p = graph.predict(&img)?;
        save_probability_map(&prob_dir.join(format!("{stem}.pgm")), &p)?;
        save_image(&mask_dir.join(format!("{stem}.pgm")), &binarize(&p, threshold))?;
    }
    println!("wrote {} probability maps to {} and masks to {}", paths.len(), prob_dir.display(), mask_dir.display());
    Ok(EXIT_OK)
}

fn gray(t: Tensor4) -> CliResult<Tensor4> {
    Ok(if t.shape().c == 3 { to_grayscale(&t)? } else { t })
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> CliResult<i32> {
    let cfg = match &cli.config {
        Some(_) => Some(base_config(cli)?),
        None => None,
    };
    let threshold = a.threshold.or(cfg.as_ref().map(|c| c.threshold)).unwrap_or(0.5);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(usage(format!("threshold {threshold} outside (0, 1)")));
    }
    let preds = file_stems(&a.pred)?;
    let truths = file_stems(&a.truth)?;
    let unmatched: Vec<&str> = preds
        .keys()
        .filter(|k| !truths.contains_key(*k))
        .chain(truths.keys().filter(|k| !preds.contains_key(*k)))
        .map(String::as_str)
        .collect();
    if !unmatched.is_empty() {
        return Err(usage(format!("files without a partner: {}", unmatched.join(", "))));
    }
    if preds.is_empty() {
        return Err(usage(format!("no files in {}", a.pred.display())));
    }
    let mut probs = Vec::with_capacity(preds.len());
    let mut masks = Vec::with_capacity(preds.len());
    for (stem, path) in &preds {
        probs.push(gray(load_probability_map(path)?)?);
        masks.push(binarize_mask(&gray(load_image(&truths[stem])?)?));
    }
    let eval = evaluate_maps(&probs, &masks, threshold)?;
    let out = output_dir(cli, cfg.as_ref());
    create_dir(&out)?;
    let mut csv = eval.to_csv(&a.name);
    for ((stem, _), r) in preds.iter().zip(&eval.per_image) {
        csv.push_str(&r.csv_row(&a.name, stem));
        csv.push('\n');
    }
    write_file(&out.join("metrics.csv"), &csv)?;
    print!("{}", eval.to_csv(&a.name));
    match &eval.roc {
        Some(curve) => write_file(&out.join("roc.csv"), &roc_csv(curve))?,
        None => println!("ROC undefined: the truth masks contain a single class"),
    }
    Ok(EXIT_OK)
}

fn print_check(r: &CheckResult) {
    let skipped = if r.skipped > 0 {
        format!(" ({} kink probes skipped)", r.skipped)
    } else {
        String::new()
    };
    println!(
        "{:<22} max rel err {:.3e}  tolerance {:.0e}  entries {:>4}  {}{skipped}",
        r.name,
        r.max_rel_err,
        r.tolerance,
        r.entries,
        if r.passed() { "PASS" } else { "FAIL" }
    );
}

fn cmd_gradcheck(cli: &Cli, a: &GradcheckArgs) -> CliResult<i32> {
    let seed = cli.seed.unwrap_or(0);
    let results = match a.scope {
        Scope::Op => check_all_ops(seed)?,
        Scope::Graph => [1, 3]
            .into_iter()
            .map(|d| check_graph(a.variant, d, a.per_tensor, seed))
            .collect::<inceptnet::Result<_>>()?,
    };
    results.iter().for_each(print_check);
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed", results.len());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> CliResult<i32> {
    let out = output_dir(cli, None);
    let pairs = generate_synthetic(a.count, a.size, a.scale.into(), cli.seed.unwrap_or(0))?;
    let (images, masks) = (out.join("images"), out.join("masks"));
    create_dir(&images)?;
    create_dir(&masks)?;
    for p in &pairs {
        save_image(&images.join(format!("{}.pgm", p.source_id)), &p.image)?;
        save_image(&masks.join(format!("{}.pgm", p.source_id)), &p.mask)?;
    }
    println!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(EXIT_OK)
}
