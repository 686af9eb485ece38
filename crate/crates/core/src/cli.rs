//! Command-line front end. Every command prints one `OK <command> ...` line
//! on success and writes `run.meta` (the resolved configuration) next to its
//! outputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::corruptions::{build_suite, Family, Severity, SuiteOptions, SUITE_MANIFEST_FILE};
use crate::data_io::{generate_synthetic, load_dataset, read_cloud, resample_to_n, write_cloud, CloudFormat, Split};
use crate::diagnostics::gradcheck_suite;
use crate::error::{Error, Result};
use crate::eval::{corruption_error, dump_predictions, evaluate_suite, render_report, MetricsTable};
use crate::geom::PointCloud;
use crate::imitator::{ImitateOptions, Imitator};
use crate::nn::checkpoint::{load_into, read_checkpoint};
use crate::render::{render_svg, Coloring, RenderOptions};
use crate::rng::RngStream;
use crate::simulator::{apply_mask, MaskMode};
use crate::training::{train, TrainConfig};

pub const RUN_META_FILE: &str = "run.meta";
pub const ERRORS_FILE: &str = "errors.tsv";
pub const REPORT_FILE: &str = "report.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.txt";
const GRADCHECK_TOL: f64 = 1e-4;
const AUGMENT_TAG: u64 = 0x61756720;

#[derive(Parser, Debug)]
#[command(name = "adaptpoint", version, about = "Point-cloud corruption imitation, benchmarks and robust training")]
pub struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// `key=value` file overriding defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic shape dataset.
    GenData,
    /// Build a corruption suite from a dataset split.
    Corrupt(CorruptArgs),
    /// Train the classifier (with or without the imitator loop).
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corruption suite.
    Eval(EvalArgs),
    /// Run a trained imitator over clouds.
    Augment(AugmentArgs),
    /// Render clouds to SVG.
    Render(RenderArgs),
    /// Finite-difference check of every op and the feedback path.
    Gradcheck,
}

#[derive(Args, Debug)]
pub struct CorruptArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Comma-separated family names (default: all).
    #[arg(long, value_delimiter = ',')]
    pub families: Vec<String>,
    /// Comma-separated levels 1..=5 (default: all).
    #[arg(long, value_delimiter = ',')]
    pub severities: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    Feedback,
    Adv,
    Deform,
    Mask,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Components to switch off.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub ablate: Vec<Ablation>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `errors.tsv` of the reference model for CE/mCE.
    #[arg(long)]
    pub baseline_errors: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MaskModeArg {
    Multiply,
    Filter,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Cloud files, or a dataset directory (its test split is used).
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "multiply")]
    pub mask_mode: MaskModeArg,
    #[arg(long)]
    pub no_deform: bool,
    #[arg(long)]
    pub no_mask: bool,
    /// At most this many clouds.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ColorBy {
    Z,
    Mask,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "z")]
    pub color: ColorBy,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData => "gen-data",
        Command::Corrupt(_) => "corrupt",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Augment(_) => "augment",
        Command::Render(_) => "render",
        Command::Gradcheck => "gradcheck",
    }
}

/// Parses, runs and returns the process exit code. Output goes to
/// stdout/stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return 2;
        }
    };
    match run(&cli) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

/// Runs a parsed command and returns its summary line.
pub fn run(cli: &Cli) -> Result<String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        // A global pool can only be installed once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.sync();
    let name = command_name(&cli.command);
    if let Command::Train(a) = &cli.command {
        apply_train_flags(&mut cfg.train, a);
    }
    cfg.validate()?;
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    write_meta(&cli.out, name, &cfg)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg, out),
        Command::Corrupt(a) => cmd_corrupt(&cfg, a, out),
        Command::Train(a) => cmd_train(&cfg, a, out),
        Command::Eval(a) => cmd_eval(&cfg, a, out),
        Command::Augment(a) => cmd_augment(&cfg, a, out),
        Command::Render(a) => cmd_render(a, out),
        Command::Gradcheck => cmd_gradcheck(&cfg, out),
    }
}

fn apply_train_flags(t: &mut TrainConfig, a: &TrainArgs) {
    for ab in &a.ablate {
        match ab {
            Ablation::Feedback => t.use_feedback = false,
            Ablation::Adv => t.use_adversarial = false,
            Ablation::Deform => t.use_deformation = false,
            Ablation::Mask => t.use_mask = false,
        }
    }
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
}

fn write_meta(out: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# adaptpoint {} {command}", env!("CARGO_PKG_VERSION"));
    let args: Vec<String> = std::env::args().collect();
    let _ = writeln!(s, "# argv: {}", args.join(" "));
    s.push_str(&cfg.to_text());
    let path = out.join(RUN_META_FILE);
    fs::write(&path, s).map_err(|e| Error::io(&path, e))
}

fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<String> {
    let m = generate_synthetic(&cfg.data, out)?;
    let train = m.records.iter().filter(|r| r.split == Split::Train).count();
    Ok(format!(
        "OK gen-data samples={} train={train} test={} classes={} points={}",
        m.records.len(),
        m.records.len() - train,
        m.class_names.len(),
        m.n_points
    ))
}

/// FNV-1a over the manifest followed by every listed file.
pub fn suite_checksum(dir: &Path) -> Result<u64> {
    let mpath = dir.join(SUITE_MANIFEST_FILE);
    let manifest = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&manifest);
    let text = String::from_utf8_lossy(&manifest).into_owned();
    for line in text.lines().skip(1) {
        if let Some(rel) = line.split_whitespace().next() {
            let p = dir.join(rel);
            eat(&fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
    }
    Ok(h)
}

fn cmd_corrupt(cfg: &RunConfig, a: &CorruptArgs, out: &Path) -> Result<String> {
    let ds = load_dataset(&a.dataset)?;
    let clouds = match a.split.parse::<Split>()? {
        Split::Train => ds.train,
        Split::Test => ds.test,
    };
    let families = if a.families.is_empty() {
        Family::ALL.to_vec()
    } else {
        a.families.iter().map(|f| f.parse()).collect::<Result<_>>()?
    };
    let severities = if a.severities.is_empty() {
        Severity::ALL.to_vec()
    } else {
        a.severities.iter().map(|&l| Severity::new(l)).collect::<Result<_>>()?
    };
    let opts = SuiteOptions {
        families,
        severities,
        table: cfg.severity.clone(),
    };
    let m = build_suite(&clouds, out, cfg.seed, &opts)?;
    Ok(format!(
        "OK corrupt files={} families={} severities={} checksum={:016x}",
        m.records.len(),
        opts.families.len(),
        opts.severities.len(),
        suite_checksum(out)?
    ))
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs, out: &Path) -> Result<String> {
    let ds = load_dataset(&a.dataset)?;
    let res = train(&ds, &cfg.train, Some(out))?;
    let last = res.history.last();
    Ok(format!(
        "OK train epochs={} train_acc={:.4} lc_clean={:.4} lc_aug={:.4} checkpoint={}",
        cfg.train.epochs,
        last.map_or(f64::NAN, |m| m.train_acc),
        last.map_or(f64::NAN, |m| m.lc_clean),
        last.map_or(f64::NAN, |m| m.lc_aug),
        res.checkpoints.last().map(|p| p.display().to_string()).unwrap_or_default()
    ))
}

fn cmd_eval(cfg: &RunConfig, a: &EvalArgs, out: &Path) -> Result<String> {
    let ds = load_dataset(&a.dataset)?;
    let models = crate::training::Models::load(&a.checkpoint, &cfg.train, ds.num_classes())?;
    let ev = evaluate_suite(&models.classifier, &a.suite, &ds.test, cfg.seed)?;
    let write = |name: &str, text: &str| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(ERRORS_FILE, &ev.table.to_text())?;
    write(PREDICTIONS_FILE, &dump_predictions(&ev.predictions))?;
    let baseline = a.baseline_errors.as_ref().map(|p| MetricsTable::read(p)).transpose()?;
    let bname = a.baseline_errors.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
    write(
        REPORT_FILE,
        &render_report(&ev.table, baseline.as_ref().map(|b| (b, bname.as_str())))?,
    )?;
    let mean_err = ev.table.errors.iter().flatten().sum::<f64>() / 35.0;
    let mut line = format!("OK eval oa={:.4} mean_error={mean_err:.4}", ev.table.clean_accuracy);
    if let Some(b) = &baseline {
        let ce = corruption_error(&ev.table, b)?;
        let _ = write!(line, " mce={:.1}", ce.mce);
    }
    Ok(line)
}

fn input_clouds(inputs: &[PathBuf]) -> Result<Vec<(String, PointCloud)>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let ds = load_dataset(p)?;
            for (i, c) in ds.test.into_iter().enumerate() {
                out.push((format!("test_{i:05}"), c));
            }
        } else {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "cloud".into());
            out.push((stem, read_cloud(p, CloudFormat::from_path(p))?));
        }
    }
    Ok(out)
}

fn cmd_augment(cfg: &RunConfig, a: &AugmentArgs, out: &Path) -> Result<String> {
    let mut imitator = Imitator::new(cfg.train.imitator.clone(), &mut RngStream::new(cfg.seed, 0))?;
    load_into(&read_checkpoint(&a.checkpoint)?, imitator.params_mut())?;
    let mut clouds = input_clouds(&a.input)?;
    if let Some(l) = a.limit {
        clouds.truncate(l);
    }
    let mode = match a.mask_mode {
        MaskModeArg::Multiply => MaskMode::Multiply,
        MaskModeArg::Filter => MaskMode::Filter,
    };
    let opts = ImitateOptions {
        hard_mask: true,
        use_deformation: !a.no_deform,
        use_mask: !a.no_mask,
    };
    let n = cfg.train.imitator.n_points;
    let stats = clouds
        .par_iter()
        .enumerate()
        .map(|(i, (name, c))| {
            let mut rng = RngStream::derive(cfg.seed, &[AUGMENT_TAG, i as u64]);
            let x = resample_to_n(c, n, &mut rng);
            let im = imitator.imitate(&x, opts, &mut rng)?;
            let result = apply_mask(&im.deformed, &im.mask.values, mode, &mut rng)?;
            write_cloud(&out.join(format!("{name}.pcb")), &result, CloudFormat::PcbBinary)?;
            let mut mask_txt = String::new();
            for v in &im.mask.values {
                let _ = writeln!(mask_txt, "{v}");
            }
            let mp = out.join(format!("{name}.mask.txt"));
            fs::write(&mp, mask_txt).map_err(|e| Error::io(&mp, e))?;
            let disp = x
                .points()
                .iter()
                .zip(im.deformed.points())
                .map(|(p, q)| crate::geom::dist2(p, q).sqrt())
                .sum::<f64>()
                / n as f64;
            Ok((im.mask.drop_fraction(), disp))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = stats.len().max(1) as f64;
    Ok(format!(
        "OK augment files={} mean_drop={:.4} mean_displacement={:.4}",
        stats.len(),
        stats.iter().map(|s| s.0).sum::<f64>() / k,
        stats.iter().map(|s| s.1).sum::<f64>() / k
    ))
}

fn read_mask(path: &Path, n: usize) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                offset: 0,
                reason: format!("bad mask value {t:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != n {
        return Err(Error::invalid(format!(
            "{} has {} values for {n} points",
            path.display(),
            vals.len()
        )));
    }
    Ok(vals)
}

fn cmd_render(a: &RenderArgs, out: &Path) -> Result<String> {
    let mut total = 0;
    for p in &a.input {
        let cloud = read_cloud(p, CloudFormat::from_path(p))?;
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "cloud".into());
        let coloring = match a.color {
            ColorBy::Z => Coloring::Depth,
            ColorBy::Mask => Coloring::Values(read_mask(&p.with_file_name(format!("{stem}.mask.txt")), cloud.len())?),
        };
        let svg = render_svg(
            &cloud,
            &RenderOptions {
                title: Some(stem.clone()),
                coloring,
                ..RenderOptions::default()
            },
        )?;
        let dest = out.join(format!("{stem}.svg"));
        fs::write(&dest, svg).map_err(|e| Error::io(&dest, e))?;
        total += cloud.len();
    }
    Ok(format!("OK render files={} points={total}", a.input.len()))
}

fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Result<String> {
    let suite = gradcheck_suite(cfg.seed)?;
    let mut s = String::from("check\tmax_rel_err\tcoords\tskipped\n");
    for (name, r) in &suite.entries {
        let _ = writeln!(s, "{name}\t{:.3e}\t{}\t{}", r.max_rel_err, r.coords, r.skipped);
    }
    let p = out.join("gradcheck.tsv");
    fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
    let max = suite.max_rel_err();
    if !(max <= GRADCHECK_TOL) {
        let worst = suite.worst().map(|(n, r)| format!("{n} {}", r.worst)).unwrap_or_default();
        return Err(Error::Integrity(format!(
            "max relative error {max:.3e} exceeds {GRADCHECK_TOL:e} at {worst}"
        )));
    }
    Ok(format!(
        "OK gradcheck max_rel_err={max:.3e} checks={} coords={}",
        suite.entries.len(),
        suite.coords()
    ))
}
