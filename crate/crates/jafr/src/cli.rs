//! The `jafr` executable: train / eval-adv / eval-corrupt / profile-model /
//! profile-corruptions / report.
//!
//! Every run writes its artifacts plus a manifest holding the fully resolved
//! configuration and a SHA-256 per artifact, so a run can be reproduced from
//! the manifest alone. Identical command and seed produce byte-identical CSV
//! artifacts. Failures exit with a single machine-parsable line on stderr:
//! config errors exit 2, data errors 3, numerical aborts 4.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::attacks::AttackConfig;
use crate::config::{self, TrainJob};
use crate::corruptions::{corrupt, corruption_bias, mix_seed, CorruptionKind, CorruptionSpec, CorruptionTables};
use crate::data::{self, Dataset};
use crate::evaluator::{
    clean_accuracy, corruption_accuracy, fgsm_accuracy, mce, model_profile, pgd_accuracy,
    seeded_subsample, EvalReport,
};
use crate::freqbias::{BiasConfig, IndexMode};
use crate::nn::Model;
use crate::trainer::{self, TrainError};

#[derive(Parser)]
#[command(name = "jafr", version, about = "Train and probe classifiers whose input-gradient spectra are biased toward low or high frequencies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for artifacts and manifests.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Worker threads for parallel evaluation (default: all cores). Results
    /// are identical regardless of this setting.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file (JSON or key=value).
    Train(TrainArgs),
    /// Clean plus adversarial accuracy of a checkpoint.
    EvalAdv(EvalAdvArgs),
    /// Per-corruption accuracy of a checkpoint, averaged over severities.
    EvalCorrupt(EvalCorruptArgs),
    /// Mean Jacobian spectrum, its low-frequency bias, and sample renders.
    ProfileModel(ProfileModelArgs),
    /// Low-frequency bias of each corruption's mean delta spectrum.
    ProfileCorruptions(ProfileCorruptionsArgs),
    /// Combine evaluation reports into one table, one column per model.
    Report(ReportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file; see the book's training chapter for the schema.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides, e.g. --set train.lambda_freq=0.001.
    #[arg(long = "set")]
    sets: Vec<String>,
    /// Overrides the config's training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's artifact tag.
    #[arg(long)]
    tag: Option<String>,
}

#[derive(Args)]
struct EvalAdvArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset reference, e.g. blobs:n=512,k=4,seed=8 or cifar:<path>.
    #[arg(long)]
    dataset: String,
    #[arg(long, value_enum)]
    attack: AttackKind,
    /// L∞ budget; defaults to 8/255.
    #[arg(long)]
    eps: Option<f64>,
    /// Step size; defaults to eps/4.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Evaluation subsample size.
    #[arg(long, default_value_t = 1000)]
    sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "model")]
    tag: String,
}

#[derive(Copy, Clone, ValueEnum)]
enum AttackKind {
    Fgsm,
    Pgd,
}

#[derive(Args)]
struct EvalCorruptArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: String,
    /// Corruption kind; repeat for several, omit for all ten.
    #[arg(long = "corruption")]
    corruptions: Vec<String>,
    /// Restrict the corrupted-set export to one severity.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    severity: Option<u8>,
    /// Baseline report CSV; adds a relative mean-corruption-error row.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Directory for corrupted-set exports in the CIFAR binary layout
    /// (3×32×32 datasets only).
    #[arg(long)]
    export_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "model")]
    tag: String,
}

#[derive(Args)]
struct ProfileModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 1000)]
    sample: usize,
    /// How many per-image Jacobian renders to keep.
    #[arg(long, default_value_t = 4)]
    keep_jacobians: usize,
    #[arg(long, default_value_t = 1e-8)]
    eps_floor: f64,
    /// raw-dft or folded-frequency exponent indexing.
    #[arg(long, default_value = "raw-dft")]
    index_mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "model")]
    tag: String,
}

#[derive(Args)]
struct ProfileCorruptionsArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 128)]
    sample: usize,
    #[arg(long, default_value_t = 1e-8)]
    eps_floor: f64,
    #[arg(long, default_value = "raw-dft")]
    index_mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "corruptions")]
    tag: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation report CSVs, in column order.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Tag of the mCE baseline column.
    #[arg(long, default_value = "standard")]
    baseline: String,
    #[arg(long, default_value = "combined")]
    tag: String,
}

// ── Errors and exit codes ───────────────────────────────────────────────

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<data::DataError> for CliError {
    fn from(e: data::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::nn::CheckpointError> for CliError {
    fn from(e: crate::nn::CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("io: {e}"))
    }
}

pub fn main_impl() -> i32 {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        // Only settable once per process; later attempts are harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error kind={} msg={:?}", e.kind(), e.message());
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    std::fs::create_dir_all(&cli.out_dir)?;
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Train(args) => cmd_train(out, args),
        Command::EvalAdv(args) => cmd_eval_adv(out, args),
        Command::EvalCorrupt(args) => cmd_eval_corrupt(out, args),
        Command::ProfileModel(args) => cmd_profile_model(out, args),
        Command::ProfileCorruptions(args) => cmd_profile_corruptions(out, args),
        Command::Report(args) => cmd_report(out, args),
    }
}

fn cmd_train(out: &Path, args: TrainArgs) -> Result<(), CliError> {
    let mut job: TrainJob =
        config::load_train_job(&args.config, &args.sets).map_err(CliError::Config)?;
    if let Some(seed) = args.seed {
        job.train.seed = seed;
    }
    if let Some(tag) = args.tag {
        job.tag = tag;
    }
    job.train.validate().map_err(CliError::Config)?;

    let dataset = data::load_ref(&job.dataset)?;
    let eval_set = job.eval_dataset.as_deref().map(data::load_ref).transpose()?;
    check_model_dataset(&job.model, &dataset)?;

    let prefix = format!("{}_seed{}", job.tag, job.train.seed);
    let model = Model::init(job.model.clone(), job.train.seed);
    let (trained, log) = match trainer::train(model, &dataset, eval_set.as_ref(), &job.train) {
        Ok(r) => r,
        Err(TrainError::Numerical { step, what, spectrum }) => {
            let mut msg = format!("step {step}: {what}");
            if let Some((mags, h, w)) = spectrum {
                let dump = out.join(format!("{prefix}_nan_spectrum.csv"));
                crate::spectral::write_spectrum_csv(&dump, &mags, h, w)?;
                let _ = write!(msg, " (spectrum dumped to {})", dump.display());
            }
            return Err(CliError::Numerical(msg));
        }
        Err(TrainError::Config(m)) => return Err(CliError::Config(m)),
        Err(e @ TrainError::ShapeMismatch { .. }) => return Err(CliError::Data(e.to_string())),
    };

    let ckpt = out.join(format!("{prefix}.ckpt"));
    trained.save(&ckpt).map_err(|e| CliError::Data(e.to_string()))?;
    let log_path = out.join(format!("{prefix}_train_log.csv"));
    log.write_csv(&log_path)?;

    let final_acc = log.epochs.last().map(|e| e.clean_acc).unwrap_or(f64::NAN);
    println!(
        "trained {} for {} steps; final clean accuracy {:.4}",
        prefix,
        log.steps.len(),
        final_acc
    );
    write_manifest(
        out,
        "train",
        &prefix,
        job.train.seed,
        serde_json::to_value(&job).expect("job serializes"),
        &[&ckpt, &log_path],
    )
}

fn cmd_eval_adv(out: &Path, args: EvalAdvArgs) -> Result<(), CliError> {
    let model = Model::load(&args.checkpoint)?;
    let full = data::load_ref(&args.dataset)?;
    check_model_dataset(&model.spec, &full)?;
    let ds = seeded_subsample(&full, args.sample, args.seed);

    let eps = args.eps.unwrap_or(crate::attacks::DEFAULT_EPSILON);
    let cfg = AttackConfig {
        epsilon: eps,
        step: args.step.unwrap_or(eps / 4.0),
        iters: args.iters,
        restarts: args.restarts,
        seed: args.seed,
        ..AttackConfig::eval_default()
    };
    cfg.validate().map_err(CliError::Config)?;

    let mut report = EvalReport {
        tag: args.tag.clone(),
        seed: args.seed,
        clean_acc: Some(clean_accuracy(&model, &ds, ds.n)),
        ..Default::default()
    };
    match args.attack {
        AttackKind::Fgsm => report.fgsm_acc = Some(fgsm_accuracy(&model, &ds, ds.n, cfg.epsilon)),
        AttackKind::Pgd => report.pgd_acc = Some(pgd_accuracy(&model, &ds, ds.n, &cfg)),
    }

    let prefix = format!("{}_seed{}", args.tag, args.seed);
    let path = out.join(format!("{prefix}_adv_report.csv"));
    report.write_csv(&path)?;
    println!(
        "{}: clean {:.4}, {} {:.4}",
        prefix,
        report.clean_acc.unwrap(),
        match args.attack {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        },
        report.fgsm_acc.or(report.pgd_acc).unwrap()
    );
    let cfg_json = json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "dataset": args.dataset,
        "attack": match args.attack { AttackKind::Fgsm => "fgsm", AttackKind::Pgd => "pgd" },
        "attack_config": serde_json::to_value(cfg).expect("serializes"),
        "sample": args.sample,
        "tag": args.tag,
    });
    write_manifest(out, "eval-adv", &prefix, args.seed, cfg_json, &[&path])
}

fn cmd_eval_corrupt(out: &Path, args: EvalCorruptArgs) -> Result<(), CliError> {
    let model = Model::load(&args.checkpoint)?;
    let full = data::load_ref(&args.dataset)?;
    check_model_dataset(&model.spec, &full)?;
    let ds = seeded_subsample(&full, args.sample, args.seed);
    let kinds = resolve_kinds(&args.corruptions)?;
    let tables = CorruptionTables::default();

    let mut report = EvalReport {
        tag: args.tag.clone(),
        seed: args.seed,
        clean_acc: Some(clean_accuracy(&model, &ds, ds.n)),
        ..Default::default()
    };
    for &kind in &kinds {
        let (accs, _) = corruption_accuracy(&model, &ds, kind, &tables, ds.n, args.seed);
        report.corruption_acc.push((kind, accs));
    }
    if let Some(baseline_path) = &args.baseline {
        let baseline = EvalReport::read_csv(baseline_path)?;
        report.mce =
            Some(mce(&report, &baseline).map_err(|e| CliError::Data(e.to_string()))?);
    }

    let prefix = format!("{}_seed{}", args.tag, args.seed);
    let path = out.join(format!("{prefix}_corr_report.csv"));
    report.write_csv(&path)?;
    let mut artifacts = vec![path.clone()];

    if let Some(export_dir) = &args.export_dir {
        if (ds.c, ds.h, ds.w) != (3, 32, 32) {
            return Err(CliError::Data(format!(
                "corrupted-set export needs a 3x32x32 dataset, got {}x{}x{}",
                ds.c, ds.h, ds.w
            )));
        }
        std::fs::create_dir_all(export_dir)?;
        let severities: Vec<u8> = match args.severity {
            Some(s) => vec![s],
            None => (1..=5).collect(),
        };
        for &kind in &kinds {
            for &severity in &severities {
                let mut corrupted = ds.clone();
                for i in 0..ds.n {
                    let spec =
                        CorruptionSpec::new(kind, severity, mix_seed(args.seed, i as u64, severity));
                    let c = corrupt(ds.image(i), ds.c, ds.h, ds.w, &spec, &tables);
                    let len = ds.image_len();
                    corrupted.images[i * len..(i + 1) * len].copy_from_slice(&c);
                }
                let bin = export_dir.join(format!("{}_s{}.bin", kind.name(), severity));
                data::write_cifar_bin(&bin, &corrupted)?;
                artifacts.push(bin);
            }
        }
    }

    println!("{}: wrote {} corruption rows", prefix, report.corruption_acc.len());
    let cfg_json = json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "dataset": args.dataset,
        "corruptions": kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
        "sample": args.sample,
        "baseline": args.baseline.as_ref().map(|p| p.display().to_string()),
        "tag": args.tag,
    });
    let refs: Vec<&Path> = artifacts.iter().map(|p| p.as_path()).collect();
    write_manifest(out, "eval-corrupt", &prefix, args.seed, cfg_json, &refs)
}

fn cmd_profile_model(out: &Path, args: ProfileModelArgs) -> Result<(), CliError> {
    let model = Model::load(&args.checkpoint)?;
    let full = data::load_ref(&args.dataset)?;
    check_model_dataset(&model.spec, &full)?;
    let ds = seeded_subsample(&full, args.sample, args.seed);
    let bias_cfg = bias_config(args.eps_floor, &args.index_mode)?;

    let profile = model_profile(&model, &ds, ds.n, &bias_cfg, args.keep_jacobians);
    let prefix = format!("{}_seed{}", args.tag, args.seed);
    let spec_csv = out.join(format!("{prefix}_spectrum.csv"));
    let spec_pgm = out.join(format!("{prefix}_spectrum.pgm"));
    crate::spectral::write_spectrum_csv(&spec_csv, &profile.mean_spectrum, profile.h, profile.w)?;
    crate::spectral::write_spectrum_pgm(&spec_pgm, &profile.mean_spectrum, profile.h, profile.w)?;
    let mut artifacts = vec![spec_csv, spec_pgm];
    for (i, jac) in profile.sample_jacobians.iter().enumerate() {
        let p = out.join(format!("{prefix}_jacobian{i}.pgm"));
        crate::evaluator::write_image_pgm(&p, jac, profile.h, profile.w)?;
        artifacts.push(p);
    }
    let report = EvalReport {
        tag: args.tag.clone(),
        seed: args.seed,
        model_bias: Some(profile.b_low),
        ..Default::default()
    };
    let report_path = out.join(format!("{prefix}_profile_report.csv"));
    report.write_csv(&report_path)?;
    artifacts.push(report_path);

    println!("{}: model B_low = {}", prefix, profile.b_low);
    let cfg_json = json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "dataset": args.dataset,
        "sample": args.sample,
        "eps_floor": args.eps_floor,
        "index_mode": args.index_mode,
        "tag": args.tag,
    });
    let refs: Vec<&Path> = artifacts.iter().map(|p| p.as_path()).collect();
    write_manifest(out, "profile-model", &prefix, args.seed, cfg_json, &refs)
}

fn cmd_profile_corruptions(out: &Path, args: ProfileCorruptionsArgs) -> Result<(), CliError> {
    let full = data::load_ref(&args.dataset)?;
    let ds = seeded_subsample(&full, args.sample, args.seed);
    let bias_cfg = bias_config(args.eps_floor, &args.index_mode)?;
    let tables = CorruptionTables::default();
    let images: Vec<&[f64]> = (0..ds.n).map(|i| ds.image(i)).collect();

    let mut rows: Vec<(CorruptionKind, f64)> = CorruptionKind::ALL
        .iter()
        .map(|&kind| {
            (kind, corruption_bias(&images, ds.c, ds.h, ds.w, kind, &tables, &bias_cfg, args.seed))
        })
        .collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite bias").then(a.0.name().cmp(b.0.name())));

    let prefix = format!("{}_seed{}", args.tag, args.seed);
    let path = out.join(format!("{prefix}_corruption_bias.csv"));
    {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "kind,b_low")?;
        for (kind, b) in &rows {
            writeln!(f, "{},{}", kind.name(), b)?;
        }
    }
    for (kind, b) in &rows {
        println!("{:>16}  {:.4}", kind.name(), b);
    }
    let cfg_json = json!({
        "dataset": args.dataset,
        "sample": args.sample,
        "eps_floor": args.eps_floor,
        "index_mode": args.index_mode,
        "tag": args.tag,
    });
    write_manifest(out, "profile-corruptions", &prefix, args.seed, cfg_json, &[&path])
}

fn cmd_report(out: &Path, args: ReportArgs) -> Result<(), CliError> {
    let reports: Vec<EvalReport> = args
        .inputs
        .iter()
        .map(|p| EvalReport::read_csv(p))
        .collect::<Result<_, _>>()?;
    let baseline = reports
        .iter()
        .find(|r| r.tag == args.baseline)
        .ok_or_else(|| CliError::Data(format!("no input has baseline tag '{}'", args.baseline)))?
        .clone();

    let mut lines = Vec::new();
    let tags: Vec<String> = reports.iter().map(|r| r.tag.clone()).collect();
    lines.push(format!("metric,{}", tags.join(",")));
    let rows: Vec<(&str, Box<dyn Fn(&EvalReport) -> Option<f64>>)> = vec![
        ("clean_acc", Box::new(|r: &EvalReport| r.clean_acc)),
        ("fgsm_acc", Box::new(|r: &EvalReport| r.fgsm_acc)),
        ("pgd_acc", Box::new(|r: &EvalReport| r.pgd_acc)),
        ("model_bias", Box::new(|r: &EvalReport| r.model_bias)),
    ];
    for (name, get) in &rows {
        let cells: Vec<String> = reports
            .iter()
            .map(|r| get(r).map(|v| v.to_string()).unwrap_or_default())
            .collect();
        if cells.iter().any(|c| !c.is_empty()) {
            lines.push(format!("{name},{}", cells.join(",")));
        }
    }
    // Recompute relative mean corruption error against the chosen column.
    if !baseline.corruption_acc.is_empty() {
        let cells: Vec<String> = reports
            .iter()
            .map(|r| {
                if r.corruption_acc.is_empty() {
                    String::new()
                } else {
                    mce(r, &baseline).map(|m| m.to_string()).unwrap_or_default()
                }
            })
            .collect();
        lines.push(format!("mce,{}", cells.join(",")));
    }
    for kind in CorruptionKind::ALL {
        let cells: Vec<String> = reports
            .iter()
            .map(|r| r.corruption_mean(kind).map(|v| v.to_string()).unwrap_or_default())
            .collect();
        if cells.iter().any(|c| !c.is_empty()) {
            lines.push(format!("corr_{}_mean,{}", kind.name(), cells.join(",")));
        }
    }

    let path = out.join(format!("{}_report.csv", args.tag));
    std::fs::write(&path, lines.join("\n") + "\n")?;
    println!("{}", lines.join("\n"));
    let cfg_json = json!({
        "inputs": args.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "baseline": args.baseline,
        "tag": args.tag,
    });
    write_manifest(out, "report", &args.tag, 0, cfg_json, &[&path])
}

// ── Shared helpers ──────────────────────────────────────────────────────

fn check_model_dataset(spec: &crate::nn::ModelSpec, ds: &Dataset) -> Result<(), CliError> {
    let want = spec.input;
    let got = [ds.c, ds.h, ds.w];
    if want != got {
        return Err(CliError::Data(format!(
            "dataset shape {got:?} does not match model input {want:?}"
        )));
    }
    if spec.num_classes != ds.num_classes {
        return Err(CliError::Data(format!(
            "dataset has {} classes, model expects {}",
            ds.num_classes, spec.num_classes
        )));
    }
    Ok(())
}

fn resolve_kinds(names: &[String]) -> Result<Vec<CorruptionKind>, CliError> {
    if names.is_empty() || names.iter().any(|n| n == "all") {
        return Ok(CorruptionKind::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| {
            CorruptionKind::parse(n)
                .ok_or_else(|| CliError::Config(format!("unknown corruption kind '{n}'")))
        })
        .collect()
}

fn bias_config(eps_floor: f64, index_mode: &str) -> Result<BiasConfig, CliError> {
    let index_mode = match index_mode {
        "raw-dft" => IndexMode::RawDft,
        "folded-frequency" => IndexMode::FoldedFrequency,
        other => return Err(CliError::Config(format!("unknown index mode '{other}'"))),
    };
    if eps_floor <= 0.0 {
        return Err(CliError::Config("eps-floor must be positive".into()));
    }
    Ok(BiasConfig { eps_floor, index_mode })
}

fn sha256_hex(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn write_manifest(
    out: &Path,
    command: &str,
    prefix: &str,
    seed: u64,
    config: Value,
    artifacts: &[&Path],
) -> Result<(), CliError> {
    let entries: Vec<Value> = artifacts
        .iter()
        .map(|p| -> Result<Value, CliError> {
            Ok(json!({
                "path": p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                "sha256": sha256_hex(p)?,
            }))
        })
        .collect::<Result<_, _>>()?;
    let manifest = json!({
        "command": command,
        "seed": seed,
        "config": config,
        "artifacts": entries,
    });
    let path = out.join(format!("{prefix}_{command}_manifest.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("serializes") + "\n")?;
    Ok(())
}
