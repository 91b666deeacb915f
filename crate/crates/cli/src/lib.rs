//! `hfn` command dispatch. Exit codes: 0 success, 1 usage, 2 data or
//! format, 3 divergence or runtime.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hfn::cohort::{
    build_cohort, generate_phantom_cohort, preprocess, read_clinical_csv, CohortManifest, Modality, MriMode, PetGrid,
    PhantomConfig, PreprocessConfig, Split, Task, Texture,
};
use hfn::models::{load_checkpoint, ArchId};
use hfn::train::{cross_task_evaluate, emit_report, evaluate, read_reports, train, CheckpointScore, TrainConfig};
use hfn::volume::NormMethod;
use hfn::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "hfn", version, about = "Multi-modality MRI/PET 3D CNN pipeline")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fixed reduction order. Every run is already reproducible; accepted for scripts.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort with images, sidecars and clinical.csv.
    Phantom(PhantomArgs),
    /// Pair, label and split clinical records into a manifest.
    Cohort(CohortArgs),
    /// Extract ROIs and apply the MRI mode and PET grid.
    Preprocess(PreprocessArgs),
    /// Train one architecture on one task.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Collect eval reports into metrics and ROC tables.
    Report(ReportArgs),
}

/// `AxBxC` integer triple.
#[derive(Debug, Clone, Copy, Serialize)]
struct Dims([usize; 3]);

impl FromStr for Dims {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<usize> = s
            .split(['x', 'X'])
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("{s:?}: {e}"))?;
        v.try_into()
            .map(Dims)
            .map_err(|_| format!("{s:?}: expected three sizes like 32x32x16"))
    }
}

fn parse_list<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{s:?}: {e}"))?;
    v.try_into()
        .map_err(|_| format!("{s:?}: expected {N} comma-separated numbers"))
}

fn parse3(s: &str) -> Result<[f64; 3], String> {
    parse_list::<3>(s)
}

fn parse4(s: &str) -> Result<[f64; 4], String> {
    parse_list::<4>(s)
}

fn parse_arg<T: FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long)]
    subjects: usize,
    /// Volume size XxYxZ.
    #[arg(long, default_value = "32x32x16")]
    dims: Dims,
    #[arg(long, default_value_t = 0.3)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// NL,sMCI,pMCI,AD fractions.
    #[arg(long, value_parser = parse4, default_value = "0.25,0.25,0.25,0.25")]
    class_mix: [f64; 4],
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    max_shift: i64,
    #[arg(long, default_value_t = 0.0)]
    radius_jitter: f64,
    /// Class-dependent MRI texture amplitude (0 disables it).
    #[arg(long, default_value_t = 0.0)]
    texture_amplitude: f64,
    #[arg(long, default_value_t = 0.5)]
    texture_delta: f64,
}

#[derive(Args, Debug)]
struct CohortArgs {
    #[arg(long)]
    clinical: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train,val,test patient fractions.
    #[arg(long, value_parser = parse3, default_value = "0.7,0.1,0.2")]
    fractions: [f64; 3],
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// raw | withseg | bin
    #[arg(long, value_parser = parse_arg::<MriMode>, default_value = "raw")]
    mri_mode: MriMode,
    /// origin | dilated
    #[arg(long, value_parser = parse_arg::<PetGrid>, default_value = "origin")]
    pet_grid: PetGrid,
    #[arg(long)]
    out: PathBuf,
    /// ROI size XxYxZ.
    #[arg(long, default_value = "96x96x48")]
    roi: Dims,
    /// Intensity normalization: zscore | minmax.
    #[arg(long, value_parser = parse_arg::<NormMethod>)]
    normalize: Option<NormMethod>,
    /// Template-space ROI center x,y,z in mm.
    #[arg(long, value_parser = parse3)]
    template_center: Option<[f64; 3]>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML or JSON file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// single | fusionA | fusionB1 | fusionB2
    #[arg(long, value_parser = parse_arg::<ArchId>)]
    arch: Option<ArchId>,
    /// nl-ad | nl-pmci | smci-pmci
    #[arg(long, value_parser = parse_arg::<Task>)]
    task: Option<Task>,
    #[arg(long)]
    out: PathBuf,
    /// Input of the single architecture: mri | pet.
    #[arg(long, value_parser = parse_arg::<Modality>)]
    modality: Option<Modality>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    width: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint file, or a training directory (uses its best.json).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_arg::<Split>, default_value = "test")]
    split: Split,
    /// Evaluate an nl-ad model on nl-pmci or smci-pmci.
    #[arg(long, value_parser = parse_arg::<Task>)]
    cross_task: Option<Task>,
    /// Write the metrics report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Row label used by `report` instead of the architecture name.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence(_) => EXIT_RUNTIME,
        _ => EXIT_DATA,
    }
}

fn print_config(verb: &str, cfg: &impl Serialize) {
    println!("[{verb}] effective configuration");
    match toml::to_string(cfg) {
        Ok(t) => print!("{t}"),
        Err(_) => println!("{}", serde_json::to_string(cfg).unwrap_or_default()),
    }
    println!("---");
}

fn parent(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

#[derive(Serialize)]
struct Globals {
    threads: usize,
    deterministic: bool,
}

fn run_phantom(a: PhantomArgs) -> hfn::Result<()> {
    let cfg = PhantomConfig {
        n_subjects: a.subjects,
        class_mix: a.class_mix,
        dims: a.dims.0,
        atrophy_delta: a.delta,
        seed: a.seed,
        noise_sigma: a.noise,
        max_shift: a.max_shift,
        radius_jitter: a.radius_jitter,
        texture: (a.texture_amplitude != 0.0).then_some(Texture {
            amplitude: a.texture_amplitude,
            delta: a.texture_delta,
        }),
    };
    #[derive(Serialize)]
    struct Shown<'a> {
        out: &'a Path,
        phantom: &'a PhantomConfig,
    }
    print_config(
        "phantom",
        &Shown {
            out: &a.out,
            phantom: &cfg,
        },
    );
    let truth = generate_phantom_cohort(&cfg, &a.out)?;
    println!("wrote {} subjects to {}", truth.subjects.len(), a.out.display());
    Ok(())
}

fn run_cohort(a: CohortArgs) -> hfn::Result<()> {
    #[derive(Serialize)]
    struct Shown<'a> {
        clinical: &'a Path,
        images: &'a Path,
        out: &'a Path,
        seed: u64,
        fractions: [f64; 3],
    }
    print_config(
        "cohort",
        &Shown {
            clinical: &a.clinical,
            images: &a.images,
            out: &a.out,
            seed: a.seed,
            fractions: a.fractions,
        },
    );
    let records = read_clinical_csv(&a.clinical)?;
    let (manifest, build) = build_cohort(&records, &absolute(&a.images), a.fractions, a.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    manifest.write(&a.out)?;
    println!(
        "{} records -> {} samples ({} conflicting pairs, {} unmatched images, {} MCI without follow-up)",
        records.len(),
        manifest.samples.len(),
        build.pairing.conflicts.len(),
        build.pairing.unmatched.len(),
        build.excluded.len()
    );
    Ok(())
}

fn run_preprocess(a: PreprocessArgs) -> hfn::Result<()> {
    let cfg = PreprocessConfig {
        mri_mode: a.mri_mode,
        pet_grid: a.pet_grid,
        roi_size: a.roi.0,
        normalize: a.normalize,
        template_center: a.template_center,
    };
    #[derive(Serialize)]
    struct Shown<'a> {
        manifest: &'a Path,
        out: &'a Path,
        preprocess: &'a PreprocessConfig,
    }
    print_config(
        "preprocess",
        &Shown {
            manifest: &a.manifest,
            out: &a.out,
            preprocess: &cfg,
        },
    );
    let m = CohortManifest::read(&a.manifest)?;
    let out = preprocess(&m, &parent(&a.manifest), &cfg, &a.out)?;
    let c = out.roi.as_ref().map(|r| r.mri.center_world).unwrap_or_default();
    println!(
        "preprocessed {} samples into {} (template center {:.3},{:.3},{:.3})",
        out.samples.len(),
        a.out.display(),
        c[0],
        c[1],
        c[2]
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> hfn::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.arch {
        cfg.arch = v;
    }
    if let Some(v) = a.task {
        cfg.task = v;
    }
    if let Some(v) = a.modality {
        cfg.modality = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.width {
        cfg.width = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = Some(v);
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    let cfg = cfg.resolved();
    #[derive(Serialize)]
    struct Shown<'a> {
        manifest: &'a Path,
        out: &'a Path,
        train: &'a TrainConfig,
    }
    print_config(
        "train",
        &Shown {
            manifest: &a.manifest,
            out: &a.out,
            train: &cfg,
        },
    );
    cfg.validate()?;
    let m = CohortManifest::read(&a.manifest)?;
    println!("epoch,train_loss,val_acc,val_auc");
    let (_, outcome) = train(&cfg, &m, &parent(&a.manifest), &a.out, &mut |e| {
        println!("{},{:.6},{:.4},{:.4}", e.epoch, e.train_loss, e.val_acc, e.val_auc)
    })?;
    println!(
        "best checkpoint: epoch {} (ACC {:.4}, AUC {:.4}) {}",
        outcome.best.epoch,
        outcome.best.acc,
        outcome.best.auc,
        outcome.best.path.display()
    );
    Ok(())
}

fn checkpoint_file(p: &Path) -> hfn::Result<PathBuf> {
    if !p.is_dir() {
        return Ok(p.to_path_buf());
    }
    let best = p.join("best.json");
    let text = std::fs::read_to_string(&best).map_err(|e| Error::io(&best, e))?;
    let s: CheckpointScore =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", best.display())))?;
    Ok(if s.path.is_absolute() {
        s.path
    } else {
        p.join(s.path.file_name().unwrap_or_default())
    })
}

fn run_eval(a: EvalArgs) -> hfn::Result<()> {
    let file = checkpoint_file(&a.checkpoint)?;
    let mut ck = load_checkpoint(&file)?;
    let task = a.cross_task.or(ck.meta.task).unwrap_or(Task::NlAd);
    #[derive(Serialize)]
    struct Shown<'a> {
        checkpoint: &'a Path,
        manifest: &'a Path,
        split: String,
        task: Task,
        cross_task: bool,
        arch: ArchId,
        width: f64,
        epoch: usize,
        modality: Option<Modality>,
        out: Option<&'a Path>,
        name: Option<&'a str>,
    }
    print_config(
        "eval",
        &Shown {
            checkpoint: &file,
            manifest: &a.manifest,
            split: a.split.to_string(),
            task,
            cross_task: a.cross_task.is_some(),
            arch: ck.model.arch(),
            width: ck.model.width(),
            epoch: ck.meta.epoch,
            modality: ck.meta.modality,
            out: a.out.as_deref(),
            name: a.name.as_deref(),
        },
    );
    let m = CohortManifest::read(&a.manifest)?;
    let base = parent(&a.manifest);
    let mut r = match a.cross_task {
        Some(t) if a.split == Split::Test => cross_task_evaluate(&mut ck, &m, &base, t)?,
        Some(_) => return Err(Error::Task("cross-task evaluation runs on the test split".into())),
        None => evaluate(&mut ck, &m, &base, a.split, task)?,
    };
    r.name = a.name.clone();
    let c = &r.confusion;
    println!("task,arch,n,ACC,SEN,SPE,AUC");
    println!(
        "{},{},{},{:.4},{:.4},{:.4},{:.4}",
        r.task,
        r.label(),
        r.n,
        c.acc,
        c.sen,
        c.spe,
        r.auc()
    );
    if let Some(out) = &a.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        r.write(out)?;
    }
    Ok(())
}

fn run_report(a: ReportArgs) -> hfn::Result<()> {
    #[derive(Serialize)]
    struct Shown<'a> {
        input: &'a Path,
        out: &'a Path,
    }
    print_config(
        "report",
        &Shown {
            input: &a.input,
            out: &a.out,
        },
    );
    let reports = read_reports(&a.input)?;
    if reports.is_empty() {
        return Err(Error::Data(format!(
            "no metrics reports (*.json) in {}",
            a.input.display()
        )));
    }
    for p in emit_report(&reports, &a.out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the verb and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: --threads must be a positive count, set once per process");
            return EXIT_USAGE;
        }
    }
    let globals = Globals {
        threads: rayon::current_num_threads(),
        deterministic: cli.deterministic,
    };
    print_config("global", &globals);
    let result = match cli.command {
        Command::Phantom(a) => run_phantom(a),
        Command::Cohort(a) => run_cohort(a),
        Command::Preprocess(a) => run_preprocess(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
