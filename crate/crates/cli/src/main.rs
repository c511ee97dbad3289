//! `dcf`: train, inpaint, evaluate and verify dual-path filtering models.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod selftest;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcf_core::gradsuite;
use dcf_core::masks::{apply_mask, center_mask, irregular_mask, DEFAULT_COVERAGE};
use dcf_core::pipeline::config::CONFIG_KEYS;
use dcf_core::pipeline::data::{load_dataset, read_image, read_mask, write_image, write_mask};
use dcf_core::pipeline::train::CURVE_HEADER;
use dcf_core::pipeline::{
    evaluate, load_checkpoint, save_checkpoint, synthetic_textures, Dataset, MaskMode, TrainConfig, Trainer,
};
use dcf_core::Error;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::NotPowerOfTwo { .. } => 1,
            Error::ShapeMismatch { .. } | Error::Data(_) | Error::Checkpoint(_) | Error::Io(_) => 2,
            Error::NonFinite { .. } | Error::BackwardAlreadyRan | Error::NonScalarLoss(_) => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn config_help() -> String {
    let mut s = String::from("Configuration keys (file lines or --set KEY=VALUE; defaults from the desk preset):\n");
    for (k, d) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<20} {d}\n"));
    }
    s.push_str("\nEnvironment: DCF_THREADS caps the worker thread count.\n");
    s.push_str("Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.");
    s
}

#[derive(Parser, Debug)]
#[command(
    name = "dcf",
    version,
    about = "Image completion with dual-path cooperative filtering"
)]
#[command(after_help = config_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a loss curve and checkpoints.
    #[command(after_help = config_help())]
    Train(Box<TrainArgs>),
    /// Fill the holes of one image with a trained model.
    Inpaint(InpaintArgs),
    /// Score a trained model on a directory of images.
    Eval(EvalArgs),
    /// Write a hole mask as a PNG (255 = known, 0 = hole).
    Maskgen(MaskgenArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Run the built-in reference suites and print a pass/fail table.
    Selftest,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable. Applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Training images (PNG/PPM, all the same square size).
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Train on this many generated textures instead of --data.
    #[arg(long, value_name = "COUNT")]
    synthetic: Option<usize>,
    /// Output directory for curve.csv and checkpoints.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Continue from a checkpoint, keeping its configuration
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    keys: KeyFlags,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

/// One flag per configuration key. Flags win over --set and --config.
#[derive(Args, Debug)]
struct KeyFlags {
    /// desk | paper [default: desk]
    #[arg(long)]
    preset: Option<String>,
    /// Square training size, power of two [default: 64]
    #[arg(long)]
    resolution: Option<String>,
    /// Images per step [default: 4]
    #[arg(long)]
    batch_size: Option<String>,
    /// Optimizer steps; with --resume, the new target [default: 2000]
    #[arg(long)]
    iterations: Option<String>,
    /// Adam step size [default: 1e-4]
    #[arg(long)]
    learning_rate: Option<String>,
    /// Seed for initialization, batches and masks [default: 0]
    #[arg(long)]
    seed: Option<String>,
    /// L1 weight [default: 1]
    #[arg(long)]
    lambda_l1: Option<String>,
    /// Adversarial weight [default: 0.1]
    #[arg(long)]
    lambda_adv: Option<String>,
    /// Perceptual weight [default: 0.1]
    #[arg(long)]
    lambda_perceptual: Option<String>,
    /// Style weight [default: 250]
    #[arg(long)]
    lambda_style: Option<String>,
    /// center | irregular [default: irregular]
    #[arg(long)]
    mask_mode: Option<String>,
    /// Train the patch discriminator: true | false [default: true]
    #[arg(long)]
    adversarial: Option<String>,
    /// Steps between checkpoints, 0 = only the final one [default: 0]
    #[arg(long)]
    checkpoint_interval: Option<String>,
    /// Global gradient norm clip, or none [default: none]
    #[arg(long)]
    grad_clip: Option<String>,
    /// Model switches: image_filter, no_lfu, ffc_blocks=N [default: ffc_blocks=6]
    #[arg(long)]
    model: Option<String>,
}

impl KeyFlags {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("preset", &self.preset),
            ("resolution", &self.resolution),
            ("batch_size", &self.batch_size),
            ("iterations", &self.iterations),
            ("learning_rate", &self.learning_rate),
            ("seed", &self.seed),
            ("lambda_l1", &self.lambda_l1),
            ("lambda_adv", &self.lambda_adv),
            ("lambda_perceptual", &self.lambda_perceptual),
            ("lambda_style", &self.lambda_style),
            ("mask_mode", &self.mask_mode),
            ("adversarial", &self.adversarial),
            ("checkpoint_interval", &self.checkpoint_interval),
            ("grad_clip", &self.grad_clip),
            ("model", &self.model),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

#[derive(Args, Debug)]
struct InpaintArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image at the model's resolution.
    #[arg(long)]
    input: PathBuf,
    /// Mask PNG: pixels >= 128 are known, darker pixels are holes.
    #[arg(long)]
    mask: PathBuf,
    /// Composited output PNG.
    #[arg(long)]
    output: PathBuf,
    /// Also write the network output before compositing.
    #[arg(long)]
    raw: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Center,
    Irregular,
}

impl From<ModeArg> for MaskMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Center => MaskMode::Center,
            ModeArg::Irregular => MaskMode::Irregular,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of held-out images at the model's resolution.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "irregular")]
    mask_mode: ModeArg,
    /// Comma-separated mask seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
}

#[derive(Args, Debug)]
struct MaskgenArgs {
    /// Side length in pixels.
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, value_enum, default_value = "irregular")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// all, tensor, spectral, filtering, ffc, losses or model.
    #[arg(long, default_value = "all")]
    module: String,
}

fn configure_threads() -> Outcome {
    if let Ok(v) = std::env::var("DCF_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::usage(format!("DCF_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot configure threads: {e}")))?;
    }
    Ok(())
}

fn training_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut text = match &args.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    for kv in &args.set {
        if !kv.contains('=') {
            return Err(Failure::usage(format!("--set expects KEY=VALUE, got {kv:?}")));
        }
        text.push('\n');
        text.push_str(kv);
    }
    for (k, v) in args.keys.pairs() {
        text.push_str(&format!("\n{k}={v}"));
    }
    Ok(TrainConfig::parse(&text)?)
}

fn training_data(args: &TrainArgs, config: &TrainConfig) -> Result<Dataset, Failure> {
    match (&args.data, args.synthetic) {
        (Some(dir), None) => Ok(load_dataset(dir)?),
        (None, Some(n)) => {
            if n == 0 {
                return Err(Failure::usage("--synthetic needs at least one image"));
            }
            Ok(synthetic_textures(n, config.resolution, config.seed)?)
        }
        _ => Err(Failure::usage("give either --data DIR or --synthetic COUNT")),
    }
}

fn cmd_train(args: TrainArgs) -> Outcome {
    let mut config = training_config(&args)?;
    if args.resume.is_some() && args.keys.pairs().iter().any(|&(k, _)| k != "iterations") {
        return Err(Failure::usage("with --resume only --iterations may be changed"));
    }
    let mut trainer = match &args.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            let mut t = Trainer::from_checkpoint(&ckpt)?;
            if let Some(n) = &args.keys.iterations {
                t.config.iterations = n
                    .parse()
                    .map_err(|_| Failure::usage(format!("invalid value {n:?} for iterations")))?;
            }
            config = t.config.clone();
            t
        }
        None => Trainer::new(config.clone())?,
    };
    if args.print_config {
        print!("{}", config.to_text());
        return Ok(());
    }
    let data = training_data(&args, &config)?;
    fs::create_dir_all(&args.out).map_err(|e| Failure::data(format!("{}: {e}", args.out.display())))?;
    let curve_path = args.out.join("curve.csv");
    let append = args.resume.is_some() && curve_path.exists();
    let mut curve = fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&curve_path)
        .map_err(|e| Failure::data(format!("{}: {e}", curve_path.display())))?;
    if !append {
        writeln!(curve, "{CURVE_HEADER}").map_err(|e| Failure::data(e.to_string()))?;
    }
    fs::write(args.out.join("config.txt"), config.to_text()).map_err(|e| Failure::data(e.to_string()))?;
    println!(
        "training {} images at {}x{}, {} parameters, iterations {}..{}",
        data.len(),
        config.resolution,
        config.resolution,
        trainer.net.parameter_count(),
        trainer.iteration,
        config.iterations
    );
    let out = args.out.clone();
    let mut io_error = None;
    let result = trainer.run(&data, |t, p| {
        let r = &p.report;
        if !r.total.is_finite() {
            return Err(Error::NonFinite { op: "training loss" });
        }
        let line = format!(
            "{},{},{},{},{},{}",
            p.iteration, r.l1, r.adversarial, r.perceptual, r.style, r.total
        );
        if let Err(e) = writeln!(curve, "{line}") {
            io_error.get_or_insert(e.to_string());
        }
        if p.iteration % 50 == 0 || p.iteration == t.config.iterations {
            println!("iter {:>7}  l1 {:.5}  total {:.5}", p.iteration, r.l1, r.total);
        }
        let every = t.config.checkpoint_interval;
        if every > 0 && p.iteration % every == 0 && p.iteration < t.config.iterations {
            save_checkpoint(&out.join(format!("step_{:07}.ckpt", p.iteration)), &t.checkpoint())?;
        }
        Ok(())
    });
    match result {
        Err(Error::NonFinite { .. }) => {
            return Err(Failure::numerical(format!(
                "loss became non-finite at iteration {}; try a lower learning rate or grad_clip",
                trainer.iteration
            )))
        }
        other => {
            other?;
        }
    }
    if let Some(e) = io_error {
        return Err(Failure::data(format!("{}: {e}", curve_path.display())));
    }
    let final_path = args.out.join("final.ckpt");
    save_checkpoint(&final_path, &trainer.checkpoint())?;
    println!("wrote {} and {}", curve_path.display(), final_path.display());
    Ok(())
}

fn cmd_inpaint(args: InpaintArgs) -> Outcome {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let mut net = ckpt.generator_net()?;
    let image = read_image(&args.input)?;
    let mask = read_mask(&args.mask)?;
    let r = net.config.resolution;
    let s = image.shape();
    if (s.height, s.width) != (r, r) {
        return Err(Failure::data(format!(
            "{}: image is {}x{}, the model expects {r}x{r}",
            args.input.display(),
            s.width,
            s.height
        )));
    }
    if (mask.height(), mask.width()) != (r, r) {
        return Err(Failure::data(format!(
            "{}: mask is {}x{}, the model expects {r}x{r}",
            args.mask.display(),
            mask.width(),
            mask.height()
        )));
    }
    let masked = apply_mask(&image, &mask)?;
    let (raw, composited) = net.infer(&masked, &mask.to_tensor())?;
    if !raw.is_finite() {
        return Err(Failure::numerical("the network produced non-finite values"));
    }
    write_image(&args.output, &composited)?;
    if let Some(p) = &args.raw {
        write_image(p, &raw)?;
    }
    println!(
        "filled {} of {} pixels ({:.1}%) -> {}",
        mask.hole_count(),
        r * r,
        100.0 * mask.coverage(),
        args.output.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Outcome {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let mut net = ckpt.generator_net()?;
    let data = load_dataset(&args.data)?;
    let r = net.config.resolution;
    if data.resolution() != (r, r) {
        let (h, w) = data.resolution();
        return Err(Failure::data(format!("images are {w}x{h}, the model expects {r}x{r}")));
    }
    let mut extractor = dcf_core::losses::FeatureExtractor::default();
    let report = evaluate(&mut net, &data, args.mask_mode.into(), &args.seeds, &mut extractor)?;
    print!("{}", report.to_kv());
    println!(
        "# frechet: Fréchet distance of pooled features from a fixed seeded extractor; \
         comparable between runs of this tool, not with published FID values"
    );
    Ok(())
}

fn cmd_maskgen(args: MaskgenArgs) -> Outcome {
    let m = match args.mode {
        ModeArg::Center => center_mask(args.size, args.size)?,
        ModeArg::Irregular => irregular_mask(args.size, args.size, args.seed, DEFAULT_COVERAGE)?,
    };
    write_mask(&args.out, &m)?;
    println!("coverage={:.6} -> {}", m.coverage(), args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Outcome {
    let outcomes = gradsuite::run(&args.module)?;
    println!(
        "{:<34} {:>8} {:>12} {:>10}  result",
        "check", "probes", "max rel err", "tolerance"
    );
    let mut failed = 0;
    for o in &outcomes {
        let ok = o.passed();
        failed += usize::from(!ok);
        println!(
            "{:<34} {:>8} {:>12.3e} {:>10.0e}  {}",
            o.name,
            o.report.checked,
            o.report.max_relative_error,
            o.tolerance,
            if ok { "pass" } else { "FAIL" }
        );
    }
    if failed > 0 {
        return Err(Failure::numerical(format!(
            "{failed} of {} gradient checks failed",
            outcomes.len()
        )));
    }
    Ok(())
}

fn cmd_selftest() -> Outcome {
    let results = selftest::run_all();
    println!("{:<28} {:>6}  detail", "suite", "result");
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("{name:<28} {:>6}  {d}", "pass"),
            Err(d) => {
                failed += 1;
                println!("{name:<28} {:>6}  {d}", "FAIL");
            }
        }
    }
    if failed > 0 {
        return Err(Failure::numerical(format!(
            "{failed} of {} suites failed",
            results.len()
        )));
    }
    Ok(())
}

fn dispatch(command: Command) -> Outcome {
    configure_threads()?;
    match command {
        Command::Train(a) => cmd_train(*a),
        Command::Inpaint(a) => cmd_inpaint(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Maskgen(a) => cmd_maskgen(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Selftest => cmd_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
