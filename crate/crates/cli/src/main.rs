use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use refinedet_core::config::{parse_with, validate, ParseMode};
use refinedet_core::eval::{coco_map, coco_thresholds, map_at, GroundTruthSet};
use refinedet_core::fixtures::write_fixtures;
use refinedet_core::postprocess::{read_detection_records, NmsParams};
use refinedet_core::profiler::{benchmark, compare_sweep, ProfileReport, SweepTable};
use refinedet_core::{Error, Model, ModelRunner, ModelSpec};

const THREADS_ENV: &str = "REFINEDET_EDGE_THREADS";

#[derive(Parser)]
#[command(name = "refinedet", version, about = "Refinement detector builder, profiler and evaluator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    /// Structured JSON report.
    Report,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Experiment config (`.cfg`).
    config: PathBuf,
    /// Override the config seed (weights and synthetic inputs).
    #[arg(long)]
    seed: Option<u64>,
    /// Reject unknown keys and treat naming-convention warnings as errors.
    #[arg(long)]
    strict: bool,
    /// Override the config width multiplier.
    #[arg(long)]
    width_multiplier: Option<f64>,
}

#[derive(clap::Args)]
struct TimingArgs {
    #[arg(long, default_value_t = 210)]
    runs: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// Distinct synthetic input images cycled through the runs.
    #[arg(long, default_value_t = 4)]
    inputs: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write output here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble a model and print its parameter and anchor counts.
    Build {
        #[command(flatten)]
        model: ModelArgs,
        /// Write the initialised weight bundle (`.wts`).
        #[arg(long)]
        weights_out: Option<PathBuf>,
    },
    /// Time single-image inference stage by stage.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        timing: TimingArgs,
        /// NMS triple `max_input,max_output,conf_thresh` (default: from config).
        #[arg(long)]
        nms: Option<String>,
    },
    /// Benchmark one model under several NMS triples.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        timing: TimingArgs,
        /// Triples separated by `;`.
        #[arg(long, default_value = "400,200,0.1;1000,500,0.01")]
        nms: String,
        /// Ground-truth file; adds mAP over its image ids.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// COCO-style mAP of a detection file against ground truth.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 80)]
        num_classes: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Render a saved profile report or sweep table.
    Report {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Zero all wall-clock fields for reproducible output.
        #[arg(long)]
        strip_timings: bool,
    },
    /// Write the fifty experiment configs.
    Fixtures { dir: PathBuf },
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Io(_) => 1,
            Error::Invariant(_) => 4,
            _ if e.is_validation() => 3,
            _ => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn validation(msg: impl Into<String>) -> Failure {
    Failure { code: 3, msg: msg.into() }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::NotFound { 2 } else { 1 };
        Failure {
            code,
            msg: format!("{}: {e}", path.display()),
        }
    })
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::NotFound { 2 } else { 1 };
        Failure {
            code,
            msg: format!("{}: {e}", path.display()),
        }
    })
}

fn load_spec(args: &ModelArgs) -> Result<ModelSpec, Failure> {
    let text = read(&args.config)?;
    let mode = if args.strict { ParseMode::Strict } else { ParseMode::Lenient };
    let (mut spec, mut warnings) = parse_with(&text, mode)
        .map_err(|e| validation(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(m) = args.width_multiplier {
        spec.width_multiplier = m;
        spec.check().map_err(Failure::from)?;
    }
    warnings.extend(validate(&spec));
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if args.strict && !warnings.is_empty() {
        return Err(validation(format!("{} warning(s) in strict mode", warnings.len())));
    }
    Ok(spec)
}

fn parse_triple(s: &str) -> Result<NmsParams, Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || validation(format!("bad NMS triple `{s}` (expected max_input,max_output,conf_thresh)"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nms = NmsParams::new(
        parts[0].parse().map_err(|_| bad())?,
        parts[1].parse().map_err(|_| bad())?,
        parts[2].parse().map_err(|_| bad())?,
    );
    nms.check()?;
    Ok(nms)
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure {
            code: 1,
            msg: format!("{}: {e}", p.display()),
        }),
        None => {
            stdout(text);
            Ok(())
        }
    }
}

/// Writes to stdout, tolerating a closed pipe (e.g. `| head`).
fn stdout(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn runner(spec: &ModelSpec, inputs: usize) -> Result<ModelRunner<f32>, Failure> {
    let model = Model::<f32>::assemble(spec)?;
    Ok(ModelRunner::new(model, inputs, spec.seed))
}

fn render_report(r: &ProfileReport, format: Format) -> Result<String, Failure> {
    Ok(match format {
        Format::Text => r.to_text(),
        Format::Csv => r.to_csv(),
        Format::Report => r.to_json()? + "\n",
    })
}

fn render_sweep(t: &SweepTable, format: Format) -> Result<String, Failure> {
    Ok(match format {
        Format::Text => t.to_text(),
        Format::Csv => t.to_csv(),
        Format::Report => t.to_json()? + "\n",
    })
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| validation(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure {
            code: 4,
            msg: format!("thread pool: {e}"),
        })
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Build { model, weights_out } => {
            let spec = load_spec(&model)?;
            let m = Model::<f32>::assemble(&spec)?;
            let head = m.head_config();
            let mut text = format!("model: {}\n", spec.name);
            if let Some(e) = spec.experiment {
                text += &format!("experiment: {e}\n");
            }
            text += &format!("backbone: {}\n", spec.backbone.display_name());
            text += &format!("input size: {}\n", spec.input_size);
            text += &format!(
                "head depth: {} ({} channels at width {})\n",
                head.tcb_depth, head.channels, spec.width_multiplier
            );
            text += &format!("pyramid: {}\n", m.backbone().pyramid_names().join(", "));
            text += &format!("parameter count: {}\n", m.param_count());
            text += &format!("anchor count: {}\n", m.anchors().len());
            text += &format!("weight digest: {:016x}\n", m.weight_digest());
            stdout(&text);
            if let Some(path) = weights_out {
                let bundle = refinedet_core::init_weights(&spec, spec.seed)?;
                let file = File::create(&path).map_err(|e| Failure {
                    code: 1,
                    msg: format!("{}: {e}", path.display()),
                })?;
                bundle.write_to(std::io::BufWriter::new(file))?;
            }
        }
        Command::Bench { model, timing, nms } => {
            let spec = load_spec(&model)?;
            let nms = match nms {
                Some(s) => parse_triple(&s)?,
                None => spec.nms,
            };
            let r = benchmark(&runner(&spec, timing.inputs)?, timing.runs, timing.warmup, &nms)?;
            emit(timing.output.as_deref(), &render_report(&r, timing.format)?)?;
        }
        Command::Sweep { model, timing, nms, gt } => {
            let spec = load_spec(&model)?;
            let triples = nms.split(';').map(parse_triple).collect::<Result<Vec<_>, _>>()?;
            let gt = match gt {
                Some(p) => Some(GroundTruthSet::read_from(open(&p)?, spec.num_classes)?),
                None => None,
            };
            let table = compare_sweep(&runner(&spec, timing.inputs)?, &triples, timing.runs, timing.warmup, gt.as_ref())?;
            emit(timing.output.as_deref(), &render_sweep(&table, timing.format)?)?;
        }
        Command::Eval {
            dets,
            gt,
            num_classes,
            format,
        } => {
            let dets = read_detection_records(open(&dets)?)?;
            let gt = GroundTruthSet::read_from(open(&gt)?, num_classes)?;
            let map = coco_map(&dets, &gt)?;
            let per: Vec<(f64, f64)> = coco_thresholds()
                .iter()
                .map(|&t| (t, map_at(&dets, &gt, t).unwrap_or(0.0)))
                .collect();
            let text = match format {
                Format::Text => {
                    let mut s = format!("mAP@[0.50:0.95]: {map:.6}\n");
                    for (t, m) in &per {
                        s += &format!("mAP@{t:.2}: {m:.6}\n");
                    }
                    s
                }
                Format::Csv => {
                    let mut s = String::from("iou,map\n");
                    for (t, m) in &per {
                        s += &format!("{t:.2},{m}\n");
                    }
                    s += &format!("0.50:0.95,{map}\n");
                    s
                }
                Format::Report => {
                    let v = serde_json::json!({
                        "map": map,
                        "per_threshold": per.iter().map(|(t, m)| serde_json::json!({"iou": t, "map": m})).collect::<Vec<_>>(),
                        "detections": dets.len(),
                    });
                    serde_json::to_string_pretty(&v).map_err(Error::from)? + "\n"
                }
            };
            stdout(&text);
        }
        Command::Report {
            input,
            format,
            strip_timings,
        } => {
            let text = read(&input)?;
            let out = if let Ok(mut r) = ProfileReport::from_json(&text) {
                if strip_timings {
                    r.strip_timings();
                }
                render_report(&r, format)?
            } else if let Ok(mut t) = SweepTable::from_json(&text) {
                if strip_timings {
                    t.strip_timings();
                }
                render_sweep(&t, format)?
            } else {
                return Err(validation(format!(
                    "{}: neither a profile report nor a sweep table",
                    input.display()
                )));
            };
            stdout(&out);
        }
        Command::Fixtures { dir } => {
            let paths = write_fixtures(&dir)?;
            stdout(&paths.iter().map(|p| format!("{}\n", p.display())).collect::<String>());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
