use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ppdnn::config::{parse_override, RunConfig};
use ppdnn::eval::{evaluate, write_evaluation, MetricsSummary, METRICS_JSON};
use ppdnn::sim::{load_report_dir, run, write_report_dir, Mode};
use ppdnn::similarity::{make_thumbnail, ssim, GrayImage};
use ppdnn::traceio::{builtin, generate, read_trace, write_trace_file, ScenarioScript, BUILTIN_SCENARIOS};
use ppdnn::Error;

mod table;

const CONFIG_ENV: &str = "PPDNN_CONFIG";

#[derive(Parser)]
#[command(name = "ppdnn", version, about = "Perception control-plane simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace from a built-in scenario or a script file.
    GenTrace(GenTraceArgs),
    /// Replay a trace through one pipeline mode (or all five).
    Run(RunArgs),
    /// Compute metrics for one report directory.
    Evaluate(EvaluateArgs),
    /// Compare evaluated report directories side by side.
    Report(ReportArgs),
    /// Print the SSIM between two image files after thumbnailing.
    SsimCheck(SsimArgs),
}

#[derive(Args)]
struct GenTraceArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(BUILTIN_SCENARIOS), conflicts_with = "script", required_unless_present = "script")]
    scenario: Option<String>,
    /// TOML scenario script.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    fps: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Fd,
    FdFg,
    FdDp,
    Ppdnn,
}

impl ModeArg {
    fn as_str(self) -> &'static str {
        match self {
            ModeArg::Baseline => "baseline",
            ModeArg::Fd => "fd",
            ModeArg::FdFg => "fd_fg",
            ModeArg::FdDp => "fd_dp",
            ModeArg::Ppdnn => "ppdnn",
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file; defaults to $PPDNN_CONFIG when set.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set keyframe.ssim_threshold=0.9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, flags: Vec<(String, String)>) -> Result<RunConfig, Error> {
        let path = self
            .config
            .clone()
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let mut overrides = self
            .set
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>, _>>()?;
        overrides.extend(flags);
        RunConfig::load(path.as_deref(), &overrides)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, conflicts_with = "ablation")]
    mode: Option<ModeArg>,
    /// Run all five modes, each into `<out>/<mode>`.
    #[arg(long)]
    ablation: bool,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Executor preset: `shared` or `per_task`.
    #[arg(long)]
    executors: Option<String>,
    /// Also write metrics next to each report.
    #[arg(long)]
    evaluate: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdvanceArg {
    Literal,
    CatchUp,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// Output directory; defaults to the report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    advance: Option<AdvanceArg>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Evaluate directories lacking metrics.json against this trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write comparison.json and comparison.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SsimArgs {
    a: PathBuf,
    b: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invariant(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenTrace(a) => gen_trace(a),
        Command::Run(a) => run_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::SsimCheck(a) => ssim_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn gen_trace(a: GenTraceArgs) -> Result<(), Error> {
    let mut script = match (&a.scenario, &a.script) {
        (Some(name), _) => builtin(name, a.seed, a.fps)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config("script", format!("{}: {e}", path.display())))?;
            ScenarioScript::from_toml(&text)?
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(fps) = a.fps {
        script.fps = fps;
    }
    let trace = generate(&script, a.seed)?;
    write_trace_file(&trace, &a.out)?;
    eprintln!("wrote {} frames to {}", trace.frames.len(), a.out.display());
    Ok(())
}

fn run_cmd(a: RunArgs) -> Result<(), Error> {
    let mut flags = Vec::new();
    if let Some(m) = a.mode {
        flags.push(("mode".into(), format!("\"{}\"", m.as_str())));
    }
    if let Some(s) = a.seed {
        flags.push(("seed".into(), s.to_string()));
    }
    if let Some(t) = &a.trace {
        flags.push(("trace".into(), toml_string(t)));
    }
    if let Some(o) = &a.out {
        flags.push(("output".into(), toml_string(o)));
    }
    if let Some(p) = &a.executors {
        flags.push(("executors.preset".into(), format!("\"{p}\"")));
    }
    let cfg = a.config.load(flags)?;
    let trace_path = cfg
        .trace
        .clone()
        .ok_or_else(|| Error::config("trace", "no trace given (use --trace or set `trace`)"))?;
    let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from("report"));
    let trace = read_trace(&trace_path).map_err(|e| match e {
        Error::Io(io) => Error::config("trace", format!("{}: {io}", trace_path.display())),
        other => other,
    })?;

    let modes: Vec<Mode> = if a.ablation { Mode::ALL.to_vec() } else { vec![cfg.mode] };
    let results: Vec<Result<(), Error>> = std::thread::scope(|s| {
        let handles: Vec<_> = modes
            .iter()
            .map(|&mode| {
                let (trace, cfg) = (&trace, &cfg);
                let dir = if a.ablation { out.join(mode.as_str()) } else { out.clone() };
                let eval_too = a.evaluate;
                s.spawn(move || -> Result<(), Error> {
                    let mut p = cfg.pipeline();
                    p.mode = mode;
                    let report = run(trace, &p)?;
                    write_report_dir(&report.data, &dir)?;
                    if eval_too {
                        let ev = evaluate(&report.data, trace, &cfg.eval)?;
                        write_evaluation(&ev, &dir)?;
                    }
                    let sm = &report.data.summary;
                    eprintln!(
                        "{mode}: {} frames, {} bundles ({:.1}%), report in {}",
                        sm.frame_count,
                        sm.bundle_count,
                        sm.fusion_percent,
                        dir.display()
                    );
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invariant("run thread panicked".into()))))
            .collect()
    });
    results.into_iter().collect()
}

fn toml_string(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), Error> {
    let mut flags = Vec::new();
    if let Some(adv) = a.advance {
        let v = match adv {
            AdvanceArg::Literal => "literal",
            AdvanceArg::CatchUp => "catch_up",
        };
        flags.push(("eval.advance".into(), format!("\"{v}\"")));
    }
    let cfg = a.config.load(flags)?;
    let report = load_report_dir(&a.report)?;
    let trace = read_trace(&a.trace)?;
    let ev = evaluate(&report, &trace, &cfg.eval)?;
    if report.summary.trace_hash != trace.hash()? {
        eprintln!("warning: report was produced from a different trace");
    }
    let out = a.out.unwrap_or(a.report);
    write_evaluation(&ev, &out)?;
    print!("{}", table::render(&[(ev.summary.mode.clone(), ev.summary)]));
    Ok(())
}

fn load_metrics(dir: &Path, trace: Option<&ppdnn::traceio::Trace>) -> Result<MetricsSummary, Error> {
    let path = dir.join(METRICS_JSON);
    if path.exists() {
        let bytes = std::fs::read(&path)?;
        return serde_json::from_slice(&bytes).map_err(|e| Error::Report {
            file: path.display().to_string(),
            reason: e.to_string(),
        });
    }
    let Some(trace) = trace else {
        return Err(Error::Report {
            file: path.display().to_string(),
            reason: "missing; run `evaluate` first or pass --trace".into(),
        });
    };
    let report = load_report_dir(dir)?;
    Ok(evaluate(&report, trace, &Default::default())?.summary)
}

fn report_cmd(a: ReportArgs) -> Result<(), Error> {
    let trace = a.trace.as_deref().map(read_trace).transpose()?;
    let mut columns = Vec::new();
    for dir in &a.dirs {
        let m = load_metrics(dir, trace.as_ref())?;
        let label = if columns.iter().any(|(l, _): &(String, MetricsSummary)| *l == m.mode) {
            dir.display().to_string()
        } else {
            m.mode.clone()
        };
        columns.push((label, m));
    }
    let first_hash = &columns[0].1.trace_hash;
    if columns.iter().any(|(_, m)| &m.trace_hash != first_hash) {
        eprintln!("warning: reports were produced from different traces (trace hashes differ)");
    }
    print!("{}", table::render(&columns));
    if let Some(out) = a.out {
        std::fs::create_dir_all(&out)?;
        table::write_machine(&columns, &out)?;
    }
    Ok(())
}

fn load_gray(path: &Path) -> Result<GrayImage, Error> {
    let img = image::open(path)
        .map_err(|e| Error::config("image", format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    GrayImage::new(w as usize, h as usize, img.into_raw().into_iter().map(f64::from).collect())
}

fn ssim_cmd(a: SsimArgs) -> Result<(), Error> {
    let ta = make_thumbnail(&load_gray(&a.a)?)?;
    let tb = make_thumbnail(&load_gray(&a.b)?)?;
    let v = ssim(&ta, &tb, &Default::default())?;
    println!("{v:.6}");
    Ok(())
}

