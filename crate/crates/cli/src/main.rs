use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use fomcell::ecm::{discretize_with_tol, simulate_trace, simulate_trace_analytic, CellState, CurrentSign};
use fomcell::gl::{gl_simulate_trace, GlOptions, GlScheme, DEFAULT_MEMORY};
use fomcell::ident::{
    fit_segments, model_from_fit, nearest_segment, segment_hppc, FitConfig, SegmentOptions,
};
use fomcell::io::{read_csv_column, ModelDocument, SegmentFit, Selection};
use fomcell::mlfunc::{ml_two, MLParams, DEFAULT_MAX_TERMS, DEFAULT_TOL};
use fomcell::ocv::OcvTable;
use fomcell::report::{benchmark, evaluate, BenchOptions};
use fomcell::synthgen::{generate, reference_ocv, Protocol, ProtocolSpec};
use fomcell::trace::Trace;

/// Fractional-order battery cell model: simulation, synthetic data,
/// identification and benchmarks.
#[derive(Parser, Debug)]
#[command(name = "fomcell", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOpts {
    /// Mittag-Leffler tolerance [default: 1e-6]
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Seed for anything random; overrides a protocol's own seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel identification
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON file with default option values; command-line flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate E_{alpha,beta}(z), one JSON object per argument
    MlEval(MlEvalArgs),
    /// Simulate a model over a current trace
    Simulate(SimulateArgs),
    /// Generate a synthetic dataset and its truth sidecar
    Gen(GenArgs),
    /// Identify model parameters from an HPPC trace
    Identify(IdentifyArgs),
    /// Error metrics between two voltage series
    Evaluate(EvaluateArgs),
    /// Run the recursion and the G-L baseline side by side
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
struct MlEvalArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Argument; repeat for several values
    #[arg(long, required = true, allow_negative_numbers = true)]
    z: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_TERMS)]
    max_terms: usize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV with `t,i[,v]`
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    method: Option<SimMethod>,
    /// G-L memory length
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<Scheme>,
    /// Initial SOC (branches start relaxed)
    #[arg(long)]
    soc0: Option<f64>,
    /// How a model with per-segment fits is reduced to one model
    #[arg(long, value_enum)]
    selection: Option<Select>,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Truth model document
    #[arg(long)]
    model: PathBuf,
    /// Protocol spec JSON
    #[arg(long)]
    protocol: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Also write the model's OCV table as CSV
    #[arg(long)]
    ocv_out: Option<PathBuf>,
    /// Drive-cycle template CSV with `t,i`, replacing the protocol's profile
    #[arg(long)]
    cycle: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IdentifyArgs {
    /// HPPC CSV with `t,i,v`
    #[arg(long)]
    trace: PathBuf,
    /// OCV CSV with `soc,v`; the bundled reference curve when absent
    #[arg(long)]
    ocv: Option<PathBuf>,
    #[arg(long)]
    branches: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// SOC at the first sample
    #[arg(long)]
    soc0: Option<f64>,
    #[arg(long)]
    capacity_ah: Option<f64>,
    /// Pulse detection threshold (A) [default: half the peak current]
    #[arg(long)]
    threshold: Option<f64>,
    /// Pin every alpha, e.g. 1 for an integer-order model
    #[arg(long)]
    fixed_alpha: Option<f64>,
    #[arg(long, value_enum)]
    sign: Option<Sign>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    meas: PathBuf,
    #[arg(long, default_value = "v")]
    pred_column: String,
    #[arg(long, default_value = "v")]
    meas_column: String,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<Scheme>,
    #[arg(long)]
    soc0: Option<f64>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Write `t,i,v_caputo,v_gl`
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SimMethod {
    Caputo,
    Gl,
    Analytic,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Scheme {
    Explicit,
    Implicit,
}

impl From<Scheme> for GlScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Explicit => GlScheme::Explicit,
            Scheme::Implicit => GlScheme::Implicit,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Select {
    Nearest,
    Interpolate,
}

impl From<Select> for Selection {
    fn from(s: Select) -> Self {
        match s {
            Select::Nearest => Selection::Nearest,
            Select::Interpolate => Selection::Interpolate,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Sign {
    ChargePositive,
    DischargePositive,
}

impl From<Sign> for CurrentSign {
    fn from(s: Sign) -> Self {
        match s {
            Sign::ChargePositive => CurrentSign::ChargePositive,
            Sign::DischargePositive => CurrentSign::DischargePositive,
        }
    }
}

/// Option defaults read from `--config`. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Config {
    tol: Option<f64>,
    seed: Option<u64>,
    threads: Option<usize>,
    method: Option<SimMethod>,
    memory: Option<usize>,
    scheme: Option<Scheme>,
    soc0: Option<f64>,
    selection: Option<Select>,
    branches: Option<usize>,
    capacity_ah: Option<f64>,
    threshold: Option<f64>,
    fixed_alpha: Option<f64>,
    sign: Option<Sign>,
}

impl Config {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

struct Ctx {
    tol: f64,
    tol_given: bool,
    seed: Option<u64>,
    cfg: Config,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", json!({"error": first, "kind": "usage"}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": format!("{e:#}"), "kind": error_kind(&e)}));
            ExitCode::FAILURE
        }
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<fomcell::Error>() {
            return err.kind();
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() {
            return "json";
        }
    }
    "other"
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.global.config.as_deref())?;
    let tol_given = cli.global.tol.or(cfg.tol);
    let ctx = Ctx {
        tol: tol_given.unwrap_or(DEFAULT_TOL),
        tol_given: tol_given.is_some(),
        seed: cli.global.seed.or(cfg.seed),
        cfg,
    };
    if let Some(n) = cli.global.threads.or(ctx.cfg.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::MlEval(a) => ml_eval(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Gen(a) => gen(&ctx, a),
        Command::Identify(a) => identify(&ctx, a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Benchmark(a) => benchmark_cmd(&ctx, a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_trace(path: &Path) -> Result<Trace> {
    Trace::from_csv_path(path).with_context(|| format!("reading trace {}", path.display()))
}

fn read_model(path: &Path) -> Result<ModelDocument> {
    ModelDocument::read(path).with_context(|| format!("reading model {}", path.display()))
}

fn ml_eval(ctx: &Ctx, a: MlEvalArgs) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for z in a.z {
        let p = MLParams::two(a.alpha, a.beta, z)
            .with_tol(ctx.tol)
            .with_max_terms(a.max_terms);
        let r = ml_two(&p)?;
        let line = json!({
            "alpha": a.alpha,
            "beta": a.beta,
            "z": z,
            "value": r.value,
            "terms_used": r.terms_used,
            "converged": r.converged,
            "method": r.method,
        });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn simulate(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let doc = read_model(&a.model)?;
    let trace = read_trace(&a.trace)?;
    let soc0 = a.soc0.or(ctx.cfg.soc0).context("--soc0 is required")?;
    let selection = a.selection.or(ctx.cfg.selection).map(Selection::from).unwrap_or_default();
    let model = doc.model_at(soc0, selection)?;
    let init = CellState::relaxed(soc0, model.n_branches());
    let method = a.method.or(ctx.cfg.method).unwrap_or(SimMethod::Caputo);
    let out = match method {
        SimMethod::Caputo => {
            let dm = discretize_with_tol(&model, trace.period()?, ctx.tol)?;
            simulate_trace(&dm, &init, &trace)?
        }
        SimMethod::Gl => {
            let opts = GlOptions {
                memory: a.memory.or(ctx.cfg.memory).unwrap_or(DEFAULT_MEMORY),
                scheme: a.scheme.or(ctx.cfg.scheme).map(GlScheme::from).unwrap_or_default(),
            };
            gl_simulate_trace(&model, &init, &trace, opts)?.output
        }
        SimMethod::Analytic => simulate_trace_analytic(&model, &init, &trace, ctx.tol)?,
    };
    let mut w = create(&a.out)?;
    out.write_csv(&mut w)?;
    w.flush()?;
    let vs_measured = trace.v.as_deref().map(|m| evaluate(&out.v, m)).transpose()?;
    println!("{}", json!({"samples": out.len(), "vs_measured": vs_measured}));
    Ok(())
}

fn gen(ctx: &Ctx, a: GenArgs) -> Result<()> {
    let doc = read_model(&a.model)?;
    let text =
        std::fs::read_to_string(&a.protocol).with_context(|| format!("reading protocol {}", a.protocol.display()))?;
    let mut spec: ProtocolSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing protocol {}", a.protocol.display()))?;
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    if ctx.tol_given {
        spec.tol = ctx.tol;
    }
    if let Some(path) = &a.cycle {
        let template = read_trace(path)?;
        match &mut spec.protocol {
            Protocol::DriveCycle { profile, .. } => {
                *profile = Some(template.t.iter().copied().zip(template.i.iter().copied()).collect());
            }
            _ => bail!("--cycle only applies to a drive_cycle protocol"),
        }
    }
    let g = generate(&doc.model, &spec)?;
    let mut w = create(&a.out)?;
    g.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&a.truth)?;
    serde_json::to_writer_pretty(&mut w, &g.truth)?;
    writeln!(w)?;
    w.flush()?;
    if let Some(path) = &a.ocv_out {
        let mut w = create(path)?;
        doc.model.ocv().write_csv(&mut w)?;
        w.flush()?;
    }
    println!("{}", json!({"samples": g.trace.len(), "pulses": g.truth.pulses.len(), "seed": spec.seed}));
    Ok(())
}

#[derive(Serialize)]
struct FailedSegment {
    index: usize,
    soc_j: f64,
    error: String,
}

fn identify(ctx: &Ctx, a: IdentifyArgs) -> Result<()> {
    let c = &ctx.cfg;
    let trace = read_trace(&a.trace)?;
    let ocv = match &a.ocv {
        Some(path) => OcvTable::from_csv_path(path).with_context(|| format!("reading OCV {}", path.display()))?,
        None => reference_ocv(),
    };
    let sign: CurrentSign = a.sign.or(c.sign).map(Into::into).unwrap_or_default();
    let qn = a.capacity_ah.or(c.capacity_ah).unwrap_or(40.2) * 3600.0;
    let peak = trace.i.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let threshold = a.threshold.or(c.threshold).unwrap_or(0.5 * peak);
    let opts = SegmentOptions {
        soc0: a.soc0.or(c.soc0).unwrap_or(1.0),
        qn,
        sign,
        rest_tol: None,
    };
    let seg = segment_hppc(&trace, threshold, &opts)?;
    for issue in &seg.rejected {
        eprintln!("{}", json!({"warning": "pulse rejected", "detail": issue}));
    }
    if seg.segments.is_empty() {
        bail!(fomcell::Error::Data(format!("no usable pulses above {threshold} A")));
    }
    let cfg = FitConfig {
        n_branches: a.branches.or(c.branches).unwrap_or(1),
        fixed_alpha: a.fixed_alpha.or(c.fixed_alpha),
        ml_tol: if ctx.tol_given { ctx.tol } else { FitConfig::default().ml_tol },
        ..FitConfig::default()
    };
    cfg.validate()?;
    let fits = fit_segments(&seg.segments, &ocv, &cfg);

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut good = Vec::new();
    let mut kept = Vec::new();
    for (index, (s, fit)) in seg.segments.iter().zip(fits).enumerate() {
        match fit {
            Ok(fit) => {
                let record = SegmentFit::new(index, s, &fit);
                writeln!(out, "{}", serde_json::to_string(&record)?)?;
                good.push(record);
                kept.push((s.clone(), fit));
            }
            Err(e) => {
                let failed = FailedSegment {
                    index,
                    soc_j: s.soc_j,
                    error: e.to_string(),
                };
                writeln!(out, "{}", serde_json::to_string(&failed)?)?;
            }
        }
    }
    if kept.is_empty() {
        bail!(fomcell::Error::NotConverged("every segment fit failed".into()));
    }
    // the top-level model comes from the segment closest to mid SOC
    let segs: Vec<_> = kept.iter().map(|(s, _)| s.clone()).collect();
    let mid = nearest_segment(&segs, 0.5).expect("non-empty");
    let model = model_from_fit(&kept[mid].1, qn, ocv, sign)?;
    let doc = ModelDocument {
        model,
        period: Some(trace.period()?),
        segments: good,
    };
    doc.write(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let pred = read_csv_column(&a.pred, &a.pred_column).with_context(|| format!("reading {}", a.pred.display()))?;
    let meas = read_csv_column(&a.meas, &a.meas_column).with_context(|| format!("reading {}", a.meas.display()))?;
    let r = evaluate(&pred, &meas)?;
    println!("{}", serde_json::to_string(&r)?);
    Ok(())
}

fn benchmark_cmd(ctx: &Ctx, a: BenchmarkArgs) -> Result<()> {
    let doc = read_model(&a.model)?;
    let trace = read_trace(&a.trace)?;
    let soc0 = a.soc0.or(ctx.cfg.soc0).context("--soc0 is required")?;
    let model = doc.model_at(soc0, ctx.cfg.selection.map(Selection::from).unwrap_or_default())?;
    let init = CellState::relaxed(soc0, model.n_branches());
    let opts = BenchOptions {
        memory: a.memory.or(ctx.cfg.memory).unwrap_or(DEFAULT_MEMORY),
        scheme: a.scheme.or(ctx.cfg.scheme).map(GlScheme::from).unwrap_or_default(),
        repeats: a.repeats,
        tol: ctx.tol,
    };
    let r = benchmark(&model, &init, &trace, &opts)?;
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        writeln!(w, "t,i,v_caputo,v_gl")?;
        for k in 0..trace.len() {
            writeln!(w, "{},{},{},{}", trace.t[k], trace.i[k], r.caputo_v[k], r.gl_v[k])?;
        }
        w.flush()?;
    }
    let summary = json!({
        "steps": r.steps,
        "memory": r.memory,
        "caputo": r.caputo,
        "gl": r.gl,
        "between": r.between,
    });
    println!("{summary}");
    Ok(())
}
