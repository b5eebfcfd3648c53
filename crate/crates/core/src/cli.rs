//! Command-line front end.
//!
//! Exit codes: 0 success, 2 input error (bad flags, unreadable or invalid
//! input), 3 numerical failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::distributions::GaussianParams;
use crate::error::{Result, SstaError};
use crate::gate_delay::{gate_moments, GateInputs, GateKernel, PdfForm};
use crate::gmm::{decompose, CombConfig, GaussianMixture, Moments};
use crate::monte_carlo::{mc_graph, McConfig};
use crate::report::{write_atomic, ReportConfig, RunReport, SinkComparison, Timings};
use crate::timing_graph::load_graph;
use crate::timing_graph::propagate::{gakeda_run, PropagationConfig, SampleCount};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ssta",
    version,
    about = "Block-based statistical static timing analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Propagate arrival distributions through a timing graph.
    Analyze(AnalyzeArgs),
    /// Tabulate the gate-delay density on a grid as CSV.
    GatePdf(GatePdfArgs),
    /// Fit a Gaussian comb to a gate density or a mixture file.
    Decompose(DecomposeArgs),
}

#[derive(Debug, Args)]
struct CombArgs {
    /// Number of comb components.
    #[arg(long, default_value_t = 32)]
    comb_size: usize,
    /// Component sigma as a multiple of the comb spacing.
    #[arg(long, default_value_t = 0.75)]
    width_factor: f64,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Compare sink moments against Monte Carlo.
    #[arg(long)]
    mc_check: bool,
    /// Monte Carlo sample count.
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    comb: CombArgs,
    /// Allow input_rho on mixture arrivals via the linearised density.
    #[arg(long)]
    weak_corr: bool,
    /// Record wall-clock timings in the report (makes it non-reproducible).
    #[arg(long)]
    timings: bool,
}

#[derive(Debug, Args)]
struct GateArgs {
    #[arg(long, allow_negative_numbers = true)]
    mu1: Option<f64>,
    #[arg(long)]
    sd1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    mu2: Option<f64>,
    #[arg(long)]
    sd2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    mu0: Option<f64>,
    #[arg(long)]
    sd0: Option<f64>,
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    rho: f64,
}

impl GateArgs {
    fn gate(&self) -> Result<GateInputs> {
        let need =
            |v: Option<f64>, name: &str| v.ok_or_else(|| SstaError::domain(format!("missing --{name}")));
        GateInputs::new(
            GaussianParams::new(need(self.mu1, "mu1")?, need(self.sd1, "sd1")?)?,
            GaussianParams::new(need(self.mu2, "mu2")?, need(self.sd2, "sd2")?)?,
            GaussianParams::new(need(self.mu0, "mu0")?, need(self.sd0, "sd0")?)?,
            self.rho,
        )
    }

    fn any_set(&self) -> bool {
        [self.mu1, self.sd1, self.mu2, self.sd2, self.mu0, self.sd0]
            .iter()
            .any(Option::is_some)
    }
}

#[derive(Debug, Args)]
struct GatePdfArgs {
    #[command(flatten)]
    gate: GateArgs,
    #[arg(long, allow_negative_numbers = true)]
    from: f64,
    #[arg(long, allow_negative_numbers = true)]
    to: f64,
    #[arg(long, default_value_t = 601)]
    points: usize,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[command(flatten)]
    gate: GateArgs,
    /// JSON file holding [[weight, mu, sigma], ...] to refit instead of a gate.
    #[arg(long, conflicts_with_all = ["mu1", "sd1", "mu2", "sd2", "mu0", "sd0"])]
    mixture: Option<PathBuf>,
    /// Comb support as LO,HI (default: target mean ± 6 std).
    #[arg(long, value_parser = parse_support, allow_hyphen_values = true)]
    support: Option<(f64, f64)>,
    #[command(flatten)]
    comb: CombArgs,
    /// Sample points of the target (default: 8 × comb-size).
    #[arg(long)]
    samples: Option<usize>,
    /// Also write the fitted mixture triples here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_support(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("bad LO: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("bad HI: {e}"))?;
    Ok((lo, hi))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    let threads = match thread_cap() {
        Ok(t) => t,
        Err(e) => return report_error(&e, stderr),
    };
    let mut buf: Vec<u8> = Vec::new();
    let outcome = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, threads, &mut buf)),
            Err(e) => Err(SstaError::numerical(format!("cannot start thread pool: {e}"))),
        },
        None => dispatch(&cli.command, threads, &mut buf),
    };
    let _ = stdout.write_all(&buf);
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => report_error(&e, stderr),
    }
}

fn report_error(e: &SstaError, stderr: &mut dyn Write) -> i32 {
    let _ = writeln!(stderr, "error: {e}");
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_NUMERICAL
    }
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("SSTA_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(SstaError::domain(format!(
                "SSTA_THREADS must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn dispatch(cmd: &Command, threads: Option<usize>, stdout: &mut Vec<u8>) -> Result<()> {
    match cmd {
        Command::Analyze(a) => analyze(a, threads, stdout),
        Command::GatePdf(a) => gate_pdf(a, stdout),
        Command::Decompose(a) => decompose_cmd(a, stdout),
    }
}

fn analyze(a: &AnalyzeArgs, threads: Option<usize>, stdout: &mut dyn Write) -> Result<()> {
    let bytes = std::fs::read(&a.graph)
        .map_err(|e| SstaError::Io(format!("cannot read {}: {e}", a.graph.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| SstaError::Parse {
        line: 0,
        column: 0,
        message: format!("graph file is not UTF-8: {e}"),
    })?;
    let graph = load_graph(text)?;
    let propagation = PropagationConfig {
        comb_size: a.comb.comb_size,
        width_factor: a.comb.width_factor,
        weak_corr: a.weak_corr,
        ..PropagationConfig::default()
    };
    propagation.validate()?;
    let mc = if a.mc_check {
        Some(McConfig::new(a.samples, a.seed)?)
    } else {
        None
    };

    let t0 = Instant::now();
    let result = gakeda_run(&graph, &propagation)?;
    let prop_s = t0.elapsed().as_secs_f64();

    let mut report = RunReport::new(
        &bytes,
        ReportConfig {
            propagation,
            monte_carlo: mc,
            threads,
        },
        result,
    );
    let mut mc_s = None;
    if let Some(mc) = mc {
        let t1 = Instant::now();
        let sims = mc_graph(&graph, &mc)?;
        mc_s = Some(t1.elapsed().as_secs_f64());
        let mut cmp = BTreeMap::new();
        for (id, r) in sims {
            let analytic = report.node(&id).expect("sinks are graph nodes").moments;
            cmp.insert(id, SinkComparison::new(analytic, r));
        }
        report.mc_check = Some(cmp);
    }
    if a.timings {
        report.timings = Some(Timings {
            propagation_seconds: prop_s,
            monte_carlo_seconds: mc_s,
        });
    }
    write_atomic(&a.out, report.to_json()?.as_bytes())?;

    for k in graph.sinks() {
        let id = &graph.node(k).id;
        let m = report.node(id).expect("sink present").moments;
        let mut line = format!("{id}: mean {} std {}", m.mean, m.std);
        if let Some(c) = report.mc_check.as_ref().and_then(|c| c.get(id)) {
            line += &format!(
                " | mc mean {} (se {}) gap {} se",
                c.mc.mean, c.mc.se_mean, c.mean_gap_in_se
            );
        }
        writeln!(stdout, "{line}")?;
    }
    Ok(())
}

fn gate_pdf(a: &GatePdfArgs, stdout: &mut dyn Write) -> Result<()> {
    let g = a.gate.gate()?;
    if a.points == 0 {
        return Err(SstaError::domain("--points must be at least 1"));
    }
    if !(a.from.is_finite() && a.to.is_finite()) || a.from > a.to {
        return Err(SstaError::domain("grid needs finite --from <= --to"));
    }
    if a.points == 1 && a.from != a.to {
        return Err(SstaError::domain("--points 1 needs --from equal to --to"));
    }
    let exact = GateKernel::new(&g, PdfForm::Exact)?;
    let indep = GateKernel::new(&g, PdfForm::Independent)?;
    let weak = GateKernel::new(&g, PdfForm::WeakCorr)?;
    let mut out = String::from("x,exact,independent,weak_corr\n");
    for i in 0..a.points {
        let x = if i + 1 == a.points {
            a.to
        } else {
            a.from + (a.to - a.from) * i as f64 / (a.points - 1) as f64
        };
        out += &format!("{x},{},{},{}\n", exact.pdf(x), indep.pdf(x), weak.pdf(x));
    }
    stdout.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct DecomposeOutput {
    linf_residual: f64,
    linf_realized: f64,
    peak: f64,
    mass: f64,
    support: (f64, f64),
    comb_size: usize,
    width_factor: f64,
    samples: usize,
    target_moments: Moments,
    moments: Moments,
    components: GaussianMixture,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

fn decompose_cmd(a: &DecomposeArgs, stdout: &mut dyn Write) -> Result<()> {
    enum Target {
        Gate(GateKernel),
        Mix(GaussianMixture),
    }
    let (target, target_moments) = match &a.mixture {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| SstaError::Io(format!("cannot read {}: {e}", path.display())))?;
            let mix: GaussianMixture = serde_json::from_str(&text).map_err(|e| SstaError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
            let m = mix.moments();
            (Target::Mix(mix), m)
        }
        None => {
            if !a.gate.any_set() {
                return Err(SstaError::domain("give either --mixture or the gate parameters"));
            }
            let g = a.gate.gate()?;
            let gm = gate_moments(&g)?;
            let m = Moments {
                mean: gm.mean,
                std: gm.std,
                skewness: gm.skewness,
                kurtosis: gm.kurtosis,
            };
            (Target::Gate(GateKernel::new(&g, PdfForm::Exact)?), m)
        }
    };
    let support = a.support.unwrap_or((
        target_moments.mean - 6.0 * target_moments.std,
        target_moments.mean + 6.0 * target_moments.std,
    ));
    let cfg = CombConfig::new(a.comb.comb_size, support, a.comb.width_factor)?;
    let n = a.samples.unwrap_or(SampleCount::PerComponent(8).resolve(cfg.m));
    let f = |x: f64| match &target {
        Target::Gate(k) => k.pdf(x),
        Target::Mix(m) => m.pdf(x),
    };
    let d = decompose(f, &cfg, n)?;
    let peak = crate::gmm::sample_grid(support, n)
        .into_iter()
        .map(f)
        .fold(0.0, f64::max);
    let d = d.with_quality_threshold(1e-3 * peak);
    if let Some(path) = &a.out {
        let json = serde_json::to_string_pretty(&d.mixture)
            .map_err(|e| SstaError::numerical(format!("cannot serialise mixture: {e}")))?;
        write_atomic(path, (json + "\n").as_bytes())?;
    }
    let out = DecomposeOutput {
        linf_residual: d.linf_residual,
        linf_realized: d.linf_realized,
        peak,
        mass: d.mass,
        support,
        comb_size: cfg.m,
        width_factor: cfg.width_factor,
        samples: n,
        target_moments,
        moments: d.mixture.moments(),
        components: d.mixture.clone(),
        warning: d.warning.clone(),
    };
    let json = serde_json::to_string_pretty(&out)
        .map_err(|e| SstaError::numerical(format!("cannot serialise output: {e}")))?;
    writeln!(stdout, "{json}")?;
    Ok(())
}
