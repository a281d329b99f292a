use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use costguard_client::{Client, ClientError, DEFAULT_SERVER};
use costguard_core::api::ErrorKind;
use costguard_core::experiment::{log_csv, metrics_csv, BenchConfig, Method, RunConfig, RunMode};
use costguard_core::synth::GeneratorConfig;
use serde::de::DeserializeOwned;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_ASSERT: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "costguard",
    version,
    about = "Client for the costguard service"
)]
struct Cli {
    /// Service base URL.
    #[arg(long, global = true, env = "COSTGUARD_SERVER", default_value = DEFAULT_SERVER)]
    server: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-label stream as CSV.
    Generate(GenerateArgs),
    /// Run the online protocol over a stream and write per-seed metrics.
    Run(RunArgs),
    /// Compare tree thresholds against the brute-force search.
    OracleCheck(OracleArgs),
    /// Time threshold updates against calibration size.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// JSON generator config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short = 'k', long)]
    num_classes: Option<usize>,
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    base_rate: Option<f64>,
    #[arg(long)]
    heterogeneity: Option<f64>,
    /// Multiply true probabilities by this factor before clamping.
    #[arg(long)]
    miscalibration: Option<f64>,
    /// Output CSV; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Expected,
    Violation,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Controller,
    Classwise,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stream CSV.
    #[arg(long)]
    stream: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Comma-separated cost targets.
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<f64>>,
    #[arg(long)]
    delta: Option<f64>,
    /// Run seeds `0..N`; seed `s` uses the `s`-th chunk of the stream.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Keep only the most recent calibration samples.
    #[arg(long)]
    window: Option<usize>,
    /// Value function kind: `tp`, `tpc`, `fp`, `fpc` or `gen`.
    #[arg(long)]
    value: Option<String>,
    /// Cost function kind, with the same names as `--value`.
    #[arg(long)]
    cost: Option<String>,
    /// Candidate family: `full`, `prob`, `value`, `ratio-additive` or `ratio-general`.
    #[arg(long)]
    universe: Option<String>,
    /// Class weights, comma or whitespace separated.
    #[arg(long)]
    weights_file: Option<PathBuf>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    checkpoints: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Metrics CSV; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Per-prediction log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Omit update timings so output is byte-identical across runs.
    #[arg(long)]
    no_timing: bool,
    /// Exit 3 unless every target passes its guarantee check.
    #[arg(long)]
    assert: bool,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// JSON report; stdout summary only when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Exit 3 on any mismatch.
    #[arg(long)]
    assert: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// JSON bench config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated calibration sizes.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    oracle_updates: Option<usize>,
    #[arg(long)]
    oracle_budget_secs: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// An error paired with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: anyhow::Error) -> Self {
        Failure {
            code: EXIT_USAGE,
            error,
        }
    }

    fn assertion(msg: String) -> Self {
        Failure {
            code: EXIT_ASSERT,
            error: anyhow!(msg),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure::usage(error)
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let code = match e.kind() {
            Some(ErrorKind::Data) => EXIT_DATA,
            _ => EXIT_USAGE,
        };
        let error = match &e {
            ClientError::Api { body, .. } if body.line.is_some() => {
                anyhow!("data error: {}", body.message)
            }
            _ => anyhow::Error::new(e),
        };
        Failure { code, error }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_or<T: DeserializeOwned>(path: Option<&Path>, default: T) -> anyhow::Result<T> {
    path.map_or(Ok(default), read_json)
}

/// Parses a snake_case enum name through its serde representation.
fn parse_kind<T: DeserializeOwned>(what: &str, name: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| anyhow!("unknown {what} `{name}`"))
}

fn read_weights(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .with_context(|| format!("bad weight `{t}` in {}", path.display()))
        })
        .collect()
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn run_config(args: &ExperimentArgs) -> anyhow::Result<RunConfig> {
    let mut c = load_or(args.config.as_deref(), RunConfig::default())?;
    if let Some(m) = args.mode {
        c.mode = match m {
            ModeArg::Expected => RunMode::Expected,
            ModeArg::Violation => RunMode::Violation,
        };
    }
    if let Some(m) = args.method {
        c.method = match m {
            MethodArg::Controller => Method::Controller,
            MethodArg::Classwise => Method::Classwise,
        };
    }
    if let Some(t) = &args.targets {
        c.cost_targets = t.clone();
    }
    if let Some(d) = args.delta {
        c.delta = d;
    }
    if let Some(s) = args.seeds {
        c.seeds = (0..s).collect();
    }
    if let Some(n) = args.n_test {
        c.n_test = n;
    }
    if let Some(b) = args.burn_in {
        c.burn_in = b;
    }
    if let Some(w) = args.window {
        c.window = Some(w);
    }
    if let Some(v) = &args.value {
        c.value = parse_kind("value function", v)?;
    }
    if let Some(v) = &args.cost {
        c.cost = parse_kind("cost function", v)?;
    }
    if let Some(u) = &args.universe {
        c.universe = Some(parse_kind("universe", u)?);
    }
    if let Some(p) = &args.weights_file {
        c.weights = Some(read_weights(p)?);
    }
    if let Some(m) = args.mc_samples {
        c.mc_samples = m;
    }
    if let Some(k) = args.checkpoints {
        c.checkpoints = k;
    }
    c.validate()?;
    Ok(c)
}

fn read_stream_file(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading stream {}", path.display()))
}

async fn generate(client: &Client, args: GenerateArgs) -> CliResult {
    let mut c: GeneratorConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => GeneratorConfig::new(
            args.num_classes.unwrap_or(10),
            args.n
                .ok_or_else(|| anyhow!("--n is required without --config"))?,
            0,
        ),
    };
    if let Some(k) = args.num_classes {
        c.num_classes = k;
    }
    if let Some(n) = args.n {
        c.n = n;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(b) = args.base_rate {
        c.base_rate = b;
    }
    if let Some(h) = args.heterogeneity {
        c.heterogeneity = h;
    }
    if let Some(m) = args.miscalibration {
        c.miscalibration = Some(m);
    }
    c.validate().map_err(anyhow::Error::new)?;
    let csv = client.generate(&c).await?;
    write_output(args.out.as_deref(), &csv)?;
    Ok(())
}

async fn run(client: &Client, args: RunArgs) -> CliResult {
    let mut config = run_config(&args.exp)?;
    if args.no_timing {
        config.timing = false;
    }
    let stream = read_stream_file(&args.exp.stream)?;
    let resp = client.run(&config, stream, args.log.is_some()).await?;
    write_output(args.out.as_deref(), &metrics_csv(&resp.rows))?;
    if let (Some(path), Some(log)) = (&args.log, &resp.log) {
        write_output(Some(path), &log_csv(log))?;
    }
    for c in &resp.checks {
        eprintln!(
            "target {}: statistic {:.4} bound {:.4} {}",
            c.target,
            c.statistic,
            c.bound,
            if c.passed { "ok" } else { "FAILED" }
        );
    }
    let failed: Vec<String> = resp
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.target.to_string())
        .collect();
    if args.assert && !failed.is_empty() {
        return Err(Failure::assertion(format!(
            "guarantee check failed for targets {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

async fn oracle_check(client: &Client, args: OracleArgs) -> CliResult {
    let config = run_config(&args.exp)?;
    let stream = read_stream_file(&args.exp.stream)?;
    let report = client.oracle_check(&config, stream).await?;
    println!(
        "checks={} matches={} boundary={} mismatches={}",
        report.checks,
        report.matches,
        report.boundary,
        report.mismatches.len()
    );
    for m in report.mismatches.iter().take(10) {
        eprintln!(
            "mismatch: target {} after {} samples: tree {} oracle {}",
            m.target, m.n_seen, m.tree, m.oracle
        );
    }
    if let Some(p) = &args.out {
        let json = serde_json::to_string_pretty(&report).map_err(anyhow::Error::new)?;
        write_output(Some(p), &json)?;
    }
    if args.assert && !report.is_clean() {
        return Err(Failure::assertion(format!(
            "{} threshold mismatches",
            report.mismatches.len()
        )));
    }
    Ok(())
}

async fn bench(client: &Client, args: BenchArgs) -> CliResult {
    let mut c = load_or(args.config.as_deref(), BenchConfig::default())?;
    if let Some(g) = args.n_grid {
        c.n_grid = g;
    }
    if let Some(u) = args.updates {
        c.updates = u;
    }
    if let Some(u) = args.oracle_updates {
        c.oracle_updates = u;
    }
    if let Some(b) = args.oracle_budget_secs {
        c.oracle_budget_secs = b;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    let report = client.bench(&c).await?;
    write_output(args.out.as_deref(), &report.to_csv())?;
    let fmt = |e: Option<f64>| e.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
    eprintln!(
        "log-log slope: tree {} direct search {}",
        fmt(report.tree_exponent),
        fmt(report.oracle_exponent)
    );
    Ok(())
}

async fn dispatch(cli: Cli) -> CliResult {
    let client = Client::new(cli.server);
    match cli.command {
        Command::Generate(a) => generate(&client, a).await,
        Command::Run(a) => run(&client, a).await,
        Command::OracleCheck(a) => oracle_check(&client, a).await,
        Command::Bench(a) => bench(&client, a).await,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let runtime = match tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
    {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match runtime.block_on(dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
