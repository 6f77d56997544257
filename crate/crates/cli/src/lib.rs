//! `transience-kit`: load chain specs, run analyses, emit JSON reports and CSV
//! curves.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 when a report contradicts
//! the implication chain between transience classes.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use transience_core::classify::{classify, monte_carlo_block, ClassifyOptions, MonteCarloBlock, MonteCarloConfig};
use transience_core::drift::{
    check_algebraic_system, check_geometric, check_gt, check_strong, construct_v_uniform, DriftCertificate, TailForm,
};
use transience_core::firstreturn::return_table;
use transience_core::rwhl::{
    exp_certificate, poly_certificate, ExponentialCertificate, PolyCertificate, PolySearchOptions,
};
use transience_core::skipfree::{
    f_table, miw_certificate, sigma1, sigma34, xi_and_moments, KilledCriteria, MiwCertificate, ReturnMoments,
    SigmaDiagnostics,
};
use transience_core::{ChainSpec, StateSet, TransienceReport, TruncatedKernel};

pub const THREADS_ENV: &str = "TRANSIENCE_KIT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "transience-kit",
    version,
    about = "Transience classification of countable-state Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every criterion and print the full report.
    Classify(ClassifyArgs),
    /// First-return distribution table as CSV.
    ReturnDist(ChainArgs),
    /// Verify a user-supplied drift certificate.
    DriftCheck(DriftCheckArgs),
    /// Skip-free criteria: sigma series, xi, moments and the explicit certificate.
    Skipfree(SkipfreeArgs),
    /// Certificate searches for a random walk on the half line.
    Rwhl(RwhlArgs),
    /// Monte Carlo estimates against the exact first-return table.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct ChainArgs {
    /// Chain description (JSON).
    #[arg(long)]
    chain: PathBuf,
    /// Target set, comma separated; defaults to the chain's reference state.
    #[arg(long = "A", value_delimiter = ',')]
    set: Option<Vec<usize>>,
    /// Truncation size.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Time horizon.
    #[arg(long = "H")]
    h: Option<usize>,
    /// Directory for CSV curves and a copy of the JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Indent JSON output.
    #[arg(long)]
    pretty: bool,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Rates tried by the geometric and strong blocks.
    #[arg(long, value_delimiter = ',')]
    kappa_grid: Option<Vec<f64>>,
    /// Moment orders for the algebraic blocks.
    #[arg(long, value_delimiter = ',')]
    ell: Option<Vec<usize>>,
    /// Monte Carlo paths; 0 skips the simulation block.
    #[arg(long, default_value_t = 0)]
    paths: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct DriftCheckArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Certificate to verify (JSON).
    #[arg(long)]
    cert: PathBuf,
    /// `csv` prints the per-state margin table instead of JSON.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct SkipfreeArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Highest moment order.
    #[arg(long, default_value_t = 2)]
    ell: usize,
}

#[derive(Debug, Args)]
struct RwhlArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Orders for the polynomial certificate search (each at least 2).
    #[arg(long, value_delimiter = ',', default_value = "2")]
    ell: Vec<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    chain: ChainArgs,
    /// Starting state; defaults to the first state of the target set.
    #[arg(long)]
    x: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    paths: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Inconsistent(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Inconsistent(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) => write!(f, "error: {m}"),
            Failure::Inconsistent(m) => write!(f, "inconsistent report: {m}"),
        }
    }
}

fn invalid(e: impl fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        invalid(e)
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = configure_threads().and_then(|_| dispatch(cli.command, out));
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "{f}");
            f.code()
        }
    }
}

/// Caps the global rayon pool at `TRANSIENCE_KIT_THREADS` when set.
fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or_else(|| invalid(format!("{THREADS_ENV}={value:?} is not a positive integer")))?;
    // The pool can only be built once per process; later calls keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Classify(a) => run_classify(a, out),
        Command::ReturnDist(a) => run_return_dist(a, out),
        Command::DriftCheck(a) => run_drift_check(a, out),
        Command::Skipfree(a) => run_skipfree(a, out),
        Command::Rwhl(a) => run_rwhl(a, out),
        Command::Simulate(a) => run_simulate(a, out),
    }
}

/// Reads a JSON file, reporting parse errors with their position.
fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
}

impl ChainArgs {
    fn load(&self) -> Result<ChainSpec, Failure> {
        let text = fs::read_to_string(&self.chain).map_err(|e| invalid(format!("{}: {e}", self.chain.display())))?;
        ChainSpec::from_json(&text).map_err(|e| {
            if e.line == 0 {
                invalid(format!("{}: {}", self.chain.display(), e.message))
            } else {
                invalid(format!(
                    "{}:{}:{}: {}",
                    self.chain.display(),
                    e.line,
                    e.column,
                    e.message
                ))
            }
        })
    }

    fn truncation(&self, default: usize) -> Result<usize, Failure> {
        match self.n.unwrap_or(default) {
            n if n >= 2 => Ok(n),
            n => Err(invalid(format!("--N {n}: the truncation needs at least 2 states"))),
        }
    }

    fn horizon(&self, default: usize) -> Result<usize, Failure> {
        match self.h.unwrap_or(default) {
            h if h >= 1 => Ok(h),
            _ => Err(invalid("--H must be at least 1")),
        }
    }

    fn target(&self, spec: &ChainSpec, size: usize) -> Result<StateSet, Failure> {
        let set = match &self.set {
            Some(states) => StateSet::new(states.clone()).map_err(invalid)?,
            None => spec.default_set(),
        };
        set.check_bound(size).map_err(invalid)?;
        Ok(set)
    }

    fn emit<T: Serialize>(&self, value: &T, name: &str, out: &mut dyn Write) -> Result<(), Failure> {
        let text = if self.pretty {
            serde_json::to_string_pretty(value)
        } else {
            serde_json::to_string(value)
        }
        .map_err(invalid)?;
        writeln!(out, "{text}")?;
        if let Some(dir) = &self.out {
            fs::write(dir.join(name), format!("{text}\n"))?;
        }
        Ok(())
    }

    /// Writes a CSV file into the output directory, if one was given.
    fn write_csv(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
        if let Some(dir) = &self.out {
            let mut file = io::BufWriter::new(fs::File::create(dir.join(name))?);
            body(&mut file)?;
            file.flush()?;
        }
        Ok(())
    }

    fn prepare_out(&self) -> Result<(), Failure> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
        }
        Ok(())
    }
}

fn run_classify(a: ClassifyArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let c = &a.chain;
    c.prepare_out()?;
    let spec = c.load()?;
    let defaults = ClassifyOptions::default();
    let opts = ClassifyOptions {
        set: c.set.clone().map(StateSet::new).transpose().map_err(invalid)?,
        kappa_grid: a.kappa_grid.clone().unwrap_or(defaults.kappa_grid),
        ell_list: a.ell.clone().unwrap_or(defaults.ell_list),
        truncation: c.truncation(defaults.truncation)?,
        horizon: c.horizon(defaults.horizon)?,
        monte_carlo: (a.paths > 0).then_some(MonteCarloConfig {
            paths: a.paths,
            seed: a.seed,
        }),
    };
    let report = classify(&spec, &opts).map_err(invalid)?;
    c.emit(&report, "report.json", out)?;
    if c.out.is_some() {
        let kernel = spec.truncate(opts.truncation).map_err(invalid)?;
        let set = StateSet::new(report.set.clone()).map_err(invalid)?;
        let table = return_table(&kernel, &set, opts.horizon);
        c.write_csv("return_table.csv", |w| table.write_csv(w, &kernel.content_hash()))?;
        if let Some(sf) = &report.skipfree {
            for (name, s) in [
                ("sigma1", &sf.sigma1),
                ("xi", &sf.xi),
                ("sigma3", &sf.sigma3),
                ("sigma4", &sf.sigma4),
            ] {
                if let Some(s) = s {
                    c.write_csv(&format!("{name}.csv"), |w| s.write_csv(w))?;
                }
            }
        }
    }
    consistency(&report)
}

fn consistency(report: &TransienceReport) -> Result<(), Failure> {
    if report.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Inconsistent(report.violations.join("; ")))
    }
}

fn run_return_dist(c: ChainArgs, out: &mut dyn Write) -> Result<(), Failure> {
    c.prepare_out()?;
    let spec = c.load()?;
    let kernel = spec.truncate(c.truncation(400)?).map_err(invalid)?;
    let set = c.target(&spec, kernel.size())?;
    let table = return_table(&kernel, &set, c.horizon(400)?);
    let hash = kernel.content_hash();
    match &c.out {
        Some(_) => c.write_csv("return_table.csv", |w| table.write_csv(w, &hash)),
        None => Ok(table.write_csv(out, &hash)?),
    }
}

/// A certificate as supplied by the user.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
enum CertificateInput {
    #[serde(rename = "geometric")]
    Geometric {
        set: Option<Vec<usize>>,
        w: Vec<f64>,
        lambda: f64,
        b: f64,
        tail: Option<TailForm>,
    },
    #[serde(rename = "gt")]
    Gt {
        set: Option<Vec<usize>>,
        w: Vec<f64>,
        lambda: f64,
        tail: Option<TailForm>,
    },
    #[serde(rename = "strong")]
    Strong {
        w: Vec<f64>,
        lambda: f64,
        tail: Option<TailForm>,
    },
    #[serde(rename = "algebraic-system")]
    AlgebraicSystem {
        set: Option<Vec<usize>>,
        weights: Vec<Vec<f64>>,
        d: f64,
        b: f64,
        tails: Option<Vec<TailForm>>,
    },
    #[serde(rename = "v-uniform")]
    VUniform { v: Vec<f64>, n0: usize, beta: f64 },
}

impl CertificateInput {
    fn len(&self) -> usize {
        match self {
            CertificateInput::Geometric { w, .. }
            | CertificateInput::Gt { w, .. }
            | CertificateInput::Strong { w, .. } => w.len(),
            CertificateInput::AlgebraicSystem { weights, .. } => weights.first().map_or(0, Vec::len),
            CertificateInput::VUniform { v, .. } => v.len(),
        }
    }

    fn set(&self) -> Option<&Vec<usize>> {
        match self {
            CertificateInput::Geometric { set, .. }
            | CertificateInput::Gt { set, .. }
            | CertificateInput::AlgebraicSystem { set, .. } => set.as_ref(),
            _ => None,
        }
    }

    fn check(self, kernel: &TruncatedKernel, set: &StateSet) -> DriftCertificate {
        match self {
            CertificateInput::Geometric { w, lambda, b, tail, .. } => check_geometric(kernel, set, &w, lambda, b, tail),
            CertificateInput::Gt { w, lambda, tail, .. } => check_gt(kernel, set, &w, lambda, tail),
            CertificateInput::Strong { w, lambda, tail } => check_strong(kernel, &w, lambda, tail),
            CertificateInput::AlgebraicSystem {
                weights, d, b, tails, ..
            } => check_algebraic_system(kernel, set, &weights, d, b, tails),
            CertificateInput::VUniform { v, n0, beta } => construct_v_uniform(kernel, &v, n0, beta),
        }
    }
}

#[derive(Debug, Serialize)]
struct DriftCheckOutput {
    schema: &'static str,
    states: usize,
    certificate: DriftCertificate,
}

fn margin_csv(cert: &DriftCertificate, w: &mut dyn Write) -> io::Result<()> {
    writeln!(w, "x,margin")?;
    for (x, m) in cert.margins.iter().enumerate() {
        match m {
            Some(m) => writeln!(w, "{x},{m:e}")?,
            None => writeln!(w, "{x},")?,
        }
    }
    Ok(())
}

fn run_drift_check(a: DriftCheckArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let c = &a.chain;
    c.prepare_out()?;
    let spec = c.load()?;
    let input: CertificateInput = read_json(&a.cert)?;
    let n = match spec.fixed_size() {
        Some(n) => n,
        None => c.n.unwrap_or(input.len()),
    };
    if input.len() != n {
        return Err(invalid(format!(
            "certificate has {} weights but the kernel has {n} states",
            input.len()
        )));
    }
    let kernel = spec.truncate(n).map_err(invalid)?;
    let set = match input.set() {
        Some(states) => StateSet::new(states.clone()).map_err(invalid)?,
        None => c.target(&spec, kernel.size())?,
    };
    set.check_bound(kernel.size()).map_err(invalid)?;
    let certificate = input.check(&kernel, &set);
    c.write_csv("margins.csv", |w| margin_csv(&certificate, w))?;
    match a.format {
        Format::Csv => Ok(margin_csv(&certificate, out)?),
        Format::Json => c.emit(
            &DriftCheckOutput {
                schema: "drift_check_v1",
                states: kernel.size(),
                certificate,
            },
            "drift_check.json",
            out,
        ),
    }
}

#[derive(Debug, Serialize)]
struct SkipfreeOutput {
    schema: &'static str,
    depth: usize,
    index_offset: usize,
    stochastic: bool,
    sigma1: Option<SigmaDiagnostics>,
    moments: Option<ReturnMoments>,
    certificate: Option<MiwCertificate>,
    killed: Option<KilledCriteria>,
    errors: Vec<String>,
}

fn run_skipfree(a: SkipfreeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let c = &a.chain;
    c.prepare_out()?;
    let chain = c.load()?;
    let spec = chain
        .as_skipfree()
        .ok_or_else(|| invalid("skipfree needs a skip-free chain (type \"skipfree\")"))?;
    let n = c.truncation(40)?;
    let stochastic = spec.is_stochastic_upto(n - 1).map_err(invalid)?;
    let mut o = SkipfreeOutput {
        schema: "skipfree_v1",
        depth: n,
        index_offset: chain.index_offset(),
        stochastic,
        sigma1: None,
        moments: None,
        certificate: None,
        killed: None,
        errors: Vec::new(),
    };
    if stochastic {
        match sigma1(spec, n) {
            Ok(s) => o.sigma1 = Some(s),
            Err(e) => o.errors.push(format!("sigma1: {e}")),
        }
        match xi_and_moments(spec, a.ell, n) {
            Ok(m) => o.moments = Some(m),
            Err(e) => o.errors.push(format!("moments: {e}")),
        }
        match miw_certificate(spec, n) {
            Ok(m) => o.certificate = Some(m),
            Err(e) => o.errors.push(format!("certificate: {e}")),
        }
    } else {
        match sigma34(spec, n) {
            Ok(k) => o.killed = Some(k),
            Err(e) => o.errors.push(format!("killed criteria: {e}")),
        }
    }
    c.emit(&o, "skipfree.json", out)?;
    if c.out.is_some() {
        let table = f_table(spec, n).map_err(invalid)?;
        c.write_csv("f_column.csv", |w| table.write_column_csv(w))?;
        let mut series: Vec<(&str, &SigmaDiagnostics)> = Vec::new();
        if let Some(s) = &o.sigma1 {
            series.push(("sigma1", s));
        }
        if let Some(m) = &o.moments {
            series.push(("xi", &m.xi));
            series.push(("f_sum", &m.f_sum));
        }
        if let Some(k) = &o.killed {
            series.push(("sigma3", &k.sigma3));
            series.push(("sigma4", &k.sigma4));
        }
        for (name, s) in series {
            c.write_csv(&format!("{name}.csv"), |w| s.write_csv(w))?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct PolyAttempt {
    ell: usize,
    certificate: Option<PolyCertificate>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct RwhlOutput {
    schema: &'static str,
    truncation: usize,
    exponential: Option<ExponentialCertificate>,
    exponential_error: Option<String>,
    polynomial: Vec<PolyAttempt>,
}

fn run_rwhl(a: RwhlArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let c = &a.chain;
    c.prepare_out()?;
    let ChainSpec::Rwhl(gamma) = c.load()? else {
        return Err(invalid("rwhl needs a half-line random walk (type \"rwhl\")"));
    };
    if let Some(&l) = a.ell.iter().find(|&&l| l < 2) {
        return Err(invalid(format!(
            "--ell {l}: polynomial certificates need order at least 2"
        )));
    }
    let n = c.truncation(300)?;
    let (exponential, exponential_error) = match exp_certificate(&gamma, None, n) {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let opts = PolySearchOptions {
        truncation: n,
        ..PolySearchOptions::default()
    };
    let polynomial = a
        .ell
        .iter()
        .map(|&ell| match poly_certificate(&gamma, ell, &opts) {
            Ok(p) => PolyAttempt {
                ell,
                certificate: Some(p),
                error: None,
            },
            Err(e) => PolyAttempt {
                ell,
                certificate: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let o = RwhlOutput {
        schema: "rwhl_v1",
        truncation: n,
        exponential,
        exponential_error,
        polynomial,
    };
    c.emit(&o, "rwhl.json", out)
}

#[derive(Debug, Serialize)]
struct SimulateOutput {
    schema: &'static str,
    set: Vec<usize>,
    states: usize,
    horizon: usize,
    #[serde(flatten)]
    block: MonteCarloBlock,
}

fn run_simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let c = &a.chain;
    c.prepare_out()?;
    let spec = c.load()?;
    let kernel = spec.truncate(c.truncation(400)?).map_err(invalid)?;
    let set = c.target(&spec, kernel.size())?;
    let x = a.x.unwrap_or(set.states()[0]);
    if x >= kernel.size() {
        return Err(invalid(format!(
            "--x {x} is outside the {}-state truncation",
            kernel.size()
        )));
    }
    if a.paths == 0 {
        return Err(invalid("--paths must be positive"));
    }
    let h = c.horizon(400)?;
    let block = monte_carlo_block(
        &kernel,
        &set,
        x,
        h,
        MonteCarloConfig {
            paths: a.paths,
            seed: a.seed,
        },
    );
    let o = SimulateOutput {
        schema: "simulate_v1",
        set: set.states().to_vec(),
        states: kernel.size(),
        horizon: h,
        block,
    };
    c.emit(&o, "simulate.json", out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use transience_core::classify::implication_violations;
    use transience_core::BlockVerdict;

    #[test]
    fn violations_map_to_exit_code_two() {
        let spec = ChainSpec::from_json(r#"{"type":"matrix","rows":[[0.2,0.3],[0.4,0.1]]}"#).unwrap();
        let opts = ClassifyOptions {
            truncation: 2,
            horizon: 50,
            ..ClassifyOptions::default()
        };
        let mut report = classify(&spec, &opts).unwrap();
        assert!(consistency(&report).is_ok());
        report.transient.verdict = BlockVerdict::RefutedAtTruncation;
        report.violations = implication_violations(&report);
        let failure = consistency(&report).unwrap_err();
        assert_eq!(failure.code(), 2);
        assert!(failure.to_string().starts_with("inconsistent report"));
    }
}
