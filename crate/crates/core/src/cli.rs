//! The `prefdetect` command line.
//!
//! Exit codes: 0 success or a feasible verdict, 1 an analysis-level
//! negative result (infeasible budget, underpowered plan), 2 usage errors,
//! 3 data errors. Randomized commands take `--seed` or generate one and
//! report it. When `--out` is given the artifact is written there along
//! with `<out>.manifest.json`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::allocation::{default_screening_budget, offline_replay, AllocationPolicy, JudgmentPool, PowerEstimate, ReplayOptions};
use crate::data::{Dataset, Format, PairAggregate, PairKey, TiePolicy};
use crate::dependence::{
    cluster_robust_ratios, compare_protocols, decompose_all, icc_table, render_icc_text, write_decomposition_csv,
    write_icc_csv,
};
use crate::detect::{detectability_curve, same_budget_z, CurveOptions, Sampling, TestKind};
use crate::error::{Error, Result};
use crate::margins::{
    bootstrap_quantile_ci, early_late_stability, near_tie_filter, qualifying_margins, render_near_tie_text,
    render_quantiles_text, tail_quantiles, tie_rate_stats, write_margins_csv,
};
use crate::planner::{allocation_advice, pilot_assess, Verdict, LOW_SIGNAL_THRESHOLD};
use crate::scenario::{write_power_csv, Scenario};
use crate::stats::{closed_form_budget, required_sample_size, TestConfig};

#[derive(Debug, Parser, Serialize)]
#[command(name = "prefdetect", version, about = "Detectability and budget planning for pairwise preference evaluation")]
pub struct Cli {
    /// Judgment file (CSV or JSONL).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, global = true, value_enum)]
    pub format: Option<InputFormat>,
    /// Seed for randomized commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the command's artifact (CSV) here, plus a manifest.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Decisive judgments needed to detect a margin.
    Budget(BudgetArgs),
    /// Margin quantiles and the near-tie subset of a dataset.
    Margins(MarginsArgs),
    /// Monte-Carlo detectability curves.
    Detect(DetectArgs),
    /// Allocation policies on a synthetic scenario.
    Simulate(SimulateArgs),
    /// Allocation policies replayed against a collected pool.
    Replay(ReplayArgs),
    /// Sample sizes inflated for intra-cluster correlation.
    Icc(IccArgs),
    /// Feasibility verdict from a pilot.
    Plan(PlanArgs),
    /// Between/within prompt variance and cluster-robust ratios.
    Decompose(DecomposeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BudgetArgs {
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
    pub delta: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    pub power: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct MarginsArgs {
    #[arg(long, default_value = "drop")]
    pub tie_policy: TiePolicy,
    #[arg(long, default_value_t = 200)]
    pub min_decisive: u64,
    #[arg(long, default_value_t = 0.10)]
    pub tau: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5")]
    pub levels: Vec<f64>,
    /// Keep only the first judgment of each prompt id.
    #[arg(long)]
    pub unique_prompts: bool,
    /// Bootstrap replicates for quantile intervals (0 disables).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    /// Report tie rates against margins.
    #[arg(long)]
    pub tie_rates: bool,
    /// Compare margins from the first and last K decisive judgments.
    #[arg(long)]
    pub stability: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TestChoice {
    Exact,
    Normal,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    /// Pair as `a,b`; all well-sampled pairs when omitted.
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,400,800,1600")]
    pub grid: Vec<u64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    #[arg(long, default_value_t = 200)]
    pub min_decisive: u64,
    #[arg(long)]
    pub without_replacement: bool,
    #[arg(long, value_enum, default_value = "exact")]
    pub test: TestChoice,
    /// Also report the pooled same-budget z distribution at this n.
    #[arg(long)]
    pub z_budget: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Scenario document (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Proportional,
    TwoStage,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    /// Pair as `a,b`; may be omitted when the input holds a single pair.
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long, required = true, value_delimiter = ',')]
    pub budget: Vec<u64>,
    #[arg(long, value_enum, default_value = "both")]
    pub policy: PolicyChoice,
    /// Screening judgments per type; defaults to ceil(10 ln m).
    #[arg(long)]
    pub b: Option<u64>,
    #[arg(long, default_value_t = 0.2)]
    pub q: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Fail rather than spill onto non-retained types when a retained
    /// type runs out of judgments.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct IccArgs {
    #[arg(long, value_delimiter = ',', default_value = "26,1051")]
    pub n0: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.0001,0.001,0.01")]
    pub rho: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    /// Pilot pair in `--input`, as `a,b`.
    #[arg(long)]
    pub pair: Option<String>,
    /// Pilot counts: second-model wins.
    #[arg(long, requires = "wins_first")]
    pub wins_second: Option<u64>,
    /// Pilot counts: first-model wins.
    #[arg(long, requires = "wins_second")]
    pub wins_first: Option<u64>,
    /// Pilot win rate of the second model, with `--n0`.
    #[arg(long, requires = "n0")]
    pub p_hat: Option<f64>,
    #[arg(long, requires = "p_hat")]
    pub n0: Option<u64>,
    #[arg(long)]
    pub budget: u64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    pub power: f64,
    #[arg(long, default_value_t = LOW_SIGNAL_THRESHOLD)]
    pub threshold: f64,
    /// Concentration statistic, for allocation advice.
    #[arg(long, requires = "m")]
    pub kappa: Option<f64>,
    /// Number of prompt types, for allocation advice.
    #[arg(long)]
    pub m: Option<usize>,
    /// Screening judgments per type; defaults to ceil(10 ln m).
    #[arg(long)]
    pub b: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct DecomposeArgs {
    /// A second protocol's judgments to compare against.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub min_prompts: usize,
    #[arg(long, default_value_t = 1)]
    pub min_decisive: u64,
}

/// Resolved parameters and inputs of a run, written next to its artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub params: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// What a command produced.
struct Report {
    text: String,
    json: Value,
    /// CSV artifact; printed when there is no `--out` and `primary`.
    artifact: Option<String>,
    primary: bool,
    code: i32,
}

impl Report {
    fn new(text: String, json: Value) -> Self {
        Self { text, json, artifact: None, primary: false, code: 0 }
    }
}

struct Context<'a> {
    cli: &'a Cli,
    inputs: Vec<InputDigest>,
    seed: Option<u64>,
    notes: Vec<String>,
}

impl Context<'_> {
    fn load(&mut self, path: &Path, format: Option<InputFormat>) -> Result<Dataset> {
        let bytes = fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) });
        let format = match format {
            Some(InputFormat::Csv) => Format::Csv,
            Some(InputFormat::Jsonl) => Format::Jsonl,
            None => match path.extension().and_then(|e| e.to_str()) {
                Some("jsonl" | "ndjson") => Format::Jsonl,
                _ => Format::Csv,
            },
        };
        Dataset::ingest(bytes.as_slice(), format)
    }

    fn input(&mut self) -> Result<Dataset> {
        let path = self.cli.input.clone().ok_or_else(|| Error::Usage("--input is required".into()))?;
        self.load(&path, self.cli.format)
    }

    fn record_file(&mut self, path: &Path) -> Result<String> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(text.as_bytes())) });
        Ok(text)
    }

    /// The user's seed, or a fresh one that is reported.
    fn seed_or(&mut self, fallback: Option<u64>) -> u64 {
        let seed = self.cli.seed.or(fallback).unwrap_or_else(|| {
            let s = rand::rng().random::<u64>();
            self.notes.push(format!("seed: {s} (generated)"));
            s
        });
        self.seed = Some(seed);
        seed
    }
}

/// Maps an error to its exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Infeasible(_) => 1,
        Error::Usage(_) | Error::Domain(_) => 2,
        Error::Undefined(_) | Error::Format(_) | Error::MalformedRows(_) | Error::Io(_) => 3,
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                2
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };
    let mut ctx = Context { cli: &cli, inputs: Vec::new(), seed: None, notes: Vec::new() };
    let result = dispatch(&mut ctx);
    for note in &ctx.notes {
        let _ = writeln!(stderr, "{note}");
    }
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_code(&e);
        }
    };
    match emit(&cli, &ctx, &report, stdout) {
        Ok(()) => report.code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn emit(cli: &Cli, ctx: &Context<'_>, report: &Report, stdout: &mut dyn Write) -> Result<()> {
    if cli.json {
        writeln!(stdout, "{}", serde_json::to_string_pretty(&report.json).map_err(|e| Error::Format(e.to_string()))?)?;
    } else if !report.text.is_empty() {
        write!(stdout, "{}", report.text)?;
    }
    if let Some(artifact) = &report.artifact {
        match &cli.out {
            Some(path) => {
                fs::write(path, artifact)?;
                let manifest = RunManifest {
                    subcommand: subcommand_name(&cli.command).into(),
                    params: serde_json::to_value(cli).map_err(|e| Error::Format(e.to_string()))?,
                    seed: ctx.seed,
                    inputs: ctx.inputs.clone(),
                    version: env!("CARGO_PKG_VERSION").into(),
                };
                let mut manifest_path = path.clone().into_os_string();
                manifest_path.push(".manifest.json");
                let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
                fs::write(PathBuf::from(manifest_path), body + "\n")?;
            }
            None if report.primary && !cli.json => write!(stdout, "{artifact}")?,
            None => {}
        }
    }
    Ok(())
}

fn subcommand_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Budget(_) => "budget",
        Command::Margins(_) => "margins",
        Command::Detect(_) => "detect",
        Command::Simulate(_) => "simulate",
        Command::Replay(_) => "replay",
        Command::Icc(_) => "icc",
        Command::Plan(_) => "plan",
        Command::Decompose(_) => "decompose",
    }
}

fn dispatch(ctx: &mut Context<'_>) -> Result<Report> {
    match &ctx.cli.command {
        Command::Budget(a) => cmd_budget(a),
        Command::Margins(a) => cmd_margins(ctx, a),
        Command::Detect(a) => cmd_detect(ctx, a),
        Command::Simulate(a) => cmd_simulate(ctx, a),
        Command::Replay(a) => cmd_replay(ctx, a),
        Command::Icc(a) => cmd_icc(a),
        Command::Plan(a) => cmd_plan(ctx, a),
        Command::Decompose(a) => cmd_decompose(ctx, a),
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn csv_string(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

fn cmd_budget(a: &BudgetArgs) -> Result<Report> {
    let cfg = TestConfig::new(a.alpha, a.power)?;
    let mut text = String::new();
    let mut rows = Vec::new();
    for &delta in &a.delta {
        let n = required_sample_size(delta, &cfg)?;
        let exact = closed_form_budget(delta, &cfg)?;
        text.push_str(&format!("delta {delta}: {n} decisive judgments (alpha {}, power {})\n", a.alpha, a.power));
        rows.push(json!({ "delta": delta, "required_n": n, "exact": exact }));
    }
    Ok(Report::new(text, json!({ "alpha": a.alpha, "power": a.power, "rows": rows })))
}

fn cmd_margins(ctx: &mut Context<'_>, a: &MarginsArgs) -> Result<Report> {
    let mut ds = ctx.input()?;
    if a.unique_prompts {
        ds = crate::data::unique_prompt_restrict(&ds);
    }
    let margins = qualifying_margins(&ds, a.tie_policy, a.min_decisive)?;
    let quant = tail_quantiles(&margins, &a.levels)?;
    let near = near_tie_filter(&margins, a.tau)?;
    let mut text = format!(
        "pairs analyzed: {} (min decisive {}, ties {})\n\n{}\n{}",
        margins.len(),
        a.min_decisive,
        a.tie_policy,
        render_quantiles_text(&quant),
        render_near_tie_text(&near)
    );
    let mut json = json!({ "pairs": margins.len(), "quantiles": to_json(&quant), "near_tie": to_json(&near) });
    if a.bootstrap > 0 {
        let seed = ctx.seed_or(None);
        let abs: Vec<f64> = margins.iter().map(|m| m.delta_hat.abs()).collect();
        let mut cis = Vec::new();
        text.push('\n');
        for &level in &a.levels {
            let ci = bootstrap_quantile_ci(&abs, level, a.bootstrap, 0.95, seed)?;
            text.push_str(&format!(
                "p{} |delta| = {:.3}, 95% CI [{:.3}, {:.3}] ({} replicates)\n",
                (level * 100.0).round(),
                ci.point,
                ci.lower,
                ci.upper,
                ci.replicates
            ));
            cis.push(ci);
        }
        json["bootstrap"] = to_json(&cis);
    }
    if a.tie_rates {
        let stats = tie_rate_stats(&ds, a.min_decisive)?;
        text.push_str(&format!(
            "\ntie rate: median {:.3}, correlation with |delta| {:.3} over {} pairs\n",
            stats.median_tie_rate,
            stats.correlation,
            stats.rows.len()
        ));
        json["tie_rates"] = to_json(&stats);
    }
    if let Some(k) = a.stability {
        let st = early_late_stability(&ds, k)?;
        let p = st.drift_p_value.map_or_else(|| "-".to_owned(), |p| format!("{p:.4}"));
        text.push_str(&format!(
            "\nfirst/last {k} judgments: spearman {:.3} over {} pairs ({} skipped), drift p-value {p}\n",
            st.spearman,
            st.rows.len(),
            st.skipped.len()
        ));
        json["stability"] = to_json(&st);
    }
    let mut report = Report::new(text, json);
    report.artifact = Some(csv_string(|b| write_margins_csv(&margins, b))?);
    Ok(report)
}

fn parse_pair(s: &str) -> Result<PairKey> {
    s.parse::<PairKey>()
}

fn cmd_detect(ctx: &mut Context<'_>, a: &DetectArgs) -> Result<Report> {
    let ds = ctx.input()?;
    let seed = ctx.seed_or(None);
    let mut opts = CurveOptions::new(seed);
    opts.alpha = a.alpha;
    opts.trials = a.trials;
    if a.without_replacement {
        opts.sampling = Sampling::WithoutReplacement;
    }
    opts.test = match a.test {
        TestChoice::Exact => TestKind::Exact,
        TestChoice::Normal => TestKind::Normal,
    };
    let aggs: Vec<PairAggregate> = match &a.pair {
        Some(p) => vec![ds.aggregate(&parse_pair(p)?)],
        None => ds.aggregates().into_values().filter(|g| g.decisive() >= a.min_decisive).collect(),
    };
    if aggs.is_empty() {
        return Err(Error::Undefined("no qualifying pairs".into()));
    }
    let mut curves = Vec::new();
    for agg in &aggs {
        curves.push(detectability_curve(agg, &a.grid, &opts)?);
    }
    let artifact = csv_string(|b| {
        for (i, c) in curves.iter().enumerate() {
            c.write_csv(b, i == 0)?;
        }
        Ok(())
    })?;
    let mut text = String::new();
    let mut json = json!({ "curves": to_json(&curves) });
    if let Some(n) = a.z_budget {
        let z = same_budget_z(&ds, n, a.trials, seed)?;
        text = format!(
            "same-budget z at n = {}: median {:.3}, p10 {:.3} over {} pairs ({} degenerate subsamples excluded)\n",
            z.n, z.median, z.p10, z.pairs, z.excluded_infinite
        );
        json["same_budget_z"] = to_json(&z);
    }
    let mut report = Report::new(text, json);
    report.artifact = Some(artifact);
    report.primary = true;
    Ok(report)
}

fn render_power_text(rows: &[PowerEstimate]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.3}"));
    let mut s = format!("{:>7} {:<13} {:>7} {:>8} {:>8} {:>8} {:>10}\n", "B", "policy", "power", "jaccard", "signal", "kappa", "lambda");
    for r in rows {
        s.push_str(&format!(
            "{:>7} {:<13} {:>7.3} {:>8} {:>8} {:>8} {:>10.1}\n",
            r.budget,
            r.policy.name(),
            r.power,
            opt(r.jaccard_mean),
            opt(r.signal_mass_mean),
            opt(r.kappa_mean),
            r.lambda_mean
        ));
    }
    s
}

fn cmd_simulate(ctx: &mut Context<'_>, a: &SimulateArgs) -> Result<Report> {
    let text = ctx.record_file(&a.scenario)?;
    let scenario = Scenario::parse(&text)?;
    let seed = ctx.seed_or(scenario.seed);
    let rows = scenario.run(seed)?;
    let mut report = Report::new(
        if ctx.cli.out.is_some() { render_power_text(&rows) } else { String::new() },
        json!({ "scenario": to_json(&scenario), "seed": seed, "rows": to_json(&rows) }),
    );
    report.artifact = Some(csv_string(|b| write_power_csv(&rows, b))?);
    report.primary = true;
    Ok(report)
}

fn cmd_replay(ctx: &mut Context<'_>, a: &ReplayArgs) -> Result<Report> {
    let ds = ctx.input()?;
    let pair = match &a.pair {
        Some(p) => parse_pair(p)?,
        None => {
            let keys: Vec<PairKey> = ds.aggregates().into_keys().collect();
            match keys.as_slice() {
                [only] => only.clone(),
                _ => return Err(Error::Usage(format!("--pair is required: the input holds {} pairs", keys.len()))),
            }
        }
    };
    let pool = JudgmentPool::from_dataset(&ds, &pair)?;
    let m = pool.labels().len();
    let two_stage = AllocationPolicy::two_stage(a.b.unwrap_or_else(|| default_screening_budget(m)), a.q)?;
    let policies = match a.policy {
        PolicyChoice::Proportional => vec![AllocationPolicy::Proportional],
        PolicyChoice::TwoStage => vec![two_stage],
        PolicyChoice::Both => vec![AllocationPolicy::Proportional, two_stage],
    };
    let seed = ctx.seed_or(None);
    let opts = ReplayOptions { alpha: a.alpha, trials: a.trials, seed, strict: a.strict };
    let mut rows = Vec::new();
    for &budget in &a.budget {
        for policy in &policies {
            rows.push(offline_replay(&ds, &pair, policy, budget, &opts)?);
        }
    }
    let header = format!("pair {pair}: {} prompt types, {} decisive judgments\n", m, pool.total());
    let mut report = Report::new(
        header + &render_power_text(&rows),
        json!({ "pair": pair.to_string(), "prompt_types": pool.labels(), "seed": seed, "rows": to_json(&rows) }),
    );
    report.artifact = Some(csv_string(|b| write_power_csv(&rows, b))?);
    Ok(report)
}

fn cmd_icc(a: &IccArgs) -> Result<Report> {
    let rows = icc_table(&a.n0, &a.rho)?;
    let mut report = Report::new(render_icc_text(&rows), to_json(&rows));
    report.artifact = Some(csv_string(|b| write_icc_csv(&rows, b))?);
    Ok(report)
}

fn cmd_plan(ctx: &mut Context<'_>, a: &PlanArgs) -> Result<Report> {
    let placeholder = || PairKey::new("first", "second");
    let pilot = if let (Some(s), Some(f)) = (a.wins_second, a.wins_first) {
        PairAggregate::from_counts(placeholder()?, f, s, 0)
    } else if let (Some(p), Some(n0)) = (a.p_hat, a.n0) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("p-hat must lie in [0, 1], got {p}")));
        }
        let s = (p * n0 as f64).round() as u64;
        PairAggregate::from_counts(placeholder()?, n0 - s, s, 0)
    } else if let Some(p) = &a.pair {
        ctx.input()?.aggregate(&parse_pair(p)?)
    } else {
        return Err(Error::Usage("give --wins-second/--wins-first, --p-hat/--n0, or --input with --pair".into()));
    };
    let cfg = TestConfig::new(a.alpha, a.power)?;
    let report = pilot_assess(&pilot, &cfg, a.budget, a.threshold)?;
    let mut text = report.render_text();
    let mut json = json!({ "feasibility": to_json(&report) });
    if let (Some(kappa), Some(m)) = (a.kappa, a.m) {
        let advice = allocation_advice(kappa, a.budget, m, a.b.unwrap_or_else(|| default_screening_budget(m)));
        text.push_str(&format!("allocation: {:?} ({})\n", advice.choice, advice.reason));
        json["allocation"] = to_json(&advice);
    }
    let mut out = Report::new(text, json);
    out.code = if report.verdict == Verdict::Feasible { 0 } else { 1 };
    Ok(out)
}

fn cmd_decompose(ctx: &mut Context<'_>, a: &DecomposeArgs) -> Result<Report> {
    let ds = ctx.input()?;
    let rows = decompose_all(&ds, a.min_prompts);
    if rows.is_empty() {
        return Err(Error::Undefined("no pair has at least two judged prompts".into()));
    }
    let mut ratios: Vec<f64> = cluster_robust_ratios(&ds, a.min_decisive).into_iter().map(|r| r.1).collect();
    ratios.sort_by(f64::total_cmp);
    let mut text = format!("{} pairs decomposed\n", rows.len());
    let mut json = json!({ "pairs": to_json(&rows) });
    if !ratios.is_empty() {
        let median = crate::stats::quantile_sorted(&ratios, 0.5);
        let p99 = crate::stats::quantile_sorted(&ratios, 0.99);
        text.push_str(&format!(
            "cluster-robust / classical variance: median {median:.3}, p99 {p99:.3} over {} pairs\n",
            ratios.len()
        ));
        json["cluster_ratio"] = json!({ "median": median, "p99": p99, "pairs": ratios.len() });
    }
    if let Some(path) = &a.compare {
        let other = ctx.load(path, None)?;
        let cmp = compare_protocols(&rows, &decompose_all(&other, a.min_prompts))?;
        text.push_str(&format!(
            "aligned pairs: {}\nbetween-prompt variance: {:.3} vs {:.3}\nwithin-prompt variance: {:.3} vs {:.3}\n",
            cmp.aligned_pairs, cmp.median_between_a, cmp.median_between_b, cmp.median_within_a, cmp.median_within_b
        ));
        if let Some(r) = cmp.median_between_ratio {
            text.push_str(&format!("median per-pair between-prompt ratio: {r:.2}x\n"));
        }
        json["comparison"] = to_json(&cmp);
    }
    let mut report = Report::new(text, json);
    report.artifact = Some(csv_string(|b| write_decomposition_csv(&rows, b))?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let mut full = vec!["prefdetect"];
        full.extend_from_slice(args);
        let code = run(full, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn budget_examples() {
        let (code, out, _) = run_str(&["budget", "--delta", "0.05"]);
        assert_eq!(code, 0);
        assert!(out.contains(": 1051 decisive"), "{out}");
        let (code, _, err) = run_str(&["budget", "--delta", "0"]);
        assert_eq!(code, 1);
        assert!(err.contains("infeasible"), "{err}");
        let (code, _, _) = run_str(&["budget", "--delta", "abc"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn plan_exit_codes() {
        assert_eq!(run_str(&["plan", "--wins-second", "40", "--wins-first", "10", "--budget", "100"]).0, 0);
        let (code, out, _) = run_str(&["plan", "--p-hat", "0.56", "--n0", "50", "--budget", "500"]);
        assert_eq!(code, 1);
        assert!(out.contains("UNDERPOWERED"));
    }

    #[test]
    fn help_is_success() {
        assert_eq!(run_str(&["--help"]).0, 0);
        assert_eq!(run_str(&["nonsense"]).0, 2);
    }
}
