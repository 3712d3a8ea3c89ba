//! `invplan`: validate plans, run the correction loop, generate benchmark
//! problems and run campaigns.
//!
//! Exit codes: 0 success or feasible, 1 usage or input error, 2 infeasible,
//! 3 refinement cap exhausted, 4 backend error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use chrono::{SecondsFormat, Utc};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use inverse_plan::bench::{
    gen_case, min_n, render_histograms, render_table, run_campaign, Backend, CampaignConfig, CampaignError,
    DomainId, Method,
};
use inverse_plan::correction::{
    run_correction, CorrectionStatus, ExternalValidator, InverseValidator, LlmValidator, NoValidator, Validator,
    DEFAULT_CAP,
};
use inverse_plan::planner::{
    Corruption, FaultyPlanner, LlmClient, LlmConfig, LlmPlanner, Planner, PromptStyle, ReferencePlanner,
    TranscriptMode,
};
use inverse_plan::{parse_domain, parse_plan, parse_problem, render_domain, render_feedback, render_problem, validate_plan};

#[derive(Parser)]
#[command(name = "invplan", version, about = "Plan validation by inverse actions and bounded self-correction")]
struct Cli {
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write a run manifest (inputs, hashes, seeds, timestamps) here.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    #[value(alias = "structured")]
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Check a plan step by step against its inverse actions.
    Validate {
        domain: PathBuf,
        problem: PathBuf,
        plan: PathBuf,
    },
    /// Plan, validate and re-plan from feedback until solved or capped.
    Correct {
        domain: PathBuf,
        problem: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value = "inverseprompt")]
        validator: Method,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every method over generated cases and print metrics.
    Bench {
        #[arg(long, value_delimiter = ',', default_values = ["ballmoving", "blocksworld", "cooking"])]
        domains: Vec<DomainId>,
        #[arg(long = "N", value_delimiter = ',', default_values_t = [3usize, 4])]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, value_delimiter = ',', default_values = ["no-validator", "external-validator", "inverseprompt"])]
        methods: Vec<Method>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
        #[command(flatten)]
        backend: BackendArgs,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Directory for metrics.json, cases.json, table.txt and histograms.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated problem and its domain.
    Gen {
        #[arg(long)]
        domain: String,
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct BackendArgs {
    /// reference, fault:p=<prob>, fault:rounds=<n>, or llm:<preset|config.toml>
    #[arg(long, default_value = "fault:p=0.3")]
    backend: String,
    /// Transcript file for the llm backend.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, value_enum)]
    transcript_mode: Option<Mode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Off,
    Record,
    Replay,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }

    fn backend(error: anyhow::Error) -> Self {
        Failure { code: 4, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure::usage(error)
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: Vec<String>,
    config: serde_json::Value,
    seeds: Vec<u64>,
    fixture_hashes: BTreeMap<String, String>,
    tool_version: &'static str,
    started_at: String,
    finished_at: String,
    exit_code: u8,
}

#[derive(Default)]
struct Run {
    config: serde_json::Value,
    seeds: Vec<u64>,
    hashes: BTreeMap<String, String>,
}

impl Run {
    fn read(&mut self, path: &Path) -> anyhow::Result<String> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.hashes
            .insert(path.display().to_string(), hex::encode(Sha256::digest(text.as_bytes())));
        Ok(text)
    }
}

enum BackendSpec {
    Reference,
    Fault(Corruption),
    Llm(LlmConfig),
}

fn parse_backend(args: &BackendArgs, run: &mut Run) -> anyhow::Result<BackendSpec> {
    let spec = args.backend.as_str();
    let backend = if spec == "reference" {
        BackendSpec::Reference
    } else if let Some(c) = spec.strip_prefix("fault:") {
        BackendSpec::Fault(c.parse().map_err(|e: String| anyhow!(e))?)
    } else if let Some(name) = spec.strip_prefix("llm:") {
        let mut config = match LlmConfig::preset(name) {
            Some(c) => c,
            None => LlmConfig::from_toml(&run.read(Path::new(name))?)?,
        };
        if let Some(t) = &args.transcript {
            config.transcript = Some(t.clone());
        }
        if let Some(m) = args.transcript_mode {
            config.mode = match m {
                Mode::Off => TranscriptMode::Off,
                Mode::Record => TranscriptMode::Record,
                Mode::Replay => TranscriptMode::Replay,
            };
        }
        BackendSpec::Llm(config)
    } else {
        bail!("unknown backend `{spec}`");
    };
    run.config["backend"] = serde_json::json!(spec);
    if let BackendSpec::Llm(c) = &backend {
        run.config["llm"] = serde_json::to_value(c)?;
    }
    Ok(backend)
}

fn llm_client(config: LlmConfig) -> Result<Arc<LlmClient>, Failure> {
    LlmClient::from_config(config)
        .map(Arc::new)
        .map_err(|e| Failure::backend(e.into()))
}

fn cmd_validate(format: Format, domain: &Path, problem: &Path, plan: &Path, run: &mut Run) -> Result<u8, Failure> {
    let domain = Arc::new(parse_domain(&run.read(domain)?).context("domain")?);
    let problem = parse_problem(&run.read(problem)?, domain.clone()).context("problem")?;
    let plan = parse_plan(&run.read(plan)?, &domain).context("plan")?;
    let report = validate_plan(&problem, &plan);
    match format {
        Format::Json => println!("{}", report.to_json()),
        Format::Text => {
            for s in &report.steps {
                let verdict = if s.verdict.is_feasible() { "ok" } else { "FAILED" };
                println!("step {}: {} {verdict}", s.index, s.action);
            }
            print!("{}", render_feedback(&domain, &report));
        }
    }
    Ok(if report.is_feasible() { 0 } else { 2 })
}

#[allow(clippy::too_many_arguments)]
fn cmd_correct(
    format: Format,
    domain: &Path,
    problem: &Path,
    backend: &BackendArgs,
    method: Method,
    cap: usize,
    seed: u64,
    run: &mut Run,
) -> Result<u8, Failure> {
    if cap == 0 {
        return Err(anyhow!("--cap must be at least 1").into());
    }
    let domain = Arc::new(parse_domain(&run.read(domain)?).context("domain")?);
    let problem = parse_problem(&run.read(problem)?, domain).context("problem")?;
    let spec = parse_backend(backend, run)?;
    run.config["validator"] = serde_json::json!(method.name());
    run.config["cap"] = serde_json::json!(cap);
    run.seeds.push(seed);
    let (mut planner, client): (Box<dyn Planner>, _) = match spec {
        BackendSpec::Reference => (Box::new(ReferencePlanner::default()), None),
        BackendSpec::Fault(c) => (Box::new(FaultyPlanner::new(c, seed)), None),
        BackendSpec::Llm(c) => {
            let client = llm_client(c)?;
            (Box::new(LlmPlanner::new(client.clone())), Some(client))
        }
    };
    let mut validator: Box<dyn Validator> = match (method, &client) {
        (Method::NoValidator, _) => Box::new(NoValidator),
        (Method::ExternalValidator, _) => Box::new(ExternalValidator),
        (Method::InversePrompt, Some(c)) => Box::new(LlmValidator::new(c.clone(), PromptStyle::Inverse)),
        (Method::InversePrompt, None) => Box::new(InverseValidator),
        (Method::SelfCorrStandard, Some(c)) => Box::new(LlmValidator::new(c.clone(), PromptStyle::Standard)),
        (Method::SelfCorrStandard, None) => return Err(anyhow!("{method} needs an llm backend").into()),
    };
    let outcome = run_correction(&problem, planner.as_mut(), validator.as_mut(), cap);
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&outcome).context("serializing outcome")?),
        Format::Text => print!("{}", outcome.render()),
    }
    Ok(match outcome.status {
        CorrectionStatus::Solved => 0,
        CorrectionStatus::Exhausted => 3,
        CorrectionStatus::PlannerError => 4,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    format: Format,
    domains: Vec<DomainId>,
    ns: Vec<usize>,
    cases: usize,
    methods: Vec<Method>,
    seed: u64,
    cap: usize,
    backend: &BackendArgs,
    jobs: usize,
    out: Option<&Path>,
    run: &mut Run,
) -> Result<u8, Failure> {
    if cap == 0 {
        return Err(anyhow!("--cap must be at least 1").into());
    }
    for &d in &domains {
        if let Some(&n) = ns.iter().find(|&&n| n < min_n(d)) {
            return Err(anyhow!("{d} needs N of at least {}, got {n}", min_n(d)).into());
        }
    }
    let backend = match parse_backend(backend, run)? {
        BackendSpec::Reference => Backend::Reference,
        BackendSpec::Fault(c) => Backend::Fault(c),
        BackendSpec::Llm(c) => Backend::Llm(llm_client(c)?),
    };
    run.config["domains"] = serde_json::json!(domains);
    run.config["N"] = serde_json::json!(ns);
    run.config["cases"] = serde_json::json!(cases);
    run.config["methods"] = serde_json::json!(methods);
    run.config["cap"] = serde_json::json!(cap);
    run.seeds.push(seed);
    let config = CampaignConfig {
        domains,
        ns,
        cases,
        methods,
        seed,
        cap,
        backend,
        jobs,
    };
    let (rows, results) = run_campaign(&config).map_err(|e| match e {
        CampaignError::NeedsLlm(_) => Failure::usage(e.into()),
        CampaignError::Threads(_) => Failure::backend(e.into()),
    })?;
    let table = render_table(&rows);
    let histograms = render_histograms(&rows);
    let metrics = serde_json::to_string_pretty(&rows).context("serializing metrics")? + "\n";
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let cases_json = serde_json::to_string_pretty(&results).context("serializing cases")? + "\n";
        for (name, text) in [
            ("metrics.json", &metrics),
            ("cases.json", &cases_json),
            ("table.txt", &table),
            ("histograms.txt", &histograms),
        ] {
            fs::write(dir.join(name), text).with_context(|| format!("cannot write {name}"))?;
        }
    }
    match format {
        Format::Json => print!("{metrics}"),
        Format::Text => print!("{table}\n{histograms}"),
    }
    Ok(0)
}

fn cmd_gen(domain: &str, n: usize, seed: u64, out: &Path, run: &mut Run) -> Result<u8, Failure> {
    let id: DomainId = domain.parse().map_err(|e: String| anyhow!(e))?;
    if n < min_n(id) {
        return Err(anyhow!("{id} needs N of at least {}", min_n(id)).into());
    }
    run.config = serde_json::json!({ "domain": id, "N": n });
    run.seeds.push(seed);
    let case = gen_case(id, n, seed);
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let stem = format!("{id}-N{n}-s{seed}");
    let files = [
        (format!("{id}-N{n}.dom"), render_domain(&case.problem.domain)),
        (format!("{stem}.prob"), render_problem(&case.problem)),
        (format!("{stem}.plan"), case.reference.to_string()),
    ];
    for (name, text) in &files {
        let path = out.join(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        println!("wrote {}", path.display());
    }
    println!("reference plan length: {}", case.reference.len());
    Ok(0)
}

fn dispatch(cli: &Cli, run: &mut Run) -> Result<u8, Failure> {
    match &cli.command {
        Command::Validate { domain, problem, plan } => cmd_validate(cli.format, domain, problem, plan, run),
        Command::Correct {
            domain,
            problem,
            backend,
            validator,
            cap,
            seed,
        } => cmd_correct(cli.format, domain, problem, backend, *validator, *cap, *seed, run),
        Command::Bench {
            domains,
            ns,
            cases,
            methods,
            seed,
            cap,
            backend,
            jobs,
            out,
        } => cmd_bench(
            cli.format,
            domains.clone(),
            ns.clone(),
            *cases,
            methods.clone(),
            *seed,
            *cap,
            backend,
            *jobs,
            out.as_deref(),
            run,
        ),
        Command::Gen { domain, n, seed, out } => cmd_gen(domain, *n, *seed, out, run),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let started_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
    let mut run = Run {
        config: serde_json::json!({}),
        ..Run::default()
    };
    let code = match dispatch(&cli, &mut run) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    };
    if let Some(path) = &cli.manifest {
        let manifest = RunManifest {
            command: std::env::args().collect(),
            config: run.config,
            seeds: run.seeds,
            fixture_hashes: run.hashes,
            tool_version: env!("CARGO_PKG_VERSION"),
            started_at,
            finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            exit_code: code,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        if let Err(e) = fs::write(path, text + "\n") {
            eprintln!("error: cannot write manifest {}: {e}", path.display());
            return ExitCode::from(1);
        }
    }
    ExitCode::from(code)
}
