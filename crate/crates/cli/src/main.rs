//! `spiral`: run, analyze and report rating-sequence experiments.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 partial run
//! (at least one movie failed and is listed in the manifest).

mod overrides;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use spiral_core::agents::stub::{StubScript, StubServer};
use spiral_core::agents::{AuditLog, LlmAgent, LlmClient, RatingAgent, SyntheticAgent};
use spiral_core::analysis::{
    analyze_run, case_series, match_vs_distance, summarize_all, AnalysisOptions,
};
use spiral_core::export::{self, AnalysisOutput, ExportFormat};
use spiral_core::files::{self, load_movies, load_personas, load_record, save_record};
use spiral_core::model::BackendId;
use spiral_core::simulation::{audit_record, run_experiment, RunRecord, SimError};
use spiral_core::{validate_config, MovieItem, Persona, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "spiral",
    version,
    about = "Sequential rating simulator with trend and consensus analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config (and its inputs, when given) without running anything.
    Validate(ConfigArgs),
    /// Run an experiment and write a record directory.
    Run(ConfigArgs),
    /// Compute per-movie metrics and case series from a record.
    Analyze(AnalyzeArgs),
    /// Summarize an analysis directory; optionally add the semantic-match study.
    Report(ReportArgs),
    /// Re-check a stored record and, for synthetic backends, re-run it.
    ReplayAudit(ReplayArgs),
    /// Serve scripted chat completions for offline testing.
    StubServer(StubArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    movies: Option<PathBuf>,
    #[arg(long)]
    personas: Option<PathBuf>,
    /// Record directory to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// I = history + persona, II = history, III = persona, IV = neither.
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// `synthetic:<kind>` or `llm`.
    #[arg(long)]
    backend: Option<String>,
    /// Log every LLM request and response to `llm_audit.jsonl`.
    #[arg(long)]
    audit: bool,
    /// Config overrides as dotted `key=value` pairs.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Record directory written by `run`.
    record: PathBuf,
    /// Output root; results go to `<out>/<run_id>/`.
    #[arg(long)]
    out: PathBuf,
    /// Emit the case series for this movie only.
    #[arg(long)]
    movie: Option<String>,
    /// Drop warm-up ratings before computing metrics.
    #[arg(long)]
    exclude_warmups: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Analysis directory (`<out>/<run_id>`) written by `analyze`.
    analysis: PathBuf,
    /// Directory for report files; defaults to the analysis directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record directory, for the semantic-match study.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long)]
    movies: Option<PathBuf>,
    #[arg(long)]
    personas: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    record: PathBuf,
    #[arg(long)]
    movies: Option<PathBuf>,
    #[arg(long)]
    personas: Option<PathBuf>,
}

#[derive(Args)]
struct StubArgs {
    #[arg(long, default_value_t = 0)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    script: PathBuf,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    Scenario::from_label(s)
        .ok_or_else(|| format!("unknown scenario {s:?}; expected I, II, III or IV"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(args) => cmd_validate(args),
        Command::Run(args) => cmd_run(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Report(args) => cmd_report(args),
        Command::ReplayAudit(args) => cmd_replay_audit(args),
        Command::StubServer(args) => cmd_stub_server(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Config file (or defaults), then `key=value` overrides, then flags.
fn effective_config(args: &ConfigArgs) -> Result<ScenarioConfig> {
    let mut doc = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<Value>(&text)
                .with_context(|| format!("{}: not valid JSON", path.display()))?
        }
        None => serde_json::to_value(ScenarioConfig::default())?,
    };
    for o in &args.overrides {
        overrides::apply(&mut doc, o)?;
    }
    let source = args
        .config
        .clone()
        .unwrap_or_else(|| PathBuf::from("<defaults>"));
    let mut cfg = files::parse_config(&source, &doc.to_string())?;
    if let Some(s) = args.scenario {
        cfg.set_scenario(s);
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(jobs) = args.jobs {
        cfg.jobs = jobs;
    }
    if let Some(b) = &args.backend {
        cfg.backend_id = b.clone();
    }
    if args.audit {
        cfg.audit = true;
    }
    if let Some(p) = &args.movies {
        cfg.movies_path = Some(p.clone());
    }
    if let Some(p) = &args.personas {
        cfg.personas_path = Some(p.clone());
    }
    if let Some(p) = &args.out {
        cfg.out_dir = Some(p.clone());
    }
    Ok(cfg)
}

fn check_config(cfg: &ScenarioConfig) -> Result<()> {
    let report = validate_config(cfg);
    if !report.passed() {
        bail!("invalid config:\n{report}");
    }
    Ok(())
}

struct Inputs {
    movies: Vec<MovieItem>,
    personas: Vec<Persona>,
}

fn load_inputs(cfg: &ScenarioConfig) -> Result<Inputs> {
    let movies_path = cfg
        .movies_path
        .as_ref()
        .ok_or_else(|| anyhow!("movies_path: no movies file given (use --movies)"))?;
    let movies = load_movies(movies_path)?;
    let personas = match &cfg.personas_path {
        Some(p) => load_personas(p)?,
        None if cfg.use_persona => bail!(
            "personas_path: use_persona is set but no personas file was given (use --personas)"
        ),
        None => Vec::new(),
    };
    if cfg.use_persona && personas.len() < cfg.population_n {
        bail!(
            "personas: use_persona with population_n = {} needs at least that many personas, {} has {}",
            cfg.population_n,
            cfg.personas_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            personas.len()
        );
    }
    Ok(Inputs { movies, personas })
}

fn build_agent(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<Box<dyn RatingAgent>> {
    match cfg.backend() {
        Some(BackendId::Synthetic(_)) => {
            let policy = cfg
                .synthetic_policy()
                .ok_or_else(|| anyhow!("synthetic: no policy for backend {}", cfg.backend_id))?;
            Ok(Box::new(SyntheticAgent::new(policy)))
        }
        Some(BackendId::Llm) => {
            let llm = cfg
                .llm
                .clone()
                .ok_or_else(|| anyhow!("llm: backend llm needs an llm block"))?;
            let mut client = LlmClient::new(llm);
            if cfg.audit {
                if let Some(dir) = out_dir {
                    fs::create_dir_all(dir)
                        .with_context(|| format!("creating {}", dir.display()))?;
                    let path = dir.join("llm_audit.jsonl");
                    let log = AuditLog::open(&path)
                        .with_context(|| format!("opening {}", path.display()))?;
                    client = client.with_audit(log);
                }
            }
            Ok(Box::new(LlmAgent::new(client)))
        }
        None => bail!("backend_id: unknown backend {:?}", cfg.backend_id),
    }
}

fn cmd_validate(args: ConfigArgs) -> Result<ExitCode> {
    let cfg = effective_config(&args)?;
    check_config(&cfg)?;
    if cfg.movies_path.is_some() || cfg.personas_path.is_some() {
        let inputs = load_inputs(&cfg)?;
        println!(
            "ok: {} movies, {} personas, scenario {}",
            inputs.movies.len(),
            inputs.personas.len(),
            cfg.scenario().label()
        );
    } else {
        println!("ok: scenario {}", cfg.scenario().label());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: ConfigArgs) -> Result<ExitCode> {
    let cfg = effective_config(&args)?;
    check_config(&cfg)?;
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| anyhow!("out_dir: no output directory given (use --out)"))?;
    let inputs = load_inputs(&cfg)?;
    let agent = build_agent(&cfg, Some(&out))?;
    let record = match run_experiment(&cfg, &inputs.movies, &inputs.personas, agent.as_ref()) {
        Ok(r) => r,
        Err(SimError::InvalidConfig(report)) => bail!("invalid config:\n{report}"),
        Err(e) => return Err(e.into()),
    };
    save_record(&record, &out)?;
    eprintln!(
        "wrote {} ({} movies, {} failed)",
        out.display(),
        record.movie_sequences.len(),
        record.failures.len()
    );
    if record.is_complete() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &record.failures {
            eprintln!(
                "failed: {} at step {:?}: {}",
                f.movie_id, f.step_index, f.error
            );
        }
        Ok(ExitCode::from(2))
    }
}

fn run_id(record_dir: &Path) -> Result<String> {
    let canonical = record_dir
        .canonicalize()
        .with_context(|| format!("{}", record_dir.display()))?;
    canonical
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| anyhow!("{}: cannot derive a run id", record_dir.display()))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    let record = load_record(&args.record)?;
    let mut opts = AnalysisOptions::from_config(&record.config);
    if args.exclude_warmups {
        opts.exclude_warmups = true;
    }
    let reports = analyze_run(&record, opts)?;
    let ids: Vec<String> = match &args.movie {
        Some(id) => {
            if record.sequence(id).is_none() {
                bail!("--movie: {id:?} is not in {}", args.record.display());
            }
            vec![id.clone()]
        }
        None => record
            .movie_sequences
            .iter()
            .map(|s| s.movie_id.clone())
            .collect(),
    };
    let case = ids
        .into_iter()
        .map(|id| case_series(&record, &id, opts).map(|rows| (id, rows)))
        .collect::<Result<Vec<_>, _>>()?;
    let output = AnalysisOutput {
        run_id: run_id(&args.record)?,
        summaries: summarize_all(&reports, record.config.scale),
        reports,
        case_series: case,
    };
    let mut written = export::export(&args.out, &output, ExportFormat::Json)?;
    written.extend(export::export(&args.out, &output, ExportFormat::Csv)?);
    eprintln!(
        "wrote {} files to {}",
        written.len(),
        args.out.join(&output.run_id).display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let reports_path = args.analysis.join("reports.json");
    let text = fs::read_to_string(&reports_path)
        .with_context(|| format!("reading {}", reports_path.display()))?;
    let output: AnalysisOutput = serde_json::from_str(&text)
        .with_context(|| format!("{}: malformed analysis output", reports_path.display()))?;
    let out = args.out.clone().unwrap_or_else(|| args.analysis.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let stats: Vec<_> = output.summaries.iter().map(export::metric_stats).collect();
    export::write_summary_csv(&out.join("summary.csv"), &stats)?;
    for s in &stats {
        println!(
            "{:<16} n={:<4} defined={:<4} median={}",
            s.metric_name,
            s.n_movies,
            s.n_defined,
            s.median
                .map(export::format_real)
                .unwrap_or_else(|| "NA".into())
        );
    }

    if let Some(record_dir) = &args.record {
        let record = load_record(record_dir)?;
        let movies_path = args
            .movies
            .clone()
            .or_else(|| record.config.movies_path.clone())
            .ok_or_else(|| anyhow!("--movies: needed for the semantic-match study"))?;
        let personas_path = args
            .personas
            .clone()
            .or_else(|| record.config.personas_path.clone())
            .ok_or_else(|| anyhow!("--personas: needed for the semantic-match study"))?;
        let study = match_vs_distance(
            &record,
            &load_movies(&movies_path)?,
            &load_personas(&personas_path)?,
        )?;
        export::write_match_csv(&out.join("semantic_match.csv"), &study)?;
        println!(
            "semantic match vs distance: {} records, spearman {}",
            study.records.len(),
            study
                .correlation
                .map(export::format_real)
                .unwrap_or_else(|| "NA".into())
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn replay(record: &RunRecord, movies: &Path, personas: Option<&Path>) -> Result<Vec<String>> {
    let movies = load_movies(movies)?;
    let personas = match personas {
        Some(p) => load_personas(p)?,
        None => Vec::new(),
    };
    let wanted: Vec<MovieItem> = record
        .movie_sequences
        .iter()
        .map(|s| {
            movies
                .iter()
                .find(|m| m.movie_id == s.movie_id)
                .cloned()
                .ok_or_else(|| anyhow!("movie {} is not in the movies file", s.movie_id))
        })
        .collect::<Result<_>>()?;
    let agent = build_agent(&record.config, None)?;
    let again = run_experiment(&record.config, &wanted, &personas, agent.as_ref())?;
    let mut diffs = Vec::new();
    for (a, b) in record.movie_sequences.iter().zip(&again.movie_sequences) {
        if a != b {
            let step = a
                .events
                .iter()
                .zip(&b.events)
                .position(|(x, y)| x != y)
                .unwrap_or(a.len().min(b.len()));
            diffs.push(format!("{}: replay diverges at step {step}", a.movie_id));
        }
    }
    if again.movie_sequences.len() != record.movie_sequences.len() {
        diffs.push("replay completed a different number of movies".into());
    }
    if again.persona_assignment != record.persona_assignment {
        diffs.push("replay assigned personas differently".into());
    }
    Ok(diffs)
}

fn cmd_replay_audit(args: ReplayArgs) -> Result<ExitCode> {
    let record = load_record(&args.record)?;
    let mut problems: Vec<String> = audit_record(&record)
        .into_iter()
        .map(|f| match f.step_index {
            Some(step) => format!("{} step {step}: {}", f.movie_id, f.message),
            None => format!("{}: {}", f.movie_id, f.message),
        })
        .collect();

    let synthetic = matches!(record.config.backend(), Some(BackendId::Synthetic(_)));
    let movies = args
        .movies
        .clone()
        .or_else(|| record.config.movies_path.clone());
    let personas = args
        .personas
        .clone()
        .or_else(|| record.config.personas_path.clone());
    match (synthetic, movies) {
        (true, Some(m)) => problems.extend(replay(&record, &m, personas.as_deref())?),
        (true, None) => eprintln!("note: no movies file, replay skipped"),
        (false, _) => eprintln!("note: llm backend, replay skipped; structural audit only"),
    }

    if problems.is_empty() {
        println!("ok: {} movies audited", record.movie_sequences.len());
        Ok(ExitCode::SUCCESS)
    } else {
        for p in &problems {
            println!("{p}");
        }
        eprintln!("{} problem(s) found", problems.len());
        Ok(ExitCode::from(1))
    }
}

fn cmd_stub_server(args: StubArgs) -> Result<ExitCode> {
    let script =
        StubScript::load(&args.script).with_context(|| format!("{}", args.script.display()))?;
    let server = StubServer::start(&args.host, args.port, script, args.workers)?;
    let mut stdout = std::io::stdout();
    writeln!(stdout, "listening on {}", server.url())?;
    stdout.flush()?;
    server.join();
    Ok(ExitCode::SUCCESS)
}
