mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ace_core::adaptation::{offline_adapt, online_adapt, AdaptError, Components, Mode};
use ace_core::embeddings::{Embedder, HashingEmbedder};
use ace_core::harness::fixtures::{arith_env_fixtures, lookup_qa_fixtures};
use ace_core::harness::{load_samples, report, run_eval, write_samples, ArithEnv, LookupQa, TaskAdapter};
use ace_core::llm::Gateway;
use ace_core::playbook::Playbook;
use ace_core::refine::{dedup, prune_to_budget, DEFAULT_DEDUP_THRESHOLD};
use ace_core::roles::Roles;
use ace_core::rundir::{self, unix_ms, RunDir, RunManifest};
use ace_core::tokens::ProxyTokenCounter;

use config::Config;

#[derive(Parser)]
#[command(name = "ace", version, about = "Grow, inspect and evaluate playbooks for LLM agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run offline or online adaptation over a task file.
    Adapt(AdaptArgs),
    /// Score a fixed playbook on labeled tasks.
    Eval(EvalArgs),
    /// Inspect or refine a playbook file.
    #[command(subcommand)]
    Playbook(PlaybookCmd),
    /// Summarize a run directory.
    Report(ReportArgs),
    /// Write a runnable demo (tasks, scripted fixtures, config) for a built-in task.
    Scaffold(ScaffoldArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Offline,
    Online,
}

#[derive(clap::Args)]
struct AdaptArgs {
    #[arg(long)]
    config: PathBuf,
    /// Line-delimited {id, query, label?} records.
    #[arg(long)]
    tasks: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Overrides adaptation.mode from the config.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Starting playbook for online mode.
    #[arg(long)]
    warmup: Option<PathBuf>,
    /// Fixture file for the scripted backend.
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    playbook: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PlaybookCmd {
    /// Print the rendered playbook with per-section counts.
    Inspect { file: PathBuf },
    /// Merge near-duplicate bullets into a new file.
    Dedup {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DEDUP_THRESHOLD)]
        threshold: f64,
        /// Embedding settings come from this config; hashing otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Allow writing over an existing file, including the input.
        #[arg(long)]
        force: bool,
    },
    /// Drop the lowest-value bullets until the playbook fits its budget.
    Prune {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the budget stored in the file.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Print the playbook exactly as the Generator sees it.
    Export { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(clap::Args)]
struct ReportArgs {
    run_dir: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum DemoKind {
    LookupQa,
    ArithEnv,
}

#[derive(clap::Args)]
struct ScaffoldArgs {
    #[arg(long, value_enum)]
    kind: DemoKind,
    #[arg(long)]
    out: PathBuf,
    /// Number of facts (lookup-qa).
    #[arg(long, default_value_t = 20)]
    facts: usize,
    #[arg(long, default_value_t = 40)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Bad invocation; exits with status 2 like clap's own usage errors.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Adapt(a) => cmd_adapt(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Playbook(c) => cmd_playbook(c),
        Command::Report(a) => cmd_report(a),
        Command::Scaffold(a) => cmd_scaffold(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn require_config(path: &Path, usage: &str) -> Result<Config> {
    if !path.is_file() {
        return Err(UsageError(format!("config file {} not found\n\nUsage: {usage}", path.display())).into());
    }
    Config::load(path)
}

fn start_manifest(command: &str, config: &Path, seed: u64) -> RunManifest {
    RunManifest {
        command: command.into(),
        args: std::env::args().skip(1).collect(),
        config_path: Some(config.display().to_string()),
        seed,
        started_unix_ms: unix_ms(),
        finished_unix_ms: None,
        status: "running".into(),
        error: None,
        artifacts: Vec::new(),
    }
}

fn finish_run(dir: &RunDir, manifest: &mut RunManifest, gateway: &Gateway, cfg: &Config, error: Option<String>) -> Result<()> {
    dir.write_requests(&gateway.requests())?;
    dir.write_ledger(gateway.ledger(), cfg.gateway.prices)?;
    manifest.finished_unix_ms = Some(unix_ms());
    manifest.status = if error.is_some() { "failed" } else { "completed" }.into();
    manifest.error = error;
    dir.write_manifest(manifest)?;
    manifest.artifacts = dir.artifacts()?;
    dir.write_manifest(manifest)?;
    Ok(())
}

fn cmd_adapt(args: AdaptArgs) -> Result<()> {
    let mut cfg = require_config(
        &args.config,
        "ace adapt --config <FILE> --tasks <FILE> --out <DIR> [--mode offline|online]",
    )?;
    if let Some(m) = args.mode {
        cfg.adaptation.mode = match m {
            ModeArg::Offline => Mode::Offline,
            ModeArg::Online => Mode::Online,
        };
    }
    if args.warmup.is_some() && cfg.adaptation.mode == Mode::Offline {
        return Err(UsageError("--warmup applies to online mode only".into()).into());
    }
    let samples = load_samples(&args.tasks)?;
    let warmup = args
        .warmup
        .as_ref()
        .map(|p| Playbook::load(p).with_context(|| format!("loading warmup playbook {}", p.display())))
        .transpose()?;
    let task = cfg.task(samples.clone());
    let gateway = cfg.gateway(args.fixtures.as_deref())?;
    let embedder = cfg.embedder()?;
    let prompts = cfg.prompts()?;
    let acfg = cfg.adaptation();

    let mut dir = RunDir::create(&args.out)?;
    let mut manifest = start_manifest("adapt", &args.config, acfg.seed);
    dir.write_manifest(&manifest)?;
    std::fs::copy(&args.config, dir.path(rundir::CONFIG_SNAPSHOT))?;

    let comps = Components {
        gateway: &gateway,
        prompts: &prompts,
        role_settings: cfg.role_settings(),
        embedder: embedder.as_ref(),
        counter: &ProxyTokenCounter,
        task: task.as_ref(),
        sections: cfg.playbook.sections.clone(),
    };
    let result = match acfg.mode {
        Mode::Offline => offline_adapt(&samples, &acfg, &comps, &mut dir),
        Mode::Online => online_adapt(&samples, &acfg, &comps, warmup, &mut dir),
    };
    match result {
        Ok(out) => {
            dir.write_playbook(rundir::PLAYBOOK, &out.playbook)?;
            finish_run(&dir, &mut manifest, &gateway, &cfg, None)?;
            let summary = report(dir.root())?;
            print!("{}", summary.to_text());
            println!("run directory: {}", dir.root().display());
            Ok(())
        }
        Err(e) => {
            if let Some(p) = e.partial() {
                dir.write_playbook(rundir::PLAYBOOK, &p.playbook)?;
            }
            finish_run(&dir, &mut manifest, &gateway, &cfg, Some(e.to_string()))?;
            if matches!(e, AdaptError::Config(_)) {
                return Err(UsageError(e.to_string()).into());
            }
            Err(e).context(format!("partial results kept in {}", dir.root().display()))
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = require_config(
        &args.config,
        "ace eval --config <FILE> --playbook <FILE> --tasks <FILE> --out <DIR>",
    )?;
    let pb = Playbook::load(&args.playbook)?;
    let samples = load_samples(&args.tasks)?;
    let task = cfg.task(samples.clone());
    let gateway = cfg.gateway(args.fixtures.as_deref())?;
    let prompts = cfg.prompts()?;
    let mut settings = cfg.role_settings();
    if settings.task_preamble.is_empty() {
        settings.task_preamble = task.preamble().to_string();
    }

    let dir = RunDir::create(&args.out)?;
    let mut manifest = start_manifest("eval", &args.config, cfg.adaptation.seed);
    dir.write_manifest(&manifest)?;
    std::fs::copy(&args.config, dir.path(rundir::CONFIG_SNAPSHOT))?;

    let roles = Roles {
        gateway: &gateway,
        prompts: &prompts,
        settings: &settings,
    };
    let result = run_eval(&pb, &samples, &roles, task.as_ref())?;
    dir.write_eval(&result.results)?;
    finish_run(&dir, &mut manifest, &gateway, &cfg, None)?;
    let summary = report(dir.root())?;
    print!("{}", summary.to_text());
    if result.errors > 0 {
        println!("gateway errors: {} (counted as incorrect)", result.errors);
    }
    Ok(())
}

/// Where a playbook command may write: a new file, or an existing one
/// (including the input) only with `--force`.
fn output_path(input: &Path, out: Option<PathBuf>, force: bool) -> Result<PathBuf> {
    let out = match out {
        Some(o) => o,
        None if force => input.to_path_buf(),
        None => return Err(UsageError("give --out <FILE>, or --force to rewrite the input in place".into()).into()),
    };
    if out.exists() && !force {
        return Err(UsageError(format!("{} exists; pass --force to overwrite", out.display())).into());
    }
    Ok(out)
}

fn cmd_playbook(cmd: PlaybookCmd) -> Result<()> {
    let counter = ProxyTokenCounter;
    match cmd {
        PlaybookCmd::Inspect { file } => {
            let pb = Playbook::load(&file)?;
            println!(
                "{}: {} bullets, {} tokens (budget {}), step {}, next id {}",
                file.display(),
                pb.len(),
                pb.token_count(&counter),
                pb.token_budget(),
                pb.step(),
                pb.next_id()
            );
            for s in pb.sections() {
                let n = pb.bullets().filter(|b| &b.section == s).count();
                println!("  {s}: {n}");
            }
            println!();
            println!("{}", pb.render());
        }
        PlaybookCmd::Export { file } => {
            println!("{}", Playbook::load(&file)?.render());
        }
        PlaybookCmd::Dedup { file, out, threshold, config, force } => {
            let out = output_path(&file, out, force)?;
            let embedder: Box<dyn Embedder> = match config {
                Some(c) => require_config(&c, "ace playbook dedup <FILE> --out <FILE> [--config <FILE>]")?.embedder()?,
                None => Box::new(HashingEmbedder),
            };
            let bytes = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let pb = Playbook::load(&file)?;
            let (deduped, rep) = dedup(&pb, embedder.as_ref(), threshold, &counter)?;
            if rep.merged_pairs.is_empty() {
                std::fs::write(&out, bytes)?;
                println!("notice: no bullets at or above similarity {threshold}; wrote unchanged copy");
            } else {
                deduped.save(&out)?;
                for p in &rep.merged_pairs {
                    println!("merged {} into {} (cosine {:.3})", p.absorbed_id, p.survivor_id, p.similarity);
                }
                println!("{} -> {} bullets, {} -> {} tokens", pb.len(), deduped.len(), rep.tokens_before, rep.tokens_after);
            }
            println!("wrote {}", out.display());
        }
        PlaybookCmd::Prune { file, out, budget, force } => {
            let out = output_path(&file, out, force)?;
            let bytes = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let mut pb = Playbook::load(&file)?;
            if let Some(b) = budget {
                pb = pb.with_token_budget(b)?;
            }
            let (pruned, rep) = prune_to_budget(&pb, &counter);
            if rep.pruned_ids.is_empty() {
                std::fs::write(&out, bytes)?;
                println!(
                    "notice: already within budget ({} <= {} tokens); wrote unchanged copy",
                    rep.tokens_before,
                    pb.token_budget()
                );
            } else {
                pruned.save(&out)?;
                let ids: Vec<String> = rep.pruned_ids.iter().map(|i| i.to_string()).collect();
                println!("pruned {}", ids.join(", "));
                println!("{} -> {} tokens (budget {})", rep.tokens_before, rep.tokens_after, pb.token_budget());
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    if !args.run_dir.is_dir() {
        bail!("run directory {} does not exist", args.run_dir.display());
    }
    let summary = report(&args.run_dir)?;
    match args.format {
        Format::Text => print!("{}", summary.to_text()),
        Format::Json => println!("{}", serde_json::to_string_pretty(&summary)?),
    }
    Ok(())
}

fn cmd_scaffold(args: ScaffoldArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let (name, samples, fixtures, ground_truth) = match args.kind {
        DemoKind::LookupQa => {
            let t = LookupQa::new(args.facts, args.samples, args.seed);
            ("lookup-qa", t.samples(), lookup_qa_fixtures(&t), true)
        }
        DemoKind::ArithEnv => {
            let t = ArithEnv::new(args.samples, args.seed);
            ("arith-env", t.samples(), arith_env_fixtures(&t), false)
        }
    };
    write_samples(args.out.join("tasks.jsonl"), &samples)?;
    fixtures.save(args.out.join("fixtures.json"))?;
    let config = format!(
        "# Scripted {name} demo. Switch gateway.backend to \"http\" and set\n\
         # ACE_API_BASE / ACE_API_KEY / ACE_MODEL to run against a real model.\n\
         [gateway]\n\
         backend = \"scripted\"\n\
         fixtures = \"fixtures.json\"\n\
         prices = {{ input_per_1k = 0.0005, output_per_1k = 0.0015 }}\n\
         \n\
         [adaptation]\n\
         mode = \"online\"\n\
         use_ground_truth = {ground_truth}\n\
         seed = {seed}\n\
         \n\
         [refine]\n\
         mode = \"lazy\"\n\
         token_budget = 8000\n\
         \n\
         [task]\n\
         kind = \"{name}\"\n",
        seed = args.seed,
    );
    std::fs::write(args.out.join("ace.toml"), config)?;
    println!("wrote {} samples, fixtures and ace.toml to {}", samples.len(), args.out.display());
    Ok(())
}
