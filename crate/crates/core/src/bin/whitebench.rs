use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use whitebench::metrics::{emit_report, ReportFormat};
use whitebench::run::{plan_agent, run_suite, RunOptions, RunReport};
use whitebench::task::{load_suite_manifest, validate_task_config, Vars};
use whitebench::tools::{Modality, ModalityKind};

#[derive(Parser)]
#[command(name = "whitebench", version, about = "Run and score computer-use agent tasks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a suite and write report.json plus per-attempt records.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "hybrid")]
        modality: ModalityKind,
        #[arg(long, default_value_t = 1)]
        attempts: u32,
        /// Leave out the shell and file-edit tools.
        #[arg(long)]
        no_bash: bool,
        /// Run only this task.
        #[arg(long)]
        task: Option<String>,
        /// Tasks run concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, default_value = "wb-out")]
        out: PathBuf,
        /// Plan directory for the scripted agent (default: `plans/` next to the manifest).
        #[arg(long)]
        plans: Option<PathBuf>,
        #[arg(long)]
        keep_workspaces: bool,
        /// Extra placeholder values, `NAME=VALUE`.
        #[arg(long = "var", value_parser = parse_var)]
        vars: Vec<(String, String)>,
    },
    /// Load and check every task in a suite.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// List the tasks in a suite.
    List {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Render one or more run reports, merged.
    Report {
        /// Run output directory or report.json; repeatable.
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "md")]
        format: ReportFormat,
    },
}

fn parse_var(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Run {
            manifest,
            modality,
            attempts,
            no_bash,
            task,
            parallel,
            out,
            plans,
            keep_workspaces,
            vars,
        } => {
            let suite = match load_suite_manifest(&manifest) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let plans = plans.unwrap_or_else(|| suite.root.join("plans"));
            let mut opts = RunOptions::new(&out, attempts);
            opts.parallel = parallel;
            opts.task_filter = task;
            opts.keep_workspaces = keep_workspaces;
            let mut extra = Vars::new();
            for (k, v) in &vars {
                extra.set(k, v);
            }
            opts.vars = extra;
            let factory = |t: &whitebench::task::TaskConfig, m: Modality| plan_agent(&plans, &t.task_id, m);
            match run_suite(&suite, Modality::new(modality, !no_bash), &factory, &opts) {
                Ok(report) => {
                    print!("{}", String::from_utf8_lossy(&emit_report(&report, ReportFormat::Markdown)));
                    println!("\nreport: {}", out.join("report.json").display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Validate { manifest } => {
            let suite = match load_suite_manifest(&manifest) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let tasks = match suite.load_tasks() {
                Ok(t) => t,
                Err(e) => return fail(e),
            };
            let mut bad = 0;
            for t in &tasks {
                let violations = validate_task_config(&t.config, &suite.root);
                if violations.is_empty() {
                    println!("ok    {}", t.config.task_id);
                } else {
                    bad += 1;
                    println!("FAIL  {}", t.config.task_id);
                    for v in violations {
                        println!("      {:?}: {}", v.kind, v.detail);
                    }
                }
            }
            println!("{} task(s), {bad} invalid", tasks.len());
            if bad == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Cmd::List { manifest } => {
            let tasks = match load_suite_manifest(&manifest).and_then(|s| s.load_tasks()) {
                Ok(t) => t,
                Err(e) => return fail(e),
            };
            for t in tasks {
                let c = &t.config;
                println!(
                    "{}\t{} key steps\t{} steps\t{}s\t{}",
                    c.task_id,
                    c.key_steps.len(),
                    c.difficulty_steps,
                    c.timeout_s,
                    c.instruction
                );
            }
            ExitCode::SUCCESS
        }
        Cmd::Report { inputs, format } => {
            let mut reports = Vec::new();
            for input in &inputs {
                match read_report(input) {
                    Ok(r) => reports.push(r),
                    Err(e) => return fail(e),
                }
            }
            let Some(report) = RunReport::merge(reports) else {
                return fail("no reports");
            };
            print!("{}", String::from_utf8_lossy(&emit_report(&report, format)));
            ExitCode::SUCCESS
        }
    }
}

fn read_report(input: &Path) -> Result<RunReport, String> {
    let path = if input.is_dir() { input.join("report.json") } else { input.to_owned() };
    let bytes = std::fs::read(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}
