use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use simalloc::harness::{self, report, Config};
use simalloc::trace::{read_trace, validate, write_trace, Trace};

#[derive(Parser)]
#[command(name = "simalloc", version, about = "Trace-driven allocator simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a workload trace.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output trace file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one allocator; writes metrics.csv and report.md.
    Run {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two metrics files; `b` is the baseline.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Output directory for comparison.csv and report.md.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one simulation per value of a config key; writes sweep.csv and report.md.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Config key, qualified or unique bare name.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replay this trace instead of generating the configured workload.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    allocator: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    threads: Option<u32>,
    #[arg(long)]
    ops: Option<String>,
}

impl Common {
    fn config(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?
                .parse::<Config>()
                .with_context(|| format!("in {}", p.display()))?,
            None => Config::default(),
        };
        if let Some(w) = &self.workload {
            cfg.set("workload.kind", w)?;
        }
        if let Some(t) = self.threads {
            cfg.set("workload.threads", &t.to_string())?;
        }
        if let Some(n) = &self.ops {
            cfg.set("workload.total_ops", n)?;
        }
        if let Some(s) = self.seed {
            cfg.set("workload.seed", &s.to_string())?;
        }
        if let Some(a) = &self.allocator {
            cfg.set("engine.allocator", a)?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn trace(&self, cfg: &Config) -> Result<Option<Trace>> {
        let Some(path) = &self.trace else { return Ok(None) };
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let trace = read_trace(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
        let report = validate(&trace);
        if let Some(issue) = report.issues.first() {
            bail!("{}: invalid trace ({} issues), first: {issue}", path.display(), report.issues.len());
        }
        if cfg.is_explicit("workload.threads") && cfg.workload.threads != trace.threads {
            bail!(
                "trace {} has {} threads but the configuration asks for {}",
                path.display(),
                trace.threads,
                cfg.workload.threads
            );
        }
        Ok(Some(trace))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_summary(path: &Path) -> Result<report::Summary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    report::parse_summary(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen { common, out } => {
            if common.trace.is_some() {
                bail!("gen does not take --trace");
            }
            let cfg = common.config()?;
            let trace = harness::workload_trace(&cfg)?;
            let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut w = BufWriter::new(file);
            write_trace(&trace, &mut w)?;
            w.flush()?;
        }
        Cmd::Run { common, out } => {
            let cfg = common.config()?;
            let trace = match common.trace(&cfg)? {
                Some(t) => t,
                None => harness::workload_trace(&cfg)?,
            };
            let (_, summary) = harness::run(&cfg, &trace)?;
            out_dir(&out)?;
            write_file(&out.join("metrics.csv"), &report::metrics_csv(&summary))?;
            write_file(&out.join("report.md"), &report::run_markdown(&summary))?;
        }
        Cmd::Compare { a, b, out } => {
            let (sa, sb) = (read_summary(&a)?, read_summary(&b)?);
            let r = harness::compare_summaries(&sa, &sb)?;
            out_dir(&out)?;
            write_file(&out.join("comparison.csv"), &report::compare_csv(&r, &sa, &sb))?;
            write_file(&out.join("report.md"), &report::compare_markdown(&r, &sa, &sb))?;
        }
        Cmd::Sweep {
            common,
            key,
            values,
            out,
        } => {
            let cfg = common.config()?;
            let trace = common.trace(&cfg)?;
            let rows = harness::sweep(&cfg, trace.as_ref(), &key, &values)?;
            out_dir(&out)?;
            write_file(&out.join("sweep.csv"), &report::sweep_csv(&rows))?;
            write_file(&out.join("report.md"), &report::sweep_markdown(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("simalloc: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
