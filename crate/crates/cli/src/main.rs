use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use gvs_cli::{run_file, Command, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Validate,
    Static,
    Dyn,
    Energy,
    Control,
    Optimize,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Validate => Command::Validate,
            Cmd::Static => Command::Static,
            Cmd::Dyn => Command::Dyn,
            Cmd::Energy => Command::Energy,
            Cmd::Control => Command::Control,
            Cmd::Optimize => Command::Optimize,
        }
    }
}

/// Simulate hybrid rigid-soft robots described by scenario files.
#[derive(Debug, Parser)]
#[command(name = "gvs", version)]
struct Args {
    command: Cmd,
    /// Scenario files; several files run as a batch.
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    /// Output directory (one subdirectory per scenario in batch mode).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Reject unknown keys in scenario files.
    #[arg(long)]
    strict: bool,
    /// Seed for randomized audits.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of scenarios run concurrently in batch mode.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn configure_threads() {
    if let Some(n) = std::env::var("GVS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run_one(cmd: Command, path: &Path, opts: &RunOptions) -> i32 {
    match run_file(cmd, path, opts) {
        Ok(b) => {
            for line in &b.log {
                eprintln!("{line}");
            }
            eprintln!("results written to {}", b.dir.display());
            0
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            e.exit_code()
        }
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into())
}

/// Run each scenario in its own child process, at most `jobs` at a time.
fn run_batch(args: &Args) -> i32 {
    let exe = match std::env::current_exe() {
        Ok(e) => e,
        Err(e) => {
            eprintln!("cannot locate executable: {e}");
            return 4;
        }
    };
    let cmd = format!("{:?}", args.command).to_lowercase();
    let mut worst = 0;
    for chunk in args.scenarios.chunks(args.jobs.max(1)) {
        let children: Vec<_> = chunk
            .iter()
            .map(|p| {
                let mut c = std::process::Command::new(&exe);
                c.arg(&cmd).arg(p).arg("--out").arg(args.out.join(stem(p))).arg("--seed").arg(args.seed.to_string());
                if args.strict {
                    c.arg("--strict");
                }
                (p, c.spawn())
            })
            .collect();
        for (p, child) in children {
            let code = match child.and_then(|mut c| c.wait()) {
                Ok(s) => s.code().unwrap_or(4),
                Err(e) => {
                    eprintln!("{}: {e}", p.display());
                    4
                }
            };
            eprintln!("{}: exit {code}", p.display());
            worst = worst.max(code);
        }
    }
    worst
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    configure_threads();
    let code = if args.scenarios.len() > 1 {
        run_batch(&args)
    } else {
        let opts = RunOptions {
            out: args.out.clone(),
            strict: args.strict,
            seed: args.seed,
        };
        run_one(args.command.into(), &args.scenarios[0], &opts)
    };
    ExitCode::from(code as u8)
}
