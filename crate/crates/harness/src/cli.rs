//! Command-line interface of the `nellcom` binary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nellcom::grammar::GrammarSpec;
use nellcom::training::{evaluate, EvalSet, Phase, RunData};
use nellcom::TrainConfig;
use rayon::prelude::*;

use crate::aggregate::{aggregate, Aggregate};
use crate::config::{parse_grammars, parse_seeds, Overrides};
use crate::error::{HarnessError, Result};
use crate::plot::{render, PlotKind};
use crate::run::{
    self, discover_runs, fresh_dir, load_agents, load_config, load_run, read_pairs, run_name,
    train_into, write_datasets,
};

#[derive(Parser, Debug)]
#[command(
    name = "nellcom",
    version,
    about = "Speaker/listener agents learning miniature languages"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the train/test split and its utterances for one grammar and seed.
    GenData {
        #[arg(long, default_value = "flex+op")]
        grammar: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, env = "NELLCOM_OUT", default_value = "runs")]
        out: PathBuf,
    },
    /// Train one speaker/listener pair (supervised, then communication).
    Train {
        /// Grammar name (fix+op, flex+op) or a grammar JSON file.
        #[arg(long)]
        grammar: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, env = "NELLCOM_OUT", default_value = "runs")]
        out: PathBuf,
    },
    /// Recompute a run's metrics from its checkpoints and print them as JSON.
    Evaluate {
        /// A run directory written by `train` or `sweep`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_parser = parse_phase, default_value = "rl")]
        phase: Phase,
    },
    /// Aggregate runs of one grammar across seeds.
    Analyze {
        /// Run directories, or directories containing runs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, env = "NELLCOM_OUT", default_value = "runs")]
        out: PathBuf,
    },
    /// Draw an SVG from one or more aggregates.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Aggregate directories (or aggregate.json files).
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every (grammar, seed) cell, then aggregate and plot.
    Sweep {
        #[arg(long, visible_alias = "grammar", default_value = "fix+op,flex+op")]
        grammars: String,
        /// A count (20 = seeds 0..19), an inclusive range (3-7) or a list.
        #[arg(long, default_value = "20")]
        seeds: String,
        /// Concurrent runs; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, env = "NELLCOM_OUT", default_value = "runs")]
        out: PathBuf,
    },
}

fn parse_phase(s: &str) -> std::result::Result<Phase, String> {
    s.parse().map_err(|e: nellcom::Error| e.to_string())
}

/// Parses `args` and executes the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            grammar,
            seed,
            overrides,
            out,
        } => {
            let config = overrides.resolve(Some(&grammar), Some(seed))?;
            let data = RunData::prepare(&config)?;
            let dir = fresh_dir(&out, &format!("data-{}", run_name(&config)))?;
            write_datasets(&dir, &config, &data)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Train {
            grammar,
            seed,
            overrides,
            out,
        } => {
            let config = overrides.resolve(grammar.as_deref(), seed)?;
            let (dir, outcome) = train_into(&config, &out)?;
            let summary = run::RunSummary::new(&config, &outcome.trajectory)?;
            eprintln!(
                "{}: final reconstruction accuracy {:.3}",
                run_name(&config),
                summary
                    .rl_end
                    .get(nellcom::training::metric::RECON_ACC_TEST)
                    .copied()
                    .unwrap_or(f64::NAN)
            );
            println!("{}", dir.display());
            Ok(())
        }
        Command::Evaluate { run, phase } => {
            let metrics = evaluate_run(&run, phase)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&metrics).expect("serializable")
            );
            Ok(())
        }
        Command::Analyze { runs, out } => {
            let aggs = analyze(&runs)?;
            let dir = fresh_dir(&out, "analysis")?;
            for a in &aggs {
                a.write(&dir.join(&a.grammar))?;
            }
            println!("{}", dir.display());
            Ok(())
        }
        Command::Plot { kind, input, out } => {
            let aggs: Vec<Aggregate> = input
                .iter()
                .map(|p| Aggregate::read(p))
                .collect::<Result<_>>()?;
            let svg = render(kind, &aggs)
                .ok_or_else(|| HarnessError::Data("no aggregate to plot".into()))?;
            if out.exists() {
                return Err(HarnessError::Data(format!(
                    "{} already exists; refusing to overwrite",
                    out.display()
                )));
            }
            if let Some(p) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(p).map_err(HarnessError::io(p))?;
            }
            fs::write(&out, svg).map_err(HarnessError::io(&out))?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Sweep {
            grammars,
            seeds,
            jobs,
            overrides,
            out,
        } => {
            let grammars = parse_grammars(&grammars)?;
            let seeds = parse_seeds(&seeds)?;
            let report = sweep(&grammars, &seeds, &overrides, jobs, &out)?;
            println!("{}", report.dir.display());
            Ok(())
        }
    }
}

/// Loads runs and aggregates them per grammar, in first-seen order.
pub fn analyze(paths: &[PathBuf]) -> Result<Vec<Aggregate>> {
    let dirs = discover_runs(paths)?;
    let loaded: Vec<run::LoadedRun> = dirs.iter().map(|d| load_run(d)).collect::<Result<_>>()?;
    let mut names: Vec<String> = Vec::new();
    for r in &loaded {
        if !names.contains(&r.config.grammar.name) {
            names.push(r.config.grammar.name.clone());
        }
    }
    names
        .iter()
        .map(|n| {
            let group: Vec<run::LoadedRun> = loaded
                .iter()
                .filter(|r| &r.config.grammar.name == n)
                .cloned()
                .collect();
            aggregate(&group)
        })
        .collect()
}

pub fn evaluate_run(dir: &Path, phase: Phase) -> Result<std::collections::BTreeMap<String, f64>> {
    let config = load_config(dir)?;
    let (speaker, listener) = load_agents(dir, phase)?;
    let test = read_pairs(&dir.join(run::TEST_DATA_FILE), &config)?;
    let train: Vec<_> = read_pairs(&dir.join(run::TRAIN_DATA_FILE), &config)?
        .into_iter()
        .map(|p| p.0)
        .collect();
    let set = EvalSet {
        train: &train,
        test: &test,
        grammar: &config.grammar,
        max_len: config.max_len,
    };
    let (mut metrics, counts) = evaluate(Some(&speaker), Some(&listener), &set)?;
    if let Some(c) = counts {
        for class in nellcom::UtteranceClass::ALL {
            metrics.insert(
                format!(
                    "{}{}",
                    nellcom::training::metric::COUNT_PREFIX,
                    class.label()
                ),
                c.get(class) as f64,
            );
        }
    }
    Ok(metrics)
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub dir: PathBuf,
    pub runs: Vec<PathBuf>,
    pub aggregates: Vec<Aggregate>,
}

/// Runs all cells into `out/sweep[-k]/runs`, then writes one aggregate per
/// grammar and the three plots under `report/`.
pub fn sweep(
    grammars: &[GrammarSpec],
    seeds: &[u64],
    overrides: &Overrides,
    jobs: Option<usize>,
    out: &Path,
) -> Result<SweepReport> {
    let configs: Vec<TrainConfig> = grammars
        .iter()
        .flat_map(|g| {
            seeds.iter().map(move |&s| {
                overrides.resolve(None, Some(s)).map(|mut c| {
                    c.grammar = g.clone();
                    if overrides.exact_rates {
                        c.grammar.exact_rates = true;
                    }
                    c
                })
            })
        })
        .collect::<Result<_>>()?;
    let dir = fresh_dir(out, "sweep")?;
    let runs_dir = dir.join("runs");
    let jobs = jobs
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let total = configs.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let runs: Vec<PathBuf> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let (d, _) = train_into(c, &runs_dir)?;
                let k = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
                eprintln!("[{k}/{total}] {}", run_name(c));
                Ok(d)
            })
            .collect::<Result<_>>()
    })?;
    let report = dir.join("report");
    let mut aggregates = Vec::new();
    for g in grammars {
        let group: Vec<run::LoadedRun> = runs
            .iter()
            .map(|d| load_run(d))
            .filter(|r| r.as_ref().map_or(true, |r| r.config.grammar.name == g.name))
            .collect::<Result<_>>()?;
        let a = aggregate(&group)?;
        a.write(&report.join(&a.grammar))?;
        for kind in [PlotKind::Timeline, PlotKind::Distribution] {
            if let Some(svg) = render(kind, std::slice::from_ref(&a)) {
                let p = report
                    .join(&a.grammar)
                    .join(format!("{kind:?}.svg").to_lowercase());
                fs::write(&p, svg).map_err(HarnessError::io(&p))?;
            }
        }
        aggregates.push(a);
    }
    if let Some(svg) = render(PlotKind::Tradeoff, &aggregates) {
        let p = report.join("tradeoff.svg");
        fs::write(&p, svg).map_err(HarnessError::io(&p))?;
    }
    Ok(SweepReport {
        dir,
        runs,
        aggregates,
    })
}
