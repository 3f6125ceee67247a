//! Run directories: training a cell and writing or reading its artifacts.
//!
//! Layout of one run:
//!
//! ```text
//! <grammar>-seed<k>/
//!   config.json      resolved training configuration
//!   metrics.csv      phase,epoch,metric,value
//!   summary.json     end-of-phase metrics and the final (H, E) point
//!   data/train.tsv   training meanings with their first-epoch utterances
//!   data/test.tsv    test meanings with their fixed evaluation utterances
//!   checkpoints/{sl,rl}/{speaker,listener}/
//!   run.json         creation time and command line (not reproducible)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nellcom::agents::{Listener, Speaker};
use nellcom::grammar::{read_dataset, regenerate_epoch_dataset, write_dataset};
use nellcom::metrics::ClassCounts;
use nellcom::training::{parameter_counts, Phase, RunData, Stream};
use nellcom::{run_experiment, Meaning, RunOutcome, RunTrajectory, TrainConfig, Utterance};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RUN_MANIFEST_FILE: &str = "run.json";
pub const TRAIN_DATA_FILE: &str = "data/train.tsv";
pub const TEST_DATA_FILE: &str = "data/test.tsv";

pub fn run_name(config: &TrainConfig) -> String {
    format!("{}-seed{}", config.grammar.name, config.seed)
}

/// Creates `parent/name`, or `parent/name-1`, `-2`, ... if taken. Existing
/// directories are never reused.
pub fn fresh_dir(parent: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(parent).map_err(HarnessError::io(parent))?;
    for k in 0usize.. {
        let candidate = if k == 0 {
            parent.join(name)
        } else {
            parent.join(format!("{name}-{k}"))
        };
        match fs::create_dir(&candidate) {
            Ok(()) => return Ok(candidate),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(HarnessError::io(&candidate)(e)),
        }
    }
    unreachable!()
}

pub fn checkpoint_dir(run: &Path, phase: Phase, role: &str) -> PathBuf {
    run.join("checkpoints").join(phase.to_string()).join(role)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub grammar: String,
    pub seed: u64,
    pub run_seed: u64,
    pub speaker_parameters: usize,
    pub listener_parameters: usize,
    pub sl_end: BTreeMap<String, f64>,
    pub rl_end: BTreeMap<String, f64>,
    pub sl_end_counts: Option<ClassCounts>,
    pub rl_end_counts: Option<ClassCounts>,
    /// Uncertainty and effort of the final test productions; H is absent when
    /// nothing was classifiable.
    pub final_h: Option<f64>,
    pub final_e: f64,
}

fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

impl RunSummary {
    pub fn new(config: &TrainConfig, t: &RunTrajectory) -> Result<Self> {
        let (sp, lp) = parameter_counts(config)?;
        let sl = t.last(Phase::Supervised);
        let rl = t.last(Phase::Communication);
        let last = rl
            .or(sl)
            .ok_or_else(|| HarnessError::Data("empty trajectory".into()))?;
        Ok(RunSummary {
            grammar: config.grammar.name.clone(),
            seed: config.seed,
            run_seed: config.run_seed(),
            speaker_parameters: sp,
            listener_parameters: lp,
            sl_end: sl.map(|r| r.metrics.clone()).unwrap_or_default(),
            rl_end: rl.map(|r| r.metrics.clone()).unwrap_or_default(),
            sl_end_counts: sl.and_then(|r| r.counts),
            rl_end_counts: rl.and_then(|r| r.counts),
            final_h: finite(last.get(nellcom::training::metric::UNCERTAINTY)),
            final_e: last
                .get(nellcom::training::metric::EFFORT)
                .unwrap_or(f64::NAN),
        })
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(HarnessError::io(p))?;
    }
    fs::write(path, contents).map_err(HarnessError::io(path))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn write_pairs(path: &Path, pairs: &[(Meaning, Utterance)], data: &RunData) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, pairs, &data.vocab)?;
    write(path, buf)
}

/// The dataset files `gen-data` and `train` emit: training meanings with
/// their first-epoch utterances, and the fixed test pairs.
pub fn write_datasets(dir: &Path, config: &TrainConfig, data: &RunData) -> Result<()> {
    let first_epoch = regenerate_epoch_dataset(
        &data.split.train,
        &config.grammar,
        &data.vocab,
        &mut config.streams().rng(Stream::SlData),
    );
    write_pairs(&dir.join(TRAIN_DATA_FILE), &first_epoch, data)?;
    write_pairs(&dir.join(TEST_DATA_FILE), &data.test_pairs, data)
}

/// Writes every reproducible artifact of a finished run into `dir`.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    let config = &outcome.config;
    write(&dir.join(CONFIG_FILE), json(config))?;
    write(&dir.join(METRICS_FILE), outcome.trajectory.to_csv())?;
    write(
        &dir.join(SUMMARY_FILE),
        json(&RunSummary::new(config, &outcome.trajectory)?),
    )?;
    write_datasets(dir, config, &outcome.data)?;
    for (phase, s, l) in [
        (Phase::Supervised, &outcome.speaker_sl, &outcome.listener_sl),
        (Phase::Communication, &outcome.speaker, &outcome.listener),
    ] {
        s.save(&checkpoint_dir(dir, phase, "speaker"), None)?;
        l.save(&checkpoint_dir(dir, phase, "listener"), None)?;
    }
    Ok(())
}

fn write_run_manifest(dir: &Path) -> Result<()> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let args: Vec<String> = std::env::args().collect();
    let manifest = serde_json::json!({
        "created_unix": now,
        "command": args,
        "version": env!("CARGO_PKG_VERSION"),
    });
    write(&dir.join(RUN_MANIFEST_FILE), json(&manifest))
}

/// Trains one cell into a fresh directory under `parent`.
pub fn train_into(config: &TrainConfig, parent: &Path) -> Result<(PathBuf, RunOutcome)> {
    config.validate()?;
    let dir = fresh_dir(parent, &run_name(config))?;
    let outcome = run_experiment(config)?;
    write_run(&dir, &outcome)?;
    write_run_manifest(&dir)?;
    Ok((dir, outcome))
}

#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: TrainConfig,
    pub trajectory: RunTrajectory,
}

pub fn is_run_dir(dir: &Path) -> bool {
    dir.join(CONFIG_FILE).is_file() && dir.join(METRICS_FILE).is_file()
}

pub fn load_config(dir: &Path) -> Result<TrainConfig> {
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config = load_config(dir)?;
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).map_err(HarnessError::io(&path))?;
    let trajectory = RunTrajectory::from_csv(&text)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        config,
        trajectory,
    })
}

/// Run directories named on the command line: each path is either a run or
/// a directory whose immediate children include runs.
pub fn discover_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if is_run_dir(p) {
            out.push(p.clone());
            continue;
        }
        let entries = fs::read_dir(p).map_err(HarnessError::io(p))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|c| is_run_dir(c))
            .collect();
        if found.is_empty() {
            return Err(HarnessError::Data(format!("no runs under {}", p.display())));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

pub fn load_agents(run: &Path, phase: Phase) -> Result<(Speaker, Listener)> {
    let s = checkpoint_dir(run, phase, "speaker");
    let l = checkpoint_dir(run, phase, "listener");
    for d in [&s, &l] {
        if !d.is_dir() {
            return Err(HarnessError::Checkpoint(format!(
                "missing checkpoint {}",
                d.display()
            )));
        }
    }
    Ok((Speaker::load(&s)?, Listener::load(&l)?))
}

pub fn read_pairs(path: &Path, config: &TrainConfig) -> Result<Vec<(Meaning, Utterance)>> {
    let file = fs::File::open(path).map_err(HarnessError::io(path))?;
    Ok(read_dataset(
        std::io::BufReader::new(file),
        &config.vocabulary()?,
    )?)
}
