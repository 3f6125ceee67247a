//! Cross-seed summaries of finished runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nellcom::grammar::UtteranceClass;
use nellcom::metrics::{ClassCounts, UncertaintyEffortPoint};
use nellcom::training::{metric, Phase};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::run::LoadedRun;

pub const AGGREGATE_CSV: &str = "aggregate.csv";
pub const POINTS_CSV: &str = "points.csv";
pub const AGGREGATE_JSON: &str = "aggregate.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub phase: Phase,
    pub epoch: usize,
    pub metric: String,
    /// Over the runs where the value is defined; NaN when none is.
    #[serde(with = "nan_as_null")]
    pub mean: f64,
    /// Sample standard deviation; 0 for a single defined value.
    #[serde(with = "nan_as_null")]
    pub std: f64,
    pub n: usize,
}

// JSON has no NaN
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedPoint {
    pub seed: u64,
    pub h: Option<f64>,
    pub e: f64,
}

/// Per-epoch class counts of one seed within one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCounts {
    pub seed: u64,
    pub phase: Phase,
    pub counts: Vec<ClassCounts>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub grammar: String,
    pub seeds: Vec<u64>,
    /// Expected (H, E) of the grammar itself.
    pub initial: UncertaintyEffortPoint,
    pub stats: Vec<MetricStat>,
    /// (H, E) at the end of supervised learning, one per seed.
    pub sl_points: Vec<SeedPoint>,
    /// (H, E) at the end of the run, one per seed.
    pub final_points: Vec<SeedPoint>,
    pub seed_counts: Vec<SeedCounts>,
}

fn mean_std(values: &[f64]) -> (f64, f64, usize) {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std, n)
}

fn point(seed: u64, rec: Option<&nellcom::training::EpochRecord>) -> SeedPoint {
    let get = |k| rec.and_then(|r| r.get(k)).unwrap_or(f64::NAN);
    let h = get(metric::UNCERTAINTY);
    SeedPoint {
        seed,
        h: h.is_finite().then_some(h),
        e: get(metric::EFFORT),
    }
}

fn count_metrics(c: &ClassCounts) -> impl Iterator<Item = (String, f64)> + '_ {
    UtteranceClass::ALL.into_iter().map(move |k| {
        (
            format!("{}{}", metric::COUNT_PREFIX, k.label()),
            c.get(k) as f64,
        )
    })
}

/// Aggregates runs of one grammar. Every run must cover the same epochs and
/// record the same metrics.
pub fn aggregate(runs: &[LoadedRun]) -> Result<Aggregate> {
    let first = runs
        .first()
        .ok_or_else(|| HarnessError::Data("nothing to aggregate".into()))?;
    let grammar = &first.config.grammar;
    for r in runs {
        if r.config.grammar != *grammar {
            return Err(HarnessError::Data(format!(
                "cannot aggregate grammar '{}' with '{}' ({})",
                r.config.grammar.name,
                grammar.name,
                r.dir.display()
            )));
        }
    }
    type Key = (Phase, usize);
    let layout = |r: &LoadedRun| -> Vec<(Key, Vec<String>)> {
        r.trajectory
            .records
            .iter()
            .map(|e| {
                let mut names: Vec<String> = e.metrics.keys().cloned().collect();
                if let Some(c) = &e.counts {
                    names.extend(count_metrics(c).map(|(k, _)| k));
                }
                ((e.phase, e.epoch), names)
            })
            .collect()
    };
    let reference = layout(first);
    for r in &runs[1..] {
        let other = layout(r);
        let keys = |l: &[(Key, Vec<String>)]| l.iter().map(|x| x.0).collect::<Vec<_>>();
        if keys(&other) != keys(&reference) {
            let missing = reference
                .iter()
                .map(|x| x.0)
                .find(|k| !other.iter().any(|o| o.0 == *k))
                .or_else(|| {
                    other
                        .iter()
                        .map(|x| x.0)
                        .find(|k| !reference.iter().any(|o| o.0 == *k))
                });
            return Err(HarnessError::Data(match missing {
                Some((p, e)) => format!(
                    "{} and {} disagree on {p} epoch {e}",
                    first.dir.display(),
                    r.dir.display()
                ),
                None => format!("{} has epochs out of order", r.dir.display()),
            }));
        }
        if other != reference {
            return Err(HarnessError::Data(format!(
                "{} records different metrics than {}",
                r.dir.display(),
                first.dir.display()
            )));
        }
    }

    let mut stats = Vec::new();
    for (i, (key, names)) in reference.iter().enumerate() {
        let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let per_run: Vec<BTreeMap<String, f64>> = runs
            .iter()
            .map(|r| {
                let e = &r.trajectory.records[i];
                let mut m = e.metrics.clone();
                if let Some(c) = &e.counts {
                    m.extend(count_metrics(c));
                }
                m
            })
            .collect();
        for name in names {
            values.insert(name, per_run.iter().map(|m| m[name]).collect());
        }
        for (name, v) in values {
            let (mean, std, n) = mean_std(&v);
            stats.push(MetricStat {
                phase: key.0,
                epoch: key.1,
                metric: name.to_string(),
                mean,
                std,
                n,
            });
        }
    }

    let mut seed_counts = Vec::new();
    for r in runs {
        for phase in [Phase::Supervised, Phase::Communication] {
            let counts: Vec<ClassCounts> =
                r.trajectory.phase(phase).filter_map(|e| e.counts).collect();
            if !counts.is_empty() {
                seed_counts.push(SeedCounts {
                    seed: r.config.seed,
                    phase,
                    counts,
                });
            }
        }
    }
    Ok(Aggregate {
        grammar: grammar.name.clone(),
        seeds: runs.iter().map(|r| r.config.seed).collect(),
        initial: UncertaintyEffortPoint::of_grammar(grammar),
        stats,
        sl_points: runs
            .iter()
            .map(|r| point(r.config.seed, r.trajectory.last(Phase::Supervised)))
            .collect(),
        final_points: runs
            .iter()
            .map(|r| {
                let last = r
                    .trajectory
                    .last(Phase::Communication)
                    .or(r.trajectory.last(Phase::Supervised));
                point(r.config.seed, last)
            })
            .collect(),
        seed_counts,
    })
}

impl Aggregate {
    pub fn stat(&self, phase: Phase, epoch: usize, name: &str) -> Option<&MetricStat> {
        self.stats
            .iter()
            .find(|s| s.phase == phase && s.epoch == epoch && s.metric == name)
    }

    /// Mean of one metric over a phase, in epoch order.
    pub fn mean_series(&self, phase: Phase, name: &str) -> Vec<(usize, f64)> {
        self.stats
            .iter()
            .filter(|s| s.phase == phase && s.metric == name)
            .map(|s| (s.epoch, s.mean))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,epoch,metric,mean,std,n\n");
        for s in &self.stats {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.phase, s.epoch, s.metric, s.mean, s.std, s.n
            ));
        }
        out
    }

    pub fn points_csv(&self) -> String {
        let opt = |h: Option<f64>| h.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("grammar,seed,stage,h,e\n");
        out.push_str(&format!(
            "{},,initial,{},{}\n",
            self.grammar, self.initial.h, self.initial.e
        ));
        for (stage, pts) in [("sl", &self.sl_points), ("final", &self.final_points)] {
            for p in pts {
                out.push_str(&format!(
                    "{},{},{stage},{},{}\n",
                    self.grammar,
                    p.seed,
                    opt(p.h),
                    p.e
                ));
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(HarnessError::io(&p))
        };
        put(AGGREGATE_CSV, self.to_csv())?;
        put(POINTS_CSV, self.points_csv())?;
        put(
            AGGREGATE_JSON,
            serde_json::to_string_pretty(self).expect("serializable") + "\n",
        )
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = if dir.is_dir() {
            dir.join(AGGREGATE_JSON)
        } else {
            dir.to_path_buf()
        };
        let text = fs::read_to_string(&p).map_err(HarnessError::io(&p))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", p.display())))
    }
}
