//! Turning files and flags into training configurations.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use nellcom::{GrammarSpec, TrainConfig};

use crate::error::{HarnessError, Result};

/// Training overrides shared by `train` and `sweep`. Flags win over the
/// config file, which wins over the defaults.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON file with any subset of the training configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sl_epochs: Option<usize>,
    #[arg(long)]
    pub rl_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Subtract a moving-average reward baseline during communication.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub master_seed: Option<u64>,
    /// Hit the marking and order rates exactly in every generated dataset.
    #[arg(long)]
    pub exact_rates: bool,
}

impl Overrides {
    pub fn base(&self) -> Result<TrainConfig> {
        match &self.config {
            None => Ok(TrainConfig::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    HarnessError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
            }
        }
    }

    /// Resolves the configuration for one (grammar, seed) cell. `None` keeps
    /// the file's value.
    pub fn resolve(&self, grammar: Option<&str>, seed: Option<u64>) -> Result<TrainConfig> {
        let mut c = self.base()?;
        if let Some(g) = grammar {
            c.grammar = resolve_grammar(g)?;
        }
        if let Some(s) = seed {
            c.seed = s;
        }
        if let Some(v) = self.sl_epochs {
            c.sl_epochs = v;
        }
        if let Some(v) = self.rl_epochs {
            c.rl_epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.max_len {
            c.max_len = v;
        }
        if let Some(v) = self.master_seed {
            c.master_seed = v;
        }
        c.baseline |= self.baseline;
        if self.exact_rates {
            c.grammar.exact_rates = true;
        }
        c.validate()?;
        Ok(c)
    }
}

/// A predefined grammar name, or a path to a grammar JSON file.
pub fn resolve_grammar(s: &str) -> Result<GrammarSpec> {
    let path = Path::new(s);
    if s.ends_with(".json") || path.is_file() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {s}: {e}")))?;
        return Ok(GrammarSpec::from_json(&text)?);
    }
    Ok(GrammarSpec::by_name(s)?)
}

/// `20` means seeds 0..20; `3-7` is inclusive; `1,4,9` is a list. Pieces may
/// be mixed with commas, but a bare count only stands alone.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = |why: &str| HarnessError::Config(format!("bad seed list '{s}': {why}"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad("not a number"));
    let s = s.trim();
    if !s.contains(',') && !s.contains('-') {
        let n = num(s)?;
        if n == 0 {
            return Err(bad("empty"));
        }
        return Ok((0..n).collect());
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(bad("descending range"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    let unique: BTreeSet<u64> = out.iter().copied().collect();
    if unique.len() != out.len() {
        return Err(bad("duplicate seeds"));
    }
    Ok(out)
}

pub fn parse_grammars(s: &str) -> Result<Vec<GrammarSpec>> {
    let gs: Vec<GrammarSpec> = s
        .split(',')
        .map(|g| resolve_grammar(g.trim()))
        .collect::<Result<_>>()?;
    let names: BTreeSet<&str> = gs.iter().map(|g| g.name.as_str()).collect();
    if names.len() != gs.len() {
        return Err(HarnessError::Config(format!("duplicate grammar in '{s}'")));
    }
    Ok(gs)
}
