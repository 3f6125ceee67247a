//! Meanings, vocabularies and the miniature head-final grammars.
//!
//! A meaning is an (action, agent, patient) triple. A grammar realizes it as
//! `subj obj (mk) verb` (SOV) or `obj (mk) subj verb` (OSV), where the optional
//! case marker always follows the object noun and the verb is always final.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default number of entities (nouns).
pub const DEFAULT_ENTITIES: usize = 10;
/// Default number of actions (verbs).
pub const DEFAULT_ACTIONS: usize = 8;

/// An (action, agent, patient) triple.
///
/// Fields are named slots, so a meaning carries no ordering of its parts.
/// The derived `Ord` is the canonical (action, agent, patient) lexicographic order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Meaning {
    pub action: usize,
    pub agent: usize,
    pub patient: usize,
}

impl Meaning {
    pub fn new(action: usize, agent: usize, patient: usize) -> Self {
        Meaning {
            action,
            agent,
            patient,
        }
    }

    /// Checks identifier ranges and that agent and patient differ.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.action >= vocab.n_actions
            || self.agent >= vocab.n_entities
            || self.patient >= vocab.n_entities
        {
            return Err(Error::InvalidMeaning(format!(
                "{self} out of range for {} entities / {} actions",
                vocab.n_entities, vocab.n_actions
            )));
        }
        if self.agent == self.patient {
            return Err(Error::InvalidMeaning(format!(
                "{self}: agent and patient must differ"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Meaning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.action, self.agent, self.patient)
    }
}

/// Vocabulary token id.
///
/// Content tokens come first (nouns, then verbs, then the marker), followed by
/// the control tokens eos, bos and pad.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Token(pub u16);

impl Token {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Noun(usize),
    Verb(usize),
    Marker,
    Eos,
    Bos,
    Pad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub n_entities: usize,
    pub n_actions: usize,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            n_entities: DEFAULT_ENTITIES,
            n_actions: DEFAULT_ACTIONS,
        }
    }
}

impl Vocabulary {
    pub fn new(n_entities: usize, n_actions: usize) -> Result<Self> {
        if n_entities < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 entities, got {n_entities}"
            )));
        }
        if n_actions < 1 {
            return Err(Error::InvalidConfig("need at least 1 action".into()));
        }
        if n_entities + n_actions + 4 > u16::MAX as usize {
            return Err(Error::InvalidConfig("vocabulary too large".into()));
        }
        Ok(Vocabulary {
            n_entities,
            n_actions,
        })
    }

    /// Number of content tokens: nouns + verbs + marker.
    pub fn n_content(&self) -> usize {
        self.n_entities + self.n_actions + 1
    }

    pub fn noun(&self, entity: usize) -> Token {
        debug_assert!(entity < self.n_entities);
        Token(entity as u16)
    }

    pub fn verb(&self, action: usize) -> Token {
        debug_assert!(action < self.n_actions);
        Token((self.n_entities + action) as u16)
    }

    pub fn marker(&self) -> Token {
        Token((self.n_entities + self.n_actions) as u16)
    }

    pub fn eos(&self) -> Token {
        Token(self.n_content() as u16)
    }

    pub fn bos(&self) -> Token {
        Token(self.n_content() as u16 + 1)
    }

    pub fn pad(&self) -> Token {
        Token(self.n_content() as u16 + 2)
    }

    pub fn is_content(&self, t: Token) -> bool {
        t.index() < self.n_content()
    }

    pub fn kind(&self, t: Token) -> Option<TokenKind> {
        let i = t.index();
        let (ne, na) = (self.n_entities, self.n_actions);
        Some(if i < ne {
            TokenKind::Noun(i)
        } else if i < ne + na {
            TokenKind::Verb(i - ne)
        } else if i == ne + na {
            TokenKind::Marker
        } else if i == ne + na + 1 {
            TokenKind::Eos
        } else if i == ne + na + 2 {
            TokenKind::Bos
        } else if i == ne + na + 3 {
            TokenKind::Pad
        } else {
            return None;
        })
    }

    pub fn text(&self, t: Token) -> String {
        match self.kind(t) {
            Some(TokenKind::Noun(e)) => format!("noun-{e}"),
            Some(TokenKind::Verb(a)) => format!("verb-{a}"),
            Some(TokenKind::Marker) => "mk".into(),
            Some(TokenKind::Eos) => "<eos>".into(),
            Some(TokenKind::Bos) => "<bos>".into(),
            Some(TokenKind::Pad) => "<pad>".into(),
            None => format!("<unk-{}>", t.0),
        }
    }

    pub fn parse_token(&self, s: &str) -> Result<Token> {
        let bad = || Error::Data(format!("unknown token '{s}'"));
        if s == "mk" {
            return Ok(self.marker());
        }
        if let Some(rest) = s.strip_prefix("noun-") {
            let e: usize = rest.parse().map_err(|_| bad())?;
            return if e < self.n_entities {
                Ok(self.noun(e))
            } else {
                Err(bad())
            };
        }
        if let Some(rest) = s.strip_prefix("verb-") {
            let a: usize = rest.parse().map_err(|_| bad())?;
            return if a < self.n_actions {
                Ok(self.verb(a))
            } else {
                Err(bad())
            };
        }
        Err(bad())
    }

    /// Stable hex digest of the token inventory.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for i in 0..self.n_content() + 3 {
            h.update(self.text(Token(i as u16)).as_bytes());
            h.update(b"\n");
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// A sequence of content tokens; eos is never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Utterance(pub Vec<Token>);

impl Utterance {
    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn render(&self, vocab: &Vocabulary) -> String {
        self.0
            .iter()
            .map(|&t| vocab.text(t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse(s: &str, vocab: &Vocabulary) -> Result<Self> {
        s.split_whitespace()
            .map(|w| vocab.parse_token(w))
            .collect::<Result<Vec<_>>>()
            .map(Utterance)
    }
}

/// The order and marking choices behind one generated utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Draws {
    pub sov: bool,
    pub marked: bool,
}

impl Draws {
    pub const ALL: [Draws; 4] = [
        Draws {
            sov: true,
            marked: false,
        },
        Draws {
            sov: true,
            marked: true,
        },
        Draws {
            sov: false,
            marked: false,
        },
        Draws {
            sov: false,
            marked: true,
        },
    ];

    pub fn class(self) -> UtteranceClass {
        match (self.sov, self.marked) {
            (true, false) => UtteranceClass::SovNoMk,
            (true, true) => UtteranceClass::SovMk,
            (false, false) => UtteranceClass::OsvNoMk,
            (false, true) => UtteranceClass::OsvMk,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UtteranceClass {
    SovNoMk,
    SovMk,
    OsvNoMk,
    OsvMk,
    Other,
}

impl UtteranceClass {
    pub const ALL: [UtteranceClass; 5] = [
        UtteranceClass::SovNoMk,
        UtteranceClass::SovMk,
        UtteranceClass::OsvNoMk,
        UtteranceClass::OsvMk,
        UtteranceClass::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            UtteranceClass::SovNoMk => "SOV_no_mk",
            UtteranceClass::SovMk => "SOV_mk",
            UtteranceClass::OsvNoMk => "OSV_no_mk",
            UtteranceClass::OsvMk => "OSV_mk",
            UtteranceClass::Other => "OTHER",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn draws(self) -> Option<Draws> {
        match self {
            UtteranceClass::SovNoMk => Some(Draws {
                sov: true,
                marked: false,
            }),
            UtteranceClass::SovMk => Some(Draws {
                sov: true,
                marked: true,
            }),
            UtteranceClass::OsvNoMk => Some(Draws {
                sov: false,
                marked: false,
            }),
            UtteranceClass::OsvMk => Some(Draws {
                sov: false,
                marked: true,
            }),
            UtteranceClass::Other => None,
        }
    }
}

/// Order distribution plus object-marking probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub name: String,
    pub p_sov: f64,
    pub p_mark: f64,
    /// Realize the order/marking rates as exact per-dataset quotas instead of
    /// independent per-utterance draws.
    #[serde(default)]
    pub exact_rates: bool,
}

impl GrammarSpec {
    pub fn fix_op() -> Self {
        GrammarSpec {
            name: "fix+op".into(),
            p_sov: 1.0,
            p_mark: 2.0 / 3.0,
            exact_rates: false,
        }
    }

    pub fn flex_op() -> Self {
        GrammarSpec {
            name: "flex+op".into(),
            p_sov: 0.5,
            p_mark: 2.0 / 3.0,
            exact_rates: false,
        }
    }

    /// Resolves one of the built-in grammar names.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "fix+op" | "fix_op" | "fix" => Ok(Self::fix_op()),
            "flex+op" | "flex_op" | "flex" => Ok(Self::flex_op()),
            _ => Err(Error::UnknownGrammar(name.to_string())),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: GrammarSpec =
            serde_json::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn with_exact_rates(mut self, exact: bool) -> Self {
        self.exact_rates = exact;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (label, p) in [("p_sov", self.p_sov), ("p_mark", self.p_mark)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "{label} = {p} is not a probability"
                )));
            }
        }
        Ok(())
    }

    pub fn draws_probability(&self, d: Draws) -> f64 {
        let po = if d.sov { self.p_sov } else { 1.0 - self.p_sov };
        let pm = if d.marked {
            self.p_mark
        } else {
            1.0 - self.p_mark
        };
        po * pm
    }

    pub fn sample_draws<R: Rng + ?Sized>(&self, rng: &mut R) -> Draws {
        let sov = rng.random::<f64>() < self.p_sov;
        let marked = rng.random::<f64>() < self.p_mark;
        Draws { sov, marked }
    }
}

/// Every meaning with distinct agent and patient, in (action, agent, patient) order.
pub fn enumerate_meaning_space(n_entities: usize, n_actions: usize) -> Result<Vec<Meaning>> {
    if n_entities < 2 {
        return Err(Error::InvalidConfig(format!(
            "meaning space needs at least 2 entities, got {n_entities}"
        )));
    }
    if n_actions < 1 {
        return Err(Error::InvalidConfig("meaning space needs an action".into()));
    }
    let mut out = Vec::with_capacity(n_entities * (n_entities - 1) * n_actions);
    for action in 0..n_actions {
        for agent in 0..n_entities {
            for patient in 0..n_entities {
                if agent != patient {
                    out.push(Meaning::new(action, agent, patient));
                }
            }
        }
    }
    Ok(out)
}

/// Builds the surface form for a meaning under the given order/marking choice.
pub fn realize(m: &Meaning, vocab: &Vocabulary, d: Draws) -> Utterance {
    let subj = vocab.noun(m.agent);
    let obj = vocab.noun(m.patient);
    let verb = vocab.verb(m.action);
    let mut toks = Vec::with_capacity(4);
    if d.sov {
        toks.push(subj);
        toks.push(obj);
        if d.marked {
            toks.push(vocab.marker());
        }
    } else {
        toks.push(obj);
        if d.marked {
            toks.push(vocab.marker());
        }
        toks.push(subj);
    }
    toks.push(verb);
    Utterance(toks)
}

pub fn generate_utterance<R: Rng + ?Sized>(
    m: &Meaning,
    g: &GrammarSpec,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Utterance {
    realize(m, vocab, g.sample_draws(rng))
}

/// All utterances the grammar can produce for `m` with nonzero probability.
pub fn enumerate_valid_utterances(
    m: &Meaning,
    g: &GrammarSpec,
    vocab: &Vocabulary,
) -> BTreeSet<Utterance> {
    Draws::ALL
        .iter()
        .filter(|&&d| g.draws_probability(d) > 0.0)
        .map(|&d| realize(m, vocab, d))
        .collect()
}

/// Train/test partition of the meaning space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<Meaning>,
    pub test: Vec<Meaning>,
}

/// Shuffles and splits `meanings`, then swaps pairs until every entity and
/// action of the inventory appears at least once in the training part.
pub fn split_dataset<R: Rng + ?Sized>(
    meanings: &[Meaning],
    train_fraction: f64,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let n_train = (meanings.len() as f64 * train_fraction).round() as usize;
    // Each meaning covers one action and two entities.
    let needed = vocab.n_actions.max(vocab.n_entities.div_ceil(2));
    if n_train < needed || n_train >= meanings.len() {
        return Err(Error::Data(format!(
            "training set of {n_train} meanings cannot cover {} entities and {} actions",
            vocab.n_entities, vocab.n_actions
        )));
    }
    let mut shuffled = meanings.to_vec();
    shuffled.shuffle(rng);
    let mut test = shuffled.split_off(n_train);
    let mut train = shuffled;

    let mut ent_count = vec![0usize; vocab.n_entities];
    let mut act_count = vec![0usize; vocab.n_actions];
    for m in &train {
        ent_count[m.agent] += 1;
        ent_count[m.patient] += 1;
        act_count[m.action] += 1;
    }
    let max_swaps = 100 * meanings.len();
    let mut swaps = 0;
    loop {
        let missing_ent = (0..vocab.n_entities).find(|&e| ent_count[e] == 0);
        let missing_act = (0..vocab.n_actions).find(|&a| act_count[a] == 0);
        if missing_ent.is_none() && missing_act.is_none() {
            break;
        }
        let candidates: Vec<usize> = test
            .iter()
            .enumerate()
            .filter(|(_, m)| {
                Some(m.agent) == missing_ent
                    || Some(m.patient) == missing_ent
                    || Some(m.action) == missing_act
            })
            .map(|(i, _)| i)
            .collect();
        if candidates.is_empty() || swaps >= max_swaps {
            return Err(Error::Data(
                "cannot cover every entity and action in the training set".into(),
            ));
        }
        let ti = candidates[rng.random_range(0..candidates.len())];
        let ri = rng.random_range(0..train.len());
        let out = train[ri];
        ent_count[out.agent] -= 1;
        ent_count[out.patient] -= 1;
        act_count[out.action] -= 1;
        let incoming = test[ti];
        ent_count[incoming.agent] += 1;
        ent_count[incoming.patient] += 1;
        act_count[incoming.action] += 1;
        train[ri] = incoming;
        test[ti] = out;
        swaps += 1;
    }
    Ok(Split { train, test })
}

/// Per-utterance draws for a whole dataset, honoring `g.exact_rates`.
fn dataset_draws<R: Rng + ?Sized>(n: usize, g: &GrammarSpec, rng: &mut R) -> Vec<Draws> {
    if !g.exact_rates {
        return (0..n).map(|_| g.sample_draws(rng)).collect();
    }
    // Largest-remainder quotas over the four (order, marking) cells.
    let expected: Vec<f64> = Draws::ALL
        .iter()
        .map(|&d| g.draws_probability(d) * n as f64)
        .collect();
    let mut quota: Vec<usize> = expected.iter().map(|e| e.floor() as usize).collect();
    let mut rest = n - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let ra = expected[a] - expected[a].floor();
        let rb = expected[b] - expected[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        quota[i] += 1;
        rest -= 1;
    }
    let mut draws: Vec<Draws> = Draws::ALL
        .iter()
        .zip(&quota)
        .flat_map(|(&d, &q)| std::iter::repeat_n(d, q))
        .collect();
    draws.shuffle(rng);
    draws
}

/// Samples one fresh utterance per meaning.
pub fn regenerate_epoch_dataset<R: Rng + ?Sized>(
    meanings: &[Meaning],
    g: &GrammarSpec,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Vec<(Meaning, Utterance)> {
    dataset_draws(meanings.len(), g, rng)
        .into_iter()
        .zip(meanings)
        .map(|(d, m)| (*m, realize(m, vocab, d)))
        .collect()
}

/// Strips trailing duplication after a grammatical prefix.
///
/// If some valid utterance for `m` is a prefix of `u` and the remainder only
/// cycles through a suffix of that prefix, the prefix is returned.
pub fn truncate_utterance(
    m: &Meaning,
    u: &Utterance,
    g: &GrammarSpec,
    vocab: &Vocabulary,
) -> Utterance {
    let toks = u.tokens();
    for cand in enumerate_valid_utterances(m, g, vocab) {
        let p = cand.tokens();
        if toks.len() < p.len() || &toks[..p.len()] != p {
            continue;
        }
        let rest = &toks[p.len()..];
        if rest.is_empty() {
            return cand;
        }
        let repeats_suffix = (1..=p.len()).any(|k| {
            let suffix = &p[p.len() - k..];
            rest.iter().enumerate().all(|(i, t)| *t == suffix[i % k])
        });
        if repeats_suffix {
            return cand;
        }
    }
    u.clone()
}

/// Truncates `u` and classifies it against the four canonical forms of `m`.
pub fn classify_utterance(
    m: &Meaning,
    u: &Utterance,
    g: &GrammarSpec,
    vocab: &Vocabulary,
) -> (UtteranceClass, Utterance) {
    let truncated = truncate_utterance(m, u, g, vocab);
    let class = Draws::ALL
        .iter()
        .find(|&&d| realize(m, vocab, d) == truncated)
        .map(|d| d.class())
        .unwrap_or(UtteranceClass::Other);
    (class, truncated)
}

/// Writes `action agent patient<TAB>tokens` lines.
pub fn write_dataset<W: Write>(
    w: &mut W,
    pairs: &[(Meaning, Utterance)],
    vocab: &Vocabulary,
) -> Result<()> {
    for (m, u) in pairs {
        writeln!(
            w,
            "{} {} {}\t{}",
            m.action,
            m.agent,
            m.patient,
            u.render(vocab)
        )?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R, vocab: &Vocabulary) -> Result<Vec<(Meaning, Utterance)>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("line {}: {what}", lineno + 1));
        let (ids, text) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
        let ids: Vec<usize> = ids
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad("bad meaning id")))
            .collect::<Result<_>>()?;
        if ids.len() != 3 {
            return Err(bad("expected three meaning ids"));
        }
        let m = Meaning::new(ids[0], ids[1], ids[2]);
        m.validate(vocab)?;
        out.push((m, Utterance::parse(text, vocab)?));
    }
    Ok(out)
}
