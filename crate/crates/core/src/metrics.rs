//! Accuracies, production statistics, effort and role-assignment uncertainty.

use serde::{Deserialize, Serialize};

use crate::agents::{Listener, Speaker};
use crate::error::{Error, Result};
use crate::grammar::{
    classify_utterance, enumerate_valid_utterances, GrammarSpec, Meaning, Utterance,
    UtteranceClass, Vocabulary,
};

/// One classified speaker production.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductionRecord {
    pub meaning: Meaning,
    /// The utterance after truncation.
    pub utterance: Utterance,
    pub class: UtteranceClass,
    /// Content words in the truncated utterance.
    pub length: usize,
}

impl ProductionRecord {
    pub fn new(m: &Meaning, raw: &Utterance, g: &GrammarSpec, vocab: &Vocabulary) -> Self {
        let (class, utterance) = classify_utterance(m, raw, g, vocab);
        ProductionRecord {
            meaning: *m,
            length: utterance.len(),
            utterance,
            class,
        }
    }
}

pub fn production_records(
    meanings: &[Meaning],
    utterances: &[Utterance],
    g: &GrammarSpec,
    vocab: &Vocabulary,
) -> Vec<ProductionRecord> {
    meanings
        .iter()
        .zip(utterances)
        .map(|(m, u)| ProductionRecord::new(m, u, g, vocab))
        .collect()
}

/// Counts per `UtteranceClass`, indexed by `UtteranceClass::index`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(pub [usize; 5]);

impl ClassCounts {
    pub fn from_records(records: &[ProductionRecord]) -> Self {
        let mut c = [0; 5];
        for r in records {
            c[r.class.index()] += 1;
        }
        ClassCounts(c)
    }

    pub fn get(&self, class: UtteranceClass) -> usize {
        self.0[class.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub sov: f64,
    pub osv: f64,
    pub with_mk: f64,
    pub no_mk: f64,
    pub other: f64,
}

impl Proportions {
    pub fn from_counts(c: &ClassCounts) -> Result<Self> {
        use UtteranceClass::*;
        let total = c.total();
        if total == 0 {
            return Err(Error::Empty("production records"));
        }
        let t = total as f64;
        Ok(Proportions {
            sov: (c.get(SovMk) + c.get(SovNoMk)) as f64 / t,
            osv: (c.get(OsvMk) + c.get(OsvNoMk)) as f64 / t,
            with_mk: (c.get(SovMk) + c.get(OsvMk)) as f64 / t,
            no_mk: (c.get(SovNoMk) + c.get(OsvNoMk)) as f64 / t,
            other: c.get(Other) as f64 / t,
        })
    }
}

/// Class shares over all records, OTHER included in the total.
pub fn production_proportions(records: &[ProductionRecord]) -> Result<Proportions> {
    Proportions::from_counts(&ClassCounts::from_records(records))
}

/// Marking rate within each order; `None` when that order never occurs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMarking {
    pub sov: Option<f64>,
    pub osv: Option<f64>,
}

impl ConditionalMarking {
    pub fn from_counts(c: &ClassCounts) -> Self {
        use UtteranceClass::*;
        let rate = |mk: usize, no: usize| (mk + no > 0).then(|| mk as f64 / (mk + no) as f64);
        ConditionalMarking {
            sov: rate(c.get(SovMk), c.get(SovNoMk)),
            osv: rate(c.get(OsvMk), c.get(OsvNoMk)),
        }
    }
}

pub fn conditional_marking(records: &[ProductionRecord]) -> ConditionalMarking {
    ConditionalMarking::from_counts(&ClassCounts::from_records(records))
}

/// Mean number of content words per (truncated) production.
pub fn production_effort(records: &[ProductionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("production records"));
    }
    Ok(records.iter().map(|r| r.length as f64).sum::<f64>() / records.len() as f64)
}

/// Surface shape of a classifiable utterance, ignoring which noun is which.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SurfaceForm {
    /// `N N V`
    Bare,
    /// `N mk N V`: marker on the first noun
    FirstMarked,
    /// `N N mk V`: marker on the second noun
    SecondMarked,
}

impl SurfaceForm {
    pub const ALL: [SurfaceForm; 3] = [
        SurfaceForm::Bare,
        SurfaceForm::FirstMarked,
        SurfaceForm::SecondMarked,
    ];
}

/// Role assignment of the first noun.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FirstNounRole {
    Agent,
    Patient,
}

/// Surface form and role assignment of a class; `None` for OTHER.
pub fn form_and_role(class: UtteranceClass) -> Option<(SurfaceForm, FirstNounRole)> {
    use UtteranceClass::*;
    match class {
        SovNoMk => Some((SurfaceForm::Bare, FirstNounRole::Agent)),
        SovMk => Some((SurfaceForm::SecondMarked, FirstNounRole::Agent)),
        OsvNoMk => Some((SurfaceForm::Bare, FirstNounRole::Patient)),
        OsvMk => Some((SurfaceForm::FirstMarked, FirstNounRole::Patient)),
        Other => None,
    }
}

/// Conditional entropy (bits) of the role assignment given the surface form,
/// estimated from class counts. OTHER is excluded.
pub fn uncertainty_from_counts(c: &ClassCounts) -> Result<f64> {
    let mut joint = [[0usize; 2]; 3];
    for class in UtteranceClass::ALL {
        if let Some((form, role)) = form_and_role(class) {
            joint[form as usize][role as usize] += c.get(class);
        }
    }
    let total: usize = joint.iter().flatten().sum();
    if total == 0 {
        return Err(Error::Empty("classifiable productions"));
    }
    let mut h = 0.0;
    for row in &joint {
        let n_form: usize = row.iter().sum();
        if n_form == 0 {
            continue;
        }
        let within: f64 = row
            .iter()
            .filter(|&&n| n > 0)
            .map(|&n| {
                let p = n as f64 / n_form as f64;
                -p * p.log2()
            })
            .sum();
        h += n_form as f64 / total as f64 * within;
    }
    Ok(h)
}

pub fn uncertainty(records: &[ProductionRecord]) -> Result<f64> {
    uncertainty_from_counts(&ClassCounts::from_records(records))
}

/// A point on the uncertainty/effort plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEffortPoint {
    pub h: f64,
    pub e: f64,
}

impl UncertaintyEffortPoint {
    pub fn from_records(records: &[ProductionRecord]) -> Result<Self> {
        Ok(UncertaintyEffortPoint {
            h: uncertainty(records)?,
            e: production_effort(records)?,
        })
    }

    /// Expected value under the grammar's own production probabilities.
    pub fn of_grammar(g: &GrammarSpec) -> Self {
        let h2 = |p: f64| {
            [p, 1.0 - p]
                .iter()
                .filter(|&&q| q > 0.0)
                .map(|&q| -q * q.log2())
                .sum::<f64>()
        };
        UncertaintyEffortPoint {
            h: (1.0 - g.p_mark) * h2(g.p_sov),
            e: 3.0 + g.p_mark,
        }
    }
}

/// All-or-nothing match rate between predicted and intended meanings.
pub fn meaning_accuracy(predicted: &[Meaning], intended: &[Meaning]) -> Result<f64> {
    if intended.is_empty() {
        return Err(Error::Empty("meanings"));
    }
    if predicted.len() != intended.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} meanings",
            predicted.len(),
            intended.len()
        )));
    }
    let hits = predicted
        .iter()
        .zip(intended)
        .filter(|(p, m)| p == m)
        .count();
    Ok(hits as f64 / intended.len() as f64)
}

/// Share of outputs identical to their gold utterance.
pub fn exact_match_rate(outputs: &[Utterance], gold: &[Utterance]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Empty("utterances"));
    }
    let hits = outputs.iter().zip(gold).filter(|(o, g)| o == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Share of outputs that, once truncated, are a grammar-valid utterance for their meaning.
pub fn permissive_match_rate(
    meanings: &[Meaning],
    outputs: &[Utterance],
    g: &GrammarSpec,
    vocab: &Vocabulary,
) -> Result<f64> {
    if meanings.is_empty() {
        return Err(Error::Empty("meanings"));
    }
    let hits = meanings
        .iter()
        .zip(outputs)
        .filter(|(m, u)| {
            let truncated = crate::grammar::truncate_utterance(m, u, g, vocab);
            enumerate_valid_utterances(m, g, vocab).contains(&truncated)
        })
        .count();
    Ok(hits as f64 / meanings.len() as f64)
}

pub fn listening_accuracy(listener: &Listener, pairs: &[(Meaning, Utterance)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let (ms, us): (Vec<Meaning>, Vec<Utterance>) = pairs.iter().cloned().unzip();
    meaning_accuracy(&listener.predict_batch(&us)?, &ms)
}

pub fn speaking_accuracy(
    speaker: &Speaker,
    pairs: &[(Meaning, Utterance)],
    max_len: usize,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let (ms, gold): (Vec<Meaning>, Vec<Utterance>) = pairs.iter().cloned().unzip();
    exact_match_rate(&speaker.greedy(&ms, max_len)?, &gold)
}

pub fn permissive_speaking_accuracy(
    speaker: &Speaker,
    meanings: &[Meaning],
    g: &GrammarSpec,
    max_len: usize,
) -> Result<f64> {
    if meanings.is_empty() {
        return Err(Error::Empty("meanings"));
    }
    permissive_match_rate(
        meanings,
        &speaker.greedy(meanings, max_len)?,
        g,
        &speaker.vocab,
    )
}

/// Greedy speaker into greedy listener, scored all-or-nothing.
pub fn reconstruction_accuracy(
    speaker: &Speaker,
    listener: &Listener,
    meanings: &[Meaning],
    max_len: usize,
) -> Result<f64> {
    if meanings.is_empty() {
        return Err(Error::Empty("meanings"));
    }
    let utterances = speaker.greedy(meanings, max_len)?;
    meaning_accuracy(&listener.predict_batch(&utterances)?, meanings)
}
