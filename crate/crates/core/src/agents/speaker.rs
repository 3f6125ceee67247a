use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{argmax, read_header, save_agent, AgentHeader};
use crate::error::{Error, Result};
use crate::grammar::{Meaning, Token, Utterance, Vocabulary};
use crate::nn::{
    cross_entropy_grad, embed, embed_backward, log_softmax_rows, Adam, GruCache, GruCell, Linear,
    Manifest, Matrix, Param, Parameterized,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerArch {
    pub embedding: usize,
    pub hidden: usize,
}

impl Default for SpeakerArch {
    fn default() -> Self {
        SpeakerArch {
            embedding: 8,
            hidden: 128,
        }
    }
}

/// Linear-to-sequence speaker.
///
/// The three meaning slots are embedded separately, concatenated in the fixed
/// order (action, agent, patient) and projected to the decoder's initial
/// hidden state. The decoder is a GRU fed with the previous token (bos first)
/// and a softmax over content tokens plus eos.
#[derive(Clone, Debug, PartialEq)]
pub struct Speaker {
    pub vocab: Vocabulary,
    pub arch: SpeakerArch,
    pub action_emb: Param,
    pub agent_emb: Param,
    pub patient_emb: Param,
    pub meaning_proj: Linear,
    /// Rows for every content token plus one for bos.
    pub token_emb: Param,
    pub cell: GruCell,
    /// Hidden state to content tokens plus eos.
    pub output: Linear,
}

pub enum DecodeMode<'a> {
    /// Feed the gold utterances; targets are their tokens followed by eos.
    TeacherForced(&'a [Utterance]),
    Greedy,
    Sample(&'a mut dyn RngCore),
}

struct DecodeStep {
    input_rows: Vec<usize>,
    gru: GruCache,
    hidden: Matrix,
    probs: Matrix,
    targets: Vec<usize>,
    active: Vec<bool>,
}

/// Everything a decoding pass produced, including what backward needs.
pub struct DecodeTrace {
    enc_input: Matrix,
    meanings: Vec<Meaning>,
    steps: Vec<DecodeStep>,
    /// Emitted or forced tokens per row, eos included when produced.
    pub tokens: Vec<Vec<Token>>,
    /// Log-probability of each entry of `tokens`.
    pub log_probs: Vec<Vec<f64>>,
}

impl DecodeTrace {
    pub fn batch_size(&self) -> usize {
        self.tokens.len()
    }

    /// Content tokens of each row, eos stripped.
    pub fn utterances(&self, vocab: &Vocabulary) -> Vec<Utterance> {
        self.tokens
            .iter()
            .map(|ts| Utterance(ts.iter().copied().filter(|&t| t != vocab.eos()).collect()))
            .collect()
    }

    /// Summed log-probability per row.
    pub fn sequence_log_probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.iter().sum()).collect()
    }
}

/// Single-meaning decoding result.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub utterance: Utterance,
    pub tokens: Vec<Token>,
    pub log_probs: Vec<f64>,
}

impl Speaker {
    pub fn new<R: Rng + ?Sized>(vocab: Vocabulary, arch: SpeakerArch, rng: &mut R) -> Self {
        let (e, h) = (arch.embedding, arch.hidden);
        Speaker {
            vocab,
            arch,
            action_emb: Param::uniform(&[vocab.n_actions, e], 1.0, rng),
            agent_emb: Param::uniform(&[vocab.n_entities, e], 1.0, rng),
            patient_emb: Param::uniform(&[vocab.n_entities, e], 1.0, rng),
            meaning_proj: Linear::init(3 * e, h, rng),
            token_emb: Param::uniform(&[vocab.n_content() + 1, e], 1.0, rng),
            cell: GruCell::init(e, h, rng),
            output: Linear::init(h, vocab.n_content() + 1, rng),
        }
    }

    /// All-zero parameters.
    pub fn zeros(vocab: Vocabulary, arch: SpeakerArch) -> Self {
        let (e, h) = (arch.embedding, arch.hidden);
        Speaker {
            vocab,
            arch,
            action_emb: Param::zeros(&[vocab.n_actions, e]),
            agent_emb: Param::zeros(&[vocab.n_entities, e]),
            patient_emb: Param::zeros(&[vocab.n_entities, e]),
            meaning_proj: Linear::zeros(3 * e, h),
            token_emb: Param::zeros(&[vocab.n_content() + 1, e]),
            cell: GruCell::zeros(e, h),
            output: Linear::zeros(h, vocab.n_content() + 1),
        }
    }

    fn input_row(&self, t: Token) -> usize {
        if t == self.vocab.bos() {
            self.vocab.n_content()
        } else {
            t.index()
        }
    }

    fn encoder_input(&self, meanings: &[Meaning]) -> Result<Matrix> {
        for m in meanings {
            m.validate(&self.vocab)?;
        }
        let a: Vec<usize> = meanings.iter().map(|m| m.action).collect();
        let ag: Vec<usize> = meanings.iter().map(|m| m.agent).collect();
        let p: Vec<usize> = meanings.iter().map(|m| m.patient).collect();
        Matrix::hcat(&[
            &embed(&self.action_emb, &a)?,
            &embed(&self.agent_emb, &ag)?,
            &embed(&self.patient_emb, &p)?,
        ])
    }

    /// Meaning representations (decoder initial states), one row per meaning.
    pub fn encode(&self, meanings: &[Meaning]) -> Result<Matrix> {
        self.meaning_proj.forward(&self.encoder_input(meanings)?)
    }

    /// Runs the decoder over a batch; at most `max_len` steps per row.
    pub fn decode(
        &self,
        meanings: &[Meaning],
        mut mode: DecodeMode<'_>,
        max_len: usize,
    ) -> Result<DecodeTrace> {
        let batch = meanings.len();
        let eos = self.vocab.eos();
        if let DecodeMode::TeacherForced(gold) = &mode {
            if gold.len() != batch {
                return Err(Error::Shape(format!(
                    "{} gold utterances for {batch} meanings",
                    gold.len()
                )));
            }
            for u in gold.iter() {
                if let Some(t) = u.tokens().iter().find(|&&t| !self.vocab.is_content(t)) {
                    return Err(Error::Data(format!("non-content gold token {}", t.0)));
                }
            }
        }
        let enc_input = self.encoder_input(meanings)?;
        let mut h = self.meaning_proj.forward(&enc_input)?;

        let n_steps = match &mode {
            DecodeMode::TeacherForced(gold) => gold.iter().map(|u| u.len() + 1).max().unwrap_or(0),
            _ => max_len,
        };
        let mut tokens: Vec<Vec<Token>> = vec![Vec::new(); batch];
        let mut log_probs: Vec<Vec<f64>> = vec![Vec::new(); batch];
        let mut done = vec![false; batch];
        let mut prev: Vec<Token> = vec![self.vocab.bos(); batch];
        let mut steps = Vec::with_capacity(n_steps);

        for t in 0..n_steps {
            if done.iter().all(|&d| d) {
                break;
            }
            let input_rows: Vec<usize> = prev.iter().map(|&p| self.input_row(p)).collect();
            let x = embed(&self.token_emb, &input_rows)?;
            let (h_next, gru) = self.cell.forward(&x, &h)?;
            let logits = self.output.forward(&h_next)?;
            let active: Vec<bool> = done.iter().map(|d| !d).collect();
            let mut probs = log_softmax_rows(&logits);
            let targets: Vec<usize> = match &mut mode {
                DecodeMode::TeacherForced(gold) => gold
                    .iter()
                    .map(|u| u.tokens().get(t).copied().unwrap_or(eos).index())
                    .collect(),
                DecodeMode::Greedy => (0..batch).map(|r| argmax(probs.row(r))).collect(),
                DecodeMode::Sample(rng) => (0..batch)
                    .map(|r| sample_categorical(probs.row(r), &mut **rng))
                    .collect(),
            };
            let ce: Vec<f64> = targets
                .iter()
                .enumerate()
                .map(|(r, &t)| -probs.row(r)[t])
                .collect();
            probs.data.iter_mut().for_each(|v| *v = v.exp());
            for r in 0..batch {
                if done[r] {
                    continue;
                }
                let tok = Token(targets[r] as u16);
                tokens[r].push(tok);
                log_probs[r].push(-ce[r]);
                prev[r] = tok;
                if tok == eos {
                    done[r] = true;
                }
            }
            if !matches!(mode, DecodeMode::TeacherForced(_)) && t + 1 == max_len {
                done.iter_mut().for_each(|d| *d = true);
            }
            steps.push(DecodeStep {
                input_rows,
                gru,
                hidden: h_next.clone(),
                probs,
                targets,
                active,
            });
            h = h_next;
        }
        Ok(DecodeTrace {
            enc_input,
            meanings: meanings.to_vec(),
            steps,
            tokens,
            log_probs,
        })
    }

    /// Backpropagates `Σ_r scale[r] · Σ_t -log p(token_t)` through a trace and
    /// returns that loss.
    pub fn backward(&mut self, trace: &DecodeTrace, scale: &[f64]) -> f64 {
        let batch = trace.batch_size();
        assert_eq!(scale.len(), batch);
        let loss: f64 = trace
            .log_probs
            .iter()
            .zip(scale)
            .map(|(lp, s)| -s * lp.iter().sum::<f64>())
            .sum();
        let mut dh = Matrix::zeros(batch, self.arch.hidden);
        for step in trace.steps.iter().rev() {
            let row_scale: Vec<f64> = step
                .active
                .iter()
                .zip(scale)
                .map(|(&a, &s)| if a { s } else { 0.0 })
                .collect();
            let dlogits = cross_entropy_grad(&step.probs, &step.targets, &row_scale);
            dh.add_assign(&self.output.backward(&step.hidden, &dlogits));
            let (dx, dh_prev) = self.cell.backward(&step.gru, &dh);
            embed_backward(&mut self.token_emb, &step.input_rows, &dx);
            dh = dh_prev;
        }
        let denc = self.meaning_proj.backward(&trace.enc_input, &dh);
        let e = self.arch.embedding;
        let parts = denc.hsplit(&[e, e, e]);
        let ms = &trace.meanings;
        embed_backward(
            &mut self.action_emb,
            &ms.iter().map(|m| m.action).collect::<Vec<_>>(),
            &parts[0],
        );
        embed_backward(
            &mut self.agent_emb,
            &ms.iter().map(|m| m.agent).collect::<Vec<_>>(),
            &parts[1],
        );
        embed_backward(
            &mut self.patient_emb,
            &ms.iter().map(|m| m.patient).collect::<Vec<_>>(),
            &parts[2],
        );
        loss
    }

    /// Teacher-forced cross-entropy (summed over tokens) for each pair.
    pub fn teacher_forced_loss(
        &self,
        meanings: &[Meaning],
        gold: &[Utterance],
    ) -> Result<Vec<f64>> {
        let trace = self.decode(meanings, DecodeMode::TeacherForced(gold), 0)?;
        Ok(trace.sequence_log_probs().iter().map(|l| -l).collect())
    }

    /// Decodes one meaning.
    pub fn generate(
        &self,
        m: &Meaning,
        mode: DecodeMode<'_>,
        max_len: usize,
    ) -> Result<Generation> {
        let trace = self.decode(std::slice::from_ref(m), mode, max_len)?;
        let utterance = trace.utterances(&self.vocab).remove(0);
        let DecodeTrace {
            mut tokens,
            mut log_probs,
            ..
        } = trace;
        Ok(Generation {
            utterance,
            tokens: tokens.remove(0),
            log_probs: log_probs.remove(0),
        })
    }

    /// Greedy utterances for a batch of meanings.
    pub fn greedy(&self, meanings: &[Meaning], max_len: usize) -> Result<Vec<Utterance>> {
        Ok(self
            .decode(meanings, DecodeMode::Greedy, max_len)?
            .utterances(&self.vocab))
    }

    pub fn header(&self) -> AgentHeader {
        AgentHeader::new(
            "speaker",
            &self.vocab,
            self.arch.embedding,
            self.arch.hidden,
        )
    }

    pub fn save(&self, dir: &Path, optimizer: Option<&Adam>) -> Result<Manifest> {
        save_agent(dir, self, &self.header(), optimizer)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header = read_header(dir, "speaker")?;
        let arch = SpeakerArch {
            embedding: header.embedding,
            hidden: header.hidden,
        };
        let mut s = Speaker::zeros(header.vocabulary()?, arch);
        crate::nn::load_checkpoint(dir, &mut s)?;
        Ok(s)
    }
}

/// Draws an index from a row of log-probabilities.
fn sample_categorical(log_probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum; take the last possible entry
    log_probs
        .iter()
        .rposition(|&lp| lp > f64::NEG_INFINITY)
        .unwrap_or(log_probs.len() - 1)
}

impl Parameterized for Speaker {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![
            ("encoder.action_embedding".into(), &self.action_emb),
            ("encoder.agent_embedding".into(), &self.agent_emb),
            ("encoder.patient_embedding".into(), &self.patient_emb),
            (
                "encoder.projection.weight".into(),
                &self.meaning_proj.weight,
            ),
            ("encoder.projection.bias".into(), &self.meaning_proj.bias),
            ("decoder.token_embedding".into(), &self.token_emb),
            ("decoder.gru.w_input".into(), &self.cell.w_input),
            ("decoder.gru.w_hidden".into(), &self.cell.w_hidden),
            ("decoder.gru.bias".into(), &self.cell.bias),
            ("decoder.output.weight".into(), &self.output.weight),
            ("decoder.output.bias".into(), &self.output.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.action_emb,
            &mut self.agent_emb,
            &mut self.patient_emb,
            &mut self.meaning_proj.weight,
            &mut self.meaning_proj.bias,
            &mut self.token_emb,
            &mut self.cell.w_input,
            &mut self.cell.w_hidden,
            &mut self.cell.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }
}
