use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, read_header, save_agent, AgentHeader};
use crate::error::{Error, Result};
use crate::grammar::{Meaning, Utterance, Vocabulary};
use crate::nn::{
    cross_entropy_grad, embed, embed_backward, log_softmax_rows, Adam, GruCache, GruCell, Linear,
    Manifest, Matrix, Param, Parameterized,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListenerArch {
    pub embedding: usize,
    pub hidden: usize,
}

impl Default for ListenerArch {
    fn default() -> Self {
        ListenerArch {
            embedding: 32,
            hidden: 32,
        }
    }
}

/// Sequence-to-linear listener: a GRU encoder whose final state feeds three
/// independent linear heads (action, agent, patient).
#[derive(Clone, Debug, PartialEq)]
pub struct Listener {
    pub vocab: Vocabulary,
    pub arch: ListenerArch,
    pub token_emb: Param,
    pub cell: GruCell,
    pub action_head: Linear,
    pub agent_head: Linear,
    pub patient_head: Linear,
}

struct EncodeStep {
    ids: Vec<usize>,
    gru: GruCache,
    active: Vec<bool>,
}

/// Forward activations for a batch of utterances.
pub struct ListenerTrace {
    steps: Vec<EncodeStep>,
    final_hidden: Matrix,
    /// Log-probabilities per head: action, agent, patient.
    pub log_probs: [Matrix; 3],
}

impl ListenerTrace {
    pub fn batch_size(&self) -> usize {
        self.final_hidden.rows
    }

    /// `Σ_e log p(e | u)` over the three slots of each meaning.
    pub fn log_likelihood(&self, meanings: &[Meaning]) -> Vec<f64> {
        meanings
            .iter()
            .enumerate()
            .map(|(r, m)| {
                self.log_probs[0].row(r)[m.action]
                    + self.log_probs[1].row(r)[m.agent]
                    + self.log_probs[2].row(r)[m.patient]
            })
            .collect()
    }

    /// Per-head argmax; ties go to the lowest id. May return agent == patient.
    pub fn predictions(&self) -> Vec<Meaning> {
        (0..self.batch_size())
            .map(|r| Meaning {
                action: argmax(self.log_probs[0].row(r)),
                agent: argmax(self.log_probs[1].row(r)),
                patient: argmax(self.log_probs[2].row(r)),
            })
            .collect()
    }

    /// Probability distributions per head for one row.
    pub fn distributions(&self, row: usize) -> [Vec<f64>; 3] {
        std::array::from_fn(|h| self.log_probs[h].row(row).iter().map(|v| v.exp()).collect())
    }
}

impl Listener {
    pub fn new<R: Rng + ?Sized>(vocab: Vocabulary, arch: ListenerArch, rng: &mut R) -> Self {
        let h = arch.hidden;
        Listener {
            vocab,
            arch,
            token_emb: Param::uniform(&[vocab.n_content(), arch.embedding], 1.0, rng),
            cell: GruCell::init(arch.embedding, h, rng),
            action_head: Linear::init(h, vocab.n_actions, rng),
            agent_head: Linear::init(h, vocab.n_entities, rng),
            patient_head: Linear::init(h, vocab.n_entities, rng),
        }
    }

    pub fn zeros(vocab: Vocabulary, arch: ListenerArch) -> Self {
        let h = arch.hidden;
        Listener {
            vocab,
            arch,
            token_emb: Param::zeros(&[vocab.n_content(), arch.embedding]),
            cell: GruCell::zeros(arch.embedding, h),
            action_head: Linear::zeros(h, vocab.n_actions),
            agent_head: Linear::zeros(h, vocab.n_entities),
            patient_head: Linear::zeros(h, vocab.n_entities),
        }
    }

    /// Number of tokens read from `u`: everything before the first eos.
    fn effective_len(&self, u: &Utterance) -> Result<usize> {
        let eos = self.vocab.eos();
        let n = u.tokens().iter().position(|&t| t == eos).unwrap_or(u.len());
        if let Some(t) = u.tokens()[..n].iter().find(|&&t| !self.vocab.is_content(t)) {
            return Err(Error::Data(format!("listener cannot read token {}", t.0)));
        }
        Ok(n)
    }

    /// Encodes a batch. An utterance with no content tokens keeps the zero
    /// initial state.
    pub fn forward_batch(&self, utterances: &[Utterance]) -> Result<ListenerTrace> {
        let batch = utterances.len();
        let lens: Vec<usize> = utterances
            .iter()
            .map(|u| self.effective_len(u))
            .collect::<Result<_>>()?;
        let max_len = lens.iter().copied().max().unwrap_or(0);
        let mut h = Matrix::zeros(batch, self.arch.hidden);
        let mut steps = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let active: Vec<bool> = lens.iter().map(|&l| t < l).collect();
            let ids: Vec<usize> = utterances
                .iter()
                .zip(&active)
                .map(|(u, &a)| if a { u.tokens()[t].index() } else { 0 })
                .collect();
            let x = embed(&self.token_emb, &ids)?;
            let (cand, gru) = self.cell.forward(&x, &h)?;
            for (r, &a) in active.iter().enumerate() {
                if a {
                    h.row_mut(r).copy_from_slice(cand.row(r));
                }
            }
            steps.push(EncodeStep { ids, gru, active });
        }
        let log_probs = [
            log_softmax_rows(&self.action_head.forward(&h)?),
            log_softmax_rows(&self.agent_head.forward(&h)?),
            log_softmax_rows(&self.patient_head.forward(&h)?),
        ];
        Ok(ListenerTrace {
            steps,
            final_hidden: h,
            log_probs,
        })
    }

    /// Head distributions for a single utterance.
    pub fn forward(&self, u: &Utterance) -> Result<[Vec<f64>; 3]> {
        if self.effective_len(u)? == 0 {
            return Err(Error::Empty("utterance"));
        }
        Ok(self
            .forward_batch(std::slice::from_ref(u))?
            .distributions(0))
    }

    pub fn predict(&self, u: &Utterance) -> Result<Meaning> {
        if self.effective_len(u)? == 0 {
            return Err(Error::Empty("utterance"));
        }
        Ok(self.forward_batch(std::slice::from_ref(u))?.predictions()[0])
    }

    pub fn predict_batch(&self, utterances: &[Utterance]) -> Result<Vec<Meaning>> {
        Ok(self.forward_batch(utterances)?.predictions())
    }

    /// Backpropagates `Σ_r scale[r] · (CE_action + CE_agent + CE_patient)` and
    /// returns that loss.
    pub fn backward(&mut self, trace: &ListenerTrace, meanings: &[Meaning], scale: &[f64]) -> f64 {
        let batch = trace.batch_size();
        assert_eq!(meanings.len(), batch);
        assert_eq!(scale.len(), batch);
        let loss: f64 = trace
            .log_likelihood(meanings)
            .iter()
            .zip(scale)
            .map(|(ll, s)| -ll * s)
            .sum();
        let targets: [Vec<usize>; 3] = [
            meanings.iter().map(|m| m.action).collect(),
            meanings.iter().map(|m| m.agent).collect(),
            meanings.iter().map(|m| m.patient).collect(),
        ];
        let mut dh = Matrix::zeros(batch, self.arch.hidden);
        let heads = [
            &mut self.action_head,
            &mut self.agent_head,
            &mut self.patient_head,
        ];
        for ((head, lp), tg) in heads.into_iter().zip(&trace.log_probs).zip(&targets) {
            let mut probs = lp.clone();
            probs.data.iter_mut().for_each(|v| *v = v.exp());
            let dlogits = cross_entropy_grad(&probs, tg, scale);
            dh.add_assign(&head.backward(&trace.final_hidden, &dlogits));
        }
        for step in trace.steps.iter().rev() {
            let mut dcand = dh.clone();
            for (r, &a) in step.active.iter().enumerate() {
                if !a {
                    dcand.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                }
            }
            let (dx, dprev) = self.cell.backward(&step.gru, &dcand);
            embed_backward(&mut self.token_emb, &step.ids, &dx);
            for (r, &a) in step.active.iter().enumerate() {
                if a {
                    dh.row_mut(r).copy_from_slice(dprev.row(r));
                }
            }
        }
        loss
    }

    pub fn header(&self) -> AgentHeader {
        AgentHeader::new(
            "listener",
            &self.vocab,
            self.arch.embedding,
            self.arch.hidden,
        )
    }

    pub fn save(&self, dir: &Path, optimizer: Option<&Adam>) -> Result<Manifest> {
        save_agent(dir, self, &self.header(), optimizer)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header = read_header(dir, "listener")?;
        let arch = ListenerArch {
            embedding: header.embedding,
            hidden: header.hidden,
        };
        let mut l = Listener::zeros(header.vocabulary()?, arch);
        crate::nn::load_checkpoint(dir, &mut l)?;
        Ok(l)
    }
}

impl Parameterized for Listener {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![
            ("encoder.token_embedding".into(), &self.token_emb),
            ("encoder.gru.w_input".into(), &self.cell.w_input),
            ("encoder.gru.w_hidden".into(), &self.cell.w_hidden),
            ("encoder.gru.bias".into(), &self.cell.bias),
            ("decoder.action.weight".into(), &self.action_head.weight),
            ("decoder.action.bias".into(), &self.action_head.bias),
            ("decoder.agent.weight".into(), &self.agent_head.weight),
            ("decoder.agent.bias".into(), &self.agent_head.bias),
            ("decoder.patient.weight".into(), &self.patient_head.weight),
            ("decoder.patient.bias".into(), &self.patient_head.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.token_emb,
            &mut self.cell.w_input,
            &mut self.cell.w_hidden,
            &mut self.cell.bias,
            &mut self.action_head.weight,
            &mut self.action_head.bias,
            &mut self.agent_head.weight,
            &mut self.agent_head.bias,
            &mut self.patient_head.weight,
            &mut self.patient_head.bias,
        ]
    }
}
