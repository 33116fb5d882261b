//! The full dialog model and its per-dialog forward pass.
//!
//! One [`Graph`] covers one whole dialog: region projection, caption
//! bootstrap and every round in order. Gradients therefore flow from a
//! round's loss back through all earlier state writes unless
//! `truncate_history_grad` is set.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ader::{candidate_loss, score_pooled, AnswerDecoder, CandidateEncoder, DecodedAnswer};
use crate::autograd::{Graph, Var};
use crate::config::ModelConfig;
use crate::data_ingest::vocab::{BOS, EOS};
use crate::data_ingest::{DialogRecord, Vocabulary};
use crate::error::{MdstError, Result};
use crate::history::HistoryFusion;
use crate::params::ParamStore;
use crate::pds::{bootstrap_with_caption, fuse_qa_pair, update_language_states, PdsParams, StateUpdate};
use crate::qgds::{ground_question, GroundedQuestion, QgdsParams};
use crate::state_core::{init_dialogue_state, project_objects, DialogueState, ObjectProjection, VisionStates};
use crate::tensor::Matrix;
use crate::text_encoder::{tokenize, ContextualReps, TextEncoder, TokenSequence, WordEmbedding};

pub struct MdstModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub words: WordEmbedding,
    pub encoder: TextEncoder,
    pub projection: ObjectProjection,
    pub qgds: QgdsParams,
    pub pds: PdsParams,
    pub history: HistoryFusion,
    pub decoder: AnswerDecoder,
    pub candidates: CandidateEncoder,
}

impl MdstModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let words = WordEmbedding::new(&mut store, &mut rng, c.vocab_size, c.d_model);
        let encoder = TextEncoder::new(
            &mut store,
            &mut rng,
            "text_encoder",
            c.d_model,
            c.n_heads,
            c.encoder_layers,
            c.ffn_dim,
            c.max_len,
            c.dropout,
        );
        let projection = ObjectProjection::new(&mut store, &mut rng, c.raw_dim, c.d_model);
        let qgds = QgdsParams::new(&mut store, &mut rng, c.d_model, c.n_slots(), c.dropout);
        let pds = PdsParams::new(&mut store, &mut rng, c.d_model, c.dropout);
        let history = HistoryFusion::new(&mut store, &mut rng, c.d_model, c.dropout);
        let decoder = AnswerDecoder::new(
            &mut store,
            &mut rng,
            c.d_model,
            c.n_heads,
            c.decoder_layers,
            c.ffn_dim,
            c.max_len,
            c.vocab_size,
            c.dropout,
        );
        let candidates = CandidateEncoder::new(
            &mut store,
            &mut rng,
            c.d_model,
            c.n_heads,
            c.candidate_layers,
            c.ffn_dim,
            c.max_len,
            c.dropout,
        );
        Ok(Self {
            config,
            store,
            words,
            encoder,
            projection,
            qgds,
            pds,
            history,
            decoder,
            candidates,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PreparedCandidates {
    pub options: Vec<TokenSequence>,
    pub gt_index: Option<usize>,
    pub relevance: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct PreparedRound {
    pub question: TokenSequence,
    /// Gold answer framed with BOS/EOS.
    pub answer: Option<TokenSequence>,
    pub candidates: Option<PreparedCandidates>,
}

/// A dialog with all text tokenised and its region features attached.
#[derive(Clone, Debug)]
pub struct PreparedDialog {
    pub image_id: String,
    pub features: Matrix,
    pub caption: TokenSequence,
    pub rounds: Vec<PreparedRound>,
}

/// Frames an answer with BOS/EOS; an empty answer becomes `[BOS, EOS]`.
pub fn frame_answer(text: &str, vocab: &Vocabulary, max_content: usize) -> TokenSequence {
    let mut t = tokenize(text, vocab);
    if t.ids.first() != Some(&BOS) {
        t = TokenSequence::from_ids(vec![BOS, EOS], text);
    }
    t.truncated(max_content + 2)
}

pub fn prepare_dialog(
    record: &DialogRecord,
    features: Matrix,
    vocab: &Vocabulary,
    config: &ModelConfig,
    with_candidates: bool,
) -> PreparedDialog {
    let max_len = config.max_len;
    let rounds = record
        .rounds
        .iter()
        .map(|r| PreparedRound {
            question: tokenize(&r.question, vocab).truncated(max_len),
            answer: r
                .answer
                .as_deref()
                .map(|a| frame_answer(a, vocab, config.max_answer_len.min(max_len - 2))),
            candidates: r.candidates.as_ref().filter(|_| with_candidates).map(|c| PreparedCandidates {
                options: c.options.iter().map(|o| tokenize(o, vocab).truncated(max_len)).collect(),
                gt_index: c.gt_index,
                relevance: c.relevance.clone(),
            }),
        })
        .collect();
    PreparedDialog {
        image_id: record.image_id.clone(),
        features,
        caption: tokenize(&record.caption, vocab).truncated(max_len),
        rounds,
    }
}

/// Where the answer fed back into the state comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnswerSource {
    /// Teacher forcing with the gold answer.
    Gold,
    /// The model's own greedy answer.
    Generated,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    pub answers: AnswerSource,
    /// Stop after this many rounds.
    pub rounds: Option<usize>,
    /// Add the candidate cross-entropy for rounds with a gold index.
    pub candidate_loss: bool,
}

impl ForwardOptions {
    pub fn teacher_forced() -> Self {
        Self {
            answers: AnswerSource::Gold,
            rounds: None,
            candidate_loss: false,
        }
    }

    pub fn generate(rounds: usize) -> Self {
        Self {
            answers: AnswerSource::Generated,
            rounds: Some(rounds),
            candidate_loss: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RoundTrace {
    pub question: ContextualReps,
    pub fused: ContextualReps,
    /// Present when state tracking is on.
    pub grounded: Option<GroundedQuestion>,
    /// Gold-answer NLL (teacher-forced rounds with a gold answer).
    pub nll: Option<Var>,
    pub predicted_tokens: usize,
    pub candidate_loss: Option<Var>,
    pub decoded: Option<DecodedAnswer>,
    pub update: Option<StateUpdate>,
    pub state_after: DialogueState,
}

#[derive(Clone, Debug)]
pub struct DialogTrace {
    pub vision: VisionStates,
    pub bootstrap: Option<StateUpdate>,
    /// State after the caption and after each round: `rounds + 1` entries.
    pub states: Vec<DialogueState>,
    pub rounds: Vec<RoundTrace>,
}

impl DialogTrace {
    /// Sum of every per-round loss on the tape.
    pub fn total_loss(&self, g: &mut Graph, generative: bool) -> Option<Var> {
        let mut parts = Vec::new();
        for r in &self.rounds {
            if generative {
                parts.extend(r.nll);
            }
            parts.extend(r.candidate_loss);
        }
        let mut it = parts.into_iter();
        let first = it.next()?;
        Some(it.fold(first, |acc, p| g.add(acc, p).expect("scalar losses")))
    }
}

impl MdstModel {
    fn encode(&self, g: &mut Graph, seq: &TokenSequence) -> Result<ContextualReps> {
        self.encoder.encode(g, &self.words, seq)
    }

    /// Runs one dialog on `g`.
    pub fn forward_dialog(&self, g: &mut Graph, dialog: &PreparedDialog, opts: ForwardOptions) -> Result<DialogTrace> {
        let cfg = &self.config;
        let ab = cfg.ablation;
        let raw = &dialog.features;
        if raw.rows() != cfg.n_objects || raw.cols() != cfg.raw_dim {
            return Err(MdstError::Shape(format!(
                "image {} has {}x{} region features, model expects {}x{}",
                dialog.image_id,
                raw.rows(),
                raw.cols(),
                cfg.n_objects,
                cfg.raw_dim
            )));
        }
        let vision = project_objects(g, &self.projection, raw, ab.use_pseudo_objects)?;
        let mut state = init_dialogue_state(g, vision);
        let caption = self.encode(g, &dialog.caption)?;
        let mut history: Vec<Var> = Vec::new();
        let mut bootstrap = None;
        if ab.use_qgds_pds {
            let (next, up) = bootstrap_with_caption(g, &self.qgds, &self.pds, &state, &caption, ab, cfg.write_keys)?;
            state = self.maybe_truncate(g, next);
            bootstrap = Some(up);
        } else {
            history.push(caption.reps);
        }
        let mut states = vec![state];
        let mut rounds = Vec::new();
        let limit = opts.rounds.unwrap_or(dialog.rounds.len());
        if limit > dialog.rounds.len() {
            return Err(MdstError::Contract(format!(
                "dialog {} has {} rounds, {limit} requested",
                dialog.image_id,
                dialog.rounds.len()
            )));
        }
        let mut cand_cache: HashMap<&[usize], Var> = HashMap::new();
        for round in &dialog.rounds[..limit] {
            let q = self.encode(g, &round.question)?;
            let (fused_var, grounded) = if ab.use_qgds_pds {
                let gq = ground_question(g, &self.qgds, &q, &state, ab)?;
                (gq.fused, Some(gq))
            } else {
                let h = g.concat_rows(&history)?;
                (self.history.fuse(g, &q, vision.rows, h)?, None)
            };
            let fused = ContextualReps {
                reps: fused_var,
                mask: q.mask.clone(),
            };

            let mut nll = None;
            let mut predicted_tokens = 0;
            let mut decoded = None;
            let (answer_reps, answer_ids) = match opts.answers {
                AnswerSource::Gold => match &round.answer {
                    Some(gold) => {
                        let fwd = self.decoder.answer_nll(g, &self.words, &fused, gold)?;
                        nll = Some(fwd.nll);
                        predicted_tokens = fwd.predicted;
                        (Some(fwd.reps), gold.content().to_vec())
                    }
                    None => (None, Vec::new()),
                },
                AnswerSource::Generated => {
                    let out = self.decoder.decode_answer(g, &self.words, &fused, cfg.max_answer_len)?;
                    let ids = out.ids.clone();
                    let reps = out.reps.clone();
                    decoded = Some(out);
                    (Some(reps), ids)
                }
            };

            let mut cand_loss = None;
            if opts.candidate_loss {
                if let Some(c) = &round.candidates {
                    if let Some(gt) = c.gt_index {
                        let mut rows = Vec::with_capacity(c.options.len());
                        for opt in &c.options {
                            let v = match cand_cache.get(opt.ids.as_slice()) {
                                Some(&v) => v,
                                None => {
                                    let v = self.candidates.pooled(g, &self.words, opt, cfg.pooling)?;
                                    cand_cache.insert(opt.ids.as_slice(), v);
                                    v
                                }
                            };
                            rows.push(v);
                        }
                        let stacked = g.concat_rows(&rows)?;
                        let scores = score_pooled(g, &fused, stacked, cfg.pooling)?;
                        cand_loss = Some(candidate_loss(g, scores, gt)?);
                    }
                }
            }

            let mut update = None;
            if let Some(a) = &answer_reps {
                if let Some(gq) = &grounded {
                    let fusion = fuse_qa_pair(g, &self.pds, &q, gq.dq_l, a)?;
                    let (next, up) =
                        update_language_states(g, &self.pds, fusion.h, &q.mask, gq.dq_l, &state, cfg.write_keys)?;
                    state = self.maybe_truncate(g, next);
                    update = Some(up);
                } else {
                    let qa = qa_sequence(&round.question, &answer_ids, cfg.max_len);
                    let enc = self.encode(g, &qa)?;
                    let rows = if cfg.truncate_history_grad { g.detach(enc.reps) } else { enc.reps };
                    history.push(rows);
                    state.language.round += 1;
                }
            }
            states.push(state);
            rounds.push(RoundTrace {
                question: q,
                fused,
                grounded,
                nll,
                predicted_tokens,
                candidate_loss: cand_loss,
                decoded,
                update,
                state_after: state,
            });
            if answer_reps.is_none() {
                break;
            }
        }
        Ok(DialogTrace {
            vision,
            bootstrap,
            states,
            rounds,
        })
    }

    fn maybe_truncate(&self, g: &mut Graph, mut state: DialogueState) -> DialogueState {
        if self.config.truncate_history_grad {
            state.language.rows = g.detach(state.language.rows);
        }
        state
    }
}

/// `[BOS, question words, answer words, EOS]` for the raw-history encoder.
fn qa_sequence(question: &TokenSequence, answer: &[usize], max_len: usize) -> TokenSequence {
    let mut ids = vec![BOS];
    ids.extend_from_slice(question.content());
    ids.extend_from_slice(answer);
    ids.push(EOS);
    TokenSequence::from_ids(ids, "").truncated(max_len)
}
