//! Ranking evaluation, dialog generation and state inspection.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ader::{dot_scores, pool, ranking, CandidateScores};
use crate::autograd::Graph;
use crate::data_ingest::Vocabulary;
use crate::error::{MdstError, Result};
use crate::model::{AnswerSource, ForwardOptions, MdstModel, PreparedDialog};
use crate::tensor::Matrix;
use crate::text_encoder::TokenSequence;

use super::metrics::{compute_ndcg, MetricsReport, RankingAccumulator};

/// Pooled candidate encodings keyed by token ids, computed once per evaluation.
#[derive(Clone, Debug, Default)]
pub struct CandidateCache {
    pooled: HashMap<Vec<usize>, Vec<f64>>,
}

impl CandidateCache {
    pub fn build(model: &MdstModel, dialogs: &[PreparedDialog]) -> Result<Self> {
        let mut unique: Vec<&TokenSequence> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for d in dialogs {
            for r in &d.rounds {
                if let Some(c) = &r.candidates {
                    for o in &c.options {
                        if seen.insert(o.ids.as_slice()) {
                            unique.push(o);
                        }
                    }
                }
            }
        }
        let encoded = unique
            .par_iter()
            .map(|seq| {
                let mut g = Graph::new(&model.store);
                let v = model.candidates.pooled(&mut g, &model.words, seq, model.config.pooling)?;
                Ok((seq.ids.clone(), g.value(v).row(0).to_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pooled: encoded.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pooled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.is_empty()
    }

    pub fn matrix(&self, options: &[TokenSequence]) -> Result<Matrix> {
        let rows = options
            .iter()
            .map(|o| {
                self.pooled
                    .get(&o.ids)
                    .cloned()
                    .ok_or_else(|| MdstError::Contract(format!("candidate {:?} was not cached", o.text)))
            })
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)
    }
}

/// Scores every round that carries candidates, with gold answers as history.
pub fn score_dialog(model: &MdstModel, dialog: &PreparedDialog, cache: &CandidateCache) -> Result<Vec<Option<CandidateScores>>> {
    let mut g = Graph::new(&model.store);
    let trace = model.forward_dialog(&mut g, dialog, ForwardOptions::teacher_forced())?;
    let mut out = Vec::with_capacity(trace.rounds.len());
    for (rt, round) in trace.rounds.iter().zip(&dialog.rounds) {
        let Some(c) = &round.candidates else {
            out.push(None);
            continue;
        };
        let query = pool(&mut g, &rt.fused, model.config.pooling)?;
        let scores = dot_scores(g.value(query).row(0), &cache.matrix(&c.options)?);
        out.push(Some(CandidateScores::new(scores, c.gt_index)));
    }
    Ok(out)
}

/// MRR, R@k and Mean over rounds with a gold index; NDCG over rounds with
/// dense relevance. Rounds lacking candidates are counted as skipped.
pub fn evaluate_ranking(model: &MdstModel, dialogs: &[PreparedDialog]) -> Result<MetricsReport> {
    if !dialogs
        .iter()
        .flat_map(|d| &d.rounds)
        .any(|r| r.candidates.as_ref().is_some_and(|c| c.gt_index.is_some() || c.relevance.is_some()))
    {
        return Err(MdstError::Contract("corpus has no candidate lists to rank".into()));
    }
    let cache = CandidateCache::build(model, dialogs)?;
    let parts = dialogs
        .par_iter()
        .map(|d| {
            let scored = score_dialog(model, d, &cache)?;
            let mut acc = RankingAccumulator::default();
            for (s, round) in scored.iter().zip(&d.rounds) {
                let (Some(s), Some(c)) = (s, &round.candidates) else {
                    acc.skipped += 1;
                    continue;
                };
                match s.gt_rank {
                    Some(r) => acc.ranks.push(r),
                    None if c.relevance.is_none() => acc.skipped += 1,
                    None => {}
                }
                if let Some(rel) = &c.relevance {
                    if let Some(n) = compute_ndcg(&ranking(&s.scores), rel) {
                        acc.ndcgs.push(n);
                    }
                }
            }
            acc.skipped += d.rounds.len() - scored.len();
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = RankingAccumulator::default();
    for p in parts {
        total.merge(p);
    }
    Ok(total.report())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRound {
    pub round: usize,
    pub question: String,
    pub answer: String,
    pub gt_answer: Option<String>,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDialog {
    pub image_id: String,
    pub rounds: Vec<GeneratedRound>,
    /// Frobenius norm of the language states after the caption and each round.
    pub state_norms: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonLine {
    image_id: String,
    round: usize,
    question: String,
    answer: String,
    gt_answer: Option<String>,
}

impl GeneratedDialog {
    pub fn jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rounds {
            let line = JsonLine {
                image_id: self.image_id.clone(),
                round: r.round,
                question: r.question.clone(),
                answer: r.answer.clone(),
                gt_answer: r.gt_answer.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("line serialises"));
            out.push('\n');
        }
        out
    }
}

/// Reads JSON lines written by [`write_generated`] back into dialogs.
pub fn read_generated(path: &Path) -> Result<Vec<GeneratedDialog>> {
    let text = std::fs::read_to_string(path).map_err(|e| MdstError::io(path, e))?;
    let mut out: Vec<GeneratedDialog> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: JsonLine = serde_json::from_str(line).map_err(|e| MdstError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        let round = GeneratedRound {
            round: row.round,
            question: row.question,
            answer: row.answer,
            gt_answer: row.gt_answer,
            truncated: false,
        };
        match out.last_mut() {
            Some(d) if d.image_id == row.image_id => d.rounds.push(round),
            _ => out.push(GeneratedDialog {
                image_id: row.image_id,
                rounds: vec![round],
                state_norms: Vec::new(),
            }),
        }
    }
    Ok(out)
}

pub fn write_generated(path: &Path, dialogs: &[GeneratedDialog]) -> Result<()> {
    let text: String = dialogs.iter().map(GeneratedDialog::jsonl).collect();
    std::fs::write(path, text).map_err(|e| MdstError::io(path, e))
}

/// Caption bootstrap, then per round: ground, decode greedily, write the
/// generated answer back into the state.
pub fn generate_dialog(model: &MdstModel, vocab: &Vocabulary, dialog: &PreparedDialog, rounds: usize) -> Result<GeneratedDialog> {
    let mut g = Graph::new(&model.store);
    let trace = model.forward_dialog(&mut g, dialog, ForwardOptions::generate(rounds))?;
    let out_rounds = trace
        .rounds
        .iter()
        .zip(&dialog.rounds)
        .enumerate()
        .map(|(t, (rt, round))| {
            let decoded = rt.decoded.as_ref().expect("generation decodes every round");
            GeneratedRound {
                round: t + 1,
                question: round.question.text.clone(),
                answer: vocab.detokenize(&decoded.ids),
                gt_answer: round.answer.as_ref().map(|a| a.text.clone()),
                truncated: decoded.truncated,
            }
        })
        .collect();
    let state_norms = trace
        .states
        .iter()
        .map(|s| g.value(s.language.rows).sq_norm().sqrt())
        .collect();
    Ok(GeneratedDialog {
        image_id: dialog.image_id.clone(),
        rounds: out_rounds,
        state_norms,
    })
}

pub fn generate_dialogues(
    model: &MdstModel,
    vocab: &Vocabulary,
    dialogs: &[PreparedDialog],
    rounds: usize,
) -> Result<Vec<GeneratedDialog>> {
    if !model.config.generative {
        return Err(MdstError::Contract("model was built without a generative head".into()));
    }
    dialogs.par_iter().map(|d| generate_dialog(model, vocab, d, rounds)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenAssignment {
    pub token: String,
    pub slot: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectedRound {
    /// 0 for the caption.
    pub round: usize,
    pub text: String,
    /// Argmax slot of each token's assignment row.
    pub assignments: Vec<TokenAssignment>,
    /// Slots ordered by total assignment mass, at most `top_k`.
    pub top_slots: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateInspection {
    pub image_id: String,
    pub slots: Vec<String>,
    pub rounds: Vec<InspectedRound>,
    /// Language states after the caption and after each round.
    #[serde(skip)]
    pub states: Vec<Matrix>,
    pub vision_digest: String,
}

pub fn slot_labels(n_objects: usize, pseudo: bool) -> Vec<String> {
    let mut out: Vec<String> = (0..n_objects).map(|i| format!("object{i}")).collect();
    if pseudo {
        out.push("NULL".into());
        out.push("ALL".into());
    }
    out
}

/// Per round, where the write distribution put each token.
pub fn inspect_state(
    model: &MdstModel,
    vocab: &Vocabulary,
    dialog: &PreparedDialog,
    rounds: usize,
    answers: AnswerSource,
    top_k: usize,
) -> Result<StateInspection> {
    if !model.config.ablation.use_qgds_pds {
        return Err(MdstError::Contract("state inspection needs a model with state tracking".into()));
    }
    let mut g = Graph::new(&model.store);
    let opts = ForwardOptions {
        answers,
        rounds: Some(rounds),
        candidate_loss: false,
    };
    let trace = model.forward_dialog(&mut g, dialog, opts)?;
    let slots = slot_labels(trace.vision.n_objects, trace.vision.null_index.is_some());
    let describe = |round: usize, text: &str, ids: &[usize], beta: &Matrix| {
        let assignments = (0..beta.rows())
            .map(|i| {
                let row = beta.row(i);
                let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                TokenAssignment {
                    token: vocab.token(ids[i]).unwrap_or("?").to_string(),
                    slot: slots[best].clone(),
                    weight: row[best],
                }
            })
            .collect();
        let mut mass: Vec<(String, f64)> = (0..beta.cols())
            .map(|j| (slots[j].clone(), (0..beta.rows()).map(|i| beta.get(i, j)).sum()))
            .collect();
        mass.sort_by(|a, b| b.1.total_cmp(&a.1));
        mass.truncate(top_k);
        InspectedRound {
            round,
            text: text.to_string(),
            assignments,
            top_slots: mass,
        }
    };
    let mut out_rounds = Vec::new();
    if let Some(b) = &trace.bootstrap {
        out_rounds.push(describe(0, &dialog.caption.text, &dialog.caption.ids, g.value(b.beta)));
    }
    for (t, (rt, round)) in trace.rounds.iter().zip(&dialog.rounds).enumerate() {
        if let Some(up) = &rt.update {
            out_rounds.push(describe(t + 1, &round.question.text, &round.question.ids, g.value(up.beta)));
        }
    }
    Ok(StateInspection {
        image_id: dialog.image_id.clone(),
        slots,
        rounds: out_rounds,
        states: trace.states.iter().map(|s| g.value(s.language.rows).clone()).collect(),
        vision_digest: trace.vision.digest(&g),
    })
}

/// Writes `states.bin` (all matrices, little-endian `f32`) and `states.json` (index).
pub fn write_state_dump(dir: &Path, inspection: &StateInspection) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| MdstError::io(dir, e))?;
    let mut bytes = Vec::new();
    let mut index = Vec::new();
    for (t, m) in inspection.states.iter().enumerate() {
        index.push(serde_json::json!({
            "round": t,
            "rows": m.rows(),
            "cols": m.cols(),
            "offset": bytes.len(),
        }));
        for &x in m.data() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let bin = dir.join("states.bin");
    std::fs::write(&bin, bytes).map_err(|e| MdstError::io(&bin, e))?;
    let json = serde_json::json!({
        "image_id": inspection.image_id,
        "slots": inspection.slots,
        "vision_digest": inspection.vision_digest,
        "states": index,
    });
    let path = dir.join("states.json");
    std::fs::write(&path, serde_json::to_string_pretty(&json).expect("index serialises"))
        .map_err(|e| MdstError::io(&path, e))
}
