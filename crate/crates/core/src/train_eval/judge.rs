//! Joint answer accuracy and answer length over generated dialogs.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_ingest::synthetic::number_word;
use crate::data_ingest::vocab::split_words;
use crate::data_ingest::SyntheticWorld;
use crate::error::{MdstError, Result};

use super::eval::GeneratedDialog;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Incorrect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeProvenance {
    Oracle,
    HumanImport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgedRound {
    pub round: usize,
    pub question: String,
    pub answer: String,
    pub gold: Option<String>,
    pub verdict: Option<Verdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgedDialog {
    pub image_id: String,
    pub rounds: Vec<JudgedRound>,
    pub provenance: JudgeProvenance,
}

/// Lowercase, punctuation removed, number words replaced by digits.
pub fn normalize_answer(text: &str) -> String {
    let numbers: HashMap<String, String> = (0..=20).map(|n| (number_word(n), n.to_string())).collect();
    split_words(text)
        .into_iter()
        .filter(|t| !is_punctuation(t))
        .map(|t| numbers.get(&t).cloned().unwrap_or(t))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_punctuation(token: &str) -> bool {
    token.chars().all(|c| c.is_ascii_punctuation())
}

/// Number of content tokens: punctuation-only tokens do not count.
pub fn content_length(text: &str) -> usize {
    split_words(text).iter().filter(|t| !is_punctuation(t)).count()
}

/// Judges every round against the symbolic answer of its synthetic world.
pub fn oracle_judge(generated: &[GeneratedDialog], worlds: &[SyntheticWorld]) -> Result<Vec<JudgedDialog>> {
    let by_id: HashMap<&str, &SyntheticWorld> = worlds.iter().map(|w| (w.image_id.as_str(), w)).collect();
    generated
        .iter()
        .map(|d| {
            let world = by_id.get(d.image_id.as_str()).ok_or_else(|| {
                MdstError::Contract(format!("no synthetic world for image {}", d.image_id))
            })?;
            let rounds = d
                .rounds
                .iter()
                .map(|r| {
                    let program = world.program.get(r.round - 1).ok_or_else(|| {
                        MdstError::Contract(format!("image {} has no round {}", d.image_id, r.round))
                    })?;
                    let gold = world.oracle(program);
                    let ok = normalize_answer(&r.answer) == normalize_answer(&gold);
                    Ok(JudgedRound {
                        round: r.round,
                        question: r.question.clone(),
                        answer: r.answer.clone(),
                        gold: Some(gold),
                        verdict: Some(if ok { Verdict::Correct } else { Verdict::Incorrect }),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(JudgedDialog {
                image_id: d.image_id.clone(),
                rounds,
                provenance: JudgeProvenance::Oracle,
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct HumanRow {
    image_id: String,
    round: usize,
    verdict: u8,
}

/// Attaches verdicts from a CSV with columns `image_id, round, verdict` (1 or 0).
/// Rounds without a row keep `verdict = None`.
pub fn import_human_verdicts(path: &Path, generated: &[GeneratedDialog]) -> Result<Vec<JudgedDialog>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| MdstError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let mut verdicts = HashMap::new();
    for (i, row) in reader.deserialize::<HumanRow>().enumerate() {
        let row = row.map_err(|e| MdstError::Parse {
            path: path.to_path_buf(),
            message: format!("row {}: {e}", i + 1),
        })?;
        let v = match row.verdict {
            1 => Verdict::Correct,
            0 => Verdict::Incorrect,
            other => {
                return Err(MdstError::Parse {
                    path: path.to_path_buf(),
                    message: format!("row {}: verdict {other} is not 0 or 1", i + 1),
                })
            }
        };
        verdicts.insert((row.image_id, row.round), v);
    }
    Ok(generated
        .iter()
        .map(|d| JudgedDialog {
            image_id: d.image_id.clone(),
            rounds: d
                .rounds
                .iter()
                .map(|r| JudgedRound {
                    round: r.round,
                    question: r.question.clone(),
                    answer: r.answer.clone(),
                    gold: r.gt_answer.clone(),
                    verdict: verdicts.get(&(d.image_id.clone(), r.round)).copied(),
                })
                .collect(),
            provenance: JudgeProvenance::HumanImport,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundBreakdown {
    pub round: usize,
    pub correct: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JaccReport {
    pub jacc: f64,
    pub avg_len: f64,
    pub correct: usize,
    pub incorrect: usize,
    pub total: usize,
    pub per_round: Vec<RoundBreakdown>,
}

/// `JACC = 100·correct/total` and the mean content length of generated answers.
pub fn compute_jacc_avglen(judged: &[JudgedDialog]) -> Result<JaccReport> {
    let mut correct = 0;
    let mut total = 0;
    let mut length = 0;
    let mut per_round: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for d in judged {
        for r in &d.rounds {
            let v = r.verdict.ok_or_else(|| {
                MdstError::Contract(format!("image {} round {} has no verdict", d.image_id, r.round))
            })?;
            let hit = usize::from(v == Verdict::Correct);
            correct += hit;
            total += 1;
            length += content_length(&r.answer);
            let e = per_round.entry(r.round).or_default();
            e.0 += hit;
            e.1 += 1;
        }
    }
    if total == 0 {
        return Err(MdstError::Contract("no judged rounds".into()));
    }
    Ok(JaccReport {
        jacc: 100.0 * correct as f64 / total as f64,
        avg_len: length as f64 / total as f64,
        correct,
        incorrect: total - correct,
        total,
        per_round: per_round
            .into_iter()
            .map(|(round, (correct, total))| RoundBreakdown { round, correct, total })
            .collect(),
    })
}
