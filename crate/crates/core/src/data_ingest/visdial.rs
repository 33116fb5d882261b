//! VisDial v1.0 JSON reader and writer.
//!
//! The on-disk layout pools every question and answer string once
//! (`data.questions`, `data.answers`) and refers to them by index from the
//! rounds. Loading de-indexes those references into owned strings.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MdstError, Result};

use super::{CandidateList, CorpusSource, DialogCorpus, DialogRecord, Round, Split};

#[derive(Deserialize, Serialize)]
struct RawFile {
    #[serde(default)]
    version: Option<String>,
    #[serde(default)]
    split: Option<String>,
    data: RawData,
}

#[derive(Deserialize, Serialize)]
struct RawData {
    dialogs: Vec<RawDialog>,
    questions: Vec<String>,
    answers: Vec<String>,
}

#[derive(Deserialize, Serialize)]
struct RawDialog {
    image_id: ImageId,
    caption: String,
    dialog: Vec<RawRound>,
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum ImageId {
    Int(u64),
    Str(String),
}

impl ImageId {
    fn into_string(self) -> String {
        match self {
            ImageId::Int(i) => i.to_string(),
            ImageId::Str(s) => s,
        }
    }
}

#[derive(Deserialize, Serialize)]
struct RawRound {
    question: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    answer_options: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_index: Option<usize>,
}

#[derive(Deserialize, Serialize)]
struct DenseEntry {
    image_id: ImageId,
    /// 1-based round number.
    round_id: usize,
    gt_relevance: Vec<f64>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| MdstError::io(path, e))?;
    let mut de = serde_json::Deserializer::from_reader(BufReader::new(file));
    serde_path_to_error::deserialize(&mut de).map_err(|e| MdstError::Parse {
        path: path.to_path_buf(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })
}

fn pooled<'a>(pool: &'a [String], idx: usize, what: &str, image: &str) -> Result<&'a String> {
    pool.get(idx).ok_or_else(|| {
        MdstError::CorruptCorpus(format!(
            "dialog {image}: {what} index {idx} outside pool of {}",
            pool.len()
        ))
    })
}

/// Reads a VisDial v1.0 file and de-indexes every round.
pub fn load_visdial(path: &Path, split: Split) -> Result<DialogCorpus> {
    let raw: RawFile = read_json(path)?;
    if let Some(s) = raw.split.as_deref() {
        if s.parse::<Split>().ok() != Some(split) && !s.starts_with(split.as_str()) {
            log::warn!("{} declares split {s:?}, loading as {split}", path.display());
        }
    }
    let RawData {
        dialogs,
        questions,
        answers,
    } = raw.data;
    let mut out = Vec::with_capacity(dialogs.len());
    for d in dialogs {
        let image_id = d.image_id.into_string();
        let mut rounds = Vec::with_capacity(d.dialog.len());
        for r in d.dialog {
            let question = pooled(&questions, r.question, "question", &image_id)?.clone();
            let answer = r
                .answer
                .map(|a| pooled(&answers, a, "answer", &image_id).cloned())
                .transpose()?;
            let candidates = match r.answer_options {
                Some(opts) => Some(CandidateList {
                    options: opts
                        .iter()
                        .map(|&o| pooled(&answers, o, "answer option", &image_id).cloned())
                        .collect::<Result<_>>()?,
                    gt_index: r.gt_index,
                    relevance: None,
                }),
                None => None,
            };
            rounds.push(Round {
                question,
                answer,
                candidates,
            });
        }
        let answerable_rounds = rounds.iter().take_while(|r| r.answer.is_some()).count();
        let record = DialogRecord {
            image_id,
            caption: d.caption,
            rounds,
            answerable_rounds,
        };
        record.validate()?;
        out.push(record);
    }
    let _ = raw.version;
    Ok(DialogCorpus {
        split,
        source: CorpusSource::VisDial,
        dialogs: out,
    })
}

/// Attaches dense relevance annotations (`[{image_id, round_id, gt_relevance}]`).
pub fn load_dense_annotations(path: &Path, corpus: &mut DialogCorpus) -> Result<usize> {
    let entries: Vec<DenseEntry> = read_json(path)?;
    let by_image: HashMap<String, usize> = corpus
        .dialogs
        .iter()
        .enumerate()
        .map(|(i, d)| (d.image_id.clone(), i))
        .collect();
    let mut attached = 0;
    for e in entries {
        let image = e.image_id.into_string();
        let Some(&di) = by_image.get(&image) else {
            continue;
        };
        let round = corpus.dialogs[di]
            .rounds
            .get_mut(e.round_id.wrapping_sub(1))
            .ok_or_else(|| MdstError::CorruptCorpus(format!("dialog {image}: no round {}", e.round_id)))?;
        let cands = round.candidates.as_mut().ok_or_else(|| {
            MdstError::CorruptCorpus(format!("dialog {image}: relevance for a round without candidates"))
        })?;
        if e.gt_relevance.len() != cands.options.len() {
            return Err(MdstError::CorruptCorpus(format!(
                "dialog {image}: {} relevance values for {} options",
                e.gt_relevance.len(),
                cands.options.len()
            )));
        }
        cands.relevance = Some(e.gt_relevance);
        attached += 1;
    }
    Ok(attached)
}

/// Writes a corpus in the VisDial v1.0 layout; dense relevance, if any, goes
/// to `dense_path` in the companion annotation format.
pub fn write_visdial(corpus: &DialogCorpus, path: &Path, dense_path: Option<&Path>) -> Result<()> {
    fn intern(pool: &mut Vec<String>, index: &mut HashMap<String, usize>, s: &str) -> usize {
        if let Some(&i) = index.get(s) {
            return i;
        }
        pool.push(s.to_string());
        index.insert(s.to_string(), pool.len() - 1);
        pool.len() - 1
    }
    let (mut questions, mut answers) = (Vec::new(), Vec::new());
    let (mut qi, mut ai) = (HashMap::new(), HashMap::new());
    let mut dense = Vec::new();
    let mut dialogs = Vec::with_capacity(corpus.dialogs.len());
    for d in &corpus.dialogs {
        let mut rounds = Vec::with_capacity(d.rounds.len());
        for (t, r) in d.rounds.iter().enumerate() {
            let question = intern(&mut questions, &mut qi, &r.question);
            let answer = r.answer.as_deref().map(|a| intern(&mut answers, &mut ai, a));
            let (answer_options, gt_index) = match &r.candidates {
                Some(c) => {
                    if let Some(rel) = &c.relevance {
                        dense.push(DenseEntry {
                            image_id: ImageId::Str(d.image_id.clone()),
                            round_id: t + 1,
                            gt_relevance: rel.clone(),
                        });
                    }
                    (
                        Some(c.options.iter().map(|o| intern(&mut answers, &mut ai, o)).collect()),
                        c.gt_index,
                    )
                }
                None => (None, None),
            };
            rounds.push(RawRound {
                question,
                answer,
                answer_options,
                gt_index,
            });
        }
        dialogs.push(RawDialog {
            image_id: ImageId::Str(d.image_id.clone()),
            caption: d.caption.clone(),
            dialog: rounds,
        });
    }
    let raw = RawFile {
        version: Some("1.0".into()),
        split: Some(corpus.split.as_str().into()),
        data: RawData {
            dialogs,
            questions,
            answers,
        },
    };
    write_json(path, &raw)?;
    if let Some(dp) = dense_path {
        write_json(dp, &dense)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| MdstError::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), value)
        .map_err(|e| MdstError::io(path, std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const FIXTURE: &str = r#"{
      "version": "1.0", "split": "val",
      "data": {
        "questions": ["is it sunny", "how many dogs", "any people"],
        "answers": ["yes", "just 1", "no", "maybe"],
        "dialogs": [
          {"image_id": 42, "caption": "a dog in a park",
           "dialog": [
             {"question": 1, "answer": 1},
             {"question": 0, "answer": 0},
             {"question": 2, "answer": 2}
           ]}
        ]
      }
    }"#;

    #[test]
    fn hand_fixture_deindexes_losslessly() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "v.json", FIXTURE);
        let c = load_visdial(&p, Split::Val).unwrap();
        let d = &c.dialogs[0];
        assert_eq!(d.image_id, "42");
        assert_eq!(d.caption, "a dog in a park");
        // by-hand de-indexing of the fixture
        let expected = [("how many dogs", "just 1"), ("is it sunny", "yes"), ("any people", "no")];
        for (r, (q, a)) in d.rounds.iter().zip(expected) {
            assert_eq!(r.question, q);
            assert_eq!(r.answer.as_deref(), Some(a));
        }
        assert_eq!(d.answerable_rounds, 3);
    }

    #[test]
    fn out_of_range_index_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let body = FIXTURE.replace(r#"{"question": 2, "answer": 2}"#, r#"{"question": 2, "answer": 9}"#);
        let p = write_tmp(&dir, "v.json", &body);
        assert!(matches!(load_visdial(&p, Split::Val), Err(MdstError::CorruptCorpus(_))));
    }

    #[test]
    fn malformed_json_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "bad.json", r#"{"data": {"dialogs": [{"image_id": 1}]}}"#);
        match load_visdial(&p, Split::Train) {
            Err(MdstError::Parse { path, message }) => {
                assert_eq!(path, p);
                assert!(message.contains("data.dialogs"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ninety_nine_candidates_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let opts: Vec<String> = (0..99).map(|i| (i % 4).to_string()).collect();
        let body = FIXTURE.replace(
            r#"{"question": 1, "answer": 1}"#,
            &format!(r#"{{"question": 1, "answer": 1, "answer_options": [{}], "gt_index": 1}}"#, opts.join(",")),
        );
        let p = write_tmp(&dir, "v.json", &body);
        assert!(matches!(load_visdial(&p, Split::Val), Err(MdstError::CorruptCorpus(_))));
    }

    #[test]
    fn ten_round_dialogs_keep_ten_rounds() {
        let dir = tempfile::tempdir().unwrap();
        let rounds: Vec<String> = (0..10)
            .map(|i| format!(r#"{{"question": {}, "answer": {}}}"#, i % 3, i % 4))
            .collect();
        let body = format!(
            r#"{{"data": {{"questions": ["a","b","c"], "answers": ["w","x","y","z"],
                 "dialogs": [{{"image_id": "img", "caption": "cap", "dialog": [{}]}}]}}}}"#,
            rounds.join(",")
        );
        let p = write_tmp(&dir, "v.json", &body);
        let c = load_visdial(&p, Split::Train).unwrap();
        assert_eq!(c.dialogs[0].rounds.len(), 10);
    }

    #[test]
    fn test_split_rounds_without_answers_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        let opts: Vec<String> = (0..100).map(|i| (i % 4).to_string()).collect();
        let body = format!(
            r#"{{"data": {{"questions": ["a","b"], "answers": ["w","x","y","z"],
                 "dialogs": [{{"image_id": 5, "caption": "cap", "dialog": [
                    {{"question": 0, "answer": 1}},
                    {{"question": 1, "answer_options": [{}]}}]}}]}}}}"#,
            opts.join(",")
        );
        let p = write_tmp(&dir, "t.json", &body);
        let c = load_visdial(&p, Split::Test).unwrap();
        assert_eq!(c.dialogs[0].answerable_rounds, 1);
        assert!(c.dialogs[0].rounds[1].candidates.as_ref().unwrap().gt_index.is_none());
    }
}
