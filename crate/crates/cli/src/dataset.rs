//! On-disk layout of a data directory.
//!
//! ```text
//! <root>/train.json, val.json        dialogs in the VisDial v1.0 layout
//! <root>/train_dense.json, ...       optional dense candidate relevance
//! <root>/features/                   region feature store
//! <root>/worlds_train.json, ...      synthetic worlds (synthetic data only)
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mdst::config::ModelConfig;
use mdst::data_ingest::synthetic::{load_worlds, save_worlds, SyntheticSplit};
use mdst::data_ingest::{
    load_dense_annotations, load_visdial, write_visdial, DialogCorpus, FeatureStore, Split, SyntheticWorld, Vocabulary,
};
use mdst::model::{prepare_dialog, PreparedDialog};

use crate::settings::DataShape;

pub struct DataDir {
    pub root: PathBuf,
}

impl DataDir {
    pub fn new(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            bail!("data directory {} does not exist", root.display());
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn corpus_path(root: &Path, split: Split) -> PathBuf {
        root.join(format!("{split}.json"))
    }

    pub fn dense_path(root: &Path, split: Split) -> PathBuf {
        root.join(format!("{split}_dense.json"))
    }

    pub fn worlds_path(root: &Path, split: Split) -> PathBuf {
        root.join(format!("worlds_{split}.json"))
    }

    pub fn features_path(root: &Path) -> PathBuf {
        root.join("features")
    }

    /// Loads a split, attaching dense relevance when its file is present.
    pub fn corpus(&self, split: Split) -> Result<DialogCorpus> {
        let path = Self::corpus_path(&self.root, split);
        let mut corpus = load_visdial(&path, split)?;
        let dense = Self::dense_path(&self.root, split);
        if dense.exists() {
            let n = load_dense_annotations(&dense, &mut corpus)?;
            log::debug!("attached dense relevance to {n} rounds");
        }
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn features(&self) -> Result<FeatureStore> {
        Ok(FeatureStore::open(&Self::features_path(&self.root))?)
    }

    pub fn is_synthetic(&self, split: Split) -> bool {
        Self::worlds_path(&self.root, split).exists()
    }

    pub fn worlds(&self, split: Split) -> Result<Vec<SyntheticWorld>> {
        let path = Self::worlds_path(&self.root, split);
        if !path.exists() {
            bail!(
                "{} not found: oracle judging needs a synthetic corpus; judge real data with --human-csv",
                path.display()
            );
        }
        Ok(load_worlds(&path)?)
    }

    /// Region count and width shared by every image of `corpus`.
    pub fn feature_shape(&self, store: &FeatureStore, corpus: &DialogCorpus) -> Result<(usize, usize)> {
        let mut shape = None;
        for d in &corpus.dialogs {
            let e = store
                .entry(&d.image_id)
                .with_context(|| format!("no region features for image {}", d.image_id))?;
            match shape {
                None => shape = Some((e.n_objects, e.dim)),
                Some(s) if s != (e.n_objects, e.dim) => bail!(
                    "image {} has {}x{} features, earlier images have {}x{}",
                    d.image_id,
                    e.n_objects,
                    e.dim,
                    s.0,
                    s.1
                ),
                Some(_) => {}
            }
        }
        shape.context("corpus has no dialogs")
    }

    pub fn shape(&self, split: Split, vocab: &Vocabulary) -> Result<DataShape> {
        let corpus = self.corpus(split)?;
        let (n_objects, raw_dim) = self.feature_shape(&self.features()?, &corpus)?;
        Ok(DataShape {
            vocab_size: vocab.len(),
            raw_dim,
            n_objects,
        })
    }

    /// Tokenised dialogs of a split with their features attached.
    pub fn prepared(&self, split: Split, vocab: &Vocabulary, config: &ModelConfig) -> Result<Vec<PreparedDialog>> {
        let corpus = self.corpus(split)?;
        let store = self.features()?;
        corpus
            .dialogs
            .iter()
            .map(|d| {
                let f = store.load(&d.image_id)?;
                Ok(prepare_dialog(d, f.features, vocab, config, config.discriminative))
            })
            .collect()
    }
}

/// Writes synthetic splits in the data directory layout; returns the files written.
pub fn write_synthetic(root: &Path, splits: &[&SyntheticSplit]) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for s in splits {
        let split = s.corpus.split;
        let corpus = DataDir::corpus_path(root, split);
        let dense = DataDir::dense_path(root, split);
        write_visdial(&s.corpus, &corpus, Some(&dense))?;
        save_worlds(&DataDir::worlds_path(root, split), &s.worlds)?;
        files.push(format!("{split}.json"));
        files.push(format!("{split}_dense.json"));
        files.push(format!("worlds_{split}.json"));
    }
    FeatureStore::write(
        &DataDir::features_path(root),
        splits.iter().flat_map(|s| s.features.iter()),
    )?;
    files.push("features".into());
    Ok(files)
}
