//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use mdst::config::ModelConfig;
use mdst::train_eval::TrainConfig;
use toml::{Table, Value};

/// Shape facts that come from the data, not from the user.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataShape {
    pub vocab_size: usize,
    pub raw_dim: usize,
    pub n_objects: usize,
}

/// Training overrides given on the command line.
#[derive(Clone, Debug, Default)]
pub struct TrainFlags {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    text.parse::<Table>()
        .with_context(|| format!("parsing config {}", path.display()))
}

/// Resolves the full training configuration for data of the given shape.
pub fn resolve(file: Option<&Table>, shape: DataShape, flags: &TrainFlags) -> Result<TrainConfig> {
    let defaults = TrainConfig::standard(ModelConfig::desk(shape.vocab_size, shape.raw_dim, shape.n_objects));
    let mut table = Table::try_from(&defaults).context("serialising default config")?;
    if let Some(f) = file {
        if let Some(Value::Table(model)) = f.get("model") {
            for (key, actual) in [
                ("vocab_size", shape.vocab_size),
                ("raw_dim", shape.raw_dim),
                ("n_objects", shape.n_objects),
            ] {
                if let Some(v) = model.get(key) {
                    if v.as_integer() != Some(actual as i64) {
                        bail!("config sets model.{key} = {v}, but the data gives {actual}");
                    }
                }
            }
        }
        merge(&mut table, f.clone());
    }
    let mut cfg: TrainConfig =
        serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| anyhow::anyhow!("config key `{}`: {}", e.path(), e.inner()))?;
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(e) = flags.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = flags.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHAPE: DataShape = DataShape {
        vocab_size: 50,
        raw_dim: 19,
        n_objects: 3,
    };

    #[test]
    fn precedence() {
        let file: Table = "epochs = 4\nseed = 9\n[model]\ndropout = 0.0\n[model.ablation]\nuse_switching = false\n"
            .parse()
            .unwrap();
        let flags = TrainFlags {
            seed: Some(11),
            ..Default::default()
        };
        let cfg = resolve(Some(&file), SHAPE, &flags).unwrap();
        assert_eq!(cfg.epochs, 4);
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.model.dropout, 0.0);
        assert!(!cfg.model.ablation.use_switching);
        assert!(cfg.model.ablation.use_pseudo_objects);
        assert_eq!(cfg.model.d_model, 64);
        assert_eq!(cfg.batch_size, 32);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let file: Table = "[model]\nwidth = 3\n".parse().unwrap();
        let err = resolve(Some(&file), SHAPE, &TrainFlags::default()).unwrap_err();
        assert!(err.to_string().contains("model"), "{err}");
    }

    #[test]
    fn data_shape_conflict_is_rejected() {
        let file: Table = "[model]\nn_objects = 36\n".parse().unwrap();
        assert!(resolve(Some(&file), SHAPE, &TrainFlags::default()).is_err());
    }
}
