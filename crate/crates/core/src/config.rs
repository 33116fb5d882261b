//! Model hyper-parameters and ablation switches.

use serde::{Deserialize, Serialize};

use crate::error::{MdstError, Result};

/// Components that can be removed for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    /// Track dialogue state (grounding + postdiction). When off, the question
    /// attends directly to the image and to the encoded raw history.
    pub use_qgds_pds: bool,
    /// Mix the two alignment distributions through the switching probability.
    pub use_switching: bool,
    /// Append the NULL and ALL pseudo-objects to the vision states.
    pub use_pseudo_objects: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_qgds_pds: true,
            use_switching: true,
            use_pseudo_objects: true,
        }
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        use_qgds_pds: true,
        use_switching: true,
        use_pseudo_objects: true,
    };
    pub const NO_STATE: Ablation = Ablation {
        use_qgds_pds: false,
        use_switching: true,
        use_pseudo_objects: true,
    };
    pub const NO_SWITCHING: Ablation = Ablation {
        use_qgds_pds: true,
        use_switching: false,
        use_pseudo_objects: true,
    };
    pub const NO_PSEUDO_OBJECTS: Ablation = Ablation {
        use_qgds_pds: true,
        use_switching: true,
        use_pseudo_objects: false,
    };

    /// The four comparison rows: full model and the three removals.
    pub fn table_rows() -> [(&'static str, Ablation); 4] {
        [
            ("full", Self::FULL),
            ("-QGDS-PDS", Self::NO_STATE),
            ("-switching", Self::NO_SWITCHING),
            ("-NULL-ALL", Self::NO_PSEUDO_OBJECTS),
        ]
    }
}

/// Which keys address language-state slots when a round is written back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateWriteKeys {
    /// Keys are `MLP(S)` alone.
    Language,
    /// Keys are `MLP(S + O)`: each slot is also addressed through its aligned object row.
    ObjectAnchored,
}

/// Pooling of a token sequence into one vector for candidate scoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    First,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub candidate_layers: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub raw_dim: usize,
    pub n_objects: usize,
    pub dropout: f64,
    pub ablation: Ablation,
    pub write_keys: StateWriteKeys,
    pub pooling: Pooling,
    /// Train and run the autoregressive answer head.
    pub generative: bool,
    /// Train and run the candidate-ranking head.
    pub discriminative: bool,
    /// Cut gradient flow between rounds at each state update.
    pub truncate_history_grad: bool,
    pub max_answer_len: usize,
}

impl ModelConfig {
    /// Desk-scale configuration: 2 layers, 4 heads, width 64.
    pub fn desk(vocab_size: usize, raw_dim: usize, n_objects: usize) -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            candidate_layers: 2,
            ffn_dim: 256,
            max_len: 40,
            vocab_size,
            raw_dim,
            n_objects,
            dropout: 0.1,
            ablation: Ablation::FULL,
            write_keys: StateWriteKeys::ObjectAnchored,
            pooling: Pooling::Mean,
            generative: true,
            discriminative: false,
            truncate_history_grad: false,
            max_answer_len: 20,
        }
    }

    /// Full-size configuration: 12 layers, 12 heads, width 768, 36 regions of 2048 features.
    pub fn full_size(vocab_size: usize) -> Self {
        Self {
            d_model: 768,
            n_heads: 12,
            encoder_layers: 12,
            decoder_layers: 12,
            candidate_layers: 12,
            ffn_dim: 3072,
            raw_dim: 2048,
            n_objects: 36,
            ..Self::desk(vocab_size, 2048, 36)
        }
    }

    /// Tiny configuration for gradient checks and unit tests.
    pub fn tiny(vocab_size: usize, raw_dim: usize, n_objects: usize) -> Self {
        Self {
            d_model: 8,
            n_heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            candidate_layers: 1,
            ffn_dim: 16,
            max_len: 16,
            dropout: 0.0,
            ..Self::desk(vocab_size, raw_dim, n_objects)
        }
    }

    /// Number of state slots: objects plus NULL and ALL when enabled.
    pub fn n_slots(&self) -> usize {
        self.n_objects + if self.ablation.use_pseudo_objects { 2 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(MdstError::Config(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return err("d_model must be a positive multiple of n_heads");
        }
        if self.vocab_size <= 4 {
            return err("vocabulary must contain tokens beyond the reserved ids");
        }
        if self.n_objects == 0 || self.raw_dim == 0 {
            return err("need at least one object and a positive feature width");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err("dropout rate must lie in [0,1)");
        }
        if self.max_len < 3 {
            return err("max_len must fit BOS, one token and EOS");
        }
        if !self.generative && !self.discriminative {
            return err("at least one answer head must be enabled");
        }
        Ok(())
    }
}
