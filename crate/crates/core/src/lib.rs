//! Multimodal dialogue-state tracking for visual dialog.

pub mod ader;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data_ingest;
pub mod error;
pub mod history;
pub mod model;
pub mod params;
pub mod pds;
pub mod qgds;
pub mod state_core;
pub mod tensor;
pub mod text_encoder;
pub mod train_eval;
pub mod transformer;

pub use error::{MdstError, Result};
