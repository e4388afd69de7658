//! The trained model file: scope-model tables plus both trigram models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::Lexicon;
use crate::ngram::TrigramLM;
use crate::scope::{ScopeError, ScopeModelParams};
use crate::training::{collect_counts, estimate_scope_model, AnnotatedTurn, TrainConfig, TrainError};

pub const MODEL_FORMAT: &str = "lattice-repair-model/1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed model file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported model format {found:?} (expected {MODEL_FORMAT:?})")]
    Format { found: String },
    #[error(transparent)]
    Scope(#[from] ScopeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepairModel {
    pub format: String,
    pub scope: ScopeModelParams,
    pub pos_lm: TrigramLM,
    pub word_lm: TrigramLM,
}

/// Summary printed after training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub turns: usize,
    pub repairs: u64,
    pub word_vocab: usize,
    pub pos_tags: usize,
    pub sem_classes: usize,
    pub word_repl_rows: usize,
    pub word_trigrams: usize,
    pub pos_trigrams: usize,
}

impl RepairModel {
    pub fn train(
        corpus: &[AnnotatedTurn],
        lex: &Lexicon,
        config: &TrainConfig,
    ) -> Result<(Self, TrainSummary), TrainError> {
        let counts = collect_counts(corpus, lex)?;
        let scope = estimate_scope_model(&counts, config, lex.unknown_pos_tag(), lex.unknown_sem_class())?;
        let pos_lm = TrigramLM::from_symbol_counts(&counts.pos_trigrams, config.discount)?;
        let word_lm = TrigramLM::from_symbol_counts(&counts.word_trigrams, config.discount)?;
        let summary = TrainSummary {
            turns: corpus.len(),
            repairs: counts.repairs,
            word_vocab: scope.word_repl.table.backoff.len(),
            pos_tags: scope.pos_repl.table.backoff.len(),
            sem_classes: scope.sem_repl.table.backoff.len(),
            word_repl_rows: scope.word_repl.table.rows.len(),
            word_trigrams: counts.word_trigrams.len(),
            pos_trigrams: counts.pos_trigrams.len(),
        };
        Ok((
            RepairModel {
                format: MODEL_FORMAT.to_string(),
                scope,
                pos_lm,
                word_lm,
            },
            summary,
        ))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format != MODEL_FORMAT {
            return Err(ModelError::Format { found: header.format });
        }
        let model: RepairModel = serde_json::from_str(text)?;
        model.scope.validate()?;
        Ok(model)
    }
}
