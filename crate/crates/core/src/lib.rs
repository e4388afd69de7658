//! Detection and correction of modification repairs in word lattices.
//!
//! A trigger (prosodic interruption-point probability or a word fragment)
//! proposes an interruption point. A statistical scope model picks the
//! reparandum and reparans around it, and the correction is spliced into the
//! lattice as an additional path so later stages may still prefer the
//! original words.

pub mod eval;
pub mod lattice;
pub mod lexicon;
pub mod model;
pub mod ngram;
pub mod pipeline;
pub mod scope;
pub mod smoothing;
pub mod synth;
pub mod tag_lattice;
pub mod training;

pub use eval::{evaluate, select_best_path, Metrics};
pub use lattice::{WordEdge, WordLattice};
pub use lexicon::Lexicon;
pub use model::RepairModel;
pub use pipeline::{process_turn, PipelineConfig, TurnEdits, TurnOutput};
pub use synth::{generate_synthetic, SynthSpec};
pub use training::{AnnotatedTurn, TrainConfig};
