//! Corpus synthesis, end-to-end design runs, metrics and external scoring.

mod artifacts;
mod config;
mod corpus;
mod design;
mod frame;
mod library;
mod metrics;
mod scorer;

pub use artifacts::{
    pose_fields,
    read_corpus, read_sequences, read_shapes, read_train_keys, write_corpus, write_sequences, SequenceRow, CORPUS_SDF, TRAIN_KEYS, VOCAB_DIR,
};
pub use config::{Config, SEED_ENV};
pub use corpus::{roundtrip, synth_corpus, training_items, Roundtrip, SynthCorpus, SynthParams};
pub use design::{
    design_shape, parallel_map, realize, run_design, to_model_frame, Candidate, DesignInput, DesignParams, ModelShape, RunManifest, ScoreSpec,
    StageCounts,
};
pub use frame::{grid_frame, ligand_shape, ligand_spec, molecule_frame, point_frame, resample_posed, FRAME_EXTENT, FRAME_PITCH};
pub use library::base_library;
pub use metrics::{
    dedup, dedup_indices, diversity, fragment_keys, histogram_csv, median, metrics, molecule_shape, molecule_tanimoto, multiset_jaccard,
    MetricsParams, MetricsReport, ProdFormula, Term,
};
pub use scorer::{score_filter, CommandScorer, Filtered, Invocation, Scorer, ShapeScorer};

use thiserror::Error;

use crate::assembler::AssemblyError;
use crate::chem::ChemError;
use crate::codec::CodecError;
use crate::geom::GeomError;
use crate::model::ModelError;
use crate::sketch::SketchError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("vocabulary has {found} fragments, need at least {needed}")]
    VocabTooSmall { found: usize, needed: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error("scorer: {0}")]
    Scorer(String),
    #[error(transparent)]
    Chem(#[from] ChemError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
