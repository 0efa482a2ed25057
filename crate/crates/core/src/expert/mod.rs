//! Fullband and subband expert models: a small conv backbone feeding a
//! projection to the embedding `h` and a scalar logit head `z`.

mod manifest;
mod model;
mod score;
mod train;

pub use manifest::{DatasetManifest, ManifestRow, Split};
pub use model::{
    model_card_path, Backward, BackboneSpec, ExpertConfig, ExpertModel, ExpertOutput, ExpertRole, ForwardTrace,
    InputNorm, StageSpec, EMBED_DIM,
};
pub use score::{
    band_examples, load_utterances, score_dataset, score_examples, Example, FrontEnd, SkipReport, Utterance,
};
pub use train::{train_expert, train_expert_on, validation_eer, TrainOptions, TrainReport};
pub(crate) use train::{train_core, AuxObjective, AuxTerm};
