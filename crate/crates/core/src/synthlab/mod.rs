//! Synthetic oracles: planted Gaussian concepts, planted linear layers, a
//! template corpus and a small trainable language model.

pub mod corpus;
pub mod extract;
pub mod gaussian;
pub mod layer;
pub mod pipeline;
pub mod toylm;

pub use corpus::{
    default_lexicon, default_templates, extended_lexicon, gen_toy_corpus, male_probability,
    parse_lexicon, training_sequences, GenderTokens, GenderWords, LexiconEntry, PromptRole,
    PromptSample, ToyCorpus, TrainingSequence, Vocab,
};
pub use extract::{
    concept_batches, context_concept_batches, extract_context_keys, extract_context_values,
    extract_keys, extract_values, prefix_contexts, EditContext, ValueExtraction, ValueSearch,
};
pub use gaussian::{
    gen_gaussian_triple, match_covariance, random_orthonormal, GaussianTriple, PlantedAxis,
    PlantedSpec,
};
pub use layer::{gen_linear_layer_data, LayerData, LayerDataSpec};
pub use pipeline::{
    run_edit_pipeline, split_corpus, CorpusSplit, LayerSummary, PipelineConfig, PipelineReport,
    Snapshot,
};
pub use toylm::{
    train_toy_lm, Example, FeedForward, PredictionSet, ToyConfig, ToyLM, Trace, TrainConfig,
    TrainReport,
};
