pub mod corpus;
pub mod metrics;
pub mod report;
pub mod trainer;

pub use corpus::{synthesize_corpus, Corpus, CorpusConfig, LabeledExample, Signal, SignalPlan};
pub use metrics::{axis_accuracy, axis_macro_f1, macro_f1};
pub use report::{evaluate_matrix, EvalReport};
pub use trainer::{
    cache_features, fit_epoch, predict_all, profile_input, seeded_backbone, split_indices, train, train_with,
    EpochStats, Example, FeatureCache, ModeResult, ModelDims, Precision, Split, TrainConfig, TrainOutcome,
};
