//! Validation probes: odd-one-out triplets and their annotation scores, the
//! real-vs-simulated linear probe, and rank correlations between ablation
//! variants.

mod logistic;
mod rank;
mod triplets;

pub use logistic::{fit_logistic, linear_probe, stratified_split, LogisticModel, ProbeConfig, ProbeResult};
pub use rank::{
    ablation_correlation, average_ranks, pearson, spearman, AblationResults, CorrelationMatrix,
};
pub use triplets::{
    fleiss_kappa, read_annotations, sample_triplets, score_annotations, Annotation,
    AnnotationScore, AnswerKey, BlindTriplet, Triplet, TripletItem,
};
