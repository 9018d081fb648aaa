//! Conversation-level speaker anonymization and evaluation over
//! speaker-embedding timelines.
//!
//! The library covers the planning and scoring side of multi-speaker
//! anonymization without touching raw audio:
//!
//! - [`embeddings`]: speaker vectors, cosine similarity, similarity
//!   matrices, and the external pseudo-speaker pool with its
//!   neighbor-averaging protection rule.
//! - [`rttm`]: RTTM timeline parsing/writing, per-speaker aggregation,
//!   overlap detection and duration-balanced splitting.
//! - [`anonymizer`]: the conversation-level pseudo-speaker selection
//!   engine (greedy pruned search under differential- or
//!   aggregated-similarity losses), the classic farthest-K baseline, and
//!   an exhaustive oracle.
//! - [`diarizer`]: spectral-clustering diarization over windowed
//!   embedding streams, producing RTTM.
//! - [`metrics`]: the evaluation protocol — trial-pair construction,
//!   EER/FAR, DER with optimal speaker mapping, and WER.
//! - [`simulator`]: seeded synthetic conversations (ground-truth RTTM +
//!   embedding streams), overlap injection, removal, and window
//!   shuffling.
//! - [`pipeline`]: end-to-end orchestration
//!   (simulate → diarize → plan → apply → evaluate) and report
//!   aggregation.

pub mod anonymizer;
pub mod diarizer;
pub mod embeddings;
mod error;
pub mod metrics;
pub mod pipeline;
pub mod rttm;
mod seeding;
pub mod simulator;
mod textio;

pub use error::{Error, Result};

pub use anonymizer::{
    baseline_select, brute_force_plan, distinctiveness_sums, farthest_candidates,
    plan_conversation, AnonymizationPlan, PlanKind, SearchConfig, UtilityLoss,
};
pub use diarizer::{
    affinity, diarize, labels_to_rttm, spectral_cluster, ClusteringResult,
    WindowedEmbeddingStream,
};
pub use embeddings::{
    cosine, protect_pool, similarity_matrix, Gender, Pool, SimilarityMatrix, SpeakerVector,
};
pub use metrics::{
    build_pairs, der, eer_threshold, far_at_threshold, wer, DerBreakdown, EvalReport,
    TrialPairSet, WerBreakdown,
};
pub use rttm::{
    aggregate_speaker, find_overlaps, parse_rttm, split_half_by_duration, write_rttm,
    OverlapRegion, RttmDocument, Segment,
};
pub use simulator::{
    apply_plan, remove_overlaps, shuffle_overlap_windows, simulate, GroundTruth,
    SimulationConfig,
};
