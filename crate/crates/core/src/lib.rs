//! Task-adaptive tokenization and sensitivity-driven sparse finetuning.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! - [`corpus`]: base vocabulary, labeled corpus, greedy longest-match tokenizer
//! - [`seqmine`]: closed frequent (possibly gapped) token sequence mining
//! - [`scoring`]: n-gram counts, sequence perplexity, cutoff and cap selection
//! - [`taskvocab`]: new ids and reverse index for selected sequences
//! - [`adapttok`]: tokenization that inserts task ids at match starts
//! - [`tinymodel`]: reference classifier with forward/backward passes
//! - [`sensitivity`]: module dispersion, gradient norms, budgeted selection
//! - [`pipeline`]: stage chaining and the seed-stability report

pub mod adapttok;
pub mod corpus;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod scoring;
pub mod sensitivity;
pub mod seqmine;
pub mod synth;
pub mod taskvocab;
pub mod tinymodel;

/// Index into a vocabulary. Task tokens follow the base range.
pub type TokenId = u32;

pub use adapttok::{adaptive_tokenize, candidate_lookup, AdaptedDoc, AdaptiveTokenization, Insertion};
pub use corpus::{base_tokenize, load_vocab, tokenize_corpus, BaseVocab, Label, LabeledDoc, TokenizedDoc};
pub use error::{Error, Result};
pub use scoring::{build_stats, compute_pplx, select_sequences, CorpusStats, SelectionParams};
pub use sensitivity::{
    combine_sensitivity, measure_dispersion, measure_grad_norm, select_modules, FreezeMask, ModuleStats,
    SensitivityReport,
};
pub use seqmine::{mine_closed, support_of, MinedSequence, MiningParams};
pub use taskvocab::{build_task_vocab, load_task_vocab, save_task_vocab, TaskVocabulary};
pub use tinymodel::{evaluate, sparse_finetune, EvalMetrics, TinyClassifier, TrainConfig, TrainMetrics};
