//! End-to-end chaining of the stages, shared by the CLI and the tests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapttok::{apply_corpus, write_adapted, AdaptedDoc};
use crate::corpus::{tokenize_corpus, write_tokenized, BaseVocab, LabeledDoc, TokenizedDoc};
use crate::error::{Error, Result};
use crate::io;
use crate::scoring::{build_stats, select_sequences, write_selected, SelectionParams};
use crate::sensitivity::{analyze, write_report, FreezeMask, SensitivityReport, BETA_GRID, DEFAULT_BETA};
use crate::seqmine::{mine_closed, write_mined, MinedSequence, MiningParams};
use crate::taskvocab::{build_task_vocab, save_task_vocab, TaskVocabulary};
use crate::tinymodel::{
    evaluate, label_set, pretrained, save_model, sparse_finetune, EvalMetrics, ModelDims, TinyClassifier,
    TrainConfig, TrainMetrics,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mining: MiningParams,
    pub selection: SelectionParams,
    pub beta: f64,
    pub budget: f64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub train: TrainConfig,
    /// When false the task vocabulary is left empty and the model sees only
    /// base tokens.
    pub task_tokens: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mining: MiningParams::default(),
            selection: SelectionParams::default(),
            beta: DEFAULT_BETA,
            budget: 0.2,
            embed_dim: 16,
            hidden_dim: 32,
            train: TrainConfig::default(),
            task_tokens: true,
        }
    }
}

impl PipelineConfig {
    /// Settings for the synthetic bigram task: pairs are worth mining, and
    /// the frequency cutoff keeps only sequences present in most documents.
    pub fn bigram_task() -> Self {
        PipelineConfig {
            mining: MiningParams::new(20, 2, 4),
            selection: SelectionParams {
                pplx_cutoff: 0.0,
                freq_cutoff: 100,
                vocab_cap_fraction: 0.10,
            },
            train: TrainConfig {
                learning_rate: 0.5,
                epochs: 100,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    fn dims(&self, base: usize, total: usize) -> ModelDims {
        ModelDims {
            base_vocab_size: base,
            vocab_size: total,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
        }
    }
}

/// Everything produced by one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub tokenized: Vec<TokenizedDoc>,
    pub mined: Vec<MinedSequence>,
    pub selected: Vec<MinedSequence>,
    pub task_vocab: TaskVocabulary,
    pub adapted_train: Vec<AdaptedDoc>,
    pub adapted_test: Vec<AdaptedDoc>,
    pub initial_model: TinyClassifier,
    pub report: SensitivityReport,
    pub model: TinyClassifier,
    pub train_metrics: TrainMetrics,
    pub eval: EvalMetrics,
}

fn as_tokenized(docs: &[AdaptedDoc]) -> Vec<TokenizedDoc> {
    docs.iter().cloned().map(AdaptedDoc::into_tokenized).collect()
}

/// Task vocabulary from a training corpus: tokenize, mine, score, select.
pub fn build_vocabulary(
    vocab: &BaseVocab,
    train: &[LabeledDoc],
    cfg: &PipelineConfig,
) -> Result<(Vec<TokenizedDoc>, Vec<MinedSequence>, Vec<MinedSequence>, TaskVocabulary)> {
    let tokenized = tokenize_corpus(vocab, train)?;
    if !cfg.task_tokens {
        return Ok((tokenized, Vec::new(), Vec::new(), TaskVocabulary::empty(vocab.len())));
    }
    let mined = mine_closed(&tokenized, &cfg.mining)?;
    let stats = build_stats(&tokenized);
    let selected = select_sequences(&mined, &stats, &cfg.selection, vocab.len())?;
    let tv = build_task_vocab(&selected, vocab.len())?;
    Ok((tokenized, mined, selected, tv))
}

/// Initial model for a task vocabulary: pretrained base plus fresh task rows.
pub fn initial_model(tv: &TaskVocabulary, train: &[TokenizedDoc], cfg: &PipelineConfig, seed: u64) -> Result<TinyClassifier> {
    let classes = label_set(train);
    if classes.len() < 2 {
        return Err(Error::Config("training data needs at least two classes".into()));
    }
    pretrained(cfg.dims(tv.base_vocab_size(), tv.total_size()), classes, seed)
}

pub fn run_pipeline(vocab: &BaseVocab, train: &[LabeledDoc], test: &[LabeledDoc], cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let (tokenized, mined, selected, task_vocab) = build_vocabulary(vocab, train, cfg)?;
    let adapted_train = apply_corpus(&task_vocab, vocab, train);
    let adapted_test = apply_corpus(&task_vocab, vocab, test);
    let train_docs = as_tokenized(&adapted_train);
    let test_docs = as_tokenized(&adapted_test);

    let initial_model = initial_model(&task_vocab, &train_docs, cfg, cfg.train.seed)?;
    let report = analyze(&initial_model, &train_docs, cfg.beta, cfg.budget)?;
    let (model, train_metrics) = sparse_finetune(&initial_model, &train_docs, &report.mask(), &cfg.train)?;
    let eval = evaluate(&model, &test_docs)?;
    Ok(PipelineOutput {
        tokenized,
        mined,
        selected,
        task_vocab,
        adapted_train,
        adapted_test,
        initial_model,
        report,
        model,
        train_metrics,
        eval,
    })
}

impl PipelineOutput {
    /// Writes every stage's artifact into `dir` under fixed names.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tokenized(&dir.join("tokens.jsonl"), &self.tokenized)?;
        write_mined(&dir.join("mined.tsv"), &self.mined)?;
        write_selected(&dir.join("selected.tsv"), &self.selected)?;
        save_task_vocab(&self.task_vocab, &dir.join("task_vocab.json"))?;
        write_adapted(&dir.join("train.adapted.jsonl"), &self.adapted_train)?;
        write_adapted(&dir.join("test.adapted.jsonl"), &self.adapted_test)?;
        save_model(&dir.join("model.init.json"), &self.initial_model, None)?;
        write_report(&dir.join("sensitivity.json"), &self.report)?;
        save_model(&dir.join("model.json"), &self.model, Some(&self.report.mask()))?;
        io::write_json(&dir.join("train_metrics.json"), &self.train_metrics)?;
        io::write_json(&dir.join("eval.json"), &self.eval)
    }
}

/// Names of the files [`PipelineOutput::write_artifacts`] produces.
pub const ARTIFACTS: [&str; 11] = [
    "tokens.jsonl",
    "mined.tsv",
    "selected.tsv",
    "task_vocab.json",
    "train.adapted.jsonl",
    "test.adapted.jsonl",
    "model.init.json",
    "sensitivity.json",
    "model.json",
    "train_metrics.json",
    "eval.json",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub budget: f64,
    pub masked_f1: Vec<f64>,
    pub full_f1: Vec<f64>,
    pub masked_mean: f64,
    pub masked_std: f64,
    pub full_mean: f64,
    pub full_std: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Test macro-F1 across seeds for budgeted (masked) and full finetuning.
/// The seed drives both model initialization and batch order.
pub fn stability(
    vocab: &BaseVocab,
    train: &[LabeledDoc],
    test: &[LabeledDoc],
    cfg: &PipelineConfig,
    seeds: &[u64],
) -> Result<StabilityReport> {
    if seeds.is_empty() {
        return Err(Error::Config("stability needs at least one seed".into()));
    }
    let (_, _, _, tv) = build_vocabulary(vocab, train, cfg)?;
    let train_docs = as_tokenized(&apply_corpus(&tv, vocab, train));
    let test_docs = as_tokenized(&apply_corpus(&tv, vocab, test));
    let mut masked_f1 = Vec::with_capacity(seeds.len());
    let mut full_f1 = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let model = initial_model(&tv, &train_docs, cfg, seed)?;
        let train_cfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let mask = analyze(&model, &train_docs, cfg.beta, cfg.budget)?.mask();
        let (masked, _) = sparse_finetune(&model, &train_docs, &mask, &train_cfg)?;
        masked_f1.push(evaluate(&masked, &test_docs)?.macro_f1);
        let (full, _) = sparse_finetune(&model, &train_docs, &FreezeMask::all_trainable(), &train_cfg)?;
        full_f1.push(evaluate(&full, &test_docs)?.macro_f1);
    }
    let (masked_mean, masked_std) = mean_std(&masked_f1);
    let (full_mean, full_std) = mean_std(&full_f1);
    Ok(StabilityReport {
        runs: seeds.len(),
        seeds: seeds.to_vec(),
        budget: cfg.budget,
        masked_f1,
        full_f1,
        masked_mean,
        masked_std,
        full_mean,
        full_std,
    })
}

/// Picks the beta from [`BETA_GRID`] whose budgeted finetune scores the best
/// validation macro-F1. Earlier (smaller) values win ties.
pub fn tune_beta(
    model: &TinyClassifier,
    train: &[TokenizedDoc],
    valid: &[TokenizedDoc],
    budget: f64,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for beta in BETA_GRID {
        let mask = analyze(model, train, beta, budget)?.mask();
        let (trained, _) = sparse_finetune(model, train, &mask, cfg)?;
        let f1 = evaluate(&trained, valid)?.macro_f1;
        if best.is_none_or(|(_, b)| f1 > b) {
            best = Some((beta, f1));
        }
    }
    Ok(best.expect("non-empty grid"))
}
