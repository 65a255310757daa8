//! Shared inputs for the pipeline benchmarks.

use adapt_core::adapttok::apply_corpus;
use adapt_core::pipeline::{build_vocabulary, initial_model, PipelineConfig};
use adapt_core::synth::{bigram_task, BigramTaskConfig};
use adapt_core::{BaseVocab, LabeledDoc, TaskVocabulary, TinyClassifier, TokenizedDoc};

pub struct Fixture {
    pub vocab: BaseVocab,
    pub docs: Vec<LabeledDoc>,
    pub tokenized: Vec<TokenizedDoc>,
    pub task_vocab: TaskVocabulary,
    pub adapted: Vec<TokenizedDoc>,
    pub model: TinyClassifier,
    pub config: PipelineConfig,
}

/// Synthetic bigram corpus with `docs` training documents, carried through
/// vocabulary construction and model initialisation.
pub fn fixture(docs: usize) -> Fixture {
    let task = bigram_task(&BigramTaskConfig {
        train: docs,
        ..BigramTaskConfig::default()
    });
    let vocab = BaseVocab::from_tokens(&task.vocab).unwrap();
    let config = PipelineConfig::bigram_task();
    let (tokenized, _, _, task_vocab) = build_vocabulary(&vocab, &task.train, &config).unwrap();
    let adapted: Vec<TokenizedDoc> = apply_corpus(&task_vocab, &vocab, &task.train)
        .into_iter()
        .map(|d| d.into_tokenized())
        .collect();
    let model = initial_model(&task_vocab, &adapted, &config, 0).unwrap();
    Fixture {
        vocab,
        docs: task.train,
        tokenized,
        task_vocab,
        adapted,
        model,
        config,
    }
}
