use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adapt_core::adapttok::{apply_corpus, read_adapted, write_adapted, AdaptedDoc};
use adapt_core::corpus::{read_corpus, read_tokenized, write_corpus, write_tokenized};
use adapt_core::io::write_json;
use adapt_core::pipeline::{initial_model, run_pipeline, stability, tune_beta, PipelineConfig};
use adapt_core::scoring::{read_selected, write_selected};
use adapt_core::sensitivity::{analyze, read_report, write_report};
use adapt_core::seqmine::{read_mined, write_mined};
use adapt_core::synth::{bigram_task, BigramTaskConfig};
use adapt_core::tinymodel::{load_model, save_model};
use adapt_core::{
    build_stats, build_task_vocab, evaluate, load_task_vocab, load_vocab, mine_closed, save_task_vocab,
    select_sequences, sparse_finetune, tokenize_corpus, BaseVocab, Error, FreezeMask, LabeledDoc, MiningParams,
    SelectionParams, TokenizedDoc, TrainConfig,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "adapt", version, about = "Task-adaptive tokenization and sensitivity-driven sparse finetuning")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Seed for model initialization and batch order
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Base-tokenize a labeled JSONL corpus
    Tokenize {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine closed frequent token sequences
    Mine {
        #[arg(long)]
        tokens: PathBuf,
        #[command(flatten)]
        mining: MiningArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score mined sequences by perplexity and select them under the cap
    Select {
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        mined: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        pplx_cutoff: f64,
        #[arg(long, default_value_t = 1)]
        freq_cutoff: usize,
        /// Largest task vocabulary as a fraction of the base vocabulary
        #[arg(long, default_value_t = 0.10)]
        cap: f64,
        /// Ignore --pplx-cutoff and rely on ranking plus the cap
        #[arg(long)]
        auto_cap: bool,
        /// Base vocabulary size (or give --vocab)
        #[arg(long, required_unless_present = "vocab")]
        base_size: Option<usize>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign new ids to selected sequences
    BuildVocab {
        #[arg(long)]
        selected: PathBuf,
        #[arg(long)]
        base_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adaptive tokenization of a labeled corpus
    Apply {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        task_vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulated pretrained model sized for a task vocabulary
    InitModel {
        #[arg(long)]
        task_vocab: PathBuf,
        /// Adapted training data; its labels fix the classes
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 16)]
        embed_dim: usize,
        #[arg(long, default_value_t = 32)]
        hidden_dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Module sensitivity and the budgeted freeze mask
    Sensitivity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 0.2)]
        budget: f64,
        /// Pick beta from the grid by validation macro-F1 (needs --valid)
        #[arg(long, requires = "valid")]
        tune_beta: bool,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sparse finetuning under a freeze mask
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Sensitivity report; without it every module trains
        #[arg(long)]
        mask: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Accuracy and macro-F1 on adapted data
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// F1 spread across seeds for masked and full finetuning
    Stability {
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Inclusive range `a..b` or a comma list (default: 0..runs-1)
        #[arg(long)]
        seeds: Option<String>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every stage in sequence, artifacts written to one directory
    All {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write the synthetic bigram task (vocab.txt, train.jsonl, test.jsonl)
    GenBigram {
        #[arg(long, default_value_t = 400)]
        train: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
        #[arg(long, default_value_t = 8)]
        fillers: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct MiningArgs {
    #[arg(long, default_value_t = 5)]
    min_freq: usize,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long, default_value_t = 20)]
    max_len: usize,
    /// Most tokens allowed between consecutive matched tokens
    #[arg(long)]
    max_gap: Option<usize>,
}

impl MiningArgs {
    fn params(&self) -> MiningParams {
        MiningParams {
            max_gap: self.max_gap,
            ..MiningParams::new(self.min_freq, self.min_len, self.max_len)
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            ..TrainConfig::default()
        }
    }
}

/// Inputs for whole-pipeline commands. Without any of them the built-in
/// bigram task is generated from the seed.
#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long, requires_all = ["train", "test"])]
    vocab: Option<PathBuf>,
    #[arg(long, requires = "vocab")]
    train: Option<PathBuf>,
    #[arg(long, requires = "vocab")]
    test: Option<PathBuf>,
}

/// Overrides on top of a preset pipeline configuration.
#[derive(Args, Debug)]
struct PipelineArgs {
    /// Base configuration: `default` (general-purpose settings) or `bigram`
    #[arg(long, value_parser = ["default", "bigram"])]
    preset: Option<String>,
    #[arg(long)]
    min_freq: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    pplx_cutoff: Option<f64>,
    #[arg(long)]
    freq_cutoff: Option<usize>,
    #[arg(long)]
    cap: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Skip mining and train on base tokens only
    #[arg(long)]
    no_task_tokens: bool,
}

impl PipelineArgs {
    fn config(&self, builtin: bool, seed: u64) -> PipelineConfig {
        let mut cfg = match self.preset.as_deref() {
            Some("bigram") => PipelineConfig::bigram_task(),
            Some(_) => PipelineConfig::default(),
            None if builtin => PipelineConfig::bigram_task(),
            None => PipelineConfig::default(),
        };
        let m = &mut cfg.mining;
        m.min_frequency = self.min_freq.unwrap_or(m.min_frequency);
        m.min_len = self.min_len.unwrap_or(m.min_len);
        m.max_len = self.max_len.unwrap_or(m.max_len);
        let s = &mut cfg.selection;
        s.pplx_cutoff = self.pplx_cutoff.unwrap_or(s.pplx_cutoff);
        s.freq_cutoff = self.freq_cutoff.unwrap_or(s.freq_cutoff);
        s.vocab_cap_fraction = self.cap.unwrap_or(s.vocab_cap_fraction);
        cfg.beta = self.beta.unwrap_or(cfg.beta);
        cfg.budget = self.budget.unwrap_or(cfg.budget);
        let t = &mut cfg.train;
        t.learning_rate = self.lr.unwrap_or(t.learning_rate);
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.seed = seed;
        cfg.task_tokens = !self.no_task_tokens;
        cfg
    }
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match &error {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

type CliResult = Result<(), Failure>;

fn require(paths: &[&Path]) -> Result<(), Error> {
    for p in paths {
        if !p.exists() {
            return Err(Error::Io {
                path: p.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            });
        }
    }
    Ok(())
}

fn require_opt(paths: &[&Option<PathBuf>]) -> Result<(), Error> {
    let present: Vec<&Path> = paths.iter().filter_map(|p| p.as_deref()).collect();
    require(&present)
}

fn tokenized(docs: Vec<AdaptedDoc>) -> Vec<TokenizedDoc> {
    docs.into_iter().map(AdaptedDoc::into_tokenized).collect()
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Error> {
    let bad = || Error::Config(format!("cannot parse seeds {text:?}; expected a..b or a,b,c"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn load_data(data: &DataArgs, seed: u64) -> Result<(BaseVocab, Vec<LabeledDoc>, Vec<LabeledDoc>), Error> {
    match (&data.vocab, &data.train, &data.test) {
        (Some(v), Some(tr), Some(te)) => {
            require(&[v, tr, te])?;
            Ok((load_vocab(v)?, read_corpus(tr)?, read_corpus(te)?))
        }
        _ => {
            let task = bigram_task(&BigramTaskConfig {
                seed,
                ..BigramTaskConfig::default()
            });
            Ok((BaseVocab::from_tokens(&task.vocab)?, task.train, task.test))
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let seed = cli.seed;
    match cli.command {
        Command::Tokenize { vocab, corpus, out } => {
            require(&[&vocab, &corpus])?;
            let v = load_vocab(&vocab)?;
            let docs = tokenize_corpus(&v, &read_corpus(&corpus)?)?;
            write_tokenized(&out, &docs)?;
            println!("tokenized {} documents", docs.len());
        }
        Command::Mine { tokens, mining, out } => {
            require(&[&tokens])?;
            let params = mining.params();
            let gap = params.max_gap.map(|g| format!(" max_gap={g}")).unwrap_or_default();
            println!(
                "min_freq={} min_len={} max_len={}{gap}",
                params.min_frequency, params.min_len, params.max_len
            );
            let mined = mine_closed(&read_tokenized(&tokens)?, &params)?;
            write_mined(&out, &mined)?;
            println!("mined {} closed sequences", mined.len());
        }
        Command::Select {
            tokens,
            mined,
            pplx_cutoff,
            freq_cutoff,
            cap,
            auto_cap,
            base_size,
            vocab,
            out,
        } => {
            require(&[&tokens, &mined])?;
            require_opt(&[&vocab])?;
            let base = match base_size {
                Some(n) => n,
                None => load_vocab(vocab.as_deref().expect("clap requires one"))?.len(),
            };
            let params = SelectionParams {
                pplx_cutoff: if auto_cap { 0.0 } else { pplx_cutoff },
                freq_cutoff,
                vocab_cap_fraction: cap,
            };
            let stats = build_stats(&read_tokenized(&tokens)?);
            let selected = select_sequences(&read_mined(&mined)?, &stats, &params, base)?;
            write_selected(&out, &selected)?;
            println!("selected {} of at most {} sequences", selected.len(), params.cap(base));
        }
        Command::BuildVocab { selected, base_size, out } => {
            require(&[&selected])?;
            let tv = build_task_vocab(&read_selected(&selected)?, base_size)?;
            save_task_vocab(&tv, &out)?;
            println!("task vocabulary: {} entries, ids {}..{}", tv.len(), base_size, tv.total_size());
        }
        Command::Apply {
            vocab,
            task_vocab,
            corpus,
            out,
        } => {
            require(&[&vocab, &task_vocab, &corpus])?;
            let v = load_vocab(&vocab)?;
            let tv = load_task_vocab(&task_vocab)?;
            if tv.base_vocab_size() != v.len() {
                return Err(Error::Config(format!(
                    "task vocabulary expects a base of {} tokens, vocabulary has {}",
                    tv.base_vocab_size(),
                    v.len()
                ))
                .into());
            }
            let docs = apply_corpus(&tv, &v, &read_corpus(&corpus)?);
            write_adapted(&out, &docs)?;
            let inserted: usize = docs.iter().map(|d| d.insertions.len()).sum();
            println!("adapted {} documents, {} insertions", docs.len(), inserted);
        }
        Command::InitModel {
            task_vocab,
            data,
            embed_dim,
            hidden_dim,
            out,
        } => {
            require(&[&task_vocab, &data])?;
            let tv = load_task_vocab(&task_vocab)?;
            let cfg = PipelineConfig {
                embed_dim,
                hidden_dim,
                ..PipelineConfig::default()
            };
            let model = initial_model(&tv, &tokenized(read_adapted(&data)?), &cfg, seed)?;
            save_model(&out, &model, None)?;
            println!("model: {} parameters, {} classes", model.total_params(), model.num_classes());
        }
        Command::Sensitivity {
            model,
            data,
            beta,
            budget,
            tune_beta: tune,
            valid,
            train,
            out,
        } => {
            require(&[&model, &data])?;
            require_opt(&[&valid])?;
            let (m, _) = load_model(&model)?;
            let docs = tokenized(read_adapted(&data)?);
            let beta = match valid {
                Some(v) if tune => {
                    let valid_docs = tokenized(read_adapted(&v)?);
                    let (b, f1) = tune_beta(&m, &docs, &valid_docs, budget, &train.config(seed))?;
                    println!("tuned beta={b} (validation macro-F1 {f1:.4})");
                    b
                }
                _ => beta,
            };
            let report = analyze(&m, &docs, beta, budget)?;
            write_report(&out, &report)?;
            let chosen: Vec<&str> = report
                .modules
                .iter()
                .filter(|r| r.trainable)
                .map(|r| r.name.as_str())
                .collect();
            println!("trainable [{}] achieved={:.4} budget={}", chosen.join(","), report.achieved, budget);
        }
        Command::Train {
            model,
            data,
            mask,
            train,
            out,
            metrics,
        } => {
            require(&[&model, &data])?;
            require_opt(&[&mask])?;
            let (m, _) = load_model(&model)?;
            let mask = match &mask {
                Some(p) => read_report(p)?.mask(),
                None => FreezeMask::all_trainable(),
            };
            let (trained, tm) = sparse_finetune(&m, &tokenized(read_adapted(&data)?), &mask, &train.config(seed))?;
            save_model(&out, &trained, Some(&mask))?;
            write_json(&metrics, &tm)?;
            println!(
                "final loss={:.6} train accuracy={:.4} macro_f1={:.4}",
                tm.epoch_loss.last().copied().unwrap_or(f64::NAN),
                tm.accuracy,
                tm.macro_f1
            );
        }
        Command::Eval { model, data, out } => {
            require(&[&model, &data])?;
            let (m, _) = load_model(&model)?;
            let metrics = evaluate(&m, &tokenized(read_adapted(&data)?))?;
            write_json(&out, &metrics)?;
            println!("accuracy={:.4} macro_f1={:.4}", metrics.accuracy, metrics.macro_f1);
        }
        Command::Stability {
            runs,
            seeds,
            data,
            pipeline,
            out,
        } => {
            let seeds = match seeds {
                Some(s) => parse_seeds(&s)?,
                None => (0..runs as u64).collect(),
            };
            if seeds.len() != runs {
                return Err(Error::Config(format!("{} seeds given for {runs} runs", seeds.len())).into());
            }
            let builtin = data.vocab.is_none();
            let (vocab, train, test) = load_data(&data, seed)?;
            let report = stability(&vocab, &train, &test, &pipeline.config(builtin, seed), &seeds)?;
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
            println!("runs={} budget={}", report.runs, report.budget);
            println!("masked macro_f1 mean={:.4} std={:.4}", report.masked_mean, report.masked_std);
            println!("full macro_f1 mean={:.4} std={:.4}", report.full_mean, report.full_std);
        }
        Command::All { data, pipeline, out_dir } => {
            let builtin = data.vocab.is_none();
            let (vocab, train, test) = load_data(&data, seed)?;
            let cfg = pipeline.config(builtin, seed);
            let out = run_pipeline(&vocab, &train, &test, &cfg)?;
            out.write_artifacts(&out_dir)?;
            println!(
                "mined={} selected={} task_tokens={} achieved={:.4}",
                out.mined.len(),
                out.selected.len(),
                out.task_vocab.len(),
                out.report.achieved
            );
            println!("test accuracy={:.4} macro_f1={:.4}", out.eval.accuracy, out.eval.macro_f1);
        }
        Command::GenBigram {
            train,
            test,
            fillers,
            out_dir,
        } => {
            let task = bigram_task(&BigramTaskConfig {
                train,
                test,
                fillers,
                seed,
            });
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            let vocab_path = out_dir.join("vocab.txt");
            std::fs::write(&vocab_path, task.vocab.join("\n") + "\n").map_err(|e| Error::Io {
                path: vocab_path,
                source: e,
            })?;
            write_corpus(&out_dir.join("train.jsonl"), &task.train)?;
            write_corpus(&out_dir.join("test.jsonl"), &task.test)?;
            println!("wrote {} train and {} test documents", task.train.len(), task.test.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: ConfigError: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = f.error.to_string().replace('\n', " ");
            eprintln!("error: {}: {}", f.error.kind(), msg);
            ExitCode::from(f.code)
        }
    }
}
