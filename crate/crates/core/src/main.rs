use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use diln::batch::{topic_usage, train_batch, TrainOutput};
use diln::checkpoint::{Checkpoint, Manifest};
use diln::config::{RunConfig, Trainer};
use diln::corpus::{load_corpus, split_heldout, Corpus};
use diln::eval::{evaluate_corpus, EvalConfig};
use diln::export;
use diln::generative::{generate_corpus, SyntheticConfig};
use diln::mat::Mat;
use diln::model::Mode;
use diln::stochastic::train_stochastic;
use diln::{Error, Result};

#[derive(Parser)]
#[command(
    name = "diln",
    version,
    about = "Discrete infinite logistic normal topic model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Settings {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable), e.g. --set truncation=50
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    trainer: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Settings {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        let flags = [
            (
                "corpus",
                self.corpus.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "vocab",
                self.vocab.as_ref().map(|p| p.display().to_string()),
            ),
            (
                "output",
                self.output.as_ref().map(|p| p.display().to_string()),
            ),
            ("trainer", self.trainer.clone()),
            ("mode", self.mode.clone()),
            ("seed", self.seed.map(|s| s.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.json, trace.tsv and manifest.json per run
    Train(Settings),
    /// Held-out document-completion perplexity of a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = diln::eval::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "corpus")]
        pooling: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Most probable words of each topic, topics ordered by usage
    ExportTopics {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = export::DEFAULT_TOP_WORDS)]
        n_words: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Cosine matrix of topic locations
    ExportCorrelations {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Training documents most similar to a query document
    ExportDocSimilarity {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        query: usize,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic corpus from the model
    Sample {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = SyntheticConfig::default().n_docs)]
        docs: usize,
        #[arg(long, default_value_t = SyntheticConfig::default().vocab_size)]
        vocab_size: usize,
        #[arg(long, default_value_t = SyntheticConfig::default().n_topics)]
        topics: usize,
        #[arg(long, default_value_t = SyntheticConfig::default().latent_dim)]
        dim: usize,
        #[arg(long, default_value_t = SyntheticConfig::default().location_var)]
        location_var: f64,
        #[arg(long, default_value_t = SyntheticConfig::default().alpha)]
        alpha: f64,
        #[arg(long, default_value_t = SyntheticConfig::default().beta)]
        beta: f64,
        #[arg(long, default_value_t = SyntheticConfig::default().gamma0)]
        gamma0: f64,
        #[arg(long, default_value_t = SyntheticConfig::default().mean_doc_len)]
        length: f64,
        #[arg(long, default_value_t = SyntheticConfig::default().seed)]
        seed: u64,
    },
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => Ok(fs::write(p, text).map_err(Error::file(p))?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config {
        field: field.into(),
        msg: "required for training".into(),
    })
}

fn train_one(run: &RunConfig, train: &Corpus, test: Option<&Corpus>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::file(dir))?;
    let eval_cfg = run.eval()?;
    let out: TrainOutput = match run.trainer {
        Trainer::Batch => train_batch(train, &run.batch()?)?,
        Trainer::Stochastic => {
            let cfg = run.stochastic()?;
            let mut hook = |_: usize, _: u64, g: &diln::model::GlobalState| {
                test.and_then(|t| evaluate_corpus(t, g, &eval_cfg).ok())
                    .map(|r| r.perplexity)
            };
            train_stochastic(
                train,
                &cfg,
                if test.is_some() {
                    Some(&mut hook)
                } else {
                    None
                },
            )?
        }
    };
    let mut trace = out.trace;
    let usage = topic_usage(train.docs(), &out.states);
    let mut ckpt = Checkpoint::new(run.model()?, trace.records.len(), out.global, usage);
    if ckpt.global.mode == Mode::Diln {
        let rows: Vec<Vec<f64>> = out.states.iter().map(|s| s.u.clone()).collect();
        ckpt.doc_locations = Some(Mat::from_rows(&rows));
    }
    if let Some(t) = test {
        let report = evaluate_corpus(t, &ckpt.global, &eval_cfg)?;
        trace
            .evaluations
            .push((trace.records.len(), report.perplexity));
        fs::write(dir.join("heldout.tsv"), report.to_tsv())?;
        log::info!("held-out perplexity {:.4}", report.perplexity);
    }
    let hash = ckpt.save(&dir.join("checkpoint.json"))?;
    let mut tsv = trace.to_tsv();
    for (it, p) in &trace.evaluations {
        tsv.push_str(&format!("# perplexity\t{it}\t{p}\n"));
    }
    fs::write(dir.join("trace.tsv"), tsv)?;
    Manifest::new(serde_json::to_value(run)?, run.seed, hash).save(&dir.join("manifest.json"))?;
    println!("{}", dir.display());
    Ok(())
}

fn cmd_train(settings: &Settings) -> Result<()> {
    let cfg = settings.resolve()?;
    let corpus = load_corpus(
        required(&cfg.corpus, "corpus")?,
        required(&cfg.vocab, "vocab")?,
    )?;
    let (train, test) = if cfg.heldout > 0 {
        let (tr, te) = split_heldout(&corpus, cfg.heldout, cfg.seed)?;
        (tr, Some(te))
    } else {
        (corpus, None)
    };
    let runs = cfg.sweep();
    for run in &runs {
        let dir = if runs.len() == 1 {
            cfg.output.clone()
        } else {
            cfg.output.join(run.label())
        };
        train_one(run, &train, test.as_ref(), &dir)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(s) => cmd_train(&s),
        Command::Eval {
            checkpoint,
            corpus,
            vocab,
            samples,
            seed,
            pooling,
            output,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let test = load_corpus(&corpus, &vocab)?;
            let cfg = EvalConfig {
                n_samples: samples,
                seed,
                pooling: pooling.parse()?,
                ..EvalConfig::default()
            };
            let report = evaluate_corpus(&test, &ckpt.global, &cfg)?;
            emit(output.as_deref(), &report.to_tsv())
        }
        Command::ExportTopics {
            checkpoint,
            vocab,
            n_words,
            output,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let vocab = diln::corpus::parse_vocabulary(
                &fs::read_to_string(&vocab).map_err(Error::file(&vocab))?,
            )?;
            if vocab.len() != ckpt.global.vocab_size() {
                return Err(Error::Validation(format!(
                    "vocabulary has {} terms but the model has {}",
                    vocab.len(),
                    ckpt.global.vocab_size()
                )));
            }
            let topics = export::top_words(&ckpt.global, &ckpt.topic_usage, n_words)?;
            emit(output.as_deref(), &export::topics_to_tsv(&topics, &vocab))
        }
        Command::ExportCorrelations { checkpoint, output } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            emit(
                output.as_deref(),
                &export::matrix_to_tsv(&export::correlations(&ckpt.global)?),
            )
        }
        Command::ExportDocSimilarity {
            checkpoint,
            query,
            top,
            output,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let locations = match (&ckpt.doc_locations, ckpt.global.mode) {
                (_, Mode::Hdp) => {
                    return Err(Error::Mode(
                        "HDP checkpoints have no document locations".into(),
                    ))
                }
                (None, _) => return Err(Error::Checkpoint("no document locations stored".into())),
                (Some(u), _) => u,
            };
            let ranked = export::doc_similarity(locations, ckpt.global.mode, query, top)?;
            emit(
                output.as_deref(),
                &export::similarity_to_tsv(query, &ranked),
            )
        }
        Command::Sample {
            output,
            docs,
            vocab_size,
            topics,
            dim,
            location_var,
            alpha,
            beta,
            gamma0,
            length,
            seed,
        } => {
            let cfg = SyntheticConfig {
                n_docs: docs,
                vocab_size,
                n_topics: topics,
                latent_dim: dim,
                location_var,
                alpha,
                beta,
                gamma0,
                mean_doc_len: length,
                seed,
            };
            let (corpus, truth) = generate_corpus(&cfg)?;
            fs::create_dir_all(&output).map_err(Error::file(&output))?;
            corpus.write(&output.join("docs.txt"), &output.join("vocab.txt"))?;
            fs::write(output.join("truth.json"), serde_json::to_string(&truth)?)?;
            println!("{}", output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error: {}: {}",
                e.category(),
                e.to_string().replace('\n', " ")
            );
            ExitCode::FAILURE
        }
    }
}
