use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmt_core::data::{
    build_vocab, generate_synthetic_task, load_text, save_parallel_text, save_visual_features, SyntheticSpec,
};
use mmt_core::embeddings::{
    load_word_vectors, pretrained_table, save_word_vectors, WordVectors, DEFAULT_EMBEDDING_DIM, DEFAULT_TOP_K,
    DEFAULT_VOCAB_SIZE, PAD,
};
use mmt_core::evaluation::{format_mean_sd, token_frequencies, EvaluationReport, DEFAULT_BUCKET_EDGES};
use mmt_core::experiment::{
    ablation_csv, run_ablation_matrix, run_experiment, write_outcome, AblationMatrix, DataConfig, ExperimentConfig,
    ExperimentData, FileData, SplitPaths,
};
use mmt_core::model::load_checkpoint;
use mmt_core::{Error, Result};

/// Multimodal translation with embedding-prediction decoding.
#[derive(Parser)]
#[command(name = "mmt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align word vectors to a corpus vocabulary and apply all-but-the-top.
    PrepEmbeddings(PrepArgs),
    /// Train, evaluate and save one configuration.
    Train(TrainArgs),
    /// Translate a text file with a saved model.
    Translate(TranslateArgs),
    /// Score hypotheses against references.
    Evaluate(EvaluateArgs),
    /// Run an ablation matrix and write its table.
    Ablate(AblateArgs),
    /// Generate the synthetic substitution task.
    Synth(SynthArgs),
}

#[derive(Args)]
struct PrepArgs {
    /// Word vector file (text format, optional header line).
    #[arg(long)]
    vectors: PathBuf,
    /// Training side of the corpus whose vocabulary the table covers.
    #[arg(long)]
    corpus: PathBuf,
    /// Vocabulary size including the four reserved tokens.
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    /// Principal components to remove; 0 only centers.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    /// Expected vector dimension.
    #[arg(long, default_value_t = DEFAULT_EMBEDDING_DIM)]
    dim: usize,
    /// Output word vector file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds; runs each into `seed-<n>` and reports test BLEU mean±sd.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
    seeds: Vec<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TranslateArgs {
    /// Model checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// One source sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// One translation per line.
    #[arg(long)]
    out: PathBuf,
    /// Maximum output tokens per sentence.
    #[arg(long, default_value_t = 100)]
    max_len: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Hypotheses, one per line.
    #[arg(long)]
    hyp: PathBuf,
    /// References, one per line.
    #[arg(long)]
    r#ref: PathBuf,
    /// Target side of the training corpus, for word frequencies.
    #[arg(long)]
    train_corpus: Option<PathBuf>,
    /// Lower edges of the frequency buckets.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BUCKET_EDGES)]
    edges: Vec<u64>,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Base experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// `init` (initialization/fine-tuning) or `visual` (visual ablations).
    #[arg(long)]
    matrix: AblationMatrix,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV path; defaults to `<output_dir>/ablation_<matrix>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Task specification (JSON); defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the specification seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn config_error(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn prep_embeddings(a: &PrepArgs) -> Result<()> {
    let raw = load_word_vectors(&a.vectors, Some(a.dim))?;
    let corpus = load_text(&a.corpus)?;
    let vocab = build_vocab(&corpus, a.vocab_size);
    let (table, report) = pretrained_table(&raw, &vocab, Some(a.top_k))?;
    let report = report.expect("debias requested");
    let tokens = &vocab.tokens()[PAD + 1..];
    let rows: Vec<&[f64]> = (PAD + 1..vocab.len()).map(|i| table.matrix().row(i)).collect();
    save_word_vectors(&a.out, tokens, &rows)?;
    let covered = vocab.tokens().iter().filter(|t| raw.get(t).is_some()).count();
    println!("vocabulary: {} tokens, {covered} with pretrained vectors", vocab.len());
    println!("rows used for statistics: {}", report.rows_used);
    let mean_norm = report.mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("removed mean vector (norm {mean_norm:.4})");
    for (i, v) in report.explained_variance.iter().enumerate() {
        println!("removed component {}: variance {v:.4}", i + 1);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.train.seed = s;
    }
    Ok(config)
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut config = load_config(&a.config, a.seed)?;
    if let Some(out) = &a.out {
        config.output_dir = out.clone();
    }
    let data = ExperimentData::load(&config)?;
    if a.seeds.is_empty() {
        let outcome = run_experiment(&config, &data)?;
        write_outcome(&config, &outcome, &config.output_dir)?;
        println!("val BLEU {:.2}", outcome.val_bleu);
        println!("test BLEU {:.2}", outcome.test_bleu);
        println!("wrote {}", config.output_dir.display());
        return Ok(());
    }
    let mut scores = Vec::new();
    for &seed in &a.seeds {
        let mut c = config.clone();
        c.train.seed = seed;
        c.output_dir = config.output_dir.join(format!("seed-{seed}"));
        let outcome = run_experiment(&c, &data)?;
        write_outcome(&c, &outcome, &c.output_dir)?;
        println!("seed {seed}: val BLEU {:.2} test BLEU {:.2}", outcome.val_bleu, outcome.test_bleu);
        scores.push(outcome.test_bleu);
    }
    let summary = format_mean_sd(&scores)?;
    fs::create_dir_all(&config.output_dir)?;
    fs::write(config.output_dir.join("test_bleu.txt"), format!("{summary}\n"))?;
    println!("test BLEU {summary}");
    Ok(())
}

fn translate(a: &TranslateArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let sentences = load_text(&a.input)?;
    if a.batch_size == 0 {
        return Err(config_error("--batch-size must be positive"));
    }
    let out = model.translate_sentences(&sentences, a.max_len, a.batch_size)?;
    let text: String = out.iter().map(|s| s.join(" ") + "\n").collect();
    fs::write(&a.out, text)?;
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let hyp = load_text(&a.hyp)?;
    let refs = load_text(&a.r#ref)?;
    if hyp.len() != refs.len() {
        return Err(config_error(format!(
            "{} hypotheses but {} references",
            hyp.len(),
            refs.len()
        )));
    }
    let freq = match &a.train_corpus {
        Some(p) => token_frequencies(&load_text(p)?),
        None => Default::default(),
    };
    let report = EvaluationReport::build(&hyp, &refs, &freq, &a.edges)?;
    report.write(&a.out)?;
    print!("{}", report.summary());
    Ok(())
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let config = load_config(&a.config, a.seed)?;
    let data = ExperimentData::load(&config)?;
    let results = run_ablation_matrix(&config, &data, &a.matrix.rows())?;
    let csv = ablation_csv(&results)?;
    let name = match a.matrix {
        AblationMatrix::Initialization => "init",
        AblationMatrix::Visual => "visual",
    };
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| config.output_dir.join(format!("ablation_{name}.csv")));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn save_vectors(path: &Path, v: &WordVectors) -> Result<()> {
    let (tokens, rows): (Vec<&str>, Vec<&[f64]>) = v.iter().unzip();
    save_word_vectors(path, &tokens, &rows)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &a.spec {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(config_error)?,
        None => SyntheticSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let task = generate_synthetic_task(&spec)?;
    let dir = &a.out;
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (name, corpus) in [("train", &task.train), ("val", &task.val), ("test", &task.test)] {
        let p = SplitPaths {
            source: PathBuf::from(format!("{name}.src")),
            target: PathBuf::from(format!("{name}.tgt")),
            images: Some(PathBuf::from(format!("{name}.img"))),
        };
        save_parallel_text(corpus, dir.join(&p.source), dir.join(&p.target), Some(&dir.join(p.images.as_ref().unwrap())))?;
        paths.push(p);
    }
    save_visual_features(dir.join("features.mmvf"), &task.features)?;
    save_vectors(&dir.join("source.vec"), &task.source_vectors)?;
    save_vectors(&dir.join("target.vec"), &task.target_vectors)?;
    fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&spec).map_err(Error::from)? + "\n")?;

    let [train, val, test]: [SplitPaths; 3] = paths.try_into().expect("three splits");
    let mut config = ExperimentConfig::synthetic(spec.clone());
    config.data = DataConfig::Files(FileData {
        train,
        val,
        test,
        features: Some("features.mmvf".into()),
    });
    config.embeddings.source_vectors = Some("source.vec".into());
    config.embeddings.target_vectors = Some("target.vec".into());
    config.model.vocab_size = spec.vocab_size + mmt_core::embeddings::NUM_RESERVED;
    config.model.embedding_dim = spec.embedding_dim;
    config.model.latent_dim = spec.feature_dim;
    config.output_dir = "run".into();
    fs::write(dir.join("config.json"), config.to_json()?)?;
    println!(
        "wrote {} train / {} val / {} test pairs to {}",
        task.train.len(),
        task.val.len(),
        task.test.len(),
        dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::PrepEmbeddings(a) => prep_embeddings(a),
        Command::Train(a) => train(a),
        Command::Translate(a) => translate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
