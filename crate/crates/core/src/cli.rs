//! Command-line front end: `train`, `encode`, `eval`, `inspect`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::decoders::{gram_eigenvalues, orthonormality_error, Decoder, DecoderKind};
use crate::encoder::Pooling;
use crate::error::{Error, Result};
use crate::evaluation::{
    eval_classification, eval_similarity, known_ids, Encoder, LabeledDataset, SimilarityDataset,
};
use crate::representation::{encode_dataset, format_embeddings, RepresentationSpec, Source};
use crate::training::{format_loss_trace, prepare_run, TrainingConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "invsent", version, about = "Sentence encoders with invertible decoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus a per-batch loss trace.
    Train(TrainArgs),
    /// Write one vector per input line.
    Encode(EncodeArgs),
    /// Score a similarity or classification dataset.
    Eval(EvalArgs),
    /// Report decoder diagnostics for a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DecoderArg {
    Linear,
    Bijective,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum RepArg {
    En,
    De,
    EnsembleAvg,
    EnsembleConcat,
    Projected,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolArg {
    Mean,
    Concat3,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Similarity,
    Classification,
}

impl From<RepArg> for Source {
    fn from(r: RepArg) -> Self {
        match r {
            RepArg::En => Source::En,
            RepArg::De => Source::De,
            RepArg::EnsembleAvg => Source::EnsembleAvg,
            RepArg::EnsembleConcat => Source::EnsembleConcat,
            RepArg::Projected => Source::Projected,
        }
    }
}

impl From<PoolArg> for Pooling {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::Mean => Pooling::Mean,
            PoolArg::Concat3 => Pooling::Concat3,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Word vectors, text format, optional `count dim` header.
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long, value_enum)]
    decoder: DecoderArg,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Loss trace path (default: `<out>.loss.tsv`).
    #[arg(long)]
    loss_trace: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    /// Per-direction encoder width d; codes have 2d entries.
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Must match the vector file when given.
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long, default_value_t = 16)]
    hidden_width: usize,
    /// Negative samples per target word.
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 5.0)]
    grad_clip_norm: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Skip the orthonormality retraction after each step.
    #[arg(long)]
    no_parseval: bool,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
}

#[derive(Debug, Args)]
struct RepArgs {
    #[arg(long, value_enum)]
    rep: Option<RepArg>,
    #[arg(long, value_enum)]
    pool: Option<PoolArg>,
    /// Remove the top singular direction over the whole input, per source.
    #[arg(long)]
    wr: bool,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    /// One sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    rep: RepArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    rep: RepArgs,
    /// Seed of the train/test split for classification.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print a single TSV line.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Seed for the random round-trip probes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } => EXIT_NUMERIC,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, out, err),
        Command::Encode(a) => cmd_encode(a, out, err),
        Command::Eval(a) => cmd_eval(a, out, err),
        Command::Inspect(a) => cmd_inspect(a, out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn echo(err: &mut dyn Write, config: serde_json::Value) {
    let _ = writeln!(err, "config {config}");
}

fn write_file(path: &Path, data: &[u8]) -> Result<()> {
    std::fs::write(path, data).map_err(|e| Error::io(path, e))
}

fn cmd_train(a: TrainArgs, _out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let decoder = match a.decoder {
        DecoderArg::Linear => DecoderKind::Linear,
        DecoderArg::Bijective => DecoderKind::Bijective,
    };
    let config = TrainingConfig {
        batch_size: a.batch_size,
        width: a.width,
        word_dim: a.word_dim.unwrap_or(0),
        hidden_width: a.hidden_width,
        negatives: a.negatives,
        learning_rate: a.learning_rate,
        beta: a.beta,
        grad_clip_norm: a.grad_clip_norm,
        seed: a.seed,
        decoder: decoder.as_str().to_string(),
        epochs: a.epochs,
        max_steps: a.max_steps,
        parseval: !a.no_parseval,
        min_count: a.min_count,
    };
    let run = prepare_run(&config, &a.corpus, &a.vectors, a.word_dim)?;
    let trace = a
        .loss_trace
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.tsv", a.out.display())));
    echo(
        err,
        json!({
            "command": "train",
            "corpus": a.corpus,
            "vectors": a.vectors,
            "out": a.out,
            "loss_trace": trace,
            "training": run.config,
        }),
    );
    if !run.missing.is_empty() {
        let _ = writeln!(err, "warning: {} corpus tokens have no vector and are skipped", run.missing.len());
    }
    let (ck, losses) = run.train()?;
    ck.save(&a.out)?;
    write_file(&trace, format_loss_trace(&losses).as_bytes())?;
    let _ = writeln!(
        err,
        "trained {} batches, final loss {:?}",
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn representation(rep: &RepArgs, default: RepresentationSpec, err: &mut dyn Write) -> RepresentationSpec {
    let source = rep.rep.map(Source::from).unwrap_or(default.source);
    if source == Source::Projected && rep.pool.is_some() {
        let _ = writeln!(err, "warning: --rep projected ignores --pool");
    }
    RepresentationSpec {
        source,
        pooling: rep.pool.map(Pooling::from).unwrap_or(default.pooling),
        postprocess: rep.wr,
    }
}

fn spec_json(spec: RepresentationSpec) -> serde_json::Value {
    json!({
        "rep": spec.source.as_str(),
        "pool": spec.pooling.as_str(),
        "wr": spec.postprocess,
    })
}

fn read_sentences(path: &Path, ck: &Checkpoint) -> Result<Vec<Vec<usize>>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            return Err(Error::parse(path, i + 1, "empty line"));
        }
        out.push(known_ids(&ck.vocab, &line, path, i + 1)?);
    }
    Ok(out)
}

fn cmd_encode(a: EncodeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let spec = representation(
        &a.rep,
        RepresentationSpec {
            source: Source::En,
            pooling: Pooling::Mean,
            postprocess: false,
        },
        err,
    );
    echo(
        err,
        json!({
            "command": "encode",
            "model": a.model,
            "input": a.input,
            "out": a.out,
            "representation": spec_json(spec),
        }),
    );
    let ck = Checkpoint::load(&a.model)?;
    let sentences = read_sentences(&a.input, &ck)?;
    let rows = encode_dataset(&ck.model, &ck.vectors, &sentences, spec)?;
    let text = format_embeddings(&rows);
    match &a.out {
        Some(p) => write_file(p, text.as_bytes()),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let (task, default) = match a.task {
        TaskArg::Similarity => ("similarity", RepresentationSpec::similarity_default()),
        TaskArg::Classification => ("classification", RepresentationSpec::classification_default()),
    };
    let default = RepresentationSpec {
        postprocess: false,
        ..default
    };
    let spec = representation(&a.rep, default, err);
    echo(
        err,
        json!({
            "command": "eval",
            "task": task,
            "dataset": a.dataset,
            "model": a.model,
            "seed": a.seed,
            "representation": spec_json(spec),
        }),
    );
    let ck = Checkpoint::load(&a.model)?;
    let enc = Encoder {
        model: &ck.model,
        vectors: &ck.vectors,
        vocab: &ck.vocab,
    };
    let (metric, value, n) = match a.task {
        TaskArg::Similarity => {
            let d = SimilarityDataset::load(&a.dataset)?;
            ("pearson", eval_similarity(enc, &d, spec)?, d.items.len())
        }
        TaskArg::Classification => {
            let d = LabeledDataset::load(&a.dataset)?;
            ("accuracy", eval_classification(enc, &d, spec, a.seed)?, d.items.len())
        }
    };
    let line = if a.quiet {
        format!(
            "{task}\t{}\t{}\t{}\t{metric}\t{value:?}\n",
            spec.source.as_str(),
            spec.pooling.as_str(),
            spec.postprocess
        )
    } else {
        format!("{metric}\t{value:?}\nitems\t{n}\n")
    };
    out.write_all(line.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// Worst `‖f_de(f_de⁻¹(x)) − x‖∞` over `samples` points uniform in
/// `[-1, 1]^{d_v}`, computed in 64-bit on the stored parameters.
pub fn round_trip_error(decoder: &Decoder<f64>, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = decoder.word_dim();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = decoder.forward(&decoder.inverse(&x));
        for (a, b) in x.iter().zip(&y) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn cmd_inspect(a: InspectArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    echo(
        err,
        json!({"command": "inspect", "model": a.model, "seed": a.seed, "samples": a.samples}),
    );
    let ck = Checkpoint::load(&a.model)?;
    let m = &ck.model;
    let w = &m.decoder.linear().w;
    let ev = gram_eigenvalues(w);
    let m64 = m.cast::<f64>();
    let enc_params: usize = m.encoder.tensors().iter().map(|(_, t)| t.len()).sum();
    let dec_params: usize = m.decoder.tensors().iter().map(|(_, t)| t.len()).sum();
    let mut report = vec![
        ("decoder", ck.config.decoder.clone()),
        ("width", m.encoder.width().to_string()),
        ("code_dim", m.code_dim().to_string()),
        ("word_dim", m.word_dim().to_string()),
        ("vocab_size", ck.vocab.size().to_string()),
        ("encoder_parameters", enc_params.to_string()),
        ("decoder_parameters", dec_params.to_string()),
        ("total_parameters", m.parameter_count().to_string()),
        ("orthonormality_error", format!("{:?}", orthonormality_error(w))),
        ("eigenvalue_min", format!("{:?}", ev.first().copied().unwrap_or(f64::NAN))),
        ("eigenvalue_max", format!("{:?}", ev.last().copied().unwrap_or(f64::NAN))),
        (
            "round_trip_error",
            format!("{:?}", round_trip_error(&m64.decoder, a.samples, a.seed)),
        ),
    ];
    if let Decoder::Bijective(b) = &m64.decoder {
        report.push(("max_abs_log_scale", format!("{:?}", max_log_scale(b, &ck))));
    }
    let mut text = String::new();
    for (k, v) in report {
        text.push_str(&format!("{k}\t{v}\n"));
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

/// Largest `|s(x₁)|` seen when pushing the stored word vectors back through
/// the coupling stack.
fn max_log_scale(b: &crate::decoders::BijectiveDecoder<f64>, ck: &Checkpoint) -> f64 {
    let table = ck.vectors.cast::<f64>();
    let mut worst = 0.0f64;
    for id in 0..table.size() {
        let mut y = table.vector(id).to_vec();
        for layer in b.layers.iter().rev() {
            let pass: Vec<f64> = layer.pass_indices().iter().map(|&i| y[i]).collect();
            for s in layer.log_scale(&pass) {
                worst = worst.max(s.abs());
            }
            y = crate::decoders::coupling_invert(layer, &y);
        }
    }
    worst
}
