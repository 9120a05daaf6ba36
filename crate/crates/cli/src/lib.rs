//! Command-line workflows over `clinqa-core`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use clinqa_core::config::{BackendConfig, PipelineConfig};
use clinqa_core::metrics::{self, EvalReport, SweepPoint};
use clinqa_core::model::{read_annotations, write_annotations, AnnotatedDocument};
use clinqa_core::postprocess::{extract_document, gold_records, DocumentInput, ExtractionRecord};
use clinqa_core::preprocess::{assemble_document, check_qids, split_dataset, ExampleKind, QAExample};
use clinqa_core::reader::{
    compute_scores, AnnotationGold, ExampleGold, GoldSource, NoiseConfig, NoisyOracleReader, OracleReader, ReadRequest,
    Reader, ReaderInput, RemoteReader,
};
use clinqa_core::squad::{emit_squad, read_squad};
use clinqa_core::templates::Direction;

pub const CONFIG_ENV: &str = "CLINQA_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "clinqa", version, about = "Clinical text structuring through extractive QA")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON pipeline config. Defaults to the built-in demo registry.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Override the verifier threshold.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Override the worker count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Disable sentence splitting of multi-span answers.
    #[arg(long, global = true)]
    pub no_splitting: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Annotated JSONL to train/dev/test SQuAD files.
    GenerateDataset {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the two-stage extraction over documents.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score extraction records against gold records.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Show one example with its answer marked.
    Inspect {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        qid: String,
    },
    /// Answerability accuracy over a grid of thresholds.
    SweepThreshold {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 41)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic annotated corpus.
    Synth {
        #[arg(long, default_value_t = 50)]
        docs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn load_config(args: &GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::demo(),
    };
    if let Some(d) = args.delta {
        cfg.verifier.delta = d;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if args.no_splitting {
        cfg.enable_splitting = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(cfg.workers.max(1)).build()?)
}

pub fn read_docs(path: &Path, cfg: &PipelineConfig) -> Result<Vec<AnnotatedDocument>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_annotations(BufReader::new(f), Some(&cfg.types)).with_context(|| format!("reading {}", path.display()))
}

pub fn read_records(path: &Path) -> Result<Vec<ExtractionRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[ExtractionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn boxed<G: GoldSource + 'static>(cfg: &PipelineConfig, gold: G) -> Result<Box<dyn Reader>> {
    Ok(match &cfg.backend {
        BackendConfig::Oracle => Box::new(OracleReader { gold }),
        BackendConfig::NoisyOracle { boundary_jitter, flip_prob, temperature, seed } => Box::new(NoisyOracleReader {
            gold,
            noise: NoiseConfig { boundary_jitter: *boundary_jitter, flip_prob: *flip_prob, temperature: *temperature },
            seed: *seed,
        }),
        BackendConfig::Remote { endpoint, timeout_ms, attempts } => {
            let Some(endpoint) = endpoint else { bail!("remote backend selected but no endpoint configured") };
            Box::new(RemoteReader::new(endpoint, Duration::from_millis(*timeout_ms), *attempts)?)
        }
    })
}

/// Reader for free documents; oracle backends answer from the annotations.
pub fn document_reader(cfg: &PipelineConfig, docs: &[AnnotatedDocument]) -> Result<Box<dyn Reader>> {
    let gold = match cfg.backend {
        BackendConfig::Remote { .. } => AnnotationGold::new(&[], cfg)?,
        _ => AnnotationGold::new(docs, cfg)?,
    };
    boxed(cfg, gold)
}

/// Reader for dataset examples; oracle backends answer from the examples.
pub fn example_reader(cfg: &PipelineConfig, examples: &[QAExample]) -> Result<Box<dyn Reader>> {
    boxed(cfg, ExampleGold::new(examples))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub documents: usize,
    pub total: usize,
    pub answerable: usize,
    pub impossible: usize,
    pub by_kind: BTreeMap<String, usize>,
    pub by_direction: BTreeMap<String, usize>,
    pub by_granularity: BTreeMap<String, usize>,
    pub splits: BTreeMap<String, usize>,
    pub diagnostics: Vec<String>,
}

fn kind_name(k: ExampleKind) -> &'static str {
    match k {
        ExampleKind::Answer => "answer",
        ExampleKind::NaturalEmpty => "natural_empty",
        ExampleKind::Constructed => "constructed",
    }
}

pub fn cmd_generate_dataset(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<GenerationSummary> {
    let docs = read_docs(input, cfg)?;
    let assembled = pool(cfg)?.install(|| docs.par_iter().map(|d| assemble_document(d, cfg)).collect::<Vec<_>>());
    let mut examples = Vec::new();
    let mut summary = GenerationSummary { documents: docs.len(), ..Default::default() };
    for a in assembled {
        let a = a?;
        examples.extend(a.examples);
        summary.diagnostics.extend(a.diagnostics.into_iter().map(|d| format!("{}: {}", d.doc_id, d.message)));
    }
    check_qids(&examples)?;
    for e in &examples {
        summary.total += 1;
        if e.is_impossible {
            summary.impossible += 1;
        } else {
            summary.answerable += 1;
        }
        *summary.by_kind.entry(kind_name(e.kind).into()).or_default() += 1;
        *summary.by_direction.entry(e.direction.as_str().into()).or_default() += 1;
        *summary.by_granularity.entry(e.granularity.as_str().into()).or_default() += 1;
    }
    let split = split_dataset(&examples, cfg.dataset.ratios, cfg.dataset.seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, part) in [("train", &split.train), ("dev", &split.dev), ("test", &split.test)] {
        emit_squad(part, &out.join(format!("{name}.json")))?;
        summary.splits.insert(name.into(), part.len());
    }
    write_records(&out.join("gold_records.jsonl"), &gold_records(&docs, cfg)?)?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn cmd_extract(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<Vec<ExtractionRecord>> {
    let docs = read_docs(input, cfg)?;
    let reader = document_reader(cfg, &docs)?;
    let reader = reader.as_ref();
    let results = pool(cfg)?.install(|| {
        docs.par_iter().map(|d| extract_document(&DocumentInput::from(d), cfg, reader)).collect::<Vec<_>>()
    });
    let mut records = Vec::new();
    let mut failure = None;
    for r in results {
        match r {
            Ok(x) => records.extend(x.records),
            Err(e) => {
                records.extend(e.completed.iter().cloned());
                failure.get_or_insert(e);
            }
        }
    }
    write_records(out, &records)?;
    if let Some(e) = failure {
        return Err(anyhow::Error::new(e).context(format!("partial results written to {}", out.display())));
    }
    Ok(records)
}

pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    predictions: &Path,
    gold: &Path,
    report: Option<&Path>,
) -> Result<EvalReport> {
    let r = metrics::evaluate(&read_records(predictions)?, &read_records(gold)?, &cfg.separator)?;
    if let Some(p) = report {
        fs::write(p, serde_json::to_string_pretty(&r)?)?;
    }
    Ok(r)
}

/// Answers as `[[...]]`, plausible answers of impossible questions as `<<...>>`.
pub fn render_example(e: &QAExample) -> String {
    let (marks, open, close) =
        if e.is_impossible { (&e.plausible_answers, "<<", ">>") } else { (&e.answers, "[[", "]]") };
    let mut spans: Vec<_> = marks.iter().map(|a| a.span()).collect();
    spans.sort();
    let mut ctx = String::new();
    for (i, c) in e.context.chars().enumerate() {
        if spans.iter().any(|s| s.start == i) {
            ctx.push_str(open);
        }
        ctx.push(c);
        if spans.iter().any(|s| s.end == i + 1) {
            ctx.push_str(close);
        }
    }
    let direction = match e.direction {
        Direction::QueryRight => "query_right",
        Direction::QueryLeft => "query_left",
        Direction::Ner => "ner",
    };
    format!(
        "qid:         {}\nquestion:    {}\ncontext:     {}\nimpossible:  {}\ndoc:         {} [{}, {})\ntemplate:    {} ({direction})\ngranularity: {}\nkind:        {}\n",
        e.qid,
        e.question,
        ctx,
        e.is_impossible,
        e.doc_id,
        e.context_span.start,
        e.context_span.end,
        e.template_id,
        e.granularity.as_str(),
        kind_name(e.kind),
    )
}

pub fn cmd_inspect(dataset: &Path, qid: &str) -> Result<String> {
    let examples = read_squad(dataset)?;
    match examples.iter().find(|e| e.qid == qid) {
        Some(e) => Ok(render_example(e)),
        None => Err(clinqa_core::Error::NotFound(format!("qid {qid} in {}", dataset.display())).into()),
    }
}

pub fn grid(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![from],
        _ => (0..steps).map(|i| from + (to - from) * i as f64 / (steps - 1) as f64).collect(),
    }
}

pub fn cmd_sweep_threshold(cfg: &PipelineConfig, dataset: &Path, deltas: &[f64]) -> Result<Vec<SweepPoint>> {
    let examples = read_squad(dataset)?;
    let reader = example_reader(cfg, &examples)?;
    let requests: Vec<ReadRequest> = examples
        .iter()
        .map(|e| ReadRequest {
            input: ReaderInput { qid: e.qid.clone(), question: e.question.clone(), context: e.context.clone() },
            doc_id: e.doc_id.clone(),
            context_span: e.context_span,
        })
        .collect();
    let mut scored = Vec::with_capacity(examples.len());
    for chunk in requests.chunks(cfg.extraction.batch_size.max(1)) {
        for out in reader.read_batch(chunk)? {
            let s = compute_scores(&out, &cfg.verifier)?;
            scored.push((s.score_diff, s.mixture));
        }
    }
    let scored: Vec<(f64, f64, bool)> =
        scored.into_iter().zip(&examples).map(|((d, m), e)| (d, m, !e.is_impossible)).collect();
    Ok(metrics::sweep_threshold(&scored, deltas, &cfg.verifier))
}

pub fn cmd_synth(n_docs: usize, seed: u64, out: &Path) -> Result<()> {
    let docs = clinqa_core::synth::synthetic_corpus(n_docs, seed);
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    write_annotations(&mut w, &docs)?;
    w.flush()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = || load_config(&cli.global);
    match &cli.command {
        Command::GenerateDataset { input, out } => {
            let s = cmd_generate_dataset(&cfg()?, input, out)?;
            println!(
                "{} documents, {} examples ({} impossible); train {} / dev {} / test {}",
                s.documents, s.total, s.impossible, s.splits["train"], s.splits["dev"], s.splits["test"]
            );
        }
        Command::Extract { input, out } => {
            let records = cmd_extract(&cfg()?, input, out)?;
            println!("{} records written to {}", records.len(), out.display());
        }
        Command::Evaluate { predictions, gold, report } => {
            let r = cmd_evaluate(&cfg()?, predictions, gold, report.as_deref())?;
            print!("{}", metrics::render_table(&r));
        }
        Command::Inspect { dataset, qid } => print!("{}", cmd_inspect(dataset, qid)?),
        Command::SweepThreshold { dataset, from, to, steps, out } => {
            let points = cmd_sweep_threshold(&cfg()?, dataset, &grid(*from, *to, *steps))?;
            for p in &points {
                println!("{:>10.4}  {}", p.delta, p.accuracy.map_or("n/a".into(), |a| format!("{a:.4}")));
            }
            if let Some(o) = out {
                fs::write(o, serde_json::to_string_pretty(&points)?)?;
            }
        }
        Command::Synth { docs, seed, out } => cmd_synth(*docs, *seed, out)?,
    }
    Ok(())
}
