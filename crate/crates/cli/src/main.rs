mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use k2t_core::backends::{BackendConfig, Backends, Endpoint};
use k2t_core::corpus::{tokenize, FactualTriple, Instance, JsonlRecord as _};
use k2t_core::databuilder::{build, stats, RawSectionRecord, Thresholds};
use k2t_core::descriptor::{abstractive_generate, extractive_generate, GenerationRequest, DEFAULT_MAX_INPUT_TOKENS};
use k2t_core::mafe::{evaluate, MafeConfig, MafeReport};
use k2t_core::rankers::{
    dense_rank, dense_train, neural_rank, rank_rouge2_oracle, rank_tfidf, recall_at_k, seq_fit, seq_rank,
    DenseRankerModel, DenseTrainConfig, FeatureConfig, Query, RankedPassages, SeqRankerModel,
};
use k2t_core::textmetrics::{bertscore_from_vectors, bleu, parent, rouge_l, rouge_n, BleuSmoothing, MetricScore};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

/// Keys-to-text toolkit: passage ranking, generation baselines, surface
/// metrics and QA-based factuality evaluation.
#[derive(Parser)]
#[command(name = "k2t", version)]
struct Cli {
    /// Worker threads for instance-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every stochastic choice.
    #[arg(long, global = true, default_value_t = 13)]
    seed: u64,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BackendArgs {
    /// `mock` or the base URL of a model server. Defaults to the
    /// K2T_BACKEND_URL environment variable, else `mock`.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true, default_value_t = 30.0)]
    timeout: f64,
    /// Maximum concurrent backend requests.
    #[arg(long, global = true, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, global = true, default_value_t = 2)]
    retries: usize,
}

impl BackendArgs {
    fn config(&self) -> Result<BackendConfig> {
        let endpoint = match &self.backend {
            Some(b) => b.parse::<Endpoint>()?,
            None => BackendConfig::from_env()?.endpoint,
        };
        Ok(BackendConfig { endpoint, timeout_secs: self.timeout, max_concurrency: self.concurrency, retries: self.retries })
    }

    fn backends(&self) -> Result<Backends> {
        Ok(Backends::from_config(&self.config()?)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Oracle,
    Tfidf,
    Dense,
    Seq,
    Neural,
}

#[derive(Subcommand)]
enum Command {
    /// Rank each instance's passages.
    Rank {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fitted model for `dense` (required) or `seq`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output budget of the neural ranker.
        #[arg(long, default_value_t = 64)]
        max_tokens: usize,
    },
    #[command(subcommand)]
    Evaluate(Evaluate),
    /// Build instances from raw section records.
    BuildDataset {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "bert-thresh", default_value_t = 0.82)]
        bert_thresh: f64,
        #[arg(long = "rougeL-thresh", default_value_t = 0.25)]
        rouge_l_thresh: f64,
        #[arg(long = "ground-thresh", default_value_t = 0.82)]
        ground_thresh: f64,
    },
    /// Corpus statistics of an instance file.
    Stats {
        #[arg(long)]
        instances: PathBuf,
    },
    /// Extractive baseline: one answering sentence per factual key.
    Extractive {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank passages, serialize the input and call the generate backend.
    Generate {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "seq")]
        ranker: Method,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_INPUT_TOKENS)]
        max_input_tokens: usize,
        #[arg(long, default_value_t = 256)]
        max_tokens: usize,
    },
    /// Train the dense ranker on (query, reference) pairs.
    DenseTrain {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 2.0)]
        lr: f64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1024)]
        hash_dim: usize,
    },
    /// Grid-search the sequential ranker against the oracle order.
    SeqFit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,2")]
        betas: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum Evaluate {
    /// ROUGE, BLEU, BERTScore and PARENT per line pair.
    Surface {
        /// One hypothesis per line.
        #[arg(long)]
        hyp: PathBuf,
        /// One reference per line.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// One JSON array of {entity, key, value} objects per line.
        #[arg(long)]
        triples: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Add-one smoothing for BLEU orders above 1.
        #[arg(long)]
        smooth: bool,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
    },
    /// QA-based factuality against each instance's reference and triples.
    Mafe {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop questions the origin context cannot answer.
        #[arg(long)]
        filter_questions: bool,
        #[arg(long, default_value_t = 8)]
        span_cap: usize,
    },
}

/// Invalid flag combinations that clap cannot express.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let causes: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            eprintln!("{}", json!({ "error": e.to_string(), "causes": causes }));
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<Value> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!(Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("starting the worker pool")?;
    }
    let start = Instant::now();
    let (command, mut summary) = match &cli.command {
        Command::Rank { method, k, input, out, model, max_tokens } => {
            ("rank", rank(&cli, *method, *k, input, out, model.as_ref(), *max_tokens)?)
        }
        Command::Evaluate(Evaluate::Surface { hyp, reference, triples, out, smooth, lambda }) => {
            ("evaluate surface", surface(&cli, hyp, reference, triples.as_ref(), out, *smooth, *lambda)?)
        }
        Command::Evaluate(Evaluate::Mafe { hyp, instances, out, filter_questions, span_cap }) => {
            let config = MafeConfig { span_cap: *span_cap, filter_questions: *filter_questions, ..Default::default() };
            ("evaluate mafe", mafe(&cli, hyp, instances, out, &config)?)
        }
        Command::BuildDataset { raw, out, bert_thresh, rouge_l_thresh, ground_thresh } => {
            let thresholds = Thresholds { bert: *bert_thresh, rouge_l: *rouge_l_thresh, ground: *ground_thresh };
            ("build-dataset", build_dataset(&cli, raw, out, &thresholds)?)
        }
        Command::Stats { instances } => ("stats", serde_json::to_value(stats(&io::instances(instances)?))?),
        Command::Extractive { instances, out } => ("extractive", extractive(&cli, instances, out)?),
        Command::Generate { instances, out, ranker, k, model, max_input_tokens, max_tokens } => {
            let ranking = Ranking { method: *ranker, k: *k, model: model.as_ref(), neural_max_tokens: 64 };
            ("generate", generate(&cli, instances, out, &ranking, *max_input_tokens, *max_tokens)?)
        }
        Command::DenseTrain { input, out, batch_size, lr, epochs, hash_dim } => {
            let config = DenseTrainConfig {
                batch_size: *batch_size,
                lr: *lr,
                epochs: *epochs,
                seed: cli.seed,
                features: FeatureConfig { hash_dim: *hash_dim, ..Default::default() },
                ..Default::default()
            };
            ("dense-train", train_dense(input, out, &config)?)
        }
        Command::SeqFit { input, out, k, alphas, betas } => ("seq-fit", fit_seq(input, out, *k, alphas, betas)?),
    };
    let obj = summary.as_object_mut().expect("summaries are objects");
    obj.insert("command".into(), json!(command));
    obj.insert("elapsed_secs".into(), json!(start.elapsed().as_secs_f64()));
    Ok(summary)
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

struct Ranking<'a> {
    method: Method,
    k: usize,
    model: Option<&'a PathBuf>,
    neural_max_tokens: usize,
}

enum Ranker {
    Oracle,
    Tfidf,
    Dense(Box<DenseRankerModel>),
    Seq(SeqRankerModel),
    Neural(Backends),
}

impl Ranker {
    fn load(ranking: &Ranking, cli: &Cli) -> Result<Self> {
        Ok(match ranking.method {
            Method::Oracle => Ranker::Oracle,
            Method::Tfidf => Ranker::Tfidf,
            Method::Dense => {
                let path = ranking.model.ok_or_else(|| Usage("--model is required for the dense ranker".into()))?;
                let model: DenseRankerModel = io::json(path)?;
                model.validate()?;
                Ranker::Dense(Box::new(model))
            }
            Method::Seq => Ranker::Seq(match ranking.model {
                Some(path) => io::json(path)?,
                None => SeqRankerModel::default(),
            }),
            Method::Neural => Ranker::Neural(cli.backend.backends()?),
        })
    }

    fn rank(&self, instance: &Instance, k: usize, max_tokens: usize) -> Result<RankedPassages> {
        Ok(match self {
            Ranker::Oracle => rank_rouge2_oracle(instance, k),
            Ranker::Tfidf => rank_tfidf(instance, k),
            Ranker::Dense(m) => dense_rank(m, instance, k),
            Ranker::Seq(m) => seq_rank(m, instance, k),
            Ranker::Neural(b) => neural_rank(instance, k, &*b.generate, max_tokens)
                .with_context(|| format!("ranking `{}`", instance.entity))?,
        })
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        bail!(Usage("--k must be at least 1".into()));
    }
    Ok(())
}

fn rank(
    cli: &Cli,
    method: Method,
    k: usize,
    input: &Path,
    out: &Path,
    model: Option<&PathBuf>,
    max_tokens: usize,
) -> Result<Value> {
    check_k(k)?;
    let ranking = Ranking { method, k, model, neural_max_tokens: max_tokens };
    let ranker = Ranker::load(&ranking, cli)?;
    let instances = io::instances(input)?;
    let ranked: Vec<RankedPassages> =
        instances.par_iter().map(|i| ranker.rank(i, k, ranking.neural_max_tokens)).collect::<Result<_>>()?;
    io::write_jsonl(out, &ranked)?;
    let recall = mean(instances.iter().zip(&ranked).map(|(i, r)| recall_at_k(r, &rank_rouge2_oracle(i, k), k)));
    Ok(json!({
        "method": method,
        "k": k,
        "instances": instances.len(),
        "recall_at_k_percent": 100.0 * recall,
        "out": out,
    }))
}

#[derive(Serialize)]
struct SurfaceScores {
    line: usize,
    rouge1: MetricScore,
    rouge2: MetricScore,
    #[serde(rename = "rougeL")]
    rouge_l: MetricScore,
    bleu: f64,
    bertscore: MetricScore,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent: Option<MetricScore>,
}

fn surface(
    cli: &Cli,
    hyp: &Path,
    reference: &Path,
    triples: Option<&PathBuf>,
    out: &Path,
    smooth: bool,
    lambda: f64,
) -> Result<Value> {
    let hyps = io::lines(hyp)?;
    let refs = io::lines(reference)?;
    if hyps.len() != refs.len() {
        bail!("{} hypotheses but {} references", hyps.len(), refs.len());
    }
    let tables = match triples {
        Some(path) => {
            let t = io::triples(path)?;
            if t.len() != hyps.len() {
                bail!("{} hypotheses but {} triple lines", hyps.len(), t.len());
            }
            Some(t)
        }
        None => None,
    };
    let smoothing = if smooth { BleuSmoothing::AddOne } else { BleuSmoothing::None };
    let backends = cli.backend.backends()?;
    let cands: Vec<_> = hyps.iter().map(|h| tokenize(h)).collect();
    let golds: Vec<_> = refs.iter().map(|r| tokenize(r)).collect();

    let scores: Vec<SurfaceScores> = (0..hyps.len())
        .into_par_iter()
        .map(|i| {
            let (c, r) = (&cands[i], &golds[i]);
            let vectors = backends.embed.embed_tokens(&[hyps[i].clone(), refs[i].clone()])?;
            let bertscore = bertscore_from_vectors(&vectors[0], &vectors[1]).unwrap_or_else(|e| {
                log::debug!("line {}: BERTScore undefined ({e}), scored 0", i + 1);
                MetricScore::from_pr(0.0, 0.0)
            });
            let parent = match &tables {
                Some(t) => Some(parent(c, r, &t[i], lambda, 2)?),
                None => None,
            };
            Ok(SurfaceScores {
                line: i + 1,
                rouge1: rouge_n(c, r, 1),
                rouge2: rouge_n(c, r, 2),
                rouge_l: rouge_l(c, r),
                bleu: bleu(std::slice::from_ref(c), std::slice::from_ref(r), 4, smoothing)?,
                bertscore,
                parent,
            })
        })
        .collect::<Result<_>>()?;
    io::write_jsonl(out, &scores)?;

    let means = |f: &dyn Fn(&SurfaceScores) -> MetricScore| {
        json!({
            "precision": mean(scores.iter().map(|s| f(s).precision)),
            "recall": mean(scores.iter().map(|s| f(s).recall)),
            "f1": mean(scores.iter().map(|s| f(s).f1)),
        })
    };
    let mut summary = json!({
        "pairs": scores.len(),
        "rouge1": means(&|s| s.rouge1),
        "rouge2": means(&|s| s.rouge2),
        "rougeL": means(&|s| s.rouge_l),
        "bleu": mean(scores.iter().map(|s| s.bleu)),
        "corpus_bleu": bleu(&cands, &golds, 4, smoothing)?,
        "bertscore": means(&|s| s.bertscore),
        "out": out,
    });
    if tables.is_some() {
        summary["parent"] = means(&|s| s.parent.expect("parent computed for every line"));
    }
    Ok(summary)
}

fn mafe(cli: &Cli, hyp: &Path, instances: &Path, out: &Path, config: &MafeConfig) -> Result<Value> {
    let hyps = io::lines(hyp)?;
    let instances = io::instances(instances)?;
    if hyps.len() != instances.len() {
        bail!("{} hypotheses but {} instances", hyps.len(), instances.len());
    }
    let backends = cli.backend.backends()?;
    let reports: Vec<MafeReport> = hyps
        .par_iter()
        .zip(&instances)
        .enumerate()
        .map(|(n, (h, inst))| {
            let triples: Vec<FactualTriple> = inst.triples();
            evaluate(h, &inst.reference, &triples, &backends, config)
                .with_context(|| format!("instance {} (`{}`)", n + 1, inst.entity))
        })
        .collect::<Result<_>>()?;
    io::write_jsonl(out, &reports)?;
    Ok(json!({
        "instances": reports.len(),
        "recall": mean(reports.iter().map(|r| r.recall)),
        "precision": mean(reports.iter().map(|r| r.precision)),
        "f1": mean(reports.iter().map(|r| r.f1)),
        "questions": reports.iter().map(|r| r.items.len()).sum::<usize>(),
        "qg_failures": reports.iter().map(|r| r.diagnostics.qg_failures).sum::<usize>(),
        "filtered": reports.iter().map(|r| r.diagnostics.filtered).sum::<usize>(),
        "empty_hypotheses": reports.iter().filter(|r| r.diagnostics.empty_hypothesis).count(),
        "out": out,
    }))
}

fn build_dataset(cli: &Cli, raw: &Path, out: &Path, thresholds: &Thresholds) -> Result<Value> {
    for (name, t) in [("--bert-thresh", thresholds.bert), ("--rougeL-thresh", thresholds.rouge_l), ("--ground-thresh", thresholds.ground)] {
        if !(0.0..=1.0).contains(&t) {
            bail!(Usage(format!("{name} must lie in [0, 1], got {t}")));
        }
    }
    let records: Vec<RawSectionRecord> =
        k2t_core::corpus::read_jsonl(raw).with_context(|| format!("reading raw records from {}", raw.display()))?;
    let backends = cli.backend.backends()?;
    let output = build(&records, &*backends.embed, thresholds)?;
    for inst in &output.instances {
        inst.check().map_err(|m| anyhow::anyhow!("built an invalid instance for `{}`: {m}", inst.entity))?;
    }
    io::write_jsonl(out, &output.instances)?;
    let mut summary = serde_json::to_value(&output.report)?;
    summary["out"] = json!(out);
    Ok(summary)
}

fn extractive(cli: &Cli, instances: &Path, out: &Path) -> Result<Value> {
    let instances = io::instances(instances)?;
    let backends = cli.backend.backends()?;
    let outputs: Vec<_> = instances
        .par_iter()
        .map(|i| extractive_generate(i, &backends).with_context(|| format!("instance `{}`", i.entity)))
        .collect::<Result<_>>()?;
    io::write_jsonl(out, &outputs)?;
    Ok(json!({
        "instances": outputs.len(),
        "sentences": outputs.iter().map(|o| o.sentences.len()).sum::<usize>(),
        "all_unanswerable": outputs.iter().filter(|o| o.all_unanswerable).count(),
        "out": out,
    }))
}

fn generate(
    cli: &Cli,
    instances: &Path,
    out: &Path,
    ranking: &Ranking,
    max_input_tokens: usize,
    max_tokens: usize,
) -> Result<Value> {
    check_k(ranking.k)?;
    let ranker = Ranker::load(ranking, cli)?;
    let instances = io::instances(instances)?;
    let backends = cli.backend.backends()?;
    let outputs: Vec<_> = instances
        .par_iter()
        .map(|inst| {
            let ranked = ranker.rank(inst, ranking.k, ranking.neural_max_tokens)?;
            let req = GenerationRequest::new(inst, &ranked, ranked.order.len())?;
            abstractive_generate(&req, &*backends.generate, max_input_tokens, max_tokens)
                .with_context(|| format!("instance `{}`", inst.entity))
        })
        .collect::<Result<_>>()?;
    io::write_jsonl(out, &outputs)?;
    Ok(json!({
        "instances": outputs.len(),
        "ranker": ranking.method,
        "k": ranking.k,
        "input_truncated": outputs.iter().filter(|o| o.input_truncated).count(),
        "output_truncated": outputs.iter().filter(|o| o.output_truncated).count(),
        "out": out,
    }))
}

fn train_dense(input: &Path, out: &Path, config: &DenseTrainConfig) -> Result<Value> {
    let instances = io::instances(input)?;
    let pairs: Vec<(Query, String)> = instances.iter().map(|i| (Query::from_instance(i), i.reference.clone())).collect();
    let outcome = dense_train(&pairs, config)?;
    io::write_json(out, &outcome.model)?;
    Ok(json!({
        "pairs": pairs.len(),
        "config": config,
        "epoch_losses": outcome.epoch_losses,
        "out": out,
    }))
}

fn fit_seq(input: &Path, out: &Path, k: usize, alphas: &[f64], betas: &[f64]) -> Result<Value> {
    check_k(k)?;
    let instances = io::instances(input)?;
    let grid: Vec<(f64, f64)> = alphas.iter().flat_map(|&a| betas.iter().map(move |&b| (a, b))).collect();
    let model = seq_fit(&instances, k, &grid)?;
    io::write_json(out, &model)?;
    let recall = mean(instances.iter().map(|i| recall_at_k(&seq_rank(&model, i, k), &rank_rouge2_oracle(i, k), k)));
    Ok(json!({
        "instances": instances.len(),
        "grid_points": grid.len(),
        "model": model,
        "train_recall_at_k_percent": 100.0 * recall,
        "out": out,
    }))
}
