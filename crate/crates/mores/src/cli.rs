//! Command-line front end. `main` parses [`Cli`] and calls [`run`].

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mores_core::cost::Path as CostPath;
use mores_core::metrics::{noninferiority_test, Metric, RunFile};
use mores_core::reuse::{build_record, sort_ranking, DocRecord, IndexShape, Ranked, ReuseIndex, Strategy};
use mores_core::train::{gen_toy_data, train, FreezeMode, Optimizer, ToyExample, TrainConfig};
use mores_core::{split_initialize, CrossInit, HyperParams, MonolithicModel};
use rayon::prelude::*;

use crate::attn_dump;
use crate::bench::{format_csv, format_text, Bench};
use crate::checkpoint::{load_monolithic, load_mores, Checkpoint};
use crate::error::{Error, Result};
use crate::index_io::{save_index, IndexReader};
use crate::trec::{format_run_lines, read_candidates, read_qrels, read_run, read_tsv_texts, RUN_TAG};
use crate::vocab::Vocab;

#[derive(Debug, Parser)]
#[command(
    name = "mores",
    version,
    about = "Modular transformer reranker with precomputed document representations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a donor encoder into a modular ranker, or synthesize a donor.
    InitWeights(InitArgs),
    /// Encode a corpus offline into a reuse index.
    Precompute(PrecomputeArgs),
    /// Rerank candidate lists against a reuse index and write a TREC run.
    Rank(RankArgs),
    /// Time the online paths against the monolithic baseline.
    Bench(BenchArgs),
    /// Train a modular ranker with pointwise cross-entropy.
    Train(TrainArgs),
    /// Score a TREC run, optionally testing it for non-inferiority.
    Eval(EvalArgs),
    /// Write every attention matrix for one query-document pair as CSV.
    AttnDump(AttnDumpArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CrossInitArg {
    Copy,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    S1,
    S2,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::S1 => Strategy::S1,
            StrategyArg::S2 => Strategy::S2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FreezeArg {
    None,
    AdaptInteraction,
    AdaptRepresentation,
}

impl From<FreezeArg> for FreezeMode {
    fn from(f: FreezeArg) -> Self {
        match f {
            FreezeArg::None => FreezeMode::None,
            FreezeArg::AdaptInteraction => FreezeMode::AdaptInteraction,
            FreezeArg::AdaptRepresentation => FreezeMode::AdaptRepresentation,
        }
    }
}

#[derive(Debug, Args)]
pub struct VocabArg {
    /// Vocabulary file, one token per line. Defaults to the bundled demo vocabulary.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

impl VocabArg {
    fn load(&self) -> Result<Vocab> {
        match &self.vocab {
            Some(p) => Vocab::load(p),
            None => Ok(Vocab::demo()),
        }
    }
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Donor checkpoint to split.
    #[arg(
        long,
        required_unless_present = "synthesize_donor",
        conflicts_with = "synthesize_donor"
    )]
    pub donor: Option<PathBuf>,
    /// Generate a seeded donor from the shape flags. Without `--K` the donor itself is written.
    #[arg(long)]
    pub synthesize_donor: bool,
    /// Number of interaction blocks.
    #[arg(long = "K", alias = "k", required_unless_present = "synthesize_donor")]
    pub blocks: Option<usize>,
    #[arg(long, value_enum, default_value = "copy")]
    pub cross_init: CrossInitArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub ffn: usize,
    /// Defaults to the size of the bundled demo vocabulary.
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub max_positions: usize,
    /// Donor encoder depth.
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    /// Standard deviation of synthesized donor weights.
    #[arg(long, default_value_t = mores_core::model::INIT_STD)]
    pub init_std: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrecomputeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `id<TAB>text` per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub vocab: VocabArg,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// `qid<TAB>text` per line.
    #[arg(long)]
    pub queries: PathBuf,
    /// `qid<TAB>docid` per line.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Require the index to hold this strategy.
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long, default_value = RUN_TAG)]
    pub tag: String,
    #[command(flatten)]
    pub vocab: VocabArg,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Query length in tokens.
    #[arg(long, default_value_t = 16)]
    pub q: usize,
    /// Comma-separated document lengths.
    #[arg(long, value_delimiter = ',', default_value = "128,256,512")]
    pub d: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub n_doc: usize,
    /// Comma-separated paths: monolithic, s1, s2.
    #[arg(long, value_delimiter = ',', default_value = "monolithic,s1,s2")]
    pub strategies: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score candidates on all cores.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `toy` for the synthetic overlap task, or a file of `label<TAB>query<TAB>document` lines.
    #[arg(long)]
    pub data: String,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    #[arg(long, value_enum, default_value = "none")]
    pub freeze: FreezeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Toy examples to generate.
    #[arg(long, default_value_t = 256)]
    pub toy_count: usize,
    #[arg(long, default_value_t = 4)]
    pub toy_query_len: usize,
    #[arg(long, default_value_t = 12)]
    pub toy_doc_len: usize,
    /// Write the loss before each step as `step,loss` CSV.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub vocab: VocabArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Comma-separated, e.g. `mrr@10,ndcg@10,map,p@20`.
    #[arg(long, value_delimiter = ',', default_value = "mrr@10,ndcg@10,map")]
    pub metrics: Vec<String>,
    /// Baseline run the evaluated run must not be inferior to.
    #[arg(long)]
    pub noninferiority: Option<PathBuf>,
    /// Margin as a fraction of the baseline mean.
    #[arg(long, default_value_t = 0.02)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct AttnDumpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub doc: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub vocab: VocabArg,
}

/// Runs one command; informational output goes to `stdout`.
pub fn run(cli: Cli, stdout: &mut String) -> Result<()> {
    match cli.command {
        Command::InitWeights(a) => init_weights(&a, stdout),
        Command::Precompute(a) => precompute(&a, stdout),
        Command::Rank(a) => rank(&a, stdout),
        Command::Bench(a) => bench(&a, stdout),
        Command::Train(a) => train_cmd(&a, stdout),
        Command::Eval(a) => eval(&a, stdout),
        Command::AttnDump(a) => attn(&a, stdout),
    }
}

fn say(out: &mut String, line: std::fmt::Arguments<'_>) {
    out.write_fmt(line).expect("string write");
    out.push('\n');
}

fn init_weights(a: &InitArgs, out: &mut String) -> Result<()> {
    let donor = if a.synthesize_donor {
        let vocab_size = a.vocab_size.unwrap_or_else(|| Vocab::demo().len());
        let hp = HyperParams::donor(a.hidden, a.heads, a.ffn, vocab_size, a.max_positions, a.layers);
        MonolithicModel::random_with_std(hp, a.seed, a.init_std)?
    } else {
        load_monolithic(a.donor.as_deref().expect("required by clap"))?
    };
    let Some(k) = a.blocks else {
        Checkpoint::from_monolithic(&donor).save(&a.out)?;
        say(
            out,
            format_args!(
                "wrote donor with {} layers to {}",
                donor.hyper_params().source_layers,
                a.out.display()
            ),
        );
        return Ok(());
    };
    let cross = match a.cross_init {
        CrossInitArg::Copy => CrossInit::Copy,
        CrossInitArg::Random => CrossInit::Random,
    };
    let model = split_initialize(&donor, k, cross, a.seed)?;
    Checkpoint::from_mores(&model).save(&a.out)?;
    let hp = model.hyper_params();
    say(
        out,
        format_args!(
            "wrote model M={} N={} K={} to {}",
            hp.doc_layers,
            hp.query_layers,
            hp.interaction_blocks,
            a.out.display()
        ),
    );
    Ok(())
}

fn load_vocab_for(arg: &VocabArg, hp: &HyperParams) -> Result<Vocab> {
    let v = arg.load()?;
    if v.len() > hp.vocab_size {
        return Err(Error::Data(format!(
            "vocabulary has {} ids but the model embeds only {}",
            v.len(),
            hp.vocab_size
        )));
    }
    Ok(v)
}

fn tokens(vocab: &Vocab, what: &str, id: &str, text: &str, max: usize) -> Result<Vec<u32>> {
    let ids = vocab.tokenize(text, max).ids;
    if ids.is_empty() {
        return Err(Error::Data(format!("{what} {id:?} has no tokens")));
    }
    Ok(ids)
}

fn precompute(a: &PrecomputeArgs, out: &mut String) -> Result<()> {
    let (model, fp) = load_mores(&a.model)?;
    let hp = *model.hyper_params();
    let vocab = load_vocab_for(&a.vocab, &hp)?;
    let corpus = read_tsv_texts(&a.corpus)?;
    let docs = corpus
        .iter()
        .map(|(id, text)| Ok((id.as_str(), tokens(&vocab, "document", id, text, hp.max_positions)?)))
        .collect::<Result<Vec<_>>>()?;
    let strategy = Strategy::from(a.strategy);
    let records: Vec<mores_core::Result<DocRecord>> = docs
        .par_iter()
        .map(|(_, t)| build_record(&model, t, strategy))
        .collect();
    let mut index = ReuseIndex::new(strategy, fp, IndexShape::of(&hp));
    for ((id, _), rec) in docs.iter().zip(records) {
        index.insert(id.to_string(), rec?)?;
    }
    save_index(&index, &a.out)?;
    say(
        out,
        format_args!(
            "indexed {} documents ({}) into {}",
            index.len(),
            strategy.name(),
            a.out.display()
        ),
    );
    Ok(())
}

fn rank(a: &RankArgs, out: &mut String) -> Result<()> {
    let (model, fp) = load_mores(&a.model)?;
    let hp = *model.hyper_params();
    let vocab = load_vocab_for(&a.vocab, &hp)?;
    let mut reader = IndexReader::open(&a.index)?;
    let header = *reader.header();
    if header.fingerprint != fp {
        return Err(mores_core::Error::StaleIndex {
            index: header.fingerprint,
            model: fp,
        }
        .into());
    }
    if let Some(w) = a.strategy.map(Strategy::from) {
        if w != header.strategy {
            return Err(mores_core::Error::Strategy {
                found: header.strategy.name(),
                wanted: w.name(),
            }
            .into());
        }
    }
    if header.shape != IndexShape::of(&hp) {
        return Err(Error::Data(format!(
            "index shape {:?} does not match the model",
            header.shape
        )));
    }
    let queries: std::collections::HashMap<String, String> = read_tsv_texts(&a.queries)?.into_iter().collect();
    let candidates = read_candidates(&a.candidates)?;
    let missing: BTreeSet<String> = candidates
        .values()
        .flatten()
        .filter(|d| !reader.contains(d))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(mores_core::Error::MissingDocs(missing.into_iter().collect()).into());
    }
    if let Some(q) = candidates.keys().find(|q| !queries.contains_key(*q)) {
        return Err(Error::Data(format!("query {q:?} has candidates but no text")));
    }
    let mut run = String::new();
    for (qid, docs) in &candidates {
        let q_tokens = tokens(&vocab, "query", qid, &queries[qid], hp.max_positions - 1)?;
        let q = model.encode_query(&q_tokens, None)?;
        let records = docs
            .iter()
            .map(|d| Ok((d, reader.get(d)?.expect("presence checked"))))
            .collect::<Result<Vec<_>>>()?;
        let mut ranked = records
            .par_iter()
            .map(|(d, rec)| {
                Ok(Ranked {
                    doc_id: d.to_string(),
                    score: model.score(&q, rec.repr(), None, None)?,
                })
            })
            .collect::<mores_core::Result<Vec<_>>>()?;
        sort_ranking(&mut ranked);
        format_run_lines(&mut run, qid, &ranked, &a.tag);
    }
    std::fs::write(&a.out, run).map_err(Error::io(&a.out))?;
    say(
        out,
        format_args!("ranked {} queries into {}", candidates.len(), a.out.display()),
    );
    Ok(())
}

fn bench(a: &BenchArgs, out: &mut String) -> Result<()> {
    let (model, _) = load_mores(&a.model)?;
    let paths = a
        .strategies
        .iter()
        .map(|s| match s.as_str() {
            "mono" => Ok(CostPath::Monolithic),
            s => CostPath::parse(s).ok_or_else(|| Error::Usage(format!("unknown strategy {s:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut b = Bench::new(&model, a.seed)?;
    b.parallel = a.parallel;
    let configs: Vec<_> =
        a.d.iter()
            .flat_map(|&d| paths.iter().map(move |&p| (d, p)))
            .map(|(d, p)| b.cost_query(a.q, d, a.n_doc, p))
            .collect();
    let rows = b.speedup_table(&configs)?;
    out.push_str(&format_text(&rows));
    if let Some(p) = &a.out {
        std::fs::write(p, format_csv(&rows)).map_err(Error::io(p))?;
    }
    Ok(())
}

/// Reads `label<TAB>query<TAB>document` lines.
pub fn read_train_tsv(path: &Path, vocab: &Vocab, hp: &HyperParams) -> Result<Vec<ToyExample>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let mut f = line.splitn(3, '\t');
        let (Some(label), Some(q), Some(d)) = (f.next(), f.next(), f.next()) else {
            return Err(bad("expected `label<TAB>query<TAB>document`".into()));
        };
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            l => return Err(bad(format!("label {l:?} is not 0 or 1"))),
        };
        let line_id = format!("line {}", i + 1);
        data.push(ToyExample {
            query: tokens(vocab, "query on", &line_id, q, hp.max_positions - 1)?,
            doc: tokens(vocab, "document on", &line_id, d, hp.max_positions)?,
            label,
        });
    }
    Ok(data)
}

fn train_cmd(a: &TrainArgs, out: &mut String) -> Result<()> {
    let (mut model, _) = load_mores(&a.model)?;
    let hp = *model.hyper_params();
    let data = if a.data == "toy" {
        gen_toy_data(hp.vocab_size, a.toy_query_len, a.toy_doc_len, a.toy_count, a.seed)?
    } else {
        let vocab = load_vocab_for(&a.vocab, &hp)?;
        read_train_tsv(Path::new(&a.data), &vocab, &hp)?
    };
    if data.is_empty() {
        return Err(Error::Data("no training examples".into()));
    }
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        steps: a.steps,
        optimizer: match a.optimizer {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::ADAM,
        },
        freeze: a.freeze.into(),
        seed: a.seed,
    };
    let losses = train(&mut model, &data, &cfg)?;
    Checkpoint::from_mores(&model).save(&a.out)?;
    if let Some(p) = &a.loss_out {
        std::fs::write(p, format_loss_csv(&losses)).map_err(Error::io(p))?;
    }
    let first = losses.first().copied().unwrap_or(f64::NAN);
    let last = losses.last().copied().unwrap_or(f64::NAN);
    say(
        out,
        format_args!(
            "trained {} steps: loss {first:.6} -> {last:.6}; wrote {}",
            losses.len(),
            a.out.display()
        ),
    );
    Ok(())
}

pub fn format_loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(s, "{i},{l}").expect("string write");
    }
    s
}

/// Fixed six decimals with trailing zeros dropped.
pub fn format_value(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').map_or_else(|| s.to_string(), |x| format!("{x}.0"))
}

/// Per-metric values for the union of query ids in both runs; a query
/// missing from one run scores 0 there.
fn paired(metric: &Metric, a: &RunFile, b: &RunFile, qrels: &mores_core::metrics::Qrels) -> (Vec<f64>, Vec<f64>) {
    let ids: BTreeSet<&str> = a.queries().chain(b.queries()).map(|(q, _)| q).collect();
    let val = |run: &RunFile, q: &str| metric.per_query(q, run.get(q).unwrap_or(&[]), qrels);
    ids.iter().map(|q| (val(a, q), val(b, q))).unzip()
}

fn eval(a: &EvalArgs, out: &mut String) -> Result<()> {
    let metrics = a
        .metrics
        .iter()
        .map(|m| Metric::parse(m).ok_or_else(|| Error::Usage(format!("unknown metric {m:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let run = read_run(&a.run)?;
    let qrels = read_qrels(&a.qrels)?;
    let Some(base_path) = &a.noninferiority else {
        say(out, format_args!("metric\tvalue"));
        for m in &metrics {
            say(
                out,
                format_args!("{}\t{}", m.name(), format_value(m.evaluate(&run, &qrels))),
            );
        }
        return Ok(());
    };
    let baseline = read_run(base_path)?;
    say(
        out,
        format_args!("metric\tbaseline\trun\tmean_diff\tdelta\tt\tp\tdecision"),
    );
    for m in &metrics {
        let (base, cand) = paired(m, &baseline, &run, &qrels);
        let r = noninferiority_test(&base, &cand, a.delta)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        say(
            out,
            format_args!(
                "{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{}",
                m.name(),
                format_value(mean(&base)),
                format_value(mean(&cand)),
                format_value(r.mean_diff),
                format_value(r.delta),
                r.t,
                r.p,
                if r.reject {
                    "non-inferior"
                } else {
                    "not shown non-inferior"
                }
            ),
        );
    }
    Ok(())
}

fn attn(a: &AttnDumpArgs, out: &mut String) -> Result<()> {
    let (model, _) = load_mores(&a.model)?;
    let hp = *model.hyper_params();
    let vocab = load_vocab_for(&a.vocab, &hp)?;
    let q = tokens(&vocab, "query", "--query", &a.query, hp.max_positions - 1)?;
    let d = tokens(&vocab, "document", "--doc", &a.doc, hp.max_positions)?;
    let (score, matrices) = attn_dump::collect(&model, &vocab, &q, &d)?;
    let paths = attn_dump::write_dump(&a.out, &matrices)?;
    say(
        out,
        format_args!("score {score:.16e}; wrote {} files to {}", paths.len(), a.out.display()),
    );
    Ok(())
}
