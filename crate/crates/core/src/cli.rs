//! Command-line front end. Every subcommand reads and writes files; relative
//! paths resolve against `--data-dir` (or `TVSG_DATA_DIR`).

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::annotation::{agreement_report, AnnotationRecord};
use crate::anonymizer::{anonymize_corpus, select_main_characters, Roster, MAX_SPEAKER_IDS};
use crate::dataset::{
    compute_stats, read_corpus, read_jsonl, read_scenes, rosters_for, split_corpus, write_corpus, write_jsonl, write_scenes, CorpusMeta, SplitPolicy,
    SplitSpec,
};
use crate::evaluator::{breakdown, plot_rows, predict_records, random_baseline, render_table, summarize, Axis, BaselineMode, PredictionRecord};
use crate::models::{Architecture, CharacterModel, Decoding};
use crate::nn::Attention;
use crate::parser::{build_alias_table, canonicalize_scenes, AliasTable, RuleConfig, SceneParser};
use crate::retrieval::{recall_at_k, retrieve_history, Corpus, RelevanceRecord, ScorerKind};
use crate::study::{serve, StudyOptions, StudyService};
use crate::synth::{synth_corpus, SynthConfig, SynthMode};
use crate::text::fold_name;
use crate::trainer::{append_log, learning_curve, train_with_rosters, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "tvsg", version, about = "Anonymous speaker guessing over TV-show transcripts")]
struct Cli {
    /// Output style for reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
    /// Root for relative paths.
    #[arg(long, global = true, env = "TVSG_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Jsonl,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split raw transcripts into scenes.
    Parse(ParseArgs),
    /// Pick main characters and mask them behind speaker IDs.
    Anonymize(AnonymizeArgs),
    /// Scene counts and token statistics per show.
    Stats(StatsArgs),
    /// Write train/dev/test corpora.
    Split(SplitArgs),
    /// Train a character model.
    Train(TrainArgs),
    /// Predict every masked speaker of a corpus.
    Predict(PredictArgs),
    /// Instance and scene-level accuracy.
    Eval(EvalArgs),
    /// Accuracy per category.
    Breakdown(BreakdownArgs),
    /// Dev accuracy as donor shows are added to training.
    Curve(CurveArgs),
    /// Rank earlier scenes as supporting history.
    Retrieve(RetrieveArgs),
    /// Agreement between two annotation files.
    Kappa(KappaArgs),
    /// Run the human-study HTTP service.
    Serve(ServeArgs),
    /// Emit a seeded synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct ParseArgs {
    /// Boundary and speaker rules (TOML).
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    show: String,
    /// Episode files in broadcast order; the file stem is the episode id.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct AnonymizeArgs {
    /// Scenes written by `parse`.
    #[arg(long)]
    scenes: PathBuf,
    /// Cast list (TOML: canonical = ["variant", ...]).
    #[arg(long)]
    cast: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = MAX_SPEAKER_IDS)]
    max_main: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Chronological)]
    policy: PolicyArg,
    #[arg(long, default_value = "0.9,0.05,0.05")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Chronological,
    Random,
}

impl From<PolicyArg> for SplitPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Chronological => SplitPolicy::Chronological,
            PolicyArg::Random => SplitPolicy::SeededRandom,
        }
    }
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Chronological)]
    policy: PolicyArg,
    #[arg(long, default_value = "0.9,0.05,0.05")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Clone)]
struct ModelFlags {
    /// Training config (TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Sliding-window half-width; 0 means full attention.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    row_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Drop background lines from the token stream.
    #[arg(long)]
    no_background: bool,
    #[arg(long)]
    candidate_masked: bool,
}

impl ModelFlags {
    fn resolve(&self, root: &Path) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(resolve(root, p))?,
            None => TrainConfig::default(),
        };
        let m = &mut cfg.model;
        if let Some(a) = self.arch {
            m.architecture = a;
        }
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag {
                    $($field)+ = v;
                }
            };
        }
        set!(dim => m.encoder.dim);
        set!(layers => m.encoder.layers);
        set!(heads => m.encoder.heads);
        set!(max_len => m.encoder.max_len);
        set!(dropout => m.encoder.dropout);
        set!(rows => m.rows);
        set!(row_len => m.row_len);
        if let Some(w) = self.window {
            m.encoder.attention = if w == 0 { Attention::Full } else { Attention::Window(w) };
        }
        if self.no_background {
            m.include_background = false;
        }
        set!(epochs => cfg.epochs);
        set!(lr => cfg.lr);
        set!(batch => cfg.batch_size);
        set!(seed => cfg.seed);
        if self.patience.is_some() {
            cfg.patience = self.patience;
        }
        if self.candidate_masked {
            cfg.candidate_masked_training = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
    /// Restrict to these shows (comma separated).
    #[arg(long, value_delimiter = ',')]
    shows: Vec<String>,
    /// Append per-epoch metrics here.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// One-to-one assignment of IDs to candidates.
    #[arg(long)]
    joint: bool,
    /// Keep per-roster logits in the records.
    #[arg(long)]
    logits: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    preds: PathBuf,
    /// Corpus holding the gold match; also enables the random baseline.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
}

#[derive(Debug, Args)]
struct BreakdownArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    axis: Axis,
    #[arg(long)]
    annotations: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, value_delimiter = ',')]
    donors: Vec<String>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Chronological)]
    policy: PolicyArg,
    #[arg(long, default_value = "0.8,0.2,0.0")]
    ratios: String,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    /// Scenes or a masked corpus, in show order.
    #[arg(long)]
    corpus: PathBuf,
    /// Query position in the corpus; all queries with history when omitted.
    #[arg(long)]
    query: Option<usize>,
    #[arg(long, default_value_t = 20)]
    window: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value = "bm25")]
    scorer: ScorerKind,
    /// Relevance file; reports recall@k over its queries.
    #[arg(long)]
    relevance: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KappaArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
    /// Where sessions and the annotation log live.
    #[arg(long, default_value = "study")]
    state_dir: PathBuf,
    /// Static client bundle.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    #[arg(long)]
    hide_correctness: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    chars: usize,
    #[arg(long, default_value_t = 50)]
    scenes: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "style")]
    mode: SynthMode,
    #[arg(long, default_value = "synth")]
    show: String,
    #[arg(long)]
    divergence: Option<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn parse_ratios(raw: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = raw.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().context("ratios must be numbers")?;
    match parts.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!("expected three ratios, got {}", parts.len()),
    }
}

struct Out {
    format: Format,
}

impl Out {
    fn json<T: Serialize>(&self, value: &T) -> Result<()> {
        println!("{}", serde_json::to_string(value)?);
        Ok(())
    }

    /// Prints `table` in table mode, otherwise `value` as one JSON line.
    fn report<T: Serialize>(&self, value: &T, table: impl FnOnce() -> String) -> Result<()> {
        match self.format {
            Format::Table => {
                print!("{}", table());
                Ok(())
            }
            Format::Jsonl => self.json(value),
        }
    }
}

/// Runs the CLI; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn default_cast(scenes: &[crate::parser::Scene]) -> Vec<(String, Vec<String>)> {
    let mut by_canonical: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for l in scenes.iter().flat_map(|s| s.dialogue()) {
        if let Some(sp) = &l.speaker {
            by_canonical.entry(fold_name(sp)).or_default().insert(sp.clone());
        }
    }
    by_canonical.into_iter().map(|(c, v)| (c, v.into_iter().collect())).collect()
}

fn execute(cli: Cli) -> Result<()> {
    let root = cli.data_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let out = Out { format: cli.format };
    let r = |p: &Path| resolve(&root, p);
    let i = |p: &Path| -> Result<PathBuf> {
        let full = resolve(&root, p);
        if !full.exists() {
            bail!("{} does not exist", full.display());
        }
        Ok(full)
    };
    match cli.command {
        Command::Parse(a) => {
            let rules = match &a.rules {
                Some(p) => RuleConfig::load(i(p)?)?,
                None => RuleConfig::default(),
            };
            let parser = SceneParser::new(&rules)?;
            let mut episodes = Vec::new();
            for p in &a.inputs {
                let raw = std::fs::read_to_string(r(p)).with_context(|| format!("reading {}", p.display()))?;
                let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                episodes.push((id, raw));
            }
            let scenes = parser.parse_show(&a.show, episodes.iter().map(|(i, t)| (i.as_str(), t.as_str())))?;
            write_scenes(&scenes, r(&a.output))?;
            out.report(&serde_json::json!({"scenes": scenes.len(), "episodes": episodes.len()}), || {
                format!("{} scenes from {} episodes\n", scenes.len(), episodes.len())
            })
        }
        Command::Anonymize(a) => {
            let scenes = read_scenes(i(&a.scenes)?)?;
            let cast = match &a.cast {
                Some(p) => AliasTable::load_cast(i(p)?)?,
                None => default_cast(&scenes),
            };
            let mut by_show: BTreeMap<String, Vec<crate::parser::Scene>> = BTreeMap::new();
            for s in scenes {
                by_show.entry(s.show.clone()).or_default().push(s);
            }
            let mut instances = Vec::new();
            let mut rosters = BTreeMap::new();
            for (show, scenes) in by_show {
                let table = build_alias_table(&scenes, &cast)?;
                let canon = canonicalize_scenes(&scenes, &table);
                let roster = select_main_characters(&canon, &table, a.max_main)?;
                instances.extend(anonymize_corpus(&canon, &roster, a.seed)?);
                rosters.insert(show, roster);
            }
            let path = r(&a.output);
            write_corpus(&instances, &path)?;
            CorpusMeta::per_scene(a.seed, rosters.clone()).write_for(&path)?;
            out.report(&serde_json::json!({"instances": instances.len(), "rosters": rosters}), || {
                let mut s = format!("{} masked scenes\n", instances.len());
                for (show, roster) in &rosters {
                    s.push_str(&format!("{show}: {}\n", roster.names().join(", ")));
                }
                s
            })
        }
        Command::Stats(a) => {
            let path = i(&a.corpus)?;
            let instances = read_corpus(&path)?;
            let spec = SplitSpec { ratios: parse_ratios(&a.ratios)?, policy: a.policy.into(), seed: a.seed };
            let splits = split_corpus(&instances, &spec)?;
            let meta = CorpusMeta::read_for(&path)?;
            let rosters = rosters_for(&instances, meta.as_ref().map(|m| &m.rosters));
            let report = compute_stats(&splits, &rosters);
            out.report(&report, || {
                let mut s = format!("{:<12} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}\n", "show", "train", "dev", "test", "tok/utt", "tok/scene", "tok/char");
                for st in report.shows.iter().chain(std::iter::once(&report.total)) {
                    s.push_str(&format!(
                        "{:<12} {:>6} {:>6} {:>6} {:>9.2} {:>9.2} {:>9.1}\n",
                        st.show, st.train_scenes, st.dev_scenes, st.test_scenes, st.tokens_per_utterance.avg, st.tokens_per_scene.avg, st.tokens_per_character.avg
                    ));
                }
                s
            })
        }
        Command::Split(a) => {
            let path = i(&a.corpus)?;
            let instances = read_corpus(&path)?;
            let spec = SplitSpec { ratios: parse_ratios(&a.ratios)?, policy: a.policy.into(), seed: a.seed };
            let splits = split_corpus(&instances, &spec)?;
            let dir = r(&a.out_dir);
            std::fs::create_dir_all(&dir)?;
            let meta = CorpusMeta::read_for(&path)?;
            let mut counts = BTreeMap::new();
            for (name, set) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
                let p = dir.join(format!("{name}.jsonl"));
                write_corpus(set, &p)?;
                if let Some(m) = &meta {
                    m.write_for(&p)?;
                }
                counts.insert(name, set.len());
            }
            out.report(&counts, || format!("train {}  dev {}  test {}\n", counts["train"], counts["dev"], counts["test"]))
        }
        Command::Train(a) => {
            let mut cfg = a.model.resolve(&root)?;
            if !a.shows.is_empty() {
                cfg.shows = Some(a.shows.clone());
            }
            let train_path = i(&a.train)?;
            let train = read_corpus(&train_path)?;
            let dev = read_corpus(i(&a.dev)?)?;
            let meta = CorpusMeta::read_for(&train_path)?;
            let outcome = train_with_rosters(cfg, meta.as_ref().map(|m| &m.rosters), &train, &dev)?;
            outcome.model.save(r(&a.output))?;
            if let Some(p) = &a.log {
                append_log(&outcome.log, r(p))?;
            }
            match out.format {
                Format::Jsonl => outcome.log.iter().try_for_each(|rec| out.json(rec)),
                Format::Table => {
                    println!("best dev accuracy {:.4} at epoch {}", outcome.best_dev, outcome.best_epoch);
                    Ok(())
                }
            }
        }
        Command::Predict(a) => {
            let model = CharacterModel::load(i(&a.model)?)?;
            let instances = read_corpus(i(&a.corpus)?)?;
            let decoding = if a.joint { Decoding::GreedyJoint } else { Decoding::Independent };
            let records = predict_records(&model, &instances, decoding, a.logits)?;
            match &a.output {
                Some(p) => write_jsonl(&records, r(p))?,
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    for rec in &records {
                        writeln!(lock, "{}", serde_json::to_string(rec)?)?;
                    }
                }
            }
            Ok(())
        }
        Command::Eval(a) => {
            let mut preds: Vec<PredictionRecord> = read_jsonl(i(&a.preds)?)?;
            let mut report = serde_json::Map::new();
            if let Some(g) = &a.gold {
                let corpus = read_corpus(i(g)?)?;
                let gold: BTreeMap<_, _> = corpus.iter().map(|i| (i.scene_ref(), i)).collect();
                for p in &mut preds {
                    let inst = gold.get(&p.scene_ref()).with_context(|| format!("{} is not in the gold corpus", p.scene_ref()))?;
                    p.gold = inst.gold.get(&p.speaker_id).cloned().with_context(|| format!("{} has no {}", p.scene_ref(), p.speaker_id))?;
                }
                report.insert("random_analytic".into(), random_baseline(&corpus, BaselineMode::Analytic).into());
                report.insert("random_simulated".into(), random_baseline(&corpus, BaselineMode::Simulated { trials: a.trials, seed: 0 }).into());
            }
            let s = summarize(&preds)?;
            report.insert("instances".into(), s.instances.into());
            report.insert("scenes".into(), s.scenes.into());
            report.insert("instance_accuracy".into(), s.instance_accuracy.into());
            report.insert("scene_macro_accuracy".into(), s.scene_macro_accuracy.into());
            out.report(&report, || {
                report
                    .iter()
                    .map(|(k, v)| match v.as_f64() {
                        Some(f) if !v.is_u64() => format!("{k:<22} {f:.4}\n"),
                        _ => format!("{k:<22} {v}\n"),
                    })
                    .collect()
            })
        }
        Command::Breakdown(a) => {
            let preds: Vec<PredictionRecord> = read_jsonl(i(&a.preds)?)?;
            let ann: Option<Vec<AnnotationRecord>> = a.annotations.as_ref().map(|p| read_jsonl(i(p)?).map_err(anyhow::Error::from)).transpose()?;
            let rep = breakdown(&preds, a.axis, ann.as_deref())?;
            match out.format {
                Format::Table => {
                    print!("{}", render_table(&rep));
                    Ok(())
                }
                Format::Jsonl => plot_rows(&rep).iter().try_for_each(|row| out.json(row)),
            }
        }
        Command::Curve(a) => {
            let cfg = a.model.resolve(&root)?;
            let instances = read_corpus(i(&a.corpus)?)?;
            let spec = SplitSpec { ratios: parse_ratios(&a.ratios)?, policy: a.policy.into(), seed: cfg.seed };
            let splits = split_corpus(&instances, &spec)?;
            let curve = learning_curve(&cfg, &splits, &a.target, &a.donors)?;
            let rows: Vec<serde_json::Value> = curve
                .iter()
                .enumerate()
                .map(|(i, acc)| {
                    let shows: Vec<&String> = std::iter::once(&a.target).chain(&a.donors[..i]).collect();
                    serde_json::json!({"donors": i, "shows": shows, "dev_accuracy": acc})
                })
                .collect();
            match out.format {
                Format::Table => {
                    for (i, acc) in curve.iter().enumerate() {
                        println!("{i:>3} donors  {acc:.4}");
                    }
                    Ok(())
                }
                Format::Jsonl => rows.iter().try_for_each(|row| out.json(row)),
            }
        }
        Command::Retrieve(a) => {
            let path = i(&a.corpus)?;
            let corpus = match read_corpus(&path) {
                Ok(inst) => Corpus::from_instances(&inst),
                Err(_) => Corpus::from_scenes(&read_scenes(&path)?),
            };
            let scorer = a.scorer.build();
            if let Some(rel_path) = &a.relevance {
                let rel: Vec<RelevanceRecord> = read_jsonl(i(rel_path)?)?;
                let mut results = Vec::new();
                let mut sets = Vec::new();
                for rec in &rel {
                    let q = corpus.position(&rec.query).with_context(|| format!("query {} is not in the corpus", rec.query))?;
                    let ranked = retrieve_history(&corpus, q, a.window, scorer.as_ref(), a.k)?;
                    results.push(ranked.into_iter().map(|x| x.scene_ref).collect::<Vec<_>>());
                    sets.push(rec.relevant.iter().cloned().collect::<BTreeSet<_>>());
                }
                let recall = recall_at_k(&results, &sets, a.k)?;
                return out.report(&serde_json::json!({"queries": rel.len(), "k": a.k, "recall": recall}), || format!("recall@{} {recall:.4} over {} queries\n", a.k, rel.len()));
            }
            let queries: Vec<usize> = match a.query {
                Some(q) => vec![q],
                None => (0..corpus.docs.len()).collect(),
            };
            for q in queries {
                let ranked = match retrieve_history(&corpus, q, a.window, scorer.as_ref(), a.k) {
                    Ok(r) => r,
                    Err(crate::retrieval::RetrievalError::NoHistory(_)) if a.query.is_none() => continue,
                    Err(e) => return Err(e.into()),
                };
                let query = &corpus.docs[q].scene_ref;
                match out.format {
                    Format::Table => println!("{query}: {}", ranked.iter().map(|x| format!("{} ({:.3})", x.scene_ref, x.score)).collect::<Vec<_>>().join(", ")),
                    Format::Jsonl => out.json(&serde_json::json!({"query": query, "results": ranked}))?,
                }
            }
            Ok(())
        }
        Command::Kappa(a) => {
            let ra: Vec<AnnotationRecord> = read_jsonl(i(&a.a)?)?;
            let rb: Vec<AnnotationRecord> = read_jsonl(i(&a.b)?)?;
            let rep = agreement_report(&ra, &rb)?;
            out.report(&rep, || {
                let mut s = format!("{} shared items\n", rep.items);
                for (g, k) in &rep.groups {
                    s.push_str(&match k {
                        Some(k) => format!("{g:<16} {k:.4}\n"),
                        None => format!("{g:<16} n/a\n"),
                    });
                }
                s.push_str(&format!("method: {}\n", rep.method));
                s
            })
        }
        Command::Serve(a) => {
            let instances = read_corpus(i(&a.corpus)?)?;
            let service = StudyService::open(r(&a.state_dir), instances, StudyOptions { reveal_correctness: !a.hide_correctness })?;
            let static_dir = a.static_dir.as_ref().map(|p| r(p));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(a.addr, Arc::new(service), static_dir))?;
            Ok(())
        }
        Command::Synth(a) => {
            let mut cfg = SynthConfig { chars: a.chars, scenes: a.scenes, seed: a.seed, mode: a.mode, show: a.show.clone(), ..SynthConfig::default() };
            if let Some(d) = a.divergence {
                cfg.divergence = d;
            }
            let (instances, roster) = synth_corpus(&cfg)?;
            match &a.output {
                Some(p) => {
                    let path = r(p);
                    write_corpus(&instances, &path)?;
                    let rosters: BTreeMap<String, Roster> = [(cfg.show.clone(), roster)].into();
                    CorpusMeta::per_scene(cfg.seed, rosters).write_for(&path)?;
                }
                None => print!("{}", crate::dataset::corpus_to_string(&instances)),
            }
            Ok(())
        }
    }
}
