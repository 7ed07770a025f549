//! Pipeline CLI: simulate -> extract-features -> train -> evaluate -> report.
//! Every stage reads and writes plain files, so any stage can be re-run in
//! isolation, and all randomness flows from the seed in the spec or recipe.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ultrlab::corpus::{
    self, ClickLog, FeatureRow, FeatureStore, TruthTable, LIST_LEN,
};
use ultrlab::dla::{self, DualModel, EpochMetrics, ListExample, ValidList};
use ultrlab::error::{Error, Result};
use ultrlab::gbdt::{self, GbdtRow};
use ultrlab::labelfix;
use ultrlab::negsample;
use ultrlab::metrics;
use ultrlab::nn::Checkpoint;
use ultrlab::recipe::{parse_kv_file, parse_kv_str, FeatureSet, Method, TrainRecipe};
use ultrlab::simulate::{self, SimSpec};
use ultrlab::textfeat::{self, InvertedIndex};

const DATA_DIR_ENV: &str = "ULTRLAB_DATA_DIR";

#[derive(Parser)]
#[command(name = "ultrlab", version, about = "Unbiased learning-to-rank laboratory")]
struct Cli {
    /// bound worker parallelism (modules here are single-threaded; values > 1
    /// are accepted for forward compatibility)
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and position-biased click log
    Simulate(SimulateArgs),
    /// Compute the 24 lexical features for (qid, doc) pairs into a LETOR file
    ExtractFeatures(ExtractArgs),
    /// Train a ranker from a recipe file
    Train(TrainArgs),
    /// Relabel a click log with an auxiliary checkpoint as relevance judge
    CorrectLabels(CorrectArgs),
    /// Score a run file against graded truth
    Evaluate(EvaluateArgs),
    /// Summarize finished runs into a comparison table and sweep curves
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// key=value simulation spec file
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// override the seed in the spec file
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    docs: PathBuf,
    /// text file with one `qid doc_id` pair per line
    #[arg(long)]
    pairs: PathBuf,
    /// truth file supplying the LETOR label column (0 when omitted)
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value recipe file
    #[arg(long)]
    recipe: PathBuf,
    /// parent directory for the run directory (named by recipe hash + seed)
    #[arg(long)]
    out_dir: PathBuf,
    /// override any recipe key, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// accept learning rates outside the supported range
    #[arg(long)]
    allow_any_lr: bool,
}

#[derive(Args)]
struct CorrectArgs {
    /// auxiliary judge checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// sig | min
    #[arg(long)]
    mode: String,
    #[arg(long)]
    clicks: PathBuf,
    /// LETOR feature file covering every (qid, doc) in the click log
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// TREC-style run file
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// write the metric records here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// directory containing run directories (each with a summary.kv)
    #[arg(long)]
    runs_root: PathBuf,
    /// write the text report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// also write the raw rows as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be >= 1");
        return ExitCode::from(2);
    }
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::ExtractFeatures(args) => cmd_extract(args),
        Command::Train(args) => cmd_train(args),
        Command::CorrectLabels(args) => cmd_correct(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(1)
        }
    }
}

/// Resolve a relative path against $ULTRLAB_DATA_DIR when it is set.
fn resolve(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(base) if !base.is_empty() => PathBuf::from(base).join(path),
        _ => path.to_path_buf(),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut kv = parse_kv_file(&resolve(&args.spec))?;
    if let Some(seed) = args.seed {
        kv.insert("seed".into(), seed.to_string());
    }
    let spec = SimSpec::from_kv(&kv.into_iter().collect())?;
    let corpus = simulate::generate_corpus(&spec)?;
    let clicks = simulate::simulate_clicks(&corpus.initial_lists, &corpus.truth, &spec)?;

    let out_dir = resolve(&args.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    corpus::save_jsonl(&corpus.docs, &out_dir.join("docs.jsonl"))?;
    corpus::save_jsonl(&corpus.queries, &out_dir.join("queries.jsonl"))?;
    corpus::save_jsonl(&clicks, &out_dir.join("clicks.jsonl"))?;
    let truth_records = corpus.truth.records();
    corpus::save_jsonl(&truth_records, &out_dir.join("truth.jsonl"))?;
    let mut pairs = String::new();
    for r in &truth_records {
        writeln!(pairs, "{} {}", r.qid, r.doc_id).unwrap();
    }
    corpus::write_atomic(&out_dir.join("pairs.txt"), &pairs)?;
    println!(
        "simulated {} queries, {} docs, {} click lists -> {}",
        corpus.queries.len(),
        corpus.docs.len(),
        clicks.len(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let queries = corpus::load_queries(&resolve(&args.queries))?;
    let docs = corpus::load_documents(&resolve(&args.docs))?;
    let truth = match &args.truth {
        Some(p) => Some(corpus::load_truth(&resolve(p))?),
        None => None,
    };
    let index = InvertedIndex::build(&docs)?;
    let query_text: HashMap<&str, &str> = queries
        .iter()
        .map(|q| (q.qid.as_str(), q.text.as_str()))
        .collect();

    let pairs_path = resolve(&args.pairs);
    let content = std::fs::read_to_string(&pairs_path).map_err(|e| Error::io(&pairs_path, e))?;
    let mut rows = Vec::new();
    for (lineno, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (qid, doc_id) = match (fields.next(), fields.next(), fields.next()) {
            (Some(q), Some(d), None) => (q, d),
            _ => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    column: 1,
                    msg: format!("expected `qid doc_id`, got `{}`", line),
                })
            }
        };
        let text = query_text.get(qid).ok_or_else(|| {
            Error::invalid(format!("qid={}", qid), "query not found in queries file")
        })?;
        let features = textfeat::extract_features(text, doc_id, &index)?;
        rows.push(FeatureRow {
            label: truth.as_ref().map(|t| t.grade(qid, doc_id)).unwrap_or(0),
            qid: qid.to_string(),
            features,
            doc_id: doc_id.to_string(),
        });
    }
    corpus::save_feature_file(&rows, &resolve(&args.out))?;
    println!("extracted {} feature rows -> {}", rows.len(), resolve(&args.out).display());
    Ok(())
}

fn cmd_correct(args: CorrectArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&resolve(&args.ckpt))?;
    let mode: labelfix::CorrectionMode = args.mode.parse()?;
    let logs = corpus::load_click_log(&resolve(&args.clicks))?;
    let store = FeatureStore::load(&resolve(&args.features))?;
    let feats = |qid: &str, doc_id: &str| store.features(qid, doc_id).map(|f| f.to_vec());
    let mut labeled = Vec::with_capacity(logs.len());
    for log in &logs {
        labeled.push(labelfix::correct_click_log(log, &ckpt, &feats, mode)?);
    }
    corpus::save_jsonl(&labeled, &resolve(&args.out))?;
    println!("corrected {} lists -> {}", labeled.len(), resolve(&args.out).display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    if args.k == 0 {
        return Err(Error::InvalidArgument("--k must be >= 1".into()));
    }
    let run = corpus::load_run_file(&resolve(&args.run))?;
    let truth = corpus::load_truth(&resolve(&args.truth))?;
    let mut per_query: HashMap<&str, Vec<u32>> = HashMap::new();
    let records = truth.records();
    for r in &records {
        per_query.entry(r.qid.as_str()).or_default().push(r.grade);
    }

    let mut out = String::new();
    let mut sum_ndcg = 0.0;
    let mut sum_dcg = 0.0;
    for (qid, ranked) in &run {
        let ideal = per_query
            .get(qid.as_str())
            .ok_or_else(|| Error::invalid(format!("qid={}", qid), "no truth records"))?;
        let grades: Vec<u32> = ranked.iter().map(|(d, _)| truth.grade(qid, d)).collect();
        let ndcg = metrics::ndcg_at_k(&grades, ideal, args.k);
        let dcg = metrics::dcg_at_k(&grades, args.k);
        sum_ndcg += ndcg;
        sum_dcg += dcg;
        writeln!(
            out,
            "{}",
            serde_json::json!({"qid": qid, format!("ndcg@{}", args.k): ndcg, format!("dcg@{}", args.k): dcg})
        )
        .unwrap();
    }
    let n = run.len().max(1) as f64;
    let summary = serde_json::json!({
        "queries": run.len(),
        format!("mean_ndcg@{}", args.k): sum_ndcg / n,
        format!("mean_dcg@{}", args.k): sum_dcg / n,
    });
    writeln!(out, "{}", summary).unwrap();

    match &args.out {
        Some(path) => {
            corpus::write_atomic(&resolve(path), &out)?;
            println!("{}", summary);
        }
        None => print!("{}", out),
    }
    Ok(())
}

fn parse_override(raw: &str) -> Result<(String, String)> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Recipe(format!("--set expects key=value, got `{}`", raw)))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut kv = parse_kv_file(&resolve(&args.recipe))?;
    for raw in &args.sets {
        let (k, v) = parse_override(raw)?;
        kv.insert(k, v);
    }
    if let Some(seed) = args.seed {
        kv.insert("seed".into(), seed.to_string());
    }
    if let Some(lr) = args.lr {
        kv.insert("lr".into(), format!("{:e}", lr));
    }
    if args.allow_any_lr {
        kv.insert("allow_any_lr".into(), "true".into());
    }
    // resolve data paths against the data directory before existence checks
    for key in ["clicks", "features", "truth", "docs", "queries", "aux_ckpt"] {
        if let Some(v) = kv.get(key) {
            let resolved = resolve(Path::new(v));
            kv.insert(key.into(), resolved.display().to_string());
        }
    }
    let recipe = TrainRecipe::from_kv(&kv)?;
    recipe.check_paths()?;

    let run_dir = resolve(&args.out_dir).join(recipe.run_id());
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    corpus::write_atomic(&run_dir.join("recipe.kv"), &recipe.canonical_string())?;

    let summary = match recipe.method {
        Method::Dla => train_dla(&recipe, &run_dir)?,
        Method::DlaLc => train_dla_lc(&recipe, &run_dir)?,
        Method::Negsample => train_negsample(&recipe, &run_dir)?,
        Method::Gbdt => train_gbdt(&recipe, &run_dir)?,
    };
    let mut out = String::new();
    for (k, v) in &summary {
        writeln!(out, "{}={}", k, v).unwrap();
    }
    corpus::write_atomic(&run_dir.join("summary.kv"), &out)?;
    let best = summary.get("best_valid_ndcg10").cloned().unwrap_or_default();
    println!("run {} best_valid_ndcg10={}", run_dir.display(), best);
    Ok(())
}

/// True when the query belongs to the training side of the holdout.
fn is_train_qid(qid: &str, recipe: &TrainRecipe) -> bool {
    gbdt::in_train_split(qid, 1.0 - recipe.valid_fraction, recipe.seed)
}

/// Validation lists: for each held-out query, every truth doc with features
/// from the store, in doc_id order.
fn validation_lists(
    recipe: &TrainRecipe,
    truth: &TruthTable,
    features: &dyn Fn(&str, &str) -> Result<Vec<f64>>,
) -> Result<Vec<ValidList>> {
    let mut per_query: BTreeMap<String, Vec<(String, u32)>> = BTreeMap::new();
    for r in truth.records() {
        if !is_train_qid(&r.qid, recipe) {
            per_query.entry(r.qid).or_default().push((r.doc_id, r.grade));
        }
    }
    let mut out = Vec::with_capacity(per_query.len());
    for (qid, docs) in per_query {
        let mut feats = Vec::with_capacity(docs.len());
        let mut grades = Vec::with_capacity(docs.len());
        for (doc_id, grade) in docs {
            feats.push(features(&qid, &doc_id)?);
            grades.push(grade);
        }
        out.push(ValidList {
            qid,
            features: feats,
            grades,
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(
            "validation split is empty; adjust valid_fraction or seed".into(),
        ));
    }
    Ok(out)
}

fn click_examples(
    logs: &[ClickLog],
    recipe: &TrainRecipe,
    features: &dyn Fn(&str, &str) -> Result<Vec<f64>>,
) -> Result<Vec<ListExample>> {
    let mut out = Vec::new();
    for log in logs {
        if !is_train_qid(&log.qid, recipe) {
            continue;
        }
        let mut feats = Vec::with_capacity(LIST_LEN);
        for doc_id in &log.docs {
            feats.push(features(&log.qid, doc_id)?);
        }
        out.push(ListExample {
            qid: log.qid.clone(),
            features: feats,
            labels: log.clicks.iter().map(|c| *c as f64).collect(),
            eligible: log.clicks.clone(),
        });
    }
    Ok(out)
}

fn save_epoch_metrics(curve: &[EpochMetrics], path: &Path) -> Result<()> {
    corpus::save_jsonl(curve, path)
}

/// Score each validation list with the given scorer and write a run file.
fn write_valid_run(
    valid: &[ValidList],
    doc_ids: &BTreeMap<String, Vec<String>>,
    scorer: &dyn Fn(&[f64]) -> Result<f64>,
    tag: &str,
    path: &Path,
) -> Result<()> {
    let mut rankings = Vec::with_capacity(valid.len());
    for list in valid {
        let docs = doc_ids
            .get(&list.qid)
            .ok_or_else(|| Error::invalid(format!("qid={}", list.qid), "missing doc ids"))?;
        let mut scored = Vec::with_capacity(docs.len());
        for (doc_id, feats) in docs.iter().zip(&list.features) {
            scored.push((doc_id.clone(), scorer(feats)?));
        }
        rankings.push((list.qid.clone(), scored));
    }
    corpus::write_run_file(&rankings, tag, path)
}

/// doc_id lists aligned with `validation_lists` ordering.
fn valid_doc_ids(recipe: &TrainRecipe, truth: &TruthTable) -> BTreeMap<String, Vec<String>> {
    let mut per_query: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in truth.records() {
        if !is_train_qid(&r.qid, recipe) {
            per_query.entry(r.qid).or_default().push(r.doc_id);
        }
    }
    per_query
}

fn base_summary(recipe: &TrainRecipe) -> BTreeMap<String, String> {
    parse_kv_str(&recipe.canonical_string())
        .expect("canonical recipe parses")
        .into_iter()
        .collect()
}

fn finish_dual_run(
    model: &DualModel,
    recipe: &TrainRecipe,
    run_dir: &Path,
    valid: &[ValidList],
    truth: &TruthTable,
    with_propensity: bool,
) -> Result<BTreeMap<String, String>> {
    let ckpt = Checkpoint {
        ranker: model.ranker.clone(),
        propensity: with_propensity.then(|| model.propensity.0.clone()),
        norm: Some(model.norm.clone()),
    };
    ckpt.save(&run_dir.join("ckpt.txt"))?;
    save_epoch_metrics(&model.curve, &run_dir.join("metrics.jsonl"))?;
    let doc_ids = valid_doc_ids(recipe, truth);
    write_valid_run(
        valid,
        &doc_ids,
        &|f| model.score(f),
        &recipe.run_id(),
        &run_dir.join("valid.run"),
    )?;

    let best = model
        .curve
        .iter()
        .max_by(|a, b| a.valid_ndcg10.partial_cmp(&b.valid_ndcg10).expect("finite ndcg"));
    let mut summary = base_summary(recipe);
    if let Some(b) = best {
        summary.insert("best_epoch".into(), b.epoch.to_string());
        summary.insert("best_valid_ndcg10".into(), format!("{}", b.valid_ndcg10));
    }
    Ok(summary)
}

fn train_dla(recipe: &TrainRecipe, run_dir: &Path) -> Result<BTreeMap<String, String>> {
    let logs = corpus::load_click_log(recipe.clicks.as_ref().expect("validated"))?;
    let store = FeatureStore::load(recipe.features.as_ref().expect("validated"))?;
    let truth = corpus::load_truth(recipe.truth.as_ref().expect("validated"))?;
    let feats = |qid: &str, doc_id: &str| store.features(qid, doc_id).map(|f| f.to_vec());
    let train = click_examples(&logs, recipe, &feats)?;
    let valid = validation_lists(recipe, &truth, &feats)?;
    let model = dla::train_dual(&train, &valid, &recipe.dual_config(), None)?;
    finish_dual_run(&model, recipe, run_dir, &valid, &truth, true)
}

fn train_dla_lc(recipe: &TrainRecipe, run_dir: &Path) -> Result<BTreeMap<String, String>> {
    let logs = corpus::load_click_log(recipe.clicks.as_ref().expect("validated"))?;
    let store = FeatureStore::load(recipe.features.as_ref().expect("validated"))?;
    let truth = corpus::load_truth(recipe.truth.as_ref().expect("validated"))?;
    let aux = Checkpoint::load(recipe.aux_ckpt.as_ref().expect("validated"))?;
    let feats = |qid: &str, doc_id: &str| store.features(qid, doc_id).map(|f| f.to_vec());

    let mut train = Vec::new();
    for log in &logs {
        if !is_train_qid(&log.qid, recipe) {
            continue;
        }
        let labeled = labelfix::correct_click_log(log, &aux, &feats, recipe.mode)?;
        let mut list_feats = Vec::with_capacity(LIST_LEN);
        for doc_id in &labeled.doc_ids {
            list_feats.push(feats(&labeled.qid, doc_id)?);
        }
        train.push(ListExample {
            qid: labeled.qid,
            features: list_feats,
            labels: labeled.labels,
            eligible: labeled.propensity_eligible,
        });
    }
    let valid = validation_lists(recipe, &truth, &feats)?;
    let model = labelfix::train_dla_lc(&train, &valid, &recipe.dual_config(), recipe.init, &aux.ranker)?;
    finish_dual_run(&model, recipe, run_dir, &valid, &truth, true)
}

fn train_negsample(recipe: &TrainRecipe, run_dir: &Path) -> Result<BTreeMap<String, String>> {
    let logs = corpus::load_click_log(recipe.clicks.as_ref().expect("validated"))?;
    let truth = corpus::load_truth(recipe.truth.as_ref().expect("validated"))?;
    let docs = corpus::load_documents(recipe.docs.as_ref().expect("validated"))?;
    let queries = corpus::load_queries(recipe.queries.as_ref().expect("validated"))?;
    let index = InvertedIndex::build(&docs)?;
    let query_text: HashMap<String, String> = queries
        .into_iter()
        .map(|q| (q.qid, q.text))
        .collect();

    let train_logs: Vec<ClickLog> = logs
        .iter()
        .filter(|l| is_train_qid(&l.qid, recipe))
        .cloned()
        .collect();
    let outcome = negsample::reconstruct_all(&train_logs, &query_text, &index, &recipe.neg_spec())?;
    let train = negsample::to_examples(&outcome.lists, &query_text, &index)?;
    let feats = |qid: &str, doc_id: &str| {
        let text = query_text
            .get(qid)
            .ok_or_else(|| Error::invalid(format!("qid={}", qid), "query text not found"))?;
        textfeat::extract_features(text, doc_id, &index)
    };
    let valid = validation_lists(recipe, &truth, &feats)?;
    let model = negsample::train_listwise(&train, &valid, &recipe.dual_config())?;

    Checkpoint {
        ranker: model.ranker.clone(),
        propensity: None,
        norm: Some(model.norm.clone()),
    }
    .save(&run_dir.join("ckpt.txt"))?;
    save_epoch_metrics(&model.curve, &run_dir.join("metrics.jsonl"))?;
    let doc_ids = valid_doc_ids(recipe, &truth);
    write_valid_run(
        &valid,
        &doc_ids,
        &|f| model.score(f),
        &recipe.run_id(),
        &run_dir.join("valid.run"),
    )?;

    let best = model
        .curve
        .iter()
        .max_by(|a, b| a.valid_ndcg10.partial_cmp(&b.valid_ndcg10).expect("finite ndcg"));
    let mut summary = base_summary(recipe);
    summary.insert("skipped_zero_click".into(), outcome.skipped.to_string());
    if let Some(b) = best {
        summary.insert("best_epoch".into(), b.epoch.to_string());
        summary.insert("best_valid_ndcg10".into(), format!("{}", b.valid_ndcg10));
    }
    Ok(summary)
}

fn train_gbdt(recipe: &TrainRecipe, run_dir: &Path) -> Result<BTreeMap<String, String>> {
    let feature_rows = corpus::load_feature_file(recipe.features.as_ref().expect("validated"))?;
    let truth = corpus::load_truth(recipe.truth.as_ref().expect("validated"))?;
    let aux = match recipe.feature_set {
        FeatureSet::Add => Some(Checkpoint::load(recipe.aux_ckpt.as_ref().expect("validated"))?),
        FeatureSet::Base => None,
    };

    let mut rows = Vec::with_capacity(feature_rows.len());
    for r in &feature_rows {
        let mut features = r.features.clone();
        if let Some(ckpt) = &aux {
            features.push(ckpt.score(&r.features)?);
        }
        rows.push(GbdtRow {
            qid: r.qid.clone(),
            features,
            label: truth.grade(&r.qid, &r.doc_id),
        });
    }
    let params = recipe.gbdt_params();
    let result = gbdt::train_lambdamart(&rows, &params)?;
    let model = result.model.truncated(result.best_round + 1);
    model.save(&run_dir.join("model.gbdt"))?;

    let curve: Vec<serde_json::Value> = result
        .valid_curve
        .iter()
        .enumerate()
        .map(|(i, v)| serde_json::json!({"round": i, "valid_ndcg10": v}))
        .collect();
    let mut metrics_out = String::new();
    for record in &curve {
        writeln!(metrics_out, "{}", record).unwrap();
    }
    corpus::write_atomic(&run_dir.join("metrics.jsonl"), &metrics_out)?;

    // run file over the held-out queries, scored with the truncated model
    let mut per_query: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (row, feature_row) in rows.iter().zip(&feature_rows) {
        if gbdt::in_train_split(&row.qid, params.split_fraction, params.seed) {
            continue;
        }
        per_query
            .entry(row.qid.clone())
            .or_default()
            .push((feature_row.doc_id.clone(), model.predict(&row.features)));
    }
    let rankings: Vec<(String, Vec<(String, f64)>)> = per_query.into_iter().collect();
    corpus::write_run_file(&rankings, &recipe.run_id(), &run_dir.join("valid.run"))?;

    let mut summary = base_summary(recipe);
    summary.insert("best_epoch".into(), result.best_round.to_string());
    summary.insert("trees".into(), model.trees.len().to_string());
    summary.insert(
        "best_valid_ndcg10".into(),
        format!("{}", result.valid_curve[result.best_round]),
    );
    Ok(summary)
}

struct RunSummary {
    dir_name: String,
    kv: BTreeMap<String, String>,
}

impl RunSummary {
    fn get(&self, key: &str) -> &str {
        self.kv.get(key).map(String::as_str).unwrap_or("-")
    }

    fn ndcg(&self) -> f64 {
        self.get("best_valid_ndcg10").parse().unwrap_or(f64::NAN)
    }

    /// method-specific settings worth one table cell
    fn variant(&self) -> String {
        match self.get("method") {
            "dla" if self.get("uniform_weights") == "true" => "no-ipw".into(),
            "dla" => "ipw".into(),
            "dla-lc" => format!("{}/{}", self.get("init"), self.get("mode")),
            "negsample" => format!("{} n_hard={}", self.get("scheme"), self.get("n_hard")),
            "gbdt" => self.get("feature_set").into(),
            _ => "-".into(),
        }
    }
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let root = resolve(&args.runs_root);
    let entries = std::fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.kv").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no run directories with summary.kv under {}",
            root.display()
        )));
    }

    let mut runs = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        let kv = parse_kv_file(&dir.join("summary.kv"))?;
        runs.push(RunSummary {
            dir_name: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            kv,
        });
    }
    runs.sort_by(|a, b| {
        a.get("method")
            .cmp(b.get("method"))
            .then(b.ndcg().partial_cmp(&a.ndcg()).expect("comparable ndcg"))
            .then(a.dir_name.cmp(&b.dir_name))
    });

    let mut text = String::new();
    writeln!(text, "experiment comparison (validation nDCG@10)").unwrap();
    writeln!(text, "{:<10} {:<22} {:>6} {:>14}  run", "method", "variant", "seed", "ndcg@10").unwrap();
    for r in &runs {
        writeln!(
            text,
            "{:<10} {:<22} {:>6} {:>14.6}  {}",
            r.get("method"),
            r.variant(),
            r.get("seed"),
            r.ndcg(),
            r.dir_name
        )
        .unwrap();
    }

    // sweep curves: mean ndcg by n_hard for each reconstruction scheme
    let mut sweeps: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for r in &runs {
        if r.get("method") != "negsample" {
            continue;
        }
        if let Ok(n_hard) = r.get("n_hard").parse::<u64>() {
            sweeps
                .entry((r.get("scheme").to_string(), n_hard))
                .or_default()
                .push(r.ndcg());
        }
    }
    if !sweeps.is_empty() {
        writeln!(text, "\nhard-negative sweep (mean over seeds)").unwrap();
        writeln!(text, "{:<14} {:>6} {:>6} {:>14}", "scheme", "n_hard", "runs", "mean_ndcg@10").unwrap();
        for ((scheme, n_hard), values) in &sweeps {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            writeln!(text, "{:<14} {:>6} {:>6} {:>14.6}", scheme, n_hard, values.len(), mean).unwrap();
        }
    }

    if let Some(csv_path) = &args.csv {
        let mut csv = String::from("run,method,variant,seed,n_hard,scheme,best_valid_ndcg10\n");
        for r in &runs {
            writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                r.dir_name,
                r.get("method"),
                r.variant().replace(',', ";"),
                r.get("seed"),
                r.get("n_hard"),
                r.get("scheme"),
                r.get("best_valid_ndcg10"),
            )
            .unwrap();
        }
        corpus::write_atomic(&resolve(csv_path), &csv)?;
    }

    match &args.out {
        Some(path) => {
            corpus::write_atomic(&resolve(path), &text)?;
            println!("report -> {}", resolve(path).display());
        }
        None => print!("{}", text),
    }
    Ok(())
}
