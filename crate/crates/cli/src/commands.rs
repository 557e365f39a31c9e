use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use xmap_core::corpus::{align_corpus, read_corpus_jsonl, split_ids, PairedCorpus, SplitSpec};
use xmap_core::embedder::{embed_batch, EmbedderSpec};
use xmap_core::embedding::{read_embeddings, write_embeddings, EmbeddingMatrix};
use xmap_core::eval::{
    build_distractor_sets, correlate_manual_scores, evaluate_search, percent3, random_baseline_mrr, sample_close_pairs,
};
use xmap_core::knn::{build_index, load_index, save_index, sq_l2};
use xmap_core::mapper::{load_model, save_model, train, MapperConfig, Optimizer, TrainConfig};
use xmap_core::Error;
use xmap_service::{Engine, SearchResponse, ServiceConfig};

use crate::args::*;

#[derive(Debug)]
pub enum CliError {
    /// Bad flag values caught after parsing.
    Usage(String),
    Core { context: String, source: Error },
    Csv(csv::Error),
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core { source, .. } if source.is_data_error() => 2,
            CliError::Csv(e) if !matches!(e.kind(), csv::ErrorKind::Io(_)) => 2,
            _ => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core { context, source } if context.is_empty() => write!(f, "{source}"),
            CliError::Core { context, source } => write!(f, "{context}: {source}"),
            CliError::Csv(e) => write!(f, "scores CSV: {e}"),
            CliError::Io { context, source } => write!(f, "{context}: {source}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(source: Error) -> Self {
        CliError::Core {
            context: String::new(),
            source,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Csv(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

trait Context<T> {
    fn context(self, ctx: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for xmap_core::Result<T> {
    fn context(self, ctx: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Core { context: ctx(), source })
    }
}

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Embed(a) => embed(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Index(a) => index(a),
        Command::Search(a) => search(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::Correlate(a) => correlate(a),
        Command::SamplePairs(a) => sample_pairs(a),
        Command::Serve(a) => serve(a),
    }
}

/// Compact JSON line on stdout, or pretty JSON in a file.
fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult {
    match path {
        Some(p) => {
            let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
            text.push('\n');
            fs::write(p, text).map_err(|source| CliError::Io {
                context: format!("writing {}", p.display()),
                source,
            })
        }
        None => {
            let text = serde_json::to_string(value).map_err(Error::from)?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|source| CliError::Io {
                context: "writing stdout".into(),
                source,
            })
        }
    }
}

fn load_paired(corpus: &Path, nl: &Path, code: &Path) -> CliResult<PairedCorpus> {
    let entries = read_corpus_jsonl(corpus)?;
    let nl = read_embeddings(nl)?;
    let code = read_embeddings(code)?;
    Ok(align_corpus(entries, nl, code)?)
}

fn embed(a: EmbedArgs) -> CliResult {
    let dim = a.dim as usize;
    let spec = match (a.endpoint, a.model) {
        (Some(endpoint), Some(model)) => EmbedderSpec::External {
            endpoint,
            model_name: model,
            dim,
            timeout: Duration::from_secs(a.timeout_secs),
        },
        _ => EmbedderSpec::hash(dim, a.seed),
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let entries = read_corpus_jsonl(&a.corpus)?;
    let texts: Vec<&str> = entries
        .iter()
        .map(|e| match a.field {
            Field::Doc => e.doc_text.as_str(),
            Field::Code => e.code_text.as_str(),
        })
        .collect();
    let chunk = if spec.is_external() { a.batch_size as usize } else { 1000 };
    let mut data = Vec::with_capacity(texts.len() * dim);
    let mut done = 0;
    for (b, batch) in texts.chunks(chunk).enumerate() {
        let vectors = embed_batch(&spec, batch).context(|| {
            format!("batch {b} (items {}..{})", done, done + batch.len())
        })?;
        data.extend_from_slice(vectors.vectors.as_slice());
        let before = done;
        done += batch.len();
        if done / 1000 > before / 1000 || done == texts.len() {
            log::info!("embedded {done}/{}", texts.len());
        }
    }
    let matrix = EmbeddingMatrix::new(dim, data)?;
    write_embeddings(&matrix, &a.out)?;
    eprintln!("wrote {} x {} vectors to {}", matrix.count(), dim, a.out.display());
    Ok(())
}

fn split(a: SplitArgs) -> CliResult {
    let fractions = (a.train, a.valid, a.test);
    let sum = a.train + a.valid + a.test;
    if [a.train, a.valid, a.test].iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CliError::Usage(format!(
            "split fractions must be non-negative and sum to 1, got {} + {} + {}",
            a.train, a.valid, a.test
        )));
    }
    let entries = read_corpus_jsonl(&a.corpus)?;
    let ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    let spec = split_ids(&ids, fractions, a.seed)?;
    spec.write(&a.out)?;
    eprintln!(
        "split {} ids: train {}, valid {}, test {}",
        ids.len(),
        spec.train_ids.len(),
        spec.valid_ids.len(),
        spec.test_ids.len()
    );
    Ok(())
}

pub fn report_path(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".report.json");
    PathBuf::from(name)
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let tcfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch as usize,
        margin: a.margin,
        max_epochs: a.max_epochs as usize,
        patience: a.patience,
        seed: a.seed,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => Optimizer::default(),
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
    };
    tcfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if a.hidden.contains(&0) {
        return Err(CliError::Usage("hidden layer widths must be at least 1".into()));
    }

    let corpus = load_paired(&a.corpus, &a.nl_emb, &a.code_emb)?;
    let (nl_dim, code_dim) = (corpus.nl_vectors().dim(), corpus.code_vectors().dim());
    for (flag, declared, actual) in [("--input-dim", a.input_dim, nl_dim), ("--output-dim", a.output_dim, code_dim)] {
        if let Some(d) = declared.filter(|d| *d != actual) {
            return Err(Error::DimMismatch {
                expected: d,
                found: actual,
            })
            .context(|| format!("{flag} does not match the embeddings"));
        }
    }
    let split = SplitSpec::read(&a.split)?;
    split.validate(&corpus)?;
    let mcfg = MapperConfig::new(nl_dim, a.hidden.clone(), code_dim);
    log::info!(
        "training {:?} on {} pairs ({} train, {} valid)",
        mcfg.layer_shapes(),
        corpus.len(),
        split.train_ids.len(),
        split.valid_ids.len()
    );
    let (net, report) = train(&corpus, &split, &mcfg, &tcfg)?;
    save_model(&net, &a.out_model)?;
    emit_json(&report, Some(&report_path(&a.out_model)))?;
    eprintln!(
        "{} epochs{}, best epoch {} with validation loss {:.6}",
        report.epochs_run,
        if report.stopped_early { " (stopped early)" } else { "" },
        report.best_epoch,
        report.best_valid_loss()
    );
    Ok(())
}

fn index(a: IndexArgs) -> CliResult {
    let entries = read_corpus_jsonl(&a.corpus)?;
    let code = read_embeddings(&a.code_emb)?;
    let ids = entries.into_iter().map(|e| e.id).collect();
    let index = build_index(code, ids, a.metric)?;
    save_index(&index, &a.out)?;
    eprintln!("indexed {} vectors ({}, dim {})", index.len(), index.metric(), index.dim());
    Ok(())
}

fn query_embedder(e: &QueryEmbedderArgs, dim: usize) -> CliResult<EmbedderSpec> {
    let spec = match (&e.endpoint, &e.embed_model) {
        (Some(endpoint), Some(model)) => EmbedderSpec::External {
            endpoint: endpoint.clone(),
            model_name: model.clone(),
            dim,
            timeout: Duration::from_secs(e.embed_timeout_secs),
        },
        _ => EmbedderSpec::hash(dim, e.embed_seed),
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

fn parse_vector(text: &str) -> CliResult<Vec<f32>> {
    let trimmed = text.trim();
    let values: Result<Vec<f64>, String> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| e.to_string())
    } else {
        trimmed
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}")))
            .collect()
    };
    let values = values.map_err(|e| CliError::Usage(format!("invalid --query-vec: {e}")))?;
    values
        .into_iter()
        .map(|v| {
            let f = v as f32;
            f.is_finite()
                .then_some(f)
                .ok_or_else(|| CliError::Usage(format!("invalid --query-vec: {v} is not a finite f32")))
        })
        .collect()
}

fn search(a: SearchArgs) -> CliResult {
    let query_vec = a.query_vec.as_deref().map(parse_vector).transpose()?;
    let (net, _) = load_model(&a.model)?;
    let spec = query_embedder(&a.embedder, net.input_dim())?;
    let index = load_index(&a.index)?;
    let corpus = read_corpus_jsonl(&a.corpus)?;
    let engine = Engine::new(net, index, corpus, spec)?;
    let hits = match (query_vec, &a.query_text) {
        (Some(v), _) => engine.search_vector(&v, a.n as usize).context(|| "--query-vec".into())?,
        (None, Some(text)) => engine.search_text(text, a.n as usize)?,
        (None, None) => unreachable!("clap requires one query"),
    };
    emit_json(&SearchResponse { hits }, None)
}

fn eval(a: EvalArgs) -> CliResult {
    if a.max_queries == Some(0) {
        return Err(CliError::Usage("--max-queries must be at least 1".into()));
    }
    let (net, _) = load_model(&a.model)?;
    let corpus = load_paired(&a.corpus, &a.nl_emb, &a.code_emb)?;
    let split = SplitSpec::read(&a.split)?;
    split.validate(&corpus)?;
    let mut queries = split.test_ids.clone();
    queries.sort();
    if let Some(m) = a.max_queries {
        queries.truncate(m);
    }
    let sets = build_distractor_sets(&queries, &split.test_ids, a.distractors, a.seed)
        .context(|| "test split is the distractor pool".into())?;
    let report = evaluate_search(&net, &corpus, &sets, a.metric, a.seed)?;
    emit_json(&report, a.report.as_deref())?;
    eprintln!("MRR over {} queries (k={}): {}%", report.per_query.len(), report.k, report.mrr_percent());
    if a.baseline {
        eprintln!("random baseline: {}%", percent3(random_baseline_mrr(a.distractors + 1)));
    }
    Ok(())
}

#[derive(Serialize)]
struct BaselineReport {
    candidates: usize,
    mrr: f64,
}

fn baseline(a: BaselineArgs) -> CliResult {
    let n = a.candidates as usize;
    let mrr = random_baseline_mrr(n);
    emit_json(&BaselineReport { candidates: n, mrr }, None)?;
    eprintln!("random baseline over {n} candidates: {}%", percent3(mrr));
    Ok(())
}

fn row_ids(src: &IdSource) -> CliResult<Vec<String>> {
    if let Some(corpus) = &src.corpus {
        return Ok(read_corpus_jsonl(corpus)?.into_iter().map(|e| e.id).collect());
    }
    let path = src.ids.as_ref().expect("clap requires an id source");
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        context: format!("reading {}", path.display()),
        source,
    })?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let id = line.trim();
            if id.is_empty() {
                Err(Error::Metadata {
                    line: i + 1,
                    message: "empty id".into(),
                })
                .context(|| path.display().to_string())
            } else {
                Ok(id.to_string())
            }
        })
        .collect()
}

fn rows_by_id(ids: &[String], matrix: &EmbeddingMatrix) -> CliResult<HashMap<String, usize>> {
    if ids.len() != matrix.count() {
        return Err(Error::CountMismatch {
            expected: matrix.count(),
            found: ids.len(),
        }
        .into());
    }
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(Error::DuplicateId(id.clone()).into());
        }
    }
    Ok(map)
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    id_a: String,
    id_b: String,
    score: f64,
}

fn correlate(a: CorrelateArgs) -> CliResult {
    let matrix = read_embeddings(&a.emb)?;
    let ids = row_ids(&a.rows)?;
    let rows = rows_by_id(&ids, &matrix)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&a.scores)?;
    let mut scores = Vec::new();
    let mut distances = Vec::new();
    for record in reader.deserialize() {
        let r: ScoreRow = record?;
        let lookup = |id: &str| rows.get(id).copied().ok_or_else(|| Error::UnknownId(id.to_string()));
        let (i, j) = (lookup(&r.id_a)?, lookup(&r.id_b)?);
        if !r.score.is_finite() {
            return Err(Error::InvalidInput(format!("score for ({}, {}) is not finite", r.id_a, r.id_b)).into());
        }
        scores.push(r.score);
        distances.push(sq_l2(matrix.row(i), matrix.row(j)).sqrt());
    }
    let report = correlate_manual_scores(&scores, &distances)?;
    emit_json(&report, a.report.as_deref())?;
    eprintln!("r = {:.4}, p = {:.3e}, n = {}", report.r, report.p_value, report.n);
    Ok(())
}

fn sample_pairs(a: SamplePairsArgs) -> CliResult {
    let matrix = read_embeddings(&a.emb)?;
    let ids = row_ids(&a.rows)?;
    let pairs = sample_close_pairs(&matrix, &ids, a.count as usize)?;
    let mut writer = csv::Writer::from_path(&a.out)?;
    writer.write_record(["id_a", "id_b", "distance"])?;
    for p in &pairs {
        writer.write_record([p.id_a.as_str(), p.id_b.as_str(), &p.sq_distance.sqrt().to_string()])?;
    }
    writer.flush().map_err(|source| CliError::Io {
        context: format!("writing {}", a.out.display()),
        source,
    })?;
    eprintln!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    // The embedder dimension defaults to the model's input width.
    let (net, _) = load_model(&a.model)?;
    let config = ServiceConfig {
        bind: a.bind,
        model_path: a.model,
        index_path: a.index,
        corpus_path: a.corpus,
        embedder: query_embedder(&a.embedder, net.input_dim())?,
        max_n: a.max_n as usize,
        request_timeout: Duration::from_secs(a.timeout_secs),
    };
    drop(net);
    let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        context: "starting runtime".into(),
        source,
    })?;
    runtime.block_on(xmap_service::serve(config)).map_err(|e| match e {
        xmap_service::ServiceError::Startup(source) => source.into(),
        other => CliError::Io {
            context: "serve".into(),
            source: std::io::Error::other(other.to_string()),
        },
    })
}

