//! Command-line entry point wiring corpus loading, indicator training,
//! annotation, contrastive-instance auditing, joint training, evaluation,
//! lexical baselines, ranking, attention inspection, and gradient checks.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3
//! contract/assertion failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use serde::Serialize;

use mvcl::corpus::{
    self, elements_to_jsonl, load_corpus, parse_sentence_examples, CorpusConfig, CorpusPaths,
    TokenizeMode,
};
use mvcl::encoder::{load_fixture, EncoderKind};
use mvcl::error::Error;
use mvcl::evalkit::{baseline_evaluate, BaselineMethod, Bm25Params};
use mvcl::harness;
use mvcl::indicator::{train_indicator, IndicatorConfig, IndicatorModel};
use mvcl::manifest::RunManifest;
use mvcl::matcher::summarize_attention;
use mvcl::ranker::{exhaustive_rank, prefs_from_pair_fn, probsum_rank, wincount_rank, RankedList};
use mvcl::rng::Rng;
use mvcl::trainer::{RunConfig, TrainedModel, Trainer};

const SUBCOMMANDS: &[&str] = &[
    "train-indicator",
    "annotate",
    "build-contrastive",
    "train",
    "eval",
    "baseline",
    "rank",
    "dump-attention",
    "gradcheck",
];

enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Usage(_) => 1,
        CliError::Lib(e) => match e {
            Error::Io { .. } | Error::Config(_) => 1,
            Error::Parse { .. }
            | Error::Integrity(_)
            | Error::Format(_)
            | Error::FixtureMiss(_)
            | Error::EmptyDocument(_)
            | Error::DegenerateDataset(_) => 2,
            Error::Shape { .. } | Error::Contract(_) | Error::SizeGuard(_) => 3,
        },
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                CliError::Usage(msg) => eprintln!("usage error: {msg}"),
                CliError::Lib(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(args: &[String]) -> CliResult<()> {
    let Some(sub) = args.first() else {
        print_global_help();
        return Err(usage("missing subcommand"));
    };
    if sub == "--help" || sub == "-h" || sub == "help" {
        print_global_help();
        return Ok(());
    }
    let rest = &args[1..];
    match sub.as_str() {
        "train-indicator" => cmd_train_indicator(rest),
        "annotate" => cmd_annotate(rest),
        "build-contrastive" => cmd_build_contrastive(rest),
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "baseline" => cmd_baseline(rest),
        "rank" => cmd_rank(rest),
        "dump-attention" => cmd_dump_attention(rest),
        "gradcheck" => cmd_gradcheck(rest),
        other => {
            let hint = nearest(other, SUBCOMMANDS)
                .map(|s| format!("; did you mean `{s}`?"))
                .unwrap_or_default();
            Err(usage(format!("unknown subcommand `{other}`{hint}")))
        }
    }
}

// ---------------------------------------------------------------------------
// flag parsing
// ---------------------------------------------------------------------------

struct Args {
    values: BTreeMap<String, String>,
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut cur = vec![i + 1];
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            cur.push((prev[j] + cost).min(prev[j + 1] + 1).min(cur[j] + 1));
        }
        prev = cur;
    }
    prev[b.len()]
}

fn nearest<'a>(input: &str, options: &'a [&'a str]) -> Option<&'a str> {
    options
        .iter()
        .map(|o| (levenshtein(input, o), *o))
        .min()
        .filter(|(d, _)| *d <= 3)
        .map(|(_, o)| o)
}

fn parse_flags(sub: &str, args: &[String], known: &[&str], help: &str) -> CliResult<Option<Args>> {
    let mut values = BTreeMap::new();
    let mut it = args.iter();
    while let Some(token) = it.next() {
        if token == "--help" || token == "-h" {
            println!("{help}");
            return Ok(None);
        }
        let Some(name) = token.strip_prefix("--") else {
            return Err(usage(format!("{sub}: unexpected argument `{token}`")));
        };
        if !known.contains(&name) {
            let hint = nearest(name, known)
                .map(|s| format!("; did you mean `--{s}`?"))
                .unwrap_or_default();
            return Err(usage(format!("{sub}: unknown flag `--{name}`{hint}")));
        }
        let Some(value) = it.next() else {
            return Err(usage(format!("{sub}: flag `--{name}` needs a value")));
        };
        values.insert(name.to_string(), value.clone());
    }
    Ok(Some(Args { values }))
}

impl Args {
    fn require(&self, sub: &str, name: &str) -> CliResult<&str> {
        self.values
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| usage(format!("{sub}: missing required flag `--{name}`")))
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    fn path(&self, sub: &str, name: &str) -> CliResult<PathBuf> {
        Ok(PathBuf::from(self.require(sub, name)?))
    }

    fn opt_parse<T: std::str::FromStr>(&self, sub: &str, name: &str) -> CliResult<Option<T>> {
        match self.get(name) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| usage(format!("{sub}: cannot parse `--{name} {raw}`"))),
        }
    }
}

/// --seed flag, then MVCL_SEED, then the given default.
fn resolve_seed(args: &Args, sub: &str, default: u64) -> CliResult<u64> {
    if let Some(seed) = args.opt_parse::<u64>(sub, "seed")? {
        return Ok(seed);
    }
    match std::env::var("MVCL_SEED") {
        Ok(raw) => raw
            .parse()
            .map_err(|_| usage(format!("MVCL_SEED `{raw}` is not an integer"))),
        Err(_) => Ok(default),
    }
}

fn tokenize_mode(args: &Args, sub: &str) -> CliResult<Option<TokenizeMode>> {
    match args.get("tokenize") {
        None => Ok(None),
        Some("whitespace") => Ok(Some(TokenizeMode::Whitespace)),
        Some("character") => Ok(Some(TokenizeMode::Character)),
        Some(other) => Err(usage(format!(
            "{sub}: --tokenize must be whitespace or character, got `{other}`"
        ))),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn print_global_help() {
    println!(
        "mvcl {} — legal case retrieval with multi-view contrastive learning

USAGE: mvcl <subcommand> [flags]

SUBCOMMANDS:
  train-indicator   train the element sentence classifier
  annotate          predict per-sentence element flags for a case file
  build-contrastive emit [DEL]-masked element-view positives for audit
  train             train the retrieval model
  eval              evaluate a checkpoint on labeled triples
  baseline          run the TF-IDF or BM25 baseline on labeled triples
  rank              rank candidates for a query with a trained model
  dump-attention    top attention-mass tokens for a (query, candidate) pair
  gradcheck         finite-difference check of the full model gradient

Every subcommand accepts --help. Seeds fall back to the MVCL_SEED
environment variable when --seed is not given.",
        env!("CARGO_PKG_VERSION")
    );
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

fn cmd_train_indicator(args: &[String]) -> CliResult<()> {
    let sub = "train-indicator";
    let help = "mvcl train-indicator --examples sentence_examples.jsonl --out ckpt_dir
  [--config indicator_config.json] [--seed N] [--steps N] [--tokenize whitespace|character]";
    let Some(args) = parse_flags(
        sub,
        args,
        &["examples", "out", "config", "seed", "steps", "tokenize"],
        help,
    )?
    else {
        return Ok(());
    };
    let started = Instant::now();
    let examples_path = args.path(sub, "examples")?;
    let out = args.path(sub, "out")?;

    let mut config: IndicatorConfig = match args.get("config") {
        Some(path) => serde_json::from_str(&corpus::read_to_string(Path::new(path))?)
            .map_err(|e| Error::Format(format!("{path}: {e}")))?,
        None => IndicatorConfig::default(),
    };
    config.seed = resolve_seed(&args, sub, config.seed)?;
    if let Some(steps) = args.opt_parse::<usize>(sub, "steps")? {
        config.total_steps = steps;
    }
    if let Some(mode) = tokenize_mode(&args, sub)? {
        config.corpus.tokenize_mode = mode;
    }

    let examples =
        parse_sentence_examples(&corpus::read_to_string(&examples_path)?, &config.corpus)?;
    let mut manifest = RunManifest::new(
        sub,
        serde_json::to_value(&config).expect("config serializes"),
        config.seed,
    );
    manifest.add_input(&examples_path)?;

    let model = train_indicator(&examples, config)?;
    model.save(&out)?;
    manifest.duration_ms = started.elapsed().as_millis() as u64;
    manifest.write(&out.join("manifest.json"))?;
    println!("indicator checkpoint written to {}", out.display());
    Ok(())
}

fn cmd_annotate(args: &[String]) -> CliResult<()> {
    let sub = "annotate";
    let help = "mvcl annotate --cases cases.jsonl --model ckpt_dir --out elements.jsonl
  (the manifest lands next to the output as <out>.manifest.json)";
    let Some(args) = parse_flags(sub, args, &["cases", "model", "out"], help)? else {
        return Ok(());
    };
    let started = Instant::now();
    let cases_path = args.path(sub, "cases")?;
    let model_dir = args.path(sub, "model")?;
    let out = args.path(sub, "out")?;

    let model = IndicatorModel::load(&model_dir)?;
    let corpus = load_corpus(&CorpusPaths::cases_only(&cases_path), &model.config.corpus)?;
    let annotations = model.annotate_corpus(&corpus)?;

    let mut manifest = RunManifest::new(
        sub,
        serde_json::to_value(&model.config).expect("config serializes"),
        model.config.seed,
    );
    manifest.add_input(&cases_path)?;

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    fs::write(&out, elements_to_jsonl(&annotations))
        .map_err(|e| Error::io(out.display().to_string(), e))?;
    manifest.duration_ms = started.elapsed().as_millis() as u64;
    manifest.write(&sibling_manifest(&out))?;
    println!("wrote {} annotations to {}", annotations.len(), out.display());
    Ok(())
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|s| s.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

#[derive(Serialize)]
struct InstanceRecord<'a> {
    case_id: &'a str,
    deleted_sentences: &'a [usize],
    deleted_total: usize,
    positive_tokens: &'a [String],
}

fn cmd_build_contrastive(args: &[String]) -> CliResult<()> {
    let sub = "build-contrastive";
    let help = "mvcl build-contrastive --cases cases.jsonl --elements elements.jsonl \\
  --out instances.jsonl [--l1 64] [--seed 7] [--max-len 512] [--tokenize whitespace|character]";
    let Some(args) = parse_flags(
        sub,
        args,
        &["cases", "elements", "out", "l1", "seed", "max-len", "tokenize"],
        help,
    )?
    else {
        return Ok(());
    };
    let started = Instant::now();
    let cases_path = args.path(sub, "cases")?;
    let elements_path = args.path(sub, "elements")?;
    let out = args.path(sub, "out")?;
    let l1 = args.opt_parse::<usize>(sub, "l1")?.unwrap_or(64);
    let max_len = args.opt_parse::<usize>(sub, "max-len")?.unwrap_or(512);
    let seed = resolve_seed(&args, sub, 7)?;

    let mut corpus_config = CorpusConfig::default();
    if let Some(mode) = tokenize_mode(&args, sub)? {
        corpus_config.tokenize_mode = mode;
    }
    let paths = CorpusPaths {
        elements: Some(&elements_path),
        ..CorpusPaths::cases_only(&cases_path)
    };
    let corpus = load_corpus(&paths, &corpus_config)?;

    let mut manifest = RunManifest::new(
        sub,
        serde_json::json!({"l1": l1, "max_len": max_len, "corpus": corpus_config}),
        seed,
    );
    manifest.add_input(&cases_path)?;
    manifest.add_input(&elements_path)?;

    let mut rng = Rng::new(seed);
    let mut lines = String::new();
    let mut built = 0usize;
    for (id, case) in &corpus.cases {
        let Some(ann) = corpus.annotations.get(id) else {
            continue;
        };
        let (doc, first_kept) = case.truncate_front(max_len);
        let flags = &ann.flags[first_kept..];
        let inst = mvcl::contrastive::build_element_positive(&doc, flags, l1, &mut rng)?;
        let record = InstanceRecord {
            case_id: &inst.case_id,
            deleted_sentences: &inst.deleted_sentences,
            deleted_total: inst.deleted_total,
            positive_tokens: &inst.positive_tokens,
        };
        lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
        lines.push('\n');
        built += 1;
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    fs::write(&out, lines).map_err(|e| Error::io(out.display().to_string(), e))?;
    manifest.duration_ms = started.elapsed().as_millis() as u64;
    manifest.write(&sibling_manifest(&out))?;
    println!("wrote {built} instances to {}", out.display());
    Ok(())
}

fn load_training_corpus(
    sub: &str,
    args: &Args,
    config: &RunConfig,
) -> CliResult<(mvcl::corpus::Corpus, Vec<PathBuf>)> {
    let cases = args.path(sub, "cases")?;
    let triples = args.path(sub, "triples")?;
    let mut inputs = vec![cases.clone(), triples.clone()];
    let val = args.get("val-triples").map(PathBuf::from);
    let elements = args.get("elements").map(PathBuf::from);
    if let Some(p) = &val {
        inputs.push(p.clone());
    }
    if let Some(p) = &elements {
        inputs.push(p.clone());
    }
    let paths = CorpusPaths {
        cases: &cases,
        train_triples: Some(&triples),
        validation_triples: val.as_deref(),
        test_triples: None,
        elements: elements.as_deref(),
    };
    Ok((load_corpus(&paths, &config.corpus)?, inputs))
}

fn cmd_train(args: &[String]) -> CliResult<()> {
    let sub = "train";
    let help = "mvcl train --cases cases.jsonl --triples triples.jsonl --out ckpt_dir
  [--config config.json] [--val-triples file] [--elements elements.jsonl]
  [--fixture embeddings.jsonl] [--seed N] [--total-steps N]";
    let Some(args) = parse_flags(
        sub,
        args,
        &[
            "cases",
            "triples",
            "out",
            "config",
            "val-triples",
            "elements",
            "fixture",
            "seed",
            "total-steps",
        ],
        help,
    )?
    else {
        return Ok(());
    };
    let started = Instant::now();
    let out = args.path(sub, "out")?;

    let mut config: RunConfig = match args.get("config") {
        Some(path) => serde_json::from_str(&corpus::read_to_string(Path::new(path))?)
            .map_err(|e| Error::Format(format!("{path}: {e}")))?,
        None => RunConfig::default(),
    };
    config.train.seed = resolve_seed(&args, sub, config.train.seed)?;
    if let Some(steps) = args.opt_parse::<usize>(sub, "total-steps")? {
        config.train.total_steps = steps;
    }
    if let Some(fixture_path) = args.get("fixture") {
        config.encoder.kind = EncoderKind::Fixture;
        config.encoder.fixture_path = Some(fixture_path.to_string());
    }

    let (corpus, mut inputs) = load_training_corpus(sub, &args, &config)?;
    let fixture = match (&config.encoder.kind, &config.encoder.fixture_path) {
        (EncoderKind::Fixture, Some(path)) => {
            inputs.push(PathBuf::from(path));
            Some(load_fixture(Path::new(path))?)
        }
        (EncoderKind::Fixture, None) => {
            return Err(usage(format!("{sub}: fixture encoder needs --fixture")));
        }
        _ => None,
    };

    let mut manifest = RunManifest::new(
        sub,
        serde_json::to_value(&config).expect("config serializes"),
        config.train.seed,
    );
    for p in &inputs {
        manifest.add_input(p)?;
    }

    let mut trainer = Trainer::new(&corpus, fixture, config)?;
    trainer.train()?;
    trainer.save(&out)?;
    manifest.duration_ms = started.elapsed().as_millis() as u64;
    manifest.write(&out.join("manifest.json"))?;
    println!(
        "trained {} steps; best validation accuracy {:.4}; checkpoint at {}",
        trainer.current_step(),
        trainer.best_validation_accuracy(),
        out.display()
    );
    Ok(())
}

fn load_eval_corpus(
    sub: &str,
    args: &Args,
    config: &CorpusConfig,
) -> CliResult<(mvcl::corpus::Corpus, Vec<PathBuf>)> {
    let cases = args.path(sub, "cases")?;
    let triples = args.path(sub, "triples")?;
    let paths = CorpusPaths {
        cases: &cases,
        train_triples: None,
        validation_triples: None,
        test_triples: Some(&triples),
        elements: None,
    };
    let corpus = load_corpus(&paths, config)?;
    Ok((corpus, vec![cases, triples]))
}

fn cmd_eval(args: &[String]) -> CliResult<()> {
    let sub = "eval";
    let help = "mvcl eval --model ckpt_dir --cases cases.jsonl --triples triples.jsonl --out dir";
    let Some(args) = parse_flags(sub, args, &["model", "cases", "triples", "out"], help)? else {
        return Ok(());
    };
    let started = Instant::now();
    let model_dir = args.path(sub, "model")?;
    let out = args.path(sub, "out")?;
    let model = TrainedModel::load(&model_dir)?;
    let (corpus, inputs) = load_eval_corpus(sub, &args, &model.config.corpus)?;
    let report = model.evaluate(&corpus, &corpus.test)?;

    let mut manifest = RunManifest::new(
        sub,
        serde_json::to_value(&model.config).expect("config serializes"),
        model.config.train.seed,
    );
    for p in &inputs {
        manifest.add_input(p)?;
    }
    write_json(&out.join("report.json"), &report)?;
    manifest.duration_ms = started.elapsed().as_millis() as u64;
    manifest.write(&out.join("manifest.json"))?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report"));
    Ok(())
}

fn cmd_baseline(args: &[String]) -> CliResult<()> {
    let sub = "baseline";
    let help = "mvcl baseline --method tfidf|bm25 --cases cases.jsonl --triples triples.jsonl \\
  --out dir [--k1 1.2] [--b 0.75] [--tokenize whitespace|character]";
    let Some(args) = parse_flags(
        sub,
        args,
        &["method", "cases", "triples", "out", "k1", "b", "tokenize"],
        help,
    )?
    else {
        return Ok(());
    };
    let started = Instant::now();
    let method = match args.require(sub, "method")? {
        "tfidf" => BaselineMethod::Tfidf,
        "bm25" => BaselineMethod::Bm25,
        other => return Err(usage(format!("{sub}: unknown method `{other}`"))),
    };
    let out = args.path(sub, "out")?;
    let mut corpus_config = CorpusConfig::default();
    if let Some(mode) = tokenize_mode(&args, sub)? {
        corpus_config.tokenize_mode = mode;
    }
    let params = Bm25Params {
        k1: args.opt_parse::<f64>(sub, "k1")?.unwrap_or(1.2),
        b: args.opt_parse::<f64>(sub, "b")?.unwrap_or(0.75),
    };
    let (corpus, inputs) = load_eval_corpus(sub, &args, &corpus_config)?;
    let report = baseline_evaluate(&corpus, &corpus.test, method, &params)?;

    let mut manifest = RunManifest::new(
        sub,
        serde_json::json!({"method": method, "params": params, "corpus": corpus_config}),
        0,
    );
    for p in &inputs {
        manifest.add_input(p)?;
    }
    write_json(&out.join("report.json"), &report)?;
    manifest.duration_ms = started.elapsed().as_millis() as u64;
    manifest.write(&out.join("manifest.json"))?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report"));
    Ok(())
}

fn cmd_rank(args: &[String]) -> CliResult<()> {
    let sub = "rank";
    let help = "mvcl rank --model ckpt_dir --cases cases.jsonl --query Q \\
  --candidates c1,c2,... --method exhaustive|wincount|probsum --out dir";
    let Some(args) = parse_flags(
        sub,
        args,
        &["model", "cases", "query", "candidates", "method", "out"],
        help,
    )?
    else {
        return Ok(());
    };
    let started = Instant::now();
    let model_dir = args.path(sub, "model")?;
    let cases_path = args.path(sub, "cases")?;
    let out = args.path(sub, "out")?;
    let query = args.require(sub, "query")?.to_string();
    let candidates: Vec<String> = args
        .require(sub, "candidates")?
        .split(',')
        .map(str::to_string)
        .filter(|s| !s.is_empty())
        .collect();
    if candidates.len() < 2 {
        return Err(usage(format!("{sub}: need at least two --candidates")));
    }
    let method = args.require(sub, "method")?.to_string();

    let model = TrainedModel::load(&model_dir)?;
    let corpus = load_corpus(&CorpusPaths::cases_only(&cases_path), &model.config.corpus)?;

    let prefs = prefs_from_pair_fn(&candidates, |first, second| {
        let triple = mvcl::corpus::Triple {
            query_id: query.clone(),
            cand_b_id: first.to_string(),
            cand_c_id: second.to_string(),
            label: 0,
        };
        model.predict_triple(&corpus, &triple)
    })?;
    let ranked: RankedList = match method.as_str() {
        "exhaustive" => exhaustive_rank(&prefs)?,
        "wincount" => wincount_rank(&prefs),
        "probsum" => probsum_rank(&prefs),
        other => return Err(usage(format!("{sub}: unknown method `{other}`"))),
    };

    let mut manifest = RunManifest::new(
        sub,
        serde_json::json!({"query": query, "candidates": candidates, "method": method}),
        model.config.train.seed,
    );
    manifest.add_input(&cases_path)?;
    write_json(&out.join("ranking.json"), &ranked)?;
    manifest.duration_ms = started.elapsed().as_millis() as u64;
    manifest.write(&out.join("manifest.json"))?;
    println!("{}", serde_json::to_string_pretty(&ranked).expect("ranking"));
    Ok(())
}

fn cmd_dump_attention(args: &[String]) -> CliResult<()> {
    let sub = "dump-attention";
    let help = "mvcl dump-attention --model ckpt_dir --cases cases.jsonl --query Q --cand C \\
  --out dir [--top-k 10]";
    let Some(args) = parse_flags(
        sub,
        args,
        &["model", "cases", "query", "cand", "top-k", "out"],
        help,
    )?
    else {
        return Ok(());
    };
    let started = Instant::now();
    let model_dir = args.path(sub, "model")?;
    let cases_path = args.path(sub, "cases")?;
    let out = args.path(sub, "out")?;
    let query = args.require(sub, "query")?;
    let cand = args.require(sub, "cand")?;
    let top_k = args.opt_parse::<usize>(sub, "top-k")?.unwrap_or(10);

    let model = TrainedModel::load(&model_dir)?;
    let corpus = load_corpus(&CorpusPaths::cases_only(&cases_path), &model.config.corpus)?;
    let (record, q_doc, c_doc) = model.pair_attention(&corpus, query, cand)?;
    let dump = summarize_attention(&record, query, cand, &q_doc.tokens, &c_doc.tokens, top_k)?;

    let mut manifest = RunManifest::new(
        sub,
        serde_json::json!({"query": query, "cand": cand, "top_k": top_k}),
        model.config.train.seed,
    );
    manifest.add_input(&cases_path)?;
    write_json(&out.join("attention.json"), &dump)?;
    manifest.duration_ms = started.elapsed().as_millis() as u64;
    manifest.write(&out.join("manifest.json"))?;
    println!("{}", serde_json::to_string_pretty(&dump).expect("dump"));
    Ok(())
}

fn cmd_gradcheck(args: &[String]) -> CliResult<()> {
    let sub = "gradcheck";
    let help = "mvcl gradcheck [--d 8] [--h-rnn 6] [--seed 1] [--eps 1e-5] [--tolerance 1e-4]
  [--out dir]   (default out dir: ./mvcl_gradcheck)";
    let Some(args) = parse_flags(
        sub,
        args,
        &["d", "h-rnn", "seed", "eps", "tolerance", "out"],
        help,
    )?
    else {
        return Ok(());
    };
    let started = Instant::now();
    let out = args
        .get("out")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("mvcl_gradcheck"));
    let d = args.opt_parse::<usize>(sub, "d")?.unwrap_or(8);
    let h_rnn = args.opt_parse::<usize>(sub, "h-rnn")?.unwrap_or(6);
    let seed = resolve_seed(&args, sub, 1)?;
    let eps = args.opt_parse::<f64>(sub, "eps")?.unwrap_or(1e-5);
    let tolerance = args.opt_parse::<f64>(sub, "tolerance")?.unwrap_or(1e-4);

    let report = harness::gradcheck_full_composition(d, h_rnn, seed, eps, tolerance)?;

    let mut manifest = RunManifest::new(
        sub,
        serde_json::json!({"d": d, "h_rnn": h_rnn, "eps": eps, "tolerance": tolerance}),
        seed,
    );
    write_json(&out.join("report.json"), &report)?;
    manifest.duration_ms = started.elapsed().as_millis() as u64;
    manifest.write(&out.join("manifest.json"))?;
    println!(
        "gradcheck over {} of {} coordinates: max relative error {:.3e} (tolerance {:.1e}) — {}",
        report.checked,
        report.total_coordinates,
        report.max_rel_err,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(())
}
