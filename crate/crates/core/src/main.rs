use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use uqrag::engine::{QueryMode, RetrievalPolicy};
use uqrag::estimators::{score, Estimator, EstimatorConfig};
use uqrag::experiment::{run_experiment, GeneratorKind, NliKind, RunConfig};
use uqrag::retrieval::{read_corpus, InvertedIndex};
use uqrag::similarity::{HttpNli, LexicalNli, NliProvider, ResponseSet};
use uqrag::transport::JsonClient;

#[derive(Parser)]
#[command(name = "uqrag", version, about = "Uncertainty-gated active retrieval for question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSON Lines corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer a dataset and write traces.jsonl and report.json.
    Run(Box<RunArgs>),
    /// Score response sets with every estimator.
    Score {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "none")]
        nli: NliArg,
        #[arg(long)]
        nli_endpoint: Option<String>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum NliArg {
    None,
    Lexical,
    Http,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum QueryModeArg {
    TemporarySentence,
    Subquery,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration. Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// always | never | threshold | flare-instruct, or a preset name such as deg-mat-jaccard.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    estimator: Option<Estimator>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, value_enum)]
    query_mode: Option<QueryModeArg>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Script file; selects the mock generator.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Completion endpoint; selects the HTTP generator.
    #[arg(long, conflicts_with = "script")]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum)]
    nli: Option<NliArg>,
    #[arg(long)]
    nli_endpoint: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index { corpus, out } => cmd_index(corpus, out),
        Command::Run(args) => cmd_run(*args),
        Command::Score { input, nli, nli_endpoint } => cmd_score(input, nli, nli_endpoint),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn cmd_index(corpus: PathBuf, out: PathBuf) -> Result<ExitCode, String> {
    let file = File::open(&corpus).map_err(|e| format!("{}: {e}", corpus.display()))?;
    let docs = read_corpus(BufReader::new(file)).map_err(|e| format!("{}: {e}", corpus.display()))?;
    let index = InvertedIndex::build(docs).map_err(|e| e.to_string())?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
    }
    index.save(&out).map_err(|e| e.to_string())?;
    println!("{} documents, avgdl {:.2}", index.doc_count(), index.avg_doc_length());
    Ok(ExitCode::SUCCESS)
}

fn apply_overrides(config: &mut RunConfig, a: RunArgs) -> Result<(), String> {
    if let Some(name) = &a.policy {
        config.policy = match name.as_str() {
            "always" => RetrievalPolicy::always(config.policy.query_mode),
            "never" => RetrievalPolicy::never(),
            "flare-instruct" | "flare_instruct" => RetrievalPolicy::flare_instruct(config.policy.query_mode),
            "threshold" => RetrievalPolicy {
                kind: uqrag::engine::PolicyKind::Threshold,
                ..config.policy
            },
            other => RetrievalPolicy::preset(other).ok_or_else(|| format!("unknown policy {other:?}"))?,
        };
    }
    if let Some(e) = a.estimator {
        config.policy.estimator = Some(e);
    }
    if let Some(t) = a.theta {
        config.policy.theta = Some(t);
    }
    if let Some(q) = a.query_mode {
        config.policy.query_mode = match q {
            QueryModeArg::TemporarySentence => QueryMode::TemporarySentence,
            QueryModeArg::Subquery => QueryMode::Subquery,
        };
    }
    if let Some(n) = a.n_samples {
        config.engine.num_samples = n;
    }
    if let Some(k) = a.top_k {
        config.engine.top_k = k;
    }
    if a.limit.is_some() {
        config.limit = a.limit;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(r) = a.repeats {
        config.repeats = r;
    }
    if let Some(p) = a.parallel {
        config.parallel = p;
    }
    if a.index.is_some() {
        config.paths.index = a.index;
    }
    if a.dataset.is_some() {
        config.paths.dataset = a.dataset;
    }
    if a.out.is_some() {
        config.paths.report_dir = a.out;
    }
    if a.script.is_some() {
        config.generator.kind = GeneratorKind::Mock;
        config.generator.script = a.script;
    }
    if a.endpoint.is_some() {
        config.generator.kind = GeneratorKind::Http;
        config.generator.endpoint = a.endpoint;
    }
    if a.model.is_some() {
        config.generator.model = a.model;
    }
    if let Some(n) = a.nli {
        config.nli.kind = match n {
            NliArg::None => NliKind::None,
            NliArg::Lexical => NliKind::Lexical,
            NliArg::Http => NliKind::Http,
        };
    }
    if a.nli_endpoint.is_some() {
        config.nli.endpoint = a.nli_endpoint;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut config, args)?;
    let report = run_experiment(&config).map_err(|e| e.to_string())?;
    println!("{}", report.summary_line());
    Ok(if report.any_failed() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

#[derive(Deserialize)]
struct ScoreLine {
    responses: Vec<String>,
}

#[derive(Serialize)]
struct ScoreOut {
    #[serde(skip_serializing_if = "Option::is_none")]
    semantic_sets: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eig_v_laplacian: Option<f64>,
    deg_mat_jaccard: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    deg_mat_nli: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eccentricity: Option<f64>,
}

fn cmd_score(input: PathBuf, nli: NliArg, nli_endpoint: Option<String>) -> Result<ExitCode, String> {
    let provider: Option<Box<dyn NliProvider>> = match nli {
        NliArg::None => None,
        NliArg::Lexical => Some(Box::new(LexicalNli)),
        NliArg::Http => {
            let url = nli_endpoint.ok_or("--nli http requires --nli-endpoint")?;
            Some(Box::new(HttpNli::new(url, JsonClient::api_key_from_env())))
        }
    };
    let provider = provider.as_deref();
    let cfg = EstimatorConfig::default();
    let file = File::open(&input).map_err(|e| format!("{}: {e}", input.display()))?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| format!("line {lineno}: {e}"))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ScoreLine = serde_json::from_str(&line).map_err(|e| format!("line {lineno}: {e}"))?;
        let rs = ResponseSet::new(parsed.responses).map_err(|e| format!("line {lineno}: {e}"))?;
        let run = |est| score(&rs, est, provider, &cfg).map(|s| s.value).map_err(|e| format!("line {lineno}: {e}"));
        let with_nli = |est| if provider.is_some() { run(est).map(Some) } else { Ok(None) };
        let row = ScoreOut {
            semantic_sets: with_nli(Estimator::SemanticSets)?,
            eig_v_laplacian: with_nli(Estimator::EigVLaplacian)?,
            deg_mat_jaccard: run(Estimator::DegMatJaccard)?,
            deg_mat_nli: with_nli(Estimator::DegMatNli)?,
            eccentricity: with_nli(Estimator::Eccentricity)?,
        };
        writeln!(out, "{}", serde_json::to_string(&row).expect("scores serialize")).map_err(|e| e.to_string())?;
    }
    Ok(ExitCode::SUCCESS)
}
