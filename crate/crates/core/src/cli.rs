//! The `rlda` command line.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 on data
//! errors, 3 when a recursion ends in a failure outcome.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{ingest, preprocess, Corpus, IngestOptions, InputFormat, PreprocessConfig};
use crate::error::{Error, Result};
use crate::evalmetrics::{self, GridPoint};
use crate::experiments::{run_plan, ExperimentPlan};
use crate::hdp::{fit_hdp, EscalationMode, HdpConfig};
use crate::lda::{fit, LdaConfig, LdaModel};
use crate::recursor::{run_recursion, trace_to_jsonl, GuardParams, InitialK, RecursionConfig};
use crate::synth::{generate, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RECURSION_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rlda", version, about = "Topic clustering with HDP seeding and recursive LDA refinement")]
pub struct Cli {
    /// Base seed for every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean raw questions into a corpus (corpus.json).
    Preprocess(PreprocessArgs),
    /// Shuffle document order (corpus_perm<seed>.json).
    Permute(CorpusArg),
    /// Keep the first N documents (corpus_n<N>.json).
    Prefix(PrefixArgs),
    /// Estimate topic counts with the truncated HDP (hdp.json).
    Hdp(HdpArgs),
    /// Fit one LDA model (model.json).
    Fit(FitArgs),
    /// Refit LDA until every topic is used (trace.jsonl, model_final.json).
    Recurse(RecurseArgs),
    /// Grid-search alpha and eta by coherence (tuning.csv, tuning.json).
    Tune(TuneArgs),
    /// Held-out perplexity of a model (perplexity.json).
    Perplexity(PerplexityArgs),
    /// Run a multi-cell experiment plan.
    Experiment(ExperimentArgs),
    /// Dominant topic and keywords per document (clusters.csv).
    ExportClusters(ExportArgs),
    /// Generate a synthetic question file (synth.csv, synth_truth.json).
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Blocks,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
    #[arg(long)]
    pub id_col: Option<String>,
    #[arg(long)]
    pub text_col: Option<String>,
}

#[derive(Debug, Args)]
pub struct CorpusArg {
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrefixArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub size: usize,
}

#[derive(Debug, Args, Default)]
pub struct LdaFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
}

impl LdaFlags {
    fn apply(&self, mut c: LdaConfig) -> LdaConfig {
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.eta {
            c.eta = v;
        }
        if let Some(v) = self.sweeps {
            c.sweeps = v;
        }
        if let Some(v) = self.burn_in {
            c.burn_in = v;
        }
        c
    }
}

#[derive(Debug, Args, Default)]
pub struct HdpFlags {
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beta_prior: Option<f64>,
    #[arg(long)]
    pub eta_doc: Option<f64>,
    #[arg(long)]
    pub truncation: Option<usize>,
    #[arg(long)]
    pub hdp_sweeps: Option<usize>,
    #[arg(long)]
    pub hdp_burn_in: Option<usize>,
    /// Refit the HDP for each escalation level instead of re-thresholding.
    #[arg(long)]
    pub refit_escalation: bool,
}

impl HdpFlags {
    fn apply(&self, mut c: HdpConfig) -> HdpConfig {
        if let Some(v) = self.gamma {
            c.gamma = v;
        }
        if let Some(v) = self.beta_prior {
            c.beta_prior = v;
        }
        if let Some(v) = self.eta_doc {
            c.eta_doc = v;
        }
        if let Some(v) = self.truncation {
            c.truncation = Some(v);
        }
        if let Some(v) = self.hdp_sweeps {
            c.sweeps = v;
        }
        if let Some(v) = self.hdp_burn_in {
            c.burn_in = v;
        }
        if self.refit_escalation {
            c.escalation = EscalationMode::Refit;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct HdpArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub hdp: HdpFlags,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub lda: LdaFlags,
}

#[derive(Debug, Args)]
pub struct RecurseArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `hdp1`, `hdp2` or a positive integer.
    #[arg(long, default_value = "hdp2")]
    pub init_k: String,
    #[arg(long)]
    pub gamma_guard: Option<f64>,
    #[arg(long)]
    pub eta_guard: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[command(flatten)]
    pub lda: LdaFlags,
    #[command(flatten)]
    pub hdp: HdpFlags,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = evalmetrics::DEFAULT_TOP_M)]
    pub top_m: usize,
    /// Comma-separated values used for both alpha and eta.
    #[arg(long, value_delimiter = ',')]
    pub grid_values: Option<Vec<f64>>,
    #[command(flatten)]
    pub lda: LdaFlags,
}

#[derive(Debug, Args)]
pub struct PerplexityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub held_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub plan: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = crate::lda::DEFAULT_KEYWORDS)]
    pub keywords: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub true_k: usize,
    #[arg(long, default_value_t = 500)]
    pub docs: usize,
    #[arg(long, default_value_t = 200)]
    pub vocab: usize,
    #[arg(long, default_value_t = 40)]
    pub doc_len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
}

/// Contents of `--config`. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub preprocess: PreprocessConfig,
    pub id_col: Option<String>,
    pub text_col: Option<String>,
    pub lda: LdaConfig,
    pub hdp: HdpConfig,
    pub guards: GuardParams,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let s = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Ok(serde_json::from_str(&s)?)
            }
        }
    }
}

/// Parse `args` (program name first) and run; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            }
        }
    }
}

fn out_path(cli: &Cli, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cli.output_dir).map_err(|e| Error::io(&cli.output_dir, e))?;
    Ok(cli.output_dir.join(name))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_init_k(s: &str) -> Result<InitialK> {
    match s {
        "hdp1" => Ok(InitialK::Hdp1),
        "hdp2" => Ok(InitialK::Hdp2),
        n => n
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 1)
            .map(InitialK::Explicit)
            .ok_or_else(|| Error::InvalidConfig(format!("--init-k must be hdp1, hdp2 or a positive integer, got `{n}`"))),
    }
}

/// Run one parsed invocation.
pub fn dispatch(cli: &Cli) -> Result<i32> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(0);
    if cli.parallelism == Some(0) {
        return Err(Error::InvalidConfig("--parallelism must be at least 1".into()));
    }
    match &cli.command {
        Command::Preprocess(a) => {
            let opts = IngestOptions {
                id_col: a.id_col.clone().or(file.id_col.clone()).unwrap_or_else(|| "id".into()),
                text_col: a.text_col.clone().or(file.text_col.clone()).unwrap_or_else(|| "question".into()),
            };
            let format = match a.format {
                FormatArg::Csv => InputFormat::Csv,
                FormatArg::Blocks => InputFormat::TextBlocks,
            };
            let records = ingest(&a.input, format, &opts)?;
            let corpus = preprocess(&records, &file.preprocess, &a.input.display().to_string())?;
            let path = out_path(cli, "corpus.json")?;
            corpus.save(&path)?;
            println!(
                "{} documents, {} terms, {} tokens -> {}",
                corpus.len(),
                corpus.vocab_size(),
                corpus.total_tokens(),
                path.display()
            );
        }
        Command::Permute(a) => {
            let corpus = Corpus::load(&a.corpus)?.permute(seed);
            let path = out_path(cli, &format!("corpus_perm{seed}.json"))?;
            corpus.save(&path)?;
            println!("{}", path.display());
        }
        Command::Prefix(a) => {
            let corpus = Corpus::load(&a.corpus)?.prefix(a.size)?;
            let path = out_path(cli, &format!("corpus_n{}.json", a.size))?;
            corpus.save(&path)?;
            println!("{}", path.display());
        }
        Command::Hdp(a) => {
            let corpus = Corpus::load(&a.corpus)?;
            let config = HdpConfig {
                seed,
                ..a.hdp.apply(file.hdp)
            };
            let est = fit_hdp(&corpus, &config)?;
            let path = out_path(cli, "hdp.json")?;
            est.save(&path)?;
            println!("hdp1={} hdp2={} hdp3={}", est.hdp1, est.hdp2, est.hdp3);
        }
        Command::Fit(a) => {
            let corpus = Corpus::load(&a.corpus)?;
            let config = LdaConfig {
                k: a.k,
                seed,
                ..a.lda.apply(file.lda)
            };
            let model = fit(&corpus, &config)?;
            let path = out_path(cli, "model.json")?;
            model.save(&path)?;
            println!("k={} effective={}", model.k(), model.effective_topic_count());
        }
        Command::Recurse(a) => {
            let corpus = Corpus::load(&a.corpus)?;
            let mut guards = file.guards;
            if let Some(v) = a.gamma_guard {
                guards.gamma_guard = v;
            }
            if let Some(v) = a.eta_guard {
                guards.eta_guard = v;
            }
            if let Some(v) = a.max_steps {
                guards.max_steps = v;
            }
            let config = RecursionConfig {
                guards,
                lda_template: a.lda.apply(file.lda),
                initial_k: parse_init_k(&a.init_k)?,
                hdp: HdpConfig {
                    seed,
                    ..a.hdp.apply(file.hdp)
                },
                seed,
            };
            let trace = run_recursion(&corpus, &config)?;
            write(&out_path(cli, "trace.jsonl")?, &trace_to_jsonl(&trace)?)?;
            if let Some(model) = &trace.final_model {
                model.save(&out_path(cli, "model_final.json")?)?;
            }
            for s in &trace.steps {
                println!(
                    "step {}: k={} effective={} ratio={:.3}",
                    s.step_index, s.k_specified, s.k_effective, s.efficiency_ratio
                );
            }
            println!("outcome: {}", trace.outcome);
            if !trace.outcome.is_success() {
                return Ok(EXIT_RECURSION_FAILURE);
            }
        }
        Command::Tune(a) => {
            let corpus = Corpus::load(&a.corpus)?;
            let grid = match &a.grid_values {
                None => evalmetrics::default_grid(),
                Some(vals) => vals
                    .iter()
                    .flat_map(|&alpha| vals.iter().map(move |&eta| GridPoint { alpha, eta }))
                    .collect(),
            };
            let template = LdaConfig {
                seed,
                ..a.lda.apply(file.lda)
            };
            let run = || evalmetrics::tune_hyperparams(&corpus, a.k, &grid, &template, a.top_m);
            let result = match cli.parallelism {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
                    .install(run)?,
                None => run()?,
            };
            evalmetrics::write_tuning_csv(&result.table, &out_path(cli, "tuning.csv")?)?;
            write(&out_path(cli, "tuning.json")?, &serde_json::to_string_pretty(&result)?)?;
            println!(
                "alpha={} eta={} coherence={:.6}",
                result.alpha, result.eta, result.coherence.aggregate
            );
        }
        Command::Perplexity(a) => {
            let model = LdaModel::load(&a.model)?;
            let held_out = Corpus::load(&a.held_out)?;
            let r = evalmetrics::perplexity_with(
                &model,
                &held_out,
                &evalmetrics::FoldInConfig {
                    seed,
                    ..evalmetrics::FoldInConfig::default()
                },
            )?;
            write(&out_path(cli, "perplexity.json")?, &serde_json::to_string_pretty(&r)?)?;
            println!("perplexity={:.6} tokens={} oov={}", r.value, r.held_out_tokens, r.oov_dropped);
        }
        Command::Experiment(a) => {
            let mut plan = ExperimentPlan::load(&a.plan)?;
            if let Some(s) = cli.seed {
                plan.base_seed = s;
            }
            if cli.parallelism.is_some() {
                plan.parallelism = cli.parallelism;
            }
            fs::create_dir_all(&cli.output_dir).map_err(|e| Error::io(&cli.output_dir, e))?;
            let report = run_plan(&plan, &cli.output_dir)?;
            for c in &report.cells {
                let mm = c.mean_mode_final_k.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
                println!(
                    "{}: hdp1={} hdp2={} mean_mode_k={} failure_rate={:.3}",
                    c.cell.label, c.hdp1, c.hdp2, mm, c.failure_rate
                );
            }
            for f in &report.failed_cells {
                eprintln!("cell {} failed: {}", f.label, f.error);
            }
        }
        Command::ExportClusters(a) => {
            let model = LdaModel::load(&a.model)?;
            if a.keywords == 0 {
                return Err(Error::InvalidConfig("--keywords must be at least 1".into()));
            }
            let path = out_path(cli, "clusters.csv")?;
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["doc_id", "dominant_topic", "contribution", "keywords"])?;
            for t in model.dominant_topics_with(a.keywords) {
                w.write_record([
                    t.doc_id,
                    t.dominant_topic.to_string(),
                    format!("{:.6}", t.contribution),
                    t.top_keywords.join(" "),
                ])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            println!("{}", path.display());
        }
        Command::Synth(a) => {
            let config = SynthConfig {
                true_k: a.true_k,
                docs: a.docs,
                vocab: a.vocab,
                doc_len: a.doc_len,
                alpha: a.alpha,
                eta: a.eta,
                seed,
            };
            let (records, truth) = generate(&config)?;
            let path = out_path(cli, "synth.csv")?;
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["id", "question"])?;
            for r in &records {
                w.write_record([&r.id, &r.text])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            write(&out_path(cli, "synth_truth.json")?, &serde_json::to_string(&truth)?)?;
            println!("{} documents -> {}", records.len(), path.display());
        }
    }
    Ok(EXIT_OK)
}
