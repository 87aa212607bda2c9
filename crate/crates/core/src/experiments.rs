//! Multi-run studies over permuted and prefix-subset corpora.
//!
//! A plan expands into cells, one per (permutation, prefix) pair. Each cell
//! fits the HDP once, fits a single LDA at HDP-2 as the baseline, and runs R
//! independent recursions starting from HDP-2. The report aggregates final
//! topic counts (mean-mode), failure rate and termination-step proportions.
//! Wall times go to a separate timing table so the report itself is
//! reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::hdp::{fit_hdp, HdpConfig, HdpEstimate};
use crate::lda::{fit, LdaConfig, LdaModel};
use crate::recursor::{run_with_fitter, trace_to_jsonl, traces_from_jsonl, GuardParams, LdaFitter, RecursionTrace};
use crate::rng::{derive_seed, string_tag};

/// Mode of `values`; among several modes, the one closest to the mean, and
/// the smaller of two equally close.
pub fn mean_mode(values: &[usize]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("mean_mode of an empty list".into()));
    }
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in values {
        *freq.entry(v).or_default() += 1;
    }
    let top = *freq.values().max().expect("non-empty");
    let sum: u128 = values.iter().map(|&v| v as u128).sum();
    let n = values.len() as u128;
    // Compare |v - sum/n| as |v*n - sum| to stay in integers.
    let distance = |v: usize| (v as u128 * n).abs_diff(sum);
    let best = freq
        .iter()
        .filter(|&(_, &c)| c == top)
        .map(|(&v, _)| v)
        .min_by_key(|&v| (distance(v), v))
        .expect("at least one mode");
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    /// Corpus JSON; relative paths resolve against the plan file.
    pub corpus: Option<PathBuf>,
    pub permutation_seeds: Vec<u64>,
    /// Also run the corpus in its original order.
    pub include_original: bool,
    /// Ascending prefix lengths.
    pub prefix_sizes: Vec<usize>,
    /// Also run the whole corpus.
    pub include_full: bool,
    pub runs_per_cell: usize,
    pub guards: GuardParams,
    /// `k` and `seed` are set per fit.
    pub lda: LdaConfig,
    /// `seed` is set per cell.
    pub hdp: HdpConfig,
    pub base_seed: u64,
    /// Worker threads; `None` uses all cores.
    pub parallelism: Option<usize>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            corpus: None,
            permutation_seeds: Vec::new(),
            include_original: true,
            prefix_sizes: Vec::new(),
            include_full: true,
            runs_per_cell: 100,
            guards: GuardParams::default(),
            lda: LdaConfig::default(),
            hdp: HdpConfig::default(),
            base_seed: 0,
            parallelism: None,
        }
    }
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: ExperimentPlan = serde_json::from_str(&s)?;
        if let (Some(c), Some(dir)) = (&plan.corpus, path.parent()) {
            if c.is_relative() {
                plan.corpus = Some(dir.join(c));
            }
        }
        Ok(plan)
    }

    pub fn validate(&self, corpus_size: usize) -> Result<()> {
        if self.runs_per_cell == 0 {
            return Err(Error::InvalidConfig("runs_per_cell must be at least 1".into()));
        }
        if self.prefix_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("prefix_sizes must be strictly ascending".into()));
        }
        if let Some(&bad) = self.prefix_sizes.iter().find(|&&k| k == 0 || k > corpus_size) {
            return Err(Error::PrefixOutOfRange { k: bad, size: corpus_size });
        }
        if !self.include_original && self.permutation_seeds.is_empty() {
            return Err(Error::InvalidConfig("plan has no corpus orderings".into()));
        }
        if !self.include_full && self.prefix_sizes.is_empty() {
            return Err(Error::InvalidConfig("plan has no corpus sizes".into()));
        }
        if self.parallelism == Some(0) {
            return Err(Error::InvalidConfig("parallelism must be at least 1".into()));
        }
        self.guards.validate()?;
        self.hdp.validate()?;
        Ok(())
    }

    /// Cells in plan order: orderings outer, sizes inner.
    pub fn cells(&self, corpus_size: usize) -> Vec<CellSpec> {
        let mut orders: Vec<Option<u64>> = Vec::new();
        if self.include_original {
            orders.push(None);
        }
        orders.extend(self.permutation_seeds.iter().map(|&s| Some(s)));
        let mut sizes: Vec<Option<usize>> = self.prefix_sizes.iter().map(|&k| Some(k)).collect();
        if self.include_full && !self.prefix_sizes.contains(&corpus_size) {
            sizes.push(None);
        }
        let mut cells = Vec::new();
        for &permutation_seed in &orders {
            for &prefix in &sizes {
                cells.push(CellSpec {
                    label: cell_label(permutation_seed, prefix),
                    permutation_seed,
                    prefix,
                });
            }
        }
        cells
    }
}

fn cell_label(permutation_seed: Option<u64>, prefix: Option<usize>) -> String {
    let order = match permutation_seed {
        None => "orig".to_string(),
        Some(s) => format!("perm{s}"),
    };
    let size = match prefix {
        None => "full".to_string(),
        Some(k) => format!("n{k}"),
    };
    format!("{order}_{size}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub label: String,
    pub permutation_seed: Option<u64>,
    pub prefix: Option<usize>,
}

impl CellSpec {
    pub fn corpus(&self, base: &Corpus) -> Result<Corpus> {
        let ordered = match self.permutation_seed {
            Some(s) => base.permute(s),
            None => base.clone(),
        };
        match self.prefix {
            Some(k) => ordered.prefix(k),
            None => Ok(ordered),
        }
    }

    pub fn seed(&self, base_seed: u64) -> u64 {
        derive_seed(base_seed, &[string_tag(&self.label)])
    }
}

/// Runs terminating at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepProportion {
    pub step: usize,
    pub count: usize,
    pub marginal: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: CellSpec,
    pub documents: usize,
    pub hdp1: usize,
    pub hdp2: usize,
    pub hdp3: usize,
    pub runs: usize,
    pub successes: usize,
    pub failure_rate: f64,
    /// Mean-mode of final K over successful runs.
    pub mean_mode_final_k: Option<usize>,
    pub final_k: Vec<usize>,
    pub outcomes: BTreeMap<String, usize>,
    /// Steps 1 through the longest trace.
    pub termination: Vec<StepProportion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cells: Vec<CellReport>,
    pub failed_cells: Vec<FailedCell>,
}

/// Aggregate finished traces of one cell.
pub fn aggregate_cell(cell: CellSpec, documents: usize, hdp: &HdpEstimate, traces: &[RecursionTrace]) -> CellReport {
    let runs = traces.len();
    let successes = traces.iter().filter(|t| t.outcome.is_success()).count();
    let success_k: Vec<usize> = traces
        .iter()
        .filter(|t| t.outcome.is_success())
        .map(|t| t.final_k())
        .collect();
    let mut outcomes = BTreeMap::new();
    for t in traces {
        *outcomes.entry(t.outcome.to_string()).or_default() += 1;
    }
    let longest = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    let mut counts = vec![0usize; longest + 1];
    for t in traces {
        counts[t.len()] += 1;
    }
    let mut running = 0;
    let termination = (1..=longest)
        .map(|step| {
            running += counts[step];
            StepProportion {
                step,
                count: counts[step],
                marginal: counts[step] as f64 / runs as f64,
                cumulative: running as f64 / runs as f64,
            }
        })
        .collect();
    CellReport {
        cell,
        documents,
        hdp1: hdp.hdp1,
        hdp2: hdp.hdp2,
        hdp3: hdp.hdp3,
        runs,
        successes,
        failure_rate: if runs == 0 { 0.0 } else { (runs - successes) as f64 / runs as f64 },
        mean_mode_final_k: mean_mode(&success_k).ok(),
        final_k: traces.iter().map(|t| t.final_k()).collect(),
        outcomes,
        termination,
    }
}

/// Documents per dominant topic, zero-count topics included.
pub fn emit_histogram_data(model: &LdaModel) -> Vec<usize> {
    let mut counts = vec![0; model.k()];
    for t in model.dominant_topic_indices() {
        counts[t] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub label: String,
    pub hdp_fit_seconds: f64,
    /// HDP fit plus one LDA fit at HDP-2.
    pub hdp_path_seconds: f64,
    /// HDP fit plus a full recursion, averaged over runs.
    pub recursive_path_seconds: f64,
}

/// Everything one cell produced.
#[derive(Debug, Clone)]
pub struct CellArchive {
    pub cell: CellSpec,
    pub documents: usize,
    pub hdp: HdpEstimate,
    pub traces: Vec<RecursionTrace>,
    /// (model name, documents per topic).
    pub histograms: Vec<(String, Vec<usize>)>,
    pub timing: CellTiming,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub archives: Vec<CellArchive>,
}

fn run_cell(base: &Corpus, cell: &CellSpec, plan: &ExperimentPlan) -> Result<CellArchive> {
    let corpus = cell.corpus(base)?;
    let seed = cell.seed(plan.base_seed);
    let hdp_config = HdpConfig {
        seed: derive_seed(seed, &[0]),
        ..plan.hdp
    };
    let start = Instant::now();
    let hdp = fit_hdp(&corpus, &hdp_config)?;
    let hdp_fit_seconds = start.elapsed().as_secs_f64();

    let template = LdaConfig {
        k: hdp.hdp2,
        ..plan.lda
    };
    let start = Instant::now();
    let baseline = fit(&corpus, &template.with_seed(derive_seed(seed, &[1])))?;
    let lda_seconds = start.elapsed().as_secs_f64();

    let runs: Vec<Result<(RecursionTrace, f64)>> = (0..plan.runs_per_cell)
        .into_par_iter()
        .map(|r| {
            let start = Instant::now();
            let mut fitter = LdaFitter {
                corpus: &corpus,
                template,
            };
            let mut trace = run_with_fitter(&mut fitter, hdp.hdp2, plan.guards, derive_seed(seed, &[2, r as u64]))?;
            if r > 0 {
                trace.final_model = None;
            }
            Ok((trace, start.elapsed().as_secs_f64()))
        })
        .collect();
    let runs: Vec<(RecursionTrace, f64)> = runs.into_iter().collect::<Result<_>>()?;
    let mean_run = runs.iter().map(|r| r.1).sum::<f64>() / runs.len() as f64;
    let mut traces: Vec<RecursionTrace> = runs.into_iter().map(|r| r.0).collect();

    let mut histograms = vec![("hdp2".to_string(), emit_histogram_data(&baseline))];
    if let Some(model) = traces[0].final_model.take() {
        histograms.push(("recursive".to_string(), emit_histogram_data(&model)));
    }
    Ok(CellArchive {
        cell: cell.clone(),
        documents: corpus.len(),
        hdp,
        traces,
        histograms,
        timing: CellTiming {
            label: cell.label.clone(),
            hdp_fit_seconds,
            hdp_path_seconds: hdp_fit_seconds + lda_seconds,
            recursive_path_seconds: hdp_fit_seconds + mean_run,
        },
    })
}

/// Execute a plan in memory. Cell errors are reported, not propagated.
pub fn execute(base: &Corpus, plan: &ExperimentPlan) -> Result<ExperimentRun> {
    plan.validate(base.len())?;
    let cells = plan.cells(base.len());
    let work = || -> Vec<Result<CellArchive>> { cells.par_iter().map(|c| run_cell(base, c, plan)).collect() };
    let results = match plan.parallelism {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut report = ExperimentReport {
        cells: Vec::new(),
        failed_cells: Vec::new(),
    };
    let mut archives = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(a) => {
                report
                    .cells
                    .push(aggregate_cell(a.cell.clone(), a.documents, &a.hdp, &a.traces));
                archives.push(a);
            }
            Err(e) => report.failed_cells.push(FailedCell {
                label: cell.label.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(ExperimentRun { report, archives })
}

/// Load the plan's corpus, execute, and write all outputs under `out`.
pub fn run_plan(plan: &ExperimentPlan, out: &Path) -> Result<ExperimentReport> {
    let path = plan
        .corpus
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("plan names no corpus".into()))?;
    let corpus = Corpus::load(path)?;
    let run = execute(&corpus, plan)?;
    write_outputs(&run, out)?;
    Ok(run.report)
}

pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FINAL_K_FILE: &str = "final_k.csv";
pub const TERMINATION_FILE: &str = "termination.csv";
pub const TIMING_FILE: &str = "timing.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    cells: Vec<ArchivedCell>,
    failed_cells: Vec<FailedCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArchivedCell {
    cell: CellSpec,
    documents: usize,
    hdp: HdpEstimate,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_outputs(run: &ExperimentRun, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let manifest = Manifest {
        cells: run
            .archives
            .iter()
            .map(|a| ArchivedCell {
                cell: a.cell.clone(),
                documents: a.documents,
                hdp: a.hdp.clone(),
            })
            .collect(),
        failed_cells: run.report.failed_cells.clone(),
    };
    write(&out.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)?;
    for a in &run.archives {
        let mut jsonl = String::new();
        for t in &a.traces {
            jsonl.push_str(&trace_to_jsonl(t)?);
        }
        write(&out.join(format!("traces_{}.jsonl", a.cell.label)), &jsonl)?;
        let mut hist = String::from("model,topic,documents\n");
        for (name, counts) in &a.histograms {
            for (topic, n) in counts.iter().enumerate() {
                hist.push_str(&format!("{name},{topic},{n}\n"));
            }
        }
        write(&out.join(format!("histogram_{}.csv", a.cell.label)), &hist)?;
    }
    let mut timing = String::from("cell,hdp_fit_seconds,hdp_path_seconds,recursive_path_seconds\n");
    for a in &run.archives {
        let t = &a.timing;
        timing.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            t.label, t.hdp_fit_seconds, t.hdp_path_seconds, t.recursive_path_seconds
        ));
    }
    write(&out.join(TIMING_FILE), &timing)?;
    write_report(&run.report, out)
}

/// Report JSON plus the final-K and termination tables.
pub fn write_report(report: &ExperimentReport, out: &Path) -> Result<()> {
    write(&out.join(REPORT_FILE), &serde_json::to_string_pretty(report)?)?;
    let mut final_k = String::from("cell,hdp1,hdp2,hdp3,mean_mode_k,failure_rate\n");
    let mut term = String::from("cell,step,count,marginal,cumulative\n");
    for c in &report.cells {
        let mm = c.mean_mode_final_k.map(|k| k.to_string()).unwrap_or_default();
        final_k.push_str(&format!(
            "{},{},{},{},{},{:.6}\n",
            c.cell.label, c.hdp1, c.hdp2, c.hdp3, mm, c.failure_rate
        ));
        for s in &c.termination {
            term.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                c.cell.label, s.step, s.count, s.marginal, s.cumulative
            ));
        }
    }
    write(&out.join(FINAL_K_FILE), &final_k)?;
    write(&out.join(TERMINATION_FILE), &term)
}

/// Rebuild the report from the manifest and archived traces in `dir`.
pub fn replay(dir: &Path) -> Result<ExperimentReport> {
    let path = dir.join(MANIFEST_FILE);
    let s = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&s)?;
    let mut cells = Vec::new();
    for a in manifest.cells {
        let path = dir.join(format!("traces_{}.jsonl", a.cell.label));
        let s = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let traces = traces_from_jsonl(&s)?;
        cells.push(aggregate_cell(a.cell, a.documents, &a.hdp, &traces));
    }
    Ok(ExperimentReport {
        cells,
        failed_cells: manifest.failed_cells,
    })
}

/// One row of `final_k.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FinalKRow {
    pub cell: String,
    pub hdp1: usize,
    pub hdp2: usize,
    pub hdp3: usize,
    pub mean_mode_k: Option<usize>,
    pub failure_rate: f64,
}

/// One row of `termination.csv`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TerminationRow {
    pub cell: String,
    pub step: usize,
    pub count: usize,
    pub marginal: f64,
    pub cumulative: f64,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

pub fn read_final_k(path: &Path) -> Result<Vec<FinalKRow>> {
    read_csv(path)
}

pub fn read_termination(path: &Path) -> Result<Vec<TerminationRow>> {
    read_csv(path)
}
