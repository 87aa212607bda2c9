//! Recursive refinement of the topic count.
//!
//! Starting from an initial K, fit LDA, count the topics that dominate at
//! least one document and refit with that count, until every specified topic
//! is used (efficiency ratio 1). Three guards stop runs that are not
//! converging: a single-step drop in ratio larger than `gamma_guard`, more
//! than `eta_guard` consecutive strict decreases, and a hard step cap.
//!
//! Guard checks use exact rationals; the float ratio is for display only.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::hdp::{fit_hdp, HdpConfig};
use crate::lda::{fit, LdaConfig, LdaModel};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardParams {
    /// Largest allowed single-step drop in efficiency ratio, in (0, 1].
    pub gamma_guard: f64,
    /// Largest allowed run of strictly decreasing ratios.
    pub eta_guard: usize,
    pub max_steps: usize,
}

impl Default for GuardParams {
    fn default() -> Self {
        GuardParams {
            gamma_guard: 0.2,
            eta_guard: 3,
            max_steps: 50,
        }
    }
}

impl GuardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_guard > 0.0 && self.gamma_guard <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma_guard must be in (0, 1], got {}",
                self.gamma_guard
            )));
        }
        if self.eta_guard == 0 {
            return Err(Error::InvalidConfig("eta_guard must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", content = "k")]
pub enum InitialK {
    Explicit(usize),
    Hdp1,
    Hdp2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionConfig {
    #[serde(flatten)]
    pub guards: GuardParams,
    /// Hyperparameters for every step; `k` and `seed` are overwritten.
    pub lda_template: LdaConfig,
    pub initial_k: InitialK,
    /// Used only when the initial K comes from the HDP.
    pub hdp: HdpConfig,
    pub seed: u64,
}

impl Default for RecursionConfig {
    fn default() -> Self {
        RecursionConfig {
            guards: GuardParams::default(),
            lda_template: LdaConfig::new(1),
            initial_k: InitialK::Hdp2,
            hdp: HdpConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    FailureGammaDrop,
    FailureSteadyDecrease,
    FailureStepCap,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Success => "success",
            Outcome::FailureGammaDrop => "failure_gamma_drop",
            Outcome::FailureSteadyDecrease => "failure_steady_decrease",
            Outcome::FailureStepCap => "failure_step_cap",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionStep {
    /// 1-based.
    pub step_index: usize,
    pub k_specified: usize,
    pub k_effective: usize,
    /// `k_effective / k_specified`, display only.
    pub efficiency_ratio: f64,
    pub model_fingerprint: String,
}

impl RecursionStep {
    pub fn new(step_index: usize, k_specified: usize, k_effective: usize, model_fingerprint: String) -> Self {
        RecursionStep {
            step_index,
            k_specified,
            k_effective,
            efficiency_ratio: k_effective as f64 / k_specified as f64,
            model_fingerprint,
        }
    }

    pub fn ratio(&self) -> BigRational {
        BigRational::new(BigInt::from(self.k_effective), BigInt::from(self.k_specified))
    }

    pub fn is_full(&self) -> bool {
        self.k_effective == self.k_specified
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionTrace {
    pub steps: Vec<RecursionStep>,
    pub outcome: Outcome,
    pub guards: GuardParams,
    #[serde(skip)]
    pub final_model: Option<LdaModel>,
}

impl RecursionTrace {
    pub fn initial_k(&self) -> usize {
        self.steps[0].k_specified
    }

    pub fn final_k(&self) -> usize {
        self.steps.last().map(|s| s.k_effective).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// The rational written by the shortest decimal form of `x`, so that a
/// guard of 0.3 means exactly 3/10 rather than its binary neighbour.
fn decimal_rational(x: f64) -> BigRational {
    let text = format!("{x}");
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let digits: BigInt = format!("{int}{frac}").parse().expect("finite decimal");
    BigRational::new(digits, BigInt::from(10u32).pow(frac.len() as u32))
}

/// Incremental guard evaluation shared by the live loop and the replay.
struct GuardState {
    guards: GuardParams,
    gamma: BigRational,
    previous: Option<BigRational>,
    decreasing_run: usize,
    steps: usize,
}

impl GuardState {
    fn new(guards: GuardParams) -> Self {
        GuardState {
            guards,
            gamma: decimal_rational(guards.gamma_guard),
            previous: None,
            decreasing_run: 0,
            steps: 0,
        }
    }

    /// Feed one step; returns the exit it triggers, if any.
    fn observe(&mut self, step: &RecursionStep) -> Option<Outcome> {
        self.steps += 1;
        let current = step.ratio();
        if step.is_full() {
            return Some(Outcome::Success);
        }
        let mut exit = None;
        if let Some(prev) = &self.previous {
            if prev - &current > self.gamma {
                exit = Some(Outcome::FailureGammaDrop);
            }
            if current < *prev {
                self.decreasing_run += 1;
            } else {
                self.decreasing_run = 0;
            }
        }
        if exit.is_none() && self.decreasing_run > self.guards.eta_guard {
            exit = Some(Outcome::FailureSteadyDecrease);
        }
        if exit.is_none() && self.steps >= self.guards.max_steps {
            exit = Some(Outcome::FailureStepCap);
        }
        self.previous = Some(current);
        exit
    }
}

/// Result of fitting one recursion step.
pub struct StepFit {
    pub k_effective: usize,
    pub fingerprint: String,
    pub model: Option<LdaModel>,
}

/// Produces the effective topic count for a requested K.
pub trait TopicFitter {
    fn fit_step(&mut self, k: usize, seed: u64) -> Result<StepFit>;
}

/// Fits real LDA models from a template configuration.
pub struct LdaFitter<'a> {
    pub corpus: &'a Corpus,
    pub template: LdaConfig,
}

impl TopicFitter for LdaFitter<'_> {
    fn fit_step(&mut self, k: usize, seed: u64) -> Result<StepFit> {
        let config = LdaConfig {
            k,
            seed,
            ..self.template
        };
        let model = fit(self.corpus, &config)?;
        Ok(StepFit {
            k_effective: model.effective_topic_count(),
            fingerprint: model.fingerprint(),
            model: Some(model),
        })
    }
}

/// Replays a fixed sequence of effective counts. Requests beyond the script
/// repeat the requested K (full usage).
#[derive(Debug, Clone, Default)]
pub struct ScriptedFitter {
    pub effective: Vec<usize>,
    pub calls: Vec<(usize, u64)>,
}

impl ScriptedFitter {
    pub fn new(effective: Vec<usize>) -> Self {
        ScriptedFitter {
            effective,
            calls: Vec::new(),
        }
    }
}

impl TopicFitter for ScriptedFitter {
    fn fit_step(&mut self, k: usize, seed: u64) -> Result<StepFit> {
        let i = self.calls.len();
        self.calls.push((k, seed));
        let k_effective = self.effective.get(i).copied().unwrap_or(k);
        Ok(StepFit {
            k_effective,
            fingerprint: format!("scripted-{i}"),
            model: None,
        })
    }
}

/// Drive the recursion with any fitter. Step `i` uses seed
/// `derive_seed(base_seed, [i])`.
pub fn run_with_fitter<F: TopicFitter>(
    fitter: &mut F,
    initial_k: usize,
    guards: GuardParams,
    base_seed: u64,
) -> Result<RecursionTrace> {
    guards.validate()?;
    if initial_k == 0 {
        return Err(Error::InvalidConfig("initial K must be at least 1".into()));
    }
    let mut state = GuardState::new(guards);
    let mut steps = Vec::new();
    let mut k = initial_k;
    loop {
        let index = steps.len() + 1;
        let fitted = fitter.fit_step(k, derive_seed(base_seed, &[index as u64]))?;
        if fitted.k_effective == 0 || fitted.k_effective > k {
            return Err(Error::InvalidModel(format!(
                "fitter reported {} effective topics for k = {k}",
                fitted.k_effective
            )));
        }
        let step = RecursionStep::new(index, k, fitted.k_effective, fitted.fingerprint);
        let exit = state.observe(&step);
        k = step.k_effective;
        steps.push(step);
        if let Some(outcome) = exit {
            let final_model = if outcome.is_success() { fitted.model } else { None };
            return Ok(RecursionTrace {
                steps,
                outcome,
                guards,
                final_model,
            });
        }
    }
}

/// Resolve the initial K (fitting the HDP if asked to) and run the
/// recursion with real LDA fits.
pub fn run_recursion(corpus: &Corpus, config: &RecursionConfig) -> Result<RecursionTrace> {
    let initial_k = resolve_initial_k(corpus, config)?;
    let tokens = corpus.total_tokens();
    if initial_k > tokens {
        return Err(Error::TooManyTopics { k: initial_k, tokens });
    }
    let mut template = config.lda_template;
    template.k = initial_k;
    template.validate()?;
    let mut fitter = LdaFitter { corpus, template };
    run_with_fitter(&mut fitter, initial_k, config.guards, config.seed)
}

pub fn resolve_initial_k(corpus: &Corpus, config: &RecursionConfig) -> Result<usize> {
    config.guards.validate()?;
    let k = match config.initial_k {
        InitialK::Explicit(k) => k,
        InitialK::Hdp1 => fit_hdp(corpus, &config.hdp)?.hdp1,
        InitialK::Hdp2 => fit_hdp(corpus, &config.hdp)?.hdp2,
    };
    if k == 0 {
        return Err(Error::InvalidConfig("initial K must be at least 1".into()));
    }
    Ok(k)
}

/// Re-derive the outcome from the step list alone, checking chaining and
/// that no exit condition fired before the last step.
pub fn classify_outcome(trace: &RecursionTrace) -> Result<Outcome> {
    classify_steps(&trace.steps, trace.guards)
}

pub fn classify_steps(steps: &[RecursionStep], guards: GuardParams) -> Result<Outcome> {
    if steps.is_empty() {
        return Err(Error::InconsistentTrace("empty trace".into()));
    }
    let mut state = GuardState::new(guards);
    for (i, step) in steps.iter().enumerate() {
        if step.k_effective == 0 || step.k_effective > step.k_specified {
            return Err(Error::InconsistentTrace(format!(
                "step {}: effective {} outside 1..={}",
                i + 1,
                step.k_effective,
                step.k_specified
            )));
        }
        if i > 0 && step.k_specified != steps[i - 1].k_effective {
            return Err(Error::InconsistentTrace(format!(
                "step {} specifies {} but step {} ended with {}",
                i + 1,
                step.k_specified,
                i,
                steps[i - 1].k_effective
            )));
        }
        match state.observe(step) {
            Some(outcome) if i + 1 == steps.len() => return Ok(outcome),
            Some(outcome) => {
                return Err(Error::InconsistentTrace(format!(
                    "exit {outcome} at step {} but trace continues",
                    i + 1
                )))
            }
            None => {}
        }
    }
    Err(Error::InconsistentTrace("trace ends without an exit condition".into()))
}

/// One line of the trace stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Step(RecursionStep),
    Outcome {
        outcome: Outcome,
        steps: usize,
        final_k: usize,
        #[serde(flatten)]
        guards: GuardParams,
    },
}

/// One JSON object per step followed by the terminal outcome record.
pub fn trace_to_jsonl(trace: &RecursionTrace) -> Result<String> {
    let mut out = String::new();
    for step in &trace.steps {
        out.push_str(&serde_json::to_string(&TraceRecord::Step(step.clone()))?);
        out.push('\n');
    }
    let end = TraceRecord::Outcome {
        outcome: trace.outcome,
        steps: trace.steps.len(),
        final_k: trace.final_k(),
        guards: trace.guards,
    };
    out.push_str(&serde_json::to_string(&end)?);
    out.push('\n');
    Ok(out)
}

/// Parse a stream holding one or more concatenated traces.
pub fn traces_from_jsonl(s: &str) -> Result<Vec<RecursionTrace>> {
    let mut traces = Vec::new();
    let mut pending = Vec::new();
    for (i, line) in s.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceRecord>(line)? {
            TraceRecord::Step(step) => pending.push(step),
            TraceRecord::Outcome { outcome, steps, guards, .. } => {
                if steps != pending.len() {
                    return Err(Error::InconsistentTrace(format!(
                        "line {}: outcome record counts {steps} steps, stream has {}",
                        i + 1,
                        pending.len()
                    )));
                }
                traces.push(RecursionTrace {
                    steps: std::mem::take(&mut pending),
                    outcome,
                    guards,
                    final_model: None,
                });
            }
        }
    }
    if !pending.is_empty() {
        return Err(Error::InconsistentTrace("stream ends without an outcome record".into()));
    }
    Ok(traces)
}
