//! Truncated hierarchical Dirichlet process and significance escalation.
//!
//! The model has `T` topic slots with top-level weights `β ~ Dir(γ/T, ..., γ/T)`,
//! per-document proportions `θ_j ~ Dir(η_doc β)` and topics `φ_k ~ Dir(b)`.
//! Inference is a direct-assignment Gibbs sampler: token topics are
//! resampled with θ integrated out, table counts are drawn by simulating the
//! Chinese restaurant seating, and `β` is redrawn from its Dirichlet
//! conditional. Unused slots are exchangeable, so they are carried as a
//! single aggregate mass.
//!
//! The reported weight vector is the posterior mean of the sorted
//! top-level weights over the post-burn-in sweeps.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::dirichlet::ln_gamma_variate;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EscalationMode {
    /// Apply all three thresholds to one fitted weight vector.
    #[default]
    Rethreshold,
    /// Refit the process (fresh seed) before each further threshold.
    Refit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HdpConfig {
    /// Top-level concentration.
    pub gamma: f64,
    /// Topic-word concentration.
    pub beta_prior: f64,
    /// Document-level concentration.
    pub eta_doc: f64,
    /// Number of topic slots; `None` means the corpus size.
    pub truncation: Option<usize>,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub escalation: EscalationMode,
}

impl Default for HdpConfig {
    fn default() -> Self {
        HdpConfig {
            gamma: 5.0,
            beta_prior: 0.01,
            eta_doc: 1.0,
            truncation: None,
            sweeps: 200,
            burn_in: 100,
            seed: 0,
            escalation: EscalationMode::Rethreshold,
        }
    }
}

impl HdpConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("gamma", self.gamma), ("beta_prior", self.beta_prior), ("eta_doc", self.eta_doc)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {x}")));
            }
        }
        if self.truncation == Some(0) {
            return Err(Error::InvalidConfig("truncation must be at least 1".into()));
        }
        if self.burn_in > self.sweeps {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) exceeds sweeps ({})",
                self.burn_in, self.sweeps
            )));
        }
        Ok(())
    }

    pub fn truncation_for(&self, corpus: &Corpus) -> usize {
        self.truncation.unwrap_or(corpus.len())
    }
}

/// Significant-topic counts under the escalating thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Escalation {
    pub hdp1: usize,
    pub hdp2: usize,
    pub hdp3: usize,
    /// Bounds actually applied, in order (fewer than three when the chain
    /// stopped early).
    pub thresholds: Vec<f64>,
    /// `degenerate_flags[i]` is set when level `i + 1` was clamped to 1.
    pub degenerate_flags: [bool; 3],
}

impl Escalation {
    pub fn is_degenerate(&self) -> bool {
        self.degenerate_flags.iter().any(|&f| f)
    }
}

/// Count of weights strictly above `threshold`.
pub fn count_above(weights: &[f64], threshold: f64) -> usize {
    weights.iter().filter(|&&w| w > threshold).count()
}

/// Apply the bounds `1/n`, `1/hdp1`, `1/hdp2` in turn. A zero count stops the
/// chain; it and every later level become 1 and are flagged.
pub fn escalate(weights: &[f64], n: usize) -> Escalation {
    escalate_with(n, |_, threshold| count_above(weights, threshold))
}

/// Escalation where each level may count against a different weight vector.
fn escalate_with(n: usize, mut count: impl FnMut(usize, f64) -> usize) -> Escalation {
    let mut counts = [1usize; 3];
    let mut thresholds = Vec::with_capacity(3);
    let mut flags = [false; 3];
    let mut bound = 1.0 / n.max(1) as f64;
    for level in 0..3 {
        thresholds.push(bound);
        let c = count(level, bound);
        if c == 0 {
            for f in &mut flags[level..] {
                *f = true;
            }
            break;
        }
        counts[level] = c;
        bound = 1.0 / c as f64;
    }
    Escalation {
        hdp1: counts[0],
        hdp2: counts[1],
        hdp3: counts[2],
        thresholds,
        degenerate_flags: flags,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdpEstimate {
    /// Length-T probability vector, sorted descending.
    pub topic_weights: Vec<f64>,
    pub hdp1: usize,
    pub hdp2: usize,
    pub hdp3: usize,
    pub thresholds: Vec<f64>,
    pub degenerate_flags: [bool; 3],
    pub corpus_size: usize,
    pub config: HdpConfig,
}

impl HdpEstimate {
    pub fn escalation(&self) -> Escalation {
        Escalation {
            hdp1: self.hdp1,
            hdp2: self.hdp2,
            hdp3: self.hdp3,
            thresholds: self.thresholds.clone(),
            degenerate_flags: self.degenerate_flags,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        HdpEstimate::from_json(&s)
    }
}

/// Fit the truncated HDP and escalate its weights.
pub fn fit_hdp(corpus: &Corpus, config: &HdpConfig) -> Result<HdpEstimate> {
    config.validate()?;
    let n = corpus.len();
    let topic_weights = topic_weights(corpus, config)?;
    let esc = match config.escalation {
        EscalationMode::Rethreshold => escalate(&topic_weights, n),
        EscalationMode::Refit => {
            let mut refits: Vec<Vec<f64>> = vec![topic_weights.clone()];
            let mut err = None;
            let esc = escalate_with(n, |level, threshold| {
                while refits.len() <= level {
                    let cfg = HdpConfig {
                        seed: derive_seed(config.seed, &[refits.len() as u64]),
                        ..*config
                    };
                    match self::topic_weights(corpus, &cfg) {
                        Ok(w) => refits.push(w),
                        Err(e) => {
                            err = Some(e);
                            return 0;
                        }
                    }
                }
                count_above(&refits[level], threshold)
            });
            if let Some(e) = err {
                return Err(e);
            }
            esc
        }
    };
    Ok(HdpEstimate {
        topic_weights,
        hdp1: esc.hdp1,
        hdp2: esc.hdp2,
        hdp3: esc.hdp3,
        thresholds: esc.thresholds,
        degenerate_flags: esc.degenerate_flags,
        corpus_size: n,
        config: *config,
    })
}

/// Posterior mean of the sorted top-level weights.
pub fn topic_weights(corpus: &Corpus, config: &HdpConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let t = config.truncation_for(corpus);
    let mut sampler = HdpSampler::new(corpus, config, t);
    let mut acc = vec![0f64; t];
    let mut kept = 0usize;
    for s in 0..config.sweeps {
        sampler.sweep();
        sampler.resample_top_level();
        if s >= config.burn_in {
            sampler.accumulate_sorted_weights(&mut acc);
            kept += 1;
        }
    }
    if kept == 0 {
        sampler.accumulate_sorted_weights(&mut acc);
        kept = 1;
    }
    let mut weights: Vec<f64> = acc.into_iter().map(|x| x / kept as f64).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(weights)
}

struct HdpSampler<'a> {
    corpus: &'a Corpus,
    truncation: usize,
    v: usize,
    gamma: f64,
    eta_doc: f64,
    b: f64,
    rng: SeededRng,
    z: Vec<Vec<usize>>,
    // Per document, one count per active topic.
    ndk: Vec<Vec<u32>>,
    // Per active topic, one count per term.
    nkw: Vec<Vec<u32>>,
    nk: Vec<u32>,
    // Top-level weight of each active topic, plus the pooled unused mass.
    beta: Vec<f64>,
    beta_unused: f64,
    probs: Vec<f64>,
}

const UNASSIGNED: usize = usize::MAX;

impl<'a> HdpSampler<'a> {
    fn new(corpus: &'a Corpus, config: &HdpConfig, truncation: usize) -> Self {
        let mut s = HdpSampler {
            corpus,
            truncation,
            v: corpus.vocab_size(),
            gamma: config.gamma,
            eta_doc: config.eta_doc,
            b: config.beta_prior,
            rng: rng_from_seed(config.seed),
            z: corpus.documents().iter().map(|d| vec![UNASSIGNED; d.tokens.len()]).collect(),
            ndk: vec![Vec::new(); corpus.len()],
            nkw: Vec::new(),
            nk: Vec::new(),
            beta: Vec::new(),
            beta_unused: 1.0,
            probs: Vec::new(),
        };
        // Sequential initialization: seat each token given those before it.
        s.sweep();
        s.resample_top_level();
        s
    }

    fn active(&self) -> usize {
        self.nk.len()
    }

    fn unused_slots(&self) -> usize {
        self.truncation - self.active()
    }

    fn sweep(&mut self) {
        let corpus = self.corpus;
        for (d, doc) in corpus.documents().iter().enumerate() {
            for (i, &w) in doc.tokens.iter().enumerate() {
                let old = self.z[d][i];
                if old != UNASSIGNED {
                    self.remove_token(d, w, old);
                }
                let t = self.sample_topic(d, w);
                self.z[d][i] = t;
                self.ndk[d][t] += 1;
                self.nkw[t][w] += 1;
                self.nk[t] += 1;
            }
        }
    }

    fn remove_token(&mut self, d: usize, w: usize, t: usize) {
        self.ndk[d][t] -= 1;
        self.nkw[t][w] -= 1;
        self.nk[t] -= 1;
        if self.nk[t] == 0 {
            self.drop_topic(t);
        }
    }

    /// Return an empty topic's slot to the unused pool, moving the last
    /// active topic into its index.
    fn drop_topic(&mut self, t: usize) {
        let last = self.active() - 1;
        self.beta_unused += self.beta[t];
        self.beta.swap_remove(t);
        self.nk.swap_remove(t);
        self.nkw.swap_remove(t);
        for row in &mut self.ndk {
            row.swap_remove(t);
        }
        if t != last {
            for z in self.z.iter_mut().flatten() {
                if *z == last {
                    *z = t;
                }
            }
        }
    }

    fn sample_topic(&mut self, d: usize, w: usize) -> usize {
        let k = self.active();
        let vb = self.v as f64 * self.b;
        self.probs.clear();
        let mut total = 0.0;
        for t in 0..k {
            let p = (self.ndk[d][t] as f64 + self.eta_doc * self.beta[t]) * (self.nkw[t][w] as f64 + self.b)
                / (self.nk[t] as f64 + vb);
            total += p;
            self.probs.push(total);
        }
        if self.unused_slots() > 0 {
            total += self.eta_doc * self.beta_unused / self.v as f64;
            self.probs.push(total);
        }
        let u = self.rng.random::<f64>() * total;
        let choice = self.probs.iter().position(|&c| u < c).unwrap_or(self.probs.len() - 1);
        if choice == k {
            self.spawn_topic()
        } else {
            choice
        }
    }

    /// Move one unused slot into the active set. The chosen slot was picked
    /// in proportion to its own weight, so its share of the pooled mass is
    /// size-biased: Beta(1 + γ/T, γ(U - 1)/T).
    fn spawn_topic(&mut self) -> usize {
        let u = self.unused_slots();
        let per_slot = self.gamma / self.truncation as f64;
        let share = if u == 1 {
            1.0
        } else {
            let a = ln_gamma_variate(&mut self.rng, 1.0 + per_slot);
            let b = ln_gamma_variate(&mut self.rng, per_slot * (u - 1) as f64);
            let m = a.max(b);
            let ea = (a - m).exp();
            ea / (ea + (b - m).exp())
        };
        let mass = share * self.beta_unused;
        self.beta.push(mass);
        self.beta_unused -= mass;
        self.nk.push(0);
        self.nkw.push(vec![0; self.v]);
        for row in &mut self.ndk {
            row.push(0);
        }
        self.active() - 1
    }

    /// Draw table counts, then `β | m ~ Dir(m_k + γ/T, ..., γ U / T)`.
    fn resample_top_level(&mut self) {
        let k = self.active();
        let mut tables = vec![0f64; k];
        for row in &self.ndk {
            for (t, &n) in row.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let a = self.eta_doc * self.beta[t];
                let mut m = 0u32;
                for i in 0..n {
                    if self.rng.random::<f64>() * (a + i as f64) < a {
                        m += 1;
                    }
                }
                tables[t] += m as f64;
            }
        }
        let per_slot = self.gamma / self.truncation as f64;
        let mut logs: Vec<f64> = tables
            .iter()
            .map(|&m| ln_gamma_variate(&mut self.rng, m + per_slot))
            .collect();
        let u = self.unused_slots();
        if u > 0 {
            logs.push(ln_gamma_variate(&mut self.rng, per_slot * u as f64));
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        self.beta = exps[..k].iter().map(|&x| x / total).collect();
        self.beta_unused = if u > 0 { exps[k] / total } else { 0.0 };
    }

    /// Add the current weights, sorted descending and padded to T with the
    /// unused mass split evenly, into `acc`.
    fn accumulate_sorted_weights(&self, acc: &mut [f64]) {
        let mut w = self.beta.clone();
        let u = self.unused_slots();
        if u > 0 {
            let each = self.beta_unused / u as f64;
            w.extend(std::iter::repeat_n(each, u));
        }
        w.sort_by(|a, b| b.total_cmp(a));
        for (a, x) in acc.iter_mut().zip(w) {
            *a += x;
        }
    }
}
