//! Latent Dirichlet allocation fitted by collapsed Gibbs sampling.
//!
//! Each token's topic is resampled from
//! `p(z = k | rest) ∝ (n_dk + α) (n_kw + η) / (n_k + V η)`.
//! Document-topic and topic-word distributions are estimated from counts
//! averaged over the post-burn-in sweeps.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SeededRng};

pub const DEFAULT_SWEEPS: usize = 200;
pub const DEFAULT_BURN_IN: usize = 100;
pub const DEFAULT_KEYWORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig::new(1)
    }
}

impl LdaConfig {
    pub fn new(k: usize) -> Self {
        LdaConfig {
            k,
            alpha: 0.1,
            eta: 0.1,
            sweeps: DEFAULT_SWEEPS,
            burn_in: DEFAULT_BURN_IN,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.burn_in > self.sweeps {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) exceeds sweeps ({})",
                self.burn_in, self.sweeps
            )));
        }
        Ok(())
    }
}

/// Collapsed Gibbs state over a fixed corpus.
///
/// Exposed so callers can step the chain one sweep at a time; `fit` is the
/// usual entry point.
pub struct LdaSampler<'a> {
    corpus: &'a Corpus,
    k: usize,
    v: usize,
    alpha: f64,
    eta: f64,
    rng: SeededRng,
    z: Vec<Vec<usize>>,
    // D x K, row-major.
    ndk: Vec<u32>,
    // K x V, row-major.
    nkw: Vec<u32>,
    nk: Vec<u32>,
    probs: Vec<f64>,
}

impl<'a> LdaSampler<'a> {
    /// Random uniform initial assignment.
    pub fn new(corpus: &'a Corpus, config: &LdaConfig) -> Result<Self> {
        config.validate()?;
        let tokens = corpus.total_tokens();
        if config.k > tokens {
            return Err(Error::TooManyTopics { k: config.k, tokens });
        }
        let (k, v) = (config.k, corpus.vocab_size());
        let mut rng = rng_from_seed(config.seed);
        let mut ndk = vec![0u32; corpus.len() * k];
        let mut nkw = vec![0u32; k * v];
        let mut nk = vec![0u32; k];
        let z = corpus
            .documents()
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                doc.tokens
                    .iter()
                    .map(|&w| {
                        let t = rng.random_range(0..k);
                        ndk[d * k + t] += 1;
                        nkw[t * v + w] += 1;
                        nk[t] += 1;
                        t
                    })
                    .collect()
            })
            .collect();
        Ok(LdaSampler {
            corpus,
            k,
            v,
            alpha: config.alpha,
            eta: config.eta,
            rng,
            z,
            ndk,
            nkw,
            nk,
            probs: vec![0.0; k],
        })
    }

    /// One full pass over every token in corpus order.
    pub fn sweep(&mut self) {
        let (k, v) = (self.k, self.v);
        let v_eta = v as f64 * self.eta;
        for (d, doc) in self.corpus.documents().iter().enumerate() {
            for (i, &w) in doc.tokens.iter().enumerate() {
                let old = self.z[d][i];
                self.ndk[d * k + old] -= 1;
                self.nkw[old * v + w] -= 1;
                self.nk[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (self.ndk[d * k + t] as f64 + self.alpha) * (self.nkw[t * v + w] as f64 + self.eta)
                        / (self.nk[t] as f64 + v_eta);
                    total += p;
                    self.probs[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.probs.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.z[d][i] = new;
                self.ndk[d * k + new] += 1;
                self.nkw[new * v + w] += 1;
                self.nk[new] += 1;
            }
        }
    }

    /// Verify the three count identities against a recount of `z`.
    pub fn check_counts(&self) -> std::result::Result<(), String> {
        let (k, v) = (self.k, self.v);
        for (d, doc) in self.corpus.documents().iter().enumerate() {
            let row: u32 = self.ndk[d * k..(d + 1) * k].iter().sum();
            if row as usize != doc.tokens.len() {
                return Err(format!("document {d}: sum_k n_dk = {row}, N_d = {}", doc.tokens.len()));
            }
        }
        for t in 0..k {
            let row: u32 = self.nkw[t * v..(t + 1) * v].iter().sum();
            if row != self.nk[t] {
                return Err(format!("topic {t}: sum_w n_kw = {row}, n_k = {}", self.nk[t]));
            }
        }
        let total: u32 = self.nk.iter().sum();
        if total as usize != self.corpus.total_tokens() {
            return Err(format!("sum_k n_k = {total}, tokens = {}", self.corpus.total_tokens()));
        }
        // Counts must also agree with the assignments themselves.
        let mut ndk = vec![0u32; self.ndk.len()];
        let mut nkw = vec![0u32; self.nkw.len()];
        for (d, doc) in self.corpus.documents().iter().enumerate() {
            for (&w, &t) in doc.tokens.iter().zip(&self.z[d]) {
                ndk[d * k + t] += 1;
                nkw[t * v + w] += 1;
            }
        }
        if ndk != self.ndk || nkw != self.nkw {
            return Err("counts disagree with assignments".into());
        }
        Ok(())
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.z
    }

    /// Per-document topic counts for the current state.
    pub fn doc_topic_counts(&self, d: usize) -> &[u32] {
        &self.ndk[d * self.k..(d + 1) * self.k]
    }
}

/// Run the sampler for `config.sweeps` passes and estimate the model.
pub fn fit(corpus: &Corpus, config: &LdaConfig) -> Result<LdaModel> {
    let mut sampler = LdaSampler::new(corpus, config)?;
    let (k, v, d) = (config.k, corpus.vocab_size(), corpus.len());
    let mut sum_ndk = vec![0f64; d * k];
    let mut sum_nkw = vec![0f64; k * v];
    let mut kept = 0usize;
    for s in 0..config.sweeps {
        sampler.sweep();
        if s >= config.burn_in {
            kept += 1;
            accumulate(&mut sum_ndk, &sampler.ndk);
            accumulate(&mut sum_nkw, &sampler.nkw);
        }
    }
    if kept == 0 {
        accumulate(&mut sum_ndk, &sampler.ndk);
        accumulate(&mut sum_nkw, &sampler.nkw);
        kept = 1;
    }
    let scale = 1.0 / kept as f64;

    let theta = (0..d)
        .map(|doc| {
            let n_d = corpus.documents()[doc].tokens.len() as f64;
            let denom = n_d + k as f64 * config.alpha;
            (0..k).map(|t| (sum_ndk[doc * k + t] * scale + config.alpha) / denom).collect()
        })
        .collect();
    let beta = (0..k)
        .map(|t| {
            let row = &sum_nkw[t * v..(t + 1) * v];
            let n_k: f64 = row.iter().sum::<f64>() * scale;
            let denom = n_k + v as f64 * config.eta;
            row.iter().map(|&c| (c * scale + config.eta) / denom).collect()
        })
        .collect();

    Ok(LdaModel {
        config: *config,
        theta,
        beta,
        assignments: sampler.z,
        vocabulary: corpus.vocabulary().terms().to_vec(),
        doc_ids: corpus.doc_ids(),
        corpus_fingerprint: corpus.fingerprint(),
    })
}

fn accumulate(sum: &mut [f64], counts: &[u32]) {
    for (s, &c) in sum.iter_mut().zip(counts) {
        *s += c as f64;
    }
}

mod fixed12 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn round(x: f64) -> f64 {
        format!("{x:.12}").parse().unwrap_or(x)
    }

    pub fn serialize<S: Serializer>(m: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rounded: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|&x| round(x)).collect()).collect();
        rounded.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Vec::<Vec<f64>>::deserialize(d)
    }
}

/// A fitted topic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub config: LdaConfig,
    #[serde(with = "fixed12")]
    theta: Vec<Vec<f64>>,
    #[serde(with = "fixed12")]
    beta: Vec<Vec<f64>>,
    #[serde(default)]
    assignments: Vec<Vec<usize>>,
    vocabulary: Vec<String>,
    doc_ids: Vec<String>,
    pub corpus_fingerprint: String,
}

/// Dominant topic of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicAssignment {
    pub doc_id: String,
    pub dominant_topic: usize,
    pub contribution: f64,
    pub top_keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keywords {
    pub terms: Vec<String>,
    /// Set when fewer than the requested number of terms exist.
    pub truncated: bool,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

impl LdaModel {
    /// Assemble a model from explicit distributions, checking shapes and
    /// normalization. `assignments` may be empty.
    pub fn from_parts(
        config: LdaConfig,
        theta: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
        vocabulary: Vec<String>,
        doc_ids: Vec<String>,
    ) -> Result<Self> {
        let model = LdaModel {
            config,
            theta,
            beta,
            assignments: Vec::new(),
            vocabulary,
            doc_ids,
            corpus_fingerprint: String::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.config.k;
        let bad = |m: String| Err(Error::InvalidModel(m));
        if k == 0 || self.beta.len() != k {
            return bad(format!("beta has {} rows for k = {k}", self.beta.len()));
        }
        if self.theta.len() != self.doc_ids.len() {
            return bad(format!("{} theta rows for {} documents", self.theta.len(), self.doc_ids.len()));
        }
        let v = self.vocabulary.len();
        let check_rows = |name: &str, rows: &[Vec<f64>], width: usize| -> Result<()> {
            for (i, r) in rows.iter().enumerate() {
                if r.len() != width {
                    return Err(Error::InvalidModel(format!("{name} row {i} has length {}, expected {width}", r.len())));
                }
                if r.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return Err(Error::InvalidModel(format!("{name} row {i} has a negative or non-finite entry")));
                }
                let s: f64 = r.iter().sum();
                if (s - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidModel(format!("{name} row {i} sums to {s}")));
                }
            }
            Ok(())
        };
        check_rows("theta", &self.theta, k)?;
        check_rows("beta", &self.beta, v)?;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn theta(&self) -> &[Vec<f64>] {
        &self.theta
    }

    pub fn beta(&self) -> &[Vec<f64>] {
        &self.beta
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn num_documents(&self) -> usize {
        self.theta.len()
    }

    /// Argmax of each theta row.
    pub fn dominant_topic_indices(&self) -> Vec<usize> {
        self.theta.iter().map(|r| argmax(r)).collect()
    }

    pub fn dominant_topics(&self) -> Vec<TopicAssignment> {
        self.dominant_topics_with(DEFAULT_KEYWORDS)
    }

    pub fn dominant_topics_with(&self, keywords: usize) -> Vec<TopicAssignment> {
        let per_topic: Vec<Vec<String>> = (0..self.k())
            .map(|t| self.top_keywords(t, keywords.max(1)).map(|k| k.terms).unwrap_or_default())
            .collect();
        self.theta
            .iter()
            .zip(&self.doc_ids)
            .map(|(row, id)| {
                let t = argmax(row);
                TopicAssignment {
                    doc_id: id.clone(),
                    dominant_topic: t,
                    contribution: row[t],
                    top_keywords: per_topic[t].clone(),
                }
            })
            .collect()
    }

    /// Number of distinct topics that dominate at least one document.
    pub fn effective_topic_count(&self) -> usize {
        let mut used = vec![false; self.k()];
        for t in self.dominant_topic_indices() {
            used[t] = true;
        }
        used.iter().filter(|&&u| u).count()
    }

    /// Highest-weight terms of a topic, ties broken by term id.
    pub fn top_keywords(&self, topic: usize, m: usize) -> Result<Keywords> {
        let row = self
            .beta
            .get(topic)
            .ok_or(Error::TopicOutOfRange { topic, k: self.k() })?;
        if m == 0 {
            return Err(Error::InvalidConfig("keyword count must be at least 1".into()));
        }
        let mut ids: Vec<usize> = (0..row.len()).collect();
        ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let truncated = m > ids.len();
        ids.truncate(m);
        Ok(Keywords {
            terms: ids.into_iter().map(|i| self.vocabulary[i].clone()).collect(),
            truncated,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: LdaModel = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LdaModel::from_json(&s)
    }

    /// SHA-256 of the serialized model.
    pub fn fingerprint(&self) -> String {
        let json = self.to_json().expect("model serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
