//! Synthetic corpora drawn from the LDA generative process, with the true
//! topic structure kept alongside.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, RawRecord};
use crate::dirichlet;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub true_k: usize,
    pub docs: usize,
    pub vocab: usize,
    pub doc_len: usize,
    pub alpha: f64,
    pub eta: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            true_k: 8,
            docs: 500,
            vocab: 200,
            doc_len: 40,
            alpha: 0.1,
            eta: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    /// D x K document-topic proportions.
    pub theta: Vec<Vec<f64>>,
    /// K x V topic-word distributions over the generator's term list.
    pub beta: Vec<Vec<f64>>,
    /// Per-document per-token generating topic.
    pub token_topics: Vec<Vec<usize>>,
}

impl GroundTruth {
    /// Number of distinct generating topics that dominate some document by
    /// token count.
    pub fn used_topics(&self) -> usize {
        let mut used = vec![false; self.config.true_k];
        for z in &self.token_topics {
            let mut counts = vec![0usize; self.config.true_k];
            for &t in z {
                counts[t] += 1;
            }
            let best = (0..counts.len()).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
            used[best] = true;
        }
        used.iter().filter(|&&u| u).count()
    }
}

pub fn term_name(index: usize) -> String {
    format!("w{index:04}")
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.true_k == 0 || self.docs == 0 || self.vocab == 0 || self.doc_len == 0 {
            return Err(Error::InvalidConfig("true_k, docs, vocab and doc_len must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.eta > 0.0) {
            return Err(Error::InvalidConfig("alpha and eta must be positive".into()));
        }
        Ok(())
    }
}

/// Sample topics, document proportions and tokens. Records carry the tokens
/// as space-separated text with ids `s0000`, `s0001`, ...
pub fn generate(config: &SynthConfig) -> Result<(Vec<RawRecord>, GroundTruth)> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let beta: Vec<Vec<f64>> = (0..config.true_k)
        .map(|_| dirichlet::sample_symmetric(&mut rng, config.eta, config.vocab))
        .collect();
    let mut theta = Vec::with_capacity(config.docs);
    let mut token_topics = Vec::with_capacity(config.docs);
    let mut records = Vec::with_capacity(config.docs);
    for d in 0..config.docs {
        let th = dirichlet::sample_symmetric(&mut rng, config.alpha, config.true_k);
        let mut z = Vec::with_capacity(config.doc_len);
        let mut words = Vec::with_capacity(config.doc_len);
        for _ in 0..config.doc_len {
            let t = draw(&mut rng, &th);
            let w = draw(&mut rng, &beta[t]);
            z.push(t);
            words.push(term_name(w));
        }
        records.push(RawRecord {
            id: format!("s{d:04}"),
            text: words.join(" "),
        });
        theta.push(th);
        token_topics.push(z);
    }
    Ok((
        records,
        GroundTruth {
            config: *config,
            theta,
            beta,
            token_topics,
        },
    ))
}

/// Generate and tokenize directly, skipping text cleaning.
pub fn generate_corpus(config: &SynthConfig) -> Result<Corpus> {
    let (records, _) = generate(config)?;
    let docs = records
        .into_iter()
        .map(|r| (r.id, r.text.split_whitespace().map(str::to_string).collect::<Vec<_>>()))
        .collect();
    let mut corpus = Corpus::from_tokenized(&format!("synthetic seed={}", config.seed), docs)?;
    corpus.provenance.source = format!(
        "synthetic k={} docs={} vocab={} len={} seed={}",
        config.true_k, config.docs, config.vocab, config.doc_len, config.seed
    );
    Ok(corpus)
}

fn draw<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}
