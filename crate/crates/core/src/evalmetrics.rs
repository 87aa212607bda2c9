//! Held-out perplexity and UMass topic coherence, plus the coherence grid
//! search used to pick `alpha` and `eta`.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::lda::{fit, LdaConfig, LdaModel};
use crate::rng::{derive_seed, rng_from_seed, string_tag};

pub const FOLD_IN_SWEEPS: usize = 50;
pub const FOLD_IN_BURN_IN: usize = 25;
pub const DEFAULT_TOP_M: usize = 10;
pub const DEFAULT_GRID_VALUES: [f64; 7] = [0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldInConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for FoldInConfig {
    fn default() -> Self {
        FoldInConfig {
            sweeps: FOLD_IN_SWEEPS,
            burn_in: FOLD_IN_BURN_IN,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityResult {
    pub value: f64,
    pub held_out_tokens: usize,
    pub log_likelihood: f64,
    /// Held-out tokens whose term is not in the model vocabulary.
    pub oov_dropped: usize,
}

/// Perplexity with the default fold-in settings, seeded from the model.
pub fn perplexity(model: &LdaModel, held_out: &Corpus) -> Result<PerplexityResult> {
    let cfg = FoldInConfig {
        seed: derive_seed(model.config.seed, &[0x70_6572_706c]),
        ..FoldInConfig::default()
    };
    perplexity_with(model, held_out, &cfg)
}

pub fn perplexity_with(model: &LdaModel, held_out: &Corpus, cfg: &FoldInConfig) -> Result<PerplexityResult> {
    if cfg.burn_in >= cfg.sweeps {
        return Err(Error::InvalidConfig(format!(
            "fold-in burn_in ({}) must be below sweeps ({})",
            cfg.burn_in, cfg.sweeps
        )));
    }
    let index: HashMap<&str, usize> = model
        .vocabulary()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let terms = held_out.vocabulary().terms();
    let mapped: Vec<Option<usize>> = terms.iter().map(|t| index.get(t.as_str()).copied()).collect();

    let mut log_likelihood = 0.0;
    let mut tokens = 0;
    let mut oov = 0;
    for doc in held_out.documents() {
        let words: Vec<usize> = doc.tokens.iter().filter_map(|&t| mapped[t]).collect();
        oov += doc.tokens.len() - words.len();
        if words.is_empty() {
            continue;
        }
        // Seeded by document id so the result does not depend on order.
        let seed = derive_seed(cfg.seed, &[string_tag(&doc.id)]);
        let theta = fold_in(model, &words, cfg.sweeps, cfg.burn_in, seed);
        for &w in &words {
            let p: f64 = (0..model.k()).map(|k| theta[k] * model.beta()[k][w]).sum();
            log_likelihood += p.ln();
        }
        tokens += words.len();
    }
    if tokens == 0 {
        return Err(Error::AllOutOfVocabulary);
    }
    Ok(PerplexityResult {
        value: (-log_likelihood / tokens as f64).exp(),
        held_out_tokens: tokens,
        log_likelihood,
        oov_dropped: oov,
    })
}

/// Topic proportions of one held-out document with beta frozen, averaged
/// over post-burn-in sweeps.
fn fold_in(model: &LdaModel, words: &[usize], sweeps: usize, burn_in: usize, seed: u64) -> Vec<f64> {
    let k = model.k();
    let alpha = model.config.alpha;
    let beta = model.beta();
    let mut rng = rng_from_seed(seed);
    let mut counts = vec![0u32; k];
    let mut z = Vec::with_capacity(words.len());
    let mut weights = vec![0.0; k];
    for &w in words {
        for t in 0..k {
            weights[t] = (counts[t] as f64 + alpha) * beta[t][w];
        }
        let t = draw(&mut rng, &weights);
        counts[t] += 1;
        z.push(t);
    }
    let mut acc = vec![0.0; k];
    let denom = words.len() as f64 + k as f64 * alpha;
    for sweep in 0..sweeps {
        for (i, &w) in words.iter().enumerate() {
            counts[z[i]] -= 1;
            for t in 0..k {
                weights[t] = (counts[t] as f64 + alpha) * beta[t][w];
            }
            let t = draw(&mut rng, &weights);
            counts[t] += 1;
            z[i] = t;
        }
        if sweep >= burn_in {
            for t in 0..k {
                acc[t] += (counts[t] as f64 + alpha) / denom;
            }
        }
    }
    let n = (sweeps - burn_in) as f64;
    acc.iter().map(|a| a / n).collect()
}

fn draw<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return rng.random_range(0..weights.len());
    }
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceResult {
    pub per_topic: Vec<f64>,
    pub aggregate: f64,
}

/// A topic-quality score over a reference corpus.
pub trait CoherenceMeasure {
    fn score(&self, model: &LdaModel, corpus: &Corpus) -> Result<CoherenceResult>;
}

/// UMass coherence over the top `top_m` words of each topic.
#[derive(Debug, Clone, Copy)]
pub struct UMass {
    pub top_m: usize,
}

impl CoherenceMeasure for UMass {
    fn score(&self, model: &LdaModel, corpus: &Corpus) -> Result<CoherenceResult> {
        umass_coherence(model, corpus, self.top_m)
    }
}

/// Sum over ordered pairs `i > j` of `ln((D(w_i, w_j) + 1) / D(w_j))`, where
/// `D` counts documents of `corpus` containing the word(s).
pub fn umass_coherence(model: &LdaModel, corpus: &Corpus, top_m: usize) -> Result<CoherenceResult> {
    if top_m < 2 {
        return Err(Error::InvalidConfig("coherence needs at least two top words".into()));
    }
    let doc_sets: Vec<HashSet<&str>> = (0..corpus.len())
        .map(|d| corpus.document_terms(d).into_iter().collect())
        .collect();
    let mut per_topic = Vec::with_capacity(model.k());
    for topic in 0..model.k() {
        let top = model.top_keywords(topic, top_m)?.terms;
        // Document membership of each top word as a bitset over documents.
        let members: Vec<Vec<u64>> = top
            .iter()
            .map(|w| {
                let mut bits = vec![0u64; corpus.len().div_ceil(64)];
                for (d, set) in doc_sets.iter().enumerate() {
                    if set.contains(w.as_str()) {
                        bits[d / 64] |= 1 << (d % 64);
                    }
                }
                bits
            })
            .collect();
        let count = |b: &[u64]| b.iter().map(|x| x.count_ones() as u64).sum::<u64>();
        let mut score = 0.0;
        for i in 1..top.len() {
            for j in 0..i {
                let dj = count(&members[j]);
                if dj == 0 {
                    return Err(Error::InvalidModel(format!(
                        "top word `{}` of topic {topic} does not occur in the reference corpus",
                        top[j]
                    )));
                }
                let both: u64 = members[i]
                    .iter()
                    .zip(&members[j])
                    .map(|(a, b)| (a & b).count_ones() as u64)
                    .sum();
                score += ((both + 1) as f64 / dj as f64).ln();
            }
        }
        per_topic.push(score);
    }
    let aggregate = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Ok(CoherenceResult { per_topic, aggregate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub eta: f64,
}

pub fn default_grid() -> Vec<GridPoint> {
    let mut grid = Vec::new();
    for &alpha in &DEFAULT_GRID_VALUES {
        for &eta in &DEFAULT_GRID_VALUES {
            grid.push(GridPoint { alpha, eta });
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub alpha: f64,
    pub eta: f64,
    pub aggregate_coherence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub alpha: f64,
    pub eta: f64,
    pub coherence: CoherenceResult,
    /// One row per grid point, in grid order.
    pub table: Vec<TuningRow>,
}

/// Fit one model per grid point with `template` (its `k` replaced) and keep
/// the point with the highest aggregate coherence, earliest on ties.
pub fn tune_hyperparams(
    corpus: &Corpus,
    k: usize,
    grid: &[GridPoint],
    template: &LdaConfig,
    top_m: usize,
) -> Result<TuningResult> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty tuning grid".into()));
    }
    for p in grid {
        if !(p.alpha > 0.0 && p.eta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "grid point ({}, {}) must be positive",
                p.alpha, p.eta
            )));
        }
    }
    let scored: Vec<Result<CoherenceResult>> = grid
        .par_iter()
        .map(|p| {
            let cfg = LdaConfig {
                k,
                alpha: p.alpha,
                eta: p.eta,
                ..*template
            };
            let model = fit(corpus, &cfg)?;
            umass_coherence(&model, corpus, top_m)
        })
        .collect();
    let scored: Vec<CoherenceResult> = scored.into_iter().collect::<Result<_>>()?;
    let mut best = 0;
    for (i, c) in scored.iter().enumerate() {
        if c.aggregate > scored[best].aggregate {
            best = i;
        }
    }
    let table = grid
        .iter()
        .zip(&scored)
        .map(|(p, c)| TuningRow {
            alpha: p.alpha,
            eta: p.eta,
            aggregate_coherence: c.aggregate,
        })
        .collect();
    Ok(TuningResult {
        alpha: grid[best].alpha,
        eta: grid[best].eta,
        coherence: scored[best].clone(),
        table,
    })
}

pub fn write_tuning_csv(rows: &[TuningRow], path: &Path) -> Result<()> {
    let mut out = String::from("alpha,eta,aggregate_coherence\n");
    for r in rows {
        out.push_str(&format!("{:.6},{:.6},{:.6}\n", r.alpha, r.eta, r.aggregate_coherence));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(docs: &[&str]) -> Corpus {
        let docs = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("d{i}"), d.split_whitespace().collect::<Vec<_>>()))
            .collect();
        Corpus::from_tokenized("test", docs).unwrap()
    }

    fn model(theta: Vec<Vec<f64>>, beta: Vec<Vec<f64>>, vocab: &[&str]) -> LdaModel {
        let ids = (0..theta.len()).map(|i| format!("d{i}")).collect();
        let mut cfg = LdaConfig::new(beta.len());
        cfg.alpha = 0.5;
        LdaModel::from_parts(cfg, theta, beta, vocab.iter().map(|s| s.to_string()).collect(), ids).unwrap()
    }

    #[test]
    fn uniform_model_gives_vocabulary_size() {
        let vocab = ["a", "b", "c", "d", "e"];
        let m = model(vec![vec![1.0]], vec![vec![0.2; 5]], &vocab);
        let held = corpus(&["a b b e", "c d"]);
        let r = perplexity(&m, &held).unwrap();
        assert!((r.value - 5.0).abs() / 5.0 < 1e-9, "{}", r.value);
        assert_eq!(r.held_out_tokens, 6);
    }

    #[test]
    fn uniform_beta_ignores_topic_mix() {
        let vocab = ["a", "b", "c", "d"];
        let m = model(vec![vec![0.3, 0.7]], vec![vec![0.25; 4], vec![0.25; 4]], &vocab);
        let r = perplexity(&m, &corpus(&["a b c d a"])).unwrap();
        assert!((r.value - 4.0).abs() < 1e-9);
    }

    #[test]
    fn certain_word_has_perplexity_one() {
        let m = model(vec![vec![1.0]], vec![vec![1.0]], &["x"]);
        let r = perplexity(&m, &corpus(&["x x x"])).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        assert_eq!(r.log_likelihood, 0.0);
    }

    #[test]
    fn hand_computed_three_tokens() {
        let m = model(vec![vec![1.0]], vec![vec![0.5, 0.25, 0.25]], &["a", "b", "c"]);
        let r = perplexity(&m, &corpus(&["a b c"])).unwrap();
        let expected = (-(0.5f64.ln() + 0.25f64.ln() + 0.25f64.ln()) / 3.0).exp();
        assert!((r.value - expected).abs() < 1e-12);
        assert!((r.value - 3.1748).abs() < 1e-3);
    }

    #[test]
    fn oov_tokens_dropped_and_counted() {
        let m = model(vec![vec![1.0]], vec![vec![0.5, 0.5]], &["a", "b"]);
        let r = perplexity(&m, &corpus(&["a zz b", "qq"])).unwrap();
        assert_eq!(r.oov_dropped, 2);
        assert_eq!(r.held_out_tokens, 2);
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!(matches!(perplexity(&m, &corpus(&["zz qq"])), Err(Error::AllOutOfVocabulary)));
    }

    #[test]
    fn perplexity_invariant_to_document_order() {
        let vocab = ["a", "b", "c"];
        let m = model(
            vec![vec![0.5, 0.5]],
            vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.2, 0.7]],
            &vocab,
        );
        let docs = [("p", "a a b"), ("q", "c c b c"), ("r", "a c")];
        let build = |order: &[usize]| {
            Corpus::from_tokenized(
                "t",
                order
                    .iter()
                    .map(|&i| (docs[i].0.to_string(), docs[i].1.split(' ').collect::<Vec<_>>()))
                    .collect(),
            )
            .unwrap()
        };
        let pa = perplexity(&m, &build(&[0, 1, 2])).unwrap();
        let pb = perplexity(&m, &build(&[2, 0, 1])).unwrap();
        assert!((pa.value - pb.value).abs() <= 1e-12 * pa.value, "{} {}", pa.value, pb.value);
        assert_eq!(pa.held_out_tokens, pb.held_out_tokens);
    }

    #[test]
    fn fold_in_recovers_skewed_document() {
        let vocab = ["a", "b"];
        let m = model(vec![vec![0.5, 0.5]], vec![vec![0.99, 0.01], vec![0.01, 0.99]], &vocab);
        let theta = fold_in(&m, &[0; 20], 200, 50, 1);
        assert!(theta[0] > 0.9, "{theta:?}");
    }

    #[test]
    fn always_cooccurring_pair() {
        // Both words in the same 3 documents.
        let c = corpus(&["x y", "x y z", "y x", "z"]);
        let m = model(vec![vec![1.0]; 1], vec![vec![0.5, 0.4, 0.1]], &["x", "y", "z"]);
        let r = umass_coherence(&m, &c, 2).unwrap();
        assert!((r.per_topic[0] - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!(r.per_topic[0] > 0.0);
    }

    #[test]
    fn never_cooccurring_pair() {
        let c = corpus(&["x", "x", "y", "z"]);
        let m = model(vec![vec![1.0]], vec![vec![0.5, 0.4, 0.1]], &["x", "y", "z"]);
        let r = umass_coherence(&m, &c, 2).unwrap();
        // D(x) = 2, no co-occurrence.
        assert!((r.per_topic[0] - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn missing_top_word_is_error() {
        let c = corpus(&["y z"]);
        let m = model(vec![vec![1.0]], vec![vec![0.5, 0.4, 0.1]], &["x", "y", "z"]);
        assert!(umass_coherence(&m, &c, 2).is_err());
        assert!(umass_coherence(&m, &c, 1).is_err());
    }

    fn brute_umass(model: &LdaModel, docs: &[Vec<String>], top_m: usize) -> Vec<f64> {
        (0..model.k())
            .map(|t| {
                let top = model.top_keywords(t, top_m).unwrap().terms;
                let mut s = 0.0;
                for i in 0..top.len() {
                    for j in 0..i {
                        let dj = docs.iter().filter(|d| d.contains(&top[j])).count();
                        let both = docs
                            .iter()
                            .filter(|d| d.contains(&top[i]) && d.contains(&top[j]))
                            .count();
                        s += ((both + 1) as f64 / dj as f64).ln();
                    }
                }
                s
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn umass_matches_brute_force(
            docs in prop::collection::vec(prop::collection::vec(0usize..12, 1..8), 1..50),
            seed in 0u64..1000,
        ) {
            let text: Vec<Vec<String>> = docs
                .iter()
                .map(|d| d.iter().map(|w| format!("w{w}")).collect())
                .collect();
            let c = Corpus::from_tokenized(
                "p",
                text.iter().enumerate().map(|(i, d)| (format!("d{i}"), d.clone())).collect(),
            ).unwrap();
            let k = 3.min(c.total_tokens());
            let m = fit(&c, &LdaConfig { sweeps: 20, burn_in: 10, ..LdaConfig::new(k).with_seed(seed) }).unwrap();
            let top_m = 4.min(c.vocab_size()).max(2);
            prop_assume!(c.vocab_size() >= 2);
            let fast = umass_coherence(&m, &c, top_m).unwrap();
            let slow = brute_umass(&m, &text, top_m);
            prop_assert_eq!(&fast.per_topic, &slow);
            let mean = slow.iter().sum::<f64>() / slow.len() as f64;
            prop_assert_eq!(fast.aggregate, mean);
        }
    }

    fn tuning_corpus() -> Corpus {
        corpus(&[
            "tree node root leaf",
            "tree leaf branch node",
            "sort merge quick heap",
            "sort heap bubble merge",
            "root branch tree",
            "quick sort merge",
        ])
    }

    #[test]
    fn single_point_grid() {
        let c = tuning_corpus();
        let grid = [GridPoint { alpha: 0.3, eta: 0.7 }];
        let r = tune_hyperparams(&c, 2, &grid, &LdaConfig::new(2), 3).unwrap();
        assert_eq!((r.alpha, r.eta), (0.3, 0.7));
        assert_eq!(r.table.len(), 1);
    }

    #[test]
    fn tuning_picks_independently_evaluated_best() {
        let c = tuning_corpus();
        let template = LdaConfig::new(2).with_seed(11);
        let grid = default_grid();
        let r = tune_hyperparams(&c, 2, &grid, &template, 3).unwrap();
        let direct: Vec<f64> = grid
            .iter()
            .map(|p| {
                let m = fit(&c, &LdaConfig { alpha: p.alpha, eta: p.eta, ..template }).unwrap();
                umass_coherence(&m, &c, 3).unwrap().aggregate
            })
            .collect();
        let best = direct.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = direct.iter().position(|&x| x == best).unwrap();
        assert_eq!((r.alpha, r.eta), (grid[first].alpha, grid[first].eta));
        assert!(grid.iter().any(|p| p.alpha == r.alpha && p.eta == r.eta));
        let again = tune_hyperparams(&c, 2, &grid, &template, 3).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn tuning_rejects_bad_grid() {
        let c = tuning_corpus();
        assert!(tune_hyperparams(&c, 2, &[], &LdaConfig::new(2), 3).is_err());
        let bad = [GridPoint { alpha: 0.0, eta: 0.1 }];
        assert!(tune_hyperparams(&c, 2, &bad, &LdaConfig::new(2), 3).is_err());
    }

    #[test]
    fn tuning_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_tuning_csv(
            &[TuningRow { alpha: 0.1, eta: 0.5, aggregate_coherence: -1.25 }],
            &p,
        )
        .unwrap();
        let s = std::fs::read_to_string(&p).unwrap();
        assert_eq!(s, "alpha,eta,aggregate_coherence\n0.100000,0.500000,-1.250000\n");
    }
}
