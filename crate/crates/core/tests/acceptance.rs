//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use recursive_lda::corpus::{preprocess, Corpus, PreprocessConfig};
use recursive_lda::evalmetrics::{perplexity, tune_hyperparams, GridPoint};
use recursive_lda::experiments::{self, execute, mean_mode, ExperimentPlan};
use recursive_lda::hdp::{escalate, fit_hdp, HdpConfig, HdpEstimate};
use recursive_lda::lda::{fit, LdaConfig, LdaModel, LdaSampler};
use recursive_lda::recursor::{
    classify_outcome, run_recursion, run_with_fitter, trace_to_jsonl, traces_from_jsonl, GuardParams, InitialK,
    Outcome, RecursionConfig, ScriptedFitter,
};
use recursive_lda::rng::derive_seed;
use recursive_lda::synth::{generate, generate_corpus, SynthConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn disjoint() -> Corpus {
    Corpus::from_tokenized(
        "disjoint",
        vec![("d0".to_string(), vec!["a", "a", "a"]), ("d1".to_string(), vec!["b", "b", "b"])],
    )
    .unwrap()
}

/// Log of the collapsed joint p(w, z) up to a constant, for K topics.
fn log_joint(docs: &[Vec<usize>], z: &[Vec<usize>], k: usize, v: usize, alpha: f64, eta: f64) -> f64 {
    let mut lp = 0.0;
    let mut nkw = vec![vec![0usize; v]; k];
    for (d, doc) in docs.iter().enumerate() {
        let mut ndk = vec![0usize; k];
        for (&w, &t) in doc.iter().zip(&z[d]) {
            ndk[t] += 1;
            nkw[t][w] += 1;
        }
        lp += ln_gamma(k as f64 * alpha) - ln_gamma(doc.len() as f64 + k as f64 * alpha);
        for &n in &ndk {
            lp += ln_gamma(n as f64 + alpha) - ln_gamma(alpha);
        }
    }
    for row in &nkw {
        let nk: usize = row.iter().sum();
        lp += ln_gamma(v as f64 * eta) - ln_gamma(nk as f64 + v as f64 * eta);
        for &n in row {
            lp += ln_gamma(n as f64 + eta) - ln_gamma(eta);
        }
    }
    lp
}

/// Category of a 2-topic state: 0 = doc0 on topic 0 and doc1 on topic 1,
/// 1 = the reverse, 2 = both documents share a dominant topic.
fn split_category(topic0_in_doc: [usize; 2]) -> usize {
    let dom = |c: usize| if c >= 2 { 0 } else { 1 };
    match (dom(topic0_in_doc[0]), dom(topic0_in_doc[1])) {
        (0, 1) => 0,
        (1, 0) => 1,
        _ => 2,
    }
}

fn criterion_1() -> Check {
    let (alpha, eta) = (0.01, 0.01);
    let docs = vec![vec![0usize; 3], vec![1usize; 3]];
    // Exhaustive posterior over all 2^6 assignments.
    let mut logs = Vec::new();
    for mask in 0u32..64 {
        let z: Vec<Vec<usize>> = (0..2)
            .map(|d| (0..3).map(|i| ((mask >> (d * 3 + i)) & 1) as usize).collect())
            .collect();
        let counts = [3 - z[0].iter().sum::<usize>(), 3 - z[1].iter().sum::<usize>()];
        logs.push((split_category(counts), log_joint(&docs, &z, 2, 2, alpha, eta)));
    }
    let max = logs.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = logs.iter().map(|l| (l.1 - max).exp()).sum();
    let mut expected_p = [0.0; 3];
    for (c, l) in &logs {
        expected_p[*c] += (l - max).exp() / norm;
    }

    let corpus = disjoint();
    let chains = 20_000;
    let sweeps = 1_000;
    let mut observed = [0usize; 3];
    for i in 0..chains {
        let config = LdaConfig {
            alpha,
            eta,
            ..LdaConfig::new(2).with_seed(derive_seed(2024, &[i as u64]))
        };
        let mut sampler = LdaSampler::new(&corpus, &config).map_err(|e| e.to_string())?;
        for _ in 0..sweeps {
            sampler.sweep();
        }
        let c = [sampler.doc_topic_counts(0)[0] as usize, sampler.doc_topic_counts(1)[0] as usize];
        observed[split_category(c)] += 1;
    }
    let chi2: f64 = (0..3)
        .map(|c| {
            let e = expected_p[c] * chains as f64;
            (observed[c] as f64 - e).powi(2) / e
        })
        .sum();
    // Two degrees of freedom, 1% level.
    let critical = 9.210;
    ensure(
        chi2 < critical,
        format!("chi2 = {chi2:.3} >= {critical}; observed {observed:?}, expected p {expected_p:?}"),
    )?;
    Ok(format!(
        "chi2 = {chi2:.3} < {critical} over {chains} chains; observed {observed:?}, expected {:?}",
        expected_p.map(|p| (p * chains as f64 * 10.0).round() / 10.0)
    ))
}

fn criterion_2() -> Check {
    let corpus = generate_corpus(&SynthConfig {
        docs: 100,
        seed: 5,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut sampler = LdaSampler::new(&corpus, &LdaConfig::new(8).with_seed(9)).map_err(|e| e.to_string())?;
    sampler.check_counts().map_err(|e| format!("after init: {e}"))?;
    let sweeps = 200;
    for s in 0..sweeps {
        sampler.sweep();
        sampler.check_counts().map_err(|e| format!("after sweep {}: {e}", s + 1))?;
    }
    Ok(format!("identities held after all {sweeps} sweeps on {} documents", corpus.len()))
}

fn brute_escalation(weights: &[f64], n: usize) -> (usize, usize, usize) {
    let count = |t: f64| weights.iter().filter(|&&w| w > t).count();
    let h1 = count(1.0 / n as f64);
    if h1 == 0 {
        return (1, 1, 1);
    }
    let h2 = count(1.0 / h1 as f64);
    if h2 == 0 {
        return (h1, 1, 1);
    }
    let h3 = count(1.0 / h2 as f64);
    (h1, h2, h3.max(1))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 10_000;
    for i in 0..trials {
        let len = rng.random_range(1..60);
        let mut w: Vec<f64> = if i % 10 == 0 {
            vec![1.0; len]
        } else {
            (0..len).map(|_| rng.random::<f64>().powi(rng.random_range(1..6))).collect()
        };
        let total: f64 = w.iter().sum();
        if total == 0.0 {
            continue;
        }
        w.iter_mut().for_each(|x| *x /= total);
        w.sort_by(|a, b| b.total_cmp(a));
        let n = rng.random_range(1..300);
        let e = escalate(&w, n);
        ensure(
            e.hdp3 <= e.hdp2 && e.hdp2 <= e.hdp1,
            format!("trial {i}: ordering violated ({}, {}, {})", e.hdp1, e.hdp2, e.hdp3),
        )?;
        ensure(
            (e.hdp1, e.hdp2, e.hdp3) == brute_escalation(&w, n),
            format!("trial {i}: mismatch with brute-force count"),
        )?;
    }
    Ok(format!("{trials} random vectors: ordered and equal to brute-force counts"))
}

fn reference_corpus() -> Result<Corpus, String> {
    generate_corpus(&SynthConfig::default()).map_err(|e| e.to_string())
}

fn criterion_4(corpus: &Corpus) -> Check {
    let runs = 100;
    let plan = ExperimentPlan {
        runs_per_cell: runs,
        base_seed: 44,
        ..ExperimentPlan::default()
    };
    let run = execute(corpus, &plan).map_err(|e| e.to_string())?;
    ensure(run.report.failed_cells.is_empty(), format!("{:?}", run.report.failed_cells))?;
    let archive = &run.archives[0];
    let initial = archive.hdp.hdp2;
    let mut converged = 0;
    for t in &archive.traces {
        ensure(t.len() <= initial + 1, format!("trace of {} steps from K = {initial}", t.len()))?;
        let last = t.steps.last().unwrap();
        if t.outcome == Outcome::Success && last.k_effective == last.k_specified {
            converged += 1;
        }
        ensure(classify_outcome(t).map_err(|e| e.to_string())? == t.outcome, "stored outcome disagrees with replay")?;
    }
    let failure_rate = run.report.cells[0].failure_rate;
    ensure(converged >= 95, format!("only {converged}/{runs} runs reached ratio 1"))?;
    ensure(failure_rate <= 0.05, format!("failure rate {failure_rate}"))?;
    let lengths: BTreeSet<usize> = archive.traces.iter().map(|t| t.len()).collect();
    Ok(format!(
        "hdp2 = {initial}; {converged}/{runs} reached ratio 1; failure rate {failure_rate:.2}; trace lengths {lengths:?}; mean-mode K {:?}",
        run.report.cells[0].mean_mode_final_k
    ))
}

fn criterion_5(corpus: &Corpus) -> Check {
    let fits = 100;
    let mut ratios = Vec::new();
    let mut over = 0;
    for i in 0..fits {
        let seed = derive_seed(55, &[i]);
        let est = fit_hdp(corpus, &HdpConfig { seed, ..HdpConfig::default() }).map_err(|e| e.to_string())?;
        if est.hdp1 > est.hdp2 {
            over += 1;
        }
        let model = fit(corpus, &LdaConfig::new(est.hdp1).with_seed(derive_seed(seed, &[1]))).map_err(|e| e.to_string())?;
        ratios.push(model.effective_topic_count() as f64 / est.hdp1 as f64);
    }
    ratios.sort_by(f64::total_cmp);
    let median = (ratios[49] + ratios[50]) / 2.0;
    ensure(median < 1.0, format!("median first-step ratio {median}"))?;
    ensure(over >= 95, format!("hdp1 > hdp2 in only {over}/{fits} fits"))?;
    Ok(format!("median first-step ratio from hdp1 = {median:.3}; hdp1 > hdp2 in {over}/{fits} fits"))
}

fn criterion_6() -> Check {
    let run = |initial: usize, script: Vec<usize>, guards: GuardParams| {
        run_with_fitter(&mut ScriptedFitter::new(script), initial, guards, 0).map_err(|e| e.to_string())
    };
    let g = GuardParams::default();
    let t = run(30, vec![21, 17, 15, 15], g)?;
    let ratios: Vec<String> = t.steps.iter().map(|s| format!("{:.3}", s.efficiency_ratio)).collect();
    ensure(t.outcome == Outcome::Success && ratios == ["0.700", "0.810", "0.882", "1.000"], format!("{ratios:?}"))?;
    let t = run(12, vec![12], g)?;
    ensure(t.outcome == Outcome::Success && t.len() == 1, "immediate convergence")?;
    let t = run(50, vec![45, 27, 27], g)?;
    ensure(t.outcome == Outcome::FailureGammaDrop && t.len() == 2, "gamma drop")?;
    let t = run(100, vec![80, 48, 48], g)?;
    ensure(t.outcome == Outcome::Success, "drop equal to gamma must not fail")?;
    let t = run(1000, vec![900, 765, 612, 459, 459], GuardParams { eta_guard: 2, ..g })?;
    ensure(t.outcome == Outcome::FailureSteadyDecrease && t.len() == 4, "steady decrease")?;
    let t = run(40, vec![39, 38, 37, 36], GuardParams { max_steps: 3, ..g })?;
    ensure(t.outcome == Outcome::FailureStepCap && t.len() == 3, "step cap")?;
    Ok("success, gamma drop, steady decrease and step cap all exit as expected".into())
}

fn criterion_7() -> Check {
    let held = |docs: &[&str]| {
        Corpus::from_tokenized(
            "held",
            docs.iter()
                .enumerate()
                .map(|(i, d)| (format!("h{i}"), d.split(' ').collect::<Vec<_>>()))
                .collect(),
        )
        .unwrap()
    };
    let vocab: Vec<String> = (0..7).map(|i| format!("t{i}")).collect();
    let uniform = LdaModel::from_parts(
        LdaConfig::new(1),
        vec![vec![1.0]],
        vec![vec![1.0 / 7.0; 7]],
        vocab,
        vec!["d".into()],
    )
    .map_err(|e| e.to_string())?;
    let p = perplexity(&uniform, &held(&["t0 t3 t3 t6", "t1 t2"])).map_err(|e| e.to_string())?.value;
    ensure((p - 7.0).abs() / 7.0 <= 1e-9, format!("uniform perplexity {p}"))?;
    let hand = LdaModel::from_parts(
        LdaConfig::new(1),
        vec![vec![1.0]],
        vec![vec![0.5, 0.25, 0.25]],
        vec!["a".into(), "b".into(), "c".into()],
        vec!["d".into()],
    )
    .map_err(|e| e.to_string())?;
    let q = perplexity(&hand, &held(&["a b c"])).map_err(|e| e.to_string())?.value;
    ensure((q - 3.1748).abs() <= 1e-3, format!("hand case {q}"))?;
    Ok(format!("uniform V=7 gives {p:.12}; hand case gives {q:.6}"))
}

fn criterion_8() -> Check {
    let cases: [(&[usize], usize); 4] = [(&[7, 7, 9], 7), (&[2, 2, 4, 4, 9], 4), (&[2, 2, 4, 4, 3], 2), (&[6], 6)];
    for (values, expected) in cases {
        let got = mean_mode(values).map_err(|e| e.to_string())?;
        ensure(got == expected, format!("mean_mode({values:?}) = {got}, expected {expected}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5_000 {
        let len = rng.random_range(1..30);
        let values: Vec<usize> = (0..len).map(|_| rng.random_range(1..15)).collect();
        let m = mean_mode(&values).map_err(|e| e.to_string())?;
        ensure(values.contains(&m), format!("{m} not in {values:?}"))?;
    }
    Ok("unique mode, closest-to-mean and equidistant tie cases; 5000 random lists return members".into())
}

fn criterion_9() -> Check {
    let small = SynthConfig {
        docs: 120,
        seed: 90,
        ..SynthConfig::default()
    };
    let artifacts = || -> Result<Vec<(&'static str, String)>, String> {
        let e = |e: recursive_lda::Error| e.to_string();
        let (records, truth) = generate(&small).map_err(e)?;
        let corpus = preprocess(&records, &PreprocessConfig::default(), "synth").map_err(e)?;
        let permuted = corpus.permute(3);
        let prefix = permuted.prefix(60).map_err(e)?;
        let model = fit(&corpus, &LdaConfig::new(8).with_seed(4)).map_err(e)?;
        let hdp = fit_hdp(&corpus, &HdpConfig { seed: 5, ..HdpConfig::default() }).map_err(e)?;
        let trace = run_recursion(
            &corpus,
            &RecursionConfig {
                initial_k: InitialK::Hdp2,
                hdp: HdpConfig { seed: 6, ..HdpConfig::default() },
                seed: 6,
                ..RecursionConfig::default()
            },
        )
        .map_err(e)?;
        let perp = perplexity(&model, &prefix).map_err(e)?;
        let grid = [GridPoint { alpha: 0.1, eta: 0.1 }, GridPoint { alpha: 0.5, eta: 0.3 }];
        let tuned = tune_hyperparams(&prefix, 4, &grid, &LdaConfig::new(4).with_seed(7), 5).map_err(e)?;
        let plan = ExperimentPlan {
            permutation_seeds: vec![1],
            prefix_sizes: vec![60],
            runs_per_cell: 3,
            base_seed: 8,
            ..ExperimentPlan::default()
        };
        let report = execute(&corpus, &plan).map_err(e)?.report;
        Ok(vec![
            ("synth truth", serde_json::to_string(&truth).unwrap()),
            ("corpus", corpus.to_json().map_err(e)?),
            ("permute", permuted.to_json().map_err(e)?),
            ("prefix", prefix.to_json().map_err(e)?),
            ("lda model", model.to_json().map_err(e)?),
            ("hdp estimate", hdp.to_json().map_err(e)?),
            ("recursion trace", trace_to_jsonl(&trace).map_err(e)?),
            ("perplexity", serde_json::to_string(&perp).unwrap()),
            ("tuning", serde_json::to_string(&tuned).unwrap()),
            ("experiment report", serde_json::to_string(&report).unwrap()),
        ])
    };
    let a = artifacts()?;
    let b = artifacts()?;
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        ensure(x == y, format!("{name} differs between identical runs"))?;
    }
    let names: Vec<&str> = a.iter().map(|p| p.0).collect();
    Ok(format!("byte-identical on re-run: {}", names.join(", ")))
}

fn rlda(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rlda"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "rlda {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn criterion_10() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    rlda(dir, &["--seed", "10", "synth", "--docs", "300"])?;
    rlda(dir, &["preprocess", "--input", "synth.csv"])?;
    let corpus = Corpus::load(&dir.join("corpus.json")).map_err(|e| e.to_string())?;
    ensure(corpus.len() == 300, format!("{} documents", corpus.len()))?;
    rlda(dir, &["--seed", "11", "hdp", "--corpus", "corpus.json"])?;
    let est = HdpEstimate::load(&dir.join("hdp.json")).map_err(|e| e.to_string())?;
    ensure(est.hdp3 <= est.hdp2 && est.hdp2 <= est.hdp1, "hdp ordering")?;
    rlda(dir, &["--seed", "12", "recurse", "--corpus", "corpus.json", "--init-k", "hdp2"])?;
    let trace = std::fs::read_to_string(dir.join("trace.jsonl")).map_err(|e| e.to_string())?;
    let traces = traces_from_jsonl(&trace).map_err(|e| e.to_string())?;
    ensure(traces.len() == 1, "one trace")?;
    LdaModel::load(&dir.join("model_final.json")).map_err(|e| e.to_string())?;
    std::fs::write(
        dir.join("plan.json"),
        r#"{"corpus": "corpus.json", "permutation_seeds": [1], "prefix_sizes": [150], "runs_per_cell": 10}"#,
    )
    .map_err(|e| e.to_string())?;
    rlda(dir, &["--seed", "13", "--output-dir", "exp", "experiment", "--plan", "plan.json"])?;
    let exp = dir.join("exp");
    let report: experiments::ExperimentReport =
        serde_json::from_str(&std::fs::read_to_string(exp.join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure(report.failed_cells.is_empty() && report.cells.len() == 4, "four completed cells")?;
    for c in &report.cells {
        let end = c.termination.last().map(|s| s.cumulative);
        ensure(end == Some(1.0), format!("{}: cumulative curve ends at {end:?}", c.cell.label))?;
    }
    ensure(experiments::replay(&exp).map_err(|e| e.to_string())? == report, "replay differs from report")?;
    let final_k = experiments::read_final_k(&exp.join(experiments::FINAL_K_FILE)).map_err(|e| e.to_string())?;
    ensure(final_k.len() == report.cells.len(), "final_k rows")?;
    for (row, c) in final_k.iter().zip(&report.cells) {
        ensure(
            row.cell == c.cell.label
                && row.hdp1 == c.hdp1
                && row.hdp2 == c.hdp2
                && row.mean_mode_k == c.mean_mode_final_k
                && (row.failure_rate - c.failure_rate).abs() < 5e-7,
            format!("final_k row {} does not match report", row.cell),
        )?;
    }
    let term = experiments::read_termination(&exp.join(experiments::TERMINATION_FILE)).map_err(|e| e.to_string())?;
    let flat: Vec<_> = report
        .cells
        .iter()
        .flat_map(|c| c.termination.iter().map(move |s| (c.cell.label.clone(), s)))
        .collect();
    ensure(term.len() == flat.len(), "termination rows")?;
    for (row, (label, s)) in term.iter().zip(&flat) {
        ensure(
            &row.cell == label
                && row.step == s.step
                && row.count == s.count
                && (row.marginal - s.marginal).abs() < 5e-7
                && (row.cumulative - s.cumulative).abs() < 5e-7,
            format!("termination row {label}/{} does not match report", row.step),
        )?;
    }
    Ok(format!(
        "{} cells, all curves end at 1.0; replay and CSV exports round-trip",
        report.cells.len()
    ))
}

fn main() {
    let corpus = reference_corpus();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("sampler matches exhaustive posterior", Box::new(criterion_1)),
        ("count identities after every sweep", Box::new(criterion_2)),
        ("escalation ordering and brute-force counts", Box::new(criterion_3)),
        ("recursion converges from hdp2", Box::new(|| criterion_4(corpus.as_ref().map_err(|e| e.clone())?))),
        ("hdp1 over-estimates", Box::new(|| criterion_5(corpus.as_ref().map_err(|e| e.clone())?))),
        ("guard exits", Box::new(criterion_6)),
        ("perplexity identities", Box::new(criterion_7)),
        ("mean-mode", Box::new(criterion_8)),
        ("determinism", Box::new(criterion_9)),
        ("end to end through the binary", Box::new(criterion_10)),
    ];
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if filter.is_some_and(|f| f != n) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS ({secs:.1}s) {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL ({secs:.1}s) {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
