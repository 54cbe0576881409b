// SPDX-License-Identifier: Apache-2.0

//! Acceptance checks. Each test prints one `PASS`/`FAIL` line before
//! asserting, so `cargo test --test acceptance` doubles as a report.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use biasamp::adapter::stub::{FaultPlan, StubServer};
use biasamp::adapter::{EndpointConfig, RetryPolicy};
use biasamp::caption::{build_corpus, shapes_caption_handler, CaptionRecord, HttpCaptioner, TextCorpus};
use biasamp::dataset::{synth_generate, Split, SynthShapesSpec};
use biasamp::eval::{carbon_report, EnergyEntry, EnergyLedger, Grams};
use biasamp::extract::{extract_topk, rank, select_topk, ConflictCandidateSet};
use biasamp::filter::{default_stop_words, filter_corpus, FilterSpec, FilteredCorpus, WordBudget};
use biasamp::gce::{gce_grad_check, gce_loss, GradRoute};
use biasamp::generate::{amplify, shapes_generate_handler, ClassVocab, HttpGenerator};
use biasamp::nn::{Architecture, Network};
use biasamp::pipeline::{read_metrics_file, run_all, BackendRegistry, ExperimentConfig, METRICS_FILE};

/// Written to the stdout handle directly so the line survives the test
/// harness's output capture.
fn verdict(n: u32, title: &str, ok: bool, detail: String) {
    let line = format!("{} criterion {n}: {title} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).and_then(|_| out.flush()).expect("stdout");
    drop(out);
    assert!(ok, "criterion {n} failed: {detail}");
}

// 1 ---------------------------------------------------------------------

/// `floor(2^-0.7 · 10^digits)` as the integer 10th root of `10^(10·digits) / 2^7`.
fn two_pow_minus_point_seven(digits: u32) -> BigUint {
    let scaled = BigUint::from(10u32).pow(10 * digits) / BigUint::from(128u32);
    scaled.nth_root(10)
}

#[test]
fn criterion_1_gce_formula_exactness() {
    let digits = 40;
    let one = BigUint::from(10u32).pow(digits);
    let x = two_pow_minus_point_seven(digits);
    // (1 − x) / 0.7 = (1 − x)·10/7, kept as a fixed-point integer.
    let num = (&one - &x) * BigUint::from(10u32) / BigUint::from(7u32);
    let shift = BigUint::from(10u32).pow(digits - 17);
    let oracle = (num / shift).to_string().parse::<f64>().unwrap() / 1e17;

    let got = gce_loss(&[0.5, 0.5], 0, 0.7).unwrap();
    let rel = ((got - oracle) / oracle).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut exact = 0;
    for _ in 0..100 {
        let p: f64 = rng.random_range(1e-9..1.0);
        if gce_loss(&[p, 1.0 - p], 0, 1.0).unwrap() == 1.0 - p {
            exact += 1;
        }
    }
    verdict(
        1,
        "GCE formula exactness",
        rel <= 1e-12 && exact == 100,
        format!("q=0.7 rel err {rel:.2e}, q=1 exact {exact}/100"),
    );
}

// 2 ---------------------------------------------------------------------

#[test]
fn criterion_2_gradient_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_jacobian = 0.0f64;
    let mut worst_fd = 0.0f64;
    for i in 0..20u64 {
        let classes = rng.random_range(2..5);
        let (arch, side) = match i % 3 {
            0 => (Architecture::TinyCnn { widths: [2, 3, 4] }, 8),
            1 => (Architecture::Mlp { hidden: rng.random_range(3..7) }, 3),
            _ => (Architecture::SoftmaxLinear, 3),
        };
        let net = Network::new(arch, side, classes, 100 + i).unwrap();
        let batch: Vec<(Vec<f64>, usize)> = (0..4)
            .map(|_| {
                let x = (0..net.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                (x, rng.random_range(0..classes))
            })
            .collect();
        let r = gce_grad_check(&net, &batch, 0.7, GradRoute::Jacobian).unwrap();
        worst_jacobian = worst_jacobian.max(r.max_relative_deviation());
        if arch.is_smooth() {
            let r = gce_grad_check(&net, &batch, 0.7, GradRoute::FiniteDifference { step: 1e-6 }).unwrap();
            worst_fd = worst_fd.max(r.max_relative_deviation());
        }
    }

    let mut worst_limit = 0.0f64;
    for _ in 0..100 {
        let p: f64 = rng.random_range(0.01..1.0);
        let g = gce_loss(&[p, 1.0 - p], 0, 1e-8).unwrap();
        worst_limit = worst_limit.max((g - (-p.ln())).abs());
    }
    verdict(
        2,
        "gradient identity",
        worst_jacobian <= 1e-5 && worst_fd <= 1e-5 && worst_limit <= 1e-6,
        format!("jacobian {worst_jacobian:.2e}, finite-diff {worst_fd:.2e}, q→0 gap {worst_limit:.2e}"),
    );
}

// 3 ---------------------------------------------------------------------

fn sort_oracle(losses: &[(String, f64)], k: usize) -> Vec<(String, f64)> {
    let mut v = losses.to_vec();
    // Loss descending, then id ascending, spelled out without total_cmp.
    v.sort_by(|a, b| {
        if a.1 > b.1 {
            std::cmp::Ordering::Less
        } else if a.1 < b.1 {
            std::cmp::Ordering::Greater
        } else {
            a.0.cmp(&b.0)
        }
    });
    v.truncate(k);
    v
}

#[test]
fn criterion_3_topk_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut cases = 0;
    for list in 0..200 {
        let n = rng.random_range(1..=5000);
        let ties = list % 2 == 0;
        let losses: Vec<(String, f64)> = (0..n)
            .map(|i| {
                let loss = if ties {
                    rng.random_range(0..20) as f64 * 0.25
                } else {
                    rng.random_range(0.0..10.0)
                };
                (format!("s{:05}", (i * 7919) % 100_000), loss)
            })
            .collect();
        let ranking = rank(&losses).unwrap();
        for k in [1, 100, n, n + 7] {
            cases += 1;
            let expect = sort_oracle(&losses, k);
            let got = extract_topk(&ranking, k, "m").unwrap();
            let got: Vec<(String, f64)> = got.sample_ids.into_iter().zip(got.losses).collect();
            let fast = select_topk(&losses, k).unwrap();
            if got != expect || fast != expect {
                mismatches += 1;
            }
        }
    }
    verdict(3, "top-K oracle equivalence", mismatches == 0, format!("{mismatches} mismatches in {cases} cases"));
}

// 4 ---------------------------------------------------------------------

fn brute_force_kept(records: &[CaptionRecord], stop: &BTreeSet<String>, f: usize) -> Vec<CaptionRecord> {
    let words_of = |text: &str| -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for ch in text.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    };
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        for w in words_of(&r.text) {
            if !stop.contains(&w) {
                *counts.entry(w).or_default() += 1;
            }
        }
    }
    // Repeatedly take the most frequent remaining word, alphabetically first on ties.
    let mut top = BTreeSet::new();
    for _ in 0..f {
        let best = counts
            .iter()
            .filter(|(w, _)| !top.contains(*w))
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)));
        match best {
            Some((w, _)) => {
                top.insert(w.clone());
            }
            None => break,
        }
    }
    records
        .iter()
        .filter(|r| words_of(&r.text).iter().any(|w| top.contains(w)))
        .cloned()
        .collect()
}

fn corpus_of(texts: &[String]) -> TextCorpus {
    TextCorpus {
        records: texts
            .iter()
            .enumerate()
            .map(|(i, t)| CaptionRecord {
                sample_id: format!("s{:03}", i / 3),
                caption_index: i % 3 + 1,
                text: t.clone(),
            })
            .collect(),
        captioner_id: "test".into(),
        seed: 0,
        m: 3,
        created_from: String::new(),
        failures: Vec::new(),
        retries: 0,
    }
}

#[test]
fn criterion_4_text_filter_oracle_equivalence() {
    const WORDS: [&str; 24] = [
        "dog", "cat", "a", "the", "on", "sofa", "Grass", "running", "black", "white", "is", "of", "man", "woman",
        "old", "young", "photo", "blurry", "red", "and", "with", "Dog", "in", "x2",
    ];
    const SEPS: [&str; 5] = [" ", ", ", "  ", "-", "! "];
    let stop = default_stop_words();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..50 {
        let n = rng.random_range(1..=200);
        let texts: Vec<String> = (0..n)
            .map(|_| {
                let len = rng.random_range(1..8);
                let mut s = String::new();
                for j in 0..len {
                    if j > 0 {
                        s.push_str(SEPS[rng.random_range(0..SEPS.len())]);
                    }
                    s.push_str(WORDS[rng.random_range(0..WORDS.len())]);
                }
                s
            })
            .collect();
        let corpus = corpus_of(&texts);
        let classes = rng.random_range(1..6);
        let spec = FilterSpec::new(classes);
        let expect = brute_force_kept(&corpus.records, &stop, 2 * classes);
        match filter_corpus(&corpus, &spec) {
            Ok(fc) if fc.kept == expect => {}
            // A corpus of stop words only has no vocabulary to filter by.
            Err(_) if expect.is_empty() => {}
            _ => mismatches += 1,
        }
    }

    let f_for_ten = WordBudget::Auto.resolve(10).unwrap();

    let texts: Vec<String> = [
        "a young man", "an old man", "a young woman", "an old woman", "a young man smiling", "an old woman walking",
        "a person in pink sweater",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let fc = filter_corpus(&corpus_of(&texts), &FilterSpec::new(2)).unwrap();
    let pink_dropped = fc.dropped.iter().any(|(r, _)| r.text.contains("pink")) && fc.kept.len() == 6;

    verdict(
        4,
        "text-filter oracle equivalence",
        mismatches == 0 && f_for_ten == 20 && pink_dropped,
        format!("{mismatches} mismatches in 50 corpora, F(10 classes) = {f_for_ten}, pink caption dropped: {pink_dropped}"),
    );
}

// 5 ---------------------------------------------------------------------

#[test]
fn criterion_5_carbon_arithmetic() {
    let mut one = EnergyLedger::new(475.0, "test").unwrap();
    one.push(EnergyEntry::new("s", 1.0, 1.0).unwrap());
    let r = carbon_report(&one);
    let base_ok = r.total == Grams(475_000_000_000) && r.total.to_string() == "475";

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..100 {
        let stages = rng.random_range(1..6);
        let intensity = rng.random_range(0.0..1000.0);
        let a: Vec<u64> = (0..stages).map(|_| rng.random_range(0..5_000_000)).collect();
        let b: Vec<u64> = (0..stages).map(|_| rng.random_range(0..5_000_000)).collect();
        let ledger = |e: &dyn Fn(usize) -> u64| {
            let mut l = EnergyLedger::new(intensity, "test").unwrap();
            for i in 0..stages {
                l.push(EnergyEntry {
                    stage: format!("s{i}"),
                    micro_kwh: e(i),
                    duration_ms: 0,
                });
            }
            carbon_report(&l)
        };
        let (ra, rb, rab) = (ledger(&|i| a[i]), ledger(&|i| b[i]), ledger(&|i| a[i] + b[i]));
        for i in 0..stages {
            if ra.per_stage[i].1 + rb.per_stage[i].1 != rab.per_stage[i].1 {
                violations += 1;
            }
        }
        let sum = rab.per_stage.iter().fold(Grams(0), |acc, (_, g)| acc + *g);
        if ra.total + rb.total != rab.total || sum != rab.total {
            violations += 1;
        }
    }
    verdict(
        5,
        "carbon arithmetic",
        base_ok && violations == 0,
        format!("1 kWh -> {} g, {violations} linearity violations over 100 ledgers", r.total),
    );
}

// 6, 7, 8 ---------------------------------------------------------------

fn desk_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 0;
    cfg.deterministic = true;
    cfg.dataset.synth = Some(SynthShapesSpec::new(4, 0.01, 2000, 400, 0));
    cfg.eval.trials = 3;
    cfg.caption.backend = "oracle".into();
    cfg.generation.backend = "oracle".into();
    cfg
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(dir.parent().unwrap()).unwrap();
    dir
}

/// The reference run, shared by criteria 6 to 8.
fn reference_run() -> &'static PathBuf {
    static RUN: OnceLock<PathBuf> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = scratch("run-a");
        run_all(desk_config(), &dir, BackendRegistry::default(), false).unwrap();
        dir
    })
}

fn metrics(run: &Path) -> BTreeMap<String, String> {
    read_metrics_file(&run.join("report").join(METRICS_FILE)).unwrap()
}

fn num(m: &BTreeMap<String, String>, key: &str) -> f64 {
    m.get(key)
        .unwrap_or_else(|| panic!("metric {key} missing"))
        .parse()
        .unwrap_or_else(|_| panic!("metric {key} = {:?} is not a number", m[key]))
}

// Thresholds frozen from calibration runs (seeds 0, 1, 2) of this pipeline.
const BIAS_GAP_MIN: f64 = 0.15;
const PURITY_AT_20_MIN: f64 = 0.5;
const CONFLICT_GAIN_MIN: f64 = 0.10;
const OVERALL_DROP_MAX: f64 = 0.02;

#[test]
fn criterion_6_end_to_end_debiasing() {
    let m = metrics(reference_run());
    let gap = num(&m, "mean.biased_train.aligned_acc") - num(&m, "mean.biased_train.conflict_acc");
    let purity = num(&m, "mean.extraction.purity_at.20");
    let gain = num(&m, "mean.debiased.conflict_acc") - num(&m, "mean.vanilla.conflict_acc");
    let drop = num(&m, "mean.vanilla.overall_acc") - num(&m, "mean.debiased.overall_acc");
    verdict(
        6,
        "end-to-end debiasing effect",
        gap >= BIAS_GAP_MIN && purity >= PURITY_AT_20_MIN && gain >= CONFLICT_GAIN_MIN && drop <= OVERALL_DROP_MAX,
        format!(
            "f_B train aligned-conflict gap {gap:.4}, purity@20 {purity:.4}, conflict gain {gain:.4}, overall drop {drop:.4}"
        ),
    );
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

#[test]
fn criterion_7_text_filter_ablation_direction() {
    let with_filter = reference_run();
    let dir = scratch("run-nofilter");
    copy_dir(with_filter, &dir);
    let mut cfg = desk_config();
    cfg.filter.enabled = false;
    // Upstream stages are reused from the copied run; only filter onwards recompute.
    let record = run_all(cfg, &dir, BackendRegistry::default(), true).unwrap();
    let recomputed = record.stages.values().filter(|s| s.status == biasamp::pipeline::StageStatus::Completed).count();

    let (a, b) = (metrics(with_filter), metrics(&dir));
    let on = num(&a, "mean.debiased.conflict_acc");
    let off = num(&b, "mean.debiased.conflict_acc");
    let dropped = num(&a, "mean.filter.dropped");
    verdict(
        7,
        "text-filter ablation direction",
        on >= off,
        format!("conflict acc with filter {on:.4}, without {off:.4}; filter dropped {dropped:.1} captions/trial; {recomputed} stages recomputed"),
    );
}

fn tracked_files(run: &Path, trials: usize) -> Vec<PathBuf> {
    let mut files = vec![PathBuf::from("report").join(METRICS_FILE)];
    for t in 0..trials {
        let trial = PathBuf::from(format!("trial-{t}"));
        files.push(trial.join("evaluate/metrics.json"));
        files.push(trial.join("caption/corpus.jsonl"));
        files.push(trial.join("filter/filtered.jsonl"));
        files.push(trial.join("generate/generated.jsonl"));
        files.push(trial.join("extract/candidates.jsonl"));
    }
    files.retain(|f| run.join(f).exists());
    files
}

#[test]
fn criterion_8_determinism() {
    let a = reference_run();
    let b = scratch("run-b");
    run_all(desk_config(), &b, BackendRegistry::default(), false).unwrap();
    let files = tracked_files(a, 3);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    verdict(
        8,
        "determinism",
        files.len() == 16 && differing.is_empty(),
        format!("{} files compared, differing: {differing:?}", files.len()),
    );
}

// 9 ---------------------------------------------------------------------

#[test]
fn criterion_9_adapter_robustness() {
    let data = tempfile::tempdir().unwrap();
    let manifest = synth_generate(&SynthShapesSpec::new(4, 0.1, 60, 8, 9), data.path()).unwrap();
    let ids: Vec<String> = manifest.split(Split::Train).take(50).map(|s| s.id.clone()).collect();
    let candidates = ConflictCandidateSet {
        losses: vec![0.0; ids.len()],
        sample_ids: ids.clone(),
        k: 50,
        source_model: "fixture".into(),
    };
    let fast_retry = RetryPolicy {
        max_retries: 4,
        base_backoff_ms: 5,
        max_backoff_ms: 50,
    };

    let cap_server = StubServer::start(shapes_caption_handler(), FaultPlan::transient(0.2, 91)).unwrap();
    let captioner = HttpCaptioner::new(EndpointConfig::new(cap_server.url()).with_retry(fast_retry.clone()));
    let corpus = build_corpus(&candidates, &manifest, &captioner, 3, 7, 4).unwrap();
    let cap_stats = cap_server.stats();
    let keys: HashSet<String> = corpus.records.iter().map(|r| r.key()).collect();
    let cap_ok = corpus.failures.is_empty()
        && corpus.records.len() == 150
        && keys.len() == 150
        && corpus.sample_ids().len() == 50
        && cap_stats.processed.len() == 50
        && cap_stats.duplicate_processing() == 0
        && cap_stats.injected_failures > 0;

    let gen_server = StubServer::start(shapes_generate_handler(), FaultPlan::transient(0.2, 92)).unwrap();
    let generator = HttpGenerator::new(EndpointConfig::new(gen_server.url()).with_retry(fast_retry));
    let filtered = FilteredCorpus::passthrough(&corpus);
    let out = tempfile::tempdir().unwrap();
    let vocab = ClassVocab::from_class_names(&manifest.class_names);
    let set = amplify(&filtered, &generator, &vocab, 50, 32, 7, 4, out.path()).unwrap();
    let gen_stats = gen_server.stats();
    let gen_ids: HashSet<&str> = set.samples.iter().map(|s| s.id.as_str()).collect();
    let images_ok = set.samples.iter().all(|s| out.path().join(&s.image).is_file());
    let gen_ok = set.samples.len() == 50
        && gen_ids.len() == 50
        && images_ok
        && gen_stats.processed.len() == 50
        && gen_stats.duplicate_processing() == 0
        && gen_stats.injected_failures > 0;

    verdict(
        9,
        "adapter robustness",
        cap_ok && gen_ok,
        format!(
            "captioner: {} records, {} injected faults ({} lost acks), {} duplicates; generator: {} images, {} injected faults ({} lost acks), {} duplicates",
            corpus.records.len(),
            cap_stats.injected_failures,
            cap_stats.lost_acks,
            cap_stats.duplicate_processing(),
            set.samples.len(),
            gen_stats.injected_failures,
            gen_stats.lost_acks,
            gen_stats.duplicate_processing()
        ),
    );
}
