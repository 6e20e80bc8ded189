//! Acceptance checks. Prints one PASS or FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Every expected value is computed here from first principles: plurality
//! votes by counting, overlap by exhaustive window sets, permutation p-values
//! by enumerating label assignments, kappa by counting rater pairs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use medeval::backends::{Backend, BackendError, Client, GenerationRequest, MockBackend, MockReply, MockRule, MockScript, RetryPolicy};
use medeval::overlap::{build_corpus_index, overlap_report, render_tsv, text_overlaps, Document, IndexConfig, MatchRule, OverlapVerdict};
use medeval::prompting::{run_ensemble_refinement, run_self_consistency, PromptError, PromptSpec, Strategy};
use medeval::stats::{
    analyze, bootstrap_mean, classify_agreement, permutation_test, permutation_test_blocked, randolph_kappa,
    randolph_kappa_value, Agreement, AnalyzeConfig, AxisSpec, BootstrapConfig, Design, PermutationConfig, RatingMatrix,
    RatingRecord, RatingsFile, RATINGS_FORMAT,
};
use medeval::study::{
    create_study, export_axes, rater_axes, Authorship, RatingSubmission, StudyItem, StudyService, StudySpec, FIRST, SECOND, TIE,
};
use medeval::{DatasetTag, Letter, MultipleChoiceQuestion};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("ensemble-refinement", ensemble_refinement),
        ("self-consistency", self_consistency),
        ("overlap-detection", overlap_detection),
        ("permutation-test", permutation),
        ("randolph-kappa", kappa),
        ("bootstrap-ci", bootstrap),
        ("pairwise-analysis", pairwise_analysis),
        ("study-service", study_service),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {reason}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn letter(c: char) -> Letter {
    Letter::new(c).expect("valid letter")
}

fn mcq(id: &str, stem: &str) -> MultipleChoiceQuestion {
    MultipleChoiceQuestion {
        id: id.into(),
        stem: stem.into(),
        context: None,
        options: ['A', 'B', 'C', 'D'].into_iter().map(|c| (letter(c), format!("option {c}"))).collect(),
        gold: letter('A'),
        dataset: DatasetTag::new("medqa"),
    }
}

/// Plurality over parsed letters; ties go to the letter seen first.
fn plurality(letters: &[Option<char>]) -> Option<(char, bool)> {
    let mut counts: BTreeMap<char, (usize, usize)> = BTreeMap::new();
    for (i, l) in letters.iter().enumerate() {
        if let Some(l) = l {
            let e = counts.entry(*l).or_insert((0, i));
            e.0 += 1;
        }
    }
    let best = counts.values().map(|c| c.0).max()?;
    let tied: Vec<_> = counts.iter().filter(|(_, c)| c.0 == best).collect();
    let winner = tied.iter().min_by_key(|(_, c)| c.1).map(|(l, _)| **l)?;
    Some((winner, tied.len() > 1))
}

struct Recorder {
    inner: MockBackend,
    requests: Mutex<Vec<GenerationRequest>>,
}

impl Backend for Recorder {
    fn name(&self) -> &str {
        "recorder"
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        self.inner.complete(request)
    }
}

fn answer_text(tag: &str, l: Option<char>) -> String {
    match l {
        Some(l) => format!("Explanation: {tag} weighs the findings.\nAnswer: ({l})"),
        None => format!("Explanation: {tag} cannot decide between the findings."),
    }
}

fn ensemble_refinement() -> Check {
    let fixed: [&[Option<char>]; 6] = [
        &[Some('A'), Some('B')],
        &[Some('B'), Some('A'), Some('A'), Some('B')],
        &[None, Some('C'), None],
        &[None, None],
        &[Some('D'), Some('D'), Some('A'), Some('A'), Some('B')],
        &[None],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut ties, mut errors, mut elapsed) = (0, 0, Duration::ZERO);
    for case in 0..50 {
        let n1 = rng.random_range(1..=6);
        let stage2: Vec<Option<char>> = match fixed.get(case) {
            Some(f) => f.to_vec(),
            None => (0..rng.random_range(1..=9))
                .map(|_| rng.random_bool(0.85).then(|| ['A', 'B', 'C', 'D'][rng.random_range(0..4)]))
                .collect(),
        };
        // Stage 1 prefers a letter the refinement stage never picks, so a vote over it would disagree.
        let stage1: Vec<String> = (0..n1).map(|i| answer_text(&format!("student {case}-{i}"), Some('E'))).collect();
        let script = MockScript::new()
            .rule(MockRule::contains(stage1[0].clone(), stage2.iter().enumerate().map(|(i, l)| MockReply::Text(answer_text(&format!("refiner {case}-{i}"), *l))).collect()))
            .rule(MockRule::any(stage1.iter().cloned().map(MockReply::Text).collect()));
        let recorder = Arc::new(Recorder { inner: MockBackend::new(script), requests: Mutex::new(Vec::new()) });
        let client = Client::new(recorder.clone()).with_retry(RetryPolicy::none()).with_parallelism(4);
        let mut spec = PromptSpec::for_dataset("medqa", Strategy::EnsembleRefinement).map_err(|e| e.to_string())?.with_seed(0);
        spec.er_stage1 = n1;
        spec.er_stage2 = stage2.len();
        let mut q = mcq(&format!("er-{case}"), &format!("Case {case}: which finding explains the presentation?"));
        q.options.insert(letter('E'), "option E".into());

        let start = Instant::now();
        let result = run_ensemble_refinement(&q, &client, &spec);
        elapsed += start.elapsed();

        match plurality(&stage2) {
            None => {
                errors += 1;
                ensure!(matches!(result, Err(PromptError::NoParseableAnswers)), "case {case}: expected no parseable answers, got {result:?}");
            }
            Some((winner, tie)) => {
                ties += usize::from(tie);
                let out = result.map_err(|e| format!("case {case}: {e}"))?;
                ensure!(out.final_answer == letter(winner), "case {case}: answer {} but oracle says {winner}", out.final_answer.as_char());
                let ballots: Vec<Option<char>> = out.ballots.iter().map(|b| b.letter.map(|l| l.as_char())).collect();
                ensure!(ballots == stage2, "case {case}: ballots {ballots:?} differ from scripted {stage2:?}");
                ensure!(out.generations.len() == n1 + stage2.len(), "case {case}: {} generations", out.generations.len());
            }
        }

        let requests = recorder.requests.lock().unwrap();
        let refine: Vec<&GenerationRequest> = requests.iter().filter(|r| r.prompt.contains(&stage1[0])).collect();
        ensure!(refine.len() == stage2.len(), "case {case}: {} refinement requests for {} samples", refine.len(), stage2.len());
        ensure!(requests.len() == n1 + stage2.len(), "case {case}: {} requests", requests.len());
        let seeds: BTreeSet<Option<u64>> = refine.iter().map(|r| r.seed).collect();
        ensure!(seeds.len() == stage2.len(), "case {case}: refinement samples share seeds");
        for r in &refine {
            let mut from = 0;
            for (k, text) in stage1.iter().enumerate() {
                let needle = format!("{} reasoning: {text}", k + 1);
                let at = r.prompt[from..].find(&needle).ok_or_else(|| format!("case {case}: stage-2 prompt lacks {needle:?} in order"))?;
                from += at + needle.len();
            }
        }
    }
    ensure!(elapsed < Duration::from_secs(10), "50 questions took {elapsed:?}");
    Ok(format!("50 questions, {ties} ties, {errors} all-unparseable, strategy time {:.2}s", elapsed.as_secs_f64()))
}

fn self_consistency() -> Check {
    let letters = ['A', 'B', 'C', 'D'];
    let mut spec = PromptSpec::for_dataset("medqa", Strategy::SelfConsistency).map_err(|e| e.to_string())?.with_seed(0);
    spec.sc_samples = 5;
    let (mut ties, mut elapsed) = (0, Duration::ZERO);
    for code in 0..4usize.pow(5) {
        let picks: Vec<Option<char>> = (0..5).map(|i| Some(letters[(code / 4usize.pow(i)) % 4])).collect();
        let script = MockScript::new().rule(MockRule::any(
            picks.iter().enumerate().map(|(i, l)| MockReply::Text(answer_text(&format!("sample {i}"), *l))).collect(),
        ));
        let client = Client::new(Arc::new(MockBackend::new(script))).with_retry(RetryPolicy::none());
        let q = mcq(&format!("sc-{code}"), "Which option is correct?");
        let start = Instant::now();
        let out = run_self_consistency(&q, &client, &spec).map_err(|e| format!("outcome {code}: {e}"))?;
        elapsed += start.elapsed();
        let (winner, tie) = plurality(&picks).expect("every sample parses");
        ties += usize::from(tie);
        ensure!(out.final_answer == letter(winner), "outcome {picks:?}: answer {} but oracle says {winner}", out.final_answer.as_char());
        ensure!(out.ballots.len() == 5 && out.discarded == 0, "outcome {picks:?}: {} ballots", out.ballots.len());
        let total: usize = out.tally.values().sum();
        ensure!(total == 5, "outcome {picks:?}: tally sums to {total}");
    }
    ensure!(elapsed < Duration::from_secs(30), "1024 outcomes took {elapsed:?}");
    Ok(format!("all 1024 outcomes of 5 samples over 4 options, {ties} ties, {:.2}s", elapsed.as_secs_f64()))
}

fn random_text(rng: &mut ChaCha8Rng, n: usize, alphabet: &[char]) -> String {
    (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
}

fn char_offsets(s: &str) -> Vec<usize> {
    s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len())).collect()
}

fn char_slice<'a>(s: &'a str, offs: &[usize], from: usize, len: usize) -> &'a str {
    &s[offs[from]..offs[from + len]]
}

struct Oracle<'a> {
    docs: &'a [String],
    windows: HashSet<&'a str>,
    len: usize,
}

impl<'a> Oracle<'a> {
    fn new(docs: &'a [String], offs: &[Vec<usize>], len: usize) -> Self {
        let mut windows = HashSet::new();
        for (d, o) in docs.iter().zip(offs) {
            let n = o.len() - 1;
            if n >= len {
                windows.extend((0..=n - len).map(|i| char_slice(d, o, i, len)));
            }
        }
        Oracle { docs, windows, len }
    }

    fn overlaps(&self, q: &str) -> bool {
        if self.docs.iter().any(|d| d.contains(q)) {
            return true;
        }
        let o = char_offsets(q);
        let n = o.len() - 1;
        n >= self.len && (0..=n - self.len).any(|i| self.windows.contains(char_slice(q, &o, i, self.len)))
    }
}

fn corpus(rng: &mut ChaCha8Rng, c: usize) -> Vec<String> {
    let size = if c % 25 == 12 { rng.random_range(900_000..1_000_000) } else { rng.random_range(8_000..128_000) };
    let mut alphabet = vec!['a', 'b', 'c', 'd', 'e', ' ', ' ', '\n'];
    if c % 3 == 1 {
        alphabet.extend(['é', 'λ', '中', '🙂']);
    }
    let parts = rng.random_range(1..=20);
    (0..parts)
        .map(|_| {
            let n = (size / parts).max(1);
            if c % 10 == 5 {
                let len = rng.random_range(2..8);
                let period = random_text(rng, len, &alphabet);
                let mut s: String = period.chars().cycle().take(n).collect();
                if rng.random_bool(0.5) {
                    let at = rng.random_range(0..s.len());
                    let at = (0..=at).rev().find(|&i| s.is_char_boundary(i)).unwrap();
                    s.insert(at, 'x');
                }
                s
            } else {
                random_text(rng, n, &alphabet)
            }
        })
        .collect()
}

fn queries(rng: &mut ChaCha8Rng, docs: &[String], offs: &[Vec<usize>]) -> Vec<String> {
    let alphabet = ['a', 'b', 'c', 'd', 'e', ' ', '\n', 'ü'];
    let lens = [60, 110, 119, 120, 121, 200, 400, 511, 512, 513, 600];
    let slice = |rng: &mut ChaCha8Rng, want: usize| -> String {
        let d = rng.random_range(0..docs.len());
        let n = offs[d].len() - 1;
        let len = want.min(n);
        let from = rng.random_range(0..=n - len);
        char_slice(&docs[d], &offs[d], from, len).to_string()
    };
    (0..500)
        .map(|i| match i % 5 {
            0 => {
                let n = rng.random_range(30..900);
                random_text(rng, n, &alphabet)
            }
            1 => {
                let k = lens[rng.random_range(0..lens.len())];
                let (pre, post) = (rng.random_range(0..200), rng.random_range(0..200));
                random_text(rng, pre, &alphabet) + &slice(rng, k) + &random_text(rng, post, &alphabet)
            }
            2 => {
                let n = rng.random_range(10..600);
                slice(rng, n)
            }
            3 => {
                let (a, b) = (rng.random_range(60..500), rng.random_range(60..500));
                let d = rng.random_range(0..docs.len());
                let e = (d + 1) % docs.len();
                let (na, nb) = (offs[d].len() - 1, offs[e].len() - 1);
                let (a, b) = (a.min(na), b.min(nb));
                char_slice(&docs[d], &offs[d], na - a, a).to_string() + char_slice(&docs[e], &offs[e], 0, b)
            }
            _ => {
                let n = rng.random_range(300..900);
                let mut chars: Vec<char> = slice(rng, n).chars().collect();
                let step = rng.random_range(100..600);
                let mut at = rng.random_range(0..step);
                while at < chars.len() {
                    chars[at] = 'Z';
                    at += step;
                }
                chars.into_iter().collect()
            }
        })
        .collect()
}

fn overlap_detection() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2023);
    let thresholds = [512, 120];
    let (mut checked, mut positives, mut scan_time) = (0, [0usize; 2], Duration::ZERO);
    for c in 0..100 {
        let docs = corpus(&mut rng, c);
        let offs: Vec<Vec<usize>> = docs.iter().map(|d| char_offsets(d)).collect();
        let qs = queries(&mut rng, &docs, &offs);
        let start = Instant::now();
        let index = build_corpus_index(
            docs.iter().enumerate().map(|(j, d)| Document::new(format!("c{c}/d{j}"), d.clone())).collect(),
            IndexConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        let verdicts: Vec<Vec<OverlapVerdict>> = thresholds
            .iter()
            .map(|&l| qs.iter().enumerate().map(|(i, q)| text_overlaps(&format!("q{i}"), q, &index, l)).collect())
            .collect();
        scan_time += start.elapsed();
        for (t, &l) in thresholds.iter().enumerate() {
            let oracle = Oracle::new(&docs, &offs, l);
            for (q, v) in qs.iter().zip(&verdicts[t]) {
                let expected = oracle.overlaps(q);
                ensure!(
                    v.overlapping == expected,
                    "corpus {c}, L={l}, {}: reported {} but oracle says {expected} (query of {} chars)",
                    v.question_id,
                    v.overlapping,
                    q.chars().count()
                );
                ensure!(v.matched_document.is_some() == expected, "corpus {c}, L={l}, {}: matched document {:?}", v.question_id, v.matched_document);
                if v.rule == Some(MatchRule::Window) {
                    ensure!(v.matched_length.unwrap_or(0) >= l, "corpus {c}, L={l}, {}: window of {:?}", v.question_id, v.matched_length);
                }
                positives[t] += usize::from(expected);
                checked += 1;
            }
        }
    }
    ensure!(scan_time < Duration::from_secs(120), "indexing and scanning took {scan_time:?}");
    table_arithmetic()?;
    Ok(format!(
        "{checked} verdicts over 100 corpora ({} positive at L=512, {} at L=120), index and scan {:.1}s, report arithmetic matches",
        positives[0],
        positives[1],
        scan_time.as_secs_f64()
    ))
}

fn table_arithmetic() -> Result<(), String> {
    let fixture = |total: usize, overlapping: usize, correct_with: usize, correct_without: usize| {
        let mut verdicts = Vec::new();
        let mut correct = BTreeMap::new();
        for i in 0..total {
            let id = format!("q{i}");
            let with = i < overlapping;
            let ok = if with { i < correct_with } else { i - overlapping < correct_without };
            verdicts.push(OverlapVerdict {
                question_id: id.clone(),
                overlapping: with,
                matched_document: with.then(|| "doc".to_string()),
                matched_length: with.then_some(512),
                rule: with.then_some(MatchRule::Window),
            });
            correct.insert(id, ok);
        }
        (verdicts, correct)
    };
    let cfg = BootstrapConfig::default();
    let (v, c) = fixture(1273, 12, 10, 900);
    let medqa = overlap_report("MedQA", &v, &c, 512, &cfg).map_err(|e| e.to_string())?;
    ensure!(medqa.fraction_label() == "12/1273 (0.9%)", "MedQA fraction {}", medqa.fraction_label());
    let (v, c) = fixture(4183, 893, 670, 2318);
    let medmcqa = overlap_report("MedMCQA", &v, &c, 512, &cfg).map_err(|e| e.to_string())?;
    let tsv = render_tsv(&[medqa, medmcqa]);
    let row: Vec<&str> = tsv.lines().nth(2).unwrap_or_default().split('\t').collect();
    ensure!(row.len() == 6, "MedMCQA row {row:?}");
    ensure!(row[2] == format!("893/4183 ({:.1}%)", 89300.0 / 4183.0), "MedMCQA fraction {}", row[2]);
    ensure!(row[3].starts_with(&format!("{:.1} [", 231800.0 / 3290.0)), "without-overlap cell {}", row[3]);
    ensure!(row[4].starts_with(&format!("{:.1} [", 67000.0 / 893.0)), "with-overlap cell {}", row[4]);
    ensure!(row[5].starts_with("-4.6 ["), "delta cell {}", row[5]);
    Ok(())
}

/// Exact p-value by enumerating every assignment of labels within blocks.
fn enumerate_p(blocks: &[(Vec<f64>, usize)]) -> f64 {
    let na: usize = blocks.iter().map(|b| b.1).sum();
    let total_n: usize = blocks.iter().map(|b| b.0.len()).sum();
    let nb = total_n - na;
    let total: f64 = blocks.iter().flat_map(|b| &b.0).sum();
    let stat = |sum_a: f64| sum_a / na as f64 - (total - sum_a) / nb as f64;
    let observed: f64 = blocks.iter().map(|b| b.0[..b.1].iter().sum::<f64>()).sum();
    let threshold = stat(observed).abs() - 1e-9;
    let mut sums = vec![0.0];
    for (values, k) in blocks {
        let m = values.len();
        let mut next = Vec::new();
        for mask in 0u32..(1 << m) {
            if mask.count_ones() as usize != *k {
                continue;
            }
            let s: f64 = (0..m).filter(|j| mask >> j & 1 == 1).map(|j| values[j]).sum();
            next.extend(sums.iter().map(|p| p + s));
        }
        sums = next;
    }
    sums.iter().filter(|&&s| stat(s).abs() >= threshold).count() as f64 / sums.len() as f64
}

fn draw(rng: &mut ChaCha8Rng, kind: usize) -> f64 {
    match kind {
        0 => f64::from(u8::from(rng.random_bool(0.5))),
        1 => rng.random_range(1..=5) as f64,
        _ => rng.random::<f64>(),
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).map(|i| (n - i) as f64 / (i + 1) as f64).product()
}

fn permutation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut exact_cases = 0;
    while exact_cases < 300 {
        let kind = exact_cases % 3;
        let n_blocks = if exact_cases % 2 == 0 { 1 } else { rng.random_range(2..=5) };
        let blocks: Vec<(Vec<f64>, usize)> = (0..n_blocks)
            .map(|_| {
                let m = rng.random_range(1..=if n_blocks == 1 { 14 } else { 6 });
                ((0..m).map(|_| draw(&mut rng, kind)).collect(), rng.random_range(0..=m))
            })
            .collect();
        let na: usize = blocks.iter().map(|b| b.1).sum();
        let n: usize = blocks.iter().map(|b| b.0.len()).sum();
        let space: f64 = blocks.iter().map(|(v, k)| binomial(v.len(), *k)).product();
        if na == 0 || na == n || space > 1e5 {
            continue;
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (key, (values, k)) in blocks.iter().enumerate() {
            a.extend(values[..*k].iter().map(|v| (key, *v)));
            b.extend(values[*k..].iter().map(|v| (key, *v)));
        }
        let expected = enumerate_p(&blocks);
        let r = if n_blocks == 1 {
            let a: Vec<f64> = a.iter().map(|x| x.1).collect();
            let b: Vec<f64> = b.iter().map(|x| x.1).collect();
            permutation_test(&a, &b, &PermutationConfig::default())
        } else {
            permutation_test_blocked(&a, &b, &PermutationConfig::default())
        }
        .map_err(|e| e.to_string())?;
        ensure!(r.exact, "case {exact_cases}: space {space} not enumerated");
        ensure!(r.p_value == expected, "case {exact_cases}: p = {} but enumeration gives {expected} ({blocks:?})", r.p_value);
        exact_cases += 1;
    }

    let datasets: [(&str, Vec<f64>, Vec<f64>); 3] = [
        ("binary", vec![1.0, 1.0, 1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0, 0.0, 0.0]),
        ("likert", vec![5.0, 4.0, 4.0, 3.0, 5.0], vec![3.0, 2.0, 4.0, 3.0, 1.0]),
        ("continuous", vec![0.91, 0.42, 0.77, 0.63, 0.58], vec![0.35, 0.52, 0.18, 0.66, 0.49]),
    ];
    let mut worst = 0.0f64;
    for (name, a, b) in &datasets {
        let exact = enumerate_p(&[(a.iter().chain(b).copied().collect(), a.len())]);
        let mut close = 0;
        for seed in 0..100 {
            let r = permutation_test(a, b, &PermutationConfig::monte_carlo(10_000, seed)).map_err(|e| e.to_string())?;
            let err = (r.p_value - exact).abs();
            worst = worst.max(err);
            close += usize::from(err <= 0.02);
        }
        ensure!(close >= 95, "{name}: only {close}/100 Monte Carlo seeds within 0.02 of exact p {exact}");
    }
    Ok(format!("{exact_cases} exact p-values match enumeration; Monte Carlo within 0.02 for >=95/100 seeds (max error {worst:.4})"))
}

fn kappa_by_pairs(m: &RatingMatrix) -> Option<f64> {
    let mut per_item = Vec::new();
    for (_, row) in &m.items {
        let given: Vec<&String> = row.iter().flatten().collect();
        if given.len() < 2 {
            continue;
        }
        let (mut agree, mut pairs) = (0usize, 0usize);
        for i in 0..given.len() {
            for j in 0..given.len() {
                if i != j {
                    pairs += 1;
                    agree += usize::from(given[i] == given[j]);
                }
            }
        }
        per_item.push(agree as f64 / pairs as f64);
    }
    if per_item.is_empty() {
        return None;
    }
    let po = per_item.iter().sum::<f64>() / per_item.len() as f64;
    let pe = 1.0 / m.categories.len() as f64;
    Some((po - pe) / (1.0 - pe))
}

fn kappa() -> Check {
    let cats = |n: usize| -> Vec<String> { (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect() };
    let unanimous: Vec<(&str, &str)> = (0..4).flat_map(|i| std::iter::repeat((["i0", "i1", "i2", "i3"][i], ["A", "B", "C", "A"][i])).take(4)).collect();
    let unanimous = RatingMatrix::from_ratings(cats(3), unanimous).map_err(|e| e.to_string())?;
    let k = randolph_kappa_value(&unanimous).map_err(|e| e.to_string())?;
    ensure!((k - 1.0).abs() < 1e-9, "unanimous ratings give {k}");
    let chance = RatingMatrix::from_ratings(cats(2), [("1", "A"), ("1", "A"), ("2", "A"), ("2", "B"), ("3", "B"), ("3", "B"), ("4", "B"), ("4", "A")])
        .map_err(|e| e.to_string())?;
    let k = randolph_kappa_value(&chance).map_err(|e| e.to_string())?;
    ensure!(k.abs() < 1e-9, "chance-level agreement gives {k}");
    let third = RatingMatrix::from_ratings(cats(2), [("1", "A"), ("1", "A"), ("1", "B"), ("2", "A"), ("2", "A"), ("2", "A")])
        .map_err(|e| e.to_string())?;
    let k = randolph_kappa_value(&third).map_err(|e| e.to_string())?;
    ensure!((k - 1.0 / 3.0).abs() < 1e-9, "worked example gives {k}");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut compared = 0;
    for case in 0..300 {
        let q = rng.random_range(2..=5);
        let categories = cats(q);
        let raters = rng.random_range(2..=6);
        let items: Vec<(String, Vec<Option<String>>)> = (0..rng.random_range(1..=30))
            .map(|i| {
                let row = (0..raters).map(|_| rng.random_bool(0.8).then(|| categories[rng.random_range(0..q)].clone())).collect();
                (format!("item{i}"), row)
            })
            .collect();
        let m = RatingMatrix::new(categories, items).map_err(|e| e.to_string())?;
        match (kappa_by_pairs(&m), randolph_kappa_value(&m)) {
            (Some(expected), Ok(k)) => {
                ensure!((k - expected).abs() < 1e-9, "case {case}: kappa {k} but pair count gives {expected}");
                compared += 1;
            }
            (None, Err(_)) => {}
            (e, k) => return Err(format!("case {case}: oracle {e:?}, implementation {k:?}")),
        }
    }
    let summary = randolph_kappa(&third, &BootstrapConfig::default()).map_err(|e| e.to_string())?;
    ensure!(summary.ci.0 <= summary.kappa && summary.kappa <= summary.ci.1, "kappa {} outside its CI {:?}", summary.kappa, summary.ci);

    let bands = [(0.8, Agreement::Good), (0.8 + 1e-9, Agreement::VeryGood), (0.6, Agreement::BelowGood), (0.61, Agreement::Good), (1.0, Agreement::VeryGood)];
    for (k, expected) in bands {
        let got = classify_agreement(k).map_err(|e| e.to_string())?;
        ensure!(got == expected, "kappa {k} classified {got:?}, expected {expected:?}");
    }
    ensure!(classify_agreement(1.5).is_err(), "kappa 1.5 accepted");
    Ok(format!("worked cases exact, {compared} random matrices within 1e-9 of pair counting, thresholds 0.6/0.8 strict"))
}

fn bootstrap() -> Check {
    for (value, n) in [(1.0, 37), (0.0, 10), (0.25, 64)] {
        let s = bootstrap_mean(&vec![value; n], &BootstrapConfig::default()).map_err(|e| e.to_string())?;
        ensure!(s.value == value && s.ci == (value, value), "constant {value}: {} {:?}", s.value, s.ci);
    }
    let mut data = vec![1.0; 385];
    data.extend(vec![0.0; 35]);
    let s = bootstrap_mean(&data, &BootstrapConfig::default()).map_err(|e| e.to_string())?;
    ensure!((s.value - 385.0 / 420.0).abs() < 1e-12, "point estimate {}", s.value);
    ensure!((s.ci.0 - 0.890).abs() <= 0.01 && (s.ci.1 - 0.943).abs() <= 0.01, "385/420 interval {:?}", s.ci);

    let (trials, p) = (500, 0.3);
    let mut covered = 0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + t);
        let sample: Vec<f64> = (0..200).map(|_| f64::from(u8::from(rng.random_bool(p)))).collect();
        let cfg = BootstrapConfig { iterations: 2000, level: 0.95, seed: t };
        let s = bootstrap_mean(&sample, &cfg).map_err(|e| e.to_string())?;
        covered += usize::from(s.ci.0 <= p && p <= s.ci.1);
    }
    let coverage = covered as f64 / trials as f64;
    ensure!((0.92..=0.98).contains(&coverage), "coverage {coverage:.3} over {trials} trials");
    Ok(format!("degenerate samples exact, 385/420 -> [{:.3}, {:.3}], coverage {:.1}%", s.ci.0, s.ci.1, 100.0 * coverage))
}

fn pairwise_file(counts: [usize; 3]) -> RatingsFile {
    let mut labels: Vec<&str> = [("A", counts[0]), ("B", counts[1]), ("tie", counts[2])]
        .iter()
        .flat_map(|(l, n)| std::iter::repeat(*l).take(*n))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    labels.shuffle(&mut rng);
    let axes: Vec<AxisSpec> = export_axes(Design::Pairwise);
    let records = labels
        .iter()
        .enumerate()
        .map(|(i, l)| RatingRecord {
            task_id: format!("t{i}"),
            item_id: format!("item{i:04}"),
            rater_id: format!("r{}", i % 20),
            arm: None,
            values: axes
                .iter()
                .map(|a| (a.name.clone(), if a.name == "consensus" { l.to_string() } else { ["A", "B", "tie"][rng.random_range(0..3)].to_string() }))
                .collect(),
        })
        .collect();
    RatingsFile {
        format: RATINGS_FORMAT.into(),
        design: Design::Pairwise,
        study_id: "pairwise".into(),
        arms: vec!["model".into(), "physician".into()],
        axes,
        records,
        excluded: Vec::new(),
    }
}

fn pairwise_spec(id: &str, items: usize, raters_per_item: usize, seed: u64) -> StudySpec {
    StudySpec {
        id: id.into(),
        design: Design::Pairwise,
        arms: vec!["zeta-model-x91".into(), "physician-pool-q7".into()],
        raters_per_item,
        raters: (0..12).map(|i| format!("rater{i:02}")).collect(),
        seed,
        items: (0..items)
            .map(|i| StudyItem {
                id: format!("item{i:04}"),
                question: format!("Question {i}: how should this condition be managed?"),
                answers: [
                    ("zeta-model-x91".to_string(), format!("Generated answer {i} recommends rest.")),
                    ("physician-pool-q7".to_string(), format!("Clinician answer {i} recommends review.")),
                ]
                .into(),
            })
            .collect(),
        authorship: Some((0..items).map(|i| Authorship { item_id: format!("item{i:04}"), arm: "physician-pool-q7".into(), rater_id: format!("rater{:02}", i % 12) }).collect()),
    }
}

fn submission(design: Design, rng: &mut ChaCha8Rng) -> RatingSubmission {
    RatingSubmission {
        values: rater_axes(design).into_iter().map(|a| { let v = a.values[rng.random_range(0..a.values.len())].clone(); (a.name, v) }).collect(),
    }
}

fn pairwise_analysis() -> Check {
    let file = pairwise_file([729, 118, 153]);
    let cfg = AnalyzeConfig { iterations: 2000, level: 0.95, seed: 0, single_rating: None };
    let report = analyze(&file, &cfg).map_err(|e| e.to_string())?;
    let row = report.rows.iter().find(|r| r.axis == "consensus").ok_or("no consensus row")?;
    let got: Vec<(&str, Option<f64>)> = row.columns.iter().map(|c| (c.label.as_str(), c.value)).collect();
    let want = vec![("model", Some(0.729)), ("tie", Some(0.153)), ("physician", Some(0.118))];
    ensure!(got == want, "consensus columns {got:?}, expected {want:?}");
    ensure!(row.columns.iter().all(|c| c.n == 1000), "column sizes {:?}", row.columns.iter().map(|c| c.n).collect::<Vec<_>>());

    let mut excluded_counts = Vec::new();
    for unviewable in [8, 11] {
        let mut study = create_study(pairwise_spec(&format!("exclusions-{unviewable}"), 1066, 1, 5)).map_err(|e| e.to_string())?;
        let tasks = study.tasks().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(unviewable as u64);
        for (i, t) in tasks.iter().enumerate() {
            if i % 97 == 3 && i / 97 < unviewable {
                study.mark_unviewable(&t.task_id, &t.rater_id, "answer did not render").map_err(|e| e.to_string())?;
            } else {
                study.record_rating(&t.task_id, &t.rater_id, &submission(Design::Pairwise, &mut rng)).map_err(|e| e.to_string())?;
            }
        }
        let export = study.export();
        ensure!(export.excluded.len() == unviewable, "{} exclusions exported, expected {unviewable}", export.excluded.len());
        ensure!(export.records.len() == 1066 - unviewable, "{} records exported", export.records.len());
        let report = analyze(&export, &cfg).map_err(|e| e.to_string())?;
        ensure!(report.records == 1066 - unviewable && report.excluded == unviewable, "analysis saw {} records, {} excluded", report.records, report.excluded);
        for r in &report.rows {
            ensure!(r.columns.iter().all(|c| c.n == 1066 - unviewable), "axis {}: column sizes differ from {}", r.axis, 1066 - unviewable);
        }
        excluded_counts.push(format!("{}/{}", 1066 - unviewable, 1066));
    }
    Ok(format!("729/118/153 of 1000 -> 0.729/0.118/0.153; exclusions leave {}", excluded_counts.join(" and ")))
}

fn independent_spec() -> StudySpec {
    let arms = ["zeta-model-x91", "physician-pool-q7", "omega-model-k3"];
    StudySpec {
        id: "independent".into(),
        design: Design::Independent,
        arms: arms.iter().map(|a| a.to_string()).collect(),
        raters_per_item: 3,
        raters: (0..12).map(|i| format!("rater{i:02}")).collect(),
        seed: 9,
        items: (0..40)
            .map(|i| StudyItem {
                id: format!("item{i:04}"),
                question: format!("Question {i}: what causes this symptom?"),
                answers: arms.iter().enumerate().map(|(k, a)| (a.to_string(), format!("Answer {k} to question {i}."))).collect(),
            })
            .collect(),
        authorship: Some((0..40).map(|i| Authorship { item_id: format!("item{i:04}"), arm: arms[1].into(), rater_id: format!("rater{:02}", i % 12) }).collect()),
    }
}

fn study_service() -> Check {
    let mut payloads = 0;
    for spec in [independent_spec(), pairwise_spec("pairwise", 60, 2, 3)] {
        let authors: BTreeSet<(String, String, String)> =
            spec.authorship.iter().flatten().map(|a| (a.item_id.clone(), a.arm.clone(), a.rater_id.clone())).collect();
        let study = create_study(spec.clone()).map_err(|e| e.to_string())?;
        let expected_tasks = match spec.design {
            Design::Independent => spec.items.len() * spec.arms.len() * spec.raters_per_item,
            Design::Pairwise => spec.items.len() * spec.raters_per_item,
        };
        ensure!(study.tasks().len() == expected_tasks, "{}: {} tasks, expected {expected_tasks}", spec.id, study.tasks().len());
        let mut raters_per_unit: BTreeMap<(String, Vec<String>), BTreeSet<String>> = BTreeMap::new();
        for t in study.tasks() {
            let json = serde_json::to_string(&study.payload(t)).map_err(|e| e.to_string())?;
            for arm in &spec.arms {
                ensure!(!json.contains(arm.as_str()), "{}: payload of {} reveals arm {arm}", spec.id, t.task_id);
            }
            payloads += 1;
            for arm in &t.shown {
                ensure!(!authors.contains(&(t.item_id.clone(), arm.clone(), t.rater_id.clone())), "{}: {} rates their own answer", spec.id, t.rater_id);
            }
            let mut unit = t.shown.clone();
            unit.sort();
            raters_per_unit.entry((t.item_id.clone(), unit)).or_default().insert(t.rater_id.clone());
        }
        ensure!(
            raters_per_unit.values().all(|r| r.len() == spec.raters_per_item),
            "{}: some answer lacks {} distinct raters",
            spec.id,
            spec.raters_per_item
        );
    }

    let spec = pairwise_spec("pairwise", 60, 2, 3);
    let run = |spec: &StudySpec| -> Result<(RatingsFile, usize), String> {
        let service = StudyService::in_memory();
        service.create(spec.clone()).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut expected: BTreeMap<String, String> = BTreeMap::new();
        let mut served = 0;
        for rater in &spec.raters {
            while let Some(payload) = service.next_task(&spec.id, rater).map_err(|e| e.to_string())? {
                let json = serde_json::to_string(&payload).map_err(|e| e.to_string())?;
                ensure!(spec.arms.iter().all(|a| !json.contains(a.as_str())), "served payload reveals an arm");
                served += 1;
                let task = service.with_study(&spec.id, |s| s.task(&payload.task_id).cloned()).map_err(|e| e.to_string())?.map_err(|e| e.to_string())?;
                let choice = [FIRST, SECOND, TIE][rng.random_range(0..3)];
                let label = |arm: &str| if arm == spec.arms[0] { "A" } else { "B" };
                let resolved = match choice {
                    FIRST => label(&task.shown[0]),
                    SECOND => label(&task.shown[1]),
                    _ => "tie",
                };
                expected.insert(task.task_id.clone(), resolved.to_string());
                let sub = RatingSubmission { values: rater_axes(Design::Pairwise).into_iter().map(|a| (a.name, choice.to_string())).collect() };
                service.record_rating(&task.task_id, rater, &sub).map_err(|e| e.to_string())?;
            }
        }
        let export = service.export(&spec.id).map_err(|e| e.to_string())?;
        ensure!(export.records.len() == expected.len(), "{} records for {} ratings", export.records.len(), expected.len());
        for r in &export.records {
            let want = &expected[&r.task_id];
            ensure!(r.values.values().all(|v| v == want), "task {}: exported {:?}, expected {want}", r.task_id, r.values);
        }
        Ok((export, served))
    };
    let (export, served) = run(&spec)?;
    ensure!(served == 120, "served {served} tasks, expected 120");
    let (again, _) = run(&spec)?;
    ensure!(export.to_json() == again.to_json(), "identical studies export differently");
    let parsed: RatingsFile = serde_json::from_str(&export.to_json()).map_err(|e| e.to_string())?;
    parsed.validate().map_err(|e| e.to_string())?;
    ensure!(parsed == export, "export does not round-trip through JSON");
    let cfg = AnalyzeConfig { iterations: 1000, level: 0.95, seed: 1, single_rating: None };
    let a = analyze(&parsed, &cfg).map_err(|e| e.to_string())?;
    let b = analyze(&export, &cfg).map_err(|e| e.to_string())?;
    ensure!(a.to_json() == b.to_json(), "analysis differs after round trip");
    ensure!(a.rows.iter().any(|r| r.agreement.is_some()), "two raters per item but no agreement computed");
    Ok(format!("{payloads} payloads blind, rater constraints hold, {served} served ratings de-randomized, export deterministic"))
}
