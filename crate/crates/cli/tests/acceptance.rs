//! Acceptance run: one PASS or FAIL line per criterion, each with its
//! measured value, tolerance and a pinned time limit. Exits non-zero if any
//! criterion fails or overruns its limit.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tcfd_core::analysis::{AnalysisConfig, AnalysisStatus, FixedClock, Pipeline};
use tcfd_core::embedding::{EmbeddingVector, HashEmbedder};
use tcfd_core::gateway::{
    parse_answer_json, parse_conformity_json, serialize_answer, serialize_conformity, AnswerKind,
    CompletionParams, MockScript, ModelAnswer, ParseError, ScriptedBackend,
};
use tcfd_core::index::{ScoredChunk, VectorIndex};
use tcfd_core::ingestion::{chunk_document, chunks_to_jsonl, ChunkParams, Document, DocumentChunk};
use tcfd_core::prompting::{
    BasicInfo, GuidelineList, Prompter, QuestionCatalog, TemplateId, DEFAULT_ANSWER_LENGTH,
};
use tcfd_core::retrieval::{trim_to_budget, CharRatioEstimator, ContextWindow};
use tcfd_core::text::word_tokens;
use tcfd_core::traceability::{
    cohens_kappa, evaluation_run, lint_concatenation, read_jsonl, rouge_precision,
    AnnotationRecord, AnswerRecord, RougeVariant, DEFAULT_SEAM_WINDOW,
};

const SEED: u64 = 0x7cfd_2024;
const RATE_TOLERANCE: f64 = 0.01;
const SCORE_TOLERANCE: f64 = 0.005;
const KAPPA_TOLERANCE: f64 = 1e-9;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            name: "conformity aggregation",
            limit: secs(5),
            run: aggregation,
        },
        Criterion {
            name: "evaluation arithmetic",
            limit: secs(1),
            run: evaluation,
        },
        Criterion {
            name: "chunking",
            limit: secs(5),
            run: chunking,
        },
        Criterion {
            name: "retrieval",
            limit: secs(10),
            run: retrieval,
        },
        Criterion {
            name: "budget trimming",
            limit: secs(1),
            run: trimming,
        },
        Criterion {
            name: "rouge precision",
            limit: secs(5),
            run: rouge,
        },
        Criterion {
            name: "cohen's kappa",
            limit: secs(5),
            run: kappa,
        },
        Criterion {
            name: "prompt goldens",
            limit: secs(5),
            run: prompt_goldens,
        },
        Criterion {
            name: "reply parsing",
            limit: secs(5),
            run: parsing,
        },
        Criterion {
            name: "seam lint",
            limit: secs(5),
            run: seam_lint,
        },
        Criterion {
            name: "determinism",
            limit: secs(30),
            run: determinism,
        },
        Criterion {
            name: "service and cli integration",
            limit: secs(120),
            run: integration,
        },
    ];

    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let timing = format!(
            "{} ms, limit {} ms",
            elapsed.as_millis(),
            c.limit.as_millis()
        );
        let outcome = match outcome {
            Ok(detail) if elapsed > c.limit => Err(format!("{detail}; too slow")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:<28} {detail} ({timing})", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:<28} {why} ({timing})", c.name);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

// scripted analyses

fn report() -> Document {
    const TOPICS: [&str; 6] = [
        "The board oversees climate-related risks through its audit committee, which meets twice a year.",
        "Physical risks such as heat waves affect refrigerated warehouses in the south of the country.",
        "A 2 degree scenario and a 4 degree scenario were used to test the resilience of the store network.",
        "Climate risks are part of the group risk register and are reviewed with supply chain risks.",
        "Scope 1 and Scope 2 emissions fell by nine percent; Scope 3 covers purchased goods and logistics.",
        "The company targets net zero emissions by 2045 and links bonuses to refrigerant leakage rates.",
    ];
    let pages = (0..6).map(|p| {
        let mut text = String::new();
        if p == 0 {
            text.push_str("Company name: Alder & Finch Markets\nHeadquarters: Utrecht, Netherlands\nSector: Food Retail\n");
        }
        for s in 0..5 {
            text.push_str(&format!("Page {} part {}. {} ", p + 1, s + 1, TOPICS[(p * 2 + s) % TOPICS.len()]));
        }
        text
    });
    Document::from_pages(pages.collect::<Vec<_>>())
}

fn report_index() -> VectorIndex {
    let doc = report();
    let chunks = chunk_document(&doc, ChunkParams::default()).unwrap();
    VectorIndex::build(doc.doc_id.clone(), chunks, &HashEmbedder::new(256), 32).unwrap()
}

fn pipeline(script: MockScript, workers: usize) -> Pipeline {
    let clock = FixedClock(Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap());
    let config = AnalysisConfig {
        completion: CompletionParams {
            max_retries: 0,
            backoff_ms: 1,
            ..CompletionParams::default()
        },
        workers,
        ..AnalysisConfig::default()
    };
    Pipeline::new(
        Arc::new(HashEmbedder::new(256)),
        Arc::new(ScriptedBackend::with_extractive_fallback(script)),
    )
    .with_config(config)
    .with_clock(Arc::new(clock))
}

fn aggregation() -> Outcome {
    let rows: [(&str, [u8; 11], f64); 4] = [
        ("all zero", [0; 11], 0.00),
        ("mixed", [60, 60, 70, 60, 70, 50, 90, 70, 50, 75, 20], 61.36),
        ("low", [20, 40, 40, 60, 40, 40, 70, 60, 50, 70, 60], 50.00),
        ("high", [60, 60, 85, 90, 80, 60, 90, 85, 40, 70, 50], 70.00),
    ];
    let catalog = QuestionCatalog::builtin();
    let guidelines = GuidelineList::seed(&catalog);
    let index = report_index();
    let mut seen = Vec::new();
    for (name, scores, expected) in rows {
        let a = pipeline(MockScript::conformity_scores(&catalog, &scores), 4)
            .analyze_report(&index, &guidelines, &|_| {})
            .map_err(|e| format!("{name}: {e}"))?;
        ensure(a.status == AnalysisStatus::Complete, || {
            format!("{name}: {:?}", a.status)
        })?;
        let got: Vec<u8> = a.conformity.values().map(|c| c.score).collect();
        ensure(got == scores, || format!("{name}: scores {got:?}"))?;
        ensure(
            (a.average_score - expected).abs() <= SCORE_TOLERANCE,
            || format!("{name}: average {} expected {expected:.2}", a.average_score),
        )?;
        seen.push(format!("{name} {:.2}", a.average_score));
    }
    Ok(format!("{} (tolerance {SCORE_TOLERANCE})", seen.join(", ")))
}

fn determinism() -> Outcome {
    let catalog = QuestionCatalog::builtin();
    let guidelines = GuidelineList::seed(&catalog);
    let script =
        MockScript::conformity_scores(&catalog, &[10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 0]);
    let run = |workers| {
        pipeline(script.clone(), workers)
            .analyze_report(&report_index(), &guidelines, &|_| {})
            .unwrap()
            .to_json()
    };
    let serial = run(1);
    for round in 0..3 {
        ensure(run(4).as_bytes() == serial.as_bytes(), || {
            format!("parallel run {round} differs from the serial run")
        })?;
    }
    let doc = report();
    let a = chunks_to_jsonl(&chunk_document(&doc, ChunkParams::default()).unwrap());
    let b = chunks_to_jsonl(&chunk_document(&report(), ChunkParams::default()).unwrap());
    ensure(a == b, || "chunk output differs between runs".into())?;
    Ok(format!(
        "4 analyses identical to the serial run, {} bytes",
        serial.len()
    ))
}

// evaluation

fn evaluation() -> Outcome {
    let cases = [
        ("eval_qa", 110, 92, 69, 83.63, 75.00),
        ("eval_summarization", 110, 76, 55, 69.09, 72.37),
    ];
    let mut seen = Vec::new();
    for (dir, total, supported, honest, content, source) in cases {
        let read = |file: &str| std::fs::read_to_string(fixture(&format!("{dir}/{file}"))).unwrap();
        let answers: Vec<AnswerRecord> =
            read_jsonl(&read("answers.jsonl")).map_err(|e| format!("{e:?}"))?;
        let anns: Vec<AnnotationRecord> =
            read_jsonl(&read("annotations.jsonl")).map_err(|e| format!("{e:?}"))?;
        let s = evaluation_run(&answers, &anns, DEFAULT_SEAM_WINDOW).map_err(|e| e.to_string())?;
        ensure(
            (s.n_total, s.n_content_supported, s.n_source_honest) == (total, supported, honest),
            || {
                format!(
                    "{dir}: counts {} {} {}",
                    s.n_total, s.n_content_supported, s.n_source_honest
                )
            },
        )?;
        ensure(
            (s.content_free_rate - content).abs() <= RATE_TOLERANCE,
            || format!("{dir}: content rate {}", s.content_free_rate),
        )?;
        ensure(
            (s.source_free_rate_given_content - source).abs() <= RATE_TOLERANCE,
            || format!("{dir}: source rate {}", s.source_free_rate_given_content),
        )?;
        seen.push(format!(
            "{supported}/{honest} of {total}: {:.3}/{:.3}",
            s.content_free_rate, s.source_free_rate_given_content
        ));
    }
    Ok(format!("{} (tolerance {RATE_TOLERANCE})", seen.join(", ")))
}

// chunking

const CHAR_POOL: &[char] = &[
    'a',
    'q',
    'Z',
    '7',
    ' ',
    '.',
    ',',
    '\n',
    '\u{e9}',
    '\u{fc}',
    '\u{4e2d}',
    '\u{1f30d}',
];

fn random_text(rng: &mut StdRng, max: usize) -> String {
    let len = rng.gen_range(0..=max);
    (0..len).map(|_| *CHAR_POOL.choose(rng).unwrap()).collect()
}

/// Expected windows by stepping the start offset until one reaches the end.
fn walked_windows(len: usize, size: usize, overlap: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    if len == 0 {
        return out;
    }
    loop {
        out.push((start, (start + size).min(len)));
        if start + size >= len {
            break;
        }
        start += size - overlap;
    }
    out
}

fn check_chunks(pages: Vec<String>, size: usize, overlap: usize) -> Result<(), String> {
    let params = ChunkParams::new(size, overlap).map_err(|e| e.to_string())?;
    let doc = Document::from_pages(pages);
    let text: Vec<char> = doc.canonical_text().chars().collect();
    let chunks = chunk_document(&doc, params).map_err(|e| e.to_string())?;
    let got: Vec<(usize, usize)> = chunks.iter().map(|c| (c.char_start, c.char_end)).collect();
    let want = walked_windows(text.len(), size, overlap);
    ensure(got == want, || {
        format!("len {} size {size} overlap {overlap}: {got:?}", text.len())
    })?;
    let mut rebuilt = String::new();
    for (i, c) in chunks.iter().enumerate() {
        let expected: String = text[c.char_start..c.char_end].iter().collect();
        ensure(c.text == expected && c.source_number as usize == i, || {
            format!("chunk {i} text")
        })?;
        rebuilt.extend(c.text.chars().skip(if i == 0 { 0 } else { overlap }));
    }
    ensure(rebuilt == doc.canonical_text(), || {
        "reconstruction differs".into()
    })
}

fn chunking() -> Outcome {
    let letters =
        |n: usize| -> String { (0..n).map(|i| char::from(b'a' + (i % 26) as u8)).collect() };
    for (len, starts, last) in [(980, vec![0, 480], 500), (981, vec![0, 480, 960], 21)] {
        let chunks = chunk_document(
            &Document::from_pages([letters(len)]),
            ChunkParams::default(),
        )
        .map_err(|e| e.to_string())?;
        let got: Vec<usize> = chunks.iter().map(|c| c.char_start).collect();
        ensure(
            got == starts && chunks.last().unwrap().char_len() == last,
            || format!("{len} chars: starts {got:?}"),
        )?;
    }

    let mut rng = StdRng::seed_from_u64(SEED);
    let n = 1200;
    for _ in 0..n {
        let pages = (0..rng.gen_range(1..=3))
            .map(|_| random_text(&mut rng, 700))
            .collect();
        let (size, overlap) = if rng.gen_bool(0.5) {
            (500, 20)
        } else {
            let size = rng.gen_range(2..600);
            (size, rng.gen_range(0..size))
        };
        check_chunks(pages, size, overlap)?;
    }
    Ok(format!(
        "{n} random texts match the walked windows, 980/981 boundaries exact"
    ))
}

// retrieval

fn dot(a: &[i64], b: &[i64]) -> i128 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as i128) * (*y as i128))
        .sum()
}

/// Exact comparison of cos(q, a) and cos(q, b) in integers.
fn cmp_cos(q: &[i64], a: &[i64], b: &[i64]) -> Ordering {
    let (da, db) = (dot(q, a), dot(q, b));
    let (na, nb) = (dot(a, a), dot(b, b));
    match (da.signum(), db.signum()) {
        (x, y) if x != y => x.cmp(&y),
        (0, _) => Ordering::Equal,
        (s, _) => {
            let (lhs, rhs) = (da * da * nb, db * db * na);
            if s > 0 {
                lhs.cmp(&rhs)
            } else {
                rhs.cmp(&lhs)
            }
        }
    }
}

fn embedding(v: &[i64]) -> EmbeddingVector {
    EmbeddingVector::new(v.iter().map(|&x| x as f32).collect()).unwrap()
}

fn bare_chunk(source: u32, text: &str) -> DocumentChunk {
    DocumentChunk {
        source_number: source,
        page_number: 1,
        char_start: 0,
        char_end: text.chars().count(),
        text: text.into(),
    }
}

/// Up to 100 small integer vectors. Some repeat verbatim to force ties;
/// distinct vectors with an exactly equal cosine are skipped so every tie is
/// also exact in floating point.
fn random_index(rng: &mut StdRng) -> (Vec<i64>, Vec<Vec<i64>>) {
    let dim = rng.gen_range(2..=6);
    let vector = |rng: &mut StdRng| -> Vec<i64> {
        loop {
            let v: Vec<i64> = (0..dim).map(|_| rng.gen_range(-3..=3)).collect();
            if v.iter().any(|x| *x != 0) {
                return v;
            }
        }
    };
    let q = vector(rng);
    let mut vectors: Vec<Vec<i64>> = Vec::new();
    for _ in 0..rng.gen_range(1..=100) {
        let candidate = if !vectors.is_empty() && rng.gen_bool(0.3) {
            vectors.choose(rng).unwrap().clone()
        } else {
            vector(rng)
        };
        let clash = vectors
            .iter()
            .any(|w| *w != candidate && cmp_cos(&q, w, &candidate) == Ordering::Equal);
        if !clash {
            vectors.push(candidate);
        }
    }
    (q, vectors)
}

fn retrieval() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED + 1);
    let n = 250;
    let mut ties = 0;
    for case in 0..n {
        let (q, vectors) = random_index(&mut rng);
        let index = VectorIndex::from_parts(
            "doc",
            vectors
                .iter()
                .enumerate()
                .map(|(i, v)| (bare_chunk(i as u32, "x"), embedding(v))),
        )
        .map_err(|e| e.to_string())?;
        let distinct: BTreeSet<&Vec<i64>> = vectors.iter().collect();
        ties += usize::from(distinct.len() < vectors.len());

        let mut order: Vec<u32> = (0..vectors.len() as u32).collect();
        order.sort_by(|&x, &y| {
            cmp_cos(&q, &vectors[y as usize], &vectors[x as usize]).then(x.cmp(&y))
        });
        let query = embedding(&q);
        let k = rng.gen_range(0..=120);
        let got: Vec<u32> = index
            .top_k(&query, k)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|s| s.chunk.source_number)
            .collect();
        let want = &order[..k.min(order.len())];
        ensure(got == want, || {
            format!("case {case}: got {got:?} want {want:?}")
        })?;

        let k1 = rng.gen_range(0..=100);
        let small = index.top_k(&query, k1).map_err(|e| e.to_string())?;
        let large = index
            .top_k(&query, k1 + rng.gen_range(0..50))
            .map_err(|e| e.to_string())?;
        ensure(large[..small.len()] == small[..], || {
            format!("case {case}: prefix broken")
        })?;
    }
    ensure(ties > 0, || "no case exercised ties".into())?;
    Ok(format!(
        "{n} indexes match the exact oracle, {ties} with ties, prefix holds"
    ))
}

// trimming

fn trimming() -> Outcome {
    // each entry formats to 100 characters (99 for the first), 25 tokens
    let ranked: Vec<ScoredChunk> = (0..10u32)
        .map(|s| ScoredChunk {
            chunk: bare_chunk(s, &"w".repeat(79)),
            score: 1.0 - s as f64 / 10.0,
        })
        .collect();
    let overhead = 100;
    for m in [0usize, 1, 3, 9] {
        let budget = overhead + 25 * (10 - m);
        let w = trim_to_budget(ranked.clone(), overhead, budget, &CharRatioEstimator);
        ensure(w.entries[..] == ranked[..10 - m] && !w.over_budget, || {
            format!("m = {m}: kept {:?}", w.sources())
        })?;
    }
    let w = trim_to_budget(ranked.clone(), overhead, 10, &CharRatioEstimator);
    ensure(w.sources() == vec![0] && w.over_budget, || {
        "over-budget single chunk".into()
    })?;
    Ok("m in {0, 1, 3, 9} removes exactly m tail entries".into())
}

// rouge

fn ngram_oracle(cand: &[String], reference: &[String], n: usize) -> f64 {
    let n = n.min(cand.len());
    let mut pool: Vec<&[String]> = reference.windows(n).collect();
    let grams: Vec<&[String]> = cand.windows(n).collect();
    let mut hits = 0;
    for g in &grams {
        if let Some(i) = pool.iter().position(|p| p == g) {
            pool.swap_remove(i);
            hits += 1;
        }
    }
    hits as f64 / grams.len() as f64
}

fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            table[i][j] = if a[i] == b[j] {
                1 + table[i + 1][j + 1]
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    table[0][0]
}

fn random_words(rng: &mut StdRng, max: usize) -> String {
    const VOCAB: [&str; 6] = ["a", "b", "c", "d", "risk", "climate"];
    let n = rng.gen_range(1..=max);
    (0..n)
        .map(|_| *VOCAB.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn rouge() -> Outcome {
    const VARIANTS: [RougeVariant; 3] = [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL];
    let r = |c: &str, r: &str, v| rouge_precision(c, r, v).map_err(|e| e.to_string());
    for text in ["a b c", "The board meets twice a year.", "net zero by 2045"] {
        for v in VARIANTS {
            ensure(r(text, text, v)? == 1.0, || {
                format!("identity {v:?} on {text:?}")
            })?;
        }
    }
    let hand = [
        r("a b c", "a x c", RougeVariant::R1)?,
        r("a b c", "a x c", RougeVariant::R2)?,
        r("a b c", "a x c", RougeVariant::RL)?,
    ];
    ensure(hand == [2.0 / 3.0, 0.0, 2.0 / 3.0], || {
        format!("a b c vs a x c gave {hand:?}")
    })?;

    let mut rng = StdRng::seed_from_u64(SEED + 2);
    let n = 500;
    for _ in 0..n {
        let cand = random_words(&mut rng, 12);
        let reference = random_words(&mut rng, 20);
        let longer = format!("{reference} {}", random_words(&mut rng, 10));
        let (c, t) = (word_tokens(&cand), word_tokens(&reference));
        let oracle = [
            ngram_oracle(&c, &t, 1),
            ngram_oracle(&c, &t, 2),
            lcs_oracle(&c, &t) as f64 / c.len() as f64,
        ];
        for (v, want) in VARIANTS.into_iter().zip(oracle) {
            let base = r(&cand, &reference, v)?;
            let more = r(&cand, &longer, v)?;
            ensure((base - want).abs() < 1e-12, || {
                format!("{v:?} {cand:?} vs {reference:?}: {base} != {want}")
            })?;
            ensure(more >= base && (0.0..=1.0).contains(&base), || {
                format!("{v:?} not monotone on {cand:?}: {more} < {base}")
            })?;
        }
    }
    Ok(format!(
        "identity 1.0, hand values 2/3 0 2/3, {n} monotone pairs"
    ))
}

// kappa

fn kappa() -> Outcome {
    let a = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
    let b = [1, 1, 1, 1, 0, 1, 1, 0, 0, 0];
    let k = cohens_kappa(&a, &b).map_err(|e| e.to_string())?;
    ensure((k - 0.4).abs() < KAPPA_TOLERANCE, || {
        format!("hand case gave {k}")
    })?;

    let mut rng = StdRng::seed_from_u64(SEED + 3);
    let n = 500;
    for case in 0..n {
        let len = rng.gen_range(1..60);
        let x: Vec<u8> = (0..len).map(|_| rng.gen_range(0..4)).collect();
        let y: Vec<u8> = (0..len).map(|_| rng.gen_range(0..4)).collect();
        let mut perm = [0u8, 1, 2, 3];
        perm.shuffle(&mut rng);
        let relabel = |v: &[u8]| v.iter().map(|&l| perm[l as usize]).collect::<Vec<_>>();
        let k = cohens_kappa(&x, &y).map_err(|e| e.to_string())?;
        let swapped = cohens_kappa(&y, &x).map_err(|e| e.to_string())?;
        let renamed = cohens_kappa(&relabel(&x), &relabel(&y)).map_err(|e| e.to_string())?;
        ensure(k == swapped && k == renamed, || {
            format!("case {case}: {k} {swapped} {renamed}")
        })?;
    }
    Ok(format!(
        "0.4 within {KAPPA_TOLERANCE:e}, {n} pairs symmetric and relabel invariant"
    ))
}

// prompts

fn prompt_goldens() -> Outcome {
    const SOURCE_215: &str = "Preliminary Scenario Analysis: The process of screening for climate-related risks and opportunities across operations and business units informed our preliminary scenario analysis activities. We conducted an initial climate scenario analysis in 2021, with third-party support, to identify and analyze the various climate-related risks faced by 10 of Assurant's critical and/or highly vulnerable facilities across the globe.";
    const SOURCE_166: &str = "Assurant's longer-term strategic planning process, overseen by our Board, prioritized climate as a multi-year ESG area of focus.";
    const OLD_RESPONSE: &str = "{\"ANSWER\": \"Assurant conducted a preliminary scenario analysis in 2021.\", \"SOURCES\": [215]}";
    const FEEDBACK: &str = "This answer includes some cheap talks in the report.";

    let entry = |source, page, text: &str| ScoredChunk {
        chunk: DocumentChunk {
            page_number: page,
            ..bare_chunk(source, text)
        },
        score: 0.5,
    };
    let ctx = ContextWindow::from_entries(
        vec![entry(215, 41, SOURCE_215), entry(166, 33, SOURCE_166)],
        0,
        &CharRatioEstimator,
    );
    let catalog = QuestionCatalog::builtin();
    let g = GuidelineList::seed(&catalog);
    let p = Prompter::default();
    let info = BasicInfo::new("Assurant", "New York, United States", "Insurance");
    let q5 = catalog.question(5).unwrap();
    let len = DEFAULT_ANSWER_LENGTH;
    let err = |e: &dyn std::fmt::Display| e.to_string();

    let qa = p
        .render_qa_prompt(&info, q5, &ctx, &g, len)
        .map_err(|e| err(&e))?
        .text;
    let rendered = [
        (
            TemplateId::Summarization,
            p.render_summarization_prompt(&info, q5, &ctx, &g, len)
                .map_err(|e| err(&e))?
                .text,
        ),
        (
            TemplateId::Conformity,
            p.render_conformity_prompt_for_context(q5, &q5.requirements, &ctx)
                .map_err(|e| err(&e))?
                .text,
        ),
        (
            TemplateId::Cqa,
            p.render_cqa_prompt(
                &info,
                "In which technologies will the company invest in the next few years?",
                &ctx,
                &g,
                &catalog.cqa_guideline,
                len,
            )
            .map_err(|e| err(&e))?
            .text,
        ),
        (
            TemplateId::PromptEngineering,
            p.render_prompt_engineering_prompt(
                &qa,
                &g,
                g.specific_for(5),
                OLD_RESPONSE,
                FEEDBACK,
                len,
            )
            .map_err(|e| err(&e))?
            .text,
        ),
        (TemplateId::Qa, qa),
    ];
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/snapshots");
    let mut names = Vec::new();
    for (id, text) in rendered {
        let path = dir.join(format!("{id}.txt"));
        let frozen =
            std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure(frozen == text, || format!("{id} differs from its snapshot"))?;
        names.push(id.to_string());
    }
    names.sort();
    Ok(format!("{} byte-identical to snapshots", names.join(", ")))
}

// parsing

type Expect = fn(&ParseError) -> bool;

fn parsing() -> Outcome {
    let valid: BTreeSet<u32> = (0..400).collect();

    let well = parse_answer_json(
        r#"{"ANSWER": "Shell invests in CCS.", "SOURCES": [24, 33, 3, 25]}"#,
        &valid,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        well.citation_order == [24, 33, 3, 25] && well.cited_sources == [3, 24, 25, 33],
        || format!("well-formed answer {:?}", well.citation_order),
    )?;
    let c = parse_conformity_json(r#"{"ANALYSIS": "Partly met.", "SCORE": 61}"#, 2)
        .map_err(|e| e.to_string())?;
    ensure(c.score == 61, || "well-formed conformity".into())?;

    let fenced = parse_answer_json(
        "```json\n{\"ANSWER\": \"x y\", \"SOURCES\": [215]}\n```",
        &valid,
    )
    .map_err(|e| e.to_string())?;
    let prose = parse_conformity_json(
        "Here you go: {\"ANALYSIS\": \"ok {fine}\", \"SCORE\": 40} Thanks.",
        1,
    )
    .map_err(|e| e.to_string())?;
    ensure(fenced.cited_sources == [215] && prose.score == 40, || {
        "repairable replies".into()
    })?;

    let malformed: [(&str, Expect); 4] = [
        ("I cannot answer that.", |e| {
            matches!(e, ParseError::MalformedOutput(_))
        }),
        (
            r#"{"SOURCES": [1]}"#,
            |e| matches!(e, ParseError::MissingKey(k) if k == "ANSWER"),
        ),
        (
            r#"{"ANSWER": "x"}"#,
            |e| matches!(e, ParseError::MissingKey(k) if k == "SOURCES"),
        ),
        ("{\"ANSWER\": \"unterminated", |e| {
            matches!(e, ParseError::MalformedOutput(_))
        }),
    ];
    for (raw, expected) in malformed {
        match parse_answer_json(raw, &valid) {
            Err(e) if expected(&e) => {}
            other => return Err(format!("{raw:?} gave {other:?}")),
        }
    }
    ensure(
        parse_conformity_json(r#"{"ANALYSIS": "a", "SCORE": 101}"#, 1)
            == Err(ParseError::ScoreOutOfRange(101)),
        || "score 101 accepted".into(),
    )?;

    let mut rng = StdRng::seed_from_u64(SEED + 4);
    let pool: Vec<char> = (' '..='~').chain(['\u{e9}', '\u{b0}', '\n']).collect();
    let n = 200;
    for case in 0..n {
        let text = loop {
            let len = rng.gen_range(1..=120);
            let s: String = (0..len).map(|_| *pool.choose(&mut rng).unwrap()).collect();
            let s = s.trim().to_string();
            if !s.is_empty() {
                break s;
            }
        };
        let mut order: Vec<u32> = (0..400).collect();
        order.shuffle(&mut rng);
        order.truncate(rng.gen_range(0..12));
        let mut sorted = order.clone();
        sorted.sort_unstable();
        let a = ModelAnswer {
            answer_text: text.clone(),
            cited_sources: sorted,
            citation_order: order,
            invalid_citations: vec![],
            kind: if rng.gen_bool(0.5) {
                AnswerKind::Summary
            } else {
                AnswerKind::Answer
            },
            raw: String::new(),
        };
        let raw = serialize_answer(&a);
        for wrapped in [raw.clone(), format!("```json\n{raw}\n```")] {
            let back =
                parse_answer_json(&wrapped, &valid).map_err(|e| format!("case {case}: {e}"))?;
            ensure(
                ModelAnswer {
                    raw: String::new(),
                    ..back
                } == a,
                || format!("case {case}: answer changed"),
            )?;
        }
        let raw = json!({"ANALYSIS": text, "SCORE": case % 101}).to_string();
        let c = parse_conformity_json(&raw, 1).map_err(|e| format!("case {case}: {e}"))?;
        ensure(serialize_conformity(&c) == raw, || {
            format!("case {case}: conformity changed")
        })?;
    }
    Ok(format!(
        "well-formed, repairable and malformed replies classified; {n} payloads round trip"
    ))
}

// lint

fn seam_lint() -> Outcome {
    let c174 = DocumentChunk {
        page_number: 30,
        ..bare_chunk(
            174,
            "... Assurant may incur additional costs associated with tracking",
        )
    };
    let c186 = DocumentChunk {
        page_number: 32,
        ..bare_chunk(
            186,
            "climate hazards. Own Operations: In addition to those noted in ...",
        )
    };
    let answer = "... Risks include additional costs associated with tracking climate hazards, declining property values due to sea-level rise...";
    let w = lint_concatenation(answer, &[c174, c186], DEFAULT_SEAM_WINDOW);
    ensure(
        w.len() == 1 && (w[0].first_source, w[0].second_source) == (174, 186),
        || format!("seam case gave {w:?}"),
    )?;

    let mut rng = StdRng::seed_from_u64(SEED + 5);
    let n = 300;
    let word = |rng: &mut StdRng| -> String {
        (0..rng.gen_range(1..=8))
            .map(|_| char::from(rng.gen_range(b'a'..=b'z')))
            .collect()
    };
    for case in 0..n {
        let body: Vec<String> = (0..rng.gen_range(8..60)).map(|_| word(&mut rng)).collect();
        let from = rng.gen_range(0..body.len());
        let to = (from + rng.gen_range(1..40)).min(body.len());
        let answer = body[from..to].join(" ");
        let mut chunks = vec![bare_chunk(0, &body.join(" "))];
        for s in 1..=rng.gen_range(0..4u32) {
            let other: Vec<String> = (0..rng.gen_range(1..30)).map(|_| word(&mut rng)).collect();
            chunks.push(bare_chunk(s, &other.join(" ")));
        }
        let w = lint_concatenation(&answer, &chunks, DEFAULT_SEAM_WINDOW);
        ensure(w.is_empty(), || {
            format!("case {case}: verbatim answer flagged {w:?}")
        })?;
    }
    Ok(format!(
        "seam 174/186 flagged once, {n} verbatim answers clean"
    ))
}

// service and command line

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn tcfd(ws: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tcfd"));
    c.env_clear()
        .env("TCFD_MOCK_SCRIPT", fixture("mixed_scores.json"))
        .arg("--workspace")
        .arg(ws);
    c
}

fn wait_job(client: &reqwest::blocking::Client, base: &str, id: &str) -> Result<Value, String> {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let job: Value = client
            .get(format!("{base}/jobs/{id}"))
            .send()
            .and_then(|r| r.json())
            .map_err(|e| e.to_string())?;
        if !matches!(job["state"].as_str(), Some("queued" | "running")) {
            return Ok(job);
        }
        ensure(Instant::now() < deadline, || format!("job {id} stuck"))?;
        std::thread::sleep(Duration::from_millis(20));
    }
}

fn integration() -> Outcome {
    let ws = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut child = tcfd(ws.path())
        .args(["serve", "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let stdout = child.stdout.take().unwrap();
    let server = Server(child);
    let mut banner = String::new();
    BufReader::new(stdout)
        .read_line(&mut banner)
        .map_err(|e| e.to_string())?;
    let base = banner
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| format!("banner {banner:?}"))?
        .to_string();
    ensure(base.starts_with("http://127.0.0.1:"), || {
        format!("not loopback: {base}")
    })?;
    let client = reqwest::blocking::Client::new();
    let http = |e: reqwest::Error| e.to_string();

    let report = std::fs::read(fixture("sample_report.txt")).map_err(|e| e.to_string())?;
    let accepted: Value = client
        .post(format!("{base}/reports?name=sample_report.txt"))
        .header("content-type", "text/plain")
        .body(report)
        .send()
        .and_then(|r| r.json())
        .map_err(http)?;
    let doc_id = accepted["doc_id"].as_str().ok_or("no doc_id")?.to_string();
    let job = wait_job(
        &client,
        &base,
        accepted["job_id"].as_str().ok_or("no job_id")?,
    )?;
    ensure(job["state"] == "complete", || format!("upload job {job}"))?;

    let job: Value = client
        .post(format!("{base}/reports/{doc_id}/analyze"))
        .send()
        .and_then(|r| r.json())
        .map_err(http)?;
    let job = wait_job(&client, &base, job["job_id"].as_str().ok_or("no job_id")?)?;
    ensure(job["state"] == "complete", || format!("analyze job {job}"))?;
    let analysis: Value = client
        .get(format!("{base}/reports/{doc_id}/analysis"))
        .send()
        .and_then(|r| r.json())
        .map_err(http)?;
    let average = analysis["average_score"].as_f64().ok_or("no average")?;
    ensure((average - 61.36).abs() <= SCORE_TOLERANCE, || {
        format!("service average {average}")
    })?;

    let res = client
        .post(format!("{base}/reports/{doc_id}/questions"))
        .json(&json!({"question": "Which investments are planned?"}))
        .send()
        .map_err(http)?;
    ensure(res.status().as_u16() == 200, || {
        format!("ask status {}", res.status())
    })?;
    drop(server);

    let out = tcfd(ws.path())
        .args(["ask", &doc_id, "How is the board involved?"])
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    ensure(out.status.success() && text.contains("Pages: "), || {
        format!("cli ask: {text}")
    })?;
    let out = tcfd(ws.path())
        .args(["analyze", &doc_id])
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    ensure(text.contains("Average: 61.36"), || {
        format!("cli analyze: {text}")
    })?;
    let out = tcfd(ws.path())
        .arg("evaluate")
        .arg(fixture("eval_qa/answers.jsonl"))
        .arg(fixture("eval_qa/annotations.jsonl"))
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    ensure(text.starts_with("Content: 83.63% Source: 75.00%\n"), || {
        format!("cli evaluate: {text}")
    })?;
    let out = tcfd(ws.path())
        .arg("check")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.code() == Some(0), || {
        "workspace check failed".into()
    })?;

    let answers: BTreeMap<String, Value> =
        serde_json::from_value(analysis["answers"].clone()).map_err(|e| e.to_string())?;
    Ok(format!(
        "upload, analyze ({} answers, {average:.2}), ask, evaluate over loopback only",
        answers.len()
    ))
}
