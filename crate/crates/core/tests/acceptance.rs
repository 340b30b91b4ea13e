//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cypher_funnel::confidence::{offline_filter, online_simulate, token_confidence};
use cypher_funnel::eval::{aggregate, evaluate_question, rouge_l, OutcomeClass};
use cypher_funnel::executor::MicroBackend;
use cypher_funnel::pipeline::{run_pipeline, RunReport, Stage};
use cypher_funnel::schema::{extract_usages, schema_validate, SchemaCheck};
use cypher_funnel::synth::{default_gold_pool, fixture_schema, generate_default, mutate, MutationKind, SynthConfig};
use cypher_funnel::syntax::parse;
use cypher_funnel::trace::{GrammarVariant, InferenceMode, PipelineConfig, VoteMode};

const VALID: &str = include_str!("data/valid_queries.txt");
const INVALID: &str = include_str!("data/invalid_queries.txt");

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn lines(s: &str) -> Vec<&str> {
    s.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect()
}

/// Longest common subsequence by enumerating every subsequence of the shorter side.
fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<u8> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| short[i]).collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = long.iter();
        if sub.iter().all(|c| it.any(|x| x == c)) {
            best = sub.len();
        }
    }
    best
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            let n = rng.gen_range(0..=12);
            (0..n).map(|_| rng.gen_range(0..4)).collect()
        };
        let (p, r) = (draw(&mut rng), draw(&mut rng));
        let lcs = brute_lcs(&p, &r) as f64;
        let expected = if lcs == 0.0 {
            0.0
        } else {
            let (prec, rec) = (lcs / p.len() as f64, lcs / r.len() as f64);
            2.0 * prec * rec / (prec + rec)
        };
        let got = rouge_l(&p, &r);
        ensure((got - expected).abs() <= 1e-12, || format!("case {case}: {p:?} vs {r:?}: {got} != {expected}"))?;
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("1000 pairs agree with the oracle in {:?}", start.elapsed()))
}

fn criterion_2() -> Check {
    for k in 1..=64usize {
        let lp = -(k as f64).ln();
        let c = token_confidence(&vec![lp; k]).map_err(|e| e.to_string())?;
        ensure((c - (k as f64).ln()).abs() <= 1e-12, || format!("k={k}: {c}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for set in 0..100 {
        let n = rng.gen_range(1..12);
        let window = rng.gen_range(1..6);
        let traces: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..rng.gen_range(1..20)).map(|_| rng.gen_range(0.0..5.0)).collect())
            .collect();
        let (a, b): (f64, f64) = (rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0));
        let (s1, s2) = (a.min(b), a.max(b));
        let survivors = |s: f64| -> BTreeSet<usize> {
            (0..n)
                .filter(|&i| online_simulate(&traces[i], window, s).unwrap().is_kept())
                .collect()
        };
        ensure(survivors(s2).is_subset(&survivors(s1)), || format!("set {set}: threshold {s1} <= {s2}"))?;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let (e1, e2) = {
            let (x, y): (f64, f64) = (rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0));
            (x.min(y), x.max(y))
        };
        let small: BTreeSet<usize> = offline_filter(&scores, e1).into_iter().collect();
        let large: BTreeSet<usize> = offline_filter(&scores, e2).into_iter().collect();
        ensure(small.is_subset(&large), || format!("set {set}: keep ratio {e1} <= {e2}"))?;
    }
    Ok("ln k exact for k=1..64; survivor sets nested on 100 random sets".into())
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let (valid, invalid) = (lines(VALID), lines(INVALID));
    ensure(valid.len() >= 30 && invalid.len() >= 30, || "corpus too small".into())?;
    ensure(invalid.contains(&"RETURN RETURN 1"), || "missing RETURN RETURN".into())?;
    for q in &valid {
        parse(q).map_err(|d| format!("valid query rejected: {q}: {d}"))?;
    }
    for q in &invalid {
        match parse(q) {
            Ok(_) => return Err(format!("invalid query accepted: {q}")),
            Err(d) => ensure(d.position.offset <= q.len() && d.position.line >= 1 && d.position.column >= 1, || {
                format!("diagnostic outside the text: {q}: {d}")
            })?,
        }
    }
    within(start, Duration::from_secs(1))?;
    Ok(format!("{} valid accepted, {} invalid rejected with positions", valid.len(), invalid.len()))
}

fn verdict(text: &str) -> Result<bool, String> {
    let q = parse(text).map_err(|d| format!("{text}: {d}"))?;
    Ok(schema_validate(&extract_usages(&q), &fixture_schema(), SchemaCheck::default()).accepted)
}

fn criterion_4() -> Check {
    let schema = fixture_schema();
    let golds = default_gold_pool();
    let mut flips = 0;
    for g in &golds {
        ensure(verdict(g)?, || format!("gold rejected: {g}"))?;
        let undirected = g.replace("<-", "-").replace("->", "-");
        ensure(verdict(&undirected)?, || format!("undirected rewrite rejected: {undirected}"))?;
        if !g.contains("->") && !g.contains("<-") {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let m = mutate(g, MutationKind::FlipDirection, &schema, &mut rng);
            ensure(m.applied == MutationKind::FlipDirection, || format!("flip not applicable to {g}"))?;
            ensure(!verdict(&m.text)?, || format!("flip accepted: {}", m.text))?;
            flips += 1;
        }
    }
    let mut mirrored = 0;
    for q in lines(VALID).into_iter().chain(golds.iter().map(String::as_str)) {
        let ast = parse(q).map_err(|d| d.to_string())?;
        let flipped = ast.mirrored().to_string();
        ensure(verdict(&ast.to_string())? == verdict(&flipped)?, || format!("mirror changes verdict: {q}"))?;
        mirrored += 1;
    }
    Ok(format!("{flips} flip mutants rejected; golds and undirected rewrites accepted; {mirrored} mirror pairs agree"))
}

fn funnel_config(mode: InferenceMode, grammar: GrammarVariant, schema_filter: bool) -> PipelineConfig {
    PipelineConfig {
        inference_mode: mode,
        grammar_variant: grammar,
        schema_filter,
        seed: 42,
        ..PipelineConfig::default()
    }
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let cfg = SynthConfig {
        seed: 42,
        n_questions: 50,
        n_traces: 16,
        p_syntax_error: 0.4,
        p_direction_error: 0.3,
        confidence_gap: 1.0,
        ..SynthConfig::default()
    };
    let mut summary = Vec::new();
    pool.install(|| -> Result<(), String> {
        let data = generate_default(&cfg).map_err(|e| e.to_string())?;
        let backend = MicroBackend::fixture();
        for mode in [InferenceMode::Offline, InferenceMode::Online] {
            let run = |g, s| run_pipeline(&data, None, &funnel_config(mode, g, s), &backend).map_err(|e| e.to_string());
            let conf = run(GrammarVariant::None, false)?;
            let gram = run(GrammarVariant::Formal, false)?;
            let full = run(GrammarVariant::Formal, true)?;
            let (c, g, f) = (&conf.eval.aggregates, &gram.eval.aggregates, &full.eval.aggregates);
            ensure(c.counts.syntax_error > g.counts.syntax_error, || {
                format!("{mode}: syntax errors {} vs {}", c.counts.syntax_error, g.counts.syntax_error)
            })?;
            for row in gram.eval.rows.iter().chain(&full.eval.rows) {
                if row.outcome_class == OutcomeClass::SyntaxError {
                    let p = row.prediction.as_deref().unwrap_or_default();
                    ensure(parse(p).is_ok(), || format!("{mode}: formal run predicted unparseable {p}"))?;
                }
            }
            ensure(c.counts.empty <= g.counts.empty && g.counts.empty <= f.counts.empty, || {
                format!("{mode}: empties {} {} {}", c.counts.empty, g.counts.empty, f.counts.empty)
            })?;
            ensure(f.mean_rouge_l_exec >= g.mean_rouge_l_exec, || {
                format!("{mode}: exec rouge {} < {}", f.mean_rouge_l_exec, g.mean_rouge_l_exec)
            })?;
            summary.push(format!(
                "{mode}: syn {}->{}, empty {}/{}/{}, exec {:.3}->{:.3}",
                c.counts.syntax_error,
                g.counts.syntax_error,
                c.counts.empty,
                g.counts.empty,
                f.counts.empty,
                g.mean_rouge_l_exec,
                f.mean_rouge_l_exec
            ));
        }
        Ok(())
    })?;
    within(start, Duration::from_secs(60))?;
    Ok(summary.join("; "))
}

fn check_report(report: &RunReport, n_traces: &[usize]) -> Result<(), String> {
    for (q, &n) in report.questions.iter().zip(n_traces) {
        ensure(q.stage_counts.is_non_increasing(), || format!("{}: {:?}", q.question_id, q.stage_counts))?;
        ensure(q.funnel.len() == n, || format!("{}: funnel has {} of {n} traces", q.question_id, q.funnel.len()))?;
        let ids: BTreeSet<&str> = q.funnel.iter().map(|f| f.trace_id.as_str()).collect();
        ensure(ids.len() == n, || format!("{}: duplicate trace in funnel", q.question_id))?;
        let survived = q.funnel.iter().filter(|f| f.removed_at == Stage::Survived).count();
        ensure(survived == q.stage_counts.schema, || format!("{}: survivor count mismatch", q.question_id))?;
    }
    Ok(())
}

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let backend = MicroBackend::fixture();
    let modes = [InferenceMode::Base, InferenceMode::Offline, InferenceMode::Online];
    let variants = [GrammarVariant::None, GrammarVariant::Naive, GrammarVariant::Formal];
    for case in 0..1000 {
        let ps: f64 = rng.gen_range(0.0..0.6);
        let pd: f64 = rng.gen_range(0.0..0.3);
        let synth = SynthConfig {
            n_questions: rng.gen_range(1..4),
            n_traces: rng.gen_range(2..10),
            p_syntax_error: ps,
            p_direction_error: pd,
            p_label_error: rng.gen_range(0.0..(1.0 - ps - pd)),
            confidence_gap: rng.gen_range(0.0..2.0),
            p_format_noise: rng.gen_range(0.0..1.0),
            seed: rng.gen(),
        };
        let data = generate_default(&synth).map_err(|e| e.to_string())?;
        let config = PipelineConfig {
            inference_mode: modes[rng.gen_range(0..3)],
            grammar_variant: variants[rng.gen_range(0..3)],
            schema_filter: rng.gen_bool(0.5),
            keep_ratio: rng.gen_range(0.05..=1.0),
            window: rng.gen_range(1..40),
            vote_mode: if rng.gen_bool(0.5) { VoteMode::Majority } else { VoteMode::ConfidenceWeighted },
            seed: rng.gen(),
            ..PipelineConfig::default()
        };
        let first = run_pipeline(&data, None, &config, &backend).map_err(|e| format!("case {case}: {e}"))?;
        let second = run_pipeline(&data, None, &config, &backend).map_err(|e| format!("case {case}: {e}"))?;
        let n_traces: Vec<usize> = data.iter().map(|r| r.traces.len()).collect();
        check_report(&first, &n_traces).map_err(|e| format!("case {case}: {e}"))?;
        ensure(first.to_json() == second.to_json(), || format!("case {case}: reports differ"))?;
    }
    Ok("1000 random runs: stage counts non-increasing, reports byte-identical".into())
}

fn criterion_7() -> Check {
    let b = MicroBackend::fixture();
    let golds = default_gold_pool();
    let mut rows = Vec::new();
    for (i, g) in golds.iter().take(7).enumerate() {
        rows.push(evaluate_question(&format!("s{i}"), Some(g), g, &b).map_err(|e| e.message)?);
    }
    let g = &golds[0];
    rows.push(evaluate_question("run", Some("MATCH (n) DETACH DELETE n"), g, &b).map_err(|e| e.message)?);
    rows.push(evaluate_question("syn", Some("MATCH (n RETURN n"), g, &b).map_err(|e| e.message)?);
    rows.push(evaluate_question("empty", None, g, &b).map_err(|e| e.message)?);
    let report = aggregate(rows, Vec::new(), None);
    let a = &report.aggregates;
    let counts = (a.counts.success, a.counts.runtime_error, a.counts.syntax_error, a.counts.empty);
    ensure(counts == (7, 1, 1, 1), || format!("counts {counts:?}"))?;
    ensure(a.success_pct_display() == "70.0", || format!("succ {}", a.success_pct_display()))?;
    ensure(a.counts.total() == a.questions, || "partition broken on fixture".into())?;

    let data = generate_default(&SynthConfig::default()).map_err(|e| e.to_string())?;
    for mode in [InferenceMode::Base, InferenceMode::Offline, InferenceMode::Online] {
        for g in [GrammarVariant::None, GrammarVariant::Naive, GrammarVariant::Formal] {
            for s in [false, true] {
                let r = run_pipeline(&data, None, &funnel_config(mode, g, s), &b).map_err(|e| e.to_string())?;
                let a = &r.eval.aggregates;
                ensure(a.counts.total() == a.questions && a.questions == data.len(), || {
                    format!("{mode}/{g}/{s}: {:?} over {}", a.counts, a.questions)
                })?;
            }
        }
    }
    Ok("fixture gives (7,1,1,1) and 70.0%; partition holds on 18 configs".into())
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("ROUGE-L oracle equivalence", criterion_1),
        ("confidence math", criterion_2),
        ("grammar corpus", criterion_3),
        ("schema filter", criterion_4),
        ("end-to-end qualitative pattern", criterion_5),
        ("funnel invariants", criterion_6),
        ("evaluator taxonomy partition", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
