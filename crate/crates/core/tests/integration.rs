use std::io::Write;

use serde_json::json;

use cypher_funnel::confidence::TraceConfidence;
use cypher_funnel::eval::{aggregate, evaluate_question};
use cypher_funnel::executor::{execute_micro, ExecStatus, MicroBackend, MicroGraph};
use cypher_funnel::pipeline::run_pipeline;
use cypher_funnel::schema::{parse_schema, schema_filter, SchemaCheck};
use cypher_funnel::synth::{fixture_schema, generate_default, MutationKind, SynthConfig};
use cypher_funnel::syntax::{grammar_filter, parse};
use cypher_funnel::trace::{load_dataset, postprocess_raw, write_dataset, GrammarVariant, PipelineConfig};

const VALID: &str = include_str!("data/valid_queries.txt");

#[test]
fn corpus_covers_the_grammar() {
    let text = VALID.to_uppercase();
    let forms = [
        "OPTIONAL MATCH", "UNWIND", "WITH", "RETURN", "CREATE", "MERGE", "ON CREATE SET", "ON MATCH SET",
        "SET", "DETACH DELETE", " DELETE", "REMOVE", "CALL", "YIELD", "UNION ALL", "UNION", "ORDER BY",
        "SKIP", "LIMIT", "DISTINCT", "ASC", "DESCENDING", " AS ", "WHERE", " AND ", " OR ", " XOR ",
        "NOT ", "STARTS WITH", "ENDS WITH", "CONTAINS", " IN ", "IS NULL", "IS NOT NULL", "CASE", "WHEN",
        "THEN", "ELSE", "END", "<>", "<=", ">=", " ^ ", " % ", " / ", "*1..3", "[*]", "*2]", "|", "<-", "->",
        "-->", "<--", "--(", "P = (", "$", "`", "{", "[0]", "+=", "TRUE", "FALSE", "NULL", "0X", "1.5",
        "COUNT(*)", "COUNT(DISTINCT", "APOC.TEXT.JOIN", ":PERSON:ACTOR", "/*", "//",
    ];
    for f in forms {
        assert!(text.contains(f), "corpus lacks {f}");
    }
}

#[test]
fn naive_filter_drops_duplicate_keyword() {
    let (kept, rejected) = grammar_filter(vec!["MATCH (n) RETURN n", "RETURN RETURN 1"], GrammarVariant::Naive);
    assert_eq!(kept, vec!["MATCH (n) RETURN n"]);
    assert_eq!(rejected.len(), 1);
    assert!(!rejected[0].diagnostics.is_empty());

    let mutants = vec!["MATCH (n RETURN n", "MATCH (n) RETURN", "MATCH MATCH (n) RETURN n"];
    let (kept, rejected) = grammar_filter(mutants, GrammarVariant::Formal);
    assert!(kept.is_empty());
    assert!(rejected.iter().all(|r| !r.diagnostics.is_empty()));
}

#[test]
fn schema_text_with_junk_line() {
    let parsed = parse_schema("(:A)-[:R]->(:B)\ngarbage\n(:A)-[:R]->(:B)").unwrap();
    assert_eq!(parsed.schema.len(), 1);
    assert_eq!(parsed.warnings.len(), 1);
    assert!(parse_schema("nothing here").is_err());
}

#[test]
fn schema_filter_drops_the_flipped_candidate() {
    let cands = vec![
        "MATCH (p:Person)-[:ACTED_IN]->(m:Movie) RETURN p",
        "MATCH (m:Movie)-[:ACTED_IN]->(p:Person) RETURN p",
        "MATCH (m:Movie)<-[:ACTED_IN]-(p:Person) RETURN p",
    ];
    let (kept, rejected) = schema_filter(cands, &fixture_schema(), GrammarVariant::Formal, SchemaCheck::default());
    assert_eq!(kept.len(), 2);
    assert_eq!(rejected[0].candidate, "MATCH (m:Movie)-[:ACTED_IN]->(p:Person) RETURN p");
    let (kept, _) = schema_filter(vec!["RETURN 1", "MATCH (n) RETURN n"], &fixture_schema(), GrammarVariant::Formal, SchemaCheck::default());
    assert_eq!(kept.len(), 2);
}

#[test]
fn undirected_hops_match_both_directions() {
    let g = MicroGraph::fixture();
    let acted = g.edges.iter().filter(|e| e.rel_type == "ACTED_IN").count();
    let out = execute_micro(&g, "MATCH (a)-[:ACTED_IN]-(b) RETURN count(*)");
    assert_eq!(out.rows.unwrap(), vec![vec![json!(2 * acted)]]);
    let out = execute_micro(&g, "MATCH (a)-[:ACTED_IN]->(b) RETURN count(*)");
    assert_eq!(out.rows.unwrap(), vec![vec![json!(acted)]]);
}

#[test]
fn micro_executor_is_deterministic() {
    let g = MicroGraph::fixture();
    for q in ["MATCH (p:Person)-[r]->(m) RETURN p.name, type(r), m", "MATCH (n) RETURN n", "MATCH (n RETURN n"] {
        assert_eq!(execute_micro(&g, q), execute_micro(&g, q));
    }
    assert_eq!(execute_micro(&g, "CREATE (n:X)").status, ExecStatus::RuntimeError);
}

/// Mutation kind recorded in a synthetic trace id.
fn applied_kind(trace_id: &str) -> MutationKind {
    let tail = trace_id.split('-').nth(2).expect("synthetic trace id");
    serde_json::from_value(json!(tail)).unwrap()
}

#[test]
fn mutation_classes_hold_on_generated_data() {
    let cfg = SynthConfig {
        n_questions: 60,
        p_syntax_error: 0.4,
        p_direction_error: 0.3,
        p_label_error: 0.1,
        ..SynthConfig::default()
    };
    let data = generate_default(&cfg).unwrap();
    let schema = fixture_schema();
    let mut seen = std::collections::HashSet::new();
    for r in &data {
        for t in &r.traces {
            let kind = applied_kind(&t.trace_id);
            seen.insert(kind);
            let text = postprocess_raw(&t.raw_text);
            let parses = parse(&text).is_ok();
            if kind.is_syntax() {
                assert!(!parses, "{}: {text}", t.trace_id);
            }
            if kind == MutationKind::FlipDirection {
                assert!(parses, "{text}");
                let (kept, _) = schema_filter(vec![text.as_str()], &schema, GrammarVariant::Formal, SchemaCheck::default());
                assert!(kept.is_empty(), "{text}");
            }
        }
    }
    assert_eq!(seen.len(), 6, "{seen:?}");
}

#[test]
fn all_syntax_mutants_fail_formal_parse() {
    let cfg = SynthConfig {
        n_questions: 20,
        p_syntax_error: 1.0,
        p_direction_error: 0.0,
        p_label_error: 0.0,
        ..SynthConfig::default()
    };
    for r in generate_default(&cfg).unwrap() {
        for t in &r.traces {
            assert!(parse(&postprocess_raw(&t.raw_text)).is_err(), "{}", t.raw_text);
        }
    }
}

#[test]
fn zero_gap_makes_confidence_uninformative() {
    let cfg = SynthConfig {
        n_questions: 700,
        confidence_gap: 0.0,
        ..SynthConfig::default()
    };
    let (mut good, mut bad) = (Vec::new(), Vec::new());
    for r in generate_default(&cfg).unwrap() {
        for t in &r.traces {
            let c = TraceConfidence::from_trace(t, 32).unwrap().mean_confidence;
            if applied_kind(&t.trace_id) == MutationKind::Identity {
                good.push(c);
            } else {
                bad.push(c);
            }
        }
    }
    assert!(good.len() + bad.len() >= 10_000);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean(&good) - mean(&bad)).abs() < 0.05, "{} vs {}", mean(&good), mean(&bad));

    let gapped = generate_default(&SynthConfig { n_questions: 50, ..SynthConfig::default() }).unwrap();
    let (mut g, mut b) = (Vec::new(), Vec::new());
    for r in &gapped {
        for t in &r.traces {
            let c = TraceConfidence::from_trace(t, 32).unwrap().mean_confidence;
            if applied_kind(&t.trace_id) == MutationKind::Identity { g.push(c) } else { b.push(c) }
        }
    }
    assert!(mean(&g) - mean(&b) > 0.8);
}

#[test]
fn dataset_file_round_trip_and_run() {
    let data = generate_default(&SynthConfig { n_questions: 5, ..SynthConfig::default() }).unwrap();
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write_dataset(&mut file, &data).unwrap();
    file.flush().unwrap();
    let loaded = load_dataset(file.path()).unwrap();
    assert_eq!(loaded, data);
    let report = run_pipeline(&loaded, None, &PipelineConfig::default(), &MicroBackend::fixture()).unwrap();
    assert_eq!(report.report_version, 1);
    assert_eq!(report.questions.len(), 5);
}

#[test]
fn aggregates_ignore_row_order() {
    let b = MicroBackend::fixture();
    let gold = "MATCH (p:Person) RETURN p.name ORDER BY p.name";
    let preds = [Some(gold), Some("MATCH (p:Person) RETURN p.born"), None, Some("MATCH (p RETURN p")];
    let rows: Vec<_> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| evaluate_question(&format!("q{i}"), *p, gold, &b).unwrap())
        .collect();
    let mut reversed = rows.clone();
    reversed.reverse();
    assert_eq!(aggregate(rows, vec![], None).aggregates, aggregate(reversed, vec![], None).aggregates);
}
