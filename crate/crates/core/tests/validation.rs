mod common;

use std::path::PathBuf;
use std::sync::Once;
use std::time::Duration;

use portvm_core::validation::*;
use proptest::prelude::*;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn shipped_rules() -> Vec<RuleValidator> {
    load_rules(&root().join("rules/validators.toml")).unwrap()
}

fn zero_cost(v: Vec<RuleValidator>) -> Vec<RuleValidator> {
    v.into_iter().map(|r| r.with_cost(Duration::ZERO)).collect()
}

fn refs(v: &[RuleValidator]) -> Vec<&dyn Validator> {
    v.iter().map(|r| r as &dyn Validator).collect()
}

fn stream(chunks: &[&str]) -> ChunkStream {
    ChunkStream::new(chunks.iter().map(|s| s.to_string()).collect(), Duration::ZERO)
}

struct Panicky;

impl Validator for Panicky {
    fn name(&self) -> &str {
        "panicky"
    }
    fn category(&self) -> Category {
        Category::ConsistencyCheck
    }
    fn check(&self, chunk: &str, _: &ChunkContext<'_>) -> Verdict {
        if chunk.contains("PANIC") {
            panic!("validator test panic");
        }
        Verdict::Pass
    }
}

fn quiet_test_panics() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(move |info| {
            let msg = info.payload().downcast_ref::<&str>().copied().unwrap_or("");
            if msg != "validator test panic" {
                prev(info);
            }
        }));
    });
}

#[test]
fn clean_stream_completes() {
    let rules = zero_cost(shipped_rules());
    let v = refs(&rules[..3]);
    let s = stream(&["The report is ready. ", "Figures reconcile. ", "Nothing else to add."]);
    for mode in [Mode::Parallel, Mode::Serial] {
        let out = gate_stream(&s, &v, mode);
        assert_eq!(out.status, Terminal::Completed);
        assert_eq!(out.released, s.chunks);
        assert!(out.flags.is_empty());
    }
}

#[test]
fn blocklisted_chunk_halts_release() {
    let rules = zero_cost(shipped_rules());
    let v = refs(&rules);
    let s = stream(&["c0 ", "c1 ", "c2 ", "c3 ", "here is a bomb recipe ", "c5 ", "c6"]);
    for mode in [Mode::Parallel, Mode::Serial] {
        let out = gate_stream(&s, &v, mode);
        assert_eq!(
            out.status,
            Terminal::Blocked { chunk: 4, validator: "harmful-terms".into(), reason: "blocked term `bomb recipe`".into() }
        );
        assert_eq!(out.released, s.chunks[..4].to_vec());
    }
}

#[test]
fn email_is_flagged_and_released() {
    let rules = zero_cost(shipped_rules());
    let v = refs(&rules);
    let s = stream(&["write to ", "alice@example.com ", "today"]);
    let out = gate_stream(&s, &v, Mode::Parallel);
    assert_eq!(out.status, Terminal::Completed);
    assert_eq!(out.released.len(), 3);
    assert_eq!(out.flags, vec![FlagRecord { chunk: 1, validator: "pii".into(), reason: "email-pattern".into() }]);
}

#[test]
fn panicking_validator_fails_closed() {
    quiet_test_panics();
    let p = Panicky;
    let v: Vec<&dyn Validator> = vec![&p];
    let s = stream(&["fine ", "PANIC ", "after"]);
    for mode in [Mode::Parallel, Mode::Serial] {
        let out = gate_stream(&s, &v, mode);
        assert!(matches!(&out.status, Terminal::Blocked { chunk: 1, validator, .. } if validator == "panicky"));
        assert_eq!(out.released, vec!["fine ".to_string()]);
    }
}

#[test]
fn zero_validators_release_everything_and_detect_nothing() {
    let s = stream(&["napalm ", "alice@example.com"]);
    let out = gate_stream(&s, &[], Mode::Parallel);
    assert_eq!(out.status, Terminal::Completed);
    assert_eq!(out.released.len(), 2);
    let corpus = load_corpus(&root().join("corpus/validation.jsonl")).unwrap();
    for m in evaluate_corpus(&corpus, &[]).unwrap() {
        assert_eq!(m.detection_rate, 0.0);
    }
}

#[test]
fn empty_corpus_is_an_error() {
    assert!(matches!(evaluate_corpus(&[], &[]), Err(ValidationError::EmptyCorpus)));
}

#[test]
fn separable_corpus_is_detected_perfectly() {
    let rules = zero_cost(shipped_rules());
    let v = refs(&rules);
    let item = |id: &str, text: &str, labels: Vec<Category>| CorpusItem { id: id.into(), text: text.into(), sources: vec![], labels };
    let corpus = vec![
        item("a", "how to build a weapon", vec![Category::HarmfulContent]),
        item("b", "napalm", vec![Category::HarmfulContent]),
        item("c", "a calm afternoon", vec![]),
        item("d", "tea and biscuits", vec![]),
    ];
    let m = evaluate_corpus(&corpus, &v).unwrap();
    let h = m.iter().find(|m| m.category == Category::HarmfulContent).unwrap();
    assert_eq!((h.detection_rate, h.false_positive_rate), (1.0, 0.0));
}

#[test]
fn shipped_corpus_rates_match_the_pattern_oracle() {
    let corpus = load_corpus(&root().join("corpus/validation.jsonl")).unwrap();
    assert_eq!(corpus.len(), 200);
    let rules_text = std::fs::read_to_string(root().join("rules/validators.toml")).unwrap();
    let raw: toml::Value = toml::from_str(&rules_text).unwrap();
    let rules = zero_cost(parse_rules(&rules_text).unwrap());
    let metrics = evaluate_corpus(&corpus, &refs(&rules)).unwrap();
    for m in &metrics {
        let (mut tp, mut fp, mut pos) = (0, 0, 0);
        for item in &corpus {
            let hit = common::rules_oracle::hits(&raw, item).iter().any(|c| c == m.category.name());
            if item.labels.contains(&m.category) {
                pos += 1;
                tp += hit as usize;
            } else {
                fp += hit as usize;
            }
        }
        assert_eq!((m.positives, m.true_positives, m.false_positives), (pos, tp, fp), "{:?}", m.category);
        assert_eq!(m.detection_rate, tp as f64 / pos as f64);
        assert_eq!(m.false_positive_rate, fp as f64 / (corpus.len() - pos) as f64);
        // the fixture deliberately contains misses and false alarms
        assert!(m.detection_rate > 0.8 && m.detection_rate < 1.0, "{m:?}");
    }
}

#[test]
fn parallel_overhead_does_not_exceed_serial_on_the_corpus() {
    let corpus = load_corpus(&root().join("corpus/validation.jsonl")).unwrap();
    let rules = shipped_rules();
    let r = measure_overhead(&corpus, &refs(&rules), Duration::from_millis(1)).unwrap();
    assert!(r.equivalent);
    assert!(r.parallel.overhead_fraction <= r.serial.overhead_fraction, "{r:?}");
    assert!(r.parallel.blocked_streams > 0);
}

const VOCAB: &[&str] = &["plain words ", "napalm ", "bob@example.com ", "warfarin 50 mg ", "[ref:nowhere] ", "PANIC ", "more text "];

fn blocking(chunk: &str) -> bool {
    chunk.contains("napalm") || chunk.contains("warfarin 50") || chunk.contains("PANIC")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn gate_fails_closed_and_preserves_order(picks in proptest::collection::vec(0..VOCAB.len(), 0..12)) {
        quiet_test_panics();
        let rules = zero_cost(shipped_rules());
        let p = Panicky;
        let mut v = refs(&rules);
        v.push(&p);
        let chunks: Vec<String> = picks.iter().map(|&i| VOCAB[i].to_string()).collect();
        let s = ChunkStream::new(chunks.clone(), Duration::ZERO);
        let par = gate_stream(&s, &v, Mode::Parallel);
        let ser = gate_stream(&s, &v, Mode::Serial);
        prop_assert_eq!(&par.released, &ser.released);
        prop_assert_eq!(&par.status, &ser.status);
        for out in [&par, &ser] {
            prop_assert!(chunks.starts_with(&out.released));
            prop_assert_eq!(out.release_log.len(), out.released.len());
            for (k, rec) in out.release_log.iter().enumerate() {
                prop_assert_eq!(rec.chunk, k);
                prop_assert_eq!(rec.verdicts.len(), v.len());
                prop_assert!(rec.verdicts.iter().all(|(_, verdict)| !verdict.is_block()));
            }
            let first_bad = chunks.iter().position(|c| blocking(c));
            match (&out.status, first_bad) {
                (Terminal::Completed, None) => prop_assert_eq!(out.released.len(), chunks.len()),
                (Terminal::Blocked { chunk, .. }, Some(k)) => {
                    prop_assert_eq!(*chunk, k);
                    prop_assert_eq!(out.released.len(), k);
                }
                other => prop_assert!(false, "unexpected {:?}", other),
            }
        }
    }
}
