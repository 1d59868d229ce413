use std::io::Write;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synthetic::{echo_key_corpus, memorization_corpus};
use super::*;
use crate::error::Error;

fn vocab(text: &str) -> Vocab {
    Vocab::build([text], 100).unwrap()
}

fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    f
}

#[test]
fn tokenizer_splits_punctuation() {
    assert_eq!(
        tokenize("Hello, world!  ok."),
        ["Hello", ",", "world", "!", "ok", "."]
    );
}

#[test]
fn vocab_orders_by_frequency_then_alphabet() {
    let v = vocab("a a b");
    assert!(v.id("a") < v.id("b"));
    let v = vocab("z y y z c");
    assert_eq!(v.id("y"), 5);
    assert_eq!(v.id("z"), 6);
    assert_eq!(v.id("c"), 7);
}

#[test]
fn specials_come_first_and_are_distinct() {
    let v = vocab("x");
    assert_eq!(
        [v.pad(), v.bos(), v.eos(), v.mask(), v.unk()],
        [0, 1, 2, 3, 4]
    );
    for (i, s) in SPECIALS.iter().enumerate() {
        assert_eq!(v.token(i), *s);
    }
}

#[test]
fn unknown_tokens_map_to_unk() {
    let v = vocab("a b");
    assert_eq!(v.id("zzz"), v.unk());
}

#[test]
fn vocab_truncates_to_max_size() {
    let v = Vocab::build(["a a a b b c d"], 7).unwrap();
    assert_eq!(v.len(), 7);
    assert!(v.contains("a") && v.contains("b"));
    assert_eq!(v.id("c"), v.unk());
}

#[test]
fn vocab_rejects_empty_corpus() {
    assert!(matches!(Vocab::build(["   "], 10), Err(Error::Usage(_))));
    assert!(Vocab::build(Vec::<&str>::new(), 10).is_err());
}

#[test]
fn vocab_round_trips_through_token_list() {
    let v = vocab("the cat . sat !");
    assert_eq!(Vocab::from_tokens(v.tokens().to_vec()).unwrap(), v);
    assert!(Vocab::from_tokens(vec!["a".into()]).is_err());
}

#[test]
fn sentence_split_examples() {
    let v = vocab("a b c . !");
    let ids = v.encode("a . b !");
    let parts: Vec<String> = split_sentences(&ids, &v)
        .iter()
        .map(|s| v.decode(s))
        .collect();
    assert_eq!(parts, ["a .", "b !"]);

    let ids = v.encode("a b c");
    let parts: Vec<String> = split_sentences(&ids, &v)
        .iter()
        .map(|s| v.decode(s))
        .collect();
    assert_eq!(parts, ["a b c"]);
}

#[test]
fn example_targets_are_bracketed() {
    let v = vocab("x y . z");
    let ex = Example::from_pair(
        &TextPair {
            input: "x".into(),
            output: "y . z".into(),
        },
        &v,
    )
    .unwrap();
    assert_eq!(ex.output_sentences.len(), 2);
    let t = ex.target_ids(&v);
    assert_eq!(t.first(), Some(&v.bos()));
    assert_eq!(t.last(), Some(&v.eos()));
    assert!(!t.contains(&v.pad()));
    assert!(Example::new(vec![], &[5], &v).is_err());
    assert!(Example::new(vec![5], &[], &v).is_err());
}

#[test]
fn load_jsonl_reads_well_formed_lines() {
    let f = write_lines(&[
        r#"{"input": "a b", "output": "c ."}"#,
        r#"{"input": "d", "output": "e !"}"#,
        "",
        r#"{"input": "f", "output": "g"}"#,
    ]);
    let c = load_jsonl(f.path(), LengthLimits::unlimited()).unwrap();
    assert_eq!(c.pairs.len(), 3);
    assert_eq!(c.pairs[1].input, "d");
    assert_eq!(c.discarded, 0);
}

#[test]
fn load_jsonl_names_malformed_line() {
    let f = write_lines(&[r#"{"input": "a", "output": "b"}"#, r#"{"input": "a"}"#]);
    match load_jsonl(f.path(), LengthLimits::unlimited()) {
        Err(Error::Data { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected data error, got {other:?}"),
    }
}

#[test]
fn load_jsonl_discards_over_length_pairs() {
    let f = write_lines(&[
        r#"{"input": "a b", "output": "c"}"#,
        r#"{"input": "a b c d e", "output": "c"}"#,
    ]);
    let limits = LengthLimits {
        max_input_tokens: 3,
        max_output_tokens: 3,
    };
    let c = load_jsonl(f.path(), limits).unwrap();
    assert_eq!(c.pairs.len(), 1);
    assert_eq!(c.discarded, 1);
}

#[test]
fn length_limits_reserve_prompt_slots() {
    let l = LengthLimits::for_model(64, 4).unwrap();
    assert_eq!(l.max_input_tokens, 56);
    assert!(LengthLimits::for_model(8, 4).is_err());
}

#[test]
fn synthetic_corpora_fit_toy_vocab() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pairs = memorization_corpus(50, &mut rng);
    let v = Vocab::build(
        pairs
            .iter()
            .flat_map(|p| [p.input.as_str(), p.output.as_str()]),
        64,
    )
    .unwrap();
    assert!(v.len() <= 64);
    let examples = encode_pairs(&pairs, &v).unwrap();
    assert!(examples.iter().all(|e| e.output_sentences.len() == 2));
    assert!(examples.iter().all(|e| !e.input_ids.contains(&v.unk())));

    let pairs = echo_key_corpus(20, &mut rng);
    for p in &pairs {
        let key = synthetic::echo_key_of(&p.input).unwrap();
        let first = p.output.split('.').next().unwrap();
        assert!(first.split_whitespace().any(|w| w == key));
    }
}

#[test]
fn synthetic_corpora_are_seed_deterministic() {
    let a = memorization_corpus(10, &mut ChaCha8Rng::seed_from_u64(5));
    let b = memorization_corpus(10, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn detokenize_inverts_tokenize_on_covered_text(picks in proptest::collection::vec(0usize..6, 1..20)) {
        let words = ["alpha", "beta", "gamma", ".", "!", "delta"];
        let v = Vocab::build([words.join(" ").as_str()], 100).unwrap();
        let text = picks.iter().map(|&i| words[i]).collect::<Vec<_>>().join(" ");
        prop_assert_eq!(v.decode(&v.encode(&text)), text);
    }

    #[test]
    fn segmentation_is_lossless(ids in proptest::collection::vec(5usize..10, 1..40)) {
        // ids 5.. map onto ". a b ! c" in some order; any may be a delimiter
        let v = Vocab::build([". a b ! c"], 100).unwrap();
        let parts = split_sentences(&ids, &v);
        prop_assert_eq!(parts.concat(), ids.clone());
        prop_assert!(parts.iter().all(|p| !p.is_empty()));
        for p in &parts[..parts.len() - 1] {
            prop_assert!(v.is_delimiter(*p.last().unwrap()));
            prop_assert!(p[..p.len() - 1].iter().all(|&t| !v.is_delimiter(t)));
        }
    }
}
