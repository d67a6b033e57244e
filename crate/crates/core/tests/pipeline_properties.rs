use proptest::prelude::*;

use textmatch::text::{
    fixed_length, is_punctuation, lowercase, punc_removal, tokenize, word_hashing, Pipeline, Unit, Vocabulary,
};

fn token() -> impl Strategy<Value = String> {
    prop::string::string_regex("[a-zA-Z0-9,.!?'ÄéßΣ-]{1,8}").unwrap()
}

fn tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(token(), 0..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lowercase_and_punctuation_are_idempotent(t in tokens()) {
        let once = lowercase(&t);
        prop_assert_eq!(lowercase(&once), once.clone());
        let p = punc_removal(&t);
        prop_assert_eq!(punc_removal(&p), p);
    }

    #[test]
    fn lowercase_preserves_order_and_length(t in tokens()) {
        let l = lowercase(&t);
        prop_assert_eq!(l.len(), t.len());
        for (a, b) in t.iter().zip(&l) {
            prop_assert_eq!(lowercase(&[a.clone()]), vec![b.clone()]);
        }
    }

    #[test]
    fn punctuation_removal_keeps_relative_order(t in tokens()) {
        let kept = punc_removal(&t);
        prop_assert!(kept.iter().all(|k| !k.is_empty() && !k.chars().any(is_punctuation)));
        let piecewise: Vec<String> = t.iter().flat_map(|x| punc_removal(&[x.clone()])).collect();
        prop_assert_eq!(kept, piecewise);
    }

    #[test]
    fn fixed_length_is_idempotent(v in prop::collection::vec(0usize..50, 0..30), n in 1usize..20) {
        let once = fixed_length(&v, n, 0).unwrap();
        prop_assert_eq!(once.len(), n);
        prop_assert_eq!(fixed_length(&once, n, 0).unwrap(), once);
    }

    #[test]
    fn trigram_count_equals_char_length(t in token()) {
        let grams = word_hashing(&t).unwrap();
        prop_assert_eq!(grams.len(), t.chars().count());
        prop_assert!(grams.iter().all(|g| g.chars().count() == 3));
    }

    #[test]
    fn vocabulary_ignores_document_order(mut docs in prop::collection::vec(tokens(), 1..6)) {
        let a = Vocabulary::fit(&docs);
        docs.reverse();
        let b = Vocabulary::fit(&docs);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn tokenize_round_trips_single_spaces(t in prop::collection::vec("[a-z]{1,5}", 0..8)) {
        prop_assert_eq!(tokenize(&t.join(" ")), t);
    }

    #[test]
    fn fitted_pipeline_json_round_trip(texts in prop::collection::vec("[a-zA-Z .,]{0,30}", 1..5)) {
        let mut p = Pipeline::new(vec![
            Unit::Tokenize, Unit::Lowercase, Unit::PuncRemoval,
            Unit::frequency_filter(1), Unit::vocabulary(), Unit::fixed_length(6),
        ]).unwrap();
        p.fit_transform(&texts).unwrap();
        let back = Pipeline::from_json(&p.to_json().unwrap()).unwrap();
        for t in &texts {
            prop_assert_eq!(back.transform(t).unwrap(), p.transform(t).unwrap());
        }
    }
}
