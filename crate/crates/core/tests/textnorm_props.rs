use hybridrag_core::textnorm::{
    dediacritize, is_diacritic, normalize_chars, Normalizer, StopwordSet,
};
use proptest::prelude::*;

/// Characters chosen to hit every normalization step and their interactions.
const ALPHABET: &[&str] = &[
    "ا", "ب", "ت", "ة", "ى", "ي", "أ", "إ", "آ", "ٱ", "ـ", "ه", "ل", "م", "ن", "و", "ف", "ي",
    "\u{064B}", "\u{064E}", "\u{064F}", "\u{0650}", "\u{0651}", "\u{0652}", "\u{0670}", "\u{0654}",
    " ", "  ", "\n", "\t", "\u{200F}", "\u{00A0}",
    "(", ")", "[", "]", "﴿", "﴾", "{", "}", "<", ">", "</", "<p>", "<b", "!", "?", "،", "؛", "؟",
    ".", ",", ":", "-", "_", "\"", "'", "«", "»",
    "1", "23", "٢", "¹", "²", "a", "Z", "x", "$", "+", "=",
    "رواه", "أخرجه", "البقرة: 2", "في", "من", "على", "إلى",
];

fn arb_text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(ALPHABET), 0..40).prop_map(|v| v.concat())
}

fn is_subsequence(needle: &str, hay: &str) -> bool {
    let mut it = hay.chars();
    needle.chars().all(|c| it.any(|h| h == c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn light_is_idempotent(s in arb_text()) {
        let n = Normalizer::default();
        let once = n.normalize_light(&s);
        let twice = n.normalize_light(once.as_str());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn light_output_invariants(s in arb_text()) {
        let out = Normalizer::default().normalize_light(&s);
        let t = out.as_str();
        prop_assert!(!t.chars().any(is_diacritic));
        prop_assert!(!t.chars().any(hybridrag_core::textnorm::is_punctuation));
        prop_assert_eq!(t.trim(), t);
        prop_assert!(!t.contains("  "));
    }

    #[test]
    fn full_tokens_are_sound(s in arb_text()) {
        let n = Normalizer::default();
        let full = n.normalize_full(&s);
        let rejoined = full.as_slice().join(" ");
        prop_assert_eq!(n.normalize_light(&rejoined).into_string(), rejoined);
        for t in &full {
            prop_assert!(!n.stopwords().contains(t));
            prop_assert!(hybridrag_core::textnorm::passes_token_filter(t));
        }
    }

    #[test]
    fn char_steps_preserve_order(s in arb_text()) {
        prop_assert!(is_subsequence(&dediacritize(&s), &s));
        // normalize_chars only maps or deletes in place
        let mapped = normalize_chars(&s);
        prop_assert!(mapped.chars().count() <= s.chars().count());
        prop_assert!(is_subsequence(&dediacritize(&mapped), &normalize_chars(&dediacritize(&s))));
    }

    #[test]
    fn aligned_tokens_join_to_light(s in arb_text()) {
        let n = Normalizer::default();
        let toks = n.light_tokens_aligned(&s);
        let joined: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        prop_assert_eq!(joined.join(" "), n.normalize_light(&s).into_string());
        for w in toks.windows(2) {
            prop_assert!(w[0].span.end <= w[1].span.start);
        }
    }
}

#[test]
fn bundled_stopword_fixture_sentence() {
    let sw = StopwordSet::bundled();
    let n = Normalizer::default();
    // "الوضوء من الطهارة": middle word is on the list
    let toks = n.normalize_full("الوضوءُ مِنَ الطهارةِ").into_vec();
    assert!(sw.contains("من"));
    assert_eq!(toks, ["الوضوء", "الطهاره"]);
}
