//! Multi-integrity description (MID) generation.
//!
//! A MID is a strictly-less-complete rewriting of a caption: every
//! attribute phrase independently keeps its full form, keeps only its
//! noun, or disappears, and the surviving phrases are re-rendered through
//! a caption template so the result stays grammatical. The all-full tuple
//! (the original) and the all-dropped tuple (an empty description) are
//! excluded, so every MID asserts a strict, correct subset of the
//! original's attributes.

use serde::{Deserialize, Serialize};

use crate::corpus::{render_phrases, RenderPhrase};
use crate::error::{CoreError, Result};
use crate::rng::rng_for;
use crate::textparse::AttributePhrase;
use rand::Rng;

/// Per-phrase survival state inside one MID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhraseState {
    /// Adjectives and noun kept.
    Full,
    /// Adjectives erased, noun kept.
    NounOnly,
    /// Noun erased, adjectives kept (only in `FullComponent` mode).
    AdjectivesOnly,
    /// Whole phrase erased.
    Dropped,
}

/// Which erasure states each phrase may take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MidMode {
    /// Erase adjectives or the whole phrase. Noun erasure drops the phrase
    /// so no dangling adjectives appear. The default.
    AdjectiveAndPhrase,
    /// Ablation mode that additionally keeps dangling adjectives when the
    /// noun is erased.
    FullComponent,
}

/// One multi-integrity description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidVariant {
    pub text: String,
    pub kept: Vec<PhraseState>,
    pub source_caption_id: usize,
}

/// States available to a phrase under `mode`, canonicalized: a phrase
/// without adjectives collapses `NounOnly` into `Full` and
/// `AdjectivesOnly` into `Dropped`.
fn states_for(phrase: &AttributePhrase, mode: MidMode) -> Vec<PhraseState> {
    let has_adj = !phrase.adjectives.is_empty();
    let mut states = vec![PhraseState::Full];
    if has_adj {
        states.push(PhraseState::NounOnly);
        if mode == MidMode::FullComponent {
            states.push(PhraseState::AdjectivesOnly);
        }
    }
    states.push(PhraseState::Dropped);
    states
}

fn render_mid(
    phrases: &[AttributePhrase],
    states: &[PhraseState],
    caption_id: usize,
) -> MidVariant {
    let kept: Vec<RenderPhrase> = phrases
        .iter()
        .zip(states)
        .filter_map(|(p, s)| match s {
            PhraseState::Full => Some(RenderPhrase::from_phrase(p)),
            PhraseState::NounOnly => Some(RenderPhrase {
                adjectives: vec![],
                noun: p.noun.clone(),
                category: p.noun_category,
            }),
            PhraseState::AdjectivesOnly => Some(RenderPhrase {
                adjectives: p.adjectives.clone(),
                noun: String::new(),
                category: p.noun_category,
            }),
            PhraseState::Dropped => None,
        })
        .collect();
    // MIDs always use the first caption template; the erasure pattern, not
    // the sentence frame, is what varies.
    MidVariant {
        text: render_phrases(&kept, 0),
        kept: states.to_vec(),
        source_caption_id: caption_id,
    }
}

/// Enumerate every MID of a caption in deterministic order.
///
/// The state tuples form the cross product of per-phrase states, minus the
/// all-full original and the all-dropped empty description. Phrases with
/// no adjectives contribute only {full, dropped}, which is exactly the
/// dedup of noun_only against full.
pub fn enumerate_mids(
    phrases: &[AttributePhrase],
    caption_id: usize,
    mode: MidMode,
) -> Result<Vec<MidVariant>> {
    if phrases.is_empty() {
        return Err(CoreError::Argument(
            "enumerate_mids requires at least one phrase".to_string(),
        ));
    }
    let state_sets: Vec<Vec<PhraseState>> = phrases.iter().map(|p| states_for(p, mode)).collect();

    let mut variants = Vec::new();
    let mut tuple: Vec<usize> = vec![0; phrases.len()];
    loop {
        let states: Vec<PhraseState> = tuple
            .iter()
            .zip(&state_sets)
            .map(|(&i, set)| set[i])
            .collect();
        let all_full = states.iter().all(|s| *s == PhraseState::Full);
        let all_dropped = states.iter().all(|s| *s == PhraseState::Dropped);
        if !all_full && !all_dropped {
            variants.push(render_mid(phrases, &states, caption_id));
        }
        // Mixed-radix increment, first phrase fastest.
        let mut pos = 0;
        loop {
            if pos == tuple.len() {
                return Ok(variants);
            }
            tuple[pos] += 1;
            if tuple[pos] < state_sets[pos].len() {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
    }
}

/// Pick `k` variants: distinct when the pool is large enough, otherwise
/// every variant once plus resamples with replacement. Deterministic for a
/// fixed seed. An empty pool yields an empty sample.
pub fn sample_mids(variants: &[MidVariant], k: usize, seed: u64) -> Vec<MidVariant> {
    sample_seeded(variants, k, seed, "mid_sample")
}

/// Shared min-distinct-then-resample sampler for MIDs and prompts.
pub(crate) fn sample_seeded<T: Clone>(pool: &[T], k: usize, seed: u64, tag: &str) -> Vec<T> {
    if k == 0 || pool.is_empty() {
        return Vec::new();
    }
    let mut rng = rng_for(seed, tag, &[pool.len() as u64, k as u64]);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let mut picks: Vec<T> = order
        .iter()
        .take(k.min(pool.len()))
        .map(|&i| pool[i].clone())
        .collect();
    while picks.len() < k {
        picks.push(pool[rng.gen_range(0..pool.len())].clone());
    }
    picks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textparse::{parse_description, Lexicon};

    fn phrases_of(text: &str) -> Vec<AttributePhrase> {
        parse_description(text, &Lexicon::builtin())
    }

    /// Brute-force oracle: enumerate raw 4-state tuples, canonicalize
    /// (no-adjective phrases map noun_only->full and adj_only->dropped;
    /// adjective_and_phrase mode maps adj_only->dropped), dedup, and drop
    /// the all-full / all-dropped tuples.
    fn oracle_count(adjective_counts: &[usize], mode: MidMode) -> usize {
        use std::collections::BTreeSet;
        let n = adjective_counts.len();
        let mut canon: BTreeSet<Vec<PhraseState>> = BTreeSet::new();
        let total = 4usize.pow(n as u32);
        for code in 0..total {
            let mut states = Vec::with_capacity(n);
            let mut c = code;
            for &adj in adjective_counts {
                let raw = match c % 4 {
                    0 => PhraseState::Full,
                    1 => PhraseState::NounOnly,
                    2 => PhraseState::AdjectivesOnly,
                    _ => PhraseState::Dropped,
                };
                c /= 4;
                let has_adj = adj > 0;
                let state = match raw {
                    PhraseState::NounOnly if !has_adj => PhraseState::Full,
                    PhraseState::AdjectivesOnly if !has_adj => PhraseState::Dropped,
                    PhraseState::AdjectivesOnly if mode == MidMode::AdjectiveAndPhrase => {
                        PhraseState::Dropped
                    }
                    s => s,
                };
                states.push(state);
            }
            let all_full = states.iter().all(|s| *s == PhraseState::Full);
            let all_dropped = states.iter().all(|s| *s == PhraseState::Dropped);
            if !all_full && !all_dropped {
                canon.insert(states);
            }
        }
        canon.len()
    }

    #[test]
    fn two_single_adjective_phrases_give_seven() {
        let phrases = phrases_of("a red shirt and black shorts");
        assert_eq!(phrases.len(), 2);
        let mids = enumerate_mids(&phrases, 0, MidMode::AdjectiveAndPhrase).unwrap();
        assert_eq!(mids.len(), 7);
        assert_eq!(oracle_count(&[1, 1], MidMode::AdjectiveAndPhrase), 7);
    }

    #[test]
    fn single_bare_noun_phrase_gives_nothing() {
        let phrases = phrases_of("a man");
        assert_eq!(phrases.len(), 1);
        let mids = enumerate_mids(&phrases, 0, MidMode::AdjectiveAndPhrase).unwrap();
        assert!(mids.is_empty());
    }

    #[test]
    fn mixed_adjective_counts_match_formula() {
        // Adjective counts (0, 1, 1): 2 * 3 * 3 - 2 = 16 variants.
        let phrases = phrases_of("a man wears a red shirt and black shorts");
        assert_eq!(phrases.len(), 3);
        assert_eq!(phrases[0].adjectives.len(), 0);
        let mids = enumerate_mids(&phrases, 0, MidMode::AdjectiveAndPhrase).unwrap();
        assert_eq!(mids.len(), 16);
        assert_eq!(oracle_count(&[0, 1, 1], MidMode::AdjectiveAndPhrase), 16);
    }

    #[test]
    fn counts_match_oracle_for_all_small_configurations() {
        let lex = Lexicon::builtin();
        let by_adj = |n: usize| -> AttributePhrase {
            let text = match n {
                0 => "a shirt",
                1 => "a red shirt",
                _ => "a red and blue shirt",
            };
            parse_description(text, &lex).remove(0)
        };
        for mode in [MidMode::AdjectiveAndPhrase, MidMode::FullComponent] {
            for n in 1..=4usize {
                let total = 3usize.pow(n as u32);
                for code in 0..total {
                    let mut counts = Vec::with_capacity(n);
                    let mut c = code;
                    for _ in 0..n {
                        counts.push(c % 3);
                        c /= 3;
                    }
                    let phrases: Vec<AttributePhrase> =
                        counts.iter().map(|&a| by_adj(a)).collect();
                    let got = enumerate_mids(&phrases, 0, mode).unwrap().len();
                    let want = oracle_count(&counts, mode);
                    assert_eq!(got, want, "mode {mode:?} counts {counts:?}");
                }
            }
        }
    }

    #[test]
    fn closed_form_matches_enumeration() {
        // prod(2 + has_adj) - 2 in the default mode.
        let phrases = phrases_of("a lady wears a red and blue shirt with muddy boots");
        let has_adj: Vec<bool> = phrases.iter().map(|p| !p.adjectives.is_empty()).collect();
        let expect: usize = has_adj
            .iter()
            .map(|&a| if a { 3usize } else { 2 })
            .product::<usize>()
            - 2;
        let mids = enumerate_mids(&phrases, 0, MidMode::AdjectiveAndPhrase).unwrap();
        assert_eq!(mids.len(), expect);
    }

    #[test]
    fn every_mid_is_a_strict_correct_subset() {
        let lex = Lexicon::builtin();
        let text = "A man wears a red shirt and black shorts and has a silver backpack.";
        let phrases = parse_description(text, &lex);
        let mids = enumerate_mids(&phrases, 3, MidMode::AdjectiveAndPhrase).unwrap();
        let full_components: usize = phrases.iter().map(|p| 1 + p.adjectives.len()).sum();
        for mid in &mids {
            assert!(!mid.text.is_empty());
            assert!(mid.kept.iter().any(|s| *s != PhraseState::Full), "{mid:?}");
            assert!(mid.kept.iter().any(|s| *s != PhraseState::Dropped));
            assert_eq!(mid.source_caption_id, 3);

            // Every reparsed phrase must be a full or reduced copy of an
            // original phrase, and strictly fewer components must survive.
            let reparsed = parse_description(&mid.text, &lex);
            let mut components = 0usize;
            for r in &reparsed {
                let origin = phrases
                    .iter()
                    .find(|p| p.noun == r.noun)
                    .unwrap_or_else(|| panic!("new noun {:?} in {:?}", r.noun, mid.text));
                assert!(
                    r.adjectives == origin.adjectives || r.adjectives.is_empty(),
                    "adjectives {:?} not a reduction of {:?}",
                    r.adjectives,
                    origin.adjectives
                );
                components += 1 + r.adjectives.len();
            }
            assert!(
                components < full_components,
                "not strictly incomplete: {mid:?}"
            );
        }
    }

    #[test]
    fn enumeration_order_is_deterministic() {
        let phrases = phrases_of("a red shirt and black shorts");
        let a = enumerate_mids(&phrases, 0, MidMode::AdjectiveAndPhrase).unwrap();
        let b = enumerate_mids(&phrases, 0, MidMode::AdjectiveAndPhrase).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_phrase_list_is_an_error() {
        assert!(enumerate_mids(&[], 0, MidMode::AdjectiveAndPhrase).is_err());
    }

    #[test]
    fn sampling_contract() {
        let phrases = phrases_of("a red shirt and black shorts");
        let variants = enumerate_mids(&phrases, 0, MidMode::AdjectiveAndPhrase).unwrap();
        assert_eq!(variants.len(), 7);

        assert!(sample_mids(&variants, 0, 1).is_empty());

        let three = sample_mids(&variants, 3, 1);
        assert_eq!(three.len(), 3);
        let texts: std::collections::HashSet<&str> =
            three.iter().map(|m| m.text.as_str()).collect();
        assert_eq!(texts.len(), 3, "samples should be distinct");

        // More requested than available: every variant appears, plus
        // resamples.
        let two = &variants[..2];
        let five = sample_mids(two, 5, 2);
        assert_eq!(five.len(), 5);
        for pick in &five {
            assert!(two.iter().any(|v| v == pick));
        }
        let distinct: std::collections::HashSet<&str> =
            five.iter().map(|m| m.text.as_str()).collect();
        assert_eq!(distinct.len(), 2);

        assert_eq!(sample_mids(&variants, 3, 9), sample_mids(&variants, 3, 9));
        assert!(sample_mids(&[], 4, 0).is_empty());
    }

    #[test]
    fn original_text_never_reappears() {
        let lex = Lexicon::builtin();
        let text = "A man wears a red shirt and black shorts.";
        let phrases = parse_description(text, &lex);
        let variants = enumerate_mids(&phrases, 0, MidMode::AdjectiveAndPhrase).unwrap();
        let full_render = render_mid(&phrases, &vec![PhraseState::Full; phrases.len()], 0);
        for v in &variants {
            assert_ne!(v.text, full_render.text);
        }
    }

    #[test]
    fn full_component_mode_keeps_dangling_adjectives() {
        let phrases = phrases_of("a red shirt");
        let mids = enumerate_mids(&phrases, 0, MidMode::FullComponent).unwrap();
        // States: noun_only, adj_only (full and dropped excluded).
        assert_eq!(mids.len(), 2);
        assert!(mids
            .iter()
            .any(|m| m.kept == vec![PhraseState::AdjectivesOnly]));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Count formula prod(2 + has_adj) - 2 and variant uniqueness
            /// for arbitrary phrase shapes in the default mode.
            #[test]
            fn count_formula_and_uniqueness(adj_counts in proptest::collection::vec(0usize..3, 1..5)) {
                let lex = Lexicon::builtin();
                let phrases: Vec<AttributePhrase> = adj_counts
                    .iter()
                    .map(|&a| {
                        let text = match a {
                            0 => "a shirt",
                            1 => "a red shirt",
                            _ => "a red and blue shirt",
                        };
                        parse_description(text, &lex).remove(0)
                    })
                    .collect();
                let mids = enumerate_mids(&phrases, 0, MidMode::AdjectiveAndPhrase).unwrap();
                let expect: usize = adj_counts
                    .iter()
                    .map(|&a| if a > 0 { 3usize } else { 2 })
                    .product::<usize>()
                    - 2;
                prop_assert_eq!(mids.len(), expect);
                let unique: std::collections::HashSet<&Vec<PhraseState>> =
                    mids.iter().map(|m| &m.kept).collect();
                prop_assert_eq!(unique.len(), mids.len());
            }
        }
    }
}
