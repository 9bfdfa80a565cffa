//! Dynamic attribute prompt (DAP) generation.
//!
//! Each attribute phrase of a caption yields up to three single-attribute
//! sentences: a noun prompt using a predicate matched to the noun category
//! ("is a" for gender, "wears" for clothing, "has" for decorations), an
//! adjective prompt naming the phrase's attribute item, and a phrase
//! prompt that reuses the noun template but fills in the whole noun
//! phrase. Prompts are only ever compared within the same `group_key`,
//! which identifies the template variant they instantiate.

use serde::{Deserialize, Serialize};

use crate::midgen::sample_seeded;
use crate::textparse::{AttributeItem, AttributePhrase, NounCategory};

/// Which template family a prompt instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Noun,
    Adjective,
    Phrase,
}

/// One generated prompt sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    /// Template slot identity; prompts are loss-comparable iff this
    /// matches. Noun and phrase prompts share the noun template's key.
    pub group_key: String,
    pub text: String,
    pub source_caption_id: usize,
}

fn noun_template_key(category: NounCategory) -> &'static str {
    match category {
        NounCategory::GenderNoun => "noun/gender",
        NounCategory::WearingNoun => "noun/wearing",
        NounCategory::DecorationNoun => "noun/decoration",
    }
}

/// Fill the noun template for `category` with `slot` (a bare noun or a
/// whole noun phrase).
fn noun_template(category: NounCategory, slot: &str) -> String {
    match category {
        NounCategory::GenderNoun => format!("This person is a {slot}."),
        NounCategory::WearingNoun => format!("This person wears {slot}."),
        NounCategory::DecorationNoun => format!("This person has {slot}."),
    }
}

fn adjective_template(item: AttributeItem, adjectives: &[String]) -> String {
    let joined = adjectives.join(" and ");
    format!("The {} of this person is {}.", item.display_name(), joined)
}

/// Generate every prompt of a phrase list, in span order; per phrase: the
/// noun prompt, the adjective prompt (when the phrase has adjectives) and
/// the phrase prompt (when it differs from the noun prompt).
pub fn generate_prompts(phrases: &[AttributePhrase], caption_id: usize) -> Vec<Prompt> {
    let mut prompts = Vec::new();
    for phrase in phrases {
        let category = phrase.noun_category;
        prompts.push(Prompt {
            kind: PromptKind::Noun,
            group_key: noun_template_key(category).to_string(),
            text: noun_template(category, &phrase.noun),
            source_caption_id: caption_id,
        });
        if !phrase.adjectives.is_empty() {
            prompts.push(Prompt {
                kind: PromptKind::Adjective,
                group_key: format!("adjective/{}", phrase.attribute_item.key()),
                text: adjective_template(phrase.attribute_item, &phrase.adjectives),
                source_caption_id: caption_id,
            });
            // The whole noun phrase in the same noun template. For bare
            // nouns this would duplicate the noun prompt, so it only
            // exists when adjectives are present.
            let surface = format!("{} {}", phrase.adjectives.join(" and "), phrase.noun);
            prompts.push(Prompt {
                kind: PromptKind::Phrase,
                group_key: noun_template_key(category).to_string(),
                text: noun_template(category, &surface),
                source_caption_id: caption_id,
            });
        }
    }
    prompts
}

/// Pick `k` prompts with the same min-distinct-then-resample semantics as
/// MID sampling.
pub fn sample_prompts(prompts: &[Prompt], k: usize, seed: u64) -> Vec<Prompt> {
    sample_seeded(prompts, k, seed, "prompt_sample")
}

/// Every filler word the prompt templates can emit, for vocabulary
/// construction.
pub fn template_words() -> Vec<String> {
    let mut words: std::collections::BTreeSet<String> =
        ["this", "person", "is", "a", "wears", "has", "the", "of", "and"]
            .into_iter()
            .map(str::to_string)
            .collect();
    for item in AttributeItem::ALL {
        for w in item.display_name().split_whitespace() {
            words.insert(w.to_string());
        }
    }
    words.into_iter().collect()
}
