//! Lexicon-driven attribute phrase extraction.
//!
//! Captions in this pipeline come from a closed vocabulary, so instead of
//! a POS tagger the parser matches tokens against a lexicon: a phrase is a
//! maximal run of known adjectives immediately preceding a known noun.
//! Unknown words reset the adjective run; `and` is transparent inside a
//! run so that "black and white scarf" parses as one phrase.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// The five body-region slots plus gender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeItem {
    HeadItem,
    UpperClothing,
    LowerClothing,
    FootItem,
    Accessory,
    Gender,
}

impl AttributeItem {
    /// Canonical rendering order (top of body downward, then extras).
    pub const ALL: [AttributeItem; 6] = [
        AttributeItem::HeadItem,
        AttributeItem::UpperClothing,
        AttributeItem::LowerClothing,
        AttributeItem::FootItem,
        AttributeItem::Accessory,
        AttributeItem::Gender,
    ];

    /// The five non-gender items, in canonical order.
    pub const WEARABLE: [AttributeItem; 5] = [
        AttributeItem::HeadItem,
        AttributeItem::UpperClothing,
        AttributeItem::LowerClothing,
        AttributeItem::FootItem,
        AttributeItem::Accessory,
    ];

    pub fn key(self) -> &'static str {
        match self {
            AttributeItem::HeadItem => "head_item",
            AttributeItem::UpperClothing => "upper_clothing",
            AttributeItem::LowerClothing => "lower_clothing",
            AttributeItem::FootItem => "foot_item",
            AttributeItem::Accessory => "accessory",
            AttributeItem::Gender => "gender",
        }
    }

    /// Human-readable slot name used by adjective prompt templates.
    pub fn display_name(self) -> &'static str {
        match self {
            AttributeItem::HeadItem => "head item",
            AttributeItem::UpperClothing => "upper clothing",
            AttributeItem::LowerClothing => "lower clothing",
            AttributeItem::FootItem => "foot item",
            AttributeItem::Accessory => "accessory",
            AttributeItem::Gender => "gender",
        }
    }
}

impl fmt::Display for AttributeItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Noun taxonomy that picks the predicate of noun prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NounCategory {
    GenderNoun,
    WearingNoun,
    DecorationNoun,
}

/// One extracted attribute phrase: adjectives plus an object noun.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributePhrase {
    pub adjectives: Vec<String>,
    pub noun: String,
    pub noun_category: NounCategory,
    pub attribute_item: AttributeItem,
    /// Half-open token range `[start, end)` in the tokenized caption,
    /// covering the adjective run (with any interior "and") and the noun.
    pub span: (usize, usize),
}

impl AttributePhrase {
    /// Phrase identity irrespective of where it sat in the caption.
    pub fn key(&self) -> (Vec<String>, String) {
        (self.adjectives.clone(), self.noun.clone())
    }

    /// Surface text: adjectives joined with "and", then the noun.
    pub fn surface(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        for (i, a) in self.adjectives.iter().enumerate() {
            if i > 0 {
                parts.push("and");
            }
            parts.push(a);
        }
        parts.push(&self.noun);
        parts.join(" ")
    }
}

/// Per-item entry of the lexicon file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub nouns: Vec<String>,
    #[serde(default)]
    pub adjectives: Vec<String>,
}

/// Closed vocabulary backing both the corpus generator and the parser.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: BTreeMap<AttributeItem, LexiconEntry>,
    noun_map: HashMap<String, (NounCategory, AttributeItem)>,
    adjective_set: HashSet<String>,
}

impl Lexicon {
    /// Build and validate a lexicon from per-item entries.
    ///
    /// Every one of the six items must be present, nouns must be unique
    /// across items, and no word may be both a noun and an adjective.
    pub fn new(entries: BTreeMap<AttributeItem, LexiconEntry>) -> Result<Self> {
        for item in AttributeItem::ALL {
            let entry = entries
                .get(&item)
                .ok_or_else(|| CoreError::Config(format!("lexicon is missing item {item}")))?;
            if entry.nouns.is_empty() {
                return Err(CoreError::Config(format!(
                    "lexicon item {item} has no nouns"
                )));
            }
        }
        let mut noun_map = HashMap::new();
        let mut adjective_set = HashSet::new();
        for (&item, entry) in &entries {
            let category = match item {
                AttributeItem::Gender => NounCategory::GenderNoun,
                AttributeItem::Accessory => NounCategory::DecorationNoun,
                _ => NounCategory::WearingNoun,
            };
            for noun in &entry.nouns {
                if noun_map.insert(noun.clone(), (category, item)).is_some() {
                    return Err(CoreError::Config(format!(
                        "noun {noun:?} appears under more than one item"
                    )));
                }
            }
            for adj in &entry.adjectives {
                adjective_set.insert(adj.clone());
            }
        }
        if let Some(w) = adjective_set.iter().find(|a| noun_map.contains_key(*a)) {
            return Err(CoreError::Config(format!(
                "word {w:?} is listed as both a noun and an adjective"
            )));
        }
        Ok(Lexicon {
            entries,
            noun_map,
            adjective_set,
        })
    }

    /// The built-in desk-scale lexicon.
    pub fn builtin() -> Lexicon {
        let mut entries = BTreeMap::new();
        let mut add = |item: AttributeItem, nouns: &[&str], adjectives: &[&str]| {
            entries.insert(
                item,
                LexiconEntry {
                    nouns: nouns.iter().map(|s| s.to_string()).collect(),
                    adjectives: adjectives.iter().map(|s| s.to_string()).collect(),
                },
            );
        };
        add(AttributeItem::Gender, &["man", "woman", "boy", "girl", "lady"], &[]);
        add(
            AttributeItem::UpperClothing,
            &[
                "shirt", "jacket", "sweater", "hoodie", "coat", "blouse", "vest", "cardigan",
                "polo", "tee",
            ],
            &[
                "red", "blue", "green", "black", "white", "yellow", "striped", "plaid", "baggy",
                "fitted", "denim", "leather", "floral", "gray",
            ],
        );
        add(
            AttributeItem::LowerClothing,
            &[
                "pants",
                "jeans",
                "shorts",
                "skirt",
                "trousers",
                "leggings",
                "sweatpants",
                "slacks",
            ],
            &[
                "black", "blue", "white", "khaki", "ripped", "pleated", "cropped", "checkered",
                "brown", "gray",
            ],
        );
        add(
            AttributeItem::HeadItem,
            &["hat", "cap", "beanie", "headband", "helmet", "visor"],
            &["red", "black", "white", "woolen", "purple", "knitted", "orange"],
        );
        add(
            AttributeItem::FootItem,
            &["sneakers", "boots", "sandals", "loafers", "heels", "slippers", "shoes"],
            &["white", "black", "brown", "muddy", "polished", "canvas", "pointed", "tan"],
        );
        add(
            AttributeItem::Accessory,
            &[
                "backpack",
                "handbag",
                "umbrella",
                "scarf",
                "watch",
                "necklace",
                "satchel",
                "briefcase",
                "glasses",
            ],
            &[
                "black", "silver", "golden", "patterned", "small", "large", "shiny", "beaded",
            ],
        );
        Lexicon::new(entries).expect("builtin lexicon is valid")
    }

    /// Load a lexicon from a JSON file mapping item -> {nouns, adjectives}.
    pub fn load(path: &Path) -> Result<Lexicon> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let raw: BTreeMap<String, LexiconEntry> =
            serde_json::from_str(&text).map_err(|e| CoreError::json(path, e))?;
        let mut entries = BTreeMap::new();
        for (key, entry) in raw {
            let item = AttributeItem::ALL
                .into_iter()
                .find(|i| i.key() == key)
                .ok_or_else(|| CoreError::Config(format!("unknown lexicon item {key:?}")))?;
            entries.insert(item, entry);
        }
        Lexicon::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let raw: BTreeMap<&str, &LexiconEntry> =
            self.entries.iter().map(|(i, e)| (i.key(), e)).collect();
        let text = serde_json::to_string_pretty(&raw).expect("lexicon serializes");
        std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
    }

    pub fn entry(&self, item: AttributeItem) -> &LexiconEntry {
        &self.entries[&item]
    }

    pub fn is_adjective(&self, word: &str) -> bool {
        self.adjective_set.contains(word)
    }

    pub fn noun_info(&self, noun: &str) -> Option<(NounCategory, AttributeItem)> {
        self.noun_map.get(noun).copied()
    }

    /// Every word the lexicon knows, sorted and deduplicated.
    pub fn all_words(&self) -> Vec<String> {
        let mut words: Vec<String> = self
            .noun_map
            .keys()
            .chain(self.adjective_set.iter())
            .cloned()
            .collect();
        words.sort();
        words.dedup();
        words
    }
}

/// Lowercase, strip punctuation, split on whitespace. Shared with the
/// encoder tokenizer so phrase spans line up with token positions.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|w| {
            let cleaned: String = w
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '\'')
                .flat_map(|c| c.to_lowercase())
                .collect();
            if cleaned.is_empty() {
                None
            } else {
                Some(cleaned)
            }
        })
        .collect()
}

/// Extract attribute phrases from caption text, left to right.
///
/// Never fails: captions with no lexicon hits yield an empty list.
pub fn parse_description(text: &str, lexicon: &Lexicon) -> Vec<AttributePhrase> {
    let tokens = tokenize(text);
    parse_tokens(&tokens, lexicon)
}

/// Same as [`parse_description`] over pre-tokenized words.
pub fn parse_tokens(tokens: &[String], lexicon: &Lexicon) -> Vec<AttributePhrase> {
    let mut phrases = Vec::new();
    let mut run: Vec<String> = Vec::new();
    let mut run_start = 0usize;

    for (i, tok) in tokens.iter().enumerate() {
        if lexicon.is_adjective(tok) {
            if run.is_empty() {
                run_start = i;
            }
            run.push(tok.clone());
        } else if let Some((category, item)) = lexicon.noun_info(tok) {
            let start = if run.is_empty() { i } else { run_start };
            phrases.push(AttributePhrase {
                adjectives: std::mem::take(&mut run),
                noun: tok.clone(),
                noun_category: category,
                attribute_item: item,
                span: (start, i + 1),
            });
        } else if tok == "and"
            && !run.is_empty()
            && tokens.get(i + 1).is_some_and(|next| lexicon.is_adjective(next))
        {
            // "and" joining two adjectives stays inside the run.
        } else {
            run.clear();
        }
    }
    phrases
}

/// Category and item of a known noun; unknown nouns are an error.
pub fn categorize_noun(noun: &str, lexicon: &Lexicon) -> Result<(NounCategory, AttributeItem)> {
    lexicon
        .noun_info(noun)
        .ok_or_else(|| CoreError::UnknownNoun(noun.to_string()))
}
