use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::lemmatize;
use super::InfoGuideError;

/// Seed keywords for manual content worth indexing.
pub const SEED_KEYWORDS: [&str; 8] = [
    "safety",
    "maintenance",
    "operation",
    "installation",
    "inspection",
    "warning",
    "danger",
    "caution",
];

const BUILTIN_SYNONYMS: &str = include_str!("../../data/synonyms.json");

/// Seed keyword → synonyms.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SynonymTable(pub BTreeMap<String, Vec<String>>);

impl SynonymTable {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_SYNONYMS).expect("bundled synonym table is valid JSON")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InfoGuideError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| InfoGuideError::Format(format!("synonym table: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordSet {
    /// Seeds in the order given, duplicates removed.
    pub seeds: Vec<String>,
    /// Seeds, their synonyms, and the lemmas of both.
    pub expanded: BTreeSet<String>,
}

impl KeywordSet {
    pub fn new<S: AsRef<str>>(seeds: &[S], table: &SynonymTable) -> Self {
        let mut ordered: Vec<String> = Vec::new();
        for s in seeds {
            let s = s.as_ref().trim().to_lowercase();
            if !s.is_empty() && !ordered.contains(&s) {
                ordered.push(s);
            }
        }
        let mut expanded = BTreeSet::new();
        for s in &ordered {
            expanded.insert(s.clone());
            for syn in table.0.get(s).into_iter().flatten() {
                let syn = syn.trim().to_lowercase();
                if !syn.is_empty() {
                    expanded.insert(syn);
                }
            }
        }
        let lemmas: Vec<String> = expanded.iter().map(|k| lemmatize(k)).collect();
        expanded.extend(lemmas);
        Self { seeds: ordered, expanded }
    }

    /// Lemmas of the expanded set, the form content tokens take.
    pub fn lemmas(&self) -> BTreeSet<String> {
        self.expanded.iter().map(|k| lemmatize(k)).collect()
    }
}

impl Default for KeywordSet {
    fn default() -> Self {
        Self::new(&SEED_KEYWORDS, &SynonymTable::builtin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_contained_in_expansion() {
        let k = KeywordSet::default();
        assert_eq!(k.seeds.len(), 8);
        assert!(k.seeds.iter().all(|s| k.expanded.contains(s)));
        assert!(k.expanded.contains("hazard"));
        assert!(k.expanded.contains("inspect"));
    }

    #[test]
    fn seeds_are_normalized_and_deduplicated() {
        let k = KeywordSet::new(&[" Safety", "safety", "WARNING "], &SynonymTable::default());
        assert_eq!(k.seeds, vec!["safety", "warning"]);
        assert!(k.expanded.iter().all(|w| w == w.trim() && *w == w.to_lowercase()));
    }
}
