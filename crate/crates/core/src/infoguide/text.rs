//! Cleaning, paragraph chunking, tokenization and the hashed embedding.

use std::collections::{BTreeSet, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use crate::Real;

/// Page separator in plain-text manuals.
pub const PAGE_BREAK: char = '\u{c}';
/// Lines shared by at least this many pages are headers or footers.
pub const REPEATED_LINE_PAGES: usize = 3;

static PAGE_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(page\s+)?\d{1,4}(\s*(of|/)\s*\d{1,4})?$").expect("page regex"));
static SYMBOL_RUN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[^\w\s.,;:()'%/-]{3,}|[-=_~*#]{3,}").expect("symbol regex"));
static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[a-z0-9]+").expect("token regex"));
static SENTENCE_END: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?](\s+|$)").expect("sentence regex"));

const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "before",
    "being", "both", "but", "by", "can", "could", "did", "do", "does", "during", "each", "every", "for",
    "from", "had", "has", "have", "how", "if", "in", "into", "is", "it", "its", "may", "must", "no",
    "not", "of", "on", "once", "only", "or", "other", "our", "out", "over", "per", "shall", "should",
    "so", "such", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this",
    "those", "through", "to", "under", "until", "up", "upon", "use", "used", "using", "was", "we",
    "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "within",
    "without", "would", "you", "your",
];

fn is_stopword(t: &str) -> bool {
    STOPWORDS.binary_search(&t).is_ok()
}

/// Strips standalone page numbers, lines repeated on at least
/// [`REPEATED_LINE_PAGES`] pages, and decorative symbol runs. Paragraph
/// breaks (blank lines) are kept; page breaks become paragraph breaks.
pub fn clean_document(doc: &str) -> String {
    let pages: Vec<&str> = doc.split(PAGE_BREAK).collect();
    let mut seen_on: HashMap<&str, usize> = HashMap::new();
    for page in &pages {
        let distinct: BTreeSet<&str> = page.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        for l in distinct {
            *seen_on.entry(l).or_default() += 1;
        }
    }
    let mut out = Vec::new();
    for page in &pages {
        for line in page.lines() {
            let t = line.trim();
            if t.is_empty() {
                out.push(String::new());
                continue;
            }
            if PAGE_NUMBER.is_match(t) || seen_on.get(t).copied().unwrap_or(0) >= REPEATED_LINE_PAGES {
                continue;
            }
            let stripped = SYMBOL_RUN.replace_all(t, " ");
            let collapsed = stripped.split_whitespace().collect::<Vec<_>>().join(" ");
            if collapsed.chars().any(char::is_alphanumeric) {
                out.push(collapsed);
            } else {
                out.push(String::new());
            }
        }
        out.push(String::new());
    }
    out.join("\n")
}

/// Paragraphs of cleaned text: blank-line separated, inner lines joined by
/// single spaces.
pub fn paragraphs(cleaned: &str) -> Vec<String> {
    let mut paras = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for line in cleaned.lines().chain(std::iter::once("")) {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                paras.push(cur.join(" "));
                cur.clear();
            }
        } else {
            cur.push(line.trim());
        }
    }
    paras
}

/// Splits one paragraph into pieces of at most `max_chars` characters,
/// consecutive pieces sharing `overlap` characters. A paragraph that fits
/// is returned whole.
pub fn split_paragraph(paragraph: &str, max_chars: usize, overlap: usize) -> Vec<String> {
    let chars: Vec<char> = paragraph.chars().collect();
    if chars.len() <= max_chars {
        return vec![paragraph.to_string()];
    }
    let step = max_chars - overlap;
    let mut pieces = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + max_chars).min(chars.len());
        pieces.push(chars[start..end].iter().collect::<String>());
        if end == chars.len() {
            break;
        }
        start += step;
    }
    pieces
}

/// Suffix-stripping lemmatizer. Plural endings go first (`-ies → -y`,
/// `-es` after a sibilant, `-s`), then `-ing` and `-ed` when at least four
/// characters remain.
pub fn lemmatize(token: &str) -> String {
    if let Some(stem) = token.strip_suffix("ies").filter(|s| s.len() >= 3) {
        return format!("{stem}y");
    }
    let t = token
        .strip_suffix("es")
        .filter(|s| s.len() >= 3 && ["s", "x", "z", "ch", "sh"].iter().any(|e| s.ends_with(e)))
        .or_else(|| {
            token
                .strip_suffix('s')
                .filter(|s| s.len() >= 3 && !["s", "u", "i"].iter().any(|e| s.ends_with(e)))
        })
        .unwrap_or(token);
    ["ing", "ed"]
        .iter()
        .find_map(|suffix| t.strip_suffix(suffix).filter(|s| s.len() >= 4))
        .unwrap_or(t)
        .to_string()
}

/// Lowercased alphanumeric tokens with stopwords removed, lemmatized.
pub fn content_tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    TOKEN
        .find_iter(&lower)
        .map(|m| m.as_str())
        .filter(|t| !is_stopword(t))
        .map(lemmatize)
        .collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    content_tokens(text).into_iter().collect()
}

fn bucket(token: &str, dim: usize) -> usize {
    let digest = Sha256::digest(token.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(b) % dim as u64) as usize
}

/// Hashed term-frequency embedding of the content tokens, L2-normalized.
/// Text without content tokens embeds to the zero vector.
pub fn embed(text: &str, dim: usize) -> Vec<Real> {
    let mut v = vec![0.0; dim];
    for t in content_tokens(text) {
        v[bucket(&t, dim)] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<Real>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Dot product; the cosine for normalized embeddings.
pub fn cosine(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|a ∩ b| / |a ∪ b|`, 0 for two empty sets.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Real {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as Real / union as Real
    }
}

/// Sentences of a paragraph, terminators kept.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    for m in SENTENCE_END.find_iter(text) {
        let s = text[start..m.end()].trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
        start = m.end();
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out
}
