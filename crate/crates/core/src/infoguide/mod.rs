//! Manual question answering: ingestion (clean, chunk, keyword selection,
//! summary), hybrid cosine + Jaccard retrieval over the summarized
//! contexts, refusal below a score threshold, and template answers for
//! live anomaly and forecast questions.

mod calibrate;
mod client;
mod keywords;
pub mod text;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;
use std::time::Instant;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate_chunk_threshold, calibrate_refusal, Calibration, GRID};
pub use client::{GenerateRequest, GenerateResponse, GeneratorClient, TcpGeneratorClient, ANSWER_TEMPLATE, SUMMARY_TEMPLATE};
pub use keywords::{KeywordSet, SynonymTable, SEED_KEYWORDS};

use crate::live::LiveState;
use crate::Real;
use text::{clean_document, content_tokens, cosine, embed, jaccard, paragraphs, sentences, split_paragraph, token_set};

#[derive(Debug, thiserror::Error)]
pub enum InfoGuideError {
    #[error("ingestion: {0}")]
    Ingest(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("generator client: {0}")]
    Client(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfoGuideConfig {
    pub embedding_dim: usize,
    pub max_chars: usize,
    pub overlap: usize,
    /// Minimum keyword cosine for a chunk to be indexed.
    pub chunk_threshold: Real,
    /// Refusal threshold on the best combined score.
    pub tau: Real,
    pub k: usize,
    /// Weight of the cosine score in the combined score.
    pub alpha: Real,
    /// Sentences kept per chunk by the extractive summary.
    pub summary_sentences: usize,
    /// Sentences in an extractive answer.
    pub answer_sentences: usize,
}

impl Default for InfoGuideConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 256,
            max_chars: 1200,
            overlap: 100,
            chunk_threshold: 0.35,
            tau: 0.25,
            k: 3,
            alpha: 0.7,
            summary_sentences: 3,
            answer_sentences: 2,
        }
    }
}

impl InfoGuideConfig {
    pub fn validate(&self) -> Result<(), InfoGuideError> {
        let err = |m: &str| Err(InfoGuideError::Config(m.into()));
        if self.embedding_dim == 0 || self.k == 0 || self.summary_sentences == 0 || self.answer_sentences == 0 {
            return err("embedding_dim, k, summary_sentences and answer_sentences must be positive");
        }
        if self.overlap >= self.max_chars {
            return err("overlap must be smaller than max_chars");
        }
        if !(0.0..=1.0).contains(&self.alpha) || !(0.0..=1.0).contains(&self.chunk_threshold) {
            return err("alpha and chunk_threshold must lie in [0, 1]");
        }
        if !self.tau.is_finite() {
            return err("tau must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub text: String,
    pub source_doc: String,
    pub keywords_hit: BTreeSet<String>,
    pub embedding: Vec<Real>,
}

/// Chunk id of the `index`-th chunk of `doc`.
pub fn chunk_id(doc: &str, index: usize) -> String {
    format!("{doc}#{index:03}")
}

fn keyword_hits(text: &str, keywords: &KeywordSet) -> BTreeSet<String> {
    let tokens = token_set(text);
    keywords
        .expanded
        .iter()
        .filter(|k| tokens.contains(&text::lemmatize(k)))
        .cloned()
        .collect()
}

/// Cleans `doc` and cuts it into paragraph chunks of at most `max_chars`.
pub fn ingest_manual(
    doc_name: &str,
    doc: &str,
    keywords: &KeywordSet,
    config: &InfoGuideConfig,
) -> Result<Vec<Chunk>, InfoGuideError> {
    config.validate()?;
    let cleaned = clean_document(doc);
    let paras = paragraphs(&cleaned);
    if paras.is_empty() {
        return Err(InfoGuideError::Ingest(format!("{doc_name}: no text left after cleaning")));
    }
    let mut chunks = Vec::new();
    for p in paras {
        for piece in split_paragraph(&p, config.max_chars, config.overlap) {
            chunks.push(Chunk {
                chunk_id: chunk_id(doc_name, chunks.len()),
                keywords_hit: keyword_hits(&piece, keywords),
                embedding: embed(&piece, config.embedding_dim),
                source_doc: doc_name.to_string(),
                text: piece,
            });
        }
    }
    Ok(chunks)
}

/// Best cosine between the chunk and any single expanded keyword.
pub fn keyword_score(chunk: &Chunk, keywords: &KeywordSet, dim: usize) -> Real {
    keywords
        .expanded
        .iter()
        .map(|k| cosine(&chunk.embedding, &embed(k, dim)))
        .fold(0.0, Real::max)
}

/// Chunks scoring at least `threshold`, best first, ties by chunk id.
pub fn select_relevant_chunks(chunks: &[Chunk], keywords: &KeywordSet, threshold: Real) -> Vec<(Chunk, Real)> {
    let dim = chunks.first().map_or(0, |c| c.embedding.len());
    let kw: Vec<Vec<Real>> = keywords.expanded.iter().map(|k| embed(k, dim)).collect();
    let mut out: Vec<(Chunk, Real)> = chunks
        .iter()
        .map(|c| {
            let s = kw.iter().map(|k| cosine(&c.embedding, k)).fold(0.0, Real::max);
            (c.clone(), s)
        })
        .filter(|(_, s)| *s >= threshold)
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.chunk_id.cmp(&b.0.chunk_id)));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    ExternalLlm,
    ExtractiveFallback,
    LiveStateTemplate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub generator: Generator,
}

fn keyword_count(sentence: &str, lemmas: &BTreeSet<String>) -> usize {
    content_tokens(sentence).iter().filter(|t| lemmas.contains(*t)).count()
}

/// Top `n` sentences of each chunk by keyword hits (earlier first on ties),
/// restored to document order and concatenated.
pub fn extractive_summary(chunks: &[Chunk], keywords: &KeywordSet, n: usize) -> String {
    let lemmas = keywords.lemmas();
    let mut parts = Vec::new();
    for c in chunks {
        let sents = sentences(&c.text);
        let mut ranked: Vec<(usize, usize)> = sents
            .iter()
            .enumerate()
            .map(|(i, s)| (i, keyword_count(s, &lemmas)))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut keep: Vec<usize> = ranked.iter().take(n).map(|r| r.0).collect();
        keep.sort_unstable();
        parts.extend(keep.into_iter().map(|i| sents[i].clone()));
    }
    parts.join(" ")
}

/// Summary from the external client when it answers, else the extractive
/// fallback. Client failures are logged, never returned.
pub fn summarize(
    chunks: &[Chunk],
    keywords: &KeywordSet,
    client: Option<&dyn GeneratorClient>,
    config: &InfoGuideConfig,
) -> Result<Summary, InfoGuideError> {
    if chunks.is_empty() {
        return Err(InfoGuideError::Ingest("nothing to summarize".into()));
    }
    if let Some(c) = client {
        let req = GenerateRequest {
            template_id: SUMMARY_TEMPLATE.into(),
            query: keywords.seeds.join(", "),
            contexts: chunks.iter().map(|c| c.text.clone()).collect(),
        };
        match c.generate(&req) {
            Ok(text) if !text.trim().is_empty() => {
                return Ok(Summary {
                    text,
                    generator: Generator::ExternalLlm,
                })
            }
            Ok(_) => log::warn!("generator returned an empty summary; using extractive fallback"),
            Err(e) => log::warn!("generator unavailable ({e}); using extractive fallback"),
        }
    }
    Ok(Summary {
        text: extractive_summary(chunks, keywords, config.summary_sentences),
        generator: Generator::ExtractiveFallback,
    })
}

/// One retrievable context: the summary of a selected chunk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextDoc {
    pub chunk_id: String,
    pub source_doc: String,
    pub text: String,
    pub tokens: BTreeSet<String>,
    pub embedding: Vec<Real>,
}

impl ContextDoc {
    pub fn new(chunk_id: impl Into<String>, source_doc: impl Into<String>, text: impl Into<String>, dim: usize) -> Self {
        let text = text.into();
        Self {
            chunk_id: chunk_id.into(),
            source_doc: source_doc.into(),
            tokens: token_set(&text),
            embedding: embed(&text, dim),
            text,
        }
    }
}

/// Immutable retrieval index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InfoIndex {
    pub dim: usize,
    pub contexts: Vec<ContextDoc>,
    /// Chunks seen during ingestion, selected or not.
    pub chunk_count: usize,
}

impl InfoIndex {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            contexts: Vec::new(),
            chunk_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn get(&self, chunk_id: &str) -> Option<&ContextDoc> {
        self.contexts.iter().find(|c| c.chunk_id == chunk_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manual {
    pub name: String,
    pub text: String,
}

/// Reads every `.txt` and `.md` file of `dir`, sorted by file name. The
/// manual name is the file stem.
pub fn load_manuals(dir: impl AsRef<Path>) -> Result<Vec<Manual>, InfoGuideError> {
    let mut paths: Vec<_> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt" || x == "md"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            Ok(Manual {
                name: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                text: fs::read_to_string(&p)?,
            })
        })
        .collect()
}

/// Ingests, selects and summarizes every manual into an index with one
/// context per selected chunk.
pub fn build_index(
    manuals: &[Manual],
    keywords: &KeywordSet,
    client: Option<&dyn GeneratorClient>,
    config: &InfoGuideConfig,
) -> Result<InfoIndex, InfoGuideError> {
    config.validate()?;
    let mut chunks = Vec::new();
    for m in manuals {
        chunks.extend(ingest_manual(&m.name, &m.text, keywords, config)?);
    }
    let mut selected = select_relevant_chunks(&chunks, keywords, config.chunk_threshold);
    selected.sort_by(|a, b| a.0.chunk_id.cmp(&b.0.chunk_id));
    let mut contexts = Vec::with_capacity(selected.len());
    for (c, _) in selected {
        let summary = summarize(std::slice::from_ref(&c), keywords, client, config)?;
        contexts.push(ContextDoc::new(c.chunk_id, c.source_doc, summary.text, config.embedding_dim));
    }
    Ok(InfoIndex {
        dim: config.embedding_dim,
        contexts,
        chunk_count: chunks.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub chunk_id: String,
    pub neural_score: Real,
    pub symbolic_score: Real,
    pub combined: Real,
}

/// Top `k` contexts by `α·cosine + (1−α)·jaccard`, ties by chunk id.
pub fn retrieve(query: &str, index: &InfoIndex, k: usize, alpha: Real) -> Vec<RetrievalResult> {
    let q = embed(query, index.dim);
    let qt = token_set(query);
    let mut scored: Vec<RetrievalResult> = index
        .contexts
        .iter()
        .map(|c| {
            let neural = cosine(&q, &c.embedding);
            let symbolic = jaccard(&qt, &c.tokens);
            RetrievalResult {
                chunk_id: c.chunk_id.clone(),
                neural_score: neural,
                symbolic_score: symbolic,
                combined: alpha * neural + (1.0 - alpha) * symbolic,
            }
        })
        .collect();
    scored.sort_by(|a, b| b.combined.total_cmp(&a.combined).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    scored.truncate(k);
    scored
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStatus {
    Answered,
    Refused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub status: AnswerStatus,
    pub text: Option<String>,
    pub contexts: Vec<RetrievalResult>,
    /// Absent on refusal.
    pub generator: Option<Generator>,
    pub latency_ms: Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LiveIntent {
    AnomalyStatus,
    Forecast,
}

static ANOMALY_INTENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(current|latest|now|recent|live)\b.*\b(anomal\w*|status|fault\w*|prediction\w*)\b|\b(anomal\w*|fault\w*) (status|state)\b")
        .expect("anomaly intent regex")
});
static FORECAST_INTENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(forecast\w*|expected production|production (for )?(the )?next|next (hour|period)'?s? production)\b")
        .expect("forecast intent regex")
});

/// Live-state intent of a query, forecast first.
pub fn live_intent(query: &str) -> Option<LiveIntent> {
    if FORECAST_INTENT.is_match(query) {
        Some(LiveIntent::Forecast)
    } else if ANOMALY_INTENT.is_match(query) {
        Some(LiveIntent::AnomalyStatus)
    } else {
        None
    }
}

/// Deterministic live-state answer text.
pub fn live_answer_text(intent: LiveIntent, live: &LiveState) -> String {
    match intent {
        LiveIntent::AnomalyStatus => {
            let mut s = match &live.latest_prediction {
                None => "No prediction has been made yet.".to_string(),
                Some(p) => {
                    let prob = p.class_probs[p.predicted_class.index()];
                    let mut s = format!(
                        "Latest prediction at {}: {} (probability {prob:.2}).",
                        p.timestamp, p.predicted_class
                    );
                    if let Some(e) = &p.explanation {
                        let vars: Vec<String> = e
                            .responsible_variables
                            .iter()
                            .map(|v| format!("{} = {:.3} (expected {:.3} to {:.3})", v.variable, v.observed, v.expected_lo, v.expected_hi))
                            .collect();
                        if !vars.is_empty() {
                            s.push_str(&format!(" Responsible variables: {}.", vars.join("; ")));
                        }
                        s.push_str(&format!(" Cycle state {}: {}.", e.state_id, e.state_description));
                    }
                    s
                }
            };
            if let Some(i) = &live.latest_insight {
                s.push_str(&format!(
                    " Anomaly rate over the last {} predictions: {:.2}{}.",
                    i.window,
                    i.window_anomaly_rate,
                    if i.degraded { " (degraded)" } else { "" }
                ));
            }
            s
        }
        LiveIntent::Forecast => match &live.latest_forecast {
            None => "No production forecast is available yet.".to_string(),
            Some(f) => match f.forecasts.last() {
                None => format!("No production forecast is available yet for {}.", f.product_id),
                Some(v) => format!(
                    "Production forecast for {}: {v:.1} units next period (recent MAE {:.2}).",
                    f.product_id, f.mae
                ),
            },
        },
    }
}

/// Sentences of `context` sharing the most query tokens, earliest first on
/// ties, in document order. Falls back to the first sentence.
pub fn extractive_answer(query: &str, context: &str, n: usize) -> String {
    let qt = token_set(query);
    let sents = sentences(context);
    let mut ranked: Vec<(usize, usize)> = sents
        .iter()
        .enumerate()
        .map(|(i, s)| (i, token_set(s).intersection(&qt).count()))
        .filter(|r| r.1 > 0)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut keep: Vec<usize> = ranked.iter().take(n).map(|r| r.0).collect();
    if keep.is_empty() && !sents.is_empty() {
        keep.push(0);
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| sents[i].as_str()).collect::<Vec<_>>().join(" ")
}

/// Answers `query`. Live-state questions use templates; everything else is
/// retrieved and refused when the best combined score is below `tau`.
pub fn answer(
    query: &str,
    index: &InfoIndex,
    config: &InfoGuideConfig,
    client: Option<&dyn GeneratorClient>,
    live: Option<&LiveState>,
) -> Answer {
    let start = Instant::now();
    let elapsed = |start: Instant| start.elapsed().as_secs_f64() * 1e3;
    if let (Some(intent), Some(live)) = (live_intent(query), live) {
        return Answer {
            status: AnswerStatus::Answered,
            text: Some(live_answer_text(intent, live)),
            contexts: Vec::new(),
            generator: Some(Generator::LiveStateTemplate),
            latency_ms: elapsed(start),
        };
    }
    let contexts = retrieve(query, index, config.k, config.alpha);
    let best = contexts.first().map_or(Real::NEG_INFINITY, |r| r.combined);
    if contexts.is_empty() || best < config.tau {
        return Answer {
            status: AnswerStatus::Refused,
            text: None,
            contexts,
            generator: None,
            latency_ms: elapsed(start),
        };
    }
    let texts: Vec<String> = contexts
        .iter()
        .filter_map(|r| index.get(&r.chunk_id).map(|c| c.text.clone()))
        .collect();
    if let Some(c) = client {
        let req = GenerateRequest {
            template_id: ANSWER_TEMPLATE.into(),
            query: query.into(),
            contexts: texts.clone(),
        };
        match c.generate(&req) {
            Ok(text) if !text.trim().is_empty() => {
                return Answer {
                    status: AnswerStatus::Answered,
                    text: Some(text),
                    contexts,
                    generator: Some(Generator::ExternalLlm),
                    latency_ms: elapsed(start),
                }
            }
            Ok(_) => log::warn!("generator returned an empty answer; using extractive fallback"),
            Err(e) => log::warn!("generator unavailable ({e}); using extractive fallback"),
        }
    }
    Answer {
        status: AnswerStatus::Answered,
        text: Some(extractive_answer(query, &texts[0], config.answer_sentences)),
        contexts,
        generator: Some(Generator::ExtractiveFallback),
        latency_ms: elapsed(start),
    }
}
