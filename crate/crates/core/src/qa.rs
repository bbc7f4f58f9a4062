//! Answering "how many ...?" questions with per-category counts.
//!
//! The first content word of the question is taken as the noun, matched to
//! the nearest category or super-category name by cosine similarity of word
//! embeddings, and answered with that category's count or the sum over the
//! super-category's members.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryTable, EmbeddingTable, SceneAnnotation};
use crate::gridgt::ImageCounts;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountQuestion {
    pub image_id: u64,
    pub question: String,
    pub answer: u64,
    /// Pre-resolved noun; when present it is used instead of extraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun: Option<String>,
}

const STOP_WORDS: &[&str] = &[
    "a", "all", "an", "and", "any", "are", "as", "at", "be", "by", "can", "could", "count", "do", "does", "for",
    "from", "has", "have", "here", "how", "i", "image", "in", "into", "is", "it", "many", "much", "near", "number",
    "of", "on", "one", "photo", "picture", "scene", "see", "seen", "shown", "that", "the", "their", "there", "these",
    "this", "those", "to", "total", "under", "visible", "we", "what", "which", "with", "you",
];

const INTERROGATIVES: &[&str] = &["how", "what", "when", "where", "which", "who", "whom", "whose", "why"];

/// Plurals that the suffix rule gets wrong, with their singular.
const IRREGULAR: &[(&str, &str)] = &[
    ("bus", "bus"),
    ("buses", "bus"),
    ("children", "child"),
    ("compass", "compass"),
    ("crosses", "cross"),
    ("deer", "deer"),
    ("fish", "fish"),
    ("geese", "goose"),
    ("glasses", "glass"),
    ("knives", "knife"),
    ("men", "man"),
    ("mice", "mouse"),
    ("people", "person"),
    ("sheep", "sheep"),
    ("skis", "skis"),
    ("teeth", "tooth"),
    ("women", "woman"),
];

pub fn singularize(word: &str) -> String {
    if let Some((_, s)) = IRREGULAR.iter().find(|(p, _)| *p == word) {
        return (*s).to_string();
    }
    if word.len() > 3 && word.ends_with("ies") {
        return format!("{}y", &word[..word.len() - 3]);
    }
    for suffix in ["ches", "shes", "sses", "xes", "zes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.len() > 1 && word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// First token that is neither a stop word nor an interrogative, lowercased
/// and singularized.
pub fn extract_noun(question: &str) -> Result<String> {
    if question.trim().is_empty() {
        return Err(Error::Resolution("empty question".into()));
    }
    question
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .map(|t| t.trim_matches(|c| c == '\'' || c == '-').to_lowercase())
        .filter(|t| !t.is_empty() && t.chars().any(char::is_alphabetic))
        .find(|t| !STOP_WORDS.contains(&t.as_str()) && !INTERROGATIVES.contains(&t.as_str()))
        .map(|t| singularize(&t))
        .ok_or_else(|| Error::Resolution(format!("no candidate noun in {question:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    Category,
    Supercategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedTarget {
    pub kind: TargetKind,
    pub name: String,
    /// Category indices: one for a category, the members for a super-category.
    pub indices: Vec<usize>,
    pub similarity: f64,
}

impl fmt::Display for ResolvedTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TargetKind::Category => write!(f, "{}", self.name),
            TargetKind::Supercategory => write!(f, "{} (super-category)", self.name),
        }
    }
}

/// Mean of the word vectors of a possibly multi-word name.
fn phrase_vector(phrase: &str, embeddings: &EmbeddingTable) -> Result<Vec<f64>> {
    let words: Vec<&str> = phrase.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::Resolution("empty name".into()));
    }
    let mut sum = vec![0.0; embeddings.dim()];
    for w in &words {
        let v = embeddings
            .get(w)
            .or_else(|| embeddings.get(&w.to_lowercase()))
            .ok_or_else(|| Error::Resolution(format!("{w:?} is not in the embedding table")))?;
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = words.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Nearest category or super-category name to `noun`. Exact ties prefer
/// categories, then the lexicographically smaller name.
pub fn resolve_category(noun: &str, embeddings: &EmbeddingTable, categories: &CategoryTable) -> Result<ResolvedTarget> {
    let query = phrase_vector(noun, embeddings)?;
    let mut cats: Vec<(String, Vec<usize>)> = categories
        .entries()
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.clone(), vec![i]))
        .collect();
    cats.sort();
    let mut sups: Vec<(String, Vec<usize>)> = categories
        .supercategories()
        .into_iter()
        .filter(|s| !s.is_empty())
        .map(|s| (s.to_string(), categories.members(s)))
        .collect();
    sups.sort();
    let candidates = cats
        .into_iter()
        .map(|(n, i)| (TargetKind::Category, n, i))
        .chain(sups.into_iter().map(|(n, i)| (TargetKind::Supercategory, n, i)));
    let mut best: Option<ResolvedTarget> = None;
    for (kind, name, indices) in candidates {
        let similarity = cosine(&query, &phrase_vector(&name, embeddings)?);
        if best.as_ref().map_or(true, |b| similarity > b.similarity) {
            best = Some(ResolvedTarget {
                kind,
                name,
                indices,
                similarity,
            });
        }
    }
    best.ok_or_else(|| Error::Resolution("no category to resolve against".into()))
}

/// Count for the target: the category's own count or the sum over members.
pub fn answer_count(target: &ResolvedTarget, counts: &ImageCounts) -> u64 {
    let total: f64 = target.indices.iter().map(|&k| counts.get(k)).sum();
    total.max(0.0).round() as u64
}

fn question_noun(q: &CountQuestion) -> Result<String> {
    match &q.noun {
        Some(n) => Ok(n.to_lowercase()),
        None => extract_noun(&q.question),
    }
}

/// Keeps the questions whose resolved target has a ground-truth count equal
/// to the stated answer. Questions that cannot be resolved or refer to an
/// unknown image are dropped.
pub fn build_countqa(
    questions: &[CountQuestion],
    scenes: &[SceneAnnotation],
    embeddings: &EmbeddingTable,
    categories: &CategoryTable,
) -> Vec<CountQuestion> {
    let gts: BTreeMap<u64, ImageCounts> = scenes
        .iter()
        .map(|s| (s.image_id, ImageCounts(s.instance_counts(categories))))
        .collect();
    questions
        .iter()
        .filter(|q| {
            let Some(gt) = gts.get(&q.image_id) else {
                log::warn!("question on unknown image {} dropped", q.image_id);
                return false;
            };
            match question_noun(q).and_then(|n| resolve_category(&n, embeddings, categories)) {
                Ok(target) => answer_count(&target, gt) == q.answer,
                Err(e) => {
                    log::warn!("question {:?} dropped: {e}", q.question);
                    false
                }
            }
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaAnswer {
    pub image_id: u64,
    pub question: String,
    pub noun: String,
    pub target: ResolvedTarget,
    pub predicted: u64,
    pub answer: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub answers: Vec<QaAnswer>,
    pub rmse: f64,
}

/// Answers every question from post-processed per-image counts.
pub fn answer_questions(
    questions: &[CountQuestion],
    counts: &BTreeMap<u64, ImageCounts>,
    embeddings: &EmbeddingTable,
    categories: &CategoryTable,
) -> Result<QaReport> {
    if questions.is_empty() {
        return Err(Error::Empty("no questions to answer".into()));
    }
    let mut answers = Vec::with_capacity(questions.len());
    for q in questions {
        let c = counts
            .get(&q.image_id)
            .ok_or_else(|| Error::Schema(format!("no counts for image {}", q.image_id)))?;
        let noun = question_noun(q)?;
        let target = resolve_category(&noun, embeddings, categories)?;
        answers.push(QaAnswer {
            image_id: q.image_id,
            question: q.question.clone(),
            predicted: answer_count(&target, c),
            answer: q.answer,
            noun,
            target,
        });
    }
    let mse = answers
        .iter()
        .map(|a| (a.predicted as f64 - a.answer as f64).powi(2))
        .sum::<f64>()
        / answers.len() as f64;
    Ok(QaReport { answers, rmse: mse.sqrt() })
}

pub fn load_questions(path: impl AsRef<Path>) -> Result<Vec<CountQuestion>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn save_questions(path: impl AsRef<Path>, questions: &[CountQuestion]) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(questions).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Random word vectors for every category and super-category name. In high
/// enough dimension distinct names are close to orthogonal, so each name
/// resolves to itself.
pub fn synthetic_embeddings(categories: &CategoryTable, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut rng = rng::stream(seed, "embeddings");
    let mut words: Vec<String> = categories
        .entries()
        .iter()
        .flat_map(|c| c.name.split_whitespace().chain(c.supercategory.split_whitespace()))
        .map(str::to_string)
        .collect();
    words.sort();
    words.dedup();
    let mut table = EmbeddingTable::new(dim);
    for w in words {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        table.insert(&w, v)?;
    }
    Ok(table)
}

fn plural(word: &str) -> String {
    if let Some((p, _)) = IRREGULAR.iter().find(|(p, s)| *s == word && p != s) {
        return (*p).to_string();
    }
    if word.ends_with('s') || word.ends_with('x') || word.ends_with("ch") || word.ends_with("sh") {
        format!("{word}es")
    } else {
        format!("{word}s")
    }
}

/// One category question and one super-category question per scene, with
/// answers taken from the ground truth.
pub fn synthetic_questions(scenes: &[SceneAnnotation], categories: &CategoryTable, seed: u64) -> Vec<CountQuestion> {
    let mut rng = rng::stream(seed, "questions");
    let sups: Vec<String> = categories
        .supercategories()
        .into_iter()
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let mut out = Vec::new();
    for scene in scenes {
        let counts = scene.instance_counts(categories);
        if categories.is_empty() {
            break;
        }
        let k = rng.gen_range(0..categories.len());
        let name = &categories.entries()[k].name;
        out.push(CountQuestion {
            image_id: scene.image_id,
            question: format!("how many {} are there?", plural(name)),
            answer: counts[k] as u64,
            noun: None,
        });
        if let Some(sup) = sups.choose(&mut rng) {
            let answer = categories.members(sup).iter().map(|&m| counts[m]).sum::<f64>() as u64;
            out.push(CountQuestion {
                image_id: scene.image_id,
                question: format!("how many {sup} shapes are in the picture?"),
                answer,
                noun: None,
            });
        }
    }
    out
}
