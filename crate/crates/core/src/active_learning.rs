//! Picking pool examples to annotate. Annotation reveals the stored gold
//! label of a pool example.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use indexmap::IndexMap;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::classifier::PredictionRecord;
use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::llm::templates::{render, slot_map};
use crate::llm::{parse_yes_no, LlmClient, TemplateName};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Confidence,
    DescriptionMatch,
    SimilarityRank,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Random,
        Strategy::Confidence,
        Strategy::DescriptionMatch,
        Strategy::SimilarityRank,
    ];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Confidence => "confidence",
            Strategy::DescriptionMatch => "description_match",
            Strategy::SimilarityRank => "similarity_rank",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown selection strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: Strategy,
    pub selected_ids: Vec<String>,
    pub per_id_score: Option<IndexMap<String, f64>>,
}

fn check_k(k: usize, pool: usize) -> Result<()> {
    if k > pool {
        return Err(Error::Bounds {
            what: "pool selection".into(),
            requested: k,
            available: pool,
        });
    }
    Ok(())
}

/// Uniform draw without replacement.
pub fn select_random(pool_ids: &[String], k: usize, seed: u64) -> Result<SelectionResult> {
    check_k(k, pool_ids.len())?;
    let mut rng = stream(seed, "select/random");
    let picked = sample(&mut rng, pool_ids.len(), k);
    Ok(SelectionResult {
        strategy: Strategy::Random,
        selected_ids: picked.into_iter().map(|i| pool_ids[i].clone()).collect(),
        per_id_score: None,
    })
}

/// Lowest confidence first; ties by id.
pub fn select_least_confidence(pool_predictions: &[PredictionRecord], k: usize) -> Result<SelectionResult> {
    check_k(k, pool_predictions.len())?;
    let mut scored: Vec<(&str, f64)> = pool_predictions
        .iter()
        .map(|p| (p.example_id.as_str(), p.confidence()))
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(k);
    Ok(SelectionResult {
        strategy: Strategy::Confidence,
        selected_ids: scored.iter().map(|(id, _)| id.to_string()).collect(),
        per_id_score: Some(scored.into_iter().map(|(id, s)| (id.to_string(), s)).collect()),
    })
}

/// Pool examples that satisfy at least one predicate, ordered by id and
/// optionally capped.
pub fn select_by_description(
    pool: &[&LabeledExample],
    predicates: &[String],
    evaluator: &LlmClient,
    cap: Option<usize>,
) -> Result<SelectionResult> {
    if predicates.is_empty() {
        return Err(Error::Validation(
            "description matching needs at least one accepted predicate".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(pool.len() * predicates.len());
    let mut prompts = Vec::with_capacity(pairs.capacity());
    for p in predicates {
        for e in pool {
            prompts.push(render(
                TemplateName::AlignmentCheck,
                &slot_map([("example", e.text.clone()), ("description", p.clone())]),
            )?);
            pairs.push(e.id.as_str());
        }
    }
    let answers = evaluator.complete_all(&prompts)?;
    let matched: BTreeSet<&str> = pairs
        .into_iter()
        .zip(&answers)
        .filter(|(_, a)| parse_yes_no(&a.response))
        .map(|(id, _)| id)
        .collect();
    let mut selected_ids: Vec<String> = matched.into_iter().map(str::to_string).collect();
    if let Some(cap) = cap {
        selected_ids.truncate(cap);
    }
    Ok(SelectionResult {
        strategy: Strategy::DescriptionMatch,
        selected_ids,
        per_id_score: None,
    })
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(rename = "K")]
    pub k: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRanking {
    pub ranked_ids: Vec<String>,
    pub similarities: Vec<f64>,
    pub curve: Vec<CurvePoint>,
}

/// Ranks the pool by descending cosine similarity to `query` (ties by id)
/// and reports the misclassification rate among the top K for each K.
/// K values above the pool size are clamped.
pub fn rank_by_similarity(
    query: &[f64],
    pool: &[(String, Vec<f64>)],
    predictions: &HashMap<String, PredictionRecord>,
    gold: &HashMap<String, String>,
    ks: &[usize],
) -> Result<SimilarityRanking> {
    let mut scored = Vec::with_capacity(pool.len());
    for (id, v) in pool {
        if v.len() != query.len() {
            return Err(Error::Validation(format!(
                "embedding of {id} has dimension {} (query has {})",
                v.len(),
                query.len()
            )));
        }
        if v.iter().all(|x| *x == 0.0) {
            log::debug!("{id}: zero-norm embedding, similarity set to 0");
        }
        scored.push((id.as_str(), cosine(query, v)));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let wrong: Vec<bool> = scored
        .iter()
        .map(|(id, _)| {
            let p = predictions
                .get(*id)
                .ok_or_else(|| Error::Validation(format!("no prediction for {id}")))?;
            let g = gold
                .get(*id)
                .ok_or_else(|| Error::Validation(format!("no gold label for {id}")))?;
            Ok(p.predicted_label != *g)
        })
        .collect::<Result<_>>()?;
    let curve = curve_from_indicators(&wrong, ks);
    Ok(SimilarityRanking {
        ranked_ids: scored.iter().map(|(id, _)| id.to_string()).collect(),
        similarities: scored.iter().map(|(_, s)| *s).collect(),
        curve,
    })
}

/// Misclassification rate over each prefix length in `ks`, from ranked
/// correctness indicators.
pub fn curve_from_indicators(wrong: &[bool], ks: &[usize]) -> Vec<CurvePoint> {
    if wrong.is_empty() {
        return Vec::new();
    }
    let mut prefix = vec![0usize; wrong.len() + 1];
    for (i, w) in wrong.iter().enumerate() {
        prefix[i + 1] = prefix[i] + usize::from(*w);
    }
    ks.iter()
        .map(|&k| k.clamp(1, wrong.len()))
        .map(|k| CurvePoint {
            k,
            rate: prefix[k] as f64 / k as f64,
        })
        .collect()
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("K,rate\n");
    for p in curve {
        out.push_str(&format!("{},{}\n", p.k, p.rate));
    }
    out
}
