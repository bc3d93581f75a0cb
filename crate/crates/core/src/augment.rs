//! Synthetic examples for error clusters, generated from exemplars alone or
//! from exemplars plus a predicate.

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterSet;
use crate::corpus::{Dataset, LabeledExample, Origin};
use crate::error::{Error, Result};
use crate::error_analysis::ClusterErrorStats;
use crate::llm::templates::{format_examples, render, slot_map};
use crate::llm::{parse_generated_lines, AuditLog, LlmClient, TemplateName};
use crate::parallel::bounded_map;
use crate::refine::RefinementTrace;
use crate::rng::{sample_ordered, stream};

pub const MAX_PER_CLUSTER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMethod {
    /// Exemplars only.
    NoDesc,
    /// Exemplars plus the first predicate of the trace.
    FirstDesc,
    /// Exemplars plus the accepted predicate.
    RefinedDesc,
}

impl AugmentMethod {
    pub const ALL: [AugmentMethod; 3] = [
        AugmentMethod::NoDesc,
        AugmentMethod::FirstDesc,
        AugmentMethod::RefinedDesc,
    ];
}

impl fmt::Display for AugmentMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentMethod::NoDesc => "no_desc",
            AugmentMethod::FirstDesc => "first_desc",
            AugmentMethod::RefinedDesc => "refined_desc",
        })
    }
}

impl std::str::FromStr for AugmentMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AugmentMethod::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationBatch {
    pub cluster_id: String,
    pub method: AugmentMethod,
    pub predicate: Option<String>,
    pub requested: usize,
    pub raw_response: String,
    pub exchange_id: Option<String>,
    pub parsed: Vec<LabeledExample>,
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// One generator call. Parsed lines are deduplicated within the batch and
/// truncated to `n`.
pub fn generate_examples(
    generator: &LlmClient,
    method: AugmentMethod,
    predicate: Option<&str>,
    exemplars: &[String],
    n: usize,
    cluster_id: &str,
    label: &str,
) -> Result<GenerationBatch> {
    if n > MAX_PER_CLUSTER {
        return Err(Error::Bounds {
            what: format!("generated examples for {cluster_id}"),
            requested: n,
            available: MAX_PER_CLUSTER,
        });
    }
    let predicate = match (method, predicate) {
        (AugmentMethod::NoDesc, _) => None,
        (_, Some(p)) => Some(p.to_string()),
        (m, None) => {
            return Err(Error::Validation(format!(
                "{m} generation for {cluster_id} needs a predicate"
            )))
        }
    };
    let mut batch = GenerationBatch {
        cluster_id: cluster_id.to_string(),
        method,
        predicate: predicate.clone(),
        requested: n,
        raw_response: String::new(),
        exchange_id: None,
        parsed: Vec::new(),
    };
    if n == 0 {
        return Ok(batch);
    }
    if exemplars.is_empty() {
        return Err(Error::Validation(format!("no exemplars for {cluster_id}")));
    }
    let list = format_examples(exemplars);
    let prompt = match &predicate {
        None => render(TemplateName::GenFromExamples, &slot_map([("list_of_examples", list)]))?,
        Some(p) => render(
            TemplateName::GenFromPredicate,
            &slot_map([("predicate", p.clone()), ("list_of_examples", list)]),
        )?,
    };
    let ex = generator.complete(&prompt)?;
    let lines = parse_generated_lines(&ex.response);
    let total_lines = ex.response.lines().filter(|l| !l.trim().is_empty()).count();
    if lines.len() < total_lines {
        log::debug!("{cluster_id}: ignored {} unparsed lines", total_lines - lines.len());
    }
    if lines.is_empty() {
        return Err(Error::Generation { raw: ex.response });
    }
    let mut seen = HashSet::new();
    batch.parsed = lines
        .into_iter()
        .filter(|l| seen.insert(normalize(l)))
        .take(n)
        .enumerate()
        .map(|(k, text)| LabeledExample {
            id: format!("syn:{cluster_id}:{k}"),
            text,
            label: label.to_string(),
            origin: Origin::Synthetic,
            source_cluster: Some(cluster_id.to_string()),
        })
        .collect();
    batch.raw_response = ex.response;
    batch.exchange_id = Some(ex.id);
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub counts: IndexMap<String, usize>,
    /// Budget left over because every cluster reached the cap.
    pub dropped: usize,
}

/// Splits `total` across clusters in proportion to size (floored, capped),
/// then hands out the remainder one at a time by descending error rate.
pub fn allocate_budget(clusters: &[ClusterErrorStats], total: usize, cap: usize) -> Result<Allocation> {
    if total == 0 {
        return Ok(Allocation {
            counts: clusters.iter().map(|c| (c.cluster_id.clone(), 0)).collect(),
            dropped: 0,
        });
    }
    if clusters.is_empty() {
        return Err(Error::Allocation(format!("budget {total} but no accepted clusters")));
    }
    let size_sum: usize = clusters.iter().map(|c| c.size).sum();
    if size_sum == 0 {
        return Err(Error::Allocation("accepted clusters are empty".into()));
    }
    let mut counts: IndexMap<String, usize> = clusters
        .iter()
        .map(|c| {
            let share = (total as u128 * c.size as u128 / size_sum as u128) as usize;
            (c.cluster_id.clone(), share.min(cap))
        })
        .collect();
    let mut remaining = total - counts.values().sum::<usize>();
    let mut order: Vec<&ClusterErrorStats> = clusters.iter().collect();
    order.sort_by(|a, b| {
        b.misclassification_rate
            .total_cmp(&a.misclassification_rate)
            .then_with(|| a.cluster_id.cmp(&b.cluster_id))
    });
    while remaining > 0 {
        let mut gave = false;
        for c in &order {
            if remaining == 0 {
                break;
            }
            let n = counts.get_mut(&c.cluster_id).expect("allocated above");
            if *n < cap {
                *n += 1;
                remaining -= 1;
                gave = true;
            }
        }
        if !gave {
            break;
        }
    }
    if remaining > 0 {
        log::warn!("augmentation budget: {remaining} examples dropped, every cluster is at the cap");
    }
    Ok(Allocation {
        counts,
        dropped: remaining,
    })
}

/// Drops new examples whose normalized text matches an existing or earlier
/// new one. Order is kept.
pub fn dedup(new: Vec<LabeledExample>, existing: &[LabeledExample]) -> Vec<LabeledExample> {
    let mut seen: HashSet<String> = existing.iter().map(|e| normalize(&e.text)).collect();
    new.into_iter().filter(|e| seen.insert(normalize(&e.text))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub method: AugmentMethod,
    pub total: usize,
    pub per_cluster_cap: usize,
    pub exemplar_cap: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            method: AugmentMethod::RefinedDesc,
            total: 500,
            per_cluster_cap: MAX_PER_CLUSTER,
            exemplar_cap: 64,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_cluster_cap == 0 || self.per_cluster_cap > MAX_PER_CLUSTER {
            return Err(Error::Config(format!(
                "augment.per_cluster_cap must be in 1..={MAX_PER_CLUSTER}"
            )));
        }
        if self.exemplar_cap == 0 {
            return Err(Error::Config("augment.exemplar_cap must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentOutcome {
    pub allocation: Allocation,
    pub batches: Vec<GenerationBatch>,
    /// Every surviving synthetic example, in cluster order.
    pub examples: Vec<LabeledExample>,
}

/// Generates for every accepted cluster, then dedups against `existing` and
/// across clusters. Clusters whose trace was not accepted get nothing.
#[allow(clippy::too_many_arguments)]
pub fn augment_clusters(
    selected: &[ClusterErrorStats],
    traces: &[RefinementTrace],
    cluster_set: &ClusterSet,
    dataset: &Dataset,
    existing: &[LabeledExample],
    generator: &LlmClient,
    config: &AugmentConfig,
    seed: u64,
    parallelism: usize,
) -> Result<AugmentOutcome> {
    let accepted: Vec<(&ClusterErrorStats, &RefinementTrace)> = selected
        .iter()
        .filter_map(|s| {
            traces
                .iter()
                .find(|t| t.cluster_id == s.cluster_id && t.accepted())
                .map(|t| (s, t))
        })
        .collect();
    let stats: Vec<ClusterErrorStats> = accepted.iter().map(|(s, _)| (*s).clone()).collect();
    let allocation = if stats.is_empty() {
        Allocation {
            counts: IndexMap::new(),
            dropped: config.total,
        }
    } else {
        allocate_budget(&stats, config.total, config.per_cluster_cap)?
    };

    let shared = generator.audit().clone();
    let results = bounded_map(&accepted, parallelism, |(s, t)| {
        let local = AuditLog::new();
        let client = generator.with_audit(local.clone());
        let run = || -> Result<GenerationBatch> {
            let cluster = cluster_set
                .get(&s.cluster_id)
                .ok_or_else(|| Error::Validation(format!("unknown cluster {}", s.cluster_id)))?;
            let mut rng = stream(seed, &format!("augment/{}", s.cluster_id));
            let ids = sample_ordered(&cluster.member_ids, config.exemplar_cap, &mut rng);
            let exemplars = ids
                .iter()
                .map(|id| dataset.example(id).map(|e| e.text.clone()))
                .collect::<Result<Vec<_>>>()?;
            let predicate = match config.method {
                AugmentMethod::NoDesc => None,
                AugmentMethod::FirstDesc => t.first_predicate().map(|p| p.text.as_str()),
                AugmentMethod::RefinedDesc => t.accepted_predicate().map(|p| p.text.as_str()),
            };
            generate_examples(
                &client,
                config.method,
                predicate,
                &exemplars,
                allocation.counts.get(&s.cluster_id).copied().unwrap_or(0),
                &s.cluster_id,
                &s.class_label,
            )
        };
        (run(), local)
    });

    let mut batches = Vec::new();
    for (batch, local) in results {
        shared.extend(local.snapshot());
        batches.push(batch?);
    }
    let mut pool: Vec<LabeledExample> = existing.to_vec();
    let mut examples = Vec::new();
    for b in &batches {
        let kept = dedup(b.parsed.clone(), &pool);
        pool.extend(kept.iter().cloned());
        examples.extend(kept);
    }
    Ok(AugmentOutcome {
        allocation,
        batches,
        examples,
    })
}
