//! Per-cluster misclassification statistics and error-cluster selection.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::classifier::PredictionRecord;
use crate::clustering::ClusterSet;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterErrorStats {
    pub cluster_id: String,
    pub class_label: String,
    pub size: usize,
    pub misclassification_rate: f64,
    pub base_rate: f64,
    /// `misclassification_rate > base_rate && size >= min_cluster_size`
    pub selected: bool,
}

pub type PredictionIndex = HashMap<String, PredictionRecord>;

pub fn index_predictions(preds: &[PredictionRecord]) -> PredictionIndex {
    preds.iter().map(|p| (p.example_id.clone(), p.clone())).collect()
}

pub fn misclassification_rate(
    predictions: &PredictionIndex,
    member_ids: &[String],
    gold: &HashMap<String, String>,
) -> Result<f64> {
    if member_ids.is_empty() {
        return Err(Error::Validation(
            "misclassification rate of an empty member list".into(),
        ));
    }
    let mut wrong = 0usize;
    for id in member_ids {
        let p = predictions
            .get(id)
            .ok_or_else(|| Error::Validation(format!("no prediction for {id:?}")))?;
        let g = gold
            .get(id)
            .ok_or_else(|| Error::Validation(format!("no gold label for {id:?}")))?;
        if p.predicted_label != *g {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / member_ids.len() as f64)
}

/// Stats for every cluster, ordered by (class label, ordinal). The base rate
/// is the error rate over `validation_ids`.
pub fn cluster_error_stats(
    cluster_set: &ClusterSet,
    predictions: &PredictionIndex,
    gold: &HashMap<String, String>,
    validation_ids: &[String],
    min_cluster_size: usize,
) -> Result<Vec<ClusterErrorStats>> {
    let base_rate = misclassification_rate(predictions, validation_ids, gold)?;
    let mut clusters: Vec<_> = cluster_set.clusters.iter().collect();
    clusters.sort_by(|a, b| a.class_label.cmp(&b.class_label).then(a.ordinal().cmp(&b.ordinal())));
    clusters
        .into_iter()
        .map(|c| {
            let rate = misclassification_rate(predictions, &c.member_ids, gold)?;
            Ok(ClusterErrorStats {
                cluster_id: c.id.clone(),
                class_label: c.class_label.clone(),
                size: c.member_ids.len(),
                misclassification_rate: rate,
                base_rate,
                selected: rate > base_rate && c.member_ids.len() >= min_cluster_size,
            })
        })
        .collect()
}

/// Clusters whose error rate strictly exceeds the base rate and that have at
/// least `min_cluster_size` members.
pub fn select_error_clusters(
    cluster_set: &ClusterSet,
    predictions: &PredictionIndex,
    gold: &HashMap<String, String>,
    validation_ids: &[String],
    min_cluster_size: usize,
) -> Result<Vec<ClusterErrorStats>> {
    Ok(
        cluster_error_stats(cluster_set, predictions, gold, validation_ids, min_cluster_size)?
            .into_iter()
            .filter(|s| s.selected)
            .collect(),
    )
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Median error rate over the selected clusters, `None` when none is selected.
pub fn median_erroneous_rate(stats: &[ClusterErrorStats]) -> Option<f64> {
    let rates: Vec<f64> = stats
        .iter()
        .filter(|s| s.selected)
        .map(|s| s.misclassification_rate)
        .collect();
    median(&rates)
}
