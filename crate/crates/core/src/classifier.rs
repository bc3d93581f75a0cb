//! Classifier abstraction.
//!
//! The built-in model is a nearest-centroid classifier in embedding space:
//! one mean vector per class, probabilities from a softmax over negative
//! Euclidean distances. The remote adapter delegates training and prediction
//! to an HTTP service that hosts a real fine-tuned model.

use std::collections::HashMap;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{EmbeddingTable, LabeledExample};
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub predicted_label: String,
    /// Class → probability, in label-set order.
    pub probabilities: IndexMap<String, f64>,
}

impl PredictionRecord {
    /// Builds a record whose predicted label is the argmax, ties going to the
    /// earlier class.
    pub fn from_probabilities(example_id: impl Into<String>, probabilities: IndexMap<String, f64>) -> Self {
        let mut best: Option<(&String, f64)> = None;
        for (label, &p) in &probabilities {
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((label, p));
            }
        }
        let predicted_label = best.map(|(l, _)| l.clone()).unwrap_or_default();
        Self {
            example_id: example_id.into(),
            predicted_label,
            probabilities,
        }
    }

    /// Maximum class probability.
    pub fn confidence(&self) -> f64 {
        self.probabilities.values().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    BuiltinCentroid,
    Remote,
}

/// How to obtain a classifier; part of the run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierSpec {
    #[default]
    BuiltinCentroid,
    Remote {
        base_url: String,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidModel {
    pub label_set: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
}

impl CentroidModel {
    pub fn fit(label_set: &[String], examples: &[&LabeledExample], embeddings: &EmbeddingTable) -> Result<Self> {
        let index: HashMap<&str, usize> = label_set.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut sums: Vec<Option<Vec<f64>>> = vec![None; label_set.len()];
        let mut counts = vec![0usize; label_set.len()];
        for ex in examples {
            let c = *index
                .get(ex.label.as_str())
                .ok_or_else(|| Error::Training(format!("example {:?} has unknown label {:?}", ex.id, ex.label)))?;
            let v = embeddings.vector(&ex.id)?;
            let sum = sums[c].get_or_insert_with(|| vec![0.0; v.len()]);
            if sum.len() != v.len() {
                return Err(Error::Training(format!(
                    "embedding of {:?} has the wrong dimension",
                    ex.id
                )));
            }
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            counts[c] += 1;
        }
        let centroids = sums
            .into_iter()
            .zip(&counts)
            .zip(label_set)
            .map(|((sum, &n), label)| {
                let sum = sum.ok_or_else(|| Error::Training(format!("class {label:?} has no training examples")))?;
                Ok(sum.into_iter().map(|s| s / n as f64).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Self {
            label_set: label_set.to_vec(),
            centroids,
        })
    }

    pub fn predict_vector(&self, id: &str, v: &[f64]) -> PredictionRecord {
        let dists: Vec<f64> = self
            .centroids
            .iter()
            .map(|c| c.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .collect();
        let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = dists.iter().map(|d| (min - d).exp()).collect();
        let z: f64 = weights.iter().sum();
        let probabilities = self
            .label_set
            .iter()
            .cloned()
            .zip(weights.iter().map(|w| w / z))
            .collect();
        PredictionRecord::from_probabilities(id, probabilities)
    }
}

/// Client for a classifier service exposing `POST /train` and `POST /predict`.
#[derive(Debug, Clone)]
pub struct RemoteClassifier {
    base_url: String,
    label_set: Vec<String>,
    client: JsonClient,
}

impl RemoteClassifier {
    /// A handle to a service whose model is already trained.
    pub fn pretrained(base_url: impl Into<String>, label_set: Vec<String>, retry: RetryPolicy) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            label_set,
            client: JsonClient::new(retry, Duration::from_secs(3600)),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn train(&self, examples: &[&LabeledExample]) -> Result<()> {
        let body = json!({
            "examples": examples
                .iter()
                .map(|e| json!({"id": e.id, "text": e.text, "label": e.label}))
                .collect::<Vec<_>>()
        });
        let resp = self
            .client
            .post(&format!("{}/train", self.base_url), &body)
            .map_err(Error::Service)?;
        match resp.get("status").and_then(Value::as_str) {
            Some("ok") => Ok(()),
            other => Err(Error::Service(format!("train returned status {other:?}"))),
        }
    }

    fn predict(&self, examples: &[&LabeledExample]) -> Result<Vec<PredictionRecord>> {
        let body = json!({ "texts": examples.iter().map(|e| e.text.as_str()).collect::<Vec<_>>() });
        let resp = self
            .client
            .post(&format!("{}/predict", self.base_url), &body)
            .map_err(Error::Service)?;
        let preds = resp
            .get("predictions")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Service("predict response lacks `predictions`".into()))?;
        if preds.len() != examples.len() {
            return Err(Error::Service(format!(
                "predict returned {} predictions for {} texts",
                preds.len(),
                examples.len()
            )));
        }
        examples
            .iter()
            .zip(preds)
            .map(|(ex, p)| self.decode(&ex.id, p))
            .collect()
    }

    fn decode(&self, id: &str, p: &Value) -> Result<PredictionRecord> {
        let label = p
            .get("label")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Service(format!("prediction for {id} lacks `label`")))?;
        if !self.label_set.iter().any(|l| l == label) {
            return Err(Error::Service(format!(
                "prediction for {id} has unknown label {label:?}"
            )));
        }
        let probs = p
            .get("probs")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::Service(format!("prediction for {id} lacks `probs`")))?;
        let mut probabilities = IndexMap::new();
        for l in &self.label_set {
            let v = probs.get(l).and_then(Value::as_f64).unwrap_or(0.0);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Service(format!("probability {v} for {l:?} out of range")));
            }
            probabilities.insert(l.clone(), v);
        }
        let total: f64 = probabilities.values().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Service(format!("probabilities for {id} sum to {total}")));
        }
        let record = PredictionRecord::from_probabilities(id, probabilities);
        if record.predicted_label != label {
            log::warn!("service label {label:?} for {id} is not the argmax of its probabilities");
        }
        Ok(record)
    }
}

/// A trained classifier. Immutable once built; prediction is read-only.
#[derive(Debug, Clone)]
pub enum ClassifierHandle {
    Centroid(CentroidModel),
    Remote(RemoteClassifier),
}

impl ClassifierHandle {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierHandle::Centroid(_) => ClassifierKind::BuiltinCentroid,
            ClassifierHandle::Remote(_) => ClassifierKind::Remote,
        }
    }

    pub fn label_set(&self) -> &[String] {
        match self {
            ClassifierHandle::Centroid(m) => &m.label_set,
            ClassifierHandle::Remote(r) => &r.label_set,
        }
    }
}

pub fn train(
    spec: &ClassifierSpec,
    label_set: &[String],
    examples: &[&LabeledExample],
    embeddings: &EmbeddingTable,
) -> Result<ClassifierHandle> {
    match spec {
        ClassifierSpec::BuiltinCentroid => {
            CentroidModel::fit(label_set, examples, embeddings).map(ClassifierHandle::Centroid)
        }
        ClassifierSpec::Remote { base_url, retry } => {
            let remote = RemoteClassifier::pretrained(base_url.clone(), label_set.to_vec(), *retry);
            remote.train(examples)?;
            Ok(ClassifierHandle::Remote(remote))
        }
    }
}

/// Predictions in input order.
pub fn predict(
    handle: &ClassifierHandle,
    examples: &[&LabeledExample],
    embeddings: &EmbeddingTable,
) -> Result<Vec<PredictionRecord>> {
    match handle {
        ClassifierHandle::Centroid(m) => examples
            .iter()
            .map(|ex| Ok(m.predict_vector(&ex.id, embeddings.vector(&ex.id)?)))
            .collect(),
        ClassifierHandle::Remote(r) => {
            if examples.is_empty() {
                return Ok(Vec::new());
            }
            r.predict(examples)
        }
    }
}

pub fn accuracy(predictions: &[PredictionRecord], gold: &HashMap<String, String>) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Validation("accuracy over zero predictions".into()));
    }
    let mut correct = 0usize;
    for p in predictions {
        let g = gold
            .get(&p.example_id)
            .ok_or_else(|| Error::Validation(format!("no gold label for {:?}", p.example_id)))?;
        if *g == p.predicted_label {
            correct += 1;
        }
    }
    Ok(correct as f64 / predictions.len() as f64)
}
