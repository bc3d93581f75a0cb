//! Per-class agglomerative clustering of validation embeddings.
//!
//! Merging is bottom-up with Ward linkage over Euclidean distance. Pairwise
//! linkage values are maintained with the Lance–Williams recurrence on squared
//! distances. Two clusters merge while their linkage distance is at most the
//! threshold; among equal candidates the pair with the smallest
//! `(slot_i, slot_j)` wins, and a merged cluster keeps the lower slot.

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, EmbeddingTable};
use crate::error::{Error, Result};
use crate::parallel::try_bounded_map;

pub const WARD: &str = "ward";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub class_label: String,
    pub member_ids: Vec<String>,
}

impl Cluster {
    /// The `k` in `"{label}#{k}"`.
    pub fn ordinal(&self) -> usize {
        self.id
            .rsplit_once('#')
            .and_then(|(_, k)| k.parse().ok())
            .unwrap_or(usize::MAX)
    }
}

/// Wire layout: `{"threshold", "linkage", "clusters": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub threshold: f64,
    pub linkage: String,
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn by_class<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Cluster> + 'a {
        self.clusters.iter().filter(move |c| c.class_label == label)
    }

    pub fn get(&self, id: &str) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.id == id)
    }
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Condensed upper-triangular matrix indexed by `(i, j)` with `i < j`.
struct Condensed {
    n: usize,
    data: Vec<f64>,
}

impl Condensed {
    fn new(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n.saturating_sub(1) / 2],
        }
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.index(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.data[k] = v;
    }
}

/// Partitions point indices; clusters are listed by their smallest member and
/// members are ascending.
pub fn agglomerate(points: &[&[f64]], distance_threshold: f64) -> Result<Vec<Vec<usize>>> {
    if points.is_empty() {
        return Err(Error::Validation("agglomerate needs at least one point".into()));
    }
    if !(distance_threshold.is_finite() && distance_threshold > 0.0) {
        return Err(Error::Validation(format!(
            "distance threshold must be positive and finite, got {distance_threshold}"
        )));
    }
    let dim = points[0].len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Validation(format!(
                "point {i} has dimension {} (expected {dim})",
                p.len()
            )));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("point {i} has a non-finite component")));
        }
    }

    let n = points.len();
    let mut d2 = Condensed::new(n);
    for i in 0..n {
        for j in i + 1..n {
            d2.set(i, j, squared_euclidean(points[i], points[j]));
        }
    }
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active: Vec<usize> = (0..n).collect();

    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for (a, &i) in active.iter().enumerate() {
            for &j in &active[a + 1..] {
                let v = d2.get(i, j);
                if best.is_none_or(|(b, _, _)| v < b) {
                    best = Some((v, i, j));
                }
            }
        }
        let (best_d2, i, j) = best.expect("at least one pair");
        if best_d2.max(0.0).sqrt() > distance_threshold {
            break;
        }
        let (ni, nj) = (members[i].len() as f64, members[j].len() as f64);
        for &k in &active {
            if k == i || k == j {
                continue;
            }
            let nk = members[k].len() as f64;
            let updated = ((ni + nk) * d2.get(i, k) + (nj + nk) * d2.get(j, k) - nk * best_d2) / (ni + nj + nk);
            d2.set(i, k, updated);
        }
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        active.retain(|&k| k != j);
    }

    let mut out: Vec<Vec<usize>> = active
        .into_iter()
        .map(|k| {
            let mut m = std::mem::take(&mut members[k]);
            m.sort_unstable();
            m
        })
        .collect();
    out.sort_by_key(|m| m[0]);
    Ok(out)
}

/// Clusters each class's validation examples independently.
pub fn cluster_by_class(dataset: &Dataset, embeddings: &EmbeddingTable, threshold: f64) -> Result<ClusterSet> {
    let per_class = try_bounded_map(&dataset.label_set, dataset.label_set.len(), |label| {
        let ids: Vec<&String> = dataset
            .validation
            .iter()
            .filter(|id| dataset.examples[*id].label == *label)
            .collect();
        if ids.is_empty() {
            return Ok::<_, Error>(Vec::new());
        }
        let points: Vec<&[f64]> = ids.iter().map(|id| embeddings.vector(id)).collect::<Result<_>>()?;
        let parts = agglomerate(&points, threshold)?;
        Ok(parts
            .into_iter()
            .enumerate()
            .map(|(k, part)| Cluster {
                id: format!("{label}#{k}"),
                class_label: label.clone(),
                member_ids: part.into_iter().map(|i| ids[i].clone()).collect(),
            })
            .collect::<Vec<_>>())
    })?;
    Ok(ClusterSet {
        threshold,
        linkage: WARD.to_string(),
        clusters: per_class.into_iter().flatten().collect(),
    })
}
