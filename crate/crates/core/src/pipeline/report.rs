//! Run report, rebuilt from stage artifacts alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::rundir::{read_json, write_json, write_text, RunDir, Stage};
use super::{
    BackendOverride, ClusterDelta, IngestMeta, Pipeline, RetrainMetrics, SelectionRecord, TrainMetrics, TIMING_FILE,
};
use crate::active_learning::Strategy;
use crate::augment::{Allocation, AugmentMethod, GenerationBatch};
use crate::classifier::PredictionRecord;
use crate::clustering::ClusterSet;
use crate::corpus::{self, read_lines, LabeledExample};
use crate::error::{Error, Result};
use crate::error_analysis::{self, ClusterErrorStats};
use crate::refine::{RefinementTrace, TraceStatus};

/// How per-cluster "after" rates are measured.
pub const CLUSTER_BASIS: &str = "round-1 clusters kept fixed; after = final model's predictions";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub labels: Vec<String>,
    pub train: usize,
    pub validation: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceBrief {
    pub round: usize,
    pub cluster_id: String,
    pub status: TraceStatus,
    pub iterations_used: usize,
    pub predicate: Option<String>,
    pub in_rate: Option<f64>,
    pub out_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub accepted: usize,
    pub exhausted: usize,
    /// iterations_used → number of traces.
    pub iterations_histogram: BTreeMap<usize, usize>,
    pub traces: Vec<TraceBrief>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub round: usize,
    pub method: AugmentMethod,
    pub budget: usize,
    pub allocated: usize,
    pub dropped: usize,
    pub generated: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectSummary {
    pub round: usize,
    pub strategy: Option<Strategy>,
    pub selected: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub accuracy_before: f64,
    pub accuracy_after: Option<f64>,
    pub clusters: usize,
    pub selected_clusters: usize,
    pub accepted_traces: usize,
    pub additions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub seed: u64,
    pub method: String,
    pub config: RunConfig,
    pub dataset: DatasetSummary,
    pub base_accuracy: f64,
    pub post_accuracy: f64,
    /// Base accuracy first, then the accuracy after each completed round.
    pub accuracy_series: Vec<f64>,
    pub rounds_completed: usize,
    pub converged: bool,
    pub cluster_basis: String,
    /// Policies in effect that go beyond the base method.
    pub extensions: Vec<String>,
    pub clusters: Vec<ClusterDelta>,
    pub median_erroneous_rate_before: Option<f64>,
    pub median_erroneous_rate_after: Option<f64>,
    pub traces: TraceSummary,
    pub augmentation: Vec<AugmentSummary>,
    pub selection: Vec<SelectSummary>,
    pub rounds: Vec<RoundSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<IndexMap<String, u64>>,
}

impl RunReport {
    /// The report without wall-clock fields.
    pub fn canonical(&self) -> RunReport {
        RunReport {
            created_at: None,
            timing_ms: None,
            ..self.clone()
        }
    }

    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.canonical())? + "\n")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pct = |x: f64| format!("{:.2}%", 100.0 * x);
        let opt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "run report: {} (seed {}, method {})",
            self.dataset.name, self.seed, self.method
        );
        let _ = writeln!(
            s,
            "dataset: {} train, {} validation, {} pool; labels {}",
            self.dataset.train,
            self.dataset.validation,
            self.dataset.pool,
            self.dataset.labels.join(", ")
        );
        let _ = writeln!(
            s,
            "base accuracy: {:.4} ({})",
            self.base_accuracy,
            pct(self.base_accuracy)
        );
        let _ = writeln!(
            s,
            "post accuracy: {:.4} ({})",
            self.post_accuracy,
            pct(self.post_accuracy)
        );
        let series: Vec<String> = self.accuracy_series.iter().map(|a| format!("{a:.4}")).collect();
        let _ = writeln!(s, "accuracy series: {}", series.join(" -> "));
        let _ = writeln!(
            s,
            "rounds completed: {} (converged: {})",
            self.rounds_completed,
            if self.converged { "yes" } else { "no" }
        );
        let _ = writeln!(
            s,
            "median erroneous rate: before {} after {}",
            opt(self.median_erroneous_rate_before),
            opt(self.median_erroneous_rate_after)
        );
        for e in &self.extensions {
            let _ = writeln!(s, "extension: {e}");
        }
        let _ = writeln!(s, "clusters ({}):", self.cluster_basis);
        for c in &self.clusters {
            let _ = writeln!(
                s,
                "  {} size {}: {:.3} -> {:.3}",
                c.cluster_id, c.size, c.before, c.after
            );
        }
        let hist: Vec<String> = self
            .traces
            .iterations_histogram
            .iter()
            .map(|(k, v)| format!("{k}:{v}"))
            .collect();
        let _ = writeln!(
            s,
            "traces: {} accepted, {} exhausted; iterations {}",
            self.traces.accepted,
            self.traces.exhausted,
            hist.join(" ")
        );
        for t in &self.traces.traces {
            let status = match t.status {
                TraceStatus::Accepted => "accepted",
                TraceStatus::Exhausted => "exhausted",
            };
            let _ = writeln!(
                s,
                "  round {} {} {} after {}: {}",
                t.round,
                t.cluster_id,
                status,
                t.iterations_used,
                t.predicate.as_deref().unwrap_or("-")
            );
        }
        for a in &self.augmentation {
            let _ = writeln!(
                s,
                "augmentation round {}: {} budget {} allocated {} dropped {} generated {} kept {}",
                a.round, a.method, a.budget, a.allocated, a.dropped, a.generated, a.kept
            );
        }
        for sel in &self.selection {
            let name = sel.strategy.map_or_else(|| "none".to_string(), |s| s.to_string());
            let _ = writeln!(s, "selection round {}: {} selected {}", sel.round, name, sel.selected);
        }
        if let Some(t) = &self.timing_ms {
            let total: u64 = t.values().sum();
            let _ = writeln!(s, "stage time: {total} ms");
        }
        s
    }

    /// Long-format accuracy table: `method,budget,accuracy`.
    pub fn accuracy_csv(&self) -> String {
        accuracy_csv(
            self.base_accuracy,
            &[(self.method.clone(), self.config.augment.total, self.post_accuracy)],
        )
    }

    pub fn medians_csv(&self) -> String {
        medians_csv(&[(
            self.method.clone(),
            self.median_erroneous_rate_before,
            self.median_erroneous_rate_after,
        )])
    }

    pub fn rounds_csv(&self) -> String {
        let mut s = String::from("round,accuracy\n");
        for (i, a) in self.accuracy_series.iter().enumerate() {
            let _ = writeln!(s, "{i},{a}");
        }
        s
    }

    pub fn clusters_csv(&self) -> String {
        let mut s = String::from("cluster_id,class_label,size,before,after\n");
        for c in &self.clusters {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.cluster_id, c.class_label, c.size, c.before, c.after
            );
        }
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn accuracy_csv(base: f64, rows: &[(String, usize, f64)]) -> String {
    let mut s = format!("method,budget,accuracy\nbase,0,{base}\n");
    for (m, b, a) in rows {
        let _ = writeln!(s, "{m},{b},{a}");
    }
    s
}

fn medians_csv(rows: &[(String, Option<f64>, Option<f64>)]) -> String {
    let mut s = String::from("method,median_before,median_after\n");
    for (m, b, a) in rows {
        let _ = writeln!(s, "{m},{},{}", fmt_opt(*b), fmt_opt(*a));
    }
    s
}

fn method_label(config: &RunConfig) -> String {
    let aug = (config.augment.total > 0).then(|| config.augment.method.to_string());
    let sel = config.active_learning.strategy.strategy().map(|s| s.to_string());
    match (aug, sel) {
        (Some(a), Some(s)) => format!("{a}+{s}"),
        (Some(a), None) => a,
        (None, Some(s)) => s,
        (None, None) => "none".into(),
    }
}

fn rate_after(
    cluster: &ClusterSet,
    id: &str,
    index: &error_analysis::PredictionIndex,
    gold: &std::collections::HashMap<String, String>,
) -> Result<f64> {
    let c = cluster
        .get(id)
        .ok_or_else(|| Error::Validation(format!("cluster {id} missing from clusters.json")))?;
    error_analysis::misclassification_rate(index, &c.member_ids, gold)
}

fn extensions(config: &RunConfig) -> Vec<String> {
    let mut out = vec![format!(
        "clusters smaller than {} are not explained (clustering.min_cluster_size)",
        config.clustering.min_cluster_size
    )];
    if config.augment.total > 0 {
        out.push("generated examples are deduplicated against the training set and each other".into());
        out.push(format!(
            "augmentation budget split by cluster size, at most {} per cluster",
            config.augment.per_cluster_cap
        ));
    }
    out
}

/// Reads every completed stage under `dir` and assembles the report.
pub fn build_report(dir: &RunDir, config: &RunConfig) -> Result<RunReport> {
    let ingest = dir.require(Stage::Ingest, 0)?;
    let meta: IngestMeta = read_json(&ingest.join("meta.json"))?;
    let ds = corpus::load_jsonl_with_labels(&ingest.join("dataset.jsonl"), Some(meta.label_set.clone()))?;
    let gold = ds.gold();

    let rounds: Vec<usize> = dir
        .rounds()
        .into_iter()
        .filter(|r| dir.is_done(Stage::Train, *r))
        .collect();
    let first = *rounds.first().ok_or_else(|| Error::MissingStage {
        stage: "train (round 1)".into(),
        dir: dir.stage_dir(Stage::Train, 1),
    })?;
    let base: TrainMetrics = read_json(&dir.require(Stage::Train, first)?.join("metrics.json"))?;

    let mut series = vec![base.accuracy];
    let mut converged = false;
    let mut completed = 0;
    let mut summaries = Vec::new();
    let mut traces = TraceSummary::default();
    let mut augmentation = Vec::new();
    let mut selection = Vec::new();
    let mut final_preds = dir.stage_dir(Stage::Train, first).join("predictions_validation.jsonl");

    for &r in &rounds {
        let train: TrainMetrics = read_json(&dir.stage_dir(Stage::Train, r).join("metrics.json"))?;
        let (n_clusters, n_selected) = if dir.is_done(Stage::Cluster, r) {
            let cdir = dir.stage_dir(Stage::Cluster, r);
            let stats: Vec<ClusterErrorStats> = read_json(&cdir.join("stats.json"))?;
            let selected: Vec<ClusterErrorStats> = read_json(&cdir.join("selected.json"))?;
            if selected.is_empty() {
                converged = true;
            }
            (stats.len(), selected.len())
        } else {
            (0, 0)
        };
        let mut accepted = 0;
        if dir.is_done(Stage::Explain, r) {
            let ts: Vec<RefinementTrace> = read_json(&dir.stage_dir(Stage::Explain, r).join("traces.json"))?;
            for t in &ts {
                accepted += usize::from(t.accepted());
                traces.accepted += usize::from(t.accepted());
                traces.exhausted += usize::from(!t.accepted());
                *traces.iterations_histogram.entry(t.iterations_used).or_default() += 1;
                let last = t.records.last();
                traces.traces.push(TraceBrief {
                    round: r,
                    cluster_id: t.cluster_id.clone(),
                    status: t.final_status,
                    iterations_used: t.iterations_used,
                    predicate: last.map(|x| x.predicate.text.clone()),
                    in_rate: last.map(|x| x.in_rate),
                    out_rate: last.map(|x| x.out_rate),
                    error: t.error.clone(),
                });
            }
        }
        if dir.is_done(Stage::Augment, r) {
            let adir = dir.stage_dir(Stage::Augment, r);
            let allocation: Allocation = read_json(&adir.join("allocation.json"))?;
            let batches: Vec<GenerationBatch> = read_json(&adir.join("batches.json"))?;
            let kept: Vec<LabeledExample> = read_lines(&adir.join("synthetic.jsonl"))?;
            augmentation.push(AugmentSummary {
                round: r,
                method: config.augment.method,
                budget: config.augment.total,
                allocated: allocation.counts.values().sum(),
                dropped: allocation.dropped,
                generated: batches.iter().map(|b| b.parsed.len()).sum(),
                kept: kept.len(),
            });
        }
        if dir.is_done(Stage::Select, r) {
            let sel: SelectionRecord = read_json(&dir.stage_dir(Stage::Select, r).join("selection.json"))?;
            selection.push(SelectSummary {
                round: r,
                strategy: sel.strategy,
                selected: sel.selected_ids.len(),
                note: sel.note,
            });
        }
        let mut after = None;
        let mut additions = 0;
        if dir.is_done(Stage::Retrain, r) {
            let rdir = dir.stage_dir(Stage::Retrain, r);
            let m: RetrainMetrics = read_json(&rdir.join("metrics.json"))?;
            series.push(m.accuracy_after);
            after = Some(m.accuracy_after);
            additions = m.synthetic + m.annotated;
            completed += 1;
            final_preds = rdir.join("predictions_validation.jsonl");
        }
        summaries.push(RoundSummary {
            round: r,
            accuracy_before: train.accuracy,
            accuracy_after: after,
            clusters: n_clusters,
            selected_clusters: n_selected,
            accepted_traces: accepted,
            additions,
        });
    }

    let mut clusters = Vec::new();
    if dir.is_done(Stage::Cluster, first) {
        let cdir = dir.stage_dir(Stage::Cluster, first);
        let set: ClusterSet = read_json(&cdir.join("clusters.json"))?;
        let selected: Vec<ClusterErrorStats> = read_json(&cdir.join("selected.json"))?;
        let preds: Vec<PredictionRecord> = read_lines(&final_preds)?;
        let index = error_analysis::index_predictions(&preds);
        for s in &selected {
            clusters.push(ClusterDelta {
                cluster_id: s.cluster_id.clone(),
                class_label: s.class_label.clone(),
                size: s.size,
                before: s.misclassification_rate,
                after: rate_after(&set, &s.cluster_id, &index, &gold)?,
            });
        }
    }
    let befores: Vec<f64> = clusters.iter().map(|c| c.before).collect();
    let afters: Vec<f64> = clusters.iter().map(|c| c.after).collect();

    let timing_path = dir.root().join(TIMING_FILE);
    let timing_ms = if timing_path.is_file() {
        Some(read_json(&timing_path)?)
    } else {
        None
    };

    let mut snapshot = config.clone();
    snapshot.run_dir = None;
    Ok(RunReport {
        created_at: Some(chrono::Utc::now().to_rfc3339()),
        seed: config.seed,
        method: method_label(config),
        config: snapshot,
        dataset: DatasetSummary {
            name: meta.name,
            labels: meta.label_set,
            train: meta.train,
            validation: meta.validation,
            pool: meta.pool,
        },
        base_accuracy: base.accuracy,
        post_accuracy: *series.last().expect("series starts with the base accuracy"),
        accuracy_series: series,
        rounds_completed: completed,
        converged,
        cluster_basis: CLUSTER_BASIS.into(),
        extensions: extensions(config),
        median_erroneous_rate_before: error_analysis::median(&befores),
        median_erroneous_rate_after: error_analysis::median(&afters),
        clusters,
        traces,
        augmentation,
        selection,
        rounds: summaries,
        timing_ms,
    })
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

pub fn write_report(dir: &RunDir, report: &RunReport) -> Result<()> {
    let root = dir.root();
    write_text(&root.join(REPORT_JSON), &report.to_json()?)?;
    write_text(&root.join(REPORT_TEXT), &report.to_text())?;
    write_text(&root.join("table_accuracy.csv"), &report.accuracy_csv())?;
    write_text(&root.join("table_medians.csv"), &report.medians_csv())?;
    write_text(&root.join("rounds.csv"), &report.rounds_csv())?;
    write_text(&root.join("clusters.csv"), &report.clusters_csv())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: AugmentMethod,
    pub budget: usize,
    pub base_accuracy: f64,
    pub post_accuracy: f64,
    pub median_before: Option<f64>,
    pub median_after: Option<f64>,
    pub run_dir: PathBuf,
}

/// One run per (method, budget) under `root`, then method × budget tables.
pub fn compare_methods(
    base: &RunConfig,
    methods: &[AugmentMethod],
    budgets: &[usize],
    root: &Path,
) -> Result<Vec<ComparisonRow>> {
    if methods.is_empty() || budgets.is_empty() {
        return Err(Error::Validation(
            "comparison needs at least one method and one budget".into(),
        ));
    }
    let mut rows = Vec::new();
    for &method in methods {
        for &budget in budgets {
            let mut cfg = base.clone();
            cfg.augment.method = method;
            cfg.augment.total = budget;
            cfg.run_dir = None;
            let run_dir = root.join(format!("{method}_{budget}"));
            let report = Pipeline::new(cfg, Some(run_dir.clone()), BackendOverride::FromConfig)?.run()?;
            rows.push(ComparisonRow {
                method,
                budget,
                base_accuracy: report.base_accuracy,
                post_accuracy: report.post_accuracy,
                median_before: report.median_erroneous_rate_before,
                median_after: report.median_erroneous_rate_after,
                run_dir,
            });
        }
    }
    let base_acc = rows[0].base_accuracy;
    let acc: Vec<(String, usize, f64)> = rows
        .iter()
        .map(|r| (r.method.to_string(), r.budget, r.post_accuracy))
        .collect();
    let med: Vec<(String, Option<f64>, Option<f64>)> = rows
        .iter()
        .map(|r| (format!("{}@{}", r.method, r.budget), r.median_before, r.median_after))
        .collect();
    write_text(&root.join("table_accuracy.csv"), &accuracy_csv(base_acc, &acc))?;
    write_text(&root.join("table_medians.csv"), &medians_csv(&med))?;
    write_json(&root.join("comparison.json"), &rows)?;
    Ok(rows)
}
