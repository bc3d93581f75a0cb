//! Stage orchestration over a run directory.
//!
//! Every stage reads its inputs from disk and writes its outputs to its own
//! directory, so stages can be run one at a time, resumed, or replayed.

pub mod config;
pub mod report;
pub mod rundir;
pub mod stats;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::active_learning::{self as al, SimilarityRanking, Strategy};
use crate::augment::{self, AugmentOutcome};
use crate::classifier::{self, ClassifierHandle, PredictionRecord};
use crate::clustering::{self, ClusterSet};
use crate::corpus::{
    self, embed, read_lines, write_lines, CachedProvider, Dataset, EmbeddingProvider, EmbeddingTable, HashEmbedder,
    LabeledExample, Origin, RemoteEmbedder,
};
use crate::error::{Error, Result};
use crate::error_analysis::{self, ClusterErrorStats};
use crate::llm::{
    AuditLog, ChatBackend, ChatExchange, LlmClient, MockEvaluator, MockExplainer, MockGenerator, RemoteChat,
    ReplayBackend, Role,
};
use crate::refine::{self, RefineClients, RefinementTrace};
use crate::rng::derive_seed;

pub use config::{ConfigLayers, RunConfig};
pub use report::{build_report, compare_methods, RunReport};
pub use rundir::{RunDir, Stage};
pub use stats::paired_t_test;

use config::{EmbeddingKind, LlmSettings};
use rundir::{read_json, write_json};

pub const CONFIG_FILE: &str = "config.toml";
const TIMING_FILE: &str = "timing.json";
const EMBED_CACHE: &str = "embedding_cache.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestMeta {
    pub name: String,
    pub label_set: Vec<String>,
    pub train: usize,
    pub validation: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub train_size: usize,
    pub pool_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDelta {
    pub cluster_id: String,
    pub class_label: String,
    pub size: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainMetrics {
    pub round: usize,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub synthetic: usize,
    pub annotated: usize,
    pub train_size: usize,
    /// Selected clusters of this round, scored before and after retraining.
    pub clusters: Vec<ClusterDelta>,
    pub median_before: Option<f64>,
    pub median_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub strategy: Option<Strategy>,
    pub selected_ids: Vec<String>,
    pub per_id_score: Option<IndexMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Per-predicate similarity ranking, written by the similarity_rank strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateRanking {
    pub cluster_id: String,
    pub predicate: String,
    pub ranking: SimilarityRanking,
}

/// Where chat responses come from.
#[derive(Debug, Clone, Default)]
pub enum BackendOverride {
    /// Mock or remote per role, as configured.
    #[default]
    FromConfig,
    /// Recorded exchanges, e.g. every audit log of an earlier run.
    Replay(Vec<ChatExchange>),
}

struct Backends {
    explainer: Arc<dyn ChatBackend>,
    evaluator: Arc<dyn ChatBackend>,
    generator: Arc<dyn ChatBackend>,
}

impl Backends {
    fn new(llm: &LlmSettings, over: BackendOverride) -> Self {
        match over {
            BackendOverride::FromConfig => Self {
                explainer: role_backend(llm, Role::Explainer),
                evaluator: role_backend(llm, Role::Evaluator),
                generator: role_backend(llm, Role::Generator),
            },
            BackendOverride::Replay(exchanges) => {
                let shared: Arc<dyn ChatBackend> = Arc::new(ReplayBackend::new(exchanges));
                Self {
                    explainer: shared.clone(),
                    evaluator: shared.clone(),
                    generator: shared,
                }
            }
        }
    }

    fn get(&self, role: Role) -> Arc<dyn ChatBackend> {
        match role {
            Role::Explainer => self.explainer.clone(),
            Role::Evaluator => self.evaluator.clone(),
            Role::Generator => self.generator.clone(),
        }
    }
}

fn role_backend(llm: &LlmSettings, role: Role) -> Arc<dyn ChatBackend> {
    if llm.is_mock(role) {
        return match role {
            Role::Explainer => Arc::new(MockExplainer),
            Role::Evaluator => Arc::new(MockEvaluator),
            Role::Generator => Arc::new(MockGenerator::default()),
        };
    }
    let key = std::env::var(&llm.api_key_env).ok();
    Arc::new(RemoteChat::new(llm.base_url(role), key, llm.retry))
}

/// Every exchange recorded under a run directory, in round and stage order.
pub fn collect_audit(dir: &RunDir) -> Result<Vec<ChatExchange>> {
    let mut out = Vec::new();
    for r in dir.rounds() {
        for stage in [Stage::Explain, Stage::Augment, Stage::Select] {
            let path = dir.stage_dir(stage, r).join("audit.jsonl");
            if path.is_file() {
                out.extend(AuditLog::read_jsonl(&path)?);
            }
        }
    }
    Ok(out)
}

fn read_examples(path: &Path) -> Result<Vec<LabeledExample>> {
    read_lines(path)
}

fn trace_file_name(cluster_id: &str) -> String {
    cluster_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub struct Pipeline {
    config: RunConfig,
    dir: RunDir,
    backends: Backends,
}

impl Pipeline {
    /// Opens (or creates) the run directory and records the resolved config
    /// in it. Without an explicit directory, `config.run_dir` is used, then
    /// a timestamped directory under `runs/`.
    pub fn new(config: RunConfig, run_dir: Option<PathBuf>, backends: BackendOverride) -> Result<Self> {
        config.validate()?;
        let root = run_dir.or_else(|| config.run_dir.clone()).unwrap_or_else(|| {
            PathBuf::from("runs").join(chrono::Local::now().format("%Y%m%d-%H%M%S%.3f").to_string())
        });
        let dir = RunDir::create(root)?;
        // The stored copy must load from any working directory.
        let mut stored = config.clone();
        if let Ok(abs) = std::path::absolute(&stored.dataset.path) {
            stored.dataset.path = abs;
        }
        rundir::write_text(&dir.root().join(CONFIG_FILE), &stored.to_toml()?)?;
        Ok(Self {
            backends: Backends::new(&config.llm, backends),
            config,
            dir,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dir(&self) -> &RunDir {
        &self.dir
    }

    fn round_seed(&self, round: usize) -> u64 {
        derive_seed(self.config.seed, &format!("round/{round}"))
    }

    fn client(&self, role: Role, audit: &AuditLog) -> LlmClient {
        LlmClient::new(
            self.backends.get(role),
            self.config.llm.role(role).llm_config(role),
            audit.clone(),
        )
        .with_parallelism(self.config.llm.parallelism)
    }

    fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let e = &self.config.embedding;
        Ok(match e.provider {
            EmbeddingKind::Hash => Box::new(HashEmbedder::new(e.dim)?),
            EmbeddingKind::Remote => {
                let remote = RemoteEmbedder::new(
                    e.url.clone(),
                    e.model.clone(),
                    std::env::var(&e.api_key_env).ok(),
                    self.config.llm.retry,
                    e.batch_size,
                    e.parallelism,
                );
                if e.cache {
                    Box::new(CachedProvider::open(remote, self.dir.root().join(EMBED_CACHE))?)
                } else {
                    Box::new(remote)
                }
            }
        })
    }

    /// Runs `body` in a fresh stage directory, tagging errors with the stage
    /// name and recording wall time.
    fn stage<T>(&self, stage: Stage, round: usize, body: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
        let label = if stage.per_round() {
            format!("{stage} (round {round})")
        } else {
            stage.to_string()
        };
        log::info!("stage {label}");
        let start = Instant::now();
        let dir = self.dir.begin(stage, round).map_err(|e| e.in_stage(&label))?;
        let out = body(&dir).map_err(|e| e.in_stage(&label))?;
        self.record_timing(&label, start.elapsed().as_millis() as u64)?;
        Ok(out)
    }

    fn record_timing(&self, label: &str, ms: u64) -> Result<()> {
        let path = self.dir.root().join(TIMING_FILE);
        let mut timing: IndexMap<String, u64> = if path.is_file() {
            read_json(&path)?
        } else {
            IndexMap::new()
        };
        timing.insert(label.to_string(), ms);
        write_json(&path, &timing)
    }

    // ---- inputs from earlier stages ----

    pub fn dataset(&self) -> Result<Dataset> {
        let dir = self.dir.require(Stage::Ingest, 0)?;
        let meta: IngestMeta = read_json(&dir.join("meta.json"))?;
        let mut ds = corpus::load_jsonl_with_labels(&dir.join("dataset.jsonl"), Some(meta.label_set))?;
        ds.name = meta.name;
        Ok(ds)
    }

    fn base_embeddings(&self) -> Result<EmbeddingTable> {
        let dir = self.dir.require(Stage::Embed, 0)?;
        EmbeddingTable::read_jsonl(&dir.join("embeddings.jsonl"))
    }

    /// Base embeddings plus synthetic ones from rounds `1..=through`.
    fn embeddings_through(&self, through: usize) -> Result<EmbeddingTable> {
        let mut table = self.base_embeddings()?;
        for r in 1..=through {
            let path = self.dir.stage_dir(Stage::Augment, r).join("embeddings.jsonl");
            if self.dir.is_done(Stage::Augment, r) && path.is_file() {
                table.extend(EmbeddingTable::read_jsonl(&path)?.into_embeddings());
            }
        }
        Ok(table)
    }

    /// Training additions of every round before `round`.
    fn additions_before(&self, round: usize) -> Result<Vec<LabeledExample>> {
        let mut out = Vec::new();
        for r in 1..round {
            let dir = self.dir.require(Stage::Retrain, r)?;
            out.extend(read_examples(&dir.join("additions.jsonl"))?);
        }
        Ok(out)
    }

    fn available_pool(&self, ds: &Dataset, round: usize) -> Result<Vec<String>> {
        let taken: HashSet<String> = self
            .additions_before(round)?
            .into_iter()
            .filter(|e| e.origin == Origin::PoolAnnotated)
            .map(|e| e.id)
            .collect();
        Ok(ds.pool.iter().filter(|id| !taken.contains(*id)).cloned().collect())
    }

    fn selected(&self, round: usize) -> Result<(ClusterSet, Vec<ClusterErrorStats>)> {
        let dir = self.dir.require(Stage::Cluster, round)?;
        Ok((
            read_json(&dir.join("clusters.json"))?,
            read_json(&dir.join("selected.json"))?,
        ))
    }

    fn traces(&self, round: usize) -> Result<Vec<RefinementTrace>> {
        let dir = self.dir.require(Stage::Explain, round)?;
        read_json(&dir.join("traces.json"))
    }

    fn fit(
        &self,
        ds: &Dataset,
        train: &[LabeledExample],
        emb: &EmbeddingTable,
    ) -> Result<(ClassifierHandle, Vec<PredictionRecord>)> {
        let refs: Vec<&LabeledExample> = train.iter().collect();
        let handle = classifier::train(&self.config.classifier, &ds.label_set, &refs, emb)?;
        let preds = classifier::predict(&handle, &ds.split_examples(corpus::Split::Validation), emb)?;
        Ok((handle, preds))
    }

    fn original_train(ds: &Dataset) -> Vec<LabeledExample> {
        ds.split_examples(corpus::Split::Train).into_iter().cloned().collect()
    }

    // ---- stages ----

    pub fn ingest(&self) -> Result<()> {
        self.stage(Stage::Ingest, 0, |dir| {
            let d = &self.config.dataset;
            let mut ds = corpus::load_jsonl_with_labels(&d.path, d.labels.clone())?;
            ds.name = d.name.clone().unwrap_or_else(|| {
                d.path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "dataset".into())
            });
            if d.sizes != Default::default() {
                ds = corpus::subsample(&ds, d.sizes, self.config.seed)?;
            }
            corpus::write_jsonl(&dir.join("dataset.jsonl"), &ds.to_records())?;
            write_json(
                &dir.join("meta.json"),
                &IngestMeta {
                    name: ds.name.clone(),
                    label_set: ds.label_set.clone(),
                    train: ds.train.len(),
                    validation: ds.validation.len(),
                    pool: ds.pool.len(),
                },
            )
        })
    }

    pub fn embed(&self) -> Result<()> {
        let ds = self.dataset()?;
        self.stage(Stage::Embed, 0, |dir| {
            let provider = self.provider()?;
            let all: Vec<&LabeledExample> = ds
                .train
                .iter()
                .chain(&ds.validation)
                .chain(&ds.pool)
                .map(|id| &ds.examples[id])
                .collect();
            let table = EmbeddingTable::from_embeddings(embed(&all, provider.as_ref())?);
            table.write_jsonl(&dir.join("embeddings.jsonl"))
        })
    }

    pub fn train(&self, round: usize) -> Result<TrainMetrics> {
        let ds = self.dataset()?;
        let mut train = Self::original_train(&ds);
        train.extend(self.additions_before(round)?);
        let emb = self.embeddings_through(round.saturating_sub(1))?;
        let pool_ids = self.available_pool(&ds, round)?;
        self.stage(Stage::Train, round, |dir| {
            let (handle, preds) = self.fit(&ds, &train, &emb)?;
            let pool: Vec<&LabeledExample> = pool_ids.iter().map(|id| &ds.examples[id]).collect();
            let pool_preds = classifier::predict(&handle, &pool, &emb)?;
            if let ClassifierHandle::Centroid(model) = &handle {
                write_json(&dir.join("model.json"), model)?;
            }
            write_lines(&dir.join("predictions_validation.jsonl"), &preds)?;
            write_lines(&dir.join("predictions_pool.jsonl"), &pool_preds)?;
            let metrics = TrainMetrics {
                round,
                accuracy: classifier::accuracy(&preds, &ds.gold())?,
                train_size: train.len(),
                pool_size: pool_ids.len(),
            };
            write_json(&dir.join("metrics.json"), &metrics)?;
            Ok(metrics)
        })
    }

    pub fn cluster(&self, round: usize) -> Result<Vec<ClusterErrorStats>> {
        let train_dir = self.dir.require(Stage::Train, round)?;
        let ds = self.dataset()?;
        let emb = self.base_embeddings()?;
        self.stage(Stage::Cluster, round, |dir| {
            let c = &self.config.clustering;
            let set = clustering::cluster_by_class(&ds, &emb, c.distance_threshold)?;
            let preds: Vec<PredictionRecord> = read_lines(&train_dir.join("predictions_validation.jsonl"))?;
            let index = error_analysis::index_predictions(&preds);
            let stats =
                error_analysis::cluster_error_stats(&set, &index, &ds.gold(), &ds.validation, c.min_cluster_size)?;
            let selected: Vec<ClusterErrorStats> = stats.iter().filter(|s| s.selected).cloned().collect();
            write_json(&dir.join("clusters.json"), &set)?;
            write_json(&dir.join("stats.json"), &stats)?;
            write_json(&dir.join("selected.json"), &selected)?;
            Ok(selected)
        })
    }

    pub fn explain(&self, round: usize) -> Result<Vec<RefinementTrace>> {
        let (set, selected) = self.selected(round)?;
        let ds = self.dataset()?;
        self.stage(Stage::Explain, round, |dir| {
            let audit = AuditLog::new();
            let clients = RefineClients {
                explainer: self.client(Role::Explainer, &audit),
                evaluator: self.client(Role::Evaluator, &audit),
            };
            let clusters = selected
                .iter()
                .map(|s| {
                    set.get(&s.cluster_id).ok_or_else(|| {
                        Error::Validation(format!("selected cluster {} not in cluster set", s.cluster_id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let traces = refine::refine_clusters(
                &clusters,
                &set,
                &ds,
                &clients,
                &self.config.refine,
                self.round_seed(round),
                self.config.llm.parallelism,
            );
            audit.write_jsonl(&dir.join("audit.jsonl"))?;
            write_json(&dir.join("traces.json"), &traces)?;
            Ok(traces)
        })
    }

    pub fn augment(&self, round: usize) -> Result<AugmentOutcome> {
        let traces = self.traces(round)?;
        let (set, selected) = self.selected(round)?;
        let ds = self.dataset()?;
        let mut existing = Self::original_train(&ds);
        existing.extend(self.additions_before(round)?);
        self.stage(Stage::Augment, round, |dir| {
            let audit = AuditLog::new();
            let mut outcome = if self.config.augment.total == 0 {
                AugmentOutcome {
                    allocation: augment::Allocation {
                        counts: selected.iter().map(|s| (s.cluster_id.clone(), 0)).collect(),
                        dropped: 0,
                    },
                    batches: Vec::new(),
                    examples: Vec::new(),
                }
            } else {
                augment::augment_clusters(
                    &selected,
                    &traces,
                    &set,
                    &ds,
                    &existing,
                    &self.client(Role::Generator, &audit),
                    &self.config.augment,
                    self.round_seed(round),
                    self.config.llm.parallelism,
                )?
            };
            // Cluster ids repeat across rounds, so synthetic ids carry the round.
            let tag = |e: &mut LabeledExample| e.id = format!("r{round}:{}", e.id);
            outcome.examples.iter_mut().for_each(tag);
            outcome
                .batches
                .iter_mut()
                .flat_map(|b| b.parsed.iter_mut())
                .for_each(tag);

            let refs: Vec<&LabeledExample> = outcome.examples.iter().collect();
            let table = if refs.is_empty() {
                EmbeddingTable::new()
            } else {
                EmbeddingTable::from_embeddings(embed(&refs, self.provider()?.as_ref())?)
            };
            table.write_jsonl(&dir.join("embeddings.jsonl"))?;
            audit.write_jsonl(&dir.join("audit.jsonl"))?;
            write_json(&dir.join("allocation.json"), &outcome.allocation)?;
            write_json(&dir.join("batches.json"), &outcome.batches)?;
            write_lines(&dir.join("synthetic.jsonl"), &outcome.examples)?;
            Ok(outcome)
        })
    }

    pub fn select(&self, round: usize) -> Result<SelectionRecord> {
        let traces = self.traces(round)?;
        let train_dir = self.dir.require(Stage::Train, round)?;
        let ds = self.dataset()?;
        let pool_ids = self.available_pool(&ds, round)?;
        self.stage(Stage::Select, round, |dir| {
            let audit = AuditLog::new();
            let cfg = &self.config.active_learning;
            let k = cfg.k.min(pool_ids.len());
            let accepted: Vec<(&str, &str)> = traces
                .iter()
                .filter_map(|t| t.accepted_predicate().map(|p| (t.cluster_id.as_str(), p.text.as_str())))
                .collect();
            let none = |strategy, note: &str| SelectionRecord {
                strategy,
                selected_ids: Vec::new(),
                per_id_score: None,
                note: Some(note.to_string()),
            };
            let record = match cfg.strategy.strategy() {
                None => none(None, "no selection strategy configured"),
                Some(Strategy::Random) => al::select_random(&pool_ids, k, self.round_seed(round))?.into(),
                Some(Strategy::Confidence) => {
                    let preds: Vec<PredictionRecord> = read_lines(&train_dir.join("predictions_pool.jsonl"))?;
                    al::select_least_confidence(&preds, k)?.into()
                }
                Some(s) if accepted.is_empty() => none(Some(s), "no accepted predicates this round"),
                Some(Strategy::DescriptionMatch) => {
                    let pool: Vec<&LabeledExample> = pool_ids.iter().map(|id| &ds.examples[id]).collect();
                    let predicates: Vec<String> = accepted.iter().map(|(_, p)| p.to_string()).collect();
                    let cap = (cfg.description_cap > 0).then_some(cfg.description_cap);
                    al::select_by_description(&pool, &predicates, &self.client(Role::Evaluator, &audit), cap)?.into()
                }
                Some(Strategy::SimilarityRank) => {
                    let rankings = self.similarity_rankings(&ds, &pool_ids, &accepted, &train_dir)?;
                    for r in &rankings {
                        rundir::write_text(
                            &dir.join(format!("curve_{}.csv", trace_file_name(&r.cluster_id))),
                            &al::curve_csv(&r.ranking.curve),
                        )?;
                    }
                    write_json(&dir.join("rankings.json"), &rankings)?;
                    combine_rankings(&rankings, k)
                }
            };
            let annotated: Vec<LabeledExample> = record
                .selected_ids
                .iter()
                .map(|id| {
                    let mut e = ds.example(id)?.clone();
                    e.origin = Origin::PoolAnnotated;
                    Ok(e)
                })
                .collect::<Result<_>>()?;
            audit.write_jsonl(&dir.join("audit.jsonl"))?;
            write_lines(&dir.join("annotated.jsonl"), &annotated)?;
            write_json(&dir.join("selection.json"), &record)?;
            Ok(record)
        })
    }

    fn similarity_rankings(
        &self,
        ds: &Dataset,
        pool_ids: &[String],
        accepted: &[(&str, &str)],
        train_dir: &Path,
    ) -> Result<Vec<PredicateRanking>> {
        let provider = self.provider()?;
        let texts: Vec<String> = accepted.iter().map(|(_, p)| p.to_string()).collect();
        let queries = provider.embed_texts(&texts)?;
        let emb = self.base_embeddings()?;
        let pool: Vec<(String, Vec<f64>)> = pool_ids
            .iter()
            .map(|id| Ok((id.clone(), emb.vector(id)?.to_vec())))
            .collect::<Result<_>>()?;
        let preds: Vec<PredictionRecord> = read_lines(&train_dir.join("predictions_pool.jsonl"))?;
        let index = error_analysis::index_predictions(&preds);
        let gold = ds.gold();
        accepted
            .iter()
            .zip(&queries)
            .map(|((cluster_id, predicate), q)| {
                Ok(PredicateRanking {
                    cluster_id: cluster_id.to_string(),
                    predicate: predicate.to_string(),
                    ranking: al::rank_by_similarity(q, &pool, &index, &gold, &self.config.active_learning.curve_ks)?,
                })
            })
            .collect()
    }

    pub fn retrain(&self, round: usize) -> Result<RetrainMetrics> {
        let train_dir = self.dir.require(Stage::Train, round)?;
        let (set, selected) = self.selected(round)?;
        self.traces(round)?;
        let synthetic = if self.config.augment.total > 0 || self.dir.is_done(Stage::Augment, round) {
            read_examples(&self.dir.require(Stage::Augment, round)?.join("synthetic.jsonl"))?
        } else {
            Vec::new()
        };
        let wants_selection = self.config.active_learning.strategy.strategy().is_some();
        let annotated = if wants_selection || self.dir.is_done(Stage::Select, round) {
            read_examples(&self.dir.require(Stage::Select, round)?.join("annotated.jsonl"))?
        } else {
            Vec::new()
        };
        let ds = self.dataset()?;
        let before: TrainMetrics = read_json(&train_dir.join("metrics.json"))?;
        let mut train = Self::original_train(&ds);
        train.extend(self.additions_before(round)?);
        let emb = self.embeddings_through(round)?;
        self.stage(Stage::Retrain, round, |dir| {
            let additions: Vec<LabeledExample> = synthetic.iter().chain(&annotated).cloned().collect();
            train.extend(additions.iter().cloned());
            let (_, preds) = self.fit(&ds, &train, &emb)?;
            let gold = ds.gold();
            let index = error_analysis::index_predictions(&preds);
            let clusters = selected
                .iter()
                .map(|s| {
                    let c = set
                        .get(&s.cluster_id)
                        .ok_or_else(|| Error::Validation(format!("unknown cluster {}", s.cluster_id)))?;
                    Ok(ClusterDelta {
                        cluster_id: s.cluster_id.clone(),
                        class_label: s.class_label.clone(),
                        size: s.size,
                        before: s.misclassification_rate,
                        after: error_analysis::misclassification_rate(&index, &c.member_ids, &gold)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let metrics = RetrainMetrics {
                round,
                accuracy_before: before.accuracy,
                accuracy_after: classifier::accuracy(&preds, &gold)?,
                synthetic: synthetic.len(),
                annotated: annotated.len(),
                train_size: train.len(),
                median_before: error_analysis::median(&clusters.iter().map(|c| c.before).collect::<Vec<_>>()),
                median_after: error_analysis::median(&clusters.iter().map(|c| c.after).collect::<Vec<_>>()),
                clusters,
            };
            write_lines(&dir.join("additions.jsonl"), &additions)?;
            write_lines(&dir.join("predictions_validation.jsonl"), &preds)?;
            write_json(&dir.join("metrics.json"), &metrics)?;
            Ok(metrics)
        })
    }

    /// Every stage in order for each round, skipping stages already on disk.
    /// A round that selects no cluster ends the run as converged.
    pub fn run(&self) -> Result<RunReport> {
        let done = |stage, round| self.dir.is_done(stage, round);
        if !done(Stage::Ingest, 0) {
            self.ingest()?;
        }
        if !done(Stage::Embed, 0) {
            self.embed()?;
        }
        for r in 1..=self.config.rounds {
            if !done(Stage::Train, r) {
                self.train(r)?;
            }
            let selected = if done(Stage::Cluster, r) {
                self.selected(r)?.1
            } else {
                self.cluster(r)?
            };
            if selected.is_empty() {
                log::info!("round {r}: no error clusters, converged");
                break;
            }
            if !done(Stage::Explain, r) {
                self.explain(r)?;
            }
            if !done(Stage::Augment, r) {
                self.augment(r)?;
            }
            if !done(Stage::Select, r) {
                self.select(r)?;
            }
            if !done(Stage::Retrain, r) {
                self.retrain(r)?;
            }
        }
        self.finalize()
    }

    /// Builds the report from the artifacts and writes it, the CSV tables
    /// and the manifest.
    pub fn finalize(&self) -> Result<RunReport> {
        let report = build_report(&self.dir, &self.config)?;
        report::write_report(&self.dir, &report)?;
        self.dir.write_manifest()?;
        Ok(report)
    }
}

impl From<al::SelectionResult> for SelectionRecord {
    fn from(r: al::SelectionResult) -> Self {
        Self {
            strategy: Some(r.strategy),
            selected_ids: r.selected_ids,
            per_id_score: r.per_id_score,
            note: None,
        }
    }
}

/// Best similarity per pool id across predicates; highest first, ties by id.
fn combine_rankings(rankings: &[PredicateRanking], k: usize) -> SelectionRecord {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for r in rankings {
        for (id, s) in r.ranking.ranked_ids.iter().zip(&r.ranking.similarities) {
            let e = best.entry(id.as_str()).or_insert(f64::NEG_INFINITY);
            *e = e.max(*s);
        }
    }
    let mut scored: Vec<(&str, f64)> = best.into_iter().collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(k);
    SelectionRecord {
        strategy: Some(Strategy::SimilarityRank),
        selected_ids: scored.iter().map(|(id, _)| id.to_string()).collect(),
        per_id_score: Some(scored.into_iter().map(|(id, s)| (id.to_string(), s)).collect()),
        note: None,
    }
}
