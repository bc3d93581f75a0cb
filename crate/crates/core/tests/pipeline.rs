mod common;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::de::DeserializeOwned;

use slicelens::active_learning::curve_from_indicators;
use slicelens::augment::GenerationBatch;
use slicelens::classifier::{CentroidModel, PredictionRecord};
use slicelens::clustering::ClusterSet;
use slicelens::corpus::{Dataset, Embedding, EmbeddingTable, LabeledExample};
use slicelens::pipeline::report::REPORT_JSON;
use slicelens::pipeline::{
    build_report, BackendOverride, Pipeline, PredicateRanking, RetrainMetrics, RunDir, RunReport, SelectionRecord,
    Stage, TrainMetrics,
};
use slicelens::refine::RefinementTrace;
use slicelens::synthetic::PlantedSpec;

use common::*;

fn read<T: DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn dataset(data: &Path) -> Dataset {
    slicelens::corpus::load_jsonl(data).unwrap()
}

#[test]
fn resumed_run_matches_a_single_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_planted(tmp.path(), &PlantedSpec::two_biases(), 2);
    let config = mock_config(&data, 2, &["rounds=2", "augment.total=60"]);
    let whole = run_pipeline(config.clone(), &tmp.path().join("whole"));

    let parts = tmp.path().join("parts");
    let p = Pipeline::new(config.clone(), Some(parts.clone()), BackendOverride::FromConfig).unwrap();
    p.ingest().unwrap();
    p.embed().unwrap();
    p.train(1).unwrap();
    p.cluster(1).unwrap();
    p.explain(1).unwrap();
    drop(p);
    let resumed = run_pipeline(config, &parts);
    assert_eq!(whole.canonical_json().unwrap(), resumed.canonical_json().unwrap());
}

#[test]
fn stage_out_of_order_names_the_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_planted(tmp.path(), &PlantedSpec::single_bias(), 0);
    let p = Pipeline::new(
        mock_config(&data, 0, &[]),
        Some(tmp.path().join("run")),
        BackendOverride::FromConfig,
    )
    .unwrap();
    p.ingest().unwrap();
    p.embed().unwrap();
    p.train(1).unwrap();
    let err = p.explain(1).unwrap_err().to_string();
    assert!(err.contains("cluster (round 1)"), "{err}");
}

#[test]
fn report_is_recomputable_from_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_planted(tmp.path(), &PlantedSpec::two_biases(), 1);
    let config = mock_config(&data, 1, &["rounds=3", "augment.total=60"]);
    let dir = tmp.path().join("run");
    let report = run_pipeline(config.clone(), &dir);
    let on_disk: RunReport = read(&dir.join(REPORT_JSON));
    assert_eq!(on_disk.canonical(), report.canonical());
    let rebuilt = build_report(&RunDir::create(&dir).unwrap(), &config).unwrap();
    assert_eq!(rebuilt.canonical_json().unwrap(), report.canonical_json().unwrap());

    let run = RunDir::create(&dir).unwrap();
    let base: TrainMetrics = read(&run.stage_dir(Stage::Train, 1).join("metrics.json"));
    assert_eq!(report.base_accuracy, base.accuracy);
    let mut series = vec![base.accuracy];
    for r in 1..=report.rounds_completed {
        let m: RetrainMetrics = read(&run.stage_dir(Stage::Retrain, r).join("metrics.json"));
        series.push(m.accuracy_after);
    }
    assert_eq!(report.accuracy_series, series);
    assert_eq!(report.post_accuracy, *series.last().unwrap());
}

#[test]
fn no_op_round_keeps_base_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_planted(tmp.path(), &PlantedSpec::single_bias(), 3);
    let report = run_pipeline(mock_config(&data, 3, &["augment.total=0"]), &tmp.path().join("run"));
    assert_eq!(report.post_accuracy, report.base_accuracy);
    assert!(report.clusters.iter().all(|c| c.before == c.after));
}

fn augment_artifacts(dir: &Path) -> (Vec<RefinementTrace>, Vec<GenerationBatch>, Vec<LabeledExample>) {
    let run = RunDir::create(dir).unwrap();
    (
        read(&run.stage_dir(Stage::Explain, 1).join("traces.json")),
        read(&run.stage_dir(Stage::Augment, 1).join("batches.json")),
        read_lines(&run.stage_dir(Stage::Augment, 1).join("synthetic.jsonl")),
    )
}

#[test]
fn methods_share_the_eligible_clusters_and_gate_on_acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_planted(tmp.path(), &PlantedSpec::two_biases(), 4);
    let ds = dataset(&data);
    let mut eligible = Vec::new();
    for method in ["no_desc", "first_desc", "refined_desc"] {
        let dir = tmp.path().join(method);
        let m = format!("augment.method=\"{method}\"");
        let config = mock_config(&data, 4, &["augment.total=100", &m]);
        let report = run_pipeline(config, &dir);
        let (traces, batches, synthetic) = augment_artifacts(&dir);
        let accepted: BTreeSet<String> = traces
            .iter()
            .filter(|t| t.accepted())
            .map(|t| t.cluster_id.clone())
            .collect();
        let batched: BTreeSet<String> = batches.iter().map(|b| b.cluster_id.clone()).collect();
        assert!(batched.is_subset(&accepted), "{method}: batch for an exhausted trace");

        let run = RunDir::create(&dir).unwrap();
        let set: ClusterSet = read(&run.stage_dir(Stage::Cluster, 1).join("clusters.json"));
        for e in &synthetic {
            let source = e
                .source_cluster
                .as_deref()
                .expect("synthetic examples name their cluster");
            assert_eq!(e.label, set.get(source).unwrap().class_label);
        }
        let metrics: RetrainMetrics = read(&run.stage_dir(Stage::Retrain, 1).join("metrics.json"));
        assert_eq!(metrics.train_size, ds.train.len() + synthetic.len());
        assert_eq!(metrics.synthetic, synthetic.len());
        assert_eq!(report.method, method);
        eligible.push(accepted);
    }
    assert!(!eligible[0].is_empty());
    assert!(eligible.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn trace_records_are_internally_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_planted(tmp.path(), &PlantedSpec::two_biases(), 0);
    let dir = tmp.path().join("run");
    run_pipeline(mock_config(&data, 0, &["augment.total=0"]), &dir);
    let ds = dataset(&data);
    let run = RunDir::create(&dir).unwrap();
    let set: ClusterSet = read(&run.stage_dir(Stage::Cluster, 1).join("clusters.json"));
    let traces: Vec<RefinementTrace> = read(&run.stage_dir(Stage::Explain, 1).join("traces.json"));
    assert!(!traces.is_empty());
    for t in &traces {
        let cluster = set.get(&t.cluster_id).unwrap();
        let members: BTreeSet<&String> = cluster.member_ids.iter().collect();
        assert!((1..=5).contains(&t.iterations_used), "{}", t.iterations_used);
        for id in &t.out_pool_ids {
            assert_eq!(ds.examples[id].label, cluster.class_label);
            assert!(!members.contains(id));
        }
        for r in &t.records {
            assert_eq!(r.in_rate, r.in_satisfied_ids.len() as f64 / members.len() as f64);
            if !t.out_pool_ids.is_empty() {
                assert_eq!(
                    r.out_rate,
                    r.out_satisfied_ids.len() as f64 / t.out_pool_ids.len() as f64
                );
            }
        }
        if t.accepted() {
            let last = t.records.last().unwrap();
            assert!(last.in_rate > 0.8 && last.out_rate < 0.2);
        }
    }
}

#[test]
fn active_learning_strategies_through_the_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_planted(tmp.path(), &PlantedSpec::two_biases(), 6);
    let ds = dataset(&data);
    let pool: BTreeSet<&String> = ds.pool.iter().collect();
    for strategy in ["random", "confidence", "description_match", "similarity_rank"] {
        let dir = tmp.path().join(strategy);
        let s = format!("active_learning.strategy=\"{strategy}\"");
        let report = run_pipeline(
            mock_config(&data, 6, &["augment.total=0", &s, "active_learning.k=40"]),
            &dir,
        );
        let run = RunDir::create(&dir).unwrap();
        let sel_dir = run.stage_dir(Stage::Select, 1);
        let record: SelectionRecord = read(&sel_dir.join("selection.json"));
        let annotated: Vec<LabeledExample> = read_lines(&sel_dir.join("annotated.jsonl"));
        let ids: BTreeSet<&String> = record.selected_ids.iter().collect();
        assert_eq!(ids.len(), record.selected_ids.len(), "{strategy}: duplicates");
        assert!(ids.is_subset(&pool), "{strategy}: selection outside the pool");
        assert!(!ids.is_empty(), "{strategy}: nothing selected");
        assert_eq!(annotated.len(), record.selected_ids.len());
        for e in &annotated {
            assert_eq!(
                e.label, ds.examples[&e.id].label,
                "{strategy}: annotation is not the gold label"
            );
        }
        if strategy != "description_match" {
            assert_eq!(record.selected_ids.len(), 40, "{strategy}");
        }
        assert_eq!(report.method, strategy);

        if strategy == "similarity_rank" {
            let rankings: Vec<PredicateRanking> = read(&sel_dir.join("rankings.json"));
            assert!(!rankings.is_empty());
            let preds: HashMap<String, PredictionRecord> =
                read_lines::<PredictionRecord>(&run.stage_dir(Stage::Train, 1).join("predictions_pool.jsonl"))
                    .into_iter()
                    .map(|p| (p.example_id.clone(), p))
                    .collect();
            let ks = &report.config.active_learning.curve_ks;
            for r in &rankings {
                let wrong: Vec<bool> = r
                    .ranking
                    .ranked_ids
                    .iter()
                    .map(|id| preds[id].predicted_label != ds.examples[id].label)
                    .collect();
                assert_eq!(curve_from_indicators(&wrong, ks), r.ranking.curve);
                let csv =
                    std::fs::read_to_string(sel_dir.join(format!("curve_{}.csv", r.cluster_id.replace('#', "_"))))
                        .unwrap();
                assert_eq!(csv, slicelens::active_learning::curve_csv(&r.ranking.curve));
            }
        }
    }
}

#[test]
fn centroid_toy_matches_hand_computation() {
    // Class a at (0, 0) and (2, 0), class b at (0, 4): centroids (1, 0) and (0, 4).
    let points = [
        ("a0", "a", [0.0, 0.0]),
        ("a1", "a", [2.0, 0.0]),
        ("b0", "b", [0.0, 4.0]),
    ];
    let examples: Vec<LabeledExample> = points
        .iter()
        .map(|(id, l, _)| LabeledExample::original(*id, "t", *l))
        .collect();
    let table = EmbeddingTable::from_embeddings(points.iter().map(|(id, _, v)| Embedding {
        example_id: id.to_string(),
        components: v.to_vec(),
        provider_tag: "toy".into(),
    }));
    let refs: Vec<&LabeledExample> = examples.iter().collect();
    let model = CentroidModel::fit(&["a".into(), "b".into()], &refs, &table).unwrap();
    assert_eq!(model.centroids, vec![vec![1.0, 0.0], vec![0.0, 4.0]]);
    // Query (1, 1): distances 1 and sqrt(10).
    let p = model.predict_vector("q", &[1.0, 1.0]);
    let (da, db) = (1.0f64, 10f64.sqrt());
    let (wa, wb) = (0.0f64.exp(), (da - db).exp());
    assert_eq!(p.predicted_label, "a");
    assert!((p.probabilities["a"] - wa / (wa + wb)).abs() < 1e-12);
    assert!((p.probabilities["b"] - wb / (wa + wb)).abs() < 1e-12);
}

#[test]
fn equal_seeds_give_identical_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_planted(tmp.path(), &PlantedSpec::single_bias(), 8);
    let config = mock_config(&data, 8, &["augment.total=0"]);
    let mut all = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        run_pipeline(config.clone(), &dir);
        let run = RunDir::create(&dir).unwrap();
        all.push(std::fs::read(run.stage_dir(Stage::Explain, 1).join("traces.json")).unwrap());
    }
    assert_eq!(all[0], all[1]);
}
