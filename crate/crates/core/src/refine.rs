//! Explain, evaluate and refine: an explainer LLM proposes a one-line
//! predicate for an error cluster, an evaluator LLM checks every in-cluster
//! and same-class out-of-cluster example against it, and the explainer is
//! asked to rewrite the predicate until it is precise enough or the
//! iteration budget runs out.

use serde::{Deserialize, Serialize};

use crate::clustering::{Cluster, ClusterSet};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::llm::templates::{format_examples, render, slot_map};
use crate::llm::{parse_predicate, parse_yes_no, AuditLog, LlmClient, TemplateName};
use crate::parallel::bounded_map;
use crate::rng::{sample_ordered, stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub text: String,
    pub cluster_id: String,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Accept only when the in-cluster rate is strictly above this.
    pub in_rate: f64,
    /// Accept only when the out-of-cluster rate is strictly below this.
    pub out_rate: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            in_rate: 0.8,
            out_rate: 0.2,
        }
    }
}

impl Thresholds {
    pub fn accepts(&self, in_rate: f64, out_rate: f64) -> bool {
        in_rate > self.in_rate && out_rate < self.out_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub thresholds: Thresholds,
    pub max_iterations: usize,
    pub in_prompt_cap: usize,
    pub out_prompt_cap: usize,
    pub out_eval_cap: usize,
    pub satisfied_display_cap: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            max_iterations: 5,
            in_prompt_cap: 64,
            out_prompt_cap: 32,
            out_eval_cap: 256,
            satisfied_display_cap: 16,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        if !(0.0..=1.0).contains(&t.in_rate) || !(0.0..=1.0).contains(&t.out_rate) {
            return Err(Error::Config("refine thresholds must lie in [0, 1]".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("refine.max_iterations must be >= 1".into()));
        }
        if self.in_prompt_cap == 0 || self.out_prompt_cap == 0 || self.out_eval_cap == 0 {
            return Err(Error::Config("refine sample caps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub in_rate: f64,
    pub out_rate: f64,
    pub in_satisfied_ids: Vec<String>,
    pub out_satisfied_ids: Vec<String>,
    pub exchange_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub predicate: Predicate,
    pub in_rate: f64,
    pub out_rate: f64,
    pub in_satisfied_ids: Vec<String>,
    pub out_satisfied_ids: Vec<String>,
    /// Explainer exchanges first, then one evaluator exchange per example.
    pub exchange_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Accepted,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub cluster_id: String,
    pub class_label: String,
    pub records: Vec<IterationRecord>,
    pub final_status: TraceStatus,
    /// Predicates attempted, including one whose generation failed.
    pub iterations_used: usize,
    pub out_pool_ids: Vec<String>,
    pub error: Option<String>,
}

impl RefinementTrace {
    pub fn accepted(&self) -> bool {
        self.final_status == TraceStatus::Accepted
    }

    /// The final predicate of an accepted trace.
    pub fn accepted_predicate(&self) -> Option<&Predicate> {
        if self.accepted() {
            self.records.last().map(|r| &r.predicate)
        } else {
            None
        }
    }

    pub fn first_predicate(&self) -> Option<&Predicate> {
        self.records.first().map(|r| &r.predicate)
    }
}

/// The two chat roles the loop talks to.
#[derive(Debug, Clone)]
pub struct RefineClients {
    pub explainer: LlmClient,
    pub evaluator: LlmClient,
}

impl RefineClients {
    fn with_audit(&self, audit: &AuditLog) -> Self {
        Self {
            explainer: self.explainer.with_audit(audit.clone()),
            evaluator: self.evaluator.with_audit(audit.clone()),
        }
    }
}

/// Iteration 0: describe the in-cluster prompt sample.
pub fn generate_initial(
    cluster_id: &str,
    texts: &[String],
    label: &str,
    explainer: &LlmClient,
) -> Result<(Predicate, Vec<String>)> {
    let prompt = render(
        TemplateName::PredicateFirst,
        &slot_map([
            ("samples_in_prompt", format_examples(texts)),
            ("label", label.to_string()),
        ]),
    )?;
    let ex = explainer.complete(&prompt)?;
    let text = parse_predicate(&ex.response)?;
    Ok((
        Predicate {
            text,
            cluster_id: cluster_id.to_string(),
            iteration: 0,
        },
        vec![ex.id],
    ))
}

/// One evaluator call per example. `out_rate` is 0 for an empty out set.
pub fn evaluate_predicate(
    predicate: &str,
    in_examples: &[(String, String)],
    out_examples: &[(String, String)],
    evaluator: &LlmClient,
) -> Result<Evaluation> {
    if in_examples.is_empty() {
        return Err(Error::Validation(
            "predicate evaluation needs in-cluster examples".into(),
        ));
    }
    let prompts = in_examples
        .iter()
        .chain(out_examples)
        .map(|(_, text)| {
            render(
                TemplateName::AlignmentCheck,
                &slot_map([("example", text.clone()), ("description", predicate.to_string())]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let answers = evaluator.complete_all(&prompts)?;
    let (ans_in, ans_out) = answers.split_at(in_examples.len());
    let satisfied = |exs: &[(String, String)], ans: &[crate::llm::ChatExchange]| -> Vec<String> {
        exs.iter()
            .zip(ans)
            .filter(|(_, a)| parse_yes_no(&a.response))
            .map(|((id, _), _)| id.clone())
            .collect()
    };
    let in_satisfied_ids = satisfied(in_examples, ans_in);
    let out_satisfied_ids = satisfied(out_examples, ans_out);
    Ok(Evaluation {
        in_rate: in_satisfied_ids.len() as f64 / in_examples.len() as f64,
        out_rate: if out_examples.is_empty() {
            0.0
        } else {
            out_satisfied_ids.len() as f64 / out_examples.len() as f64
        },
        in_satisfied_ids,
        out_satisfied_ids,
        exchange_ids: answers.into_iter().map(|a| a.id).collect(),
    })
}

/// Inputs of one rewrite request.
#[derive(Debug, Clone)]
pub struct RefineRequest<'a> {
    pub previous: &'a IterationRecord,
    pub prompt_in_texts: &'a [String],
    pub in_satisfied_texts: &'a [String],
    pub out_satisfied_texts: &'a [String],
    pub label: &'a str,
}

/// Asks for a predicate that differs from the previous one. Returns `None`
/// when the explainer repeats the previous predicate twice.
pub fn refine_predicate(req: &RefineRequest<'_>, explainer: &LlmClient) -> Result<(Option<Predicate>, Vec<String>)> {
    let prev = &req.previous.predicate;
    let prompt = render(
        TemplateName::PredicateRefine,
        &slot_map([
            ("samples_in_prompt", format_examples(req.prompt_in_texts)),
            ("description", prev.text.clone()),
            ("in_cluster_satisfied_examples", format_examples(req.in_satisfied_texts)),
            (
                "out_of_cluster_satisfied_examples",
                format_examples(req.out_satisfied_texts),
            ),
            ("pass_rate", (req.previous.in_rate * 100.0).to_string()),
            ("fail_rate", (req.previous.out_rate * 100.0).to_string()),
            ("label", req.label.to_string()),
        ]),
    )?;
    let mut ids = Vec::new();
    for _ in 0..2 {
        let ex = explainer.complete(&prompt)?;
        ids.push(ex.id);
        let text = parse_predicate(&ex.response)?;
        if text != prev.text {
            return Ok((
                Some(Predicate {
                    text,
                    cluster_id: prev.cluster_id.clone(),
                    iteration: prev.iteration + 1,
                }),
                ids,
            ));
        }
        log::info!("{}: explainer repeated its predicate", prev.cluster_id);
    }
    Ok((None, ids))
}

fn texts_of(dataset: &Dataset, ids: &[String]) -> Vec<(String, String)> {
    ids.iter()
        .map(|id| (id.clone(), dataset.examples[id].text.clone()))
        .collect()
}

/// Same-class validation members of the other clusters.
pub fn out_of_cluster_ids(cluster: &Cluster, cluster_set: &ClusterSet) -> Vec<String> {
    let mut ids: Vec<String> = cluster_set
        .by_class(&cluster.class_label)
        .filter(|c| c.id != cluster.id)
        .flat_map(|c| c.member_ids.iter().cloned())
        .collect();
    ids.sort();
    ids
}

/// Runs the loop for one cluster. Failures end the trace as exhausted with
/// the error message kept.
pub fn run_refinement(
    cluster: &Cluster,
    cluster_set: &ClusterSet,
    dataset: &Dataset,
    llm: &RefineClients,
    config: &RefineConfig,
    seed: u64,
) -> RefinementTrace {
    let mut rng = stream(seed, &format!("refine/{}", cluster.id));
    let prompt_in_ids = sample_ordered(&cluster.member_ids, config.in_prompt_cap, &mut rng);
    let out_pool_ids = sample_ordered(&out_of_cluster_ids(cluster, cluster_set), config.out_eval_cap, &mut rng);

    let mut trace = RefinementTrace {
        cluster_id: cluster.id.clone(),
        class_label: cluster.class_label.clone(),
        records: Vec::new(),
        final_status: TraceStatus::Exhausted,
        iterations_used: 0,
        out_pool_ids,
        error: None,
    };
    let (Ok(in_examples), Ok(out_pool)) = (
        cluster
            .member_ids
            .iter()
            .map(|id| dataset.example(id).map(|e| (id.clone(), e.text.clone())))
            .collect::<Result<Vec<_>>>(),
        trace
            .out_pool_ids
            .iter()
            .map(|id| dataset.example(id).map(|e| (id.clone(), e.text.clone())))
            .collect::<Result<Vec<_>>>(),
    ) else {
        trace.error = Some(format!("{}: cluster members missing from dataset", cluster.id));
        return trace;
    };
    let prompt_in_texts: Vec<String> = texts_of(dataset, &prompt_in_ids).into_iter().map(|(_, t)| t).collect();

    let result = (|| -> Result<()> {
        for iteration in 0..config.max_iterations {
            trace.iterations_used = iteration + 1;
            let (predicate, mut exchange_ids) = match trace.records.last() {
                None => generate_initial(&cluster.id, &prompt_in_texts, &cluster.class_label, &llm.explainer)?,
                Some(prev) => {
                    let in_sat: Vec<String> = prompt_in_ids
                        .iter()
                        .filter(|id| prev.in_satisfied_ids.contains(id))
                        .take(config.satisfied_display_cap)
                        .map(|id| dataset.examples[id].text.clone())
                        .collect();
                    let out_sample = sample_ordered(&trace.out_pool_ids, config.out_prompt_cap, &mut rng);
                    let out_sat: Vec<String> = out_sample
                        .iter()
                        .filter(|id| prev.out_satisfied_ids.contains(id))
                        .take(config.satisfied_display_cap)
                        .map(|id| dataset.examples[id].text.clone())
                        .collect();
                    let req = RefineRequest {
                        previous: prev,
                        prompt_in_texts: &prompt_in_texts,
                        in_satisfied_texts: &in_sat,
                        out_satisfied_texts: &out_sat,
                        label: &cluster.class_label,
                    };
                    match refine_predicate(&req, &llm.explainer)? {
                        (Some(p), ids) => (p, ids),
                        (None, _) => {
                            trace.iterations_used = iteration;
                            trace.error = Some("explainer repeated the previous predicate".into());
                            return Ok(());
                        }
                    }
                }
            };
            let eval = evaluate_predicate(&predicate.text, &in_examples, &out_pool, &llm.evaluator)?;
            exchange_ids.extend(eval.exchange_ids);
            let accepted = config.thresholds.accepts(eval.in_rate, eval.out_rate);
            log::debug!(
                "{} iteration {iteration}: in {:.3} out {:.3} {:?}",
                cluster.id,
                eval.in_rate,
                eval.out_rate,
                predicate.text
            );
            trace.records.push(IterationRecord {
                predicate,
                in_rate: eval.in_rate,
                out_rate: eval.out_rate,
                in_satisfied_ids: eval.in_satisfied_ids,
                out_satisfied_ids: eval.out_satisfied_ids,
                exchange_ids,
            });
            if accepted {
                trace.final_status = TraceStatus::Accepted;
                return Ok(());
            }
            if out_pool.is_empty() {
                // Nothing to contrast against; a rewrite has no signal.
                return Ok(());
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!("{}: refinement stopped: {e}", cluster.id);
        trace.error = Some(e.to_string());
    }
    trace
}

/// Runs independent loops for several clusters. Each loop logs into its own
/// buffer; buffers are appended to the shared audit log in cluster order so
/// the log does not depend on scheduling.
pub fn refine_clusters(
    clusters: &[&Cluster],
    cluster_set: &ClusterSet,
    dataset: &Dataset,
    llm: &RefineClients,
    config: &RefineConfig,
    seed: u64,
    parallelism: usize,
) -> Vec<RefinementTrace> {
    let shared = llm.explainer.audit().clone();
    let runs = bounded_map(clusters, parallelism, |c| {
        let local = AuditLog::new();
        let trace = run_refinement(c, cluster_set, dataset, &llm.with_audit(&local), config, seed);
        (trace, local)
    });
    runs.into_iter()
        .map(|(trace, local)| {
            shared.extend(local.snapshot());
            trace
        })
        .collect()
}
