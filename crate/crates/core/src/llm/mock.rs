//! Deterministic stand-ins for the three chat roles. Each reads the slot
//! values back out of the rendered prompt and answers by simple token rules,
//! so a response depends only on the prompt.

use std::collections::{BTreeMap, BTreeSet};

use super::parse::quoted_word;
use super::templates::{parse_examples, PromptTemplate, TemplateName};
use super::{ChatBackend, LlmConfig};
use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// Candidate predicate words: purely alphabetic tokens of three or more letters.
fn words(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.len() >= 3 && t.chars().all(|c| c.is_alphabetic()))
        .collect()
}

fn document_frequency(texts: &[String]) -> BTreeMap<String, i64> {
    let mut df = BTreeMap::new();
    for t in texts {
        for w in words(t) {
            *df.entry(w).or_insert(0) += 1;
        }
    }
    df
}

pub fn mock_predicate(token: &str, label: &str) -> String {
    format!("The text contains the word '{token}' and relates to {label}.")
}

/// Picks the word maximising in-cluster minus out-of-cluster document
/// frequency. Ties go to the alphabetically first word.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockExplainer;

impl MockExplainer {
    fn best(inside: &[String], outside: &[String], exclude: Option<&str>) -> Option<String> {
        let din = document_frequency(inside);
        let dout = document_frequency(outside);
        let mut best: Option<(i64, &String)> = None;
        for (w, n) in &din {
            if Some(w.as_str()) == exclude {
                continue;
            }
            let score = n - dout.get(w).copied().unwrap_or(0);
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, w));
            }
        }
        best.map(|(_, w)| w.clone())
    }
}

impl ChatBackend for MockExplainer {
    fn tag(&self) -> String {
        "mock-explainer".into()
    }

    fn chat(&self, _config: &LlmConfig, prompt: &str) -> Result<String> {
        let Some((name, slots)) = PromptTemplate::identify(prompt) else {
            return Ok("I can only describe groups of sentences.".into());
        };
        let label = slots.get("label").cloned().unwrap_or_default();
        match name {
            TemplateName::PredicateFirst => {
                let inside = parse_examples(&slots["samples_in_prompt"]);
                Ok(match Self::best(&inside, &[], None) {
                    Some(tok) => format!(
                        "1. The sentences are mainly short statements.\n\
                         2. The sentences talk about {label}.\n\
                         3. I will also focus on the following attributes about the sentences in the generated predicate to be precise: the word '{tok}'\n\
                         PREDICATE:\n- \"{}\"",
                        mock_predicate(&tok, &label)
                    ),
                    None => "The sentences share no common word.".into(),
                })
            }
            TemplateName::PredicateRefine => {
                let inside = parse_examples(&slots["samples_in_prompt"]);
                let outside = parse_examples(&slots["out_of_cluster_satisfied_examples"]);
                let previous = quoted_word(&slots["description"]);
                Ok(match Self::best(&inside, &outside, previous.as_deref()) {
                    Some(tok) => format!(
                        "2. The examples in CLUSTER_1 emphasize on '{tok}'.\n\
                         3. Whereas, the examples in CLUSTER_2 emphasize on '{prev}'.\n\
                         4. The previous description failed because it also covers CLUSTER_2.\n\
                         5. The examples in CLUSTER_2 are about \"{prev}\" which is not present in CLUSTER_1. I will focus on mentioning this reason in the new predicate.\n\
                         NEW PREDICATE:\n- \"{}\"",
                        mock_predicate(&tok, &label),
                        prev = previous.as_deref().unwrap_or("something else"),
                    ),
                    None => "No other word separates the two groups.".into(),
                })
            }
            other => Err(Error::Backend(format!("mock explainer cannot answer a {other} prompt"))),
        }
    }
}

/// Answers "Yes" when the statement contains the quoted word of the
/// condition, ignoring case.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEvaluator;

impl ChatBackend for MockEvaluator {
    fn tag(&self) -> String {
        "mock-evaluator".into()
    }

    fn chat(&self, _config: &LlmConfig, prompt: &str) -> Result<String> {
        let Some(slots) = PromptTemplate::get(TemplateName::AlignmentCheck).extract(prompt) else {
            return Ok("No".into());
        };
        let hit = quoted_word(&slots["description"]).is_some_and(|w| slots["example"].to_lowercase().contains(&w));
        Ok(if hit { "Yes" } else { "No" }.into())
    }
}

/// Emits `n` lines `- {exemplar} {token} (variant k)`, cycling through the
/// exemplars that contain the token (or all exemplars when none does).
#[derive(Debug, Clone, Copy)]
pub struct MockGenerator {
    pub lines: usize,
}

impl Default for MockGenerator {
    fn default() -> Self {
        Self { lines: 100 }
    }
}

impl ChatBackend for MockGenerator {
    fn tag(&self) -> String {
        "mock-generator".into()
    }

    fn chat(&self, _config: &LlmConfig, prompt: &str) -> Result<String> {
        let Some((name, slots)) = PromptTemplate::identify(prompt) else {
            return Err(Error::Backend("mock generator got an unknown prompt".into()));
        };
        let token = match name {
            TemplateName::GenFromPredicate => quoted_word(&slots["predicate"]),
            TemplateName::GenFromExamples => None,
            other => return Err(Error::Backend(format!("mock generator cannot answer a {other} prompt"))),
        };
        let exemplars = parse_examples(&slots["list_of_examples"]);
        if exemplars.is_empty() {
            return Err(Error::Backend("mock generator got no examples".into()));
        }
        let pool: Vec<&String> = match &token {
            Some(t) => {
                let with: Vec<&String> = exemplars
                    .iter()
                    .filter(|e| e.to_lowercase().contains(t.as_str()))
                    .collect();
                if with.is_empty() {
                    exemplars.iter().collect()
                } else {
                    with
                }
            }
            None => exemplars.iter().collect(),
        };
        let suffix = token.as_deref().map(|t| format!(" {t}")).unwrap_or_default();
        let lines: Vec<String> = (1..=self.lines)
            .map(|k| format!("{}{suffix} (variant {k})", pool[(k - 1) % pool.len()]))
            .collect();
        // The prompt already ends with an open bullet.
        Ok(lines.join("\n- "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::templates::{format_examples, render, slot_map};
    use crate::llm::{parse_generated_lines, parse_predicate, parse_yes_no, Role};

    fn cfg(role: Role) -> LlmConfig {
        LlmConfig::defaults(role)
    }

    fn check(example: &str, description: &str) -> String {
        let p = render(
            TemplateName::AlignmentCheck,
            &slot_map([("example", example.into()), ("description", description.into())]),
        )
        .unwrap();
        MockEvaluator.chat(&cfg(Role::Evaluator), &p).unwrap()
    }

    #[test]
    fn evaluator_substring_rule() {
        assert_eq!(check("the cat sat", "contains the word 'cat'"), "Yes");
        assert_eq!(check("the dog sat", "contains the word 'cat'"), "No");
        assert_eq!(check("The CAT sat", "contains the word 'cat'"), "Yes");
        assert_eq!(check("the cat sat", "is about animals"), "No");
        assert!(parse_yes_no(&check("a cat", "contains the word 'cat'")));
    }

    #[test]
    fn explainer_first_picks_most_common_word() {
        let texts = vec![
            "quarterly earnings rose".to_string(),
            "earnings beat forecasts".to_string(),
            "weak earnings at the bank".to_string(),
        ];
        let p = render(
            TemplateName::PredicateFirst,
            &slot_map([
                ("samples_in_prompt", format_examples(&texts)),
                ("label", "business".into()),
            ]),
        )
        .unwrap();
        let r = MockExplainer.chat(&cfg(Role::Explainer), &p).unwrap();
        assert_eq!(
            parse_predicate(&r).unwrap(),
            "The text contains the word 'earnings' and relates to business."
        );
    }

    #[test]
    fn explainer_refine_avoids_previous_and_outside_words() {
        let inside = vec![
            "alpha beta".to_string(),
            "alpha beta gamma".to_string(),
            "alpha gamma".to_string(),
        ];
        let outside = vec!["beta zeta".to_string(), "beta".to_string()];
        let p = render(
            TemplateName::PredicateRefine,
            &slot_map([
                ("samples_in_prompt", format_examples(&inside)),
                ("description", mock_predicate("alpha", "x")),
                ("in_cluster_satisfied_examples", format_examples(&inside)),
                ("out_of_cluster_satisfied_examples", format_examples(&outside)),
                ("pass_rate", "100".into()),
                ("fail_rate", "50".into()),
                ("label", "x".into()),
            ]),
        )
        .unwrap();
        let r = MockExplainer.chat(&cfg(Role::Explainer), &p).unwrap();
        // alpha is excluded; beta scores 2-2=0, gamma 2-0=2.
        assert_eq!(parse_predicate(&r).unwrap(), mock_predicate("gamma", "x"));
        assert!(r.contains("NEW PREDICATE:"));
    }

    #[test]
    fn generator_cycles_matching_exemplars() {
        let ex = vec![
            "one apple".to_string(),
            "two pears".to_string(),
            "three apples".to_string(),
        ];
        let p = render(
            TemplateName::GenFromPredicate,
            &slot_map([
                ("predicate", mock_predicate("apple", "fruit")),
                ("list_of_examples", format_examples(&ex)),
            ]),
        )
        .unwrap();
        let r = MockGenerator { lines: 3 }.chat(&cfg(Role::Generator), &p).unwrap();
        let full = format!("- {r}");
        assert_eq!(
            parse_generated_lines(&full),
            vec![
                "one apple apple (variant 1)",
                "three apples apple (variant 2)",
                "one apple apple (variant 3)"
            ]
        );
        let p = render(
            TemplateName::GenFromExamples,
            &slot_map([("list_of_examples", format_examples(&ex))]),
        )
        .unwrap();
        let r = MockGenerator { lines: 2 }.chat(&cfg(Role::Generator), &p).unwrap();
        assert_eq!(
            parse_generated_lines(&r),
            vec!["one apple (variant 1)", "two pears (variant 2)"]
        );
    }
}
