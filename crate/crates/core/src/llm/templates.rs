//! Prompt templates.
//!
//! Slots are written `{name}` or `{name:.Nf}`; the latter formats a numeric
//! slot value with `N` decimals. Everything outside slots is copied as is.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    PredicateFirst,
    PredicateRefine,
    AlignmentCheck,
    GenFromExamples,
    GenFromPredicate,
}

impl TemplateName {
    pub const ALL: [TemplateName; 5] = [
        TemplateName::PredicateFirst,
        TemplateName::PredicateRefine,
        TemplateName::AlignmentCheck,
        TemplateName::GenFromExamples,
        TemplateName::GenFromPredicate,
    ];
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TemplateName::PredicateFirst => "predicate_first",
            TemplateName::PredicateRefine => "predicate_refine",
            TemplateName::AlignmentCheck => "alignment_check",
            TemplateName::GenFromExamples => "gen_from_examples",
            TemplateName::GenFromPredicate => "gen_from_predicate",
        };
        f.write_str(s)
    }
}

const PREDICATE_FIRST: &str = "Here are a group of sentences:

{samples_in_prompt}

Generate a single-line predicate description that incorporates the specific word or label `{label}'.

Your response should be formatted in the following manner:
Thoughts:
1. The sentences are mainly <type of sentences>.
2. The sentences talk about <topic>.
3. I will also focus on the following attributes about the sentences in the generated predicate to be precise: <list of attributes>
PREDICATE:
- \"<predicate>\"

Try to make sure that the generated predicate is precise and will only satisfy the examples mentioned above.

Thoughts:
";

const PREDICATE_REFINE: &str = "You were asked to provide a single-line predicate description for a set of examples (let's call this CLUSTER_1) shown below:

{samples_in_prompt}

You generated the following description: \"{description}\"

This description satisfied the following examples:

{in_cluster_satisfied_examples}

However, the description also identifies with the following examples (that it should not ideally) (let's call this CLUSTER_2 examples):

{out_of_cluster_satisfied_examples}

In other words, the current description explains {pass_rate:.1f}% examples in CLUSTER_1 and {fail_rate:.1f}% examples in CLUSTER_2.

Please re-write the description that explain only examples from CLUSTER_1 while excluding examples from CLUSTER_2.

Try to make descriptions simple and general. For example, you could focus on the syntax, topic, writing style, etc.
First, for the failing description above, explain why the description does not accomplish the goal of describing only the examlpes in CLUSTER_1. Output this reasoning as:
Thoughts:
1. The examples in CLUSTER_1 and CLUSTER_2 talk about one common topic: {label}.
2. The examples in CLUSTER_1 emphasize on <CLUSTER_1 description>.
3. Whereas, the examples in CLUSTER_2 emphasize on <CLUSTER_2 description>.
4. The previous description failed because <reason>.
5. The examples in CLUSTER_2 are about \"<reason>\" which is not present in CLUSTER_1. I will focus on mentioning this reason in the new predicate.
Then output the description so that it explains only examples in CLUSTER_1, using the following format:
NEW PREDICATE:
- \"<more precise-yet-simple CLUSTER_1 description that highlights difference with CLUSTER_2>\"

Note: The new predicate has to be strictly different from the previous one.
Note: Do not mention the words CLUSTER_1 or CLUSTER_2 in your new predicate. It should be part of your thought process however.


Thoughts:
1. The examples in CLUSTER_1 and CLUSTER_2 talk about one common topic: {label}.
";

const ALIGNMENT_CHECK: &str = "Check if this statement `{example}' satisfies the given condition: `{description}'. Provide only `Yes' or `No'. When unsure, respond with `No'.";

const GEN_FROM_EXAMPLES: &str = "In this task, you will be shown some examples sentences that share some property. Your task is to generate 100 more diverse examples that satisfy the shared property of these texts.

The examples you generate should follow the style and content of the examples mentioned below:
{list_of_examples}

Consider the linguistic style, content, length, and overall structure of the provided examples. Your generated examples should resemble the provided set in terms of these aspects. Aim to produce sentences that convey similar information or ideas while maintaining consistency in tone, vocabulary, and grammatical structure.

Feel free to vary the details and specifics while ensuring that the generated examples capture the essence of the provided set. Pay attention to context, coherence, and any relevant patterns present in the examples to produce outputs that closely align with the given set.

Your response:
- ";

const GEN_FROM_PREDICATE: &str = "In this task, you will be shown some examples sentences that share a property given by the predicate below. Your task is to generate 100 more diverse examples that satisfy the predicate.

Predicate: {predicate}

The examples you generate should follow the style and content of the examples mentioned below:
{list_of_examples}

Consider the linguistic style, content, length, and overall structure of the provided examples. Your generated examples should resemble the provided set in terms of these aspects. Aim to produce sentences that convey similar information or ideas while maintaining consistency in tone, vocabulary, and grammatical structure.

Feel free to vary the details and specifics while ensuring that the generated examples capture the essence of the provided set. Pay attention to context, coherence, and any relevant patterns present in the examples to produce outputs that closely align with the given set.

Your response:
- ";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(&'static str),
    Slot {
        name: &'static str,
        decimals: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: &'static str,
}

impl PromptTemplate {
    pub fn get(name: TemplateName) -> Self {
        let body = match name {
            TemplateName::PredicateFirst => PREDICATE_FIRST,
            TemplateName::PredicateRefine => PREDICATE_REFINE,
            TemplateName::AlignmentCheck => ALIGNMENT_CHECK,
            TemplateName::GenFromExamples => GEN_FROM_EXAMPLES,
            TemplateName::GenFromPredicate => GEN_FROM_PREDICATE,
        };
        Self { name, body }
    }

    fn pieces(&self) -> Vec<Piece> {
        let body = self.body;
        let mut out = Vec::new();
        let mut lit_start = 0;
        let mut i = 0;
        let bytes = body.as_bytes();
        while i < bytes.len() {
            if bytes[i] == b'{' {
                if let Some(rel) = body[i..].find('}') {
                    let inner = &body[i + 1..i + rel];
                    let (name, spec) = match inner.split_once(':') {
                        Some((n, s)) => (n, Some(s)),
                        None => (inner, None),
                    };
                    let is_ident = !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_');
                    let decimals = spec.and_then(|s| {
                        s.strip_prefix('.')
                            .and_then(|s| s.strip_suffix('f'))
                            .and_then(|d| d.parse().ok())
                    });
                    if is_ident && (spec.is_none() || decimals.is_some()) {
                        if lit_start < i {
                            out.push(Piece::Literal(&body[lit_start..i]));
                        }
                        out.push(Piece::Slot { name, decimals });
                        i += rel + 1;
                        lit_start = i;
                        continue;
                    }
                }
            }
            i += 1;
        }
        if lit_start < body.len() {
            out.push(Piece::Literal(&body[lit_start..]));
        }
        out
    }

    /// Distinct slot names in order of first appearance.
    pub fn slots(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        for p in self.pieces() {
            if let Piece::Slot { name, .. } = p {
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        names
    }

    /// Substitutes every slot. A missing slot is an error; an empty value is
    /// allowed but logged.
    pub fn render(&self, slots: &HashMap<String, String>) -> Result<String> {
        let mut out = String::with_capacity(self.body.len() + 256);
        for piece in self.pieces() {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot { name, decimals } => {
                    let value = slots.get(name).ok_or_else(|| Error::MissingSlot {
                        template: self.name.to_string(),
                        slot: name.to_string(),
                    })?;
                    if value.is_empty() {
                        log::debug!("slot `{name}` of {} rendered empty", self.name);
                    }
                    match decimals {
                        None => out.push_str(value),
                        Some(d) => {
                            let x: f64 = value.trim().parse().map_err(|_| {
                                Error::Validation(format!(
                                    "slot `{name}` of {} expects a number, got {value:?}",
                                    self.name
                                ))
                            })?;
                            out.push_str(&format!("{x:.d$}"));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`render`](Self::render): recovers slot values from a
    /// rendered prompt, or `None` when the prompt does not fit this template.
    pub fn extract(&self, prompt: &str) -> Option<HashMap<String, String>> {
        let pieces = self.pieces();
        let mut slots = HashMap::new();
        let mut rest = prompt;
        let mut k = 0;
        while k < pieces.len() {
            match &pieces[k] {
                Piece::Literal(lit) => {
                    rest = rest.strip_prefix(lit)?;
                    k += 1;
                }
                Piece::Slot { name, .. } => {
                    let value = match pieces.get(k + 1) {
                        None => {
                            let v = rest;
                            rest = "";
                            v
                        }
                        Some(Piece::Literal(lit)) if k + 2 == pieces.len() => {
                            let v = rest.strip_suffix(lit)?;
                            rest = &rest[v.len()..];
                            v
                        }
                        Some(Piece::Literal(lit)) => {
                            let at = rest.find(lit)?;
                            let v = &rest[..at];
                            rest = &rest[at..];
                            v
                        }
                        Some(Piece::Slot { .. }) => return None,
                    };
                    if let Some(prev) = slots.get(*name) {
                        if prev != value {
                            return None;
                        }
                    }
                    slots.insert(name.to_string(), value.to_string());
                    k += 1;
                }
            }
        }
        rest.is_empty().then_some(slots)
    }

    /// The first template that `prompt` was rendered from.
    pub fn identify(prompt: &str) -> Option<(TemplateName, HashMap<String, String>)> {
        TemplateName::ALL
            .iter()
            .find_map(|&n| PromptTemplate::get(n).extract(prompt).map(|s| (n, s)))
    }
}

pub fn render(name: TemplateName, slots: &HashMap<String, String>) -> Result<String> {
    PromptTemplate::get(name).render(slots)
}

pub fn slot_map<const N: usize>(pairs: [(&str, String); N]) -> HashMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// One `- text` line per example, inner whitespace collapsed.
pub fn format_examples<S: AsRef<str>>(texts: &[S]) -> String {
    texts
        .iter()
        .map(|t| format!("- {}", t.as_ref().split_whitespace().collect::<Vec<_>>().join(" ")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inverse of [`format_examples`].
pub fn parse_examples(block: &str) -> Vec<String> {
    block
        .lines()
        .filter_map(|l| l.trim().strip_prefix("- ").or_else(|| l.trim().strip_prefix('-')))
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_inventory() {
        assert_eq!(
            PromptTemplate::get(TemplateName::PredicateFirst).slots(),
            vec!["samples_in_prompt", "label"]
        );
        assert_eq!(
            PromptTemplate::get(TemplateName::PredicateRefine).slots(),
            vec![
                "samples_in_prompt",
                "description",
                "in_cluster_satisfied_examples",
                "out_of_cluster_satisfied_examples",
                "pass_rate",
                "fail_rate",
                "label"
            ]
        );
        assert_eq!(
            PromptTemplate::get(TemplateName::AlignmentCheck).slots(),
            vec!["example", "description"]
        );
        assert_eq!(
            PromptTemplate::get(TemplateName::GenFromExamples).slots(),
            vec!["list_of_examples"]
        );
        assert_eq!(
            PromptTemplate::get(TemplateName::GenFromPredicate).slots(),
            vec!["predicate", "list_of_examples"]
        );
    }

    #[test]
    fn alignment_prompt_contains_both_values() {
        let p = render(
            TemplateName::AlignmentCheck,
            &slot_map([("example", "abc".into()), ("description", "contains letters".into())]),
        )
        .unwrap();
        assert_eq!(
            p,
            "Check if this statement `abc' satisfies the given condition: `contains letters'. \
             Provide only `Yes' or `No'. When unsure, respond with `No'."
        );
    }

    #[test]
    fn missing_slot_is_named() {
        let err = render(TemplateName::AlignmentCheck, &slot_map([("example", "abc".into())])).unwrap_err();
        match err {
            Error::MissingSlot { slot, template } => {
                assert_eq!(slot, "description");
                assert_eq!(template, "alignment_check");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_slot_renders() {
        let p = render(
            TemplateName::AlignmentCheck,
            &slot_map([("example", String::new()), ("description", "d".into())]),
        )
        .unwrap();
        assert!(p.starts_with("Check if this statement `' satisfies"));
    }

    fn refine_slots(pass: &str) -> HashMap<String, String> {
        slot_map([
            ("samples_in_prompt", "- a".into()),
            ("description", "desc".into()),
            ("in_cluster_satisfied_examples", "- a".into()),
            ("out_of_cluster_satisfied_examples", "- b".into()),
            ("pass_rate", pass.into()),
            ("fail_rate", "12.5".into()),
            ("label", "sports".into()),
        ])
    }

    #[test]
    fn refine_rates_use_one_decimal() {
        let p = render(TemplateName::PredicateRefine, &refine_slots("83.3")).unwrap();
        assert_eq!(p.matches("83.3%").count(), 1);
        assert!(p.contains("explains 83.3% examples in CLUSTER_1 and 12.5% examples in CLUSTER_2"));
        let p = render(TemplateName::PredicateRefine, &refine_slots("83.33333")).unwrap();
        assert!(p.contains("explains 83.3% examples"));
        assert!(render(TemplateName::PredicateRefine, &refine_slots("lots")).is_err());
    }

    #[test]
    fn sentinel_round_trip() {
        for name in TemplateName::ALL {
            let t = PromptTemplate::get(name);
            let slots: HashMap<String, String> = t
                .slots()
                .into_iter()
                .enumerate()
                .map(|(i, s)| {
                    let v = if s.ends_with("_rate") {
                        format!("{i}.5")
                    } else {
                        format!("<<{s}>>")
                    };
                    (s.to_string(), v)
                })
                .collect();
            let rendered = t.render(&slots).unwrap();
            let back = t.extract(&rendered).unwrap();
            assert_eq!(back, slots, "{name}");
            let (found, _) = PromptTemplate::identify(&rendered).unwrap();
            assert_eq!(found, name);
        }
    }

    #[test]
    fn extract_rejects_foreign_prompt() {
        assert!(PromptTemplate::identify("hello there").is_none());
    }

    #[test]
    fn example_lists_round_trip() {
        let texts = vec!["one  two\nthree".to_string(), "four".to_string()];
        let block = format_examples(&texts);
        assert_eq!(block, "- one two three\n- four");
        assert_eq!(parse_examples(&block), vec!["one two three", "four"]);
    }
}
