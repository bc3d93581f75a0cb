use crate::error::{Error, Result};

/// `true` iff the trimmed, lowercased response starts with "yes".
pub fn parse_yes_no(response: &str) -> bool {
    response
        .trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .to_lowercase()
        .starts_with("yes")
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

fn strip_bullet(line: &str) -> &str {
    line.trim()
        .trim_start_matches(['-', '*', '\u{2022}', '\u{2013}', '\u{2014}'])
        .trim()
}

fn strip_outer_quotes(mut s: &str) -> &str {
    for _ in 0..2 {
        let mut chars = s.chars();
        match (chars.next(), chars.next_back()) {
            (Some(a), Some(b)) if QUOTES.contains(&a) && QUOTES.contains(&b) => {
                s = chars.as_str().trim();
            }
            _ => break,
        }
    }
    s
}

/// The predicate line following the last `PREDICATE:` marker (which also
/// covers `NEW PREDICATE:`), with bullet and enclosing quotes removed.
pub fn parse_predicate(response: &str) -> Result<String> {
    let upper = response.to_ascii_uppercase();
    let fail = || Error::PredicateParse {
        raw: response.to_string(),
    };
    let at = upper.rfind("PREDICATE:").ok_or_else(fail)?;
    let rest = &response[at + "PREDICATE:".len()..];
    let line = rest
        .lines()
        .map(|l| strip_outer_quotes(strip_bullet(l)))
        .find(|l| !l.is_empty())
        .ok_or_else(fail)?;
    Ok(line.to_string())
}

/// Bulleted (`- x`, `* x`) or numbered (`1. x`, `2) x`) lines of a generation
/// response. Other lines are ignored. Because generation prompts end with an
/// open bullet, an unmarked first line is accepted too, unless it ends with a
/// colon (a preamble such as "Here are the examples:").
pub fn parse_generated_lines(response: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (i, raw) in response.lines().enumerate() {
        let line = raw.trim();
        let body = if let Some(b) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
            Some(b)
        } else {
            let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
            if digits > 0 {
                line[digits..]
                    .strip_prefix(". ")
                    .or_else(|| line[digits..].strip_prefix(") "))
            } else if i == 0 && !line.is_empty() && !line.ends_with(':') {
                Some(line)
            } else {
                None
            }
        };
        if let Some(b) = body {
            let b = strip_outer_quotes(b.trim());
            if !b.is_empty() {
                out.push(b.to_string());
            }
        }
    }
    out
}

/// The token quoted in `word '<token>'`, if present.
pub fn quoted_word(description: &str) -> Option<String> {
    let lower = description.to_lowercase();
    let start = lower.find("word '")? + "word '".len();
    let end = lower[start..].find('\'')? + start;
    let w = lower[start..end].trim();
    (!w.is_empty()).then(|| w.to_string())
}
