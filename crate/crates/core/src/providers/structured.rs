//! Line-tagged structured output.
//!
//! Q-A pairs are written as `Q: ...` / `A: ...` lines (an answer may span
//! several lines until the next `Q:`); paraphrases are one variant per line.

use super::{Generator, GeneratorSpec, ProviderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaHint {
    QaPairs,
    Paraphrases,
    Summary,
    Rewrite,
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    QaPair { question: String, answer: String },
    Text(String),
}

/// Parses `text` according to `hint`. Blank output is an empty list.
pub fn parse_structured(text: &str, hint: SchemaHint) -> Result<Vec<Record>, ProviderError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    match hint {
        SchemaHint::QaPairs => parse_qa_pairs(text),
        SchemaHint::Paraphrases => Ok(text
            .lines()
            .map(strip_list_marker)
            .filter(|l| !l.is_empty())
            .map(|l| Record::Text(l.to_owned()))
            .collect()),
        SchemaHint::Summary | SchemaHint::Rewrite | SchemaHint::Context => {
            Ok(vec![Record::Text(text.trim().to_owned())])
        }
    }
}

/// Generates and parses; a parse failure is retried once with the same prompt.
pub fn generate_structured(
    generator: &dyn Generator,
    prompt: &str,
    hint: SchemaHint,
    spec: &GeneratorSpec,
) -> Result<Vec<Record>, ProviderError> {
    let first = generator.generate(prompt, spec)?;
    match parse_structured(&first, hint) {
        Ok(records) => Ok(records),
        Err(err) => {
            tracing::debug!(%err, "structured output unparseable, retrying once");
            let second = generator.generate(prompt, spec)?;
            parse_structured(&second, hint)
        }
    }
}

fn tag<'a>(line: &'a str, tags: &[&str]) -> Option<&'a str> {
    tags.iter().find_map(|t| {
        line.get(..t.len())
            .filter(|head| head.eq_ignore_ascii_case(t))
            .map(|_| line[t.len()..].trim())
    })
}

const Q_TAGS: &[&str] = &["Q:", "Question:"];
const A_TAGS: &[&str] = &["A:", "Answer:"];

fn parse_qa_pairs(text: &str) -> Result<Vec<Record>, ProviderError> {
    let mut pairs = Vec::new();
    let mut question: Option<String> = None;
    let mut answer: Option<String> = None;
    let mut dangling = 0usize;

    let flush = |question: &mut Option<String>, answer: &mut Option<String>, pairs: &mut Vec<Record>, dangling: &mut usize| {
        match (question.take(), answer.take()) {
            (Some(q), Some(a)) if !q.is_empty() && !a.trim().is_empty() => pairs.push(Record::QaPair {
                question: q,
                answer: a.trim().to_owned(),
            }),
            (None, None) => {}
            _ => *dangling += 1,
        }
    };

    for raw in text.lines() {
        let line = strip_list_marker(raw);
        if let Some(q) = tag(line, Q_TAGS) {
            flush(&mut question, &mut answer, &mut pairs, &mut dangling);
            // Single-line form: "Q: question / A: answer" or "Q: question A: answer".
            match split_inline_answer(q) {
                Some((q, a)) => {
                    question = Some(q.to_owned());
                    answer = Some(a.to_owned());
                }
                None => question = Some(q.to_owned()),
            }
        } else if let Some(a) = tag(line, A_TAGS) {
            if question.is_some() && answer.is_none() {
                answer = Some(a.to_owned());
            } else {
                dangling += 1;
            }
        } else if let Some(a) = answer.as_mut() {
            if !line.is_empty() {
                a.push('\n');
                a.push_str(line);
            }
        } else if !line.is_empty() && question.is_none() {
            dangling += 1;
        }
    }
    flush(&mut question, &mut answer, &mut pairs, &mut dangling);

    if pairs.is_empty() {
        return Err(ProviderError::Parse(format!(
            "no complete Q/A pair found ({dangling} stray lines)"
        )));
    }
    if dangling > 0 {
        tracing::debug!(dangling, "ignored incomplete Q/A fragments");
    }
    Ok(pairs)
}

fn split_inline_answer(q: &str) -> Option<(&str, &str)> {
    for sep in [" / A:", " A:"] {
        if let Some(pos) = q.find(sep) {
            let (question, rest) = q.split_at(pos);
            let answer = rest[sep.len()..].trim();
            if !answer.is_empty() {
                return Some((question.trim(), answer));
            }
        }
    }
    None
}

/// Strips bullets, numbering ("1.", "2)") and surrounding quotes.
fn strip_list_marker(line: &str) -> &str {
    let mut s = line.trim();
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = s.strip_prefix(bullet) {
            s = rest.trim_start();
        }
    }
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && digits < s.len() {
        let after = &s[digits..];
        if let Some(rest) = after.strip_prefix(". ").or_else(|| after.strip_prefix(") ")) {
            s = rest.trim_start();
        }
    }
    if s.len() >= 2 && s.starts_with('"') && s.ends_with('"') {
        s = &s[1..s.len() - 1];
    }
    s.trim()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::FnGenerator;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn qa(q: &str, a: &str) -> Record {
        Record::QaPair { question: q.into(), answer: a.into() }
    }

    #[test]
    fn parses_line_pairs() {
        let out = parse_structured("Q: q1\nA: a1\n\nQ: q2\nA: a2 line\ncontinued", SchemaHint::QaPairs).unwrap();
        assert_eq!(out, vec![qa("q1", "a1"), qa("q2", "a2 line\ncontinued")]);
    }

    #[test]
    fn parses_inline_pair() {
        let out = parse_structured("Q: q1 / A: a1", SchemaHint::QaPairs).unwrap();
        assert_eq!(out, vec![qa("q1", "a1")]);
        let out = parse_structured("1. Question: q1\n   Answer: a1", SchemaHint::QaPairs).unwrap();
        assert_eq!(out, vec![qa("q1", "a1")]);
    }

    #[test]
    fn malformed_qa_is_an_error() {
        assert!(matches!(
            parse_structured("Sorry, I cannot help with that.", SchemaHint::QaPairs),
            Err(ProviderError::Parse(_))
        ));
        assert!(parse_structured("Q: only a question", SchemaHint::QaPairs).is_err());
        assert_eq!(parse_structured("  \n", SchemaHint::QaPairs).unwrap(), vec![]);
    }

    #[test]
    fn paraphrase_lines_lose_markers() {
        let out = parse_structured("1. First?\n- \"Second?\"\n\n3) Third?", SchemaHint::Paraphrases).unwrap();
        assert_eq!(
            out,
            vec![Record::Text("First?".into()), Record::Text("Second?".into()), Record::Text("Third?".into())]
        );
    }

    #[test]
    fn retries_once_after_parse_failure() {
        let calls = AtomicUsize::new(0);
        let g = FnGenerator::new(|_| {
            Ok(if calls.fetch_add(1, Ordering::SeqCst) == 0 { "garbage".into() } else { "Q: q\nA: a".into() })
        });
        let out = generate_structured(&g, "p", SchemaHint::QaPairs, &GeneratorSpec::default()).unwrap();
        assert_eq!(out, vec![qa("q", "a")]);
        assert_eq!(calls.load(Ordering::SeqCst), 2);

        let always_bad = FnGenerator::new(|_| Ok("garbage".into()));
        assert!(generate_structured(&always_bad, "p", SchemaHint::QaPairs, &GeneratorSpec::default()).is_err());
    }
}
