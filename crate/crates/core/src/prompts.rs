//! Prompt templates for the offline preparation pipelines.
//!
//! Templates use `{slot}` placeholders. Rendering is single-pass, so slot
//! values that themselves contain braces are inserted verbatim.

use serde::{Deserialize, Serialize};

pub const DEFAULT_COT_PREAMBLE: &str = "Work through the task step by step, then output only the final result.";

const CONTEXT: &str = "{cot}
TASK: context
Describe the overarching themes of the document in two or three sentences.
TITLE: {title}
DOCUMENT:
{document}
END DOCUMENT";

const REWRITE: &str = "{cot}
TASK: rewrite
Rewrite the chunk as a standalone passage that is consistent with the general context. Resolve references using the context and keep every fact.
CONTEXT:
{context}
END CONTEXT
CHUNK:
{chunk}
END CHUNK";

const CONDENSE: &str = "{cot}
TASK: condense
Condense the passage into one succinct sentence.
TEXT:
{text}
END TEXT";

const EXTRACT_QA: &str = "{cot}
TASK: extract_qa
List the question-answer pairs this passage answers. Write each pair as a line \"Q: <question>\" followed by a line \"A: <answer>\".
TEXT:
{text}
END TEXT";

const EXPAND_FAQ: &str = "{cot}
TASK: expand_faq
Write new question-answer pairs closely related to the pair below. Write each pair as a line \"Q: <question>\" followed by a line \"A: <answer>\".
QUESTION: {question}
ANSWER:
{answer}
END ANSWER";

const PARAPHRASE: &str = "{cot}
TASK: paraphrase
Write {count} different ways to ask the question below, one per line, without changing its meaning.
QUESTION: {question}";

/// Templates for every generation step of the augmentation and enrichment
/// pipelines. `{cot}` is replaced with [`PromptTemplates::cot_preamble`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub cot_preamble: String,
    pub context: String,
    pub rewrite: String,
    pub condense: String,
    pub extract_qa: String,
    pub expand_faq: String,
    pub paraphrase: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            cot_preamble: DEFAULT_COT_PREAMBLE.to_owned(),
            context: CONTEXT.to_owned(),
            rewrite: REWRITE.to_owned(),
            condense: CONDENSE.to_owned(),
            extract_qa: EXTRACT_QA.to_owned(),
            expand_faq: EXPAND_FAQ.to_owned(),
            paraphrase: PARAPHRASE.to_owned(),
        }
    }
}

impl PromptTemplates {
    pub fn context(&self, title: &str, document: &str) -> String {
        self.fill(&self.context, &[("title", title), ("document", document)])
    }

    pub fn rewrite(&self, context: &str, chunk: &str) -> String {
        self.fill(&self.rewrite, &[("context", context), ("chunk", chunk)])
    }

    pub fn condense(&self, text: &str) -> String {
        self.fill(&self.condense, &[("text", text)])
    }

    pub fn extract_qa(&self, text: &str) -> String {
        self.fill(&self.extract_qa, &[("text", text)])
    }

    pub fn expand_faq(&self, question: &str, answer: &str) -> String {
        let question = single_line(question);
        self.fill(&self.expand_faq, &[("question", &question), ("answer", answer)])
    }

    pub fn paraphrase(&self, question: &str, count: usize) -> String {
        let question = single_line(question);
        let count = count.to_string();
        self.fill(&self.paraphrase, &[("question", &question), ("count", &count)])
    }

    fn fill(&self, template: &str, slots: &[(&str, &str)]) -> String {
        let mut all = Vec::with_capacity(slots.len() + 1);
        all.push(("cot", self.cot_preamble.as_str()));
        all.extend_from_slice(slots);
        render(template, &all).trim_start().to_owned()
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Replaces `{name}` placeholders in one pass. Unknown placeholders are kept.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + slots.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let replaced = tail.find('}').and_then(|close| {
            let name = &tail[1..close];
            slots
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &tail[close + 1..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Value of the first line starting with `key` (e.g. `"TASK:"`), trimmed.
pub fn line_value<'a>(prompt: &'a str, key: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|line| line.strip_prefix(key))
        .map(str::trim)
}

/// Text between a line equal to `start` and the next line equal to `end`.
pub fn section<'a>(prompt: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let mut offset = 0;
    let mut begin = None;
    for line in prompt.split_inclusive('\n') {
        let bare = line.trim_end_matches(['\n', '\r']);
        match begin {
            None if bare == start => begin = Some(offset + line.len()),
            Some(b) if bare == end => return Some(prompt[b..offset].trim_end_matches(['\n', '\r'])),
            _ => {}
        }
        offset += line.len();
    }
    None
}
