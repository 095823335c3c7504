//! Cloze templates, label-word verbalizers, and prompted input assembly.
//!
//! Templates are literal strings with `<MASK>` placeholders. A placeholder
//! may name its task, as in `<MASK task=fluency>`; unannotated placeholders
//! are assigned from the end of the template, the last one to diagnosis and
//! the one before it to fluency.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::Tokenizer;
use crate::error::{Error, Result};
use crate::labels::Task;

pub const DIAGNOSIS_TEMPLATE: &str = "The diagnosis is <MASK>.";
pub const MULTI_TASK_TEMPLATE: &str = "Speech is <MASK>. Diagnosis is <MASK>.";

const PLACEHOLDER: &str = "<MASK";

/// Where the prompt phrase sits relative to the transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Front,
    Back,
}

impl Position {
    pub fn as_str(self) -> &'static str {
        match self {
            Position::Front => "front",
            Position::Back => "back",
        }
    }
}

impl std::str::FromStr for Position {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "front" => Ok(Position::Front),
            "back" => Ok(Position::Back),
            _ => Err(Error::invalid(format!("unknown prompt position {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    Mask(Task),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub segments: Vec<Segment>,
    pub position: Position,
}

impl PromptTemplate {
    pub fn parse(template: &str, position: Position) -> Result<Self> {
        let mut segments = Vec::new();
        let mut slots: Vec<(usize, Option<Task>)> = Vec::new();
        let mut rest = template;
        while let Some(start) = rest.find(PLACEHOLDER) {
            let text = &rest[..start];
            if !text.is_empty() {
                segments.push(Segment::Text(text.to_string()));
            }
            let after = &rest[start + PLACEHOLDER.len()..];
            let end = after
                .find('>')
                .ok_or_else(|| Error::Template(format!("unterminated placeholder in {template:?}")))?;
            let annotation = after[..end].trim();
            let task = if annotation.is_empty() {
                None
            } else {
                let name = annotation
                    .trim_start_matches(':')
                    .trim()
                    .strip_prefix("task=")
                    .ok_or_else(|| {
                        Error::Template(format!("bad placeholder annotation {annotation:?}"))
                    })?;
                Some(name.parse::<Task>().map_err(|_| {
                    Error::Template(format!("unknown task {name:?} in placeholder"))
                })?)
            };
            slots.push((segments.len(), task));
            segments.push(Segment::Mask(Task::Diagnosis));
            rest = &after[end + 1..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_string()));
        }
        if slots.is_empty() {
            return Err(Error::Template(format!("no <MASK> slot in {template:?}")));
        }

        let mut defaults = [Task::Diagnosis, Task::Fluency].into_iter();
        let mut assigned = vec![None; slots.len()];
        for (i, (_, task)) in slots.iter().enumerate().rev() {
            assigned[i] = match task {
                Some(t) => Some(*t),
                None => Some(defaults.next().ok_or_else(|| {
                    Error::Template(format!(
                        "too many unannotated slots in {template:?}; add task= annotations"
                    ))
                })?),
            };
        }
        let mut seen = Vec::new();
        for ((seg_idx, _), task) in slots.iter().zip(assigned) {
            let task = task.expect("every slot assigned");
            if seen.contains(&task) {
                return Err(Error::Template(format!(
                    "task {task} appears twice in {template:?}"
                )));
            }
            seen.push(task);
            segments[*seg_idx] = Segment::Mask(task);
        }
        Ok(PromptTemplate { segments, position })
    }

    pub fn diagnosis(position: Position) -> Self {
        Self::parse(DIAGNOSIS_TEMPLATE, position).expect("default template parses")
    }

    pub fn multi_task(position: Position) -> Self {
        Self::parse(MULTI_TASK_TEMPLATE, position).expect("default template parses")
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Mask(t) => Some(*t),
                Segment::Text(_) => None,
            })
            .collect()
    }

    /// Renders back to template syntax with explicit task annotations.
    pub fn to_template_string(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Text(t) => t.clone(),
                Segment::Mask(task) => format!("<MASK task={task}>"),
            })
            .collect()
    }
}

/// Class-to-label-word mapping per task. Index 0 is the positive class
/// (AD, Stumbling), index 1 the negative (non-AD, Fluent).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Verbalizer {
    pub diagnosis: [String; 2],
    pub fluency: [String; 2],
}

impl Default for Verbalizer {
    fn default() -> Self {
        Verbalizer {
            diagnosis: ["dementia".into(), "healthy".into()],
            fluency: ["stumbling".into(), "fluent".into()],
        }
    }
}

impl Verbalizer {
    pub fn words(&self, task: Task) -> &[String; 2] {
        match task {
            Task::Diagnosis => &self.diagnosis,
            Task::Fluency => &self.fluency,
        }
    }

    pub fn all_words(&self) -> impl Iterator<Item = &str> {
        self.diagnosis.iter().chain(&self.fluency).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedVerbalizer {
    pub words: Verbalizer,
    ids: BTreeMap<Task, [u32; 2]>,
}

impl ResolvedVerbalizer {
    pub fn ids(&self, task: Task) -> [u32; 2] {
        self.ids[&task]
    }
}

/// Resolves every label word to its single vocabulary token.
pub fn validate_verbalizer(
    verbalizer: &Verbalizer,
    tokenizer: &dyn Tokenizer,
) -> Result<ResolvedVerbalizer> {
    let mut ids = BTreeMap::new();
    for task in [Task::Diagnosis, Task::Fluency] {
        let mut pair = [0u32; 2];
        for (slot, word) in pair.iter_mut().zip(verbalizer.words(task)) {
            let toks = tokenizer.tokenize(word);
            if toks.len() != 1 {
                return Err(Error::Verbalizer {
                    word: word.clone(),
                    token_count: toks.len(),
                });
            }
            if toks[0] == tokenizer.unk_id() {
                return Err(Error::UnknownLabelWord(word.clone()));
            }
            *slot = toks[0];
        }
        if pair[0] == pair[1] {
            return Err(Error::invalid(format!(
                "{task} label words resolve to the same token"
            )));
        }
        ids.insert(task, pair);
    }
    Ok(ResolvedVerbalizer {
        words: verbalizer.clone(),
        ids,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptedInput {
    pub token_ids: Vec<u32>,
    pub mask_positions: BTreeMap<Task, usize>,
}

impl PromptedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Concatenates transcript and prompt between the tokenizer's sequence
/// markers. An over-long transcript loses tokens from its end; prompt tokens
/// and markers are never dropped.
pub fn assemble(
    template: &PromptTemplate,
    transcript: &str,
    tokenizer: &dyn Tokenizer,
    max_len: usize,
) -> Result<PromptedInput> {
    let mask_id = tokenizer
        .mask_id()
        .ok_or_else(|| Error::Backend("tokenizer has no mask token".into()))?;
    let mut prompt = Vec::new();
    let mut prompt_masks = Vec::new();
    for seg in &template.segments {
        match seg {
            Segment::Text(text) => prompt.extend(tokenizer.tokenize(text)),
            Segment::Mask(task) => {
                prompt_masks.push((*task, prompt.len()));
                prompt.push(mask_id);
            }
        }
    }
    if prompt.len() + 2 > max_len {
        return Err(Error::InputTooLong {
            len: prompt.len() + 2,
            max_len,
        });
    }
    let mut body = tokenizer.tokenize(transcript);
    body.truncate(max_len - 2 - prompt.len());

    let mut token_ids = Vec::with_capacity(body.len() + prompt.len() + 2);
    token_ids.push(tokenizer.begin_id());
    let prompt_start = match template.position {
        Position::Front => {
            token_ids.extend(&prompt);
            token_ids.extend(&body);
            1
        }
        Position::Back => {
            token_ids.extend(&body);
            token_ids.extend(&prompt);
            1 + body.len()
        }
    };
    token_ids.push(tokenizer.end_id());

    let mask_positions = prompt_masks
        .into_iter()
        .map(|(task, offset)| (task, prompt_start + offset))
        .collect();
    Ok(PromptedInput {
        token_ids,
        mask_positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::WordPieceTokenizer;

    fn tok() -> WordPieceTokenizer {
        WordPieceTokenizer::new(["the", "boy", "diagnosis", "is", ".", "speech", "dementia", "healthy", "stumbling", "fluent"])
    }

    #[test]
    fn default_templates() {
        assert_eq!(PromptTemplate::diagnosis(Position::Back).tasks(), [Task::Diagnosis]);
        assert_eq!(
            PromptTemplate::multi_task(Position::Back).tasks(),
            [Task::Fluency, Task::Diagnosis]
        );
    }

    #[test]
    fn annotations_and_errors() {
        let t = PromptTemplate::parse("<MASK task=diagnosis> then <MASK task=fluency>", Position::Front)
            .unwrap();
        assert_eq!(t.tasks(), [Task::Diagnosis, Task::Fluency]);
        assert_eq!(
            PromptTemplate::parse(&t.to_template_string(), Position::Front).unwrap(),
            t
        );
        assert!(PromptTemplate::parse("no slot here", Position::Front).is_err());
        assert!(PromptTemplate::parse("<MASK> <MASK> <MASK>", Position::Front).is_err());
        assert!(PromptTemplate::parse("<MASK task=diagnosis> <MASK>", Position::Front).is_err());
        assert!(PromptTemplate::parse("<MASK task=age>", Position::Front).is_err());
        assert!(PromptTemplate::parse("is <MASK", Position::Front).is_err());
    }

    #[test]
    fn back_golden_sequence() {
        let tok = tok();
        let t = PromptTemplate::parse("diagnosis is <MASK> .", Position::Back).unwrap();
        let input = assemble(&t, "the boy", &tok, 512).unwrap();
        let expected: Vec<u32> = ["[CLS]", "the", "boy", "diagnosis", "is", "[MASK]", ".", "[SEP]"]
            .iter()
            .map(|w| tok.id_of(w).unwrap())
            .collect();
        assert_eq!(input.token_ids, expected);
        assert_eq!(input.mask_positions[&Task::Diagnosis], 5);
    }

    #[test]
    fn empty_transcript_front() {
        let tok = tok();
        let t = PromptTemplate::parse("diagnosis is <MASK> .", Position::Front).unwrap();
        let a = assemble(&t, "", &tok, 512).unwrap();
        let b = assemble(&t, "the boy", &tok, 512).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a.mask_positions, b.mask_positions);
    }

    #[test]
    fn prompt_longer_than_budget_fails() {
        let tok = tok();
        let t = PromptTemplate::parse("diagnosis is <MASK> .", Position::Front).unwrap();
        assert!(matches!(
            assemble(&t, "", &tok, 5),
            Err(Error::InputTooLong { len: 6, max_len: 5 })
        ));
        assert!(assemble(&t, "the boy the boy", &tok, 6).unwrap().len() == 6);
    }

    #[test]
    fn verbalizer_resolution() {
        let tok = tok();
        let v = validate_verbalizer(&Verbalizer::default(), &tok).unwrap();
        assert_eq!(
            v.ids(Task::Diagnosis),
            [tok.id_of("dementia").unwrap(), tok.id_of("healthy").unwrap()]
        );

        let missing = WordPieceTokenizer::new(["healthy", "stumbling", "fluent"]);
        assert!(matches!(
            validate_verbalizer(&Verbalizer::default(), &missing),
            Err(Error::UnknownLabelWord(w)) if w == "dementia"
        ));

        let split = WordPieceTokenizer::new(["demen", "##tia", "healthy", "stumbling", "fluent"]);
        assert!(matches!(
            validate_verbalizer(&Verbalizer::default(), &split),
            Err(Error::Verbalizer { word, token_count: 2 }) if word == "dementia"
        ));
    }
}
