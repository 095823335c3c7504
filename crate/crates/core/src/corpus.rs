//! Transcript ingestion and dataset manifests.
//!
//! Manual transcripts use a subset of the CHAT coding format: `@` header
//! lines, `*SPK:` speaker tiers, `%` dependent tiers, and tab-indented
//! continuation lines. Only spoken words survive normalization; pauses and
//! `&=` actions become disfluency events without a lexical surface form,
//! while interjections are both kept as words and flagged as events.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::disfluency::DisfluencyLexicon;
use crate::error::{Error, Result};
use crate::labels::{AdLabel, Source, Split};
use crate::rng;

pub const PARTICIPANT_TIER: &str = "PAR";

const MANIFEST_HEADER: &str = "#manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventCategory {
    Interjection,
    Pause,
    Action,
}

/// A disfluency marker found in an utterance. `surface` is the interjection
/// word, the pause symbol, or the action code without its `&=` prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub category: EventCategory,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub tier: String,
    pub raw: String,
    pub tokens: Vec<String>,
    pub events: Vec<Event>,
}

impl Utterance {
    pub fn is_participant(&self) -> bool {
        self.tier == PARTICIPANT_TIER
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub split: Split,
    pub ad_label: AdLabel,
    pub source: Source,
    pub utterances: Vec<Utterance>,
    pub merged_text: String,
    /// Transcript file the record was parsed from, when it came from disk.
    pub transcript_path: Option<PathBuf>,
}

impl SubjectRecord {
    /// Builds a record and derives `merged_text` from the participant tier.
    pub fn new(
        subject_id: impl Into<String>,
        split: Split,
        ad_label: AdLabel,
        source: Source,
        utterances: Vec<Utterance>,
    ) -> Self {
        let merged_text = merge_participant_text(&utterances);
        SubjectRecord {
            subject_id: subject_id.into(),
            split,
            ad_label,
            source,
            utterances,
            merged_text,
            transcript_path: None,
        }
    }

    pub fn with_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.transcript_path = Some(path.into());
        self
    }

    pub fn participant_utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(|u| u.is_participant())
    }

    /// Records with no participant speech are not admitted into training or evaluation.
    pub fn ensure_admissible(&self) -> Result<()> {
        if self.merged_text.is_empty() {
            return Err(Error::Rejected {
                subject_id: self.subject_id.clone(),
                message: "no participant speech".into(),
            });
        }
        Ok(())
    }
}

pub fn merge_participant_text(utterances: &[Utterance]) -> String {
    utterances
        .iter()
        .filter(|u| u.is_participant())
        .flat_map(|u| u.tokens.iter())
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses CHAT content into one utterance per speaker tier.
pub fn parse_chat(content: &str, lexicon: &DisfluencyLexicon) -> Result<Vec<Utterance>> {
    let mut tiers: Vec<(String, String)> = Vec::new();
    // whether a continuation line extends the last speaker tier
    let mut continuing = false;

    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with(['\t', ' ']) {
            if continuing {
                let (_, body) = tiers.last_mut().expect("continuing implies a tier");
                body.push(' ');
                body.push_str(line.trim());
            }
            continue;
        }
        match line.chars().next() {
            Some('@') | Some('%') => continuing = false,
            Some('*') => {
                let Some(colon) = line.find(':') else {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("speaker tier without ':' in {line:?}"),
                    });
                };
                let speaker = line[1..colon].trim();
                if speaker.is_empty() || speaker.contains(char::is_whitespace) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("invalid speaker code in {line:?}"),
                    });
                }
                tiers.push((speaker.to_string(), line[colon + 1..].trim().to_string()));
                continuing = true;
            }
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unrecognized line {line:?}"),
                })
            }
        }
    }

    Ok(tiers
        .into_iter()
        .map(|(tier, body)| {
            let (tokens, events) = normalize_chat_body(&body, lexicon);
            Utterance {
                raw: format!("*{tier}:\t{body}"),
                tier,
                tokens,
                events,
            }
        })
        .collect())
}

fn strip_delimited(text: &str, open: char, close: char) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    for c in text.chars() {
        if c == open {
            depth += 1;
            out.push(' ');
        } else if c == close && depth > 0 {
            depth -= 1;
            out.push(' ');
        } else if depth == 0 {
            out.push(c);
        }
    }
    out
}

/// Media time bullets are delimited on both sides by U+0015.
fn strip_time_bullets(text: &str) -> String {
    let mut inside = false;
    text.chars()
        .filter_map(|c| {
            if c == '\u{15}' {
                inside = !inside;
                Some(' ')
            } else if inside {
                None
            } else {
                Some(c)
            }
        })
        .collect()
}

fn normalize_chat_body(body: &str, lexicon: &DisfluencyLexicon) -> (Vec<String>, Vec<Event>) {
    let text = strip_time_bullets(body);
    let text = strip_delimited(&text, '[', ']');
    let text = text.replace(['<', '>', '‹', '›', '“', '”', '"'], " ");

    let mut tokens = Vec::new();
    let mut events = Vec::new();
    for raw in text.split_whitespace() {
        if lexicon.is_pause_marker(raw) {
            events.push(Event {
                category: EventCategory::Pause,
                surface: raw.to_string(),
            });
            continue;
        }
        if let Some(action) = raw.strip_prefix("&=") {
            events.push(Event {
                category: EventCategory::Action,
                surface: action.to_lowercase(),
            });
            continue;
        }
        if let Some(rest) = raw.strip_prefix('&') {
            // &-uh fillers and &uh older-style fillers; other & forms are fragments
            let word = clean_word(rest.strip_prefix('-').unwrap_or(rest));
            if lexicon.is_interjection(&word) {
                events.push(Event {
                    category: EventCategory::Interjection,
                    surface: word.clone(),
                });
                tokens.push(word);
            }
            continue;
        }
        if !raw.chars().any(char::is_alphanumeric) {
            continue;
        }
        if raw.starts_with('0') || raw.starts_with('(') && raw.ends_with(')') {
            // omitted words and timed pauses such as (1.5)
            continue;
        }
        for piece in raw.split(['+', '_']) {
            let word = clean_word(piece);
            if word.is_empty() || matches!(word.as_str(), "xxx" | "yyy" | "www") {
                continue;
            }
            if lexicon.is_interjection(&word) {
                events.push(Event {
                    category: EventCategory::Interjection,
                    surface: word.clone(),
                });
            }
            tokens.push(word);
        }
    }
    (tokens, events)
}

/// Lowercases and removes CHAT word-internal codes: `@` suffixes,
/// shortening parentheses, lengthening colons, and stray punctuation.
fn clean_word(piece: &str) -> String {
    let piece = piece.split('@').next().unwrap_or("");
    let mut word: String = piece
        .chars()
        .filter(|c| c.is_alphanumeric() || *c == '\'' || *c == '-')
        .flat_map(char::to_lowercase)
        .collect();
    while word.ends_with(['-', '\'']) {
        word.pop();
    }
    while word.starts_with(['-', '\'']) {
        word.remove(0);
    }
    word
}

/// Builds a single-utterance participant record from recognizer output.
/// Pause symbols and action codes have no meaning here and stay literal.
pub fn ingest_asr(
    subject_id: &str,
    plain_text: &str,
    split: Split,
    ad_label: AdLabel,
    lexicon: &DisfluencyLexicon,
) -> Result<SubjectRecord> {
    let tokens: Vec<String> = plain_text
        .split_whitespace()
        .map(str::to_lowercase)
        .collect();
    if tokens.is_empty() {
        return Err(Error::Rejected {
            subject_id: subject_id.to_string(),
            message: "empty ASR transcript".into(),
        });
    }
    let events = tokens
        .iter()
        .filter(|t| lexicon.is_interjection(t))
        .map(|t| Event {
            category: EventCategory::Interjection,
            surface: t.clone(),
        })
        .collect();
    let utterance = Utterance {
        tier: PARTICIPANT_TIER.to_string(),
        raw: plain_text.trim().to_string(),
        tokens,
        events,
    };
    Ok(SubjectRecord::new(
        subject_id,
        split,
        ad_label,
        Source::Asr,
        vec![utterance],
    ))
}

/// Reads and parses one transcript file according to its source.
pub fn load_transcript(
    path: &Path,
    subject_id: &str,
    split: Split,
    ad_label: AdLabel,
    source: Source,
    lexicon: &DisfluencyLexicon,
) -> Result<SubjectRecord> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record = match source {
        Source::Manual => {
            let utterances = parse_chat(&content, lexicon).map_err(|e| Error::Rejected {
                subject_id: subject_id.to_string(),
                message: format!("{}: {e}", path.display()),
            })?;
            SubjectRecord::new(subject_id, split, ad_label, source, utterances)
        }
        Source::Asr => ingest_asr(subject_id, &content, split, ad_label, lexicon)?,
    };
    Ok(record.with_path(path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<SubjectRecord>,
    pub train_count: usize,
    pub test_count: usize,
    pub fold_count: usize,
    pub fold_of: BTreeMap<String, usize>,
}

/// Assigns train records to `fold_count` folds stratified by AD label.
///
/// Each class is shuffled with a seed-derived stream and dealt round-robin,
/// the fold cursor carrying over from one class to the next, so fold sizes
/// and per-fold class counts each differ by at most one.
pub fn build_manifest(
    records: Vec<SubjectRecord>,
    fold_count: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if fold_count < 2 {
        return Err(Error::Manifest(format!(
            "fold_count must be at least 2, got {fold_count}"
        )));
    }
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.subject_id.as_str()) {
            return Err(Error::Manifest(format!(
                "duplicate subject_id {:?}",
                r.subject_id
            )));
        }
    }
    let train_count = records.iter().filter(|r| r.split == Split::Train).count();
    let test_count = records.len() - train_count;
    if train_count < fold_count {
        return Err(Error::Manifest(format!(
            "{train_count} train records cannot fill {fold_count} folds"
        )));
    }

    let mut fold_of = BTreeMap::new();
    let mut cursor = 0usize;
    for (class_idx, label) in [AdLabel::Ad, AdLabel::NonAd].into_iter().enumerate() {
        let mut ids: Vec<&str> = records
            .iter()
            .filter(|r| r.split == Split::Train && r.ad_label == label)
            .map(|r| r.subject_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.shuffle(&mut rng::stream(seed, "folds", class_idx as u64));
        for id in ids {
            fold_of.insert(id.to_string(), cursor % fold_count);
            cursor += 1;
        }
    }

    Ok(DatasetManifest {
        records,
        train_count,
        test_count,
        fold_count,
        fold_of,
    })
}

impl DatasetManifest {
    pub fn train(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.records.iter().filter(|r| r.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.records.iter().filter(|r| r.split == Split::Test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Train records split into (training folds, held-out fold).
    pub fn fold_split(&self, fold: usize) -> Result<(Vec<&SubjectRecord>, Vec<&SubjectRecord>)> {
        if fold >= self.fold_count {
            return Err(Error::Manifest(format!(
                "fold {fold} out of range 0..{}",
                self.fold_count
            )));
        }
        let mut train = Vec::new();
        let mut held_out = Vec::new();
        for r in self.train() {
            let f = *self.fold_of.get(&r.subject_id).ok_or_else(|| {
                Error::Manifest(format!("no fold assignment for {:?}", r.subject_id))
            })?;
            if f == fold {
                held_out.push(r);
            } else {
                train.push(r);
            }
        }
        Ok((train, held_out))
    }

    /// Serializes to the tab-separated manifest format.
    pub fn to_manifest_string(&self) -> String {
        self.render(None)
    }

    fn render(&self, base: Option<&Path>) -> String {
        let mut out = format!("{MANIFEST_HEADER}\tfolds={}\n", self.fold_count);
        for r in &self.records {
            let fold = self
                .fold_of
                .get(&r.subject_id)
                .map_or_else(|| "-".to_string(), usize::to_string);
            let path = r
                .transcript_path
                .as_ref()
                .map(|p| base.and_then(|b| p.strip_prefix(b).ok()).unwrap_or(p))
                .map_or_else(|| "-".to_string(), |p| p.display().to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.subject_id, r.split, r.ad_label, r.source, fold, path
            );
        }
        out
    }

    /// Writes the manifest; transcripts under the manifest's directory are
    /// stored as relative paths.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().filter(|b| !b.as_os_str().is_empty());
        fs::write(path, self.render(base)).map_err(|e| Error::io(path, e))
    }

    /// Loads a manifest file, re-parsing each transcript. Relative transcript
    /// paths resolve against the manifest's directory.
    pub fn load(path: &Path, lexicon: &DisfluencyLexicon) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&content, base, lexicon)
    }

    pub fn parse(content: &str, base: &Path, lexicon: &DisfluencyLexicon) -> Result<Self> {
        let mut lines = content.lines().enumerate();
        let fold_count = match lines.next() {
            Some((_, header)) if header.starts_with(MANIFEST_HEADER) => header
                .split('\t')
                .find_map(|f| f.strip_prefix("folds="))
                .map(|n| {
                    n.parse::<usize>()
                        .map_err(|_| Error::Manifest(format!("bad fold count {n:?}")))
                })
                .transpose()?
                .unwrap_or(10),
            _ => {
                return Err(Error::Manifest(format!(
                    "missing {MANIFEST_HEADER:?} header"
                )))
            }
        };

        let mut records = Vec::new();
        let mut fold_of = BTreeMap::new();
        for (idx, line) in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, split, label, source, fold, file] = fields[..] else {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected 6 tab-separated fields, got {}", fields.len()),
                });
            };
            let split: Split = split.parse()?;
            let label: AdLabel = label.parse()?;
            let source: Source = source.parse()?;
            if fold != "-" {
                let f: usize = fold.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("bad fold {fold:?}"),
                })?;
                if f >= fold_count || split != Split::Train {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: format!("fold {fold} invalid for {split} record"),
                    });
                }
                fold_of.insert(id.to_string(), f);
            }
            if file == "-" {
                return Err(Error::Manifest(format!("{id}: no transcript path")));
            }
            let file = PathBuf::from(file);
            let resolved = if file.is_relative() {
                base.join(&file)
            } else {
                file.clone()
            };
            let record = load_transcript(&resolved, id, split, label, source, lexicon)?;
            records.push(record.with_path(file));
        }

        let train_count = records.iter().filter(|r| r.split == Split::Train).count();
        let manifest = DatasetManifest {
            test_count: records.len() - train_count,
            train_count,
            records,
            fold_count,
            fold_of,
        };
        let mut seen = BTreeSet::new();
        for r in &manifest.records {
            if !seen.insert(&r.subject_id) {
                return Err(Error::Manifest(format!("duplicate subject_id {:?}", r.subject_id)));
            }
        }
        Ok(manifest)
    }

    /// Checks that every train subject has exactly one fold.
    pub fn validate_folds(&self) -> Result<()> {
        for r in self.train() {
            if !self.fold_of.contains_key(&r.subject_id) {
                return Err(Error::Manifest(format!(
                    "missing fold assignment for {:?}",
                    r.subject_id
                )));
            }
        }
        if self.fold_of.len() != self.train_count {
            return Err(Error::Manifest("fold map covers non-train subjects".into()));
        }
        Ok(())
    }
}
