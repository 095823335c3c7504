//! Planted-marker synthetic corpora for the reference backend.
//!
//! Every transcript is a CHAT file describing the same kitchen scene. AD
//! subjects additionally use words from a small marker set and hesitate
//! more often; controls never use a marker word, so a lexical rule
//! separates the classes perfectly.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::backend::WordPieceTokenizer;
use crate::corpus::{parse_chat, SubjectRecord};
use crate::disfluency::DisfluencyLexicon;
use crate::error::{Error, Result};
use crate::labels::{AdLabel, Source, Split};
use crate::rng;

pub const SCENE_WORDS: &[&str] = &[
    "boy", "girl", "mother", "cookie", "jar", "stool", "falling", "sink", "water", "overflowing",
    "dishes", "window", "curtains", "kitchen", "taking", "washing", "and", "a", "on", "from",
    "she", "he", "floor", "plate", "cupboard", "garden",
];

pub const AD_MARKERS: &[&str] = &["thing", "forgot", "something", "what", "stuff", "know"];

pub const PROMPT_WORDS: &[&str] = &[
    "the", "diagnosis", "is", "speech", ".", "dementia", "healthy", "stumbling", "fluent",
];

const FILLERS: &[&str] = &["uh", "um"];

/// Shape of a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that an AD word slot holds a marker word.
    pub marker_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_per_class: 50,
            test_per_class: 20,
            min_words: 16,
            max_words: 28,
            marker_rate: 0.4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<SubjectRecord>,
    /// CHAT source per subject id.
    pub chat: BTreeMap<String, String>,
}

/// Every word the generator or the prompt templates can emit.
pub fn vocabulary() -> Vec<&'static str> {
    let mut words: Vec<&str> = PROMPT_WORDS.to_vec();
    words.extend(FILLERS);
    words.extend(SCENE_WORDS);
    words.extend(AD_MARKERS);
    words
}

pub fn tokenizer() -> WordPieceTokenizer {
    WordPieceTokenizer::new(vocabulary())
}

fn transcript(label: AdLabel, spec: &SyntheticSpec, rng: &mut impl Rng) -> String {
    let n_words = rng.random_range(spec.min_words..=spec.max_words);
    let (filler_rate, pause_rate) = match label {
        AdLabel::Ad => (0.12, 0.08),
        AdLabel::NonAd => (0.03, 0.02),
    };
    let mut out = String::from("@Begin\n@Languages:\teng\n@Participants:\tPAR Participant, INV Investigator\n");
    out.push_str("*INV:\tjust tell me everything you see happening .\n");
    let mut written = 0;
    while written < n_words {
        let len = rng.random_range(4..=8).min(n_words - written);
        let mut line = Vec::with_capacity(len + 2);
        for _ in 0..len {
            if rng.random_bool(filler_rate) {
                line.push(format!("&-{}", FILLERS.choose(rng).expect("fillers")));
            }
            if rng.random_bool(pause_rate) {
                line.push("(.)".to_string());
            }
            let word = if label == AdLabel::Ad && rng.random_bool(spec.marker_rate) {
                AD_MARKERS.choose(rng)
            } else {
                SCENE_WORDS.choose(rng)
            };
            line.push(word.expect("word lists are non-empty").to_string());
        }
        if label == AdLabel::Ad && rng.random_bool(0.2) {
            line.push("&=laughs".to_string());
        }
        out.push_str(&format!("*PAR:\t{} .\n", line.join(" ")));
        written += len;
    }
    out.push_str("@End\n");
    out
}

/// Generates a balanced corpus; ids are `S000`, `S001`, ... with train
/// subjects first.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if spec.min_words == 0 || spec.min_words > spec.max_words {
        return Err(Error::invalid("synthetic word range must be non-empty"));
    }
    if !(0.0..=1.0).contains(&spec.marker_rate) {
        return Err(Error::invalid("marker rate must lie in [0, 1]"));
    }
    let lexicon = DisfluencyLexicon::default();
    let mut records = Vec::new();
    let mut chat = BTreeMap::new();
    let plan = [
        (Split::Train, spec.train_per_class),
        (Split::Test, spec.test_per_class),
    ];
    let mut index = 0u64;
    for (split, per_class) in plan {
        for i in 0..2 * per_class {
            let label = if i % 2 == 0 { AdLabel::Ad } else { AdLabel::NonAd };
            let id = format!("S{index:03}");
            let mut r = rng::stream(spec.seed, "synthetic", index);
            let text = transcript(label, spec, &mut r);
            let utterances = parse_chat(&text, &lexicon)?;
            records.push(SubjectRecord::new(&id, split, label, Source::Manual, utterances));
            chat.insert(id, text);
            index += 1;
        }
    }
    Ok(SyntheticCorpus { records, chat })
}
