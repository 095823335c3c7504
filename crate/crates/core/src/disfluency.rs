//! Disfluency counting and Stumbling/Fluent threshold selection.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{EventCategory, SubjectRecord};
use crate::error::{Error, Result};
use crate::labels::{AdLabel, FluencyLabel};

pub const DEFAULT_INTERJECTIONS: &[&str] = &["uh", "um", "hm", "er", "ah", "eh", "mhm"];
pub const PAUSE_MARKERS: &[&str] = &["(.)", "(..)", "(...)"];
pub const ACTION_PREFIX: &str = "&=";

/// Which surface forms count as disfluency events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisfluencyLexicon {
    pub interjections: BTreeSet<String>,
    pub pause_markers: BTreeSet<String>,
    pub action_prefix: String,
}

impl Default for DisfluencyLexicon {
    fn default() -> Self {
        DisfluencyLexicon {
            interjections: DEFAULT_INTERJECTIONS.iter().map(|s| s.to_string()).collect(),
            pause_markers: PAUSE_MARKERS.iter().map(|s| s.to_string()).collect(),
            action_prefix: ACTION_PREFIX.to_string(),
        }
    }
}

impl DisfluencyLexicon {
    pub fn with_interjections<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let lex = DisfluencyLexicon {
            interjections: words.into_iter().map(|w| w.into().to_lowercase()).collect(),
            ..Self::default()
        };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.interjections.is_empty() || self.pause_markers.is_empty() {
            return Err(Error::invalid("disfluency lexicon sets must be non-empty"));
        }
        if self.action_prefix.is_empty() {
            return Err(Error::invalid("disfluency action prefix must be non-empty"));
        }
        Ok(())
    }

    pub fn is_interjection(&self, word: &str) -> bool {
        self.interjections.contains(word)
    }

    pub fn is_pause_marker(&self, symbol: &str) -> bool {
        self.pause_markers.contains(symbol)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisfluencyProfile {
    pub subject_id: String,
    pub count_interjection: u32,
    pub count_pause: u32,
    pub count_action: u32,
    pub total: u32,
}

impl DisfluencyProfile {
    pub fn new(subject_id: impl Into<String>, interjection: u32, pause: u32, action: u32) -> Self {
        DisfluencyProfile {
            subject_id: subject_id.into(),
            count_interjection: interjection,
            count_pause: pause,
            count_action: action,
            total: interjection + pause + action,
        }
    }
}

/// Tallies disfluency events over the participant's utterances.
pub fn profile(record: &SubjectRecord, lexicon: &DisfluencyLexicon) -> DisfluencyProfile {
    let (mut int, mut pause, mut action) = (0, 0, 0);
    for event in record.participant_utterances().flat_map(|u| &u.events) {
        match event.category {
            EventCategory::Interjection if lexicon.is_interjection(&event.surface) => int += 1,
            EventCategory::Pause if lexicon.is_pause_marker(&event.surface) => pause += 1,
            EventCategory::Action => action += 1,
            _ => {}
        }
    }
    DisfluencyProfile::new(record.subject_id.clone(), int, pause, action)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FluencyLabeling {
    pub threshold: u32,
    pub labels: BTreeMap<String, FluencyLabel>,
    pub stumbling_count: usize,
    pub fluent_count: usize,
}

impl FluencyLabeling {
    /// Stumbling iff a subject's total is at least `threshold`.
    pub fn at_threshold(profiles: &[DisfluencyProfile], threshold: u32) -> Self {
        let labels: BTreeMap<String, FluencyLabel> = profiles
            .iter()
            .map(|p| {
                let label = if p.total >= threshold {
                    FluencyLabel::Stumbling
                } else {
                    FluencyLabel::Fluent
                };
                (p.subject_id.clone(), label)
            })
            .collect();
        let stumbling_count = labels
            .values()
            .filter(|l| **l == FluencyLabel::Stumbling)
            .count();
        FluencyLabeling {
            threshold,
            fluent_count: labels.len() - stumbling_count,
            stumbling_count,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn stumbling_proportion(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.stumbling_count as f64 / self.labels.len() as f64
        }
    }
}

/// Phi coefficient of a 2x2 table held as `num / sqrt(den)` so that
/// comparisons are exact. A zero marginal gives phi = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Phi {
    num: i128,
    den: i128,
}

impl Phi {
    /// `a` = stumbling AD, `b` = stumbling non-AD, `c` = fluent AD, `d` = fluent non-AD.
    pub fn from_table(a: u64, b: u64, c: u64, d: u64) -> Self {
        let (a, b, c, d) = (a as i128, b as i128, c as i128, d as i128);
        let den = (a + b) * (c + d) * (a + c) * (b + d);
        if den == 0 {
            return Phi { num: 0, den: 1 };
        }
        Phi {
            num: a * d - b * c,
            den,
        }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / (self.den as f64).sqrt()
    }
}

impl PartialOrd for Phi {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Phi {
    fn cmp(&self, other: &Self) -> Ordering {
        let sa = self.num.signum();
        let sb = other.num.signum();
        if sa != sb {
            return sa.cmp(&sb);
        }
        // same sign: compare num^2 / den, flipped for negatives
        let lhs = self.num * self.num * other.den;
        let rhs = other.num * other.num * self.den;
        if sa >= 0 {
            lhs.cmp(&rhs)
        } else {
            rhs.cmp(&lhs)
        }
    }
}

fn check_same_subjects(
    profiles: &[DisfluencyProfile],
    ad_labels: &BTreeMap<String, AdLabel>,
) -> Result<()> {
    if profiles.len() != ad_labels.len()
        || profiles.iter().any(|p| !ad_labels.contains_key(&p.subject_id))
    {
        return Err(Error::invalid(
            "profiles and AD labels cover different subject sets",
        ));
    }
    Ok(())
}

/// Phi between {total >= t} and {label = AD} at one threshold.
pub fn phi_at(
    profiles: &[DisfluencyProfile],
    ad_labels: &BTreeMap<String, AdLabel>,
    threshold: u32,
) -> Phi {
    let (mut a, mut b, mut c, mut d) = (0u64, 0u64, 0u64, 0u64);
    for p in profiles {
        let stumbling = p.total >= threshold;
        let ad = ad_labels.get(&p.subject_id) == Some(&AdLabel::Ad);
        match (stumbling, ad) {
            (true, true) => a += 1,
            (true, false) => b += 1,
            (false, true) => c += 1,
            (false, false) => d += 1,
        }
    }
    Phi::from_table(a, b, c, d)
}

/// Picks the threshold whose Stumbling/Fluent split best correlates with
/// AD/non-AD, scanning every t in `0..=max_total + 1`; ties go to the smallest t.
pub fn select_threshold_by_correlation(
    profiles: &[DisfluencyProfile],
    ad_labels: &BTreeMap<String, AdLabel>,
) -> Result<FluencyLabeling> {
    check_same_subjects(profiles, ad_labels)?;
    let n_ad = ad_labels.values().filter(|l| **l == AdLabel::Ad).count();
    if n_ad == 0 || n_ad == ad_labels.len() {
        return Err(Error::invalid(
            "threshold selection needs both AD and non-AD subjects",
        ));
    }
    let max_total = profiles.iter().map(|p| p.total).max().unwrap_or(0);
    let mut best = (0u32, phi_at(profiles, ad_labels, 0));
    for t in 1..=max_total + 1 {
        let phi = phi_at(profiles, ad_labels, t);
        if phi > best.1 {
            best = (t, phi);
        }
    }
    Ok(FluencyLabeling::at_threshold(profiles, best.0))
}

/// Picks the threshold whose Stumbling proportion is closest to the
/// reference labeling's; ties go to the smallest t.
pub fn select_threshold_by_split_match(
    profiles: &[DisfluencyProfile],
    reference: &FluencyLabeling,
) -> Result<FluencyLabeling> {
    if profiles.is_empty() {
        return Err(Error::invalid("no profiles to threshold"));
    }
    if reference.is_empty() {
        return Err(Error::invalid("reference labeling is empty"));
    }
    let n = profiles.len() as i128;
    let m = reference.len() as i128;
    let r = reference.stumbling_count as i128;
    let max_total = profiles.iter().map(|p| p.total).max().unwrap_or(0);
    let mut best: Option<(u32, i128)> = None;
    for t in 0..=max_total + 1 {
        let s = profiles.iter().filter(|p| p.total >= t).count() as i128;
        // |s/n - r/m| scaled by n*m
        let dist = (s * m - r * n).abs();
        if best.is_none_or(|(_, d)| dist < d) {
            best = Some((t, dist));
        }
    }
    let (t, _) = best.expect("range is non-empty");
    Ok(FluencyLabeling::at_threshold(profiles, t))
}

const DISFLUENCY_HEADER: &str = "#disfluency v1";

/// Tab-separated `subject_id, c_int, c_pause, c_action, total, label` rows.
pub fn write_profiles(profiles: &[DisfluencyProfile], labeling: &FluencyLabeling) -> Result<String> {
    let mut out = format!("{DISFLUENCY_HEADER}\tthreshold={}\n", labeling.threshold);
    for p in profiles {
        let label = labeling.labels.get(&p.subject_id).ok_or_else(|| {
            Error::invalid(format!("no fluency label for {:?}", p.subject_id))
        })?;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            p.subject_id, p.count_interjection, p.count_pause, p.count_action, p.total, label
        );
    }
    Ok(out)
}

pub fn read_profiles(content: &str) -> Result<(Vec<DisfluencyProfile>, FluencyLabeling)> {
    let mut lines = content.lines().enumerate();
    let threshold = match lines.next() {
        Some((_, h)) if h.starts_with(DISFLUENCY_HEADER) => h
            .split('\t')
            .find_map(|f| f.strip_prefix("threshold="))
            .and_then(|t| t.parse::<u32>().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "missing threshold in header".into(),
            })?,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("missing {DISFLUENCY_HEADER:?} header"),
            })
        }
    };
    let mut profiles = Vec::new();
    let mut labels = BTreeMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        let f: Vec<&str> = line.split('\t').collect();
        let [id, ci, cp, ca, total, label] = f[..] else {
            return Err(parse_err(format!("expected 6 fields, got {}", f.len())));
        };
        let num = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| parse_err(format!("bad count {s:?}")))
        };
        let p = DisfluencyProfile::new(id, num(ci)?, num(cp)?, num(ca)?);
        if p.total != num(total)? {
            return Err(parse_err(format!("total {total} is not the sum of counts")));
        }
        let label: FluencyLabel = label.parse()?;
        let expected = if p.total >= threshold {
            FluencyLabel::Stumbling
        } else {
            FluencyLabel::Fluent
        };
        if label != expected {
            return Err(parse_err(format!(
                "label {label} disagrees with threshold {threshold}"
            )));
        }
        labels.insert(id.to_string(), label);
        profiles.push(p);
    }
    let labeling = FluencyLabeling::at_threshold(&profiles, threshold);
    debug_assert_eq!(labeling.labels, labels);
    Ok((profiles, labeling))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_chat, SubjectRecord};
    use crate::labels::{Source, Split};

    fn labels_of(pairs: &[(&str, AdLabel)]) -> BTreeMap<String, AdLabel> {
        pairs.iter().map(|(s, l)| (s.to_string(), *l)).collect()
    }

    #[test]
    fn tally_one_of_each() {
        let lex = DisfluencyLexicon::default();
        let u = parse_chat("*PAR:\tthe (.) uh boy &=laughs .", &lex).unwrap();
        let r = SubjectRecord::new("s", Split::Train, AdLabel::Ad, Source::Manual, u);
        let p = profile(&r, &lex);
        assert_eq!((p.count_interjection, p.count_pause, p.count_action, p.total), (1, 1, 1, 3));
    }

    #[test]
    fn tally_is_additive_across_utterances() {
        let lex = DisfluencyLexicon::default();
        let text = "*PAR:\tuh um the boy .\n*INV:\tuh okay .\n*PAR:\tum er uh cookie .";
        let r = SubjectRecord::new(
            "s",
            Split::Train,
            AdLabel::Ad,
            Source::Manual,
            parse_chat(text, &lex).unwrap(),
        );
        assert_eq!(profile(&r, &lex).count_interjection, 5);
    }

    #[test]
    fn empty_record_profiles_to_zero() {
        let r = SubjectRecord::new("s", Split::Train, AdLabel::Ad, Source::Manual, vec![]);
        assert_eq!(profile(&r, &DisfluencyLexicon::default()).total, 0);
    }

    #[test]
    fn separable_totals_pick_smallest_perfect_threshold() {
        let mut profiles = Vec::new();
        let mut labels = Vec::new();
        for i in 0..5 {
            profiles.push(DisfluencyProfile::new(format!("a{i}"), 12, 0, 0));
            labels.push((format!("a{i}"), AdLabel::Ad));
            profiles.push(DisfluencyProfile::new(format!("n{i}"), 2, 0, 0));
            labels.push((format!("n{i}"), AdLabel::NonAd));
        }
        let labels: BTreeMap<_, _> = labels.into_iter().collect();
        let l = select_threshold_by_correlation(&profiles, &labels).unwrap();
        assert_eq!(l.threshold, 3);
        assert!((phi_at(&profiles, &labels, 12).value() - 1.0).abs() < 1e-12);
        assert_eq!(phi_at(&profiles, &labels, 13).value(), 0.0);
    }

    #[test]
    fn constant_totals_fall_back_to_zero() {
        let profiles = vec![
            DisfluencyProfile::new("a", 4, 0, 0),
            DisfluencyProfile::new("b", 4, 0, 0),
        ];
        let labels = labels_of(&[("a", AdLabel::Ad), ("b", AdLabel::NonAd)]);
        let l = select_threshold_by_correlation(&profiles, &labels).unwrap();
        assert_eq!(l.threshold, 0);
        assert_eq!(l.stumbling_count, 2);
    }

    #[test]
    fn single_class_is_rejected() {
        let profiles = vec![DisfluencyProfile::new("a", 4, 0, 0)];
        let labels = labels_of(&[("a", AdLabel::Ad)]);
        assert!(select_threshold_by_correlation(&profiles, &labels).is_err());
    }

    #[test]
    fn split_match_scans_distances() {
        // t=1 -> 5/10 stumbling, t=2 -> 2/10 stumbling
        let mut profiles = Vec::new();
        for i in 0..10 {
            let total = match i {
                0 | 1 => 5,
                2..=4 => 1,
                _ => 0,
            };
            profiles.push(DisfluencyProfile::new(format!("s{i}"), total, 0, 0));
        }
        assert_eq!(FluencyLabeling::at_threshold(&profiles, 1).stumbling_proportion(), 0.5);
        assert_eq!(FluencyLabeling::at_threshold(&profiles, 2).stumbling_proportion(), 0.2);
        let reference_profiles: Vec<_> = (0..5)
            .map(|i| DisfluencyProfile::new(format!("r{i}"), if i == 0 { 9 } else { 0 }, 0, 0))
            .collect();
        let reference = FluencyLabeling::at_threshold(&reference_profiles, 1);
        assert_eq!(reference.stumbling_proportion(), 0.2);
        let l = select_threshold_by_split_match(&profiles, &reference).unwrap();
        assert_eq!(l.threshold, 2);

        assert!(select_threshold_by_split_match(&[], &reference).is_err());
    }

    #[test]
    fn split_match_against_self_has_zero_distance() {
        let profiles: Vec<_> = (0..20)
            .map(|i| DisfluencyProfile::new(format!("s{i}"), i % 7, i % 3, 0))
            .collect();
        let reference = FluencyLabeling::at_threshold(&profiles, 5);
        let l = select_threshold_by_split_match(&profiles, &reference).unwrap();
        assert_eq!(l.stumbling_count, reference.stumbling_count);
        assert!(l.threshold <= 5);
    }

    #[test]
    fn profile_file_round_trip() {
        let profiles = vec![
            DisfluencyProfile::new("a", 3, 4, 5),
            DisfluencyProfile::new("b", 0, 1, 0),
        ];
        let labeling = FluencyLabeling::at_threshold(&profiles, 11);
        let text = write_profiles(&profiles, &labeling).unwrap();
        assert_eq!(
            text,
            "#disfluency v1\tthreshold=11\na\t3\t4\t5\t12\tStumbling\nb\t0\t1\t0\t1\tFluent\n"
        );
        let (p2, l2) = read_profiles(&text).unwrap();
        assert_eq!(p2, profiles);
        assert_eq!(l2, labeling);
    }

    #[test]
    fn phi_ordering_is_exact() {
        let hi = Phi::from_table(10, 0, 0, 10);
        let mid = Phi::from_table(8, 2, 2, 8);
        let neg = Phi::from_table(0, 10, 10, 0);
        let zero = Phi::from_table(0, 0, 5, 5);
        assert!(hi > mid && mid > zero && zero > neg);
        assert_eq!(zero.value(), 0.0);
        assert!((mid.value() - 0.6).abs() < 1e-12);
    }
}
