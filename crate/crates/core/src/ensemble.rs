//! Hard-decision majority voting across epochs, prompt positions,
//! paradigms and PLMs.
//!
//! Members of a combination that share a PLM are paired on the same seed.
//! Under [`SeedPairing::FullCartesian`] the PLM groups are then crossed, so
//! two single-PLM systems with 15 seeds each give 15 x 15 = 225 combined
//! decision vectors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::labels::AdLabel;
use crate::trainer::SystemRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    PreferAd,
    PreferNonAd,
    /// Vote over all constituent epoch decisions jointly; PreferAd if still tied.
    #[default]
    PoolSubDecisions,
}

impl TiePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            TiePolicy::PreferAd => "prefer_ad",
            TiePolicy::PreferNonAd => "prefer_non_ad",
            TiePolicy::PoolSubDecisions => "pool_sub_decisions",
        }
    }
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "prefer_ad" => Ok(TiePolicy::PreferAd),
            "prefer_non_ad" => Ok(TiePolicy::PreferNonAd),
            "pool_sub_decisions" | "pool" => Ok(TiePolicy::PoolSubDecisions),
            _ => Err(Error::invalid(format!("unknown tie policy {s:?}"))),
        }
    }
}

/// Strict-majority label; ties resolve by `policy`. Pooling happens before
/// this call, so a tie under `PoolSubDecisions` falls back to AD.
pub fn majority_vote(decisions: &[AdLabel], policy: TiePolicy) -> Result<AdLabel> {
    if decisions.is_empty() {
        return Err(Error::invalid("cannot vote over an empty decision list"));
    }
    let ad = decisions.iter().filter(|d| **d == AdLabel::Ad).count();
    let non = decisions.len() - ad;
    Ok(match ad.cmp(&non) {
        std::cmp::Ordering::Greater => AdLabel::Ad,
        std::cmp::Ordering::Less => AdLabel::NonAd,
        std::cmp::Ordering::Equal => match policy {
            TiePolicy::PreferNonAd => AdLabel::NonAd,
            TiePolicy::PreferAd | TiePolicy::PoolSubDecisions => AdLabel::Ad,
        },
    })
}

/// One run's decisions voted over its captured epochs.
pub fn vote_epochs(run: &SystemRun, policy: TiePolicy) -> Result<BTreeMap<String, AdLabel>> {
    run.subjects()
        .into_iter()
        .map(|s| Ok((s.to_string(), majority_vote(&run.votes_for(s), policy)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPairing {
    SameSeed,
    FullCartesian,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinationPreset {
    pub name: String,
    pub members: Vec<String>,
    pub seed_pairing: SeedPairing,
}

pub const PRESET_NAMES: &[&str] = &[
    "front+back",
    "mlm+front+back",
    "bert+roberta:mlm",
    "bert+roberta:prompt",
    "bert+roberta:all",
];

/// Resolves a registry preset. Within-PLM presets (`front+back`,
/// `mlm+front+back`) combine systems of `plm`; cross-PLM presets always
/// pair `bert` with `roberta`.
pub fn preset(name: &str, plm: &str) -> Result<CombinationPreset> {
    let systems = |p: &str, kinds: &[&str]| -> Vec<String> {
        kinds.iter().map(|k| format!("{p}:{k}")).collect()
    };
    let (members, seed_pairing, label) = match name {
        "front+back" => (
            systems(plm, &["prompt:front", "prompt:back"]),
            SeedPairing::SameSeed,
            format!("{plm}:{name}"),
        ),
        "mlm+front+back" => (
            systems(plm, &["mlm", "prompt:front", "prompt:back"]),
            SeedPairing::SameSeed,
            format!("{plm}:{name}"),
        ),
        "bert+roberta:mlm" => (
            [systems("bert", &["mlm"]), systems("roberta", &["mlm"])].concat(),
            SeedPairing::FullCartesian,
            name.to_string(),
        ),
        "bert+roberta:prompt" => (
            [
                systems("bert", &["prompt:front", "prompt:back"]),
                systems("roberta", &["prompt:front", "prompt:back"]),
            ]
            .concat(),
            SeedPairing::FullCartesian,
            name.to_string(),
        ),
        "bert+roberta:all" => (
            [
                systems("bert", &["mlm", "prompt:front", "prompt:back"]),
                systems("roberta", &["mlm", "prompt:front", "prompt:back"]),
            ]
            .concat(),
            SeedPairing::FullCartesian,
            name.to_string(),
        ),
        _ => {
            return Err(Error::invalid(format!(
                "unknown preset {name:?}; known: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(CombinationPreset {
        name: label,
        members,
        seed_pairing,
    })
}

/// Position of a preset in the registry, used for report row order.
pub fn registry_rank(preset_name: &str) -> Option<usize> {
    let base = preset_name
        .rsplit_once(':')
        .filter(|(_, tail)| matches!(*tail, "front+back" | "mlm+front+back"))
        .map_or(preset_name, |(_, tail)| tail);
    PRESET_NAMES.iter().position(|p| *p == base)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub system_id: String,
    /// Seed per member, aligned with the preset's member list.
    pub seeds: Vec<u64>,
    pub tie_policy: TiePolicy,
}

impl Provenance {
    /// Distinct seeds in member order joined by `+`, e.g. `3+7`.
    pub fn seed_tuple(&self) -> String {
        let mut seen = Vec::new();
        for s in &self.seeds {
            if !seen.contains(s) {
                seen.push(*s);
            }
        }
        seen.iter().map(u64::to_string).collect::<Vec<_>>().join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionVector {
    pub decisions: BTreeMap<String, AdLabel>,
    pub provenance: Provenance,
}

fn member_plm(member: &str) -> &str {
    member.split(':').next().unwrap_or(member)
}

/// Seed assignment per member for each combined vector.
fn seed_tuples(
    preset: &CombinationPreset,
    seeds_of: &[BTreeSet<u64>],
) -> Vec<Vec<u64>> {
    let members = &preset.members;
    // group index per member: one group overall for SameSeed, one per PLM otherwise
    let mut group_keys: Vec<&str> = Vec::new();
    let group_of: Vec<usize> = members
        .iter()
        .map(|m| {
            let key = match preset.seed_pairing {
                SeedPairing::SameSeed => "",
                SeedPairing::FullCartesian => member_plm(m),
            };
            match group_keys.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    group_keys.push(key);
                    group_keys.len() - 1
                }
            }
        })
        .collect();
    let group_seeds: Vec<Vec<u64>> = (0..group_keys.len())
        .map(|g| {
            let mut common: Option<BTreeSet<u64>> = None;
            for (m, _) in members.iter().enumerate().filter(|(m, _)| group_of[*m] == g) {
                common = Some(match common {
                    None => seeds_of[m].clone(),
                    Some(c) => c.intersection(&seeds_of[m]).copied().collect(),
                });
            }
            common.unwrap_or_default().into_iter().collect()
        })
        .collect();

    let mut tuples: Vec<Vec<u64>> = vec![Vec::new()];
    for seeds in &group_seeds {
        tuples = tuples
            .into_iter()
            .flat_map(|prefix| {
                seeds.iter().map(move |s| {
                    let mut t = prefix.clone();
                    t.push(*s);
                    t
                })
            })
            .collect();
    }
    tuples
        .into_iter()
        .map(|per_group| group_of.iter().map(|&g| per_group[g]).collect())
        .collect()
}

pub fn combine_runs(
    runs: &[SystemRun],
    preset: &CombinationPreset,
    tie_policy: TiePolicy,
) -> Result<Vec<DecisionVector>> {
    combine_runs_with(Exec::Sequential, runs, preset, tie_policy)
}

/// Fuses member runs for every seed tuple the preset's pairing dictates.
pub fn combine_runs_with(
    exec: Exec,
    runs: &[SystemRun],
    preset: &CombinationPreset,
    tie_policy: TiePolicy,
) -> Result<Vec<DecisionVector>> {
    if preset.members.is_empty() {
        return Err(Error::invalid(format!("preset {} has no members", preset.name)));
    }
    let mut by_member: Vec<BTreeMap<u64, &SystemRun>> = Vec::new();
    for member in &preset.members {
        let mut map = BTreeMap::new();
        for r in runs.iter().filter(|r| &r.meta.system_id == member) {
            if map.insert(r.meta.seed, r).is_some() {
                return Err(Error::invalid(format!(
                    "two runs of {member} with seed {}",
                    r.meta.seed
                )));
            }
        }
        if map.is_empty() {
            return Err(Error::invalid(format!("no runs for preset member {member}")));
        }
        by_member.push(map);
    }

    let subjects: BTreeSet<&str> = by_member[0].values().next().expect("non-empty").subjects().into_iter().collect();
    for run in by_member.iter().flat_map(|m| m.values()) {
        if run.epoch_decisions.is_empty() {
            return Err(Error::invalid(format!("{} has no captured epochs", run.meta.system_id)));
        }
        for e in &run.epoch_decisions {
            if e.decisions.keys().map(String::as_str).collect::<BTreeSet<_>>() != subjects {
                return Err(Error::invalid(format!(
                    "{} seed {} covers a different subject set",
                    run.meta.system_id, run.meta.seed
                )));
            }
        }
    }

    let seeds_of: Vec<BTreeSet<u64>> = by_member.iter().map(|m| m.keys().copied().collect()).collect();
    let tuples = seed_tuples(preset, &seeds_of);
    if tuples.is_empty() {
        return Err(Error::invalid(format!(
            "members of {} share no seeds to pair",
            preset.name
        )));
    }

    exec.try_map(&tuples, |seeds| {
        let members: Vec<&SystemRun> = seeds
            .iter()
            .zip(&by_member)
            .map(|(s, m)| m[s])
            .collect();
        let mut decisions = BTreeMap::new();
        for &subject in &subjects {
            let label = match tie_policy {
                TiePolicy::PoolSubDecisions => {
                    let pooled: Vec<AdLabel> =
                        members.iter().flat_map(|r| r.votes_for(subject)).collect();
                    majority_vote(&pooled, tie_policy)?
                }
                _ => {
                    let per_system = members
                        .iter()
                        .map(|r| majority_vote(&r.votes_for(subject), tie_policy))
                        .collect::<Result<Vec<_>>>()?;
                    majority_vote(&per_system, tie_policy)?
                }
            };
            decisions.insert(subject.to_string(), label);
        }
        Ok(DecisionVector {
            decisions,
            provenance: Provenance {
                system_id: preset.name.clone(),
                seeds: seeds.clone(),
                tie_policy,
            },
        })
    })
}

/// Fraction of subjects whose decision matches the gold label.
pub fn accuracy(
    decisions: &BTreeMap<String, AdLabel>,
    gold: &BTreeMap<String, AdLabel>,
) -> Result<f64> {
    if decisions.is_empty() || decisions.len() != gold.len() {
        return Err(Error::invalid(format!(
            "decisions cover {} subjects, gold labels {}",
            decisions.len(),
            gold.len()
        )));
    }
    let mut correct = 0usize;
    for (subject, label) in decisions {
        let g = gold
            .get(subject)
            .ok_or_else(|| Error::invalid(format!("no gold label for {subject:?}")))?;
        if g == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / decisions.len() as f64)
}

/// Combined vectors in the decision-file format, one row per subject with
/// epoch column `voted` and the seed tuple in the seed column.
pub fn write_combined(vectors: &[DecisionVector], members: &[&SystemRun]) -> String {
    let policy = vectors
        .first()
        .map_or("-", |v| v.provenance.tie_policy.as_str());
    let mut out = format!("#decisions v1\ttie_policy={policy}\n");
    let join = |items: Vec<String>| {
        let mut uniq: Vec<String> = Vec::new();
        for i in items {
            if !uniq.contains(&i) {
                uniq.push(i);
            }
        }
        if uniq.is_empty() {
            "-".to_string()
        } else {
            uniq.join("+")
        }
    };
    let plms = join(members.iter().map(|r| r.meta.plm.clone()).collect());
    let paradigms = join(members.iter().map(|r| r.meta.paradigm.as_str().to_string()).collect());
    let positions = join(
        members
            .iter()
            .filter_map(|r| r.meta.position.map(|p| p.as_str().to_string()))
            .collect(),
    );
    let multi_task = members.iter().any(|r| r.meta.multi_task);
    for v in vectors {
        for (subject, label) in &v.decisions {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\tvoted\t{}\t{}",
                v.provenance.system_id,
                plms,
                paradigms,
                positions,
                multi_task,
                v.provenance.seed_tuple(),
                subject,
                label
            );
        }
    }
    out
}
