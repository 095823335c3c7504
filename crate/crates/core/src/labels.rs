use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Diagnosis class of a subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AdLabel {
    #[serde(rename = "AD")]
    Ad,
    #[serde(rename = "NonAD")]
    NonAd,
}

/// Fluency class assigned by thresholding a subject's disfluency total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FluencyLabel {
    Stumbling,
    Fluent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Where a transcript came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Manual,
    Asr,
}

/// A cloze task answered at one mask slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Diagnosis,
    Fluency,
}

impl AdLabel {
    /// Index of this class in a task's label-word pair.
    pub fn class_index(self) -> usize {
        match self {
            AdLabel::Ad => 0,
            AdLabel::NonAd => 1,
        }
    }
}

impl FluencyLabel {
    pub fn class_index(self) -> usize {
        match self {
            FluencyLabel::Stumbling => 0,
            FluencyLabel::Fluent => 1,
        }
    }
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, { $($variant:path => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($variant => $text),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                let t = s.trim();
                $(
                    if t.eq_ignore_ascii_case($text) $(|| t.eq_ignore_ascii_case($alias))* {
                        return Ok($variant);
                    }
                )+
                Err(Error::invalid(format!("unknown {} {:?}", $what, s)))
            }
        }
    };
}

text_enum!(AdLabel, "AD label", { AdLabel::Ad => "AD" | "1" | "dementia" | "cd", AdLabel::NonAd => "NonAD" | "0" | "control" | "cc" | "non-ad" });
text_enum!(FluencyLabel, "fluency label", { FluencyLabel::Stumbling => "Stumbling", FluencyLabel::Fluent => "Fluent" });
text_enum!(Split, "split", { Split::Train => "train", Split::Test => "test" });
text_enum!(Source, "transcript source", { Source::Manual => "manual" | "chat", Source::Asr => "asr" });
text_enum!(Task, "task", { Task::Diagnosis => "diagnosis", Task::Fluency => "fluency" });

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip_through_text() {
        for l in [AdLabel::Ad, AdLabel::NonAd] {
            assert_eq!(l.as_str().parse::<AdLabel>().unwrap(), l);
        }
        for s in [Split::Train, Split::Test] {
            assert_eq!(s.to_string().parse::<Split>().unwrap(), s);
        }
        assert_eq!("cc".parse::<AdLabel>().unwrap(), AdLabel::NonAd);
        assert_eq!("1".parse::<AdLabel>().unwrap(), AdLabel::Ad);
        assert!("maybe".parse::<AdLabel>().is_err());
    }
}
