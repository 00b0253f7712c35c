use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the six chest-device biosignals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Ecg,
    Eda,
    Emg,
    Resp,
    Temp,
    Acc,
}

impl Modality {
    /// Fusion order of the per-modality representations.
    pub const ALL: [Modality; 6] = [
        Modality::Ecg,
        Modality::Eda,
        Modality::Emg,
        Modality::Resp,
        Modality::Temp,
        Modality::Acc,
    ];

    pub fn channels(self) -> usize {
        match self {
            Modality::Acc => 3,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Ecg => "ECG",
            Modality::Eda => "EDA",
            Modality::Emg => "EMG",
            Modality::Resp => "RESP",
            Modality::Temp => "TEMP",
            Modality::Acc => "ACC",
        }
    }

    /// Payload file name inside an interchange directory.
    pub fn file_name(self) -> String {
        format!("{}.f32", self.name().to_ascii_lowercase())
    }

    pub fn index(self) -> usize {
        Modality::ALL.iter().position(|m| *m == self).unwrap()
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation(format!("unknown modality '{s}'")))
    }
}

/// The six state-anxiety items answered on a four-point scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionId {
    AtEase,
    Nervous,
    Jittery,
    Relaxed,
    Worried,
    Pleasant,
}

impl QuestionId {
    pub const ALL: [QuestionId; 6] = [
        QuestionId::AtEase,
        QuestionId::Nervous,
        QuestionId::Jittery,
        QuestionId::Relaxed,
        QuestionId::Worried,
        QuestionId::Pleasant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionId::AtEase => "at_ease",
            QuestionId::Nervous => "nervous",
            QuestionId::Jittery => "jittery",
            QuestionId::Relaxed => "relaxed",
            QuestionId::Worried => "worried",
            QuestionId::Pleasant => "pleasant",
        }
    }

    /// Items phrased as positive affect; their agreement falls as stress rises.
    pub fn is_positive(self) -> bool {
        matches!(
            self,
            QuestionId::AtEase | QuestionId::Relaxed | QuestionId::Pleasant
        )
    }

    pub fn index(self) -> usize {
        QuestionId::ALL.iter().position(|q| *q == self).unwrap()
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuestionId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        QuestionId::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown question '{s}'")))
    }
}
