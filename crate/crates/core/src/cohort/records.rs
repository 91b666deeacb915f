use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLINICAL_HEADER: [&str; 5] = ["patient_id", "visit_date", "diagnosis", "modality", "image_path"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Diagnosis {
    NL,
    MCI,
    AD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    MRI,
    PET,
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mri" => Ok(Self::MRI),
            "pet" => Ok(Self::PET),
            other => Err(Error::Config(format!("unknown modality {other:?} (expected mri|pet)"))),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MRI => "mri",
            Self::PET => "pet",
        })
    }
}

/// Study class of a paired sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NL,
    AD,
    #[serde(rename = "sMCI")]
    SMci,
    #[serde(rename = "pMCI")]
    PMci,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::NL, Label::SMci, Label::PMci, Label::AD];
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NL => "NL",
            Self::AD => "AD",
            Self::SMci => "sMCI",
            Self::PMci => "pMCI",
        })
    }
}

/// Binary classification task; the second class is the positive one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NlAd,
    NlPmci,
    SmciPmci,
}

impl Task {
    pub fn negative(self) -> Label {
        match self {
            Task::NlAd | Task::NlPmci => Label::NL,
            Task::SmciPmci => Label::SMci,
        }
    }

    pub fn positive(self) -> Label {
        match self {
            Task::NlAd => Label::AD,
            Task::NlPmci | Task::SmciPmci => Label::PMci,
        }
    }

    /// `Some(1)` for the disease class, `Some(0)` for the control class,
    /// `None` for labels outside the task.
    pub fn class_of(self, label: Label) -> Option<usize> {
        if label == self.positive() {
            Some(1)
        } else if label == self.negative() {
            Some(0)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::NlAd => "nl_ad",
            Task::NlPmci => "nl_pmci",
            Task::SmciPmci => "smci_pmci",
        }
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "nl_ad" => Ok(Task::NlAd),
            "nl_pmci" => Ok(Task::NlPmci),
            "smci_pmci" => Ok(Task::SmciPmci),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (expected nl-ad|nl-pmci|smci-pmci)"
            ))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One clinical visit row. An empty `image_path` marks a clinical-only
/// follow-up visit that carries a diagnosis but no image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub patient_id: String,
    pub visit_date: NaiveDate,
    pub diagnosis: Diagnosis,
    pub modality: Modality,
    pub image_path: String,
}

impl SubjectRecord {
    pub fn has_image(&self) -> bool {
        !self.image_path.trim().is_empty()
    }
}

pub fn read_clinical_csv(path: impl AsRef<Path>) -> Result<Vec<SubjectRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != CLINICAL_HEADER {
        return Err(Error::Format(format!(
            "clinical CSV header must be {}, found {}",
            CLINICAL_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Format(format!("{}: row {}: {e}", path.display(), i + 2))))
        .collect()
}

pub fn write_clinical_csv(path: impl AsRef<Path>, records: &[SubjectRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(format!("{}: {e}", path.display()))
    }
}
