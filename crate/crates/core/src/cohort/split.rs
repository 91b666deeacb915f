use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pairing::PairedSample;
use crate::error::{Error, Result};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other:?} (expected train|val|test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Largest-remainder apportionment of `n` items, so every count is within one
/// of its exact share and the counts sum to `n`.
pub fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub(crate) fn check_fractions(fractions: &[f64], what: &str) -> Result<()> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "{what} fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    Ok(())
}

/// Shuffles the distinct patients with a seeded generator and deals them into
/// train, val and test.
pub fn split_by_patient(samples: &[PairedSample], fractions: [f64; 3], seed: u64) -> Result<BTreeMap<String, Split>> {
    check_fractions(&fractions, "split")?;
    let mut patients: Vec<&str> = samples
        .iter()
        .map(|s| s.patient_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if patients.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} distinct patients; at least 3 are needed for a train/val/test split",
            patients.len()
        )));
    }
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = apportion(patients.len(), &fractions);
    let mut map = BTreeMap::new();
    let mut it = patients.into_iter();
    for (split, n) in Split::ALL.into_iter().zip(counts) {
        for p in it.by_ref().take(n) {
            map.insert(p.to_string(), split);
        }
    }
    Ok(map)
}
