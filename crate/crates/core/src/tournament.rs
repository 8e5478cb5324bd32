//! Pairwise tournament: opponent scheduling, win-minus-loss tallies and the
//! min-max mapping onto the 0..10 scale.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnchorSet, Choice, ImageKey, Judgment};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedPair {
    /// The item whose opponent draw produced this pair.
    pub subject: ImageKey,
    pub left: ImageKey,
    pub right: ImageKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingPlan {
    pub opponents_per_item: usize,
    pub seed: u64,
    pub pairs: Vec<PlannedPair>,
}

impl PairingPlan {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Distinct keys referenced by the plan, sorted.
    pub fn keys(&self) -> Vec<ImageKey> {
        let set: BTreeSet<&ImageKey> = self
            .pairs
            .iter()
            .flat_map(|p| [&p.left, &p.right])
            .collect();
        set.into_iter().cloned().collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: PairingPlan = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if let Some(p) = plan.pairs.iter().find(|p| p.left == p.right) {
            return Err(Error::InvalidJudgment(format!("plan pairs {} with itself", p.left)));
        }
        Ok(plan)
    }
}

/// For every anchor, draws `opponents` distinct other anchors uniformly and
/// flips a seeded coin for which side each image is shown on.
pub fn build_plan(anchor: &AnchorSet, opponents: usize, seed: u64) -> Result<PairingPlan> {
    let n_items = anchor.len();
    if opponents >= n_items {
        return Err(Error::InvalidArgument(format!(
            "{opponents} opponents per item needs more than {n_items} anchors"
        )));
    }
    let members = anchor.members();
    let mut rng = rng::seeded(rng::derive_seed(seed, &["plan"]));
    let mut pairs = Vec::with_capacity(n_items * opponents);
    for (i, subject) in members.iter().enumerate() {
        let draws = rand::seq::index::sample(&mut rng, n_items - 1, opponents);
        for d in draws.iter() {
            // skip over the subject's own slot
            let opponent = &members[if d >= i { d + 1 } else { d }];
            let (left, right) = if rng.random_bool(0.5) {
                (subject.clone(), opponent.clone())
            } else {
                (opponent.clone(), subject.clone())
            };
            pairs.push(PlannedPair {
                subject: subject.clone(),
                left,
                right,
            });
        }
    }
    Ok(PairingPlan {
        opponents_per_item: opponents,
        seed,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub raw: i64,
    pub comparisons: u32,
}

pub type RawTally = BTreeMap<ImageKey, Tally>;

/// Wins minus losses per key. Both sides of every verdict are credited;
/// an uncomparable verdict only bumps the comparison counters.
pub fn tally<'a>(judgments: impl IntoIterator<Item = &'a Judgment>) -> RawTally {
    let mut out = RawTally::new();
    for j in judgments {
        let (left_delta, right_delta) = match j.choice {
            Choice::Left => (1, -1),
            Choice::Right => (-1, 1),
            Choice::Uncomparable => (0, 0),
        };
        for (key, delta) in [(&j.left, left_delta), (&j.right, right_delta)] {
            let t = out.entry(key.clone()).or_default();
            t.raw += delta;
            t.comparisons += 1;
        }
    }
    out
}

/// Splits the log by judge and tallies each. When `keys` is given, every
/// table is widened to that key set with zero entries.
pub fn tally_by_judge(judgments: &[Judgment], keys: Option<&[ImageKey]>) -> BTreeMap<String, RawTally> {
    let mut grouped: BTreeMap<&str, Vec<&Judgment>> = BTreeMap::new();
    for j in judgments {
        grouped.entry(j.judge_id.as_str()).or_default().push(j);
    }
    grouped
        .into_iter()
        .map(|(judge, js)| {
            let mut t = tally(js);
            if let Some(keys) = keys {
                for k in keys {
                    t.entry(k.clone()).or_default();
                }
            }
            (judge.to_string(), t)
        })
        .collect()
}

/// `10 * (s - min) / (max - min)`; a constant input maps to 5 everywhere.
pub fn normalize<K: Ord + Clone>(raw: &BTreeMap<K, f64>) -> Result<BTreeMap<K, f64>> {
    let (min, max) = raw
        .values()
        .fold(None, |acc: Option<(f64, f64)>, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
        .ok_or(Error::Empty("no scores to normalize"))?;
    let span = max - min;
    Ok(raw
        .iter()
        .map(|(k, &v)| {
            let s = if span > 0.0 { 10.0 * (v - min) / span } else { 5.0 };
            (k.clone(), s)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreEntry {
    pub raw: f64,
    pub normalized: f64,
    pub comparisons: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub entries: BTreeMap<ImageKey, ScoreEntry>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn normalized(&self) -> BTreeMap<ImageKey, f64> {
        self.entries.iter().map(|(k, e)| (k.clone(), e.normalized)).collect()
    }

    pub fn get(&self, key: &ImageKey) -> Option<&ScoreEntry> {
        self.entries.get(key)
    }

    /// Highest normalized score first, ties by key.
    pub fn ranked(&self) -> Vec<(&ImageKey, &ScoreEntry)> {
        let mut v: Vec<_> = self.entries.iter().collect();
        v.sort_by(|a, b| b.1.normalized.total_cmp(&a.1.normalized).then_with(|| a.0.cmp(b.0)));
        v
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["key", "raw", "normalized", "comparisons"]).expect("in-memory write");
        for (k, e) in &self.entries {
            w.write_record([
                k.to_string(),
                e.raw.to_string(),
                e.normalized.to_string(),
                e.comparisons.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let header = rdr.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?;
        if header != vec!["key", "raw", "normalized", "comparisons"] {
            return Err(Error::parse(path, 1, "expected header key,raw,normalized,comparisons"));
        }
        let mut entries = BTreeMap::new();
        for (idx, rec) in rdr.records().enumerate() {
            let line = idx + 2;
            let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
            let bad = |m: &str| Error::parse(path, line, m.to_string());
            let key: ImageKey = rec[0].parse().map_err(|e: Error| bad(&e.to_string()))?;
            let entry = ScoreEntry {
                raw: rec[1].parse().map_err(|_| bad("raw is not a number"))?,
                normalized: rec[2].parse().map_err(|_| bad("normalized is not a number"))?,
                comparisons: rec[3].parse().map_err(|_| bad("comparisons is not a count"))?,
            };
            if !(0.0..=10.0).contains(&entry.normalized) {
                return Err(bad("normalized score outside [0, 10]"));
            }
            if entries.insert(key.clone(), entry).is_some() {
                return Err(bad(&format!("duplicate key {key}")));
            }
        }
        Ok(ScoreTable { entries })
    }
}

/// Per-key mean of raw tallies across judges, normalized once.
pub fn aggregate_judges(tables: &[RawTally]) -> Result<ScoreTable> {
    let first = tables.first().ok_or(Error::Empty("no judge tables"))?;
    for (i, t) in tables.iter().enumerate().skip(1) {
        if t.len() != first.len() || !t.keys().eq(first.keys()) {
            return Err(Error::KeyMismatch(format!("judge table {i} covers a different key set than table 0")));
        }
    }
    let n = tables.len() as f64;
    let means: BTreeMap<ImageKey, f64> = first
        .keys()
        .map(|k| {
            let sum: i64 = tables.iter().map(|t| t[k].raw).sum();
            (k.clone(), sum as f64 / n)
        })
        .collect();
    let normalized = normalize(&means)?;
    let entries = means
        .into_iter()
        .map(|(k, raw)| {
            let comparisons = tables.iter().map(|t| t[&k].comparisons).sum();
            let normalized = normalized[&k];
            (k, ScoreEntry { raw, normalized, comparisons })
        })
        .collect();
    Ok(ScoreTable { entries })
}
