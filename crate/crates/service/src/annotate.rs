//! Annotation sessions. State is the pairing plan plus the judgment log:
//! on startup every judge found in the log gets its session back with the
//! votes already cast marked done.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::Serialize;
use streetsafe_core::judges::{Clock, SystemClock};
use streetsafe_core::model::read_judgments;
use streetsafe_core::rng;
use streetsafe_core::tournament::{build_plan, PairingPlan};
use streetsafe_core::{AnchorSet, Choice, Error, ImageKey, Judgment, JudgmentLog, Result, SafetyCriteria};

/// Question shown above every pair.
pub const QUESTION: &str = "Which place looks safer?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Assignment {
    /// Every judge sees the shared plan, in a per-judge shuffled order.
    #[default]
    SharedShuffled,
    /// Every judge gets a plan of their own, drawn from the same anchors.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServedPair {
    pub pair_id: String,
    pub left: ImageKey,
    pub right: ImageKey,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VoteError {
    UnknownJudge,
    UnknownPair,
    InvalidChoice(String),
    /// Already voted, or never served to this judge.
    Conflict(String),
    Storage(String),
}

impl std::fmt::Display for VoteError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VoteError::UnknownJudge => f.write_str("unknown judge_id"),
            VoteError::UnknownPair => f.write_str("unknown pair_id"),
            VoteError::InvalidChoice(c) => write!(f, "invalid choice {c:?}; expected \"A\", \"B\" or \"C\""),
            VoteError::Conflict(m) | VoteError::Storage(m) => f.write_str(m),
        }
    }
}

struct Session {
    pairs: Vec<(ImageKey, ImageKey)>,
    voted: Vec<bool>,
    in_flight: Vec<bool>,
    done: usize,
    /// Every pair below this index is voted or in flight.
    fresh: usize,
}

impl Session {
    fn progress(&self) -> Progress {
        Progress { done: self.done, total: self.pairs.len() }
    }

    /// Lowest unvoted pair not currently out with a client; if every
    /// remaining pair is out, the lowest of those is handed out again.
    fn next(&mut self) -> Option<usize> {
        let n = self.pairs.len();
        while self.fresh < n && (self.voted[self.fresh] || self.in_flight[self.fresh]) {
            self.fresh += 1;
        }
        let pick = if self.fresh < n { self.fresh } else { (0..n).find(|&i| !self.voted[i])? };
        self.in_flight[pick] = true;
        Some(pick)
    }
}

struct Inner {
    log: JudgmentLog,
    clock: Box<dyn Clock + Send>,
    sessions: HashMap<String, Session>,
}

pub struct Annotator {
    plan: PairingPlan,
    anchor: AnchorSet,
    assignment: Assignment,
    criteria: SafetyCriteria,
    images: BTreeMap<ImageKey, String>,
    inner: Mutex<Inner>,
}

impl Annotator {
    /// Opens the log at `log_path` and replays it.
    pub fn open(
        plan: PairingPlan,
        assignment: Assignment,
        criteria: SafetyCriteria,
        images: BTreeMap<ImageKey, String>,
        log_path: &Path,
    ) -> Result<Self> {
        Self::with_clock(plan, assignment, criteria, images, log_path, Box::new(SystemClock))
    }

    pub fn with_clock(
        plan: PairingPlan,
        assignment: Assignment,
        criteria: SafetyCriteria,
        images: BTreeMap<ImageKey, String>,
        log_path: &Path,
        clock: Box<dyn Clock + Send>,
    ) -> Result<Self> {
        if plan.is_empty() {
            return Err(Error::Empty("pairing plan"));
        }
        criteria.validate()?;
        let anchor = AnchorSet::new(plan.keys())?;
        let log = JudgmentLog::open(log_path)?;
        let mut annotator = Annotator {
            plan,
            anchor,
            assignment,
            criteria,
            images,
            inner: Mutex::new(Inner { log, clock, sessions: HashMap::new() }),
        };
        annotator.replay(&read_judgments(log_path)?)?;
        Ok(annotator)
    }

    fn replay(&mut self, judgments: &[Judgment]) -> Result<()> {
        let mut sessions = HashMap::new();
        for j in judgments {
            if !sessions.contains_key(&j.judge_id) {
                sessions.insert(j.judge_id.clone(), self.assign(&j.judge_id)?);
            }
            let s = sessions.get_mut(&j.judge_id).expect("inserted above");
            let slot = (0..s.pairs.len())
                .find(|&i| !s.voted[i] && s.pairs[i].0 == j.left && s.pairs[i].1 == j.right)
                .ok_or_else(|| {
                    Error::InvalidJudgment(format!(
                        "logged vote by {} on ({}, {}) is not an open pair of that judge's assignment",
                        j.judge_id, j.left, j.right
                    ))
                })?;
            s.voted[slot] = true;
            s.done += 1;
        }
        if !sessions.is_empty() {
            log::info!("resumed {} annotation sessions from the log", sessions.len());
        }
        self.inner.get_mut().expect("fresh mutex").sessions = sessions;
        Ok(())
    }

    fn assign(&self, judge_id: &str) -> Result<Session> {
        let mut pairs: Vec<(ImageKey, ImageKey)> = match self.assignment {
            Assignment::SharedShuffled => self.plan.pairs.iter().map(|p| (p.left.clone(), p.right.clone())).collect(),
            Assignment::Independent => {
                let seed = rng::derive_seed(self.plan.seed, &["judge-plan", judge_id]);
                build_plan(&self.anchor, self.plan.opponents_per_item, seed)?
                    .pairs
                    .into_iter()
                    .map(|p| (p.left, p.right))
                    .collect()
            }
        };
        pairs.shuffle(&mut rng::seeded(rng::derive_seed(self.plan.seed, &["session-order", judge_id])));
        let n = pairs.len();
        Ok(Session { pairs, voted: vec![false; n], in_flight: vec![false; n], done: 0, fresh: 0 })
    }

    pub fn criteria(&self) -> &SafetyCriteria {
        &self.criteria
    }

    pub fn image_ref(&self, key: &ImageKey) -> Option<&str> {
        self.images.get(key).map(String::as_str)
    }

    pub fn plan_len(&self) -> usize {
        self.plan.len()
    }

    pub fn start_session(&self) -> Result<String> {
        let judge_id = format!("j-{}", uuid::Uuid::new_v4().simple());
        let session = self.assign(&judge_id)?;
        self.inner.lock().expect("annotator lock").sessions.insert(judge_id.clone(), session);
        Ok(judge_id)
    }

    pub fn judges(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.lock().expect("annotator lock").sessions.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// `Ok(None)` once the judge has voted on every assigned pair.
    pub fn next_pair(&self, judge_id: &str) -> std::result::Result<Option<ServedPair>, VoteError> {
        let mut inner = self.inner.lock().expect("annotator lock");
        let s = inner.sessions.get_mut(judge_id).ok_or(VoteError::UnknownJudge)?;
        let Some(i) = s.next() else { return Ok(None) };
        let (left, right) = s.pairs[i].clone();
        Ok(Some(ServedPair { pair_id: i.to_string(), left, right, progress: s.progress() }))
    }

    pub fn progress(&self, judge_id: &str) -> std::result::Result<Progress, VoteError> {
        let inner = self.inner.lock().expect("annotator lock");
        inner.sessions.get(judge_id).map(Session::progress).ok_or(VoteError::UnknownJudge)
    }

    pub fn vote(&self, judge_id: &str, pair_id: &str, choice: &str) -> std::result::Result<Progress, VoteError> {
        let choice = Choice::from_label(choice).ok_or_else(|| VoteError::InvalidChoice(choice.to_string()))?;
        let mut guard = self.inner.lock().expect("annotator lock");
        let inner = &mut *guard;
        let s = inner.sessions.get_mut(judge_id).ok_or(VoteError::UnknownJudge)?;
        let i: usize = pair_id.parse().ok().filter(|&i| i < s.pairs.len()).ok_or(VoteError::UnknownPair)?;
        if s.voted[i] {
            return Err(VoteError::Conflict(format!("pair {pair_id} already has a vote from {judge_id}")));
        }
        if !s.in_flight[i] {
            return Err(VoteError::Conflict(format!("pair {pair_id} was not served to {judge_id}; fetch the next pair")));
        }
        let (left, right) = s.pairs[i].clone();
        let j = Judgment::new(judge_id, left, right, choice, inner.clock.now());
        inner.log.append(std::slice::from_ref(&j)).map_err(|e| VoteError::Storage(e.to_string()))?;
        s.voted[i] = true;
        s.in_flight[i] = false;
        s.done += 1;
        Ok(s.progress())
    }
}
