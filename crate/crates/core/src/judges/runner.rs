//! Drives a judge over a pairing plan, appending to the judgment log.
//!
//! Resumable: pairs this judge already answered (as a multiset of
//! `(left, right)`, since a plan may draw the same ordered pair twice) are
//! skipped. Workers answer pairs concurrently; the calling thread alone
//! stamps timestamps and writes, in plan order, so a seeded run with a
//! [`SequenceClock`](super::SequenceClock) produces a byte-identical log.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Clock, Judge, Verdict};
use crate::error::{Error, Result};
use crate::model::{read_judgments, Choice, ImageKey, Judgment, JudgmentLog};
use crate::tournament::{PairingPlan, PlannedPair};

pub struct RunOptions<'a> {
    pub concurrency_limit: usize,
    /// Stop after this many new verdicts (simulates interruption; `None` runs to completion).
    pub limit: Option<usize>,
    /// Append this many verdicts per write. 1 means every verdict is durable immediately.
    pub flush_every: usize,
    pub clock: &'a mut dyn Clock,
    pub rationale_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub total: usize,
    pub already_done: usize,
    pub appended: usize,
    pub parse_failures: usize,
}

/// One line of the rationale sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub pair: (ImageKey, ImageKey),
    pub choice: Choice,
    pub rationale: String,
    pub model: Option<String>,
    #[serde(with = "crate::model::ts_format")]
    pub ts: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parse_failed: bool,
}

pub fn read_rationales(path: impl AsRef<Path>) -> Result<Vec<RationaleRecord>> {
    let path = path.as_ref();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

/// Pairs of `plan` this judge has not answered yet, in plan order.
pub fn pending_pairs<'p>(plan: &'p PairingPlan, judge_id: &str, existing: &[Judgment]) -> Vec<&'p PlannedPair> {
    let mut done: HashMap<(&ImageKey, &ImageKey), usize> = HashMap::new();
    for j in existing.iter().filter(|j| j.judge_id == judge_id) {
        *done.entry((&j.left, &j.right)).or_default() += 1;
    }
    plan.pairs
        .iter()
        .filter(|p| match done.get_mut(&(&p.left, &p.right)) {
            Some(n) if *n > 0 => {
                *n -= 1;
                false
            }
            _ => true,
        })
        .collect()
}

struct Writer<'a, 'c> {
    log: JudgmentLog,
    rationale: Option<(PathBuf, std::fs::File)>,
    judge_id: &'a str,
    model: Option<&'a str>,
    clock: &'c mut dyn Clock,
    buf: Vec<Judgment>,
    side: String,
    flush_every: usize,
    summary: RunSummary,
}

impl Writer<'_, '_> {
    fn push(&mut self, pair: &PlannedPair, v: Verdict) -> Result<()> {
        let ts = self.clock.now();
        let j = Judgment::new(self.judge_id, pair.left.clone(), pair.right.clone(), v.choice, ts);
        if v.parse_failed {
            self.summary.parse_failures += 1;
        }
        if let (Some(text), Some(_)) = (v.rationale, &self.rationale) {
            let rec = RationaleRecord {
                pair: (pair.left.clone(), pair.right.clone()),
                choice: v.choice,
                rationale: text,
                model: self.model.map(str::to_string),
                ts: j.timestamp,
                parse_failed: v.parse_failed,
            };
            self.side.push_str(&serde_json::to_string(&rec)?);
            self.side.push('\n');
        }
        self.buf.push(j);
        if self.buf.len() >= self.flush_every {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        use std::io::Write;
        // sidecar first: a rationale without its verdict is harmless on resume
        if let Some((path, file)) = &mut self.rationale {
            if !self.side.is_empty() {
                file.write_all(self.side.as_bytes()).map_err(|e| Error::io(&*path, e))?;
                self.side.clear();
            }
        }
        self.summary.appended += self.log.append(&self.buf)?;
        self.buf.clear();
        Ok(())
    }
}

pub fn run_plan(
    plan: &PairingPlan,
    judge: &dyn Judge,
    log_path: impl AsRef<Path>,
    opts: RunOptions<'_>,
) -> Result<RunSummary> {
    if opts.concurrency_limit == 0 {
        return Err(Error::InvalidArgument("concurrency_limit must be >= 1".into()));
    }
    judge.prepare(plan)?;
    let log_path = log_path.as_ref();
    let log = JudgmentLog::open(log_path)?;
    let existing = read_judgments(log_path)?;
    let mut pending = pending_pairs(plan, judge.judge_id(), &existing);
    let already_done = plan.len() - pending.len();
    if let Some(limit) = opts.limit {
        pending.truncate(limit);
    }
    let rationale = match &opts.rationale_log {
        Some(p) => {
            let f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            Some((p.clone(), f))
        }
        None => None,
    };
    let mut writer = Writer {
        log,
        rationale,
        judge_id: judge.judge_id(),
        model: judge.model(),
        clock: opts.clock,
        buf: Vec::new(),
        side: String::new(),
        flush_every: opts.flush_every.max(1),
        summary: RunSummary {
            total: plan.len(),
            already_done,
            ..RunSummary::default()
        },
    };
    log::info!(
        "judge {}: {} of {} pairs already logged, {} to run",
        judge.judge_id(),
        already_done,
        plan.len(),
        pending.len()
    );

    let outcome = if opts.concurrency_limit == 1 || pending.len() <= 1 {
        run_sequential(&pending, judge, &mut writer)
    } else {
        run_concurrent(&pending, judge, opts.concurrency_limit, &mut writer)
    };
    // keep whatever was answered before a failure
    writer.flush()?;
    outcome.map(|_| writer.summary)
}

fn run_sequential(pending: &[&PlannedPair], judge: &dyn Judge, writer: &mut Writer<'_, '_>) -> Result<()> {
    for (i, pair) in pending.iter().enumerate() {
        let v = judge.verdict(&pair.left, &pair.right)?;
        writer.push(pair, v)?;
        if (i + 1) % 10_000 == 0 {
            log::info!("judged {}/{}", i + 1, pending.len());
        }
    }
    Ok(())
}

fn run_concurrent(
    pending: &[&PlannedPair],
    judge: &dyn Judge,
    workers: usize,
    writer: &mut Writer<'_, '_>,
) -> Result<()> {
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<Verdict>)>();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(pending.len()) {
            let tx = tx.clone();
            let (next, abort) = (&next, &abort);
            scope.spawn(move || loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(pair) = pending.get(i) else { break };
                let r = judge.verdict(&pair.left, &pair.right);
                if tx.send((i, r)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // reorder buffer: write strictly in plan order
        let mut ready: BTreeMap<usize, Verdict> = BTreeMap::new();
        let mut cursor = 0;
        let mut first_err: Option<(usize, Error)> = None;
        for (i, r) in rx {
            match r {
                Ok(v) => {
                    ready.insert(i, v);
                }
                Err(e) => {
                    abort.store(true, Ordering::Relaxed);
                    if first_err.as_ref().is_none_or(|(at, _)| i < *at) {
                        first_err = Some((i, e));
                    }
                }
            }
            while let Some(v) = ready.remove(&cursor) {
                writer.push(pending[cursor], v)?;
                cursor += 1;
            }
        }
        // after a failure, answered pairs past the gap are still kept
        for (i, v) in std::mem::take(&mut ready) {
            writer.push(pending[i], v)?;
        }
        match first_err {
            Some((_, e)) => Err(e),
            None => Ok(()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judges::{SequenceClock, SyntheticJudge, SystemClock};
    use crate::model::{AnchorSet, Heading};
    use crate::tournament::build_plan;
    use chrono::TimeZone;
    use std::sync::Mutex;

    fn setup(n: usize, opponents: usize) -> (PairingPlan, SyntheticJudge) {
        let keys: Vec<ImageKey> = (0..n).map(|i| ImageKey::new(format!("a{i:03}"), Heading::East)).collect();
        let latent = keys.iter().enumerate().map(|(i, k)| (k.clone(), i as f64)).collect();
        let plan = build_plan(&AnchorSet::new(keys).unwrap(), opponents, 9).unwrap();
        (plan, SyntheticJudge::noiseless("synthetic-0", latent))
    }

    fn clock() -> SequenceClock {
        SequenceClock::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(), chrono::Duration::seconds(1))
    }

    fn opts(clock: &mut dyn Clock, limit: Option<usize>, workers: usize) -> RunOptions<'_> {
        RunOptions {
            concurrency_limit: workers,
            limit,
            flush_every: 1,
            clock,
            rationale_log: None,
        }
    }

    #[test]
    fn twenty_pairs_twenty_lines() {
        let (plan, judge) = setup(5, 4);
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("j.jsonl");
        let s = run_plan(&plan, &judge, &log, opts(&mut SystemClock, None, 1)).unwrap();
        assert_eq!(s.appended, 20);
        assert_eq!(read_judgments(&log).unwrap().len(), 20);
        // idempotent
        let s = run_plan(&plan, &judge, &log, opts(&mut SystemClock, None, 1)).unwrap();
        assert_eq!((s.appended, s.already_done), (0, 20));
    }

    #[test]
    fn resume_after_interruption() {
        let (plan, judge) = setup(5, 4);
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("j.jsonl");
        let mut c = clock();
        assert_eq!(run_plan(&plan, &judge, &log, opts(&mut c, Some(10), 1)).unwrap().appended, 10);
        let s = run_plan(&plan, &judge, &log, opts(&mut c, None, 1)).unwrap();
        assert_eq!((s.already_done, s.appended), (10, 10));
        assert_eq!(read_judgments(&log).unwrap().len(), 20);
    }

    #[test]
    fn concurrent_run_matches_sequential_bytes() {
        let (plan, judge) = setup(30, 6);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        run_plan(&plan, &judge, &a, opts(&mut clock(), None, 1)).unwrap();
        run_plan(&plan, &judge, &b, opts(&mut clock(), None, 4)).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn duplicate_ordered_pairs_are_counted_as_multiset() {
        let k = |s: &str| ImageKey::new(s, Heading::North);
        let pair = PlannedPair { subject: k("a"), left: k("a"), right: k("b") };
        let plan = PairingPlan { opponents_per_item: 1, seed: 0, pairs: vec![pair.clone(), PlannedPair { subject: k("b"), ..pair }] };
        let judge = SyntheticJudge::noiseless("s", [(k("a"), 1.0), (k("b"), 0.0)].into_iter().collect());
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("j.jsonl");
        run_plan(&plan, &judge, &log, opts(&mut clock(), Some(1), 1)).unwrap();
        let s = run_plan(&plan, &judge, &log, opts(&mut clock(), None, 1)).unwrap();
        assert_eq!((s.already_done, s.appended), (1, 1));
    }

    /// Fails on one specific pair to exercise the partial-log path.
    struct Flaky {
        inner: SyntheticJudge,
        poison: ImageKey,
        calls: Mutex<usize>,
    }

    impl Judge for Flaky {
        fn judge_id(&self) -> &str {
            self.inner.judge_id()
        }
        fn verdict(&self, l: &ImageKey, r: &ImageKey) -> Result<Verdict> {
            *self.calls.lock().unwrap() += 1;
            if l == &self.poison || r == &self.poison {
                return Err(Error::Endpoint { message: "503 forever".into(), request_id: Some("req-1".into()) });
            }
            self.inner.verdict(l, r)
        }
    }

    #[test]
    fn persistent_failure_keeps_partial_log() {
        let (plan, inner) = setup(8, 2);
        let poison = plan.pairs[5].left.clone();
        let judge = Flaky { inner, poison, calls: Mutex::new(0) };
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("j.jsonl");
        for workers in [1, 3] {
            let err = run_plan(&plan, &judge, &log, opts(&mut clock(), None, workers)).unwrap_err();
            assert!(err.to_string().contains("req-1"));
        }
        let logged = read_judgments(&log).unwrap();
        assert!(logged.len() >= 5 && logged.len() < plan.len());
        assert!(logged.iter().all(|j| j.left != judge.poison && j.right != judge.poison));
    }
}
