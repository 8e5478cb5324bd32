//! Domain types and the manifest / anchor / judgment-log file formats.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn degrees(self) -> u16 {
        match self {
            Heading::North => 0,
            Heading::East => 90,
            Heading::South => 180,
            Heading::West => 270,
        }
    }

    pub fn from_degrees(deg: i64) -> Result<Self> {
        match deg {
            0 => Ok(Heading::North),
            90 => Ok(Heading::East),
            180 => Ok(Heading::South),
            270 => Ok(Heading::West),
            other => Err(Error::InvalidHeading(other)),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

/// One image: a point id plus a heading, written `point_id#heading`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ImageKey {
    pub point_id: String,
    pub heading: Heading,
}

impl ImageKey {
    pub fn new(point_id: impl Into<String>, heading: Heading) -> Self {
        ImageKey {
            point_id: point_id.into(),
            heading,
        }
    }
}

impl fmt::Display for ImageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.point_id, self.heading)
    }
}

impl FromStr for ImageKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (point, heading) = s
            .rsplit_once('#')
            .ok_or_else(|| Error::InvalidKey(s.to_string()))?;
        if point.is_empty() {
            return Err(Error::InvalidKey(s.to_string()));
        }
        let deg: i64 = heading
            .parse()
            .map_err(|_| Error::InvalidKey(s.to_string()))?;
        Ok(ImageKey::new(point, Heading::from_degrees(deg)?))
    }
}

impl Serialize for ImageKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ImageKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SviRecord {
    pub point_id: String,
    pub heading: Heading,
    pub lat: f64,
    pub lon: f64,
    pub image_ref: String,
}

impl SviRecord {
    pub fn key(&self) -> ImageKey {
        ImageKey::new(self.point_id.clone(), self.heading)
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    point_id: String,
    heading: i64,
    lat: f64,
    lon: f64,
    image: String,
}

fn check_coordinates(lat: f64, lon: f64) -> Result<()> {
    if (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
        Ok(())
    } else {
        Err(Error::CoordinateOutOfRange { lat, lon })
    }
}

/// A validated set of street-view records, iterated in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    records: Vec<SviRecord>,
}

impl Corpus {
    pub fn new(mut records: Vec<SviRecord>) -> Result<Self> {
        for r in &records {
            check_coordinates(r.lat, r.lon)?;
        }
        records.sort_by(|a, b| (&a.point_id, a.heading).cmp(&(&b.point_id, b.heading)));
        for w in records.windows(2) {
            if w[0].point_id == w[1].point_id && w[0].heading == w[1].heading {
                return Err(Error::DuplicateKey(w[1].key().to_string()));
            }
        }
        Ok(Corpus { records })
    }

    pub fn records(&self) -> &[SviRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &ImageKey) -> Option<&SviRecord> {
        self.records
            .binary_search_by(|r| (r.point_id.as_str(), r.heading).cmp(&(key.point_id.as_str(), key.heading)))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn keys(&self) -> impl Iterator<Item = ImageKey> + '_ {
        self.records.iter().map(SviRecord::key)
    }

    /// First record per point id, for coordinates.
    pub fn points(&self) -> BTreeMap<&str, (f64, f64)> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            out.entry(r.point_id.as_str()).or_insert((r.lat, r.lon));
        }
        out
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ManifestLine =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let heading = Heading::from_degrees(raw.heading)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        check_coordinates(raw.lat, raw.lon).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if !seen.insert((raw.point_id.clone(), heading)) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate key {}#{}", raw.point_id, heading),
            ));
        }
        records.push(SviRecord {
            point_id: raw.point_id,
            heading,
            lat: raw.lat,
            lon: raw.lon,
            image_ref: raw.image,
        });
    }
    Corpus::new(records)
}

pub fn manifest_to_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for r in corpus.records() {
        let line = ManifestLine {
            point_id: r.point_id.clone(),
            heading: i64::from(r.heading.degrees()),
            lat: r.lat,
            lon: r.lon,
            image: r.image_ref.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
        out.push('\n');
    }
    out
}

/// Ordered, duplicate-free list of anchor image keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorSet {
    members: Vec<ImageKey>,
}

impl AnchorSet {
    pub fn new(members: Vec<ImageKey>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for m in &members {
            if !seen.insert(m) {
                return Err(Error::DuplicateKey(m.to_string()));
            }
        }
        Ok(AnchorSet { members })
    }

    /// Checks that every member resolves to a corpus record.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<()> {
        match self.members.iter().find(|k| corpus.get(k).is_none()) {
            Some(k) => Err(Error::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }

    pub fn members(&self) -> &[ImageKey] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.members.iter().map(|k| format!("{k}\n")).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut members = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            members.push(
                line.parse()
                    .map_err(|e: Error| Error::parse(path, idx + 1, e.to_string()))?,
            );
        }
        AnchorSet::new(members)
    }
}

/// Uniform sample without replacement. Members come back in corpus order, so
/// the result depends only on which records were drawn.
pub fn sample_anchor(corpus: &Corpus, size: usize, seed: u64) -> Result<AnchorSet> {
    if size > corpus.len() {
        return Err(Error::SizeExceeded {
            requested: size,
            available: corpus.len(),
        });
    }
    let mut rng = rng::seeded(rng::derive_seed(seed, &["sample-anchor"]));
    let mut picked = rand::seq::index::sample(&mut rng, corpus.len(), size).into_vec();
    picked.sort_unstable();
    let members = picked.into_iter().map(|i| corpus.records()[i].key()).collect();
    AnchorSet::new(members)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    #[serde(rename = "A")]
    Left,
    #[serde(rename = "B")]
    Right,
    #[serde(rename = "C")]
    Uncomparable,
}

impl Choice {
    pub fn label(self) -> &'static str {
        match self {
            Choice::Left => "A",
            Choice::Right => "B",
            Choice::Uncomparable => "C",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "A" => Some(Choice::Left),
            "B" => Some(Choice::Right),
            "C" => Some(Choice::Uncomparable),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Choice::Left => Choice::Right,
            Choice::Right => Choice::Left,
            Choice::Uncomparable => Choice::Uncomparable,
        }
    }
}

/// Truncates to whole seconds, the precision of the log format.
pub fn to_log_precision(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.with_nanosecond(0).expect("zero nanoseconds is valid")
}

pub mod ts_format {
    use super::*;

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    #[serde(rename = "judge")]
    pub judge_id: String,
    pub left: ImageKey,
    pub right: ImageKey,
    pub choice: Choice,
    #[serde(rename = "ts", with = "ts_format")]
    pub timestamp: DateTime<Utc>,
}

impl Judgment {
    pub fn new(
        judge_id: impl Into<String>,
        left: ImageKey,
        right: ImageKey,
        choice: Choice,
        timestamp: DateTime<Utc>,
    ) -> Self {
        Judgment {
            judge_id: judge_id.into(),
            left,
            right,
            choice,
            timestamp: to_log_precision(timestamp),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.left == self.right {
            return Err(Error::InvalidJudgment(format!(
                "left and right are the same image {}",
                self.left
            )));
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("judgment serializes");
        line.push('\n');
        line
    }
}

/// Append-only judgment log. One writer; each batch lands in a single
/// `write_all` on an `O_APPEND` handle so concurrent readers only ever see
/// whole lines.
pub struct JudgmentLog {
    path: PathBuf,
    file: File,
}

impl JudgmentLog {
    /// Opens (creating if needed). A torn final line left by a crash is cut off.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        repair_torn_tail(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(JudgmentLog { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validates the whole batch before writing any of it.
    pub fn append(&mut self, judgments: &[Judgment]) -> Result<usize> {
        for j in judgments {
            j.validate()?;
        }
        if judgments.is_empty() {
            return Ok(0);
        }
        let buf: String = judgments.iter().map(Judgment::to_line).collect();
        self.file
            .write_all(buf.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        Ok(judgments.len())
    }
}

fn repair_torn_tail(path: &Path) -> Result<()> {
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if len == 0 {
        return Ok(());
    }
    let mut last = [0u8; 1];
    file.seek(SeekFrom::Start(len - 1))
        .and_then(|_| file.read_exact(&mut last))
        .map_err(|e| Error::io(path, e))?;
    if last[0] == b'\n' {
        return Ok(());
    }
    let mut contents = Vec::with_capacity(len as usize);
    file.seek(SeekFrom::Start(0))
        .and_then(|_| file.read_to_end(&mut contents))
        .map_err(|e| Error::io(path, e))?;
    let keep = contents.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    log::warn!(
        "{}: dropping {} bytes of incomplete trailing record",
        path.display(),
        contents.len() - keep
    );
    file.set_len(keep as u64).map_err(|e| Error::io(path, e))
}

/// Appends to the log at `path`, returning the number of records written.
pub fn persist_judgments(path: impl AsRef<Path>, judgments: &[Judgment]) -> Result<usize> {
    JudgmentLog::open(path)?.append(judgments)
}

/// Reads every complete record; a missing file is an empty log.
pub fn read_judgments(path: impl AsRef<Path>) -> Result<Vec<Judgment>> {
    let path = path.as_ref();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut out = Vec::new();
    for (idx, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let j: Judgment =
            serde_json::from_str(line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        out.push(j);
    }
    Ok(out)
}

/// Guidelines shown to annotators and embedded in the MLLM prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyCriteria {
    pub safe: Vec<String>,
    pub dangerous: Vec<String>,
}

impl SafetyCriteria {
    pub fn validate(&self) -> Result<()> {
        if self.safe.is_empty() || self.dangerous.is_empty() {
            return Err(Error::Empty("safety criteria need both safe and dangerous descriptions"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let criteria: SafetyCriteria =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, 1, e.to_string()))?;
        criteria.validate()?;
        Ok(criteria)
    }
}

const SAFE_DESCRIPTIONS: [&str; 9] = [
    "Areas with high pedestrian activity, such as commercial buildings or residential zones",
    "Public service facilities, including police stations and hospitals",
    "Well-maintained and organized street trees",
    "Sidewalks that are clean and in good repair",
    "Active and clean downtown roads",
    "Clearly marked and easily accessible public transport stops",
    "Clear and visible road signs and directions",
    "Well-maintained street decorations or public spaces",
    "Presence of well-maintained greenery and parks",
];

const DANGEROUS_DESCRIPTIONS: [&str; 11] = [
    "Buildings that are damaged or abandoned",
    "Walls that are blocked or in disrepair",
    "Remote rural or suburban roads with little traffic",
    "Areas where garbage is piled up or the environment is neglected",
    "Active construction sites with insufficient safety measures",
    "Areas lacking sufficient traffic lights",
    "Complex and confusing traffic systems",
    "High traffic areas with disorganized vehicle and pedestrian flow",
    "Open land that is desolate and uninhabited",
    "Narrow, enclosed spaces",
    "Long and narrow roads or tunnels with poor visibility",
];

impl Default for SafetyCriteria {
    /// The baseline street-safety guidelines (9 safe, 11 dangerous cues).
    fn default() -> Self {
        SafetyCriteria {
            safe: SAFE_DESCRIPTIONS.iter().map(|s| s.to_string()).collect(),
            dangerous: DANGEROUS_DESCRIPTIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn line(point: &str, heading: i64) -> String {
        format!(r#"{{"point_id":"{point}","heading":{heading},"lat":30.6,"lon":104.0,"image":"img/{point}_{heading}.jpg"}}"#)
    }

    #[test]
    fn two_line_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.jsonl", &format!("{}\n{}\n", line("p1", 0), line("p1", 90)));
        let corpus = load_manifest(&p).unwrap();
        assert_eq!(corpus.len(), 2);
    }

    #[test]
    fn invalid_heading_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.jsonl", &format!("{}\n{}\n", line("p1", 0), line("p1", 45)));
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("invalid heading"), "{err}");
    }

    #[test]
    fn eight_lines_sorted_by_point_then_heading() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for h in [270, 0, 180, 90] {
            body += &format!("{}\n", line("p2", h));
            body += &format!("{}\n", line("p1", h));
        }
        let p = write(dir.path(), "m.jsonl", &body);
        let keys: Vec<String> = load_manifest(&p).unwrap().keys().map(|k| k.to_string()).collect();
        assert_eq!(
            keys,
            ["p1#0", "p1#90", "p1#180", "p1#270", "p2#0", "p2#90", "p2#180", "p2#270"]
        );
    }

    #[test]
    fn duplicate_and_out_of_range_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.jsonl", &format!("{}\n{}\n", line("p1", 0), line("p1", 0)));
        assert!(load_manifest(&p).unwrap_err().to_string().contains("duplicate"));
        let bad = r#"{"point_id":"p","heading":0,"lat":91.0,"lon":0.0,"image":"x"}"#;
        let p = write(dir.path(), "r.jsonl", &format!("{bad}\n"));
        assert!(load_manifest(&p).unwrap_err().to_string().contains("out of range"));
        let p = write(dir.path(), "g.jsonl", "{not json\n");
        assert!(matches!(load_manifest(&p), Err(Error::Parse { line: 1, .. })));
    }

    fn corpus_of(n: usize) -> Corpus {
        let recs = (0..n)
            .map(|i| SviRecord {
                point_id: format!("p{i:04}"),
                heading: Heading::North,
                lat: 0.0,
                lon: 0.0,
                image_ref: String::new(),
            })
            .collect();
        Corpus::new(recs).unwrap()
    }

    #[test]
    fn exhaustive_sample_is_corpus_order() {
        let c = corpus_of(5);
        let a = sample_anchor(&c, 5, 3).unwrap();
        assert_eq!(a.members(), c.keys().collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn full_samples_agree_across_seeds() {
        let c = corpus_of(1000);
        let a: BTreeSet<_> = sample_anchor(&c, 1000, 1).unwrap().members().iter().cloned().collect();
        let b: BTreeSet<_> = sample_anchor(&c, 1000, 2).unwrap().members().iter().cloned().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_replays_and_rejects_oversize() {
        let c = corpus_of(100);
        let a = sample_anchor(&c, 10, 99).unwrap();
        assert_eq!(a, sample_anchor(&c, 10, 99).unwrap());
        assert_eq!(a.len(), 10);
        a.validate_against(&c).unwrap();
        assert!(matches!(sample_anchor(&c, 101, 0), Err(Error::SizeExceeded { .. })));
    }

    fn judgment(i: u32, choice: Choice) -> Judgment {
        Judgment::new(
            format!("judge-{}", i % 3),
            ImageKey::new(format!("p{i}"), Heading::North),
            ImageKey::new(format!("q{i}"), Heading::West),
            choice,
            Utc.timestamp_opt(1_700_000_000 + i64::from(i), 0).unwrap(),
        )
    }

    #[test]
    fn append_three_and_reject_self_comparison() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("j.jsonl");
        let js: Vec<_> = (0..3).map(|i| judgment(i, Choice::Left)).collect();
        assert_eq!(persist_judgments(&log, &js).unwrap(), 3);
        assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 3);

        let k = ImageKey::new("p", Heading::East);
        let bad = Judgment::new("j", k.clone(), k, Choice::Left, Utc::now());
        assert!(persist_judgments(&log, &[judgment(9, Choice::Right), bad]).is_err());
        assert_eq!(read_judgments(&log).unwrap().len(), 3);
    }

    #[test]
    fn thousand_judgments_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("j.jsonl");
        let choices = [Choice::Left, Choice::Right, Choice::Uncomparable];
        let js: Vec<_> = (0..1000).map(|i| judgment(i, choices[i as usize % 3])).collect();
        persist_judgments(&log, &js).unwrap();
        assert_eq!(read_judgments(&log).unwrap(), js);
    }

    #[test]
    fn log_line_format() {
        let j = judgment(1, Choice::Uncomparable);
        assert_eq!(
            j.to_line(),
            "{\"judge\":\"judge-1\",\"left\":\"p1#0\",\"right\":\"q1#270\",\"choice\":\"C\",\"ts\":\"2023-11-14T22:13:21Z\"}\n"
        );
    }

    #[test]
    fn torn_tail_is_dropped_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("j.jsonl");
        persist_judgments(&log, &[judgment(0, Choice::Left)]).unwrap();
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"judge\":\"x\",\"le").unwrap();
        drop(f);
        assert_eq!(read_judgments(&log).unwrap().len(), 1);
        persist_judgments(&log, &[judgment(1, Choice::Right)]).unwrap();
        assert_eq!(read_judgments(&log).unwrap().len(), 2);
    }

    #[test]
    fn default_criteria_content() {
        let c = SafetyCriteria::default();
        c.validate().unwrap();
        assert_eq!((c.safe.len(), c.dangerous.len()), (9, 11));
        assert!(c.dangerous.iter().any(|d| d == "Buildings that are damaged or abandoned"));
        let empty = SafetyCriteria { safe: vec![], dangerous: vec!["x".into()] };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn key_parsing() {
        let k: ImageKey = "a#b#180".parse().unwrap();
        assert_eq!(k.point_id, "a#b");
        assert_eq!(k.heading, Heading::South);
        assert!("p#45".parse::<ImageKey>().is_err());
        assert!("p".parse::<ImageKey>().is_err());
        assert!("#90".parse::<ImageKey>().is_err());
    }

    fn record_strategy() -> impl Strategy<Value = SviRecord> {
        (
            "[a-z0-9_]{1,8}",
            0usize..4,
            -90.0f64..=90.0,
            -180.0f64..=180.0,
            "[ -~]{0,12}",
        )
            .prop_map(|(point_id, h, lat, lon, image_ref)| SviRecord {
                point_id,
                heading: Heading::ALL[h],
                lat,
                lon,
                image_ref,
            })
    }

    proptest! {
        #[test]
        fn manifest_round_trip(recs in proptest::collection::vec(record_strategy(), 0..30)) {
            let mut seen = BTreeSet::new();
            let recs: Vec<_> = recs.into_iter().filter(|r| seen.insert(r.key())).collect();
            let corpus = Corpus::new(recs).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.jsonl");
            std::fs::write(&p, manifest_to_string(&corpus)).unwrap();
            prop_assert_eq!(load_manifest(&p).unwrap(), corpus);
        }
    }
}
