//! Training-free scoring: exact top-K retrieval against scored anchors,
//! similarity-weighted aggregation, then averaging over a point's headings.

use std::collections::BTreeMap;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::embedding::{dot, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::model::{Heading, ImageKey};

/// Anchor vectors with their normalized scores, rows sorted by key.
#[derive(Debug, Clone)]
pub struct AnchorIndex {
    dim: usize,
    keys: Vec<ImageKey>,
    data: Vec<f32>,
    scores: Vec<f64>,
}

impl AnchorIndex {
    /// Every scored anchor must have an embedding. Embeddings without a
    /// score are ignored.
    pub fn new(embeddings: &EmbeddingMatrix, scores: &BTreeMap<ImageKey, f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("anchor set"));
        }
        let dim = embeddings.dim();
        let mut keys = Vec::with_capacity(scores.len());
        let mut data = Vec::with_capacity(scores.len() * dim);
        let mut out_scores = Vec::with_capacity(scores.len());
        for (k, &s) in scores {
            let v = embeddings
                .get(k)
                .ok_or_else(|| Error::UnknownKey(format!("anchor {k} has no embedding")))?;
            if !(0.0..=10.0).contains(&s) {
                return Err(Error::InvalidArgument(format!("anchor {k} score {s} is outside [0, 10]")));
            }
            keys.push(k.clone());
            data.extend_from_slice(v);
            out_scores.push(s);
        }
        Ok(AnchorIndex { dim, keys, data, scores: out_scores })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean_score(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub key: ImageKey,
    pub similarity: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query: Option<ImageKey>,
    pub k: usize,
    /// Similarity descending, ties by anchor key ascending.
    pub neighbors: Vec<Neighbor>,
}

/// Exact top-K by cosine similarity. When `exclude` names an anchor, that
/// anchor is never returned (the leakage guard for held-out evaluation).
pub fn top_k(index: &AnchorIndex, query: &[f32], k: usize, exclude: Option<&ImageKey>) -> Result<NeighborList> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    if index.is_empty() {
        return Err(Error::Empty("anchor set"));
    }
    if query.len() != index.dim {
        return Err(Error::DimensionMismatch { row: 0, expected: index.dim, found: query.len() });
    }
    // (similarity, row); rows are scanned in key order so an equal
    // similarity always lands after the ones already kept
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..index.len() {
        if exclude.is_some_and(|e| e == &index.keys[i]) {
            continue;
        }
        let sim = dot(query, index.row(i)).clamp(-1.0, 1.0);
        if best.len() == k && sim <= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(s, _)| s >= sim);
        best.insert(pos, (sim, i));
        best.truncate(k);
    }
    Ok(NeighborList {
        query: exclude.cloned(),
        k,
        neighbors: best
            .into_iter()
            .map(|(similarity, i)| Neighbor { key: index.keys[i].clone(), similarity, score: index.scores[i] })
            .collect(),
    })
}

/// Similarity-weighted mean of neighbor scores. Negative similarities are
/// clamped to zero; if nothing positive remains the plain mean is used.
pub fn weighted_score(neighbors: &[Neighbor]) -> Result<f64> {
    if neighbors.is_empty() {
        return Err(Error::Empty("neighbor list"));
    }
    let total: f64 = neighbors.iter().map(|n| n.similarity.max(0.0)).sum();
    let raw = if total > 0.0 {
        neighbors.iter().map(|n| n.score * n.similarity.max(0.0)).sum::<f64>() / total
    } else {
        neighbors.iter().map(|n| n.score).sum::<f64>() / neighbors.len() as f64
    };
    let (lo, hi) = neighbors
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| (lo.min(n.score), hi.max(n.score)));
    // rounding can push a convex combination an ulp outside its hull
    Ok(raw.clamp(lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointScore {
    pub point_id: String,
    /// Indexed by [`Heading::index`].
    pub per_heading: [Option<f64>; 4],
    pub combined: f64,
}

impl PointScore {
    pub fn heading(&self, h: Heading) -> Option<f64> {
        self.per_heading[h.index()]
    }

    pub fn missing_headings(&self) -> Vec<Heading> {
        Heading::ALL.into_iter().filter(|h| self.per_heading[h.index()].is_none()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoringOptions {
    pub k: usize,
    /// Drop a query's own key from its candidates when it is also an anchor.
    pub exclude_self: bool,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions { k: 10, exclude_self: true }
    }
}

fn score_image(index: &AnchorIndex, key: &ImageKey, v: &[f32], opts: ScoringOptions) -> Result<f64> {
    let exclude = opts.exclude_self.then_some(key);
    weighted_score(&top_k(index, v, opts.k, exclude)?.neighbors)
}

/// Scores each available heading, then averages over the headings present.
pub fn score_point(
    point_id: &str,
    headings: &[(Heading, &[f32])],
    index: &AnchorIndex,
    opts: ScoringOptions,
) -> Result<PointScore> {
    if headings.is_empty() {
        return Err(Error::Empty("point has no heading images"));
    }
    let mut per_heading = [None; 4];
    for &(h, v) in headings {
        let key = ImageKey::new(point_id, h);
        per_heading[h.index()] = Some(score_image(index, &key, v, opts)?);
    }
    let present: Vec<f64> = per_heading.iter().flatten().copied().collect();
    let combined = present.iter().sum::<f64>() / present.len() as f64;
    let score = PointScore { point_id: point_id.to_string(), per_heading, combined };
    let missing = score.missing_headings();
    if !missing.is_empty() {
        log::debug!("point {point_id}: averaging over {} headings, missing {missing:?}", present.len());
    }
    Ok(score)
}

/// One [`PointScore`] per point id in `corpus`, sorted by point id. The
/// result does not depend on row order or thread schedule.
pub fn score_corpus(corpus: &EmbeddingMatrix, index: &AnchorIndex, opts: ScoringOptions) -> Result<Vec<PointScore>> {
    if corpus.dim() != index.dim() && !corpus.is_empty() {
        return Err(Error::DimensionMismatch { row: 0, expected: index.dim(), found: corpus.dim() });
    }
    let mut grouped: BTreeMap<&str, Vec<(Heading, &[f32])>> = BTreeMap::new();
    for (k, v) in corpus.iter() {
        grouped.entry(k.point_id.as_str()).or_default().push((k.heading, v));
    }
    let groups: Vec<_> = grouped.into_iter().collect();
    let score = |(point, headings): &(&str, Vec<(Heading, &[f32])>)| score_point(point, headings, index, opts);
    #[cfg(feature = "parallel")]
    let scored: Result<Vec<PointScore>> = groups.par_iter().map(score).collect();
    #[cfg(not(feature = "parallel"))]
    let scored: Result<Vec<PointScore>> = groups.iter().map(score).collect();
    let scored = scored?;
    let partial = scored.iter().filter(|p| p.per_heading.iter().any(Option::is_none)).count();
    if partial > 0 {
        log::warn!("{partial} of {} points are missing at least one heading; averaged over those present", scored.len());
    }
    Ok(scored)
}

/// A scored point with its coordinates, as stored in the city score file.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedScore {
    pub score: PointScore,
    pub lat: f64,
    pub lon: f64,
}

pub const SCORE_FILE_HEADER: [&str; 8] =
    ["point_id", "lat", "lon", "score", "heading_0", "heading_90", "heading_180", "heading_270"];

pub fn locate(scores: Vec<PointScore>, coords: &BTreeMap<&str, (f64, f64)>) -> Result<Vec<LocatedScore>> {
    scores
        .into_iter()
        .map(|score| {
            let &(lat, lon) = coords
                .get(score.point_id.as_str())
                .ok_or_else(|| Error::UnknownKey(format!("point {} has no coordinates", score.point_id)))?;
            Ok(LocatedScore { score, lat, lon })
        })
        .collect()
}

pub fn scores_to_csv(points: &[LocatedScore]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCORE_FILE_HEADER).expect("in-memory write");
    for p in points {
        let mut rec = vec![
            p.score.point_id.clone(),
            p.lat.to_string(),
            p.lon.to_string(),
            p.score.combined.to_string(),
        ];
        rec.extend(p.score.per_heading.iter().map(|h| h.map(|s| s.to_string()).unwrap_or_default()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<LocatedScore>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let header = rdr.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?;
    if header != SCORE_FILE_HEADER.as_slice() {
        return Err(Error::parse(path, 1, format!("expected header {}", SCORE_FILE_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::parse(path, line, format!("{} is not a number", SCORE_FILE_HEADER[j])))
        };
        let mut per_heading = [None; 4];
        for (slot, j) in per_heading.iter_mut().zip(4..8) {
            if !rec[j].is_empty() {
                *slot = Some(num(j)?);
            }
        }
        out.push(LocatedScore {
            score: PointScore { point_id: rec[0].to_string(), per_heading, combined: num(3)? },
            lat: num(1)?,
            lon: num(2)?,
        });
    }
    Ok(out)
}
