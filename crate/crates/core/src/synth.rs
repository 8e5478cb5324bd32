//! Synthetic city for offline runs: points scattered over a unit square,
//! image embeddings that vary smoothly with position (random Fourier
//! features of a Gaussian kernel, plus per-image noise), and a latent safety
//! field that is a fixed smooth function of position.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::embedding::EmbeddingMatrix;
use crate::error::Result;
use crate::judges::Judge;
use crate::model::{Corpus, Heading, ImageKey, Judgment, SviRecord};
use crate::rng;
use crate::tournament::PairingPlan;

#[derive(Debug, Clone, PartialEq)]
pub struct CityConfig {
    pub points: usize,
    pub dim: usize,
    /// Kernel length scale in unit-square coordinates.
    pub length_scale: f64,
    /// How far each heading's view is offset from the point itself.
    pub view_offset: f64,
    /// Standard deviation of per-image feature noise, relative to the
    /// feature scale.
    pub feature_noise: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub extent_deg: f64,
}

impl Default for CityConfig {
    fn default() -> Self {
        CityConfig {
            points: 5000,
            dim: 64,
            length_scale: 0.08,
            view_offset: 0.01,
            feature_noise: 0.1,
            origin_lat: 30.55,
            origin_lon: 103.95,
            extent_deg: 0.25,
        }
    }
}

/// Latent safety in [1.5, 8.5] over the unit square.
pub fn latent_safety(x: f64, y: f64) -> f64 {
    5.0 + 2.5 * (2.0 * PI * x).sin() * (1.5 * PI * y).cos() + 2.0 * (x - 0.5)
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub corpus: Corpus,
    pub embeddings: EmbeddingMatrix,
    pub latent: BTreeMap<ImageKey, f64>,
    /// Unit-square position of each point, keyed by point id.
    pub positions: BTreeMap<String, (f64, f64)>,
}

impl SyntheticCity {
    /// Mean latent over a point's headings.
    pub fn point_latent(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (k, v) in &self.latent {
            let e = acc.entry(k.point_id.clone()).or_default();
            e.0 += v;
            e.1 += 1;
        }
        acc.into_iter().map(|(p, (s, n))| (p, s / n as f64)).collect()
    }
}

pub fn generate_city(cfg: &CityConfig, seed: u64) -> Result<SyntheticCity> {
    let mut rng = rng::seeded(rng::derive_seed(seed, &["synthetic-city"]));
    let freq = Normal::new(0.0, 1.0 / cfg.length_scale).expect("positive length scale");
    let feature_scale = (2.0 / cfg.dim as f64).sqrt();
    let noise = Normal::new(0.0, cfg.feature_noise * feature_scale).expect("non-negative noise");
    let basis: Vec<(f64, f64, f64)> = (0..cfg.dim)
        .map(|_| (freq.sample(&mut rng), freq.sample(&mut rng), rng.random_range(0.0..2.0 * PI)))
        .collect();

    let width = cfg.points.max(1).to_string().len();
    let mut records = Vec::with_capacity(cfg.points * 4);
    let mut rows = Vec::with_capacity(cfg.points * 4);
    let mut latent = BTreeMap::new();
    let mut positions = BTreeMap::new();
    for i in 0..cfg.points {
        let point_id = format!("p{i:0width$}");
        let (x, y): (f64, f64) = (rng.random(), rng.random());
        positions.insert(point_id.clone(), (x, y));
        let lat = cfg.origin_lat + y * cfg.extent_deg;
        let lon = cfg.origin_lon + x * cfg.extent_deg;
        for h in Heading::ALL {
            let theta = f64::from(h.degrees()).to_radians();
            let (vx, vy) = (x + cfg.view_offset * theta.sin(), y + cfg.view_offset * theta.cos());
            let key = ImageKey::new(point_id.clone(), h);
            let v: Vec<f32> = basis
                .iter()
                .map(|&(wx, wy, b)| (feature_scale * (wx * vx + wy * vy + b).cos() + noise.sample(&mut rng)) as f32)
                .collect();
            latent.insert(key.clone(), latent_safety(vx, vy));
            rows.push((key, v));
            records.push(SviRecord {
                point_id: point_id.clone(),
                heading: h,
                lat,
                lon,
                image_ref: format!("synthetic://{point_id}/{}", h.degrees()),
            });
        }
    }
    Ok(SyntheticCity {
        corpus: Corpus::new(records)?,
        embeddings: EmbeddingMatrix::from_rows(rows)?,
        latent,
        positions,
    })
}

/// Runs a judge over a plan in memory, in plan order, with timestamps
/// `start + i` seconds. Used where no judgment log is wanted.
pub fn judge_in_memory(plan: &PairingPlan, judge: &dyn Judge, start: chrono::DateTime<chrono::Utc>) -> Result<Vec<Judgment>> {
    judge.prepare(plan)?;
    plan.pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let v = judge.verdict(&p.left, &p.right)?;
            let ts = start + chrono::Duration::seconds(i as i64);
            Ok(Judgment::new(judge.judge_id(), p.left.clone(), p.right.clone(), v.choice, ts))
        })
        .collect()
}
