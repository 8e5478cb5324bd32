//! Everything the page does, as plain Rust.

use std::collections::BTreeMap;

use streetsafe_core::evaluation::{compare_rankings, compute_report, k_ablation, predict_held_out, split_anchor, Scores};
use streetsafe_core::judges::SyntheticJudge;
use streetsafe_core::knn::{score_corpus, AnchorIndex, ScoringOptions};
use streetsafe_core::model::sample_anchor;
use streetsafe_core::synth::{generate_city, judge_in_memory, CityConfig, SyntheticCity};
use streetsafe_core::tournament::{aggregate_judges, build_plan, tally_by_judge};
use streetsafe_core::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub seed: u64,
    pub points: usize,
    pub anchors: usize,
    pub opponents: usize,
    /// Probability that the synthetic judge picks the less safe image.
    pub noise: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params { seed: 7, points: 2000, anchors: 400, opponents: 20, noise: 0.0 }
    }
}

pub struct Session {
    pub params: Params,
    city: SyntheticCity,
    /// Normalized tournament score of every anchor image.
    anchor_scores: Scores,
    pairs: usize,
    spearman: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOut {
    pub r2: Option<f64>,
    pub mae: f64,
}

const TRAIN_FRACTION: f64 = 0.8;

impl Session {
    /// City, anchor draw, pairing plan, synthetic judging and tally.
    pub fn build(params: Params) -> Result<Self> {
        let cfg = CityConfig { points: params.points, ..CityConfig::default() };
        let city = generate_city(&cfg, params.seed)?;
        let anchor = sample_anchor(&city.corpus, params.anchors, params.seed)?;
        let plan = build_plan(&anchor, params.opponents, params.seed)?;
        let judge = SyntheticJudge {
            noise: params.noise,
            seed: params.seed,
            ..SyntheticJudge::noiseless("synthetic", city.latent.clone())
        };
        let log = judge_in_memory(&plan, &judge, chrono::DateTime::UNIX_EPOCH)?;
        let keys = plan.keys();
        let tables: Vec<_> = tally_by_judge(&log, Some(&keys)).into_values().collect();
        let anchor_scores = aggregate_judges(&tables)?.normalized();
        let truth: Scores = anchor_scores.keys().map(|k| (k.clone(), city.latent[k])).collect();
        let spearman = compare_rankings(&anchor_scores, &truth)?;
        Ok(Session { params, city, anchor_scores, pairs: plan.len(), spearman })
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    /// Rank correlation of the tournament scores with the hidden safety.
    pub fn spearman(&self) -> f64 {
        self.spearman
    }

    /// `[x, y, latent]` per point in point-id order, x and y in the unit square.
    pub fn points(&self) -> Vec<f64> {
        let latent = self.city.point_latent();
        self.city
            .positions
            .iter()
            .flat_map(|(id, &(x, y))| [x, y, latent[id]])
            .collect()
    }

    /// `[x, y, score]` per anchor image.
    pub fn anchors(&self) -> Vec<f64> {
        self.anchor_scores
            .iter()
            .flat_map(|(k, &s)| {
                let (x, y) = self.city.positions[&k.point_id];
                [x, y, s]
            })
            .collect()
    }

    /// K-NN score of every point, in the order of [`Session::points`].
    pub fn score(&self, k: usize) -> Result<Vec<f64>> {
        let index = AnchorIndex::new(&self.city.embeddings, &self.anchor_scores)?;
        let scored = score_corpus(&self.city.embeddings, &index, ScoringOptions { k, exclude_self: true })?;
        Ok(scored.into_iter().map(|p| p.combined).collect())
    }

    fn split(&self) -> Result<(Scores, Scores)> {
        split_anchor(&self.anchor_scores, TRAIN_FRACTION, self.params.seed)
    }

    pub fn held_out(&self, k: usize) -> Result<HeldOut> {
        let (train, eval) = self.split()?;
        let predicted = predict_held_out(&self.city.embeddings, &train, &eval, k)?;
        let r = compute_report(&eval, &predicted)?;
        Ok(HeldOut { r2: r.r2, mae: r.mae })
    }

    pub fn ablation(&self, k_max: usize) -> Result<BTreeMap<usize, HeldOut>> {
        let (train, eval) = self.split()?;
        let ks: Vec<usize> = (1..=k_max).collect();
        Ok(k_ablation(&self.city.embeddings, &train, &eval, &ks)?
            .into_iter()
            .map(|row| (row.k, HeldOut { r2: row.r2, mae: row.mae }))
            .collect())
    }
}
