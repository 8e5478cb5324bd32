//! Agreement metrics (MAE, R²), anchor train/eval splits, the K sweep and
//! rank correlation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::knn::{top_k, weighted_score, AnchorIndex};
use crate::model::ImageKey;
use crate::rng;

pub type Scores = BTreeMap<ImageKey, f64>;

/// Seeded split into (train, eval). The train side gets
/// `round(n * train_fraction)` keys.
pub fn split_anchor(scores: &Scores, train_fraction: f64, seed: u64) -> Result<(Scores, Scores)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let mut keys: Vec<&ImageKey> = scores.keys().collect();
    keys.shuffle(&mut rng::seeded(rng::derive_seed(seed, &["split"])));
    let n_train = (scores.len() as f64 * train_fraction).round() as usize;
    let pick = |ks: &[&ImageKey]| ks.iter().map(|&k| (k.clone(), scores[k])).collect::<Scores>();
    Ok((pick(&keys[..n_train]), pick(&keys[n_train..])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub mae: f64,
    /// Population standard deviation of the absolute errors.
    pub mae_std: f64,
    pub max_err: f64,
    pub min_err: f64,
    /// `None` when the truth is constant (SST = 0).
    pub r2: Option<f64>,
    pub sst: f64,
    pub sse: f64,
}

fn check_same_keys(a: &Scores, b: &Scores) -> Result<()> {
    if a.len() != b.len() || !a.keys().eq(b.keys()) {
        let only_a = a.keys().find(|k| !b.contains_key(k));
        let only_b = b.keys().find(|k| !a.contains_key(k));
        return Err(Error::KeyMismatch(format!(
            "{} vs {} keys (first unmatched: {:?} / {:?})",
            a.len(),
            b.len(),
            only_a.map(ToString::to_string),
            only_b.map(ToString::to_string)
        )));
    }
    Ok(())
}

pub fn compute_report(truth: &Scores, predicted: &Scores) -> Result<EvalReport> {
    check_same_keys(truth, predicted)?;
    let n = truth.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 scored items, got {n}")));
    }
    let nf = n as f64;
    let errors: Vec<f64> = truth.iter().map(|(k, &y)| (y - predicted[k]).abs()).collect();
    let mae = errors.iter().sum::<f64>() / nf;
    let mae_std = (errors.iter().map(|e| (e - mae).powi(2)).sum::<f64>() / nf).sqrt();
    let max_err = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_err = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = truth.values().sum::<f64>() / nf;
    let sst: f64 = truth.values().map(|y| (y - mean).powi(2)).sum();
    let sse: f64 = truth.iter().map(|(k, &y)| (y - predicted[k]).powi(2)).sum();
    let r2 = (sst > 0.0).then(|| 1.0 - sse / sst);
    Ok(EvalReport { n, mae, mae_std, max_err, min_err, r2, sst, sse })
}

fn fmt_r2(r2: Option<f64>) -> String {
    r2.map_or_else(|| "undefined".to_string(), |v| v.to_string())
}

impl EvalReport {
    /// `metric,value` lines.
    pub fn to_csv(&self) -> String {
        let rows = [
            ("n", self.n.to_string()),
            ("mae", self.mae.to_string()),
            ("mae_std", self.mae_std.to_string()),
            ("max", self.max_err.to_string()),
            ("min", self.min_err.to_string()),
            ("r2", fmt_r2(self.r2)),
            ("sst", self.sst.to_string()),
            ("sse", self.sse.to_string()),
        ];
        let mut out = String::from("metric,value\n");
        for (m, v) in rows {
            out.push_str(&format!("{m},{v}\n"));
        }
        out
    }

    /// Table-style block: MAE ± Std, Max, Min, R².
    pub fn to_text(&self, label: &str) -> String {
        let r2 = self.r2.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        format!(
            "{:<16} {:>18} {:>8} {:>8} {:>9}\n{:<16} {:>18} {:>8.4} {:>8.4} {:>9}\n",
            "Method",
            "MAE ± Std",
            "Max",
            "Min",
            "R²",
            label,
            format!("{:.4} ± {:.4}", self.mae, self.mae_std),
            self.max_err,
            self.min_err,
            r2,
        )
    }
}

/// Predicts every eval key from the train anchors. Eval keys are excluded
/// from their own candidate lists.
pub fn predict_held_out(embeddings: &EmbeddingMatrix, train: &Scores, eval: &Scores, k: usize) -> Result<Scores> {
    let index = AnchorIndex::new(embeddings, train)?;
    eval.keys()
        .map(|key| {
            let v = embeddings
                .get(key)
                .ok_or_else(|| Error::UnknownKey(format!("eval anchor {key} has no embedding")))?;
            let nl = top_k(&index, v, k, Some(key))?;
            Ok((key.clone(), weighted_score(&nl.neighbors)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub k: usize,
    pub r2: Option<f64>,
    pub mae: f64,
    /// K exceeded the train-set size; all train anchors were used.
    pub saturated: bool,
}

pub fn k_ablation(embeddings: &EmbeddingMatrix, train: &Scores, eval: &Scores, k_values: &[usize]) -> Result<Vec<AblationRow>> {
    if k_values.is_empty() {
        return Err(Error::Empty("K values"));
    }
    if let Some(&bad) = k_values.iter().find(|&&k| k == 0) {
        return Err(Error::InvalidArgument(format!("K must be >= 1, got {bad}")));
    }
    k_values
        .iter()
        .map(|&k| {
            let saturated = k > train.len();
            if saturated {
                log::warn!("K={k} exceeds {} train anchors; using all of them", train.len());
            }
            let predicted = predict_held_out(embeddings, train, eval, k)?;
            let report = compute_report(eval, &predicted)?;
            Ok(AblationRow { k, r2: report.r2, mae: report.mae, saturated })
        })
        .collect()
}

pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("K,r2,mae\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.k, fmt_r2(r.r2), r.mae));
    }
    out
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Spearman rank correlation over a shared key set.
pub fn compare_rankings(a: &Scores, b: &Scores) -> Result<f64> {
    check_same_keys(a, b)?;
    if a.len() < 2 {
        return Err(Error::InvalidArgument("rank correlation needs at least 2 items".into()));
    }
    let va: Vec<f64> = a.values().copied().collect();
    let vb: Vec<f64> = b.values().copied().collect();
    pearson(&average_ranks(&va), &average_ranks(&vb))
        .ok_or_else(|| Error::InvalidArgument("rank correlation is undefined for a constant ranking".into()))
}
