//! Latent-score oracle judge. Cheap, seeded, and exact when noise is zero,
//! which makes it the test double for the human and MLLM paths.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;

use super::{Judge, Verdict};
use crate::error::{Error, Result};
use crate::model::{Choice, ImageKey};
use crate::rng;

/// One seeded verdict. With probability `uncomparable_rate` the answer is C;
/// otherwise the higher-latent side wins, flipped with probability `noise`.
/// Equal latents are ordered by key so the noiseless judge is a strict order.
pub fn synthetic_verdict(
    latent: &BTreeMap<ImageKey, f64>,
    left: &ImageKey,
    right: &ImageKey,
    noise: f64,
    uncomparable_rate: f64,
    seed: u64,
) -> Result<Choice> {
    let score = |k: &ImageKey| latent.get(k).copied().ok_or_else(|| Error::UnknownKey(k.to_string()));
    let (l, r) = (score(left)?, score(right)?);
    let mut rng = rng::seeded(rng::derive_seed(
        seed,
        &[&left.to_string(), &right.to_string()],
    ));
    // both draws always happen so the noise stream doesn't depend on the rate
    let skip = rng.random::<f64>() < uncomparable_rate;
    let flip = rng.random::<f64>() < noise;
    if skip {
        return Ok(Choice::Uncomparable);
    }
    let left_higher = match l.total_cmp(&r) {
        std::cmp::Ordering::Equal => left > right,
        ord => ord.is_gt(),
    };
    Ok(if left_higher != flip { Choice::Left } else { Choice::Right })
}

#[derive(Debug, Clone)]
pub struct SyntheticJudge {
    pub judge_id: String,
    pub latent: BTreeMap<ImageKey, f64>,
    pub noise: f64,
    pub uncomparable_rate: f64,
    pub seed: u64,
}

impl SyntheticJudge {
    pub fn noiseless(judge_id: impl Into<String>, latent: BTreeMap<ImageKey, f64>) -> Self {
        SyntheticJudge {
            judge_id: judge_id.into(),
            latent,
            noise: 0.0,
            uncomparable_rate: 0.0,
            seed: 0,
        }
    }
}

impl Judge for SyntheticJudge {
    fn judge_id(&self) -> &str {
        &self.judge_id
    }

    fn prepare(&self, plan: &crate::tournament::PairingPlan) -> Result<()> {
        match plan.keys().into_iter().find(|k| !self.latent.contains_key(k)) {
            Some(k) => Err(Error::UnknownKey(format!("{k} has no latent score"))),
            None => Ok(()),
        }
    }

    fn verdict(&self, left: &ImageKey, right: &ImageKey) -> Result<Verdict> {
        // judge id folds into the seed so a panel of synthetic judges disagrees
        let seed = rng::derive_seed(self.seed, &[&self.judge_id]);
        synthetic_verdict(&self.latent, left, right, self.noise, self.uncomparable_rate, seed)
            .map(Verdict::plain)
    }
}

/// `key,latent` CSV as written by the synthetic city generator.
pub fn load_latent(path: impl AsRef<Path>) -> Result<BTreeMap<ImageKey, f64>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let mut out = BTreeMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if rec.len() != 2 {
            return Err(Error::parse(path, line, "expected key,latent"));
        }
        let key: ImageKey = rec[0].parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        let v: f64 = rec[1].parse().map_err(|_| Error::parse(path, line, "latent is not a number"))?;
        if out.insert(key, v).is_some() {
            return Err(Error::parse(path, line, "duplicate key"));
        }
    }
    Ok(out)
}

pub fn latent_to_csv(latent: &BTreeMap<ImageKey, f64>) -> String {
    let mut out = String::from("key,latent\n");
    for (k, v) in latent {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Heading;

    fn k(s: &str) -> ImageKey {
        ImageKey::new(s, Heading::North)
    }

    fn latent() -> BTreeMap<ImageKey, f64> {
        [(k("a"), 9.0), (k("b"), 1.0)].into_iter().collect()
    }

    #[test]
    fn noiseless_picks_higher() {
        let l = latent();
        assert_eq!(synthetic_verdict(&l, &k("a"), &k("b"), 0.0, 0.0, 1).unwrap(), Choice::Left);
        assert_eq!(synthetic_verdict(&l, &k("b"), &k("a"), 0.0, 0.0, 1).unwrap(), Choice::Right);
    }

    #[test]
    fn full_noise_inverts() {
        let l = latent();
        for seed in 0..50 {
            assert_eq!(synthetic_verdict(&l, &k("a"), &k("b"), 1.0, 0.0, seed).unwrap(), Choice::Right);
        }
    }

    #[test]
    fn uncomparable_rate_one_always_c() {
        let l = latent();
        for seed in 0..50 {
            assert_eq!(
                synthetic_verdict(&l, &k("a"), &k("b"), 0.3, 1.0, seed).unwrap(),
                Choice::Uncomparable
            );
        }
    }

    #[test]
    fn half_noise_frequency() {
        let l = latent();
        let higher = (0..10_000u64)
            .filter(|&s| synthetic_verdict(&l, &k("a"), &k("b"), 0.5, 0.0, s).unwrap() == Choice::Left)
            .count();
        let frac = higher as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn deterministic_and_missing_latent() {
        let l = latent();
        let a = synthetic_verdict(&l, &k("a"), &k("b"), 0.5, 0.2, 77).unwrap();
        assert_eq!(a, synthetic_verdict(&l, &k("a"), &k("b"), 0.5, 0.2, 77).unwrap());
        assert!(matches!(
            synthetic_verdict(&l, &k("a"), &k("zz"), 0.0, 0.0, 0),
            Err(Error::UnknownKey(_))
        ));
    }

    #[test]
    fn ties_resolve_by_key() {
        let l: BTreeMap<_, _> = [(k("a"), 1.0), (k("b"), 1.0)].into_iter().collect();
        assert_eq!(synthetic_verdict(&l, &k("b"), &k("a"), 0.0, 0.0, 0).unwrap(), Choice::Left);
        assert_eq!(synthetic_verdict(&l, &k("a"), &k("b"), 0.0, 0.0, 0).unwrap(), Choice::Right);
    }

    #[test]
    fn latent_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("latent.csv");
        std::fs::write(&p, latent_to_csv(&latent())).unwrap();
        assert_eq!(load_latent(&p).unwrap(), latent());
    }
}
