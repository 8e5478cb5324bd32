//! Safety categories and map export.

use std::collections::BTreeMap;
use std::fmt;

use geojson::{Feature, FeatureCollection, GeoJson, Geometry, JsonObject, JsonValue};

use crate::error::{Error, Result};
use crate::knn::{LocatedScore, PointScore};
use crate::model::Heading;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SafetyCategory {
    /// [0, 3)
    Dangerous,
    /// [3, 6]
    Neutral,
    /// (6, 10]
    Safe,
}

impl SafetyCategory {
    pub fn label(self) -> &'static str {
        match self {
            SafetyCategory::Dangerous => "dangerous",
            SafetyCategory::Neutral => "neutral",
            SafetyCategory::Safe => "safe",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "dangerous" => Some(SafetyCategory::Dangerous),
            "neutral" => Some(SafetyCategory::Neutral),
            "safe" => Some(SafetyCategory::Safe),
            _ => None,
        }
    }
}

impl fmt::Display for SafetyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub const DANGEROUS_BELOW: f64 = 3.0;
pub const SAFE_ABOVE: f64 = 6.0;

pub fn classify(score: f64) -> Result<SafetyCategory> {
    if !(0.0..=10.0).contains(&score) {
        return Err(Error::InvalidArgument(format!("score {score} is outside [0, 10]")));
    }
    Ok(if score < DANGEROUS_BELOW {
        SafetyCategory::Dangerous
    } else if score <= SAFE_ABOVE {
        SafetyCategory::Neutral
    } else {
        SafetyCategory::Safe
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBins {
    /// Upper edge of every bin but the last; a score lands in the bin equal
    /// to the number of edges strictly below it.
    pub edges: Vec<f64>,
    pub labels: BTreeMap<String, usize>,
}

impl QuantileBins {
    pub fn bin_of(&self, score: f64) -> usize {
        self.edges.iter().filter(|&&e| score > e).count()
    }
}

/// Equal-count bins by score rank. Equal scores always share a bin.
pub fn quantile_bins<'a>(scores: impl IntoIterator<Item = (&'a str, f64)>, n_bins: usize) -> Result<QuantileBins> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {n_bins}")));
    }
    let items: Vec<(&str, f64)> = scores.into_iter().collect();
    let mut sorted: Vec<f64> = items.iter().map(|&(_, s)| s).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < n_bins {
        return Err(Error::InvalidArgument(format!(
            "{} distinct scores cannot fill {n_bins} bins",
            distinct.len()
        )));
    }
    let n = sorted.len();
    let edges: Vec<f64> = (1..n_bins).map(|b| sorted[(b * n).div_ceil(n_bins) - 1]).collect();
    let mut bins = QuantileBins { edges, labels: BTreeMap::new() };
    for (id, s) in items {
        let b = bins.bin_of(s);
        bins.labels.insert(id.to_string(), b);
    }
    Ok(bins)
}

fn heading_property(h: Heading) -> String {
    format!("heading_{}", h.degrees())
}

/// FeatureCollection of points (longitude, latitude), sorted by point id,
/// each carrying its score, category and per-heading scores.
pub fn export_geojson(points: &[LocatedScore], bins: Option<&QuantileBins>) -> Result<String> {
    let mut sorted: Vec<&LocatedScore> = points.iter().collect();
    sorted.sort_by(|a, b| a.score.point_id.cmp(&b.score.point_id));
    let mut features = Vec::with_capacity(sorted.len());
    for p in sorted {
        let id = &p.score.point_id;
        if !(p.lat.is_finite() && p.lon.is_finite()) || p.lat.abs() > 90.0 || p.lon.abs() > 180.0 {
            return Err(Error::InvalidArgument(format!("point {id} has missing or invalid coordinates")));
        }
        let category = classify(p.score.combined)?;
        let mut props = JsonObject::new();
        props.insert("point_id".into(), JsonValue::from(id.as_str()));
        props.insert("score".into(), JsonValue::from(p.score.combined));
        props.insert("category".into(), JsonValue::from(category.label()));
        for h in Heading::ALL {
            props.insert(heading_property(h), p.score.heading(h).map_or(JsonValue::Null, JsonValue::from));
        }
        if let Some(b) = bins {
            let label = b.labels.get(id).copied().unwrap_or_else(|| b.bin_of(p.score.combined));
            props.insert("bin".into(), JsonValue::from(label));
        }
        features.push(Feature {
            bbox: None,
            geometry: Some(Geometry::new(geojson::Value::Point(vec![p.lon, p.lat]))),
            id: None,
            properties: Some(props),
            foreign_members: None,
        });
    }
    let fc = FeatureCollection { bbox: None, features, foreign_members: None };
    let mut s = GeoJson::FeatureCollection(fc).to_string();
    s.push('\n');
    Ok(s)
}

/// Parses a file written by [`export_geojson`].
pub fn import_geojson(text: &str) -> Result<Vec<(LocatedScore, SafetyCategory)>> {
    let gj: GeoJson = text
        .parse()
        .map_err(|e: geojson::Error| Error::InvalidArgument(format!("invalid GeoJSON: {e}")))?;
    let GeoJson::FeatureCollection(fc) = gj else {
        return Err(Error::InvalidArgument("expected a FeatureCollection".into()));
    };
    let bad = |m: &str| Error::InvalidArgument(m.to_string());
    fc.features
        .into_iter()
        .map(|f| {
            let (lon, lat) = match f.geometry.map(|g| g.value) {
                Some(geojson::Value::Point(c)) if c.len() >= 2 => (c[0], c[1]),
                _ => return Err(bad("feature without a point geometry")),
            };
            let props = f.properties.ok_or_else(|| bad("feature without properties"))?;
            let point_id = props.get("point_id").and_then(JsonValue::as_str).ok_or_else(|| bad("missing point_id"))?;
            let combined = props.get("score").and_then(JsonValue::as_f64).ok_or_else(|| bad("missing score"))?;
            let category = props
                .get("category")
                .and_then(JsonValue::as_str)
                .and_then(SafetyCategory::from_label)
                .ok_or_else(|| bad("missing category"))?;
            let mut per_heading = [None; 4];
            for h in Heading::ALL {
                per_heading[h.index()] = props.get(&heading_property(h)).and_then(JsonValue::as_f64);
            }
            let score = PointScore { point_id: point_id.to_string(), per_heading, combined };
            Ok((LocatedScore { score, lat, lon }, category))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boundaries() {
        assert_eq!(classify(2.9).unwrap(), SafetyCategory::Dangerous);
        assert_eq!(classify(2.999).unwrap(), SafetyCategory::Dangerous);
        assert_eq!(classify(3.0).unwrap(), SafetyCategory::Neutral);
        assert_eq!(classify(6.0).unwrap(), SafetyCategory::Neutral);
        assert_eq!(classify(6.000001).unwrap(), SafetyCategory::Safe);
        assert_eq!(classify(0.0).unwrap(), SafetyCategory::Dangerous);
        assert_eq!(classify(10.0).unwrap(), SafetyCategory::Safe);
        assert!(classify(-0.1).is_err());
        assert!(classify(10.5).is_err());
        assert!(classify(f64::NAN).is_err());
    }

    fn point(id: &str, s: f64) -> LocatedScore {
        LocatedScore {
            score: PointScore { point_id: id.into(), per_heading: [Some(s), None, Some(s), Some(s)], combined: s },
            lat: 30.6,
            lon: 104.1,
        }
    }

    #[test]
    fn export_two_and_empty() {
        let text = export_geojson(&[point("b", 7.0), point("a", 1.0)], None).unwrap();
        let back = import_geojson(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0.score.point_id, "a");
        assert_eq!(back[0].1, SafetyCategory::Dangerous);
        assert_eq!(back[1].1, SafetyCategory::Safe);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["type"], "FeatureCollection");
        assert_eq!(v["features"][0]["geometry"]["coordinates"][0], 104.1);
        assert_eq!(v["features"][0]["properties"]["heading_90"], JsonValue::Null);

        let empty = export_geojson(&[], None).unwrap();
        let v: serde_json::Value = serde_json::from_str(&empty).unwrap();
        assert_eq!(v["features"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn export_rejects_bad_coordinates() {
        let mut p = point("x", 5.0);
        p.lat = f64::NAN;
        assert!(export_geojson(&[p], None).is_err());
    }

    #[test]
    fn quantile_cases() {
        let ids: Vec<String> = (0..100).map(|i| format!("p{i}")).collect();
        let bins = quantile_bins(ids.iter().enumerate().map(|(i, id)| (id.as_str(), i as f64 / 10.0)), 4).unwrap();
        let mut counts = [0; 4];
        bins.labels.values().for_each(|&b| counts[b] += 1);
        assert_eq!(counts, [25; 4]);

        let eight: Vec<String> = (1..=8).map(|i| i.to_string()).collect();
        let bins = quantile_bins(eight.iter().map(|s| (s.as_str(), s.parse::<f64>().unwrap())), 4).unwrap();
        assert_eq!(bins.edges, vec![2.0, 4.0, 6.0]);
        let bins = quantile_bins(eight.iter().map(|s| (s.as_str(), s.parse::<f64>().unwrap())), 8).unwrap();
        assert_eq!(bins.labels.values().copied().collect::<std::collections::BTreeSet<_>>().len(), 8);

        assert!(quantile_bins([("a", 1.0), ("b", 1.0), ("c", 2.0)], 3).is_err());
        assert!(quantile_bins([("a", 1.0), ("b", 2.0)], 1).is_err());
    }

    proptest! {
        #[test]
        fn categories_partition(s in 0.0f64..=10.0) {
            let c = classify(s).unwrap();
            let expected = if s < 3.0 { SafetyCategory::Dangerous } else if s <= 6.0 { SafetyCategory::Neutral } else { SafetyCategory::Safe };
            prop_assert_eq!(c, expected);
        }

        #[test]
        fn bins_monotone(vals in proptest::collection::vec(0.0f64..10.0, 4..60)) {
            let ids: Vec<String> = (0..vals.len()).map(|i| i.to_string()).collect();
            if let Ok(b) = quantile_bins(ids.iter().map(String::as_str).zip(vals.iter().copied()), 4) {
                for (i, a) in vals.iter().enumerate() {
                    for (j, c) in vals.iter().enumerate() {
                        if a > c { prop_assert!(b.labels[&ids[i]] >= b.labels[&ids[j]]); }
                    }
                }
            }
        }

        #[test]
        fn export_round_trips(vals in proptest::collection::vec(0.0f64..=10.0, 0..20)) {
            let pts: Vec<_> = vals.iter().enumerate().map(|(i, &s)| point(&format!("p{i:03}"), s)).collect();
            let text = export_geojson(&pts, None).unwrap();
            let back = import_geojson(&text).unwrap();
            prop_assert_eq!(back.len(), pts.len());
            for ((p, cat), orig) in back.iter().zip(&pts) {
                prop_assert!((p.score.combined - orig.score.combined).abs() <= 1e-9);
                prop_assert_eq!(*cat, classify(p.score.combined).unwrap());
            }
        }
    }
}
