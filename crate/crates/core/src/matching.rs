//! Closed-set identification by cosine distance and CMC / ROC evaluation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::FeatureVector;

/// Threshold count used for ROC curves.
pub const DEFAULT_ROC_THRESHOLDS: usize = 1000;

#[derive(Debug, Error)]
pub enum MatchingError {
    #[error("cosine distance is undefined for a zero vector")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("probe {probe}: subject {subject:?} is not enrolled in the gallery")]
    Accounting { probe: usize, subject: String },
    #[error("no results to evaluate")]
    NoResults,
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine_from_parts(dot: f64, ss_a: f64, ss_b: f64) -> f64 {
    // sqrt(ss_a·ss_b) rather than ‖a‖·‖b‖ so that d(a, a) is exactly 0
    (1.0 - dot / (ss_a * ss_b).sqrt()).clamp(0.0, 2.0)
}

/// `1 − a·b / (‖a‖‖b‖)`, in `[0, 2]`.
pub fn cosine_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64, MatchingError> {
    if a.dim() != b.dim() {
        return Err(MatchingError::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (sa, sb) = (sum_sq(a.values()), sum_sq(b.values()));
    if sa == 0.0 || sb == 0.0 {
        return Err(MatchingError::ZeroNorm);
    }
    Ok(cosine_from_parts(dot(a.values(), b.values()), sa, sb))
}

/// Enrolled `(subject, feature)` pairs, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Gallery {
    pub fn new(entries: Vec<(String, FeatureVector)>) -> Result<Self, MatchingError> {
        let dim = entries.first().ok_or(MatchingError::EmptyGallery)?.1.dim();
        let mut ids = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len() * dim);
        let mut norms = Vec::with_capacity(entries.len());
        for (id, f) in entries {
            if f.dim() != dim {
                return Err(MatchingError::Dimension {
                    expected: dim,
                    got: f.dim(),
                });
            }
            let ss = sum_sq(f.values());
            if ss == 0.0 {
                return Err(MatchingError::ZeroNorm);
            }
            ids.push(id);
            data.extend_from_slice(f.values());
            norms.push(ss);
        }
        Ok(Self {
            ids,
            dim,
            data,
            sum_sq: norms,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, subject: &str) -> bool {
        self.ids.iter().any(|id| id == subject)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    /// Position in the gallery.
    pub index: usize,
    pub subject_id: String,
    pub distance: f64,
}

/// Every gallery entry, nearest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMatches {
    pub matches: Vec<Match>,
}

impl RankedMatches {
    /// 1-based rank of the first entry for `subject`.
    pub fn rank_of(&self, subject: &str) -> Option<usize> {
        self.matches
            .iter()
            .position(|m| m.subject_id == subject)
            .map(|p| p + 1)
    }

    pub fn best(&self) -> &Match {
        &self.matches[0]
    }
}

/// Ranks the whole gallery by cosine distance; equal distances keep gallery order.
pub fn identify(probe: &FeatureVector, gallery: &Gallery) -> Result<RankedMatches, MatchingError> {
    if probe.dim() != gallery.dim {
        return Err(MatchingError::Dimension {
            expected: gallery.dim,
            got: probe.dim(),
        });
    }
    let sp = sum_sq(probe.values());
    if sp == 0.0 {
        return Err(MatchingError::ZeroNorm);
    }
    let mut matches: Vec<Match> = gallery
        .data
        .chunks_exact(gallery.dim)
        .zip(&gallery.sum_sq)
        .enumerate()
        .map(|(index, (g, &sg))| Match {
            index,
            subject_id: gallery.ids[index].clone(),
            distance: cosine_from_parts(dot(probe.values(), g), sp, sg),
        })
        .collect();
    matches.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    Ok(RankedMatches { matches })
}

/// `curve[r−1]` is the fraction of probes whose subject appears in the top `r`.
pub fn cmc(
    results: &[(String, RankedMatches)],
    max_rank: usize,
) -> Result<Vec<f64>, MatchingError> {
    if results.is_empty() {
        return Err(MatchingError::NoResults);
    }
    let mut hits = vec![0usize; max_rank];
    for (probe, (truth, ranked)) in results.iter().enumerate() {
        let rank = ranked
            .rank_of(truth)
            .ok_or_else(|| MatchingError::Accounting {
                probe,
                subject: truth.clone(),
            })?;
        for h in hits.iter_mut().skip(rank - 1) {
            *h += 1;
        }
    }
    let n = results.len() as f64;
    Ok(hits.into_iter().map(|h| h as f64 / n).collect())
}

/// Genuine and impostor distances from ranked results.
pub fn score_split(results: &[(String, RankedMatches)]) -> (Vec<f64>, Vec<f64>) {
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for (truth, ranked) in results {
        for m in &ranked.matches {
            if &m.subject_id == truth {
                genuine.push(m.distance);
            } else {
                impostor.push(m.distance);
            }
        }
    }
    (genuine, impostor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    /// Fraction of impostor distances ≤ threshold.
    pub far: f64,
    /// Fraction of genuine distances ≤ threshold.
    pub vr: f64,
}

/// Verification curve over `thresholds` evenly spaced values spanning the
/// pooled distance range. Empty when either list is empty.
pub fn roc(genuine: &[f64], impostor: &[f64], thresholds: usize) -> Vec<RocPoint> {
    if genuine.is_empty() || impostor.is_empty() || thresholds == 0 {
        return Vec::new();
    }
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (g, i) = (sorted(genuine), sorted(impostor));
    let lo = g[0].min(i[0]);
    let hi = g[g.len() - 1].max(i[i.len() - 1]);
    let frac = |s: &[f64], t: f64| s.partition_point(|&x| x <= t) as f64 / s.len() as f64;
    (0..thresholds)
        .map(|k| {
            let threshold = if thresholds == 1 || k == thresholds - 1 {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (thresholds - 1) as f64
            };
            RocPoint {
                threshold,
                far: frac(&i, threshold),
                vr: frac(&g, threshold),
            }
        })
        .collect()
}

pub fn cmc_csv(curve: &[f64]) -> String {
    let mut s = String::from("rank,accuracy\n");
    for (r, a) in curve.iter().enumerate() {
        writeln!(s, "{},{}", r + 1, a).unwrap();
    }
    s
}

pub fn roc_csv(curve: &[RocPoint]) -> String {
    let mut s = String::from("far,vr\n");
    for p in curve {
        writeln!(s, "{},{}", p.far, p.vr).unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub probes: usize,
    pub gallery_size: usize,
    pub rank1: f64,
    pub rank2: f64,
}

impl EvaluationSummary {
    pub fn from_cmc(curve: &[f64], probes: usize, gallery_size: usize) -> Self {
        let at = |r: usize| curve.get(r).or(curve.last()).copied().unwrap_or(0.0);
        Self {
            probes,
            gallery_size,
            rank1: at(0),
            rank2: at(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn gallery(items: &[(&str, &[f64])]) -> Gallery {
        Gallery::new(
            items
                .iter()
                .map(|(id, v)| (id.to_string(), fv(v)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = fv(&[0.3, -1.7, 2.2]);
        assert_eq!(cosine_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(
            cosine_distance(&fv(&[1.0, 0.0]), &fv(&[0.0, 3.0])).unwrap(),
            1.0
        );
        let neg = fv(&[-0.3, 1.7, -2.2]);
        assert_eq!(cosine_distance(&a, &neg).unwrap(), 2.0);
        assert!(matches!(
            cosine_distance(&a, &fv(&[0.0; 3])),
            Err(MatchingError::ZeroNorm)
        ));
    }

    #[test]
    fn identify_examples() {
        let g = gallery(&[
            ("a", &[1.0, 0.0, 0.0]),
            ("b", &[0.0, 1.0, 0.0]),
            ("c", &[0.0, 0.0, 1.0]),
        ]);
        let r = identify(&fv(&[0.0, 1.0, 0.0]), &g).unwrap();
        assert_eq!(r.best().index, 1);
        assert_eq!(r.best().distance, 0.0);
        // cosines: 0.9/√0.82, 0.1/√0.82, 0
        let r = identify(&fv(&[0.9, 0.1, 0.0]), &g).unwrap();
        let ids: Vec<_> = r.matches.iter().map(|m| m.subject_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!((r.matches[0].distance - (1.0 - 0.9 / 0.82f64.sqrt())).abs() < 1e-15);

        let tie = gallery(&[("x", &[0.0, 1.0]), ("y", &[2.0, 2.0]), ("z", &[2.0, 2.0])]);
        let r = identify(&fv(&[1.0, 1.0]), &tie).unwrap();
        assert_eq!(r.matches[0].subject_id, "y");
        assert_eq!(r.matches[1].subject_id, "z");
    }

    #[test]
    fn cmc_examples() {
        let g = gallery(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let r1 = identify(&fv(&[1.0, 0.1]), &g).unwrap();
        let r2 = identify(&fv(&[1.0, 0.2]), &g).unwrap();
        let curve = cmc(&[("a".into(), r1.clone()), ("b".into(), r2)], 2).unwrap();
        assert_eq!(curve, vec![0.5, 1.0]);
        assert_eq!(cmc(&[("a".into(), r1.clone())], 2).unwrap(), vec![1.0, 1.0]);
        match cmc(&[("a".into(), r1.clone()), ("q".into(), r1)], 2) {
            Err(MatchingError::Accounting { probe: 1, subject }) => assert_eq!(subject, "q"),
            r => panic!("unexpected {r:?}"),
        }
    }

    #[test]
    fn cmc_matches_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let ids = ["s0", "s1", "s2", "s3", "s4", "s1", "s3"];
        let g = Gallery::new(
            ids.iter()
                .map(|id| {
                    (
                        id.to_string(),
                        fv(&[rng.random(), rng.random(), rng.random()]),
                    )
                })
                .collect(),
        )
        .unwrap();
        let results: Vec<_> = (0..30)
            .map(|k| {
                let p = fv(&[rng.random(), rng.random(), rng.random()]);
                (format!("s{}", k % 5), identify(&p, &g).unwrap())
            })
            .collect();
        let curve = cmc(&results, 7).unwrap();
        for r in 1..=7 {
            let hits = results
                .iter()
                .filter(|(t, rm)| rm.matches[..r].iter().any(|m| &m.subject_id == t))
                .count();
            assert_eq!(curve[r - 1], hits as f64 / 30.0);
        }
        assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(curve[6], 1.0);
    }

    #[test]
    fn roc_cases() {
        let c = roc(&[0.1, 0.2], &[0.8, 0.9], 1000);
        assert!(c.iter().any(|p| p.vr == 1.0 && p.far == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        let i: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        let c = roc(&g, &i, 50);
        assert_eq!(c.len(), 50);
        for p in &c {
            let vr = g.iter().filter(|&&x| x <= p.threshold).count() as f64 / 20.0;
            let far = i.iter().filter(|&&x| x <= p.threshold).count() as f64 / 20.0;
            assert_eq!((p.vr, p.far), (vr, far));
        }
        assert!(c
            .windows(2)
            .all(|w| w[0].far <= w[1].far && w[0].vr <= w[1].vr));
        assert_eq!((c[49].far, c[49].vr), (1.0, 1.0));
        let same = roc(&g, &g, 100);
        assert!(same.iter().all(|p| p.vr == p.far));
    }

    #[test]
    fn csv_and_summary() {
        assert_eq!(cmc_csv(&[0.5, 1.0]), "rank,accuracy\n1,0.5\n2,1\n");
        let s = EvaluationSummary::from_cmc(&[0.75], 4, 2);
        assert_eq!((s.rank1, s.rank2), (0.75, 0.75));
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 5),
            b in proptest::collection::vec(-10.0f64..10.0, 5),
            la in 0.01f64..100.0,
            lb in 0.01f64..100.0,
        ) {
            prop_assume!(sum_sq(&a) > 1e-6 && sum_sq(&b) > 1e-6);
            let (fa, fb) = (fv(&a), fv(&b));
            let d = cosine_distance(&fa, &fb).unwrap();
            prop_assert_eq!(d, cosine_distance(&fb, &fa).unwrap());
            prop_assert!((0.0..=2.0).contains(&d));
            let sa = fv(&a.iter().map(|x| x * la).collect::<Vec<_>>());
            let sb = fv(&b.iter().map(|x| x * lb).collect::<Vec<_>>());
            prop_assert!((cosine_distance(&sa, &sb).unwrap() - d).abs() < 1e-12);
        }

        #[test]
        fn identify_is_a_permutation(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Gallery::new((0..9).map(|k| (format!("id{k}"), fv(&[rng.random::<f64>() + 0.1, rng.random()]))).collect()).unwrap();
            let r = identify(&fv(&[rng.random::<f64>() + 0.1, rng.random()]), &g).unwrap();
            let mut idx: Vec<_> = r.matches.iter().map(|m| m.index).collect();
            prop_assert!(r.matches.windows(2).all(|w| w[0].distance <= w[1].distance));
            idx.sort();
            prop_assert_eq!(idx, (0..9).collect::<Vec<_>>());
        }
    }
}
