//! Retrieval evaluation: cosine ranking of an image gallery against text
//! queries, top-k accuracy, and reID-style (interpolation-free) mAP.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::exec;

/// Gallery image features and query text features with identity labels.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    pub gallery: Vec<Vec<f64>>,
    pub gallery_labels: Vec<usize>,
    pub queries: Vec<Vec<f64>>,
    pub query_labels: Vec<usize>,
}

impl RetrievalIndex {
    pub fn validate(&self) -> Result<()> {
        if self.gallery.is_empty() || self.queries.is_empty() {
            return Err(CoreError::Argument(
                "retrieval index needs a non-empty gallery and queries".to_string(),
            ));
        }
        for label in &self.query_labels {
            if !self.gallery_labels.contains(label) {
                return Err(CoreError::Argument(format!(
                    "query identity {label} has no gallery image"
                )));
            }
        }
        Ok(())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut d = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        d += x * y;
        na += x * x;
        nb += y * y;
    }
    d / (na.sqrt() * nb.sqrt())
}

/// Gallery indices sorted by descending cosine similarity to the query;
/// ties break toward the lower gallery index.
pub fn rank(query: &[f64], gallery: &[Vec<f64>]) -> Vec<usize> {
    let mut sims: Vec<(usize, f64)> = gallery
        .iter()
        .enumerate()
        .map(|(i, g)| (i, cosine(query, g)))
        .collect();
    sims.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    sims.into_iter().map(|(i, _)| i).collect()
}

/// Fraction of queries whose top-k ranked images contain at least one
/// same-identity image, for every requested k.
pub fn topk_accuracy(index: &RetrievalIndex, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    index.validate()?;
    let n = index.gallery.len();
    for &k in ks {
        if k == 0 || k > n {
            return Err(CoreError::Argument(format!(
                "k = {k} outside gallery size {n}"
            )));
        }
    }
    let hits = exec::map_indexed(index.queries.len(), |qi| {
        let order = rank(&index.queries[qi], &index.gallery);
        // Rank of the first same-identity image.
        order
            .iter()
            .position(|&g| index.gallery_labels[g] == index.query_labels[qi])
            .expect("validated: every query identity is in the gallery")
    });
    let q = index.queries.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let correct = hits.iter().filter(|&&first| first < k).count();
            (k, correct as f64 / q)
        })
        .collect())
}

/// Mean over queries of interpolation-free average precision across all
/// gallery positives.
pub fn mean_ap(index: &RetrievalIndex) -> Result<f64> {
    index.validate()?;
    let aps = exec::map_indexed(index.queries.len(), |qi| {
        average_precision(
            &rank(&index.queries[qi], &index.gallery),
            &index.gallery_labels,
            index.query_labels[qi],
        )
    });
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

fn average_precision(order: &[usize], gallery_labels: &[usize], query_label: usize) -> f64 {
    let mut positives = 0usize;
    let mut precision_sum = 0.0;
    for (r, &g) in order.iter().enumerate() {
        if gallery_labels[g] == query_label {
            positives += 1;
            precision_sum += positives as f64 / (r + 1) as f64;
        }
    }
    debug_assert!(positives > 0, "validated: every query has a positive");
    precision_sum / positives as f64
}

/// The retrieval report written by the `eval` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalReport {
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R5")]
    pub r5: f64,
    #[serde(rename = "R10")]
    pub r10: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
}

/// R@1/5/10 and mAP in one pass; requested ks clip to the gallery size.
pub fn evaluate(index: &RetrievalIndex) -> Result<RetrievalReport> {
    let n = index.gallery.len();
    let ks: Vec<usize> = [1usize, 5, 10].iter().map(|&k| k.min(n)).collect();
    let top = topk_accuracy(index, &ks)?;
    Ok(RetrievalReport {
        r1: top[&ks[0]],
        r5: top[&ks[1]],
        r10: top[&ks[2]],
        map: mean_ap(index)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_index(seed: u64, n: usize, q: usize, dim: usize, classes: usize) -> RetrievalIndex {
        let mut rng = crate::rng::rng_for(seed, "eval_rand", &[]);
        let mut gallery_labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        use rand::seq::SliceRandom;
        gallery_labels.shuffle(&mut rng);
        let gen = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        RetrievalIndex {
            gallery: (0..n).map(|_| gen(&mut rng)).collect(),
            gallery_labels,
            queries: (0..q).map(|_| gen(&mut rng)).collect(),
            query_labels: (0..q).map(|i| i % classes).collect(),
        }
    }

    #[test]
    fn rank_orders_by_similarity() {
        let q = vec![1.0, 0.0];
        let gallery = vec![
            vec![1.0, 0.0],  // cos 1
            vec![-1.0, 0.0], // cos -1
            vec![0.0, 1.0],  // cos 0
        ];
        assert_eq!(rank(&q, &gallery), vec![0, 2, 1]);
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let q = vec![1.0, 0.0];
        let gallery = vec![vec![2.0, 0.0], vec![1.0, 0.0], vec![0.5, 0.0]];
        // All cosine 1.0.
        assert_eq!(rank(&q, &gallery), vec![0, 1, 2]);
    }

    #[test]
    fn rank_matches_naive_sort_oracle() {
        for seed in 0..10u64 {
            let idx = random_index(seed, 20, 1, 8, 4);
            let got = rank(&idx.queries[0], &idx.gallery);
            // Oracle: stable selection sort on (similarity, index).
            let mut sims: Vec<f64> = idx
                .gallery
                .iter()
                .map(|g| cosine(&idx.queries[0], g))
                .collect();
            let mut want = Vec::new();
            let mut used = vec![false; sims.len()];
            for _ in 0..sims.len() {
                let mut best: Option<usize> = None;
                for i in 0..sims.len() {
                    if used[i] && best != Some(i) {
                        continue;
                    }
                    if !used[i] && best.is_none_or(|b| sims[i] > sims[b]) {
                        best = Some(i);
                    }
                }
                let b = best.unwrap();
                used[b] = true;
                want.push(b);
                sims[b] = f64::NEG_INFINITY;
            }
            assert_eq!(got, want, "seed {seed}");
        }
    }

    #[test]
    fn topk_trivial_cases() {
        // Single query, ground truth at rank 1.
        let idx = RetrievalIndex {
            gallery: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            gallery_labels: vec![7, 3],
            queries: vec![vec![1.0, 0.0]],
            query_labels: vec![7],
        };
        let acc = topk_accuracy(&idx, &[1, 2]).unwrap();
        assert_eq!(acc[&1], 1.0);
        assert_eq!(acc[&2], 1.0);

        // Ground truth first appears at rank 3.
        let idx = RetrievalIndex {
            gallery: vec![
                vec![1.0, 0.0, 0.0],
                vec![0.9, 0.1, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.0, 1.0, 0.0],
            ],
            gallery_labels: vec![0, 0, 1, 1],
            queries: vec![vec![1.0, 0.0, 0.05]],
            query_labels: vec![1],
        };
        let acc = topk_accuracy(&idx, &[1, 3, 4]).unwrap();
        assert_eq!(acc[&1], 0.0);
        assert_eq!(acc[&3], 1.0);
        assert_eq!(acc[&4], 1.0);
    }

    #[test]
    fn topk_rejects_out_of_range_k() {
        let idx = random_index(0, 5, 2, 4, 2);
        assert!(topk_accuracy(&idx, &[0]).is_err());
        assert!(topk_accuracy(&idx, &[6]).is_err());
    }

    #[test]
    fn topk_is_monotone_and_saturates() {
        let idx = random_index(3, 30, 20, 8, 5);
        let ks: Vec<usize> = (1..=30).collect();
        let acc = topk_accuracy(&idx, &ks).unwrap();
        for k in 2..=30usize {
            assert!(acc[&k] >= acc[&(k - 1)]);
        }
        assert_eq!(acc[&30], 1.0, "R@N must be 1 when every identity is present");
    }

    #[test]
    fn ap_hand_example() {
        // Positives at ranks 1 and 3 of a 5-item gallery:
        // AP = (1/1 + 2/3) / 2.
        let order = vec![0, 1, 2, 3, 4];
        let labels = vec![9, 0, 9, 0, 0];
        let ap = average_precision(&order, &labels, 9);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((ap - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn ap_is_one_when_positives_lead() {
        let order = vec![2, 0, 1];
        let labels = vec![5, 5, 1];
        // order puts gallery 2 (label 1) first; query label 1.
        assert_eq!(average_precision(&order, &labels, 1), 1.0);
    }

    #[test]
    fn map_matches_brute_force_oracle() {
        for seed in 0..50u64 {
            let idx = random_index(seed, 100, 50, 6, 7);
            let got = mean_ap(&idx).unwrap();

            // Quadratic oracle: recompute similarities, sort pairs, walk.
            let mut total = 0.0;
            for (qi, q) in idx.queries.iter().enumerate() {
                let mut pairs: Vec<(f64, usize)> = idx
                    .gallery
                    .iter()
                    .enumerate()
                    .map(|(g, feat)| (cosine(q, feat), g))
                    .collect();
                pairs.sort_by(|a, b| {
                    b.0.partial_cmp(&a.0)
                        .unwrap()
                        .then(a.1.cmp(&b.1))
                });
                let mut hits = 0usize;
                let mut acc = 0.0;
                for (r, &(_, g)) in pairs.iter().enumerate() {
                    if idx.gallery_labels[g] == idx.query_labels[qi] {
                        hits += 1;
                        acc += hits as f64 / (r + 1) as f64;
                    }
                }
                total += acc / hits as f64;
            }
            let want = total / idx.queries.len() as f64;
            assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
        }
    }

    #[test]
    fn metrics_are_scale_invariant() {
        let idx = random_index(11, 40, 20, 8, 5);
        let base_top = topk_accuracy(&idx, &[1, 5, 10]).unwrap();
        let base_map = mean_ap(&idx).unwrap();
        let mut scaled = idx.clone();
        for q in &mut scaled.queries {
            for v in q.iter_mut() {
                *v *= 37.5;
            }
        }
        assert_eq!(topk_accuracy(&scaled, &[1, 5, 10]).unwrap(), base_top);
        assert_eq!(mean_ap(&scaled).unwrap(), base_map);
    }

    #[test]
    fn validation_catches_orphan_queries() {
        let idx = RetrievalIndex {
            gallery: vec![vec![1.0]],
            gallery_labels: vec![0],
            queries: vec![vec![1.0]],
            query_labels: vec![1],
        };
        assert!(mean_ap(&idx).is_err());
        assert!(topk_accuracy(&idx, &[1]).is_err());
    }
}
