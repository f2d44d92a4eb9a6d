//! Lloyd's k-means over embedded location tags.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::det_embed_text;
use crate::model::{ItemId, ModalityItem};
use crate::rng::SplitMix64;

pub const DEFAULT_K: usize = 30;
pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-9;
const TAG_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("EMPTY_INPUT: no item carries a usable location tag")]
    EmptyInput,
    #[error("BAD_K: k must be at least 1")]
    BadK,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    /// Non-empty clusters, each in input order, ordered by their first member.
    pub clusters: Vec<Vec<ItemId>>,
    /// Items without a usable tag (absent, empty or `none`).
    pub untagged: Vec<ItemId>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++: first centre uniform, then proportional to squared distance
/// from the nearest chosen centre. Needs at least `k` distinct points.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.below(points.len() as u64) as usize].clone()];
    while centroids.len() < k {
        let weights: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = weights.iter().sum();
        let mut target = rng.next_f64() * total;
        let mut chosen = None;
        for (i, w) in weights.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            chosen = Some(i);
            if target < *w {
                break;
            }
            target -= w;
        }
        centroids.push(points[chosen.expect("fewer distinct points than k")].clone());
    }
    centroids
}

/// Groups items by location tag. `k` shrinks to the number of distinct tag
/// embeddings when there are fewer.
pub fn cluster_by_location(items: &[ModalityItem], k: usize, seed: u64) -> Result<Clustering, ClusterError> {
    if k == 0 {
        return Err(ClusterError::BadK);
    }
    let mut tagged = Vec::new();
    let mut untagged = Vec::new();
    for item in items {
        match item.usable_location() {
            Some(tag) => tagged.push((item.id.clone(), det_embed_text(tag, TAG_DIM).values().to_vec())),
            None => untagged.push(item.id.clone()),
        }
    }
    if tagged.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let points: Vec<Vec<f64>> = tagged.iter().map(|(_, p)| p.clone()).collect();
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in &points {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    let k = k.min(distinct.len());

    let mut rng = SplitMix64::stream(seed, "kmeans", 0);
    let mut centroids = seed_centroids(&points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    for _ in 0..MAX_ITERATIONS {
        for (i, p) in points.iter().enumerate() {
            assignment[i] = nearest(p, &centroids).0;
        }
        // Refill empty clusters with the point farthest from its centroid.
        for c in 0..k {
            if assignment.contains(&c) {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| assignment.iter().filter(|&&a| a == assignment[i]).count() > 1)
                .max_by(|&a, &b| {
                    let da = dist2(&points[a], &centroids[assignment[a]]);
                    let db = dist2(&points[b], &centroids[assignment[b]]);
                    da.partial_cmp(&db).expect("finite").then(b.cmp(&a))
                })
                .expect("some cluster has two members when one is empty");
            assignment[far] = c;
            centroids[c] = points[far].clone();
        }
        let mut movement: f64 = 0.0;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assignment).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            let mut mean = vec![0.0; TAG_DIM];
            for m in &members {
                for (acc, v) in mean.iter_mut().zip(m.iter()) {
                    *acc += v;
                }
            }
            for v in &mut mean {
                *v /= members.len() as f64;
            }
            movement = movement.max(dist2(centroid, &mean).sqrt());
            *centroid = mean;
        }
        if movement < TOLERANCE {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignment[i] = nearest(p, &centroids).0;
    }

    let mut clusters: Vec<Vec<ItemId>> = vec![Vec::new(); k];
    for ((id, _), &c) in tagged.iter().zip(&assignment) {
        clusters[c].push(id.clone());
    }
    clusters.retain(|c| !c.is_empty());
    let position = |id: &ItemId| tagged.iter().position(|(t, _)| t == id).expect("member");
    clusters.sort_by_key(|c| position(&c[0]));
    Ok(Clustering { clusters, untagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModalityKind;
    use std::collections::BTreeMap;

    fn tagged(n: usize, tags: usize) -> Vec<ModalityItem> {
        (0..n)
            .map(|i| ModalityItem::new(format!("x{i}"), ModalityKind::Image, "c").with_location(format!("place{}", i % tags)))
            .collect()
    }

    #[test]
    fn k_one_is_a_single_cluster() {
        let c = cluster_by_location(&tagged(20, 4), 1, 0).unwrap();
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.clusters[0].len(), 20);
    }

    #[test]
    fn tag_pure_with_k_equal_to_tag_count() {
        let items = tagged(120, 12);
        let c = cluster_by_location(&items, 12, 5).unwrap();
        assert_eq!(c.clusters.len(), 12);
        let tag_of: BTreeMap<_, _> = items.iter().map(|i| (i.id.clone(), i.location_tag.clone())).collect();
        for cluster in &c.clusters {
            assert!(cluster.iter().all(|id| tag_of[id] == tag_of[&cluster[0]]));
        }
    }

    #[test]
    fn untagged_items_are_set_aside() {
        let mut items = tagged(4, 2);
        items.push(ModalityItem::new("n", ModalityKind::Audio, "hum").with_location("none"));
        items.push(ModalityItem::new("m", ModalityKind::Audio, "hum"));
        let c = cluster_by_location(&items, 30, 0).unwrap();
        assert_eq!(c.untagged, [ItemId::new("n"), ItemId::new("m")]);
        assert_eq!(c.clusters.iter().map(Vec::len).sum::<usize>(), 4);
        assert_eq!(cluster_by_location(&items[4..], 3, 0).unwrap_err(), ClusterError::EmptyInput);
    }

    #[test]
    fn same_seed_same_partition() {
        let items: Vec<ModalityItem> = (0..60)
            .map(|i| ModalityItem::new(format!("y{i}"), ModalityKind::Image, "c").with_location(format!("city park {}", i % 9)))
            .collect();
        assert_eq!(cluster_by_location(&items, 4, 11).unwrap(), cluster_by_location(&items, 4, 11).unwrap());
    }
}
