//! Exact nearest neighbors by linear scan, and the evaluation metrics.

use std::collections::HashSet;

use crate::dataset::{Metric, VectorDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::search::Neighbor;

/// Exact `k` nearest ids of `q` by full scan, ties by ascending id.
pub fn knn_exact(ds: &VectorDataset, q: &[f32], k: usize, metric: Metric) -> Result<Vec<Neighbor>> {
    ds.check_query(q)?;
    if k > ds.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the dataset size {}",
            ds.len()
        )));
    }
    Ok(scan(ds, q, k, metric))
}

fn scan(ds: &VectorDataset, q: &[f32], k: usize, metric: Metric) -> Vec<Neighbor> {
    if k == 0 {
        return Vec::new();
    }
    // sorted ascending by (distance, id); the worst kept entry is last
    let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
    for (id, x) in ds.iter().enumerate() {
        let d = metric.eval(q, x);
        if best.len() == k {
            let worst = best[k - 1];
            // ids arrive ascending, so an equal distance never displaces
            if d.total_cmp(&worst.0).is_ge() {
                continue;
            }
            best.pop();
        }
        let pos = best.partition_point(|e| e.0.total_cmp(&d).is_le());
        best.insert(pos, (d, id as u32));
    }
    best.into_iter()
        .map(|(distance, id)| Neighbor { id, distance })
        .collect()
}

/// Exact top-`k` ids for every query.
pub fn ground_truth(
    base: &VectorDataset,
    queries: &VectorDataset,
    k: usize,
    metric: Metric,
    exec: Exec,
) -> Result<Vec<Vec<u32>>> {
    if k > base.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the dataset size {}",
            base.len()
        )));
    }
    if !queries.is_empty() {
        base.check_query(queries.get(0))?;
    }
    Ok(exec.map(queries.len(), |i| {
        scan(base, queries.get(i), k, metric)
            .into_iter()
            .map(|n| n.id)
            .collect()
    }))
}

/// `|pred ∩ truth| / |truth|`.
pub fn recall_at(pred: &[u32], truth: &[u32]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("recall needs a nonempty truth list"));
    }
    let truth: HashSet<u32> = truth.iter().copied().collect();
    let pred: HashSet<u32> = pred.iter().copied().collect();
    Ok(pred.intersection(&truth).count() as f64 / truth.len() as f64)
}

/// `linear_cost / method_cost`; costs in any shared unit.
pub fn speedup(linear_cost: f64, method_cost: f64) -> Result<f64> {
    if !(linear_cost > 0.0 && method_cost > 0.0) {
        return Err(Error::invalid(format!(
            "costs must be positive, got {linear_cost} and {method_cost}"
        )));
    }
    Ok(linear_cost / method_cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recall_examples() {
        let truth: Vec<u32> = (0..100).collect();
        assert_eq!(recall_at(&truth, &truth).unwrap(), 1.0);
        let disjoint: Vec<u32> = (100..200).collect();
        assert_eq!(recall_at(&disjoint, &truth).unwrap(), 0.0);
        let half: Vec<u32> = (50..150).collect();
        assert_eq!(recall_at(&half, &truth).unwrap(), 0.5);
        assert!(recall_at(&[1, 2], &[]).is_err());
    }

    #[test]
    fn speedup_examples() {
        assert!((speedup(1_000_000.0, 16_667.0).unwrap() - 60.0).abs() < 1e-2);
        assert_eq!(speedup(5.0, 5.0).unwrap(), 1.0);
        assert!(speedup(0.0, 1.0).is_err());
        assert!(speedup(1.0, -1.0).is_err());
    }

    #[test]
    fn knn_finds_self_first_and_rejects_large_k() {
        let ds = VectorDataset::from_rows(&[vec![0f32, 0.], vec![1., 1.], vec![5., 5.]]).unwrap();
        let r = knn_exact(&ds, &[1., 1.], 1, Metric::L2).unwrap();
        assert_eq!(r[0], Neighbor { id: 1, distance: 0.0 });
        let all = knn_exact(&ds, &[4., 4.], 3, Metric::L2).unwrap();
        assert_eq!(all.iter().map(|n| n.id).collect::<Vec<_>>(), vec![2, 1, 0]);
        assert!(knn_exact(&ds, &[0., 0.], 4, Metric::L2).is_err());
        assert!(knn_exact(&ds, &[0.], 1, Metric::L2).is_err());
    }

    #[test]
    fn knn_ties_by_id() {
        let ds = VectorDataset::from_flat(1, vec![2.0, -1.0, 1.0, -2.0]).unwrap();
        let r = knn_exact(&ds, &[0.0], 4, Metric::L1).unwrap();
        assert_eq!(r.iter().map(|n| n.id).collect::<Vec<_>>(), vec![1, 2, 0, 3]);
    }

    proptest! {
        #[test]
        fn recall_monotone_under_adding_truth(truth in prop::collection::hash_set(0u32..500, 1..50),
                                              noise in prop::collection::vec(500u32..1000, 0..50)) {
            let truth: Vec<u32> = truth.into_iter().collect();
            prop_assert_eq!(recall_at(&truth, &truth).unwrap(), 1.0);
            let mut pred = noise.clone();
            let mut last = recall_at(&pred, &truth).unwrap();
            for &t in &truth {
                pred.push(t);
                let r = recall_at(&pred, &truth).unwrap();
                prop_assert!(r >= last);
                last = r;
            }
            prop_assert_eq!(last, 1.0);
        }

        #[test]
        fn speedup_is_multiplicative(a in 1e-3f64..1e9, b in 1e-3f64..1e9, c in 1e-3f64..1e9) {
            let lhs = speedup(a, b).unwrap() * speedup(b, c).unwrap();
            let rhs = speedup(a, c).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
            prop_assert_eq!(speedup(a, a).unwrap(), 1.0);
        }
    }
}
