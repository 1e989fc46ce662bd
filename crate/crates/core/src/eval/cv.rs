//! Leave-one-seizure-out cross-validation plans.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out_seizure: usize,
    pub train_seizures: Vec<usize>,
    pub validation_part: usize,
    pub train_parts: Vec<usize>,
}

/// `parts[k]` is a list of contiguous `(start_s, end_s)` intervals; together
/// the parts partition the interictal pool into `n` pieces of equal duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub n: usize,
    pub seed: u64,
    pub parts: Vec<Vec<(f64, f64)>>,
    pub folds: Vec<Fold>,
}

impl CvPlan {
    /// Part index containing time `t`, if any.
    pub fn part_of(&self, t: f64) -> Option<usize> {
        self.parts
            .iter()
            .position(|p| p.iter().any(|&(a, b)| a <= t && t < b))
    }
}

/// Cuts the (sorted, disjoint) interictal pool into `n_seizures` chronological
/// pieces of equal total duration and assigns them to folds by a seeded shuffle.
pub fn make_cv_plan(n_seizures: usize, interictal_pool: &[(f64, f64)], seed: u64) -> Result<CvPlan> {
    if n_seizures < 2 {
        return Err(Error::Argument(format!(
            "leave-one-out needs at least 2 seizures, got {n_seizures}"
        )));
    }
    let mut pool: Vec<(f64, f64)> = interictal_pool.iter().copied().filter(|(a, b)| b > a).collect();
    pool.sort_by(|x, y| x.0.total_cmp(&y.0));
    if pool.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(Error::Argument("interictal pool intervals overlap".into()));
    }
    let total: f64 = pool.iter().map(|(a, b)| b - a).sum();
    let piece = total / n_seizures as f64;

    let mut chunks: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_seizures];
    let mut k = 0;
    let mut filled = 0.0;
    for &(a, b) in &pool {
        let mut start = a;
        while start < b {
            let room = if k + 1 == n_seizures { f64::INFINITY } else { piece - filled };
            let end = (start + room).min(b);
            if end <= start {
                k += 1;
                filled = 0.0;
                continue;
            }
            chunks[k].push((start, end));
            filled += end - start;
            start = end;
            if k + 1 < n_seizures && filled >= piece {
                k += 1;
                filled = 0.0;
            }
        }
    }

    let mut order: Vec<usize> = (0..n_seizures).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = (0..n_seizures)
        .map(|i| Fold {
            held_out_seizure: i,
            train_seizures: (0..n_seizures).filter(|&j| j != i).collect(),
            validation_part: order[i],
            train_parts: (0..n_seizures).filter(|&j| j != order[i]).collect(),
        })
        .collect();
    Ok(CvPlan { n: n_seizures, seed, parts: chunks, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn five_folds_each_seizure_once() {
        let plan = make_cv_plan(5, &[(0.0, 3600.0), (7200.0, 9000.0)], 3).unwrap();
        assert_eq!(plan.folds.len(), 5);
        let mut held: Vec<usize> = plan.folds.iter().map(|f| f.held_out_seizure).collect();
        held.sort();
        assert_eq!(held, vec![0, 1, 2, 3, 4]);
        let mut parts: Vec<usize> = plan.folds.iter().map(|f| f.validation_part).collect();
        parts.sort();
        assert_eq!(parts, vec![0, 1, 2, 3, 4]);
        for p in &plan.parts {
            let d: f64 = p.iter().map(|(a, b)| b - a).sum();
            assert!((d - 1080.0).abs() < 1e-9);
        }
        assert_eq!(plan.part_of(100.0), Some(0));
        assert_eq!(plan.part_of(5000.0), None);
    }

    #[test]
    fn seeded_and_validated() {
        let pool = [(0.0, 1000.0)];
        assert_eq!(make_cv_plan(4, &pool, 9).unwrap(), make_cv_plan(4, &pool, 9).unwrap());
        assert!(make_cv_plan(1, &pool, 9).is_err());
    }

    proptest! {
        #[test]
        fn parts_partition_pool(
            lens in prop::collection::vec((1.0f64..5000.0, 0.0f64..3000.0), 1..6),
            n in 2usize..8,
            seed in any::<u64>(),
        ) {
            let mut t = 0.0;
            let mut pool = Vec::new();
            for (len, gap) in lens {
                t += gap;
                pool.push((t, t + len));
                t += len;
            }
            let plan = make_cv_plan(n, &pool, seed).unwrap();
            let mut pieces: Vec<(f64, f64)> = plan.parts.iter().flatten().copied().collect();
            pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
            // Pieces tile the pool exactly.
            let mut merged: Vec<(f64, f64)> = Vec::new();
            for (a, b) in pieces {
                match merged.last_mut() {
                    Some(last) if last.1 == a => last.1 = b,
                    _ => merged.push((a, b)),
                }
            }
            prop_assert_eq!(merged, pool);
            let mut held: Vec<usize> = plan.folds.iter().map(|f| f.held_out_seizure).collect();
            held.dedup();
            prop_assert_eq!(held.len(), n);
            for f in &plan.folds {
                prop_assert_eq!(f.train_parts.len(), n - 1);
                prop_assert!(!f.train_parts.contains(&f.validation_part));
            }
        }
    }
}
