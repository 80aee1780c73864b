//! All-ranking top-N evaluation: every item except the user's training
//! positives is scored and sorted, and Recall/NDCG/HR/Precision are
//! averaged over the users that have at least one test positive.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::SplitDataset;
use crate::matrix::{dot, Matrix};
use crate::model::{self, AlignedBipartite, ModelConfig, PropagationSnapshot};
use crate::params::ParameterSet;
use crate::vrkg::VrkgPartition;

pub const DEFAULT_CUTOFFS: [usize; 4] = [1, 5, 10, 20];

/// Averaged metrics at one cutoff.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub cutoff: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
    pub precision: f64,
}

/// Averaged metrics over all evaluated users, plus run metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    /// Users with at least one test positive.
    pub users_evaluated: usize,
    /// Evaluated users whose interactions all fell into the test split;
    /// they are ranked with their raw ID embedding.
    pub cold_users: usize,
}

impl MetricsReport {
    pub fn row_at(&self, cutoff: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.cutoff == cutoff)
    }
}

/// Ranks all items for one user from a dense per-item score slice,
/// excluding the user's training positives. Descending score, ties broken
/// by ascending item id.
pub fn rank_items(scores: &[f64], train_positives: &[u32]) -> Vec<u32> {
    let mut ranked: Vec<u32> = (0..scores.len() as u32)
        .filter(|i| train_positives.binary_search(i).is_err())
        .collect();
    ranked.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ranked
}

/// Per-user metric values for each cutoff: recall, ndcg, hr, precision.
/// `test_positives` must be sorted and nonempty.
pub fn compute_metrics(
    ranked: &[u32],
    test_positives: &[u32],
    cutoffs: &[usize],
) -> Vec<MetricsRow> {
    debug_assert!(!test_positives.is_empty());
    let pos_count = test_positives.len();
    cutoffs
        .iter()
        .map(|&n| {
            let top = &ranked[..n.min(ranked.len())];
            let mut hits = 0usize;
            let mut dcg = 0.0;
            for (rank0, item) in top.iter().enumerate() {
                if test_positives.binary_search(item).is_ok() {
                    hits += 1;
                    dcg += 1.0 / ((rank0 as f64 + 2.0).log2());
                }
            }
            let ideal = n.min(pos_count);
            let idcg: f64 = (0..ideal).map(|r| 1.0 / ((r as f64 + 2.0).log2())).sum();
            MetricsRow {
                cutoff: n,
                recall: hits as f64 / pos_count as f64,
                ndcg: if idcg > 0.0 { dcg / idcg } else { 0.0 },
                hr: if hits > 0 { 1.0 } else { 0.0 },
                precision: hits as f64 / n as f64,
            }
        })
        .collect()
}

/// Per-user positives prepared for evaluation.
#[derive(Clone, Debug, Default)]
pub struct EvalSets {
    /// Sorted training positives per user (excluded from the ranking).
    pub train: Vec<Vec<u32>>,
    /// Sorted test positives per user (the relevance labels).
    pub test: Vec<Vec<u32>>,
}

impl EvalSets {
    pub fn from_split(split: &SplitDataset) -> Self {
        let m = split.train.user_count as usize;
        let mut train = vec![Vec::new(); m];
        let mut test = vec![Vec::new(); m];
        for &(u, i) in &split.train.pairs {
            train[u as usize].push(i);
        }
        for &(u, i) in &split.test.pairs {
            test[u as usize].push(i);
        }
        for v in train.iter_mut().chain(test.iter_mut()) {
            v.sort_unstable();
        }
        EvalSets { train, test }
    }
}

/// Scores all items against precomputed final representations and
/// averages per-user metrics over users with at least one test positive.
/// A repeated call over the same inputs returns bitwise-identical output.
pub fn evaluate_finals(
    user_final: &Matrix,
    entity_final: &Matrix,
    align: &[u32],
    sets: &EvalSets,
    cutoffs: &[usize],
) -> MetricsReport {
    let item_count = align.len();
    let per_user: Vec<(Vec<MetricsRow>, bool)> = (0..user_final.rows())
        .into_par_iter()
        .filter(|&u| !sets.test[u].is_empty())
        .map(|u| {
            let user_row = user_final.row(u);
            let scores: Vec<f64> = (0..item_count)
                .map(|i| dot(user_row, entity_final.row(align[i] as usize)))
                .collect();
            let ranked = rank_items(&scores, &sets.train[u]);
            let rows = compute_metrics(&ranked, &sets.test[u], cutoffs);
            (rows, sets.train[u].is_empty())
        })
        .collect();
    let users_evaluated = per_user.len();
    let cold_users = per_user.iter().filter(|(_, cold)| *cold).count();
    let mut rows: Vec<MetricsRow> = cutoffs
        .iter()
        .map(|&cutoff| MetricsRow {
            cutoff,
            recall: 0.0,
            ndcg: 0.0,
            hr: 0.0,
            precision: 0.0,
        })
        .collect();
    for (user_rows, _) in &per_user {
        for (acc, row) in rows.iter_mut().zip(user_rows) {
            acc.recall += row.recall;
            acc.ndcg += row.ndcg;
            acc.hr += row.hr;
            acc.precision += row.precision;
        }
    }
    if users_evaluated > 0 {
        let inv = 1.0 / users_evaluated as f64;
        for row in rows.iter_mut() {
            row.recall *= inv;
            row.ndcg *= inv;
            row.hr *= inv;
            row.precision *= inv;
        }
    }
    MetricsReport {
        rows,
        users_evaluated,
        cold_users,
    }
}

/// Full evaluation from parameters: runs one forward pass, sums the
/// layers, and ranks every user.
pub fn evaluate(
    params: &ParameterSet,
    partition: &VrkgPartition,
    bipartite: &AlignedBipartite,
    align: &[u32],
    sets: &EvalSets,
    cutoffs: &[usize],
    cfg: &ModelConfig,
) -> MetricsReport {
    let snapshot: PropagationSnapshot = model::forward(params, partition, bipartite, cfg);
    let (user_final, entity_final) = model::final_representations(&snapshot);
    evaluate_finals(&user_final, &entity_final, align, sets, cutoffs)
}

/// Report CSV: `cutoff,recall,ndcg,hr,precision,users_evaluated` with six
/// decimal places, one row per cutoff.
pub fn write_report_csv(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "cutoff,recall,ndcg,hr,precision,users_evaluated")
        .map_err(|e| Error::io(path, e))?;
    for row in &report.rows {
        writeln!(
            file,
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            row.cutoff, row.recall, row.ndcg, row.hr, row.precision, report.users_evaluated
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranking_sorts_descending_with_ascending_tie_break() {
        let ranked = rank_items(&[0.1, 0.9, 0.5], &[]);
        assert_eq!(ranked, vec![1, 2, 0]);
        let tied = rank_items(&[0.5, 0.5, 0.1], &[]);
        assert_eq!(tied, vec![0, 1, 2]);
    }

    #[test]
    fn training_positives_never_appear() {
        let ranked = rank_items(&[0.9, 0.8, 0.7, 0.6], &[0, 2]);
        assert_eq!(ranked, vec![1, 3]);
    }

    #[test]
    fn perfect_ranking_metrics() {
        let rows = compute_metrics(&[7, 1, 2, 3, 4], &[7], &[5]);
        let r = rows[0];
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.precision, 0.2);
        assert_eq!(r.hr, 1.0);
        assert_eq!(r.ndcg, 1.0);
    }

    #[test]
    fn positive_at_rank_three_gives_half_ndcg() {
        let rows = compute_metrics(&[1, 2, 7, 3, 4], &[7], &[5]);
        assert!((rows[0].ndcg - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_hits_means_all_zero() {
        let rows = compute_metrics(&[1, 2, 3], &[8, 9], &[3]);
        let r = rows[0];
        assert_eq!((r.recall, r.ndcg, r.hr, r.precision), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn metric_identities_at_cutoff_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let ranked: Vec<u32> =
                rank_items(&(0..20).map(|_| rng.gen::<f64>()).collect::<Vec<_>>(), &[]);
            let positives: Vec<u32> = {
                let mut p: Vec<u32> = (0..20).filter(|_| rng.gen_bool(0.2)).collect();
                if p.is_empty() {
                    p.push(rng.gen_range(0..20));
                }
                p.sort_unstable();
                p
            };
            let rows = compute_metrics(&ranked, &positives, &[1, 5, 10, 20]);
            assert_eq!(rows[0].hr, rows[0].ndcg);
            assert_eq!(rows[0].precision, rows[0].hr);
            for w in rows.windows(2) {
                assert!(w[1].recall >= w[0].recall - 1e-15);
                assert!(w[1].hr >= w[0].hr - 1e-15);
            }
            for r in &rows {
                for v in [r.recall, r.ndcg, r.hr, r.precision] {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn report_averages_users() {
        // two users, one with a hit at rank 1, one with none
        let sets = EvalSets {
            train: vec![vec![], vec![]],
            test: vec![vec![0], vec![1]],
        };
        let mut user_final = Matrix::zeros(2, 2);
        user_final.row_mut(0).copy_from_slice(&[1.0, 0.0]);
        user_final.row_mut(1).copy_from_slice(&[1.0, 0.0]);
        let mut entity_final = Matrix::zeros(3, 2);
        entity_final.row_mut(0).copy_from_slice(&[1.0, 0.0]); // item 0 scores 1
        entity_final.row_mut(1).copy_from_slice(&[-1.0, 0.0]); // item 1 scores -1
        entity_final.row_mut(2).copy_from_slice(&[0.5, 0.0]); // item 2 scores 0.5
        let report = evaluate_finals(&user_final, &entity_final, &[0, 1, 2], &sets, &[1]);
        assert_eq!(report.users_evaluated, 2);
        assert_eq!(report.cold_users, 2);
        assert!((report.rows[0].recall - 0.5).abs() < 1e-15);
    }

    #[test]
    fn random_ranking_recall_matches_expectation() {
        // With no exclusions and one test positive per user, a random
        // scoring ranks the positive uniformly: E[recall@N] = N / |I|.
        let items = 50usize;
        let users = 20usize;
        let n = 5usize;
        let trials = 100;
        let mut total = 0.0;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut user_final = Matrix::zeros(users, 8);
            let mut entity_final = Matrix::zeros(items, 8);
            for r in 0..users {
                for v in user_final.row_mut(r) {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            for r in 0..items {
                for v in entity_final.row_mut(r) {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            let sets = EvalSets {
                train: vec![vec![]; users],
                test: (0..users).map(|u| vec![(u % items) as u32]).collect(),
            };
            let align: Vec<u32> = (0..items as u32).collect();
            let report = evaluate_finals(&user_final, &entity_final, &align, &sets, &[n]);
            total += report.rows[0].recall;
        }
        let mean = total / trials as f64;
        let p = n as f64 / items as f64;
        let sigma = (p * (1.0 - p) / (trials as f64 * users as f64)).sqrt();
        assert!(
            (mean - p).abs() < 3.0 * sigma + 1e-9,
            "mean {mean} expected {p} sigma {sigma}"
        );
    }

    #[test]
    fn report_csv_has_six_decimal_places() {
        let report = MetricsReport {
            rows: vec![MetricsRow {
                cutoff: 5,
                recall: 1.0 / 3.0,
                ndcg: 0.25,
                hr: 1.0,
                precision: 0.2,
            }],
            users_evaluated: 7,
            cold_users: 0,
        };
        let path = std::env::temp_dir().join(format!("kgrec_report_{}.csv", std::process::id()));
        write_report_csv(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::remove_file(&path).ok();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "cutoff,recall,ndcg,hr,precision,users_evaluated"
        );
        assert_eq!(
            lines.next().unwrap(),
            "5,0.333333,0.250000,1.000000,0.200000,7"
        );
    }

    #[test]
    fn evaluation_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut user_final = Matrix::zeros(5, 4);
        let mut entity_final = Matrix::zeros(9, 4);
        for v in user_final.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in entity_final.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let sets = EvalSets {
            train: vec![vec![0], vec![], vec![1, 2], vec![], vec![3]],
            test: vec![vec![1], vec![4], vec![0], vec![], vec![2, 5]],
        };
        let align: Vec<u32> = (0..9).collect();
        let a = evaluate_finals(&user_final, &entity_final, &align, &sets, &[1, 5]);
        let b = evaluate_finals(&user_final, &entity_final, &align, &sets, &[1, 5]);
        assert_eq!(a, b);
    }
}
