//! DCG@k and nDCG@k with the 2^grade - 1 gain and log2(i+1) discount.

/// DCG@k of grades in ranked order: sum of (2^grade - 1) / log2(i + 1).
pub fn dcg_at_k(grades: &[u32], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k: DCG of the ranked grades over DCG of the ideal (descending)
/// ordering of `ideal_grades`. Defined as 0 when the ideal DCG is 0.
pub fn ndcg_at_k(ranked_grades: &[u32], ideal_grades: &[u32], k: usize) -> f64 {
    let mut ideal = ideal_grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let ideal_dcg = dcg_at_k(&ideal, k);
    if ideal_dcg == 0.0 {
        0.0
    } else {
        dcg_at_k(ranked_grades, k) / ideal_dcg
    }
}

/// Mean nDCG@k over queries, given (ranked grades, ideal grades) per query.
pub fn mean_ndcg_at_k(queries: &[(Vec<u32>, Vec<u32>)], k: usize) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    queries
        .iter()
        .map(|(ranked, ideal)| ndcg_at_k(ranked, ideal, k))
        .sum::<f64>()
        / queries.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn dcg_all_zero() {
        assert_eq!(dcg_at_k(&[0, 0, 0], 10), 0.0);
    }

    #[test]
    fn dcg_hand_value() {
        // grades [3,2], k=2: 7/1 + 3/log2(3)
        let expected = 7.0 + 3.0 / 3f64.log2();
        assert_relative_eq!(dcg_at_k(&[3, 2], 2), expected, max_relative = 1e-12);
        assert_relative_eq!(dcg_at_k(&[3, 2], 2), 8.8927892607, epsilon = 1e-9);
    }

    #[test]
    fn dcg_k_beyond_list() {
        let grades = [2, 1, 0];
        assert_eq!(dcg_at_k(&grades, 100), dcg_at_k(&grades, 3));
    }

    #[test]
    fn ndcg_ideal_ranking_is_one() {
        let grades = [4, 3, 2, 1, 0];
        assert_relative_eq!(ndcg_at_k(&grades, &grades, 10), 1.0);
    }

    #[test]
    fn ndcg_all_zero_is_zero() {
        assert_eq!(ndcg_at_k(&[0, 0], &[0, 0], 10), 0.0);
    }

    /// Brute-force ideal DCG: max over all permutations.
    fn permutation_max_dcg(grades: &[u32], k: usize) -> f64 {
        fn permute(grades: &mut Vec<u32>, n: usize, k: usize, best: &mut f64) {
            if n <= 1 {
                let d = dcg_at_k(grades, k);
                if d > *best {
                    *best = d;
                }
                return;
            }
            for i in 0..n {
                grades.swap(i, n - 1);
                permute(grades, n - 1, k, best);
                grades.swap(i, n - 1);
            }
        }
        let mut g = grades.to_vec();
        let mut best = 0.0;
        let n = g.len();
        permute(&mut g, n, k, &mut best);
        best
    }

    proptest! {
        #[test]
        fn ideal_dcg_equals_permutation_max(
            grades in proptest::collection::vec(0u32..5, 1..=6),
            k in 1usize..8,
        ) {
            let mut ideal = grades.clone();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let brute = permutation_max_dcg(&grades, k);
            prop_assert!((dcg_at_k(&ideal, k) - brute).abs() < 1e-12);
        }

        #[test]
        fn ndcg_in_unit_interval(
            grades in proptest::collection::vec(0u32..5, 1..=10),
            k in 1usize..12,
        ) {
            let v = ndcg_at_k(&grades, &grades, k);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }

        #[test]
        fn dcg_monotone_under_promoting_swap(
            grades in proptest::collection::vec(0u32..5, 2..=10),
            i in 0usize..9,
            j in 0usize..9,
        ) {
            let (i, j) = (i.min(grades.len() - 1), j.min(grades.len() - 1));
            let (lo, hi) = (i.min(j), i.max(j));
            prop_assume!(lo < hi && grades[hi] > grades[lo]);
            let mut swapped = grades.clone();
            swapped.swap(lo, hi);
            // moving the higher grade earlier cannot decrease DCG
            prop_assert!(dcg_at_k(&swapped, grades.len()) >= dcg_at_k(&grades, grades.len()) - 1e-12);
        }
    }
}
