/// Area under the ROC curve via average ranks; tied scores count one half.
/// Returns 0.5 when only one class is present.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    (rank_sum - p * (p + 1.0) / 2.0) / (p * q)
}

/// `1 − (2 max(0.5, a) − 1)`: 1 for chance-level separation, 0 for perfect.
pub fn auc_to_score(a: f64) -> f64 {
    1.0 - (2.0 * a.max(0.5) - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    n += 1.0;
                    s += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        if n == 0.0 {
            0.5
        } else {
            s / n
        }
    }

    #[test]
    fn formula_endpoints() {
        assert_eq!(auc_to_score(0.5), 1.0);
        assert_eq!(auc_to_score(1.0), 0.0);
        assert_eq!(auc_to_score(0.3), 1.0);
        assert_eq!(auc_to_score(0.75), 0.5);
    }

    #[test]
    fn single_class_is_half() {
        assert_eq!(auc(&[0.1, 0.9], &[true, true]), 0.5);
    }

    proptest! {
        #[test]
        fn equals_pairwise_definition(v in proptest::collection::vec((0u8..10, any::<bool>()), 1..120)) {
            let scores: Vec<f64> = v.iter().map(|p| f64::from(p.0)).collect();
            let labels: Vec<bool> = v.iter().map(|p| p.1).collect();
            prop_assert!((auc(&scores, &labels) - pairwise(&scores, &labels)).abs() < 1e-12);
        }
    }
}
