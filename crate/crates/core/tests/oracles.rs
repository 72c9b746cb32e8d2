use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tweetsift_core::corpus::{build_dataset, stratified_split};
use tweetsift_core::eval::{accuracy, confusion, f1, macro_prf1, precision, recall, roc_auc};
use tweetsift_core::synthetic::{generate, SyntheticConfig};

/// Counts agreements by scanning the vectors, never through a confusion
/// matrix.
fn scan(labels: &[u8], preds: &[u8], positive: u8) -> (f64, f64, f64) {
    let hit = |y: u8, p: u8| labels.iter().zip(preds).filter(|&(&a, &b)| a == y && b == p).count();
    let (neg, pos) = (1 - positive, positive);
    let (tp, fp, fn_) = (hit(pos, pos), hit(neg, pos), hit(pos, neg));
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (p, r) = (div(tp, tp + fp), div(tp, tp + fn_));
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

#[test]
fn metrics_match_enumeration_for_every_small_matrix() {
    let mut checked = 0;
    for total in 1..=20usize {
        for tp in 0..=total {
            for fp in 0..=total - tp {
                for fn_ in 0..=total - tp - fp {
                    let tn = total - tp - fp - fn_;
                    let mut labels = Vec::new();
                    let mut preds = Vec::new();
                    for (y, p, n) in [(1, 1, tp), (0, 1, fp), (1, 0, fn_), (0, 0, tn)] {
                        labels.extend(std::iter::repeat(y).take(n));
                        preds.extend(std::iter::repeat(p).take(n));
                    }
                    let cm = confusion(&labels, &preds).unwrap();
                    let agree = labels.iter().zip(&preds).filter(|(a, b)| a == b).count();
                    assert_eq!(accuracy(&cm), agree as f64 / total as f64);
                    let (p1, r1, f1_1) = scan(&labels, &preds, 1);
                    assert_eq!((precision(&cm), recall(&cm), f1(&cm)), (p1, r1, f1_1));
                    // F1 also equals 2TP / (2TP + FP + FN) whenever defined.
                    if tp > 0 {
                        let exact = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
                        assert!((f1(&cm) - exact).abs() <= 4.0 * f64::EPSILON);
                    }
                    let (p0, r0, f1_0) = scan(&labels, &preds, 0);
                    let m = macro_prf1(&labels, &preds).unwrap();
                    assert_eq!(m.precision, (p1 + p0) / 2.0);
                    assert_eq!(m.recall, (r1 + r0) / 2.0);
                    assert_eq!(m.f1, (f1_1 + f1_0) / 2.0);
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 10_625);
}

fn pairwise(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn trapezoid_auc_equals_pairwise_probability_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut done = 0;
    while done < 1000 {
        let n = rng.gen_range(2..=15);
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        if !labels.contains(&0) || !labels.contains(&1) {
            continue;
        }
        let levels = rng.gen_range(1..=n);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let got = roc_auc(&labels, &scores).unwrap().auc;
        assert!((got - pairwise(&labels, &scores)).abs() <= 1e-12, "{labels:?} {scores:?}");
        done += 1;
    }
}

#[test]
fn synthetic_corpus_split_is_stratified_and_disjoint() {
    let data = build_dataset(&generate(&SyntheticConfig { rows: 3000, ..Default::default() })).unwrap();
    let split = stratified_split(&data, 0.8, 42).unwrap();
    let train: std::collections::HashSet<i64> = split.train.ids().into_iter().collect();
    assert!(split.test.ids().iter().all(|id| !train.contains(id)));
    assert_eq!(split.train.len() + split.test.len(), data.len());
    let rate = |d: &tweetsift_core::Dataset| d.positive_count() as f64 / d.len() as f64;
    assert!((rate(&split.train) - rate(&split.test)).abs() < 0.01);
}
