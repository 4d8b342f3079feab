use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trp_core::metrics::{f1_pu, f1_scores, lrap, Confusion, MetricError};

/// Exact non-negative rational `num / den`.
#[derive(Clone, Copy)]
struct Ratio(u64, u64);

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Ratio {
    fn new(num: u64, den: u64) -> Self {
        let g = gcd(num, den).max(1);
        Ratio(num / g, den / g)
    }
    fn mul(self, o: Ratio) -> Ratio {
        Ratio::new(self.0 * o.0, self.1 * o.1)
    }
    fn div(self, o: Ratio) -> Ratio {
        Ratio::new(self.0 * o.1, self.1 * o.0)
    }
    fn add(self, o: Ratio) -> Ratio {
        Ratio::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    fn value(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

fn count(it: impl Iterator<Item = bool>) -> u64 {
    it.filter(|&b| b).count() as u64
}

/// F1 of class `cls` as the harmonic mean of exact precision and recall.
fn brute_f1(pred: &[bool], label: &[bool], cls: bool) -> f64 {
    let predicted = count(pred.iter().map(|&p| p == cls));
    let actual = count(label.iter().map(|&l| l == cls));
    let hits = count(pred.iter().zip(label).map(|(&p, &l)| p == cls && l == cls));
    if hits == 0 {
        return 0.0;
    }
    let (precision, recall) = (Ratio::new(hits, predicted), Ratio::new(hits, actual));
    Ratio(2, 1).mul(precision).mul(recall).div(precision.add(recall)).value()
}

fn brute_f1_pu(pred: &[bool], label: &[bool]) -> f64 {
    let pos = count(label.iter().copied());
    let hits = count(pred.iter().zip(label).map(|(&p, &l)| p && l));
    let predicted = count(pred.iter().copied());
    if predicted == 0 {
        return 0.0;
    }
    let recall = Ratio::new(hits, pos);
    let rate = Ratio::new(predicted, pred.len() as u64);
    recall.mul(recall).div(rate).value()
}

/// Calls `f` on every ordering of `items`, permuting in place.
fn for_each_permutation(items: &mut [usize], k: usize, f: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        for_each_permutation(items, k + 1, f);
        items.swap(k, i);
    }
}

/// Common denominator of `1/rank` for ranks up to 10.
const LCM: u64 = 2520;

/// Average precision over every ordering of each tied group. A positive's
/// precision only depends on its own group's ordering, so each group is
/// enumerated separately. Sums are kept as integer multiples of `1/LCM`.
fn brute_lrap(scores: &[f64], labels: &[bool]) -> f64 {
    assert!(scores.len() <= 10);
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut total = 0.0;
    let mut levels: Vec<f64> = scores.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    for level in levels {
        let above: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > level).collect();
        let above_pos = above.iter().filter(|&&i| labels[i]).count() as u64;
        let group: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == level).collect();
        let mut group = group;
        let (mut sum, mut orderings) = (0u64, 0u64);
        for_each_permutation(&mut group, 0, &mut |perm| {
            orderings += 1;
            let mut seen_pos = above_pos;
            for (k, &i) in perm.iter().enumerate() {
                if labels[i] {
                    seen_pos += 1;
                    sum += seen_pos * (LCM / (above.len() + k + 1) as u64);
                }
            }
        });
        total += sum as f64 / (orderings * LCM) as f64;
    }
    total / n_pos
}

#[test]
fn f1_examples() {
    let labels = [true, false, true, false];
    assert_eq!(f1_scores(&labels, &labels).unwrap(), (1.0, 1.0));
    let (s, _) = f1_scores(&[false; 4], &[true, true, false, false]).unwrap();
    assert_eq!(s, 0.0);

    // TP=2, FP=1, FN=1, TN=6.
    let pred = [true, true, true, false, false, false, false, false, false, false];
    let label = [true, true, false, true, false, false, false, false, false, false];
    let c = Confusion::new(&pred, &label).unwrap();
    assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 1, 1, 6));
    let (s, m) = f1_scores(&pred, &label).unwrap();
    assert!((s - 2.0 / 3.0).abs() < 1e-15);
    assert!((c.f1_negative() - 12.0 / 14.0).abs() < 1e-15);
    assert!((m - 0.7619).abs() < 1e-4);

    assert_eq!(f1_scores(&[], &[]), Err(MetricError::Empty));
    assert_eq!(f1_scores(&[true], &[true, false]), Err(MetricError::Length(1, 2)));
}

#[test]
fn absent_class_contributes_zero_to_macro() {
    let (s, m) = f1_scores(&[true, true], &[true, true]).unwrap();
    assert_eq!((s, m), (1.0, 0.5));
}

#[test]
fn f1_pu_examples() {
    // Recall 1 with half the pairs predicted positive.
    assert_eq!(f1_pu(&[true, true, false, false], &[true, true, false, false]).unwrap(), 2.0);
    // Everything positive.
    assert_eq!(f1_pu(&[true; 5], &[true, false, true, false, false]).unwrap(), 1.0);
    assert_eq!(f1_pu(&[false; 3], &[true, false, false]).unwrap(), 0.0);
    assert_eq!(f1_pu(&[true; 3], &[false; 3]), Err(MetricError::NoPositives));
}

#[test]
fn f1_pu_can_exceed_one() {
    // 10 observed positives among 96 pairs, 20 predicted, 7 of them correct:
    // 0.49 / (20 / 96) = 2.352, in line with reported values such as 2.35.
    let mut pred = vec![false; 96];
    let mut label = vec![false; 96];
    label[..10].fill(true);
    pred[..7].fill(true);
    pred[10..23].fill(true);
    let v = f1_pu(&pred, &label).unwrap();
    assert!((v - 2.352).abs() < 1e-12, "{v}");
    assert!(v > 1.0);
}

#[test]
fn lrap_examples() {
    assert_eq!(lrap(&[0.9, 0.5, 0.1], &[true, false, false]).unwrap(), 1.0);
    assert_eq!(lrap(&[0.9, 0.5, 0.1], &[false, true, false]).unwrap(), 0.5);
    let v = lrap(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
    assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    assert!((v - 0.8333).abs() < 1e-4);
    // A fully tied list averages over all orderings.
    let tied = lrap(&[0.0; 4], &[true, false, true, false]).unwrap();
    assert!((tied - brute_lrap(&[0.0; 4], &[true, false, true, false])).abs() < 1e-12);
    assert_eq!(lrap(&[1.0, 2.0], &[false, false]), Err(MetricError::NoPositives));
}

#[test]
fn metrics_match_brute_force_on_small_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.random_range(1..=10);
        let levels = rng.random_range(1..=6);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 - 2.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let pred: Vec<bool> = scores.iter().map(|&s| s > 0.0).collect();

        let (s, m) = f1_scores(&pred, &labels).unwrap();
        assert_eq!(s, brute_f1(&pred, &labels, true));
        assert_eq!(m, 0.5 * (brute_f1(&pred, &labels, true) + brute_f1(&pred, &labels, false)));
        if !labels.contains(&true) {
            assert!(f1_pu(&pred, &labels).is_err());
            assert!(lrap(&scores, &labels).is_err());
            continue;
        }
        let fp = f1_pu(&pred, &labels).unwrap();
        assert_eq!(fp, brute_f1_pu(&pred, &labels));
        let l = lrap(&scores, &labels).unwrap();
        let b = brute_lrap(&scores, &labels);
        assert!((l - b).abs() < 1e-12, "{scores:?} {labels:?}: {l} vs {b}");
        checked += 1;
    }
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![-3.0f64..3.0, Just(0.0), Just(1.0)], n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bounded_ranges((scores, labels) in instance()) {
        let pred: Vec<bool> = scores.iter().map(|&s| s > 0.0).collect();
        let (s, m) = f1_scores(&pred, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&m));
        if labels.contains(&true) {
            let l = lrap(&scores, &labels).unwrap();
            prop_assert!(l > 0.0 && l <= 1.0 + 1e-12);
            prop_assert!(f1_pu(&pred, &labels).unwrap() >= 0.0);
        }
    }

    #[test]
    fn all_positive_predictor_scores_recall_squared((scores, labels) in instance()) {
        prop_assume!(labels.contains(&true));
        let all = vec![true; labels.len()];
        prop_assert_eq!(f1_pu(&all, &labels).unwrap(), 1.0);
        let pred: Vec<bool> = scores.iter().map(|&s| s > 0.0).collect();
        let c = Confusion::new(&pred, &labels).unwrap();
        prop_assert!(c.recall().powi(2) <= 1.0);
    }

    #[test]
    fn f1_pu_ignores_duplication((scores, labels) in instance(), copies in 2usize..4) {
        prop_assume!(labels.contains(&true));
        let pred: Vec<bool> = scores.iter().map(|&s| s > 0.0).collect();
        let once = f1_pu(&pred, &labels).unwrap();
        let pred_k = pred.repeat(copies);
        let labels_k = labels.repeat(copies);
        let many = f1_pu(&pred_k, &labels_k).unwrap();
        prop_assert!((once - many).abs() <= 1e-12 * once.max(1.0));
    }
}
