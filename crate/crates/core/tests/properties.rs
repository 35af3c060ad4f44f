//! Property tests for the numeric and metric invariants.

use balmo::balance::{compute_k, compute_r, BalanceConfig};
use balmo::metrics::{macro_f1, mutual_information};
use balmo::numeric::{Matrix, Tape};
use balmo::snf::{knn_s, normalize_p, NetworkKind, SimilarityNetwork};
use proptest::prelude::*;

fn entropy(xs: &[usize]) -> f64 {
    let k = xs.iter().max().unwrap() + 1;
    let n = xs.len() as f64;
    let mut counts = vec![0usize; k];
    for &x in xs {
        counts[x] += 1;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..6,
        cols in 1usize..6,
        seed in any::<u64>(),
        scale in 0.1f64..100.0,
    ) {
        let mut rng = balmo::numeric::Rng::new(seed);
        let logits = Matrix::from_fn(rows, cols, |_, _| (rng.uniform() - 0.5) * scale);
        let mut tape = Tape::new();
        let x = tape.param(logits);
        let s = tape.row_softmax(x);
        for i in 0..rows {
            let row = &tape.value(s).row(i);
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn mutual_information_respects_entropy_bounds(
        pairs in proptest::collection::vec((0usize..4, 0usize..5), 2..200),
    ) {
        let a: Vec<usize> = pairs.iter().map(|&(x, _)| x).collect();
        let b: Vec<usize> = pairs.iter().map(|&(_, y)| y).collect();
        let mi = mutual_information(&a, &b).unwrap();
        prop_assert!(mi >= 0.0);
        prop_assert!(mi <= entropy(&a).min(entropy(&b)) + 1e-9);
    }

    #[test]
    fn macro_f1_is_permutation_invariant(
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60),
        perm_seed in any::<u64>(),
    ) {
        let truth: Vec<usize> = pairs.iter().map(|&(t, _)| t).collect();
        let pred: Vec<usize> = pairs.iter().map(|&(_, p)| p).collect();
        let base = macro_f1(&truth, &pred, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));

        let mut order: Vec<usize> = (0..truth.len()).collect();
        let mut rng = balmo::numeric::Rng::new(perm_seed);
        rng.shuffle(&mut order);
        let t2: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
        let p2: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
        prop_assert!((macro_f1(&t2, &p2, 4).unwrap() - base).abs() < 1e-15);
    }

    #[test]
    fn knn_rows_are_stochastic_with_bounded_support(
        n in 3usize..10,
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(k < n);
        let mut rng = balmo::numeric::Rng::new(seed);
        let mut m = Matrix::identity(n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = rng.range(0.05, 1.0);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        let w = SimilarityNetwork { kind: NetworkKind::RawW, matrix: m, warnings: vec![] };
        let s = knn_s(&w, k).unwrap();
        for i in 0..n {
            let row = s.matrix.row(i);
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            let support = row.iter().filter(|&&v| v != 0.0).count();
            prop_assert!(support <= k);
            prop_assert!(row[i] == 0.0);
        }
        let p = normalize_p(&w).unwrap();
        for i in 0..n {
            let sum: f64 = p.matrix.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn coefficients_stay_in_the_unit_interval(
        // Sane hyperparameter regime: tanh saturates to a hard 0/1 in f64
        // once alpha * r exceeds ~18, so the open interval only holds while
        // the ratios stay moderate.
        f in proptest::collection::vec(0.1f64..1.0, 2..6),
        alpha in 0.05f64..0.5,
        beta in 0.05f64..0.5,
    ) {
        let cfg = BalanceConfig { alpha, beta, ..BalanceConfig::default() };
        let r = compute_r(&f).unwrap();
        let state = compute_k(&r, &f, &cfg, 4).unwrap();
        for &k in &state.k {
            prop_assert!(k > 0.0 && k < 1.0, "k = {k}");
        }
        prop_assert_eq!(state.multimodal_k, 1.0);
    }
}
