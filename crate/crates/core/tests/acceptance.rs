//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines;
//! criteria that need training use reduced-but-honest configurations and
//! stay within the stated runtime budgets on a single core.

mod common;

use common::{full_chain, run_cli, tiny_config_toml, tiny_spec_toml};

use balmo::balance::{compute_k, compute_r, train_balanced, BalanceConfig};
use balmo::dataset::{stratified_split, ModalityMatrix};
use balmo::distill::{pretrain_student, pretrain_teacher, DistillConfig, TrainedEncoder};
use balmo::gcn::{build_rgcn, gcn_forward, EncoderConfig, GcnModel};
use balmo::losses::{masked_ce_graph, masked_kl_graph, masked_re_graph};
use balmo::metrics::{
    categorize, evaluate_logits, macro_f1, macro_ovr_auc, modality_mi, mutual_information,
    Quantizer, StateCategory,
};
use balmo::numeric::{gradient_check, Matrix, NodeId, Rng, Tape};
use balmo::optim::TrainParams;
use balmo::pipeline::{generate_synthetic, SyntheticModalitySpec, SyntheticSpec};
use balmo::snf::{
    normalize_p, scaled_exponential_similarity, snf_fuse, NetworkKind, SimilarityNetwork, SnfParams,
};

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Random matrix with entries kept away from the ReLU kink.
fn off_kink_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let v = rng.normal();
        if v.abs() < 0.05 {
            0.05 + rng.uniform()
        } else {
            v
        }
    })
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

#[test]
fn acceptance_1_gradient_correctness() {
    let tol = 1e-4;
    let eps = 1e-5;
    let fixtures = 22;
    for fixture in 0..fixtures {
        let mut rng = Rng::new(5000 + fixture);

        // matmul: d(sum(X * B)) / dX against finite differences.
        let b = random_matrix(3, 2, &mut rng);
        let x = random_matrix(4, 3, &mut rng);
        let err = gradient_check(
            |t: &mut Tape, leaf: NodeId| {
                let b = t.constant(b.clone());
                let prod = t.matmul(leaf, b)?;
                Ok(t.sum(prod))
            },
            &x,
            eps,
        )
        .unwrap();
        assert!(err < tol, "matmul fixture {fixture}: {err}");

        // relu away from the kink.
        let x = off_kink_matrix(3, 4, &mut rng);
        let err = gradient_check(
            |t: &mut Tape, leaf: NodeId| {
                let r = t.relu(leaf);
                Ok(t.sum(r))
            },
            &x,
            eps,
        )
        .unwrap();
        assert!(err < tol, "relu fixture {fixture}: {err}");

        // row_softmax through a weighted sum (non-uniform weights make the
        // Jacobian visible).
        let w = random_matrix(3, 4, &mut rng);
        let x = random_matrix(3, 4, &mut rng);
        let err = gradient_check(
            |t: &mut Tape, leaf: NodeId| {
                let s = t.row_softmax(leaf);
                let w = t.constant(w.clone());
                let weighted = t.mul(s, w)?;
                Ok(t.sum(weighted))
            },
            &x,
            eps,
        )
        .unwrap();
        assert!(err < tol, "row_softmax fixture {fixture}: {err}");

        // log (clamped) away from the floor: inputs are positive.
        let x = Matrix::from_fn(3, 3, |_, _| 0.2 + rng.uniform());
        let err = gradient_check(
            |t: &mut Tape, leaf: NodeId| {
                let l = t.log_clamped(leaf);
                Ok(t.sum(l))
            },
            &x,
            eps,
        )
        .unwrap();
        assert!(err < tol, "log fixture {fixture}: {err}");

        // Elementwise chain: scale, add, sub, mul, concat.
        let other = random_matrix(3, 3, &mut rng);
        let x = random_matrix(3, 3, &mut rng);
        let err = gradient_check(
            |t: &mut Tape, leaf: NodeId| {
                let c = t.constant(other.clone());
                let sum = t.add(leaf, c)?;
                let diff = t.sub(sum, leaf)?;
                let prod = t.mul(diff, leaf)?;
                let scaled = t.scale(prod, 0.7);
                let cat = t.concat_cols(&[scaled, leaf])?;
                Ok(t.sum(cat))
            },
            &x,
            eps,
        )
        .unwrap();
        assert!(err < tol, "elementwise fixture {fixture}: {err}");

        // Composite losses over logits: CE, KL, RE.
        let n = 6;
        let c = 3;
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let mask: Vec<bool> = (0..n).map(|i| i % 2 == 0 || rng.uniform() > 0.4).collect();
        let teacher_probs = random_matrix(n, c, &mut rng).row_softmax();
        let logits = random_matrix(n, c, &mut rng);

        let err = gradient_check(
            |t: &mut Tape, leaf: NodeId| masked_ce_graph(t, leaf, &labels, &mask, c),
            &logits,
            eps,
        )
        .unwrap();
        assert!(err < tol, "CE fixture {fixture}: {err}");

        let err = gradient_check(
            |t: &mut Tape, leaf: NodeId| masked_kl_graph(t, leaf, &teacher_probs, &mask, 1.0),
            &logits,
            eps,
        )
        .unwrap();
        assert!(err < tol, "KL fixture {fixture}: {err}");

        let teacher_repr = random_matrix(n, 5, &mut rng);
        let repr = random_matrix(n, 5, &mut rng);
        let err = gradient_check(
            |t: &mut Tape, leaf: NodeId| masked_re_graph(t, leaf, &teacher_repr, &mask),
            &repr,
            eps,
        )
        .unwrap();
        assert!(err < tol, "RE fixture {fixture}: {err}");

        // Weighted multitask total through a two-head graph over a shared
        // representation leaf.
        let d = 4;
        let head_a = random_matrix(d + 1, c, &mut rng);
        let head_b = random_matrix(d + 1, c, &mut rng);
        let fusion = random_matrix(d + 1, c, &mut rng);
        let repr_leaf = off_kink_matrix(n, d, &mut rng);
        let (k_a, k_b) = (0.7, 0.3);
        let err = gradient_check(
            |t: &mut Tape, leaf: NodeId| {
                // Full composed chain: matmul + relu + softmax + log inside
                // the masked losses.
                let activated = t.relu(leaf);
                let ones = t.constant(Matrix::filled(n, 1, 1.0));
                let with_bias = t.concat_cols(&[activated, ones])?;
                let ha = t.constant(head_a.clone());
                let hb = t.constant(head_b.clone());
                let hf = t.constant(fusion.clone());
                let la = t.matmul(with_bias, ha)?;
                let lb = t.matmul(with_bias, hb)?;
                let lf = t.matmul(with_bias, hf)?;
                let ce_f = masked_ce_graph(t, lf, &labels, &mask, c)?;
                let ce_a = masked_ce_graph(t, la, &labels, &mask, c)?;
                let ce_b = masked_ce_graph(t, lb, &labels, &mask, c)?;
                let wa = t.scale(ce_a, k_a);
                let wb = t.scale(ce_b, k_b);
                let partial = t.add(ce_f, wa)?;
                t.add(partial, wb)
            },
            &repr_leaf,
            eps,
        )
        .unwrap();
        assert!(err < tol, "multitask total fixture {fixture}: {err}");
    }
    println!("ACCEPTANCE 1 (gradient correctness): PASS");
}

// ---------------------------------------------------------------------------
// 2. SNF oracle equivalence

/// Straight-line transcription of the update equations, written without any
/// production code: normalize, kNN kernel, 20 synchronous diffusion steps
/// with renormalize + symmetrize, then the final average.
fn snf_oracle(w1: &Matrix, w2: &Matrix, k: usize, iterations: usize) -> Matrix {
    let n = w1.rows();
    let normalize = |w: &Matrix| -> Matrix {
        let mut p = Matrix::zeros(n, n);
        for i in 0..n {
            let mut mass = 0.0;
            for j in 0..n {
                if j != i {
                    mass += w.get(i, j);
                }
            }
            for j in 0..n {
                if j == i {
                    p.set(i, j, 0.5);
                } else {
                    p.set(i, j, w.get(i, j) / (2.0 * mass));
                }
            }
        }
        p
    };
    let knn = |w: &Matrix| -> Matrix {
        let mut s = Matrix::zeros(n, n);
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                w.get(i, b)
                    .partial_cmp(&w.get(i, a))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let neighbors = &order[..k];
            let denom: f64 = neighbors.iter().map(|&j| w.get(i, j)).sum();
            for &j in neighbors {
                s.set(i, j, w.get(i, j) / denom);
            }
        }
        s
    };
    let mut p1 = normalize(w1);
    let mut p2 = normalize(w2);
    let s1 = knn(w1);
    let s2 = knn(w2);
    let step = |s: &Matrix, p_other: &Matrix| -> Matrix {
        // S * P_other * S^T, renormalized and symmetrized.
        let mut prod = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        acc += s.get(i, a) * p_other.get(a, b) * s.get(j, b);
                    }
                }
                prod.set(i, j, acc);
            }
        }
        let renorm = normalize(&prod);
        let mut sym = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                sym.set(i, j, 0.5 * (renorm.get(i, j) + renorm.get(j, i)));
            }
        }
        sym
    };
    for _ in 0..iterations {
        let next1 = step(&s1, &p2);
        let next2 = step(&s2, &p1);
        p1 = next1;
        p2 = next2;
    }
    let mut fused = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            fused.set(i, j, 0.5 * (p1.get(i, j) + p2.get(i, j)));
        }
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, 0.5 * (fused.get(i, j) + fused.get(j, i)));
        }
    }
    out
}

fn random_raw_network(n: usize, rng: &mut Rng) -> SimilarityNetwork {
    let mut m = Matrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.range(0.05, 1.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    SimilarityNetwork {
        kind: NetworkKind::RawW,
        matrix: m,
        warnings: vec![],
    }
}

#[test]
fn acceptance_2_snf_oracle_equivalence() {
    let mut rng = Rng::new(6000);
    for trial in 0..5 {
        let a = random_raw_network(5, &mut rng);
        let b = random_raw_network(5, &mut rng);
        let params = SnfParams {
            mu: 0.5,
            k_neighbors: 3,
            iterations: 20,
            convergence_tol: 0.0, // run all 20 iterations
        };
        let fused = snf_fuse(&[a.clone(), b.clone()], &params).unwrap();
        let oracle = snf_oracle(&a.matrix, &b.matrix, 3, 20);
        let diff = fused.fused.matrix.max_abs_diff(&oracle);
        assert!(diff <= 1e-10, "trial {trial}: max entry diff {diff}");
    }
    println!("ACCEPTANCE 2 (snf oracle equivalence): PASS");
}

// ---------------------------------------------------------------------------
// 3. Stochasticity / symmetry suite

#[test]
fn acceptance_3_stochasticity_and_symmetry() {
    let mut rng = Rng::new(7000);

    // normalized_P rows sum to 1 with an exact 1/2 diagonal.
    for _ in 0..5 {
        let w = random_raw_network(9, &mut rng);
        let p = normalize_p(&w).unwrap();
        for i in 0..9 {
            let sum: f64 = p.matrix.row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "row {i} sums to {sum}");
            assert_eq!(p.matrix.get(i, i), 0.5);
        }
    }

    // Fused network symmetric and nonnegative.
    let nets: Vec<SimilarityNetwork> = (0..3).map(|_| random_raw_network(9, &mut rng)).collect();
    let params = SnfParams {
        mu: 0.5,
        k_neighbors: 4,
        iterations: 15,
        convergence_tol: 1e-8,
    };
    let fused = snf_fuse(&nets, &params).unwrap().fused;
    assert!(
        fused.matrix.is_symmetric(0.0),
        "fused must be exactly symmetric"
    );
    assert!(fused.matrix.data().iter().all(|&v| v >= 0.0));

    // GCN permutation equivariance on 10 random permutations.
    let n = 12;
    let x = ModalityMatrix::new("m", random_matrix(n, 5, &mut rng));
    let edges = random_raw_network(n, &mut rng);
    let cfg = EncoderConfig {
        hidden_dims: vec![6],
        representation_dim: 4,
        avg_edges_per_node: 3.0,
    };
    let model = build_rgcn(&x, &edges, &cfg, 3, 11).unwrap();
    let base = gcn_forward(&model, &x.features).unwrap();
    for perm_trial in 0..10 {
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let permuted_x = Matrix::from_fn(n, 5, |i, j| x.features.get(perm[i], j));
        let permuted_adj = Matrix::from_fn(n, n, |i, j| {
            model.normalized_adjacency.get(perm[i], perm[j])
        });
        let permuted_model = GcnModel {
            normalized_adjacency: permuted_adj,
            ..model.clone()
        };
        let out = gcn_forward(&permuted_model, &permuted_x).unwrap();
        for (i, &pi) in perm.iter().enumerate() {
            for j in 0..model.num_classes {
                let diff = (out.logits.get(i, j) - base.logits.get(pi, j)).abs();
                assert!(
                    diff <= 1e-12,
                    "perm {perm_trial}: logits differ by {diff} at ({i},{j})"
                );
            }
        }
    }
    println!("ACCEPTANCE 3 (stochasticity/symmetry): PASS");
}

// ---------------------------------------------------------------------------
// 4. Metric oracles

#[test]
fn acceptance_4_metric_oracles() {
    let mut rng = Rng::new(8000);
    for fixture in 0..1000 {
        let c = 2 + rng.below(4);
        let n = 4 + rng.below(30);
        let truth: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();

        // Brute-force macro F1.
        let got = macro_f1(&truth, &pred, c).unwrap();
        let mut acc = 0.0;
        for class in 0..c {
            let tp = truth
                .iter()
                .zip(&pred)
                .filter(|&(&t, &p)| t == class && p == class)
                .count() as f64;
            let fp = truth
                .iter()
                .zip(&pred)
                .filter(|&(&t, &p)| t != class && p == class)
                .count() as f64;
            let fneg = truth
                .iter()
                .zip(&pred)
                .filter(|&(&t, &p)| t == class && p != class)
                .count() as f64;
            if 2.0 * tp + fp + fneg > 0.0 {
                acc += 2.0 * tp / (2.0 * tp + fp + fneg);
            }
        }
        let want = acc / c as f64;
        assert!((got - want).abs() <= 1e-12, "fixture {fixture}: macro F1");

        // Brute-force pairwise AUC, with ties forced by score quantization.
        // AUC needs at least two classes present in the truth.
        if truth.iter().all(|&y| y == truth[0]) {
            continue;
        }
        let mut scores = Matrix::from_fn(n, c, |_, _| (rng.uniform() * 5.0).round() / 5.0 + 0.05);
        for i in 0..n {
            let total: f64 = scores.row(i).iter().sum();
            for j in 0..c {
                scores.set(i, j, scores.get(i, j) / total);
            }
        }
        let got = macro_ovr_auc(&truth, &scores).unwrap().value;
        let mut auc_sum = 0.0;
        let mut scored = 0;
        for class in 0..c {
            let pos: Vec<usize> = (0..n).filter(|&i| truth[i] == class).collect();
            let neg: Vec<usize> = (0..n).filter(|&i| truth[i] != class).collect();
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            let mut wins = 0.0;
            for &p in &pos {
                for &q in &neg {
                    let sp = scores.get(p, class);
                    let sq = scores.get(q, class);
                    wins += if sp > sq {
                        1.0
                    } else if sp == sq {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            auc_sum += wins / (pos.len() * neg.len()) as f64;
            scored += 1;
        }
        if scored > 0 {
            let want = auc_sum / scored as f64;
            assert!(
                (got - want).abs() <= 1e-12,
                "fixture {fixture}: auc {got} vs {want}"
            );
        }
    }

    // MI of identical uniform-4 variables is ln 4.
    let a: Vec<usize> = (0..100_000).map(|i| i % 4).collect();
    let mi = mutual_information(&a, &a).unwrap();
    assert!((mi - 4.0_f64.ln()).abs() <= 1e-9, "identical MI {mi}");

    // MI of independent variables at n = 1e5 is below 0.02.
    let mut rng = Rng::new(8001);
    let x: Vec<usize> = (0..100_000).map(|_| rng.below(4)).collect();
    let y: Vec<usize> = (0..100_000).map(|_| rng.below(4)).collect();
    let mi = mutual_information(&x, &y).unwrap();
    assert!(mi < 0.02, "independent MI {mi}");

    println!("ACCEPTANCE 4 (metric oracles): PASS");
}

// ---------------------------------------------------------------------------
// 5. Coefficient schedule oracle

#[test]
fn acceptance_5_coefficient_schedule() {
    // Independent transcription of the printed formulas.
    let r_oracle = |f: &[f64], m: usize| -> f64 {
        let mut sum = 0.0;
        for (j, &v) in f.iter().enumerate() {
            if j != m {
                sum += v;
            }
        }
        f[m] / (sum / (f.len() - 1) as f64)
    };
    let k_oracle = |r: f64, f: f64, alpha: f64, beta: f64, gamma: f64, c: usize| -> f64 {
        if f > gamma * (1.0 / c as f64) {
            1.0 - (alpha * r).tanh()
        } else {
            (beta * r).tanh()
        }
    };

    let cfg = BalanceConfig {
        alpha: 0.25,
        beta: 0.1,
        gamma: 1.5,
        ..BalanceConfig::default()
    };
    let c = 4;

    // The worked example plus random F vectors.
    let mut cases = vec![vec![0.8, 0.6, 0.3]];
    let mut rng = Rng::new(9000);
    for _ in 0..50 {
        let m = 2 + rng.below(3);
        cases.push((0..m).map(|_| 0.05 + 0.9 * rng.uniform()).collect());
    }
    for f in &cases {
        let r = compute_r(f).unwrap();
        let state = compute_k(&r, f, &cfg, c).unwrap();
        for m in 0..f.len() {
            let want_r = r_oracle(f, m);
            let want_k = k_oracle(want_r, f[m], cfg.alpha, cfg.beta, cfg.gamma, c);
            assert!((r[m] - want_r).abs() <= 1e-12, "r mismatch at {m}");
            assert!((state.k[m] - want_k).abs() <= 1e-12, "k mismatch at {m}");
        }
        assert_eq!(state.multimodal_k, 1.0);
    }

    // Branch monotonicity on a 100-point r grid.
    let mut above_prev = f64::INFINITY;
    let mut below_prev = f64::NEG_INFINITY;
    for i in 0..100 {
        let r = 0.02 + i as f64 * 0.05;
        let above = compute_k(&[r, 1.0], &[0.9, 0.9], &cfg, c).unwrap().k[0];
        let below = compute_k(&[r, 1.0], &[0.1, 0.9], &cfg, c).unwrap().k[0];
        assert!(above < above_prev, "above branch must strictly decrease");
        assert!(below > below_prev, "below branch must strictly increase");
        above_prev = above;
        below_prev = below;
    }
    println!("ACCEPTANCE 5 (coefficient schedule): PASS");
}

// ---------------------------------------------------------------------------
// 6. Balancing behavior on synthetic data

/// Strong / weak / low-information three-omics scenario at cohort scale.
/// Class structure is deliberately soft (Table-3-like macro F1 levels) so
/// the fused graph cannot turn pure noise into an informative modality and
/// validation does not saturate.
fn scenario_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        modalities: vec![
            SyntheticModalitySpec {
                name: "weakmod".into(),
                feature_dim: 60,
                snr: 0.33,
                class_margin: 0.35,
                shared_coeff: 0.45,
            },
            SyntheticModalitySpec {
                name: "lowmod".into(),
                feature_dim: 100,
                snr: 0.02,
                class_margin: 0.0,
                shared_coeff: 0.0,
            },
            SyntheticModalitySpec {
                name: "strongmod".into(),
                feature_dim: 40,
                snr: 0.7,
                class_margin: 0.7,
                shared_coeff: 0.5,
            },
        ],
        class_counts: vec![112, 53, 248, 98],
        class_names: vec!["c0".into(), "c1".into(), "c2".into(), "c3".into()],
        latent_dim: 8,
        seed,
    }
}

const CONFIGURED_WEAK: usize = 0;
const CONFIGURED_LOW: usize = 1;

struct SeedRun {
    mean_k: Vec<f64>,
    distilled_val: f64,
    plain_val: f64,
    balanced_test_f1: f64,
    naive_test_f1: f64,
}

fn encoder_cfg() -> EncoderConfig {
    EncoderConfig {
        hidden_dims: vec![32],
        representation_dim: 32,
        avg_edges_per_node: 3.0,
    }
}

fn unimodal_cfg(epochs: usize) -> DistillConfig {
    DistillConfig {
        epochs,
        learning_rate: 0.05,
        momentum: 0.9,
        ..DistillConfig::default()
    }
}

fn run_scenario_seed(seed: u64) -> SeedRun {
    let ds = generate_synthetic(&scenario_spec(9100 + seed)).unwrap();
    let mut split_rng = Rng::new(seed).derive(1);
    let masks = stratified_split(&ds.labels, (0.6, 0.2, 0.2), &mut split_rng).unwrap();
    let c = ds.n_classes();

    let snf = SnfParams {
        mu: 0.5,
        k_neighbors: 30,
        iterations: 20,
        convergence_tol: 1e-6,
    };
    let nets: Vec<SimilarityNetwork> = ds
        .modalities
        .iter()
        .map(|m| scaled_exponential_similarity(m, &snf).unwrap())
        .collect();
    let fused = snf_fuse(&nets, &snf).unwrap().fused;

    // Unimodal sweep for categorization; the strong run doubles as teacher
    // pretraining.
    let runs: Vec<TrainedEncoder> = ds
        .modalities
        .iter()
        .enumerate()
        .map(|(idx, m)| {
            pretrain_teacher(
                m,
                &fused,
                &ds.labels,
                &masks,
                &encoder_cfg(),
                &unimodal_cfg(80),
                c,
                seed * 31 + idx as u64,
            )
            .unwrap()
        })
        .collect();
    let f_scores: Vec<f64> = runs.iter().map(|r| r.best_val_macro_f1).collect();
    let states = categorize(&f_scores, 1.5, c).unwrap();
    let strong_idx = states
        .iter()
        .position(|s| s.category == StateCategory::Strong)
        .unwrap();
    let teacher = &runs[strong_idx];

    // 6b: distilled vs plain pretraining on the configured weak modality.
    let distill_cfg = DistillConfig {
        alpha1: 1.0,
        alpha2: 0.5,
        alpha3: 0.5,
        ..unimodal_cfg(100)
    };
    let distilled = pretrain_student(
        &ds.modalities[CONFIGURED_WEAK],
        &fused,
        &teacher.snapshot,
        &ds.labels,
        &masks,
        &encoder_cfg(),
        &distill_cfg,
        c,
        seed * 31 + 7,
        StateCategory::Weak,
        None,
        0.2,
    )
    .unwrap();
    let plain = pretrain_teacher(
        &ds.modalities[CONFIGURED_WEAK],
        &fused,
        &ds.labels,
        &masks,
        &encoder_cfg(),
        &unimodal_cfg(100),
        c,
        seed * 31 + 7,
    )
    .unwrap();

    // Low-information modality follows the pipeline policy: distill behind
    // the MI gate when categorized low, as a plain student if it landed in
    // the weak band.
    let strong_preds = gcn_forward(&teacher.model, &ds.modalities[strong_idx].features)
        .unwrap()
        .logits
        .argmax_rows();
    let low_category = states[CONFIGURED_LOW].category;
    let mi = modality_mi(
        &ds.modalities[CONFIGURED_LOW],
        &strong_preds,
        &Quantizer::PrincipalAxisBins { bins: 8 },
    )
    .unwrap()
    .value;
    let low_student = match low_category {
        StateCategory::Strong => None,
        StateCategory::Weak | StateCategory::LowInformation => pretrain_student(
            &ds.modalities[CONFIGURED_LOW],
            &fused,
            &teacher.snapshot,
            &ds.labels,
            &masks,
            &encoder_cfg(),
            &distill_cfg,
            c,
            seed * 31 + 9,
            low_category,
            Some(mi),
            0.2,
        )
        .ok(),
    };
    let low_encoder = match low_student {
        Some(run) => run.model,
        None => build_rgcn(
            &ds.modalities[CONFIGURED_LOW],
            &fused,
            &encoder_cfg(),
            c,
            seed * 31 + 9,
        )
        .unwrap(),
    };

    // 6a + 6c: balanced vs naive joint training from identical inits.
    let mut encoders: Vec<GcnModel> = Vec::with_capacity(3);
    for idx in 0..3 {
        if idx == strong_idx {
            encoders.push(teacher.model.clone());
        } else if idx == CONFIGURED_LOW {
            encoders.push(low_encoder.clone());
        } else {
            encoders.push(distilled.model.clone());
        }
    }

    let balance_cfg = BalanceConfig::default();
    let train = TrainParams {
        epochs: 200,
        learning_rate: 0.05,
        momentum: 0.9,
    };
    let balanced = train_balanced(
        &ds.modalities,
        encoders.clone(),
        &ds.labels,
        &masks,
        c,
        &balance_cfg,
        &train,
        seed * 31 + 11,
        false,
    )
    .unwrap();
    let naive = train_balanced(
        &ds.modalities,
        encoders,
        &ds.labels,
        &masks,
        c,
        &balance_cfg,
        &train,
        seed * 31 + 11,
        true,
    )
    .unwrap();

    let mean_k: Vec<f64> = (0..3)
        .map(|m| {
            let sum: f64 = balanced.report.rows.iter().map(|r| r.k[m]).sum();
            sum / balanced.report.rows.len() as f64
        })
        .collect();
    let fused_test = |report: &balmo::balance::TrainReport| {
        report
            .final_test
            .iter()
            .find(|h| h.name == "multimodal")
            .unwrap()
            .test
            .macro_f1
    };

    SeedRun {
        mean_k,
        distilled_val: distilled.best_val_macro_f1,
        plain_val: plain.best_val_macro_f1,
        balanced_test_f1: fused_test(&balanced.report),
        naive_test_f1: fused_test(&naive.report),
    }
}

#[test]
fn acceptance_6_balancing_behavior() {
    let seeds = 10;
    let mut distill_wins = 0;
    let mut low_k_smallest = 0;
    let mut balanced_sum = 0.0;
    let mut naive_sum = 0.0;
    let mut agg_k = vec![0.0; 3];
    for seed in 0..seeds {
        let run = run_scenario_seed(seed);
        if run.distilled_val >= run.plain_val {
            distill_wins += 1;
        }
        let low_k = run.mean_k[CONFIGURED_LOW];
        if (0..3).all(|m| m == CONFIGURED_LOW || run.mean_k[m] > low_k) {
            low_k_smallest += 1;
        }
        for (acc, &k) in agg_k.iter_mut().zip(&run.mean_k) {
            *acc += k / seeds as f64;
        }
        balanced_sum += run.balanced_test_f1;
        naive_sum += run.naive_test_f1;
        println!(
            "  seed {seed}: mean_k {:?} distilled {:.4} plain {:.4} balanced {:.4} naive {:.4}",
            run.mean_k
                .iter()
                .map(|k| (k * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>(),
            run.distilled_val,
            run.plain_val,
            run.balanced_test_f1,
            run.naive_test_f1
        );
    }
    let balanced_mean = balanced_sum / seeds as f64;
    let naive_mean = naive_sum / seeds as f64;

    // (a) the low-information modality gets the smallest mean k.
    assert!(
        (0..3).all(|m| m == CONFIGURED_LOW || agg_k[m] > agg_k[CONFIGURED_LOW]),
        "low-information modality must have the smallest mean k: {agg_k:?}"
    );
    assert!(
        low_k_smallest >= 8,
        "low-information modality had the smallest mean k in only {low_k_smallest}/{seeds} seeds"
    );

    // (b) distilled pretraining beats plain CE on at least 8/10 paired seeds.
    assert!(
        distill_wins >= 8,
        "distillation won only {distill_wins}/{seeds} paired seeds"
    );

    // (c) balanced vs naive multimodal test macro F1.
    assert!(
        balanced_mean >= naive_mean - 0.01,
        "balanced mean {balanced_mean:.4} fell more than 0.01 below naive mean {naive_mean:.4}"
    );
    assert!(
        balanced_mean > naive_mean,
        "balanced mean {balanced_mean:.4} must exceed naive mean {naive_mean:.4}"
    );
    println!(
        "ACCEPTANCE 6 (balancing behavior): PASS (distill wins {distill_wins}/10, balanced {balanced_mean:.4} vs naive {naive_mean:.4})"
    );
}

// ---------------------------------------------------------------------------
// 7. r-GCN vs GCN ordering

#[test]
fn acceptance_7_rgcn_vs_gcn() {
    let seeds = 10;
    let mut rgcn_sum = 0.0;
    let mut gcn_sum = 0.0;
    for seed in 0..seeds {
        let spec = SyntheticSpec {
            modalities: vec![
                SyntheticModalitySpec {
                    name: "clean".into(),
                    feature_dim: 40,
                    snr: 1.6,
                    class_margin: 1.2,
                    shared_coeff: 0.7,
                },
                SyntheticModalitySpec {
                    name: "noisy".into(),
                    feature_dim: 40,
                    snr: 0.4,
                    class_margin: 0.3,
                    shared_coeff: 0.6,
                },
            ],
            class_counts: vec![66, 31, 145, 58],
            class_names: vec!["c0".into(), "c1".into(), "c2".into(), "c3".into()],
            latent_dim: 8,
            seed: 9500 + seed,
        };
        let ds = generate_synthetic(&spec).unwrap();
        let mut split_rng = Rng::new(seed).derive(2);
        let masks = stratified_split(&ds.labels, (0.6, 0.2, 0.2), &mut split_rng).unwrap();
        let c = ds.n_classes();

        let snf = SnfParams {
            mu: 0.5,
            k_neighbors: 30,
            iterations: 20,
            convergence_tol: 1e-6,
        };
        let nets: Vec<SimilarityNetwork> = ds
            .modalities
            .iter()
            .map(|m| scaled_exponential_similarity(m, &snf).unwrap())
            .collect();
        let fused = snf_fuse(&nets, &snf).unwrap().fused;

        let noisy = &ds.modalities[1];
        let test_f1 = |run: &TrainedEncoder| {
            let out = gcn_forward(&run.model, &noisy.features).unwrap();
            evaluate_logits(&out.logits, &ds.labels, &masks.test, c)
                .unwrap()
                .macro_f1
        };
        let rgcn = pretrain_teacher(
            noisy,
            &fused,
            &ds.labels,
            &masks,
            &encoder_cfg(),
            &unimodal_cfg(80),
            c,
            seed * 17 + 1,
        )
        .unwrap();
        let plain = pretrain_teacher(
            noisy,
            &nets[1],
            &ds.labels,
            &masks,
            &encoder_cfg(),
            &unimodal_cfg(80),
            c,
            seed * 17 + 1,
        )
        .unwrap();
        let (r, p) = (test_f1(&rgcn), test_f1(&plain));
        println!("  seed {seed}: r-GCN {r:.4} GCN {p:.4}");
        rgcn_sum += r;
        gcn_sum += p;
    }
    let rgcn_mean = rgcn_sum / seeds as f64;
    let gcn_mean = gcn_sum / seeds as f64;
    assert!(
        rgcn_mean >= gcn_mean,
        "r-GCN mean {rgcn_mean:.4} must not trail plain GCN mean {gcn_mean:.4}"
    );
    println!("ACCEPTANCE 7 (r-GCN vs GCN ordering): PASS ({rgcn_mean:.4} vs {gcn_mean:.4})");
}

// ---------------------------------------------------------------------------
// 8. CLI determinism

#[test]
fn acceptance_8_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.toml");
    std::fs::write(&spec_path, tiny_spec_toml()).unwrap();
    let config_path = dir.path().join("config.toml");
    std::fs::write(&config_path, tiny_config_toml(&spec_path)).unwrap();

    let out_a = dir.path().join("run_a");
    let out_b = dir.path().join("run_b");
    full_chain(&config_path, &out_a);
    full_chain(&config_path, &out_b);

    let reports = [
        "resolved_config.toml",
        "stamp.txt",
        "networks/fused.csv",
        "fuse_summary.txt",
        "fuse_deltas.csv",
        "unimodal_report_fused.csv",
        "learning_states.json",
        "distill_summary.txt",
        "distill_manifest.json",
        "balance_report.csv",
        "balance_summary.txt",
        "balance.ckpt.json",
        "macro_f1_bars.csv",
        "baseline_report.csv",
        "baseline_report.txt",
        "evaluate_report.txt",
    ];
    for rel in reports {
        let a = std::fs::read(out_a.join(rel)).unwrap_or_else(|_| panic!("missing {rel} in run_a"));
        let b = std::fs::read(out_b.join(rel)).unwrap_or_else(|_| panic!("missing {rel} in run_b"));
        assert_eq!(a, b, "{rel} differs between identical runs");
    }
    println!(
        "ACCEPTANCE 8 (CLI determinism): PASS ({} reports byte-identical)",
        reports.len()
    );
}

// ---------------------------------------------------------------------------
// 9. Real-data harness

#[test]
fn acceptance_9_real_data_harness() {
    let dir = tempfile::tempdir().unwrap();

    // With real data present (user-supplied manifest), run against it; the
    // criterion asserts schema only, never numbers. Otherwise exercise the
    // identical CSV-manifest path on generated files.
    let manifest_path = match std::env::var("BALMO_BRCA_MANIFEST") {
        Ok(path) => {
            println!("  using user-supplied dataset manifest at {path}");
            std::path::PathBuf::from(path)
        }
        Err(_) => {
            println!("  BALMO_BRCA_MANIFEST not set; exercising the harness on generated CSVs");
            let spec_path = dir.path().join("spec.toml");
            std::fs::write(&spec_path, tiny_spec_toml()).unwrap();
            let gen_out = dir.path().join("gen");
            let output = run_cli(&[
                "generate",
                spec_path.to_str().unwrap(),
                "--out",
                gen_out.to_str().unwrap(),
            ]);
            assert!(
                output.status.success(),
                "generate failed: {}",
                String::from_utf8_lossy(&output.stderr)
            );
            gen_out.join("dataset/manifest.toml")
        }
    };

    let config = format!(
        r#"
seed = 3

[dataset]
kind = "csv"
manifest = "{}"

[reduction]
method = "pca"
target_dim = 100

[baseline]
repeats = 2
epochs = 60
learning_rate = 0.5
l2 = 0.0001
"#,
        manifest_path.display()
    );
    let config_path = dir.path().join("config.toml");
    std::fs::write(&config_path, &config).unwrap();
    let out = dir.path().join("baseline_run");
    let output = run_cli(&[
        "baseline",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "baseline failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    let report = std::fs::read_to_string(out.join("baseline_report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next().unwrap(), "combination,accuracy,auc,macro_f1");
    let rows: Vec<&str> = lines.collect();
    // All non-empty modality combinations: 2^M - 1 rows.
    assert!(!rows.is_empty());
    let m = (rows.len() + 1).ilog2() as usize;
    assert_eq!((1 << m) - 1, rows.len(), "row count must be 2^M - 1");
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 4, "row '{row}'");
        for cell in &cells[1..] {
            // `0.8338 ± 0.0340` schema.
            let parts: Vec<&str> = cell.split(" \u{00b1} ").collect();
            assert_eq!(parts.len(), 2, "cell '{cell}' must be `mean ± std`");
            for part in parts {
                let v: f64 = part.parse().expect("numeric cell");
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
    println!("ACCEPTANCE 9 (real-data harness): PASS");
}
