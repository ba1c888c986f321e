mod common;

use coadapt::edit::{edit_reweight, route_columns, SoftAlignment};
use coadapt::linalg::{project_to_simplex, seeded_rng, Matrix};
use coadapt::metrics::{binomial_upper_tail, ssim};
use coadapt::prompt::{apply_edit, compute_alignment, EditOp, Prompt, Vocab};
use coadapt::reward::{clip_score, empirical_mi, DEFAULT_RIDGE};
use coadapt::rl::{sample_proportional, ReplayPool, StateFeatures, Strategy as Action, Transition};
use coadapt::session::Engine;
use proptest::prelude::*;

const WORDS: &[&str] = &["a", "quiet", "lake", "golden", "fox", "at", "dusk", "misty", "harbor", "stones"];

fn arb_prompt() -> impl Strategy<Value = Prompt> {
    prop::collection::vec(0usize..WORDS.len(), 1..7).prop_map(|ix| {
        let words: Vec<&str> = ix.iter().map(|&i| WORDS[i]).collect();
        Prompt::from_tokens(Vocab::default().tokens(&words)).unwrap()
    })
}

fn row_stochastic(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = common::rng(seed);
    let data: Vec<f64> = (0..rows)
        .flat_map(|_| {
            let raw: Vec<f64> = (0..cols).map(|_| rand::Rng::random_range(&mut r, 0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(move |x| x / s)
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn simplex_projection_lands_on_simplex(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let mut p = v.clone();
        project_to_simplex(&mut p);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Idempotent.
        let mut q = p.clone();
        project_to_simplex(&mut q);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn proportional_sampling_only_hits_positive_weights(
        w in prop::collection::vec(prop_oneof![Just(0.0), 0.1f64..5.0], 1..10),
        seed in any::<u64>(),
    ) {
        prop_assume!(w.iter().any(|x| *x > 0.0));
        for i in sample_proportional(&w, 200, &mut seeded_rng(seed, 0)) {
            prop_assert!(w[i] > 0.0);
        }
    }

    #[test]
    fn importance_weights_are_normalized(deltas in prop::collection::vec(-3.0f64..3.0, 1..20), beta in 0.0f64..1.0) {
        let mut pool = ReplayPool::new(32, 0.01, 0.01);
        for d in &deltas {
            pool.push(Transition {
                s: StateFeatures(vec![*d]),
                a: Action::WordSwap,
                r: 0.0,
                s_next: StateFeatures(vec![0.0]),
                done: true,
                delta: *d,
                inserted_at: 0,
                old_logprob: 0.0,
            });
        }
        let b = coadapt::rl::sample_batch(&pool, 16, beta, &mut seeded_rng(1, 2)).unwrap();
        let max = b.weights.iter().cloned().fold(0.0, f64::max);
        prop_assert!((max - 1.0).abs() < 1e-12);
        prop_assert!(b.weights.iter().all(|w| *w > 0.0 && *w <= 1.0));
    }

    #[test]
    fn mi_is_symmetric_and_nonnegative(seed in 0u64..1000, rho in -0.9f64..0.9) {
        let (xs, ys) = common::correlated_normals(400, rho, seed);
        let a = empirical_mi(&xs, &ys, DEFAULT_RIDGE).unwrap();
        let b = empirical_mi(&ys, &xs, DEFAULT_RIDGE).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= -1e-9);
    }

    #[test]
    fn reweight_scales_only_its_column(rows in 1usize..6, cols in 1usize..6, j in 0usize..6, c in -2.0f64..2.0, seed in any::<u64>()) {
        let j = j % cols;
        let m = row_stochastic(rows, cols, seed);
        let out = edit_reweight(&m, j, c).unwrap();
        for r in 0..rows {
            for k in 0..cols {
                let expected = if k == j { c * m.get(r, k) } else { m.get(r, k) };
                prop_assert_eq!(out.get(r, k), expected);
            }
        }
    }

    #[test]
    fn hard_routing_copies_aligned_columns(p in arb_prompt(), pos in 0usize..8, n_new in 1usize..3, seed in any::<u64>()) {
        let pos = pos % (p.len() + 1);
        let tokens = Vocab::default().tokens(&["swans", "reeds"][..n_new]);
        let q = apply_edit(&p, &EditOp::AddPhrase { position: pos, tokens }).unwrap();
        let align = compute_alignment(&p, &q);
        let source = row_stochastic(12, p.len(), seed);
        let fresh = row_stochastic(12, q.len(), seed ^ 1);
        let out = route_columns(&source, &fresh, &SoftAlignment::from_hard(&align, p.len()).unwrap()).unwrap();
        for (j, a) in align.0.iter().enumerate() {
            for r in 0..12 {
                let expected = match a { Some(i) => source.get(r, *i), None => fresh.get(r, j) };
                prop_assert_eq!(out.get(r, j), expected);
            }
        }
    }

    #[test]
    fn scores_and_ssim_are_bounded(a in arb_prompt(), b in arb_prompt()) {
        let engine = Engine::default();
        let (ia, _) = engine.generator.generate(&a).unwrap();
        let (ib, _) = engine.generator.generate(&b).unwrap();
        let s = clip_score(&ia, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        let v = ssim(&ia, &ib).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&v));
        prop_assert!((v - common::ssim_oracle(&ia, &ib)).abs() < 1e-12);
    }

    #[test]
    fn sign_test_tail_is_a_probability(n in 0usize..300, k in 0usize..300) {
        let p = binomial_upper_tail(k, n);
        prop_assert!((0.0..=1.0).contains(&p));
        if k <= n && k > 0 {
            prop_assert!(binomial_upper_tail(k - 1, n) >= p);
        }
    }
}
