use coadapt::edit::{AscentConfig, EditController};
use coadapt::prompt::{apply_edit, tokenize, EditOp};
use coadapt::reward::clip_score;
use coadapt::session::Engine;

#[test]
fn reward_slope_in_scale_is_stable_to_step_halving() {
    let engine = Engine::default();
    let gen = &engine.generator;
    let mut checked = 0;
    for (text, j) in [("a misty harbor at dawn", 2), ("a golden meadow with a fox", 5), ("quiet stones", 0)] {
        let base = tokenize(text, &engine.vocab).unwrap();
        let (_, stack) = gen.generate(&base).unwrap();
        let reward = |c: f64| {
            let p = apply_edit(&base, &EditOp::Reweight { index: j, scale: c }).unwrap();
            let ctrl = EditController::reweight(j, c, 1.0, AscentConfig::default()).unwrap();
            let (img, _) = gen.regenerate_with_controller(&p, &stack, &ctrl).unwrap();
            clip_score(&img, &base).unwrap()
        };
        for i in -18..=18 {
            let c = i as f64 / 10.0;
            let slope = |h: f64| (reward(c + h) - reward(c - h)) / (2.0 * h);
            let (s1, s2) = (slope(1e-3), slope(5e-4));
            assert!(
                (s1 - s2).abs() <= 0.1 * s1.abs().max(s2.abs()) + 1e-6,
                "{text:?} c = {c}: {s1} vs {s2}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * 37);
}

#[test]
fn full_injection_reproduces_generation() {
    let engine = Engine::default();
    let gen = &engine.generator;
    let steps = gen.config().steps;
    for text in ["a misty harbor at dawn", "fox"] {
        let p = tokenize(text, &engine.vocab).unwrap();
        let (img, stack) = gen.generate(&p).unwrap();
        let ctrl = EditController::word_swap(steps, AscentConfig::default());
        let (again, stack2) = gen.regenerate_with_controller(&p, &stack, &ctrl).unwrap();
        assert_eq!(img, again);
        assert_eq!(stack, stack2);
    }
}
