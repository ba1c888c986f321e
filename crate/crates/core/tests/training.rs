use coadapt::rl::TrainConfig;
use coadapt::session::{train_policy, Engine, SessionConfig, TaskSampler};

#[test]
fn smoke_training_shortens_sessions() {
    let engine = Engine::default()
        .with_session(SessionConfig {
            refine: false,
            ..SessionConfig::default()
        })
        .unwrap();
    let sampler = TaskSampler {
        min_len: 3,
        max_len: 3,
        ..TaskSampler::new(21)
    };
    let cfg = TrainConfig {
        episodes: 200,
        ..TrainConfig::desk_scale()
    };
    let (_, _, report) = train_policy(&cfg, &engine, &sampler, false).unwrap();
    let q = report.quintile_mean_rounds();
    assert_eq!(report.episodes.len(), 200);
    assert!(q[4] < q[0], "quintile means {q:?}");
    assert!(report.updates.iter().all(|u| u.value_loss.is_finite() && u.objective.is_finite()));
}

#[test]
fn training_report_hash_tracks_config() {
    let engine = Engine::default();
    let sampler = TaskSampler::new(1);
    let a = TrainConfig { episodes: 4, ..TrainConfig::desk_scale() };
    let b = TrainConfig { lr: 0.01, ..a.clone() };
    let ra = train_policy(&a, &engine, &sampler, false).unwrap().2;
    let rb = train_policy(&b, &engine, &sampler, false).unwrap().2;
    assert_ne!(ra.config_hash, rb.config_hash);
    assert_eq!(ra.config_hash, coadapt::rl::config_hash(&a));
}
