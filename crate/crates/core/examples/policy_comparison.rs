//! Paired comparisons: trained vs untrained policy, injection vs regeneration.

use coadapt::metrics::{compare_policies, paired_rounds_test, Arm, ArmPolicy};
use coadapt::rl::TrainConfig;
use coadapt::session::{initial_heads, train_policy, Engine, SessionConfig, TaskSampler};

fn main() -> coadapt::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let tasks = TaskSampler::new(1000).tasks(n);

    let plain = Engine::default().with_session(SessionConfig { refine: false, ..SessionConfig::default() })?;
    let cfg = TrainConfig::desk_scale();
    let (trained, _, _) = train_policy(&cfg, &plain, &TaskSampler::new(5), false)?;
    let untrained = initial_heads(&cfg, trained.features()).0;
    let a = Arm::new("trained", ArmPolicy::Policy { policy: trained, greedy: true }, false);
    let b = Arm::new("untrained", ArmPolicy::Policy { policy: untrained, greedy: false }, false);
    let (ra, rb) = compare_policies(&a, &b, &tasks, &plain, 9)?;
    let t = paired_rounds_test(&ra, &rb)?;
    println!("trained {:.2} vs untrained {:.2} rounds; {} wins, {} losses, p = {:.2e}", ra.mean_rounds, rb.mean_rounds, t.wins, t.losses, t.p_value);

    let engine = Engine::default();
    let inj = Arm::new("injection", ArmPolicy::Greedy, true);
    let regen = Arm::new("regenerate", ArmPolicy::Greedy, false);
    let (ri, rr) = compare_policies(&inj, &regen, &tasks, &engine, 9)?;
    let t = paired_rounds_test(&ri, &rr)?;
    println!("injection {:.2} vs regenerate {:.2} rounds; {} wins, {} losses, p = {:.2e}", ri.mean_rounds, rr.mean_rounds, t.wins, t.losses, t.p_value);
    print!("{}", ri.summary_json());
    Ok(())
}
