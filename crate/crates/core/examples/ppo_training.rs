//! Train the strategy policy on simulated sessions and save a checkpoint.
//!
//! cargo run --release --example ppo_training -- 400

use coadapt::rl::{Checkpoint, TrainConfig};
use coadapt::session::{train_policy, Engine, TaskSampler};

fn main() -> coadapt::Result<()> {
    let episodes = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let cfg = TrainConfig { episodes, ..TrainConfig::desk_scale() };
    let engine = Engine::default();
    let start = std::time::Instant::now();
    let (policy, value, report) = train_policy(&cfg, &engine, &TaskSampler::new(5), false)?;
    println!("{episodes} episodes, {} updates in {:.1?}", report.updates.len(), start.elapsed());
    println!("mean rounds by fifth of training: {:.2?}", report.quintile_mean_rounds());
    if let Some(last) = report.updates.last() {
        println!("last update: objective {:.4}, value loss {:.4}", last.objective, last.value_loss);
    }
    let path = std::env::temp_dir().join("coadapt_policy.json");
    Checkpoint::new(&cfg, episodes, policy, value).save(&path)?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}
