//! One simulated session, round by round, saved as a log with images.

use coadapt::linalg::seeded_rng;
use coadapt::session::{run_session, save_session, Chooser, Engine, SessionRecord, SimulatedUser, TaskSampler};

fn main() -> coadapt::Result<()> {
    let engine = Engine::default();
    let task = TaskSampler::new(7).sample(3);
    println!("start:  {}\ntarget: {}", task.initial, task.target);
    let user = SimulatedUser::new(task.target.clone(), &engine.generator)?;
    let ep = run_session(&task, &user, Chooser::Greedy, &engine, true, &mut seeded_rng(0, 0))?;

    let record = SessionRecord::from_state(&ep.state, Some((&user.target, &user.target_image)));
    for r in &record.log.rounds {
        println!("round {}: {:<40} score {:.4}", r.round, r.feedback, r.clip_score);
    }
    println!("status: {}", ep.state.status.as_str());

    let dir = std::env::temp_dir().join(format!("coadapt_session_{}", std::process::id()));
    let path = save_session(&record, &dir)?;
    println!("log written to {}", path.display());
    Ok(())
}
