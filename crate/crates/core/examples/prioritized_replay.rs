//! Forgetting-curve priorities, proportional sampling, importance weights.

use coadapt::linalg::seeded_rng;
use coadapt::rl::{anneal_beta, priority, sample_batch, sample_proportional, ReplayPool, StateFeatures, Strategy, Transition};

fn main() -> coadapt::Result<()> {
    let mut rng = seeded_rng(0, 0);
    let draws = sample_proportional(&[1.0, 3.0], 100_000, &mut rng);
    let ones = draws.iter().filter(|&&i| i == 1).count();
    println!("priorities {{1, 3}}: index 1 drawn {:.4} of the time", ones as f64 / draws.len() as f64);

    for age in [0.0, 10.0, 100.0, 1000.0] {
        println!("|delta| = 1, age {age:>6}: priority {:.4}", priority(1.0, age, 0.01, 0.01));
    }

    let mut pool = ReplayPool::new(8, 0.01, 0.01);
    for i in 0..12 {
        pool.push(Transition {
            s: StateFeatures(vec![i as f64]),
            a: Strategy::ALL[i % 3],
            r: 0.0,
            s_next: StateFeatures(vec![i as f64 + 1.0]),
            done: false,
            delta: if i % 4 == 0 { 2.0 } else { 0.1 },
            inserted_at: 0,
            old_logprob: 0.0,
        });
    }
    println!("pool holds {} of 12 pushes, global step {}", pool.len(), pool.global_step());
    for (step, total) in [(0, 100), (50, 100), (100, 100)] {
        let beta = anneal_beta(step, total, 0.4);
        let batch = sample_batch(&pool, 6, beta, &mut rng)?;
        let w: Vec<String> = batch.weights.iter().map(|w| format!("{w:.2}")).collect();
        println!("beta {beta:.2}: indices {:?} weights [{}]", batch.indices, w.join(", "));
    }
    Ok(())
}
