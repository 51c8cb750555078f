//! Solves iLQG experts for a handful of tasks and records demonstrations.

use milearn::env::{ReachEnv, Split};
use milearn::expert::{generate_demo, ilqg_solve, ExpertConfig, Modality};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = ReachEnv::default();
    let cfg = ExpertConfig::default();
    for seed in 0..5 {
        let task = env.config.sample_task(seed, Split::MetaTrain);
        let expert = ilqg_solve(&env, &task, 0, &cfg);
        let demo = generate_demo(&env, &expert, cfg.noise_sigma, Modality::Full)?;
        let end = demo.ee.last().copied().unwrap_or_default();
        let goal = demo.scene.goal();
        println!(
            "task {seed}: cost {:9.3}  final distance {:.4}  success {}",
            expert.solution.cost(),
            ((end[0] - goal[0]).powi(2) + (end[1] - goal[1]).powi(2)).sqrt(),
            demo.success()?
        );
    }
    Ok(())
}
