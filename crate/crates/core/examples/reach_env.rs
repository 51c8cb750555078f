//! Samples a task, renders the first frame as text and rolls out a random
//! policy.

use milearn::baselines::RandomPolicy;
use milearn::env::{EnvConfig, ObsConfig, ReachEnv, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = EnvConfig { obs: ObsConfig { vision: true, ..Default::default() }, ..Default::default() };
    let env = ReachEnv::new(config);
    let task = env.config.sample_task(3, Split::MetaTrain);
    println!("target color {:?}, distractors {:?}", task.target_color, task.distractor_colors);

    let (state, scene) = env.reset(&task, 0);
    let img = env.render(&state, &scene);
    let (h, w) = (img.shape()[0], img.shape()[1]);
    for r in 0..h {
        let row: String = (0..w)
            .map(|c| {
                let px = &img.data()[(r * w + c) * 3..(r * w + c) * 3 + 3];
                match px.iter().sum::<f64>() / 3.0 {
                    v if v > 0.66 => '#',
                    v if v > 0.2 => '+',
                    v if v > 0.05 => '.',
                    _ => ' ',
                }
            })
            .collect();
        println!("{row}");
    }

    let mut wins = 0;
    for trial in 0..50 {
        let traj = env.rollout(&mut RandomPolicy::new(trial), &task, trial)?;
        wins += traj.success()? as usize;
    }
    println!("random policy: {wins}/50 successes");
    Ok(())
}
