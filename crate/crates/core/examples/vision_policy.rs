//! Runs the convolutional policy with feature points on a rendered frame
//! and prints the extracted keypoints and the action.

use milearn::env::{EnvConfig, ObsConfig, ReachEnv, Split};
use milearn::meta::single_batch;
use milearn::nn::{act, init_params, ArchitectureConfig};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = ReachEnv::new(EnvConfig { obs: ObsConfig { vision: true, ..Default::default() }, ..Default::default() });
    let obs_cfg = &env.config.obs;
    let arch = ArchitectureConfig {
        vision: true,
        image_height: obs_cfg.image_height,
        image_width: obs_cfg.image_width,
        state_dim: obs_cfg.proprio_dim(),
        ..Default::default()
    };
    arch.validate()?;
    let params = init_params(&arch, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
    println!("{} parameters, conv output {:?}", arch.num_params(), arch.conv_output());

    let task = env.config.sample_task(0, Split::MetaTrain);
    let (state, scene) = env.reset(&task, 0);
    let obs = env.observe(&state, &scene);
    let action = act(&arch, &params, &single_batch(&obs))?;
    println!("action {:?}", action.data());
    Ok(())
}
