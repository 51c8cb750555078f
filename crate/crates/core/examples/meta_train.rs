//! Meta-trains a small policy, then adapts it to an unseen task from one
//! demonstration and compares success before and after the update.

use milearn::baselines::Method;
use milearn::data::{evaluate, generate_dataset, EvalOptions, GenerateConfig, ModelSpec, SavedModel};
use milearn::env::ReachEnv;
use milearn::meta::{meta_train, TrainConfig, TrainState};
use milearn::nn::ArchitectureConfig;
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let env = ReachEnv::default();
    let gen = GenerateConfig { meta_train_tasks: 60, meta_test_tasks: 5, ..Default::default() };
    let (ds, _) = generate_dataset(&env, &gen)?;

    let spec = ModelSpec {
        method: Method::Mil,
        arch: ArchitectureConfig { fc_hidden: 40, state_dim: env.config.obs.state_dim(), ..Default::default() },
        lstm_width: 0,
        train: TrainConfig { epochs: 15, inner_lr: 0.01, ..Default::default() },
        env_hash: env.config.hash(),
    };
    let params = spec.init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
    let state = TrainState::new(params, spec.train.outer_lr);
    let mil = spec.objective()?;
    let state = meta_train(mil.as_ref(), &ds.train_data(&env), &spec.train, state, &mut |_| Ok(()))?;
    for h in &state.history {
        println!("epoch {:3}  train {:.4}  held-out {:?}", h.epoch, h.train_loss, h.heldout_loss);
    }

    let model = SavedModel { spec, params: state.params };
    let opts = EvalOptions { tasks: 5, trials: 5, ..Default::default() };
    let report = evaluate(&env, Method::Mil, Some(&model), &ds, &opts)?;
    println!(
        "one-shot success {:.2}; validation loss {:.3} -> {:.3} after the update",
        report.success_rate,
        report.mean_pre_loss.unwrap_or(f64::NAN),
        report.mean_post_loss.unwrap_or(f64::NAN)
    );
    Ok(())
}
