//! Trains the contextual and LSTM baselines on a small dataset and compares
//! them with the random policy.

use milearn::baselines::Method;
use milearn::data::{evaluate, generate_dataset, EvalOptions, GenerateConfig, ModelSpec, SavedModel};
use milearn::env::ReachEnv;
use milearn::meta::{meta_train, TrainConfig, TrainState};
use milearn::nn::ArchitectureConfig;
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = ReachEnv::default();
    let gen = GenerateConfig { meta_train_tasks: 40, meta_test_tasks: 5, ..Default::default() };
    let (ds, _) = generate_dataset(&env, &gen)?;
    let opts = EvalOptions { tasks: 5, trials: 5, ..Default::default() };

    let random = evaluate(&env, Method::Random, None, &ds, &opts)?;
    println!("random      {:.2}", random.success_rate);
    for method in [Method::Contextual, Method::Lstm] {
        let spec = ModelSpec {
            method,
            arch: ArchitectureConfig { fc_hidden: 32, state_dim: env.config.obs.state_dim(), ..Default::default() },
            lstm_width: 32,
            train: TrainConfig { epochs: 10, ..Default::default() },
            env_hash: env.config.hash(),
        };
        let init = spec.init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1))?;
        let objective = spec.objective()?;
        let state = meta_train(
            objective.as_ref(),
            &ds.train_data(&env),
            &spec.train,
            TrainState::new(init, spec.train.outer_lr),
            &mut |_| Ok(()),
        )?;
        let model = SavedModel { spec, params: state.params };
        let report = evaluate(&env, method, Some(&model), &ds, &opts)?;
        println!(
            "{:<11} {:.2}  (final train loss {:.3})",
            method.to_string(),
            report.success_rate,
            state.history.last().map_or(f64::NAN, |h| h.train_loss)
        );
    }
    Ok(())
}
