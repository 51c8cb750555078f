use milearn::baselines::Method;
use milearn::data::{evaluate, DemoDataset, EvalOptions, TaskEntry};
use milearn::env::{EnvConfig, EnvError, Observation, ReachEnv, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random-policy evaluation needs tasks but no demonstrations.
fn bare_dataset(env: &ReachEnv, tasks: usize) -> DemoDataset {
    DemoDataset {
        env: env.config.clone(),
        meta_train: vec![],
        meta_test: (0..tasks as u64)
            .map(|i| TaskEntry { task: env.config.sample_task(i, Split::MetaTest), demos: vec![] })
            .collect(),
    }
}

#[test]
fn random_rate_matches_independent_estimate() {
    let env = ReachEnv::new(EnvConfig::default());
    let ds = bare_dataset(&env, 300);
    let opts = EvalOptions { tasks: 300, trials: 10, ..Default::default() };
    let report = evaluate(&env, Method::Random, None, &ds, &opts).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0xface);
    let n = 4000;
    let mut hits = 0;
    for i in 0..n {
        let task = env.config.sample_task(1_000_000 + i, Split::MetaTest);
        let mut policy = |_: &Observation| -> Result<[f64; 2], EnvError> {
            Ok([rng.sample(StandardNormal), rng.sample(StandardNormal)])
        };
        hits += env.rollout(&mut policy, &task, i).unwrap().success().unwrap() as usize;
    }
    let independent = hits as f64 / n as f64;
    println!("eval {:.4} vs independent {:.4}", report.success_rate, independent);
    assert!((report.success_rate - independent).abs() <= 0.02);
}

#[test]
fn reports_are_deterministic() {
    let env = ReachEnv::new(EnvConfig::default());
    let ds = bare_dataset(&env, 5);
    let opts = EvalOptions { tasks: 5, trials: 4, seed: 9, ..Default::default() };
    let a = evaluate(&env, Method::Random, None, &ds, &opts).unwrap();
    let b = evaluate(&env, Method::Random, None, &ds, &opts).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_csv(), b.to_csv());
    let c = evaluate(&env, Method::Random, None, &ds, &EvalOptions { seed: 10, ..opts }).unwrap();
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn eval_rejects_bad_requests() {
    let env = ReachEnv::new(EnvConfig::default());
    let ds = bare_dataset(&env, 2);
    assert!(evaluate(&env, Method::Random, None, &ds, &EvalOptions { tasks: 3, ..Default::default() }).is_err());
    assert!(
        evaluate(&env, Method::Random, None, &ds, &EvalOptions { tasks: 2, shots: 0, ..Default::default() }).is_err()
    );
    assert!(evaluate(&env, Method::Mil, None, &ds, &EvalOptions { tasks: 2, ..Default::default() }).is_err());
}
