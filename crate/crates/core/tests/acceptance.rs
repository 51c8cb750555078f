//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! `MIL_ACCEPTANCE_ONLY=1,2,5` restricts the run to some criteria.
//! `MIL_ACCEPTANCE_STRICT=1` makes any failure fail the process; by default
//! failures are reported and the target exits successfully, because the
//! learning-curve criteria (6 and 8) are empirical and recorded as measured.

use milearn::autodiff::{gradient, Graph, ParamSet};
use milearn::baselines::Method;
use milearn::cli::{RunConfig, INIT_SALT};
use milearn::data::{evaluate, generate_dataset, mix_seed, DemoDataset, EvalOptions, EvalReport, SavedModel};
use milearn::env::{EnvConfig, ReachEnv, Split};
use milearn::expert::{generate_demo, ilqg_solve, solve, Cost, Dynamics, Expansion, ExpertConfig, IlqgOptions};
use milearn::gradcheck::{meta_checks, random_demo, tiny_arch, DEFAULT_THRESHOLD};
use milearn::meta::{adapt, bc_loss, inner_loss_graph, meta_loss, meta_train, InnerLoss, TrainConfig, TrainState};
use milearn::nn::{init_params, ArchitectureConfig};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = fn(&mut Desk) -> Outcome;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load_config(name: &str) -> RunConfig {
    let mut cfg = RunConfig::load(Some(&repo_root().join("configs").join(name))).expect("config loads");
    cfg.sync_arch();
    cfg.validate().expect("config is valid");
    cfg
}

fn bits(p: &ParamSet) -> Vec<u64> {
    p.flatten().iter().map(|v| v.to_bits()).collect()
}

fn train_model(cfg: &RunConfig, method: Method, seed: u64, env: &ReachEnv, ds: &DemoDataset) -> SavedModel {
    let mut cfg = cfg.clone();
    cfg.method = method;
    cfg.train.seed = seed;
    cfg.sync_arch();
    let spec = cfg.model_spec();
    let init = spec.init(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, INIT_SALT))).expect("trainable");
    let objective = spec.objective().expect("trainable");
    let state = meta_train(
        objective.as_ref(),
        &ds.train_data(env),
        &spec.train,
        TrainState::new(init, spec.train.outer_lr),
        &mut |_| Ok(()),
    )
    .expect("training finishes");
    SavedModel { spec, params: state.params }
}

/// Lazily built state shared by criteria 6, 8 and 9.
struct Desk {
    cfg: RunConfig,
    env: ReachEnv,
    data: Option<(DemoDataset, Duration)>,
    mil: Vec<Option<(SavedModel, Duration)>>,
}

impl Desk {
    fn new() -> Self {
        let cfg = load_config("desk.json");
        let env = ReachEnv::new(cfg.env.clone());
        Desk { cfg, env, data: None, mil: vec![None, None, None] }
    }

    fn dataset(&mut self) -> &DemoDataset {
        if self.data.is_none() {
            let t = Instant::now();
            let (ds, summary) = generate_dataset(&self.env, &self.cfg.generate).expect("generation succeeds");
            println!("  generated {} demos in {:.0} s", summary.demos, t.elapsed().as_secs_f64());
            self.data = Some((ds, t.elapsed()));
        }
        &self.data.as_ref().expect("set").0
    }

    fn mil(&mut self, seed: u64) -> SavedModel {
        let i = seed as usize;
        if self.mil[i].is_none() {
            self.dataset();
            let t = Instant::now();
            let ds = &self.data.as_ref().expect("set").0;
            let m = train_model(&self.cfg, Method::Mil, seed, &self.env, ds);
            println!("  trained MIL seed {seed} in {:.0} s", t.elapsed().as_secs_f64());
            self.mil[i] = Some((m, t.elapsed()));
        }
        self.mil[i].as_ref().expect("set").0.clone()
    }

    fn eval(&mut self, method: Method, model: Option<&SavedModel>, shots: usize) -> EvalReport {
        let opts = EvalOptions { shots, ..self.cfg.eval.clone() };
        let ds = self.dataset().clone();
        evaluate(&self.env, method, model, &ds, &opts).expect("evaluation succeeds")
    }
}

fn criterion_1(_: &mut Desk) -> Outcome {
    let t = Instant::now();
    let results: Vec<_> = meta_checks(0).into_iter().filter(|r| !r.name.contains("vision")).collect();
    let elapsed = t.elapsed();
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let max_params = results.iter().map(|r| r.params).max().unwrap_or(0);
    let pass = results.len() == 3
        && results.iter().all(|r| r.max_rel_err < DEFAULT_THRESHOLD)
        && max_params <= 500
        && elapsed < Duration::from_secs(120);
    let names: Vec<_> = results.iter().map(|r| format!("{} {:.1e}", r.name, r.max_rel_err)).collect();
    outcome(
        pass,
        format!("{}; worst {worst:.2e} < 1e-4, {max_params} params, {:.1} s", names.join(", "), elapsed.as_secs_f64()),
    )
}

fn criterion_2(_: &mut Desk) -> Outcome {
    let arch = ArchitectureConfig { two_head: false, ..tiny_arch() };
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let mut params = init_params(&arch, rng);
        params.insert("bt.z", params.get("bt.z").expect("bias transform").map(|_| 0.0));
        params.insert("fc0.b", params.get("fc0.b").expect("first bias").map(|_| 0.0));
        let demo = random_demo(&arch, 6, true, rng);
        let alpha = 0.05;
        let cfg = TrainConfig { inner_lr: alpha, ..Default::default() };
        let g = Graph::new();
        let bound = params.bind(&g);
        let loss = inner_loss_graph(&g, &arch, &cfg, &bound, &demo).expect("loss builds");
        let grads = gradient(loss, &bound, false).expect("gradient").values();
        let dy = grads.get("fc0.b").expect("bias gradient").data().to_vec();
        let wz = params.get("fc0.wz").expect("transform weights");
        let (dz, h) = (wz.rows(), wz.cols());
        let adapted = adapt(&arch, &cfg, &params, &[demo]).expect("adapts");
        let (z, wz2, b) =
            (adapted.get("bt.z").expect("z"), adapted.get("fc0.wz").expect("wz"), adapted.get("fc0.b").expect("b"));
        for j in 0..h {
            let proj: f64 = (0..dz).map(|i| wz.at2(i, j) * (0..h).map(|l| wz.at2(i, l) * dy[l]).sum::<f64>()).sum();
            let expected = -alpha * (proj + dy[j]);
            let got = (0..dz).map(|i| z.data()[i] * wz2.at2(i, j)).sum::<f64>() + b.data()[j];
            worst = worst.max((got - expected).abs());
        }
    }
    outcome(worst < 1e-8, format!("max deviation {worst:.2e} < 1e-8 over 10 draws"))
}

fn criterion_3(_: &mut Desk) -> Outcome {
    let arch = tiny_arch();
    let (mut zero, mut tied, mut kshot) = (true, true, true);
    for seed in 0..20 {
        let rng = &mut ChaCha8Rng::seed_from_u64(100 + seed);
        let params = init_params(&arch, rng);
        let train = random_demo(&arch, 5, true, rng);
        let val = random_demo(&arch, 5, true, rng);
        let task = [(vec![&train], &val)];
        for loss in [InnerLoss::Bc, InnerLoss::TwoHead, InnerLoss::ActionFree] {
            let cfg = TrainConfig { inner_lr: 0.0, inner_loss: loss, ..Default::default() };
            let m = meta_loss(&arch, &cfg, &params, &task).expect("meta loss");
            zero &= m.to_bits() == bc_loss(&arch, &params, &val).expect("bc").to_bits();
            let cfg = TrainConfig { inner_lr: 0.02, inner_loss: loss, ..Default::default() };
            let one = adapt(&arch, &cfg, &params, std::slice::from_ref(&train)).expect("adapts");
            let five = adapt(&arch, &cfg, &params, &vec![train.clone(); 5]).expect("adapts");
            kshot &= bits(&one) == bits(&five);
        }
        let bc = TrainConfig { inner_lr: 0.02, ..Default::default() };
        let th = TrainConfig { inner_loss: InnerLoss::TwoHead, tied_heads: true, ..bc.clone() };
        tied &= meta_loss(&arch, &bc, &params, &task).expect("bc").to_bits()
            == meta_loss(&arch, &th, &params, &task).expect("tied").to_bits();
    }
    outcome(
        zero && tied && kshot,
        format!("alpha=0 identity {zero}, tied head = bc {tied}, 5 identical = 1-shot {kshot} (exact, 20 draws)"),
    )
}

fn criterion_4(_: &mut Desk) -> Outcome {
    let arch = tiny_arch();
    let cfg = TrainConfig { inner_lr: 0.02, inner_loss: InnerLoss::ActionFree, ..Default::default() };
    let mut same = true;
    for seed in 0..20 {
        let rng = &mut ChaCha8Rng::seed_from_u64(200 + seed);
        let params = init_params(&arch, rng);
        let demo = random_demo(&arch, 6, true, rng);
        let mut other = demo.clone();
        other.actions = random_demo(&arch, 6, true, rng).actions;
        same &= bits(&adapt(&arch, &cfg, &params, &[demo]).expect("adapts"))
            == bits(&adapt(&arch, &cfg, &params, &[other]).expect("adapts"));
    }
    outcome(same, "adapted parameters bit-identical under replaced actions (20 draws)")
}

struct Linear {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl Dynamics for Linear {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
    fn jacobians(&self, _: &DVector<f64>, _: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }
}

struct Quadratic {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    qf: DMatrix<f64>,
}

impl Cost for Quadratic {
    fn running(&self, _: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * (x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)))
    }
    fn running_expansion(&self, _: usize, x: &DVector<f64>, u: &DVector<f64>) -> Expansion {
        Expansion {
            lx: &self.q * x,
            lu: &self.r * u,
            lxx: self.q.clone(),
            luu: self.r.clone(),
            lux: DMatrix::zeros(u.len(), x.len()),
        }
    }
    fn terminal(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.qf * x))
    }
    fn terminal_expansion(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (&self.qf * x, self.qf.clone())
    }
}

fn lqr_deviation() -> f64 {
    let l = Linear {
        a: DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 0.0, 0.05, 0.0, 0.0, 1.0, 0.0, 0.05, -0.1, 0.02, 0.97, 0.0, 0.0, -0.08, 0.01, 0.96],
        ),
        b: DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 0.1, 0.02, -0.01, 0.12]),
    };
    let c = Quadratic {
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.1, 0.1])),
        r: DMatrix::from_row_slice(2, 2, &[0.2, 0.03, 0.03, 0.4]),
        qf: DMatrix::from_diagonal(&DVector::from_vec(vec![50.0, 50.0, 1.0, 1.0])),
    };
    let horizon = 50;
    let x0 = DVector::from_vec(vec![0.4, -0.3, 0.0, 0.2]);
    let sol =
        solve(&l, &c, &x0, vec![DVector::zeros(2); horizon], &IlqgOptions { iterations: 1, ..Default::default() });
    let mut p = c.qf.clone();
    let mut gains = vec![DMatrix::zeros(2, 4); horizon];
    for t in (0..horizon).rev() {
        let btp = l.b.transpose() * &p;
        let k = -(&c.r + &btp * &l.b).try_inverse().expect("invertible") * &btp * &l.a;
        p = &c.q + l.a.transpose() * &p * &l.a + l.a.transpose() * &p * &l.b * &k;
        gains[t] = k;
    }
    sol.controller.gains.iter().zip(&gains).map(|(k, e)| (k - e).amax()).fold(0.0, f64::max)
}

fn criterion_5(_: &mut Desk) -> Outcome {
    let env = ReachEnv::new(EnvConfig::default());
    let cfg = ExpertConfig::default();
    let mut wins = 0;
    for seed in 0..100 {
        let task = env.config.sample_task(seed, Split::MetaTrain);
        let expert = ilqg_solve(&env, &task, 0, &cfg);
        let demo = generate_demo(&env, &expert, cfg.noise_sigma, milearn::expert::Modality::Full).expect("rollout");
        wins += demo.success().expect("success defined") as usize;
    }
    let dev = lqr_deviation();
    outcome(wins >= 95 && dev < 1e-8, format!("expert {wins}/100 >= 95; LQR gains vs Riccati {dev:.2e} < 1e-8"))
}

fn criterion_6(desk: &mut Desk) -> Outcome {
    let start = Instant::now();
    let c = &desk.cfg;
    let pinned = c.generate.meta_train_tasks == 300
        && c.generate.demos_per_task == 2
        && c.env.horizon == 50
        && c.eval.tasks == 20
        && c.eval.trials == 10;
    let mil = desk.mil(0);
    let r_mil = desk.eval(Method::Mil, Some(&mil), 1);
    let r_rand = desk.eval(Method::Random, None, 1);
    let ctx = {
        let ds = desk.dataset().clone();
        let t = Instant::now();
        let m = train_model(&desk.cfg, Method::Contextual, 0, &desk.env, &ds);
        println!("  trained contextual in {:.0} s", t.elapsed().as_secs_f64());
        m
    };
    let r_ctx = desk.eval(Method::Contextual, Some(&ctx), 1);
    let below = r_mil.post_below_pre.unwrap_or(0);
    let gen_time = desk.data.as_ref().map_or(Duration::ZERO, |d| d.1);
    let train_time = desk.mil[0].as_ref().map_or(Duration::ZERO, |m| m.1);
    let total = start.elapsed() + gen_time + train_time;
    let checks = [
        pinned,
        r_mil.success_rate >= 2.0 * r_rand.success_rate,
        r_mil.success_rate >= r_ctx.success_rate + 0.10,
        below * 10 >= 9 * r_mil.tasks.len(),
        total < Duration::from_secs(2 * 3600),
    ];
    outcome(
        checks.iter().all(|&c| c),
        format!(
            "MIL {:.3} vs random {:.3} (need >= 2x) vs contextual {:.3} (need +0.10); post<pre {below}/{}; {:.0} min",
            r_mil.success_rate,
            r_rand.success_rate,
            r_ctx.success_rate,
            r_mil.tasks.len(),
            total.as_secs_f64() / 60.0
        ),
    )
}

fn criterion_7(_: &mut Desk) -> Outcome {
    let cfg = load_config("vision.json");
    let env = ReachEnv::new(cfg.env.clone());
    let pinned = cfg.env.obs.vision
        && cfg.env.obs.image_width == 40
        && cfg.env.obs.image_height == 32
        && cfg.generate.meta_train_tasks == 50;
    let t = Instant::now();
    let (ds, _) = generate_dataset(&env, &cfg.generate).expect("generation succeeds");
    let spec = cfg.model_spec();
    let init = spec.init(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.train.seed, INIT_SALT))).expect("init");
    let objective = spec.objective().expect("objective");
    let state = meta_train(
        objective.as_ref(),
        &ds.train_data(&env),
        &spec.train,
        TrainState::new(init, spec.train.outer_lr),
        &mut |_| Ok(()),
    )
    .expect("training finishes");
    let first = state.history.first().and_then(|h| h.heldout_loss).unwrap_or(f64::NAN);
    let last = state.history.last().and_then(|h| h.heldout_loss).unwrap_or(f64::NAN);
    let mini: Vec<_> = meta_checks(0).into_iter().filter(|r| r.name.contains("vision")).collect();
    let mini_ok = mini.len() == 1 && mini[0].passed();
    outcome(
        pinned && last < first && mini_ok,
        format!(
            "held-out meta-loss {first:.4} -> {last:.4} over {} epochs ({:.0} s); mini 8x8 gradcheck {:.1e}",
            state.epoch,
            t.elapsed().as_secs_f64(),
            mini.first().map_or(f64::NAN, |r| r.max_rel_err)
        ),
    )
}

fn criterion_8(desk: &mut Desk) -> Outcome {
    let mut one = Vec::new();
    let mut five = Vec::new();
    for seed in 0..3 {
        let m = desk.mil(seed);
        one.push(desk.eval(Method::Mil, Some(&m), 1).success_rate);
        five.push(desk.eval(Method::Mil, Some(&m), 5).success_rate);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m1, m5) = (mean(&one), mean(&five));
    outcome(
        m5 >= m1 - 0.02,
        format!(
            "mean 5-shot {m5:.3} vs 1-shot {m1:.3} (need >= 1-shot - 0.02); per seed 1-shot {one:?}, 5-shot {five:?}"
        ),
    )
}

fn criterion_9(desk: &mut Desk) -> Outcome {
    // Full pipeline at small scale through the binary, twice.
    let small = r#"{"generate": {"meta_train_tasks": 12, "meta_test_tasks": 3},
        "arch": {"fc_hidden": 16}, "train": {"epochs": 2}, "eval": {"tasks": 3, "trials": 3}}"#;
    let run = || -> Vec<Vec<u8>> {
        let dir = tempfile::tempdir().expect("temp dir");
        let p = dir.path();
        std::fs::write(p.join("c.json"), small).expect("write config");
        let mil = |args: &[&str]| {
            let out = Command::new(env!("CARGO_BIN_EXE_mil")).current_dir(p).args(args).output().expect("binary runs");
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        };
        mil(&["generate", "--config", "c.json", "--seed", "3", "--out", "d.mil"]);
        mil(&["train", "--config", "c.json", "--seed", "3", "--data", "d.mil", "--out", "p.mil"]);
        mil(&["eval", "--config", "c.json", "--seed", "3", "--data", "d.mil", "--params", "p.mil", "--out", "r"]);
        ["d.mil", "p.mil", "p.mil.history.csv", "r.json", "r.csv"]
            .iter()
            .map(|f| std::fs::read(p.join(f)).expect("output exists"))
            .collect()
    };
    let small_same = run() == run();
    // Desk-scale evaluation files, twice.
    let m = desk.mil(0);
    let a = desk.eval(Method::Mil, Some(&m), 1);
    let b = desk.eval(Method::Mil, Some(&m), 1);
    let desk_same = a.to_json() == b.to_json() && a.to_csv() == b.to_csv();
    outcome(
        small_same && desk_same,
        format!("small pipeline identical {small_same}; desk-scale report files identical {desk_same}"),
    )
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("MIL_ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var_os("MIL_ACCEPTANCE_STRICT").is_some();
    let checks: [Check; 9] = [
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
    ];
    let mut desk = Desk::new();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (i, check) in checks.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let o = check(&mut desk);
        ran += 1;
        println!(
            "criterion {n}: {} ({:.0} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed.push(n);
        }
    }
    println!(
        "acceptance: {}/{ran} criteria passed{}",
        ran - failed.len(),
        if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
    );
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
