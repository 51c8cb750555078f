//! The `mil` command line: generate, train, eval, gradcheck.

use crate::autodiff::fault;
use crate::baselines::Method;
use crate::data::{
    evaluate, generate_dataset, mix_seed, read_checkpoint, read_dataset, read_model, write_checkpoint, write_dataset,
    write_model, DataError, EvalOptions, GenerateConfig, ModelSpec, SavedModel,
};
use crate::env::{EnvConfig, ReachEnv};
use crate::expert::Modality;
use crate::gradcheck;
use crate::meta::{meta_train, InnerLoss, MetaError, TrainConfig, TrainState};
use crate::nn::ArchitectureConfig;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_EXPERT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_MODALITY: i32 = 4;
pub const EXIT_GRADCHECK: i32 = 5;

pub const INIT_SALT: u64 = 0x696e6974;

/// A failure with its process exit code.
#[derive(Debug, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn meta_code(e: &MetaError) -> i32 {
    match e {
        MetaError::Diverged { .. } => EXIT_DIVERGED,
        MetaError::Modality { .. } | MetaError::ObsModality | MetaError::MissingActions => EXIT_MODALITY,
        _ => EXIT_CONFIG,
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match &e {
            DataError::Meta(m) => meta_code(m),
            _ => EXIT_CONFIG,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<MetaError> for CliError {
    fn from(e: MetaError) -> Self {
        CliError::new(meta_code(&e), e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::new(EXIT_CONFIG, format!("{}: {e}", path.display()))
}

/// Everything a run needs. Every section is optional in the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub generate: GenerateConfig,
    pub arch: ArchitectureConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub method: Method,
    pub lstm_width: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default(),
            generate: GenerateConfig::default(),
            arch: ArchitectureConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            method: Method::Mil,
            lstm_width: 512,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::new(EXIT_CONFIG, format!("{}:{}:{}: {e}", p.display(), e.line(), e.column()))
                })?
            }
        };
        Ok(cfg)
    }

    /// Aligns the network's input shape with the environment's observations.
    pub fn sync_arch(&mut self) {
        let obs = &self.env.obs;
        self.arch.vision = obs.vision;
        self.arch.state_dim = if obs.vision { obs.proprio_dim() } else { obs.state_dim() };
        self.arch.image_height = obs.image_height;
        self.arch.image_width = obs.image_width;
        self.arch.image_channels = 3;
        if self.train.inner_loss.needs_two_heads() && !self.train.tied_heads {
            self.arch.two_head = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate().map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
        self.train.validate()?;
        self.train.check_arch(&self.arch)?;
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            method: self.method,
            arch: self.arch.clone(),
            lstm_width: self.lstm_width,
            train: self.train.clone(),
            env_hash: self.env.hash(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mil", version, about = "One-shot imitation through meta-learning on planar reaching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path (dataset, parameter file, or report stem).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub inner_loss: Option<InnerLoss>,
    #[arg(long, overrides_with = "no_vision")]
    pub vision: bool,
    #[arg(long, overrides_with = "vision")]
    pub no_vision: bool,
    /// Load files produced under a different environment configuration.
    #[arg(long)]
    pub allow_env_mismatch: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve expert demonstrations and write a dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Meta-train (or train a baseline) on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate one-shot success on meta-test tasks.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Parameter file; not needed for `--method random`.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Modality of the conditioning demos; defaults to the dataset's.
        #[arg(long)]
        demo_modality: Option<Modality>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Flip the sign of one op's backward pass (testing the checker).
        #[arg(long)]
        inject_fault: Option<String>,
    },
}

fn apply(common: &Common, cfg: &mut RunConfig) {
    if let Some(s) = common.seed {
        cfg.generate.seed = s;
        cfg.train.seed = s;
        cfg.eval.seed = s;
    }
    if let Some(m) = common.method {
        cfg.method = m;
    }
    if let Some(k) = common.shots {
        cfg.train.shots = k;
        cfg.eval.shots = k;
    }
    if let Some(l) = common.inner_loss {
        cfg.train.inner_loss = l;
    }
    if common.vision {
        cfg.env.obs.vision = true;
    }
    if common.no_vision {
        cfg.env.obs.vision = false;
    }
    cfg.sync_arch();
}

fn out_path(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Runs a parsed command, returning what it printed to standard output.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate { common } => cmd_generate(&common),
        Command::Train { common, data, epochs, resume } => cmd_train(&common, &data, epochs, resume.as_deref()),
        Command::Eval { common, data, params, tasks, trials, demo_modality } => {
            cmd_eval(&common, &data, params.as_deref(), tasks, trials, demo_modality)
        }
        Command::Gradcheck { common, inject_fault } => cmd_gradcheck(&common, inject_fault.as_deref()),
    }
}

pub fn cmd_generate(common: &Common) -> Result<String> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    apply(common, &mut cfg);
    cfg.generate.validate()?;
    let env = ReachEnv::new(cfg.env.clone());
    let (ds, summary) = generate_dataset(&env, &cfg.generate)?;
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    if summary.expert_success_rate < cfg.generate.min_expert_success {
        return Err(CliError::new(
            EXIT_EXPERT,
            format!(
                "{text}expert success {:.3} is below the required {:.3}; dataset not written",
                summary.expert_success_rate, cfg.generate.min_expert_success
            ),
        ));
    }
    write_dataset(&ds, &out_path(common, "dataset.mil"))?;
    Ok(text)
}

#[derive(Serialize)]
struct TrainSummary {
    method: Method,
    epochs: usize,
    final_train_loss: f64,
    final_heldout_loss: Option<f64>,
    params: usize,
}

fn history_csv(state: &TrainState) -> String {
    let mut s = String::from("epoch,train_loss,heldout_loss\n");
    for h in &state.history {
        let held = h.heldout_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", h.epoch, h.train_loss, held);
    }
    s
}

pub fn cmd_train(common: &Common, data: &Path, epochs: Option<usize>, resume: Option<&Path>) -> Result<String> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    apply(common, &mut cfg);
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    if cfg.method == Method::Random {
        return Err(CliError::new(EXIT_CONFIG, "the random policy has nothing to train"));
    }
    let env = ReachEnv::new(cfg.env.clone());
    let ds = read_dataset(data, Some(&cfg.env), common.allow_env_mismatch)?;
    let spec = cfg.model_spec();
    let state = match resume {
        Some(p) => {
            let (saved, state) = read_checkpoint(p)?;
            if saved.method != spec.method || saved.arch != spec.arch {
                return Err(CliError::new(EXIT_CONFIG, "checkpoint was written by a different method or architecture"));
            }
            state
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.train.seed, INIT_SALT));
            TrainState::new(spec.init(&mut rng)?, cfg.train.outer_lr)
        }
    };
    let out = out_path(common, "params.mil");
    let ckpt = with_suffix(&out, ".ckpt");
    let objective = spec.objective()?;
    let train_data = ds.train_data(&env);
    let state = meta_train(objective.as_ref(), &train_data, &cfg.train, state, &mut |s| {
        write_checkpoint(&spec, s, &ckpt).map_err(|e| MetaError::Other(e.to_string()))
    })?;
    write_model(&SavedModel { spec: spec.clone(), params: state.params.clone() }, &out)?;
    let hist = with_suffix(&out, ".history.csv");
    std::fs::write(&hist, history_csv(&state)).map_err(io_err(&hist))?;
    let last = state.history.last().expect("history has the initial record");
    let summary = TrainSummary {
        method: spec.method,
        epochs: state.epoch,
        final_train_loss: last.train_loss,
        final_heldout_loss: last.heldout_loss,
        params: state.params.numel(),
    };
    Ok(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")
}

pub fn cmd_eval(
    common: &Common,
    data: &Path,
    params: Option<&Path>,
    tasks: Option<usize>,
    trials: Option<usize>,
    demo_modality: Option<Modality>,
) -> Result<String> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    apply(common, &mut cfg);
    if let Some(t) = tasks {
        cfg.eval.tasks = t;
    }
    if let Some(t) = trials {
        cfg.eval.trials = t;
    }
    let model = match (cfg.method, params) {
        (Method::Random, _) => None,
        (_, None) => {
            return Err(CliError::new(EXIT_CONFIG, format!("--params is required for --method {}", cfg.method)))
        }
        (_, Some(p)) => {
            let m = read_model(p)?;
            if m.spec.env_hash != cfg.env.hash() && !common.allow_env_mismatch {
                return Err(DataError::EnvMismatch { expected: cfg.env.hash(), found: m.spec.env_hash }.into());
            }
            if common.inner_loss.is_some_and(|l| l != m.spec.train.inner_loss) {
                return Err(CliError::new(
                    EXIT_CONFIG,
                    "--inner-loss differs from the one the parameters were trained with",
                ));
            }
            Some(m)
        }
    };
    let env = ReachEnv::new(cfg.env.clone());
    let mut ds = read_dataset(data, Some(&cfg.env), common.allow_env_mismatch)?;
    if let Some(m) = demo_modality {
        ds = ds.with_modality(m);
    }
    let report = evaluate(&env, cfg.method, model.as_ref(), &ds, &cfg.eval)?;
    let stem = out_path(common, &format!("eval-{}-k{}", cfg.method, cfg.eval.shots));
    report.write(&stem)?;
    log::info!("evaluation took {:.1} s", report.wall_clock_secs);
    Ok(format!(
        "{} k={}: success {}/{} = {:.3}\n",
        report.method,
        report.shots,
        report.successes,
        report.total_trials(),
        report.success_rate
    ))
}

pub fn cmd_gradcheck(common: &Common, inject: Option<&str>) -> Result<String> {
    let _guard = match inject {
        None => None,
        Some(op) => Some(fault::inject(op).ok_or_else(|| {
            CliError::new(EXIT_CONFIG, format!("unknown op `{op}`; known ops: {}", fault::OP_NAMES.join(", ")))
        })?),
    };
    let results = gradcheck::run_all(common.seed.unwrap_or(0));
    let mut text = String::new();
    for r in &results {
        let _ = writeln!(
            text,
            "{:<28} params {:>5}  max rel err {:.3e}  {}",
            r.name,
            r.params,
            r.max_rel_err,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = &common.out {
        let json = serde_json::to_string_pretty(&results).expect("results serialize") + "\n";
        std::fs::write(out, json).map_err(io_err(out))?;
    }
    let failing: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if failing.is_empty() {
        Ok(text)
    } else {
        Err(CliError::new(EXIT_GRADCHECK, format!("{text}failing checks: {}", failing.join(", "))))
    }
}

/// Entry point of the `mil` binary.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
