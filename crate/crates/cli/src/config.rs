//! Run configuration: defaults, `key = value` config files, and
//! command-line flag overrides (in that precedence order).

use std::path::PathBuf;

use kgrec::error::{Error, Result};
use kgrec::ingest;
use kgrec::model::ModelConfig;
use kgrec::train::TrainConfig;
use kgrec::vrkg::ClusterStrategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    None,
    K1,
    PerRelation,
    CustomK,
}

impl Ablation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::K1 => "k1",
            Ablation::PerRelation => "per-relation",
            Ablation::CustomK => "custom-k",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "k1" => Ok(Ablation::K1),
            "per-relation" => Ok(Ablation::PerRelation),
            "custom-k" => Ok(Ablation::CustomK),
            other => Err(Error::Config(format!(
                "unknown ablation '{other}' (expected none, k1, per-relation, custom-k)"
            ))),
        }
    }
}

/// Everything a run needs, before ablation resolution.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub interactions: Option<PathBuf>,
    pub kg: Option<PathBuf>,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub manifest: Option<PathBuf>,

    pub dim: usize,
    pub k: usize,
    pub layers: usize,
    pub iterations: usize,
    pub bipartite_item_update: bool,

    pub lr: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub patience: Option<usize>,

    pub ratio: f64,
    pub stratified_split: bool,
    pub cluster_strategy: ClusterStrategy,
    pub ablation: Ablation,
    pub cutoffs: Vec<usize>,
    pub threads: Option<usize>,
    pub verified: bool,
    pub dump_layers: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            interactions: None,
            kg: None,
            out: PathBuf::from("out"),
            checkpoint: None,
            manifest: None,
            dim: 64,
            k: 3,
            layers: 2,
            iterations: 3,
            bipartite_item_update: false,
            lr: 1e-4,
            lambda: 1e-5,
            batch_size: 1024,
            epochs: 1000,
            eval_every: 10,
            seed: 42,
            patience: None,
            ratio: 0.8,
            stratified_split: false,
            cluster_strategy: ClusterStrategy::EntityGrounded,
            ablation: Ablation::None,
            cutoffs: vec![1, 5, 10, 20],
            threads: None,
            verified: false,
            dump_layers: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean for {key}: {value:?}"
        ))),
    }
}

fn parse_cutoffs(value: &str) -> Result<Vec<usize>> {
    let cutoffs: Vec<usize> = value
        .split(',')
        .map(|s| parse_num::<usize>("cutoffs", s.trim()))
        .collect::<Result<_>>()?;
    if cutoffs.is_empty() || cutoffs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!(
            "cutoffs must be strictly increasing: {value:?}"
        )));
    }
    Ok(cutoffs)
}

impl RunConfig {
    /// Applies one `key = value` pair from the config file or one
    /// `--key value` flag pair from the command line.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "interactions" => self.interactions = Some(PathBuf::from(value)),
            "kg" => self.kg = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "dim" => self.dim = parse_num(key, value)?,
            "k" => self.k = parse_num(key, value)?,
            "layers" => self.layers = parse_num(key, value)?,
            "iterations" => self.iterations = parse_num(key, value)?,
            "bipartite-item-update" => self.bipartite_item_update = parse_bool(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "batch-size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "eval-every" => self.eval_every = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "patience" => self.patience = Some(parse_num(key, value)?),
            "ratio" => self.ratio = parse_num(key, value)?,
            "stratified-split" => self.stratified_split = parse_bool(key, value)?,
            "cluster-strategy" => self.cluster_strategy = value.parse()?,
            "ablation" => self.ablation = value.parse()?,
            "cutoffs" => self.cutoffs = parse_cutoffs(value)?,
            "threads" => self.threads = Some(parse_num(key, value)?),
            "verified" => self.verified = parse_bool(key, value)?,
            "dump-layers" => self.dump_layers = parse_bool(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown configuration key '{other}'"
                )))
            }
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &std::path::Path) -> Result<()> {
        for (key, value) in ingest::read_manifest(path)? {
            self.apply(&key, &value)?;
        }
        Ok(())
    }

    pub fn validate_common(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!(
                "ratio must be in (0, 1), got {}",
                self.ratio
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch-size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval-every must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive and lambda nonnegative (got {}, {})",
                self.lr, self.lambda
            )));
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            lambda: self.lambda,
            batch_size: self.batch_size,
            epochs: self.epochs,
            eval_every: self.eval_every,
            seed: self.seed,
            patience: self.patience,
            ..TrainConfig::default()
        }
    }

    /// The model config once the effective K is known (ablations may
    /// override it after the KG is loaded).
    pub fn model_config(&self, effective_k: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            iterations: self.iterations,
            k: effective_k,
            dim: self.dim,
            bipartite_item_update: self.bipartite_item_update,
        }
    }
}

/// Parses `--key value` / `--key=value` flag pairs after the subcommand,
/// applying `--config FILE` first so explicit flags win.
pub fn from_args(args: &[String]) -> Result<RunConfig> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut config_path: Option<PathBuf> = None;
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(stripped) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!(
                "unexpected positional argument {arg:?}"
            )));
        };
        let (key, value) = match stripped.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                // Bare boolean flags.
                if matches!(
                    stripped,
                    "verified" | "stratified-split" | "bipartite-item-update" | "dump-layers"
                ) {
                    (stripped.to_string(), "true".to_string())
                } else {
                    i += 1;
                    let value = args.get(i).ok_or_else(|| {
                        Error::Config(format!("flag --{stripped} expects a value"))
                    })?;
                    (stripped.to_string(), value.clone())
                }
            }
        };
        if key == "config" {
            config_path = Some(PathBuf::from(value));
        } else {
            pairs.push((key, value));
        }
        i += 1;
    }
    let mut cfg = RunConfig::default();
    if let Some(path) = config_path {
        cfg.load_file(&path)?;
    }
    for (key, value) in &pairs {
        cfg.apply(key, value)?;
    }
    Ok(cfg)
}
