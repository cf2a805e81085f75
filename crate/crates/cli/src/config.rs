//! Experiment configuration: a TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};

use prefnet::correlation::SelectionConfig;
use prefnet::evaluation::SPARSITY_FRACTIONS;
use prefnet::features::{FeatureToggles, IdentityTying, Sigma};
use prefnet::inference::{CandidateMode, Ranking, TopNConfig};
use prefnet::trainer::TrainConfig;

/// Flags shared by every subcommand. Any flag given here wins over the
/// same key in `--config`.
#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// TOML file with any of the keys below (dashes become underscores).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Training ratings (tab-separated user, item, rating[, timestamp]).
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Held-out ratings in the same format.
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// User attribute file (`id|age|sex|occupation|zip`).
    #[arg(long, value_name = "FILE")]
    pub users: Option<PathBuf>,
    /// Item attribute file (`id|title|...|19 genre flags`).
    #[arg(long, value_name = "FILE")]
    pub items: Option<PathBuf>,
    /// Top of the rating scale.
    #[arg(long, value_name = "S")]
    pub scale: Option<u8>,
    /// Comma list drawn from identity, content, correlation.
    #[arg(long, value_name = "LIST")]
    pub features: Option<String>,
    #[arg(long, value_name = "RATE")]
    pub lr: Option<f64>,
    #[arg(long, value_name = "SIGMA")]
    pub sigma: Option<f64>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Length N of each recommendation list.
    #[arg(long, value_name = "N")]
    pub topn: Option<usize>,
    /// Candidate pool size C.
    #[arg(long, value_name = "C")]
    pub candidates: Option<usize>,
    /// Neighbours per anchor K, or `all`.
    #[arg(long, value_name = "K")]
    pub neighbors: Option<String>,
    /// `maximal` or `expected` energy change.
    #[arg(long, value_name = "KIND")]
    pub ranking: Option<String>,
    /// `user-based`, `item-based` or `union`.
    #[arg(long, value_name = "MODE")]
    pub candidate_mode: Option<String>,
    /// `per-entity` or `global` identity weights.
    #[arg(long, value_name = "TYING")]
    pub tying: Option<String>,
    /// Co-ratings a pair needs before it gets a correlation weight.
    #[arg(long, value_name = "N")]
    pub min_co_ratings: Option<u32>,
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// `user,item` pairs to predict (defaults to the test file).
    #[arg(long, value_name = "FILE")]
    pub queries: Option<PathBuf>,
    /// User ids to recommend for, one per line (defaults to test users).
    #[arg(long, value_name = "FILE")]
    pub for_users: Option<PathBuf>,
    /// Training fractions for `sweep`.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// List lengths for the recall sweep in `evaluate`.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub recall_n: Option<Vec<usize>>,
}

/// Keys accepted in the config file.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    train: Option<PathBuf>,
    test: Option<PathBuf>,
    users: Option<PathBuf>,
    items: Option<PathBuf>,
    scale: Option<u8>,
    features: Option<String>,
    lr: Option<f64>,
    sigma: Option<f64>,
    epochs: Option<usize>,
    topn: Option<usize>,
    candidates: Option<usize>,
    neighbors: Option<toml::Value>,
    ranking: Option<String>,
    candidate_mode: Option<String>,
    tying: Option<String>,
    min_co_ratings: Option<u32>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    queries: Option<PathBuf>,
    for_users: Option<PathBuf>,
    fractions: Option<Vec<f64>>,
    recall_n: Option<Vec<usize>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved settings of one run.
#[derive(Serialize, Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub users_path: Option<PathBuf>,
    pub items_path: Option<PathBuf>,
    pub scale: u8,
    pub features: FeatureToggles,
    pub tying: IdentityTying,
    pub selection: SelectionConfig,
    pub train: TrainConfig,
    pub top_n: TopNConfig,
    pub fractions: Vec<f64>,
    pub recall_n: Vec<usize>,
    pub out: PathBuf,
    pub queries: Option<PathBuf>,
    pub for_users: Option<PathBuf>,
}

pub const DEFAULT_RECALL_N: [usize; 8] = [5, 10, 20, 30, 50, 75, 100, 150];

/// Merges flags over the file and reports every problem found, not just
/// the first.
/// The message of a library error without its category prefix.
fn problem(e: &prefnet::Error) -> String {
    match e {
        prefnet::Error::Validation(m) => m.clone(),
        other => other.to_string(),
    }
}

pub fn resolve(args: &RunArgs, file: FileConfig) -> Result<ExperimentConfig, Vec<String>> {
    let mut errors = Vec::new();
    macro_rules! pick {
        ($name:ident) => {
            args.$name.clone().or(file.$name)
        };
    }

    let features = match FeatureToggles::parse(&pick!(features).unwrap_or_else(|| "identity,content,correlation".into())) {
        Ok(f) if f.any() => f,
        Ok(_) => {
            errors.push("features: at least one of identity, content, correlation must be enabled".into());
            FeatureToggles::ALL
        }
        Err(e) => {
            errors.push(format!("features: {}", problem(&e)));
            FeatureToggles::ALL
        }
    };
    let tying = match pick!(tying).as_deref() {
        None | Some("per-entity") => IdentityTying::PerEntity,
        Some("global") => IdentityTying::Global,
        Some(other) => {
            errors.push(format!("tying: expected per-entity or global, got {other:?}"));
            IdentityTying::PerEntity
        }
    };
    let ranking = match Ranking::parse(pick!(ranking).as_deref().unwrap_or("expected")) {
        Ok(r) => r,
        Err(e) => {
            errors.push(format!("ranking: {}", problem(&e)));
            Ranking::ExpectedEnergy
        }
    };
    let mode = match CandidateMode::parse(pick!(candidate_mode).as_deref().unwrap_or("union")) {
        Ok(m) => m,
        Err(e) => {
            errors.push(format!("candidate-mode: {}", problem(&e)));
            CandidateMode::Union
        }
    };
    let neighbors_raw = args.neighbors.clone().or_else(|| {
        file.neighbors.as_ref().map(|v| match v {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    });
    let neighbors = match neighbors_raw.as_deref() {
        None => Some(100),
        Some("all") => None,
        Some(s) => match s.parse::<usize>() {
            Ok(k) if k > 0 => Some(k),
            _ => {
                errors.push(format!("neighbors: expected a positive integer or `all`, got {s:?}"));
                Some(100)
            }
        },
    };

    let scale = pick!(scale).unwrap_or(5);
    if !(2..=10).contains(&scale) {
        errors.push(format!("scale: must lie in 2..=10, got {scale}"));
    }
    let lr = pick!(lr).unwrap_or(0.001);
    let sigma = pick!(sigma).unwrap_or(1.0);
    let epochs = pick!(epochs).unwrap_or(3);
    let train = TrainConfig {
        learning_rate: lr,
        sigma: Sigma::uniform(sigma),
        epochs,
        seed: pick!(seed).unwrap_or(0),
        ..TrainConfig::default()
    };
    if let Err(e) = train.validate() {
        errors.extend(problem(&e).split("; ").map(String::from));
    }

    let n = pick!(topn).unwrap_or(20);
    let candidates = pick!(candidates).unwrap_or(500);
    if n == 0 {
        errors.push("topn: must be at least 1".into());
    }
    if candidates < n {
        errors.push(format!("candidates ({candidates}) must be at least topn ({n})"));
    }
    let min_co = pick!(min_co_ratings).unwrap_or(2);
    if min_co == 0 {
        errors.push("min-co-ratings: must be at least 1".into());
    }

    let fractions = pick!(fractions).unwrap_or_else(|| SPARSITY_FRACTIONS.to_vec());
    if fractions.is_empty() {
        errors.push("fractions: list is empty".into());
    }
    for f in &fractions {
        if !(*f > 0.0 && *f <= 1.0) {
            errors.push(format!("fractions: {f} is outside (0, 1]"));
        }
    }
    let recall_n = pick!(recall_n).unwrap_or_else(|| DEFAULT_RECALL_N.to_vec());
    if recall_n.windows(2).any(|w| w[0] > w[1]) {
        errors.push("recall-n: list lengths must be ascending".into());
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(ExperimentConfig {
        train_path: pick!(train),
        test_path: pick!(test),
        users_path: pick!(users),
        items_path: pick!(items),
        scale,
        features,
        tying,
        selection: SelectionConfig {
            min_user_co_ratings: min_co,
            min_item_co_ratings: min_co,
        },
        train,
        top_n: TopNConfig {
            n,
            candidates,
            neighbors,
            mode,
            ranking,
        },
        fractions,
        recall_n,
        out: pick!(out).unwrap_or_else(|| PathBuf::from("out")),
        queries: pick!(queries),
        for_users: pick!(for_users),
    })
}
