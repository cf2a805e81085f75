//! Model checkpoints: a versioned text file of named parameter blocks, a
//! JSON metadata sidecar and the training report.
//!
//! ```text
//! prefnet-params 1
//! block item_identity 1683
//! 0 0
//! 1 0.0123
//! ...
//! block item_pair 2
//! 1 7 0.25
//! 3 9 -0.01
//! ```
//!
//! Identity and content keys are entity ids or attribute dimensions, `*`
//! for globally tied identity weights, and `a b` for pairs. Loading rebuilds
//! the selected pairs from the pair keys, so a checkpoint plus its training
//! table fully determines the model.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlation::{PairIndex, SelectedPairs, SelectionConfig};
use crate::dataset::{compute_means, AttributeCatalog, RatingTable};
use crate::error::{Error, Result};
use crate::features::{Block, FeatureToggles, IdentityTying, Layout, ParameterVector};
use crate::model::ModelContext;
use crate::trainer::{FittedModel, TrainConfig, TrainReport};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "prefnet-params";
pub const PARAMS_FILE: &str = "params.txt";
pub const META_FILE: &str = "meta.json";
pub const REPORT_FILE: &str = "train_report.json";

/// Hex SHA-256 of the table's canonical tab-separated form.
pub fn table_hash(table: &RatingTable) -> String {
    let mut buf = Vec::new();
    table.write_tsv(&mut buf).expect("writing to memory");
    hex::encode(Sha256::digest(&buf))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub scale: u8,
    pub split_hash: String,
    pub train_size: usize,
    pub selection: SelectionConfig,
    pub tying: IdentityTying,
    pub features: FeatureToggles,
    pub item_slots: usize,
    pub user_slots: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub pairs: SelectedPairs,
    pub params: ParameterVector,
    pub report: Option<TrainReport>,
}

impl Checkpoint {
    pub fn from_model(model: &FittedModel, selection: &SelectionConfig, train: &TrainConfig) -> Self {
        let layout = *model.params.layout();
        Checkpoint {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                scale: model.ctx.scale(),
                split_hash: table_hash(model.ctx.table()),
                train_size: model.ctx.table().len(),
                selection: *selection,
                tying: layout.tying,
                features: model.ctx.features(),
                item_slots: layout.item_slots,
                user_slots: layout.user_slots,
                train: *train,
            },
            pairs: model.ctx.pairs().clone(),
            params: model.params.clone(),
            report: Some(model.report.clone()),
        }
    }

    /// Rebinds the checkpoint to its training table, which must hash to the
    /// recorded split.
    pub fn into_context(self, table: RatingTable, attrs: AttributeCatalog) -> Result<(ModelContext, ParameterVector)> {
        let hash = table_hash(&table);
        if hash != self.meta.split_hash {
            return Err(Error::Checkpoint(format!(
                "training data does not match the checkpoint (hash {hash}, expected {})",
                self.meta.split_hash
            )));
        }
        let means = compute_means(&table);
        let ctx = ModelContext::with_pairs(table, means, attrs, self.pairs, self.meta.features);
        if ctx.layout(self.meta.tying) != *self.params.layout() {
            return Err(Error::Checkpoint("parameter layout does not match the training data".into()));
        }
        Ok((ctx, self.params))
    }
}

fn key_of(layout: &Layout, pairs: &SelectedPairs, block: Block, k: usize) -> String {
    match block {
        Block::ItemIdentity | Block::UserIdentity if layout.tying == IdentityTying::Global => "*".into(),
        Block::ItemPair => {
            let (a, b) = pairs.item_pairs.pair(k);
            format!("{a} {b}")
        }
        Block::UserPair => {
            let (a, b) = pairs.user_pairs.pair(k);
            format!("{a} {b}")
        }
        _ => k.to_string(),
    }
}

/// Text form of the parameter blocks.
pub fn encode_params(params: &ParameterVector, pairs: &SelectedPairs) -> String {
    let layout = params.layout();
    let mut out = String::new();
    writeln!(out, "{MAGIC} {FORMAT_VERSION}").unwrap();
    for block in Block::ALL {
        let values = params.block(block);
        writeln!(out, "block {} {}", block.tag(), values.len()).unwrap();
        for (k, w) in values.iter().enumerate() {
            writeln!(out, "{} {w}", key_of(layout, pairs, block, k)).unwrap();
        }
    }
    out
}

/// Parses [`encode_params`] output given the identity layout recorded in
/// the metadata.
pub fn decode_params(text: &str, meta: &CheckpointMeta) -> Result<(ParameterVector, SelectedPairs)> {
    let bad = |line: usize, m: String| Error::Checkpoint(format!("{PARAMS_FILE} line {line}: {m}"));
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l));
    match lines.next() {
        Some((_, l)) if l == format!("{MAGIC} {FORMAT_VERSION}") => {}
        Some((n, l)) => return Err(bad(n, format!("unsupported header {l:?}"))),
        None => return Err(bad(1, "empty file".into())),
    }

    let mut blocks: Vec<(Block, Vec<(String, f64)>)> = Vec::new();
    while let Some((n, line)) = lines.next() {
        let head: Vec<&str> = line.split_whitespace().collect();
        let (block, count) = match head.as_slice() {
            ["block", tag, count] => (
                Block::from_tag(tag).ok_or_else(|| bad(n, format!("unknown block {tag:?}")))?,
                count.parse::<usize>().map_err(|_| bad(n, format!("bad count {count:?}")))?,
            ),
            _ => return Err(bad(n, format!("expected a block header, got {line:?}"))),
        };
        if blocks.iter().any(|(b, _)| *b == block) {
            return Err(bad(n, format!("block {} repeated", block.tag())));
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, line) = lines.next().ok_or_else(|| bad(n, format!("block {} ends early", block.tag())))?;
            let (key, value) = line.rsplit_once(' ').ok_or_else(|| bad(n, format!("bad entry {line:?}")))?;
            let value: f64 = value.parse().map_err(|_| bad(n, format!("bad value {value:?}")))?;
            entries.push((key.to_string(), value));
        }
        blocks.push((block, entries));
    }

    let pair_keys = |block: Block| -> Result<Vec<(u32, u32)>> {
        let Some((_, entries)) = blocks.iter().find(|(b, _)| *b == block) else {
            return Ok(Vec::new());
        };
        entries
            .iter()
            .map(|(key, _)| {
                let parsed = key.split_once(' ').and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
                match parsed {
                    Some((a, b)) if a < b => Ok((a, b)),
                    _ => Err(Error::Checkpoint(format!("bad pair key {key:?} in {}", block.tag()))),
                }
            })
            .collect()
    };
    let item_keys = pair_keys(Block::ItemPair)?;
    let user_keys = pair_keys(Block::UserPair)?;
    let pairs = SelectedPairs {
        user_pairs: PairIndex::from_pairs(user_keys.iter().copied()),
        item_pairs: PairIndex::from_pairs(item_keys.iter().copied()),
    };
    if pairs.user_pairs.pairs() != user_keys.as_slice() || pairs.item_pairs.pairs() != item_keys.as_slice() {
        return Err(Error::Checkpoint("pair keys must be unique and ascending".into()));
    }

    let layout = Layout::new(meta.tying, meta.item_slots, meta.user_slots, &pairs);
    let mut params = ParameterVector::zeros(layout);
    for block in Block::ALL {
        let entries = blocks.iter().find(|(b, _)| *b == block).map(|(_, e)| e.as_slice()).unwrap_or(&[]);
        if entries.len() != layout.block_len(block) {
            return Err(Error::Checkpoint(format!(
                "block {} has {} entries, expected {}",
                block.tag(),
                entries.len(),
                layout.block_len(block)
            )));
        }
        let target = params.block_mut(block);
        for (k, (key, value)) in entries.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::Checkpoint(format!("non-finite weight in {}", block.tag())));
            }
            if !matches!(block, Block::ItemPair | Block::UserPair) {
                let expected = if meta.tying == IdentityTying::Global && matches!(block, Block::ItemIdentity | Block::UserIdentity) {
                    "*".to_string()
                } else {
                    k.to_string()
                };
                if *key != expected {
                    return Err(Error::Checkpoint(format!("block {} key {key:?}, expected {expected}", block.tag())));
                }
            }
            target[k] = *value;
        }
    }
    Ok((params, pairs))
}

pub fn save(dir: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write(PARAMS_FILE, encode_params(&checkpoint.params, &checkpoint.pairs).as_bytes())?;
    write(META_FILE, &serde_json::to_vec_pretty(&checkpoint.meta)?)?;
    if let Some(report) = &checkpoint.report {
        write(REPORT_FILE, &serde_json::to_vec_pretty(report)?)?;
    }
    Ok(())
}

pub fn load(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let read = |name: &str| -> Result<(PathBuf, Vec<u8>)> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok((path, bytes))
    };
    if !dir.join(META_FILE).is_file() || !dir.join(PARAMS_FILE).is_file() {
        return Err(Error::Checkpoint(format!(
            "no checkpoint in {} (expected {META_FILE} and {PARAMS_FILE}; run `train` first)",
            dir.display()
        )));
    }
    let (_, meta_bytes) = read(META_FILE)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", meta.format_version)));
    }
    let (path, params_bytes) = read(PARAMS_FILE)?;
    let text = String::from_utf8(params_bytes).map_err(|_| Error::Checkpoint(format!("{} is not UTF-8", path.display())))?;
    let (params, pairs) = decode_params(&text, &meta)?;
    let report = match dir.join(REPORT_FILE).is_file() {
        true => Some(serde_json::from_slice(&read(REPORT_FILE)?.1)?),
        false => None,
    };
    Ok(Checkpoint { meta, pairs, params, report })
}
