//! Node and edge feature functions and the blocked parameter vector.

use serde::{Deserialize, Serialize};

use crate::correlation::{PairKind, SelectedPairs};
use crate::dataset::{AttributeCatalog, ItemId, MeanStats, UserId, ITEM_ATTR_DIMS, USER_ATTR_DIMS};
use crate::error::{Error, Result};

/// Normalised closeness of a deviation: `1 - alpha / (S - 1)`.
#[inline]
pub fn g(alpha: f64, scale: u8) -> f64 {
    1.0 - alpha / (scale as f64 - 1.0)
}

/// Which feature families a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureToggles {
    pub identity: bool,
    pub content: bool,
    pub correlation: bool,
}

impl FeatureToggles {
    pub const ALL: FeatureToggles = FeatureToggles {
        identity: true,
        content: true,
        correlation: true,
    };
    pub const CONTENT_ONLY: FeatureToggles = FeatureToggles {
        identity: false,
        content: true,
        correlation: false,
    };
    pub const CORRELATION_ONLY: FeatureToggles = FeatureToggles {
        identity: false,
        content: false,
        correlation: true,
    };

    pub fn any(&self) -> bool {
        self.identity || self.content || self.correlation
    }

    /// Parses a comma list such as `identity,content,correlation`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut t = FeatureToggles {
            identity: false,
            content: false,
            correlation: false,
        };
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "identity" => t.identity = true,
                "content" => t.content = true,
                "correlation" => t.correlation = true,
                other => return Err(Error::Validation(format!("unknown feature family {other:?}"))),
            }
        }
        Ok(t)
    }

    pub fn label(&self) -> String {
        let mut names = Vec::new();
        if self.identity {
            names.push("identity");
        }
        if self.content {
            names.push("content");
        }
        if self.correlation {
            names.push("correlation");
        }
        names.join(",")
    }
}

/// Feature values of a single rating node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures {
    /// g(|r - r̄_i|)
    pub item_specific: f64,
    /// g(|r - r̄_u|)
    pub user_specific: f64,
    /// a_i * g(|r - r̄_u|)
    pub content_item: Vec<f64>,
    /// a_u * g(|r - r̄_i|)
    pub content_user: Vec<f64>,
}

pub fn node_features(
    rating: u8,
    user: UserId,
    item: ItemId,
    means: &MeanStats,
    attrs: &AttributeCatalog,
    scale: u8,
) -> NodeFeatures {
    let r = rating as f64;
    let item_specific = g((r - means.item_mean_or_global(item)).abs(), scale);
    let user_specific = g((r - means.user_mean_or_global(user)).abs(), scale);
    let mut content_item = vec![0.0; ITEM_ATTR_DIMS];
    for &d in attrs.item_dims(item) {
        content_item[d as usize] = user_specific;
    }
    let mut content_user = vec![0.0; USER_ATTR_DIMS];
    for &d in attrs.user_dims(user) {
        content_user[d as usize] = item_specific;
    }
    NodeFeatures {
        item_specific,
        user_specific,
        content_item,
        content_user,
    }
}

/// Correlation feature between two ratings sharing a user (item-item edge,
/// item means) or sharing an item (user-user edge, user means).
#[inline]
pub fn edge_feature(_kind: PairKind, r1: u8, r2: u8, mean1: f64, mean2: f64, scale: u8) -> f64 {
    g(((r1 as f64 - mean1) - (r2 as f64 - mean2)).abs(), scale)
}

/// How identity weights are tied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentityTying {
    /// One weight per item and one per user.
    PerEntity,
    /// A single item-identity and a single user-identity weight.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    ItemIdentity,
    UserIdentity,
    ContentItemAttr,
    ContentUserAttr,
    ItemPair,
    UserPair,
}

impl Block {
    pub const ALL: [Block; 6] = [
        Block::ItemIdentity,
        Block::UserIdentity,
        Block::ContentItemAttr,
        Block::ContentUserAttr,
        Block::ItemPair,
        Block::UserPair,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Block::ItemIdentity => "item_identity",
            Block::UserIdentity => "user_identity",
            Block::ContentItemAttr => "content_item_attr",
            Block::ContentUserAttr => "content_user_attr",
            Block::ItemPair => "item_pair",
            Block::UserPair => "user_pair",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Block> {
        Block::ALL.into_iter().find(|b| b.tag() == tag)
    }
}

/// Offsets of each parameter block inside the flat weight vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub tying: IdentityTying,
    pub item_slots: usize,
    pub user_slots: usize,
    pub item_pairs: usize,
    pub user_pairs: usize,
}

impl Layout {
    pub fn new(tying: IdentityTying, item_slots: usize, user_slots: usize, pairs: &SelectedPairs) -> Self {
        Layout {
            tying,
            item_slots,
            user_slots,
            item_pairs: pairs.item_pairs.len(),
            user_pairs: pairs.user_pairs.len(),
        }
    }

    pub fn block_len(&self, block: Block) -> usize {
        match (block, self.tying) {
            (Block::ItemIdentity, IdentityTying::PerEntity) => self.item_slots,
            (Block::UserIdentity, IdentityTying::PerEntity) => self.user_slots,
            (Block::ItemIdentity | Block::UserIdentity, IdentityTying::Global) => 1,
            (Block::ContentItemAttr, _) => ITEM_ATTR_DIMS,
            (Block::ContentUserAttr, _) => USER_ATTR_DIMS,
            (Block::ItemPair, _) => self.item_pairs,
            (Block::UserPair, _) => self.user_pairs,
        }
    }

    pub fn offset(&self, block: Block) -> usize {
        Block::ALL
            .iter()
            .take_while(|&&b| b != block)
            .map(|&b| self.block_len(b))
            .sum()
    }

    pub fn range(&self, block: Block) -> std::ops::Range<usize> {
        let start = self.offset(block);
        start..start + self.block_len(block)
    }

    pub fn len(&self) -> usize {
        Block::ALL.iter().map(|&b| self.block_len(b)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block_of(&self, index: usize) -> Block {
        let mut end = 0;
        for b in Block::ALL {
            end += self.block_len(b);
            if index < end {
                return b;
            }
        }
        panic!("index {index} outside layout of length {}", self.len());
    }

    /// Flat index of item `i`'s identity weight, if the layout has one.
    #[inline]
    pub fn item_identity(&self, item: ItemId) -> Option<usize> {
        match self.tying {
            IdentityTying::Global => Some(0),
            IdentityTying::PerEntity => (item.index() < self.item_slots).then_some(item.index()),
        }
    }

    #[inline]
    pub fn user_identity(&self, user: UserId) -> Option<usize> {
        let base = self.block_len(Block::ItemIdentity);
        match self.tying {
            IdentityTying::Global => Some(base),
            IdentityTying::PerEntity => (user.index() < self.user_slots).then_some(base + user.index()),
        }
    }

    #[inline]
    pub fn content_item(&self, dim: u16) -> usize {
        self.block_len(Block::ItemIdentity) + self.block_len(Block::UserIdentity) + dim as usize
    }

    #[inline]
    pub fn content_user(&self, dim: u16) -> usize {
        self.content_item(0) + ITEM_ATTR_DIMS + dim as usize
    }

    #[inline]
    pub fn pair(&self, kind: PairKind, slot: usize) -> usize {
        match kind {
            PairKind::ItemItem => self.content_user(0) + USER_ATTR_DIMS + slot,
            PairKind::UserUser => self.content_user(0) + USER_ATTR_DIMS + self.item_pairs + slot,
        }
    }
}

/// Regularisation standard deviations per feature family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sigma {
    pub identity: f64,
    pub content: f64,
    pub correlation: f64,
}

impl Sigma {
    pub fn uniform(sigma: f64) -> Self {
        Sigma {
            identity: sigma,
            content: sigma,
            correlation: sigma,
        }
    }

    pub fn for_block(&self, block: Block) -> f64 {
        match block {
            Block::ItemIdentity | Block::UserIdentity => self.identity,
            Block::ContentItemAttr | Block::ContentUserAttr => self.content,
            Block::ItemPair | Block::UserPair => self.correlation,
        }
    }
}

impl Default for Sigma {
    fn default() -> Self {
        Sigma::uniform(1.0)
    }
}

/// All model weights in one flat vector, addressed through [`Layout`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    layout: Layout,
    weights: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(layout: Layout) -> Self {
        ParameterVector {
            weights: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_weights(layout: Layout, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != layout.len() {
            return Err(Error::Validation(format!(
                "expected {} weights, got {}",
                layout.len(),
                weights.len()
            )));
        }
        if let Some(k) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::Validation(format!("weight {k} is not finite")));
        }
        Ok(ParameterVector { layout, weights })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.weights[self.layout.range(block)]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let r = self.layout.range(block);
        &mut self.weights[r]
    }

    pub fn item_identity(&self, item: ItemId) -> f64 {
        self.layout.item_identity(item).map_or(0.0, |k| self.weights[k])
    }

    pub fn user_identity(&self, user: UserId) -> f64 {
        self.layout.user_identity(user).map_or(0.0, |k| self.weights[k])
    }

    pub fn content_item(&self, dim: u16) -> f64 {
        self.weights[self.layout.content_item(dim)]
    }

    pub fn content_user(&self, dim: u16) -> f64 {
        self.weights[self.layout.content_user(dim)]
    }

    pub fn pair_weight(&self, kind: PairKind, slot: usize) -> f64 {
        self.weights[self.layout.pair(kind, slot)]
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}
