//! The preference network: a conditional Markov random field whose nodes
//! are ratings and whose edges join ratings sharing a user or an item.
//!
//! Only edges whose user pair or item pair was selected carry a parameter;
//! the others contribute nothing to the energy. Everything here is
//! read-only over the graph and parameters.

use crate::correlation::{
    item_similarities, user_similarities, PairKind, SelectedPairs, SelectionConfig, SimilarityTable,
};
use crate::dataset::{compute_means, AttributeCatalog, ItemId, MeanStats, RatingTable, UserId};
use crate::features::{g, FeatureToggles, IdentityTying, Layout, ParameterVector};

/// Calls `f(a_entry, b_entry)` for every key present in both sorted lists.
fn intersect_sorted<A, B>(a: &[A], b: &[B], key_a: impl Fn(&A) -> u32, key_b: impl Fn(&B) -> u32, mut f: impl FnMut(&A, &B)) {
    if a.is_empty() || b.is_empty() {
        return;
    }
    // lopsided sizes: binary-search the short list into the long one
    if a.len() * 16 < b.len() {
        for x in a {
            if let Ok(k) = b.binary_search_by_key(&key_a(x), &key_b) {
                f(x, &b[k]);
            }
        }
        return;
    }
    if b.len() * 16 < a.len() {
        for y in b {
            if let Ok(k) = a.binary_search_by_key(&key_b(y), &key_a) {
                f(&a[k], y);
            }
        }
        return;
    }
    let (mut p, mut q) = (0, 0);
    while p < a.len() && q < b.len() {
        let (ka, kb) = (key_a(&a[p]), key_b(&b[q]));
        if ka < kb {
            p += 1;
        } else if ka > kb {
            q += 1;
        } else {
            f(&a[p], &b[q]);
            p += 1;
            q += 1;
        }
    }
}

/// A neighbouring rating reached through a selected pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub kind: PairKind,
    pub user: UserId,
    pub item: ItemId,
    pub value: u8,
    pub slot: usize,
}

/// Rating nodes of a table plus the edges induced by the selected pairs.
#[derive(Clone, Debug)]
pub struct PreferenceGraph {
    table: RatingTable,
    pairs: SelectedPairs,
}

impl PreferenceGraph {
    pub fn new(table: RatingTable, pairs: SelectedPairs) -> Self {
        PreferenceGraph { table, pairs }
    }

    pub fn table(&self) -> &RatingTable {
        &self.table
    }

    pub fn pairs(&self) -> &SelectedPairs {
        &self.pairs
    }

    /// |N(u,i)| over the complete same-user/same-item edge set.
    pub fn full_neighborhood_size(&self, user: UserId, item: ItemId) -> usize {
        let own = if self.table.contains(user, item) { 2 } else { 0 };
        self.table.user_count(user) + self.table.item_count(item) - own
    }

    pub fn full_neighbors(&self, user: UserId, item: ItemId) -> Vec<(UserId, ItemId)> {
        let same_user = self
            .table
            .user_ratings(user)
            .iter()
            .filter(|&&(j, _)| j != item)
            .map(|&(j, _)| (user, j));
        let same_item = self
            .table
            .item_ratings(item)
            .iter()
            .filter(|&&(v, _)| v != user)
            .map(|&(v, _)| (v, item));
        same_user.chain(same_item).collect()
    }

    /// Visits the training ratings joined to node `(user, item)` by an active
    /// edge: same-user ratings on selected partner items first, then
    /// same-item ratings by selected partner users.
    pub fn for_each_active_neighbor(&self, user: UserId, item: ItemId, mut f: impl FnMut(Neighbor)) {
        intersect_sorted(
            self.pairs.item_pairs.row(item.0),
            self.table.user_ratings(user),
            |&(j, _)| j,
            |&(j, _)| j.0,
            |&(_, slot), &(j, value)| {
                f(Neighbor {
                    kind: PairKind::ItemItem,
                    user,
                    item: j,
                    value,
                    slot: slot as usize,
                })
            },
        );
        intersect_sorted(
            self.pairs.user_pairs.row(user.0),
            self.table.item_ratings(item),
            |&(v, _)| v,
            |&(v, _)| v.0,
            |&(_, slot), &(v, value)| {
                f(Neighbor {
                    kind: PairKind::UserUser,
                    user: v,
                    item,
                    value,
                    slot: slot as usize,
                })
            },
        );
    }

    pub fn active_neighbors(&self, user: UserId, item: ItemId) -> Vec<Neighbor> {
        let mut out = Vec::new();
        self.for_each_active_neighbor(user, item, |n| out.push(n));
        out
    }

    /// Number of active edges among the table's own ratings.
    pub fn active_edge_count(&self) -> usize {
        let twice: usize = self
            .table
            .ratings()
            .iter()
            .map(|r| {
                let mut n = 0;
                self.for_each_active_neighbor(r.user, r.item, |_| n += 1);
                n
            })
            .sum();
        twice / 2
    }
}

/// Local conditional distribution of one rating given its Markov blanket.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDistribution {
    /// `probs[r - 1]` is P(r | N).
    pub probs: Vec<f64>,
    pub argmax: u8,
    pub confidence: f64,
}

impl LocalDistribution {
    /// Normalises log-potentials with max subtraction. Ties in the argmax go
    /// to the lowest rating.
    pub fn from_log_potentials(logp: &[f64]) -> Self {
        let mut best = 0;
        for (k, &v) in logp.iter().enumerate() {
            if v > logp[best] {
                best = k;
            }
        }
        let max = logp[best];
        let exps: Vec<f64> = logp.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
        LocalDistribution {
            confidence: probs[best],
            argmax: best as u8 + 1,
            probs,
        }
    }

    pub fn prob(&self, rating: u8) -> f64 {
        self.probs[rating as usize - 1]
    }

    /// Σ_r P(r) f(r)
    pub fn expect(&self, f: impl Fn(u8) -> f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| p * f(k as u8 + 1))
            .sum()
    }
}

/// Energy change from adding one rating node to the network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyChange {
    /// ΔE at the predicted (argmax) rating.
    pub maximal: f64,
    /// Σ_r P(r | N) ΔE(r)
    pub expected: f64,
}

/// One active edge as seen from a node: the feature is
/// `g(|(r - own_mean) - other_dev|)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeTerm {
    pub kind: PairKind,
    pub slot: usize,
    /// Flat parameter index of the pair weight.
    pub param: usize,
    pub weight: f64,
    pub own_mean: f64,
    pub other_dev: f64,
}

impl EdgeTerm {
    #[inline]
    pub fn feature(&self, rating: u8, scale: u8) -> f64 {
        g(((rating as f64 - self.own_mean) - self.other_dev).abs(), scale)
    }
}

/// Everything needed to score the ratings of one node.
///
/// The node log-potential is `item_coef * g(|r - r̄_i|) + user_coef * g(|r - r̄_u|)`,
/// where the coefficients collect the identity and content weights that
/// multiply each of the two deviation features.
#[derive(Clone, Debug)]
pub struct NodeView {
    pub user: UserId,
    pub item: ItemId,
    pub scale: u8,
    pub item_mean: f64,
    pub user_mean: f64,
    pub item_coef: f64,
    pub user_coef: f64,
    pub edges: Vec<EdgeTerm>,
}

impl NodeView {
    #[inline]
    pub fn item_feature(&self, rating: u8) -> f64 {
        g((rating as f64 - self.item_mean).abs(), self.scale)
    }

    #[inline]
    pub fn user_feature(&self, rating: u8) -> f64 {
        g((rating as f64 - self.user_mean).abs(), self.scale)
    }

    pub fn node_log_potential(&self, rating: u8) -> f64 {
        self.item_coef * self.item_feature(rating) + self.user_coef * self.user_feature(rating)
    }

    /// `w_v·f_v(r) + Σ w_e·f_e(r, r')` for r = 1..=S.
    pub fn log_potentials(&self) -> Vec<f64> {
        let mut s: Vec<f64> = (1..=self.scale).map(|r| self.node_log_potential(r)).collect();
        for e in &self.edges {
            for (k, v) in s.iter_mut().enumerate() {
                *v += e.weight * e.feature(k as u8 + 1, self.scale);
            }
        }
        s
    }

    pub fn distribution(&self) -> LocalDistribution {
        LocalDistribution::from_log_potentials(&self.log_potentials())
    }

    pub fn has_edges(&self) -> bool {
        !self.edges.is_empty()
    }
}

/// The trained-or-trainable model minus its weights: graph, means,
/// attributes, enabled feature families and the co-rating similarity tables.
#[derive(Clone, Debug)]
pub struct ModelContext {
    graph: PreferenceGraph,
    means: MeanStats,
    attrs: AttributeCatalog,
    features: FeatureToggles,
    user_sims: SimilarityTable,
    item_sims: SimilarityTable,
}

impl ModelContext {
    /// Computes means and similarities from `table` and selects the
    /// correlation pairs (none when correlation features are off).
    pub fn build(table: RatingTable, attrs: AttributeCatalog, features: FeatureToggles, selection: &SelectionConfig) -> Self {
        let means = compute_means(&table);
        let user_sims = user_similarities(&table, &means);
        let item_sims = item_similarities(&table, &means);
        let pairs = if features.correlation {
            SelectedPairs::from_similarities(&user_sims, &item_sims, selection)
        } else {
            SelectedPairs::none()
        };
        ModelContext {
            graph: PreferenceGraph::new(table, pairs),
            means,
            attrs,
            features,
            user_sims,
            item_sims,
        }
    }

    /// Uses the given means and pairs as-is.
    pub fn with_pairs(
        table: RatingTable,
        means: MeanStats,
        attrs: AttributeCatalog,
        pairs: SelectedPairs,
        features: FeatureToggles,
    ) -> Self {
        let user_sims = user_similarities(&table, &means);
        let item_sims = item_similarities(&table, &means);
        ModelContext {
            graph: PreferenceGraph::new(table, pairs),
            means,
            attrs,
            features,
            user_sims,
            item_sims,
        }
    }

    pub fn graph(&self) -> &PreferenceGraph {
        &self.graph
    }

    pub fn table(&self) -> &RatingTable {
        self.graph.table()
    }

    pub fn pairs(&self) -> &SelectedPairs {
        self.graph.pairs()
    }

    pub fn means(&self) -> &MeanStats {
        &self.means
    }

    pub fn attrs(&self) -> &AttributeCatalog {
        &self.attrs
    }

    pub fn features(&self) -> FeatureToggles {
        self.features
    }

    pub fn scale(&self) -> u8 {
        self.table().scale()
    }

    pub fn user_similarities(&self) -> &SimilarityTable {
        &self.user_sims
    }

    pub fn item_similarities(&self) -> &SimilarityTable {
        &self.item_sims
    }

    pub fn layout(&self, tying: IdentityTying) -> Layout {
        Layout::new(tying, self.table().item_slots(), self.table().user_slots(), self.pairs())
    }

    pub fn zero_params(&self, tying: IdentityTying) -> ParameterVector {
        ParameterVector::zeros(self.layout(tying))
    }

    /// Node part of the scoring view, without any edges.
    fn node_terms(&self, params: &ParameterVector, user: UserId, item: ItemId) -> NodeView {
        let (mut item_coef, mut user_coef) = (0.0, 0.0);
        if self.features.identity {
            item_coef += params.item_identity(item);
            user_coef += params.user_identity(user);
        }
        if self.features.content {
            // a_u weights ride on g(|r - r̄_i|), a_i weights on g(|r - r̄_u|)
            item_coef += self.attrs.user_dims(user).iter().map(|&d| params.content_user(d)).sum::<f64>();
            user_coef += self.attrs.item_dims(item).iter().map(|&d| params.content_item(d)).sum::<f64>();
        }
        NodeView {
            user,
            item,
            scale: self.scale(),
            item_mean: self.means.item_mean_or_global(item),
            user_mean: self.means.user_mean_or_global(user),
            item_coef,
            user_coef,
            edges: Vec::new(),
        }
    }

    /// Scoring view of node `(user, item)` against the training ratings.
    /// The node itself, if present in the table, is never its own neighbour.
    pub fn node_view(&self, params: &ParameterVector, user: UserId, item: ItemId) -> NodeView {
        let mut view = self.node_terms(params, user, item);
        if self.features.correlation {
            let layout = params.layout();
            let (item_mean, user_mean) = (view.item_mean, view.user_mean);
            self.graph.for_each_active_neighbor(user, item, |n| {
                let (own_mean, other_mean) = match n.kind {
                    PairKind::ItemItem => (item_mean, self.means.item_mean_or_global(n.item)),
                    PairKind::UserUser => (user_mean, self.means.user_mean_or_global(n.user)),
                };
                view.edges.push(EdgeTerm {
                    kind: n.kind,
                    slot: n.slot,
                    param: layout.pair(n.kind, n.slot),
                    weight: params.pair_weight(n.kind, n.slot),
                    own_mean,
                    other_dev: n.value as f64 - other_mean,
                });
            });
        }
        view
    }

    pub fn local_conditional(&self, params: &ParameterVector, user: UserId, item: ItemId) -> LocalDistribution {
        self.node_view(params, user, item).distribution()
    }

    /// E(r_t) = -w_v·f_v(r_t)
    pub fn node_energy(&self, params: &ParameterVector, user: UserId, item: ItemId, rating: u8) -> f64 {
        -self.node_terms(params, user, item).node_log_potential(rating)
    }

    /// E(r_t, r_t') = -w_e f_e(r_t, r_t') for an edge between `(u1, i1)` and
    /// `(u2, i2)`; 0 when the two ratings are not joined by a selected pair
    /// or correlation features are off.
    pub fn edge_energy(
        &self,
        params: &ParameterVector,
        (u1, i1, r1): (UserId, ItemId, u8),
        (u2, i2, r2): (UserId, ItemId, u8),
    ) -> f64 {
        if !self.features.correlation {
            return 0.0;
        }
        let scale = self.scale();
        if u1 == u2 && i1 != i2 {
            match self.pairs().item_pairs.slot(i1.0, i2.0) {
                Some(slot) => {
                    let f = g(
                        ((r1 as f64 - self.means.item_mean_or_global(i1)) - (r2 as f64 - self.means.item_mean_or_global(i2))).abs(),
                        scale,
                    );
                    -params.pair_weight(PairKind::ItemItem, slot) * f
                }
                None => 0.0,
            }
        } else if i1 == i2 && u1 != u2 {
            match self.pairs().user_pairs.slot(u1.0, u2.0) {
                Some(slot) => {
                    let f = g(
                        ((r1 as f64 - self.means.user_mean_or_global(u1)) - (r2 as f64 - self.means.user_mean_or_global(u2))).abs(),
                        scale,
                    );
                    -params.pair_weight(PairKind::UserUser, slot) * f
                }
                None => 0.0,
            }
        } else {
            0.0
        }
    }

    /// Total energy of the table's configuration: node terms plus each
    /// active edge once.
    pub fn system_energy(&self, params: &ParameterVector) -> f64 {
        self.table()
            .ratings()
            .iter()
            .map(|r| {
                let mut e = self.node_energy(params, r.user, r.item, r.value);
                if self.features.correlation {
                    self.graph.for_each_active_neighbor(r.user, r.item, |n| {
                        if (n.user, n.item) > (r.user, r.item) {
                            e += self.edge_energy(params, (r.user, r.item, r.value), (n.user, n.item, n.value));
                        }
                    });
                }
                e
            })
            .sum()
    }

    /// Maximal and expected energy change of adding node `(user, item)`,
    /// holding every existing rating fixed.
    pub fn energy_change(&self, params: &ParameterVector, user: UserId, item: ItemId) -> EnergyChange {
        energy_change_of(&self.node_view(params, user, item)).0
    }
}

/// ΔE(r) is the negated log-potential of r. Returns the change and the
/// local distribution it was computed from.
pub fn energy_change_of(view: &NodeView) -> (EnergyChange, LocalDistribution) {
    let logp = view.log_potentials();
    let dist = LocalDistribution::from_log_potentials(&logp);
    let maximal = -logp[dist.argmax as usize - 1];
    let expected = -dist.probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
    (EnergyChange { maximal, expected }, dist)
}
