//! Prediction, joint prediction, candidate generation and energy-ranked
//! top-N recommendation over a trained model.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::correlation::{PairKind, SimilarityEntry};
use crate::dataset::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::features::ParameterVector;
use crate::model::{energy_change_of, LocalDistribution, ModelContext};
use crate::par;

/// Exact joint enumeration is used while `S^|target|` stays within this.
pub const EXACT_JOINT_BUDGET: u64 = 1_000_000;
pub const ICM_MAX_SWEEPS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackLevel {
    /// At least one active neighbour in the Markov blanket.
    Full,
    /// No active neighbours: node features only.
    ContentOnly,
    /// Neither the user nor the item has training ratings.
    GlobalMean,
}

impl FallbackLevel {
    pub fn tag(self) -> &'static str {
        match self {
            FallbackLevel::Full => "full",
            FallbackLevel::ContentOnly => "content-only",
            FallbackLevel::GlobalMean => "global-mean",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub user: UserId,
    pub item: ItemId,
    pub predicted: u8,
    pub confidence: f64,
    pub fallback: FallbackLevel,
}

/// Rounds half up and clamps into `1..=scale`.
pub fn round_rating(value: f64, scale: u8) -> u8 {
    (value + 0.5).floor().clamp(1.0, scale as f64) as u8
}

/// Argmax of the local conditional given the training ratings.
pub fn predict_rating(ctx: &ModelContext, params: &ParameterVector, user: UserId, item: ItemId) -> Prediction {
    let view = ctx.node_view(params, user, item);
    let dist = view.distribution();
    let table = ctx.table();
    if table.user_count(user) == 0 && table.item_count(item) == 0 {
        let predicted = round_rating(ctx.means().global_mean(), ctx.scale());
        return Prediction {
            user,
            item,
            predicted,
            confidence: dist.prob(predicted),
            fallback: FallbackLevel::GlobalMean,
        };
    }
    Prediction {
        user,
        item,
        predicted: dist.argmax,
        confidence: dist.confidence,
        fallback: if view.has_edges() {
            FallbackLevel::Full
        } else {
            FallbackLevel::ContentOnly
        },
    }
}

pub fn predict_batch(ctx: &ModelContext, params: &ParameterVector, queries: &[(UserId, ItemId)]) -> Vec<Prediction> {
    par::map_slice(queries, |&(u, i)| predict_rating(ctx, params, u, i))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointMethod {
    Exact,
    Icm { sweeps: usize, converged: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointPrediction {
    pub targets: Vec<(UserId, ItemId)>,
    pub ratings: Vec<u8>,
    pub log_score: f64,
    pub method: JointMethod,
}

/// Unary log-potentials (including edges to training ratings) and the
/// pairwise tables between targets joined by a selected pair.
struct JointProblem {
    scale: usize,
    unary: Vec<Vec<f64>>,
    /// (a, b, table[ra-1][rb-1]) with a < b
    pairwise: Vec<(usize, usize, Vec<Vec<f64>>)>,
    adjacency: Vec<Vec<usize>>,
}

impl JointProblem {
    fn new(ctx: &ModelContext, params: &ParameterVector, targets: &[(UserId, ItemId)]) -> Self {
        let scale = ctx.scale() as usize;
        let unary: Vec<Vec<f64>> = targets
            .iter()
            .map(|&(u, i)| ctx.node_view(params, u, i).log_potentials())
            .collect();
        let mut pairwise = Vec::new();
        let mut adjacency = vec![Vec::new(); targets.len()];
        for a in 0..targets.len() {
            for b in a + 1..targets.len() {
                let (ta, tb) = (targets[a], targets[b]);
                let table: Vec<Vec<f64>> = (1..=scale as u8)
                    .map(|ra| {
                        (1..=scale as u8)
                            .map(|rb| -ctx.edge_energy(params, (ta.0, ta.1, ra), (tb.0, tb.1, rb)))
                            .collect()
                    })
                    .collect();
                if table.iter().flatten().any(|&v| v != 0.0) {
                    adjacency[a].push(pairwise.len());
                    adjacency[b].push(pairwise.len());
                    pairwise.push((a, b, table));
                }
            }
        }
        JointProblem {
            scale,
            unary,
            pairwise,
            adjacency,
        }
    }

    fn score(&self, ratings: &[u8]) -> f64 {
        let mut s: f64 = self.unary.iter().zip(ratings).map(|(u, &r)| u[r as usize - 1]).sum();
        for (a, b, t) in &self.pairwise {
            s += t[ratings[*a] as usize - 1][ratings[*b] as usize - 1];
        }
        s
    }

    /// Conditional log-potentials of target `k` with the others fixed.
    fn conditional(&self, k: usize, ratings: &[u8]) -> Vec<f64> {
        let mut s = self.unary[k].clone();
        for &e in &self.adjacency[k] {
            let (a, b, t) = &self.pairwise[e];
            for (r, v) in s.iter_mut().enumerate() {
                *v += if *a == k {
                    t[r][ratings[*b] as usize - 1]
                } else {
                    t[ratings[*a] as usize - 1][r]
                };
            }
        }
        s
    }

    fn exact(&self) -> (Vec<u8>, f64) {
        let n = self.unary.len();
        let mut current = vec![1u8; n];
        let mut best = current.clone();
        let mut best_score = self.score(&current);
        // odometer over 1..=S in lexicographic order; first maximum wins
        loop {
            let mut k = n;
            loop {
                if k == 0 {
                    return (best, best_score);
                }
                k -= 1;
                if (current[k] as usize) < self.scale {
                    current[k] += 1;
                    break;
                }
                current[k] = 1;
            }
            let s = self.score(&current);
            if s > best_score {
                best_score = s;
                best.copy_from_slice(&current);
            }
        }
    }

    fn icm(&self) -> (Vec<u8>, usize, bool) {
        let mut ratings: Vec<u8> = self
            .unary
            .iter()
            .map(|u| LocalDistribution::from_log_potentials(u).argmax)
            .collect();
        for sweep in 1..=ICM_MAX_SWEEPS {
            let mut changed = false;
            for k in 0..ratings.len() {
                let cond = self.conditional(k, &ratings);
                let best = LocalDistribution::from_log_potentials(&cond).argmax;
                // move only on strict improvement so the sweep terminates
                if cond[best as usize - 1] > cond[ratings[k] as usize - 1] {
                    ratings[k] = best;
                    changed = true;
                }
            }
            if !changed {
                return (ratings, sweep, true);
            }
        }
        (ratings, ICM_MAX_SWEEPS, false)
    }
}

/// Unnormalised log joint conditional of an assignment to `targets`.
pub fn joint_log_score(ctx: &ModelContext, params: &ParameterVector, targets: &[(UserId, ItemId)], ratings: &[u8]) -> f64 {
    assert_eq!(targets.len(), ratings.len());
    JointProblem::new(ctx, params, targets).score(ratings)
}

/// Most probable joint assignment to `targets` given the training ratings.
pub fn joint_predict(ctx: &ModelContext, params: &ParameterVector, targets: &[(UserId, ItemId)]) -> Result<JointPrediction> {
    if targets.is_empty() {
        return Err(Error::Validation("joint prediction needs at least one target".into()));
    }
    let mut seen = targets.to_vec();
    seen.sort();
    seen.dedup();
    if seen.len() != targets.len() {
        return Err(Error::Validation("joint prediction targets must be distinct".into()));
    }
    let problem = JointProblem::new(ctx, params, targets);
    let configs = (ctx.scale() as u64).checked_pow(targets.len() as u32);
    let (ratings, method) = match configs {
        Some(c) if c <= EXACT_JOINT_BUDGET => (problem.exact().0, JointMethod::Exact),
        _ => {
            let (r, sweeps, converged) = problem.icm();
            (r, JointMethod::Icm { sweeps, converged })
        }
    };
    Ok(JointPrediction {
        targets: targets.to_vec(),
        log_score: problem.score(&ratings),
        ratings,
        method,
    })
}

/// ICM regardless of the enumeration budget.
pub fn joint_predict_icm(ctx: &ModelContext, params: &ParameterVector, targets: &[(UserId, ItemId)]) -> JointPrediction {
    let problem = JointProblem::new(ctx, params, targets);
    let (ratings, sweeps, converged) = problem.icm();
    JointPrediction {
        targets: targets.to_vec(),
        log_score: problem.score(&ratings),
        ratings,
        method: JointMethod::Icm { sweeps, converged },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateMode {
    UserBased,
    ItemBased,
    Union,
}

impl CandidateMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "user-based" | "user" => Ok(CandidateMode::UserBased),
            "item-based" | "item" => Ok(CandidateMode::ItemBased),
            "union" => Ok(CandidateMode::Union),
            other => Err(Error::Validation(format!("unknown candidate mode {other:?}"))),
        }
    }
}

/// Orders co-rating partners from most to least strongly correlated:
/// selected pairs by learned |w| first, then the rest by similarity, then id.
fn ranked_partners(
    ctx: &ModelContext,
    params: Option<&ParameterVector>,
    kind: PairKind,
    anchor: u32,
) -> Vec<u32> {
    let (row, index): (&[SimilarityEntry], _) = match kind {
        PairKind::UserUser => (ctx.user_similarities().row(anchor), &ctx.pairs().user_pairs),
        PairKind::ItemItem => (ctx.item_similarities().row(anchor), &ctx.pairs().item_pairs),
    };
    let mut keyed: Vec<(bool, f64, u32)> = row
        .iter()
        .map(|e| match (params, index.slot(anchor, e.other)) {
            (Some(p), Some(slot)) if !p.layout().is_empty() => (true, p.pair_weight(kind, slot).abs(), e.other),
            _ => (false, e.value, e.other),
        })
        .collect();
    keyed.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal))
            .then_with(|| a.2.cmp(&b.2))
    });
    keyed.into_iter().map(|k| k.2).collect()
}

/// Items by training popularity, most rated first, ties by id.
pub fn popular_items(ctx: &ModelContext) -> Vec<ItemId> {
    let table = ctx.table();
    let mut items: Vec<ItemId> = table.items().collect();
    items.sort_by(|a, b| table.item_count(*b).cmp(&table.item_count(*a)).then(a.cmp(b)));
    items
}

/// Candidate items with the number of neighbour votes each received,
/// sorted by item id. `k = None` means every co-rating partner.
pub fn candidate_votes(
    ctx: &ModelContext,
    params: Option<&ParameterVector>,
    user: UserId,
    k: Option<usize>,
    mode: CandidateMode,
) -> Vec<(ItemId, u32)> {
    let table = ctx.table();
    let rated = table.user_ratings(user);
    let unseen = |i: ItemId| rated.binary_search_by_key(&i, |&(j, _)| j).is_err();
    let mut votes: BTreeMap<ItemId, u32> = BTreeMap::new();
    if rated.is_empty() {
        return popular_items(ctx).into_iter().map(|i| (i, 0)).collect::<BTreeMap<_, _>>().into_iter().collect();
    }
    let limit = k.unwrap_or(usize::MAX);
    if matches!(mode, CandidateMode::UserBased | CandidateMode::Union) {
        for v in ranked_partners(ctx, params, PairKind::UserUser, user.0).into_iter().take(limit) {
            for &(i, _) in table.user_ratings(UserId(v)) {
                if unseen(i) {
                    *votes.entry(i).or_default() += 1;
                }
            }
        }
    }
    if matches!(mode, CandidateMode::ItemBased | CandidateMode::Union) {
        for &(j, _) in rated {
            let partners = ranked_partners(ctx, params, PairKind::ItemItem, j.0);
            for i in partners.into_iter().map(ItemId).filter(|&i| unseen(i)).take(limit) {
                *votes.entry(i).or_default() += 1;
            }
        }
    }
    votes.into_iter().collect()
}

/// Candidate item set for `user`, ascending by id.
pub fn candidate_set(
    ctx: &ModelContext,
    params: Option<&ParameterVector>,
    user: UserId,
    k: Option<usize>,
    mode: CandidateMode,
) -> Vec<ItemId> {
    candidate_votes(ctx, params, user, k, mode).into_iter().map(|(i, _)| i).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ranking {
    MaximalEnergy,
    ExpectedEnergy,
}

impl Ranking {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "maximal" | "maximal-energy" => Ok(Ranking::MaximalEnergy),
            "expected" | "expected-energy" => Ok(Ranking::ExpectedEnergy),
            other => Err(Error::Validation(format!("unknown ranking {other:?}"))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Ranking::MaximalEnergy => "maximal",
            Ranking::ExpectedEnergy => "expected",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopNConfig {
    pub n: usize,
    /// Candidate pool size C.
    pub candidates: usize,
    /// Neighbours per anchor K; `None` for all.
    pub neighbors: Option<usize>,
    pub mode: CandidateMode,
    pub ranking: Ranking,
}

impl Default for TopNConfig {
    fn default() -> Self {
        TopNConfig {
            n: 20,
            candidates: 500,
            neighbors: Some(100),
            mode: CandidateMode::Union,
            ranking: Ranking::ExpectedEnergy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedEntry {
    pub item: ItemId,
    pub score: f64,
    pub predicted: u8,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedRecommendation {
    pub user: UserId,
    pub entries: Vec<RankedEntry>,
    pub ranking: Ranking,
    /// Fewer than N candidates were available.
    pub short: bool,
}

/// Scores items for `user` by energy change; lowest first, ties by higher
/// confidence, then popularity, then ascending id.
pub fn rank_items(
    ctx: &ModelContext,
    params: &ParameterVector,
    user: UserId,
    items: &[ItemId],
    ranking: Ranking,
) -> Vec<RankedEntry> {
    let table = ctx.table();
    let mut entries = par::map_slice(items, |&item| {
        let (change, dist) = energy_change_of(&ctx.node_view(params, user, item));
        RankedEntry {
            item,
            score: match ranking {
                Ranking::MaximalEnergy => change.maximal,
                Ranking::ExpectedEnergy => change.expected,
            },
            predicted: dist.argmax,
            confidence: dist.confidence,
        }
    });
    entries.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| b.confidence.total_cmp(&a.confidence))
            .then_with(|| table.item_count(b.item).cmp(&table.item_count(a.item)))
            .then_with(|| a.item.cmp(&b.item))
    });
    entries
}

pub fn recommend_top_n(ctx: &ModelContext, params: &ParameterVector, user: UserId, config: &TopNConfig) -> RankedRecommendation {
    let table = ctx.table();
    let mut votes = candidate_votes(ctx, Some(params), user, config.neighbors, config.mode);
    votes.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| table.item_count(b.0).cmp(&table.item_count(a.0)))
            .then_with(|| a.0.cmp(&b.0))
    });
    votes.truncate(config.candidates);
    let items: Vec<ItemId> = votes.into_iter().map(|(i, _)| i).collect();
    let mut entries = rank_items(ctx, params, user, &items, config.ranking);
    let short = entries.len() < config.n;
    entries.truncate(config.n);
    RankedRecommendation {
        user,
        entries,
        ranking: config.ranking,
        short,
    }
}

/// One recommendation per user, computed in parallel, in input order.
pub fn recommend_batch(ctx: &ModelContext, params: &ParameterVector, users: &[UserId], config: &TopNConfig) -> Vec<RankedRecommendation> {
    par::map_slice(users, |&u| recommend_top_n(ctx, params, u, config))
}

/// Reads `user,item` pairs; a non-numeric first line is taken as a header.
/// Tabs are accepted as separators too.
pub fn read_queries<R: BufRead>(input: R, source_name: &str) -> Result<Vec<(UserId, ItemId)>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split([',', '\t']).map(str::trim).collect();
        let parsed = (fields.len() >= 2)
            .then(|| Some((fields[0].parse::<u32>().ok()?, fields[1].parse::<u32>().ok()?)))
            .flatten();
        match parsed {
            Some((u, i)) if u > 0 && i > 0 => out.push((UserId(u), ItemId(i))),
            None if n == 0 => continue,
            _ => {
                return Err(Error::Parse {
                    source_name: source_name.to_string(),
                    line: n + 1,
                    message: format!("expected positive `user,item`, got {line:?}"),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(mut out: W, predictions: &[Prediction]) -> std::io::Result<()> {
    writeln!(out, "user,item,predicted,confidence,fallbackLevel")?;
    for p in predictions {
        writeln!(out, "{},{},{},{:.6},{}", p.user, p.item, p.predicted, p.confidence, p.fallback.tag())?;
    }
    Ok(())
}

pub fn write_recommendations<W: Write>(mut out: W, recs: &[RankedRecommendation]) -> std::io::Result<()> {
    writeln!(out, "user,rank,item,score,predicted,confidence")?;
    for rec in recs {
        for (k, e) in rec.entries.iter().enumerate() {
            writeln!(out, "{},{},{},{:.9},{},{:.6}", rec.user, k + 1, e.item, e.score, e.predicted, e.confidence)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{PairIndex, SelectedPairs, SelectionConfig};
    use crate::dataset::{compute_means, AttributeCatalog, Rating, RatingTable};
    use crate::features::{FeatureToggles, IdentityTying};

    fn ctx_of(ratings: &[(u32, u32, u8)], pairs: SelectedPairs) -> ModelContext {
        let table = RatingTable::new(5, ratings.iter().map(|&(u, i, r)| Rating::new(u, i, r))).unwrap();
        let means = compute_means(&table);
        ModelContext::with_pairs(table, means, AttributeCatalog::new(), pairs, FeatureToggles::ALL)
    }

    #[test]
    fn zero_parameters_predict_lowest_rating() {
        let ctx = ctx_of(&[(1, 1, 4), (2, 2, 3)], SelectedPairs::none());
        let params = ctx.zero_params(IdentityTying::PerEntity);
        let p = predict_rating(&ctx, &params, UserId(1), ItemId(2));
        assert_eq!(p.predicted, 1);
        assert!((p.confidence - 0.2).abs() < 1e-15);
        assert_eq!(p.fallback, FallbackLevel::ContentOnly);
    }

    #[test]
    fn unseen_user_and_item_fall_back_to_global_mean() {
        let ctx = ctx_of(&[(1, 1, 4), (2, 2, 3)], SelectedPairs::none());
        let params = ctx.zero_params(IdentityTying::PerEntity);
        let p = predict_rating(&ctx, &params, UserId(9), ItemId(9));
        assert_eq!(p.fallback, FallbackLevel::GlobalMean);
        assert_eq!(p.predicted, 4);
    }

    #[test]
    fn rounding_is_half_up_and_clamped() {
        assert_eq!(round_rating(3.5, 5), 4);
        assert_eq!(round_rating(3.49, 5), 3);
        assert_eq!(round_rating(-2.0, 5), 1);
        assert_eq!(round_rating(7.2, 5), 5);
    }

    #[test]
    fn single_target_joint_equals_prediction() {
        let pairs = SelectedPairs {
            user_pairs: PairIndex::from_pairs([(1, 2)]),
            item_pairs: PairIndex::from_pairs([(1, 2)]),
        };
        let ctx = ctx_of(&[(1, 1, 5), (2, 1, 4), (2, 2, 2)], pairs);
        let params = crate::trainer::random_params(ctx.layout(IdentityTying::PerEntity), 5, 2.0);
        let joint = joint_predict(&ctx, &params, &[(UserId(1), ItemId(2))]).unwrap();
        let single = predict_rating(&ctx, &params, UserId(1), ItemId(2));
        assert_eq!(joint.ratings, vec![single.predicted]);
        assert_eq!(joint.method, JointMethod::Exact);
    }

    #[test]
    fn k_one_user_based_toy() {
        // v = 2 is u = 1's only co-rating partner
        let ctx = ctx_of(&[(1, 1, 4), (2, 1, 5), (2, 2, 3)], SelectedPairs::none());
        let got = candidate_set(&ctx, None, UserId(1), Some(1), CandidateMode::UserBased);
        assert_eq!(got, vec![ItemId(2)]);
    }

    #[test]
    fn user_who_rated_everything_has_no_candidates() {
        let ctx = ctx_of(&[(1, 1, 4), (1, 2, 2), (2, 1, 5), (2, 2, 3)], SelectedPairs::none());
        for mode in [CandidateMode::UserBased, CandidateMode::ItemBased, CandidateMode::Union] {
            assert!(candidate_set(&ctx, None, UserId(1), None, mode).is_empty());
        }
    }

    #[test]
    fn cold_user_gets_popular_items() {
        let ctx = ctx_of(&[(1, 1, 4), (2, 2, 5), (3, 2, 3)], SelectedPairs::none());
        let got = candidate_set(&ctx, None, UserId(7), Some(5), CandidateMode::Union);
        assert_eq!(got, vec![ItemId(1), ItemId(2)]);
    }

    #[test]
    fn zero_parameters_rank_by_tie_break() {
        let ctx = ctx_of(
            &[(1, 1, 4), (2, 1, 5), (2, 2, 3), (2, 3, 1), (3, 3, 2), (3, 1, 2)],
            SelectedPairs::none(),
        );
        let params = ctx.zero_params(IdentityTying::PerEntity);
        let rec = recommend_top_n(&ctx, &params, UserId(1), &TopNConfig { n: 5, ..TopNConfig::default() });
        assert!(rec.short);
        assert!(rec.entries.iter().all(|e| e.score == 0.0));
        // item 3 has two raters, item 2 one
        let items: Vec<ItemId> = rec.entries.iter().map(|e| e.item).collect();
        assert_eq!(items, vec![ItemId(3), ItemId(2)]);
    }

    #[test]
    fn query_csv_roundtrip() {
        let q = read_queries("user,item\n1,2\n3\t4\n".as_bytes(), "q").unwrap();
        assert_eq!(q, vec![(UserId(1), ItemId(2)), (UserId(3), ItemId(4))]);
        assert!(read_queries("1,2\nx,3\n".as_bytes(), "q").is_err());
    }

    #[test]
    fn full_level_when_edges_exist() {
        let table = RatingTable::new(5, [Rating::new(1, 1, 5), Rating::new(1, 2, 4), Rating::new(2, 1, 4), Rating::new(2, 2, 3), Rating::new(2, 3, 2)]).unwrap();
        let ctx = ModelContext::build(table, AttributeCatalog::new(), FeatureToggles::ALL, &SelectionConfig::default());
        let params = ctx.zero_params(IdentityTying::PerEntity);
        let p = predict_rating(&ctx, &params, UserId(1), ItemId(3));
        assert_eq!(p.fallback, FallbackLevel::Full);
    }
}
