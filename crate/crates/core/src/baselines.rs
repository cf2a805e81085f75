//! Neighbourhood collaborative-filtering baselines: user-based prediction
//! with Pearson weights, item-based prediction with adjusted-cosine weights,
//! and the count-ranked user-based top-N recommender.

use crate::correlation::SimilarityTable;
use crate::dataset::{ItemId, MeanStats, RatingTable, UserId};
use crate::inference::round_rating;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselinePrediction {
    pub user: UserId,
    pub item: ItemId,
    pub raw: f64,
    pub rounded: u8,
}

impl BaselinePrediction {
    fn new(user: UserId, item: ItemId, raw: f64, scale: u8) -> Self {
        BaselinePrediction {
            user,
            item,
            raw,
            rounded: round_rating(raw, scale),
        }
    }
}

/// `r̄_u + Σ_v s(u,v)(r_vi - r̄_v) / Σ_v |s(u,v)|` over the other raters of
/// `item` with nonzero similarity.
pub fn user_based_predict(
    table: &RatingTable,
    means: &MeanStats,
    user_sims: &SimilarityTable,
    user: UserId,
    item: ItemId,
) -> BaselinePrediction {
    let base = means.user_mean_or_global(user);
    let (mut num, mut den) = (0.0, 0.0);
    for &(v, r) in table.item_ratings(item) {
        if v == user {
            continue;
        }
        let s = user_sims.value(user.0, v.0);
        if s != 0.0 {
            num += s * (r as f64 - means.user_mean_or_global(v));
            den += s.abs();
        }
    }
    let raw = if den > 0.0 { base + num / den } else { base };
    BaselinePrediction::new(user, item, raw, table.scale())
}

/// `r̄_i + Σ_j s(i,j)(r_uj - r̄_j) / Σ_j |s(i,j)|` over the user's other
/// rated items with nonzero similarity.
pub fn item_based_predict(
    table: &RatingTable,
    means: &MeanStats,
    item_sims: &SimilarityTable,
    user: UserId,
    item: ItemId,
) -> BaselinePrediction {
    let base = means.item_mean_or_global(item);
    let (mut num, mut den) = (0.0, 0.0);
    for &(j, r) in table.user_ratings(user) {
        if j == item {
            continue;
        }
        let s = item_sims.value(item.0, j.0);
        if s != 0.0 {
            num += s * (r as f64 - means.item_mean_or_global(j));
            den += s.abs();
        }
    }
    let raw = if den > 0.0 { base + num / den } else { base };
    BaselinePrediction::new(user, item, raw, table.scale())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserTopNConfig {
    pub neighbors: usize,
    /// Co-ratings a neighbour needs before its similarity is trusted.
    pub min_co_ratings: u32,
}

impl Default for UserTopNConfig {
    fn default() -> Self {
        UserTopNConfig {
            neighbors: 100,
            min_co_ratings: 2,
        }
    }
}

/// Items rated by the user's most similar positively correlated users,
/// ranked by how many of them rated each item. Users without such
/// neighbours get the most popular unseen items.
pub fn user_based_topn(
    table: &RatingTable,
    user_sims: &SimilarityTable,
    user: UserId,
    n: usize,
    config: &UserTopNConfig,
) -> Vec<ItemId> {
    let rated = table.user_ratings(user);
    let unseen = |i: ItemId| rated.binary_search_by_key(&i, |&(j, _)| j).is_err();
    let mut neighbours: Vec<(f64, u32)> = user_sims
        .row(user.0)
        .iter()
        .filter(|e| e.value > 0.0 && e.co_count >= config.min_co_ratings)
        .map(|e| (e.value, e.other))
        .collect();
    neighbours.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    neighbours.truncate(config.neighbors);

    let mut counts = vec![0u32; table.item_slots()];
    for &(_, v) in &neighbours {
        for &(i, _) in table.user_ratings(UserId(v)) {
            if unseen(i) {
                counts[i.index()] += 1;
            }
        }
    }
    let mut items: Vec<ItemId> = if neighbours.is_empty() {
        table.items().filter(|&i| unseen(i)).collect()
    } else {
        (0..counts.len()).filter(|&k| counts[k] > 0).map(|k| ItemId(k as u32)).collect()
    };
    items.sort_by(|a, b| {
        counts[b.index()]
            .cmp(&counts[a.index()])
            .then_with(|| table.item_count(*b).cmp(&table.item_count(*a)))
            .then(a.cmp(b))
    });
    items.truncate(n);
    items
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{item_similarities, user_similarities};
    use crate::dataset::{compute_means, Rating};

    fn table(r: &[(u32, u32, u8)]) -> RatingTable {
        RatingTable::new(5, r.iter().map(|&(u, i, v)| Rating::new(u, i, v))).unwrap()
    }

    fn sims_from(pairs: &[(u32, u32, f64)], kind: crate::correlation::PairKind) -> SimilarityTable {
        SimilarityTable::from_entries(kind, pairs.iter().map(|&(a, b, s)| (a, b, s, 3)))
    }

    #[test]
    fn user_based_one_neighbour() {
        // r̄_u = 3, r̄_v = 3.5, r_vi = 4, s = 1
        let t = table(&[(1, 1, 3), (2, 2, 4), (2, 3, 3)]);
        let m = compute_means(&t);
        let sims = sims_from(&[(1, 2, 1.0)], crate::correlation::PairKind::UserUser);
        let p = user_based_predict(&t, &m, &sims, UserId(1), ItemId(2));
        assert!((p.raw - 3.5).abs() < 1e-12);
        assert_eq!(p.rounded, 4);
    }

    #[test]
    fn user_based_without_other_raters_uses_user_mean() {
        let t = table(&[(1, 1, 2), (1, 2, 4), (2, 3, 5)]);
        let m = compute_means(&t);
        let p = user_based_predict(&t, &m, &user_similarities(&t, &m), UserId(1), ItemId(1));
        assert_eq!(p.raw, 3.0);
    }

    #[test]
    fn user_based_symmetric_deviations_cancel() {
        // r̄_2 = r̄_3 = 3; deviations +1 and -1 on item 9
        let t = table(&[(1, 1, 3), (2, 9, 4), (2, 8, 2), (3, 9, 2), (3, 8, 4)]);
        let m = compute_means(&t);
        let sims = sims_from(&[(1, 2, 0.5), (1, 3, 0.5)], crate::correlation::PairKind::UserUser);
        let p = user_based_predict(&t, &m, &sims, UserId(1), ItemId(9));
        assert!((p.raw - 3.0).abs() < 1e-12);
    }

    #[test]
    fn item_based_one_rated_item() {
        // r̄_i = 3 (item 1), r_uj = 5, r̄_j = 4 (item 2), s = 1
        let t = table(&[(2, 1, 3), (1, 2, 5), (3, 2, 3)]);
        let m = compute_means(&t);
        let sims = sims_from(&[(1, 2, 1.0)], crate::correlation::PairKind::ItemItem);
        let p = item_based_predict(&t, &m, &sims, UserId(1), ItemId(1));
        assert!((p.raw - 4.0).abs() < 1e-12);
        assert_eq!(p.rounded, 4);
    }

    #[test]
    fn item_based_fallbacks() {
        let t = table(&[(2, 1, 3), (2, 2, 5), (3, 1, 4)]);
        let m = compute_means(&t);
        let sims = item_similarities(&t, &m);
        let p = item_based_predict(&t, &m, &sims, UserId(9), ItemId(1));
        assert_eq!(p.raw, 3.5);
        let zero = sims_from(&[(1, 2, 0.0)], crate::correlation::PairKind::ItemItem);
        let p = item_based_predict(&t, &m, &zero, UserId(2), ItemId(1));
        assert_eq!(p.raw, 3.5);
    }

    #[test]
    fn top_n_ranks_by_neighbour_count() {
        let mut r = vec![(1, 1, 5), (1, 2, 1)];
        for v in 2..=6 {
            r.extend([(v, 1, 5), (v, 2, 1), (v, 10, 4)]);
        }
        for v in 2..=4 {
            r.push((v, 11, 3));
        }
        let t = table(&r);
        let m = compute_means(&t);
        let got = user_based_topn(&t, &user_similarities(&t, &m), UserId(1), 2, &UserTopNConfig::default());
        assert_eq!(got, vec![ItemId(10), ItemId(11)]);
    }

    #[test]
    fn top_n_without_neighbours_returns_popular_unseen() {
        let t = table(&[(1, 1, 5), (2, 2, 3), (3, 2, 4), (3, 3, 4)]);
        let m = compute_means(&t);
        let got = user_based_topn(&t, &user_similarities(&t, &m), UserId(1), 5, &UserTopNConfig::default());
        assert_eq!(got, vec![ItemId(2), ItemId(3)]);
    }
}
