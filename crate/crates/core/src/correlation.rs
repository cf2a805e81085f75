//! User-user Pearson and item-item adjusted-cosine similarities, and the
//! positively correlated pairs that carry correlation features.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::{ItemId, MeanStats, RatingTable, UserId};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairKind {
    UserUser,
    ItemItem,
}

impl PairKind {
    pub fn tag(self) -> &'static str {
        match self {
            PairKind::UserUser => "user",
            PairKind::ItemItem => "item",
        }
    }
}

/// Running sums for one pair over its co-ratings.
#[derive(Clone, Copy, Debug, Default)]
struct CoSums {
    xy: f64,
    xx: f64,
    yy: f64,
    n: u32,
}

impl CoSums {
    #[inline]
    fn add(&mut self, x: f64, y: f64) {
        self.xy += x * y;
        self.xx += x * x;
        self.yy += y * y;
        self.n += 1;
    }

    /// Normalised cross-product; 0 for an empty set or a zero-variance side.
    fn value(&self) -> f64 {
        let denom = self.xx.sqrt() * self.yy.sqrt();
        if self.n == 0 || denom == 0.0 {
            0.0
        } else {
            (self.xy / denom).clamp(-1.0, 1.0)
        }
    }
}

/// Pearson correlation of two users over their co-rated items, centred by
/// each user's overall mean.
pub fn pearson_user_similarity(table: &RatingTable, means: &MeanStats, u: UserId, v: UserId) -> f64 {
    let (mu, mv) = (means.user_mean_or_global(u), means.user_mean_or_global(v));
    let (a, b) = (table.user_ratings(u), table.user_ratings(v));
    let mut sums = CoSums::default();
    let (mut p, mut q) = (0, 0);
    while p < a.len() && q < b.len() {
        match a[p].0.cmp(&b[q].0) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                sums.add(a[p].1 as f64 - mu, b[q].1 as f64 - mv);
                p += 1;
                q += 1;
            }
        }
    }
    sums.value()
}

/// Adjusted cosine of two items: co-raters' ratings centred by each rater's
/// own mean.
pub fn adjusted_cosine_item_similarity(table: &RatingTable, means: &MeanStats, i: ItemId, j: ItemId) -> f64 {
    let (a, b) = (table.item_ratings(i), table.item_ratings(j));
    let mut sums = CoSums::default();
    let (mut p, mut q) = (0, 0);
    while p < a.len() && q < b.len() {
        match a[p].0.cmp(&b[q].0) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                let m = means.user_mean_or_global(a[p].0);
                sums.add(a[p].1 as f64 - m, b[q].1 as f64 - m);
                p += 1;
                q += 1;
            }
        }
    }
    sums.value()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityEntry {
    pub other: u32,
    pub value: f64,
    pub co_count: u32,
}

/// Similarities over every pair that shares at least one co-rating.
///
/// Rows are stored for both endpoints and sorted by partner id, so a row is
/// also the node's neighbourhood in the co-rating graph.
#[derive(Clone, Debug)]
pub struct SimilarityTable {
    kind: PairKind,
    rows: Vec<Vec<SimilarityEntry>>,
}

impl SimilarityTable {
    pub fn kind(&self) -> PairKind {
        self.kind
    }

    pub fn row(&self, a: u32) -> &[SimilarityEntry] {
        self.rows.get(a as usize).map_or(&[], |r| r.as_slice())
    }

    pub fn get(&self, a: u32, b: u32) -> Option<SimilarityEntry> {
        let row = self.row(a);
        row.binary_search_by_key(&b, |e| e.other).ok().map(|k| row[k])
    }

    /// Similarity, 0 when the pair never co-rated.
    pub fn value(&self, a: u32, b: u32) -> f64 {
        self.get(a, b).map_or(0.0, |e| e.value)
    }

    /// Unordered pairs `(a, b, entry)` with `a < b`.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, SimilarityEntry)> + '_ {
        self.rows.iter().enumerate().flat_map(|(a, row)| {
            row.iter()
                .filter(move |e| e.other > a as u32)
                .map(move |e| (a as u32, *e))
        })
    }

    pub fn pair_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Builds a table from explicit `(a, b, value, co_count)` entries, e.g.
    /// for fixtures. Self pairs are dropped; later duplicates win.
    pub fn from_entries(kind: PairKind, entries: impl IntoIterator<Item = (u32, u32, f64, u32)>) -> Self {
        let mut upper: Vec<Vec<SimilarityEntry>> = Vec::new();
        for (a, b, value, co_count) in entries {
            let (a, b) = match a.cmp(&b) {
                std::cmp::Ordering::Less => (a, b),
                std::cmp::Ordering::Greater => (b, a),
                std::cmp::Ordering::Equal => continue,
            };
            if upper.len() <= b as usize {
                upper.resize(b as usize + 1, Vec::new());
            }
            let row = &mut upper[a as usize];
            row.retain(|e| e.other != b);
            row.push(SimilarityEntry { other: b, value, co_count });
        }
        for row in &mut upper {
            row.sort_by_key(|e| e.other);
        }
        let mut table = SimilarityTable::from_upper(kind, upper);
        for row in &mut table.rows {
            row.sort_by_key(|e| e.other);
        }
        table
    }

    fn from_upper(kind: PairKind, upper: Vec<Vec<SimilarityEntry>>) -> Self {
        let mut rows: Vec<Vec<SimilarityEntry>> = vec![Vec::new(); upper.len()];
        for (a, entries) in upper.into_iter().enumerate() {
            for e in entries {
                rows[e.other as usize].push(SimilarityEntry { other: a as u32, ..e });
                rows[a].push(e);
            }
        }
        SimilarityTable { kind, rows }
    }
}

/// Dense scratch accumulator reused across one anchor's partners.
struct Scratch {
    sums: Vec<CoSums>,
    touched: Vec<u32>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            sums: vec![CoSums::default(); n],
            touched: Vec::new(),
        }
    }

    #[inline]
    fn add(&mut self, b: u32, x: f64, y: f64) {
        let s = &mut self.sums[b as usize];
        if s.n == 0 {
            self.touched.push(b);
        }
        s.add(x, y);
    }

    fn drain(&mut self) -> Vec<SimilarityEntry> {
        self.touched.sort_unstable();
        let out = self
            .touched
            .iter()
            .map(|&b| {
                let s = self.sums[b as usize];
                SimilarityEntry {
                    other: b,
                    value: s.value(),
                    co_count: s.n,
                }
            })
            .collect();
        for &b in &self.touched {
            self.sums[b as usize] = CoSums::default();
        }
        self.touched.clear();
        out
    }
}

/// Pearson similarity for all co-rating user pairs, enumerated through the
/// per-item rater lists.
pub fn user_similarities(table: &RatingTable, means: &MeanStats) -> SimilarityTable {
    let n = table.user_slots();
    let upper = par::map_range(n, |a| {
        let u = UserId(a as u32);
        let mu = means.user_mean_or_global(u);
        let mut scratch = Scratch::new(n);
        // items in ascending order, matching the merge order of the pointwise route
        for &(item, r_a) in table.user_ratings(u) {
            let raters = table.item_ratings(item);
            let start = raters.partition_point(|&(v, _)| v <= u);
            for &(v, r_b) in &raters[start..] {
                scratch.add(v.0, r_a as f64 - mu, r_b as f64 - means.user_mean_or_global(v));
            }
        }
        scratch.drain()
    });
    SimilarityTable::from_upper(PairKind::UserUser, upper)
}

/// Adjusted-cosine similarity for all co-rated item pairs, enumerated
/// through the per-user item lists.
pub fn item_similarities(table: &RatingTable, means: &MeanStats) -> SimilarityTable {
    let n = table.item_slots();
    let upper = par::map_range(n, |a| {
        let i = ItemId(a as u32);
        let mut scratch = Scratch::new(n);
        for &(user, r_a) in table.item_ratings(i) {
            let m = means.user_mean_or_global(user);
            let items = table.user_ratings(user);
            let start = items.partition_point(|&(j, _)| j <= i);
            for &(j, r_b) in &items[start..] {
                scratch.add(j.0, r_a as f64 - m, r_b as f64 - m);
            }
        }
        scratch.drain()
    });
    SimilarityTable::from_upper(PairKind::ItemItem, upper)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub min_user_co_ratings: u32,
    pub min_item_co_ratings: u32,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            min_user_co_ratings: 2,
            min_item_co_ratings: 2,
        }
    }
}

/// Set of unordered pairs, each owning one parameter slot.
///
/// `rows[a]` lists `(b, slot)` for every selected partner `b`, sorted by `b`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairIndex {
    pairs: Vec<(u32, u32)>,
    similarity: Vec<f64>,
    rows: Vec<Vec<(u32, u32)>>,
}

impl PairIndex {
    /// Normalises to `a < b`, drops self-pairs and duplicates, and assigns
    /// slots in ascending pair order.
    pub fn new(pairs: impl IntoIterator<Item = (u32, u32, f64)>) -> Self {
        let mut list: Vec<(u32, u32, f64)> = pairs
            .into_iter()
            .filter(|&(a, b, _)| a != b)
            .map(|(a, b, s)| (a.min(b), a.max(b), s))
            .collect();
        list.sort_by_key(|x| (x.0, x.1));
        list.dedup_by(|x, y| x.0 == y.0 && x.1 == y.1);
        let n = list.iter().map(|&(_, b, _)| b as usize + 1).max().unwrap_or(0);
        let mut rows: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n];
        for (slot, &(a, b, _)) in list.iter().enumerate() {
            rows[a as usize].push((b, slot as u32));
            rows[b as usize].push((a, slot as u32));
        }
        for row in &mut rows {
            row.sort_unstable();
        }
        PairIndex {
            pairs: list.iter().map(|&(a, b, _)| (a, b)).collect(),
            similarity: list.iter().map(|&(_, _, s)| s).collect(),
            rows,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        Self::new(pairs.into_iter().map(|(a, b)| (a, b, 0.0)))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pair owning `slot`, with `a < b`.
    pub fn pair(&self, slot: usize) -> (u32, u32) {
        self.pairs[slot]
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    /// Similarity recorded at selection time (0 for hand-built indexes).
    pub fn similarity(&self, slot: usize) -> f64 {
        self.similarity[slot]
    }

    pub fn row(&self, a: u32) -> &[(u32, u32)] {
        self.rows.get(a as usize).map_or(&[], |r| r.as_slice())
    }

    pub fn slot(&self, a: u32, b: u32) -> Option<usize> {
        let row = self.row(a);
        row.binary_search_by_key(&b, |&(o, _)| o)
            .ok()
            .map(|k| row[k].1 as usize)
    }

    pub fn contains(&self, a: u32, b: u32) -> bool {
        self.slot(a, b).is_some()
    }
}

/// Pairs that carry correlation features.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelectedPairs {
    pub user_pairs: PairIndex,
    pub item_pairs: PairIndex,
}

impl SelectedPairs {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn index(&self, kind: PairKind) -> &PairIndex {
        match kind {
            PairKind::UserUser => &self.user_pairs,
            PairKind::ItemItem => &self.item_pairs,
        }
    }

    /// Keeps pairs with strictly positive similarity and enough co-ratings.
    pub fn from_similarities(users: &SimilarityTable, items: &SimilarityTable, cfg: &SelectionConfig) -> Self {
        let pick = |t: &SimilarityTable, min: u32| {
            PairIndex::new(
                t.pairs()
                    .filter(|(_, e)| e.value > 0.0 && e.co_count >= min)
                    .map(|(a, e)| (a, e.other, e.value)),
            )
        };
        SelectedPairs {
            user_pairs: pick(users, cfg.min_user_co_ratings),
            item_pairs: pick(items, cfg.min_item_co_ratings),
        }
    }

    /// Writes `kind,a,b,similarity` rows after a `# key=<key>` header line.
    pub fn write_csv<W: Write>(&self, key: &str, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# key={key}")?;
        writeln!(out, "kind,a,b,similarity")?;
        for kind in [PairKind::UserUser, PairKind::ItemItem] {
            let index = self.index(kind);
            for (slot, &(a, b)) in index.pairs().iter().enumerate() {
                writeln!(out, "{},{a},{b},{}", kind.tag(), index.similarity(slot))?;
            }
        }
        Ok(())
    }

    /// Reads a cache written by [`SelectedPairs::write_csv`]; `Ok(None)` when
    /// the stored key differs from `key`.
    pub fn read_csv<R: BufRead>(key: &str, input: R) -> Result<Option<Self>> {
        let mut lines = input.lines();
        let bad = |m: &str| Error::Validation(format!("pair cache: {m}"));
        let header = lines.next().transpose().map_err(|e| bad(&e.to_string()))?;
        if header.as_deref() != Some(&format!("# key={key}")) {
            return Ok(None);
        }
        lines.next();
        let (mut users, mut items) = (Vec::new(), Vec::new());
        for line in lines {
            let line = line.map_err(|e| bad(&e.to_string()))?;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(&format!("bad row {line:?}")));
            }
            let a: u32 = f[1].parse().map_err(|_| bad(&format!("bad id in {line:?}")))?;
            let b: u32 = f[2].parse().map_err(|_| bad(&format!("bad id in {line:?}")))?;
            let s: f64 = f[3].parse().map_err(|_| bad(&format!("bad similarity in {line:?}")))?;
            match f[0] {
                "user" => users.push((a, b, s)),
                "item" => items.push((a, b, s)),
                other => return Err(bad(&format!("unknown kind {other:?}"))),
            }
        }
        Ok(Some(SelectedPairs {
            user_pairs: PairIndex::new(users),
            item_pairs: PairIndex::new(items),
        }))
    }
}

pub fn select_positive_pairs(table: &RatingTable, means: &MeanStats, cfg: &SelectionConfig) -> SelectedPairs {
    SelectedPairs::from_similarities(&user_similarities(table, means), &item_similarities(table, means), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compute_means, Rating};

    fn table(rows: &[(u32, u32, u8)]) -> RatingTable {
        RatingTable::new(5, rows.iter().map(|&(u, i, r)| Rating::new(u, i, r))).unwrap()
    }

    #[test]
    fn pearson_examples() {
        let t = table(&[(1, 1, 1), (1, 2, 2), (1, 3, 3), (2, 1, 2), (2, 2, 3), (2, 3, 4)]);
        let m = compute_means(&t);
        assert_eq!(m.user_mean(UserId(1)), Some(2.0));
        assert_eq!(m.user_mean(UserId(2)), Some(3.0));
        assert!((pearson_user_similarity(&t, &m, UserId(1), UserId(2)) - 1.0).abs() < 1e-12);

        let t = table(&[(1, 1, 1), (1, 2, 3), (2, 1, 3), (2, 2, 1)]);
        let m = compute_means(&t);
        assert!((pearson_user_similarity(&t, &m, UserId(1), UserId(2)) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_co_rating_with_zero_deviation_is_zero() {
        // user 1's only co-rated item sits exactly at its mean
        let t = table(&[(1, 1, 3), (1, 2, 2), (1, 3, 4), (2, 1, 5), (2, 4, 1)]);
        let m = compute_means(&t);
        assert_eq!(pearson_user_similarity(&t, &m, UserId(1), UserId(2)), 0.0);
        assert_eq!(pearson_user_similarity(&t, &m, UserId(1), UserId(9)), 0.0);
    }

    #[test]
    fn adjusted_cosine_examples() {
        // both items one above each rater's mean
        let t = table(&[(1, 1, 4), (1, 2, 4), (1, 3, 1), (2, 1, 5), (2, 2, 5), (2, 3, 2)]);
        let m = compute_means(&t);
        assert!((adjusted_cosine_item_similarity(&t, &m, ItemId(1), ItemId(2)) - 1.0).abs() < 1e-12);
        let t = table(&[(1, 1, 4), (2, 2, 4)]);
        let m = compute_means(&t);
        assert_eq!(adjusted_cosine_item_similarity(&t, &m, ItemId(1), ItemId(2)), 0.0);
        let t = table(&[(1, 1, 3), (1, 2, 3)]);
        let m = compute_means(&t);
        assert_eq!(adjusted_cosine_item_similarity(&t, &m, ItemId(1), ItemId(2)), 0.0);
    }

    #[test]
    fn bulk_tables_match_pointwise_route() {
        let t = table(&[
            (1, 1, 5), (1, 2, 3), (1, 4, 1), (2, 1, 4), (2, 2, 2), (2, 3, 5),
            (3, 2, 4), (3, 3, 1), (3, 4, 2), (4, 1, 1), (4, 4, 5), (4, 3, 3),
        ]);
        let m = compute_means(&t);
        let us = user_similarities(&t, &m);
        for a in 1..=4 {
            for b in 1..=4 {
                if a == b {
                    continue;
                }
                let expect = pearson_user_similarity(&t, &m, UserId(a), UserId(b));
                assert_eq!(us.value(a, b), expect, "users {a} {b}");
            }
        }
        let is = item_similarities(&t, &m);
        for a in 1..=4 {
            for b in 1..=4 {
                if a != b {
                    let expect = adjusted_cosine_item_similarity(&t, &m, ItemId(a), ItemId(b));
                    assert_eq!(is.value(a, b), expect, "items {a} {b}");
                }
            }
        }
        assert_eq!(us.pairs().count(), us.pair_count());
    }

    #[test]
    fn selection_is_strictly_positive_with_min_co_ratings() {
        let t = table(&[(1, 1, 3), (1, 2, 4), (1, 3, 1), (2, 1, 3), (2, 2, 4), (2, 3, 2)]);
        let m = compute_means(&t);
        let sel = select_positive_pairs(&t, &m, &SelectionConfig::default());
        assert!(sel.user_pairs.contains(1, 2));
        assert!(sel.user_pairs.contains(2, 1));
        for (slot, &(a, b)) in sel.user_pairs.pairs().iter().enumerate() {
            assert!(a < b);
            assert!(sel.user_pairs.similarity(slot) > 0.0);
        }

        let strict = SelectionConfig { min_user_co_ratings: 4, min_item_co_ratings: 4 };
        let sel = select_positive_pairs(&t, &m, &strict);
        assert!(sel.user_pairs.is_empty());
        assert!(sel.item_pairs.is_empty());
    }

    #[test]
    fn pair_index_normalises() {
        let p = PairIndex::from_pairs([(3, 1), (1, 3), (2, 2), (0, 5)]);
        assert_eq!(p.pairs(), &[(0, 5), (1, 3)]);
        assert_eq!(p.slot(3, 1), Some(1));
        assert_eq!(p.slot(5, 0), Some(0));
        assert_eq!(p.slot(2, 2), None);
        assert_eq!(p.row(3), &[(1, 1)]);
    }

    #[test]
    fn cache_round_trip() {
        let t = table(&[(1, 1, 3), (1, 2, 4), (1, 3, 1), (2, 1, 3), (2, 2, 4), (2, 3, 2), (3, 1, 5), (3, 3, 1)]);
        let m = compute_means(&t);
        let sel = select_positive_pairs(&t, &m, &SelectionConfig::default());
        let mut buf = Vec::new();
        sel.write_csv("abc", &mut buf).unwrap();
        let back = SelectedPairs::read_csv("abc", buf.as_slice()).unwrap().unwrap();
        assert_eq!(back, sel);
        assert!(SelectedPairs::read_csv("other", buf.as_slice()).unwrap().is_none());
    }
}
