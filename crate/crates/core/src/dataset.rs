//! Rating tables, user/item attributes and rating means in the MovieLens
//! 100k file layout.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default rating scale maximum (ratings are integers in `1..=5`).
pub const DEFAULT_SCALE: u8 = 5;

pub const AGE_BUCKETS: [&str; 7] = [
    "under 18", "18-24", "25-34", "35-44", "45-49", "50-55", "56+",
];

pub const SEXES: [&str; 2] = ["M", "F"];

pub const OCCUPATIONS: [&str; 21] = [
    "administrator",
    "artist",
    "doctor",
    "educator",
    "engineer",
    "entertainment",
    "executive",
    "healthcare",
    "homemaker",
    "lawyer",
    "librarian",
    "marketing",
    "none",
    "other",
    "programmer",
    "retired",
    "salesman",
    "scientist",
    "student",
    "technician",
    "writer",
];

pub const GENRES: [&str; 19] = [
    "unknown",
    "action",
    "adventure",
    "animation",
    "children",
    "comedy",
    "crime",
    "documentary",
    "drama",
    "fantasy",
    "film-noir",
    "horror",
    "musical",
    "mystery",
    "romance",
    "sci-fi",
    "thriller",
    "war",
    "western",
];

pub const USER_ATTR_DIMS: usize = AGE_BUCKETS.len() + SEXES.len() + OCCUPATIONS.len();
pub const ITEM_ATTR_DIMS: usize = GENRES.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl UserId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rating {
    pub user: UserId,
    pub item: ItemId,
    pub value: u8,
}

impl Rating {
    pub fn new(user: u32, item: u32, value: u8) -> Self {
        Rating {
            user: UserId(user),
            item: ItemId(item),
            value,
        }
    }
}

/// Sparse user x item rating matrix with per-user and per-item indexes.
///
/// Ids index the per-user and per-item vectors directly, so ids are expected
/// to be small dense integers as in the MovieLens files.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingTable {
    scale: u8,
    ratings: Vec<Rating>,
    by_user: Vec<Vec<(ItemId, u8)>>,
    by_item: Vec<Vec<(UserId, u8)>>,
}

impl RatingTable {
    pub fn empty(scale: u8) -> Self {
        RatingTable {
            scale,
            ratings: Vec::new(),
            by_user: Vec::new(),
            by_item: Vec::new(),
        }
    }

    /// Builds a table, rejecting out-of-scale values and duplicate
    /// (user, item) cells.
    pub fn new(scale: u8, ratings: impl IntoIterator<Item = Rating>) -> Result<Self> {
        if scale < 2 {
            return Err(Error::Validation(format!(
                "rating scale must be at least 2, got {scale}"
            )));
        }
        let mut ratings: Vec<Rating> = ratings.into_iter().collect();
        for r in &ratings {
            if r.value < 1 || r.value > scale {
                return Err(Error::Validation(format!(
                    "rating {} by user {} on item {} is outside 1..={scale}",
                    r.value, r.user, r.item
                )));
            }
        }
        ratings.sort_unstable();
        if let Some(w) = ratings
            .windows(2)
            .find(|w| w[0].user == w[1].user && w[0].item == w[1].item)
        {
            return Err(Error::Validation(format!(
                "duplicate rating for user {} on item {}",
                w[0].user, w[0].item
            )));
        }
        Ok(Self::from_sorted(scale, ratings))
    }

    fn from_sorted(scale: u8, ratings: Vec<Rating>) -> Self {
        let user_slots = ratings.iter().map(|r| r.user.index() + 1).max().unwrap_or(0);
        let item_slots = ratings.iter().map(|r| r.item.index() + 1).max().unwrap_or(0);
        let mut by_user = vec![Vec::new(); user_slots];
        let mut by_item = vec![Vec::new(); item_slots];
        // sorted by (user, item), so both index lists come out sorted
        for r in &ratings {
            by_user[r.user.index()].push((r.item, r.value));
            by_item[r.item.index()].push((r.user, r.value));
        }
        RatingTable {
            scale,
            ratings,
            by_user,
            by_item,
        }
    }

    pub fn scale(&self) -> u8 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    /// All ratings, sorted by (user, item).
    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    /// One past the largest user id present.
    pub fn user_slots(&self) -> usize {
        self.by_user.len()
    }

    pub fn item_slots(&self) -> usize {
        self.by_item.len()
    }

    /// Items rated by `user`, sorted by item id.
    pub fn user_ratings(&self, user: UserId) -> &[(ItemId, u8)] {
        self.by_user.get(user.index()).map_or(&[], |v| v.as_slice())
    }

    /// Users who rated `item`, sorted by user id.
    pub fn item_ratings(&self, item: ItemId) -> &[(UserId, u8)] {
        self.by_item.get(item.index()).map_or(&[], |v| v.as_slice())
    }

    /// I(u)
    pub fn user_count(&self, user: UserId) -> usize {
        self.user_ratings(user).len()
    }

    /// U(i)
    pub fn item_count(&self, item: ItemId) -> usize {
        self.item_ratings(item).len()
    }

    pub fn get(&self, user: UserId, item: ItemId) -> Option<u8> {
        let row = self.user_ratings(user);
        row.binary_search_by_key(&item, |&(i, _)| i)
            .ok()
            .map(|k| row[k].1)
    }

    pub fn contains(&self, user: UserId, item: ItemId) -> bool {
        self.get(user, item).is_some()
    }

    /// Users with at least one rating, ascending.
    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.by_user
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(u, _)| UserId(u as u32))
    }

    /// Items with at least one rating, ascending.
    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.by_item
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(i, _)| ItemId(i as u32))
    }

    /// Seeded uniform subsample keeping `round(fraction * len)` ratings.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<RatingTable> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Validation(format!(
                "subsample fraction must lie in (0, 1], got {fraction}"
            )));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let keep = ((self.len() as f64) * fraction).round() as usize;
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        order.truncate(keep);
        order.sort_unstable();
        let ratings = order.into_iter().map(|k| self.ratings[k]).collect();
        Ok(Self::from_sorted(self.scale, ratings))
    }

    /// Writes `user<TAB>item<TAB>rating` lines in (user, item) order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.ratings {
            writeln!(out, "{}\t{}\t{}", r.user, r.item, r.value)?;
        }
        Ok(())
    }
}

fn split_lines(bytes: &[u8]) -> impl Iterator<Item = (usize, &[u8])> {
    bytes.split(|&b| b == b'\n').enumerate().filter_map(|(k, line)| {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if line.iter().all(u8::is_ascii_whitespace) {
            None
        } else {
            Some((k + 1, line))
        }
    })
}

fn parse_field<T: std::str::FromStr>(
    field: &[u8],
    what: &str,
    source_name: &str,
    line: usize,
) -> Result<T> {
    std::str::from_utf8(field)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: format!("invalid {what} {:?}", String::from_utf8_lossy(field)),
        })
}

/// Parses `user<TAB>item<TAB>rating[<TAB>timestamp]` lines.
pub fn parse_ratings(bytes: &[u8], source_name: &str, scale: u8) -> Result<RatingTable> {
    let mut ratings = Vec::new();
    for (line, text) in split_lines(bytes) {
        let fields: Vec<&[u8]> = text.split(|&b| b == b'\t').collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line,
                message: format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let user: u32 = parse_field(fields[0], "user id", source_name, line)?;
        let item: u32 = parse_field(fields[1], "item id", source_name, line)?;
        let value: u32 = parse_field(fields[2], "rating", source_name, line)?;
        if value < 1 || value > scale as u32 {
            return Err(Error::Validation(format!(
                "{source_name}:{line}: rating {value} is outside 1..={scale}"
            )));
        }
        ratings.push(Rating::new(user, item, value as u8));
    }
    RatingTable::new(scale, ratings)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_ratings(path: impl AsRef<Path>, scale: u8) -> Result<RatingTable> {
    let path = path.as_ref();
    parse_ratings(&read_file(path)?, &path.display().to_string(), scale)
}

/// One-hot age bucket, sex and occupation of a user.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UserAttributes {
    pub age_bucket: u8,
    pub sex: u8,
    pub occupation: u8,
}

impl UserAttributes {
    /// Positions of the three set bits in the 30-dimensional vector.
    pub fn active_dims(&self) -> [u16; 3] {
        [
            self.age_bucket as u16,
            (AGE_BUCKETS.len() + self.sex as usize) as u16,
            (AGE_BUCKETS.len() + SEXES.len() + self.occupation as usize) as u16,
        ]
    }

    pub fn to_vector(&self) -> Vec<u8> {
        let mut v = vec![0; USER_ATTR_DIMS];
        for d in self.active_dims() {
            v[d as usize] = 1;
        }
        v
    }
}

pub fn age_bucket(age: u32) -> u8 {
    match age {
        0..=17 => 0,
        18..=24 => 1,
        25..=34 => 2,
        35..=44 => 3,
        45..=49 => 4,
        50..=55 => 5,
        _ => 6,
    }
}

pub fn encode_user_attributes(age: u32, sex: &str, occupation: &str) -> Result<UserAttributes> {
    let sex_idx = match sex.trim() {
        s if s.eq_ignore_ascii_case("M") => 0,
        s if s.eq_ignore_ascii_case("F") => 1,
        other => return Err(Error::Validation(format!("unknown sex {other:?}"))),
    };
    let occ = occupation.trim();
    let occupation = OCCUPATIONS
        .iter()
        .position(|o| o.eq_ignore_ascii_case(occ))
        .ok_or_else(|| Error::Validation(format!("unknown occupation {occ:?}")))?;
    Ok(UserAttributes {
        age_bucket: age_bucket(age),
        sex: sex_idx,
        occupation: occupation as u8,
    })
}

/// Binary user and item attribute vectors, stored as their set positions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttributeCatalog {
    users: Vec<Option<[u16; 3]>>,
    items: Vec<Option<Vec<u16>>>,
}

impl AttributeCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_user(&mut self, user: UserId, attrs: UserAttributes) {
        let k = user.index();
        if self.users.len() <= k {
            self.users.resize(k + 1, None);
        }
        self.users[k] = Some(attrs.active_dims());
    }

    /// Sets the genre flags of `item`; `genres` are positions into [`GENRES`].
    pub fn insert_item(&mut self, item: ItemId, genres: &[u16]) -> Result<()> {
        if let Some(&g) = genres.iter().find(|&&g| g as usize >= ITEM_ATTR_DIMS) {
            return Err(Error::Validation(format!("genre index {g} out of range")));
        }
        let k = item.index();
        if self.items.len() <= k {
            self.items.resize(k + 1, None);
        }
        let mut g = genres.to_vec();
        g.sort_unstable();
        g.dedup();
        self.items[k] = Some(g);
        Ok(())
    }

    pub fn has_user(&self, user: UserId) -> bool {
        matches!(self.users.get(user.index()), Some(Some(_)))
    }

    pub fn has_item(&self, item: ItemId) -> bool {
        matches!(self.items.get(item.index()), Some(Some(_)))
    }

    /// Set dimensions of a_u; empty for users without attributes.
    pub fn user_dims(&self, user: UserId) -> &[u16] {
        match self.users.get(user.index()) {
            Some(Some(d)) => d,
            _ => &[],
        }
    }

    /// Set dimensions of a_i; empty for items without attributes.
    pub fn item_dims(&self, item: ItemId) -> &[u16] {
        match self.items.get(item.index()) {
            Some(Some(d)) => d,
            _ => &[],
        }
    }

    pub fn user_vector(&self, user: UserId) -> Option<Vec<u8>> {
        self.has_user(user).then(|| {
            let mut v = vec![0; USER_ATTR_DIMS];
            for &d in self.user_dims(user) {
                v[d as usize] = 1;
            }
            v
        })
    }

    pub fn item_vector(&self, item: ItemId) -> Option<Vec<u8>> {
        self.has_item(item).then(|| {
            let mut v = vec![0; ITEM_ATTR_DIMS];
            for &d in self.item_dims(item) {
                v[d as usize] = 1;
            }
            v
        })
    }

    pub fn user_dim_labels() -> Vec<String> {
        AGE_BUCKETS
            .iter()
            .map(|a| format!("age:{a}"))
            .chain(SEXES.iter().map(|s| format!("sex:{s}")))
            .chain(OCCUPATIONS.iter().map(|o| format!("occupation:{o}")))
            .collect()
    }

    pub fn item_dim_labels() -> Vec<String> {
        GENRES.iter().map(|g| format!("genre:{g}")).collect()
    }
}

/// Parses `id|age|gender|occupation|zip` lines into `catalog`.
pub fn parse_users(bytes: &[u8], source_name: &str, catalog: &mut AttributeCatalog) -> Result<()> {
    for (line, text) in split_lines(bytes) {
        let fields: Vec<&[u8]> = text.split(|&b| b == b'|').collect();
        if fields.len() < 4 {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line,
                message: format!("expected id|age|gender|occupation|zip, found {} fields", fields.len()),
            });
        }
        let id: u32 = parse_field(fields[0], "user id", source_name, line)?;
        let age: u32 = parse_field(fields[1], "age", source_name, line)?;
        let sex = String::from_utf8_lossy(fields[2]);
        let occupation = String::from_utf8_lossy(fields[3]);
        let attrs = encode_user_attributes(age, &sex, &occupation)
            .map_err(|e| Error::Validation(format!("{source_name}:{line}: {e}")))?;
        catalog.insert_user(UserId(id), attrs);
    }
    Ok(())
}

/// Parses `id|title|release|video release|url|<19 genre flags>` lines.
pub fn parse_items(bytes: &[u8], source_name: &str, catalog: &mut AttributeCatalog) -> Result<()> {
    for (line, text) in split_lines(bytes) {
        let fields: Vec<&[u8]> = text.split(|&b| b == b'|').collect();
        if fields.len() < 1 + ITEM_ATTR_DIMS {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line,
                message: format!(
                    "expected an id and {ITEM_ATTR_DIMS} genre flags, found {} fields",
                    fields.len()
                ),
            });
        }
        let id: u32 = parse_field(fields[0], "item id", source_name, line)?;
        let flags = &fields[fields.len() - ITEM_ATTR_DIMS..];
        let mut genres = Vec::new();
        for (g, flag) in flags.iter().enumerate() {
            match flag.trim_ascii() {
                b"0" => {}
                b"1" => genres.push(g as u16),
                other => {
                    return Err(Error::Parse {
                        source_name: source_name.to_string(),
                        line,
                        message: format!("genre flag must be 0 or 1, found {:?}", String::from_utf8_lossy(other)),
                    })
                }
            }
        }
        catalog.insert_item(ItemId(id), &genres)?;
    }
    Ok(())
}

pub fn load_attributes(users_path: impl AsRef<Path>, items_path: impl AsRef<Path>) -> Result<AttributeCatalog> {
    let (users_path, items_path) = (users_path.as_ref(), items_path.as_ref());
    let mut catalog = AttributeCatalog::new();
    parse_users(&read_file(users_path)?, &users_path.display().to_string(), &mut catalog)?;
    parse_items(&read_file(items_path)?, &items_path.display().to_string(), &mut catalog)?;
    Ok(catalog)
}

/// Checks that every rated user and item has an attribute vector.
pub fn check_coverage(table: &RatingTable, catalog: &AttributeCatalog) -> Result<()> {
    if let Some(u) = table.users().find(|&u| !catalog.has_user(u)) {
        return Err(Error::Validation(format!("user {u} has ratings but no attributes")));
    }
    if let Some(i) = table.items().find(|&i| !catalog.has_item(i)) {
        return Err(Error::Validation(format!("item {i} has ratings but no attributes")));
    }
    Ok(())
}

pub fn load_dataset(
    ratings_path: impl AsRef<Path>,
    users_path: impl AsRef<Path>,
    items_path: impl AsRef<Path>,
    scale: u8,
) -> Result<(RatingTable, AttributeCatalog)> {
    let table = load_ratings(ratings_path, scale)?;
    let catalog = load_attributes(users_path, items_path)?;
    check_coverage(&table, &catalog)?;
    Ok((table, catalog))
}

/// Per-user, per-item and global rating means of a training table.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanStats {
    user: Vec<Option<f64>>,
    item: Vec<Option<f64>>,
    global: f64,
}

impl MeanStats {
    pub fn from_parts(user: Vec<Option<f64>>, item: Vec<Option<f64>>, global: f64) -> Self {
        MeanStats { user, item, global }
    }

    pub fn user_mean(&self, user: UserId) -> Option<f64> {
        self.user.get(user.index()).copied().flatten()
    }

    pub fn item_mean(&self, item: ItemId) -> Option<f64> {
        self.item.get(item.index()).copied().flatten()
    }

    /// r̄_u, or the global mean for users without training ratings.
    pub fn user_mean_or_global(&self, user: UserId) -> f64 {
        self.user_mean(user).unwrap_or(self.global)
    }

    pub fn item_mean_or_global(&self, item: ItemId) -> f64 {
        self.item_mean(item).unwrap_or(self.global)
    }

    pub fn global_mean(&self) -> f64 {
        self.global
    }
}

pub fn compute_means(table: &RatingTable) -> MeanStats {
    let mean = |values: &mut dyn Iterator<Item = u8>| {
        let (sum, n) = values.fold((0u64, 0u64), |(s, n), v| (s + v as u64, n + 1));
        (n > 0).then(|| sum as f64 / n as f64)
    };
    let user = (0..table.user_slots())
        .map(|u| mean(&mut table.user_ratings(UserId(u as u32)).iter().map(|&(_, v)| v)))
        .collect();
    let item = (0..table.item_slots())
        .map(|i| mean(&mut table.item_ratings(ItemId(i as u32)).iter().map(|&(_, v)| v)))
        .collect();
    // midpoint of the scale when there is nothing to average
    let global = mean(&mut table.ratings().iter().map(|r| r.value))
        .unwrap_or((1.0 + table.scale() as f64) / 2.0);
    MeanStats { user, item, global }
}
