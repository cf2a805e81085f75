//! Shared fixtures for the integration tests: small random models and an
//! independent brute-force scorer built straight from the definitions.
#![allow(dead_code)]

pub mod checks;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prefnet::correlation::{PairIndex, SelectedPairs};
use prefnet::dataset::{
    compute_means, encode_user_attributes, AttributeCatalog, ItemId, Rating, RatingTable, UserId, GENRES, OCCUPATIONS,
    SEXES,
};
use prefnet::features::{FeatureToggles, IdentityTying, ParameterVector};
use prefnet::model::ModelContext;
use prefnet::trainer::random_params;

pub struct Instance {
    pub ctx: ModelContext,
    pub params: ParameterVector,
    pub scale: u8,
}

/// Random attributes for users and items `1..=n`.
pub fn random_attrs(rng: &mut impl Rng, users: u32, items: u32) -> AttributeCatalog {
    let mut attrs = AttributeCatalog::new();
    for u in 1..=users {
        let a = encode_user_attributes(
            rng.gen_range(7..70),
            SEXES[rng.gen_range(0..SEXES.len())],
            OCCUPATIONS[rng.gen_range(0..OCCUPATIONS.len())],
        )
        .unwrap();
        attrs.insert_user(UserId(u), a);
    }
    for i in 1..=items {
        let genres: Vec<u16> = (0..GENRES.len() as u16).filter(|_| rng.gen_bool(0.2)).collect();
        attrs.insert_item(ItemId(i), &genres).unwrap();
    }
    attrs
}

/// Every pair of users and every pair of items in `1..=n`.
pub fn all_pairs(users: u32, items: u32) -> SelectedPairs {
    let pairs = |n: u32| PairIndex::from_pairs((1..=n).flat_map(|a| (a + 1..=n).map(move |b| (a, b))));
    SelectedPairs {
        user_pairs: pairs(users),
        item_pairs: pairs(items),
    }
}

/// `nodes` distinct ratings on a `grid x grid` user-item grid with random
/// values, all pairs selected and random weights in every block.
pub fn random_instance(seed: u64, nodes: usize, grid: u32, scale: u8, tying: IdentityTying) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<(u32, u32)> = (1..=grid).flat_map(|u| (1..=grid).map(move |i| (u, i))).collect();
    for k in (1..cells.len()).rev() {
        cells.swap(k, rng.gen_range(0..=k));
    }
    cells.truncate(nodes);
    let table = RatingTable::new(
        scale,
        cells.iter().map(|&(u, i)| Rating::new(u, i, rng.gen_range(1..=scale))),
    )
    .unwrap();
    let attrs = random_attrs(&mut rng, grid, grid);
    let means = compute_means(&table);
    let ctx = ModelContext::with_pairs(table, means, attrs, all_pairs(grid, grid), FeatureToggles::ALL);
    let params = random_params(ctx.layout(tying), rng.gen(), 1.0);
    Instance { ctx, params, scale }
}

fn g(alpha: f64, scale: u8) -> f64 {
    1.0 - alpha / (scale as f64 - 1.0)
}

/// Means recomputed from the raw ratings.
pub struct OracleMeans {
    user: Vec<(u32, f64)>,
    item: Vec<(u32, f64)>,
    global: f64,
}

impl OracleMeans {
    pub fn of(table: &RatingTable) -> Self {
        let mean_by = |key: &dyn Fn(&Rating) -> u32| {
            let mut keys: Vec<u32> = table.ratings().iter().map(key).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter()
                .map(|k| {
                    let v: Vec<f64> = table.ratings().iter().filter(|r| key(r) == k).map(|r| r.value as f64).collect();
                    (k, v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect::<Vec<_>>()
        };
        let n = table.len() as f64;
        OracleMeans {
            user: mean_by(&|r| r.user.0),
            item: mean_by(&|r| r.item.0),
            global: if n > 0.0 {
                table.ratings().iter().map(|r| r.value as f64).sum::<f64>() / n
            } else {
                (1.0 + table.scale() as f64) / 2.0
            },
        }
    }

    pub fn user(&self, u: u32) -> f64 {
        self.user.iter().find(|(k, _)| *k == u).map_or(self.global, |p| p.1)
    }

    pub fn item(&self, i: u32) -> f64 {
        self.item.iter().find(|(k, _)| *k == i).map_or(self.global, |p| p.1)
    }
}

/// Direct evaluation of the log-potentials of a configuration.
pub struct Oracle<'a> {
    pub inst: &'a Instance,
    pub means: OracleMeans,
}

impl<'a> Oracle<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        Oracle {
            means: OracleMeans::of(inst.ctx.table()),
            inst,
        }
    }

    /// w_v · f_v(r) for node (u, i).
    pub fn node(&self, u: u32, i: u32, r: u8) -> f64 {
        let (ctx, p, s) = (&self.inst.ctx, &self.inst.params, self.inst.scale);
        let fi = g((r as f64 - self.means.item(i)).abs(), s);
        let fu = g((r as f64 - self.means.user(u)).abs(), s);
        let mut v = p.item_identity(ItemId(i)) * fi + p.user_identity(UserId(u)) * fu;
        for &d in ctx.attrs().user_dims(UserId(u)) {
            v += p.content_user(d) * fi;
        }
        for &d in ctx.attrs().item_dims(ItemId(i)) {
            v += p.content_item(d) * fu;
        }
        v
    }

    /// w_e · f_e for two nodes, 0 when they share nothing or the pair is
    /// not selected.
    pub fn edge(&self, (u1, i1, r1): (u32, u32, u8), (u2, i2, r2): (u32, u32, u8)) -> f64 {
        let (ctx, p, s) = (&self.inst.ctx, &self.inst.params, self.inst.scale);
        if u1 == u2 && i1 != i2 {
            if let Some(slot) = ctx.pairs().item_pairs.slot(i1, i2) {
                let d = (r1 as f64 - self.means.item(i1)) - (r2 as f64 - self.means.item(i2));
                return p.pair_weight(prefnet::correlation::PairKind::ItemItem, slot) * g(d.abs(), s);
            }
        }
        if i1 == i2 && u1 != u2 {
            if let Some(slot) = ctx.pairs().user_pairs.slot(u1, u2) {
                let d = (r1 as f64 - self.means.user(u1)) - (r2 as f64 - self.means.user(u2));
                return p.pair_weight(prefnet::correlation::PairKind::UserUser, slot) * g(d.abs(), s);
            }
        }
        0.0
    }

    /// Unnormalised log joint of `values` on `nodes`.
    pub fn log_score(&self, nodes: &[(u32, u32)], values: &[u8]) -> f64 {
        let mut s = 0.0;
        for (k, &(u, i)) in nodes.iter().enumerate() {
            s += self.node(u, i, values[k]);
            for l in k + 1..nodes.len() {
                let (u2, i2) = nodes[l];
                s += self.edge((u, i, values[k]), (u2, i2, values[l]));
            }
        }
        s
    }

    /// Every assignment of `1..=S` to `n` nodes, lexicographically.
    pub fn assignments(&self, n: usize) -> Vec<Vec<u8>> {
        let s = self.inst.scale;
        let mut out = vec![Vec::new()];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (1..=s).map(move |r| {
                        let mut v = prefix.clone();
                        v.push(r);
                        v
                    })
                })
                .collect();
        }
        out
    }

    /// Training nodes and their observed values.
    pub fn observed(&self) -> (Vec<(u32, u32)>, Vec<u8>) {
        let t = self.inst.ctx.table().ratings();
        (t.iter().map(|r| (r.user.0, r.item.0)).collect(), t.iter().map(|r| r.value).collect())
    }

    /// P(x_k = r | every other node observed) by normalising the full joint
    /// over all configurations.
    pub fn conditional_by_enumeration(&self, nodes: &[(u32, u32)], observed: &[u8], k: usize) -> Vec<f64> {
        let all = self.assignments(nodes.len());
        let max = all
            .iter()
            .map(|a| self.log_score(nodes, a))
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = all.iter().map(|a| (self.log_score(nodes, a) - max).exp()).collect();
        let s = self.inst.scale as usize;
        let mut num = vec![0.0; s];
        for (a, w) in all.iter().zip(&weights) {
            let rest_matches = a.iter().enumerate().all(|(j, &v)| j == k || v == observed[j]);
            if rest_matches {
                num[a[k] as usize - 1] += w;
            }
        }
        let z: f64 = num.iter().sum();
        num.iter().map(|v| v / z).collect()
    }

    /// Energy of the observed table plus the extra node `(u, i) = r`.
    pub fn energy_with(&self, extra: Option<(u32, u32, u8)>) -> f64 {
        let (mut nodes, mut values) = self.observed();
        if let Some((u, i, r)) = extra {
            nodes.push((u, i));
            values.push(r);
        }
        -self.log_score(&nodes, &values)
    }
}

/// MovieLens-100k directory: `PREFNET_ML100K_DIR` or `<workspace>/data/ml-100k`.
pub fn ml100k_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("PREFNET_ML100K_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k"));
    ["u1.base", "u1.test", "u.user", "u.item"]
        .iter()
        .all(|f| dir.join(f).is_file())
        .then_some(dir)
}
