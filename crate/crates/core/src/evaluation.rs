//! Rating-prediction metrics, halflife utility for top-N lists, recall and
//! sparsity sweeps, and the CSV/JSON report writers.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{item_based_predict, user_based_predict, user_based_topn, UserTopNConfig};
use crate::correlation::SelectionConfig;
use crate::dataset::{AttributeCatalog, ItemId, RatingTable, UserId};
use crate::error::{Error, Result};
use crate::features::{FeatureToggles, IdentityTying};
use crate::inference::{predict_rating, recommend_top_n, Ranking, TopNConfig};
use crate::model::ModelContext;
use crate::par;
use crate::trainer::{fit, FittedModel, TrainConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_HALFLIFE: f64 = 5.0;
pub const SPARSITY_FRACTIONS: [f64; 4] = [0.1, 0.25, 0.5, 1.0];

/// MAE and mean 0/1 error. Both are `None` when there was nothing to score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub mae: Option<f64>,
    pub zero_one: Option<f64>,
}

impl MetricReport {
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// `predictions[k]` scored against `truths[k]`.
pub fn rating_metrics(predictions: &[f64], truths: &[u8]) -> MetricReport {
    assert_eq!(predictions.len(), truths.len(), "predictions and truths must align");
    let n = predictions.len();
    if n == 0 {
        return MetricReport { n, mae: None, zero_one: None };
    }
    let (mut abs, mut wrong) = (0.0, 0usize);
    for (&p, &t) in predictions.iter().zip(truths) {
        abs += (p - t as f64).abs();
        if p != t as f64 {
            wrong += 1;
        }
    }
    MetricReport {
        n,
        mae: Some(abs / n as f64),
        zero_one: Some(wrong as f64 / n as f64),
    }
}

/// Utility of a hit at 1-based `rank` with halflife `alpha`.
pub fn rank_utility(rank: usize, alpha: f64) -> f64 {
    2f64.powf(-((rank as f64 - 1.0) / (alpha - 1.0)))
}

/// Utility of `count` hits packed from rank 1.
pub fn ideal_utility(count: usize, alpha: f64) -> f64 {
    (1..=count).map(|j| rank_utility(j, alpha)).sum()
}

/// One ranked list: items with the method's predicted rating for each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub user: UserId,
    pub items: Vec<(ItemId, u8)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserUtility {
    pub user: UserId,
    pub utility: f64,
    pub ideal: f64,
    pub hits: usize,
    pub test_items: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub alpha: f64,
    pub per_user: Vec<UserUtility>,
    /// `100 Σ R_u / Σ R_u^max`; 0 when no user has test items.
    pub utility: f64,
    pub hits: usize,
    pub test_items: usize,
    pub recall: f64,
    pub mae_on_hits: Option<f64>,
}

/// Scores ranked lists against the held-out ratings in `test`.
pub fn expected_utility(lists: &[RecommendationList], test: &RatingTable, alpha: f64) -> Result<UtilityReport> {
    if !(alpha > 1.0) {
        return Err(Error::Validation(format!("halflife must exceed 1, got {alpha}")));
    }
    let mut per_user = Vec::with_capacity(lists.len());
    let (mut abs, mut hits, mut test_items) = (0.0, 0usize, 0usize);
    let (mut sum_u, mut sum_max) = (0.0, 0.0);
    for list in lists {
        let truth = test.user_ratings(list.user);
        let mut u = UserUtility {
            user: list.user,
            utility: 0.0,
            ideal: ideal_utility(truth.len(), alpha),
            hits: 0,
            test_items: truth.len(),
        };
        for (k, &(item, predicted)) in list.items.iter().enumerate() {
            if let Ok(p) = truth.binary_search_by_key(&item, |&(j, _)| j) {
                u.utility += rank_utility(k + 1, alpha);
                u.hits += 1;
                abs += (predicted as f64 - truth[p].1 as f64).abs();
            }
        }
        sum_u += u.utility;
        sum_max += u.ideal;
        hits += u.hits;
        test_items += u.test_items;
        per_user.push(u);
    }
    Ok(UtilityReport {
        alpha,
        per_user,
        utility: if sum_max > 0.0 { 100.0 * sum_u / sum_max } else { 0.0 },
        hits,
        test_items,
        recall: if test_items > 0 { hits as f64 / test_items as f64 } else { 0.0 },
        mae_on_hits: (hits > 0).then(|| abs / hits as f64),
    })
}

/// Truncates every list to its first `n` entries.
pub fn truncate_lists(lists: &[RecommendationList], n: usize) -> Vec<RecommendationList> {
    lists
        .iter()
        .map(|l| RecommendationList {
            user: l.user,
            items: l.items.iter().take(n).copied().collect(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub recall: f64,
    pub utility: f64,
    pub mae_on_hits: Option<f64>,
}

/// Recall, utility and MAE-on-hits for each list length in `ns`, using
/// prefixes of `lists` (which must be at least `max(ns)` long when enough
/// candidates exist).
pub fn recall_sweep(lists: &[RecommendationList], test: &RatingTable, ns: &[usize], alpha: f64) -> Result<Vec<SweepRow>> {
    if ns.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Validation("list lengths must be ascending".into()));
    }
    ns.iter()
        .map(|&n| {
            let r = expected_utility(&truncate_lists(lists, n), test, alpha)?;
            Ok(SweepRow {
                n,
                recall: r.recall,
                utility: r.utility,
                mae_on_hits: r.mae_on_hits,
            })
        })
        .collect()
}

/// Users with at least one held-out rating, ascending.
pub fn test_users(test: &RatingTable) -> Vec<UserId> {
    test.users().filter(|&u| test.user_count(u) > 0).collect()
}

pub fn pn_lists(model: &FittedModel, users: &[UserId], config: &TopNConfig) -> Vec<RecommendationList> {
    par::map_slice(users, |&u| {
        let rec = recommend_top_n(&model.ctx, &model.params, u, config);
        RecommendationList {
            user: u,
            items: rec.entries.iter().map(|e| (e.item, e.predicted)).collect(),
        }
    })
}

/// User-based top-N lists, each hit scored with the rounded user-based
/// prediction.
pub fn user_based_lists(ctx: &ModelContext, users: &[UserId], n: usize, config: &UserTopNConfig) -> Vec<RecommendationList> {
    par::map_slice(users, |&u| {
        let items = user_based_topn(ctx.table(), ctx.user_similarities(), u, n, config);
        RecommendationList {
            user: u,
            items: items
                .into_iter()
                .map(|i| (i, user_based_predict(ctx.table(), ctx.means(), ctx.user_similarities(), u, i).rounded))
                .collect(),
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopNRow {
    pub method: String,
    pub n: usize,
    pub mae_on_hits: Option<f64>,
    pub utility: f64,
    pub recall: f64,
    pub hits: usize,
}

impl TopNRow {
    fn from_report(method: &str, n: usize, r: &UtilityReport) -> Self {
        TopNRow {
            method: method.to_string(),
            n,
            mae_on_hits: r.mae_on_hits,
            utility: r.utility,
            recall: r.recall,
            hits: r.hits,
        }
    }
}

/// Method labels used across reports.
pub mod method {
    pub const PN_MAXIMAL: &str = "pn-maximal-energy";
    pub const PN_EXPECTED: &str = "pn-expected-energy";
    pub const USER_BASED: &str = "user-based";
    pub const PN_HYBRID: &str = "pn-hybrid";
    pub const PN_CONTENT: &str = "pn-content";
    pub const PN_CORRELATION: &str = "pn-correlation";
    pub const USER_RAW: &str = "user-based-raw";
    pub const USER_ROUNDED: &str = "user-based-rounded";
    pub const ITEM_RAW: &str = "item-based-raw";
    pub const ITEM_ROUNDED: &str = "item-based-rounded";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopNEvaluation {
    pub table: Vec<TopNRow>,
    /// One row per (method, N) for the recall sweeps.
    pub sweep: Vec<TopNRow>,
}

/// Top-N comparison of both PN rankings and the user-based recommender,
/// plus recall sweeps over `sweep_ns`.
pub fn evaluate_top_n(
    model: &FittedModel,
    test: &RatingTable,
    config: &TopNConfig,
    sweep_ns: &[usize],
    alpha: f64,
) -> Result<TopNEvaluation> {
    let users = test_users(test);
    let longest = sweep_ns.iter().copied().max().unwrap_or(0).max(config.n);
    let mut table = Vec::new();
    let mut sweep = Vec::new();
    let runs: [(&str, Option<Ranking>); 3] = [
        (method::PN_MAXIMAL, Some(Ranking::MaximalEnergy)),
        (method::PN_EXPECTED, Some(Ranking::ExpectedEnergy)),
        (method::USER_BASED, None),
    ];
    for (name, ranking) in runs {
        let lists = match ranking {
            Some(ranking) => pn_lists(model, &users, &TopNConfig { n: longest, ranking, ..*config }),
            None => user_based_lists(&model.ctx, &users, longest, &UserTopNConfig::default()),
        };
        let at_n = expected_utility(&truncate_lists(&lists, config.n), test, alpha)?;
        table.push(TopNRow::from_report(name, config.n, &at_n));
        for &n in sweep_ns {
            let r = expected_utility(&truncate_lists(&lists, n), test, alpha)?;
            sweep.push(TopNRow::from_report(name, n, &r));
        }
    }
    Ok(TopNEvaluation { table, sweep })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    pub fraction: f64,
    pub method: String,
    pub train_size: usize,
    pub metrics: MetricReport,
}

/// Rating-prediction metrics for a trained PN on every test rating.
pub fn pn_metrics(model: &FittedModel, test: &RatingTable) -> MetricReport {
    let preds = par::map_slice(test.ratings(), |r| predict_rating(&model.ctx, &model.params, r.user, r.item).predicted as f64);
    let truths: Vec<u8> = test.ratings().iter().map(|r| r.value).collect();
    rating_metrics(&preds, &truths)
}

/// Raw and rounded user- and item-based metrics, in that order.
pub fn baseline_metrics(ctx: &ModelContext, test: &RatingTable) -> [(&'static str, MetricReport); 4] {
    let (table, means) = (ctx.table(), ctx.means());
    let user = par::map_slice(test.ratings(), |r| user_based_predict(table, means, ctx.user_similarities(), r.user, r.item));
    let item = par::map_slice(test.ratings(), |r| item_based_predict(table, means, ctx.item_similarities(), r.user, r.item));
    let truths: Vec<u8> = test.ratings().iter().map(|r| r.value).collect();
    let raw = |v: &[crate::baselines::BaselinePrediction]| v.iter().map(|p| p.raw).collect::<Vec<_>>();
    let rounded = |v: &[crate::baselines::BaselinePrediction]| v.iter().map(|p| p.rounded as f64).collect::<Vec<_>>();
    [
        (method::USER_RAW, rating_metrics(&raw(&user), &truths)),
        (method::USER_ROUNDED, rating_metrics(&rounded(&user), &truths)),
        (method::ITEM_RAW, rating_metrics(&raw(&item), &truths)),
        (method::ITEM_ROUNDED, rating_metrics(&rounded(&item), &truths)),
    ]
}

/// Settings shared by every PN variant in a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PnSetup {
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub tying: IdentityTying,
}

impl Default for PnSetup {
    fn default() -> Self {
        PnSetup {
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            tying: IdentityTying::PerEntity,
        }
    }
}

pub const SWEEP_VARIANTS: [(&str, FeatureToggles); 3] = [
    (method::PN_CONTENT, FeatureToggles::CONTENT_ONLY),
    (method::PN_CORRELATION, FeatureToggles::CORRELATION_ONLY),
    (method::PN_HYBRID, FeatureToggles::ALL),
];

/// Retrains every PN variant and both baselines on seeded subsamples of
/// `train`, scoring each on the fixed `test` set.
pub fn sparsity_sweep(
    train: &RatingTable,
    test: &RatingTable,
    attrs: &AttributeCatalog,
    fractions: &[f64],
    setup: &PnSetup,
    seed: u64,
) -> Result<Vec<MaeRow>> {
    let mut rows = Vec::new();
    for &fraction in fractions {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Validation(format!("training fraction must lie in (0, 1], got {fraction}")));
        }
        let sample = train.subsample(fraction, seed)?;
        let size = sample.len();
        let mut baseline_ctx = None;
        for (name, features) in SWEEP_VARIANTS {
            let model = fit(sample.clone(), attrs.clone(), features, &setup.selection, setup.tying, &setup.train)?;
            rows.push(MaeRow {
                fraction,
                method: name.to_string(),
                train_size: size,
                metrics: pn_metrics(&model, test),
            });
            baseline_ctx.get_or_insert(model.ctx);
        }
        if let Some(ctx) = baseline_ctx {
            for (name, metrics) in baseline_metrics(&ctx, test) {
                rows.push(MaeRow {
                    fraction,
                    method: name.to_string(),
                    train_size: size,
                    metrics,
                });
            }
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

pub fn write_table1<W: Write>(mut out: W, rows: &[TopNRow]) -> std::io::Result<()> {
    writeln!(out, "method,n,mae_on_hits,utility,recall,hits")?;
    for r in rows {
        writeln!(out, "{},{},{},{:.4},{:.6},{}", r.method, r.n, opt(r.mae_on_hits), r.utility, r.recall, r.hits)?;
    }
    Ok(())
}

/// Full-data rating metrics, one row per method.
pub fn write_fig4<W: Write>(mut out: W, rows: &[MaeRow]) -> std::io::Result<()> {
    writeln!(out, "method,n,mae,zero_one")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.method, r.metrics.n, opt(r.metrics.mae), opt(r.metrics.zero_one))?;
    }
    Ok(())
}

pub fn write_fig5<W: Write>(mut out: W, rows: &[MaeRow]) -> std::io::Result<()> {
    writeln!(out, "fraction,train_size,method,n,mae,zero_one")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.fraction,
            r.train_size,
            r.method,
            r.metrics.n,
            opt(r.metrics.mae),
            opt(r.metrics.zero_one)
        )?;
    }
    Ok(())
}

pub fn write_fig6<W: Write>(mut out: W, rows: &[TopNRow]) -> std::io::Result<()> {
    writeln!(out, "method,n,recall,utility")?;
    for r in rows {
        writeln!(out, "{},{},{:.6},{:.4}", r.method, r.n, r.recall, r.utility)?;
    }
    Ok(())
}

pub fn write_fig7<W: Write>(mut out: W, rows: &[TopNRow]) -> std::io::Result<()> {
    writeln!(out, "method,n,recall,mae_on_hits")?;
    for r in rows {
        writeln!(out, "{},{},{:.6},{}", r.method, r.n, r.recall, opt(r.mae_on_hits))?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema_version: u32,
    pub table1: Vec<TopNRow>,
    pub recall_sweep: Vec<TopNRow>,
    pub fig4: Vec<MaeRow>,
    pub fig5: Vec<MaeRow>,
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes the non-empty parts of `bundle` as CSVs plus `summary.json`.
pub fn write_reports(dir: &Path, bundle: &ReportBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if !bundle.table1.is_empty() {
        write_file(&dir.join("table1.csv"), |b| write_table1(b, &bundle.table1))?;
    }
    if !bundle.recall_sweep.is_empty() {
        write_file(&dir.join("fig6_utility_vs_recall.csv"), |b| write_fig6(b, &bundle.recall_sweep))?;
        write_file(&dir.join("fig7_maehits_vs_recall.csv"), |b| write_fig7(b, &bundle.recall_sweep))?;
    }
    if !bundle.fig4.is_empty() {
        write_file(&dir.join("fig4_mae.csv"), |b| write_fig4(b, &bundle.fig4))?;
    }
    if !bundle.fig5.is_empty() {
        write_file(&dir.join("fig5_mae_vs_size.csv"), |b| write_fig5(b, &bundle.fig5))?;
    }
    let json = serde_json::to_vec_pretty(&ReportBundle {
        schema_version: REPORT_SCHEMA_VERSION,
        ..bundle.clone()
    })?;
    let path = dir.join("summary.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Rating;

    #[test]
    fn metric_examples() {
        let r = rating_metrics(&[3.0, 4.0], &[3, 5]);
        assert_eq!((r.mae, r.zero_one), (Some(0.5), Some(0.5)));
        let r = rating_metrics(&[2.0, 5.0], &[2, 5]);
        assert_eq!((r.mae, r.zero_one), (Some(0.0), Some(0.0)));
        let r = rating_metrics(&[1.0; 3], &[5; 3]);
        assert_eq!((r.mae, r.zero_one), (Some(4.0), Some(1.0)));
        let r = rating_metrics(&[], &[]);
        assert!(r.is_empty() && r.mae.is_none());
    }

    #[test]
    fn utility_unit_cases() {
        assert_eq!(rank_utility(1, 5.0), 1.0);
        assert_eq!(rank_utility(5, 5.0), 0.5);
    }

    fn test_table() -> RatingTable {
        RatingTable::new(5, [Rating::new(1, 10, 4), Rating::new(1, 11, 2), Rating::new(2, 12, 5)]).unwrap()
    }

    #[test]
    fn ideal_packing_reaches_maximum() {
        let lists = vec![RecommendationList {
            user: UserId(1),
            items: vec![(ItemId(10), 4), (ItemId(11), 3), (ItemId(99), 1)],
        }];
        let r = expected_utility(&lists, &test_table(), 5.0).unwrap();
        assert_eq!(r.per_user[0].utility, r.per_user[0].ideal);
        assert_eq!(r.utility, 100.0);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.mae_on_hits, Some(0.5));
    }

    #[test]
    fn misses_and_empty_test_sets() {
        let lists = vec![
            RecommendationList { user: UserId(2), items: vec![(ItemId(1), 3)] },
            RecommendationList { user: UserId(7), items: vec![(ItemId(12), 3)] },
        ];
        let r = expected_utility(&lists, &test_table(), 5.0).unwrap();
        assert_eq!(r.per_user[0].utility, 0.0);
        assert_eq!(r.per_user[1].ideal, 0.0);
        assert_eq!(r.utility, 0.0);
        assert_eq!(r.mae_on_hits, None);
        assert!(expected_utility(&lists, &test_table(), 1.0).is_err());
    }

    #[test]
    fn sweep_is_monotone_and_starts_at_zero() {
        let lists = vec![RecommendationList {
            user: UserId(1),
            items: vec![(ItemId(5), 1), (ItemId(11), 2), (ItemId(10), 4)],
        }];
        let rows = recall_sweep(&lists, &test_table(), &[0, 1, 2, 3, 10], 5.0).unwrap();
        assert_eq!(rows[0].recall, 0.0);
        assert_eq!(rows[0].utility, 0.0);
        assert!(rows.windows(2).all(|w| w[0].recall <= w[1].recall));
        assert_eq!(rows[3].recall, rows[4].recall);
        assert!(recall_sweep(&lists, &test_table(), &[3, 1], 5.0).is_err());
    }
}
