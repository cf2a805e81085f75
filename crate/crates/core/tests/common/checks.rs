//! Checks shared by the regular tests and the acceptance report. Each
//! returns a one-line summary on success and the first violation otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prefnet::correlation::SelectionConfig;
use prefnet::dataset::{ItemId, Rating, RatingTable, UserId};
use prefnet::evaluation::{expected_utility, rank_utility, RecommendationList};
use prefnet::features::{Block, FeatureToggles, IdentityTying, ParameterVector, Sigma};
use prefnet::inference::{candidate_set, joint_log_score, joint_predict, CandidateMode, JointMethod};
use prefnet::model::ModelContext;
use prefnet::trainer::{gradient, pseudo_log_likelihood, random_params, train, train_full_batch, FullBatchConfig, TrainConfig};

use super::{random_attrs, random_instance, Instance, Oracle};

pub type Check = Result<String, String>;

pub const ORACLE_TOL: f64 = 1e-10;

fn oracle_instance(seed: u64, nodes: usize) -> (Instance, u32) {
    let scale = if seed % 2 == 0 { 2 } else { 3 };
    let grid = if seed % 3 == 0 { 2 } else { 3 };
    let tying = if seed % 5 == 0 { IdentityTying::Global } else { IdentityTying::PerEntity };
    (random_instance(seed, nodes.min((grid * grid) as usize), grid, scale, tying), grid)
}

fn unobserved(inst: &Instance, grid: u32) -> Vec<(u32, u32)> {
    (1..=grid)
        .flat_map(|u| (1..=grid).map(move |i| (u, i)))
        .filter(|&(u, i)| !inst.ctx.table().contains(UserId(u), ItemId(i)))
        .collect()
}

pub fn local_conditionals(seeds: u64) -> Check {
    let (mut worst, mut edges) = (0.0f64, 0);
    for seed in 0..seeds {
        let (inst, _) = oracle_instance(seed, 2 + (seed % 3) as usize);
        edges += inst.ctx.graph().active_edge_count();
        let oracle = Oracle::new(&inst);
        let (nodes, values) = oracle.observed();
        for (k, &(u, i)) in nodes.iter().enumerate() {
            let expected = oracle.conditional_by_enumeration(&nodes, &values, k);
            let got = inst.ctx.local_conditional(&inst.params, UserId(u), ItemId(i));
            for (a, b) in got.probs.iter().zip(&expected) {
                worst = worst.max((a - b).abs());
            }
            if worst >= ORACLE_TOL {
                return Err(format!("seed {seed} node ({u},{i}): {:?} vs {expected:?}", got.probs));
            }
        }
    }
    if edges <= seeds as usize {
        return Err(format!("fixtures carry too few correlation edges ({edges})"));
    }
    Ok(format!("{seeds} graphs, max abs diff {worst:.1e}"))
}

pub fn joint_map(seeds: u64) -> Check {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let (inst, grid) = oracle_instance(seed, 1 + (seed % 2) as usize);
        let oracle = Oracle::new(&inst);
        let (train_nodes, train_values) = oracle.observed();
        let free = unobserved(&inst, grid);
        let n_targets = (4 - train_nodes.len()).min(free.len()).max(1);
        let targets: Vec<(u32, u32)> = free.into_iter().take(n_targets).collect();
        let typed: Vec<(UserId, ItemId)> = targets.iter().map(|&(u, i)| (UserId(u), ItemId(i))).collect();

        let base = oracle.log_score(&train_nodes, &train_values);
        let mut nodes = train_nodes.clone();
        nodes.extend(&targets);
        let mut best: Option<(Vec<u8>, f64)> = None;
        for assignment in oracle.assignments(targets.len()) {
            let mut values = train_values.clone();
            values.extend(&assignment);
            let score = oracle.log_score(&nodes, &values) - base;
            let model = joint_log_score(&inst.ctx, &inst.params, &typed, &assignment);
            worst = worst.max((score - model).abs());
            if worst >= ORACLE_TOL {
                return Err(format!("seed {seed} {assignment:?}: {score} vs {model}"));
            }
            if best.as_ref().is_none_or(|b| score > b.1) {
                best = Some((assignment, score));
            }
        }
        let (best_assignment, best_score) = best.unwrap();
        let pred = joint_predict(&inst.ctx, &inst.params, &typed).map_err(|e| e.to_string())?;
        if pred.method != JointMethod::Exact {
            return Err(format!("seed {seed}: expected the exact path, got {:?}", pred.method));
        }
        worst = worst.max((pred.log_score - best_score).abs());
        if worst >= ORACLE_TOL || pred.ratings != best_assignment {
            return Err(format!("seed {seed}: MAP {:?} ({}) vs {best_assignment:?} ({best_score})", pred.ratings, pred.log_score));
        }
    }
    Ok(format!("{seeds} graphs, max abs diff {worst:.1e}"))
}

pub fn energy_changes(seeds: u64) -> Check {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let (inst, grid) = oracle_instance(seed, 1 + (seed % 3) as usize);
        let oracle = Oracle::new(&inst);
        let before = oracle.energy_with(None);
        worst = worst.max((inst.ctx.system_energy(&inst.params) - before).abs());

        for (u, i) in unobserved(&inst, grid) {
            let delta: Vec<f64> = (1..=inst.scale)
                .map(|r| oracle.energy_with(Some((u, i, r))) - before)
                .collect();
            let mut argmax = 0;
            for k in 1..delta.len() {
                if delta[k] < delta[argmax] {
                    argmax = k;
                }
            }
            let weights: Vec<f64> = delta.iter().map(|d| (delta[argmax] - d).exp()).collect();
            let z: f64 = weights.iter().sum();
            let expected: f64 = weights.iter().zip(&delta).map(|(w, d)| w / z * d).sum();

            let got = inst.ctx.energy_change(&inst.params, UserId(u), ItemId(i));
            worst = worst.max((got.maximal - delta[argmax]).abs()).max((got.expected - expected).abs());
        }
        if worst >= ORACLE_TOL {
            return Err(format!("seed {seed}: energy mismatch {worst:e}"));
        }
    }
    Ok(format!("{seeds} graphs, max abs diff {worst:.1e}"))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences of the regularised pseudo-likelihood.
pub fn numeric_gradient(ctx: &ModelContext, params: &ParameterVector, sigma: &Sigma, h: f64) -> Vec<f64> {
    (0..params.weights().len())
        .map(|k| {
            let mut plus = params.clone();
            plus.weights_mut()[k] += h;
            let mut minus = params.clone();
            minus.weights_mut()[k] -= h;
            (pseudo_log_likelihood(ctx, &plus, sigma) - pseudo_log_likelihood(ctx, &minus, sigma)) / (2.0 * h)
        })
        .collect()
}

pub fn gradient_finite_differences() -> Check {
    let (mut instances, mut worst) = (0, 0.0f64);
    let mut blocks_seen = [false; 6];
    let sigma = Sigma {
        identity: 0.7,
        content: 1.3,
        correlation: 0.9,
    };
    for &scale in &[2u8, 3, 5] {
        for seed in 0..8u64 {
            let tying = if seed % 4 == 3 { IdentityTying::Global } else { IdentityTying::PerEntity };
            let inst = random_instance(100 + seed, 6 + (seed % 5) as usize, 4, scale, tying);
            let analytic = gradient(&inst.ctx, &inst.params, inst.ctx.table().ratings(), &sigma);
            let numeric = numeric_gradient(&inst.ctx, &inst.params, &sigma, 1e-4);
            let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
            let rel = l2(&diff) / l2(&analytic).max(l2(&numeric)).max(1e-12);
            worst = worst.max(rel);
            if rel >= 1e-5 {
                return Err(format!("scale {scale} seed {seed}: relative error {rel:e}"));
            }
            let layout = inst.params.layout();
            for (b, block) in Block::ALL.iter().enumerate() {
                blocks_seen[b] |= layout.range(*block).any(|k| analytic[k] != 0.0);
            }
            instances += 1;
        }
    }
    if !blocks_seen.iter().all(|&s| s) {
        return Err(format!("some parameter block never received gradient: {blocks_seen:?}"));
    }
    Ok(format!("{instances} instances, all 6 blocks, max relative error {worst:.1e}"))
}

/// Random sparse table on a 10 x 10 grid.
pub fn sparse_table(rng: &mut ChaCha8Rng) -> RatingTable {
    let density = rng.gen_range(0.05..0.45);
    let mut cells = Vec::new();
    for u in 1..=10u32 {
        for i in 1..=10u32 {
            if rng.gen_bool(density) {
                cells.push(Rating::new(u, i, rng.gen_range(1..=5)));
            }
        }
    }
    RatingTable::new(5, cells).unwrap()
}

pub fn candidate_equivalence(tables: u64) -> Check {
    let mut compared = 0;
    for seed in 0..tables {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = sparse_table(&mut rng);
        let attrs = random_attrs(&mut rng, 10, 10);
        let ctx = ModelContext::build(table.clone(), attrs, FeatureToggles::ALL, &SelectionConfig::default());
        for u in table.users() {
            let by_user = candidate_set(&ctx, None, u, None, CandidateMode::UserBased);
            let by_item = candidate_set(&ctx, None, u, None, CandidateMode::ItemBased);
            if by_user != by_item {
                return Err(format!("table {seed} user {u}: {by_user:?} vs {by_item:?}"));
            }
            compared += 1;
        }
    }
    Ok(format!("{tables} tables, {compared} users, sets identical"))
}

pub fn normalization_fuzz(cases: u64) -> Check {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let scale = rng.gen_range(2..=10);
        let inst = random_instance(seed, rng.gen_range(1..16), 4, scale, IdentityTying::PerEntity);
        let mut params = inst.params.clone();
        let blowup = 10f64.powi(rng.gen_range(-2..=2));
        params.weights_mut().iter_mut().for_each(|w| *w *= blowup);
        let (u, i) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let dist = inst.ctx.local_conditional(&params, UserId(u), ItemId(i));
        worst = worst.max((dist.probs.iter().sum::<f64>() - 1.0).abs());
        if worst > 1e-12 || dist.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(format!("seed {seed}: {:?}", dist.probs));
        }
    }
    Ok(format!("{cases} random nodes, max |sum - 1| {worst:.1e}"))
}

pub fn utility_unit_cases() -> Check {
    let test = RatingTable::new(5, [Rating::new(1, 10, 4), Rating::new(2, 20, 5)]).unwrap();
    let list = |user: u32, hit_at: usize, item: u32| RecommendationList {
        user: UserId(user),
        items: (1..=hit_at)
            .map(|k| (ItemId(if k == hit_at { item } else { 100 + k as u32 }), 4))
            .collect(),
    };
    let report = expected_utility(&[list(1, 1, 10), list(2, 5, 20)], &test, 5.0).map_err(|e| e.to_string())?;
    let (first, fifth) = (report.per_user[0].utility, report.per_user[1].utility);
    if first != 1.0 || fifth != 0.5 || rank_utility(1, 5.0) != 1.0 || rank_utility(5, 5.0) != 0.5 {
        return Err(format!("rank-1 hit {first}, rank-5 hit {fifth}"));
    }
    Ok("rank-1 hit = 1.0, rank-5 hit at alpha 5 = 0.5 (exact)".into())
}

pub fn full_batch_concavity() -> Check {
    let mut spread = 0.0f64;
    for seed in 0..4u64 {
        let inst = random_instance(200 + seed, 8, 4, 5, IdentityTying::PerEntity);
        let cfg = FullBatchConfig::default();
        let mut objectives = Vec::new();
        for start in 0..3u64 {
            let mut params = random_params(*inst.params.layout(), start * 7 + 1, 2.0);
            let report = train_full_batch(&inst.ctx, &mut params, &cfg);
            if !report.converged {
                return Err(format!("seed {seed} start {start} did not converge: {report:?}"));
            }
            objectives.push(report.objective);
        }
        for o in &objectives[1..] {
            spread = spread.max((o - objectives[0]).abs());
        }
        if spread >= 1e-6 {
            return Err(format!("seed {seed}: optima differ {objectives:?}"));
        }
    }
    Ok(format!("4 instances x 3 starts, max objective spread {spread:.1e}"))
}

pub fn sgd_determinism() -> Check {
    let inst = random_instance(400, 12, 5, 5, IdentityTying::PerEntity);
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 5,
        seed: 17,
        ..TrainConfig::default()
    };
    let run = || {
        let mut params = inst.ctx.zero_params(IdentityTying::PerEntity);
        let report = train(&inst.ctx, &mut params, &cfg).map_err(|e| e.to_string())?;
        let bits: Vec<u64> = params.weights().iter().map(|w| w.to_bits()).collect();
        Ok::<_, String>((bits, report.epochs))
    };
    let (a, b) = (run()?, run()?);
    if a != b {
        return Err("two runs with the same seed differ".into());
    }
    Ok(format!("{} weights bit-identical across runs", a.0.len()))
}
