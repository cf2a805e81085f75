use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::Context;

use prefnet::checkpoint::{self, Checkpoint};
use prefnet::dataset::{check_coverage, load_dataset, load_ratings, AttributeCatalog, ItemId, RatingTable, UserId};
use prefnet::evaluation::{self, method, MaeRow, PnSetup, ReportBundle};
use prefnet::features::FeatureToggles;
use prefnet::inference::{predict_batch, read_queries, recommend_batch, write_predictions, write_recommendations};
use prefnet::trainer::{fit, FittedModel};

use crate::config::{resolve, ExperimentConfig, FileConfig, RunArgs};
use crate::{manifest, Invalid};

pub fn checkpoint_dir(config: &ExperimentConfig) -> PathBuf {
    config.out.join("checkpoint")
}

fn require_file(errors: &mut Vec<String>, key: &str, path: &Option<PathBuf>) {
    match path {
        None => errors.push(format!("{key}: required for this command")),
        Some(p) if !p.is_file() => errors.push(format!("{key}: file not found: {}", p.display())),
        Some(_) => {}
    }
}

fn validate_paths(command: &str, config: &ExperimentConfig) -> Vec<String> {
    let mut errors = Vec::new();
    require_file(&mut errors, "train", &config.train_path);
    require_file(&mut errors, "users", &config.users_path);
    require_file(&mut errors, "items", &config.items_path);
    let needs_test = match command {
        "evaluate" | "sweep" => true,
        "predict" => config.queries.is_none(),
        "recommend" => config.for_users.is_none(),
        _ => false,
    };
    if needs_test {
        require_file(&mut errors, "test", &config.test_path);
    }
    if command == "predict" && config.queries.is_some() {
        require_file(&mut errors, "queries", &config.queries);
    }
    if command == "recommend" && config.for_users.is_some() {
        require_file(&mut errors, "for-users", &config.for_users);
    }
    if matches!(command, "predict" | "recommend" | "evaluate") {
        let dir = checkpoint_dir(config);
        if !dir.join(checkpoint::META_FILE).is_file() || !dir.join(checkpoint::PARAMS_FILE).is_file() {
            errors.push(format!(
                "checkpoint: none found in {}; run `prefnet train` with the same --out first",
                dir.display()
            ));
        }
    }
    errors
}

pub fn run(command: &str, args: &RunArgs) -> anyhow::Result<()> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path).map_err(|e| Invalid(vec![format!("{e:#}")]))?,
        None => FileConfig::default(),
    };
    let config = resolve(args, file).map_err(Invalid)?;
    let errors = validate_paths(command, &config);
    if !errors.is_empty() {
        return Err(Invalid(errors).into());
    }
    std::fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    match command {
        "train" => train(&config),
        "predict" => predict(&config),
        "recommend" => recommend(&config),
        "evaluate" => evaluate(&config),
        "sweep" => sweep(&config),
        other => unreachable!("unknown command {other}"),
    }
}

struct Data {
    train: RatingTable,
    attrs: AttributeCatalog,
    inputs: Vec<PathBuf>,
}

fn load_training(config: &ExperimentConfig) -> anyhow::Result<Data> {
    let (train_path, users, items) = (
        config.train_path.clone().unwrap(),
        config.users_path.clone().unwrap(),
        config.items_path.clone().unwrap(),
    );
    let (train, attrs) = load_dataset(&train_path, &users, &items, config.scale)?;
    eprintln!("loaded {} training ratings from {}", train.len(), train_path.display());
    Ok(Data {
        train,
        attrs,
        inputs: vec![train_path, users, items],
    })
}

fn load_test(config: &ExperimentConfig, data: &mut Data) -> anyhow::Result<RatingTable> {
    let path = config.test_path.clone().unwrap();
    let test = load_ratings(&path, config.scale)?;
    check_coverage(&test, &data.attrs)?;
    data.inputs.push(path);
    Ok(test)
}

fn load_model(config: &ExperimentConfig, data: &Data) -> anyhow::Result<FittedModel> {
    let dir = checkpoint_dir(config);
    let ck = checkpoint::load(&dir)?;
    if ck.meta.scale != config.scale {
        anyhow::bail!(prefnet::Error::Validation(format!(
            "checkpoint was trained with scale {} but the run uses {}",
            ck.meta.scale, config.scale
        )));
    }
    let report = ck.report.clone().unwrap_or(prefnet::trainer::TrainReport {
        initial_objective: f64::NAN,
        epochs: Vec::new(),
        wall_time: Default::default(),
    });
    let (ctx, params) = ck.into_context(data.train.clone(), data.attrs.clone())?;
    Ok(FittedModel { ctx, params, report })
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

fn train(config: &ExperimentConfig) -> anyhow::Result<()> {
    let data = load_training(config)?;
    eprintln!(
        "training [{}] lr={} sigma={} epochs={} seed={}",
        config.features.label(),
        config.train.learning_rate,
        config.train.sigma.identity,
        config.train.epochs,
        config.train.seed
    );
    let model = fit(
        data.train.clone(),
        data.attrs.clone(),
        config.features,
        &config.selection,
        config.tying,
        &config.train,
    )?;
    eprintln!(
        "selected {} user pairs and {} item pairs",
        model.ctx.pairs().user_pairs.len(),
        model.ctx.pairs().item_pairs.len()
    );
    eprintln!("initial objective {:.3}", model.report.initial_objective);
    for e in &model.report.epochs {
        eprintln!("epoch {} objective {:.3} mean |grad| {:.4}", e.epoch, e.objective, e.mean_gradient_norm);
    }
    eprintln!("trained in {:.1?}", model.report.wall_time);
    let dir = checkpoint_dir(config);
    checkpoint::save(&dir, &Checkpoint::from_model(&model, &config.selection, &config.train))?;
    let artifacts = [checkpoint::PARAMS_FILE, checkpoint::META_FILE, checkpoint::REPORT_FILE].map(|f| dir.join(f));
    let m = manifest::write(config, "train", &data.inputs, &artifacts)?;
    eprintln!("checkpoint written to {} ({})", dir.display(), m.display());
    Ok(())
}

fn predict(config: &ExperimentConfig) -> anyhow::Result<()> {
    let mut data = load_training(config)?;
    let model = load_model(config, &data)?;
    let queries: Vec<(UserId, ItemId)> = match &config.queries {
        Some(path) => {
            let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            data.inputs.push(path.clone());
            read_queries(std::io::BufReader::new(file), &path.display().to_string())?
        }
        None => load_test(config, &mut data)?.ratings().iter().map(|r| (r.user, r.item)).collect(),
    };
    let predictions = predict_batch(&model.ctx, &model.params, &queries);
    let path = config.out.join("predictions.csv");
    write_with(&path, |b| write_predictions(b, &predictions))?;
    manifest::write(config, "predict", &data.inputs, std::slice::from_ref(&path))?;
    eprintln!("{} predictions written to {}", predictions.len(), path.display());
    Ok(())
}

fn read_user_list(path: &Path) -> anyhow::Result<Vec<UserId>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut users = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let field = line.split([',', '\t']).next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<u32>() {
            Ok(u) if u > 0 => users.push(UserId(u)),
            _ if n == 0 => continue,
            _ => anyhow::bail!(prefnet::Error::Validation(format!(
                "{}:{}: expected a user id, got {field:?}",
                path.display(),
                n + 1
            ))),
        }
    }
    Ok(users)
}

fn recommend(config: &ExperimentConfig) -> anyhow::Result<()> {
    let mut data = load_training(config)?;
    let model = load_model(config, &data)?;
    let users = match &config.for_users {
        Some(path) => {
            data.inputs.push(path.clone());
            read_user_list(path)?
        }
        None => evaluation::test_users(&load_test(config, &mut data)?),
    };
    let recs = recommend_batch(&model.ctx, &model.params, &users, &config.top_n);
    let short = recs.iter().filter(|r| r.short).count();
    let path = config.out.join("recommendations.csv");
    write_with(&path, |b| write_recommendations(b, &recs))?;
    manifest::write(config, "recommend", &data.inputs, std::slice::from_ref(&path))?;
    eprintln!("recommendations for {} users written to {}", recs.len(), path.display());
    if short > 0 {
        eprintln!("note: {short} users had fewer than {} candidates", config.top_n.n);
    }
    Ok(())
}

fn pn_label(features: FeatureToggles) -> String {
    match features {
        FeatureToggles::ALL => method::PN_HYBRID.into(),
        FeatureToggles::CONTENT_ONLY => method::PN_CONTENT.into(),
        FeatureToggles::CORRELATION_ONLY => method::PN_CORRELATION.into(),
        other => format!("pn-{}", other.label().replace(',', "+")),
    }
}

fn evaluate(config: &ExperimentConfig) -> anyhow::Result<()> {
    let mut data = load_training(config)?;
    let test = load_test(config, &mut data)?;
    let model = load_model(config, &data)?;

    let mut fig4 = vec![MaeRow {
        fraction: 1.0,
        method: pn_label(model.ctx.features()),
        train_size: data.train.len(),
        metrics: evaluation::pn_metrics(&model, &test),
    }];
    for (name, metrics) in evaluation::baseline_metrics(&model.ctx, &test) {
        fig4.push(MaeRow {
            fraction: 1.0,
            method: name.into(),
            train_size: data.train.len(),
            metrics,
        });
    }
    let top = evaluation::evaluate_top_n(&model, &test, &config.top_n, &config.recall_n, evaluation::DEFAULT_HALFLIFE)?;
    for row in &top.table {
        eprintln!(
            "{:<20} N={} MAE(hits)={} utility={:.2} recall={:.4}",
            row.method,
            row.n,
            row.mae_on_hits.map_or("-".into(), |m| format!("{m:.4}")),
            row.utility,
            row.recall
        );
    }
    for row in &fig4 {
        eprintln!("{:<20} MAE={:.4}", row.method, row.metrics.mae.unwrap_or(f64::NAN));
    }
    let dir = config.out.join("reports");
    let bundle = ReportBundle {
        table1: top.table,
        recall_sweep: top.sweep,
        fig4,
        ..ReportBundle::default()
    };
    evaluation::write_reports(&dir, &bundle)?;
    let artifacts: Vec<PathBuf> = ["table1.csv", "fig4_mae.csv", "fig6_utility_vs_recall.csv", "fig7_maehits_vs_recall.csv", "summary.json"]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.is_file())
        .collect();
    manifest::write(config, "evaluate", &data.inputs, &artifacts)?;
    eprintln!("reports written to {}", dir.display());
    Ok(())
}

fn sweep(config: &ExperimentConfig) -> anyhow::Result<()> {
    let mut data = load_training(config)?;
    let test = load_test(config, &mut data)?;
    let setup = PnSetup {
        train: config.train,
        selection: config.selection,
        tying: config.tying,
    };
    let rows = evaluation::sparsity_sweep(&data.train, &test, &data.attrs, &config.fractions, &setup, config.train.seed)?;
    for r in &rows {
        eprintln!(
            "fraction {:<5} {:<20} MAE={:.4} 0/1={:.4}",
            r.fraction,
            r.method,
            r.metrics.mae.unwrap_or(f64::NAN),
            r.metrics.zero_one.unwrap_or(f64::NAN)
        );
    }
    let dir = config.out.join("sweep");
    evaluation::write_reports(&dir, &ReportBundle { fig5: rows, ..ReportBundle::default() })?;
    let artifacts = [dir.join("fig5_mae_vs_size.csv"), dir.join("summary.json")];
    manifest::write(config, "sweep", &data.inputs, &artifacts)?;
    eprintln!("sweep written to {}", dir.display());
    Ok(())
}
