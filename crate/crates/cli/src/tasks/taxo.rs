//! Taxonomy head training, grid search and prediction.

use ontolearn::embedstore::EmbeddingStore;
use ontolearn::taxo::{
    checkpoint_bytes, grid_search, predict_taxonomy, read_checkpoint, read_edge_records, sparsity_edge_count,
    split_types, threshold_for_top_k, train as train_head, val_f1_threshold, AttentionHead, EdgeSelection, EpochRecord,
    TaxonomyGraph, TrainConfig, TrainOutcome, DEFAULT_SPLIT_RATIO,
};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::io::{load_store, read_lines, read_text};
use super::Out;
use crate::config::Resolved;
use crate::error::RunError;

/// Summary written next to a trained checkpoint and read back by prediction.
#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    best_epoch: usize,
    best_auc: Option<f64>,
    /// Absent when the run had no usable validation pairs.
    val_f1_threshold: Option<f64>,
    train_density: f64,
    train_types: usize,
    validation_types: usize,
    dropped_edges: usize,
    pos_weight: f64,
    config: TrainConfig,
}

/// Split `params` into a [`TrainConfig`] (defaults filled in) and the
/// remaining task-specific keys. Unknown keys are config errors.
fn split_params(run: &Resolved, extra: &[&str]) -> Result<(TrainConfig, Map<String, Value>), RunError> {
    let Value::Object(mut config) = serde_json::to_value(TrainConfig::default()).expect("config serializes") else {
        unreachable!("TrainConfig is a struct")
    };
    let mut rest = Map::new();
    let params = run.config.params.as_object().cloned().unwrap_or_default();
    for (k, v) in params {
        if extra.contains(&k.as_str()) {
            rest.insert(k, v);
        } else if config.contains_key(&k) {
            config.insert(k, v);
        } else {
            return Err(RunError::Config(format!(
                "params.{k} is not used by task {}",
                run.task().name()
            )));
        }
    }
    let mut config: TrainConfig =
        serde_json::from_value(Value::Object(config)).map_err(|e| RunError::Config(format!("params: {e}")))?;
    config.seed = run.seed();
    config.validate()?;
    Ok((config, rest))
}

fn field<T: serde::de::DeserializeOwned>(rest: &Map<String, Value>, key: &str, default: T) -> Result<T, RunError> {
    match rest.get(key) {
        None => Ok(default),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| RunError::Config(format!("params.{key}: {e}"))),
    }
}

fn load_graph(run: &Resolved) -> Result<TaxonomyGraph, RunError> {
    let path = run.path("taxonomy");
    let records = read_edge_records(path).map_err(|e| RunError::data_in(path, e))?;
    let types = match run.opt_path("types") {
        Some(p) => read_lines(p)?,
        None => Vec::new(),
    };
    TaxonomyGraph::from_records(types, &records).map_err(|e| RunError::data_in(path, e))
}

/// Val-F1 threshold of the checkpointed (f32) parameters on `validation`.
fn validation_threshold(
    head: &AttentionHead,
    store: &EmbeddingStore,
    validation: &TaxonomyGraph,
) -> Result<Option<f64>, RunError> {
    let (_, scores) = predict_taxonomy(
        &head.rounded_to_f32(),
        store,
        validation.types(),
        EdgeSelection::TopK(0),
    )?;
    let (p, y) = scores.flatten_valid(&validation.label_matrix());
    match val_f1_threshold(&p, &y) {
        Ok(t) => Ok(Some(t)),
        Err(e) => {
            log::warn!("no validation threshold: {e}");
            Ok(None)
        }
    }
}

fn write_trained(
    run: &Resolved,
    out: &mut Out,
    outcome: &TrainOutcome,
    config: &TrainConfig,
    summary: TrainSummary,
) -> Result<(), RunError> {
    out.bytes("head.ckpt", &checkpoint_bytes(&outcome.head, run.seed(), Some(config))?)?;
    out.json::<[EpochRecord]>("history.json", &outcome.history)?;
    out.log.stat("best_epoch", summary.best_epoch);
    out.log.stat("best_auc", summary.best_auc);
    out.json("train_summary.json", &summary)
}

pub fn train(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let (config, rest) = split_params(run, &["split_ratio", "holdout"])?;
    let ratio: f64 = field(&rest, "split_ratio", DEFAULT_SPLIT_RATIO)?;
    let holdout: bool = field(&rest, "holdout", true)?;
    let graph = load_graph(run)?;
    let store = load_store(run.path("type_store"))?;

    let summary;
    let outcome;
    if holdout {
        let split = split_types(&graph, ratio, run.seed())?;
        outcome = train_head(&split.train, Some(&split.validation), &store, &config)?;
        summary = TrainSummary {
            best_epoch: outcome.best_epoch,
            best_auc: outcome.best_auc(),
            val_f1_threshold: validation_threshold(&outcome.head, &store, &split.validation)?,
            train_density: split.train.density(),
            train_types: split.train.len(),
            validation_types: split.validation.len(),
            dropped_edges: split.dropped_edges,
            pos_weight: outcome.pos_weight,
            config: config.clone(),
        };
    } else {
        outcome = train_head(&graph, None, &store, &config)?;
        summary = TrainSummary {
            best_epoch: outcome.best_epoch,
            best_auc: outcome.best_auc(),
            val_f1_threshold: None,
            train_density: graph.density(),
            train_types: graph.len(),
            validation_types: 0,
            dropped_edges: 0,
            pos_weight: outcome.pos_weight,
            config: config.clone(),
        };
    }
    write_trained(run, out, &outcome, &config, summary)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridAxes {
    #[serde(default)]
    learning_rates: Vec<f64>,
    #[serde(default)]
    batch_sizes: Vec<usize>,
    #[serde(default)]
    num_heads: Vec<usize>,
    #[serde(default)]
    epochs: Vec<usize>,
}

#[derive(Serialize)]
struct LeaderboardRow {
    rank: usize,
    learning_rate: f64,
    batch_size: usize,
    num_heads: usize,
    epochs: usize,
    best_epoch: usize,
    val_auc: Option<f64>,
}

pub fn grid(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let (base, rest) = split_params(run, &["split_ratio", "grid"])?;
    let ratio: f64 = field(&rest, "split_ratio", DEFAULT_SPLIT_RATIO)?;
    let axes: GridAxes = field(&rest, "grid", GridAxes::default())?;
    // An empty axis keeps the base value.
    let or_base = |v: Vec<usize>, b: usize| if v.is_empty() { vec![b] } else { v };
    let lrs = if axes.learning_rates.is_empty() {
        vec![base.learning_rate]
    } else {
        axes.learning_rates
    };
    let configs = TrainConfig::grid(
        &base,
        &lrs,
        &or_base(axes.batch_sizes, base.batch_size),
        &or_base(axes.num_heads, base.num_heads),
        &or_base(axes.epochs, base.epochs),
    );
    for c in &configs {
        c.validate()?;
    }
    let graph = load_graph(run)?;
    let store = load_store(run.path("type_store"))?;
    let result = grid_search(&graph, &store, &configs, ratio, run.seed())?;

    let mut order: Vec<usize> = (0..result.leaderboard.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| result.leaderboard[i].auc.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then(a.cmp(&b))
    });
    let rows: Vec<LeaderboardRow> = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let e = &result.leaderboard[i];
            LeaderboardRow {
                rank: rank + 1,
                learning_rate: e.config.learning_rate,
                batch_size: e.config.batch_size,
                num_heads: e.config.num_heads,
                epochs: e.config.epochs,
                best_epoch: e.best_epoch,
                val_auc: e.auc,
            }
        })
        .collect();
    out.json("leaderboard.json", &rows)?;
    out.log.stat("configs", configs.len());

    let config = configs[result.best_index].clone();
    let split = &result.split;
    let summary = TrainSummary {
        best_epoch: result.best.best_epoch,
        best_auc: result.best.best_auc(),
        val_f1_threshold: validation_threshold(&result.best.head, &store, &split.validation)?,
        train_density: split.train.density(),
        train_types: split.train.len(),
        validation_types: split.validation.len(),
        dropped_edges: split.dropped_edges,
        pos_weight: result.best.pos_weight,
        config: config.clone(),
    };
    write_trained(run, out, &result.best, &config, summary)
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
enum ThresholdParam {
    Fixed { value: f64 },
    ValF1,
    SparsityMatched { train_density: Option<f64> },
    TopK { k: usize },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictParams {
    #[serde(default = "default_threshold")]
    threshold: ThresholdParam,
}

fn default_threshold() -> ThresholdParam {
    ThresholdParam::ValF1
}

pub fn predict(run: &Resolved, out: &mut Out) -> Result<(), RunError> {
    let p: PredictParams = run.params()?;
    let ckpt_path = run.path("checkpoint");
    let (head, _) = read_checkpoint(ckpt_path).map_err(|e| RunError::data_in(ckpt_path, e))?;
    let store = load_store(run.path("type_store"))?;
    let types = read_lines(run.path("types"))?;
    let summary = || -> Result<TrainSummary, RunError> {
        let path = run
            .opt_path("summary")
            .ok_or_else(|| RunError::Config("paths.summary is required for this threshold mode".into()))?;
        serde_json::from_str(&read_text(path)?).map_err(|e| RunError::data_in(path, e))
    };

    let n = types.len();
    let selection = match p.threshold {
        ThresholdParam::Fixed { value } => EdgeSelection::Above(value),
        ThresholdParam::ValF1 => EdgeSelection::Above(summary()?.val_f1_threshold.ok_or_else(|| {
            RunError::Config("threshold val_f1: the training summary has no validation threshold".into())
        })?),
        ThresholdParam::SparsityMatched { train_density } => {
            let d = match train_density {
                Some(d) => d,
                None => summary()?.train_density,
            };
            if !(0.0..=1.0).contains(&d) {
                return Err(RunError::Config("threshold.train_density must be in [0, 1]".into()));
            }
            // Density is edges over N²; the diagonal can never be predicted.
            EdgeSelection::TopK(sparsity_edge_count(d, n * n).min(n * n.saturating_sub(1)))
        }
        ThresholdParam::TopK { k } => EdgeSelection::TopK(k),
    };
    let (graph, scores) = predict_taxonomy(&head, &store, &types, selection)?;
    let threshold = match selection {
        EdgeSelection::Above(t) => Some(t),
        EdgeSelection::TopK(k) => {
            let valid: Vec<f64> = scores.valid_pairs().map(|(_, _, s)| s).collect();
            threshold_for_top_k(&valid, k).ok()
        }
    };
    out.json("predicted_taxonomy.json", &graph.to_records())?;
    out.log.stat("types", n);
    out.log.stat("edges", graph.edges().len());
    out.log.stat("threshold", threshold);
    Ok(())
}
