//! Experiment orchestration: the full training objective, the per-epoch
//! weight refresh, and the 2x2 ablation grid.
//!
//! Per iteration the loop draws one source batch and one target batch and
//! minimizes
//!
//! ```text
//! L = L_reweighted(source) + gamma * L_align(features) + beta * L_rebalance(target)
//! ```
//!
//! The weight vector is refreshed from full-target pseudo-labels at the
//! start of every epoch (uniform before the first) and held fixed within
//! the epoch. Batch indices come from dedicated ChaCha8 streams (0 = model
//! init, 1 = source batches, 2 = target batches), so a run is reproducible
//! bit-for-bit from its config and disabling one term never perturbs the
//! sampling of the others.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{alignment_loss, AlignmentKind, AlignmentLoss};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fairloss::{plain_ce, rebalancing_loss, reweighted_ce, LossValue};
use crate::metrics::{evaluate, MetricsReport};
use crate::nn::{Model, SgdMomentum};
use crate::pseudo::{pseudo_label, PseudoState};

/// All hyperparameters of one training run. Config-file keys mirror these
/// field names exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Re-weighting disparity; larger values spread the class weights more.
    pub alpha: f64,
    /// Re-balancing strength.
    pub beta: f64,
    /// Domain-alignment strength.
    pub gamma: f64,
    pub enable_reweighting: bool,
    pub enable_rebalancing: bool,
    pub alignment: AlignmentKind,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Hidden layer widths of the feature extractor.
    pub hidden_dims: Vec<usize>,
    /// N values reported as worst-N accuracy (clipped to the class count).
    pub worst_n_values: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 5.0,
            beta: 0.05,
            gamma: 1.0,
            enable_reweighting: true,
            enable_rebalancing: true,
            alignment: AlignmentKind::Moment,
            epochs: 10,
            iterations_per_epoch: 100,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            hidden_dims: vec![32, 16],
            worst_n_values: vec![5, 10],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Argument("alpha must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Argument("beta must be nonnegative".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Argument("gamma must be nonnegative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if self.iterations_per_epoch == 0 {
            return Err(Error::Argument("iterations_per_epoch must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument("momentum must lie in [0, 1)".into()));
        }
        if self.worst_n_values.iter().any(|&n| n == 0) {
            return Err(Error::Argument("worst_n_values must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch trace: the distribution state used throughout the epoch and
/// the mean loss components over its iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Virtual label distribution behind this epoch's weights.
    pub v: Vec<f64>,
    /// Weight vector used by every iteration of this epoch.
    pub omega: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Pseudo-labels the refresh was computed from; empty for epoch 0.
    pub pseudo_labels: Vec<usize>,
    pub mean_loss_reweighted: f64,
    pub mean_loss_alignment: f64,
    pub mean_loss_rebalancing: f64,
    pub mean_loss_total: f64,
}

/// Everything a finished (or aborted) run leaves behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub input_dim: usize,
    pub num_classes: usize,
    pub epochs: Vec<EpochRecord>,
    /// Present when the target dataset carries evaluation labels.
    pub final_metrics: Option<MetricsReport>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    /// Per-epoch trace as CSV: loss components followed by the `v` and
    /// `omega` vectors.
    pub fn epochs_csv(&self) -> String {
        let c = self.num_classes;
        let mut out = String::from("epoch,loss_reweighted,loss_alignment,loss_rebalancing,loss_total");
        for k in 0..c {
            let _ = write!(out, ",v_{k}");
        }
        for k in 0..c {
            let _ = write!(out, ",omega_{k}");
        }
        out.push('\n');
        for e in &self.epochs {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                e.epoch,
                e.mean_loss_reweighted,
                e.mean_loss_alignment,
                e.mean_loss_rebalancing,
                e.mean_loss_total
            );
            for v in &e.v {
                let _ = write!(out, ",{v}");
            }
            for w in &e.omega {
                let _ = write!(out, ",{w}");
            }
            out.push('\n');
        }
        out
    }
}

/// Trained model plus its run record.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub record: RunRecord,
}

/// Snapshot handed to an iteration observer; used by instrumented runs to
/// verify the weight schedule.
pub struct IterationEvent<'a> {
    pub epoch: usize,
    pub iteration: usize,
    pub omega: &'a [f64],
    pub loss_reweighted: f64,
    pub loss_alignment: f64,
    pub loss_rebalancing: f64,
    pub loss_total: f64,
}

/// Trains with the configured objective. See the module docs for the loss
/// layout and RNG stream protocol.
pub fn train(config: &TrainConfig, source: &Dataset, target: &Dataset) -> Result<TrainOutput> {
    train_observed(config, source, target, |_| {})
}

/// [`train`] with a per-iteration observer.
pub fn train_observed(
    config: &TrainConfig,
    source: &Dataset,
    target: &Dataset,
    mut observer: impl FnMut(&IterationEvent),
) -> Result<TrainOutput> {
    config.validate()?;
    let source_labels = source
        .labels
        .as_ref()
        .ok_or_else(|| Error::Argument("source dataset must be labeled".into()))?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Argument("datasets must be non-empty".into()));
    }
    if source.dim() != target.dim() {
        return Err(Error::Argument(format!(
            "feature dims differ: source {} vs target {}",
            source.dim(),
            target.dim()
        )));
    }
    if source.num_classes != target.num_classes {
        return Err(Error::Argument(format!(
            "class counts differ: source {} vs target {}",
            source.num_classes, target.num_classes
        )));
    }
    let num_classes = source.num_classes;
    if num_classes < 2 {
        return Err(Error::Argument("need at least 2 classes".into()));
    }

    let started = Instant::now();
    let mut rng_init = stream_rng(config.seed, 0);
    let mut model = Model::new(
        source.dim(),
        &config.hidden_dims,
        num_classes,
        &mut rng_init,
    )?;
    let mut rng_source = stream_rng(config.seed, 1);
    let mut rng_target = stream_rng(config.seed, 2);
    let mut optimizer = SgdMomentum::new(config.learning_rate, config.momentum, &model)?;
    let mut state = PseudoState::init(num_classes, config.alpha)?;

    // A zero coefficient disables a term entirely, so e.g. beta = 0 and
    // enable_rebalancing = false take the same code path.
    let align_active = config.alignment != AlignmentKind::None && config.gamma != 0.0;
    let rebalance_active = config.enable_rebalancing && config.beta != 0.0;

    let mut record = RunRecord {
        config: config.clone(),
        input_dim: source.dim(),
        num_classes,
        epochs: Vec::with_capacity(config.epochs),
        final_metrics: None,
        wall_clock_secs: 0.0,
    };

    for epoch in 0..config.epochs {
        let mut epoch_labels = Vec::new();
        if epoch > 0 {
            epoch_labels = pseudo_label(&model, target)?;
            state = state.update(&epoch_labels, config.alpha)?;
        }

        let mut sum_rw = 0.0;
        let mut sum_da = 0.0;
        let mut sum_rb = 0.0;
        let mut sum_total = 0.0;

        for iteration in 0..config.iterations_per_epoch {
            let src_idx = sample_indices(&mut rng_source, source.len(), config.batch_size);
            let tgt_idx = sample_indices(&mut rng_target, target.len(), config.batch_size);
            let src_batch = source.select(&src_idx)?;
            let batch_labels: Vec<usize> =
                src_idx.iter().map(|&i| source_labels[i]).collect();

            let src_fwd = model.forward_full(&src_batch.features)?;
            let rw: LossValue = if config.enable_reweighting {
                reweighted_ce(&src_fwd.logits, &batch_labels, &state.omega)?
            } else {
                plain_ce(&src_fwd.logits, &batch_labels)?
            };

            let tgt_features = if align_active || rebalance_active {
                Some(target.select(&tgt_idx)?.features)
            } else {
                None
            };
            let tgt_fwd = match &tgt_features {
                Some(features) => Some(model.forward_full(features)?),
                None => None,
            };
            let da: Option<AlignmentLoss> = match (&tgt_fwd, align_active) {
                (Some(fwd), true) => Some(alignment_loss(
                    config.alignment,
                    &src_fwd.features,
                    &fwd.features,
                )?),
                _ => None,
            };
            let rb: Option<LossValue> = match (&tgt_fwd, rebalance_active) {
                (Some(fwd), true) => Some(rebalancing_loss(&fwd.probs, &state.omega)?),
                _ => None,
            };

            let da_value = da.as_ref().map_or(0.0, |l| l.value);
            let rb_value = rb.as_ref().map_or(0.0, |l| l.value);
            let total = rw.value + config.gamma * da_value + config.beta * rb_value;
            if !total.is_finite() {
                record.wall_clock_secs = started.elapsed().as_secs_f64();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    iteration,
                    record: Box::new(record),
                });
            }

            let src_feat_grad = da.as_ref().map(|l| l.source_grad.scaled(config.gamma));
            let mut grads = model.backward_with(
                &src_batch.features,
                Some(&rw.logit_grad),
                src_feat_grad.as_ref(),
            )?;
            if let Some(features) = &tgt_features {
                let tgt_logit_grad = rb.as_ref().map(|l| l.logit_grad.scaled(config.beta));
                let tgt_feat_grad = da.as_ref().map(|l| l.target_grad.scaled(config.gamma));
                let tgt_grads = model.backward_with(
                    features,
                    tgt_logit_grad.as_ref(),
                    tgt_feat_grad.as_ref(),
                )?;
                grads.add_assign(&tgt_grads)?;
            }
            optimizer.step(&mut model, &grads)?;

            observer(&IterationEvent {
                epoch,
                iteration,
                omega: state.omega.values(),
                loss_reweighted: rw.value,
                loss_alignment: da_value,
                loss_rebalancing: rb_value,
                loss_total: total,
            });
            sum_rw += rw.value;
            sum_da += da_value;
            sum_rb += rb_value;
            sum_total += total;
        }

        let iters = config.iterations_per_epoch as f64;
        record.epochs.push(EpochRecord {
            epoch,
            v: state.v.values().to_vec(),
            omega: state.omega.values().to_vec(),
            counts: state.counts.clone(),
            total: state.total,
            pseudo_labels: epoch_labels,
            mean_loss_reweighted: sum_rw / iters,
            mean_loss_alignment: sum_da / iters,
            mean_loss_rebalancing: sum_rb / iters,
            mean_loss_total: sum_total / iters,
        });
    }

    if target.labels.is_some() {
        record.final_metrics = Some(evaluate(&model, target, &config.worst_n_values)?);
    }
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutput { model, record })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_indices(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.gen_range(0..n)).collect()
}

/// One trained run inside an ablation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub worst_n: BTreeMap<usize, f64>,
    pub global_acc: f64,
    pub class_mean_acc: f64,
}

/// Aggregates for one (reweighting, rebalancing) toggle combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub reweighting: bool,
    pub rebalancing: bool,
    pub runs: Vec<AblationRun>,
    pub mean_worst_n: BTreeMap<usize, f64>,
    pub median_worst_n: BTreeMap<usize, f64>,
    pub mean_global_acc: f64,
    pub median_global_acc: f64,
}

/// Full 2x2 ablation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub worst_n_values: Vec<usize>,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    /// Aligned text table, one row per cell.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<12} {:<12}", "reweighting", "rebalancing");
        for n in &self.worst_n_values {
            let _ = write!(out, " {:>10}", format!("worst{n}"));
        }
        let _ = writeln!(out, " {:>10}", "global");
        for cell in &self.cells {
            let _ = write!(
                out,
                "{:<12} {:<12}",
                if cell.reweighting { "on" } else { "off" },
                if cell.rebalancing { "on" } else { "off" }
            );
            for n in &self.worst_n_values {
                let _ = write!(out, " {:>10.4}", cell.mean_worst_n[n]);
            }
            let _ = writeln!(out, " {:>10.4}", cell.mean_global_acc);
        }
        out
    }
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Runs the 2x2 {reweighting x rebalancing} grid with the same seed set in
/// every cell and reports per-cell mean and median metrics. Cells may run
/// in parallel; runs share no mutable state.
pub fn ablate(
    config: &TrainConfig,
    source: &Dataset,
    target: &Dataset,
    seeds: &[u64],
) -> Result<AblationTable> {
    config.validate()?;
    if seeds.len() < 5 {
        return Err(Error::Argument(
            "ablation requires at least 5 seeds".into(),
        ));
    }
    if target.labels.is_none() {
        return Err(Error::Argument(
            "ablation requires a labeled target for evaluation".into(),
        ));
    }
    let toggles = [(false, false), (true, false), (false, true), (true, true)];
    let jobs: Vec<(usize, u64)> = toggles
        .iter()
        .enumerate()
        .flat_map(|(ci, _)| seeds.iter().map(move |&s| (ci, s)))
        .collect();

    let results: Vec<Result<(usize, AblationRun)>> = jobs
        .par_iter()
        .map(|&(ci, seed)| {
            let (rw, rb) = toggles[ci];
            let mut run_config = config.clone();
            run_config.enable_reweighting = rw;
            run_config.enable_rebalancing = rb;
            run_config.seed = seed;
            let out = train(&run_config, source, target)?;
            let metrics = out
                .record
                .final_metrics
                .expect("labeled target yields metrics");
            Ok((
                ci,
                AblationRun {
                    seed,
                    worst_n: metrics.worst_n,
                    global_acc: metrics.global_acc,
                    class_mean_acc: metrics.class_mean_acc,
                },
            ))
        })
        .collect();

    let mut cells: Vec<AblationCell> = toggles
        .iter()
        .map(|&(rw, rb)| AblationCell {
            reweighting: rw,
            rebalancing: rb,
            runs: Vec::with_capacity(seeds.len()),
            mean_worst_n: BTreeMap::new(),
            median_worst_n: BTreeMap::new(),
            mean_global_acc: 0.0,
            median_global_acc: 0.0,
        })
        .collect();
    for result in results {
        let (ci, run) = result?;
        cells[ci].runs.push(run);
    }

    for cell in &mut cells {
        // Parallel collection preserves job order, but sort by seed anyway
        // so the record layout is self-evident.
        cell.runs.sort_by_key(|r| r.seed);
        for &n in &config.worst_n_values {
            let mut vals: Vec<f64> = cell.runs.iter().map(|r| r.worst_n[&n]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            cell.mean_worst_n.insert(n, mean);
            cell.median_worst_n.insert(n, median(&mut vals));
        }
        let mut globals: Vec<f64> = cell.runs.iter().map(|r| r.global_acc).collect();
        cell.mean_global_acc = globals.iter().sum::<f64>() / globals.len() as f64;
        cell.median_global_acc = median(&mut globals);
    }

    Ok(AblationTable {
        seeds: seeds.to_vec(),
        worst_n_values: config.worst_n_values.clone(),
        cells,
    })
}
