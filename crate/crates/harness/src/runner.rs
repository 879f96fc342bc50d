//! The end-to-end experiment loop.
//!
//! Per iteration: take the next one-pass stream minibatch, retrieve a replay
//! minibatch (two for the distillation method), optionally build per-sample
//! drop masks from a preliminary no-gradient forward, run the masked
//! training forward on the combined batch, apply the method loss, step SGD,
//! update the replay buffer, and feed the intensity controller at phase
//! boundaries. After each task the model is evaluated on every seen task's
//! test splits. All randomness comes from named per-seed streams so that
//! toggling the debias path never perturbs data order.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use oclsim::backbone::{stack_images, BackboneConfig, Model};
use oclsim::debias::{
    self, fuse, hard_mask, last_map_attention, stabilize, stabilized_soft_mask, AttentionMap,
    DropMask,
};
use oclsim::intensity::{IntensityController, TraceEvent};
use oclsim::metrics::{
    activation_gap, avg_accuracy, classify_features, forgetting, AccuracyMatrix,
    DiagnosticThresholds, FeatureLabel,
};
use oclsim::replay::{MemoryItem, ReplayBuffer, UpdatePolicy};
use oclsim::rng::{SeedSplit, StreamId};
use oclsim::stream::{generate_with_variant, Sample, StreamConfig, Task};
use oclsim::tensor::{self, Tensor};

use crate::config::{DropMode, ExperimentConfig, Method};

#[derive(Debug, Clone, Serialize)]
pub struct KappaEndpoint {
    pub class: usize,
    pub kappa_dec: f64,
    pub kappa_inc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskDiagnostics {
    /// Diagnosed right after this task finished training.
    pub after_task: usize,
    /// The not-yet-seen task providing the unseen batch.
    pub unseen_task: usize,
    pub shortcut: usize,
    pub non_shortcut: usize,
    pub inactive: usize,
    pub shortcut_mean_activation: Option<f64>,
    pub non_shortcut_mean_activation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub method: String,
    pub droptop: String,
    pub iterations: usize,
    pub a_avg_biased: f64,
    pub f_last_biased: Option<f64>,
    pub a_avg_unbiased: f64,
    pub f_last_unbiased: Option<f64>,
    pub accuracy_matrix_biased: Vec<Vec<f64>>,
    pub accuracy_matrix_unbiased: Vec<Vec<f64>>,
    pub accuracy_matrix_only_bg: Option<Vec<Vec<f64>>>,
    pub kappa_endpoints: Vec<KappaEndpoint>,
    pub diagnostics: Vec<TaskDiagnostics>,
    pub skipped_boundaries: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub a_avg_biased: MeanStderr,
    pub f_last_biased: Option<MeanStderr>,
    pub a_avg_unbiased: MeanStderr,
    pub f_last_unbiased: Option<MeanStderr>,
}

/// One mid-task evaluation point (emitted when `eval_every` is set).
#[derive(Debug, Clone)]
pub struct TransferPoint {
    pub iteration: usize,
    pub task: usize,
    pub split: &'static str,
    pub accuracy: f64,
}

pub struct SeedRun {
    pub seed: u64,
    pub summary: SeedSummary,
    pub trace: Vec<TraceEvent>,
    pub transfer: Vec<TransferPoint>,
    pub buffer_audit_csv: String,
    pub attention_histogram_csv: String,
    /// Final model state, for checks that compare training routes.
    pub model: Model,
}

pub struct RunArtifacts {
    pub seeds: Vec<SeedRun>,
    pub aggregate: Aggregate,
}

pub fn mean_stderr(xs: &[f64]) -> MeanStderr {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return MeanStderr { mean, stderr: 0.0 };
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    MeanStderr { mean, stderr: (var / n).sqrt() }
}

/// Runs every seed, writes all artifacts under the configured output
/// directory and returns the in-memory results.
pub fn run(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    if config.seeds.is_empty() {
        bail!("no seeds configured");
    }
    std::fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("creating output dir {}", config.out_dir.display()))?;
    let artifacts = run_all(config)?;
    emit(config, &artifacts)?;
    Ok(artifacts)
}

/// Runs every seed without touching the filesystem (mask dumps excepted).
pub fn run_all(config: &ExperimentConfig) -> Result<RunArtifacts> {
    let mut seeds = Vec::new();
    for &seed in &config.seeds {
        let dump_dir = if config.dump_masks {
            let dir = config.out_dir.join(format!("seed_{seed}")).join("masks");
            std::fs::create_dir_all(&dir)?;
            Some(dir)
        } else {
            None
        };
        seeds.push(run_seed(config, seed, dump_dir.as_deref())?);
    }
    let aggregate = aggregate(config, &seeds);
    Ok(RunArtifacts { seeds, aggregate })
}

fn aggregate(config: &ExperimentConfig, seeds: &[SeedRun]) -> Aggregate {
    let collect = |f: &dyn Fn(&SeedSummary) -> f64| -> Vec<f64> {
        seeds.iter().map(|s| f(&s.summary)).collect()
    };
    let forgetting_vals: Option<Vec<f64>> =
        seeds.iter().map(|s| s.summary.f_last_biased).collect();
    let forgetting_unbiased: Option<Vec<f64>> =
        seeds.iter().map(|s| s.summary.f_last_unbiased).collect();
    Aggregate {
        seeds: config.seeds.clone(),
        a_avg_biased: mean_stderr(&collect(&|s| s.a_avg_biased)),
        f_last_biased: forgetting_vals.map(|v| mean_stderr(&v)),
        a_avg_unbiased: mean_stderr(&collect(&|s| s.a_avg_unbiased)),
        f_last_unbiased: forgetting_unbiased.map(|v| mean_stderr(&v)),
    }
}

pub(crate) fn stream_config_for(config: &ExperimentConfig, split: &SeedSplit) -> StreamConfig {
    StreamConfig {
        generator: config.stream.generator,
        num_tasks: config.stream.num_tasks,
        classes_per_task: config.stream.classes_per_task,
        samples_per_class: config.stream.samples_per_class,
        image_size: config.stream.image_size,
        bias_ratio: config.stream.bias_ratio,
        noise_std: config.stream.noise_std,
        seed: split.derived_seed(StreamId::Data),
    }
}

pub(crate) fn backbone_config_for(config: &ExperimentConfig, split: &SeedSplit) -> BackboneConfig {
    BackboneConfig {
        input_channels: 3,
        input_size: config.stream.image_size,
        stem_channels: config.backbone.stem_channels,
        block_channels: config.backbone.block_channels.clone(),
        num_classes: config.total_classes(),
        seed: split.derived_seed(StreamId::Init),
    }
}

pub fn run_seed(config: &ExperimentConfig, seed: u64, dump_dir: Option<&Path>) -> Result<SeedRun> {
    config.validate()?;
    let split = SeedSplit::new(seed);
    let stream = generate_with_variant(&stream_config_for(config, &split), config.train_variant)
        .map_err(|e| anyhow!("{e}"))?;
    let mut model =
        Model::build(backbone_config_for(config, &split)).map_err(|e| anyhow!("{e}"))?;
    let policy = match config.method {
        Method::Er => UpdatePolicy::Random,
        Method::Derpp => UpdatePolicy::Reservoir,
    };
    let mut buffer = ReplayBuffer::new(config.memory_capacity, policy);
    let mut mask_rng = split.rng(StreamId::Mask);
    let mut buffer_rng = split.rng(StreamId::Buffer);
    let mut retrieval_rng = split.rng(StreamId::Retrieval);
    let mut controller = if config.droptop.adaptive() {
        Some(
            IntensityController::new(config.shift.clone(), 0..config.total_classes())
                .map_err(|e| anyhow!("{e}"))?,
        )
    } else {
        None
    };

    let mut matrix_biased = AccuracyMatrix::new();
    let mut matrix_unbiased = AccuracyMatrix::new();
    let mut matrix_only_bg: Option<AccuracyMatrix> =
        stream.tasks[0].splits.only_bg.as_ref().map(|_| AccuracyMatrix::new());
    let mut diagnostics = Vec::new();
    let mut transfer = Vec::new();
    let mut iteration = 0usize;
    let mut global_index = 0usize;

    for task in &stream.tasks {
        if let Some(ctl) = &mut controller {
            ctl.reset_for_new_task();
        }
        for batch_samples in task.train.chunks(config.batch_size) {
            let mem1: Vec<MemoryItem> = buffer
                .retrieve(config.batch_size, &mut retrieval_rng)
                .into_iter()
                .cloned()
                .collect();
            let mem2: Vec<MemoryItem> = if config.method == Method::Derpp {
                buffer
                    .retrieve(config.batch_size, &mut retrieval_rng)
                    .into_iter()
                    .cloned()
                    .collect()
            } else {
                Vec::new()
            };

            let mut images: Vec<&Tensor> = Vec::new();
            let mut labels: Vec<usize> = Vec::new();
            for s in batch_samples {
                images.push(&s.image);
                labels.push(s.label);
            }
            for m in mem1.iter().chain(mem2.iter()) {
                images.push(&m.image);
                labels.push(m.label);
            }
            let batch = stack_images(&images).map_err(|e| anyhow!("{e}"))?;

            let masks = if config.droptop.masking() {
                build_masks(config, &model, &batch, &labels, controller.as_ref(), &mut mask_rng)?
            } else {
                None
            };

            let fwd = model.forward(&batch, masks.as_deref()).map_err(|e| anyhow!("{e}"))?;
            let loss = match config.method {
                Method::Er => tensor::softmax_cross_entropy(&fwd.logits, &labels)
                    .map_err(|e| anyhow!("{e}"))?,
                Method::Derpp => {
                    derpp_loss(config, &fwd.logits, batch_samples, &labels, &mem1, &mem2)?
                }
            };
            model.sgd_step(&loss, config.lr);

            let k = config.total_classes();
            for (i, sample) in batch_samples.iter().enumerate() {
                let logits = (config.method == Method::Derpp)
                    .then(|| fwd.logits.data()[i * k..(i + 1) * k].to_vec());
                buffer.update(
                    MemoryItem {
                        image: sample.image.clone(),
                        label: sample.label,
                        task_id: task.index,
                        logits,
                        seen_index: global_index,
                    },
                    &mut buffer_rng,
                );
                global_index += 1;
            }

            iteration += 1;
            if let Some(ctl) = &mut controller {
                if ctl.advance() {
                    let losses = class_buffer_losses_for(&model, &buffer)?;
                    ctl.on_boundary(&losses);
                }
            }

            if let Some(dir) = dump_dir {
                if iteration.is_multiple_of(MASK_DUMP_EVERY) && config.droptop.masking() {
                    dump_mask_snapshot(dir, iteration, &model, batch_samples)?;
                }
            }
            if config.eval_every > 0 && iteration.is_multiple_of(config.eval_every) {
                for prev in stream.tasks.iter().take(task.index + 1) {
                    transfer.push(TransferPoint {
                        iteration,
                        task: prev.index,
                        split: "biased",
                        accuracy: eval_accuracy(&model, &prev.splits.biased)?,
                    });
                    transfer.push(TransferPoint {
                        iteration,
                        task: prev.index,
                        split: "unbiased",
                        accuracy: eval_accuracy(&model, &prev.splits.unbiased)?,
                    });
                }
            }
        }

        // end-of-task evaluation on every seen task
        let seen = &stream.tasks[..=task.index];
        let eval_row = |pick: &dyn Fn(&Task) -> &[Sample]| -> Result<Vec<f64>> {
            seen.iter().map(|t| eval_accuracy(&model, pick(t))).collect()
        };
        matrix_biased
            .push_row(eval_row(&|t| &t.splits.biased)?)
            .map_err(|e| anyhow!("{e}"))?;
        matrix_unbiased
            .push_row(eval_row(&|t| &t.splits.unbiased)?)
            .map_err(|e| anyhow!("{e}"))?;
        if let Some(m) = &mut matrix_only_bg {
            m.push_row(eval_row(&|t| t.splits.only_bg.as_deref().expect("patch stream"))?)
                .map_err(|e| anyhow!("{e}"))?;
        }

        if task.index + 1 < stream.tasks.len() {
            diagnostics.push(diagnose(
                &model,
                task,
                &stream.tasks[task.index + 1],
            )?);
        }
    }

    let summary = SeedSummary {
        seed,
        method: config.method.label().to_string(),
        droptop: config.droptop.label().to_string(),
        iterations: iteration,
        a_avg_biased: avg_accuracy(&matrix_biased).map_err(|e| anyhow!("{e}"))?,
        f_last_biased: forgetting(&matrix_biased).ok(),
        a_avg_unbiased: avg_accuracy(&matrix_unbiased).map_err(|e| anyhow!("{e}"))?,
        f_last_unbiased: forgetting(&matrix_unbiased).ok(),
        accuracy_matrix_biased: matrix_biased.rows().to_vec(),
        accuracy_matrix_unbiased: matrix_unbiased.rows().to_vec(),
        accuracy_matrix_only_bg: matrix_only_bg.map(|m| m.rows().to_vec()),
        kappa_endpoints: controller
            .as_ref()
            .map(|c| {
                c.kappa_endpoints()
                    .into_iter()
                    .map(|(class, (kappa_dec, kappa_inc))| KappaEndpoint {
                        class,
                        kappa_dec,
                        kappa_inc,
                    })
                    .collect()
            })
            .unwrap_or_default(),
        diagnostics,
        skipped_boundaries: controller.as_ref().map(|c| c.skipped_boundaries()).unwrap_or(0),
    };

    let audit = buffer.audit_csv();
    let histogram = attention_histogram(&model, stream.tasks.last().expect("nonempty"))?;

    Ok(SeedRun {
        seed,
        summary,
        trace: controller.map(|c| c.trace().to_vec()).unwrap_or_default(),
        transfer,
        buffer_audit_csv: audit,
        attention_histogram_csv: histogram,
        model,
    })
}

const MASK_DUMP_EVERY: usize = 25;
const EVAL_CHUNK: usize = 128;

fn derpp_loss(
    config: &ExperimentConfig,
    logits: &Tensor,
    stream_samples: &[Sample],
    labels: &[usize],
    mem1: &[MemoryItem],
    mem2: &[MemoryItem],
) -> Result<Tensor> {
    let n_s = stream_samples.len();
    let stream_logits = tensor::slice_rows(logits, 0, n_s).map_err(|e| anyhow!("{e}"))?;
    let mut loss = tensor::softmax_cross_entropy(&stream_logits, &labels[..n_s])
        .map_err(|e| anyhow!("{e}"))?;
    if !mem1.is_empty() {
        let k = logits.shape()[1];
        let mut stored = Vec::with_capacity(mem1.len() * k);
        for item in mem1 {
            let recorded = item
                .logits
                .as_ref()
                .ok_or_else(|| anyhow!("distillation item missing stored logits"))?;
            stored.extend_from_slice(recorded);
        }
        let target = Tensor::from_vec(&[mem1.len(), k], stored).map_err(|e| anyhow!("{e}"))?;
        let replay_logits =
            tensor::slice_rows(logits, n_s, mem1.len()).map_err(|e| anyhow!("{e}"))?;
        let distill = tensor::mse(&replay_logits, &target).map_err(|e| anyhow!("{e}"))?;
        loss = tensor::add(&loss, &tensor::scale(&distill, config.derpp_distill_coef))
            .map_err(|e| anyhow!("{e}"))?;
    }
    if !mem2.is_empty() {
        let start = n_s + mem1.len();
        let mem_logits =
            tensor::slice_rows(logits, start, mem2.len()).map_err(|e| anyhow!("{e}"))?;
        let ce = tensor::softmax_cross_entropy(&mem_logits, &labels[start..start + mem2.len()])
            .map_err(|e| anyhow!("{e}"))?;
        loss = tensor::add(&loss, &tensor::scale(&ce, config.derpp_mem_ce_coef))
            .map_err(|e| anyhow!("{e}"))?;
    }
    Ok(loss)
}

/// Per-sample drop masks from a preliminary no-gradient forward.
fn build_masks(
    config: &ExperimentConfig,
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    controller: Option<&IntensityController>,
    mask_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Vec<DropMask>>> {
    let size = config.stream.image_size;
    let gamma = config.shift.gamma;
    let n_total = stabilize(gamma, gamma, size, size).map_err(|e| anyhow!("{e}"))?.0;
    if n_total == 0 {
        return Ok(None);
    }

    // the random variant needs no attention, so skip the extra forward
    let prelim = if config.droptop == DropMode::Random {
        None
    } else {
        Some(model.forward_eval(batch).map_err(|e| anyhow!("{e}"))?)
    };

    let mut masks = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        let kappa = match config.droptop {
            DropMode::Fixed => config.shift.kappa0,
            DropMode::Random => 0.0,
            _ => controller.expect("adaptive modes carry a controller").kappa_for(label),
        };
        let (n_kappa, n_rand) = stabilize(kappa.min(gamma), gamma, size, size)
            .map_err(|e| anyhow!("{e}"))?;
        let attention = match (&prelim, config.droptop) {
            (None, _) => AttentionMap { values: Tensor::zeros(&[size, size]) },
            (Some(f), DropMode::NoFusion) => {
                let rec = f.record(i);
                last_map_attention(&rec.f_last, (size, size)).map_err(|e| anyhow!("{e}"))?
            }
            (Some(f), _) => {
                let rec = f.record(i);
                fuse(&rec.f_first, &rec.f_last).map_err(|e| anyhow!("{e}"))?
            }
        };
        let mask = match config.droptop {
            DropMode::Soft if n_kappa > 0 => {
                stabilized_soft_mask(&attention, n_kappa, n_rand, mask_rng)
                    .map_err(|e| anyhow!("{e}"))?
            }
            _ => hard_mask(&attention, n_kappa, n_rand, mask_rng).map_err(|e| anyhow!("{e}"))?,
        };
        masks.push(mask);
    }
    Ok(Some(masks))
}

/// Mean cross-entropy per class over everything in the buffer, measured in
/// one unmasked no-gradient pass (chunked).
pub(crate) fn class_buffer_losses_for(
    model: &Model,
    buffer: &ReplayBuffer,
) -> Result<BTreeMap<usize, f64>> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let items = buffer.items();
    for chunk in items.chunks(EVAL_CHUNK.max(1)) {
        if chunk.is_empty() {
            continue;
        }
        let images: Vec<&Tensor> = chunk.iter().map(|m| &m.image).collect();
        let batch = stack_images(&images).map_err(|e| anyhow!("{e}"))?;
        let fwd = model.forward_eval(&batch).map_err(|e| anyhow!("{e}"))?;
        let k = fwd.logits.shape()[1];
        for (row, item) in fwd.logits.data().chunks(k).zip(chunk) {
            let loss = cross_entropy_row(row, item.label);
            let entry = sums.entry(item.label).or_insert((0.0, 0));
            entry.0 += loss;
            entry.1 += 1;
        }
    }
    Ok(sums.into_iter().map(|(c, (sum, n))| (c, sum / n as f64)).collect())
}

fn cross_entropy_row(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&v| (v - m).exp()).sum();
    m + z.ln() - logits[target]
}

/// Accuracy over a test split; evaluation never applies masks.
pub fn eval_accuracy(model: &Model, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        bail!("empty evaluation split");
    }
    let mut correct = 0usize;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let images: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
        let batch = stack_images(&images).map_err(|e| anyhow!("{e}"))?;
        let fwd = model.forward_eval(&batch).map_err(|e| anyhow!("{e}"))?;
        for (pred, sample) in fwd.predictions().into_iter().zip(chunk) {
            correct += (pred == sample.label) as usize;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Pooled feature vectors for a split (for the diagnostics).
fn collect_features(model: &Model, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let images: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
        let batch = stack_images(&images).map_err(|e| anyhow!("{e}"))?;
        let fwd = model.forward_eval(&batch).map_err(|e| anyhow!("{e}"))?;
        let d = fwd.features.shape()[1];
        for row in fwd.features.data().chunks(d) {
            out.push(row.to_vec());
        }
    }
    Ok(out)
}

fn diagnose(model: &Model, seen_task: &Task, unseen_task: &Task) -> Result<TaskDiagnostics> {
    let seen = collect_features(model, &seen_task.splits.biased)?;
    let unseen = collect_features(model, &unseen_task.splits.biased)?;
    let seen_means = oclsim::metrics::mean_abs_activation(&seen).map_err(|e| anyhow!("{e}"))?;
    let th = DiagnosticThresholds::from_seen_means(&seen_means).map_err(|e| anyhow!("{e}"))?;
    let labels = classify_features(&seen, &unseen, th).map_err(|e| anyhow!("{e}"))?;
    let (short_mean, non_mean) = activation_gap(&seen, &labels).map_err(|e| anyhow!("{e}"))?;
    let count = |want: FeatureLabel| labels.iter().filter(|&&l| l == want).count();
    Ok(TaskDiagnostics {
        after_task: seen_task.index,
        unseen_task: unseen_task.index,
        shortcut: count(FeatureLabel::Shortcut),
        non_shortcut: count(FeatureLabel::NonShortcut),
        inactive: count(FeatureLabel::Inactive),
        shortcut_mean_activation: short_mean,
        non_shortcut_mean_activation: non_mean,
    })
}

/// Attention-value histogram over the final task's biased split, bucketed
/// by whether each cell lies in the ground-truth cue region.
fn attention_histogram(model: &Model, task: &Task) -> Result<String> {
    const BINS: usize = 20;
    const SAMPLES: usize = 64;
    let mut values: Vec<(f64, bool)> = Vec::new();
    for sample in task.splits.biased.iter().take(SAMPLES) {
        let batch = stack_images(&[&sample.image]).map_err(|e| anyhow!("{e}"))?;
        let fwd = model.forward_eval(&batch).map_err(|e| anyhow!("{e}"))?;
        let rec = fwd.record(0);
        let attention = fuse(&rec.f_first, &rec.f_last).map_err(|e| anyhow!("{e}"))?;
        for (cell, &v) in attention.values.data().iter().enumerate() {
            values.push((v, sample.shortcut_region[cell]));
        }
    }
    let lo = values.iter().map(|&(v, _)| v).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|&(v, _)| v).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut shortcut = [0usize; BINS];
    let mut other = [0usize; BINS];
    for (v, in_region) in values {
        let bin = (((v - lo) / span * BINS as f64) as usize).min(BINS - 1);
        if in_region {
            shortcut[bin] += 1;
        } else {
            other[bin] += 1;
        }
    }
    let mut csv = String::from("bin_lo,bin_hi,shortcut_region,elsewhere\n");
    for b in 0..BINS {
        let bin_lo = lo + span * b as f64 / BINS as f64;
        let bin_hi = lo + span * (b + 1) as f64 / BINS as f64;
        csv.push_str(&format!("{bin_lo},{bin_hi},{},{}\n", shortcut[b], other[b]));
    }
    Ok(csv)
}

fn dump_mask_snapshot(
    dir: &Path,
    iteration: usize,
    model: &Model,
    batch_samples: &[Sample],
) -> Result<()> {
    let Some(sample) = batch_samples.first() else { return Ok(()) };
    let batch = stack_images(&[&sample.image]).map_err(|e| anyhow!("{e}"))?;
    let fwd = model.forward_eval(&batch).map_err(|e| anyhow!("{e}"))?;
    let rec = fwd.record(0);
    let attention = fuse(&rec.f_first, &rec.f_last).map_err(|e| anyhow!("{e}"))?;
    debias::write_pgm(&attention.values, &dir.join(format!("iter_{iteration:06}_attention.pgm")))
        .map_err(|e| anyhow!("{e}"))?;
    debias::write_csv(&attention.values, &dir.join(format!("iter_{iteration:06}_attention.csv")))
        .map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// κ-trace CSV: one row per class per phase boundary.
pub fn trace_csv(trace: &[TraceEvent]) -> String {
    let mut out = String::from("iteration,class_id,phase,kappa,p_value,outcome\n");
    for e in trace {
        let p = e.p_value.map(|p| p.to_string()).unwrap_or_default();
        let outcome = e.outcome.map(|o| o.label().to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{p},{outcome}\n",
            e.iteration,
            e.class_id,
            e.phase.label(),
            e.kappa
        ));
    }
    out
}

fn results_csv(summary: &SeedSummary) -> String {
    let mut out = String::from("split,after_task,accuracies\n");
    let mut emit = |name: &str, rows: &[Vec<f64>]| {
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{name},{i},{}\n", cells.join(",")));
        }
    };
    emit("biased", &summary.accuracy_matrix_biased);
    emit("unbiased", &summary.accuracy_matrix_unbiased);
    if let Some(rows) = &summary.accuracy_matrix_only_bg {
        emit("only_bg", rows);
    }
    out
}

fn emit(config: &ExperimentConfig, artifacts: &RunArtifacts) -> Result<()> {
    for run in &artifacts.seeds {
        let dir = config.out_dir.join(format!("seed_{}", run.seed));
        std::fs::create_dir_all(&dir)?;
        std::fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&run.summary)? + "\n",
        )?;
        std::fs::write(dir.join("results.csv"), results_csv(&run.summary))?;
        std::fs::write(dir.join("kappa_trace.csv"), trace_csv(&run.trace))?;
        std::fs::write(dir.join("buffer_audit.csv"), &run.buffer_audit_csv)?;
        std::fs::write(dir.join("attention_histogram.csv"), &run.attention_histogram_csv)?;
        if !run.transfer.is_empty() {
            let mut csv = String::from("iteration,task,split,accuracy\n");
            for p in &run.transfer {
                csv.push_str(&format!("{},{},{},{}\n", p.iteration, p.task, p.split, p.accuracy));
            }
            std::fs::write(dir.join("transfer_curve.csv"), csv)?;
        }
    }
    std::fs::write(
        config.out_dir.join("aggregate.json"),
        serde_json::to_string_pretty(&artifacts.aggregate)? + "\n",
    )?;
    Ok(())
}
