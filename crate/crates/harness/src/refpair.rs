//! Single-model versus two-model intensity control.
//!
//! The adaptive controller alternates both intensity candidates inside one
//! model. The reference variant here trains two models on the identical
//! batch sequence, one holding every class at its decrement candidate and
//! one at its increment candidate, measures each model's replay loss at the
//! same phase boundaries, and runs the same t-test. Because data, buffer
//! and retrieval randomness are shared streams, the k-th test event of each
//! variant falls on the same iteration, and their outcomes can be compared
//! one to one.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use oclsim::backbone::{stack_images, Model};
use oclsim::debias::{fuse, hard_mask, stabilize};
use oclsim::intensity::{IntensityState, Phase, ShiftOutcome};
use oclsim::replay::{MemoryItem, ReplayBuffer, UpdatePolicy};
use oclsim::rng::{splitmix64, SeedSplit, StreamId};
use oclsim::stream::generate_with_variant;
use oclsim::tensor::{self, Tensor};

use crate::config::{DropMode, ExperimentConfig, Method};
use crate::runner::{self, mean_stderr, MeanStderr};

#[derive(Debug, Clone, Serialize)]
pub struct ClassAgreement {
    pub class: usize,
    pub events: usize,
    pub matches: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedAgreement {
    pub seed: u64,
    pub per_class: Vec<ClassAgreement>,
    pub events: usize,
    pub matches: usize,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairValidation {
    pub per_seed: Vec<SeedAgreement>,
    pub total_events: usize,
    pub total_matches: usize,
    /// Pooled agreement across all seeds and classes.
    pub overall_fraction: Option<f64>,
    pub per_seed_fraction: Option<MeanStderr>,
}

/// One κ-pair trace row from the two-model variant.
#[derive(Debug, Clone)]
pub struct PairTraceRow {
    pub iteration: usize,
    pub class_id: usize,
    pub kappa_dec: f64,
    pub kappa_inc: f64,
    pub outcome: Option<ShiftOutcome>,
}

type PairOutcomes = (BTreeMap<usize, Vec<ShiftOutcome>>, Vec<PairTraceRow>);

pub struct PairSeedRun {
    pub agreement: SeedAgreement,
    pub single_trace_csv: String,
    pub pair_trace_csv: String,
}

/// Runs the validation for every configured seed.
pub fn run_reference_pair(config: &ExperimentConfig) -> Result<(PairValidation, Vec<PairSeedRun>)> {
    if config.seeds.is_empty() || config.stream.num_tasks == 0 {
        return Ok((
            PairValidation {
                per_seed: Vec::new(),
                total_events: 0,
                total_matches: 0,
                overall_fraction: None,
                per_seed_fraction: None,
            },
            Vec::new(),
        ));
    }
    if config.method != Method::Er {
        bail!("the reference-pair validation runs on the er method");
    }
    let mut single_config = config.clone();
    single_config.droptop = DropMode::On;
    single_config.validate()?;

    let mut per_seed = Vec::new();
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let single = runner::run_seed(&single_config, seed, None)?;
        let single_outcomes = outcomes_by_class(
            single
                .trace
                .iter()
                .filter_map(|e| e.outcome.map(|o| (e.class_id, o))),
        );
        let (pair_outcomes, pair_trace) = run_pair_seed(&single_config, seed)?;

        let mut per_class = Vec::new();
        let mut events = 0;
        let mut matches = 0;
        let empty = Vec::new();
        for class in 0..config.total_classes() {
            let a = single_outcomes.get(&class).unwrap_or(&empty);
            let b = pair_outcomes.get(&class).unwrap_or(&empty);
            let n = a.len().min(b.len());
            let m = (0..n).filter(|&i| a[i] == b[i]).count();
            per_class.push(ClassAgreement { class, events: n, matches: m });
            events += n;
            matches += m;
        }
        per_seed.push(SeedAgreement {
            seed,
            per_class,
            events,
            matches,
            fraction: (events > 0).then(|| matches as f64 / events as f64),
        });
        runs.push(PairSeedRun {
            agreement: per_seed.last().unwrap().clone(),
            single_trace_csv: runner::trace_csv(&single.trace),
            pair_trace_csv: pair_trace_csv(&pair_trace),
        });
    }

    let total_events: usize = per_seed.iter().map(|s| s.events).sum();
    let total_matches: usize = per_seed.iter().map(|s| s.matches).sum();
    let fractions: Vec<f64> = per_seed.iter().filter_map(|s| s.fraction).collect();
    let validation = PairValidation {
        per_seed,
        total_events,
        total_matches,
        overall_fraction: (total_events > 0).then(|| total_matches as f64 / total_events as f64),
        per_seed_fraction: (!fractions.is_empty()).then(|| mean_stderr(&fractions)),
    };
    Ok((validation, runs))
}

fn outcomes_by_class(
    events: impl Iterator<Item = (usize, ShiftOutcome)>,
) -> BTreeMap<usize, Vec<ShiftOutcome>> {
    let mut map: BTreeMap<usize, Vec<ShiftOutcome>> = BTreeMap::new();
    for (class, outcome) in events {
        map.entry(class).or_default().push(outcome);
    }
    map
}

fn pair_trace_csv(rows: &[PairTraceRow]) -> String {
    let mut out = String::from("iteration,class_id,kappa_dec,kappa_inc,outcome\n");
    for r in rows {
        let outcome = r.outcome.map(|o| o.label().to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{outcome}\n",
            r.iteration, r.class_id, r.kappa_dec, r.kappa_inc
        ));
    }
    out
}

/// The two-model training loop. Both models see every batch; model "dec"
/// masks with each class's decrement candidate, model "inc" with the
/// increment candidate. Phase boundaries measure the model whose phase just
/// completed, exactly like the single-model clock.
fn run_pair_seed(config: &ExperimentConfig, seed: u64) -> Result<PairOutcomes> {
    let split = SeedSplit::new(seed);
    let stream_cfg = super::runner::stream_config_for(config, &split);
    let stream = generate_with_variant(&stream_cfg, config.train_variant)
        .map_err(|e| anyhow!("{e}"))?;
    let backbone_cfg = super::runner::backbone_config_for(config, &split);
    let mut model_dec = Model::build(backbone_cfg.clone()).map_err(|e| anyhow!("{e}"))?;
    let mut model_inc = Model::build(backbone_cfg).map_err(|e| anyhow!("{e}"))?;
    let mut buffer = ReplayBuffer::new(config.memory_capacity, UpdatePolicy::Random);
    let mut buffer_rng = split.rng(StreamId::Buffer);
    let mut retrieval_rng = split.rng(StreamId::Retrieval);
    let mut mask_rng_dec =
        ChaCha8Rng::seed_from_u64(splitmix64(split.derived_seed(StreamId::Mask) ^ 0xdec));
    let mut mask_rng_inc =
        ChaCha8Rng::seed_from_u64(splitmix64(split.derived_seed(StreamId::Mask) ^ 0x1c));

    let shift = &config.shift;
    let mut states: BTreeMap<usize, IntensityState> = (0..config.total_classes())
        .map(|c| (c, IntensityState::new(c, shift)))
        .collect();
    // separate loss anchors per model per class
    let mut anchor_dec: BTreeMap<usize, f64> = BTreeMap::new();
    let mut anchor_inc: BTreeMap<usize, f64> = BTreeMap::new();

    let size = config.stream.image_size;
    let gamma = shift.gamma;
    let mut outcomes: BTreeMap<usize, Vec<ShiftOutcome>> = BTreeMap::new();
    let mut trace = Vec::new();
    let mut iteration = 0usize;
    let mut global_index = 0usize;

    for task in &stream.tasks {
        let mut phase = Phase::Dec;
        let mut iter_in_phase = 0usize;
        for state in states.values_mut() {
            state.reset_measurement();
        }
        anchor_dec.clear();
        anchor_inc.clear();

        for batch_samples in task.train.chunks(config.batch_size) {
            let mem: Vec<MemoryItem> = buffer
                .retrieve(config.batch_size, &mut retrieval_rng)
                .into_iter()
                .cloned()
                .collect();
            let mut images: Vec<&Tensor> = Vec::new();
            let mut labels: Vec<usize> = Vec::new();
            for s in batch_samples {
                images.push(&s.image);
                labels.push(s.label);
            }
            for m in &mem {
                images.push(&m.image);
                labels.push(m.label);
            }
            let batch = stack_images(&images).map_err(|e| anyhow!("{e}"))?;

            for (model, use_dec, mask_rng) in [
                (&mut model_dec, true, &mut mask_rng_dec),
                (&mut model_inc, false, &mut mask_rng_inc),
            ] {
                let prelim = model.forward_eval(&batch).map_err(|e| anyhow!("{e}"))?;
                let mut masks = Vec::with_capacity(labels.len());
                for (i, &label) in labels.iter().enumerate() {
                    let state = &states[&label];
                    let kappa = if use_dec { state.kappa_dec } else { state.kappa_inc };
                    let (n_kappa, n_rand) =
                        stabilize(kappa.min(gamma), gamma, size, size).map_err(|e| anyhow!("{e}"))?;
                    let rec = prelim.record(i);
                    let attention =
                        fuse(&rec.f_first, &rec.f_last).map_err(|e| anyhow!("{e}"))?;
                    masks.push(
                        hard_mask(&attention, n_kappa, n_rand, mask_rng)
                            .map_err(|e| anyhow!("{e}"))?,
                    );
                }
                let fwd = model.forward(&batch, Some(&masks)).map_err(|e| anyhow!("{e}"))?;
                let loss = tensor::softmax_cross_entropy(&fwd.logits, &labels)
                    .map_err(|e| anyhow!("{e}"))?;
                model.sgd_step(&loss, config.lr);
            }

            for sample in batch_samples {
                buffer.update(
                    MemoryItem {
                        image: sample.image.clone(),
                        label: sample.label,
                        task_id: task.index,
                        logits: None,
                        seen_index: global_index,
                    },
                    &mut buffer_rng,
                );
                global_index += 1;
            }

            iteration += 1;
            iter_in_phase += 1;
            if iter_in_phase == shift.period {
                let completed = phase;
                let (model, anchors) = match completed {
                    Phase::Dec => (&model_dec, &mut anchor_dec),
                    Phase::Inc => (&model_inc, &mut anchor_inc),
                };
                let losses = super::runner::class_buffer_losses_for(model, &buffer)?;
                for (&class, state) in states.iter_mut() {
                    let Some(&l_new) = losses.get(&class) else { continue };
                    if let Some(&l_old) = anchors.get(&class) {
                        let delta = l_old - l_new;
                        let hist = match completed {
                            Phase::Dec => &mut state.h_dec,
                            Phase::Inc => &mut state.h_inc,
                        };
                        if hist.len() < shift.history_len {
                            hist.push(delta);
                        }
                    }
                    anchors.insert(class, l_new);
                    let outcome = if state.histories_full(shift) {
                        let (o, _p) = state.maybe_shift(shift);
                        outcomes.entry(class).or_default().push(o);
                        Some(o)
                    } else {
                        None
                    };
                    trace.push(PairTraceRow {
                        iteration,
                        class_id: class,
                        kappa_dec: state.kappa_dec,
                        kappa_inc: state.kappa_inc,
                        outcome,
                    });
                }
                phase = phase.toggled();
                iter_in_phase = 0;
            }
        }
    }
    Ok((outcomes, trace))
}
