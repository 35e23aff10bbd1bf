//! Pretrain → refine → finetune, the scratch baseline, and prediction.

pub mod checkpoint;

use rand::seq::SliceRandom;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointStage, TrainingMeta};

use crate::autograd::Tape;
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::kernels::loss::cross_entropy_forward;
use crate::model::{decide, Model, ModelConfig, Partition, TrainableSet};
use crate::optim::{AdamState, Stage, StageSchedule};
use crate::rng::{derive_seed, seeded};
use crate::tensor::Tensor;

/// Age targets are regressed as `(age - center) / scale`.
pub const AGE_TARGET_CENTER: f64 = 48.5;
pub const AGE_TARGET_SCALE: f64 = 28.0;

/// Batch size used for eval-mode inference.
const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Objective {
    AgeMae,
    CrossEntropy,
}

/// Split a shuffled order into batches; a trailing singleton joins the
/// previous batch because train-mode batch norm needs two values.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = order.len() - out.last().expect("non-empty").len() - 1;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

fn stack(data: &Dataset, idx: &[usize]) -> Result<Tensor<f32>> {
    let vols = idx
        .iter()
        .map(|&i| data.samples()[i].load())
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor<f32>> = vols.iter().map(|v| v.as_ref()).collect();
    Tensor::stack(&refs)
}

/// Train `model` for one stage with a fresh Adam state. Returns the mean
/// training loss of each epoch (age losses in years).
fn run_stage(
    model: &mut Model<f32>,
    data: &Dataset,
    schedule: &StageSchedule,
    objective: Objective,
    seed: u64,
) -> Result<Vec<f64>> {
    schedule.validate()?;
    if schedule.epochs == 0 {
        return Ok(Vec::new());
    }
    if data.len() < 2 {
        return Err(Error::Dataset(format!("training needs at least 2 samples, got {}", data.len())));
    }
    let mut adam = AdamState::new(model);
    adam.weight_decay = schedule.weight_decay;
    let mut trace = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seeded(derive_seed(seed, &format!("shuffle-{}", schedule.stage), epoch as u64)));
        let mut total = 0.0;
        for batch in batches(&order, schedule.batch_size) {
            let input = stack(data, batch)?;
            let mut tape = Tape::new();
            let fwd = model.forward_train(&mut tape, input)?;
            let loss = match objective {
                Objective::AgeMae => {
                    let targets: Vec<f32> = batch
                        .iter()
                        .map(|&i| {
                            let age = data.samples()[i].label.as_age().expect("age task");
                            ((age - AGE_TARGET_CENTER) / AGE_TARGET_SCALE) as f32
                        })
                        .collect();
                    tape.mae_loss(fwd.output, &targets)?
                }
                Objective::CrossEntropy => {
                    let labels: Vec<usize> = batch
                        .iter()
                        .map(|&i| data.samples()[i].label.as_outcome().expect("outcome task") as usize)
                        .collect();
                    tape.softmax_cross_entropy(fwd.output, &labels)?
                }
            };
            let value = tape.value(loss).item()? as f64;
            let scale = if objective == Objective::AgeMae { AGE_TARGET_SCALE } else { 1.0 };
            total += value * scale * batch.len() as f64;
            tape.backward(loss)?;
            model.collect_grads(&mut tape, &fwd)?;
            adam.step(model, lr)?;
        }
        trace.push(total / data.len() as f64);
    }
    Ok(trace)
}

fn training_set(data: &Dataset, task: Task) -> Result<Dataset> {
    data.require_task(task)?;
    if data.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    data.materialize()
}

/// Train all layers on age regression with the MAE objective.
pub fn pretrain(age_data: &Dataset, config: ModelConfig, schedule: &StageSchedule, seed: u64) -> Result<Checkpoint> {
    let data = training_set(age_data, Task::Age)?;
    if config.out_dim != 1 {
        return Err(Error::Config(format!("pretraining needs out_dim 1, got {}", config.out_dim)));
    }
    let mut model = Model::build(config, &mut seeded(derive_seed(seed, "init", 0)))?.set_trainable(TrainableSet::All);
    let trace = run_stage(&mut model, &data, schedule, Objective::AgeMae, seed)?;
    Ok(Checkpoint {
        model,
        stage: CheckpointStage::Pretrained,
        meta: TrainingMeta {
            epochs: schedule.epochs,
            seed,
            loss_trace: trace,
        },
    })
}

/// Attach a fresh two-logit head and train only the head.
pub fn refine(ck: &Checkpoint, hie_train: &Dataset, schedule: &StageSchedule, seed: u64) -> Result<Checkpoint> {
    ck.require_stage(CheckpointStage::Pretrained)?;
    let data = training_set(hie_train, Task::Outcome)?;
    let frozen = ck.model.param_checksum(Partition::FeatureExtractor);
    let mut model = ck
        .model
        .clone()
        .replace_head(2, &mut seeded(derive_seed(seed, "head", 0)))?
        .set_trainable(TrainableSet::HeadOnly);
    let trace = run_stage(&mut model, &data, schedule, Objective::CrossEntropy, seed)?;
    if model.param_checksum(Partition::FeatureExtractor) != frozen {
        return Err(Error::Config("feature extractor changed during refine".into()));
    }
    Ok(Checkpoint {
        model,
        stage: CheckpointStage::Refined,
        meta: TrainingMeta {
            epochs: schedule.epochs,
            seed,
            loss_trace: trace,
        },
    })
}

/// Train every parameter of a refined model.
pub fn finetune(ck: &Checkpoint, hie_train: &Dataset, schedule: &StageSchedule, seed: u64) -> Result<Checkpoint> {
    ck.require_stage(CheckpointStage::Refined)?;
    let data = training_set(hie_train, Task::Outcome)?;
    let mut model = ck.model.clone().set_trainable(TrainableSet::All);
    let trace = run_stage(&mut model, &data, schedule, Objective::CrossEntropy, seed)?;
    Ok(Checkpoint {
        model,
        stage: CheckpointStage::Finetuned,
        meta: TrainingMeta {
            epochs: schedule.epochs,
            seed,
            loss_trace: trace,
        },
    })
}

/// No-transfer baseline: random init, all layers, cross-entropy.
pub fn train_scratch(hie_train: &Dataset, config: ModelConfig, schedule: &StageSchedule, seed: u64) -> Result<Checkpoint> {
    let data = training_set(hie_train, Task::Outcome)?;
    if config.out_dim != 2 {
        return Err(Error::Config(format!("scratch training needs out_dim 2, got {}", config.out_dim)));
    }
    if schedule.stage != Stage::Scratch {
        return Err(Error::RunConfig(format!("expected a scratch schedule, got {}", schedule.stage)));
    }
    let mut model = Model::build(config, &mut seeded(derive_seed(seed, "init", 0)))?.set_trainable(TrainableSet::All);
    let trace = run_stage(&mut model, &data, schedule, Objective::CrossEntropy, seed)?;
    Ok(Checkpoint {
        model,
        stage: CheckpointStage::Scratch,
        meta: TrainingMeta {
            epochs: schedule.epochs,
            seed,
            loss_trace: trace,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub class: u8,
    /// Softmax probability of class 1 (abnormal).
    pub probability: f64,
}

fn eval_batches<'a>(model: &Model<f32>, data: &'a Dataset) -> Result<Vec<(&'a [crate::data::Sample], Tensor<f32>)>> {
    let mut out = Vec::new();
    for chunk in data.samples().chunks(EVAL_BATCH) {
        let vols = chunk.iter().map(|s| s.load()).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<f32>> = vols.iter().map(|v| v.as_ref()).collect();
        out.push((chunk, model.forward_eval(&Tensor::stack(&refs)?)?));
    }
    Ok(out)
}

/// Eval-mode class predictions for an outcome checkpoint.
pub fn predict(ck: &Checkpoint, samples: &Dataset) -> Result<Vec<Prediction>> {
    if !ck.stage.is_outcome() {
        return Err(Error::Stage {
            expected: "refined, finetuned or scratch".into(),
            found: ck.stage.to_string(),
        });
    }
    samples.require_task(Task::Outcome)?;
    let mut preds = Vec::with_capacity(samples.len());
    for (chunk, logits) in eval_batches(&ck.model, samples)? {
        let labels = vec![0usize; chunk.len()];
        let (_, probs) = cross_entropy_forward(&logits, &labels)?;
        for (i, s) in chunk.iter().enumerate() {
            let row = &logits.data()[i * 2..i * 2 + 2];
            preds.push(Prediction {
                id: s.id.clone(),
                class: decide(row) as u8,
                probability: probs[i * 2 + 1] as f64,
            });
        }
    }
    Ok(preds)
}

/// Eval-mode age estimates (years) from a pretrained checkpoint.
pub fn predict_age(ck: &Checkpoint, samples: &Dataset) -> Result<Vec<(String, f64)>> {
    ck.require_stage(CheckpointStage::Pretrained)?;
    let mut out = Vec::with_capacity(samples.len());
    for (chunk, pred) in eval_batches(&ck.model, samples)? {
        for (s, &p) in chunk.iter().zip(pred.data()) {
            out.push((s.id.clone(), p as f64 * AGE_TARGET_SCALE + AGE_TARGET_CENTER));
        }
    }
    Ok(out)
}
