//! Adam and the per-stage learning-rate schedules.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Element, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Pretrain,
    Refine,
    Finetune,
    Scratch,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Refine => "refine",
            Stage::Finetune => "finetune",
            Stage::Scratch => "scratch",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "refine" => Ok(Stage::Refine),
            "finetune" => Ok(Stage::Finetune),
            "scratch" => Ok(Stage::Scratch),
            other => Err(Error::RunConfig(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    Constant,
    /// Multiply by 0.5 every `every` epochs.
    HalveEvery(usize),
    /// `base_lr` before epoch `at`, `then` from epoch `at` on.
    StepTo { at: usize, then: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSchedule {
    pub stage: Stage,
    pub base_lr: f64,
    pub decay: Decay,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 coefficient added to the gradient before the Adam update.
    pub weight_decay: f64,
}

impl StageSchedule {
    /// Brain-age pretraining: 80 epochs, batch 16, lr 0.001 halved every 20 epochs.
    pub fn pretrain() -> Self {
        Self {
            stage: Stage::Pretrain,
            base_lr: 0.001,
            decay: Decay::HalveEvery(20),
            epochs: 80,
            batch_size: 16,
            weight_decay: 0.0,
        }
    }

    /// Head-only refinement: 100 epochs at a constant 0.001.
    pub fn refine() -> Self {
        Self {
            stage: Stage::Refine,
            base_lr: 0.001,
            decay: Decay::Constant,
            epochs: 100,
            batch_size: 16,
            weight_decay: 0.0,
        }
    }

    /// End-to-end fine-tuning: 100 epochs at a constant 0.0005.
    pub fn finetune() -> Self {
        Self {
            stage: Stage::Finetune,
            base_lr: 0.0005,
            decay: Decay::Constant,
            epochs: 100,
            batch_size: 16,
            weight_decay: 0.0,
        }
    }

    /// No-transfer baseline with the same epoch budget and learning-rate
    /// history as refine followed by finetune.
    pub fn scratch_matching(refine: &StageSchedule, finetune: &StageSchedule) -> Self {
        Self {
            stage: Stage::Scratch,
            base_lr: refine.base_lr,
            decay: Decay::StepTo {
                at: refine.epochs,
                then: finetune.base_lr,
            },
            epochs: refine.epochs + finetune.epochs,
            batch_size: refine.batch_size,
            weight_decay: refine.weight_decay,
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::RunConfig(format!("{} weight decay must be finite and >= 0", self.stage)));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::RunConfig(format!("{} learning rate must be positive", self.stage)));
        }
        if self.batch_size == 0 {
            return Err(Error::RunConfig(format!("{} batch size must be >= 1", self.stage)));
        }
        match self.decay {
            Decay::HalveEvery(0) => Err(Error::RunConfig("halving period must be >= 1".into())),
            Decay::StepTo { then, .. } if !(then > 0.0) => {
                Err(Error::RunConfig("step learning rate must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.epochs {
            return Err(Error::EpochOutOfRange {
                epoch,
                epochs: self.epochs,
            });
        }
        Ok(match self.decay {
            Decay::Constant => self.base_lr,
            Decay::HalveEvery(every) => self.base_lr * 0.5f64.powi((epoch / every) as i32),
            Decay::StepTo { at, then } => {
                if epoch < at {
                    self.base_lr
                } else {
                    then
                }
            }
        })
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// First and second moment estimates for exactly the trainable parameters.
#[derive(Debug, Clone)]
pub struct AdamState<T: Element = f32> {
    moments: IndexMap<String, Moments<T>>,
    step: u64,
    pub weight_decay: f64,
}

impl<T: Element> AdamState<T> {
    pub fn new(model: &Model<T>) -> Self {
        Self::for_params(model.params(), |name| model.is_trainable(name))
    }

    /// State tracking the entries of `params` selected by `trainable`.
    pub fn for_params(params: &IndexMap<String, Tensor<T>>, trainable: impl Fn(&str) -> bool) -> Self {
        let moments = params
            .iter()
            .filter(|(name, _)| trainable(name))
            .map(|(name, t)| {
                (
                    name.clone(),
                    Moments {
                        m: vec![T::zero(); t.numel()],
                        v: vec![T::zero(); t.numel()],
                    },
                )
            })
            .collect();
        Self {
            moments,
            step: 0,
            weight_decay: 0.0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn tracked(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(String::as_str)
    }

    /// One Adam update on every trainable parameter, then clear gradients.
    /// Non-trainable parameters are never written.
    pub fn step(&mut self, model: &mut Model<T>, lr: f64) -> Result<()> {
        self.step_params(model.params_mut(), lr)
    }

    pub fn step_params(&mut self, params: &mut IndexMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::invalid("adam_step", format!("learning rate must be positive, got {lr}")));
        }
        for name in self.moments.keys() {
            let p = params
                .get(name)
                .ok_or_else(|| Error::MissingGradient(name.clone()))?;
            match p.grad() {
                None => return Err(Error::MissingGradient(name.clone())),
                Some(g) if g.iter().any(|v| v.is_nan()) => return Err(Error::NanGradient(name.clone())),
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64(ADAM_BETA1), T::from_f64(ADAM_BETA2));
        let bc1 = T::from_f64(1.0 - ADAM_BETA1.powi(t));
        let bc2 = T::from_f64(1.0 - ADAM_BETA2.powi(t));
        let (lr, eps, wd) = (T::from_f64(lr), T::from_f64(ADAM_EPSILON), T::from_f64(self.weight_decay));
        let one = T::one();

        for (name, mom) in self.moments.iter_mut() {
            let p = params.get_mut(name).expect("checked above");
            let grad = p.take_grad().expect("checked above");
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(&grad).zip(&mut mom.m).zip(&mut mom.v) {
                let g = g + wd * *w;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        for p in params.values_mut() {
            p.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(value: f64) -> IndexMap<String, Tensor<f64>> {
        let mut m = IndexMap::new();
        m.insert("p".to_string(), Tensor::from_vec(vec![1], vec![value]).unwrap());
        m
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = scalar(2.5);
        let mut state = AdamState::for_params(&params, |_| true);
        params["p"].set_grad(vec![0.0]).unwrap();
        state.step_params(&mut params, 0.1).unwrap();
        assert_eq!(params["p"].data(), &[2.5]);
        assert_eq!(state.step_count(), 1);
        assert!(params["p"].grad().is_none());
    }

    #[test]
    fn first_unit_gradient_step_moves_by_lr() {
        let mut params = scalar(1.0);
        let mut state = AdamState::for_params(&params, |_| true);
        params["p"].set_grad(vec![1.0]).unwrap();
        state.step_params(&mut params, 0.01).unwrap();
        assert!((params["p"].data()[0] - (1.0 - 0.01)).abs() < 1e-9);
    }

    #[test]
    fn missing_and_nan_gradients_are_named() {
        let mut params = scalar(1.0);
        let mut state = AdamState::for_params(&params, |_| true);
        match state.step_params(&mut params, 0.1) {
            Err(Error::MissingGradient(name)) => assert_eq!(name, "p"),
            other => panic!("{other:?}"),
        }
        params["p"].set_grad(vec![f64::NAN]).unwrap();
        assert!(matches!(state.step_params(&mut params, 0.1), Err(Error::NanGradient(_))));
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn untracked_parameters_are_not_written() {
        let mut params = scalar(1.0);
        params.insert("frozen".into(), Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap());
        let mut state = AdamState::for_params(&params, |n| n == "p");
        assert_eq!(state.tracked().collect::<Vec<_>>(), vec!["p"]);
        params["p"].set_grad(vec![1.0]).unwrap();
        params["frozen"].set_grad(vec![1.0, 1.0]).unwrap();
        state.step_params(&mut params, 0.1).unwrap();
        assert_eq!(params["frozen"].data(), &[3.0, 4.0]);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut params = scalar(1.0);
        let mut state = AdamState::for_params(&params, |_| true);
        params["p"].set_grad(vec![1.0]).unwrap();
        assert!(state.step_params(&mut params, 0.0).is_err());
    }

    #[test]
    fn pretrain_schedule_halves_every_twenty() {
        let s = StageSchedule::pretrain();
        assert_eq!(s.lr_at(0).unwrap(), 0.001);
        assert_eq!(s.lr_at(25).unwrap(), 0.0005);
        assert_eq!(s.lr_at(79).unwrap(), 0.000125);
        assert!(matches!(s.lr_at(80), Err(Error::EpochOutOfRange { epoch: 80, epochs: 80 })));
    }

    #[test]
    fn transfer_stage_constants() {
        assert_eq!(StageSchedule::finetune().lr_at(50).unwrap(), 0.0005);
        assert_eq!(StageSchedule::refine().lr_at(99).unwrap(), 0.001);
        assert_eq!(StageSchedule::refine().epochs, 100);
        assert_eq!(StageSchedule::finetune().epochs, 100);
    }

    #[test]
    fn scratch_mirrors_transfer_budget() {
        let s = StageSchedule::scratch_matching(&StageSchedule::refine(), &StageSchedule::finetune());
        assert_eq!(s.epochs, 200);
        assert_eq!(s.lr_at(99).unwrap(), 0.001);
        assert_eq!(s.lr_at(100).unwrap(), 0.0005);
        assert_eq!(s.lr_at(199).unwrap(), 0.0005);
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(StageSchedule::refine().with_batch_size(0).validate().is_err());
        let mut s = StageSchedule::refine();
        s.base_lr = 0.0;
        assert!(s.validate().is_err());
        assert!(StageSchedule::pretrain().validate().is_ok());
    }

    #[test]
    fn stage_names_round_trip() {
        for s in [Stage::Pretrain, Stage::Refine, Stage::Finetune, Stage::Scratch] {
            assert_eq!(s.to_string().parse::<Stage>().unwrap(), s);
        }
    }
}
