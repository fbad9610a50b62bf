//! Two-phase optimization: Gumbel-selected pre-training on abstract triples
//! and softmax-mixed fine-tuning on treebank pairs.
//!
//! Batches are assembled as per-example graphs whose gradients are summed and
//! divided by the batch size, which is the same objective as padded batching
//! with masked loss and avoids padding altogether.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamKey, Rng, Tape, Var};
use crate::error::{Error, Result};
use crate::memory::draw_noise;
use crate::model::{lm_loss_var, Example, Lmpm, SelectPlan, Seq2Seq};
use crate::params::{ParamGroup, BACKBONE_GROUP, MEMORY_GROUP};

/// Sub-streams of the run seed used by training; init uses 1 to 3.
pub const ORDER_STREAM: u64 = 4;
pub const NOISE_STREAM: u64 = 5;
pub const SUBSET_STREAM: u64 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub temperature_start: f64,
    pub temperature_end: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub no_lpp: bool,
    pub no_memory: bool,
    pub no_abstraction: bool,
    pub freeze_memory: bool,
    pub bow_in_finetune: bool,
    pub pretrain_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 8,
            lr: 1e-3,
            temperature_start: 1.0,
            temperature_end: 1.0,
            clip_norm: 1.0,
            seed: 0,
            no_lpp: false,
            no_memory: false,
            no_abstraction: false,
            freeze_memory: false,
            bow_in_finetune: false,
            pretrain_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("train.lr must be a positive number".into()));
        }
        if !(self.temperature_start > 0.0 && self.temperature_end > 0.0) {
            return Err(Error::Config("train.temperature_start and train.temperature_end must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("train.clip_norm must be positive".into()));
        }
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction <= 1.0) {
            return Err(Error::Config("train.pretrain_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Linear schedule from `temperature_start` to `temperature_end`.
    pub fn temperature_at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.temperature_start;
        }
        let f = step as f64 / (total - 1) as f64;
        self.temperature_start + (self.temperature_end - self.temperature_start) * f
    }
}

/// One row per optimizer step; each value is the batch mean.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub rows: Vec<LossRow>,
    pub steps_per_epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub lm: f64,
    pub bow: f64,
    pub total: f64,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lm_loss,bow_loss,total\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.step, r.lm, r.bow, r.total);
        }
        s
    }

    /// Mean total loss per epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        if self.steps_per_epoch == 0 {
            return Vec::new();
        }
        self.rows
            .chunks(self.steps_per_epoch)
            .map(|c| c.iter().map(|r| r.total).sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn initial(&self) -> Option<f64> {
        self.epoch_means().first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epoch_means().last().copied()
    }
}

/// Adam with β = (0.9, 0.999) and ε = 1e-8.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    lr: f64,
    t: u64,
    moments: HashMap<ParamKey, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            t: 0,
            moments: HashMap::new(),
        }
    }

    /// Applies one update to every key present in `grads`.
    pub fn step<M: Trainable + ?Sized>(&mut self, grads: &Grads, model: &mut M) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for (key, g) in grads.iter() {
            let (m, v) = self
                .moments
                .entry(*key)
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let w = model
                .group_mut(key.group)
                .tensor_at_mut(key.index)
                .expect("gradient for unknown parameter")
                .data_mut();
            for i in 0..g.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
            }
        }
    }
}

/// Accumulated gradients keyed by parameter, in key order.
#[derive(Clone, Debug, Default)]
pub struct Grads {
    entries: Vec<(ParamKey, Vec<f64>)>,
}

impl Grads {
    fn accumulate(&mut self, tape: &Tape, out: Var, frozen: &[u16]) -> Result<()> {
        let g = tape.backward(out)?;
        for (key, var) in tape.params() {
            if frozen.contains(&key.group) {
                continue;
            }
            let Some(d) = g.wrt(var) else { continue };
            match self.entries.binary_search_by(|(k, _)| k.cmp(&key)) {
                Ok(i) => self.entries[i].1.iter_mut().zip(d).for_each(|(a, b)| *a += b),
                Err(i) => self.entries.insert(i, (key, d.to_vec())),
            }
        }
        Ok(())
    }

    fn scale(&mut self, s: f64) {
        for (_, g) in &mut self.entries {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max`.
    pub fn clip(&mut self, max: f64) {
        let n = self.global_norm();
        if n > max {
            self.scale(max / n);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &(ParamKey, Vec<f64>)> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        self.entries.iter().map(|(k, _)| *k)
    }
}

/// Anything whose parameter groups the optimizer can write to.
pub trait Trainable {
    fn group_mut(&mut self, group: u16) -> &mut ParamGroup;
}

impl Trainable for Lmpm {
    fn group_mut(&mut self, group: u16) -> &mut ParamGroup {
        let [b, m, w] = self.groups_mut();
        match group {
            BACKBONE_GROUP => b,
            MEMORY_GROUP => m,
            _ => w,
        }
    }
}

impl Trainable for ParamGroup {
    fn group_mut(&mut self, _group: u16) -> &mut ParamGroup {
        self
    }
}

impl Trainable for Seq2Seq {
    fn group_mut(&mut self, group: u16) -> &mut ParamGroup {
        debug_assert_eq!(group, BACKBONE_GROUP);
        self.params_mut()
    }
}

/// Per-step context handed to the loss closure.
pub struct StepCtx<'a> {
    pub temperature: f64,
    pub noise: &'a mut Rng,
}

pub struct Losses {
    pub total: Var,
    pub lm: Var,
    pub bow: Option<Var>,
}

/// Shared optimization loop. `loss` builds one example's graph.
pub fn run<M, F>(model: &mut M, examples: &[Example], cfg: &TrainConfig, frozen: &[u16], mut loss: F) -> Result<LossCurve>
where
    M: Trainable,
    F: FnMut(&M, &mut Tape, &Example, &mut StepCtx) -> Result<Losses>,
{
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut order_rng = Rng::stream(cfg.seed, ORDER_STREAM);
    let mut noise_rng = Rng::stream(cfg.seed, NOISE_STREAM);
    let mut adam = Adam::new(cfg.lr);
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut curve = LossCurve {
        rows: Vec::with_capacity(total_steps),
        steps_per_epoch,
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let temperature = cfg.temperature_at(step, total_steps);
            let mut grads = Grads::default();
            let (mut lm_sum, mut bow_sum, mut tot_sum) = (0.0, 0.0, 0.0);
            for &i in batch {
                let mut tape = Tape::new();
                let mut ctx = StepCtx {
                    temperature,
                    noise: &mut noise_rng,
                };
                let l = loss(model, &mut tape, &examples[i], &mut ctx)?;
                lm_sum += tape.value(l.lm).data()[0];
                bow_sum += l.bow.map_or(0.0, |b| tape.value(b).data()[0]);
                tot_sum += tape.value(l.total).data()[0];
                grads.accumulate(&tape, l.total, frozen)?;
            }
            let n = batch.len() as f64;
            grads.scale(1.0 / n);
            grads.clip(cfg.clip_norm);
            adam.step(&grads, model);
            let row = LossRow {
                step,
                lm: lm_sum / n,
                bow: bow_sum / n,
                total: tot_sum / n,
            };
            if !row.total.is_finite() {
                return Err(Error::Input(format!("loss became non-finite at step {step}")));
            }
            curve.rows.push(row);
            step += 1;
        }
    }
    Ok(curve)
}

/// Phase 1: Gumbel selection and ℒ_LM + ℒ_BOW, or bypass and ℒ_LM alone
/// under `no_memory`.
pub fn pretrain(model: &mut Lmpm, examples: &[Example], cfg: &TrainConfig) -> Result<LossCurve> {
    if cfg.no_lpp {
        return Err(Error::Config("pretraining is disabled by no_lpp".into()));
    }
    if examples.is_empty() {
        return Err(Error::Config("pretraining dataset is empty".into()));
    }
    let slots = model.config().slots;
    let bypass = cfg.no_memory;
    run(model, examples, cfg, &[], |m, tape, ex, ctx| {
        let plan = if bypass {
            SelectPlan::Bypass
        } else {
            SelectPlan::Gumbel {
                temperature: ctx.temperature,
                noise: draw_noise(ctx.noise, slots),
            }
        };
        let l = m.step_loss(tape, ex, &plan, !bypass)?;
        Ok(Losses {
            total: l.total,
            lm: l.lm,
            bow: l.bow,
        })
    })
}

/// Phase 2: softmax mixing and ℒ_LM (+ ℒ_BOW when enabled).
pub fn finetune(model: &mut Lmpm, examples: &[Example], cfg: &TrainConfig) -> Result<LossCurve> {
    let plan = if cfg.no_memory {
        SelectPlan::Bypass
    } else {
        SelectPlan::Softmax
    };
    let frozen: &[u16] = if cfg.freeze_memory && !cfg.no_memory {
        &[MEMORY_GROUP]
    } else {
        &[]
    };
    let bow = cfg.bow_in_finetune;
    run(model, examples, cfg, frozen, |m, tape, ex, _| {
        let l = m.step_loss(tape, ex, &plan, bow)?;
        Ok(Losses {
            total: l.total,
            lm: l.lm,
            bow: l.bow,
        })
    })
}

/// The memory-free reference: same backbone, same loop, nothing else.
pub fn train_seq2seq(model: &mut Seq2Seq, examples: &[Example], cfg: &TrainConfig) -> Result<LossCurve> {
    run(model, examples, cfg, &[], |m, tape, ex, _| {
        let enc = m.encode_var(tape, &ex.input)?;
        let logits = m.decode_var(tape, enc.hidden, &ex.decoder_input, None)?;
        let lm = lm_loss_var(tape, logits, &ex.target)?;
        Ok(Losses {
            total: lm,
            lm,
            bow: None,
        })
    })
}

/// Exactly ⌈fraction·n⌉ indices chosen by a seeded shuffle, returned in
/// input order.
pub fn select_fraction(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) || fraction.is_nan() {
        return Err(Error::Config("fraction must lie in [0, 1]".into()));
    }
    let k = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let k = k.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::stream(seed, SUBSET_STREAM).shuffle(&mut idx);
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}
