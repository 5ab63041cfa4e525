use std::f64::consts::PI;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{PreparedData, Sample};
use super::decoder::{decoder_nll_backward, FusionInput};
use super::model::ToyFusionModel;
use super::params::FusionParams;
use crate::error::{Error, Result};
use crate::tensorfile::ParamSet;

/// Hard ceiling on `max_epochs`.
pub const MAX_EPOCHS: usize = 20;

/// Learning rate used for the desk-scale model in place of the large-model
/// default.
pub const TOY_LEARNING_RATE: f64 = 3e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Peak rate, decayed to zero along a half cosine over all steps.
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without a new best
    /// validation accuracy.
    pub patience: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Keep provider-initialised embedding rows fixed.
    pub freeze_lexical: bool,
    /// Generation length limit used for validation.
    pub max_gen_len: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            max_epochs: MAX_EPOCHS,
            patience: 3,
            seed: 0,
            batch_size: 16,
            freeze_lexical: true,
            max_gen_len: 16,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Defaults with the desk-scale learning rate.
    pub fn toy() -> Self {
        Self { learning_rate: TOY_LEARNING_RATE, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.max_epochs == 0 || self.max_epochs > MAX_EPOCHS {
            return bad(format!("max_epochs must be in 1..={MAX_EPOCHS}, got {}", self.max_epochs));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad(format!("patience must be in 1..=max_epochs, got {}", self.patience));
        }
        if self.batch_size == 0 || self.max_gen_len == 0 {
            return bad("batch_size and max_gen_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.adam_eps.is_nan()
            || self.adam_eps <= 0.0
        {
            return bad("adam needs betas in [0, 1) and eps > 0".into());
        }
        Ok(())
    }

    /// Sets one field by name. Returns `Ok(false)` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "learning_rate" | "lr" => self.learning_rate = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "freeze_lexical" => self.freeze_lexical = num(key, value)?,
            "max_gen_len" => self.max_gen_len = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Applies a `key = value` file over `self` and validates the result.
    pub fn apply_kv(mut self, text: &str) -> Result<Self> {
        for (k, v) in parse_kv(text)? {
            if !self.set(&k, &v)? {
                return Err(Error::InvalidConfig(format!("unknown training key {k:?}")));
            }
        }
        self.validate()?;
        Ok(self)
    }

    /// Rate at optimizer step `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if total == 0 {
            return self.learning_rate;
        }
        0.5 * self.learning_rate * (1.0 + (PI * step as f64 / total as f64).cos())
    }
}

/// `key = value` pairs, one per line. Blank lines and lines starting with
/// `#` are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("config line {}: expected key = value, got {raw:?}", n + 1)))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean teacher-forced loss over the training samples of this epoch.
    pub train_loss: f64,
    pub val_acc: f64,
    /// Rate of the epoch's first step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Training ended on the patience rule rather than the epoch limit.
    pub stopped_early: bool,
}

impl TrainLog {
    /// CSV with columns `epoch, train_loss, val_acc, lr`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fraction of samples whose generated answer equals the reference answer.
pub fn answer_accuracy(model: &ToyFusionModel, samples: &[Sample], max_len: usize) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for s in samples {
        let g = model.generate(&input_of(s), max_len)?;
        if !g.missing_sep && g.answer == s.answer {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

fn input_of(s: &Sample) -> FusionInput<'_> {
    FusionInput { kg: s.kg.as_ref(), patches: &s.patches, prompt: &s.prompt }
}

struct Adam {
    m: FusionParams,
    v: FusionParams,
    t: i32,
}

impl Adam {
    fn new(p: &FusionParams) -> Self {
        Self { m: p.zeros_like(), v: p.zeros_like(), t: 0 }
    }

    fn step(&mut self, params: &mut FusionParams, grads: &FusionParams, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let tensors =
            params.tensors_mut().into_iter().zip(self.m.tensors_mut()).zip(self.v.tensors_mut()).zip(grads.tensors());
        for ((((_, p), (_, m)), (_, v)), (_, _, g)) in tensors {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Trains `model` in place and leaves it at the best validation epoch.
///
/// Each epoch visits the training samples in a seeded shuffle, in batches of
/// `batch_size` averaged gradients. `on_epoch` sees every log row as it is
/// produced.
pub fn train_with<F>(
    model: &mut ToyFusionModel,
    data: &PreparedData,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainLog>
where
    F: FnMut(&EpochLog),
{
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::InvalidConfig("training needs non-empty train and validation splits".into()));
    }
    let frozen: Vec<usize> = if cfg.freeze_lexical {
        model.lexical.iter().enumerate().filter(|(_, &l)| l).map(|(i, _)| i).collect()
    } else {
        Vec::new()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let mut grads = model.params.zeros_like();
    let batches = data.train.len().div_ceil(cfg.batch_size);
    let total = cfg.max_epochs * batches;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut losses = vec![0.0; data.train.len()];
    let mut log = TrainLog { best_val_acc: f64::NEG_INFINITY, ..TrainLog::default() };
    let mut best = model.params.clone();
    let mut stale = 0;
    let mut step = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let epoch_lr = cfg.lr_at(step, total);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grads.fill(0.0);
            let w = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let s = &data.train[i];
                let loss = decoder_nll_backward(&model.params, &input_of(s), &s.target, &mut grads, w)?;
                if !loss.is_finite() {
                    return Err(Error::DivergedLoss { epoch, step: b, loss });
                }
                losses[i] = loss;
            }
            for &r in &frozen {
                grads.embed.row_mut(r).fill(0.0);
            }
            adam.step(&mut model.params, &grads, cfg.lr_at(step, total), cfg);
            step += 1;
            if !model.params.is_finite() {
                return Err(Error::DivergedLoss { epoch, step: b, loss: f64::NAN });
            }
        }
        // Summed in dataset order so the value does not depend on the shuffle.
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let val_acc = answer_accuracy(model, &data.val, cfg.max_gen_len)?;
        let row = EpochLog { epoch, train_loss, val_acc, lr: epoch_lr };
        on_epoch(&row);
        log.epochs.push(row);
        if val_acc > log.best_val_acc {
            log.best_val_acc = val_acc;
            log.best_epoch = epoch;
            best.clone_from(&model.params);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    model.params = best;
    Ok(log)
}

pub fn train(model: &mut ToyFusionModel, data: &PreparedData, cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(model, data, cfg, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::dataset::{dataset_vocab, make_planted_dataset, PlantedDatasetConfig};
    use crate::fusion::params::FusionConfig;
    use crate::kg::SynthConfig;

    fn tiny(n_train: usize, n_val: usize) -> (ToyFusionModel, PreparedData) {
        let sg = SynthConfig::new(2, 300, 6, 700).with_planted(5, 12, 12).generate().unwrap();
        let cfg = PlantedDatasetConfig { img_dim: 3, ..PlantedDatasetConfig::default() };
        let d = make_planted_dataset(1, &sg.graph, &sg.planted, n_train, n_val, &cfg).unwrap();
        let vocab = dataset_vocab(&d);
        let mut fc = FusionConfig::new(8, 3);
        fc.layers = 1;
        fc.max_positions = 16;
        let model = ToyFusionModel::new(&fc, vocab.clone(), 4).unwrap();
        (model, PreparedData::prepare(&d, &vocab, None).unwrap())
    }

    #[test]
    fn zero_rate_changes_nothing_and_triggers_patience() {
        let (mut m, data) = tiny(10, 4);
        let before = m.params.clone();
        let cfg = TrainConfig { learning_rate: 0.0, batch_size: 3, ..TrainConfig::default() };
        let log = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(m.params, before);
        let bits: Vec<u64> = log.epochs.iter().map(|e| e.train_loss.to_bits()).collect();
        assert!(bits.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(log.epochs.len(), 1 + cfg.patience);
        assert!(log.stopped_early);
        assert_eq!(log.best_epoch, 1);
    }

    #[test]
    fn epoch_cap_is_enforced() {
        let (mut m, data) = tiny(4, 2);
        let cfg = TrainConfig { learning_rate: 0.0, patience: MAX_EPOCHS, ..TrainConfig::default() };
        let log = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(log.epochs.len(), MAX_EPOCHS);
        assert!(!log.stopped_early);
        assert!(TrainConfig { max_epochs: MAX_EPOCHS + 1, ..cfg }.validate().is_err());
        assert!(TrainConfig { patience: 5, max_epochs: 4, ..cfg }.validate().is_err());
    }

    #[test]
    fn nan_parameters_raise_diverged_loss() {
        let (mut m, data) = tiny(4, 2);
        m.params.blocks[0].w_q[[0, 0]] = f64::NAN;
        let err = train(&mut m, &data, &TrainConfig::toy()).unwrap_err();
        assert!(matches!(err, Error::DivergedLoss { epoch: 1, step: 0, .. }), "{err}");
    }

    #[test]
    fn frozen_rows_stay_fixed_and_others_move() {
        let (m0, data) = tiny(8, 2);
        let p = crate::embed::HashEmbedder::new(8, 3).unwrap();
        let mut m = m0.with_lexical_embeddings(&p).unwrap();
        let before = m.params.clone();
        let cfg = TrainConfig { max_epochs: 2, patience: 2, ..TrainConfig::toy() };
        train(&mut m, &data, &cfg).unwrap();
        for (r, &lex) in m.lexical.iter().enumerate() {
            assert_eq!(lex, m.params.embed.row(r) == before.embed.row(r), "row {r}");
        }
        assert_ne!(m.params.w_img, before.w_img);
    }

    #[test]
    fn training_is_deterministic() {
        let (m0, data) = tiny(8, 3);
        let cfg = TrainConfig { max_epochs: 3, patience: 3, ..TrainConfig::toy() };
        let (mut a, mut b) = (m0.clone(), m0);
        let la = train(&mut a, &data, &cfg).unwrap();
        let lb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a, b);
    }

    #[test]
    fn cosine_schedule_and_kv_config() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0, 10), 2e-5);
        assert!((cfg.lr_at(5, 10) - 1e-5).abs() < 1e-18);
        assert!(cfg.lr_at(10, 10).abs() < 1e-20);
        let c = TrainConfig::default().apply_kv("# toy\nlr = 1e-3\n\nseed=7\nfreeze_lexical = false\n").unwrap();
        assert_eq!((c.learning_rate, c.seed, c.freeze_lexical), (1e-3, 7, false));
        assert!(TrainConfig::default().apply_kv("nope = 1").is_err());
        assert!(TrainConfig::default().apply_kv("patience = 30").is_err());
    }

    #[test]
    fn log_csv_has_expected_columns() {
        let log = TrainLog {
            epochs: vec![EpochLog { epoch: 1, train_loss: 2.5, val_acc: 0.25, lr: 1e-3 }],
            ..TrainLog::default()
        };
        let mut out = Vec::new();
        log.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "epoch,train_loss,val_acc,lr\n1,2.5,0.25,0.001\n");
    }
}
