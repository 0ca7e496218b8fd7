//! Supervised training: MAE loss, Adam, epochs, checkpoints.

pub mod adam;
pub mod checkpoint;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;

use crate::config::KvConfig;
use crate::data::{normalize_pair, Dataset, Sample, Split};
use crate::dc::reference_kspace;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::kspace::SamplingMask;
use crate::model::{model_forward, predict, FinalDc, Model, ModelConfig};
use crate::numcore::{Graph, KSpaceGrid, Node, RealImage, Tensor};
use crate::rng::{derive_seed, stream_rng, STREAM_INIT, STREAM_SHUFFLE};

pub const LOSS_LOG_FILE: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "final.mdck";
pub const BEST_CHECKPOINT: &str = "best_val.mdck";
pub const CONFIG_ECHO_FILE: &str = "config.txt";

pub fn epoch_checkpoint_name(epoch: u64) -> String {
    format!("epoch_{epoch:03}.mdck")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub model: ModelConfig,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Where checkpoints, the loss log and the config echo go. `None` keeps
    /// everything in memory.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            epochs: 35,
            batch_size: 2,
            model: ModelConfig::default(),
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("adam epsilon must be positive".into()));
        }
        self.model.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    /// Everything that influences the trajectory, as key=value pairs.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        checkpoint::model_config_to_kv(&self.model, &mut kv);
        kv.set("learning_rate", self.learning_rate);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("seed", self.seed);
        kv.set("beta1", self.beta1);
        kv.set("beta2", self.beta2);
        kv.set("epsilon", self.epsilon);
        kv
    }
}

/// A normalized training pair with its reference k-space.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub name: String,
    pub lr: RealImage,
    pub hr: RealImage,
    pub s0: KSpaceGrid,
    pub mask: SamplingMask,
    pub scale: f64,
}

impl PreparedSample {
    pub fn new(sample: &Sample, mask: &SamplingMask) -> Result<Self> {
        let (lr, hr, scale) = normalize_pair(&sample.lr, &sample.hr)?;
        let s0 = reference_kspace(&lr, mask)?;
        Ok(Self {
            name: sample.name.clone(),
            lr,
            hr,
            s0,
            mask: mask.clone(),
            scale,
        })
    }
}

pub fn prepare_split(dataset: &Dataset, split: Split) -> Result<Vec<PreparedSample>> {
    dataset
        .load_split(split)?
        .iter()
        .map(|s| {
            let (h, w) = s.lr.dims();
            PreparedSample::new(s, &dataset.mask_for(h, w)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: u64,
    pub train_mae: f64,
    pub val_mae: f64,
}

pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_mae,val_mae\n");
    for e in log {
        out.push_str(&format!("{},{:e},{:e}\n", e.epoch, e.train_mae, e.val_mae));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    pub best_val_epoch: u64,
    pub log: Vec<EpochLog>,
}

/// Mean absolute error between a prediction node and a fixed target.
pub fn mae_loss(graph: &mut Graph, pred: Node, target: &RealImage) -> Result<Node> {
    let shape = graph.value(pred).shape().to_vec();
    let expected = [1, target.height(), target.width()];
    if shape != expected {
        return Err(Error::shape("mae prediction", expected, shape));
    }
    let t = graph.constant(Tensor::from_image(target));
    graph.mae(pred, t)
}

fn mean_abs_diff(a: &RealImage, b: &RealImage) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64
}

/// Mean validation MAE in normalized units.
pub fn evaluate_mae(model: &Model, samples: &[PreparedSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += mean_abs_diff(&predict(model, &s.lr, &s.mask)?, &s.hr);
    }
    Ok(total / samples.len() as f64)
}

/// Loss and averaged gradients over one batch, reduced in batch order.
fn batch_gradients(model: &Model, batch: &[&PreparedSample]) -> Result<(f64, Vec<Tensor>)> {
    let mut loss_sum = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for s in batch {
        let mut g = Graph::new();
        let nodes = model.register(&mut g, true);
        let x = g.constant(Tensor::from_image(&s.lr));
        let out = model_forward(&mut g, model, &nodes, x, Some((&s.s0, &s.mask)), FinalDc::Trained)?;
        let loss = mae_loss(&mut g, out, &s.hr)?;
        loss_sum += g.value(loss).item();
        let mut grads = g.backward(loss)?;
        let mut per: Vec<Tensor> = nodes
            .resnet
            .iter()
            .chain(nodes.theta.iter())
            .map(|n| {
                grads
                    .take(*n)
                    .unwrap_or_else(|| Tensor::zeros(g.value(*n).shape()))
            })
            .collect();
        match acc.as_mut() {
            None => acc = Some(std::mem::take(&mut per)),
            Some(a) => {
                for (ai, pi) in a.iter_mut().zip(&per) {
                    ai.add_assign(pi);
                }
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    let grads = acc
        .unwrap_or_default()
        .into_iter()
        .map(|t| t.map(|v| v * inv))
        .collect();
    Ok((loss_sum * inv, grads))
}

fn apply_update(model: &mut Model, grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let mut theta = model.dc.map(|d| Tensor::scalar(d.theta));
    {
        let mut params: Vec<&mut Tensor> = model.resnet.tensors_mut();
        if let Some(t) = theta.as_mut() {
            params.push(t);
        }
        adam_step(&mut params, grads, state, cfg)?;
    }
    if let (Some(dc), Some(t)) = (model.dc.as_mut(), theta) {
        dc.theta = t.item();
    }
    Ok(())
}

fn trainable_refs(model: &Model) -> Vec<Tensor> {
    let mut v: Vec<Tensor> = model.resnet.tensors().into_iter().cloned().collect();
    if let Some(dc) = model.dc {
        v.push(Tensor::scalar(dc.theta));
    }
    v
}

/// Fresh starting state for `cfg`.
pub fn initial_checkpoint(cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let model = Model::new(cfg.model, &mut stream_rng(cfg.seed, STREAM_INIT))?;
    let shapes = trainable_refs(&model);
    Ok(Checkpoint {
        config: cfg.to_kv(),
        adam: AdamState::zeros_like(&shapes.iter().collect::<Vec<_>>()),
        model,
        epoch: 0,
    })
}

fn save_outputs(dir: &Path, name: &str, ck: &Checkpoint) -> Result<()> {
    ck.save(&dir.join(name))
}

/// Train on prepared samples, starting from `start` (a fresh
/// [`initial_checkpoint`] or a loaded one), until `cfg.epochs` epochs are
/// complete.
///
/// Each epoch shuffles the training set with a generator derived from
/// `(seed, epoch)`, so resuming from a checkpoint continues the exact
/// trajectory of an uninterrupted run.
pub fn train_from(
    train: &[PreparedSample],
    val: &[PreparedSample],
    cfg: &TrainConfig,
    start: Checkpoint,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::InvalidArgument("validation split is empty".into()));
    }
    if start.model.config != cfg.model {
        return Err(Error::InvalidArgument(format!(
            "checkpoint model {:?} does not match requested {:?}",
            start.model.config, cfg.model
        )));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        write_atomic(&dir.join(CONFIG_ECHO_FILE), cfg.to_kv().render().as_bytes())?;
    }

    let adam_cfg = cfg.adam();
    let shuffle_seed = derive_seed(cfg.seed, STREAM_SHUFFLE);
    let Checkpoint { mut model, mut adam, epoch: done, .. } = start;
    let mut log = Vec::new();
    let mut best: Option<(f64, u64)> = None;

    for epoch in done + 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(shuffle_seed, epoch));
        let mut loss_total = 0.0;
        let mut n_batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradients(&model, &batch)?;
            if !loss.is_finite() || grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss { epoch: epoch as usize, batch: b + 1 });
            }
            apply_update(&mut model, &grads, &mut adam, &adam_cfg)?;
            loss_total += loss;
            n_batches += 1;
        }
        let train_mae = loss_total / n_batches as f64;
        let val_mae = evaluate_mae(&model, val)?;
        if !val_mae.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epoch as usize, batch: 0 });
        }
        log.push(EpochLog { epoch, train_mae, val_mae });

        let ck = Checkpoint {
            config: cfg.to_kv(),
            model: model.clone(),
            adam: adam.clone(),
            epoch,
        };
        let improved = best.is_none_or(|(v, _)| val_mae < v);
        if improved {
            best = Some((val_mae, epoch));
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            save_outputs(dir, &epoch_checkpoint_name(epoch), &ck)?;
            if improved {
                save_outputs(dir, BEST_CHECKPOINT, &ck)?;
            }
            write_atomic(&dir.join(LOSS_LOG_FILE), loss_log_csv(&log).as_bytes())?;
        }
    }

    let final_checkpoint = Checkpoint {
        config: cfg.to_kv(),
        model,
        adam,
        epoch: cfg.epochs.max(done),
    };
    if let Some(dir) = &cfg.checkpoint_dir {
        save_outputs(dir, FINAL_CHECKPOINT, &final_checkpoint)?;
    }
    Ok(TrainOutcome {
        final_checkpoint,
        best_val_epoch: best.map_or(done, |(_, e)| e),
        log,
    })
}

/// Train a fresh model on the dataset's train split, validating on `val`.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let train_set = prepare_split(dataset, Split::Train)?;
    let val_set = prepare_split(dataset, Split::Val)?;
    train_from(&train_set, &val_set, cfg, initial_checkpoint(cfg)?)
}
