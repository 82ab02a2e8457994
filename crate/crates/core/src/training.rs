//! Loss, optimizer and the epoch loop with early stopping.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::SamplePair;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_maps, Evaluation};
use crate::network::{encode_checkpoint, Mode, ModelGraph, ParamStore, MAX_SEED};
use crate::rng::{self, Stream};
use crate::tensor::Tensor4;

/// Predictions are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean per-pixel binary cross-entropy and its gradient with respect to `pred`.
pub fn bce_loss(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "loss: prediction {} vs target {}",
            pred.shape(),
            target.shape()
        )));
    }
    if let Some(v) = target.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation(format!("loss target contains non-binary value {v}")));
    }
    let n = pred.data().len() as f64;
    let mut grad = pred.clone();
    let mut total = 0.0;
    for (g, (&p, &y)) in grad.data_mut().iter_mut().zip(pred.data().iter().zip(target.data())) {
        let q = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        *g = if q != p { 0.0 } else { (-y / q + (1.0 - y) / (1.0 - q)) / n };
    }
    Ok((total / n, grad))
}

/// Fraction of pixels where `pred >= 0.5` agrees with the target.
pub fn pixel_accuracy(pred: &Tensor4, target: &Tensor4) -> f64 {
    let hits = pred
        .data()
        .iter()
        .zip(target.data())
        .filter(|(&p, &y)| (p >= 0.5) == (y == 1.0))
        .count();
    hits as f64 / pred.data().len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            max_epochs: 50,
            patience: 10,
            min_delta: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} {b} outside (0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.seed > MAX_SEED {
            return bad(format!("seed {} exceeds {MAX_SEED}", self.seed));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!("min_delta {} must be non-negative", self.min_delta));
        }
        Ok(())
    }
}

/// One Adam update with bias correction at step `t >= 1`; gradients are zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, t: u64, cfg: &TrainConfig) -> Result<()> {
    if t == 0 {
        return Err(Error::Usage("Adam step index starts at 1".into()));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for p in store.params_mut() {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            let m = b1 * p.adam_m[i] + (1.0 - b1) * g;
            let v = b2 * p.adam_v[i] + (1.0 - b2) * g * g;
            p.adam_m[i] = m;
            p.adam_v[i] = v;
            p.value[i] -= cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.epsilon);
        }
        p.zero_grad();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// Starts at 1.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub is_best: bool,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,is_best";

pub fn epoch_csv(logs: &[EpochLog]) -> String {
    let mut s = format!("{EPOCH_CSV_HEADER}\n");
    for l in logs {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            l.epoch,
            l.train_loss,
            l.train_accuracy,
            l.val_loss,
            l.val_accuracy,
            u8::from(l.is_best)
        )
        .unwrap();
    }
    s
}

/// Stops once `patience` consecutive epochs fail to beat the best
/// validation loss by more than `min_delta`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: Option<f64>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: None,
            stale: 0,
        }
    }

    /// Records a validation loss; returns whether it is a new best.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        let improved = self.best.map_or(true, |b| val_loss < b - self.min_delta);
        if improved {
            self.best = Some(val_loss);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// Losses and accuracies of one finished epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochResult {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// One epoch of work plus hooks for the schedule in [`run_schedule`].
pub trait EpochRunner {
    fn run_epoch(&mut self, epoch: usize) -> Result<EpochResult>;

    /// Called after an epoch that improved on the best validation loss.
    fn on_best(&mut self, _log: &EpochLog) -> Result<()> {
        Ok(())
    }

    /// Called after every epoch with the log so far.
    fn on_epoch_end(&mut self, _logs: &[EpochLog]) -> Result<()> {
        Ok(())
    }
}

/// Runs epochs `1..=max_epochs` until the stopping rule fires.
pub fn run_schedule(max_epochs: usize, mut stopper: EarlyStopping, runner: &mut impl EpochRunner) -> Result<Vec<EpochLog>> {
    let mut logs = Vec::new();
    for e in 1..=max_epochs {
        let r = runner.run_epoch(e)?;
        let is_best = stopper.observe(r.val_loss);
        let log = EpochLog {
            epoch: e,
            train_loss: r.train_loss,
            train_accuracy: r.train_accuracy,
            val_loss: r.val_loss,
            val_accuracy: r.val_accuracy,
            is_best,
        };
        if is_best {
            runner.on_best(&log)?;
        }
        logs.push(log);
        runner.on_epoch_end(&logs)?;
        if stopper.should_stop() {
            break;
        }
    }
    Ok(logs)
}

/// Anything that maps an image batch to probability maps.
pub trait Segmenter {
    fn segment(&self, batch: &Tensor4) -> Result<Tensor4>;
}

impl Segmenter for ModelGraph {
    fn segment(&self, batch: &Tensor4) -> Result<Tensor4> {
        self.predict(batch)
    }
}

/// Stacks images and masks of `items` into two batches.
pub fn stack_pairs(items: &[&SamplePair]) -> Result<(Tensor4, Tensor4)> {
    let images: Vec<&Tensor4> = items.iter().map(|p| &p.image).collect();
    let masks: Vec<&Tensor4> = items.iter().map(|p| &p.mask).collect();
    Ok((Tensor4::stack(&images)?, Tensor4::stack(&masks)?))
}

/// Pixel-weighted mean loss and accuracy over `set` in inference mode.
pub fn validation_pass<S: Segmenter>(model: &S, set: &[SamplePair], batch_size: usize) -> Result<(f64, f64)> {
    let (mut loss, mut hits, mut pixels) = (0.0, 0.0, 0.0);
    for chunk in set.chunks(batch_size.max(1)) {
        let refs: Vec<&SamplePair> = chunk.iter().collect();
        let (x, y) = stack_pairs(&refs)?;
        let p = model.segment(&x)?;
        let n = p.data().len() as f64;
        loss += bce_loss(&p, &y)?.0 * n;
        hits += pixel_accuracy(&p, &y) * n;
        pixels += n;
    }
    Ok((loss / pixels, hits / pixels))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_checkpoint: PathBuf,
    pub logs: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn best(&self) -> Option<&EpochLog> {
        self.logs.iter().filter(|l| l.is_best).last()
    }
}

pub const BEST_CHECKPOINT: &str = "best.insg";
pub const EPOCH_CSV: &str = "epochs.csv";

struct GraphRunner<'a> {
    graph: &'a mut ModelGraph,
    train_set: &'a [SamplePair],
    val_set: &'a [SamplePair],
    cfg: &'a TrainConfig,
    step: u64,
    best_path: PathBuf,
    csv_path: PathBuf,
}

impl EpochRunner for GraphRunner<'_> {
    fn run_epoch(&mut self, epoch: usize) -> Result<EpochResult> {
        let cfg = self.cfg;
        let mut order: Vec<usize> = (0..self.train_set.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, Stream::Shuffle, epoch as u64));
        let (mut loss, mut hits, mut pixels) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&SamplePair> = chunk.iter().map(|&i| &self.train_set[i]).collect();
            let (x, y) = stack_pairs(&refs)?;
            let p = self.graph.forward(&x, Mode::Train)?;
            let (l, grad) = bce_loss(&p, &y)?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            self.graph.backward(&grad)?;
            self.step += 1;
            adam_step(self.graph.store_mut(), self.step, cfg)?;
            let n = p.data().len() as f64;
            loss += l * n;
            hits += pixel_accuracy(&p, &y) * n;
            pixels += n;
        }
        let (val_loss, val_accuracy) = validation_pass(&*self.graph, self.val_set, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        Ok(EpochResult {
            train_loss: loss / pixels,
            train_accuracy: hits / pixels,
            val_loss,
            val_accuracy,
        })
    }

    fn on_best(&mut self, _log: &EpochLog) -> Result<()> {
        std::fs::write(&self.best_path, encode_checkpoint(self.graph)).map_err(|e| Error::io(&self.best_path, e))
    }

    fn on_epoch_end(&mut self, logs: &[EpochLog]) -> Result<()> {
        std::fs::write(&self.csv_path, epoch_csv(logs)).map_err(|e| Error::io(&self.csv_path, e))
    }
}

/// Trains in place. Writes `best.insg` whenever validation improves and
/// rewrites `epochs.csv` after every epoch.
pub fn train(
    graph: &mut ModelGraph,
    train_set: &[SamplePair],
    val_set: &[SamplePair],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty sets, got {} train and {} validation samples",
            train_set.len(),
            val_set.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut runner = GraphRunner {
        graph,
        train_set,
        val_set,
        cfg,
        step: 0,
        best_path: out_dir.join(BEST_CHECKPOINT),
        csv_path: out_dir.join(EPOCH_CSV),
    };
    let logs = run_schedule(cfg.max_epochs, EarlyStopping::new(cfg.patience, cfg.min_delta), &mut runner)?;
    Ok(TrainOutcome {
        best_checkpoint: runner.best_path,
        logs,
    })
}

/// Inference over `dataset`, thresholded at `threshold` for the confusion-based metrics.
pub fn evaluate<S: Segmenter>(model: &S, dataset: &[SamplePair], threshold: f64, batch_size: usize) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    let mut probs = Vec::with_capacity(dataset.len());
    for chunk in dataset.chunks(batch_size.max(1)) {
        let refs: Vec<&SamplePair> = chunk.iter().collect();
        let (x, _) = stack_pairs(&refs)?;
        let p = model.segment(&x)?;
        probs.extend((0..chunk.len()).map(|i| p.item(i)));
    }
    let truths: Vec<Tensor4> = dataset.iter().map(|p| p.mask.clone()).collect();
    evaluate_maps(&probs, &truths, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn half_probability_costs_ln2() {
        let p = Tensor4::filled(Shape4::new(1, 2, 2, 1), 0.5);
        let y = Tensor4::filled(Shape4::new(1, 2, 2, 1), 1.0);
        let (l, _) = bce_loss(&p, &y).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&p, &p).is_err());
    }

    #[test]
    fn adam_rejects_step_zero() {
        let mut s = ParamStore::new(0);
        assert!(matches!(adam_step(&mut s, 0, &TrainConfig::default()), Err(Error::Usage(_))));
    }

    struct Flat;

    impl EpochRunner for Flat {
        fn run_epoch(&mut self, _: usize) -> Result<EpochResult> {
            Ok(EpochResult {
                train_loss: 1.0,
                train_accuracy: 0.5,
                val_loss: 1.0,
                val_accuracy: 0.5,
            })
        }
    }

    #[test]
    fn flat_loss_stops_after_patience() {
        let logs = run_schedule(100, EarlyStopping::new(10, 1e-4), &mut Flat).unwrap();
        assert_eq!(logs.len(), 11);
        assert!(logs[0].is_best && logs[1..].iter().all(|l| !l.is_best));
    }
}
