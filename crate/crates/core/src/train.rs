//! Adam, the training loop and dataset evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{augment, load_sample, DatasetManifest, ManifestEntry, Sample, Split};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::io;
use crate::loss::LossConfig;
use crate::metrics::{self, MetricsReport, CSV_HEADER};
use crate::net::{init_params, network_input, NetConfig, NetParams};
use crate::params::ParamStore;
use crate::tensor::AlphaMatte;
use crate::trimap::TrimapConfig;

/// Longest edge fed to the network at evaluation time.
pub const MAX_EDGE: usize = 1500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Attention,
    NoAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Alpha-loss weight; see [`LossConfig`].
    pub gamma: f64,
    pub charbonnier_eps: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Square training crop; `None` trains on whole samples without
    /// augmentation.
    pub crop: Option<usize>,
    /// Keep the attention group-norm scale and shift at their initial values.
    pub freeze_norm: bool,
    pub stages: usize,
    pub base_channels: usize,
    pub convs_per_stage: usize,
    /// Used to re-derive trimaps after rescaling augmentation.
    pub trimap: TrimapConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 4,
            epochs: 50,
            gamma: 0.5,
            charbonnier_eps: crate::loss::DEFAULT_CHARBONNIER_EPS,
            seed: 0,
            ablation: Ablation::Attention,
            crop: Some(64),
            freeze_norm: false,
            stages: net.stages,
            base_channels: net.base_channels,
            convs_per_stage: net.convs_per_stage,
            trimap: TrimapConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.crop == Some(0) {
            return bad("crop must be at least 1".into());
        }
        self.loss().validate()?;
        self.trimap.validate()?;
        self.net().validate()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            eps: self.charbonnier_eps,
        }
    }

    /// Network configuration implied by the ablation switch and seed.
    pub fn net(&self) -> NetConfig {
        NetConfig {
            stages: self.stages,
            base_channels: self.base_channels,
            convs_per_stage: self.convs_per_stage,
            seed: self.seed,
            attention: self.ablation == Ablation::Attention,
            skip_connections: true,
        }
    }
}

/// First and second moment estimates, one buffer per parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter array.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::InvalidArgument(format!(
            "expected gradients for {} parameter arrays, got {}",
            store.len(),
            grads.len()
        )));
    }
    for ((name, t), g) in store.iter().zip(grads) {
        if g.len() != t.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient for {name} has {} entries, parameter has {}",
                g.len(),
                t.len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in store
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub alpha: f64,
    pub comp: f64,
}

/// Losses and per-parameter gradients for one sample.
#[derive(Clone, Debug)]
pub struct SampleGrad {
    pub losses: StepLosses,
    pub grads: Vec<Vec<f64>>,
}

/// Loss of the fused matte over the full image, with gradients for every
/// trainable parameter (zeros for frozen ones).
pub fn sample_gradients(
    params: &NetParams,
    sample: &Sample,
    loss: &LossConfig,
    frozen: &[bool],
) -> Result<SampleGrad> {
    let mut g = Graph::new();
    let bound = params.store.bind(&mut g, true, frozen);
    let x = g.constant(network_input(&sample.image, &sample.trimap)?);
    let out = params.forward_graph(&mut g, &bound, x)?;
    let fused = g.fuse_trimap(out.raw_alpha, &sample.trimap)?;
    let alpha = g.charbonnier(fused, &sample.gt_alpha, loss.eps)?;
    let comp_img = g.composite(fused, &sample.gt_fg, &sample.gt_bg)?;
    let comp = g.charbonnier(comp_img, &sample.image, loss.eps)?;
    let total = g.weighted_sum(&[(alpha, loss.gamma), (comp, 1.0 - loss.gamma)])?;
    g.backward(total)?;
    let grads = bound
        .nodes()
        .iter()
        .zip(params.store.tensors())
        .map(|(&id, t)| {
            if g.requires_grad(id) {
                g.grad(id).map(<[f64]>::to_vec)
            } else {
                Ok(vec![0.0; t.len()])
            }
        })
        .collect::<Result<_>>()?;
    Ok(SampleGrad {
        losses: StepLosses {
            total: g.value(total).item()?,
            alpha: g.value(alpha).item()?,
            comp: g.value(comp).item()?,
        },
        grads,
    })
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub losses: StepLosses,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "epoch,step,total_loss,alpha_loss,comp_loss";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.step, self.losses.total, self.losses.alpha, self.losses.comp
        )
    }
}

/// In-memory optimizer state: network, Adam moments and the frozen mask.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub params: NetParams,
    pub adam: AdamState,
    frozen: Vec<bool>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(&cfg.net())?;
        Ok(Self::from_params(cfg, params))
    }

    /// Continue from existing parameters with fresh Adam moments.
    pub fn from_params(cfg: TrainConfig, params: NetParams) -> Self {
        let mut frozen = vec![false; params.store.len()];
        if cfg.freeze_norm {
            for i in params.norm_param_indices() {
                frozen[i] = true;
            }
        }
        Trainer {
            adam: AdamState::new(&params.store),
            cfg,
            params,
            frozen,
        }
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    /// Mean losses and gradients over `batch`. Samples run in parallel; the
    /// reduction is sequential in batch order so results do not depend on
    /// scheduling.
    pub fn batch_gradients(&self, batch: &[Sample]) -> Result<SampleGrad> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let loss = self.cfg.loss();
        let per_sample: Vec<SampleGrad> = batch
            .par_iter()
            .map(|s| sample_gradients(&self.params, s, &loss, &self.frozen))
            .collect::<Result<_>>()?;
        let n = batch.len() as f64;
        let mut acc = per_sample[0].clone();
        for s in &per_sample[1..] {
            acc.losses.total += s.losses.total;
            acc.losses.alpha += s.losses.alpha;
            acc.losses.comp += s.losses.comp;
            for (a, g) in acc.grads.iter_mut().zip(&s.grads) {
                a.iter_mut().zip(g).for_each(|(a, g)| *a += g);
            }
        }
        acc.losses.total /= n;
        acc.losses.alpha /= n;
        acc.losses.comp /= n;
        acc.grads.iter_mut().flatten().for_each(|g| *g /= n);
        Ok(acc)
    }

    /// Compute the batch gradient and apply one Adam update.
    pub fn step(&mut self, batch: &[Sample]) -> Result<StepLosses> {
        let sg = self.batch_gradients(batch)?;
        if !sg.losses.total.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite loss at step {}",
                self.adam.step + 1
            )));
        }
        adam_step(&mut self.params.store, &sg.grads, &mut self.adam, &self.cfg)?;
        Ok(sg.losses)
    }

    /// One pass over `samples` in a seeded shuffled order. Returns the mean
    /// total loss over the epoch's steps.
    pub fn epoch(
        &mut self,
        samples: &[Sample],
        epoch: usize,
        mut log: impl FnMut(&StepRecord) -> Result<()>,
    ) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<Sample> = chunk
                .par_iter()
                .map(|&i| self.training_view(&samples[i], epoch, i))
                .collect::<Result<_>>()?;
            let losses = self.step(&batch)?;
            log(&StepRecord {
                epoch,
                step: self.adam.step,
                losses,
            })?;
            sum += losses.total;
            steps += 1;
        }
        Ok(sum / steps as f64)
    }

    fn training_view(&self, sample: &Sample, epoch: usize, index: usize) -> Result<Sample> {
        match self.cfg.crop {
            None => Ok(sample.clone()),
            Some(crop) => {
                let seed = self
                    .cfg
                    .seed
                    .wrapping_mul(0x2545_f491_4f6c_dd1d)
                    .wrapping_add((epoch as u64) << 32 | index as u64);
                augment(sample, seed, crop, &self.cfg.trimap)
            }
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            step: self.adam.step,
        }
    }
}

/// Files written by [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutputs {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub config: PathBuf,
    /// Mean total loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Load every entry of a split, failing on the first unreadable sample.
pub fn load_split(root: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    entries.par_iter().map(|e| load_sample(root, e)).collect()
}

/// Train on the train split of the dataset at `data_root`, writing
/// `loss.csv`, `train_config.json`, `best.ckpt` and `final.ckpt` into `out`.
pub fn train(cfg: &TrainConfig, data_root: &Path, out: &Path) -> Result<TrainOutputs> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(data_root)?;
    manifest.validate(data_root)?;
    let samples = load_split(data_root, &manifest, Split::Train)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("train split is empty".into()));
    }
    train_samples(cfg, &samples, out)
}

/// [`train`] on samples already in memory.
pub fn train_samples(cfg: &TrainConfig, samples: &[Sample], out: &Path) -> Result<TrainOutputs> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let outputs = TrainOutputs {
        final_checkpoint: out.join("final.ckpt"),
        best_checkpoint: out.join("best.ckpt"),
        loss_log: out.join("loss.csv"),
        config: out.join("train_config.json"),
        epoch_losses: Vec::new(),
    };
    io::write_json(&outputs.config, cfg)?;

    let mut trainer = Trainer::new(cfg.clone())?;
    let log_path = &outputs.loss_log;
    let mut log = fs::File::create(log_path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(log_path, e))?;
    writeln!(log, "{}", StepRecord::CSV_HEADER).map_err(|e| Error::io(log_path, e))?;

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    for epoch in 0..cfg.epochs {
        let mean = trainer.epoch(samples, epoch, |rec| {
            writeln!(log, "{}", rec.csv_row()).map_err(|e| Error::io(log_path, e))
        })?;
        log::info!("epoch {epoch}: mean total loss {mean:.6}");
        if mean < best {
            best = mean;
            trainer.checkpoint().save(&outputs.best_checkpoint)?;
        }
        epoch_losses.push(mean);
    }
    log.flush().map_err(|e| Error::io(log_path, e))?;
    trainer.checkpoint().save(&outputs.final_checkpoint)?;
    if cfg.epochs == 0 {
        trainer.checkpoint().save(&outputs.best_checkpoint)?;
    }
    Ok(TrainOutputs {
        epoch_losses,
        ..outputs
    })
}

/// Final matte for `sample` from `params`, capping the network input at
/// `max_edge` and resizing back.
pub fn predict_sample(params: &NetParams, sample: &Sample, max_edge: usize) -> Result<AlphaMatte> {
    params.predict_capped(&sample.image, &sample.trimap, max_edge)
}

/// Aggregate metrics over one split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEvaluation {
    pub report: MetricsReport,
    pub evaluated: usize,
    /// Samples skipped because their planes disagree in size.
    pub skipped: Vec<String>,
}

/// Evaluate `predict` on every sample of `split`.
pub fn evaluate_predictions<F>(
    root: &Path,
    manifest: &DatasetManifest,
    split: Split,
    predict: F,
) -> Result<DatasetEvaluation>
where
    F: Fn(&ManifestEntry, &Sample) -> Result<AlphaMatte> + Sync,
{
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!("{split:?} split is empty")));
    }
    let outcomes: Vec<Option<MetricsReport>> = entries
        .par_iter()
        .map(|e| {
            let sample = match load_sample(root, e) {
                Ok(s) => s,
                Err(Error::Sample { source, .. }) if matches!(*source, Error::Shape { .. }) => {
                    log::warn!("skipping sample {}: {source}", e.id);
                    return Ok(None);
                }
                Err(err) => return Err(err),
            };
            let pred = predict(e, &sample)?;
            if pred.shape() != sample.gt_alpha.shape() {
                log::warn!("skipping sample {}: prediction is {}", e.id, pred.shape());
                return Ok(None);
            }
            metrics::evaluate(&pred, &sample.gt_alpha).map(Some)
        })
        .collect::<Result<_>>()?;
    let skipped = entries
        .iter()
        .zip(&outcomes)
        .filter(|(_, o)| o.is_none())
        .map(|(e, _)| e.id.clone())
        .collect();
    let reports: Vec<MetricsReport> = outcomes.into_iter().flatten().collect();
    if reports.is_empty() {
        return Err(Error::InvalidArgument(format!("no evaluable samples in the {split:?} split")));
    }
    Ok(DatasetEvaluation {
        report: MetricsReport::mean(&reports),
        evaluated: reports.len(),
        skipped,
    })
}

/// Evaluate a trained network on one split.
pub fn evaluate_dataset(
    params: &NetParams,
    root: &Path,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<DatasetEvaluation> {
    evaluate_predictions(root, manifest, split, |_, s| predict_sample(params, s, MAX_EDGE))
}

/// Write a metrics CSV: header plus one display-scaled row per method.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[(&str, &MetricsReport)]) -> Result<()> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for (method, report) in rows {
        text.push_str(&report.csv_row(method));
        text.push('\n');
    }
    io::write_atomic(path.as_ref(), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![1.0, -2.0, 0.5]));
        s.add("b", Tensor::vector(vec![0.0]));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store();
        let before = s.clone();
        let mut st = AdamState::new(&s);
        let grads = vec![vec![0.0; 3], vec![0.0]];
        adam_step(&mut s, &grads, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(s, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut s = store();
        let before = s.clone();
        let mut st = AdamState::new(&s);
        let grads = vec![vec![3.0, -0.2, 1e-3], vec![-50.0]];
        adam_step(&mut s, &grads, &mut st, &cfg).unwrap();
        for ((p, q), g) in s.tensors().iter().zip(before.tensors()).zip(&grads) {
            for ((a, b), g) in p.data().iter().zip(q.data()).zip(g) {
                let expected = -cfg.lr * g / (g.abs() + cfg.eps);
                assert!((a - b - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_missing_gradients() {
        let mut s = store();
        let mut st = AdamState::new(&s);
        let cfg = TrainConfig::default();
        assert!(adam_step(&mut s, &[vec![0.0; 3]], &mut st, &cfg).is_err());
        assert!(adam_step(&mut s, &[vec![0.0; 2], vec![0.0]], &mut st, &cfg).is_err());
        assert_eq!(st.step, 0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { beta1: 1.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { gamma: 2.0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        let json = serde_json::to_string(&TrainConfig::default()).unwrap();
        assert!(json.contains("\"ablation\":\"attention\""));
        let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.lr, 1e-3);
    }

    #[test]
    fn step_record_csv() {
        let r = StepRecord {
            epoch: 2,
            step: 7,
            losses: StepLosses { total: 0.5, alpha: 0.25, comp: 0.75 },
        };
        assert_eq!(r.csv_row(), "2,7,0.5,0.25,0.75");
    }
}
