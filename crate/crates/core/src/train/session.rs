use std::path::Path;
use std::time::Instant;

use afinet_autograd::{Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    sgd_step, BestTracker, EpochRecord, PlateauSchedule, ScheduleEvent, SgdState, TrainConfig,
    TrainLog,
};
use crate::error::{Error, Result};
use crate::iris::synth::mix;
use crate::iris::NormalizedIris;
use crate::model::kmeans::kmeans;
use crate::model::{AfinetModel, Aggregation, Group, Net};

const EVAL_BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Extractor with a temporary global-average-pool classifier.
    Pretrain,
    /// Whole network, after the VLAD layer is initialized by k-means.
    Full,
    Done,
}

impl Stage {
    fn id(self) -> u64 {
        match self {
            Stage::Pretrain => 1,
            Stage::Full => 2,
            Stage::Done => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Full => "full",
            Stage::Done => "done",
        }
    }
}

/// Images with dense class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub images: Vec<NormalizedIris>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(images: Vec<NormalizedIris>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(
                "labeled set",
                format!("{} images but {} labels", images.len(), labels.len()),
            ));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Splits off every `every`-th sample of each class (the 2nd, then the
    /// `every+2`-th, ...) as a validation set.
    pub fn holdout(&self, every: usize) -> Result<(LabeledSet, LabeledSet)> {
        if every < 2 {
            return Err(Error::invalid(
                "validation split",
                format!("every = {every}, need at least 2"),
            ));
        }
        let mut seen = vec![0usize; self.num_classes()];
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (img, &l) in self.images.iter().zip(&self.labels) {
            let k = seen[l];
            seen[l] += 1;
            if k % every == 1 {
                val.push((img.clone(), l));
            } else {
                train.push((img.clone(), l));
            }
        }
        let build = |v: Vec<(NormalizedIris, usize)>| {
            let (images, labels) = v.into_iter().unzip();
            LabeledSet { images, labels }
        };
        Ok((build(train), build(val)))
    }
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |b, (i, &v)| if v > b.1 { (i, v) } else { b },
        )
        .0
}

/// Fraction of misclassified samples.
pub fn classification_error(model: &AfinetModel, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::invalid("labeled set", "empty"));
    }
    let mut wrong = 0;
    for (imgs, labels) in set
        .images
        .chunks(EVAL_BATCH)
        .zip(set.labels.chunks(EVAL_BATCH))
    {
        let tape = Tape::<f32>::new();
        let params = model.bind(&tape, false);
        let refs: Vec<_> = imgs.iter().collect();
        let x = tape.constant(model.input_batch(&refs)?);
        let (_, logits) = Net::new(&model.config, &params).forward(x)?;
        let value = logits.value();
        for (row, &l) in value.data().chunks(model.config.num_classes).zip(labels) {
            wrong += usize::from(argmax(row) != l);
        }
    }
    Ok(wrong as f64 / set.len() as f64)
}

/// Resumable training state. Each call to [`Session::run_epoch`] performs one
/// epoch (or a stage transition); a saved session resumes bit-exactly.
pub struct Session {
    pub config: TrainConfig,
    pub model: AfinetModel,
    pub stage: Stage,
    /// Epochs completed in the current stage.
    pub epoch: usize,
    /// Parameters being optimized: the extractor plus the temporary head
    /// while pretraining, all model parameters afterwards.
    active: Vec<Tensor<f32>>,
    groups: Vec<Group>,
    sgd: SgdState,
    schedule: PlateauSchedule,
    best: BestTracker<Vec<Tensor<f32>>>,
    pub log: TrainLog,
}

impl Session {
    pub fn new(model: AfinetModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.config.validate()?;
        let mut s = Self {
            schedule: PlateauSchedule::new(
                config.plateau_patience,
                config.plateau_threshold,
                config.max_decays,
            ),
            config,
            model,
            stage: Stage::Pretrain,
            epoch: 0,
            active: Vec::new(),
            groups: Vec::new(),
            sgd: SgdState {
                velocity: Vec::new(),
            },
            best: BestTracker::default(),
            log: TrainLog::default(),
        };
        s.enter_pretrain();
        Ok(s)
    }

    fn extractor_len(&self) -> usize {
        self.model
            .config
            .param_specs()
            .iter()
            .take_while(|s| s.group == Group::Extractor)
            .count()
    }

    fn enter_pretrain(&mut self) {
        let n = self.extractor_len();
        let c = self.model.config.local_dim();
        let classes = self.model.config.num_classes;
        let mut rng = self.rng(0);
        let normal = Normal::new(0.0, 1.0 / (c as f64).sqrt()).expect("finite std");
        let head_w = Tensor::from_fn(&[c, classes], |_| normal.sample(&mut rng) as f32);
        self.active = self.model.params[..n].to_vec();
        self.active.push(head_w);
        self.active.push(Tensor::zeros(&[classes]));
        self.groups = vec![Group::Extractor; n + 2];
        self.reset_optimizer(Stage::Pretrain);
    }

    fn enter_full(&mut self) {
        self.active = self.model.params.clone();
        self.groups = self
            .model
            .config
            .param_specs()
            .iter()
            .map(|s| s.group)
            .collect();
        self.reset_optimizer(Stage::Full);
    }

    fn reset_optimizer(&mut self, stage: Stage) {
        self.stage = stage;
        self.epoch = 0;
        self.sgd = SgdState::zeros_like(&self.active);
        self.schedule = PlateauSchedule::new(
            self.config.plateau_patience,
            self.config.plateau_threshold,
            self.config.max_decays,
        );
        self.best = BestTracker::default();
    }

    /// Deterministic stream for `(seed, stage, epoch)`.
    fn rng(&self, epoch: usize) -> ChaCha8Rng {
        let s = mix(self.config.seed
            ^ mix(self.stage.id())
            ^ mix(mix((epoch as u64).wrapping_add(0x7E))));
        ChaCha8Rng::seed_from_u64(s)
    }

    /// Training accuracy of the last completed epoch, 0 before the first.
    pub fn train_accuracy(&self) -> f64 {
        self.log.records.last().map_or(0.0, |r| r.train_accuracy)
    }

    pub fn is_done(&self) -> bool {
        self.stage == Stage::Done
    }

    fn learning_rates(&self) -> (f64, f64) {
        let scale = self.schedule.lr_scale(self.config.lr_decay_factor);
        match self.stage {
            Stage::Pretrain => (
                self.config.lr_pretrain * scale,
                self.config.lr_pretrain * scale,
            ),
            _ => (
                self.config.lr_extractor * scale,
                self.config.lr_vlad_head * scale,
            ),
        }
    }

    /// Logits for `x` from the active parameters bound on `tape`.
    fn logits<'t>(&self, params: &[Var<'t, f32>], x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        match self.stage {
            Stage::Pretrain => {
                let n = params.len() - 2;
                let local = Net::new(&self.model.config, &params[..n]).extractor(x)?;
                Ok(local.global_avg_pool()?.linear(params[n], params[n + 1])?)
            }
            _ => Ok(Net::new(&self.model.config, params).forward(x)?.1),
        }
    }

    fn validation_error(&self, val: &LabeledSet) -> Result<f64> {
        let mut wrong = 0;
        for (imgs, labels) in val
            .images
            .chunks(EVAL_BATCH)
            .zip(val.labels.chunks(EVAL_BATCH))
        {
            let tape = Tape::<f32>::new();
            let params: Vec<_> = self
                .active
                .iter()
                .map(|p| tape.constant(p.clone()))
                .collect();
            let refs: Vec<_> = imgs.iter().collect();
            let x = tape.constant(self.model.input_batch(&refs)?);
            let value = self.logits(&params, x)?.value();
            for (row, &l) in value
                .data()
                .chunks(self.model.config.num_classes)
                .zip(labels)
            {
                wrong += usize::from(argmax(row) != l);
            }
        }
        Ok(wrong as f64 / val.len() as f64)
    }

    fn check_sets(&self, train: &LabeledSet, val: &LabeledSet) -> Result<()> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::invalid(
                "training data",
                format!(
                    "{} training and {} validation samples",
                    train.len(),
                    val.len()
                ),
            ));
        }
        let classes = self.model.config.num_classes;
        if let Some(&l) = train
            .labels
            .iter()
            .chain(&val.labels)
            .find(|&&l| l >= classes)
        {
            return Err(Error::invalid(
                "training data",
                format!("label {l} with {classes} classes"),
            ));
        }
        Ok(())
    }

    /// Runs one epoch of the current stage, or the transition out of it.
    pub fn run_epoch(&mut self, train: &LabeledSet, val: &LabeledSet) -> Result<()> {
        self.check_sets(train, val)?;
        let limit = match self.stage {
            Stage::Pretrain => self.config.pretrain_max_epochs,
            Stage::Full => self.config.max_epochs,
            Stage::Done => return Ok(()),
        };
        if self.epoch >= limit {
            return self.finish_stage(train);
        }
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let mut rng = self.rng(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let (lr_ex, lr_head) = self.learning_rates();
        let lrs: Vec<f64> = self
            .groups
            .iter()
            .map(|g| {
                if *g == Group::Extractor {
                    lr_ex
                } else {
                    lr_head
                }
            })
            .collect();
        let (lo, hi) = self.config.rotation_range_deg;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, batch) in order.chunks(self.config.batch_size).enumerate() {
            let rotated: Vec<NormalizedIris> = batch
                .iter()
                .map(|&i| {
                    let angle = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
                    train.images[i].rotate(angle)
                })
                .collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let refs: Vec<_> = rotated.iter().collect();
            let tape = Tape::<f32>::new();
            let params: Vec<_> = self.active.iter().map(|p| tape.param(p.clone())).collect();
            let x = tape.constant(self.model.input_batch(&refs)?);
            let logits = self.logits(&params, x)?;
            let loss = logits.cross_entropy(&labels)?;
            let value = loss.item() as f64;
            let non_finite = |what| Error::NonFinite {
                what,
                stage: self.stage.name().into(),
                epoch,
                step,
            };
            if !value.is_finite() {
                return Err(non_finite("loss"));
            }
            let lv = logits.value();
            for (row, &l) in lv.data().chunks(self.model.config.num_classes).zip(&labels) {
                correct += usize::from(argmax(row) == l);
            }
            loss_sum += value * batch.len() as f64;
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor<f32>> = params
                .iter()
                .zip(&self.active)
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(non_finite("gradient"));
            }
            sgd_step(
                &mut self.active,
                &grads,
                &mut self.sgd,
                &lrs,
                self.config.momentum,
                self.config.weight_decay,
            )?;
        }
        let val_error = self.validation_error(val)?;
        let event = self.schedule.observe(val_error);
        let active = &self.active;
        self.best.offer(val_error, epoch, || active.clone());
        self.epoch = epoch;
        self.sync_model();
        self.log.records.push(EpochRecord {
            stage: self.stage,
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_error,
            lr_extractor: lr_ex,
            lr_head,
            event,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        if event == ScheduleEvent::Stop {
            self.finish_stage(train)?;
        }
        Ok(())
    }

    /// Copies the optimized extractor (and, after pretraining, everything)
    /// into the model.
    fn sync_model(&mut self) {
        let n = match self.stage {
            Stage::Pretrain => self.extractor_len(),
            _ => self.model.params.len(),
        };
        self.model.params[..n].clone_from_slice(&self.active[..n]);
    }

    fn finish_stage(&mut self, train: &LabeledSet) -> Result<()> {
        if let Some((_, _, best)) = self.best.best.take() {
            self.active = best;
        }
        self.sync_model();
        match self.stage {
            Stage::Pretrain => {
                if self.model.config.aggregation == Aggregation::Vlad {
                    self.attach_vlad(train)?;
                }
                self.enter_full();
            }
            Stage::Full => {
                self.stage = Stage::Done;
            }
            Stage::Done => {}
        }
        Ok(())
    }

    /// Clusters local vectors of the (pretrained) extractor over the
    /// training images and installs the result in the VLAD layer.
    pub fn attach_vlad(&mut self, train: &LabeledSet) -> Result<()> {
        let cfg = &self.model.config;
        let c = cfg.local_dim();
        let mut vectors: Vec<f64> = Vec::new();
        for imgs in train.images.chunks(EVAL_BATCH) {
            let tape = Tape::<f32>::new();
            let params = self.model.bind(&tape, false);
            let refs: Vec<_> = imgs.iter().collect();
            let x = tape.constant(self.model.input_batch(&refs)?);
            let local = Net::new(cfg, &params).extractor(x)?.value();
            let plane = local.shape()[2] * local.shape()[3];
            for sample in local.data().chunks(c * plane) {
                for p in 0..plane {
                    vectors.extend((0..c).map(|j| sample[j * plane + p] as f64));
                }
            }
        }
        let total = vectors.len() / c;
        let mut rng = self.rng(usize::MAX);
        if total > self.config.kmeans_samples {
            let mut keep =
                rand::seq::index::sample(&mut rng, total, self.config.kmeans_samples).into_vec();
            keep.sort_unstable();
            vectors = keep
                .iter()
                .flat_map(|&i| vectors[i * c..(i + 1) * c].to_vec())
                .collect();
        }
        let clustering = kmeans(&vectors, c, cfg.clusters, rng.gen())?;
        self.model.set_vlad_from_centers(&clustering.centers)
    }

    /// Runs until done, calling `after_epoch` after every epoch or stage
    /// transition.
    pub fn run(
        &mut self,
        train: &LabeledSet,
        val: &LabeledSet,
        mut after_epoch: impl FnMut(&Session) -> Result<()>,
    ) -> Result<()> {
        while !self.is_done() {
            self.run_epoch(train, val)?;
            after_epoch(self)?;
        }
        Ok(())
    }

    /// Writes the complete state under `dir`, replacing any earlier state.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let staging = dir.with_extension("new");
        let old = dir.with_extension("old");
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        let best = self.best.best.as_ref();
        let meta = SessionMeta {
            config: self.config.clone(),
            stage: self.stage,
            epoch: self.epoch,
            groups: self.groups.clone(),
            schedule: self.schedule.clone(),
            best_val_error: best.map(|b| b.0),
            best_epoch: best.map(|b| b.1),
            active_shapes: self.active.iter().map(|t| t.shape().to_vec()).collect(),
        };
        let mut blob = Vec::new();
        let empty = Vec::new();
        for t in self
            .active
            .iter()
            .chain(&self.sgd.velocity)
            .chain(best.map_or(&empty, |b| &b.2))
        {
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let files: [(&str, Vec<u8>); 4] = [
            ("model.ckpt", self.model.to_bytes()),
            ("tensors.bin", blob),
            ("train_log.jsonl", self.log.to_jsonl().into_bytes()),
            (
                "session.json",
                serde_json::to_vec_pretty(&meta).expect("serializable"),
            ),
        ];
        for (name, bytes) in files {
            let p = staging.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        if dir.exists() {
            std::fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;
        if old.exists() {
            std::fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        Ok(())
    }

    /// Restores a state written by [`Session::save`]. If a save was
    /// interrupted between its two renames, the previous state is used.
    pub fn load(dir: &Path) -> Result<Self> {
        let old = dir.with_extension("old");
        let dir = if !dir.exists() && old.exists() {
            old.as_path()
        } else {
            dir
        };
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let meta: SessionMeta = serde_json::from_slice(&read("session.json")?)
            .map_err(|e| Error::parse(dir.join("session.json"), None, e.to_string()))?;
        let model = AfinetModel::from_bytes(&read("model.ckpt")?)?;
        let log = TrainLog::from_jsonl(&String::from_utf8_lossy(&read("train_log.jsonl")?))?;
        let blob = read("tensors.bin")?;
        let mut values = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut take = |shapes: &[Vec<usize>]| -> Result<Vec<Tensor<f32>>> {
            shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    let data: Vec<f32> = values.by_ref().take(n).collect();
                    if data.len() != n {
                        return Err(Error::checkpoint("tensors.bin", "truncated"));
                    }
                    Ok(Tensor::from_vec(data, s)?)
                })
                .collect()
        };
        let active = take(&meta.active_shapes)?;
        let velocity = take(&meta.active_shapes)?;
        let best = match (meta.best_val_error, meta.best_epoch) {
            (Some(e), Some(ep)) => Some((e, ep, take(&meta.active_shapes)?)),
            _ => None,
        };
        if values.next().is_some() {
            return Err(Error::checkpoint("tensors.bin", "trailing data"));
        }
        Ok(Self {
            config: meta.config,
            model,
            stage: meta.stage,
            epoch: meta.epoch,
            active,
            groups: meta.groups,
            sgd: SgdState { velocity },
            schedule: meta.schedule,
            best: BestTracker { best },
            log,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SessionMeta {
    config: TrainConfig,
    stage: Stage,
    epoch: usize,
    groups: Vec<Group>,
    schedule: PlateauSchedule,
    best_val_error: Option<f64>,
    best_epoch: Option<usize>,
    active_shapes: Vec<Vec<usize>>,
}
