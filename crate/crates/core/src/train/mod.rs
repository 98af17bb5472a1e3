//! Supervised training: SGD with momentum and weight decay over two
//! learning-rate groups, a validation-plateau schedule, extractor
//! pretraining and full training with rotation augmentation.

mod session;

pub use session::{classification_error, LabeledSet, Session, Stage};

use serde::{Deserialize, Serialize};

use afinet_autograd::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_extractor: f64,
    pub lr_vlad_head: f64,
    /// Learning rate of both the extractor and the temporary head while
    /// pretraining.
    pub lr_pretrain: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    /// Stagnant validation epochs before a decay.
    pub plateau_patience: usize,
    /// Absolute improvement in validation error that counts as progress.
    pub plateau_threshold: f64,
    /// Decays without improvement after which a stage stops.
    pub max_decays: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub pretrain_max_epochs: usize,
    pub seed: u64,
    /// Uniform rotation augmentation range in degrees, `(lo, hi)`.
    pub rotation_range_deg: (f64, f64),
    /// Upper bound on local vectors fed to k-means.
    pub kmeans_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_extractor: 1e-4,
            lr_vlad_head: 1e-2,
            lr_pretrain: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay_factor: 10.0,
            plateau_patience: 3,
            plateau_threshold: 1e-3,
            max_decays: 2,
            batch_size: 32,
            max_epochs: 60,
            pretrain_max_epochs: 30,
            seed: 0,
            rotation_range_deg: (0.0, 45.0),
            kmeans_samples: 20_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("train config", msg));
        for (name, v) in [
            ("lr_extractor", self.lr_extractor),
            ("lr_vlad_head", self.lr_vlad_head),
            ("lr_pretrain", self.lr_pretrain),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be a finite non-negative rate"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad(format!(
                "momentum {} must be in [0, 1) and weight_decay {} non-negative",
                self.momentum, self.weight_decay
            ));
        }
        if !(self.lr_decay_factor > 1.0) {
            return bad(format!(
                "lr_decay_factor {} must exceed 1",
                self.lr_decay_factor
            ));
        }
        if self.plateau_patience == 0 || self.batch_size == 0 || self.kmeans_samples == 0 {
            return bad(
                "plateau_patience, batch_size and kmeans_samples must be at least 1".into(),
            );
        }
        let (lo, hi) = self.rotation_range_deg;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return bad(format!("rotation range ({lo}, {hi}) is empty"));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Tensor<f32>>,
}

impl SgdState {
    pub fn zeros_like(params: &[Tensor<f32>]) -> Self {
        Self {
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// `v ← μ·v + g + λ·p; p ← p − lr·v`, with a learning rate per parameter.
pub fn sgd_step(
    params: &mut [Tensor<f32>],
    grads: &[Tensor<f32>],
    state: &mut SgdState,
    lrs: &[f64],
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len()
        || lrs.len() != params.len()
        || state.velocity.len() != params.len()
    {
        return Err(Error::invalid(
            "sgd step",
            format!(
                "{} params, {} grads, {} rates, {} velocities",
                params.len(),
                grads.len(),
                lrs.len(),
                state.velocity.len()
            ),
        ));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params[i].shape() {
            return Err(Error::invalid(
                "sgd step",
                format!(
                    "gradient {i} has shape {:?}, parameter {:?}",
                    g.shape(),
                    params[i].shape()
                ),
            ));
        }
        if !g.all_finite() {
            return Err(Error::invalid(
                "sgd step",
                format!("gradient {i} is not finite"),
            ));
        }
    }
    let (mu, wd) = (momentum as f32, weight_decay as f32);
    for ((p, g), (v, &lr)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.velocity.iter_mut().zip(lrs))
    {
        let lr = lr as f32;
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi + gi + wd * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// What one validation result did to the schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleEvent {
    Improved,
    Stagnant,
    Decay,
    Stop,
}

/// Divide-by-factor schedule driven by validation error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub patience: usize,
    pub threshold: f64,
    pub max_decays: usize,
    pub best: Option<f64>,
    pub stagnant: usize,
    pub decays: usize,
    /// Decays since the last improvement.
    pub idle_decays: usize,
}

impl PlateauSchedule {
    pub fn new(patience: usize, threshold: f64, max_decays: usize) -> Self {
        Self {
            patience,
            threshold,
            max_decays,
            best: None,
            stagnant: 0,
            decays: 0,
            idle_decays: 0,
        }
    }

    pub fn observe(&mut self, val_error: f64) -> ScheduleEvent {
        let improved = self.best.map_or(true, |b| val_error < b - self.threshold);
        if improved {
            self.best = Some(val_error);
            self.stagnant = 0;
            self.idle_decays = 0;
            return ScheduleEvent::Improved;
        }
        self.stagnant += 1;
        if self.stagnant < self.patience {
            return ScheduleEvent::Stagnant;
        }
        self.stagnant = 0;
        if self.idle_decays >= self.max_decays {
            return ScheduleEvent::Stop;
        }
        self.decays += 1;
        self.idle_decays += 1;
        ScheduleEvent::Decay
    }

    /// Multiplier on the initial learning rates.
    pub fn lr_scale(&self, factor: f64) -> f64 {
        factor.powi(-(self.decays as i32))
    }
}

/// Keeps the lowest validation error seen; ties keep the earlier epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct BestTracker<S> {
    pub best: Option<(f64, usize, S)>,
}

impl<S> Default for BestTracker<S> {
    fn default() -> Self {
        Self { best: None }
    }
}

impl<S> BestTracker<S> {
    /// Offers a snapshot; `snapshot` is only called when it is kept.
    pub fn offer(&mut self, val_error: f64, epoch: usize, snapshot: impl FnOnce() -> S) -> bool {
        if self.best.as_ref().map_or(true, |(b, _, _)| val_error < *b) {
            self.best = Some((val_error, epoch, snapshot()));
            true
        } else {
            false
        }
    }

    pub fn epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.1)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_error: f64,
    pub lr_extractor: f64,
    pub lr_head: f64,
    pub event: ScheduleEvent,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// JSON lines, one record per epoch.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable record") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let rec = serde_json::from_str(line)
                .map_err(|e| Error::parse("<train log>", Some(i + 1), e.to_string()))?;
            records.push(rec);
        }
        Ok(Self { records })
    }

    /// The log with wall times zeroed, for comparisons across runs.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.wall_ms = 0;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn plain_gradient_descent_without_momentum_or_decay() {
        let mut p = vec![t(&[1.0, -2.0])];
        let mut s = SgdState::zeros_like(&p);
        sgd_step(&mut p, &[t(&[0.5, 0.25])], &mut s, &[0.1], 0.0, 0.0).unwrap();
        assert_eq!(p[0].data(), &[1.0 - 0.05, -2.0 - 0.025]);
    }

    #[test]
    fn velocity_decays_geometrically_without_gradient() {
        let mut p = vec![t(&[0.0])];
        let mut s = SgdState::zeros_like(&p);
        s.velocity[0] = t(&[1.0]);
        for k in 1..=5 {
            sgd_step(&mut p, &[t(&[0.0])], &mut s, &[0.0], 0.9, 0.0).unwrap();
            assert!((s.velocity[0].data()[0] as f64 - 0.9f64.powi(k)).abs() < 1e-6);
        }
    }

    #[test]
    fn three_steps_on_a_quadratic() {
        // f(p) = p²/2, so g = p. Hand recurrence with μ = 0.9, λ = 0.1, lr = 0.5.
        let (mu, wd, lr) = (0.9, 0.1, 0.5);
        let (mut p, mut v) = (2.0f64, 0.0f64);
        let mut pt = vec![t(&[2.0])];
        let mut s = SgdState::zeros_like(&pt);
        for _ in 0..3 {
            v = mu * v + p + wd * p;
            p -= lr * v;
            let g = pt[0].clone();
            sgd_step(&mut pt, &[g], &mut s, &[lr], mu, wd).unwrap();
            assert!((pt[0].data()[0] as f64 - p).abs() < 1e-6);
        }
        // p: 2 → 0.9 → -0.585 → -1.59975
        assert!((p + 1.59975).abs() < 1e-9, "{p}");
    }

    #[test]
    fn weight_decay_shrinks_parameters() {
        let mut p = vec![t(&[3.0, -4.0])];
        let mut s = SgdState::zeros_like(&p);
        let mut norm = 5.0;
        for _ in 0..10 {
            sgd_step(&mut p, &[t(&[0.0, 0.0])], &mut s, &[0.1], 0.0, 0.5).unwrap();
            let n = (p[0].sum_sq() as f64).sqrt();
            assert!(n < norm);
            norm = n;
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![t(&[1.0])];
        let mut s = SgdState::zeros_like(&p);
        assert!(sgd_step(&mut p, &[t(&[f32::NAN])], &mut s, &[0.1], 0.9, 0.0).is_err());
        assert_eq!(p[0].data(), &[1.0]);
    }

    #[test]
    fn patience_one_decays_after_one_stagnant_epoch() {
        let mut s = PlateauSchedule::new(1, 1e-3, 2);
        assert_eq!(s.observe(0.5), ScheduleEvent::Improved);
        assert_eq!(s.observe(0.5), ScheduleEvent::Decay);
        assert_eq!(s.lr_scale(10.0), 0.1);
    }

    #[test]
    fn stops_after_two_idle_decays() {
        let mut s = PlateauSchedule::new(2, 1e-3, 2);
        let events: Vec<_> = [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]
            .iter()
            .map(|&e| s.observe(e))
            .collect();
        use ScheduleEvent::*;
        assert_eq!(
            events,
            [Improved, Stagnant, Decay, Stagnant, Decay, Stagnant, Stop]
        );
        // Tiny gains below the threshold do not count.
        let mut s = PlateauSchedule::new(1, 1e-3, 2);
        s.observe(0.5);
        assert_eq!(s.observe(0.4995), Decay);
        assert_eq!(s.observe(0.3), Improved);
        assert_eq!(s.idle_decays, 0);
    }

    #[test]
    fn best_tracker_keeps_minimum() {
        let mut b = BestTracker::default();
        for (epoch, err) in [0.5, 0.4, 0.3, 0.35, 0.3].into_iter().enumerate() {
            b.offer(err, epoch + 1, || epoch + 1);
        }
        assert_eq!(b.epoch(), Some(3));
    }

    #[test]
    fn log_round_trip() {
        let log = TrainLog {
            records: vec![EpochRecord {
                stage: Stage::Full,
                epoch: 1,
                train_loss: 1.25,
                train_accuracy: 0.5,
                val_error: 0.4,
                lr_extractor: 1e-4,
                lr_head: 1e-2,
                event: ScheduleEvent::Improved,
                wall_ms: 17,
            }],
        };
        assert_eq!(TrainLog::from_jsonl(&log.to_jsonl()).unwrap(), log);
    }
}
