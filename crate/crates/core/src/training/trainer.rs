use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, epoch_plan, lr_schedule, AdamState, Result, TrainConfig, TrainError,
    TrainingTriplet, TripletSource,
};
use crate::geometry::NormalizedFrame;
use crate::losses::{
    label_correspondences, loss_desc, loss_epi, loss_pk, loss_rel, loss_rp, sample_descriptors,
    total_loss, LossBreakdown, LossTerms,
};
use crate::model::{detect_train, Checkpoint, HyKeyNetwork, ModelError};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Mean keypoint counts per view over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KeypointCounts {
    pub detected: f32,
    pub random: f32,
    /// Ground-truth labelled pairs between base and warped view.
    pub labelled: f32,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub keypoints: KeypointCounts,
    pub grad_norm: f32,
    pub clipped: bool,
    /// The update was dropped (non-finite values).
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resampled: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub frames: usize,
    pub mean_total: f32,
}

struct TripletOutcome {
    grads: Vec<Tensor>,
    breakdown: LossBreakdown,
    stats: Option<(Vec<f32>, Vec<f32>)>,
    counts: KeypointCounts,
}

/// Network, optimiser state and position in the schedule.
pub struct Trainer {
    pub network: HyKeyNetwork,
    pub adam: AdamState,
    pub config: TrainConfig,
    /// Current epoch, 1-based.
    pub epoch: usize,
    /// Batches of the current epoch already consumed.
    pub batch_in_epoch: usize,
}

fn is_non_finite(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Tensor(TensorError::NonFinite { .. })
            | TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))
    )
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let network = HyKeyNetwork::new(config.model.clone(), config.seed)?;
        let adam = AdamState::new(network.params(), config.adam);
        Ok(Self {
            network,
            adam,
            config,
            epoch: 1,
            batch_in_epoch: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    /// True once `epochs` or `max_steps` is reached.
    pub fn done(&self) -> bool {
        self.epoch > self.config.epochs
            || self.config.max_steps.is_some_and(|m| self.adam.step >= m)
    }

    /// Forward, losses and gradients for one triplet.
    fn triplet(&self, t: &TrainingTriplet, rng: &mut ChaCha8Rng) -> Result<TripletOutcome> {
        let cfg = &self.config;
        let lc = &cfg.loss;
        let schedule = cfg.schedule();
        let use_second = schedule.active(self.epoch) && t.second.is_some();
        let mut tape = Tape::new();
        let vars = self.network.bind(&mut tape, true);
        let mut inputs = vec![t.base.to_tensor(), t.warped.to_tensor()];
        if let (true, Some(s)) = (use_second, &t.second) {
            inputs.push(s.image.to_tensor());
        }
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let (maps, stats) = self.network.forward_dense(&mut tape, &vars, &refs, true)?;
        let model = &cfg.model;
        let kp0 = detect_train(&mut tape, maps[0].score, model, rng, None)?;
        let kp1 = detect_train(&mut tape, maps[1].score, model, rng, Some(&t.valid))?;
        let d0 = sample_descriptors(&mut tape, maps[0].descriptors, kp0.points)?;
        let d1 = sample_descriptors(&mut tape, maps[1].descriptors, kp1.points)?;
        let d1t = tape.transpose(d1)?;
        let sim01 = tape.matmul(d0, d1t)?;
        let rows = |tape: &Tape, v: Var| -> Vec<[f32; 2]> {
            tape.value(v)
                .data()
                .chunks_exact(2)
                .map(|c| [c[0], c[1]])
                .collect()
        };
        let labels = label_correspondences(
            &rows(&tape, kp0.points),
            &rows(&tape, kp1.points),
            &t.h01,
            lc.label_radius,
        );

        let pk = match (
            loss_pk(&mut tape, maps[0].score, &kp0, lc)?,
            loss_pk(&mut tape, maps[1].score, &kp1, lc)?,
        ) {
            (Some(a), Some(b)) => {
                let s = tape.add(a, b)?;
                Some(tape.scale(s, 0.5)?)
            }
            (a, b) => a.or(b),
        };
        let rp = loss_rp(&mut tape, &kp0, &kp1, &t.h01, lc)?;
        let rel = loss_rel(&mut tape, kp0.scores, kp1.scores, sim01, &labels, lc)?;
        let desc = loss_desc(&mut tape, sim01, &labels, lc)?;
        let epi = match (use_second, &t.second) {
            (true, Some(s)) => {
                let kp2 = detect_train(&mut tape, maps[2].score, model, rng, None)?;
                let d2 = sample_descriptors(&mut tape, maps[2].descriptors, kp2.points)?;
                let d2t = tape.transpose(d2)?;
                let sim02 = tape.matmul(d0, d2t)?;
                let frame = NormalizedFrame::new(s.k0, s.k2);
                loss_epi(
                    &mut tape, kp0.points, kp2.points, sim02, &frame, &s.pose, lc,
                )?
            }
            _ => None,
        };
        let terms = LossTerms {
            pk,
            rp,
            rel,
            desc,
            epi,
        };
        let (total, breakdown) = total_loss(&mut tape, &terms, &cfg.weights, schedule, self.epoch)?;
        let grads = if tape.requires_grad(total) {
            let mut g = tape.backward(total)?;
            vars.iter()
                .zip(self.network.params())
                .map(|(&v, p)| g.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
                .collect()
        } else {
            self.network
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect()
        };
        let counts = KeypointCounts {
            detected: 0.5 * (kp0.detected + kp1.detected) as f32,
            random: 0.5 * ((kp0.len() - kp0.detected) + (kp1.len() - kp1.detected)) as f32,
            labelled: labels.len() as f32,
        };
        Ok(TripletOutcome {
            grads,
            breakdown,
            stats,
            counts,
        })
    }

    /// One optimiser step on a batch: per-triplet gradients are averaged,
    /// clipped to the configured global norm and applied with Adam.
    pub fn step(&mut self, batch: &[TrainingTriplet]) -> Result<StepLog> {
        if batch.is_empty() {
            return Err(TrainError::Config("empty batch".into()));
        }
        let next = self.adam.step + 1;
        let lr = lr_schedule(next, &self.config);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(next);
        let mut outcomes = Vec::with_capacity(batch.len());
        let mut skipped = false;
        for t in batch {
            match self.triplet(t, &mut rng) {
                Ok(o) => outcomes.push(o),
                Err(e) if is_non_finite(&e) => {
                    log::warn!("step {next}: {e}; update skipped");
                    skipped = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let n = batch.len() as f32;
        let mut grads: Vec<Tensor> = self
            .network
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        for o in &outcomes {
            for (acc, g) in grads.iter_mut().zip(&o.grads) {
                for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v / n;
                }
            }
        }
        let norm = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt() as f32;
        let clipped = norm > self.config.grad_clip;
        if clipped {
            let s = self.config.grad_clip / norm;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
            log::debug!(
                "step {next}: gradient norm {norm:.3} clipped to {}",
                self.config.grad_clip
            );
        }
        if !skipped {
            skipped = !adam_step(self.network.params_mut(), &grads, &mut self.adam, lr);
        }
        if !skipped {
            for o in &outcomes {
                if let Some((m, v)) = &o.stats {
                    self.network.update_running_stats(m, v);
                }
            }
        }
        let breakdowns: Vec<LossBreakdown> = outcomes.iter().map(|o| o.breakdown.clone()).collect();
        let k = outcomes.len().max(1) as f32;
        let counts = outcomes
            .iter()
            .fold(KeypointCounts::default(), |acc, o| KeypointCounts {
                detected: acc.detected + o.counts.detected / k,
                random: acc.random + o.counts.random / k,
                labelled: acc.labelled + o.counts.labelled / k,
            });
        Ok(StepLog {
            epoch: self.epoch,
            step: self.adam.step,
            lr,
            loss: LossBreakdown::mean(&breakdowns),
            keypoints: counts,
            grad_norm: norm,
            clipped,
            skipped,
            resampled: vec![],
        })
    }

    /// Runs the rest of the current epoch (or until `max_steps`), calling
    /// `sink` after every step. Advances to the next epoch when complete.
    pub fn run_epoch(
        &mut self,
        sources: &[&dyn TripletSource],
        sink: &mut dyn FnMut(&StepLog) -> Result<()>,
    ) -> Result<EpochSummary> {
        let lens: Vec<usize> = sources.iter().map(|s| s.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0xe90c_0000);
        rng.set_stream(self.epoch as u64);
        let plan = epoch_plan(
            &lens,
            self.config.epoch_frame_cap,
            self.config.batch_size,
            &mut rng,
        )?;
        let mut resampled: Vec<String> = plan
            .resampled
            .iter()
            .map(|&d| sources[d].name().to_string())
            .collect();
        for name in &resampled {
            log::info!("epoch {}: dataset {name} exhausted, resampling", self.epoch);
        }
        let (mut steps, mut frames, mut total) = (0usize, 0usize, 0.0f32);
        while self.batch_in_epoch < plan.batches.len() {
            if self.config.max_steps.is_some_and(|m| self.adam.step >= m) {
                break;
            }
            let batch = plan.batches[self.batch_in_epoch]
                .iter()
                .map(|&(d, i)| sources[d].get(i))
                .collect::<Result<Vec<_>>>()?;
            let mut log = self.step(&batch)?;
            log.resampled = std::mem::take(&mut resampled);
            self.batch_in_epoch += 1;
            steps += 1;
            frames += batch.len();
            total += log.loss.total;
            sink(&log)?;
        }
        let summary = EpochSummary {
            epoch: self.epoch,
            steps,
            frames,
            mean_total: total / steps.max(1) as f32,
        };
        if self.batch_in_epoch >= plan.batches.len() {
            self.epoch += 1;
            self.batch_in_epoch = 0;
        }
        Ok(summary)
    }

    /// Trains until `epochs` or `max_steps` is reached.
    pub fn train(
        &mut self,
        sources: &[&dyn TripletSource],
        sink: &mut dyn FnMut(&StepLog) -> Result<()>,
    ) -> Result<Vec<EpochSummary>> {
        if sources.is_empty() || sources.iter().any(|s| s.is_empty()) {
            return Err(TrainError::Config(
                "every training dataset needs at least one triplet".into(),
            ));
        }
        let mut out = Vec::new();
        while !self.done() {
            out.push(self.run_epoch(sources, sink)?);
        }
        Ok(out)
    }

    /// Parameters, running statistics, Adam moments and schedule position.
    pub fn checkpoint(&self) -> Checkpoint {
        let extra = serde_json::json!({
            "train_config": self.config,
            "batch_in_epoch": self.batch_in_epoch,
        });
        let mut ck = Checkpoint::from_network(&self.network, self.epoch, self.adam.step, extra);
        for (p, (m, v)) in self
            .network
            .params()
            .iter()
            .zip(self.adam.m.iter().zip(&self.adam.v))
        {
            ck.push(format!("adam.m.{}", p.name), m.clone());
            ck.push(format!("adam.v.{}", p.name), v.clone());
        }
        ck
    }

    /// Continues from a checkpoint. The model section of `config` must match
    /// the stored one.
    pub fn resume(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let network = ck.to_network_checked(&config.model)?;
        let mut adam = AdamState::new(network.params(), config.adam);
        for (k, p) in network.params().iter().enumerate() {
            for (slot, prefix) in [(&mut adam.m[k], "adam.m."), (&mut adam.v[k], "adam.v.")] {
                let name = format!("{prefix}{}", p.name);
                let t = ck.get(&name).ok_or_else(|| {
                    ModelError::Checkpoint(format!("missing optimiser tensor {name}"))
                })?;
                if t.shape() != p.value.shape() {
                    return Err(
                        ModelError::Checkpoint(format!("{name}: shape {:?}", t.shape())).into(),
                    );
                }
                *slot = t.clone();
            }
        }
        adam.step = ck.meta.step;
        let batch_in_epoch = ck
            .meta
            .extra
            .get("batch_in_epoch")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as usize;
        Ok(Self {
            network,
            adam,
            config,
            epoch: ck.meta.epoch.max(1),
            batch_in_epoch,
        })
    }
}
