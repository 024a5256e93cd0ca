use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::index;

use super::{learning_rate, prepare_sample, save_checkpoint, train_step, AdamW, Checkpoint, PreparedSample, TrainConfig};
use crate::diffusion::DiffusionSchedule;
use crate::error::{DimpError, Result};
use crate::losses::LossReport;
use crate::model::ModelState;
use crate::rng;
use crate::synthdata::{Dataset, Split};

const INIT_STREAM: u64 = 0x1417;
const BATCH_STREAM: u64 = 0xba7c;

/// Owns the model, optimizer and step counter of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub state: ModelState,
    pub opt: AdamW,
    /// Steps completed.
    pub step: usize,
    center: DiffusionSchedule,
    motion: DiffusionSchedule,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = ModelState::init(config.model.clone(), rng::derive(config.seed, &[INIT_STREAM]))?;
        let opt = AdamW::new(state.store());
        let (center, motion) = config.schedules()?;
        Ok(Self {
            config,
            state,
            opt,
            step: 0,
            center,
            motion,
        })
    }

    /// Continue from a checkpoint that carries optimizer state.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let state = ckpt.state()?;
        let opt = ckpt
            .adamw()
            .ok_or_else(|| DimpError::Incompatible("checkpoint has no optimizer state to resume from".into()))?;
        if opt.m.len() != state.store().len() {
            return Err(DimpError::Incompatible("optimizer state does not match the parameters".into()));
        }
        Ok(Self {
            config: ckpt.config.clone(),
            state,
            opt,
            step: ckpt.step,
            center: ckpt.center_schedule.build()?,
            motion: ckpt.motion_schedule.build()?,
        })
    }

    pub fn center_schedule(&self) -> &DiffusionSchedule {
        &self.center
    }

    pub fn motion_schedule(&self) -> &DiffusionSchedule {
        &self.motion
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.config, &self.state, Some(&self.opt), self.step)
    }

    /// Learning rate of the next step.
    pub fn lr(&self) -> f64 {
        learning_rate(&self.config.optimizer, self.step, self.config.steps)
    }

    /// Training items of step `step`, drawn without replacement.
    pub fn batch_indices(&self, dataset: &Dataset, step: usize) -> Result<Vec<usize>> {
        let train = dataset.indices(Split::Train);
        if train.is_empty() {
            return Err(DimpError::invalid("dataset has no training items"));
        }
        let k = self.config.batch_size.min(train.len());
        let mut r = rng::seeded(rng::derive(self.config.seed, &[BATCH_STREAM, step as u64]));
        Ok(index::sample(&mut r, train.len(), k).into_iter().map(|i| train[i]).collect())
    }

    pub fn prepare(&self, dataset: &Dataset, step: usize) -> Result<Vec<PreparedSample>> {
        self.batch_indices(dataset, step)?
            .into_iter()
            .enumerate()
            .map(|(j, i)| {
                let item = &dataset.items[i];
                let seed = rng::derive(self.config.seed, &[step as u64, j as u64]);
                prepare_sample(&item.sequence, &item.motion, &self.state, &self.center, seed)
            })
            .collect()
    }

    pub fn train_one(&mut self, dataset: &Dataset) -> Result<LossReport> {
        let samples = self.prepare(dataset, self.step)?;
        let lr = self.lr();
        let report = train_step(
            &mut self.state,
            &mut self.opt,
            &samples,
            &self.motion,
            &self.config,
            lr,
            self.step,
        )?;
        self.step += 1;
        Ok(report)
    }

    /// Train until `until` steps are complete, appending one metrics row per
    /// step and saving periodic checkpoints to `ckpt_dir`.
    pub fn run(
        &mut self,
        dataset: &Dataset,
        until: usize,
        mut metrics: Option<&mut dyn Write>,
        ckpt_dir: Option<&Path>,
    ) -> Result<Vec<LossReport>> {
        let start = Instant::now();
        let mut reports = Vec::with_capacity(until.saturating_sub(self.step));
        while self.step < until {
            let lr = self.lr();
            let report = self.train_one(dataset)?;
            if let Some(w) = metrics.as_deref_mut() {
                let row = metrics_row(self.step, &report, lr, start.elapsed().as_secs_f64(), self.config.model.h);
                w.write_all(row.as_bytes())
                    .map_err(|e| DimpError::io("metrics", e))?;
            }
            reports.push(report);
            if let Some(dir) = ckpt_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step % every == 0 && self.step < until {
                    save_checkpoint(&self.checkpoint(), &dir.join(format!("step_{:06}.ckpt", self.step)))?;
                }
            }
        }
        Ok(reports)
    }
}

pub fn metrics_header(h: usize) -> String {
    let mut cols = vec!["step".to_string(), "l_cen".into(), "l_geo".into(), "l_mot".into()];
    cols.extend((1..=h).map(|i| format!("l_mot_{i}")));
    cols.extend(["l_total".into(), "lr".into(), "wall_time".into()]);
    cols.join(",") + "\n"
}

/// One CSV row; interval columns are empty when the run has no stratified
/// motion loss.
pub fn metrics_row(step: usize, r: &LossReport, lr: f64, wall_time: f64, h: usize) -> String {
    let mut cols = vec![step.to_string(), r.l_cen.to_string(), r.l_geo.to_string(), r.l_mot.to_string()];
    for i in 0..h {
        cols.push(if r.per_interval_mot.len() == h {
            r.per_interval_mot[i].to_string()
        } else {
            String::new()
        });
    }
    cols.extend([r.l_total.to_string(), lr.to_string(), format!("{wall_time:.3}")]);
    cols.join(",") + "\n"
}
