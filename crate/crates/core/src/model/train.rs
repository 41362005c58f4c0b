use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::loss::position_map_loss;
use super::net::Model;
use crate::autodiff::{Adam, Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::PositionMap;
use crate::metrics::{evaluate_sequence, report_table, MetricReport};
use crate::signal::EegWindow;

/// Where a training pair came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairMeta {
    pub subject_id: String,
    pub trial_id: String,
    pub segment: usize,
    pub frame_index: usize,
}

/// Indexed access to aligned (window, position map) pairs.
///
/// Targets are produced on demand so a long sequence never has to sit in
/// memory as dense maps.
pub trait PairSource: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn meta(&self, i: usize) -> &PairMeta;
    fn window(&self, i: usize) -> &EegWindow;
    fn target(&self, i: usize) -> Result<PositionMap>;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub holdout: Vec<usize>,
    pub holdout_trial: Option<String>,
}

/// Final segment of every trial goes to test, the rest to train; the
/// designated holdout trial is withheld entirely.
pub fn make_splits(meta: &[PairMeta], holdout_trial: Option<&str>) -> Result<Splits> {
    let mut last_segment: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for m in meta {
        let e = last_segment.entry(&m.trial_id).or_insert((m.segment, m.segment));
        e.0 = e.0.min(m.segment);
        e.1 = e.1.max(m.segment);
    }
    if let Some(h) = holdout_trial {
        if !last_segment.contains_key(h) {
            return Err(Error::Config(format!("holdout trial {h} is not in the dataset")));
        }
    }
    for (trial, (lo, hi)) in &last_segment {
        if Some(*trial) != holdout_trial && lo == hi {
            return Err(Error::Contract(format!("trial {trial} has a single stimulus segment")));
        }
    }
    let mut s = Splits {
        holdout_trial: holdout_trial.map(str::to_owned),
        ..Default::default()
    };
    for (i, m) in meta.iter().enumerate() {
        if Some(m.trial_id.as_str()) == holdout_trial {
            s.holdout.push(i);
        } else if m.segment == last_segment[m.trial_id.as_str()].1 {
            s.test.push(i);
        } else {
            s.train.push(i);
        }
    }
    Ok(s)
}

/// Stack windows into the `[B, 1, C, W]` encoder layout (windows are stored time-major).
pub fn batch_windows(windows: &[&EegWindow]) -> Result<Tensor<f32>> {
    let first = windows.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
    let (w, c) = (first.window, first.channels);
    let mut data = Vec::with_capacity(windows.len() * w * c);
    for win in windows {
        if win.window != w || win.channels != c || win.data.len() != w * c {
            return Err(Error::dim("batch", format!("window {}x{} in a {w}x{c} batch", win.window, win.channels)));
        }
        for ch in 0..c {
            data.extend(win.data.iter().skip(ch).step_by(c));
        }
    }
    Tensor::new(&[windows.len(), 1, c, w], data)
}

fn batch_targets(maps: &[PositionMap]) -> Result<(Tensor<f32>, Vec<u8>)> {
    let (h, w) = (maps[0].height, maps[0].width);
    let mut data = Vec::with_capacity(maps.len() * 3 * h * w);
    let mut mask = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        data.extend(m.to_planar());
        mask.extend_from_slice(&m.mask);
    }
    Ok((Tensor::new(&[maps.len(), 3, h, w], data)?, mask))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub rec: f64,
    pub smooth: f64,
    pub total: f64,
}

/// Model, optimizer and random streams of a training run.
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    optimizer: Adam,
    dropout_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    pub history: Vec<LossRecord>,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            optimizer: Adam::new(cfg.optimizer, &model.params),
            dropout_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d20f),
            shuffle_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5ff1),
            model,
            cfg,
            history: Vec::new(),
            epoch: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.history.len()
    }

    /// One forward/backward/update on the given pairs.
    pub fn train_step(&mut self, windows: &[&EegWindow], targets: &[PositionMap]) -> Result<LossRecord> {
        let input = batch_windows(windows)?;
        let (target, mask) = batch_targets(targets)?;
        let mut tape = Tape::new();
        let vars = self.model.params.register(&mut tape);
        let x = tape.constant(input);
        let pred = self.model.forward(&mut tape, &vars, x, true, &mut self.dropout_rng)?;
        let parts = position_map_loss(&mut tape, pred, &target, &mask, &self.cfg.loss)?;
        let total = tape.value(parts.total).item() as f64;
        let record = LossRecord {
            step: self.history.len() + 1,
            epoch: self.epoch,
            rec: parts.rec,
            smooth: parts.smooth,
            total,
        };
        if !total.is_finite() {
            let worst = self
                .model
                .params
                .iter()
                .map(|(n, t)| (n.to_owned(), t.max_abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(n, v)| format!("{n} (max |w| = {v:e})"))
                .unwrap_or_default();
            return Err(Error::Data(format!(
                "non-finite loss at step {}: rec {}, smooth {}; largest parameter {worst}",
                record.step, record.rec, record.smooth
            )));
        }
        tape.backward(parts.total)?;
        let grads = self.model.params.gradients(&tape, &vars)?;
        for (g, (name, _)) in grads.iter().zip(self.model.params.iter()) {
            g.check_finite(&format!("gradient of {name}"))?;
        }
        self.optimizer.step(&mut self.model.params, &grads)?;
        self.history.push(record.clone());
        Ok(record)
    }

    /// Shuffled mini-batch epochs over `indices` until the epoch or step budget runs out.
    ///
    /// `on_step` sees every record and may write checkpoints.
    pub fn fit(
        &mut self,
        source: &dyn PairSource,
        indices: &[usize],
        mut on_step: impl FnMut(&Trainer, &LossRecord) -> Result<()>,
    ) -> Result<()> {
        if indices.is_empty() {
            return Err(Error::Data("no training pairs".into()));
        }
        let budget = self.cfg.max_steps.unwrap_or(usize::MAX);
        let mut order = indices.to_vec();
        while self.epoch < self.cfg.epochs && self.steps() < budget {
            order.shuffle(&mut self.shuffle_rng);
            for chunk in order.chunks(self.cfg.batch) {
                if self.steps() >= budget {
                    break;
                }
                let windows: Vec<&EegWindow> = chunk.iter().map(|&i| source.window(i)).collect();
                let targets = chunk.iter().map(|&i| source.target(i)).collect::<Result<Vec<_>>>()?;
                let rec = self.train_step(&windows, &targets)?;
                if rec.step % 10 == 0 || rec.step == 1 {
                    info!("step {} epoch {} loss {:.6e} (rec {:.6e}, smooth {:.6e})", rec.step, rec.epoch, rec.total, rec.rec, rec.smooth);
                }
                on_step(self, &rec)?;
            }
            self.epoch += 1;
        }
        Ok(())
    }
}

pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,epoch,rec,smooth,total\n");
    for r in history {
        let _ = writeln!(s, "{},{},{:e},{:e},{:e}", r.step, r.epoch, r.rec, r.smooth, r.total);
    }
    s
}

/// Eval-mode predictions for `indices`, returned as position maps carrying each target's mask.
pub fn predict_maps(model: &Model, source: &dyn PairSource, indices: &[usize], batch: usize) -> Result<Vec<PositionMap>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch.max(1)) {
        let windows: Vec<&EegWindow> = chunk.iter().map(|&i| source.window(i)).collect();
        let pred = model.predict(batch_windows(&windows)?)?;
        let &[_, _, h, w] = pred.shape() else { unreachable!() };
        for (k, &i) in chunk.iter().enumerate() {
            let t = source.target(i)?;
            let planar = &pred.data()[k * 3 * h * w..(k + 1) * 3 * h * w];
            out.push(PositionMap::from_planar(h, w, planar, t.mask)?);
        }
    }
    Ok(out)
}

/// Per-trial nMAE/nRMSE over the test pairs and the holdout trial.
pub fn evaluate(model: &Model, source: &dyn PairSource, splits: &Splits) -> Result<MetricReport> {
    let mut by_trial: BTreeMap<(bool, String), Vec<usize>> = BTreeMap::new();
    for &i in &splits.test {
        by_trial.entry((false, source.meta(i).trial_id.clone())).or_default().push(i);
    }
    for &i in &splits.holdout {
        by_trial.entry((true, source.meta(i).trial_id.clone())).or_default().push(i);
    }
    let subject = splits
        .test
        .iter()
        .chain(&splits.holdout)
        .next()
        .map(|&i| source.meta(i).subject_id.clone())
        .unwrap_or_default();
    let mut rows = Vec::new();
    for ((holdout, trial), idx) in by_trial {
        let pred = predict_maps(model, source, &idx, 8)?;
        let truth = idx.iter().map(|&i| source.target(i)).collect::<Result<Vec<_>>>()?;
        rows.push(evaluate_sequence(&trial, &pred, &truth, holdout)?);
    }
    report_table(&subject, rows)
}
