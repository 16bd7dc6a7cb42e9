use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::checkpoint::{store_records, trainable_names, Record, RngState};
use super::{loss_d, loss_g, make_pairs, Adam, Checkpoint, PairStream, TrainConfig};
use crate::nets::{Discriminator, Generator, Params};
use crate::tensor::{Graph, Mode, ParamKind, ParamStore};
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "step,loss_d,loss_g,l1";

/// Losses recorded after one step. `l1` is the unweighted reconstruction term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss_d: f32,
    pub loss_g: f32,
    pub l1: f32,
}

impl fmt::Display for StepMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.step, self.loss_d, self.loss_g, self.l1)
    }
}

/// Generator, discriminator, their optimizers, and the data stream.
pub struct Trainer {
    cfg: TrainConfig,
    gen: Generator<f32>,
    disc: Discriminator<f32>,
    adam_g: Adam<f32>,
    adam_d: Adam<f32>,
    data: PairStream,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: PairStream) -> Result<Self> {
        cfg.validate()?;
        if data.bits() != cfg.bits()? {
            return Err(Error::Config("data stream and config disagree on bits dropped".into()));
        }
        let gen = Generator::new(cfg.generator.clone())?;
        let disc = Discriminator::new(cfg.discriminator.clone(), cfg.seed)?;
        let adam_g = Adam::new(cfg.adam(), gen.params());
        let adam_d = Adam::new(cfg.adam(), disc.params());
        Ok(Self { cfg, gen, disc, adam_g, adam_d, data, step: 0 })
    }

    /// Restores the full state saved in `ck`; `data` must come from the same images.
    pub fn from_checkpoint(ck: &Checkpoint, mut data: PairStream) -> Result<Self> {
        data.set_rng(ck.data_rng.restore()?);
        let mut t = Self::new(ck.config.clone(), data)?;
        t.gen = ck.generator()?;
        t.disc = ck.discriminator()?;
        restore_adam(&mut t.adam_g, ck, t.gen.params(), ck.adam_g_step)?;
        restore_adam(&mut t.adam_d, ck, t.disc.params(), ck.adam_d_step)?;
        t.step = ck.step;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.gen
    }

    pub fn generator_mut(&mut self) -> &mut Generator<f32> {
        &mut self.gen
    }

    pub fn discriminator(&self) -> &Discriminator<f32> {
        &self.disc
    }

    pub fn data(&self) -> &PairStream {
        &self.data
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.step + 1;
        let (xb, yb) = self.data.next_batch(self.cfg.batch_size)?;
        let mut g = Graph::new();
        let x = g.input(xb);
        let y = g.input(yb);
        let y_hat = self.gen.forward(&mut g, x, Mode::Train)?;

        let fake_in = g.detach(y_hat);
        let real = self.disc.forward(&mut g, x, y, Mode::Train, Params::Trainable)?;
        let fake = self.disc.forward(&mut g, x, fake_in, Mode::Train, Params::Trainable)?;
        let ld = loss_d(&mut g, real, fake)?;
        let loss_d_value = g.value(ld).item();
        check_finite(step, "discriminator loss", loss_d_value)?;
        self.disc.params_mut().zero_grads();
        g.backward(ld, self.disc.params_mut())?;
        self.adam_d.step(self.disc.params_mut(), step)?;

        let judged = self.disc.forward(&mut g, x, y_hat, Mode::Train, Params::Frozen)?;
        let lg = loss_g(&mut g, judged, y_hat, y, self.cfg.lambda)?;
        let (loss_g_value, l1) = (g.value(lg.total).item(), g.value(lg.l1).item());
        check_finite(step, "generator loss", loss_g_value)?;
        self.gen.params_mut().zero_grads();
        g.backward(lg.total, self.gen.params_mut())?;
        self.adam_g.step(self.gen.params_mut(), step)?;

        self.step = step;
        Ok(StepMetrics { step, loss_d: loss_d_value, loss_g: loss_g_value, l1 })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut records = store_records("", self.gen.params());
        records.extend(store_records("", self.disc.params()));
        for (adam, store) in [(&self.adam_g, self.gen.params()), (&self.adam_d, self.disc.params())] {
            for (prefix, first) in [("adam.m.", true), ("adam.v.", false)] {
                for (id, name) in trainable_names(store) {
                    let values = if first { adam.first_moment(id) } else { adam.second_moment(id) };
                    records.push(Record {
                        name: format!("{prefix}{name}"),
                        dims: super::checkpoint::dims_of(store.get(id).shape()),
                        values: values.to_vec(),
                    });
                }
            }
        }
        Checkpoint {
            config: self.cfg.clone(),
            step: self.step,
            adam_g_step: self.adam_g.timestep(),
            adam_d_step: self.adam_d.timestep(),
            data_rng: RngState::capture(self.data.rng()),
            noise_rng: RngState::capture(self.gen.noise()),
            records,
        }
    }
}

fn check_finite(step: u64, what: &str, v: f32) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step, what: format!("{what} is {v}") })
    }
}

fn restore_adam(adam: &mut Adam<f32>, ck: &Checkpoint, store: &ParamStore<f32>, t: u64) -> Result<()> {
    let mut m = Vec::with_capacity(store.len());
    let mut v = Vec::with_capacity(store.len());
    for id in store.ids() {
        if store.kind(id) == ParamKind::Buffer {
            m.push(Vec::new());
            v.push(Vec::new());
            continue;
        }
        for (prefix, out) in [("adam.m.", &mut m), ("adam.v.", &mut v)] {
            let name = format!("{prefix}{}", store.name(id));
            let rec = ck.record(&name).ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))?;
            out.push(rec.values.clone());
        }
    }
    adam.restore(t, m, v)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Path of the checkpoint written after the last step.
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    /// Metrics of the steps run by this call.
    pub history: Vec<StepMetrics>,
}

/// Trains from scratch on the images in `data_dir`, writing checkpoints and `metrics.csv` to `out_dir`.
pub fn train(cfg: TrainConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = make_pairs(data_dir, cfg.bits()?, cfg.crop_size, cfg.seed)?;
    let trainer = Trainer::new(cfg, data)?;
    run(trainer, out_dir, Vec::new())
}

/// Continues the run saved in `checkpoint` up to `steps` total steps (the stored target when `None`).
/// Log rows past the checkpoint's step are discarded first, so the resumed log matches an uninterrupted one.
pub fn resume(checkpoint: &Path, data_dir: &Path, out_dir: &Path, steps: Option<u64>) -> Result<TrainOutcome> {
    let mut ck = Checkpoint::load(checkpoint)?;
    if let Some(s) = steps {
        ck.config.steps = s;
    }
    let data = make_pairs(data_dir, ck.config.bits()?, ck.config.crop_size, ck.config.seed)?;
    let trainer = Trainer::from_checkpoint(&ck, data)?;
    let log_path = out_dir.join(METRICS_FILE);
    let kept = match std::fs::read_to_string(&log_path) {
        Ok(text) => text
            .lines()
            .skip(1)
            .filter(|l| l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= ck.step))
            .map(str::to_owned)
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::File { path: log_path, source: e }),
    };
    run(trainer, out_dir, kept)
}

fn run(mut trainer: Trainer, out_dir: &Path, kept_rows: Vec<String>) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir).map_err(Error::file(out_dir))?;
    let log_path = out_dir.join(METRICS_FILE);
    let mut log = std::fs::File::create(&log_path).map_err(Error::file(&log_path))?;
    let mut text = format!("{METRICS_HEADER}\n");
    for row in kept_rows {
        text.push_str(&row);
        text.push('\n');
    }
    log.write_all(text.as_bytes()).map_err(Error::file(&log_path))?;

    let total = trainer.config().steps;
    let every = trainer.config().checkpoint_every;
    let mut history = Vec::new();
    while trainer.step_count() < total {
        let m = trainer.step()?;
        writeln!(log, "{m}").map_err(Error::file(&log_path))?;
        if m.step % 10 == 0 || m.step == total {
            log::info!("step {}/{total} loss_d {:.4} loss_g {:.4} l1 {:.5}", m.step, m.loss_d, m.loss_g, m.l1);
        }
        if every > 0 && m.step % every == 0 && m.step < total {
            trainer.checkpoint().save(out_dir.join(format!("checkpoint-{:06}.cdck", m.step)))?;
        }
        history.push(m);
    }
    log.flush().map_err(Error::file(&log_path))?;
    let checkpoint = out_dir.join("model.cdck");
    trainer.checkpoint().save(&checkpoint)?;
    Ok(TrainOutcome { checkpoint, metrics_log: log_path, history })
}
