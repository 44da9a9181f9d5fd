//! Epoch loop: training, evaluation, metric rows, checkpoints and resume.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::{NetworkConfig, Precision, RunConfig};
use crate::data::{batch_stream, load_dataset, prefetched, sequential_batches, Dataset, Split};
use crate::dynamics::{infer, run_phase_observed, ActivationState};
use crate::error::{Error, Result};
use crate::learning::{apply_updates, free_phase_metrics, BatchMetrics, PhasePair, TrainSchedule};
use crate::metrics::{weight_angle, Accuracy, MetricRecord, MetricsWriter, SplitKind, Tally};
use crate::network::{init_network, SynapticState};
use crate::Real;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LAST_CHECKPOINT: &str = "checkpoint-last.bin";
pub const BEST_CHECKPOINT: &str = "checkpoint-best.bin";
pub const LOCK_FILE: &str = ".lock";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub top1: f64,
    pub top5: Option<f64>,
    pub mse: f64,
    pub samples: usize,
}

impl From<(Accuracy, f64)> for Evaluation {
    fn from((a, mse): (Accuracy, f64)) -> Self {
        Self {
            top1: a.top1,
            top5: a.top5,
            mse,
            samples: a.samples,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train: Evaluation,
    pub test: Evaluation,
    /// Angles between `W_ff[k]` and `W_fb[k]ᵀ` for `k = 1..P`.
    pub angles: Vec<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub epochs_completed: usize,
    pub initial_angles: Vec<f64>,
    pub initial_test: Option<Evaluation>,
    pub final_test: Evaluation,
    pub best_test_top1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochReport>,
    pub wall_seconds: f64,
}

pub struct TrainOptions {
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    /// Layer whose first-sample `u`/`r` are dumped every step of the first
    /// batch of each epoch.
    pub trace_layer: Option<usize>,
    pub on_epoch: Option<Box<dyn Fn(&EpochReport)>>,
}

impl TrainOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            resume: None,
            trace_layer: None,
            on_epoch: None,
        }
    }
}

/// Exclusive ownership of a run directory for the lifetime of the guard.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn segment_angles<F: Real>(w: &SynapticState<F>) -> Result<Vec<f64>> {
    (1..w.depth())
        .map(|k| weight_angle(w.w_ff[k].view(), w.w_fb(k).view()))
        .collect()
}

/// Free-phase accuracy and output MSE over a whole dataset.
pub fn evaluate<F: Real>(
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
    data: &Dataset,
    batch_size: usize,
) -> Result<(Accuracy, f64)> {
    let mut tally = Tally::default();
    let mut sq = 0.0;
    for batch in sequential_batches::<F>(data, batch_size) {
        let out = infer(w, cfg, batch.x.view())?;
        tally.add(out.view(), &batch.labels)?;
        sq += ndarray::Zip::from(&out)
            .and(&batch.y)
            .fold(0.0, |acc, &r, &t| acc + (t - r).as_f64().powi(2));
    }
    Ok((tally.accuracy(), sq / tally.samples.max(1) as f64))
}

struct Tracer {
    out: BufWriter<File>,
    layer: usize,
}

impl Tracer {
    fn open(dir: &Path, layer: usize, append: bool) -> Result<Self> {
        let path = dir.join(TRACE_FILE);
        let fresh = !append || !path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(!fresh)
            .write(true)
            .truncate(fresh)
            .open(path)?;
        let mut out = BufWriter::new(file);
        if fresh {
            writeln!(out, "epoch,phase,step,unit,u,r")?;
        }
        Ok(Self { out, layer })
    }

    fn record<F: Real>(
        &mut self,
        epoch: usize,
        phase: &str,
        s: usize,
        state: &ActivationState<F>,
    ) -> std::io::Result<()> {
        let (u, r) = (&state.u[self.layer - 1], &state.r[self.layer - 1]);
        for unit in 0..u.nrows() {
            writeln!(self.out, "{epoch},{phase},{s},{unit},{},{}", u[[unit, 0]], r[[unit, 0]])?;
        }
        Ok(())
    }
}

fn traced_phases<F: Real>(
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
    x: ndarray::Array2<F>,
    y: ndarray::Array2<F>,
    epoch: usize,
    tracer: Option<&mut Tracer>,
) -> Result<PhasePair<F>> {
    let mut io_err = None;
    let pair = match tracer {
        None => crate::learning::run_phases(w, cfg, x, y)?,
        Some(t) => {
            let init = ActivationState::zeros(cfg, x, Some(y))?;
            let free = run_phase_observed(init, w, cfg, 0.0, cfg.t_free, |s, st| {
                if let Err(e) = t.record(epoch, "free", s, st) {
                    io_err.get_or_insert(e);
                }
            })?
            .state;
            let nudged = run_phase_observed(free.clone(), w, cfg, cfg.beta_prime, cfg.t_nudged, |s, st| {
                if let Err(e) = t.record(epoch, "nudged", s, st) {
                    io_err.get_or_insert(e);
                }
            })?
            .state;
            t.out.flush()?;
            PhasePair { free, nudged }
        }
    };
    match io_err {
        Some(e) => Err(e.into()),
        None => Ok(pair),
    }
}

/// Loads the configured datasets and trains.
pub fn train(cfg: &RunConfig, opts: &TrainOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let train_set = load_dataset(&cfg.dataset, Split::Train)?;
    let test_set = load_dataset(&cfg.dataset, Split::Test)?;
    train_on(cfg, opts, &train_set, &test_set)
}

/// Trains on already loaded data, dispatching on the configured precision.
pub fn train_on(cfg: &RunConfig, opts: &TrainOptions, train_set: &Dataset, test_set: &Dataset) -> Result<RunSummary> {
    cfg.validate()?;
    match cfg.network.precision {
        Precision::F64 => train_typed::<f64>(cfg, opts, train_set, test_set),
        Precision::F32 => train_typed::<f32>(cfg, opts, train_set, test_set),
    }
}

fn train_typed<F: Real>(
    cfg: &RunConfig,
    opts: &TrainOptions,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<RunSummary> {
    let net = &cfg.network;
    let dir = &opts.out_dir;
    fs::create_dir_all(dir)?;
    let _lock = RunLock::acquire(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string())?;

    let segments = net.depth() - 1;
    let started = Instant::now();
    let clock = |t: Instant| {
        if net.deterministic {
            0.0
        } else {
            t.elapsed().as_secs_f64()
        }
    };

    let (mut w, mut meta, mut metrics, initial_test) = match &opts.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.config.network.layer_sizes != net.layer_sizes {
                return Err(Error::config(
                    "network.layer_sizes",
                    format!("checkpoint has layers {:?}", ck.config.network.layer_sizes),
                ));
            }
            let metrics_path = dir.join(METRICS_FILE);
            let metrics = if metrics_path.exists() {
                MetricsWriter::append(&metrics_path, segments)?
            } else {
                MetricsWriter::create(&metrics_path, segments)?
            };
            (ck.state.cast::<F>(), ck.meta, metrics, None)
        }
        None => {
            let w = init_network::<F>(net)?;
            let meta = CheckpointMeta::initial(cfg);
            let mut metrics = MetricsWriter::create(&dir.join(METRICS_FILE), segments)?;
            let t0 = Instant::now();
            let test = Evaluation::from(evaluate(&w, net, test_set, cfg.dataset.eval_batch_size)?);
            metrics.write(&MetricRecord {
                epoch: 0,
                batch: 0,
                split: SplitKind::Test,
                top1: test.top1,
                top5: test.top5,
                mse: Some(test.mse),
                angles: segment_angles(&w)?,
                wall_seconds: clock(t0),
            })?;
            save_checkpoint(&dir.join(LAST_CHECKPOINT), cfg, &w, &meta)?;
            (w, meta, metrics, Some(test))
        }
    };
    let initial_angles = segment_angles(&w)?;
    let mut tracer = match opts.trace_layer {
        Some(k) if k >= 1 && k <= net.depth() => Some(Tracer::open(dir, k, opts.resume.is_some())?),
        Some(k) => {
            return Err(Error::config(
                "trace_layer",
                format!("layer {k} outside 1..={}", net.depth()),
            ))
        }
        None => None,
    };

    let mut history = Vec::new();
    let mut last_test = initial_test.clone();
    for epoch in (meta.epoch + 1)..=cfg.epochs {
        let t0 = Instant::now();
        let schedule: TrainSchedule = meta.schedule.clone();
        let mut totals = BatchMetrics::default();
        let stream = batch_stream::<F>(train_set, net.batch_size, net.seed, epoch);
        prefetched(stream, 4, |batches| -> Result<()> {
            for (i, batch) in batches.enumerate() {
                let bi = i + 1;
                let trace = if i == 0 { tracer.as_mut() } else { None };
                let pair = traced_phases(&w, net, batch.x, batch.y.clone(), epoch, trace).map_err(|e| {
                    if e.is_divergence() {
                        Error::TrainingDiverged { epoch, batch: bi }
                    } else {
                        e
                    }
                })?;
                let m = free_phase_metrics(&pair.free, &batch.y, &batch.labels)?;
                apply_updates(&mut w, &pair, net, &schedule)
                    .map_err(|_| Error::TrainingDiverged { epoch, batch: bi })?;
                totals.merge(&m);
                if cfg.log_every > 0 && bi % cfg.log_every == 0 {
                    metrics.write(&MetricRecord {
                        epoch,
                        batch: bi,
                        split: SplitKind::TrainBatch,
                        top1: totals.top1(),
                        top5: totals.tally.accuracy().top5,
                        mse: Some(totals.mse()),
                        angles: segment_angles(&w)?,
                        wall_seconds: clock(t0),
                    })?;
                }
            }
            Ok(())
        })?;
        meta.schedule.apply_epoch_decay(epoch);

        let batches = train_set.len().div_ceil(net.batch_size);
        let train_eval = Evaluation::from((totals.tally.accuracy(), totals.mse()));
        let test = Evaluation::from(evaluate(&w, net, test_set, cfg.dataset.eval_batch_size)?);
        let angles = segment_angles(&w)?;
        let seconds = clock(t0);
        for (split, e) in [(SplitKind::Train, &train_eval), (SplitKind::Test, &test)] {
            metrics.write(&MetricRecord {
                epoch,
                batch: batches,
                split,
                top1: e.top1,
                top5: e.top5,
                mse: Some(e.mse),
                angles: angles.clone(),
                wall_seconds: clock(t0),
            })?;
        }

        meta.epoch = epoch;
        let improved = meta.best_test_top1.is_none_or(|b| test.top1 > b);
        if improved {
            meta.best_test_top1 = Some(test.top1);
            meta.best_epoch = Some(epoch);
        }
        save_checkpoint(&dir.join(LAST_CHECKPOINT), cfg, &w, &meta)?;
        if improved {
            fs::copy(dir.join(LAST_CHECKPOINT), dir.join(BEST_CHECKPOINT))?;
        }

        let report = EpochReport {
            epoch,
            train: train_eval,
            test: test.clone(),
            angles,
            seconds,
        };
        if let Some(cb) = &opts.on_epoch {
            cb(&report);
        }
        history.push(report);
        last_test = Some(test);
    }

    let final_test = match last_test {
        Some(t) => t,
        None => Evaluation::from(evaluate(&w, net, test_set, cfg.dataset.eval_batch_size)?),
    };
    let summary = RunSummary {
        epochs_completed: meta.epoch,
        initial_angles,
        initial_test,
        final_test,
        best_test_top1: meta.best_test_top1,
        best_epoch: meta.best_epoch,
        history,
        wall_seconds: clock(started),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(dir.join(SUMMARY_FILE), json + "\n")?;
    Ok(summary)
}
