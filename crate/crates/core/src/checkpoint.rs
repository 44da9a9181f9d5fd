//! Versioned checkpoint container.
//!
//! A checkpoint is a UTF-8 header of `key value` lines closed by a line
//! `end`, followed by every matrix as little-endian `f64` in row-major order:
//! `w_ff[0..P]`, `w_fb[1..P]`, then the lateral inverses `B[1..=P]`.
//!
//! ```text
//! corinfomax-checkpoint
//! version 1
//! epoch 3
//! ...
//! config {"epochs":30,...}
//! matrix w_ff[0] 500 784
//! end
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::config::RunConfig;
use crate::corrinfo::CorrelationInverse;
use crate::error::{Error, Result};
use crate::learning::TrainSchedule;
use crate::network::SynapticState;
use crate::Real;

pub const FORMAT_NAME: &str = "corinfomax-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// Training progress stored next to the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    /// Completed epochs.
    pub epoch: usize,
    pub schedule: TrainSchedule,
    pub best_test_top1: Option<f64>,
    pub best_epoch: Option<usize>,
}

impl CheckpointMeta {
    pub fn initial(cfg: &RunConfig) -> Self {
        Self {
            epoch: 0,
            schedule: TrainSchedule::new(&cfg.network),
            best_test_top1: None,
            best_epoch: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: SynapticState<f64>,
    pub meta: CheckpointMeta,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

pub fn write_checkpoint<F: Real, W: Write>(
    mut out: W,
    cfg: &RunConfig,
    state: &SynapticState<F>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let config = serde_json::to_string(cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut header = String::new();
    header.push_str(&format!("{FORMAT_NAME}\nversion {FORMAT_VERSION}\n"));
    header.push_str(&format!("epoch {}\n", meta.epoch));
    header.push_str(&format!("schedule_epoch {}\n", meta.schedule.epoch));
    header.push_str(&format!("mu_ff {}\n", join(&meta.schedule.mu_ff)));
    header.push_str(&format!("mu_fb {}\n", join(&meta.schedule.mu_fb)));
    header.push_str(&format!("best_test_top1 {}\n", opt(meta.best_test_top1)));
    header.push_str(&format!("best_epoch {}\n", opt(meta.best_epoch)));
    header.push_str(&format!("config {config}\n"));
    let mut mats: Vec<(String, &Array2<F>)> = Vec::new();
    for (k, m) in state.w_ff.iter().enumerate() {
        mats.push((format!("w_ff[{k}]"), m));
    }
    for (i, m) in state.w_fb.iter().enumerate() {
        mats.push((format!("w_fb[{}]", i + 1), m));
    }
    for (i, c) in state.lateral.iter().enumerate() {
        mats.push((format!("lateral[{}]", i + 1), &c.b));
    }
    for (name, m) in &mats {
        header.push_str(&format!("matrix {name} {} {}\n", m.nrows(), m.ncols()));
    }
    header.push_str("end\n");
    out.write_all(header.as_bytes())?;
    for (_, m) in &mats {
        let mut buf = Vec::with_capacity(m.len() * 8);
        for v in m.iter() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes through a temporary file so a crash never leaves a torn checkpoint.
pub fn save_checkpoint<F: Real>(
    path: &Path,
    cfg: &RunConfig,
    state: &SynapticState<F>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp)?;
        write_checkpoint(BufWriter::new(file), cfg, state, meta)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number `{t}`"))))
        .collect()
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>> {
    if s == "none" {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| bad(format!("bad value `{s}`")))
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<R>| -> Result<String> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };

    if next_line(&mut reader)? != FORMAT_NAME {
        return Err(bad("not a checkpoint file"));
    }
    let version = next_line(&mut reader)?;
    match version.strip_prefix("version ").map(str::parse::<u32>) {
        Some(Ok(FORMAT_VERSION)) => {}
        _ => return Err(bad(format!("unsupported checkpoint version `{version}`"))),
    }

    let mut epoch = None;
    let mut schedule_epoch = None;
    let mut mu_ff = None;
    let mut mu_fb = None;
    let mut best_test_top1 = None;
    let mut best_epoch = None;
    let mut config: Option<RunConfig> = None;
    let mut shapes: Vec<(String, usize, usize)> = Vec::new();
    loop {
        let l = next_line(&mut reader)?;
        if l == "end" {
            break;
        }
        let (key, value) = l.split_once(' ').unwrap_or((l.as_str(), ""));
        match key {
            "epoch" => epoch = Some(value.parse().map_err(|_| bad("bad epoch"))?),
            "schedule_epoch" => schedule_epoch = Some(value.parse().map_err(|_| bad("bad schedule epoch"))?),
            "mu_ff" => mu_ff = Some(parse_list(value)?),
            "mu_fb" => mu_fb = Some(parse_list(value)?),
            "best_test_top1" => best_test_top1 = parse_opt(value)?,
            "best_epoch" => best_epoch = parse_opt(value)?,
            "config" => {
                let cfg: RunConfig = serde_json::from_str(value).map_err(|e| bad(format!("config echo: {e}")))?;
                config = Some(cfg);
            }
            "matrix" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(bad(format!("bad matrix line `{l}`")));
                }
                let r = parts[1].parse().map_err(|_| bad("bad row count"))?;
                let c = parts[2].parse().map_err(|_| bad("bad column count"))?;
                shapes.push((parts[0].to_string(), r, c));
            }
            other => return Err(bad(format!("unknown header key `{other}`"))),
        }
    }
    let config = config.ok_or_else(|| bad("missing config echo"))?;
    config.validate()?;
    let net = &config.network;
    let p = net.depth();
    if shapes.len() != 2 * p + p - 1 {
        return Err(bad(format!("expected {} matrices, found {}", 3 * p - 1, shapes.len())));
    }

    let mut mats = Vec::with_capacity(shapes.len());
    for (name, r, c) in &shapes {
        let mut buf = vec![0u8; r * c * 8];
        reader
            .read_exact(&mut buf)
            .map_err(|_| bad(format!("truncated data for {name}")))?;
        let vals: Vec<f64> = buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        mats.push(Array2::from_shape_vec((*r, *c), vals).expect("length matches shape"));
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }

    let mut it = mats.into_iter();
    let w_ff: Vec<_> = it.by_ref().take(p).collect();
    let w_fb: Vec<_> = it.by_ref().take(p - 1).collect();
    let lateral = it
        .enumerate()
        .map(|(i, b)| {
            CorrelationInverse::with_initial(b, net.epsilon[i], net.lambda_r).map(|c| c.with_mode(net.inverse_update))
        })
        .collect::<Result<Vec<_>>>()?;
    let state = SynapticState { w_ff, w_fb, lateral };
    state.check_shapes(net).map_err(|e| bad(e.to_string()))?;

    let meta = CheckpointMeta {
        epoch: epoch.ok_or_else(|| bad("missing epoch"))?,
        schedule: TrainSchedule {
            epoch: schedule_epoch.ok_or_else(|| bad("missing schedule epoch"))?,
            mu_ff: mu_ff.ok_or_else(|| bad("missing mu_ff"))?,
            mu_fb: mu_fb.ok_or_else(|| bad("missing mu_fb"))?,
            rule: net.lr_decay.clone(),
        },
        best_test_top1,
        best_epoch,
    };
    Ok(Checkpoint { config, state, meta })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    read_checkpoint(file)
}
