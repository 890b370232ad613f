use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ScenePair;
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::trainer::config::{derive_seed, TrainConfig};
use crate::trainer::state::{Batch, TrainState};

/// Sub-seed offset of the per-epoch shuffles.
const SHUFFLE_SEED_BASE: u64 = 1 << 32;

pub fn metrics_header() -> String {
    format!("{},epoch,alpha,beta", LossReport::CSV_HEADER)
}

/// One metric-log row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 0-based index of the step.
    pub step: u64,
    /// 1-based epoch.
    pub epoch: u64,
    pub alpha: f32,
    pub beta: f32,
    pub report: LossReport,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.report.csv_row(self.step), self.epoch, self.alpha, self.beta)
    }
}

/// Name of the periodic checkpoint written after `step` steps.
pub fn periodic_checkpoint_name(step: u64) -> String {
    format!("checkpoint-{step:08}.sack")
}

/// Steps per epoch: one pass over the smaller corpus.
pub fn steps_per_epoch(cfg: &TrainConfig, n_virtual: usize, n_real: usize) -> u64 {
    (n_virtual.min(n_real) / cfg.batch_size) as u64
}

/// Visiting order of both corpora in 1-based `epoch`.
pub fn epoch_order(cfg: &TrainConfig, epoch: u64, n_virtual: usize, n_real: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_SEED_BASE + epoch));
    let mut v: Vec<usize> = (0..n_virtual).collect();
    let mut r: Vec<usize> = (0..n_real).collect();
    v.shuffle(&mut rng);
    r.shuffle(&mut rng);
    (v, r)
}

fn check_corpus(cfg: &TrainConfig, name: &str, scenes: &[ScenePair]) -> Result<()> {
    for (i, s) in scenes.iter().enumerate() {
        if (s.height(), s.width()) != (cfg.height, cfg.width) {
            return Err(Error::Corpus(format!(
                "{name} scene {i} is {}x{}, config expects {}x{}",
                s.height(),
                s.width(),
                cfg.height,
                cfg.width
            )));
        }
        if s.labels.num_classes() != cfg.num_classes {
            return Err(Error::Corpus(format!(
                "{name} scene {i} has {} classes, config expects {}",
                s.labels.num_classes(),
                cfg.num_classes
            )));
        }
    }
    Ok(())
}

/// Keep the header and the rows of steps before `step`.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = metrics_header() + "\n";
    for line in text.lines().skip(1) {
        let row_step: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
        if matches!(row_step, Some(s) if s < step) {
            out.push_str(line);
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Where [`run_training`] writes its outputs.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub out_dir: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunPaths {
    pub fn new(cfg: &TrainConfig, out_dir: &Path) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            metrics: out_dir.join(&cfg.metrics_file),
            checkpoint: out_dir.join(&cfg.checkpoint_file),
        }
    }
}

/// Train on in-memory corpora, writing the metric log and checkpoints into
/// `out_dir`. With `resume`, training continues from that checkpoint (whose
/// stored configuration replaces `cfg`) and the metric log keeps only rows
/// of earlier steps. `on_step` observes every logged row.
pub fn run_training(
    cfg: &TrainConfig,
    virt: &[ScenePair],
    real: &[ScenePair],
    out_dir: &Path,
    resume: Option<&Path>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainState> {
    let mut state = match resume {
        Some(p) => TrainState::load(p)?,
        None => TrainState::new(cfg.clone())?,
    };
    let cfg = state.config.clone();
    check_corpus(&cfg, "virtual", virt)?;
    check_corpus(&cfg, "real", real)?;
    let spe = steps_per_epoch(&cfg, virt.len(), real.len());
    if cfg.epochs > 0 && spe == 0 {
        return Err(Error::Corpus(format!(
            "corpora of {} and {} scenes cannot fill a batch of {}",
            virt.len(),
            real.len(),
            cfg.batch_size
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = RunPaths::new(&cfg, out_dir);
    if resume.is_some() {
        truncate_metrics(&paths.metrics, state.step)?;
    } else {
        std::fs::write(&paths.metrics, metrics_header() + "\n").map_err(|e| Error::io(&paths.metrics, e))?;
    }
    let file = OpenOptions::new()
        .append(true)
        .open(&paths.metrics)
        .map_err(|e| Error::io(&paths.metrics, e))?;
    let mut log: BufWriter<File> = BufWriter::new(file);

    let total = cfg.epochs * spe;
    while state.step < total {
        let epoch = state.step / spe + 1;
        let (order_v, order_r) = epoch_order(&cfg, epoch, virt.len(), real.len());
        let p = cfg.softness(epoch);
        while state.step < epoch * spe {
            let k = (state.step % spe) as usize * cfg.batch_size;
            let vs: Vec<&ScenePair> = order_v[k..k + cfg.batch_size].iter().map(|&i| &virt[i]).collect();
            let rs: Vec<&ScenePair> = order_r[k..k + cfg.batch_size].iter().map(|&i| &real[i]).collect();
            let batch = Batch::from_scenes(&vs, &rs)?;
            let step = state.step;
            let report = state.train_step(&batch, p)?;
            let rec = StepRecord {
                step,
                epoch,
                alpha: p.alpha(),
                beta: p.beta(),
                report,
            };
            writeln!(log, "{}", rec.csv_row()).map_err(|e| Error::io(&paths.metrics, e))?;
            on_step(&rec);
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < total {
                log.flush().map_err(|e| Error::io(&paths.metrics, e))?;
                state.save(&out_dir.join(periodic_checkpoint_name(state.step)))?;
            }
        }
    }
    log.flush().map_err(|e| Error::io(&paths.metrics, e))?;
    state.save(&paths.checkpoint)?;
    Ok(state)
}

/// Parse a metric log written by [`run_training`].
pub fn read_metrics(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(metrics_header().as_str()) {
        return Err(Error::Corpus(format!("{}: unexpected metric header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Corpus(format!("{}:{}: malformed metric row", path.display(), i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(bad());
            }
            let num = |k: usize| f[k].parse::<f32>().map_err(|_| bad());
            Ok(StepRecord {
                step: f[0].parse().map_err(|_| bad())?,
                report: LossReport {
                    adv_g_v2r: num(1)?,
                    adv_g_r2v: num(2)?,
                    adv_d_r: num(3)?,
                    adv_d_v: num(4)?,
                    cycle: num(5)?,
                    grad_sens: num(6)?,
                    total: num(7)?,
                },
                epoch: f[8].parse().map_err(|_| bad())?,
                alpha: num(9)?,
                beta: num(10)?,
            })
        })
        .collect()
}
