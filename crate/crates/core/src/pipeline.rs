//! File-level pipeline stages behind the command-line subcommands.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{hex, RunConfig};
use crate::energy::{ann_twin_ledger, EnergyLedger, EnergyReport};
use crate::error::{Error, Result};
use crate::preprocess::{preprocess_dataset, SpikeTensor, TensorEntry, TENSOR_MANIFEST_FILE};
use crate::sim::{build_dataset, read_jsonl, read_manifest, GrayImage, ManifestEntry, MANIFEST_FILE};
use crate::tensor::{Tape, Tensor};
use crate::train::{evaluate, Checkpoint, EpochRecord, EvalSummary, RunRecord, TrainSample, Trainer};

pub const CHECKPOINT_FILE: &str = "latest.ckpt";
pub const RUN_RECORD_FILE: &str = "run_record.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const ENERGY_FILE: &str = "energy.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Simulates the dataset into `out_dir`.
pub fn cmd_gen(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    build_dataset(&cfg.sim, cfg.samples, cfg.seed, out_dir, cfg.data_hash()?)
}

/// Preprocesses every sample of the manifest in `data_dir`.
pub fn cmd_preprocess(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<Vec<TensorEntry>> {
    cfg.validate()?;
    let entries = read_manifest(&data_dir.join(MANIFEST_FILE))?;
    preprocess_dataset(data_dir, &entries, &cfg.preprocess, out_dir, cfg.tensor_hash()?)
}

/// Loaded tensor set with its stamped hash.
pub struct TensorSet {
    pub entries: Vec<TensorEntry>,
    pub samples: Vec<TrainSample<f32>>,
    pub hash: u64,
}

impl TensorSet {
    /// Splits off the last `n_test` samples.
    pub fn split(&self, n_test: usize) -> (&[TrainSample<f32>], &[TrainSample<f32>]) {
        let n_train = self.samples.len().saturating_sub(n_test);
        self.samples.split_at(n_train)
    }
}

/// Reads `tensors.jsonl` and every referenced tensor and truth image.
pub fn load_tensor_set(dir: &Path) -> Result<TensorSet> {
    let entries: Vec<TensorEntry> = read_jsonl(&dir.join(TENSOR_MANIFEST_FILE))?;
    let hash = entries.first().map(|e| e.config_hash).unwrap_or(0);
    let mut samples = Vec::with_capacity(entries.len());
    for e in &entries {
        if e.config_hash != hash {
            return Err(Error::ConfigMismatch {
                expected: hash,
                found: e.config_hash,
            });
        }
        let spt = SpikeTensor::read(&dir.join(&e.tensor_file))?;
        if spt.config_hash != hash {
            return Err(Error::ConfigMismatch {
                expected: hash,
                found: spt.config_hash,
            });
        }
        let img = GrayImage::read_pgm(&dir.join(&e.truth_file))?;
        let truth = Tensor::new(vec![1, img.height, img.width], img.data)?;
        let t = spt.time_steps();
        if e.track.len() != t {
            return Err(Error::format(dir.join(TENSOR_MANIFEST_FILE), format!("{}: track length", e.id)));
        }
        let track = Tensor::new(vec![t, 2], e.track.iter().flat_map(|&(x, y)| [x, y]).collect())?;
        samples.push(TrainSample {
            id: e.id.clone(),
            input: spt.data,
            truth,
            track,
        });
    }
    Ok(TensorSet { entries, samples, hash })
}

#[derive(Serialize)]
struct LogLine<'a> {
    #[serde(flatten)]
    record: &'a EpochRecord,
    wall_clock_s: f64,
}

/// Trains up to `cfg.train.epochs` total epochs. With `resume`, continues
/// from the checkpoint in `run_dir`. Calls `on_epoch` after every epoch.
pub fn cmd_train(
    cfg: &RunConfig,
    tensor_dir: &Path,
    run_dir: &Path,
    resume: bool,
    force: bool,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunRecord> {
    cfg.validate()?;
    let set = load_tensor_set(tensor_dir)?;
    if set.hash != cfg.tensor_hash()? && !force {
        return Err(Error::ConfigMismatch {
            expected: cfg.tensor_hash()?,
            found: set.hash,
        });
    }
    let (train, test) = set.split(cfg.test_count(set.samples.len()));
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let ckpt_path = run_dir.join(CHECKPOINT_FILE);
    let (mut model, mut trainer) = if resume {
        let ck = Checkpoint::read(&ckpt_path)?;
        if ck.data_hash != set.hash && !force {
            return Err(Error::ConfigMismatch {
                expected: ck.data_hash,
                found: set.hash,
            });
        }
        let model = ck.into_model(Some(&cfg.arch))?;
        let mut trainer = Trainer::new(cfg.train.clone(), &model, ck.record.config_hash.clone())?;
        trainer.opt = ck.opt;
        trainer.opt.cfg = cfg.train.optimizer;
        trainer.record = ck.record;
        (model, trainer)
    } else {
        let model = crate::model::SnnModel::new(cfg.arch.clone(), cfg.seed)?;
        let trainer = Trainer::new(cfg.train.clone(), &model, hex(cfg.hash()?))?;
        (model, trainer)
    };
    let log_path = run_dir.join(TRAIN_LOG_FILE);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resume)
        .write(true)
        .truncate(!resume)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    while trainer.epochs_done() < cfg.train.epochs {
        let start = Instant::now();
        let rec = trainer.run_epoch(&mut model, train, test)?;
        let line = serde_json::to_string(&LogLine {
            record: &rec,
            wall_clock_s: start.elapsed().as_secs_f64(),
        })?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        if !trainer.record.checkpoints.iter().any(|c| c == CHECKPOINT_FILE) {
            trainer.record.checkpoints.push(CHECKPOINT_FILE.to_string());
        }
        Checkpoint::from_model(&model, &cfg.train, set.hash, &trainer.opt, &trainer.record).write(&ckpt_path)?;
        write_json(&run_dir.join(RUN_RECORD_FILE), &trainer.record)?;
        on_epoch(&rec);
    }
    Ok(trainer.record)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub data_hash: String,
    pub checkpoint: PathBuf,
    pub split: String,
    #[serde(flatten)]
    pub summary: EvalSummary,
}

/// Evaluates a checkpoint on the held-out split (or every sample with
/// `all`), writing metrics, per-step frames and tracking traces.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    tensor_dir: &Path,
    out_dir: &Path,
    all: bool,
    force: bool,
) -> Result<EvalReport> {
    let ck = Checkpoint::read(checkpoint)?;
    let set = load_tensor_set(tensor_dir)?;
    if ck.data_hash != set.hash && !force {
        return Err(Error::ConfigMismatch {
            expected: ck.data_hash,
            found: set.hash,
        });
    }
    let mut model = ck.into_model(None)?;
    let samples = if all {
        &set.samples[..]
    } else {
        set.split(cfg.test_count(set.samples.len())).1
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut csv: Vec<String> = vec![String::new(); samples.len()];
    let mut frame_err = None;
    let (h, w) = (ck.arch.in_h, ck.arch.in_w);
    let mut train_cfg = ck.train.clone();
    train_cfg.ssim = cfg.train.ssim;
    let summary = evaluate(&mut model, samples, &train_cfg, |v| {
        let id = &samples[v.sample].id;
        let dir = out_dir.join("frames").join(id);
        let res = fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)).and_then(|_| {
            GrayImage::new(w, h, v.recon_final.data().to_vec())?.write_pgm(&dir.join(format!("t{:03}.pgm", v.t)))
        });
        if let Err(e) = res {
            frame_err.get_or_insert(e);
        }
        let rows = &mut csv[v.sample];
        if rows.is_empty() {
            rows.push_str("t,x_pred,y_pred,x_true,y_true\n");
        }
        let _ = writeln!(
            rows,
            "{},{:.6},{:.6},{:.6},{:.6}",
            v.t, v.track_pred[0], v.track_pred[1], v.track_true[0], v.track_true[1]
        );
    })?;
    if let Some(e) = frame_err {
        return Err(e);
    }
    let track_dir = out_dir.join("tracking");
    fs::create_dir_all(&track_dir).map_err(|e| Error::io(&track_dir, e))?;
    for (s, rows) in samples.iter().zip(&csv) {
        let p = track_dir.join(format!("{}.csv", s.id));
        fs::write(&p, rows).map_err(|e| Error::io(&p, e))?;
    }
    let report = EvalReport {
        config_hash: ck.record.config_hash.clone(),
        data_hash: hex(set.hash),
        checkpoint: checkpoint.to_path_buf(),
        split: if all { "all" } else { "test" }.into(),
        summary,
    };
    write_json(&out_dir.join(METRICS_FILE), &report)?;
    Ok(report)
}

/// Runs inference with op counting over the held-out split and compares
/// against the dense ReLU twin.
pub fn cmd_energy(cfg: &RunConfig, checkpoint: &Path, tensor_dir: &Path, out: &Path, force: bool) -> Result<EnergyReport> {
    let ck = Checkpoint::read(checkpoint)?;
    let set = load_tensor_set(tensor_dir)?;
    if ck.data_hash != set.hash && !force {
        return Err(Error::ConfigMismatch {
            expected: ck.data_hash,
            found: set.hash,
        });
    }
    let mut model = ck.into_model(None)?;
    let (_, test) = set.split(cfg.test_count(set.samples.len()));
    let samples = if test.is_empty() { &set.samples[..] } else { test };
    if samples.is_empty() {
        return Err(Error::Empty("energy: no samples"));
    }
    let mut ledger = EnergyLedger::new(cfg.energy);
    for s in samples {
        model.reset_states();
        let mut tape = Tape::inference();
        for t in 0..s.time_steps() {
            let x = s.input.index_outer(t)?;
            let x = x.reshape(&[1, 2, ck.arch.in_h, ck.arch.in_w])?;
            model.step(&mut tape, &x, Some(&mut ledger))?;
        }
    }
    ledger.check()?;
    let snn = ledger.scaled(1.0 / samples.len() as f64);
    let ann = ann_twin_ledger(&ck.arch, cfg.energy)?;
    let report = EnergyReport::new(ck.record.config_hash.clone(), &ck.arch, model.param_count(), &snn, &ann, samples.len() as u64);
    write_json(out, &report)?;
    Ok(report)
}

/// Plain-text summary of whatever run artifacts exist.
pub fn cmd_report(run_dir: &Path, eval_dir: &Path, energy: &Path) -> Result<String> {
    let mut out = String::new();
    let rec_path = run_dir.join(RUN_RECORD_FILE);
    if rec_path.exists() {
        let rec: RunRecord = read_json(&rec_path)?;
        let _ = writeln!(out, "run {}: {} epochs", rec.config_hash, rec.epochs.len());
        let _ = writeln!(out, "epoch  train_loss  test_loss  test_ssim  test_mse  track_mse");
        for e in &rec.epochs {
            let _ = writeln!(
                out,
                "{:>5}  {:>10.4}  {:>9.4}  {:>9.4}  {:>8.4}  {:>9.5}",
                e.epoch, e.train_loss, e.test_loss, e.test_ssim, e.test_mse, e.test_track_mse
            );
        }
    }
    let m_path = eval_dir.join(METRICS_FILE);
    if m_path.exists() {
        let m: EvalReport = read_json(&m_path)?;
        let _ = writeln!(
            out,
            "eval ({} split, {} samples): ssim {:.4}  mse {:.4}  track_mse {:.5}",
            m.split,
            m.summary.samples.len(),
            m.summary.mean_ssim,
            m.summary.mean_mse,
            m.summary.mean_track_mse
        );
    }
    if energy.exists() {
        let r: EnergyReport = read_json(energy)?;
        let _ = writeln!(out, "model  input            params(M)  OPs(G)  ACs(G)  MACs(G)  energy(mJ)");
        for row in &r.table {
            let _ = writeln!(
                out,
                "{:<5}  {:<16}  {:>9.3}  {:>6.3}  {:>6.3}  {:>7.3}  {:>10.4}",
                row.model,
                format!("{:?}", row.input_resolution),
                row.params_m,
                row.ops_g,
                row.acs_g,
                row.macs_g,
                row.energy_mj
            );
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("report: no run artifacts found"));
    }
    Ok(out)
}
