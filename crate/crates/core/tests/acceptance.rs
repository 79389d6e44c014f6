//! Acceptance suite: one PASS/FAIL line per criterion, run in order.
//!
//! `cargo test --test acceptance -- --nocapture` shows the lines as they are
//! produced. Criterion 6 trains the toy network for 30 epochs and dominates
//! the runtime.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{gradcheck, max_rel_err, op_case, rng, uniform, weighted_sum, OP_CASES};
use neuroscatter::config::RunConfig;
use neuroscatter::energy::{EnergyConstants, EnergyLedger};
use neuroscatter::loss::{bce, hybrid_loss, iou_loss, ssim, LossWeights, SsimConfig};
use neuroscatter::model::{ArchConfig, ModelParams, Probe, SnnModel};
use neuroscatter::neuron::{lif_step, LifConfig, LifState};
use neuroscatter::pipeline::{cmd_eval, cmd_gen, cmd_preprocess, cmd_train, CHECKPOINT_FILE, RUN_RECORD_FILE};
use neuroscatter::preprocess::{preprocess, stage_outputs, BinMode, Binner, InsectEyeConfig, PreprocessConfig};
use neuroscatter::sim::{
    frames_to_events, generate_sample, generate_trajectory, procedural_glyph, render_scene, scatter_forward, DvsConfig,
    Event, GrayImage, ScatteringConfig, SceneMode, SimConfig, TrajectoryMode,
};
use neuroscatter::tensor::{SpikeForward, Tape, Tensor};
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn check(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &res {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    // Written past the test harness capture so the summary always shows.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n} {name}: {tag} ({detail}; {secs:.1} s)");
    let _ = out.flush();
    res.is_ok()
}

#[test]
fn acceptance() {
    let results = [
        check(1, "energy table reproduction", energy_table),
        check(2, "LIF oracle equivalence", lif_oracle),
        check(3, "gradient suite", gradient_suite),
        check(4, "preprocessing conservation", preprocessing_conservation),
        check(5, "DVS model properties", dvs_properties),
        check(6, "end-to-end toy training", toy_training),
        check(7, "architecture identities", architecture_identities),
        check(8, "determinism", determinism),
        check(9, "loss calibration", loss_calibration),
    ];
    let failed: Vec<usize> = (1..).zip(results).filter(|(_, ok)| !ok).map(|(n, _)| n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

fn energy_table() -> Outcome {
    let c = EnergyConstants::default();
    ensure!(c.e_ac_pj == 0.9 && c.e_mac_pj == 4.6, "constants {c:?}");
    let snn = EnergyLedger::from_totals(4.95e9, 0.769e9, c).total_energy() * 1e3;
    let ann = EnergyLedger::from_totals(0.0, 30.94e9, c).total_energy() * 1e3;
    ensure!((snn - 7.99).abs() <= 0.01, "snn {snn} mJ");
    ensure!((ann - 142.32).abs() <= 0.01, "ann {ann} mJ");
    Ok(format!("snn {snn:.4} mJ, ann {ann:.4} mJ"))
}

/// Independent scalar LIF with hard reset to rest.
fn scalar_lif(beta: f32, v_th: f32, v_rest: f32, v: &mut f32, input: f32) -> f32 {
    let u = (1.0 - beta) * v_rest + beta * *v + input;
    if u >= v_th {
        *v = v_rest;
        1.0
    } else {
        *v = u;
        0.0
    }
}

fn lif_oracle() -> Outcome {
    let (steps, n) = (1000, 100);
    let cfg = LifConfig { beta: 0.85, v_rest: -0.1, ..LifConfig::default() };
    let mut r = rng(2024);
    let mut tape = Tape::<f32>::inference();
    let mut st = LifState::default();
    let mut refs = vec![cfg.v_rest; n];
    let mut fired = 0usize;
    for step in 0..steps {
        let x: Vec<f32> = (0..n).map(|_| r.random_range(-0.3f32..0.7)).collect();
        let xv = tape.constant(Tensor::new(vec![1, n], x.clone()).map_err(|e| e.to_string())?);
        let out = lif_step(&mut tape, &mut st, xv, &cfg).map_err(|e| e.to_string())?;
        let spikes = tape.value(out.spikes.ok_or("no spikes")?).data().to_vec();
        let v = st.membrane(&tape).ok_or("no membrane")?.data().to_vec();
        for i in 0..n {
            let s = scalar_lif(cfg.beta, cfg.v_threshold, cfg.v_rest, &mut refs[i], x[i]);
            fired += s as usize;
            ensure!(s.to_bits() == spikes[i].to_bits(), "spike differs at step {step} neuron {i}");
            ensure!(refs[i].to_bits() == v[i].to_bits(), "membrane differs at step {step} neuron {i}");
        }
    }
    ensure!(fired > steps, "too few spikes ({fired}) to exercise resets");
    Ok(format!("{steps} steps x {n} neurons bit-exact, {fired} spikes"))
}

fn gradient_suite() -> Outcome {
    let mut op_pairs = Vec::new();
    for which in 0..OP_CASES {
        for s in 0..5u64 {
            let seed = 1000 * which as u64 + s;
            let (inputs, f) = op_case(which, seed);
            let pairs = gradcheck(&inputs, f.as_ref(), 4, 1e-3, &mut rng(seed ^ 0xacce));
            let err = max_rel_err(&pairs);
            ensure!(err < 1e-3, "op case {which} seed {seed}: rel err {err}");
            op_pairs.extend(pairs);
        }
    }
    let op_err = max_rel_err(&op_pairs);

    let arch = ArchConfig { in_h: 16, in_w: 16, time_steps: 2, ..ArchConfig::toy() };
    let base = SnnModel::<f64>::new(arch.clone(), 41).map_err(|e| e.to_string())?;
    let mut r = rng(42);
    let xs: Vec<Tensor<f64>> = (0..arch.time_steps)
        .map(|_| Tensor::from_fn(&[1, 2, 16, 16], |_| if r.random_bool(0.3) { 1.0 } else { 0.0 }))
        .collect();
    let objective = |params: &ModelParams<f64>, backward: bool| -> neuroscatter::Result<(f64, Vec<Option<Tensor<f64>>>)> {
        let mut m = SnnModel::from_params(arch.clone(), params.clone())?;
        let mut tape = Tape::train().with_spike_forward(SpikeForward::Surrogate);
        let mut terms = Vec::new();
        for (t, x) in xs.iter().enumerate() {
            let o = m.step(&mut tape, x, None)?;
            let seed = 100 * t as u64;
            terms.push((weighted_sum(&mut tape, o.recon_final, seed)?, 1.0));
            terms.push((weighted_sum(&mut tape, o.track, seed + 1)?, 1.0));
            for (k, s) in o.sup.iter().enumerate() {
                terms.push((weighted_sum(&mut tape, *s, seed + 2 + k as u64)?, 0.5));
            }
        }
        let loss = tape.affine(&terms, 0.0)?;
        let value = tape.value(loss).item();
        let grads = if backward { m.collect_grads(&tape.backward(loss)?) } else { Vec::new() };
        Ok((value, grads))
    };
    let (_, grads) = objective(base.params(), true).map_err(|e| e.to_string())?;
    let learnable: Vec<_> = base.params().learnable_ids().collect();
    let h = 1e-5;
    let picks = 120;
    let mut pairs = Vec::with_capacity(picks);
    for _ in 0..picks {
        let id = learnable[r.random_range(0..learnable.len())];
        let k = r.random_range(0..base.params().get(id).len());
        let mut plus = base.params().clone();
        plus.get_mut(id).data_mut()[k] += h;
        let mut minus = base.params().clone();
        minus.get_mut(id).data_mut()[k] -= h;
        let fp = objective(&plus, false).map_err(|e| e.to_string())?.0;
        let fm = objective(&minus, false).map_err(|e| e.to_string())?.0;
        let analytic = grads[id.0].as_ref().map_or(0.0, |g| g.data()[k]);
        pairs.push((analytic, (fp - fm) / (2.0 * h)));
    }
    let model_err = max_rel_err(&pairs);
    ensure!(model_err < 1e-3, "toy model rel err {model_err}");
    Ok(format!(
        "{} op picks max rel err {op_err:.2e}; toy model {picks} picks over {} params max rel err {model_err:.2e}",
        op_pairs.len(),
        base.param_count()
    ))
}

fn small_sim() -> SimConfig {
    let mut cfg = SimConfig {
        sensor_width: 48,
        sensor_height: 48,
        n_frames: 24,
        step_max: 0.05,
        glyph_size: 16,
        ..SimConfig::default()
    };
    cfg.scatter.thickness_mm = 4.0;
    cfg
}

fn is_subsequence(sub: &[Event], sup: &[Event]) -> bool {
    let mut it = sup.iter();
    sub.iter().all(|e| it.any(|s| s == e))
}

fn preprocessing_conservation() -> Outcome {
    let sim = small_sim();
    let cfg = PreprocessConfig {
        insect_eye: InsectEyeConfig { field: 3, threshold: 1, window_us: 10_000 },
        bin_count: 8,
        bin_mode: BinMode::Count,
        out_h: 16,
        out_w: 16,
        ..PreprocessConfig::default()
    };
    let mut total = 0usize;
    for seed in 0..50u64 {
        let sample = generate_sample(&sim, &[], 5000 + seed).map_err(|e| e.to_string())?;
        let stream = &sample.stream;
        let st = stage_outputs(stream, &cfg).map_err(|e| e.to_string())?;
        ensure!(is_subsequence(&st.roi, &stream.events), "sample {seed}: roi not a subset");
        ensure!(is_subsequence(&st.activity, &st.roi), "sample {seed}: activity not a subset");
        ensure!(is_subsequence(&st.stc, &st.activity), "sample {seed}: stc not a subset");
        ensure!(is_subsequence(&st.antiflicker, &st.stc), "sample {seed}: antiflicker not a subset");
        ensure!(st.insect_eye.len() <= st.antiflicker.len(), "sample {seed}: insect eye added events");

        let (tensor, report) = preprocess(stream, &cfg).map_err(|e| e.to_string())?;
        let sum = tensor.data.sum() as usize;
        ensure!(sum == report.binned && sum == st.insect_eye.len(), "sample {seed}: sum {sum} vs {report:?}");

        let interval = stream.trigger_interval().ok_or("no trigger interval")?;
        let binner = Binner::new(cfg.bin_count, BinMode::Count, cfg.out_h, cfg.out_w, interval).map_err(|e| e.to_string())?;
        let mut hits = vec![0f32; tensor.data.len()];
        for e in &st.insect_eye {
            hits[binner.cell_of(e).ok_or(format!("sample {seed}: event without a cell"))?] += 1.0;
        }
        ensure!(hits == tensor.data.data(), "sample {seed}: binning is not a partition");
        total += sum;
    }
    ensure!(total > 0, "no events survived preprocessing");
    Ok(format!("50 samples, {total} binned events conserved"))
}

fn dvs_properties() -> Outcome {
    let theta = 0.25f32;
    let cfg = DvsConfig { theta, ..DvsConfig::default() };

    // Static scattered scene, noiseless so nothing changes between frames.
    let mut r = rng(5);
    let glyph = procedural_glyph(3, 16, &mut r);
    let traj = generate_trajectory(TrajectoryMode::RandomWalk, 1, 0.05, 5).map_err(|e| e.to_string())?;
    let still = render_scene(&glyph, &traj, 0, 48, 48).map_err(|e| e.to_string())?;
    let quiet = ScatteringConfig { noise_std: 0.0, thickness_mm: 4.0, ..ScatteringConfig::default() };
    let frame = scatter_forward(&still, &quiet, 0).map_err(|e| e.to_string())?;
    let n_static = frames_to_events(&vec![frame; 20], &cfg).map_err(|e| e.to_string())?.len();
    ensure!(n_static == 0, "static scene emitted {n_static} events");

    // One pixel stepping up by 1.5 theta in log intensity.
    let eps = cfg.eps_floor as f64;
    let v0 = 0.3f64;
    let up = ((v0 + eps).ln() + 1.5 * theta as f64).exp() - eps;
    let one = |v: f64| GrayImage::new(1, 1, vec![v as f32]).unwrap();
    let s = frames_to_events(&[one(v0), one(up)], &cfg).map_err(|e| e.to_string())?;
    let pol: Vec<i8> = s.events.iter().map(|e| e.p).collect();
    ensure!(pol == vec![1], "1.5 theta step gave polarities {pol:?}");

    // Moving scattered scene across a theta grid.
    let traj = generate_trajectory(TrajectoryMode::RandomWalk, 40, 0.05, 6).map_err(|e| e.to_string())?;
    let frames = (0..40)
        .map(|k| scatter_forward(&render_scene(&glyph, &traj, k, 48, 48)?, &ScatteringConfig { thickness_mm: 4.0, ..ScatteringConfig::default() }, k as u64))
        .collect::<neuroscatter::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let grid = [0.1f32, 0.15, 0.2, 0.25, 0.3];
    let counts = grid
        .iter()
        .map(|&th| frames_to_events(&frames, &DvsConfig { theta: th, ..cfg }).map(|s| s.len()))
        .collect::<neuroscatter::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    ensure!(counts.windows(2).all(|w| w[0] >= w[1]), "counts not monotone: {counts:?}");
    ensure!(counts[0] > 0, "moving scene emitted nothing");
    Ok(format!("static 0 events; step -> [+1]; counts over theta grid {counts:?}"))
}

fn acceptance_config(dir: &Path, samples: usize, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig { seed: 7, samples, test_fraction: 0.2, ..RunConfig::default() };
    cfg.arch.time_steps = 8;
    cfg.preprocess.bin_count = 8;
    cfg.preprocess.stc = None;
    cfg.preprocess.insect_eye.threshold = 1;
    cfg.train.epochs = epochs;
    cfg.train.seed = cfg.seed;
    cfg.paths.data_dir = dir.join("data");
    cfg.paths.tensor_dir = dir.join("tensors");
    cfg.paths.run_dir = dir.join("run");
    cfg.paths.eval_dir = dir.join("eval");
    cfg
}

fn toy_training() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = acceptance_config(dir.path(), 200, 30);
    ensure!(cfg.sim.mode == SceneMode::Transmission, "mode {:?}", cfg.sim.mode);
    ensure!((cfg.arch.in_h, cfg.arch.in_w) == (64, 64), "input {}x{}", cfg.arch.in_h, cfg.arch.in_w);
    let p = &cfg.paths;
    cmd_gen(&cfg, &p.data_dir).map_err(|e| e.to_string())?;
    cmd_preprocess(&cfg, &p.data_dir, &p.tensor_dir).map_err(|e| e.to_string())?;
    let rec = cmd_train(&cfg, &p.tensor_dir, &p.run_dir, false, false, |e| {
        println!(
            "  epoch {:>2}  train {:.4}  test {:.4}  ssim {:.4}  track {:.5}",
            e.epoch, e.train_loss, e.test_loss, e.test_ssim, e.test_track_mse
        )
    })
    .map_err(|e| e.to_string())?;
    ensure!(rec.epochs.len() == 30, "{} epochs recorded", rec.epochs.len());
    let (first, last) = (&rec.epochs[0], &rec.epochs[29]);
    let ratio = last.test_loss / first.test_loss;
    let detail = format!(
        "ssim {:.4} (>= 0.60), track mse {:.5} (<= 0.02), test loss {:.3} -> {:.3} ratio {ratio:.3} (< 0.5)",
        last.test_ssim, last.test_track_mse, first.test_loss, last.test_loss
    );
    ensure!(last.test_ssim >= 0.60, "{detail}");
    ensure!(last.test_track_mse <= 0.02, "{detail}");
    ensure!(ratio < 0.5, "{detail}");
    Ok(detail)
}

#[derive(Default)]
struct SpikeAudit {
    tensors: usize,
    non_binary: Vec<String>,
}

impl Probe<f32> for SpikeAudit {
    fn spikes(&mut self, path: &str, s: &Tensor<f32>) {
        self.tensors += 1;
        if !s.is_binary() {
            self.non_binary.push(path.to_string());
        }
    }
}

fn architecture_identities() -> Outcome {
    let arch = ArchConfig { in_h: 32, in_w: 32, time_steps: 6, ..ArchConfig::toy() };
    let mut r = rng(77);
    let xs: Vec<Tensor<f32>> = (0..arch.time_steps)
        .map(|_| Tensor::from_fn(&[2, 2, 32, 32], |_| if r.random_bool(0.3) { 1.0 } else { 0.0 }))
        .collect();

    let mut model = SnnModel::<f32>::new(arch.clone(), 78).map_err(|e| e.to_string())?;
    for path in ["rrm.out.weight", "rrm.out.bias"] {
        let id = model.params().find(path).ok_or(format!("no {path}"))?;
        model.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let readout = model.state_index(model.otm_readout_path()).ok_or("no OTM readout")?;
    let encoders: Vec<usize> = (0..model.state_paths().len()).filter(|&i| model.state_paths()[i].contains(".enc")).collect();
    ensure!(!encoders.is_empty(), "no encoder states in {:?}", model.state_paths());
    let mut tape = Tape::inference();
    let mut audit = SpikeAudit::default();
    let mut prev: BTreeMap<usize, Tensor<f32>> = BTreeMap::new();
    for (t, x) in xs.iter().enumerate() {
        let o = model.step(&mut tape, x, Some(&mut audit)).map_err(|e| e.to_string())?;
        ensure!(tape.value(o.recon_final) == tape.value(o.recon_coarse), "final != coarse at step {t}");
        ensure!(model.state(readout).is_rest(), "OTM readout not at rest after step {t}");
        for &i in &encoders {
            let path = &model.state_paths()[i];
            let v = model.state(i).membrane(&tape).ok_or(format!("{path} lost its membrane at step {t}"))?.clone();
            if let Some(p) = prev.get(&i) {
                ensure!(p != &v, "{path} membrane frozen at step {t}");
            }
            prev.insert(i, v);
        }
    }

    // Binary spikes also hold on a training tape.
    let mut train_model = SnnModel::<f32>::new(arch.clone(), 79).map_err(|e| e.to_string())?;
    let mut tape = Tape::train();
    for x in &xs {
        train_model.step(&mut tape, x, Some(&mut audit)).map_err(|e| e.to_string())?;
    }
    ensure!(audit.non_binary.is_empty(), "non-binary spikes at {:?}", audit.non_binary);
    ensure!(audit.tensors > 0, "no spike tensors observed");
    Ok(format!(
        "final == coarse over {} steps; OTM readout at rest while {} encoder membranes persist; {} spike tensors binary",
        arch.time_steps,
        encoders.len(),
        audit.tensors
    ))
}

fn files(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_path_buf();
                out.insert(rel, fs::read(&p).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let run = |dir: &Path| -> Result<(BTreeMap<PathBuf, Vec<u8>>, BTreeMap<PathBuf, Vec<u8>>, Vec<u8>, Vec<u8>), String> {
        let cfg = acceptance_config(dir, 16, 2);
        let p = &cfg.paths;
        let s = |e: neuroscatter::Error| e.to_string();
        cmd_gen(&cfg, &p.data_dir).map_err(s)?;
        cmd_preprocess(&cfg, &p.data_dir, &p.tensor_dir).map_err(s)?;
        cmd_train(&cfg, &p.tensor_dir, &p.run_dir, false, false, |_| {}).map_err(s)?;
        cmd_eval(&cfg, &p.run_dir.join(CHECKPOINT_FILE), &p.tensor_dir, &p.eval_dir, false, false).map_err(s)?;
        let record = fs::read(p.run_dir.join(RUN_RECORD_FILE)).map_err(|e| e.to_string())?;
        let ckpt = fs::read(p.run_dir.join(CHECKPOINT_FILE)).map_err(|e| e.to_string())?;
        Ok((files(&p.data_dir)?, files(&p.tensor_dir)?, record, ckpt))
    };
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let (data_a, tens_a, rec_a, ck_a) = run(a.path())?;
    let (data_b, tens_b, rec_b, ck_b) = run(b.path())?;
    let count = |m: &BTreeMap<PathBuf, Vec<u8>>, ext: &str| m.keys().filter(|k| k.extension().is_some_and(|e| e == ext)).count();
    ensure!(count(&data_a, "evs") == 16, "{} event files", count(&data_a, "evs"));
    ensure!(count(&tens_a, "spt") == 16, "{} tensor files", count(&tens_a, "spt"));
    ensure!(data_a == data_b, "dataset files differ");
    ensure!(tens_a == tens_b, "tensor files differ");
    ensure!(rec_a == rec_b, "run records differ");
    ensure!(ck_a == ck_b, "checkpoints differ");
    let (ev_a, ev_b) = (files(&a.path().join("eval"))?, files(&b.path().join("eval"))?);
    let frames = |m: &BTreeMap<PathBuf, Vec<u8>>| m.iter().filter(|(k, _)| !k.ends_with("metrics.json")).map(|(k, v)| (k.clone(), v.clone())).collect::<Vec<_>>();
    ensure!(frames(&ev_a) == frames(&ev_b), "evaluation frames or traces differ");
    Ok(format!(
        "{} dataset files, {} tensor files, run record, checkpoint and {} eval files byte-identical",
        data_a.len(),
        tens_a.len(),
        ev_a.len() - 1
    ))
}

fn loss_calibration() -> Outcome {
    let mut r = rng(9);
    let g = Tensor::<f64>::from_fn(&[1, 16, 16], |_| if r.random_bool(0.4) { 1.0 } else { 0.0 });
    let half = Tensor::full(&[1, 16, 16], 0.5);
    let e = |e: neuroscatter::Error| e.to_string();
    let b = bce(&half, &g).map_err(e)?;
    ensure!((b - std::f64::consts::LN_2).abs() <= 1e-6, "bce(0.5) = {b}");

    let cfg = SsimConfig::default();
    let x = uniform(&mut r, &[1, 16, 16], 0.0, 1.0);
    let s = ssim(&x, &x, &cfg).map_err(e)?;
    ensure!((s - 1.0).abs() <= 1e-6, "ssim(x, x) = {s}");

    let same = iou_loss(&g, &g).map_err(e)?;
    let disjoint = iou_loss(&g.map(|v| 1.0 - v), &g).map_err(e)?;
    ensure!(same == 0.0 && disjoint == 1.0, "iou identity {same}, disjoint {disjoint}");

    let p = uniform(&mut r, &[1, 16, 16], 0.01, 0.99);
    let parts = (bce(&p, &g).map_err(e)?, 1.0 - ssim(&p, &g, &cfg).map_err(e)?, iou_loss(&p, &g).map_err(e)?);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let w = LossWeights {
            a: r.random_range(0.0..3.0),
            b: r.random_range(0.0..3.0),
            c: r.random_range(0.0..3.0),
            ..LossWeights::default()
        };
        let got = hybrid_loss(&p, &g, &w, &cfg).map_err(e)?;
        worst = worst.max((got - (w.a * parts.0 + w.b * parts.1 + w.c * parts.2)).abs());
    }
    ensure!(worst <= 1e-6, "hybrid loss off linear by {worst}");
    Ok(format!("bce(0.5) - ln 2 = {:.1e}; ssim(x, x) = {s}; iou exact; hybrid linear within {worst:.1e}", b - std::f64::consts::LN_2))
}
