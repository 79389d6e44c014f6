//! Dual-module spiking network: the object tracking module (OTM), the
//! U-Net-like object reconstruction module (ORM) and the residual
//! refinement module (RRM), run one time step at a time.
//!
//! Every SN layer emits binary spikes. Real-valued data only flows on the
//! readout paths: membrane maps of the SUP taps, the ORM/RRM output
//! integrators and the OTM coordinate neurons.

mod config;
mod params;

pub use config::{ArchConfig, SkipFusion, SupTap, UpsampleMode};
pub use params::{Initializer, ModelParams, ParamEntry, ParamId, ParamKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{lif_step, synapse_filter_step, LifConfig, LifOutput, LifState, Readout};
use crate::tensor::{Gradients, Mode, Real, Tape, Tensor, Var};

/// Operation classes distinguished by the energy ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv,
    Fc,
    Bn,
    Membrane,
    ResidualAdd,
    Upsample,
    Filter,
}

/// One executed layer operation, per sample.
#[derive(Clone, Copy, Debug)]
pub struct LayerRecord<'a> {
    pub path: &'a str,
    pub kind: OpKind,
    pub dense_ops: u64,
    /// Fraction of nonzero inputs when the operand is a spike tensor.
    pub spike_rate: Option<f64>,
}

/// Instrumentation hooks called during a forward step.
pub trait Probe<R: Real> {
    fn layer(&mut self, _rec: &LayerRecord<'_>) {}
    /// Output of an SN layer.
    fn spikes(&mut self, _path: &str, _spikes: &Tensor<R>) {}
    /// Decoder stage `decoder` (1-based) consumed encoder stage `encoder`.
    fn skip(&mut self, _module: &str, _decoder: usize, _encoder: usize) {}
    fn step_end(&mut self) {}
}

/// Outputs of one time step as tape variables.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// `[B, 1, H, W]` in (0, 1).
    pub recon_coarse: Var,
    /// `[B, 1, H, W]` in (0, 1).
    pub recon_final: Var,
    /// `[B, 2]` normalized (x, y).
    pub track: Var,
    /// One `[B, 1, H, W]` probability map per configured tap.
    pub sup: Vec<Var>,
}

#[derive(Clone, Debug)]
struct Bn {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Clone, Debug)]
struct ConvUnit {
    path: String,
    w: ParamId,
    b: Option<ParamId>,
    bn: Option<Bn>,
    k: usize,
    cin: usize,
    cout: usize,
}

#[derive(Clone, Debug)]
struct SnnBlock {
    conv: ConvUnit,
    lif: usize,
}

#[derive(Clone, Debug)]
struct ResBlock {
    inner: SnnBlock,
    outer: SnnBlock,
}

#[derive(Clone, Debug)]
struct Up {
    path: String,
    transposed: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug)]
struct DecBlock {
    up: Up,
    first: SnnBlock,
    second: SnnBlock,
}

#[derive(Clone, Debug)]
struct Fc {
    path: String,
    w: ParamId,
    b: ParamId,
    n_in: usize,
    n_out: usize,
    lif: usize,
}

#[derive(Clone, Debug)]
struct SupHead {
    tap: SupTap,
    proj: Option<ConvUnit>,
    factor: usize,
}

#[derive(Clone, Debug)]
struct Net {
    otm_enc: Vec<SnnBlock>,
    otm_fc: Vec<Fc>,
    orm_enc: Vec<ResBlock>,
    bottleneck: SnnBlock,
    orm_dec: Vec<DecBlock>,
    orm_out: SnnBlock,
    rrm_in: SnnBlock,
    rrm_enc: Vec<SnnBlock>,
    rrm_bridge: SnnBlock,
    rrm_dec: Vec<DecBlock>,
    rrm_out: SnnBlock,
    sup: Vec<SupHead>,
}

struct Builder<'a, R: Real> {
    params: &'a mut ModelParams<R>,
    init: Initializer,
    states: Vec<String>,
    arch: &'a ArchConfig,
}

impl<R: Real> Builder<'_, R> {
    fn conv(&mut self, path: &str, cin: usize, cout: usize, k: usize, bias: bool, bn: bool) -> ConvUnit {
        let w = self.params.add(
            format!("{path}.weight"),
            ParamKind::Weight,
            self.init.kaiming(&[cout, cin, k, k], cin * k * k),
        );
        let b = bias.then(|| self.params.add(format!("{path}.bias"), ParamKind::Bias, Tensor::zeros(&[cout])));
        let bn = bn.then(|| Bn {
            gamma: self.params.add(format!("{path}.bn.gamma"), ParamKind::BnGamma, Tensor::full(&[cout], R::one())),
            beta: self.params.add(format!("{path}.bn.beta"), ParamKind::BnBeta, Tensor::zeros(&[cout])),
            mean: self.params.add(format!("{path}.bn.running_mean"), ParamKind::RunningMean, Tensor::zeros(&[cout])),
            var: self.params.add(format!("{path}.bn.running_var"), ParamKind::RunningVar, Tensor::full(&[cout], R::one())),
        });
        ConvUnit {
            path: path.to_string(),
            w,
            b,
            bn,
            k,
            cin,
            cout,
        }
    }

    fn lif(&mut self, path: &str) -> usize {
        self.states.push(format!("{path}.sn"));
        self.states.len() - 1
    }

    /// conv (no bias) → BN → SN.
    fn block(&mut self, path: &str, cin: usize, cout: usize) -> SnnBlock {
        let k = self.arch.kernel_size;
        SnnBlock {
            conv: self.conv(path, cin, cout, k, false, true),
            lif: self.lif(path),
        }
    }

    /// conv with bias → membrane integrator.
    fn readout(&mut self, path: &str, cin: usize, cout: usize) -> SnnBlock {
        let k = self.arch.kernel_size;
        SnnBlock {
            conv: self.conv(path, cin, cout, k, true, false),
            lif: self.lif(path),
        }
    }

    fn up(&mut self, path: &str, channels: usize) -> Up {
        let transposed = (self.arch.upsample_mode == UpsampleMode::Transposed).then(|| {
            (
                self.params.add(
                    format!("{path}.weight"),
                    ParamKind::Weight,
                    self.init.kaiming(&[channels, channels, 2, 2], channels),
                ),
                self.params.add(format!("{path}.bias"), ParamKind::Bias, Tensor::zeros(&[channels])),
            )
        });
        Up {
            path: path.to_string(),
            transposed,
        }
    }

    fn dec(&mut self, path: &str, prev: usize, skip: usize, cout: usize) -> DecBlock {
        let cin = match self.arch.skip_fusion {
            SkipFusion::Add => prev,
            SkipFusion::Concat => prev + skip,
        };
        DecBlock {
            up: self.up(&format!("{path}.up"), prev),
            first: self.block(&format!("{path}.block1"), cin, cout),
            second: self.block(&format!("{path}.block2"), cout, cout),
        }
    }

    fn fc(&mut self, path: &str, n_in: usize, n_out: usize) -> Fc {
        let w = self.params.add(format!("{path}.weight"), ParamKind::Weight, self.init.kaiming(&[n_out, n_in], n_in));
        let b = self.params.add(format!("{path}.bias"), ParamKind::Bias, Tensor::zeros(&[n_out]));
        Fc {
            path: path.to_string(),
            w,
            b,
            n_in,
            n_out,
            lif: self.lif(path),
        }
    }

    fn build(&mut self) -> Net {
        let a = self.arch;
        let n = a.levels();
        let enc = a.enc_channels.clone();

        let mut otm_enc = Vec::new();
        let mut c = a.in_channels;
        for (i, &co) in enc.iter().enumerate() {
            otm_enc.push(self.block(&format!("otm.enc{i}"), c, co));
            c = co;
        }
        let mut n_in = c * (a.in_h >> n) * (a.in_w >> n);
        let mut otm_fc = Vec::new();
        for (i, &d) in a.otm_fc_dims.iter().enumerate() {
            otm_fc.push(self.fc(&format!("otm.fc{i}"), n_in, d));
            n_in = d;
        }

        let mut orm_enc = Vec::new();
        let mut c = a.in_channels;
        for (i, &co) in enc.iter().enumerate() {
            orm_enc.push(ResBlock {
                inner: self.block(&format!("orm.enc{i}.inner"), c, co),
                outer: self.block(&format!("orm.enc{i}.outer"), co, co),
            });
            c = co;
        }
        let bottleneck = self.block("orm.bottleneck", c, c);
        let dec_ch = a.dec_channels();
        let mut orm_dec = Vec::new();
        for j in 1..=n {
            orm_dec.push(self.dec(&format!("orm.dec{j}"), c, enc[n - j], dec_ch[j - 1]));
            c = dec_ch[j - 1];
        }
        let orm_out = self.readout("orm.out", c, 1);

        let r = a.rrm_channels.clone();
        let l = r.len();
        let rrm_in = self.block("rrm.in", 1, r[0]);
        let mut rrm_enc = Vec::new();
        let mut c = r[0];
        for (i, &co) in r.iter().enumerate() {
            rrm_enc.push(self.block(&format!("rrm.enc{}", i + 1), c, co));
            c = co;
        }
        let rrm_bridge = self.block("rrm.bridge", c, c);
        let mut rrm_dec = Vec::new();
        for i in (0..l).rev() {
            let co = if i > 0 { r[i - 1] } else { r[0] };
            rrm_dec.push(self.dec(&format!("rrm.dec{}", i + 1), c, r[i], co));
            c = co;
        }
        let rrm_out = self.readout("rrm.out", c, 1);

        let sup = a
            .sup_taps
            .iter()
            .map(|&tap| {
                let (proj, factor) = match tap {
                    SupTap::Bottleneck => (Some(self.conv("sup.bottleneck", enc[n - 1], 1, 1, true, false)), 1 << n),
                    SupTap::Dec(j) if j < n => {
                        (Some(self.conv(&format!("sup.dec{j}"), dec_ch[j - 1], 1, 1, true, false)), 1 << (n - j))
                    }
                    _ => (None, 1),
                };
                SupHead { tap, proj, factor }
            })
            .collect();

        Net {
            otm_enc,
            otm_fc,
            orm_enc,
            bottleneck,
            orm_dec,
            orm_out,
            rrm_in,
            rrm_enc,
            rrm_bridge,
            rrm_dec,
            rrm_out,
            sup,
        }
    }
}

/// The full tracking + reconstruction network with its recurrent state.
pub struct SnnModel<R: Real = f32> {
    arch: ArchConfig,
    params: ModelParams<R>,
    net: Net,
    states: Vec<LifState>,
    state_paths: Vec<String>,
    bound_tape: Option<u64>,
    vars: Vec<Option<Var>>,
}

impl<R: Real> SnnModel<R> {
    /// Builds the network with deterministic Kaiming initialization.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = ModelParams::new();
        let (net, state_paths) = {
            let mut b = Builder {
                params: &mut params,
                init: Initializer::new(seed),
                states: Vec::new(),
                arch: &arch,
            };
            let net = b.build();
            (net, b.states)
        };
        let n_params = params.len();
        Ok(SnnModel {
            arch,
            params,
            net,
            states: vec![LifState::default(); state_paths.len()],
            state_paths,
            bound_tape: None,
            vars: vec![None; n_params],
        })
    }

    /// Builds the network around existing parameters (paths and shapes must
    /// match the architecture).
    pub fn from_params(arch: ArchConfig, params: ModelParams<R>) -> Result<Self> {
        let mut model = Self::new(arch, 0)?;
        model.params.copy_from(&params)?;
        Ok(model)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &ModelParams<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<R> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Names of the stateful SN layers, indexable by [`SnnModel::state`].
    pub fn state_paths(&self) -> &[String] {
        &self.state_paths
    }

    pub fn state_index(&self, path: &str) -> Option<usize> {
        self.state_paths.iter().position(|p| p == path)
    }

    pub fn state(&self, index: usize) -> &LifState {
        &self.states[index]
    }

    /// Path of the OTM coordinate layer, which is reset after every step.
    pub fn otm_readout_path(&self) -> &str {
        &self.state_paths[self.net.otm_fc.last().expect("otm has fc layers").lif]
    }

    /// Returns every layer to rest and unbinds the current tape.
    pub fn reset_states(&mut self) {
        for s in &mut self.states {
            s.reset();
        }
        self.bound_tape = None;
        self.vars.iter_mut().for_each(|v| *v = None);
    }

    /// Resets selected layers only.
    pub fn reset_layers(&mut self, paths: &[&str]) {
        for (s, p) in self.states.iter_mut().zip(&self.state_paths) {
            if paths.contains(&p.as_str()) {
                s.reset();
            }
        }
    }

    pub fn states_at_rest(&self) -> bool {
        self.states.iter().all(|s| s.is_rest())
    }

    /// Tape variable bound to parameter `id` on the current tape.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }

    /// Gradient per parameter id (zero for learnable parameters that took
    /// no part in the graph, `None` for buffers).
    pub fn collect_grads(&self, grads: &Gradients<R>) -> Vec<Option<Tensor<R>>> {
        self.params
            .ids()
            .map(|id| {
                let e = self.params.entry(id);
                if !e.kind.learnable() {
                    return None;
                }
                Some(
                    self.vars[id.0]
                        .and_then(|v| grads.get(v).cloned())
                        .unwrap_or_else(|| Tensor::zeros(e.value.shape())),
                )
            })
            .collect()
    }

    fn bind(&mut self, tape: &Tape<R>) -> Result<()> {
        if self.bound_tape == Some(tape.id()) {
            return Ok(());
        }
        if !self.states_at_rest() {
            return Err(Error::StaleState);
        }
        self.bound_tape = Some(tape.id());
        self.vars.iter_mut().for_each(|v| *v = None);
        Ok(())
    }

    /// Runs one time step on `x` of shape `[B, C_in, H, W]`.
    pub fn step(
        &mut self,
        tape: &mut Tape<R>,
        x: &Tensor<R>,
        probe: Option<&mut dyn Probe<R>>,
    ) -> Result<StepOutput> {
        let [b, c, h, w] = x.dims4("model_step")?;
        if (c, h, w) != (self.arch.in_channels, self.arch.in_h, self.arch.in_w) {
            return Err(Error::dim(
                "model_step",
                "input",
                format!(
                    "expected [B,{},{},{}], got {:?}",
                    self.arch.in_channels,
                    self.arch.in_h,
                    self.arch.in_w,
                    x.shape()
                ),
            ));
        }
        self.bind(tape)?;
        let training = tape.mode() == Mode::Train;
        let xv = tape.constant(x.clone());
        let SnnModel {
            arch,
            params,
            net,
            states,
            state_paths,
            vars,
            ..
        } = self;
        let mut f = Fwd {
            tape,
            params,
            vars,
            states,
            paths: state_paths,
            arch,
            training,
            probe,
            batch: b,
        };
        let track = f.otm(net, xv)?;
        let (coarse_m, mut taps) = f.orm(net, xv)?;
        let residual = f.rrm(net, coarse_m.1)?;
        let v_rest = R::lit(arch.lif.v_rest as f64);
        let fused = f.tape.affine(&[(coarse_m.0, R::one()), (residual, R::one())], -v_rest)?;
        let recon_final = f.tape.sigmoid(fused)?;
        let recon_coarse = coarse_m.1;
        let mut sup = Vec::with_capacity(net.sup.len());
        for head in &net.sup {
            let v = match head.tap {
                SupTap::RrmOut => recon_final,
                SupTap::Dec(j) if j == arch.levels() => recon_coarse,
                tap => taps.remove(&tap).expect("tap recorded during orm forward"),
            };
            sup.push(v);
        }
        if let Some(p) = f.probe.as_deref_mut() {
            p.step_end();
        }
        Ok(StepOutput {
            recon_coarse,
            recon_final,
            track,
            sup,
        })
    }
}

struct Fwd<'a, 'p, R: Real> {
    tape: &'a mut Tape<R>,
    params: &'a mut ModelParams<R>,
    vars: &'a mut Vec<Option<Var>>,
    states: &'a mut Vec<LifState>,
    paths: &'a [String],
    arch: &'a ArchConfig,
    training: bool,
    probe: Option<&'a mut (dyn Probe<R> + 'p)>,
    batch: usize,
}

impl<R: Real> Fwd<'_, '_, R> {
    fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let v = self.tape.param(self.params.get(id).clone());
        self.vars[id.0] = Some(v);
        v
    }

    fn per_sample(&self, v: Var) -> u64 {
        (self.tape.value(v).len() / self.batch.max(1)) as u64
    }

    fn record(&mut self, path: &str, kind: OpKind, dense_ops: u64, spike_src: Option<Var>) {
        if let Some(p) = self.probe.as_deref_mut() {
            let spike_rate = spike_src.map(|s| {
                let t = self.tape.value(s);
                if t.is_empty() {
                    0.0
                } else {
                    t.count_nonzero() as f64 / t.len() as f64
                }
            });
            p.layer(&LayerRecord {
                path,
                kind,
                dense_ops,
                spike_rate,
            });
        }
    }

    fn conv(&mut self, u: &ConvUnit, x: Var, spike_in: bool) -> Result<Var> {
        let w = self.p(u.w);
        let b = u.b.map(|b| self.p(b));
        let y = self.tape.conv2d(x, w, b, 1, u.k / 2)?;
        let s = self.tape.shape(y);
        let dense = (u.k * u.k * u.cin * u.cout * s[2] * s[3]) as u64;
        self.record(&u.path, OpKind::Conv, dense, spike_in.then_some(x));
        let Some(bn) = &u.bn else {
            return Ok(y);
        };
        let (gamma, beta) = (self.p(bn.gamma), self.p(bn.beta));
        let (rm, rv) = self.params.pair_mut(bn.mean, bn.var);
        let out = self.tape.batch_norm(
            y,
            gamma,
            beta,
            rm.data_mut(),
            rv.data_mut(),
            self.training,
            R::lit(self.arch.bn_eps as f64),
            R::lit(self.arch.bn_momentum as f64),
        )?;
        let dense = 2 * self.per_sample(out);
        self.record(&format!("{}.bn", u.path), OpKind::Bn, dense, None);
        Ok(out)
    }

    fn lif(&mut self, idx: usize, current: Var, filter: bool, cfg: &LifConfig) -> Result<LifOutput> {
        let path = &self.paths[idx];
        let current = if filter {
            let decay = R::lit(self.arch.synapse_filter.decay as f64);
            let out = synapse_filter_step(self.tape, &mut self.states[idx].filter, current, decay)?;
            let dense = self.per_sample(out);
            self.record(&format!("{path}.filter"), OpKind::Filter, dense, None);
            out
        } else {
            current
        };
        let out = lif_step(self.tape, &mut self.states[idx], current, cfg)?;
        let dense = self.per_sample(out.v_pre);
        self.record(path, OpKind::Membrane, dense, None);
        if let (Some(s), Some(p)) = (out.spikes, self.probe.as_deref_mut()) {
            p.spikes(path, self.tape.value(s));
        }
        Ok(out)
    }

    fn spikes(out: LifOutput) -> Var {
        out.spikes.expect("spiking layer")
    }

    fn block(&mut self, b: &SnnBlock, x: Var, spike_in: bool) -> Result<LifOutput> {
        let c = self.conv(&b.conv, x, spike_in)?;
        let cfg = self.arch.lif;
        self.lif(b.lif, c, false, &cfg)
    }

    fn readout(&mut self, b: &SnnBlock, x: Var, spike_in: bool) -> Result<Var> {
        let c = self.conv(&b.conv, x, spike_in)?;
        let cfg = self.arch.lif.with_readout(Readout::Membrane);
        Ok(self.lif(b.lif, c, false, &cfg)?.v_pre)
    }

    /// Pre-activation residual: SN(BN(Conv(s)) + s) with a synapse filter
    /// on the summed current.
    fn res_block(&mut self, rb: &ResBlock, x: Var, spike_in: bool) -> Result<Var> {
        let s1 = Self::spikes(self.block(&rb.inner, x, spike_in)?);
        let c = self.conv(&rb.outer.conv, s1, true)?;
        let sum = self.tape.add(c, s1)?;
        let dense = self.per_sample(sum);
        self.record(&format!("{}.residual", rb.outer.conv.path), OpKind::ResidualAdd, dense, Some(s1));
        let cfg = self.arch.lif;
        Ok(Self::spikes(self.lif(rb.outer.lif, sum, true, &cfg)?))
    }

    fn upsample(&mut self, up: &Up, x: Var) -> Result<Var> {
        match (self.arch.upsample_mode, up.transposed) {
            (UpsampleMode::Transposed, Some((w, b))) => {
                let (wv, bv) = (self.p(w), self.p(b));
                let y = self.tape.conv_transpose2(x, wv, Some(bv))?;
                let s = self.tape.shape(x);
                let dense = (s[1] * s[1] * 4 * s[2] * s[3]) as u64;
                self.record(&up.path, OpKind::Conv, dense, Some(x));
                Ok(y)
            }
            (UpsampleMode::Bilinear, _) => {
                let y = self.tape.upsample2_bilinear(x)?;
                let dense = 4 * self.per_sample(y);
                self.record(&up.path, OpKind::Upsample, dense, None);
                Ok(y)
            }
            _ => {
                let y = self.tape.upsample2_nearest(x)?;
                self.record(&up.path, OpKind::Upsample, 0, None);
                Ok(y)
            }
        }
    }

    /// y_j = SNN_Block(SNN_Block(US(y_{j−1}) ⊕ skip)), filter on the output.
    fn dec_block(&mut self, d: &DecBlock, y: Var, skip: Var) -> Result<(Var, Var)> {
        let up = self.upsample(&d.up, y)?;
        let fused = match self.arch.skip_fusion {
            SkipFusion::Add => {
                let z = self.tape.add(up, skip)?;
                let dense = self.per_sample(z);
                self.record(&format!("{}.skip", d.up.path), OpKind::ResidualAdd, dense, Some(skip));
                z
            }
            SkipFusion::Concat => self.tape.concat_channels(&[up, skip])?,
        };
        let binary_up = self.arch.upsample_mode == UpsampleMode::Nearest;
        let s = Self::spikes(self.block(&d.first, fused, binary_up)?);
        let c = self.conv(&d.second.conv, s, true)?;
        let cfg = self.arch.lif;
        let out = self.lif(d.second.lif, c, true, &cfg)?;
        Ok((Self::spikes(out), out.v_pre))
    }

    fn otm(&mut self, net: &Net, x: Var) -> Result<Var> {
        let mut h = x;
        for b in &net.otm_enc {
            let s = Self::spikes(self.block(b, h, true)?);
            h = self.tape.max_pool2(s)?;
        }
        let batch = self.batch;
        let flat = self.tape.value(h).len() / batch;
        h = self.tape.reshape(h, &[batch, flat])?;
        let (last, hidden) = net.otm_fc.split_last().expect("otm has fc layers");
        for fc in hidden {
            let cur = self.fc(fc, h)?;
            let cfg = self.arch.lif;
            h = Self::spikes(self.lif(fc.lif, cur, false, &cfg)?);
        }
        let cur = self.fc(last, h)?;
        let cfg = self.arch.lif.with_readout(Readout::Membrane);
        let v = self.lif(last.lif, cur, false, &cfg)?.v_pre;
        self.states[last.lif].reset();
        let v = self.relative_to_rest(v)?;
        Ok(self.tape.sigmoid(v)?)
    }

    fn fc(&mut self, fc: &Fc, x: Var) -> Result<Var> {
        let (w, b) = (self.p(fc.w), self.p(fc.b));
        let y = self.tape.fully_connected(x, w, Some(b))?;
        self.record(&fc.path, OpKind::Fc, (fc.n_in * fc.n_out) as u64, Some(x));
        Ok(y)
    }

    fn relative_to_rest(&mut self, v: Var) -> Result<Var> {
        let v_rest = self.arch.lif.v_rest;
        if v_rest == 0.0 {
            return Ok(v);
        }
        self.tape.affine(&[(v, R::one())], R::lit(-v_rest as f64))
    }

    fn sup_head(&mut self, head: &SupHead, membrane: Var) -> Result<Var> {
        let proj = head.proj.as_ref().expect("projected tap");
        let mut m = self.conv(proj, membrane, false)?;
        let mut f = head.factor;
        while f > 1 {
            m = if self.arch.upsample_mode == UpsampleMode::Bilinear {
                let y = self.tape.upsample2_bilinear(m)?;
                let dense = 4 * self.per_sample(y);
                self.record(&format!("{}.up", proj.path), OpKind::Upsample, dense, None);
                y
            } else {
                self.tape.upsample2_nearest(m)?
            };
            f /= 2;
        }
        Ok(self.tape.sigmoid(m)?)
    }

    /// Returns ((coarse membrane, coarse map), projected SUP maps).
    #[allow(clippy::type_complexity)]
    fn orm(&mut self, net: &Net, x: Var) -> Result<((Var, Var), std::collections::HashMap<SupTap, Var>)> {
        let n = net.orm_enc.len();
        let mut skips = Vec::with_capacity(n);
        let mut h = x;
        for rb in &net.orm_enc {
            let s = self.res_block(rb, h, true)?;
            skips.push(s);
            h = self.tape.max_pool2(s)?;
        }
        let bott = self.block(&net.bottleneck, h, true)?;
        let mut taps = std::collections::HashMap::new();
        let heads: Vec<&SupHead> = net.sup.iter().collect();
        if let Some(head) = heads.iter().find(|hd| hd.tap == SupTap::Bottleneck) {
            let m = self.sup_head(head, bott.v_pre)?;
            taps.insert(SupTap::Bottleneck, m);
        }
        let mut y = Self::spikes(bott);
        for (j, d) in net.orm_dec.iter().enumerate() {
            let stage = j + 1;
            let enc_idx = n - stage;
            if let Some(p) = self.probe.as_deref_mut() {
                p.skip("orm", stage, enc_idx);
            }
            let (s, v_pre) = self.dec_block(d, y, skips[enc_idx])?;
            if stage < n {
                if let Some(head) = heads.iter().find(|hd| hd.tap == SupTap::Dec(stage)) {
                    let m = self.sup_head(head, v_pre)?;
                    taps.insert(SupTap::Dec(stage), m);
                }
            }
            y = s;
        }
        let m = self.readout(&net.orm_out, y, true)?;
        let m = self.relative_to_rest(m)?;
        let coarse = self.tape.sigmoid(m)?;
        Ok(((m, coarse), taps))
    }

    /// Residual membrane of the refinement module.
    fn rrm(&mut self, net: &Net, coarse: Var) -> Result<Var> {
        let mut h = Self::spikes(self.block(&net.rrm_in, coarse, false)?);
        let mut skips = Vec::with_capacity(net.rrm_enc.len());
        for b in &net.rrm_enc {
            let s = Self::spikes(self.block(b, h, true)?);
            skips.push(s);
            h = self.tape.max_pool2(s)?;
        }
        let mut y = Self::spikes(self.block(&net.rrm_bridge, h, true)?);
        let l = skips.len();
        for (j, d) in net.rrm_dec.iter().enumerate() {
            let enc_idx = l - 1 - j;
            if let Some(p) = self.probe.as_deref_mut() {
                p.skip("rrm", j + 1, enc_idx);
            }
            y = self.dec_block_plain(d, y, skips[enc_idx])?;
        }
        self.readout(&net.rrm_out, y, true)
    }

    /// Decoder block without a synapse filter (RRM).
    fn dec_block_plain(&mut self, d: &DecBlock, y: Var, skip: Var) -> Result<Var> {
        let up = self.upsample(&d.up, y)?;
        let fused = match self.arch.skip_fusion {
            SkipFusion::Add => {
                let z = self.tape.add(up, skip)?;
                let dense = self.per_sample(z);
                self.record(&format!("{}.skip", d.up.path), OpKind::ResidualAdd, dense, Some(skip));
                z
            }
            SkipFusion::Concat => self.tape.concat_channels(&[up, skip])?,
        };
        let binary_up = self.arch.upsample_mode == UpsampleMode::Nearest;
        let s = Self::spikes(self.block(&d.first, fused, binary_up)?);
        Ok(Self::spikes(self.block(&d.second, s, true)?))
    }
}
