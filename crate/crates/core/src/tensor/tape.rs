use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Whether a tape records backward rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Forward rule of the spike nonlinearity.
///
/// `Heaviside` is the real network. `Surrogate` replaces the step by the
/// ATan sigmoid itself so that finite differences of the forward graph can
/// be compared against the surrogate backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpikeForward {
    #[default]
    Heaviside,
    Surrogate,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UpMode {
    Nearest,
    Bilinear,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum ResetRule<R> {
    Hard { v_rest: R },
    Subtract { threshold: R },
}

enum Op<R> {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        geom: ConvGeom,
    },
    ConvT2 {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        dims: [usize; 4],
        cout: usize,
    },
    Linear {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        rows: usize,
        n_in: usize,
        n_out: usize,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<R>,
        inv_std: Vec<R>,
        train: bool,
        dims: [usize; 4],
    },
    MaxPool2 {
        input: usize,
        argmax: Vec<u32>,
    },
    Upsample2 {
        input: usize,
        mode: UpMode,
        planes: usize,
        h: usize,
        w: usize,
    },
    Affine {
        terms: Vec<(usize, R)>,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Sigmoid {
        input: usize,
    },
    Spike {
        input: usize,
        threshold: R,
        alpha: R,
    },
    Reset {
        v_pre: usize,
        spikes: usize,
        rule: ResetRule<R>,
    },
    Concat {
        inputs: Vec<(usize, usize)>,
        b: usize,
        hw: usize,
    },
    Reshape {
        input: usize,
    },
    Sum {
        input: usize,
        scale: R,
    },
    Fused {
        input: usize,
        local_grad: Vec<R>,
    },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// In [`Mode::Inference`] values are kept (later ops read them) but no
/// backward rule or saved intermediate is stored and `backward` refuses to
/// run, so no gradient memory is ever allocated.
pub struct Tape<R = f32> {
    id: u64,
    mode: Mode,
    spike_forward: SpikeForward,
    nodes: Vec<Node<R>>,
    consumed: bool,
    grad_buffers: usize,
}

/// Parameter gradients produced by [`Tape::backward`].
pub struct Gradients<R = f32> {
    tape: u64,
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, var: Var) -> Option<&Tensor<R>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<R>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(|g| g.take())
    }
}

impl<R: Real> Tape<R> {
    pub fn new(mode: Mode) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            mode,
            spike_forward: SpikeForward::Heaviside,
            nodes: Vec::new(),
            consumed: false,
            grad_buffers: 0,
        }
    }

    pub fn train() -> Self {
        Self::new(Mode::Train)
    }

    pub fn inference() -> Self {
        Self::new(Mode::Inference)
    }

    pub fn with_spike_forward(mut self, rule: SpikeForward) -> Self {
        self.spike_forward = rule;
        self
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn spike_forward(&self) -> SpikeForward {
        self.spike_forward
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Number of gradient buffers allocated by backward passes so far.
    pub fn grad_buffers_allocated(&self) -> usize {
        self.grad_buffers
    }

    /// Nodes carrying a backward rule (always 0 in inference mode).
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    /// Checks that `var` was produced by this tape.
    pub fn owns(&self, var: Var) -> bool {
        var.tape == self.id && var.index < self.nodes.len()
    }

    fn idx(&self, var: Var) -> Result<usize> {
        if self.owns(var) {
            Ok(var.index)
        } else {
            Err(Error::StaleState)
        }
    }

    pub fn value(&self, var: Var) -> &Tensor<R> {
        assert!(self.owns(var), "variable from a different tape");
        &self.nodes[var.index].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.mode == Mode::Train;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records a constant (no gradient).
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a leaf that receives a gradient in training mode.
    pub fn param(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (ii, ki) = (self.idx(input)?, self.idx(kernel)?);
        let bi = bias.map(|b| self.idx(b)).transpose()?;
        let [b, cin, h, w] = self.nodes[ii].value.dims4("conv2d")?;
        let [cout, kcin, kh, kw] = self.nodes[ki].value.dims4("conv2d")?;
        if kcin != cin {
            return Err(Error::dim(
                "conv2d",
                "channels",
                format!("input has {cin}, kernel expects {kcin}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::dim(
                "conv2d",
                "kernel",
                format!("kernel must be square and odd, got {kh}x{kw}"),
            ));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride", "stride must be >= 1"));
        }
        let ho = kernels::conv_out_dim(h, kh, stride, padding)
            .ok_or_else(|| Error::dim("conv2d", "height", format!("H={h} k={kh} s={stride} p={padding}")))?;
        let wo = kernels::conv_out_dim(w, kw, stride, padding)
            .ok_or_else(|| Error::dim("conv2d", "width", format!("W={w} k={kw} s={stride} p={padding}")))?;
        if let Some(bi) = bi {
            if self.nodes[bi].value.shape() != [cout] {
                return Err(Error::dim("conv2d", "bias", format!("expected [{cout}]")));
            }
        }
        let geom = ConvGeom {
            b,
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            pad: padding,
            ho,
            wo,
        };
        let data = kernels::conv_forward_geom(
            &geom,
            self.nodes[ii].value.data(),
            self.nodes[ki].value.data(),
            bi.map(|b| self.nodes[b].value.data()),
        );
        let rg = self.rg(ii) || self.rg(ki) || bi.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(vec![b, cout, ho, wo], data)?,
            Op::Conv2d {
                input: ii,
                kernel: ki,
                bias: bi,
                geom,
            },
            rg,
        ))
    }

    /// 2×2, stride-2 transposed convolution; kernel `[Cin, Cout, 2, 2]`.
    pub fn conv_transpose2(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (ii, ki) = (self.idx(input)?, self.idx(kernel)?);
        let bi = bias.map(|b| self.idx(b)).transpose()?;
        let dims = self.nodes[ii].value.dims4("conv_transpose2")?;
        let [kcin, cout, kh, kw] = self.nodes[ki].value.dims4("conv_transpose2")?;
        if kcin != dims[1] || kh != 2 || kw != 2 {
            return Err(Error::dim(
                "conv_transpose2",
                "kernel",
                format!("expected [{}, Cout, 2, 2], got {:?}", dims[1], self.nodes[ki].value.shape()),
            ));
        }
        let data = kernels::conv_transpose2_forward(
            self.nodes[ii].value.data(),
            self.nodes[ki].value.data(),
            bi.map(|b| self.nodes[b].value.data()),
            dims,
            cout,
        );
        let rg = self.rg(ii) || self.rg(ki) || bi.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(vec![dims[0], cout, 2 * dims[2], 2 * dims[3]], data)?,
            Op::ConvT2 {
                input: ii,
                kernel: ki,
                bias: bi,
                dims,
                cout,
            },
            rg,
        ))
    }

    /// `input[B,N] · weightᵀ[N,M] + bias[M]`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (ii, wi) = (self.idx(input)?, self.idx(weight)?);
        let bi = bias.map(|b| self.idx(b)).transpose()?;
        let (rows, n_in) = match self.nodes[ii].value.shape() {
            &[r, n] => (r, n),
            s => return Err(Error::dim("fully_connected", "input", format!("expected [B,N], got {s:?}"))),
        };
        let n_out = match self.nodes[wi].value.shape() {
            &[m, n] if n == n_in => m,
            s => {
                return Err(Error::dim(
                    "fully_connected",
                    "inner",
                    format!("input has N={n_in}, weight is {s:?}"),
                ))
            }
        };
        if let Some(bi) = bi {
            if self.nodes[bi].value.shape() != [n_out] {
                return Err(Error::dim("fully_connected", "bias", format!("expected [{n_out}]")));
            }
        }
        let mut out = vec![R::zero(); rows * n_out];
        let mut beta = R::zero();
        if let Some(bi) = bi {
            let b = self.nodes[bi].value.data();
            for row in out.chunks_mut(n_out) {
                row.copy_from_slice(b);
            }
            beta = R::one();
        }
        R::gemm(
            rows,
            n_in,
            n_out,
            R::one(),
            self.nodes[ii].value.data(),
            n_in as isize,
            1,
            self.nodes[wi].value.data(),
            1,
            n_in as isize,
            beta,
            &mut out,
            n_out as isize,
            1,
        );
        let rg = self.rg(ii) || self.rg(wi) || bi.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::new(vec![rows, n_out], out)?,
            Op::Linear {
                input: ii,
                weight: wi,
                bias: bi,
                rows,
                n_in,
                n_out,
            },
            rg,
        ))
    }

    /// Per-channel batch normalization over (B, H, W).
    ///
    /// In training mode the batch statistics normalize the input and the
    /// running statistics are updated in place (unbiased variance); otherwise
    /// the running statistics are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [R],
        running_var: &mut [R],
        train: bool,
        eps: R,
        momentum: R,
    ) -> Result<Var> {
        let (ii, gi, bi) = (self.idx(input)?, self.idx(gamma)?, self.idx(beta)?);
        let dims @ [b, c, h, w] = self.nodes[ii].value.dims4("batch_norm")?;
        if eps <= R::zero() {
            return Err(Error::InvalidConfig("batch_norm eps must be > 0".into()));
        }
        for (name, idx) in [("gamma", gi), ("beta", bi)] {
            if self.nodes[idx].value.shape() != [c] {
                return Err(Error::dim("batch_norm", "channels", format!("{name} must be [{c}]")));
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::dim("batch_norm", "channels", "running statistics length"));
        }
        let count = b * h * w;
        let (mean, inv_std): (Vec<R>, Vec<R>) = if train {
            if count < 2 {
                return Err(Error::InsufficientStatistics { count });
            }
            let (mean, var) = kernels::channel_stats(self.nodes[ii].value.data(), dims);
            let unbias = count as f64 / (count as f64 - 1.0);
            let mom = momentum.as_f64();
            for ci in 0..c {
                let rm = running_mean[ci].as_f64();
                let rv = running_var[ci].as_f64();
                running_mean[ci] = R::lit((1.0 - mom) * rm + mom * mean[ci]);
                running_var[ci] = R::lit((1.0 - mom) * rv + mom * var[ci] * unbias);
            }
            (
                mean.iter().map(|&m| R::lit(m)).collect(),
                var.iter()
                    .map(|&v| R::one() / (R::lit(v) + eps).sqrt())
                    .collect(),
            )
        } else {
            (
                running_mean.to_vec(),
                running_var
                    .iter()
                    .map(|&v| R::one() / (v + eps).sqrt())
                    .collect(),
            )
        };
        let x = self.nodes[ii].value.data();
        let g = self.nodes[gi].value.data();
        let be = self.nodes[bi].value.data();
        let hw = h * w;
        let mut xhat = vec![R::zero(); x.len()];
        let mut out = vec![R::zero(); x.len()];
        for bb in 0..b {
            for ci in 0..c {
                let off = (bb * c + ci) * hw;
                for j in off..off + hw {
                    let xh = (x[j] - mean[ci]) * inv_std[ci];
                    xhat[j] = xh;
                    out[j] = xh * g[ci] + be[ci];
                }
            }
        }
        let rg = self.rg(ii) || self.rg(gi) || self.rg(bi);
        Ok(self.push(
            Tensor::new(dims.to_vec(), out)?,
            Op::BatchNorm {
                input: ii,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
                train,
                dims,
            },
            rg,
        ))
    }

    /// Non-overlapping 2×2 max pooling.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let ii = self.idx(input)?;
        let [b, c, h, w] = self.nodes[ii].value.dims4("max_pool2")?;
        if h % 2 != 0 {
            return Err(Error::dim("max_pool2", "height", format!("H={h} is odd")));
        }
        if w % 2 != 0 {
            return Err(Error::dim("max_pool2", "width", format!("W={w} is odd")));
        }
        let (out, argmax) = kernels::max_pool2(self.nodes[ii].value.data(), b * c, h, w);
        let rg = self.rg(ii);
        Ok(self.push(
            Tensor::new(vec![b, c, h / 2, w / 2], out)?,
            Op::MaxPool2 { input: ii, argmax },
            rg,
        ))
    }

    pub fn upsample2_nearest(&mut self, input: Var) -> Result<Var> {
        self.upsample2(input, UpMode::Nearest)
    }

    /// Bilinear ×2 upsampling with the align-corners-false convention.
    pub fn upsample2_bilinear(&mut self, input: Var) -> Result<Var> {
        self.upsample2(input, UpMode::Bilinear)
    }

    fn upsample2(&mut self, input: Var, mode: UpMode) -> Result<Var> {
        let ii = self.idx(input)?;
        let [b, c, h, w] = self.nodes[ii].value.dims4("upsample2")?;
        let x = self.nodes[ii].value.data();
        let out = match mode {
            UpMode::Nearest => kernels::upsample_nearest(x, b * c, h, w),
            UpMode::Bilinear => kernels::upsample_bilinear(x, b * c, h, w),
        };
        let rg = self.rg(ii);
        Ok(self.push(
            Tensor::new(vec![b, c, 2 * h, 2 * w], out)?,
            Op::Upsample2 {
                input: ii,
                mode,
                planes: b * c,
                h,
                w,
            },
            rg,
        ))
    }

    /// Elementwise `bias + Σ coeff_i · x_i` over equally shaped inputs.
    pub fn affine(&mut self, terms: &[(Var, R)], bias: R) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::Empty("affine terms"));
        };
        let fi = self.idx(first)?;
        let shape = self.nodes[fi].value.shape().to_vec();
        let mut idx = Vec::with_capacity(terms.len());
        for &(v, c) in terms {
            let i = self.idx(v)?;
            if self.nodes[i].value.shape() != shape.as_slice() {
                return Err(Error::dim(
                    "affine",
                    "shape",
                    format!("{:?} vs {:?}", self.nodes[i].value.shape(), shape),
                ));
            }
            idx.push((i, c));
        }
        let mut out = vec![bias; self.nodes[fi].value.len()];
        for &(i, c) in &idx {
            let x = self.nodes[i].value.data();
            if c == R::one() {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o += v;
                }
            } else {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o += c * v;
                }
            }
        }
        let rg = idx.iter().any(|&(i, _)| self.rg(i));
        Ok(self.push(Tensor::new(shape, out)?, Op::Affine { terms: idx }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.affine(&[(a, R::one()), (b, R::one())], R::zero())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.affine(&[(a, R::one()), (b, -R::one())], R::zero())
    }

    pub fn scale(&mut self, a: Var, c: R) -> Result<Var> {
        self.affine(&[(a, c)], R::zero())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if va.shape() != vb.shape() {
            return Err(Error::dim("mul", "shape", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out: Vec<R> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let shape = va.shape().to_vec();
        let rg = self.rg(ai) || self.rg(bi);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a: ai, b: bi }, rg))
    }

    /// Logistic squash `1 / (1 + e^{-x})`.
    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let ii = self.idx(input)?;
        let value = self.nodes[ii]
            .value
            .map(|x| R::one() / (R::one() + (-x).exp()));
        let rg = self.rg(ii);
        Ok(self.push(value, Op::Sigmoid { input: ii }, rg))
    }

    /// Spike generation `Φ(v - threshold)`; backward uses the ATan surrogate
    /// derivative with slope `alpha`.
    pub fn spike(&mut self, membrane: Var, threshold: R, alpha: R) -> Result<Var> {
        let ii = self.idx(membrane)?;
        let value = match self.spike_forward {
            SpikeForward::Heaviside => self.nodes[ii].value.map(|v| {
                if v - threshold >= R::zero() {
                    R::one()
                } else {
                    R::zero()
                }
            }),
            SpikeForward::Surrogate => self.nodes[ii]
                .value
                .map(|v| crate::neuron::surrogate(v - threshold, alpha)),
        };
        let rg = self.rg(ii);
        Ok(self.push(
            value,
            Op::Spike {
                input: ii,
                threshold,
                alpha,
            },
            rg,
        ))
    }

    /// Post-spike membrane: hard reset to `v_rest` or subtraction of the
    /// threshold, weighted by the spike tensor.
    pub(crate) fn reset(&mut self, v_pre: Var, spikes: Var, rule: ResetRule<R>) -> Result<Var> {
        let (vi, si) = (self.idx(v_pre)?, self.idx(spikes)?);
        let v = &self.nodes[vi].value;
        let s = &self.nodes[si].value;
        if v.shape() != s.shape() {
            return Err(Error::dim("reset", "shape", "membrane and spikes differ"));
        }
        let out: Vec<R> = match rule {
            ResetRule::Hard { v_rest } => v
                .data()
                .iter()
                .zip(s.data())
                .map(|(&v, &s)| {
                    if s == R::one() {
                        v_rest
                    } else if s == R::zero() {
                        v
                    } else {
                        v * (R::one() - s) + v_rest * s
                    }
                })
                .collect(),
            ResetRule::Subtract { threshold } => v
                .data()
                .iter()
                .zip(s.data())
                .map(|(&v, &s)| if s == R::zero() { v } else { v - threshold * s })
                .collect(),
        };
        let shape = v.shape().to_vec();
        let rg = self.rg(vi) || self.rg(si);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Reset {
                v_pre: vi,
                spikes: si,
                rule,
            },
            rg,
        ))
    }

    /// Concatenates `[B, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::Empty("concat_channels"));
        };
        let [b, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut parts = Vec::new();
        let mut total = 0;
        for &v in inputs {
            let i = self.idx(v)?;
            let [bb, c, hh, ww] = self.nodes[i].value.dims4("concat_channels")?;
            if (bb, hh, ww) != (b, h, w) {
                return Err(Error::dim("concat_channels", "spatial", "batch/height/width differ"));
            }
            parts.push((i, c));
            total += c;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(b * total * hw);
        for bb in 0..b {
            for &(i, c) in &parts {
                out.extend_from_slice(&self.nodes[i].value.data()[bb * c * hw..(bb + 1) * c * hw]);
            }
        }
        let rg = parts.iter().any(|&(i, _)| self.rg(i));
        Ok(self.push(
            Tensor::new(vec![b, total, h, w], out)?,
            Op::Concat { inputs: parts, b, hw },
            rg,
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let ii = self.idx(input)?;
        let value = self.nodes[ii].value.clone().reshape(shape)?;
        let rg = self.rg(ii);
        Ok(self.push(value, Op::Reshape { input: ii }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.reduce(input, R::one())
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len().max(1);
        self.reduce(input, R::one() / R::lit(n as f64))
    }

    fn reduce(&mut self, input: Var, scale: R) -> Result<Var> {
        let ii = self.idx(input)?;
        let s = self.nodes[ii].value.sum() * scale;
        let rg = self.rg(ii);
        Ok(self.push(Tensor::scalar(s), Op::Sum { input: ii, scale }, rg))
    }

    /// Records a scalar `value = f(input)` whose gradient with respect to
    /// `input` was computed alongside the value.
    pub fn fused_scalar(&mut self, input: Var, value: R, local_grad: Vec<R>) -> Result<Var> {
        let ii = self.idx(input)?;
        if local_grad.len() != self.nodes[ii].value.len() {
            return Err(Error::dim("fused_scalar", "grad", "gradient length differs from input"));
        }
        let rg = self.rg(ii);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Fused {
                input: ii,
                local_grad,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate across
    /// fan-out; only leaves created with [`Tape::param`] are returned.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<R>> {
        if self.consumed {
            return Err(Error::ConsumedTape);
        }
        if self.mode != Mode::Train {
            return Err(Error::NotTraining);
        }
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::dim(
                "backward",
                "loss",
                format!("loss must be scalar, got {:?}", self.nodes[li].value.shape()),
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<R>>> = (0..=li).map(|_| None).collect();
        let mut out: Vec<Option<Tensor<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[li].requires_grad {
            grads[li] = Some(vec![R::one()]);
            self.grad_buffers += 1;
        }
        let nodes = &self.nodes;
        let mut sink = Sink {
            nodes,
            grads: &mut grads,
            allocated: 0,
        };
        for i in (0..=li).rev() {
            let Some(g) = sink.grads[i].take() else {
                continue;
            };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {
                    out[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let (dx, dk, db) = kernels::conv_backward_geom(
                        geom,
                        nodes[*input].value.data(),
                        nodes[*kernel].value.data(),
                        &g,
                        nodes[*input].requires_grad,
                        nodes[*kernel].requires_grad,
                        bias.is_some_and(|b| nodes[b].requires_grad),
                    );
                    sink.put_opt(*input, dx);
                    sink.put_opt(*kernel, dk);
                    if let Some(b) = bias {
                        sink.put_opt(*b, db);
                    }
                }
                Op::ConvT2 {
                    input,
                    kernel,
                    bias,
                    dims,
                    cout,
                } => {
                    let (dx, dk, db) = kernels::conv_transpose2_backward(
                        nodes[*input].value.data(),
                        nodes[*kernel].value.data(),
                        &g,
                        *dims,
                        *cout,
                    );
                    sink.put(*input, dx);
                    sink.put(*kernel, dk);
                    if let Some(b) = bias {
                        sink.put(*b, db);
                    }
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                    rows,
                    n_in,
                    n_out,
                } => {
                    let (rows, n_in, n_out) = (*rows, *n_in, *n_out);
                    if nodes[*input].requires_grad {
                        let mut dx = vec![R::zero(); rows * n_in];
                        // dx[B,N] = g[B,M] · W[M,N]
                        R::gemm(
                            rows,
                            n_out,
                            n_in,
                            R::one(),
                            &g,
                            n_out as isize,
                            1,
                            nodes[*weight].value.data(),
                            n_in as isize,
                            1,
                            R::zero(),
                            &mut dx,
                            n_in as isize,
                            1,
                        );
                        sink.put(*input, dx);
                    }
                    if nodes[*weight].requires_grad {
                        let mut dw = vec![R::zero(); n_out * n_in];
                        // dw[M,N] = gᵀ[M,B] · x[B,N]
                        R::gemm(
                            n_out,
                            rows,
                            n_in,
                            R::one(),
                            &g,
                            1,
                            n_out as isize,
                            nodes[*input].value.data(),
                            n_in as isize,
                            1,
                            R::zero(),
                            &mut dw,
                            n_in as isize,
                            1,
                        );
                        sink.put(*weight, dw);
                    }
                    if let Some(b) = bias {
                        let mut db = vec![R::zero(); n_out];
                        for row in g.chunks(n_out) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        sink.put(*b, db);
                    }
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                    dims: [b, c, h, w],
                } => {
                    let (b, c, hw) = (*b, *c, *h * *w);
                    let n = R::lit((b * hw) as f64);
                    let gam = nodes[*gamma].value.data();
                    let mut dgamma = vec![R::zero(); c];
                    let mut dbeta = vec![R::zero(); c];
                    for bb in 0..b {
                        for ci in 0..c {
                            let off = (bb * c + ci) * hw;
                            for j in off..off + hw {
                                dgamma[ci] += g[j] * xhat[j];
                                dbeta[ci] += g[j];
                            }
                        }
                    }
                    if nodes[*input].requires_grad {
                        let mut dx = vec![R::zero(); g.len()];
                        for bb in 0..b {
                            for ci in 0..c {
                                let off = (bb * c + ci) * hw;
                                let k = gam[ci] * inv_std[ci];
                                for j in off..off + hw {
                                    dx[j] = if *train {
                                        k / n * (n * g[j] - dbeta[ci] - xhat[j] * dgamma[ci])
                                    } else {
                                        k * g[j]
                                    };
                                }
                            }
                        }
                        sink.put(*input, dx);
                    }
                    sink.put(*gamma, dgamma);
                    sink.put(*beta, dbeta);
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut dx = vec![R::zero(); nodes[*input].value.len()];
                    for (&a, &gv) in argmax.iter().zip(&g) {
                        dx[a as usize] += gv;
                    }
                    sink.put(*input, dx);
                }
                Op::Upsample2 {
                    input,
                    mode,
                    planes,
                    h,
                    w,
                } => {
                    let dx = match mode {
                        UpMode::Nearest => kernels::upsample_nearest_backward(&g, *planes, *h, *w),
                        UpMode::Bilinear => kernels::upsample_bilinear_backward(&g, *planes, *h, *w),
                    };
                    sink.put(*input, dx);
                }
                Op::Affine { terms } => {
                    for &(t, c) in terms {
                        if c == R::one() {
                            sink.put(t, g.clone());
                        } else {
                            sink.put(t, g.iter().map(|&v| v * c).collect());
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let va = nodes[*a].value.data();
                    let vb = nodes[*b].value.data();
                    sink.put(*a, g.iter().zip(vb).map(|(&gv, &y)| gv * y).collect());
                    sink.put(*b, g.iter().zip(va).map(|(&gv, &x)| gv * x).collect());
                }
                Op::Sigmoid { input } => {
                    let y = node.value.data();
                    sink.put(
                        *input,
                        g.iter()
                            .zip(y)
                            .map(|(&gv, &s)| gv * s * (R::one() - s))
                            .collect(),
                    );
                }
                Op::Spike {
                    input,
                    threshold,
                    alpha,
                } => {
                    let v = nodes[*input].value.data();
                    sink.put(
                        *input,
                        g.iter()
                            .zip(v)
                            .map(|(&gv, &x)| gv * crate::neuron::surrogate_grad(x - *threshold, *alpha))
                            .collect(),
                    );
                }
                Op::Reset {
                    v_pre,
                    spikes,
                    rule,
                } => {
                    let v = nodes[*v_pre].value.data();
                    let s = nodes[*spikes].value.data();
                    match *rule {
                        ResetRule::Hard { v_rest } => {
                            sink.put(
                                *v_pre,
                                g.iter().zip(s).map(|(&gv, &s)| gv * (R::one() - s)).collect(),
                            );
                            sink.put(
                                *spikes,
                                g.iter().zip(v).map(|(&gv, &v)| gv * (v_rest - v)).collect(),
                            );
                        }
                        ResetRule::Subtract { threshold } => {
                            sink.put(*spikes, g.iter().map(|&gv| -gv * threshold).collect());
                            sink.put(*v_pre, g);
                        }
                    }
                }
                Op::Concat { inputs, b, hw } => {
                    let total: usize = inputs.iter().map(|&(_, c)| c).sum();
                    let mut offset = 0;
                    for &(i, c) in inputs {
                        if nodes[i].requires_grad {
                            let mut dx = Vec::with_capacity(*b * c * *hw);
                            for bb in 0..*b {
                                let start = (bb * total + offset) * *hw;
                                dx.extend_from_slice(&g[start..start + c * *hw]);
                            }
                            sink.put(i, dx);
                        }
                        offset += c;
                    }
                }
                Op::Reshape { input } => sink.put(*input, g),
                Op::Sum { input, scale } => {
                    let n = nodes[*input].value.len();
                    sink.put(*input, vec![g[0] * *scale; n]);
                }
                Op::Fused { input, local_grad } => {
                    sink.put(*input, local_grad.iter().map(|&l| l * g[0]).collect());
                }
            }
        }
        self.grad_buffers += sink.allocated;
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }
}

struct Sink<'a, R> {
    nodes: &'a [Node<R>],
    grads: &'a mut [Option<Vec<R>>],
    allocated: usize,
}

impl<R: Real> Sink<'_, R> {
    fn put(&mut self, idx: usize, g: Vec<R>) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        match &mut self.grads[idx] {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            slot @ None => {
                self.allocated += 1;
                *slot = Some(g);
            }
        }
    }

    fn put_opt(&mut self, idx: usize, g: Option<Vec<R>>) {
        if let Some(g) = g {
            self.put(idx, g);
        }
    }
}
