//! Trainable IMU student: a channel-shared two-layer tanh encoder, concat or
//! mean pooling over channels, and a two-layer projection head whose output is
//! L2-normalized.
//!
//! ```text
//! h_c = tanh(W1·x_c + b1)          per channel c, shared weights
//! f_c = tanh(W2·h_c + b2)
//! p   = concat(f_1..f_C) | mean(f_1..f_C)
//! g   = tanh(V1·p + c1)
//! u   = V2·g + c2
//! z   = u / ‖u‖
//! ```
//!
//! Parameters live in one flat buffer laid out as
//! `W1, b1, W2, b2, V1, c1, V2, c2` (matrices row-major), which is also the
//! order they are written to checkpoints.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::tensor::{normalize_slice, norm2, UnitVec, MIN_NORM};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CMDO";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Concat,
    Mean,
}

impl Pooling {
    fn code(self) -> u8 {
        match self {
            Pooling::Concat => 0,
            Pooling::Mean => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Pooling::Concat),
            1 => Ok(Pooling::Mean),
            other => Err(Error::Malformed(format!("unknown pooling code {other}"))),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Concat => "concat",
            Pooling::Mean => "mean",
        })
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Pooling::Concat),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::Config(format!(
                "unknown pooling {other:?} (expected concat or mean)"
            ))),
        }
    }
}

/// Shape of the student network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    /// Time steps per channel (T).
    pub window_len: usize,
    /// Encoder hidden width (H₁).
    pub enc_hidden: usize,
    /// Per-channel feature width (D).
    pub channel_dim: usize,
    /// Number of IMU channels (C).
    pub channels: usize,
    /// Projector hidden width (H₂).
    pub proj_hidden: usize,
    /// Output embedding dimension (d).
    pub embed_dim: usize,
    pub pooling: Pooling,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            window_len: 100,
            enc_hidden: 64,
            channel_dim: 32,
            channels: 6,
            proj_hidden: 64,
            embed_dim: 32,
            pooling: Pooling::Concat,
        }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("window_len", self.window_len),
            ("enc_hidden", self.enc_hidden),
            ("channel_dim", self.channel_dim),
            ("channels", self.channels),
            ("proj_hidden", self.proj_hidden),
            ("embed_dim", self.embed_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidShape(format!("{name} must be positive")));
            }
            if v > u32::MAX as usize {
                return Err(Error::InvalidShape(format!("{name} = {v} is too large")));
            }
        }
        Ok(())
    }

    /// Width of the pooled feature fed to the projector.
    pub fn pooled_dim(&self) -> usize {
        match self.pooling {
            Pooling::Concat => self.channels * self.channel_dim,
            Pooling::Mean => self.channel_dim,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn num_params(&self) -> usize {
        self.layout().total
    }
}

/// Names of the eight parameter tensors, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamTensor {
    EncInWeight,
    EncInBias,
    EncOutWeight,
    EncOutBias,
    ProjInWeight,
    ProjInBias,
    ProjOutWeight,
    ProjOutBias,
}

impl ParamTensor {
    pub const ALL: [ParamTensor; 8] = [
        ParamTensor::EncInWeight,
        ParamTensor::EncInBias,
        ParamTensor::EncOutWeight,
        ParamTensor::EncOutBias,
        ParamTensor::ProjInWeight,
        ParamTensor::ProjInBias,
        ParamTensor::ProjOutWeight,
        ParamTensor::ProjOutBias,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Offsets and shapes of each tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    offsets: [usize; 8],
    shapes: [(usize, usize); 8],
    total: usize,
}

impl Layout {
    fn new(arch: &Arch) -> Self {
        let (t, h1, d_c, h2, d) = (
            arch.window_len,
            arch.enc_hidden,
            arch.channel_dim,
            arch.proj_hidden,
            arch.embed_dim,
        );
        let p = arch.pooled_dim();
        let shapes = [
            (h1, t),
            (h1, 1),
            (d_c, h1),
            (d_c, 1),
            (h2, p),
            (h2, 1),
            (d, h2),
            (d, 1),
        ];
        let mut offsets = [0; 8];
        let mut total = 0;
        for (i, (r, c)) in shapes.iter().enumerate() {
            offsets[i] = total;
            total += r * c;
        }
        Self {
            offsets,
            shapes,
            total,
        }
    }

    /// `(rows, cols)`; biases are `(n, 1)`.
    pub fn shape(&self, t: ParamTensor) -> (usize, usize) {
        self.shapes[t.index()]
    }

    pub fn range(&self, t: ParamTensor) -> std::ops::Range<usize> {
        let (r, c) = self.shape(t);
        let start = self.offsets[t.index()];
        start..start + r * c
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// One IMU window: `channels × len` samples stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    channels: usize,
    len: usize,
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl ImuWindow {
    pub fn new(channels: usize, len: usize, samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if channels == 0 || len == 0 {
            return Err(Error::InvalidShape("window must have channels and steps".into()));
        }
        if samples.len() != channels * len {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {channels}×{len} window",
                samples.len()
            )));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidShape(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            channels,
            len,
            samples,
            sample_rate_hz,
        })
    }

    pub fn from_channels(rows: &[Vec<f64>], sample_rate_hz: f64) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(Error::ShapeMismatch("ragged channel rows".into()));
        }
        Self::new(rows.len(), len, rows.concat(), sample_rate_hz)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c * self.len..(c + 1) * self.len]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// `y = W·x + b` for a row-major `rows × cols` matrix.
fn affine(weight: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, (o, b)) in out.iter_mut().zip(bias).enumerate() {
        let row = &weight[r * cols..(r + 1) * cols];
        *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

/// Accumulates `dW += dy ⊗ x`, `db += dy` and, if requested, writes `dx = Wᵀ·dy`.
fn affine_backward(
    weight: &[f64],
    x: &[f64],
    dy: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        grad_b[r] += g;
        let gw = &mut grad_w[r * cols..(r + 1) * cols];
        for (gwi, xi) in gw.iter_mut().zip(x) {
            *gwi += g * xi;
        }
    }
    if let Some(dx) = dx {
        dx.fill(0.0);
        for (r, &g) in dy.iter().enumerate() {
            let row = &weight[r * cols..(r + 1) * cols];
            for (d, w) in dx.iter_mut().zip(row) {
                *d += g * w;
            }
        }
    }
}

/// Backpropagates `grad_z` through `z = u/‖u‖`: returns `(I − z zᵀ)·grad_z / ‖u‖`.
pub fn normalize_backward(z: &[f64], raw_norm: f64, grad_z: &[f64]) -> Vec<f64> {
    let proj: f64 = z.iter().zip(grad_z).map(|(a, b)| a * b).sum();
    z.iter()
        .zip(grad_z)
        .map(|(zi, gi)| (gi - proj * zi) / raw_norm)
        .collect()
}

/// Pools per-channel features. Concat keeps channel order; mean averages entrywise.
pub fn pool(channel_feats: &[Vec<f64>], mode: Pooling) -> Result<Vec<f64>> {
    let dim = channel_feats
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::ShapeMismatch("no channel features to pool".into()))?;
    if channel_feats.iter().any(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch("channel features differ in width".into()));
    }
    Ok(match mode {
        Pooling::Concat => channel_feats.concat(),
        Pooling::Mean => {
            let scale = 1.0 / channel_feats.len() as f64;
            (0..dim)
                .map(|i| channel_feats.iter().map(|f| f[i]).sum::<f64>() * scale)
                .collect()
        }
    })
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    enc_hidden: Vec<Vec<f64>>,
    channel_feats: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    proj_hidden: Vec<f64>,
    raw_norm: f64,
    embedding: UnitVec,
}

impl ForwardTrace {
    pub fn embedding(&self) -> &UnitVec {
        &self.embedding
    }

    pub fn into_embedding(self) -> UnitVec {
        self.embedding
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams {
    arch: Arch,
    layout: Layout,
    data: Vec<f64>,
}

/// Gradient buffer with the same layout as [`StudentParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct StudentGrad {
    layout: Layout,
    data: Vec<f64>,
}

impl StudentGrad {
    pub fn zeros(arch: &Arch) -> Self {
        let layout = arch.layout();
        let data = vec![0.0; layout.total()];
        Self { layout, data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn tensor(&self, t: ParamTensor) -> &[f64] {
        &self.data[self.layout.range(t)]
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.data)
    }

    /// Adds `other` entrywise.
    pub fn accumulate(&mut self, other: &StudentGrad) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl StudentParams {
    /// Seeded init: weights `U(−1/√fan_in, 1/√fan_in)`, biases zero.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut data = vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in [
            ParamTensor::EncInWeight,
            ParamTensor::EncOutWeight,
            ParamTensor::ProjInWeight,
            ParamTensor::ProjOutWeight,
        ] {
            let (_, fan_in) = layout.shape(t);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in &mut data[layout.range(t)] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(Self { arch, layout, data })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let data = vec![0.0; layout.total()];
        Ok(Self { arch, layout, data })
    }

    pub fn from_flat(arch: Arch, data: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        if data.len() != layout.total() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for an architecture needing {}",
                data.len(),
                layout.total()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { arch, layout, data })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn tensor(&self, t: ParamTensor) -> &[f64] {
        &self.data[self.layout.range(t)]
    }

    pub fn tensor_mut(&mut self, t: ParamTensor) -> &mut [f64] {
        let r = self.layout.range(t);
        &mut self.data[r]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_window(&self, w: &ImuWindow) -> Result<()> {
        if w.channels() != self.arch.channels || w.len() != self.arch.window_len {
            return Err(Error::ShapeMismatch(format!(
                "window is {}×{}, model expects {}×{}",
                w.channels(),
                w.len(),
                self.arch.channels,
                self.arch.window_len
            )));
        }
        Ok(())
    }

    fn encode_channel_traced(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut hidden = vec![0.0; self.arch.enc_hidden];
        affine(
            self.tensor(ParamTensor::EncInWeight),
            self.tensor(ParamTensor::EncInBias),
            x,
            &mut hidden,
        );
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = vec![0.0; self.arch.channel_dim];
        affine(
            self.tensor(ParamTensor::EncOutWeight),
            self.tensor(ParamTensor::EncOutBias),
            &hidden,
            &mut out,
        );
        out.iter_mut().for_each(|v| *v = v.tanh());
        (hidden, out)
    }

    /// Shared per-channel encoder: `tanh(W2·tanh(W1·x + b1) + b2)`.
    pub fn encode_channel(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.arch.window_len {
            return Err(Error::ShapeMismatch(format!(
                "channel has {} steps, model expects {}",
                x.len(),
                self.arch.window_len
            )));
        }
        Ok(self.encode_channel_traced(x).1)
    }

    fn project_traced(&self, pooled: &[f64]) -> Result<(Vec<f64>, f64, UnitVec)> {
        if pooled.len() != self.arch.pooled_dim() {
            return Err(Error::ShapeMismatch(format!(
                "pooled feature has {} entries, projector expects {}",
                pooled.len(),
                self.arch.pooled_dim()
            )));
        }
        let mut hidden = vec![0.0; self.arch.proj_hidden];
        affine(
            self.tensor(ParamTensor::ProjInWeight),
            self.tensor(ParamTensor::ProjInBias),
            pooled,
            &mut hidden,
        );
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut raw = vec![0.0; self.arch.embed_dim];
        affine(
            self.tensor(ParamTensor::ProjOutWeight),
            self.tensor(ParamTensor::ProjOutBias),
            &hidden,
            &mut raw,
        );
        let raw_norm = norm2(&raw);
        let z = normalize_slice(&raw)?;
        debug_assert!(raw_norm > MIN_NORM);
        Ok((hidden, raw_norm, z))
    }

    /// Projection head followed by L2 normalization.
    pub fn project_and_normalize(&self, pooled: &[f64]) -> Result<UnitVec> {
        Ok(self.project_traced(pooled)?.2)
    }

    pub fn forward_trace(&self, w: &ImuWindow) -> Result<ForwardTrace> {
        self.check_window(w)?;
        let (enc_hidden, channel_feats): (Vec<_>, Vec<_>) = (0..w.channels())
            .map(|c| self.encode_channel_traced(w.channel(c)))
            .unzip();
        let pooled = pool(&channel_feats, self.arch.pooling)?;
        let (proj_hidden, raw_norm, embedding) = self.project_traced(&pooled)?;
        Ok(ForwardTrace {
            enc_hidden,
            channel_feats,
            pooled,
            proj_hidden,
            raw_norm,
            embedding,
        })
    }

    pub fn forward(&self, w: &ImuWindow) -> Result<UnitVec> {
        Ok(self.forward_trace(w)?.embedding)
    }

    /// Gradient of a scalar loss w.r.t. every parameter, given `grad_z`, the
    /// loss gradient w.r.t. the normalized embedding.
    pub fn backward(&self, w: &ImuWindow, grad_z: &[f64]) -> Result<StudentGrad> {
        let trace = self.forward_trace(w)?;
        let mut grad = StudentGrad::zeros(&self.arch);
        self.backward_into(w, &trace, grad_z, &mut grad)?;
        Ok(grad)
    }

    /// Accumulates into `grad` using a trace from [`forward_trace`] on the same window.
    ///
    /// [`forward_trace`]: StudentParams::forward_trace
    pub fn backward_into(
        &self,
        w: &ImuWindow,
        trace: &ForwardTrace,
        grad_z: &[f64],
        grad: &mut StudentGrad,
    ) -> Result<()> {
        self.check_window(w)?;
        if grad_z.len() != self.arch.embed_dim {
            return Err(Error::DimMismatch {
                expected: self.arch.embed_dim,
                found: grad_z.len(),
            });
        }
        if let Some(index) = grad_z.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let layout = &self.layout;
        let (head, tail) = grad.data.split_at_mut(layout.range(ParamTensor::ProjInWeight).start);
        let enc_grads = split_tensors(head, layout, &ParamTensor::ALL[..4], 0);
        let proj_grads = split_tensors(
            tail,
            layout,
            &ParamTensor::ALL[4..],
            layout.range(ParamTensor::ProjInWeight).start,
        );
        let [g_w1, g_b1, g_w2, g_b2] = enc_grads;
        let [g_v1, g_c1, g_v2, g_c2] = proj_grads;

        let d_raw = normalize_backward(trace.embedding.as_slice(), trace.raw_norm, grad_z);

        let mut d_proj_hidden = vec![0.0; self.arch.proj_hidden];
        affine_backward(
            self.tensor(ParamTensor::ProjOutWeight),
            &trace.proj_hidden,
            &d_raw,
            g_v2,
            g_c2,
            Some(&mut d_proj_hidden),
        );
        for (d, h) in d_proj_hidden.iter_mut().zip(&trace.proj_hidden) {
            *d *= 1.0 - h * h;
        }
        let mut d_pooled = vec![0.0; self.arch.pooled_dim()];
        affine_backward(
            self.tensor(ParamTensor::ProjInWeight),
            &trace.pooled,
            &d_proj_hidden,
            g_v1,
            g_c1,
            Some(&mut d_pooled),
        );

        let d_c = self.arch.channel_dim;
        let mean_scale = 1.0 / self.arch.channels as f64;
        let mut d_feat = vec![0.0; d_c];
        let mut d_hidden = vec![0.0; self.arch.enc_hidden];
        for c in 0..self.arch.channels {
            match self.arch.pooling {
                Pooling::Concat => d_feat.copy_from_slice(&d_pooled[c * d_c..(c + 1) * d_c]),
                Pooling::Mean => {
                    for (d, p) in d_feat.iter_mut().zip(&d_pooled) {
                        *d = p * mean_scale;
                    }
                }
            }
            for (d, f) in d_feat.iter_mut().zip(&trace.channel_feats[c]) {
                *d *= 1.0 - f * f;
            }
            affine_backward(
                self.tensor(ParamTensor::EncOutWeight),
                &trace.enc_hidden[c],
                &d_feat,
                g_w2,
                g_b2,
                Some(&mut d_hidden),
            );
            for (d, h) in d_hidden.iter_mut().zip(&trace.enc_hidden[c]) {
                *d *= 1.0 - h * h;
            }
            affine_backward(
                self.tensor(ParamTensor::EncInWeight),
                w.channel(c),
                &d_hidden,
                g_w1,
                g_b1,
                None,
            );
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(36 + 8 * self.data.len());
        self.write_checkpoint(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    /// `CMDO` checkpoint: magic, version u32, (T, H₁, D, C, H₂, d) as u32,
    /// pooling u8, then all tensors as little-endian f64 in storage order.
    pub fn write_checkpoint(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        let a = &self.arch;
        w.write_all(&CHECKPOINT_MAGIC)?;
        binio::write_u32(w, CHECKPOINT_VERSION)?;
        for v in [
            a.window_len,
            a.enc_hidden,
            a.channel_dim,
            a.channels,
            a.proj_hidden,
            a.embed_dim,
        ] {
            binio::write_u32(w, v as u32)?;
        }
        binio::write_u8(w, a.pooling.code())?;
        binio::write_f64s(w, &self.data)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let params = Self::read_checkpoint(&mut r)?;
        r.finish()?;
        Ok(params)
    }

    pub(crate) fn read_checkpoint(r: &mut Reader<'_>) -> Result<Self> {
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let arch = Arch {
            window_len: dims[0],
            enc_hidden: dims[1],
            channel_dim: dims[2],
            channels: dims[3],
            proj_hidden: dims[4],
            embed_dim: dims[5],
            pooling: Pooling::from_code(r.u8()?)?,
        };
        arch.validate()?;
        let data = r.f64s(arch.num_params())?;
        Self::from_flat(arch, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_checkpoint_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&binio::read_file(path)?)
    }
}

fn split_tensors<'a>(
    mut buf: &'a mut [f64],
    layout: &Layout,
    tensors: &[ParamTensor],
    base: usize,
) -> [&'a mut [f64]; 4] {
    let mut out: Vec<&'a mut [f64]> = Vec::with_capacity(4);
    let mut cursor = base;
    for &t in tensors {
        let r = layout.range(t);
        debug_assert_eq!(r.start, cursor);
        let (head, rest) = buf.split_at_mut(r.len());
        out.push(head);
        buf = rest;
        cursor = r.end;
    }
    out.try_into().expect("exactly four tensors per block")
}
