//! Dense parameterised maps with hand-written backpropagation and Adam.
//!
//! A [`ParamFn`] is a stack of affine layers, each followed by an
//! activation. Parameters live in one flat vector: layer by layer, the
//! row-major `[out][in]` weight matrix followed by the bias. A parallel
//! gradient buffer accumulates `d loss / d params` across [`ParamFn::backward`]
//! calls until an optimizer step consumes it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Abs,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Identity, Activation::Relu, Activation::Abs];

    pub fn id(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Abs => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Abs),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Abs => math::abs(z),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Abs => {
                if z > 0.0 {
                    1.0
                } else if z < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Activations recorded by a forward pass, consumed by [`ParamFn::backward`].
#[derive(Clone, Debug, Default)]
pub struct Tape {
    /// `inputs[l]` is the input to layer `l`; the last entry is the output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    sizes: Vec<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn output(&self) -> &[f64] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn clear(&mut self) {
        self.sizes.clear();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamFn {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    grads: Vec<f64>,
    offsets: Vec<usize>,
}

impl ParamFn {
    /// Zero-initialised map with one activation per layer.
    pub fn new(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Input("a map needs at least an input and an output size".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::Input(format!("zero-width layer in {sizes:?}")));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::Input(format!(
                "{} activations for {} layers",
                activations.len(),
                sizes.len() - 1
            )));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut n = 0;
        for w in sizes.windows(2) {
            offsets.push(n);
            n += w[0] * w[1] + w[1];
        }
        offsets.push(n);
        Ok(ParamFn {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; n],
            grads: vec![0.0; n],
            offsets,
        })
    }

    /// Multi-layer map with `hidden` after every layer but the last, initialised
    /// uniformly in `±1/sqrt(fan_in)`.
    pub fn mlp(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Result<Self> {
        let n_layers = sizes.len().saturating_sub(1);
        let mut acts = vec![hidden; n_layers];
        if let Some(last) = acts.last_mut() {
            *last = output;
        }
        let mut f = Self::new(sizes, &acts)?;
        f.init_uniform(rng);
        Ok(f)
    }

    pub fn from_parts(sizes: &[usize], activations: &[Activation], params: Vec<f64>) -> Result<Self> {
        let mut f = Self::new(sizes, activations)?;
        if params.len() != f.params.len() {
            return Err(Error::Input(format!(
                "{} parameters supplied, layout needs {}",
                params.len(),
                f.params.len()
            )));
        }
        f.params = params;
        Ok(f)
    }

    pub fn init_uniform(&mut self, rng: &mut Rng) {
        for l in 0..self.n_layers() {
            let bound = 1.0 / math::sqrt(self.sizes[l] as f64);
            let (start, end) = (self.offsets[l], self.offsets[l + 1]);
            for p in &mut self.params[start..end] {
                *p = rng.gen_range(-bound..bound);
            }
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.grads.iter().map(|g| g * g).sum()
    }

    /// Row-major weight matrix of `layer`.
    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let start = self.offsets[layer];
        let n = self.sizes[layer] * self.sizes[layer + 1];
        &mut self.params[start..start + n]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let start = self.offsets[layer] + self.sizes[layer] * self.sizes[layer + 1];
        &mut self.params[start..self.offsets[layer + 1]]
    }

    /// Continues a forward pass from the pre-activation of `layer`, for
    /// callers that assemble that pre-activation themselves.
    pub fn forward_from_preactivation(&self, layer: usize, pre: &[f64]) -> Result<Vec<f64>> {
        if layer >= self.n_layers() || pre.len() != self.sizes[layer + 1] {
            return Err(Error::Input(format!(
                "pre-activation of length {} does not fit layer {layer}",
                pre.len()
            )));
        }
        let act = self.activations[layer];
        let mut x: Vec<f64> = pre.iter().map(|&z| act.apply(z)).collect();
        let mut y = Vec::new();
        for l in layer + 1..self.n_layers() {
            self.layer_forward(l, &x, &mut y);
            let act = self.activations[l];
            y.iter_mut().for_each(|v| *v = act.apply(*v));
            core::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    /// Weight matrix (row-major `[out][in]`) and bias of `layer`.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let start = self.offsets[layer];
        let split = start + self.sizes[layer] * self.sizes[layer + 1];
        (&self.params[start..split], &self.params[split..self.offsets[layer + 1]])
    }

    /// Copies parameters from a map with the same layout.
    pub fn copy_params_from(&mut self, other: &ParamFn) -> Result<()> {
        if self.sizes != other.sizes || self.activations != other.activations {
            return Err(Error::Input("parameter layouts differ".into()));
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.n_inputs() {
            return Err(Error::Input(format!(
                "input has length {}, map expects {}",
                input.len(),
                self.n_inputs()
            )));
        }
        Ok(())
    }

    /// Evaluates the map without recording activations.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut y = Vec::new();
        for l in 0..self.n_layers() {
            self.layer_forward(l, &x, &mut y);
            let act = self.activations[l];
            y.iter_mut().for_each(|v| *v = act.apply(*v));
            core::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    fn layer_forward(&self, l: usize, x: &[f64], out: &mut Vec<f64>) {
        let n_in = self.sizes[l];
        let (w, b) = self.layer(l);
        out.clear();
        out.extend(
            w.chunks_exact(n_in)
                .zip(b)
                .map(|(row, bias)| math::dot(row, x) + bias),
        );
    }

    /// Evaluates the map and records what [`ParamFn::backward`] needs.
    pub fn forward_tape<'t>(&self, input: &[f64], tape: &'t mut Tape) -> Result<&'t [f64]> {
        self.check_input(input)?;
        let n = self.n_layers();
        tape.inputs.resize_with(n + 1, Vec::new);
        tape.pre.resize_with(n, Vec::new);
        tape.inputs[0].clear();
        tape.inputs[0].extend_from_slice(input);
        for l in 0..n {
            let (before, after) = tape.inputs.split_at_mut(l + 1);
            let pre = &mut tape.pre[l];
            self.layer_forward(l, &before[l], pre);
            let act = self.activations[l];
            let out = &mut after[0];
            out.clear();
            out.extend(pre.iter().map(|&z| act.apply(z)));
        }
        tape.sizes.clear();
        tape.sizes.extend_from_slice(&self.sizes);
        Ok(&tape.inputs[n])
    }

    /// Accumulates parameter gradients for the pass recorded on `tape` and
    /// returns the gradient with respect to the input.
    pub fn backward(&mut self, tape: &Tape, upstream: &[f64]) -> Result<Vec<f64>> {
        if tape.is_empty() {
            return Err(Error::State("backward called without a recorded forward pass".into()));
        }
        if tape.sizes != self.sizes {
            return Err(Error::State("tape was recorded by a map with a different layout".into()));
        }
        if upstream.len() != self.n_outputs() {
            return Err(Error::Input(format!(
                "upstream gradient has length {}, map has {} outputs",
                upstream.len(),
                self.n_outputs()
            )));
        }
        let mut g = upstream.to_vec();
        let mut dz = Vec::new();
        for l in (0..self.n_layers()).rev() {
            let act = self.activations[l];
            dz.clear();
            dz.extend(tape.pre[l].iter().zip(&g).map(|(&z, &gi)| gi * act.derivative(z)));
            let n_in = self.sizes[l];
            let n_out = self.sizes[l + 1];
            let x = &tape.inputs[l];
            let start = self.offsets[l];
            let split = start + n_in * n_out;
            {
                let gw = &mut self.grads[start..split];
                for (row, &d) in gw.chunks_exact_mut(n_in).zip(&dz) {
                    if d != 0.0 {
                        math::axpy(d, x, row);
                    }
                }
            }
            for (gb, &d) in self.grads[split..self.offsets[l + 1]].iter_mut().zip(&dz) {
                *gb += d;
            }
            let w = &self.params[start..split];
            g.clear();
            g.resize(n_in, 0.0);
            for (row, &d) in w.chunks_exact(n_in).zip(&dz) {
                if d != 0.0 {
                    math::axpy(d, row, &mut g);
                }
            }
        }
        Ok(g)
    }
}

/// Scales the gradients of all maps so that their joint norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(fns: &mut [&mut ParamFn], max_norm: f64) -> f64 {
    let norm = math::sqrt(fns.iter().map(|f| f.grad_norm_sq()).sum());
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for f in fns.iter_mut() {
            f.grads_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// Bias-corrected Adam state for one [`ParamFn`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        })
    }

    pub fn for_fn(f: &ParamFn, lr: f64) -> Result<Self> {
        Self::new(f.n_params(), lr)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients and clears them.
    pub fn step(&mut self, f: &mut ParamFn) -> Result<()> {
        if f.n_params() != self.m.len() {
            return Err(Error::Input(format!(
                "optimizer sized for {} parameters, map has {}",
                self.m.len(),
                f.n_params()
            )));
        }
        if let Some(i) = f.grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient at parameter {i}")));
        }
        self.t += 1;
        let bc1 = 1.0 - math::powi(self.beta1, self.t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - math::powi(self.beta2, self.t.min(i32::MAX as u64) as i32);
        let step = self.lr / bc1;
        for (((p, g), m), v) in f
            .params
            .iter_mut()
            .zip(&f.grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / (math::sqrt(*v / bc2) + self.eps);
        }
        f.zero_grad();
        Ok(())
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"FIMP";
const CHECKPOINT_VERSION: u32 = 1;

/// Serialises maps as: magic `FIMP`, `u32` version, `u32` map count, then per
/// map `u32` layer-size count, the sizes as `u32`, one `u8` activation id per
/// layer, `u64` parameter count and the parameters as `f64`. Little-endian.
pub fn encode_checkpoint(fns: &[&ParamFn]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(fns.len() as u32).to_le_bytes());
    for f in fns {
        out.extend_from_slice(&(f.sizes.len() as u32).to_le_bytes());
        for &s in &f.sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        out.extend(f.activations.iter().map(|a| a.id()));
        out.extend_from_slice(&(f.params.len() as u64).to_le_bytes());
        for p in &f.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Input(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<ParamFn>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Input("not a parameter checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Input(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut fns = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let n_sizes = r.u32()? as usize;
        if n_sizes < 2 {
            return Err(Error::Input("checkpoint map has fewer than two layer sizes".into()));
        }
        let mut sizes = Vec::with_capacity(n_sizes.min(64));
        for _ in 0..n_sizes {
            sizes.push(r.u32()? as usize);
        }
        let acts = r
            .take(n_sizes - 1)?
            .iter()
            .map(|&id| Activation::from_id(id).ok_or_else(|| Error::Input(format!("unknown activation id {id}"))))
            .collect::<Result<Vec<_>>>()?;
        let n_params = r.u64()? as usize;
        let raw = r.take(n_params.checked_mul(8).ok_or_else(|| Error::Input("parameter count overflow".into()))?)?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        fns.push(ParamFn::from_parts(&sizes, &acts, params)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Input(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    Ok(fns)
}
