use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Declarative description of one layer; shapes are inferred when a
/// network is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Same-padded, stride-1 convolution over all leading axes; the last
    /// axis is the channel axis.
    Conv { kernel: Vec<usize>, filters: usize },
    Relu,
    /// 2x2 max pooling with stride 2; odd edges keep a partial window.
    #[serde(rename = "maxpool2d")]
    MaxPool2d,
    /// Row-major reinterpretation of the per-sample shape.
    Reshape { shape: Vec<usize> },
    Flatten,
    Dense { units: usize },
    Dropout { rate: f64 },
}

impl LayerSpec {
    pub fn kind_name(&self) -> String {
        match self {
            LayerSpec::Conv { kernel, .. } => format!("conv{}d", kernel.len()),
            LayerSpec::Relu => "relu".into(),
            LayerSpec::MaxPool2d => "maxpool2d".into(),
            LayerSpec::Reshape { .. } => "reshape".into(),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Dense { .. } => "dense".into(),
            LayerSpec::Dropout { .. } => "dropout".into(),
        }
    }
}

/// Forward-pass mode. Training caches what the backward pass needs and
/// enables dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

const NO_TAP: usize = usize::MAX;

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    kernel: Vec<usize>,
    in_ch: usize,
    out_ch: usize,
    positions: usize,
    taps: Vec<usize>,
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    grad_w: Vec<f64>,
    grad_b: Vec<f64>,
    cache: Option<Tensor>,
    pub(crate) input_grad: bool,
}

impl Conv {
    fn new(spatial: &[usize], kernel: &[usize], in_ch: usize, out_ch: usize) -> Self {
        let positions: usize = spatial.iter().product();
        let k: usize = kernel.iter().product();
        let mut taps = Vec::with_capacity(positions * k);
        let mut out_idx = vec![0usize; spatial.len()];
        let mut off = vec![0usize; kernel.len()];
        for _ in 0..positions {
            off.iter_mut().for_each(|o| *o = 0);
            for _ in 0..k {
                let mut src = 0usize;
                let mut inside = true;
                for d in 0..spatial.len() {
                    let pos = out_idx[d] as isize + off[d] as isize - ((kernel[d] as isize - 1) / 2);
                    if pos < 0 || pos >= spatial[d] as isize {
                        inside = false;
                        break;
                    }
                    src = src * spatial[d] + pos as usize;
                }
                taps.push(if inside { src } else { NO_TAP });
                increment(&mut off, kernel);
            }
            increment(&mut out_idx, spatial);
        }
        let n_w = k * in_ch * out_ch;
        Conv {
            kernel: kernel.to_vec(),
            in_ch,
            out_ch,
            positions,
            taps,
            weight: vec![0.0; n_w],
            bias: vec![0.0; out_ch],
            grad_w: vec![0.0; n_w],
            grad_b: vec![0.0; out_ch],
            cache: None,
            input_grad: true,
        }
    }

    fn taps_per_position(&self) -> usize {
        self.kernel.iter().product()
    }

    fn fan_in(&self) -> usize {
        self.taps_per_position() * self.in_ch
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let c = self.in_ch;
        for (dst, &src) in col.chunks_exact_mut(c).zip(&self.taps) {
            if src == NO_TAP {
                dst.fill(0.0);
            } else {
                dst.copy_from_slice(&x[src * c..(src + 1) * c]);
            }
        }
    }

    fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor {
        let b = x.shape()[0];
        let (p, o) = (self.positions, self.out_ch);
        let kc = self.fan_in();
        let in_len = p * self.in_ch;
        let mut out = vec![0.0; b * p * o];
        let mut col = vec![0.0; p * kc];
        for s in 0..b {
            self.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut col);
            let y = &mut out[s * p * o..(s + 1) * p * o];
            for row in y.chunks_exact_mut(o) {
                row.copy_from_slice(&self.bias);
            }
            gemm(p, kc, o, 1.0, &col, false, &self.weight, false, 1.0, y);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = o;
        if matches!(mode, Mode::Train { .. }) {
            self.cache = Some(x);
        }
        Tensor::new(shape, out).expect("conv output shape")
    }

    fn backward(&mut self, g: Tensor) -> Option<Tensor> {
        let x = self.cache.as_ref().expect("conv backward without training forward");
        let b = x.shape()[0];
        let (p, o, c) = (self.positions, self.out_ch, self.in_ch);
        let kc = self.fan_in();
        let in_len = p * c;
        let mut col = vec![0.0; p * kc];
        let mut dcol = vec![0.0; p * kc];
        let mut dx = if self.input_grad { vec![0.0; x.len()] } else { Vec::new() };
        for s in 0..b {
            self.im2col(&x.data()[s * in_len..(s + 1) * in_len], &mut col);
            let gs = &g.data()[s * p * o..(s + 1) * p * o];
            gemm(kc, p, o, 1.0, &col, true, gs, false, 1.0, &mut self.grad_w);
            for row in gs.chunks_exact(o) {
                for (acc, v) in self.grad_b.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            if self.input_grad {
                gemm(p, o, kc, 1.0, gs, false, &self.weight, true, 0.0, &mut dcol);
                let dxs = &mut dx[s * in_len..(s + 1) * in_len];
                for (src, &tap) in dcol.chunks_exact(c).zip(&self.taps) {
                    if tap != NO_TAP {
                        for (d, v) in dxs[tap * c..(tap + 1) * c].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
        if self.input_grad {
            Some(Tensor::new(x.shape().to_vec(), dx).expect("conv input grad shape"))
        } else {
            None
        }
    }
}

fn increment(idx: &mut [usize], dims: &[usize]) {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < dims[d] {
            return;
        }
        idx[d] = 0;
    }
}

/// Single-sample convolution: `input` has shape `(spatial..., C)`, `kernel`
/// has shape `(k..., C, O)`; the result has shape `(spatial..., O)`.
pub fn conv_forward(input: &Tensor, kernel: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let r = input.shape().len();
    if r < 2 || kernel.shape().len() != r + 1 {
        return Err(Error::ShapeMismatch(format!(
            "conv input {:?} incompatible with kernel {:?}",
            input.shape(),
            kernel.shape()
        )));
    }
    let spatial = &input.shape()[..r - 1];
    let c = input.shape()[r - 1];
    let k = &kernel.shape()[..r - 1];
    let o = kernel.shape()[r];
    if kernel.shape()[r - 1] != c || bias.len() != o {
        return Err(Error::ShapeMismatch("conv channel or bias mismatch".into()));
    }
    let mut conv = Conv::new(spatial, k, c, o);
    conv.weight.copy_from_slice(kernel.data());
    conv.bias.copy_from_slice(bias);
    let mut shape = vec![1];
    shape.extend_from_slice(input.shape());
    let x = input.clone().reshape(&shape)?;
    let y = conv.forward(x, Mode::Eval);
    let mut out_shape = spatial.to_vec();
    out_shape.push(o);
    y.reshape(&out_shape)
}

#[derive(Debug, Clone)]
pub(crate) struct MaxPool2d {
    in_shape: [usize; 3],
    out_shape: [usize; 3],
    argmax: Vec<usize>,
}

impl MaxPool2d {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor {
        let b = x.shape()[0];
        let [h, w, c] = self.in_shape;
        let [ho, wo, _] = self.out_shape;
        let (in_len, out_len) = (h * w * c, ho * wo * c);
        let mut out = vec![0.0; b * out_len];
        let train = matches!(mode, Mode::Train { .. });
        self.argmax.clear();
        if train {
            self.argmax.resize(b * out_len, 0);
        }
        let xd = x.data();
        for s in 0..b {
            for i in 0..ho {
                for j in 0..wo {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut arg = 0;
                        for di in 0..2 {
                            for dj in 0..2 {
                                let (ii, jj) = (2 * i + di, 2 * j + dj);
                                if ii < h && jj < w {
                                    let idx = s * in_len + (ii * w + jj) * c + ch;
                                    if xd[idx] > best {
                                        best = xd[idx];
                                        arg = idx;
                                    }
                                }
                            }
                        }
                        let o = s * out_len + (i * wo + j) * c + ch;
                        out[o] = best;
                        if train {
                            self.argmax[o] = arg;
                        }
                    }
                }
            }
        }
        let mut shape = vec![b];
        shape.extend_from_slice(&self.out_shape);
        Tensor::new(shape, out).expect("pool output shape")
    }

    fn backward(&mut self, g: Tensor) -> Tensor {
        let b = g.shape()[0];
        let mut dx = vec![0.0; b * self.in_shape.iter().product::<usize>()];
        for (&arg, v) in self.argmax.iter().zip(g.data()) {
            dx[arg] += v;
        }
        let mut shape = vec![b];
        shape.extend_from_slice(&self.in_shape);
        Tensor::new(shape, dx).expect("pool input grad shape")
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    inputs: usize,
    units: usize,
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    grad_w: Vec<f64>,
    grad_b: Vec<f64>,
    cache: Option<Tensor>,
    pub(crate) input_grad: bool,
}

impl Dense {
    fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor {
        let b = x.shape()[0];
        let mut out = Vec::with_capacity(b * self.units);
        for _ in 0..b {
            out.extend_from_slice(&self.bias);
        }
        gemm(b, self.inputs, self.units, 1.0, x.data(), false, &self.weight, false, 1.0, &mut out);
        if matches!(mode, Mode::Train { .. }) {
            self.cache = Some(x);
        }
        Tensor::new(vec![b, self.units], out).expect("dense output shape")
    }

    fn backward(&mut self, g: Tensor) -> Option<Tensor> {
        let x = self.cache.as_ref().expect("dense backward without training forward");
        let b = x.shape()[0];
        gemm(self.inputs, b, self.units, 1.0, x.data(), true, g.data(), false, 1.0, &mut self.grad_w);
        for row in g.data().chunks_exact(self.units) {
            for (acc, v) in self.grad_b.iter_mut().zip(row) {
                *acc += v;
            }
        }
        if !self.input_grad {
            return None;
        }
        let mut dx = vec![0.0; b * self.inputs];
        gemm(b, self.units, self.inputs, 1.0, g.data(), false, &self.weight, true, 0.0, &mut dx);
        Some(Tensor::new(x.shape().to_vec(), dx).expect("dense input grad shape"))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dropout {
    rate: f64,
    mask: Vec<f64>,
    pub(crate) frozen: bool,
}

impl Dropout {
    fn forward(&mut self, mut x: Tensor, mode: Mode) -> Tensor {
        let Mode::Train { seed } = mode else {
            return x;
        };
        if !(self.frozen && self.mask.len() == x.len()) {
            let keep = 1.0 - self.rate;
            let mut r = rng::seeded(seed);
            self.mask = (0..x.len())
                .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
        }
        for (v, m) in x.data_mut().iter_mut().zip(&self.mask) {
            *v *= m;
        }
        x
    }

    fn backward(&mut self, mut g: Tensor) -> Tensor {
        for (v, m) in g.data_mut().iter_mut().zip(&self.mask) {
            *v *= m;
        }
        g
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Conv(Conv),
    Relu { mask: Vec<bool> },
    MaxPool2d(MaxPool2d),
    Reshape,
    Dense(Dense),
    Dropout(Dropout),
}

/// A built layer with known per-sample input and output shapes.
#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub(crate) spec: LayerSpec,
    pub(crate) in_shape: Vec<usize>,
    pub(crate) out_shape: Vec<usize>,
    pub(crate) op: Op,
}

impl Layer {
    pub(crate) fn build(spec: &LayerSpec, in_shape: &[usize]) -> Result<Layer> {
        let bad = |msg: String| Err(Error::ShapeMismatch(msg));
        let n_in: usize = in_shape.iter().product();
        let (out_shape, op) = match spec {
            LayerSpec::Conv { kernel, filters } => {
                if kernel.len() + 1 != in_shape.len() {
                    return bad(format!("conv{}d needs a rank-{} input, got {in_shape:?}", kernel.len(), kernel.len() + 1));
                }
                if *filters == 0 || kernel.iter().any(|&k| k == 0) {
                    return Err(Error::invalid("conv kernel sizes and filter count must be positive"));
                }
                let spatial = &in_shape[..kernel.len()];
                let mut out = spatial.to_vec();
                out.push(*filters);
                let conv = Conv::new(spatial, kernel, in_shape[kernel.len()], *filters);
                (out, Op::Conv(conv))
            }
            LayerSpec::Relu => (in_shape.to_vec(), Op::Relu { mask: Vec::new() }),
            LayerSpec::MaxPool2d => {
                let &[h, w, c] = in_shape else {
                    return bad(format!("maxpool2d needs (H, W, C), got {in_shape:?}"));
                };
                let out = [h.div_ceil(2), w.div_ceil(2), c];
                let pool = MaxPool2d { in_shape: [h, w, c], out_shape: out, argmax: Vec::new() };
                (out.to_vec(), Op::MaxPool2d(pool))
            }
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() != n_in {
                    return bad(format!("cannot reshape {in_shape:?} into {shape:?}"));
                }
                (shape.clone(), Op::Reshape)
            }
            LayerSpec::Flatten => (vec![n_in], Op::Reshape),
            LayerSpec::Dense { units } => {
                if in_shape.len() != 1 {
                    return bad(format!("dense needs a flat input, got {in_shape:?}"));
                }
                if *units == 0 {
                    return Err(Error::invalid("dense units must be positive"));
                }
                let dense = Dense {
                    inputs: n_in,
                    units: *units,
                    weight: vec![0.0; n_in * units],
                    bias: vec![0.0; *units],
                    grad_w: vec![0.0; n_in * units],
                    grad_b: vec![0.0; *units],
                    cache: None,
                    input_grad: true,
                };
                (vec![*units], Op::Dense(dense))
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
                }
                (in_shape.to_vec(), Op::Dropout(Dropout { rate: *rate, mask: Vec::new(), frozen: false }))
            }
        };
        Ok(Layer { spec: spec.clone(), in_shape: in_shape.to_vec(), out_shape, op })
    }

    /// Fan-in used for weight initialization, for layers with parameters.
    pub(crate) fn fan_in(&self) -> Option<usize> {
        match &self.op {
            Op::Conv(c) => Some(c.fan_in()),
            Op::Dense(d) => Some(d.inputs),
            _ => None,
        }
    }

    pub(crate) fn param_count(&self) -> usize {
        match &self.op {
            Op::Conv(c) => c.weight.len() + c.bias.len(),
            Op::Dense(d) => d.weight.len() + d.bias.len(),
            _ => 0,
        }
    }

    /// Declared shapes of `(weight, bias)`.
    pub(crate) fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match &self.op {
            Op::Conv(c) => {
                let mut w = c.kernel.clone();
                w.extend([c.in_ch, c.out_ch]);
                Some((w, vec![c.out_ch]))
            }
            Op::Dense(d) => Some((vec![d.inputs, d.units], vec![d.units])),
            _ => None,
        }
    }

    pub(crate) fn set_input_grad(&mut self, on: bool) {
        match &mut self.op {
            Op::Conv(c) => c.input_grad = on,
            Op::Dense(d) => d.input_grad = on,
            _ => {}
        }
    }

    /// `(weight, bias)` parameter buffers.
    pub(crate) fn params(&self) -> Option<(&[f64], &[f64])> {
        match &self.op {
            Op::Conv(c) => Some((&c.weight, &c.bias)),
            Op::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    /// `(weight, bias, grad_weight, grad_bias)`.
    #[allow(clippy::type_complexity)]
    pub(crate) fn params_and_grads_mut(
        &mut self,
    ) -> Option<(&mut Vec<f64>, &mut Vec<f64>, &mut Vec<f64>, &mut Vec<f64>)> {
        match &mut self.op {
            Op::Conv(c) => Some((&mut c.weight, &mut c.bias, &mut c.grad_w, &mut c.grad_b)),
            Op::Dense(d) => Some((&mut d.weight, &mut d.bias, &mut d.grad_w, &mut d.grad_b)),
            _ => None,
        }
    }

    pub(crate) fn forward(&mut self, x: Tensor, mode: Mode) -> Tensor {
        let b = x.shape()[0];
        match &mut self.op {
            Op::Conv(c) => c.forward(x, mode),
            Op::Relu { mask } => {
                let mut x = x;
                if matches!(mode, Mode::Train { .. }) {
                    *mask = x.data().iter().map(|&v| v > 0.0).collect();
                }
                x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                x
            }
            Op::MaxPool2d(p) => p.forward(x, mode),
            Op::Reshape => {
                let mut shape = vec![b];
                shape.extend_from_slice(&self.out_shape);
                x.reshape(&shape).expect("reshape validated at build")
            }
            Op::Dense(d) => d.forward(x, mode),
            Op::Dropout(d) => d.forward(x, mode),
        }
    }

    pub(crate) fn backward(&mut self, g: Tensor) -> Option<Tensor> {
        let b = g.shape()[0];
        match &mut self.op {
            Op::Conv(c) => c.backward(g),
            Op::Relu { mask } => {
                let mut g = g;
                for (v, &m) in g.data_mut().iter_mut().zip(mask.iter()) {
                    if !m {
                        *v = 0.0;
                    }
                }
                Some(g)
            }
            Op::MaxPool2d(p) => Some(p.backward(g)),
            Op::Reshape => {
                let mut shape = vec![b];
                shape.extend_from_slice(&self.in_shape);
                Some(g.reshape(&shape).expect("reshape validated at build"))
            }
            Op::Dense(d) => d.backward(g),
            Op::Dropout(d) => Some(d.backward(g)),
        }
    }

    pub(crate) fn zero_grads(&mut self) {
        if let Some((_, _, gw, gb)) = self.params_and_grads_mut() {
            gw.fill(0.0);
            gb.fill(0.0);
        }
    }

    pub(crate) fn freeze_dropout(&mut self, frozen: bool) {
        if let Op::Dropout(d) = &mut self.op {
            d.frozen = frozen;
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        match &mut self.op {
            Op::Conv(c) => c.cache = None,
            Op::Dense(d) => d.cache = None,
            Op::Relu { mask } => *mask = Vec::new(),
            Op::MaxPool2d(p) => p.argmax = Vec::new(),
            _ => {}
        }
    }
}

/// Uniform `±1/sqrt(fan_in)` weight initialization with zero bias.
pub(crate) fn init_params(layer: &mut Layer, seed: u64) {
    let Some(fan_in) = layer.fan_in() else { return };
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut r = rng::seeded(seed);
    if let Some((w, b, _, _)) = layer.params_and_grads_mut() {
        w.iter_mut().for_each(|v| *v = r.random_range(-bound..bound));
        b.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize, a: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * a).sin()).collect()
    }

    fn naive_conv2d(x: &[f64], h: usize, w: usize, c: usize, k: &[f64], kh: usize, kw: usize, o: usize, bias: &[f64]) -> Vec<f64> {
        let (ph, pw) = ((kh as isize - 1) / 2, (kw as isize - 1) / 2);
        let mut out = vec![0.0; h * w * o];
        for i in 0..h as isize {
            for j in 0..w as isize {
                for oc in 0..o {
                    let mut s = bias[oc];
                    for a in 0..kh as isize {
                        for b in 0..kw as isize {
                            let (ii, jj) = (i + a - ph, j + b - pw);
                            if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                continue;
                            }
                            for ch in 0..c {
                                let xv = x[((ii as usize) * w + jj as usize) * c + ch];
                                let kv = k[((a as usize * kw + b as usize) * c + ch) * o + oc];
                                s += xv * kv;
                            }
                        }
                    }
                    out[((i as usize) * w + j as usize) * o + oc] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_sliding_window_sum() {
        for &(h, w, c, kh, kw, o) in &[(7, 5, 2, 5, 5, 3), (4, 6, 1, 2, 3, 2), (3, 3, 3, 4, 1, 1)] {
            let x = seq(h * w * c, 0.37);
            let k = seq(kh * kw * c * o, 0.71);
            let bias = seq(o, 1.3);
            let got = conv_forward(
                &Tensor::new(vec![h, w, c], x.clone()).unwrap(),
                &Tensor::new(vec![kh, kw, c, o], k.clone()).unwrap(),
                &bias,
            )
            .unwrap();
            assert_eq!(got.shape(), &[h, w, o]);
            let expect = naive_conv2d(&x, h, w, c, &k, kh, kw, o, &bias);
            for (a, b) in got.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv4d_matches_nested_loops() {
        let dims = [6usize, 4, 3, 2];
        let kern = [5usize, 2, 2, 1];
        let (c, o) = (2, 3);
        let n: usize = dims.iter().product();
        let x = seq(n * c, 0.13);
        let k = seq(kern.iter().product::<usize>() * c * o, 0.29);
        let bias = vec![0.5, -0.25, 0.0];
        let mut xs = dims.to_vec();
        xs.push(c);
        let mut ks = kern.to_vec();
        ks.extend([c, o]);
        let got = conv_forward(&Tensor::new(xs, x.clone()).unwrap(), &Tensor::new(ks, k.clone()).unwrap(), &bias).unwrap();
        let pad: Vec<isize> = kern.iter().map(|&k| (k as isize - 1) / 2).collect();
        let flat = |i: [isize; 4]| ((i[0] as usize * dims[1] + i[1] as usize) * dims[2] + i[2] as usize) * dims[3] + i[3] as usize;
        for a in 0..dims[0] as isize {
            for b in 0..dims[1] as isize {
                for cc in 0..dims[2] as isize {
                    for d in 0..dims[3] as isize {
                        for oc in 0..o {
                            let mut s = bias[oc];
                            for p in 0..kern[0] as isize {
                                for q in 0..kern[1] as isize {
                                    for r in 0..kern[2] as isize {
                                        for t in 0..kern[3] as isize {
                                            let src = [a + p - pad[0], b + q - pad[1], cc + r - pad[2], d + t - pad[3]];
                                            if (0..4).any(|z| src[z] < 0 || src[z] >= dims[z] as isize) {
                                                continue;
                                            }
                                            let kidx = ((p as usize * kern[1] + q as usize) * kern[2] + r as usize) * kern[3] + t as usize;
                                            for ch in 0..c {
                                                s += x[flat(src) * c + ch] * k[(kidx * c + ch) * o + oc];
                                            }
                                        }
                                    }
                                }
                            }
                            let got_v = got.data()[flat([a, b, cc, d]) * o + oc];
                            assert!((got_v - s).abs() < 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unit_kernel_is_identity_plus_bias() {
        let x = Tensor::new(vec![3, 2, 2, 2, 1], seq(24, 0.5)).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv_forward(&x, &k, &[0.25]).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, b + 0.25);
        }
        let zero = Tensor::zeros(&[4, 3, 2]);
        let k = Tensor::new(vec![3, 3, 2, 3], seq(54, 0.3)).unwrap();
        let y = conv_forward(&zero, &k, &[1.0, -2.0, 0.5]).unwrap();
        for px in y.data().chunks(3) {
            assert_eq!(px, &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn dense_matches_naive_product() {
        let mut layer = Layer::build(&LayerSpec::Dense { units: 4 }, &[7]).unwrap();
        let w = seq(28, 0.41);
        let b = seq(4, 2.3);
        if let Op::Dense(d) = &mut layer.op {
            d.weight.copy_from_slice(&w);
            d.bias.copy_from_slice(&b);
        }
        let x = seq(21, 0.77);
        let y = layer.forward(Tensor::new(vec![3, 7], x.clone()).unwrap(), Mode::Eval);
        for s in 0..3 {
            for u in 0..4 {
                let expect: f64 = b[u] + (0..7).map(|i| x[s * 7 + i] * w[i * 4 + u]).sum::<f64>();
                assert!((y.data()[s * 4 + u] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn maxpool_gradient_goes_to_argmax_only() {
        let mut layer = Layer::build(&LayerSpec::MaxPool2d, &[5, 4, 2]).unwrap();
        let x = Tensor::new(vec![1, 5, 4, 2], seq(40, 1.7)).unwrap();
        let y = layer.forward(x.clone(), Mode::Train { seed: 0 });
        let g = Tensor::new(y.shape().to_vec(), vec![1.0; y.len()]).unwrap();
        let dx = layer.backward(g).unwrap();
        assert_eq!(dx.data().iter().filter(|&&v| v != 0.0).count(), y.len());
        for (i, &d) in dx.data().iter().enumerate() {
            if d != 0.0 {
                assert!(y.data().contains(&x.data()[i]));
            }
        }
    }

    #[test]
    fn constant_input_pools_to_constant() {
        let mut layer = Layer::build(&LayerSpec::MaxPool2d, &[4, 6, 3]).unwrap();
        let y = layer.forward(Tensor::new(vec![2, 4, 6, 3], vec![0.7; 144]).unwrap(), Mode::Eval);
        assert_eq!(y.shape(), &[2, 2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.7));
        let mut layer = Layer::build(&LayerSpec::MaxPool2d, &[2, 2, 1]).unwrap();
        let y = layer.forward(Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), Mode::Eval);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn reshape_round_trips() {
        let mut fwd = Layer::build(&LayerSpec::Reshape { shape: vec![40, 30, 2] }, &[20, 4, 5, 3, 2]).unwrap();
        let mut back = Layer::build(&LayerSpec::Reshape { shape: vec![20, 4, 5, 3, 2] }, &[40, 30, 2]).unwrap();
        let x = Tensor::new(vec![1, 20, 4, 5, 3, 2], seq(2400, 0.01)).unwrap();
        let y = back.forward(fwd.forward(x.clone(), Mode::Eval), Mode::Eval);
        assert_eq!(y, x);
        // corner indices of the 4D-to-plane map
        let flat = |i: usize, j: usize, k: usize, l: usize| ((i * 4 + j) * 5 + k) * 3 + l;
        assert_eq!(flat(0, 0, 0, 0), 0);
        assert_eq!(flat(19, 3, 4, 2), 39 * 30 + 29);
    }

    #[test]
    fn maxpool_odd_edges_keep_partial_windows() {
        let mut layer = Layer::build(&LayerSpec::MaxPool2d, &[3, 3, 1]).unwrap();
        assert_eq!(layer.out_shape, vec![2, 2, 1]);
        let x = Tensor::new(vec![1, 3, 3, 1], (1..=9).map(f64::from).collect()).unwrap();
        let y = layer.forward(x, Mode::Eval);
        assert_eq!(y.data(), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn reshape_rejects_wrong_size() {
        assert!(Layer::build(&LayerSpec::Reshape { shape: vec![5, 5] }, &[4, 6]).is_err());
        assert!(Layer::build(&LayerSpec::Conv { kernel: vec![3, 3], filters: 2 }, &[4, 4]).is_err());
        assert!(Layer::build(&LayerSpec::Dropout { rate: 1.0 }, &[4]).is_err());
    }

    #[test]
    fn dropout_is_inverted_and_identity_in_eval() {
        let mut layer = Layer::build(&LayerSpec::Dropout { rate: 0.5 }, &[10_000]).unwrap();
        let x = Tensor::new(vec![1, 10_000], vec![1.0; 10_000]).unwrap();
        let y = layer.forward(x.clone(), Mode::Train { seed: 3 });
        let kept = y.data().iter().filter(|&&v| v != 0.0).count();
        assert!((kept as f64 / 10_000.0 - 0.5).abs() < 0.03);
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert_eq!(layer.forward(x, Mode::Eval).data(), &vec![1.0; 10_000][..]);
    }

    #[test]
    fn spec_serializes_with_kind_tag() {
        let s = serde_json::to_string(&LayerSpec::Conv { kernel: vec![5, 5], filters: 48 }).unwrap();
        assert_eq!(s, r#"{"kind":"conv","kernel":[5,5],"filters":48}"#);
        let s = serde_json::to_string(&LayerSpec::MaxPool2d).unwrap();
        assert_eq!(s, r#"{"kind":"maxpool2d"}"#);
    }
}
