//! Individual layers: dense, convolution, ReLU, average pooling, flatten.
//!
//! Each layer implements three passes over batched tensors: plain forward,
//! reverse-mode backward (accumulating parameter gradients), and forward-mode
//! dual propagation for directional derivatives.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// What a layer computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense { input: usize, output: usize },
    Conv2D { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    ReLU,
    AvgPool2D { window: usize },
    Flatten,
}

/// Layer description plus its weight-init seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub init_seed: u64,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, init_seed: u64) -> Self {
        Self { kind, init_seed }
    }
}

/// Gradient buffers for one layer: `(weights, bias)` when the layer has
/// parameters.
pub type LayerGrad<F> = Option<(Tensor<F>, Tensor<F>)>;

/// A layer with instantiated parameters.
#[derive(Debug, Clone)]
pub struct Layer<F: Real> {
    pub kind: LayerKind,
    pub weights: Option<Tensor<F>>,
    pub bias: Option<Tensor<F>>,
}

fn kaiming_uniform<F: Real>(shape: &[usize], fan_in: usize, seed: u64) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| F::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree by construction")
}

impl<F: Real> Layer<F> {
    pub fn build(spec: &LayerSpec) -> Result<Self> {
        match spec.kind {
            LayerKind::Dense { input, output } => {
                if input == 0 || output == 0 {
                    return Err(Error::Parameter(format!(
                        "dense dimensions must be positive, got {input}x{output}"
                    )));
                }
                Ok(Self {
                    kind: spec.kind,
                    weights: Some(kaiming_uniform(&[output, input], input, spec.init_seed)),
                    bias: Some(Tensor::zeros(&[output])),
                })
            }
            LayerKind::Conv2D { in_ch, out_ch, kernel, stride, pad: _ } => {
                if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::Parameter(
                        "conv dimensions and stride must be positive".into(),
                    ));
                }
                let fan_in = in_ch * kernel * kernel;
                Ok(Self {
                    kind: spec.kind,
                    weights: Some(kaiming_uniform(
                        &[out_ch, in_ch, kernel, kernel],
                        fan_in,
                        spec.init_seed,
                    )),
                    bias: Some(Tensor::zeros(&[out_ch])),
                })
            }
            LayerKind::ReLU | LayerKind::Flatten => Ok(Self {
                kind: spec.kind,
                weights: None,
                bias: None,
            }),
            LayerKind::AvgPool2D { window } => {
                if window == 0 {
                    return Err(Error::Parameter("pooling window must be positive".into()));
                }
                Ok(Self {
                    kind: spec.kind,
                    weights: None,
                    bias: None,
                })
            }
        }
    }

    pub fn has_params(&self) -> bool {
        self.weights.is_some()
    }

    /// Draws fresh Kaiming-uniform weights and zeroes the bias.
    pub fn reinitialize(&mut self, seed: u64) {
        match self.kind {
            LayerKind::Dense { input, output } => {
                self.weights = Some(kaiming_uniform(&[output, input], input, seed));
                self.bias = Some(Tensor::zeros(&[output]));
            }
            LayerKind::Conv2D { in_ch, out_ch, kernel, .. } => {
                let fan_in = in_ch * kernel * kernel;
                self.weights = Some(kaiming_uniform(
                    &[out_ch, in_ch, kernel, kernel],
                    fan_in,
                    seed,
                ));
                self.bias = Some(Tensor::zeros(&[out_ch]));
            }
            _ => {}
        }
    }

    pub fn zero_grad(&self) -> LayerGrad<F> {
        match (&self.weights, &self.bias) {
            (Some(w), Some(b)) => Some((Tensor::zeros(w.shape()), Tensor::zeros(b.shape()))),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self.kind {
            LayerKind::Dense { input: din, output } => {
                // Any shape with the right flattened size is accepted; the
                // row-major layout makes the flatten implicit.
                let flat: usize = input.iter().product();
                if flat != din {
                    return Err(Error::Dimension(format!(
                        "dense expects flat input of {din}, got shape {input:?}"
                    )));
                }
                Ok(vec![output])
            }
            LayerKind::Conv2D { in_ch, out_ch, kernel, stride, pad } => {
                if input.len() != 3 || input[0] != in_ch {
                    return Err(Error::Dimension(format!(
                        "conv expects (channels={in_ch}, h, w), got {input:?}"
                    )));
                }
                let (h, w) = (input[1], input[2]);
                if h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(Error::Dimension(format!(
                        "conv kernel {kernel} larger than padded input {h}x{w}"
                    )));
                }
                let oh = (h + 2 * pad - kernel) / stride + 1;
                let ow = (w + 2 * pad - kernel) / stride + 1;
                Ok(vec![out_ch, oh, ow])
            }
            LayerKind::ReLU => Ok(input.to_vec()),
            LayerKind::AvgPool2D { window } => {
                if input.len() != 3 {
                    return Err(Error::Dimension(format!(
                        "pooling expects (channels, h, w), got {input:?}"
                    )));
                }
                let oh = input[1] / window;
                let ow = input[2] / window;
                if oh == 0 || ow == 0 {
                    return Err(Error::Dimension(format!(
                        "pooling window {window} larger than input {}x{}",
                        input[1], input[2]
                    )));
                }
                Ok(vec![input[0], oh, ow])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        match self.kind {
            LayerKind::Dense { input, output } => self.dense_forward(x, input, output),
            LayerKind::Conv2D { .. } => self.conv_forward(x),
            LayerKind::ReLU => Ok(x.map(|v| if v > F::zero() { v } else { F::zero() })),
            LayerKind::AvgPool2D { window } => self.pool_forward(x, window),
            LayerKind::Flatten => x.reshaped(&[x.batch(), x.sample_len()]),
        }
    }

    fn dense_forward(&self, x: &Tensor<F>, din: usize, dout: usize) -> Result<Tensor<F>> {
        if x.sample_len() != din {
            return Err(Error::Dimension(format!(
                "dense expects {din} inputs, got {}",
                x.sample_len()
            )));
        }
        let b = x.batch();
        let w = self.weights.as_ref().expect("dense has weights");
        let bias = self.bias.as_ref().expect("dense has bias");
        let mut y = Tensor::zeros(&[b, dout]);
        for bi in 0..b {
            let xr = x.sample(bi);
            let yr = y.sample_mut(bi);
            for o in 0..dout {
                let wr = &w.data()[o * din..(o + 1) * din];
                let mut acc = bias.data()[o];
                for (xi, wi) in xr.iter().zip(wr) {
                    acc += *xi * *wi;
                }
                yr[o] = acc;
            }
        }
        Ok(y)
    }

    fn conv_params(&self) -> (usize, usize, usize, usize, usize) {
        match self.kind {
            LayerKind::Conv2D { in_ch, out_ch, kernel, stride, pad } => {
                (in_ch, out_ch, kernel, stride, pad)
            }
            _ => unreachable!(),
        }
    }

    fn pad_input(x: &Tensor<F>, pad: usize) -> Tensor<F> {
        if pad == 0 {
            return x.clone();
        }
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut out = Tensor::zeros(&[b, c, ph, pw]);
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..h {
                    let src = bi * c * h * w + ci * h * w + i * w;
                    let dst = bi * c * ph * pw + ci * ph * pw + (i + pad) * pw + pad;
                    out.data_mut()[dst..dst + w].copy_from_slice(&x.data()[src..src + w]);
                }
            }
        }
        out
    }

    fn conv_forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (in_ch, out_ch, k, s, p) = self.conv_params();
        if x.shape().len() != 4 || x.shape()[1] != in_ch {
            return Err(Error::Dimension(format!(
                "conv expects (batch, {in_ch}, h, w), got {:?}",
                x.shape()
            )));
        }
        let out_shape = self.output_shape(&x.shape()[1..])?;
        let (oh, ow) = (out_shape[1], out_shape[2]);
        let b = x.batch();
        let xp = Self::pad_input(x, p);
        let (ph, pw) = (xp.shape()[2], xp.shape()[3]);
        let w = self.weights.as_ref().expect("conv has weights");
        let bias = self.bias.as_ref().expect("conv has bias");
        let mut y = Tensor::zeros(&[b, out_ch, oh, ow]);
        for bi in 0..b {
            for oc in 0..out_ch {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bias.data()[oc];
                        for ic in 0..in_ch {
                            for ki in 0..k {
                                let xrow = bi * in_ch * ph * pw + ic * ph * pw + (i * s + ki) * pw + j * s;
                                let wrow = oc * in_ch * k * k + ic * k * k + ki * k;
                                for kj in 0..k {
                                    acc += xp.data()[xrow + kj] * w.data()[wrow + kj];
                                }
                            }
                        }
                        y.data_mut()[bi * out_ch * oh * ow + oc * oh * ow + i * ow + j] = acc;
                    }
                }
            }
        }
        Ok(y)
    }

    fn pool_forward(&self, x: &Tensor<F>, window: usize) -> Result<Tensor<F>> {
        if x.shape().len() != 4 {
            return Err(Error::Dimension(format!(
                "pooling expects (batch, c, h, w), got {:?}",
                x.shape()
            )));
        }
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (h / window, w / window);
        if oh == 0 || ow == 0 {
            return Err(Error::Dimension(format!(
                "pooling window {window} larger than input {h}x{w}"
            )));
        }
        let area = F::from_f64((window * window) as f64);
        let mut y = Tensor::zeros(&[b, c, oh, ow]);
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = F::zero();
                        for di in 0..window {
                            for dj in 0..window {
                                acc += x.data()
                                    [bi * c * h * w + ci * h * w + (i * window + di) * w + j * window + dj];
                            }
                        }
                        y.data_mut()[bi * c * oh * ow + ci * oh * ow + i * ow + j] = acc / area;
                    }
                }
            }
        }
        Ok(y)
    }

    /// Reverse pass: returns the gradient w.r.t. the input and accumulates
    /// parameter gradients into `grad`.
    pub fn backward(
        &self,
        x: &Tensor<F>,
        gy: &Tensor<F>,
        grad: &mut LayerGrad<F>,
    ) -> Result<Tensor<F>> {
        match self.kind {
            LayerKind::Dense { input, output } => self.dense_backward(x, gy, grad, input, output),
            LayerKind::Conv2D { .. } => self.conv_backward(x, gy, grad),
            LayerKind::ReLU => {
                let mut gx = gy.clone();
                for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
                    if v <= F::zero() {
                        *g = F::zero();
                    }
                }
                Ok(gx)
            }
            LayerKind::AvgPool2D { window } => self.pool_backward(x, gy, window),
            LayerKind::Flatten => gy.reshaped(x.shape()),
        }
    }

    fn dense_backward(
        &self,
        x: &Tensor<F>,
        gy: &Tensor<F>,
        grad: &mut LayerGrad<F>,
        din: usize,
        dout: usize,
    ) -> Result<Tensor<F>> {
        let b = x.batch();
        let w = self.weights.as_ref().expect("dense has weights");
        let (gw, gb) = grad.as_mut().expect("dense has grads");
        let mut gx = Tensor::zeros(x.shape());
        for bi in 0..b {
            let gyr = gy.sample(bi);
            let xr = x.sample(bi);
            let gxr = gx.sample_mut(bi);
            for o in 0..dout {
                let g = gyr[o];
                gb.data_mut()[o] += g;
                if g == F::zero() {
                    continue;
                }
                let wr = &w.data()[o * din..(o + 1) * din];
                let gwr = &mut gw.data_mut()[o * din..(o + 1) * din];
                for i in 0..din {
                    gxr[i] += g * wr[i];
                    gwr[i] += g * xr[i];
                }
            }
        }
        Ok(gx)
    }

    fn conv_backward(
        &self,
        x: &Tensor<F>,
        gy: &Tensor<F>,
        grad: &mut LayerGrad<F>,
    ) -> Result<Tensor<F>> {
        let (in_ch, out_ch, k, s, p) = self.conv_params();
        let b = x.batch();
        let xp = Self::pad_input(x, p);
        let (ph, pw) = (xp.shape()[2], xp.shape()[3]);
        let (oh, ow) = (gy.shape()[2], gy.shape()[3]);
        let w = self.weights.as_ref().expect("conv has weights");
        let (gw, gb) = grad.as_mut().expect("conv has grads");
        let mut gxp = Tensor::zeros(xp.shape());
        for bi in 0..b {
            for oc in 0..out_ch {
                for i in 0..oh {
                    for j in 0..ow {
                        let g = gy.data()[bi * out_ch * oh * ow + oc * oh * ow + i * ow + j];
                        if g == F::zero() {
                            continue;
                        }
                        gb.data_mut()[oc] += g;
                        for ic in 0..in_ch {
                            for ki in 0..k {
                                let xrow =
                                    bi * in_ch * ph * pw + ic * ph * pw + (i * s + ki) * pw + j * s;
                                let wrow = oc * in_ch * k * k + ic * k * k + ki * k;
                                for kj in 0..k {
                                    gw.data_mut()[wrow + kj] += g * xp.data()[xrow + kj];
                                    gxp.data_mut()[xrow + kj] += g * w.data()[wrow + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
        // Crop padding back off.
        if p == 0 {
            return Ok(gxp);
        }
        let (h, ww) = (x.shape()[2], x.shape()[3]);
        let mut gx = Tensor::zeros(x.shape());
        for bi in 0..b {
            for ci in 0..in_ch {
                for i in 0..h {
                    let src = bi * in_ch * ph * pw + ci * ph * pw + (i + p) * pw + p;
                    let dst = bi * in_ch * h * ww + ci * h * ww + i * ww;
                    gx.data_mut()[dst..dst + ww].copy_from_slice(&gxp.data()[src..src + ww]);
                }
            }
        }
        Ok(gx)
    }

    fn pool_backward(&self, x: &Tensor<F>, gy: &Tensor<F>, window: usize) -> Result<Tensor<F>> {
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (gy.shape()[2], gy.shape()[3]);
        let area = F::from_f64((window * window) as f64);
        let mut gx = Tensor::zeros(x.shape());
        for bi in 0..b {
            for ci in 0..c {
                for i in 0..oh {
                    for j in 0..ow {
                        let g = gy.data()[bi * c * oh * ow + ci * oh * ow + i * ow + j] / area;
                        for di in 0..window {
                            for dj in 0..window {
                                gx.data_mut()[bi * c * h * w
                                    + ci * h * w
                                    + (i * window + di) * w
                                    + j * window
                                    + dj] += g;
                            }
                        }
                    }
                }
            }
        }
        Ok(gx)
    }

    /// Forward-mode pass: propagates `(value, tangent)` where the tangent of
    /// this layer's parameters is `param_tan` (zero if `None`).
    pub fn forward_dual(
        &self,
        x: &Tensor<F>,
        xt: &Tensor<F>,
        param_tan: Option<(&Tensor<F>, &Tensor<F>)>,
    ) -> Result<(Tensor<F>, Tensor<F>)> {
        match self.kind {
            LayerKind::Dense { input, output } => {
                let y = self.dense_forward(x, input, output)?;
                // y_tan = xt W^T + x Wt^T + bt
                let mut yt = self.dense_forward(xt, input, output)?;
                // dense_forward added the real bias to xt's product; remove it
                // and add the bias tangent instead.
                let bias = self.bias.as_ref().expect("dense has bias");
                let b = x.batch();
                for bi in 0..b {
                    let row = yt.sample_mut(bi);
                    for (o, r) in row.iter_mut().enumerate() {
                        *r -= bias.data()[o];
                    }
                }
                if let Some((wt, bt)) = param_tan {
                    for bi in 0..b {
                        let xr = x.sample(bi);
                        let ytr = yt.sample_mut(bi);
                        for o in 0..output {
                            let wtr = &wt.data()[o * input..(o + 1) * input];
                            let mut acc = bt.data()[o];
                            for (xi, wi) in xr.iter().zip(wtr) {
                                acc += *xi * *wi;
                            }
                            ytr[o] += acc;
                        }
                    }
                }
                Ok((y, yt))
            }
            LayerKind::Conv2D { .. } => {
                let y = self.conv_forward(x)?;
                let mut yt = self.conv_forward(xt)?;
                let bias = self.bias.as_ref().expect("conv has bias");
                let (_, out_ch, _, _, _) = self.conv_params();
                let per_map = yt.shape()[2] * yt.shape()[3];
                for bi in 0..yt.shape()[0] {
                    for oc in 0..out_ch {
                        let base = bi * out_ch * per_map + oc * per_map;
                        for v in &mut yt.data_mut()[base..base + per_map] {
                            *v -= bias.data()[oc];
                        }
                    }
                }
                if let Some((wt, bt)) = param_tan {
                    let tan_layer = Layer {
                        kind: self.kind,
                        weights: Some(wt.clone()),
                        bias: Some(bt.clone()),
                    };
                    let extra = tan_layer.conv_forward(x)?;
                    for (a, b) in yt.data_mut().iter_mut().zip(extra.data()) {
                        *a += *b;
                    }
                }
                Ok((y, yt))
            }
            LayerKind::ReLU => {
                let y = self.forward(x)?;
                let mut yt = xt.clone();
                for (t, &v) in yt.data_mut().iter_mut().zip(x.data()) {
                    if v <= F::zero() {
                        *t = F::zero();
                    }
                }
                Ok((y, yt))
            }
            LayerKind::AvgPool2D { .. } | LayerKind::Flatten => {
                Ok((self.forward(x)?, self.forward(xt)?))
            }
        }
    }
}
