//! Auxiliary heads attached to a module's output for local loss evaluation.

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerGrad, LayerKind, LayerSpec};
use crate::tensor::{Real, Tensor};

/// Head family. Output dimensions of linear/MLP heads are explicit; their
/// input dimension is inferred when the network is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxHeadSpec {
    Identity,
    Linear { out: usize },
    /// Two-layer MLP with one ReLU in between.
    Mlp2 { hidden: usize, out: usize },
    /// 3x3 convolution followed by per-feature-map standard deviation
    /// pooling; output has one value per produced channel.
    ConvHead { channels: usize },
}

/// An instantiated head: a short layer stack, optionally followed by
/// std-deviation pooling over feature maps.
#[derive(Debug, Clone)]
pub struct AuxHead<F: Real> {
    pub spec: AuxHeadSpec,
    pub layers: Vec<Layer<F>>,
    pub std_pool: bool,
}

impl<F: Real> AuxHead<F> {
    /// Builds the head for a module whose per-sample output shape is `input`.
    pub fn build(spec: AuxHeadSpec, input: &[usize], seed: u64) -> Result<Self> {
        let flat: usize = input.iter().product();
        match spec {
            AuxHeadSpec::Identity => Ok(Self { spec, layers: vec![], std_pool: false }),
            AuxHeadSpec::Linear { out } => Ok(Self {
                spec,
                layers: vec![
                    Layer::build(&LayerSpec::new(LayerKind::Flatten, 0))?,
                    Layer::build(&LayerSpec::new(
                        LayerKind::Dense { input: flat, output: out },
                        seed,
                    ))?,
                ],
                std_pool: false,
            }),
            AuxHeadSpec::Mlp2 { hidden, out } => Ok(Self {
                spec,
                layers: vec![
                    Layer::build(&LayerSpec::new(LayerKind::Flatten, 0))?,
                    Layer::build(&LayerSpec::new(
                        LayerKind::Dense { input: flat, output: hidden },
                        seed,
                    ))?,
                    Layer::build(&LayerSpec::new(LayerKind::ReLU, 0))?,
                    Layer::build(&LayerSpec::new(
                        LayerKind::Dense { input: hidden, output: out },
                        seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
                    ))?,
                ],
                std_pool: false,
            }),
            AuxHeadSpec::ConvHead { channels } => {
                if input.len() != 3 {
                    return Err(Error::Dimension(format!(
                        "conv head needs a spatial (c, h, w) input, got {input:?}"
                    )));
                }
                Ok(Self {
                    spec,
                    layers: vec![Layer::build(&LayerSpec::new(
                        LayerKind::Conv2D {
                            in_ch: input[0],
                            out_ch: channels,
                            kernel: 3,
                            stride: 1,
                            pad: 1,
                        },
                        seed,
                    ))?],
                    std_pool: true,
                })
            }
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        if self.std_pool {
            if shape.len() != 3 {
                return Err(Error::Dimension(format!(
                    "std pooling needs (c, h, w), got {shape:?}"
                )));
            }
            shape = vec![shape[0]];
        }
        Ok(shape)
    }

    /// Forward pass caching every stage boundary; `acts[0]` is the input and
    /// the last entry is the head output.
    pub fn forward(&self, z: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
        let mut acts = vec![z.clone()];
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("nonempty"))?;
            acts.push(next);
        }
        if self.std_pool {
            let next = std_pool_forward(acts.last().expect("nonempty"))?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Reverse pass from the gradient at the head output back to the module
    /// representation; accumulates head parameter gradients.
    pub fn backward(
        &self,
        acts: &[Tensor<F>],
        grad_out: &Tensor<F>,
        grads: &mut [LayerGrad<F>],
    ) -> Result<Tensor<F>> {
        let mut g = grad_out.clone();
        let mut boundary = acts.len() - 1;
        if self.std_pool {
            g = std_pool_backward(&acts[boundary - 1], &g)?;
            boundary -= 1;
        }
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(&acts[idx], &g, &mut grads[idx])?;
            boundary -= 1;
        }
        debug_assert_eq!(boundary, 0);
        Ok(g)
    }

    pub fn zero_grads(&self) -> Vec<LayerGrad<F>> {
        self.layers.iter().map(|l| l.zero_grad()).collect()
    }
}

/// Population standard deviation per feature map: `(b, c, h, w) -> (b, c)`.
pub fn std_pool_forward<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
    if x.shape().len() != 4 {
        return Err(Error::Dimension(format!(
            "std pooling expects (batch, c, h, w), got {:?}",
            x.shape()
        )));
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let n = F::from_f64((h * w) as f64);
    let mut y = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        for ci in 0..c {
            let base = bi * c * h * w + ci * h * w;
            let map = &x.data()[base..base + h * w];
            let mut mean = F::zero();
            for &v in map {
                mean += v;
            }
            mean /= n;
            let mut var = F::zero();
            for &v in map {
                let d = v - mean;
                var += d * d;
            }
            y.data_mut()[bi * c + ci] = (var / n).sqrt();
        }
    }
    Ok(y)
}

fn std_pool_backward<F: Real>(x: &Tensor<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let n = F::from_f64((h * w) as f64);
    let mut gx = Tensor::zeros(x.shape());
    for bi in 0..b {
        for ci in 0..c {
            let base = bi * c * h * w + ci * h * w;
            let map = &x.data()[base..base + h * w];
            let mut mean = F::zero();
            for &v in map {
                mean += v;
            }
            mean /= n;
            let mut var = F::zero();
            for &v in map {
                let d = v - mean;
                var += d * d;
            }
            let std = (var / n).sqrt();
            if std <= F::zero() {
                // Constant map: std has a zero subgradient here.
                continue;
            }
            let g = gy.data()[bi * c + ci];
            let scale = g / (n * std);
            for (idx, &v) in map.iter().enumerate() {
                gx.data_mut()[base + idx] = scale * (v - mean);
            }
        }
    }
    Ok(gx)
}
