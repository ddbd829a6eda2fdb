//! Sequential network substrate: trainable modules with auxiliary heads,
//! reverse-mode gradients with stop-gradient boundaries, and forward-mode
//! directional derivatives.

pub mod checkpoint;
pub mod head;
pub mod layer;

pub use head::{AuxHead, AuxHeadSpec};
pub use layer::{Layer, LayerGrad, LayerKind, LayerSpec};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Description of one trainable module: a short layer stack, an auxiliary
/// head for its local loss, and the stop-gradient flag on its input.
#[derive(Debug, Clone)]
pub struct ModuleSpec {
    pub layers: Vec<LayerSpec>,
    pub head: AuxHeadSpec,
    pub head_seed: u64,
    pub detach_input: bool,
}

impl ModuleSpec {
    pub fn new(layers: Vec<LayerSpec>, head: AuxHeadSpec, head_seed: u64) -> Self {
        Self { layers, head, head_seed, detach_input: false }
    }
}

/// One module with instantiated parameters.
#[derive(Debug, Clone)]
pub struct TrainableModule<F: Real> {
    pub layers: Vec<Layer<F>>,
    pub head: AuxHead<F>,
    pub detach_input: bool,
}

/// Ordered list of trainable modules.
#[derive(Debug, Clone)]
pub struct Network<F: Real> {
    pub modules: Vec<TrainableModule<F>>,
    input_shape: Vec<usize>,
}

/// Cached activations from a full forward pass. `module_acts[l]` holds every
/// layer boundary of module `l` (input first, representation last);
/// `head_acts[l]` holds the head stages (representation first, head output
/// last).
#[derive(Debug, Clone)]
pub struct ForwardTrace<F: Real> {
    pub module_acts: Vec<Vec<Tensor<F>>>,
    pub head_acts: Vec<Vec<Tensor<F>>>,
}

impl<F: Real> ForwardTrace<F> {
    pub fn representation(&self, module: usize) -> &Tensor<F> {
        self.module_acts[module].last().expect("module has activations")
    }

    pub fn aux_output(&self, module: usize) -> &Tensor<F> {
        self.head_acts[module].last().expect("head has activations")
    }

    pub fn module_count(&self) -> usize {
        self.module_acts.len()
    }
}

/// Gradient entering one module during layer-wise training: at the head
/// output, directly at the representation, or both.
#[derive(Debug, Clone)]
pub struct LocalGrad<F: Real> {
    pub at_head: Option<Tensor<F>>,
    pub at_z: Option<Tensor<F>>,
}

impl<F: Real> LocalGrad<F> {
    pub fn at_head(g: Tensor<F>) -> Self {
        Self { at_head: Some(g), at_z: None }
    }

    pub fn at_z(g: Tensor<F>) -> Self {
        Self { at_head: None, at_z: Some(g) }
    }
}

/// Gradient buffers for one module (layer stack plus head stack).
#[derive(Debug, Clone)]
pub struct ModuleGrads<F: Real> {
    pub layers: Vec<LayerGrad<F>>,
    pub head: Vec<LayerGrad<F>>,
}

/// Gradient buffers mirroring the whole network.
#[derive(Debug, Clone)]
pub struct NetGrads<F: Real> {
    pub modules: Vec<ModuleGrads<F>>,
}

impl<F: Real> NetGrads<F> {
    pub fn is_all_finite(&self) -> bool {
        self.modules.iter().all(|m| {
            m.layers
                .iter()
                .chain(m.head.iter())
                .flatten()
                .all(|(w, b)| {
                    w.data().iter().all(|v| v.is_finite())
                        && b.data().iter().all(|v| v.is_finite())
                })
        })
    }
}

impl<F: Real> Network<F> {
    /// Builds the network, inferring head input dimensions from the module
    /// output shapes. `input_shape` is per-sample (no batch axis).
    pub fn build(specs: &[ModuleSpec], input_shape: &[usize]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("network needs at least one module".into()));
        }
        let mut modules = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for (mi, spec) in specs.iter().enumerate() {
            let mut layers = Vec::with_capacity(spec.layers.len());
            for (li, lspec) in spec.layers.iter().enumerate() {
                let layer = Layer::build(lspec).map_err(|e| {
                    Error::Config(format!("module {mi} layer {li}: {e}"))
                })?;
                shape = layer.output_shape(&shape).map_err(|e| {
                    Error::Dimension(format!("module {mi} layer {li}: {e}"))
                })?;
                layers.push(layer);
            }
            let head = AuxHead::build(spec.head, &shape, spec.head_seed)
                .map_err(|e| Error::Config(format!("module {mi} head: {e}")))?;
            head.output_shape(&shape)
                .map_err(|e| Error::Dimension(format!("module {mi} head: {e}")))?;
            modules.push(TrainableModule { layers, head, detach_input: spec.detach_input });
        }
        Ok(Self { modules, input_shape: input_shape.to_vec() })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn module_count(&self) -> usize {
        self.modules.len()
    }

    /// Sets stop-gradient flags for layer-wise training (every module except
    /// the first detaches its input) or clears them for end-to-end training.
    pub fn set_layerwise_detach(&mut self, layerwise: bool) {
        for (i, m) in self.modules.iter_mut().enumerate() {
            m.detach_input = layerwise && i > 0;
        }
    }

    /// Full forward pass caching every boundary needed for backward.
    pub fn forward_full(&self, batch: &Tensor<F>) -> Result<ForwardTrace<F>> {
        if batch.sample_len() != self.input_shape.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "batch sample shape {:?} does not match network input {:?}",
                &batch.shape()[1..],
                self.input_shape
            )));
        }
        let mut module_acts = Vec::with_capacity(self.modules.len());
        let mut head_acts = Vec::with_capacity(self.modules.len());
        let mut current = if batch.shape()[1..] == self.input_shape[..] {
            batch.clone()
        } else {
            let mut shape = vec![batch.batch()];
            shape.extend_from_slice(&self.input_shape);
            batch.reshaped(&shape)?
        };
        for (mi, module) in self.modules.iter().enumerate() {
            let mut acts = vec![current.clone()];
            for (li, layer) in module.layers.iter().enumerate() {
                let next = layer.forward(acts.last().expect("nonempty")).map_err(|e| {
                    Error::Dimension(format!("module {mi} layer {li}: {e}"))
                })?;
                next.debug_assert_finite(&format!("forward module {mi} layer {li}"));
                acts.push(next);
            }
            current = acts.last().expect("nonempty").clone();
            let h = module
                .head
                .forward(&current)
                .map_err(|e| Error::Dimension(format!("module {mi} head: {e}")))?;
            module_acts.push(acts);
            head_acts.push(h);
        }
        Ok(ForwardTrace { module_acts, head_acts })
    }

    /// Output of the end-to-end path: the last module's head output.
    pub fn forward_e2e_output(&self, batch: &Tensor<F>) -> Result<Tensor<F>> {
        let trace = self.forward_full(batch)?;
        Ok(trace.aux_output(self.modules.len() - 1).clone())
    }

    pub fn zero_grads(&self) -> NetGrads<F> {
        NetGrads {
            modules: self
                .modules
                .iter()
                .map(|m| ModuleGrads {
                    layers: m.layers.iter().map(|l| l.zero_grad()).collect(),
                    head: m.head.zero_grads(),
                })
                .collect(),
        }
    }

    /// Backward through one module's layer stack from the gradient at its
    /// representation; returns the gradient at the module input.
    fn backward_module_from_z(
        &self,
        module_idx: usize,
        acts: &[Tensor<F>],
        grad_at_z: &Tensor<F>,
        grads: &mut NetGrads<F>,
    ) -> Result<Tensor<F>> {
        let module = &self.modules[module_idx];
        let mgrads = &mut grads.modules[module_idx];
        let mut g = grad_at_z.clone();
        for (li, layer) in module.layers.iter().enumerate().rev() {
            g = layer
                .backward(&acts[li], &g, &mut mgrads.layers[li])
                .map_err(|e| Error::Dimension(format!("module {module_idx} layer {li}: {e}")))?;
        }
        g.debug_assert_finite(&format!("backward module {module_idx}"));
        Ok(g)
    }

    /// Backward through one module's head from the gradient at the head
    /// output; returns the gradient at the representation.
    fn backward_head(
        &self,
        module_idx: usize,
        head_acts: &[Tensor<F>],
        grad_at_h: &Tensor<F>,
        grads: &mut NetGrads<F>,
    ) -> Result<Tensor<F>> {
        let module = &self.modules[module_idx];
        module
            .head
            .backward(head_acts, grad_at_h, &mut grads.modules[module_idx].head)
            .map_err(|e| Error::Dimension(format!("module {module_idx} head: {e}")))
    }

    /// Exact reverse-mode gradients of a scalar loss evaluated at the last
    /// module's head output. Propagation stops at any module whose
    /// `detach_input` flag is set.
    pub fn backward_e2e(
        &self,
        trace: &ForwardTrace<F>,
        loss_grad: &Tensor<F>,
    ) -> Result<NetGrads<F>> {
        if trace.module_acts.len() != self.modules.len() {
            return Err(Error::State(
                "forward trace does not match network module count".into(),
            ));
        }
        let mut grads = self.zero_grads();
        let last = self.modules.len() - 1;
        let mut g = self.backward_head(last, &trace.head_acts[last], loss_grad, &mut grads)?;
        for mi in (0..self.modules.len()).rev() {
            g = self.backward_module_from_z(mi, &trace.module_acts[mi], &g, &mut grads)?;
            if self.modules[mi].detach_input {
                break;
            }
        }
        Ok(grads)
    }

    /// Per-module local gradients: module `l` (and its head) receive
    /// gradients only from `local_grads[l]`. A local gradient can enter at
    /// the head output, directly at the representation, or both (the sum is
    /// used). The gradient w.r.t. each module's input is discarded.
    pub fn backward_layerwise(
        &self,
        trace: &ForwardTrace<F>,
        local_grads: &[Option<LocalGrad<F>>],
    ) -> Result<NetGrads<F>> {
        if local_grads.len() != self.modules.len() {
            return Err(Error::State(format!(
                "expected {} local gradients, got {}",
                self.modules.len(),
                local_grads.len()
            )));
        }
        let mut grads = self.zero_grads();
        for mi in 0..self.modules.len() {
            let Some(local) = &local_grads[mi] else { continue };
            let mut gz = match &local.at_head {
                Some(gh) => self.backward_head(mi, &trace.head_acts[mi], gh, &mut grads)?,
                None => Tensor::zeros(trace.representation(mi).shape()),
            };
            if let Some(extra) = &local.at_z {
                if extra.shape() != gz.shape() {
                    return Err(Error::Dimension(format!(
                        "module {mi}: representation gradient shape {:?} vs {:?}",
                        extra.shape(),
                        gz.shape()
                    )));
                }
                for (a, b) in gz.data_mut().iter_mut().zip(extra.data()) {
                    *a += *b;
                }
            }
            let _ = self.backward_module_from_z(mi, &trace.module_acts[mi], &gz, &mut grads)?;
        }
        Ok(grads)
    }

    /// Re-randomizes the parameters of modules `from..` (layers and heads)
    /// using seeds derived from `seed`. Used by retrain-from-layer runs.
    pub fn reinitialize_from(&mut self, from: usize, seed: u64) {
        for (mi, module) in self.modules.iter_mut().enumerate().skip(from) {
            for (li, layer) in module.layers.iter_mut().enumerate() {
                layer.reinitialize(derive_seed(seed, (mi as u64) << 20 | li as u64));
            }
            for (li, layer) in module.head.layers.iter_mut().enumerate() {
                layer.reinitialize(derive_seed(seed, (mi as u64) << 20 | 0x1_0000 | li as u64));
            }
        }
    }

    /// Number of trainable parameters on the end-to-end path (all module
    /// layers plus the last module's head).
    pub fn e2e_param_count(&self) -> usize {
        let mut n = 0;
        for m in &self.modules {
            for l in &m.layers {
                if let (Some(w), Some(b)) = (&l.weights, &l.bias) {
                    n += w.len() + b.len();
                }
            }
        }
        if let Some(last) = self.modules.last() {
            for l in &last.head.layers {
                if let (Some(w), Some(b)) = (&l.weights, &l.bias) {
                    n += w.len() + b.len();
                }
            }
        }
        n
    }

    /// Forward-mode dual pass along a parameter perturbation `direction`
    /// (laid out in `e2e_param_count` order). Returns the end-to-end output
    /// and its tangent.
    pub fn forward_jvp(
        &self,
        batch: &Tensor<F>,
        direction: &[F],
    ) -> Result<(Tensor<F>, Tensor<F>)> {
        if direction.len() != self.e2e_param_count() {
            return Err(Error::Dimension(format!(
                "direction has {} entries, network has {} end-to-end parameters",
                direction.len(),
                self.e2e_param_count()
            )));
        }
        let mut offset = 0usize;
        let mut take = |w: &Tensor<F>, b: &Tensor<F>| -> (Tensor<F>, Tensor<F>) {
            let wt = Tensor::new(w.shape().to_vec(), direction[offset..offset + w.len()].to_vec())
                .expect("slice length matches");
            offset += w.len();
            let bt = Tensor::new(b.shape().to_vec(), direction[offset..offset + b.len()].to_vec())
                .expect("slice length matches");
            offset += b.len();
            (wt, bt)
        };

        let mut x = {
            let mut shape = vec![batch.batch()];
            shape.extend_from_slice(&self.input_shape);
            batch.reshaped(&shape)?
        };
        let mut xt = Tensor::zeros(x.shape());
        for module in &self.modules {
            for layer in &module.layers {
                let tan = match (&layer.weights, &layer.bias) {
                    (Some(w), Some(b)) => Some(take(w, b)),
                    _ => None,
                };
                let (y, yt) = layer.forward_dual(&x, &xt, tan.as_ref().map(|(w, b)| (w, b)))?;
                x = y;
                xt = yt;
            }
        }
        let last = self.modules.last().expect("network nonempty");
        for layer in &last.head.layers {
            let tan = match (&layer.weights, &layer.bias) {
                (Some(w), Some(b)) => Some(take(w, b)),
                _ => None,
            };
            let (y, yt) = layer.forward_dual(&x, &xt, tan.as_ref().map(|(w, b)| (w, b)))?;
            x = y;
            xt = yt;
        }
        if last.head.std_pool {
            return Err(Error::Config(
                "forward-mode pass does not support std-pooling heads".into(),
            ));
        }
        Ok((x, xt))
    }

    /// Writes `jvp_scale * direction` into gradient buffers along the
    /// end-to-end path (used by forward-gradient training).
    pub fn scatter_e2e_direction(
        &self,
        direction: &[F],
        scale: F,
        grads: &mut NetGrads<F>,
    ) -> Result<()> {
        if direction.len() != self.e2e_param_count() {
            return Err(Error::Dimension("direction length mismatch".into()));
        }
        let mut offset = 0usize;
        for (mi, module) in self.modules.iter().enumerate() {
            for (li, layer) in module.layers.iter().enumerate() {
                if let Some((gw, gb)) = grads.modules[mi].layers[li].as_mut() {
                    let _ = layer;
                    for v in gw.data_mut() {
                        *v = scale * direction[offset];
                        offset += 1;
                    }
                    for v in gb.data_mut() {
                        *v = scale * direction[offset];
                        offset += 1;
                    }
                }
            }
        }
        let last = self.modules.len() - 1;
        for li in 0..self.modules[last].head.layers.len() {
            if let Some((gw, gb)) = grads.modules[last].head[li].as_mut() {
                for v in gw.data_mut() {
                    *v = scale * direction[offset];
                    offset += 1;
                }
                for v in gb.data_mut() {
                    *v = scale * direction[offset];
                    offset += 1;
                }
            }
        }
        debug_assert_eq!(offset, direction.len());
        Ok(())
    }

    /// Flattens end-to-end path gradients in the same order as
    /// `forward_jvp`'s direction layout.
    pub fn flatten_e2e_grads(&self, grads: &NetGrads<F>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.e2e_param_count());
        for (mi, module) in self.modules.iter().enumerate() {
            for (li, _layer) in module.layers.iter().enumerate() {
                if let Some((gw, gb)) = &grads.modules[mi].layers[li] {
                    out.extend(gw.data().iter().map(|v| v.to_f64()));
                    out.extend(gb.data().iter().map(|v| v.to_f64()));
                }
            }
        }
        let last = self.modules.len() - 1;
        for li in 0..self.modules[last].head.layers.len() {
            if let Some((gw, gb)) = &grads.modules[last].head[li] {
                out.extend(gw.data().iter().map(|v| v.to_f64()));
                out.extend(gb.data().iter().map(|v| v.to_f64()));
            }
        }
        out
    }

    /// Visits every parameter tensor paired with its gradient buffer, in a
    /// fixed structural order, restricted to modules in `active`. Callers
    /// that keep per-slot state (optimizers) must pass the same range for
    /// the lifetime of that state.
    pub fn visit_params_with_grads(
        &mut self,
        grads: &NetGrads<F>,
        active: std::ops::Range<usize>,
        mut f: impl FnMut(&mut Tensor<F>, &Tensor<F>, &mut Tensor<F>),
    ) {
        for (mi, module) in self.modules.iter_mut().enumerate() {
            if !active.contains(&mi) {
                continue;
            }
            for (li, layer) in module.layers.iter_mut().enumerate() {
                if let Some((gw, gb)) = &grads.modules[mi].layers[li] {
                    let w = layer.weights.as_mut().expect("grads imply params");
                    let b = layer.bias.as_mut().expect("grads imply params");
                    f(w, gw, b);
                    f(b, gb, w);
                }
            }
            for (li, layer) in module.head.layers.iter_mut().enumerate() {
                if let Some((gw, gb)) = &grads.modules[mi].head[li] {
                    let w = layer.weights.as_mut().expect("grads imply params");
                    let b = layer.bias.as_mut().expect("grads imply params");
                    f(w, gw, b);
                    f(b, gb, w);
                }
            }
        }
    }

    /// All parameter tensors with stable names, for checkpointing.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (mi, module) in self.modules.iter().enumerate() {
            for (li, layer) in module.layers.iter().enumerate() {
                if let (Some(w), Some(b)) = (&layer.weights, &layer.bias) {
                    out.push((format!("module{mi}.layer{li}.weight"), w));
                    out.push((format!("module{mi}.layer{li}.bias"), b));
                }
            }
            for (li, layer) in module.head.layers.iter().enumerate() {
                if let (Some(w), Some(b)) = (&layer.weights, &layer.bias) {
                    out.push((format!("module{mi}.head{li}.weight"), w));
                    out.push((format!("module{mi}.head{li}.bias"), b));
                }
            }
        }
        out
    }

    /// Mutable counterpart of `named_params`, same order.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        for (mi, module) in self.modules.iter_mut().enumerate() {
            for (li, layer) in module.layers.iter_mut().enumerate() {
                if let (Some(w), Some(b)) = (layer.weights.as_mut(), layer.bias.as_mut()) {
                    out.push((format!("module{mi}.layer{li}.weight"), w));
                    out.push((format!("module{mi}.layer{li}.bias"), b));
                }
            }
            for (li, layer) in module.head.layers.iter_mut().enumerate() {
                if let (Some(w), Some(b)) = (layer.weights.as_mut(), layer.bias.as_mut()) {
                    out.push((format!("module{mi}.head{li}.weight"), w));
                    out.push((format!("module{mi}.head{li}.bias"), b));
                }
            }
        }
        out
    }

    /// Order-insensitive digest of all parameters; used to assert that
    /// analyses leave the network untouched.
    pub fn param_checksum(&self) -> f64 {
        let mut acc = 0.0f64;
        for (_, t) in self.named_params() {
            for v in t.data() {
                acc += v.to_f64();
            }
            acc += t.len() as f64;
        }
        acc
    }
}

/// Splitmix-style seed derivation so that each layer gets an independent
/// stream from one experiment seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
