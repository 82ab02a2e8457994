use serde::{Deserialize, Serialize};

use super::params::{dropout_mask, BufferId, Init, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::ops::{
    batch_norm_backward, batch_norm_infer, batch_norm_train, conv2d, conv2d_backward, transposed_conv2x2,
    transposed_conv2x2_backward, Activation, BatchNormCache, Padding,
};
use crate::recurrent::{bconvlstm_backward, bconvlstm_fuse, bconvlstm_fuse_cached, BConvLstmParams, ConvLstmParams, FuseCache, GATES};
use crate::rng::{self, Stream};
use crate::tensor::{KernelShape, Tensor4};

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Batch statistics, active dropout, caches retained.
    Train,
    /// Running statistics, identity dropout, no caches.
    Infer,
}

pub(crate) fn missing_cache(layer: &str) -> Error {
    Error::Usage(format!("{layer}: backward called without a cached train-mode forward"))
}

/// Same-padded convolution followed by an activation.
#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    pub name: String,
    pub shape: KernelShape,
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    cache: Option<(Tensor4, Tensor4)>,
}

impl ConvLayer {
    pub fn new(store: &mut ParamStore, name: &str, shape: KernelShape, activation: Activation) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            vec![shape.kh, shape.kw, shape.c_in, shape.c_out],
            Init::He {
                fan_in: shape.kh * shape.kw * shape.c_in,
            },
        );
        let bias = store.register(format!("{name}.bias"), vec![shape.c_out], Init::Zeros);
        Self {
            name: name.to_string(),
            shape,
            weight,
            bias,
            activation,
            cache: None,
        }
    }

    pub fn infer(&self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        let k = store.kernel(self.shape, self.weight, self.bias)?;
        let mut y = conv2d(x, k, Padding::Same)?;
        if self.activation != Activation::Identity {
            let act = self.activation;
            y.data_mut().iter_mut().for_each(|v| *v = act.apply_scalar(*v));
        }
        Ok(y)
    }

    pub fn forward(&mut self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        let y = self.infer(store, x)?;
        self.cache = Some((x.clone(), y.clone()));
        Ok(y)
    }

    pub fn clear(&mut self) {
        self.cache = None;
    }

    /// Activated output of the last train-mode forward.
    pub fn last_output(&self) -> Option<&Tensor4> {
        self.cache.as_ref().map(|(_, y)| y)
    }

    pub fn backward(&mut self, store: &mut ParamStore, grad: &Tensor4) -> Result<Tensor4> {
        let (x, y) = self.cache.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        let g = self.activation.backward(grad, y)?;
        let (gx, gk) = {
            let k = store.kernel(self.shape, self.weight, self.bias)?;
            conv2d_backward(&g, x, k, Padding::Same)?
        };
        store.add_grad(self.weight, &gk.data);
        store.add_grad(self.bias, &gk.bias);
        Ok(gx)
    }
}

/// `2x2` stride-2 transposed convolution (no activation).
#[derive(Debug, Clone)]
pub(crate) struct UpLayer {
    pub name: String,
    pub shape: KernelShape,
    pub weight: ParamId,
    pub bias: ParamId,
    cache: Option<Tensor4>,
}

impl UpLayer {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Self {
        let shape = KernelShape::new(2, 2, c_in, c_out);
        let weight = store.register(
            format!("{name}.weight"),
            vec![2, 2, c_in, c_out],
            Init::He { fan_in: c_in },
        );
        let bias = store.register(format!("{name}.bias"), vec![c_out], Init::Zeros);
        Self {
            name: name.to_string(),
            shape,
            weight,
            bias,
            cache: None,
        }
    }

    pub fn infer(&self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        transposed_conv2x2(x, store.kernel(self.shape, self.weight, self.bias)?)
    }

    pub fn forward(&mut self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        let y = self.infer(store, x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn clear(&mut self) {
        self.cache = None;
    }

    pub fn backward(&mut self, store: &mut ParamStore, grad: &Tensor4) -> Result<Tensor4> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        let (gx, gk) = transposed_conv2x2_backward(grad, x, store.kernel(self.shape, self.weight, self.bias)?)?;
        store.add_grad(self.weight, &gk.data);
        store.add_grad(self.bias, &gk.bias);
        Ok(gx)
    }
}

pub(crate) const BN_MOMENTUM: f64 = 0.99;
pub(crate) const BN_EPS: f64 = 1e-5;

/// Suffixes of the batch-norm running statistics in parameter tables and checkpoints.
pub const RUNNING_MEAN_SUFFIX: &str = ".running_mean";
pub const RUNNING_VAR_SUFFIX: &str = ".running_var";

#[derive(Debug, Clone)]
pub(crate) struct BatchNormLayer {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    cache: Option<BatchNormCache>,
}

impl BatchNormLayer {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.register(format!("{name}.gamma"), vec![channels], Init::Ones);
        let beta = store.register(format!("{name}.beta"), vec![channels], Init::Zeros);
        let running_mean = store.register_buffer(format!("{name}{RUNNING_MEAN_SUFFIX}"), vec![0.0; channels]);
        let running_var = store.register_buffer(format!("{name}{RUNNING_VAR_SUFFIX}"), vec![1.0; channels]);
        Self {
            name: name.to_string(),
            gamma,
            beta,
            running_mean,
            running_var,
            cache: None,
        }
    }

    pub fn infer(&self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        batch_norm_infer(
            x,
            store.value(self.gamma),
            store.value(self.beta),
            store.buffer(self.running_mean),
            store.buffer(self.running_var),
            BN_EPS,
        )
    }

    /// Batch statistics; also folds them into the running averages.
    pub fn forward(&mut self, store: &mut ParamStore, x: &Tensor4) -> Result<Tensor4> {
        let (y, cache) = batch_norm_train(x, store.value(self.gamma), store.value(self.beta), BN_EPS)?;
        for (r, m) in store.buffer_mut(self.running_mean).iter_mut().zip(&cache.mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in store.buffer_mut(self.running_var).iter_mut().zip(&cache.var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
        self.cache = Some(cache);
        Ok(y)
    }

    /// Normalized activations of the last train-mode call, before scale and
    /// shift, with the per-channel batch variance they were divided by.
    pub fn last_normalized(&self) -> Option<(&Tensor4, &[f64])> {
        self.cache.as_ref().map(|c| (&c.normalized, c.var.as_slice()))
    }

    pub fn clear(&mut self) {
        self.cache = None;
    }

    pub fn backward(&mut self, store: &mut ParamStore, grad: &Tensor4) -> Result<Tensor4> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        let (gx, dgamma, dbeta) = batch_norm_backward(grad, cache, store.value(self.gamma))?;
        store.add_grad(self.gamma, &dgamma);
        store.add_grad(self.beta, &dbeta);
        Ok(gx)
    }
}

/// Inverted dropout with masks drawn from a stream keyed by `(call, layer)`.
#[derive(Debug, Clone)]
pub(crate) struct DropoutLayer {
    pub name: String,
    pub rate: f64,
    pub key: u64,
    mask: Option<Vec<f64>>,
}

impl DropoutLayer {
    pub fn new(name: &str, rate: f64, key: u64) -> Self {
        Self {
            name: name.to_string(),
            rate,
            key,
            mask: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4, seed: u64, call: u64) -> Result<Tensor4> {
        if self.rate == 0.0 {
            self.mask = Some(Vec::new());
            return Ok(x.clone());
        }
        let mut mask = vec![0.0; x.shape().len()];
        let mut r = rng::stream(seed, Stream::Dropout, (call << 8) | self.key);
        dropout_mask(&mut r, self.rate, &mut mask)?;
        let mut y = x.clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        Ok(y)
    }

    pub fn clear(&mut self) {
        self.mask = None;
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4> {
        let mask = self.mask.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        if mask.is_empty() {
            return Ok(grad.clone());
        }
        let mut g = grad.clone();
        g.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        Ok(g)
    }
}

/// Sizes of a skip-connection fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct FusionDims {
    pub input: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub out: usize,
    pub out_kernel: usize,
}

/// Bidirectional ConvLSTM fusion whose weights live in the parameter store.
#[derive(Debug, Clone)]
pub(crate) struct FusionLayer {
    pub name: String,
    pub dims: FusionDims,
    /// Store ids in [`fusion_tensor_names`] order.
    pub ids: Vec<ParamId>,
    cache: Option<(FuseCache, BConvLstmParams)>,
}

/// Tensor names of one fusion layer, in the order used by gather/scatter.
pub(crate) fn fusion_tensor_names() -> Vec<String> {
    let mut names = Vec::new();
    for dir in ["fwd", "bwd"] {
        for g in GATES {
            names.push(format!("{dir}.w_x{g}"));
        }
        for g in GATES {
            names.push(format!("{dir}.w_h{g}"));
        }
        for g in ["i", "f", "o"] {
            names.push(format!("{dir}.w_c{g}"));
        }
        for g in GATES {
            names.push(format!("{dir}.b_{g}"));
        }
    }
    names.extend(["w_y_fwd".to_string(), "w_y_bwd".to_string(), "b_y".to_string()]);
    names
}

fn cell_tensors(p: &ConvLstmParams) -> impl Iterator<Item = &Vec<f64>> {
    p.tensors()
}

impl FusionLayer {
    pub fn new(store: &mut ParamStore, name: &str, dims: FusionDims) -> Self {
        let k = dims.kernel;
        let (c, f) = (dims.input, dims.hidden);
        let mut ids = Vec::new();
        let names = fusion_tensor_names();
        let mut it = names.iter();
        for _dir in 0..2 {
            for _ in 0..4 {
                ids.push(store.register(format!("{name}.{}", it.next().unwrap()), vec![k, k, c, f], Init::He { fan_in: k * k * c }));
            }
            for _ in 0..4 {
                ids.push(store.register(format!("{name}.{}", it.next().unwrap()), vec![k, k, f, f], Init::He { fan_in: k * k * f }));
            }
            for _ in 0..3 {
                ids.push(store.register(format!("{name}.{}", it.next().unwrap()), vec![f], Init::Zeros));
            }
            for _ in 0..4 {
                ids.push(store.register(format!("{name}.{}", it.next().unwrap()), vec![f], Init::Zeros));
            }
        }
        let ky = dims.out_kernel;
        for _ in 0..2 {
            ids.push(store.register(
                format!("{name}.{}", it.next().unwrap()),
                vec![ky, ky, f, dims.out],
                Init::He { fan_in: ky * ky * f },
            ));
        }
        ids.push(store.register(format!("{name}.{}", it.next().unwrap()), vec![dims.out], Init::Zeros));
        Self {
            name: name.to_string(),
            dims,
            ids,
            cache: None,
        }
    }

    pub fn gather(&self, store: &ParamStore) -> BConvLstmParams {
        let d = self.dims;
        let mut p = BConvLstmParams::zeros(d.input, d.hidden, d.kernel, d.out, d.out_kernel);
        let mut ids = self.ids.iter();
        for cell in [&mut p.fwd, &mut p.bwd] {
            for t in cell.tensors_mut() {
                t.copy_from_slice(store.value(*ids.next().unwrap()));
            }
        }
        p.w_y_fwd.copy_from_slice(store.value(*ids.next().unwrap()));
        p.w_y_bwd.copy_from_slice(store.value(*ids.next().unwrap()));
        p.b_y.copy_from_slice(store.value(*ids.next().unwrap()));
        p
    }

    fn scatter_grads(&self, store: &mut ParamStore, g: &BConvLstmParams) {
        let tensors = cell_tensors(&g.fwd)
            .chain(cell_tensors(&g.bwd))
            .chain([&g.w_y_fwd, &g.w_y_bwd, &g.b_y]);
        for (id, t) in self.ids.iter().zip(tensors) {
            store.add_grad(*id, t);
        }
    }

    pub fn infer(&self, store: &ParamStore, x_enc: &Tensor4, x_dec: &Tensor4) -> Result<Tensor4> {
        bconvlstm_fuse(x_enc, x_dec, &self.gather(store))
    }

    pub fn forward(&mut self, store: &ParamStore, x_enc: &Tensor4, x_dec: &Tensor4) -> Result<Tensor4> {
        let p = self.gather(store);
        let (y, cache) = bconvlstm_fuse_cached(x_enc, x_dec, &p)?;
        self.cache = Some((cache, p));
        Ok(y)
    }

    pub fn clear(&mut self) {
        self.cache = None;
    }

    /// Returns `(grad_enc, grad_dec)`.
    pub fn backward(&mut self, store: &mut ParamStore, grad: &Tensor4) -> Result<(Tensor4, Tensor4)> {
        let (cache, p) = self.cache.as_ref().ok_or_else(|| missing_cache(&self.name))?;
        let g = bconvlstm_backward(grad, cache, p)?;
        self.scatter_grads(store, &g.params);
        Ok((g.x_enc, g.x_dec))
    }
}
