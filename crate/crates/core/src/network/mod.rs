//! Model assembly for the three variants: plain U-net, BCDU-net (ConvLSTM
//! skip fusion with a dense bottleneck) and InceptNet (BCDU-net with
//! Inception blocks).

mod audit;
mod blocks;
mod checkpoint;
mod layers;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use audit::{count_parameters, published_total, LayerCount, ParameterReport};
pub use blocks::{BlockKind, InceptionAllocation};
pub use checkpoint::{checkpoint_spec, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Mode, RUNNING_MEAN_SUFFIX, RUNNING_VAR_SUFFIX};
pub use params::{Buffer, Init, ParamId, ParamStore, Parameter};

use blocks::{Block, DenseBottleneck};
use layers::{BatchNormLayer, ConvLayer, DropoutLayer, FusionDims, FusionLayer, UpLayer};

use crate::error::{Error, Result};
use crate::ops::{concat_channels, maxpool2x2, maxpool2x2_backward, split_channels, Activation, ArgmaxCache};
use crate::tensor::{KernelShape, Shape4, Tensor4};

/// Pooling stages between the input and the bottleneck.
pub const POOL_STAGES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Unet,
    Bcdu,
    Inceptnet,
}

impl Variant {
    pub fn block_kind(self) -> BlockKind {
        match self {
            Variant::Inceptnet => BlockKind::Inception,
            _ => BlockKind::TwoConv,
        }
    }

    /// Whether skips are fused with a bidirectional ConvLSTM instead of concatenated.
    pub fn fuses_skips(self) -> bool {
        self != Variant::Unet
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Unet => "unet",
            Variant::Bcdu => "bcdu",
            Variant::Inceptnet => "inceptnet",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(Variant::Unet),
            "bcdu" => Ok(Variant::Bcdu),
            "inceptnet" => Ok(Variant::Inceptnet),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected unet, bcdu or inceptnet)"
            ))),
        }
    }
}

/// Sizes of the ConvLSTM skip fusion relative to the decoder width `F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Hidden channels per direction are `F / hidden_divisor`.
    pub hidden_divisor: usize,
    /// The fused map has `F / out_divisor` channels.
    pub out_divisor: usize,
    pub kernel_size: usize,
    pub out_kernel_size: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            hidden_divisor: 4,
            out_divisor: 2,
            kernel_size: 3,
            out_kernel_size: 1,
        }
    }
}

/// Everything needed to rebuild a model bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub d: usize,
    pub base_filters: Vec<usize>,
    /// `(h, w, c)`.
    pub input_shape: [usize; 3],
    pub dropout_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub inception: InceptionAllocation,
    #[serde(default)]
    pub fusion: FusionConfig,
}

impl NetworkSpec {
    pub fn new(variant: Variant, d: usize, input_shape: [usize; 3]) -> Self {
        Self {
            variant,
            d,
            base_filters: vec![64, 128, 256, 512],
            input_shape,
            dropout_rate: 0.5,
            seed: 0,
            inception: InceptionAllocation::default(),
            fusion: FusionConfig::default(),
        }
    }

    /// Smallest useful model: `8x8x1` input and filters `[4, 8, 16, 32]`.
    pub fn tiny(variant: Variant, d: usize) -> Self {
        Self {
            base_filters: vec![4, 8, 16, 32],
            ..Self::new(variant, d, [8, 8, 1])
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.seed > MAX_SEED {
            return cfg(format!("seed {} exceeds {MAX_SEED}", self.seed));
        }
        let [h, w, c] = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return cfg(format!("input shape {:?} has a zero dimension", self.input_shape));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return cfg(format!(
                "input {h}x{w} is not divisible by 8 (three 2x2 pooling stages)"
            ));
        }
        if self.d != 1 && self.d != 3 {
            return cfg(format!("d must be 1 or 3, got {}", self.d));
        }
        if self.base_filters.len() != POOL_STAGES + 1 {
            return cfg(format!(
                "base_filters needs {} entries, got {:?}",
                POOL_STAGES + 1,
                self.base_filters
            ));
        }
        if self.base_filters[0] == 0 || self.base_filters.windows(2).any(|p| p[1] != 2 * p[0]) {
            return cfg(format!("base_filters {:?} must double at every level", self.base_filters));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return cfg(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.variant == Variant::Inceptnet {
            for &f in &self.base_filters {
                self.inception.branch_widths(f)?;
            }
        }
        if self.variant.fuses_skips() {
            let fc = &self.fusion;
            if fc.hidden_divisor == 0 || fc.out_divisor == 0 {
                return cfg("fusion divisors must be positive".into());
            }
            if fc.kernel_size % 2 == 0 || fc.out_kernel_size % 2 == 0 {
                return cfg("fusion kernels must have odd size".into());
            }
            for &f in &self.base_filters[..POOL_STAGES] {
                if f % fc.hidden_divisor != 0 || f % fc.out_divisor != 0 {
                    return cfg(format!(
                        "decoder width {f} is not divisible by the fusion divisors {}/{}",
                        fc.hidden_divisor, fc.out_divisor
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical text form; embedded in checkpoints and compared on load.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("network spec always serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(format!("network spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// How one layer feeds another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Sequential,
    /// Encoder level `k` to decoder level `k`.
    Skip,
    /// Earlier bottleneck block output concatenated into a later block.
    DenseConcat,
}

/// One node of the layer table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: &'static str,
    /// `(h, w, c)` of the output for the spec's input size.
    pub output: [usize; 3],
    pub inputs: Vec<(String, EdgeKind)>,
}

#[derive(Debug, Clone)]
enum Skip {
    Concat,
    Fuse(FusionLayer),
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: UpLayer,
    bn: BatchNormLayer,
    activated: Option<Tensor4>,
    skip: Skip,
    block: Block,
    dropout: DropoutLayer,
    width: usize,
}

/// An assembled encoder/decoder with its parameter table and train-mode caches.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    spec: NetworkSpec,
    store: ParamStore,
    encoder: Vec<Block>,
    pools: Vec<Option<ArgmaxCache>>,
    bottleneck: DenseBottleneck,
    /// Deepest stage first.
    decoder: Vec<DecoderStage>,
    head: ConvLayer,
    table: Vec<LayerInfo>,
    dropout_calls: u64,
    cached: bool,
}

/// Largest seed a config file can hold; TOML integers are signed 64-bit.
pub const MAX_SEED: u64 = i64::MAX as u64;

/// Builds and initializes a model from `spec.seed`.
pub fn build_model(spec: &NetworkSpec) -> Result<ModelGraph> {
    spec.validate()?;
    let kind = spec.variant.block_kind();
    let alloc = spec.inception;
    let f = &spec.base_filters;
    let [h, w, c_in] = spec.input_shape;
    let mut store = ParamStore::new(spec.seed);
    let mut table = Vec::new();
    let block_kind_name = match kind {
        BlockKind::TwoConv => "two_conv",
        BlockKind::Inception => "inception",
    };
    let node = |name: String, kind: &'static str, output: [usize; 3], inputs: Vec<(String, EdgeKind)>| LayerInfo {
        name,
        kind,
        output,
        inputs,
    };

    let mut encoder = Vec::with_capacity(POOL_STAGES);
    let (mut ch, mut hh, mut ww) = (c_in, h, w);
    let mut prev = "input".to_string();
    for (l, &width) in f[..POOL_STAGES].iter().enumerate() {
        let name = format!("enc{}", l + 1);
        encoder.push(Block::new(&mut store, &name, kind, ch, width, &alloc)?);
        table.push(node(name.clone(), block_kind_name, [hh, ww, width], vec![(prev, EdgeKind::Sequential)]));
        hh /= 2;
        ww /= 2;
        table.push(node(format!("{name}.pool"), "maxpool", [hh, ww, width], vec![(name.clone(), EdgeKind::Sequential)]));
        prev = format!("{name}.pool");
        ch = width;
    }

    let bw = f[POOL_STAGES];
    let bottleneck = DenseBottleneck::new(&mut store, "bottleneck", kind, ch, bw, spec.d, &alloc)?;
    for b in 1..=spec.d {
        let inputs = match b {
            1 => vec![(prev.clone(), EdgeKind::Sequential)],
            2 => vec![("bottleneck.block1".to_string(), EdgeKind::Sequential)],
            _ => vec![
                ("bottleneck.block1".to_string(), EdgeKind::DenseConcat),
                ("bottleneck.block2".to_string(), EdgeKind::Sequential),
            ],
        };
        table.push(node(format!("bottleneck.block{b}"), block_kind_name, [hh, ww, bw], inputs));
    }
    prev = format!("bottleneck.block{}", spec.d);
    ch = bw;

    let mut decoder = Vec::with_capacity(POOL_STAGES);
    for l in (0..POOL_STAGES).rev() {
        let width = f[l];
        let name = format!("dec{}", l + 1);
        hh *= 2;
        ww *= 2;
        let up = UpLayer::new(&mut store, &format!("{name}.up"), ch, width);
        table.push(node(format!("{name}.up"), "transposed_conv", [hh, ww, width], vec![(prev.clone(), EdgeKind::Sequential)]));
        let bn = BatchNormLayer::new(&mut store, &format!("{name}.bn"), width);
        table.push(node(format!("{name}.bn"), "batch_norm", [hh, ww, width], vec![(format!("{name}.up"), EdgeKind::Sequential)]));
        let skip_inputs = vec![
            (format!("enc{}", l + 1), EdgeKind::Skip),
            (format!("{name}.bn"), EdgeKind::Sequential),
        ];
        let (skip, merged) = if spec.variant.fuses_skips() {
            let fc = spec.fusion;
            let dims = FusionDims {
                input: width,
                hidden: width / fc.hidden_divisor,
                kernel: fc.kernel_size,
                out: width / fc.out_divisor,
                out_kernel: fc.out_kernel_size,
            };
            let fuse = FusionLayer::new(&mut store, &format!("{name}.fuse"), dims);
            table.push(node(format!("{name}.fuse"), "bconvlstm", [hh, ww, dims.out], skip_inputs));
            (Skip::Fuse(fuse), (format!("{name}.fuse"), dims.out))
        } else {
            table.push(node(format!("{name}.concat"), "concat", [hh, ww, 2 * width], skip_inputs));
            (Skip::Concat, (format!("{name}.concat"), 2 * width))
        };
        let block = Block::new(&mut store, &format!("{name}.block"), kind, merged.1, width, &alloc)?;
        table.push(node(format!("{name}.block"), block_kind_name, [hh, ww, width], vec![(merged.0, EdgeKind::Sequential)]));
        let dropout = DropoutLayer::new(&format!("{name}.dropout"), spec.dropout_rate, l as u64);
        table.push(node(format!("{name}.dropout"), "dropout", [hh, ww, width], vec![(format!("{name}.block"), EdgeKind::Sequential)]));
        decoder.push(DecoderStage {
            up,
            bn,
            activated: None,
            skip,
            block,
            dropout,
            width,
        });
        prev = format!("{name}.dropout");
        ch = width;
    }

    let head = ConvLayer::new(&mut store, "head", KernelShape::new(1, 1, ch, 1), Activation::Sigmoid);
    table.push(node("head".into(), "conv1x1_sigmoid", [h, w, 1], vec![(prev, EdgeKind::Sequential)]));

    Ok(ModelGraph {
        spec: spec.clone(),
        store,
        encoder,
        pools: vec![None; POOL_STAGES],
        bottleneck,
        decoder,
        head,
        table,
        dropout_calls: 0,
        cached: false,
    })
}

impl ModelGraph {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn layer_table(&self) -> &[LayerInfo] {
        &self.table
    }

    pub fn zero_grad(&mut self) {
        self.store.zero_grad();
    }

    /// Blocks in the bottleneck that receive a dense (concatenated) input chain.
    pub fn dense_connected_blocks(&self) -> usize {
        self.bottleneck.dense_connected()
    }

    pub fn bottleneck_blocks(&self) -> usize {
        self.bottleneck.blocks.len()
    }

    fn check_input(&self, batch: &Tensor4) -> Result<()> {
        let s = batch.shape();
        let [h, w, c] = self.spec.input_shape;
        if (s.h, s.w, s.c) != (h, w, c) || s.n == 0 {
            return Err(Error::Shape(format!(
                "model expects (n,{h},{w},{c}) input, got {s}"
            )));
        }
        Ok(())
    }

    /// Probabilities for `batch`. Train mode caches activations for [`backward`](Self::backward).
    pub fn forward(&mut self, batch: &Tensor4, mode: Mode) -> Result<Tensor4> {
        match mode {
            Mode::Infer => {
                self.clear_caches();
                self.predict(batch)
            }
            Mode::Train => self.forward_train(batch),
        }
    }

    /// Inference with running statistics and no dropout; never mutates the graph.
    pub fn predict(&self, batch: &Tensor4) -> Result<Tensor4> {
        self.check_input(batch)?;
        let store = &self.store;
        let mut skips = Vec::with_capacity(POOL_STAGES);
        let mut x = batch.clone();
        for block in &self.encoder {
            let e = block.infer(store, &x)?;
            x = maxpool2x2(&e)?.0;
            skips.push(e);
        }
        x = self.bottleneck.infer(store, &x)?;
        for (stage, enc) in self.decoder.iter().zip(skips.iter().rev()) {
            let u = stage.up.infer(store, &x)?;
            let u = Activation::Relu.forward(&stage.bn.infer(store, &u)?);
            let merged = match &stage.skip {
                Skip::Concat => concat_channels(enc, &u)?,
                Skip::Fuse(fuse) => fuse.infer(store, enc, &u)?,
            };
            x = stage.block.infer(store, &merged)?;
        }
        self.head.infer(store, &x)
    }

    fn forward_train(&mut self, batch: &Tensor4) -> Result<Tensor4> {
        self.check_input(batch)?;
        self.cached = false;
        let call = self.dropout_calls;
        self.dropout_calls += 1;
        let seed = self.spec.seed;
        let store = &mut self.store;
        let mut skips = Vec::with_capacity(POOL_STAGES);
        let mut x = batch.clone();
        for (block, pool) in self.encoder.iter_mut().zip(self.pools.iter_mut()) {
            let e = block.forward(store, &x)?;
            let (p, arg) = maxpool2x2(&e)?;
            *pool = Some(arg);
            x = p;
            skips.push(e);
        }
        x = self.bottleneck.forward(store, &x)?;
        for (stage, enc) in self.decoder.iter_mut().zip(skips.iter().rev()) {
            let u = stage.up.forward(store, &x)?;
            let u = Activation::Relu.forward(&stage.bn.forward(store, &u)?);
            let merged = match &mut stage.skip {
                Skip::Concat => concat_channels(enc, &u)?,
                Skip::Fuse(fuse) => fuse.forward(store, enc, &u)?,
            };
            stage.activated = Some(u);
            let y = stage.block.forward(store, &merged)?;
            x = stage.dropout.forward(&y, seed, call)?;
        }
        let out = self.head.forward(store, &x)?;
        self.cached = true;
        Ok(out)
    }

    /// Accumulates parameter gradients for `d loss / d output` and returns
    /// the gradient with respect to the input batch.
    pub fn backward(&mut self, grad_loss: &Tensor4) -> Result<Tensor4> {
        if !self.cached {
            return Err(Error::Usage(
                "backward called without a cached train-mode forward".into(),
            ));
        }
        let store = &mut self.store;
        let mut g = self.head.backward(store, grad_loss)?;
        let mut enc_grads = Vec::with_capacity(POOL_STAGES);
        for stage in self.decoder.iter_mut().rev() {
            g = stage.dropout.backward(&g)?;
            g = stage.block.backward(store, &g)?;
            let (g_enc, g_up) = match &mut stage.skip {
                Skip::Concat => split_channels(&g, stage.width)?,
                Skip::Fuse(fuse) => fuse.backward(store, &g)?,
            };
            let act = stage.activated.as_ref().expect("cached with the stage");
            let g_up = Activation::Relu.backward(&g_up, act)?;
            let g_up = stage.bn.backward(store, &g_up)?;
            g = stage.up.backward(store, &g_up)?;
            enc_grads.push(g_enc);
        }
        g = self.bottleneck.backward(store, &g)?;
        for ((block, pool), g_enc) in self
            .encoder
            .iter_mut()
            .zip(&self.pools)
            .rev()
            .zip(enc_grads.into_iter().rev())
        {
            g = maxpool2x2_backward(&g, pool.as_ref().expect("cached with the stage"))?;
            g.add_assign(&g_enc)?;
            g = block.backward(store, &g)?;
        }
        Ok(g)
    }

    fn clear_caches(&mut self) {
        self.cached = false;
        self.encoder.iter_mut().for_each(Block::clear);
        self.pools.iter_mut().for_each(|p| *p = None);
        self.bottleneck.clear();
        for stage in &mut self.decoder {
            stage.up.clear();
            stage.bn.clear();
            stage.activated = None;
            if let Skip::Fuse(f) = &mut stage.skip {
                f.clear();
            }
            stage.block.clear();
            stage.dropout.clear();
        }
        self.head.clear();
    }

    /// Normalized activations and batch variances of every batch-norm layer
    /// from the last train-mode forward.
    pub fn batch_norm_activations(&self) -> Vec<(&str, &Tensor4, &[f64])> {
        self.decoder
            .iter()
            .filter_map(|s| s.bn.last_normalized().map(|(t, v)| (s.bn.name.as_str(), t, v)))
            .collect()
    }

    /// Which side of every ReLU and which pooling winner the cached forward
    /// took. Finite differences are only meaningful while this stays fixed.
    pub(crate) fn decision_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut relu = |t: Option<&Tensor4>| {
            if let Some(t) = t {
                out.extend(t.data().iter().map(|&v| usize::from(v > 0.0)));
            }
        };
        let blocks = self
            .encoder
            .iter()
            .chain(&self.bottleneck.blocks)
            .chain(self.decoder.iter().map(|s| &s.block));
        for layer in blocks.flat_map(Block::conv_layers) {
            if layer.activation == Activation::Relu {
                relu(layer.last_output());
            }
        }
        for stage in &self.decoder {
            relu(stage.activated.as_ref());
        }
        for pool in self.pools.iter().flatten() {
            out.extend_from_slice(pool.winners());
        }
        out
    }

    /// Parameter groups per layer, with the kernel shape of convolutional layers.
    pub(crate) fn layer_groups(&self) -> Vec<(String, &'static str, Vec<ParamId>, Option<KernelShape>)> {
        let mut out = Vec::new();
        let conv = |out: &mut Vec<_>, c: &ConvLayer| out.push((c.name.clone(), "conv", vec![c.weight, c.bias], Some(c.shape)));
        for block in &self.encoder {
            block.conv_layers().into_iter().for_each(|c| conv(&mut out, c));
        }
        for block in &self.bottleneck.blocks {
            block.conv_layers().into_iter().for_each(|c| conv(&mut out, c));
        }
        for s in &self.decoder {
            out.push((s.up.name.clone(), "transposed_conv", vec![s.up.weight, s.up.bias], Some(s.up.shape)));
            out.push((s.bn.name.clone(), "batch_norm", vec![s.bn.gamma, s.bn.beta], None));
            if let Skip::Fuse(f) = &s.skip {
                out.push((f.name.clone(), "bconvlstm", f.ids.clone(), None));
            }
            s.block.conv_layers().into_iter().for_each(|c| conv(&mut out, c));
        }
        conv(&mut out, &self.head);
        out
    }

    /// Output shape for a batch of `n`.
    pub fn output_shape(&self, n: usize) -> Shape4 {
        let [h, w, _] = self.spec.input_shape;
        Shape4::new(n, h, w, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(spec: &NetworkSpec, n: usize) -> Tensor4 {
        let [h, w, c] = spec.input_shape;
        Tensor4::from_fn(Shape4::new(n, h, w, c), |n, y, x, c| ((n * 31 + y * 7 + x * 3 + c) % 11) as f64 / 10.0)
    }

    #[test]
    fn spec_text_round_trips() {
        let spec = NetworkSpec::tiny(Variant::Inceptnet, 3);
        assert_eq!(NetworkSpec::from_text(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = NetworkSpec::tiny(Variant::Bcdu, 1);
        s.input_shape = [12, 8, 1];
        assert!(matches!(build_model(&s), Err(Error::Config(_))));
        let mut s = NetworkSpec::tiny(Variant::Bcdu, 2);
        assert!(build_model(&s).is_err());
        s.d = 1;
        s.base_filters = vec![4, 8, 12, 32];
        assert!(build_model(&s).is_err());
        let mut s = NetworkSpec::tiny(Variant::Inceptnet, 1);
        s.base_filters = vec![6, 12, 24, 48];
        assert!(build_model(&s).is_err());
    }

    #[test]
    fn output_shape_and_range() {
        for v in [Variant::Unet, Variant::Bcdu, Variant::Inceptnet] {
            let spec = NetworkSpec::tiny(v, 1);
            let mut g = build_model(&spec).unwrap();
            let y = g.forward(&batch(&spec, 2), Mode::Train).unwrap();
            assert_eq!(y.shape(), Shape4::new(2, 8, 8, 1));
            assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn wrong_input_is_a_shape_error() {
        let spec = NetworkSpec::tiny(Variant::Unet, 1);
        let mut g = build_model(&spec).unwrap();
        let x = Tensor4::zeros(Shape4::new(1, 16, 16, 1));
        assert!(matches!(g.forward(&x, Mode::Infer), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_needs_train_forward() {
        let spec = NetworkSpec::tiny(Variant::Bcdu, 1);
        let mut g = build_model(&spec).unwrap();
        let grad = Tensor4::zeros(g.output_shape(1));
        assert!(matches!(g.backward(&grad), Err(Error::Usage(_))));
        g.forward(&batch(&spec, 1), Mode::Train).unwrap();
        g.backward(&grad).unwrap();
        g.forward(&batch(&spec, 1), Mode::Infer).unwrap();
        assert!(matches!(g.backward(&grad), Err(Error::Usage(_))));
    }

    #[test]
    fn skips_join_matching_levels() {
        let g = build_model(&NetworkSpec::tiny(Variant::Inceptnet, 3)).unwrap();
        let table = g.layer_table();
        let out = |name: &str| table.iter().find(|l| l.name == name).unwrap().output;
        for l in table {
            for (src, kind) in &l.inputs {
                if *kind == EdgeKind::Skip {
                    let level = &src[3..];
                    assert!(l.name.starts_with(&format!("dec{level}.")));
                    assert_eq!(out(src)[..2], l.output[..2]);
                }
            }
        }
        assert_eq!(g.dense_connected_blocks(), 2);
    }
}
