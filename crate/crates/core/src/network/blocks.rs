//! Convolution blocks: the two-conv U-net block, the stacked-3x3 Inception
//! block and the densely connected bottleneck.

use serde::{Deserialize, Serialize};

use super::layers::ConvLayer;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::ops::{concat_channels, split_channels, Activation};
use crate::tensor::{KernelShape, Tensor4};

/// Channel budget of the four Inception branches, in eighths of the block width `F`.
///
/// Branch outputs are `max(1, F·e/8)` for the first three branches, and the
/// deepest branch takes the remainder so the block always emits exactly `F`
/// channels. The stacked branches run at their own internal widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionAllocation {
    /// Output eighths of the `1x1`, `3x3`, `2x3x3` and `3x3x3` branches.
    pub branch_eighths: [usize; 4],
    /// Internal width (eighths of `F`) of the two-conv branch.
    pub two_stack_eighths: usize,
    /// Internal width (eighths of `F`) of the three-conv branch.
    pub three_stack_eighths: usize,
}

impl Default for InceptionAllocation {
    /// Calibrated so full-size models land within a few percent of the
    /// published parameter counts at the 64..512 filter ladder.
    fn default() -> Self {
        Self {
            branch_eighths: [1, 1, 2, 4],
            two_stack_eighths: 2,
            three_stack_eighths: 5,
        }
    }
}

impl InceptionAllocation {
    /// `F/4` per branch, stacked branches at their output width.
    pub fn equal() -> Self {
        Self {
            branch_eighths: [2, 2, 2, 2],
            two_stack_eighths: 2,
            three_stack_eighths: 2,
        }
    }

    fn scaled(filters: usize, eighths: usize) -> usize {
        (filters * eighths / 8).max(1)
    }

    /// Output width of each branch for a block of `filters` channels.
    pub fn branch_widths(&self, filters: usize) -> Result<[usize; 4]> {
        if filters % 4 != 0 {
            return Err(Error::Config(format!(
                "Inception block width {filters} is not divisible by 4"
            )));
        }
        let [a, b, c, _] = self.branch_eighths;
        let w = [Self::scaled(filters, a), Self::scaled(filters, b), Self::scaled(filters, c)];
        let used: usize = w.iter().sum();
        if used >= filters {
            return Err(Error::Config(format!(
                "Inception allocation {:?} leaves no channels for the deepest branch at width {filters}",
                self.branch_eighths
            )));
        }
        Ok([w[0], w[1], w[2], filters - used])
    }

    pub fn internal_widths(&self, filters: usize) -> [usize; 2] {
        [
            Self::scaled(filters, self.two_stack_eighths),
            Self::scaled(filters, self.three_stack_eighths),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    TwoConv,
    Inception,
}

fn concat_all(parts: &[Tensor4]) -> Result<Tensor4> {
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        acc = concat_channels(&acc, p)?;
    }
    Ok(acc)
}

/// Four parallel branches: `1x1`, one `3x3`, two stacked `3x3`, three stacked `3x3`.
#[derive(Debug, Clone)]
pub(crate) struct InceptionBlock {
    pub branches: Vec<Vec<ConvLayer>>,
    pub widths: [usize; 4],
}

impl InceptionBlock {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, filters: usize, alloc: &InceptionAllocation) -> Result<Self> {
        let widths = alloc.branch_widths(filters)?;
        let [m2, m3] = alloc.internal_widths(filters);
        let relu = Activation::Relu;
        let conv = |store: &mut ParamStore, n: String, k, ci, co| ConvLayer::new(store, &n, KernelShape::new(k, k, ci, co), relu);
        let branches = vec![
            vec![conv(store, format!("{name}.b1.conv1x1"), 1, c_in, widths[0])],
            vec![conv(store, format!("{name}.b2.conv3x3"), 3, c_in, widths[1])],
            vec![
                conv(store, format!("{name}.b3.conv3x3_1"), 3, c_in, m2),
                conv(store, format!("{name}.b3.conv3x3_2"), 3, m2, widths[2]),
            ],
            vec![
                conv(store, format!("{name}.b4.conv3x3_1"), 3, c_in, m3),
                conv(store, format!("{name}.b4.conv3x3_2"), 3, m3, m3),
                conv(store, format!("{name}.b4.conv3x3_3"), 3, m3, widths[3]),
            ],
        ];
        Ok(Self { branches, widths })
    }

    pub fn infer(&self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        let mut outs = Vec::with_capacity(4);
        for branch in &self.branches {
            let mut h = x.clone();
            for layer in branch {
                h = layer.infer(store, &h)?;
            }
            outs.push(h);
        }
        concat_all(&outs)
    }

    pub fn forward(&mut self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        let mut outs = Vec::with_capacity(4);
        for branch in &mut self.branches {
            let mut h = x.clone();
            for layer in branch.iter_mut() {
                h = layer.forward(store, &h)?;
            }
            outs.push(h);
        }
        concat_all(&outs)
    }

    pub fn backward(&mut self, store: &mut ParamStore, grad: &Tensor4) -> Result<Tensor4> {
        let mut pieces = Vec::with_capacity(4);
        let mut rest = grad.clone();
        for &w in &self.widths[..3] {
            let (head, tail) = split_channels(&rest, w)?;
            pieces.push(head);
            rest = tail;
        }
        pieces.push(rest);
        let mut gx: Option<Tensor4> = None;
        for (branch, g) in self.branches.iter_mut().zip(pieces) {
            let mut g = g;
            for layer in branch.iter_mut().rev() {
                g = layer.backward(store, &g)?;
            }
            match gx.as_mut() {
                None => gx = Some(g),
                Some(acc) => acc.add_assign(&g)?,
            }
        }
        Ok(gx.expect("four branches"))
    }
}

/// A resolution-preserving block mapping `c_in` to `filters` channels.
#[derive(Debug, Clone)]
pub(crate) enum Block {
    TwoConv([ConvLayer; 2]),
    Inception(InceptionBlock),
}

impl Block {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: BlockKind,
        c_in: usize,
        filters: usize,
        alloc: &InceptionAllocation,
    ) -> Result<Self> {
        Ok(match kind {
            BlockKind::TwoConv => Block::TwoConv([
                ConvLayer::new(store, &format!("{name}.conv1"), KernelShape::new(3, 3, c_in, filters), Activation::Relu),
                ConvLayer::new(store, &format!("{name}.conv2"), KernelShape::new(3, 3, filters, filters), Activation::Relu),
            ]),
            BlockKind::Inception => Block::Inception(InceptionBlock::new(store, name, c_in, filters, alloc)?),
        })
    }

    pub fn infer(&self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        match self {
            Block::TwoConv(layers) => layers[1].infer(store, &layers[0].infer(store, x)?),
            Block::Inception(b) => b.infer(store, x),
        }
    }

    pub fn forward(&mut self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        match self {
            Block::TwoConv(layers) => {
                let h = layers[0].forward(store, x)?;
                layers[1].forward(store, &h)
            }
            Block::Inception(b) => b.forward(store, x),
        }
    }

    pub fn clear(&mut self) {
        match self {
            Block::TwoConv(layers) => layers.iter_mut().for_each(ConvLayer::clear),
            Block::Inception(b) => b.branches.iter_mut().flatten().for_each(ConvLayer::clear),
        }
    }

    pub fn backward(&mut self, store: &mut ParamStore, grad: &Tensor4) -> Result<Tensor4> {
        match self {
            Block::TwoConv(layers) => {
                let g = layers[1].backward(store, grad)?;
                layers[0].backward(store, &g)
            }
            Block::Inception(b) => b.backward(store, grad),
        }
    }

    pub fn conv_layers(&self) -> Vec<&ConvLayer> {
        match self {
            Block::TwoConv(layers) => layers.iter().collect(),
            Block::Inception(b) => b.branches.iter().flatten().collect(),
        }
    }
}

/// Densely connected bottleneck: one block for `d = 1`; for `d = 3`,
/// `out1 = B1(x)`, `out2 = B2(out1)`, `out3 = B3(concat(out1, out2))`.
#[derive(Debug, Clone)]
pub(crate) struct DenseBottleneck {
    pub blocks: Vec<Block>,
    pub width: usize,
}

impl DenseBottleneck {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: BlockKind,
        c_in: usize,
        width: usize,
        d: usize,
        alloc: &InceptionAllocation,
    ) -> Result<Self> {
        let blocks = match d {
            1 => vec![Block::new(store, &format!("{name}.block1"), kind, c_in, width, alloc)?],
            3 => vec![
                Block::new(store, &format!("{name}.block1"), kind, c_in, width, alloc)?,
                Block::new(store, &format!("{name}.block2"), kind, width, width, alloc)?,
                Block::new(store, &format!("{name}.block3"), kind, 2 * width, width, alloc)?,
            ],
            other => {
                return Err(Error::Config(format!(
                    "dense bottleneck supports d = 1 or 3, got {other}"
                )))
            }
        };
        Ok(Self { blocks, width })
    }

    pub fn infer(&self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        let out1 = self.blocks[0].infer(store, x)?;
        if self.blocks.len() == 1 {
            return Ok(out1);
        }
        let out2 = self.blocks[1].infer(store, &out1)?;
        self.blocks[2].infer(store, &concat_channels(&out1, &out2)?)
    }

    pub fn forward(&mut self, store: &ParamStore, x: &Tensor4) -> Result<Tensor4> {
        let out1 = self.blocks[0].forward(store, x)?;
        if self.blocks.len() == 1 {
            return Ok(out1);
        }
        let out2 = self.blocks[1].forward(store, &out1)?;
        self.blocks[2].forward(store, &concat_channels(&out1, &out2)?)
    }

    pub fn clear(&mut self) {
        self.blocks.iter_mut().for_each(Block::clear);
    }

    pub fn backward(&mut self, store: &mut ParamStore, grad: &Tensor4) -> Result<Tensor4> {
        if self.blocks.len() == 1 {
            return self.blocks[0].backward(store, grad);
        }
        let g_merged = self.blocks[2].backward(store, grad)?;
        let (mut g1, g2) = split_channels(&g_merged, self.width)?;
        g1.add_assign(&self.blocks[1].backward(store, &g2)?)?;
        self.blocks[0].backward(store, &g1)
    }

    /// Blocks chained after the first one to form the dense part.
    pub fn dense_connected(&self) -> usize {
        self.blocks.len().saturating_sub(1)
    }
}

