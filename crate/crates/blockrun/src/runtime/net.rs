//! Layer graphs and their dense/sparse execution.
//!
//! A net is a flat list of layers; each names its input (the net input or an
//! earlier layer), so residual skips and multiple heads are plain layers.
//! Execution is layer-synchronous: every selected block finishes layer L
//! before any block starts layer L+1, which makes halo reads deterministic.

use super::{
    conv_macs_sparse, gather_blocks, scatter_blocks, ActionGrid, BlockGrid, EdgeMode, LayerCanvas,
    MacComponent, MacCounter,
};
use crate::error::{Error, Result};
use crate::tensor::{self, ConvSpec, Tensor};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Src {
    Input,
    Layer(usize),
}

#[derive(Clone, Debug)]
pub enum LayerOp {
    Conv(ConvSpec),
    Relu,
    Sigmoid,
    MaxPool2,
    UpsampleNearest2,
    UpsampleBilinear2,
    /// Elementwise add with the output canvas of another layer (same scale).
    AddFrom(usize),
    /// Forces dense evaluation of this and all later layers.
    GlobalAvgPool,
}

impl LayerOp {
    pub fn name(&self) -> &'static str {
        match self {
            LayerOp::Conv(_) => "conv",
            LayerOp::Relu => "relu",
            LayerOp::Sigmoid => "sigmoid",
            LayerOp::MaxPool2 => "max_pool2",
            LayerOp::UpsampleNearest2 => "upsample_nearest2",
            LayerOp::UpsampleBilinear2 => "upsample_bilinear2",
            LayerOp::AddFrom(_) => "add",
            LayerOp::GlobalAvgPool => "global_avg_pool",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub op: LayerOp,
    pub src: Src,
}

/// A network over (1, C, H, W) maps.
#[derive(Clone, Debug)]
pub struct NetSpec {
    pub in_channels: usize,
    pub layers: Vec<Layer>,
}

/// Static per-layer facts derived from the graph.
#[derive(Clone, Debug)]
pub struct LayerPlan {
    pub channels: usize,
    pub scale: usize,
    /// First layer (if any) from which execution must be dense.
    pub dense_from: Option<usize>,
}

impl NetSpec {
    pub fn new(in_channels: usize) -> Self {
        NetSpec {
            in_channels,
            layers: Vec::new(),
        }
    }

    /// Append a layer reading the previous layer (or the input for the first).
    pub fn push(&mut self, op: LayerOp) -> usize {
        let src = if self.layers.is_empty() {
            Src::Input
        } else {
            Src::Layer(self.layers.len() - 1)
        };
        self.push_from(op, src)
    }

    pub fn push_from(&mut self, op: LayerOp, src: Src) -> usize {
        self.layers.push(Layer { op, src });
        self.layers.len() - 1
    }

    fn src_info(&self, src: Src, plans: &[(usize, usize)]) -> Result<(usize, usize)> {
        match src {
            Src::Input => Ok((self.in_channels, 1)),
            Src::Layer(i) => {
                if i >= plans.len() {
                    return Err(Error::Config(format!(
                        "layer source {i} is not an earlier layer"
                    )));
                }
                Ok(plans[i])
            }
        }
    }

    /// Check the graph, compute per-layer channel counts and scales, and find
    /// the first layer that requires a dense fallback.
    pub fn plan(&self) -> Result<Vec<LayerPlan>> {
        let mut acc: Vec<(usize, usize)> = Vec::with_capacity(self.layers.len());
        let mut dense_from: Option<usize> = None;
        let mut plans = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let (cin, scale) = self.src_info(layer.src, &acc)?;
            let (cout, oscale) = match &layer.op {
                LayerOp::Conv(spec) => {
                    if spec.cin != cin {
                        return Err(Error::shape(
                            "NetSpec::plan",
                            format!("layer {li}: conv expects {} channels, source has {cin}", spec.cin),
                        ));
                    }
                    // Output blocks must tile exactly like dense outputs do.
                    let k = spec.kh.max(spec.kw);
                    if spec.kh != spec.kw || k < 2 * spec.pad + 1 || k > 2 * spec.pad + spec.stride {
                        return Err(Error::UnsupportedSparse(format!(
                            "conv {}x{} stride {} pad {} breaks block alignment",
                            spec.kh, spec.kw, spec.stride, spec.pad
                        )));
                    }
                    (spec.cout, scale * spec.stride)
                }
                LayerOp::Relu | LayerOp::Sigmoid => (cin, scale),
                LayerOp::MaxPool2 => (cin, scale * 2),
                LayerOp::UpsampleNearest2 | LayerOp::UpsampleBilinear2 => {
                    if scale % 2 != 0 {
                        return Err(Error::UnsupportedSparse(
                            "upsample above input resolution".into(),
                        ));
                    }
                    (cin, scale / 2)
                }
                LayerOp::AddFrom(other) => {
                    let (oc, os) = self.src_info(Src::Layer(*other), &acc)?;
                    if oc != cin || os != scale {
                        return Err(Error::shape(
                            "NetSpec::plan",
                            format!(
                                "layer {li}: add of {cin}ch/{scale}x with {oc}ch/{os}x"
                            ),
                        ));
                    }
                    (cin, scale)
                }
                LayerOp::GlobalAvgPool => {
                    if dense_from.is_none() {
                        dense_from = Some(li);
                    }
                    (cin, scale)
                }
            };
            // Anything after a dense-only layer stays dense.
            let df = dense_from.filter(|&d| d <= li);
            acc.push((cout, oscale));
            plans.push(LayerPlan {
                channels: cout,
                scale: oscale,
                dense_from: df,
            });
        }
        Ok(plans)
    }

    /// Largest downsample factor reached anywhere in the net.
    pub fn max_scale(&self) -> Result<usize> {
        Ok(self.plan()?.iter().map(|p| p.scale).max().unwrap_or(1))
    }

    /// Total dense conv MACs for one frame at the given input extents.
    pub fn dense_conv_macs(&self, grid: &BlockGrid) -> Result<u64> {
        let plans = self.plan()?;
        let mut total = 0;
        for (li, layer) in self.layers.iter().enumerate() {
            if let LayerOp::Conv(spec) = &layer.op {
                let s = plans[li].scale;
                total += super::conv_macs_dense(
                    spec.kh,
                    spec.kw,
                    spec.cin,
                    spec.cout,
                    grid.image_h / s,
                    grid.image_w / s,
                );
            }
        }
        Ok(total)
    }
}

/// One canvas per layer plus the input composite.
#[derive(Clone, Debug)]
pub struct CanvasSet {
    pub input: LayerCanvas,
    pub layers: Vec<LayerCanvas>,
}

impl CanvasSet {
    pub fn new(net: &NetSpec, grid: &BlockGrid) -> Result<Self> {
        let plans = net.plan()?;
        let max_scale = plans.iter().map(|p| p.scale).max().unwrap_or(1);
        if grid.block % max_scale != 0 {
            return Err(Error::Config(format!(
                "block size {} not divisible by the net's downsample factor {max_scale}",
                grid.block
            )));
        }
        let input = LayerCanvas::new(net.in_channels, grid, 1)?;
        let layers = plans
            .iter()
            .map(|p| LayerCanvas::new(p.channels, grid, p.scale))
            .collect::<Result<Vec<_>>>()?;
        Ok(CanvasSet { input, layers })
    }
}

fn dense_apply(op: &LayerOp, x: &Tensor, skip: Option<&Tensor>) -> Result<Tensor> {
    match op {
        LayerOp::Conv(spec) => spec.apply(x),
        LayerOp::Relu => Ok(tensor::relu(x)),
        LayerOp::Sigmoid => Ok(tensor::sigmoid(x)),
        LayerOp::MaxPool2 => tensor::max_pool2(x),
        LayerOp::UpsampleNearest2 => tensor::upsample_nearest2(x),
        LayerOp::UpsampleBilinear2 => tensor::upsample_bilinear2(x, 0),
        LayerOp::AddFrom(_) => tensor::add(x, skip.expect("skip tensor provided")),
        LayerOp::GlobalAvgPool => tensor::global_avg_pool(x),
    }
}

/// Dense reference execution; returns every layer output.
pub fn dense_forward(net: &NetSpec, input: &Tensor, macs: Option<&mut u64>) -> Result<Vec<Tensor>> {
    let mut outputs: Vec<Tensor> = Vec::with_capacity(net.layers.len());
    let mut conv_macs = 0u64;
    for layer in &net.layers {
        let x = match layer.src {
            Src::Input => input,
            Src::Layer(i) => &outputs[i],
        };
        let skip = match layer.op {
            LayerOp::AddFrom(i) => Some(&outputs[i]),
            _ => None,
        };
        if let LayerOp::Conv(spec) = &layer.op {
            let (_, _, h, w) = x.dim4()?;
            let oh = (h + 2 * spec.pad - spec.kh) / spec.stride + 1;
            let ow = (w + 2 * spec.pad - spec.kw) / spec.stride + 1;
            conv_macs += super::conv_macs_dense(spec.kh, spec.kw, spec.cin, spec.cout, oh, ow);
        }
        outputs.push(dense_apply(&layer.op, x, skip)?);
    }
    if let Some(m) = macs {
        *m += conv_macs;
    }
    Ok(outputs)
}

/// Timing of the copy machinery, reported separately from compute.
#[derive(Clone, Copy, Debug, Default)]
pub struct SparseStats {
    pub gather_scatter_secs: f64,
}

/// One frame of block-sparse execution over the canvas set.
///
/// The input canvas must already hold the current frame's content for the
/// selected blocks. With zero selected blocks this returns immediately and
/// every canvas keeps its previous bits.
pub fn sparse_forward(
    net: &NetSpec,
    canvases: &mut CanvasSet,
    actions: &ActionGrid,
    macs: &mut MacCounter,
    component: MacComponent,
) -> Result<SparseStats> {
    let plans = net.plan()?;
    let mut stats = SparseStats::default();
    let n_exec = actions.count_executed();
    if n_exec == 0 {
        return Ok(stats);
    }
    for (li, layer) in net.layers.iter().enumerate() {
        if plans[li].dense_from.is_some() {
            // Global operator reached: evaluate this and later layers densely
            // on the full canvases.
            let x = match layer.src {
                Src::Input => canvases.input.data.clone(),
                Src::Layer(i) => canvases.layers[i].data.clone(),
            };
            let skip = match layer.op {
                LayerOp::AddFrom(i) => Some(canvases.layers[i].data.clone()),
                _ => None,
            };
            if let LayerOp::Conv(spec) = &layer.op {
                let (_, _, h, w) = x.dim4()?;
                let oh = (h + 2 * spec.pad - spec.kh) / spec.stride + 1;
                let ow = (w + 2 * spec.pad - spec.kw) / spec.stride + 1;
                macs.add_conv(
                    component,
                    super::conv_macs_dense(spec.kh, spec.kw, spec.cin, spec.cout, oh, ow),
                );
            }
            let out = dense_apply(&layer.op, &x, skip.as_ref())?;
            canvases.layers[li].data = out;
            for lw in &mut canvases.layers[li].last_write {
                *lw = actions.frame;
            }
            continue;
        }

        let src_canvas = match layer.src {
            Src::Input => &canvases.input,
            Src::Layer(i) => &canvases.layers[i],
        };
        let (blocks, gs) = match &layer.op {
            LayerOp::Conv(spec) => {
                let t0 = Instant::now();
                let patches = gather_blocks(src_canvas, actions, spec.pad, EdgeMode::Zero)?;
                let gs = t0.elapsed().as_secs_f64();
                let out = tensor::conv2d(&patches, &spec.weights, &spec.bias, spec.stride, 0)?;
                let bs_out = src_canvas.block / spec.stride;
                macs.add_conv(
                    component,
                    conv_macs_sparse(spec.kh, spec.kw, spec.cin, spec.cout, bs_out, n_exec),
                );
                macs.copy_bytes += 4 * patches.len() as u64;
                (out, gs)
            }
            LayerOp::Relu => {
                let t0 = Instant::now();
                let patches = gather_blocks(src_canvas, actions, 0, EdgeMode::Zero)?;
                let gs = t0.elapsed().as_secs_f64();
                macs.copy_bytes += 4 * patches.len() as u64;
                (tensor::relu(&patches), gs)
            }
            LayerOp::Sigmoid => {
                let t0 = Instant::now();
                let patches = gather_blocks(src_canvas, actions, 0, EdgeMode::Zero)?;
                let gs = t0.elapsed().as_secs_f64();
                macs.copy_bytes += 4 * patches.len() as u64;
                (tensor::sigmoid(&patches), gs)
            }
            LayerOp::MaxPool2 => {
                let t0 = Instant::now();
                let patches = gather_blocks(src_canvas, actions, 0, EdgeMode::Zero)?;
                let gs = t0.elapsed().as_secs_f64();
                macs.copy_bytes += 4 * patches.len() as u64;
                (tensor::max_pool2(&patches)?, gs)
            }
            LayerOp::UpsampleNearest2 => {
                let t0 = Instant::now();
                let patches = gather_blocks(src_canvas, actions, 0, EdgeMode::Zero)?;
                let gs = t0.elapsed().as_secs_f64();
                macs.copy_bytes += 4 * patches.len() as u64;
                (tensor::upsample_nearest2(&patches)?, gs)
            }
            LayerOp::UpsampleBilinear2 => {
                // Halo 1 with edge replication so image borders match the
                // dense operator's coordinate clamp.
                let t0 = Instant::now();
                let patches = gather_blocks(src_canvas, actions, 1, EdgeMode::Replicate)?;
                let gs = t0.elapsed().as_secs_f64();
                macs.copy_bytes += 4 * patches.len() as u64;
                (tensor::upsample_bilinear2(&patches, 1)?, gs)
            }
            LayerOp::AddFrom(other) => {
                let t0 = Instant::now();
                let a = gather_blocks(src_canvas, actions, 0, EdgeMode::Zero)?;
                let b = gather_blocks(&canvases.layers[*other], actions, 0, EdgeMode::Zero)?;
                let gs = t0.elapsed().as_secs_f64();
                macs.copy_bytes += 4 * (a.len() + b.len()) as u64;
                (tensor::add(&a, &b)?, gs)
            }
            op @ LayerOp::GlobalAvgPool => {
                return Err(Error::UnsupportedSparse(op.name().to_string()))
            }
        };
        let t0 = Instant::now();
        scatter_blocks(&blocks, actions, &mut canvases.layers[li])?;
        stats.gather_scatter_secs += gs + t0.elapsed().as_secs_f64();
        macs.copy_bytes += 4 * blocks.len() as u64;
    }
    Ok(stats)
}
