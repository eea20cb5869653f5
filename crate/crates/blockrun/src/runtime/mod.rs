//! Block-sparse execution runtime.
//!
//! Feature maps persist across frames in per-layer canvases. Each frame, the
//! selected blocks are gathered with a halo ring, run through the layer's
//! dense operator, and scattered back; blocks that were not selected simply
//! keep whatever the canvas last held for them.

mod macs;
mod net;

pub use macs::*;
pub use net::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The block lattice over the input frame. Blocks are square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    pub image_h: usize,
    pub image_w: usize,
    pub block: usize,
    pub gh: usize,
    pub gw: usize,
}

impl BlockGrid {
    pub fn new(image_h: usize, image_w: usize, block: usize) -> Result<Self> {
        if block == 0 || image_h % block != 0 || image_w % block != 0 {
            return Err(Error::Config(format!(
                "block size {block} must divide image extents {image_w}x{image_h}"
            )));
        }
        Ok(BlockGrid {
            image_h,
            image_w,
            block,
            gh: image_h / block,
            gw: image_w / block,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.gh * self.gw
    }

    #[inline]
    pub fn index(&self, by: usize, bx: usize) -> usize {
        by * self.gw + bx
    }
}

/// Binary execute/copy decisions for one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionGrid {
    pub gh: usize,
    pub gw: usize,
    pub frame: u64,
    bits: Vec<u8>,
}

impl ActionGrid {
    pub fn new_ones(gh: usize, gw: usize, frame: u64) -> Self {
        ActionGrid {
            gh,
            gw,
            frame,
            bits: vec![1; gh * gw],
        }
    }

    pub fn new_zeros(gh: usize, gw: usize, frame: u64) -> Self {
        ActionGrid {
            gh,
            gw,
            frame,
            bits: vec![0; gh * gw],
        }
    }

    pub fn from_bits(gh: usize, gw: usize, frame: u64, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != gh * gw {
            return Err(Error::shape(
                "ActionGrid::from_bits",
                format!("{} bits for {}x{} grid", bits.len(), gh, gw),
            ));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Invalid("action bits must be 0 or 1".into()));
        }
        Ok(ActionGrid { gh, gw, frame, bits })
    }

    #[inline]
    pub fn get(&self, by: usize, bx: usize) -> bool {
        self.bits[by * self.gw + bx] == 1
    }

    pub fn set(&mut self, by: usize, bx: usize, v: bool) {
        self.bits[by * self.gw + bx] = v as u8;
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count_executed(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Fraction of executed blocks, the per-frame cost C_t.
    pub fn fraction(&self) -> f32 {
        self.count_executed() as f32 / self.bits.len() as f32
    }

    /// Executed block coordinates in row-major order; this fixes the layout
    /// of gathered block stacks.
    pub fn executed_positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.count_executed());
        for by in 0..self.gh {
            for bx in 0..self.gw {
                if self.get(by, bx) {
                    out.push((by, bx));
                }
            }
        }
        out
    }
}

/// How gather fills positions outside the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeMode {
    /// Zeros, matching dense zero padding of convolutions.
    Zero,
    /// Edge replication, matching the border clamp of bilinear resizing.
    Replicate,
}

/// Full-resolution activation store for one layer, persistent across frames.
#[derive(Clone, Debug)]
pub struct LayerCanvas {
    pub data: Tensor,
    /// Spatial downsample factor of this layer relative to the input frame.
    pub scale: usize,
    /// Block size in canvas pixels.
    pub block: usize,
    /// Frame index of the last write, per block.
    pub last_write: Vec<u64>,
}

impl LayerCanvas {
    pub fn new(channels: usize, grid: &BlockGrid, scale: usize) -> Result<Self> {
        if grid.block % scale != 0 {
            return Err(Error::Config(format!(
                "block size {} not divisible by layer scale {scale}",
                grid.block
            )));
        }
        Ok(LayerCanvas {
            data: Tensor::zeros(&[1, channels, grid.image_h / scale, grid.image_w / scale]),
            scale,
            block: grid.block / scale,
            last_write: vec![0; grid.num_blocks()],
        })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }
}

/// Stack the selected blocks of a canvas, each padded by `halo` pixels read
/// from the surrounding canvas content (cached values for non-executed
/// neighbours, already-scattered values for executed ones). Positions outside
/// the image follow `edge`.
pub fn gather_blocks(
    canvas: &LayerCanvas,
    actions: &ActionGrid,
    halo: usize,
    edge: EdgeMode,
) -> Result<Tensor> {
    let bs = canvas.block;
    if halo > bs {
        return Err(Error::Invalid(format!(
            "halo {halo} larger than block size {bs}"
        )));
    }
    let (_, c, h, w) = canvas.data.dim4()?;
    if h != actions.gh * bs || w != actions.gw * bs {
        return Err(Error::shape(
            "gather_blocks",
            format!("canvas {h}x{w}, grid {}x{} of {bs}px blocks", actions.gh, actions.gw),
        ));
    }
    let positions = actions.executed_positions();
    let side = bs + 2 * halo;
    let mut out = Tensor::zeros(&[positions.len(), c, side, side]);
    let src = canvas.data.data();
    let dst = out.data_mut();
    for (bi, &(by, bx)) in positions.iter().enumerate() {
        let oy = (by * bs) as isize - halo as isize;
        let ox = (bx * bs) as isize - halo as isize;
        for ci in 0..c {
            let splane = ci * h * w;
            let dplane = (bi * c + ci) * side * side;
            for py in 0..side {
                let gy = oy + py as isize;
                for px in 0..side {
                    let gx = ox + px as isize;
                    let v = match edge {
                        EdgeMode::Zero => {
                            if gy < 0 || gy >= h as isize || gx < 0 || gx >= w as isize {
                                0.0
                            } else {
                                src[splane + gy as usize * w + gx as usize]
                            }
                        }
                        EdgeMode::Replicate => {
                            let cy = gy.clamp(0, h as isize - 1) as usize;
                            let cx = gx.clamp(0, w as isize - 1) as usize;
                            src[splane + cy * w + cx]
                        }
                    };
                    dst[dplane + py * side + px] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Write computed blocks back into a canvas. Non-executed regions keep their
/// previous bits; if the blocks still carry a halo ring it is discarded.
pub fn scatter_blocks(blocks: &Tensor, actions: &ActionGrid, canvas: &mut LayerCanvas) -> Result<()> {
    let positions = actions.executed_positions();
    let (nb, c, bh, bw) = blocks.dim4()?;
    if nb != positions.len() {
        return Err(Error::shape(
            "scatter_blocks",
            format!("{nb} blocks for {} executed actions", positions.len()),
        ));
    }
    let bs = canvas.block;
    if c != canvas.channels() {
        return Err(Error::shape(
            "scatter_blocks",
            format!("{c} channels vs canvas {}", canvas.channels()),
        ));
    }
    if bh != bw || bh < bs || (bh - bs) % 2 != 0 {
        return Err(Error::shape(
            "scatter_blocks",
            format!("block extent {bh}x{bw} does not cover canvas block {bs}"),
        ));
    }
    let halo = (bh - bs) / 2;
    let (_, _, h, w) = canvas.data.dim4()?;
    let src = blocks.data();
    let dst = canvas.data.data_mut();
    for (bi, &(by, bx)) in positions.iter().enumerate() {
        for ci in 0..c {
            let splane = (bi * c + ci) * bh * bw;
            let dplane = ci * h * w;
            for py in 0..bs {
                let srow = splane + (py + halo) * bw + halo;
                let drow = dplane + (by * bs + py) * w + bx * bs;
                dst[drow..drow + bs].copy_from_slice(&src[srow..srow + bs]);
            }
        }
        canvas.last_write[by * actions.gw + bx] = actions.frame;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
