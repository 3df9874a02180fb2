//! L1 tiling of a layer and its decomposition into IMA jobs.

use serde::{Deserialize, Serialize};

use crate::cluster::ImaJob;
use crate::config::{ImaConfig, L1_WORD_BYTES};
use crate::mapping::{LayerDescriptor, MapError};

/// L1 bytes kept aside for stacks and DMA descriptors.
pub const RUNTIME_RESERVE_BYTES: u64 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    /// Output pixels per tile.
    pub w_tile: u64,
    pub n_tiles: u64,
    pub in_tile_bytes: u64,
    pub out_tile_bytes: u64,
    pub double_buffered: bool,
}

/// Largest double-buffered tile that fits in `l1_bytes - runtime_reserve`.
pub fn build_tile_plan(layer: &LayerDescriptor, l1_bytes: u64, runtime_reserve: u64) -> Result<TilePlan, MapError> {
    layer.validate()?;
    let budget = l1_bytes.saturating_sub(runtime_reserve);
    let need = |w: u64| 2 * (layer.in_tile_bytes(w) + layer.out_tile_bytes(w));
    if need(1) > budget {
        return Err(MapError::TileInfeasible {
            needed: need(1),
            budget,
        });
    }
    // The footprint grows with w and is at least one byte per pixel, so the
    // answer lies in [1, budget].
    let (mut lo, mut hi) = (1u64, budget);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if need(mid) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let w_tile = lo;
    Ok(TilePlan {
        w_tile,
        n_tiles: layer.out_pixels().div_ceil(w_tile),
        in_tile_bytes: layer.in_tile_bytes(w_tile),
        out_tile_bytes: layer.out_tile_bytes(w_tile),
        double_buffered: true,
    })
}

/// Splits `total` into `parts` sizes differing by at most one, larger first.
pub fn balanced_split(total: u64, parts: u64) -> Vec<u64> {
    if parts == 0 {
        return Vec::new();
    }
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + u64::from(i < extra)).collect()
}

/// Rounds an L1 offset down to a word boundary.
fn word_align(addr: u64) -> u64 {
    addr - addr % u64::from(L1_WORD_BYTES)
}

/// Jobs for `pixels` output pixels of `layer` restricted to a slice of
/// `c_out` output channels. Inputs are read from `src` and
/// outputs written to `dst`.
///
/// Jobs are grouped by weight sub-matrix; when the slice needs more than
/// one sub-matrix, the first job of every group reprograms the crossbar.
pub fn ima_job_decompose(
    layer: &LayerDescriptor,
    pixels: u64,
    c_out: u32,
    ima: &ImaConfig,
    src: u64,
    dst: u64,
) -> Vec<ImaJob> {
    let rows = u64::from(ima.rows);
    let cols = u64::from(ima.cols);
    let unrolled = layer.unrolled_in();
    let co_len = u64::from(c_out);
    let row_blocks = unrolled.div_ceil(rows);
    let col_blocks = co_len.div_ceil(cols);
    let multi = row_blocks * col_blocks > 1;
    let in_px = if layer.kernel == 1 {
        u64::from(layer.c_in)
    } else {
        unrolled / u64::from(layer.kernel)
    } * u64::from(layer.bytes_per_elem);
    let out_px = co_len * u64::from(layer.bytes_per_elem);
    let mut jobs = Vec::with_capacity((pixels * row_blocks * col_blocks) as usize);
    for cb in 0..col_blocks {
        let c_o = (co_len - cb * cols).min(cols);
        for rb in 0..row_blocks {
            let c_i = (unrolled - rb * rows).min(rows);
            for p in 0..pixels {
                jobs.push(ImaJob {
                    c_in: c_i as u32,
                    c_out: c_o as u32,
                    l1_src: src + word_align(p * in_px + rb * rows),
                    l1_dst: dst + word_align(p * out_px + cb * cols),
                    needs_reprogram: multi && p == 0,
                });
            }
        }
    }
    jobs
}
