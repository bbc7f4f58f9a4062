//! Deterministic per-cell features computed from a label raster.
//!
//! Each of the `MAX_LABELS` shape labels gets six channels, followed by a
//! 4x4 intensity pooling of the cell:
//!
//! | offset | content                                                          |
//! |--------|------------------------------------------------------------------|
//! | 0      | fraction of cell pixels carrying the label                       |
//! | 1      | pieces lying wholly inside the cell, saturating at `SUBITIZE_LIMIT` |
//! | 2      | pieces cut by the cell border, saturating at `SUBITIZE_LIMIT`    |
//! | 3      | pixels of the cut pieces, as a fraction of the cell              |
//! | 4      | pixels of the whole pieces, as a fraction of the cell            |
//! | 5      | share of the four cell sides touched by the label                |
//!
//! A piece is a 4-connected component of one label within the cell. Only
//! pixels of the cell itself are read, so a cell feature carries no
//! information about its surroundings.

use std::collections::VecDeque;

use super::{FeatureGrid, Raster};
use crate::gridgt::make_partition;
use crate::Result;

pub const MAX_LABELS: usize = 8;
pub const SUBITIZE_LIMIT: u32 = 3;
const CHANNELS: usize = 6;
const POOL: usize = 4;
pub const FEATURE_DIM: usize = CHANNELS * MAX_LABELS + POOL * POOL;

pub fn featurize(raster: &Raster, rows: usize, cols: usize) -> Result<FeatureGrid> {
    let partition = make_partition(raster.width(), raster.height(), rows, cols)?;
    let mut grid = FeatureGrid::zeros(rows, cols, FEATURE_DIM);
    for r in 0..rows {
        for c in 0..cols {
            let (x0, x1) = partition.col_span(c);
            let (y0, y1) = partition.row_span(r);
            cell_features(raster, x0, y0, x1, y1, grid.cell_mut(r * cols + c));
        }
    }
    Ok(grid)
}

fn slot(label: u8) -> usize {
    (label as usize - 1) % MAX_LABELS
}

#[derive(Default, Clone, Copy)]
struct LabelStats {
    pixels: u32,
    whole: u32,
    cut: u32,
    cut_pixels: u32,
    /// Bit per cell side: left, right, top, bottom.
    sides: u8,
}

fn cell_features(raster: &Raster, x0: u32, y0: u32, x1: u32, y1: u32, out: &mut [f64]) {
    let (cw, ch) = (x1 - x0, y1 - y0);
    let area = f64::from(cw * ch);
    let on_border = |x: u32, y: u32| x == x0 || y == y0 || x + 1 == x1 || y + 1 == y1;
    let mut stats = [LabelStats::default(); MAX_LABELS];
    let mut pool_sum = [0.0f64; POOL * POOL];
    let mut pool_n = [0u32; POOL * POOL];
    let mut seen = vec![false; (cw * ch) as usize];
    let index = |x: u32, y: u32| ((y - y0) * cw + (x - x0)) as usize;
    let mut queue = VecDeque::new();

    for y in y0..y1 {
        let py = ((y - y0) as usize * POOL) / ch as usize;
        for x in x0..x1 {
            let px = ((x - x0) as usize * POOL) / cw as usize;
            let label = raster.get(x, y);
            pool_n[py * POOL + px] += 1;
            if label == 0 {
                continue;
            }
            let st = &mut stats[slot(label)];
            st.pixels += 1;
            pool_sum[py * POOL + px] += f64::from(label) / MAX_LABELS as f64;
            st.sides |= u8::from(x == x0) | u8::from(x + 1 == x1) << 1 | u8::from(y == y0) << 2 | u8::from(y + 1 == y1) << 3;
            if seen[index(x, y)] {
                continue;
            }
            // flood the piece this pixel starts
            let (mut size, mut cut) = (0u32, false);
            seen[index(x, y)] = true;
            queue.push_back((x, y));
            while let Some((qx, qy)) = queue.pop_front() {
                size += 1;
                cut |= on_border(qx, qy);
                let neighbours = [
                    (qx > x0).then(|| (qx - 1, qy)),
                    (qx + 1 < x1).then(|| (qx + 1, qy)),
                    (qy > y0).then(|| (qx, qy - 1)),
                    (qy + 1 < y1).then(|| (qx, qy + 1)),
                ];
                for (nx, ny) in neighbours.into_iter().flatten() {
                    if !seen[index(nx, ny)] && raster.get(nx, ny) == label {
                        seen[index(nx, ny)] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            if cut {
                st.cut += 1;
                st.cut_pixels += size;
            } else {
                st.whole += 1;
            }
        }
    }

    for (s, st) in stats.iter().enumerate() {
        let o = &mut out[s * CHANNELS..(s + 1) * CHANNELS];
        o[0] = f64::from(st.pixels) / area;
        o[1] = f64::from(st.whole.min(SUBITIZE_LIMIT));
        o[2] = f64::from(st.cut.min(SUBITIZE_LIMIT));
        o[3] = f64::from(st.cut_pixels) / area;
        o[4] = f64::from(st.pixels - st.cut_pixels) / area;
        o[5] = f64::from(st.sides.count_ones()) / 4.0;
    }
    let pooled = &mut out[CHANNELS * MAX_LABELS..];
    for i in 0..POOL * POOL {
        pooled[i] = if pool_n[i] == 0 { 0.0 } else { pool_sum[i] / f64::from(pool_n[i]) };
    }
}
