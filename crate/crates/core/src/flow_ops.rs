//! Flow reversal, backward warping and flow refinement.

use rayon::prelude::*;

use crate::error::Result;
use crate::frame::{sample_bilinear_into, FlowField, Frame};

/// Width of the Gaussian distance kernel used when splatting, in pixels.
pub const SPLAT_SIGMA: f32 = 1.0;
/// Splat contributions farther than this many sigmas are dropped.
pub const SPLAT_TRUNCATION: f32 = 3.0;

/// Per-pixel confidence in `[0, 1]` that a target pixel was reached by the
/// source frame.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityMask {
    height: usize,
    width: usize,
    weights: Vec<f32>,
}

impl VisibilityMask {
    pub fn new(height: usize, width: usize, weights: Vec<f32>) -> Result<Self> {
        if weights.len() != height * width || weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return crate::error::invalid("visibility weights must match dims and lie in [0, 1]");
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            weights: vec![1.0; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.weights[y * self.width + x]
    }

    pub fn to_frame(&self) -> Frame {
        Frame::from_raw(self.height, self.width, 1, self.weights.clone())
    }
}

/// Converts a flow anchored at the source frame into one anchored at the
/// target, by forward-splatting every source vector to where it lands.
///
/// Each source pixel distributes its vector to the four pixels around its
/// landing point with bilinear weights times a Gaussian of the distance
/// (`sigma = 1`, truncated at 3 sigma). The reversed flow is the negated
/// weighted mean of what arrives. Visibility is the accumulated bilinear
/// mass, clamped to `[0, 1]`. Pixels nothing lands on take the value of the
/// nearest filled pixel in their row (ties go left), rows with no filled
/// pixels copy the nearest such row (ties go up), and their visibility is 0.
///
/// Accumulation runs in source raster order in `f64`, so the result does not
/// depend on the thread pool.
pub fn reverse_flow(fwd: &FlowField) -> (FlowField, VisibilityMask) {
    let (h, w) = fwd.dims();
    let n = h * w;
    let mut acc_u = vec![0.0f64; n];
    let mut acc_v = vec![0.0f64; n];
    let mut acc_w = vec![0.0f64; n];
    let mut mass = vec![0.0f64; n];
    let inv_two_sigma2 = 1.0 / (2.0 * (SPLAT_SIGMA as f64).powi(2));
    let cutoff2 = ((SPLAT_TRUNCATION * SPLAT_SIGMA) as f64).powi(2);

    for y in 0..h {
        for x in 0..w {
            let (fu, fv) = fwd.at(y, x);
            let tx = x as f64 + fu as f64;
            let ty = y as f64 + fv as f64;
            let x0 = tx.floor();
            let y0 = ty.floor();
            let fx = tx - x0;
            let fy = ty - y0;
            for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let qx = x0 + dx;
                    let qy = y0 + dy;
                    if qx < 0.0 || qy < 0.0 || qx >= w as f64 || qy >= h as f64 {
                        continue;
                    }
                    let bil = wx * wy;
                    if bil <= 0.0 {
                        continue;
                    }
                    let d2 = (qx - tx).powi(2) + (qy - ty).powi(2);
                    if d2 > cutoff2 {
                        continue;
                    }
                    let weight = bil * (-d2 * inv_two_sigma2).exp();
                    let q = qy as usize * w + qx as usize;
                    acc_u[q] += weight * fu as f64;
                    acc_v[q] += weight * fv as f64;
                    acc_w[q] += weight;
                    mass[q] += bil;
                }
            }
        }
    }

    let mut u = vec![0.0f32; n];
    let mut v = vec![0.0f32; n];
    let mut vis = vec![0.0f32; n];
    let mut filled = vec![false; n];
    for q in 0..n {
        if acc_w[q] > 0.0 {
            u[q] = -(acc_u[q] / acc_w[q]) as f32;
            v[q] = -(acc_v[q] / acc_w[q]) as f32;
            vis[q] = mass[q].clamp(0.0, 1.0) as f32;
            filled[q] = true;
        }
    }
    fill_holes(h, w, &mut u, &mut v, &filled);
    (
        FlowField::from_raw(h, w, u, v),
        VisibilityMask {
            height: h,
            width: w,
            weights: vis,
        },
    )
}

fn fill_holes(h: usize, w: usize, u: &mut [f32], v: &mut [f32], filled: &[bool]) {
    let mut row_has_data = vec![false; h];
    for (y, has_data) in row_has_data.iter_mut().enumerate() {
        let row = y * w;
        // Nearest filled column to the left / right of each pixel.
        let mut left = vec![None; w];
        let mut last = None;
        for x in 0..w {
            if filled[row + x] {
                last = Some(x);
            }
            left[x] = last;
        }
        let mut right = vec![None; w];
        last = None;
        for x in (0..w).rev() {
            if filled[row + x] {
                last = Some(x);
            }
            right[x] = last;
        }
        *has_data = left[w - 1].is_some();
        for x in 0..w {
            if filled[row + x] {
                continue;
            }
            let src = match (left[x], right[x]) {
                (Some(l), Some(r)) => {
                    if x - l <= r - x {
                        l
                    } else {
                        r
                    }
                }
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => continue,
            };
            u[row + x] = u[row + src];
            v[row + x] = v[row + src];
        }
    }
    if row_has_data.iter().all(|&b| b) || row_has_data.iter().all(|&b| !b) {
        return;
    }
    let source_rows: Vec<usize> = (0..h).filter(|&y| row_has_data[y]).collect();
    for y in 0..h {
        if row_has_data[y] {
            continue;
        }
        let nearest = *source_rows
            .iter()
            .min_by_key(|&&s| (s.abs_diff(y), s))
            .expect("at least one row has data");
        for x in 0..w {
            u[y * w + x] = u[nearest * w + x];
            v[y * w + x] = v[nearest * w + x];
        }
    }
}

/// Samples `src` at `x + flow(x)` with bilinear weights, clamping
/// coordinates to the image.
pub fn backward_warp(src: &Frame, flow: &FlowField) -> Result<Frame> {
    flow.ensure_matches(src, "backward_warp")?;
    let (h, w, c) = src.dims();
    let mut out = vec![0.0f32; h * w * c];
    out.par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let (fu, fv) = flow.at(y, x);
            sample_bilinear_into(
                src,
                x as f32 + fu,
                y as f32 + fv,
                &mut row[x * c..(x + 1) * c],
            );
        }
    });
    Ok(Frame::from_raw(h, w, c, out))
}

/// 3x3 median filter applied to each flow component, with replicated borders.
pub fn refine_flow(flow: &FlowField) -> FlowField {
    let (h, w) = flow.dims();
    let median = |plane: &[f32]| -> Vec<f32> {
        let mut out = vec![0.0f32; h * w];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let mut window = [0.0f32; 9];
            for (x, o) in row.iter_mut().enumerate() {
                let mut k = 0;
                for dy in [-1isize, 0, 1] {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in [-1isize, 0, 1] {
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window[k] = plane[yy * w + xx];
                        k += 1;
                    }
                }
                window.sort_unstable_by(f32::total_cmp);
                *o = window[4];
            }
        });
        out
    };
    FlowField::from_raw(h, w, median(flow.u()), median(flow.v()))
}
