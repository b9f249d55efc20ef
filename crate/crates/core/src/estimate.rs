//! Pluggable optical flow sources.
//!
//! Flows are requested between two labelled instants. Labels are frame
//! times: `-1, 0, 1, 2` inside a quad, or absolute frame indices when a
//! sequence is processed with a sliding window.

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::flo::load_flo;
use crate::frame::{FlowField, Frame};
use crate::pyramid::downsample_mean;
use crate::scene::SpriteScene;

/// Coarse-to-fine block matcher parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockMatchParams {
    /// Pyramid levels, at least 1.
    pub levels: usize,
    /// Search radius per level, pixels, at least 1.
    pub radius: usize,
    /// Odd patch side, at least 3.
    pub patch: usize,
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        Self {
            levels: 3,
            radius: 2,
            patch: 7,
        }
    }
}

impl BlockMatchParams {
    pub fn new(levels: usize, radius: usize, patch: usize) -> Result<Self> {
        let p = Self {
            levels,
            radius,
            patch,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 12 {
            return invalid(format!("block match levels must be in 1..=12, got {}", self.levels));
        }
        if self.radius == 0 || self.radius > 64 {
            return invalid(format!("block match radius must be in 1..=64, got {}", self.radius));
        }
        if self.patch < 3 || self.patch.is_multiple_of(2) || self.patch > 63 {
            return invalid(format!("block match patch must be odd in 3..=63, got {}", self.patch));
        }
        Ok(())
    }

    /// Largest displacement the pyramid search can reach.
    pub fn reach(&self) -> usize {
        self.radius * ((1 << self.levels) - 1)
    }
}

/// Where flows come from.
#[derive(Clone, Debug)]
pub enum FlowSource {
    /// Exact flows of a synthetic scene.
    Analytic(Arc<SpriteScene>),
    /// `.flo` files; `{from}` and `{to}` in the pattern are replaced by the
    /// frame labels.
    Precomputed(String),
    BlockMatch(BlockMatchParams),
}

/// Formats a frame label: integral values without a fractional part.
pub fn format_label(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

impl FlowSource {
    pub fn precomputed_path(pattern: &str, from: f64, to: f64) -> PathBuf {
        PathBuf::from(
            pattern
                .replace("{from}", &format_label(from))
                .replace("{to}", &format_label(to)),
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FlowSource::BlockMatch(p) => p.validate(),
            FlowSource::Precomputed(pattern) => {
                if pattern.is_empty() {
                    invalid("empty precomputed flow pattern")
                } else {
                    Ok(())
                }
            }
            FlowSource::Analytic(_) => Ok(()),
        }
    }
}

/// Estimates the flow from frame `from` (image `ia`) to frame `to` (image `ib`),
/// so that `ia(x) ~ ib(x + flow(x))`.
pub fn estimate_flow(src: &FlowSource, from: f64, to: f64, ia: &Frame, ib: &Frame) -> Result<FlowField> {
    if (ia.height(), ia.width()) != (ib.height(), ib.width()) {
        return invalid("estimate_flow: frame dimensions differ");
    }
    let dims = (ia.height(), ia.width());
    match src {
        FlowSource::Analytic(scene) => {
            if (scene.height(), scene.width()) != dims {
                return invalid("analytic scene canvas does not match frame dims");
            }
            Ok(scene.analytic_flow(from, to))
        }
        FlowSource::Precomputed(pattern) => {
            if from == to {
                return Ok(FlowField::zeros(dims.0, dims.1));
            }
            let path = FlowSource::precomputed_path(pattern, from, to);
            let flow = load_flo(&path)?;
            if flow.dims() != dims {
                return Err(Error::Format(format!(
                    "{}: flow is {:?}, frames are {:?}",
                    path.display(),
                    flow.dims(),
                    dims
                )));
            }
            Ok(flow)
        }
        FlowSource::BlockMatch(params) => block_match(ia, ib, params),
    }
}

/// Estimates a flow for frames downscaled from the originals.
///
/// Block matching reruns on the downscaled frames. Analytic and precomputed
/// flows only exist at the original resolution, so they are fetched there and
/// resized (vectors rescaled with the image).
pub fn estimate_flow_scaled(
    src: &FlowSource,
    from: f64,
    to: f64,
    full: (&Frame, &Frame),
    scaled: (&Frame, &Frame),
) -> Result<FlowField> {
    match src {
        FlowSource::BlockMatch(_) => estimate_flow(src, from, to, scaled.0, scaled.1),
        _ => estimate_flow(src, from, to, full.0, full.1)?
            .resize(scaled.0.height(), scaled.0.width()),
    }
}

struct Plane {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Plane {
    #[inline]
    fn at(&self, y: isize, x: isize) -> f32 {
        let yy = y.clamp(0, self.h as isize - 1) as usize;
        let xx = x.clamp(0, self.w as isize - 1) as usize;
        self.data[yy * self.w + xx]
    }
}

fn to_plane(f: &Frame) -> Plane {
    Plane {
        h: f.height(),
        w: f.width(),
        data: f.data().to_vec(),
    }
}

fn sad(a: &Plane, b: &Plane, y: isize, x: isize, dy: isize, dx: isize, half: isize) -> f32 {
    let mut s = 0.0f32;
    for py in -half..=half {
        for px in -half..=half {
            s += (a.at(y + py, x + px) - b.at(y + py + dy, x + px + dx)).abs();
        }
    }
    s
}

/// Sum-of-absolute-differences block matching on a mean pyramid of the
/// grayscale frames. Each level searches `radius` around twice the coarser
/// level's integer flow at the parent pixel and at its eight neighbours, so a
/// wrong coarse estimate can be replaced by a neighbour's. Candidates are
/// visited parent first, then neighbours in raster order, each by increasing
/// `(dx^2 + dy^2, dx, dy)`; only a strictly lower cost replaces the current
/// best. The finest level adds a parabolic subpixel fit per axis.
pub fn block_match(ia: &Frame, ib: &Frame, params: &BlockMatchParams) -> Result<FlowField> {
    params.validate()?;
    let mut pa = vec![ia.to_gray()];
    let mut pb = vec![ib.to_gray()];
    for _ in 1..params.levels {
        let (na, nb) = (downsample_mean(pa.last().unwrap()), downsample_mean(pb.last().unwrap()));
        pa.push(na);
        pb.push(nb);
    }
    let half = (params.patch / 2) as isize;
    let r = params.radius as isize;
    let mut offsets: Vec<(isize, isize)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
    offsets.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dx, dy));

    let mut coarse: Option<(usize, Vec<(isize, isize)>)> = None;
    let mut costs_at_finest = Vec::new();
    for level in (0..params.levels).rev() {
        let a = to_plane(&pa[level]);
        let b = to_plane(&pb[level]);
        let (h, w) = (a.h, a.w);
        let inits = |y: usize, x: usize| -> Vec<(isize, isize)> {
            let Some((cw, flow)) = &coarse else {
                return vec![(0, 0)];
            };
            let ch = flow.len() / cw;
            let (py, px) = ((y / 2) as isize, (x / 2) as isize);
            let mut out = Vec::with_capacity(9);
            let parent = (py, px);
            let neighbours = (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (py + dy, px + dx)));
            for (ny, nx) in std::iter::once(parent).chain(neighbours) {
                if ny < 0 || nx < 0 || ny >= ch as isize || nx >= *cw as isize {
                    continue;
                }
                let (cx, cy) = flow[ny as usize * cw + nx as usize];
                let cand = (2 * cx, 2 * cy);
                if !out.contains(&cand) {
                    out.push(cand);
                }
            }
            out
        };
        let finest = level == 0;
        let results: Vec<((isize, isize), [f32; 5])> = (0..h * w)
            .into_par_iter()
            .map(|i| {
                let (y, x) = (i / w, i % w);
                let (yi, xi) = (y as isize, x as isize);
                let mut best = (f32::INFINITY, (0isize, 0isize));
                for (ix, iy) in inits(y, x) {
                    for &(dx, dy) in &offsets {
                        let c = sad(&a, &b, yi, xi, iy + dy, ix + dx, half);
                        if c < best.0 {
                            best = (c, (ix + dx, iy + dy));
                        }
                    }
                }
                let d = best.1;
                let mut neigh = [best.0; 5];
                if finest {
                    neigh[1] = sad(&a, &b, yi, xi, d.1, d.0 - 1, half);
                    neigh[2] = sad(&a, &b, yi, xi, d.1, d.0 + 1, half);
                    neigh[3] = sad(&a, &b, yi, xi, d.1 - 1, d.0, half);
                    neigh[4] = sad(&a, &b, yi, xi, d.1 + 1, d.0, half);
                }
                (d, neigh)
            })
            .collect();
        if finest {
            costs_at_finest = results;
        } else {
            coarse = Some((w, results.into_iter().map(|(d, _)| d).collect()));
        }
    }

    let (h, w) = (ia.height(), ia.width());
    let mut u = Vec::with_capacity(h * w);
    let mut v = Vec::with_capacity(h * w);
    for ((dx, dy), c) in costs_at_finest {
        u.push(dx as f32 + parabola_offset(c[1], c[0], c[2]));
        v.push(dy as f32 + parabola_offset(c[3], c[0], c[4]));
    }
    FlowField::new(h, w, u, v)
}

/// Vertex of the parabola through `(-1, minus), (0, center), (1, plus)`,
/// clamped to half a pixel; zero for an exact match or a non-convex fit.
fn parabola_offset(minus: f32, center: f32, plus: f32) -> f32 {
    let denom = minus - 2.0 * center + plus;
    if center > 0.0 && denom > 0.0 {
        (0.5 * (minus - plus) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}
