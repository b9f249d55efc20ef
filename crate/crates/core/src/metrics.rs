//! Image quality metrics and reconstruction losses.
//!
//! All reductions accumulate in `f64`, per row in parallel and then across
//! rows in row order, so results do not depend on the thread count.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::frame::{FlowField, Frame};
use crate::pyramid::build_laplacian_pyramid;

/// PSNR reported for identical frames.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Pyramid depth of the Laplacian loss.
pub const LAP_LEVELS: usize = 5;
/// Weight of the Laplacian term in the combined loss.
pub const LAP_WEIGHT: f64 = 10.0;

fn row_sum(len: usize, row_len: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let rows = len.div_ceil(row_len.max(1));
    let partial: Vec<f64> = (0..rows)
        .into_par_iter()
        .map(|r| (r * row_len..((r + 1) * row_len).min(len)).map(&f).sum())
        .collect();
    partial.iter().sum()
}

fn mean_abs_diff(a: &Frame, b: &Frame) -> f64 {
    let (da, db) = (a.data(), b.data());
    row_sum(da.len(), a.width() * a.channels(), |i| (da[i] as f64 - db[i] as f64).abs()) / da.len() as f64
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_shape(b, "mse")?;
    let (da, db) = (a.data(), b.data());
    let sum = row_sum(da.len(), a.width() * a.channels(), |i| {
        let d = da[i] as f64 - db[i] as f64;
        d * d
    });
    Ok(sum / da.len() as f64)
}

/// Peak signal-to-noise ratio for peak value 1, capped at [`PSNR_CAP`].
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * err.log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let centre = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - centre;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Gaussian-weighted local sums over every fully contained window
/// (separable, horizontal then vertical), for one channel.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            horiz[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * horiz[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5) over
/// valid window positions, averaged over channels and positions.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    let (h, w, c) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return invalid(format!("ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"));
    }
    let win = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let per_channel: Vec<f64> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let x: Vec<f64> = a.data().iter().skip(ch).step_by(c).map(|&v| v as f64).collect();
            let y: Vec<f64> = b.data().iter().skip(ch).step_by(c).map(|&v| v as f64).collect();
            let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| s * t).collect::<Vec<_>>();
            let mx = filter_valid(&x, h, w, &win);
            let my = filter_valid(&y, h, w, &win);
            let sxx = filter_valid(&prod(&x, &x), h, w, &win);
            let syy = filter_valid(&prod(&y, &y), h, w, &win);
            let sxy = filter_valid(&prod(&x, &y), h, w, &win);
            let mut sum = 0.0;
            for i in 0..mx.len() {
                let (ux, uy) = (mx[i], my[i]);
                let vx = sxx[i] - ux * ux;
                let vy = syy[i] - uy * uy;
                let cov = sxy[i] - ux * uy;
                sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                    / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            }
            sum / mx.len() as f64
        })
        .collect();
    Ok(per_channel.iter().sum::<f64>() / c as f64)
}

/// Mean absolute difference.
pub fn l1_loss(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_shape(b, "l1_loss")?;
    Ok(mean_abs_diff(a, b))
}

/// `sum_i 2^(i-1) * mean |L_i(a) - L_i(b)|` over `n` Laplacian levels, finest first.
pub fn lap_loss(a: &Frame, b: &Frame, n: usize) -> Result<f64> {
    a.ensure_same_shape(b, "lap_loss")?;
    let pa = build_laplacian_pyramid(a, n)?;
    let pb = build_laplacian_pyramid(b, n)?;
    let mut total = 0.0;
    for (i, (la, lb)) in pa.levels().iter().zip(pb.levels()).enumerate() {
        total += (1u64 << i) as f64 * mean_abs_diff(la, lb);
    }
    Ok(total)
}

/// `l1 + 10 * lap` with a five-level pyramid.
pub fn combined_loss(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(l1_loss(a, b)? + LAP_WEIGHT * lap_loss(a, b, LAP_LEVELS)?)
}

/// Mean endpoint error between two flows, pixels.
pub fn epe(f: &FlowField, g: &FlowField) -> Result<f64> {
    epe_masked(f, g, None)
}

/// Mean endpoint error over the pixels where `mask` is set (all when `None`).
pub fn epe_masked(f: &FlowField, g: &FlowField, mask: Option<&[bool]>) -> Result<f64> {
    if f.dims() != g.dims() {
        return invalid(format!("epe: dims {:?} vs {:?}", f.dims(), g.dims()));
    }
    let n = f.u().len();
    if mask.is_some_and(|m| m.len() != n) {
        return invalid("epe: mask length differs from flow");
    }
    let selected = |i: usize| mask.is_none_or(|m| m[i]);
    let count = (0..n).filter(|&i| selected(i)).count();
    if count == 0 {
        return invalid("epe: empty mask");
    }
    let sum = row_sum(n, f.width(), |i| {
        if !selected(i) {
            return 0.0;
        }
        let du = f.u()[i] as f64 - g.u()[i] as f64;
        let dv = f.v()[i] as f64 - g.v()[i] as f64;
        du.hypot(dv)
    });
    Ok(sum / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub lap: f64,
    pub combined: f64,
    pub epe: Option<f64>,
}

impl MetricReport {
    pub fn compute(pred: &Frame, gt: &Frame) -> Result<Self> {
        let l1 = l1_loss(pred, gt)?;
        let lap = lap_loss(pred, gt, LAP_LEVELS)?;
        Ok(Self {
            psnr: psnr(pred, gt)?,
            ssim: ssim(pred, gt)?,
            l1,
            lap,
            combined: l1 + LAP_WEIGHT * lap,
            epe: None,
        })
    }

    /// Field-wise mean; `epe` only when every report carries one.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let epe = reports
            .iter()
            .map(|r| r.epe)
            .collect::<Option<Vec<_>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        Some(MetricReport {
            psnr: avg(|r| r.psnr),
            ssim: avg(|r| r.ssim),
            l1: avg(|r| r.l1),
            lap: avg(|r| r.lap),
            combined: avg(|r| r.combined),
            epe,
        })
    }
}

/// Named per-frame reports plus their aggregate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<(String, MetricReport)>,
}

impl MetricTable {
    pub fn aggregate(&self) -> Option<MetricReport> {
        MetricReport::mean(&self.rows.iter().map(|(_, r)| *r).collect::<Vec<_>>())
    }

    /// Fixed-width text table, one line per frame and a final `mean` line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<24} {:>9} {:>8} {:>9} {:>9} {:>9} {:>8}\n",
            "frame", "psnr", "ssim", "l1", "lap", "combined", "epe"
        );
        let mut line = |name: &str, r: &MetricReport| {
            let epe = r.epe.map_or("-".to_string(), |e| format!("{e:.4}"));
            let _ = writeln!(
                out,
                "{:<24} {:>9.4} {:>8.5} {:>9.6} {:>9.6} {:>9.6} {:>8}",
                name, r.psnr, r.ssim, r.l1, r.lap, r.combined, epe
            );
        };
        for (name, r) in &self.rows {
            line(name, r);
        }
        if let Some(agg) = self.aggregate() {
            line("mean", &agg);
        }
        out
    }

    /// `name.metric=value` lines, with `mean.*` for the aggregate.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut emit = |name: &str, r: &MetricReport| {
            for (key, value) in [
                ("psnr", Some(r.psnr)),
                ("ssim", Some(r.ssim)),
                ("l1", Some(r.l1)),
                ("lap", Some(r.lap)),
                ("combined", Some(r.combined)),
                ("epe", r.epe),
            ] {
                if let Some(v) = value {
                    let _ = writeln!(out, "{name}.{key}={v}");
                }
            }
        };
        for (name, r) in &self.rows {
            emit(name, r);
        }
        if let Some(agg) = self.aggregate() {
            emit("mean", &agg);
        }
        out
    }
}
