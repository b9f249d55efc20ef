//! Per-channel gradients and Laplacian pyramids.

use crate::error::{invalid, Result};
use crate::frame::{resample_bilinear, Frame};

/// Forward-difference gradients of every channel.
///
/// The output has `2 * C` channels laid out as `[dx_0, dy_0, dx_1, dy_1, ...]`.
/// The last column (for `dx`) and last row (for `dy`) use replicate padding,
/// so the difference there is zero.
pub fn channel_gradient(frame: &Frame) -> Frame {
    let (h, w, c) = frame.dims();
    let mut data = Vec::with_capacity(h * w * c * 2);
    for y in 0..h {
        let yn = (y + 1).min(h - 1);
        for x in 0..w {
            let xn = (x + 1).min(w - 1);
            for ch in 0..c {
                let here = frame.at(y, x, ch);
                data.push(frame.at(y, xn, ch) - here);
                data.push(frame.at(yn, x, ch) - here);
            }
        }
    }
    Frame::from_raw(h, w, 2 * c, data)
}

/// Halves each dimension (rounding up) by averaging 2x2 blocks; blocks that
/// hang over an odd border replicate the last row/column.
pub fn downsample_mean(frame: &Frame) -> Frame {
    let (h, w, c) = frame.dims();
    let (nh, nw) = (h.div_ceil(2), w.div_ceil(2));
    let mut data = Vec::with_capacity(nh * nw * c);
    for y in 0..nh {
        let (y0, y1) = (2 * y, (2 * y + 1).min(h - 1));
        for x in 0..nw {
            let (x0, x1) = (2 * x, (2 * x + 1).min(w - 1));
            for ch in 0..c {
                let s = frame.at(y0, x0, ch)
                    + frame.at(y0, x1, ch)
                    + frame.at(y1, x0, ch)
                    + frame.at(y1, x1, ch);
                data.push(s * 0.25);
            }
        }
    }
    Frame::from_raw(nh, nw, c, data)
}

/// A Laplacian pyramid: detail levels followed by the coarsest Gaussian level.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid {
    levels: Vec<Frame>,
}

impl Pyramid {
    pub fn levels(&self) -> &[Frame] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Collapses the pyramid by repeated upsample-and-add from the coarsest level.
    pub fn reconstruct(&self) -> Frame {
        let mut levels = self.levels.iter().rev();
        let mut acc = levels.next().expect("pyramid has at least one level").clone();
        for detail in levels {
            let up = resample_bilinear(&acc, detail.height(), detail.width())
                .expect("pyramid levels are non-empty");
            acc = add(detail, &up);
        }
        acc
    }
}

fn add(a: &Frame, b: &Frame) -> Frame {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Frame::from_raw(a.height(), a.width(), a.channels(), data)
}

fn sub(a: &Frame, b: &Frame) -> Frame {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Frame::from_raw(a.height(), a.width(), a.channels(), data)
}

/// Builds an `n`-level Laplacian pyramid (2x2 mean downsampling, bilinear
/// upsampling). Requires both sides to be at least `2^(n-1)`.
pub fn build_laplacian_pyramid(frame: &Frame, n: usize) -> Result<Pyramid> {
    if n == 0 {
        return invalid("pyramid needs at least one level");
    }
    let need = 1usize.checked_shl((n - 1) as u32).unwrap_or(usize::MAX);
    if frame.height().min(frame.width()) < need {
        return invalid(format!(
            "{}x{} frame too small for {n} pyramid levels (needs {need})",
            frame.height(),
            frame.width()
        ));
    }
    let mut gaussian = Vec::with_capacity(n);
    gaussian.push(frame.clone());
    for i in 1..n {
        let next = downsample_mean(&gaussian[i - 1]);
        gaussian.push(next);
    }
    let mut levels = Vec::with_capacity(n);
    for i in 0..n - 1 {
        let fine = &gaussian[i];
        let up = resample_bilinear(&gaussian[i + 1], fine.height(), fine.width())?;
        levels.push(sub(fine, &up));
    }
    levels.push(gaussian.pop().expect("n >= 1"));
    Ok(Pyramid { levels })
}
