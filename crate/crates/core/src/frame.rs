//! Image and flow containers plus bilinear resampling.
//!
//! Pixel data is stored row-major with interleaved channels (`HWC`), as
//! normalized `f32` intensities. Eight-bit PNG files map to `[0, 1]` by
//! dividing by 255; no gamma transform is applied in either direction.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

/// A dense `H x W x C` image of `f32` values.
///
/// Most frames hold intensities in `[0, 1]`, but intermediate products
/// (gradients, features, residuals) reuse the same container and may hold
/// any finite value.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Activations produced by convolution layers share the frame layout.
pub type FeatureMap = Frame;

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return invalid(format!(
                "frame dimensions must be positive, got {height}x{width}x{channels}"
            ));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidArgument("frame dimensions overflow".into()))?;
        if data.len() != expected {
            return invalid(format!(
                "frame data length {} does not match {height}x{width}x{channels}",
                data.len()
            ));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite frame value at index {bad}"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a frame from trusted data. Callers guarantee shape and finiteness.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty frame");
        assert!(value.is_finite());
        Self::from_raw(height, width, channels, vec![value; height * width * channels])
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a frame by evaluating `f(y, x, c)` at every sample, in
    /// row-major order.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_shape(&self, other: &Frame, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            invalid(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.dims(),
                other.dims()
            ))
        }
    }

    /// Applies `f` to every sample. `f` must map finite values to finite values.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Frame {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Frame::from_raw(self.height, self.width, self.channels, data)
    }

    pub fn clamp01(&self) -> Frame {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Averages channels into a single-channel frame.
    pub fn to_gray(&self) -> Frame {
        if self.channels == 1 {
            return self.clone();
        }
        let c = self.channels as f32;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f32>() / c)
            .collect();
        Frame::from_raw(self.height, self.width, 1, data)
    }

    /// Stacks frames of equal spatial size along the channel axis.
    pub fn concat_channels(frames: &[&Frame]) -> Result<Frame> {
        let first = match frames.first() {
            Some(f) => f,
            None => return invalid("concat_channels needs at least one frame"),
        };
        let (h, w) = (first.height, first.width);
        if frames.iter().any(|f| f.height != h || f.width != w) {
            return invalid("concat_channels: spatial dimensions differ");
        }
        let total: usize = frames.iter().map(|f| f.channels).sum();
        let mut data = Vec::with_capacity(h * w * total);
        for i in 0..h * w {
            for f in frames {
                data.extend_from_slice(&f.data[i * f.channels..(i + 1) * f.channels]);
            }
        }
        Ok(Frame::from_raw(h, w, total, data))
    }

    /// Keeps channels `start..start + count`.
    pub fn select_channels(&self, start: usize, count: usize) -> Result<Frame> {
        if count == 0 || start + count > self.channels {
            return invalid(format!(
                "channel range {start}..{} out of bounds for {} channels",
                start + count,
                self.channels
            ));
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .flat_map(|px| px[start..start + count].iter().copied())
            .collect();
        Ok(Frame::from_raw(self.height, self.width, count, data))
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Frame> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| Error::Format(format!("png decode: {e}")))?;
        Ok(Self::from_dynamic(img))
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Frame> {
        let bytes = std::fs::read(path.as_ref())?;
        Self::decode_png(&bytes)
    }

    fn from_dynamic(img: DynamicImage) -> Frame {
        let gray = !img.color().has_color();
        let (w, h) = (img.width() as usize, img.height() as usize);
        if gray {
            let buf = img.to_luma8();
            let data = buf.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
            Frame::from_raw(h, w, 1, data)
        } else {
            let buf = img.to_rgb8();
            let data = buf.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
            Frame::from_raw(h, w, 3, data)
        }
    }

    /// Quantizes to 8 bits (clamped, rounded) and encodes as PNG.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let img = match self.channels {
            1 => DynamicImage::ImageLuma8(
                GrayImage::from_raw(w, h, bytes).expect("buffer length matches dims"),
            ),
            3 => DynamicImage::ImageRgb8(
                RgbImage::from_raw(w, h, bytes).expect("buffer length matches dims"),
            ),
            c => return invalid(format!("png output needs 1 or 3 channels, got {c}")),
        };
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Format(format!("png encode: {e}")))?;
        Ok(out.into_inner())
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path.as_ref(), bytes)?;
        Ok(())
    }
}

/// A dense per-pixel displacement field in pixel units.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid(format!("flow dimensions must be positive, got {height}x{width}"));
        }
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::InvalidArgument("flow dimensions overflow".into()))?;
        if u.len() != n || v.len() != n {
            return invalid(format!(
                "flow component lengths ({}, {}) do not match {height}x{width}",
                u.len(),
                v.len()
            ));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return invalid("non-finite flow value");
        }
        Ok(Self {
            height,
            width,
            u,
            v,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>) -> Self {
        debug_assert_eq!(u.len(), height * width);
        debug_assert_eq!(v.len(), height * width);
        Self {
            height,
            width,
            u,
            v,
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, du: f32, dv: f32) -> Self {
        assert!(height > 0 && width > 0, "empty flow");
        let n = height * width;
        Self::from_raw(height, width, vec![du; n], vec![dv; n])
    }

    /// Builds a flow by evaluating `f(y, x) -> (u, v)` at every pixel, in
    /// row-major order.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> (f32, f32),
    ) -> Result<Self> {
        let n = height * width;
        let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(height, width, u, v)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn into_components(self) -> (Vec<f32>, Vec<f32>) {
        (self.u, self.v)
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub(crate) fn ensure_same_dims(&self, other: &FlowField, what: &str) -> Result<()> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            invalid(format!(
                "{what}: flow dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            ))
        }
    }

    pub(crate) fn ensure_matches(&self, frame: &Frame, what: &str) -> Result<()> {
        if self.dims() == (frame.height(), frame.width()) {
            Ok(())
        } else {
            invalid(format!(
                "{what}: flow dims {:?} vs frame dims {:?}",
                self.dims(),
                (frame.height(), frame.width())
            ))
        }
    }

    /// Applies `f` componentwise (`u` and `v` independently).
    pub fn map(&self, f: impl Fn(f32) -> f32) -> FlowField {
        FlowField::from_raw(
            self.height,
            self.width,
            self.u.iter().map(|&x| f(x)).collect(),
            self.v.iter().map(|&x| f(x)).collect(),
        )
    }

    /// Combines two equally sized flows componentwise.
    pub fn zip_map(&self, other: &FlowField, f: impl Fn(f32, f32) -> f32) -> Result<FlowField> {
        self.ensure_same_dims(other, "zip_map")?;
        Ok(FlowField::from_raw(
            self.height,
            self.width,
            self.u.iter().zip(&other.u).map(|(&a, &b)| f(a, b)).collect(),
            self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn scale(&self, s: f32) -> FlowField {
        self.map(|x| x * s)
    }

    pub fn negate(&self) -> FlowField {
        self.map(|x| -x)
    }

    /// Resizes the field with bilinear resampling and rescales the vectors
    /// by the per-axis size ratio, so displacements stay in target pixels.
    pub fn resize(&self, new_h: usize, new_w: usize) -> Result<FlowField> {
        let as_frame = |c: &[f32]| Frame::from_raw(self.height, self.width, 1, c.to_vec());
        let sx = new_w as f32 / self.width as f32;
        let sy = new_h as f32 / self.height as f32;
        let u = resample_bilinear(&as_frame(&self.u), new_h, new_w)?.into_data();
        let v = resample_bilinear(&as_frame(&self.v), new_h, new_w)?.into_data();
        Ok(FlowField::from_raw(
            new_h,
            new_w,
            u.into_iter().map(|x| x * sx).collect(),
            v.into_iter().map(|x| x * sy).collect(),
        ))
    }
}

/// Source taps and the weight of the upper tap for one output coordinate.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f32,
}

/// Maps output sample centers onto input coordinates (half-pixel aligned),
/// clamping to the valid range.
fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: (src - lo as f64) as f32,
            }
        })
        .collect()
}

/// Resizes a frame with separable bilinear interpolation.
///
/// Output sample centers are aligned with input sample centers
/// (`src = (dst + 0.5) * in / out - 0.5`), and coordinates beyond the
/// border are clamped to the edge.
pub fn resample_bilinear(frame: &Frame, new_h: usize, new_w: usize) -> Result<Frame> {
    if new_h == 0 || new_w == 0 {
        return invalid(format!("resample target must be non-empty, got {new_h}x{new_w}"));
    }
    if (new_h, new_w) == (frame.height, frame.width) {
        return Ok(frame.clone());
    }
    let c = frame.channels;
    let ys = axis_taps(frame.height, new_h);
    let xs = axis_taps(frame.width, new_w);
    let mut out = vec![0.0f32; new_h * new_w * c];
    out.par_chunks_mut(new_w * c)
        .zip(ys.par_iter())
        .for_each(|(row, ty)| {
            for (x, tx) in xs.iter().enumerate() {
                for ch in 0..c {
                    let p00 = frame.at(ty.lo, tx.lo, ch);
                    let p01 = frame.at(ty.lo, tx.hi, ch);
                    let p10 = frame.at(ty.hi, tx.lo, ch);
                    let p11 = frame.at(ty.hi, tx.hi, ch);
                    let top = (1.0 - tx.frac) * p00 + tx.frac * p01;
                    let bottom = (1.0 - tx.frac) * p10 + tx.frac * p11;
                    row[x * c + ch] = (1.0 - ty.frac) * top + ty.frac * bottom;
                }
            }
        });
    Ok(Frame::from_raw(new_h, new_w, c, out))
}

/// Samples all channels of `frame` at continuous position `(x, y)` with
/// bilinear weights and clamp-to-edge coordinates, writing into `out`.
#[inline]
pub(crate) fn sample_bilinear_into(frame: &Frame, x: f32, y: f32, out: &mut [f32]) {
    let max_x = (frame.width - 1) as f32;
    let max_y = (frame.height - 1) as f32;
    let xc = x.clamp(0.0, max_x);
    let yc = y.clamp(0.0, max_y);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(frame.width - 1);
    let y1 = (y0 + 1).min(frame.height - 1);
    let fx = xc - x0 as f32;
    let fy = yc - y0 as f32;
    let c = frame.channels;
    let row0 = y0 * frame.width;
    let row1 = y1 * frame.width;
    for (ch, o) in out.iter_mut().enumerate().take(c) {
        let p00 = frame.data[(row0 + x0) * c + ch];
        let p01 = frame.data[(row0 + x1) * c + ch];
        let p10 = frame.data[(row1 + x0) * c + ch];
        let p11 = frame.data[(row1 + x1) * c + ch];
        let top = (1.0 - fx) * p00 + fx * p01;
        let bottom = (1.0 - fx) * p10 + fx * p11;
        *o = (1.0 - fy) * top + fy * bottom;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resample_is_exact() {
        let f = Frame::from_fn(5, 7, 3, |y, x, c| ((y * 7 + x) * 3 + c) as f32 / 105.0).unwrap();
        assert_eq!(resample_bilinear(&f, 5, 7).unwrap(), f);
    }

    #[test]
    fn constant_upsample_is_constant() {
        let f = Frame::filled(2, 2, 1, 0.37);
        let up = resample_bilinear(&f, 4, 4).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn ramp_resample_matches_hand_evaluation() {
        // src = (d + 0.5) * 4/7 - 0.5, clamped to [0, 3]; the ramp returns src.
        let expected = [0.0, 5.0 / 14.0, 13.0 / 14.0, 1.5, 29.0 / 14.0, 37.0 / 14.0, 3.0];
        let f = Frame::new(1, 4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let out = resample_bilinear(&f, 1, 7).unwrap();
        for (got, want) in out.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_target_is_rejected() {
        let f = Frame::zeros(2, 2, 1);
        assert!(matches!(
            resample_bilinear(&f, 0, 3),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn frame_rejects_bad_length_and_nan() {
        assert!(Frame::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Frame::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(Frame::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn png_roundtrip_quantizes_to_8_bits() {
        let f = Frame::from_fn(3, 4, 3, |y, x, c| ((y + x + c) * 20) as f32 / 255.0).unwrap();
        let back = Frame::decode_png(&f.encode_png().unwrap()).unwrap();
        assert_eq!(back.dims(), f.dims());
        for (a, b) in back.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let gray = Frame::filled(2, 2, 1, 1.0);
        let back = Frame::decode_png(&gray.encode_png().unwrap()).unwrap();
        assert_eq!(back.channels(), 1);
    }

    #[test]
    fn garbage_png_is_a_format_error() {
        assert!(matches!(
            Frame::decode_png(b"not a png"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn flow_resize_rescales_vectors() {
        let f = FlowField::constant(8, 8, 2.0, -4.0);
        let half = f.resize(4, 4).unwrap();
        assert!(half.u().iter().all(|&x| x == 1.0));
        assert!(half.v().iter().all(|&x| x == -2.0));
    }

    #[test]
    fn concat_and_select_channels() {
        let a = Frame::filled(2, 3, 1, 0.1);
        let b = Frame::filled(2, 3, 2, 0.2);
        let cat = Frame::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.channels(), 3);
        assert_eq!(cat.pixel(1, 2), &[0.1, 0.2, 0.2]);
        assert_eq!(cat.select_channels(1, 2).unwrap(), b);
    }
}
