//! A small CPU executor for stacks of 2-D convolutions, and the binary
//! weight file that describes them.
//!
//! Weight file layout, all little-endian:
//!
//! ```text
//! u32 layer_count
//! layer_count x { i32 out_ch, i32 in_ch, i32 kernel, i32 stride, i32 pad, i32 activation }
//! layer_count x { f32 weights[out_ch * in_ch * kernel * kernel], f32 bias[out_ch] }
//! ```
//!
//! Weights are row-major `(out, in, ky, kx)`. Activation codes: 0 = none,
//! 1 = relu.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{format_err, invalid, Error, Result};
use crate::frame::FeatureMap;

const MAX_LAYERS: usize = 64;
const MAX_CHANNELS: usize = 4096;
const MAX_KERNEL: usize = 31;
const MAX_STRIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

impl Activation {
    pub fn code(self) -> i32 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: i32) -> Option<Self> {
        match code {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Shape of one convolution layer, without its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    fn validate(&self) -> Result<()> {
        if self.out_channels == 0 || self.in_channels == 0 {
            return invalid("layer channel counts must be positive");
        }
        if self.out_channels > MAX_CHANNELS || self.in_channels > MAX_CHANNELS {
            return invalid(format!("layer channel counts exceed {MAX_CHANNELS}"));
        }
        if self.kernel.is_multiple_of(2) || self.kernel > MAX_KERNEL {
            return invalid(format!("kernel must be odd and at most {MAX_KERNEL}, got {}", self.kernel));
        }
        if self.stride == 0 || self.stride > MAX_STRIDE {
            return invalid(format!("stride must be in 1..={MAX_STRIDE}, got {}", self.stride));
        }
        if self.padding > self.kernel {
            return invalid(format!("padding {} exceeds kernel {}", self.padding, self.kernel));
        }
        Ok(())
    }

    /// Output side length for an input side, if at least one output fits.
    pub fn output_len(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

/// One convolution layer with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    shape: LayerShape,
    /// `(out, in, ky, kx)` row-major.
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvLayer {
    pub fn new(shape: LayerShape, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if weights.len() != shape.weight_count() {
            return invalid(format!(
                "layer expects {} weights, got {}",
                shape.weight_count(),
                weights.len()
            ));
        }
        if bias.len() != shape.out_channels {
            return invalid(format!("layer expects {} biases, got {}", shape.out_channels, bias.len()));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return invalid("non-finite layer parameter");
        }
        Ok(Self { shape, weights, bias })
    }

    pub fn zeros(shape: LayerShape) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.weight_count()], vec![0.0; shape.out_channels])
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }
}

/// Cross-correlation with zero padding plus bias (no activation).
///
/// Output size per axis is `floor((in + 2 pad - k) / stride) + 1`. Each output
/// element is accumulated in a fixed order, so results are identical for any
/// thread count.
pub fn conv2d(input: &FeatureMap, layer: &ConvLayer) -> Result<FeatureMap> {
    let s = &layer.shape;
    let (h, w, c) = input.dims();
    if c != s.in_channels {
        return invalid(format!("conv2d: input has {c} channels, layer expects {}", s.in_channels));
    }
    let (oh, ow) = match (s.output_len(h), s.output_len(w)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => return invalid(format!("conv2d: {h}x{w} input too small for kernel {}", s.kernel)),
    };
    let (k, oc) = (s.kernel, s.out_channels);
    // Reorder to (ky, kx, in, out) so the inner loop runs over output channels.
    let mut wt = vec![0.0f32; layer.weights.len()];
    for o in 0..oc {
        for i in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    wt[((ky * k + kx) * c + i) * oc + o] = layer.weights[((o * c + i) * k + ky) * k + kx];
                }
            }
        }
    }
    let data = input.data();
    let mut out = vec![0.0f32; oh * ow * oc];
    out.par_chunks_mut(ow * oc).enumerate().for_each(|(oy, row)| {
        for ox in 0..ow {
            let acc = &mut row[ox * oc..(ox + 1) * oc];
            acc.copy_from_slice(&layer.bias);
            for ky in 0..k {
                let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let px = &data[(iy as usize * w + ix as usize) * c..][..c];
                    let taps = &wt[(ky * k + kx) * c * oc..][..c * oc];
                    for (i, &val) in px.iter().enumerate() {
                        let wrow = &taps[i * oc..(i + 1) * oc];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += val * wv;
                        }
                    }
                }
            }
        }
    });
    FeatureMap::new(oh, ow, oc, out)
}

/// An ordered stack of convolution layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    layers: Vec<ConvLayer>,
}

impl ConvSpec {
    /// Checks that consecutive layers agree on channel counts.
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() || layers.len() > MAX_LAYERS {
            return invalid(format!("network must have 1..={MAX_LAYERS} layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].shape.out_channels != pair[1].shape.in_channels {
                return invalid(format!(
                    "layer outputs {} channels but next layer expects {}",
                    pair[0].shape.out_channels, pair[1].shape.in_channels
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros(shapes: &[LayerShape]) -> Result<Self> {
        Self::new(shapes.iter().map(|&s| ConvLayer::zeros(s)).collect::<Result<_>>()?)
    }

    /// Uniform weights in `+-1/sqrt(fan_in)` and zero biases from a seeded
    /// generator.
    pub fn seeded(shapes: &[LayerShape], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = shapes
            .iter()
            .map(|&s| {
                let bound = 1.0 / ((s.in_channels * s.kernel * s.kernel) as f32).sqrt();
                let weights = (0..s.weight_count()).map(|_| rng.gen_range(-bound..=bound)).collect();
                ConvLayer::new(s, weights, vec![0.0; s.out_channels])
            })
            .collect::<Result<_>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers.iter().map(|l| l.shape).collect()
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].shape.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().expect("non-empty").shape.out_channels
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = conv2d(&x, layer)?;
            if layer.shape.activation == Activation::Relu {
                x = x.map(|v| v.max(0.0));
            }
        }
        Ok(x)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            let s = l.shape;
            for v in [s.out_channels, s.in_channels, s.kernel, s.stride, s.padding] {
                out.extend_from_slice(&(v as i32).to_le_bytes());
            }
            out.extend_from_slice(&s.activation.code().to_le_bytes());
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decodes a weight file. Every size is checked against the buffer
    /// before anything is allocated.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut cursor = 0usize;
        let mut take4 = |what: &str| -> Result<[u8; 4]> {
            let chunk = bytes
                .get(cursor..cursor + 4)
                .ok_or_else(|| Error::Format(format!("weight file truncated reading {what}")))?;
            cursor += 4;
            Ok(chunk.try_into().expect("4 bytes"))
        };
        let count = u32::from_le_bytes(take4("layer count")?) as usize;
        if count == 0 || count > MAX_LAYERS {
            return format_err(format!("weight file layer count {count} outside 1..={MAX_LAYERS}"));
        }
        let mut shapes = Vec::with_capacity(count);
        for i in 0..count {
            let mut field = [0i32; 6];
            for f in &mut field {
                *f = i32::from_le_bytes(take4("layer header")?);
            }
            if field[..5].iter().any(|&v| v < 0) {
                return format_err(format!("layer {i} has a negative header field"));
            }
            let activation = Activation::from_code(field[5])
                .ok_or_else(|| Error::Format(format!("layer {i} has unknown activation {}", field[5])))?;
            let shape = LayerShape {
                out_channels: field[0] as usize,
                in_channels: field[1] as usize,
                kernel: field[2] as usize,
                stride: field[3] as usize,
                padding: field[4] as usize,
                activation,
            };
            shape.validate().map_err(|e| Error::Format(format!("layer {i}: {e}")))?;
            shapes.push(shape);
        }
        let header = 4 + 24 * count;
        let params: usize = shapes.iter().map(|s| s.weight_count() + s.out_channels).sum();
        let expected = header + 4 * params;
        if bytes.len() != expected {
            return format_err(format!(
                "weight file is {} bytes, header describes {expected}",
                bytes.len()
            ));
        }
        let mut floats = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut layers = Vec::with_capacity(count);
        for s in shapes {
            let weights: Vec<f32> = floats.by_ref().take(s.weight_count()).collect();
            let bias: Vec<f32> = floats.by_ref().take(s.out_channels).collect();
            layers.push(ConvLayer::new(s, weights, bias).map_err(|e| Error::Format(e.to_string()))?);
        }
        Self::new(layers).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.encode())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Frame;

    fn shape(out_c: usize, in_c: usize, k: usize, stride: usize, pad: usize) -> LayerShape {
        LayerShape {
            out_channels: out_c,
            in_channels: in_c,
            kernel: k,
            stride,
            padding: pad,
            activation: Activation::None,
        }
    }

    #[test]
    fn identity_kernel() {
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let layer = ConvLayer::new(shape(3, 3, 1, 1, 0), w, vec![0.0; 3]).unwrap();
        let x = Frame::from_fn(4, 5, 3, |y, x, c| (y * 15 + x * 3 + c) as f32 * 0.01).unwrap();
        assert_eq!(conv2d(&x, &layer).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant() {
        let layer = ConvLayer::new(shape(1, 2, 3, 1, 1), vec![1.0; 18], vec![0.0]).unwrap();
        let x = Frame::filled(5, 5, 2, 0.5);
        let y = conv2d(&x, &layer).unwrap();
        assert_eq!(y.dims(), (5, 5, 1));
        // Interior: 9 taps x 2 channels x 0.5.
        assert_eq!(y.at(2, 2, 0), 9.0);
        // Corner sees a 2x2 window.
        assert_eq!(y.at(0, 0, 0), 4.0);
    }

    #[test]
    fn output_dims_and_mismatch() {
        let layer = ConvLayer::zeros(shape(4, 3, 7, 2, 3)).unwrap();
        let y = conv2d(&Frame::zeros(11, 8, 3), &layer).unwrap();
        assert_eq!(y.dims(), (6, 4, 4));
        assert!(conv2d(&Frame::zeros(11, 8, 2), &layer).is_err());
        let big = ConvLayer::zeros(shape(1, 1, 5, 1, 0)).unwrap();
        assert!(conv2d(&Frame::zeros(3, 3, 1), &big).is_err());
    }

    #[test]
    fn spec_checks_chain() {
        let a = ConvLayer::zeros(shape(4, 3, 3, 1, 1)).unwrap();
        let b = ConvLayer::zeros(shape(2, 5, 3, 1, 1)).unwrap();
        assert!(ConvSpec::new(vec![a, b]).is_err());
        assert!(LayerShape { kernel: 4, ..shape(1, 1, 3, 1, 1) }.validate().is_err());
    }

    #[test]
    fn weight_file_roundtrip() {
        let spec = ConvSpec::seeded(&[shape(4, 3, 3, 1, 1), LayerShape { activation: Activation::Relu, ..shape(2, 4, 1, 1, 0) }], 5).unwrap();
        let bytes = spec.encode();
        assert_eq!(bytes.len(), 4 + 48 + 4 * (108 + 4 + 8 + 2));
        assert_eq!(ConvSpec::parse(&bytes).unwrap(), spec);
    }

    #[test]
    fn weight_file_errors() {
        let spec = ConvSpec::seeded(&[shape(2, 1, 3, 1, 1)], 1).unwrap();
        let bytes = spec.encode();
        assert!(matches!(ConvSpec::parse(&bytes[..bytes.len() - 4]), Err(Error::Format(_))));
        assert!(matches!(ConvSpec::parse(&bytes[..10]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4 + 20..4 + 24].copy_from_slice(&7i32.to_le_bytes());
        assert!(matches!(ConvSpec::parse(&bad), Err(Error::Format(_))));
        let mut huge = bytes.clone();
        huge[0..4].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(ConvSpec::parse(&huge), Err(Error::Format(_))));
        assert!(matches!(ConvSpec::parse(&[]), Err(Error::Format(_))));
    }
}
