//! Frame synthesis: visibility-weighted blending of the two warped frames,
//! and the residual refinement network fed with warped images, edges and
//! shallow convolutional features.

use crate::conv::{Activation, ConvSpec, LayerShape};
use crate::error::{invalid, Error, Result};
use crate::flow_ops::{backward_warp, VisibilityMask};
use crate::frame::{resample_bilinear, FeatureMap, FlowField, Frame};
use crate::pyramid::channel_gradient;

/// Feature channels produced by the feature extractor.
pub const FEATURE_CHANNELS: usize = 64;
/// Two RGB frames, their six-channel gradients, and two feature maps.
pub const RCSN_INPUT_CHANNELS: usize = 3 + 3 + 6 + 6 + FEATURE_CHANNELS + FEATURE_CHANNELS;

/// The fixed feature extractor architecture: 7x7, stride 2, padding 3, RGB in.
pub fn conv1_shape() -> LayerShape {
    LayerShape {
        out_channels: FEATURE_CHANNELS,
        in_channels: 3,
        kernel: 7,
        stride: 2,
        padding: 3,
        activation: Activation::None,
    }
}

/// Default residual network: three 3x3 layers (64, 32, 3 channels), relu on
/// the first two.
pub fn default_rcsn_shapes() -> Vec<LayerShape> {
    let layer = |out_channels, in_channels, activation| LayerShape {
        out_channels,
        in_channels,
        kernel: 3,
        stride: 1,
        padding: 1,
        activation,
    };
    vec![
        layer(64, RCSN_INPUT_CHANNELS, Activation::Relu),
        layer(32, 64, Activation::Relu),
        layer(3, 32, Activation::None),
    ]
}

/// Runs the single-layer feature extractor at half resolution and resizes
/// the result back to the frame size.
pub fn extract_features(frame: &Frame, conv1: &ConvSpec) -> Result<FeatureMap> {
    if conv1.shapes() != [conv1_shape()] {
        return Err(Error::Format(format!(
            "feature extractor must be a single {:?} layer",
            conv1_shape()
        )));
    }
    if frame.channels() != 3 {
        return invalid(format!("feature extraction needs RGB input, got {} channels", frame.channels()));
    }
    let half = conv1.forward(frame)?;
    resample_bilinear(&half, frame.height(), frame.width())
}

/// Fuses the two warped frames: `w0 = (1 - t) vis0`, `w1 = t vis1`,
/// `out = (w0 I0 + w1 I1) / (w0 + w1)`, falling back to `(1 - t) I0 + t I1`
/// where both weights vanish.
pub fn blend_warped(
    i0w: &Frame,
    i1w: &Frame,
    vis0: &VisibilityMask,
    vis1: &VisibilityMask,
    t: f32,
) -> Result<Frame> {
    i0w.ensure_same_shape(i1w, "blend_warped")?;
    let dims = (i0w.height(), i0w.width());
    if vis0.dims() != dims || vis1.dims() != dims {
        return invalid("blend_warped: visibility dims differ from frames");
    }
    if !(0.0..=1.0).contains(&t) {
        return invalid(format!("blend_warped: t={t} outside [0, 1]"));
    }
    let c = i0w.channels();
    let mut out = Vec::with_capacity(i0w.data().len());
    for (i, (&v0, &v1)) in vis0.weights().iter().zip(vis1.weights()).enumerate() {
        let w0 = (1.0 - t) * v0;
        let w1 = t * v1;
        let total = w0 + w1;
        let a = &i0w.data()[i * c..(i + 1) * c];
        let b = &i1w.data()[i * c..(i + 1) * c];
        for (&p, &q) in a.iter().zip(b) {
            let mixed = if total > 0.0 {
                (w0 * p + w1 * q) / total
            } else {
                (1.0 - t) * p + t * q
            };
            // Rounding can step just outside the two inputs.
            out.push(mixed.clamp(p.min(q), p.max(q)));
        }
    }
    Ok(Frame::from_raw(dims.0, dims.1, c, out))
}

/// Warped inputs of the residual network, all at the output resolution.
#[derive(Clone, Copy, Debug)]
pub struct RcsnInputs<'a> {
    pub blended: &'a Frame,
    pub warped: [&'a Frame; 2],
    pub edges: [&'a Frame; 2],
    pub features: [&'a FeatureMap; 2],
}

/// Concatenates `[I0w, I1w, E0w, E1w, F0w, F1w]`, predicts a 3-channel
/// residual with `net`, and returns `clamp(blended + residual, 0, 1)`.
pub fn rcsn_forward(inputs: &RcsnInputs<'_>, net: &ConvSpec) -> Result<Frame> {
    let stacked = Frame::concat_channels(&[
        inputs.warped[0],
        inputs.warped[1],
        inputs.edges[0],
        inputs.edges[1],
        inputs.features[0],
        inputs.features[1],
    ])?;
    if stacked.channels() != net.in_channels() {
        return invalid(format!(
            "residual network expects {} input channels, got {}",
            net.in_channels(),
            stacked.channels()
        ));
    }
    if inputs.blended.channels() != 3 || net.out_channels() != 3 {
        return invalid("residual synthesis works on 3-channel frames");
    }
    let residual = net.forward(&stacked)?;
    inputs.blended.ensure_same_shape(&residual, "rcsn residual")?;
    let data = inputs
        .blended
        .data()
        .iter()
        .zip(residual.data())
        .map(|(&b, &r)| (b + r).clamp(0.0, 1.0))
        .collect();
    Frame::new(inputs.blended.height(), inputs.blended.width(), 3, data)
}

/// Feature extractor and residual network weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Rcsn {
    conv1: ConvSpec,
    net: ConvSpec,
}

impl Rcsn {
    pub fn new(conv1: ConvSpec, net: ConvSpec) -> Result<Self> {
        if conv1.shapes() != [conv1_shape()] {
            return Err(Error::Format("feature extractor weights have the wrong shape".into()));
        }
        if net.in_channels() != RCSN_INPUT_CHANNELS || net.out_channels() != 3 {
            return Err(Error::Format(format!(
                "residual network must map {RCSN_INPUT_CHANNELS} channels to 3, found {} -> {}",
                net.in_channels(),
                net.out_channels()
            )));
        }
        Ok(Self { conv1, net })
    }

    /// Seeded pseudo-random weights for both networks.
    pub fn seeded(seed: u64) -> Result<Self> {
        Self::new(
            ConvSpec::seeded(&[conv1_shape()], seed)?,
            ConvSpec::seeded(&default_rcsn_shapes(), seed.wrapping_add(1))?,
        )
    }

    /// Seeded features with an all-zero residual network.
    pub fn identity(seed: u64) -> Result<Self> {
        Self::new(
            ConvSpec::seeded(&[conv1_shape()], seed)?,
            ConvSpec::zeros(&default_rcsn_shapes())?,
        )
    }

    pub fn conv1(&self) -> &ConvSpec {
        &self.conv1
    }

    pub fn net(&self) -> &ConvSpec {
        &self.net
    }

    /// Refines `blended` using the two source frames and the target-anchored
    /// flows that produced the warped frames.
    pub fn refine(
        &self,
        blended: &Frame,
        sources: [&Frame; 2],
        warped: [&Frame; 2],
        flows: [&FlowField; 2],
    ) -> Result<Frame> {
        let mut edges = Vec::with_capacity(2);
        let mut features = Vec::with_capacity(2);
        for (src, flow) in sources.iter().zip(flows) {
            edges.push(backward_warp(&channel_gradient(src), flow)?);
            features.push(backward_warp(&extract_features(src, &self.conv1)?, flow)?);
        }
        rcsn_forward(
            &RcsnInputs {
                blended,
                warped,
                edges: [&edges[0], &edges[1]],
                features: [&features[0], &features[1]],
            },
            &self.net,
        )
    }
}
