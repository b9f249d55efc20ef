//! Two-scale inference: the pipeline runs on the input quad and on its
//! half-resolution counterpart, and a per-pixel mask fuses the two outputs.

use crate::conv::ConvSpec;
use crate::error::{invalid, Result};
use crate::frame::{resample_bilinear, Frame};
use crate::pipeline::{FrameQuad, Pipeline, StageOutputs};

/// Smallest frame side accepted by the two-scale run.
pub const MIN_TWO_SCALE_SIDE: usize = 8;

/// Per-pixel weight of the full-resolution branch, in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionMask {
    height: usize,
    width: usize,
    weights: Vec<f32>,
}

impl FusionMask {
    pub fn new(height: usize, width: usize, weights: Vec<f32>) -> Result<Self> {
        if weights.len() != height * width {
            return invalid(format!(
                "mask has {} weights for {height}x{width}",
                weights.len()
            ));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return invalid("mask weights must lie in [0, 1]");
        }
        Ok(Self { height, width, weights })
    }

    pub fn uniform(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
}

/// How the fusion mask is produced.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskPredictor {
    Constant(f32),
    /// Trusts each branch in inverse proportion to its warp error.
    WarpError,
    /// Logistic output of a network over `[full, up_half]`.
    Net(ConvSpec),
}

impl MaskPredictor {
    pub fn validate(&self) -> Result<()> {
        match self {
            MaskPredictor::Constant(c) if !(0.0..=1.0).contains(c) => {
                invalid(format!("constant mask {c} outside [0, 1]"))
            }
            MaskPredictor::Net(net) if net.out_channels() != 1 => {
                invalid("fusion network must output one channel")
            }
            _ => Ok(()),
        }
    }
}

/// Per-branch warp-error maps (one channel each) at output resolution.
#[derive(Clone, Copy, Debug)]
pub struct WarpErrors<'a> {
    pub full: &'a Frame,
    pub half: &'a Frame,
}

/// Mean absolute difference across channels of the two warped source frames.
pub fn warp_error_map(warped0: &Frame, warped1: &Frame) -> Result<Frame> {
    warped0.ensure_same_shape(warped1, "warp_error_map")?;
    let c = warped0.channels();
    let data = warped0
        .data()
        .chunks_exact(c)
        .zip(warped1.data().chunks_exact(c))
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f32>() / c as f32)
        .collect();
    Frame::new(warped0.height(), warped0.width(), 1, data)
}

fn logistic(x: f32) -> f32 {
    (1.0 / (1.0 + (-(x as f64)).exp())) as f32
}

pub fn predict_mask(
    predictor: &MaskPredictor,
    full: &Frame,
    up_half: &Frame,
    errors: Option<WarpErrors<'_>>,
) -> Result<FusionMask> {
    full.ensure_same_shape(up_half, "predict_mask")?;
    predictor.validate()?;
    let (h, w) = (full.height(), full.width());
    match predictor {
        MaskPredictor::Constant(c) => FusionMask::uniform(h, w, *c),
        MaskPredictor::WarpError => {
            let Some(errors) = errors else {
                return invalid("warp-error predictor needs per-branch error maps");
            };
            for e in [errors.full, errors.half] {
                if e.dims() != (h, w, 1) {
                    return invalid(format!("warp-error map is {:?}, expected ({h}, {w}, 1)", e.dims()));
                }
            }
            let weights = errors
                .full
                .data()
                .iter()
                .zip(errors.half.data())
                .map(|(&ef, &eh)| {
                    let total = ef + eh;
                    if total > 0.0 {
                        (eh / total).clamp(0.0, 1.0)
                    } else {
                        0.5
                    }
                })
                .collect();
            FusionMask::new(h, w, weights)
        }
        MaskPredictor::Net(net) => {
            let stacked = Frame::concat_channels(&[full, up_half])?;
            if stacked.channels() != net.in_channels() {
                return invalid(format!(
                    "fusion network expects {} channels, got {}",
                    net.in_channels(),
                    stacked.channels()
                ));
            }
            let out = net.forward(&stacked)?;
            if out.dims() != (h, w, 1) {
                return invalid("fusion network must preserve spatial dims");
            }
            FusionMask::new(h, w, out.data().iter().map(|&x| logistic(x)).collect())
        }
    }
}

/// `m * full + (1 - m) * up_half` per pixel.
pub fn fuse(mask: &FusionMask, full: &Frame, up_half: &Frame) -> Result<Frame> {
    full.ensure_same_shape(up_half, "fuse")?;
    if mask.dims() != (full.height(), full.width()) {
        return invalid("fusion mask dims differ from frames");
    }
    let c = full.channels();
    let mut out = Vec::with_capacity(full.data().len());
    for (i, &m) in mask.weights().iter().enumerate() {
        for k in i * c..(i + 1) * c {
            let (a, b) = (full.data()[k], up_half.data()[k]);
            // Rounding can step just outside the two inputs.
            out.push((m * a + (1.0 - m) * b).clamp(a.min(b), a.max(b)));
        }
    }
    Frame::new(full.height(), full.width(), c, out)
}

/// Full and upsampled half-resolution branch results for one `t`.
#[derive(Clone, Debug)]
pub struct TwoScaleOutputs {
    pub full: StageOutputs,
    pub half: StageOutputs,
    pub up_half: Frame,
    pub mask: FusionMask,
    pub output: Frame,
}

/// Fuses the branch results of one `t`; `half` is at half resolution.
pub fn fuse_branches(
    predictor: &MaskPredictor,
    full: StageOutputs,
    half: StageOutputs,
) -> Result<TwoScaleOutputs> {
    let (h, w) = (full.output.height(), full.output.width());
    let up_half = resample_bilinear(&half.output, h, w)?;
    let e_full = warp_error_map(&full.warped0, &full.warped1)?;
    let e_half = resample_bilinear(&warp_error_map(&half.warped0, &half.warped1)?, h, w)?;
    let mask = predict_mask(
        predictor,
        &full.output,
        &up_half,
        Some(WarpErrors { full: &e_full, half: &e_half }),
    )?;
    let output = fuse(&mask, &full.output, &up_half)?;
    Ok(TwoScaleOutputs { full, half, up_half, mask, output })
}

/// Half-resolution dims of the second branch.
pub fn half_dims(height: usize, width: usize) -> Result<(usize, usize)> {
    if height < MIN_TWO_SCALE_SIDE || width < MIN_TWO_SCALE_SIDE {
        return invalid(format!(
            "two-scale processing needs at least {MIN_TWO_SCALE_SIDE} px per side, got {height}x{width}"
        ));
    }
    Ok((height.div_ceil(2), width.div_ceil(2)))
}

/// Runs both branches for one `t` and fuses them with `predictor`.
pub fn run_two_scale(
    pipeline: &Pipeline,
    quad: &FrameQuad,
    t: f64,
    predictor: &MaskPredictor,
) -> Result<Frame> {
    Ok(run_two_scale_detailed(pipeline, quad, &[t], predictor)?
        .pop()
        .expect("one output per t")
        .output)
}

/// Two-scale run for several `t` sharing one flow estimation per branch.
pub fn run_two_scale_detailed(
    pipeline: &Pipeline,
    quad: &FrameQuad,
    t_values: &[f64],
    predictor: &MaskPredictor,
) -> Result<Vec<TwoScaleOutputs>> {
    predictor.validate()?;
    let (hh, hw) = half_dims(quad.height(), quad.width())?;
    let half_quad = quad.resized(hh, hw)?;
    let (full, half) = rayon::join(
        || -> Result<Vec<StageOutputs>> {
            let flows = pipeline.estimate_flows(quad)?;
            t_values.iter().map(|&t| pipeline.synthesize(quad, &flows, t)).collect()
        },
        || -> Result<Vec<StageOutputs>> {
            let flows = pipeline.estimate_flows_scaled(quad, &half_quad)?;
            t_values.iter().map(|&t| pipeline.synthesize(&half_quad, &flows, t)).collect()
        },
    );
    full?
        .into_iter()
        .zip(half?)
        .map(|(f, h)| fuse_branches(predictor, f, h))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{Activation, LayerShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, h: usize, w: usize) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(h, w, 3, |_, _, _| rng.gen::<f32>()).unwrap()
    }

    #[test]
    fn constant_predictor() {
        let (a, b) = (random(1, 5, 6), random(2, 5, 6));
        let m = predict_mask(&MaskPredictor::Constant(1.0), &a, &b, None).unwrap();
        assert!(m.weights().iter().all(|&w| w == 1.0));
        assert!(predict_mask(&MaskPredictor::Constant(1.5), &a, &b, None).is_err());
    }

    #[test]
    fn warp_error_predictor() {
        let (a, b) = (random(1, 5, 6), random(2, 5, 6));
        let e = Frame::filled(5, 6, 1, 0.3);
        let m = predict_mask(&MaskPredictor::WarpError, &a, &b, Some(WarpErrors { full: &e, half: &e })).unwrap();
        assert!(m.weights().iter().all(|&w| w == 0.5));
        let zero = Frame::zeros(5, 6, 1);
        let m = predict_mask(&MaskPredictor::WarpError, &a, &b, Some(WarpErrors { full: &zero, half: &zero })).unwrap();
        assert!(m.weights().iter().all(|&w| w == 0.5));
        let m = predict_mask(&MaskPredictor::WarpError, &a, &b, Some(WarpErrors { full: &zero, half: &e })).unwrap();
        assert!(m.weights().iter().all(|&w| w == 1.0));
        assert!(predict_mask(&MaskPredictor::WarpError, &a, &b, None).is_err());
    }

    #[test]
    fn zero_net_gives_half() {
        let net = ConvSpec::zeros(&[LayerShape {
            out_channels: 1,
            in_channels: 6,
            kernel: 3,
            stride: 1,
            padding: 1,
            activation: Activation::None,
        }])
        .unwrap();
        let (a, b) = (random(1, 5, 6), random(2, 5, 6));
        let m = predict_mask(&MaskPredictor::Net(net.clone()), &a, &b, None).unwrap();
        assert!(m.weights().iter().all(|&w| w == 0.5));
        let gray = a.to_gray();
        assert!(predict_mask(&MaskPredictor::Net(net), &gray, &gray, None).is_err());
    }

    #[test]
    fn fuse_endpoints_are_exact() {
        let (a, b) = (random(3, 7, 4), random(4, 7, 4));
        assert_eq!(fuse(&FusionMask::uniform(7, 4, 1.0).unwrap(), &a, &b).unwrap(), a);
        assert_eq!(fuse(&FusionMask::uniform(7, 4, 0.0).unwrap(), &a, &b).unwrap(), b);
        let m = FusionMask::uniform(7, 4, 0.37).unwrap();
        assert_eq!(fuse(&m, &a, &a).unwrap(), a);
    }

    #[test]
    fn mask_validation() {
        assert!(FusionMask::new(2, 2, vec![0.0, 1.0, 0.5, 1.1]).is_err());
        assert!(FusionMask::new(2, 2, vec![0.0; 3]).is_err());
        assert!(half_dims(7, 20).is_err());
        assert_eq!(half_dims(9, 8).unwrap(), (5, 4));
    }

    proptest::proptest! {
        #[test]
        fn fuse_stays_in_envelope(seed in 0u64..1000, weights in proptest::collection::vec(0.0f32..=1.0, 12)) {
            let (a, b) = (random(seed, 3, 4), random(seed + 1, 3, 4));
            let out = fuse(&FusionMask::new(3, 4, weights).unwrap(), &a, &b).unwrap();
            for i in 0..out.data().len() {
                let (p, q) = (a.data()[i], b.data()[i]);
                proptest::prop_assert!(out.data()[i] >= p.min(q) && out.data()[i] <= p.max(q));
            }
        }

        #[test]
        fn warp_error_mask_in_unit_range(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ef = Frame::from_fn(3, 3, 1, |_, _, _| if rng.gen_bool(0.3) { 0.0 } else { rng.gen() }).unwrap();
            let eh = Frame::from_fn(3, 3, 1, |_, _, _| if rng.gen_bool(0.3) { 0.0 } else { rng.gen() }).unwrap();
            let f = random(seed, 3, 3);
            let m = predict_mask(&MaskPredictor::WarpError, &f, &f, Some(WarpErrors { full: &ef, half: &eh })).unwrap();
            proptest::prop_assert!(m.weights().iter().all(|w| (0.0..=1.0).contains(w)));
        }
    }
}
