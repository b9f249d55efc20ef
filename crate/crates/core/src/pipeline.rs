//! End-to-end interpolation: flow estimation, motion prediction, flow
//! reversal, warping, blending, residual refinement and optional two-scale
//! fusion.

use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::estimate::{estimate_flow, estimate_flow_scaled, BlockMatchParams, FlowSource};
use crate::flow_ops::{backward_warp, refine_flow, reverse_flow, VisibilityMask};
use crate::frame::{resample_bilinear, FlowField, Frame};
use crate::fusion::{run_two_scale_detailed, MaskPredictor, TwoScaleOutputs};
use crate::motion::{linear_predict, qvi_flow_at, rectified_flow_at, RqfpParams};
use crate::synthesis::{blend_warped, Rcsn};

/// Four consecutive frames with their time labels, in temporal order of
/// the interpolation: `[before, anchor0, anchor1, after]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameQuad {
    frames: [Frame; 4],
    times: [f64; 4],
}

/// Time labels of a forward quad.
pub const QUAD_TIMES: [f64; 4] = [-1.0, 0.0, 1.0, 2.0];

impl FrameQuad {
    /// Frames at times -1, 0, 1, 2.
    pub fn new(frames: [Frame; 4]) -> Result<Self> {
        Self::with_times(frames, QUAD_TIMES)
    }

    /// `times` label the frames for flow sources that look them up. A frame
    /// repeated at a sequence boundary carries the label of the frame it
    /// repeats, so labels need only be finite with distinct anchors.
    pub fn with_times(frames: [Frame; 4], times: [f64; 4]) -> Result<Self> {
        for f in &frames[1..] {
            if !f.same_shape(&frames[0]) {
                return invalid(format!(
                    "quad frames differ in shape: {:?} vs {:?}",
                    frames[0].dims(),
                    f.dims()
                ));
            }
        }
        if times.iter().any(|t| !t.is_finite()) || times[1] == times[2] {
            return invalid(format!("bad quad times {times:?}"));
        }
        Ok(Self { frames, times })
    }

    /// The same frames in reverse order: anchor 1 becomes anchor 0.
    pub fn reversed(&self) -> Self {
        let [a, b, c, d] = self.frames.clone();
        let [ta, tb, tc, td] = self.times;
        Self {
            frames: [d, c, b, a],
            times: [td, tc, tb, ta],
        }
    }

    /// Bilinearly resized copy with the same time labels.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(4);
        for f in &self.frames {
            out.push(resample_bilinear(f, height, width)?);
        }
        let frames: [Frame; 4] = out.try_into().expect("four frames");
        Ok(Self { frames, times: self.times })
    }

    pub fn frames(&self) -> &[Frame; 4] {
        &self.frames
    }

    pub fn times(&self) -> [f64; 4] {
        self.times
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    /// Time label of the intermediate instant at fraction `t`.
    pub fn time_at(&self, t: f64) -> f64 {
        self.times[1] + t * (self.times[2] - self.times[1])
    }
}

/// Constant-velocity or constant-acceleration flow extrapolation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionModel {
    Linear,
    Quadratic,
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub flow_source: FlowSource,
    pub motion: MotionModel,
    /// Rectified prediction; `None` uses the two-flow quadratic estimate.
    pub rqfp: Option<RqfpParams>,
    pub rcsn: Option<Arc<Rcsn>>,
    pub ms_fusion: Option<MaskPredictor>,
    pub refine: bool,
    pub t_values: Vec<f64>,
}

impl Default for PipelineConfig {
    /// Block matching, rectified quadratic motion, no residual network, no
    /// fusion, no refinement, midpoint only.
    fn default() -> Self {
        Self {
            flow_source: FlowSource::BlockMatch(BlockMatchParams::default()),
            motion: MotionModel::Quadratic,
            rqfp: Some(RqfpParams::default()),
            rcsn: None,
            ms_fusion: None,
            refine: false,
            t_values: vec![0.5],
        }
    }
}

fn validate_t(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        invalid(format!("t={t} outside (0, 1)"))
    }
}

impl PipelineConfig {
    /// The two-flow quadratic baseline with the given flow source.
    pub fn baseline(flow_source: FlowSource) -> Self {
        Self {
            flow_source,
            rqfp: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.flow_source.validate()?;
        if self.t_values.is_empty() {
            return invalid("t_values is empty");
        }
        for &t in &self.t_values {
            validate_t(t)?;
        }
        if self.t_values.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("t_values must be strictly increasing");
        }
        if let Some(p) = &self.ms_fusion {
            p.validate()?;
        }
        Ok(())
    }
}

/// The six input flows of a quad: anchor 0 towards frames -1, 1, 2, and
/// anchor 1 towards 2, 0, -1 (the anchor-0 triple of the reversed quad).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSet {
    pub anchor0: [FlowField; 3],
    pub anchor1: [FlowField; 3],
}

/// Intermediate results of a single-scale synthesis at one `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutputs {
    /// Predicted `f_{0->t}` and `f_{1->t}`.
    pub flow_0t: FlowField,
    pub flow_1t: FlowField,
    /// Reversed (and optionally refined) `f_{t->0}` and `f_{t->1}`.
    pub flow_t0: FlowField,
    pub flow_t1: FlowField,
    pub vis0: VisibilityMask,
    pub vis1: VisibilityMask,
    pub warped0: Frame,
    pub warped1: Frame,
    pub blended: Frame,
    pub output: Frame,
}

/// Full results of one quad: per-`t` single-scale stages, and the fused
/// branches when two-scale fusion is on.
#[derive(Clone, Debug)]
pub enum QuadOutputs {
    Single(Vec<StageOutputs>),
    TwoScale(Vec<TwoScaleOutputs>),
}

impl QuadOutputs {
    pub fn frames(self) -> Vec<Frame> {
        match self {
            QuadOutputs::Single(v) => v.into_iter().map(|s| s.output).collect(),
            QuadOutputs::TwoScale(v) => v.into_iter().map(|s| s.output).collect(),
        }
    }
}

/// Quad indices `(from, to)` of the six flows, in [`FlowSet`] order.
const FLOW_PAIRS: [(usize, usize); 6] = [(1, 0), (1, 2), (1, 3), (2, 3), (2, 1), (2, 0)];

#[derive(Clone, Debug)]
pub struct Pipeline {
    cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    fn collect(flows: Vec<FlowField>) -> FlowSet {
        let mut it = flows.into_iter();
        let mut next = || it.next().expect("six flows");
        FlowSet {
            anchor0: [next(), next(), next()],
            anchor1: [next(), next(), next()],
        }
    }

    /// Estimates the six flows of `quad`.
    pub fn estimate_flows(&self, quad: &FrameQuad) -> Result<FlowSet> {
        let (f, t) = (quad.frames(), quad.times());
        let flows = FLOW_PAIRS
            .iter()
            .map(|&(a, b)| estimate_flow(&self.cfg.flow_source, t[a], t[b], &f[a], &f[b]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::collect(flows))
    }

    /// Estimates the six flows of `scaled`, a resized copy of `full`.
    pub fn estimate_flows_scaled(&self, full: &FrameQuad, scaled: &FrameQuad) -> Result<FlowSet> {
        let (ff, fs, t) = (full.frames(), scaled.frames(), full.times());
        let flows = FLOW_PAIRS
            .iter()
            .map(|&(a, b)| {
                estimate_flow_scaled(&self.cfg.flow_source, t[a], t[b], (&ff[a], &ff[b]), (&fs[a], &fs[b]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::collect(flows))
    }

    /// Flow from the anchor of `triple` (`[to previous, to next, to next+1]`)
    /// to fraction `t` towards the next frame.
    fn predict(&self, triple: &[FlowField; 3], t: f64) -> Result<FlowField> {
        let [f_prev, f_next, f_next2] = triple;
        match (self.cfg.motion, &self.cfg.rqfp) {
            (MotionModel::Linear, _) => Ok(linear_predict(f_next, t as f32)),
            (MotionModel::Quadratic, Some(params)) => rectified_flow_at(f_prev, f_next, f_next2, params, t),
            (MotionModel::Quadratic, None) => qvi_flow_at(f_next, f_prev, t),
        }
    }

    /// Single-scale synthesis of the frame at fraction `t`.
    pub fn synthesize(&self, quad: &FrameQuad, flows: &FlowSet, t: f64) -> Result<StageOutputs> {
        validate_t(t)?;
        let dims = (quad.height(), quad.width());
        if flows.anchor0.iter().chain(&flows.anchor1).any(|f| f.dims() != dims) {
            return invalid("flow set dims differ from the quad");
        }
        let flow_0t = self.predict(&flows.anchor0, t)?;
        let flow_1t = self.predict(&flows.anchor1, 1.0 - t)?;
        let (mut flow_t0, vis0) = reverse_flow(&flow_0t);
        let (mut flow_t1, vis1) = reverse_flow(&flow_1t);
        if self.cfg.refine {
            flow_t0 = refine_flow(&flow_t0);
            flow_t1 = refine_flow(&flow_t1);
        }
        let [_, i0, i1, _] = quad.frames();
        let warped0 = backward_warp(i0, &flow_t0)?;
        let warped1 = backward_warp(i1, &flow_t1)?;
        let blended = blend_warped(&warped0, &warped1, &vis0, &vis1, t as f32)?;
        let output = match &self.cfg.rcsn {
            Some(rcsn) => rcsn.refine(&blended, [i0, i1], [&warped0, &warped1], [&flow_t0, &flow_t1])?,
            None => blended.clamp01(),
        };
        Ok(StageOutputs {
            flow_0t,
            flow_1t,
            flow_t0,
            flow_t1,
            vis0,
            vis1,
            warped0,
            warped1,
            blended,
            output,
        })
    }

    /// Runs every configured `t` on `quad`, estimating flows once.
    pub fn run_quad(&self, quad: &FrameQuad) -> Result<QuadOutputs> {
        self.run_quad_at(quad, &self.cfg.t_values)
    }

    fn run_quad_at(&self, quad: &FrameQuad, t_values: &[f64]) -> Result<QuadOutputs> {
        for &t in t_values {
            validate_t(t)?;
        }
        match &self.cfg.ms_fusion {
            Some(predictor) => Ok(QuadOutputs::TwoScale(run_two_scale_detailed(
                self, quad, t_values, predictor,
            )?)),
            None => {
                let flows = self.estimate_flows(quad)?;
                Ok(QuadOutputs::Single(
                    t_values
                        .iter()
                        .map(|&t| self.synthesize(quad, &flows, t))
                        .collect::<Result<_>>()?,
                ))
            }
        }
    }

    pub fn interpolate_one(&self, quad: &FrameQuad, t: f64) -> Result<Frame> {
        Ok(self.run_quad_at(quad, &[t])?.frames().pop().expect("one frame"))
    }

    /// One frame per configured `t`.
    pub fn interpolate_multi(&self, quad: &FrameQuad) -> Result<Vec<Frame>> {
        Ok(self.run_quad(quad)?.frames())
    }
}

pub fn interpolate_one(quad: &FrameQuad, t: f64, cfg: &PipelineConfig) -> Result<Frame> {
    Pipeline::new(cfg.clone())?.interpolate_one(quad, t)
}

pub fn interpolate_multi(quad: &FrameQuad, cfg: &PipelineConfig) -> Result<Vec<Frame>> {
    Pipeline::new(cfg.clone())?.interpolate_multi(quad)
}
