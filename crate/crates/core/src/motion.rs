//! Linear, quadratic and rectified quadratic flow prediction.
//!
//! All predictors work per pixel and per flow component. Under a constant
//! acceleration model the displacement from the anchor frame is
//! `f(t) = v0 * t + a * t^2 / 2`; sampling it at `t = -1, 1, 2` gives three
//! equations in the two unknowns `(v0, a)`:
//!
//! ```text
//! f(-1) = -v0 + a/2
//! f( 1) =  v0 + a/2
//! f( 2) = 2v0 + 2a
//! ```
//!
//! The two-flow quadratic estimate solves the first two rows exactly. The
//! rectified estimate solves all three in the least-squares sense and blends
//! the two solutions depending on how well the flows agree with the model.

use crate::error::{invalid, Result};
use crate::frame::FlowField;

/// Row `i` of `(A^T A)^{-1} A^T` for the design matrix
/// `A = [[-1, 0.5], [1, 0.5], [2, 2]]`, applied to `(f(-1), f(1), f(2))`.
pub const LS_VELOCITY_COEFFS: [f64; 3] = [-6.5 / 11.0, 2.5 / 11.0, 1.0 / 11.0];
pub const LS_ACCEL_COEFFS: [f64; 3] = [7.0 / 11.0, -1.0 / 11.0, 4.0 / 11.0];

/// Velocity and acceleration fields anchored at one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticMotionField {
    /// Velocity at the anchor frame, pixels per frame.
    pub v0: FlowField,
    /// Acceleration, pixels per frame squared.
    pub a: FlowField,
}

/// Three pairwise acceleration estimates, one per pair of flow equations.
#[derive(Clone, Debug, PartialEq)]
pub struct AccelTriplet {
    pub a1: FlowField,
    pub a2: FlowField,
    pub a3: FlowField,
}

/// Per-pixel flag: true where all three acceleration estimates point the
/// same way.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsistencyMask {
    height: usize,
    width: usize,
    mask: Vec<bool>,
}

impl ConsistencyMask {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Per-pixel, per-component blending weights in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMap {
    height: usize,
    width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl AlphaMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Shape of the weighting curve `alpha(z) = 1/2 - tanh(omega (z - gamma)) / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RqfpParams {
    /// Steepness of the transition.
    pub omega: f64,
    /// Acceleration disagreement at which `alpha = 0.5`.
    pub gamma: f64,
}

impl Default for RqfpParams {
    fn default() -> Self {
        Self {
            omega: 5.0,
            gamma: 1.0,
        }
    }
}

impl RqfpParams {
    pub fn new(omega: f64, gamma: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) || !gamma.is_finite() {
            return invalid(format!("rqfp params need omega > 0 and finite gamma, got omega={omega} gamma={gamma}"));
        }
        Ok(Self { omega, gamma })
    }
}

/// Constant-velocity prediction `f(0 -> t) = t * f(0 -> 1)`.
pub fn linear_predict(f01: &FlowField, t: f32) -> FlowField {
    f01.scale(t)
}

/// Two-flow quadratic estimate: `a = f(1) + f(-1)`, `v0 = (f(1) - f(-1)) / 2`.
pub fn qvi_predict(f01: &FlowField, f0m1: &FlowField) -> Result<QuadraticMotionField> {
    f01.ensure_same_dims(f0m1, "qvi_predict")?;
    Ok(QuadraticMotionField {
        a: f01.zip_map(f0m1, |fwd, bwd| fwd + bwd)?,
        v0: f01.zip_map(f0m1, |fwd, bwd| 0.5 * (fwd - bwd))?,
    })
}

/// Least-squares `(v0, a)` for a single component.
#[inline]
pub fn ls_solve(f0m1: f64, f01: f64, f02: f64) -> (f64, f64) {
    let [p, q, r] = LS_VELOCITY_COEFFS;
    let [s, t, u] = LS_ACCEL_COEFFS;
    (p * f0m1 + q * f01 + r * f02, s * f0m1 + t * f01 + u * f02)
}

fn check_triple(f0m1: &FlowField, f01: &FlowField, f02: &FlowField, what: &str) -> Result<()> {
    f0m1.ensure_same_dims(f01, what)?;
    f0m1.ensure_same_dims(f02, what)
}

/// Least-squares quadratic fit to the three flows `f(-1), f(1), f(2)`.
pub fn ls_predict(
    f0m1: &FlowField,
    f01: &FlowField,
    f02: &FlowField,
) -> Result<QuadraticMotionField> {
    check_triple(f0m1, f01, f02, "ls_predict")?;
    let (h, w) = f01.dims();
    let solve = |a: &[f32], b: &[f32], c: &[f32]| -> (Vec<f32>, Vec<f32>) {
        a.iter()
            .zip(b)
            .zip(c)
            .map(|((&m1, &p1), &p2)| {
                let (v, acc) = ls_solve(m1 as f64, p1 as f64, p2 as f64);
                (v as f32, acc as f32)
            })
            .unzip()
    };
    let (vu, au) = solve(f0m1.u(), f01.u(), f02.u());
    let (vv, av) = solve(f0m1.v(), f01.v(), f02.v());
    Ok(QuadraticMotionField {
        v0: FlowField::from_raw(h, w, vu, vv),
        a: FlowField::from_raw(h, w, au, av),
    })
}

/// Accelerations implied by each pair of flow equations:
/// `a1 = f(-1) + f(1)`, `a2 = (2 f(-1) + f(2)) / 3`, `a3 = f(2) - 2 f(1)`.
pub fn accel_triplet(f0m1: &FlowField, f01: &FlowField, f02: &FlowField) -> Result<AccelTriplet> {
    check_triple(f0m1, f01, f02, "accel_triplet")?;
    let (h, w) = f01.dims();
    let a2 = |m: &[f32], p2: &[f32]| -> Vec<f32> {
        m.iter()
            .zip(p2)
            .map(|(&m1, &p2)| ((2.0 * m1 as f64 + p2 as f64) / 3.0) as f32)
            .collect()
    };
    Ok(AccelTriplet {
        a1: f0m1.zip_map(f01, |m1, p1| m1 + p1)?,
        a2: FlowField::from_raw(h, w, a2(f0m1.u(), f02.u()), a2(f0m1.v(), f02.v())),
        a3: f02.zip_map(f01, |p2, p1| p2 - 2.0 * p1)?,
    })
}

/// True where every pairwise dot product of the three accelerations is
/// strictly positive.
pub fn direction_gate(t: &AccelTriplet) -> ConsistencyMask {
    let (h, w) = t.a1.dims();
    let dot = |a: &FlowField, b: &FlowField, i: usize| -> f64 {
        a.u()[i] as f64 * b.u()[i] as f64 + a.v()[i] as f64 * b.v()[i] as f64
    };
    let mask = (0..h * w)
        .map(|i| dot(&t.a1, &t.a2, i) > 0.0 && dot(&t.a1, &t.a3, i) > 0.0 && dot(&t.a2, &t.a3, i) > 0.0)
        .collect();
    ConsistencyMask {
        height: h,
        width: w,
        mask,
    }
}

/// `alpha(z) = -tanh(omega (z - gamma)) / 2 + 1/2`.
///
/// Evaluated as the equivalent logistic `1 / (1 + exp(2 omega (z - gamma)))`,
/// which stays representable far into the tail, and kept strictly inside
/// `(0, 1)`.
pub fn alpha_weight(z: f64, params: &RqfpParams) -> f64 {
    let s = 2.0 * params.omega * (z - params.gamma);
    let alpha = 1.0 / (1.0 + s.exp());
    alpha.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Weights from the componentwise disagreement `z = |a1 - a2|`.
pub fn alpha_map(t: &AccelTriplet, params: &RqfpParams) -> AlphaMap {
    let (h, w) = t.a1.dims();
    let weights = |a1: &[f32], a2: &[f32]| -> Vec<f64> {
        a1.iter()
            .zip(a2)
            .map(|(&x, &y)| alpha_weight((x as f64 - y as f64).abs(), params))
            .collect()
    };
    AlphaMap {
        height: h,
        width: w,
        u: weights(t.a1.u(), t.a2.u()),
        v: weights(t.a1.v(), t.a2.v()),
    }
}

/// Per-pixel `(v0, a)` of the rectified estimate for the `u` and `v`
/// components, in f64.
fn rectified_coeffs(
    f0m1: &FlowField,
    f01: &FlowField,
    f02: &FlowField,
    params: &RqfpParams,
) -> Result<[Vec<(f64, f64)>; 2]> {
    check_triple(f0m1, f01, f02, "rectified_predict")?;
    let triplet = accel_triplet(f0m1, f01, f02)?;
    let gate = direction_gate(&triplet);
    let alpha = alpha_map(&triplet, params);
    let blend = |m1: &[f32], p1: &[f32], p2: &[f32], weights: &[f64]| -> Vec<(f64, f64)> {
        (0..m1.len())
            .map(|i| {
                let (m, p, q) = (m1[i] as f64, p1[i] as f64, p2[i] as f64);
                let (qv, qa) = (0.5 * (p - m), p + m);
                if !gate.as_slice()[i] {
                    return (qv, qa);
                }
                let (lv, la) = ls_solve(m, p, q);
                let wt = weights[i];
                (wt * lv + (1.0 - wt) * qv, wt * la + (1.0 - wt) * qa)
            })
            .collect()
    };
    Ok([
        blend(f0m1.u(), f01.u(), f02.u(), &alpha.u),
        blend(f0m1.v(), f01.v(), f02.v(), &alpha.v),
    ])
}

/// Rectified prediction: the two-flow estimate where the acceleration
/// directions disagree, otherwise an `alpha`-weighted blend of the
/// least-squares and two-flow estimates.
pub fn rectified_predict(
    f0m1: &FlowField,
    f01: &FlowField,
    f02: &FlowField,
    params: &RqfpParams,
) -> Result<QuadraticMotionField> {
    let [cu, cv] = rectified_coeffs(f0m1, f01, f02, params)?;
    let (h, w) = f01.dims();
    let (vu, au): (Vec<f32>, Vec<f32>) = cu.iter().map(|&(v, a)| (v as f32, a as f32)).unzip();
    let (vv, av): (Vec<f32>, Vec<f32>) = cv.iter().map(|&(v, a)| (v as f32, a as f32)).unzip();
    Ok(QuadraticMotionField {
        v0: FlowField::from_raw(h, w, vu, vv),
        a: FlowField::from_raw(h, w, au, av),
    })
}

fn eval_coeffs(h: usize, w: usize, [cu, cv]: [Vec<(f64, f64)>; 2], t: f64) -> FlowField {
    let at = |c: Vec<(f64, f64)>| -> Vec<f32> {
        c.into_iter().map(|(v, a)| (0.5 * t * t * a + t * v) as f32).collect()
    };
    FlowField::from_raw(h, w, at(cu), at(cv))
}

/// `eval_flow_at(rectified_predict(..), t)` with a single rounding per value.
pub fn rectified_flow_at(
    f0m1: &FlowField,
    f01: &FlowField,
    f02: &FlowField,
    params: &RqfpParams,
    t: f64,
) -> Result<FlowField> {
    let (h, w) = f01.dims();
    Ok(eval_coeffs(h, w, rectified_coeffs(f0m1, f01, f02, params)?, t))
}

/// `eval_flow_at(qvi_predict(..), t)` with a single rounding per value.
pub fn qvi_flow_at(f01: &FlowField, f0m1: &FlowField, t: f64) -> Result<FlowField> {
    f01.ensure_same_dims(f0m1, "qvi_predict")?;
    let (h, w) = f01.dims();
    let coeffs = |p1: &[f32], m1: &[f32]| -> Vec<(f64, f64)> {
        p1.iter()
            .zip(m1)
            .map(|(&p, &m)| (0.5 * (p as f64 - m as f64), p as f64 + m as f64))
            .collect()
    };
    Ok(eval_coeffs(h, w, [coeffs(f01.u(), f0m1.u()), coeffs(f01.v(), f0m1.v())], t))
}

/// Displacement at time `t`: `a t^2 / 2 + v0 t`.
pub fn eval_flow_at(m: &QuadraticMotionField, t: f32) -> FlowField {
    let half_t2 = 0.5 * t * t;
    m.a
        .zip_map(&m.v0, |a, v| half_t2 * a + t * v)
        .expect("motion field components share dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(du: f32, dv: f32) -> FlowField {
        FlowField::constant(3, 4, du, dv)
    }

    fn assert_const(f: &FlowField, du: f32, dv: f32, tol: f32) {
        for (&u, &v) in f.u().iter().zip(f.v()) {
            assert!((u - du).abs() <= tol && (v - dv).abs() <= tol, "({u},{v}) vs ({du},{dv})");
        }
    }

    #[test]
    fn linear_examples() {
        assert_const(&linear_predict(&c(3.0, 1.0), 0.0), 0.0, 0.0, 0.0);
        assert_const(&linear_predict(&c(3.0, 1.0), 1.0), 3.0, 1.0, 0.0);
        assert_const(&linear_predict(&c(3.0, 0.0), 0.5), 1.5, 0.0, 0.0);
    }

    #[test]
    fn qvi_examples() {
        let m = qvi_predict(&c(3.0, 0.0), &c(-1.0, 0.0)).unwrap();
        assert_const(&m.a, 2.0, 0.0, 0.0);
        assert_const(&m.v0, 2.0, 0.0, 0.0);
        let m = qvi_predict(&c(0.0, 0.0), &c(0.0, 0.0)).unwrap();
        assert_const(&m.a, 0.0, 0.0, 0.0);
        let m = qvi_predict(&c(1.0, 1.0), &c(-1.0, -1.0)).unwrap();
        assert_const(&m.a, 0.0, 0.0, 0.0);
        assert_const(&m.v0, 1.0, 1.0, 0.0);
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let small = FlowField::zeros(2, 2);
        assert!(qvi_predict(&c(0.0, 0.0), &small).is_err());
        assert!(ls_predict(&c(0.0, 0.0), &c(0.0, 0.0), &small).is_err());
        assert!(accel_triplet(&small, &c(0.0, 0.0), &c(0.0, 0.0)).is_err());
        assert!(rectified_predict(&small, &c(0.0, 0.0), &c(0.0, 0.0), &RqfpParams::default()).is_err());
    }

    #[test]
    fn ls_examples() {
        let m = ls_predict(&c(-1.5, 0.0), &c(2.5, 0.0), &c(6.0, 0.0)).unwrap();
        assert_const(&m.v0, 2.0, 0.0, 1e-6);
        assert_const(&m.a, 1.0, 0.0, 1e-6);
        let m = ls_predict(&c(0.0, 0.0), &c(0.0, 0.0), &c(0.0, 0.0)).unwrap();
        assert_const(&m.v0, 0.0, 0.0, 0.0);
        let m = ls_predict(&c(-1.0, 0.0), &c(1.0, 0.0), &c(2.0, 0.0)).unwrap();
        assert_const(&m.v0, 1.0, 0.0, 1e-6);
        assert_const(&m.a, 0.0, 0.0, 1e-6);
    }

    #[test]
    fn triplet_examples() {
        let t = accel_triplet(&c(-1.5, 0.0), &c(2.5, 0.0), &c(6.0, 0.0)).unwrap();
        for a in [&t.a1, &t.a2, &t.a3] {
            assert_const(a, 1.0, 0.0, 1e-6);
        }
        // f(t) = t^3
        let t = accel_triplet(&c(-1.0, 0.0), &c(1.0, 0.0), &c(8.0, 0.0)).unwrap();
        assert_const(&t.a1, 0.0, 0.0, 1e-6);
        assert_const(&t.a2, 2.0, 0.0, 1e-6);
        assert_const(&t.a3, 6.0, 0.0, 1e-6);
    }

    #[test]
    fn gate_examples() {
        let trip = |a1: (f32, f32), a2: (f32, f32), a3: (f32, f32)| AccelTriplet {
            a1: FlowField::constant(1, 1, a1.0, a1.1),
            a2: FlowField::constant(1, 1, a2.0, a2.1),
            a3: FlowField::constant(1, 1, a3.0, a3.1),
        };
        assert!(direction_gate(&trip((1.0, 0.0), (1.0, 0.0), (1.0, 0.0))).get(0, 0));
        assert!(!direction_gate(&trip((1.0, 0.0), (-1.0, 0.0), (1.0, 0.0))).get(0, 0));
        assert!(!direction_gate(&trip((0.0, 0.0), (1.0, 0.0), (1.0, 0.0))).get(0, 0));
        assert!(!direction_gate(&trip((1.0, 1.0), (1.0, 1.0), (0.0, 0.0))).get(0, 0));
    }

    #[test]
    fn alpha_examples() {
        let p = RqfpParams::default();
        assert_eq!(alpha_weight(1.0, &p), 0.5);
        let at0 = (1.0 + 5f64.tanh()) / 2.0;
        assert!((alpha_weight(0.0, &p) - at0).abs() < 1e-12);
        assert!((alpha_weight(0.0, &p) - 0.9999546).abs() < 1e-7);
        let at2 = (1.0 - 5f64.tanh()) / 2.0;
        assert!((alpha_weight(2.0, &p) - at2).abs() < 1e-12);
        assert!((alpha_weight(2.0, &p) - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn rqfp_params_validate() {
        assert!(RqfpParams::new(0.0, 1.0).is_err());
        assert!(RqfpParams::new(-1.0, 1.0).is_err());
        assert!(RqfpParams::new(5.0, f64::NAN).is_err());
        assert!(RqfpParams::new(5.0, 1.0).is_ok());
    }

    #[test]
    fn rectified_examples() {
        let p = RqfpParams::default();
        // v = 2, a = 1: exact quadratic data.
        let m = rectified_predict(&c(-1.5, 0.0), &c(2.5, 0.0), &c(6.0, 0.0), &p).unwrap();
        assert_const(&m.v0, 2.0, 0.0, 1e-4);
        assert_const(&m.a, 1.0, 0.0, 1e-4);

        // a1 = (1,0), a2 = (-1,0): gate closed, two-flow estimate returned bitwise.
        let (fm1, f1, f2) = (c(-0.5, 0.0), c(1.5, 0.0), c(-3.5, 0.0));
        let m = rectified_predict(&fm1, &f1, &f2, &p).unwrap();
        assert_eq!(m, qvi_predict(&f1, &fm1).unwrap());

        // Cubic with jerk 6 on u: a1 = 0.5, a2 = 2.5 (z = 2), a3 = 6.5, same direction.
        let cubic = |t: f32| 1.0 * t + 0.25 * t * t + t * t * t;
        let (fm1, f1, f2) = (c(cubic(-1.0), 0.0), c(cubic(1.0), 0.0), c(cubic(2.0), 0.0));
        let trip = accel_triplet(&fm1, &f1, &f2).unwrap();
        assert!(direction_gate(&trip).get(0, 0));
        let m = rectified_predict(&fm1, &f1, &f2, &p).unwrap();
        let q = qvi_predict(&f1, &fm1).unwrap();
        for (x, y) in m.v0.u().iter().zip(q.v0.u()).chain(m.a.u().iter().zip(q.a.u())) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_examples() {
        let m = QuadraticMotionField {
            v0: c(2.0, 0.0),
            a: c(2.0, 0.0),
        };
        assert_const(&eval_flow_at(&m, 0.0), 0.0, 0.0, 0.0);
        assert_const(&eval_flow_at(&m, 0.5), 1.25, 0.0, 0.0);
        let m = qvi_predict(&c(2.5, 1.0), &c(-1.5, -1.0)).unwrap();
        assert_const(&eval_flow_at(&m, 1.0), 2.5, 1.0, 1e-6);
    }

    proptest! {
        #[test]
        fn direct_evaluation_matches_stored_coefficients(
            m in -30.0f32..30.0, p in -30.0f32..30.0, q in -30.0f32..30.0, t in 0.0f64..=1.0,
        ) {
            let (fm1, f1, f2) = (c(m, -p), c(p, q), c(q, m));
            let params = RqfpParams::default();
            let direct = rectified_flow_at(&fm1, &f1, &f2, &params, t).unwrap();
            let stored = eval_flow_at(&rectified_predict(&fm1, &f1, &f2, &params).unwrap(), t as f32);
            let (du, dv) = direct.at(1, 2);
            let (su, sv) = stored.at(1, 2);
            prop_assert!((du - su).abs() < 1e-4 && (dv - sv).abs() < 1e-4);
            let direct = qvi_flow_at(&f1, &fm1, t).unwrap();
            let stored = eval_flow_at(&qvi_predict(&f1, &fm1).unwrap(), t as f32);
            prop_assert!((direct.at(0, 0).0 - stored.at(0, 0).0).abs() < 1e-4);
        }

        #[test]
        fn ls_recovers_quadratic_scalar(v in -20.0f64..20.0, a in -20.0f64..20.0) {
            let (vs, as_) = ls_solve(-v + a / 2.0, v + a / 2.0, 2.0 * v + 2.0 * a);
            prop_assert!((vs - v).abs() < 1e-12 && (as_ - a).abs() < 1e-12);
        }

        #[test]
        fn alpha_bounded_and_decreasing(z in 0.0f64..50.0, dz in 1e-6f64..1.0) {
            let p = RqfpParams::default();
            let (lo, hi) = (alpha_weight(z + dz, &p), alpha_weight(z, &p));
            prop_assert!(lo > 0.0 && hi < 1.0);
            prop_assert!(lo < hi);
        }

        #[test]
        fn linear_is_zero_acceleration_quadratic(u in -10.0f32..10.0, v in -10.0f32..10.0, t in 0.0f32..=1.0) {
            let f01 = c(u, v);
            let lin = linear_predict(&f01, t);
            let quad = eval_flow_at(&qvi_predict(&f01, &f01.negate()).unwrap(), t);
            for (x, y) in lin.u().iter().zip(quad.u()).chain(lin.v().iter().zip(quad.v())) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }
}
