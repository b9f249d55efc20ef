//! Analytic sprite scenes: textured squares moving along polynomial
//! trajectories over a static background.
//!
//! A sprite's top-left corner follows
//! `p(t) = p0 + v t + a t^2 / 2 + jerk t^3 / 6`, so every frame and every
//! flow between two instants is known exactly. Textures are smooth value
//! noise evaluated in continuous sprite-local coordinates, which makes
//! subpixel placement exact rather than resampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::frame::{FlowField, Frame};

/// Times at which sprites must stay inside the canvas and apart.
pub const SCENE_TIME_RANGE: (f64, f64) = (-1.0, 2.0);
const CONTAINMENT_SAMPLES: usize = 301;
const OVERLAP_SAMPLES: usize = 61;
const OVERLAP_MARGIN: f64 = 2.0;
/// Lattice spacing of sprite textures, pixels.
const SPRITE_TEXTURE_CELL: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Background {
    Constant(f32),
    /// Static value noise with the given lattice spacing in pixels.
    Noise { seed: u64, cell: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sprite {
    /// Top-left corner `(x, y)` at `t = 0`, pixels.
    pub p0: [f64; 2],
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
    pub jerk: [f64; 2],
    /// Side length, pixels.
    pub size: usize,
    pub texture_seed: u64,
}

impl Sprite {
    pub fn position(&self, t: f64) -> [f64; 2] {
        let at = |i: usize| {
            self.p0[i]
                + self.velocity[i] * t
                + 0.5 * self.acceleration[i] * t * t
                + self.jerk[i] * t * t * t / 6.0
        };
        [at(0), at(1)]
    }

    /// Texture value at sprite-local continuous coordinates.
    fn texture(&self, lx: f64, ly: f64, channel: usize) -> f32 {
        value_noise(self.texture_seed, channel as u64, lx, ly, SPRITE_TEXTURE_CELL)
    }
}

/// Motion class of generated scenes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneClass {
    /// Constant velocity.
    Linear,
    /// Constant acceleration.
    Quadratic,
    /// Non-zero jerk, violating the constant-acceleration model.
    Jerk,
}

impl SceneClass {
    pub fn name(self) -> &'static str {
        match self {
            SceneClass::Linear => "linear",
            SceneClass::Quadratic => "quadratic",
            SceneClass::Jerk => "jerk",
        }
    }
}

impl std::str::FromStr for SceneClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(SceneClass::Linear),
            "quadratic" => Ok(SceneClass::Quadratic),
            "jerk" => Ok(SceneClass::Jerk),
            other => invalid(format!("unknown scene class '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpriteScene {
    height: usize,
    width: usize,
    channels: usize,
    background: Background,
    sprites: Vec<Sprite>,
}

fn sample_times(n: usize) -> impl Iterator<Item = f64> {
    let (lo, hi) = SCENE_TIME_RANGE;
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

impl SpriteScene {
    /// Validates that every sprite stays inside the canvas over the scene's
    /// time range and that sprites never come within two pixels of each other
    /// at the sampled times.
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        background: Background,
        sprites: Vec<Sprite>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return invalid(format!("bad canvas {height}x{width}x{channels}"));
        }
        if let Background::Constant(c) = background {
            if !(0.0..=1.0).contains(&c) {
                return invalid("constant background must lie in [0, 1]");
            }
        }
        if let Background::Noise { cell, .. } = background {
            if !(cell > 0.0 && cell.is_finite()) {
                return invalid("noise cell must be positive");
            }
        }
        for (i, s) in sprites.iter().enumerate() {
            let finite = s
                .p0
                .iter()
                .chain(&s.velocity)
                .chain(&s.acceleration)
                .chain(&s.jerk)
                .all(|x| x.is_finite());
            if !finite || s.size == 0 {
                return invalid(format!("sprite {i} has non-finite parameters or zero size"));
            }
            let max_x = (width - s.size) as f64;
            let max_y = (height - s.size) as f64;
            if s.size > width.min(height) {
                return invalid(format!("sprite {i} larger than canvas"));
            }
            for t in sample_times(CONTAINMENT_SAMPLES) {
                let [x, y] = s.position(t);
                if x < 0.0 || y < 0.0 || x > max_x || y > max_y {
                    return invalid(format!("sprite {i} leaves the canvas at t={t:.2}"));
                }
            }
        }
        for t in sample_times(OVERLAP_SAMPLES) {
            for i in 0..sprites.len() {
                for j in i + 1..sprites.len() {
                    if boxes_touch(&sprites[i], &sprites[j], t) {
                        return invalid(format!("sprites {i} and {j} overlap at t={t:.2}"));
                    }
                }
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            background,
            sprites,
        })
    }

    /// Draws a random scene of the requested motion class.
    pub fn random(
        seed: u64,
        class: SceneClass,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let background = if rng.gen_bool(0.5) {
            Background::Constant(rng.gen_range(0.1..0.9))
        } else {
            Background::Noise {
                seed: rng.gen(),
                cell: 6.0,
            }
        };
        for _ in 0..2000 {
            let count = rng.gen_range(1..=2usize);
            let mut sprites = Vec::with_capacity(count);
            for _ in 0..count {
                sprites.push(random_sprite(&mut rng, class, height, width));
            }
            if let Ok(scene) = Self::new(height, width, channels, background, sprites) {
                return Ok(scene);
            }
        }
        invalid(format!(
            "could not place sprites on a {height}x{width} canvas for seed {seed}"
        ))
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

    pub fn background(&self) -> Background {
        self.background
    }

    pub fn sprites(&self) -> &[Sprite] {
        &self.sprites
    }

    fn background_at(&self, y: usize, x: usize, c: usize) -> f32 {
        match self.background {
            Background::Constant(v) => v,
            Background::Noise { seed, cell } => value_noise(seed, c as u64, x as f64, y as f64, cell),
        }
    }

    /// Index of the topmost sprite whose square contains the pixel center.
    pub fn sprite_at(&self, t: f64, y: usize, x: usize) -> Option<usize> {
        self.sprites.iter().enumerate().rev().find_map(|(i, s)| {
            let [px, py] = s.position(t);
            let (lx, ly) = (x as f64 - px, y as f64 - py);
            let half = 0.5;
            let inside = |l: f64| l >= -half && l < s.size as f64 - half;
            (inside(lx) && inside(ly)).then_some(i)
        })
    }

    /// Pixels at least `erode` pixels inside some sprite at time `t`.
    pub fn sprite_mask(&self, t: f64, erode: usize) -> Vec<bool> {
        let mut mask = vec![false; self.height * self.width];
        for y in 0..self.height {
            for x in 0..self.width {
                if let Some(i) = self.sprite_at(t, y, x) {
                    let s = &self.sprites[i];
                    let [px, py] = s.position(t);
                    let lo = erode as f64 - 0.5;
                    let hi = s.size as f64 - 0.5 - erode as f64;
                    let (lx, ly) = (x as f64 - px, y as f64 - py);
                    mask[y * self.width + x] = lx >= lo && lx < hi && ly >= lo && ly < hi;
                }
            }
        }
        mask
    }

    /// Renders the scene at time `t` with area-weighted sprite edges.
    pub fn render_at(&self, t: f64) -> Result<Frame> {
        if !t.is_finite() {
            return invalid("render time must be finite");
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(self.height * self.width * c);
        for y in 0..self.height {
            for x in 0..self.width {
                for ch in 0..c {
                    data.push(self.background_at(y, x, ch));
                }
            }
        }
        for (i, s) in self.sprites.iter().enumerate() {
            let [px, py] = s.position(t);
            let size = s.size as f64;
            if px < -0.5 || py < -0.5 || px + size > self.width as f64 + 0.5 || py + size > self.height as f64 + 0.5 {
                return invalid(format!("sprite {i} is outside the canvas at t={t}"));
            }
            let x_lo = (px - 1.0).floor().max(0.0) as usize;
            let y_lo = (py - 1.0).floor().max(0.0) as usize;
            let x_hi = ((px + size + 1.0).ceil() as usize).min(self.width);
            let y_hi = ((py + size + 1.0).ceil() as usize).min(self.height);
            for y in y_lo..y_hi {
                let cov_y = coverage(y as f64, py, size);
                if cov_y <= 0.0 {
                    continue;
                }
                let ly = (y as f64 - py).clamp(-0.5, size - 0.5);
                for x in x_lo..x_hi {
                    let cov = cov_y * coverage(x as f64, px, size);
                    if cov <= 0.0 {
                        continue;
                    }
                    let lx = (x as f64 - px).clamp(-0.5, size - 0.5);
                    for ch in 0..c {
                        let idx = (y * self.width + x) * c + ch;
                        let tex = s.texture(lx, ly, ch) as f64;
                        data[idx] = (cov * tex + (1.0 - cov) * data[idx] as f64) as f32;
                    }
                }
            }
        }
        Frame::new(self.height, self.width, c, data)
    }

    /// Exact displacement from `t0` to `t1` for pixels inside a sprite at
    /// `t0`; zero on the background.
    pub fn analytic_flow(&self, t0: f64, t1: f64) -> FlowField {
        let mut u = vec![0.0f32; self.height * self.width];
        let mut v = vec![0.0f32; self.height * self.width];
        let shifts: Vec<[f64; 2]> = self
            .sprites
            .iter()
            .map(|s| {
                let (a, b) = (s.position(t0), s.position(t1));
                [b[0] - a[0], b[1] - a[1]]
            })
            .collect();
        for y in 0..self.height {
            for x in 0..self.width {
                if let Some(i) = self.sprite_at(t0, y, x) {
                    u[y * self.width + x] = shifts[i][0] as f32;
                    v[y * self.width + x] = shifts[i][1] as f32;
                }
            }
        }
        FlowField::from_raw(self.height, self.width, u, v)
    }
}

/// Fraction of the unit pixel centred at `p` covered by `[start - 0.5, start + size - 0.5]`.
fn coverage(p: f64, start: f64, size: f64) -> f64 {
    let lo = (p - 0.5).max(start - 0.5);
    let hi = (p + 0.5).min(start + size - 0.5);
    (hi - lo).clamp(0.0, 1.0)
}

fn boxes_touch(a: &Sprite, b: &Sprite, t: f64) -> bool {
    let (pa, pb) = (a.position(t), b.position(t));
    (0..2).all(|i| {
        pa[i] < pb[i] + b.size as f64 + OVERLAP_MARGIN && pb[i] < pa[i] + a.size as f64 + OVERLAP_MARGIN
    })
}

fn random_sprite(rng: &mut ChaCha8Rng, class: SceneClass, height: usize, width: usize) -> Sprite {
    let size = rng.gen_range(12..=18usize).min(height.min(width));
    let mut uniform2 = |lo: f64, hi: f64| [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)];
    let (velocity, acceleration, jerk) = match class {
        SceneClass::Linear => (uniform2(-3.0, 3.0), [0.0; 2], [0.0; 2]),
        SceneClass::Quadratic => {
            let v = uniform2(-2.5, 2.5);
            let mag = rng.gen_range(4.0..=8.0);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            (v, [mag * angle.cos(), mag * angle.sin()], [0.0; 2])
        }
        SceneClass::Jerk => {
            let v = uniform2(-1.5, 1.5);
            let a = uniform2(-2.0, 2.0);
            let mut j = [0.0; 2];
            for ji in &mut j {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                *ji = sign * rng.gen_range(9.0..=12.0);
            }
            (v, a, j)
        }
    };
    let p0 = [
        rng.gen_range(0.0..=(width - size) as f64),
        rng.gen_range(0.0..=(height - size) as f64),
    ];
    Sprite {
        p0,
        velocity,
        acceleration,
        jerk,
        size,
        texture_seed: rng.gen(),
    }
}

fn hash3(seed: u64, a: i64, b: i64) -> u64 {
    let mut z = seed
        ^ (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, channel: u64, ix: i64, iy: i64) -> f64 {
    let h = hash3(seed.wrapping_add(channel.wrapping_mul(0x2545_F491_4F6C_DD1D)), ix, iy);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[0, 1]`: random lattice values every `cell`
/// pixels, blended with a smoothstep.
pub fn value_noise(seed: u64, channel: u64, x: f64, y: f64, cell: f64) -> f32 {
    let (gx, gy) = (x / cell, y / cell);
    let (ix, iy) = (gx.floor(), gy.floor());
    let smooth = |f: f64| f * f * (3.0 - 2.0 * f);
    let (fx, fy) = (smooth(gx - ix), smooth(gy - iy));
    let (ix, iy) = (ix as i64, iy as i64);
    let l = |dx: i64, dy: i64| lattice(seed, channel, ix + dx, iy + dy);
    let top = l(0, 0) * (1.0 - fx) + l(1, 0) * fx;
    let bottom = l(0, 1) * (1.0 - fx) + l(1, 1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sprite(p0: [f64; 2], v: [f64; 2], a: [f64; 2]) -> Sprite {
        Sprite {
            p0,
            velocity: v,
            acceleration: a,
            jerk: [0.0; 2],
            size: 10,
            texture_seed: 7,
        }
    }

    #[test]
    fn static_scene_renders_identically() {
        let s = SpriteScene::new(40, 40, 3, Background::Constant(0.2), vec![sprite([10.0, 12.0], [0.0; 2], [0.0; 2])]).unwrap();
        let f0 = s.render_at(0.0).unwrap();
        for t in [-1.0, 0.3, 1.0, 2.0] {
            assert_eq!(s.render_at(t).unwrap(), f0);
        }
    }

    #[test]
    fn velocity_sprite_moves_by_v() {
        let s = SpriteScene::new(40, 48, 1, Background::Constant(0.0), vec![sprite([10.0, 10.0], [3.0, 2.0], [0.0; 2])]).unwrap();
        let (a, b) = (s.render_at(0.0).unwrap(), s.render_at(1.0).unwrap());
        for y in 10..20 {
            for x in 10..20 {
                assert_eq!(a.at(y, x, 0), b.at(y + 2, x + 3, 0));
            }
        }
    }

    #[test]
    fn quadratic_trajectory_positions() {
        let s = sprite([20.0, 20.0], [2.0, -1.0], [1.0, 0.5]);
        for t in [-1.0, 0.0, 1.0, 2.0] {
            let p = s.position(t);
            assert_eq!(p[0], 20.0 + 2.0 * t + 0.5 * t * t);
            assert_eq!(p[1], 20.0 - t + 0.25 * t * t);
        }
    }

    #[test]
    fn analytic_flow_examples() {
        let s = SpriteScene::new(40, 40, 1, Background::Constant(0.5), vec![sprite([10.0, 10.0], [2.0, 0.0], [2.0, 0.0])]).unwrap();
        assert!(s.analytic_flow(0.5, 0.5).u().iter().all(|&x| x == 0.0));
        let f = s.analytic_flow(0.0, 0.5);
        assert_eq!(f.at(12, 12), (1.25, 0.0));
        assert_eq!(f.at(2, 2), (0.0, 0.0));
        let lin = SpriteScene::new(40, 40, 1, Background::Constant(0.5), vec![sprite([10.0, 10.0], [2.0, 1.0], [0.0; 2])]).unwrap();
        assert_eq!(lin.analytic_flow(0.0, 1.0).at(15, 15), (2.0, 1.0));
    }

    #[test]
    fn rejects_out_of_canvas_and_overlap() {
        let out = SpriteScene::new(30, 30, 1, Background::Constant(0.0), vec![sprite([15.0, 5.0], [5.0, 0.0], [0.0; 2])]);
        assert!(out.is_err());
        let overlap = SpriteScene::new(
            60,
            60,
            1,
            Background::Constant(0.0),
            vec![sprite([10.0, 10.0], [0.0; 2], [0.0; 2]), sprite([15.0, 15.0], [0.0; 2], [0.0; 2])],
        );
        assert!(overlap.is_err());
    }

    #[test]
    fn random_scene_is_deterministic() {
        let a = SpriteScene::random(11, SceneClass::Jerk, 64, 80, 3).unwrap();
        let b = SpriteScene::random(11, SceneClass::Jerk, 64, 80, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.render_at(0.5).unwrap(), b.render_at(0.5).unwrap());
        for s in a.sprites() {
            assert!(s.jerk.iter().all(|j| j.abs() >= 9.0));
        }
    }

    #[test]
    fn noise_is_in_unit_range_and_continuous() {
        for i in 0..500 {
            let x = i as f64 * 0.173;
            let v = value_noise(3, 0, x, x * 0.7, 4.0);
            assert!((0.0..=1.0).contains(&v));
            let dv = (value_noise(3, 0, x + 1e-4, x * 0.7, 4.0) - v).abs();
            assert!(dv < 1e-3);
        }
    }
}
