//! Synthetic datasets: rendered frame quads, ground-truth intermediate frames
//! and exact flows, with `key=value` manifests that reproduce each scene.
//!
//! Layout per sequence `seq_NNNN/`: `frame_t{-1,0,1,2}.png`,
//! `gt_t{0.25,0.5,0.75}.png`, `flow_{from}_{to}.flo` and `manifest.txt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{format_err, invalid, Error, Result};
use crate::estimate::format_label;
use crate::flo::save_flo;
use crate::pipeline::QUAD_TIMES;
use crate::scene::{Background, SceneClass, Sprite, SpriteScene};

/// Times of the ground-truth intermediate frames.
pub const GT_TIMES: [f64; 3] = [0.25, 0.5, 0.75];
pub const MANIFEST_NAME: &str = "manifest.txt";
/// Longest manifest accepted by the parser.
const MAX_MANIFEST_LEN: usize = 1 << 20;

/// Ordered `key=value` pairs. Blank lines and `#` comments are skipped;
/// keys are unique.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        if text.len() > MAX_MANIFEST_LEN {
            return format_err("manifest too long");
        }
        let mut out = Manifest::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return format_err(format!("manifest line {}: expected key=value", n + 1));
            };
            let key = key.trim();
            if key.is_empty() {
                return format_err(format!("manifest line {}: empty key", n + 1));
            }
            if out.get(key).is_some() {
                return format_err(format!("manifest line {}: duplicate key '{key}'", n + 1));
            }
            out.entries.push((key.to_string(), value.trim().to_string()));
        }
        Ok(out)
    }

    pub fn parse_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("manifest is not UTF-8: {e}")))?;
        Self::parse(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_bytes(&std::fs::read(path.as_ref())?)
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Format(format!("manifest is missing '{key}'")))
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("manifest key '{key}': cannot parse '{raw}'")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

fn pair(v: [f64; 2]) -> String {
    format!("{} {}", v[0], v[1])
}

fn parse_pair(m: &Manifest, key: &str) -> Result<[f64; 2]> {
    let raw = m.require(key)?;
    let parts: Vec<&str> = raw.split_whitespace().collect();
    let bad = || Error::Format(format!("manifest key '{key}': expected two numbers, got '{raw}'"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let x: f64 = parts[0].parse().map_err(|_| bad())?;
    let y: f64 = parts[1].parse().map_err(|_| bad())?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(bad());
    }
    Ok([x, y])
}

/// Writes the scene parameters into `m`.
pub fn scene_to_manifest(scene: &SpriteScene, m: &mut Manifest) {
    m.insert("height", scene.height());
    m.insert("width", scene.width());
    m.insert("channels", scene.channels());
    m.insert(
        "background",
        match scene.background() {
            Background::Constant(c) => format!("constant {c}"),
            Background::Noise { seed, cell } => format!("noise {seed} {cell}"),
        },
    );
    m.insert("sprites", scene.sprites().len());
    for (i, s) in scene.sprites().iter().enumerate() {
        m.insert(format!("sprite{i}.p0"), pair(s.p0));
        m.insert(format!("sprite{i}.velocity"), pair(s.velocity));
        m.insert(format!("sprite{i}.acceleration"), pair(s.acceleration));
        m.insert(format!("sprite{i}.jerk"), pair(s.jerk));
        m.insert(format!("sprite{i}.size"), s.size);
        m.insert(format!("sprite{i}.texture_seed"), s.texture_seed);
    }
}

/// Rebuilds a scene from the keys written by [`scene_to_manifest`].
pub fn scene_from_manifest(m: &Manifest) -> Result<SpriteScene> {
    let background = {
        let raw = m.require("background")?;
        let parts: Vec<&str> = raw.split_whitespace().collect();
        let bad = || Error::Format(format!("bad background '{raw}'"));
        match parts.as_slice() {
            ["constant", c] => Background::Constant(c.parse().map_err(|_| bad())?),
            ["noise", seed, cell] => Background::Noise {
                seed: seed.parse().map_err(|_| bad())?,
                cell: cell.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        }
    };
    let count: usize = m.parsed("sprites")?;
    if count > 64 {
        return format_err(format!("manifest lists {count} sprites"));
    }
    let mut sprites = Vec::with_capacity(count);
    for i in 0..count {
        sprites.push(Sprite {
            p0: parse_pair(m, &format!("sprite{i}.p0"))?,
            velocity: parse_pair(m, &format!("sprite{i}.velocity"))?,
            acceleration: parse_pair(m, &format!("sprite{i}.acceleration"))?,
            jerk: parse_pair(m, &format!("sprite{i}.jerk"))?,
            size: m.parsed(&format!("sprite{i}.size"))?,
            texture_seed: m.parsed(&format!("sprite{i}.texture_seed"))?,
        });
    }
    let (h, w, c): (usize, usize, usize) = (m.parsed("height")?, m.parsed("width")?, m.parsed("channels")?);
    if h.saturating_mul(w) > 1 << 24 {
        return format_err(format!("manifest canvas {h}x{w} too large"));
    }
    SpriteScene::new(h, w, c, background, sprites).map_err(|e| Error::Format(e.to_string()))
}

/// Parameters of a generated dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub class: SceneClass,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl DatasetSpec {
    /// 64x64 RGB sequences.
    pub fn new(seed: u64, class: SceneClass, count: usize) -> Self {
        Self {
            seed,
            class,
            count,
            height: 64,
            width: 64,
            channels: 3,
        }
    }
}

pub fn sequence_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("seq_{index:04}"))
}

pub fn frame_name(t: f64) -> String {
    format!("frame_t{}.png", format_label(t))
}

pub fn gt_name(t: f64) -> String {
    format!("gt_t{}.png", format_label(t))
}

pub fn flow_name(from: f64, to: f64) -> String {
    format!("flow_{}_{}.flo", format_label(from), format_label(to))
}

/// Flow file pattern understood by precomputed flow sources.
pub const FLOW_PATTERN: &str = "flow_{from}_{to}.flo";

/// Flows written per sequence: the six quad flows, then both anchors to
/// each ground-truth time.
pub fn dataset_flow_pairs() -> Vec<(f64, f64)> {
    let mut pairs = vec![(0.0, -1.0), (0.0, 1.0), (0.0, 2.0), (1.0, 2.0), (1.0, 0.0), (1.0, -1.0)];
    for t in GT_TIMES {
        pairs.push((0.0, t));
        pairs.push((1.0, t));
    }
    pairs
}

fn write_sequence(dir: &Path, scene: &SpriteScene, spec: &DatasetSpec, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for t in QUAD_TIMES {
        scene.render_at(t)?.write_png(dir.join(frame_name(t)))?;
    }
    for t in GT_TIMES {
        scene.render_at(t)?.write_png(dir.join(gt_name(t)))?;
    }
    for (from, to) in dataset_flow_pairs() {
        save_flo(dir.join(flow_name(from, to)), &scene.analytic_flow(from, to))?;
    }
    let mut m = Manifest::default();
    m.insert("class", spec.class.name());
    m.insert("seed", seed);
    scene_to_manifest(scene, &mut m);
    std::fs::write(dir.join(MANIFEST_NAME), m.to_text())?;
    Ok(())
}

/// Generates `spec.count` sequences under `root`; returns their directories.
pub fn gen_dataset(root: &Path, spec: &DatasetSpec) -> Result<Vec<PathBuf>> {
    if spec.count == 0 {
        return invalid("dataset count must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let seeds: Vec<u64> = (0..spec.count).map(|_| rng.next_u64()).collect();
    std::fs::create_dir_all(root)?;
    let dirs: Vec<PathBuf> = (0..spec.count).map(|i| sequence_dir(root, i)).collect();
    seeds
        .par_iter()
        .zip(&dirs)
        .map(|(&seed, dir)| {
            let scene = SpriteScene::random(seed, spec.class, spec.height, spec.width, spec.channels)?;
            write_sequence(dir, &scene, spec, seed)
        })
        .collect::<Result<Vec<()>>>()?;
    let mut m = Manifest::default();
    m.insert("seed", spec.seed);
    m.insert("class", spec.class.name());
    m.insert("count", spec.count);
    m.insert("height", spec.height);
    m.insert("width", spec.width);
    m.insert("channels", spec.channels);
    std::fs::write(root.join(MANIFEST_NAME), m.to_text())?;
    Ok(dirs)
}

/// Reloads the scene of a generated sequence directory.
pub fn load_sequence_scene(dir: &Path) -> Result<SpriteScene> {
    scene_from_manifest(&Manifest::load(dir.join(MANIFEST_NAME))?)
}
