//! Pipeline configuration files: `[section]` headers followed by
//! `key = value` lines; `#` and `;` start comments.
//!
//! ```text
//! [flow]
//! source = blockmatch        # blockmatch | analytic | precomputed
//! levels = 3
//! radius = 2
//! patch = 7
//! pattern = flow_{from}_{to}.flo   # precomputed
//! manifest = manifest.txt          # analytic
//! label_offset = 0
//!
//! [motion]
//! model = quadratic          # quadratic | linear
//! rqfp = on
//! omega = 5
//! gamma = 1
//!
//! [rcsn]
//! enabled = off
//! conv1 = conv1.bin          # or: seed = 7
//! weights = rcsn.bin
//!
//! [ms_fusion]
//! predictor = off            # off | constant | warp_error | net
//! value = 1.0
//! weights = fusion.bin
//!
//! [pipeline]
//! refine = off
//! t_values = 0.25, 0.5, 0.75
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::conv::ConvSpec;
use crate::dataset::load_sequence_scene;
use crate::dataset::{scene_from_manifest, Manifest};
use crate::error::{format_err, Error, Result};
use crate::estimate::{BlockMatchParams, FlowSource};
use crate::fusion::MaskPredictor;
use crate::motion::RqfpParams;
use crate::pipeline::{MotionModel, PipelineConfig};
use crate::synthesis::Rcsn;

const MAX_CONFIG_LEN: usize = 1 << 20;

/// Parsed `[section]` / `key = value` document, in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IniDocument {
    entries: Vec<(String, String, String)>,
}

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(i) => &line[..i],
        None => line,
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

impl IniDocument {
    pub fn parse(text: &str) -> Result<Self> {
        if text.len() > MAX_CONFIG_LEN {
            return format_err("config too long");
        }
        let mut doc = IniDocument::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return format_err(format!("config line {}: unterminated section header", n + 1));
                };
                let name = name.trim();
                if !valid_name(name) {
                    return format_err(format!("config line {}: bad section name '{name}'", n + 1));
                }
                section = name.to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return format_err(format!("config line {}: expected key = value", n + 1));
            };
            let key = key.trim();
            if !valid_name(key) {
                return format_err(format!("config line {}: bad key '{key}'", n + 1));
            }
            if doc.get(&section, key).is_some() {
                return format_err(format!("config line {}: duplicate key '{section}.{key}'", n + 1));
            }
            doc.entries.push((section.clone(), key.to_string(), value.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn parse_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("config is not UTF-8: {e}")))?;
        Self::parse(text)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(s, k, _)| s == section && k == key)
            .map(|(_, _, v)| v.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.entries.iter().map(|(s, k, v)| (s.as_str(), k.as_str(), v.as_str()))
    }
}

const KNOWN_KEYS: &[(&str, &[&str])] = &[
    ("flow", &["source", "levels", "radius", "patch", "pattern", "manifest", "label_offset"]),
    ("motion", &["model", "rqfp", "omega", "gamma"]),
    ("rcsn", &["enabled", "conv1", "weights", "seed"]),
    ("ms_fusion", &["predictor", "value", "weights"]),
    ("pipeline", &["refine", "t_values"]),
];

struct Reader<'a> {
    doc: &'a IniDocument,
    base: &'a Path,
}

impl Reader<'_> {
    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.doc.get(section, key)
    }

    fn parsed<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Format(format!("config {section}.{key}: cannot parse '{raw}'"))),
        }
    }

    fn switch(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some("on" | "true" | "yes" | "1") => Ok(true),
            Some("off" | "false" | "no" | "0") => Ok(false),
            Some(other) => format_err(format!("config {section}.{key}: expected on/off, got '{other}'")),
        }
    }

    fn path(&self, section: &str, key: &str) -> Option<PathBuf> {
        self.get(section, key).map(|p| self.base.join(p))
    }

    fn required_path(&self, section: &str, key: &str) -> Result<PathBuf> {
        self.path(section, key)
            .ok_or_else(|| Error::Format(format!("config is missing {section}.{key}")))
    }
}

/// Pipeline settings plus the frame-label offset used by file-based flow
/// sources when frames are taken from a directory.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub pipeline: PipelineConfig,
    /// Label of the first frame of a directory sequence.
    pub label_offset: f64,
}

/// Builds a pipeline configuration; missing keys take the
/// [`PipelineConfig::default`] values. Weight files are loaded here.
pub fn config_from_ini(doc: &IniDocument, base: &Path) -> Result<LoadedConfig> {
    for (section, key, _) in doc.entries() {
        let known = KNOWN_KEYS
            .iter()
            .any(|(s, keys)| *s == section && keys.contains(&key));
        if !known {
            return format_err(format!("unknown config key '{section}.{key}'"));
        }
    }
    let r = Reader { doc, base };
    let defaults = BlockMatchParams::default();
    let flow_source = match r.get("flow", "source").unwrap_or("blockmatch") {
        "blockmatch" => FlowSource::BlockMatch(BlockMatchParams::new(
            r.parsed("flow", "levels", defaults.levels)?,
            r.parsed("flow", "radius", defaults.radius)?,
            r.parsed("flow", "patch", defaults.patch)?,
        )?),
        "precomputed" => {
            let pattern = r
                .get("flow", "pattern")
                .ok_or_else(|| Error::Format("config is missing flow.pattern".into()))?;
            FlowSource::Precomputed(base.join(pattern).to_string_lossy().into_owned())
        }
        "analytic" => {
            let path = r.required_path("flow", "manifest")?;
            let scene = if path.is_dir() {
                load_sequence_scene(&path)?
            } else {
                scene_from_manifest(&Manifest::load(&path)?)?
            };
            FlowSource::Analytic(Arc::new(scene))
        }
        other => return format_err(format!("unknown flow source '{other}'")),
    };
    let motion = match r.get("motion", "model").unwrap_or("quadratic") {
        "quadratic" => MotionModel::Quadratic,
        "linear" => MotionModel::Linear,
        other => return format_err(format!("unknown motion model '{other}'")),
    };
    let base_params = RqfpParams::default();
    let rqfp = if r.switch("motion", "rqfp", true)? {
        Some(RqfpParams::new(
            r.parsed("motion", "omega", base_params.omega)?,
            r.parsed("motion", "gamma", base_params.gamma)?,
        )?)
    } else {
        None
    };
    let rcsn = if r.switch("rcsn", "enabled", false)? {
        let rcsn = match (r.path("rcsn", "conv1"), r.path("rcsn", "weights"), r.get("rcsn", "seed")) {
            (Some(conv1), Some(net), None) => Rcsn::new(ConvSpec::load(conv1)?, ConvSpec::load(net)?)?,
            (None, None, Some(_)) => Rcsn::seeded(r.parsed("rcsn", "seed", 0u64)?)?,
            _ => return format_err("rcsn needs either both conv1 and weights, or a seed"),
        };
        Some(Arc::new(rcsn))
    } else {
        None
    };
    let ms_fusion = match r.get("ms_fusion", "predictor").unwrap_or("off") {
        "off" => None,
        "constant" => Some(MaskPredictor::Constant(r.parsed("ms_fusion", "value", 1.0f32)?)),
        "warp_error" => Some(MaskPredictor::WarpError),
        "net" => Some(MaskPredictor::Net(ConvSpec::load(r.required_path("ms_fusion", "weights")?)?)),
        other => return format_err(format!("unknown fusion predictor '{other}'")),
    };
    let t_values = match r.get("pipeline", "t_values") {
        None => PipelineConfig::default().t_values,
        Some(raw) => raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("config pipeline.t_values: bad value '{}'", s.trim())))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let pipeline = PipelineConfig {
        flow_source,
        motion,
        rqfp,
        rcsn,
        ms_fusion,
        refine: r.switch("pipeline", "refine", false)?,
        t_values,
    };
    pipeline.validate()?;
    let label_offset: f64 = r.parsed("flow", "label_offset", 0.0)?;
    if !label_offset.is_finite() {
        return format_err("flow.label_offset must be finite");
    }
    Ok(LoadedConfig { pipeline, label_offset })
}

/// Reads and parses a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<LoadedConfig> {
    let path = path.as_ref();
    let doc = IniDocument::parse_bytes(&std::fs::read(path)?)?;
    config_from_ini(&doc, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{SceneClass, SpriteScene};
    use crate::synthesis::{conv1_shape, default_rcsn_shapes};

    #[test]
    fn ini_parsing() {
        let doc = IniDocument::parse("top = 1\n[a] # c\nx = 1 ; note\n[b]\nx=two\n").unwrap();
        assert_eq!(doc.get("", "top"), Some("1"));
        assert_eq!(doc.get("a", "x"), Some("1"));
        assert_eq!(doc.get("b", "x"), Some("two"));
        assert!(IniDocument::parse("[a\n").is_err());
        assert!(IniDocument::parse("[]\n").is_err());
        assert!(IniDocument::parse("[a]\nnovalue\n").is_err());
        assert!(IniDocument::parse("[a]\nx=1\nx=2\n").is_err());
        assert!(IniDocument::parse("[a]\nbad key=1\n").is_err());
        assert!(IniDocument::parse_bytes(&[0xc3]).is_err());
    }

    #[test]
    fn empty_config_is_the_default() {
        let cfg = config_from_ini(&IniDocument::default(), Path::new(".")).unwrap();
        let d = PipelineConfig::default();
        assert_eq!(cfg.pipeline.t_values, d.t_values);
        assert_eq!(cfg.pipeline.rqfp, d.rqfp);
        assert_eq!(cfg.pipeline.motion, d.motion);
        assert!(cfg.pipeline.rcsn.is_none() && cfg.pipeline.ms_fusion.is_none() && !cfg.pipeline.refine);
        assert_eq!(cfg.label_offset, 0.0);
    }

    #[test]
    fn full_config() {
        let dir = tempfile::tempdir().unwrap();
        ConvSpec::seeded(&[conv1_shape()], 1).unwrap().save(dir.path().join("c1.bin")).unwrap();
        ConvSpec::zeros(&default_rcsn_shapes()).unwrap().save(dir.path().join("net.bin")).unwrap();
        let text = "[flow]\nsource = blockmatch\nlevels = 2\nradius = 3\npatch = 5\nlabel_offset = -1\n\
                    [motion]\nmodel = linear\nrqfp = off\n\
                    [rcsn]\nenabled = on\nconv1 = c1.bin\nweights = net.bin\n\
                    [ms_fusion]\npredictor = constant\nvalue = 0.25\n\
                    [pipeline]\nrefine = on\nt_values = 0.25, 0.5, 0.75\n";
        std::fs::write(dir.path().join("cfg.ini"), text).unwrap();
        let cfg = load_config(dir.path().join("cfg.ini")).unwrap();
        let p = &cfg.pipeline;
        assert!(matches!(p.flow_source, FlowSource::BlockMatch(BlockMatchParams { levels: 2, radius: 3, patch: 5 })));
        assert_eq!(p.motion, MotionModel::Linear);
        assert!(p.rqfp.is_none() && p.refine && p.rcsn.is_some());
        assert_eq!(p.ms_fusion, Some(MaskPredictor::Constant(0.25)));
        assert_eq!(p.t_values, vec![0.25, 0.5, 0.75]);
        assert_eq!(cfg.label_offset, -1.0);
    }

    #[test]
    fn analytic_source_from_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let scene = SpriteScene::random(4, SceneClass::Quadratic, 32, 32, 3).unwrap();
        let mut m = Manifest::default();
        crate::dataset::scene_to_manifest(&scene, &mut m);
        std::fs::write(dir.path().join("manifest.txt"), m.to_text()).unwrap();
        let doc = IniDocument::parse("[flow]\nsource = analytic\nmanifest = manifest.txt\n").unwrap();
        let cfg = config_from_ini(&doc, dir.path()).unwrap();
        match cfg.pipeline.flow_source {
            FlowSource::Analytic(s) => assert_eq!(*s, scene),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_errors() {
        let base = Path::new(".");
        let bad = |text: &str| config_from_ini(&IniDocument::parse(text).unwrap(), base);
        assert!(matches!(bad("[flow]\nsorce = x\n"), Err(Error::Format(_))));
        assert!(bad("[flow]\nsource = magic\n").is_err());
        assert!(bad("[motion]\nrqfp = maybe\n").is_err());
        assert!(bad("[pipeline]\nt_values = 0.5, 0.25\n").is_err());
        assert!(bad("[pipeline]\nt_values = 1.0\n").is_err());
        assert!(bad("[ms_fusion]\npredictor = constant\nvalue = 2\n").is_err());
        assert!(bad("[rcsn]\nenabled = on\n").is_err());
        assert!(matches!(
            bad("[rcsn]\nenabled = on\nconv1 = /nonexistent/c1.bin\nweights = /nonexistent/w.bin\n"),
            Err(Error::Io(_))
        ));
        assert!(matches!(load_config("/nonexistent/cfg.ini"), Err(Error::Io(_))));
    }
}
