//! Every checked-in fuzz seed goes through its parser without panicking, and
//! the well-formed seeds parse.

use std::path::{Path, PathBuf};

use frameinterp::config::{config_from_ini, IniDocument};
use frameinterp::conv::ConvSpec;
use frameinterp::dataset::{scene_from_manifest, Manifest};
use frameinterp::flo::{encode_flo, parse_flo};
use frameinterp::Frame;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    assert!(!paths.is_empty(), "no seeds in {}", dir.display());
    paths
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn flo_seeds() {
    for (name, bytes) in seeds("parse_flo") {
        match parse_flo(&bytes) {
            Ok(flow) => assert_eq!(encode_flo(&flow), bytes, "{name}"),
            Err(_) => assert!(name.starts_with("truncated"), "{name}"),
        }
    }
}

#[test]
fn weight_seeds() {
    for (name, bytes) in seeds("parse_weights") {
        match ConvSpec::parse(&bytes) {
            Ok(spec) => assert_eq!(spec.encode(), bytes, "{name}"),
            Err(_) => assert!(name.starts_with("bad"), "{name}"),
        }
    }
}

#[test]
fn config_seeds() {
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/parse_manifest");
    for (name, bytes) in seeds("parse_config") {
        let doc = IniDocument::parse_bytes(&bytes).unwrap();
        if name != "analytic.ini" {
            config_from_ini(&doc, &base).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}

#[test]
fn manifest_seeds() {
    for (name, bytes) in seeds("parse_manifest") {
        let m = Manifest::parse_bytes(&bytes).unwrap();
        assert_eq!(Manifest::parse(&m.to_text()).unwrap().entries(), m.entries());
        if name == "sequence.txt" {
            scene_from_manifest(&m).unwrap();
        }
    }
}

#[test]
fn png_seeds() {
    for (name, bytes) in seeds("decode_png") {
        let frame = Frame::decode_png(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(frame.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
