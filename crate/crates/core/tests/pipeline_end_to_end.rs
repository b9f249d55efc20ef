//! End-to-end pipeline properties on synthetic sequences.

use std::sync::Arc;

use frameinterp::config::load_config;
use frameinterp::dataset::{gen_dataset, DatasetSpec, FLOW_PATTERN};
use frameinterp::estimate::{BlockMatchParams, FlowSource};
use frameinterp::fusion::{run_two_scale, run_two_scale_detailed, MaskPredictor};
use frameinterp::metrics::psnr;
use frameinterp::pipeline::{FrameQuad, Pipeline, PipelineConfig, QUAD_TIMES};
use frameinterp::scene::{SceneClass, SpriteScene};
use frameinterp::synthesis::Rcsn;
use frameinterp::frame::resample_bilinear;
use frameinterp::{Error, Frame};

fn scene_quad(scene: &SpriteScene) -> FrameQuad {
    FrameQuad::new(QUAD_TIMES.map(|t| scene.render_at(t).unwrap())).unwrap()
}

fn mean_abs(a: &Frame, b: &Frame) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.data().len() as f64
}

#[test]
fn reversed_quad_at_one_minus_t_matches() {
    for (seed, source) in [(1u64, "analytic"), (2, "blockmatch")] {
        let scene = Arc::new(SpriteScene::random(seed, SceneClass::Quadratic, 48, 48, 3).unwrap());
        let flow_source = match source {
            "analytic" => FlowSource::Analytic(scene.clone()),
            _ => FlowSource::BlockMatch(BlockMatchParams::default()),
        };
        let cfg = PipelineConfig {
            flow_source,
            t_values: vec![0.25, 0.5, 0.75],
            ..PipelineConfig::default()
        };
        let quad = scene_quad(&scene);
        let forward = Pipeline::new(cfg.clone()).unwrap().interpolate_multi(&quad).unwrap();
        let backward = Pipeline::new(cfg).unwrap().interpolate_multi(&quad.reversed()).unwrap();
        for (f, b) in forward.iter().zip(backward.iter().rev()) {
            assert!(mean_abs(f, b) < 1e-3, "{source}: {}", mean_abs(f, b));
        }
    }
}

#[test]
fn rectification_never_hurts_exact_quadratic_motion() {
    for seed in 40..50 {
        let scene = Arc::new(SpriteScene::random(seed, SceneClass::Quadratic, 64, 64, 3).unwrap());
        let quad = scene_quad(&scene);
        let on = PipelineConfig {
            flow_source: FlowSource::Analytic(scene.clone()),
            t_values: vec![0.25, 0.5, 0.75],
            ..PipelineConfig::default()
        };
        let off = PipelineConfig { rqfp: None, ..on.clone() };
        let a = Pipeline::new(on).unwrap().interpolate_multi(&quad).unwrap();
        let b = Pipeline::new(off).unwrap().interpolate_multi(&quad).unwrap();
        for (i, t) in [0.25, 0.5, 0.75].into_iter().enumerate() {
            let gt = scene.render_at(t).unwrap();
            let (pa, pb) = (psnr(&a[i], &gt).unwrap(), psnr(&b[i], &gt).unwrap());
            assert!(pa >= pb - 1e-6, "seed {seed} t {t}: {pa} vs {pb}");
        }
    }
}

#[test]
fn output_is_independent_of_thread_count() {
    let scene = SpriteScene::random(3, SceneClass::Jerk, 40, 40, 3).unwrap();
    let quad = scene_quad(&scene);
    let cfg = PipelineConfig {
        rcsn: Some(Arc::new(Rcsn::seeded(5).unwrap())),
        ms_fusion: Some(MaskPredictor::WarpError),
        refine: true,
        t_values: vec![0.25, 0.5, 0.75],
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(cfg).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| pipeline.interpolate_multi(&quad).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(3));
}

#[test]
fn two_scale_static_scene_and_envelope() {
    let f = Frame::from_fn(24, 20, 3, |y, x, c| ((y * 5 + x * 3 + c * 7) % 17) as f32 / 16.0).unwrap();
    let quad = FrameQuad::new([f.clone(), f.clone(), f.clone(), f.clone()]).unwrap();
    let pipeline = Pipeline::new(PipelineConfig::default()).unwrap();
    let close = |a: &Frame, b: &Frame| a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-4);
    let r = run_two_scale_detailed(&pipeline, &quad, &[0.5], &MaskPredictor::Constant(0.5)).unwrap().remove(0);
    assert!(close(&r.full.output, &f));
    assert!(close(&r.half.output, &resample_bilinear(&f, 12, 10).unwrap()));
    let smooth = Frame::from_fn(24, 20, 3, |_, _, c| 0.2 + 0.3 * c as f32).unwrap();
    let quad = FrameQuad::new([smooth.clone(), smooth.clone(), smooth.clone(), smooth.clone()]).unwrap();
    let out = run_two_scale(&pipeline, &quad, 0.5, &MaskPredictor::WarpError).unwrap();
    assert!(close(&out, &smooth));

    let scene = SpriteScene::random(8, SceneClass::Quadratic, 32, 32, 3).unwrap();
    let quad = scene_quad(&scene);
    for predictor in [MaskPredictor::WarpError, MaskPredictor::Constant(0.3)] {
        for r in run_two_scale_detailed(&pipeline, &quad, &[0.3, 0.6], &predictor).unwrap() {
            for i in 0..r.output.data().len() {
                let (a, b) = (r.full.output.data()[i], r.up_half.data()[i]);
                assert!(r.output.data()[i] >= a.min(b) && r.output.data()[i] <= a.max(b));
            }
        }
    }
    let tiny = Frame::zeros(6, 12, 3);
    let tiny_quad = FrameQuad::new([tiny.clone(), tiny.clone(), tiny.clone(), tiny]).unwrap();
    assert!(matches!(
        run_two_scale(&pipeline, &tiny_quad, 0.5, &MaskPredictor::WarpError),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn precomputed_dataset_flows_match_analytic_flows() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec { height: 48, width: 48, ..DatasetSpec::new(9, SceneClass::Quadratic, 1) };
    let seq = gen_dataset(dir.path(), &spec).unwrap().remove(0);
    std::fs::write(
        seq.join("analytic.ini"),
        "[flow]\nsource = analytic\nmanifest = manifest.txt\n[pipeline]\nt_values = 0.25, 0.5, 0.75\n",
    )
    .unwrap();
    std::fs::write(
        seq.join("files.ini"),
        format!("[flow]\nsource = precomputed\npattern = {FLOW_PATTERN}\n[pipeline]\nt_values = 0.25, 0.5, 0.75\n"),
    )
    .unwrap();
    let quad = FrameQuad::new(QUAD_TIMES.map(|t| {
        Frame::read_png(seq.join(frameinterp::dataset::frame_name(t))).unwrap()
    }))
    .unwrap();
    let analytic = Pipeline::new(load_config(seq.join("analytic.ini")).unwrap().pipeline).unwrap();
    let files = Pipeline::new(load_config(seq.join("files.ini")).unwrap().pipeline).unwrap();
    let a = analytic.interpolate_multi(&quad).unwrap();
    assert_eq!(a, files.interpolate_multi(&quad).unwrap());
    for (out, t) in a.iter().zip([0.25, 0.5, 0.75]) {
        let gt = Frame::read_png(seq.join(frameinterp::dataset::gt_name(t))).unwrap();
        assert!(psnr(out, &gt).unwrap() > 25.0, "t {t}: {}", psnr(out, &gt).unwrap());
    }
}

#[test]
fn missing_flow_and_weight_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let f = Frame::zeros(16, 16, 3);
    let quad = FrameQuad::new([f.clone(), f.clone(), f.clone(), f]).unwrap();
    let pattern = dir.path().join(FLOW_PATTERN).to_string_lossy().into_owned();
    let pipeline = Pipeline::new(PipelineConfig::baseline(FlowSource::Precomputed(pattern))).unwrap();
    assert!(matches!(pipeline.interpolate_one(&quad, 0.5), Err(Error::Io(_))));
    std::fs::write(dir.path().join("cfg.ini"), "[rcsn]\nenabled = on\nconv1 = a.bin\nweights = b.bin\n").unwrap();
    assert!(matches!(load_config(dir.path().join("cfg.ini")), Err(Error::Io(_))));
}

#[test]
fn mismatched_quad_is_rejected() {
    let a = Frame::zeros(16, 16, 3);
    let b = Frame::zeros(16, 16, 1);
    assert!(matches!(FrameQuad::new([a.clone(), a.clone(), b, a]), Err(Error::InvalidArgument(_))));
}

