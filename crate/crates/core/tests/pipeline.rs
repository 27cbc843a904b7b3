use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use sweepfuse::config::DecoderKind;
use sweepfuse::costvol::{read_dump, Interpolation};
use sweepfuse::encoder::block_contrast;
use sweepfuse::pipeline::{dump_cost_volumes, encoder_spec, keyframe_cost_volume};
use sweepfuse::synth::{Pattern, Primitive, SceneSpec, Texture};
use sweepfuse::tsdf::SoftArgmax;
use sweepfuse::*;

fn wall_scene(frames: usize) -> SceneSpec {
    let wall = Primitive::Plane {
        center: [0.0, 0.0, 2.0],
        normal: [0.0, 0.0, -1.0],
        up: [0.0, -1.0, 0.0],
        size: [10.0, 10.0],
        texture: Texture {
            pattern: Pattern::Noise,
            scale: 0.055,
            seed: 3,
            ..Texture::default()
        },
    };
    let poses = (0..frames)
        .map(|i| Pose::from_translation(Vector3::new(0.1 * i as f64, 0.0, 0.0)))
        .collect();
    let intr = Intrinsics::new(577.87, 577.87, 319.5, 239.5, 640, 480).unwrap();
    SceneSpec::new(intr, vec![wall], poses).unwrap()
}

fn wall_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.grid.bounds = Some([[-0.4, -0.6, 1.6], [0.9, 0.6, 2.4]]);
    cfg
}

fn emit(scene: &SceneSpec, dir: &Path) {
    scene.emit_dataset(dir).unwrap();
}

#[test]
fn non_finite_pose_drops_the_frame() {
    let tmp = tempfile::tempdir().unwrap();
    emit(&wall_scene(4), tmp.path());
    fs::write(tmp.path().join("pose/000002.txt"), "inf 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n").unwrap();
    let seq = load_sequence(tmp.path()).unwrap();
    assert_eq!(seq.dropped, vec![2]);
    assert_eq!(seq.frames.iter().map(|f| f.index).collect::<Vec<_>>(), vec![0, 1, 3]);
    assert!(seq.frames.iter().all(|f| f.gt_depth.is_some()));
}

#[test]
fn missing_pieces_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(load_sequence(&tmp.path().join("nope")), Err(DatasetError::Missing(_))));
    emit(&wall_scene(2), tmp.path());
    for f in fs::read_dir(tmp.path().join("color")).unwrap() {
        fs::remove_file(f.unwrap().path()).unwrap();
    }
    let err = load_sequence(tmp.path()).unwrap_err();
    assert!(matches!(err, DatasetError::NoFrames(_)), "{err}");
    assert_eq!(PipelineError::from(err).exit_code(), 3);

    let tmp = tempfile::tempdir().unwrap();
    emit(&wall_scene(2), tmp.path());
    fs::remove_file(tmp.path().join("intrinsics.txt")).unwrap();
    assert!(matches!(load_sequence(tmp.path()), Err(DatasetError::Missing(_))));
}

#[test]
fn softargmax_recovers_wall_depth() {
    let tmp = tempfile::tempdir().unwrap();
    emit(&wall_scene(5), tmp.path());
    let cfg = wall_config();
    let seq = load_sequence(tmp.path()).unwrap();
    let planes = cfg.planes().unwrap();
    let spec = encoder_spec(&cfg).unwrap();
    let feats: BTreeMap<usize, FeatureMap> = (0..5).map(|i| (i, encode_image(&seq.frames[i].image, &spec).unwrap())).collect();
    let bundle = KeyframeBundle {
        keyframe: 2,
        references: vec![0, 1, 3, 4],
    };
    let cv = keyframe_cost_volume(&cfg, &seq, &bundle, &feats, &planes).unwrap();
    let cam = seq.frames[2].camera.downscaled(8);
    let params = SoftArgmax {
        channel: cv.channels - 1,
        tau: cfg.decoder.tau,
        min_peak: cfg.decoder.min_peak,
    };
    let depth = decode_depth_softargmax(&cv, &planes, &cam, params).unwrap();
    let contrast = block_contrast(&seq.frames[2].image);
    let target = planes.plane_coordinate(2.0);
    let (mut ok, mut textured) = (0, 0);
    for (d, &k) in depth.values().iter().zip(&contrast) {
        if k < 0.01 {
            continue;
        }
        textured += 1;
        if *d > 0.0 && (planes.plane_coordinate(*d as f64) - target).abs() <= 1.0 {
            ok += 1;
        }
    }
    assert!(textured > 100);
    let empty = depth.values().iter().zip(&contrast).filter(|(d, k)| **k >= 0.01 && **d <= 0.0).count();
    assert!(ok * 100 >= textured * 95, "{ok} of {textured} within one plane, {empty} empty");
}

#[test]
fn warp_error_is_smallest_at_true_depth() {
    let tmp = tempfile::tempdir().unwrap();
    emit(&wall_scene(2), tmp.path());
    let seq = load_sequence(tmp.path()).unwrap();
    let spec = encoder_spec(&PipelineConfig::default()).unwrap();
    let key = encode_image(&seq.frames[0].image, &spec).unwrap();
    let other = encode_image(&seq.frames[1].image, &spec).unwrap();
    let key_cam = seq.frames[0].camera.downscaled(8);
    let other_cam = seq.frames[1].camera.downscaled(8);
    let hw = key.height * key.width;
    let rms = |depth: f64| {
        let (warped, mask) = warp_to_plane(&other, &other_cam, &key_cam, depth, Interpolation::Bilinear);
        let (mut se, mut n) = (0.0f64, 0usize);
        for p in (0..hw).filter(|&p| mask[p]) {
            for ch in 0..key.channels {
                se += (key.data[ch * hw + p] - warped.data[ch * hw + p]).powi(2) as f64;
                n += 1;
            }
        }
        assert!(n > hw * key.channels / 2);
        (se / n as f64).sqrt()
    };
    let planes = PipelineConfig::default().planes().unwrap();
    let errors: Vec<f64> = planes.values().iter().map(|&d| rms(d)).collect();
    let best = (0..errors.len()).min_by(|&a, &b| errors[a].total_cmp(&errors[b])).unwrap();
    let target = planes.plane_coordinate(2.0);
    assert!((best as f64 - target).abs() <= 1.0, "best plane {best}, truth at {target}");
}

#[test]
fn reconstruct_writes_outputs_and_recovers_the_wall() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    emit(&wall_scene(6), &data);
    let out = tmp.path().join("out");
    let rec = reconstruct(&wall_config(), &data, &out).unwrap();
    for f in ["mesh.ply", "tsdf.bin", "report.json", "timings.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(rec.report.decoder, DecoderKind::Depth);
    assert!(rec.report.mesh_triangles > 0);
    let near = rec.mesh.vertices.iter().filter(|v| (v.z - 2.0).abs() < 0.05).count();
    assert!(near * 10 >= rec.mesh.vertices.len() * 9, "{near} of {} near the wall", rec.mesh.vertices.len());
    let eval = rec.report.evaluation.as_ref().unwrap();
    assert!(eval.accuracy < 0.03, "accuracy {}", eval.accuracy);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(json.get("evaluation").is_some());
}

#[test]
fn cost_volume_dump_round_trips_through_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    emit(&wall_scene(6), tmp.path());
    let cfg = wall_config();
    let seq = load_sequence(tmp.path()).unwrap();
    let files = dump_cost_volumes(&cfg, &seq, &tmp.path().join("cv")).unwrap();
    assert!(!files.is_empty());
    let (vol, depths) = read_dump(&mut fs::File::open(&files[0]).unwrap()).unwrap();
    assert_eq!(depths.len(), cfg.planes.count);
    let depths: Vec<f64> = depths.iter().map(|&d| d as f64).collect();
    let csv = inspect_cv(&vol, &depths, 7, 10).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + cfg.planes.count);
    assert_eq!(lines[1].split(',').count(), 2 + vol.channels);
    assert!(inspect_cv(&vol, &depths, vol.height, 0).is_err());
}

#[test]
fn room_pipeline_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes/room_pipeline.toml");
    let cfg = PipelineConfig::load(&path).unwrap();
    assert!(cfg.grid.bounds.is_some());
    assert_eq!(cfg.rccv.out_channels, 7);
}
