use std::collections::HashMap;
use std::sync::OnceLock;

use super::synth::*;
use super::*;
use crate::smpl_body::synthetic::synthetic_body_model;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn model() -> &'static BodyModel<f64> {
    static M: OnceLock<BodyModel<f64>> = OnceLock::new();
    M.get_or_init(synthetic_body_model)
}

fn cloud(seed: u64, n: usize) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(10.0..12.0))).collect()
}

fn key(p: &Vector3<f64>) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

fn histogram(points: &[Vector3<f64>]) -> HashMap<[u64; 3], usize> {
    let mut h = HashMap::new();
    for p in points {
        *h.entry(key(p)).or_insert(0) += 1;
    }
    h
}

#[test]
fn resample_keeps_exact_size_input() {
    let pts = cloud(1, 512);
    assert_eq!(resample_frame(&pts, 9).unwrap(), pts);
}

#[test]
fn resample_repeats_small_frames_cyclically() {
    let pts = cloud(2, 30);
    let out = resample_frame(&pts, 0).unwrap();
    assert_eq!(out.len(), NUM_POINTS);
    let h = histogram(&out);
    assert_eq!(h.len(), 30);
    for (i, p) in pts.iter().enumerate() {
        assert_eq!(h[&key(p)], if i < 2 { 18 } else { 17 });
    }
}

#[test]
fn resample_subsets_large_frames_deterministically() {
    let pts = cloud(3, 1024);
    let a = resample_frame(&pts, 42).unwrap();
    let b = resample_frame(&pts, 42).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, resample_frame(&pts, 43).unwrap());
    let input = histogram(&pts);
    let h = histogram(&a);
    assert_eq!(h.len(), NUM_POINTS);
    assert!(h.keys().all(|k| input.contains_key(k)));

    let f = resample_frame_with(&pts, 0, Sampling::Farthest).unwrap();
    let hf = histogram(&f);
    assert_eq!(hf.len(), NUM_POINTS);
    assert!(hf.keys().all(|k| input.contains_key(k)));
}

#[test]
fn resample_rejects_empty() {
    assert!(matches!(resample_frame::<f64>(&[], 0), Err(SeqDataError::EmptyFrame(_))));
    assert!(RawFrame::<f64>::new(vec![], 3).is_err());
    assert!(RawFrame::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)], 3).is_err());
}

#[test]
fn farthest_point_spreads_out() {
    // two tight clusters: the second pick must come from the other cluster
    let mut pts = cloud(4, 20);
    pts.iter_mut().skip(10).for_each(|p| p.x += 50.0);
    let idx = farthest_point_indices(&pts, 2);
    assert!((pts[idx[0]].x < 10.0) != (pts[idx[1]].x < 10.0));
}

#[test]
fn center_frame_examples() {
    let (c, m) = center_frame(&vec![Vector3::new(5.0, 2.0, 20.0); 512]);
    assert!(c.iter().all(|p| p.norm() == 0.0));
    assert_eq!(m, Vector3::new(5.0, 2.0, 20.0));

    let pts = cloud(5, 512);
    let (centered, cen) = center_frame(&pts);
    let (again, zero) = center_frame(&centered);
    assert!(zero.norm() < 1e-12);
    assert!(again.iter().zip(&centered).all(|(a, b)| (a - b).norm() < 1e-12));
    for (p, q) in pts.iter().zip(&centered) {
        assert!((q + cen - p).norm() < 1e-7);
    }
}

fn dummy_sample(frames: usize) -> MotionSample<f64> {
    let rec = Recording {
        id: "r".into(),
        frames: (0..frames).map(|t| vec![[t as f32, 0.0, 10.0], [t as f32, 1.0, 10.0]]).collect(),
        motion: Motion { theta: vec![[0.0; POSE_DIM]; frames], translation: vec![[0.0; 3]; frames] },
    };
    prepare_recording(&rec, model(), &LoadOptions::default()).unwrap()
}

#[test]
fn window_counts() {
    let s = dummy_sample(100);
    let w = window_sequences(std::slice::from_ref(&s), 16, 16);
    assert_eq!(w.len(), 6);
    assert_eq!(w.iter().map(|x| x.start_frame).collect::<Vec<_>>(), vec![0, 16, 32, 48, 64, 80]);
    assert!(w.iter().all(|x| x.len() == 16 && x.sequence.len() == 16 && x.gt_joints.len() == 16));
    assert_eq!(w[2].sequence.centroids[0], s.sequence.centroids[32]);
    assert_eq!(window_sequences(&[dummy_sample(16)], 16, 16).len(), 1);
    assert_eq!(window_sequences(&[dummy_sample(15)], 16, 16).len(), 0);
}

#[test]
fn ptc_round_trip_is_bit_exact() {
    let pts = vec![[1.5f32, -0.0, 3.25e-39], [f32::MAX, f32::MIN_POSITIVE, -7.125], [0.1, 0.2, 0.3]];
    let bytes = format::encode_ptc(&pts);
    assert_eq!(&bytes[..4], b"PTC1");
    assert_eq!(bytes.len(), 8 + 36);
    let back = format::decode_ptc(&bytes, Path::new("x.ptc")).unwrap();
    let bits = |v: &[[f32; 3]]| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&pts));
    assert_eq!(format::encode_ptc(&back), bytes);
}

#[test]
fn mot_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = Motion {
        theta: (0..5).map(|_| std::array::from_fn(|_| rng.random_range(-3.0f32..3.0))).collect(),
        translation: (0..5).map(|_| std::array::from_fn(|_| rng.random_range(-30.0f32..30.0))).collect(),
    };
    let bytes = format::encode_mot(&m);
    assert_eq!(bytes.len(), 8 + 5 * 75 * 4);
    let back = format::decode_mot(&bytes, Path::new("gt.mot")).unwrap();
    assert_eq!(format::encode_mot(&back), bytes);
    assert_eq!(back, m);
}

#[test]
fn format_errors() {
    let p = Path::new("f.ptc");
    let good = format::encode_ptc(&[[1.0, 2.0, 3.0]]);
    assert!(matches!(format::decode_ptc(&good[..good.len() - 1], p), Err(SeqDataError::Malformed { .. })));
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(matches!(format::decode_ptc(&bad_magic, p), Err(SeqDataError::Malformed { .. })));
    let nan = format::encode_ptc(&[[1.0, 2.0, 3.0], [0.0, f32::NAN, 0.0]]);
    assert!(matches!(format::decode_ptc(&nan, p), Err(SeqDataError::NonFinite { index: 1, .. })));
    assert!(matches!(format::decode_mot(&good, Path::new("gt.mot")), Err(SeqDataError::Malformed { .. })));
}

fn random_recording(rng: &mut ChaCha8Rng, id: &str, frames: usize) -> Recording {
    Recording {
        id: id.into(),
        frames: (0..frames)
            .map(|_| {
                let n = rng.random_range(20..700);
                (0..n).map(|_| [rng.random_range(-0.5f32..0.5), rng.random_range(-1.0f32..1.0), rng.random_range(14.0f32..15.0)]).collect()
            })
            .collect(),
        motion: Motion {
            theta: (0..frames).map(|_| std::array::from_fn(|_| rng.random_range(-0.3f32..0.3))).collect(),
            translation: (0..frames).map(|_| [0.0, -0.5, 14.5]).collect(),
        },
    }
}

#[test]
fn load_dataset_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let recs: Vec<_> = (0..3).map(|i| random_recording(&mut rng, &format!("rec_{i}"), 64)).collect();
    write_dataset(dir.path(), &recs).unwrap();
    assert!(dir.path().join("rec_1/frames/000063.ptc").exists());
    assert_eq!(read_recordings(dir.path()).unwrap(), recs);

    let samples = load_dataset(dir.path(), model(), &LoadOptions::default()).unwrap();
    assert_eq!(samples.len(), 3);
    for s in &samples {
        assert_eq!(s.len(), 64);
        for f in &s.sequence.frames {
            assert_eq!(f.len(), NUM_POINTS);
            let m = f.iter().fold(Vector3::zeros(), |a, p| a + p) / NUM_POINTS as f64;
            assert!(m.norm() < 1e-5);
        }
        let again = joints_for_motion(model(), &s.gt_theta, &s.gt_translation);
        for (a, b) in again.iter().flatten().zip(s.gt_joints.iter().flatten()) {
            assert!((a - b).norm() < 1e-6);
        }
        assert!(s.sequence.distances.iter().all(|d| (14.0..16.0).contains(d)));
    }
    assert_eq!(window_sequences(&samples, DEFAULT_WINDOW, DEFAULT_STRIDE).len(), 21);
    let again = load_dataset(dir.path(), model(), &LoadOptions::default()).unwrap();
    assert_eq!(again, samples);
}

#[test]
fn load_dataset_reports_every_bad_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let recs: Vec<_> = (0..3).map(|i| random_recording(&mut rng, &format!("rec_{i}"), 4)).collect();
    write_dataset(dir.path(), &recs).unwrap();
    let nan_file = dir.path().join("rec_0/frames/000002.ptc");
    std::fs::write(&nan_file, format::encode_ptc(&[[f32::NAN, 0.0, 0.0]])).unwrap();
    std::fs::remove_file(dir.path().join("rec_2/frames/000003.ptc")).unwrap();
    let err = load_dataset(dir.path(), model(), &LoadOptions::default()).unwrap_err();
    let SeqDataError::Dataset(errs) = &err else { panic!("expected aggregated error, got {err}") };
    assert_eq!(errs.len(), 2);
    let text = err.to_string();
    assert!(text.contains("000002.ptc"), "{text}");
    assert!(text.contains("rec_2"), "{text}");
}

#[test]
fn prepare_rejects_count_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rec = random_recording(&mut rng, "a", 4);
    rec.motion.theta.pop();
    rec.motion.translation.pop();
    assert!(matches!(
        prepare_recording(&rec, model(), &LoadOptions::default()),
        Err(SeqDataError::CountMismatch { frames: 4, poses: 3, .. })
    ));
}

fn fixed_distance(d: f64, seed: u64, recordings: usize) -> SynthConfig {
    SynthConfig {
        seed,
        distance_min: d,
        distance_max: d,
        distance_mode: DistanceMode::Spaced,
        recordings,
        frames_per_recording: 3,
        ..Default::default()
    }
}

fn mean_count(recs: &[Recording]) -> f64 {
    let counts: Vec<usize> = recs.iter().flat_map(|r| r.frames.iter().map(|f| f.len())).collect();
    counts.iter().sum::<usize>() as f64 / counts.len() as f64
}

#[test]
fn synthetic_counts_match_sparsity_targets() {
    let near = mean_count(&synth_generate(&fixed_distance(12.0, 1, 10), model()).unwrap());
    let far = mean_count(&synth_generate(&fixed_distance(28.0, 1, 10), model()).unwrap());
    assert!((225.0..=675.0).contains(&near), "12 m: {near}");
    assert!((15.0..=45.0).contains(&far), "28 m: {far}");
}

#[test]
fn synthetic_ground_truth_is_consistent() {
    let cfg = SynthConfig { recordings: 5, frames_per_recording: 4, noise_sigma: 0.0, dropout: 0.0, ..Default::default() };
    let recs = synth_generate(&cfg, model()).unwrap();
    for rec in &recs {
        assert_eq!(rec.frames.len(), 4);
        assert_eq!(rec.motion.len(), 4);
        for (t, f) in rec.frames.iter().enumerate() {
            let theta = rec.motion.theta[t].map(|v| v as f64);
            let tr = rec.motion.translation[t].map(|v| v as f64);
            let out = model().forward(&PoseParams { theta, translation: Some(tr) }, &ShapeParams::zero());
            let lowest = out.vertices.iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
            assert!((lowest + cfg.sensor_height).abs() < 1e-4);
            for p in f {
                let p = Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
                let nearest = out.vertices.iter().map(|v| (v - p).norm()).fold(f64::INFINITY, f64::min);
                assert!(nearest < 0.08, "hit {nearest} m from the mesh");
            }
            let aa = crate::rot3d::AxisAngle::new(theta[0], theta[1], theta[2]);
            assert!(aa.angle() < std::f64::consts::PI - 0.1);
        }
    }
}

#[test]
fn rays_keep_only_the_first_surface() {
    let quad = |z: f64| {
        vec![Vector3::new(-1.0, -1.0, z), Vector3::new(1.0, -1.0, z), Vector3::new(1.0, 1.0, z), Vector3::new(-1.0, 1.0, z)]
    };
    let mut verts = quad(10.0);
    verts.extend(quad(12.0));
    let faces = [[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]];
    let res = 1f64.to_radians();
    let hits = cast_rays(&verts, &faces, res, res);
    // 1/10 rad half-width covers |k| <= 5 rays per axis
    assert_eq!(hits.len(), 11 * 11);
    assert!(hits.iter().all(|h| (h.z - 10.0).abs() < 1e-9));
    let back_only = cast_rays(&verts[4..], &[[0, 1, 2], [0, 2, 3]], res, res);
    assert!(back_only.iter().all(|h| (h.z - 12.0).abs() < 1e-9));
}

#[test]
fn full_dropout_is_an_error() {
    let cfg = SynthConfig { dropout: 1.0, recordings: 2, frames_per_recording: 2, ..Default::default() };
    assert_eq!(synth_generate(&cfg, model()), Err(SeqDataError::ZeroHits));
}

#[test]
fn invalid_config_is_rejected() {
    for cfg in [
        SynthConfig { distance_min: 20.0, distance_max: 10.0, ..Default::default() },
        SynthConfig { dropout: 1.5, ..Default::default() },
        SynthConfig { recordings: 0, ..Default::default() },
        SynthConfig { motion: MotionSource::Procedural { motions: vec![], amplitude_jitter: 0.1 }, ..Default::default() },
    ] {
        assert!(matches!(synth_generate(&cfg, model()), Err(SeqDataError::InvalidConfig(_))));
    }
}

#[test]
fn synthetic_generation_is_deterministic() {
    let cfg = SynthConfig { recordings: 3, frames_per_recording: 4, seed: 77, ..Default::default() };
    let a = synth_generate(&cfg, model()).unwrap();
    let b = synth_generate(&cfg, model()).unwrap();
    let bytes = |recs: &[Recording]| -> Vec<u8> {
        recs.iter().flat_map(|r| r.frames.iter().flat_map(|f| format::encode_ptc(f)).chain(format::encode_mot(&r.motion))).collect()
    };
    assert_eq!(bytes(&a), bytes(&b));
    let c = synth_generate(&SynthConfig { seed: 78, ..cfg }, model()).unwrap();
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn sweep_mode_moves_away_and_loads() {
    let cfg = SynthConfig { distance_mode: DistanceMode::Sweep, recordings: 1, frames_per_recording: 17, drift_speed: 0.0, ..Default::default() };
    let recs = synth_generate(&cfg, model()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &recs).unwrap();
    let s = &load_dataset(dir.path(), model(), &LoadOptions::default()).unwrap()[0];
    let d = &s.sequence.distances;
    assert!(d[0] < 13.0 && d[16] > 27.0, "{d:?}");
    assert!(s.gt_translation.windows(2).all(|w| w[1].norm() > w[0].norm()));
}

#[test]
fn pose_file_motion_source() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("poses.mot");
    let mut theta = [0.0f32; POSE_DIM];
    theta[3 * 4] = 0.8;
    let m = Motion { theta: vec![theta, [0.0; POSE_DIM]], translation: vec![[0.0; 3]; 2] };
    format::write_mot(&path, &m).unwrap();
    let cfg = SynthConfig { recordings: 1, frames_per_recording: 3, max_heading_deg: 0.0, motion: MotionSource::PoseFile { path }, ..Default::default() };
    let rec = &synth_generate(&cfg, model()).unwrap()[0];
    assert_eq!(rec.motion.theta[0][12], 0.8);
    assert_eq!(rec.motion.theta[1][12], 0.0);
    assert_eq!(rec.motion.theta[2][12], 0.8);
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    let rho = cov / (vx * vy).sqrt();
    let t = rho * ((n - 2.0) / (1.0 - rho * rho).max(1e-300)).sqrt();
    let p = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, n - 2.0).unwrap().cdf(t.abs()));
    (rho, p)
}

#[test]
fn hit_counts_fall_with_distance() {
    let mut dist = Vec::new();
    let mut counts = Vec::new();
    for i in 0..20 {
        let d = 12.0 + 16.0 * i as f64 / 19.0;
        let recs = synth_generate(&fixed_distance(d, 100 + i, 3), model()).unwrap();
        dist.push(d);
        counts.push(mean_count(&recs));
    }
    let (rho, p) = spearman(&dist, &counts);
    assert!(rho < 0.0 && p < 0.01, "rho {rho}, p {p}");
}

#[test]
fn spearman_oracle_sanity() {
    let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| -v * v).collect();
    let (rho, p) = spearman(&x, &y);
    assert!((rho + 1.0).abs() < 1e-12 && p < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resample_never_invents_points(n in 1usize..1500, seed in 0u64..1000) {
        let pts = cloud(seed, n);
        let out = resample_frame(&pts, seed).unwrap();
        prop_assert_eq!(out.len(), NUM_POINTS);
        let input = histogram(&pts);
        let h = histogram(&out);
        for (k, c) in &h {
            prop_assert!(input.contains_key(k));
            if n >= NUM_POINTS {
                prop_assert!(*c <= input[k]);
            }
        }
    }

    #[test]
    fn centering_round_trips(seed in 0u64..1000) {
        let pts = cloud(seed, 64);
        let (c, m) = center_frame(&pts);
        for (p, q) in pts.iter().zip(&c) {
            prop_assert!((q + m - p).norm() < 1e-6);
        }
    }
}
