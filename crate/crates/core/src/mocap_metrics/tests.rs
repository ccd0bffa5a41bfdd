use super::*;
use crate::rot3d::AxisAngle;
use crate::smpl_body::synthetic::synthetic_body_model;
use nalgebra::Rotation3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let w = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    *Rotation3::from_scaled_axis(w).matrix()
}

fn random_seq(rng: &mut ChaCha8Rng, frames: usize) -> Vec<Vec<Vector3<f64>>> {
    (0..frames).map(|_| random_cloud(rng, 24)).collect()
}

fn sq_residual(tf: &SimilarityTransform<f64>, p: &[Vector3<f64>], g: &[Vector3<f64>]) -> f64 {
    p.iter().zip(g).map(|(a, b)| (tf.apply(a) - b).norm_squared()).sum()
}

fn loop_mpjpe(p: &[Vec<Vector3<f64>>], g: &[Vec<Vector3<f64>>]) -> f64 {
    let mut total = 0.0;
    for t in 0..p.len() {
        let mut s = 0.0;
        for j in 0..24 {
            let a = p[t][j] - p[t][0];
            let b = g[t][j] - g[t][0];
            s += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
        }
        total += s / 24.0;
    }
    total / p.len() as f64 * 1000.0
}

#[test]
fn procrustes_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_cloud(&mut rng, 24);
    let (tf, aligned) = procrustes_align(&g, &g).unwrap();
    assert!((tf.scale - 1.0).abs() < 1e-12);
    assert!((tf.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);
    assert!(tf.translation.norm() < 1e-12);
    assert!(aligned.iter().zip(&g).all(|(a, b)| (a - b).norm() < 1e-12));
}

#[test]
fn procrustes_recovers_exact_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_cloud(&mut rng, 24);
    let r0 = random_rotation(&mut rng);
    let t0 = Vector3::new(0.3, -1.2, 4.0);
    let p: Vec<_> = g.iter().map(|x| r0 * x * 0.5 + t0).collect();
    let (tf, aligned) = procrustes_align(&p, &g).unwrap();
    assert!((tf.scale - 2.0).abs() < 1e-9);
    assert!((tf.rotation.matrix() - r0.transpose()).norm() < 1e-9);
    let resid: f64 = aligned.iter().zip(&g).map(|(a, b)| (a - b).norm()).sum();
    assert!(resid < 1e-9);
}

#[test]
fn procrustes_excludes_reflections() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_cloud(&mut rng, 24);
    let p: Vec<_> = g.iter().map(|x| Vector3::new(-x.x, x.y, x.z)).collect();
    let (tf, _) = procrustes_align(&p, &g).unwrap();
    assert!((tf.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
    assert!(tf.scale > 0.0);
}

#[test]
fn procrustes_beats_random_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_cloud(&mut rng, 24);
    let g = random_cloud(&mut rng, 24);
    let (tf, _) = procrustes_align(&p, &g).unwrap();
    let best = sq_residual(&tf, &p, &g);
    for _ in 0..1000 {
        let cand = SimilarityTransform {
            scale: rng.random_range(0.05..3.0),
            rotation: RotMat::from_matrix_unchecked(random_rotation(&mut rng)),
            translation: Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        };
        assert!(best <= sq_residual(&cand, &p, &g) + 1e-12);
    }
    // local perturbations of the optimum never improve it either
    for _ in 0..200 {
        let dr = *Rotation3::from_scaled_axis(Vector3::new(
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
        ))
        .matrix();
        let cand = SimilarityTransform {
            scale: tf.scale * rng.random_range(0.99..1.01),
            rotation: RotMat::from_matrix_unchecked(dr * tf.rotation.matrix()),
            translation: tf.translation + Vector3::new(rng.random_range(-0.01..0.01), 0.0, rng.random_range(-0.01..0.01)),
        };
        assert!(best <= sq_residual(&cand, &p, &g) + 1e-12);
    }
}

#[test]
fn procrustes_rejects_degenerate() {
    let p = vec![Vector3::new(1.0, 2.0, 3.0); 24];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_cloud(&mut rng, 24);
    assert!(matches!(procrustes_align(&p, &g), Err(MetricsError::Degenerate(_))));
    assert!(matches!(procrustes_align(&g, &p), Err(MetricsError::Degenerate(_))));
}

#[test]
fn mpjpe_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = random_seq(&mut rng, 5);
    assert_eq!(mpjpe(&g, &g).unwrap(), 0.0);
    let shifted: Vec<Vec<_>> = g.iter().map(|f| f.iter().map(|p| p + Vector3::new(0.1, 0.1, 0.1)).collect()).collect();
    assert!(mpjpe(&shifted, &g).unwrap() < 1e-9);
    // 5 cm offsets on every non-root joint in random directions
    let perturbed: Vec<Vec<_>> = g
        .iter()
        .map(|f| {
            f.iter()
                .enumerate()
                .map(|(j, p)| {
                    if j == 0 {
                        *p
                    } else {
                        let d = random_cloud(&mut rng, 1)[0].normalize();
                        p + d * 0.05
                    }
                })
                .collect()
        })
        .collect();
    let m = mpjpe(&perturbed, &g).unwrap();
    assert!((m - loop_mpjpe(&perturbed, &g)).abs() < 1e-9);
    assert!((m - 50.0 * 23.0 / 24.0).abs() < 1e-9);
    assert!(mpjpe(&g[..2], &g).is_err());
}

#[test]
fn pa_mpjpe_removes_per_frame_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = random_seq(&mut rng, 6);
    let p: Vec<Vec<_>> = g
        .iter()
        .map(|f| {
            let r = random_rotation(&mut rng);
            let s = rng.random_range(0.5..2.0);
            let t = Vector3::new(rng.random_range(-3.0..3.0), 1.0, 0.0);
            f.iter().map(|x| r * x * s + t).collect()
        })
        .collect();
    assert!(pa_mpjpe(&p, &g).unwrap() < 1e-9);
    assert!(mpjpe(&p, &g).unwrap() > 10.0);
}

#[test]
fn pa_mpjpe_invariant_and_bounded_by_mpjpe() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_seq(&mut rng, 8);
    let noisy: Vec<Vec<_>> = g.iter().map(|f| f.iter().map(|x| x + random_cloud(&mut rng, 1)[0] * 0.08).collect()).collect();
    let base = pa_mpjpe(&noisy, &g).unwrap();
    assert!(base <= mpjpe(&noisy, &g).unwrap());
    let moved: Vec<Vec<_>> = noisy
        .iter()
        .map(|f| {
            let r = random_rotation(&mut rng);
            let s = rng.random_range(0.5..2.0);
            f.iter().map(|x| r * x * s + Vector3::new(2.0, -1.0, 0.5)).collect()
        })
        .collect();
    assert!((pa_mpjpe(&moved, &g).unwrap() - base).abs() < 1e-9);
}

#[test]
fn mpjpe_invariant_to_common_translation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_seq(&mut rng, 4);
    let p = random_seq(&mut rng, 4);
    let t = Vector3::new(5.0, -2.0, 13.0);
    let mv = |s: &Vec<Vec<Vector3<f64>>>| -> Vec<Vec<Vector3<f64>>> { s.iter().map(|f| f.iter().map(|x| x + t).collect()).collect() };
    assert!((mpjpe(&mv(&p), &mv(&g)).unwrap() - mpjpe(&p, &g).unwrap()).abs() < 1e-9);
}

#[test]
fn pck_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let g = random_seq(&mut rng, 3);
    assert_eq!(pck(&g, &g, 0.01).unwrap(), 1.0);
    // root stays put, every other joint moves 0.2 m; root error is 0 so it always counts
    let p: Vec<Vec<_>> =
        g.iter().map(|f| f.iter().enumerate().map(|(j, x)| if j == 0 { *x } else { x + Vector3::new(0.0, 0.2, 0.0) }).collect()).collect();
    assert!((pck(&p, &g, 0.1).unwrap() - 1.0 / 24.0).abs() < 1e-12);
    assert_eq!(pck(&p, &g, 0.3).unwrap(), 1.0);
    let noisy: Vec<Vec<_>> = g.iter().map(|f| f.iter().map(|x| x + random_cloud(&mut rng, 1)[0] * 0.3).collect()).collect();
    let mut last = 0.0;
    for i in 1..=50 {
        let v = pck(&noisy, &g, i as f64 * 0.02).unwrap();
        assert!(v >= last);
        last = v;
    }
}

fn random_theta(rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..72).map(|_| rng.random_range(-scale..scale)).collect()
}

#[test]
fn pve_examples() {
    let model = synthetic_body_model();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_theta(&mut rng, 0.4);
    assert_eq!(pve(&[a.clone()], &[a.clone()], &model).unwrap(), 0.0);
    let mut rotated = a.clone();
    rotated[1] += 0.5;
    assert!(pve(&[rotated], &[a.clone()], &model).unwrap() > 1.0);

    let b = random_theta(&mut rng, 0.4);
    let got = pve(&[a.clone()], &[b.clone()], &model).unwrap();
    let pa = model.forward(&PoseParams::from_slice(&a, None).unwrap(), &ShapeParams::zero());
    let pb = model.forward(&PoseParams::from_slice(&b, None).unwrap(), &ShapeParams::zero());
    let mut sum = 0.0;
    for v in 0..pa.vertices.len() {
        let d = (pa.vertices[v] - pa.joints[0]) - (pb.vertices[v] - pb.joints[0]);
        sum += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
    }
    assert!((got - sum / pa.vertices.len() as f64 * 1000.0).abs() < 1e-9);
}

#[test]
fn accel_examples() {
    let linear: Vec<Vec<Vector3<f64>>> =
        (0..6).map(|t| (0..24).map(|j| Vector3::new(t as f64 * 0.1, j as f64, -(t as f64) * 0.3)).collect()).collect();
    let other: Vec<Vec<Vector3<f64>>> =
        (0..6).map(|t| (0..24).map(|j| Vector3::new(1.0, j as f64 * 0.5 + t as f64, 2.0)).collect()).collect();
    assert!(accel_error(&linear, &other, 10.0).unwrap() < 1e-9);
    let offset: Vec<Vec<_>> = linear.iter().map(|f| f.iter().map(|x| x + Vector3::new(0.4, 0.0, 0.0)).collect()).collect();
    assert!(accel_error(&offset, &linear, 10.0).unwrap() < 1e-9);

    let d = 0.01;
    let fps = 10.0;
    let alt: Vec<Vec<_>> = linear
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let mut f = f.clone();
            f[5].y += if t % 2 == 0 { d } else { -d };
            f
        })
        .collect();
    let got = accel_error(&alt, &linear, fps).unwrap();
    assert!((got - 4.0 * d * fps * fps / 24.0).abs() < 1e-9);
    assert!(matches!(accel_error(&linear[..2], &linear[..2], 10.0), Err(MetricsError::TooShort(2))));
}

fn seq(joints: Vec<Vec<Vector3<f64>>>, distances: Option<Vec<f64>>) -> EvalSequence<f64> {
    EvalSequence { joints, theta: None, distances }
}

#[test]
fn evaluate_perfect_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = random_seq(&mut rng, 5);
    let model = synthetic_body_model();
    let theta: Vec<Vec<f64>> = (0..5).map(|_| random_theta(&mut rng, 0.3)).collect();
    let s = EvalSequence { joints: g, theta: Some(theta), distances: None };
    let r = evaluate(&[s.clone()], &[s], Some(&model), &EvalConfig::default()).unwrap();
    assert_eq!(r.mpjpe, 0.0);
    assert!(r.pa_mpjpe < 1e-9);
    assert_eq!(r.pve, Some(0.0));
    assert_eq!(r.accel_err, Some(0.0));
    assert!(r.pck.iter().all(|(_, v)| *v == 1.0));
    assert_eq!(r.n_frames, 5);
    let json = r.to_json();
    for key in ["mpjpe_mm", "pa_mpjpe_mm", "pck@0.15m", "pck@0.5m", "pve_mm", "accel_err_mps2", "n_frames"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn evaluate_pools_over_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g1 = random_seq(&mut rng, 4);
    let g2 = random_seq(&mut rng, 4);
    let p1 = random_seq(&mut rng, 4);
    let p2 = random_seq(&mut rng, 4);
    let a = mpjpe(&p1, &g1).unwrap();
    let b = mpjpe(&p2, &g2).unwrap();
    let r = evaluate(&[seq(p1, None), seq(p2, None)], &[seq(g1, None), seq(g2, None)], None, &EvalConfig::default()).unwrap();
    assert!((r.mpjpe - (a + b) / 2.0).abs() < 1e-9);
    assert_eq!(r.n_frames, 8);
    assert!(r.pve.is_none());
}

#[test]
fn evaluate_rejects_length_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g = random_seq(&mut rng, 3);
    let err = evaluate(&[seq(g.clone(), None)], &[seq(g.clone(), None), seq(g, None)], None, &EvalConfig::default());
    assert!(matches!(err, Err(MetricsError::LengthMismatch(1, 2))));
}

#[test]
fn evaluate_buckets_partition_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let g = random_seq(&mut rng, 10);
    let p: Vec<Vec<_>> = g.iter().map(|f| f.iter().map(|x| x + random_cloud(&mut rng, 1)[0] * 0.05).collect()).collect();
    let d: Vec<f64> = (0..10).map(|i| 12.0 + i as f64 * 1.5).collect();
    let cfg = EvalConfig { bucket_edges: Some(DEFAULT_BUCKET_EDGES.to_vec()), ..Default::default() };
    let r = evaluate(&[seq(p.clone(), Some(d.clone()))], &[seq(g.clone(), Some(d.clone()))], None, &cfg).unwrap();
    let buckets = r.distance_buckets.as_ref().unwrap();
    let total: usize = buckets.values().map(|b| b.n_frames).sum();
    assert_eq!(total, 10);
    let weighted: f64 = buckets.values().map(|b| b.mpjpe * b.n_frames as f64).sum::<f64>() / 10.0;
    assert!((weighted - r.mpjpe).abs() < 1e-9);
    // 12.0, 13.5 fall below the first edge
    assert_eq!(buckets["<14m"].n_frames, 2);
    let idx: Vec<usize> = vec![0, 1];
    let sub_p: Vec<_> = idx.iter().map(|&i| p[i].clone()).collect();
    let sub_g: Vec<_> = idx.iter().map(|&i| g[i].clone()).collect();
    assert!((buckets["<14m"].mpjpe - mpjpe(&sub_p, &sub_g).unwrap()).abs() < 1e-9);
    assert!(buckets.contains_key(">=23m"));
    assert!(r.to_json()["buckets"]["14-17m"]["mpjpe_mm"].is_number());
}

#[test]
fn bucket_labels() {
    let e = DEFAULT_BUCKET_EDGES;
    assert_eq!(bucket_label(&e, 5.0), "<14m");
    assert_eq!(bucket_label(&e, 14.0), "14-17m");
    assert_eq!(bucket_label(&e, 22.9), "20-23m");
    assert_eq!(bucket_label(&e, 30.0), ">=23m");
}

#[test]
fn evaluate_is_order_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let gts: Vec<_> = (0..6).map(|_| seq(random_seq(&mut rng, 5), None)).collect();
    let preds: Vec<_> = (0..6).map(|_| seq(random_seq(&mut rng, 5), None)).collect();
    let cfg = EvalConfig::default();
    let a = evaluate(&preds, &gts, None, &cfg).unwrap();
    let order = [3, 0, 5, 1, 4, 2];
    let p2: Vec<_> = order.iter().map(|&i| preds[i].clone()).collect();
    let g2: Vec<_> = order.iter().map(|&i| gts[i].clone()).collect();
    let b = evaluate(&p2, &g2, None, &cfg).unwrap();
    assert!((a.mpjpe - b.mpjpe).abs() < 1e-9);
    assert!((a.pa_mpjpe - b.pa_mpjpe).abs() < 1e-9);
    assert!((a.accel_err.unwrap() - b.accel_err.unwrap()).abs() < 1e-9);
    assert_eq!(a.pck, b.pck);
}

#[test]
fn global_rotation_is_scored() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let g = random_seq(&mut rng, 2);
    let r = AxisAngle::new(0.0, 0.7, 0.0).to_matrix();
    let p: Vec<Vec<_>> = g.iter().map(|f| f.iter().map(|x| r.matrix() * x).collect()).collect();
    assert!(mpjpe(&p, &g).unwrap() > 1.0);
    assert!(pa_mpjpe(&p, &g).unwrap() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pck_monotone_in_threshold(seed in 0u64..1000, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_seq(&mut rng, 2);
        let p = random_seq(&mut rng, 2);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(pck(&p, &g, lo).unwrap() <= pck(&p, &g, hi).unwrap());
    }

    #[test]
    fn metrics_are_nonnegative_and_match_oracle(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_seq(&mut rng, 3);
        let p = random_seq(&mut rng, 3);
        let m = mpjpe(&p, &g).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert!((m - loop_mpjpe(&p, &g)).abs() < 1e-9);
        prop_assert!(pa_mpjpe(&p, &g).unwrap() >= 0.0);
        prop_assert!(accel_error(&p, &g, 10.0).unwrap() >= 0.0);
    }
}
