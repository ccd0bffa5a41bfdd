use std::sync::OnceLock;

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synthetic::{synthetic_body_model, REST_JOINTS};
use super::*;

fn model() -> &'static BodyModel<f64> {
    static MODEL: OnceLock<BodyModel<f64>> = OnceLock::new();
    MODEL.get_or_init(synthetic_body_model)
}

fn random_pose(rng: &mut ChaCha8Rng, scale: f64) -> PoseParams<f64> {
    let mut theta = [0.0; POSE_DIM];
    theta.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    PoseParams { theta, translation: Some([rng.random_range(-1.0..1.0), 0.3, rng.random_range(5.0..9.0)]) }
}

fn random_beta(rng: &mut ChaCha8Rng) -> ShapeParams<f64> {
    let mut b = [0.0; NUM_BETAS];
    b.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
    ShapeParams::new(b).unwrap()
}

/// Unvectorized reference: homogeneous 4x4 transforms, nalgebra's own
/// exponential map, explicit loops over every array.
fn brute_force(m: &BodyModel<f64>, pose: &PoseParams<f64>, beta: &ShapeParams<f64>) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let nv = m.num_vertices();
    let mut shaped = vec![Vector3::zeros(); nv];
    for v in 0..nv {
        for c in 0..3 {
            let mut x = m.template_vertices()[v][c];
            for k in 0..NUM_BETAS {
                x += m.shape_dirs()[(v * 3 + c) * NUM_BETAS + k] * beta.beta[k];
            }
            shaped[v][c] = x;
        }
    }
    let mut rest = vec![Vector3::zeros(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        for v in 0..nv {
            rest[j] += shaped[v] * m.joint_regressor()[j * nv + v];
        }
    }
    let rots: Vec<Matrix3<f64>> = (0..NUM_JOINTS)
        .map(|j| {
            let w = Vector3::new(pose.theta[3 * j], pose.theta[3 * j + 1], pose.theta[3 * j + 2]);
            Rotation3::from_scaled_axis(w).into_inner()
        })
        .collect();
    let mut posed = shaped.clone();
    for v in 0..nv {
        for c in 0..3 {
            for j in 1..NUM_JOINTS {
                for a in 0..3 {
                    for b in 0..3 {
                        let f = rots[j][(a, b)] - if a == b { 1.0 } else { 0.0 };
                        posed[v][c] += m.pose_dirs()[(v * 3 + c) * NUM_POSE_BASIS + (j - 1) * 9 + a * 3 + b] * f;
                    }
                }
            }
        }
    }
    let local = |j: usize| {
        let mut t = Matrix4::identity();
        t.fixed_view_mut::<3, 3>(0, 0).copy_from(&rots[j]);
        let off = match m.parents()[j] {
            None => rest[j],
            Some(p) => rest[j] - rest[p],
        };
        t.fixed_view_mut::<3, 1>(0, 3).copy_from(&off);
        t
    };
    let mut world: Vec<Matrix4<f64>> = Vec::new();
    for j in 0..NUM_JOINTS {
        let w = match m.parents()[j] {
            None => local(j),
            Some(p) => world[p] * local(j),
        };
        world.push(w);
    }
    let t = pose.translation.map(|t| Vector3::new(t[0], t[1], t[2])).unwrap_or_else(Vector3::zeros);
    let joints: Vec<Vector3<f64>> = world.iter().map(|w| w.fixed_view::<3, 1>(0, 3).into_owned() + t).collect();
    let skin: Vec<Matrix4<f64>> = world
        .iter()
        .zip(&rest)
        .map(|(w, r)| {
            let mut unrest = Matrix4::identity();
            unrest.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-r));
            w * unrest
        })
        .collect();
    let mut verts = Vec::with_capacity(nv);
    for v in 0..nv {
        let mut blended = Matrix4::zeros();
        for j in 0..NUM_JOINTS {
            blended += skin[j] * m.skin_weights()[v * NUM_JOINTS + j];
        }
        let h = blended * Vector4::new(posed[v].x, posed[v].y, posed[v].z, 1.0);
        verts.push(Vector3::new(h.x, h.y, h.z) + t);
    }
    (verts, joints)
}

#[test]
fn synthetic_model_has_smpl_sizes_and_exact_rest_joints() {
    let m = model();
    assert_eq!(m.num_vertices(), NUM_VERTICES);
    assert_eq!(m.parents(), &SMPL_PARENTS);
    for (j, r) in m.mean_rest_joints().iter().enumerate() {
        let want = Vector3::new(REST_JOINTS[j][0], REST_JOINTS[j][1], REST_JOINTS[j][2]);
        assert!((r - want).norm() < 1e-12, "joint {j}");
    }
    assert!(m.faces().unwrap().len() > 13000);
}

#[test]
fn zero_pose_reproduces_template() {
    let m = model();
    let out = m.forward(&PoseParams::zero(), &ShapeParams::zero());
    for (a, b) in out.vertices.iter().zip(m.template_vertices()) {
        assert!((a - b).amax() <= 1e-7);
    }
    for (a, b) in out.joints.iter().zip(m.mean_rest_joints()) {
        assert!((a - b).amax() <= 1e-12);
    }
}

#[test]
fn global_rotation_is_rigid_about_root() {
    let m = model();
    let mut pose = PoseParams::zero();
    pose.theta[..3].copy_from_slice(&[0.3, -1.1, 0.4]);
    pose.translation = Some([0.5, -0.2, 10.0]);
    let r = Rotation3::from_scaled_axis(Vector3::new(0.3, -1.1, 0.4)).into_inner();
    let t = Vector3::new(0.5, -0.2, 10.0);
    let root = m.mean_rest_joints()[0];
    let out = m.forward(&pose, &ShapeParams::zero());
    for (v, rest) in out.vertices.iter().zip(m.template_vertices()) {
        assert!((v - (r * (rest - root) + root + t)).amax() < 1e-9);
    }
    for (j, rest) in out.joints.iter().zip(m.mean_rest_joints()) {
        assert!((j - (r * (rest - root) + root + t)).amax() < 1e-9);
    }
}

#[test]
fn forward_matches_brute_force_oracle() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2 {
        let pose = random_pose(&mut rng, 0.6);
        let beta = random_beta(&mut rng);
        let out = m.forward(&pose, &beta);
        let (verts, joints) = brute_force(m, &pose, &beta);
        for (a, b) in out.vertices.iter().zip(&verts) {
            assert!((a - b).amax() < 1e-6);
        }
        for (a, b) in out.joints.iter().zip(&joints) {
            assert!((a - b).amax() < 1e-6);
        }
        let j = m.joints_from_params(&pose, &beta);
        for (a, b) in j.iter().zip(&joints) {
            assert!((a - b).amax() < 1e-9);
        }
        // posed joints are the skinning transforms applied to rest joints
        let rest = m.rest_joints(&beta);
        let t = Vector3::new(pose.translation.unwrap()[0], pose.translation.unwrap()[1], pose.translation.unwrap()[2]);
        for ((tr, r), jj) in out.joint_transforms.iter().zip(&rest).zip(&out.joints) {
            assert!((tr.apply(r) + t - jj).amax() < 1e-12);
        }
    }
}

#[test]
fn rest_joints_are_linear_in_beta() {
    let m = model();
    let zero = m.rest_joints(&ShapeParams::zero());
    let nv = m.num_vertices();
    for j in 0..NUM_JOINTS {
        let mut want = Vector3::zeros();
        for v in 0..nv {
            want += m.template_vertices()[v] * m.joint_regressor()[j * nv + v];
        }
        assert!((zero[j] - want).amax() < 1e-12);
    }
    let mut e1 = [0.0; NUM_BETAS];
    e1[0] = 1.0;
    let one = m.rest_joints(&ShapeParams::new(e1).unwrap());
    for j in 0..NUM_JOINTS {
        let mut d = Vector3::zeros();
        for v in 0..nv {
            for c in 0..3 {
                d[c] += m.joint_regressor()[j * nv + v] * m.shape_dirs()[(v * 3 + c) * NUM_BETAS];
            }
        }
        assert!((one[j] - zero[j] - d).amax() < 1e-12);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let beta = random_beta(&mut rng);
    let got = m.rest_joints(&beta);
    for j in 0..NUM_JOINTS {
        for c in 0..3 {
            let mut want = 0.0;
            for v in 0..nv {
                let mut x = m.template_vertices()[v][c];
                for k in 0..NUM_BETAS {
                    x += m.shape_dirs()[(v * 3 + c) * NUM_BETAS + k] * beta.beta[k];
                }
                want += m.joint_regressor()[j * nv + v] * x;
            }
            assert!((got[j][c] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn rigid_equivariance_under_global_prerotation() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pose = random_pose(&mut rng, 0.5);
    pose.translation = None;
    let out = m.forward(&pose, &ShapeParams::zero());
    let pre = Rotation3::from_scaled_axis(Vector3::new(0.2, 0.9, -0.4)).into_inner();
    let root_rot = Rotation3::from_scaled_axis(Vector3::new(pose.theta[0], pose.theta[1], pose.theta[2])).into_inner();
    let composed = Rotation3::from_matrix_unchecked(pre * root_rot).scaled_axis();
    let mut rotated = pose.clone();
    rotated.theta[..3].copy_from_slice(composed.as_slice());
    let out2 = m.forward(&rotated, &ShapeParams::zero());
    let root = m.mean_rest_joints()[0];
    for (a, b) in out.vertices.iter().zip(&out2.vertices) {
        assert!((pre * (a - root) + root - b).amax() < 1e-6);
    }
}

#[test]
fn partition_of_unity_translates_vertices() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let transforms: Vec<RigidTransform<f64>> = (0..NUM_JOINTS)
        .map(|_| RigidTransform {
            rotation: Rotation3::from_scaled_axis(Vector3::new(rng.random(), rng.random(), rng.random())).into_inner(),
            translation: Vector3::new(rng.random(), rng.random(), rng.random()),
        })
        .collect();
    let d = Vector3::new(0.7, -2.0, 3.5);
    let shifted: Vec<_> = transforms.iter().map(|t| RigidTransform { rotation: t.rotation, translation: t.translation + d }).collect();
    let a = skin_vertices(m.template_vertices(), m.skin_weights(), &transforms);
    let b = skin_vertices(m.template_vertices(), m.skin_weights(), &shifted);
    for (x, y) in a.iter().zip(&b) {
        assert!((y - x - d).amax() < 1e-12);
    }
}

#[test]
fn joint_gradients_match_finite_differences() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut pose = random_pose(&mut rng, 0.8);
    pose.translation = None;
    let beta = random_beta(&mut rng);
    let g: Vec<Vector3<f64>> = (0..NUM_JOINTS).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect();
    let f = |p: &PoseParams<f64>, b: &ShapeParams<f64>| {
        m.joints_from_params(p, b).iter().zip(&g).map(|(j, g)| j.dot(g)).sum::<f64>()
    };
    let (dt, db) = m.joints_from_params_vjp(&pose, &beta, &g);
    let h = 1e-5;
    for i in 0..POSE_DIM {
        let mut p = pose.clone();
        p.theta[i] += h;
        let mut q = pose.clone();
        q.theta[i] -= h;
        let fd = (f(&p, &beta) - f(&q, &beta)) / (2.0 * h);
        let denom = fd.abs().max(dt[i].abs()).max(1e-8);
        assert!((fd - dt[i]).abs() / denom < 1e-3 || (fd - dt[i]).abs() < 1e-9, "theta {i}: {fd} vs {}", dt[i]);
    }
    for k in 0..NUM_BETAS {
        let mut bp = beta;
        bp.beta[k] += h;
        let mut bm = beta;
        bm.beta[k] -= h;
        let fd = (f(&pose, &bp) - f(&pose, &bm)) / (2.0 * h);
        let denom = fd.abs().max(db[k].abs()).max(1e-8);
        assert!((fd - db[k]).abs() / denom < 1e-3 || (fd - db[k]).abs() < 1e-9, "beta {k}");
    }
}

#[test]
fn container_round_trip_and_load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    let path = dir.path().join("model.safetensors");
    m.save(&path).unwrap();
    let back: BodyModel<f64> = load_body_model(&path).unwrap();
    assert_eq!(back.num_vertices(), NUM_VERTICES);
    assert_eq!(back.template_vertices(), m.template_vertices());
    assert_eq!(back.faces(), m.faces());

    assert!(matches!(load_body_model::<f64>(&dir.path().join("nope")), Err(BodyModelError::MissingFile(_))));

    let mut c = m.to_container();
    let (_, mut tv) = c.floats::<f64>("template_vertices").unwrap();
    tv.extend([0.0, 0.0, 0.0]);
    c.insert("template_vertices", vec![NUM_VERTICES + 1, 3], crate::container::ArrayData::F64(tv));
    assert!(matches!(body_model_from_container::<f64>(&c), Err(BodyModelError::ShapeMismatch { .. })));

    let mut c = m.to_container();
    let (_, mut reg) = c.floats::<f64>("joint_regressor").unwrap();
    for v in reg[..NUM_VERTICES].iter_mut() {
        *v *= 0.8;
    }
    c.insert("joint_regressor", vec![NUM_JOINTS, NUM_VERTICES], crate::container::ArrayData::F64(reg));
    assert!(matches!(body_model_from_container::<f64>(&c), Err(BodyModelError::InvariantViolation(_))));
}

#[test]
fn beta_range_is_enforced() {
    let mut b = [0.0; NUM_BETAS];
    b[3] = 5.5;
    assert!(ShapeParams::new(b).is_err());
    b[3] = f64::NAN;
    assert!(ShapeParams::new(b).is_err());
    b[3] = -5.0;
    assert!(ShapeParams::new(b).is_ok());
}
