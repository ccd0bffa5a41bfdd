//! Procedural body model with the SMPL topology (6890 vertices, 24 joints,
//! 10 shape and 207 pose directions).
//!
//! The mesh is a set of closed tubes, one per bone, around an SMPL-like rest
//! skeleton. It stands in for the licensed SMPL weights: every array has the
//! real layout and satisfies the loader invariants, and joints are exact
//! regressions of vertex rings.

use nalgebra::Vector3;

use super::{BodyModel, BodyModelArrays, NUM_BETAS, NUM_JOINTS, NUM_POSE_BASIS, NUM_VERTICES, SMPL_PARENTS};

/// Approximate neutral SMPL rest joints (meters, y up, facing +z).
pub const REST_JOINTS: [[f64; 3]; NUM_JOINTS] = [
    [-0.0018, -0.2233, 0.0282],
    [0.0695, -0.3139, 0.0239],
    [-0.0678, -0.3145, 0.0220],
    [-0.0043, -0.1144, 0.0015],
    [0.1023, -0.6897, 0.0169],
    [-0.1060, -0.6902, 0.0122],
    [0.0012, 0.0206, 0.0026],
    [0.0883, -1.0871, -0.0266],
    [-0.0883, -1.0897, -0.0300],
    [0.0022, 0.0737, 0.0282],
    [0.1199, -1.1432, 0.0961],
    [-0.1285, -1.1431, 0.1005],
    [-0.0017, 0.2871, -0.0156],
    [0.0770, 0.1954, -0.0042],
    [-0.0744, 0.1935, -0.0097],
    [0.0075, 0.3543, 0.0417],
    [0.1728, 0.2248, -0.0163],
    [-0.1691, 0.2246, -0.0242],
    [0.4347, 0.2117, -0.0415],
    [-0.4173, 0.2116, -0.0371],
    [0.6866, 0.2206, -0.0499],
    [-0.6849, 0.2224, -0.0501],
    [0.7698, 0.2128, -0.0660],
    [-0.7773, 0.2159, -0.0633],
];

struct Part {
    start: Vector3<f64>,
    end: Vector3<f64>,
    /// (lateral, depth) radii at start and end.
    r0: (f64, f64),
    r1: (f64, f64),
    segments: usize,
    mover: usize,
    blend_start: Option<usize>,
    blend_end: Option<usize>,
    /// Joint whose position is the last ring center, if it is a leaf joint.
    leaf: Option<usize>,
    bulge: bool,
}

fn joint(j: usize) -> Vector3<f64> {
    Vector3::new(REST_JOINTS[j][0], REST_JOINTS[j][1], REST_JOINTS[j][2])
}

fn has_children(j: usize) -> bool {
    SMPL_PARENTS.iter().any(|p| *p == Some(j))
}

fn bone_radii(j: usize) -> ((f64, f64), (f64, f64), usize) {
    match j {
        1 | 2 => ((0.11, 0.10), (0.095, 0.09), 16),
        3 => ((0.15, 0.11), (0.15, 0.11), 24),
        4 | 5 => ((0.085, 0.08), (0.06, 0.055), 16),
        6 => ((0.15, 0.11), (0.16, 0.115), 24),
        7 | 8 => ((0.055, 0.05), (0.04, 0.04), 16),
        9 => ((0.16, 0.115), (0.16, 0.11), 24),
        10 | 11 => ((0.045, 0.035), (0.04, 0.025), 12),
        12 => ((0.12, 0.09), (0.055, 0.05), 16),
        13 | 14 => ((0.07, 0.06), (0.06, 0.055), 12),
        15 => ((0.05, 0.05), (0.06, 0.06), 16),
        16 | 17 => ((0.06, 0.055), (0.05, 0.05), 12),
        18 | 19 => ((0.05, 0.045), (0.04, 0.038), 12),
        20 | 21 => ((0.04, 0.035), (0.03, 0.022), 12),
        _ => ((0.03, 0.02), (0.028, 0.015), 12),
    }
}

fn parts() -> Vec<Part> {
    let mut out = Vec::new();
    for j in 1..NUM_JOINTS {
        let p = SMPL_PARENTS[j].unwrap();
        let (r0, r1, segments) = bone_radii(j);
        out.push(Part {
            start: joint(p),
            end: joint(j),
            r0,
            r1,
            segments,
            mover: p,
            blend_start: SMPL_PARENTS[p],
            blend_end: has_children(j).then_some(j),
            leaf: (!has_children(j)).then_some(j),
            bulge: false,
        });
    }
    out.push(Part {
        start: joint(15),
        end: joint(15) + Vector3::new(0.0, 0.2, 0.015),
        r0: (0.095, 0.1),
        r1: (0.095, 0.1),
        segments: 21,
        mover: 15,
        blend_start: Some(12),
        blend_end: None,
        leaf: None,
        bulge: true,
    });
    out
}

/// Ring counts with `sum(rings * segments) + 2 * parts == 6890`, chosen by
/// dynamic programming to stay closest to a length-proportional allocation.
fn ring_counts(parts: &[Part]) -> Vec<usize> {
    let target = NUM_VERTICES - 2 * parts.len();
    let weight: f64 = parts.iter().map(|p| (p.end - p.start).norm() * p.segments as f64).sum();
    let density = target as f64 / weight;
    let base: Vec<usize> =
        parts.iter().map(|p| (((p.end - p.start).norm() * density).round() as usize).max(4)).collect();
    const SPAN: usize = 40;
    let inf = u64::MAX;
    let mut cost = vec![vec![inf; target + 1]; parts.len() + 1];
    let mut choice = vec![vec![0usize; target + 1]; parts.len() + 1];
    cost[0][0] = 0;
    for (i, part) in parts.iter().enumerate() {
        let lo = base[i].saturating_sub(SPAN).max(3);
        let hi = base[i] + SPAN;
        for sum in 0..=target {
            if cost[i][sum] == inf {
                continue;
            }
            for r in lo..=hi {
                let next = sum + r * part.segments;
                if next > target {
                    break;
                }
                let dev = r as i64 - base[i] as i64;
                let c = cost[i][sum] + (dev * dev) as u64;
                if c < cost[i + 1][next] {
                    cost[i + 1][next] = c;
                    choice[i + 1][next] = r;
                }
            }
        }
    }
    assert!(cost[parts.len()][target] != inf, "no ring allocation reaches the vertex budget");
    let mut rings = vec![0; parts.len()];
    let mut sum = target;
    for i in (0..parts.len()).rev() {
        let r = choice[i + 1][sum];
        rings[i] = r;
        sum -= r * parts[i].segments;
    }
    rings
}

fn frame_for(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let reference = if axis.x.abs() < 0.8 { Vector3::x() } else { Vector3::z() };
    let lateral = (reference - axis * axis.dot(&reference)).normalize();
    let depth = axis.cross(&lateral);
    (lateral, depth)
}

/// Deterministic procedural model (no randomness involved).
pub fn synthetic_body_model() -> BodyModel<f64> {
    let parts = parts();
    let rings = ring_counts(&parts);

    let mut verts: Vec<Vector3<f64>> = Vec::with_capacity(NUM_VERTICES);
    let mut radial: Vec<Vector3<f64>> = Vec::with_capacity(NUM_VERTICES);
    let mut weights = vec![0.0; NUM_VERTICES * NUM_JOINTS];
    let mut regressor = vec![0.0; NUM_JOINTS * NUM_VERTICES];
    let mut regressed = [false; NUM_JOINTS];
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for (part, &n_rings) in parts.iter().zip(&rings) {
        let axis_vec = part.end - part.start;
        let axis = axis_vec.normalize();
        let (lateral, depth) = frame_for(&axis);
        let segs = part.segments;
        let base = verts.len();
        let ring_weights = |s: f64| {
            let mut w = vec![(part.mover, 1.0)];
            if let (Some(b), true) = (part.blend_start, s < 0.25) {
                let a = 0.5 * (1.0 - s / 0.25);
                w[0].1 -= a;
                w.push((b, a));
            }
            if let (Some(b), true) = (part.blend_end, s > 0.75) {
                let a = 0.5 * (s - 0.75) / 0.25;
                w[0].1 -= a;
                w.push((b, a));
            }
            w
        };
        let mut push_vertex = |p: Vector3<f64>, r: Vector3<f64>, w: &[(usize, f64)], verts: &mut Vec<Vector3<f64>>| {
            let v = verts.len();
            verts.push(p);
            radial.push(r);
            for &(j, x) in w {
                weights[v * NUM_JOINTS + j] += x;
            }
        };
        for i in 0..n_rings {
            let s = i as f64 / (n_rings - 1) as f64;
            let (mut rx, mut rz) =
                (part.r0.0 + (part.r1.0 - part.r0.0) * s, part.r0.1 + (part.r1.1 - part.r0.1) * s);
            if part.bulge {
                let f = (1.0 - (1.6 * s - 0.8).powi(2)).sqrt();
                rx *= f;
                rz *= f;
            }
            let center = part.start + axis_vec * s;
            let w = ring_weights(s);
            for k in 0..segs {
                let phi = std::f64::consts::TAU * k as f64 / segs as f64;
                let dir = lateral * phi.cos() * rx + depth * phi.sin() * rz;
                push_vertex(center + dir, dir.normalize(), &w, &mut verts);
            }
        }
        let cap = |r: (f64, f64)| 0.6 * r.0.min(r.1);
        let r_end0 = if part.bulge { (part.r0.0 * 0.6, part.r0.1 * 0.6) } else { part.r0 };
        let r_end1 = if part.bulge { (part.r1.0 * 0.6, part.r1.1 * 0.6) } else { part.r1 };
        let pole_start = verts.len();
        push_vertex(part.start - axis * cap(r_end0), -axis, &ring_weights(0.0), &mut verts);
        let pole_end = verts.len();
        push_vertex(part.end + axis * cap(r_end1), axis, &ring_weights(1.0), &mut verts);

        let idx = |ring: usize, k: usize| (base + ring * segs + (k % segs)) as u32;
        for i in 0..n_rings - 1 {
            for k in 0..segs {
                let (a, b, c, d) = (idx(i, k), idx(i, k + 1), idx(i + 1, k + 1), idx(i + 1, k));
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
        for k in 0..segs {
            faces.push([pole_start as u32, idx(0, k + 1), idx(0, k)]);
            faces.push([pole_end as u32, idx(n_rings - 1, k), idx(n_rings - 1, k + 1)]);
        }

        let mut regress_ring = |j: usize, ring: usize| {
            if regressed[j] {
                return;
            }
            regressed[j] = true;
            for k in 0..segs {
                regressor[j * NUM_VERTICES + base + ring * segs + k] = 1.0 / segs as f64;
            }
        };
        regress_ring(part.mover, 0);
        if let Some(leaf) = part.leaf {
            regress_ring(leaf, n_rings - 1);
        }
    }
    assert_eq!(verts.len(), NUM_VERTICES);
    assert!(regressed.iter().all(|r| *r), "every joint needs a regressor ring");

    let root = joint(0);
    let belly = joint(3);
    let mut shape_dirs = vec![0.0; NUM_VERTICES * 3 * NUM_BETAS];
    for (v, p) in verts.iter().enumerate() {
        let mut set = |k: usize, d: Vector3<f64>| {
            for c in 0..3 {
                shape_dirs[(v * 3 + c) * NUM_BETAS + k] = d[c];
            }
        };
        set(0, (p - root) * 0.05);
        set(1, radial[v] * 0.02);
        set(2, Vector3::new(0.0, 0.04 * (p.y - root.y).min(0.0), 0.0));
        set(3, Vector3::new(0.04 * p.x.signum() * (p.x.abs() - 0.15).max(0.0), 0.0, 0.0));
        let g = (-((p.y - belly.y).powi(2) + p.x * p.x) / 0.02).exp();
        set(4, Vector3::new(0.0, 0.0, 0.02 * g * radial[v].z.max(0.0)));
        for k in 5..NUM_BETAS {
            let kf = k as f64;
            set(
                k,
                Vector3::new(
                    0.004 * (3.1 * kf * p.x + 1.7 * p.y).sin(),
                    0.004 * (2.3 * p.y + kf).cos(),
                    0.004 * (1.9 * p.z + 0.7 * kf * p.x).sin(),
                ),
            );
        }
    }

    let mut pose_dirs = vec![0.0; NUM_VERTICES * 3 * NUM_POSE_BASIS];
    for (v, p) in verts.iter().enumerate() {
        for j in 1..NUM_JOINTS {
            let d2 = (p - joint(j)).norm_squared();
            let locality = (-d2 / 0.01).exp();
            if locality < 1e-6 {
                continue;
            }
            for e in 0..9 {
                let q = (j - 1) * 9 + e;
                for c in 0..3 {
                    pose_dirs[(v * 3 + c) * NUM_POSE_BASIS + q] =
                        0.003 * locality * (1.3 * q as f64 + 7.1 * p.x + 3.3 * p.y + c as f64).sin();
                }
            }
        }
    }

    let template_vertices = verts.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    let parents = SMPL_PARENTS.iter().map(|p| p.map_or(-1, |p| p as i64)).collect();
    BodyModel::from_arrays(BodyModelArrays {
        template_vertices,
        shape_dirs,
        pose_dirs,
        joint_regressor: regressor,
        skin_weights: weights,
        parents,
        faces: Some(faces),
    })
    .expect("procedural model satisfies the body model invariants")
}
