//! Forward kinematics along the kinematic tree and its vector-Jacobian product.

use nalgebra::{Matrix3, Vector3};

use crate::scalar::Scalar;

/// World-space joint frames: accumulated rotation and joint position.
#[derive(Debug, Clone)]
pub struct JointFrames<T: Scalar> {
    pub rotations: Vec<Matrix3<T>>,
    pub positions: Vec<Vector3<T>>,
}

/// Composes local joint rotations down the tree. `parents[j] < j` for `j > 0`.
pub fn forward_kinematics<T: Scalar>(
    rest_joints: &[Vector3<T>],
    local_rotations: &[Matrix3<T>],
    parents: &[Option<usize>],
) -> JointFrames<T> {
    let n = rest_joints.len();
    let mut rotations = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    for j in 0..n {
        match parents[j] {
            None => {
                rotations.push(local_rotations[j]);
                positions.push(rest_joints[j]);
            }
            Some(p) => {
                let a = rotations[p] * local_rotations[j];
                let pos = rotations[p] * (rest_joints[j] - rest_joints[p]) + positions[p];
                rotations.push(a);
                positions.push(pos);
            }
        }
    }
    JointFrames { rotations, positions }
}

/// Gradients of a scalar loss with respect to the local rotations and rest
/// joints, given its gradient with respect to the posed joint positions.
pub fn forward_kinematics_vjp<T: Scalar>(
    rest_joints: &[Vector3<T>],
    local_rotations: &[Matrix3<T>],
    parents: &[Option<usize>],
    frames: &JointFrames<T>,
    grad_positions: &[Vector3<T>],
) -> (Vec<Matrix3<T>>, Vec<Vector3<T>>) {
    let n = rest_joints.len();
    let mut d_pos: Vec<Vector3<T>> = grad_positions.to_vec();
    let mut d_acc: Vec<Matrix3<T>> = vec![Matrix3::zeros(); n];
    let mut d_local: Vec<Matrix3<T>> = vec![Matrix3::zeros(); n];
    let mut d_rest: Vec<Vector3<T>> = vec![Vector3::zeros(); n];
    for j in (0..n).rev() {
        match parents[j] {
            None => {
                d_local[j] += d_acc[j];
                d_rest[j] += d_pos[j];
            }
            Some(p) => {
                let offset = rest_joints[j] - rest_joints[p];
                let ap = frames.rotations[p];
                let dp = d_pos[j];
                d_acc[p] += dp * offset.transpose();
                let d_offset = ap.transpose() * dp;
                d_rest[j] += d_offset;
                d_rest[p] -= d_offset;
                let dpp = d_pos[p] + dp;
                d_pos[p] = dpp;
                let da = d_acc[j];
                d_acc[p] += da * local_rotations[j].transpose();
                d_local[j] += ap.transpose() * da;
            }
        }
    }
    (d_local, d_rest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rot3d::{axis_angle_to_matrix, AxisAngle};

    fn chain() -> (Vec<Vector3<f64>>, Vec<Option<usize>>) {
        (
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 2.0, 0.5),
                Vector3::new(1.0, 1.0, 0.0),
            ],
            vec![None, Some(0), Some(1), Some(1)],
        )
    }

    #[test]
    fn identity_rotations_keep_rest_pose() {
        let (rest, parents) = chain();
        let rots = vec![Matrix3::identity(); 4];
        let f = forward_kinematics(&rest, &rots, &parents);
        for (a, b) in f.positions.iter().zip(&rest) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let (rest, parents) = chain();
        let aas = [
            Vector3::new(0.1, 0.5, -0.3),
            Vector3::new(-0.7, 0.2, 0.4),
            Vector3::new(0.3, 0.3, 0.9),
            Vector3::new(1.0, -0.2, 0.1),
        ];
        let g: Vec<Vector3<f64>> = (0..4)
            .map(|i| Vector3::new((i as f64).sin(), (i as f64 * 2.0).cos(), 0.5 - i as f64))
            .collect();
        let loss = |aas: &[Vector3<f64>], rest: &[Vector3<f64>]| {
            let rots: Vec<_> = aas.iter().map(|w| *axis_angle_to_matrix(&AxisAngle(*w)).matrix()).collect();
            let f = forward_kinematics(rest, &rots, &parents);
            f.positions.iter().zip(&g).map(|(p, g)| p.dot(g)).sum::<f64>()
        };
        let rots: Vec<_> = aas.iter().map(|w| *axis_angle_to_matrix(&AxisAngle(*w)).matrix()).collect();
        let frames = forward_kinematics(&rest, &rots, &parents);
        let (d_local, d_rest) = forward_kinematics_vjp(&rest, &rots, &parents, &frames, &g);
        let h = 1e-6;
        for j in 0..4 {
            let analytic = crate::rot3d::axis_angle_to_matrix_vjp(&aas[j], &d_local[j]);
            for c in 0..3 {
                let mut p = aas.to_vec();
                p[j][c] += h;
                let mut m = aas.to_vec();
                m[j][c] -= h;
                let fd = (loss(&p, &rest) - loss(&m, &rest)) / (2.0 * h);
                assert!((fd - analytic[c]).abs() < 1e-6 * (1.0 + fd.abs()), "rot {j}/{c}");
                let mut rp = rest.clone();
                rp[j][c] += h;
                let mut rm = rest.clone();
                rm[j][c] -= h;
                let fd = (loss(&aas, &rp) - loss(&aas, &rm)) / (2.0 * h);
                assert!((fd - d_rest[j][c]).abs() < 1e-6 * (1.0 + fd.abs()), "rest {j}/{c}");
            }
        }
    }
}
