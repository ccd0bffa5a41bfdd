//! Rotation and kinematic-chain ops.

use std::rc::Rc;

use nalgebra::{Matrix3, Vector3};

use super::{Graph, Tensor, Var};
use crate::rot3d::{log_unchecked, matrix_from_row_major, matrix_to_axis_angle_vjp, sixd_to_matrix_total, sixd_to_matrix_vjp};
use crate::scalar::Scalar;
use crate::smpl_body::{forward_kinematics, forward_kinematics_vjp};

fn row_major<T: Scalar>(m: &Matrix3<T>, out: &mut [T]) {
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// `[.., 6] -> [.., 3, 3]` (row-major matrices) by Gram-Schmidt decoding.
    pub fn sixd_to_rotmat(&self, x: Var) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.cols(), 6, "6D input");
        let n = xv.rows();
        let mut out = vec![T::zero(); n * 9];
        for i in 0..n {
            row_major(&sixd_to_matrix_total(&xv.data[i * 6..i * 6 + 6]), &mut out[i * 9..i * 9 + 9]);
        }
        let mut shape = xv.shape[..xv.shape.len() - 1].to_vec();
        shape.extend([3, 3]);
        self.push_op(Tensor::new(shape, out), &[x], move |g, grads| {
            grads.accumulate_with(x, |d| {
                for i in 0..n {
                    let gm = matrix_from_row_major(&g.data[i * 9..i * 9 + 9]);
                    let v = sixd_to_matrix_vjp(&xv.data[i * 6..i * 6 + 6], &gm);
                    for k in 0..6 {
                        d[i * 6 + k] += v[k];
                    }
                }
            });
        })
    }

    /// `[.., 3, 3] -> [.., 3]` log map (inputs assumed to be rotations).
    pub fn rotmat_to_axis_angle(&self, x: Var) -> Var {
        let xv = self.value(x);
        let s = &xv.shape;
        assert!(s.len() >= 2 && s[s.len() - 1] == 3 && s[s.len() - 2] == 3, "rotation matrix input");
        let n = xv.numel() / 9;
        let mut out = vec![T::zero(); n * 3];
        for i in 0..n {
            let w = log_unchecked(&matrix_from_row_major(&xv.data[i * 9..i * 9 + 9]));
            out[i * 3..i * 3 + 3].copy_from_slice(w.0.as_slice());
        }
        let mut shape = s[..s.len() - 2].to_vec();
        shape.push(3);
        self.push_op(Tensor::new(shape, out), &[x], move |g, grads| {
            grads.accumulate_with(x, |d| {
                for i in 0..n {
                    let r = matrix_from_row_major(&xv.data[i * 9..i * 9 + 9]);
                    let gw = Vector3::new(g.data[i * 3], g.data[i * 3 + 1], g.data[i * 3 + 2]);
                    let gm = matrix_to_axis_angle_vjp(&r, &gw);
                    for rr in 0..3 {
                        for cc in 0..3 {
                            d[i * 9 + rr * 3 + cc] += gm[(rr, cc)];
                        }
                    }
                }
            });
        })
    }

    /// Posed joint positions `[F, J, 3]` from local rotations `[F, J, 3, 3]`
    /// with fixed rest joints.
    pub fn forward_kinematics(&self, rot: Var, rest: Rc<Vec<Vector3<T>>>, parents: Rc<Vec<Option<usize>>>) -> Var {
        let rv = self.value(rot);
        let j = rest.len();
        let f = rv.numel() / (j * 9);
        assert_eq!(f * j * 9, rv.numel(), "rotation tensor size");
        let locals: Vec<Vec<Matrix3<T>>> = (0..f)
            .map(|t| (0..j).map(|k| matrix_from_row_major(&rv.data[(t * j + k) * 9..(t * j + k + 1) * 9])).collect())
            .collect();
        let frames: Vec<_> = locals.iter().map(|l| forward_kinematics(&rest, l, &parents)).collect();
        let mut out = Vec::with_capacity(f * j * 3);
        for fr in &frames {
            for p in &fr.positions {
                out.extend_from_slice(p.as_slice());
            }
        }
        let mut shape = rv.shape[..rv.shape.len() - 2].to_vec();
        shape.push(3);
        self.push_op(Tensor::new(shape, out), &[rot], move |g, grads| {
            grads.accumulate_with(rot, |d| {
                for t in 0..f {
                    let gp: Vec<Vector3<T>> = (0..j).map(|k| Vector3::from_column_slice(&g.data[(t * j + k) * 3..(t * j + k + 1) * 3])).collect();
                    let (d_local, _) = forward_kinematics_vjp(&rest, &locals[t], &parents, &frames[t], &gp);
                    for (k, m) in d_local.iter().enumerate() {
                        let o = (t * j + k) * 9;
                        for rr in 0..3 {
                            for cc in 0..3 {
                                d[o + rr * 3 + cc] += m[(rr, cc)];
                            }
                        }
                    }
                }
            });
        })
    }
}
