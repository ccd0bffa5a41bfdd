//! Differentiable SMPL body model: shape and pose blendshapes, joint
//! regression, forward kinematics and linear blend skinning.
//!
//! Vertices and joints are meters in the model frame. The model is immutable
//! after construction and every evaluation is a pure function of its inputs.

pub mod kinematics;
pub mod synthetic;

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::container::{ArrayContainer, ArrayData, ContainerError};
use crate::rot3d::{axis_angle_to_matrix, axis_angle_to_matrix_vjp, AxisAngle};
use crate::scalar::Scalar;

pub use kinematics::{forward_kinematics, forward_kinematics_vjp, JointFrames};

pub const NUM_VERTICES: usize = 6890;
pub const NUM_JOINTS: usize = 24;
pub const NUM_BETAS: usize = 10;
pub const NUM_POSE_BASIS: usize = (NUM_JOINTS - 1) * 9;
pub const POSE_DIM: usize = NUM_JOINTS * 3;

/// SMPL kinematic tree (joint 0 is the pelvis/root).
pub const SMPL_PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
    Some(20),
    Some(21),
];

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

const ROW_SUM_TOL: f64 = 1e-5;
const BETA_LIMIT: f64 = 5.0;

#[derive(Debug, Error)]
pub enum BodyModelError {
    #[error("body model file not found: {0}")]
    MissingFile(String),
    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("body model invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Container(ContainerError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl From<ContainerError> for BodyModelError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::NotFound(p) => BodyModelError::MissingFile(p),
            other => BodyModelError::Container(other),
        }
    }
}

/// Per-frame pose: 24 axis-angle joint rotations (joint 0 is the global
/// orientation) and an optional root translation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseParams<T: Scalar> {
    pub theta: [T; POSE_DIM],
    pub translation: Option<[T; 3]>,
}

impl<T: Scalar> PoseParams<T> {
    pub fn zero() -> Self {
        Self { theta: [T::zero(); POSE_DIM], translation: None }
    }

    pub fn from_slice(theta: &[T], translation: Option<[T; 3]>) -> Result<Self, BodyModelError> {
        if theta.len() != POSE_DIM {
            return Err(BodyModelError::InvalidParams(format!("theta has {} entries, expected {POSE_DIM}", theta.len())));
        }
        if theta.iter().chain(translation.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(BodyModelError::InvalidParams("non-finite pose value".into()));
        }
        let mut t = [T::zero(); POSE_DIM];
        t.copy_from_slice(theta);
        Ok(Self { theta: t, translation })
    }

    pub fn joint(&self, j: usize) -> AxisAngle<T> {
        AxisAngle::from_slice(&self.theta[3 * j..3 * j + 3])
    }

    pub fn rotations(&self) -> Vec<Matrix3<T>> {
        (0..NUM_JOINTS).map(|j| axis_angle_to_matrix(&self.joint(j)).into_inner()).collect()
    }
}

/// Shape coefficients, validated to the usual `|beta_i| <= 5` range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams<T: Scalar> {
    pub beta: [T; NUM_BETAS],
}

impl<T: Scalar> ShapeParams<T> {
    pub fn zero() -> Self {
        Self { beta: [T::zero(); NUM_BETAS] }
    }

    pub fn new(beta: [T; NUM_BETAS]) -> Result<Self, BodyModelError> {
        for b in beta {
            if !b.is_finite() || b.abs() > T::lit(BETA_LIMIT) {
                return Err(BodyModelError::InvalidParams(format!("beta component {b} outside [-5, 5]")));
            }
        }
        Ok(Self { beta })
    }
}

/// Skinning transform of one joint: maps rest-space points to posed space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T: Scalar> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Scalar> RigidTransform<T> {
    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }
}

#[derive(Debug, Clone)]
pub struct BodyOutput<T: Scalar> {
    pub vertices: Vec<Vector3<T>>,
    pub joints: Vec<Vector3<T>>,
    pub joint_transforms: Vec<RigidTransform<T>>,
}

/// SMPL model arrays. Layouts are row-major:
/// `shape_dirs[v][c][k]`, `pose_dirs[v][c][p]`, `joint_regressor[j][v]`,
/// `skin_weights[v][j]`.
#[derive(Debug, Clone)]
pub struct BodyModel<T: Scalar> {
    template_vertices: Vec<Vector3<T>>,
    shape_dirs: Vec<T>,
    pose_dirs: Vec<T>,
    joint_regressor: Vec<T>,
    skin_weights: Vec<T>,
    parents: Vec<Option<usize>>,
    faces: Option<Vec<[u32; 3]>>,
    rest_joints: Vec<Vector3<T>>,
    joint_shape_dirs: Vec<T>,
}

/// Raw arrays accepted by [`BodyModel::from_arrays`] (flattened, row-major).
#[derive(Debug, Clone)]
pub struct BodyModelArrays<T> {
    pub template_vertices: Vec<T>,
    pub shape_dirs: Vec<T>,
    pub pose_dirs: Vec<T>,
    pub joint_regressor: Vec<T>,
    pub skin_weights: Vec<T>,
    pub parents: Vec<i64>,
    pub faces: Option<Vec<[u32; 3]>>,
}

fn check_len(name: &str, len: usize, expected: Vec<usize>) -> Result<(), BodyModelError> {
    if len != expected.iter().product::<usize>() {
        return Err(BodyModelError::ShapeMismatch { name: name.into(), expected, found: vec![len] });
    }
    Ok(())
}

impl<T: Scalar> BodyModel<T> {
    /// Validates and assembles a model with any vertex count and 24 joints.
    pub fn from_arrays(a: BodyModelArrays<T>) -> Result<Self, BodyModelError> {
        if a.template_vertices.len() % 3 != 0 || a.template_vertices.is_empty() {
            return Err(BodyModelError::ShapeMismatch {
                name: "template_vertices".into(),
                expected: vec![0, 3],
                found: vec![a.template_vertices.len()],
            });
        }
        let nv = a.template_vertices.len() / 3;
        check_len("shape_dirs", a.shape_dirs.len(), vec![nv, 3, NUM_BETAS])?;
        check_len("pose_dirs", a.pose_dirs.len(), vec![nv, 3, NUM_POSE_BASIS])?;
        check_len("joint_regressor", a.joint_regressor.len(), vec![NUM_JOINTS, nv])?;
        check_len("skin_weights", a.skin_weights.len(), vec![nv, NUM_JOINTS])?;
        check_len("parents", a.parents.len(), vec![NUM_JOINTS])?;

        let all_finite = a
            .template_vertices
            .iter()
            .chain(&a.shape_dirs)
            .chain(&a.pose_dirs)
            .chain(&a.joint_regressor)
            .chain(&a.skin_weights)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(BodyModelError::InvariantViolation("non-finite model value".into()));
        }
        for (name, rows, width, data) in [
            ("joint_regressor", NUM_JOINTS, nv, &a.joint_regressor),
            ("skin_weights", nv, NUM_JOINTS, &a.skin_weights),
        ] {
            for r in 0..rows {
                let row = &data[r * width..(r + 1) * width];
                if row.iter().any(|v| *v < T::zero()) {
                    return Err(BodyModelError::InvariantViolation(format!("{name} row {r} has negative entries")));
                }
                let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(BodyModelError::InvariantViolation(format!("{name} row {r} sums to {sum}")));
                }
            }
        }
        let mut parents = Vec::with_capacity(NUM_JOINTS);
        for (j, &p) in a.parents.iter().enumerate() {
            match (j, p) {
                (0, p) if p < 0 => parents.push(None),
                (0, p) => {
                    return Err(BodyModelError::InvariantViolation(format!("root has parent {p}")));
                }
                (j, p) if p >= 0 && (p as usize) < j => parents.push(Some(p as usize)),
                (j, p) => {
                    return Err(BodyModelError::InvariantViolation(format!(
                        "joint {j} has parent {p}; parents must precede children"
                    )))
                }
            }
        }
        if let Some(faces) = &a.faces {
            if faces.iter().flatten().any(|&i| i as usize >= nv) {
                return Err(BodyModelError::InvariantViolation("face index out of range".into()));
            }
        }

        let template_vertices: Vec<Vector3<T>> =
            a.template_vertices.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        let mut rest_joints = vec![Vector3::zeros(); NUM_JOINTS];
        let mut joint_shape_dirs = vec![T::zero(); NUM_JOINTS * 3 * NUM_BETAS];
        for j in 0..NUM_JOINTS {
            let row = &a.joint_regressor[j * nv..(j + 1) * nv];
            for (v, &w) in row.iter().enumerate() {
                if w == T::zero() {
                    continue;
                }
                rest_joints[j] += template_vertices[v] * w;
                for c in 0..3 {
                    for k in 0..NUM_BETAS {
                        joint_shape_dirs[(j * 3 + c) * NUM_BETAS + k] +=
                            w * a.shape_dirs[(v * 3 + c) * NUM_BETAS + k];
                    }
                }
            }
        }
        Ok(Self {
            template_vertices,
            shape_dirs: a.shape_dirs,
            pose_dirs: a.pose_dirs,
            joint_regressor: a.joint_regressor,
            skin_weights: a.skin_weights,
            parents,
            faces: a.faces,
            rest_joints,
            joint_shape_dirs,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn faces(&self) -> Option<&[[u32; 3]]> {
        self.faces.as_deref()
    }

    pub fn template_vertices(&self) -> &[Vector3<T>] {
        &self.template_vertices
    }

    pub fn skin_weights(&self) -> &[T] {
        &self.skin_weights
    }

    pub fn shape_dirs(&self) -> &[T] {
        &self.shape_dirs
    }

    pub fn pose_dirs(&self) -> &[T] {
        &self.pose_dirs
    }

    pub fn joint_regressor(&self) -> &[T] {
        &self.joint_regressor
    }

    /// Joint offsets per unit beta, `[j][c][k]`.
    pub fn joint_shape_dirs(&self) -> &[T] {
        &self.joint_shape_dirs
    }

    /// Rest-pose joints at zero shape.
    pub fn mean_rest_joints(&self) -> &[Vector3<T>] {
        &self.rest_joints
    }

    /// `joint_regressor * (template + shape_dirs * beta)`.
    pub fn rest_joints(&self, beta: &ShapeParams<T>) -> Vec<Vector3<T>> {
        (0..NUM_JOINTS)
            .map(|j| {
                let mut p = self.rest_joints[j];
                for c in 0..3 {
                    for k in 0..NUM_BETAS {
                        p[c] += self.joint_shape_dirs[(j * 3 + c) * NUM_BETAS + k] * beta.beta[k];
                    }
                }
                p
            })
            .collect()
    }

    pub fn shaped_vertices(&self, beta: &ShapeParams<T>) -> Vec<Vector3<T>> {
        self.template_vertices
            .iter()
            .enumerate()
            .map(|(v, t)| {
                let mut p = *t;
                for c in 0..3 {
                    let dirs = &self.shape_dirs[(v * 3 + c) * NUM_BETAS..(v * 3 + c + 1) * NUM_BETAS];
                    p[c] += dirs.iter().zip(&beta.beta).fold(T::zero(), |acc, (d, b)| acc + *d * *b);
                }
                p
            })
            .collect()
    }

    /// Full evaluation `V = M(theta, beta)`, translation applied last.
    pub fn forward(&self, pose: &PoseParams<T>, beta: &ShapeParams<T>) -> BodyOutput<T> {
        let rotations = pose.rotations();
        let rest = self.rest_joints(beta);
        let mut vertices = self.shaped_vertices(beta);

        let mut pose_feature = [T::zero(); NUM_POSE_BASIS];
        for j in 1..NUM_JOINTS {
            let r = rotations[j] - Matrix3::identity();
            for a in 0..3 {
                for b in 0..3 {
                    pose_feature[(j - 1) * 9 + a * 3 + b] = r[(a, b)];
                }
            }
        }
        if pose_feature.iter().any(|v| *v != T::zero()) {
            for (v, p) in vertices.iter_mut().enumerate() {
                for c in 0..3 {
                    let dirs = &self.pose_dirs[(v * 3 + c) * NUM_POSE_BASIS..(v * 3 + c + 1) * NUM_POSE_BASIS];
                    p[c] += dirs.iter().zip(&pose_feature).fold(T::zero(), |acc, (d, f)| acc + *d * *f);
                }
            }
        }

        let frames = forward_kinematics(&rest, &rotations, &self.parents);
        let joint_transforms = skinning_transforms(&frames, &rest);
        let mut vertices = skin_vertices(&vertices, &self.skin_weights, &joint_transforms);
        let mut joints = frames.positions;
        if let Some(t) = pose.translation {
            let t = Vector3::new(t[0], t[1], t[2]);
            vertices.iter_mut().for_each(|v| *v += t);
            joints.iter_mut().for_each(|j| *j += t);
        }
        BodyOutput { vertices, joints, joint_transforms }
    }

    /// Posed joints only (kinematics, no skinning).
    pub fn joints_from_params(&self, pose: &PoseParams<T>, beta: &ShapeParams<T>) -> Vec<Vector3<T>> {
        let rest = self.rest_joints(beta);
        let mut joints = forward_kinematics(&rest, &pose.rotations(), &self.parents).positions;
        if let Some(t) = pose.translation {
            let t = Vector3::new(t[0], t[1], t[2]);
            joints.iter_mut().for_each(|j| *j += t);
        }
        joints
    }

    /// Gradients of `sum_j <grad_j, joint_j>` with respect to theta and beta.
    pub fn joints_from_params_vjp(
        &self,
        pose: &PoseParams<T>,
        beta: &ShapeParams<T>,
        grad_joints: &[Vector3<T>],
    ) -> ([T; POSE_DIM], [T; NUM_BETAS]) {
        let rest = self.rest_joints(beta);
        let rotations = pose.rotations();
        let frames = forward_kinematics(&rest, &rotations, &self.parents);
        let (d_rot, d_rest) = forward_kinematics_vjp(&rest, &rotations, &self.parents, &frames, grad_joints);
        let mut d_theta = [T::zero(); POSE_DIM];
        for j in 0..NUM_JOINTS {
            let g = axis_angle_to_matrix_vjp(&pose.joint(j).0, &d_rot[j]);
            d_theta[3 * j..3 * j + 3].copy_from_slice(g.as_slice());
        }
        let mut d_beta = [T::zero(); NUM_BETAS];
        for j in 0..NUM_JOINTS {
            for c in 0..3 {
                for k in 0..NUM_BETAS {
                    d_beta[k] += d_rest[j][c] * self.joint_shape_dirs[(j * 3 + c) * NUM_BETAS + k];
                }
            }
        }
        (d_theta, d_beta)
    }

    pub fn to_container(&self) -> ArrayContainer {
        let nv = self.num_vertices();
        let f64s = |v: &[T]| ArrayData::F64(v.iter().map(|x| x.as_f64()).collect());
        let mut c = ArrayContainer::new();
        let tv: Vec<T> = self.template_vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        c.insert("template_vertices", vec![nv, 3], f64s(&tv));
        c.insert("shape_dirs", vec![nv, 3, NUM_BETAS], f64s(&self.shape_dirs));
        c.insert("pose_dirs", vec![nv, 3, NUM_POSE_BASIS], f64s(&self.pose_dirs));
        c.insert("joint_regressor", vec![NUM_JOINTS, nv], f64s(&self.joint_regressor));
        c.insert("skin_weights", vec![nv, NUM_JOINTS], f64s(&self.skin_weights));
        let parents = self.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect();
        c.insert("parents", vec![NUM_JOINTS], ArrayData::I64(parents));
        if let Some(faces) = &self.faces {
            let flat = faces.iter().flatten().map(|&i| i as i64).collect();
            c.insert("faces", vec![faces.len(), 3], ArrayData::I64(flat));
        }
        c.metadata.insert("kind".into(), "smpl_body_model".into());
        c
    }

    pub fn save(&self, path: &Path) -> Result<(), BodyModelError> {
        Ok(self.to_container().save(path)?)
    }

    pub fn cast<U: Scalar>(&self) -> BodyModel<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        let conv3 = |v: &[Vector3<T>]| {
            v.iter().map(|p| Vector3::new(U::lit(p.x.as_f64()), U::lit(p.y.as_f64()), U::lit(p.z.as_f64()))).collect()
        };
        BodyModel {
            template_vertices: conv3(&self.template_vertices),
            shape_dirs: conv(&self.shape_dirs),
            pose_dirs: conv(&self.pose_dirs),
            joint_regressor: conv(&self.joint_regressor),
            skin_weights: conv(&self.skin_weights),
            parents: self.parents.clone(),
            faces: self.faces.clone(),
            rest_joints: conv3(&self.rest_joints),
            joint_shape_dirs: conv(&self.joint_shape_dirs),
        }
    }
}

/// Builds a model from container arrays and checks the SMPL sizes.
pub fn body_model_from_container<T: Scalar>(c: &ArrayContainer) -> Result<BodyModel<T>, BodyModelError> {
    let expect = |name: &str, found: &[usize], expected: &[usize]| -> Result<(), BodyModelError> {
        if found != expected {
            return Err(BodyModelError::ShapeMismatch {
                name: name.into(),
                expected: expected.to_vec(),
                found: found.to_vec(),
            });
        }
        Ok(())
    };
    let (s, template_vertices) = c.floats::<T>("template_vertices")?;
    expect("template_vertices", &s, &[NUM_VERTICES, 3])?;
    let (s, shape_dirs) = c.floats::<T>("shape_dirs")?;
    expect("shape_dirs", &s, &[NUM_VERTICES, 3, NUM_BETAS])?;
    let (s, pose_dirs) = c.floats::<T>("pose_dirs")?;
    expect("pose_dirs", &s, &[NUM_VERTICES, 3, NUM_POSE_BASIS])?;
    let (s, joint_regressor) = c.floats::<T>("joint_regressor")?;
    expect("joint_regressor", &s, &[NUM_JOINTS, NUM_VERTICES])?;
    let (s, skin_weights) = c.floats::<T>("skin_weights")?;
    expect("skin_weights", &s, &[NUM_VERTICES, NUM_JOINTS])?;
    let (s, parents) = c.ints("parents")?;
    expect("parents", &s, &[NUM_JOINTS])?;
    let faces = if c.arrays.contains_key("faces") {
        let (s, f) = c.ints("faces")?;
        if s.len() != 2 || s[1] != 3 {
            return Err(BodyModelError::ShapeMismatch { name: "faces".into(), expected: vec![0, 3], found: s });
        }
        if f.iter().any(|&i| i < 0 || i > u32::MAX as i64) {
            return Err(BodyModelError::InvariantViolation("negative face index".into()));
        }
        Some(f.chunks_exact(3).map(|t| [t[0] as u32, t[1] as u32, t[2] as u32]).collect())
    } else {
        None
    };
    BodyModel::from_arrays(BodyModelArrays {
        template_vertices,
        shape_dirs,
        pose_dirs,
        joint_regressor,
        skin_weights,
        parents,
        faces,
    })
}

/// Loads a body model from the named-array container at `path`.
pub fn load_body_model<T: Scalar>(path: &Path) -> Result<BodyModel<T>, BodyModelError> {
    let c = ArrayContainer::load(path)?;
    body_model_from_container(&c)
}

/// Per-joint skinning transforms `x -> A_j (x - J_j) + P_j`.
pub fn skinning_transforms<T: Scalar>(frames: &JointFrames<T>, rest_joints: &[Vector3<T>]) -> Vec<RigidTransform<T>> {
    frames
        .rotations
        .iter()
        .zip(&frames.positions)
        .zip(rest_joints)
        .map(|((a, p), j)| RigidTransform { rotation: *a, translation: p - a * j })
        .collect()
}

/// Linear blend skinning: each vertex is moved by the weight-blended joint transforms.
pub fn skin_vertices<T: Scalar>(
    vertices: &[Vector3<T>],
    skin_weights: &[T],
    transforms: &[RigidTransform<T>],
) -> Vec<Vector3<T>> {
    let nj = transforms.len();
    vertices
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let mut rot = Matrix3::zeros();
            let mut tr = Vector3::zeros();
            for (j, t) in transforms.iter().enumerate() {
                let w = skin_weights[v * nj + j];
                if w != T::zero() {
                    rot += t.rotation * w;
                    tr += t.translation * w;
                }
            }
            rot * p + tr
        })
        .collect()
}

#[cfg(test)]
mod tests;
