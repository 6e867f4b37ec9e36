use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, SynthError};
use crate::meshio::{norm, sub, Mesh};

pub const JOINT_COUNT: usize = 12;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "root",
    "spine",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "r_shoulder",
    "r_elbow",
    "l_hip",
    "l_knee",
    "r_hip",
    "r_knee",
];

const PARENTS: [Option<usize>; JOINT_COUNT] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(1),
    Some(4),
    Some(1),
    Some(6),
    Some(0),
    Some(8),
    Some(0),
    Some(10),
];

// y up, +x is the body's left, +z is forward; units are roughly metres.
const OFFSETS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.22, 0.0],
    [0.0, 0.28, 0.0],
    [0.0, 0.08, 0.0],
    [0.17, 0.24, 0.0],
    [0.27, 0.0, 0.0],
    [-0.17, 0.24, 0.0],
    [-0.27, 0.0, 0.0],
    [0.09, -0.04, 0.0],
    [0.0, -0.42, 0.0],
    [-0.09, -0.04, 0.0],
    [0.0, -0.42, 0.0],
];

/// Capsule owned by each joint: axis vector in the joint frame and radius.
const SEGMENTS: [([f64; 3], f64); JOINT_COUNT] = [
    ([0.0, 0.22, 0.0], 0.11),
    ([0.0, 0.28, 0.0], 0.12),
    ([0.0, 0.08, 0.0], 0.045),
    ([0.0, 0.20, 0.0], 0.09),
    ([0.27, 0.0, 0.0], 0.045),
    ([0.25, 0.0, 0.0], 0.038),
    ([-0.27, 0.0, 0.0], 0.045),
    ([-0.25, 0.0, 0.0], 0.038),
    ([0.0, -0.42, 0.0], 0.07),
    ([0.0, -0.42, 0.0], 0.05),
    ([0.0, -0.42, 0.0], 0.07),
    ([0.0, -0.42, 0.0], 0.05),
];

const SIDES: usize = 8;
const CAP_RINGS: usize = 2;
const RING_SPACING: f64 = 0.07;
const SKIN_TEMPERATURE: f64 = 0.1;
/// Blend weights below this are dropped and the row renormalized.
const SKIN_PRUNE: f64 = 0.1;

const DEFAULT_RANGES: &str = include_str!("../../data/pose_ranges.json");

/// Shape parameters: per-bone length and radius scales and a global height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams {
    pub length_scale: [f64; JOINT_COUNT],
    pub radius_scale: [f64; JOINT_COUNT],
    pub height_scale: f64,
}

impl IdentityParams {
    pub fn neutral() -> Self {
        Self {
            length_scale: [1.0; JOINT_COUNT],
            radius_scale: [1.0; JOINT_COUNT],
            height_scale: 1.0,
        }
    }
}

/// Per-joint Euler angles in degrees, `[x, y, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub angles: [[f64; 3]; JOINT_COUNT],
}

impl PoseParams {
    pub fn rest() -> Self {
        Self {
            angles: [[0.0; 3]; JOINT_COUNT],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRange {
    pub joint: String,
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl JointRange {
    pub fn axes(&self) -> [[f64; 2]; 3] {
        [self.x, self.y, self.z]
    }
}

/// Sampling box for joint angles, one entry per joint in joint order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRanges {
    pub axes_order: String,
    pub units: String,
    pub joints: Vec<JointRange>,
}

impl Default for PoseRanges {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_RANGES).expect("bundled pose ranges parse")
    }
}

impl PoseRanges {
    pub fn validate(&self) -> Result<()> {
        if self.joints.len() != JOINT_COUNT {
            return Err(SynthError::Ranges(format!(
                "{} joint ranges for {JOINT_COUNT} joints",
                self.joints.len()
            )));
        }
        for (j, r) in self.joints.iter().enumerate() {
            if r.joint != JOINT_NAMES[j] {
                return Err(SynthError::Ranges(format!("range {j} is for `{}`, expected `{}`", r.joint, JOINT_NAMES[j])));
            }
            for (axis, [lo, hi]) in ["x", "y", "z"].iter().zip(r.axes()) {
                if !(lo <= hi) {
                    return Err(SynthError::Ranges(format!("{}.{axis}: inverted range ({lo}, {hi})", r.joint)));
                }
            }
        }
        Ok(())
    }

    /// Every range collapsed to zero (always samples the rest pose).
    pub fn zero() -> Self {
        let mut r = Self::default();
        for j in &mut r.joints {
            j.x = [0.0; 2];
            j.y = [0.0; 2];
            j.z = [0.0; 2];
        }
        r
    }

    pub fn contains(&self, pose: &PoseParams) -> bool {
        self.joints
            .iter()
            .zip(&pose.angles)
            .all(|(r, a)| r.axes().iter().zip(a).all(|([lo, hi], &x)| *lo <= x && x <= *hi))
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Length and radius scales in `[0.7, 1.3]`, height in `[0.9, 1.1]`.
pub fn sample_identity<R: Rng + ?Sized>(rng: &mut R) -> IdentityParams {
    let mut p = IdentityParams::neutral();
    for s in &mut p.length_scale {
        *s = uniform(rng, 0.7, 1.3);
    }
    for s in &mut p.radius_scale {
        *s = uniform(rng, 0.7, 1.3);
    }
    p.height_scale = uniform(rng, 0.9, 1.1);
    p
}

pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, ranges: &PoseRanges) -> Result<PoseParams> {
    ranges.validate()?;
    let mut pose = PoseParams::rest();
    for (angles, r) in pose.angles.iter_mut().zip(&ranges.joints) {
        for (a, [lo, hi]) in angles.iter_mut().zip(r.axes()) {
            *a = uniform(rng, lo, hi);
        }
    }
    Ok(pose)
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn mat_vec(a: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

/// Rotation applying x, then y, then z (`Rz · Ry · Rx`), angles in degrees.
pub fn euler_xyz(deg: [f64; 3]) -> Mat3 {
    let [x, y, z] = deg.map(|d| d * PI / 180.0);
    let (sx, cx) = x.sin_cos();
    let (sy, cy) = y.sin_cos();
    let (sz, cz) = z.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

/// Where a template vertex sits on its capsule, independent of body scale.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CapsuleCoord {
    segment: usize,
    /// Fraction of the segment length along the axis.
    axial: f64,
    /// Offset along the axis in radii (hemispherical caps).
    cap: f64,
    /// Radial offset in radii along the ring direction.
    radial: [f64; 2],
}

/// Articulated capsule humanoid driven by linear blend skinning.
#[derive(Debug, Clone)]
pub struct KinematicBody {
    parents: [Option<usize>; JOINT_COUNT],
    offsets: [[f64; 3]; JOINT_COUNT],
    coords: Vec<CapsuleCoord>,
    faces: Vec<[u32; 3]>,
    /// Up to 4 `(joint, weight)` pairs per vertex; weights sum to 1.
    weights: Vec<Vec<(usize, f64)>>,
    template: Mesh,
}

impl Default for KinematicBody {
    fn default() -> Self {
        Self::new()
    }
}

struct Joints {
    rest: [[f64; 3]; JOINT_COUNT],
    posed: [[f64; 3]; JOINT_COUNT],
    rot: [Mat3; JOINT_COUNT],
}

impl KinematicBody {
    pub fn new() -> Self {
        let mut coords = Vec::new();
        let mut faces = Vec::new();
        for (s, (axis, _)) in SEGMENTS.iter().enumerate() {
            let rings = ((norm(*axis) / RING_SPACING).round() as usize + 1).clamp(2, 8);
            append_capsule(s, rings, &mut coords, &mut faces);
        }
        let mut body = Self {
            parents: PARENTS,
            offsets: OFFSETS,
            coords,
            faces,
            weights: Vec::new(),
            template: Mesh {
                vertices: Vec::new(),
                faces: Vec::new(),
                name: None,
            },
        };
        let neutral = IdentityParams::neutral();
        let rest = body.rest_vertices(&neutral);
        body.weights = rest.iter().map(|&p| skin_weights(p, &body.joint_frames(&neutral, None).rest)).collect();
        body.template = Mesh::new(rest, body.faces.clone()).expect("capsule template is valid").with_name("template");
        body
    }

    pub fn joint_count(&self) -> usize {
        JOINT_COUNT
    }

    pub fn parents(&self) -> &[Option<usize>; JOINT_COUNT] {
        &self.parents
    }

    pub fn rest_offsets(&self) -> &[[f64; 3]; JOINT_COUNT] {
        &self.offsets
    }

    pub fn vertex_count(&self) -> usize {
        self.coords.len()
    }

    pub fn template(&self) -> &Mesh {
        &self.template
    }

    pub fn skin_weights(&self) -> &[Vec<(usize, f64)>] {
        &self.weights
    }

    /// Capsule (joint) that generated each vertex.
    pub fn vertex_segment(&self, vertex: usize) -> usize {
        self.coords[vertex].segment
    }

    fn joint_frames(&self, alpha: &IdentityParams, beta: Option<&PoseParams>) -> Joints {
        let h = alpha.height_scale;
        let mut rest = [[0.0; 3]; JOINT_COUNT];
        let mut posed = [[0.0; 3]; JOINT_COUNT];
        let mut rot = [IDENTITY; JOINT_COUNT];
        for j in 0..JOINT_COUNT {
            let local = beta.map_or(IDENTITY, |b| euler_xyz(b.angles[j]));
            match self.parents[j] {
                None => {
                    rot[j] = local;
                }
                Some(p) => {
                    let s = alpha.length_scale[p] * h;
                    let off = self.offsets[j].map(|o| o * s);
                    let moved = mat_vec(&rot[p], off);
                    for k in 0..3 {
                        rest[j][k] = rest[p][k] + off[k];
                        posed[j][k] = posed[p][k] + moved[k];
                    }
                    rot[j] = mat_mul(&rot[p], &local);
                }
            }
        }
        Joints { rest, posed, rot }
    }

    fn rest_vertices(&self, alpha: &IdentityParams) -> Vec<[f64; 3]> {
        let joints = self.joint_frames(alpha, None);
        let h = alpha.height_scale;
        let frames: Vec<_> = SEGMENTS
            .iter()
            .enumerate()
            .map(|(s, (axis, radius))| {
                let len = norm(*axis);
                let dir = axis.map(|a| a / len);
                let (u, w) = perpendicular_frame(dir);
                (
                    dir,
                    u,
                    w,
                    len * alpha.length_scale[s] * h,
                    radius * alpha.radius_scale[s] * h,
                )
            })
            .collect();
        self.coords
            .iter()
            .map(|c| {
                let (dir, u, w, len, radius) = frames[c.segment];
                let start = joints.rest[c.segment];
                let along = c.axial * len + c.cap * radius;
                [0, 1, 2].map(|k| {
                    start[k] + dir[k] * along + (u[k] * c.radial[0] + w[k] * c.radial[1]) * radius
                })
            })
            .collect()
    }

    /// Poses the α-scaled template with blended joint transforms.
    ///
    /// Each vertex moves by `Σ_j w_j [(R_j - I)(x - r_j) + (p_j - r_j)]`, the
    /// displacement form of linear blend skinning, so the rest pose
    /// reproduces the scaled template exactly.
    pub fn skin_mesh(&self, alpha: &IdentityParams, beta: &PoseParams) -> Mesh {
        let rest = self.rest_vertices(alpha);
        let joints = self.joint_frames(alpha, Some(beta));
        let deltas: Vec<Mat3> = joints
            .rot
            .iter()
            .map(|r| {
                let mut d = *r;
                for (i, row) in d.iter_mut().enumerate() {
                    row[i] -= 1.0;
                }
                d
            })
            .collect();
        let vertices = rest
            .iter()
            .zip(&self.weights)
            .map(|(&x, ws)| {
                let mut disp = [0.0; 3];
                for &(j, w) in ws {
                    let local = sub(x, joints.rest[j]);
                    let turned = mat_vec(&deltas[j], local);
                    let shift = sub(joints.posed[j], joints.rest[j]);
                    for k in 0..3 {
                        disp[k] += w * (turned[k] + shift[k]);
                    }
                }
                [x[0] + disp[0], x[1] + disp[1], x[2] + disp[2]]
            })
            .collect();
        Mesh {
            vertices,
            faces: self.faces.clone(),
            name: None,
        }
    }

    /// Joint positions after posing.
    pub fn posed_joints(&self, alpha: &IdentityParams, beta: &PoseParams) -> [[f64; 3]; JOINT_COUNT] {
        self.joint_frames(alpha, Some(beta)).posed
    }
}

fn perpendicular_frame(dir: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if dir[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let u = crate::meshio::cross(dir, helper);
    let nu = norm(u);
    let u = u.map(|a| a / nu);
    let w = crate::meshio::cross(dir, u);
    (u, w)
}

fn append_capsule(segment: usize, body_rings: usize, coords: &mut Vec<CapsuleCoord>, faces: &mut Vec<[u32; 3]>) {
    let base = coords.len() as u32;
    let ring_dir = |k: usize| {
        let phi = 2.0 * PI * k as f64 / SIDES as f64;
        [phi.cos(), phi.sin()]
    };
    // (axial, cap, radial scale) for every ring, start pole to end pole
    let mut rings: Vec<(f64, f64, f64)> = Vec::new();
    for k in 1..=CAP_RINGS {
        let theta = k as f64 * (PI / 2.0) / (CAP_RINGS + 1) as f64;
        rings.push((0.0, -theta.cos(), theta.sin()));
    }
    for j in 0..body_rings {
        rings.push((j as f64 / (body_rings - 1) as f64, 0.0, 1.0));
    }
    for k in (1..=CAP_RINGS).rev() {
        let theta = k as f64 * (PI / 2.0) / (CAP_RINGS + 1) as f64;
        rings.push((1.0, theta.cos(), theta.sin()));
    }

    coords.push(CapsuleCoord {
        segment,
        axial: 0.0,
        cap: -1.0,
        radial: [0.0, 0.0],
    });
    for &(axial, cap, r) in &rings {
        for k in 0..SIDES {
            let d = ring_dir(k);
            coords.push(CapsuleCoord {
                segment,
                axial,
                cap,
                radial: [d[0] * r, d[1] * r],
            });
        }
    }
    coords.push(CapsuleCoord {
        segment,
        axial: 1.0,
        cap: 1.0,
        radial: [0.0, 0.0],
    });

    let sides = SIDES as u32;
    let ring = |r: usize, k: u32| base + 1 + r as u32 * sides + (k % sides);
    let last_pole = base + 1 + rings.len() as u32 * sides;
    for k in 0..sides {
        faces.push([base, ring(0, k + 1), ring(0, k)]);
    }
    for r in 0..rings.len() - 1 {
        for k in 0..sides {
            let (a, b, c, d) = (ring(r, k), ring(r, k + 1), ring(r + 1, k), ring(r + 1, k + 1));
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    let r = rings.len() - 1;
    for k in 0..sides {
        faces.push([last_pole, ring(r, k), ring(r, k + 1)]);
    }
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let t = ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / (ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2])).clamp(0.0, 1.0);
    norm(sub(p, [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]]))
}

/// Softmax over the two nearest capsules by surface distance.
fn skin_weights(p: [f64; 3], joint_rest: &[[f64; 3]; JOINT_COUNT]) -> Vec<(usize, f64)> {
    let mut dist: Vec<(usize, f64)> = SEGMENTS
        .iter()
        .enumerate()
        .map(|(s, (axis, radius))| {
            let a = joint_rest[s];
            let b = [a[0] + axis[0], a[1] + axis[1], a[2] + axis[2]];
            (s, segment_distance(p, a, b) - radius)
        })
        .collect();
    dist.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    let nearest = &dist[..2];
    let d0 = nearest[0].1;
    let raw: Vec<(usize, f64)> = nearest
        .iter()
        .map(|&(s, d)| (s, (-(d - d0) / SKIN_TEMPERATURE).exp()))
        .collect();
    let z: f64 = raw.iter().map(|r| r.1).sum();
    let kept: Vec<(usize, f64)> = raw.into_iter().map(|(s, w)| (s, w / z)).filter(|r| r.1 >= SKIN_PRUNE).collect();
    let z: f64 = kept.iter().map(|r| r.1).sum();
    kept.into_iter().map(|(s, w)| (s, w / z)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tree_is_topologically_ordered() {
        let body = KinematicBody::new();
        assert_eq!(body.parents().iter().filter(|p| p.is_none()).count(), 1);
        for (j, p) in body.parents().iter().enumerate() {
            if let Some(p) = p {
                assert!(*p < j);
            }
        }
    }

    #[test]
    fn weights_are_row_stochastic() {
        let body = KinematicBody::new();
        assert_eq!(body.skin_weights().len(), body.vertex_count());
        for row in body.skin_weights() {
            assert!(!row.is_empty() && row.len() <= 4);
            let s: f64 = row.iter().map(|r| r.1).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let v = body.vertex_count();
        assert!((600..=1500).contains(&v), "{v} vertices");
    }

    #[test]
    fn rest_pose_reproduces_template_bit_exactly() {
        let body = KinematicBody::new();
        let m = body.skin_mesh(&IdentityParams::neutral(), &PoseParams::rest());
        assert_eq!(m.vertices, body.template().vertices);
        assert_eq!(m.faces, body.template().faces);
    }

    #[test]
    fn rest_pose_of_scaled_identity_is_scaled_template() {
        let body = KinematicBody::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let alpha = sample_identity(&mut rng);
        let m = body.skin_mesh(&alpha, &PoseParams::rest());
        assert_eq!(m.vertices, body.rest_vertices(&alpha));
    }

    #[test]
    fn zero_ranges_give_rest_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pose = sample_pose(&mut rng, &PoseRanges::zero()).unwrap();
        assert_eq!(pose, PoseParams::rest());
    }

    #[test]
    fn inverted_range_is_rejected() {
        let mut ranges = PoseRanges::default();
        ranges.joints[3].y = [5.0, -5.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_pose(&mut rng, &ranges), Err(SynthError::Ranges(_))));
    }

    #[test]
    fn euler_order_is_x_then_y_then_z() {
        // x by 90 sends +y to +z; then y by 90 sends +z to +x
        let r = euler_xyz([90.0, 90.0, 0.0]);
        let v = mat_vec(&r, [0.0, 1.0, 0.0]);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
    }
}
