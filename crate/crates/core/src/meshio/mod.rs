//! Triangle meshes: data model, OBJ/PLY I/O, unit-sphere normalization and
//! vertex permutations.

mod obj;
mod ply;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::objectives::EdgeList;
use crate::tensor::{Real, Shape, Tensor3};

pub use obj::{obj_string, parse_obj, parse_obj_report, write_obj};
pub use ply::{index_colors, ply_bytes, write_ply_colored};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: face index {index} out of range for {count} vertices")]
    FaceIndex { line: usize, index: i64, count: usize },
    #[error("mesh has no vertices")]
    NoVertices,
    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    InvalidFace { face: usize, index: u32, count: usize },
    #[error("face {face} is degenerate (repeated vertex {index})")]
    DegenerateFace { face: usize, index: u32 },
    #[error("all vertices coincide; cannot normalize")]
    ZeroScale,
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("expected {expected} colors, got {got}")]
    ColorCount { expected: usize, got: usize },
    #[error("tensor of shape {0} is not a single [1,3,V] mesh")]
    TensorShape(Shape),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MeshError> = std::result::Result<T, E>;

/// Vertex positions plus zero-based triangle indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub name: Option<String>,
}

impl Mesh {
    /// Builds a mesh after checking index bounds and degenerate faces.
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let m = Self {
            vertices,
            faces,
            name: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() {
            return Err(MeshError::NoVertices);
        }
        let count = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            for &index in f {
                if index as usize >= count {
                    return Err(MeshError::InvalidFace { face: i, index, count });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                let index = if f[0] == f[1] || f[0] == f[2] { f[0] } else { f[1] };
                return Err(MeshError::DegenerateFace { face: i, index });
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i as usize]);
        let u = sub(b, a);
        let v = sub(c, a);
        norm(cross(u, v)) * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.triangle_area(f)).sum()
    }

    /// `[1, 3, V]` tensor: channel k holds coordinate k of every vertex.
    pub fn to_tensor<T: Real>(&self) -> Tensor3<T> {
        let v = self.vertices.len();
        Tensor3::from_fn(Shape::new(1, 3, v), |_, c, i| T::of(self.vertices[i][c]))
    }

    /// Mesh with the coordinates of batch element `n` of `t` and this mesh's faces.
    pub fn with_tensor_vertices<T: Real>(&self, t: &Tensor3<T>, n: usize) -> Result<Self> {
        let s = t.shape();
        if s.c != 3 || s.v != self.vertices.len() || n >= s.n {
            return Err(MeshError::TensorShape(s));
        }
        let vertices = (0..s.v)
            .map(|i| [0, 1, 2].map(|c| t.get(n, c, i).to_f64().unwrap_or(f64::NAN)))
            .collect();
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            name: self.name.clone(),
        })
    }

    pub fn centroid(&self) -> [f64; 3] {
        let inv = 1.0 / self.vertices.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.vertices {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|x| x * inv)
    }

    pub fn map_vertices(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&p| f(p)).collect(),
            faces: self.faces.clone(),
            name: self.name.clone(),
        }
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Translation and scale removed by [`normalize_unit_sphere`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub centroid: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| (p[k] - self.centroid[k]) / self.scale)
    }

    pub fn invert(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| p[k] * self.scale + self.centroid[k])
    }

    /// Maps a normalized mesh back into the original frame.
    pub fn denormalize(&self, mesh: &Mesh) -> Mesh {
        mesh.map_vertices(|p| self.invert(p))
    }
}

/// Centers the mesh at its vertex centroid and scales the farthest vertex to
/// radius 1.
pub fn normalize_unit_sphere(mesh: &Mesh) -> Result<(Mesh, Normalization)> {
    if mesh.vertices.is_empty() {
        return Err(MeshError::NoVertices);
    }
    let centroid = mesh.centroid();
    let scale = mesh
        .vertices
        .iter()
        .map(|&p| norm(sub(p, centroid)))
        .fold(0.0f64, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(MeshError::ZeroScale);
    }
    let t = Normalization { centroid, scale };
    Ok((mesh.map_vertices(|p| t.apply(p)), t))
}

/// A bijection on vertex indices: output vertex `i` is input vertex `perm[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexPermutation {
    perm: Vec<usize>,
}

impl VertexPermutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() {
                return Err(MeshError::InvalidPermutation(format!(
                    "index {p} out of range for length {}",
                    perm.len()
                )));
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(MeshError::InvalidPermutation(format!("index {p} repeated")));
            }
        }
        Ok(Self { perm })
    }

    pub fn identity(len: usize) -> Self {
        Self {
            perm: (0..len).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut perm: Vec<usize> = (0..len).collect();
        perm.shuffle(rng);
        Self { perm }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Self { perm: inv }
    }

    /// `self` applied after `first`: vertex `i` of the result is input vertex
    /// `first[self[i]]`.
    pub fn after(&self, first: &Self) -> Self {
        Self {
            perm: self.perm.iter().map(|&i| first.perm[i]).collect(),
        }
    }
}

/// Reorders vertices by `perm` and remaps face indices so the surface is
/// unchanged.
pub fn permute_vertices(mesh: &Mesh, perm: &VertexPermutation) -> Result<Mesh> {
    if perm.len() != mesh.vertices.len() {
        return Err(MeshError::InvalidPermutation(format!(
            "length {} for {} vertices",
            perm.len(),
            mesh.vertices.len()
        )));
    }
    let inv = perm.inverse();
    Ok(Mesh {
        vertices: perm.as_slice().iter().map(|&p| mesh.vertices[p]).collect(),
        faces: mesh
            .faces
            .iter()
            .map(|f| f.map(|i| inv.as_slice()[i as usize] as u32))
            .collect(),
        name: mesh.name.clone(),
    })
}

/// Both orientations of every distinct face edge, sorted.
pub fn build_edge_list(mesh: &Mesh) -> EdgeList {
    let mut pairs = Vec::with_capacity(mesh.faces.len() * 6);
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            pairs.push((a, b));
            pairs.push((b, a));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    EdgeList::from_sorted_unchecked(pairs)
}
