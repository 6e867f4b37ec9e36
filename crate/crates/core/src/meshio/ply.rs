use std::path::Path;

use super::{Mesh, MeshError, Result};
use crate::util::write_atomic;

/// HSV hue ramp over vertex index (`h = i / V`, full saturation and value).
/// Vertex 0 is pure red.
pub fn index_colors(count: usize) -> Vec<[u8; 3]> {
    (0..count)
        .map(|i| hsv_to_rgb(i as f64 / count.max(1) as f64, 1.0, 1.0))
        .collect()
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Binary little-endian PLY with float xyz and uchar rgb per vertex.
pub fn ply_bytes(mesh: &Mesh, colors: &[[u8; 3]]) -> Result<Vec<u8>> {
    if colors.len() != mesh.vertex_count() {
        return Err(MeshError::ColorCount {
            expected: mesh.vertex_count(),
            got: colors.len(),
        });
    }
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertex_count(),
        mesh.face_count()
    );
    let mut out = header.into_bytes();
    for (p, c) in mesh.vertices.iter().zip(colors) {
        for &x in p {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out.extend_from_slice(c);
    }
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_ply_colored(mesh: &Mesh, colors: &[[u8; 3]], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ply_bytes(mesh, colors)?;
    write_atomic(path, &bytes).map_err(|source| MeshError::Io {
        path: path.to_owned(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_starts_red_and_walks_hue() {
        let c = index_colors(6);
        assert_eq!(c[0], [255, 0, 0]);
        assert_eq!(c[1], [255, 255, 0]);
        assert_eq!(c[2], [0, 255, 0]);
        assert_eq!(c[4], [0, 0, 255]);
    }

    #[test]
    fn header_and_size() {
        let m = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let bytes = ply_bytes(&m, &index_colors(3)).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 3\n"));
        assert!(text.contains("format binary_little_endian 1.0"));
        let header_len = text.find("end_header\n").unwrap() + "end_header\n".len();
        assert_eq!(bytes.len() - header_len, 3 * 15 + 13);
        assert!(matches!(ply_bytes(&m, &[[0; 3]]), Err(MeshError::ColorCount { .. })));
    }
}
