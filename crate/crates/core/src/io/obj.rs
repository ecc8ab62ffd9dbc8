//! Wavefront OBJ export for meshes (positions and triangular faces only).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;

pub fn write_obj(w: &mut impl Write, mesh: &TriangleMesh) -> std::io::Result<()> {
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
    }
    for t in mesh.triangles() {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

pub fn save_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_obj(&mut w, mesh)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    #[test]
    fn indices_are_one_based() {
        let mesh = TriangleMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 0.5, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_obj(&mut buf, &mesh).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "v 0 0 0\nv 1 0 0\nv 0 0.5 0\nf 1 2 3\n");
    }
}
