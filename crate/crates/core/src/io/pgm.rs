//! Binary PGM (`P5`) images: 16-bit depth maps and 8-bit heatmaps.
//!
//! Depth is stored in units of [`DEPTH_UNIT`] mm with 0 as the invalid
//! marker. The camera model rides along in header comments:
//!
//! ```text
//! P5
//! # intrinsics <fx> <fy> <cx> <cy>
//! # world_from_camera <r00> <r01> <r02> <r10> ... <r22> <tx> <ty> <tz>
//! <width> <height>
//! 65535
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::projection::{CameraIntrinsics, DepthMap, INVALID_DEPTH};

/// mm per stored depth count.
pub const DEPTH_UNIT: f64 = 0.01;

/// Largest storable depth, mm.
pub const MAX_DEPTH: f64 = u16::MAX as f64 * DEPTH_UNIT;

fn pgm_err(msg: impl Into<String>) -> Error {
    Error::format("PGM", msg)
}

fn depth_count(z: f64) -> Result<u16> {
    if z == INVALID_DEPTH {
        return Ok(0);
    }
    let c = (z / DEPTH_UNIT).round();
    if !(1.0..=u16::MAX as f64).contains(&c) {
        return Err(Error::invalid(format!(
            "depth {z} mm is outside the storable range (0, {MAX_DEPTH}] mm"
        )));
    }
    Ok(c as u16)
}

/// The map as it reads back from disk.
pub fn quantize_depth_map(map: &DepthMap) -> Result<DepthMap> {
    let depth = map
        .depths()
        .iter()
        .map(|&z| depth_count(z).map(|c| c as f64 * DEPTH_UNIT))
        .collect::<Result<Vec<_>>>()?;
    DepthMap::new(map.width(), map.height(), depth, *map.intrinsics(), *map.camera_pose())
}

pub fn write_depth(w: &mut impl Write, map: &DepthMap) -> Result<()> {
    let k = map.intrinsics();
    let pose = map.camera_pose().to_row_major();
    let mut head = format!("P5\n# intrinsics {} {} {} {}\n# world_from_camera", k.fx, k.fy, k.cx, k.cy);
    for v in pose {
        head.push_str(&format!(" {v}"));
    }
    head.push_str(&format!("\n{} {}\n65535\n", map.width(), map.height()));
    let mut body = Vec::with_capacity(map.depths().len() * 2);
    for &z in map.depths() {
        body.extend_from_slice(&depth_count(z)?.to_be_bytes());
    }
    let io = |e| pgm_err(format!("write failed: {e}"));
    w.write_all(head.as_bytes()).map_err(io)?;
    w.write_all(&body).map_err(io)
}

struct PgmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    comments: Vec<String>,
}

fn read_header(r: &mut impl BufRead) -> Result<PgmHeader> {
    let mut tokens: Vec<String> = Vec::new();
    let mut comments = Vec::new();
    let mut line = String::new();
    while tokens.len() < 4 {
        line.clear();
        let n = r
            .read_line(&mut line)
            .map_err(|e| pgm_err(format!("unreadable header: {e}")))?;
        if n == 0 {
            return Err(pgm_err("header ends early"));
        }
        let content = match line.find('#') {
            Some(i) => {
                comments.push(line[i + 1..].trim().to_string());
                &line[..i]
            }
            None => &line[..],
        };
        tokens.extend(content.split_whitespace().map(str::to_string));
    }
    if tokens[0] != "P5" {
        return Err(pgm_err(format!("expected binary PGM magic `P5`, found `{}`", tokens[0])));
    }
    let num = |s: &str, what: &str| -> Result<u32> {
        s.parse().map_err(|_| pgm_err(format!("bad {what} `{s}`")))
    };
    let width = num(&tokens[1], "width")? as usize;
    let height = num(&tokens[2], "height")? as usize;
    let maxval = num(&tokens[3], "maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(pgm_err("image size and maxval must be positive, maxval ≤ 65535"));
    }
    Ok(PgmHeader {
        width,
        height,
        maxval,
        comments,
    })
}

fn floats(comment: &str, key: &str, n: usize) -> Option<Result<Vec<f64>>> {
    let rest = comment.strip_prefix(key)?;
    let vals: std::result::Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
    Some(match vals {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(pgm_err(format!("`{key}` comment needs {n} numbers"))),
    })
}

pub fn read_depth(r: &mut impl BufRead) -> Result<DepthMap> {
    let h = read_header(r)?;
    if h.maxval != 65535 {
        return Err(pgm_err("depth maps must be 16-bit (maxval 65535)"));
    }
    let mut intrinsics = None;
    let mut pose = None;
    for c in &h.comments {
        if let Some(v) = floats(c, "intrinsics", 4) {
            let v = v?;
            intrinsics = Some(CameraIntrinsics {
                fx: v[0],
                fy: v[1],
                cx: v[2],
                cy: v[3],
            });
        } else if let Some(v) = floats(c, "world_from_camera", 12) {
            let v: [f64; 12] = v?.try_into().expect("length checked");
            pose = Some(RigidTransform::from_row_major(&v)?);
        }
    }
    let intrinsics = intrinsics.ok_or_else(|| pgm_err("missing `# intrinsics` comment"))?;
    let pose = pose.ok_or_else(|| pgm_err("missing `# world_from_camera` comment"))?;
    let mut body = vec![0u8; h.width * h.height * 2];
    r.read_exact(&mut body)
        .map_err(|e| pgm_err(format!("truncated pixel data: {e}")))?;
    let depth = body
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 * DEPTH_UNIT)
        .collect();
    DepthMap::new(h.width, h.height, depth, intrinsics, pose)
}

pub fn save_depth(path: &Path, map: &DepthMap) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_depth(&mut w, map)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_depth(&mut BufReader::new(f))
}

/// 8-bit grayscale image of `counts` (row-major, `width` columns), scaled so
/// the largest count is white.
pub fn write_gray8(w: &mut impl Write, counts: &[u64], width: usize) -> std::io::Result<()> {
    let height = counts.len().checked_div(width).unwrap_or(0);
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let px: Vec<u8> = counts
        .iter()
        .map(|&c| ((c as f64 / max as f64) * 255.0).round() as u8)
        .collect();
    w.write_all(&px)
}
