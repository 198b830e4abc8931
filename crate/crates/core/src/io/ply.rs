//! Binary PLY export of a Gaussian cloud.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::GaussianCloud;
use crate::sh::SH_COEFFS;

/// Vertex property names in file order.
pub fn property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..SH_COEFFS).map(|k| format!("sh_{k}")));
    names
}

/// Writes positions, log-scales, quaternions, opacity logits and SH
/// coefficients as little-endian doubles.
pub fn save_ply(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(header, "element vertex {}", cloud.len());
    for name in property_names() {
        let _ = writeln!(header, "property double {name}");
    }
    header += "end_header\n";
    let mut bytes = header.into_bytes();
    for i in 0..cloud.len() {
        let row = cloud.positions[i]
            .iter()
            .chain(&cloud.log_scales[i])
            .chain(&cloud.rotations[i])
            .chain(std::iter::once(&cloud.opacity_logits[i]))
            .chain(&cloud.sh[i]);
        for v in row {
            bytes.extend(v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`save_ply`].
pub fn load_ply(path: &Path) -> Result<GaussianCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |offset: usize, message: &str| Error::Malformed {
        path: path.to_path_buf(),
        offset: offset as u64,
        line: None,
        message: message.to_string(),
    };
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| malformed(0, "missing end_header"))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| malformed(0, "header is not UTF-8"))?;
    let mut count = None;
    let mut props = Vec::new();
    for line in header.lines() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["element", "vertex", n] => count = n.parse::<usize>().ok(),
            ["property", "double", name] => props.push(name.to_string()),
            ["property", ..] => return Err(malformed(0, "only double properties are supported")),
            _ => {}
        }
    }
    if props != property_names() {
        return Err(malformed(0, "unexpected vertex properties"));
    }
    let n = count.ok_or_else(|| malformed(0, "missing vertex count"))?;
    let stride = props.len() * 8;
    if bytes.len() - end != n * stride {
        return Err(malformed(end, "vertex data length does not match the header"));
    }
    let mut cloud = GaussianCloud::new(0);
    for i in 0..n {
        let row: Vec<f64> = bytes[end + i * stride..end + (i + 1) * stride]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cloud.positions.push(row[0..3].try_into().unwrap());
        cloud.log_scales.push(row[3..6].try_into().unwrap());
        cloud.rotations.push(row[6..10].try_into().unwrap());
        cloud.opacity_logits.push(row[10]);
        cloud.sh.push(row[11..].try_into().unwrap());
    }
    Ok(cloud)
}
