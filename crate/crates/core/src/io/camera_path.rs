//! Camera-path files for rendering arbitrary views.
//!
//! One view per line, whitespace separated:
//! `name time qw qx qy qz tx ty tz fx fy cx cy width height`, where the
//! pose is world-to-camera as in COLMAP `images.txt` and `time` is the
//! normalized capture time in `[0, 1]`. `#` starts a comment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{matrix_to_quat, quat_to_matrix, Camera, ThermalView};

#[derive(Debug, Clone, PartialEq)]
pub struct PathView {
    pub name: String,
    pub time: f64,
    pub camera: Camera,
}

const FIELDS: usize = 15;

pub fn parse_camera_path(text: &str, path: &Path) -> Result<Vec<PathView>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line_offset = offset;
        offset += raw.len() as u64;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            offset: line_offset,
            line: Some(i + 1),
            message,
        };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != FIELDS {
            return Err(malformed(format!("expected {FIELDS} fields, found {}", parts.len())));
        }
        let mut nums = [0.0f64; FIELDS - 1];
        for (k, p) in parts[1..].iter().enumerate() {
            nums[k] = p
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| malformed(format!("invalid number '{p}'")))?;
        }
        let time = nums[0];
        if !(0.0..=1.0).contains(&time) {
            return Err(malformed(format!("time {time} outside [0, 1]")));
        }
        let q = [nums[1], nums[2], nums[3], nums[4]];
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if qn == 0.0 {
            return Err(malformed("zero quaternion".into()));
        }
        let (w, h) = (nums[12], nums[13]);
        if w.fract() != 0.0 || h.fract() != 0.0 || w < 1.0 || h < 1.0 {
            return Err(malformed("image size must be positive integers".into()));
        }
        let rot = quat_to_matrix([q[0] / qn, q[1] / qn, q[2] / qn, q[3] / qn]);
        let camera = Camera::new(
            nums[8],
            nums[9],
            nums[10],
            nums[11],
            w as usize,
            h as usize,
            rot,
            Vector3::new(nums[5], nums[6], nums[7]),
        )
        .map_err(|e| malformed(e.to_string()))?;
        out.push(PathView {
            name: parts[0].to_string(),
            time,
            camera,
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: camera path has no views", path.display())));
    }
    Ok(out)
}

pub fn load_camera_path(path: &Path) -> Result<Vec<PathView>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_camera_path(&text, path)
}

/// Serializes views in the format read by [`parse_camera_path`].
pub fn format_camera_path(views: &[&ThermalView]) -> String {
    let mut s = String::from("# name time qw qx qy qz tx ty tz fx fy cx cy width height\n");
    for v in views {
        let c = &v.camera;
        let q = matrix_to_quat(&c.rotation);
        let _ = writeln!(
            s,
            "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {} {}",
            v.name,
            v.time_norm,
            q[0],
            q[1],
            q[2],
            q[3],
            c.translation.x,
            c.translation.y,
            c.translation.z,
            c.fx,
            c.fy,
            c.cx,
            c.cy,
            c.width,
            c.height
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let p = Path::new("path.txt");
        let ok = "# header\nv0 0.5 1 0 0 0 0 0 4 20 20 15.5 15.5 32 32\n";
        let views = parse_camera_path(ok, p).unwrap();
        assert_eq!(views.len(), 1);
        assert_eq!(views[0].camera.width, 32);
        let bad = "v0 0.5 1 0 0 0 0 0 4 20 20 15.5 15.5 32\n";
        let msg = parse_camera_path(bad, p).unwrap_err().to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(parse_camera_path("v0 2 1 0 0 0 0 0 4 20 20 15.5 15.5 32 32", p).is_err());
        assert!(parse_camera_path("# nothing\n", p).is_err());
    }
}
