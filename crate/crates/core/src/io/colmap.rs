//! COLMAP sparse models in the text and binary layouts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{normalize_quat, quat_to_matrix, Camera};

/// Camera models accepted by the parser. Distortion models are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraModel {
    SimplePinhole,
    Pinhole,
}

impl CameraModel {
    pub fn id(self) -> i32 {
        match self {
            CameraModel::SimplePinhole => 0,
            CameraModel::Pinhole => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CameraModel::SimplePinhole => "SIMPLE_PINHOLE",
            CameraModel::Pinhole => "PINHOLE",
        }
    }

    pub fn num_params(self) -> usize {
        match self {
            CameraModel::SimplePinhole => 3,
            CameraModel::Pinhole => 4,
        }
    }

    fn from_id(id: i32) -> Option<Self> {
        match id {
            0 => Some(CameraModel::SimplePinhole),
            1 => Some(CameraModel::Pinhole),
            _ => None,
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "SIMPLE_PINHOLE" => Some(CameraModel::SimplePinhole),
            "PINHOLE" => Some(CameraModel::Pinhole),
            _ => None,
        }
    }
}

/// Names of COLMAP's other camera models, so rejections can name them.
fn colmap_model_name(id: i32) -> &'static str {
    match id {
        2 => "SIMPLE_RADIAL",
        3 => "RADIAL",
        4 => "OPENCV",
        5 => "OPENCV_FISHEYE",
        6 => "FULL_OPENCV",
        7 => "FOV",
        8 => "SIMPLE_RADIAL_FISHEYE",
        9 => "RADIAL_FISHEYE",
        10 => "THIN_PRISM_FISHEYE",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intrinsics {
    pub id: u32,
    pub model: CameraModel,
    pub width: u64,
    pub height: u64,
    pub params: Vec<f64>,
}

impl Intrinsics {
    /// `(fx, fy, cx, cy)`.
    pub fn pinhole(&self) -> (f64, f64, f64, f64) {
        match self.model {
            CameraModel::SimplePinhole => (self.params[0], self.params[0], self.params[1], self.params[2]),
            CameraModel::Pinhole => (self.params[0], self.params[1], self.params[2], self.params[3]),
        }
    }
}

/// A registered image: world-to-camera pose as COLMAP stores it.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneView {
    pub image_id: u32,
    pub name: String,
    /// Rotation quaternion `(w, x, y, z)`.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    /// Rank of `name` in lexicographic order.
    pub frame_index: usize,
    /// Observed keypoints `(x, y, point3d_id)`; id -1 marks no track.
    pub points2d: Vec<([f64; 2], i64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedPoint {
    pub id: u64,
    pub position: [f64; 3],
    pub rgb: [u8; 3],
    pub error: f64,
    /// `(image_id, point2d_index)` pairs.
    pub track: Vec<(u32, u32)>,
}

impl SeedPoint {
    /// Grayscale radiance seed: channel mean scaled to `[0, 1]`.
    pub fn radiance(&self) -> f64 {
        self.rgb.iter().map(|&c| c as f64).sum::<f64>() / 3.0 / 255.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseScene {
    pub cameras: BTreeMap<u32, Intrinsics>,
    /// Sorted by frame index.
    pub views: Vec<SceneView>,
    pub points3d: Vec<SeedPoint>,
}

impl SparseScene {
    /// Checks references, assigns frame indices by filename order and sorts
    /// the views accordingly.
    pub fn finalize(mut self) -> Result<Self> {
        if self.points3d.is_empty() {
            return Err(Error::Data("no seed points".into()));
        }
        if self.views.is_empty() {
            return Err(Error::Data("no registered images".into()));
        }
        for v in &self.views {
            if !self.cameras.contains_key(&v.camera_id) {
                return Err(Error::Data(format!(
                    "image {} references missing camera {}",
                    v.name, v.camera_id
                )));
            }
        }
        self.views.sort_by(|a, b| a.name.cmp(&b.name));
        for w in self.views.windows(2) {
            if w[0].name == w[1].name {
                return Err(Error::Data(format!("duplicate image name {}", w[0].name)));
            }
        }
        for (i, v) in self.views.iter_mut().enumerate() {
            v.frame_index = i;
        }
        Ok(self)
    }

    /// Pinhole camera of a view at the model's native resolution.
    pub fn camera(&self, view: &SceneView) -> Result<Camera> {
        let intr = self
            .cameras
            .get(&view.camera_id)
            .ok_or_else(|| Error::Data(format!("missing camera {}", view.camera_id)))?;
        let (fx, fy, cx, cy) = intr.pinhole();
        let rot = quat_to_matrix(normalize_quat(view.qvec));
        Camera::new(
            fx,
            fy,
            cx,
            cy,
            intr.width as usize,
            intr.height as usize,
            rot,
            Vector3::from(view.tvec),
        )
        .map_err(|e| Error::Data(format!("image {}: {e}", view.name)))
    }
}

/// Encoding of a sparse model on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColmapFormat {
    Text,
    Binary,
}

/// Directory holding the model files: `path` itself or `path/sparse/0`.
pub fn model_dir(path: &Path) -> PathBuf {
    let nested = path.join("sparse").join("0");
    if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    }
}

/// Parses a COLMAP model, preferring the binary files when both exist.
pub fn parse_colmap(path: &Path) -> Result<SparseScene> {
    let dir = model_dir(path);
    if dir.join("cameras.bin").exists() {
        parse_colmap_binary(&dir)
    } else if dir.join("cameras.txt").exists() {
        parse_colmap_text(&dir)
    } else {
        Err(Error::Data(format!("no COLMAP model found in {}", path.display())))
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

// ---- text ----

struct TextLine<'a> {
    path: &'a Path,
    number: usize,
    offset: u64,
    tokens: Vec<(&'a str, u64)>,
}

impl<'a> TextLine<'a> {
    fn err(&self, offset: u64, message: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            offset,
            line: Some(self.number),
            message: message.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, i: usize, what: &str) -> Result<T> {
        let Some(&(tok, off)) = self.tokens.get(i) else {
            let end = self.tokens.last().map(|(t, o)| o + t.len() as u64).unwrap_or(self.offset);
            return Err(self.err(end, format!("missing {what}")));
        };
        tok.parse()
            .map_err(|_| self.err(off, format!("invalid {what} '{tok}'")))
    }
}

/// Non-comment, non-blank lines (optionally keeping blank ones, which carry
/// meaning in images.txt) with byte offsets of each token.
fn text_lines<'a>(path: &'a Path, text: &'a str, keep_blank: bool) -> Vec<TextLine<'a>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line = raw.trim_end_matches(['\n', '\r']);
        let start = offset;
        offset += raw.len() as u64;
        if line.trim_start().starts_with('#') || (!keep_blank && line.trim().is_empty()) {
            continue;
        }
        let base = line.as_ptr() as usize;
        let tokens = line
            .split_whitespace()
            .map(|t| (t, start + (t.as_ptr() as usize - base) as u64))
            .collect();
        out.push(TextLine {
            path,
            number: i + 1,
            offset: start,
            tokens,
        });
    }
    out
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read(path)?;
    String::from_utf8(bytes).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to() as u64,
        line: None,
        message: "not valid UTF-8".into(),
    })
}

pub fn parse_colmap_text(dir: &Path) -> Result<SparseScene> {
    let cameras = parse_cameras_text(&dir.join("cameras.txt"))?;
    let views = parse_images_text(&dir.join("images.txt"))?;
    let points3d = parse_points_text(&dir.join("points3D.txt"))?;
    SparseScene {
        cameras,
        views,
        points3d,
    }
    .finalize()
}

fn parse_cameras_text(path: &Path) -> Result<BTreeMap<u32, Intrinsics>> {
    let text = read_text(path)?;
    let mut cameras = BTreeMap::new();
    for line in text_lines(path, &text, false) {
        let id: u32 = line.parse(0, "camera id")?;
        let model_name: String = line.parse(1, "camera model")?;
        let model = CameraModel::from_name(&model_name)
            .ok_or_else(|| line.err(line.tokens[1].1, format!("unsupported camera model {model_name}")))?;
        let width: u64 = line.parse(2, "width")?;
        let height: u64 = line.parse(3, "height")?;
        let params = (0..model.num_params())
            .map(|k| line.parse(4 + k, "camera parameter"))
            .collect::<Result<Vec<f64>>>()?;
        if line.tokens.len() != 4 + model.num_params() {
            return Err(line.err(line.tokens[4 + model.num_params()].1, "unexpected extra camera parameter"));
        }
        if cameras.insert(id, Intrinsics { id, model, width, height, params }).is_some() {
            return Err(line.err(line.offset, format!("duplicate camera id {id}")));
        }
    }
    Ok(cameras)
}

fn parse_images_text(path: &Path) -> Result<Vec<SceneView>> {
    let text = read_text(path)?;
    let lines = text_lines(path, &text, true);
    let mut views = Vec::new();
    let mut it = lines.into_iter().peekable();
    while let Some(line) = it.next() {
        if line.tokens.is_empty() {
            continue;
        }
        let image_id: u32 = line.parse(0, "image id")?;
        let mut qvec = [0.0; 4];
        for (k, q) in qvec.iter_mut().enumerate() {
            *q = line.parse(1 + k, "quaternion")?;
        }
        let mut tvec = [0.0; 3];
        for (k, t) in tvec.iter_mut().enumerate() {
            *t = line.parse(5 + k, "translation")?;
        }
        let camera_id: u32 = line.parse(8, "camera id")?;
        let name: String = line.parse(9, "image name")?;
        if line.tokens.len() > 10 {
            return Err(line.err(line.tokens[10].1, "image name must not contain spaces"));
        }
        let mut points2d = Vec::new();
        if let Some(pts) = it.next() {
            if pts.tokens.len() % 3 != 0 {
                return Err(pts.err(pts.offset, "keypoint list must hold (x, y, point3d_id) triples"));
            }
            for k in 0..pts.tokens.len() / 3 {
                let x: f64 = pts.parse(3 * k, "keypoint x")?;
                let y: f64 = pts.parse(3 * k + 1, "keypoint y")?;
                let id: i64 = pts.parse(3 * k + 2, "point3d id")?;
                points2d.push(([x, y], id));
            }
        }
        views.push(SceneView {
            image_id,
            name,
            qvec,
            tvec,
            camera_id,
            frame_index: 0,
            points2d,
        });
    }
    Ok(views)
}

fn parse_points_text(path: &Path) -> Result<Vec<SeedPoint>> {
    let text = read_text(path)?;
    let mut points = Vec::new();
    for line in text_lines(path, &text, false) {
        let id: u64 = line.parse(0, "point id")?;
        let position = [
            line.parse(1, "x")?,
            line.parse(2, "y")?,
            line.parse(3, "z")?,
        ];
        let rgb = [line.parse(4, "red")?, line.parse(5, "green")?, line.parse(6, "blue")?];
        let error: f64 = line.parse(7, "reprojection error")?;
        let rest = line.tokens.len().saturating_sub(8);
        if rest % 2 != 0 {
            return Err(line.err(line.offset, "track must hold (image_id, point2d_idx) pairs"));
        }
        let track = (0..rest / 2)
            .map(|k| Ok((line.parse(8 + 2 * k, "track image id")?, line.parse(9 + 2 * k, "track index")?)))
            .collect::<Result<Vec<(u32, u32)>>>()?;
        points.push(SeedPoint {
            id,
            position,
            rgb,
            error,
            track,
        });
    }
    Ok(points)
}

// ---- binary ----

struct Reader<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, data: &'a [u8]) -> Self {
        Self { path, data, pos: 0 }
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            line: None,
            message: message.into(),
        }
    }

    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        if self.data.len() - self.pos < N {
            return Err(self.err(self.data.len(), format!("unexpected end of file reading {what}")));
        }
        let out: [u8; N] = self.data[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take::<1>(what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(what)?))
    }
    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(what)?))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(what)?))
    }
    fn i64(&mut self, what: &str) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(what)?))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(what)?))
    }

    /// A count that must fit in the remaining bytes at `min_size` each.
    fn count(&mut self, what: &str, min_size: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.u64(what)?;
        let remaining = (self.data.len() - self.pos) as u64;
        if n.saturating_mul(min_size as u64) > remaining {
            return Err(self.err(at, format!("{what} {n} exceeds file size")));
        }
        Ok(n as usize)
    }

    fn cstring(&mut self, what: &str) -> Result<String> {
        let start = self.pos;
        let len = self.data[start..]
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| self.err(self.data.len(), format!("unterminated {what}")))?;
        let s = std::str::from_utf8(&self.data[start..start + len])
            .map_err(|_| self.err(start, format!("{what} is not valid UTF-8")))?;
        self.pos = start + len + 1;
        Ok(s.to_string())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.err(self.pos, "trailing bytes after last record"));
        }
        Ok(())
    }
}

pub fn parse_colmap_binary(dir: &Path) -> Result<SparseScene> {
    let cameras = parse_cameras_binary(&dir.join("cameras.bin"))?;
    let views = parse_images_binary(&dir.join("images.bin"))?;
    let points3d = parse_points_binary(&dir.join("points3D.bin"))?;
    SparseScene {
        cameras,
        views,
        points3d,
    }
    .finalize()
}

fn parse_cameras_binary(path: &Path) -> Result<BTreeMap<u32, Intrinsics>> {
    let data = read(path)?;
    let mut r = Reader::new(path, &data);
    let n = r.count("camera count", 24)?;
    let mut cameras = BTreeMap::new();
    for _ in 0..n {
        let start = r.pos;
        let id = r.u32("camera id")?;
        let model_at = r.pos;
        let model_id = r.i32("camera model")?;
        let model = CameraModel::from_id(model_id).ok_or_else(|| {
            r.err(
                model_at,
                format!("unsupported camera model {} ({model_id})", colmap_model_name(model_id)),
            )
        })?;
        let width = r.u64("width")?;
        let height = r.u64("height")?;
        let params = (0..model.num_params())
            .map(|_| r.f64("camera parameter"))
            .collect::<Result<Vec<_>>>()?;
        if cameras.insert(id, Intrinsics { id, model, width, height, params }).is_some() {
            return Err(r.err(start, format!("duplicate camera id {id}")));
        }
    }
    r.finish()?;
    Ok(cameras)
}

fn parse_images_binary(path: &Path) -> Result<Vec<SceneView>> {
    let data = read(path)?;
    let mut r = Reader::new(path, &data);
    let n = r.count("image count", 73)?;
    let mut views = Vec::with_capacity(n);
    for _ in 0..n {
        let image_id = r.u32("image id")?;
        let mut qvec = [0.0; 4];
        for q in &mut qvec {
            *q = r.f64("quaternion")?;
        }
        let mut tvec = [0.0; 3];
        for t in &mut tvec {
            *t = r.f64("translation")?;
        }
        let camera_id = r.u32("camera id")?;
        let name = r.cstring("image name")?;
        let np = r.count("keypoint count", 24)?;
        let mut points2d = Vec::with_capacity(np);
        for _ in 0..np {
            let x = r.f64("keypoint x")?;
            let y = r.f64("keypoint y")?;
            let id = r.i64("point3d id")?;
            points2d.push(([x, y], id));
        }
        views.push(SceneView {
            image_id,
            name,
            qvec,
            tvec,
            camera_id,
            frame_index: 0,
            points2d,
        });
    }
    r.finish()?;
    Ok(views)
}

fn parse_points_binary(path: &Path) -> Result<Vec<SeedPoint>> {
    let data = read(path)?;
    let mut r = Reader::new(path, &data);
    let n = r.count("point count", 51)?;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u64("point id")?;
        let mut position = [0.0; 3];
        for p in &mut position {
            *p = r.f64("position")?;
        }
        let rgb = [r.u8("color")?, r.u8("color")?, r.u8("color")?];
        let error = r.f64("reprojection error")?;
        let nt = r.count("track length", 8)?;
        let mut track = Vec::with_capacity(nt);
        for _ in 0..nt {
            track.push((r.u32("track image id")?, r.u32("track index")?));
        }
        points.push(SeedPoint {
            id,
            position,
            rgb,
            error,
            track,
        });
    }
    r.finish()?;
    Ok(points)
}

// ---- writers ----

/// Writes the model into `dir` (created if needed).
pub fn write_colmap(scene: &SparseScene, dir: &Path, format: ColmapFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files: [(&str, Vec<u8>); 3] = match format {
        ColmapFormat::Text => [
            ("cameras.txt", cameras_text(scene).into_bytes()),
            ("images.txt", images_text(scene).into_bytes()),
            ("points3D.txt", points_text(scene).into_bytes()),
        ],
        ColmapFormat::Binary => [
            ("cameras.bin", cameras_binary(scene)),
            ("images.bin", images_binary(scene)),
            ("points3D.bin", points_binary(scene)),
        ],
    };
    for (name, bytes) in files {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

// `{:?}` on f64 prints the shortest representation that parses back to the
// same value.
fn cameras_text(scene: &SparseScene) -> String {
    let mut s = String::from("# Camera list with one line of data per camera:\n");
    s += "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n";
    s += &format!("# Number of cameras: {}\n", scene.cameras.len());
    for c in scene.cameras.values() {
        s += &format!("{} {} {} {}", c.id, c.model.name(), c.width, c.height);
        for p in &c.params {
            s += &format!(" {p:?}");
        }
        s.push('\n');
    }
    s
}

fn images_text(scene: &SparseScene) -> String {
    let mut s = String::from("# Image list with two lines of data per image:\n");
    s += "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n";
    s += "#   POINTS2D[] as (X, Y, POINT3D_ID)\n";
    s += &format!("# Number of images: {}\n", scene.views.len());
    for v in &scene.views {
        let [qw, qx, qy, qz] = v.qvec;
        let [tx, ty, tz] = v.tvec;
        s += &format!(
            "{} {qw:?} {qx:?} {qy:?} {qz:?} {tx:?} {ty:?} {tz:?} {} {}\n",
            v.image_id, v.camera_id, v.name
        );
        let pts: Vec<String> = v
            .points2d
            .iter()
            .map(|([x, y], id)| format!("{x:?} {y:?} {id}"))
            .collect();
        s += &pts.join(" ");
        s.push('\n');
    }
    s
}

fn points_text(scene: &SparseScene) -> String {
    let mut s = String::from("# 3D point list with one line of data per point:\n");
    s += "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n";
    s += &format!("# Number of points: {}\n", scene.points3d.len());
    for p in &scene.points3d {
        let [x, y, z] = p.position;
        let [r, g, b] = p.rgb;
        s += &format!("{} {x:?} {y:?} {z:?} {r} {g} {b} {:?}", p.id, p.error);
        for (img, idx) in &p.track {
            s += &format!(" {img} {idx}");
        }
        s.push('\n');
    }
    s
}

fn cameras_binary(scene: &SparseScene) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend((scene.cameras.len() as u64).to_le_bytes());
    for c in scene.cameras.values() {
        b.extend(c.id.to_le_bytes());
        b.extend(c.model.id().to_le_bytes());
        b.extend(c.width.to_le_bytes());
        b.extend(c.height.to_le_bytes());
        for p in &c.params {
            b.extend(p.to_le_bytes());
        }
    }
    b
}

fn images_binary(scene: &SparseScene) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend((scene.views.len() as u64).to_le_bytes());
    for v in &scene.views {
        b.extend(v.image_id.to_le_bytes());
        for q in v.qvec {
            b.extend(q.to_le_bytes());
        }
        for t in v.tvec {
            b.extend(t.to_le_bytes());
        }
        b.extend(v.camera_id.to_le_bytes());
        b.extend(v.name.as_bytes());
        b.push(0);
        b.extend((v.points2d.len() as u64).to_le_bytes());
        for ([x, y], id) in &v.points2d {
            b.extend(x.to_le_bytes());
            b.extend(y.to_le_bytes());
            b.extend(id.to_le_bytes());
        }
    }
    b
}

fn points_binary(scene: &SparseScene) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend((scene.points3d.len() as u64).to_le_bytes());
    for p in &scene.points3d {
        b.extend(p.id.to_le_bytes());
        for x in p.position {
            b.extend(x.to_le_bytes());
        }
        b.extend(p.rgb);
        b.extend(p.error.to_le_bytes());
        b.extend((p.track.len() as u64).to_le_bytes());
        for (img, idx) in &p.track {
            b.extend(img.to_le_bytes());
            b.extend(idx.to_le_bytes());
        }
    }
    b
}
