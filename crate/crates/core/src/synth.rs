//! Synthetic thermal scenes: a planar temperature texture with hot and
//! cold emitters, blurred by heat conduction, observed from an orbit with
//! a view- and time-dependent attenuation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::heat::{heat_simulate, ConductionSpec, TemperatureField};
use crate::io::colmap::{write_colmap, CameraModel, ColmapFormat, Intrinsics, SceneView, SeedPoint, SparseScene};
use crate::io::image::{quantize, save_image};
use crate::scene::{matrix_to_quat, time_norm, Camera, RadianceImage};
use crate::stencil::Boundary;

/// Half-width of the textured square `[-1, 1]^2` on the plane `z = 0`.
pub const PLANE_HALF: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum EmitterShape {
    Disc { radius: f64 },
    Rect { half_size: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Emitter {
    pub shape: EmitterShape,
    pub center: [f64; 2],
    pub temperature: f64,
}

impl Emitter {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        match self.shape {
            EmitterShape::Disc { radius } => dx * dx + dy * dy <= radius * radius,
            EmitterShape::Rect { half_size } => dx.abs() <= half_size[0] && dy.abs() <= half_size[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    pub views: usize,
    /// Horizontal distance of the cameras from the plane centre.
    pub radius: f64,
    /// Mean camera height above the plane.
    pub height: f64,
    /// Amplitude of a sinusoidal height variation along the orbit.
    pub height_variation: f64,
    /// Number of full turns over the sequence; more than one makes capture
    /// time distinguishable from viewing angle.
    pub revolutions: f64,
    pub focal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub texture_size: usize,
    pub background: f64,
    pub points: usize,
    pub emitters: Vec<Emitter>,
    pub orbit: Orbit,
    /// Attenuation factor `exp(a * theta + b * t)`.
    pub attenuation: [f64; 2],
    pub diffusivity: f64,
    pub diffusion_time: f64,
}

fn spec_err(origin: &str, line: usize, msg: impl std::fmt::Display) -> Error {
    if line == 0 {
        Error::Config(format!("{origin}: {msg}"))
    } else {
        Error::Config(format!("{origin}:{line}: {msg}"))
    }
}

#[derive(Default)]
struct Section {
    name: String,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        let i = self.entries.iter().position(|(k, _, _)| k == key)?;
        let (_, v, l) = self.entries.remove(i);
        Some((v, l))
    }

    fn num(&mut self, origin: &str, key: &str, default: Option<f64>) -> Result<f64> {
        match self.take(key) {
            Some((v, l)) => v
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| spec_err(origin, l, format!("invalid number '{v}' for {key}"))),
            None => default.ok_or_else(|| {
                spec_err(origin, self.line, format!("section [{}] is missing key '{key}'", self.name))
            }),
        }
    }

    fn count(&mut self, origin: &str, key: &str, default: Option<usize>) -> Result<usize> {
        match self.take(key) {
            Some((v, l)) => v
                .parse()
                .map_err(|_| spec_err(origin, l, format!("invalid integer '{v}' for {key}"))),
            None => default.ok_or_else(|| {
                spec_err(origin, self.line, format!("section [{}] is missing key '{key}'", self.name))
            }),
        }
    }

    fn pair(&mut self, origin: &str, key: &str) -> Result<[f64; 2]> {
        let (v, l) = self
            .take(key)
            .ok_or_else(|| spec_err(origin, self.line, format!("section [{}] is missing key '{key}'", self.name)))?;
        let parts: Vec<f64> = v.split(',').filter_map(|p| p.trim().parse().ok()).collect();
        if parts.len() != 2 {
            return Err(spec_err(origin, l, format!("{key} needs two comma-separated numbers")));
        }
        Ok([parts[0], parts[1]])
    }

    fn finish(self, origin: &str) -> Result<()> {
        if let Some((k, _, l)) = self.entries.first() {
            return Err(spec_err(origin, *l, format!("unknown key '{k}' in section [{}]", self.name)));
        }
        Ok(())
    }
}

impl SynthSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses the sectioned `key = value` format; `origin` prefixes error
    /// messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let ln = i + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if !["scene", "emitter", "orbit", "attenuation", "diffusion"].contains(&name.as_str()) {
                    return Err(spec_err(origin, ln, format!("unknown section [{name}]")));
                }
                if name != "emitter" && sections.iter().any(|s| s.name == name) {
                    return Err(spec_err(origin, ln, format!("duplicate section [{name}]")));
                }
                sections.push(Section {
                    name,
                    line: ln,
                    entries: Vec::new(),
                });
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| spec_err(origin, ln, "expected key = value or [section]"))?;
            let sec = sections
                .last_mut()
                .ok_or_else(|| spec_err(origin, ln, "key outside of any section"))?;
            sec.entries.push((k.trim().to_string(), v.trim().to_string(), ln));
        }
        let mut take_section = |name: &str| -> Result<Section> {
            let i = sections
                .iter()
                .position(|s| s.name == name)
                .ok_or_else(|| spec_err(origin, 0, format!("missing section [{name}]")))?;
            Ok(sections.remove(i))
        };

        let mut scene = take_section("scene")?;
        let width = scene.count(origin, "width", None)?;
        let height = scene.count(origin, "height", None)?;
        let texture_size = scene.count(origin, "texture_size", Some(128))?;
        let background = scene.num(origin, "background", Some(0.2))?;
        let points = scene.count(origin, "points", Some(400))?;
        scene.finish(origin)?;

        let mut orbit_s = take_section("orbit")?;
        let orbit = Orbit {
            views: orbit_s.count(origin, "views", None)?,
            radius: orbit_s.num(origin, "radius", None)?,
            height: orbit_s.num(origin, "height", None)?,
            height_variation: orbit_s.num(origin, "height_variation", Some(0.0))?,
            revolutions: orbit_s.num(origin, "revolutions", Some(1.0))?,
            focal: orbit_s.num(origin, "focal", None)?,
        };
        orbit_s.finish(origin)?;

        let mut att = take_section("attenuation")?;
        let attenuation = [att.num(origin, "a", Some(0.0))?, att.num(origin, "b", Some(0.0))?];
        att.finish(origin)?;

        let mut diff = take_section("diffusion")?;
        let diffusivity = diff.num(origin, "alpha", Some(1.0))?;
        let diffusion_time = diff.num(origin, "time", Some(0.0))?;
        diff.finish(origin)?;

        let mut emitters = Vec::new();
        while let Ok(mut e) = take_section("emitter") {
            let (shape_name, sl) = e
                .take("shape")
                .ok_or_else(|| spec_err(origin, e.line, "section [emitter] is missing key 'shape'"))?;
            let shape = match shape_name.as_str() {
                "disc" => EmitterShape::Disc {
                    radius: e.num(origin, "radius", None)?,
                },
                "rect" => EmitterShape::Rect {
                    half_size: e.pair(origin, "half_size")?,
                },
                other => return Err(spec_err(origin, sl, format!("unknown emitter shape '{other}'"))),
            };
            let center = e.pair(origin, "center")?;
            let temperature = e.num(origin, "temperature", None)?;
            e.finish(origin)?;
            emitters.push(Emitter {
                shape,
                center,
                temperature,
            });
        }

        let spec = SynthSpec {
            width,
            height,
            texture_size,
            background,
            points,
            emitters,
            orbit,
            attenuation,
            diffusivity,
            diffusion_time,
        };
        spec.validate(origin)?;
        Ok(spec)
    }

    pub fn validate(&self, origin: &str) -> Result<()> {
        let fail = |m: &str| Err(spec_err(origin, 0, m));
        if self.width < 2 || self.height < 2 {
            return fail("image size must be at least 2x2");
        }
        if self.texture_size < 2 {
            return fail("texture_size must be at least 2");
        }
        if self.points == 0 {
            return fail("points must be positive");
        }
        if self.orbit.views == 0 {
            return fail("orbit needs at least one view");
        }
        if !(self.orbit.focal > 0.0) {
            return fail("orbit focal length must be positive");
        }
        if self.diffusion_time < 0.0 || self.diffusivity < 0.0 {
            return fail("diffusion time and alpha must be non-negative");
        }
        for e in &self.emitters {
            let ok = match e.shape {
                EmitterShape::Disc { radius } => radius > 0.0,
                EmitterShape::Rect { half_size } => half_size[0] > 0.0 && half_size[1] > 0.0,
            };
            if !ok {
                return fail("emitter sizes must be positive");
            }
        }
        Ok(())
    }

    /// Texture cell size on the plane.
    pub fn dx(&self) -> f64 {
        2.0 * PLANE_HALF / self.texture_size as f64
    }

    /// Emitter temperatures painted on the background, before conduction.
    pub fn raw_texture(&self) -> Result<TemperatureField> {
        let n = self.texture_size;
        let dx = self.dx();
        let mut data = vec![self.background; n * n];
        for j in 0..n {
            for i in 0..n {
                let (x, y) = (-PLANE_HALF + (i as f64 + 0.5) * dx, -PLANE_HALF + (j as f64 + 0.5) * dx);
                for e in &self.emitters {
                    if e.contains(x, y) {
                        data[j * n + i] = e.temperature;
                    }
                }
            }
        }
        TemperatureField::new(n, n, dx, Boundary::Insulated, data)
    }

    /// Texture after conduction for the configured diffusion time.
    pub fn texture(&self) -> Result<TemperatureField> {
        let raw = self.raw_texture()?;
        let spec = ConductionSpec::for_duration(self.diffusivity, self.diffusion_time, raw.dx)?;
        heat_simulate(&raw, &spec)
    }

    /// Camera of view `index`, looking at the plane centre.
    pub fn camera(&self, index: usize) -> Result<Camera> {
        let o = &self.orbit;
        let t = time_norm(index, o.views);
        let phi = 2.0 * std::f64::consts::PI * o.revolutions * index as f64 / o.views as f64;
        let h = o.height + o.height_variation * (2.0 * std::f64::consts::PI * t).sin();
        let center = Vector3::new(o.radius * phi.cos(), o.radius * phi.sin(), h);
        look_at(&center, &Vector3::zeros(), o.focal, self.width, self.height)
    }

    /// Angle between the viewing direction and the plane normal.
    pub fn view_angle(&self, camera: &Camera) -> f64 {
        let forward = camera.rotation.row(2).transpose();
        (-forward.z).clamp(-1.0, 1.0).acos()
    }

    pub fn attenuation_factor(&self, theta: f64, t: f64) -> f64 {
        (self.attenuation[0] * theta + self.attenuation[1] * t).exp()
    }
}

/// Camera at `center` looking at `target` with world `+z` as up.
pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>, focal: f64, width: usize, height: usize) -> Result<Camera> {
    let f = target - center;
    if f.norm() == 0.0 {
        return Err(Error::InvalidArgument("camera coincides with its target".into()));
    }
    let f = f.normalize();
    let right = f.cross(&Vector3::z());
    if right.norm() < 1e-9 {
        return Err(Error::InvalidArgument(
            "degenerate orbit: viewing direction is parallel to the plane normal".into(),
        ));
    }
    let right = right.normalize();
    let down = f.cross(&right);
    let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), f.transpose()]);
    let t = -(rot * center);
    Camera::new(
        focal,
        focal,
        (width as f64 - 1.0) / 2.0,
        (height as f64 - 1.0) / 2.0,
        width,
        height,
        rot,
        t,
    )
}

fn sample_texture(tex: &TemperatureField, x: f64, y: f64) -> f64 {
    let n = tex.width;
    let u = ((x + PLANE_HALF) / tex.dx - 0.5).clamp(0.0, (n - 1) as f64);
    let v = ((y + PLANE_HALF) / tex.dx - 0.5).clamp(0.0, (n - 1) as f64);
    let (i0, j0) = (u.floor() as usize, v.floor() as usize);
    let (i1, j1) = ((i0 + 1).min(n - 1), (j0 + 1).min(n - 1));
    let (fu, fv) = (u - i0 as f64, v - j0 as f64);
    let a = tex.get(i0, j0) * (1.0 - fu) + tex.get(i1, j0) * fu;
    let b = tex.get(i0, j1) * (1.0 - fu) + tex.get(i1, j1) * fu;
    a * (1.0 - fv) + b * fv
}

/// Ray-casts the plane with 2x2 supersampling; rays missing the textured
/// square see zero radiance.
pub fn render_plane(tex: &TemperatureField, camera: &Camera, factor: f64) -> RadianceImage {
    let (w, h) = (camera.width, camera.height);
    let c = camera.center();
    let rt = camera.rotation.transpose();
    let data = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (px, py) = ((p % w) as f64, (p / w) as f64);
            let mut acc = 0.0;
            for (ox, oy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                let d_cam = Vector3::new((px + ox - camera.cx) / camera.fx, (py + oy - camera.cy) / camera.fy, 1.0);
                let d = rt * d_cam;
                if d.z.abs() < 1e-12 {
                    continue;
                }
                let s = -c.z / d.z;
                if s <= 0.0 {
                    continue;
                }
                let hit = c + s * d;
                if hit.x.abs() <= PLANE_HALF && hit.y.abs() <= PLANE_HALF {
                    acc += sample_texture(tex, hit.x, hit.y);
                }
            }
            (factor * acc / 4.0).clamp(0.0, 1.0)
        })
        .collect();
    RadianceImage {
        width: w,
        height: h,
        data,
    }
}

/// Per-view ground truth recorded in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthView {
    pub name: String,
    pub camera: Camera,
    pub time: f64,
    pub theta: f64,
    pub factor: f64,
    pub image: RadianceImage,
}

/// Renders every view of the spec in memory.
pub fn synth_views(spec: &SynthSpec) -> Result<(TemperatureField, Vec<SynthView>)> {
    spec.validate("spec")?;
    let tex = spec.texture()?;
    let cameras = (0..spec.orbit.views).map(|i| spec.camera(i)).collect::<Result<Vec<_>>>()?;
    if cameras.iter().all(|c| c.center().z.abs() < 1e-9) {
        return Err(Error::InvalidArgument(
            "degenerate orbit: every camera lies in the scene plane".into(),
        ));
    }
    let views = cameras
        .into_par_iter()
        .enumerate()
        .map(|(i, camera)| {
            let t = time_norm(i, spec.orbit.views);
            let theta = spec.view_angle(&camera);
            let factor = spec.attenuation_factor(theta, t);
            let image = render_plane(&tex, &camera, factor);
            SynthView {
                name: format!("frame_{i:04}.png"),
                camera,
                time: t,
                theta,
                factor,
                image,
            }
        })
        .collect();
    Ok((tex, views))
}

/// Seed points on the plane: half on emitter surfaces (when there are
/// emitters), the rest uniform over the textured square. Radiance is the
/// conducted temperature.
pub fn seed_points(spec: &SynthSpec, tex: &TemperatureField, rng: &mut ChaCha8Rng) -> Vec<([f64; 3], f64)> {
    let mut out = Vec::with_capacity(spec.points);
    let on_emitters = if spec.emitters.is_empty() { 0 } else { spec.points / 2 };
    let mut attempts = 0;
    while out.len() < on_emitters && attempts < 100 * spec.points {
        attempts += 1;
        let e = &spec.emitters[rng.random_range(0..spec.emitters.len())];
        let (x, y) = match e.shape {
            EmitterShape::Disc { radius } => {
                let r = radius * rng.random_range(0.0f64..1.0).sqrt();
                let a = rng.random_range(0.0..2.0 * std::f64::consts::PI);
                (e.center[0] + r * a.cos(), e.center[1] + r * a.sin())
            }
            EmitterShape::Rect { half_size } => (
                e.center[0] + rng.random_range(-half_size[0]..=half_size[0]),
                e.center[1] + rng.random_range(-half_size[1]..=half_size[1]),
            ),
        };
        if x.abs() <= PLANE_HALF && y.abs() <= PLANE_HALF {
            out.push(([x, y, 0.0], sample_texture(tex, x, y)));
        }
    }
    while out.len() < spec.points {
        let x = rng.random_range(-PLANE_HALF..=PLANE_HALF);
        let y = rng.random_range(-PLANE_HALF..=PLANE_HALF);
        out.push(([x, y, 0.0], sample_texture(tex, x, y)));
    }
    out
}

/// Writes a COLMAP-layout dataset: `sparse/0` text model, `images/*.png`
/// and `manifest.txt` with the generating parameters.
pub fn synth_scene_generate(spec: &SynthSpec, seed: u64, out: &Path) -> Result<()> {
    let (tex, views) = synth_views(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = seed_points(spec, &tex, &mut rng);

    let images = out.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for v in &views {
        save_image(&v.image, &images.join(&v.name))?;
    }

    let cam = &views[0].camera;
    let intr = Intrinsics {
        id: 1,
        model: CameraModel::Pinhole,
        width: cam.width as u64,
        height: cam.height as u64,
        params: vec![cam.fx, cam.fy, cam.cx, cam.cy],
    };
    let scene = SparseScene {
        cameras: [(1, intr)].into_iter().collect(),
        views: views
            .iter()
            .enumerate()
            .map(|(i, v)| SceneView {
                image_id: i as u32 + 1,
                name: v.name.clone(),
                qvec: matrix_to_quat(&v.camera.rotation),
                tvec: [v.camera.translation.x, v.camera.translation.y, v.camera.translation.z],
                camera_id: 1,
                frame_index: i,
                points2d: Vec::new(),
            })
            .collect(),
        points3d: points
            .iter()
            .enumerate()
            .map(|(i, (p, r))| {
                let g = quantize(*r);
                SeedPoint {
                    id: i as u64 + 1,
                    position: *p,
                    rgb: [g; 3],
                    error: 0.0,
                    track: Vec::new(),
                }
            })
            .collect(),
    };
    write_colmap(&scene, &out.join("sparse").join("0"), ColmapFormat::Text)?;

    let mut m = String::new();
    let _ = writeln!(m, "seed = {seed}");
    let _ = writeln!(m, "views = {}", views.len());
    let _ = writeln!(m, "width = {}", spec.width);
    let _ = writeln!(m, "height = {}", spec.height);
    let _ = writeln!(m, "attenuation_a = {:?}", spec.attenuation[0]);
    let _ = writeln!(m, "attenuation_b = {:?}", spec.attenuation[1]);
    let _ = writeln!(m, "diffusivity = {:?}", spec.diffusivity);
    let _ = writeln!(m, "diffusion_time = {:?}", spec.diffusion_time);
    let _ = writeln!(m, "background = {:?}", spec.background);
    for (i, e) in spec.emitters.iter().enumerate() {
        let shape = match e.shape {
            EmitterShape::Disc { radius } => format!("disc radius={radius:?}"),
            EmitterShape::Rect { half_size } => format!("rect half_size={:?},{:?}", half_size[0], half_size[1]),
        };
        let _ = writeln!(
            m,
            "emitter {i} {shape} center={:?},{:?} temperature={:?}",
            e.center[0], e.center[1], e.temperature
        );
    }
    m += "# name\ttime\ttheta\tfactor\n";
    for v in &views {
        let _ = writeln!(m, "{}\t{:?}\t{:?}\t{:?}", v.name, v.time, v.theta, v.factor);
    }
    let path = out.join("manifest.txt");
    fs::write(&path, m).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SPEC: &str = "
[scene]
width = 32
height = 32
texture_size = 48
background = 0.2
points = 50

[emitter]
shape = disc
center = 0.2, -0.1
radius = 0.3
temperature = 0.9

[emitter]
shape = rect
center = -0.4, 0.4
half_size = 0.2, 0.1
temperature = 0.05

[orbit]
views = 8
radius = 2.0
height = 2.5
height_variation = 0.3
revolutions = 1
focal = 30

[attenuation]
a = 0.0
b = 0.0

[diffusion]
alpha = 1.0
time = 0.0
";

    #[test]
    fn parses_and_reports_lines() {
        let s = SynthSpec::parse(SPEC, "t").unwrap();
        assert_eq!(s.emitters.len(), 2);
        assert_eq!(s.orbit.views, 8);
        let bad = SPEC.replace("radius = 0.3", "radius = x");
        let msg = SynthSpec::parse(&bad, "t").unwrap_err().to_string();
        assert!(msg.contains("t:12"), "{msg}");
        let no_orbit = SPEC.replace("[orbit]", "[diffusion2]");
        assert!(SynthSpec::parse(&no_orbit, "t").is_err());
        let start = SPEC.find("[orbit]").unwrap();
        let end = SPEC.find("[attenuation]").unwrap();
        let missing = format!("{}{}", &SPEC[..start], &SPEC[end..]);
        let msg = SynthSpec::parse(&missing, "t").unwrap_err().to_string();
        assert!(msg.contains("[orbit]"), "{msg}");
    }

    #[test]
    fn cameras_look_at_plane_centre() {
        let s = SynthSpec::parse(SPEC, "t").unwrap();
        for i in 0..8 {
            let c = s.camera(i).unwrap();
            let p = c.world_to_camera(&Vector3::zeros());
            assert!(p.x.abs() < 1e-9 && p.y.abs() < 1e-9 && p.z > 0.0);
        }
        let flat = Orbit {
            radius: 0.0,
            ..s.orbit.clone()
        };
        let top = SynthSpec { orbit: flat, ..s };
        assert!(top.camera(0).is_err());
    }
}
