//! Full differentiable image formation for one view: optional atmospheric
//! attenuation of SH radiance, splatting, optional conduction refinement.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::atf::{atf_backward, attenuate_sh, AtfCache, AtfNetwork, SceneBox};
use crate::error::{Error, Result};
use crate::render::{render_backward, render_forward, GaussianGradients, RenderAux, RenderSettings};
use crate::scene::{Camera, GaussianCloud, RadianceImage, NEAR_PLANE};
use crate::sh::{basis, basis_grad, num_coeffs, SH_COEFFS, SH_DC_OFFSET};
use crate::tcm::{TcmCache, TcmNetwork};

/// The optional physics modules wrapped around the splatting renderer.
#[derive(Debug, Clone, Copy)]
pub struct Modules<'a> {
    pub atf: Option<&'a AtfNetwork>,
    pub tcm: Option<&'a TcmNetwork>,
    pub scene_box: SceneBox,
}

impl Modules<'_> {
    pub fn baseline() -> Self {
        Modules {
            atf: None,
            tcm: None,
            scene_box: SceneBox::unit(),
        }
    }
}

/// Intermediate values of one forward pass, consumed by [`backward`].
pub struct ForwardPass {
    pub sh_degree: usize,
    /// Gaussians in front of the near plane; the ATF is evaluated on these.
    pub visible: Vec<usize>,
    pub atf_cache: Option<AtfCache>,
    /// SH coefficients after attenuation.
    pub sh_used: Vec<[f64; SH_COEFFS]>,
    pub dirs: Vec<Vector3<f64>>,
    pub inv_dist: Vec<f64>,
    pub radiance: Vec<f64>,
    pub radiance_clamped: Vec<bool>,
    pub aux: RenderAux,
    /// Splatted image before conduction refinement.
    pub raw: RadianceImage,
    pub tcm_cache: Option<TcmCache>,
    pub image: RadianceImage,
}

/// Gradients of a scalar loss with respect to every trainable quantity.
pub struct PipelineGradients {
    pub gaussians: GaussianGradients,
    pub atf: Option<AtfNetwork>,
    pub tcm: Option<TcmNetwork>,
}

pub fn forward(
    cloud: &GaussianCloud,
    camera: &Camera,
    time_norm: f64,
    modules: &Modules,
    settings: &RenderSettings,
) -> Result<ForwardPass> {
    forward_with(cloud, camera, time_norm, modules, settings, None)
}

/// [`forward`] with the ATF fed `atf_positions` instead of the current
/// Gaussian positions. The ATF treats positions as constants during
/// training; finite-difference checks use this to hold them fixed.
pub fn forward_with(
    cloud: &GaussianCloud,
    camera: &Camera,
    time_norm: f64,
    modules: &Modules,
    settings: &RenderSettings,
    atf_positions: Option<&[[f64; 3]]>,
) -> Result<ForwardPass> {
    let n = cloud.len();
    if let Some(p) = atf_positions {
        if p.len() != n {
            return Err(Error::ShapeMismatch(format!("{} ATF positions for {n} gaussians", p.len())));
        }
    }
    let degree = cloud.sh_degree_active;
    let center = camera.center();
    let visible: Vec<usize> = (0..n)
        .filter(|&i| camera.world_to_camera(&Vector3::from(cloud.positions[i])).z > NEAR_PLANE)
        .collect();

    let mut sh_used = cloud.sh.clone();
    let atf_cache = match modules.atf {
        Some(net) => {
            let src = atf_positions.unwrap_or(&cloud.positions);
            let inputs: Vec<[f64; 3]> = visible.iter().map(|&i| modules.scene_box.normalize(&src[i])).collect();
            let cache = net.forward(&inputs, time_norm);
            for (k, &i) in visible.iter().enumerate() {
                sh_used[i] = attenuate_sh(&cloud.sh[i], &cache.params[k])?;
            }
            Some(cache)
        }
        None => None,
    };

    let nc = num_coeffs(degree);
    let evaluated: Vec<(Vector3<f64>, f64, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let v = Vector3::from(cloud.positions[i]) - center;
            let dist = v.norm();
            let dir = v / dist;
            let b = basis(&dir, degree);
            let raw = SH_DC_OFFSET + sh_used[i][..nc].iter().zip(&b[..nc]).map(|(c, y)| c * y).sum::<f64>();
            (dir, 1.0 / dist, raw.max(0.0), raw < 0.0)
        })
        .collect();
    let mut dirs = Vec::with_capacity(n);
    let mut inv_dist = Vec::with_capacity(n);
    let mut radiance = Vec::with_capacity(n);
    let mut radiance_clamped = Vec::with_capacity(n);
    for (d, inv, r, c) in evaluated {
        dirs.push(d);
        inv_dist.push(inv);
        radiance.push(r);
        radiance_clamped.push(c);
    }

    let (raw, aux) = render_forward(cloud, camera, &radiance, settings)?;
    let (image, tcm_cache) = match modules.tcm {
        Some(tcm) => {
            let (img, cache) = tcm.forward(&raw);
            (img, Some(cache))
        }
        None => (raw.clone(), None),
    };
    if image.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("rendered image contains non-finite values".into()));
    }
    Ok(ForwardPass {
        sh_degree: degree,
        visible,
        atf_cache,
        sh_used,
        dirs,
        inv_dist,
        radiance,
        radiance_clamped,
        aux,
        raw,
        tcm_cache,
        image,
    })
}

/// Reverse pass of [`forward`] for the upstream gradient `d_image`.
pub fn backward(
    cloud: &GaussianCloud,
    fwd: &ForwardPass,
    modules: &Modules,
    d_image: &RadianceImage,
) -> Result<PipelineGradients> {
    let (tcm_grad, d_raw) = match (modules.tcm, &fwd.tcm_cache) {
        (Some(tcm), Some(cache)) => {
            let (g, d) = tcm.backward(cache, d_image)?;
            (Some(g), d)
        }
        (None, None) => (None, d_image.clone()),
        _ => return Err(Error::InvalidArgument("conduction module differs between passes".into())),
    };
    let mut grads = render_backward(&fwd.aux, &d_raw)?;

    let degree = fwd.sh_degree;
    let nc = num_coeffs(degree);
    let per: Vec<([f64; SH_COEFFS], [f64; 3])> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let d_r = grads.d_radiance[i];
            let mut d_sh = [0.0; SH_COEFFS];
            if d_r == 0.0 || fwd.radiance_clamped[i] {
                return (d_sh, [0.0; 3]);
            }
            let dir = &fwd.dirs[i];
            let b = basis(dir, degree);
            let bg = basis_grad(dir, degree);
            let mut d_dir = Vector3::zeros();
            for k in 0..nc {
                d_sh[k] = d_r * b[k];
                let c = fwd.sh_used[i][k] * d_r;
                d_dir += c * Vector3::from(bg[k]);
            }
            let proj = (Matrix3::identity() - dir * dir.transpose()) * fwd.inv_dist[i];
            let d_pos = proj * d_dir;
            (d_sh, [d_pos.x, d_pos.y, d_pos.z])
        })
        .collect();
    let mut d_sh_used = Vec::with_capacity(per.len());
    for (i, (d_sh, d_pos)) in per.into_iter().enumerate() {
        for k in 0..3 {
            grads.d_position[i][k] += d_pos[k];
        }
        d_sh_used.push(d_sh);
    }

    let atf_grad = match (modules.atf, &fwd.atf_cache) {
        (Some(net), Some(cache)) => {
            let sh0: Vec<[f64; SH_COEFFS]> = fwd.visible.iter().map(|&i| cloud.sh[i]).collect();
            let d_vis: Vec<[f64; SH_COEFFS]> = fwd.visible.iter().map(|&i| d_sh_used[i]).collect();
            let (g_net, d_sh0) = atf_backward(net, cache, &sh0, &d_vis)?;
            for (k, &i) in fwd.visible.iter().enumerate() {
                d_sh_used[i] = d_sh0[k];
            }
            Some(g_net)
        }
        (None, None) => None,
        _ => return Err(Error::InvalidArgument("attenuation module differs between passes".into())),
    };
    grads.d_sh = d_sh_used;
    Ok(PipelineGradients {
        gaussians: grads,
        atf: atf_grad,
        tcm: tcm_grad,
    })
}

/// Hash of every discrete decision taken in the forward pass: compositing,
/// radiance clamping and ReLU activations in both networks.
pub fn decision_pattern(fwd: &ForwardPass, hasher: &mut impl std::hash::Hasher) {
    fwd.aux.decision_pattern(hasher);
    for &c in &fwd.radiance_clamped {
        hasher.write_u8(c as u8);
    }
    if let Some(c) = &fwd.atf_cache {
        c.activation_pattern(hasher);
    }
    if let Some(c) = &fwd.tcm_cache {
        c.activation_pattern(hasher);
    }
}
