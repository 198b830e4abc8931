//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `TSPLCKPT`, a `u32` format version, then
//! sections of `[4-byte tag][u64 payload length][payload]`. Integers and
//! floats are little-endian. The ATF and TCM sections are optional.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::atf::{AtfNetwork, Linear, SceneBox};
use crate::error::{Error, Result};
use crate::scene::GaussianCloud;
use crate::sh::SH_COEFFS;
use crate::tcm::{Conv2d, TcmNetwork};
use crate::train::adam::AdamGroup;
use crate::train::config::TrainConfig;
use crate::train::density::DensifyStats;
use crate::train::state::{Optimizer, TrainState, ViewSampler};

pub const MAGIC: &[u8; 8] = b"TSPLCKPT";
pub const VERSION: u32 = 1;

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
    fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.0.extend(v);
    }
}

struct Dec<'a> {
    tag: &'a str,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn truncated(&self) -> Error {
        Error::Checkpoint(format!("section {} truncated", self.tag))
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(self.truncated());
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()?;
        if n.saturating_mul(elem as u64) > (self.data.len() - self.pos) as u64 {
            return Err(self.truncated());
        }
        Ok(n as usize)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Checkpoint(format!("section {} has trailing bytes", self.tag)));
        }
        Ok(())
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: Enc) {
    out.extend(tag);
    out.extend((payload.0.len() as u64).to_le_bytes());
    out.extend(payload.0);
}

/// Serializes the full training state.
pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());

    let mut e = Enc::default();
    e.bytes(state.config.to_kv().as_bytes());
    section(&mut out, b"CONF", e);

    let mut e = Enc::default();
    e.u64(state.iteration);
    section(&mut out, b"ITER", e);

    let c = &state.cloud;
    let mut e = Enc::default();
    e.u64(c.len() as u64);
    e.u32(c.sh_degree_active as u32);
    for i in 0..c.len() {
        c.positions[i].iter().for_each(|&v| e.f64(v));
        c.log_scales[i].iter().for_each(|&v| e.f64(v));
        c.rotations[i].iter().for_each(|&v| e.f64(v));
        e.f64(c.opacity_logits[i]);
        c.sh[i].iter().for_each(|&v| e.f64(v));
    }
    section(&mut out, b"CLOU", e);

    let mut e = Enc::default();
    state.scene_box.center.iter().for_each(|&v| e.f64(v));
    e.f64(state.scene_box.half_extent);
    e.f64(state.spatial_scale);
    section(&mut out, b"SBOX", e);

    if let Some(atf) = &state.atf {
        let mut e = Enc::default();
        e.u32(atf.frequencies as u32);
        e.u32(atf.layers.len() as u32);
        for l in &atf.layers {
            e.u32(l.in_dim as u32);
            e.u32(l.out_dim as u32);
            e.f64s(&l.weight);
            e.f64s(&l.bias);
        }
        section(&mut out, b"ATFN", e);
    }

    if let Some(tcm) = &state.tcm {
        let mut e = Enc::default();
        e.u32(tcm.channels as u32);
        for l in &tcm.layers {
            e.u32(l.in_ch as u32);
            e.u32(l.out_ch as u32);
            e.f64s(&l.weight);
            e.f64s(&l.bias);
        }
        section(&mut out, b"TCMN", e);
    }

    let mut e = Enc::default();
    e.0.extend(state.rng.get_seed());
    e.u64(state.rng.get_stream());
    e.u128(state.rng.get_word_pos());
    e.u64(state.sampler.order.len() as u64);
    state.sampler.order.iter().for_each(|&i| e.u64(i as u64));
    e.u64(state.sampler.cursor as u64);
    section(&mut out, b"RNGS", e);

    let mut e = Enc::default();
    let groups: Vec<(u8, &AdamGroup)> = state
        .optimizer
        .gaussian
        .iter()
        .map(|g| (0u8, g))
        .chain(state.optimizer.atf.iter().map(|g| (1u8, g)))
        .chain(state.optimizer.tcm.iter().map(|g| (2u8, g)))
        .collect();
    e.u32(groups.len() as u32);
    for (kind, g) in groups {
        e.0.push(kind);
        e.bytes(g.name.as_bytes());
        e.u64(g.width as u64);
        e.f64(g.eps);
        e.u64(g.step);
        e.u64(g.skipped);
        e.f64s(&g.m);
        e.f64s(&g.v);
    }
    section(&mut out, b"OPTM", e);

    let mut e = Enc::default();
    e.f64s(&state.densify.grad_accum);
    e.u64(state.densify.denom.len() as u64);
    state.densify.denom.iter().for_each(|&d| e.u64(d));
    section(&mut out, b"DENS", e);

    out
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Parses a checkpoint. A configuration that enables the TCM while the
/// file carries none yields an identity-initialized module.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let mut sections: Vec<(String, &[u8])> = Vec::new();
    let mut pos = 12;
    while pos < bytes.len() {
        if bytes.len() - pos < 12 {
            return Err(Error::Checkpoint("section header truncated".into()));
        }
        let tag = String::from_utf8_lossy(&bytes[pos..pos + 4]).into_owned();
        let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap());
        pos += 12;
        if len > (bytes.len() - pos) as u64 {
            return Err(Error::Checkpoint(format!("section {tag} truncated")));
        }
        sections.push((tag, &bytes[pos..pos + len as usize]));
        pos += len as usize;
    }
    let find = |tag: &'static str| sections.iter().find(|(t, _)| t == tag).map(|(_, d)| Dec { tag, data: d, pos: 0 });
    let need = |tag: &'static str| find(tag).ok_or_else(|| Error::Checkpoint(format!("missing section {tag}")));

    let mut d = need("CONF")?;
    let text = std::str::from_utf8(d.bytes()?).map_err(|_| Error::Checkpoint("CONF is not UTF-8".into()))?;
    let config = TrainConfig::from_kv(text)?;
    d.done()?;

    let mut d = need("ITER")?;
    let iteration = d.u64()?;
    d.done()?;

    let mut d = need("CLOU")?;
    let n = d.u64()? as usize;
    let mut cloud = GaussianCloud::new(d.u32()? as usize);
    let per = (3 + 3 + 4 + 1 + SH_COEFFS) * 8;
    if (n as u64).saturating_mul(per as u64) > (d.data.len() - d.pos) as u64 {
        return Err(d.truncated());
    }
    for _ in 0..n {
        let mut arr = |k: usize| -> Result<Vec<f64>> { (0..k).map(|_| d.f64()).collect() };
        let p = arr(3)?;
        let s = arr(3)?;
        let r = arr(4)?;
        let o = arr(1)?;
        let sh = arr(SH_COEFFS)?;
        cloud.positions.push(p.try_into().unwrap());
        cloud.log_scales.push(s.try_into().unwrap());
        cloud.rotations.push(r.try_into().unwrap());
        cloud.opacity_logits.push(o[0]);
        cloud.sh.push(sh.try_into().unwrap());
    }
    d.done()?;

    let mut d = need("SBOX")?;
    let scene_box = SceneBox {
        center: [d.f64()?, d.f64()?, d.f64()?],
        half_extent: d.f64()?,
    };
    let spatial_scale = d.f64()?;
    d.done()?;

    let atf = match find("ATFN") {
        Some(mut d) => {
            let frequencies = d.u32()? as usize;
            let nl = d.u32()? as usize;
            let mut layers = Vec::new();
            for _ in 0..nl {
                let in_dim = d.u32()? as usize;
                let out_dim = d.u32()? as usize;
                layers.push(Linear {
                    in_dim,
                    out_dim,
                    weight: d.f64s()?,
                    bias: d.f64s()?,
                });
            }
            d.done()?;
            let net = AtfNetwork { frequencies, layers };
            net.validate()?;
            Some(net)
        }
        None => None,
    };

    let tcm = match find("TCMN") {
        Some(mut d) => {
            let channels = d.u32()? as usize;
            let mut conv = || -> Result<Conv2d> {
                let in_ch = d.u32()? as usize;
                let out_ch = d.u32()? as usize;
                Ok(Conv2d {
                    in_ch,
                    out_ch,
                    weight: d.f64s()?,
                    bias: d.f64s()?,
                })
            };
            let layers = [conv()?, conv()?, conv()?];
            d.done()?;
            let net = TcmNetwork { channels, layers };
            net.validate()?;
            Some(net)
        }
        None => None,
    };

    let mut d = need("RNGS")?;
    let seed: [u8; 32] = d.take(32)?.try_into().unwrap();
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(d.u64()?);
    rng.set_word_pos(d.u128()?);
    let no = d.len(8)?;
    let order = (0..no).map(|_| d.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let cursor = d.u64()? as usize;
    d.done()?;

    let mut d = need("OPTM")?;
    let ng = d.u32()?;
    let mut optimizer = Optimizer {
        gaussian: Vec::new(),
        atf: None,
        tcm: None,
    };
    for _ in 0..ng {
        let kind = d.take(1)?[0];
        let name = String::from_utf8_lossy(d.bytes()?).into_owned();
        let g = AdamGroup {
            name,
            width: d.u64()? as usize,
            eps: d.f64()?,
            step: d.u64()?,
            skipped: d.u64()?,
            m: d.f64s()?,
            v: d.f64s()?,
        };
        match kind {
            0 => optimizer.gaussian.push(g),
            1 => optimizer.atf = Some(g),
            2 => optimizer.tcm = Some(g),
            k => return Err(Error::Checkpoint(format!("unknown optimizer group kind {k}"))),
        }
    }
    d.done()?;

    let mut d = need("DENS")?;
    let grad_accum = d.f64s()?;
    let nd = d.len(8)?;
    let denom = (0..nd).map(|_| d.u64()).collect::<Result<Vec<_>>>()?;
    d.done()?;

    let mut state = TrainState {
        config,
        iteration,
        cloud,
        scene_box,
        spatial_scale,
        atf,
        tcm,
        optimizer,
        densify: DensifyStats { grad_accum, denom },
        sampler: ViewSampler { order, cursor },
        rng,
    };
    state.fill_missing_modules()?;
    state.validate()?;
    Ok(state)
}
