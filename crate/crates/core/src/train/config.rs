//! Training configuration as flat `key = value` pairs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossWeights;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub seed: u64,

    pub atf: bool,
    pub tcm: bool,
    pub dis_loss: bool,

    pub atf_lr_start: f64,
    pub atf_lr_end: f64,
    pub atf_depth: usize,
    pub atf_width: usize,
    pub atf_frequencies: usize,

    pub position_lr_start: f64,
    pub position_lr_end: f64,
    pub sh_lr: f64,
    pub sh_rest_lr: f64,
    pub opacity_lr: f64,
    pub scale_lr: f64,
    pub rotation_lr: f64,

    pub sh_degree: usize,
    pub sh_increase_interval: u64,
    pub init_opacity: f64,

    pub densify_interval: u64,
    pub densify_from: u64,
    pub densify_until: u64,
    pub densify_grad_threshold: f64,
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub opacity_reset_interval: u64,
    pub max_gaussians: usize,

    pub lambda_dssim: f64,
    pub lambda_dis: f64,
    pub iter_t: u64,
    pub k_harris: f64,

    pub background: f64,
    pub checkpoints: Vec<u64>,
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            seed: 0,
            atf: true,
            tcm: true,
            dis_loss: true,
            atf_lr_start: 8e-4,
            atf_lr_end: 1.6e-6,
            atf_depth: crate::atf::DEFAULT_DEPTH,
            atf_width: crate::atf::DEFAULT_WIDTH,
            atf_frequencies: crate::atf::DEFAULT_FREQUENCIES,
            position_lr_start: 1.6e-4,
            position_lr_end: 1.6e-6,
            sh_lr: 2.5e-3,
            sh_rest_lr: 2.5e-3 / 20.0,
            opacity_lr: 5e-2,
            scale_lr: 5e-3,
            rotation_lr: 1e-3,
            sh_degree: 3,
            sh_increase_interval: 1000,
            init_opacity: 0.1,
            densify_interval: 100,
            densify_from: 500,
            densify_until: 15_000,
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 5e-3,
            opacity_reset_interval: 3000,
            max_gaussians: 1_000_000,
            lambda_dssim: 0.2,
            lambda_dis: 0.2,
            iter_t: 5000,
            k_harris: 0.04,
            background: 0.0,
            checkpoints: vec![7000, 30_000],
            log_interval: 1000,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for key '{key}'"))),
    }
}

macro_rules! config_keys {
    ($( $key:ident : $kind:ident ),* $(,)?) => {
        impl TrainConfig {
            /// Every recognised key, in echo order.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key {
                    $(stringify!($key) => { self.$key = config_keys!(@parse $kind, key, value); })*
                    _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
                }
                Ok(())
            }

            /// Fully resolved configuration as `key = value` lines.
            pub fn to_kv(&self) -> String {
                let mut s = String::new();
                $( let _ = writeln!(s, "{} = {}", stringify!($key), config_keys!(@show $kind, self.$key)); )*
                s
            }
        }
    };
    (@parse num, $k:expr, $v:expr) => { parse_num($k, $v)? };
    (@parse bool, $k:expr, $v:expr) => { parse_bool($k, $v)? };
    (@parse list, $k:expr, $v:expr) => { parse_list($k, $v)? };
    (@show num, $e:expr) => { format!("{:?}", $e) };
    (@show bool, $e:expr) => { $e.to_string() };
    (@show list, $e:expr) => { $e.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") };
}

fn parse_list(key: &str, value: &str) -> Result<Vec<u64>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

config_keys! {
    iterations: num,
    seed: num,
    atf: bool,
    tcm: bool,
    dis_loss: bool,
    atf_lr_start: num,
    atf_lr_end: num,
    atf_depth: num,
    atf_width: num,
    atf_frequencies: num,
    position_lr_start: num,
    position_lr_end: num,
    sh_lr: num,
    sh_rest_lr: num,
    opacity_lr: num,
    scale_lr: num,
    rotation_lr: num,
    sh_degree: num,
    sh_increase_interval: num,
    init_opacity: num,
    densify_interval: num,
    densify_from: num,
    densify_until: num,
    densify_grad_threshold: num,
    percent_dense: num,
    prune_opacity: num,
    opacity_reset_interval: num,
    max_gaussians: num,
    lambda_dssim: num,
    lambda_dis: num,
    iter_t: num,
    k_harris: num,
    background: num,
    checkpoints: list,
    log_interval: num,
}

impl TrainConfig {
    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text, "config")?;
        Ok(c)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_dis: if self.dis_loss { self.lambda_dis } else { 0.0 },
            lambda_dssim: self.lambda_dssim,
            iter_t: self.iter_t,
            k_harris: self.k_harris,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("atf", self.atf_lr_start, self.atf_lr_end),
            ("position", self.position_lr_start, self.position_lr_end),
        ];
        for (name, start, end) in rates {
            if !(end > 0.0 && end <= start && start.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} learning rate needs 0 < end <= start, got {start} -> {end}"
                )));
            }
        }
        for (name, lr) in [
            ("sh_lr", self.sh_lr),
            ("sh_rest_lr", self.sh_rest_lr),
            ("opacity_lr", self.opacity_lr),
            ("scale_lr", self.scale_lr),
            ("rotation_lr", self.rotation_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        for (name, v) in [
            ("densify_interval", self.densify_interval),
            ("opacity_reset_interval", self.opacity_reset_interval),
            ("sh_increase_interval", self.sh_increase_interval),
            ("log_interval", self.log_interval),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.sh_degree > crate::sh::MAX_SH_DEGREE {
            return Err(Error::Config(format!("sh_degree {} exceeds 3", self.sh_degree)));
        }
        if !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return Err(Error::Config("init_opacity must lie in (0, 1)".into()));
        }
        if self.atf_depth == 0 || self.atf_width == 0 {
            return Err(Error::Config("ATF depth and width must be positive".into()));
        }
        LossWeights {
            lambda_dis: self.lambda_dis,
            ..self.loss_weights()
        }
        .validate()
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut c = TrainConfig::default();
        c.iterations = 1234;
        c.atf = false;
        c.checkpoints = vec![5, 10];
        c.sh_rest_lr = 0.1 + 0.2;
        let back = TrainConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.to_kv().lines().count(), TrainConfig::KEYS.len());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = TrainConfig::from_kv("iterations = 5\nbogus_key = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_key") && msg.contains(":2"), "{msg}");
        assert!(TrainConfig::from_kv("atf = maybe").is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            atf_lr_end: 1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            densify_interval: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn disabling_dis_loss_gives_baseline_weights() {
        let c = TrainConfig {
            dis_loss: false,
            ..TrainConfig::default()
        };
        let w = c.loss_weights();
        assert_eq!(w.lambda_dis, 0.0);
        assert_eq!(w.l1_weight(), 0.8);
    }
}
