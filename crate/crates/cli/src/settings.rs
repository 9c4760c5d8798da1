//! Effective run settings: defaults, then a `key = value` file, then flags.

use std::fmt::Write as _;
use std::path::Path;

use hpdnet::hpd::Fusion;
use hpdnet::net::{parse_key_values, Downsampler, NetConfig};
use hpdnet::train::TrainConfig;
use hpdnet::{Error, Result};

#[derive(Debug, Clone)]
pub struct Settings {
    pub depth: usize,
    pub base_channels: usize,
    /// `None` means: take the class count from the dataset.
    pub classes: Option<usize>,
    pub downsamplers: Option<Vec<Downsampler>>,
    pub num_hpd: Option<usize>,
    pub fusion: Fusion,
    pub train: TrainConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub size: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let net = NetConfig::default();
        Self {
            depth: net.depth,
            base_channels: net.base_channels,
            classes: None,
            downsamplers: None,
            num_hpd: None,
            fusion: net.fusion,
            train: TrainConfig::default(),
            n_train: 300,
            n_val: 50,
            size: 64,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "depth" => self.depth = parse(key, value)?,
            "base_channels" => self.base_channels = parse(key, value)?,
            "classes" => self.classes = Some(parse(key, value)?),
            "fusion" => self.fusion = value.parse()?,
            "num_hpd" => self.num_hpd = Some(parse(key, value)?),
            "downsamplers" => {
                self.downsamplers = Some(value.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?)
            }
            "n_train" => self.n_train = parse(key, value)?,
            "n_val" => self.n_val = parse(key, value)?,
            "size" => self.size = parse(key, value)?,
            _ => {
                if !self.train.set(key, value)? {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Apply a config file (if any), then flag overrides in order.
    pub fn load(file: Option<&Path>, overrides: &[(&str, Option<String>)]) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            for (k, v) in parse_key_values(&text)? {
                s.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            if let Some(v) = v {
                s.set(k, v)?;
            }
        }
        Ok(s)
    }

    pub fn net_config(&self, dataset_classes: usize) -> Result<NetConfig> {
        let classes = self.classes.unwrap_or(dataset_classes);
        let mut cfg = NetConfig::new(self.depth, self.base_channels, classes).with_fusion(self.fusion);
        match (&self.downsamplers, self.num_hpd) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either downsamplers or num_hpd, not both".into()))
            }
            (Some(d), None) => cfg.downsamplers = d.clone(),
            (None, k) => cfg = cfg.with_num_hpd(k.unwrap_or(0))?,
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn data_text(&self, classes: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.train.seed);
        let _ = writeln!(s, "n_train = {}", self.n_train);
        let _ = writeln!(s, "n_val = {}", self.n_val);
        let _ = writeln!(s, "size = {}", self.size);
        let _ = writeln!(s, "classes = {classes}");
        s
    }

    /// Full effective config for a training-type command.
    pub fn run_text(&self, net: &NetConfig) -> String {
        let mut s = String::new();
        let downs: Vec<&str> = net.downsamplers.iter().map(|d| d.as_str()).collect();
        let _ = writeln!(s, "depth = {}", net.depth);
        let _ = writeln!(s, "base_channels = {}", net.base_channels);
        let _ = writeln!(s, "classes = {}", net.classes);
        let _ = writeln!(s, "downsamplers = {}", downs.join(","));
        let _ = writeln!(s, "fusion = {}", net.fusion);
        s.push_str(&self.train.to_text());
        s
    }
}
