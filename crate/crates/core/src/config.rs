//! Flat `key = value` run configuration.
//!
//! Lines hold one `key = value` pair; `#` starts a comment. Keys are dotted
//! by section (`network.decoder_width`, `train.batch_size`, ...). Unknown
//! keys and malformed values are rejected with an error naming the key.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::data::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::MetricOptions;
use crate::network::NetworkConfig;
use crate::train::TrainSchedule;

/// Parses `key = value` lines, keeping the last value of repeated keys.
pub fn parse_kv(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`"))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::config(format!("line {}", n + 1), "empty key"));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("invalid value `{value}`: {e}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got `{value}`"))),
    }
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

/// `a,b,c` or `axbxc`.
pub(crate) fn parse_triple(key: &str, value: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = value
        .split([',', 'x'])
        .map(|v| parse(key, v.trim()))
        .collect::<Result<_>>()?;
    <[usize; 3]>::try_from(parts)
        .map_err(|_| Error::config(key, format!("expected three values, got `{value}`")))
}

/// Semicolon-separated triples, e.g. `2,2,2; 1,2,2`.
pub(crate) fn parse_triples(key: &str, value: &str) -> Result<Vec<[usize; 3]>> {
    value.split(';').map(|v| parse_triple(key, v.trim())).collect()
}

pub(crate) fn fmt_triple(t: [usize; 3]) -> String {
    format!("{},{},{}", t[0], t[1], t[2])
}

pub(crate) fn fmt_list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

const PROFILE_KEY: &str = "network.profile";

/// Everything a command needs, assembled from one config file plus
/// command-line overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub synth: SynthConfig,
    pub train: TrainSchedule,
    pub loss: LossWeights,
    pub metrics: MetricOptions,
    pub seed: u64,
}

impl RunConfig {
    /// Toy-scale defaults for every section.
    pub fn toy() -> Self {
        RunConfig {
            network: NetworkConfig::toy(),
            synth: SynthConfig::default(),
            train: TrainSchedule::toy(),
            loss: LossWeights::default(),
            metrics: MetricOptions::default(),
            seed: 0,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_with_defaults(&text)
    }

    pub fn from_str_with_defaults(text: &str) -> Result<Self> {
        let mut cfg = Self::toy();
        let kv = parse_kv(text)?;
        // A profile resets every network field, so it goes first.
        if let Some(p) = kv.get(PROFILE_KEY) {
            cfg.set(PROFILE_KEY, p)?;
        }
        for (k, v) in kv.iter().filter(|(k, _)| *k != PROFILE_KEY) {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "seed" {
            self.seed = parse(key, value)?;
            return Ok(());
        }
        let (section, rest) = key
            .split_once('.')
            .ok_or_else(|| Error::config(key, "unknown key"))?;
        match section {
            "network" => self.network.set(rest, value),
            "synth" => self.synth.set(rest, value),
            "train" => self.train.set(rest, value),
            "loss" => set_loss(&mut self.loss, rest, value),
            "metrics" => self.metrics.set(rest, value),
            _ => Err(Error::config(key, "unknown section")),
        }
        .map_err(|e| match e {
            Error::Config { key: k, msg } if k == rest => Error::Config {
                key: key.to_string(),
                msg,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.synth.validate()?;
        self.train.validate()?;
        for (k, v) in [
            ("loss.actor", self.loss.actor),
            ("loss.action", self.loss.action),
            ("loss.mask", self.loss.mask),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, "weight must be finite and nonnegative"));
            }
        }
        if self.loss.dice_epsilon.is_nan() || self.loss.dice_epsilon <= 0.0 {
            return Err(Error::config("loss.dice_epsilon", "must be positive"));
        }
        if self.synth.frames() != self.network.input {
            return Err(Error::config(
                "synth.frames",
                format!(
                    "synthetic clips are {:?} but the network expects {:?}",
                    self.synth.frames(),
                    self.network.input
                ),
            ));
        }
        Ok(())
    }

    /// Serializes back into parseable `key = value` lines.
    pub fn to_kv_string(&self) -> String {
        let mut out = format!("seed = {}\n", self.seed);
        let sections: [(&str, Vec<(String, String)>); 5] = [
            ("network", self.network.entries()),
            ("synth", self.synth.entries()),
            ("train", self.train.entries()),
            ("loss", loss_entries(&self.loss)),
            ("metrics", self.metrics.entries()),
        ];
        for (section, entries) in sections {
            for (k, v) in entries {
                out.push_str(&format!("{section}.{k} = {v}\n"));
            }
        }
        out
    }
}

fn set_loss(w: &mut LossWeights, key: &str, value: &str) -> Result<()> {
    match key {
        "actor" => w.actor = parse(key, value)?,
        "action" => w.action = parse(key, value)?,
        "mask" => w.mask = parse(key, value)?,
        "dice_epsilon" => w.dice_epsilon = parse(key, value)?,
        _ => return Err(Error::config(key, "unknown key")),
    }
    Ok(())
}

fn loss_entries(w: &LossWeights) -> Vec<(String, String)> {
    vec![
        ("actor".into(), w.actor.to_string()),
        ("action".into(), w.action.to_string()),
        ("mask".into(), w.mask.to_string()),
        ("dice_epsilon".into(), w.dice_epsilon.to_string()),
    ]
}
