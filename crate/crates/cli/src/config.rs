//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` or `;` are comments and `[section]` headers are
//! ignored, so a file may be grouped for readability. Every key must be
//! known; later assignments win, and command-line `--set key=value`
//! overrides are applied after the file.

use std::collections::BTreeSet;
use std::fmt::Write;
use std::path::Path;
use std::str::FromStr;

use kat_core::anchor_masks::default_deltas;
use kat_core::bag_io::SynthConfig;
use kat_core::model::{KatConfig, MaskSettings};
use kat_core::train::{AdamConfig, Monitor, TrainConfig};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // synthetic data
    pub n_bags: usize,
    pub n_classes: usize,
    pub d_f: usize,
    pub side_min: usize,
    pub side_max: usize,
    pub fill: f64,
    pub motif_radius: f64,
    pub motif_strength: f64,
    pub noise_std: f64,
    pub synth_seed: u64,
    pub split: [f64; 3],
    pub split_seed: u64,
    // model
    pub d_e: usize,
    pub blocks: usize,
    pub heads: usize,
    pub d_ff: Option<usize>,
    pub dropout: f64,
    pub shared_projections: bool,
    pub cls_residual: bool,
    // masks
    pub nk: usize,
    pub scales: Option<usize>,
    pub anchor_seed: u64,
    // training
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub monitor: Monitor,
    /// Keys assigned by the file or by overrides.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        let m = KatConfig::reference(s.d_f, s.n_classes);
        let a = AdamConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            n_bags: s.n_bags,
            n_classes: s.n_classes,
            d_f: s.d_f,
            side_min: s.side_min,
            side_max: s.side_max,
            fill: s.fill,
            motif_radius: s.motif_radius,
            motif_strength: s.motif_strength,
            noise_std: s.noise_std,
            synth_seed: s.seed,
            split: [6.0, 1.0, 3.0],
            split_seed: s.seed,
            d_e: m.d_e,
            blocks: m.n_blocks,
            heads: m.n_heads,
            d_ff: None,
            dropout: m.dropout,
            shared_projections: m.shared_projections,
            cls_residual: m.cls_residual,
            nk: 144,
            scales: None,
            anchor_seed: 0,
            lr: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            eps_adam: a.eps,
            weight_decay: a.weight_decay,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            seed: t.seed,
            monitor: t.monitor,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("bad value '{value}' for key '{key}'")))
}

fn parse_ratios(value: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::usage(format!("split must look like 6:1:3, got '{value}'")));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse("split", p.trim())?;
    }
    Ok(out)
}

fn monitor_name(m: Monitor) -> &'static str {
    match m {
        Monitor::ValLoss => "val_loss",
        Monitor::ValAccuracy => "val_accuracy",
        Monitor::ValMacroAuc => "val_macro_auc",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "n_bags" => self.n_bags = parse(key, v)?,
            "n_classes" => self.n_classes = parse(key, v)?,
            "d_f" => self.d_f = parse(key, v)?,
            "side_min" => self.side_min = parse(key, v)?,
            "side_max" => self.side_max = parse(key, v)?,
            "fill" => self.fill = parse(key, v)?,
            "motif_radius" => self.motif_radius = parse(key, v)?,
            "motif_strength" => self.motif_strength = parse(key, v)?,
            "noise_std" => self.noise_std = parse(key, v)?,
            "synth_seed" => self.synth_seed = parse(key, v)?,
            "split" => self.split = parse_ratios(v)?,
            "split_seed" => self.split_seed = parse(key, v)?,
            "d_e" => self.d_e = parse(key, v)?,
            "blocks" => self.blocks = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "d_ff" => self.d_ff = Some(parse(key, v)?),
            "dropout" => self.dropout = parse(key, v)?,
            "shared_projections" => self.shared_projections = parse(key, v)?,
            "cls_residual" => self.cls_residual = parse(key, v)?,
            "nk" => self.nk = parse(key, v)?,
            "scales" => self.scales = Some(parse(key, v)?),
            "anchor_seed" => self.anchor_seed = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "eps_adam" => self.eps_adam = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "monitor" => self.monitor = v.parse().map_err(|e| CliError::usage(format!("{e}")))?,
            _ => return Err(CliError::usage(format!("unknown config key '{key}'"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| CliError::usage(format!("{origin}:{}: {}", i + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("override '{pair}' is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::data(format!("cannot read config {}: {e}", p.display())))?;
            c.apply_text(&text, &p.display().to_string())?;
        }
        for o in overrides {
            c.apply_override(o)?;
        }
        Ok(c)
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_bags: self.n_bags,
            n_classes: self.n_classes,
            d_f: self.d_f,
            side_min: self.side_min,
            side_max: self.side_max,
            fill: self.fill,
            motif_radius: self.motif_radius,
            motif_strength: self.motif_strength,
            noise_std: self.noise_std,
            seed: self.synth_seed,
        }
    }

    pub fn model(&self) -> Result<KatConfig, CliError> {
        let mut m = KatConfig::new(self.d_f, self.d_e, self.blocks, self.heads, self.n_classes);
        if let Some(f) = self.d_ff {
            m.d_ff = f;
        }
        m.dropout = self.dropout;
        m.shared_projections = self.shared_projections;
        m.cls_residual = self.cls_residual;
        m.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(m)
    }

    /// Mask scales are bound one per block.
    pub fn scales(&self) -> Result<usize, CliError> {
        match self.scales {
            Some(s) if s != self.blocks => Err(CliError::usage(format!(
                "scales = {s} contradicts blocks = {}; each block uses one mask scale",
                self.blocks
            ))),
            _ => Ok(self.blocks),
        }
    }

    pub fn masks(&self) -> Result<MaskSettings, CliError> {
        if self.nk == 0 {
            return Err(CliError::usage("nk must be at least 1"));
        }
        Ok(MaskSettings {
            nk_bar: self.nk,
            anchor_seed: self.anchor_seed,
            deltas: default_deltas(self.nk, self.scales()?),
        })
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let t = TrainConfig {
            adam: AdamConfig {
                learning_rate: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps_adam,
                weight_decay: self.weight_decay,
            },
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            seed: self.seed,
            monitor: self.monitor,
        };
        t.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(t)
    }

    /// Every key with its resolved value, in a form `apply_text` reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("n_bags", self.n_bags.to_string());
        kv("n_classes", self.n_classes.to_string());
        kv("d_f", self.d_f.to_string());
        kv("side_min", self.side_min.to_string());
        kv("side_max", self.side_max.to_string());
        kv("fill", self.fill.to_string());
        kv("motif_radius", self.motif_radius.to_string());
        kv("motif_strength", self.motif_strength.to_string());
        kv("noise_std", self.noise_std.to_string());
        kv("synth_seed", self.synth_seed.to_string());
        kv(
            "split",
            format!("{}:{}:{}", self.split[0], self.split[1], self.split[2]),
        );
        kv("split_seed", self.split_seed.to_string());
        kv("d_e", self.d_e.to_string());
        kv("blocks", self.blocks.to_string());
        kv("heads", self.heads.to_string());
        kv("d_ff", self.d_ff.unwrap_or(4 * self.d_e).to_string());
        kv("dropout", self.dropout.to_string());
        kv("shared_projections", self.shared_projections.to_string());
        kv("cls_residual", self.cls_residual.to_string());
        kv("nk", self.nk.to_string());
        kv("scales", self.scales.unwrap_or(self.blocks).to_string());
        kv("anchor_seed", self.anchor_seed.to_string());
        kv("lr", self.lr.to_string());
        kv("beta1", self.beta1.to_string());
        kv("beta2", self.beta2.to_string());
        kv("eps_adam", self.eps_adam.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("monitor", monitor_name(self.monitor).to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_reads_back() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# comment\n[model]\nd_e = 32\nheads=4\nsplit = 7:1:2\nmonitor = val_accuracy\n",
            "t",
        )
        .unwrap();
        c.apply_override("lr=0.001").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), "resolved").unwrap();
        assert_eq!(back.to_text(), c.to_text());
        assert_eq!(back.d_e, 32);
        assert_eq!(back.split, [7.0, 1.0, 2.0]);
        assert_eq!(back.lr, 0.001);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("learning_rate = 1", "t").is_err());
        assert!(c.apply_text("d_e = lots", "t").is_err());
        assert!(c.apply_text("just words", "t").is_err());
        assert!(c.apply_override("split=1:2").is_err());
    }

    #[test]
    fn scales_must_match_blocks() {
        let mut c = RunConfig::default();
        c.set("blocks", "2").unwrap();
        assert_eq!(c.scales().unwrap(), 2);
        c.set("scales", "3").unwrap();
        assert!(c.scales().is_err());
    }
}
