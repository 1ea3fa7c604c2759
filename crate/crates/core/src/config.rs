//! Task configuration: flat `key = value` text files with per-task presets.
//!
//! The format is intentionally plain (one key per line, `#` comments) so
//! configs diff cleanly and can be produced by any tool. Unknown keys are
//! rejected rather than ignored.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::recon::TrainConfig;

/// Reconstruction task selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Inpaint,
    Deblur,
    Sr,
    Denoise,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Inpaint => "inpaint",
            Task::Deblur => "deblur",
            Task::Sr => "sr",
            Task::Denoise => "denoise",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "inpaint" => Ok(Task::Inpaint),
            "deblur" => Ok(Task::Deblur),
            "sr" => Ok(Task::Sr),
            "denoise" => Ok(Task::Denoise),
            other => Err(Error::InvalidConfig(format!("unknown task '{other}'"))),
        }
    }
}

/// Everything a task run needs, resolvable from a preset, a config file,
/// and command-line overrides (in that order).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub task: Task,
    pub input: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Solver state file to continue from (`iters` more iterations).
    pub resume: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub iters: usize,
    pub patch_side: usize,
    pub stride: usize,
    /// Interior layer widths; the patch dimension brackets them on both ends.
    pub hidden: Vec<usize>,
    /// Noise level injected into the auto-encoder input.
    pub sigma: f64,
    pub slope: f64,
    pub lambda_init: f64,
    pub lr_x: f64,
    pub lr_theta: f64,
    pub assign_period: usize,
    pub lambda_target: f64,
    pub lambda_rate: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub early_stop: bool,
    pub patience: usize,
    /// Observation noise level (denoising / degradation synthesis).
    pub noise_sigma: f64,
    /// Fraction of pixels removed when synthesizing an inpainting input.
    pub missing_rate: f64,
    pub blur_width: usize,
    pub blur_std: Option<f64>,
    pub sr_factor: usize,
    /// Restrict the action set to the identity (plain patch auto-encoder).
    pub mmes: bool,
}

impl TaskConfig {
    /// Task presets with the published hyperparameters: patch side,
    /// auto-encoder widths, and injected noise level per task.
    pub fn preset(task: Task) -> Self {
        let base = Self {
            task,
            input: None,
            reference: None,
            mask: None,
            resume: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            iters: 2000,
            patch_side: 9,
            stride: 1,
            hidden: vec![81, 81, 10, 81, 81],
            sigma: 0.05,
            slope: crate::mlp::DEFAULT_SLOPE,
            lambda_init: 1.0,
            lr_x: 0.01,
            lr_theta: 0.01,
            assign_period: 10,
            lambda_target: 0.5,
            lambda_rate: 0.05,
            lambda_min: 1e-4,
            lambda_max: 1e4,
            early_stop: false,
            patience: 30,
            noise_sigma: 0.0,
            missing_rate: 0.0,
            blur_width: 9,
            blur_std: None,
            sr_factor: 4,
            mmes: false,
        };
        match task {
            Task::Inpaint => base,
            Task::Deblur => Self {
                patch_side: 4,
                hidden: vec![512, 16, 512],
                sigma: 0.01,
                ..base
            },
            Task::Sr => Self {
                patch_side: 6,
                hidden: vec![288, 16, 288],
                sigma: 0.1,
                ..base
            },
            Task::Denoise => Self {
                patch_side: 6,
                hidden: vec![288, 36, 288],
                sigma: 0.05,
                noise_sigma: 40.0 / 255.0,
                early_stop: true,
                ..base
            },
        }
    }

    /// Parse a config file body. The `task` key must be present; all other
    /// keys override that task's preset.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = split_pairs(text)?;
        let task_str = pairs
            .iter()
            .find(|(k, _)| k == "task")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::InvalidConfig("config must set 'task'".into()))?;
        let mut cfg = Self::preset(Task::parse(&task_str)?);
        cfg.apply_pairs(&pairs)?;
        Ok(cfg)
    }

    /// Apply `key = value` pairs on top of this config.
    pub fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (key, value) in pairs {
            self.apply(key, value)?;
        }
        Ok(())
    }

    /// Apply one key. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidConfig(format!("bad {what} value '{value}'"));
        match key {
            "task" => self.task = Task::parse(value)?,
            "input" => self.input = Some(PathBuf::from(value)),
            "reference" => self.reference = Some(PathBuf::from(value)),
            "mask" => self.mask = Some(PathBuf::from(value)),
            "resume" => self.resume = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "iters" => self.iters = value.parse().map_err(|_| bad("iters"))?,
            "patch_side" => self.patch_side = value.parse().map_err(|_| bad("patch_side"))?,
            "stride" => self.stride = value.parse().map_err(|_| bad("stride"))?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("hidden"))?;
            }
            "sigma" => self.sigma = value.parse().map_err(|_| bad("sigma"))?,
            "slope" => self.slope = value.parse().map_err(|_| bad("slope"))?,
            "lambda_init" => self.lambda_init = value.parse().map_err(|_| bad("lambda_init"))?,
            "lr_x" => self.lr_x = value.parse().map_err(|_| bad("lr_x"))?,
            "lr_theta" => self.lr_theta = value.parse().map_err(|_| bad("lr_theta"))?,
            "assign_period" => {
                self.assign_period = value.parse().map_err(|_| bad("assign_period"))?
            }
            "lambda_target" => {
                self.lambda_target = value.parse().map_err(|_| bad("lambda_target"))?
            }
            "lambda_rate" => self.lambda_rate = value.parse().map_err(|_| bad("lambda_rate"))?,
            "lambda_min" => self.lambda_min = value.parse().map_err(|_| bad("lambda_min"))?,
            "lambda_max" => self.lambda_max = value.parse().map_err(|_| bad("lambda_max"))?,
            "early_stop" => self.early_stop = parse_bool(value)?,
            "patience" => self.patience = value.parse().map_err(|_| bad("patience"))?,
            "noise_sigma" => self.noise_sigma = value.parse().map_err(|_| bad("noise_sigma"))?,
            "missing_rate" => {
                self.missing_rate = value.parse().map_err(|_| bad("missing_rate"))?
            }
            "blur_width" => self.blur_width = value.parse().map_err(|_| bad("blur_width"))?,
            "blur_std" => {
                self.blur_std = if value.is_empty() {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad("blur_std"))?)
                }
            }
            "sr_factor" => self.sr_factor = value.parse().map_err(|_| bad("sr_factor"))?,
            "mmes" => self.mmes = parse_bool(value)?,
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Render as the flat text format; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task = {}", self.task.as_str());
        if let Some(p) = &self.input {
            let _ = writeln!(s, "input = {}", p.display());
        }
        if let Some(p) = &self.reference {
            let _ = writeln!(s, "reference = {}", p.display());
        }
        if let Some(p) = &self.mask {
            let _ = writeln!(s, "mask = {}", p.display());
        }
        if let Some(p) = &self.resume {
            let _ = writeln!(s, "resume = {}", p.display());
        }
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "iters = {}", self.iters);
        let _ = writeln!(s, "patch_side = {}", self.patch_side);
        let _ = writeln!(s, "stride = {}", self.stride);
        let hidden: Vec<String> = self.hidden.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "hidden = {}", hidden.join(","));
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "slope = {}", self.slope);
        let _ = writeln!(s, "lambda_init = {}", self.lambda_init);
        let _ = writeln!(s, "lr_x = {}", self.lr_x);
        let _ = writeln!(s, "lr_theta = {}", self.lr_theta);
        let _ = writeln!(s, "assign_period = {}", self.assign_period);
        let _ = writeln!(s, "lambda_target = {}", self.lambda_target);
        let _ = writeln!(s, "lambda_rate = {}", self.lambda_rate);
        let _ = writeln!(s, "lambda_min = {}", self.lambda_min);
        let _ = writeln!(s, "lambda_max = {}", self.lambda_max);
        let _ = writeln!(s, "early_stop = {}", self.early_stop);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(s, "missing_rate = {}", self.missing_rate);
        let _ = writeln!(s, "blur_width = {}", self.blur_width);
        if let Some(std) = self.blur_std {
            let _ = writeln!(s, "blur_std = {std}");
        }
        let _ = writeln!(s, "sr_factor = {}", self.sr_factor);
        let _ = writeln!(s, "mmes = {}", self.mmes);
        s
    }

    /// Check the fields a task run requires.
    pub fn validate(&self) -> Result<()> {
        if self.patch_side == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(
                "patch_side and stride must be >= 1".into(),
            ));
        }
        if self.stride > self.patch_side {
            return Err(Error::InvalidConfig(
                "stride must not exceed patch_side (full coverage)".into(),
            ));
        }
        if self.sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise levels must be >= 0".into()));
        }
        if self.lambda_init <= 0.0 {
            return Err(Error::InvalidConfig("lambda_init must be positive".into()));
        }
        match self.task {
            Task::Sr => {
                if self.sr_factor < 1 {
                    return Err(Error::InvalidConfig("sr requires sr_factor >= 1".into()));
                }
            }
            Task::Deblur => {
                if self.blur_width == 0 || self.blur_width.is_multiple_of(2) {
                    return Err(Error::InvalidConfig("deblur requires an odd blur_width".into()));
                }
            }
            Task::Inpaint | Task::Denoise => {}
        }
        self.train_config().validate()
    }

    /// The schedule portion of this config.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_iters: self.iters,
            lr_x: self.lr_x,
            lr_theta: self.lr_theta,
            assign_period: self.assign_period,
            lambda_target: self.lambda_target,
            lambda_rate: self.lambda_rate,
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
            early_stop: self.early_stop,
            patience: self.patience,
            noise_energy: None,
        }
    }

    /// Full layer chain for a given channel count.
    pub fn layer_dims(&self, channels: usize) -> Vec<usize> {
        let d = self.patch_side * self.patch_side * channels;
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(d);
        dims.extend_from_slice(&self.hidden);
        dims.push(d);
        dims
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::InvalidConfig(format!("bad bool '{other}'"))),
    }
}

/// Split a config body into `(key, value)` pairs.
pub fn split_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::InvalidConfig(format!(
                "line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_published_hyperparameters() {
        let inpaint = TaskConfig::preset(Task::Inpaint);
        assert_eq!(inpaint.patch_side, 9);
        assert_eq!(inpaint.hidden, vec![81, 81, 10, 81, 81]);
        assert_eq!(inpaint.sigma, 0.05);

        let deblur = TaskConfig::preset(Task::Deblur);
        assert_eq!(deblur.patch_side * deblur.patch_side, 16);
        assert_eq!(deblur.hidden, vec![512, 16, 512]);
        assert_eq!(deblur.sigma, 0.01);

        let sr = TaskConfig::preset(Task::Sr);
        assert_eq!(sr.patch_side * sr.patch_side, 36);
        assert_eq!(sr.hidden, vec![288, 16, 288]);
        assert_eq!(sr.sigma, 0.1);
        assert_eq!(sr.sr_factor, 4);

        let denoise = TaskConfig::preset(Task::Denoise);
        assert_eq!(denoise.hidden, vec![288, 36, 288]);
        assert_eq!(denoise.sigma, 0.05);
        assert!((denoise.noise_sigma - 40.0 / 255.0).abs() < 1e-12);
        assert!(denoise.early_stop);
    }

    #[test]
    fn round_trip_parse_serialize() {
        let mut cfg = TaskConfig::preset(Task::Sr);
        cfg.input = Some(PathBuf::from("in.png"));
        cfg.reference = Some(PathBuf::from("ref.png"));
        cfg.seed = 99;
        cfg.hidden = vec![32, 4, 32];
        cfg.blur_std = Some(1.25);
        cfg.resume = Some(PathBuf::from("prev/state.bin"));
        cfg.mmes = true;
        let text = cfg.serialize();
        let back = TaskConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn parse_handles_comments_and_blank_lines() {
        let text = "# comment\n\ntask = denoise\n  iters = 5\nseed=3\n";
        let cfg = TaskConfig::parse(text).unwrap();
        assert_eq!(cfg.task, Task::Denoise);
        assert_eq!(cfg.iters, 5);
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn unknown_keys_and_missing_task_are_rejected() {
        assert!(TaskConfig::parse("task = sr\nbogus = 1\n").is_err());
        assert!(TaskConfig::parse("iters = 5\n").is_err());
        assert!(TaskConfig::parse("task = warp\n").is_err());
    }

    #[test]
    fn layer_dims_bracket_hidden_with_patch_dim() {
        let mut cfg = TaskConfig::preset(Task::Inpaint);
        cfg.patch_side = 3;
        cfg.hidden = vec![7, 2, 7];
        assert_eq!(cfg.layer_dims(1), vec![9, 7, 2, 7, 9]);
        assert_eq!(cfg.layer_dims(3), vec![27, 7, 2, 7, 27]);
    }

    #[test]
    fn shipped_preset_files_parse_against_their_presets() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../presets");
        for (file, task) in [
            ("barbara-inpaint.cfg", Task::Inpaint),
            ("deblur.cfg", Task::Deblur),
            ("sr.cfg", Task::Sr),
            ("denoise.cfg", Task::Denoise),
        ] {
            let text = std::fs::read_to_string(root.join(file)).unwrap();
            let cfg = TaskConfig::parse(&text).unwrap();
            let preset = TaskConfig::preset(task);
            assert_eq!(cfg.task, task, "{file}");
            assert_eq!(cfg.patch_side, preset.patch_side, "{file}");
            assert_eq!(cfg.hidden, preset.hidden, "{file}");
            assert_eq!(cfg.sigma, preset.sigma, "{file}");
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn validate_catches_bad_combinations() {
        let mut cfg = TaskConfig::preset(Task::Deblur);
        cfg.blur_width = 8;
        assert!(cfg.validate().is_err());
        let mut cfg = TaskConfig::preset(Task::Inpaint);
        cfg.stride = 20;
        assert!(cfg.validate().is_err());
        let mut cfg = TaskConfig::preset(Task::Denoise);
        cfg.lambda_init = 0.0;
        assert!(cfg.validate().is_err());
    }
}
