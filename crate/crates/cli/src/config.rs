//! Reconstruction settings: defaults, a flat `key = value` file, and
//! command-line overrides, merged in that order of increasing precedence.

use std::fmt;
use std::path::{Path, PathBuf};

use psr_core::optimizer::{Schedule, Stage, NOISY_FINAL_SIGMA};
use psr_core::{Precision, SolverParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Clean,
    Noisy,
}

/// Every setting is optional so layers can be merged; `resolve` fills in
/// defaults and validates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub resolutions: Option<Vec<usize>>,
    pub iterations: Option<Vec<usize>>,
    pub sigmas: Option<Vec<f64>>,
    pub lr: Option<f64>,
    pub lr_decay: Option<f64>,
    pub points: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub precision: Option<Precision>,
    pub ground_truth: Option<PathBuf>,
    /// Zero disables resampling.
    pub resample_every: Option<usize>,
}

pub const KEYS: &[&str] = &[
    "input",
    "output",
    "resolutions",
    "iterations",
    "sigmas",
    "lr",
    "lr_decay",
    "points",
    "samples",
    "seed",
    "preset",
    "precision",
    "ground_truth",
    "resample_every",
];

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_scalar(key, s))
        .collect()
}

pub fn parse_preset(value: &str) -> Result<Preset, ConfigError> {
    match value.trim() {
        "clean" => Ok(Preset::Clean),
        "noisy" => Ok(Preset::Noisy),
        other => err(format!("preset must be clean or noisy, got {other:?}")),
    }
}

pub fn parse_precision(value: &str) -> Result<Precision, ConfigError> {
    match value.trim() {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => err(format!("precision must be f32 or f64, got {other:?}")),
    }
}

impl RunConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are
    /// ignored; unknown and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {}: expected key = value", k + 1));
            };
            let key = key.trim();
            if !KEYS.contains(&key) {
                return err(format!("line {}: unknown key {key:?}", k + 1));
            }
            if seen.contains(&key) {
                return err(format!("line {}: key {key:?} given twice", k + 1));
            }
            seen.push(key);
            cfg.set(key, value.trim())
                .map_err(|e| ConfigError(format!("line {}: {}", k + 1, e.0)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "input" => self.input = Some(value.into()),
            "output" => self.output = Some(value.into()),
            "resolutions" => self.resolutions = Some(parse_list(key, value)?),
            "iterations" => self.iterations = Some(parse_list(key, value)?),
            "sigmas" => self.sigmas = Some(parse_list(key, value)?),
            "lr" => self.lr = Some(parse_scalar(key, value)?),
            "lr_decay" => self.lr_decay = Some(parse_scalar(key, value)?),
            "points" => self.points = Some(parse_scalar(key, value)?),
            "samples" => self.samples = Some(parse_scalar(key, value)?),
            "seed" => self.seed = Some(parse_scalar(key, value)?),
            "preset" => self.preset = Some(parse_preset(value)?),
            "precision" => self.precision = Some(parse_precision(value)?),
            "ground_truth" => self.ground_truth = Some(value.into()),
            "resample_every" => self.resample_every = Some(parse_scalar(key, value)?),
            _ => return err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merged(self, over: RunConfig) -> RunConfig {
        RunConfig {
            input: over.input.or(self.input),
            output: over.output.or(self.output),
            resolutions: over.resolutions.or(self.resolutions),
            iterations: over.iterations.or(self.iterations),
            sigmas: over.sigmas.or(self.sigmas),
            lr: over.lr.or(self.lr),
            lr_decay: over.lr_decay.or(self.lr_decay),
            points: over.points.or(self.points),
            samples: over.samples.or(self.samples),
            seed: over.seed.or(self.seed),
            preset: over.preset.or(self.preset),
            precision: over.precision.or(self.precision),
            ground_truth: over.ground_truth.or(self.ground_truth),
            resample_every: over.resample_every.or(self.resample_every),
        }
    }

    /// Validates and expands into a schedule and solver parameters.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let input = self.input.clone().ok_or_else(|| ConfigError("no input file given".into()))?;
        let output = self.output.clone().ok_or_else(|| ConfigError("no output file given".into()))?;
        let preset = self.preset.unwrap_or_default();
        let base = match preset {
            Preset::Clean => Schedule::default(),
            Preset::Noisy => Schedule::noisy(),
        };
        let resolutions = self
            .resolutions
            .clone()
            .unwrap_or_else(|| base.stages.iter().map(|s| s.resolution).collect());
        let n = resolutions.len();
        if n == 0 {
            return err("resolutions: at least one stage is required");
        }
        let per_stage = |name: &str, given: usize| -> Result<(), ConfigError> {
            if given == n || given == 1 {
                Ok(())
            } else {
                err(format!("{name}: {given} values for {n} stages"))
            }
        };
        let iterations = match &self.iterations {
            Some(v) => {
                per_stage("iterations", v.len())?;
                (0..n).map(|k| v[k.min(v.len() - 1)]).collect()
            }
            None => (0..n)
                .map(|k| base.stages[k.min(base.stages.len() - 1)].iterations)
                .collect::<Vec<_>>(),
        };
        let sigmas: Vec<f64> = match &self.sigmas {
            Some(v) => {
                per_stage("sigmas", v.len())?;
                (0..n).map(|k| v[k.min(v.len() - 1)]).collect()
            }
            None => {
                let mut s: Vec<f64> = resolutions.iter().map(|&r| Schedule::default_sigma(r)).collect();
                if preset == Preset::Noisy {
                    s[n - 1] = base.stages.last().map(|st| st.sigma).unwrap_or(NOISY_FINAL_SIGMA);
                }
                s
            }
        };
        let lr = self.lr.unwrap_or(base.stages[0].learning_rate);
        let decay = self.lr_decay.unwrap_or(0.7);
        if !(lr >= 0.0 && lr.is_finite()) {
            return err(format!("lr must be a non-negative number, got {lr}"));
        }
        if !(decay > 0.0 && decay.is_finite()) {
            return err(format!("lr_decay must be positive, got {decay}"));
        }
        let stages = (0..n)
            .map(|k| Stage {
                resolution: resolutions[k],
                iterations: iterations[k],
                sigma: sigmas[k],
                learning_rate: lr * decay.powi(k as i32),
            })
            .collect();
        let schedule = Schedule {
            stages,
            resample_every: match self.resample_every {
                Some(0) => None,
                Some(k) => Some(k),
                None => base.resample_every,
            },
            num_points: self.points.unwrap_or(base.num_points),
            loss_samples: self.samples.unwrap_or(base.loss_samples),
            init_radius: base.init_radius,
            seed: self.seed.unwrap_or(0),
        };
        schedule.validate().map_err(|e| ConfigError(e.to_string()))?;
        let params = SolverParams {
            precision: self.precision.unwrap_or_default(),
            ..SolverParams::default()
        };
        Ok(Resolved {
            input,
            output,
            schedule,
            params,
            ground_truth: self.ground_truth.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub input: PathBuf,
    pub output: PathBuf,
    pub schedule: Schedule,
    pub params: SolverParams,
    pub ground_truth: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_io() -> RunConfig {
        RunConfig {
            input: Some("in.xyz".into()),
            output: Some("out.obj".into()),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_match_the_library_schedule() {
        let r = with_io().resolve().unwrap();
        assert_eq!(r.schedule, Schedule::default());
        assert_eq!(r.params, SolverParams::default());
        let mut noisy = with_io();
        noisy.preset = Some(Preset::Noisy);
        assert_eq!(noisy.resolve().unwrap().schedule, Schedule::noisy());
    }

    #[test]
    fn file_parsing() {
        let cfg = RunConfig::parse(
            "# comment\ninput = a.ply\nresolutions = 32, 64\niterations=10,20\nsigmas = 2,3\nseed = 7 # trailing\nprecision = f32\nresample_every = 0\n",
        )
        .unwrap();
        assert_eq!(cfg.resolutions, Some(vec![32, 64]));
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.precision, Some(Precision::F32));
        let r = cfg.merged(RunConfig {
            output: Some("o.obj".into()),
            ..Default::default()
        });
        let res = r.resolve().unwrap();
        assert_eq!(res.schedule.stages.len(), 2);
        assert_eq!(res.schedule.stages[1].iterations, 20);
        assert!((res.schedule.stages[1].learning_rate - 1.4e-3).abs() < 1e-15);
        assert_eq!(res.schedule.resample_every, None);
        assert_eq!(res.params.precision, Precision::F32);
    }

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        assert!(RunConfig::parse("colour = red\n").unwrap_err().0.contains("unknown key"));
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
        assert!(RunConfig::parse("seed\n").is_err());
        assert!(RunConfig::parse("seed = -1\n").is_err());
        assert!(RunConfig::parse("preset = loud\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = RunConfig::parse("seed = 1\npoints = 500\n").unwrap();
        let flags = RunConfig {
            seed: Some(2),
            ..Default::default()
        };
        let m = file.merged(flags);
        assert_eq!(m.seed, Some(2));
        assert_eq!(m.points, Some(500));
    }

    #[test]
    fn invalid_schedules() {
        let mut c = with_io();
        c.resolutions = Some(vec![32, 64]);
        c.iterations = Some(vec![1, 2, 3]);
        assert!(c.resolve().is_err());
        c.iterations = None;
        c.resolutions = Some(vec![64, 32]);
        assert!(c.resolve().is_err());
        c.resolutions = Some(vec![31]);
        assert!(c.resolve().is_err());
        let mut c = with_io();
        c.lr = Some(-1.0);
        assert!(c.resolve().is_err());
        assert!(RunConfig::default().resolve().is_err());
    }

    #[test]
    fn single_values_broadcast() {
        let mut c = with_io();
        c.resolutions = Some(vec![16, 32, 64]);
        c.iterations = Some(vec![5]);
        c.sigmas = Some(vec![1.5]);
        let s = c.resolve().unwrap().schedule;
        assert!(s.stages.iter().all(|st| st.iterations == 5 && st.sigma == 1.5));
    }
}
