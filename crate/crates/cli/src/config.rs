use std::path::Path;
use std::str::FromStr;

use matchnet::prefs::DistributionKind;
use matchnet::{DistributionConfig, TrainConfig};

use crate::error::{CliError, CliResult};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "MATCH_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Flat `key = value` file. `#` starts a comment anywhere on a line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: Vec<Entry>,
}

const KNOWN_KEYS: &[&str] = &[
    "preset",
    "n",
    "m",
    "distribution",
    "p_corr",
    "p_trunc",
    "seed",
    "lambda",
    "batch_size",
    "iterations",
    "base_lr",
    "lr_milestones",
    "hidden_layers",
    "hidden_units",
    "weight_decay",
    "eval_every",
    "test_size",
];

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(CliError::Config {
                    line,
                    message: format!("expected `key = value`, found `{content}`"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::Config {
                    line,
                    message: format!("unknown key `{key}`"),
                });
            }
            if value.is_empty() {
                return Err(CliError::Config {
                    line,
                    message: format!("missing value for `{key}`"),
                });
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(CliError::Config {
                    line,
                    message: format!("`{key}` already set on line {}", prev.line),
                });
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line,
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn value<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        let Some(e) = self.get(key) else {
            return Ok(None);
        };
        e.value.parse().map(Some).map_err(|_| CliError::Config {
            line: e.line,
            message: format!("cannot parse `{}` for `{key}`", e.value),
        })
    }

    fn list(&self, key: &str) -> CliResult<Option<Vec<usize>>> {
        let Some(e) = self.get(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse())
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|_| CliError::Config {
                line: e.line,
                message: format!("cannot parse `{}` as a list of integers", e.value),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    PaperUncorrelated,
    PaperCorrelated,
    Desk,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper-uncorrelated" => Ok(Preset::PaperUncorrelated),
            "paper-correlated" => Ok(Preset::PaperCorrelated),
            "desk" => Ok(Preset::Desk),
            _ => Err(format!(
                "unknown preset `{s}` (expected paper-uncorrelated, paper-correlated or desk)"
            )),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub lambda: Option<f64>,
    /// Raw value of [`SEED_ENV`], if set.
    pub env_seed: Option<String>,
}

impl Overrides {
    pub fn from_env() -> Self {
        Self {
            env_seed: std::env::var(SEED_ENV).ok(),
            ..Self::default()
        }
    }
}

/// Distribution described by the file alone. Defaults: 4x4, uncorrelated,
/// truncation 0.2, seed 0.
pub fn distribution(file: &ConfigFile, overrides: &Overrides) -> CliResult<DistributionConfig> {
    let preset = preset(file, overrides)?;
    let n = file.value("n")?.unwrap_or(4);
    let m = file.value("m")?.unwrap_or(4);
    let p_trunc = file.value("p_trunc")?.unwrap_or(0.2);
    let mut seed = file.value("seed")?.unwrap_or(0u64);
    if let Some(raw) = &overrides.env_seed {
        seed = raw
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?;
    }
    let kind = match file.get("distribution") {
        None if preset == Some(Preset::PaperCorrelated) => DistributionKind::Correlated,
        None => DistributionKind::Uncorrelated,
        Some(e) => match e.value.as_str() {
            "uncorrelated" => DistributionKind::Uncorrelated,
            "correlated" => DistributionKind::Correlated,
            other => {
                return Err(CliError::Config {
                    line: e.line,
                    message: format!("unknown distribution `{other}`"),
                })
            }
        },
    };
    let dist = match kind {
        DistributionKind::Uncorrelated => {
            if let Some(e) = file.get("p_corr") {
                return Err(CliError::Config {
                    line: e.line,
                    message: "p_corr needs `distribution = correlated`".into(),
                });
            }
            DistributionConfig::uncorrelated(n, m, p_trunc, seed)
        }
        DistributionKind::Correlated => {
            let p_corr = file.value("p_corr")?.unwrap_or(0.25);
            DistributionConfig::correlated(n, m, p_corr, p_trunc, seed)
        }
    };
    dist.validate()?;
    Ok(dist)
}

fn preset(file: &ConfigFile, overrides: &Overrides) -> CliResult<Option<Preset>> {
    if overrides.preset.is_some() {
        return Ok(overrides.preset);
    }
    match file.get("preset") {
        None => Ok(None),
        Some(e) => e
            .value
            .parse()
            .map(Some)
            .map_err(|message| CliError::Config { line: e.line, message }),
    }
}

/// Training settings: preset first, then file keys, then overrides.
/// Without a preset the single-core settings are used.
pub fn train_config(file: &ConfigFile, overrides: &Overrides) -> CliResult<TrainConfig> {
    let dist = distribution(file, overrides)?;
    let lambda = match overrides.lambda {
        Some(l) => l,
        None => file.value("lambda")?.unwrap_or(0.5),
    };
    let mut cfg = match preset(file, overrides)? {
        Some(Preset::PaperUncorrelated) => TrainConfig {
            base_lr: 0.005,
            ..TrainConfig::paper(dist, lambda)?
        },
        Some(Preset::PaperCorrelated) => TrainConfig {
            base_lr: 0.002,
            ..TrainConfig::paper(dist, lambda)?
        },
        Some(Preset::Desk) | None => TrainConfig::desk(dist, lambda)?,
    };
    if let Some(v) = file.value("batch_size")? {
        cfg.batch_size = v;
    }
    if let Some(v) = file.value("iterations")? {
        cfg.iterations = v;
    }
    if let Some(v) = file.value("base_lr")? {
        cfg.base_lr = v;
    }
    if let Some(v) = file.list("lr_milestones")? {
        cfg.lr_milestones = v;
    }
    if let Some(v) = file.value("hidden_layers")? {
        cfg.dims.hidden_layers = v;
    }
    if let Some(v) = file.value("hidden_units")? {
        cfg.dims.hidden_units = v;
    }
    if let Some(v) = file.value("weight_decay")? {
        cfg.weight_decay = v;
    }
    if let Some(v) = file.value("eval_every")? {
        cfg.eval_every = v;
    }
    if let Some(v) = file.value("test_size")? {
        cfg.test_size = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ConfigFile {
        ConfigFile::parse(text).unwrap()
    }

    fn line_of(err: CliError) -> usize {
        match err {
            CliError::Config { line, .. } => line,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let file = parse("# header\n\nn = 3 # workers\nm=2\n");
        assert_eq!(file.entries.len(), 2);
        assert_eq!(file.get("n").unwrap().value, "3");
        assert_eq!(file.get("m").unwrap().line, 4);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let err = ConfigFile::parse("n = 3\n\nlearning_rate = 0.1\n").unwrap_err();
        assert_eq!(line_of(err), 3);
    }

    #[test]
    fn malformed_and_duplicate_lines_are_rejected() {
        assert_eq!(line_of(ConfigFile::parse("n 3").unwrap_err()), 1);
        assert_eq!(line_of(ConfigFile::parse("n = 3\nn = 4").unwrap_err()), 2);
        assert_eq!(line_of(ConfigFile::parse("m =").unwrap_err()), 1);
    }

    #[test]
    fn bad_value_reports_its_line() {
        let file = parse("n = 3\nbatch_size = lots\n");
        let err = train_config(&file, &Overrides::default()).unwrap_err();
        assert_eq!(line_of(err), 2);
    }

    #[test]
    fn defaults_are_the_desk_preset() {
        let cfg = train_config(&ConfigFile::default(), &Overrides::default()).unwrap();
        assert_eq!((cfg.dist.n, cfg.dist.m), (4, 4));
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.iterations, 2_000);
        assert_eq!(cfg.test_size, 2_048);
    }

    #[test]
    fn presets_set_learning_rates() {
        let mut ov = Overrides {
            preset: Some(Preset::PaperUncorrelated),
            ..Overrides::default()
        };
        let cfg = train_config(&ConfigFile::default(), &ov).unwrap();
        assert_eq!((cfg.base_lr, cfg.batch_size, cfg.iterations), (0.005, 1024, 50_000));
        ov.preset = Some(Preset::PaperCorrelated);
        let cfg = train_config(&ConfigFile::default(), &ov).unwrap();
        assert_eq!(cfg.base_lr, 0.002);
        assert_eq!(cfg.dist.kind, DistributionKind::Correlated);
    }

    #[test]
    fn file_keys_override_the_preset_and_flags_override_the_file() {
        let file = parse("preset = desk\nlambda = 0.2\niterations = 10\nlr_milestones = 3, 7\n");
        let cfg = train_config(&file, &Overrides::default()).unwrap();
        assert_eq!(cfg.iterations, 10);
        assert_eq!(cfg.lr_milestones, vec![3, 7]);
        assert_eq!(cfg.lambda, 0.2);
        let ov = Overrides {
            lambda: Some(0.9),
            ..Overrides::default()
        };
        assert_eq!(train_config(&file, &ov).unwrap().lambda, 0.9);
    }

    #[test]
    fn env_seed_wins() {
        let file = parse("seed = 5");
        let ov = Overrides {
            env_seed: Some("17".into()),
            ..Overrides::default()
        };
        assert_eq!(distribution(&file, &ov).unwrap().seed, 17);
        let bad = Overrides {
            env_seed: Some("x".into()),
            ..Overrides::default()
        };
        assert_eq!(distribution(&file, &bad).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn p_corr_requires_correlated() {
        let file = parse("p_corr = 0.5");
        assert_eq!(line_of(distribution(&file, &Overrides::default()).unwrap_err()), 1);
        let file = parse("distribution = correlated\np_corr = 0.5");
        let dist = distribution(&file, &Overrides::default()).unwrap();
        assert_eq!(dist.p_corr, 0.5);
    }

    #[test]
    fn out_of_range_values_are_validation_errors() {
        let file = parse("p_trunc = 1.5");
        assert_eq!(distribution(&file, &Overrides::default()).unwrap_err().exit_code(), 1);
        let file = parse("lambda = 2");
        assert_eq!(train_config(&file, &Overrides::default()).unwrap_err().exit_code(), 1);
    }
}
