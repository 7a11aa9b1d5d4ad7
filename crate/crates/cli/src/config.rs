//! Flat key=value run configuration.
//!
//! One key per line, `#` starts a comment, unknown keys are hard
//! errors that list every valid key so sweep scripts fail loudly
//! instead of silently training with defaults.

use std::path::Path;

use longtail_core::trainer::TrainerConfig;
use longtail_core::{Error, Result};

/// Everything a run needs beyond the trainer itself: preprocessing
/// thresholds and evaluation settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub min_item: usize,
    pub min_user: usize,
    pub cutoffs: Vec<usize>,
    pub repetitions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            trainer: TrainerConfig::default(),
            min_item: 5,
            min_user: 5,
            cutoffs: vec![5, 10, 20],
            repetitions: 10,
        }
    }
}

const VALID_KEYS: [&str; 20] = [
    "mode",
    "encoder",
    "dim",
    "window",
    "k",
    "alpha",
    "beta",
    "lambda",
    "batch",
    "negatives",
    "iterations",
    "seed",
    "head_frac",
    "train_frac",
    "outer",
    "disc_hidden",
    "min_item",
    "min_user",
    "cutoffs",
    "repetitions",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key {key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.trainer.mode = value.parse()?,
            "encoder" => self.trainer.encoder = value.parse()?,
            "dim" => self.trainer.dim = parse_num(key, value)?,
            "window" => self.trainer.window = parse_num(key, value)?,
            "k" => self.trainer.k = parse_num(key, value)?,
            "alpha" => self.trainer.alpha = parse_num(key, value)?,
            "beta" => self.trainer.beta = parse_num(key, value)?,
            "lambda" => self.trainer.lambda = parse_num(key, value)?,
            "batch" => self.trainer.batch = parse_num(key, value)?,
            "negatives" => self.trainer.negatives = parse_num(key, value)?,
            "iterations" => self.trainer.iterations = parse_num(key, value)?,
            "seed" => self.trainer.seed = parse_num(key, value)?,
            "head_frac" => self.trainer.head_frac = parse_num(key, value)?,
            "train_frac" => self.trainer.train_frac = parse_num(key, value)?,
            "outer" => self.trainer.outer = value.parse()?,
            "disc_hidden" => self.trainer.disc_hidden = parse_num(key, value)?,
            "min_item" => self.min_item = parse_num(key, value)?,
            "min_user" => self.min_user = parse_num(key, value)?,
            "repetitions" => self.repetitions = parse_num(key, value)?,
            "cutoffs" => {
                let parsed: Result<Vec<usize>> =
                    value.split(',').map(|v| parse_num(key, v.trim())).collect();
                let parsed = parsed?;
                if parsed.is_empty() || parsed.contains(&0) {
                    return Err(Error::Config("cutoffs must be positive".into()));
                }
                self.cutoffs = parsed;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown config key {other:?}; valid keys: {}",
                    VALID_KEYS.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.trainer.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        // A malformed config is a usage error, not a runtime failure.
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg } => {
                Error::Config(format!("{} line {line}: {msg}", path.display()))
            }
            other => other,
        })
    }

    /// The key=value lines a manifest records, in key order, resolved
    /// to the values the run actually used.
    pub fn manifest_lines(&self) -> Vec<String> {
        let t = &self.trainer;
        let cutoffs =
            self.cutoffs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        vec![
            format!("config.mode={}", t.mode),
            format!("config.encoder={}", t.encoder),
            format!("config.dim={}", t.dim),
            format!("config.window={}", t.window),
            format!("config.k={}", t.k),
            format!("config.alpha={}", t.alpha),
            format!("config.beta={}", t.beta),
            format!("config.lambda={}", t.lambda),
            format!("config.batch={}", t.batch),
            format!("config.negatives={}", t.negatives),
            format!("config.iterations={}", t.iterations),
            format!("config.seed={}", t.seed),
            format!("config.head_frac={}", t.head_frac),
            format!("config.train_frac={}", t.train_frac),
            format!("config.outer={}", t.outer),
            format!("config.disc_hidden={}", t.disc_hidden),
            format!("config.min_item={}", self.min_item),
            format!("config.min_user={}", self.min_user),
            format!("config.cutoffs={cutoffs}"),
            format!("config.repetitions={}", self.repetitions),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use longtail_core::encoders::EncoderKind;
    use longtail_core::trainer::TrainMode;

    #[test]
    fn parses_keys_comments_and_blanks() {
        let cfg = RunConfig::parse(
            "# run settings\nmode = tp\nencoder=attention\nk=3\nalpha=0.05\n\ncutoffs = 5, 10\n",
        )
        .unwrap();
        assert_eq!(cfg.trainer.mode, TrainMode::Tp);
        assert_eq!(cfg.trainer.encoder, EncoderKind::Attention);
        assert_eq!(cfg.trainer.k, 3);
        assert_eq!(cfg.cutoffs, vec![5, 10]);
        assert_eq!(cfg.repetitions, 10);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = RunConfig::parse("alpha_=0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpha_"), "{msg}");
        assert!(msg.contains("valid keys"), "{msg}");
        assert!(msg.contains("lambda"), "{msg}");
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(RunConfig::parse("alpha=fast\n").is_err());
        assert!(RunConfig::parse("k=0\n").is_err());
        assert!(RunConfig::parse("cutoffs=\n").is_err());
        assert!(RunConfig::parse("mode tp\n").is_err());
    }

    #[test]
    fn manifest_lines_resolve_every_key() {
        let cfg = RunConfig::default();
        let lines = cfg.manifest_lines();
        assert_eq!(lines.len(), VALID_KEYS.len());
        for key in VALID_KEYS {
            assert!(
                lines.iter().any(|l| l.starts_with(&format!("config.{key}="))),
                "missing {key}"
            );
        }
    }
}
