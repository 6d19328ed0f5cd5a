//! Run configuration: line-oriented `key = value` text with `#`
//! comments. Unknown keys are rejected so typos fail loudly.

use std::path::Path;

use crate::error::DataError;
use crate::losses::LossWeights;
use crate::model::{DepthNetConfig, ViewNetConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub view: ViewNetConfig,
    pub depth: DepthNetConfig,
    pub weights: LossWeights,
    /// when false the transformation-similarity gradient stops are
    /// disabled (both sides receive gradients)
    pub detach: bool,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            view: ViewNetConfig::default(),
            depth: DepthNetConfig::default(),
            weights: LossWeights::default(),
            detach: true,
            lr: 1e-4,
            steps: 500,
            batch_size: 4,
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, DataError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(DataError::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(key, value).map_err(|reason| {
                DataError::Config(format!("line {}: {reason}", lineno + 1))
            })?;
        }
        cfg.view.validate().map_err(|e| DataError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, DataError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("invalid value {value:?} for key {key}"))
        }
        match key {
            "n" => self.view.n = num(key, value)?,
            "m_blocks" => self.view.m_blocks = num(key, value)?,
            "c" => self.view.c = num(key, value)?,
            "r" => self.view.r = num(key, value)?,
            "m_inducing" => self.view.m_inducing = num(key, value)?,
            "image_size" => self.view.image_size = num(key, value)?,
            "depth_base" => self.depth.base = num(key, value)?,
            "d_min" => self.depth.d_min = num(key, value)?,
            "d_max" => self.depth.d_max = num(key, value)?,
            "alpha" => self.weights.alpha = num(key, value)?,
            "lambda_sm" => self.weights.lambda_sm = num(key, value)?,
            "lambda_c" => self.weights.lambda_c = num(key, value)?,
            "lambda_adv" => self.weights.lambda_adv = num(key, value)?,
            "lambda_in" => self.weights.lambda_in = num(key, value)?,
            "lambda_out" => self.weights.lambda_out = num(key, value)?,
            "detach" => {
                self.detach = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(format!("invalid value {value:?} for key detach")),
                }
            }
            "lr" => self.lr = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_blanks() {
        let cfg = RunConfig::parse(
            "# tiny run\nsteps = 50\n\nc = 32  # narrow\nlambda_in = 0\ndetach = false\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(cfg.steps, 50);
        assert_eq!(cfg.view.c, 32);
        assert_eq!(cfg.weights.lambda_in, 0.0);
        assert!(!cfg.detach);
        assert_eq!(cfg.seed, 9);
        // untouched keys keep defaults
        assert_eq!(cfg.batch_size, RunConfig::default().batch_size);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::parse("stepss = 50\n").unwrap_err();
        assert!(matches!(&err, DataError::Config(m) if m.contains("stepss")));
    }

    #[test]
    fn malformed_line_is_rejected() {
        assert!(RunConfig::parse("steps 50\n").is_err());
        assert!(RunConfig::parse("lr = fast\n").is_err());
    }

    #[test]
    fn empty_text_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }
}
