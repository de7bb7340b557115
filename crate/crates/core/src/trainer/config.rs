//! Flat `key = value` run configuration.

use super::{LossScaling, TrainConfig};
use crate::decoder::DecodeConfig;
use crate::error::{AcgError, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| AcgError::format(format!("config line {line}"), format!("bad value {value:?} for {key}")))
}

/// Parses a config file. `#` starts a comment; unknown keys are errors.
/// `hidden` sets every recurrent and alignment width at once.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| AcgError::format(format!("config line {n}"), "expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        let m = &mut cfg.model;
        let t = &mut cfg.train;
        match key {
            "hidden" => {
                let h = parse_value(key, value, n)?;
                m.word_hidden = h;
                m.query_hidden = h;
                m.decoder_hidden = h;
                m.eta_hidden = h;
            }
            "embed_dim" => m.embed_dim = parse_value(key, value, n)?,
            "word_hidden" => m.word_hidden = parse_value(key, value, n)?,
            "query_hidden" => m.query_hidden = parse_value(key, value, n)?,
            "decoder_hidden" => m.decoder_hidden = parse_value(key, value, n)?,
            "eta_hidden" => m.eta_hidden = parse_value(key, value, n)?,
            "query_mlp" => m.query_mlp = parse_value(key, value, n)?,
            "copy" => m.copy_enabled = parse_value(key, value, n)?,
            "vocab_size" => m.vocab_size = parse_value(key, value, n)?,
            "init_seed" => m.init_seed = parse_value(key, value, n)?,
            "lr" => t.lr = parse_value(key, value, n)?,
            "batch" | "batch_size" => t.batch_size = parse_value(key, value, n)?,
            "max_steps" => t.max_steps = parse_value(key, value, n)?,
            "dropout" => t.dropout = parse_value(key, value, n)?,
            "seed" => t.seed = parse_value(key, value, n)?,
            "clip_norm" => t.clip_norm = parse_value(key, value, n)?,
            "eval_every" => t.eval_every = parse_value(key, value, n)?,
            "patience" => t.patience = parse_value(key, value, n)?,
            "parallel" => t.parallel = parse_value(key, value, n)?,
            "max_context_tokens" => t.max_context_tokens = parse_value(key, value, n)?,
            "stage_copy" => t.stage_copy = parse_value(key, value, n)?,
            "stage_generate" => t.stage_generate = parse_value(key, value, n)?,
            "stage_switch" => t.stage_switch = parse_value(key, value, n)?,
            "loss_scaling" => {
                t.scaling = match value {
                    "vocab_source" => LossScaling::VocabAndSource,
                    "per_step" => LossScaling::PerStep,
                    _ => return Err(AcgError::format(format!("config line {n}"), "loss_scaling is vocab_source or per_step")),
                }
            }
            "beam" => cfg.decode.beam = parse_value(key, value, n)?,
            "max_len" => cfg.decode.max_len = parse_value(key, value, n)?,
            "length_normalize" => cfg.decode.length_normalize = parse_value(key, value, n)?,
            _ => return Err(AcgError::format(format!("config line {n}"), format!("unknown key {key}"))),
        }
    }
    if !(0.0..1.0).contains(&cfg.train.dropout) {
        return Err(AcgError::format("config", "dropout must lie in [0, 1)"));
    }
    Ok(cfg)
}
