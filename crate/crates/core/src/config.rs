//! Flat `key = value` training configuration.
//!
//! Grammar: one `key = value` pair per line; blank lines and lines starting
//! with `#` are ignored, as is anything after a `#` on a value line. Keys
//! may appear at most once. Unknown keys are rejected. Booleans accept
//! `true`/`false`, `on`/`off`, `yes`/`no` and `1`/`0`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::jump::JumpMode;
use crate::model::ModelConfig;

pub const CONFIG_KEYS: [&str; 14] = [
    "hidden_channels",
    "dropout",
    "lr",
    "weight_decay",
    "k_jumps",
    "epochs",
    "patience",
    "ortho_weight",
    "dirichlet_weight",
    "pump_width",
    "seed",
    "homophilic_branch",
    "decoupled",
    "jump_mode",
];

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Some(true),
        "false" | "off" | "no" | "0" => Some(false),
        _ => None,
    }
}

/// Applies one key to `cfg`; the error string describes a bad value.
pub fn apply_key(cfg: &mut ModelConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
        v.parse().map_err(|_| format!("invalid value `{v}` for `{key}`"))
    }
    match key {
        "hidden_channels" => cfg.hidden = num(key, value)?,
        "dropout" => cfg.dropout = num(key, value)?,
        "lr" => cfg.lr = num(key, value)?,
        "weight_decay" => cfg.weight_decay = num(key, value)?,
        "k_jumps" => cfg.jumps = num(key, value)?,
        "epochs" => cfg.epochs = num(key, value)?,
        "patience" => cfg.patience = num(key, value)?,
        "ortho_weight" => cfg.ortho_weight = num(key, value)?,
        "dirichlet_weight" => cfg.dirichlet_weight = num(key, value)?,
        "pump_width" => cfg.pump_width = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "homophilic_branch" => {
            cfg.homophilic_branch = parse_bool(value).ok_or_else(|| format!("invalid boolean `{value}`"))?
        }
        "decoupled" => cfg.decoupled = parse_bool(value).ok_or_else(|| format!("invalid boolean `{value}`"))?,
        "jump_mode" => cfg.jump_mode = value.parse::<JumpMode>().map_err(|e| e.to_string())?,
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}

/// Parses configuration text on top of `base`.
pub fn parse_config(text: &str, base: ModelConfig, file: &Path) -> Result<ModelConfig> {
    let mut cfg = base;
    let mut seen: Vec<String> = Vec::new();
    let err = |line: usize, msg: String| Error::Parse {
        file: file.to_path_buf(),
        line,
        msg,
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if seen.iter().any(|k| k == key) {
            return Err(err(line, format!("duplicate key `{key}`")));
        }
        apply_key(&mut cfg, key, value).map_err(|m| err(line, m))?;
        seen.push(key.to_string());
    }
    cfg.validate().map_err(|e| Error::Inconsistent {
        file: file.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn read_config(path: &Path, base: ModelConfig) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        file: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, base, path)
}

/// The config-file keys with their resolved values, in grammar order.
pub fn resolved_pairs(cfg: &ModelConfig) -> Vec<(String, String)> {
    let values = [
        cfg.hidden.to_string(),
        cfg.dropout.to_string(),
        cfg.lr.to_string(),
        cfg.weight_decay.to_string(),
        cfg.jumps.to_string(),
        cfg.epochs.to_string(),
        cfg.patience.to_string(),
        cfg.ortho_weight.to_string(),
        cfg.dirichlet_weight.to_string(),
        cfg.pump_width.to_string(),
        cfg.seed.to_string(),
        cfg.homophilic_branch.to_string(),
        cfg.decoupled.to_string(),
        cfg.jump_mode.to_string(),
    ];
    CONFIG_KEYS.iter().map(|k| k.to_string()).zip(values).collect()
}

/// Renders a configuration in the file grammar.
pub fn render_config(cfg: &ModelConfig) -> String {
    resolved_pairs(cfg)
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> Result<ModelConfig> {
        parse_config(text, ModelConfig::default(), Path::new("t.cfg"))
    }

    #[test]
    fn parses_table_row() {
        let cfg = p("# texas\nhidden_channels = 64\ndropout = 0.2\nlr = 0.03\nweight_decay = 5e-4\nk_jumps = 20 # jumps\n").unwrap();
        assert_eq!(cfg.hidden, 64);
        assert_eq!(cfg.jumps, 20);
        assert_eq!(cfg.weight_decay, 5e-4);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let e = p("lr = 0.1\nfoo = 1\n").unwrap_err().to_string();
        assert!(e.contains("t.cfg:2"), "{e}");
        assert!(p("lr = 0.1\nlr = 0.2\n").is_err());
        assert!(p("lr 0.1\n").is_err());
        assert!(p("decoupled = maybe\n").is_err());
        assert!(p("dropout = 1.5\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let cfg = ModelConfig {
            jumps: 3,
            decoupled: true,
            jump_mode: JumpMode::Cumulative,
            ..ModelConfig::default()
        };
        let back = p(&render_config(&cfg)).unwrap();
        assert_eq!(back, cfg);
    }
}
