use crate::Failure;
use mucap_core::trainer::ExperimentConfig;
use serde_json::Value;
use std::path::Path;

/// Reads an experiment config, or the defaults when no file is given.
pub fn load(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::new("config", format!("{}: {e}", path.display())))
}

/// Applies `key.path=value` assignments. Values are parsed as JSON and fall
/// back to a plain string; the key must already exist.
pub fn apply_sets(exp: ExperimentConfig, sets: &[String]) -> Result<ExperimentConfig, Failure> {
    if sets.is_empty() {
        return Ok(exp);
    }
    let mut root = serde_json::to_value(&exp).expect("config serializes");
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .ok_or_else(|| Failure::new("config", format!("override `{set}` is not of the form key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) => map.get_mut(part),
                Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| Failure::new("config", format!("unknown config key `{key}`")))?;
        }
        *slot = value;
    }
    serde_json::from_value(root).map_err(|e| Failure::new("config", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_override() {
        let exp = apply_sets(
            ExperimentConfig::default(),
            &["train.lr=0.5".into(), "model.conv.0.width=5".into(), "seeds=[4]".into()],
        )
        .unwrap();
        assert_eq!(exp.train.lr, 0.5);
        assert_eq!(exp.model.conv[0].width, 5);
        assert_eq!(exp.seeds, vec![4]);
    }

    #[test]
    fn unknown_or_mistyped_override_rejected() {
        assert!(apply_sets(ExperimentConfig::default(), &["train.nope=1".into()]).is_err());
        assert!(apply_sets(ExperimentConfig::default(), &["train.lr=fast".into()]).is_err());
        assert!(apply_sets(ExperimentConfig::default(), &["train.lr".into()]).is_err());
    }
}
