use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Apply one `dotted.key=value` override. The value is read as JSON when it
/// parses, otherwise as a string.
pub fn apply_set(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got {assignment:?}")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("malformed --set key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    match node {
        Value::Object(map) => {
            map.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        _ => Err(Error::Config(format!("--set {key}: parent is not an object"))),
    }
}

/// Defaults, overlaid with the JSON file at `path`, then with each override.
pub fn resolve<T>(path: Option<&Path>, sets: &[String]) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut value = serde_json::to_value(T::default())?;
    if let Some(p) = path {
        let file: Value = crate::util::read_json(p)?;
        if !file.is_object() {
            return Err(Error::Config(format!("{} is not a JSON object", p.display())));
        }
        merge(&mut value, file);
    }
    for s in sets {
        apply_set(&mut value, s)?;
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainConfig;

    #[test]
    fn dotted_overrides() {
        let cfg: TrainConfig = resolve(
            None,
            &[
                "seed=7".into(),
                "model.model_kind=byol".into(),
                "model.backbone.kind=\"SMALL_CNN\"".into(),
                "model.resolution=64".into(),
                "optimizer.lr=0.001".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.resolution, Some(64));
        assert_eq!(cfg.optimizer.lr, 1e-3);
        assert_eq!(cfg.model.model_kind, crate::models::ModelKind::Byol);
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"epochs": 3, "optimizer": {"weight_decay": 0.5}}"#).unwrap();
        let cfg: TrainConfig = resolve(Some(&p), &["epochs=4".into()]).unwrap();
        assert_eq!(cfg.epochs, 4);
        assert_eq!(cfg.optimizer.weight_decay, 0.5);
        assert_eq!(cfg.optimizer.lr, 1e-4);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        assert!(matches!(resolve::<TrainConfig>(None, &["epochs".into()]), Err(Error::Config(_))));
        assert!(matches!(resolve::<TrainConfig>(None, &["nope=1".into()]), Err(Error::Config(_))));
        assert!(matches!(resolve::<TrainConfig>(None, &["epochs=many".into()]), Err(Error::Config(_))));
    }
}
