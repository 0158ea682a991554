//! Layered TOML configuration: defaults, then a file, then `key.path=value` overrides.

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::Value;

use crate::error::{Error, Result};

/// Recursively overlay `top` onto `base`; tables merge, everything else replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
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

/// Parse `a.b.c=value`. The value is read as a TOML literal, falling back to a bare string.
pub fn parse_override(spec: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override {spec:?} has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((path, value))
}

pub fn apply_overrides(root: &mut Value, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (path, value) = parse_override(o)?;
        let mut nested = value;
        for key in path.iter().rev() {
            let mut t = toml::Table::new();
            t.insert(key.clone(), nested);
            nested = Value::Table(t);
        }
        merge(root, nested);
    }
    Ok(())
}

/// Serialize `defaults`, overlay `text` and `overrides`, and deserialize.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: &T, text: Option<&str>, overrides: &[String]) -> Result<T> {
    let mut root = Value::try_from(defaults).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(text) = text {
        let file: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut root, Value::Table(file));
    }
    apply_overrides(&mut root, overrides)?;
    let out: T = root.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    // keys serde skipped are typos; they must not be dropped silently
    let echo = Value::try_from(&out).map_err(|e| Error::Config(e.to_string()))?;
    let mut unknown = Vec::new();
    unknown_keys(&root, &echo, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
    }
    Ok(out)
}

fn unknown_keys(input: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Table(i), Value::Table(k)) = (input, known) else {
        return;
    };
    for (key, v) in i {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match k.get(key) {
            Some(kv) => unknown_keys(v, kv, &path, out),
            None => out.push(path),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_literals_and_strings() {
        assert_eq!(parse_override("a.b=1.5").unwrap(), (vec!["a".into(), "b".into()], Value::Float(1.5)));
        assert_eq!(parse_override("x=[1, 2]").unwrap().1, Value::Array(vec![Value::Integer(1), Value::Integer(2)]));
        assert_eq!(parse_override("name=D3").unwrap().1, Value::String("D3".into()));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        #[derive(Debug, PartialEq, Serialize, serde::Deserialize)]
        struct Inner {
            x: i64,
            y: Option<i64>,
        }
        #[derive(Debug, PartialEq, Serialize, serde::Deserialize)]
        struct Outer {
            inner: Inner,
        }
        let d = Outer { inner: Inner { x: 1, y: None } };
        let ok: Outer = layered(&d, Some("[inner]\ny = 3\n"), &[]).unwrap();
        assert_eq!(ok.inner.y, Some(3));
        let err = layered::<Outer>(&d, None, &["inner.z=1".into()]).unwrap_err();
        assert!(err.to_string().contains("inner.z"), "{err}");
    }

    #[test]
    fn merge_keeps_untouched_keys() {
        let mut base: Value = toml::from_str("a = 1\n[t]\nx = 1\ny = 2\n").unwrap();
        apply_overrides(&mut base, &["t.y=5".into(), "b=true".into()]).unwrap();
        assert_eq!(base["a"].as_integer(), Some(1));
        assert_eq!(base["t"]["x"].as_integer(), Some(1));
        assert_eq!(base["t"]["y"].as_integer(), Some(5));
        assert_eq!(base["b"].as_bool(), Some(true));
    }
}
