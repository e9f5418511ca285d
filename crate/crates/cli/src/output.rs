use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const META_KEY: &str = "_meta";

/// Provenance header written into every artifact. Holds no paths or clock
/// readings so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub params: Value,
}

impl Meta {
    pub fn new(command: &str, seed: u64, params: Value) -> Self {
        Self {
            tool: "sonoscan".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            params,
        }
    }
}

/// Writes through a temp file in the target directory, then renames over `path`.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct WithMeta<'a, T: Serialize> {
    meta: &'a Meta,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON object with a leading `meta` key. `body` must serialize to an object.
pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, body: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &WithMeta { meta, body })?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// One `{"_meta": ...}` header line, then one record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, meta: &Meta, records: &[T]) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer(&mut *w, &serde_json::json!({ META_KEY: meta }))?;
        w.write_all(b"\n")?;
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn is_meta_line(v: &Value) -> bool {
    v.as_object().is_some_and(|o| o.contains_key(META_KEY))
}

/// Records of a JSONL file; blank lines and the header line are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("{}: read failed", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: invalid JSON", path.display(), i + 1))?;
        if is_meta_line(&v) {
            continue;
        }
        out.push(
            serde_json::from_value(v)
                .with_context(|| format!("{}:{}: unexpected record shape", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: unexpected content", path.display()))
}

/// Lines of a plain text list, trimmed, blanks dropped.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_skips_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let meta = Meta::new("test", 7, serde_json::json!({ "k": 1 }));
        write_jsonl(&p, &meta, &[serde_json::json!({ "a": 1 }), serde_json::json!({ "a": 2 })]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("{\"_meta\":"));
        let back: Vec<Value> = read_jsonl(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1]["a"], 2);
    }

    #[test]
    fn failed_write_leaves_old_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.json");
        std::fs::write(&p, "old").unwrap();
        let r = write_atomic(&p, |w| {
            w.write_all(b"partial")?;
            anyhow::bail!("boom")
        });
        assert!(r.is_err());
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "old");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn json_has_meta_first() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let meta = Meta::new("eval", 0, Value::Null);
        write_json(&p, &meta, &serde_json::json!({ "z": 1 })).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.trim_start().starts_with("{\n  \"meta\""));
    }
}
