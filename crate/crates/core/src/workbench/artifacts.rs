//! Stamped JSON, JSONL and model files.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ArtifactStamp;
use crate::error::{Error, Result};
use crate::model::{Model, ModelFile};
use crate::trainer::Retrievers;

/// A JSON document carrying the stamp next to its payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub stamp: ArtifactStamp,
    pub data: T,
}

#[derive(Serialize)]
struct StampedRow<'a, T> {
    #[serde(flatten)]
    stamp: &'a ArtifactStamp,
    #[serde(flatten)]
    row: &'a T,
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, stamp: &ArtifactStamp, data: &T) -> Result<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(&Stamped {
        stamp: stamp.clone(),
        data,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Stamped<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

/// One object per line with the stamp fields merged into each row.
pub fn write_jsonl<T: Serialize>(path: &Path, stamp: &ArtifactStamp, rows: &[T]) -> Result<()> {
    create_parent(path)?;
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, &StampedRow { stamp, row })?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads rows written by [`write_jsonl`], dropping the stamp fields.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Prepends a `# key=value` comment line with the stamp to a text file.
pub fn stamp_text_file(path: &Path, stamp: &ArtifactStamp) -> Result<()> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(
        f,
        "# config_hash={} seed={} version={}",
        stamp.config_hash, stamp.seed, stamp.version
    )
    .and_then(|_| f.write_all(body.as_bytes()))
    .map_err(|e| Error::io(path, e))
}

/// `end.json` and `aug.json` inside `dir`.
pub fn save_retrievers(dir: &Path, stamp: &ArtifactStamp, models: &Retrievers) -> Result<()> {
    write_json(&dir.join("end.json"), stamp, &models.end.to_file())?;
    write_json(&dir.join("aug.json"), stamp, &models.aug.to_file())
}

pub fn load_retrievers(dir: &Path) -> Result<Retrievers> {
    let load = |name: &str| -> Result<Model> { Model::from_file(read_json::<ModelFile>(&dir.join(name))?.data) };
    Ok(Retrievers {
        end: load("end.json")?,
        aug: load("aug.json")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stamp() -> ArtifactStamp {
        ArtifactStamp {
            config_hash: "abc".into(),
            seed: 4,
            version: "v0".into(),
        }
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        name: String,
        value: f64,
    }

    #[test]
    fn jsonl_rows_carry_the_stamp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/rows.jsonl");
        let rows = vec![
            Row {
                name: "a".into(),
                value: 0.1,
            },
            Row {
                name: "b".into(),
                value: 2.0,
            },
        ];
        write_jsonl(&path, &stamp(), &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().all(|l| l.contains("\"config_hash\":\"abc\"") && l.contains("\"seed\":4")));
        assert_eq!(read_jsonl::<Row>(&path).unwrap(), rows);
    }

    #[test]
    fn json_round_trip_and_text_stamp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_json(&path, &stamp(), &vec![1, 2]).unwrap();
        let back: Stamped<Vec<u32>> = read_json(&path).unwrap();
        assert_eq!(back.data, [1, 2]);
        assert_eq!(back.stamp, stamp());

        let csv = dir.path().join("c.csv");
        std::fs::write(&csv, "a,b\n1,2\n").unwrap();
        stamp_text_file(&csv, &stamp()).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text, "# config_hash=abc seed=4 version=v0\na,b\n1,2\n");
    }
}
