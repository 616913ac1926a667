//! Instance JSONL: one object per line. Vectors are inline JSON arrays unless
//! the first line is a header `{"embeddings": "<path>"}` naming an `ARDE`
//! sidecar (relative paths resolve against the JSONL file's directory), in
//! which case row `i` of the sidecar supplies instance `i`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, read_embeddings_bin, write_embeddings_bin, DataError, Dataset, Instance};

#[derive(Serialize, Deserialize)]
struct Header {
    embeddings: PathBuf,
}

pub fn load_jsonl(path: &Path) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut instances = Vec::new();
    let mut sidecar = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Ok(header) = serde_json::from_str::<Header>(&line) {
                sidecar = Some(header.embeddings);
                continue;
            }
        }
        let inst: Instance = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if sidecar.is_none() && inst.head_vec.len() != inst.tail_vec.len() {
            return Err(DataError::VectorLengthMismatch {
                id: inst.id,
                head: inst.head_vec.len(),
                tail: inst.tail_vec.len(),
            });
        }
        instances.push(inst);
    }
    if let Some(rel) = sidecar {
        let sidecar_path = if rel.is_absolute() {
            rel
        } else {
            path.parent().unwrap_or(Path::new(".")).join(rel)
        };
        let matrix = read_embeddings_bin(&sidecar_path)?;
        if matrix.rows != instances.len() || matrix.cols % 2 != 0 {
            return Err(DataError::Malformed {
                line: 1,
                message: format!(
                    "sidecar {} holds {}x{} floats for {} instances",
                    sidecar_path.display(),
                    matrix.rows,
                    matrix.cols,
                    instances.len()
                ),
            });
        }
        let d = matrix.cols / 2;
        for (i, inst) in instances.iter_mut().enumerate() {
            let row = matrix.row(i);
            inst.head_vec = row[..d].to_vec();
            inst.tail_vec = row[d..].to_vec();
        }
    }
    Dataset::new(instances)
}

/// Writes instances with inline vectors.
pub fn write_jsonl(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for inst in ds.instances() {
        let line = serde_json::to_string(inst).expect("instance serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes a header line referencing `sidecar` and vector-free instance lines,
/// plus the sidecar itself.
pub fn write_jsonl_with_sidecar(
    ds: &Dataset,
    path: &Path,
    sidecar: &Path,
) -> Result<(), DataError> {
    write_embeddings_bin(ds, sidecar)?;
    let reference = match (sidecar.parent(), path.parent()) {
        (Some(a), Some(b)) if a == b => PathBuf::from(sidecar.file_name().unwrap()),
        _ => fs::canonicalize(sidecar).map_err(io_err(sidecar))?,
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let header = serde_json::to_string(&Header {
        embeddings: reference,
    })
    .unwrap();
    writeln!(w, "{header}").map_err(io_err(path))?;
    for inst in ds.instances() {
        let mut bare = inst.clone();
        bare.head_vec.clear();
        bare.tail_vec.clear();
        let mut value = serde_json::to_value(&bare).unwrap();
        let obj = value.as_object_mut().unwrap();
        obj.remove("head_vec");
        obj.remove("tail_vec");
        writeln!(w, "{value}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const LINE: &str = r#"{"id":"ID","tokens":["a","b","c"],"head_span":[0,1],"tail_span":[2,3],"gold_relation":"r","head_vec":[1,2,3,4],"tail_vec":[5,6,7,8]}"#;

    #[test]
    fn loads_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = ["x1", "x2", "x3"]
            .iter()
            .map(|id| LINE.replace("ID", id) + "\n")
            .collect();
        let ds = load_jsonl(&write(dir.path(), "a.jsonl", &body)).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.ids(), vec!["x1", "x2", "x3"]);
    }

    #[test]
    fn vector_length_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let body = LINE.replace("ID", "x").replace("[1,2,3,4]", "[1,2,3]");
        let err = load_jsonl(&write(dir.path(), "a.jsonl", &body)).unwrap_err();
        assert!(matches!(
            err,
            DataError::VectorLengthMismatch {
                head: 3,
                tail: 4,
                ..
            }
        ));
    }

    #[test]
    fn duplicate_id_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{}\n{}\n",
            LINE.replace("ID", "x1"),
            LINE.replace("ID", "x1")
        );
        let err = load_jsonl(&write(dir.path(), "a.jsonl", &body)).unwrap_err();
        assert!(matches!(err, DataError::DuplicateId(id) if id == "x1"));
    }

    #[test]
    fn malformed_line_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}\n{{not json\n", LINE.replace("ID", "x1"));
        let err = load_jsonl(&write(dir.path(), "a.jsonl", &body)).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = ["x1", "x2"]
            .iter()
            .map(|id| LINE.replace("ID", id) + "\n")
            .collect();
        let ds = load_jsonl(&write(dir.path(), "a.jsonl", &body)).unwrap();
        let out = dir.path().join("b.jsonl");
        write_jsonl_with_sidecar(&ds, &out, &dir.path().join("b.arde")).unwrap();
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.starts_with(r#"{"embeddings":"b.arde"}"#));
        assert!(!text.contains("head_vec"));
        assert_eq!(load_jsonl(&out).unwrap(), ds);

        let inline = dir.path().join("c.jsonl");
        write_jsonl(&ds, &inline).unwrap();
        assert_eq!(load_jsonl(&inline).unwrap(), ds);
    }
}
