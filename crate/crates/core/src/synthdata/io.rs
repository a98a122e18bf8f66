use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use super::{DataError, Dataset, JointSample};

pub const DATASET_MAGIC: &str = "#dualflow-dataset v1";

/// Header line, then `<id>\t<x,...>\t<caption>` per sample. Coordinates are
/// written with 17 significant digits, which round-trips every f64.
pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset, samples: &[JointSample]) -> Result<(), DataError> {
    writeln!(w, "{DATASET_MAGIC} d={} vocab={}", ds.spec.d(), ds.vocab.len())?;
    for (i, s) in samples.iter().enumerate() {
        let xs: Vec<String> = s.x.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{i}\t{}\t{}", xs.join(","), ds.vocab.detokenize(&s.y))?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R, ds: &Dataset) -> Result<Vec<JointSample>, DataError> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let want = format!("{DATASET_MAGIC} d={} vocab={}", ds.spec.d(), ds.vocab.len());
    if header.trim_end() != want {
        return Err(DataError::Format {
            line: 1,
            detail: format!("header {header:?}, expected {want:?}"),
        });
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let lineno = n + 2;
        let err = |detail: String| DataError::Format { line: lineno, detail };
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("{} fields, expected 3", fields.len())));
        }
        let id: usize = fields[0].parse().map_err(|e| err(format!("id: {e}")))?;
        if id != out.len() {
            return Err(err(format!("id {id}, expected {}", out.len())));
        }
        let x = fields[1]
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|e| err(format!("coordinate {v:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if x.len() != ds.spec.d() {
            return Err(err(format!("{} coordinates, expected {}", x.len(), ds.spec.d())));
        }
        let y = ds.vocab.tokenize(fields[2])?;
        let attrs = ds
            .vocab
            .parse_caption(&y)
            .ok_or_else(|| err(format!("caption {:?} is not in the grammar", fields[2])))?;
        out.push(JointSample { x, y, attrs });
    }
    Ok(out)
}

/// Lowercase hex SHA-256.
pub fn dataset_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
