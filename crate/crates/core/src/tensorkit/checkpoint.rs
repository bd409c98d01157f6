//! Text checkpoint format for [`ParameterSet`].
//!
//! ```text
//! exrec-checkpoint 1
//! param kcmp.head.w 20 16
//! 1.25e-1 -3.5e0 ...
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the same bits, so save/load round-trips exactly.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{Matrix, ParameterSet, TensorError};

pub const CHECKPOINT_MAGIC: &str = "exrec-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ParameterSet, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    let mut line = String::new();
    for (name, p) in params.iter() {
        writeln!(out, "param {} {} {}", name, p.value.rows(), p.value.cols())?;
        line.clear();
        for (i, v) in p.value.as_slice().iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{v:e}").expect("write to string");
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<ParameterSet, TensorError> {
    let mut lines = input.lines().enumerate();
    let bad = |line: usize, msg: String| TensorError::Checkpoint {
        line: line + 1,
        msg,
    };

    let (_, header) = lines
        .next()
        .ok_or_else(|| bad(0, "empty checkpoint".into()))?;
    let header = header.map_err(|e| bad(0, e.to_string()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad(0, format!("missing `{CHECKPOINT_MAGIC}` header")));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(0, "missing format version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(0, format!("unsupported format version {version}")));
    }

    let mut params = ParameterSet::new();
    while let Some((no, line)) = lines.next() {
        let line = line.map_err(|e| bad(no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (name, rows, cols) = match fields.as_slice() {
            ["param", name, rows, cols] => (
                name.to_string(),
                rows.parse::<usize>().map_err(|e| bad(no, e.to_string()))?,
                cols.parse::<usize>().map_err(|e| bad(no, e.to_string()))?,
            ),
            _ => {
                return Err(bad(
                    no,
                    format!("expected `param NAME ROWS COLS`, got `{line}`"),
                ))
            }
        };
        let (vno, values) = lines
            .next()
            .ok_or_else(|| bad(no + 1, format!("missing values for `{name}`")))?;
        let values = values.map_err(|e| bad(vno, e.to_string()))?;
        let data = values
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| bad(vno, format!("{v}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let m = Matrix::from_vec(rows, cols, data).map_err(|e| bad(vno, e.to_string()))?;
        params.insert(name, m);
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParameterSet, path: &std::path::Path) -> Result<(), TensorError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<ParameterSet, TensorError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..40)) {
            let mut ps = ParameterSet::new();
            let n = values.len();
            ps.insert("a.w", Matrix::from_vec(1, n, values.clone()).unwrap());
            ps.insert("b", Matrix::column(values.iter().rev().copied().collect()));
            let mut buf = Vec::new();
            write_checkpoint(&ps, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            for (name, p) in ps.iter() {
                let q = back.get(name);
                prop_assert_eq!(p.value.shape(), q.shape());
                for (x, y) in p.value.as_slice().iter().zip(q.as_slice()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_version_and_garbage() {
        assert!(read_checkpoint("exrec-checkpoint 9\n".as_bytes()).is_err());
        assert!(read_checkpoint("hello\n".as_bytes()).is_err());
        let err = read_checkpoint("exrec-checkpoint 1\nparam w 2 2\n1 2 3\n".as_bytes());
        assert!(matches!(err, Err(TensorError::Checkpoint { line: 3, .. })));
    }
}
