//! Plain-text model dumps.
//!
//! ```text
//! statarb-lstm 1
//! input 59 hidden 64
//! layer1.w_hf 64 64
//! <rows * cols values separated by spaces>
//! ...
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::StackedLstm;
use crate::error::{Error, Result};

const MAGIC: &str = "statarb-lstm";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &StackedLstm, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{MAGIC} {VERSION}")?;
    writeln!(out, "input {} hidden {}", model.input_dim(), model.hidden_dim())?;
    for ((name, rows, cols), values) in model.tensor_specs().into_iter().zip(model.tensors()) {
        writeln!(out, "{name} {rows} {cols}")?;
        let mut first = true;
        for v in values {
            if !first {
                out.write_all(b" ")?;
            }
            first = false;
            write!(out, "{v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: "<checkpoint>".into(),
        line: line as u64,
        msg: msg.into(),
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<StackedLstm> {
    let mut lines = BufReader::new(input).lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(bad(i + 1, e.to_string())),
            None => Err(bad(0, format!("unexpected end of file, expected {what}"))),
        }
    };
    let (ln, header) = next("header")?;
    if header.trim() != format!("{MAGIC} {VERSION}") {
        return Err(bad(ln, format!("unsupported header {header:?}")));
    }
    let (ln, dims) = next("dimensions")?;
    let f: Vec<&str> = dims.split_whitespace().collect();
    let (input, hidden) = match f.as_slice() {
        ["input", i, "hidden", h] => (
            i.parse::<usize>().map_err(|e| bad(ln, e.to_string()))?,
            h.parse::<usize>().map_err(|e| bad(ln, e.to_string()))?,
        ),
        _ => return Err(bad(ln, format!("bad dimension line {dims:?}"))),
    };
    let mut model = StackedLstm::zeros(input, hidden);
    let specs = model.tensor_specs();
    for ((name, rows, cols), dst) in specs.into_iter().zip(model.tensors_mut()) {
        let (ln, head) = next(&name)?;
        let expect = format!("{name} {rows} {cols}");
        if head.trim() != expect {
            return Err(bad(ln, format!("expected {expect:?}, found {head:?}")));
        }
        let (ln, body) = next("values")?;
        let values: Vec<f64> = body
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(ln, e.to_string()))?;
        if values.len() != dst.len() {
            return Err(bad(
                ln,
                format!("{name}: expected {} values, found {}", dst.len(), values.len()),
            ));
        }
        dst.copy_from_slice(&values);
    }
    Ok(model)
}

pub fn save_checkpoint(model: &StackedLstm, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(model, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<StackedLstm> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::Parse {
            path: path.into(),
            line,
            msg,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_exact() {
        let m = StackedLstm::init(3, 4, &mut ChaCha8Rng::seed_from_u64(9));
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn truncated_file_fails() {
        let m = StackedLstm::zeros(2, 2);
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(read_checkpoint(cut.as_bytes()).is_err());
        assert!(read_checkpoint("garbage\n".as_bytes()).is_err());
    }
}
