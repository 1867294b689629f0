//! Word-vector text files: one token per line followed by its floats,
//! space-separated. A leading `count dim` header line is skipped.

use std::io::{BufRead, Write};
use std::path::Path;

use sdnet_core::embeddings::WordVectorTable;

use crate::error::{CliError, CliResult};

pub fn parse_word_vectors(reader: impl BufRead, dim: usize) -> CliResult<WordVectorTable> {
    let mut table = WordVectorTable::new(dim)?;
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| CliError::Data(format!("line {n}: {e}")))?;
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
        if n == 1 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue;
        }
        if fields.len() < dim + 1 {
            return Err(CliError::Data(format!(
                "line {n}: expected a token and {dim} values, got {} fields",
                fields.len()
            )));
        }
        let split = fields.len() - dim;
        let token = fields[..split].join(" ");
        let values = fields[split..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| CliError::Data(format!("line {n}: `{f}`: {e}"))))
            .collect::<CliResult<Vec<f64>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Data(format!("line {n}: non-finite value for `{token}`")));
        }
        if !table.contains(&token) {
            table.insert(&token, values)?;
        }
    }
    Ok(table)
}

pub fn load_word_vectors(path: &Path, dim: usize, field: &str) -> CliResult<WordVectorTable> {
    let file = std::fs::File::open(path).map_err(|e| CliError::unreadable(field, path, e))?;
    parse_word_vectors(std::io::BufReader::new(file), dim).map_err(|e| e.context(&path.display().to_string()))
}

pub fn write_word_vectors(table: &WordVectorTable, mut out: impl Write) -> std::io::Result<()> {
    for (token, values) in table.iter() {
        write!(out, "{token}")?;
        for v in values {
            write!(out, " {v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_header_spaces_and_duplicates() {
        let text = "3 2\nthe 0.5 -1\nNew York 1 2\nthe 9 9\n\ncat 1e-3 4\n";
        let t = parse_word_vectors(text.as_bytes(), 2).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.get("the").unwrap(), [0.5, -1.0]);
        assert_eq!(t.get("New York").unwrap(), [1.0, 2.0]);
        assert_eq!(t.get("cat").unwrap(), [1e-3, 4.0]);
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_word_vectors("a 1 2\nb 1\n".as_bytes(), 2).unwrap_err();
        assert!(matches!(&e, CliError::Data(m) if m.starts_with("line 2")), "{e}");
        let e = parse_word_vectors("a 1 x\n".as_bytes(), 2).unwrap_err();
        assert!(matches!(&e, CliError::Data(m) if m.starts_with("line 1")), "{e}");
    }

    #[test]
    fn write_then_read_is_exact() {
        let mut t = WordVectorTable::new(3).unwrap();
        t.insert("x", vec![0.1, 1.0 / 3.0, -2e-17]).unwrap();
        t.insert("y", vec![1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_word_vectors(&t, &mut buf).unwrap();
        let back = parse_word_vectors(buf.as_slice(), 3).unwrap();
        assert_eq!(back.digest(), t.digest());
    }
}
