//! Matrix Market coordinate I/O for real symmetric matrices.
//!
//! Files carry the `%%MatrixMarket matrix coordinate real symmetric` header,
//! 1-based indices and the lower triangle only. The reader mirrors entries to
//! the full pattern. `general` files are also accepted as long as they are
//! symmetric.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const HEADER: &str = "%%MatrixMarket matrix coordinate real symmetric";

pub fn read_matrix_market<R: Read>(reader: R) -> Result<CsrMatrix> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let header = header?;
    let tokens: Vec<String> = header
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    if tokens.len() != 5
        || tokens[0] != "%%matrixmarket"
        || tokens[1] != "matrix"
        || tokens[2] != "coordinate"
    {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unsupported header `{header}`"),
        });
    }
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unsupported field `{}`", tokens[3]),
        });
    }
    let symmetric = match tokens[4].as_str() {
        "symmetric" => true,
        "general" => false,
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unsupported symmetry `{other}`"),
            })
        }
    };

    let mut size: Option<(usize, usize)> = None;
    let mut triplets = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let parse_err = |msg: &str| Error::Parse {
            line: lineno,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        match size {
            None => {
                if fields.len() != 3 {
                    return Err(parse_err("expected `rows cols nnz`"));
                }
                let rows: usize = fields[0].parse().map_err(|_| parse_err("bad rows"))?;
                let cols: usize = fields[1].parse().map_err(|_| parse_err("bad cols"))?;
                let nnz: usize = fields[2].parse().map_err(|_| parse_err("bad nnz"))?;
                if rows != cols {
                    return Err(parse_err("matrix must be square"));
                }
                size = Some((rows, nnz));
                triplets.reserve(if symmetric { 2 * nnz } else { nnz });
            }
            Some((n, _)) => {
                if fields.len() != 3 {
                    return Err(parse_err("expected `row col value`"));
                }
                let i: usize = fields[0].parse().map_err(|_| parse_err("bad row index"))?;
                let j: usize = fields[1].parse().map_err(|_| parse_err("bad column index"))?;
                let v: f64 = fields[2].parse().map_err(|_| parse_err("bad value"))?;
                if i == 0 || j == 0 || i > n || j > n {
                    return Err(parse_err("index out of range"));
                }
                let (i, j) = (i - 1, j - 1);
                if symmetric {
                    if j > i {
                        return Err(parse_err("symmetric file must store the lower triangle"));
                    }
                    triplets.push((i, j, v));
                    if i != j {
                        triplets.push((j, i, v));
                    }
                } else {
                    triplets.push((i, j, v));
                }
            }
        }
    }
    let (n, nnz) = size.ok_or(Error::Parse {
        line: 0,
        msg: "missing size line".into(),
    })?;
    let stored = if symmetric {
        triplets.iter().filter(|&&(i, j, _)| i >= j).count()
    } else {
        triplets.len()
    };
    if stored != nnz {
        return Err(Error::Parse {
            line: 0,
            msg: format!("header announces {nnz} entries, found {stored}"),
        });
    }
    CsrMatrix::from_triplets(n, &triplets)
}

pub fn write_matrix_market<W: Write>(a: &CsrMatrix, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let lower: Vec<_> = a.triplets().filter(|&(i, j, _)| i >= j).collect();
    writeln!(w, "{HEADER}")?;
    writeln!(w, "{} {} {}", a.n(), a.n(), lower.len())?;
    for (i, j, v) in lower {
        // shortest representation that round-trips exactly
        writeln!(w, "{} {} {:?}", i + 1, j + 1, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_market_file<P: AsRef<Path>>(path: P) -> Result<CsrMatrix> {
    read_matrix_market(File::open(path)?)
}

pub fn write_matrix_market_file<P: AsRef<Path>>(a: &CsrMatrix, path: P) -> Result<()> {
    write_matrix_market(a, File::create(path)?)
}
