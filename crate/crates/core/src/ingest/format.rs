//! Text and binary embedding file formats.
//!
//! Text: UTF-8, header line `# dim=<D> labeled=<0|1>`, then one
//! comma-separated sample per line with an optional trailing integer label.
//!
//! Binary: magic `IGCD`, u32 version, u32 N, u32 D, u8 has_labels, N×D f32,
//! then N u32 labels when labeled. All integers and floats little-endian.
//! Version 1 is a plain matrix; version 2 appends a category table (u32
//! count, then u32 ids) and is used for support sets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::registry::CategoryId;

pub const MAGIC: &[u8; 4] = b"IGCD";
pub const VERSION_MATRIX: u32 = 1;
pub const VERSION_SUPPORT: u32 = 2;

/// Decoded contents of a binary embedding record.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryRecord {
    pub version: u32,
    pub matrix: EmbeddingMatrix,
    pub labels: Option<Vec<CategoryId>>,
    /// Present only for version 2.
    pub categories: Option<Vec<CategoryId>>,
}

pub fn encode_binary(
    version: u32,
    matrix: &EmbeddingMatrix,
    labels: Option<&[CategoryId]>,
    categories: Option<&[CategoryId]>,
) -> Result<Vec<u8>> {
    if let Some(l) = labels {
        if l.len() != matrix.n() {
            return Err(Error::Argument(format!(
                "{} labels for {} rows",
                l.len(),
                matrix.n()
            )));
        }
    }
    if (version == VERSION_SUPPORT) != categories.is_some() {
        return Err(Error::Argument(
            "a category table is written exactly when version is 2".into(),
        ));
    }
    let mut out = Vec::with_capacity(17 + matrix.data().len() * 4 + matrix.n() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(matrix.n() as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.d() as u32).to_le_bytes());
    out.push(labels.is_some() as u8);
    for v in matrix.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(l) = labels {
        for c in l {
            out.extend_from_slice(&c.0.to_le_bytes());
        }
    }
    if let Some(cats) = categories {
        out.extend_from_slice(&(cats.len() as u32).to_le_bytes());
        for c in cats {
            out.extend_from_slice(&c.0.to_le_bytes());
        }
    }
    Ok(out)
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Data(format!("truncated input at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Decodes one record and returns it together with the number of bytes used.
pub fn decode_binary_prefix(bytes: &[u8]) -> Result<(BinaryRecord, usize)> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Data("missing IGCD magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION_MATRIX && version != VERSION_SUPPORT {
        return Err(Error::Data(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let has_labels = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::Data(format!("bad has_labels flag {other}"))),
    };
    let count = n
        .checked_mul(d)
        .ok_or_else(|| Error::Data("matrix size overflows".into()))?;
    let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Data("matrix size overflows".into()))?)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let matrix = EmbeddingMatrix::new(n, d, data)?;
    let labels = if has_labels {
        Some((0..n).map(|_| r.u32().map(CategoryId)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let categories = if version == VERSION_SUPPORT {
        let k = r.u32()? as usize;
        Some((0..k).map(|_| r.u32().map(CategoryId)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    Ok((
        BinaryRecord {
            version,
            matrix,
            labels,
            categories,
        },
        r.position(),
    ))
}

pub fn decode_binary(bytes: &[u8]) -> Result<BinaryRecord> {
    let (rec, used) = decode_binary_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Data(format!(
            "{} trailing bytes after record",
            bytes.len() - used
        )));
    }
    Ok(rec)
}

pub fn write_embeddings_binary(
    path: &Path,
    matrix: &EmbeddingMatrix,
    labels: Option<&[CategoryId]>,
) -> Result<()> {
    let bytes = encode_binary(VERSION_MATRIX, matrix, labels, None)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings_binary(path: &Path) -> Result<(EmbeddingMatrix, Option<Vec<CategoryId>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let rec = decode_binary(&bytes)?;
    Ok((rec.matrix, rec.labels))
}

pub fn format_text(matrix: &EmbeddingMatrix, labels: Option<&[CategoryId]>) -> Result<String> {
    if let Some(l) = labels {
        if l.len() != matrix.n() {
            return Err(Error::Argument(format!(
                "{} labels for {} rows",
                l.len(),
                matrix.n()
            )));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "# dim={} labeled={}", matrix.d(), labels.is_some() as u8);
    for (i, row) in matrix.rows().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        if let Some(l) = labels {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_text(text: &str) -> Result<(EmbeddingMatrix, Option<Vec<CategoryId>>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let (dim, labeled) = parse_header(header)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        let expected = dim + labeled as usize;
        if fields.len() != expected {
            return Err(Error::Parse {
                line,
                msg: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        for f in &fields[..dim] {
            let v: f32 = f.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("`{f}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite value `{f}`"),
                });
            }
            data.push(v);
        }
        if labeled {
            let f = fields[dim];
            let l: u32 = f.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("`{f}` is not a category label"),
            })?;
            labels.push(CategoryId(l));
        }
        n += 1;
    }
    let matrix = EmbeddingMatrix::new(n, dim, data).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    Ok((matrix, labeled.then_some(labels)))
}

fn parse_header(header: &str) -> Result<(usize, bool)> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let body = header
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| bad("header must start with `# dim=`".into()))?;
    let mut dim = None;
    let mut labeled = None;
    for tok in body.split_whitespace() {
        match tok.split_once('=') {
            Some(("dim", v)) => dim = Some(v.parse::<usize>().map_err(|_| bad(format!("bad dim `{v}`")))?),
            Some(("labeled", "0")) => labeled = Some(false),
            Some(("labeled", "1")) => labeled = Some(true),
            _ => return Err(bad(format!("unexpected header token `{tok}`"))),
        }
    }
    match (dim, labeled) {
        (Some(d), Some(l)) => Ok((d, l)),
        _ => Err(bad("header needs both dim and labeled".into())),
    }
}

pub fn write_embeddings_text(
    path: &Path,
    matrix: &EmbeddingMatrix,
    labels: Option<&[CategoryId]>,
) -> Result<()> {
    fs::write(path, format_text(matrix, labels)?).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings_text(path: &Path) -> Result<(EmbeddingMatrix, Option<Vec<CategoryId>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text(&text)
}

/// Reads either format, sniffing the binary magic.
pub fn read_embeddings_any(path: &Path) -> Result<(EmbeddingMatrix, Option<Vec<CategoryId>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        let rec = decode_binary(&bytes)?;
        Ok((rec.matrix, rec.labels))
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Data(format!("{} is neither binary nor UTF-8 text", path.display())))?;
        parse_text(&text)
    }
}
