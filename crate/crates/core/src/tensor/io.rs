//! Raw tensor files: `TNSR v1 <rank> <extent...> <dtype>\n` followed by
//! little-endian row-major elements.

use std::io::{BufRead, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub fn write_tensor<W: Write>(t: &Tensor, dtype: DType, mut w: W) -> Result<()> {
    let extents: Vec<String> = t.shape().iter().map(|e| e.to_string()).collect();
    writeln!(w, "TNSR v1 {} {} {}", t.rank(), extents.join(" "), dtype.name())?;
    let mut buf = Vec::with_capacity(t.numel() * dtype.width());
    for &v in t.data() {
        match dtype {
            DType::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            DType::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::new();
    write_tensor(t, DType::F64, &mut out).expect("writing to a Vec cannot fail");
    out
}

/// Reads one tensor; the reader is left positioned after its elements.
pub fn read_tensor<R: BufRead>(mut r: R) -> Result<Tensor> {
    let mut header = Vec::new();
    r.read_until(b'\n', &mut header)?;
    if header.last() != Some(&b'\n') {
        return Err(Error::format("TNSR header not terminated"));
    }
    let header = std::str::from_utf8(&header[..header.len() - 1])
        .map_err(|_| Error::format("TNSR header is not UTF-8"))?;
    let mut fields = header.split(' ');
    if fields.next() != Some("TNSR") || fields.next() != Some("v1") {
        return Err(Error::format(format!("bad TNSR magic in header {header:?}")));
    }
    let parse = |s: Option<&str>| -> Result<usize> {
        s.and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(format!("bad TNSR header {header:?}")))
    };
    let rank = parse(fields.next())?;
    let shape = (0..rank).map(|_| parse(fields.next())).collect::<Result<Vec<_>>>()?;
    let dtype = match fields.next() {
        Some("f64") => DType::F64,
        Some("f32") => DType::F32,
        other => return Err(Error::format(format!("unknown TNSR dtype {other:?}"))),
    };
    if fields.next().is_some() {
        return Err(Error::format(format!("trailing fields in TNSR header {header:?}")));
    }
    let count: usize = shape.iter().product();
    let mut raw = vec![0u8; count * dtype.width()];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format("TNSR payload truncated"))?;
    let data = match dtype {
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Tensor::new(&shape, data).map_err(|e| Error::format(e.to_string()))
}

pub fn save(t: &Tensor, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_tensor(t, DType::F64, std::io::BufWriter::new(f))
}

pub fn load(path: &Path) -> Result<Tensor> {
    let f = std::fs::File::open(path)?;
    read_tensor(std::io::BufReader::new(f))
}
