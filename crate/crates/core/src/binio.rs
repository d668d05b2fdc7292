//! Little-endian primitives shared by the binary archive formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn wr(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes)
        .map_err(|e| Error::io("<archive writer>", e))
}

pub fn write_magic(w: &mut impl Write, magic: &[u8; 4]) -> Result<()> {
    wr(w, magic)
}

pub fn write_u8(w: &mut impl Write, v: u8) -> Result<()> {
    wr(w, &[v])
}

pub fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    wr(w, &v.to_le_bytes())
}

pub fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    wr(w, &v.to_le_bytes())
}

pub fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    wr(w, &v.to_le_bytes())
}

pub fn write_id(w: &mut impl Write, id: &str) -> Result<()> {
    write_u32(w, id.len())?;
    wr(w, id.as_bytes())
}

/// Row-major f64 payload.
pub fn write_matrix_f64(w: &mut impl Write, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            write_f64(w, m[(i, j)])?;
        }
    }
    Ok(())
}

/// Row-major f32 payload.
pub fn write_matrix_f32(w: &mut impl Write, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            wr(w, &(m[(i, j)] as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_vector_f64(w: &mut impl Write, v: &DVector<f64>) -> Result<()> {
    v.iter().try_for_each(|&x| write_f64(w, x))
}

fn rd(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Format("unexpected end of file".into()),
        _ => Error::io("<archive reader>", e),
    })
}

pub fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    rd(r, &mut got)?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    rd(r, &mut b)?;
    Ok(b[0])
}

pub fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    rd(r, &mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    rd(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    rd(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads the u32 length prefix of the next record; `None` at a clean EOF.
pub fn read_record_start(r: &mut impl Read) -> Result<Option<usize>> {
    let mut b = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut b[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::Format("truncated record header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::io("<archive reader>", e)),
        }
    }
    Ok(Some(u32::from_le_bytes(b) as usize))
}

pub fn read_id_bytes(r: &mut impl Read, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    rd(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("utterance id is not UTF-8".into()))
}

pub fn read_id(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)?;
    read_id_bytes(r, len)
}

pub fn read_matrix_f64(r: &mut impl Read, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut data = vec![0.0; rows * cols];
    for x in data.iter_mut() {
        *x = read_f64(r)?;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn read_matrix_f32(r: &mut impl Read, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut raw = vec![0u8; rows * cols * 4];
    rd(r, &mut raw)?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn read_vector_f64(r: &mut impl Read, n: usize) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(n);
    for x in v.iter_mut() {
        *x = read_f64(r)?;
    }
    Ok(v)
}

pub fn flush(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}
