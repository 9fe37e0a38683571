use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_header, HsiCube, HsiError, Result};

/// File signature; the final byte is the format version.
pub const CUBE_MAGIC: [u8; 16] = *b"HYKYCUBE\0\0\0\0\0\0\0\x01";

const MAX_HEADER: u32 = 1 << 24;

#[derive(Serialize, Deserialize)]
struct Header {
    bands: usize,
    height: usize,
    width: usize,
    dtype: String,
    wavelengths_nm: Vec<f64>,
}

pub fn write_cube<W: Write>(cube: &HsiCube, mut w: W) -> Result<()> {
    let header = Header {
        bands: cube.bands(),
        height: cube.height(),
        width: cube.width(),
        dtype: "f32le".into(),
        wavelengths_nm: cube.wavelengths().to_vec(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| HsiError::HeaderSyntax(e.to_string()))?;
    w.write_all(&CUBE_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(4 * cube.data().len());
    for v in cube.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_cube<R: Read>(mut r: R) -> Result<HsiCube> {
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic).map_err(|_| HsiError::BadMagic)?;
    if magic[..15] != CUBE_MAGIC[..15] {
        return Err(HsiError::BadMagic);
    }
    if magic[15] != CUBE_MAGIC[15] {
        return Err(HsiError::UnsupportedVersion(magic[15]));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| HsiError::HeaderSyntax("truncated header length".into()))?;
    let len = u32::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(HsiError::HeaderSyntax(format!("header of {len} bytes")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)
        .map_err(|_| HsiError::HeaderSyntax("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| HsiError::HeaderSyntax(e.to_string()))?;
    if header.dtype != "f32le" {
        return Err(HsiError::HeaderInconsistent(format!(
            "dtype {:?}",
            header.dtype
        )));
    }
    check_header(
        header.bands,
        header.height,
        header.width,
        &header.wavelengths_nm,
    )?;
    let expected = header
        .bands
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(header.width))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| HsiError::HeaderInconsistent("shape overflows".into()))?;
    let mut payload = Vec::with_capacity(expected.min(1 << 30));
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(HsiError::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    HsiCube::new(
        header.bands,
        header.height,
        header.width,
        header.wavelengths_nm,
        data,
    )
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    write_cube(cube, BufWriter::new(File::create(path)?))
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    read_cube(BufReader::new(File::open(path)?))
}
