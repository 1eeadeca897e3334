//! MATLAB level-5 MAT-file reader (numeric arrays only) and a small writer.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use super::NumericArray;
use crate::error::{Error, Result};

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

const MX_DOUBLE_CLASS: u8 = 6;
const MX_UINT16_CLASS: u8 = 11;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Option<u32> {
        let b: [u8; 4] = self.buf.get(self.pos..self.pos + 4)?.try_into().ok()?;
        self.pos += 4;
        Some(if self.big_endian { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) })
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }

    /// Read one data element: `(type, payload)`, skipping padding.
    fn element(&mut self) -> Option<(u32, &'a [u8])> {
        let first = self.u32()?;
        if first >> 16 != 0 {
            // small data element: type and size packed in one word, payload in the next 4 bytes
            let ty = first & 0xffff;
            let n = (first >> 16) as usize;
            let payload = self.take(4)?;
            return Some((ty, &payload[..n.min(4)]));
        }
        let n = self.u32()? as usize;
        let payload = self.take(n)?;
        if first != MI_COMPRESSED {
            let pad = (8 - n % 8) % 8;
            self.pos = (self.pos + pad).min(self.buf.len());
        }
        Some((first, payload))
    }
}

fn decode_numbers(ty: u32, bytes: &[u8], big: bool) -> Option<Vec<f64>> {
    macro_rules! conv {
        ($t:ty, $n:expr) => {{
            if bytes.len() % $n != 0 {
                return None;
            }
            bytes
                .chunks_exact($n)
                .map(|c| {
                    let a: [u8; $n] = c.try_into().unwrap();
                    (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
                })
                .collect()
        }};
    }
    Some(match ty {
        MI_INT8 => bytes.iter().map(|&b| b as i8 as f64).collect(),
        MI_UINT8 => bytes.iter().map(|&b| b as f64).collect(),
        MI_INT16 => conv!(i16, 2),
        MI_UINT16 => conv!(u16, 2),
        MI_INT32 => conv!(i32, 4),
        MI_UINT32 => conv!(u32, 4),
        MI_SINGLE => conv!(f32, 4),
        MI_DOUBLE => conv!(f64, 8),
        MI_INT64 => conv!(i64, 8),
        MI_UINT64 => conv!(u64, 8),
        _ => return None,
    })
}

fn parse_matrix(payload: &[u8], big: bool) -> std::result::Result<Option<NumericArray>, String> {
    let mut c = Cursor { buf: payload, pos: 0, big_endian: big };
    let (_, flags) = c.element().ok_or("truncated array flags")?;
    if flags.len() < 4 {
        return Err("short array flags".into());
    }
    let flag_word = if big {
        u32::from_be_bytes(flags[..4].try_into().unwrap())
    } else {
        u32::from_le_bytes(flags[..4].try_into().unwrap())
    };
    let class = (flag_word & 0xff) as u8;
    let complex = flag_word & 0x800 != 0;
    if !(MX_DOUBLE_CLASS..=15).contains(&class) {
        // cell, struct, char, sparse and object arrays are not scene data
        return Ok(None);
    }
    if complex {
        return Err("complex arrays are not supported".into());
    }
    let (dty, dbytes) = c.element().ok_or("truncated dimensions")?;
    let dims: Vec<usize> =
        decode_numbers(dty, dbytes, big).ok_or("bad dimensions element")?.into_iter().map(|d| d as usize).collect();
    let (_, name) = c.element().ok_or("truncated array name")?;
    let name = String::from_utf8_lossy(name).into_owned();
    let (rty, rbytes) = c.element().ok_or("truncated real part")?;
    let data = decode_numbers(rty, rbytes, big).ok_or_else(|| format!("unsupported data type {rty}"))?;
    let expected: usize = dims.iter().product();
    if data.len() != expected {
        return Err(format!("array '{name}' holds {} values but dimensions {dims:?} need {expected}", data.len()));
    }
    Ok(Some(NumericArray { name, dims, data }))
}

/// Parse every numeric array of a MAT v5 byte buffer.
pub fn parse_mat(bytes: &[u8]) -> std::result::Result<Vec<NumericArray>, String> {
    if bytes.len() < 128 {
        return Err("file shorter than the 128-byte header".into());
    }
    if bytes[..116].windows(10).any(|w| w == b"MATLAB 7.3") {
        return Err("MAT v7.3 (HDF5) files are not supported".into());
    }
    let big = match &bytes[126..128] {
        b"IM" => false,
        b"MI" => true,
        _ => return Err("missing endian indicator; not a level-5 MAT file".into()),
    };
    let mut out = Vec::new();
    let mut c = Cursor { buf: &bytes[128..], pos: 0, big_endian: big };
    while !c.done() {
        let (ty, payload) = c.element().ok_or("truncated data element")?;
        match ty {
            MI_MATRIX => out.extend(parse_matrix(payload, big)?),
            MI_COMPRESSED => {
                let mut inflated = Vec::new();
                ZlibDecoder::new(payload)
                    .read_to_end(&mut inflated)
                    .map_err(|e| format!("bad compressed element: {e}"))?;
                let mut inner = Cursor { buf: &inflated, pos: 0, big_endian: big };
                let (ity, ipayload) = inner.element().ok_or("truncated compressed element")?;
                if ity == MI_MATRIX {
                    out.extend(parse_matrix(ipayload, big)?);
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Read all numeric arrays of a MAT v5 file.
pub fn read_mat(path: &Path) -> Result<Vec<NumericArray>> {
    let bytes = std::fs::read(path)?;
    parse_mat(&bytes).map_err(|m| Error::load(path, m))
}

/// Read one named array.
pub fn read_mat_var(path: &Path, name: &str) -> Result<NumericArray> {
    let arrays = read_mat(path)?;
    let names: Vec<_> = arrays.iter().map(|a| a.name.clone()).collect();
    arrays
        .into_iter()
        .find(|a| a.name == name)
        .ok_or_else(|| Error::load(path, format!("variable '{name}' not found (have {names:?})")))
}

fn push_element(out: &mut Vec<u8>, ty: u32, payload: &[u8]) {
    out.extend_from_slice(&ty.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.resize(out.len() + (8 - payload.len() % 8) % 8, 0);
}

fn matrix_element(a: &NumericArray, as_u16: bool) -> Vec<u8> {
    let mut body = Vec::new();
    let class = if as_u16 { MX_UINT16_CLASS } else { MX_DOUBLE_CLASS };
    let mut flags = Vec::new();
    flags.extend_from_slice(&(class as u32).to_le_bytes());
    flags.extend_from_slice(&0u32.to_le_bytes());
    push_element(&mut body, MI_UINT32, &flags);
    let dims: Vec<u8> = a.dims.iter().flat_map(|&d| (d as i32).to_le_bytes()).collect();
    push_element(&mut body, MI_INT32, &dims);
    push_element(&mut body, MI_INT8, a.name.as_bytes());
    if as_u16 {
        let data: Vec<u8> = a.data.iter().flat_map(|&v| (v as u16).to_le_bytes()).collect();
        push_element(&mut body, MI_UINT16, &data);
    } else {
        let data: Vec<u8> = a.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        push_element(&mut body, MI_DOUBLE, &data);
    }
    let mut el = Vec::new();
    push_element(&mut el, MI_MATRIX, &body);
    el
}

/// Write arrays as a little-endian MAT v5 file.
///
/// Arrays whose values are all u16 integers are stored as `uint16`, the rest as `double`.
pub fn write_mat(path: &Path, arrays: &[NumericArray], compress: bool) -> Result<()> {
    let mut out = Vec::new();
    let mut text = b"MATLAB 5.0 MAT-file, written by hsi-core".to_vec();
    text.resize(116, b' ');
    out.extend_from_slice(&text);
    out.extend_from_slice(&[0u8; 8]);
    out.extend_from_slice(&0x0100u16.to_le_bytes());
    out.extend_from_slice(b"IM");
    for a in arrays {
        let as_u16 = a.data.iter().all(|v| v.fract() == 0.0 && *v >= 0.0 && *v <= u16::MAX as f64);
        let el = matrix_element(a, as_u16);
        if compress {
            let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&el)?;
            let z = enc.finish()?;
            out.extend_from_slice(&MI_COMPRESSED.to_le_bytes());
            out.extend_from_slice(&(z.len() as u32).to_le_bytes());
            out.extend_from_slice(&z);
        } else {
            out.extend_from_slice(&el);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> Vec<u8> {
        let mut h = vec![b' '; 116];
        h.extend_from_slice(&[0u8; 8]);
        h.extend_from_slice(&[0x00, 0x01]);
        h.extend_from_slice(b"IM");
        h
    }

    /// Hand-assembled 2x3 double matrix `x = [1 2 3; 4 5 6]` with a small-format name.
    #[test]
    fn parses_hand_built_file() {
        let mut body: Vec<u8> = Vec::new();
        // array flags: miUINT32, 8 bytes, class double
        body.extend_from_slice(&[6, 0, 0, 0, 8, 0, 0, 0, 6, 0, 0, 0, 0, 0, 0, 0]);
        // dimensions: miINT32, 8 bytes, [2, 3]
        body.extend_from_slice(&[5, 0, 0, 0, 8, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        // name "x" as small element: size 1, type miINT8
        body.extend_from_slice(&[1, 0, 1, 0, b'x', 0, 0, 0]);
        // real part: column-major 1 4 2 5 3 6 stored as miUINT8
        body.extend_from_slice(&[2, 0, 0, 0, 6, 0, 0, 0, 1, 4, 2, 5, 3, 6, 0, 0]);
        let mut file = header();
        file.extend_from_slice(&14u32.to_le_bytes());
        file.extend_from_slice(&(body.len() as u32).to_le_bytes());
        file.extend_from_slice(&body);
        let arrays = parse_mat(&file).unwrap();
        assert_eq!(arrays.len(), 1);
        let a = &arrays[0];
        assert_eq!(a.name, "x");
        assert_eq!(a.dims, vec![2, 3]);
        let m = a.to_label_map().unwrap();
        assert_eq!(m, ndarray::array![[1u16, 2, 3], [4, 5, 6]]);
    }

    #[test]
    fn round_trip_compressed_and_plain() {
        let dir = tempfile::tempdir().unwrap();
        let cube =
            NumericArray { name: "cube".into(), dims: vec![2, 3, 4], data: (0..24).map(|v| v as f64 * 0.5).collect() };
        let gt = NumericArray { name: "cube_gt".into(), dims: vec![2, 3], data: vec![0.0, 1.0, 2.0, 1.0, 0.0, 2.0] };
        for compress in [false, true] {
            let p = dir.path().join(format!("t{compress}.mat"));
            write_mat(&p, &[cube.clone(), gt.clone()], compress).unwrap();
            assert_eq!(read_mat_var(&p, "cube").unwrap(), cube);
            assert_eq!(read_mat_var(&p, "cube_gt").unwrap(), gt);
            assert!(read_mat_var(&p, "nope").is_err());
        }
        let c = cube.to_cube_data().unwrap();
        // column-major: (i, j, k) -> i + 2 * (j + 3 * k)
        assert_eq!(c[[1, 2, 3]], (1 + 2 * (2 + 3 * 3)) as f32 * 0.5);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_mat(b"short").is_err());
        let mut f = header();
        f[126] = b'X';
        assert!(parse_mat(&f).is_err());
    }
}
