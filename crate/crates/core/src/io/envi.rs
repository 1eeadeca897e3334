//! ENVI container: a plain-text `.hdr` next to a flat binary file.
//!
//! Cube axes map as `x = line`, `y = sample`, `λ = band`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interleave {
    Bsq,
    Bil,
    Bip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnviHeader {
    pub samples: usize,
    pub lines: usize,
    pub bands: usize,
    pub header_offset: usize,
    pub data_type: u32,
    pub interleave: Interleave,
    pub big_endian: bool,
    pub wavelengths: Option<Vec<f64>>,
    pub class_names: Option<Vec<String>>,
    /// Remaining keys, lower-cased, values verbatim.
    pub extra: BTreeMap<String, String>,
}

impl EnviHeader {
    fn bytes_per_value(&self) -> Option<usize> {
        Some(match self.data_type {
            1 => 1,
            2 | 12 => 2,
            3 | 4 | 13 => 4,
            5 | 14 | 15 => 8,
            _ => return None,
        })
    }

    /// Byte offset of value `(line, sample, band)` relative to the data start.
    fn index(&self, line: usize, sample: usize, band: usize) -> usize {
        match self.interleave {
            Interleave::Bsq => (band * self.lines + line) * self.samples + sample,
            Interleave::Bil => (line * self.bands + band) * self.samples + sample,
            Interleave::Bip => (line * self.samples + sample) * self.bands + band,
        }
    }
}

fn split_list(v: &str) -> Vec<String> {
    v.trim()
        .trim_start_matches('{')
        .trim_end_matches('}')
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Parse header text. Errors carry the offending line number.
pub fn parse_header(text: &str) -> std::result::Result<EnviHeader, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == "ENVI" => {}
        _ => return Err("line 1: header must start with 'ENVI'".into()),
    }
    let mut fields = BTreeMap::new();
    while let Some((no, line)) = lines.next() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected 'key = value'", no + 1))?;
        let mut value = v.trim().to_string();
        if value.starts_with('{') {
            while !value.contains('}') {
                let (_, more) = lines.next().ok_or_else(|| format!("line {}: unterminated '{{'", no + 1))?;
                value.push(' ');
                value.push_str(more.trim());
            }
        }
        fields.insert(k.trim().to_lowercase(), value);
    }
    let mut take_usize = |key: &str, default: Option<usize>| -> std::result::Result<usize, String> {
        match fields.remove(key) {
            Some(v) => v.trim().parse().map_err(|_| format!("'{key}' is not an integer: {v}")),
            None => default.ok_or_else(|| format!("missing required key '{key}'")),
        }
    };
    let samples = take_usize("samples", None)?;
    let lines_n = take_usize("lines", None)?;
    let bands = take_usize("bands", None)?;
    let header_offset = take_usize("header offset", Some(0))?;
    let data_type = take_usize("data type", None)? as u32;
    let byte_order = take_usize("byte order", Some(0))?;
    let interleave = match fields.remove("interleave").as_deref().map(str::trim) {
        None => Interleave::Bsq,
        Some(s) => match s.to_lowercase().as_str() {
            "bsq" => Interleave::Bsq,
            "bil" => Interleave::Bil,
            "bip" => Interleave::Bip,
            other => return Err(format!("unknown interleave '{other}'")),
        },
    };
    let wavelengths = match fields.remove("wavelength") {
        None => None,
        Some(v) => Some(
            split_list(&v)
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| format!("bad wavelength '{s}'")))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        ),
    };
    if let Some(w) = &wavelengths {
        if w.len() != bands {
            return Err(format!("{} wavelengths listed for {bands} bands", w.len()));
        }
    }
    let class_names = fields.remove("class names").map(|v| split_list(&v));
    let header = EnviHeader {
        samples,
        lines: lines_n,
        bands,
        header_offset,
        data_type,
        interleave,
        big_endian: byte_order == 1,
        wavelengths,
        class_names,
        extra: fields,
    };
    if header.bytes_per_value().is_none() {
        return Err(format!("unsupported data type {data_type}"));
    }
    Ok(header)
}

/// Header path for a data file: `scene.img` -> `scene.hdr`.
pub fn header_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("hdr")
}

fn decode(h: &EnviHeader, raw: &[u8], offset: usize) -> f64 {
    let be = h.big_endian;
    macro_rules! rd {
        ($t:ty, $n:expr) => {{
            let a: [u8; $n] = raw[offset..offset + $n].try_into().unwrap();
            (if be { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
        }};
    }
    match h.data_type {
        1 => raw[offset] as f64,
        2 => rd!(i16, 2),
        12 => rd!(u16, 2),
        3 => rd!(i32, 4),
        13 => rd!(u32, 4),
        4 => rd!(f32, 4),
        5 => rd!(f64, 8),
        14 => rd!(i64, 8),
        15 => rd!(u64, 8),
        _ => unreachable!("validated in parse_header"),
    }
}

/// Read a cube as `(x = line, y = sample, band)`.
pub fn read_envi(data_path: &Path) -> Result<(EnviHeader, Array3<f32>)> {
    let hdr_path = header_path(data_path);
    let text = std::fs::read_to_string(&hdr_path)?;
    let h = parse_header(&text).map_err(|m| Error::load(&hdr_path, m))?;
    let raw = std::fs::read(data_path)?;
    let bpv = h.bytes_per_value().expect("validated");
    let need = h.header_offset + h.samples * h.lines * h.bands * bpv;
    if raw.len() < need {
        return Err(Error::load(data_path, format!("file holds {} bytes, header implies {need}", raw.len())));
    }
    let body = &raw[h.header_offset..];
    let data = Array3::from_shape_fn((h.lines, h.samples, h.bands), |(l, s, b)| {
        decode(&h, body, h.index(l, s, b) * bpv) as f32
    });
    Ok((h, data))
}

/// Read a single-band integer label image.
pub fn read_envi_labels(data_path: &Path) -> Result<(EnviHeader, Array2<u16>)> {
    let (h, data) = read_envi(data_path)?;
    if h.bands != 1 || matches!(h.data_type, 4 | 5) {
        return Err(Error::load(data_path, "label image must be one integer band"));
    }
    if data.iter().any(|&v| v < 0.0 || v > u16::MAX as f32) {
        return Err(Error::load(data_path, "label value outside u16 range"));
    }
    Ok((h, data.index_axis(ndarray::Axis(2), 0).mapv(|v| v as u16)))
}

fn header_text(h: &EnviHeader) -> String {
    let mut s = String::from("ENVI\n");
    s += &format!("samples = {}\nlines = {}\nbands = {}\n", h.samples, h.lines, h.bands);
    s += &format!("header offset = {}\nfile type = ENVI Standard\n", h.header_offset);
    s += &format!("data type = {}\n", h.data_type);
    let il = match h.interleave {
        Interleave::Bsq => "bsq",
        Interleave::Bil => "bil",
        Interleave::Bip => "bip",
    };
    s += &format!("interleave = {il}\nbyte order = {}\n", h.big_endian as u8);
    if let Some(w) = &h.wavelengths {
        let list: Vec<String> = w.iter().map(|v| format!("{v}")).collect();
        s += &format!("wavelength units = Nanometers\nwavelength = {{ {} }}\n", list.join(", "));
    }
    if let Some(c) = &h.class_names {
        s += &format!("classes = {}\nclass names = {{ {} }}\n", c.len(), c.join(", "));
    }
    for (k, v) in &h.extra {
        s += &format!("{k} = {v}\n");
    }
    s
}

/// Write a cube as little-endian f32 BIP.
pub fn write_envi(data_path: &Path, data: &Array3<f32>, wavelengths: Option<&[f64]>) -> Result<()> {
    let (lines, samples, bands) = data.dim();
    let h = EnviHeader {
        samples,
        lines,
        bands,
        header_offset: 0,
        data_type: 4,
        interleave: Interleave::Bip,
        big_endian: false,
        wavelengths: wavelengths.map(<[f64]>::to_vec),
        class_names: None,
        extra: BTreeMap::new(),
    };
    std::fs::write(header_path(data_path), header_text(&h))?;
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(data_path, bytes)?;
    Ok(())
}

/// Write a label map as little-endian u16 with the class catalog in the header.
pub fn write_envi_labels(data_path: &Path, labels: &Array2<u16>, class_names: &[String]) -> Result<()> {
    let (lines, samples) = labels.dim();
    let h = EnviHeader {
        samples,
        lines,
        bands: 1,
        header_offset: 0,
        data_type: 12,
        interleave: Interleave::Bsq,
        big_endian: false,
        wavelengths: None,
        class_names: Some(class_names.to_vec()),
        extra: BTreeMap::new(),
    };
    std::fs::write(header_path(data_path), header_text(&h))?;
    let bytes: Vec<u8> = labels.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(data_path, bytes)?;
    Ok(())
}
