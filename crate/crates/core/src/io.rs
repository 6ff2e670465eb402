//! Depth map file formats.
//!
//! * `pgm16`: binary PGM (`P5`), 16-bit big-endian samples. A header comment
//!   `# scale=<float>` declares `meters = sample / scale`; without it the
//!   scale is `65535 / depth_cap`.
//! * `pfm`: grayscale `Pf`, little-endian (negative scale field), rows stored
//!   bottom-to-top. Samples are 32-bit floats, so a map survives a round trip
//!   bit-for-bit whenever its pixels are representable as `f32`; otherwise
//!   each pixel is rounded to the nearest `f32` once and stays fixed after.
//! * `csv`: one line per image row, comma-separated decimal floats, no header.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::error::{DepthError, Result};

const PGM_MAXVAL: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthFormat {
    Pgm16,
    Pfm,
    Csv,
}

impl DepthFormat {
    /// Guesses the format from a file extension (`pgm`, `pfm`, `csv`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(Self::Pgm16),
            "pfm" => Some(Self::Pfm),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

impl FromStr for DepthFormat {
    type Err = DepthError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm16" | "pgm" => Ok(Self::Pgm16),
            "pfm" => Ok(Self::Pfm),
            "csv" => Ok(Self::Csv),
            other => Err(DepthError::InvalidInput(format!("unknown depth format {other:?}"))),
        }
    }
}

pub fn load_depth(path: &Path, format: DepthFormat, depth_cap: f64) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|source| DepthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_depth(&bytes, format, depth_cap)
}

pub fn store_depth(map: &DepthMap, path: &Path, format: DepthFormat) -> Result<()> {
    fs::write(path, encode_depth(map, format)).map_err(|source| DepthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn decode_depth(bytes: &[u8], format: DepthFormat, depth_cap: f64) -> Result<DepthMap> {
    match format {
        DepthFormat::Pgm16 => decode_pgm16(bytes, depth_cap),
        DepthFormat::Pfm => decode_pfm(bytes, depth_cap),
        DepthFormat::Csv => decode_csv(bytes, depth_cap),
    }
}

pub fn encode_depth(map: &DepthMap, format: DepthFormat) -> Vec<u8> {
    match format {
        DepthFormat::Pgm16 => encode_pgm16(map, default_pgm_scale(map.depth_cap())),
        DepthFormat::Pfm => encode_pfm(map),
        DepthFormat::Csv => encode_csv(map),
    }
}

/// Samples per meter used when a pgm16 header carries no scale comment.
pub fn default_pgm_scale(depth_cap: f64) -> f64 {
    f64::from(PGM_MAXVAL) / depth_cap
}

/// Header tokenizer shared by PGM and PFM. Tracks `# key=value` comments.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    scale_comment: Option<(usize, String)>,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self {
            bytes,
            pos: 0,
            scale_comment: None,
        }
    }

    fn malformed(&self, reason: impl Into<String>) -> DepthError {
        DepthError::MalformedHeader {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                let start = self.pos;
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
                let text = String::from_utf8_lossy(&self.bytes[start + 1..self.pos]);
                if let Some(value) = text.trim().strip_prefix("scale=") {
                    self.scale_comment = Some((start, value.trim().to_owned()));
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.malformed(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| DepthError::MalformedHeader {
            offset: start,
            reason: format!("{what} is not ASCII"),
        })
    }

    fn number<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let start = self.pos;
        let tok = self.token(what)?;
        tok.parse().map_err(|_| DepthError::MalformedHeader {
            offset: start,
            reason: format!("{what} {tok:?} is not a valid number"),
        })
    }

    /// Consumes the single whitespace byte that separates header and payload.
    fn end_of_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(self.malformed("expected whitespace before payload")),
        }
    }
}

fn positive_dim(value: usize, what: &str, offset: usize) -> Result<usize> {
    if value == 0 {
        Err(DepthError::MalformedHeader {
            offset,
            reason: format!("{what} must be positive"),
        })
    } else {
        Ok(value)
    }
}

fn payload(bytes: &[u8], offset: usize, expected: usize) -> Result<&[u8]> {
    let found = bytes.len().saturating_sub(offset);
    if found < expected {
        return Err(DepthError::Truncated {
            offset,
            expected,
            found,
        });
    }
    Ok(&bytes[offset..offset + expected])
}

/// Checks a decoded pixel, tolerating a last-ulp overshoot of the cap.
fn checked_pixel(index: usize, value: f64, cap: f64) -> Result<f64> {
    if !value.is_finite() || value < 0.0 {
        return Err(DepthError::InvalidInput(format!(
            "pixel {index} holds invalid depth {value}"
        )));
    }
    if value > cap {
        if value <= cap * (1.0 + 4.0 * f64::EPSILON) {
            return Ok(cap);
        }
        return Err(DepthError::AboveCap { index, value, cap });
    }
    Ok(value)
}

fn decode_pgm16(bytes: &[u8], depth_cap: f64) -> Result<DepthMap> {
    let mut header = HeaderReader::new(bytes);
    if header.token("magic")? != "P5" {
        return Err(DepthError::MalformedHeader {
            offset: 0,
            reason: "expected magic P5".into(),
        });
    }
    let at = header.pos;
    let width = positive_dim(header.number("width")?, "width", at)?;
    let at = header.pos;
    let height = positive_dim(header.number("height")?, "height", at)?;
    let at = header.pos;
    let maxval: u32 = header.number("maxval")?;
    if !(256..=u32::from(PGM_MAXVAL)).contains(&maxval) {
        return Err(DepthError::MalformedHeader {
            offset: at,
            reason: format!("maxval {maxval} is not a 16-bit PGM"),
        });
    }
    let data_start = header.end_of_header()?;
    let scale = match header.scale_comment.take() {
        Some((offset, text)) => {
            let scale: f64 = text.parse().map_err(|_| DepthError::MalformedHeader {
                offset,
                reason: format!("scale comment {text:?} is not a number"),
            })?;
            if !(scale.is_finite() && scale > 0.0) {
                return Err(DepthError::MalformedHeader {
                    offset,
                    reason: format!("scale must be positive, got {scale}"),
                });
            }
            scale
        }
        None => default_pgm_scale(depth_cap),
    };

    let data = payload(bytes, data_start, width * height * 2)?;
    let pixels = data
        .chunks_exact(2)
        .enumerate()
        .map(|(i, b)| {
            let sample = u16::from_be_bytes([b[0], b[1]]);
            checked_pixel(i, f64::from(sample) / scale, depth_cap)
        })
        .collect::<Result<Vec<_>>>()?;
    DepthMap::new(width, height, pixels, depth_cap)
}

pub(crate) fn encode_pgm16(map: &DepthMap, scale: f64) -> Vec<u8> {
    let mut out = format!(
        "P5\n# scale={scale}\n{} {}\n{}\n",
        map.width(),
        map.height(),
        PGM_MAXVAL
    )
    .into_bytes();
    out.reserve(map.len() * 2);
    for &v in map.pixels() {
        let sample = (v * scale).round().clamp(0.0, f64::from(PGM_MAXVAL)) as u16;
        out.extend_from_slice(&sample.to_be_bytes());
    }
    out
}

fn decode_pfm(bytes: &[u8], depth_cap: f64) -> Result<DepthMap> {
    let mut header = HeaderReader::new(bytes);
    match header.token("magic")? {
        "Pf" => {}
        "PF" => {
            return Err(DepthError::MalformedHeader {
                offset: 0,
                reason: "color PFM (PF) is not a depth map; expected Pf".into(),
            })
        }
        _ => {
            return Err(DepthError::MalformedHeader {
                offset: 0,
                reason: "expected magic Pf".into(),
            })
        }
    }
    let at = header.pos;
    let width = positive_dim(header.number("width")?, "width", at)?;
    let at = header.pos;
    let height = positive_dim(header.number("height")?, "height", at)?;
    let at = header.pos;
    let scale: f64 = header.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(DepthError::MalformedHeader {
            offset: at,
            reason: format!("scale {scale} must be finite and non-zero"),
        });
    }
    let little_endian = scale < 0.0;
    let data_start = header.end_of_header()?;
    let data = payload(bytes, data_start, width * height * 4)?;

    let mut pixels = vec![0.0; width * height];
    for (stored_row, row_bytes) in data.chunks_exact(width * 4).enumerate() {
        let row = height - 1 - stored_row;
        for (col, b) in row_bytes.chunks_exact(4).enumerate() {
            let raw = [b[0], b[1], b[2], b[3]];
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            let index = row * width + col;
            pixels[index] = checked_pixel(index, f64::from(v), depth_cap)?;
        }
    }
    DepthMap::new(width, height, pixels, depth_cap)
}

fn encode_pfm(map: &DepthMap) -> Vec<u8> {
    let (w, h) = (map.width(), map.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for row in (0..h).rev() {
        for col in 0..w {
            out.extend_from_slice(&(map.get(row, col) as f32).to_le_bytes());
        }
    }
    out
}

fn decode_csv(bytes: &[u8], depth_cap: f64) -> Result<DepthMap> {
    let text = std::str::from_utf8(bytes).map_err(|e| DepthError::Csv {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        reason: "not valid UTF-8".into(),
    })?;
    let mut width = None;
    let mut pixels = Vec::new();
    let mut height = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let start = pixels.len();
        for field in line.split(',') {
            let value: f64 = field.trim().parse().map_err(|_| DepthError::Csv {
                line: i + 1,
                reason: format!("{:?} is not a number", field.trim()),
            })?;
            pixels.push(value);
        }
        let cols = pixels.len() - start;
        match width {
            None => width = Some(cols),
            Some(w) if w != cols => {
                return Err(DepthError::Csv {
                    line: i + 1,
                    reason: format!("expected {w} columns, found {cols}"),
                })
            }
            Some(_) => {}
        }
        height += 1;
    }
    let width = width.ok_or(DepthError::Csv {
        line: 1,
        reason: "no rows".into(),
    })?;
    for (index, value) in pixels.iter_mut().enumerate() {
        *value = checked_pixel(index, *value, depth_cap)?;
    }
    DepthMap::new(width, height, pixels, depth_cap)
}

fn encode_csv(map: &DepthMap) -> Vec<u8> {
    let mut out = String::new();
    for row in map.pixels().chunks(map.width()) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pgm_bytes(header: &str, samples: &[u16]) -> Vec<u8> {
        let mut b = header.as_bytes().to_vec();
        for s in samples {
            b.extend_from_slice(&s.to_be_bytes());
        }
        b
    }

    #[test]
    fn pgm_dequantizes_with_declared_scale() {
        let bytes = pgm_bytes("P5\n# scale=6553.5\n1 1\n65535\n", &[32767]);
        let m = decode_depth(&bytes, DepthFormat::Pgm16, 10.0).unwrap();
        assert!((m.pixels()[0] - 5.0).abs() <= 1.0 / 6553.5);
    }

    #[test]
    fn pgm_without_scale_uses_cap() {
        let bytes = pgm_bytes("P5 2 1 65535\n", &[65535, 0]);
        let m = decode_depth(&bytes, DepthFormat::Pgm16, 10.0).unwrap();
        assert_eq!(m.pixels(), &[10.0, 0.0]);
    }

    #[test]
    fn pgm_encodes_cap_and_zero() {
        let m = DepthMap::filled(2, 2, 10.0, 10.0).unwrap();
        let bytes = encode_depth(&m, DepthFormat::Pgm16);
        assert!(bytes.starts_with(b"P5\n# scale=6553.5\n2 2\n65535\n"));
        assert!(bytes.ends_with(&[0xff, 0xff]));
        let m = DepthMap::filled(1, 1, 0.0, 10.0).unwrap();
        assert!(encode_depth(&m, DepthFormat::Pgm16).ends_with(&[0, 0]));
    }

    #[test]
    fn pgm_errors_are_distinct() {
        let err = decode_depth(b"P6\n1 1\n65535\n\0\0", DepthFormat::Pgm16, 10.0).unwrap_err();
        assert!(matches!(err, DepthError::MalformedHeader { offset: 0, .. }));

        let err = decode_depth(b"P5\n1 x\n65535\n\0\0", DepthFormat::Pgm16, 10.0).unwrap_err();
        assert!(matches!(err, DepthError::MalformedHeader { offset: 4, .. }), "{err}");

        let err = decode_depth(b"P5\n2 2\n65535\n\0\0\0", DepthFormat::Pgm16, 10.0).unwrap_err();
        assert!(
            matches!(
                err,
                DepthError::Truncated {
                    offset: 13,
                    expected: 8,
                    found: 3
                }
            ),
            "{err}"
        );

        let bytes = pgm_bytes("P5\n# scale=1000\n2 1\n65535\n", &[5000, 20000]);
        let err = decode_depth(&bytes, DepthFormat::Pgm16, 10.0).unwrap_err();
        assert!(matches!(err, DepthError::AboveCap { index: 1, .. }), "{err}");

        let err = decode_depth(b"P5\n1 1\n255\n\0", DepthFormat::Pgm16, 10.0).unwrap_err();
        assert!(matches!(err, DepthError::MalformedHeader { .. }));
    }

    #[test]
    fn pfm_rows_are_bottom_to_top() {
        let m = DepthMap::with_default_cap(1, 2, vec![1.0, 2.0]).unwrap();
        let bytes = encode_depth(&m, DepthFormat::Pfm);
        let header = b"Pf\n1 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..header.len() + 4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn pfm_reads_big_endian() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&3.5f32.to_be_bytes());
        bytes.extend_from_slice(&0.25f32.to_be_bytes());
        let m = decode_depth(&bytes, DepthFormat::Pfm, 10.0).unwrap();
        assert_eq!(m.pixels(), &[3.5, 0.25]);
    }

    #[test]
    fn pfm_errors() {
        let err = decode_depth(b"PF\n1 1\n-1.0\n\0\0\0\0", DepthFormat::Pfm, 10.0).unwrap_err();
        assert!(matches!(err, DepthError::MalformedHeader { .. }));
        let err = decode_depth(b"Pf\n1 1\n-1.0\n\0\0", DepthFormat::Pfm, 10.0).unwrap_err();
        assert!(matches!(
            err,
            DepthError::Truncated {
                expected: 4,
                found: 2,
                ..
            }
        ));
        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_depth(&bytes, DepthFormat::Pfm, 10.0).is_err());
    }

    #[test]
    fn csv_parses_rows() {
        let m = decode_depth(b"1.0,2.0\n3.0,4.0", DepthFormat::Csv, 10.0).unwrap();
        assert_eq!((m.width(), m.height()), (2, 2));
        assert_eq!(m.pixels(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn csv_errors_name_line() {
        let err = decode_depth(b"1,2\n3\n", DepthFormat::Csv, 10.0).unwrap_err();
        assert!(matches!(err, DepthError::Csv { line: 2, .. }));
        let err = decode_depth(b"1,2\n3,abc\n", DepthFormat::Csv, 10.0).unwrap_err();
        assert!(matches!(err, DepthError::Csv { line: 2, .. }));
        let err = decode_depth(b"1,11\n", DepthFormat::Csv, 10.0).unwrap_err();
        assert!(matches!(err, DepthError::AboveCap { index: 1, .. }));
        assert!(decode_depth(b"\n", DepthFormat::Csv, 10.0).is_err());
    }

    #[test]
    fn files_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let m = DepthMap::from_fn(5, 3, 10.0, |r, c| (r * 5 + c) as f64 * 0.5).unwrap();
        for format in [DepthFormat::Pfm, DepthFormat::Csv, DepthFormat::Pgm16] {
            let path = dir.path().join("m");
            store_depth(&m, &path, format).unwrap();
            let back = load_depth(&path, format, 10.0).unwrap();
            let tol = if format == DepthFormat::Pgm16 {
                0.5 / default_pgm_scale(10.0)
            } else {
                0.0
            };
            for (a, b) in m.pixels().iter().zip(back.pixels()) {
                assert!((a - b).abs() <= tol, "{format:?}: {a} vs {b}");
            }
        }
        let err = load_depth(&dir.path().join("missing"), DepthFormat::Pfm, 10.0).unwrap_err();
        assert!(matches!(err, DepthError::Io { .. }));
    }

    fn f32_map() -> impl Strategy<Value = DepthMap> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f32..=10.0, w * h)
                .prop_map(move |px| DepthMap::with_default_cap(w, h, px.into_iter().map(f64::from).collect()).unwrap())
        })
    }

    fn f64_map() -> impl Strategy<Value = DepthMap> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f64..=10.0, w * h)
                .prop_map(move |px| DepthMap::with_default_cap(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pfm_round_trip_is_bit_exact(m in f32_map()) {
            let back = decode_depth(&encode_depth(&m, DepthFormat::Pfm), DepthFormat::Pfm, 10.0).unwrap();
            let same = m.pixels().iter().zip(back.pixels()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }

        #[test]
        fn pfm_rounding_is_idempotent(m in f64_map()) {
            let once = decode_depth(&encode_depth(&m, DepthFormat::Pfm), DepthFormat::Pfm, 10.0).unwrap();
            let twice = decode_depth(&encode_depth(&once, DepthFormat::Pfm), DepthFormat::Pfm, 10.0).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn pgm_round_trip_within_half_step(m in f64_map()) {
            let scale = default_pgm_scale(10.0);
            let back = decode_depth(&encode_depth(&m, DepthFormat::Pgm16), DepthFormat::Pgm16, 10.0).unwrap();
            for (a, b) in m.pixels().iter().zip(back.pixels()) {
                prop_assert!((a - b).abs() <= 0.5 / scale + 1e-12);
            }
        }

        #[test]
        fn csv_round_trip_is_exact(m in f64_map()) {
            let back = decode_depth(&encode_depth(&m, DepthFormat::Csv), DepthFormat::Csv, 10.0).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
