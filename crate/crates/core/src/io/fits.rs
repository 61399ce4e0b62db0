//! Minimal FITS support: the primary HDU of a 2-D image or 3-D cube.
//!
//! Reading accepts BITPIX 8, 16, 32, 64, −32 and −64 with optional
//! BSCALE/BZERO. Writing produces floating-point images only.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Result, SpriteError};
use crate::image::ImageGrid;

const BLOCK: usize = 2880;
const CARD: usize = 80;

/// Header value as it appeared in the file.
#[derive(Debug, Clone, PartialEq)]
pub enum HeaderValue {
    Logical(bool),
    Int(i64),
    Real(f64),
    Text(String),
}

impl HeaderValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            HeaderValue::Int(v) => Some(*v as f64),
            HeaderValue::Real(v) => Some(*v),
            _ => None,
        }
    }

    fn as_i64(&self) -> Option<i64> {
        match self {
            HeaderValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            HeaderValue::Logical(b) => format!("{:>20}", if *b { "T" } else { "F" }),
            HeaderValue::Int(v) => format!("{v:>20}"),
            HeaderValue::Real(v) => format!("{:>20}", format_real(*v)),
            HeaderValue::Text(s) => format!("'{:<8}'", s.replace('\'', "''")),
        }
    }
}

// Shortest round-tripping form, with an exponent marker FITS readers accept.
fn format_real(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s.replace('e', "E")
    } else {
        format!("{s}.0")
    }
}

/// Floating-point sample width used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Bitpix {
    F32,
    #[default]
    F64,
}

impl Bitpix {
    fn code(self) -> i64 {
        match self {
            Bitpix::F32 => -32,
            Bitpix::F64 => -64,
        }
    }
}

/// Planes of the primary array (one for a 2-D image) and the user keywords.
#[derive(Debug, Clone, PartialEq)]
pub struct FitsData {
    pub planes: Vec<ImageGrid>,
    pub keywords: BTreeMap<String, HeaderValue>,
}

fn parse_value(raw: &str) -> Option<HeaderValue> {
    let raw = raw.trim_start();
    if let Some(rest) = raw.strip_prefix('\'') {
        let mut out = String::new();
        let mut chars = rest.chars().peekable();
        while let Some(c) = chars.next() {
            if c == '\'' {
                if chars.peek() == Some(&'\'') {
                    out.push('\'');
                    chars.next();
                } else {
                    return Some(HeaderValue::Text(out.trim_end().to_string()));
                }
            } else {
                out.push(c);
            }
        }
        return None;
    }
    let token = raw.split('/').next().unwrap_or("").trim();
    match token {
        "" => None,
        "T" => Some(HeaderValue::Logical(true)),
        "F" => Some(HeaderValue::Logical(false)),
        t => t
            .parse::<i64>()
            .map(HeaderValue::Int)
            .ok()
            .or_else(|| t.replace(['D', 'd'], "E").parse::<f64>().ok().map(HeaderValue::Real)),
    }
}

fn bad(msg: impl Into<String>) -> SpriteError {
    SpriteError::Format(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<(BTreeMap<String, HeaderValue>, usize)> {
    let mut keys = BTreeMap::new();
    let mut offset = 0;
    loop {
        if offset + BLOCK > bytes.len() {
            return Err(bad("header has no END card"));
        }
        for card in bytes[offset..offset + BLOCK].chunks(CARD) {
            let text = std::str::from_utf8(card).map_err(|_| bad("header is not ASCII"))?;
            let name = text[..8].trim_end();
            if name == "END" {
                return Ok((keys, offset + BLOCK));
            }
            if text.len() >= 10 && &text[8..10] == "= " {
                if let Some(v) = parse_value(&text[10..]) {
                    keys.insert(name.to_string(), v);
                }
            }
        }
        offset += BLOCK;
    }
}

fn required_int(keys: &BTreeMap<String, HeaderValue>, name: &str) -> Result<i64> {
    keys.get(name)
        .and_then(HeaderValue::as_i64)
        .ok_or_else(|| bad(format!("missing integer keyword {name}")))
}

/// Parses a FITS byte stream.
pub fn parse(bytes: &[u8]) -> Result<FitsData> {
    if !bytes.starts_with(b"SIMPLE  =") {
        return Err(bad("not a FITS file (no SIMPLE card)"));
    }
    let (mut keys, data_start) = parse_header(bytes)?;
    if keys.get("SIMPLE") != Some(&HeaderValue::Logical(true)) {
        return Err(bad("SIMPLE is not T"));
    }
    let bitpix = required_int(&keys, "BITPIX")?;
    let naxis = required_int(&keys, "NAXIS")?;
    if !(naxis == 2 || naxis == 3) {
        return Err(bad(format!("expected a 2-D image or 3-D cube, NAXIS = {naxis}")));
    }
    let mut axes = Vec::with_capacity(naxis as usize);
    for a in 1..=naxis {
        let n = required_int(&keys, &format!("NAXIS{a}"))?;
        if n <= 0 {
            return Err(bad(format!("NAXIS{a} = {n} is not positive")));
        }
        axes.push(n as usize);
    }
    let width = axes[0];
    let height = axes[1];
    let planes = if naxis == 3 { axes[2] } else { 1 };
    let count = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(planes))
        .ok_or_else(|| bad("array size overflows"))?;
    let size = match bitpix {
        8 => 1,
        16 => 2,
        32 | -32 => 4,
        64 | -64 => 8,
        b => return Err(bad(format!("unsupported BITPIX {b}"))),
    };
    let data = bytes
        .get(data_start..data_start + count * size)
        .ok_or_else(|| bad("data unit is truncated"))?;
    let scale = keys.get("BSCALE").and_then(HeaderValue::as_f64).unwrap_or(1.0);
    let zero = keys.get("BZERO").and_then(HeaderValue::as_f64).unwrap_or(0.0);
    let values: Vec<f64> = data
        .chunks_exact(size)
        .map(|c| {
            let raw = match bitpix {
                8 => c[0] as f64,
                16 => i16::from_be_bytes([c[0], c[1]]) as f64,
                32 => i32::from_be_bytes(c.try_into().unwrap()) as f64,
                64 => i64::from_be_bytes(c.try_into().unwrap()) as f64,
                -32 => f32::from_be_bytes(c.try_into().unwrap()) as f64,
                _ => f64::from_be_bytes(c.try_into().unwrap()),
            };
            zero + scale * raw
        })
        .collect();
    let plane_len = width * height;
    let planes = values
        .chunks_exact(plane_len)
        .map(|p| ImageGrid::from_vec(height, width, p.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    for k in ["SIMPLE", "BITPIX", "NAXIS", "NAXIS1", "NAXIS2", "NAXIS3", "EXTEND", "BSCALE", "BZERO"] {
        keys.remove(k);
    }
    Ok(FitsData { planes, keywords: keys })
}

pub fn read(path: &Path) -> Result<FitsData> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse(&bytes)
}

fn card(name: &str, value: &HeaderValue) -> String {
    let mut c = format!("{name:<8}= {}", value.render());
    c.truncate(CARD);
    format!("{c:<80}")
}

/// Serializes `planes` as a 2-D image (one plane) or a 3-D cube.
///
/// Keywords are written in map order after the structural cards; names longer
/// than eight characters are rejected.
pub fn encode(planes: &[ImageGrid], keywords: &BTreeMap<String, HeaderValue>, bitpix: Bitpix) -> Result<Vec<u8>> {
    let first = planes.first().ok_or_else(|| SpriteError::Input("nothing to write".into()))?;
    for p in planes {
        first.same_dims(p)?;
    }
    let (h, w) = first.dims();
    let mut header = vec![
        card("SIMPLE", &HeaderValue::Logical(true)),
        card("BITPIX", &HeaderValue::Int(bitpix.code())),
        card("NAXIS", &HeaderValue::Int(if planes.len() == 1 { 2 } else { 3 })),
        card("NAXIS1", &HeaderValue::Int(w as i64)),
        card("NAXIS2", &HeaderValue::Int(h as i64)),
    ];
    if planes.len() > 1 {
        header.push(card("NAXIS3", &HeaderValue::Int(planes.len() as i64)));
    }
    for (k, v) in keywords {
        if k.len() > 8 || k.is_empty() || !k.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_' || b == b'-') {
            return Err(SpriteError::Input(format!("invalid FITS keyword {k:?}")));
        }
        header.push(card(k, v));
    }
    header.push(format!("{:<80}", "END"));
    let mut out: Vec<u8> = header.concat().into_bytes();
    out.resize(out.len().div_ceil(BLOCK) * BLOCK, b' ');
    for p in planes {
        for &v in p.pixels() {
            match bitpix {
                Bitpix::F32 => out.extend_from_slice(&(v as f32).to_be_bytes()),
                Bitpix::F64 => out.extend_from_slice(&v.to_be_bytes()),
            }
        }
    }
    out.resize(out.len().div_ceil(BLOCK) * BLOCK, 0);
    Ok(out)
}

pub fn write(path: &Path, planes: &[ImageGrid], keywords: &BTreeMap<String, HeaderValue>, bitpix: Bitpix) -> Result<()> {
    super::write_atomic(path, &encode(planes, keywords, bitpix)?)
}
