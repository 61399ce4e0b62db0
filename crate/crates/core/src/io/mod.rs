//! File formats: FITS and raw stacks, key-value text files and benchmark CSVs.

pub mod config;
pub mod fits;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Result, SpriteError};
use crate::image::ImageGrid;
use crate::simulation::benchmark::BenchmarkResult;

pub use fits::{Bitpix, HeaderValue};

/// First header word of a raw stack file (`"SPRTRAW1"` read as little-endian).
pub const RAW_MAGIC: i64 = i64::from_le_bytes(*b"SPRTRAW1");
const RAW_VERSION: i64 = 1;
const RAW_HEADER_WORDS: usize = 8;

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| SpriteError::Input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Raw stack layout: eight little-endian `i64` words
/// `[magic, version, n, height, width, 0, 0, 0]`, then `n·height·width`
/// little-endian `f64` samples, plane by plane, row-major.
pub fn encode_raw(planes: &[ImageGrid]) -> Result<Vec<u8>> {
    let first = planes.first().ok_or_else(|| SpriteError::Input("nothing to write".into()))?;
    for p in planes {
        first.same_dims(p)?;
    }
    let (h, w) = first.dims();
    let header = [RAW_MAGIC, RAW_VERSION, planes.len() as i64, h as i64, w as i64, 0, 0, 0];
    let mut out = Vec::with_capacity(8 * (RAW_HEADER_WORDS + planes.len() * h * w));
    for v in header {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for p in planes {
        for v in p.pixels() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_raw(bytes: &[u8]) -> Result<Vec<ImageGrid>> {
    let bad = |m: &str| SpriteError::Format(format!("raw stack: {m}"));
    if bytes.len() < 8 * RAW_HEADER_WORDS {
        return Err(bad("file shorter than its header"));
    }
    let word = |i: usize| i64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
    if word(0) != RAW_MAGIC {
        return Err(bad("bad magic"));
    }
    if word(1) != RAW_VERSION {
        return Err(bad(&format!("unsupported version {}", word(1))));
    }
    let (n, h, w) = (word(2), word(3), word(4));
    if n <= 0 || h <= 0 || w <= 0 {
        return Err(bad(&format!("invalid dimensions {n}x{h}x{w}")));
    }
    let (n, h, w) = (n as usize, h as usize, w as usize);
    let body = &bytes[8 * RAW_HEADER_WORDS..];
    let count = n.checked_mul(h * w).ok_or_else(|| bad("size overflows"))?;
    if body.len() != 8 * count {
        return Err(bad(&format!("expected {count} samples, found {} bytes", body.len())));
    }
    body.chunks_exact(8 * h * w)
        .map(|plane| {
            let px = plane.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            ImageGrid::from_vec(h, w, px)
        })
        .collect()
}

/// Exposures read from disk with any per-exposure overrides found in the header.
#[derive(Debug, Clone, PartialEq)]
pub struct StackFile {
    pub planes: Vec<ImageGrid>,
    pub sigmas: Vec<Option<f64>>,
    pub fluxes: Vec<Option<f64>>,
}

/// Reads a FITS image/cube or a raw stack, chosen by content.
pub fn read_stack(path: &Path) -> Result<StackFile> {
    let bytes = std::fs::read(path).map_err(|e| SpriteError::Input(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(b"SIMPLE  =") {
        let data = fits::parse(&bytes)?;
        let n = data.planes.len();
        let lookup = |prefix: &str| -> Vec<Option<f64>> {
            (0..n).map(|k| data.keywords.get(&format!("{prefix}{k}")).and_then(HeaderValue::as_f64)).collect()
        };
        let sigmas = lookup("SIGMA_");
        let fluxes = lookup("FLUX_");
        Ok(StackFile { planes: data.planes, sigmas, fluxes })
    } else {
        let planes = parse_raw(&bytes)?;
        let n = planes.len();
        Ok(StackFile { planes, sigmas: vec![None; n], fluxes: vec![None; n] })
    }
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| SpriteError::Input(format!("line {}: expected key = value", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(SpriteError::Input(format!("line {}: empty key", no + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Renders `pairs` as `key = value` lines under an optional comment header.
pub fn format_key_values(comment: Option<&str>, pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(s, "# {line}");
        }
    }
    for (k, v) in pairs {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

fn snr_label(snr: f64) -> String {
    if snr.is_infinite() {
        "inf".into()
    } else {
        format!("{snr}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const DETAIL_HEADER: &str = "snr_db,method,trial,e1_err,e2_err,fwhm_err_pct,errmap_std,pearson,runtime_s";
pub const AGGREGATE_HEADER: &str = "snr_db,method,count,failures,e1_mean,e1_std,e2_mean,e2_std,e1_median,e2_median,fwhm_err_pct_mean,errmap_std_median,pearson_median,runtime_mean_s";
pub const FAILURE_HEADER: &str = "snr_db,method,trial,error";

pub fn detail_csv(res: &BenchmarkResult) -> String {
    let mut s = format!("{DETAIL_HEADER}\n");
    for r in &res.rows {
        let _ = writeln!(
            s,
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
            snr_label(r.snr_db),
            r.method,
            r.trial,
            r.e1_err,
            r.e2_err,
            r.fwhm_err_pct,
            r.errmap_std,
            r.pearson,
            r.runtime_s
        );
    }
    s
}

pub fn aggregate_csv(res: &BenchmarkResult) -> String {
    let mut s = format!("{AGGREGATE_HEADER}\n");
    for a in &res.aggregate {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            snr_label(a.snr_db),
            a.method,
            a.count,
            a.failures,
            a.e1_mean,
            a.e1_std,
            a.e2_mean,
            a.e2_std,
            a.e1_median,
            a.e2_median,
            a.fwhm_err_pct_mean,
            a.errmap_std_median,
            a.pearson_median,
            a.runtime_mean_s
        );
    }
    s
}

pub fn failures_csv(res: &BenchmarkResult) -> String {
    let mut s = format!("{FAILURE_HEADER}\n");
    for f in &res.failures {
        let _ = writeln!(s, "{},{},{},{}", snr_label(f.snr_db), f.method, f.trial, csv_field(&f.error));
    }
    s
}

/// Keywords for a stack cube: `SIGMA_k`, `FLUX_k` per exposure.
pub fn stack_keywords(sigmas: &[f64], fluxes: &[f64]) -> BTreeMap<String, HeaderValue> {
    let mut keys = BTreeMap::new();
    for (k, (&s, &f)) in sigmas.iter().zip(fluxes).enumerate() {
        keys.insert(format!("SIGMA_{k}"), HeaderValue::Real(s));
        keys.insert(format!("FLUX_{k}"), HeaderValue::Real(f));
    }
    keys
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::benchmark::{BenchmarkFailure, BenchmarkRow, Method};

    #[test]
    fn raw_round_trip() {
        let planes: Vec<ImageGrid> = (0..3).map(|k| ImageGrid::from_fn(4, 6, |i, j| (k * 100 + i * 6 + j) as f64 * 0.1)).collect();
        let bytes = encode_raw(&planes).unwrap();
        assert_eq!(bytes.len(), 64 + 3 * 24 * 8);
        assert_eq!(parse_raw(&bytes).unwrap(), planes);
        assert!(parse_raw(&bytes[..bytes.len() - 8]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] ^= 1;
        assert!(parse_raw(&wrong).is_err());
    }

    #[test]
    fn stack_file_detects_format_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let planes = vec![ImageGrid::from_fn(3, 3, |i, _| i as f64); 2];
        let raw = dir.path().join("s.raw");
        write_atomic(&raw, &encode_raw(&planes).unwrap()).unwrap();
        let r = read_stack(&raw).unwrap();
        assert_eq!(r.planes, planes);
        assert_eq!(r.sigmas, vec![None, None]);

        let mut keys = stack_keywords(&[0.5], &[2.0]);
        keys.remove("FLUX_0");
        let f = dir.path().join("s.fits");
        fits::write(&f, &planes, &keys, Bitpix::F64).unwrap();
        let r = read_stack(&f).unwrap();
        assert_eq!(r.sigmas, vec![Some(0.5), None]);
        assert_eq!(r.fluxes, vec![None, None]);
        assert!(read_stack(&dir.path().join("missing.fits")).is_err());
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().contains(".tmp-")).collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn key_values() {
        let kv = parse_key_values("# c\n n_max = 10 # trailing\n\nkappa=3\n").unwrap();
        assert_eq!(kv, vec![("n_max".into(), "10".into()), ("kappa".into(), "3".into())]);
        assert!(parse_key_values("oops").is_err());
        let text = format_key_values(Some("hdr"), &kv);
        assert_eq!(text, "# hdr\nn_max = 10\nkappa = 3\n");
        assert_eq!(parse_key_values(&text).unwrap(), kv);
    }

    #[test]
    fn csv_layout() {
        let row = BenchmarkRow {
            snr_db: 30.0,
            method: Method::ShiftAndAdd,
            trial: 2,
            e1_err: 0.5,
            e2_err: 0.25,
            fwhm_err_pct: 1.0,
            errmap_std: 0.1,
            pearson: 0.9,
            min_over_peak: 0.0,
            runtime_s: 0.01,
        };
        let res = BenchmarkResult {
            rows: vec![row],
            failures: vec![BenchmarkFailure {
                snr_db: f64::INFINITY,
                method: Method::SpriteK1,
                trial: 0,
                error: "bad, \"worse\"".into(),
            }],
            aggregate: vec![],
        };
        let d = detail_csv(&res);
        let mut lines = d.lines();
        assert_eq!(lines.next(), Some(DETAIL_HEADER));
        assert_eq!(lines.next(), Some("30,shift-and-add,2,5e-1,2.5e-1,1e0,1e-1,9e-1,1e-2"));
        assert_eq!(failures_csv(&res).lines().nth(1), Some("inf,sprite-K1,0,\"bad, \"\"worse\"\"\""));
        assert_eq!(aggregate_csv(&res), format!("{AGGREGATE_HEADER}\n"));
    }
}
