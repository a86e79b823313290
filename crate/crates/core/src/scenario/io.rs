//! Output files: screen profiles as CSV, 2D fields as a small binary
//! container (64-byte text header, then little-endian `f64`, row-major).
//! Header spacings carry 10 significant digits; the payload is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::analysis::{FarFieldProfile, HusimiMap};
use crate::error::{Error, Result};
use crate::spinor::Spin;

pub const DUMP_MAGIC: &str = "SPFD1";
pub const HEADER_LEN: usize = 64;

/// Header of a field dump. `nx` is the fast (contiguous) axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpHeader {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub tag: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn profile_csv(profile: &FarFieldProfile) -> String {
    let mut s = String::with_capacity(profile.len() * 100);
    s.push_str("y_scr_m,I_up,I_dn,I_py,I_ny\n");
    for i in 0..profile.len() {
        s.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e}\n",
            profile.y_scr[i], profile.i_up[i], profile.i_dn[i], profile.i_py[i], profile.i_ny[i]
        ));
    }
    s
}

pub fn write_profile(path: &Path, profile: &FarFieldProfile) -> Result<()> {
    write_bytes(path, profile_csv(profile).as_bytes())
}

/// Writes rows of already-formatted values under `header`.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

pub fn encode_field_dump(header: &DumpHeader, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != header.nx * header.ny {
        return Err(Error::Dimension(format!(
            "dump of {}x{} needs {} values, got {}",
            header.nx,
            header.ny,
            header.nx * header.ny,
            values.len()
        )));
    }
    if header.tag.is_empty() || header.tag.contains(char::is_whitespace) {
        return Err(Error::Config(format!("dump tag `{}` must be a single word", header.tag)));
    }
    let mut text = format!(
        "{DUMP_MAGIC} {} {} {:.9e} {:.9e} {}",
        header.nx, header.ny, header.dx, header.dy, header.tag
    );
    if text.len() > HEADER_LEN - 1 {
        return Err(Error::Config(format!("dump header too long: `{text}`")));
    }
    while text.len() < HEADER_LEN - 1 {
        text.push(' ');
    }
    text.push('\n');
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(text.as_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_field_dump(bytes: &[u8], path: &Path) -> Result<(DumpHeader, Vec<f64>)> {
    let bad = |m: &str| Error::parse(path.display().to_string(), m);
    if bytes.len() < HEADER_LEN {
        return Err(bad("file shorter than the dump header"));
    }
    let text = std::str::from_utf8(&bytes[..HEADER_LEN]).map_err(|_| bad("header is not text"))?;
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != DUMP_MAGIC {
        return Err(bad("not a field dump"));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad("malformed header number"));
    let cnt = |s: &str| s.parse::<usize>().map_err(|_| bad("malformed header count"));
    let header = DumpHeader {
        nx: cnt(parts[1])?,
        ny: cnt(parts[2])?,
        dx: num(parts[3])?,
        dy: num(parts[4])?,
        tag: parts[5].to_string(),
    };
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * header.nx * header.ny {
        return Err(bad("payload length does not match the header"));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, values))
}

pub fn write_field_dump(path: &Path, header: &DumpHeader, values: &[f64]) -> Result<()> {
    write_bytes(path, &encode_field_dump(header, values)?)
}

pub fn read_field_dump(path: &Path) -> Result<(DumpHeader, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_field_dump(&bytes, path)
}

/// One channel of a Husimi map as a field dump: `k_y` is the fast axis.
pub fn write_husimi(path: &Path, map: &HusimiMap, spin: Spin) -> Result<()> {
    let step = |v: &[f64]| if v.len() > 1 { v[1] - v[0] } else { 0.0 };
    let header = DumpHeader {
        nx: map.ky.len(),
        ny: map.y0.len(),
        dx: step(&map.ky),
        dy: step(&map.y0),
        tag: match spin {
            Spin::Up => "husimi_up".into(),
            Spin::Down => "husimi_dn".into(),
        },
    };
    write_field_dump(path, &header, map.channel(spin))
}
