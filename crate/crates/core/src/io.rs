//! File formats: binary PGM images, a bit-exact velocity container, and
//! full-precision CSV matrices.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarImage, TimeVelocity, VectorField};

/// Version stamped into every JSON document the crate writes.
pub const SCHEMA_VERSION: u32 = 1;

const VELOCITY_MAGIC: &[u8; 8] = b"LDDMMVEL";
const VELOCITY_VERSION: u32 = 1;

/// Sample depth of a written PGM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PgmDepth {
    Eight,
    #[default]
    Sixteen,
}

impl PgmDepth {
    fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

/// Writes `path` through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes `value` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Quantizes intensities (clamped to [0, 1]) into a binary P5 file.
pub fn write_pgm(path: &Path, image: &ScalarImage, depth: PgmDepth) -> Result<()> {
    let g = image.grid();
    let maxval = depth.maxval();
    let mut bytes = format!("P5\n{} {}\n{}\n", g.nx, g.ny, maxval).into_bytes();
    for &v in image.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        match depth {
            PgmDepth::Eight => bytes.push(q as u8),
            PgmDepth::Sixteen => bytes.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    write_atomic(path, &bytes)
}

fn pgm_header(path: &Path, bytes: &[u8]) -> Result<([usize; 3], usize)> {
    let mut fields = [0usize; 3];
    let mut pos = 2;
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "malformed PGM header"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, "malformed PGM header"));
    }
    Ok((fields, pos + 1))
}

/// Reads an 8- or 16-bit P5 file into `[0, 1]` intensities on a unit-spacing grid.
pub fn read_pgm(path: &Path) -> Result<ScalarImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(b"P5") {
        return Err(Error::format(path, "not a binary PGM (P5) file"));
    }
    let ([nx, ny, maxval], start) = pgm_header(path, &bytes)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, format!("unsupported PGM maxval {maxval}")));
    }
    let width = if maxval < 256 { 1 } else { 2 };
    let raster = &bytes[start..];
    if raster.len() < nx * ny * width {
        return Err(Error::format(path, "PGM raster is truncated"));
    }
    let data = (0..nx * ny)
        .map(|i| {
            let q = if width == 1 {
                raster[i] as u32
            } else {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
            };
            q as f64 / maxval as f64
        })
        .collect();
    let grid = GridSpec::new(nx, ny).map_err(|e| Error::format(path, e.to_string()))?;
    ScalarImage::new(grid, data)
}

/// Layout: magic, version (u32), nx, ny, T (u64), hx, hy (f64), then per step
/// all `vx` followed by all `vy`. Everything little-endian.
pub fn write_velocity(path: &Path, v: &TimeVelocity) -> Result<()> {
    let g = v.grid();
    let mut out = Vec::with_capacity(48 + 16 * g.len() * v.time_steps());
    out.extend_from_slice(VELOCITY_MAGIC);
    out.extend_from_slice(&VELOCITY_VERSION.to_le_bytes());
    for n in [g.nx, g.ny, v.time_steps()] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    out.extend_from_slice(&g.hx.to_le_bytes());
    out.extend_from_slice(&g.hy.to_le_bytes());
    for step in v.steps() {
        for &c in step.vx().iter().chain(step.vy()) {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    write_atomic(path, &out)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format(self.path, "velocity file is truncated"))?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice length equals N"))
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.take()?))
            .map_err(|_| Error::format(self.path, "dimension does not fit in usize"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn read_velocity(path: &Path) -> Result<TimeVelocity> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if &c.take::<8>()? != VELOCITY_MAGIC {
        return Err(Error::format(path, "bad velocity magic"));
    }
    let version = u32::from_le_bytes(c.take()?);
    if version != VELOCITY_VERSION {
        return Err(Error::format(path, format!("unsupported velocity version {version}")));
    }
    let (nx, ny, t) = (c.u64()?, c.u64()?, c.u64()?);
    let (hx, hy) = (c.f64()?, c.f64()?);
    let grid = GridSpec::with_spacing(nx, ny, hx, hy).map_err(|e| Error::format(path, e.to_string()))?;
    let expected = nx
        .checked_mul(ny)
        .and_then(|n| n.checked_mul(16))
        .and_then(|n| n.checked_mul(t))
        .ok_or_else(|| Error::format(path, "dimensions overflow"))?;
    if bytes.len() - c.pos != expected {
        return Err(Error::format(path, "velocity payload size does not match header"));
    }
    let mut steps = Vec::with_capacity(t);
    for _ in 0..t {
        let vx = (0..grid.len()).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        let vy = (0..grid.len()).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        steps.push(VectorField::new(grid, vx, vy)?);
    }
    TimeVelocity::new(steps).map_err(|e| Error::format(path, e.to_string()))
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Full matrix, row-major, comma separated, no header.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_f64(m[(i, j)])).collect();
        writeln!(w, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, e.to_string()))
        })
        .collect::<Result<_>>()?;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::format(path, "ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
