//! Run directories, CSV tables and P5 image grids.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult, Kind};

/// The directory every artifact of this invocation goes to.
///
/// `RUN_DIR` names it exactly; otherwise `<base>/<cmd>-<timestamp>` with a
/// numeric suffix when that name is taken. An existing non-empty `RUN_DIR`
/// is refused unless `force` is set.
pub fn run_dir(base: Option<&Path>, cmd: &str, force: bool) -> CliResult<PathBuf> {
    if let Some(dir) = std::env::var_os("RUN_DIR") {
        let dir = PathBuf::from(dir);
        if !force && dir.exists() && fs::read_dir(&dir)?.next().is_some() {
            return Err(CliError::new(
                Kind::Other,
                format!("run directory {} is not empty (use --force to reuse it)", dir.display()),
            ));
        }
        fs::create_dir_all(&dir)?;
        return Ok(dir);
    }
    let base = base.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&base)?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    for n in 0.. {
        let name = if n == 0 { format!("{cmd}-{stamp}") } else { format!("{cmd}-{stamp}-{n}") };
        let dir = base.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("unbounded suffix search")
}

/// Opens a CSV file for writing and emits `header`.
pub fn csv_writer(path: &Path, header: &[&str]) -> CliResult<csv::Writer<File>> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    w.flush()?;
    Ok(w)
}

pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> CliResult<()> {
    let mut w = csv_writer(path, header)?;
    for r in rows {
        w.write_record(r.iter().map(AsRef::as_ref))?;
    }
    w.flush()?;
    Ok(())
}

/// `round((x + 1)·127.5)` with halves rounded up, clamped to a byte.
pub fn to_byte(x: f64) -> u8 {
    if x.is_nan() {
        return 0;
    }
    ((x + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Tile height and width for a `dim`-pixel image: square when `dim` is a
/// perfect square, a single row otherwise.
pub fn tile_shape(dim: usize) -> (usize, usize) {
    let s = (dim as f64).sqrt().round() as usize;
    if s * s == dim {
        (s, s)
    } else {
        (1, dim)
    }
}

/// Lays out `rows[r][c]` (each a flat image in `[−1, 1]`) as one P5 image.
pub fn pgm_grid<T: hieb_core::Scalar>(rows: &[Vec<Vec<T>>]) -> CliResult<Vec<u8>> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let dim = rows.iter().flatten().map(Vec::len).next().unwrap_or(0);
    if rows.is_empty() || cols == 0 || dim == 0 {
        return Err(CliError::new(Kind::Other, "empty image grid"));
    }
    if rows.iter().flatten().any(|img| img.len() != dim) {
        return Err(CliError::new(Kind::Other, "image grid tiles differ in size"));
    }
    let (th, tw) = tile_shape(dim);
    let (h, w) = (rows.len() * th, cols * tw);
    let mut pixels = vec![0u8; h * w];
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            for (k, v) in img.iter().enumerate() {
                let (y, x) = (r * th + k / tw, c * tw + k % tw);
                pixels[y * w + x] = to_byte(v.as_f64());
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn write_pgm<T: hieb_core::Scalar>(path: &Path, rows: &[Vec<Vec<T>>]) -> CliResult<()> {
    let bytes = pgm_grid(rows)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

/// Shortest representation that reads back to the same `f64`.
pub fn num<T: hieb_core::Scalar>(v: T) -> String {
    format!("{}", v.as_f64())
}
