//! File formats: binary and CSV-directory cubes, CSV grids, PGM previews,
//! and CSV serializations of dictionaries, null models and test fields.
//!
//! Binary cube layout (all little-endian):
//!
//! ```text
//! "FDC1" | ny: u32 | nx: u32 | l: u32 | flags: u32 | [band_origin: i64]
//!        | data: f64 x ny*nx*l | [variance: f64 x ny*nx*l]
//! ```
//!
//! `flags` bit 0 marks a variance block, bit 1 a `band_origin` field. Voxels
//! are row-major with the band index fastest.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::cube::Cube;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::nullmodel::NullModel;
use crate::teststat::TestField;

const MAGIC: &[u8; 4] = b"FDC1";
const FLAG_VARIANCE: u32 = 1;
const FLAG_ORIGIN: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CubeFormat {
    Binary,
    CsvDir,
}

impl CubeFormat {
    /// Directories are CSV cubes, anything else is binary.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() {
            Self::CsvDir
        } else {
            Self::Binary
        }
    }
}

pub fn load_cube(path: &Path, format: CubeFormat) -> Result<Cube<f64>> {
    match format {
        CubeFormat::Binary => read_binary(&mut fs::File::open(path)?),
        CubeFormat::CsvDir => read_csv_dir(path),
    }
}

pub fn save_cube(cube: &Cube<f64>, path: &Path, format: CubeFormat) -> Result<()> {
    match format {
        CubeFormat::Binary => {
            let mut w = BufWriter::new(fs::File::create(path)?);
            write_binary(cube, &mut w)?;
            w.flush()?;
            Ok(())
        }
        CubeFormat::CsvDir => write_csv_dir(cube, path),
    }
}

pub fn write_binary(cube: &Cube<f64>, w: &mut impl Write) -> Result<()> {
    let (ny, nx, l) = cube.dims();
    w.write_all(MAGIC)?;
    for d in [ny, nx, l] {
        let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut flags = 0;
    if cube.variance().is_some() {
        flags |= FLAG_VARIANCE;
    }
    if cube.band_origin != 0 {
        flags |= FLAG_ORIGIN;
    }
    w.write_all(&flags.to_le_bytes())?;
    if flags & FLAG_ORIGIN != 0 {
        w.write_all(&cube.band_origin.to_le_bytes())?;
    }
    for v in cube.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(var) = cube.variance() {
        for v in var {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary(r: &mut impl Read) -> Result<Cube<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if bytes.len() < pos + n {
            return Err(Error::Format(format!("truncated cube file while reading {what}")));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, expected FDC1".into()));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(4, "dimensions")?.try_into().unwrap()) as usize;
    }
    let flags = u32::from_le_bytes(take(4, "flags")?.try_into().unwrap());
    if flags & !(FLAG_VARIANCE | FLAG_ORIGIN) != 0 {
        return Err(Error::Format(format!("unknown header flags {flags:#x}")));
    }
    let origin = if flags & FLAG_ORIGIN != 0 {
        i64::from_le_bytes(take(8, "band origin")?.try_into().unwrap())
    } else {
        0
    };
    let [ny, nx, l] = dims;
    let n = ny
        .checked_mul(nx)
        .and_then(|v| v.checked_mul(l))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let mut floats = |what: &str| -> Result<Vec<f64>> {
        let raw = take(n * 8, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let data = floats("data")?;
    let variance = if flags & FLAG_VARIANCE != 0 {
        Some(floats("variance")?)
    } else {
        None
    };
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after cube", bytes.len() - pos)));
    }
    assemble(ny, nx, l, data, variance, origin)
}

/// Build a cube, enforcing the NaN policy: a pixel is either fully finite
/// or fully NaN (masked).
fn assemble(ny: usize, nx: usize, l: usize, data: Vec<f64>, variance: Option<Vec<f64>>, origin: i64) -> Result<Cube<f64>> {
    for (p, s) in data.chunks(l.max(1)).enumerate() {
        let nan = s.iter().filter(|v| v.is_nan()).count();
        if s.iter().any(|v| v.is_infinite()) {
            return Err(Error::invalid(format!("infinite value in pixel {p}")));
        }
        if nan != 0 && nan != s.len() {
            return Err(Error::invalid(format!(
                "pixel {p} is partially NaN; only fully masked spectra may hold NaN"
            )));
        }
    }
    let mut cube = Cube::new(ny, nx, l, data)?;
    cube.band_origin = origin;
    if let Some(v) = variance {
        cube = cube.with_variance(v)?;
    }
    Ok(cube)
}

fn band_file(dir: &Path, prefix: &str, b: usize) -> std::path::PathBuf {
    dir.join(format!("{prefix}_{b:04}.csv"))
}

/// One `ny x nx` CSV per band (`band_0000.csv`, ...), optional
/// `variance_0000.csv`, ..., and `cube.meta` holding `key=value` lines.
pub fn write_csv_dir(cube: &Cube<f64>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (ny, nx, l) = cube.dims();
    let meta = format!(
        "ny={ny}\nnx={nx}\nbands={l}\nband_origin={}\nvariance={}\n",
        cube.band_origin,
        cube.variance().is_some()
    );
    fs::write(dir.join("cube.meta"), meta)?;
    for b in 0..l {
        write_grid(&band_file(dir, "band", b), ny, nx, &cube.band_image(b))?;
    }
    if let Some(var) = cube.variance() {
        for b in 0..l {
            let img: Vec<f64> = (0..ny * nx).map(|p| var[p * l + b]).collect();
            write_grid(&band_file(dir, "variance", b), ny, nx, &img)?;
        }
    }
    Ok(())
}

pub fn read_csv_dir(dir: &Path) -> Result<Cube<f64>> {
    let meta = crate::config::Config::load(&dir.join("cube.meta"))?;
    let ny: usize = meta.require("ny")?;
    let nx: usize = meta.require("nx")?;
    let l: usize = meta.require("bands")?;
    let origin: i64 = meta.get("band_origin")?.unwrap_or(0);
    let has_var: bool = meta.get("variance")?.unwrap_or(false);
    let read_bands = |prefix: &str| -> Result<Vec<f64>> {
        let mut out = vec![0.0; ny * nx * l];
        for b in 0..l {
            let (gy, gx, img) = read_grid(&band_file(dir, prefix, b))?;
            if (gy, gx) != (ny, nx) {
                return Err(Error::DimensionMismatch(format!(
                    "{prefix} {b} is {gy}x{gx}, expected {ny}x{nx}"
                )));
            }
            for (p, v) in img.into_iter().enumerate() {
                out[p * l + b] = v;
            }
        }
        Ok(out)
    };
    let data = read_bands("band")?;
    let variance = if has_var { Some(read_bands("variance")?) } else { None };
    assemble(ny, nx, l, data, variance, origin)
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        // shortest representation that round-trips exactly
        format!("{v}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    t.parse::<f64>().map_err(|_| Error::Format(format!("not a number: '{t}'")))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for rec in csv_reader(path)?.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push(rec.iter().map(str::to_string).collect());
    }
    Ok(out)
}

/// Row-major `ny x nx` grid, one CSV row per image row. NaN is written as `nan`.
pub fn write_grid(path: &Path, ny: usize, nx: usize, values: &[f64]) -> Result<()> {
    if values.len() != ny * nx {
        return Err(Error::DimensionMismatch("grid size".into()));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in values.chunks(nx) {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let rows = rows(path)?;
    if rows.is_empty() {
        return Err(Error::Format(format!("{} is empty", path.display())));
    }
    let nx = rows[0].len();
    let mut out = Vec::with_capacity(rows.len() * nx);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != nx {
            return Err(Error::Format(format!("{}: row {i} has {} columns, expected {nx}", path.display(), r.len())));
        }
        for f in r {
            out.push(parse_f64(f)?);
        }
    }
    Ok((rows.len(), nx, out))
}

/// Boolean grid as 0/1 values.
pub fn write_mask_grid(path: &Path, ny: usize, nx: usize, mask: &[bool]) -> Result<()> {
    let v: Vec<f64> = mask.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
    write_grid(path, ny, nx, &v)
}

/// 8-bit binary PGM, linearly scaled between the finite min and max.
/// Non-finite values render black.
pub fn write_pgm(path: &Path, ny: usize, nx: usize, values: &[f64]) -> Result<()> {
    if values.len() != ny * nx {
        return Err(Error::DimensionMismatch("image size".into()));
    }
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    let pix: Vec<u8> = values
        .iter()
        .map(|v| {
            if v.is_finite() {
                (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    w.write_all(&pix)?;
    w.flush()?;
    Ok(())
}

/// One row per atom: `shift,v_0,...,v_{l-1}`, 17 significant digits.
pub fn write_dictionary(dict: &Dictionary<f64>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let header: Vec<String> = std::iter::once("shift".to_string())
        .chain((0..dict.atom_len()).map(|b| format!("b{b}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (k, atom) in dict.atoms().enumerate() {
        let mut line = vec![format!("{:.16e}", dict.shifts()[k])];
        line.extend(atom.iter().map(|v| format!("{v:.16e}")));
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dictionary(path: &Path) -> Result<Dictionary<f64>> {
    let rows = rows(path)?;
    let body = rows.iter().skip_while(|r| r.first().is_some_and(|f| f == "shift"));
    let mut shifts = Vec::new();
    let mut atoms = Vec::new();
    for r in body {
        if r.len() < 2 {
            return Err(Error::Format("dictionary row needs a shift and values".into()));
        }
        shifts.push(parse_f64(&r[0])?);
        atoms.push(r[1..].iter().map(|f| parse_f64(f)).collect::<Result<Vec<_>>>()?);
    }
    Dictionary::from_unit_atoms(atoms, shifts)
}

/// Reference spectrum: one value per line, or `band,value` pairs. A leading
/// non-numeric header line is skipped.
pub fn read_reference_values(path: &Path) -> Result<Vec<f64>> {
    let rows = rows(path)?;
    let mut out = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let last = r.last().map(String::as_str).unwrap_or("");
        match parse_f64(last) {
            Ok(v) => out.push(v),
            Err(e) if i == 0 => {
                let _ = e;
            }
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::Format(format!("{} holds no values", path.display())));
    }
    Ok(out)
}

pub fn write_reference_values(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "band,value")?;
    for (b, v) in values.iter().enumerate() {
        writeln!(w, "{b},{v:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

/// `mu0_hat,pi0_hat,n0,n` header and values, then a `sample` column.
pub fn write_null_model(model: &NullModel<f64>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "mu0_hat,pi0_hat,n0,n")?;
    writeln!(
        w,
        "{},{},{},{}",
        fmt_f64(model.mu0_hat),
        fmt_f64(model.pi0_hat),
        model.n0,
        model.n
    )?;
    writeln!(w, "sample")?;
    for s in model.samples() {
        writeln!(w, "{}", fmt_f64(*s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_null_model(path: &Path) -> Result<NullModel<f64>> {
    let rows = rows(path)?;
    let bad = || Error::Format(format!("{} is not a null model file", path.display()));
    if rows.len() < 3 || rows[0].first().map(String::as_str) != Some("mu0_hat") || rows[1].len() < 3 {
        return Err(bad());
    }
    let head = &rows[1];
    let mu0 = parse_f64(&head[0])?;
    let pi0 = parse_f64(&head[1])?;
    let n0: usize = head[2].parse().map_err(|_| bad())?;
    let n: usize = match head.get(3) {
        Some(v) => v.parse().map_err(|_| bad())?,
        None => 0,
    };
    if rows[2].first().map(String::as_str) != Some("sample") {
        return Err(bad());
    }
    let samples = rows[3..].iter().map(|r| parse_f64(&r[0])).collect::<Result<Vec<_>>>()?;
    NullModel::from_parts(mu0, pi0, n0, n, samples)
}

/// `row,col,tmax,tmin,argmax`; untested pixels carry `nan` statistics.
pub fn write_test_field(field: &TestField<f64>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "row,col,tmax,tmin,argmax")?;
    for p in 0..field.n() {
        let (a, b) = if field.tested[p] {
            (field.tmax[p], field.tmin[p])
        } else {
            (f64::NAN, f64::NAN)
        };
        writeln!(
            w,
            "{},{},{},{},{}",
            p / field.nx,
            p % field.nx,
            fmt_f64(a),
            fmt_f64(b),
            field.argmax_atom[p]
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_test_field(path: &Path) -> Result<TestField<f64>> {
    let rows = rows(path)?;
    let body: Vec<&Vec<String>> = rows.iter().filter(|r| r.first().map(String::as_str) != Some("row")).collect();
    let idx = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad index '{s}'")));
    let mut cells = Vec::with_capacity(body.len());
    let (mut ny, mut nx) = (0, 0);
    for r in &body {
        if r.len() != 5 {
            return Err(Error::Format("test field rows need 5 columns".into()));
        }
        let (y, x) = (idx(&r[0])?, idx(&r[1])?);
        ny = ny.max(y + 1);
        nx = nx.max(x + 1);
        cells.push((y, x, parse_f64(&r[2])?, parse_f64(&r[3])?, idx(&r[4])?));
    }
    if cells.len() != ny * nx {
        return Err(Error::Format(format!("{} rows do not tile a {ny}x{nx} grid", cells.len())));
    }
    let n = ny * nx;
    let mut f = TestField {
        ny,
        nx,
        tmax: vec![f64::NAN; n],
        tmin: vec![f64::NAN; n],
        argmax_atom: vec![0; n],
        tested: vec![false; n],
    };
    let mut seen = vec![false; n];
    for (y, x, a, b, k) in cells {
        let p = y * nx + x;
        if seen[p] {
            return Err(Error::Format(format!("pixel ({y}, {x}) listed twice")));
        }
        seen[p] = true;
        f.tmax[p] = a;
        f.tmin[p] = b;
        f.argmax_atom[p] = k;
        f.tested[p] = a.is_finite() && b.is_finite();
        if f.tested[p] && b > a {
            return Err(Error::invalid(format!("tmin exceeds tmax at ({y}, {x})")));
        }
    }
    Ok(f)
}
