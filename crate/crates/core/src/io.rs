//! File formats: the `XCUBE001` container, dictionary CSV, PGM renders and
//! the diagnostics stream.
//!
//! The container is an 8-byte ASCII magic, a little-endian `u32` header
//! length, a JSON header and a band-major, row-major `f32le` payload. Cubes,
//! phase maps and scaling fields share it with `bands` equal to `T`, `L` and
//! 1 respectively.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cube::{Dictionary, EnergyGrid, ImageGeometry, PhaseMap, ScalingField, SpectralCube};
use crate::rum::DiagnosticsRecord;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"XCUBE001";
const LAYOUT: &str = "band-sequential";
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    rows: usize,
    cols: usize,
    bands: usize,
    energies_ev: Option<Vec<f64>>,
    layout: String,
    dtype: String,
}

/// Raw container contents. `values[b·rows·cols + i·cols + j]` is band `b`
/// at pixel `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeData {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub energies_ev: Option<Vec<f64>>,
    pub values: Vec<f32>,
}

impl CubeData {
    fn check(&self) -> Result<()> {
        let expected = self.rows * self.cols * self.bands;
        if self.rows == 0 || self.cols == 0 || self.bands == 0 {
            return Err(Error::HeaderMismatch("rows, cols and bands must be positive".into()));
        }
        if self.values.len() != expected {
            return Err(Error::HeaderMismatch(format!("{} values for {expected} declared entries", self.values.len())));
        }
        if let Some(e) = &self.energies_ev {
            if e.len() != self.bands {
                return Err(Error::HeaderMismatch(format!("{} energies for {} bands", e.len(), self.bands)));
            }
        }
        Ok(())
    }

    fn from_matrix(geom: ImageGeometry, m: &DMatrix<f64>, energies: Option<Vec<f64>>) -> Self {
        let (bands, n) = m.shape();
        let mut values = Vec::with_capacity(bands * n);
        for b in 0..bands {
            values.extend(m.row(b).iter().map(|&v| v as f32));
        }
        Self { rows: geom.rows(), cols: geom.cols(), bands, energies_ev: energies, values }
    }

    fn matrix(&self) -> Result<(ImageGeometry, DMatrix<f64>)> {
        let geom = ImageGeometry::new(self.rows, self.cols)?;
        let n = geom.len();
        let m = DMatrix::from_fn(self.bands, n, |b, k| self.values[b * n + k] as f64);
        Ok((geom, m))
    }

    pub fn from_cube(cube: &SpectralCube) -> Self {
        Self::from_matrix(cube.geometry, &cube.values, Some(cube.grid.energies().to_vec()))
    }

    pub fn from_phase_map(map: &PhaseMap) -> Self {
        Self::from_matrix(map.geometry, &map.abundances, None)
    }

    pub fn from_scaling(field: &ScalingField) -> Self {
        let m = DMatrix::from_row_slice(1, field.values.len(), field.values.as_slice());
        Self::from_matrix(field.geometry, &m, None)
    }

    /// Cube view; a missing energy list becomes the band index grid.
    pub fn to_cube(&self) -> Result<SpectralCube> {
        self.check()?;
        let (geom, m) = self.matrix()?;
        let grid = match &self.energies_ev {
            Some(e) => EnergyGrid::new(e.clone())?,
            None => EnergyGrid::index(self.bands)?,
        };
        SpectralCube::new(geom, grid, m)
    }

    pub fn to_phase_map(&self) -> Result<PhaseMap> {
        self.check()?;
        let (geom, m) = self.matrix()?;
        PhaseMap::new(geom, m)
    }

    pub fn to_scaling(&self) -> Result<ScalingField> {
        self.check()?;
        if self.bands != 1 {
            return Err(Error::HeaderMismatch(format!("scaling field needs 1 band, file has {}", self.bands)));
        }
        let (geom, m) = self.matrix()?;
        ScalingField::new(geom, DVector::from_iterator(geom.len(), m.row(0).iter().copied()))
    }
}

pub fn encode_cube(data: &CubeData) -> Result<Vec<u8>> {
    data.check()?;
    let header = Header {
        rows: data.rows,
        cols: data.cols,
        bands: data.bands,
        energies_ev: data.energies_ev.clone(),
        layout: LAYOUT.into(),
        dtype: DTYPE.into(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * data.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &data.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_cube(bytes: &[u8]) -> Result<CubeData> {
    let head = &bytes[..bytes.len().min(8)];
    if head != &MAGIC[..head.len()] {
        return Err(Error::BadMagic { found: head.to_vec() });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated { expected: 12, actual: bytes.len() as u64 });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let payload_start = 12 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Truncated { expected: payload_start as u64, actual: bytes.len() as u64 });
    }
    let header: Header = serde_json::from_slice(&bytes[12..payload_start])
        .map_err(|e| Error::HeaderMismatch(format!("unreadable header: {e}")))?;
    if header.layout != LAYOUT || header.dtype != DTYPE {
        return Err(Error::HeaderMismatch(format!(
            "unsupported layout `{}` / dtype `{}`",
            header.layout, header.dtype
        )));
    }
    let count = header
        .rows
        .checked_mul(header.cols)
        .and_then(|v| v.checked_mul(header.bands))
        .ok_or_else(|| Error::HeaderMismatch("declared size overflows".into()))?;
    let expected = payload_start as u64 + 4 * count as u64;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(Error::HeaderMismatch(format!("payload has {} bytes beyond the declared size", actual - expected)));
    }
    let values = bytes[payload_start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let data = CubeData {
        rows: header.rows,
        cols: header.cols,
        bands: header.bands,
        energies_ev: header.energies_ev,
        values,
    };
    data.check()?;
    Ok(data)
}

pub fn write_cube(path: impl AsRef<Path>, data: &CubeData) -> Result<()> {
    fs::write(path, encode_cube(data)?)?;
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<CubeData> {
    decode_cube(&fs::read(path)?)
}

pub fn write_dictionary_csv(path: impl AsRef<Path>, dict: &Dictionary) -> Result<()> {
    fs::write(path, dictionary_csv(dict)?)?;
    Ok(())
}

pub fn dictionary_csv(dict: &Dictionary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Csv(e.to_string());
    let mut header = vec!["energy_ev".to_string()];
    header.extend(dict.labels.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (b, e) in dict.grid.energies().iter().enumerate() {
        let mut rec = vec![e.to_string()];
        rec.extend(dict.spectra.row(b).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.to_string()))
}

pub fn read_dictionary_csv(path: impl AsRef<Path>) -> Result<Dictionary> {
    parse_dictionary_csv(&fs::read(path)?)
}

pub fn parse_dictionary_csv(bytes: &[u8]) -> Result<Dictionary> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    if header.get(0).map(str::trim) != Some("energy_ev") {
        return Err(Error::Csv("first column must be `energy_ev`".into()));
    }
    let labels: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if labels.is_empty() {
        return Err(Error::Csv("no state columns".into()));
    }
    let mut energies = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        if rec.len() != labels.len() + 1 {
            return Err(Error::Csv(format!("row {} has {} fields, expected {}", line + 1, rec.len(), labels.len() + 1)));
        }
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Csv(format!("row {}: `{f}` is not a number", line + 1))))
            .collect::<Result<_>>()?;
        energies.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    let grid = EnergyGrid::new(energies).map_err(|e| Error::Csv(format!("energy column: {e}")))?;
    let spectra = DMatrix::from_fn(rows.len(), labels.len(), |b, j| rows[b][j]);
    Dictionary::new(grid, spectra, labels)
}

/// Binary `P5` image of one state, `floor(clamp(v, 0, 1)·255 + 0.5)` per pixel.
pub fn pgm_bytes(map: &PhaseMap, state: usize) -> Result<Vec<u8>> {
    if state >= map.states() {
        return Err(Error::Invalid(format!("state {state} out of range for {} states", map.states())));
    }
    let geom = map.geometry;
    let mut out = format!("P5\n{} {}\n255\n", geom.cols(), geom.rows()).into_bytes();
    out.extend(map.abundances.row(state).iter().map(|&v| {
        let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (c * 255.0 + 0.5).floor() as u8
    }));
    Ok(out)
}

pub fn render_pgm(map: &PhaseMap, state: usize, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, pgm_bytes(map, state)?)?;
    Ok(())
}

/// Reads a binary PGM into `(geometry, pixel values)`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(ImageGeometry, Vec<u16>)> {
    parse_pgm(&fs::read(path)?)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<(ImageGeometry, Vec<u16>)> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pgm("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Pgm("only binary P5 images are supported".into()));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| Error::Pgm(format!("bad header field `{s}`")));
    let cols = num(token()?)?;
    let rows = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Pgm(format!("maxval {maxval} out of range")));
    }
    let start = pos + 1;
    let geom = ImageGeometry::new(rows, cols).map_err(|e| Error::Pgm(e.to_string()))?;
    let width = if maxval < 256 { 1 } else { 2 };
    let need = geom.len() * width;
    if bytes.len() < start + need {
        return Err(Error::Truncated { expected: (start + need) as u64, actual: bytes.len() as u64 });
    }
    let px = &bytes[start..start + need];
    let values = if width == 1 {
        px.iter().map(|&b| b as u16).collect()
    } else {
        px.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Ok((geom, values))
}

pub const DIAGNOSTICS_HEADER: [&str; 13] = [
    "iter", "re", "objective", "kkt_1", "kkt_2", "kkt_3", "kkt_4", "kkt_5", "kkt_6", "kkt_7", "kkt_8", "rmse", "cg_iters",
];

/// One row per iteration; the rmse field is empty without ground truth.
pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Csv(e.to_string());
    w.write_record(DIAGNOSTICS_HEADER).map_err(csv_err)?;
    for r in records {
        let mut rec = vec![r.iter.to_string(), r.re.to_string(), r.objective.to_string()];
        rec.extend(r.kkt.values.iter().map(|v| v.to_string()));
        rec.push(r.rmse_vs_gt.map(|v| v.to_string()).unwrap_or_default());
        rec.push(r.cg_iters.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.to_string()))
}

pub fn write_diagnostics_csv(path: impl AsRef<Path>, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&diagnostics_csv(records)?)?;
    Ok(())
}
