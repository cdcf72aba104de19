//! File formats: point clouds (CSV and the `GDPC` binary sidecar), subspaces and JSON reports.
//!
//! CSV clouds carry a header `x1,...,xn,w` and one point per row, every value written with 17
//! significant digits. The binary sidecar is
//!
//! ```text
//! b"GDPC" | n: u32 LE | count: u64 LE | count rows of (x1..xn, w) as f64 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::grassmann::Subspace;
use crate::measures::PointCloud;

pub const BINARY_MAGIC: &[u8; 4] = b"GDPC";

/// A float with 17 significant digits, the precision used for every text format.
pub fn precise(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serializes a float slice as JSON numbers with 17 significant digits.
pub fn serialize_precise<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::{Error as _, SerializeSeq};
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for &v in values {
        if !v.is_finite() {
            return Err(S::Error::custom(format!("non-finite value {v}")));
        }
        let raw = RawValue::from_string(precise(v)).map_err(S::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

/// A subspace as stored in reports: its orthonormal frame, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceRecord {
    pub ambient_dim: usize,
    pub dim: usize,
    #[serde(serialize_with = "serialize_precise")]
    pub frame: Vec<f64>,
}

impl From<&Subspace> for SubspaceRecord {
    fn from(v: &Subspace) -> Self {
        Self {
            ambient_dim: v.ambient_dim(),
            dim: v.dim(),
            frame: v.frame_row_major(),
        }
    }
}

impl SubspaceRecord {
    pub fn to_subspace(&self) -> Result<Subspace> {
        Subspace::from_row_major(self.ambient_dim, self.dim, &self.frame)
    }
}

// ---------------------------------------------------------------------------------------
// Point clouds

pub fn write_cloud_csv<W: Write>(cloud: &PointCloud, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=cloud.dim()).map(|i| format!("x{i}")).collect();
    header.push("w".into());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(cloud.dim() + 1);
    for (p, wt) in cloud.iter() {
        row.clear();
        row.extend(p.iter().map(|&x| precise(x)));
        row.push(precise(wt));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cloud_csv<R: Read>(input: R) -> Result<PointCloud> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 2 || &header[cols - 1] != "w" {
        return Err(Error::Format("cloud header must be x1,...,xn,w".into()));
    }
    for (i, name) in header.iter().take(cols - 1).enumerate() {
        if name != format!("x{}", i + 1) {
            return Err(Error::Format(format!("unexpected column {name:?}, expected x{}", i + 1)));
        }
    }
    let dim = cols - 1;
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}: {s:?}: {e}", line + 1)))
        };
        for field in record.iter().take(dim) {
            coords.push(parse(field)?);
        }
        weights.push(parse(&record[dim])?);
    }
    PointCloud::new(dim, coords, weights)
}

pub fn write_cloud_binary<W: Write>(cloud: &PointCloud, mut out: W) -> Result<()> {
    let dim = u32::try_from(cloud.dim()).map_err(|_| Error::Size("dimension exceeds u32".into()))?;
    out.write_all(BINARY_MAGIC)?;
    out.write_u32::<LittleEndian>(dim)?;
    out.write_u64::<LittleEndian>(cloud.len() as u64)?;
    for (p, w) in cloud.iter() {
        for &x in p {
            out.write_f64::<LittleEndian>(x)?;
        }
        out.write_f64::<LittleEndian>(w)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cloud_binary<R: Read>(mut input: R) -> Result<PointCloud> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Format("missing GDPC magic".into()));
    }
    let dim = input.read_u32::<LittleEndian>()? as usize;
    let count = input.read_u64::<LittleEndian>()?;
    let count = usize::try_from(count)
        .ok()
        .filter(|&c| c <= crate::fractals::MAX_POINTS)
        .ok_or_else(|| Error::Size(format!("{count} points in binary cloud")))?;
    let mut coords = Vec::with_capacity(dim * count);
    let mut weights = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..dim {
            coords.push(input.read_f64::<LittleEndian>()?);
        }
        weights.push(input.read_f64::<LittleEndian>()?);
    }
    PointCloud::new(dim, coords, weights)
}

/// Reads either format, recognising the binary one by its magic bytes.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    let peeked = reader.read(&mut magic)?;
    let rest = (&magic[..peeked]).chain(reader);
    if peeked == 4 && &magic == BINARY_MAGIC {
        read_cloud_binary(rest)
    } else {
        read_cloud_csv(rest)
    }
}

/// Writes the binary format when `binary` is set, CSV otherwise.
pub fn write_cloud(cloud: &PointCloud, path: &Path, binary: bool) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    if binary {
        write_cloud_binary(cloud, out)
    } else {
        write_cloud_csv(cloud, out)
    }
}

// ---------------------------------------------------------------------------------------
// JSON

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json(&std::fs::read_to_string(path)?)
}
