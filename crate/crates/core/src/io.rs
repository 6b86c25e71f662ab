//! Fixed-precision JSON output and the dataset file format.
//!
//! Floats are written with 17 significant digits, enough to round-trip any
//! `f64` exactly. A dataset is a CSV file with columns `y_1..y_d`,
//! `z_1..z_q`, `x_1..x_m` and, when present, `hidden_xi_*`, `hidden_delta_*`,
//! `hidden_e_*`, `hidden_eps_*`, plus a JSON sidecar holding the spec and seed.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::models::{Dataset, Hidden, Matrix, ModelSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// `f64` with 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Pretty-printing JSON formatter that writes floats via [`fmt_f64`].
pub struct Fixed17<'a>(PrettyFormatter<'a>);

impl Default for Fixed17<'_> {
    fn default() -> Self {
        Self(PrettyFormatter::with_indent(b"  "))
    }
}

impl Formatter for Fixed17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with 17-digit floats and a trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17::default());
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

/// Sidecar describing how a dataset was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub schema_version: u32,
    pub n: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
}

fn header(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |j| format!("{prefix}_{j}"))
}

fn blocks(data: &Dataset) -> Vec<(&'static str, &Matrix)> {
    let mut out = vec![("y", &data.y), ("z", &data.z), ("x", &data.x)];
    if let Some(h) = &data.hidden {
        out.extend([("hidden_xi", &h.xi), ("hidden_delta", &h.delta), ("hidden_e", &h.e), ("hidden_eps", &h.eps)]);
    }
    out
}

pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let blocks = blocks(data);
    let names: Vec<String> = blocks.iter().flat_map(|(p, m)| header(p, m.ncols())).collect();
    w.write_record(&names).map_err(csv_error)?;
    let mut row = Vec::with_capacity(names.len());
    for i in 0..data.n() {
        row.clear();
        for (_, m) in &blocks {
            row.extend(m.row(i).iter().map(|v| fmt_f64(*v)));
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Column prefix of a header name such as `hidden_xi_3`, checking that the
/// indices within each prefix run 1, 2, ….
fn split_header(names: &[String]) -> Result<Vec<(String, usize)>> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for name in names {
        let (prefix, index) = name
            .rsplit_once('_')
            .and_then(|(p, i)| i.parse::<usize>().ok().map(|i| (p.to_string(), i)))
            .ok_or_else(|| Error::Parse(format!("unrecognised column {name:?}")))?;
        if !["y", "z", "x", "hidden_xi", "hidden_delta", "hidden_e", "hidden_eps"].contains(&prefix.as_str()) {
            return Err(Error::Parse(format!("unrecognised column {name:?}")));
        }
        match out.last_mut() {
            Some((p, count)) if *p == prefix => {
                if index != *count + 1 {
                    return Err(Error::Parse(format!("column {name:?} out of order")));
                }
                *count += 1;
            }
            _ => {
                if index != 1 || out.iter().any(|(p, _)| *p == prefix) {
                    return Err(Error::Parse(format!("column {name:?} out of order")));
                }
                out.push((prefix, 1));
            }
        }
    }
    Ok(out)
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let names: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let layout = split_header(&names)?;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_error)?;
        if record.len() != names.len() {
            return Err(Error::Parse(format!("row {} has {} fields, expected {}", line + 1, record.len(), names.len())));
        }
        for (col, field) in columns.iter_mut().zip(record.iter()) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: cannot parse {field:?} as a number", line + 1)))?;
            col.push(v);
        }
    }
    let n = columns.first().map_or(0, Vec::len);
    let block = |prefix: &str| -> Matrix {
        match layout.iter().position(|(p, _)| p == prefix) {
            Some(pos) => {
                let offset: usize = layout[..pos].iter().map(|(_, c)| c).sum();
                let count = layout[pos].1;
                Matrix::from_fn(n, count, |i, j| columns[offset + j][i])
            }
            None => Matrix::zeros(n, 0),
        }
    };
    let y = block("y");
    let z = block("z");
    let x = block("x");
    let hidden_parts = [block("hidden_xi"), block("hidden_delta"), block("hidden_e"), block("hidden_eps")];
    if y.ncols() == 0 || x.ncols() == 0 {
        return Err(Error::Parse("dataset needs at least one y and one x column".into()));
    }
    let mut data = Dataset::from_observed(y, z, x)?;
    if hidden_parts.iter().any(|m| m.ncols() > 0) {
        let [xi, delta, e, eps] = hidden_parts;
        data.hidden = Some(Hidden { xi, delta, e, eps });
    }
    Ok(data)
}

pub fn write_sidecar(path: &Path, sidecar: &DatasetSidecar) -> Result<()> {
    write_json(path, sidecar)
}

pub fn read_sidecar(path: &Path) -> Result<DatasetSidecar> {
    let sidecar: DatasetSidecar = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if sidecar.schema_version != SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "sidecar schema version {} is not supported (expected {SCHEMA_VERSION})",
            sidecar.schema_version
        )));
    }
    Ok(sidecar)
}

/// Reads a dataset and, if it exists next to it, its sidecar
/// (`<stem>.json`), restoring the seed.
pub fn read_dataset(csv_path: &Path) -> Result<(Dataset, Option<DatasetSidecar>)> {
    let mut data = read_dataset_csv(csv_path)?;
    let sidecar_path = csv_path.with_extension("json");
    let sidecar = if sidecar_path.exists() { Some(read_sidecar(&sidecar_path)?) } else { None };
    if let Some(s) = &sidecar {
        if s.n != data.n() {
            return Err(Error::Parse(format!("sidecar says n = {}, CSV has {} rows", s.n, data.n())));
        }
        data.seed = s.seed;
    }
    Ok((data, sidecar))
}
